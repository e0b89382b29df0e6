//! Cramer-Rao bounds for single-source DOA on fully-digital, hybrid and
//! two-layer receivers.
//!
//! All bounds come from the conditional (deterministic-signal) Fisher
//! information of an effective steering vector `a(theta)` seen by the digital
//! channels:
//!
//! `J = 2 T snr Re{ a'^H (I - a a^H / a^H a) a' }`,  `CRLB = 1 / J`  (rad²).
//!
//! Noise is white with the same power on every digital channel, which holds
//! after analog combining because the weights have modulus `1/sqrt(M)`.

use std::f64::consts::PI;

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::array::{db_to_linear, deg_to_u, gain_unchecked, ula_response, ArrayConfig};
use crate::error::{contract, domain, Result};
use crate::quant::{loss_factor, Bits};

/// Fisher information for one source with effective steering `a` and its
/// derivative `da` with respect to the direction parameter.
///
/// Returns `0` when `a` is numerically zero (an analog null); callers turn
/// that into an infinite bound.
pub fn fim_single_source(
    a: &DVector<Complex64>,
    da: &DVector<Complex64>,
    t: usize,
    snr_linear: f64,
) -> Result<f64> {
    if a.len() != da.len() || a.is_empty() {
        return contract(format!("steering ({}) and derivative ({}) lengths differ or are empty", a.len(), da.len()));
    }
    if !(snr_linear > 0.0) || t == 0 {
        return domain(format!("need snr > 0 and T >= 1, got snr {snr_linear}, T {t}"));
    }
    let norm2 = a.norm_squared();
    if !(norm2 > f64::EPSILON * f64::EPSILON * a.len() as f64) {
        return Ok(0.0);
    }
    let ada = a.dotc(da);
    let quad = da.norm_squared() - ada.norm_sqr() / norm2;
    Ok((2.0 * t as f64 * snr_linear * quad).max(0.0))
}

/// `1 / J`, with `+inf` for vanishing information.
pub fn crlb_from_fim(j: f64) -> f64 {
    if j > 0.0 {
        1.0 / j
    } else {
        f64::INFINITY
    }
}

/// FD steering and its derivative in `u` for a `p`-element ULA.
pub(crate) fn fd_vectors(p: usize, spacing: f64, u: f64) -> (DVector<Complex64>, DVector<Complex64>) {
    let a = ula_response(p, spacing, u);
    let da = DVector::from_fn(p, |k, _| a[k] * Complex64::new(0.0, 2.0 * PI * spacing * k as f64));
    (a, da)
}

/// Effective steering of `k_sub` subarrays of `m_sub` elements and its
/// derivative in `u`: `a_k = g(u, u_s) exp(i 2 pi d M k u)`.
pub(crate) fn had_vectors(
    k_sub: usize,
    m_sub: usize,
    spacing: f64,
    u: f64,
    u_steer: f64,
) -> (DVector<Complex64>, DVector<Complex64>) {
    let du = u - u_steer;
    let g = gain_unchecked(m_sub, spacing, du);
    let dg: Complex64 = (0..m_sub)
        .map(|m| {
            let w = 2.0 * PI * spacing * m as f64;
            Complex64::new(0.0, w) * Complex64::from_polar(1.0, w * du)
        })
        .sum::<Complex64>()
        / (m_sub as f64).sqrt();
    let b = ula_response(k_sub, spacing * m_sub as f64, u);
    let a = b.map(|x| g * x);
    let da = DVector::from_fn(k_sub, |k, _| {
        let phase = Complex64::new(0.0, 2.0 * PI * spacing * (m_sub * k) as f64);
        b[k] * (dg + g * phase)
    });
    (a, da)
}

/// Steering and `d/dtheta` (per radian) of the FD effective array.
pub fn fd_effective_vectors(p: usize, spacing: f64, theta_deg: f64) -> (DVector<Complex64>, DVector<Complex64>) {
    let th = theta_deg.to_radians();
    let (a, da) = fd_vectors(p, spacing, th.sin());
    (a, da * Complex64::from(th.cos()))
}

/// Steering and `d/dtheta` (per radian) of the hybrid effective array.
pub fn had_effective_vectors(
    k_sub: usize,
    m_sub: usize,
    spacing: f64,
    theta_deg: f64,
    u_steer: f64,
) -> (DVector<Complex64>, DVector<Complex64>) {
    let th = theta_deg.to_radians();
    let (a, da) = had_vectors(k_sub, m_sub, spacing, th.sin(), u_steer);
    (a, da * Complex64::from(th.cos()))
}

fn check_angle(theta_deg: f64) -> Result<()> {
    if !(theta_deg > -90.0 && theta_deg < 90.0) {
        return domain(format!("direction {theta_deg}° outside (-90°, 90°)"));
    }
    Ok(())
}

fn check_steer(u_steer: f64) -> Result<()> {
    if !(u_steer.abs() <= 1.0) {
        return domain(format!("analog steering sine {u_steer} outside [-1, 1]"));
    }
    Ok(())
}

/// Fisher information (per rad²) of the two parts of `cfg`, hybrid and FD,
/// each with its own nuisance amplitude.
fn part_fims(
    cfg: &ArrayConfig,
    theta_deg: f64,
    snr_lin: f64,
    t: usize,
    u_steer: Option<f64>,
) -> Result<(f64, f64)> {
    let u = deg_to_u(theta_deg);
    let j_had = if cfg.k_sub > 0 {
        let (a, da) =
            had_effective_vectors(cfg.k_sub, cfg.m_sub, cfg.spacing, theta_deg, u_steer.unwrap_or(u));
        fim_single_source(&a, &da, t, snr_lin)?
    } else {
        0.0
    };
    let j_fd = if cfg.n_fd > 0 {
        let (a, da) = fd_effective_vectors(cfg.n_fd, cfg.spacing, theta_deg);
        fim_single_source(&a, &da, t, snr_lin)?
    } else {
        0.0
    };
    Ok((j_had, j_fd))
}

/// CRLB (rad²) of the full `N`-element array wired fully digitally.
pub fn crlb_fd(cfg: &ArrayConfig, theta_deg: f64, snr_db: f64, t: usize) -> Result<f64> {
    cfg.validate()?;
    check_angle(theta_deg)?;
    let (a, da) = fd_effective_vectors(cfg.n_total, cfg.spacing, theta_deg);
    Ok(crlb_from_fim(fim_single_source(&a, &da, t, db_to_linear(snr_db))?))
}

/// CRLB (rad²) of the hybrid part of `cfg` (`K` subarrays of `M`).
///
/// `u_steer = None` steers every subarray at the true direction.
pub fn crlb_had(
    cfg: &ArrayConfig,
    theta_deg: f64,
    snr_db: f64,
    t: usize,
    u_steer: Option<f64>,
) -> Result<f64> {
    cfg.validate()?;
    check_angle(theta_deg)?;
    if let Some(s) = u_steer {
        check_steer(s)?;
    }
    if cfg.k_sub == 0 {
        return contract("hybrid bound needs at least one subarray");
    }
    let hybrid = ArrayConfig { n_fd: 0, n_total: cfg.had_elements(), ..cfg.clone() };
    let (j, _) = part_fims(&hybrid, theta_deg, db_to_linear(snr_db), t, u_steer)?;
    Ok(crlb_from_fim(j))
}

/// Two-layer bound: `1 / (J_HAD + J_FD)`.
pub fn crlb_tlhad(
    cfg: &ArrayConfig,
    theta_deg: f64,
    snr_db: f64,
    t: usize,
    u_steer: Option<f64>,
) -> Result<f64> {
    cfg.validate()?;
    check_angle(theta_deg)?;
    if let Some(s) = u_steer {
        check_steer(s)?;
    }
    let (j_had, j_fd) = part_fims(cfg, theta_deg, db_to_linear(snr_db), t, u_steer)?;
    Ok(crlb_from_fim(j_had + j_fd))
}

/// Per-part bounds `(hybrid, fd)` of a two-layer receiver, in rad².
pub fn crlb_parts(
    cfg: &ArrayConfig,
    theta_deg: f64,
    snr_db: f64,
    t: usize,
    u_steer: Option<f64>,
) -> Result<(f64, f64)> {
    cfg.validate()?;
    check_angle(theta_deg)?;
    let (j_had, j_fd) = part_fims(cfg, theta_deg, db_to_linear(snr_db), t, u_steer)?;
    Ok((crlb_from_fim(j_had), crlb_from_fim(j_fd)))
}

/// Bound under `b`-bit ADCs: the ideal bound times the AQNM loss factor.
pub fn crlb_quantized(crlb_ideal: f64, bits: Bits, snr_db: f64) -> Result<f64> {
    Ok(crlb_ideal * loss_factor(bits, db_to_linear(snr_db))?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    Fd,
    Had,
    Tlhad,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrlbReport {
    pub architecture: Architecture,
    pub theta_deg: f64,
    pub snr_db: f64,
    pub n_snapshots: usize,
    /// rad²
    pub crlb: f64,
    pub eta: f64,
    /// Set for bounds under quantized ADCs.
    pub bits: Option<Bits>,
}

impl CrlbReport {
    pub fn compute(
        architecture: Architecture,
        cfg: &ArrayConfig,
        theta_deg: f64,
        snr_db: f64,
        t: usize,
        bits: Option<Bits>,
    ) -> Result<Self> {
        let ideal = match architecture {
            Architecture::Fd => crlb_fd(cfg, theta_deg, snr_db, t)?,
            Architecture::Had => crlb_had(cfg, theta_deg, snr_db, t, None)?,
            Architecture::Tlhad => crlb_tlhad(cfg, theta_deg, snr_db, t, None)?,
        };
        let crlb = match bits {
            Some(b) => crlb_quantized(ideal, b, snr_db)?,
            None => ideal,
        };
        Ok(Self {
            architecture,
            theta_deg,
            snr_db,
            n_snapshots: t,
            crlb,
            eta: cfg.fd_proportion(),
            bits,
        })
    }

    pub fn crlb_deg2(&self) -> f64 {
        self.crlb * (180.0 / PI).powi(2)
    }

    /// Square root of the bound, in degrees.
    pub fn std_deg(&self) -> f64 {
        self.crlb_deg2().sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quant::performance_loss_db;
    use approx::assert_relative_eq;

    fn closed_form_fd(n: usize, d: f64, theta_deg: f64, snr_db: f64, t: usize) -> f64 {
        let n = n as f64;
        let c = 2.0 * PI * d * theta_deg.to_radians().cos();
        6.0 / (t as f64 * db_to_linear(snr_db) * c * c * n * (n * n - 1.0))
    }

    #[test]
    fn fd_matches_closed_form() {
        for &theta in &[0.0, 20.0, -45.0] {
            let got = crlb_fd(&ArrayConfig::fully_digital(8), theta, 3.0, 5).unwrap();
            assert_relative_eq!(got, closed_form_fd(8, 0.5, theta, 3.0, 5), max_relative = 1e-10);
        }
    }

    #[test]
    fn fd_ratio_between_sizes() {
        let a = crlb_fd(&ArrayConfig::fully_digital(16), 0.0, 0.0, 1).unwrap();
        let b = crlb_fd(&ArrayConfig::fully_digital(32), 0.0, 0.0, 1).unwrap();
        assert_relative_eq!(b / a, (16.0 * 255.0) / (32.0 * 1023.0), max_relative = 1e-9);
    }

    #[test]
    fn scaling_in_t_snr_and_angle() {
        let cfg = ArrayConfig::fully_digital(12);
        let base = crlb_fd(&cfg, 17.0, 0.0, 1).unwrap();
        assert_relative_eq!(crlb_fd(&cfg, 17.0, 0.0, 2).unwrap(), base / 2.0, max_relative = 1e-14);
        assert_relative_eq!(crlb_fd(&cfg, 17.0, 10.0, 1).unwrap(), base / 10.0, max_relative = 1e-12);
        let c0 = crlb_fd(&cfg, 0.0, 0.0, 1).unwrap();
        let c17 = base * 17f64.to_radians().cos().powi(2);
        assert_relative_eq!(c0, c17, max_relative = 1e-12);
    }

    #[test]
    fn endfire_is_infinite() {
        let (a, da) = fd_effective_vectors(8, 0.5, 90.0);
        assert!(crlb_from_fim(fim_single_source(&a, &da, 1, 1.0).unwrap()) > 1e25);
        assert!(crlb_fd(&ArrayConfig::fully_digital(8), 89.999, 0.0, 1).unwrap() > 1e5);
    }

    #[test]
    fn had_with_unit_subarrays_is_fd() {
        let had = crlb_had(&ArrayConfig::hybrid(10, 1), 25.0, 0.0, 3, None).unwrap();
        let fd = crlb_fd(&ArrayConfig::fully_digital(10), 25.0, 0.0, 3).unwrap();
        assert_relative_eq!(had, fd, max_relative = 1e-12);
    }

    #[test]
    fn had_loses_information_to_combining() {
        for &theta in &[-50.0, -12.0, 0.0, 7.5, 33.0, 61.0] {
            let had = crlb_had(&ArrayConfig::hybrid(8, 4), theta, 0.0, 1, None).unwrap();
            let fd = crlb_fd(&ArrayConfig::fully_digital(32), theta, 0.0, 1).unwrap();
            assert!(had > fd, "theta {theta}: had {had} fd {fd}");
        }
        let k8 = crlb_had(&ArrayConfig::hybrid(8, 4), 0.0, 0.0, 1, None).unwrap();
        let k16 = crlb_had(&ArrayConfig::hybrid(16, 4), 0.0, 0.0, 1, None).unwrap();
        assert!(k16 < k8 && k8.is_finite());
    }

    #[test]
    fn analog_null_gives_infinite_bound() {
        // M = 2, d = 0.5, broadside: null at u = 1
        let (a, da) = had_vectors(6, 2, 0.5, 1.0, 0.0);
        assert!(a.norm() < 1e-12);
        assert_eq!(crlb_from_fim(fim_single_source(&a, &da, 1, 1.0).unwrap()), f64::INFINITY);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h: f64 = 1e-6;
        for &theta in &[-40.0f64, 3.0, 28.0] {
            let th = theta.to_radians();
            let step = h.to_degrees();
            let (_, da) = fd_effective_vectors(9, 0.5, theta);
            let (ap, _) = fd_effective_vectors(9, 0.5, theta + step);
            let (am, _) = fd_effective_vectors(9, 0.5, theta - step);
            let fdiff = (ap - am) / Complex64::from(2.0 * h);
            assert!((fdiff - &da).norm() <= 1e-6 * da.norm(), "fd theta {}", th);

            let (_, da) = had_effective_vectors(6, 4, 0.5, theta, 0.1);
            let (ap, _) = had_effective_vectors(6, 4, 0.5, theta + step, 0.1);
            let (am, _) = had_effective_vectors(6, 4, 0.5, theta - step, 0.1);
            let fdiff = (ap - am) / Complex64::from(2.0 * h);
            assert!((fdiff - &da).norm() <= 1e-6 * da.norm(), "had theta {}", th);
        }
    }

    #[test]
    fn tlhad_limits_and_additivity() {
        let fd = ArrayConfig::two_layer(32, 4, 1.0).unwrap().0;
        assert_relative_eq!(
            crlb_tlhad(&fd, 12.0, 0.0, 1, None).unwrap(),
            crlb_fd(&ArrayConfig::fully_digital(32), 12.0, 0.0, 1).unwrap(),
            max_relative = 1e-12
        );
        let had = ArrayConfig::two_layer(32, 4, 0.0).unwrap().0;
        assert_relative_eq!(
            crlb_tlhad(&had, 12.0, 0.0, 1, None).unwrap(),
            crlb_had(&had, 12.0, 0.0, 1, None).unwrap(),
            max_relative = 1e-12
        );
        let mixed = ArrayConfig::two_layer(64, 4, 0.25).unwrap().0;
        let (h, f) = crlb_parts(&mixed, 12.0, 0.0, 1, None).unwrap();
        let total = crlb_tlhad(&mixed, 12.0, 0.0, 1, None).unwrap();
        assert!(total < h.min(f));
        assert_relative_eq!(1.0 / total, 1.0 / h + 1.0 / f, max_relative = 1e-12);
    }

    #[test]
    fn quantized_bound_uses_loss_factor() {
        assert_eq!(crlb_quantized(2.5e-4, Bits::Infinite, 0.0).unwrap(), 2.5e-4);
        let ratio = crlb_quantized(1.0, Bits::Finite(3), 0.0).unwrap();
        assert_eq!(10.0 * ratio.log10(), performance_loss_db(Bits::Finite(3), 0.0).unwrap());
    }

    #[test]
    fn report_units() {
        let r = CrlbReport::compute(Architecture::Fd, &ArrayConfig::fully_digital(8), 0.0, 0.0, 1, None).unwrap();
        assert_relative_eq!(r.crlb_deg2(), r.crlb * (180.0 / PI).powi(2), max_relative = 1e-15);
        assert!(r.crlb > 0.0);
        assert_eq!(r.eta, 1.0);
    }

    #[test]
    fn bad_arguments() {
        let cfg = ArrayConfig::fully_digital(8);
        assert!(crlb_fd(&cfg, 90.0, 0.0, 1).is_err());
        assert!(crlb_fd(&cfg, 0.0, 0.0, 0).is_err());
        assert!(crlb_had(&cfg, 0.0, 0.0, 1, None).is_err());
        assert!(crlb_had(&ArrayConfig::hybrid(4, 4), 0.0, 0.0, 1, Some(1.5)).is_err());
    }
}
