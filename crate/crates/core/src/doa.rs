//! Single-source DOA estimators for hybrid receivers.
//!
//! A hybrid array sees the source through `K` subarray channels that form a
//! virtual ULA with spacing `M d`. Root-MUSIC on those channels measures `u`
//! only modulo `1 / (M d)`; the estimators here differ in how they pick the
//! true member of the resulting candidate set:
//!
//! * [`had_root_music_classic`] probes each candidate with one extra snapshot.
//! * [`fhad_root_music`] probes all candidates at once with subgroups of
//!   subarrays in a second snapshot.
//! * [`tlhad_estimate`] uses a small fully-digital block of the same array to
//!   disambiguate within the same snapshot, then fuses both estimates.
//!
//! Estimators draw their own snapshots from the scenario, column by column,
//! so two estimators run on the same stream see the same first snapshot.

use serde::{Deserialize, Serialize};

use crate::array::{
    analog_combine, deg_to_u, synthesize_snapshots, u_to_deg, AnalogWeights, ArrayConfig,
    EmitterScenario, SnapshotBatch,
};
use crate::crlb;
use crate::error::{config, domain, Error, Result};
use crate::rng::TrialRng;
use crate::spectral::{root_music, sample_covariance};

/// All direction-sines in `[-1, 1)` congruent to `base` modulo `period`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub base: f64,
    /// Ascending.
    pub candidates: Vec<f64>,
    pub period: f64,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// Candidate nearest to `u`; ties go to the smaller `|u|`.
    pub fn nearest(&self, u: f64) -> f64 {
        let mut best = self.candidates[0];
        for &c in &self.candidates[1..] {
            let (dc, db) = ((c - u).abs(), (best - u).abs());
            if dc < db || (dc == db && c.abs() < best.abs()) {
                best = c;
            }
        }
        best
    }
}

pub fn candidate_set(u_hat: f64, m_sub: usize, spacing: f64) -> Result<CandidateSet> {
    if m_sub == 0 || !(spacing > 0.0) {
        return domain(format!("need M >= 1 and spacing > 0, got M = {m_sub}, d = {spacing}"));
    }
    if !u_hat.is_finite() {
        return domain("base estimate is not finite");
    }
    let period = 1.0 / (m_sub as f64 * spacing);
    let lo = ((-1.0 - u_hat) / period).floor() as i64 - 1;
    let hi = ((1.0 - u_hat) / period).ceil() as i64 + 1;
    let candidates = (lo..=hi)
        .map(|k| u_hat + k as f64 * period)
        .filter(|u| (-1.0..1.0).contains(u))
        .collect();
    Ok(CandidateSet { base: u_hat, candidates, period })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    FdRootMusic,
    ClassicHad,
    Fhad,
    Tlhad,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::FdRootMusic => "fd-root-music",
            Method::ClassicHad => "had-root-music",
            Method::Fhad => "fhad-root-music",
            Method::Tlhad => "tlhad",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoaEstimate {
    pub u: f64,
    pub degrees: f64,
    pub method: Method,
    pub snapshots_consumed: usize,
    /// Bound of the architecture at the scenario's true direction and SNR,
    /// rad².
    pub crlb: f64,
    pub candidates: Option<CandidateSet>,
    /// Set when the estimate had to be clamped into `[-1, 1]`.
    pub clamped: bool,
}

impl DoaEstimate {
    fn new(u: f64, method: Method, snapshots_consumed: usize, crlb: f64) -> Self {
        let clamped = !(u.abs() <= 1.0);
        let u = u.clamp(-1.0, 1.0);
        Self { u, degrees: u_to_deg(u), method, snapshots_consumed, crlb, candidates: None, clamped }
    }

    fn with_candidates(mut self, c: CandidateSet) -> Self {
        self.candidates = Some(c);
        self
    }
}

/// Inverse-variance fusion of two independent unbiased estimates. Returns the
/// fused value and its variance.
pub fn combine_estimates(u_a: f64, crlb_a: f64, u_b: f64, crlb_b: f64) -> Result<(f64, f64)> {
    if !(crlb_a > 0.0 && crlb_b > 0.0) {
        return domain(format!("variances must be positive, got {crlb_a} and {crlb_b}"));
    }
    if crlb_a.is_infinite() && crlb_b.is_infinite() {
        return domain("both variances are infinite");
    }
    let (ia, ib) = (1.0 / crlb_a, 1.0 / crlb_b);
    let wa = ia / (ia + ib);
    Ok((wa * u_a + (1.0 - wa) * u_b, 1.0 / (ia + ib)))
}

fn single_emitter(scen: &EmitterScenario) -> Result<(f64, f64)> {
    scen.validate()?;
    match scen.emitters.as_slice() {
        [e] => Ok((e.direction_deg, 10.0 * (e.power / scen.noise_power).log10())),
        _ => config(format!("estimators handle exactly one emitter, scenario has {}", scen.emitters.len())),
    }
}

fn pure_hybrid(cfg: &ArrayConfig) -> Result<()> {
    cfg.validate()?;
    if cfg.n_fd != 0 {
        return config(format!("estimator needs a pure hybrid array, got {} fully-digital antennas", cfg.n_fd));
    }
    if cfg.k_sub < 2 {
        return config(format!("Root-MUSIC over subarrays needs K >= 2, got {}", cfg.k_sub));
    }
    Ok(())
}

fn draw(cfg: &ArrayConfig, scen: &EmitterScenario, n: usize, rng: &mut TrialRng) -> Result<SnapshotBatch> {
    let scen = EmitterScenario { n_snapshots: n, ..scen.clone() };
    synthesize_snapshots(cfg, &scen, rng)
}

fn single_root(batch: &SnapshotBatch, spacing: f64) -> Result<f64> {
    let cov = sample_covariance(batch)?;
    root_music(&cov, 1, spacing)?
        .first()
        .copied()
        .ok_or_else(|| Error::Estimation("Root-MUSIC returned no root".into()))
}

/// Candidate set from one broadside look through the subarrays.
fn broadside_candidates(cfg: &ArrayConfig, first: &SnapshotBatch) -> Result<CandidateSet> {
    let weights = vec![AnalogWeights::broadside(cfg.m_sub); cfg.k_sub];
    let combined = analog_combine(first, cfg, &weights)?.channels(0..cfg.k_sub);
    let u_hat = single_root(&combined, cfg.spacing * cfg.m_sub as f64)?;
    candidate_set(u_hat, cfg.m_sub, cfg.spacing)
}

fn max_candidates(cfg: &ArrayConfig) -> usize {
    (2.0 * cfg.m_sub as f64 * cfg.spacing).ceil() as usize + 1
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Fully-digital Root-MUSIC over all `scen.n_snapshots` snapshots.
pub fn fd_root_music(cfg: &ArrayConfig, scen: &EmitterScenario, rng: &mut TrialRng) -> Result<DoaEstimate> {
    let (theta, snr_db) = single_emitter(scen)?;
    let fd = ArrayConfig::fully_digital(cfg.n_total).with_spacing(cfg.spacing);
    let batch = synthesize_snapshots(&fd, scen, rng)?;
    let u = single_root(&batch, fd.spacing)?;
    let bound = crlb::crlb_fd(&fd, theta, snr_db, scen.n_snapshots)?;
    Ok(DoaEstimate::new(u, Method::FdRootMusic, scen.n_snapshots, bound))
}

/// Classic hybrid Root-MUSIC: one broadside snapshot for the candidates, then
/// one snapshot per candidate with every subarray steered at it.
///
/// Consumes `1 + |candidates|` snapshots, which is `M + 1` unless candidates
/// near `|u| = 1` drop out of `[-1, 1)`. `scen.n_snapshots` is ignored.
pub fn had_root_music_classic(
    cfg: &ArrayConfig,
    scen: &EmitterScenario,
    rng: &mut TrialRng,
) -> Result<DoaEstimate> {
    let (theta, snr_db) = single_emitter(scen)?;
    pure_hybrid(cfg)?;
    let batch = draw(cfg, scen, 1 + max_candidates(cfg), rng)?;
    let cands = broadside_candidates(cfg, &batch.snapshots(0..1))?;

    let powers: Vec<f64> = cands
        .candidates
        .iter()
        .enumerate()
        .map(|(j, &c)| {
            let weights = vec![AnalogWeights::steered(cfg.m_sub, cfg.spacing, c); cfg.k_sub];
            let probe = analog_combine(&batch.snapshots(1 + j..2 + j), cfg, &weights)?;
            Ok(probe.mean_power(0..cfg.k_sub))
        })
        .collect::<Result<_>>()?;
    let u = cands.candidates[argmax(&powers)];
    let bound = crlb::crlb_had(cfg, theta, snr_db, 1, Some(0.0))?;
    Ok(DoaEstimate::new(u, Method::ClassicHad, 1 + cands.len(), bound).with_candidates(cands))
}

/// Contiguous subgroups of `0..k` for `n` candidates; the `k mod n` leftover
/// subarrays are dealt round-robin.
pub fn subgroups(k: usize, n: usize) -> Vec<Vec<usize>> {
    let q = k / n;
    let mut groups: Vec<Vec<usize>> = (0..n).map(|j| (j * q..(j + 1) * q).collect()).collect();
    for (i, s) in (n * q..k).enumerate() {
        groups[i % n].push(s);
    }
    groups
}

/// Two-snapshot hybrid Root-MUSIC: the second snapshot steers one subgroup
/// of subarrays at each candidate and keeps the strongest subgroup.
/// `scen.n_snapshots` is ignored.
pub fn fhad_root_music(cfg: &ArrayConfig, scen: &EmitterScenario, rng: &mut TrialRng) -> Result<DoaEstimate> {
    let (theta, snr_db) = single_emitter(scen)?;
    pure_hybrid(cfg)?;
    if cfg.k_sub < max_candidates(cfg) - 1 {
        return config(format!(
            "{} subarrays cannot host up to {} candidate subgroups",
            cfg.k_sub,
            max_candidates(cfg) - 1
        ));
    }
    let batch = draw(cfg, scen, 2, rng)?;
    let cands = broadside_candidates(cfg, &batch.snapshots(0..1))?;
    if cfg.k_sub < cands.len() {
        return config(format!("{} subarrays for {} candidates", cfg.k_sub, cands.len()));
    }

    let groups = subgroups(cfg.k_sub, cands.len());
    let mut weights = vec![AnalogWeights::broadside(cfg.m_sub); cfg.k_sub];
    for (g, &c) in groups.iter().zip(&cands.candidates) {
        for &s in g {
            weights[s] = AnalogWeights::steered(cfg.m_sub, cfg.spacing, c);
        }
    }
    let probe = analog_combine(&batch.snapshots(1..2), cfg, &weights)?;
    let powers: Vec<f64> = groups.iter().map(|g| probe.mean_power(g.iter().copied())).collect();
    let u = cands.candidates[argmax(&powers)];
    let bound = crlb::crlb_had(cfg, theta, snr_db, 1, Some(0.0))?;
    Ok(DoaEstimate::new(u, Method::Fhad, 2, bound).with_candidates(cands))
}

/// Two-layer estimate from the same `T = scen.n_snapshots` snapshots.
///
/// The hybrid block (broadside weights) gives an ambiguous estimate, the FD
/// block an unambiguous one; the candidate nearest the FD estimate is fused
/// with it by inverse-CRLB weights evaluated at that candidate. With no
/// hybrid block this is FD Root-MUSIC on the `N_F` antennas.
pub fn tlhad_estimate(cfg: &ArrayConfig, scen: &EmitterScenario, rng: &mut TrialRng) -> Result<DoaEstimate> {
    let (theta, snr_db) = single_emitter(scen)?;
    cfg.validate()?;
    if cfg.n_fd < 2 {
        return config(format!("two-layer estimation needs N_F >= 2, got {}", cfg.n_fd));
    }
    if cfg.k_sub == 1 {
        return config("two-layer estimation needs K = 0 or K >= 2 subarrays");
    }
    let t = scen.n_snapshots;
    let batch = synthesize_snapshots(cfg, scen, rng)?;
    let bound = crlb::crlb_tlhad(cfg, theta, snr_db, t, Some(0.0))?;
    let weights = vec![AnalogWeights::broadside(cfg.m_sub); cfg.k_sub];
    let combined = analog_combine(&batch, cfg, &weights)?;
    let fd = combined.channels(cfg.k_sub..cfg.k_sub + cfg.n_fd);
    let u_fd = single_root(&fd, cfg.spacing)?;
    if cfg.k_sub == 0 {
        return Ok(DoaEstimate::new(u_fd, Method::Tlhad, t, bound));
    }

    let hybrid = combined.channels(0..cfg.k_sub);
    let u_hat = single_root(&hybrid, cfg.spacing * cfg.m_sub as f64)?;
    let cands = candidate_set(u_hat, cfg.m_sub, cfg.spacing)?;
    let u_star = cands.nearest(u_fd);

    let theta_star = u_to_deg(u_star);
    let u = if theta_star.abs() < 90.0 {
        let (c_had, c_fd) = crlb::crlb_parts(cfg, theta_star, 0.0, 1, Some(0.0))?;
        if c_had.is_finite() {
            combine_estimates(u_star, c_had, u_fd, c_fd)?.0
        } else {
            u_fd
        }
    } else {
        u_fd
    };
    Ok(DoaEstimate::new(u, Method::Tlhad, t, bound).with_candidates(cands))
}

/// `|g(u, 0)| / sqrt(M)` for broadside subarrays; small values mean the
/// direction sits near an analog null of the first look.
pub fn broadside_gain_ratio(m_sub: usize, spacing: f64, theta_deg: f64) -> f64 {
    crate::array::gain_unchecked(m_sub, spacing, deg_to_u(theta_deg)).norm() / (m_sub as f64).sqrt()
}
