//! Sample covariance, its eigendecomposition, and Root-MUSIC.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::array::SnapshotBatch;
use crate::error::{contract, domain, Error, Result};
use crate::linalg;

/// Sample covariance `R = (1/L) sum_t x(t) x(t)^H` with its eigenpairs,
/// eigenvalues descending.
#[derive(Clone, Debug)]
pub struct CovarianceEstimate {
    pub matrix: DMatrix<Complex64>,
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DMatrix<Complex64>,
    pub n_snapshots: usize,
}

impl CovarianceEstimate {
    /// Decompose a Hermitian matrix; the strict lower triangle is ignored and
    /// replaced by the conjugate of the upper one.
    pub fn from_matrix(mut matrix: DMatrix<Complex64>, n_snapshots: usize) -> Self {
        hermitize(&mut matrix);
        let (eigenvalues, eigenvectors) = linalg::hermitian_eigen(&matrix);
        Self { matrix, eigenvalues, eigenvectors, n_snapshots }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.matrix.diagonal().iter().map(|z| z.re).sum()
    }

    /// `c * R` for `c > 0`; eigenvectors are unchanged.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            matrix: self.matrix.map(|z| z * c),
            eigenvalues: self.eigenvalues.iter().map(|l| l * c).collect(),
            eigenvectors: self.eigenvectors.clone(),
            n_snapshots: self.n_snapshots,
        }
    }
}

fn hermitize(m: &mut DMatrix<Complex64>) {
    let n = m.nrows();
    for i in 0..n {
        m[(i, i)] = Complex64::new(m[(i, i)].re, 0.0);
        for j in (i + 1)..n {
            m[(j, i)] = m[(i, j)].conj();
        }
    }
}

/// `(1/L) X X^H` for a channels x snapshots batch.
pub fn covariance_matrix(batch: &SnapshotBatch) -> DMatrix<Complex64> {
    let x = batch.samples();
    let (p, l) = x.shape();
    let mut r = DMatrix::<Complex64>::zeros(p, p);
    for t in 0..l {
        let col = x.column(t);
        for j in 0..p {
            let xj = col[j];
            for i in 0..=j {
                r[(i, j)] += col[i] * xj.conj();
            }
        }
    }
    let inv = 1.0 / l as f64;
    for j in 0..p {
        for i in 0..=j {
            r[(i, j)] *= inv;
        }
    }
    hermitize(&mut r);
    r
}

pub fn sample_covariance(batch: &SnapshotBatch) -> Result<CovarianceEstimate> {
    if batch.n_snapshots() == 0 {
        return contract("covariance needs at least one snapshot");
    }
    Ok(CovarianceEstimate::from_matrix(covariance_matrix(batch), batch.n_snapshots()))
}

/// Eigenvalues of the sample covariance only (descending). This is all the
/// detectors need and skips the eigenvectors.
pub fn covariance_eigenvalues(batch: &SnapshotBatch) -> Vec<f64> {
    linalg::hermitian_eigenvalues(&covariance_matrix(batch))
}

/// Roots closer than this to the unit circle are treated as (near-)double
/// roots: their phase is refined on the circle, where the null spectrum has
/// its minimum.
const ON_CIRCLE: f64 = 1e-4;
/// Roots up to this far outside the circle still count as "on" it.
const OUTSIDE_SLACK: f64 = 1e-6;

/// Root-MUSIC direction-sines for `n_sources` emitters.
///
/// The returned values are principal: `u` in `[-1/(2d), 1/(2d))`. For
/// `spacing > 0.5` they are ambiguous by construction.
pub fn root_music(cov: &CovarianceEstimate, n_sources: usize, spacing: f64) -> Result<Vec<f64>> {
    let p = cov.dim();
    if n_sources == 0 || n_sources >= p {
        return contract(format!("need 1 <= sources < channels, got {n_sources} sources for {p} channels"));
    }
    if !(spacing > 0.0 && spacing.is_finite()) {
        return domain(format!("spacing {spacing} must be positive"));
    }

    let projector = noise_projector(cov, n_sources);
    let mut coeffs = vec![Complex64::new(0.0, 0.0); 2 * p - 1];
    for m in 0..p {
        for n in 0..p {
            coeffs[n + p - 1 - m] += projector[(m, n)];
        }
    }
    let roots = linalg::poly_roots(&coeffs)?;

    let mut inside: Vec<Complex64> =
        roots.into_iter().filter(|z| z.norm() <= 1.0 + OUTSIDE_SLACK).collect();
    inside.sort_by(|a, b| {
        let da = (1.0 - a.norm()).abs();
        let db = (1.0 - b.norm()).abs();
        da.total_cmp(&db).then(a.arg().abs().total_cmp(&b.arg().abs()))
    });

    let mut phases: Vec<f64> = Vec::with_capacity(n_sources);
    for z in inside {
        if phases.len() == n_sources {
            break;
        }
        let mut phi = z.arg();
        if (z.norm() - 1.0).abs() < ON_CIRCLE {
            phi = refine_on_circle(&projector, phi);
            // The conjugate-reciprocal partner of a double root lands on the
            // same phase; keep one of them.
            if phases.iter().any(|&q| wrap_phase(q - phi).abs() < 1e-6) {
                continue;
            }
        }
        phases.push(phi);
    }
    if phases.len() < n_sources {
        return Err(Error::Estimation(format!(
            "Root-MUSIC found {} usable roots for {n_sources} sources",
            phases.len()
        )));
    }
    Ok(phases.into_iter().map(|phi| principal_u(phi / (2.0 * PI * spacing), spacing)).collect())
}

/// `I - E_s E_s^H` for the `n_sources` dominant eigenvectors.
fn noise_projector(cov: &CovarianceEstimate, n_sources: usize) -> DMatrix<Complex64> {
    let p = cov.dim();
    let es = cov.eigenvectors.columns(0, n_sources);
    let mut proj = -(es * es.adjoint());
    for i in 0..p {
        proj[(i, i)] += 1.0;
    }
    proj
}

/// Null spectrum `a(phi)^H C a(phi)` with `a_k = exp(i k phi)` and its first
/// two derivatives in `phi`.
fn null_spectrum(c: &DMatrix<Complex64>, phi: f64) -> (f64, f64, f64) {
    let p = c.nrows();
    let a: Vec<Complex64> = (0..p).map(|k| Complex64::from_polar(1.0, k as f64 * phi)).collect();
    let mut f = 0.0;
    let mut d1 = 0.0;
    let mut d2 = 0.0;
    for m in 0..p {
        for n in 0..p {
            let term = a[m].conj() * c[(m, n)] * a[n];
            let k = (n as f64) - (m as f64);
            // d/dphi of exp(i k phi) brings down i k
            f += term.re;
            d1 += (term * Complex64::new(0.0, k)).re;
            d2 -= k * k * term.re;
        }
    }
    (f, d1, d2)
}

fn refine_on_circle(c: &DMatrix<Complex64>, phi0: f64) -> f64 {
    let mut phi = phi0;
    let (mut best, _, _) = null_spectrum(c, phi);
    for _ in 0..20 {
        let (_, d1, d2) = null_spectrum(c, phi);
        if d2 <= 0.0 {
            break;
        }
        let step = (d1 / d2).clamp(-1e-3, 1e-3);
        let next = phi - step;
        let (f, _, _) = null_spectrum(c, next);
        if f > best {
            break;
        }
        best = f;
        phi = next;
        if step.abs() < 1e-15 {
            break;
        }
    }
    phi
}

fn wrap_phase(x: f64) -> f64 {
    (x + PI).rem_euclid(2.0 * PI) - PI
}

/// Reduce `u` into `[-1/(2d), 1/(2d))`.
pub fn principal_u(u: f64, spacing: f64) -> f64 {
    let period = 1.0 / spacing;
    let half = 0.5 * period;
    let r = (u + half).rem_euclid(period) - half;
    if r >= half {
        r - period
    } else {
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::{deg_to_u, synthesize_snapshots, ArrayConfig, EmitterScenario};
    use crate::rng;
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;

    fn noiseless(n: usize, spacing: f64, u: f64, snapshots: usize, seed: u64) -> CovarianceEstimate {
        let cfg = ArrayConfig::fully_digital(n).with_spacing(spacing);
        let mut scen = EmitterScenario::single(u.asin().to_degrees(), 0.0, snapshots);
        scen.noise_power = 1e-300;
        let batch = synthesize_snapshots(&cfg, &scen, &mut rng::stream(seed, 0)).unwrap();
        sample_covariance(&batch).unwrap()
    }

    #[test]
    fn single_snapshot_covariance_is_rank_one() {
        let x = DMatrix::from_fn(5, 1, |i, _| Complex64::new(i as f64, 1.0 - i as f64));
        let energy: f64 = x.iter().map(|z| z.norm_sqr()).sum();
        let cov = sample_covariance(&SnapshotBatch::from_elements(x).unwrap()).unwrap();
        assert_abs_diff_eq!(cov.eigenvalues[0], energy, epsilon = 1e-12);
        for l in &cov.eigenvalues[1..] {
            assert!(l.abs() < 1e-12);
        }
    }

    #[test]
    fn trace_is_mean_snapshot_energy() {
        let cfg = ArrayConfig::fully_digital(6);
        let batch = synthesize_snapshots(&cfg, &EmitterScenario::single(3.0, 2.0, 17), &mut rng::stream(1, 1))
            .unwrap();
        let cov = sample_covariance(&batch).unwrap();
        let energy: f64 = batch.samples().iter().map(|z| z.norm_sqr()).sum::<f64>() / 17.0;
        assert_abs_diff_eq!(cov.trace(), energy, epsilon = 1e-12 * energy);
        let eig_sum: f64 = cov.eigenvalues.iter().sum();
        assert_abs_diff_eq!(eig_sum, energy, epsilon = 1e-10 * energy);
    }

    #[test]
    fn covariance_is_hermitian_with_small_residuals() {
        let cfg = ArrayConfig::fully_digital(10);
        let batch = synthesize_snapshots(&cfg, &EmitterScenario::single(-40.0, 0.0, 30), &mut rng::stream(2, 2))
            .unwrap();
        let cov = sample_covariance(&batch).unwrap();
        assert_eq!(cov.matrix, cov.matrix.adjoint());
        let l1 = cov.eigenvalues[0];
        for (i, &l) in cov.eigenvalues.iter().enumerate() {
            assert!(l >= -1e-10 * l1);
            let v: DVector<Complex64> = cov.eigenvectors.column(i).into_owned();
            let r = &cov.matrix * &v - v.map(|z| z * l);
            assert!(r.norm() < 1e-8 * l1);
        }
    }

    #[test]
    fn noiseless_source_is_recovered() {
        let cov = noiseless(8, 0.5, 0.3, 16, 5);
        let u = root_music(&cov, 1, 0.5).unwrap();
        assert_abs_diff_eq!(u[0], 0.3, epsilon = 1e-9);
    }

    #[test]
    fn broadside_is_exact() {
        let cov = noiseless(8, 0.5, 0.0, 4, 6);
        let u = root_music(&cov, 1, 0.5).unwrap();
        assert!(u[0].abs() < 1e-12, "{}", u[0]);
    }

    #[test]
    fn noiseless_single_snapshot_works_for_large_arrays() {
        for (n, u) in [(16, -0.71), (64, 0.42), (64, deg_to_u(10.0)), (32, 0.93)] {
            let cov = noiseless(n, 0.5, u, 1, 9);
            let est = root_music(&cov, 1, 0.5).unwrap();
            assert_abs_diff_eq!(est[0], u, epsilon = 1e-9);
        }
    }

    #[test]
    fn wide_spacing_returns_principal_value() {
        let cov = noiseless(16, 2.0, 0.6, 1, 3);
        let u = root_music(&cov, 1, 2.0).unwrap();
        assert_abs_diff_eq!(u[0], 0.1, epsilon = 1e-9);
    }

    #[test]
    fn rejects_bad_source_counts() {
        let cov = noiseless(4, 0.5, 0.1, 2, 1);
        assert!(root_music(&cov, 0, 0.5).is_err());
        assert!(root_music(&cov, 4, 0.5).is_err());
        assert!(root_music(&cov, 1, 0.0).is_err());
    }

    #[test]
    fn principal_interval() {
        assert_abs_diff_eq!(principal_u(1.2, 2.0), 0.2, epsilon = 1e-12);
        assert_eq!(principal_u(0.25, 2.0), -0.25);
        assert_abs_diff_eq!(principal_u(-0.9, 0.5), -0.9, epsilon = 1e-15);
        assert_eq!(principal_u(1.0, 0.5), -1.0);
    }
}
