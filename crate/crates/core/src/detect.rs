//! Eigenvalue detectors for passive emitters, Monte Carlo threshold
//! calibration and ROC estimation.
//!
//! Every statistic here is a ratio of eigenvalues, so it does not depend on
//! the unknown noise power. Thresholds are calibrated by simulating the
//! noise-only hypothesis rather than from closed-form distributions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::array::{synthesize_snapshots, ArrayConfig, EmitterScenario};
use crate::error::{contract, Result};
use crate::rng;
use crate::spectral::covariance_eigenvalues;

/// A statistic value; degenerate covariances (zero smallest eigenvalue or
/// zero trace) give `+inf` and set the flag.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Score {
    pub value: f64,
    pub degenerate: bool,
}

impl Score {
    fn ok(value: f64) -> Self {
        Self { value, degenerate: false }
    }

    fn degenerate() -> Self {
        Self { value: f64::INFINITY, degenerate: true }
    }
}

/// `lambda_max / lambda_min` (R-MaxEV-MinEV).
pub fn maxmin_statistic(eigs: &[f64]) -> Score {
    let (max, min) = extremes(eigs);
    if !(min > 0.0) {
        return Score::degenerate();
    }
    Score::ok(max / min)
}

/// Blind rank-one GLRT: `lambda_max / mean(lambda)`.
pub fn glrt_statistic(eigs: &[f64]) -> Score {
    let mean = eigs.iter().sum::<f64>() / eigs.len() as f64;
    if !(mean > 0.0) {
        return Score::degenerate();
    }
    Score::ok(extremes(eigs).0 / mean)
}

/// Sphericity test: arithmetic over geometric mean of the eigenvalues.
pub fn sphericity_statistic(eigs: &[f64]) -> Score {
    let p = eigs.len() as f64;
    let mean = eigs.iter().sum::<f64>() / p;
    if !(mean > 0.0) || eigs.iter().any(|&l| !(l > 0.0)) {
        return Score::degenerate();
    }
    let log_gm = eigs.iter().map(|l| l.ln()).sum::<f64>() / p;
    Score::ok(mean / log_gm.exp())
}

fn extremes(eigs: &[f64]) -> (f64, f64) {
    eigs.iter().fold((f64::NEG_INFINITY, f64::INFINITY), |(hi, lo), &l| (hi.max(l), lo.min(l)))
}

/// Which form the "GLRT" detector uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GlrtForm {
    #[default]
    LargestToMean,
    Sphericity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Detector {
    Glrt(GlrtForm),
    MaxMin,
}

impl Detector {
    pub fn statistic(&self, eigs: &[f64]) -> Score {
        match self {
            Detector::Glrt(GlrtForm::LargestToMean) => glrt_statistic(eigs),
            Detector::Glrt(GlrtForm::Sphericity) => sphericity_statistic(eigs),
            Detector::MaxMin => maxmin_statistic(eigs),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Detector::Glrt(GlrtForm::LargestToMean) => "glrt",
            Detector::Glrt(GlrtForm::Sphericity) => "glrt-sphericity",
            Detector::MaxMin => "r-maxev-minev",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Hypothesis {
    H0,
    H1,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectionResult {
    pub statistic: f64,
    pub threshold: f64,
    pub decision: Hypothesis,
    pub detector: String,
}

impl DetectionResult {
    pub fn new(detector: impl Into<String>, statistic: f64, threshold: f64) -> Self {
        let decision = if statistic > threshold { Hypothesis::H1 } else { Hypothesis::H0 };
        Self { statistic, threshold, decision, detector: detector.into() }
    }
}

pub fn detect(detector: Detector, eigs: &[f64], threshold: f64) -> DetectionResult {
    DetectionResult::new(detector.name(), detector.statistic(eigs).value, threshold)
}

/// Smallest H0 sample count that resolves the `1 - fap` quantile.
pub fn min_trials(target_fap: f64) -> usize {
    (100.0 / target_fap).ceil() as usize
}

/// Threshold `tau` such that at most a fraction `target_fap` of `h0_scores`
/// exceeds it: the order statistic at rank `ceil((1 - fap) n)`.
pub fn quantile_threshold(h0_scores: &[f64], target_fap: f64) -> Result<f64> {
    if !(target_fap > 0.0 && target_fap < 1.0) {
        return contract(format!("target false-alarm probability {target_fap} outside (0, 1)"));
    }
    if h0_scores.is_empty() {
        return contract("no H0 scores to calibrate on");
    }
    let mut sorted = h0_scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = (((1.0 - target_fap) * n as f64) - 1e-9).ceil().max(1.0) as usize;
    Ok(sorted[rank.min(n) - 1])
}

/// Eigenvalues of the sample covariance for one simulated trial.
pub fn trial_eigenvalues(
    cfg: &ArrayConfig,
    scen: &EmitterScenario,
    key: u64,
    trial: u64,
) -> Result<Vec<f64>> {
    let batch = synthesize_snapshots(cfg, scen, &mut rng::stream(key, trial))?;
    Ok(covariance_eigenvalues(&batch))
}

/// Eigenvalue sets for trials `0..n_trials`, in trial order.
pub fn simulate_eigenvalues(
    cfg: &ArrayConfig,
    scen: &EmitterScenario,
    n_trials: usize,
    key: u64,
) -> Result<Vec<Vec<f64>>> {
    (0..n_trials as u64)
        .into_par_iter()
        .map(|t| trial_eigenvalues(cfg, scen, key, t))
        .collect()
}

/// Monte Carlo threshold for a target false-alarm probability.
///
/// Simulates `n_trials` noise-only batches of `l` snapshots, scores each and
/// returns the empirical `1 - fap` quantile. Requires
/// `n_trials >= 100 / target_fap`.
pub fn calibrate_threshold<F>(
    statistic_fn: F,
    cfg: &ArrayConfig,
    noise_power: f64,
    l: usize,
    target_fap: f64,
    n_trials: usize,
    key: u64,
) -> Result<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if !(target_fap > 0.0 && target_fap < 1.0) {
        return contract(format!("target false-alarm probability {target_fap} outside (0, 1)"));
    }
    if n_trials < min_trials(target_fap) {
        return contract(format!(
            "{n_trials} trials cannot resolve a false-alarm probability of {target_fap}; need {}",
            min_trials(target_fap)
        ));
    }
    let scen = EmitterScenario::noise_only(noise_power, l);
    let scores: Vec<f64> = simulate_eigenvalues(cfg, &scen, n_trials, key)?
        .iter()
        .map(|e| statistic_fn(e))
        .collect();
    quantile_threshold(&scores, target_fap)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RocPoint {
    pub fap: f64,
    pub pd: f64,
}

/// Empirical ROC from pooled scores.
///
/// The threshold sweeps every distinct observed score from the top down,
/// declaring H1 for scores at or above it, so the curve is a monotone
/// staircase from `(0, 0)` to `(1, 1)`.
pub fn roc_from_scores(h0: &[f64], h1: &[f64]) -> Vec<RocPoint> {
    let mut a = h0.to_vec();
    let mut b = h1.to_vec();
    a.sort_by(|x, y| y.total_cmp(x));
    b.sort_by(|x, y| y.total_cmp(x));
    let (n0, n1) = (a.len() as f64, b.len() as f64);
    let mut points = vec![RocPoint { fap: 0.0, pd: 0.0 }];
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        let v = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => if x.total_cmp(&y).is_ge() { x } else { y },
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        while i < a.len() && a[i] == v {
            i += 1;
        }
        while j < b.len() && b[j] == v {
            j += 1;
        }
        points.push(RocPoint { fap: i as f64 / n0, pd: j as f64 / n1 });
    }
    points
}

/// Area under the ROC: `P(s1 > s0) + P(s1 = s0) / 2`.
pub fn auc(h0: &[f64], h1: &[f64]) -> f64 {
    let mut a = h0.to_vec();
    a.sort_by(f64::total_cmp);
    let total: f64 = h1
        .iter()
        .map(|&s| {
            let below = a.partition_point(|&x| x < s);
            let not_above = a.partition_point(|&x| x <= s);
            below as f64 + 0.5 * (not_above - below) as f64
        })
        .sum();
    total / (h0.len() as f64 * h1.len() as f64)
}

/// Hanley-McNeil standard error of an AUC estimate.
pub fn auc_standard_error(auc: f64, n0: usize, n1: usize) -> f64 {
    let q1 = auc / (2.0 - auc);
    let q2 = 2.0 * auc * auc / (1.0 + auc);
    let var = (auc * (1.0 - auc)
        + (n1 as f64 - 1.0) * (q1 - auc * auc)
        + (n0 as f64 - 1.0) * (q2 - auc * auc))
        / (n0 as f64 * n1 as f64);
    var.max(0.0).sqrt()
}

/// Fraction of `scores` strictly above `threshold`.
pub fn exceed_rate(scores: &[f64], threshold: f64) -> f64 {
    scores.iter().filter(|&&s| s > threshold).count() as f64 / scores.len() as f64
}

/// Binomial standard error `sqrt(p (1 - p) / n)`.
pub fn binomial_se(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Normal-approximation 99% interval for a binomial proportion.
pub fn binomial_interval_99(p: f64, n: usize) -> (f64, f64) {
    let half = 2.5758293035489 * binomial_se(p, n);
    (p - half, p + half)
}

/// Scores of `score_fn` on `n_trials` noise-only and `n_trials` H1 batches.
#[derive(Clone, Debug)]
pub struct Roc {
    pub points: Vec<RocPoint>,
    pub auc: f64,
    pub h0_scores: Vec<f64>,
    pub h1_scores: Vec<f64>,
}

/// Simulate an ROC for `score_fn` over eigenvalues. H0 batches use the H1
/// scenario's noise power and snapshot count with the emitters removed.
pub fn roc_curve<F>(
    score_fn: F,
    scenario_h1: &EmitterScenario,
    cfg: &ArrayConfig,
    n_trials: usize,
    key: u64,
) -> Result<Roc>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if n_trials < 1000 {
        return contract(format!("ROC estimation needs at least 1000 trials per hypothesis, got {n_trials}"));
    }
    let h0_scen = EmitterScenario { emitters: Vec::new(), ..scenario_h1.clone() };
    let h0_key = rng::derive_key(key, "roc-h0");
    let h1_key = rng::derive_key(key, "roc-h1");
    let h0: Vec<f64> =
        simulate_eigenvalues(cfg, &h0_scen, n_trials, h0_key)?.iter().map(|e| score_fn(e)).collect();
    let h1: Vec<f64> =
        simulate_eigenvalues(cfg, scenario_h1, n_trials, h1_key)?.iter().map(|e| score_fn(e)).collect();
    Ok(Roc { points: roc_from_scores(&h0, &h1), auc: auc(&h0, &h1), h0_scores: h0, h1_scores: h1 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn maxmin_cases() {
        assert_eq!(maxmin_statistic(&[2.0, 2.0, 2.0]).value, 1.0);
        assert_eq!(maxmin_statistic(&[4.0, 1.0, 1.0, 1.0]).value, 4.0);
        let s = maxmin_statistic(&[4.0, 1.0, 0.0]);
        assert!(s.degenerate && s.value.is_infinite());
    }

    #[test]
    fn glrt_cases() {
        assert_eq!(glrt_statistic(&[3.0; 5]).value, 1.0);
        assert_abs_diff_eq!(glrt_statistic(&[4.0, 1.0, 1.0, 1.0]).value, 4.0 / 1.75, epsilon = 1e-15);
        assert!(glrt_statistic(&[0.0, 0.0]).degenerate);
        assert_abs_diff_eq!(sphericity_statistic(&[1.0; 4]).value, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn statistics_are_scale_invariant() {
        let e = [5.0, 2.5, 1.2, 0.7];
        let scaled: Vec<f64> = e.iter().map(|x| x * 37.5).collect();
        for d in [Detector::MaxMin, Detector::Glrt(GlrtForm::LargestToMean), Detector::Glrt(GlrtForm::Sphericity)] {
            assert_abs_diff_eq!(d.statistic(&e).value, d.statistic(&scaled).value, epsilon = 1e-12);
        }
    }

    #[test]
    fn decision_rule() {
        let r = detect(Detector::MaxMin, &[4.0, 1.0], 3.0);
        assert_eq!(r.decision, Hypothesis::H1);
        let r = detect(Detector::MaxMin, &[4.0, 1.0], 4.0);
        assert_eq!(r.decision, Hypothesis::H0);
        assert_eq!(r.detector, "r-maxev-minev");
    }

    #[test]
    fn quantile_threshold_definition() {
        let s: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(quantile_threshold(&s, 0.5).unwrap(), 5.0);
        assert_eq!(quantile_threshold(&s, 0.1).unwrap(), 9.0);
        assert_eq!(exceed_rate(&s, 9.0), 0.1);
        assert!(quantile_threshold(&s, 0.0).is_err());
        assert!(quantile_threshold(&[], 0.1).is_err());
    }

    #[test]
    fn constant_score_gives_diagonal() {
        let roc = roc_from_scores(&[1.0; 50], &[1.0; 70]);
        assert_eq!(roc, vec![RocPoint { fap: 0.0, pd: 0.0 }, RocPoint { fap: 1.0, pd: 1.0 }]);
        assert_eq!(auc(&[1.0; 50], &[1.0; 70]), 0.5);
    }

    #[test]
    fn oracle_score_passes_through_corner() {
        let roc = roc_from_scores(&[0.0; 20], &[1.0; 20]);
        assert!(roc.contains(&RocPoint { fap: 0.0, pd: 1.0 }));
        assert_eq!(auc(&[0.0; 20], &[1.0; 20]), 1.0);
    }

    #[test]
    fn roc_is_monotone_with_endpoints() {
        let h0 = [0.1, 0.4, 0.35, 0.8, 0.2, 0.4];
        let h1 = [0.9, 0.4, 0.7, 0.3, 0.95];
        let roc = roc_from_scores(&h0, &h1);
        assert_eq!(roc[0], RocPoint { fap: 0.0, pd: 0.0 });
        assert_eq!(*roc.last().unwrap(), RocPoint { fap: 1.0, pd: 1.0 });
        for w in roc.windows(2) {
            assert!(w[1].fap >= w[0].fap && w[1].pd >= w[0].pd);
        }
        // trapezoid area of the staircase equals the Mann-Whitney AUC
        let area: f64 = roc.windows(2).map(|w| (w[1].fap - w[0].fap) * 0.5 * (w[0].pd + w[1].pd)).sum();
        assert_abs_diff_eq!(area, auc(&h0, &h1), epsilon = 1e-12);
    }

    #[test]
    fn calibration_contract() {
        let cfg = ArrayConfig::fully_digital(4);
        let f = |e: &[f64]| maxmin_statistic(e).value;
        assert!(calibrate_threshold(f, &cfg, 1.0, 10, 0.1, 999, 1).is_err());
        assert!(calibrate_threshold(f, &cfg, 1.0, 10, 1.0, 5000, 1).is_err());
    }

    #[test]
    fn calibration_is_reproducible_and_median_at_half() {
        let cfg = ArrayConfig::fully_digital(4);
        let f = |e: &[f64]| glrt_statistic(e).value;
        let a = calibrate_threshold(f, &cfg, 1.0, 20, 0.5, 400, 42).unwrap();
        let b = calibrate_threshold(f, &cfg, 1.0, 20, 0.5, 400, 42).unwrap();
        assert_eq!(a, b);
        let scen = EmitterScenario::noise_only(1.0, 20);
        let mut scores: Vec<f64> =
            simulate_eigenvalues(&cfg, &scen, 400, 42).unwrap().iter().map(|e| f(e)).collect();
        scores.sort_by(f64::total_cmp);
        assert_eq!(a, scores[199]);
    }

    #[test]
    fn roc_curve_needs_enough_trials() {
        let cfg = ArrayConfig::fully_digital(4);
        let scen = EmitterScenario::single(0.0, 0.0, 10);
        assert!(roc_curve(|e: &[f64]| e[0], &scen, &cfg, 10, 0).is_err());
    }
}
