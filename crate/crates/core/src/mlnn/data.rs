use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::array::{db_to_linear, ArrayConfig, Emitter, EmitterScenario, SignalModel};
use crate::detect::trial_eigenvalues;
use crate::error::{contract, Result};
use crate::rng;
use crate::spectral::CovarianceEstimate;

/// Eigenvalues sorted descending and divided by their sum.
#[derive(Clone, Debug, PartialEq)]
pub struct EigFeatures {
    pub values: Vec<f64>,
    /// Zero trace: `values` are all zero.
    pub degenerate: bool,
}

pub fn features_from_eigenvalues(eigs: &[f64]) -> EigFeatures {
    let mut sorted: Vec<f64> = eigs.iter().map(|&l| l.max(0.0)).collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let sum: f64 = sorted.iter().sum();
    if !(sum > 0.0) {
        return EigFeatures { values: vec![0.0; sorted.len()], degenerate: true };
    }
    EigFeatures { values: sorted.iter().map(|l| l / sum).collect(), degenerate: false }
}

pub fn eig_features(cov: &CovarianceEstimate) -> EigFeatures {
    features_from_eigenvalues(&cov.eigenvalues)
}

/// How a detection training set is simulated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub n_elements: usize,
    pub n_snapshots: usize,
    pub snr_db: f64,
    /// H1 examples draw their SNR uniformly in `snr_db +- snr_jitter_db`.
    pub snr_jitter_db: f64,
    pub signal_model: SignalModel,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            n_elements: 64,
            n_snapshots: 200,
            snr_db: -20.0,
            snr_jitter_db: 0.0,
            signal_model: SignalModel::ConstantModulus,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    /// Placeholder spec for hand-built sets.
    pub fn toy(seed: u64) -> Self {
        Self { n_elements: 0, n_snapshots: 0, seed, ..Self::default() }
    }

    /// H1 scenario for example `i`: one emitter, direction uniform in
    /// `(-90°, 90°)`, unit noise power.
    pub fn h1_scenario(&self, i: u64) -> EmitterScenario {
        let mut r = rng::stream(rng::derive_key(self.seed, "h1-scenario"), i);
        let direction_deg = loop {
            let d = r.random_range(-90.0..90.0);
            if d > -90.0 {
                break d;
            }
        };
        let snr_db = if self.snr_jitter_db > 0.0 {
            self.snr_db + r.random_range(-self.snr_jitter_db..=self.snr_jitter_db)
        } else {
            self.snr_db
        };
        EmitterScenario {
            emitters: vec![Emitter { direction_deg, power: db_to_linear(snr_db) }],
            noise_power: 1.0,
            n_snapshots: self.n_snapshots,
            signal_model: self.signal_model,
        }
    }

    /// `n` examples alternating H0, H1, H0, ... Example `i` always gets the
    /// same data, so a larger set extends a smaller one.
    pub fn simulate(&self, n: usize) -> Result<TrainingSet> {
        let cfg = ArrayConfig::fully_digital(self.n_elements);
        let key = rng::derive_key(self.seed, "examples");
        let h0 = EmitterScenario::noise_only(1.0, self.n_snapshots).with_signal_model(self.signal_model);
        let rows: Vec<(Vec<f64>, f64)> = (0..n as u64)
            .into_par_iter()
            .map(|i| {
                let h1 = i % 2 == 1;
                let scen = if h1 { self.h1_scenario(i) } else { h0.clone() };
                let eigs = trial_eigenvalues(&cfg, &scen, key, i)?;
                Ok((features_from_eigenvalues(&eigs).values, if h1 { 1.0 } else { 0.0 }))
            })
            .collect::<Result<_>>()?;
        let (features, labels) = rows.into_iter().unzip();
        TrainingSet::new(features, labels, self.clone())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSet {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
    pub spec: DatasetSpec,
}

impl TrainingSet {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<f64>, spec: DatasetSpec) -> Result<Self> {
        let set = Self { features, labels, spec };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() || self.features.len() != self.labels.len() {
            return contract(format!(
                "{} feature rows for {} labels",
                self.features.len(),
                self.labels.len()
            ));
        }
        let p = self.features[0].len();
        if self.features.iter().any(|x| x.len() != p || x.iter().any(|v| !v.is_finite())) {
            return contract("feature rows must be finite and of equal length");
        }
        if self.labels.iter().any(|&y| y != 0.0 && y != 1.0) {
            return contract("labels must be 0 or 1");
        }
        let ones = self.labels.iter().filter(|&&y| y == 1.0).count();
        let zeros = self.labels.len() - ones;
        if ones.abs_diff(zeros) > 1 {
            return contract(format!("classes unbalanced: {zeros} H0 vs {ones} H1"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn inputs(&self) -> usize {
        self.features[0].len()
    }

    /// Split scores by label into `(h0, h1)`.
    pub fn split_scores(&self, scores: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut h0 = Vec::new();
        let mut h1 = Vec::new();
        for (&s, &y) in scores.iter().zip(&self.labels) {
            if y == 1.0 {
                h1.push(s);
            } else {
                h0.push(s);
            }
        }
        (h0, h1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::synthesize_snapshots;
    use crate::spectral::sample_covariance;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;
    use num_complex::Complex64;

    #[test]
    fn white_and_rank_one() {
        let white = CovarianceEstimate::from_matrix(DMatrix::<Complex64>::identity(4, 4), 10);
        assert_eq!(eig_features(&white).values, vec![0.25; 4]);
        let x = DMatrix::from_column_slice(3, 1, &[Complex64::new(1.0, 2.0), Complex64::new(0.0, -1.0), Complex64::new(3.0, 0.5)]);
        let rank1 = CovarianceEstimate::from_matrix(&x * x.adjoint(), 1);
        let f = eig_features(&rank1);
        assert_abs_diff_eq!(f.values[0], 1.0, epsilon = 1e-12);
        assert!(f.values[1..].iter().all(|v| v.abs() < 1e-12));
        let zero = features_from_eigenvalues(&[0.0, 0.0]);
        assert!(zero.degenerate);
    }

    #[test]
    fn features_are_scale_invariant() {
        let cfg = ArrayConfig::fully_digital(6);
        let scen = EmitterScenario::single(15.0, 0.0, 20);
        let cov = sample_covariance(&synthesize_snapshots(&cfg, &scen, &mut rng::stream(3, 0)).unwrap()).unwrap();
        let a = eig_features(&cov).values;
        let b = eig_features(&cov.scaled(123.0)).values;
        for (x, y) in a.iter().zip(&b) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-14);
        }
        assert_abs_diff_eq!(a.iter().sum::<f64>(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn simulated_sets_are_balanced_and_nested() {
        let spec = DatasetSpec { n_elements: 8, n_snapshots: 16, snr_db: 0.0, seed: 5, ..Default::default() };
        let small = spec.simulate(7).unwrap();
        let big = spec.simulate(12).unwrap();
        assert_eq!(&big.features[..7], &small.features[..]);
        assert_eq!(small.labels.iter().sum::<f64>(), 3.0);
        assert!(small.features.iter().all(|x| x.len() == 8));
    }

    #[test]
    fn validation_rejects_bad_sets() {
        assert!(TrainingSet::new(vec![vec![0.0]; 3], vec![0.0, 0.0, 0.0], DatasetSpec::toy(0)).is_err());
        assert!(TrainingSet::new(vec![vec![f64::NAN], vec![0.0]], vec![0.0, 1.0], DatasetSpec::toy(0)).is_err());
        assert!(TrainingSet::new(vec![vec![0.0], vec![0.0]], vec![0.0, 0.5], DatasetSpec::toy(0)).is_err());
    }
}
