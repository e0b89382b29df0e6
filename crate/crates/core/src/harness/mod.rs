//! Experiment runner: seeded Monte Carlo experiments that write CSV.
//!
//! Every experiment reads an [`ExperimentConfig`] (TOML, sectioned
//! `key = value`), runs its trials on a rayon pool of the requested size and
//! writes CSV files into the output directory. Trial `i` of a given
//! experiment stage always draws from the same random stream, results are
//! gathered in trial order and reduced serially, so the output bytes do not
//! depend on the number of workers.

mod bits;
mod roc;
mod rmse;
mod train;

pub use bits::{run_loss_bits, LossBitsRow};
pub use roc::{run_roc, RocOutput, RocRow, RocSummaryRow};
pub use rmse::{run_rmse_eta, run_rmse_snr, RmseEtaRow, RmseSnrRow};
pub use train::{run_train_mlnn, TrainOutput, TrainReportRow, TrainSummaryRow};

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::array::{ArrayConfig, SignalModel};
use crate::detect::GlrtForm;
use crate::error::{config, Error, Result};
use crate::mlnn::{Activation, TrainHyper};
use crate::quant::Bits;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Roc,
    RmseSnr,
    RmseEta,
    LossBits,
    TrainMlnn,
}

impl Experiment {
    pub const ALL: [Experiment; 5] =
        [Experiment::Roc, Experiment::RmseSnr, Experiment::RmseEta, Experiment::LossBits, Experiment::TrainMlnn];

    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Roc => "roc",
            Experiment::RmseSnr => "rmse-snr",
            Experiment::RmseEta => "rmse-eta",
            Experiment::LossBits => "loss-bits",
            Experiment::TrainMlnn => "train-mlnn",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArraySection {
    pub n_total: usize,
    pub m_sub: usize,
    /// Fully-digital proportion; rounded down to a whole number of subarrays.
    pub eta: f64,
    pub spacing: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub snr_db: Vec<f64>,
    pub theta_deg: f64,
    /// Empty for a fixed direction; `[lo, hi]` draws each trial's direction
    /// uniformly in degrees.
    pub theta_range_deg: Vec<f64>,
    pub snapshots: usize,
    pub signal_model: SignalModel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionSection {
    pub fap: Vec<f64>,
    pub glrt_form: GlrtForm,
    /// H0 trials for threshold calibration; `0` means `trials`.
    pub calibration_trials: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlnnSection {
    pub activations: Vec<Activation>,
    pub shapes: Vec<Vec<usize>>,
    pub train_size: usize,
    pub val_size: usize,
    /// Final training set size over weight count, in `[5, 10]`.
    pub final_ratio: f64,
    pub snr_jitter_db: f64,
    pub target_fap: f64,
    pub training: TrainHyper,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub eta: Vec<f64>,
    pub bits: Vec<Bits>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub trials: usize,
    pub array: ArraySection,
    pub scenario: ScenarioSection,
    pub detection: DetectionSection,
    pub mlnn: MlnnSection,
    pub sweep: SweepSection,
}

impl ExperimentConfig {
    /// Desk-scale defaults for `experiment`.
    pub fn defaults(experiment: Experiment) -> Self {
        let mut cfg = Self {
            experiment,
            seed: 1,
            trials: 2000,
            array: ArraySection { n_total: 64, m_sub: 4, eta: 0.25, spacing: 0.5 },
            scenario: ScenarioSection {
                snr_db: vec![-10.0, -5.0, 0.0, 5.0, 10.0, 15.0],
                theta_deg: 10.0,
                theta_range_deg: Vec::new(),
                snapshots: 1,
                signal_model: SignalModel::ConstantModulus,
            },
            detection: DetectionSection { fap: vec![0.1, 0.01], glrt_form: GlrtForm::LargestToMean, calibration_trials: 0 },
            mlnn: MlnnSection {
                activations: Activation::ALL.to_vec(),
                shapes: [1, 2, 3]
                    .iter()
                    .flat_map(|&depth| [16, 32, 64].map(|w| vec![w; depth]))
                    .collect(),
                train_size: 4000,
                val_size: 4000,
                final_ratio: 8.0,
                snr_jitter_db: 0.0,
                target_fap: 0.1,
                training: TrainHyper::default(),
            },
            sweep: SweepSection {
                eta: vec![1.0 / 16.0, 0.25, 0.5, 0.75, 1.0],
                bits: (1..=8).map(Bits::Finite).chain([Bits::Infinite]).collect(),
            },
        };
        match experiment {
            Experiment::Roc | Experiment::TrainMlnn => {
                cfg.trials = 10_000;
                cfg.array.eta = 1.0;
                cfg.scenario.snr_db = vec![-20.0];
                cfg.scenario.snapshots = 200;
                if experiment == Experiment::Roc {
                    cfg.detection.calibration_trials = 50_000;
                }
            }
            Experiment::RmseSnr => {}
            Experiment::RmseEta => cfg.scenario.snr_db = vec![-10.0, 0.0, 10.0],
            Experiment::LossBits => {
                cfg.array.n_total = 32;
                cfg.array.eta = 1.0;
                cfg.scenario.snr_db = vec![-10.0, 0.0, 10.0];
                cfg.scenario.snapshots = 100;
            }
        }
        cfg
    }

    /// Parse TOML over the defaults of `experiment`. Keys absent from the
    /// text keep their defaults; unknown keys are errors. An `experiment`
    /// key, if present, must agree.
    pub fn from_toml(experiment: Experiment, text: &str) -> Result<Self> {
        let overlay: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let mut base = toml::Table::try_from(Self::defaults(experiment))
            .map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut base, overlay, "")?;
        let cfg: Self = base.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        if cfg.experiment != experiment {
            return config(format!("config is for {} but {} was requested", cfg.experiment, experiment));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(experiment: Experiment, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(experiment, &text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// First 16 hex digits of the SHA-256 of the canonical TOML form.
    pub fn digest(&self) -> String {
        let hash = Sha256::digest(self.to_toml().as_bytes());
        hash.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials < 100 {
            return config(format!("trial count {} below the minimum of 100", self.trials));
        }
        let s = &self.scenario;
        if s.snr_db.is_empty() || s.snr_db.iter().any(|x| !x.is_finite()) {
            return config("scenario.snr_db must be a nonempty list of finite values");
        }
        if s.snapshots == 0 {
            return config("scenario.snapshots must be at least 1");
        }
        if !(s.theta_deg > -90.0 && s.theta_deg < 90.0) {
            return config(format!("scenario.theta_deg {} outside (-90, 90)", s.theta_deg));
        }
        match s.theta_range_deg.as_slice() {
            [] => {}
            [lo, hi] if -90.0 < *lo && lo < hi && *hi < 90.0 => {}
            r => return config(format!("scenario.theta_range_deg {r:?} must be empty or [lo, hi] inside (-90, 90)")),
        }
        let a = &self.array;
        if a.n_total == 0 || a.m_sub == 0 || !(a.spacing > 0.0) {
            return config("array needs n_total >= 1, m_sub >= 1 and spacing > 0");
        }
        if !(0.0..=1.0).contains(&a.eta) {
            return config(format!("array.eta {} outside [0, 1]", a.eta));
        }
        if self.detection.fap.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
            return config("detection.fap values must lie in (0, 1)");
        }
        if self.sweep.eta.iter().any(|&e| !(e > 0.0 && e <= 1.0)) {
            return config("sweep.eta values must lie in (0, 1]");
        }
        let m = &self.mlnn;
        if m.activations.is_empty() || m.shapes.is_empty() || m.shapes.iter().any(|s| s.is_empty() || s.contains(&0)) {
            return config("mlnn.activations and mlnn.shapes must be nonempty with positive widths");
        }
        if !(5.0..=10.0).contains(&m.final_ratio) {
            return config(format!("mlnn.final_ratio {} outside [5, 10]", m.final_ratio));
        }
        if !(m.target_fap > 0.0 && m.target_fap < 1.0) {
            return config("mlnn.target_fap must lie in (0, 1)");
        }
        Ok(())
    }

    /// Array for the configured `eta`, plus whether `N_F` was rounded.
    pub fn two_layer_array(&self, eta: f64) -> Result<(ArrayConfig, bool)> {
        let (cfg, rounded) = ArrayConfig::two_layer(self.array.n_total, self.array.m_sub, eta)?;
        if rounded {
            log::warn!(
                "eta = {eta} gives a fractional subarray count; N_F rounded down to {} (eta = {})",
                cfg.n_fd,
                cfg.fd_proportion()
            );
        }
        Ok((cfg.with_spacing(self.array.spacing), rounded))
    }

    pub fn calibration_trials(&self) -> usize {
        match self.detection.calibration_trials {
            0 => self.trials,
            n => n,
        }
    }
}

fn merge(base: &mut toml::Table, overlay: toml::Table, prefix: &str) -> Result<()> {
    for (key, value) in overlay {
        let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o, &path)?,
            (Some(slot), v) => *slot = v,
            (None, _) => return config(format!("unknown configuration key {path:?}")),
        }
    }
    Ok(())
}

/// Where an experiment writes, how many threads it uses, and which model
/// file it reads or writes.
#[derive(Clone, Debug)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub workers: usize,
    pub model: Option<PathBuf>,
}

impl RunOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self { out_dir: out_dir.into(), workers: 1, model: None }
    }

    pub fn model_path(&self) -> PathBuf {
        self.model.clone().unwrap_or_else(|| self.out_dir.join("mlnn.json"))
    }
}

/// Run `cfg.experiment` on a pool of `opts.workers` threads; returns the
/// files written.
pub fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    if opts.workers == 0 {
        return config("worker count must be at least 1");
    }
    fs::create_dir_all(&opts.out_dir)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", opts.workers)))?;
    pool.install(|| match cfg.experiment {
        Experiment::Roc => roc::write(cfg, opts),
        Experiment::RmseSnr => rmse::write_snr(cfg, opts),
        Experiment::RmseEta => rmse::write_eta(cfg, opts),
        Experiment::LossBits => bits::write(cfg, opts),
        Experiment::TrainMlnn => train::write(cfg, opts),
    })
}

pub(crate) fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<PathBuf> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(path.to_path_buf())
}

/// Root mean square of `errors` and its delta-method standard error.
pub(crate) fn rmse_with_se(errors: &[f64]) -> (f64, f64) {
    let n = errors.len() as f64;
    let sq: Vec<f64> = errors.iter().map(|e| e * e).collect();
    let mse = sq.iter().sum::<f64>() / n;
    let var = sq.iter().map(|s| (s - mse).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let rmse = mse.sqrt();
    let se = if rmse > 0.0 { (var / n).sqrt() / (2.0 * rmse) } else { 0.0 };
    (rmse, se)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        for e in Experiment::ALL {
            let cfg = ExperimentConfig::defaults(e);
            cfg.validate().unwrap();
            let back = ExperimentConfig::from_toml(e, &cfg.to_toml()).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(e.name().parse::<Experiment>().unwrap(), e);
        }
    }

    #[test]
    fn overlay_keeps_defaults() {
        let cfg = ExperimentConfig::from_toml(
            Experiment::RmseEta,
            "seed = 9\n[scenario]\nsnr_db = [10.0]\n[sweep]\nbits = [2, \"inf\"]\n[mlnn.training]\nepochs = 3\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.scenario.snr_db, vec![10.0]);
        assert_eq!(cfg.scenario.snapshots, 1);
        assert_eq!(cfg.sweep.bits, vec![Bits::Finite(2), Bits::Infinite]);
        assert_eq!(cfg.mlnn.training.epochs, 3);
        assert_eq!(cfg.mlnn.training.batch_size, TrainHyper::default().batch_size);
    }

    #[test]
    fn config_errors() {
        let e = Experiment::RmseSnr;
        for bad in [
            "sed = 3",
            "[array]\nn_totl = 4",
            "[scenario]\nsnr_db = \"high\"",
            "trials = 10",
            "experiment = \"roc\"",
            "[mlnn]\nfinal_ratio = 11.0",
            "[scenario]\ntheta_deg = 95.0",
            "[sweep]\nbits = [0]",
            "not toml [",
        ] {
            match ExperimentConfig::from_toml(e, bad) {
                Err(Error::Config(_)) => {}
                other => panic!("{bad:?}: expected a config error, got {other:?}"),
            }
        }
    }

    #[test]
    fn digest_tracks_content() {
        let a = ExperimentConfig::defaults(Experiment::Roc);
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.seed += 1;
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 16);
    }

    #[test]
    fn rmse_helper() {
        let (r, se) = rmse_with_se(&[1.0, -1.0, 1.0, -1.0]);
        assert_eq!(r, 1.0);
        assert_eq!(se, 0.0);
    }
}
