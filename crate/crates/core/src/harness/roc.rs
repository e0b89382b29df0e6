use std::path::PathBuf;

use rayon::prelude::*;
use serde::Serialize;

use super::{write_csv, ExperimentConfig, RunOptions};
use crate::array::{db_to_linear, ArrayConfig, Emitter, EmitterScenario};
use crate::detect::{
    auc, auc_standard_error, binomial_interval_99, binomial_se, exceed_rate, quantile_threshold,
    roc_from_scores, trial_eigenvalues, Detector,
};
use crate::error::{config, Error, Result};
use crate::mlnn::{features_from_eigenvalues, MlnnModel};
use crate::rng;

/// One ROC staircase point. Field order is the CSV header.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RocRow {
    pub fap: f64,
    pub pd: f64,
    pub detector: String,
    pub snr_db: f64,
    pub n: usize,
    pub l: usize,
    pub trials: usize,
    pub seed: u64,
}

/// Operating point of one detector at a calibrated threshold.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RocSummaryRow {
    pub detector: String,
    pub snr_db: f64,
    pub target_fap: f64,
    pub threshold: f64,
    /// False-alarm rate of the threshold on H0 trials not used to set it.
    pub empirical_fap: f64,
    pub fap_lo99: f64,
    pub fap_hi99: f64,
    pub pd: f64,
    pub pd_se: f64,
    pub auc: f64,
    pub auc_se: f64,
    pub n: usize,
    pub l: usize,
    pub trials: usize,
    pub calibration_trials: usize,
    pub seed: u64,
    pub config_digest: String,
}

#[derive(Clone, Debug)]
pub struct RocOutput {
    pub rows: Vec<RocRow>,
    pub summary: Vec<RocSummaryRow>,
}

type Scorer<'a> = (String, Box<dyn Fn(&[f64]) -> f64 + Sync + 'a>);

fn eigen_trials<F>(cfg: &ArrayConfig, scenario: F, n: usize, key: u64) -> Result<Vec<Vec<f64>>>
where
    F: Fn(u64) -> EmitterScenario + Sync,
{
    (0..n as u64).into_par_iter().map(|t| trial_eigenvalues(cfg, &scenario(t), key, t)).collect()
}

/// Direction of H1 trial `t`: fixed, or uniform over the configured range.
pub(crate) fn trial_theta(cfg: &ExperimentConfig, key: u64, t: u64) -> f64 {
    use rand::Rng;
    match cfg.scenario.theta_range_deg.as_slice() {
        [lo, hi] => rng::stream(key, t).random_range(*lo..*hi),
        _ => cfg.scenario.theta_deg,
    }
}

/// ROC and calibrated operating points of the GLRT, R-MaxEV-MinEV and MLNN
/// detectors on common realizations: every detector scores the same
/// eigenvalue sets.
pub fn run_roc(cfg: &ExperimentConfig, model: &MlnnModel) -> Result<RocOutput> {
    cfg.validate()?;
    let n = cfg.array.n_total;
    let l = cfg.scenario.snapshots;
    if model.inputs() != n {
        return config(format!("MLNN model expects {} eigenvalues but the array has {n} antennas", model.inputs()));
    }
    let array = ArrayConfig::fully_digital(n).with_spacing(cfg.array.spacing);
    let digest = cfg.digest();
    let noise = EmitterScenario::noise_only(1.0, l).with_signal_model(cfg.scenario.signal_model);

    let detectors: Vec<Scorer> = vec![
        (Detector::Glrt(cfg.detection.glrt_form).name().into(), {
            let d = Detector::Glrt(cfg.detection.glrt_form);
            Box::new(move |e: &[f64]| d.statistic(e).value)
        }),
        (Detector::MaxMin.name().into(), Box::new(|e: &[f64]| Detector::MaxMin.statistic(e).value)),
        ("mlnn".into(), Box::new(|e: &[f64]| model.forward(&features_from_eigenvalues(e).values).unwrap_or(f64::NAN))),
    ];
    let score = |sets: &[Vec<f64>], f: &(dyn Fn(&[f64]) -> f64 + Sync)| -> Result<Vec<f64>> {
        let s: Vec<f64> = sets.par_iter().map(|e| f(e)).collect();
        if s.iter().any(|v| v.is_nan()) {
            return Err(Error::Estimation("detector produced a NaN score".into()));
        }
        Ok(s)
    };

    let cal_trials = cfg.calibration_trials();
    let cal = eigen_trials(&array, |_| noise.clone(), cal_trials, rng::derive_key(cfg.seed, "roc/calibration"))?;
    let h0 = eigen_trials(&array, |_| noise.clone(), cfg.trials, rng::derive_key(cfg.seed, "roc/h0"))?;
    let mut thresholds = Vec::new();
    let mut h0_scores = Vec::new();
    for (_, f) in &detectors {
        let cal_scores = score(&cal, f.as_ref())?;
        let taus: Vec<f64> =
            cfg.detection.fap.iter().map(|&p| quantile_threshold(&cal_scores, p)).collect::<Result<_>>()?;
        thresholds.push(taus);
        h0_scores.push(score(&h0, f.as_ref())?);
    }

    let theta_key = rng::derive_key(cfg.seed, "roc/theta");
    let h1_key = rng::derive_key(cfg.seed, "roc/h1");
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for &snr_db in &cfg.scenario.snr_db {
        let h1_scenario = |t: u64| EmitterScenario {
            emitters: vec![Emitter { direction_deg: trial_theta(cfg, theta_key, t), power: db_to_linear(snr_db) }],
            ..noise.clone()
        };
        let h1 = eigen_trials(&array, h1_scenario, cfg.trials, h1_key)?;
        for (d, (name, f)) in detectors.iter().enumerate() {
            let s1 = score(&h1, f.as_ref())?;
            let s0 = &h0_scores[d];
            for p in roc_from_scores(s0, &s1) {
                rows.push(RocRow {
                    fap: p.fap,
                    pd: p.pd,
                    detector: name.clone(),
                    snr_db,
                    n,
                    l,
                    trials: cfg.trials,
                    seed: cfg.seed,
                });
            }
            let area = auc(s0, &s1);
            for (&target, &tau) in cfg.detection.fap.iter().zip(&thresholds[d]) {
                let (lo, hi) = binomial_interval_99(target, s0.len());
                let pd = exceed_rate(&s1, tau);
                summary.push(RocSummaryRow {
                    detector: name.clone(),
                    snr_db,
                    target_fap: target,
                    threshold: tau,
                    empirical_fap: exceed_rate(s0, tau),
                    fap_lo99: lo,
                    fap_hi99: hi,
                    pd,
                    pd_se: binomial_se(pd, s1.len()),
                    auc: area,
                    auc_se: auc_standard_error(area, s0.len(), s1.len()),
                    n,
                    l,
                    trials: cfg.trials,
                    calibration_trials: cal_trials,
                    seed: cfg.seed,
                    config_digest: digest.clone(),
                });
            }
        }
    }
    Ok(RocOutput { rows, summary })
}

pub(super) fn write(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Vec<PathBuf>> {
    let path = opts.model_path();
    if !path.exists() {
        return config(format!(
            "MLNN model file {} not found; create it with `doa-lab train-mlnn --config <file> --model {}`",
            path.display(),
            path.display()
        ));
    }
    let model = MlnnModel::load(&path)?;
    let out = run_roc(cfg, &model)?;
    Ok(vec![
        write_csv(&opts.out_dir.join("roc.csv"), &out.rows)?,
        write_csv(&opts.out_dir.join("roc_summary.csv"), &out.summary)?,
    ])
}
