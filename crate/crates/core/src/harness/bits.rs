use std::path::PathBuf;

use rayon::prelude::*;
use serde::Serialize;

use super::roc::trial_theta;
use super::{rmse_with_se, write_csv, ExperimentConfig, RunOptions};
use crate::array::{db_to_linear, synthesize_snapshots, u_to_deg, ArrayConfig, Emitter, EmitterScenario, SnapshotBatch};
use crate::crlb::{crlb_fd, crlb_quantized};
use crate::error::{Error, Result};
use crate::quant::{distortion_factor, performance_loss_db, quantize, QuantizerConfig};
use crate::rng;
use crate::spectral::{root_music, sample_covariance};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LossBitsRow {
    pub bits: String,
    pub snr_db: f64,
    pub rho: f64,
    pub alpha: f64,
    pub loss_db: f64,
    pub rmse_unquantized_deg: f64,
    pub rmse_quantized_deg: f64,
    pub se_quantized_deg: f64,
    /// `10 log10` of the quantized over unquantized mean square error.
    pub loss_empirical_db: f64,
    pub crlb_deg: f64,
    pub crlb_quantized_deg: f64,
    pub n_total: usize,
    pub snapshots: usize,
    pub trials: usize,
    pub seed: u64,
    pub config_digest: String,
}

fn estimate_deg(batch: &SnapshotBatch, spacing: f64) -> Result<f64> {
    let u = root_music(&sample_covariance(batch)?, 1, spacing)?
        .first()
        .copied()
        .ok_or_else(|| Error::Estimation("Root-MUSIC returned no root".into()))?;
    Ok(u_to_deg(u))
}

/// Performance loss of `b`-bit ADCs on a fully-digital array: the AQNM
/// formula next to the measured error inflation of Root-MUSIC run on the
/// quantized and the unquantized copies of each trial.
pub fn run_loss_bits(cfg: &ExperimentConfig) -> Result<Vec<LossBitsRow>> {
    cfg.validate()?;
    let array = ArrayConfig::fully_digital(cfg.array.n_total).with_spacing(cfg.array.spacing);
    let quantizers: Vec<QuantizerConfig> =
        cfg.sweep.bits.iter().map(|&b| QuantizerConfig::new(b)).collect::<Result<_>>()?;
    let key = rng::derive_key(cfg.seed, "loss-bits");
    let theta_key = rng::derive_key(cfg.seed, "loss-bits/theta");
    let t = cfg.scenario.snapshots;
    let digest = cfg.digest();

    let mut rows = Vec::new();
    for &snr_db in &cfg.scenario.snr_db {
        // per trial: unquantized error, one error per bit count, bound
        let errors: Vec<(f64, Vec<f64>, f64)> = (0..cfg.trials as u64)
            .into_par_iter()
            .map(|i| {
                let theta = trial_theta(cfg, theta_key, i);
                let scen = EmitterScenario {
                    emitters: vec![Emitter { direction_deg: theta, power: db_to_linear(snr_db) }],
                    noise_power: 1.0,
                    n_snapshots: t,
                    signal_model: cfg.scenario.signal_model,
                };
                let batch = synthesize_snapshots(&array, &scen, &mut rng::stream(key, i))?;
                let clean = estimate_deg(&batch, array.spacing)? - theta;
                let quantized = quantizers
                    .iter()
                    .map(|q| Ok(estimate_deg(&quantize(&batch, q)?, array.spacing)? - theta))
                    .collect::<Result<_>>()?;
                Ok((clean, quantized, crlb_fd(&array, theta, snr_db, t)?))
            })
            .collect::<Result<_>>()?;
        let clean: Vec<f64> = errors.iter().map(|e| e.0).collect();
        let (rmse_u, _) = rmse_with_se(&clean);
        let bound = errors.iter().map(|e| e.2).sum::<f64>() / errors.len() as f64;
        for (j, &bits) in cfg.sweep.bits.iter().enumerate() {
            let q: Vec<f64> = errors.iter().map(|e| e.1[j]).collect();
            let (rmse_q, se_q) = rmse_with_se(&q);
            let rho = distortion_factor(bits)?;
            rows.push(LossBitsRow {
                bits: bits.to_string(),
                snr_db,
                rho,
                alpha: 1.0 - rho,
                loss_db: performance_loss_db(bits, snr_db)?,
                rmse_unquantized_deg: rmse_u,
                rmse_quantized_deg: rmse_q,
                se_quantized_deg: se_q,
                loss_empirical_db: 20.0 * (rmse_q / rmse_u).log10(),
                crlb_deg: bound.sqrt().to_degrees(),
                crlb_quantized_deg: crlb_quantized(bound, bits, snr_db)?.sqrt().to_degrees(),
                n_total: array.n_total,
                snapshots: t,
                trials: cfg.trials,
                seed: cfg.seed,
                config_digest: digest.clone(),
            });
        }
    }
    Ok(rows)
}

pub(super) fn write(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Vec<PathBuf>> {
    let rows = run_loss_bits(cfg)?;
    Ok(vec![write_csv(&opts.out_dir.join("loss_bits.csv"), &rows)?])
}
