use std::path::PathBuf;

use rayon::prelude::*;
use serde::Serialize;

use super::roc::trial_theta;
use super::{rmse_with_se, write_csv, ExperimentConfig, RunOptions};
use crate::array::{db_to_linear, deg_to_u, ArrayConfig, Emitter, EmitterScenario};
use crate::crlb::{crlb_had, crlb_tlhad};
use crate::doa::{broadside_gain_ratio, fhad_root_music, had_root_music_classic, tlhad_estimate, DoaEstimate};
use crate::error::{config, Result};
use crate::rng;

/// Directions whose broadside subarray gain falls below this fraction of
/// `sqrt(M)` are left out of hybrid RMSE runs.
pub const MIN_GAIN_RATIO: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RmseSnrRow {
    pub snr_db: f64,
    pub theta_lo_deg: f64,
    pub theta_hi_deg: f64,
    pub rmse_classic_deg: f64,
    pub se_classic_deg: f64,
    pub rmse_fhad_deg: f64,
    pub se_fhad_deg: f64,
    pub rmse_tlhad_deg: f64,
    pub se_tlhad_deg: f64,
    /// Root of the single-snapshot hybrid bound with matched steering.
    pub crlb_had_deg: f64,
    pub crlb_had_broadside_deg: f64,
    pub crlb_tlhad_deg: f64,
    pub crlb_tlhad_broadside_deg: f64,
    /// Fraction of trials more than a quarter candidate period off.
    pub outliers_classic: f64,
    pub outliers_fhad: f64,
    pub outliers_tlhad: f64,
    pub snapshots_classic: f64,
    pub snapshots_fhad: f64,
    pub snapshots_tlhad: f64,
    pub n_total: usize,
    pub m_sub: usize,
    pub n_fd: usize,
    pub trials: usize,
    pub seed: u64,
    pub config_digest: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RmseEtaRow {
    pub eta_requested: f64,
    pub eta: f64,
    pub n_fd: usize,
    pub k_sub: usize,
    pub rounded: bool,
    pub snr_db: f64,
    pub theta_lo_deg: f64,
    pub theta_hi_deg: f64,
    pub rmse_tlhad_deg: f64,
    pub se_tlhad_deg: f64,
    pub crlb_tlhad_deg: f64,
    pub crlb_tlhad_broadside_deg: f64,
    /// `rmse_tlhad_deg / crlb_tlhad_deg`.
    pub efficiency_ratio: f64,
    pub outliers_tlhad: f64,
    pub n_total: usize,
    pub m_sub: usize,
    pub trials: usize,
    pub seed: u64,
    pub config_digest: String,
}

/// Trial directions: a fixed direction must clear the analog null, a range
/// redraws until it does.
fn trial_directions(cfg: &ExperimentConfig, key: u64, hybrid: bool) -> Result<Vec<f64>> {
    let ok = |theta: f64| !hybrid || broadside_gain_ratio(cfg.array.m_sub, cfg.array.spacing, theta) >= MIN_GAIN_RATIO;
    if cfg.scenario.theta_range_deg.is_empty() {
        let theta = cfg.scenario.theta_deg;
        if !ok(theta) {
            return config(format!(
                "theta = {theta} deg lies within an analog null of the broadside subarrays (|g| < {MIN_GAIN_RATIO} sqrt(M))"
            ));
        }
        return Ok(vec![theta; cfg.trials]);
    }
    let mut out = Vec::with_capacity(cfg.trials);
    let mut draw = 0u64;
    while out.len() < cfg.trials {
        let theta = trial_theta(cfg, key, draw);
        draw += 1;
        if ok(theta) {
            out.push(theta);
        }
        if draw > 1000 * cfg.trials as u64 {
            return config("theta range lies entirely within analog nulls");
        }
    }
    Ok(out)
}

fn theta_bounds(cfg: &ExperimentConfig) -> (f64, f64) {
    match cfg.scenario.theta_range_deg.as_slice() {
        [lo, hi] => (*lo, *hi),
        _ => (cfg.scenario.theta_deg, cfg.scenario.theta_deg),
    }
}

fn scenario(cfg: &ExperimentConfig, theta: f64, snr_db: f64) -> EmitterScenario {
    EmitterScenario {
        emitters: vec![Emitter { direction_deg: theta, power: db_to_linear(snr_db) }],
        noise_power: 1.0,
        n_snapshots: cfg.scenario.snapshots,
        signal_model: cfg.scenario.signal_model,
    }
}

struct Errors {
    deg: Vec<f64>,
    outliers: usize,
    snapshots: usize,
}

impl Errors {
    fn new(n: usize) -> Self {
        Self { deg: Vec::with_capacity(n), outliers: 0, snapshots: 0 }
    }

    fn push(&mut self, est: &DoaEstimate, theta: f64, period: f64) {
        self.deg.push(est.degrees - theta);
        if (est.u - deg_to_u(theta)).abs() > period / 4.0 {
            self.outliers += 1;
        }
        self.snapshots += est.snapshots_consumed;
    }

    fn rates(&self) -> (f64, f64) {
        let n = self.deg.len() as f64;
        (self.outliers as f64 / n, self.snapshots as f64 / n)
    }
}

/// Root of the mean bound over the trial directions, in degrees.
fn mean_bound_deg<F: Fn(f64) -> Result<f64>>(thetas: &[f64], bound: F) -> Result<f64> {
    let mut sum = 0.0;
    for &t in thetas {
        sum += bound(t)?;
    }
    Ok((sum / thetas.len() as f64).sqrt().to_degrees())
}

/// RMSE versus SNR of classic hybrid Root-MUSIC and the two-snapshot method
/// on the pure hybrid array, and of the two-layer estimator on the
/// configured `eta`. All three see the same realizations: trial `t` draws
/// from stream `t` at every SNR.
pub fn run_rmse_snr(cfg: &ExperimentConfig) -> Result<Vec<RmseSnrRow>> {
    cfg.validate()?;
    let a = &cfg.array;
    if !a.n_total.is_multiple_of(a.m_sub) {
        return config(format!("N = {} is not a whole number of {}-antenna subarrays", a.n_total, a.m_sub));
    }
    let hybrid = ArrayConfig::hybrid(a.n_total / a.m_sub, a.m_sub).with_spacing(a.spacing);
    let (two_layer, _) = cfg.two_layer_array(a.eta)?;
    let thetas = trial_directions(cfg, rng::derive_key(cfg.seed, "rmse/theta"), true)?;
    let key = rng::derive_key(cfg.seed, "rmse-snr");
    let period = 1.0 / (a.m_sub as f64 * a.spacing);
    let (lo, hi) = theta_bounds(cfg);
    let digest = cfg.digest();
    let t = cfg.scenario.snapshots;

    cfg.scenario
        .snr_db
        .iter()
        .map(|&snr_db| {
            let per_trial: Vec<[DoaEstimate; 3]> = thetas
                .par_iter()
                .enumerate()
                .map(|(i, &theta)| {
                    let scen = scenario(cfg, theta, snr_db);
                    let i = i as u64;
                    Ok([
                        had_root_music_classic(&hybrid, &scen, &mut rng::stream(key, i))?,
                        fhad_root_music(&hybrid, &scen, &mut rng::stream(key, i))?,
                        tlhad_estimate(&two_layer, &scen, &mut rng::stream(key, i))?,
                    ])
                })
                .collect::<Result<_>>()?;
            let mut errs = [Errors::new(cfg.trials), Errors::new(cfg.trials), Errors::new(cfg.trials)];
            for (est, &theta) in per_trial.iter().zip(&thetas) {
                for (e, x) in errs.iter_mut().zip(est) {
                    e.push(x, theta, period);
                }
            }
            let [c, f, tl] = &errs;
            let (rc, sc) = rmse_with_se(&c.deg);
            let (rf, sf) = rmse_with_se(&f.deg);
            let (rt, st) = rmse_with_se(&tl.deg);
            Ok(RmseSnrRow {
                snr_db,
                theta_lo_deg: lo,
                theta_hi_deg: hi,
                rmse_classic_deg: rc,
                se_classic_deg: sc,
                rmse_fhad_deg: rf,
                se_fhad_deg: sf,
                rmse_tlhad_deg: rt,
                se_tlhad_deg: st,
                crlb_had_deg: mean_bound_deg(&thetas, |th| crlb_had(&hybrid, th, snr_db, 1, None))?,
                crlb_had_broadside_deg: mean_bound_deg(&thetas, |th| crlb_had(&hybrid, th, snr_db, 1, Some(0.0)))?,
                crlb_tlhad_deg: mean_bound_deg(&thetas, |th| crlb_tlhad(&two_layer, th, snr_db, t, None))?,
                crlb_tlhad_broadside_deg: mean_bound_deg(&thetas, |th| {
                    crlb_tlhad(&two_layer, th, snr_db, t, Some(0.0))
                })?,
                outliers_classic: c.rates().0,
                outliers_fhad: f.rates().0,
                outliers_tlhad: tl.rates().0,
                snapshots_classic: c.rates().1,
                snapshots_fhad: f.rates().1,
                snapshots_tlhad: tl.rates().1,
                n_total: a.n_total,
                m_sub: a.m_sub,
                n_fd: two_layer.n_fd,
                trials: cfg.trials,
                seed: cfg.seed,
                config_digest: digest.clone(),
            })
        })
        .collect()
}

/// Two-layer RMSE over the `sweep.eta` grid at every configured SNR, on
/// common realizations across the grid.
pub fn run_rmse_eta(cfg: &ExperimentConfig) -> Result<Vec<RmseEtaRow>> {
    cfg.validate()?;
    let a = &cfg.array;
    let key = rng::derive_key(cfg.seed, "rmse-eta");
    let period = 1.0 / (a.m_sub as f64 * a.spacing);
    let (lo, hi) = theta_bounds(cfg);
    let digest = cfg.digest();
    let t = cfg.scenario.snapshots;
    let any_hybrid = cfg
        .sweep
        .eta
        .iter()
        .map(|&eta| cfg.two_layer_array(eta).map(|(c, _)| c.k_sub > 0))
        .collect::<Result<Vec<_>>>()?
        .contains(&true);
    let thetas = trial_directions(cfg, rng::derive_key(cfg.seed, "rmse/theta"), any_hybrid)?;

    let mut rows = Vec::new();
    for &eta in &cfg.sweep.eta {
        let (array, rounded) = cfg.two_layer_array(eta)?;
        for &snr_db in &cfg.scenario.snr_db {
            let ests: Vec<DoaEstimate> = thetas
                .par_iter()
                .enumerate()
                .map(|(i, &theta)| tlhad_estimate(&array, &scenario(cfg, theta, snr_db), &mut rng::stream(key, i as u64)))
                .collect::<Result<_>>()?;
            let mut errs = Errors::new(cfg.trials);
            for (e, &theta) in ests.iter().zip(&thetas) {
                errs.push(e, theta, period);
            }
            let (rmse, se) = rmse_with_se(&errs.deg);
            let bound = mean_bound_deg(&thetas, |th| crlb_tlhad(&array, th, snr_db, t, None))?;
            rows.push(RmseEtaRow {
                eta_requested: eta,
                eta: array.fd_proportion(),
                n_fd: array.n_fd,
                k_sub: array.k_sub,
                rounded,
                snr_db,
                theta_lo_deg: lo,
                theta_hi_deg: hi,
                rmse_tlhad_deg: rmse,
                se_tlhad_deg: se,
                crlb_tlhad_deg: bound,
                crlb_tlhad_broadside_deg: mean_bound_deg(&thetas, |th| crlb_tlhad(&array, th, snr_db, t, Some(0.0)))?,
                efficiency_ratio: rmse / bound,
                outliers_tlhad: errs.rates().0,
                n_total: a.n_total,
                m_sub: a.m_sub,
                trials: cfg.trials,
                seed: cfg.seed,
                config_digest: digest.clone(),
            });
        }
    }
    Ok(rows)
}

pub(super) fn write_snr(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Vec<PathBuf>> {
    let rows = run_rmse_snr(cfg)?;
    Ok(vec![write_csv(&opts.out_dir.join("rmse_snr.csv"), &rows)?])
}

pub(super) fn write_eta(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Vec<PathBuf>> {
    let rows = run_rmse_eta(cfg)?;
    Ok(vec![write_csv(&opts.out_dir.join("rmse_eta.csv"), &rows)?])
}
