use std::path::PathBuf;

use serde::Serialize;

use super::{write_csv, ExperimentConfig, RunOptions};
use crate::detect::{auc, min_trials, Detector};
use crate::error::{config, Error, Result};
use crate::mlnn::{decision_threshold, select_architecture, DatasetSpec, MlnnModel, SelectionReport, TrainHyper};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainReportRow {
    pub stage: String,
    pub activation: String,
    pub hidden: String,
    pub weight_count: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_auc: f64,
    pub chosen: bool,
    pub seed: u64,
    pub config_digest: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainSummaryRow {
    pub activation: String,
    pub hidden: String,
    pub weight_count: usize,
    pub final_dataset_size: usize,
    pub size_ratio: f64,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub target_fap: f64,
    pub threshold: f64,
    /// AUCs on a fresh set used neither for training nor for selection.
    pub mlnn_auc: f64,
    pub glrt_auc: f64,
    pub fresh_set_size: usize,
    pub snr_db: f64,
    pub n: usize,
    pub l: usize,
    pub seed: u64,
    pub config_digest: String,
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub model: MlnnModel,
    pub selection: SelectionReport,
    pub report: Vec<TrainReportRow>,
    pub summary: TrainSummaryRow,
}

fn hidden_label(h: &[usize]) -> String {
    h.iter().map(|w| w.to_string()).collect::<Vec<_>>().join("x")
}

fn dataset(cfg: &ExperimentConfig, purpose: &str) -> DatasetSpec {
    DatasetSpec {
        n_elements: cfg.array.n_total,
        n_snapshots: cfg.scenario.snapshots,
        snr_db: cfg.scenario.snr_db[0],
        snr_jitter_db: cfg.mlnn.snr_jitter_db,
        signal_model: cfg.scenario.signal_model,
        seed: rng::derive_key(cfg.seed, purpose),
    }
}

/// Architecture search, final training and threshold calibration on
/// simulated eigenvalue features at the first configured SNR.
///
/// The threshold is the `1 - target_fap` quantile of MLNN scores on the H0
/// half of a fresh set; the same set reports MLNN and GLRT AUC.
pub fn run_train_mlnn(cfg: &ExperimentConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    let m = &cfg.mlnn;
    if m.train_size < 2 || m.val_size < 2 {
        return config("mlnn.train_size and mlnn.val_size must be at least 2");
    }
    let train_set = dataset(cfg, "mlnn/train").simulate(m.train_size)?;
    let val_set = dataset(cfg, "mlnn/val").simulate(m.val_size)?;
    let hyper = TrainHyper { seed: rng::derive_key(cfg.seed, "mlnn/init"), ..m.training.clone() };
    let (mut model, selection) = select_architecture(
        &m.activations,
        &m.shapes,
        &train_set,
        &val_set,
        &hyper,
        m.final_ratio,
        |n| dataset(cfg, "mlnn/final").simulate(n),
    )?;

    let fresh_size = (2 * min_trials(m.target_fap)).max(m.val_size);
    let fresh = dataset(cfg, "mlnn/fresh").simulate(fresh_size)?;
    let (h0, h1) = fresh.split_scores(&model.scores(&fresh)?);
    let threshold = decision_threshold(&h0, m.target_fap)?;
    model.metadata.threshold = Some(threshold);
    model.metadata.target_fap = Some(m.target_fap);
    let glrt = Detector::Glrt(cfg.detection.glrt_form);
    let glrt_scores: Vec<f64> = fresh.features.iter().map(|x| glrt.statistic(x).value).collect();
    let (g0, g1) = fresh.split_scores(&glrt_scores);

    let digest = cfg.digest();
    let last = selection.candidates.len() - 1;
    let report = selection
        .candidates
        .iter()
        .enumerate()
        .map(|(i, c)| TrainReportRow {
            stage: format!("{:?}", c.stage).to_lowercase(),
            activation: format!("{:?}", c.activation).to_lowercase(),
            hidden: hidden_label(&c.hidden),
            weight_count: c.weight_count,
            train_loss: c.train_loss,
            val_loss: c.val_loss,
            val_auc: c.val_auc,
            chosen: i == last,
            seed: cfg.seed,
            config_digest: digest.clone(),
        })
        .collect();
    let history = &model.metadata.loss_history;
    let summary = TrainSummaryRow {
        activation: format!("{:?}", selection.activation).to_lowercase(),
        hidden: hidden_label(&selection.hidden),
        weight_count: selection.weight_count,
        final_dataset_size: selection.final_dataset_size,
        size_ratio: selection.size_ratio,
        initial_loss: history[0],
        final_loss: *history.last().unwrap(),
        target_fap: m.target_fap,
        threshold,
        mlnn_auc: auc(&h0, &h1),
        glrt_auc: auc(&g0, &g1),
        fresh_set_size: fresh.len(),
        snr_db: cfg.scenario.snr_db[0],
        n: cfg.array.n_total,
        l: cfg.scenario.snapshots,
        seed: cfg.seed,
        config_digest: digest,
    };
    Ok(TrainOutput { model, selection, report, summary })
}

#[derive(Serialize)]
struct FailureRow {
    epoch: usize,
    loss: f64,
    seed: u64,
    config_digest: String,
}

pub(super) fn write(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Vec<PathBuf>> {
    let out = match run_train_mlnn(cfg) {
        Ok(out) => out,
        Err(Error::Training { epoch, history }) => {
            let rows: Vec<FailureRow> = history
                .iter()
                .enumerate()
                .map(|(e, &loss)| FailureRow { epoch: e, loss, seed: cfg.seed, config_digest: cfg.digest() })
                .collect();
            write_csv(&opts.out_dir.join("train_failure.csv"), &rows)?;
            return Err(Error::Training { epoch, history });
        }
        Err(e) => return Err(e),
    };
    let model_path = opts.model_path();
    if let Some(parent) = model_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    out.model.save(&model_path)?;
    Ok(vec![
        model_path,
        write_csv(&opts.out_dir.join("train_report.csv"), &out.report)?,
        write_csv(&opts.out_dir.join("train_summary.csv"), &[out.summary])?,
    ])
}
