use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{train, Activation, MlnnModel, TrainHyper, TrainingSet};
use crate::detect::auc;
use crate::error::{contract, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionStage {
    Activation,
    Shape,
    Final,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub stage: SelectionStage,
    pub activation: Activation,
    pub hidden: Vec<usize>,
    pub weight_count: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_auc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub candidates: Vec<CandidateScore>,
    pub activation: Activation,
    pub hidden: Vec<usize>,
    pub weight_count: usize,
    pub final_dataset_size: usize,
    /// `final_dataset_size / weight_count`, within `[5, 10]`.
    pub size_ratio: f64,
}

fn fit(
    stage: SelectionStage,
    activation: Activation,
    hidden: &[usize],
    train_set: &TrainingSet,
    val: &TrainingSet,
    hyper: &TrainHyper,
) -> Result<(MlnnModel, CandidateScore)> {
    let label = format!("{activation:?}{hidden:?}");
    let seed = rng::derive_key(hyper.seed, &label);
    let mut model = MlnnModel::new(train_set.inputs(), hidden, activation, seed)?;
    model.fit_input_scaling(train_set);
    let (model, history) = train(&model, train_set, &TrainHyper { seed, ..hyper.clone() })?;
    let scores = model.scores(val)?;
    let (h0, h1) = val.split_scores(&scores);
    let score = CandidateScore {
        stage,
        activation,
        hidden: hidden.to_vec(),
        weight_count: model.weight_count(),
        train_loss: *history.last().unwrap(),
        val_loss: model.mean_loss(val, hyper.loss)?,
        val_auc: auc(&h0, &h1),
    };
    Ok((model, score))
}

fn best(scores: &[CandidateScore]) -> usize {
    let mut b = 0;
    for (i, s) in scores.iter().enumerate() {
        if s.val_loss < scores[b].val_loss {
            b = i;
        }
    }
    b
}

/// Three-stage architecture search.
///
/// 1. Every activation is trained on the smallest candidate shape; the
///    lowest validation loss wins.
/// 2. Every shape is trained with that activation; lowest validation loss
///    wins.
/// 3. The winner is retrained from scratch on `final_data(n)` with
///    `n = round(final_ratio * W)`, `W` its weight count.
///
/// Candidates within a stage train in parallel, each from a seed derived
/// from `hyper.seed` and its label, so the outcome does not depend on
/// scheduling.
pub fn select_architecture<F>(
    activations: &[Activation],
    shapes: &[Vec<usize>],
    train_set: &TrainingSet,
    val: &TrainingSet,
    hyper: &TrainHyper,
    final_ratio: f64,
    final_data: F,
) -> Result<(MlnnModel, SelectionReport)>
where
    F: FnOnce(usize) -> Result<TrainingSet>,
{
    if activations.is_empty() || shapes.is_empty() {
        return contract("candidate activation and shape lists must be nonempty");
    }
    if !(5.0..=10.0).contains(&final_ratio) {
        return contract(format!("final dataset ratio {final_ratio} outside [5, 10]"));
    }
    let inputs = train_set.inputs();
    let size = |h: &Vec<usize>| MlnnModel::zeros(inputs, h, Activation::Sigmoid).map(|m| m.weight_count());
    let sizes: Vec<usize> = shapes.iter().map(size).collect::<Result<_>>()?;
    let small = &shapes[(0..shapes.len()).min_by_key(|&i| sizes[i]).unwrap()];

    let stage1: Vec<CandidateScore> = activations
        .par_iter()
        .map(|&a| fit(SelectionStage::Activation, a, small, train_set, val, hyper).map(|r| r.1))
        .collect::<Result<_>>()?;
    let activation = stage1[best(&stage1)].activation;

    let stage2: Vec<CandidateScore> = shapes
        .par_iter()
        .map(|h| fit(SelectionStage::Shape, activation, h, train_set, val, hyper).map(|r| r.1))
        .collect::<Result<_>>()?;
    let hidden = stage2[best(&stage2)].hidden.clone();

    let w = size(&hidden)?;
    let n = (final_ratio * w as f64).round() as usize;
    let final_set = final_data(n)?;
    let ratio = final_set.len() as f64 / w as f64;
    if !(5.0..=10.0).contains(&ratio) {
        return contract(format!("final dataset has {} examples for {w} weights", final_set.len()));
    }
    let (model, last) = fit(SelectionStage::Final, activation, &hidden, &final_set, val, hyper)?;

    let mut candidates = stage1;
    candidates.extend(stage2);
    candidates.push(last);
    let report = SelectionReport {
        candidates,
        activation,
        hidden,
        weight_count: w,
        final_dataset_size: final_set.len(),
        size_ratio: ratio,
    };
    Ok((model, report))
}
