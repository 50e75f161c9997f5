//! Glue between the corpus, the model, and the evaluation protocol:
//! building a model from a run config, training on a corpus, scoring
//! videos, and formatting metrics artifacts.

use std::fmt::Write as _;

use thiserror::Error;

use crate::adam::AdamConfig;
use crate::checkpoint::CheckpointMeta;
use crate::config::RunConfig;
use crate::eval::{self, EvalError, EvalReport};
use crate::extractor::ExtractorConfig;
use crate::model::{self, CausalModel, EpochMetrics, Example, ModelConfig, ModelError, TrainConfig};
use crate::synth::Corpus;

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("corpus has no labeled frames to train on")]
    NoTrainingData,
    #[error("effect estimation needs a confounded corpus with a stored oracle")]
    NoOracle,
}

/// Data dimensions + run settings, as echoed into checkpoints.
pub fn checkpoint_meta(run: &RunConfig, corpus: &Corpus) -> CheckpointMeta {
    CheckpointMeta {
        run: run.clone(),
        d_x: if run.multimodal { 64 } else { corpus.cfg.d_v },
        d_v: corpus.cfg.d_v,
        k_classes: corpus.cfg.k_classes,
        vocab_size: corpus.cfg.vocab_size,
    }
}

pub fn model_config(meta: &CheckpointMeta) -> ModelConfig {
    let run = &meta.run;
    ModelConfig {
        d_x: meta.d_x,
        d_z: run.d_z,
        k_classes: meta.k_classes,
        hidden: run.hidden,
        analytic_kl: !run.mc_kl,
        sigmoid_variance: false,
        stop_helper_gradient: false,
        multimodal: run.multimodal,
        extractor: ExtractorConfig {
            vocab_size: meta.vocab_size,
            d_v: meta.d_v,
            d_x: meta.d_x,
            kappa: if run.kappa == 0 { None } else { Some(run.kappa) },
            single_stage: run.single_stage,
            ..ExtractorConfig::default()
        },
    }
}

pub fn build_model(meta: &CheckpointMeta) -> CausalModel {
    CausalModel::new(model_config(meta), meta.run.seed)
}

pub fn train_config(run: &RunConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: run.epochs,
        batch_size: run.batch_size,
        adam: AdamConfig {
            learning_rate: run.learning_rate,
            beta1: run.beta1,
            beta2: run.beta2,
            epsilon: run.epsilon,
        },
        seed,
    }
}

/// Labeled training examples, restricted to `video_ids` when given, with
/// weak-supervision label replacement when configured.
pub fn training_examples(
    corpus: &Corpus,
    run: &RunConfig,
    video_ids: Option<&[u32]>,
) -> Vec<Example> {
    let mut examples = corpus.training_examples();
    if let Some(ids) = video_ids {
        examples.retain(|e| ids.contains(&e.video_id));
    }
    if run.weak_supervision {
        for e in &mut examples {
            let v = &corpus.videos[e.video_id as usize];
            let weak = eval::weak_frame_labels(&v.gt_scores, run.seg_len);
            e.y = weak[e.frame_index].min(corpus.cfg.k_classes - 1);
        }
    }
    examples
}

/// Trains a fresh model on the corpus; returns it with per-epoch metrics.
pub fn train_on_corpus(
    corpus: &Corpus,
    run: &RunConfig,
    video_ids: Option<&[u32]>,
    seed: u64,
) -> Result<(CausalModel, Vec<EpochMetrics>), RunnerError> {
    let examples = training_examples(corpus, run, video_ids);
    if examples.is_empty() && run.epochs > 0 {
        return Err(RunnerError::NoTrainingData);
    }
    let meta = checkpoint_meta(run, corpus);
    let mut model = build_model(&meta);
    let metrics = model::train(&mut model, &examples, &train_config(run, seed))?;
    Ok((model, metrics))
}

/// Model frame scores for every frame of one video.
pub fn score_video(
    model: &CausalModel,
    corpus: &Corpus,
    video_id: u32,
) -> Result<Vec<f64>, ModelError> {
    corpus
        .video_examples(video_id)
        .iter()
        .map(|ex| model.frame_score(ex))
        .collect()
}

/// Five-split evaluation with a fixed pre-trained model.
pub fn evaluate_with_model(
    corpus: &Corpus,
    model: &CausalModel,
    run: &RunConfig,
) -> Result<EvalReport, RunnerError> {
    let report = eval::evaluate_splits(
        corpus,
        |_c, _train_ids, _seed| {
            let m = &model;
            Ok(move |c2: &Corpus, vid: u32| {
                score_video(m, c2, vid).map_err(|e| EvalError::Train(e.to_string()))
            })
        },
        run.splits,
        run.budget_fraction,
        run.seg_len,
        run.seed,
    )?;
    Ok(report)
}

/// Five-split evaluation retraining a fresh model per split.
pub fn evaluate_with_retraining(
    corpus: &Corpus,
    run: &RunConfig,
) -> Result<EvalReport, RunnerError> {
    let report = eval::evaluate_splits(
        corpus,
        |c, train_ids, split_seed| {
            let (model, _) = train_on_corpus(c, run, Some(train_ids), split_seed)
                .map_err(|e| EvalError::Train(e.to_string()))?;
            Ok(move |c2: &Corpus, vid: u32| {
                score_video(&model, c2, vid).map_err(|e| EvalError::Train(e.to_string()))
            })
        },
        run.splits,
        run.budget_fraction,
        run.seg_len,
        run.seed,
    )?;
    Ok(report)
}

/// ATE estimate over a deterministic sample of labeled frames.
pub fn estimate_corpus_effect(
    model: &CausalModel,
    corpus: &Corpus,
    run: &RunConfig,
    max_frames: usize,
    n_samples: usize,
) -> Result<f64, RunnerError> {
    let mut xs = corpus.training_examples();
    xs.truncate(max_frames);
    if xs.is_empty() {
        return Err(RunnerError::NoTrainingData);
    }
    Ok(model.estimate_effect(&xs, n_samples, run.seed)?)
}

pub const METRICS_HEADER: &str =
    "epoch,total,helper_t,helper_y,recon_x,likelihood_t,likelihood_y,kl_z,helper_t_acc,helper_y_acc";

pub fn metrics_csv(metrics: &[EpochMetrics]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for m in metrics {
        let l = &m.loss;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            m.epoch,
            l.total,
            l.helper_t,
            l.helper_y,
            l.recon_x,
            l.likelihood_t,
            l.likelihood_y,
            l.kl_z,
            l.helper_t_acc,
            l.helper_y_acc
        )
        .unwrap();
    }
    out
}

pub fn report_table(report: &EvalReport) -> String {
    let mut out = String::from("split_id,f1,baseline_f1\n");
    for s in &report.splits {
        writeln!(out, "{},{},{}", s.split_id, s.f1, s.baseline_f1).unwrap();
    }
    writeln!(out, "mean,{},{}", report.mean_f1, report.mean_baseline_f1).unwrap();
    out
}
