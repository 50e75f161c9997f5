//! Summary selection and evaluation: frame scores to two-second segment
//! scores, budget-constrained knapsack selection, F1 against ground truth,
//! and the five-split protocol with a random-summary baseline.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::synth::Corpus;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no frame scores given")]
    EmptyInput,
    #[error("segment length must be positive")]
    BadSegmentLength,
    #[error("non-finite frame score at index {0}")]
    NonFiniteScore(usize),
    #[error("selections cover different segmentations: {a} vs {b} segments")]
    SegmentationMismatch { a: usize, b: usize },
    #[error("need at least {k} videos for {k} splits, corpus has {n}")]
    CorpusTooSmall { k: usize, n: usize },
    #[error("budget fraction must lie in (0, 1], got {0}")]
    BadBudgetFraction(f64),
    #[error("training failed: {0}")]
    Train(String),
}

/// Per-segment mean scores; the last segment may cover fewer frames.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentScores {
    pub scores: Vec<f64>,
    pub segment_length_frames: usize,
    pub frame_counts: Vec<usize>,
}

impl SegmentScores {
    pub fn n_frames(&self) -> usize {
        self.frame_counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SummarySelection {
    pub selected: Vec<bool>,
    pub budget_frames: usize,
    pub total_selected_frames: usize,
}

pub fn segment_scores(frame_scores: &[f64], seg_len: usize) -> Result<SegmentScores, EvalError> {
    if frame_scores.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    if seg_len == 0 {
        return Err(EvalError::BadSegmentLength);
    }
    if let Some(i) = frame_scores.iter().position(|s| !s.is_finite()) {
        return Err(EvalError::NonFiniteScore(i));
    }
    let mut scores = Vec::new();
    let mut frame_counts = Vec::new();
    for chunk in frame_scores.chunks(seg_len) {
        scores.push(chunk.iter().sum::<f64>() / chunk.len() as f64);
        frame_counts.push(chunk.len());
    }
    Ok(SegmentScores { scores, segment_length_frames: seg_len, frame_counts })
}

/// Exact 0/1 knapsack over segments: maximize total selected segment score
/// with total selected frames within budget. Ties prefer the selection
/// that includes the lowest segment index.
pub fn select_summary(seg: &SegmentScores, budget_frames: usize) -> SummarySelection {
    let n = seg.scores.len();
    // best[i][b] = max achievable value over segments i.. with budget b
    let mut best = vec![vec![0.0f64; budget_frames + 1]; n + 1];
    for i in (0..n).rev() {
        let cost = seg.frame_counts[i];
        for b in 0..=budget_frames {
            let skip = best[i + 1][b];
            best[i][b] = if cost <= b {
                let take = seg.scores[i] + best[i + 1][b - cost];
                if take >= skip { take } else { skip }
            } else {
                skip
            };
        }
    }
    // forward reconstruction: taking whenever value permits prefers
    // lower-indexed segments on ties
    let mut selected = vec![false; n];
    let mut b = budget_frames;
    let mut total = 0usize;
    for i in 0..n {
        let cost = seg.frame_counts[i];
        if cost <= b && seg.scores[i] + best[i + 1][b - cost] >= best[i + 1][b] {
            selected[i] = true;
            b -= cost;
            total += cost;
        }
    }
    SummarySelection { selected, budget_frames, total_selected_frames: total }
}

/// F1 on selected frames; 0 when either selection is empty.
pub fn f1(
    pred: &SummarySelection,
    gt: &SummarySelection,
    frame_counts: &[usize],
) -> Result<f64, EvalError> {
    if pred.selected.len() != gt.selected.len() || pred.selected.len() != frame_counts.len() {
        return Err(EvalError::SegmentationMismatch {
            a: pred.selected.len(),
            b: gt.selected.len().min(frame_counts.len()),
        });
    }
    let mut overlap = 0usize;
    let mut pred_frames = 0usize;
    let mut gt_frames = 0usize;
    for ((p, g), &c) in pred.selected.iter().zip(&gt.selected).zip(frame_counts) {
        if *p {
            pred_frames += c;
        }
        if *g {
            gt_frames += c;
        }
        if *p && *g {
            overlap += c;
        }
    }
    if pred_frames == 0 || gt_frames == 0 {
        return Ok(0.0);
    }
    let p = overlap as f64 / pred_frames as f64;
    let r = overlap as f64 / gt_frames as f64;
    if p + r == 0.0 {
        Ok(0.0)
    } else {
        Ok(2.0 * p * r / (p + r))
    }
}

/// Segment-level means broadcast back to frames and rounded to the nearest
/// class: the weak-supervision label transform.
pub fn weak_frame_labels(gt_scores: &[usize], seg_len: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(gt_scores.len());
    for chunk in gt_scores.chunks(seg_len.max(1)) {
        let mean = chunk.iter().sum::<usize>() as f64 / chunk.len() as f64;
        let label = mean.round() as usize;
        out.extend(std::iter::repeat_n(label, chunk.len()));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitResult {
    pub split_id: usize,
    pub f1: f64,
    pub baseline_f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub splits: Vec<SplitResult>,
    pub mean_f1: f64,
    pub mean_baseline_f1: f64,
}

pub const DEFAULT_SEG_LEN: usize = 2;
pub const DEFAULT_BUDGET_FRACTION: f64 = 0.15;

pub fn video_budget(n_frames: usize, budget_fraction: f64) -> usize {
    (budget_fraction * n_frames as f64).round() as usize
}

/// Summary F1 of model frame scores against ground-truth scores pushed
/// through the identical segmentation + knapsack pipeline.
pub fn summary_f1(
    model_scores: &[f64],
    gt_scores: &[f64],
    seg_len: usize,
    budget_fraction: f64,
) -> Result<f64, EvalError> {
    let seg_pred = segment_scores(model_scores, seg_len)?;
    let seg_gt = segment_scores(gt_scores, seg_len)?;
    let budget = video_budget(model_scores.len(), budget_fraction);
    let pred = select_summary(&seg_pred, budget);
    let gt = select_summary(&seg_gt, budget);
    f1(&pred, &gt, &seg_pred.frame_counts)
}

/// k independent seeded 80/20 splits. `train_fn(corpus, train_ids, seed)`
/// returns a per-video frame scorer; the random baseline pushes uniform
/// segment scores through the same knapsack with the same seeds.
pub fn evaluate_splits<F, S>(
    corpus: &Corpus,
    mut train_fn: F,
    k: usize,
    budget_fraction: f64,
    seg_len: usize,
    seed: u64,
) -> Result<EvalReport, EvalError>
where
    F: FnMut(&Corpus, &[u32], u64) -> Result<S, EvalError>,
    S: Fn(&Corpus, u32) -> Result<Vec<f64>, EvalError>,
{
    let n = corpus.videos.len();
    if n < k || k == 0 {
        return Err(EvalError::CorpusTooSmall { k, n });
    }
    if !(budget_fraction > 0.0 && budget_fraction <= 1.0) {
        return Err(EvalError::BadBudgetFraction(budget_fraction));
    }
    let mut splits = Vec::with_capacity(k);
    for split_id in 0..k {
        let split_seed = seed.wrapping_add(split_id as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(split_seed);
        let mut ids: Vec<u32> = (0..n as u32).collect();
        // Fisher-Yates via the seeded stream
        for i in (1..ids.len()).rev() {
            let j = rng.random_range(0..=i);
            ids.swap(i, j);
        }
        let n_test = (n as f64 * 0.2).round().max(1.0) as usize;
        let (test_ids, train_ids) = ids.split_at(n_test);

        let scorer = train_fn(corpus, train_ids, split_seed)?;

        let mut f1_sum = 0.0;
        let mut base_sum = 0.0;
        for &vid in test_ids {
            let video = &corpus.videos[vid as usize];
            let gt: Vec<f64> = video.gt_scores.iter().map(|&y| y as f64).collect();
            let model_scores = scorer(corpus, vid)?;
            f1_sum += summary_f1(&model_scores, &gt, seg_len, budget_fraction)?;
            let random_scores: Vec<f64> =
                (0..video.frames.len()).map(|_| rng.random::<f64>()).collect();
            base_sum += summary_f1(&random_scores, &gt, seg_len, budget_fraction)?;
        }
        splits.push(SplitResult {
            split_id,
            f1: f1_sum / test_ids.len() as f64,
            baseline_f1: base_sum / test_ids.len() as f64,
        });
    }
    let mean_f1 = splits.iter().map(|s| s.f1).sum::<f64>() / k as f64;
    let mean_baseline_f1 = splits.iter().map(|s| s.baseline_f1).sum::<f64>() / k as f64;
    Ok(EvalReport { splits, mean_f1, mean_baseline_f1 })
}
