//! Synthetic intervention corpus.
//!
//! Generates feature-space "videos" driven by a hidden confounder z*,
//! assigns blur / salt-and-pepper / word-drop interventions, and (in
//! confounded mode) carries a Monte-Carlo ground-truth treatment effect
//! so effect recovery can be scored against an oracle.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::{Read as _, Write as _};
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::sigmoid_scalar;
use crate::model::Example;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("operation requires {required:?} mode, corpus is {actual:?}")]
    ModeMismatch { required: CorpusMode, actual: CorpusMode },
    #[error("unknown intervention kind for this operation: {0}")]
    UnknownKind(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("corpus metadata: {0}")]
    Metadata(#[from] serde_json::Error),
    #[error("corrupt corpus file {file}: {reason}")]
    CorruptFile { file: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusMode {
    /// random 50%/30% intervention assignment, outcome independent of t
    PaperProtocol,
    /// propensity-driven t with a structural t -> y effect and an oracle
    Confounded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterventionKind {
    Blur,
    SaltPepper,
    WordDrop,
    None,
}

impl fmt::Display for InterventionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            InterventionKind::Blur => "blur",
            InterventionKind::SaltPepper => "salt_pepper",
            InterventionKind::WordDrop => "word_drop",
            InterventionKind::None => "none",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterventionRecord {
    pub video_id: u32,
    pub frame_index: usize,
    pub t: u8,
    pub kind: InterventionKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_videos: usize,
    pub frames_min: usize,
    pub frames_max: usize,
    pub d_v: usize,
    pub k_classes: usize,
    pub d_z: usize,
    /// consecutive frames sharing one z* draw
    pub z_block_len: usize,
    pub vocab_size: usize,
    pub query_len_min: usize,
    pub query_len_max: usize,
    pub mode: CorpusMode,
    /// feature noise scale in x = A z* + noise
    pub noise_x: f64,
    /// outcome noise scale
    pub noise_y: f64,
    /// weight on the confounder direction in the outcome score
    pub b_scale: f64,
    /// structural treatment coefficient (confounded mode)
    pub c_effect: f64,
    /// propensity sharpness: p(t=1|z*) = sigmoid(gamma * b.z*)
    pub gamma: f64,
    /// explicit outcome bin edges; default derives K quantile bins from
    /// the no-treatment score marginal
    pub bin_edges: Option<Vec<f64>>,
    pub blur_window: usize,
    pub salt_pepper_rho: f64,
    pub word_drop_p: f64,
    pub video_fraction: f64,
    pub frame_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_videos: 200,
            frames_min: 60,
            frames_max: 120,
            d_v: 64,
            k_classes: 4,
            d_z: 8,
            z_block_len: 4,
            vocab_size: 100,
            query_len_min: 3,
            query_len_max: 8,
            mode: CorpusMode::PaperProtocol,
            noise_x: 0.1,
            noise_y: 0.1,
            b_scale: 1.0,
            c_effect: 0.8,
            gamma: 1.5,
            bin_edges: None,
            blur_window: 3,
            salt_pepper_rho: 0.1,
            word_drop_p: 0.2,
            video_fraction: 0.5,
            frame_fraction: 0.3,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let err = |m: &str| Err(SynthError::InvalidConfig(m.to_string()));
        if self.n_videos == 0 {
            return err("n_videos must be positive");
        }
        if self.frames_min == 0 || self.frames_min > self.frames_max {
            return err("need 0 < frames_min <= frames_max");
        }
        if self.d_v == 0 || self.d_z == 0 || self.z_block_len == 0 {
            return err("d_v, d_z, z_block_len must be positive");
        }
        if self.k_classes < 2 {
            return err("k_classes must be at least 2");
        }
        if self.vocab_size == 0 || self.query_len_min == 0 || self.query_len_min > self.query_len_max
        {
            return err("bad vocabulary/query length config");
        }
        if self.query_len_max > self.vocab_size {
            return err("query length exceeds vocabulary");
        }
        if !(0.0..=1.0).contains(&self.salt_pepper_rho)
            || !(0.0..=1.0).contains(&self.word_drop_p)
            || !(0.0..=1.0).contains(&self.video_fraction)
            || !(0.0..=1.0).contains(&self.frame_fraction)
        {
            return err("fractions must lie in [0, 1]");
        }
        if self.blur_window == 0 || self.blur_window % 2 == 0 {
            return err("blur_window must be odd and positive");
        }
        if self.noise_x < 0.0 || self.noise_y < 0.0 {
            return err("noise scales must be non-negative");
        }
        if let Some(edges) = &self.bin_edges {
            if edges.len() + 1 != self.k_classes {
                return err("bin_edges must have k_classes - 1 entries");
            }
            if edges.windows(2).any(|w| w[0] >= w[1]) {
                return err("bin_edges must be strictly increasing");
            }
        }
        Ok(())
    }

    /// Outcome bin edges: explicit, or quantiles of the t=0 score marginal
    /// N(0, b_scale^2 + noise_y^2).
    pub fn edges(&self) -> Vec<f64> {
        if let Some(e) = &self.bin_edges {
            return e.clone();
        }
        let sd = (self.b_scale * self.b_scale + self.noise_y * self.noise_y).sqrt();
        (1..self.k_classes)
            .map(|k| sd * normal_quantile(k as f64 / self.k_classes as f64))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticVideo {
    pub video_id: u32,
    pub frames: Vec<Vec<f64>>,
    pub query_tokens: Vec<usize>,
    pub gt_scores: Vec<usize>,
    /// hidden confounder per frame; oracle-only, never serialized
    pub latent_z_star: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub cfg: SynthConfig,
    pub seed: u64,
    pub videos: Vec<SyntheticVideo>,
    pub frame_records: Vec<InterventionRecord>,
    pub query_records: Vec<InterventionRecord>,
    pub oracle: Option<OracleAte>,
    /// unit confounder direction used by the generative equations;
    /// oracle-only, never serialized (empty after load)
    pub oracle_direction: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleAte {
    pub ate: f64,
    pub stderr: f64,
    pub n_mc: usize,
}

/// Moving-average blur with reflect padding, or salt-and-pepper coordinate
/// replacement at fraction rho.
pub fn visual_intervention(
    features: &[f64],
    kind: InterventionKind,
    cfg: &SynthConfig,
    rng: &mut impl Rng,
) -> Result<Vec<f64>, SynthError> {
    match kind {
        InterventionKind::Blur => Ok(blur(features, cfg.blur_window)),
        InterventionKind::SaltPepper => {
            let n = features.len();
            let count = (cfg.salt_pepper_rho * n as f64).round() as usize;
            let mut out = features.to_vec();
            if count > 0 {
                let extreme = features.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0) * 3.0;
                for idx in sample(rng, n, count.min(n)) {
                    out[idx] = if rng.random::<bool>() { extreme } else { -extreme };
                }
            }
            Ok(out)
        }
        other => Err(SynthError::UnknownKind(other.to_string())),
    }
}

fn blur(features: &[f64], window: usize) -> Vec<f64> {
    let n = features.len() as isize;
    let half = (window / 2) as isize;
    (0..n)
        .map(|i| {
            let mut acc = 0.0;
            for off in -half..=half {
                // edge values repeat past the boundaries
                let j = (i + off).clamp(0, n - 1);
                acc += features[j as usize];
            }
            acc / window as f64
        })
        .collect()
}

/// Independent token deletion with probability `p`; a random survivor is
/// force-kept if every token was dropped.
pub fn textual_intervention(tokens: &[usize], p: f64, rng: &mut impl Rng) -> Vec<usize> {
    assert!(!tokens.is_empty(), "query must have at least one token");
    let kept: Vec<usize> = tokens
        .iter()
        .copied()
        .filter(|_| rng.random::<f64>() >= p)
        .collect();
    if kept.is_empty() {
        vec![tokens[rng.random_range(0..tokens.len())]]
    } else {
        kept
    }
}

fn discretize(score: f64, edges: &[f64]) -> usize {
    edges.iter().take_while(|&&e| score >= e).count()
}

/// Generates the full corpus: videos, intervention assignment, and the
/// effect oracle in confounded mode. Pure in (cfg, seed).
pub fn generate_corpus(cfg: &SynthConfig, seed: u64) -> Result<Corpus, SynthError> {
    cfg.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    // shared generative parameters
    let a_map: Vec<f64> = (0..cfg.d_v * cfg.d_z)
        .map(|_| master.sample::<f64, _>(StandardNormal) / (cfg.d_z as f64).sqrt())
        .collect();
    let mut b_dir: Vec<f64> = (0..cfg.d_z)
        .map(|_| master.sample::<f64, _>(StandardNormal))
        .collect();
    let norm = b_dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in &mut b_dir {
        *v /= norm;
    }
    let edges = cfg.edges();

    let video_seeds: Vec<u64> = (0..cfg.n_videos).map(|_| master.random()).collect();
    let mut videos = Vec::with_capacity(cfg.n_videos);
    let mut frame_records = Vec::new();
    let mut query_records = Vec::new();

    // paper-protocol video selection happens up front so the 50% rule is
    // exact over the whole corpus
    let n_selected = (cfg.video_fraction * cfg.n_videos as f64).round() as usize;
    let selected_videos: BTreeSet<usize> = if cfg.mode == CorpusMode::PaperProtocol {
        sample(&mut master, cfg.n_videos, n_selected).into_iter().collect()
    } else {
        BTreeSet::new()
    };

    for (vi, &vseed) in video_seeds.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(vseed);
        let n_frames = rng.random_range(cfg.frames_min..=cfg.frames_max);
        let qlen = rng.random_range(cfg.query_len_min..=cfg.query_len_max);
        let query_tokens: Vec<usize> = (0..qlen).map(|_| rng.random_range(0..cfg.vocab_size)).collect();

        // hidden confounder, shared across z_block_len consecutive frames
        let mut latent = Vec::with_capacity(n_frames);
        for f in 0..n_frames {
            if f % cfg.z_block_len == 0 {
                latent.push(
                    (0..cfg.d_z)
                        .map(|_| rng.sample::<f64, _>(StandardNormal))
                        .collect::<Vec<f64>>(),
                );
            } else {
                let prev = latent[f - 1].clone();
                latent.push(prev);
            }
        }

        let mut frames: Vec<Vec<f64>> = latent
            .iter()
            .map(|z| {
                (0..cfg.d_v)
                    .map(|r| {
                        let lin: f64 = (0..cfg.d_z).map(|c| a_map[r * cfg.d_z + c] * z[c]).sum();
                        lin + cfg.noise_x * rng.sample::<f64, _>(StandardNormal)
                    })
                    .collect()
            })
            .collect();

        let mut ts: Vec<Option<u8>> = vec![None; n_frames];
        match cfg.mode {
            CorpusMode::Confounded => {
                // t driven by a propensity on the confounder; every frame
                // labeled, treated frames perturbed with salt-and-pepper
                for f in 0..n_frames {
                    let bz: f64 = b_dir.iter().zip(&latent[f]).map(|(b, z)| b * z).sum();
                    let p = sigmoid_scalar(cfg.gamma * bz);
                    let t = u8::from(rng.random::<f64>() < p);
                    ts[f] = Some(t);
                    let kind = if t == 1 {
                        frames[f] =
                            visual_intervention(&frames[f], InterventionKind::SaltPepper, cfg, &mut rng)?;
                        InterventionKind::SaltPepper
                    } else {
                        InterventionKind::None
                    };
                    frame_records.push(InterventionRecord {
                        video_id: vi as u32,
                        frame_index: f,
                        t,
                        kind,
                    });
                }
            }
            CorpusMode::PaperProtocol => {
                if selected_videos.contains(&vi) {
                    let n_lab = (cfg.frame_fraction * n_frames as f64).round() as usize;
                    let mut picked: Vec<usize> = sample(&mut rng, n_frames, n_lab).into_vec();
                    picked.sort_unstable();
                    let mut any_treated = false;
                    for f in picked {
                        let t = u8::from(rng.random::<bool>());
                        ts[f] = Some(t);
                        let kind = if t == 1 {
                            any_treated = true;
                            let kind = if rng.random::<bool>() {
                                InterventionKind::Blur
                            } else {
                                InterventionKind::SaltPepper
                            };
                            frames[f] = visual_intervention(&frames[f], kind, cfg, &mut rng)?;
                            kind
                        } else {
                            InterventionKind::None
                        };
                        frame_records.push(InterventionRecord {
                            video_id: vi as u32,
                            frame_index: f,
                            t,
                            kind,
                        });
                    }
                    if any_treated {
                        query_records.push(InterventionRecord {
                            video_id: vi as u32,
                            frame_index: 0,
                            t: 1,
                            kind: InterventionKind::WordDrop,
                        });
                    }
                }
            }
        }

        let query_tokens = if query_records.last().map(|r| r.video_id) == Some(vi as u32) {
            textual_intervention(&query_tokens, cfg.word_drop_p, &mut rng)
        } else {
            query_tokens
        };

        let gt_scores: Vec<usize> = (0..n_frames)
            .map(|f| {
                let bz: f64 = b_dir.iter().zip(&latent[f]).map(|(b, z)| b * z).sum();
                let treat = match cfg.mode {
                    CorpusMode::Confounded => {
                        cfg.c_effect * f64::from(ts[f].unwrap_or(0))
                    }
                    CorpusMode::PaperProtocol => 0.0,
                };
                let s =
                    cfg.b_scale * bz + treat + cfg.noise_y * rng.sample::<f64, _>(StandardNormal);
                discretize(s, &edges)
            })
            .collect();

        videos.push(SyntheticVideo {
            video_id: vi as u32,
            frames,
            query_tokens,
            gt_scores,
            latent_z_star: latent,
        });
    }

    let oracle = match cfg.mode {
        CorpusMode::Confounded => Some(oracle_ate(cfg, 1_000_000, seed ^ 0xa5a5_a5a5)?),
        CorpusMode::PaperProtocol => None,
    };

    Ok(Corpus {
        cfg: cfg.clone(),
        seed,
        videos,
        frame_records,
        query_records,
        oracle,
        oracle_direction: b_dir,
    })
}

/// Monte-Carlo estimate of E[y | do(t=1)] - E[y | do(t=0)] under the known
/// generative equations, with its standard error.
pub fn oracle_ate(cfg: &SynthConfig, n_mc: usize, seed: u64) -> Result<OracleAte, SynthError> {
    cfg.validate()?;
    if cfg.mode != CorpusMode::Confounded {
        return Err(SynthError::ModeMismatch {
            required: CorpusMode::Confounded,
            actual: cfg.mode,
        });
    }
    let edges = cfg.edges();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n_mc {
        // b.z* with z* ~ N(0, I) and unit b collapses to one standard normal
        let bz: f64 = rng.sample(StandardNormal);
        let noise: f64 = rng.sample(StandardNormal);
        let base = cfg.b_scale * bz + cfg.noise_y * noise;
        let d = discretize(base + cfg.c_effect, &edges) as f64 - discretize(base, &edges) as f64;
        sum += d;
        sum_sq += d * d;
    }
    let n = n_mc as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0);
    Ok(OracleAte { ate: mean, stderr: (var / n).sqrt(), n_mc })
}

impl Corpus {
    /// Frames with an intervention label, as model training examples.
    pub fn training_examples(&self) -> Vec<Example> {
        self.frame_records
            .iter()
            .map(|r| {
                let v = &self.videos[r.video_id as usize];
                Example {
                    video_id: r.video_id,
                    frame_index: r.frame_index,
                    features: v.frames[r.frame_index].clone(),
                    query: v.query_tokens.clone(),
                    t: r.t,
                    y: v.gt_scores[r.frame_index],
                }
            })
            .collect()
    }

    /// Every frame of one video as inference-time examples (t, y are the
    /// labels where known, 0 otherwise; inference never reads them).
    pub fn video_examples(&self, video_id: u32) -> Vec<Example> {
        let v = &self.videos[video_id as usize];
        (0..v.frames.len())
            .map(|f| Example {
                video_id,
                frame_index: f,
                features: v.frames[f].clone(),
                query: v.query_tokens.clone(),
                t: 0,
                y: v.gt_scores[f],
            })
            .collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct VideoMeta {
    video_id: u32,
    n_frames: usize,
    query_tokens: Vec<usize>,
    query_intervened: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct CorpusMetadata {
    config: SynthConfig,
    seed: u64,
    n_videos: usize,
    videos: Vec<VideoMeta>,
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle: Option<OracleAte>,
    /// provenance note for the image pipeline this corpus stands in for
    image_pipeline: ImageProvenance,
}

#[derive(Debug, Serialize, Deserialize)]
struct ImageProvenance {
    resolution: [usize; 2],
    mean: [f64; 3],
    std: [f64; 3],
}

impl Default for ImageProvenance {
    fn default() -> Self {
        Self {
            resolution: [224, 224],
            mean: [0.4280, 0.4106, 0.3589],
            std: [0.2737, 0.2631, 0.2601],
        }
    }
}

/// Writes the corpus directory: metadata.json, labels.csv, and one binary
/// feature file per video. The hidden confounder is never written.
pub fn save_corpus(corpus: &Corpus, dir: &Path) -> Result<(), SynthError> {
    fs::create_dir_all(dir)?;
    let query_dropped: BTreeSet<u32> = corpus.query_records.iter().map(|r| r.video_id).collect();
    let meta = CorpusMetadata {
        config: corpus.cfg.clone(),
        seed: corpus.seed,
        n_videos: corpus.videos.len(),
        videos: corpus
            .videos
            .iter()
            .map(|v| VideoMeta {
                video_id: v.video_id,
                n_frames: v.frames.len(),
                query_tokens: v.query_tokens.clone(),
                query_intervened: query_dropped.contains(&v.video_id),
            })
            .collect(),
        oracle: corpus.oracle,
        image_pipeline: ImageProvenance::default(),
    };
    fs::write(dir.join("metadata.json"), serde_json::to_string_pretty(&meta)?)?;

    for v in &corpus.videos {
        let mut buf =
            Vec::with_capacity(12 + v.frames.len() * corpus.cfg.d_v * 8);
        buf.extend_from_slice(&v.video_id.to_le_bytes());
        buf.extend_from_slice(&(v.frames.len() as u32).to_le_bytes());
        buf.extend_from_slice(&(corpus.cfg.d_v as u32).to_le_bytes());
        for frame in &v.frames {
            for val in frame {
                buf.extend_from_slice(&val.to_le_bytes());
            }
        }
        fs::write(dir.join(format!("video_{}.bin", v.video_id)), buf)?;
    }

    let mut labels = String::from("video_id,frame_index,t,kind,y\n");
    for v in &corpus.videos {
        let mut by_frame = vec![None; v.frames.len()];
        for r in corpus.frame_records.iter().filter(|r| r.video_id == v.video_id) {
            by_frame[r.frame_index] = Some(r);
        }
        for (f, rec) in by_frame.iter().enumerate() {
            match rec {
                Some(r) => labels.push_str(&format!(
                    "{},{},{},{},{}\n",
                    v.video_id, f, r.t, r.kind, v.gt_scores[f]
                )),
                None => labels.push_str(&format!(
                    "{},{},-,none,{}\n",
                    v.video_id, f, v.gt_scores[f]
                )),
            }
        }
    }
    let mut file = fs::File::create(dir.join("labels.csv"))?;
    file.write_all(labels.as_bytes())?;
    Ok(())
}

/// Reads a corpus directory back. The hidden confounder is not on disk, so
/// loaded videos carry an empty latent.
pub fn load_corpus(dir: &Path) -> Result<Corpus, SynthError> {
    let meta: CorpusMetadata =
        serde_json::from_str(&fs::read_to_string(dir.join("metadata.json"))?)?;
    let corrupt = |file: &Path, reason: &str| SynthError::CorruptFile {
        file: file.display().to_string(),
        reason: reason.to_string(),
    };

    let mut videos = Vec::with_capacity(meta.n_videos);
    for vm in &meta.videos {
        let path = dir.join(format!("video_{}.bin", vm.video_id));
        let mut bytes = Vec::new();
        fs::File::open(&path)?.read_to_end(&mut bytes)?;
        if bytes.len() < 12 {
            return Err(corrupt(&path, "truncated header"));
        }
        let vid = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
        let n_frames = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let d_v = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        if vid != vm.video_id || n_frames != vm.n_frames || d_v != meta.config.d_v {
            return Err(corrupt(&path, "header disagrees with metadata"));
        }
        let want = 12 + n_frames * d_v * 8;
        if bytes.len() != want {
            return Err(corrupt(&path, "payload length mismatch"));
        }
        let mut frames = Vec::with_capacity(n_frames);
        let mut off = 12;
        for _ in 0..n_frames {
            let mut frame = Vec::with_capacity(d_v);
            for _ in 0..d_v {
                frame.push(f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()));
                off += 8;
            }
            frames.push(frame);
        }
        videos.push(SyntheticVideo {
            video_id: vm.video_id,
            frames,
            query_tokens: vm.query_tokens.clone(),
            gt_scores: vec![0; n_frames],
            latent_z_star: Vec::new(),
        });
    }

    let labels_path = dir.join("labels.csv");
    let labels = fs::read_to_string(&labels_path)?;
    let mut frame_records = Vec::new();
    for (ln, line) in labels.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 5 {
            return Err(corrupt(&labels_path, &format!("bad row at line {}", ln + 1)));
        }
        let bad = |what: &str| corrupt(&labels_path, &format!("{what} at line {}", ln + 1));
        let vid: u32 = parts[0].parse().map_err(|_| bad("bad video_id"))?;
        let frame: usize = parts[1].parse().map_err(|_| bad("bad frame_index"))?;
        let y: usize = parts[4].parse().map_err(|_| bad("bad y"))?;
        let video = videos
            .iter_mut()
            .find(|v| v.video_id == vid)
            .ok_or_else(|| bad("unknown video_id"))?;
        if frame >= video.gt_scores.len() {
            return Err(bad("frame_index out of range"));
        }
        video.gt_scores[frame] = y;
        if parts[2] != "-" {
            let t: u8 = parts[2].parse().map_err(|_| bad("bad t"))?;
            let kind = match parts[3] {
                "blur" => InterventionKind::Blur,
                "salt_pepper" => InterventionKind::SaltPepper,
                "word_drop" => InterventionKind::WordDrop,
                "none" => InterventionKind::None,
                _ => return Err(bad("bad kind")),
            };
            frame_records.push(InterventionRecord { video_id: vid, frame_index: frame, t, kind });
        }
    }

    let query_records = meta
        .videos
        .iter()
        .filter(|v| v.query_intervened)
        .map(|v| InterventionRecord {
            video_id: v.video_id,
            frame_index: 0,
            t: 1,
            kind: InterventionKind::WordDrop,
        })
        .collect();

    Ok(Corpus {
        cfg: meta.config,
        seed: meta.seed,
        videos,
        frame_records,
        query_records,
        oracle: meta.oracle,
        oracle_direction: Vec::new(),
    })
}

/// Inverse standard-normal CDF (Acklam's rational approximation,
/// |relative error| < 1.2e-9 on (0, 1)).
pub fn normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile needs p in (0, 1)");
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -normal_quantile(1.0 - p)
    }
}
