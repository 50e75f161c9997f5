//! Causal semantics extractor: token embedding with sinusoidal positional
//! encoding, dense attention, row-wise top-k causal attention, textual and
//! visual gating branches, and multimodal fusion.

use rand::Rng;
use thiserror::Error;

use crate::graph::{Graph, TensorError, TensorId};
use crate::nn::{Binder, GroupId, Linear, Mlp, ParamStore};

#[derive(Debug, Error)]
pub enum ExtractorError {
    #[error("empty query")]
    EmptyQuery,
    #[error("query has {len} tokens, maximum is {max}")]
    QueryTooLong { len: usize, max: usize },
    #[error("token id {id} outside vocabulary of size {vocab}")]
    UnknownToken { id: usize, vocab: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractorConfig {
    pub vocab_size: usize,
    /// token embedding dimension
    pub d_m: usize,
    /// attention projection dimension
    pub d_attn: usize,
    /// per-frame visual feature dimension
    pub d_v: usize,
    /// fused output dimension
    pub d_x: usize,
    pub max_len: usize,
    /// row-wise top-k; None means ceil(n / 2) per query
    pub kappa: Option<usize>,
    /// collapse the two-stage product into conventional sparse attention
    pub single_stage: bool,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            vocab_size: 100,
            d_m: 16,
            d_attn: 16,
            d_v: 64,
            d_x: 64,
            max_len: 16,
            kappa: None,
            single_stage: false,
        }
    }
}

/// Learnable weights of the extractor, registered on a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Extractor {
    pub cfg: ExtractorConfig,
    pub embedding: GroupId,
    pub w_q: GroupId,
    pub w_k: GroupId,
    pub w_v: GroupId,
    pub ln_gain: GroupId,
    pub ln_bias: GroupId,
    pub ffn: Mlp,
    pub text_gate: GroupId,
    pub visual_gate: GroupId,
    pub fc: Linear,
}

impl Extractor {
    pub fn new<R: Rng>(store: &mut ParamStore, cfg: ExtractorConfig, rng: &mut R) -> Self {
        let d_m = cfg.d_m;
        let d = cfg.d_attn;
        let std_e = 1.0 / (d_m as f64).sqrt();
        let std_p = 1.0 / (d_m as f64).sqrt();
        let embedding = store.add_normal("ext.embedding", vec![cfg.vocab_size, d_m], std_e, rng);
        let w_q = store.add_normal("ext.w_q", vec![d_m, d], std_p, rng);
        let w_k = store.add_normal("ext.w_k", vec![d_m, d], std_p, rng);
        let w_v = store.add_normal("ext.w_v", vec![d_m, d], std_p, rng);
        let ln_gain = store.add_const("ext.ln_gain", vec![d], 1.0);
        let ln_bias = store.add_const("ext.ln_bias", vec![d], 0.0);
        let ffn = Mlp::new(store, "ext.ffn", &[d, d, d], rng);
        let text_gate = store.add_const("ext.text_gate", vec![d], 1.0);
        let visual_gate = store.add_const("ext.visual_gate", vec![cfg.d_v], 1.0);
        let fc = Linear::new(store, "ext.fc", d + cfg.d_v, cfg.d_x, rng);
        Self {
            cfg,
            embedding,
            w_q,
            w_k,
            w_v,
            ln_gain,
            ln_bias,
            ffn,
            text_gate,
            visual_gate,
            fc,
        }
    }

    pub fn effective_kappa(&self, n: usize) -> usize {
        match self.cfg.kappa {
            Some(k) => k.clamp(1, n),
            None => n.div_ceil(2).clamp(1, n),
        }
    }

    /// Token matrix T[n, d_m]: embedding row lookup plus sinusoidal
    /// positional encoding.
    pub fn embed_query(
        &self,
        g: &mut Graph,
        binder: &mut Binder,
        store: &ParamStore,
        token_ids: &[usize],
    ) -> Result<TensorId, ExtractorError> {
        if token_ids.is_empty() {
            return Err(ExtractorError::EmptyQuery);
        }
        if token_ids.len() > self.cfg.max_len {
            return Err(ExtractorError::QueryTooLong { len: token_ids.len(), max: self.cfg.max_len });
        }
        if let Some(&id) = token_ids.iter().find(|&&id| id >= self.cfg.vocab_size) {
            return Err(ExtractorError::UnknownToken { id, vocab: self.cfg.vocab_size });
        }
        let emb = binder.bind(g, store, self.embedding)?;
        let rows = g.gather_rows(emb, token_ids.to_vec())?;
        let pe = sinusoidal_pe(token_ids.len(), self.cfg.d_m);
        let pe = g.constant(pe, vec![token_ids.len(), self.cfg.d_m])?;
        Ok(g.add(rows, pe)?)
    }

    /// Dense dot-product attention: returns (attention matrix A[n, n],
    /// V_new[n, d]).
    pub fn dense_attention(
        &self,
        g: &mut Graph,
        binder: &mut Binder,
        store: &ParamStore,
        t: TensorId,
    ) -> Result<(TensorId, TensorId), ExtractorError> {
        let scores = self.scaled_scores(g, binder, store, t)?;
        let attn = g.softmax_rows(scores)?;
        let w_v = binder.bind(g, store, self.w_v)?;
        let v = g.matmul(t, w_v)?;
        let v_new = g.matmul(attn, v)?;
        Ok((attn, v_new))
    }

    /// QK^T / sqrt(d).
    fn scaled_scores(
        &self,
        g: &mut Graph,
        binder: &mut Binder,
        store: &ParamStore,
        t: TensorId,
    ) -> Result<TensorId, ExtractorError> {
        let w_q = binder.bind(g, store, self.w_q)?;
        let w_k = binder.bind(g, store, self.w_k)?;
        let q = g.matmul(t, w_q)?;
        let k = g.matmul(t, w_k)?;
        let kt = g.transpose(k)?;
        let qk = g.matmul(q, kt)?;
        Ok(g.scale(qk, 1.0 / (self.cfg.d_attn as f64).sqrt()))
    }

    /// Top-k sparse attention output V_k[n, d]. By default this is the
    /// two-stage product softmax(topk(scores)) . V_new with V_new from the
    /// dense pass; `single_stage` applies the sparse weights to V directly.
    pub fn causal_attention(
        &self,
        g: &mut Graph,
        binder: &mut Binder,
        store: &ParamStore,
        t: TensorId,
    ) -> Result<TensorId, ExtractorError> {
        let n = g.shape(t)[0];
        let kappa = self.effective_kappa(n);
        let scores = self.scaled_scores(g, binder, store, t)?;
        let masked = g.topk_mask(scores, kappa)?;
        let sparse = g.softmax_rows(masked)?;
        let w_v = binder.bind(g, store, self.w_v)?;
        let v = g.matmul(t, w_v)?;
        let target = if self.cfg.single_stage {
            v
        } else {
            let attn = g.softmax_rows(scores)?;
            g.matmul(attn, v)?
        };
        Ok(g.matmul(sparse, target)?)
    }

    /// Z_ta: per-row layer norm + FFN, mean-pooled over tokens, then gated.
    pub fn text_branch(
        &self,
        g: &mut Graph,
        binder: &mut Binder,
        store: &ParamStore,
        v_k: TensorId,
    ) -> Result<TensorId, ExtractorError> {
        let n = g.shape(v_k)[0];
        let gain = binder.bind(g, store, self.ln_gain)?;
        let bias = binder.bind(g, store, self.ln_bias)?;
        let mut pooled = None;
        for r in 0..n {
            let row = g.row(v_k, r)?;
            let normed = g.layer_norm(row, gain, bias, 1e-5)?;
            let h = self.ffn.forward(g, binder, store, normed)?;
            pooled = Some(match pooled {
                None => h,
                Some(acc) => g.add(acc, h)?,
            });
        }
        let pooled = g.scale(pooled.unwrap(), 1.0 / n as f64);
        let gate = binder.bind(g, store, self.text_gate)?;
        Ok(g.mul(gate, pooled)?)
    }

    /// Z_va: elementwise visual gating of the frame features.
    pub fn visual_branch(
        &self,
        g: &mut Graph,
        binder: &mut Binder,
        store: &ParamStore,
        frame_features: TensorId,
    ) -> Result<TensorId, ExtractorError> {
        let gate = binder.bind(g, store, self.visual_gate)?;
        Ok(g.mul(gate, frame_features)?)
    }

    /// X_mul = FC(concat(Z_ta, Z_va)).
    pub fn fuse(
        &self,
        g: &mut Graph,
        binder: &mut Binder,
        store: &ParamStore,
        z_ta: TensorId,
        z_va: TensorId,
    ) -> Result<TensorId, ExtractorError> {
        let cat = g.concat(z_ta, z_va)?;
        Ok(self.fc.forward(g, binder, store, cat)?)
    }

    /// Full text side: embed -> causal attention -> text branch.
    pub fn query_features(
        &self,
        g: &mut Graph,
        binder: &mut Binder,
        store: &ParamStore,
        token_ids: &[usize],
    ) -> Result<TensorId, ExtractorError> {
        let t = self.embed_query(g, binder, store, token_ids)?;
        let v_k = self.causal_attention(g, binder, store, t)?;
        self.text_branch(g, binder, store, v_k)
    }

    /// Full pipeline for one frame: query features fused with gated visual
    /// features.
    pub fn forward(
        &self,
        g: &mut Graph,
        binder: &mut Binder,
        store: &ParamStore,
        z_ta: TensorId,
        frame_features: &[f64],
    ) -> Result<TensorId, ExtractorError> {
        let feat = g.constant(frame_features.to_vec(), vec![self.cfg.d_v])?;
        let z_va = self.visual_branch(g, binder, store, feat)?;
        self.fuse(g, binder, store, z_ta, z_va)
    }
}

/// pe[pos, 2i] = sin(pos / 10000^(2i/d)), pe[pos, 2i+1] = cos(same).
pub fn sinusoidal_pe(n: usize, d: usize) -> Vec<f64> {
    let mut pe = vec![0.0; n * d];
    for pos in 0..n {
        for i in 0..d {
            let freq = 10000f64.powf(-((i / 2 * 2) as f64) / d as f64);
            let angle = pos as f64 * freq;
            pe[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}
