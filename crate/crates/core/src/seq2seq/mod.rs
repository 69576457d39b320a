//! Encoder-decoder translation model: a scaled-down Transformer with shared
//! access to its parameter store, autoregressive decoding, and sequence
//! log-likelihood.

mod decode;
pub mod vocab;

pub use decode::{beam_search_with, greedy_with, length_penalty, Decoded, StepFn};
pub use vocab::{Sentence, Vocab, BOS, EOS, PAD, UNK};

use crate::error::{Error, Result};
use crate::params::{Bound, Parameters};
use crate::tensor::{Graph, NodeId, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const LN_EPS: f64 = 1e-12;
const MASK_NEG: f64 = -1e9;

/// Model dimensions. All sizes are config-driven; the defaults are a
/// desk-scale shrink of the usual base setting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub d_ff: usize,
    /// Longest sequence the positional table covers.
    pub max_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            src_vocab: 64,
            tgt_vocab: 64,
            d_model: 64,
            n_heads: 4,
            n_enc_layers: 2,
            n_dec_layers: 2,
            d_ff: 256,
            max_len: 128,
        }
    }
}

/// Encoder-decoder translator. One instance processes every source variant
/// of a training record, so all paths share the same parameter tensors.
#[derive(Debug, Clone)]
pub struct Seq2SeqModel {
    pub cfg: ModelConfig,
    pub params: Parameters,
    /// Precomputed sinusoidal position table, `max_len x d_model`.
    pos_table: Tensor,
}

fn positional_table(max_len: usize, d_model: usize) -> Tensor {
    let mut data = vec![0.0; max_len * d_model];
    for t in 0..max_len {
        for i in 0..d_model {
            let exponent = (2 * (i / 2)) as f64 / d_model as f64;
            let angle = t as f64 / 10000f64.powf(exponent);
            data[t * d_model + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(vec![max_len, d_model], data)
}

fn attention_param_names(prefix: &str) -> [String; 4] {
    ["wq", "wk", "wv", "wo"].map(|n| format!("{prefix}.{n}"))
}

impl Seq2SeqModel {
    /// Xavier-initialized model; layer-norm scales start at one, shifts at
    /// zero. Initialization order is fixed, so a seed pins every weight.
    pub fn new(cfg: ModelConfig, rng: &mut impl Rng) -> Self {
        assert!(cfg.d_model.is_multiple_of(cfg.n_heads), "d_model must divide into heads");
        let mut p = Parameters::new();
        let d = cfg.d_model;
        p.insert_xavier("src_embed", vec![cfg.src_vocab, d], cfg.src_vocab, d, rng);
        p.insert_xavier("tgt_embed", vec![cfg.tgt_vocab, d], cfg.tgt_vocab, d, rng);
        for i in 0..cfg.n_enc_layers {
            Self::init_attention(&mut p, &format!("enc.{i}.attn"), d, rng);
            Self::init_layernorm(&mut p, &format!("enc.{i}.ln1"), d);
            Self::init_ffn(&mut p, &format!("enc.{i}.ffn"), d, cfg.d_ff, rng);
            Self::init_layernorm(&mut p, &format!("enc.{i}.ln2"), d);
        }
        for i in 0..cfg.n_dec_layers {
            Self::init_attention(&mut p, &format!("dec.{i}.self"), d, rng);
            Self::init_layernorm(&mut p, &format!("dec.{i}.ln1"), d);
            Self::init_attention(&mut p, &format!("dec.{i}.cross"), d, rng);
            Self::init_layernorm(&mut p, &format!("dec.{i}.ln2"), d);
            Self::init_ffn(&mut p, &format!("dec.{i}.ffn"), d, cfg.d_ff, rng);
            Self::init_layernorm(&mut p, &format!("dec.{i}.ln3"), d);
        }
        p.insert_xavier("out.w", vec![d, cfg.tgt_vocab], d, cfg.tgt_vocab, rng);
        p.insert("out.b", Tensor::zeros(vec![cfg.tgt_vocab]));
        let pos_table = positional_table(cfg.max_len, d);
        Seq2SeqModel { cfg, params: p, pos_table }
    }

    /// All-zero weights: every output distribution is exactly uniform.
    pub fn zeroed(cfg: ModelConfig) -> Self {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        use rand::SeedableRng;
        let mut m = Seq2SeqModel::new(cfg, &mut rng);
        for (name, t) in m.params.iter_mut() {
            // Keep layer-norm scales at one so normalization stays defined.
            if !name.ends_with(".g") {
                t.data.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        m
    }

    fn init_attention(p: &mut Parameters, prefix: &str, d: usize, rng: &mut impl Rng) {
        for name in attention_param_names(prefix) {
            p.insert_xavier(name, vec![d, d], d, d, rng);
        }
    }

    fn init_ffn(p: &mut Parameters, prefix: &str, d: usize, d_ff: usize, rng: &mut impl Rng) {
        p.insert_xavier(format!("{prefix}.w1"), vec![d, d_ff], d, d_ff, rng);
        p.insert(format!("{prefix}.b1"), Tensor::zeros(vec![d_ff]));
        p.insert_xavier(format!("{prefix}.w2"), vec![d_ff, d], d_ff, d, rng);
        p.insert(format!("{prefix}.b2"), Tensor::zeros(vec![d]));
    }

    fn init_layernorm(p: &mut Parameters, prefix: &str, d: usize) {
        p.insert(format!("{prefix}.g"), Tensor::new(vec![d], vec![1.0; d]));
        p.insert(format!("{prefix}.b"), Tensor::zeros(vec![d]));
    }

    // ── Graph builders ───────────────────────────────────────────────

    fn embed_with_positions(
        &self,
        g: &mut Graph,
        bound: &Bound,
        table: &str,
        tokens: &[u32],
    ) -> Result<NodeId> {
        if tokens.len() > self.cfg.max_len {
            return Err(Error::Sentence(format!(
                "sequence length {} exceeds positional table {}",
                tokens.len(),
                self.cfg.max_len
            )));
        }
        let ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        let e = g.embedding(bound.id(table), &ids)?;
        let scaled = g.scale(e, (self.cfg.d_model as f64).sqrt());
        let pe_rows: Vec<f64> = self.pos_table.data[..tokens.len() * self.cfg.d_model].to_vec();
        let pe = g.constant(Tensor::new(vec![tokens.len(), self.cfg.d_model], pe_rows));
        g.add(scaled, pe)
    }

    fn attention(
        &self,
        g: &mut Graph,
        bound: &Bound,
        prefix: &str,
        queries: NodeId,
        keys_values: NodeId,
        mask: Option<NodeId>,
    ) -> Result<NodeId> {
        let [wq, wk, wv, wo] = attention_param_names(prefix);
        let q = g.matmul(queries, bound.id(&wq))?;
        let k = g.matmul(keys_values, bound.id(&wk))?;
        let v = g.matmul(keys_values, bound.id(&wv))?;
        let d_head = self.cfg.d_model / self.cfg.n_heads;
        let mut heads = Vec::with_capacity(self.cfg.n_heads);
        for h in 0..self.cfg.n_heads {
            let (lo, hi) = (h * d_head, (h + 1) * d_head);
            let qh = g.slice(q, 1, lo, hi)?;
            let kh = g.slice(k, 1, lo, hi)?;
            let vh = g.slice(v, 1, lo, hi)?;
            let kt = g.transpose(kh)?;
            let scores = g.matmul(qh, kt)?;
            let mut scores = g.scale(scores, 1.0 / (d_head as f64).sqrt());
            if let Some(m) = mask {
                scores = g.add(scores, m)?;
            }
            let attn = g.softmax(scores);
            heads.push(g.matmul(attn, vh)?);
        }
        let ctx = g.concat(&heads, 1)?;
        g.matmul(ctx, bound.id(&wo))
    }

    fn ffn(&self, g: &mut Graph, bound: &Bound, prefix: &str, x: NodeId) -> Result<NodeId> {
        let h = g.matmul(x, bound.id(&format!("{prefix}.w1")))?;
        let h = g.add(h, bound.id(&format!("{prefix}.b1")))?;
        let h = g.relu(h);
        let h = g.matmul(h, bound.id(&format!("{prefix}.w2")))?;
        g.add(h, bound.id(&format!("{prefix}.b2")))
    }

    fn residual_norm(
        &self,
        g: &mut Graph,
        bound: &Bound,
        prefix: &str,
        x: NodeId,
        sub: NodeId,
    ) -> Result<NodeId> {
        let s = g.add(x, sub)?;
        g.layer_norm(
            s,
            Some(bound.id(&format!("{prefix}.g"))),
            Some(bound.id(&format!("{prefix}.b"))),
            LN_EPS,
        )
    }

    /// Encoder stack over the source tokens; returns the `T_x x d_model`
    /// memory node.
    pub fn encode_node(&self, g: &mut Graph, bound: &Bound, x: &Sentence) -> Result<NodeId> {
        let mut h = self.embed_with_positions(g, bound, "src_embed", x.tokens())?;
        for i in 0..self.cfg.n_enc_layers {
            let attn = self.attention(g, bound, &format!("enc.{i}.attn"), h, h, None)?;
            h = self.residual_norm(g, bound, &format!("enc.{i}.ln1"), h, attn)?;
            let f = self.ffn(g, bound, &format!("enc.{i}.ffn"), h)?;
            h = self.residual_norm(g, bound, &format!("enc.{i}.ln2"), h, f)?;
        }
        Ok(h)
    }

    fn causal_mask(&self, g: &mut Graph, t: usize) -> NodeId {
        let mut data = vec![0.0; t * t];
        for i in 0..t {
            for j in (i + 1)..t {
                data[i * t + j] = MASK_NEG;
            }
        }
        g.constant(Tensor::new(vec![t, t], data))
    }

    /// Decoder stack over `input_tokens` (BOS-prefixed target prefix) against
    /// the encoder memory; returns the `T x tgt_vocab` logits node.
    pub fn decoder_logits_node(
        &self,
        g: &mut Graph,
        bound: &Bound,
        input_tokens: &[u32],
        memory: NodeId,
    ) -> Result<NodeId> {
        let t = input_tokens.len();
        let mut h = self.embed_with_positions(g, bound, "tgt_embed", input_tokens)?;
        let mask = self.causal_mask(g, t);
        for i in 0..self.cfg.n_dec_layers {
            let attn = self.attention(g, bound, &format!("dec.{i}.self"), h, h, Some(mask))?;
            h = self.residual_norm(g, bound, &format!("dec.{i}.ln1"), h, attn)?;
            let cross = self.attention(g, bound, &format!("dec.{i}.cross"), h, memory, None)?;
            h = self.residual_norm(g, bound, &format!("dec.{i}.ln2"), h, cross)?;
            let f = self.ffn(g, bound, &format!("dec.{i}.ffn"), h)?;
            h = self.residual_norm(g, bound, &format!("dec.{i}.ln3"), h, f)?;
        }
        let logits = g.matmul(h, bound.id("out.w"))?;
        g.add(logits, bound.id("out.b"))
    }

    /// Teacher-forced negative log-likelihood, summed over the scored
    /// positions `y_1..y_T, EOS`. Returns the scalar sum node and the number
    /// of scored tokens.
    pub fn nll_sum_node(
        &self,
        g: &mut Graph,
        bound: &Bound,
        y: &Sentence,
        memory: NodeId,
        label_smoothing: f64,
    ) -> Result<(NodeId, usize)> {
        let mut input = Vec::with_capacity(y.len() + 1);
        input.push(BOS);
        input.extend_from_slice(y.tokens());
        let mut scored = Vec::with_capacity(y.len() + 1);
        scored.extend_from_slice(y.tokens());
        scored.push(EOS);

        let logits = self.decoder_logits_node(g, bound, &input, memory)?;
        let v = self.cfg.tgt_vocab;
        let mut target = vec![0.0; scored.len() * v];
        let off = label_smoothing / v as f64;
        for (r, &tok) in scored.iter().enumerate() {
            for cell in target[r * v..(r + 1) * v].iter_mut() {
                *cell = off;
            }
            target[r * v + tok as usize] += 1.0 - label_smoothing;
        }
        let target = g.constant(Tensor::new(vec![scored.len(), v], target));
        let ce = g.cross_entropy(logits, target)?;
        Ok((g.sum(ce), scored.len()))
    }

    // ── Public operations ────────────────────────────────────────────

    /// Run the encoder, returning the `T_x x d_model` hidden states.
    pub fn encode(&self, x: &Sentence) -> Result<Tensor> {
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g);
        let h = self.encode_node(&mut g, &bound, x)?;
        let out = g.value(h).clone();
        out.assert_finite("encode")?;
        Ok(out)
    }

    /// Distribution over the next target token given the decode prefix held
    /// in `cache`. The returned vector is a proper probability distribution
    /// over the full target vocabulary.
    pub fn decode_step(
        &self,
        prev_token: u32,
        cache: &mut DecoderCache,
        memory: &Tensor,
    ) -> Result<Vec<f64>> {
        if memory.shape != cache.memory_shape {
            return Err(Error::CacheMismatch(format!(
                "memory shape {:?} differs from the cache's {:?}",
                memory.shape, cache.memory_shape
            )));
        }
        if cache.tokens.is_empty() && prev_token != BOS {
            return Err(Error::CacheMismatch(format!(
                "first step must consume BOS, got token {prev_token}"
            )));
        }
        cache.tokens.push(prev_token);
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g);
        let mem = g.constant(memory.clone());
        let logits = self.decoder_logits_node(&mut g, &bound, &cache.tokens, mem)?;
        let t = cache.tokens.len();
        let last = g.slice(logits, 0, t - 1, t)?;
        let dist = g.softmax(last);
        Ok(g.value(dist).data.clone())
    }

    /// Sum of step log-probabilities of `y` (suffixed with EOS) given `x`,
    /// under teacher forcing. `memory_override` substitutes the encoder
    /// output, e.g. with a semantically fused memory.
    pub fn log_likelihood(
        &self,
        x: &Sentence,
        y: &Sentence,
        memory_override: Option<&Tensor>,
    ) -> Result<f64> {
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g);
        let memory = match memory_override {
            Some(t) => g.constant(t.clone()),
            None => self.encode_node(&mut g, &bound, x)?,
        };
        let (nll, _) = self.nll_sum_node(&mut g, &bound, y, memory, 0.0)?;
        Ok(-g.value(nll).item())
    }

    /// Decode-step closure over a fixed memory, with PAD and BOS masked out
    /// and the remainder renormalized (the model never emits either).
    pub fn step_fn<'a>(&'a self, memory: &'a Tensor) -> impl FnMut(&[u32]) -> Result<Vec<f64>> + 'a {
        move |prefix: &[u32]| {
            let mut cache = self.start_decode(memory);
            let mut dist = self.decode_step(BOS, &mut cache, memory)?;
            for &tok in prefix {
                dist = self.decode_step(tok, &mut cache, memory)?;
            }
            mask_reserved(&mut dist);
            Ok(dist)
        }
    }

    pub fn start_decode(&self, memory: &Tensor) -> DecoderCache {
        DecoderCache {
            memory_shape: memory.shape.clone(),
            tokens: Vec::new(),
        }
    }

    /// Argmax decoding: emits the most probable token at each step until EOS
    /// or `max_len` tokens.
    pub fn greedy_decode(&self, x: &Sentence, max_len: usize) -> Result<Decoded> {
        let memory = self.encode(x)?;
        greedy_with(self.step_fn(&memory), max_len)
    }

    /// Beam search with the `((5+len)/6)^alpha` length penalty. If no
    /// hypothesis finishes within `max_len`, the best unfinished one is
    /// returned with `finished == false`.
    pub fn beam_decode(
        &self,
        x: &Sentence,
        beam: usize,
        length_penalty_alpha: f64,
        max_len: usize,
    ) -> Result<Decoded> {
        let memory = self.encode(x)?;
        beam_search_with(self.step_fn(&memory), beam, length_penalty_alpha, max_len)
    }
}

/// Renormalize a distribution after zeroing entries the decoder must never
/// emit (PAD and BOS).
pub fn mask_reserved(dist: &mut [f64]) {
    dist[PAD as usize] = 0.0;
    dist[BOS as usize] = 0.0;
    let sum: f64 = dist.iter().sum();
    if sum > 0.0 {
        dist.iter_mut().for_each(|p| *p /= sum);
    }
}

/// Tracks the token prefix consumed by [`Seq2SeqModel::decode_step`] for one
/// decode run against one encoder memory.
#[derive(Debug, Clone)]
pub struct DecoderCache {
    memory_shape: Vec<usize>,
    tokens: Vec<u32>,
}

impl DecoderCache {
    pub fn steps_taken(&self) -> usize {
        self.tokens.len()
    }
}
