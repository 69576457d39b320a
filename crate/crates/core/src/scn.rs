//! Semantic Constrained Network: a convolutional summarizer that maps the
//! encoder states of a sentence to a Gaussian latent over its meaning, plus
//! the gated fusion that mixes the sampled latent back into every memory
//! position.

use crate::error::{Error, Result};
use crate::params::{Bound, Parameters};
use crate::seq2seq::LN_EPS;
use crate::tensor::{Graph, NodeId, Tensor};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScnConfig {
    /// Convolution window sizes, one kernel bank per entry.
    pub windows: Vec<usize>,
    /// Feature maps per window size.
    pub n_maps: usize,
}

impl Default for ScnConfig {
    fn default() -> Self {
        // Desk-scale default keeps the window set, shrinks the maps.
        ScnConfig { windows: vec![2, 3, 4, 5], n_maps: 32 }
    }
}

/// Whether the latent is the Gaussian mean or a reparameterized draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatentMode {
    Deterministic,
    Stochastic,
}

/// Per-sentence Gaussian latent and its sampled vector.
#[derive(Debug, Clone)]
pub struct SemanticState {
    pub mu: Vec<f64>,
    pub log_var: Vec<f64>,
    pub z: Vec<f64>,
    pub pooled: Vec<f64>,
}

/// Node handles for the semantic path inside one training graph.
#[derive(Debug, Clone, Copy)]
pub struct SemanticNodes {
    pub pooled: NodeId,
    pub mu: NodeId,
    pub log_var: NodeId,
    pub z: NodeId,
    pub fused: NodeId,
}

/// The semantic network's parameters. The latent width equals `d_model` so
/// the gate can mix the latent elementwise with each memory position.
#[derive(Debug, Clone)]
pub struct Scn {
    pub cfg: ScnConfig,
    pub d_model: usize,
    pub params: Parameters,
}

impl Scn {
    pub fn new(cfg: ScnConfig, d_model: usize, rng: &mut impl Rng) -> Self {
        let mut p = Parameters::new();
        let pooled_len = cfg.windows.len() * cfg.n_maps;
        for &l in &cfg.windows {
            let rows = l * d_model;
            p.insert_xavier(format!("conv.{l}.w"), vec![rows, cfg.n_maps], rows, cfg.n_maps, rng);
            p.insert(format!("conv.{l}.b"), Tensor::zeros(vec![cfg.n_maps]));
        }
        p.insert_xavier("mu.w", vec![pooled_len, d_model], pooled_len, d_model, rng);
        p.insert("mu.b", Tensor::zeros(vec![d_model]));
        p.insert_xavier("sigma.w", vec![pooled_len, d_model], pooled_len, d_model, rng);
        p.insert("sigma.b", Tensor::zeros(vec![d_model]));
        p.insert_xavier("gate.wz", vec![d_model, d_model], d_model, d_model, rng);
        p.insert_xavier("gate.wx", vec![d_model, d_model], d_model, d_model, rng);
        p.insert("ln.g", Tensor::new(vec![d_model], vec![1.0; d_model]));
        p.insert("ln.b", Tensor::zeros(vec![d_model]));
        Scn { cfg, d_model, params: p }
    }

    /// Zero heads give mu = 0 and log-variance 0, i.e. a standard normal
    /// latent at initialization.
    pub fn zero_heads(&mut self) {
        for name in ["mu.w", "mu.b", "sigma.w", "sigma.b"] {
            let t = self.params.get_mut(name).unwrap();
            t.data.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn pooled_len(&self) -> usize {
        self.cfg.windows.len() * self.cfg.n_maps
    }

    // ── Graph builders ───────────────────────────────────────────────

    /// Relu conv over each window size followed by max-over-time pooling,
    /// concatenated in fixed (window, map) order. Only windows lying inside
    /// the first `real_len` rows of `h` participate, which makes the result
    /// invariant to trailing padding rows. Sentences shorter than a window
    /// are right-padded with zero vectors so every window yields at least
    /// one position.
    pub fn summarize_node(
        &self,
        g: &mut Graph,
        bound: &Bound,
        h: NodeId,
        real_len: usize,
    ) -> Result<NodeId> {
        if real_len == 0 {
            return Err(Error::ShapeMismatch {
                op: "summarize",
                detail: "zero-length input".into(),
            });
        }
        let rows = g.value(h).shape[0];
        let h_eff = if rows > real_len {
            g.slice(h, 0, 0, real_len)?
        } else {
            h
        };
        let mut pooled = Vec::with_capacity(self.cfg.windows.len());
        for &l in &self.cfg.windows {
            let x = if real_len < l {
                let pad = g.constant(Tensor::zeros(vec![l - real_len, self.d_model]));
                g.concat(&[h_eff, pad], 0)?
            } else {
                h_eff
            };
            let w = bound.id(&format!("conv.{l}.w"));
            let b = bound.id(&format!("conv.{l}.b"));
            let conv = g.conv1d(x, w, b, l)?;
            let act = g.relu(conv);
            pooled.push(g.max_over_time(act)?);
        }
        g.concat(&pooled, 0)
    }

    /// Linear heads over the pooled vector: `mu = pooled W_mu + b_mu`,
    /// `log_var = pooled W_sigma + b_sigma`.
    pub fn heads_node(
        &self,
        g: &mut Graph,
        bound: &Bound,
        pooled: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let f = self.pooled_len();
        let row = g.reshape(pooled, vec![1, f])?;
        let head = |g: &mut Graph, w: &str, b: &str| -> Result<NodeId> {
            let m = g.matmul(row, bound.id(w))?;
            let m = g.add(m, bound.id(b))?;
            g.reshape(m, vec![self.d_model])
        };
        let mu = head(g, "mu.w", "mu.b")?;
        let log_var = head(g, "sigma.w", "sigma.b")?;
        Ok((mu, log_var))
    }

    /// Reparameterized latent: `z = mu + exp(log_var / 2) * eps` with the
    /// supplied noise, or `z = mu` when `eps` is `None`.
    pub fn latent_node(
        &self,
        g: &mut Graph,
        mu: NodeId,
        log_var: NodeId,
        eps: Option<&[f64]>,
    ) -> Result<NodeId> {
        match eps {
            None => Ok(mu),
            Some(eps) => {
                let half = g.scale(log_var, 0.5);
                let sigma = g.exp(half);
                let noise = g.constant(Tensor::from_vec(eps.to_vec()));
                let scaled = g.mul(sigma, noise)?;
                g.add(mu, scaled)
            }
        }
    }

    /// Closed-form `KL(q_bar || q)` between diagonal Gaussians, as a scalar
    /// graph node.
    pub fn kl_node(
        &self,
        g: &mut Graph,
        mu_bar: NodeId,
        log_var_bar: NodeId,
        mu: NodeId,
        log_var: NodeId,
    ) -> Result<NodeId> {
        // Variance ratio as exp(lv_bar - lv): identical inputs give exactly
        // exp(0) = 1, so the whole term cancels to zero without rounding.
        let dlv = g.sub(log_var, log_var_bar)?;
        let t1 = g.scale(dlv, 0.5);
        let neg_dlv = g.scale(dlv, -1.0);
        let ratio = g.exp(neg_dlv);
        let dm = g.sub(mu_bar, mu)?;
        let dm2 = g.mul(dm, dm)?;
        let neg_lv = g.scale(log_var, -1.0);
        let inv_var = g.exp(neg_lv);
        let quad = g.mul(dm2, inv_var)?;
        let inner = g.add(ratio, quad)?;
        let t2 = g.scale(inner, 0.5);
        let t12 = g.add(t1, t2)?;
        let terms = g.shift(t12, -0.5);
        Ok(g.sum(terms))
    }

    /// Gated fusion of the latent into each memory position followed by
    /// layer normalization with the learned scale/shift.
    pub fn fuse_node(&self, g: &mut Graph, bound: &Bound, z: NodeId, h: NodeId) -> Result<NodeId> {
        let sz = g.value(z).shape.clone();
        let sh = g.value(h).shape.clone();
        if sz != [self.d_model] || sh.len() != 2 || sh[1] != self.d_model {
            return Err(Error::ShapeMismatch {
                op: "fuse",
                detail: format!("z {sz:?}, memory {sh:?}, d_model {}", self.d_model),
            });
        }
        let t = sh[0];
        let z_row = g.reshape(z, vec![1, self.d_model])?;
        let zw = g.matmul(z_row, bound.id("gate.wz"))?;
        let zw_vec = g.reshape(zw, vec![self.d_model])?;
        let zw_rows = g.broadcast_rows(zw_vec, t)?;
        let hx = g.matmul(h, bound.id("gate.wx"))?;
        let pre = g.add(zw_rows, hx)?;
        let gate = g.sigmoid(pre);
        let z_rows = g.broadcast_rows(z, t)?;
        let gz = g.mul(gate, z_rows)?;
        let neg_gate = g.scale(gate, -1.0);
        let inv_gate = g.shift(neg_gate, 1.0);
        let gh = g.mul(inv_gate, h)?;
        let mixed = g.add(gz, gh)?;
        g.layer_norm(mixed, Some(bound.id("ln.g")), Some(bound.id("ln.b")), LN_EPS)
    }

    /// Full semantic path over an encoded sentence: pooled summary, Gaussian
    /// heads, latent draw, and fused memory.
    pub fn semantic_path_node(
        &self,
        g: &mut Graph,
        bound: &Bound,
        h: NodeId,
        real_len: usize,
        eps: Option<&[f64]>,
    ) -> Result<SemanticNodes> {
        let pooled = self.summarize_node(g, bound, h, real_len)?;
        let (mu, log_var) = self.heads_node(g, bound, pooled)?;
        let z = self.latent_node(g, mu, log_var, eps)?;
        let fused = self.fuse_node(g, bound, z, h)?;
        Ok(SemanticNodes { pooled, mu, log_var, z, fused })
    }

    // ── Tensor-level operations ──────────────────────────────────────

    /// Pooled summary vector of the encoder states `h` (`T x d_model`).
    pub fn summarize(&self, h: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g);
        let hid = g.constant(h.clone());
        let pooled = self.summarize_node(&mut g, &bound, hid, h.shape[0])?;
        Ok(g.value(pooled).clone())
    }

    pub fn gaussian_heads(&self, pooled: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g);
        let pid = g.constant(pooled.clone());
        let (mu, lv) = self.heads_node(&mut g, &bound, pid)?;
        Ok((g.value(mu).data.clone(), g.value(lv).data.clone()))
    }

    /// Fused memory for an encoder output and latent, as plain tensors.
    pub fn fuse(&self, z: &[f64], h: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g);
        let zid = g.constant(Tensor::from_vec(z.to_vec()));
        let hid = g.constant(h.clone());
        let fused = self.fuse_node(&mut g, &bound, zid, hid)?;
        Ok(g.value(fused).clone())
    }

    /// Complete semantic state of an encoded sentence.
    pub fn state(&self, h: &Tensor, mode: LatentMode, rng: &mut impl Rng) -> Result<SemanticState> {
        let pooled = self.summarize(h)?;
        let (mu, log_var) = self.gaussian_heads(&pooled)?;
        let z = sample_latent(&mu, &log_var, mode, rng);
        Ok(SemanticState { mu, log_var, z, pooled: pooled.data })
    }
}

/// Draw the latent: `mu` in deterministic mode, `mu + sigma * eps` with
/// standard normal noise otherwise.
pub fn sample_latent(mu: &[f64], log_var: &[f64], mode: LatentMode, rng: &mut impl Rng) -> Vec<f64> {
    assert_eq!(mu.len(), log_var.len());
    match mode {
        LatentMode::Deterministic => mu.to_vec(),
        LatentMode::Stochastic => mu
            .iter()
            .zip(log_var)
            .map(|(&m, &lv)| {
                let eps: f64 = rng.sample(StandardNormal);
                m + (0.5 * lv).exp() * eps
            })
            .collect(),
    }
}

/// Standard normal noise vector for the reparameterized path.
pub fn draw_noise(d: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

/// Closed-form KL divergence `KL(q_bar || q)` between diagonal Gaussians
/// given as (mean, log-variance) pairs. Always non-negative; zero iff the
/// parameters coincide.
pub fn kl_divergence(
    q_bar: (&[f64], &[f64]),
    q: (&[f64], &[f64]),
) -> Result<f64> {
    let (mu_bar, lv_bar) = q_bar;
    let (mu, lv) = q;
    if mu_bar.len() != mu.len() || lv_bar.len() != lv.len() || mu.len() != lv.len() {
        return Err(Error::ShapeMismatch {
            op: "kl_divergence",
            detail: format!(
                "dims {}/{} vs {}/{}",
                mu_bar.len(),
                lv_bar.len(),
                mu.len(),
                lv.len()
            ),
        });
    }
    let mut total = 0.0;
    for i in 0..mu.len() {
        let dm = mu_bar[i] - mu[i];
        total += 0.5 * (lv[i] - lv_bar[i])
            + 0.5 * ((lv_bar[i] - lv[i]).exp() + dm * dm / lv[i].exp())
            - 0.5;
    }
    Ok(total)
}
