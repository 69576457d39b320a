//! Training: the regularized objective over real and synthetic sources, the
//! annealed KL weight, two-phase orchestration, and the optimizer loop.

mod adam;
mod config;

pub use adam::{adam_step, learning_rate, AdamState};
pub use config::TrainConfig;

use crate::checkpoint;
use crate::corpus::epoch_order;
use crate::error::{Error, Result};
use crate::sampler::SyntheticRecord;
use crate::scn::{draw_noise, Scn};
use crate::seq2seq::{Sentence, Seq2SeqModel};
use crate::tensor::Graph;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

/// Per-step loss decomposition. `total` is reproducible from the components
/// and the weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossReport {
    pub step: u64,
    pub total: f64,
    pub mle_x: f64,
    pub mle_xbar: f64,
    pub sem: f64,
    pub gamma_now: f64,
}

/// KL-weight annealing: zero before the ramp, linear to one across
/// `gamma_ramp_steps`, exactly one afterward.
pub fn gamma_schedule(step: u64, cfg: &TrainConfig) -> f64 {
    if step <= cfg.gamma_ramp_start {
        return 0.0;
    }
    let progress = (step - cfg.gamma_ramp_start) as f64 / cfg.gamma_ramp_steps as f64;
    progress.min(1.0)
}

/// Token-normalized negative log-likelihood of a batch: the summed NLL over
/// all scored positions divided by the number of scored tokens.
pub fn mle_loss(model: &Seq2SeqModel, batch: &[(Sentence, Sentence)]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Corpus("mle_loss over an empty batch".into()));
    }
    let mut nll = 0.0;
    let mut tokens = 0usize;
    for (x, y) in batch {
        nll -= model.log_likelihood(x, y, None)?;
        tokens += y.len() + 1;
    }
    Ok(nll / tokens as f64)
}

/// Batch-level metrics of one backward pass.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepMetrics {
    pub total: f64,
    pub mle_x: f64,
    pub mle_xbar: f64,
    pub sem: f64,
}

/// Teacher-forced MLE over raw encoder memories: builds the graph for the
/// indexed pairs, runs backward, and accumulates gradients into the model.
pub fn mle_backward_batch(
    model: &mut Seq2SeqModel,
    pairs: &[(Sentence, Sentence)],
    idxs: &[usize],
    label_smoothing: f64,
) -> Result<StepMetrics> {
    let mut g = Graph::new();
    let bound = model.params.bind(&mut g);
    let mut total_nll = None;
    let mut tokens = 0usize;
    for &i in idxs {
        let (x, y) = &pairs[i];
        let memory = model.encode_node(&mut g, &bound, x)?;
        let (nll, t) = model.nll_sum_node(&mut g, &bound, y, memory, label_smoothing)?;
        tokens += t;
        total_nll = Some(match total_nll {
            None => nll,
            Some(acc) => g.add(acc, nll)?,
        });
    }
    let total_nll = total_nll.ok_or_else(|| Error::Corpus("empty batch".into()))?;
    let loss = g.scale(total_nll, 1.0 / tokens as f64);
    g.backward(loss)?;
    model.params.absorb_grads(&g, &bound);
    let v = g.value(loss).item();
    Ok(StepMetrics { total: v, mle_x: v, mle_xbar: 0.0, sem: 0.0 })
}

/// The three per-record loss terms of the semantic augmentation objective,
/// built into one shared graph: the fused-path NLL of the real source, the
/// fused-path NLL of one synthetic source, and `KL(q_bar || q)` between
/// their latents.
///
/// Per record the noise draws happen in a fixed order — the real path's
/// noise, the synthetic-source index, the synthetic path's noise — so a
/// seeded generator pins the whole step.
pub fn semaug_backward_batch(
    model: &mut Seq2SeqModel,
    scn: &mut Scn,
    records: &[SyntheticRecord],
    idxs: &[usize],
    cfg: &TrainConfig,
    gamma: f64,
    rng: &mut impl Rng,
) -> Result<StepMetrics> {
    let d = model.cfg.d_model;
    let mut g = Graph::new();
    let bm = model.params.bind(&mut g);
    let bs = scn.params.bind(&mut g);

    let mut nll_x_total = None;
    let mut nll_xbar_total = None;
    let mut kl_total = None;
    let mut tokens_x = 0usize;
    let mut tokens_xbar = 0usize;

    for &i in idxs {
        let record = &records[i];
        let x = record.real_source.as_ref().ok_or_else(|| {
            Error::Corpus(format!(
                "record {} has no real source; the objective needs both paths",
                record.record_index
            ))
        })?;
        if record.synthetic_sources.is_empty() {
            return Err(Error::Corpus(format!(
                "record {} has an empty synthetic source set",
                record.record_index
            )));
        }
        let eps = draw_noise(d, rng);
        let j = rng.gen_range(0..record.synthetic_sources.len());
        let eps_bar = draw_noise(d, rng);
        let x_bar = &record.synthetic_sources[j];
        let y = &record.target;

        let h_x = model.encode_node(&mut g, &bm, x)?;
        let sem_x = scn.semantic_path_node(&mut g, &bs, h_x, x.len(), Some(&eps))?;
        let (nll_x, t_x) = model.nll_sum_node(&mut g, &bm, y, sem_x.fused, cfg.label_smoothing)?;

        let h_xbar = model.encode_node(&mut g, &bm, x_bar)?;
        let sem_xbar = scn.semantic_path_node(&mut g, &bs, h_xbar, x_bar.len(), Some(&eps_bar))?;
        let (nll_xbar, t_xb) =
            model.nll_sum_node(&mut g, &bm, y, sem_xbar.fused, cfg.label_smoothing)?;

        let kl = scn.kl_node(&mut g, sem_xbar.mu, sem_xbar.log_var, sem_x.mu, sem_x.log_var)?;

        tokens_x += t_x;
        tokens_xbar += t_xb;
        nll_x_total = Some(match nll_x_total {
            None => nll_x,
            Some(acc) => g.add(acc, nll_x)?,
        });
        nll_xbar_total = Some(match nll_xbar_total {
            None => nll_xbar,
            Some(acc) => g.add(acc, nll_xbar)?,
        });
        kl_total = Some(match kl_total {
            None => kl,
            Some(acc) => g.add(acc, kl)?,
        });
    }

    let nll_x_total = nll_x_total.ok_or_else(|| Error::Corpus("empty batch".into()))?;
    let mle_x = g.scale(nll_x_total, 1.0 / tokens_x as f64);
    let mle_xbar = g.scale(nll_xbar_total.unwrap(), 1.0 / tokens_xbar as f64);
    let sem = g.scale(kl_total.unwrap(), 1.0 / idxs.len() as f64);

    let wx = g.scale(mle_x, cfg.lambda1);
    let wxb = g.scale(mle_xbar, cfg.lambda2);
    let wsem = g.scale(sem, gamma);
    let partial = g.add(wx, wxb)?;
    let total = g.add(partial, wsem)?;

    g.backward(total)?;
    model.params.absorb_grads(&g, &bm);
    scn.params.absorb_grads(&g, &bs);

    Ok(StepMetrics {
        total: g.value(total).item(),
        mle_x: g.value(mle_x).item(),
        mle_xbar: g.value(mle_xbar).item(),
        sem: g.value(sem).item(),
    })
}

/// The semantic augmentation objective on a single record, with gradients
/// accumulated into the model and network. Returns the loss decomposition at
/// `step`'s annealed KL weight.
pub fn semaug_loss(
    model: &mut Seq2SeqModel,
    scn: &mut Scn,
    record: &SyntheticRecord,
    cfg: &TrainConfig,
    step: u64,
    rng: &mut impl Rng,
) -> Result<LossReport> {
    let gamma = gamma_schedule(step, cfg);
    let m = semaug_backward_batch(
        model,
        scn,
        std::slice::from_ref(record),
        &[0],
        cfg,
        gamma,
        rng,
    )?;
    Ok(LossReport {
        step,
        total: m.total,
        mle_x: m.mle_x,
        mle_xbar: m.mle_xbar,
        sem: m.sem,
        gamma_now: gamma,
    })
}

/// Fused-path MLE on one pair: encode, deterministic-or-noisy latent, fuse,
/// teacher-forced NLL. Gradients are accumulated into both stores. This is
/// the degenerate `lambda1 = 1, lambda2 = 0, gamma = 0` corner of the full
/// objective, built as its own graph.
pub fn fused_mle_backward(
    model: &mut Seq2SeqModel,
    scn: &mut Scn,
    x: &Sentence,
    y: &Sentence,
    eps: Option<&[f64]>,
    label_smoothing: f64,
) -> Result<f64> {
    let mut g = Graph::new();
    let bm = model.params.bind(&mut g);
    let bs = scn.params.bind(&mut g);
    let h = model.encode_node(&mut g, &bm, x)?;
    let sem = scn.semantic_path_node(&mut g, &bs, h, x.len(), eps)?;
    let (nll, tokens) = model.nll_sum_node(&mut g, &bm, y, sem.fused, label_smoothing)?;
    let loss = g.scale(nll, 1.0 / tokens as f64);
    g.backward(loss)?;
    model.params.absorb_grads(&g, &bm);
    scn.params.absorb_grads(&g, &bs);
    Ok(g.value(loss).item())
}

/// Where a training run writes its checkpoint series.
#[derive(Debug, Clone)]
pub struct CheckpointPlan {
    pub dir: PathBuf,
    pub prefix: String,
}

impl CheckpointPlan {
    fn path(&self, tag: &str) -> PathBuf {
        self.dir.join(format!("{}_{tag}.ckpt", self.prefix))
    }
}

fn make_batches(order: &[usize], sizes: &[usize], budget: usize) -> Vec<Vec<usize>> {
    let mut batches = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    let mut used = 0usize;
    for &idx in order {
        let s = sizes[idx];
        if !current.is_empty() && used + s > budget {
            batches.push(std::mem::take(&mut current));
            used = 0;
        }
        current.push(idx);
        used += s;
    }
    if !current.is_empty() {
        batches.push(current);
    }
    batches
}

struct RunningMean {
    sum: StepMetrics,
    n: usize,
}

impl RunningMean {
    fn new() -> Self {
        RunningMean { sum: StepMetrics::default(), n: 0 }
    }
    fn push(&mut self, m: StepMetrics) {
        self.sum.total += m.total;
        self.sum.mle_x += m.mle_x;
        self.sum.mle_xbar += m.mle_xbar;
        self.sum.sem += m.sem;
        self.n += 1;
    }
    fn mean(&self) -> StepMetrics {
        let n = self.n.max(1) as f64;
        StepMetrics {
            total: self.sum.total / n,
            mle_x: self.sum.mle_x / n,
            mle_xbar: self.sum.mle_xbar / n,
            sem: self.sum.sem / n,
        }
    }
}

/// MLE pretraining (both the forward and the reverse direction use this;
/// the caller picks which way the pairs point). `multiplicities`, when
/// given, repeats each pair that many times per epoch before shuffling.
pub fn train_mle(
    model: &mut Seq2SeqModel,
    pairs: &[(Sentence, Sentence)],
    multiplicities: Option<&[usize]>,
    cfg: &TrainConfig,
    plan: Option<&CheckpointPlan>,
) -> Result<Vec<LossReport>> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::Corpus("training corpus is empty".into()));
    }
    let ones = vec![1usize; pairs.len()];
    let mult = multiplicities.unwrap_or(&ones);
    let sizes: Vec<usize> = pairs.iter().map(|(x, y)| x.len() + y.len()).collect();

    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new();
    let mut reports = Vec::new();
    let mut step = 0u64;

    'training: while step < cfg.max_steps {
        let order = epoch_order(mult, &mut rng);
        let batches = make_batches(&order, &sizes, cfg.batch_tokens);
        let mut b = 0usize;
        while b < batches.len() {
            if step >= cfg.max_steps {
                break 'training;
            }
            step += 1;
            model.params.zero_grads();
            let mut acc = RunningMean::new();
            for _ in 0..cfg.grad_accum {
                if b >= batches.len() {
                    break;
                }
                let m = mle_backward_batch(model, pairs, &batches[b], cfg.label_smoothing)?;
                acc.push(m);
                b += 1;
            }
            if acc.n > 1 {
                model.params.scale_grads(1.0 / acc.n as f64);
            }
            adam_step(&mut model.params, &mut adam, cfg, step)?;
            let m = acc.mean();
            reports.push(LossReport {
                step,
                total: m.total,
                mle_x: m.mle_x,
                mle_xbar: 0.0,
                sem: 0.0,
                gamma_now: 0.0,
            });
            if let Some(plan) = plan {
                if cfg.checkpoint_every > 0 && step.is_multiple_of(cfg.checkpoint_every) {
                    checkpoint::save(&plan.path(&format!("step{step}")), &[("", &model.params)])?;
                }
            }
        }
    }
    if let Some(plan) = plan {
        checkpoint::save(&plan.path("final"), &[("", &model.params)])?;
    }
    Ok(reports)
}

/// Semantic augmentation phase over a synthetic corpus. The model should
/// start from MLE-pretrained parameters; the network trains jointly with it
/// under the annealed KL weight.
pub fn train_semaug(
    model: &mut Seq2SeqModel,
    scn: &mut Scn,
    records: &[SyntheticRecord],
    multiplicities: Option<&[usize]>,
    cfg: &TrainConfig,
    plan: Option<&CheckpointPlan>,
) -> Result<Vec<LossReport>> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(Error::Corpus("synthetic corpus is empty".into()));
    }
    let ones = vec![1usize; records.len()];
    let mult = multiplicities.unwrap_or(&ones);
    let sizes: Vec<usize> = records
        .iter()
        .map(|r| {
            r.target.len() + r.real_source.as_ref().map(|s| s.len()).unwrap_or(0)
        })
        .collect();

    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut adam_model = AdamState::new();
    let mut adam_scn = AdamState::new();
    let mut reports = Vec::new();
    let mut step = 0u64;

    'training: while step < cfg.max_steps {
        let order = epoch_order(mult, &mut rng);
        let batches = make_batches(&order, &sizes, cfg.batch_tokens);
        let mut b = 0usize;
        while b < batches.len() {
            if step >= cfg.max_steps {
                break 'training;
            }
            step += 1;
            let gamma = gamma_schedule(step, cfg);
            model.params.zero_grads();
            scn.params.zero_grads();
            let mut acc = RunningMean::new();
            for _ in 0..cfg.grad_accum {
                if b >= batches.len() {
                    break;
                }
                let m =
                    semaug_backward_batch(model, scn, records, &batches[b], cfg, gamma, &mut rng)?;
                acc.push(m);
                b += 1;
            }
            if acc.n > 1 {
                let s = 1.0 / acc.n as f64;
                model.params.scale_grads(s);
                scn.params.scale_grads(s);
            }
            adam_step(&mut model.params, &mut adam_model, cfg, step)?;
            adam_step(&mut scn.params, &mut adam_scn, cfg, step)?;
            let m = acc.mean();
            reports.push(LossReport {
                step,
                total: m.total,
                mle_x: m.mle_x,
                mle_xbar: m.mle_xbar,
                sem: m.sem,
                gamma_now: gamma,
            });
            if let Some(plan) = plan {
                if cfg.checkpoint_every > 0 && step.is_multiple_of(cfg.checkpoint_every) {
                    checkpoint::save(
                        &plan.path(&format!("step{step}")),
                        &[("", &model.params), ("scn.", &scn.params)],
                    )?;
                }
            }
        }
    }
    if let Some(plan) = plan {
        checkpoint::save(
            &plan.path("final"),
            &[("", &model.params), ("scn.", &scn.params)],
        )?;
    }
    Ok(reports)
}

/// Serialize step reports as JSON lines.
pub fn reports_to_jsonl(reports: &[LossReport]) -> Result<String> {
    let mut out = String::new();
    for r in reports {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}
