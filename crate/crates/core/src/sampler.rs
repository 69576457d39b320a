//! Controllable sampling: entropy-thresholded token generation from a
//! reverse (target-to-source) model, producing a set of synthetic source
//! sentences per target.
//!
//! At each decoding step the predicted distribution's entropy is compared
//! against the threshold: sharp distributions take their argmax, flat ones
//! are sampled multinomially. The threshold's two limits recover greedy
//! search and plain multinomial sampling.

use crate::error::{Error, Result};
use crate::seq2seq::{Sentence, Seq2SeqModel, Vocab, BOS, EOS, PAD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Base of the logarithm used when comparing entropy to the threshold.
/// [`entropy`] itself always reports nats; `Bits` divides by ln 2 before the
/// comparison, which changes the effective threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EntropyBase {
    #[default]
    Nats,
    Bits,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Entropy threshold; distributions at least this uncertain are sampled.
    pub hbar: f64,
    /// Number of synthetic sources per target.
    pub n_samples: usize,
    pub max_len: usize,
    pub seed: u64,
    #[serde(default)]
    pub entropy_base: EntropyBase,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            hbar: 2.5,
            n_samples: 3,
            max_len: 64,
            seed: 42,
            entropy_base: EntropyBase::Nats,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hbar < 0.0 {
            return Err(Error::Sampler(format!("hbar must be >= 0, got {}", self.hbar)));
        }
        if self.n_samples < 1 {
            return Err(Error::Sampler("n_samples must be >= 1".into()));
        }
        if self.max_len < 1 {
            return Err(Error::Sampler("max_len must be >= 1".into()));
        }
        Ok(())
    }
}

/// A target sentence paired with its real source (when known) and the
/// synthetic sources generated for it.
#[derive(Debug, Clone)]
pub struct SyntheticRecord {
    pub target: Sentence,
    pub real_source: Option<Sentence>,
    pub synthetic_sources: Vec<Sentence>,
    pub record_index: usize,
    pub seed: u64,
    pub sample_seeds: Vec<u64>,
    /// Per synthetic source: true when generation hit `max_len` before EOS.
    pub truncated: Vec<bool>,
}

/// Information entropy `-sum p ln p` in nats, with `0 ln 0 = 0`.
pub fn entropy(dist: &[f64]) -> Result<f64> {
    let mut h = 0.0;
    for &p in dist {
        if p < 0.0 {
            return Err(Error::Distribution(format!("negative probability {p}")));
        }
        if p > 0.0 {
            h -= p * p.ln();
        }
    }
    Ok(h)
}

fn argmax_lowest(dist: &[f64]) -> u32 {
    let mut best = 0usize;
    for (i, &p) in dist.iter().enumerate() {
        if p > dist[best] {
            best = i;
        }
    }
    best as u32
}

fn multinomial(dist: &[f64], rng: &mut impl Rng) -> u32 {
    let total: f64 = dist.iter().sum();
    let u: f64 = rng.gen_range(0.0..1.0) * total;
    let mut acc = 0.0;
    for (i, &p) in dist.iter().enumerate() {
        acc += p;
        if u < acc {
            return i as u32;
        }
    }
    // Rounding can push the final accumulation below u; fall back to the
    // last positive entry.
    dist.iter()
        .rposition(|&p| p > 0.0)
        .map(|i| i as u32)
        .unwrap_or(0)
}

/// One controllable-sampling decision: multinomial draw when the
/// distribution's entropy reaches `hbar`, argmax (ties to the lowest index)
/// otherwise.
pub fn controllable_step(dist: &[f64], hbar: f64, rng: &mut impl Rng) -> Result<u32> {
    controllable_step_in_base(dist, hbar, EntropyBase::Nats, rng)
}

pub fn controllable_step_in_base(
    dist: &[f64],
    hbar: f64,
    base: EntropyBase,
    rng: &mut impl Rng,
) -> Result<u32> {
    let mut eps = entropy(dist)?;
    if base == EntropyBase::Bits {
        eps /= std::f64::consts::LN_2;
    }
    if eps >= hbar {
        Ok(multinomial(dist, rng))
    } else {
        Ok(argmax_lowest(dist))
    }
}

/// Deterministic per-sequence stream: one independent generator per
/// (corpus seed, record index, sample index) triple.
pub fn sample_rng(seed: u64, record_index: usize, sample_index: usize) -> ChaCha12Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(record_index as u64).to_le_bytes());
    key[16..24].copy_from_slice(&(sample_index as u64).to_le_bytes());
    key[24..32].copy_from_slice(b"ctrlsamp");
    ChaCha12Rng::from_seed(key)
}

fn sample_seed(seed: u64, record_index: usize, sample_index: usize) -> u64 {
    // Stable tag of the derived stream, recorded alongside each sentence.
    let mut x = seed
        .wrapping_mul(0x9e3779b97f4a7c15)
        .wrapping_add(record_index as u64)
        .wrapping_mul(0xbf58476d1ce4e5b9)
        .wrapping_add(sample_index as u64);
    x ^= x >> 31;
    x.wrapping_mul(0x94d049bb133111eb)
}

/// Generate one synthetic source for `y` with controllable sampling at every
/// position. Returns the tokens and whether the sequence was truncated.
fn synthesize_one(
    reverse_model: &Seq2SeqModel,
    memory: &crate::tensor::Tensor,
    cfg: &SamplerConfig,
    rng: &mut impl Rng,
) -> Result<(Vec<u32>, bool)> {
    let mut step = reverse_model.step_fn(memory);
    let mut tokens: Vec<u32> = Vec::new();
    for _ in 0..cfg.max_len {
        let dist = step(&tokens)?;
        let tok = controllable_step_in_base(&dist, cfg.hbar, cfg.entropy_base, rng)?;
        debug_assert!(tok != PAD && tok != BOS, "reserved token emitted");
        if tok == EOS {
            if tokens.is_empty() {
                // An empty source is not a sentence; represent the
                // degenerate case as a lone EOS-adjacent UNK.
                tokens.push(crate::seq2seq::UNK);
            }
            return Ok((tokens, false));
        }
        tokens.push(tok);
    }
    Ok((tokens, true))
}

/// Generate the `n_samples` synthetic sources for one target sentence. Each
/// sample draws from its own rng stream derived from
/// (seed, record index, sample index), so records are reproducible in
/// isolation and in parallel.
pub fn synthesize_sources(
    reverse_model: &Seq2SeqModel,
    y: &Sentence,
    real_source: Option<Sentence>,
    record_index: usize,
    cfg: &SamplerConfig,
) -> Result<SyntheticRecord> {
    cfg.validate()?;
    let memory = reverse_model.encode(y)?;
    let mut synthetic_sources = Vec::with_capacity(cfg.n_samples);
    let mut truncated = Vec::with_capacity(cfg.n_samples);
    let mut sample_seeds = Vec::with_capacity(cfg.n_samples);
    for s in 0..cfg.n_samples {
        let mut rng = sample_rng(cfg.seed, record_index, s);
        let (tokens, was_truncated) = synthesize_one(reverse_model, &memory, cfg, &mut rng)?;
        synthetic_sources.push(Sentence::new(tokens)?);
        truncated.push(was_truncated);
        sample_seeds.push(sample_seed(cfg.seed, record_index, s));
    }
    Ok(SyntheticRecord {
        target: y.clone(),
        real_source,
        synthetic_sources,
        record_index,
        seed: cfg.seed,
        sample_seeds,
        truncated,
    })
}

/// Synthesize records for a whole corpus, fanning out across worker threads
/// with a deterministic merge order.
pub fn synthesize_corpus(
    reverse_model: &Seq2SeqModel,
    targets: &[(Sentence, Option<Sentence>)],
    cfg: &SamplerConfig,
) -> Result<Vec<SyntheticRecord>> {
    targets
        .par_iter()
        .enumerate()
        .map(|(i, (y, real))| synthesize_sources(reverse_model, y, real.clone(), i, cfg))
        .collect()
}

// ── JSON-lines persistence ───────────────────────────────────────────

/// Wire form of a record: token strings, stable field order.
#[derive(Debug, Serialize, Deserialize)]
struct RecordWire {
    target: Vec<String>,
    real_source: Option<Vec<String>>,
    synthetic_sources: Vec<Vec<String>>,
    seed: u64,
    record_index: usize,
    sample_seeds: Vec<u64>,
    truncated: Vec<bool>,
}

pub fn records_to_jsonl(
    records: &[SyntheticRecord],
    tgt_vocab: &Vocab,
    src_vocab: &Vocab,
) -> Result<String> {
    let mut out = String::new();
    for r in records {
        let wire = RecordWire {
            target: tgt_vocab.decode_ids(r.target.tokens()),
            real_source: r
                .real_source
                .as_ref()
                .map(|s| src_vocab.decode_ids(s.tokens())),
            synthetic_sources: r
                .synthetic_sources
                .iter()
                .map(|s| src_vocab.decode_ids(s.tokens()))
                .collect(),
            seed: r.seed,
            record_index: r.record_index,
            sample_seeds: r.sample_seeds.clone(),
            truncated: r.truncated.clone(),
        };
        out.push_str(&serde_json::to_string(&wire)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn records_from_jsonl(
    body: &str,
    tgt_vocab: &Vocab,
    src_vocab: &Vocab,
) -> Result<Vec<SyntheticRecord>> {
    let mut records = Vec::new();
    for line in body.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let wire: RecordWire = serde_json::from_str(line)?;
        let target = Sentence::new(tgt_vocab.encode_words(&wire.target))?;
        let real_source = match wire.real_source {
            Some(words) => Some(Sentence::new(src_vocab.encode_words(&words))?),
            None => None,
        };
        let synthetic_sources = wire
            .synthetic_sources
            .iter()
            .map(|words| Sentence::new(src_vocab.encode_words(words)))
            .collect::<Result<Vec<_>>>()?;
        records.push(SyntheticRecord {
            target,
            real_source,
            synthetic_sources,
            record_index: wire.record_index,
            seed: wire.seed,
            sample_seeds: wire.sample_seeds,
            truncated: wire.truncated,
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn entropy_of_uniform_is_log_n() {
        let h = entropy(&[0.25; 4]).unwrap();
        assert!((h - 4.0f64.ln()).abs() < 1e-12, "{h}");
    }

    #[test]
    fn entropy_of_one_hot_is_zero() {
        assert_eq!(entropy(&[0.0, 1.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn entropy_of_half_half_is_ln_two() {
        let h = entropy(&[0.5, 0.5, 0.0, 0.0]).unwrap();
        assert!((h - 2.0f64.ln()).abs() < 1e-12, "{h}");
    }

    #[test]
    fn negative_probability_is_an_error() {
        assert!(entropy(&[0.5, -0.1, 0.6]).is_err());
    }

    #[test]
    fn huge_threshold_is_always_argmax() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let dist = [0.1, 0.2, 0.4, 0.3];
        for _ in 0..100 {
            assert_eq!(controllable_step(&dist, 1e9, &mut rng).unwrap(), 2);
        }
    }

    #[test]
    fn sharp_distribution_below_threshold_is_deterministic() {
        // entropy([0.97, 0.01, 0.01, 0.01]) = 0.168 < 2.5
        let dist = [0.97, 0.01, 0.01, 0.01];
        let eps = entropy(&dist).unwrap();
        assert!((eps - 0.1677).abs() < 1e-3, "{eps}");
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        for _ in 0..200 {
            assert_eq!(controllable_step(&dist, 2.5, &mut rng).unwrap(), 0);
        }
    }

    #[test]
    fn zero_threshold_samples_uniformly() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let dist = [0.25; 4];
        let n = 100_000usize;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[controllable_step(&dist, 0.0, &mut rng).unwrap() as usize] += 1;
        }
        for &c in &counts {
            let freq = c as f64 / n as f64;
            assert!((freq - 0.25).abs() < 0.01, "frequency {freq}");
        }
    }

    #[test]
    fn argmax_ties_break_to_lowest_index() {
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let dist = [0.3, 0.4, 0.4, 0.0]; // entropy ~1.06 < 2.5
        assert_eq!(controllable_step(&dist, 2.5, &mut rng).unwrap(), 1);
    }

    #[test]
    fn bits_base_rescales_the_threshold() {
        // entropy([0.5, 0.5]) = 1 bit = 0.693 nats. Threshold 0.9:
        // in nats the argmax branch fires, in bits the sampling branch does.
        let dist = [0.5, 0.5];
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let nats_tok = controllable_step_in_base(&dist, 0.9, EntropyBase::Nats, &mut rng).unwrap();
        assert_eq!(nats_tok, 0);
        let mut hits = [0usize; 2];
        for _ in 0..64 {
            let t = controllable_step_in_base(&dist, 0.9, EntropyBase::Bits, &mut rng).unwrap();
            hits[t as usize] += 1;
        }
        assert!(hits[0] > 0 && hits[1] > 0, "bits threshold should sample: {hits:?}");
    }

    fn tiny_reverse_model(seed: u64) -> Seq2SeqModel {
        use crate::seq2seq::ModelConfig;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        Seq2SeqModel::new(
            ModelConfig {
                src_vocab: 10,
                tgt_vocab: 10,
                d_model: 16,
                n_heads: 2,
                n_enc_layers: 1,
                n_dec_layers: 1,
                d_ff: 32,
                max_len: 32,
            },
            &mut rng,
        )
    }

    fn sent(tokens: &[u32]) -> Sentence {
        Sentence::new(tokens.to_vec()).unwrap()
    }

    #[test]
    fn synthesize_produces_exactly_n_samples() {
        let model = tiny_reverse_model(1);
        let cfg = SamplerConfig { n_samples: 3, max_len: 8, seed: 9, ..SamplerConfig::default() };
        let rec = synthesize_sources(&model, &sent(&[4, 5, 6]), None, 0, &cfg).unwrap();
        assert_eq!(rec.synthetic_sources.len(), 3);
        assert_eq!(rec.truncated.len(), 3);
        assert_eq!(rec.sample_seeds.len(), 3);
    }

    #[test]
    fn greedy_limit_makes_all_samples_identical() {
        let model = tiny_reverse_model(2);
        let cfg = SamplerConfig {
            hbar: 1e9,
            n_samples: 3,
            max_len: 8,
            seed: 11,
            ..SamplerConfig::default()
        };
        let rec = synthesize_sources(&model, &sent(&[4, 5]), None, 0, &cfg).unwrap();
        assert_eq!(rec.synthetic_sources[0], rec.synthetic_sources[1]);
        assert_eq!(rec.synthetic_sources[1], rec.synthetic_sources[2]);
    }

    #[test]
    fn synthesis_is_bitwise_reproducible() {
        let model = tiny_reverse_model(3);
        let cfg = SamplerConfig { hbar: 0.0, n_samples: 3, max_len: 8, seed: 5, ..SamplerConfig::default() };
        let y = sent(&[4, 5, 6, 7]);
        let a = synthesize_sources(&model, &y, None, 2, &cfg).unwrap();
        let b = synthesize_sources(&model, &y, None, 2, &cfg).unwrap();
        assert_eq!(a.synthetic_sources, b.synthetic_sources);
        assert_eq!(a.truncated, b.truncated);
        assert_eq!(a.sample_seeds, b.sample_seeds);
    }

    #[test]
    fn emitted_tokens_are_valid_and_never_reserved_input_markers() {
        let model = tiny_reverse_model(4);
        let cfg = SamplerConfig { hbar: 0.0, n_samples: 4, max_len: 10, seed: 3, ..SamplerConfig::default() };
        for (i, y) in [[4u32, 5].as_slice(), &[6, 7, 8], &[9, 4, 5]].iter().enumerate() {
            let rec = synthesize_sources(&model, &sent(y), None, i, &cfg).unwrap();
            for s in &rec.synthetic_sources {
                for &t in s.tokens() {
                    assert!(t != PAD && t != BOS, "reserved token {t} emitted");
                    assert!((t as usize) < 10, "token {t} out of range");
                }
            }
        }
    }

    #[test]
    fn jsonl_roundtrip_preserves_records_and_field_order() {
        use crate::seq2seq::Vocab;
        let model = tiny_reverse_model(5);
        let cfg = SamplerConfig { hbar: 0.0, n_samples: 2, max_len: 6, seed: 21, ..SamplerConfig::default() };
        let vocab = Vocab::from_tokens((0..6).map(|i| format!("tok{i}"))).unwrap();
        let y = sent(&[4, 5]);
        let real = Some(sent(&[5, 4]));
        let rec = synthesize_sources(&model, &y, real, 0, &cfg).unwrap();
        let jsonl = records_to_jsonl(&[rec], &vocab, &vocab).unwrap();
        let line = jsonl.lines().next().unwrap();
        // Stable field order for diff-ability.
        let t = line.find("\"target\"").unwrap();
        let r = line.find("\"real_source\"").unwrap();
        let s = line.find("\"synthetic_sources\"").unwrap();
        let d = line.find("\"seed\"").unwrap();
        let f = line.find("\"truncated\"").unwrap();
        assert!(t < r && r < s && s < d && d < f, "{line}");

        let back = records_from_jsonl(&jsonl, &vocab, &vocab).unwrap();
        assert_eq!(back.len(), 1);
        let again = records_to_jsonl(&back, &vocab, &vocab).unwrap();
        assert_eq!(jsonl, again);
    }

    #[test]
    fn multinomial_branch_count_is_monotone_in_hbar() {
        // For a fixed trajectory of entropies, the number of positions where
        // the sampling branch fires never increases with hbar.
        let entropies = [0.1, 2.4, 3.0, 0.7, 2.5, 1.9, 4.2];
        let count = |hbar: f64| entropies.iter().filter(|&&e| e >= hbar).count();
        let thresholds = [0.0, 0.5, 1.0, 2.0, 2.5, 3.0, 5.0, 1e9];
        for pair in thresholds.windows(2) {
            assert!(count(pair[0]) >= count(pair[1]));
        }
    }
}
