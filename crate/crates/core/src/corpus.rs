//! Parallel corpus ingestion, vocabulary building, epoch planning with
//! upsampling, and the monolingual augmentation workflow.

use crate::error::{Error, Result};
use crate::sampler::{synthesize_sources, SamplerConfig, SyntheticRecord};
use crate::seq2seq::{Sentence, Seq2SeqModel, Vocab};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Real,
    Synthetic,
    MonolingualBacktranslated,
}

/// A whitespace-tokenized sentence pair, pre-vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawPair {
    pub source: Vec<String>,
    pub target: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ParallelCorpus {
    pub pairs: Vec<RawPair>,
    pub provenance: Provenance,
}

/// Pairs dropped during loading, by cause.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadStats {
    pub dropped_too_long: usize,
    pub dropped_empty: usize,
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let body = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(body.lines().map(|l| l.to_string()).collect())
}

/// Load line-aligned source/target files, whitespace-tokenizing each line.
/// Pairs where either side exceeds `max_len` tokens (or is empty) are
/// dropped, with counts reported.
pub fn load_parallel(
    src_path: &Path,
    tgt_path: &Path,
    max_len: usize,
) -> Result<(ParallelCorpus, LoadStats)> {
    let src_lines = read_lines(src_path)?;
    let tgt_lines = read_lines(tgt_path)?;
    if src_lines.len() != tgt_lines.len() {
        return Err(Error::Corpus(format!(
            "line count mismatch: {} has {} lines, {} has {}",
            src_path.display(),
            src_lines.len(),
            tgt_path.display(),
            tgt_lines.len()
        )));
    }
    let mut pairs = Vec::with_capacity(src_lines.len());
    let mut stats = LoadStats::default();
    for (s, t) in src_lines.iter().zip(&tgt_lines) {
        let source: Vec<String> = s.split_whitespace().map(|w| w.to_string()).collect();
        let target: Vec<String> = t.split_whitespace().map(|w| w.to_string()).collect();
        if source.is_empty() || target.is_empty() {
            stats.dropped_empty += 1;
            continue;
        }
        if source.len() > max_len || target.len() > max_len {
            stats.dropped_too_long += 1;
            continue;
        }
        pairs.push(RawPair { source, target });
    }
    Ok((ParallelCorpus { pairs, provenance: Provenance::Real }, stats))
}

pub fn save_parallel(corpus: &ParallelCorpus, src_path: &Path, tgt_path: &Path) -> Result<()> {
    let src: String = corpus
        .pairs
        .iter()
        .map(|p| p.source.join(" ") + "\n")
        .collect();
    let tgt: String = corpus
        .pairs
        .iter()
        .map(|p| p.target.join(" ") + "\n")
        .collect();
    fs::write(src_path, src).map_err(|e| Error::io(src_path.display().to_string(), e))?;
    fs::write(tgt_path, tgt).map_err(|e| Error::io(tgt_path.display().to_string(), e))
}

/// Frequency-ranked vocabulary over the given sentences, keeping at most
/// `max_size` entries including the four reserved ids. Frequency ties break
/// by first occurrence.
pub fn build_vocab<'a, I>(sentences: I, max_size: usize) -> Result<Vocab>
where
    I: IntoIterator<Item = &'a [String]>,
{
    if max_size <= 4 {
        return Err(Error::Vocab(format!(
            "max_size must exceed the 4 reserved ids, got {max_size}"
        )));
    }
    let mut counts: HashMap<&str, (usize, usize)> = HashMap::new(); // token -> (count, first idx)
    let mut order = 0usize;
    for sentence in sentences {
        for token in sentence {
            let e = counts.entry(token).or_insert((0, order));
            e.0 += 1;
            order += 1;
        }
    }
    let mut ranked: Vec<(&str, (usize, usize))> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1 .0.cmp(&a.1 .0).then(a.1 .1.cmp(&b.1 .1)));
    ranked.truncate(max_size - 4);
    Vocab::from_tokens(ranked.into_iter().map(|(t, _)| t.to_string()))
}

/// Encode word pairs into id sentences. Unknown words become UNK.
pub fn encode_pairs(
    corpus: &ParallelCorpus,
    src_vocab: &Vocab,
    tgt_vocab: &Vocab,
) -> Result<Vec<(Sentence, Sentence)>> {
    corpus
        .pairs
        .iter()
        .map(|p| {
            Ok((
                Sentence::new(src_vocab.encode_words(&p.source))?,
                Sentence::new(tgt_vocab.encode_words(&p.target))?,
            ))
        })
        .collect()
}

/// One epoch's record order: each index appears exactly `multiplicities[i]`
/// times, shuffled with the given generator.
pub fn epoch_order(multiplicities: &[usize], rng: &mut impl Rng) -> Vec<usize> {
    let mut order = Vec::with_capacity(multiplicities.iter().sum());
    for (i, &m) in multiplicities.iter().enumerate() {
        for _ in 0..m {
            order.push(i);
        }
    }
    order.shuffle(rng);
    order
}

/// Back-translate target-language monolingual text: synthesize the source
/// candidates for each sentence and promote the candidate with the highest
/// reverse-model log-probability to the record's real source (ties to the
/// lowest sample index).
pub fn augment_monolingual(
    target_mono: &[Sentence],
    reverse_model: &Seq2SeqModel,
    cfg: &SamplerConfig,
) -> Result<Vec<SyntheticRecord>> {
    target_mono
        .par_iter()
        .enumerate()
        .map(|(i, y)| {
            let mut record = synthesize_sources(reverse_model, y, None, i, cfg)?;
            let mut best = 0usize;
            let mut best_score = f64::NEG_INFINITY;
            for (s, candidate) in record.synthetic_sources.iter().enumerate() {
                // Reverse model scores its own output: P(candidate | y).
                let score = reverse_model.log_likelihood(y, candidate, None)?;
                if score > best_score {
                    best_score = score;
                    best = s;
                }
            }
            record.real_source = Some(record.synthetic_sources[best].clone());
            Ok(record)
        })
        .collect()
}
