//! Search-based decoding over a step function.
//!
//! Both searches are generic over the "distribution for the next token given
//! the emitted prefix" closure, so tests can drive them from hand-built
//! probability tables.

use super::vocab::{Sentence, EOS};
use crate::error::Result;

/// Distribution over the next token given the emitted prefix.
pub type StepFn<'a> = dyn FnMut(&[u32]) -> Result<Vec<f64>> + 'a;

/// A completed decode. `tokens` excludes EOS; `finished` is false when the
/// search hit its length limit before any hypothesis emitted EOS.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub tokens: Vec<u32>,
    pub finished: bool,
}

impl Decoded {
    pub fn into_sentence(self) -> Result<Sentence> {
        Sentence::new(self.tokens)
    }
}

/// `((5 + len) / 6)^alpha`.
pub fn length_penalty(len: usize, alpha: f64) -> f64 {
    ((5.0 + len as f64) / 6.0).powf(alpha)
}

fn argmax(dist: &[f64]) -> u32 {
    let mut best = 0usize;
    for (i, &p) in dist.iter().enumerate() {
        if p > dist[best] {
            best = i;
        }
    }
    best as u32
}

/// Greedy search: argmax token per step (ties to the lowest index), stopping
/// at EOS or after `max_len` emitted tokens.
pub fn greedy_with(
    mut step: impl FnMut(&[u32]) -> Result<Vec<f64>>,
    max_len: usize,
) -> Result<Decoded> {
    assert!(max_len >= 1, "max_len must be at least 1");
    let mut tokens = Vec::new();
    for _ in 0..max_len {
        let dist = step(&tokens)?;
        let tok = argmax(&dist);
        if tok == EOS {
            return Ok(Decoded { tokens, finished: true });
        }
        tokens.push(tok);
    }
    Ok(Decoded { tokens, finished: false })
}

#[derive(Debug, Clone)]
struct Hypothesis {
    tokens: Vec<u32>,
    /// Sum of step log-probabilities, including the EOS step once finished.
    score: f64,
    finished: bool,
}

impl Hypothesis {
    fn scored_steps(&self) -> usize {
        self.tokens.len() + usize::from(self.finished)
    }

    fn normalized(&self, alpha: f64) -> f64 {
        self.score / length_penalty(self.scored_steps(), alpha)
    }
}

/// Beam search maximizing `sum-log-prob / length_penalty`. Returns the best
/// finished hypothesis, or the best unfinished one (flagged) when none
/// finishes within `max_len` steps.
pub fn beam_search_with(
    mut step: impl FnMut(&[u32]) -> Result<Vec<f64>>,
    beam: usize,
    alpha: f64,
    max_len: usize,
) -> Result<Decoded> {
    assert!(beam >= 1, "beam must be at least 1");
    assert!(max_len >= 1, "max_len must be at least 1");

    let mut live = vec![Hypothesis { tokens: Vec::new(), score: 0.0, finished: false }];
    let mut finished: Vec<Hypothesis> = Vec::new();

    for _ in 0..max_len {
        let mut expansions: Vec<Hypothesis> = Vec::new();
        for hyp in &live {
            let dist = step(&hyp.tokens)?;
            for (tok, &p) in dist.iter().enumerate() {
                if p <= 0.0 {
                    continue;
                }
                let mut tokens = hyp.tokens.clone();
                let is_eos = tok as u32 == EOS;
                if !is_eos {
                    tokens.push(tok as u32);
                }
                expansions.push(Hypothesis {
                    tokens,
                    score: hyp.score + p.ln(),
                    finished: is_eos,
                });
            }
        }
        // Deterministic order: raw score descending, then shorter first,
        // then lexicographic tokens.
        expansions.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap()
                .then(a.tokens.len().cmp(&b.tokens.len()))
                .then(a.tokens.cmp(&b.tokens))
        });
        expansions.truncate(beam);
        live = Vec::new();
        for h in expansions {
            if h.finished {
                finished.push(h);
            } else {
                live.push(h);
            }
        }
        if live.is_empty() {
            break;
        }
    }

    let best_of = |pool: &[Hypothesis]| -> Option<Hypothesis> {
        pool.iter()
            .max_by(|a, b| {
                a.normalized(alpha)
                    .partial_cmp(&b.normalized(alpha))
                    .unwrap()
                    .then(b.tokens.len().cmp(&a.tokens.len()))
                    .then(b.tokens.cmp(&a.tokens))
            })
            .cloned()
    };

    if let Some(best) = best_of(&finished) {
        return Ok(Decoded { tokens: best.tokens, finished: true });
    }
    let best = best_of(&live).expect("beam search retains at least one hypothesis");
    Ok(Decoded { tokens: best.tokens, finished: false })
}
