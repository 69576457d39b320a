//! Evaluation and analysis: corpus BLEU, token edit distance, synthetic
//! corpus diversity reports, PCA projection of latents, and cluster
//! separation statistics.

use crate::error::{Error, Result};
use crate::sampler::SyntheticRecord;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Token-level Levenshtein distance (insert / delete / substitute, unit
/// costs), rolling two DP rows.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, ai) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, bj) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ai != bj);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

const MAX_NGRAM: usize = 4;

/// Corpus-level 4-gram BLEU in `[0, 100]` with the standard brevity penalty.
/// Zero higher-order precisions are smoothed add-1; a zero unigram precision
/// yields BLEU 0.
pub fn corpus_bleu(hypotheses: &[Vec<String>], references: &[Vec<String>]) -> Result<f64> {
    if hypotheses.is_empty() {
        return Err(Error::Metrics("empty corpus".into()));
    }
    if hypotheses.len() != references.len() {
        return Err(Error::Metrics(format!(
            "hypothesis/reference count mismatch: {} vs {}",
            hypotheses.len(),
            references.len()
        )));
    }
    let mut matched = [0u64; MAX_NGRAM];
    let mut total = [0u64; MAX_NGRAM];
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;
    for (hyp, reference) in hypotheses.iter().zip(references) {
        hyp_len += hyp.len();
        ref_len += reference.len();
        for n in 1..=MAX_NGRAM {
            if hyp.len() < n {
                continue;
            }
            let mut ref_counts: HashMap<&[String], u64> = HashMap::new();
            if reference.len() >= n {
                for gram in reference.windows(n) {
                    *ref_counts.entry(gram).or_default() += 1;
                }
            }
            for gram in hyp.windows(n) {
                total[n - 1] += 1;
                if let Some(c) = ref_counts.get_mut(gram) {
                    if *c > 0 {
                        *c -= 1;
                        matched[n - 1] += 1;
                    }
                }
            }
        }
    }
    if total[0] == 0 || matched[0] == 0 {
        return Ok(0.0);
    }
    let mut log_prec_sum = 0.0;
    for n in 0..MAX_NGRAM {
        let (m, t) = (matched[n], total[n]);
        let p = if n == 0 {
            m as f64 / t as f64
        } else if m == 0 {
            (m + 1) as f64 / (t + 1) as f64
        } else {
            m as f64 / t as f64
        };
        log_prec_sum += p.ln();
    }
    let geo_mean = (log_prec_sum / MAX_NGRAM as f64).exp();
    let bp = if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok(100.0 * bp * geo_mean)
}

/// Aggregate quality/diversity measurements over a synthetic corpus.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiversityReport {
    /// Mean token edit distance between each synthetic source and the real
    /// source, over all (synthetic, real) pairs.
    pub mean_syn_vs_real: f64,
    /// Mean token edit distance over all unordered synthetic pairs.
    pub mean_syn_vs_syn: f64,
    /// Corpus BLEU of all synthetic sources against their real sources.
    pub bleu_syn_doc: f64,
    pub n_records: usize,
    pub hbar: f64,
}

/// Diversity statistics of a synthetic corpus. Every record must carry its
/// real source and at least two synthetic sources.
pub fn diversity_report(records: &[SyntheticRecord], hbar: f64) -> Result<DiversityReport> {
    if records.is_empty() {
        return Err(Error::Metrics("no records".into()));
    }
    for r in records {
        if r.real_source.is_none() {
            return Err(Error::Metrics(format!(
                "record {} is missing its real source",
                r.record_index
            )));
        }
        if r.synthetic_sources.len() < 2 {
            return Err(Error::Metrics(format!(
                "record {} has fewer than 2 synthetic sources",
                r.record_index
            )));
        }
    }
    let per_record: Vec<(f64, usize, f64, usize)> = records
        .par_iter()
        .map(|r| {
            let real = r.real_source.as_ref().unwrap();
            let mut real_sum = 0.0;
            for s in &r.synthetic_sources {
                real_sum += levenshtein(s.tokens(), real.tokens()) as f64;
            }
            let n_real = r.synthetic_sources.len();
            let mut syn_sum = 0.0;
            let mut n_syn = 0usize;
            for i in 0..r.synthetic_sources.len() {
                for j in (i + 1)..r.synthetic_sources.len() {
                    syn_sum += levenshtein(
                        r.synthetic_sources[i].tokens(),
                        r.synthetic_sources[j].tokens(),
                    ) as f64;
                    n_syn += 1;
                }
            }
            (real_sum, n_real, syn_sum, n_syn)
        })
        .collect();
    let (real_sum, n_real, syn_sum, n_syn) = per_record.iter().fold(
        (0.0, 0usize, 0.0, 0usize),
        |acc, r| (acc.0 + r.0, acc.1 + r.1, acc.2 + r.2, acc.3 + r.3),
    );

    // Each synthetic sentence is a hypothesis against its real source.
    let mut hyps = Vec::new();
    let mut refs = Vec::new();
    for r in records {
        let real: Vec<String> = r
            .real_source
            .as_ref()
            .unwrap()
            .tokens()
            .iter()
            .map(|t| t.to_string())
            .collect();
        for s in &r.synthetic_sources {
            hyps.push(s.tokens().iter().map(|t| t.to_string()).collect());
            refs.push(real.clone());
        }
    }
    Ok(DiversityReport {
        mean_syn_vs_real: real_sum / n_real as f64,
        mean_syn_vs_syn: syn_sum / n_syn as f64,
        bleu_syn_doc: corpus_bleu(&hyps, &refs)?,
        n_records: records.len(),
        hbar,
    })
}

/// Mean-centered projection onto the top-k principal directions, found by
/// power iteration with deflation. Components are ordered by descending
/// eigenvalue; zero-variance input projects to all-zero coordinates.
pub fn pca_project(latents: &[Vec<f64>], k: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if latents.len() < k + 1 {
        return Err(Error::Metrics(format!(
            "need at least {} vectors for a {k}-component projection, got {}",
            k + 1,
            latents.len()
        )));
    }
    let d = latents[0].len();
    if latents.iter().any(|v| v.len() != d) {
        return Err(Error::Metrics("latent vectors have mixed dimensions".into()));
    }
    let n = latents.len();
    let mut mean = vec![0.0; d];
    for v in latents {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x / n as f64;
        }
    }
    let centered: Vec<Vec<f64>> = latents
        .iter()
        .map(|v| v.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();

    // Covariance (d x d), population normalization.
    let mut cov = vec![0.0; d * d];
    for v in &centered {
        for i in 0..d {
            if v[i] == 0.0 {
                continue;
            }
            for j in 0..d {
                cov[i * d + j] += v[i] * v[j] / n as f64;
            }
        }
    }

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut components: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut work = cov.clone();
    const TOL: f64 = 1e-10;
    const MAX_ITERS: usize = 10_000;
    for _ in 0..k {
        let mut v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        normalize(&mut v);
        let mut eigenvalue = 0.0;
        for _ in 0..MAX_ITERS {
            let mut next = vec![0.0; d];
            for i in 0..d {
                let row = &work[i * d..(i + 1) * d];
                next[i] = row.iter().zip(&v).map(|(a, b)| a * b).sum();
            }
            let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < TOL {
                // Residual variance exhausted; remaining components are zero.
                next = vec![0.0; d];
                eigenvalue = 0.0;
                v = next;
                break;
            }
            next.iter_mut().for_each(|x| *x /= norm);
            let delta: f64 = next
                .iter()
                .zip(&v)
                .map(|(a, b)| (a - b).abs().min((a + b).abs()))
                .fold(0.0, f64::max);
            v = next;
            eigenvalue = norm;
            if delta < TOL {
                break;
            }
        }
        // Deflate: work -= lambda v v^T
        for i in 0..d {
            for j in 0..d {
                work[i * d + j] -= eigenvalue * v[i] * v[j];
            }
        }
        components.push(v);
    }

    Ok(centered
        .iter()
        .map(|x| {
            components
                .iter()
                .map(|c| c.iter().zip(x).map(|(a, b)| a * b).sum())
                .collect()
        })
        .collect())
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Mean pairwise distance within groups versus across groups.
pub fn cluster_separation(groups: &[Vec<Vec<f64>>]) -> Result<(f64, f64)> {
    if groups.len() < 2 || groups.iter().any(|g| g.len() < 2) {
        return Err(Error::Metrics(
            "cluster separation needs >= 2 groups with >= 2 members each".into(),
        ));
    }
    let mut intra_sum = 0.0;
    let mut intra_n = 0usize;
    for g in groups {
        for i in 0..g.len() {
            for j in (i + 1)..g.len() {
                intra_sum += euclid(&g[i], &g[j]);
                intra_n += 1;
            }
        }
    }
    let mut inter_sum = 0.0;
    let mut inter_n = 0usize;
    for a in 0..groups.len() {
        for b in (a + 1)..groups.len() {
            for x in &groups[a] {
                for y in &groups[b] {
                    inter_sum += euclid(x, y);
                    inter_n += 1;
                }
            }
        }
    }
    Ok((intra_sum / intra_n as f64, inter_sum / inter_n as f64))
}

/// Plain-text table of a diversity report, aligned for terminal reading.
pub fn format_report_table(reports: &[DiversityReport]) -> String {
    let mut out = String::from(
        "  hbar      BLEU   SYNvsREAL   SYNvsSYN   records\n",
    );
    for r in reports {
        out.push_str(&format!(
            "{:>6.2} {:>9.2} {:>11.2} {:>10.2} {:>9}\n",
            r.hbar, r.bleu_syn_doc, r.mean_syn_vs_real, r.mean_syn_vs_syn, r.n_records
        ));
    }
    out
}
