//! Bundled toy benchmarks.
//!
//! Two generators: a plain copy task for convergence checks, and a
//! paraphrase task in which every target sentence has many rule-generated
//! equivalent sources (a leading style particle drawn from a large shared
//! pool, synonym substitution, and clause reorder). The paraphrase task
//! gives ground-truth semantic clusters, and the particle position is the
//! one place where a well-trained reverse model stays genuinely uncertain.

use crate::corpus::{ParallelCorpus, Provenance, RawPair};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// A generated corpus plus the semantic group of each pair.
#[derive(Debug, Clone)]
pub struct ToyTask {
    pub corpus: ParallelCorpus,
    /// Cluster id per pair (all zero for the copy task).
    pub groups: Vec<usize>,
}

/// Random sequences copied source-to-target.
pub fn gen_copy_task(n_pairs: usize, vocab_size: usize, seed: u64) -> ToyTask {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let words: Vec<String> = (0..vocab_size).map(|i| format!("w{i}")).collect();
    let mut pairs = Vec::with_capacity(n_pairs);
    for _ in 0..n_pairs {
        let len = rng.gen_range(3..=6);
        let sent: Vec<String> = (0..len)
            .map(|_| words[rng.gen_range(0..words.len())].clone())
            .collect();
        pairs.push(RawPair { source: sent.clone(), target: sent });
    }
    ToyTask {
        corpus: ParallelCorpus { pairs, provenance: Provenance::Real },
        groups: vec![0; n_pairs],
    }
}

/// Twenty interchangeable sentence-initial particles, shared by every
/// meaning. Their conditional distribution stays near-uniform after
/// training, so moderate entropy thresholds sample there and nowhere else.
pub const PARTICLES: [&str; 20] = [
    "well", "so", "now", "look", "see", "right", "okay", "then", "hey", "oh",
    "ah", "um", "say", "yes", "hm", "mm", "ha", "eh", "yo", "lo",
];

struct Meaning {
    subjects: [&'static str; 3],
    verbs: [&'static str; 2],
    objects: [&'static str; 2],
    modifier: &'static str,
    target: [&'static str; 3],
}

const MEANINGS: [Meaning; 6] = [
    Meaning {
        subjects: ["cat", "feline", "kitty"],
        verbs: ["chases", "hunts"],
        objects: ["mice", "rodents"],
        modifier: "nightly",
        target: ["katze", "jagt", "mause"],
    },
    Meaning {
        subjects: ["dog", "hound", "pup"],
        verbs: ["guards", "watches"],
        objects: ["house", "home"],
        modifier: "loyally",
        target: ["hund", "bewacht", "haus"],
    },
    Meaning {
        subjects: ["bird", "sparrow", "finch"],
        verbs: ["sings", "chirps"],
        objects: ["songs", "tunes"],
        modifier: "sweetly",
        target: ["vogel", "singt", "lieder"],
    },
    Meaning {
        subjects: ["fish", "trout", "carp"],
        verbs: ["swims", "glides"],
        objects: ["river", "stream"],
        modifier: "swiftly",
        target: ["fisch", "schwimmt", "fluss"],
    },
    Meaning {
        subjects: ["horse", "mare", "stallion"],
        verbs: ["pulls", "drags"],
        objects: ["cart", "wagon"],
        modifier: "daily",
        target: ["pferd", "zieht", "wagen"],
    },
    Meaning {
        subjects: ["bee", "wasp", "hornet"],
        verbs: ["makes", "crafts"],
        objects: ["honey", "nectar"],
        modifier: "busily",
        target: ["biene", "macht", "honig"],
    },
];

/// Number of semantic clusters in the paraphrase task.
pub const N_MEANINGS: usize = MEANINGS.len();

fn pick<'a>(options: &[&'a str], weights: &[f64], rng: &mut impl Rng) -> &'a str {
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen_range(0.0..1.0) * total;
    for (opt, &w) in options.iter().zip(weights) {
        if u < w {
            return opt;
        }
        u -= w;
    }
    options[options.len() - 1]
}

/// Paraphrase corpus: `pairs_per_meaning` source variants per meaning, each
/// `particle subject verb object modifier` or the clause-reordered
/// `particle object modifier subject verb`. Synonym choices are skewed so
/// greedy back-translation recovers the majority variant more often than a
/// random sample does. Particles cycle round-robin, keeping their empirical
/// distribution flat.
pub fn gen_paraphrase_task(pairs_per_meaning: usize, seed: u64) -> ToyTask {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut pairs = Vec::new();
    let mut groups = Vec::new();
    let mut particle_idx = 0usize;
    for (m, meaning) in MEANINGS.iter().enumerate() {
        for _ in 0..pairs_per_meaning {
            let particle = PARTICLES[particle_idx % PARTICLES.len()];
            particle_idx += 1;
            let subj = pick(&meaning.subjects, &[0.55, 0.30, 0.15], &mut rng);
            let verb = pick(&meaning.verbs, &[0.65, 0.35], &mut rng);
            let obj = pick(&meaning.objects, &[0.60, 0.40], &mut rng);
            let clause_a = [subj, verb];
            let clause_b = [obj, meaning.modifier];
            let flip = rng.gen_range(0.0..1.0) < 0.30;
            let mut source = vec![particle.to_string()];
            let (first, second) = if flip {
                (clause_b, clause_a)
            } else {
                (clause_a, clause_b)
            };
            source.extend(first.iter().map(|w| w.to_string()));
            source.extend(second.iter().map(|w| w.to_string()));
            let target: Vec<String> = meaning.target.iter().map(|w| w.to_string()).collect();
            pairs.push(RawPair { source, target });
            groups.push(m);
        }
    }
    ToyTask {
        corpus: ParallelCorpus { pairs, provenance: Provenance::Real },
        groups,
    }
}
