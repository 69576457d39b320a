//! Command-line pipeline: toy corpus generation, vocabulary building, the
//! two pretraining phases, synthesis, semantic-augmentation training,
//! translation, and the analysis commands.

use crate::checkpoint;
use crate::corpus;
use crate::error::{Error, Result};
use crate::manifest::{entry_for, Manifest};
use crate::metrics;
use crate::sampler::{self, SamplerConfig, SyntheticRecord};
use crate::scn::{LatentMode, Scn, ScnConfig};
use crate::seq2seq::{ModelConfig, Sentence, Seq2SeqModel, Vocab};
use crate::toy;
use crate::trainer::{self, CheckpointPlan, TrainConfig};
use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

pub const SEED_ENV: &str = "SEMAUG_SEED";

/// Full run configuration: model dimensions, semantic network shape, and
/// training hyperparameters. Stored as a single JSON file; command-line
/// flags override file values.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub scn: ScnConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let body = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let cfg: RunConfig = serde_json::from_str(&body)?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    fn load_or_default(path: Option<&PathBuf>) -> Result<Self> {
        match path {
            Some(p) => RunConfig::load(p),
            None => Ok(RunConfig::default()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "semaug",
    about = "Uncertainty-aware semantic augmentation for desk-scale translation models",
    version
)]
struct Cli {
    /// Re-run even when the manifest says the step is up to date.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ToyKind {
    Copy,
    Paraphrase,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a bundled toy corpus (copy or paraphrase task).
    GenToy {
        #[arg(long, value_enum)]
        task: ToyKind,
        #[arg(long)]
        out_dir: PathBuf,
        /// Copy task: total pairs. Paraphrase task: pairs per meaning.
        #[arg(long, default_value_t = 64)]
        pairs: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Build source and target vocabularies from a parallel corpus.
    BuildVocab {
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        tgt: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 4096)]
        max_size: usize,
    },
    /// MLE-pretrain the forward (source-to-target) translator.
    TrainForward(TrainArgs),
    /// MLE-pretrain the reverse (target-to-source) translator.
    TrainReverse(TrainArgs),
    /// Synthesize source sentences for each target via controllable sampling.
    Synthesize {
        /// Target-language text, one sentence per line.
        #[arg(long)]
        tgt: PathBuf,
        /// Real source text aligned with --tgt; omit for monolingual targets.
        #[arg(long)]
        real_src: Option<PathBuf>,
        #[arg(long)]
        reverse_ckpt: PathBuf,
        /// Config written by train-reverse (model dimensions).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        src_vocab: PathBuf,
        #[arg(long)]
        tgt_vocab: PathBuf,
        #[arg(long, default_value_t = 2.5)]
        hbar: f64,
        #[arg(long, default_value_t = 3)]
        num_samples: usize,
        #[arg(long, default_value_t = 24)]
        max_len: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train under the regularized objective on a synthetic corpus.
    TrainSemaug {
        /// Synthetic records from `synthesize` (bilingual; upsampled).
        #[arg(long)]
        records: PathBuf,
        /// Additional monolingual-backtranslated records (never upsampled).
        #[arg(long)]
        mono_records: Option<PathBuf>,
        /// Each bilingual record appears this many times per epoch.
        #[arg(long, default_value_t = 1)]
        upsample_rate: usize,
        /// MLE-pretrained forward checkpoint to initialize from.
        #[arg(long)]
        init_ckpt: PathBuf,
        #[arg(long)]
        src_vocab: PathBuf,
        #[arg(long)]
        tgt_vocab: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        /// Weight of the real-source loss; the synthetic weight is derived
        /// as 1 - lambda1.
        #[arg(long)]
        lambda1: Option<f64>,
        #[arg(long)]
        gamma_ramp_start: Option<u64>,
        #[arg(long)]
        gamma_ramp_steps: Option<u64>,
        #[arg(long)]
        max_steps: Option<u64>,
        #[arg(long)]
        batch_tokens: Option<usize>,
        #[arg(long)]
        label_smoothing: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Decode a file with beam search.
    Translate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        src_vocab: PathBuf,
        #[arg(long)]
        tgt_vocab: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Output path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        beam: usize,
        #[arg(long, default_value_t = 0.6)]
        length_penalty: f64,
        #[arg(long, default_value_t = 32)]
        max_len: usize,
    },
    /// Corpus BLEU of a hypothesis file against a reference file.
    EvalBleu {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
    },
    /// Quality/diversity report over a synthetic corpus.
    AnalyzeDiversity {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        src_vocab: PathBuf,
        #[arg(long)]
        tgt_vocab: PathBuf,
        /// Threshold to tag the report with (informational).
        #[arg(long, default_value_t = 2.5)]
        hbar: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export deterministic-mode latents of source sentences as CSV.
    ExportLatents {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        src_vocab: PathBuf,
        /// Group ids, one per line, aligned with --src.
        #[arg(long)]
        groups: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Project exported latents to k dimensions.
    Pca {
        #[arg(long)]
        latents: PathBuf,
        #[arg(long, default_value_t = 2)]
        components: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, clap::Args)]
struct TrainArgs {
    #[arg(long)]
    src: PathBuf,
    #[arg(long)]
    tgt: PathBuf,
    #[arg(long)]
    src_vocab: PathBuf,
    #[arg(long)]
    tgt_vocab: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    max_steps: Option<u64>,
    #[arg(long)]
    batch_tokens: Option<usize>,
    #[arg(long)]
    label_smoothing: Option<f64>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

/// Entry point used by the binary. Returns the process exit code: 0 on
/// success, 1 on a failed precondition or runtime error, 2 on usage errors.
pub fn dispatch(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn resolve_seed(flag: Option<u64>, config_seed: u64) -> u64 {
    if let Some(s) = flag {
        return s;
    }
    if let Ok(v) = std::env::var(SEED_ENV) {
        if let Ok(s) = v.parse() {
            return s;
        }
    }
    config_seed
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))
}

fn write_text(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).map_err(|e| Error::io(path.display().to_string(), e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))
}

fn parent_dir(path: &Path) -> PathBuf {
    path.parent()
        .map(|p| p.to_path_buf())
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| PathBuf::from("."))
}

fn require_file(path: &Path, phase: &str, what: &str) -> Result<()> {
    if !path.exists() {
        return Err(Error::MissingPrerequisite {
            phase: phase.to_string(),
            detail: format!("{what} not found at {}", path.display()),
        });
    }
    Ok(())
}

/// Skip-or-record wrapper around one manifest-tracked step.
#[allow(clippy::too_many_arguments)]
fn with_manifest(
    out_dir: &Path,
    key: &str,
    config_json: &str,
    seed: u64,
    inputs: &[&Path],
    outputs: &[&Path],
    force: bool,
    run: impl FnOnce() -> Result<()>,
) -> Result<()> {
    ensure_dir(out_dir)?;
    let mut manifest = Manifest::load(out_dir)?;
    let entry = entry_for(config_json, seed, inputs, outputs)?;
    if !force && manifest.is_up_to_date(key, &entry) {
        println!("{key}: up to date, skipping (use --force to re-run)");
        return Ok(());
    }
    run()?;
    // Hash outputs now that they exist; the entry itself keys on inputs.
    manifest.record(key, entry);
    manifest.save(out_dir)
}

fn load_sentences(path: &Path, vocab: &Vocab) -> Result<Vec<Sentence>> {
    read_text(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let words: Vec<String> = l.split_whitespace().map(|w| w.to_string()).collect();
            Sentence::from_words(vocab, &words)
        })
        .collect()
}

fn load_model(
    cfg: &RunConfig,
    ckpt_path: &Path,
    phase: &str,
) -> Result<(Seq2SeqModel, Option<Scn>)> {
    require_file(ckpt_path, phase, "checkpoint")?;
    let flat = checkpoint::load(ckpt_path)?;
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.train.seed);
    let mut model = Seq2SeqModel::new(cfg.model.clone(), &mut rng);
    model
        .params
        .load_values(&checkpoint::extract_prefixed(&flat, ""))?;
    let has_scn = flat.names().any(|n| n.starts_with("scn."));
    let scn = if has_scn {
        let mut scn = Scn::new(cfg.scn.clone(), cfg.model.d_model, &mut rng);
        scn.params
            .load_values(&checkpoint::extract_prefixed(&flat, "scn."))?;
        Some(scn)
    } else {
        None
    };
    Ok((model, scn))
}

/// Encoder memory for decoding: fused with the deterministic latent when a
/// semantic network is available, raw otherwise.
fn decode_memory(model: &Seq2SeqModel, scn: Option<&Scn>, x: &Sentence) -> Result<crate::tensor::Tensor> {
    let h = model.encode(x)?;
    match scn {
        None => Ok(h),
        Some(scn) => {
            let mut rng = ChaCha12Rng::seed_from_u64(0);
            let state = scn.state(&h, LatentMode::Deterministic, &mut rng)?;
            scn.fuse(&state.z, &h)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let force = cli.force;
    match cli.command {
        Command::GenToy { task, out_dir, pairs, seed } => {
            let seed = resolve_seed(seed, 42);
            let src = out_dir.join("train.src");
            let tgt = out_dir.join("train.tgt");
            let groups = out_dir.join("groups.txt");
            let args = format!("{{\"task\":\"{task:?}\",\"pairs\":{pairs},\"seed\":{seed}}}");
            with_manifest(&out_dir, "gen-toy", &args, seed, &[], &[&src, &tgt, &groups], force, || {
                let t = match task {
                    ToyKind::Copy => toy::gen_copy_task(pairs, 12, seed),
                    ToyKind::Paraphrase => toy::gen_paraphrase_task(pairs, seed),
                };
                corpus::save_parallel(&t.corpus, &src, &tgt)?;
                let body: String = t.groups.iter().map(|g| format!("{g}\n")).collect();
                write_text(&groups, &body)?;
                println!(
                    "wrote {} pairs to {} / {}",
                    t.corpus.pairs.len(),
                    src.display(),
                    tgt.display()
                );
                Ok(())
            })
        }
        Command::BuildVocab { src, tgt, out_dir, max_size } => {
            let src_out = out_dir.join("vocab.src.txt");
            let tgt_out = out_dir.join("vocab.tgt.txt");
            let args = format!("{{\"max_size\":{max_size}}}");
            with_manifest(
                &out_dir,
                "build-vocab",
                &args,
                0,
                &[&src, &tgt],
                &[&src_out, &tgt_out],
                force,
                || {
                    let (corpus, stats) = corpus::load_parallel(&src, &tgt, usize::MAX)?;
                    if stats.dropped_empty > 0 {
                        println!("dropped {} empty-line pairs", stats.dropped_empty);
                    }
                    let sv = corpus::build_vocab(
                        corpus.pairs.iter().map(|p| p.source.as_slice()),
                        max_size,
                    )?;
                    let tv = corpus::build_vocab(
                        corpus.pairs.iter().map(|p| p.target.as_slice()),
                        max_size,
                    )?;
                    sv.save(&src_out)?;
                    tv.save(&tgt_out)?;
                    println!("source vocab {} entries, target vocab {}", sv.size(), tv.size());
                    Ok(())
                },
            )
        }
        Command::TrainForward(args) => train_mle_command(args, false, force),
        Command::TrainReverse(args) => train_mle_command(args, true, force),
        Command::Synthesize {
            tgt,
            real_src,
            reverse_ckpt,
            config,
            src_vocab,
            tgt_vocab,
            hbar,
            num_samples,
            max_len,
            seed,
            out,
        } => {
            let run_cfg = RunConfig::load(&config)?;
            let seed = resolve_seed(seed, run_cfg.train.seed);
            let sampler_cfg = SamplerConfig {
                hbar,
                n_samples: num_samples,
                max_len,
                seed,
                ..SamplerConfig::default()
            };
            sampler_cfg.validate()?;
            let cfg_json = serde_json::to_string(&sampler_cfg)?;
            let out_dir = parent_dir(&out);
            let mut inputs: Vec<&Path> = vec![&tgt, &reverse_ckpt, &config, &src_vocab, &tgt_vocab];
            if let Some(rs) = &real_src {
                inputs.push(rs);
            }
            with_manifest(&out_dir, "synthesize", &cfg_json, seed, &inputs, &[&out], force, || {
                let sv = Vocab::load(&src_vocab)?;
                let tv = Vocab::load(&tgt_vocab)?;
                let (reverse_model, _) = load_model(&run_cfg, &reverse_ckpt, "synthesize")?;
                let targets = load_sentences(&tgt, &tv)?;
                println!(
                    "synthesizing {} sources per target for {} sentences (hbar {hbar})",
                    num_samples,
                    targets.len()
                );
                let records: Vec<SyntheticRecord> = match &real_src {
                    Some(rs) => {
                        let reals = load_sentences(rs, &sv)?;
                        if reals.len() != targets.len() {
                            return Err(Error::Corpus(format!(
                                "line count mismatch: {} targets vs {} real sources",
                                targets.len(),
                                reals.len()
                            )));
                        }
                        let paired: Vec<(Sentence, Option<Sentence>)> = targets
                            .into_iter()
                            .zip(reals.into_iter().map(Some))
                            .collect();
                        sampler::synthesize_corpus(&reverse_model, &paired, &sampler_cfg)?
                    }
                    None => corpus::augment_monolingual(&targets, &reverse_model, &sampler_cfg)?,
                };
                write_text(&out, &sampler::records_to_jsonl(&records, &tv, &sv)?)?;
                println!("wrote {} records to {}", records.len(), out.display());
                Ok(())
            })
        }
        Command::TrainSemaug {
            records,
            mono_records,
            upsample_rate,
            init_ckpt,
            src_vocab,
            tgt_vocab,
            config,
            out_dir,
            lambda1,
            gamma_ramp_start,
            gamma_ramp_steps,
            max_steps,
            batch_tokens,
            label_smoothing,
            seed,
        } => {
            if upsample_rate < 1 {
                return Err(Error::Config("upsample_rate must be >= 1".into()));
            }
            let mut cfg = RunConfig::load_or_default(config.as_ref())?;
            if let Some(l1) = lambda1 {
                cfg.train.set_lambda1(l1);
                println!("lambda1 = {l1} implies lambda2 = {}", cfg.train.lambda2);
            }
            if let Some(v) = gamma_ramp_start {
                cfg.train.gamma_ramp_start = v;
            }
            if let Some(v) = gamma_ramp_steps {
                cfg.train.gamma_ramp_steps = v;
            }
            if let Some(v) = max_steps {
                cfg.train.max_steps = v;
            }
            if let Some(v) = batch_tokens {
                cfg.train.batch_tokens = v;
            }
            if let Some(v) = label_smoothing {
                cfg.train.label_smoothing = v;
            }
            cfg.train.seed = resolve_seed(seed, cfg.train.seed);
            cfg.train.validate()?;

            require_file(&init_ckpt, "semaug", "MLE-initialized checkpoint")?;
            require_file(&records, "semaug", "synthetic corpus")?;

            let sv = Vocab::load(&src_vocab)?;
            let tv = Vocab::load(&tgt_vocab)?;
            cfg.model.src_vocab = sv.size();
            cfg.model.tgt_vocab = tv.size();
            cfg.train.lr_d_model = cfg.model.d_model;

            let cfg_json = serde_json::to_string_pretty(&cfg)?;
            let ckpt_out = out_dir.join("semaug_final.ckpt");
            let loss_out = out_dir.join("semaug_loss.jsonl");
            let cfg_out = out_dir.join("semaug_config.json");
            let mut inputs: Vec<&Path> = vec![&records, &init_ckpt, &src_vocab, &tgt_vocab];
            if let Some(m) = &mono_records {
                inputs.push(m);
            }
            with_manifest(
                &out_dir,
                "train-semaug",
                &cfg_json,
                cfg.train.seed,
                &inputs,
                &[&ckpt_out, &loss_out, &cfg_out],
                force,
                || {
                    let mut all = sampler::records_from_jsonl(&read_text(&records)?, &tv, &sv)?;
                    let mut mult = vec![upsample_rate; all.len()];
                    if let Some(m) = &mono_records {
                        let mono = sampler::records_from_jsonl(&read_text(m)?, &tv, &sv)?;
                        mult.extend(vec![1usize; mono.len()]);
                        all.extend(mono);
                    }
                    let flat = checkpoint::load(&init_ckpt)?;
                    let mut rng = ChaCha12Rng::seed_from_u64(cfg.train.seed);
                    let mut model = Seq2SeqModel::new(cfg.model.clone(), &mut rng);
                    model
                        .params
                        .load_values(&checkpoint::extract_prefixed(&flat, ""))?;
                    let mut scn = Scn::new(cfg.scn.clone(), cfg.model.d_model, &mut rng);
                    println!(
                        "semaug training: {} records, lambda1 {}, lambda2 {}, ramp {}+{}",
                        all.len(),
                        cfg.train.lambda1,
                        cfg.train.lambda2,
                        cfg.train.gamma_ramp_start,
                        cfg.train.gamma_ramp_steps
                    );
                    let plan = CheckpointPlan { dir: out_dir.clone(), prefix: "semaug".into() };
                    let reports = trainer::train_semaug(
                        &mut model,
                        &mut scn,
                        &all,
                        Some(&mult),
                        &cfg.train,
                        Some(&plan),
                    )?;
                    write_text(&loss_out, &trainer::reports_to_jsonl(&reports)?)?;
                    write_text(&cfg_out, &cfg_json)?;
                    if let Some(last) = reports.last() {
                        println!(
                            "finished at step {}: total {:.4}, sem {:.4}",
                            last.step, last.total, last.sem
                        );
                    }
                    Ok(())
                },
            )
        }
        Command::Translate {
            ckpt,
            config,
            src_vocab,
            tgt_vocab,
            input,
            out,
            beam,
            length_penalty,
            max_len,
        } => {
            let decode_all = || -> Result<String> {
                let run_cfg = RunConfig::load(&config)?;
                let sv = Vocab::load(&src_vocab)?;
                let tv = Vocab::load(&tgt_vocab)?;
                let (model, scn) = load_model(&run_cfg, &ckpt, "translate")?;
                let sentences = load_sentences(&input, &sv)?;
                let mut lines = String::new();
                for x in &sentences {
                    let memory = decode_memory(&model, scn.as_ref(), x)?;
                    let decoded = crate::seq2seq::beam_search_with(
                        model.step_fn(&memory),
                        beam,
                        length_penalty,
                        max_len,
                    )?;
                    if !decoded.finished {
                        eprintln!("warning: hypothesis hit max_len before EOS");
                    }
                    lines.push_str(&tv.decode_ids(&decoded.tokens).join(" "));
                    lines.push('\n');
                }
                Ok(lines)
            };
            match out {
                Some(path) => {
                    let args = format!(
                        "{{\"beam\":{beam},\"length_penalty\":{length_penalty},\"max_len\":{max_len}}}"
                    );
                    let out_dir = parent_dir(&path);
                    with_manifest(
                        &out_dir,
                        "translate",
                        &args,
                        0,
                        &[&ckpt, &config, &src_vocab, &tgt_vocab, &input],
                        &[&path],
                        force,
                        || {
                            let lines = decode_all()?;
                            write_text(&path, &lines)?;
                            println!("wrote translations to {}", path.display());
                            Ok(())
                        },
                    )
                }
                None => {
                    print!("{}", decode_all()?);
                    Ok(())
                }
            }
        }
        Command::EvalBleu { hyp, reference } => {
            let split = |body: String| -> Vec<Vec<String>> {
                body.lines()
                    .map(|l| l.split_whitespace().map(|w| w.to_string()).collect())
                    .collect()
            };
            let hyps = split(read_text(&hyp)?);
            let refs = split(read_text(&reference)?);
            let bleu = metrics::corpus_bleu(&hyps, &refs)?;
            println!("BLEU = {bleu:.2}");
            Ok(())
        }
        Command::AnalyzeDiversity { records, src_vocab, tgt_vocab, hbar, out } => {
            let analyze = || -> Result<String> {
                let sv = Vocab::load(&src_vocab)?;
                let tv = Vocab::load(&tgt_vocab)?;
                let recs = sampler::records_from_jsonl(&read_text(&records)?, &tv, &sv)?;
                let report = metrics::diversity_report(&recs, hbar)?;
                println!("{}", metrics::format_report_table(std::slice::from_ref(&report)));
                Ok(serde_json::to_string_pretty(&report)?)
            };
            match out {
                Some(path) => {
                    let out_dir = parent_dir(&path);
                    with_manifest(
                        &out_dir,
                        "analyze-diversity",
                        &format!("{{\"hbar\":{hbar}}}"),
                        0,
                        &[&records, &src_vocab, &tgt_vocab],
                        &[&path],
                        force,
                        || {
                            let json = analyze()?;
                            write_text(&path, &json)
                        },
                    )
                }
                None => {
                    println!("{}", analyze()?);
                    Ok(())
                }
            }
        }
        Command::ExportLatents { ckpt, config, src, src_vocab, groups, out } => {
            let out_dir = parent_dir(&out);
            let mut inputs: Vec<&Path> = vec![&ckpt, &config, &src, &src_vocab];
            if let Some(g) = &groups {
                inputs.push(g);
            }
            with_manifest(&out_dir, "export-latents", "{}", 0, &inputs, &[&out], force, || {
                let run_cfg = RunConfig::load(&config)?;
                let sv = Vocab::load(&src_vocab)?;
                let (model, scn) = load_model(&run_cfg, &ckpt, "export-latents")?;
                let scn = scn.ok_or_else(|| Error::MissingPrerequisite {
                    phase: "export-latents".into(),
                    detail: "checkpoint carries no semantic network parameters".into(),
                })?;
                let sentences = load_sentences(&src, &sv)?;
                let group_ids: Vec<usize> = match &groups {
                    Some(g) => read_text(g)?
                        .lines()
                        .filter(|l| !l.trim().is_empty())
                        .map(|l| l.trim().parse().unwrap_or(0))
                        .collect(),
                    None => vec![0; sentences.len()],
                };
                if group_ids.len() != sentences.len() {
                    return Err(Error::Corpus(format!(
                        "group count {} does not match sentence count {}",
                        group_ids.len(),
                        sentences.len()
                    )));
                }
                let mut rng = ChaCha12Rng::seed_from_u64(0);
                let mut csv = String::new();
                for (x, gid) in sentences.iter().zip(&group_ids) {
                    let h = model.encode(x)?;
                    let state = scn.state(&h, LatentMode::Deterministic, &mut rng)?;
                    csv.push_str(&gid.to_string());
                    for v in &state.z {
                        csv.push_str(&format!(",{v}"));
                    }
                    csv.push('\n');
                }
                write_text(&out, &csv)?;
                println!("wrote {} latent rows to {}", sentences.len(), out.display());
                Ok(())
            })
        }
        Command::Pca { latents, components, seed, out } => {
            let seed = resolve_seed(seed, 0);
            let out_dir = parent_dir(&out);
            let args = format!("{{\"components\":{components}}}");
            with_manifest(&out_dir, "pca", &args, seed, &[&latents], &[&out], force, || {
                let body = read_text(&latents)?;
                let mut groups = Vec::new();
                let mut vectors = Vec::new();
                for line in body.lines().filter(|l| !l.trim().is_empty()) {
                    let mut parts = line.split(',');
                    let gid: usize = parts
                        .next()
                        .and_then(|p| p.trim().parse().ok())
                        .ok_or_else(|| Error::Metrics(format!("bad latent row: {line}")))?;
                    let vec: Vec<f64> = parts
                        .map(|p| p.trim().parse())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|e| Error::Metrics(format!("bad latent row: {e}")))?;
                    groups.push(gid);
                    vectors.push(vec);
                }
                let proj = metrics::pca_project(&vectors, components, seed)?;
                let mut csv = String::new();
                for (gid, p) in groups.iter().zip(&proj) {
                    csv.push_str(&gid.to_string());
                    for v in p {
                        csv.push_str(&format!(",{v}"));
                    }
                    csv.push('\n');
                }
                write_text(&out, &csv)?;
                println!("wrote {}-component projection to {}", components, out.display());
                Ok(())
            })
        }
    }
}

fn train_mle_command(args: TrainArgs, reverse: bool, force: bool) -> Result<()> {
    let mut cfg = RunConfig::load_or_default(args.config.as_ref())?;
    if let Some(v) = args.max_steps {
        cfg.train.max_steps = v;
    }
    if let Some(v) = args.batch_tokens {
        cfg.train.batch_tokens = v;
    }
    if let Some(v) = args.label_smoothing {
        cfg.train.label_smoothing = v;
    }
    cfg.train.seed = resolve_seed(args.seed, cfg.train.seed);
    cfg.train.validate()?;
    let max_len = args.max_len.unwrap_or(cfg.model.max_len);

    let phase = if reverse { "reverse" } else { "forward" };
    let sv = Vocab::load(&args.src_vocab)?;
    let tv = Vocab::load(&args.tgt_vocab)?;
    // The reverse model translates target-language inputs into
    // source-language outputs, so its vocab sizes swap.
    if reverse {
        cfg.model.src_vocab = tv.size();
        cfg.model.tgt_vocab = sv.size();
    } else {
        cfg.model.src_vocab = sv.size();
        cfg.model.tgt_vocab = tv.size();
    }
    cfg.train.lr_d_model = cfg.model.d_model;

    let out_dir = args.out_dir.clone();
    let ckpt_out = out_dir.join(format!("{phase}_final.ckpt"));
    let loss_out = out_dir.join(format!("{phase}_loss.jsonl"));
    let cfg_out = out_dir.join(format!("{phase}_config.json"));
    let cfg_json = serde_json::to_string_pretty(&cfg)?;

    with_manifest(
        &out_dir,
        &format!("train-{phase}"),
        &cfg_json,
        cfg.train.seed,
        &[&args.src, &args.tgt, &args.src_vocab, &args.tgt_vocab],
        &[&ckpt_out, &loss_out, &cfg_out],
        force,
        || {
            let (corpus, stats) = corpus::load_parallel(&args.src, &args.tgt, max_len)?;
            if stats.dropped_too_long + stats.dropped_empty > 0 {
                println!(
                    "dropped {} over-length and {} empty pairs",
                    stats.dropped_too_long, stats.dropped_empty
                );
            }
            let mut pairs = corpus::encode_pairs(&corpus, &sv, &tv)?;
            if reverse {
                pairs = pairs.into_iter().map(|(x, y)| (y, x)).collect();
            }
            let mut rng = ChaCha12Rng::seed_from_u64(cfg.train.seed);
            let mut model = Seq2SeqModel::new(cfg.model.clone(), &mut rng);
            println!(
                "{phase} pretraining: {} pairs, {} steps, batch {} tokens",
                pairs.len(),
                cfg.train.max_steps,
                cfg.train.batch_tokens
            );
            let plan = CheckpointPlan { dir: out_dir.clone(), prefix: phase.into() };
            let reports = trainer::train_mle(&mut model, &pairs, None, &cfg.train, Some(&plan))?;
            write_text(&loss_out, &trainer::reports_to_jsonl(&reports)?)?;
            write_text(&cfg_out, &cfg_json)?;
            if let Some(last) = reports.last() {
                println!("finished at step {}: per-token NLL {:.4}", last.step, last.mle_x);
            }
            Ok(())
        },
    )
}
