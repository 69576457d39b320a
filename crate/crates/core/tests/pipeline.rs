//! End-to-end command-line pipeline checks against the compiled binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_semaug")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .current_dir(dir)
        .env_remove("SEMAUG_SEED")
        .output()
        .expect("binary runs")
}

fn expect_ok(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed with {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        Workspace { dir: tempfile::tempdir().unwrap() }
    }
    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
    fn p(&self, name: &str) -> String {
        self.path(name).display().to_string()
    }
    fn run(&self, args: &[&str]) -> Output {
        run_in(self.dir.path(), args)
    }
}

/// Train the toy pipeline end to end with tiny step counts; every phase must
/// exit 0 and leave its artifacts behind.
#[test]
fn full_toy_pipeline_completes_all_phases() {
    let ws = Workspace::new();
    let out_dir = ws.p("");

    expect_ok(
        &ws.run(&["gen-toy", "--task", "paraphrase", "--out-dir", &out_dir, "--pairs", "6", "--seed", "3"]),
        "gen-toy",
    );
    assert!(ws.path("train.src").exists() && ws.path("train.tgt").exists());
    assert!(ws.path("groups.txt").exists());

    expect_ok(
        &ws.run(&["build-vocab", "--src", &ws.p("train.src"), "--tgt", &ws.p("train.tgt"), "--out-dir", &out_dir]),
        "build-vocab",
    );

    let train_common = [
        "--src", &ws.p("train.src"),
        "--tgt", &ws.p("train.tgt"),
        "--src-vocab", &ws.p("vocab.src.txt"),
        "--tgt-vocab", &ws.p("vocab.tgt.txt"),
        "--out-dir", &out_dir,
        "--max-steps", "60",
        "--batch-tokens", "128",
        "--label-smoothing", "0",
        "--seed", "5",
    ];
    let mut fwd = vec!["train-forward"];
    fwd.extend_from_slice(&train_common);
    expect_ok(&ws.run(&fwd), "train-forward");
    let mut rev = vec!["train-reverse"];
    rev.extend_from_slice(&train_common);
    expect_ok(&ws.run(&rev), "train-reverse");
    assert!(ws.path("forward_final.ckpt").exists());
    assert!(ws.path("reverse_final.ckpt").exists());

    // Defaults follow the working settings: three samples per target.
    expect_ok(
        &ws.run(&[
            "synthesize",
            "--tgt", &ws.p("train.tgt"),
            "--real-src", &ws.p("train.src"),
            "--reverse-ckpt", &ws.p("reverse_final.ckpt"),
            "--config", &ws.p("reverse_config.json"),
            "--src-vocab", &ws.p("vocab.src.txt"),
            "--tgt-vocab", &ws.p("vocab.tgt.txt"),
            "--seed", "5",
            "--out", &ws.p("synthetic.jsonl"),
        ]),
        "synthesize",
    );
    let body = std::fs::read_to_string(ws.path("synthetic.jsonl")).unwrap();
    for line in body.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["synthetic_sources"].as_array().unwrap().len(), 3);
    }

    // The default threshold is 2.5: an explicit --hbar 2.5 run reproduces
    // the default output bitwise, a zero threshold does not.
    expect_ok(
        &ws.run(&[
            "synthesize",
            "--tgt", &ws.p("train.tgt"),
            "--real-src", &ws.p("train.src"),
            "--reverse-ckpt", &ws.p("reverse_final.ckpt"),
            "--config", &ws.p("reverse_config.json"),
            "--src-vocab", &ws.p("vocab.src.txt"),
            "--tgt-vocab", &ws.p("vocab.tgt.txt"),
            "--hbar", "2.5",
            "--seed", "5",
            "--out", &ws.p("synthetic-explicit.jsonl"),
        ]),
        "synthesize --hbar 2.5",
    );
    expect_ok(
        &ws.run(&[
            "synthesize",
            "--tgt", &ws.p("train.tgt"),
            "--real-src", &ws.p("train.src"),
            "--reverse-ckpt", &ws.p("reverse_final.ckpt"),
            "--config", &ws.p("reverse_config.json"),
            "--src-vocab", &ws.p("vocab.src.txt"),
            "--tgt-vocab", &ws.p("vocab.tgt.txt"),
            "--hbar", "0",
            "--seed", "5",
            "--out", &ws.p("synthetic-zero.jsonl"),
        ]),
        "synthesize --hbar 0",
    );
    let default_bytes = std::fs::read(ws.path("synthetic.jsonl")).unwrap();
    assert_eq!(default_bytes, std::fs::read(ws.path("synthetic-explicit.jsonl")).unwrap());
    assert_ne!(default_bytes, std::fs::read(ws.path("synthetic-zero.jsonl")).unwrap());

    // Deriving lambda2 from --lambda1 is announced.
    let semaug = ws.run(&[
        "train-semaug",
        "--records", &ws.p("synthetic.jsonl"),
        "--init-ckpt", &ws.p("forward_final.ckpt"),
        "--src-vocab", &ws.p("vocab.src.txt"),
        "--tgt-vocab", &ws.p("vocab.tgt.txt"),
        "--out-dir", &out_dir,
        "--lambda1", "0.7",
        "--max-steps", "30",
        "--batch-tokens", "128",
        "--label-smoothing", "0",
        "--gamma-ramp-start", "5",
        "--gamma-ramp-steps", "10",
        "--seed", "5",
    ]);
    expect_ok(&semaug, "train-semaug");
    let stdout = String::from_utf8_lossy(&semaug.stdout);
    assert!(stdout.contains("lambda2 = 0.3"), "stdout: {stdout}");
    assert!(ws.path("semaug_final.ckpt").exists());
    assert!(ws.path("semaug_loss.jsonl").exists());

    expect_ok(
        &ws.run(&[
            "translate",
            "--ckpt", &ws.p("semaug_final.ckpt"),
            "--config", &ws.p("semaug_config.json"),
            "--src-vocab", &ws.p("vocab.src.txt"),
            "--tgt-vocab", &ws.p("vocab.tgt.txt"),
            "--input", &ws.p("train.src"),
            "--out", &ws.p("hyp.txt"),
            "--beam", "4",
            "--length-penalty", "0.6",
        ]),
        "translate",
    );
    let hyp_lines = std::fs::read_to_string(ws.path("hyp.txt")).unwrap().lines().count();
    let src_lines = std::fs::read_to_string(ws.path("train.src")).unwrap().lines().count();
    assert_eq!(hyp_lines, src_lines);

    let bleu = ws.run(&["eval-bleu", "--hyp", &ws.p("hyp.txt"), "--ref", &ws.p("train.tgt")]);
    expect_ok(&bleu, "eval-bleu");
    assert!(String::from_utf8_lossy(&bleu.stdout).contains("BLEU = "));

    let diversity = ws.run(&[
        "analyze-diversity",
        "--records", &ws.p("synthetic.jsonl"),
        "--src-vocab", &ws.p("vocab.src.txt"),
        "--tgt-vocab", &ws.p("vocab.tgt.txt"),
        "--out", &ws.p("diversity.json"),
    ]);
    expect_ok(&diversity, "analyze-diversity");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(ws.path("diversity.json")).unwrap()).unwrap();
    assert!(report["mean_syn_vs_syn"].as_f64().unwrap() >= 0.0);

    expect_ok(
        &ws.run(&[
            "export-latents",
            "--ckpt", &ws.p("semaug_final.ckpt"),
            "--config", &ws.p("semaug_config.json"),
            "--src", &ws.p("train.src"),
            "--src-vocab", &ws.p("vocab.src.txt"),
            "--groups", &ws.p("groups.txt"),
            "--out", &ws.p("latents.csv"),
        ]),
        "export-latents",
    );
    let latent_rows = std::fs::read_to_string(ws.path("latents.csv")).unwrap().lines().count();
    assert_eq!(latent_rows, src_lines);

    expect_ok(
        &ws.run(&["pca", "--latents", &ws.p("latents.csv"), "--out", &ws.p("pca.csv"), "--seed", "1"]),
        "pca",
    );
    for line in std::fs::read_to_string(ws.path("pca.csv")).unwrap().lines() {
        assert_eq!(line.split(',').count(), 3, "group + 2 components: {line}");
    }
}

#[test]
fn unknown_flags_exit_2_with_usage() {
    let ws = Workspace::new();
    let out = ws.run(&["gen-toy", "--task", "copy", "--out-dir", ".", "--bogus-flag"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr).to_lowercase();
    assert!(err.contains("usage") || err.contains("unexpected"), "{err}");

    let out = ws.run(&["no-such-command"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_prerequisites_exit_1_naming_the_phase() {
    let ws = Workspace::new();
    std::fs::write(ws.path("records.jsonl"), "").unwrap();
    std::fs::write(ws.path("vocab.txt"), "<pad>\n<bos>\n<eos>\n<unk>\na\n").unwrap();
    let out = ws.run(&[
        "train-semaug",
        "--records", &ws.p("records.jsonl"),
        "--init-ckpt", &ws.p("missing.ckpt"),
        "--src-vocab", &ws.p("vocab.txt"),
        "--tgt-vocab", &ws.p("vocab.txt"),
        "--out-dir", &ws.p(""),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("semaug"), "stderr should name the phase: {err}");
}

#[test]
fn reruns_are_no_ops_unless_forced() {
    let ws = Workspace::new();
    let out_dir = ws.p("");
    let args = ["gen-toy", "--task", "copy", "--out-dir", &out_dir, "--pairs", "8", "--seed", "4"];
    expect_ok(&ws.run(&args), "first run");
    let second = ws.run(&args);
    expect_ok(&second, "second run");
    assert!(
        String::from_utf8_lossy(&second.stdout).contains("up to date"),
        "second run should skip"
    );
    let mut forced = args.to_vec();
    forced.push("--force");
    let third = ws.run(&forced);
    expect_ok(&third, "forced run");
    assert!(
        String::from_utf8_lossy(&third.stdout).contains("wrote"),
        "forced run should regenerate"
    );
}

#[test]
fn global_seed_env_var_is_a_fallback() {
    let ws = Workspace::new();
    let gen = |tag: &str, seed: &str| -> Vec<u8> {
        let dir = ws.p(tag);
        let out = Command::new(bin())
            .args(["gen-toy", "--task", "copy", "--out-dir", &dir, "--pairs", "8"])
            .env("SEMAUG_SEED", seed)
            .output()
            .unwrap();
        assert!(out.status.success());
        std::fs::read(ws.path(tag).join("train.src")).unwrap()
    };
    let a = gen("a", "1");
    let b = gen("b", "1");
    let c = gen("c", "2");
    assert_eq!(a, b, "same env seed reproduces the corpus");
    assert_ne!(a, c, "different env seed changes it");
}
