use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use agwe::agwe::{heldout_ap, load_best_model, SegmentedUtterance};
use agwe::corpus::read_corpus;
use agwe::nets::Checkpoint;
use agwe::pipeline;

const SMALL: &str = "\
vocab_size = 12
rare_words = 10
oov_words = 3
utterances = 60
heldout_utterances = 20
test_utterances = 10
hidden = 8
embed_dim = 8
char_embed_dim = 6
agwe_epochs = 2
agwe_batch = 8
a2w_epochs = 2
a2w_batch = 8
pretrain_epochs = 1
";

fn agwe(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_agwe"))
        .current_dir(dir)
        .args(["--config", "small.cfg"])
        .args(args)
        .env_remove("AGWE_SEED")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = agwe(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    agwe(dir, args).status.code().expect("exit code")
}

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.cfg"), SMALL).unwrap();
    dir
}

fn files(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

/// Runs the whole pipeline in `dir`, returning decode and eval output.
fn full_run(dir: &Path) -> String {
    ok(dir, &["gen-data"]);
    ok(dir, &["train-agwe"]);
    ok(dir, &["train-a2w", "--set", "mode=frozen"]);
    ok(dir, &["train-a2w", "--set", "mode=regularized"]);
    ok(
        dir,
        &["decode", "--set", "mode=frozen", "--extend-vocab", "corpus/oov.txt"],
    );
    ok(dir, &["eval", "--set", "mode=frozen"])
}

#[test]
fn repeated_runs_are_byte_identical() {
    let (a, b) = (workspace(), workspace());
    let ea = full_run(a.path());
    let eb = full_run(b.path());
    assert_eq!(ea, eb);
    assert!(ea.contains("wer="), "{ea}");
    let (fa, fb) = (files(a.path()), files(b.path()));
    assert_eq!(fa.len(), fb.len());
    for ((pa, ba), (pb, bb)) in fa.iter().zip(&fb) {
        assert_eq!(pa, pb);
        assert!(ba == bb, "{} differs between runs", pa.display());
    }
    for name in [
        "run/agwe.ckpt",
        "run/agwe.log",
        "run/a2w-frozen.ckpt",
        "run/a2w-frozen.log",
        "run/hyp-frozen.jsonl",
    ] {
        assert!(fa.iter().any(|(p, _)| p == Path::new(name)), "missing {name}");
    }
    let hyp = fs::read_to_string(a.path().join("run/hyp-frozen.jsonl")).unwrap();
    assert_eq!(hyp.lines().count(), 10);
    assert!(hyp.contains("\"rescored\""));
}

#[test]
fn seed_override_changes_the_corpus() {
    let w = workspace();
    ok(w.path(), &["gen-data"]);
    let first = files(&w.path().join("corpus"));
    let out = Command::new(env!("CARGO_BIN_EXE_agwe"))
        .current_dir(w.path())
        .args(["--config", "small.cfg", "gen-data", "--set", "corpus=other"])
        .env("AGWE_SEED", "2")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_ne!(first, files(&w.path().join("other")));
}

#[test]
fn resume_continues_the_same_trajectory() {
    let w = workspace();
    let d = w.path();
    ok(d, &["gen-data"]);
    ok(d, &["train-a2w", "--set", "a2w_checkpoint=straight.ckpt"]);
    ok(
        d,
        &[
            "train-a2w",
            "--set",
            "a2w_checkpoint=split.ckpt",
            "--set",
            "a2w_epochs=1",
        ],
    );
    ok(d, &["train-a2w", "--resume", "--set", "a2w_checkpoint=split.ckpt"]);
    assert_eq!(
        fs::read(d.join("straight.log")).unwrap(),
        fs::read(d.join("split.log")).unwrap()
    );
    assert_eq!(
        fs::read(d.join("straight.ckpt")).unwrap(),
        fs::read(d.join("split.ckpt")).unwrap()
    );
    assert_eq!(fs::read_to_string(d.join("split.log")).unwrap().lines().count(), 2);
}

#[test]
fn eval_agwe_matches_the_library() {
    let w = workspace();
    let d = w.path();
    ok(d, &["gen-data"]);
    ok(d, &["train-agwe"]);
    let out = ok(d, &["eval-agwe", "--set", "split=heldout"]);
    let corpus = read_corpus(&d.join("corpus")).unwrap();
    let vocab = pipeline::vocabulary(&corpus, 2).unwrap();
    let model = load_best_model(&Checkpoint::load(&d.join("run/agwe.ckpt")).unwrap()).unwrap();
    let segs = SegmentedUtterance::collect(&corpus.heldout, &vocab, 6);
    let ap = heldout_ap(&model, &segs, &vocab).unwrap();
    assert!(out.contains(&format!("ap={ap:.6} ")), "{out}");
}

#[test]
fn references_as_hypotheses_give_zero_wer() {
    let w = workspace();
    let d = w.path();
    ok(d, &["gen-data"]);
    let corpus = read_corpus(&d.join("corpus")).unwrap();
    let mut text = String::new();
    for u in &corpus.test {
        let r = agwe::decode::DecodeResult {
            id: u.id.clone(),
            first_pass: u.words.clone(),
            words: u.words.clone(),
            rescored: Vec::new(),
            unresolved: Vec::new(),
        };
        text.push_str(&r.to_json_line().unwrap());
    }
    fs::write(d.join("refs.jsonl"), text).unwrap();
    let out = ok(d, &["eval", "--set", "hypotheses=refs.jsonl"]);
    assert!(
        out.contains("wer=0.000000 substitutions=0 insertions=0 deletions=0"),
        "{out}"
    );
}

#[test]
fn exit_codes() {
    let w = workspace();
    let d = w.path();
    // configuration errors
    assert_eq!(code(d, &["gen-data", "--set", "no_such_key=1"]), 1);
    assert_eq!(code(d, &["gen-data", "--set", "utterances=0"]), 1);
    assert_eq!(code(d, &["train-agwe"]), 1, "missing corpus");
    assert_eq!(code(d, &["frobnicate"]), 1);
    ok(d, &["gen-data"]);
    assert_eq!(
        code(d, &["train-a2w", "--set", "mode=frozen"]),
        1,
        "frozen without embeddings"
    );
    assert_eq!(
        code(d, &["train-a2w", "--set", "mode=regularized", "--set", "lambda=1"]),
        1
    );
    assert_eq!(
        code(d, &["train-a2w", "--set", "lambda=-0.1", "--set", "mode=regularized"]),
        1
    );
    // data errors
    fs::write(d.join("bad.jsonl"), "{not json\n").unwrap();
    assert_eq!(code(d, &["eval", "--set", "hypotheses=bad.jsonl"]), 2);
    fs::write(d.join("bad.ckpt"), b"garbage").unwrap();
    assert_eq!(code(d, &["eval-agwe", "--set", "agwe_checkpoint=bad.ckpt"]), 2);
    assert_eq!(code(d, &["gradcheck"]), 0);
}
