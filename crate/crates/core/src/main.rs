use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use agwe::agwe::{heldout_ap, load_best_model, AgweTrainer, EmbeddingModel, SegmentedUtterance};
use agwe::config::RunConfig;
use agwe::corpus::{generate_synthetic_corpus, read_corpus, write_corpus, Corpus, Utterance, Vocabulary};
use agwe::decode::{decode_with_oov, read_hypotheses, write_hypotheses, DecodeResult, ExtendedVocabulary};
use agwe::eval::wer;
use agwe::nets::Checkpoint;
use agwe::parallel::par_map;
use agwe::pipeline;
use agwe::recognizer::A2wTrainer;
use agwe::{Error, Result};

#[derive(Parser)]
#[command(
    name = "agwe",
    version,
    about = "Acoustically grounded word embeddings and CTC word recognition"
)]
struct Cli {
    /// key = value configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one setting, e.g. --set seed=3 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus directory
    GenData,
    /// Train the acoustic and written word embedding model
    TrainAgwe {
        /// Continue from the checkpoint if it exists
        #[arg(long)]
        resume: bool,
    },
    /// Cross-view average precision of the embedding checkpoint
    EvalAgwe,
    /// Train the word recognizer in the configured mode
    TrainA2w {
        #[arg(long)]
        resume: bool,
    },
    /// Transcribe a split and write the hypothesis file
    Decode {
        /// Word list (one per line) appended to the vocabulary for rescoring <unk>
        #[arg(long, value_name = "FILE")]
        extend_vocab: Option<PathBuf>,
    },
    /// Word error rate of the hypothesis file against a split
    Eval,
    /// Finite-difference check of every analytic gradient
    Gradcheck,
    /// Print the effective configuration
    ShowConfig,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_env()?;
    cfg.apply_overrides(&cli.sets)?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::GenData => gen_data(&cfg),
        Command::TrainAgwe { resume } => train_agwe(&cfg, resume),
        Command::EvalAgwe => eval_agwe(&cfg),
        Command::TrainA2w { resume } => train_a2w(&cfg, resume),
        Command::Decode { extend_vocab } => decode(&cfg, extend_vocab.as_deref()),
        Command::Eval => eval(&cfg),
        Command::Gradcheck => gradcheck(&cfg),
        Command::ShowConfig => {
            print!("{}", cfg.to_text());
            Ok(())
        }
    }
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} {} does not exist", path.display())))
    }
}

fn load_corpus(cfg: &RunConfig) -> Result<(Corpus, Vocabulary)> {
    let dir = cfg.corpus_dir()?;
    require_file(&dir.join("utts.jsonl"), "corpus index")?;
    let corpus = read_corpus(&dir)?;
    let vocab = pipeline::vocabulary(&corpus, cfg.min_count()?)?;
    Ok((corpus, vocab))
}

fn prepare_run_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.run_dir()?;
    fs::create_dir_all(&dir).map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn write_lines(path: &Path, lines: impl Iterator<Item = String>) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for l in lines {
        writeln!(out, "{l}")?;
    }
    out.flush()?;
    Ok(())
}

fn log_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("log")
}

fn gen_data(cfg: &RunConfig) -> Result<()> {
    let syn = cfg.synthetic()?;
    let dir = cfg.corpus_dir()?;
    let data = generate_synthetic_corpus(&syn)?;
    let oov = data.oov_words.clone();
    let corpus: Corpus = data.into();
    write_corpus(&dir, &corpus)?;
    write_lines(&dir.join("oov.txt"), oov.into_iter())?;
    println!(
        "wrote {}: train={} heldout={} test={}",
        dir.display(),
        corpus.train.len(),
        corpus.heldout.len(),
        corpus.test.len()
    );
    Ok(())
}

fn load_agwe(cfg: &RunConfig) -> Result<EmbeddingModel> {
    let path = cfg.agwe_checkpoint()?;
    require_file(&path, "embedding checkpoint")?;
    load_best_model(&Checkpoint::load(&path)?)
}

fn train_agwe(cfg: &RunConfig, resume: bool) -> Result<()> {
    let (corpus, vocab) = load_corpus(cfg)?;
    prepare_run_dir(cfg)?;
    let ck_path = cfg.agwe_checkpoint()?;
    let train_cfg = cfg.agwe_train()?;
    let min_frames = cfg.min_frames()?;
    let mut trainer = if resume && ck_path.is_file() {
        let mut t = AgweTrainer::from_checkpoint(&Checkpoint::load(&ck_path)?)?;
        t.config.max_epochs = train_cfg.max_epochs;
        log::info!("resuming {} after epoch {}", ck_path.display(), t.epoch());
        t
    } else {
        let model = pipeline::new_embedding_model(cfg, pipeline::feature_dim(&corpus)?)?;
        AgweTrainer::new(model, train_cfg)?
    };
    let train = SegmentedUtterance::collect(&corpus.train, &vocab, min_frames);
    let heldout = SegmentedUtterance::collect(&corpus.heldout, &vocab, min_frames);
    let log = log_path(&ck_path);
    trainer.train(&train, &heldout, &vocab, |t| {
        let e = t.history.last().expect("epoch finished");
        log::info!("{}", e.log_line());
        t.to_checkpoint()?.save(&ck_path)?;
        write_lines(&log, t.history.iter().map(|e| e.log_line()))
    })?;
    if let Some(best) = trainer.schedule.best_metric {
        println!("best heldout_ap={best:.6} epochs={}", trainer.epoch());
    }
    Ok(())
}

fn eval_agwe(cfg: &RunConfig) -> Result<()> {
    let (corpus, vocab) = load_corpus(cfg)?;
    let model = load_agwe(cfg)?;
    let segs = SegmentedUtterance::collect(corpus.split(cfg.split()?), &vocab, cfg.min_frames()?);
    let m: usize = segs.iter().map(|s| s.segments.len()).sum();
    let ap = heldout_ap(&model, &segs, &vocab)?;
    println!("cross-view AP on {}: {ap:.6}", cfg.raw("split")?);
    println!("ap={ap:.6} segments={m} words={}", vocab.word_ids().len());
    Ok(())
}

fn train_a2w(cfg: &RunConfig, resume: bool) -> Result<()> {
    let mode = cfg.mode()?;
    let train_cfg = cfg.a2w_train()?;
    if mode.needs_embeddings() {
        let p = cfg.agwe_checkpoint()?;
        if !p.is_file() {
            return Err(Error::Config(format!(
                "mode={} needs an embedding checkpoint; {} does not exist",
                mode.name(),
                p.display()
            )));
        }
    }
    let (corpus, vocab) = load_corpus(cfg)?;
    prepare_run_dir(cfg)?;
    let ck_path = cfg.a2w_checkpoint()?;
    let mut trainer = if resume && ck_path.is_file() {
        let mut t = A2wTrainer::from_checkpoint(&Checkpoint::load(&ck_path)?, &vocab)?;
        if t.config.mode != mode {
            return Err(Error::Config(format!(
                "checkpoint was trained in mode {}, config says {}",
                t.config.mode.name(),
                mode.name()
            )));
        }
        t.config.max_epochs = train_cfg.max_epochs;
        log::info!("resuming {} after epoch {}", ck_path.display(), t.epoch());
        t
    } else {
        let agwe = if mode.needs_embeddings() {
            Some(load_agwe(cfg)?)
        } else {
            None
        };
        let model = pipeline::new_recognizer(cfg, &vocab, agwe.as_ref(), &corpus.train)?;
        let targets = pipeline::targets_for(mode, agwe.as_ref(), &vocab)?;
        A2wTrainer::new(model, targets, train_cfg)?
    };
    let log = log_path(&ck_path);
    trainer.train(&corpus.train, &corpus.heldout, &vocab, |t| {
        let e = t.history.last().expect("epoch finished");
        log::info!("{}", e.log_line());
        t.to_checkpoint(&vocab)?.save(&ck_path)?;
        write_lines(&log, t.history.iter().map(|e| e.log_line()))
    })?;
    if let Some(best) = trainer.schedule.best_metric {
        println!("best heldout_wer={best:.6} epochs={}", trainer.epoch());
    }
    Ok(())
}

fn decode(cfg: &RunConfig, extend_vocab: Option<&Path>) -> Result<()> {
    let ck_path = cfg.a2w_checkpoint()?;
    require_file(&ck_path, "recognizer checkpoint")?;
    let words = match extend_vocab {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
            Some(pipeline::read_word_list(&text)?)
        }
        None => None,
    };
    let (corpus, vocab) = load_corpus(cfg)?;
    let model = A2wTrainer::from_checkpoint(&Checkpoint::load(&ck_path)?, &vocab)?.best;
    let ext = match &words {
        Some(w) => pipeline::oov_extension(&load_agwe(cfg)?, &vocab, w)?,
        None => ExtendedVocabulary::empty(model.prediction.cols()),
    };
    let n_best = cfg.n_best()?;
    let utts: &[Utterance] = corpus.split(cfg.split()?);
    let results: Vec<DecodeResult> = par_map(utts, |u| decode_with_oov(&model, u, &vocab, &ext, n_best))
        .into_iter()
        .collect::<Result<_>>()?;
    prepare_run_dir(cfg)?;
    let out = cfg.hypotheses()?;
    let mut w = BufWriter::new(fs::File::create(&out)?);
    write_hypotheses(&mut w, &results)?;
    w.flush()?;
    let rescored: usize = results.iter().map(|r| r.rescored.len()).sum();
    let unresolved: usize = results.iter().map(|r| r.unresolved.len()).sum();
    println!(
        "wrote {}: utterances={} rescored={rescored} unresolved_unk={unresolved} extension_words={}",
        out.display(),
        results.len(),
        ext.len()
    );
    Ok(())
}

fn eval(cfg: &RunConfig) -> Result<()> {
    let path = cfg.hypotheses()?;
    require_file(&path, "hypothesis file")?;
    let results = read_hypotheses(&fs::read_to_string(&path)?)?;
    let dir = cfg.corpus_dir()?;
    require_file(&dir.join("utts.jsonl"), "corpus index")?;
    let corpus = read_corpus(&dir)?;
    let utts = corpus.split(cfg.split()?);
    let by_id: std::collections::BTreeMap<&str, &Utterance> = utts.iter().map(|u| (u.id.as_str(), u)).collect();
    let mut refs = Vec::with_capacity(results.len());
    let mut hyps = Vec::with_capacity(results.len());
    for r in &results {
        let u = by_id
            .get(r.id.as_str())
            .ok_or_else(|| Error::Data(format!("hypothesis {} has no reference in this split", r.id)))?;
        refs.push(u.words.clone());
        hyps.push(r.words.clone());
    }
    let report = wer(&refs, &hyps)?;
    println!(
        "WER {:.2}% ({} substitutions, {} insertions, {} deletions over {} words)",
        100.0 * report.wer,
        report.substitutions,
        report.insertions,
        report.deletions,
        report.reference_words
    );
    println!("{report}");
    if results.iter().any(|r| !r.rescored.is_empty()) {
        let oov = pipeline::oov_recovery(&results, utts)?;
        println!(
            "unk_emissions={} single_word_unk={} recovered={}",
            oov.unk_emissions, oov.single_word, oov.recovered
        );
    }
    Ok(())
}

fn gradcheck(cfg: &RunConfig) -> Result<()> {
    let checks = pipeline::gradient_suite(cfg.seed()?)?;
    let mut failed = 0;
    for c in &checks {
        let status = if c.passed() { "ok" } else { "FAIL" };
        println!(
            "{status:4} {:28} max_rel_error={:.3e} tolerance={:.0e} checked={}",
            c.name, c.report.max_rel_error, c.tolerance, c.report.checked
        );
        if !c.passed() {
            failed += 1;
            println!("     worst: {}", c.report.worst);
        }
    }
    if failed > 0 {
        return Err(Error::Numeric(format!("{failed} gradient checks failed")));
    }
    Ok(())
}
