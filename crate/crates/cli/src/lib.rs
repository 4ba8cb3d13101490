//! Subcommands of the `mmicap` binary. Each one reads the artifacts of the
//! previous stage from `data_dir`/`run_dir` and writes its own.

pub mod config;

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mmicap::corpus::{
    build_vocabulary, generate_synthetic_corpus, load_corpus, load_lexicon, preprocess_sentence, save_corpus,
    save_lexicon, synthetic_lexicon, AttributeInventory, Corpus, EvalSet, FeedbackType, Vocabulary,
};
use mmicap::decoding::{decode_all, read_records, write_records, DecodeRecord};
use mmicap::filter::validate_sentence;
use mmicap::metrics::{evaluate, fs_baseline, sweep, write_report, write_sweep_csv};
use mmicap::models::{build_model, ModelKind, SequenceModel, Trainable};
use mmicap::training::{
    stream_rng, train_captioner_with, train_lm_with, transfer_encoder_weights, write_epoch_log, Checkpoint,
    STREAM_INIT,
};

pub use config::{parse_override, Settings};

/// Seed stream for the language model's initialization (the captioners use
/// `STREAM_INIT`).
pub const STREAM_LM_INIT: u64 = 3;

#[derive(Debug, Parser)]
#[command(name = "mmicap", version, about = "Fashion-feedback captioning with MMI decoding")]
pub struct Cli {
    /// Flat TOML config file; flags take precedence over it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Print the resolved configuration as TOML and exit.
    #[arg(long, global = true)]
    pub print_config: bool,
    #[command(flatten)]
    pub common: CommonFlags,
    #[command(subcommand)]
    pub command: Command,
}

/// Shortcuts for frequently changed keys; `--set key=value` reaches the rest.
#[derive(Debug, Default, Args)]
pub struct CommonFlags {
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for decoding (default 1).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub run_dir: Option<PathBuf>,
    /// GOOD or TIP.
    #[arg(long = "type", global = true)]
    pub feedback_type: Option<String>,
    /// top_down, fc or lm.
    #[arg(long, global = true)]
    pub model: Option<String>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub beta: Option<f64>,
    #[arg(long = "beam", global = true)]
    pub beam_width: Option<usize>,
    /// Any config key, e.g. `--set generic_rate=0.2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
}

impl CommonFlags {
    pub fn overrides(&self) -> Result<Vec<(String, toml::Value)>> {
        let mut out = vec![];
        let int = |v: usize| toml::Value::Integer(v as i64);
        let path = |p: &Path| toml::Value::String(p.to_string_lossy().into_owned());
        if let Some(v) = self.seed {
            out.push(("seed".into(), toml::Value::Integer(i64::try_from(v).context("seed too large")?)));
        }
        if let Some(v) = self.threads {
            out.push(("threads".into(), int(v)));
        }
        if let Some(v) = &self.data_dir {
            out.push(("data_dir".into(), path(v)));
        }
        if let Some(v) = &self.run_dir {
            out.push(("run_dir".into(), path(v)));
        }
        if let Some(v) = &self.feedback_type {
            out.push(("feedback_type".into(), toml::Value::String(v.to_uppercase())));
        }
        if let Some(v) = &self.model {
            out.push(("model".into(), toml::Value::String(v.replace('-', "_"))));
        }
        if let Some(v) = self.epochs {
            out.push(("epochs".into(), int(v)));
        }
        if let Some(v) = self.beta {
            out.push(("beta".into(), toml::Value::Float(v)));
        }
        if let Some(v) = self.beam_width {
            out.push(("beam_width".into(), int(v)));
        }
        // Explicit --set entries win over the shortcuts.
        for s in &self.set {
            out.push(parse_override(s)?);
        }
        Ok(out)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic training corpus, eval set and POS lexicon.
    GenData,
    /// Build the vocabulary from the training corpus.
    BuildVocab,
    /// Train the auxiliary language model (selected by held-out perplexity).
    TrainLm {
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train a captioner (selected by eval CIDEr-D).
    Train {
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Decode the eval set to JSON lines.
    Decode {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        lm: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Score decoded sentences (or the leave-one-out human baseline).
    Evaluate {
        #[arg(long)]
        decoded: Option<PathBuf>,
        /// Score one held-out reference per image instead of model output.
        #[arg(long)]
        fs_baseline: bool,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Decode and score over the β × beam-width grid.
    Sweep {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        lm: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Classify sentences (one per line) with the repetition filter; TSV out.
    FilterCheck {
        /// Input file; stdin when omitted.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        /// Output file; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

/// File layout shared by the subcommands.
pub struct Layout<'a>(pub &'a Settings);

impl Layout<'_> {
    pub fn train_corpus(&self) -> PathBuf {
        self.0.data_dir.join("train.jsonl")
    }
    pub fn train_grids(&self) -> PathBuf {
        self.0.data_dir.join("train.grid")
    }
    pub fn eval_corpus(&self) -> PathBuf {
        self.0.data_dir.join("eval.jsonl")
    }
    pub fn eval_grids(&self) -> PathBuf {
        self.0.data_dir.join("eval.grid")
    }
    pub fn lexicon(&self) -> PathBuf {
        self.0.data_dir.join("lexicon.json")
    }
    pub fn vocab(&self) -> PathBuf {
        self.0.data_dir.join("vocab.json")
    }
    pub fn captioner(&self) -> PathBuf {
        self.0.run_dir.join(format!("{}.ckpt", self.0.model))
    }
    pub fn captioner_log(&self) -> PathBuf {
        self.0.run_dir.join(format!("{}_log.csv", self.0.model))
    }
    pub fn lm(&self) -> PathBuf {
        self.0.run_dir.join("lm.ckpt")
    }
    pub fn lm_log(&self) -> PathBuf {
        self.0.run_dir.join("lm_log.csv")
    }
    pub fn decoded(&self) -> PathBuf {
        self.0.run_dir.join("decoded.jsonl")
    }
    pub fn report(&self) -> PathBuf {
        self.0.run_dir.join("report.json")
    }
    pub fn fs_report(&self) -> PathBuf {
        self.0.run_dir.join("fs_report.json")
    }
    pub fn sweep(&self) -> PathBuf {
        self.0.run_dir.join("sweep.csv")
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let settings = Settings::resolve(cli.config.as_deref(), &cli.common.overrides()?)?;
    if cli.print_config {
        print!("{}", settings.to_toml()?);
        return Ok(());
    }
    run_command(&settings, &cli.command)
}

pub fn run_command(s: &Settings, command: &Command) -> Result<()> {
    let paths = Layout(s);
    match command {
        Command::GenData => gen_data(s, &paths),
        Command::BuildVocab => build_vocab(s, &paths),
        Command::TrainLm { output } => train_lm_cmd(s, &paths, output.clone().unwrap_or_else(|| paths.lm())),
        Command::Train { output } => train_cmd(s, &paths, output.clone().unwrap_or_else(|| paths.captioner())),
        Command::Decode { checkpoint, lm, output } => decode_cmd(
            s,
            &paths,
            checkpoint.clone().unwrap_or_else(|| paths.captioner()),
            lm.clone().unwrap_or_else(|| paths.lm()),
            output.clone().unwrap_or_else(|| paths.decoded()),
        ),
        Command::Evaluate {
            decoded,
            fs_baseline,
            output,
        } => {
            if *fs_baseline {
                fs_cmd(s, &paths, output.clone().unwrap_or_else(|| paths.fs_report()))
            } else {
                evaluate_cmd(
                    &paths,
                    decoded.clone().unwrap_or_else(|| paths.decoded()),
                    output.clone().unwrap_or_else(|| paths.report()),
                )
            }
        }
        Command::Sweep { checkpoint, lm, output } => sweep_cmd(
            s,
            &paths,
            checkpoint.clone().unwrap_or_else(|| paths.captioner()),
            lm.clone().unwrap_or_else(|| paths.lm()),
            output.clone().unwrap_or_else(|| paths.sweep()),
        ),
        Command::FilterCheck { input, lexicon, output } => filter_check(
            s,
            input.as_deref(),
            &lexicon.clone().unwrap_or_else(|| paths.lexicon()),
            output.as_deref(),
        ),
    }
}

fn require(paths: &[&Path]) -> Result<()> {
    for p in paths {
        if !p.exists() {
            bail!("required input {} does not exist", p.display());
        }
    }
    Ok(())
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn gen_data(s: &Settings, paths: &Layout) -> Result<()> {
    let synth = s.synth();
    let (train, eval) = generate_synthetic_corpus(&synth, s.seed)?;
    fs::create_dir_all(&s.data_dir).with_context(|| format!("creating {}", s.data_dir.display()))?;
    save_corpus(&train, &paths.train_corpus(), &paths.train_grids())?;
    save_corpus(eval.corpus(), &paths.eval_corpus(), &paths.eval_grids())?;
    save_lexicon(&synthetic_lexicon(&AttributeInventory::default()), &paths.lexicon())?;
    eprintln!(
        "wrote {} training and {} eval images to {}",
        train.len(),
        eval.len(),
        s.data_dir.display()
    );
    Ok(())
}

fn build_vocab(s: &Settings, paths: &Layout) -> Result<()> {
    require(&[&paths.train_corpus(), &paths.lexicon()])?;
    let train = load_corpus(&paths.train_corpus())?;
    let lexicon = load_lexicon(&paths.lexicon())?;
    let vocab = build_vocabulary(&train.sentences(), s.min_count, &lexicon)?;
    vocab.save(&paths.vocab())?;
    eprintln!("vocabulary: {} tokens, hash {}", vocab.len(), vocab.hash());
    Ok(())
}

fn load_typed(path: &Path, t: FeedbackType) -> Result<Corpus> {
    let corpus = load_corpus(path)?;
    if let Some(e) = corpus.examples.iter().find(|e| e.feedback_type != t) {
        bail!(
            "{}: example {} is {} feedback but the config says {t}",
            path.display(),
            e.image_id,
            e.feedback_type
        );
    }
    Ok(corpus)
}

fn load_eval(s: &Settings, paths: &Layout) -> Result<EvalSet> {
    let corpus = load_typed(&paths.eval_corpus(), s.feedback_type)?;
    EvalSet::new(corpus).with_context(|| format!("loading {}", paths.eval_corpus().display()))
}

fn load_vocab(paths: &Layout) -> Result<Vocabulary> {
    require(&[&paths.vocab()])?;
    Ok(Vocabulary::load(&paths.vocab())?)
}

/// Loads a checkpoint and checks its vocabulary and whether it is the
/// language model (`want_lm`) or a captioner.
fn load_checkpoint(path: &Path, vocab: &Vocabulary, want_lm: bool) -> Result<Box<dyn Trainable>> {
    require(&[path])?;
    let ck = Checkpoint::load(path)?;
    ck.check_vocab(&vocab.hash())
        .with_context(|| format!("checkpoint {}", path.display()))?;
    if (ck.kind == ModelKind::Lm) != want_lm {
        let expected = if want_lm { "a language model" } else { "a captioner" };
        bail!("{} holds a {} model, expected {expected}", path.display(), ck.kind);
    }
    Ok(ck.to_model()?)
}

fn train_lm_cmd(s: &Settings, paths: &Layout, output: PathBuf) -> Result<()> {
    require(&[&paths.train_corpus(), &paths.eval_corpus()])?;
    let vocab = load_vocab(paths)?;
    let train = load_typed(&paths.train_corpus(), s.feedback_type)?;
    let eval = load_eval(s, paths)?;
    let sentences: Vec<Vec<usize>> = train.encode(&vocab).into_iter().flat_map(|e| e.sentences).collect();
    let heldout: Vec<Vec<usize>> = eval.corpus().encode(&vocab).into_iter().flat_map(|e| e.sentences).collect();
    let mut lm = build_model(ModelKind::Lm, s.dims(vocab.len()), &mut stream_rng(s.seed, STREAM_LM_INIT))?;
    let outcome = train_lm_with(lm.as_mut(), &sentences, &heldout, &vocab, &s.lm_train_config(), |r| {
        eprintln!("lm epoch {:>3}  loss {:?}  perplexity {:?}", r.epoch, r.train_loss, r.eval_metric);
    })?;
    create_parent(&output)?;
    outcome.checkpoint.save(&output)?;
    write_epoch_log(&paths.lm_log(), &outcome.log, "eval_perplexity")?;
    eprintln!(
        "kept epoch {} (perplexity {:?}) -> {}",
        outcome.checkpoint.epoch,
        outcome.checkpoint.best_perplexity,
        output.display()
    );
    Ok(())
}

fn train_cmd(s: &Settings, paths: &Layout, output: PathBuf) -> Result<()> {
    if s.model == ModelKind::Lm {
        bail!("use train-lm for the language model");
    }
    require(&[&paths.train_corpus(), &paths.eval_corpus()])?;
    let vocab = load_vocab(paths)?;
    let train = load_typed(&paths.train_corpus(), s.feedback_type)?;
    let eval = load_eval(s, paths)?;
    let mut model = build_model(s.model, s.dims(vocab.len()), &mut stream_rng(s.seed, STREAM_INIT))?;
    if let Some(src) = &s.transfer_from {
        require(&[src])?;
        let ck = Checkpoint::load(src)?;
        ck.check_vocab(&vocab.hash())
            .with_context(|| format!("transfer source {}", src.display()))?;
        transfer_encoder_weights(&ck, model.as_mut()).with_context(|| format!("transfer from {}", src.display()))?;
    }
    let outcome = train_captioner_with(model.as_mut(), &train, &eval, &vocab, &s.train_config(), |r| {
        eprintln!("epoch {:>3}  loss {:?}  CIDEr-D {:?}", r.epoch, r.train_loss, r.eval_metric);
    })?;
    create_parent(&output)?;
    outcome.checkpoint.save(&output)?;
    write_epoch_log(&paths.captioner_log(), &outcome.log, "eval_cider_d")?;
    eprintln!(
        "kept epoch {} (CIDEr-D {:?}) -> {}",
        outcome.checkpoint.epoch,
        outcome.checkpoint.best_cider_d,
        output.display()
    );
    Ok(())
}

/// The LM is only loaded when the objective needs it.
fn load_lm(path: &Path, vocab: &Vocabulary, needed: bool) -> Result<Option<Box<dyn Trainable>>> {
    if !needed {
        return Ok(None);
    }
    if !path.exists() {
        bail!("beta > 0 needs the language model, but {} does not exist", path.display());
    }
    Ok(Some(load_checkpoint(path, vocab, true)?))
}

fn decode_cmd(s: &Settings, paths: &Layout, checkpoint: PathBuf, lm_path: PathBuf, output: PathBuf) -> Result<()> {
    let vocab = load_vocab(paths)?;
    let eval = load_eval(s, paths)?;
    let captioner = load_checkpoint(&checkpoint, &vocab, false)?;
    let cfg = s.decoding();
    let lm = load_lm(&lm_path, &vocab, cfg.beta > 0.0)?;
    let grids: Vec<_> = eval.examples().iter().map(|e| &e.grid).collect();
    let lm_ref = lm.as_deref().map(|m| m as &dyn SequenceModel);
    let outcomes = decode_all(&grids, captioner.as_ref(), lm_ref, &cfg, &vocab, s.threads)?;
    let records: Vec<DecodeRecord> = eval
        .examples()
        .iter()
        .zip(&outcomes)
        .map(|(e, o)| DecodeRecord::new(&e.image_id, o, &cfg))
        .collect();
    create_parent(&output)?;
    write_records(&output, &records)?;
    let fallbacks = outcomes.iter().filter(|o| o.filtered_fallback).count();
    eprintln!(
        "decoded {} images (beta {}, beam {}, {fallbacks} filter fallbacks) -> {}",
        records.len(),
        cfg.beta,
        cfg.beam_width,
        output.display()
    );
    Ok(())
}

fn evaluate_cmd(paths: &Layout, decoded: PathBuf, output: PathBuf) -> Result<()> {
    let s = paths.0;
    require(&[&decoded])?;
    let vocab = load_vocab(paths)?;
    let eval = load_eval(s, paths)?;
    let records = read_records(&decoded)?;
    let by_id: HashMap<&str, &DecodeRecord> = records.iter().map(|r| (r.image_id.as_str(), r)).collect();
    if by_id.len() != records.len() {
        bail!("{}: duplicate image ids", decoded.display());
    }
    let mut candidates = Vec::with_capacity(eval.len());
    for e in eval.examples() {
        let r = by_id
            .get(e.image_id.as_str())
            .with_context(|| format!("{} has no sentence for {}", decoded.display(), e.image_id))?;
        candidates.push(r.sentence.split_whitespace().map(str::to_owned).collect::<Vec<_>>());
    }
    if records.len() != eval.len() {
        bail!(
            "{} has {} records for {} eval images",
            decoded.display(),
            records.len(),
            eval.len()
        );
    }
    let report = evaluate(&candidates, &eval.references(), &vocab)?;
    create_parent(&output)?;
    write_report(&output, &report)?;
    eprintln!("{report:?} -> {}", output.display());
    Ok(())
}

fn fs_cmd(s: &Settings, paths: &Layout, output: PathBuf) -> Result<()> {
    let vocab = load_vocab(paths)?;
    let eval = load_eval(s, paths)?;
    let report = fs_baseline(&eval, s.seed, &vocab)?;
    create_parent(&output)?;
    write_report(&output, &report)?;
    eprintln!("{report:?} -> {}", output.display());
    Ok(())
}

fn sweep_cmd(s: &Settings, paths: &Layout, checkpoint: PathBuf, lm_path: PathBuf, output: PathBuf) -> Result<()> {
    let vocab = load_vocab(paths)?;
    let eval = load_eval(s, paths)?;
    let captioner = load_checkpoint(&checkpoint, &vocab, false)?;
    let lm = load_lm(&lm_path, &vocab, s.sweep_betas.iter().any(|&b| b > 0.0))?;
    let lm_ref = lm.as_deref().map(|m| m as &dyn SequenceModel);
    let rows = sweep(
        captioner.as_ref(),
        lm_ref,
        &eval,
        &vocab,
        &s.decoding(),
        &s.sweep_betas,
        &s.sweep_beams,
        s.threads,
    )?;
    create_parent(&output)?;
    write_sweep_csv(&output, &rows)?;
    eprintln!("{} sweep rows -> {}", rows.len(), output.display());
    Ok(())
}

fn filter_check(s: &Settings, input: Option<&Path>, lexicon: &Path, output: Option<&Path>) -> Result<()> {
    require(&[lexicon])?;
    let lexicon = load_lexicon(lexicon)?;
    let reader: Box<dyn BufRead> = match input {
        Some(p) => Box::new(BufReader::new(
            fs::File::open(p).with_context(|| format!("opening {}", p.display()))?,
        )),
        None => Box::new(BufReader::new(std::io::stdin())),
    };
    let mut out: Box<dyn Write> = match output {
        Some(p) => {
            create_parent(p)?;
            Box::new(fs::File::create(p).with_context(|| format!("creating {}", p.display()))?)
        }
        None => Box::new(std::io::stdout()),
    };
    writeln!(out, "sentence\ttype\tverdict\trule")?;
    for (i, line) in reader.lines().enumerate() {
        let line = line.context("reading sentences")?;
        if line.trim().is_empty() {
            continue;
        }
        let tokens = preprocess_sentence(&line).with_context(|| format!("line {}", i + 1))?;
        let v = validate_sentence(&tokens, s.feedback_type, &lexicon);
        writeln!(
            out,
            "{}\t{}\t{}\t{}",
            tokens.join(" "),
            s.feedback_type,
            if v.valid { "valid" } else { "invalid" },
            v.rule
        )?;
    }
    out.flush()?;
    Ok(())
}
