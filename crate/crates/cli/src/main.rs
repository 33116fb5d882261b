//! `mdst`: data preparation, training, evaluation and inspection of
//! dialogue-state visual dialog models.

mod dataset;
mod manifest;
mod settings;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use mdst::checkpoint::{load_checkpoint, read_header, save_checkpoint};
use mdst::config::Ablation;
use mdst::data_ingest::synthetic::generate_split;
use mdst::data_ingest::{Split, SynthConfig, Vocabulary};
use mdst::model::{AnswerSource, MdstModel};
use mdst::train_eval::ablation::run_variant;
use mdst::train_eval::eval::{read_generated, write_generated, write_state_dump};
use mdst::train_eval::{
    compute_jacc_avglen, evaluate_ranking, format_table, generate_dialogues, import_human_verdicts, inspect_state,
    oracle_judge, train, MetricsReport,
};
use serde_json::json;

use dataset::{write_synthetic, DataDir};
use manifest::OutDir;
use settings::{read_table, resolve, TrainFlags};

#[derive(Parser)]
#[command(name = "mdst", version, about = "Dialogue-state visual dialog: data, training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct OutArgs {
    /// Output directory; must be empty unless --overwrite is given.
    #[arg(long)]
    out: PathBuf,
    /// Replace files in a non-empty output directory.
    #[arg(long)]
    overwrite: bool,
}

#[derive(Args)]
struct DataArgs {
    /// Data directory with corpora, features and (for synthetic data) worlds.
    #[arg(long, env = "MDST_DATA_DIR")]
    data: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// TOML file overriding training and model defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Vocabulary written by `prepare`.
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AnswersArg {
    Gold,
    Generated,
}

#[derive(Subcommand)]
enum Command {
    /// Build the vocabulary from the training split and check corpus/feature alignment.
    Prepare {
        #[command(flatten)]
        data: DataArgs,
        /// Minimum token count to enter the vocabulary.
        #[arg(long, default_value_t = 1)]
        min_freq: usize,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Generate a synthetic corpus (train and val) with features and worlds.
    Synth {
        /// Key-value synthetic world configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        dialogs: Option<usize>,
        #[arg(long)]
        val_dialogs: Option<usize>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Train a model on the training split and write checkpoints.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Rank candidate answers and report MRR, R@k, Mean and NDCG.
    EvalRank {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "val")]
        split: SplitArg,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Generate answers round by round and write them as JSON lines.
    Generate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "val")]
        split: SplitArg,
        /// Rounds per dialog (default: the longest dialog).
        #[arg(long)]
        rounds: Option<usize>,
        /// Only the first N dialogs.
        #[arg(long)]
        limit: Option<usize>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Judge generated answers and report JACC and AvgLen.
    #[command(group(ArgGroup::new("judge").required(true).args(["oracle", "human_csv"])))]
    Judge {
        /// JSON lines written by `generate`.
        #[arg(long)]
        generated: PathBuf,
        /// Compare against the synthetic answer oracle.
        #[arg(long)]
        oracle: bool,
        /// CSV of human verdicts with columns image_id, round, verdict.
        #[arg(long)]
        human_csv: Option<PathBuf>,
        #[arg(long, env = "MDST_DATA_DIR")]
        data: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "val")]
        split: SplitArg,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Train the full model and its three component removals; print a comparison table.
    Ablate {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        /// Generated rounds per validation dialog (default: all).
        #[arg(long)]
        rounds: Option<usize>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Show where each round's tokens were written in the language states.
    InspectState {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "val")]
        split: SplitArg,
        /// Image id of the dialog (default: the first one).
        #[arg(long)]
        dialog: Option<String>,
        #[arg(long)]
        rounds: Option<usize>,
        #[arg(long, default_value_t = 3)]
        top_k: usize,
        /// Answers written back into the state.
        #[arg(long, value_enum, default_value = "gold")]
        answers: AnswersArg,
        #[command(flatten)]
        out: OutArgs,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Prepare { data, min_freq, out } => prepare(&data.data, min_freq, &out),
        Command::Synth {
            config,
            seed,
            dialogs,
            val_dialogs,
            out,
        } => synth(config.as_deref(), seed, dialogs, val_dialogs, &out),
        Command::Train { data, train, out } => run_train(&data.data, &train, &out),
        Command::EvalRank {
            data,
            checkpoint,
            split,
            out,
        } => eval_rank(&data.data, &checkpoint, split.into(), &out),
        Command::Generate {
            data,
            checkpoint,
            split,
            rounds,
            limit,
            out,
        } => generate(&data.data, &checkpoint, split.into(), rounds, limit, &out),
        Command::Judge {
            generated,
            oracle,
            human_csv,
            data,
            split,
            out,
        } => judge(&generated, oracle, human_csv.as_deref(), data.as_deref(), split.into(), &out),
        Command::Ablate {
            data,
            train,
            rounds,
            out,
        } => ablate(&data.data, &train, rounds, &out),
        Command::InspectState {
            data,
            checkpoint,
            split,
            dialog,
            rounds,
            top_k,
            answers,
            out,
        } => inspect(&data.data, &checkpoint, split.into(), dialog, rounds, top_k, answers, &out),
    }
}

fn claim(out: &OutArgs, command: &str) -> Result<OutDir> {
    OutDir::claim(&out.out, command, out.overwrite)
}

fn prepare(data: &Path, min_freq: usize, out: &OutArgs) -> Result<()> {
    let dir = DataDir::new(data)?;
    let corpus = dir.corpus(Split::Train)?;
    let store = dir.features()?;
    let (n_objects, raw_dim) = dir.feature_shape(&store, &corpus)?;
    let vocab = Vocabulary::build(&corpus, min_freq)?;
    let mut out = claim(out, "prepare")?;
    let path = out.file("vocab.json");
    vocab.save(&path)?;
    Vocabulary::load(&path).context("re-reading the written vocabulary")?;
    let rounds: usize = corpus.dialogs.iter().map(|d| d.rounds.len()).sum();
    let summary = json!({
        "data": data,
        "dialogs": corpus.dialogs.len(),
        "rounds": rounds,
        "vocab_size": vocab.len(),
        "min_freq": min_freq,
        "n_objects": n_objects,
        "raw_dim": raw_dim,
        "has_candidates": corpus.has_candidates(),
        "synthetic": dir.is_synthetic(Split::Train),
    });
    out.write_json("data_summary.json", &summary)?;
    println!(
        "vocabulary of {} tokens from {} dialogs ({n_objects} regions x {raw_dim} features)",
        vocab.len(),
        corpus.dialogs.len()
    );
    out.finish(None, summary)?;
    Ok(())
}

fn synth(
    config: Option<&Path>,
    seed: Option<u64>,
    dialogs: Option<usize>,
    val_dialogs: Option<usize>,
    out: &OutArgs,
) -> Result<()> {
    let mut cfg = match config {
        Some(p) => SynthConfig::load(p)?,
        None => SynthConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(n) = dialogs {
        cfg.dialogs = n;
    }
    if let Some(n) = val_dialogs {
        cfg.val_dialogs = n;
    }
    cfg.validate()?;
    let train = generate_split(&cfg, Split::Train, cfg.dialogs)?;
    let val = generate_split(&cfg, Split::Val, cfg.val_dialogs)?;
    let mut out = claim(out, "synth")?;
    for f in write_synthetic(&out.path, &[&train, &val])? {
        out.file(&f);
    }
    out.write_text("synth.txt", &cfg.to_text())?;
    let check = DataDir::new(&out.path)?;
    check.corpus(Split::Val).context("re-reading the written corpus")?;
    println!(
        "wrote {} train and {} val dialogs to {}",
        cfg.dialogs,
        cfg.val_dialogs,
        out.path.display()
    );
    let snapshot = serde_json::to_value(&cfg)?;
    out.finish(Some(cfg.seed), snapshot)?;
    Ok(())
}

fn load_train_setup(data: &Path, args: &TrainArgs) -> Result<(DataDir, Vocabulary, mdst::train_eval::TrainConfig)> {
    let dir = DataDir::new(data)?;
    let vocab = Vocabulary::load(&args.vocab)?;
    let shape = dir.shape(Split::Train, &vocab)?;
    let file = args.config.as_deref().map(read_table).transpose()?;
    let flags = TrainFlags {
        seed: args.seed,
        epochs: args.epochs,
        batch_size: args.batch_size,
    };
    let cfg = resolve(file.as_ref(), shape, &flags)?;
    Ok((dir, vocab, cfg))
}

fn run_train(data: &Path, args: &TrainArgs, out: &OutArgs) -> Result<()> {
    let (dir, vocab, cfg) = load_train_setup(data, args)?;
    let dialogs = dir.prepared(Split::Train, &vocab, &cfg.model)?;
    let mut out = claim(out, "train")?;
    log::info!("training on {} dialogs for {} epochs", dialogs.len(), cfg.epochs);
    let (model, reports) = train(&cfg, &dialogs, |report, model| {
        let path = out.file(&format!("epoch_{}.ckpt", report.epoch));
        save_checkpoint(&path, model, &vocab, json!({ "epoch": report.epoch, "report": report }))?;
        Ok(())
    })?;
    let path = out.file("model.ckpt");
    save_checkpoint(&path, &model, &vocab, json!({ "epochs": reports.len(), "seed": cfg.seed }))?;
    read_header(&path).context("re-reading the final checkpoint")?;
    out.write_json("train_log.json", &reports)?;
    if let Some(last) = reports.last() {
        println!(
            "trained {} epochs: loss {:.4}, nll/token {:.4}",
            reports.len(),
            last.loss,
            last.nll_per_token
        );
    }
    let snapshot = json!({ "data": data, "vocab": args.vocab, "train": cfg });
    out.finish(Some(cfg.seed), snapshot)?;
    Ok(())
}

fn load_model(checkpoint: &Path) -> Result<(MdstModel, Vocabulary)> {
    if !checkpoint.exists() {
        bail!("checkpoint {} does not exist", checkpoint.display());
    }
    let (model, vocab, _) = load_checkpoint(checkpoint)?;
    Ok((model, vocab))
}

fn eval_rank(data: &Path, checkpoint: &Path, split: Split, out: &OutArgs) -> Result<()> {
    let dir = DataDir::new(data)?;
    let (model, vocab) = load_model(checkpoint)?;
    if !dir.corpus(split)?.has_candidates() {
        bail!("the {split} split has no candidate answers with a ground-truth index; ranking needs them");
    }
    if !model.config.discriminative {
        bail!("checkpoint {} has no candidate-ranking head", checkpoint.display());
    }
    let dialogs = dir.prepared(split, &vocab, &model.config)?;
    let report = evaluate_ranking(&model, &dialogs)?;
    let mut out = claim(out, "eval-rank")?;
    out.write_json("metrics.json", &report)?;
    let table = format_table(&[("model".to_string(), report)]);
    out.write_text("metrics.txt", &table)?;
    print!("{table}");
    out.finish(None, json!({ "data": data, "checkpoint": checkpoint, "split": split }))?;
    Ok(())
}

fn generate(
    data: &Path,
    checkpoint: &Path,
    split: Split,
    rounds: Option<usize>,
    limit: Option<usize>,
    out: &OutArgs,
) -> Result<()> {
    let dir = DataDir::new(data)?;
    let (model, vocab) = load_model(checkpoint)?;
    let mut dialogs = dir.prepared(split, &vocab, &model.config)?;
    if let Some(n) = limit {
        dialogs.truncate(n);
    }
    let rounds = match rounds {
        Some(r) => r,
        None => dialogs.iter().map(|d| d.rounds.len()).max().context("no dialogs to generate")?,
    };
    let generated = generate_dialogues(&model, &vocab, &dialogs, rounds)?;
    let mut out = claim(out, "generate")?;
    let path = out.file("generated.jsonl");
    write_generated(&path, &generated)?;
    let back = read_generated(&path)?;
    if back.iter().map(|d| d.rounds.len()).sum::<usize>() != generated.iter().map(|d| d.rounds.len()).sum::<usize>() {
        bail!("generated file {} does not read back", path.display());
    }
    let truncated = generated.iter().flat_map(|d| &d.rounds).filter(|r| r.truncated).count();
    println!(
        "generated {rounds} rounds for {} dialogs ({truncated} answers hit the length limit)",
        generated.len()
    );
    let snapshot = json!({
        "data": data,
        "checkpoint": checkpoint,
        "split": split,
        "rounds": rounds,
        "limit": limit,
    });
    out.finish(None, snapshot)?;
    Ok(())
}

fn judge(
    generated: &Path,
    oracle: bool,
    human_csv: Option<&Path>,
    data: Option<&Path>,
    split: Split,
    out: &OutArgs,
) -> Result<()> {
    let dialogs = read_generated(generated)?;
    let judged = if oracle {
        let data = data.context("--oracle needs --data (or MDST_DATA_DIR) with synthetic worlds")?;
        let worlds = DataDir::new(data)?.worlds(split)?;
        oracle_judge(&dialogs, &worlds)?
    } else {
        let csv = human_csv.context("either --oracle or --human-csv is required")?;
        import_human_verdicts(csv, &dialogs)?
    };
    let report = compute_jacc_avglen(&judged)?;
    let mut out = claim(out, "judge")?;
    out.write_json("judged.json", &judged)?;
    out.write_json("jacc.json", &report)?;
    println!(
        "JACC {:.2} ({} of {} correct), AvgLen {:.2}",
        report.jacc, report.correct, report.total, report.avg_len
    );
    for r in &report.per_round {
        println!(
            "  round {:>2}: {:6.2} ({} / {})",
            r.round,
            100.0 * r.correct as f64 / r.total as f64,
            r.correct,
            r.total
        );
    }
    let snapshot = json!({
        "generated": generated,
        "judge": if oracle { "oracle" } else { "human-csv" },
        "human_csv": human_csv,
        "data": data,
        "split": split,
    });
    out.finish(None, snapshot)?;
    Ok(())
}

fn variant_file(name: &str) -> String {
    let slug = name.trim_start_matches('-').to_lowercase().replace('-', "_");
    if name.starts_with('-') {
        format!("minus_{slug}.ckpt")
    } else {
        format!("{slug}.ckpt")
    }
}

fn ablate(data: &Path, args: &TrainArgs, rounds: Option<usize>, out: &OutArgs) -> Result<()> {
    let (dir, vocab, cfg) = load_train_setup(data, args)?;
    let worlds = dir.worlds(Split::Val)?;
    let train_set = dir.prepared(Split::Train, &vocab, &cfg.model)?;
    let val_set = dir.prepared(Split::Val, &vocab, &cfg.model)?;
    let rounds = match rounds {
        Some(r) => r,
        None => val_set.iter().map(|d| d.rounds.len()).min().context("empty validation split")?,
    };
    let mut out = claim(out, "ablate")?;
    let mut rows = Vec::new();
    for (name, ab) in Ablation::table_rows() {
        let (row, model) = run_variant(name, &cfg, ab, &train_set, &val_set, &worlds, &vocab, rounds)?;
        save_checkpoint(&out.file(&variant_file(name)), &model, &vocab, json!({ "variant": name }))?;
        rows.push(row);
    }
    let table = format_table(
        &rows
            .iter()
            .map(|r| (r.name.clone(), r.metrics.clone()))
            .collect::<Vec<(String, MetricsReport)>>(),
    );
    out.write_text("table.txt", &table)?;
    out.write_json("ablation.json", &rows)?;
    print!("{table}");
    let snapshot = json!({ "data": data, "vocab": args.vocab, "rounds": rounds, "train": cfg });
    out.finish(Some(cfg.seed), snapshot)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn inspect(
    data: &Path,
    checkpoint: &Path,
    split: Split,
    dialog: Option<String>,
    rounds: Option<usize>,
    top_k: usize,
    answers: AnswersArg,
    out: &OutArgs,
) -> Result<()> {
    let dir = DataDir::new(data)?;
    let (model, vocab) = load_model(checkpoint)?;
    let dialogs = dir.prepared(split, &vocab, &model.config)?;
    let chosen = match &dialog {
        Some(id) => dialogs
            .iter()
            .find(|d| &d.image_id == id)
            .with_context(|| format!("no dialog for image {id} in the {split} split"))?,
        None => dialogs.first().context("split has no dialogs")?,
    };
    let rounds = rounds.unwrap_or(chosen.rounds.len());
    let source = match answers {
        AnswersArg::Gold => AnswerSource::Gold,
        AnswersArg::Generated => AnswerSource::Generated,
    };
    let insp = inspect_state(&model, &vocab, chosen, rounds, source, top_k)?;
    let mut out = claim(out, "inspect-state")?;
    out.write_json("inspection.json", &insp)?;
    write_state_dump(&out.path, &insp)?;
    out.file("states.bin");
    out.file("states.json");
    println!("dialog {} (vision digest {})", insp.image_id, insp.vision_digest);
    for r in &insp.rounds {
        let label = if r.round == 0 { "caption".to_string() } else { format!("round {}", r.round) };
        let top: Vec<String> = r.top_slots.iter().map(|(s, w)| format!("{s} {w:.2}")).collect();
        println!("{label:>9}: {}", r.text);
        println!("           top slots: {}", top.join(", "));
        let tokens: Vec<String> = r.assignments.iter().map(|a| format!("{}->{}", a.token, a.slot)).collect();
        println!("           tokens: {}", tokens.join(" "));
    }
    let snapshot = json!({
        "data": data,
        "checkpoint": checkpoint,
        "split": split,
        "dialog": insp.image_id,
        "rounds": rounds,
        "top_k": top_k,
    });
    out.finish(None, snapshot)?;
    Ok(())
}
