//! `sarcbench`: ingest, split, build profiles, train, tune, evaluate, report.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use sarcbench::corpus::{balanced_split, corpus_stats, read_sarc_file, write_sarc_file, DatasetSplit};
use sarcbench::harness::{
    evaluate_checkpoints, merge, random_search, render_report, run_experiment, score_accuracy, train_model,
    validation_accuracy, EvalReport, ExperimentConfig, ModelKind, ModelResources, PersonalitySource, ReportFormat,
    SearchSpace, DEFAULT_BOOTSTRAP,
};
use sarcbench::profiles::{build_profiles, ProfileStore};
use sarcbench::rcnn::{pretrained_dir, ContextualEncoder, EncoderSpec, MiniConfig, PretrainedEncoder};

const CORPUS_FILE: &str = "corpus.jsonl";
const PROFILES_FILE: &str = "profiles.bin";

#[derive(Parser)]
#[command(name = "sarcbench", version, about = "Sarcasm detection benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum EncoderChoice {
    /// Small seeded transformer; needs no downloads.
    Mini,
    /// RoBERTa-base weights from --encoder-dir or the cache.
    Pretrained,
}

#[derive(clap::Args)]
struct EncoderArgs {
    /// Contextual encoder for RCNN.
    #[arg(long, value_enum, default_value = "mini")]
    encoder: EncoderChoice,
    /// Directory with config.json, vocab.json, merges.txt and model.safetensors.
    #[arg(long)]
    encoder_dir: Option<PathBuf>,
}

impl EncoderArgs {
    fn spec(&self) -> Result<EncoderSpec> {
        Ok(match self.encoder {
            EncoderChoice::Mini => EncoderSpec::Mini(MiniConfig::default()),
            EncoderChoice::Pretrained => PretrainedEncoder::load(&pretrained_dir(self.encoder_dir.as_deref()))?.spec(),
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Validate a JSONL corpus and copy it, with statistics, into a data directory.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a class-balanced train/validation/test split to <data>/split.
    Split {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.2)]
        test_frac: f64,
        #[arg(long, default_value_t = 0.2)]
        val_frac: f64,
        /// Output directory (default: <data>/split).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build user and forum profiles from a split's training set.
    Profiles {
        /// Split directory, or a data directory containing `split/`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Hyperparameter JSON (ds, dp, dt, k, pv_* ...).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Trained personality CNN checkpoint; the lexicon scorer otherwise.
        #[arg(long)]
        personality: Option<PathBuf>,
    },
    /// Train one model and save its checkpoint.
    Train {
        #[arg(long)]
        model: ModelKind,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        data: PathBuf,
        /// Profile archive (needed by cascade and cue-svm).
        #[arg(long)]
        profiles: Option<PathBuf>,
        /// Checkpoint path (default: <model>-seed<seed>.bin).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        encoder: EncoderArgs,
    },
    /// Random search over the model's default space, scored on validation accuracy.
    Tune {
        #[arg(long)]
        model: ModelKind,
        #[arg(long)]
        budget: usize,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        profiles: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Trial log path (default: tune-<model>.json).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        encoder: EncoderArgs,
    },
    /// Score checkpoints on a split's test set and write a report table.
    Eval {
        #[arg(long, num_args = 1.., required = true)]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// report.md or report.csv; the extension picks the format.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_BOOTSTRAP)]
        n_boot: usize,
    },
    /// Render the report of a finished run.
    Report {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value = "md", value_parser = ["md", "markdown", "csv"])]
        format: String,
    },
    /// Run a full experiment from a JSON config.
    Experiment {
        #[arg(long)]
        config: PathBuf,
    },
}

/// Accepts either a split directory or a data directory holding `split/`.
fn split_dir(data: &Path) -> PathBuf {
    if data.join("manifest.json").is_file() {
        data.to_path_buf()
    } else {
        data.join("split")
    }
}

fn load_split(data: &Path) -> Result<DatasetSplit> {
    let dir = split_dir(data);
    DatasetSplit::load(&dir).with_context(|| format!("loading split from {}", dir.display()))
}

fn load_hp(kind: Option<ModelKind>, config: Option<&Path>, seed: u64) -> Result<sarcbench::neural::HyperParams> {
    let overrides: serde_json::Map<String, serde_json::Value> = match config {
        Some(p) => serde_json::from_slice(&std::fs::read(p).with_context(|| format!("reading {}", p.display()))?)
            .with_context(|| format!("{} is not a JSON object of hyperparameters", p.display()))?,
        None => Default::default(),
    };
    let base = kind.map_or_else(sarcbench::neural::HyperParams::cnn_preset, ModelKind::default_hyperparams);
    Ok(merge(base, [&overrides], seed)?)
}

fn resources(kind: ModelKind, profiles: Option<&Path>, encoder: &EncoderArgs) -> Result<ModelResources> {
    let profiles = match (kind.needs_profiles(), profiles) {
        (true, None) => bail!(sarcbench::Error::Data(format!("{kind} needs --profiles"))),
        (_, Some(p)) => Some(Arc::new(ProfileStore::load(p)?)),
        (false, None) => None,
    };
    let encoder = if kind == ModelKind::Rcnn { encoder.spec()? } else { EncoderSpec::Mini(MiniConfig::default()) };
    Ok(ModelResources { profiles, encoder })
}

fn write_report(report: &EvalReport, out: &Path) -> Result<()> {
    let text = render_report(report, ReportFormat::from_path(out)?)?;
    std::fs::write(out, &text)?;
    print!("{text}");
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Ingest { input, out } => {
            let examples = read_sarc_file(&input).with_context(|| format!("reading {}", input.display()))?;
            let stats = corpus_stats(&examples)?;
            std::fs::create_dir_all(&out)?;
            write_sarc_file(&out.join(CORPUS_FILE), &examples)?;
            std::fs::write(out.join("stats.json"), serde_json::to_string_pretty(&stats)? + "\n")?;
            println!("{} examples ({} sarcastic) -> {}", examples.len(), stats.sarcastic, out.display());
        }
        Command::Split { data, seed, test_frac, val_frac, out } => {
            let corpus = if data.is_file() { data.clone() } else { data.join(CORPUS_FILE) };
            let examples = read_sarc_file(&corpus).with_context(|| format!("reading {}", corpus.display()))?;
            let split = balanced_split(&examples, test_frac, val_frac, seed)?;
            let out = out.unwrap_or_else(|| data.join("split"));
            split.save(&out)?;
            let m = split.manifest();
            println!(
                "split {}: train {}/{}, validation {}/{}, test {}/{} (sarcastic/non-sarcastic) -> {}",
                m.split_id,
                m.train.sarcastic,
                m.train.non_sarcastic,
                m.validation.sarcastic,
                m.validation.non_sarcastic,
                m.test.sarcastic,
                m.test.non_sarcastic,
                out.display()
            );
        }
        Command::Profiles { data, out, config, seed, personality } => {
            let split = load_split(&data)?;
            let hp = load_hp(None, config.as_deref(), seed)?;
            let source = personality.map_or(PersonalitySource::Lexicon, |checkpoint| PersonalitySource::Cnn { checkpoint });
            let scorer = source.scorer(hp.dp)?;
            let store = build_profiles(&split.train, &hp, scorer.as_ref())?;
            std::fs::create_dir_all(&out)?;
            let path = out.join(PROFILES_FILE);
            store.save(&path)?;
            println!(
                "{} users, {} forums (CCA k={}) -> {}",
                store.users.len(),
                store.forums.len(),
                store.meta.k,
                path.display()
            );
        }
        Command::Train { model, config, seed, data, profiles, out, encoder } => {
            let split = load_split(&data)?;
            let hp = load_hp(Some(model), config.as_deref(), seed)?;
            let res = resources(model, profiles.as_deref(), &encoder)?;
            let (trained, log) = train_model(model, &split, &hp, &res)?;
            let out = out.unwrap_or_else(|| PathBuf::from(format!("{model}-seed{seed}.bin")));
            let profiles_ref = match profiles.as_deref() {
                Some(p) => Some(sarcbench::archive::ArtifactRef::of(&std::fs::canonicalize(p)?)?),
                None => None,
            };
            trained.save(&out, profiles_ref.as_ref())?;
            if let Some(log) = log {
                std::fs::write(out.with_extension("log.json"), serde_json::to_string_pretty(&log)? + "\n")?;
            }
            if !split.validation.is_empty() {
                println!("validation accuracy {:.4}", score_accuracy(&trained, &split.validation)?);
            }
            println!("checkpoint -> {}", out.display());
        }
        Command::Tune { model, budget, data, config, profiles, seed, out, encoder } => {
            let split = load_split(&data)?;
            let base = load_hp(Some(model), config.as_deref(), seed)?;
            let res = resources(model, profiles.as_deref(), &encoder)?;
            let space = match model {
                ModelKind::Rcnn => SearchSpace::rcnn(budget, seed),
                _ => SearchSpace::cascade(budget, seed),
            };
            let outcome = random_search(&space, &base, &split, |hp, s| validation_accuracy(model, hp, s, &res))?;
            let out = out.unwrap_or_else(|| PathBuf::from(format!("tune-{model}.json")));
            outcome.save(&out)?;
            for t in &outcome.trials {
                match (&t.validation_accuracy, &t.error) {
                    (Some(a), _) => println!("trial {:>3}  {:.4}  {}", t.index, a, t.params),
                    (None, e) => println!("trial {:>3}  failed: {}", t.index, e.as_deref().unwrap_or("")),
                }
            }
            println!("best trial {} -> {}", outcome.best_trial, out.display());
        }
        Command::Eval { checkpoints, data, out, n_boot } => {
            ReportFormat::from_path(&out)?;
            let split = load_split(&data)?;
            let report = evaluate_checkpoints(&checkpoints, &split.test, n_boot)?;
            write_report(&report, &out)?;
        }
        Command::Report { run, format } => {
            let report = EvalReport::load(&run.join("report.json"))
                .with_context(|| format!("reading {}", run.join("report.json").display()))?;
            print!("{}", render_report(&report, format.parse()?)?);
        }
        Command::Experiment { config } => {
            let cfg = ExperimentConfig::load(&config).with_context(|| format!("reading {}", config.display()))?;
            let output = run_experiment(&cfg)?;
            eprintln!("run directory: {}", output.dir.display());
            let report = &output.report;
            if !report.models.is_empty() {
                let text = render_report(report, ReportFormat::Markdown)?;
                std::fs::write(output.dir.join("report.md"), &text)?;
                print!("{text}");
            }
            let failed: Vec<_> = report.failed_stages().collect();
            for s in &failed {
                eprintln!("stage {} failed: {}", s.stage, s.error.as_deref().unwrap_or(""));
            }
            if let Some(first) = failed.first() {
                return Ok(ExitCode::from(if first.data_error { 2 } else { 3 }));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// 1 for unknown names given on the command line, 2 for problems with the
/// input data, 3 for anything that failed during a run.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<sarcbench::Error>() {
            return match e {
                sarcbench::Error::Unknown { .. } => 1,
                e if e.is_data_error() => 2,
                _ => 3,
            };
        }
        if cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() {
            return 2;
        }
    }
    3
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
