//! End-to-end runs: corpus, split, profiles, training, scoring, significance.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::metrics::{accuracy, confusion, f1, significance, ConfusionCounts, DEFAULT_BOOTSTRAP};
use super::models::{gold_labels, train_model, ModelKind, ModelResources, TrainedModel};
use crate::archive::{sha256_file, ArtifactRef};
use crate::corpus::{balanced_split, read_sarc_file, ClassCounts, DatasetSplit, Label, SequenceExample};
use crate::error::{Error, Result};
use crate::neural::HyperParams;
use crate::profiles::{build_profiles, CnnTraitScorer, LexiconScorer, PersonalityScorer, ProfileStore};
use crate::rcnn::{EncoderSpec, MiniConfig};
use crate::training::Prediction;

pub const HUMAN_ACCURACY: f64 = 0.82;
pub const SIGNIFICANCE_NOTE: &str =
    "paired bootstrap over test examples on the accuracy difference; no published p-values exist to compare against";

/// Where per-user personality vectors come from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum PersonalitySource {
    #[default]
    Lexicon,
    /// A trained trait CNN checkpoint.
    Cnn { checkpoint: PathBuf },
}

impl PersonalitySource {
    pub fn scorer(&self, dp: usize) -> Result<Box<dyn PersonalityScorer>> {
        Ok(match self {
            Self::Lexicon => Box::new(LexiconScorer::new(dp)),
            Self::Cnn { checkpoint } => Box::new(CnnTraitScorer::load(checkpoint)?),
        })
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_fraction() -> f64 {
    0.2
}
fn default_boot() -> usize {
    DEFAULT_BOOTSTRAP
}
fn default_out() -> PathBuf {
    PathBuf::from("runs")
}
fn default_encoder() -> EncoderSpec {
    EncoderSpec::Mini(MiniConfig::default())
}

/// Run configuration, read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// A JSONL corpus, or a split directory written by `DatasetSplit::save`.
    pub data: PathBuf,
    pub models: Vec<ModelKind>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub split_seed: u64,
    #[serde(default = "default_fraction")]
    pub test_fraction: f64,
    #[serde(default = "default_fraction")]
    pub val_fraction: f64,
    /// Hyperparameter overrides applied to every model and to profile building.
    #[serde(default)]
    pub hyperparams: serde_json::Map<String, Value>,
    /// Per-model overrides, keyed by model name, applied after `hyperparams`.
    #[serde(default)]
    pub model_hyperparams: BTreeMap<ModelKind, serde_json::Map<String, Value>>,
    #[serde(default = "default_encoder")]
    pub encoder: EncoderSpec,
    #[serde(default)]
    pub personality: PersonalitySource,
    #[serde(default = "default_boot")]
    pub n_boot: usize,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn new(data: impl Into<PathBuf>, models: Vec<ModelKind>) -> Self {
        Self {
            data: data.into(),
            models,
            seeds: default_seeds(),
            split_seed: 0,
            test_fraction: default_fraction(),
            val_fraction: default_fraction(),
            hyperparams: Default::default(),
            model_hyperparams: Default::default(),
            encoder: default_encoder(),
            personality: PersonalitySource::Lexicon,
            n_boot: DEFAULT_BOOTSTRAP,
            out_dir: default_out(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    /// Model defaults, then shared overrides, then per-model overrides, then `seed`.
    pub fn hyperparams_for(&self, kind: ModelKind, seed: u64) -> Result<HyperParams> {
        let empty = serde_json::Map::new();
        let hp = merge(kind.default_hyperparams(), [&self.hyperparams, self.model_hyperparams.get(&kind).unwrap_or(&empty)], seed)?;
        Ok(hp)
    }

    /// Settings for profile building: the CNN preset with shared overrides.
    pub fn profile_hyperparams(&self, seed: u64) -> Result<HyperParams> {
        merge(HyperParams::cnn_preset(), [&self.hyperparams], seed)
    }
}

/// Applies JSON overrides to `base`.
pub fn merge<'a>(
    base: HyperParams,
    overrides: impl IntoIterator<Item = &'a serde_json::Map<String, Value>>,
    seed: u64,
) -> Result<HyperParams> {
    let mut v = serde_json::to_value(base)?;
    for o in overrides {
        for (k, x) in o {
            v[k.as_str()] = x.clone();
        }
    }
    let mut hp: HyperParams = serde_json::from_value(v).map_err(|e| Error::HyperParams(e.to_string()))?;
    hp.seed = seed;
    hp.validate()?;
    Ok(hp)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub status: StageStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// The failure came from the input data rather than from training.
    #[serde(default)]
    pub data_error: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRow {
    pub model: ModelKind,
    pub seed: u64,
    pub split_id: String,
    pub n: usize,
    pub accuracy: f64,
    pub f1: f64,
    pub confusion: ConfusionCounts,
    pub checkpoint: String,
    pub checkpoint_sha256: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predictions: Option<String>,
    /// Test examples whose author had no profile.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cold_start_users: Option<usize>,
}

impl ModelRow {
    /// Report label, with the seed when a model appears more than once.
    pub fn label(&self, report: &EvalReport) -> String {
        if report.models.iter().filter(|r| r.model == self.model).count() > 1 {
            format!("{} (seed {})", self.model.display_name(), self.seed)
        } else {
            self.model.display_name().to_string()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseSignificance {
    pub a: ModelKind,
    pub a_seed: u64,
    pub b: ModelKind,
    pub b_seed: u64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split_id: Option<String>,
    pub test_counts: Option<ClassCounts>,
    pub models: Vec<ModelRow>,
    pub significance: Vec<PairwiseSignificance>,
    pub n_boot: usize,
    pub significance_note: String,
    pub human_accuracy: f64,
    pub stages: Vec<StageRecord>,
}

impl EvalReport {
    fn empty(n_boot: usize) -> Self {
        Self {
            split_id: None,
            test_counts: None,
            models: vec![],
            significance: vec![],
            n_boot,
            significance_note: SIGNIFICANCE_NOTE.into(),
            human_accuracy: HUMAN_ACCURACY,
            stages: vec![],
        }
    }

    pub fn failed_stages(&self) -> impl Iterator<Item = &StageRecord> {
        self.stages.iter().filter(|s| s.status == StageStatus::Failed)
    }

    pub fn is_complete(&self) -> bool {
        self.failed_stages().next().is_none()
    }

    fn record<T>(&mut self, stage: impl Into<String>, outcome: Result<T>) -> Option<T> {
        let stage = stage.into();
        match outcome {
            Ok(v) => {
                self.stages.push(StageRecord { stage, status: StageStatus::Ok, error: None, data_error: false });
                Some(v)
            }
            Err(e) => {
                self.stages.push(StageRecord {
                    stage,
                    status: StageStatus::Failed,
                    error: Some(e.to_string()),
                    data_error: e.is_data_error(),
                });
                None
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    /// Fills in p-values for every pair of rows (only pairs sharing a seed
    /// when `same_seed` is set). Resampling is seeded by the first row's seed.
    fn add_significance(&mut self, preds: &[(ModelKind, u64, Vec<Label>)], gold: &[Label], same_seed: bool) -> Result<()> {
        for (i, (a, a_seed, pa)) in preds.iter().enumerate() {
            for (b, b_seed, pb) in &preds[i + 1..] {
                if !same_seed || a_seed == b_seed {
                    let p_value = significance(pa, pb, gold, self.n_boot, *a_seed)?;
                    self.significance.push(PairwiseSignificance { a: *a, a_seed: *a_seed, b: *b, b_seed: *b_seed, p_value });
                }
            }
        }
        Ok(())
    }
}

pub fn write_predictions(path: &Path, preds: &[Prediction]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for p in preds {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?);
    }
    Ok(out)
}

/// Accuracy and F1 of a prediction file against `gold`, counted directly
/// from the file without the metric functions.
pub fn recount(path: &Path, gold: &[SequenceExample]) -> Result<(f64, f64)> {
    let labels: HashMap<&str, Label> = gold.iter().map(|e| (e.id.as_str(), e.label)).collect();
    let preds = read_predictions(path)?;
    if preds.len() != gold.len() {
        return Err(Error::data(format!("{}: {} predictions for {} examples", path.display(), preds.len(), gold.len())));
    }
    let (mut right, mut pos_right, mut pos_pred, mut pos_gold) = (0u64, 0u64, 0u64, 0u64);
    for p in &preds {
        let g = *labels
            .get(p.id.as_str())
            .ok_or_else(|| Error::data(format!("{}: unknown example id {}", path.display(), p.id)))?;
        let is_pos = |l: Label| l == Label::Sarcastic;
        right += u64::from(p.pred == g);
        pos_right += u64::from(is_pos(p.pred) && is_pos(g));
        pos_pred += u64::from(is_pos(p.pred));
        pos_gold += u64::from(is_pos(g));
    }
    let acc = right as f64 / preds.len() as f64;
    let f = if pos_pred + pos_gold == 0 { 1.0 } else { (2 * pos_right) as f64 / (pos_pred + pos_gold) as f64 };
    Ok((acc, f))
}

fn load_split(config: &ExperimentConfig) -> Result<DatasetSplit> {
    if config.data.is_dir() {
        DatasetSplit::load(&config.data)
    } else {
        let examples = read_sarc_file(&config.data)?;
        balanced_split(&examples, config.test_fraction, config.val_fraction, config.split_seed)
    }
}

/// Creates `<out>/run-<UTC timestamp>`, adding `-2`, `-3`, ... on collision.
pub fn create_run_dir(out: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(out)?;
    let stamp = chrono::Utc::now().format("run-%Y%m%dT%H%M%SZ").to_string();
    for n in 1.. {
        let dir = if n == 1 { out.join(&stamp) } else { out.join(format!("{stamp}-{n}")) };
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e.into()),
        }
    }
    unreachable!()
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub report: EvalReport,
}

/// Stored test-set evaluation of one trained model.
struct Scored {
    row: ModelRow,
    labels: Vec<Label>,
}

fn score_and_store(
    model: &TrainedModel,
    test: &[SequenceExample],
    split_id: &str,
    checkpoint: &Path,
    predictions: Option<(&Path, &str)>,
) -> Result<Scored> {
    let preds = model.predict(test)?;
    let labels: Vec<Label> = preds.iter().map(|p| p.pred).collect();
    let c = confusion(&labels, &gold_labels(test))?;
    let (acc, f) = (accuracy(&c)?, f1(&c)?);
    let mut pred_name = None;
    if let Some((path, name)) = predictions {
        write_predictions(path, &preds)?;
        let (ra, rf) = recount(path, test)?;
        if (ra - acc).abs() > 1e-12 || (rf - f).abs() > 1e-12 {
            return Err(Error::Training(format!(
                "recount of {} disagrees: accuracy {ra} vs {acc}, F1 {rf} vs {f}",
                path.display()
            )));
        }
        pred_name = Some(name.to_string());
    }
    let cold = preds
        .iter()
        .any(|p| p.cold_start_user.is_some())
        .then(|| preds.iter().filter(|p| p.cold_start_user == Some(true)).count());
    let row = ModelRow {
        model: model.kind(),
        seed: model.seed(),
        split_id: split_id.to_string(),
        n: test.len(),
        accuracy: acc,
        f1: f,
        confusion: c,
        checkpoint: checkpoint.to_string_lossy().into_owned(),
        checkpoint_sha256: sha256_file(checkpoint)?,
        predictions: pred_name,
        cold_start_users: cold,
    };
    Ok(Scored { row, labels })
}

/// Runs every configured model for every seed under a fresh run directory.
///
/// Layout: `config.json`, `split/`, `checkpoints/` (models and profile
/// archives), `predictions/`, `logs/`, `report.json`. Stage failures are
/// recorded in the report and the remaining stages still run; only an
/// unwritable run directory is an error. Paths inside the report are
/// relative to the run directory and it carries no timestamps, so identical
/// configs give identical report bytes.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutput> {
    let dir = create_run_dir(&config.out_dir)?;
    for sub in ["split", "checkpoints", "predictions", "logs"] {
        std::fs::create_dir(dir.join(sub))?;
    }
    std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(config)? + "\n")?;
    let mut report = EvalReport::empty(config.n_boot);
    run_stages(config, &dir, &mut report);
    std::fs::write(dir.join("report.json"), report.to_json()?)?;
    Ok(RunOutput { dir, report })
}

fn run_stages(config: &ExperimentConfig, dir: &Path, report: &mut EvalReport) {
    let Some(split) = report.record("split", load_split(config).and_then(|s| s.save(&dir.join("split")).map(|_| s))) else {
        return;
    };
    let split_id = split.split_id();
    report.split_id = Some(split_id.clone());
    report.test_counts = Some(ClassCounts::of(&split.test));
    let gold = gold_labels(&split.test);
    let mut scored: Vec<(ModelKind, u64, Vec<Label>)> = Vec::new();

    for &seed in &config.seeds {
        let needs_profiles = config.models.iter().any(|k| k.needs_profiles());
        let profiles: Option<(Arc<ProfileStore>, ArtifactRef)> = if needs_profiles {
            let path = dir.join("checkpoints").join(format!("profiles-seed{seed}.bin"));
            report.record(format!("profiles[seed={seed}]"), (|| {
                let hp = config.profile_hyperparams(seed)?;
                let scorer = config.personality.scorer(hp.dp)?;
                let store = build_profiles(&split.train, &hp, scorer.as_ref())?;
                store.save(&path)?;
                Ok((Arc::new(store), ArtifactRef::sibling(&path)?))
            })())
        } else {
            None
        };

        for &kind in &config.models {
            let stage = format!("{kind}[seed={seed}]");
            if kind.needs_profiles() && profiles.is_none() {
                report.record::<()>(stage, Err(Error::data("profiles unavailable for this seed")));
                continue;
            }
            let res = ModelResources { profiles: profiles.as_ref().map(|p| p.0.clone()), encoder: config.encoder.clone() };
            let name = format!("{kind}-seed{seed}");
            let outcome = (|| {
                let hp = config.hyperparams_for(kind, seed)?;
                let (model, log) = train_model(kind, &split, &hp, &res)?;
                let ckpt_rel = PathBuf::from("checkpoints").join(format!("{name}.bin"));
                model.save(&dir.join(&ckpt_rel), profiles.as_ref().map(|p| &p.1))?;
                // Score what was written, so the report reproduces from the f32 checkpoint.
                let model = TrainedModel::load(&dir.join(&ckpt_rel), None)?;
                if let Some(log) = log {
                    std::fs::write(dir.join("logs").join(format!("{name}.json")), serde_json::to_string_pretty(&log)? + "\n")?;
                }
                let pred_rel = format!("predictions/{name}.jsonl");
                let mut s = score_and_store(&model, &split.test, &split_id, &dir.join(&ckpt_rel), Some((&dir.join(&pred_rel), &pred_rel)))?;
                s.row.checkpoint = ckpt_rel.to_string_lossy().replace('\\', "/");
                Ok(s)
            })();
            if let Some(s) = report.record(stage, outcome) {
                scored.push((kind, seed, s.labels));
                report.models.push(s.row);
            }
        }
    }
    let sig = report.add_significance(&scored, &gold, true);
    report.record("significance", sig);
}

/// Scores saved checkpoints on `test` and compares every pair of them.
pub fn evaluate_checkpoints(checkpoints: &[PathBuf], test: &[SequenceExample], n_boot: usize) -> Result<EvalReport> {
    if checkpoints.is_empty() {
        return Err(Error::data("no checkpoints given"));
    }
    let mut report = EvalReport::empty(n_boot);
    report.test_counts = Some(ClassCounts::of(test));
    let mut scored = Vec::new();
    for path in checkpoints {
        let model = TrainedModel::load(path, None)?;
        let s = score_and_store(&model, test, "", path, None)?;
        scored.push((s.row.model, s.row.seed, s.labels));
        report.models.push(s.row);
    }
    report.add_significance(&scored, &gold_labels(test), false)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_layer_in_order() {
        let mut c = ExperimentConfig::new("x.jsonl", vec![ModelKind::Cascade]);
        c.hyperparams.insert("m".into(), 32.into());
        c.model_hyperparams.insert(ModelKind::Cascade, serde_json::from_str(r#"{"m": 16, "ks": 3}"#).unwrap());
        let hp = c.hyperparams_for(ModelKind::Cascade, 7).unwrap();
        assert_eq!((hp.m, hp.ks, hp.seed, hp.learning_rate), (16, 3, 7, 1e-3));
        assert_eq!(c.hyperparams_for(ModelKind::Rcnn, 0).unwrap().learning_rate, 2e-5);
        assert_eq!(c.profile_hyperparams(0).unwrap().m, 32);
        c.hyperparams.insert("bogus".into(), 1.into());
        assert!(c.hyperparams_for(ModelKind::Rcnn, 0).is_err());
    }

    #[test]
    fn config_json_defaults() {
        let c: ExperimentConfig = serde_json::from_str(r#"{"data": "d.jsonl", "models": ["bow-svm", "cue-svm"]}"#).unwrap();
        assert_eq!(c.seeds, vec![0]);
        assert_eq!(c.n_boot, 10_000);
        assert_eq!(c.personality, PersonalitySource::Lexicon);
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"data": "d", "models": ["nope"]}"#).is_err());
    }

    #[test]
    fn run_dirs_never_collide() {
        let out = tempfile::tempdir().unwrap();
        let a = create_run_dir(out.path()).unwrap();
        let b = create_run_dir(out.path()).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn recount_matches_metrics() {
        let dir = tempfile::tempdir().unwrap();
        let gold: Vec<SequenceExample> = (0..7)
            .map(|i| SequenceExample {
                id: format!("g{i}"),
                author: "a".into(),
                forum: "f".into(),
                ancestors: vec![],
                response: "x".into(),
                label: if i < 3 { Label::Sarcastic } else { Label::NonSarcastic },
            })
            .collect();
        let preds: Vec<Prediction> = (0..7)
            .map(|i| Prediction::from_probs(format!("g{i}"), if i % 2 == 0 { [0.2, 0.8] } else { [0.9, 0.1] }))
            .collect();
        let path = dir.path().join("p.jsonl");
        write_predictions(&path, &preds).unwrap();
        assert_eq!(read_predictions(&path).unwrap(), preds);
        let c = confusion(&preds.iter().map(|p| p.pred).collect::<Vec<_>>(), &gold_labels(&gold)).unwrap();
        assert_eq!(recount(&path, &gold).unwrap(), (accuracy(&c).unwrap(), f1(&c).unwrap()));
    }
}
