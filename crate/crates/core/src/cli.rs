//! Command-line front end. Every command writes its artifacts plus a
//! `run_config.json` echo into `--out-dir`; `rerun` replays such an echo.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arithmetic::{
    add_remove_probe, linearity_probe, AddRemoveReport, DirectionMode, LinearityReport,
};
use crate::classifier::{train, ClassifierWeights, TrainConfig, WeightsFile};
use crate::countex::{
    as_scored_explanation, countex_sparsity, optimize, top_k_concepts, ConceptLibrary,
    CountexConfig, LossBreakdown, SparsityMode,
};
use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, TextEmbeddingTable};
use crate::metrics::{
    compute_report, CohortImage, DiversityVariant, EvaluationCohort, MetricReport, MetricValue,
};
use crate::model::{ExplanationSet, ExplanationStatus, ImageRecord, PrivacyLabel};
use crate::providers::{
    generate_world, EmbeddingProvider, ProviderConfig, ProviderKind, WorldConfig,
};
use crate::robustness::{
    curve_rows, default_thresholds, explanation_flips, image_seed, mean_flip_confidence,
    random_flips, validity_at_thresholds, Noise, RobustnessConfig, CURVE_HEADER,
};
use crate::scenarios::ScenarioConfig;
use crate::selection::{explain_manifest, ExplainConfig, Objective, SelectionConfig};

/// Default seed of the synthetic oracle, shared by `synth-world` and the
/// provider flags so a generated world and its explanations line up.
pub const DEFAULT_ORACLE_SEED: u64 = 7;

#[derive(Debug, Parser)]
#[command(
    name = "conceptcf",
    version,
    about = "Concept-based counterfactual explanations"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "command")]
pub enum Command {
    /// Generate a labelled world from the synthetic oracle.
    SynthWorld(SynthWorldArgs),
    /// Train the linear privacy classifier.
    Train(TrainArgs),
    /// Explain every correctly classified private image.
    Explain(ExplainArgs),
    /// Score an explanations file.
    Evaluate(EvaluateArgs),
    /// Run compositionality probes against a provider.
    Probe(ProbeArgs),
    /// Run the optimization baseline over a concept library.
    Baseline(BaselineArgs),
    /// Random-perturbation controls and validity-versus-threshold curves.
    Robustness(RobustnessArgs),
    /// Replay a `run_config.json` echo.
    Rerun(RerunArgs),
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ProviderArgs {
    /// manifest | synthetic | remote
    #[arg(long, default_value = "synthetic")]
    pub provider: ProviderKind,
    /// Bridge URL; falls back to $CONCEPTCF_BRIDGE_ENDPOINT.
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Text-embedding table for the manifest provider.
    #[arg(long)]
    pub text_table: Option<PathBuf>,
    /// Seed of the synthetic oracle.
    #[arg(long, default_value_t = DEFAULT_ORACLE_SEED)]
    pub seed: u64,
    /// Residual magnitude of the synthetic oracle.
    #[arg(long, default_value_t = 0.0)]
    pub residual: f64,
    #[arg(long, default_value = crate::providers::DEFAULT_ANCHOR_PROMPT)]
    pub anchor: String,
}

impl ProviderArgs {
    fn build(
        &self,
        manifest: Option<Arc<DatasetManifest>>,
        dimension: Option<usize>,
    ) -> Result<Box<dyn EmbeddingProvider>> {
        let table = self
            .text_table
            .as_ref()
            .map(TextEmbeddingTable::load)
            .transpose()?;
        ProviderConfig {
            kind: self.provider,
            anchor_prompt: self.anchor.clone(),
            seed: self.seed,
            residual: self.residual,
            endpoint: self.endpoint.clone(),
            ..ProviderConfig::default()
        }
        .build(manifest, table, dimension)
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SynthWorldArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub dimension: usize,
    #[arg(long, default_value_t = 200)]
    pub images: usize,
    #[arg(long, default_value_t = 12)]
    pub vocabulary: usize,
    #[arg(long, default_value_t = 2)]
    pub min_tags: usize,
    #[arg(long, default_value_t = 4)]
    pub max_tags: usize,
    #[arg(long, default_value = "secret")]
    pub sensitive_tag: String,
    #[arg(long, default_value_t = 0.5)]
    pub private_fraction: f64,
    #[arg(long, default_value_t = DEFAULT_ORACLE_SEED)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.0)]
    pub residual: f64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    /// Shuffle seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DirectionArg {
    Joined,
    PerTag,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ExplainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub provider: ProviderArgs,
    /// Maximum scenario length.
    #[arg(long, default_value_t = 3)]
    pub s: usize,
    /// Size of the diverse subset.
    #[arg(long, default_value_t = 3)]
    pub q: usize,
    #[arg(long, value_delimiter = ',', default_value = "confidence,proximity")]
    pub objectives: Vec<Objective>,
    #[arg(long, default_value_t = 10_000)]
    pub max_scenarios: usize,
    #[arg(long, value_enum, default_value_t = DirectionArg::Joined)]
    pub direction: DirectionArg,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantArg {
    /// Pairwise sum over i<j divided by N(N−1).
    Literal,
    /// Mean over unordered pairs (twice the literal value).
    UnorderedDiversity,
}

impl From<VariantArg> for DiversityVariant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Literal => DiversityVariant::Literal,
            VariantArg::UnorderedDiversity => DiversityVariant::UnorderedMean,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub explanations: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub provider: ProviderArgs,
    #[arg(long, value_enum, default_value_t = VariantArg::Literal)]
    pub variant: VariantArg,
    #[arg(long, value_delimiter = ',', default_values_t = default_thresholds())]
    pub thresholds: Vec<f64>,
    /// Method label in figure CSVs.
    #[arg(long, default_value = "concept")]
    pub method: String,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ProbeArgs {
    /// JSON with optional `pairs`, `triplets` and `add_remove` entries.
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Needed for add/remove probes (image embeddings and tags).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Synthetic dimension when no manifest is given.
    #[arg(long, default_value_t = 32)]
    pub dimension: usize,
    #[command(flatten)]
    pub provider: ProviderArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct BaselineArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// One concept per line; defaults to the manifest's concept library.
    #[arg(long)]
    pub library: Option<PathBuf>,
    #[command(flatten)]
    pub provider: ProviderArgs,
    #[arg(long, default_value_t = 1e-2)]
    pub lr: f64,
    #[arg(long, default_value_t = 100)]
    pub max_iterations: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lambda_identity: f64,
    #[arg(long, default_value_t = 0.1)]
    pub lambda_l1: f64,
    #[arg(long, default_value_t = 0.1)]
    pub lambda_l2: f64,
    #[arg(long, default_value_t = 0.1)]
    pub weight_threshold: f64,
    /// Count `|w| > threshold` instead of `w > threshold`.
    #[arg(long)]
    pub absolute_sparsity: bool,
    /// Initialization seed.
    #[arg(long, default_value_t = 0)]
    pub init_seed: u64,
    /// Concepts reported per image.
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, value_enum, default_value_t = VariantArg::Literal)]
    pub variant: VariantArg,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct RobustnessArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Explanations file whose valid counterfactuals form the `concept` curve.
    #[arg(long)]
    pub explanations: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![10usize, 200])]
    pub num_vectors: Vec<usize>,
    /// Raw Gaussian scale instead of unit-norm noise.
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = default_thresholds())]
    pub thresholds: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct RerunArgs {
    #[arg(long)]
    pub config: PathBuf,
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code: 0 success, 1 validation error, 2 runtime
/// error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

pub fn execute(command: &Command) -> Result<()> {
    match command {
        Command::SynthWorld(a) => synth_world(a),
        Command::Train(a) => cmd_train(a),
        Command::Explain(a) => cmd_explain(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Probe(a) => cmd_probe(a),
        Command::Baseline(a) => cmd_baseline(a),
        Command::Robustness(a) => cmd_robustness(a),
        Command::Rerun(a) => {
            let text = fs::read_to_string(&a.config).map_err(|e| Error::io(&a.config, e))?;
            let echo: RunConfig = serde_json::from_str(&text)?;
            if matches!(echo.run, Command::Rerun(_)) {
                return Err(Error::Config(
                    "a run config cannot replay another rerun".into(),
                ));
            }
            execute(&echo.run)
        }
    }
}

/// Effective parameters of a run, written as `run_config.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub version: String,
    pub run: Command,
}

struct OutDir(PathBuf);

impl OutDir {
    fn create(path: &Path, command: &Command) -> Result<Self> {
        fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
        let out = Self(path.to_owned());
        let echo = RunConfig {
            version: env!("CARGO_PKG_VERSION").to_owned(),
            run: command.clone(),
        };
        out.json("run_config.json", &echo)?;
        Ok(out)
    }

    fn write(&self, name: &str, contents: &str) -> Result<()> {
        let path = self.0.join(name);
        fs::write(&path, contents).map_err(|e| Error::io(path, e))
    }

    fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, &text)
    }

    fn jsonl<T: Serialize>(&self, name: &str, items: &[T]) -> Result<()> {
        let mut text = String::new();
        for item in items {
            text.push_str(&serde_json::to_string(item)?);
            text.push('\n');
        }
        self.write(name, &text)
    }
}

fn load_manifest(path: &Path) -> Result<Arc<DatasetManifest>> {
    Ok(Arc::new(DatasetManifest::load(path)?))
}

fn load_weights(path: &Path, manifest: &DatasetManifest) -> Result<ClassifierWeights> {
    let weights = WeightsFile::load(path)?.classifier()?;
    if weights.dimension() != manifest.dimension {
        return Err(Error::DimensionMismatch {
            expected: manifest.dimension,
            found: weights.dimension(),
        });
    }
    Ok(weights)
}

fn read_explanations(path: &Path) -> Result<Vec<ExplanationSet>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Maps `f` over `items` with `workers` threads, keeping input order.
fn par_map<T: Sync, U: Send>(
    workers: usize,
    items: &[T],
    f: impl Fn(&T) -> Result<U> + Sync + Send,
) -> Result<Vec<U>> {
    if workers <= 1 {
        return items.iter().map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| items.par_iter().map(f).collect())
}

fn synth_world(a: &SynthWorldArgs) -> Result<()> {
    let manifest = generate_world(&WorldConfig {
        name: "synthetic-world".into(),
        dimension: a.dimension,
        images: a.images,
        vocabulary: a.vocabulary,
        min_tags: a.min_tags,
        max_tags: a.max_tags,
        sensitive_tag: a.sensitive_tag.clone(),
        private_fraction: a.private_fraction,
        seed: a.seed,
        residual: a.residual,
    })?;
    let out = OutDir::create(&a.out_dir, &Command::SynthWorld(a.clone()))?;
    manifest.save(out.0.join("manifest.jsonl"))
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let manifest = load_manifest(&a.manifest)?;
    let config = TrainConfig {
        epochs: a.epochs,
        learning_rate: a.lr,
        batch_size: a.batch_size,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let (weights, log) = train(&manifest, &config)?;
    let out = OutDir::create(&a.out_dir, &Command::Train(a.clone()))?;
    WeightsFile {
        dimension: manifest.dimension,
        weights: weights.weights,
        bias: weights.bias,
        train_config: config,
        train_accuracy: log.train_accuracy,
    }
    .save(out.0.join("weights.json"))?;
    let mut csv = String::from("epoch,loss,accuracy\n");
    for e in &log.epochs {
        let _ = writeln!(csv, "{},{},{}", e.epoch, e.loss, e.accuracy);
    }
    out.write("training_log.csv", &csv)
}

/// Cohort counts written next to the explanations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainSummary {
    pub images: usize,
    pub private_cohort: usize,
    pub explained: usize,
    pub no_flip: usize,
    pub no_scenarios: usize,
    pub skipped: usize,
    pub truncated: usize,
    pub validity: MetricValue,
}

impl ExplainSummary {
    pub fn of(sets: &[ExplanationSet]) -> Self {
        let count = |s: ExplanationStatus| sets.iter().filter(|x| x.status == s).count();
        let explained = count(ExplanationStatus::Explained);
        let private_cohort = sets.iter().filter(|s| s.in_private_cohort()).count();
        Self {
            images: sets.len(),
            private_cohort,
            explained,
            no_flip: count(ExplanationStatus::NoFlip),
            no_scenarios: count(ExplanationStatus::NoScenarios),
            skipped: count(ExplanationStatus::Skipped),
            truncated: sets.iter().filter(|s| s.scenarios_truncated).count(),
            validity: if private_cohort == 0 {
                MetricValue::Undefined("no correctly classified private images".into())
            } else {
                MetricValue::Value(explained as f64 / private_cohort as f64)
            },
        }
    }
}

fn cmd_explain(a: &ExplainArgs) -> Result<()> {
    let manifest = load_manifest(&a.manifest)?;
    let weights = load_weights(&a.weights, &manifest)?;
    let provider = a.provider.build(Some(manifest.clone()), None)?;
    let config = ExplainConfig {
        scenarios: ScenarioConfig {
            max_length: a.s,
            max_scenarios: a.max_scenarios,
        },
        selection: SelectionConfig {
            objectives: a.objectives.clone(),
            q: a.q,
            ..SelectionConfig::default()
        },
        direction_mode: match a.direction {
            DirectionArg::Joined => DirectionMode::JoinedPrompt,
            DirectionArg::PerTag => DirectionMode::PerTagSum,
        },
    };
    let sets = explain_manifest(
        &manifest,
        &weights,
        provider.as_ref(),
        provider.as_ref(),
        &config,
        a.workers,
    )?;
    let out = OutDir::create(&a.out_dir, &Command::Explain(a.clone()))?;
    out.jsonl("explanations.jsonl", &sets)?;
    out.json("explain_summary.json", &ExplainSummary::of(&sets))
}

#[derive(Serialize)]
struct ExplanationTexts<'a> {
    image_id: &'a str,
    texts: Vec<String>,
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let manifest = load_manifest(&a.manifest)?;
    let sets = read_explanations(&a.explanations)?;
    let cohort = EvaluationCohort::from_explanations(&manifest, &sets)?;
    let provider = a.provider.build(Some(manifest.clone()), None)?;
    let thresholds = RobustnessConfig {
        thresholds: a.thresholds.clone(),
        ..RobustnessConfig::default()
    };
    thresholds.validate()?;
    let report = compute_report(
        &cohort,
        provider.as_ref(),
        provider.as_ref(),
        a.variant.into(),
    )?;

    let out = OutDir::create(&a.out_dir, &Command::Evaluate(a.clone()))?;
    out.json("metric_report.json", &report)?;
    out.write("per_image.csv", &report.per_image_csv())?;
    out.write(
        "figure_radar.csv",
        &format!("metric,method,value\n{}", report.radar_rows(&a.method)),
    )?;
    let flips: Vec<(bool, f64)> = explanation_flips(&sets)
        .iter()
        .map(|f| f.summary())
        .collect();
    let curve = validity_at_thresholds(&flips, &a.thresholds);
    out.write(
        "threshold_curve.csv",
        &format!("{CURVE_HEADER}{}", curve_rows(&a.method, &curve)),
    )?;
    let texts: Vec<ExplanationTexts> = cohort
        .explained()
        .map(|img| ExplanationTexts {
            image_id: &img.image_id,
            texts: img.best.iter().map(|b| b.text()).collect(),
        })
        .collect();
    out.jsonl("explanation_texts.jsonl", &texts)
}

/// Probe request file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSpec {
    #[serde(default)]
    pub pairs: Vec<Vec<String>>,
    #[serde(default)]
    pub triplets: Vec<Vec<String>>,
    #[serde(default)]
    pub add_remove: Vec<AddRemoveSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AddRemoveSpec {
    pub image_id: String,
    #[serde(default)]
    pub add: Vec<String>,
    #[serde(default)]
    pub remove: Vec<String>,
    #[serde(default)]
    pub reference: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pairs: Option<LinearityReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub triplets: Option<LinearityReport>,
    pub add_remove: Vec<AddRemoveReport>,
}

fn cmd_probe(a: &ProbeArgs) -> Result<()> {
    let text = fs::read_to_string(&a.spec).map_err(|e| Error::io(&a.spec, e))?;
    let spec: ProbeSpec = serde_json::from_str(&text)?;
    if spec.pairs.is_empty() && spec.triplets.is_empty() && spec.add_remove.is_empty() {
        return Err(Error::Invalid(
            "probe spec has no pairs, triplets or add_remove entries".into(),
        ));
    }
    for (name, groups, len) in [("pairs", &spec.pairs, 2), ("triplets", &spec.triplets, 3)] {
        if groups.iter().any(|g| g.len() != len) {
            return Err(Error::Invalid(format!(
                "every entry of {name} needs {len} phrases"
            )));
        }
    }
    let manifest = a.manifest.as_deref().map(load_manifest).transpose()?;
    let provider = a.provider.build(manifest, Some(a.dimension))?;
    let linearity = |groups: &[Vec<String>]| -> Result<Option<LinearityReport>> {
        if groups.is_empty() {
            Ok(None)
        } else {
            linearity_probe(provider.as_ref(), groups).map(Some)
        }
    };
    let report = ProbeReport {
        pairs: linearity(&spec.pairs)?,
        triplets: linearity(&spec.triplets)?,
        add_remove: spec
            .add_remove
            .iter()
            .map(|s| {
                add_remove_probe(
                    provider.as_ref(),
                    &s.image_id,
                    &s.add,
                    &s.remove,
                    &s.reference,
                )
            })
            .collect::<Result<_>>()?,
    };
    let out = OutDir::create(&a.out_dir, &Command::Probe(a.clone()))?;
    out.json("probe_report.json", &report)
}

fn read_library(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_owned)
        .collect())
}

/// One line of `countex_solutions.jsonl`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolutionRecord {
    pub image_id: String,
    pub flipped: bool,
    pub iterations_used: usize,
    pub confidence: f64,
    pub sparsity: usize,
    pub top_concepts: Vec<(String, f64)>,
    pub top_degenerate: bool,
    pub final_losses: LossBreakdown,
    pub weights: Vec<f64>,
}

fn cmd_baseline(a: &BaselineArgs) -> Result<()> {
    let manifest = load_manifest(&a.manifest)?;
    let weights = load_weights(&a.weights, &manifest)?;
    let concepts = match &a.library {
        Some(p) => read_library(p)?,
        None => manifest.concept_library.clone().ok_or_else(|| {
            Error::Config("no --library given and the manifest has no concept library".into())
        })?,
    };
    if concepts.is_empty() {
        return Err(Error::Invalid("concept library is empty".into()));
    }
    let provider = a.provider.build(Some(manifest.clone()), None)?;
    let library = ConceptLibrary::build(provider.as_ref(), &concepts)?;
    let base = CountexConfig {
        learning_rate: a.lr,
        max_iterations: a.max_iterations,
        lambda_identity: a.lambda_identity,
        lambda_l1: a.lambda_l1,
        lambda_l2: a.lambda_l2,
        weight_threshold: a.weight_threshold,
        seed: a.init_seed,
        sparsity_mode: if a.absolute_sparsity {
            SparsityMode::Absolute
        } else {
            SparsityMode::Signed
        },
        ..CountexConfig::default()
    };
    base.validate()?;

    let mut cohort: Vec<&ImageRecord> = Vec::new();
    for r in &manifest.records {
        if r.label == PrivacyLabel::Private
            && weights.predict(&r.embedding)?.label == PrivacyLabel::Private
        {
            cohort.push(r);
        }
    }
    cohort.sort_by(|x, y| x.id.cmp(&y.id));

    let results = par_map(a.workers, &cohort, |r| {
        let config = CountexConfig {
            seed: image_seed(base.seed, &r.id),
            ..base.clone()
        };
        let sol = optimize(&r.embedding, &weights, &library, &config)?;
        let top = top_k_concepts(&sol, &library, a.k, config.ranking);
        let record = SolutionRecord {
            image_id: r.id.clone(),
            flipped: sol.flipped,
            iterations_used: sol.iterations_used,
            confidence: sol.confidence,
            sparsity: countex_sparsity(&sol, &config),
            top_concepts: top.concepts,
            top_degenerate: top.degenerate,
            final_losses: sol.final_losses,
            weights: sol.weights.clone(),
        };
        let image = CohortImage {
            image_id: r.id.clone(),
            embedding: r.embedding.clone(),
            best: as_scored_explanation(&sol, &library, &config, a.k)
                .into_iter()
                .collect(),
        };
        Ok((record, image))
    })?;
    let (records, images): (Vec<SolutionRecord>, Vec<CohortImage>) = results.into_iter().unzip();
    let report: MetricReport = compute_report(
        &EvaluationCohort::new(images),
        provider.as_ref(),
        provider.as_ref(),
        a.variant.into(),
    )?;

    let out = OutDir::create(&a.out_dir, &Command::Baseline(a.clone()))?;
    out.jsonl("countex_solutions.jsonl", &records)?;
    out.json("baseline_metric_report.json", &report)?;
    out.write(
        "figure_radar.csv",
        &format!("metric,method,value\n{}", report.radar_rows("countex")),
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobustnessSummary {
    pub method: String,
    pub images: usize,
    pub flipped_images: usize,
    pub flips: usize,
    pub mean_flip_confidence: MetricValue,
}

fn cmd_robustness(a: &RobustnessArgs) -> Result<()> {
    let manifest = load_manifest(&a.manifest)?;
    let weights = load_weights(&a.weights, &manifest)?;
    let noise = match a.sigma {
        Some(sigma) => Noise::GaussianSigma { sigma },
        None => Noise::GaussianUnitNorm,
    };
    RobustnessConfig {
        num_vectors: 1,
        noise,
        thresholds: a.thresholds.clone(),
        seed: a.seed,
    }
    .validate()?;
    if a.num_vectors.is_empty() {
        return Err(Error::Config(
            "--num-vectors needs at least one value".into(),
        ));
    }

    let mut runs = Vec::new();
    if let Some(path) = &a.explanations {
        runs.push((
            "concept".to_owned(),
            explanation_flips(&read_explanations(path)?),
        ));
    }
    for &n in &a.num_vectors {
        runs.push((
            format!("rand_{n}"),
            random_flips(&manifest, &weights, n, noise, a.seed)?,
        ));
    }

    let mut csv = String::from(CURVE_HEADER);
    let mut summaries = Vec::new();
    for (method, flips) in &runs {
        let pairs: Vec<(bool, f64)> = flips.iter().map(|f| f.summary()).collect();
        csv.push_str(&curve_rows(
            method,
            &validity_at_thresholds(&pairs, &a.thresholds),
        ));
        summaries.push(RobustnessSummary {
            method: method.clone(),
            images: flips.len(),
            flipped_images: flips.iter().filter(|f| f.flipped()).count(),
            flips: flips.iter().map(|f| f.flip_confidences.len()).sum(),
            mean_flip_confidence: mean_flip_confidence(flips),
        });
    }
    let out = OutDir::create(&a.out_dir, &Command::Robustness(a.clone()))?;
    out.write("robustness_curve.csv", &csv)?;
    out.json("robustness_summary.json", &summaries)
}
