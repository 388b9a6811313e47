//! Config-driven experiments behind the command-line tool.
//!
//! An [`ExperimentConfig`] is read from TOML, patched by `key=value`
//! overrides and echoed in resolved form next to every output. Run `i` of a
//! multi-run command uses seed `seed + i` for both the train/test split and
//! the trainer, so runs differ in split and initialisation but not in data.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::dataset::{assemble, label_counts, normalize_features, split_dataset, AssembleOptions, Dataset};
use crate::data::io::{CorpusPaths, RawCorpus};
use crate::data::schema::Label;
use crate::data::synthetic::{gen_synthetic, word2vec_text, SyntheticConfig, EMBEDDINGS_FILE};
use crate::error::{Error, Result};
use crate::explain::{token_weights, word_weight_distribution, Explanation, RECEIVED_ATTENTION_DEFINITION};
use crate::metrics::{aggregate_runs, MetricsReport, RunAggregate, CONFIDENCE_LEVELS};
use crate::model::{ModelConfig, Variant};
use crate::report::{
    ablation_csv, aggregate_csv, curve_csv, edge_attention_csv, explanations_jsonl, metrics_json, to_json_line,
    to_json_pretty, top_users_csv, write_file, ABLATION_FILE, AGGREGATE_FILE, CURVE_FILE, EDGE_FILE, EXPLANATIONS_FILE,
    METRICS_FILE, SCHEMA_VERSION, TOP_USERS_FILE, WORD_WEIGHTS_FILE,
};
use crate::rng::SeedStream;
use crate::selfcheck::run_selfcheck;
use crate::train::{early_detection_schedule, evaluate, train, CurvePoint, TrainedModel, TruncationMode};

pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.toml";
pub const OUTPUT_DIR_ENV: &str = "MVAN_OUTPUT_DIR";

/// Corpus file locations. `dir` supplies the three default file names; any
/// explicit path wins.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub dir: Option<PathBuf>,
    pub tweets: Option<PathBuf>,
    pub retweets: Option<PathBuf>,
    pub users: Option<PathBuf>,
}

impl DataConfig {
    pub fn paths(&self) -> Result<CorpusPaths> {
        let base = self.dir.as_deref().map(CorpusPaths::in_dir);
        let pick = |explicit: &Option<PathBuf>, from_dir: Option<&PathBuf>, name: &str| {
            explicit
                .clone()
                .or_else(|| from_dir.cloned())
                .ok_or_else(|| Error::Config(format!("data.{name} (or data.dir) is required")))
        };
        Ok(CorpusPaths {
            tweets: pick(&self.tweets, base.as_ref().map(|b| &b.tweets), "tweets")?,
            retweets: pick(&self.retweets, base.as_ref().map(|b| &b.retweets), "retweets")?,
            users: pick(&self.users, base.as_ref().map(|b| &b.users), "users")?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EarlyDetectionConfig {
    pub fractions: Vec<f64>,
    pub mode: TruncationMode,
}

impl Default for EarlyDetectionConfig {
    fn default() -> Self {
        EarlyDetectionConfig {
            fractions: vec![0.1, 0.2, 0.4, 0.6, 0.8, 1.0],
            mode: TruncationMode::TestOnly,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainConfig {
    /// Users listed per tweet in the top-user report.
    pub top_k: usize,
    /// Minimum occurrences for a token to enter the ranked word lists.
    pub min_token_count: usize,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig {
            top_k: 3,
            min_token_count: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub variants: Vec<Variant>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            variants: Variant::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub n_runs: usize,
    pub output_dir: PathBuf,
    pub train_ratio: f64,
    pub data: Option<DataConfig>,
    pub synthetic: Option<SyntheticConfig>,
    pub model: ModelConfig,
    pub early_detection: EarlyDetectionConfig,
    pub explain: ExplainConfig,
    pub ablation: AblationConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            n_runs: 10,
            output_dir: PathBuf::from("runs"),
            train_ratio: 0.7,
            data: None,
            synthetic: None,
            model: ModelConfig::default(),
            early_detection: EarlyDetectionConfig::default(),
            explain: ExplainConfig::default(),
            ablation: AblationConfig::default(),
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Applies `a.b.c=value` to a TOML table. The value is parsed as a TOML
/// literal when possible and taken as a bare string otherwise.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key `{key}`")));
    }
    let (last, path) = parts.split_last().expect("non-empty key");
    let mut cur = table;
    for p in path {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{p}` is not a section")))?;
    }
    cur.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

impl ExperimentConfig {
    /// Builds a config from optional TOML text, then the output-directory
    /// environment variable, then `overrides` in order.
    pub fn resolve(text: Option<&str>, overrides: &[String], env_output_dir: Option<&str>) -> Result<Self> {
        let mut table: toml::Table = match text {
            Some(t) => toml::from_str(t).map_err(|e| Error::Config(format!("config: {e}")))?,
            None => toml::Table::new(),
        };
        if let Some(dir) = env_output_dir {
            table.insert("output_dir".into(), toml::Value::String(dir.to_string()));
        }
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let config: ExperimentConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let env = std::env::var(OUTPUT_DIR_ENV).ok();
        Self::resolve(Some(&text), overrides, env.as_deref())
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.is_some() && self.synthetic.is_some() {
            return Err(Error::Config("set either [data] or [synthetic], not both".into()));
        }
        if self.n_runs == 0 {
            return Err(Error::Config("n_runs must be at least 1".into()));
        }
        if !(self.train_ratio > 0.0 && self.train_ratio < 1.0) {
            return Err(Error::Config("train_ratio must lie in (0, 1)".into()));
        }
        if let Some(s) = &self.synthetic {
            s.validate()?;
            if s.embedding_dim > 0 && s.embedding_dim != self.model.text.embedding_dim {
                return Err(Error::Config(format!(
                    "synthetic.embedding_dim {} differs from model.text.embedding_dim {}",
                    s.embedding_dim, self.model.text.embedding_dim
                )));
            }
        }
        if self.ablation.variants.is_empty() {
            return Err(Error::Config("ablation.variants is empty".into()));
        }
        crate::train::normalize_fractions(&self.early_detection.fractions)
            .map_err(|e| Error::Config(format!("early_detection.fractions: {e}")))?;
        self.model.validate()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialise config: {e}")))
    }

    pub fn run_seed(&self, run: usize) -> u64 {
        self.seed.wrapping_add(run as u64)
    }

    fn assemble_options(&self) -> AssembleOptions {
        AssembleOptions {
            builder: self.model.builder,
            retweet_cap: self.model.retweet_cap,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Prepare,
    Train,
    Evaluate,
    Ablate,
    EarlyDetect,
    Explain,
    GenSynthetic,
    Selfcheck,
}

impl Command {
    pub const ALL: [Command; 8] = [
        Command::Prepare,
        Command::Train,
        Command::Evaluate,
        Command::Ablate,
        Command::EarlyDetect,
        Command::Explain,
        Command::GenSynthetic,
        Command::Selfcheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Prepare => "prepare",
            Command::Train => "train",
            Command::Evaluate => "evaluate",
            Command::Ablate => "ablate",
            Command::EarlyDetect => "early-detect",
            Command::Explain => "explain",
            Command::GenSynthetic => "gen-synthetic",
            Command::Selfcheck => "selfcheck",
        }
    }

    /// Subdirectory of the output directory that holds this command's files.
    pub fn dir_name(self) -> &'static str {
        match self {
            Command::GenSynthetic => "data",
            Command::EarlyDetect => "early_detect",
            other => other.name(),
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown command `{s}`")))
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunOptions {
    /// Evaluate or explain this saved model instead of training one.
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub output_dir: PathBuf,
    pub files: Vec<PathBuf>,
    /// Human-readable result, printed by the command-line tool.
    pub summary: String,
    /// False when a check failed; the tool then exits with status 1.
    pub success: bool,
}

struct Writer {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Writer {
    fn new(dir: PathBuf) -> Result<Self> {
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Writer { dir, files: Vec::new() })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf> {
        let path = self.dir.join(name);
        write_file(&path, contents)?;
        self.files.push(path.clone());
        Ok(path)
    }

    fn finish(self, summary: String, success: bool) -> Outcome {
        Outcome {
            output_dir: self.dir,
            files: self.files,
            summary,
            success,
        }
    }
}

/// Loaded corpus plus, for generated corpora, their stand-in embeddings.
struct Source {
    raw: RawCorpus,
    embeddings: Vec<(String, Vec<f64>)>,
}

fn load_source(cfg: &ExperimentConfig) -> Result<Source> {
    match (&cfg.data, &cfg.synthetic) {
        (Some(d), None) => Ok(Source {
            raw: RawCorpus::read(&d.paths()?)?,
            embeddings: Vec::new(),
        }),
        (None, Some(s)) => {
            let c = gen_synthetic(s, cfg.seed)?;
            Ok(Source {
                raw: c.raw,
                embeddings: c.embeddings,
            })
        }
        _ => Err(Error::Config("a [data] or [synthetic] section is required".into())),
    }
}

/// The model config actually used: generated embeddings are written next to
/// the outputs and wired in unless a file was configured.
fn effective_model(cfg: &ExperimentConfig, source: &Source, w: &mut Writer) -> Result<ModelConfig> {
    let mut model = cfg.model.clone();
    if !source.embeddings.is_empty() && model.embeddings_path.is_none() && model.variant.uses_text() {
        model.embeddings_path = Some(w.write(EMBEDDINGS_FILE, &word2vec_text(&source.embeddings))?);
    }
    Ok(model)
}

fn split_for_run(cfg: &ExperimentConfig, dataset: &Dataset, run: usize) -> Result<(Dataset, Dataset)> {
    let stream = SeedStream::new(cfg.run_seed(run)).substream("split");
    let (train, test) = split_dataset(dataset, cfg.train_ratio, &stream)?;
    normalize_features(&train, &test)
}

fn with_seed(model: &ModelConfig, seed: u64) -> ModelConfig {
    let mut m = model.clone();
    m.trainer.seed = seed;
    m
}

fn table5_rows(agg: &RunAggregate) -> String {
    let mut out = format!("{:<10} {:>16} {:>16} {:>16}\n", "metric", "90%", "95%", "98%");
    for (name, s) in agg.summaries() {
        let cells: Vec<String> = CONFIDENCE_LEVELS
            .iter()
            .map(|&c| s.row(c).unwrap_or_default())
            .collect();
        out.push_str(&format!(
            "{name:<10} {:>16} {:>16} {:>16}\n",
            cells[0], cells[1], cells[2]
        ));
    }
    out
}

fn runs_csv(rows: &[(String, usize, u64, MetricsReport)]) -> String {
    let mut out = String::from("variant,run,seed,accuracy,precision,recall,f1,tp,tn,fp,fn\n");
    for (variant, run, seed, m) in rows {
        let c = m.confusion;
        out.push_str(&format!(
            "{variant},{run},{seed},{:.6},{:.6},{:.6},{:.6},{},{},{},{}\n",
            m.accuracy, m.precision, m.recall, m.f1, c.tp, c.tn, c.fp, c.fn_
        ));
    }
    out
}

/// Executes one command and writes its artifacts under
/// `output_dir/<command>/`.
pub fn run(command: Command, cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Outcome> {
    cfg.validate()?;
    let mut w = Writer::new(cfg.output_dir.join(command.dir_name()))?;
    w.write(RESOLVED_CONFIG_FILE, &cfg.to_toml()?)?;
    match command {
        Command::Selfcheck => selfcheck(cfg, w),
        Command::GenSynthetic => gen_synthetic_cmd(cfg, w),
        Command::Prepare => prepare(cfg, w),
        Command::Train => train_cmd(cfg, w),
        Command::Evaluate => evaluate_cmd(cfg, opts, w),
        Command::Ablate => ablate(cfg, w),
        Command::EarlyDetect => early_detect(cfg, w),
        Command::Explain => explain_cmd(cfg, opts, w),
    }
}

fn selfcheck(cfg: &ExperimentConfig, mut w: Writer) -> Result<Outcome> {
    let results = run_selfcheck(cfg.seed);
    let mut text = String::new();
    for c in &results {
        text.push_str(&format!(
            "[{}] {}: {}\n",
            if c.passed { "pass" } else { "FAIL" },
            c.name,
            c.detail
        ));
    }
    w.write("selfcheck.txt", &text)?;
    let ok = results.iter().all(|c| c.passed);
    Ok(w.finish(text, ok))
}

fn gen_synthetic_cmd(cfg: &ExperimentConfig, mut w: Writer) -> Result<Outcome> {
    let s = cfg
        .synthetic
        .as_ref()
        .ok_or_else(|| Error::Config("gen-synthetic needs a [synthetic] section".into()))?;
    let corpus = gen_synthetic(s, cfg.seed)?;
    corpus.write(&w.dir)?;
    let paths = CorpusPaths::in_dir(&w.dir);
    w.files.extend([
        paths.tweets,
        paths.retweets,
        paths.users,
        w.dir.join("ground_truth.jsonl"),
    ]);
    if !corpus.embeddings.is_empty() {
        w.files.push(w.dir.join(EMBEDDINGS_FILE));
    }
    let summary = format!(
        "wrote {} tweets, {} retweets, {} user profiles to {}",
        corpus.raw.tweets.len(),
        corpus.raw.retweets.len(),
        corpus.raw.users.len(),
        w.dir.display()
    );
    Ok(w.finish(summary, true))
}

#[derive(Serialize)]
struct CachedNode<'a> {
    user_id: &'a str,
    order: u64,
    features: Vec<Option<f64>>,
}

#[derive(Serialize)]
struct CachedExample<'a> {
    tweet_id: &'a str,
    label: Label,
    split: &'static str,
    tokens: &'a [String],
    nodes: Vec<CachedNode<'a>>,
    neighbors: Vec<&'a [usize]>,
}

fn prepare(cfg: &ExperimentConfig, mut w: Writer) -> Result<Outcome> {
    let source = load_source(cfg)?;
    let dataset = assemble(&source.raw, &cfg.assemble_options())?;
    let (train, test) = split_for_run(cfg, &dataset, 0)?;
    let mut cache = String::new();
    for (split, ds) in [("train", &train), ("test", &test)] {
        for ex in &ds.examples {
            let g = &ex.graph;
            let item = CachedExample {
                tweet_id: &ex.tweet.id,
                label: ex.tweet.label,
                split,
                tokens: &ex.tokens,
                nodes: g
                    .nodes()
                    .iter()
                    .map(|n| CachedNode {
                        user_id: &n.user_id,
                        order: n.order,
                        features: n.features.values.to_vec(),
                    })
                    .collect(),
                neighbors: (0..g.num_nodes()).map(|i| g.neighbors(i)).collect(),
            };
            cache.push_str(&to_json_line(&item)?);
            cache.push('\n');
        }
    }
    w.write("examples.jsonl", &cache)?;
    let summary = serde_json::json!({
        "schema_version": SCHEMA_VERSION,
        "n_examples": dataset.len(),
        "n_train": train.len(),
        "n_test": test.len(),
        "labels_train": label_counts(&train),
        "labels_test": label_counts(&test),
        "builder": cfg.model.builder,
        "norm_stats": train.norm_stats,
    });
    w.write("summary.json", &to_json_pretty(&summary)?)?;
    let text = format!(
        "{} examples ({} train / {} test) cached in {}",
        dataset.len(),
        train.len(),
        test.len(),
        w.dir.display()
    );
    Ok(w.finish(text, true))
}

fn train_cmd(cfg: &ExperimentConfig, mut w: Writer) -> Result<Outcome> {
    let source = load_source(cfg)?;
    let model_cfg = effective_model(cfg, &source, &mut w)?;
    let dataset = assemble(&source.raw, &cfg.assemble_options())?;
    let (train_set, test_set) = split_for_run(cfg, &dataset, 0)?;
    let trained = train(&train_set, &with_seed(&model_cfg, cfg.run_seed(0)))?;
    trained.save(&w.dir)?;
    w.files.extend([
        w.dir.join(crate::train::PARAMS_FILE),
        w.dir.join(crate::train::META_FILE),
        w.dir.join(crate::train::HISTORY_FILE),
    ]);
    let m = evaluate(&trained.model, &test_set)?.metrics;
    w.write(METRICS_FILE, &metrics_json(&m)?)?;
    let summary = format!(
        "trained {} for {} epochs; test accuracy {:.4}; checkpoint in {}",
        model_cfg.variant,
        trained.history.len(),
        m.accuracy,
        w.dir.display()
    );
    Ok(w.finish(summary, true))
}

/// Trains and evaluates `n_runs` models of one variant.
fn multi_run(cfg: &ExperimentConfig, dataset: &Dataset, model: &ModelConfig) -> Result<Vec<MetricsReport>> {
    (0..cfg.n_runs)
        .map(|run| {
            let (train_set, test_set) = split_for_run(cfg, dataset, run)?;
            let trained = train(&train_set, &with_seed(model, cfg.run_seed(run)))?;
            let m = evaluate(&trained.model, &test_set)?.metrics;
            log::info!("{} run {run}: accuracy {:.4}", model.variant, m.accuracy);
            Ok(m)
        })
        .collect()
}

fn evaluate_cmd(cfg: &ExperimentConfig, opts: &RunOptions, mut w: Writer) -> Result<Outcome> {
    let source = load_source(cfg)?;
    let dataset = assemble(&source.raw, &cfg.assemble_options())?;
    let (variant, reports) = match &opts.checkpoint {
        Some(dir) => {
            let trained = TrainedModel::load(dir)?;
            let (_, test_set) = split_for_run(cfg, &dataset, 0)?;
            let m = evaluate(&trained.model, &test_set)?.metrics;
            (trained.model.config.variant, vec![m])
        }
        None => {
            let model = effective_model(cfg, &source, &mut w)?;
            (model.variant, multi_run(cfg, &dataset, &model)?)
        }
    };
    let rows: Vec<_> = reports
        .iter()
        .enumerate()
        .map(|(i, m)| (variant.to_string(), i, cfg.run_seed(i), *m))
        .collect();
    w.write("runs.csv", &runs_csv(&rows))?;
    for (i, m) in reports.iter().enumerate() {
        w.write(&format!("metrics_run{i:02}.json"), &metrics_json(m)?)?;
    }
    let summary = if reports.len() > 1 {
        let agg = aggregate_runs(&reports, &CONFIDENCE_LEVELS)?;
        w.write(AGGREGATE_FILE, &aggregate_csv(&agg))?;
        let table = format!(
            "{variant} over {} runs (mean ± t half-width)\n{}",
            reports.len(),
            table5_rows(&agg)
        );
        w.write("summary.txt", &table)?;
        table
    } else {
        let m = reports[0];
        format!(
            "{variant}: accuracy {:.4} precision {:.4} recall {:.4} f1 {:.4} (n = {})",
            m.accuracy, m.precision, m.recall, m.f1, m.n_examples
        )
    };
    Ok(w.finish(summary, true))
}

fn ablate(cfg: &ExperimentConfig, mut w: Writer) -> Result<Outcome> {
    let source = load_source(cfg)?;
    let dataset = assemble(&source.raw, &cfg.assemble_options())?;
    let mut rows = Vec::new();
    let mut run_rows = Vec::new();
    let base = effective_model(cfg, &source, &mut w)?;
    let mut text = format!("{:<10} {:>16} {:>16}\n", "variant", "accuracy", "f1");
    for &v in &cfg.ablation.variants {
        let model = base.with_variant(v);
        let reports = multi_run(cfg, &dataset, &model)?;
        for (i, m) in reports.iter().enumerate() {
            run_rows.push((v.to_string(), i, cfg.run_seed(i), *m));
        }
        let agg = if reports.len() > 1 {
            Some(aggregate_runs(&reports, &CONFIDENCE_LEVELS)?)
        } else {
            None
        };
        let cell = |i: usize| match &agg {
            Some(a) => a.summaries()[i].1.row(0.95).unwrap_or_default(),
            None => format!("{:.4}", reports[0].values()[i]),
        };
        text.push_str(&format!("{:<10} {:>16} {:>16}\n", v.display_name(), cell(0), cell(3)));
        rows.push((v.to_string(), reports, agg));
    }
    w.write(ABLATION_FILE, &ablation_csv(&rows))?;
    w.write("runs.csv", &runs_csv(&run_rows))?;
    w.write("summary.txt", &text)?;
    Ok(w.finish(text, true))
}

fn early_detect(cfg: &ExperimentConfig, mut w: Writer) -> Result<Outcome> {
    let source = load_source(cfg)?;
    let model = effective_model(cfg, &source, &mut w)?;
    let dataset = assemble(&source.raw, &cfg.assemble_options())?;
    let mut per_run: Vec<Vec<CurvePoint>> = Vec::with_capacity(cfg.n_runs);
    for run in 0..cfg.n_runs {
        let (train_set, test_set) = split_for_run(cfg, &dataset, run)?;
        per_run.push(early_detection_schedule(
            &with_seed(&model, cfg.run_seed(run)),
            &train_set,
            &test_set,
            &cfg.early_detection.fractions,
            cfg.early_detection.mode,
        )?);
    }
    let mut detail = String::from("run,fraction,accuracy,precision,recall,f1\n");
    for (run, curve) in per_run.iter().enumerate() {
        for p in curve {
            let m = p.metrics;
            detail.push_str(&format!(
                "{run},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                p.fraction, m.accuracy, m.precision, m.recall, m.f1
            ));
        }
    }
    let mean: Vec<CurvePoint> = (0..per_run[0].len())
        .map(|k| {
            let mut p = per_run[0][k].clone();
            p.metrics.accuracy = per_run.iter().map(|c| c[k].metrics.accuracy).sum::<f64>() / per_run.len() as f64;
            p
        })
        .collect();
    w.write(CURVE_FILE, &curve_csv(&mean))?;
    w.write("curve_runs.csv", &detail)?;
    let mut text = format!("mean accuracy over {} run(s)\nfraction  accuracy\n", per_run.len());
    for p in &mean {
        text.push_str(&format!("{:>8.2}  {:.4}\n", p.fraction, p.metrics.accuracy));
    }
    Ok(w.finish(text, true))
}

fn explain_cmd(cfg: &ExperimentConfig, opts: &RunOptions, mut w: Writer) -> Result<Outcome> {
    let source = load_source(cfg)?;
    let dataset = assemble(&source.raw, &cfg.assemble_options())?;
    let (train_set, test_set) = split_for_run(cfg, &dataset, 0)?;
    let trained = match &opts.checkpoint {
        Some(dir) => TrainedModel::load(dir)?,
        None => {
            let model = effective_model(cfg, &source, &mut w)?;
            train(&train_set, &with_seed(&model, cfg.run_seed(0)))?
        }
    };
    let eval = evaluate(&trained.model, &test_set)?;
    let explanations: Vec<Explanation> = eval.predictions.iter().map(|p| p.explanation.clone()).collect();
    w.write(METRICS_FILE, &metrics_json(&eval.metrics)?)?;
    w.write(EXPLANATIONS_FILE, &explanations_jsonl(&explanations)?)?;
    w.write(TOP_USERS_FILE, &top_users_csv(&explanations, cfg.explain.top_k))?;
    w.write(EDGE_FILE, &edge_attention_csv(&eval.predictions))?;
    let classes = [None, Some(Label::Fake), Some(Label::True)];
    let min = cfg.explain.min_token_count;
    let words = serde_json::json!({
        "schema_version": SCHEMA_VERSION,
        "received_attention": RECEIVED_ATTENTION_DEFINITION,
        "distributions": classes.map(|c| word_weight_distribution(&explanations, c)),
        "top_tokens_fake": token_weights(&explanations, Some(Label::Fake), min).into_iter().take(20).collect::<Vec<_>>(),
        "top_tokens_true": token_weights(&explanations, Some(Label::True), min).into_iter().take(20).collect::<Vec<_>>(),
    });
    w.write(WORD_WEIGHTS_FILE, &to_json_pretty(&words)?)?;

    let mut text = format!(
        "{} test tweets explained, accuracy {:.4}\n",
        explanations.len(),
        eval.metrics.accuracy
    );
    for e in explanations.iter().filter(|e| e.label == Label::Fake).take(3) {
        let word = e
            .top_word()
            .map_or("-".to_string(), |w| format!("{} ({:.3})", w.token, w.weight));
        let user = e.top_user.as_ref().map_or("-".to_string(), |u| {
            format!("{} (order {}, score {:.3})", u.user.user_id, u.user.order, u.user.score)
        });
        text.push_str(&format!("{}: top word {word}; top user {user}\n", e.tweet_id));
    }
    Ok(w.finish(text, true))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_parse_types_and_nest() {
        let cfg = ExperimentConfig::resolve(
            Some("seed = 3\n[synthetic]\nn_examples = 40\n"),
            &[
                "model.trainer.epochs=2".into(),
                "model.variant=TSAN".into(),
                "synthetic.text_signal_strength=0.0".into(),
                "model.trainer.patience=0".into(),
            ],
            Some("/tmp/elsewhere"),
        )
        .unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.model.trainer.epochs, 2);
        assert_eq!(cfg.model.variant, Variant::Tsan);
        assert_eq!(cfg.model.trainer.patience, None);
        assert_eq!(cfg.synthetic.as_ref().unwrap().n_examples, 40);
        assert_eq!(cfg.output_dir, PathBuf::from("/tmp/elsewhere"));
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = ExperimentConfig::resolve(Some("[synthetic]\n"), &["model.trainer.patience=0".into()], None).unwrap();
        let again = ExperimentConfig::resolve(Some(&cfg.to_toml().unwrap()), &[], None).unwrap();
        assert_eq!(cfg, again);
        let dflt = ExperimentConfig::resolve(None, &[], None).unwrap();
        assert_eq!(
            ExperimentConfig::resolve(Some(&dflt.to_toml().unwrap()), &[], None).unwrap(),
            dflt
        );
    }

    #[test]
    fn config_errors() {
        let both = ExperimentConfig::resolve(Some("[synthetic]\n[data]\ndir = \"x\"\n"), &[], None);
        assert!(both.unwrap_err().is_config());
        assert!(ExperimentConfig::resolve(Some("bogus = 1"), &[], None)
            .unwrap_err()
            .is_config());
        assert!(ExperimentConfig::resolve(None, &["n_runs".into()], None)
            .unwrap_err()
            .is_config());
        assert!(ExperimentConfig::resolve(None, &["n_runs=0".into()], None)
            .unwrap_err()
            .is_config());
        assert!(DataConfig::default().paths().is_err());
        assert_eq!("early-detect".parse::<Command>().unwrap(), Command::EarlyDetect);
        assert!("fit".parse::<Command>().is_err());
    }
}
