//! Mini-batch training, evaluation, early-detection sweeps and checkpoints.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::data::dataset::{Dataset, NormStats};
use crate::data::embeddings::load_embeddings;
use crate::data::graph::truncate_by_deadline;
use crate::data::text::{build_vocab, Vocabulary};
use crate::error::{Error, Result};
use crate::metrics::{confusion, metrics, MetricsReport};
use crate::model::{DropoutRates, EncodedExample, Model, ModelConfig, PredictionOutput};
use crate::optim::{AdamConfig, AdamState};
use crate::params::ParamStore;
use crate::rng::SeedStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Dropout rate for every site without its own override.
    pub dropout: f64,
    pub embedding_dropout: Option<f64>,
    /// Rate on the BiGRU outputs before word attention.
    pub hidden_dropout: Option<f64>,
    /// Rate on graph-layer input features.
    pub feature_dropout: Option<f64>,
    /// Rate on graph attention coefficients.
    pub attention_dropout: Option<f64>,
    pub epochs: usize,
    /// Early-stopping patience in epochs; `None` (written as 0) trains for
    /// all epochs on the full training split.
    #[serde(with = "zero_is_none")]
    pub patience: Option<usize>,
    /// Epochs trained before early stopping may trigger.
    pub min_epochs: usize,
    pub validation_fraction: f64,
    pub seed: u64,
}

mod zero_is_none {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<usize>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(v.unwrap_or(0) as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<usize>, D::Error> {
        let v = Option::<usize>::deserialize(d)?;
        Ok(v.filter(|&p| p > 0))
    }
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            batch_size: 64,
            learning_rate: 1e-3,
            dropout: 0.5,
            embedding_dropout: None,
            hidden_dropout: None,
            feature_dropout: None,
            attention_dropout: None,
            epochs: 100,
            patience: Some(10),
            min_epochs: 0,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be a non-negative number".into()));
        }
        let r = self.dropout_rates();
        for rate in [self.dropout, r.embedding, r.hidden, r.feature, r.attention] {
            if !(0.0..1.0).contains(&rate) {
                return Err(Error::Config("dropout rates must lie in [0, 1)".into()));
            }
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("validation_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn dropout_rates(&self) -> DropoutRates {
        DropoutRates {
            embedding: self.embedding_dropout.unwrap_or(self.dropout),
            hidden: self.hidden_dropout.unwrap_or(self.dropout),
            feature: self.feature_dropout.unwrap_or(self.dropout),
            attention: self.attention_dropout.unwrap_or(self.dropout),
        }
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            ..AdamConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub model: Model,
    pub history: Vec<EpochRecord>,
}

/// Builds the vocabulary from the training split, initialises the model from
/// the config seed and trains it. `train_set` must already be normalised.
pub fn train(train_set: &Dataset, config: &ModelConfig) -> Result<TrainedModel> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("training split is empty".into()));
    }
    let stream = SeedStream::new(config.trainer.seed);
    let vocab = build_vocab(train_set.examples.iter().map(|e| e.tokens.as_slice()), config.vocab_cap);
    let embeddings = if config.variant.uses_text() {
        let mut rng = stream.substream("embeddings").rng();
        Some(load_embeddings(
            config.embeddings_path.as_deref(),
            &vocab,
            config.text.embedding_dim,
            &mut rng,
        )?)
    } else {
        None
    };
    let mut model = Model::new(config.clone(), vocab, embeddings, &stream)?;
    model.norm_stats = train_set.norm_stats.clone();
    let encoded = encode_all(&model, train_set)?;
    fit(model, &encoded)
}

pub fn encode_all(model: &Model, dataset: &Dataset) -> Result<Vec<EncodedExample>> {
    dataset.examples.iter().map(|e| model.encode(e)).collect()
}

fn mean_loss_and_accuracy(model: &Model, examples: &[&EncodedExample]) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut correct = 0usize;
    for ex in examples {
        let p = model.predict(ex)?;
        loss += crate::model::loss(&p.probabilities, ex.label);
        correct += usize::from(p.correct());
    }
    let n = examples.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Trains an initialised model on encoded examples using
/// `model.config.trainer`.
pub fn fit(mut model: Model, examples: &[EncodedExample]) -> Result<TrainedModel> {
    let cfg = model.config.trainer.clone();
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::InvalidArgument("no training examples".into()));
    }
    let stream = SeedStream::new(cfg.seed).substream("trainer");
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let n_val = match cfg.patience {
        Some(_) if cfg.validation_fraction > 0.0 && examples.len() >= 10 => {
            ((cfg.validation_fraction * examples.len() as f64).floor() as usize).max(1)
        }
        _ => 0,
    };
    if n_val > 0 {
        order.shuffle(&mut stream.substream("validation").rng());
    }
    let val: Vec<&EncodedExample> = order[..n_val].iter().map(|&i| &examples[i]).collect();
    let mut train_idx = order[n_val..].to_vec();
    train_idx.sort_unstable();
    let train_refs: Vec<&EncodedExample> = train_idx.iter().map(|&i| &examples[i]).collect();

    let rates = cfg.dropout_rates();
    let mut adam = AdamState::new(cfg.adam());
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, ParamStore)> = None;
    let mut since_best = 0usize;
    for epoch in 0..cfg.epochs {
        let mut batch_order = train_idx.clone();
        batch_order.shuffle(&mut stream.indexed("epoch", epoch as u64).rng());
        let mut total = 0.0;
        for (b, chunk) in batch_order.chunks(cfg.batch_size).enumerate() {
            let mut rng = stream.indexed("dropout", epoch as u64).indexed("batch", b as u64).rng();
            let diverged = |e: Error| match e {
                Error::NonFinite { .. } => Error::Diverged { epoch, batch: b },
                other => other,
            };
            let mut tape = Tape::new();
            let mut losses = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let ex = &examples[i];
                let f = model
                    .forward(&mut tape, ex, Some((rates, &mut rng)))
                    .map_err(diverged)?;
                losses.push(tape.cross_entropy(f.logits, ex.label.index()).map_err(diverged)?);
            }
            let stacked = tape.concat_rows(&losses)?;
            let sum = tape.sum(stacked)?;
            let mean = tape.scale(sum, 1.0 / chunk.len() as f64)?;
            let value = tape.value(mean).item();
            if !value.is_finite() {
                return Err(Error::Diverged { epoch, batch: b });
            }
            total += value * chunk.len() as f64;
            let grads = tape.backward(mean).map_err(diverged)?.into_params();
            adam.step(&mut model.params, &grads)?;
        }
        let (_, train_acc) = mean_loss_and_accuracy(&model, &train_refs)?;
        let mut record = EpochRecord {
            epoch: epoch + 1,
            train_loss: total / train_idx.len() as f64,
            train_acc,
            val_loss: None,
            val_acc: None,
        };
        if !val.is_empty() {
            let (vl, va) = mean_loss_and_accuracy(&model, &val)?;
            record.val_loss = Some(vl);
            record.val_acc = Some(va);
            if best.as_ref().is_none_or(|(b, _)| vl < *b) {
                best = Some((vl, model.params.clone()));
                since_best = 0;
            } else {
                since_best += 1;
            }
        }
        log::debug!(
            "epoch {} loss {:.4} train_acc {:.4} val_acc {:?}",
            record.epoch,
            record.train_loss,
            record.train_acc,
            record.val_acc
        );
        history.push(record);
        if let (Some(p), true) = (cfg.patience, !val.is_empty()) {
            if since_best >= p && epoch + 1 >= cfg.min_epochs {
                break;
            }
        }
    }
    if let Some((_, params)) = best {
        model.params = params;
    }
    Ok(TrainedModel { model, history })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub metrics: MetricsReport,
    pub predictions: Vec<PredictionOutput>,
}

pub fn evaluate(model: &Model, dataset: &Dataset) -> Result<Evaluation> {
    let encoded = encode_all(model, dataset)?;
    evaluate_encoded(model, &encoded)
}

pub fn evaluate_encoded(model: &Model, examples: &[EncodedExample]) -> Result<Evaluation> {
    let predictions = examples.iter().map(|e| model.predict(e)).collect::<Result<Vec<_>>>()?;
    let p: Vec<_> = predictions.iter().map(|p| p.predicted).collect();
    let a: Vec<_> = predictions.iter().map(|p| p.label).collect();
    Ok(Evaluation {
        metrics: metrics(&confusion(&p, &a)?)?,
        predictions,
    })
}

/// Whether training graphs are truncated along with the test graphs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruncationMode {
    #[default]
    TestOnly,
    TrainAndTest,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub fraction: f64,
    pub metrics: MetricsReport,
}

pub fn truncate_dataset(dataset: &Dataset, fraction: f64) -> Result<Dataset> {
    let mut out = dataset.clone();
    for ex in &mut out.examples {
        ex.graph = truncate_by_deadline(&ex.graph, fraction)?;
    }
    Ok(out)
}

/// Sorted, de-duplicated deadline fractions, each in `(0, 1]`.
pub fn normalize_fractions(fractions: &[f64]) -> Result<Vec<f64>> {
    if fractions.is_empty() {
        return Err(Error::InvalidArgument("no deadline fractions given".into()));
    }
    if let Some(f) = fractions.iter().find(|&&f| !(f > 0.0 && f <= 1.0)) {
        return Err(Error::InvalidArgument(format!("deadline fraction {f} not in (0, 1]")));
    }
    let mut out = fractions.to_vec();
    out.sort_by(f64::total_cmp);
    out.dedup();
    Ok(out)
}

/// Metrics per deadline fraction, ascending. In the default mode one model
/// is trained on full graphs and evaluated on truncated test graphs.
pub fn early_detection_schedule(
    config: &ModelConfig,
    train_set: &Dataset,
    test_set: &Dataset,
    fractions: &[f64],
    mode: TruncationMode,
) -> Result<Vec<CurvePoint>> {
    let fractions = normalize_fractions(fractions)?;
    let full = match mode {
        TruncationMode::TestOnly => Some(train(train_set, config)?),
        TruncationMode::TrainAndTest => None,
    };
    fractions
        .into_iter()
        .map(|fraction| {
            let test = truncate_dataset(test_set, fraction)?;
            let m = match &full {
                Some(t) => evaluate(&t.model, &test)?.metrics,
                None => {
                    let t = train(&truncate_dataset(train_set, fraction)?, config)?;
                    evaluate(&t.model, &test)?.metrics
                }
            };
            Ok(CurvePoint { fraction, metrics: m })
        })
        .collect()
}

pub const PARAMS_FILE: &str = "model.ckpt";
pub const META_FILE: &str = "model.json";
pub const HISTORY_FILE: &str = "history.csv";

#[derive(Serialize, Deserialize)]
struct Meta {
    format_version: u32,
    config: ModelConfig,
    vocab: Vocabulary,
    norm_stats: Option<NormStats>,
    history: Vec<EpochRecord>,
}

impl TrainedModel {
    /// Writes parameters, metadata and the history CSV into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.model.params.save(&dir.join(PARAMS_FILE))?;
        let meta = Meta {
            format_version: 1,
            config: self.model.config.clone(),
            vocab: self.model.vocab.clone(),
            norm_stats: self.model.norm_stats.clone(),
            history: self.history.clone(),
        };
        let path = dir.join(META_FILE);
        fs::write(&path, serde_json::to_string_pretty(&meta)? + "\n").map_err(|e| Error::io(&path, e))?;
        let path = dir.join(HISTORY_FILE);
        fs::write(&path, history_csv(&self.history)).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(META_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut meta: Meta = serde_json::from_str(&text)?;
        if meta.format_version != 1 {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {}",
                meta.format_version
            )));
        }
        meta.vocab.reindex();
        let model = Model {
            config: meta.config,
            vocab: meta.vocab,
            params: ParamStore::load(&dir.join(PARAMS_FILE))?,
            norm_stats: meta.norm_stats,
        };
        model.check_params()?;
        Ok(TrainedModel {
            model,
            history: meta.history,
        })
    }
}

fn opt6(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,train_acc,val_acc\n");
    for r in history {
        out.push_str(&format!(
            "{},{:.6},{:.6},{}\n",
            r.epoch,
            r.train_loss,
            r.train_acc,
            opt6(r.val_acc)
        ));
    }
    out
}
