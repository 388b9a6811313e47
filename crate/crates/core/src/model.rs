//! The fused classifier and its ablation variants.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax_rows, Tape, Var, MAX_LOSS};
use crate::data::dataset::{Example, NormStats};
use crate::data::embeddings::EmbeddingTable;
use crate::data::graph::{GraphBuilder, PropagationGraph};
use crate::data::schema::Label;
use crate::data::text::{encode_tweet, Vocabulary, DEFAULT_MAX_LEN, DEFAULT_VOCAB_CAP, UNK_INDEX, UNK_TOKEN};
use crate::error::{Error, Result};
use crate::explain::Explanation;
use crate::graph_encoder::{
    attention_summary, EdgeIndex, GatDropout, GraphEncoder, GraphEncoderConfig, NodeAttentionSummary,
};
use crate::params::ParamStore;
use crate::rng::{SeedStream, StreamRng};
use crate::tensor::Tensor;
use crate::text_encoder::{embedding_name, glorot, TextDropout, TextEncoder, TextEncoderConfig};
use crate::train::TrainerConfig;

/// Model wiring. The text-free and graph-free variants carry no parameters
/// for the missing view.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    #[default]
    #[serde(rename = "MVAN")]
    Mvan,
    /// Word attention replaced by the mean of the BiGRU rows.
    #[serde(rename = "MVAN_TSA", alias = "MVAN-TSA")]
    MvanTsa,
    /// Graph attention replaced by a uniform neighbour mean.
    #[serde(rename = "MVAN_PSA", alias = "MVAN-PSA")]
    MvanPsa,
    /// Text view only.
    #[serde(rename = "TSAN")]
    Tsan,
    /// Graph view only.
    #[serde(rename = "PSAN")]
    Psan,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Mvan,
        Variant::MvanTsa,
        Variant::MvanPsa,
        Variant::Tsan,
        Variant::Psan,
    ];

    pub fn uses_text(self) -> bool {
        self != Variant::Psan
    }

    pub fn uses_graph(self) -> bool {
        self != Variant::Tsan
    }

    pub fn text_attention(self) -> bool {
        self != Variant::MvanTsa
    }

    pub fn graph_attention(self) -> bool {
        self != Variant::MvanPsa
    }

    /// Display name with a hyphen, e.g. `MVAN-TSA`.
    pub fn display_name(self) -> &'static str {
        match self {
            Variant::Mvan => "MVAN",
            Variant::MvanTsa => "MVAN-TSA",
            Variant::MvanPsa => "MVAN-PSA",
            Variant::Tsan => "TSAN",
            Variant::Psan => "PSAN",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace('_', "-");
        Variant::ALL
            .into_iter()
            .find(|v| v.display_name() == norm)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub text: TextEncoderConfig,
    pub graph: GraphEncoderConfig,
    /// Width of the hidden layer of the classification head.
    pub head_hidden: usize,
    pub max_len: usize,
    pub vocab_cap: usize,
    /// Optional word2vec text file used to seed the embedding table.
    pub embeddings_path: Option<PathBuf>,
    pub train_embeddings: bool,
    pub builder: GraphBuilder,
    /// Keep at most this many earliest retweeters per tweet.
    pub retweet_cap: Option<usize>,
    pub trainer: TrainerConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::Mvan,
            text: TextEncoderConfig::default(),
            graph: GraphEncoderConfig::default(),
            head_hidden: 64,
            max_len: DEFAULT_MAX_LEN,
            vocab_cap: DEFAULT_VOCAB_CAP,
            embeddings_path: None,
            train_embeddings: true,
            builder: GraphBuilder::default(),
            retweet_cap: None,
            trainer: TrainerConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.text.validate()?;
        self.graph.validate()?;
        self.trainer.validate()?;
        if self.head_hidden == 0 || self.max_len == 0 {
            return Err(Error::Config("head_hidden and max_len must be positive".into()));
        }
        if self.vocab_cap < 2 {
            return Err(Error::Config("vocab_cap must be at least 2".into()));
        }
        Ok(())
    }

    /// Small encoders that train in seconds on a few hundred examples. Word
    /// dropout is raised and the BiGRU outputs are left undropped, which keeps
    /// word attention on the tokens that carry the signal. Early stopping waits
    /// 20 epochs, since the small validation split is noisy at the start.
    pub fn compact() -> Self {
        let mut c = ModelConfig::default();
        c.text.embedding_dim = 16;
        c.text.hidden_size = 8;
        c.text.attention_dim = 16;
        c.graph.hidden_dim = 8;
        c.graph.output_dim = 16;
        c.graph.heads = 2;
        c.head_hidden = 16;
        c.trainer.batch_size = 32;
        c.trainer.learning_rate = 2e-3;
        c.trainer.embedding_dropout = Some(0.7);
        c.trainer.hidden_dropout = Some(0.0);
        c.trainer.epochs = 60;
        c.trainer.min_epochs = 20;
        c
    }

    pub fn with_variant(&self, variant: Variant) -> Self {
        ModelConfig {
            variant,
            ..self.clone()
        }
    }

    pub fn head_input_dim(&self) -> usize {
        let t = if self.variant.uses_text() {
            self.text.output_dim()
        } else {
            0
        };
        let p = if self.variant.uses_graph() {
            self.graph.output_dim
        } else {
            0
        };
        t + p
    }
}

/// An example ready for the model: token indices, feature matrix and edges.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedExample {
    pub tweet_id: String,
    pub label: Label,
    /// Real tokens, truncated to `max_len`; a tweet with no tokens becomes a
    /// single unknown token.
    pub tokens: Vec<String>,
    pub token_ids: Vec<usize>,
    pub graph: PropagationGraph,
    pub features: Tensor,
    pub edges: EdgeIndex,
}

pub fn encode_example(ex: &Example, vocab: &Vocabulary, max_len: usize) -> Result<EncodedExample> {
    let (ids, len) = encode_tweet(&ex.tokens, vocab, max_len);
    let (tokens, token_ids) = if len == 0 {
        (vec![UNK_TOKEN.to_string()], vec![UNK_INDEX])
    } else {
        (ex.tokens[..len].to_vec(), ids[..len].to_vec())
    };
    Ok(EncodedExample {
        tweet_id: ex.tweet.id.clone(),
        label: ex.tweet.label,
        tokens,
        token_ids,
        features: ex.graph.feature_matrix()?,
        edges: EdgeIndex::new(&ex.graph.adjacency())?,
        graph: ex.graph.clone(),
    })
}

/// Classification-head weights.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    pub w_tp: Tensor,
    pub b_tp: Tensor,
    pub w_out: Tensor,
    pub b_out: Tensor,
}

const HEAD: [&str; 4] = ["head.W_tp", "head.b_tp", "head.W_out", "head.b_out"];

fn head_var(tape: &mut Tape, input: Var, v: [Var; 4]) -> Result<Var> {
    let h = tape.matmul(input, v[0])?;
    let h = tape.add_row(h, v[1])?;
    let h = tape.relu(h)?;
    let o = tape.matmul(h, v[2])?;
    tape.add_row(o, v[3])
}

/// Class probabilities `[p_true, p_fake]` from the two view vectors. Either
/// view may be absent for the single-view variants.
pub fn predict_head(v_t: Option<&Tensor>, v_p: Option<&Tensor>, head: &HeadParams) -> Result<[f64; 2]> {
    let parts: Vec<&Tensor> = [v_t, v_p].into_iter().flatten().collect();
    if parts.is_empty() {
        return Err(Error::InvalidArgument("predict_head needs at least one view".into()));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = parts.iter().map(|t| tape.constant((*t).clone())).collect();
    let input = tape.concat_cols(&vars)?;
    if tape.value(input).cols() != head.w_tp.rows() {
        return Err(Error::shape(
            "predict_head",
            format!(
                "input width {} vs W_tp {:?}",
                tape.value(input).cols(),
                head.w_tp.shape()
            ),
        ));
    }
    let hv = [&head.w_tp, &head.b_tp, &head.w_out, &head.b_out].map(|t| tape.constant(t.clone()));
    let logits = head_var(&mut tape, input, hv)?;
    probabilities(tape.value(logits))
}

/// Softmax of a `1 x 2` logit row.
pub fn probabilities(logits: &Tensor) -> Result<[f64; 2]> {
    if logits.shape() != [1, 2] {
        return Err(Error::shape("probabilities", format!("{:?}", logits.shape())));
    }
    let p = softmax_rows(logits);
    Ok([p.data()[0], p.data()[1]])
}

/// Argmax with ties going to `true`.
pub fn predicted_label(probs: &[f64; 2]) -> Label {
    if probs[1] > probs[0] {
        Label::Fake
    } else {
        Label::True
    }
}

/// Cross-entropy of a distribution against the true label, with the
/// probability floored at 1e-12.
pub fn loss(probs: &[f64; 2], label: Label) -> f64 {
    (-probs[label.index()].max(1e-12).ln()).min(MAX_LOSS)
}

/// Per-site dropout rates used in training mode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DropoutRates {
    pub embedding: f64,
    pub hidden: f64,
    pub feature: f64,
    pub attention: f64,
}

/// Tape handles of one forward pass.
pub struct Forward {
    pub logits: Var,
    /// `1 x L` word weights when word attention is active.
    pub word_weights: Option<Var>,
    /// `[layer][head]` edge coefficients when graph attention is active.
    pub coefficients: Vec<Vec<Var>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictionOutput {
    pub tweet_id: String,
    pub label: Label,
    /// `[p_true, p_fake]`.
    pub probabilities: [f64; 2],
    pub predicted: Label,
    pub explanation: Explanation,
    pub attention: Option<NodeAttentionSummary>,
}

impl PredictionOutput {
    pub fn correct(&self) -> bool {
        self.predicted == self.label
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ParamStore,
    /// Feature statistics the graph inputs were normalised with; used to
    /// report raw feature values in explanations.
    pub norm_stats: Option<NormStats>,
}

impl Model {
    /// Initialises parameters from the `init` substream of `stream`.
    pub fn new(
        config: ModelConfig,
        vocab: Vocabulary,
        embeddings: Option<EmbeddingTable>,
        stream: &SeedStream,
    ) -> Result<Self> {
        config.validate()?;
        let mut rng = stream.substream("init").rng();
        let mut params = ParamStore::new();
        if config.variant.uses_text() {
            let table = match embeddings {
                Some(t) => t,
                None => EmbeddingTable::random(vocab.len(), config.text.embedding_dim, &mut rng),
            };
            if table.matrix.shape() != [vocab.len(), config.text.embedding_dim] {
                return Err(Error::Config(format!(
                    "embedding table {:?} does not match vocabulary {} x dim {}",
                    table.matrix.shape(),
                    vocab.len(),
                    config.text.embedding_dim
                )));
            }
            if config.train_embeddings && table.trainable {
                params.insert(embedding_name(), table.matrix);
            } else {
                params.insert_frozen(embedding_name(), table.matrix);
            }
        }
        let model = Model {
            config,
            vocab,
            params,
            norm_stats: None,
        };
        let mut params = model.params.clone();
        if model.config.variant.uses_text() {
            model.text_encoder().init_params(&mut params, &mut rng);
        }
        if model.config.variant.uses_graph() {
            model.graph_encoder().init_params(&mut params, &mut rng);
        }
        let d_in = model.config.head_input_dim();
        let hidden = model.config.head_hidden;
        params.insert(HEAD[0], glorot(d_in, hidden, &mut rng));
        params.insert(HEAD[1], Tensor::zeros(&[1, hidden]));
        params.insert(HEAD[2], glorot(hidden, 2, &mut rng));
        params.insert(HEAD[3], Tensor::zeros(&[1, 2]));
        Ok(Model { params, ..model })
    }

    pub fn text_encoder(&self) -> TextEncoder {
        TextEncoder {
            config: self.config.text.clone(),
            attention: self.config.variant.text_attention(),
        }
    }

    pub fn graph_encoder(&self) -> GraphEncoder {
        GraphEncoder {
            config: self.config.graph.clone(),
            attention: self.config.variant.graph_attention(),
        }
    }

    pub fn head_params(&self) -> Result<HeadParams> {
        Ok(HeadParams {
            w_tp: self.params.get(HEAD[0])?.clone(),
            b_tp: self.params.get(HEAD[1])?.clone(),
            w_out: self.params.get(HEAD[2])?.clone(),
            b_out: self.params.get(HEAD[3])?.clone(),
        })
    }

    /// Checks that the parameter set matches the variant: no graph
    /// parameters for text-only models and vice versa.
    pub fn check_params(&self) -> Result<()> {
        let v = self.config.variant;
        for name in self.params.names() {
            if (name.starts_with("graph_encoder.") && !v.uses_graph())
                || (name.starts_with("text_encoder.") && !v.uses_text())
            {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}` does not belong to variant {v}"
                )));
            }
        }
        for name in HEAD {
            self.params.get(name)?;
        }
        Ok(())
    }

    pub fn encode(&self, ex: &Example) -> Result<EncodedExample> {
        encode_example(ex, &self.vocab, self.config.max_len)
    }

    /// Records one forward pass; `dropout` is set in training mode.
    pub fn forward(
        &self,
        tape: &mut Tape,
        ex: &EncodedExample,
        mut dropout: Option<(DropoutRates, &mut StreamRng)>,
    ) -> Result<Forward> {
        let mut parts = Vec::with_capacity(2);
        let mut word_weights = None;
        let mut coefficients = Vec::new();
        if self.config.variant.uses_text() {
            let d = dropout.as_mut().map(|(r, rng)| TextDropout {
                embedding: r.embedding,
                hidden: r.hidden,
                rng,
            });
            let t = self.text_encoder().forward(tape, &self.params, &ex.token_ids, d)?;
            parts.push(t.vector);
            word_weights = t.weights;
        }
        if self.config.variant.uses_graph() {
            let d = dropout.as_mut().map(|(r, rng)| GatDropout {
                feature_rate: r.feature,
                attention_rate: r.attention,
                rng,
            });
            let g = self
                .graph_encoder()
                .forward(tape, &self.params, &ex.features, &ex.edges, 0, d)?;
            parts.push(g.vector);
            coefficients = g.coefficients;
        }
        let input = tape.concat_cols(&parts)?;
        let hv = HEAD.map(|n| tape.param(n, self.params.get(n).expect("head parameters exist")));
        let logits = head_var(tape, input, hv)?;
        Ok(Forward {
            logits,
            word_weights,
            coefficients,
        })
    }

    /// Evaluation-mode prediction with explanation.
    pub fn predict(&self, ex: &EncodedExample) -> Result<PredictionOutput> {
        let mut tape = Tape::new();
        let f = self.forward(&mut tape, ex, None)?;
        let probs = probabilities(tape.value(f.logits))?;
        let predicted = predicted_label(&probs);
        let words = f.word_weights.map(|w| tape.value(w).data().to_vec());
        let attention = if f.coefficients.is_empty() {
            None
        } else {
            Some(attention_summary(&tape, &ex.edges, &f.coefficients))
        };
        let explanation = Explanation::build(
            ex,
            predicted,
            words.as_deref(),
            attention.as_ref(),
            self.norm_stats.as_ref(),
        );
        Ok(PredictionOutput {
            tweet_id: ex.tweet_id.clone(),
            label: ex.label,
            probabilities: probs,
            predicted,
            explanation,
            attention,
        })
    }
}
