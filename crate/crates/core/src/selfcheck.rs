//! Built-in consistency checks: gradients against finite differences, sparse
//! attention against the dense oracle, attention normalisation and metric
//! counting. Also provides the tiny model used by those checks.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Tape, Var};
use crate::data::graph::{Adjacency, GraphNode, PropagationGraph};
use crate::data::schema::{Label, UserFeatures, NUM_FEATURES};
use crate::data::text::{Vocabulary, PAD_TOKEN, UNK_TOKEN};
use crate::error::Result;
use crate::gradcheck::{check_gradients, GradCheckReport, DEFAULT_STEP};
use crate::graph_encoder::{gat_hidden_layer, gat_output_layer, EdgeIndex, GatHead, GatLayerParams, HeadMerge};
use crate::metrics::{confusion, metrics};
use crate::model::{EncodedExample, Model, ModelConfig, Variant};
use crate::ops::LEAKY_SLOPE;
use crate::oracle::{count_confusion, dense_gat_layer, mask_from_lists};
use crate::params::ParamStore;
use crate::rng::{SeedStream, StreamRng};
use crate::tensor::Tensor;
use crate::text_encoder::glorot;

pub const GRADIENT_TOLERANCE: f64 = 1e-4;
pub const ORACLE_TOLERANCE: f64 = 1e-10;
pub const NORMALIZATION_TOLERANCE: f64 = 1e-6;

const TOY_WORDS: [&str; 6] = ["alpha", "beta", "gamma", "delta", "omega", "sigma"];

/// Width-4 encoders with two heads, sized for finite differences.
pub fn toy_config(variant: Variant) -> ModelConfig {
    let mut c = ModelConfig::default().with_variant(variant);
    c.text.embedding_dim = 4;
    c.text.hidden_size = 4;
    c.text.attention_dim = 4;
    c.graph.hidden_dim = 4;
    c.graph.output_dim = 4;
    c.graph.heads = 2;
    c.head_hidden = 4;
    c
}

pub fn toy_vocab() -> Vocabulary {
    let mut tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
    tokens.extend(TOY_WORDS.iter().map(|w| w.to_string()));
    Vocabulary::from_tokens(tokens)
}

fn normal_row(rng: &mut StreamRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Small graphs with at most six nodes, each with a self-loop.
pub fn reference_graphs() -> Vec<(&'static str, Vec<Vec<usize>>)> {
    let chain = |n: usize| -> Vec<Vec<usize>> {
        (0..n)
            .map(|i| (i.saturating_sub(1)..(i + 2).min(n)).collect())
            .collect()
    };
    let star = |n: usize| -> Vec<Vec<usize>> {
        (0..n)
            .map(|i| if i == 0 { (0..n).collect() } else { vec![0, i] })
            .collect()
    };
    let complete = |n: usize| -> Vec<Vec<usize>> { vec![(0..n).collect(); n] };
    vec![
        ("singleton", vec![vec![0]]),
        ("chain-4", chain(4)),
        ("chain-6", chain(6)),
        ("star-4", star(4)),
        ("star-6", star(6)),
        ("complete-3", complete(3)),
        ("complete-6", complete(6)),
    ]
}

/// `n` examples with length-5 texts and 4-node graphs (alternating chain and
/// star), features drawn from a standard normal.
pub fn toy_examples(vocab: &Vocabulary, n: usize, seed: u64) -> Result<Vec<EncodedExample>> {
    let graphs = reference_graphs();
    let shapes = [&graphs[1].1, &graphs[3].1];
    let mut rng = SeedStream::new(seed).substream("toy").rng();
    (0..n)
        .map(|i| {
            let lists = shapes[i % 2].clone();
            let nodes = (0..lists.len())
                .map(|j| {
                    let mut f = [0.0; NUM_FEATURES];
                    f.copy_from_slice(&normal_row(&mut rng, NUM_FEATURES));
                    GraphNode {
                        user_id: format!("toy{i}_u{j}"),
                        order: j as u64,
                        features: UserFeatures::complete(f),
                    }
                })
                .collect();
            let graph = PropagationGraph::from_parts(nodes, lists)?;
            let tokens: Vec<String> = (0..5)
                .map(|_| TOY_WORDS[rng.random_range(0..TOY_WORDS.len())].to_string())
                .collect();
            let token_ids = tokens.iter().map(|t| vocab.index_of(t).expect("toy word")).collect();
            Ok(EncodedExample {
                tweet_id: format!("toy{i}"),
                label: if i % 2 == 0 { Label::Fake } else { Label::True },
                tokens,
                token_ids,
                features: graph.feature_matrix()?,
                edges: EdgeIndex::new(&graph.adjacency())?,
                graph,
            })
        })
        .collect()
}

/// A freshly initialised toy model of the given variant and a 3-example batch.
pub fn toy_model(variant: Variant, seed: u64) -> Result<(Model, Vec<EncodedExample>)> {
    let vocab = toy_vocab();
    let model = Model::new(toy_config(variant), vocab.clone(), None, &SeedStream::new(seed))?;
    let batch = toy_examples(&vocab, 3, seed)?;
    Ok((model, batch))
}

fn batch_loss(model: &Model, params: &ParamStore, batch: &[EncodedExample]) -> Result<(Tape, Var)> {
    let m = Model {
        params: params.clone(),
        ..model.clone()
    };
    let mut tape = Tape::new();
    let mut losses = Vec::with_capacity(batch.len());
    for ex in batch {
        let f = m.forward(&mut tape, ex, None)?;
        losses.push(tape.cross_entropy(f.logits, ex.label.index())?);
    }
    let stacked = tape.concat_rows(&losses)?;
    let sum = tape.sum(stacked)?;
    let mean = tape.scale(sum, 1.0 / batch.len() as f64)?;
    Ok((tape, mean))
}

/// Compares every trainable parameter's gradient of the mean batch loss with
/// central differences.
pub fn model_gradient_check(model: &Model, batch: &[EncodedExample]) -> Result<GradCheckReport> {
    let (tape, loss) = batch_loss(model, &model.params, batch)?;
    let grads = tape.backward(loss)?.into_params();
    check_gradients(&model.params, &grads, DEFAULT_STEP, |p| {
        let (t, l) = batch_loss(model, p, batch)?;
        Ok(t.value(l).item())
    })
}

fn random_layer(rng: &mut StreamRng, f_in: usize, f_out: usize, heads: usize) -> GatLayerParams {
    GatLayerParams {
        heads: (0..heads)
            .map(|_| GatHead {
                w: glorot(f_in, f_out, rng),
                a: glorot(2 * f_out, 1, rng).map(|v| v * 3.0),
            })
            .collect(),
    }
}

/// Largest absolute difference between the sparse layers and the dense
/// oracle over the reference graphs, both head merges.
pub fn gat_oracle_max_diff(seed: u64) -> Result<f64> {
    let mut rng = SeedStream::new(seed).substream("gat-oracle").rng();
    let mut worst = 0.0f64;
    for (_, lists) in reference_graphs() {
        let n = lists.len();
        let x = Tensor::new(vec![n, 5], normal_row(&mut rng, n * 5))?;
        let adj = Adjacency::from_lists(&lists);
        let mask = mask_from_lists(&lists);
        let p = random_layer(&mut rng, 5, 3, 2);
        let hidden = gat_hidden_layer(&x, &adj, &p)?;
        let dense = dense_gat_layer(&x, &mask, &p, HeadMerge::ConcatElu, LEAKY_SLOPE);
        worst = worst.max(hidden.max_abs_diff(&dense));
        let out = gat_output_layer(&x, &adj, &p)?;
        let dense = dense_gat_layer(&x, &mask, &p, HeadMerge::AverageRelu, LEAKY_SLOPE);
        worst = worst.max(out.max_abs_diff(&dense));
    }
    Ok(worst)
}

/// Largest deviation from 1 of any word-weight vector or per-node attention
/// distribution over `n` random toy examples.
pub fn normalization_max_error(n: usize, seed: u64) -> Result<f64> {
    let vocab = toy_vocab();
    let model = Model::new(toy_config(Variant::Mvan), vocab.clone(), None, &SeedStream::new(seed))?;
    let mut worst = 0.0f64;
    for ex in toy_examples(&vocab, n, seed)? {
        let p = model.predict(&ex)?;
        let s: f64 = p.explanation.words.iter().map(|w| w.weight).sum();
        worst = worst.max((s - 1.0).abs());
        let a = p.attention.as_ref().expect("full model has graph attention");
        for (layer, heads) in a.coefficients.iter().enumerate() {
            for head in 0..heads.len() {
                for i in 0..a.num_nodes() {
                    let s: f64 = a.node_coefficients(layer, head, i).iter().sum();
                    worst = worst.max((s - 1.0).abs());
                }
            }
        }
    }
    Ok(worst)
}

/// Number of random prediction vectors (lengths 1 to `max_len`) whose
/// metrics disagree with direct counting.
pub fn metrics_mismatches(trials: usize, max_len: usize, seed: u64) -> Result<usize> {
    let mut rng = SeedStream::new(seed).substream("metrics").rng();
    let mut bad = 0;
    let label = |rng: &mut StreamRng| if rng.random::<bool>() { Label::Fake } else { Label::True };
    for _ in 0..trials {
        let n = rng.random_range(1..=max_len);
        let p: Vec<Label> = (0..n).map(|_| label(&mut rng)).collect();
        let a: Vec<Label> = (0..n).map(|_| label(&mut rng)).collect();
        let c = confusion(&p, &a)?;
        let (tp, tn, fp, fn_) = count_confusion(&p, &a);
        let m = metrics(&c)?;
        let acc = (tp + tn) as f64 / n as f64;
        if (c.tp, c.tn, c.fp, c.fn_) != (tp, tn, fp, fn_) || m.accuracy != acc {
            bad += 1;
        }
    }
    Ok(bad)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Runs every check; gradients are checked for all five variants.
pub fn run_selfcheck(seed: u64) -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    let mut record = |name: String, r: Result<(bool, String)>| {
        let (passed, detail) = r.unwrap_or_else(|e| (false, e.to_string()));
        out.push(CheckOutcome { name, passed, detail });
    };
    for v in Variant::ALL {
        record(
            format!("gradients {v}"),
            toy_model(v, seed)
                .and_then(|(m, b)| model_gradient_check(&m, &b))
                .map(|r| {
                    (
                        r.passes(GRADIENT_TOLERANCE),
                        format!(
                            "max relative error {:.2e} over {} coordinates",
                            r.max_rel_error, r.checked
                        ),
                    )
                }),
        );
    }
    record(
        "sparse attention vs dense oracle".into(),
        gat_oracle_max_diff(seed).map(|d| (d < ORACLE_TOLERANCE, format!("max abs diff {d:.2e}"))),
    );
    record(
        "attention normalisation".into(),
        normalization_max_error(100, seed).map(|e| (e < NORMALIZATION_TOLERANCE, format!("max |sum - 1| {e:.2e}"))),
    );
    record(
        "metrics vs counting".into(),
        metrics_mismatches(200, 1000, seed).map(|bad| (bad == 0, format!("{bad} mismatches in 200 vectors"))),
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_shapes() {
        let (model, batch) = toy_model(Variant::Mvan, 1).unwrap();
        assert_eq!(batch.len(), 3);
        assert!(batch.iter().all(|e| e.token_ids.len() == 5 && e.graph.num_nodes() == 4));
        model.check_params().unwrap();
    }

    #[test]
    fn oracle_agrees() {
        assert!(gat_oracle_max_diff(2).unwrap() < ORACLE_TOLERANCE);
    }
}
