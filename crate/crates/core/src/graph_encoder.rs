//! Masked multi-head graph attention over a propagation graph.
//!
//! For head `h` with weights `W` (`F x F'`) and attention vector `a`
//! (`2F' x 1`, split into a source half and a target half):
//!
//! ```text
//! e_ij  = LeakyReLU(a_src . W x_i + a_dst . W x_j)      for j in U_i
//! a_ij  = softmax_j(e_ij)
//! out_i = sum_j a_ij W x_j
//! ```
//!
//! Hidden layers apply ELU per head and concatenate heads; the output layer
//! averages heads and applies ReLU. Node outputs are pooled into a single
//! propagation vector by [`Readout`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::data::graph::Adjacency;
use crate::data::schema::NUM_FEATURES;
use crate::error::{Error, Result};
use crate::ops::LEAKY_SLOPE;
use crate::params::ParamStore;
use crate::rng::StreamRng;
use crate::tensor::Tensor;
use crate::text_encoder::{apply_dropout, glorot};

pub const PREFIX: &str = "graph_encoder";

/// How node outputs are pooled into one vector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    #[default]
    Mean,
    Max,
    /// The output row of the earliest retweeter.
    FirstByOrder,
}

impl fmt::Display for Readout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Readout::Mean => "mean",
            Readout::Max => "max",
            Readout::FirstByOrder => "first_by_order",
        })
    }
}

impl FromStr for Readout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Readout::Mean),
            "max" => Ok(Readout::Max),
            "first_by_order" => Ok(Readout::FirstByOrder),
            _ => Err(Error::Config(format!("unknown readout `{s}`"))),
        }
    }
}

/// How a layer combines its heads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadMerge {
    /// ELU per head, heads concatenated.
    ConcatElu,
    /// Heads averaged, then ReLU.
    AverageRelu,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphEncoderConfig {
    pub input_dim: usize,
    /// Per-head width of the hidden layers.
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub heads: usize,
    pub num_layers: usize,
    pub leaky_slope: f64,
    pub readout: Readout,
}

impl Default for GraphEncoderConfig {
    fn default() -> Self {
        GraphEncoderConfig {
            input_dim: NUM_FEATURES,
            hidden_dim: 32,
            output_dim: 64,
            heads: 5,
            num_layers: 2,
            leaky_slope: LEAKY_SLOPE,
            readout: Readout::Mean,
        }
    }
}

impl GraphEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0
            || self.hidden_dim == 0
            || self.output_dim == 0
            || self.heads == 0
            || self.num_layers == 0
        {
            return Err(Error::Config("graph encoder dimensions must be positive".into()));
        }
        Ok(())
    }

    /// `(input, per-head output, merge)` for every layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize, HeadMerge)> {
        let mut input = self.input_dim;
        (0..self.num_layers)
            .map(|l| {
                if l + 1 == self.num_layers {
                    (input, self.output_dim, HeadMerge::AverageRelu)
                } else {
                    let s = (input, self.hidden_dim, HeadMerge::ConcatElu);
                    input = self.hidden_dim * self.heads;
                    s
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GatHead {
    pub w: Tensor,
    pub a: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GatLayerParams {
    pub heads: Vec<GatHead>,
}

/// CSR adjacency plus the per-edge source index, as consumed by the tape ops.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeIndex {
    pub offsets: Vec<usize>,
    pub targets: Vec<usize>,
    pub sources: Vec<usize>,
}

impl EdgeIndex {
    pub fn new(adj: &Adjacency) -> Result<Self> {
        adj.validate()?;
        Ok(EdgeIndex {
            offsets: adj.offsets.clone(),
            targets: adj.targets.clone(),
            sources: adj.sources(),
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_edges(&self) -> usize {
        self.targets.len()
    }
}

/// Attention-dropout setting for a forward pass.
pub struct GatDropout<'a> {
    pub feature_rate: f64,
    pub attention_rate: f64,
    pub rng: &'a mut StreamRng,
}

/// One GAT layer on the tape. Returns the merged output and, per head, the
/// `E x 1` attention coefficients before any dropout.
pub fn gat_layer_var(
    tape: &mut Tape,
    x: Var,
    edges: &EdgeIndex,
    heads: &[(Var, Var)],
    merge: HeadMerge,
    slope: f64,
    dropout: &mut Option<GatDropout<'_>>,
) -> Result<(Var, Vec<Var>)> {
    if tape.value(x).rows() != edges.num_nodes() {
        return Err(Error::shape(
            "gat_layer",
            format!("{} feature rows for {} nodes", tape.value(x).rows(), edges.num_nodes()),
        ));
    }
    let mut outs = Vec::with_capacity(heads.len());
    let mut coeffs = Vec::with_capacity(heads.len());
    for &(w, a) in heads {
        let f_out = tape.value(w).cols();
        if tape.shape(a) != [2 * f_out, 1] {
            return Err(Error::shape(
                "gat_layer",
                format!("attention vector {:?}", tape.shape(a)),
            ));
        }
        let wh = tape.matmul(x, w)?;
        let a_src = tape.slice_rows(a, 0, f_out)?;
        let a_dst = tape.slice_rows(a, f_out, f_out)?;
        let s = tape.matmul(wh, a_src)?;
        let t = tape.matmul(wh, a_dst)?;
        let es = tape.gather_rows(s, &edges.sources)?;
        let et = tape.gather_rows(t, &edges.targets)?;
        let e = tape.add(es, et)?;
        let e = tape.leaky_relu(e, slope)?;
        let c = tape.segment_softmax(e, &edges.offsets)?;
        coeffs.push(c);
        let c_used = match dropout {
            Some(d) => apply_dropout(tape, c, d.attention_rate, d.rng)?,
            None => c,
        };
        let agg = tape.segment_aggregate(c_used, wh, &edges.offsets, &edges.targets)?;
        outs.push(agg);
    }
    let out = match merge {
        HeadMerge::ConcatElu => {
            let activated = outs.iter().map(|&o| tape.elu(o)).collect::<Result<Vec<_>>>()?;
            tape.concat_cols(&activated)?
        }
        HeadMerge::AverageRelu => {
            let mut total = outs[0];
            for &o in &outs[1..] {
                total = tape.add(total, o)?;
            }
            let mean = tape.scale(total, 1.0 / outs.len() as f64)?;
            tape.relu(mean)?
        }
    };
    Ok((out, coeffs))
}

fn bind_layer_const(tape: &mut Tape, p: &GatLayerParams) -> Vec<(Var, Var)> {
    p.heads
        .iter()
        .map(|h| (tape.constant(h.w.clone()), tape.constant(h.a.clone())))
        .collect()
}

/// Attention coefficients of one head, grouped per node in neighbour order.
pub fn gat_attention_coeffs(
    features: &Tensor,
    adj: &Adjacency,
    w: &Tensor,
    a: &Tensor,
    slope: f64,
) -> Result<Vec<Vec<f64>>> {
    let edges = EdgeIndex::new(adj)?;
    let mut tape = Tape::new();
    let x = tape.constant(features.clone());
    let layer = GatLayerParams {
        heads: vec![GatHead {
            w: w.clone(),
            a: a.clone(),
        }],
    };
    let heads = bind_layer_const(&mut tape, &layer);
    let (_, coeffs) = gat_layer_var(&mut tape, x, &edges, &heads, HeadMerge::AverageRelu, slope, &mut None)?;
    let c = tape.value(coeffs[0]).data();
    Ok(edges.offsets.windows(2).map(|r| c[r[0]..r[1]].to_vec()).collect())
}

fn run_layer(features: &Tensor, adj: &Adjacency, p: &GatLayerParams, merge: HeadMerge, slope: f64) -> Result<Tensor> {
    if p.heads.is_empty() {
        return Err(Error::InvalidArgument("GAT layer needs at least one head".into()));
    }
    let edges = EdgeIndex::new(adj)?;
    let mut tape = Tape::new();
    let x = tape.constant(features.clone());
    let heads = bind_layer_const(&mut tape, p);
    let (out, _) = gat_layer_var(&mut tape, x, &edges, &heads, merge, slope, &mut None)?;
    Ok(tape.value(out).clone())
}

/// Hidden GAT layer: `N x (heads * F')`.
pub fn gat_hidden_layer(features: &Tensor, adj: &Adjacency, p: &GatLayerParams) -> Result<Tensor> {
    run_layer(features, adj, p, HeadMerge::ConcatElu, LEAKY_SLOPE)
}

/// Output GAT layer: `N x F'`.
pub fn gat_output_layer(features: &Tensor, adj: &Adjacency, p: &GatLayerParams) -> Result<Tensor> {
    run_layer(features, adj, p, HeadMerge::AverageRelu, LEAKY_SLOPE)
}

/// Pools `N x F` node outputs into `1 x F` on the tape. `first` is the index
/// of the earliest node.
pub fn readout_var(tape: &mut Tape, nodes: Var, readout: Readout, first: usize) -> Result<Var> {
    match readout {
        Readout::Mean => tape.mean_rows(nodes),
        Readout::Max => tape.max_rows(nodes),
        Readout::FirstByOrder => tape.slice_rows(nodes, first, 1),
    }
}

/// Tensor-level readout; nodes are assumed to be in retweet order.
pub fn graph_readout(nodes: &Tensor, readout: Readout) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x = tape.constant(nodes.clone());
    let out = readout_var(&mut tape, x, readout, 0)?;
    Ok(tape.value(out).clone())
}

/// Coefficients of every layer and head for one graph, aligned with the CSR
/// edge list.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeAttentionSummary {
    pub offsets: Vec<usize>,
    pub targets: Vec<usize>,
    /// `coefficients[layer][head][edge]`.
    pub coefficients: Vec<Vec<Vec<f64>>>,
}

impl NodeAttentionSummary {
    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Attention node `i` receives from the other nodes,
    /// `sum_{j != i, i in U_j} a_ji`, averaged over all layers and heads.
    pub fn received_attention(&self) -> Vec<f64> {
        let n = self.num_nodes();
        let mut out = vec![0.0; n];
        let mut sets = 0usize;
        for layer in &self.coefficients {
            for head in layer {
                sets += 1;
                for j in 0..n {
                    for e in self.offsets[j]..self.offsets[j + 1] {
                        let i = self.targets[e];
                        if i != j {
                            out[i] += head[e];
                        }
                    }
                }
            }
        }
        if sets > 0 {
            out.iter_mut().for_each(|v| *v /= sets as f64);
        }
        out
    }

    /// Coefficients of node `i`'s neighbourhood for one layer and head.
    pub fn node_coefficients(&self, layer: usize, head: usize, i: usize) -> &[f64] {
        &self.coefficients[layer][head][self.offsets[i]..self.offsets[i + 1]]
    }
}

fn head_name(layer: usize, head: usize, n: &str) -> String {
    format!("{PREFIX}.l{layer}.h{head}.{n}")
}

pub fn aggregator_name() -> String {
    format!("{PREFIX}.aggregator.W")
}

/// Output of a graph forward pass.
pub struct GraphForward {
    pub vector: Var,
    /// `coefficients[layer][head]`, each `E x 1`; empty for the uniform
    /// aggregator.
    pub coefficients: Vec<Vec<Var>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphEncoder {
    pub config: GraphEncoderConfig,
    /// `false` replaces graph attention with one shared linear map followed
    /// by a uniform mean over neighbours and ReLU.
    pub attention: bool,
}

impl GraphEncoder {
    pub fn output_dim(&self) -> usize {
        self.config.output_dim
    }

    pub fn init_params(&self, store: &mut ParamStore, rng: &mut StreamRng) {
        if !self.attention {
            store.insert(
                aggregator_name(),
                glorot(self.config.input_dim, self.config.output_dim, rng),
            );
            return;
        }
        for (l, (input, out, _)) in self.config.layer_shapes().into_iter().enumerate() {
            for h in 0..self.config.heads {
                store.insert(head_name(l, h, "W"), glorot(input, out, rng));
                store.insert(head_name(l, h, "a"), glorot(2 * out, 1, rng));
            }
        }
    }

    pub fn layer_params(&self, store: &ParamStore) -> Result<Vec<GatLayerParams>> {
        (0..self.config.num_layers)
            .map(|l| {
                let heads = (0..self.config.heads)
                    .map(|h| {
                        Ok(GatHead {
                            w: store.get(&head_name(l, h, "W"))?.clone(),
                            a: store.get(&head_name(l, h, "a"))?.clone(),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(GatLayerParams { heads })
            })
            .collect()
    }

    /// Encodes one graph given its `N x F` feature matrix. `first` is the
    /// index of the earliest retweeter.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        features: &Tensor,
        edges: &EdgeIndex,
        first: usize,
        mut dropout: Option<GatDropout<'_>>,
    ) -> Result<GraphForward> {
        if features.cols() != self.config.input_dim {
            return Err(Error::shape(
                "graph_encoder",
                format!(
                    "{} feature columns, expected {}",
                    features.cols(),
                    self.config.input_dim
                ),
            ));
        }
        let mut x = tape.constant(features.clone());
        if !self.attention {
            x = self.feature_dropout(tape, x, &mut dropout)?;
            let name = aggregator_name();
            let w = tape.param(&name, store.get(&name)?);
            let wx = tape.matmul(x, w)?;
            let uniform: Vec<f64> = edges
                .offsets
                .windows(2)
                .flat_map(|r| std::iter::repeat_n(1.0 / (r[1] - r[0]) as f64, r[1] - r[0]))
                .collect();
            let c = tape.constant(Tensor::column(uniform));
            let agg = tape.segment_aggregate(c, wx, &edges.offsets, &edges.targets)?;
            let nodes = tape.relu(agg)?;
            return Ok(GraphForward {
                vector: readout_var(tape, nodes, self.config.readout, first)?,
                coefficients: Vec::new(),
            });
        }
        let mut coefficients = Vec::with_capacity(self.config.num_layers);
        for (l, (_, _, merge)) in self.config.layer_shapes().into_iter().enumerate() {
            x = self.feature_dropout(tape, x, &mut dropout)?;
            let mut heads = Vec::with_capacity(self.config.heads);
            for h in 0..self.config.heads {
                let (wn, an) = (head_name(l, h, "W"), head_name(l, h, "a"));
                heads.push((tape.param(&wn, store.get(&wn)?), tape.param(&an, store.get(&an)?)));
            }
            let (out, c) = gat_layer_var(tape, x, edges, &heads, merge, self.config.leaky_slope, &mut dropout)?;
            coefficients.push(c);
            x = out;
        }
        Ok(GraphForward {
            vector: readout_var(tape, x, self.config.readout, first)?,
            coefficients,
        })
    }

    fn feature_dropout(&self, tape: &mut Tape, x: Var, dropout: &mut Option<GatDropout<'_>>) -> Result<Var> {
        match dropout {
            Some(d) => apply_dropout(tape, x, d.feature_rate, d.rng),
            None => Ok(x),
        }
    }
}

/// Reads the coefficient values of a forward pass off the tape.
pub fn attention_summary(tape: &Tape, edges: &EdgeIndex, coefficients: &[Vec<Var>]) -> NodeAttentionSummary {
    NodeAttentionSummary {
        offsets: edges.offsets.clone(),
        targets: edges.targets.clone(),
        coefficients: coefficients
            .iter()
            .map(|layer| layer.iter().map(|&v| tape.value(v).data().to_vec()).collect())
            .collect(),
    }
}

/// One row of an edge-coefficient dump.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EdgeCoefficient {
    pub layer: usize,
    pub head: usize,
    pub node: usize,
    pub neighbor: usize,
    pub coefficient: f64,
}

pub fn edge_coefficients(summary: &NodeAttentionSummary) -> Vec<EdgeCoefficient> {
    let mut out = Vec::new();
    for (layer, heads) in summary.coefficients.iter().enumerate() {
        for (head, coeffs) in heads.iter().enumerate() {
            for node in 0..summary.num_nodes() {
                for e in summary.offsets[node]..summary.offsets[node + 1] {
                    out.push(EdgeCoefficient {
                        layer,
                        head,
                        node,
                        neighbor: summary.targets[e],
                        coefficient: coeffs[e],
                    });
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_gradients, DEFAULT_STEP};
    use crate::rng::SeedStream;

    fn star() -> Adjacency {
        // node 0 linked to everyone, others only to 0 and themselves
        Adjacency::from_lists(&[vec![0, 1, 2, 3], vec![0, 1], vec![0, 2], vec![0, 3]])
    }

    #[test]
    fn single_neighbour_gets_weight_one() {
        let adj = Adjacency::from_lists(&[vec![0], vec![1]]);
        let mut rng = SeedStream::new(1).rng();
        let x = glorot(2, 3, &mut rng);
        let c = gat_attention_coeffs(&x, &adj, &glorot(3, 2, &mut rng), &glorot(4, 1, &mut rng), 0.3).unwrap();
        assert_eq!(c, vec![vec![1.0], vec![1.0]]);
    }

    #[test]
    fn equal_scores_are_uniform_and_zero_attention_vector_averages() {
        let adj = star();
        let mut rng = SeedStream::new(2).rng();
        let x = glorot(4, 3, &mut rng);
        let w = glorot(3, 2, &mut rng);
        let c = gat_attention_coeffs(&x, &adj, &w, &Tensor::zeros(&[4, 1]), 0.3).unwrap();
        for v in &c[0] {
            assert!((v - 0.25).abs() < 1e-15);
        }
        let layer = GatLayerParams {
            heads: vec![GatHead {
                w: w.clone(),
                a: Tensor::zeros(&[4, 1]),
            }],
        };
        let out = gat_output_layer(&x, &adj, &layer).unwrap();
        let wx = x.matmul(&w).unwrap();
        for c in 0..2 {
            let mean = (0..4).map(|r| wx.get(r, c)).sum::<f64>() / 4.0;
            assert!((out.get(0, c) - mean.max(0.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn leaky_slope_on_negative_scores() {
        // Two nodes with scalar features; W = 1, a = [1, 0] so e_ij = x_i.
        let adj = Adjacency::from_lists(&[vec![0, 1], vec![0, 1]]);
        let x = Tensor::column(vec![-2.0, 1.0]);
        let c = gat_attention_coeffs(&x, &adj, &Tensor::scalar(1.0), &Tensor::column(vec![0.0, 1.0]), 0.3).unwrap();
        // e_00 = LeakyReLU(-2) = -0.6, e_01 = 1
        let z = (-0.6f64).exp() + 1f64.exp();
        assert!((c[0][0] - (-0.6f64).exp() / z).abs() < 1e-15);
    }

    #[test]
    fn missing_self_loop_rejected() {
        let adj = Adjacency::from_lists(&[vec![1], vec![0, 1]]);
        let x = Tensor::zeros(&[2, 1]);
        let r = gat_attention_coeffs(&x, &adj, &Tensor::scalar(1.0), &Tensor::column(vec![1.0, 1.0]), 0.3);
        assert!(r.is_err());
    }

    #[test]
    fn hidden_layer_shape_and_readouts() {
        let mut rng = SeedStream::new(3).rng();
        let x = glorot(4, 3, &mut rng);
        let layer = GatLayerParams {
            heads: (0..3)
                .map(|_| GatHead {
                    w: glorot(3, 2, &mut rng),
                    a: glorot(4, 1, &mut rng),
                })
                .collect(),
        };
        let h = gat_hidden_layer(&x, &star(), &layer).unwrap();
        assert_eq!(h.shape(), &[4, 6]);
        assert!(h.data().iter().all(|&v| v > -1.0));

        let nodes = Tensor::from_rows(&[vec![1.0, 5.0], vec![3.0, -1.0]]).unwrap();
        assert_eq!(graph_readout(&nodes, Readout::Mean).unwrap().data(), &[2.0, 2.0]);
        assert_eq!(graph_readout(&nodes, Readout::Max).unwrap().data(), &[3.0, 5.0]);
        assert_eq!(
            graph_readout(&nodes, Readout::FirstByOrder).unwrap().data(),
            &[1.0, 5.0]
        );
    }

    #[test]
    fn received_attention_excludes_self() {
        let summary = NodeAttentionSummary {
            offsets: vec![0, 2, 4],
            targets: vec![0, 1, 0, 1],
            coefficients: vec![vec![vec![0.9, 0.1, 0.7, 0.3], vec![0.5, 0.5, 0.2, 0.8]]],
        };
        let r = summary.received_attention();
        assert!((r[0] - (0.7 + 0.2) / 2.0).abs() < 1e-15);
        assert!((r[1] - (0.1 + 0.5) / 2.0).abs() < 1e-15);
        assert_eq!(edge_coefficients(&summary).len(), 8);
    }

    #[test]
    fn encoder_gradients_match_differences() {
        for attention in [true, false] {
            let enc = GraphEncoder {
                config: GraphEncoderConfig {
                    input_dim: 3,
                    hidden_dim: 2,
                    output_dim: 2,
                    heads: 2,
                    num_layers: 2,
                    leaky_slope: 0.3,
                    readout: Readout::Mean,
                },
                attention,
            };
            let mut store = ParamStore::new();
            let mut rng = SeedStream::new(8).rng();
            enc.init_params(&mut store, &mut rng);
            let x = glorot(4, 3, &mut rng).map(|v| v * 3.0);
            let edges = EdgeIndex::new(&star()).unwrap();
            let loss_of = |s: &ParamStore| -> Result<(Tape, Var)> {
                let mut tape = Tape::new();
                let out = enc.forward(&mut tape, s, &x, &edges, 0, None)?;
                let probe = tape.constant(Tensor::row(vec![0.7, -1.3]));
                let y = tape.mul(out.vector, probe)?;
                let l = tape.sum(y)?;
                Ok((tape, l))
            };
            let (tape, l) = loss_of(&store).unwrap();
            let grads = tape.backward(l).unwrap().into_params();
            let report = check_gradients(&store, &grads, DEFAULT_STEP, |s| {
                let (t, l) = loss_of(s)?;
                Ok(t.value(l).item())
            })
            .unwrap();
            assert!(report.passes(1e-5), "{report:?}");
        }
    }
}
