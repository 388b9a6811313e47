//! Retweet propagation graphs.
//!
//! Nodes are the users who retweeted a source tweet, sorted by retweet order.
//! Neighbour lists are the attention neighbourhoods used by the graph encoder
//! and always include the node itself.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::schema::{RetweetRecord, UserFeatures, NUM_FEATURES};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// How retweet records are turned into edges.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum GraphBuilder {
    /// Edge between each retweeter and its recorded parent; records without a
    /// usable parent fall back to the chain rule with `k = 1`.
    ParentTree,
    /// Each node is linked to its `k` immediate predecessors in retweet order.
    Chain(usize),
}

impl Default for GraphBuilder {
    fn default() -> Self {
        GraphBuilder::Chain(1)
    }
}

impl fmt::Display for GraphBuilder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphBuilder::ParentTree => f.write_str("parent_tree"),
            GraphBuilder::Chain(k) => write!(f, "chain({k})"),
        }
    }
}

impl FromStr for GraphBuilder {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let s = s.trim();
        if s == "parent_tree" {
            return Ok(GraphBuilder::ParentTree);
        }
        if s == "chain" {
            return Ok(GraphBuilder::Chain(1));
        }
        s.strip_prefix("chain(")
            .and_then(|r| r.strip_suffix(')'))
            .and_then(|k| k.trim().parse::<usize>().ok())
            .filter(|&k| k >= 1)
            .map(GraphBuilder::Chain)
            .ok_or_else(|| format!("unknown graph builder `{s}` (expected parent_tree or chain(k))"))
    }
}

impl TryFrom<String> for GraphBuilder {
    type Error = String;
    fn try_from(s: String) -> std::result::Result<Self, String> {
        s.parse()
    }
}

impl From<GraphBuilder> for String {
    fn from(b: GraphBuilder) -> String {
        b.to_string()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphNode {
    pub user_id: String,
    pub order: u64,
    pub features: UserFeatures,
}

/// Compressed neighbour lists: the neighbours of node `i` are
/// `targets[offsets[i]..offsets[i + 1]]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Adjacency {
    pub offsets: Vec<usize>,
    pub targets: Vec<usize>,
}

impl Adjacency {
    pub fn from_lists(lists: &[Vec<usize>]) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        let mut targets = Vec::new();
        offsets.push(0);
        for l in lists {
            targets.extend_from_slice(l);
            offsets.push(targets.len());
        }
        Adjacency { offsets, targets }
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_edges(&self) -> usize {
        self.targets.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.targets[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Source node of every edge, aligned with `targets`.
    pub fn sources(&self) -> Vec<usize> {
        (0..self.num_nodes())
            .flat_map(|i| std::iter::repeat_n(i, self.offsets[i + 1] - self.offsets[i]))
            .collect()
    }

    /// Checks that targets are in range and every node lists itself.
    pub fn validate(&self) -> Result<()> {
        let n = self.num_nodes();
        if n == 0 {
            return Err(Error::Data("graph has no nodes".into()));
        }
        for i in 0..n {
            let nb = self.neighbors(i);
            if nb.iter().any(|&j| j >= n) {
                return Err(Error::Data(format!("node {i} has a neighbour index out of range")));
            }
            if !nb.contains(&i) {
                return Err(Error::Data(format!("node {i} has no self-loop")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PropagationGraph {
    nodes: Vec<GraphNode>,
    neighbors: Vec<Vec<usize>>,
}

impl PropagationGraph {
    /// Builds from explicit parts; neighbour lists are sorted, de-duplicated and
    /// must contain a self-loop for every node.
    pub fn from_parts(nodes: Vec<GraphNode>, mut neighbors: Vec<Vec<usize>>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Data("propagation graph needs at least one node".into()));
        }
        if nodes.len() != neighbors.len() {
            return Err(Error::Data("one neighbour list per node required".into()));
        }
        for l in &mut neighbors {
            l.sort_unstable();
            l.dedup();
        }
        Adjacency::from_lists(&neighbors).validate()?;
        Ok(PropagationGraph { nodes, neighbors })
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[GraphNode] {
        &self.nodes
    }

    pub fn nodes_mut(&mut self) -> &mut [GraphNode] {
        &mut self.nodes
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].binary_search(&j).is_ok()
    }

    pub fn adjacency(&self) -> Adjacency {
        Adjacency::from_lists(&self.neighbors)
    }

    /// `n x 15` matrix of node features. Fails if any feature is absent.
    pub fn feature_matrix(&self) -> Result<Tensor> {
        let mut data = Vec::with_capacity(self.nodes.len() * NUM_FEATURES);
        for node in &self.nodes {
            let dense = node
                .features
                .dense()
                .ok_or_else(|| Error::Data(format!("user `{}` has unimputed features", node.user_id)))?;
            data.extend_from_slice(&dense);
        }
        Tensor::matrix(self.nodes.len(), NUM_FEATURES, data)
    }

    /// Graph restricted to the first `keep` nodes (by retweet order).
    pub fn prefix(&self, keep: usize) -> PropagationGraph {
        let keep = keep.clamp(1, self.nodes.len());
        let nodes = self.nodes[..keep].to_vec();
        let neighbors = self.neighbors[..keep]
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let mut l: Vec<usize> = l.iter().copied().filter(|&j| j < keep).collect();
                if !l.contains(&i) {
                    l.push(i);
                    l.sort_unstable();
                }
                l
            })
            .collect();
        PropagationGraph { nodes, neighbors }
    }
}

/// Builds the graph for one source tweet from its retweet records.
///
/// `users` supplies profile features (absent users become missing records);
/// `source_author` is the id a parent may refer to without being a node.
pub fn build_propagation_graph(
    records: &[RetweetRecord],
    users: &HashMap<String, UserFeatures>,
    builder: GraphBuilder,
    source_author: Option<&str>,
) -> Result<PropagationGraph> {
    if records.is_empty() {
        return Err(Error::Data("no retweet records".into()));
    }
    let mut sorted: Vec<&RetweetRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.order);
    if sorted.windows(2).any(|w| w[0].order == w[1].order) {
        return Err(Error::Data(format!(
            "duplicate retweet order in tweet `{}`",
            sorted[0].tweet_id
        )));
    }
    let mut position: HashMap<&str, usize> = HashMap::new();
    for (i, r) in sorted.iter().enumerate() {
        if position.insert(r.user_id.as_str(), i).is_some() {
            return Err(Error::Data(format!(
                "user `{}` retweets tweet `{}` twice",
                r.user_id, r.tweet_id
            )));
        }
    }

    let n = sorted.len();
    let mut neighbors: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut link = |a: usize, b: usize| {
        neighbors[a].push(b);
        neighbors[b].push(a);
    };
    match builder {
        GraphBuilder::Chain(k) => {
            for i in 0..n {
                for j in i.saturating_sub(k)..i {
                    link(i, j);
                }
            }
        }
        GraphBuilder::ParentTree => {
            for (i, r) in sorted.iter().enumerate() {
                let parent = match r.parent_user_id.as_deref() {
                    Some(p) if Some(p) == source_author => None,
                    Some(p) => {
                        let j = *position.get(p).ok_or_else(|| {
                            Error::Data(format!("retweet by `{}` names unknown parent `{p}`", r.user_id))
                        })?;
                        if j >= i {
                            return Err(Error::Data(format!(
                                "parent `{p}` of `{}` does not retweet earlier",
                                r.user_id
                            )));
                        }
                        Some(j)
                    }
                    None => None,
                };
                match parent {
                    Some(j) => link(i, j),
                    None if i > 0 => link(i, i - 1),
                    None => {}
                }
            }
        }
    }

    let nodes = sorted
        .iter()
        .map(|r| GraphNode {
            user_id: r.user_id.clone(),
            order: r.order,
            features: users.get(&r.user_id).copied().unwrap_or_default(),
        })
        .collect();
    PropagationGraph::from_parts(nodes, neighbors)
}

/// Keeps the earliest `ceil(keep_fraction * n)` retweeters and the edges among
/// them.
pub fn truncate_by_deadline(graph: &PropagationGraph, keep_fraction: f64) -> Result<PropagationGraph> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "keep fraction {keep_fraction} not in (0, 1]"
        )));
    }
    Ok(graph.prefix(deadline_count(graph.num_nodes(), keep_fraction)))
}

/// `ceil(fraction * n)`, tolerant of products like `0.7 * 10 = 7.000000000000001`.
pub fn deadline_count(n: usize, fraction: f64) -> usize {
    let raw = fraction * n as f64;
    let keep = (raw - 1e-9 * raw.max(1.0)).ceil() as usize;
    keep.clamp(1, n)
}

/// Replaces absent feature slots with the mean of that feature over the
/// graph's users who have it. Features nobody has fall back to zero.
pub fn impute_user_features(graph: &PropagationGraph) -> PropagationGraph {
    let mut sums = [0.0; NUM_FEATURES];
    let mut counts = [0usize; NUM_FEATURES];
    for node in &graph.nodes {
        for (k, v) in node.features.values.iter().enumerate() {
            if let Some(v) = v {
                sums[k] += v;
                counts[k] += 1;
            }
        }
    }
    let needs_fill = graph.nodes.iter().any(|n| !n.features.is_complete());
    if needs_fill && counts.contains(&0) {
        log::warn!(
            "propagation graph starting with user `{}` has features no user provides; filling with zeros",
            graph.nodes[0].user_id
        );
    }
    let means: [f64; NUM_FEATURES] = std::array::from_fn(|k| {
        if counts[k] == 0 {
            0.0
        } else {
            sums[k] / counts[k] as f64
        }
    });
    let mut out = graph.clone();
    for node in &mut out.nodes {
        for (k, v) in node.features.values.iter_mut().enumerate() {
            v.get_or_insert(means[k]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(user: &str, order: u64, parent: Option<&str>) -> RetweetRecord {
        RetweetRecord {
            tweet_id: "t".into(),
            user_id: user.into(),
            order,
            parent_user_id: parent.map(str::to_string),
        }
    }

    fn edges(g: &PropagationGraph) -> Vec<(usize, usize)> {
        (0..g.num_nodes())
            .flat_map(|i| g.neighbors(i).iter().map(move |&j| (i, j)))
            .collect()
    }

    #[test]
    fn chain_builder() {
        let users = HashMap::new();
        let g = build_propagation_graph(&[rec("u1", 0, None)], &users, GraphBuilder::Chain(1), None).unwrap();
        assert_eq!(edges(&g), vec![(0, 0)]);

        let recs = [rec("u3", 7, None), rec("u1", 1, None), rec("u2", 4, None)];
        let g = build_propagation_graph(&recs, &users, GraphBuilder::Chain(1), None).unwrap();
        assert_eq!(g.nodes()[0].user_id, "u1");
        assert_eq!(g.nodes()[2].user_id, "u3");
        assert_eq!(edges(&g), vec![(0, 0), (0, 1), (1, 0), (1, 1), (1, 2), (2, 1), (2, 2)]);
    }

    #[test]
    fn parent_tree_builder() {
        let recs = [
            rec("u1", 0, Some("src")),
            rec("u2", 1, Some("u1")),
            rec("u3", 2, Some("u1")),
        ];
        let g = build_propagation_graph(&recs, &HashMap::new(), GraphBuilder::ParentTree, Some("src")).unwrap();
        assert_eq!(edges(&g), vec![(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (2, 0), (2, 2)]);
    }

    #[test]
    fn builder_errors() {
        let users = HashMap::new();
        assert!(build_propagation_graph(&[], &users, GraphBuilder::Chain(1), None).is_err());
        let recs = [rec("u1", 0, None), rec("u2", 1, Some("ghost"))];
        let err = build_propagation_graph(&recs, &users, GraphBuilder::ParentTree, None).unwrap_err();
        assert!(err.to_string().contains("ghost"));
        let recs = [rec("u1", 0, None), rec("u2", 0, None)];
        assert!(build_propagation_graph(&recs, &users, GraphBuilder::Chain(1), None).is_err());
    }

    #[test]
    fn builder_parses() {
        assert_eq!("chain(3)".parse::<GraphBuilder>().unwrap(), GraphBuilder::Chain(3));
        assert_eq!("parent_tree".parse::<GraphBuilder>().unwrap(), GraphBuilder::ParentTree);
        assert!("chain(0)".parse::<GraphBuilder>().is_err());
        assert_eq!(GraphBuilder::Chain(2).to_string(), "chain(2)");
    }

    fn chain(n: usize) -> PropagationGraph {
        let recs: Vec<_> = (0..n).map(|i| rec(&format!("u{i}"), i as u64, None)).collect();
        build_propagation_graph(&recs, &HashMap::new(), GraphBuilder::Chain(1), None).unwrap()
    }

    #[test]
    fn truncation() {
        let g = chain(10);
        assert_eq!(truncate_by_deadline(&g, 1.0).unwrap(), g);
        let t = truncate_by_deadline(&g, 0.25).unwrap();
        assert_eq!(t.num_nodes(), 3);
        assert_eq!(t.nodes()[2].user_id, "u2");
        assert_eq!(t, chain(3));
        assert_eq!(truncate_by_deadline(&g, 0.5).unwrap(), chain(5));
        assert_eq!(truncate_by_deadline(&g, 0.7).unwrap().num_nodes(), 7);
        assert!(truncate_by_deadline(&g, 0.0).is_err());
    }

    fn with_features(values: &[Option<f64>]) -> PropagationGraph {
        let nodes = values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let features = match v {
                    Some(x) => UserFeatures::complete([*x; NUM_FEATURES]),
                    None => UserFeatures::missing(),
                };
                GraphNode {
                    user_id: format!("u{i}"),
                    order: i as u64,
                    features,
                }
            })
            .collect();
        let nb = (0..values.len()).map(|i| vec![i]).collect();
        PropagationGraph::from_parts(nodes, nb).unwrap()
    }

    #[test]
    fn imputation() {
        let g = impute_user_features(&with_features(&[Some(2.0), None]));
        assert_eq!(g.nodes()[1].features.dense().unwrap(), [2.0; NUM_FEATURES]);

        let g = impute_user_features(&with_features(&[Some(0.0), Some(1.0), None]));
        assert_eq!(g.nodes()[2].features.dense().unwrap(), [0.5; NUM_FEATURES]);
        assert_eq!(g.nodes()[1].features.dense().unwrap(), [1.0; NUM_FEATURES]);

        let g = impute_user_features(&with_features(&[None, None]));
        assert_eq!(g.feature_matrix().unwrap(), Tensor::zeros(&[2, NUM_FEATURES]));
    }

    #[test]
    fn partial_records_impute_per_slot() {
        let mut g = with_features(&[Some(4.0), Some(2.0)]);
        g.nodes_mut()[1].features.values[3] = None;
        let out = impute_user_features(&g);
        assert_eq!(out.nodes()[1].features.values[3], Some(4.0));
        assert_eq!(out.nodes()[1].features.values[4], Some(2.0));
    }

    #[test]
    fn self_loops_required() {
        let nodes = with_features(&[Some(1.0), Some(1.0)]).nodes().to_vec();
        assert!(PropagationGraph::from_parts(nodes, vec![vec![0, 1], vec![0]]).is_err());
    }
}
