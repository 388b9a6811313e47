//! Examples, splits and feature normalisation.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::graph::{build_propagation_graph, impute_user_features, GraphBuilder, PropagationGraph};
use crate::data::io::RawCorpus;
use crate::data::schema::{feature_kind, FeatureKind, RetweetRecord, SourceTweet, UserFeatures, NUM_FEATURES};
use crate::data::text::tokenize;
use crate::error::{Error, Result};
use crate::rng::SeedStream;

/// One source tweet with its cleaned tokens and propagation graph.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub tweet: SourceTweet,
    pub tokens: Vec<String>,
    pub graph: PropagationGraph,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub examples: Vec<Example>,
    /// Statistics used to normalise count features, fitted on a training split.
    pub norm_stats: Option<NormStats>,
}

impl Dataset {
    pub fn new(examples: Vec<Example>) -> Self {
        Dataset {
            examples,
            norm_stats: None,
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct AssembleOptions {
    pub builder: GraphBuilder,
    /// Keep at most this many earliest retweeters per tweet.
    pub retweet_cap: Option<usize>,
}

/// Tokenises every tweet and builds its imputed propagation graph.
pub fn assemble(raw: &RawCorpus, opts: &AssembleOptions) -> Result<Dataset> {
    let mut by_tweet: HashMap<&str, Vec<RetweetRecord>> = HashMap::new();
    for r in &raw.retweets {
        by_tweet.entry(r.tweet_id.as_str()).or_default().push(r.clone());
    }
    let users: HashMap<String, UserFeatures> = raw.users.iter().map(|(k, v)| (k.clone(), *v)).collect();
    let mut examples = Vec::with_capacity(raw.tweets.len());
    for tweet in &raw.tweets {
        let mut records = by_tweet
            .remove(tweet.id.as_str())
            .ok_or_else(|| Error::Data(format!("tweet `{}` has no retweets", tweet.id)))?;
        if let Some(cap) = opts.retweet_cap {
            records.sort_by_key(|r| r.order);
            records.truncate(cap.max(1));
        }
        let graph = build_propagation_graph(&records, &users, opts.builder, tweet.author_id.as_deref())
            .map_err(|e| Error::Data(format!("tweet `{}`: {e}", tweet.id)))?;
        examples.push(Example {
            tweet: tweet.clone(),
            tokens: tokenize(&tweet.text),
            graph: impute_user_features(&graph),
        });
    }
    if let Some(orphan) = by_tweet.keys().min() {
        log::warn!("retweets reference unknown tweet `{orphan}` (and possibly others); ignored");
    }
    Ok(Dataset::new(examples))
}

pub const DEFAULT_TRAIN_RATIO: f64 = 0.7;

/// Shuffles with the given stream and puts the first `floor(ratio * n)`
/// examples in the training split.
pub fn split_dataset(dataset: &Dataset, ratio: f64, stream: &SeedStream) -> Result<(Dataset, Dataset)> {
    let n = dataset.len();
    if n < 2 {
        return Err(Error::InvalidArgument("need at least two examples to split".into()));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!("split ratio {ratio} not in (0, 1)")));
    }
    let n_train = ((ratio * n as f64) + 1e-9).floor() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::InvalidArgument(format!(
            "split ratio {ratio} leaves an empty side for {n} examples"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream.rng());
    let pick = |idx: &[usize]| Dataset {
        examples: idx.iter().map(|&i| dataset.examples[i].clone()).collect(),
        norm_stats: dataset.norm_stats.clone(),
    };
    Ok((pick(&order[..n_train]), pick(&order[n_train..])))
}

/// Per-feature mean and population standard deviation of the count features.
/// Binary slots carry mean 0 and std 1 and are never rescaled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn fit(dataset: &Dataset) -> Result<Self> {
        let mut sum = [0.0; NUM_FEATURES];
        let mut sq = [0.0; NUM_FEATURES];
        let mut count = 0usize;
        for ex in &dataset.examples {
            for node in ex.graph.nodes() {
                let f = node
                    .features
                    .dense()
                    .ok_or_else(|| Error::Data(format!("user `{}` has unimputed features", node.user_id)))?;
                for k in 0..NUM_FEATURES {
                    sum[k] += f[k];
                }
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::Data("no users to fit normalisation on".into()));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        for ex in &dataset.examples {
            for node in ex.graph.nodes() {
                let f = node.features.dense().expect("checked above");
                for k in 0..NUM_FEATURES {
                    sq[k] += (f[k] - mean[k]).powi(2);
                }
            }
        }
        let mut out = NormStats {
            mean,
            std: sq.iter().map(|s| (s / count as f64).sqrt()).collect(),
        };
        for k in 0..NUM_FEATURES {
            if feature_kind(k) == FeatureKind::Binary {
                out.mean[k] = 0.0;
                out.std[k] = 1.0;
            }
        }
        Ok(out)
    }

    pub fn apply_value(&self, k: usize, v: f64) -> f64 {
        match feature_kind(k) {
            FeatureKind::Binary => v,
            FeatureKind::Count if self.std[k] == 0.0 => 0.0,
            FeatureKind::Count => (v - self.mean[k]) / self.std[k],
        }
    }

    /// Maps a normalised value back to raw units.
    pub fn invert_value(&self, k: usize, v: f64) -> f64 {
        match feature_kind(k) {
            FeatureKind::Binary => v,
            FeatureKind::Count => v * self.std[k] + self.mean[k],
        }
    }

    pub fn apply(&self, dataset: &Dataset) -> Dataset {
        let mut out = dataset.clone();
        for ex in &mut out.examples {
            for node in ex.graph.nodes_mut() {
                for (k, v) in node.features.values.iter_mut().enumerate() {
                    if let Some(x) = v {
                        *x = self.apply_value(k, *x);
                    }
                }
            }
        }
        out.norm_stats = Some(self.clone());
        out
    }
}

/// Fits count-feature statistics on `train` and applies them to both splits.
pub fn normalize_features(train: &Dataset, test: &Dataset) -> Result<(Dataset, Dataset)> {
    let stats = NormStats::fit(train)?;
    Ok((stats.apply(train), stats.apply(test)))
}

/// Assembles, splits and normalises a raw corpus in one go.
pub fn prepare_splits(
    raw: &RawCorpus,
    opts: &AssembleOptions,
    ratio: f64,
    stream: &SeedStream,
) -> Result<(Dataset, Dataset)> {
    let ds = assemble(raw, opts)?;
    let (train, test) = split_dataset(&ds, ratio, stream)?;
    normalize_features(&train, &test)
}

/// Label counts, for logging and sanity checks.
pub fn label_counts(dataset: &Dataset) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for ex in &dataset.examples {
        *out.entry(ex.tweet.label.to_string()).or_default() += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::graph::GraphNode;
    use crate::data::schema::Label;

    fn example(id: usize, counts: &[f64]) -> Example {
        let nodes = counts
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let mut f = [0.0; NUM_FEATURES];
                f[5] = c;
                f[14] = 1.0;
                GraphNode {
                    user_id: format!("{id}_{i}"),
                    order: i as u64,
                    features: UserFeatures::complete(f),
                }
            })
            .collect();
        let nb = (0..counts.len()).map(|i| vec![i]).collect();
        Example {
            tweet: SourceTweet {
                id: id.to_string(),
                text: String::new(),
                label: if id.is_multiple_of(2) { Label::True } else { Label::Fake },
                author_id: None,
            },
            tokens: vec![],
            graph: PropagationGraph::from_parts(nodes, nb).unwrap(),
        }
    }

    fn feature(ds: &Dataset, ex: usize, node: usize, k: usize) -> f64 {
        ds.examples[ex].graph.nodes()[node].features.values[k].unwrap()
    }

    #[test]
    fn two_point_zscore_and_binary_untouched() {
        let train = Dataset::new(vec![example(0, &[0.0, 10.0])]);
        let test = Dataset::new(vec![example(1, &[20.0])]);
        let (tr, te) = normalize_features(&train, &test).unwrap();
        assert_eq!(feature(&tr, 0, 0, 5), -1.0);
        assert_eq!(feature(&tr, 0, 1, 5), 1.0);
        assert_eq!(feature(&tr, 0, 0, 14), 1.0);
        // test data uses training statistics: (20 - 5) / 5
        assert_eq!(feature(&te, 0, 0, 5), 3.0);
        assert!(te.norm_stats.is_some());
    }

    #[test]
    fn constant_feature_maps_to_zero() {
        let train = Dataset::new(vec![example(0, &[7.0, 7.0, 7.0])]);
        let (tr, _) = normalize_features(&train, &train).unwrap();
        assert!((0..3).all(|i| feature(&tr, 0, i, 5) == 0.0));
    }

    #[test]
    fn normalisation_is_idempotent() {
        let train = Dataset::new(vec![example(0, &[1.0, 5.0, 9.0, 30.0]), example(1, &[2.0, 4.0])]);
        let (once, _) = normalize_features(&train, &train).unwrap();
        let (twice, _) = normalize_features(&once, &once).unwrap();
        for (a, b) in once.examples.iter().zip(&twice.examples) {
            for (na, nb) in a.graph.nodes().iter().zip(b.graph.nodes()) {
                for k in 0..NUM_FEATURES {
                    assert!((na.features.values[k].unwrap() - nb.features.values[k].unwrap()).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn split_sizes_and_determinism() {
        let ds = Dataset::new((0..10).map(|i| example(i, &[1.0])).collect());
        let s = SeedStream::new(3).substream("split");
        let (a, b) = split_dataset(&ds, 0.7, &s).unwrap();
        assert_eq!((a.len(), b.len()), (7, 3));
        let (a2, _) = split_dataset(&ds, 0.7, &s).unwrap();
        assert_eq!(a, a2);
        let mut ids: Vec<String> = a
            .examples
            .iter()
            .chain(&b.examples)
            .map(|e| e.tweet.id.clone())
            .collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 10);
    }

    #[test]
    fn different_seeds_give_different_splits() {
        let ds = Dataset::new((0..10).map(|i| example(i, &[1.0])).collect());
        let mut seen = std::collections::BTreeSet::new();
        for seed in 0..100 {
            let (a, _) = split_dataset(&ds, 0.7, &SeedStream::new(seed)).unwrap();
            let mut ids: Vec<String> = a.examples.iter().map(|e| e.tweet.id.clone()).collect();
            ids.sort();
            seen.insert(ids);
        }
        assert!(seen.len() >= 2);
    }

    #[test]
    fn split_needs_two_examples() {
        let ds = Dataset::new(vec![example(0, &[1.0])]);
        assert!(split_dataset(&ds, 0.7, &SeedStream::new(0)).is_err());
    }
}
