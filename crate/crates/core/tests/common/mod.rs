//! Independent reference implementations for the integration tests.

#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::BTreeMap;

use mvan::data::{gen_synthetic, prepare_splits, AssembleOptions, Dataset, Label, SyntheticConfig, SyntheticCorpus};
use mvan::rng::SeedStream;

pub fn corpus(n: usize, text: f64, graph: f64, seed: u64) -> SyntheticCorpus {
    gen_synthetic(
        &SyntheticConfig {
            n_examples: n,
            text_signal_strength: text,
            graph_signal_strength: graph,
            embedding_dim: 16,
            ..SyntheticConfig::default()
        },
        seed,
    )
    .unwrap()
}

pub fn splits(c: &SyntheticCorpus, seed: u64) -> (Dataset, Dataset) {
    prepare_splits(&c.raw, &AssembleOptions::default(), 0.7, &SeedStream::new(seed)).unwrap()
}

/// Writes the corpus's generated vectors to a temp file and returns its path.
pub fn embeddings_file(c: &SyntheticCorpus, dir: &std::path::Path) -> std::path::PathBuf {
    let path = dir.join("embeddings.txt");
    std::fs::write(&path, mvan::data::word2vec_text(&c.embeddings)).unwrap();
    path
}

/// Binary logistic regression by full-batch gradient descent with a small L2
/// penalty; inputs are standardised with the training statistics.
pub struct Logistic {
    mean: Vec<f64>,
    scale: Vec<f64>,
    w: Vec<f64>,
    b: f64,
}

impl Logistic {
    pub fn fit(x: &[Vec<f64>], y: &[bool], epochs: usize, lr: f64, l2: f64) -> Self {
        let d = x[0].len();
        let n = x.len() as f64;
        let mean: Vec<f64> = (0..d).map(|k| x.iter().map(|r| r[k]).sum::<f64>() / n).collect();
        let scale: Vec<f64> = (0..d)
            .map(|k| {
                let v = x.iter().map(|r| (r[k] - mean[k]).powi(2)).sum::<f64>() / n;
                if v > 0.0 {
                    v.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        let mut m = Logistic {
            mean,
            scale,
            w: vec![0.0; d],
            b: 0.0,
        };
        let xs: Vec<Vec<f64>> = x.iter().map(|r| m.standardise(r)).collect();
        for _ in 0..epochs {
            let mut gw = vec![0.0; d];
            let mut gb = 0.0;
            for (r, &t) in xs.iter().zip(y) {
                let err = m.prob_std(r) - f64::from(u8::from(t));
                for k in 0..d {
                    gw[k] += err * r[k];
                }
                gb += err;
            }
            for k in 0..d {
                m.w[k] -= lr * (gw[k] / n + l2 * m.w[k]);
            }
            m.b -= lr * gb / n;
        }
        m
    }

    fn standardise(&self, r: &[f64]) -> Vec<f64> {
        r.iter()
            .enumerate()
            .map(|(k, v)| (v - self.mean[k]) / self.scale[k])
            .collect()
    }

    fn prob_std(&self, r: &[f64]) -> f64 {
        let z: f64 = self.b + r.iter().zip(&self.w).map(|(a, b)| a * b).sum::<f64>();
        1.0 / (1.0 + (-z).exp())
    }

    pub fn accuracy(&self, x: &[Vec<f64>], y: &[bool]) -> f64 {
        let hits = x
            .iter()
            .zip(y)
            .filter(|(r, &t)| (self.prob_std(&self.standardise(r)) > 0.5) == t)
            .count();
        hits as f64 / x.len() as f64
    }
}

/// Bag-of-words counts over the training vocabulary.
pub fn bag_of_words(train: &Dataset, test: &Dataset) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut vocab: BTreeMap<&str, usize> = BTreeMap::new();
    for ex in &train.examples {
        for t in &ex.tokens {
            let n = vocab.len();
            vocab.entry(t.as_str()).or_insert(n);
        }
    }
    let encode = |ds: &Dataset| -> Vec<Vec<f64>> {
        ds.examples
            .iter()
            .map(|ex| {
                let mut v = vec![0.0; vocab.len()];
                for t in &ex.tokens {
                    if let Some(&i) = vocab.get(t.as_str()) {
                        v[i] += 1.0;
                    }
                }
                v
            })
            .collect()
    };
    (encode(train), encode(test))
}

/// Mean user features over the earliest tenth of retweeters and over all
/// retweeters.
pub fn graph_summary(ds: &Dataset) -> Vec<Vec<f64>> {
    ds.examples
        .iter()
        .map(|ex| {
            let nodes = ex.graph.nodes();
            let k = nodes.len().div_ceil(10);
            let mean_of = |slice: &[mvan::data::GraphNode]| -> Vec<f64> {
                (0..15)
                    .map(|f| {
                        slice.iter().map(|n| n.features.values[f].unwrap_or(0.0)).sum::<f64>() / slice.len() as f64
                    })
                    .collect()
            };
            let mut v = mean_of(&nodes[..k]);
            v.extend(mean_of(nodes));
            v
        })
        .collect()
}

pub fn fake_flags(ds: &Dataset) -> Vec<bool> {
    ds.examples.iter().map(|e| e.tweet.label == Label::Fake).collect()
}

/// Counts (tp, tn, fp, fn) one example at a time, fake positive.
pub fn brute_confusion(pred: &[Label], actual: &[Label]) -> [usize; 4] {
    let mut c = [0usize; 4];
    for i in 0..pred.len() {
        let p = pred[i] == Label::Fake;
        let a = actual[i] == Label::Fake;
        let slot = match (p, a) {
            (true, true) => 0,
            (false, false) => 1,
            (true, false) => 2,
            (false, true) => 3,
        };
        c[slot] += 1;
    }
    c
}

/// Dense masked multi-head attention layer, written from the definition:
/// `e_ij = LeakyReLU(a · [W h_i ‖ W h_j])` over the neighbours of `i`,
/// softmax per row, weighted sum of `W h_j`; heads concatenated through ELU
/// or averaged through ReLU.
pub fn dense_layer(
    x: &[Vec<f64>],
    adj: &[Vec<usize>],
    heads: &[(Vec<Vec<f64>>, Vec<f64>)],
    concat: bool,
    slope: f64,
) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut per_head = Vec::new();
    for (w, a) in heads {
        let f = w[0].len();
        let wx: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..f)
                    .map(|c| (0..x[i].len()).map(|k| x[i][k] * w[k][c]).sum())
                    .collect()
            })
            .collect();
        let mut out = vec![vec![0.0; f]; n];
        for i in 0..n {
            let mut logits = vec![f64::NEG_INFINITY; n];
            for j in 0..n {
                if adj[i].contains(&j) {
                    let s: f64 = (0..f).map(|c| a[c] * wx[i][c] + a[f + c] * wx[j][c]).sum();
                    logits[j] = if s >= 0.0 { s } else { slope * s };
                }
            }
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
            for j in 0..n {
                let alpha = (logits[j] - m).exp() / z;
                for c in 0..f {
                    out[i][c] += alpha * wx[j][c];
                }
            }
        }
        per_head.push(out);
    }
    (0..n)
        .map(|i| {
            if concat {
                per_head
                    .iter()
                    .flat_map(|h| h[i].iter().map(|&v| if v > 0.0 { v } else { v.exp() - 1.0 }))
                    .collect()
            } else {
                let f = per_head[0][i].len();
                (0..f)
                    .map(|c| (per_head.iter().map(|h| h[i][c]).sum::<f64>() / per_head.len() as f64).max(0.0))
                    .collect()
            }
        })
        .collect()
}
