//! Planted-signal corpora for desk-scale experiments.
//!
//! Each example independently carries a text cue with probability
//! `text_signal_strength` and label-shifted early retweeters with probability
//! `graph_signal_strength`. Fake stories get the token [`FAKE_CUE`] and early
//! retweeters that look freshly created (few followers, unverified, default
//! profile); true stories get [`TRUE_CUE`] and established, verified early
//! retweeters. Everything else is drawn from label-independent distributions,
//! so with both strengths at zero the labels are pure noise.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::graph::deadline_count;
use crate::data::io::{write_jsonl, CorpusPaths, RawCorpus};
use crate::data::schema::{Label, RetweetRecord, SourceTweet, UserFeatures, NUM_FEATURES};
use crate::error::{Error, Result};
use crate::rng::{SeedStream, StreamRng};

pub const FAKE_CUE: &str = "unverified";
pub const TRUE_CUE: &str = "confirmed";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_examples: usize,
    pub text_signal_strength: f64,
    pub graph_signal_strength: f64,
    pub vocab_size: usize,
    pub mean_retweets: usize,
    pub min_words: usize,
    pub max_words: usize,
    /// Share of the earliest retweeters (rounded up, at least one) that carry
    /// the graph signal.
    pub planted_fraction: f64,
    /// Probability that an unplanted user's profile is unavailable.
    pub missing_user_rate: f64,
    /// Width of the generated word2vec vectors; 0 emits no embedding file.
    pub embedding_dim: usize,
    /// Standard deviation of each generated vector component.
    pub embedding_scale: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_examples: 400,
            text_signal_strength: 0.5,
            graph_signal_strength: 0.5,
            vocab_size: 50,
            mean_retweets: 20,
            min_words: 8,
            max_words: 16,
            planted_fraction: 0.1,
            missing_user_rate: 0.05,
            embedding_dim: 0,
            embedding_scale: 0.3,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic: {m}")));
        if self.n_examples < 2 {
            return bad("n_examples must be at least 2");
        }
        for (name, v) in [
            ("text_signal_strength", self.text_signal_strength),
            ("graph_signal_strength", self.graph_signal_strength),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(&format!("{name} must be in [0, 1]"));
            }
        }
        if self.vocab_size == 0 || self.mean_retweets == 0 {
            return bad("vocab_size and mean_retweets must be positive");
        }
        if self.min_words == 0 || self.min_words > self.max_words {
            return bad("need 1 <= min_words <= max_words");
        }
        if !(self.planted_fraction > 0.0 && self.planted_fraction <= 1.0) {
            return bad("planted_fraction must be in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.missing_user_rate) {
            return bad("missing_user_rate must be in [0, 1)");
        }
        if !(self.embedding_scale > 0.0 && self.embedding_scale.is_finite()) {
            return bad("embedding_scale must be positive");
        }
        Ok(())
    }
}

/// What was planted in one example.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub tweet_id: String,
    pub label: Label,
    pub cue_token: Option<String>,
    pub planted_users: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub raw: RawCorpus,
    pub truth: Vec<GroundTruth>,
    /// Label-independent Gaussian vectors for every generated word, standing
    /// in for a pretrained table. Empty unless `embedding_dim > 0`.
    pub embeddings: Vec<(String, Vec<f64>)>,
}

pub const EMBEDDINGS_FILE: &str = "embeddings.txt";

impl SyntheticCorpus {
    pub fn truth_by_id(&self) -> BTreeMap<String, GroundTruth> {
        self.truth.iter().map(|t| (t.tweet_id.clone(), t.clone())).collect()
    }

    /// Writes the three corpus files, `ground_truth.jsonl` and, when
    /// generated, [`EMBEDDINGS_FILE`] into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        self.raw.write(&CorpusPaths::in_dir(dir))?;
        write_jsonl(&dir.join("ground_truth.jsonl"), &self.truth)?;
        if !self.embeddings.is_empty() {
            let path = dir.join(EMBEDDINGS_FILE);
            fs::write(&path, word2vec_text(&self.embeddings)).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Word2vec text format with a `count dim` header.
pub fn word2vec_text(rows: &[(String, Vec<f64>)]) -> String {
    let dim = rows.first().map_or(0, |r| r.1.len());
    let mut out = format!("{} {dim}\n", rows.len());
    for (tok, v) in rows {
        out.push_str(tok);
        for x in v {
            out.push_str(&format!(" {x:.6}"));
        }
        out.push('\n');
    }
    out
}

fn gen_embeddings(config: &SyntheticConfig, stream: &SeedStream) -> Vec<(String, Vec<f64>)> {
    if config.embedding_dim == 0 {
        return Vec::new();
    }
    let normal = Normal::new(0.0, config.embedding_scale).expect("validated scale");
    let mut rng = stream.rng();
    (0..config.vocab_size)
        .map(|i| format!("w{i}"))
        .chain([FAKE_CUE.to_string(), TRUE_CUE.to_string()])
        .map(|tok| {
            let v = (0..config.embedding_dim).map(|_| normal.sample(&mut rng)).collect();
            (tok, v)
        })
        .collect()
}

#[derive(Clone, Copy)]
enum Profile {
    Base,
    Fake,
    True,
}

struct Gaussian(f64, f64);

fn count(rng: &mut StreamRng, g: Gaussian) -> f64 {
    let n = Normal::new(g.0, g.1).expect("positive std");
    n.sample(rng).max(0.0).round()
}

fn flag(rng: &mut StreamRng, p: f64) -> f64 {
    f64::from(u8::from(rng.random::<f64>() < p))
}

fn user_features(rng: &mut StreamRng, profile: Profile) -> [f64; NUM_FEATURES] {
    // (default_profile, default_image, extended_profile, verified) probabilities
    // and (favourites, followers, friends, listed, statuses) distributions.
    let (bin, counts) = match profile {
        Profile::Base => (
            [0.5, 0.1, 0.4, 0.1],
            [
                Gaussian(2000.0, 800.0),
                Gaussian(1000.0, 300.0),
                Gaussian(500.0, 200.0),
                Gaussian(20.0, 8.0),
                Gaussian(5000.0, 2000.0),
            ],
        ),
        Profile::Fake => (
            [0.95, 0.9, 0.05, 0.0],
            [
                Gaussian(300.0, 200.0),
                Gaussian(60.0, 40.0),
                Gaussian(900.0, 200.0),
                Gaussian(1.0, 1.0),
                Gaussian(300.0, 200.0),
            ],
        ),
        Profile::True => (
            [0.05, 0.0, 0.95, 1.0],
            [
                Gaussian(4000.0, 800.0),
                Gaussian(3000.0, 400.0),
                Gaussian(300.0, 100.0),
                Gaussian(60.0, 10.0),
                Gaussian(15000.0, 3000.0),
            ],
        ),
    };
    let [fav, followers, friends, listed, statuses] = counts;
    [
        flag(rng, 0.05),
        flag(rng, bin[0]),
        flag(rng, bin[1]),
        count(rng, fav),
        flag(rng, 0.02),
        count(rng, followers),
        flag(rng, 0.1),
        count(rng, friends),
        flag(rng, 0.4),
        flag(rng, bin[2]),
        count(rng, listed),
        flag(rng, 0.6),
        flag(rng, 0.05),
        count(rng, statuses),
        flag(rng, bin[3]),
    ]
}

/// Generates a balanced corpus; identical `(config, seed)` give identical output.
pub fn gen_synthetic(config: &SyntheticConfig, seed: u64) -> Result<SyntheticCorpus> {
    config.validate()?;
    let root = SeedStream::new(seed).substream("synthetic");
    let n = config.n_examples;
    let mut labels: Vec<Label> = (0..n)
        .map(|i| if i < n / 2 { Label::Fake } else { Label::True })
        .collect();
    {
        use rand::seq::SliceRandom;
        labels.shuffle(&mut root.substream("labels").rng());
    }

    let mut raw = RawCorpus::default();
    let mut truth = Vec::with_capacity(n);
    let width = n.to_string().len();
    for (idx, &label) in labels.iter().enumerate() {
        let mut rng = root.indexed("example", idx as u64).rng();
        let tweet_id = format!("t{idx:0width$}");
        let author = format!("{tweet_id}_author");

        let len = rng.random_range(config.min_words..=config.max_words);
        let mut words: Vec<String> = (0..len)
            .map(|_| format!("w{}", rng.random_range(0..config.vocab_size)))
            .collect();
        let cue_token = if rng.random::<f64>() < config.text_signal_strength {
            let cue = match label {
                Label::Fake => FAKE_CUE,
                Label::True => TRUE_CUE,
            };
            let pos = rng.random_range(0..len);
            words[pos] = cue.to_string();
            Some(cue.to_string())
        } else {
            None
        };
        raw.tweets.push(SourceTweet {
            id: tweet_id.clone(),
            text: words.join(" "),
            label,
            author_id: Some(author.clone()),
        });

        let lo = (config.mean_retweets / 2).max(1);
        let hi = (config.mean_retweets * 3 / 2).max(lo);
        let n_users = rng.random_range(lo..=hi);
        let planted = rng.random::<f64>() < config.graph_signal_strength;
        let k = deadline_count(n_users, config.planted_fraction);
        let mut planted_users = Vec::new();
        for j in 0..n_users {
            let user_id = format!("{tweet_id}_u{j:03}");
            let is_planted = planted && j < k;
            let profile = match (is_planted, label) {
                (false, _) => Profile::Base,
                (true, Label::Fake) => Profile::Fake,
                (true, Label::True) => Profile::True,
            };
            let features = user_features(&mut rng, profile);
            let parent = if j == 0 || rng.random::<f64>() < 0.2 {
                author.clone()
            } else {
                format!("{tweet_id}_u{:03}", rng.random_range(0..j))
            };
            let missing = !is_planted && rng.random::<f64>() < config.missing_user_rate;
            if !missing {
                raw.users.insert(user_id.clone(), UserFeatures::complete(features));
            }
            if is_planted {
                planted_users.push(user_id.clone());
            }
            raw.retweets.push(RetweetRecord {
                tweet_id: tweet_id.clone(),
                user_id,
                order: j as u64,
                parent_user_id: Some(parent),
            });
        }
        truth.push(GroundTruth {
            tweet_id,
            label,
            cue_token,
            planted_users,
        });
    }
    Ok(SyntheticCorpus {
        raw,
        truth,
        embeddings: gen_embeddings(config, &root.substream("embeddings")),
    })
}
