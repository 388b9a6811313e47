//! Attention-based explanations: clue words and influential retweeters.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::dataset::NormStats;
use crate::data::schema::Label;
use crate::graph_encoder::NodeAttentionSummary;
use crate::model::EncodedExample;

/// How per-user scores are defined; written into report metadata.
pub const RECEIVED_ATTENTION_DEFINITION: &str =
    "sum over neighbours j != i of the coefficient a_ji, averaged over all layers and heads";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WordWeight {
    pub token: String,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserScore {
    pub user_id: String,
    pub order: u64,
    pub score: f64,
    /// Profile features in raw units when normalisation statistics are known.
    pub features: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedUser {
    pub rank: usize,
    #[serde(flatten)]
    pub user: UserScore,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub tweet_id: String,
    pub label: Label,
    pub predicted: Label,
    /// Empty when the model has no word attention.
    pub words: Vec<WordWeight>,
    /// Retweeters in retweet order; empty when the model has no graph
    /// attention.
    pub users: Vec<UserScore>,
    pub top_user: Option<RankedUser>,
}

impl Explanation {
    pub fn build(
        ex: &EncodedExample,
        predicted: Label,
        word_weights: Option<&[f64]>,
        attention: Option<&NodeAttentionSummary>,
        stats: Option<&NormStats>,
    ) -> Self {
        let words = word_weights
            .map(|w| {
                ex.tokens
                    .iter()
                    .zip(w)
                    .map(|(t, &weight)| WordWeight {
                        token: t.clone(),
                        weight,
                    })
                    .collect()
            })
            .unwrap_or_default();
        let users: Vec<UserScore> = attention
            .map(|a| {
                let scores = a.received_attention();
                ex.graph
                    .nodes()
                    .iter()
                    .zip(scores)
                    .map(|(node, score)| {
                        let features = node
                            .features
                            .values
                            .iter()
                            .enumerate()
                            .map(|(k, v)| {
                                let v = v.unwrap_or(0.0);
                                stats.map_or(v, |s| s.invert_value(k, v))
                            })
                            .collect();
                        UserScore {
                            user_id: node.user_id.clone(),
                            order: node.order,
                            score,
                            features,
                        }
                    })
                    .collect()
            })
            .unwrap_or_default();
        let mut out = Explanation {
            tweet_id: ex.tweet_id.clone(),
            label: ex.label,
            predicted,
            words,
            users,
            top_user: None,
        };
        out.top_user = top_users(&out, 1).into_iter().next();
        out
    }

    /// Index of the highest-weighted word, first position on ties.
    pub fn top_word(&self) -> Option<&WordWeight> {
        self.words
            .iter()
            .reduce(|best, w| if w.weight > best.weight { w } else { best })
    }
}

/// Users ranked by received attention, descending, ties broken by earlier
/// retweet.
pub fn top_users(explanation: &Explanation, k: usize) -> Vec<RankedUser> {
    let mut users: Vec<&UserScore> = explanation.users.iter().collect();
    users.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(Ordering::Equal)
            .then(a.order.cmp(&b.order))
    });
    users
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(i, u)| RankedUser {
            rank: i + 1,
            user: u.clone(),
        })
        .collect()
}

pub const NUM_BINS: usize = 10;

/// Histogram of word weights over `[0, 0.1), ..., [0.9, 1.0]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WordWeightDistribution {
    pub class: Option<Label>,
    pub n_tweets: usize,
    pub n_words: usize,
    pub counts: [usize; NUM_BINS],
    pub proportions: [f64; NUM_BINS],
    pub mean_weight: f64,
    /// Share of words whose weight is 1, i.e. the only word the model sees.
    pub fraction_weight_one: f64,
}

/// Bin of a weight: half-open tenths, with 1.0 in the last bin. Weights a
/// hair below a boundary through rounding (e.g. 0.1 from 1/10) land above it.
pub fn weight_bin(w: f64) -> usize {
    (((w + 1e-9) * NUM_BINS as f64).floor().max(0.0) as usize).min(NUM_BINS - 1)
}

/// Weight histogram over explanations whose true label matches `class`
/// (all when `None`).
pub fn word_weight_distribution(explanations: &[Explanation], class: Option<Label>) -> WordWeightDistribution {
    let mut counts = [0usize; NUM_BINS];
    let mut n_words = 0usize;
    let mut n_tweets = 0usize;
    let mut sum = 0.0;
    let mut ones = 0usize;
    for e in explanations.iter().filter(|e| class.is_none_or(|c| e.label == c)) {
        if e.words.is_empty() {
            continue;
        }
        n_tweets += 1;
        for w in &e.words {
            counts[weight_bin(w.weight)] += 1;
            n_words += 1;
            sum += w.weight;
            if w.weight >= 1.0 - 1e-12 {
                ones += 1;
            }
        }
    }
    let frac = |c: usize| if n_words == 0 { 0.0 } else { c as f64 / n_words as f64 };
    WordWeightDistribution {
        class,
        n_tweets,
        n_words,
        counts,
        proportions: counts.map(frac),
        mean_weight: if n_words == 0 { 0.0 } else { sum / n_words as f64 },
        fraction_weight_one: frac(ones),
    }
}

/// Mean attention weight of one token across its occurrences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenWeight {
    pub token: String,
    pub count: usize,
    pub mean_weight: f64,
}

/// Tokens ranked by mean weight, descending, ties by token; the ranked-list
/// stand-in for a word cloud. Tokens seen fewer than `min_count` times are
/// dropped.
pub fn token_weights(explanations: &[Explanation], class: Option<Label>, min_count: usize) -> Vec<TokenWeight> {
    let mut acc: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
    for e in explanations.iter().filter(|e| class.is_none_or(|c| e.label == c)) {
        for w in &e.words {
            let slot = acc.entry(w.token.as_str()).or_default();
            slot.0 += 1;
            slot.1 += w.weight;
        }
    }
    let mut out: Vec<TokenWeight> = acc
        .into_iter()
        .filter(|(_, (n, _))| *n >= min_count.max(1))
        .map(|(t, (n, s))| TokenWeight {
            token: t.to_string(),
            count: n,
            mean_weight: s / n as f64,
        })
        .collect();
    out.sort_by(|a, b| {
        b.mean_weight
            .total_cmp(&a.mean_weight)
            .then_with(|| a.token.cmp(&b.token))
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn explanation(weights: &[f64], scores: &[f64], label: Label) -> Explanation {
        Explanation {
            tweet_id: "t".into(),
            label,
            predicted: label,
            words: weights
                .iter()
                .enumerate()
                .map(|(i, &w)| WordWeight {
                    token: format!("w{i}"),
                    weight: w,
                })
                .collect(),
            users: scores
                .iter()
                .enumerate()
                .map(|(i, &s)| UserScore {
                    user_id: format!("u{i}"),
                    order: i as u64,
                    score: s,
                    features: vec![0.0; 15],
                })
                .collect(),
            top_user: None,
        }
    }

    #[test]
    fn singleton_tweet_fills_top_bin() {
        let d = word_weight_distribution(&[explanation(&[1.0], &[], Label::Fake)], None);
        assert_eq!(d.counts[9], 1);
        assert_eq!(d.fraction_weight_one, 1.0);
    }

    #[test]
    fn uniform_tenths_land_in_second_bin() {
        let w = vec![1.0 / 10.0; 10];
        let d = word_weight_distribution(&[explanation(&w, &[], Label::True)], Some(Label::True));
        assert_eq!(d.counts[1], 10);
        assert_eq!(d.proportions[1], 1.0);
        let none = word_weight_distribution(&[explanation(&w, &[], Label::True)], Some(Label::Fake));
        assert_eq!(none.n_words, 0);
    }

    #[test]
    fn ranking_ties_prefer_earlier_retweet() {
        let e = explanation(&[], &[0.2, 0.5, 0.5, 0.1], Label::Fake);
        let top = top_users(&e, 3);
        let ids: Vec<&str> = top.iter().map(|u| u.user.user_id.as_str()).collect();
        assert_eq!(ids, ["u1", "u2", "u0"]);
        assert_eq!(top[0].rank, 1);
        let single = explanation(&[], &[0.0], Label::Fake);
        assert_eq!(top_users(&single, 5).len(), 1);
    }

    #[test]
    fn token_means_ranked() {
        let a = explanation(&[0.7, 0.3], &[], Label::Fake);
        let b = explanation(&[0.1, 0.9], &[], Label::True);
        let all = token_weights(&[a.clone(), b], None, 1);
        assert_eq!(all.len(), 2);
        assert!((all[0].mean_weight - 0.6).abs() < 1e-12 && all[0].token == "w1");
        let fake = token_weights(&[a], Some(Label::Fake), 1);
        assert_eq!(fake[0].token, "w0");
        assert!(token_weights(&[explanation(&[0.5, 0.5], &[], Label::Fake)], None, 3).is_empty());
    }
}
