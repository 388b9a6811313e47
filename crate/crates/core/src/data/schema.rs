use std::fmt;

use serde::{Deserialize, Serialize};

/// Class label. Indices are fixed: `true` = 0, `fake` = 1; fake is the
/// positive class for all metrics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    True,
    Fake,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::True, Label::Fake];

    pub fn index(self) -> usize {
        match self {
            Label::True => 0,
            Label::Fake => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Label> {
        match i {
            0 => Some(Label::True),
            1 => Some(Label::Fake),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::True => "true",
            Label::Fake => "fake",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceTweet {
    pub id: String,
    pub text: String,
    pub label: Label,
    /// Account that posted the source tweet, when known. Retweet parents may
    /// point at it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub author_id: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetweetRecord {
    pub tweet_id: String,
    pub user_id: String,
    pub order: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_user_id: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureKind {
    Binary,
    Count,
}

pub const NUM_FEATURES: usize = 15;

/// User profile fields, in input-vector order.
pub const FEATURES: [(&str, FeatureKind); NUM_FEATURES] = [
    ("user_contributors_enabled", FeatureKind::Binary),
    ("user_default_profile", FeatureKind::Binary),
    ("user_default_profile_image", FeatureKind::Binary),
    ("user_favourites_count", FeatureKind::Count),
    ("user_follow_request_sent", FeatureKind::Binary),
    ("user_followers_count", FeatureKind::Count),
    ("user_following", FeatureKind::Binary),
    ("user_friends_count", FeatureKind::Count),
    ("user_geo_enabled", FeatureKind::Binary),
    ("user_has_extended_profile", FeatureKind::Binary),
    ("user_listed_count", FeatureKind::Count),
    ("user_profile_use_background_image", FeatureKind::Binary),
    ("user_protected", FeatureKind::Binary),
    ("user_statuses_count", FeatureKind::Count),
    ("user_verified", FeatureKind::Binary),
];

pub fn feature_index(name: &str) -> Option<usize> {
    FEATURES.iter().position(|(n, _)| *n == name)
}

pub fn feature_kind(i: usize) -> FeatureKind {
    FEATURES[i].1
}

/// One user's 15 profile fields. Each slot may be absent; a user with every
/// slot absent (e.g. a deleted account) is a missing record.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct UserFeatures {
    pub values: [Option<f64>; NUM_FEATURES],
}

impl UserFeatures {
    pub fn missing() -> Self {
        Self::default()
    }

    pub fn complete(values: [f64; NUM_FEATURES]) -> Self {
        UserFeatures {
            values: values.map(Some),
        }
    }

    pub fn is_missing(&self) -> bool {
        self.values.iter().all(Option::is_none)
    }

    pub fn is_complete(&self) -> bool {
        self.values.iter().all(Option::is_some)
    }

    /// The dense vector, if every slot is present.
    pub fn dense(&self) -> Option<[f64; NUM_FEATURES]> {
        let mut out = [0.0; NUM_FEATURES];
        for (o, v) in out.iter_mut().zip(&self.values) {
            *o = (*v)?;
        }
        Some(out)
    }
}
