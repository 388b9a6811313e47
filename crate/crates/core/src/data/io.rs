//! JSON-lines corpus files: `tweets.jsonl`, `retweets.jsonl`, `users.jsonl`.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::schema::{
    feature_index, feature_kind, FeatureKind, RetweetRecord, SourceTweet, UserFeatures, FEATURES,
};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusPaths {
    pub tweets: PathBuf,
    pub retweets: PathBuf,
    pub users: PathBuf,
}

impl CorpusPaths {
    pub fn in_dir(dir: &Path) -> Self {
        CorpusPaths {
            tweets: dir.join("tweets.jsonl"),
            retweets: dir.join("retweets.jsonl"),
            users: dir.join("users.jsonl"),
        }
    }
}

/// Everything read from the three corpus files, before graph construction.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawCorpus {
    pub tweets: Vec<SourceTweet>,
    pub retweets: Vec<RetweetRecord>,
    pub users: BTreeMap<String, UserFeatures>,
}

#[derive(Serialize, Deserialize)]
struct UserLine {
    user_id: String,
    #[serde(default)]
    features: BTreeMap<String, Value>,
}

impl RawCorpus {
    pub fn read(paths: &CorpusPaths) -> Result<Self> {
        let tweets: Vec<SourceTweet> = read_jsonl(&paths.tweets)?;
        for (i, t) in tweets.iter().enumerate() {
            if t.id.is_empty() {
                return Err(Error::Parse {
                    path: paths.tweets.clone(),
                    line: i + 1,
                    msg: "empty tweet id".into(),
                });
            }
        }
        let retweets = read_jsonl(&paths.retweets)?;
        let lines: Vec<UserLine> = read_jsonl(&paths.users)?;
        let mut users = BTreeMap::new();
        for (i, line) in lines.into_iter().enumerate() {
            let f = parse_features(&line.features).map_err(|msg| Error::Parse {
                path: paths.users.clone(),
                line: i + 1,
                msg,
            })?;
            users.insert(line.user_id, f);
        }
        Ok(RawCorpus {
            tweets,
            retweets,
            users,
        })
    }

    pub fn write(&self, paths: &CorpusPaths) -> Result<()> {
        write_jsonl(&paths.tweets, &self.tweets)?;
        write_jsonl(&paths.retweets, &self.retweets)?;
        let lines: Vec<UserLine> = self
            .users
            .iter()
            .map(|(id, f)| UserLine {
                user_id: id.clone(),
                features: features_to_json(f),
            })
            .collect();
        write_jsonl(&paths.users, &lines)
    }
}

fn parse_features(map: &BTreeMap<String, Value>) -> std::result::Result<UserFeatures, String> {
    let mut out = UserFeatures::missing();
    for (name, value) in map {
        let Some(k) = feature_index(name) else { continue };
        let v = match value {
            Value::Null => continue,
            Value::Bool(b) => f64::from(u8::from(*b)),
            Value::Number(n) => n.as_f64().ok_or_else(|| format!("{name}: not a number"))?,
            other => return Err(format!("{name}: expected number, got {other}")),
        };
        match feature_kind(k) {
            FeatureKind::Binary if v != 0.0 && v != 1.0 => {
                return Err(format!("{name}: binary feature must be 0 or 1, got {v}"));
            }
            FeatureKind::Count if v < 0.0 || v.fract() != 0.0 || !v.is_finite() => {
                return Err(format!("{name}: count must be a non-negative integer, got {v}"));
            }
            _ => {}
        }
        out.values[k] = Some(v);
    }
    Ok(out)
}

fn features_to_json(f: &UserFeatures) -> BTreeMap<String, Value> {
    FEATURES
        .iter()
        .zip(&f.values)
        .map(|((name, _), v)| {
            let value = match v {
                None => Value::Null,
                Some(x) if x.fract() == 0.0 && x.abs() < 9.0e15 => Value::from(*x as i64),
                Some(x) => Value::from(*x),
            };
            (name.to_string(), value)
        })
        .collect()
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn user_feature_validation() {
        let mut m = BTreeMap::new();
        m.insert("user_verified".to_string(), Value::from(2));
        assert!(parse_features(&m).is_err());
        m.insert("user_verified".to_string(), Value::Bool(true));
        m.insert("user_followers_count".to_string(), Value::from(12));
        m.insert("some_other_field".to_string(), Value::from("x"));
        let f = parse_features(&m).unwrap();
        assert_eq!(f.values[14], Some(1.0));
        assert_eq!(f.values[5], Some(12.0));
        assert_eq!(f.values[0], None);
        m.insert("user_listed_count".to_string(), Value::from(-1));
        assert!(parse_features(&m).is_err());
    }

    #[test]
    fn unknown_keys_ignored_and_labels_strict() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.jsonl");
        fs::write(&p, "{\"id\":\"1\",\"text\":\"x\",\"label\":\"fake\",\"extra\":3}\n").unwrap();
        let t: Vec<SourceTweet> = read_jsonl(&p).unwrap();
        assert_eq!(t[0].label, crate::data::schema::Label::Fake);
        fs::write(&p, "\n{\"id\":\"1\",\"text\":\"x\",\"label\":\"False\"}\n").unwrap();
        let err = read_jsonl::<SourceTweet>(&p).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }
}
