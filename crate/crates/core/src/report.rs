//! Report files: metrics JSON, aggregate and curve CSVs, explanation JSONL.
//!
//! Every float is written with six decimal places, so re-exporting identical
//! inputs produces identical bytes. JSON documents carry `schema_version`.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::ser::{CompactFormatter, Formatter, PrettyFormatter};

use crate::data::schema::FEATURES;
use crate::error::{Error, Result};
use crate::explain::{top_users, Explanation};
use crate::graph_encoder::edge_coefficients;
use crate::metrics::{metrics, MetricsReport, RunAggregate, CONFIDENCE_LEVELS};
use crate::model::PredictionOutput;
use crate::train::CurvePoint;

pub const SCHEMA_VERSION: u32 = 1;

pub const METRICS_FILE: &str = "metrics.json";
pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const EXPLANATIONS_FILE: &str = "explanations.jsonl";
pub const CURVE_FILE: &str = "early_detection.csv";
pub const TOP_USERS_FILE: &str = "top_users.csv";
pub const EDGE_FILE: &str = "edge_attention.csv";
pub const WORD_WEIGHTS_FILE: &str = "word_weights.json";
pub const ABLATION_FILE: &str = "ablation.csv";

/// Wraps a serde_json formatter so floats print as `{:.6}`.
struct SixDigits<F>(F);

macro_rules! delegate {
    ($($name:ident($($arg:ident: $ty:ty),*)),* $(,)?) => {
        $(
            fn $name<W: ?Sized + io::Write>(&mut self, w: &mut W $(, $arg: $ty)*) -> io::Result<()> {
                self.0.$name(w $(, $arg)*)
            }
        )*
    };
}

impl<F: Formatter> Formatter for SixDigits<F> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.6}")
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        write!(w, "{value:.6}")
    }

    delegate!(
        begin_array(),
        end_array(),
        begin_array_value(first: bool),
        end_array_value(),
        begin_object(),
        end_object(),
        begin_object_key(first: bool),
        end_object_key(),
        begin_object_value(),
        end_object_value(),
    );
}

/// Indented JSON with six-decimal floats and a trailing newline.
pub fn to_json_pretty<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SixDigits(PrettyFormatter::new()));
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
}

/// Single-line JSON with six-decimal floats.
pub fn to_json_line<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SixDigits(CompactFormatter));
    value.serialize(&mut ser)?;
    Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

#[derive(Serialize, Deserialize)]
struct MetricsDoc {
    schema_version: u32,
    #[serde(flatten)]
    report: MetricsReport,
}

pub fn metrics_json(report: &MetricsReport) -> Result<String> {
    to_json_pretty(&MetricsDoc {
        schema_version: SCHEMA_VERSION,
        report: *report,
    })
}

/// Reads a metrics file. The ratios are recomputed from the stored confusion
/// counts, so the result equals the report that was written.
pub fn read_metrics_json(path: &Path) -> Result<MetricsReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: MetricsDoc = serde_json::from_str(&text)?;
    if doc.schema_version != SCHEMA_VERSION {
        return Err(Error::Data(format!(
            "{}: unsupported schema version {}",
            path.display(),
            doc.schema_version
        )));
    }
    let report = metrics(&doc.report.confusion)?;
    let close = report
        .values()
        .iter()
        .zip(doc.report.values())
        .all(|(a, b)| (a - b).abs() <= 5e-7);
    if !close || report.n_examples != doc.report.n_examples {
        return Err(Error::Data(format!(
            "{}: ratios disagree with confusion counts",
            path.display()
        )));
    }
    Ok(report)
}

/// `metric,n_runs,mean,std,ci90,ci95,ci98`, one row per metric.
pub fn aggregate_csv(agg: &RunAggregate) -> String {
    let mut out = String::from("metric,n_runs,mean,std");
    for c in CONFIDENCE_LEVELS {
        out.push_str(&format!(",ci{:.0}", c * 100.0));
    }
    out.push('\n');
    for (name, s) in agg.summaries() {
        out.push_str(&format!("{name},{},{:.6},{:.6}", agg.n_runs, s.mean, s.std));
        for c in CONFIDENCE_LEVELS {
            out.push_str(&format!(",{:.6}", s.half_width(c).unwrap_or(f64::NAN)));
        }
        out.push('\n');
    }
    out
}

/// One JSON object per line; no explanations gives an empty file.
pub fn explanations_jsonl(explanations: &[Explanation]) -> Result<String> {
    let mut out = String::new();
    for e in explanations {
        out.push_str(&to_json_line(e)?);
        out.push('\n');
    }
    Ok(out)
}

/// `fraction,accuracy` with fractions ascending.
pub fn curve_csv(points: &[CurvePoint]) -> String {
    let mut sorted: Vec<&CurvePoint> = points.iter().collect();
    sorted.sort_by(|a, b| a.fraction.total_cmp(&b.fraction));
    let mut out = String::from("fraction,accuracy\n");
    for p in sorted {
        out.push_str(&format!("{:.6},{:.6}\n", p.fraction, p.metrics.accuracy));
    }
    out
}

/// The `k` highest-scoring retweeters of each explanation with their raw
/// profile features.
pub fn top_users_csv(explanations: &[Explanation], k: usize) -> String {
    let mut out = String::from("tweet_id,label,predicted,rank,user_id,order,score");
    for (name, _) in FEATURES {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for e in explanations {
        for r in top_users(e, k) {
            out.push_str(&format!(
                "{},{},{},{},{},{},{:.6}",
                e.tweet_id, e.label, e.predicted, r.rank, r.user.user_id, r.user.order, r.user.score
            ));
            for v in &r.user.features {
                out.push_str(&format!(",{v:.6}"));
            }
            out.push('\n');
        }
    }
    out
}

/// Every graph attention coefficient: `src_user` is the attended neighbour,
/// `dst_user` the node whose softmax the coefficient belongs to.
pub fn edge_attention_csv(predictions: &[PredictionOutput]) -> String {
    let mut out = String::from("tweet_id,layer,head,src_user,dst_user,coeff\n");
    for p in predictions {
        let Some(summary) = &p.attention else { continue };
        let ids: Vec<&str> = p.explanation.users.iter().map(|u| u.user_id.as_str()).collect();
        for c in edge_coefficients(summary) {
            out.push_str(&format!(
                "{},{},{},{},{},{:.6}\n",
                p.tweet_id, c.layer, c.head, ids[c.neighbor], ids[c.node], c.coefficient
            ));
        }
    }
    out
}

/// Per-variant multi-run summary in long form. Single-run variants leave the
/// spread columns empty.
pub fn ablation_csv(rows: &[(String, Vec<MetricsReport>, Option<RunAggregate>)]) -> String {
    let mut out = String::from("variant,metric,n_runs,mean,std,ci90,ci95,ci98\n");
    for (variant, reports, agg) in rows {
        for (i, name) in crate::metrics::METRIC_NAMES.iter().enumerate() {
            match agg {
                Some(a) => {
                    let s = a.summaries()[i].1;
                    out.push_str(&format!("{variant},{name},{},{:.6},{:.6}", a.n_runs, s.mean, s.std));
                    for c in CONFIDENCE_LEVELS {
                        out.push_str(&format!(",{:.6}", s.half_width(c).unwrap_or(f64::NAN)));
                    }
                    out.push('\n');
                }
                None => {
                    let mean = reports.iter().map(|r| r.values()[i]).sum::<f64>() / reports.len() as f64;
                    out.push_str(&format!("{variant},{name},{},{mean:.6},,,,\n", reports.len()));
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{aggregate_runs, Confusion};

    fn report(tp: usize, tn: usize, fp: usize, fn_: usize) -> MetricsReport {
        metrics(&Confusion { tp, tn, fp, fn_ }).unwrap()
    }

    #[test]
    fn floats_have_six_decimals() {
        let s = to_json_line(&serde_json::json!({"a": 1.0, "b": [0.1234567, -2.5], "n": 3})).unwrap();
        assert_eq!(s, r#"{"a":1.000000,"b":[0.123457,-2.500000],"n":3}"#);
        assert_eq!(to_json_line(&f64::NAN).unwrap(), "null");
    }

    #[test]
    fn metrics_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(METRICS_FILE);
        let r = report(9, 8, 1, 2);
        write_file(&path, &metrics_json(&r).unwrap()).unwrap();
        assert_eq!(read_metrics_json(&path).unwrap(), r);
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"schema_version\": 1"));
        assert!(text.contains("\"recall\": 0.818182"));
    }

    #[test]
    fn tampered_metrics_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(METRICS_FILE);
        let text = metrics_json(&report(1, 1, 1, 1))
            .unwrap()
            .replace("\"accuracy\": 0.500000", "\"accuracy\": 0.9");
        write_file(&path, &text).unwrap();
        assert!(read_metrics_json(&path).is_err());
    }

    #[test]
    fn empty_explanations_give_empty_file() {
        assert_eq!(explanations_jsonl(&[]).unwrap(), "");
    }

    #[test]
    fn curve_sorted_with_header() {
        let m = report(1, 1, 0, 0);
        let pts = vec![
            CurvePoint {
                fraction: 1.0,
                metrics: m,
            },
            CurvePoint {
                fraction: 0.1,
                metrics: m,
            },
        ];
        assert_eq!(
            curve_csv(&pts),
            "fraction,accuracy\n0.100000,1.000000\n1.000000,1.000000\n"
        );
    }

    #[test]
    fn aggregate_layout() {
        let agg = aggregate_runs(&[report(1, 1, 0, 0), report(1, 1, 1, 1)], &CONFIDENCE_LEVELS).unwrap();
        let csv = aggregate_csv(&agg);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "metric,n_runs,mean,std,ci90,ci95,ci98");
        assert!(lines[1].starts_with("accuracy,2,0.750000,0.353553,"));
        assert_eq!(lines.len(), 5);
    }
}
