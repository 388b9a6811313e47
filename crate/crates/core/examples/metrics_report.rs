//! Metrics from hand-made predictions: the confusion matrix, the four
//! ratios, a multi-run summary with Student-t intervals and the report files.
//!
//! ```bash
//! cargo run --example metrics_report
//! ```

use mvan::data::Label::{Fake, True};
use mvan::metrics::{aggregate_runs, confusion, metrics, CONFIDENCE_LEVELS};
use mvan::report::{aggregate_csv, metrics_json};

fn main() -> mvan::Result<()> {
    let actual = [Fake, Fake, Fake, True, True, True, Fake, True, Fake, True];
    let runs = [
        [Fake, Fake, True, True, True, True, Fake, True, Fake, True],
        [Fake, Fake, Fake, True, Fake, True, Fake, True, Fake, True],
        [Fake, True, True, True, True, Fake, Fake, True, Fake, True],
    ];

    let mut reports = Vec::new();
    for (i, predicted) in runs.iter().enumerate() {
        let c = confusion(predicted, &actual)?;
        let m = metrics(&c)?;
        println!(
            "run {i}: tp {} tn {} fp {} fn {}  accuracy {:.3} precision {:.3} recall {:.3} f1 {:.3}",
            c.tp, c.tn, c.fp, c.fn_, m.accuracy, m.precision, m.recall, m.f1
        );
        reports.push(m);
    }

    let agg = aggregate_runs(&reports, &CONFIDENCE_LEVELS)?;
    println!();
    for (name, s) in agg.summaries() {
        let rows: Vec<String> = CONFIDENCE_LEVELS
            .iter()
            .map(|&c| format!("{:.0}%: {}", c * 100.0, s.row(c).unwrap_or_default()))
            .collect();
        println!("{name:<10} {}", rows.join("   "));
    }

    println!("\nmetrics.json for run 0:\n{}", metrics_json(&reports[0])?);
    print!("aggregate.csv:\n{}", aggregate_csv(&agg));
    Ok(())
}
