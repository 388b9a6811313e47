//! Train every model variant on the same splits and print mean test accuracy
//! with 95% intervals, one row per variant.
//!
//! ```bash
//! cargo run --release --example ablation -- [n_runs]
//! ```

use mvan::data::{gen_synthetic, prepare_splits, word2vec_text, AssembleOptions, SyntheticConfig};
use mvan::metrics::{aggregate_runs, CONFIDENCE_LEVELS};
use mvan::model::{ModelConfig, Variant};
use mvan::rng::SeedStream;
use mvan::train::{evaluate, train};

fn main() -> mvan::Result<()> {
    let n_runs: u64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(3);

    let corpus = gen_synthetic(
        &SyntheticConfig {
            n_examples: 400,
            embedding_dim: 16,
            ..SyntheticConfig::default()
        },
        0,
    )?;
    let vectors = std::env::temp_dir().join("mvan_ablation_vectors.txt");
    mvan::report::write_file(&vectors, &word2vec_text(&corpus.embeddings))?;
    let mut base = ModelConfig::compact();
    base.embeddings_path = Some(vectors);

    println!("{:<10} {:>18} {:>18}", "variant", "accuracy (95%)", "f1 (95%)");
    for variant in Variant::ALL {
        let mut reports = Vec::new();
        for run in 0..n_runs {
            let (train_set, test_set) =
                prepare_splits(&corpus.raw, &AssembleOptions::default(), 0.7, &SeedStream::new(run))?;
            let mut config = base.with_variant(variant);
            config.trainer.seed = run;
            let trained = train(&train_set, &config)?;
            reports.push(evaluate(&trained.model, &test_set)?.metrics);
        }
        if reports.len() < 2 {
            println!(
                "{:<10} {:>18.4} {:>18.4}",
                variant.display_name(),
                reports[0].accuracy,
                reports[0].f1
            );
            continue;
        }
        let agg = aggregate_runs(&reports, &CONFIDENCE_LEVELS)?;
        println!(
            "{:<10} {:>18} {:>18}",
            variant.display_name(),
            agg.accuracy.row(0.95).unwrap_or_default(),
            agg.f1.row(0.95).unwrap_or_default()
        );
    }
    Ok(())
}
