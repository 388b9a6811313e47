//! Accuracy when only the earliest retweets are visible at test time.
//!
//! The generator plants its graph signal in the first retweeters, so the
//! curve should stay nearly flat as the deadline moves earlier.
//!
//! ```bash
//! cargo run --release --example early_detection
//! ```

use mvan::data::{gen_synthetic, prepare_splits, word2vec_text, AssembleOptions, SyntheticConfig};
use mvan::model::ModelConfig;
use mvan::report::curve_csv;
use mvan::rng::SeedStream;
use mvan::train::{early_detection_schedule, TruncationMode};

fn main() -> mvan::Result<()> {
    let corpus = gen_synthetic(
        &SyntheticConfig {
            n_examples: 400,
            text_signal_strength: 0.5,
            graph_signal_strength: 0.8,
            embedding_dim: 16,
            ..SyntheticConfig::default()
        },
        3,
    )?;
    let (train_set, test_set) = prepare_splits(&corpus.raw, &AssembleOptions::default(), 0.7, &SeedStream::new(3))?;
    let vectors = std::env::temp_dir().join("mvan_early_detection_vectors.txt");
    mvan::report::write_file(&vectors, &word2vec_text(&corpus.embeddings))?;
    let mut config = ModelConfig::compact();
    config.embeddings_path = Some(vectors);

    let fractions = [1.0, 0.8, 0.6, 0.4, 0.2, 0.1];
    let curve = early_detection_schedule(&config, &train_set, &test_set, &fractions, TruncationMode::TestOnly)?;
    print!("{}", curve_csv(&curve));
    Ok(())
}
