//! Generate a planted-signal corpus, train the full model on a 70/30 split
//! and report test metrics.
//!
//! ```bash
//! cargo run --release --example train_synthetic -- [n_examples] [epochs]
//! ```

use std::time::Instant;

use mvan::data::{gen_synthetic, prepare_splits, word2vec_text, AssembleOptions, SyntheticConfig};
use mvan::model::ModelConfig;
use mvan::rng::SeedStream;
use mvan::train::{evaluate, train};

fn main() -> mvan::Result<()> {
    let mut args = std::env::args().skip(1);
    let n_examples = args.next().and_then(|a| a.parse().ok()).unwrap_or(400);
    let epochs = args.next().and_then(|a| a.parse().ok()).unwrap_or(60);

    let corpus = gen_synthetic(
        &SyntheticConfig {
            n_examples,
            embedding_dim: 16,
            ..SyntheticConfig::default()
        },
        7,
    )?;
    let (train_set, test_set) = prepare_splits(&corpus.raw, &AssembleOptions::default(), 0.7, &SeedStream::new(7))?;

    // The generator also emits word vectors, standing in for pretrained ones.
    let vectors = std::env::temp_dir().join("mvan_train_synthetic_vectors.txt");
    mvan::report::write_file(&vectors, &word2vec_text(&corpus.embeddings))?;

    let mut config = ModelConfig::compact();
    config.embeddings_path = Some(vectors);
    config.trainer.epochs = epochs;

    let start = Instant::now();
    let trained = train(&train_set, &config)?;
    println!(
        "trained {} epochs on {} examples in {:.1}s",
        trained.history.len(),
        train_set.len(),
        start.elapsed().as_secs_f64()
    );
    for r in &trained.history {
        println!(
            "epoch {:3}  loss {:.4}  train_acc {:.3}  val_acc {}",
            r.epoch,
            r.train_loss,
            r.train_acc,
            r.val_acc.map_or("-".into(), |v| format!("{v:.3}"))
        );
    }
    let eval = evaluate(&trained.model, &test_set)?;
    let m = eval.metrics;
    println!(
        "test: accuracy {:.4}  precision {:.4}  recall {:.4}  f1 {:.4}  (n = {})",
        m.accuracy, m.precision, m.recall, m.f1, m.n_examples
    );
    Ok(())
}
