//! Write a corpus in the three-file JSONL layout, then drive the experiment
//! runner on it exactly as the `mvan` binary would.
//!
//! ```bash
//! cargo run --release --example corpus_files -- [output_dir]
//! ```

use std::path::PathBuf;

use mvan::data::{gen_synthetic, SyntheticConfig};
use mvan::experiment::{run, Command, ExperimentConfig, RunOptions};

fn main() -> mvan::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("mvan_corpus_files"));
    let data_dir = out.join("corpus");

    let corpus = gen_synthetic(
        &SyntheticConfig {
            n_examples: 200,
            embedding_dim: 16,
            ..SyntheticConfig::default()
        },
        11,
    )?;
    corpus.write(&data_dir)?;
    println!("wrote {} tweets to {}", corpus.raw.tweets.len(), data_dir.display());

    let config_text = format!(
        r#"
n_runs = 2
output_dir = {out:?}

[data]
dir = {data:?}

[model]
embeddings_path = {vectors:?}
head_hidden = 16

[model.text]
embedding_dim = 16
hidden_size = 8
attention_dim = 16

[model.graph]
hidden_dim = 8
output_dim = 16
heads = 2

[model.trainer]
batch_size = 32
learning_rate = 0.002
embedding_dropout = 0.7
hidden_dropout = 0.0
epochs = 30
min_epochs = 20
"#,
        out = out.display().to_string(),
        data = data_dir.display().to_string(),
        vectors = data_dir.join(mvan::data::EMBEDDINGS_FILE).display().to_string(),
    );
    let config = ExperimentConfig::resolve(Some(&config_text), &[], None)?;
    for command in [Command::Prepare, Command::Evaluate] {
        let outcome = run(command, &config, &RunOptions::default())?;
        println!("\n== {command} -> {}", outcome.output_dir.display());
        for f in &outcome.files {
            println!("  {}", f.display());
        }
        println!("{}", outcome.summary.trim_end());
    }
    Ok(())
}
