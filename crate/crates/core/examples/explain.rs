//! Word and retweeter explanations for a trained model: the heaviest word of
//! a few fake tweets, the most-attended retweeters, the word-weight histogram
//! per class and the tokens with the highest mean weight.
//!
//! ```bash
//! cargo run --release --example explain
//! ```

use mvan::data::{gen_synthetic, prepare_splits, word2vec_text, AssembleOptions, Label, SyntheticConfig};
use mvan::explain::{token_weights, top_users, word_weight_distribution, Explanation};
use mvan::model::ModelConfig;
use mvan::rng::SeedStream;
use mvan::train::{evaluate, train};

fn main() -> mvan::Result<()> {
    let corpus = gen_synthetic(
        &SyntheticConfig {
            n_examples: 400,
            text_signal_strength: 0.8,
            graph_signal_strength: 0.8,
            embedding_dim: 16,
            ..SyntheticConfig::default()
        },
        5,
    )?;
    let truth = corpus.truth_by_id();
    let (train_set, test_set) = prepare_splits(&corpus.raw, &AssembleOptions::default(), 0.7, &SeedStream::new(5))?;
    let vectors = std::env::temp_dir().join("mvan_explain_vectors.txt");
    mvan::report::write_file(&vectors, &word2vec_text(&corpus.embeddings))?;
    let mut config = ModelConfig::compact();
    config.embeddings_path = Some(vectors);

    let trained = train(&train_set, &config)?;
    let eval = evaluate(&trained.model, &test_set)?;
    println!("test accuracy {:.4}\n", eval.metrics.accuracy);

    for p in eval.predictions.iter().filter(|p| p.label == Label::Fake).take(5) {
        let e = &p.explanation;
        let t = &truth[&p.tweet_id];
        let word = e
            .top_word()
            .map(|w| format!("{} ({:.3})", w.token, w.weight))
            .unwrap_or_default();
        println!("{} predicted {}: top word {word}", p.tweet_id, p.predicted);
        println!(
            "  text: {}",
            e.words.iter().map(|w| w.token.as_str()).collect::<Vec<_>>().join(" ")
        );
        for r in top_users(e, 3) {
            let planted = if t.planted_users.contains(&r.user.user_id) {
                "  [planted]"
            } else {
                ""
            };
            println!(
                "  #{} {} (retweet {}) score {:.3}{planted}",
                r.rank, r.user.user_id, r.user.order, r.user.score
            );
        }
    }

    let explanations: Vec<Explanation> = eval.predictions.iter().map(|p| p.explanation.clone()).collect();
    for class in [Label::Fake, Label::True] {
        let d = word_weight_distribution(&explanations, Some(class));
        let bars: Vec<String> = d.proportions.iter().map(|p| format!("{p:.2}")).collect();
        println!(
            "\n{class} tweets: mean word weight {:.3}, bins {}",
            d.mean_weight,
            bars.join(" ")
        );
        for t in token_weights(&explanations, Some(class), 3).iter().take(5) {
            println!("  {:<12} {:.3} over {} uses", t.token, t.mean_weight, t.count);
        }
    }
    Ok(())
}
