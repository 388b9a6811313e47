//! Multi-view attention networks for fake news detection.
//!
//! A source tweet is encoded by a stacked bidirectional GRU with additive word
//! attention; the users who retweeted it are encoded by masked multi-head graph
//! attention over the propagation graph. The two vectors are concatenated and
//! classified by a small feed-forward head. Both attention mechanisms double as
//! explanations: word weights point at clue words, received attention points at
//! influential retweeters.
//!
//! Everything numeric is built on [`autodiff::Tape`], a small reverse-mode
//! differentiation tape over dense `f64` tensors.
//!
//! The runnable programs in `examples/` walk through each capability:
//!
//! ```bash
//! cargo run --release --example gradient_check
//! cargo run --release --example train_synthetic
//! cargo run --release --example ablation
//! cargo run --release --example early_detection
//! cargo run --release --example explain
//! cargo run --release --example corpus_files
//! cargo run --release --example metrics_report
//! ```

#![allow(clippy::needless_range_loop)]

pub mod autodiff;
pub mod data;
pub mod error;
pub mod experiment;
pub mod explain;
pub mod gradcheck;
pub mod graph_encoder;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod optim;
pub mod oracle;
pub mod params;
pub mod report;
pub mod rng;
pub mod selfcheck;
pub mod tensor;
pub mod text_encoder;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
