//! Dataset schema, ingestion and preprocessing.

pub mod dataset;
pub mod embeddings;
pub mod graph;
pub mod io;
pub mod schema;
pub mod synthetic;
pub mod text;

pub use dataset::{
    assemble, normalize_features, prepare_splits, split_dataset, AssembleOptions, Dataset, Example, NormStats,
};
pub use embeddings::{load_embeddings, EmbeddingTable};
pub use graph::{
    build_propagation_graph, impute_user_features, truncate_by_deadline, Adjacency, GraphBuilder, GraphNode,
    PropagationGraph,
};
pub use io::{CorpusPaths, RawCorpus};
pub use schema::{Label, RetweetRecord, SourceTweet, UserFeatures, FEATURES, NUM_FEATURES};
pub use synthetic::{gen_synthetic, word2vec_text, GroundTruth, SyntheticConfig, SyntheticCorpus, EMBEDDINGS_FILE};
pub use text::{build_vocab, encode_tweet, tokenize, Vocabulary};
