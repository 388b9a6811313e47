//! Word-vector tables, optionally seeded from a word2vec text file.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;

use crate::data::text::{Vocabulary, PAD_INDEX};
use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::tensor::Tensor;

pub const DEFAULT_EMBEDDING_DIM: usize = 300;
pub const INIT_RANGE: f64 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub matrix: Tensor,
    pub trainable: bool,
}

impl EmbeddingTable {
    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    /// Uniform `[-0.05, 0.05]` rows with a zero padding row.
    pub fn random(vocab_len: usize, dim: usize, rng: &mut StreamRng) -> Self {
        let mut data: Vec<f64> = (0..vocab_len * dim)
            .map(|_| rng.random_range(-INIT_RANGE..=INIT_RANGE))
            .collect();
        data[PAD_INDEX * dim..(PAD_INDEX + 1) * dim].fill(0.0);
        EmbeddingTable {
            matrix: Tensor::matrix(vocab_len, dim, data).expect("vocabulary and dim are positive"),
            trainable: true,
        }
    }
}

/// Reads vectors for the vocabulary's tokens from a word2vec text file (an
/// optional `count dim` header line, then `token v1 .. v_dim` per line).
/// Tokens absent from the file, or every row when `path` is `None`, get random
/// rows; the padding row is always zero.
pub fn load_embeddings(
    path: Option<&Path>,
    vocab: &Vocabulary,
    dim: usize,
    rng: &mut StreamRng,
) -> Result<EmbeddingTable> {
    if dim == 0 {
        return Err(Error::InvalidArgument("embedding dim must be positive".into()));
    }
    let mut table = EmbeddingTable::random(vocab.len(), dim, rng);
    let Some(path) = path else {
        return Ok(table);
    };
    let vectors = read_word2vec(path, dim, |tok| vocab.index_of(tok).is_some())?;
    for (tok, vec) in vectors {
        let i = vocab.index_of(&tok).expect("filtered to vocabulary tokens");
        if i == PAD_INDEX {
            continue;
        }
        table.matrix.data_mut()[i * dim..(i + 1) * dim].copy_from_slice(&vec);
    }
    Ok(table)
}

fn read_word2vec(path: &Path, dim: usize, wanted: impl Fn(&str) -> bool) -> Result<HashMap<String, Vec<f64>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut out = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if lineno == 1 && fields.len() == 2 && fields.iter().all(|f| f.parse::<usize>().is_ok()) {
            let file_dim: usize = fields[1].parse().unwrap();
            if file_dim != dim {
                return Err(parse_err(lineno, format!("file has dim {file_dim}, expected {dim}")));
            }
            continue;
        }
        if fields.len() != dim + 1 {
            return Err(parse_err(
                lineno,
                format!("expected token and {dim} values, got {} fields", fields.len()),
            ));
        }
        let values: std::result::Result<Vec<f64>, _> = fields[1..].iter().map(|f| f.parse::<f64>()).collect();
        let values = values.map_err(|e| parse_err(lineno, format!("bad number: {e}")))?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(parse_err(lineno, "non-finite value".into()));
        }
        if wanted(fields[0]) {
            out.insert(fields[0].to_string(), values);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::text::{PAD_TOKEN, UNK_TOKEN};
    use crate::rng::SeedStream;
    use std::io::Write;

    fn vocab() -> Vocabulary {
        Vocabulary::from_tokens(
            [PAD_TOKEN, UNK_TOKEN, "hello", "world"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        )
    }

    fn file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn file_vectors_pass_through() {
        let f = file("3 2\nhello 0.5 -1.5\n<pad> 9 9\nunused 1 1\n");
        let mut rng = SeedStream::new(1).rng();
        let t = load_embeddings(Some(f.path()), &vocab(), 2, &mut rng).unwrap();
        assert_eq!(t.matrix.row_slice(2), &[0.5, -1.5]);
        assert_eq!(t.matrix.row_slice(0), &[0.0, 0.0]);
        assert!(t.matrix.row_slice(3).iter().all(|v| v.abs() <= INIT_RANGE));
    }

    #[test]
    fn no_file_means_random_rows() {
        let mut rng = SeedStream::new(1).rng();
        let t = load_embeddings(None, &vocab(), 8, &mut rng).unwrap();
        assert!(t.matrix.row_slice(0).iter().all(|&v| v == 0.0));
        for r in 1..4 {
            assert!(t.matrix.row_slice(r).iter().all(|v| v.abs() <= INIT_RANGE));
            assert!(t.matrix.row_slice(r).iter().any(|&v| v != 0.0));
        }
    }

    #[test]
    fn malformed_lines_report_line_number() {
        let f = file("hello 0.5 -1.5\nworld 0.1\n");
        let mut rng = SeedStream::new(1).rng();
        let err = load_embeddings(Some(f.path()), &vocab(), 2, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");

        let f = file("hello 0.5 abc\n");
        let err = load_embeddings(Some(f.path()), &vocab(), 2, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn header_dim_mismatch() {
        let f = file("2 3\nhello 1 2 3\n");
        let mut rng = SeedStream::new(1).rng();
        let err = load_embeddings(Some(f.path()), &vocab(), 2, &mut rng).unwrap_err();
        assert!(err.to_string().contains("dim 3"), "{err}");
    }
}
