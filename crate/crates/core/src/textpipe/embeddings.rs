use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{TextError, Vocab};
use crate::engine::Tensor;

/// Half-width of the uniform initialisation for rows without a vector.
pub const INIT_RANGE: f64 = 0.05;

/// Embedding table for `vocab` plus the fraction of rows copied from a file.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    pub table: Tensor,
    pub coverage: f64,
}

/// Table of `vocab.len() x dim` rows drawn from `uniform(-0.05, 0.05)`.
pub fn random_table(rows: usize, dim: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * dim)
        .map(|_| rng.gen_range(-INIT_RANGE..INIT_RANGE))
        .collect();
    Tensor::from_f64(vec![rows, dim], data).expect("sized above")
}

/// Parses `word v1 ... vd` lines. Words in `vocab` get their vectors; every
/// other row (including PAD and UNK) keeps its random initialisation.
pub fn parse_embeddings(
    text: &str,
    vocab: &Vocab,
    dim: usize,
    seed: u64,
) -> Result<Embeddings, TextError> {
    let mut table = random_table(vocab.len(), dim, seed);
    let data = table.as_f64_mut().expect("f64 table");
    let mut covered = vec![false; vocab.len()];
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let values = parts
            .map(str::parse::<f64>)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| TextError::MalformedLine {
                line: lineno,
                reason: e.to_string(),
            })?;
        if values.len() != dim {
            return Err(TextError::DimensionMismatch {
                line: lineno,
                expected: dim,
                found: values.len(),
            });
        }
        if !vocab.contains(word) {
            continue;
        }
        let id = vocab.id(word);
        if id < 2 || covered[id] {
            continue;
        }
        data[id * dim..(id + 1) * dim].copy_from_slice(&values);
        covered[id] = true;
    }
    let hits = covered.iter().filter(|&&c| c).count();
    Ok(Embeddings {
        table,
        coverage: if vocab.is_empty() {
            0.0
        } else {
            hits as f64 / vocab.len() as f64
        },
    })
}

pub fn load_embeddings(
    path: &Path,
    vocab: &Vocab,
    dim: usize,
    seed: u64,
) -> Result<Embeddings, TextError> {
    let text = std::fs::read_to_string(path)?;
    parse_embeddings(&text, vocab, dim, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textpipe::build_vocab;

    #[test]
    fn known_rows_are_copied() {
        let v = build_vocab(["a"], 1);
        let e = parse_embeddings("a 1.0 2.0\nzzz 3 4\n", &v, 2, 0).unwrap();
        assert_eq!(&e.table.as_f64().unwrap()[4..6], &[1.0, 2.0]);
        assert!((e.coverage - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_file_is_all_random() {
        let v = build_vocab(["a b"], 1);
        let e = parse_embeddings("", &v, 3, 5).unwrap();
        assert_eq!(e.coverage, 0.0);
        assert_eq!(e.table.shape(), &[4, 3]);
        assert!(e
            .table
            .as_f64()
            .unwrap()
            .iter()
            .all(|x| x.abs() < INIT_RANGE));
        assert_eq!(e.table, random_table(4, 3, 5));
    }

    #[test]
    fn inconsistent_dimension() {
        let v = build_vocab(["a b"], 1);
        match parse_embeddings("a 1 2\nb 1 2 3\n", &v, 2, 0) {
            Err(TextError::DimensionMismatch {
                line,
                expected,
                found,
            }) => assert_eq!((line, expected, found), (2, 2, 3)),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_embeddings("a 1 x\n", &v, 2, 0),
            Err(TextError::MalformedLine { line: 1, .. })
        ));
    }
}
