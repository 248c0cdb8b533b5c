use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{keys, tokenize, TextError, Token, Vocab, PAD_ID};
use crate::corpus::{Dataset, QASetting};
use crate::engine::Tensor;

/// Characters per word kept in the character-id ports.
pub const MAX_WORD_CHARS: usize = 16;
/// Character ids live in `1..CHAR_BUCKETS`; 0 is padding.
pub const CHAR_BUCKETS: usize = 256;

/// A support token tagged with the support document it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SupportToken {
    pub doc: usize,
    pub token: Token,
}

/// Tokens of one instance; all support documents are concatenated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoded {
    pub question: Vec<Token>,
    pub support: Vec<SupportToken>,
}

pub fn encode(setting: &QASetting) -> Encoded {
    let support = setting
        .support
        .iter()
        .enumerate()
        .flat_map(|(doc, text)| {
            tokenize(text)
                .into_iter()
                .map(move |token| SupportToken { doc, token })
        })
        .collect();
    Encoded {
        question: tokenize(&setting.question),
        support,
    }
}

/// Padded tensors for a group of instances.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub ports: BTreeMap<String, Tensor>,
    /// Dataset index of each row.
    pub instances: Vec<usize>,
    pub encoded: Vec<Encoded>,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.instances.len()
    }

    pub fn port(&self, name: &str) -> Result<&Tensor, TextError> {
        self.ports
            .get(name)
            .ok_or_else(|| TextError::MissingPort(name.to_string()))
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.ports.insert(name.into(), t);
    }
}

fn char_id(c: char) -> i64 {
    1 + (c as u32 as usize % (CHAR_BUCKETS - 1)) as i64
}

fn pad_ports<'a>(
    ports: &mut BTreeMap<String, Tensor>,
    name: &str,
    rows: impl Iterator<Item = Vec<&'a str>>,
    vocab: &Vocab,
) {
    let rows: Vec<Vec<&str>> = rows.collect();
    let b = rows.len();
    let max_len = rows.iter().map(Vec::len).max().unwrap_or(0);
    let word_len = rows
        .iter()
        .flatten()
        .map(|w| w.chars().count().min(MAX_WORD_CHARS))
        .max()
        .unwrap_or(0)
        .max(1);
    let mut ids = vec![PAD_ID as i64; b * max_len];
    let mut mask = vec![0.0; b * max_len];
    let mut chars = vec![0i64; b * max_len * word_len];
    let mut lengths = Vec::with_capacity(b);
    for (i, row) in rows.iter().enumerate() {
        lengths.push(row.len() as i64);
        for (j, w) in row.iter().enumerate() {
            ids[i * max_len + j] = vocab.id(w) as i64;
            mask[i * max_len + j] = 1.0;
            for (k, c) in w.chars().take(word_len).enumerate() {
                chars[(i * max_len + j) * word_len + k] = char_id(c);
            }
        }
    }
    let t = |shape: Vec<usize>, v: Vec<i64>| Tensor::from_i64(shape, v).expect("sized above");
    ports.insert(name.to_string(), t(vec![b, max_len], ids));
    ports.insert(keys::length(name), t(vec![b], lengths));
    ports.insert(
        keys::mask(name),
        Tensor::from_f64(vec![b, max_len], mask).expect("sized above"),
    );
    ports.insert(keys::chars(name), t(vec![b, max_len, word_len], chars));
}

/// Builds the question/support ports for the given dataset rows.
pub fn batch_of(encoded: Vec<Encoded>, instances: Vec<usize>, vocab: &Vocab) -> Batch {
    let mut ports = BTreeMap::new();
    pad_ports(
        &mut ports,
        keys::QUESTION,
        encoded
            .iter()
            .map(|e| e.question.iter().map(|t| t.text.as_str()).collect()),
        vocab,
    );
    pad_ports(
        &mut ports,
        keys::SUPPORT,
        encoded
            .iter()
            .map(|e| e.support.iter().map(|t| t.token.text.as_str()).collect()),
        vocab,
    );
    Batch {
        ports,
        instances,
        encoded,
    }
}

/// Iterator over padded batches of a dataset.
pub struct Batches<'a> {
    dataset: &'a Dataset,
    vocab: &'a Vocab,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl Iterator for Batches<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let instances = self.order[self.pos..end].to_vec();
        self.pos = end;
        let encoded = instances
            .iter()
            .map(|&i| encode(&self.dataset.instances[i]))
            .collect();
        Some(batch_of(encoded, instances, self.vocab))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = (self.order.len() - self.pos).div_ceil(self.batch_size);
        (n, Some(n))
    }
}

impl ExactSizeIterator for Batches<'_> {}

/// Batches in dataset order, or in a seed-determined permutation. The last
/// batch may be short.
pub fn make_batches<'a>(
    dataset: &'a Dataset,
    vocab: &'a Vocab,
    batch_size: usize,
    shuffle_seed: Option<u64>,
) -> Result<Batches<'a>, TextError> {
    if !vocab.is_frozen() {
        return Err(TextError::VocabNotFrozen);
    }
    if dataset.is_empty() {
        return Err(TextError::EmptyDataset);
    }
    if batch_size == 0 {
        return Err(TextError::InvalidBatchSize);
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    Ok(Batches {
        dataset,
        vocab,
        order,
        batch_size,
        pos: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textpipe::build_vocab;
    use proptest::prelude::*;

    fn dataset(supports: &[&str]) -> Dataset {
        Dataset::new(
            "t",
            supports
                .iter()
                .map(|s| QASetting::new("what is it", vec![s.to_string()]))
                .collect(),
        )
    }

    #[test]
    fn batch_sizes() {
        let d = dataset(&["a"; 5]);
        let v = build_vocab(["a"], 1);
        let sizes: Vec<usize> = make_batches(&d, &v, 2, None)
            .unwrap()
            .map(|b| b.size())
            .collect();
        assert_eq!(sizes, vec![2, 2, 1]);
    }

    #[test]
    fn padding_and_masks() {
        let d = dataset(&["a b c", "a b c d e f g"]);
        let v = build_vocab(["a b c d e f g"], 1);
        let b = make_batches(&d, &v, 2, None).unwrap().next().unwrap();
        let support = b.port(keys::SUPPORT).unwrap();
        assert_eq!(support.shape(), &[2, 7]);
        let mask = b
            .port(&keys::mask(keys::SUPPORT))
            .unwrap()
            .as_f64()
            .unwrap();
        assert_eq!(mask[..7].iter().filter(|&&m| m == 0.0).count(), 4);
        assert_eq!(&support.as_i64().unwrap()[3..7], &[0, 0, 0, 0]);
        assert_eq!(
            b.port(&keys::length(keys::SUPPORT))
                .unwrap()
                .as_i64()
                .unwrap(),
            &[3, 7]
        );
    }

    #[test]
    fn seeded_order_is_reproducible() {
        let d = dataset(&["a", "b", "c", "d", "e", "f", "g"]);
        let v = build_vocab(["a b c d e f g"], 1);
        let run = |seed| {
            make_batches(&d, &v, 3, Some(seed))
                .unwrap()
                .collect::<Vec<_>>()
        };
        assert_eq!(run(7), run(7));
        assert_ne!(
            run(7)
                .iter()
                .flat_map(|b| b.instances.clone())
                .collect::<Vec<_>>(),
            run(8)
                .iter()
                .flat_map(|b| b.instances.clone())
                .collect::<Vec<_>>()
        );
    }

    #[test]
    fn errors() {
        let v = build_vocab(["a"], 1);
        assert!(matches!(
            make_batches(&Dataset::default(), &v, 2, None),
            Err(TextError::EmptyDataset)
        ));
        let mut open = Vocab::new(false);
        open.add("a");
        assert!(matches!(
            make_batches(&dataset(&["a"]), &open, 2, None),
            Err(TextError::VocabNotFrozen)
        ));
    }

    #[test]
    fn multiple_support_documents_are_concatenated() {
        let mut s = QASetting::new("q", vec!["a b".into(), "c".into()]);
        s.answers.clear();
        let e = encode(&s);
        let docs: Vec<usize> = e.support.iter().map(|t| t.doc).collect();
        assert_eq!(docs, vec![0, 0, 1]);
        assert_eq!(e.support[2].token.start, 0);
    }

    proptest! {
        #[test]
        fn batches_partition_the_dataset(n in 1usize..30, bs in 1usize..8, seed in prop::option::of(any::<u64>())) {
            let texts: Vec<String> = (0..n).map(|i| format!("w{i}")).collect();
            let d = Dataset::new("t", texts.iter().map(|t| QASetting::new(t.clone(), vec![])).collect());
            let v = build_vocab(texts.iter(), 1);
            let mut seen: Vec<usize> = make_batches(&d, &v, bs, seed).unwrap().flat_map(|b| b.instances).collect();
            seen.sort();
            prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
        }
    }
}
