//! Input and output modules for the text tasks.

use std::collections::BTreeMap;

use crate::corpus::{char_slice, Dataset, Span, NLI_LABELS};
use crate::engine::Tensor;
use crate::framework::{
    ports, InputModule, OutputModule, Prediction, ReaderConfig, ReaderError, Task, TensorPort,
};
use crate::textpipe::{
    build_vocab_with, char_span_to_tokens, encode, make_batches, Batch, SupportToken, Vocab,
};

/// Longest predicted answer, in tokens.
pub const MAX_SPAN_TOKENS: usize = 16;

/// Tokenizes question and support and emits the id, length, mask and
/// character ports, plus gold labels or span positions for training.
#[derive(Debug, Clone)]
pub struct TextInput {
    task: Task,
    vocab: Option<Vocab>,
}

impl TextInput {
    pub fn new(task: Task) -> Self {
        Self { task, vocab: None }
    }
}

fn label_index(label: &str) -> Option<i64> {
    NLI_LABELS
        .iter()
        .position(|l| *l == label)
        .map(|i| i as i64)
}

/// Gold `(first, last)` support token positions of the first answer whose
/// span covers at least one token.
pub fn gold_token_span(
    setting: &crate::corpus::QASetting,
    support: &[SupportToken],
) -> Option<(usize, usize)> {
    for a in &setting.answers {
        let Some(span) = a.span else { continue };
        let offset = support.iter().position(|t| t.doc == span.doc)?;
        let doc_tokens: Vec<_> = support
            .iter()
            .filter(|t| t.doc == span.doc)
            .map(|t| t.token.clone())
            .collect();
        if let Some((first, last)) = char_span_to_tokens(&doc_tokens, span.start, span.end) {
            return Some((offset + first, offset + last));
        }
    }
    None
}

fn i64_port(values: Vec<i64>) -> Tensor {
    let n = values.len();
    Tensor::from_i64(vec![n], values).expect("sized above")
}

impl InputModule for TextInput {
    fn name(&self) -> &str {
        "text input"
    }

    fn output_ports(&self) -> Vec<TensorPort> {
        ports::text_inputs()
    }

    fn training_ports(&self) -> Vec<TensorPort> {
        match self.task {
            Task::Qa => vec![ports::answer_start(), ports::answer_end()],
            _ => vec![ports::label()],
        }
    }

    fn setup(&mut self, train: &Dataset, config: &ReaderConfig) -> Result<(), ReaderError> {
        let texts = train
            .instances
            .iter()
            .flat_map(|i| std::iter::once(&i.question).chain(&i.support));
        self.vocab = Some(build_vocab_with(texts, config.min_count, config.lowercase));
        Ok(())
    }

    fn vocab(&self) -> Option<&Vocab> {
        self.vocab.as_ref()
    }

    fn set_vocab(&mut self, vocab: Vocab) {
        self.vocab = Some(vocab);
    }

    fn batches(
        &self,
        data: &Dataset,
        batch_size: usize,
        shuffle_seed: Option<u64>,
        training: bool,
    ) -> Result<Vec<Batch>, ReaderError> {
        let vocab = self.vocab.as_ref().ok_or(ReaderError::NotSetup)?;
        if !training {
            return Ok(make_batches(data, vocab, batch_size, shuffle_seed)?.collect());
        }
        match self.task {
            Task::Qa => {
                let mut keep = Vec::new();
                let mut gold = Vec::new();
                for (i, inst) in data.instances.iter().enumerate() {
                    if let Some(g) = gold_token_span(inst, &encode(inst).support) {
                        keep.push(i);
                        gold.push(g);
                    }
                }
                if keep.is_empty() {
                    return Err(ReaderError::NoValidSpan);
                }
                let subset = data.subset(&keep);
                let mut out = Vec::new();
                for mut b in make_batches(&subset, vocab, batch_size, shuffle_seed)? {
                    let rows: Vec<(usize, usize)> = b.instances.iter().map(|&r| gold[r]).collect();
                    b.insert(
                        "answer_start",
                        i64_port(rows.iter().map(|g| g.0 as i64).collect()),
                    );
                    b.insert(
                        "answer_end",
                        i64_port(rows.iter().map(|g| g.1 as i64).collect()),
                    );
                    b.instances = b.instances.iter().map(|&r| keep[r]).collect();
                    out.push(b);
                }
                Ok(out)
            }
            _ => {
                let mut out = Vec::new();
                for mut b in make_batches(data, vocab, batch_size, shuffle_seed)? {
                    let mut labels = Vec::with_capacity(b.size());
                    for &r in &b.instances {
                        let inst = &data.instances[r];
                        let gold = inst.answers.first().map(|a| a.text.as_str()).unwrap_or("");
                        labels.push(label_index(gold).ok_or_else(|| {
                            ReaderError::Config(format!(
                                "instance {r}: label {gold:?} is not one of {}",
                                NLI_LABELS.join(", ")
                            ))
                        })?);
                    }
                    b.insert("label", i64_port(labels));
                    out.push(b);
                }
                Ok(out)
            }
        }
    }
}

fn row(t: &Tensor, r: usize) -> Result<&[f64], ReaderError> {
    let cols = t.shape().get(1).copied().unwrap_or(0);
    Ok(&t.as_f64()?[r * cols..(r + 1) * cols])
}

fn output<'o>(outputs: &'o BTreeMap<String, Tensor>, key: &str) -> Result<&'o Tensor, ReaderError> {
    outputs
        .get(key)
        .ok_or_else(|| ReaderError::Config(format!("model output {key} missing")))
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Softmax over the three logits; the answer is the most probable label.
#[derive(Debug, Clone, Default)]
pub struct NliOutput;

impl OutputModule for NliOutput {
    fn name(&self) -> &str {
        "nli output"
    }

    fn input_ports(&self) -> Vec<TensorPort> {
        vec![ports::logits()]
    }

    fn decode(
        &self,
        _data: &Dataset,
        batch: &Batch,
        outputs: &BTreeMap<String, Tensor>,
    ) -> Result<Vec<Prediction>, ReaderError> {
        let logits = output(outputs, "logits")?;
        (0..batch.size())
            .map(|r| {
                let probs = softmax(row(logits, r)?);
                let best = (0..probs.len()).fold(0, |b, i| if probs[i] > probs[b] { i } else { b });
                Ok(Prediction {
                    text: NLI_LABELS[best].to_string(),
                    score: probs[best],
                    span: None,
                    probabilities: NLI_LABELS
                        .iter()
                        .map(|l| l.to_string())
                        .zip(probs)
                        .collect(),
                })
            })
            .collect()
    }
}

/// Best `(first, last, score)` with `first <= last`, both in the same
/// document and at most `max_tokens` tokens long, maximising
/// `start[first] + end[last]`. Ties go to the earliest pair.
pub fn best_span(
    start: &[f64],
    end: &[f64],
    docs: &[usize],
    max_tokens: usize,
) -> Option<(usize, usize, f64)> {
    let n = docs.len().min(start.len()).min(end.len());
    let mut best: Option<(usize, usize, f64)> = None;
    for i in 0..n {
        for j in i..n.min(i + max_tokens) {
            if docs[j] != docs[i] {
                break;
            }
            let s = start[i] + end[j];
            if best.is_none_or(|b| s > b.2) {
                best = Some((i, j, s));
            }
        }
    }
    best
}

/// Decodes the best token span back to characters of its support document.
#[derive(Debug, Clone, Default)]
pub struct QaOutput;

impl OutputModule for QaOutput {
    fn name(&self) -> &str {
        "span output"
    }

    fn input_ports(&self) -> Vec<TensorPort> {
        vec![ports::start_scores(), ports::end_scores()]
    }

    fn decode(
        &self,
        data: &Dataset,
        batch: &Batch,
        outputs: &BTreeMap<String, Tensor>,
    ) -> Result<Vec<Prediction>, ReaderError> {
        let (start, end) = (
            output(outputs, "start_scores")?,
            output(outputs, "end_scores")?,
        );
        let mut out = Vec::with_capacity(batch.size());
        for (r, &inst) in batch.instances.iter().enumerate() {
            let support = &batch.encoded[r].support;
            let docs: Vec<usize> = support.iter().map(|t| t.doc).collect();
            let prediction = match best_span(row(start, r)?, row(end, r)?, &docs, MAX_SPAN_TOKENS) {
                Some((i, j, score)) => {
                    let doc = support[i].doc;
                    let (cs, ce) = (support[i].token.start, support[j].token.end);
                    let text = char_slice(&data.instances[inst].support[doc], cs, ce).unwrap_or("");
                    Prediction {
                        text: text.to_string(),
                        score,
                        span: Some(Span::new(doc, cs, ce)),
                        probabilities: Vec::new(),
                    }
                }
                None => Prediction {
                    text: String::new(),
                    score: f64::NEG_INFINITY,
                    span: None,
                    probabilities: Vec::new(),
                },
            };
            out.push(prediction);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Answer, QASetting};
    use crate::textpipe::tokenize;

    #[test]
    fn reversed_pairs_are_excluded() {
        let mut start = vec![0.0; 8];
        let mut end = vec![0.0; 8];
        start[5] = 10.0;
        end[3] = 10.0;
        end[6] = 1.0;
        let docs = vec![0; 8];
        let (i, j, _) = best_span(&start, &end, &docs, 16).unwrap();
        assert!(i <= j);
        assert_eq!((i, j), (5, 6));
    }

    #[test]
    fn width_and_document_limits() {
        let start = [5.0, 0.0, 0.0, 0.0];
        let end = [0.0, 1.0, 2.0, 5.0];
        assert_eq!(
            best_span(&start, &end, &[0, 0, 0, 0], 3).map(|b| (b.0, b.1)),
            Some((0, 2))
        );
        assert_eq!(
            best_span(&start, &end, &[0, 0, 1, 1], 16).map(|b| (b.0, b.1)),
            Some((0, 1))
        );
        assert_eq!(best_span(&[], &[], &[], 16), None);
    }

    #[test]
    fn gold_span_across_documents() {
        let mut s = QASetting::new("q", vec!["a b".into(), "c d e".into()]);
        s.answers.push(Answer::with_span("d e", Span::new(1, 2, 5)));
        assert_eq!(gold_token_span(&s, &encode(&s).support), Some((3, 4)));
        let t = tokenize("c d e");
        assert_eq!(char_span_to_tokens(&t, 2, 5), Some((1, 2)));
    }

    #[test]
    fn softmax_normalizes() {
        let p = softmax(&[1.0, 2.0, 3.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(p[2] > p[1] && p[1] > p[0]);
    }
}
