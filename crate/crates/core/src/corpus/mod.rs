//! Unified question-answering data model, its JSON file format and
//! converters from external dataset formats.
//!
//! Every task is expressed as [`QASetting`]s: a question, zero or more
//! support documents, optional answer candidates and gold [`Answer`]s.
//! Extractive answers carry a half-open character [`Span`] into one support
//! document.

mod convert;
mod jtr;
mod triples;

pub(crate) use convert::read_triples_into;
pub use convert::{
    convert_snli, convert_squad, convert_triples, parse_known_triples, question_to_triple,
    triples_to_dataset, ConvertStats, NLI_LABELS, SEP,
};
pub use jtr::{load_jtr, to_jtr_string};
pub use triples::{Triple, TripleStore};

/// Half-open character interval `[start, end)` in support document `doc`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Span {
    pub doc: usize,
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(doc: usize, start: usize, end: usize) -> Self {
        Self { doc, start, end }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Answer {
    pub text: String,
    pub span: Option<Span>,
}

impl Answer {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            span: None,
        }
    }

    pub fn with_span(text: impl Into<String>, span: Span) -> Self {
        Self {
            text: text.into(),
            span: Some(span),
        }
    }
}

/// One question with its evidence, optional candidates and gold answers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QASetting {
    pub question: String,
    pub support: Vec<String>,
    pub candidates: Option<Vec<String>>,
    /// Empty at inference time.
    pub answers: Vec<Answer>,
}

impl QASetting {
    pub fn new(question: impl Into<String>, support: Vec<String>) -> Self {
        Self {
            question: question.into(),
            support,
            candidates: None,
            answers: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Dataset {
    pub instances: Vec<QASetting>,
    pub meta: String,
    /// Candidates shared by every instance that has none of its own.
    pub global_candidates: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(meta: impl Into<String>, instances: Vec<QASetting>) -> Self {
        Self {
            instances,
            meta: meta.into(),
            global_candidates: None,
        }
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Per-instance candidates, falling back to the global list.
    pub fn candidates_for(&self, index: usize) -> Option<&[String]> {
        self.instances[index]
            .candidates
            .as_deref()
            .or(self.global_candidates.as_deref())
    }

    /// Copy holding only the instances at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            instances: indices.iter().map(|&i| self.instances[i].clone()).collect(),
            meta: self.meta.clone(),
            global_candidates: self.global_candidates.clone(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("malformed document: {0}")]
    MalformedDocument(String),
    #[error("instance {instance}, answer {answer}: span out of bounds: {reason}")]
    SpanOutOfBounds {
        instance: usize,
        answer: usize,
        reason: String,
    },
    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("unknown {kind} {name:?}")]
    UnknownSymbol { kind: &'static str, name: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Number of characters (Unicode scalar values) in `s`.
pub fn char_len(s: &str) -> usize {
    s.chars().count()
}

/// Characters `[start, end)` of `s`, or `None` when out of range.
pub fn char_slice(s: &str, start: usize, end: usize) -> Option<&str> {
    if start > end {
        return None;
    }
    let mut indices = s
        .char_indices()
        .map(|(b, _)| b)
        .chain(std::iter::once(s.len()));
    let from = indices.nth(start)?;
    let to = if end == start {
        from
    } else {
        indices.nth(end - start - 1)?
    };
    Some(&s[from..to])
}

/// Checks a span against the support it points into.
pub(crate) fn check_span(setting: &QASetting, answer: &Answer) -> Result<(), String> {
    let Some(span) = answer.span else {
        return Ok(());
    };
    let doc = setting.support.get(span.doc).ok_or_else(|| {
        format!(
            "doc index {} but only {} support documents",
            span.doc,
            setting.support.len()
        )
    })?;
    if span.start >= span.end {
        return Err(format!(
            "empty or reversed span [{}, {})",
            span.start, span.end
        ));
    }
    let slice = char_slice(doc, span.start, span.end)
        .ok_or_else(|| format!("end {} exceeds document length {}", span.end, char_len(doc)))?;
    if slice != answer.text {
        return Err(format!(
            "support text {slice:?} differs from answer {:?}",
            answer.text
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn char_slicing_counts_scalar_values() {
        assert_eq!(char_slice("héllo", 1, 3), Some("él"));
        assert_eq!(char_slice("abc", 3, 3), Some(""));
        assert_eq!(char_slice("abc", 0, 3), Some("abc"));
        assert_eq!(char_slice("abc", 2, 4), None);
        assert_eq!(char_slice("abc", 2, 1), None);
    }

    #[test]
    fn global_candidates_are_inherited() {
        let mut d = Dataset::new("m", vec![QASetting::new("q", vec![])]);
        assert!(d.candidates_for(0).is_none());
        d.global_candidates = Some(vec!["x".into()]);
        assert_eq!(d.candidates_for(0), Some(&["x".to_string()][..]));
        d.instances[0].candidates = Some(vec!["y".into()]);
        assert_eq!(d.candidates_for(0), Some(&["y".to_string()][..]));
    }

    #[test]
    fn span_checks() {
        let mut s = QASetting::new("q", vec!["hello world".into()]);
        s.answers
            .push(Answer::with_span("world", Span::new(0, 6, 11)));
        assert!(check_span(&s, &s.answers[0]).is_ok());
        for (doc, a, b) in [(0, 5, 11), (0, 6, 12), (0, 7, 11), (1, 6, 11), (0, 6, 6)] {
            let bad = Answer::with_span("world", Span::new(doc, a, b));
            assert!(check_span(&s, &bad).is_err(), "{doc} {a} {b}");
        }
    }
}
