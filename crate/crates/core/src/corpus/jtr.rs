//! JSON reading/writing of [`Dataset`]s.
//!
//! ```text
//! { "instances": [ { "questions": [ { "question": str,
//!                                     "answers": [ { "text": str, "span"?: [start, end] | [doc, start, end] } ],
//!                                     "candidates"?: [ { "text": str } ] } ],
//!                    "support": [ str ] } ],
//!   "meta": str,
//!   "globals"?: { "candidates": [ { "text": str } ] } }
//! ```
//!
//! Each (instance, question) pair becomes one [`QASetting`]. When writing,
//! consecutive settings with identical support are grouped back into one
//! instance, so files written here read back and re-serialize byte for byte.

use serde::{Deserialize, Serialize};

use super::{check_span, Answer, CorpusError, Dataset, QASetting, Span};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DocJson {
    instances: Vec<InstanceJson>,
    meta: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    globals: Option<GlobalsJson>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GlobalsJson {
    candidates: Vec<TextJson>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TextJson {
    text: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceJson {
    questions: Vec<QuestionJson>,
    #[serde(default)]
    support: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QuestionJson {
    question: String,
    #[serde(default)]
    answers: Vec<AnswerJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    candidates: Option<Vec<TextJson>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnswerJson {
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    span: Option<Vec<usize>>,
}

fn texts(v: Vec<TextJson>) -> Vec<String> {
    v.into_iter().map(|t| t.text).collect()
}

fn text_objects(v: &[String]) -> Vec<TextJson> {
    v.iter().map(|t| TextJson { text: t.clone() }).collect()
}

/// Parses and validates a JSON dataset document.
pub fn load_jtr(text: &str) -> Result<Dataset, CorpusError> {
    let doc: DocJson =
        serde_json::from_str(text).map_err(|e| CorpusError::MalformedDocument(e.to_string()))?;
    let global_candidates = doc.globals.map(|g| texts(g.candidates));
    let mut instances = Vec::new();
    for (ii, inst) in doc.instances.into_iter().enumerate() {
        if inst.questions.is_empty() {
            return Err(CorpusError::MalformedDocument(format!(
                "instance {ii} has no questions"
            )));
        }
        for q in inst.questions {
            let index = instances.len();
            let mut answers = Vec::with_capacity(q.answers.len());
            for (ai, a) in q.answers.into_iter().enumerate() {
                let span = match a.span.as_deref() {
                    None => None,
                    Some(&[start, end]) => Some(Span::new(0, start, end)),
                    Some(&[doc, start, end]) => Some(Span::new(doc, start, end)),
                    Some(other) => {
                        return Err(CorpusError::SpanOutOfBounds {
                            instance: index,
                            answer: ai,
                            reason: format!("span must have 2 or 3 entries, found {}", other.len()),
                        })
                    }
                };
                answers.push(Answer { text: a.text, span });
            }
            let setting = QASetting {
                question: q.question,
                support: inst.support.clone(),
                candidates: q.candidates.map(texts),
                answers,
            };
            validate_setting(&setting, index, global_candidates.as_deref())?;
            instances.push(setting);
        }
    }
    Ok(Dataset {
        instances,
        meta: doc.meta,
        global_candidates,
    })
}

fn validate_setting(
    s: &QASetting,
    index: usize,
    globals: Option<&[String]>,
) -> Result<(), CorpusError> {
    if s.question.is_empty() {
        return Err(CorpusError::MalformedDocument(format!(
            "instance {index} has an empty question"
        )));
    }
    for (ai, a) in s.answers.iter().enumerate() {
        check_span(s, a).map_err(|reason| CorpusError::SpanOutOfBounds {
            instance: index,
            answer: ai,
            reason,
        })?;
    }
    if let Some(cands) = s.candidates.as_deref().or(globals) {
        if let Some(a) = s.answers.iter().find(|a| !cands.contains(&a.text)) {
            return Err(CorpusError::MalformedDocument(format!(
                "instance {index}: answer {:?} is not among the candidates",
                a.text
            )));
        }
    }
    Ok(())
}

/// Canonical pretty-printed JSON, newline terminated.
pub fn to_jtr_string(d: &Dataset) -> String {
    let mut instances: Vec<InstanceJson> = Vec::new();
    let mut last_support: Option<&Vec<String>> = None;
    for s in &d.instances {
        let q = QuestionJson {
            question: s.question.clone(),
            answers: s
                .answers
                .iter()
                .map(|a| AnswerJson {
                    text: a.text.clone(),
                    span: a.span.map(|sp| {
                        if sp.doc == 0 {
                            vec![sp.start, sp.end]
                        } else {
                            vec![sp.doc, sp.start, sp.end]
                        }
                    }),
                })
                .collect(),
            candidates: s.candidates.as_deref().map(text_objects),
        };
        match instances.last_mut() {
            Some(inst) if last_support == Some(&s.support) => inst.questions.push(q),
            _ => instances.push(InstanceJson {
                questions: vec![q],
                support: s.support.clone(),
            }),
        }
        last_support = Some(&s.support);
    }
    let doc = DocJson {
        instances,
        meta: d.meta.clone(),
        globals: d.global_candidates.as_deref().map(|c| GlobalsJson {
            candidates: text_objects(c),
        }),
    };
    let mut out = serde_json::to_string_pretty(&doc).expect("dataset serializes");
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_dataset() {
        let d = load_jtr(r#"{"instances": [], "meta": "x"}"#).unwrap();
        assert!(d.is_empty());
        assert_eq!(d.meta, "x");
        assert!(d.global_candidates.is_none());
    }

    #[test]
    fn missing_keys_are_malformed() {
        assert!(matches!(
            load_jtr(r#"{"meta": "x"}"#),
            Err(CorpusError::MalformedDocument(_))
        ));
        assert!(matches!(
            load_jtr("not json"),
            Err(CorpusError::MalformedDocument(_))
        ));
    }

    #[test]
    fn bad_span_reports_instance() {
        let text = r#"{"instances": [
            {"questions": [{"question": "q", "answers": [{"text": "ab", "span": [0, 2]}]}], "support": ["abc"]},
            {"questions": [{"question": "q", "answers": [{"text": "ab", "span": [1, 3]}]}], "support": ["abc"]}
        ], "meta": "m"}"#;
        match load_jtr(text) {
            Err(CorpusError::SpanOutOfBounds { instance, .. }) => assert_eq!(instance, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn answers_must_be_candidates() {
        let text = r#"{"instances": [{"questions": [{"question": "q", "answers": [{"text": "z"}],
            "candidates": [{"text": "a"}]}], "support": []}], "meta": "m"}"#;
        assert!(matches!(
            load_jtr(text),
            Err(CorpusError::MalformedDocument(_))
        ));
    }

    #[test]
    fn doc_index_spans_use_three_entries() {
        let mut s = QASetting::new("q", vec!["x".into(), "yz".into()]);
        s.answers.push(Answer::with_span("z", Span::new(1, 1, 2)));
        let d = Dataset::new("m", vec![s]);
        let text = to_jtr_string(&d);
        assert!(text.contains("1,\n"), "{text}");
        assert_eq!(load_jtr(&text).unwrap(), d);
    }

    fn arb_setting() -> impl Strategy<Value = QASetting> {
        (
            "[a-z]{1,6}",
            prop::collection::vec("[a-z ]{0,12}", 0..3),
            prop::option::of(prop::collection::vec("[a-c]", 1..3)),
            any::<u8>(),
        )
            .prop_map(|(question, support, candidates, pick)| {
                let mut answers = Vec::new();
                if let Some(c) = &candidates {
                    answers.push(Answer::text(c[pick as usize % c.len()].clone()));
                } else if let Some((doc, text)) =
                    support.iter().enumerate().find(|(_, t)| t.len() >= 2)
                {
                    let start = pick as usize % (text.len() - 1);
                    answers.push(Answer::with_span(
                        &text[start..start + 2],
                        Span::new(doc, start, start + 2),
                    ));
                }
                QASetting {
                    question,
                    support,
                    candidates,
                    answers,
                }
            })
    }

    proptest! {
        #[test]
        fn serialize_then_load_is_identity(
            settings in prop::collection::vec(arb_setting(), 0..6),
            meta in "[A-Za-z]{0,5}",
        ) {
            let d = Dataset { instances: settings, meta, global_candidates: None };
            let text = to_jtr_string(&d);
            let back = load_jtr(&text).unwrap();
            prop_assert_eq!(&back, &d);
            prop_assert_eq!(to_jtr_string(&back), text);
        }

        #[test]
        fn off_by_one_spans_are_rejected(start in 0usize..10, shift in prop::sample::select(vec![(-1i64, 0i64), (1, 0), (0, -1), (0, 1), (-1, -1), (1, 1)])) {
            let support = "the quick brown fox jumps".to_string();
            let text = &support[start..start + 5];
            let (a, b) = (start as i64 + shift.0, start as i64 + 5 + shift.1);
            prop_assume!(a >= 0);
            let mut s = QASetting::new("q", vec![support.clone()]);
            s.answers.push(Answer::with_span(text, Span::new(0, a as usize, b as usize)));
            let doc = to_jtr_string(&Dataset::new("m", vec![s]));
            let is_rejected = matches!(load_jtr(&doc), Err(CorpusError::SpanOutOfBounds { .. }));
            prop_assert!(is_rejected);
        }
    }
}
