//! Converters from external dataset formats.

use serde_json::Value;

use super::{char_len, char_slice, Answer, CorpusError, Dataset, QASetting, Span, TripleStore};

/// Separator between the parts of a link-prediction question.
pub const SEP: &str = " [SEP] ";

/// Label set for inference data, in logit order.
pub const NLI_LABELS: [&str; 3] = ["entailment", "contradiction", "neutral"];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConvertStats {
    /// Records without a resolvable label or whose answer text does not
    /// match the context.
    pub dropped: usize,
}

fn field<'a>(v: &'a Value, key: &str, ctx: &str) -> Result<&'a Value, CorpusError> {
    v.get(key)
        .ok_or_else(|| CorpusError::MalformedDocument(format!("{ctx}: missing key {key:?}")))
}

fn array<'a>(v: &'a Value, key: &str, ctx: &str) -> Result<&'a Vec<Value>, CorpusError> {
    field(v, key, ctx)?
        .as_array()
        .ok_or_else(|| CorpusError::MalformedDocument(format!("{ctx}: {key:?} is not an array")))
}

fn string<'a>(v: &'a Value, key: &str, ctx: &str) -> Result<&'a str, CorpusError> {
    field(v, key, ctx)?
        .as_str()
        .ok_or_else(|| CorpusError::MalformedDocument(format!("{ctx}: {key:?} is not a string")))
}

/// SQuAD v1.1 (`data -> paragraphs -> qas`). Questions whose answer text does
/// not match the context at `answer_start` are skipped and counted.
pub fn convert_squad(text: &str) -> Result<(Dataset, ConvertStats), CorpusError> {
    let root: Value =
        serde_json::from_str(text).map_err(|e| CorpusError::MalformedDocument(e.to_string()))?;
    let mut stats = ConvertStats::default();
    let mut instances = Vec::new();
    for (ai, article) in array(&root, "data", "document")?.iter().enumerate() {
        let ctx = format!("article {ai}");
        for (pi, para) in array(article, "paragraphs", &ctx)?.iter().enumerate() {
            let ctx = format!("article {ai} paragraph {pi}");
            let context = string(para, "context", &ctx)?;
            'qa: for (qi, qa) in array(para, "qas", &ctx)?.iter().enumerate() {
                let ctx = format!("{ctx} qa {qi}");
                let mut setting =
                    QASetting::new(string(qa, "question", &ctx)?, vec![context.to_string()]);
                for a in array(qa, "answers", &ctx)? {
                    let answer = string(a, "text", &ctx)?;
                    let start = field(a, "answer_start", &ctx)?.as_u64().ok_or_else(|| {
                        CorpusError::MalformedDocument(format!(
                            "{ctx}: answer_start is not a non-negative integer"
                        ))
                    })? as usize;
                    let end = start + char_len(answer);
                    if char_slice(context, start, end) != Some(answer) || start == end {
                        stats.dropped += 1;
                        continue 'qa;
                    }
                    setting
                        .answers
                        .push(Answer::with_span(answer, Span::new(0, start, end)));
                }
                instances.push(setting);
            }
        }
    }
    Ok((Dataset::new("squad", instances), stats))
}

/// SNLI JSON lines: hypothesis becomes the question, premise the support.
/// Lines labelled `-` (no annotator consensus) are dropped.
pub fn convert_snli(text: &str) -> Result<(Dataset, ConvertStats), CorpusError> {
    let mut stats = ConvertStats::default();
    let mut instances = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| CorpusError::MalformedLine {
            line: lineno,
            reason,
        };
        let v: Value = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        let get = |k: &str| {
            v.get(k)
                .and_then(Value::as_str)
                .ok_or_else(|| bad(format!("missing string field {k:?}")))
        };
        let (premise, hypothesis, label) =
            (get("sentence1")?, get("sentence2")?, get("gold_label")?);
        if label == "-" {
            stats.dropped += 1;
            continue;
        }
        if !NLI_LABELS.contains(&label) {
            return Err(bad(format!("unknown gold_label {label:?}")));
        }
        if hypothesis.is_empty() {
            return Err(bad("empty hypothesis".into()));
        }
        let mut s = QASetting::new(hypothesis, vec![premise.to_string()]);
        s.candidates = Some(NLI_LABELS.iter().map(|l| l.to_string()).collect());
        s.answers.push(Answer::text(label));
        instances.push(s);
    }
    Ok((Dataset::new("snli", instances), stats))
}

/// Parses `subject<TAB>predicate<TAB>object` lines into `store`, interning
/// new symbols. Blank lines are ignored.
pub(crate) fn read_triples_into(text: &str, store: &mut TripleStore) -> Result<usize, CorpusError> {
    let mut lines = 0;
    for (i, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 3 || parts.iter().any(|p| p.is_empty()) {
            return Err(CorpusError::MalformedLine {
                line: i + 1,
                reason: format!("expected 3 tab-separated fields, found {}", parts.len()),
            });
        }
        store.insert(parts[0], parts[1], parts[2]);
        lines += 1;
    }
    Ok(lines)
}

/// Parses `subject<TAB>predicate<TAB>object` lines already resolvable in
/// `store`'s symbol tables.
pub fn parse_known_triples(
    text: &str,
    store: &TripleStore,
) -> Result<Vec<super::Triple>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 3 {
            return Err(CorpusError::MalformedLine {
                line: i + 1,
                reason: format!("expected 3 tab-separated fields, found {}", parts.len()),
            });
        }
        out.push(store.lookup(parts[0], parts[1], parts[2])?);
    }
    Ok(out)
}

/// Triple TSV. Each distinct fact yields two ranking questions,
/// `s [SEP] p [SEP] ?` (answer `o`) and `? [SEP] p [SEP] o` (answer `s`);
/// every entity is a global candidate.
pub fn convert_triples(text: &str) -> Result<(Dataset, TripleStore), CorpusError> {
    let mut store = TripleStore::new();
    read_triples_into(text, &mut store)?;
    Ok((triples_to_dataset(&store), store))
}

pub fn triples_to_dataset(store: &TripleStore) -> Dataset {
    let mut instances = Vec::with_capacity(2 * store.len());
    for t in store.triples() {
        let (s, p, o) = (store.entity(t.s), store.relation(t.p), store.entity(t.o));
        let mut tail = QASetting::new(format!("{s}{SEP}{p}{SEP}?"), vec![]);
        tail.answers.push(Answer::text(o));
        let mut head = QASetting::new(format!("?{SEP}{p}{SEP}{o}"), vec![]);
        head.answers.push(Answer::text(s));
        instances.push(tail);
        instances.push(head);
    }
    let mut d = Dataset::new("triples", instances);
    d.global_candidates = Some(store.entities().to_vec());
    d
}

/// Recovers `(s, p, o)` names from a link-prediction question and its answer.
pub fn question_to_triple(question: &str, answer: &str) -> Option<(String, String, String)> {
    let parts: Vec<&str> = question.split(SEP).collect();
    match parts.as_slice() {
        [s, p, "?"] if *s != "?" => Some((s.to_string(), p.to_string(), answer.to_string())),
        ["?", p, o] if *o != "?" => Some((answer.to_string(), p.to_string(), o.to_string())),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Triple;

    #[test]
    fn squad_spans_are_half_open() {
        let context = format!("{}Santa Clara, California is where.", "x".repeat(402));
        let squad = serde_json::json!({"version": "1.1", "data": [{"title": "t", "paragraphs": [{
            "context": context,
            "qas": [{"id": "1", "question": "Where?", "answers": [
                {"text": "Santa Clara, California", "answer_start": 402}]}]
        }]}]});
        let (d, stats) = convert_squad(&squad.to_string()).unwrap();
        assert_eq!(stats.dropped, 0);
        let span = d.instances[0].answers[0].span.unwrap();
        assert_eq!(span, Span::new(0, 402, 425));
        // Substring oracle, computed on bytes since the context is ASCII.
        let end = 402 + "Santa Clara, California".len();
        assert_eq!(&context[402..end], "Santa Clara, California");
        assert_eq!(end, span.end);
    }

    #[test]
    fn squad_keeps_duplicate_golds_and_skips_mismatches() {
        let squad = serde_json::json!({"data": [{"paragraphs": [{
            "context": "abc def",
            "qas": [
                {"question": "q1", "answers": [
                    {"text": "def", "answer_start": 4},
                    {"text": "def", "answer_start": 4},
                    {"text": "def", "answer_start": 4}]},
                {"question": "q2", "answers": [{"text": "xyz", "answer_start": 0}]}
            ]
        }]}]});
        let (d, stats) = convert_squad(&squad.to_string()).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.instances[0].answers.len(), 3);
        assert_eq!(stats.dropped, 1);
    }

    #[test]
    fn squad_without_paragraphs_is_empty() {
        let squad = r#"{"data": [{"title": "t", "paragraphs": []}]}"#;
        assert!(convert_squad(squad).unwrap().0.is_empty());
    }

    #[test]
    fn snli_drops_unresolved_labels() {
        let lines = [
            r#"{"gold_label": "entailment", "sentence1": "Children smiling and waving at camera", "sentence2": "There are children present"}"#,
            r#"{"gold_label": "-", "sentence1": "a", "sentence2": "b"}"#,
            r#"{"gold_label": "neutral", "sentence1": "c", "sentence2": "d"}"#,
        ]
        .join("\n");
        let (d, stats) = convert_snli(&lines).unwrap();
        let expected_drops = lines
            .lines()
            .filter(|l| l.contains(r#""gold_label": "-""#))
            .count();
        assert_eq!(stats.dropped, expected_drops);
        assert_eq!(d.len(), 2);
        let first = &d.instances[0];
        assert_eq!(first.question, "There are children present");
        assert_eq!(first.support, vec!["Children smiling and waving at camera"]);
        assert_eq!(first.answers, vec![Answer::text("entailment")]);
    }

    #[test]
    fn snli_reports_line_numbers() {
        let text =
            "{\"gold_label\": \"neutral\", \"sentence1\": \"a\", \"sentence2\": \"b\"}\n{oops";
        assert!(matches!(
            convert_snli(text),
            Err(CorpusError::MalformedLine { line: 2, .. })
        ));
        assert!(convert_snli("").unwrap().0.is_empty());
    }

    #[test]
    fn single_triple() {
        let (d, st) = convert_triples("a\tr\tb\n").unwrap();
        assert_eq!((d.len(), st.num_entities(), st.num_relations()), (2, 2, 1));
        assert_eq!(d.instances[0].question, "a [SEP] r [SEP] ?");
        assert_eq!(d.instances[1].question, "? [SEP] r [SEP] b");
        assert_eq!(
            d.global_candidates.as_deref(),
            Some(&["a".to_string(), "b".to_string()][..])
        );
    }

    #[test]
    fn duplicate_lines_collapse() {
        let (d, st) = convert_triples("a\tr\tb\na\tr\tb\n").unwrap();
        assert_eq!(st.len(), 1);
        assert_eq!(d.len(), 2);
    }

    #[test]
    fn toy_index_matches_brute_force() {
        let tsv = "a\tr\tb\na\tr\tc\nb\tq\tc\nc\tr\ta\n";
        let (_, st) = convert_triples(tsv).unwrap();
        let lines: Vec<Vec<&str>> = tsv.lines().map(|l| l.split('\t').collect()).collect();
        for s in st.entities() {
            for p in st.relations() {
                let mut scan: Vec<usize> = lines
                    .iter()
                    .filter(|f| f[0] == s && f[1] == p)
                    .map(|f| st.entity_id(f[2]).unwrap())
                    .collect();
                scan.sort();
                let (sid, pid) = (st.entity_id(s).unwrap(), st.relation_id(p).unwrap());
                assert_eq!(st.objects(sid, pid).collect::<Vec<_>>(), scan);
            }
        }
        assert!(st.contains(Triple::new(2, 0, 0)));
    }

    #[test]
    fn triples_reject_bad_lines() {
        assert!(matches!(
            convert_triples("a\tb\n"),
            Err(CorpusError::MalformedLine { line: 1, .. })
        ));
    }

    #[test]
    fn conversion_is_deterministic() {
        let tsv = "x\tr\ty\ny\tq\tz\nz\tr\tx\n";
        assert_eq!(convert_triples(tsv).unwrap(), convert_triples(tsv).unwrap());
    }

    #[test]
    fn questions_map_back_to_triples() {
        assert_eq!(
            question_to_triple("a [SEP] r [SEP] ?", "b"),
            Some(("a".into(), "r".into(), "b".into()))
        );
        assert_eq!(
            question_to_triple("? [SEP] r [SEP] b", "a"),
            Some(("a".into(), "r".into(), "b".into()))
        );
        assert_eq!(question_to_triple("what?", "a"), None);
    }
}
