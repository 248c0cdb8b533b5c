use std::sync::OnceLock;

use proptest::prelude::*;

use mreader::corpus::{
    convert_triples, question_to_triple, triples_to_dataset, QASetting, TripleStore,
};
use mreader::dsl::{self, Dims};
use mreader::engine::{AdamConfig, Tape, Tensor};
use mreader::framework::{Hook, LossHook, Reader, ReaderConfig, Task};
use mreader::metrics::{ranking_metrics, span_f1_em, RankingResult};
use mreader::textpipe::{char_span_to_tokens, tokenize, tokens_to_char_span};
use mreader::zoo::{self, toy};

fn tiny() -> ReaderConfig {
    ReaderConfig {
        repr_dim: 4,
        repr_dim_input: 4,
        ..ReaderConfig::default()
    }
}

const WORDS: [&str; 8] = [
    "the", "apple", "river", "is", "in", "Paris", "today", "stone",
];

fn sentence(max: usize) -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(&WORDS[..]), 1..max).prop_map(|w| w.join(" "))
}

fn trained(task: Task) -> &'static Reader {
    static NLI: OnceLock<Reader> = OnceLock::new();
    static QA: OnceLock<Reader> = OnceLock::new();
    let (cell, data) = match task {
        Task::Qa => (&QA, toy::qa_dataset(12, 0)),
        _ => (&NLI, toy::nli_dataset(12, 0)),
    };
    cell.get_or_init(|| {
        let mut r = zoo::text_reader(
            task,
            if task == Task::Qa {
                dsl::QA_SPAN_BASELINE
            } else {
                dsl::NLI_BASELINE
            },
            tiny(),
        )
        .unwrap();
        r.train(&data, AdamConfig::default(), &mut [], 1).unwrap();
        r
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn hooks_fire_floor_n_over_interval(n in 1usize..20, batch in 1usize..6, epochs in 1usize..3, interval in 1usize..8) {
        let mut reader = zoo::nli_reader(None, ReaderConfig { batch_size: batch, ..tiny() }).unwrap();
        let mut hooks: Vec<Box<dyn Hook>> = vec![Box::new(LossHook::new(interval))];
        let report = reader.train(&toy::nli_dataset(n, 1), AdamConfig::default(), &mut hooks, epochs).unwrap();
        let iterations = epochs * n.div_ceil(batch);
        prop_assert_eq!(report.iterations, iterations);
        prop_assert_eq!(report.events.len(), iterations / interval);
        for (k, e) in report.events.iter().enumerate() {
            prop_assert_eq!(e.iteration, (k + 1) * interval);
        }
    }

    #[test]
    fn answers_fit_any_batch_shape(
        questions in prop::collection::vec((sentence(6), prop::collection::vec(sentence(12), 1..4)), 1..6),
    ) {
        for task in [Task::Nli, Task::Qa] {
            let instances: Vec<QASetting> = questions
                .iter()
                .map(|(q, support)| {
                    let support = if task == Task::Nli { support[..1].to_vec() } else { support.clone() };
                    let mut s = QASetting::new(q.clone(), support);
                    if task == Task::Nli {
                        s.candidates = Some(mreader::corpus::NLI_LABELS.iter().map(|l| l.to_string()).collect());
                    }
                    s
                })
                .collect();
            let data = mreader::corpus::Dataset::new("p", instances);
            let answers = trained(task).answer(&data).unwrap();
            prop_assert_eq!(answers.len(), data.len());
            for (a, s) in answers.iter().zip(&data.instances) {
                prop_assert!(a.score.is_finite());
                if task == Task::Qa {
                    let span = a.span.unwrap();
                    prop_assert!(span.doc < s.support.len());
                    prop_assert_eq!(mreader::corpus::char_slice(&s.support[span.doc], span.start, span.end), Some(a.text.as_str()));
                } else {
                    let total: f64 = a.probabilities.iter().map(|(_, p)| p).sum();
                    prop_assert!((total - 1.0).abs() < 1e-9);
                }
            }
        }
    }
}

proptest! {
    #[test]
    fn token_spans_survive_a_character_round_trip(text in sentence(20), a in 0usize..20, b in 0usize..20) {
        let tokens = tokenize(&text);
        let (first, last) = (a.min(b) % tokens.len(), a.max(b) % tokens.len());
        let (first, last) = (first.min(last), first.max(last));
        let (start, end) = tokens_to_char_span(&tokens, first, last);
        prop_assert_eq!(char_span_to_tokens(&tokens, start, end), Some((first, last)));
    }

    #[test]
    fn masked_softmax_rows_are_distributions(
        rows in prop::collection::vec(prop::collection::vec((-30.0f64..30.0, any::<bool>()), 5), 1..6),
    ) {
        let values: Vec<f64> = rows.iter().flatten().map(|(v, _)| *v).collect();
        let mut mask: Vec<f64> = rows.iter().flatten().map(|(_, m)| f64::from(u8::from(*m))).collect();
        for r in 0..rows.len() {
            mask[r * 5] = 1.0;
        }
        let mut tape = Tape::new();
        let x = tape.constant(&Tensor::from_f64(vec![rows.len(), 5], values).unwrap()).unwrap();
        let y = tape.masked_softmax(x, &mask, 1).unwrap();
        for (row, m) in tape.value(y).chunks(5).zip(mask.chunks(5)) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (p, m) in row.iter().zip(m) {
                if *m == 0.0 {
                    prop_assert_eq!(*p, 0.0);
                } else {
                    prop_assert!(*p >= 0.0);
                }
            }
        }
    }

    #[test]
    fn gold_order_does_not_matter(pred in sentence(6), golds in prop::collection::vec(sentence(6), 1..5), seed in any::<u64>()) {
        let mut shuffled = golds.clone();
        shuffled.rotate_left(seed as usize % golds.len());
        shuffled.reverse();
        prop_assert_eq!(span_f1_em(&pred, &golds).unwrap(), span_f1_em(&pred, &shuffled).unwrap());
    }

    #[test]
    fn ranking_metrics_are_bounded_and_monotone(ranks in prop::collection::vec(1usize..50, 1..30)) {
        let results: Vec<RankingResult> = ranks.iter().map(|&rank| RankingResult { rank, filtered: false }).collect();
        let reports = ranking_metrics(&results, &[1, 3, 10]).unwrap();
        let values: Vec<f64> = reports.iter().map(|r| r.value).collect();
        prop_assert!(values[0] > 0.0 && values[0] <= 1.0);
        prop_assert!(values[1] <= values[2] && values[2] <= values[3]);
        prop_assert!(values[1] <= values[0]);
    }

    #[test]
    fn triple_conversion_is_deterministic_and_invertible(
        facts in prop::collection::vec((0usize..6, 0usize..3, 0usize..6), 1..15),
    ) {
        let text: String = facts.iter().map(|(s, p, o)| format!("e{s}\tr{p}\te{o}\n")).collect();
        let (a, store) = convert_triples(&text).unwrap();
        let (b, _) = convert_triples(&text).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(&triples_to_dataset(&store), &a);
        let mut rebuilt = TripleStore::new();
        for inst in &a.instances {
            let (s, p, o) = question_to_triple(&inst.question, &inst.answers[0].text).unwrap();
            rebuilt.insert(&s, &p, &o);
        }
        prop_assert_eq!(rebuilt.len(), store.len());
        for t in store.triples() {
            let l = rebuilt.lookup(store.entity(t.s), store.relation(t.p), store.entity(t.o));
            prop_assert!(l.is_ok_and(|t| rebuilt.contains(t)));
        }
    }

    #[test]
    fn compilation_never_panics_on_mutated_configs(
        drop_line in any::<prop::sample::Index>(),
        swap in any::<prop::sample::Index>(),
        with in prop::sample::select(&["qa", "support", "logits", "dense", "pool", "attention", "[", "- ", "3", ":"][..]),
        qa in any::<bool>(),
    ) {
        let base = if qa { dsl::QA_SPAN_BASELINE } else { dsl::NLI_BASELINE };
        let task = if qa { Task::Qa } else { Task::Nli };
        let mut lines: Vec<String> = base.lines().map(str::to_string).collect();
        lines.remove(drop_line.index(lines.len()));
        let i = swap.index(lines.len());
        if let Some(last) = lines[i].split_whitespace().last().map(str::to_string) {
            lines[i] = lines[i].replacen(&last, with, 1);
        }
        let text = lines.join("\n");
        match dsl::compile(&text, task, Dims::default()) {
            Ok(g) => {
                let output = if qa { "start_scores" } else { "logits" };
                prop_assert!(g.shape_table().contains(output));
            }
            Err(e) => prop_assert!(!e.to_string().is_empty()),
        }
    }
}
