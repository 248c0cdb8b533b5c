//! Small generated datasets with known answers, used by tests, benchmarks
//! and the command-line demos.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Answer, Dataset, QASetting, Span, Triple, TripleStore, NLI_LABELS};

const NOUNS: [&str; 40] = [
    "apple", "river", "stone", "cloud", "horse", "lamp", "forest", "bread", "glass", "tiger",
    "violin", "castle", "garden", "rocket", "mirror", "candle", "desert", "engine", "feather",
    "island", "jacket", "kettle", "ladder", "meadow", "needle", "orchard", "pillow", "quarry",
    "saddle", "tunnel", "umbrella", "valley", "wagon", "anchor", "bridge", "cactus", "dragon",
    "falcon", "harbor", "lantern",
];

/// Function words joining the content words. The labelling rule ignores
/// them.
pub const NLI_STOPWORDS: [&str; 4] = ["the", "a", "with", "and"];

const PREMISE_WORDS: usize = 6;
const HYPOTHESIS_WORDS: usize = 3;

/// Label of a hypothesis under the generating rule: entailment when every
/// content token appears in the premise, contradiction when none does and
/// neutral otherwise.
pub fn nli_rule(premise: &str, hypothesis: &str) -> &'static str {
    let premise: Vec<&str> = premise.split_whitespace().collect();
    let content: Vec<&str> = hypothesis
        .split_whitespace()
        .filter(|w| !NLI_STOPWORDS.contains(w))
        .collect();
    let shared = content.iter().filter(|w| premise.contains(w)).count();
    if shared == content.len() {
        NLI_LABELS[0]
    } else if shared == 0 {
        NLI_LABELS[1]
    } else {
        NLI_LABELS[2]
    }
}

fn sentence(words: &[&str], rng: &mut ChaCha8Rng) -> String {
    let mut out = Vec::with_capacity(2 * words.len());
    for (i, w) in words.iter().enumerate() {
        if i > 0 {
            out.push(*NLI_STOPWORDS[1..].choose(rng).expect("nonempty"));
        }
        out.push(w);
    }
    format!("the {}", out.join(" "))
}

/// `n` premise/hypothesis pairs with labels cycling through the three
/// classes, so the classes are balanced.
pub fn nli_dataset(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut instances = Vec::with_capacity(n);
    for i in 0..n {
        let mut nouns = NOUNS.to_vec();
        nouns.shuffle(&mut rng);
        let (inside, outside) = nouns.split_at(PREMISE_WORDS);
        let shared = match i % 3 {
            0 => HYPOTHESIS_WORDS,
            1 => 0,
            _ => rng.gen_range(1..HYPOTHESIS_WORDS),
        };
        let mut hyp: Vec<&str> = inside[..shared].to_vec();
        hyp.extend(&outside[..HYPOTHESIS_WORDS - shared]);
        hyp.shuffle(&mut rng);
        let premise = sentence(inside, &mut rng);
        let hypothesis = sentence(&hyp, &mut rng);
        let label = nli_rule(&premise, &hypothesis);
        let mut s = QASetting::new(hypothesis, vec![premise]);
        s.candidates = Some(NLI_LABELS.iter().map(|l| l.to_string()).collect());
        s.answers.push(Answer::text(label));
        instances.push(s);
    }
    Dataset::new("toy-nli", instances)
}

/// Relations of [`ring_kg`]: one step forward, two steps forward and one
/// step back around the ring.
pub const RING_RELATIONS: [(&str, isize); 3] = [
    ("successor", 1),
    ("second_successor", 2),
    ("predecessor", -1),
];

/// A ring of `n` entities with the three [`RING_RELATIONS`], split into
/// training facts and `held_out` test facts. A held-out fact never has its
/// inverse held out as well, so every test fact is implied by training
/// facts.
pub fn ring_kg(n: usize, held_out: usize, seed: u64) -> (TripleStore, Vec<Triple>) {
    let mut all = TripleStore::new();
    for i in 0..n {
        all.add_entity(&format!("e{i:02}"));
    }
    for (r, _) in RING_RELATIONS {
        all.add_relation(r);
    }
    let step = |i: usize, d: isize| (i as isize + d).rem_euclid(n as isize) as usize;
    let mut facts = Vec::new();
    for (p, &(_, d)) in RING_RELATIONS.iter().enumerate() {
        for i in 0..n {
            facts.push(Triple::new(i, p, step(i, d)));
        }
    }
    let inverse = |t: Triple| match t.p {
        0 => Some(Triple::new(t.o, 2, t.s)),
        2 => Some(Triple::new(t.o, 0, t.s)),
        _ => None,
    };
    let mut order: Vec<usize> = (0..facts.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test: Vec<Triple> = Vec::new();
    for i in order {
        if test.len() == held_out {
            break;
        }
        let t = facts[i];
        if inverse(t).is_some_and(|inv| test.contains(&inv)) {
            continue;
        }
        test.push(t);
    }
    let mut train = all.empty_like();
    for &t in &facts {
        if !test.contains(&t) {
            train.insert_ids(t);
        }
    }
    (train, test)
}

const PLACES: [&str; 8] = [
    "the kitchen",
    "Paris",
    "the old barn",
    "Lisbon",
    "the garden",
    "a cave",
    "Oslo",
    "the harbor",
];

/// Extractive questions of the form "where is the X ?" over a few one-line
/// support documents, with the answer span marked in the document that
/// mentions X.
pub fn qa_dataset(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut instances = Vec::with_capacity(n);
    for _ in 0..n {
        let mut nouns = NOUNS.to_vec();
        nouns.shuffle(&mut rng);
        let docs = rng.gen_range(1..=3);
        let mut support = Vec::with_capacity(docs);
        let mut places = Vec::with_capacity(docs);
        for noun in &nouns[..docs] {
            let place = *PLACES.choose(&mut rng).expect("nonempty");
            places.push(place);
            support.push(format!("The {noun} is in {place} today."));
        }
        let target = rng.gen_range(0..docs);
        let start = format!("The {} is in ", nouns[target]).len();
        let place = places[target];
        let mut s = QASetting::new(format!("where is the {} ?", nouns[target]), support);
        s.answers.push(Answer::with_span(
            place,
            Span::new(target, start, start + place.len()),
        ));
        instances.push(s);
    }
    Dataset::new("toy-qa", instances)
}
