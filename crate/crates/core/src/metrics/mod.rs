//! Answer normalization, span F1/exact match, accuracy and ranking metrics.

use std::collections::HashMap;
use std::fmt;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("no gold answers")]
    EmptyGolds,
    #[error("no ranking results")]
    EmptyResults,
    #[error("{predictions} predictions for {golds} golds")]
    LengthMismatch { predictions: usize, golds: usize },
}

/// Mean of per-item scores.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub name: String,
    pub value: f64,
    pub count: usize,
}

impl MetricReport {
    pub fn new(name: impl Into<String>, value: f64, count: usize) -> Self {
        Self {
            name: name.into(),
            value,
            count,
        }
    }
}

impl fmt::Display for MetricReport {
    /// `name value count`, value to four decimals.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{:.4}\t{}", self.name, self.value, self.count)
    }
}

/// Rank of the gold entity for one query (1 is best).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankingResult {
    pub rank: usize,
    pub filtered: bool,
}

/// Lowercase, strip ASCII punctuation, drop the articles a/an/the and
/// collapse whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lowered = text.to_lowercase();
    let no_punct: String = lowered
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    no_punct
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn f1_single(pred: &[&str], gold: &[&str]) -> f64 {
    if pred.is_empty() && gold.is_empty() {
        return 1.0;
    }
    let mut bag: HashMap<&str, usize> = HashMap::new();
    for t in gold {
        *bag.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in pred {
        if let Some(c) = bag.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let p = common as f64 / pred.len() as f64;
    let r = common as f64 / gold.len() as f64;
    2.0 * p * r / (p + r)
}

/// Token-bag F1 and exact match of `prediction`, each maximised over `golds`.
pub fn span_f1_em<S: AsRef<str>>(
    prediction: &str,
    golds: &[S],
) -> Result<(f64, f64), MetricsError> {
    if golds.is_empty() {
        return Err(MetricsError::EmptyGolds);
    }
    let pred = normalize_answer(prediction);
    let pred_tokens: Vec<&str> = pred.split_whitespace().collect();
    let mut best = (0.0f64, 0.0f64);
    for g in golds {
        let gold = normalize_answer(g.as_ref());
        let gold_tokens: Vec<&str> = gold.split_whitespace().collect();
        best.0 = best.0.max(f1_single(&pred_tokens, &gold_tokens));
        best.1 = best.1.max(if pred == gold { 1.0 } else { 0.0 });
    }
    Ok(best)
}

/// Mean reciprocal rank and `hits@k` for each `k`.
pub fn ranking_metrics(
    results: &[RankingResult],
    ks: &[usize],
) -> Result<Vec<MetricReport>, MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::EmptyResults);
    }
    let n = results.len();
    let mrr = results.iter().map(|r| 1.0 / r.rank as f64).sum::<f64>() / n as f64;
    let mut out = vec![MetricReport::new("mrr", mrr, n)];
    for &k in ks {
        let hits = results.iter().filter(|r| r.rank <= k).count();
        out.push(MetricReport::new(
            format!("hits@{k}"),
            hits as f64 / n as f64,
            n,
        ));
    }
    Ok(out)
}

pub fn accuracy<T: PartialEq>(predictions: &[T], golds: &[T]) -> Result<f64, MetricsError> {
    if predictions.len() != golds.len() || golds.is_empty() {
        return Err(MetricsError::LengthMismatch {
            predictions: predictions.len(),
            golds: golds.len(),
        });
    }
    let hits = predictions
        .iter()
        .zip(golds)
        .filter(|(p, g)| p == g)
        .count();
    Ok(hits as f64 / golds.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ranks(rs: &[usize]) -> Vec<RankingResult> {
        rs.iter()
            .map(|&rank| RankingResult {
                rank,
                filtered: false,
            })
            .collect()
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_answer("Levi's Stadium"), "levis stadium");
        assert_eq!(normalize_answer("The  Answer."), "answer");
        assert_eq!(normalize_answer(""), "");
        assert_eq!(normalize_answer("an apple a day"), "apple day");
    }

    #[test]
    fn exact_and_partial_matches() {
        let golds = [
            "Santa Clara, California",
            "Levi's Stadium",
            "Levi's Stadium",
        ];
        assert_eq!(span_f1_em("Levi's Stadium", &golds).unwrap(), (1.0, 1.0));
        let (f1, em) = span_f1_em("in Santa Clara", &["Santa Clara, California"]).unwrap();
        assert!((f1 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(em, 0.0);
        assert_eq!(span_f1_em("", &golds).unwrap(), (0.0, 0.0));
        assert_eq!(span_f1_em::<&str>("x", &[]), Err(MetricsError::EmptyGolds));
    }

    #[test]
    fn ranking_hand_cases() {
        let m = ranking_metrics(&ranks(&[1, 4]), &[3, 10]).unwrap();
        let values: Vec<f64> = m.iter().map(|r| r.value).collect();
        assert_eq!(values, vec![0.625, 0.5, 1.0]);
        let m = ranking_metrics(&ranks(&[1, 1, 1]), &[3, 10]).unwrap();
        assert!(m.iter().all(|r| r.value == 1.0));
        assert_eq!(ranking_metrics(&[], &[3]), Err(MetricsError::EmptyResults));
        assert_eq!(m[0].to_string(), "mrr\t1.0000\t3");
    }

    #[test]
    fn accuracy_cases() {
        assert_eq!(accuracy(&["a", "b"], &["a", "b"]).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 2, 3, 4], &[1, 2, 3, 5]).unwrap(), 0.75);
        assert_eq!(accuracy(&["x", "y"], &["a", "b"]).unwrap(), 0.0);
        assert!(accuracy(&[1], &[1, 2]).is_err());
    }

    proptest! {
        #[test]
        fn f1_bounds_and_em_implication(pred in "[a-d ,.]{0,12}", golds in prop::collection::vec("[a-d ,.]{0,12}", 1..4)) {
            let (f1, em) = span_f1_em(&pred, &golds).unwrap();
            prop_assert!((0.0..=1.0).contains(&f1));
            if em == 1.0 { prop_assert_eq!(f1, 1.0); }
            let mut reversed = golds.clone();
            reversed.reverse();
            prop_assert_eq!(span_f1_em(&pred, &reversed).unwrap(), (f1, em));
        }

        #[test]
        fn f1_is_one_iff_bags_equal(a in prop::collection::vec("[x-z]", 0..5), b in prop::collection::vec("[x-z]", 0..5)) {
            let (f1, _) = span_f1_em(&a.join(" "), &[b.join(" ")]).unwrap();
            let (mut sa, mut sb) = (a.clone(), b.clone());
            sa.sort();
            sb.sort();
            prop_assert_eq!(f1 == 1.0, sa == sb);
        }

        #[test]
        fn improving_a_rank_never_hurts(rs in prop::collection::vec(1usize..50, 1..10), which in any::<prop::sample::Index>()) {
            let before = ranking_metrics(&ranks(&rs), &[3, 10]).unwrap();
            let mut better = rs.clone();
            let i = which.index(rs.len());
            better[i] = (better[i] - 1).max(1);
            let after = ranking_metrics(&ranks(&better), &[3, 10]).unwrap();
            for (a, b) in after.iter().zip(&before) {
                prop_assert!(a.value >= b.value);
            }
        }
    }
}
