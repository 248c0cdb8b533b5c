//! Link prediction with bilinear embedding models.
//!
//! DistMult scores a triple as `sum_k e_s[k] * w_p[k] * e_o[k]`. ComplEx uses
//! complex vectors and scores `Re(sum_k e_s[k] * w_p[k] * conj(e_o[k]))`,
//! which lets it model asymmetric relations. Entity and relation rows of a
//! ComplEx model store the real half followed by the imaginary half.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{read_triples_into, Triple, TripleStore};
use crate::engine::{Adam, AdamConfig, EngineError, ParamStore, Tape, Tensor, Var};
use crate::framework::persist::{read_config, read_file, read_params, write_config, write_params};
use crate::framework::{LpKind, ReaderConfig, ReaderError, Task};
use crate::metrics::{ranking_metrics, MetricReport, RankingResult};
use crate::par::{self, Execution};

#[derive(Debug, thiserror::Error)]
pub enum LpError {
    #[error("{kind} id {id} out of range for {bound} {kind}s")]
    IdOutOfRange {
        kind: &'static str,
        id: usize,
        bound: usize,
    },
    #[error("cannot train on an empty triple store")]
    EmptyStore,
    #[error("{0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Entity and relation tables of a DistMult or ComplEx model.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    pub kind: LpKind,
    pub dim: usize,
    pub entities: Tensor,
    pub relations: Tensor,
}

/// Which slot of a triple is being predicted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Subject,
    Object,
}

fn row_width(kind: LpKind, dim: usize) -> usize {
    match kind {
        LpKind::DistMult => dim,
        LpKind::ComplEx => 2 * dim,
    }
}

fn score_rows(kind: LpKind, dim: usize, s: &[f64], p: &[f64], o: &[f64]) -> f64 {
    match kind {
        LpKind::DistMult => s.iter().zip(o).zip(p).map(|((a, c), b)| a * c * b).sum(),
        LpKind::ComplEx => {
            let (sr, si) = s.split_at(dim);
            let (pr, pi) = p.split_at(dim);
            let (or, oi) = o.split_at(dim);
            (0..dim)
                .map(|k| {
                    sr[k] * pr[k] * or[k] + si[k] * pr[k] * oi[k] + sr[k] * pi[k] * oi[k]
                        - si[k] * pi[k] * or[k]
                })
                .sum()
        }
    }
}

impl EmbeddingModel {
    /// Tables drawn uniformly from `[-1/sqrt(dim), 1/sqrt(dim))`.
    pub fn new(
        kind: LpKind,
        num_entities: usize,
        num_relations: usize,
        dim: usize,
        seed: u64,
    ) -> Self {
        let w = row_width(kind, dim);
        let bound = 1.0 / (dim.max(1) as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut table = |rows: usize| {
            let data = (0..rows * w)
                .map(|_| rng.gen_range(-bound..bound))
                .collect();
            Tensor::from_f64(vec![rows, w], data).expect("sized above")
        };
        let entities = table(num_entities);
        let relations = table(num_relations);
        Self {
            kind,
            dim,
            entities,
            relations,
        }
    }

    /// Wraps existing tables after checking their widths.
    pub fn from_tables(
        kind: LpKind,
        dim: usize,
        entities: Tensor,
        relations: Tensor,
    ) -> Result<Self, LpError> {
        let w = row_width(kind, dim);
        for (name, t) in [("entity", &entities), ("relation", &relations)] {
            t.as_f64()?;
            if t.shape().len() != 2 || t.shape()[1] != w {
                return Err(LpError::InvalidConfig(format!(
                    "{name} table has shape {:?}, expected [_, {w}]",
                    t.shape()
                )));
            }
        }
        Ok(Self {
            kind,
            dim,
            entities,
            relations,
        })
    }

    pub fn num_entities(&self) -> usize {
        self.entities.shape()[0]
    }

    pub fn num_relations(&self) -> usize {
        self.relations.shape()[0]
    }

    fn width(&self) -> usize {
        row_width(self.kind, self.dim)
    }

    fn entity_row(&self, id: usize) -> Result<&[f64], LpError> {
        let n = self.num_entities();
        if id >= n {
            return Err(LpError::IdOutOfRange {
                kind: "entity",
                id,
                bound: n,
            });
        }
        let w = self.width();
        Ok(&self.entities.as_f64()?[id * w..(id + 1) * w])
    }

    fn relation_row(&self, id: usize) -> Result<&[f64], LpError> {
        let n = self.num_relations();
        if id >= n {
            return Err(LpError::IdOutOfRange {
                kind: "relation",
                id,
                bound: n,
            });
        }
        let w = self.width();
        Ok(&self.relations.as_f64()?[id * w..(id + 1) * w])
    }

    pub fn score(&self, s: usize, p: usize, o: usize) -> Result<f64, LpError> {
        Ok(score_rows(
            self.kind,
            self.dim,
            self.entity_row(s)?,
            self.relation_row(p)?,
            self.entity_row(o)?,
        ))
    }

    pub fn params(&self) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("entities", self.entities.clone())
            .expect("fresh store");
        p.insert("relations", self.relations.clone())
            .expect("fresh store");
        p
    }
}

/// Scores of `triples` on the tape, differentiable in both tables.
pub fn score_on_tape(
    tape: &mut Tape,
    kind: LpKind,
    dim: usize,
    entities: Var,
    relations: Var,
    triples: &[Triple],
) -> Result<Var, EngineError> {
    let ids = |f: fn(&Triple) -> usize| {
        Tensor::from_i64(
            vec![triples.len()],
            triples.iter().map(|t| f(t) as i64).collect(),
        )
    };
    let s = tape.lookup(entities, &ids(|t| t.s)?)?;
    let p = tape.lookup(relations, &ids(|t| t.p)?)?;
    let o = tape.lookup(entities, &ids(|t| t.o)?)?;
    let terms = match kind {
        LpKind::DistMult => {
            let so = tape.mul(s, o)?;
            tape.mul(so, p)?
        }
        LpKind::ComplEx => {
            let mut half = |v: Var, i: usize| tape.slice(v, 1, i * dim, dim);
            let (sr, si) = (half(s, 0)?, half(s, 1)?);
            let (pr, pi) = (half(p, 0)?, half(p, 1)?);
            let (or, oi) = (half(o, 0)?, half(o, 1)?);
            let a = tape.mul(sr, pr)?;
            let b = tape.mul(si, pr)?;
            let c = tape.mul(sr, pi)?;
            let d = tape.mul(si, pi)?;
            let t1 = tape.mul(a, or)?;
            let t2 = tape.mul(b, oi)?;
            let t3 = tape.mul(c, oi)?;
            let t4 = tape.mul(d, or)?;
            let x = tape.add(t1, t2)?;
            let x = tape.add(x, t3)?;
            tape.sub(x, t4)?
        }
    };
    tape.reduce_sum(terms, 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpTrainConfig {
    pub kind: LpKind,
    pub dim: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub seed: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl LpTrainConfig {
    pub fn from_reader(c: &ReaderConfig) -> Self {
        Self {
            kind: c.lp.kind,
            dim: c.lp.dim,
            negatives: c.lp.negatives,
            epochs: c.epochs,
            seed: c.seed,
            batch_size: c.batch_size,
            learning_rate: c.learning_rate,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LpTrainReport {
    pub epoch_losses: Vec<f64>,
    /// Triple scores computed for the loss, positives and corruptions.
    pub score_evaluations: usize,
}

/// Attempts at drawing a corruption that is not a known fact.
const MAX_RESAMPLES: usize = 32;

/// Replaces the subject or the object (fair coin) with a uniform entity,
/// redrawing while the result is a known fact.
pub fn corrupt(store: &TripleStore, t: Triple, rng: &mut ChaCha8Rng) -> Triple {
    let n = store.num_entities();
    let mut c = t;
    for _ in 0..MAX_RESAMPLES {
        c = t;
        if rng.gen_bool(0.5) {
            c.s = rng.gen_range(0..n);
        } else {
            c.o = rng.gen_range(0..n);
        }
        if !store.contains(c) {
            break;
        }
    }
    c
}

/// Trains with the logistic loss `softplus(-y * score)`, `y = +1` for the
/// facts of `store` and `-1` for `negatives` corruptions of each fact.
pub fn train_lp(
    store: &TripleStore,
    config: &LpTrainConfig,
) -> Result<(EmbeddingModel, LpTrainReport), LpError> {
    if store.is_empty() {
        return Err(LpError::EmptyStore);
    }
    if config.negatives == 0 || config.dim == 0 || config.batch_size == 0 {
        return Err(LpError::InvalidConfig(
            "negatives, dim and batch_size must be positive".into(),
        ));
    }
    let model = EmbeddingModel::new(
        config.kind,
        store.num_entities(),
        store.num_relations(),
        config.dim,
        config.seed,
    );
    let mut params = model.params();
    let mut adam = Adam::new(AdamConfig {
        lr: config.learning_rate,
        ..AdamConfig::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut report = LpTrainReport::default();
    let facts = store.triples().to_vec();
    for epoch in 0..config.epochs {
        let mut order = facts.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(
            config.seed.wrapping_add(epoch as u64),
        ));
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            let mut triples = chunk.to_vec();
            let mut labels = vec![1.0; chunk.len()];
            for &t in chunk {
                for _ in 0..config.negatives {
                    triples.push(corrupt(store, t, &mut rng));
                    labels.push(-1.0);
                }
            }
            report.score_evaluations += triples.len();
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape)?;
            let scores = score_on_tape(
                &mut tape,
                config.kind,
                config.dim,
                bound.var("entities")?,
                bound.var("relations")?,
                &triples,
            )?;
            let loss = tape.binary_logistic_loss(scores, &labels)?;
            total += tape.value(loss)[0];
            tape.backward(loss)?;
            adam.step(&mut params, &bound.grads(&tape))?;
            batches += 1;
        }
        report.epoch_losses.push(total / batches as f64);
    }
    let model = EmbeddingModel::from_tables(
        config.kind,
        config.dim,
        params.get("entities").expect("inserted above").clone(),
        params.get("relations").expect("inserted above").clone(),
    )?;
    Ok((model, report))
}

/// Rank of the gold entity in the `side` slot of `triple` among all
/// entities: one plus the number of candidates scoring strictly higher, so
/// ties favour the gold entity. In filtered mode candidates that form
/// another triple of `known` are skipped.
pub fn rank_entities(
    model: &EmbeddingModel,
    known: &TripleStore,
    triple: Triple,
    side: Side,
    filtered: bool,
) -> Result<RankingResult, LpError> {
    let exec = Execution::for_work(model.num_entities() * model.width());
    rank_entities_with(exec, model, known, triple, side, filtered)
}

/// [`rank_entities`] with an explicit execution mode for the candidate scan.
pub fn rank_entities_with(
    exec: Execution,
    model: &EmbeddingModel,
    known: &TripleStore,
    triple: Triple,
    side: Side,
    filtered: bool,
) -> Result<RankingResult, LpError> {
    let gold = model.score(triple.s, triple.p, triple.o)?;
    let n = model.num_entities();
    let p = model.relation_row(triple.p)?;
    let fixed = match side {
        Side::Subject => model.entity_row(triple.o)?,
        Side::Object => model.entity_row(triple.s)?,
    };
    let gold_id = match side {
        Side::Subject => triple.s,
        Side::Object => triple.o,
    };
    let better = par::map_range(n, exec, |e| {
        if e == gold_id {
            return false;
        }
        let candidate = match side {
            Side::Subject => Triple::new(e, triple.p, triple.o),
            Side::Object => Triple::new(triple.s, triple.p, e),
        };
        if filtered && known.contains(candidate) {
            return false;
        }
        let row = model.entity_row(e).expect("e < n");
        let s = match side {
            Side::Subject => score_rows(model.kind, model.dim, row, p, fixed),
            Side::Object => score_rows(model.kind, model.dim, fixed, p, row),
        };
        s > gold
    });
    Ok(RankingResult {
        rank: 1 + better.into_iter().filter(|&b| b).count(),
        filtered,
    })
}

/// Subject and object ranks of every test triple.
pub fn rank_all(
    model: &EmbeddingModel,
    known: &TripleStore,
    test: &[Triple],
    filtered: bool,
) -> Result<Vec<RankingResult>, LpError> {
    let mut out = Vec::with_capacity(2 * test.len());
    for &t in test {
        out.push(rank_entities(model, known, t, Side::Subject, filtered)?);
        out.push(rank_entities(model, known, t, Side::Object, filtered)?);
    }
    Ok(out)
}

/// MRR, hits@1, hits@3 and hits@10 over both slots of every test triple.
pub fn evaluate_lp(
    model: &EmbeddingModel,
    known: &TripleStore,
    test: &[Triple],
    filtered: bool,
) -> Result<Vec<MetricReport>, ReaderError> {
    let ranks =
        rank_all(model, known, test, filtered).map_err(|e| ReaderError::Config(e.to_string()))?;
    Ok(ranking_metrics(&ranks, &[1, 3, 10])?)
}

/// A trained link-prediction model with its vocabulary of names and the
/// facts it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct LpBundle {
    pub config: ReaderConfig,
    pub model: EmbeddingModel,
    pub store: TripleStore,
}

pub const ENTITIES_FILE: &str = "entities.txt";
pub const RELATIONS_FILE: &str = "relations.txt";
pub const TRIPLES_FILE: &str = "triples.tsv";

fn lines_of(names: &[String]) -> String {
    names.iter().map(|n| format!("{n}\n")).collect()
}

/// Writes `config.toml`, the entity and relation names, the training
/// triples and `params.ckpt`.
pub fn save_lp(bundle: &LpBundle, dir: &Path) -> Result<(), ReaderError> {
    write_config(dir, Task::Lp, &bundle.config)?;
    fs::write(dir.join(ENTITIES_FILE), lines_of(bundle.store.entities()))?;
    fs::write(dir.join(RELATIONS_FILE), lines_of(bundle.store.relations()))?;
    fs::write(dir.join(TRIPLES_FILE), bundle.store.to_tsv())?;
    write_params(dir, &bundle.model.params())
}

pub fn load_lp(dir: &Path) -> Result<LpBundle, ReaderError> {
    let (task, config) = read_config(dir)?;
    if task != Task::Lp {
        return Err(ReaderError::Config(format!(
            "{} holds a {task} reader",
            dir.display()
        )));
    }
    let mut store = TripleStore::new();
    for e in read_file(dir, ENTITIES_FILE)?.lines() {
        store.add_entity(e);
    }
    for r in read_file(dir, RELATIONS_FILE)?.lines() {
        store.add_relation(r);
    }
    let (ne, nr) = (store.num_entities(), store.num_relations());
    read_triples_into(&read_file(dir, TRIPLES_FILE)?, &mut store)
        .map_err(|e| ReaderError::CorruptCheckpoint(format!("{TRIPLES_FILE}: {e}")))?;
    if store.num_entities() != ne || store.num_relations() != nr {
        return Err(ReaderError::CorruptCheckpoint(format!(
            "{TRIPLES_FILE} names entities or relations missing from the name lists"
        )));
    }
    let mut expected = EmbeddingModel::new(config.lp.kind, ne, nr, config.lp.dim, 0).params();
    expected
        .assign_from(read_params(dir)?)
        .map_err(|e| match e {
            EngineError::CorruptCheckpoint(m) => ReaderError::CorruptCheckpoint(m),
            other => other.into(),
        })?;
    let model = EmbeddingModel::from_tables(
        config.lp.kind,
        config.lp.dim,
        expected.get("entities").expect("present").clone(),
        expected.get("relations").expect("present").clone(),
    )
    .map_err(|e| ReaderError::CorruptCheckpoint(e.to_string()))?;
    Ok(LpBundle {
        config,
        model,
        store,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table(rows: usize, data: Vec<f64>) -> Tensor {
        let w = data.len() / rows;
        Tensor::from_f64(vec![rows, w], data).unwrap()
    }

    #[test]
    fn distmult_hand_case() {
        let m = EmbeddingModel::from_tables(
            LpKind::DistMult,
            2,
            table(2, vec![1.0, 2.0, 3.0, 4.0]),
            table(1, vec![1.0, 0.0]),
        )
        .unwrap();
        assert_eq!(m.score(0, 0, 1).unwrap(), 3.0);
        assert!(matches!(
            m.score(0, 0, 2),
            Err(LpError::IdOutOfRange { id: 2, .. })
        ));
        assert!(matches!(
            m.score(0, 1, 0),
            Err(LpError::IdOutOfRange {
                kind: "relation",
                ..
            })
        ));
    }

    #[test]
    fn complex_hand_case() {
        // s = 1+i, p = 2, o = i
        let m = EmbeddingModel::from_tables(
            LpKind::ComplEx,
            1,
            table(2, vec![1.0, 1.0, 0.0, 1.0]),
            table(1, vec![2.0, 0.0]),
        )
        .unwrap();
        assert_eq!(m.score(0, 0, 1).unwrap(), 2.0);
    }

    #[test]
    fn complex_breaks_symmetry() {
        let m = EmbeddingModel::from_tables(
            LpKind::ComplEx,
            1,
            table(2, vec![1.0, 0.0, 0.0, 1.0]),
            table(1, vec![0.0, 1.0]),
        )
        .unwrap();
        assert_ne!(m.score(0, 0, 1).unwrap(), m.score(1, 0, 0).unwrap());
    }

    #[test]
    fn tape_scores_match_direct_scores() {
        for kind in [LpKind::DistMult, LpKind::ComplEx] {
            let m = EmbeddingModel::new(kind, 5, 2, 3, 11);
            let triples = vec![
                Triple::new(0, 1, 4),
                Triple::new(3, 0, 3),
                Triple::new(2, 1, 0),
            ];
            let mut tape = Tape::new();
            let e = tape.param(&m.entities).unwrap();
            let r = tape.param(&m.relations).unwrap();
            let s = score_on_tape(&mut tape, kind, 3, e, r, &triples).unwrap();
            for (i, t) in triples.iter().enumerate() {
                assert!((tape.value(s)[i] - m.score(t.s, t.p, t.o).unwrap()).abs() < 1e-12);
            }
        }
    }

    fn ranking_model() -> (EmbeddingModel, TripleStore) {
        // With subject "s" every candidate (v, 0) scores exactly v, while
        // "s" itself scores 2 - 10 = -8.
        let mut store = TripleStore::new();
        for name in ["gold", "a", "b", "c", "s"] {
            store.add_entity(name);
        }
        store.add_relation("r");
        store.insert("s", "r", "gold");
        let m = EmbeddingModel::from_tables(
            LpKind::DistMult,
            2,
            table(5, vec![0.9, 0.0, 0.5, 0.0, 0.7, 0.0, 0.95, 0.0, 2.0, 1.0]),
            table(1, vec![0.5, -10.0]),
        )
        .unwrap();
        (m, store)
    }

    #[test]
    fn ranking_hand_cases() {
        let (m, mut store) = ranking_model();
        let q = Triple::new(4, 0, 0);
        assert_eq!(
            rank_entities(&m, &store, q, Side::Object, false)
                .unwrap()
                .rank,
            2
        );
        assert_eq!(
            rank_entities(&m, &store, q, Side::Object, true)
                .unwrap()
                .rank,
            2
        );
        store.insert("s", "r", "c");
        assert_eq!(
            rank_entities(&m, &store, q, Side::Object, true)
                .unwrap()
                .rank,
            1
        );
        assert_eq!(
            rank_entities(&m, &store, q, Side::Object, false)
                .unwrap()
                .rank,
            2
        );
    }

    #[test]
    fn single_entity_graph() {
        let mut store = TripleStore::new();
        store.insert("x", "r", "x");
        let m = EmbeddingModel::new(LpKind::ComplEx, 1, 1, 4, 0);
        for side in [Side::Subject, Side::Object] {
            assert_eq!(
                rank_entities(&m, &store, Triple::new(0, 0, 0), side, false)
                    .unwrap()
                    .rank,
                1
            );
        }
    }

    #[test]
    fn corruptions_avoid_known_facts() {
        let mut store = TripleStore::new();
        for i in 0..6 {
            store.insert(&format!("e{i}"), "r", &format!("e{}", (i + 1) % 6));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for &t in store.triples() {
            for _ in 0..20 {
                let c = corrupt(&store, t, &mut rng);
                assert!(!store.contains(c));
                assert!(c.s == t.s || c.o == t.o);
                assert_eq!(c.p, t.p);
            }
        }
    }

    #[test]
    fn score_evaluation_accounting_and_determinism() {
        let mut store = TripleStore::new();
        for i in 0..12 {
            store.insert(
                &format!("e{i}"),
                if i % 2 == 0 { "r" } else { "q" },
                &format!("e{}", (i + 3) % 12),
            );
        }
        let config = LpTrainConfig {
            kind: LpKind::DistMult,
            dim: 8,
            negatives: 1,
            epochs: 1,
            seed: 5,
            batch_size: 12,
            learning_rate: 0.01,
        };
        let (a, report) = train_lp(&store, &config).unwrap();
        assert_eq!(report.score_evaluations, 2 * store.len());
        let (b, _) = train_lp(&store, &config).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn distmult_is_symmetric(seed in any::<u64>(), s in 0usize..6, p in 0usize..3, o in 0usize..6) {
            let m = EmbeddingModel::new(LpKind::DistMult, 6, 3, 5, seed);
            prop_assert_eq!(m.score(s, p, o).unwrap(), m.score(o, p, s).unwrap());
        }

        #[test]
        fn filtering_never_worsens_a_rank(seed in any::<u64>(), s in 0usize..6, o in 0usize..6, extra in prop::collection::vec((0usize..6, 0usize..6), 0..8)) {
            let mut store = TripleStore::new();
            for i in 0..6 {
                store.add_entity(&format!("e{i}"));
            }
            store.add_relation("r");
            for (a, b) in extra {
                store.insert_ids(Triple::new(a, 0, b));
            }
            let m = EmbeddingModel::new(LpKind::ComplEx, 6, 1, 3, seed);
            let t = Triple::new(s, 0, o);
            for side in [Side::Subject, Side::Object] {
                let raw = rank_entities(&m, &store, t, side, false).unwrap().rank;
                let filtered = rank_entities(&m, &store, t, side, true).unwrap().rank;
                prop_assert!(raw >= filtered);
                prop_assert!(raw <= 6);
            }
        }
    }
}
