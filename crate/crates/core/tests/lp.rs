use mreader::corpus::{Triple, TripleStore};
use mreader::framework::LpKind;
use mreader::zoo::{self, corrupt, evaluate_lp, rank_all, LpTrainConfig, Side};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn family() -> TripleStore {
    let mut kg = TripleStore::new();
    for (s, p, o) in [
        ("ann", "parent_of", "bob"),
        ("ann", "parent_of", "cat"),
        ("bob", "parent_of", "dan"),
        ("cat", "parent_of", "eve"),
        ("bob", "sibling_of", "cat"),
        ("cat", "sibling_of", "bob"),
        ("dan", "cousin_of", "eve"),
        ("eve", "cousin_of", "dan"),
        ("ann", "lives_in", "oslo"),
        ("bob", "lives_in", "oslo"),
        ("cat", "lives_in", "rome"),
        ("dan", "lives_in", "rome"),
    ] {
        kg.insert(s, p, o);
    }
    kg
}

#[test]
fn training_separates_facts_from_corruptions() {
    let kg = family();
    assert_eq!(kg.len(), 12);
    for kind in [LpKind::DistMult, LpKind::ComplEx] {
        let config = LpTrainConfig {
            kind,
            dim: 8,
            negatives: 1,
            epochs: 200,
            seed: 11,
            batch_size: 4,
            learning_rate: 0.05,
        };
        let (model, report) = zoo::train_lp(&kg, &config).unwrap();
        assert!(report.epoch_losses.last().unwrap() < &report.epoch_losses[0]);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let (mut pos, mut neg) = (0.0, 0.0);
        for &t in kg.triples() {
            pos += model.score(t.s, t.p, t.o).unwrap();
            for _ in 0..10 {
                let c = corrupt(&kg, t, &mut rng);
                neg += model.score(c.s, c.p, c.o).unwrap() / 10.0;
            }
        }
        assert!(pos > neg, "{kind:?}: positives {pos} negatives {neg}");
    }
}

#[test]
fn training_facts_rank_near_the_top() {
    let kg = family();
    let config = LpTrainConfig {
        kind: LpKind::ComplEx,
        dim: 16,
        negatives: 2,
        epochs: 300,
        seed: 3,
        batch_size: 4,
        learning_rate: 0.05,
    };
    let (model, _) = zoo::train_lp(&kg, &config).unwrap();
    let reports = evaluate_lp(&model, &kg, kg.triples(), true).unwrap();
    let mrr = reports.iter().find(|r| r.name == "mrr").unwrap().value;
    assert!(mrr > 0.5, "filtered training MRR {mrr}");
    let ranks = rank_all(&model, &kg, kg.triples(), true).unwrap();
    assert_eq!(ranks.len(), 2 * kg.len());
}

#[test]
fn ranking_rejects_unknown_ids() {
    let kg = family();
    let model = zoo::EmbeddingModel::new(
        LpKind::DistMult,
        kg.num_entities(),
        kg.num_relations(),
        4,
        0,
    );
    let bad = Triple::new(kg.num_entities(), 0, 0);
    assert!(zoo::rank_entities(&model, &kg, bad, Side::Object, false).is_err());
    assert!(model.score(0, kg.num_relations(), 0).is_err());
}
