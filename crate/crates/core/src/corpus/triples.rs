use std::collections::{BTreeSet, HashMap, HashSet};

use super::CorpusError;

/// `(subject, predicate, object)` as dense ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub s: usize,
    pub p: usize,
    pub o: usize,
}

impl Triple {
    pub fn new(s: usize, p: usize, o: usize) -> Self {
        Self { s, p, o }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct Symbols {
    names: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Symbols {
    fn intern(&mut self, name: &str) -> usize {
        if let Some(&id) = self.ids.get(name) {
            return id;
        }
        let id = self.names.len();
        self.names.push(name.to_string());
        self.ids.insert(name.to_string(), id);
        id
    }
}

/// Fact set with dense entity/relation ids (first-appearance order) and
/// `(s, p) -> objects`, `(p, o) -> subjects` indexes.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TripleStore {
    entities: Symbols,
    relations: Symbols,
    triples: Vec<Triple>,
    known: HashSet<Triple>,
    by_subject: HashMap<(usize, usize), BTreeSet<usize>>,
    by_object: HashMap<(usize, usize), BTreeSet<usize>>,
}

impl TripleStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Interns the three names and records the fact. Returns `false` when the
    /// fact was already present.
    pub fn insert(&mut self, s: &str, p: &str, o: &str) -> bool {
        let t = Triple::new(
            self.entities.intern(s),
            self.relations.intern(p),
            self.entities.intern(o),
        );
        self.insert_ids(t)
    }

    pub fn add_entity(&mut self, name: &str) -> usize {
        self.entities.intern(name)
    }

    pub fn add_relation(&mut self, name: &str) -> usize {
        self.relations.intern(name)
    }

    /// Records a fact over existing ids.
    pub fn insert_ids(&mut self, t: Triple) -> bool {
        assert!(
            t.s < self.num_entities() && t.o < self.num_entities() && t.p < self.num_relations()
        );
        if !self.known.insert(t) {
            return false;
        }
        self.triples.push(t);
        self.by_subject.entry((t.s, t.p)).or_default().insert(t.o);
        self.by_object.entry((t.p, t.o)).or_default().insert(t.s);
        true
    }

    /// Resolves names against this store's ids without adding anything.
    pub fn lookup(&self, s: &str, p: &str, o: &str) -> Result<Triple, CorpusError> {
        let ent = |n: &str| {
            self.entity_id(n).ok_or_else(|| CorpusError::UnknownSymbol {
                kind: "entity",
                name: n.to_string(),
            })
        };
        let rel = self
            .relation_id(p)
            .ok_or_else(|| CorpusError::UnknownSymbol {
                kind: "relation",
                name: p.to_string(),
            })?;
        Ok(Triple::new(ent(s)?, rel, ent(o)?))
    }

    pub fn entity_id(&self, name: &str) -> Option<usize> {
        self.entities.ids.get(name).copied()
    }

    pub fn relation_id(&self, name: &str) -> Option<usize> {
        self.relations.ids.get(name).copied()
    }

    pub fn entity(&self, id: usize) -> &str {
        &self.entities.names[id]
    }

    pub fn relation(&self, id: usize) -> &str {
        &self.relations.names[id]
    }

    pub fn entities(&self) -> &[String] {
        &self.entities.names
    }

    pub fn relations(&self) -> &[String] {
        &self.relations.names
    }

    pub fn num_entities(&self) -> usize {
        self.entities.names.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.names.len()
    }

    /// Distinct facts in first-insertion order.
    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn contains(&self, t: Triple) -> bool {
        self.known.contains(&t)
    }

    /// Objects `o` with `(s, p, o)` known, ascending.
    pub fn objects(&self, s: usize, p: usize) -> impl Iterator<Item = usize> + '_ {
        self.by_subject.get(&(s, p)).into_iter().flatten().copied()
    }

    /// Subjects `s` with `(s, p, o)` known, ascending.
    pub fn subjects(&self, p: usize, o: usize) -> impl Iterator<Item = usize> + '_ {
        self.by_object.get(&(p, o)).into_iter().flatten().copied()
    }

    /// Same symbol tables, no facts.
    pub fn empty_like(&self) -> TripleStore {
        TripleStore {
            entities: self.entities.clone(),
            relations: self.relations.clone(),
            ..TripleStore::default()
        }
    }

    /// Tab-separated `subject predicate object` lines.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for t in &self.triples {
            out.push_str(&format!(
                "{}\t{}\t{}\n",
                self.entity(t.s),
                self.relation(t.p),
                self.entity(t.o)
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_follow_first_appearance() {
        let mut st = TripleStore::new();
        st.insert("b", "r", "a");
        st.insert("a", "q", "c");
        assert_eq!(st.entities(), &["b", "a", "c"]);
        assert_eq!(st.relations(), &["r", "q"]);
        assert!(!st.insert("b", "r", "a"));
        assert_eq!(st.len(), 2);
    }

    #[test]
    fn index_matches_scan() {
        let mut st = TripleStore::new();
        for (s, p, o) in [
            ("a", "r", "b"),
            ("a", "r", "c"),
            ("d", "r", "c"),
            ("a", "q", "b"),
        ] {
            st.insert(s, p, o);
        }
        for s in 0..st.num_entities() {
            for p in 0..st.num_relations() {
                let scan: Vec<usize> = (0..st.num_entities())
                    .filter(|&o| st.contains(Triple::new(s, p, o)))
                    .collect();
                assert_eq!(st.objects(s, p).collect::<Vec<_>>(), scan);
                let scan: Vec<usize> = (0..st.num_entities())
                    .filter(|&x| st.contains(Triple::new(x, p, s)))
                    .collect();
                assert_eq!(st.subjects(p, s).collect::<Vec<_>>(), scan);
            }
        }
    }
}
