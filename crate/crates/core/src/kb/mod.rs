//! Knowledge-base ingestion: vocabularies, indexed facts, and the
//! filtered-truth index used by ranking.
//!
//! Relations are keyed by `(name, arity)`, so one surface name used at two
//! arities becomes two independent relations. Vocabularies span the union of
//! all splits, so evaluation never meets an unknown entity.

mod parse;
mod subset;

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::hash::Hash;
use std::io::{BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{RamError, Result};
use crate::math::rng_for;

pub use parse::{parse_role_json, parse_tabular, RawFact, RoleJsonFacts, ROLE_SIGNATURE_SEP};
pub use subset::{sample_train_fraction, subset_by_arity};

/// Dense, bidirectional name ↔ index map.
#[derive(Debug, Clone, Default)]
pub struct Indexer<K: Eq + Hash> {
    names: Vec<K>,
    lookup: HashMap<K, usize>,
}

impl<K: Eq + Hash + Clone> Indexer<K> {
    pub fn from_names(names: Vec<K>) -> Self {
        let lookup = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        Self { names, lookup }
    }

    /// Index of `key`, inserting it if new.
    pub fn intern(&mut self, key: &K) -> usize {
        if let Some(&i) = self.lookup.get(key) {
            return i;
        }
        let i = self.names.len();
        self.names.push(key.clone());
        self.lookup.insert(key.clone(), i);
        i
    }

    pub fn get(&self, key: &K) -> Option<usize> {
        self.lookup.get(key).copied()
    }

    pub fn name(&self, idx: usize) -> &K {
        &self.names[idx]
    }

    pub fn names(&self) -> &[K] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// Entity, relation and (optionally) role vocabularies.
#[derive(Debug, Clone, Default)]
pub struct Vocabulary {
    pub entities: Indexer<String>,
    pub relations: Indexer<(String, usize)>,
    /// Global role names; present only for explicit-role datasets.
    pub roles: Option<Indexer<String>>,
    /// For explicit-role datasets, the global role id at each position of
    /// each relation.
    pub relation_roles: Vec<Option<Vec<usize>>>,
    pub max_arity: usize,
}

impl Vocabulary {
    pub fn n_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn n_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn arity(&self, relation: usize) -> usize {
        self.relations.name(relation).1
    }

    pub fn relation_arities(&self) -> Vec<usize> {
        self.relations.names().iter().map(|(_, a)| *a).collect()
    }

    /// Sorted distinct arities.
    pub fn arities(&self) -> Vec<usize> {
        self.relations
            .names()
            .iter()
            .map(|(_, a)| *a)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn relation_label(&self, relation: usize) -> String {
        let (name, arity) = self.relations.name(relation);
        format!("{name}/{arity}")
    }
}

/// A fact with vocabulary indices. Positions are 0-based.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Fact {
    pub relation: usize,
    pub entities: Vec<usize>,
    pub roles: Option<Vec<usize>>,
}

impl Fact {
    pub fn new(relation: usize, entities: Vec<usize>) -> Self {
        Self {
            relation,
            entities,
            roles: None,
        }
    }

    pub fn arity(&self) -> usize {
        self.entities.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl std::str::FromStr for Split {
    type Err = RamError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(RamError::Config(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct QueryKey {
    relation: usize,
    position: usize,
    /// The fact's entities with `position` blanked out.
    others: Vec<usize>,
}

const BLANK: usize = usize::MAX;

impl QueryKey {
    fn new(fact: &Fact, position: usize) -> Self {
        let mut others = fact.entities.clone();
        others[position] = BLANK;
        Self {
            relation: fact.relation,
            position,
            others,
        }
    }
}

/// Every entity known to be true at `(relation, position, other entities)`
/// in any split.
#[derive(Debug, Clone, Default)]
pub struct TruthIndex {
    answers: HashMap<QueryKey, Vec<usize>>,
}

impl TruthIndex {
    pub fn build<'a>(facts: impl IntoIterator<Item = &'a Fact>) -> Self {
        let mut answers: HashMap<QueryKey, Vec<usize>> = HashMap::new();
        for fact in facts {
            for pos in 0..fact.arity() {
                answers
                    .entry(QueryKey::new(fact, pos))
                    .or_default()
                    .push(fact.entities[pos]);
            }
        }
        for v in answers.values_mut() {
            v.sort_unstable();
            v.dedup();
        }
        Self { answers }
    }

    /// Entities known true at `position` of `fact`, others held fixed.
    pub fn answers(&self, fact: &Fact, position: usize) -> &[usize] {
        self.answers
            .get(&QueryKey::new(fact, position))
            .map_or(&[], Vec::as_slice)
    }

    pub fn contains(&self, fact: &Fact) -> bool {
        fact.arity() > 0 && self.answers(fact, 0).binary_search(&fact.entities[0]).is_ok()
    }

    /// Drop `fact` from the index at every position.
    pub fn remove(&mut self, fact: &Fact) {
        for pos in 0..fact.arity() {
            if let Some(v) = self.answers.get_mut(&QueryKey::new(fact, pos)) {
                v.retain(|&e| e != fact.entities[pos]);
            }
        }
    }
}

/// Counts reported alongside a built knowledge base.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct KbStats {
    /// Entities first seen outside the training split.
    pub eval_only_entities: usize,
    /// Relations first seen outside the training split.
    pub eval_only_relations: usize,
    pub dropped_facts: usize,
}

/// Indexed dataset plus the filtered-truth index. Immutable after build.
#[derive(Debug, Clone)]
pub struct KnowledgeBase {
    pub vocab: Vocabulary,
    pub train: Vec<Fact>,
    pub valid: Vec<Fact>,
    pub test: Vec<Fact>,
    pub truth: TruthIndex,
    pub stats: KbStats,
}

impl KnowledgeBase {
    pub fn split(&self, split: Split) -> &[Fact] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn n_entities(&self) -> usize {
        self.vocab.n_entities()
    }

    pub fn all_facts(&self) -> impl Iterator<Item = &Fact> {
        self.train.iter().chain(&self.valid).chain(&self.test)
    }

    pub(crate) fn rebuild_truth(&mut self) {
        self.truth = TruthIndex::build(self.train.iter().chain(&self.valid).chain(&self.test));
    }

    /// Convert a split back to name form.
    pub fn to_raw(&self, split: Split) -> Vec<RawFact> {
        self.split(split).iter().map(|f| self.raw_fact(f)).collect()
    }

    pub fn raw_fact(&self, f: &Fact) -> RawFact {
        let (name, _) = self.vocab.relations.name(f.relation);
        RawFact {
            relation: name.clone(),
            entities: f
                .entities
                .iter()
                .map(|&e| self.vocab.entities.name(e).clone())
                .collect(),
            roles: match (&f.roles, &self.vocab.roles) {
                (Some(rs), Some(names)) => Some(rs.iter().map(|&r| names.name(r).clone()).collect()),
                _ => None,
            },
        }
    }

    /// Write a split as JSON-lines
    /// `{"relation", "arity", "entities", "roles"?}`.
    pub fn write_normalized<W: Write>(&self, split: Split, mut out: W) -> Result<()> {
        #[derive(Serialize)]
        struct Row<'a> {
            relation: &'a str,
            arity: usize,
            entities: &'a [String],
            #[serde(skip_serializing_if = "Option::is_none")]
            roles: Option<&'a [String]>,
        }
        for raw in self.to_raw(split) {
            let row = Row {
                relation: &raw.relation,
                arity: raw.arity(),
                entities: &raw.entities,
                roles: raw.roles.as_deref(),
            };
            serde_json::to_writer(&mut out, &row)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Write a split as role-JSON (`{"role": "entity", …}` per line), the
    /// format [`parse_role_json`] reads. Errors if the KB has no role names.
    pub fn write_role_json<W: Write>(&self, split: Split, mut out: W) -> Result<()> {
        for raw in self.to_raw(split) {
            let roles = raw
                .roles
                .as_ref()
                .ok_or_else(|| RamError::Data(format!("fact of {:?} has no role names", raw.relation)))?;
            let obj: serde_json::Map<String, serde_json::Value> = roles
                .iter()
                .cloned()
                .zip(raw.entities.iter().cloned().map(serde_json::Value::String))
                .collect();
            serde_json::to_writer(&mut out, &obj)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Write a split in the tabular format.
    pub fn write_tabular<W: Write>(&self, split: Split, mut out: W) -> Result<()> {
        for raw in self.to_raw(split) {
            writeln!(out, "{}\t{}", raw.relation, raw.entities.join("\t"))?;
        }
        Ok(())
    }
}

/// Index raw splits into a [`KnowledgeBase`].
///
/// With `explicit_roles`, every fact must carry role names, and all facts of
/// a relation must list the same roles in the same order.
pub fn build_kb(
    train: &[RawFact],
    valid: &[RawFact],
    test: &[RawFact],
    explicit_roles: bool,
) -> Result<KnowledgeBase> {
    let mut vocab = Vocabulary {
        roles: explicit_roles.then(Indexer::default),
        ..Default::default()
    };
    let mut stats = KbStats::default();

    let mut index_split = |raws: &[RawFact], is_train: bool, vocab: &mut Vocabulary| -> Result<Vec<Fact>> {
        let mut out = Vec::with_capacity(raws.len());
        for raw in raws {
            if raw.arity() < 2 {
                return Err(RamError::Data(format!(
                    "fact {:?} has arity {} (< 2)",
                    raw.relation,
                    raw.arity()
                )));
            }
            let key = (raw.relation.clone(), raw.arity());
            let n_rel = vocab.relations.len();
            let relation = vocab.relations.intern(&key);
            if relation == n_rel {
                vocab.relation_roles.push(None);
                if !is_train {
                    stats.eval_only_relations += 1;
                }
            }
            let entities = raw
                .entities
                .iter()
                .map(|name| {
                    let n = vocab.entities.len();
                    let e = vocab.entities.intern(name);
                    if e == n && !is_train {
                        stats.eval_only_entities += 1;
                    }
                    e
                })
                .collect();
            let roles = if let Some(role_vocab) = vocab.roles.as_mut() {
                let names = raw.roles.as_ref().ok_or_else(|| {
                    RamError::Data(format!("fact of {:?} has no role names", raw.relation))
                })?;
                if names.len() != raw.arity() {
                    return Err(RamError::Data(format!(
                        "fact of {:?}: {} roles for {} entities",
                        raw.relation,
                        names.len(),
                        raw.arity()
                    )));
                }
                let ids: Vec<usize> = names.iter().map(|n| role_vocab.intern(n)).collect();
                match &vocab.relation_roles[relation] {
                    None => vocab.relation_roles[relation] = Some(ids.clone()),
                    Some(existing) if *existing != ids => {
                        return Err(RamError::Data(format!(
                            "relation {:?} used with inconsistent role orders",
                            raw.relation
                        )))
                    }
                    Some(_) => {}
                }
                Some(ids)
            } else {
                None
            };
            vocab.max_arity = vocab.max_arity.max(raw.arity());
            out.push(Fact {
                relation,
                entities,
                roles,
            });
        }
        Ok(out)
    };

    let train = index_split(train, true, &mut vocab)?;
    let valid = index_split(valid, false, &mut vocab)?;
    let test = index_split(test, false, &mut vocab)?;

    let mut kb = KnowledgeBase {
        vocab,
        train,
        valid,
        test,
        truth: TruthIndex::default(),
        stats,
    };
    kb.rebuild_truth();
    Ok(kb)
}

/// Candidate mask for filtered ranking at `position` (0-based) of `fact`.
///
/// `mask[e]` is false exactly for entities known true at this query, other
/// than the fact's own entity, which always stays a candidate.
pub fn filtered_candidates(kb: &KnowledgeBase, fact: &Fact, position: usize) -> Vec<bool> {
    let mut mask = vec![true; kb.n_entities()];
    for &e in kb.truth.answers(fact, position) {
        mask[e] = false;
    }
    mask[fact.entities[position]] = true;
    mask
}

/// Fraction of the training split moved to validation when a dataset ships
/// without one.
pub const CARVED_VALID_FRACTION: f64 = 0.2;

fn read_split(dir: &Path, stem: &str) -> Result<Option<(Vec<RawFact>, usize)>> {
    for (ext, json) in [("txt", false), ("json", true), ("jsonl", true)] {
        let path = dir.join(format!("{stem}.{ext}"));
        if path.is_file() {
            let reader = BufReader::new(File::open(&path)?);
            let tag = |e: RamError| match e {
                RamError::Parse { line, msg } => RamError::Parse {
                    line,
                    msg: format!("{}: {msg}", path.display()),
                },
                other => other,
            };
            return if json {
                let parsed = parse_role_json(reader).map_err(tag)?;
                Ok(Some((parsed.facts, parsed.dropped)))
            } else {
                Ok(Some((parse_tabular(reader).map_err(tag)?, 0)))
            };
        }
    }
    Ok(None)
}

/// Load `train`, `valid` and `test` splits from a directory.
///
/// Files may be `<split>.txt` (tabular) or `<split>.json`/`.jsonl`
/// (role-JSON). A missing validation split is carved from training
/// ([`CARVED_VALID_FRACTION`], seeded). Role-JSON input implies explicit
/// roles.
pub fn load_dataset_dir(dir: &Path, seed: u64) -> Result<KnowledgeBase> {
    if !dir.is_dir() {
        return Err(RamError::Data(format!("dataset directory {} not found", dir.display())));
    }
    let (mut train, d_train) = read_split(dir, "train")?
        .ok_or_else(|| RamError::Data(format!("no train split in {}", dir.display())))?;
    let (test, d_test) = read_split(dir, "test")?
        .ok_or_else(|| RamError::Data(format!("no test split in {}", dir.display())))?;
    let (valid, d_valid) = match read_split(dir, "valid")? {
        Some(v) => v,
        None => {
            let mut idx: Vec<usize> = (0..train.len()).collect();
            idx.shuffle(&mut rng_for(seed, &[0x7a11d]));
            let n_valid = (train.len() as f64 * CARVED_VALID_FRACTION).round() as usize;
            let mut is_valid = vec![false; train.len()];
            for &i in &idx[..n_valid] {
                is_valid[i] = true;
            }
            let (v, t): (Vec<_>, Vec<_>) = train
                .into_iter()
                .zip(is_valid)
                .partition(|(_, flag)| *flag);
            train = t.into_iter().map(|(f, _)| f).collect();
            (v.into_iter().map(|(f, _)| f).collect(), 0)
        }
    };
    let explicit = train.iter().any(|f| f.roles.is_some());
    let mut kb = build_kb(&train, &valid, &test, explicit)?;
    kb.stats.dropped_facts = d_train + d_valid + d_test;
    Ok(kb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn kb_of(train: &[RawFact]) -> KnowledgeBase {
        build_kb(train, &[], &[], false).unwrap()
    }

    #[test]
    fn relations_keyed_by_name_and_arity() {
        let kb = kb_of(&[
            RawFact::new("r", &["a", "b"]),
            RawFact::new("r", &["a", "b", "c"]),
            RawFact::new("r", &["c", "b"]),
        ]);
        assert_eq!(kb.vocab.n_relations(), 2);
        assert_eq!(kb.vocab.n_entities(), 3);
        assert_eq!(kb.vocab.max_arity, 3);
        assert_eq!(kb.vocab.arities(), vec![2, 3]);
        assert_eq!(kb.train[0].relation, kb.train[2].relation);
    }

    #[test]
    fn single_fact_truth_at_both_positions() {
        let kb = kb_of(&[RawFact::new("r", &["a", "b"])]);
        let f = &kb.train[0];
        assert_eq!(kb.truth.answers(f, 0), &[f.entities[0]]);
        assert_eq!(kb.truth.answers(f, 1), &[f.entities[1]]);
    }

    #[test]
    fn eval_only_entities_are_indexed_and_counted() {
        let kb = build_kb(
            &[RawFact::new("r", &["a", "b"])],
            &[RawFact::new("r", &["a", "z"])],
            &[RawFact::new("q", &["y", "b"])],
            false,
        )
        .unwrap();
        assert_eq!(kb.vocab.n_entities(), 4);
        assert_eq!(kb.stats.eval_only_entities, 2);
        assert_eq!(kb.stats.eval_only_relations, 1);
    }

    #[test]
    fn filter_excludes_other_true_entities() {
        let kb = kb_of(&[
            RawFact::new("r", &["a", "b"]),
            RawFact::new("r", &["c", "b"]),
            RawFact::new("r", &["d", "e"]),
        ]);
        let q = &kb.train[0];
        let mask = filtered_candidates(&kb, q, 0);
        let id = |n: &str| kb.vocab.entities.get(&n.to_string()).unwrap();
        assert!(mask[id("a")]);
        assert!(!mask[id("c")]);
        assert!(mask[id("b")] && mask[id("d")] && mask[id("e")]);
    }

    #[test]
    fn filter_single_fact_keeps_everything() {
        let kb = build_kb(
            &[RawFact::new("r", &["a", "b"])],
            &[],
            &[RawFact::new("s", &["c", "d"])],
            false,
        )
        .unwrap();
        assert!(filtered_candidates(&kb, &kb.train[0], 1).iter().all(|&m| m));
    }

    #[test]
    fn explicit_roles_are_indexed() {
        let parsed = parse_role_json(
            "{\"Actor\":\"S\",\"Character\":\"T-800\",\"Movie\":\"T2\"}\n{\"Director\":\"C\",\"Movie\":\"T2\"}\n"
                .as_bytes(),
        )
        .unwrap();
        let kb = build_kb(&parsed.facts, &[], &[], true).unwrap();
        let roles = kb.vocab.roles.as_ref().unwrap();
        assert_eq!(roles.len(), 4);
        let movie = roles.get(&"Movie".to_string()).unwrap();
        assert_eq!(kb.vocab.relation_roles[0].as_ref().unwrap()[2], movie);
        assert_eq!(kb.vocab.relation_roles[1].as_ref().unwrap()[1], movie);
    }

    #[test]
    fn explicit_roles_require_role_names() {
        assert!(build_kb(&[RawFact::new("r", &["a", "b"])], &[], &[], true).is_err());
    }

    #[test]
    fn normalized_export_lines() {
        let kb = kb_of(&[RawFact::new("r", &["a", "b", "c"])]);
        let mut buf = Vec::new();
        kb.write_normalized(Split::Train, &mut buf).unwrap();
        let v: serde_json::Value = serde_json::from_slice(buf.trim_ascii_end()).unwrap();
        assert_eq!(v["relation"], "r");
        assert_eq!(v["arity"], 3);
        assert_eq!(v["entities"][2], "c");
        assert!(v.get("roles").is_none());
    }

    #[test]
    fn load_dir_carves_validation() {
        let dir = tempfile::tempdir().unwrap();
        let mut train = String::new();
        for i in 0..50 {
            train.push_str(&format!("r\te{i}\te{}\n", i + 1));
        }
        std::fs::write(dir.path().join("train.txt"), train).unwrap();
        std::fs::write(dir.path().join("test.txt"), "r\te0\te2\n").unwrap();
        let kb = load_dataset_dir(dir.path(), 3).unwrap();
        assert_eq!(kb.valid.len(), 10);
        assert_eq!(kb.train.len(), 40);
        let again = load_dataset_dir(dir.path(), 3).unwrap();
        assert_eq!(kb.to_raw(Split::Valid), again.to_raw(Split::Valid));
    }

    #[test]
    fn load_dir_missing_train() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_dataset_dir(dir.path(), 0), Err(RamError::Data(_))));
    }

    fn arb_raw_facts(max: usize) -> impl Strategy<Value = Vec<RawFact>> {
        proptest::collection::vec(
            (0usize..3, proptest::collection::vec(0usize..8, 2..=4)),
            1..max,
        )
        .prop_map(|rows| {
            rows.into_iter()
                .map(|(r, es)| RawFact {
                    relation: format!("r{r}"),
                    entities: es.iter().map(|e| format!("e{e}")).collect(),
                    roles: None,
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn round_trip_reproduces_multiset(train in arb_raw_facts(30), test in arb_raw_facts(10)) {
            let kb = build_kb(&train, &[], &test, false).unwrap();
            let mut a = kb.to_raw(Split::Train);
            let mut b = train.clone();
            a.sort();
            b.sort();
            prop_assert_eq!(a, b);
            let mut a = kb.to_raw(Split::Test);
            let mut b = test.clone();
            a.sort();
            b.sort();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn truth_index_is_complete(train in arb_raw_facts(40), valid in arb_raw_facts(10)) {
            let kb = build_kb(&train, &valid, &[], false).unwrap();
            for f in kb.all_facts() {
                for pos in 0..f.arity() {
                    prop_assert!(kb.truth.answers(f, pos).contains(&f.entities[pos]));
                }
            }
        }

        #[test]
        fn filter_matches_brute_force(train in arb_raw_facts(50), pick in 0usize..50, pos_seed in 0usize..4) {
            let kb = kb_of(&train);
            let fact = &kb.train[pick % kb.train.len()];
            let pos = pos_seed % fact.arity();
            let mask = filtered_candidates(&kb, fact, pos);
            for e in 0..kb.n_entities() {
                let mut probe = fact.clone();
                probe.entities[pos] = e;
                let known = kb.all_facts().any(|g| g.relation == probe.relation && g.entities == probe.entities);
                let want = e == fact.entities[pos] || !known;
                prop_assert_eq!(mask[e], want);
            }
        }
    }
}
