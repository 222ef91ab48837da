//! Exact-separation construction: raw-mode parameters under which every
//! true fact scores its arity and every other tuple scores zero.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{RamError, Result};
use crate::kb::{build_kb, Fact, RawFact};
use crate::math::rng_for;
use crate::model::{Layout, Mode, ModelConfig, ModelParams, Scorer, TensorId};

/// Largest number of candidate tuples [`verify_separation`] enumerates.
pub const ENUMERATION_CAP: u128 = 1_000_000;

/// The complete set of true facts over a small vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub facts: Vec<Fact>,
    pub n_entities: usize,
    pub relation_arity: Vec<usize>,
}

impl GroundTruth {
    pub fn new(facts: Vec<Fact>, n_entities: usize, relation_arity: Vec<usize>) -> Result<Self> {
        let mut seen = HashSet::new();
        for f in &facts {
            if relation_arity.get(f.relation) != Some(&f.arity()) {
                return Err(RamError::Data(format!("fact {f:?} does not match its relation")));
            }
            if f.entities.iter().any(|&e| e >= n_entities) {
                return Err(RamError::Data(format!("fact {f:?} uses an unknown entity")));
            }
            if !seen.insert((f.relation, f.entities.clone())) {
                return Err(RamError::Data(format!("duplicate fact {f:?}")));
            }
        }
        Ok(Self {
            facts,
            n_entities,
            relation_arity,
        })
    }

    /// Index raw facts by first appearance.
    pub fn from_raw(raw: &[RawFact]) -> Result<Self> {
        let kb = build_kb(raw, &[], &[], false)?;
        Self::new(kb.train, kb.vocab.n_entities(), kb.vocab.relation_arities())
    }

    pub fn eta(&self) -> usize {
        self.facts.len()
    }

    /// Random ground truth with `1..=max_eta` distinct facts over
    /// `2..=max_entities` entities and arities in `2..=max_arity`, capped
    /// by the number of distinct tuples available.
    pub fn random<R: Rng>(rng: &mut R, max_eta: usize, max_entities: usize, max_arity: usize) -> Self {
        let n_entities = rng.random_range(2..=max_entities);
        let n_rel = rng.random_range(1..=3);
        let relation_arity: Vec<usize> = (0..n_rel).map(|_| rng.random_range(2..=max_arity)).collect();
        let available = relation_arity
            .iter()
            .map(|&a| n_entities.saturating_pow(a as u32))
            .fold(0usize, usize::saturating_add);
        let target = rng.random_range(1..=max_eta).min(available);
        let mut facts = Vec::new();
        let mut seen = HashSet::new();
        while facts.len() < target {
            let r = rng.random_range(0..n_rel);
            let ents: Vec<usize> = (0..relation_arity[r]).map(|_| rng.random_range(0..n_entities)).collect();
            if seen.insert((r, ents.clone())) {
                facts.push(Fact::new(r, ents));
            }
        }
        Self {
            facts,
            n_entities,
            relation_arity,
        }
    }

    /// Same facts with entity `e` renamed to `perm[e]`.
    pub fn relabeled(&self, perm: &[usize]) -> Self {
        let facts = self
            .facts
            .iter()
            .map(|f| Fact::new(f.relation, f.entities.iter().map(|&e| perm[e]).collect()))
            .collect();
        Self {
            facts,
            n_entities: self.n_entities,
            relation_arity: self.relation_arity.clone(),
        }
    }

    fn tuple_count(&self) -> u128 {
        self.relation_arity
            .iter()
            .map(|&a| (self.n_entities as u128).saturating_pow(a as u32))
            .fold(0u128, u128::saturating_add)
    }
}

/// Raw-mode parameters with `d = η`, `m = max arity`: entity `e` has a 1 at
/// `[i, j]` iff it fills position `i` of fact `j`; every pattern is
/// `[I_a, 0]`; role vectors mark the facts of their relation.
pub fn construct(gt: &GroundTruth) -> Result<ModelParams> {
    let eta = gt.eta();
    if eta == 0 {
        return Err(RamError::Config("ground truth needs at least one fact".into()));
    }
    let m = gt.relation_arity.iter().copied().max().unwrap_or(2);
    let layout = Layout::from_arities(gt.n_entities, gt.relation_arity.clone(), None, Mode::Raw)?;
    let mut cfg = ModelConfig::new(eta, m, eta, Mode::Raw)?;
    cfg.init_std = 0.0;
    let mut params = ModelParams::zeros(cfg, layout)?;

    let ent = params.tensor_mut(TensorId::Entity);
    for (j, f) in gt.facts.iter().enumerate() {
        for (i, &e) in f.entities.iter().enumerate() {
            ent.block_mut(e)[i * eta + j] = 1.0;
        }
    }
    let n_slots = params.layout.n_slots;
    for slot in 0..n_slots {
        let (r, _) = params.layout.slot_owner(slot);
        let a = gt.relation_arity[r];
        let pat = params.tensor_mut(TensorId::RolePatterns).block_mut(slot);
        for row in 0..a {
            pat[row * m + row] = 1.0;
        }
        let u = params.tensor_mut(TensorId::RoleVectors).block_mut(slot);
        for (j, f) in gt.facts.iter().enumerate() {
            if f.relation == r {
                u[j] = 1.0;
            }
        }
    }
    Ok(params)
}

#[derive(Debug, Clone, Serialize)]
pub struct SeparationReport {
    pub eta: usize,
    pub tuples: u128,
    pub min_true_score: f64,
    /// `None` when every tuple is a true fact.
    pub max_false_score: Option<f64>,
    /// Every true fact scored exactly its arity.
    pub true_scores_equal_arity: bool,
    pub pass: bool,
}

/// Score every tuple of every relation; pass iff all true facts score
/// above zero and every other tuple (if any) scores exactly zero.
pub fn verify_separation(gt: &GroundTruth, params: &ModelParams) -> Result<SeparationReport> {
    if gt.eta() == 0 {
        return Err(RamError::Config("ground truth needs at least one fact".into()));
    }
    let tuples = gt.tuple_count();
    if tuples > ENUMERATION_CAP {
        return Err(RamError::EnumerationCap {
            needed: tuples,
            cap: ENUMERATION_CAP,
        });
    }
    let truth: HashSet<(usize, Vec<usize>)> = gt.facts.iter().map(|f| (f.relation, f.entities.clone())).collect();
    let scorer = Scorer::new(params);
    let n = gt.n_entities;

    let mut jobs = Vec::new();
    for (r, &a) in gt.relation_arity.iter().enumerate() {
        jobs.extend((0..n.pow(a as u32)).map(move |code| (r, a, code)));
    }
    let scored: Vec<Result<(bool, f64, usize)>> = jobs
        .par_iter()
        .map(|&(r, a, code)| {
            let mut c = code;
            let ents: Vec<usize> = (0..a)
                .map(|_| {
                    let e = c % n;
                    c /= n;
                    e
                })
                .collect();
            let fact = Fact::new(r, ents);
            let s = scorer.score(&fact)?;
            Ok((truth.contains(&(r, fact.entities)), s, a))
        })
        .collect();

    let mut min_true = f64::INFINITY;
    let mut max_false: Option<f64> = None;
    let mut exact = true;
    for item in scored {
        let (is_true, s, a) = item?;
        if is_true {
            min_true = min_true.min(s);
            exact &= s == a as f64;
        } else {
            max_false = Some(max_false.map_or(s, |m: f64| m.max(s)));
        }
    }
    Ok(SeparationReport {
        eta: gt.eta(),
        tuples,
        min_true_score: min_true,
        max_false_score: max_false,
        true_scores_equal_arity: exact,
        pass: min_true > 0.0 && max_false.is_none_or(|m| m == 0.0),
    })
}

/// Random entity permutation, for relabeling checks.
pub fn random_permutation<R: Rng>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

/// Run construct + verify on `count` random ground truths.
pub fn check_random_ground_truths(count: usize, seed: u64) -> Result<Vec<SeparationReport>> {
    (0..count)
        .map(|i| {
            let gt = GroundTruth::random(&mut rng_for(seed, &[i as u64]), 6, 8, 4);
            verify_separation(&gt, &construct(&gt)?)
        })
        .collect()
}
