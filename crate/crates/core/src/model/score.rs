//! Term construction and fact scoring.

use std::collections::BTreeMap;

use rand::Rng;

use super::{preset_patterns, Mode, ModelParams, TensorId};
use crate::error::{RamError, Result};
use crate::kb::Fact;
use crate::math::{axpy, contract_rows_into, dot, softmax, softmax_in_place, DenseMatrix};

/// One summand of a relation-position's score.
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    /// Role vector, length `d`.
    pub u: Vec<f64>,
    /// Pattern matrix, `a×m` row-major.
    pub p: Vec<f64>,
    pub omega: f64,
    /// Role-embedding index within the slot.
    pub j: usize,
    /// Pattern index within the role embedding.
    pub sub: usize,
}

/// Role vectors and patterns derived from the parameters, computed once and
/// reused for every fact scored against the same parameter values.
pub struct Scorer<'a> {
    pub params: &'a ModelParams,
    pub(crate) slot_terms: Vec<Vec<Term>>,
    /// Softmaxed role weights, one per `RoleWeights` block.
    pub(crate) simplex: Vec<Vec<f64>>,
    /// arity → per basis: `n_pmat` softmaxed `a×m` matrices, concatenated.
    pub(crate) basis_soft: BTreeMap<usize, Vec<Vec<f64>>>,
    /// Softmaxed `RolePatterns` blocks (explicit mode).
    pub(crate) pattern_soft: Vec<Vec<f64>>,
}

impl<'a> Scorer<'a> {
    pub fn new(params: &'a ModelParams) -> Self {
        Self::build(params, None)
    }

    /// Build terms only for the listed relations.
    pub fn for_relations(params: &'a ModelParams, relations: &[usize]) -> Self {
        Self::build(params, Some(relations))
    }

    fn build(params: &'a ModelParams, only: Option<&[usize]>) -> Self {
        let cfg = &params.config;
        let layout = &params.layout;
        let (d, m, k) = (cfg.d, cfg.m, cfg.k);
        let mut scorer = Scorer {
            params,
            slot_terms: vec![Vec::new(); layout.n_slots],
            simplex: Vec::new(),
            basis_soft: BTreeMap::new(),
            pattern_soft: Vec::new(),
        };
        let wanted = |r: usize| only.is_none_or(|rs| rs.contains(&r));

        match cfg.mode {
            Mode::Latent | Mode::Extended => {
                let weights = params.tensor(TensorId::RoleWeights);
                scorer.simplex = vec![Vec::new(); weights.n_blocks()];
                for &a in &layout.arities {
                    let t = params.tensor(TensorId::BasisMatrices(a));
                    let soft = (0..k)
                        .map(|kb| {
                            let mut b = t.block(kb).to_vec();
                            for chunk in b.chunks_mut(a * m) {
                                softmax_in_place(chunk);
                            }
                            b
                        })
                        .collect();
                    scorer.basis_soft.insert(a, soft);
                }
                let basis = params.tensor(TensorId::BasisVectors);
                let omega = params.tensors.get(&TensorId::Omega);
                for (r, &a) in layout.relation_arity.iter().enumerate() {
                    if !wanted(r) {
                        continue;
                    }
                    let soft = &scorer.basis_soft[&a];
                    for i in 0..a {
                        let slot = layout.slot(r, i);
                        let mut terms = Vec::with_capacity(cfg.terms_per_role());
                        for j in 0..cfg.m_gamma {
                            let wb = slot * cfg.m_gamma + j;
                            let s = softmax(weights.block(wb));
                            let mut u = vec![0.0; d];
                            for (kb, &sk) in s.iter().enumerate() {
                                axpy(sk, basis.block(kb), &mut u);
                            }
                            for sub in 0..cfg.n_pmat {
                                let mut p = vec![0.0; a * m];
                                for (kb, &sk) in s.iter().enumerate() {
                                    axpy(sk, &soft[kb][sub * a * m..(sub + 1) * a * m], &mut p);
                                }
                                let w = omega.map_or(1.0, |o| o.block(slot)[j * cfg.n_pmat + sub]);
                                terms.push(Term {
                                    u: u.clone(),
                                    p,
                                    omega: w,
                                    j,
                                    sub,
                                });
                            }
                            scorer.simplex[wb] = s;
                        }
                        scorer.slot_terms[slot] = terms;
                    }
                }
            }
            Mode::Explicit => {
                let pats = params.tensor(TensorId::RolePatterns);
                scorer.pattern_soft = (0..pats.n_blocks()).map(|b| softmax(pats.block(b))).collect();
                let vecs = params.tensor(TensorId::RoleVectors);
                for slot in 0..layout.n_slots {
                    if !wanted(layout.slot_owner(slot).0) {
                        continue;
                    }
                    scorer.slot_terms[slot] = vec![Term {
                        u: vecs.block(layout.slot_role[slot]).to_vec(),
                        p: scorer.pattern_soft[layout.slot_pattern[slot]].clone(),
                        omega: 1.0,
                        j: 0,
                        sub: 0,
                    }];
                }
            }
            Mode::Preset(kind) => {
                let preset = preset_patterns(kind);
                let vecs = params.tensor(TensorId::RoleVectors);
                for slot in 0..layout.n_slots {
                    let (r, i) = layout.slot_owner(slot);
                    if !wanted(r) {
                        continue;
                    }
                    let mut terms = Vec::new();
                    for j in 0..cfg.m_gamma {
                        for sub in 0..cfg.n_pmat {
                            let (p, sign) = &preset.terms[i][j][sub];
                            terms.push(Term {
                                u: vecs.block(slot * cfg.m_gamma + j).to_vec(),
                                p: p.as_slice().to_vec(),
                                omega: *sign,
                                j,
                                sub,
                            });
                        }
                    }
                    scorer.slot_terms[slot] = terms;
                }
            }
            Mode::Raw => {
                let vecs = params.tensor(TensorId::RoleVectors);
                let pats = params.tensor(TensorId::RolePatterns);
                for slot in 0..layout.n_slots {
                    if !wanted(layout.slot_owner(slot).0) {
                        continue;
                    }
                    scorer.slot_terms[slot] = vec![Term {
                        u: vecs.block(slot).to_vec(),
                        p: pats.block(slot).to_vec(),
                        omega: 1.0,
                        j: 0,
                        sub: 0,
                    }];
                }
            }
        }
        scorer
    }

    pub fn terms(&self, relation: usize, position: usize) -> &[Term] {
        &self.slot_terms[self.params.layout.slot(relation, position)]
    }

    fn check_fact(&self, fact: &Fact) -> Result<()> {
        let layout = &self.params.layout;
        let Some(&a) = layout.relation_arity.get(fact.relation) else {
            return Err(RamError::Dimension(format!("unknown relation {}", fact.relation)));
        };
        if fact.arity() != a {
            return Err(RamError::Dimension(format!(
                "relation {} has arity {a}, fact has {}",
                fact.relation,
                fact.arity()
            )));
        }
        if let Some(&e) = fact.entities.iter().find(|&&e| e >= layout.n_entities) {
            return Err(RamError::Dimension(format!("unknown entity {e}")));
        }
        if self.slot_terms[layout.slot(fact.relation, 0)].is_empty() {
            return Err(RamError::Dimension(format!(
                "relation {} not prepared by this scorer",
                fact.relation
            )));
        }
        Ok(())
    }

    /// Weighted entity vectors for every term of the fact.
    pub fn context(&self, fact: &Fact) -> Result<ScoreContext<'_>> {
        self.check_fact(fact)?;
        let cfg = &self.params.config;
        let (d, m) = (cfg.d, cfg.m);
        let a = fact.arity();
        let first = self.params.layout.slot(fact.relation, 0);
        let slots = first..first + a;
        let n_terms: usize = self.slot_terms[slots.clone()].iter().map(Vec::len).sum();
        let ent = self.params.tensor(TensorId::Entity);
        let mut v = vec![0.0; n_terms * a * d];
        let mut refs = Vec::with_capacity(n_terms);
        let mut t = 0;
        for (i, slot) in slots.enumerate() {
            for term in &self.slot_terms[slot] {
                for (jpos, &e) in fact.entities.iter().enumerate() {
                    let off = (t * a + jpos) * d;
                    contract_rows_into(
                        &term.p[jpos * m..(jpos + 1) * m],
                        ent.block(e),
                        d,
                        &mut v[off..off + d],
                    );
                }
                refs.push((i, term));
                t += 1;
            }
        }
        Ok(ScoreContext {
            fact: fact.clone(),
            d,
            m,
            terms: refs,
            v,
            mask: None,
        })
    }

    pub fn score(&self, fact: &Fact) -> Result<f64> {
        Ok(self.context(fact)?.score())
    }

    /// Scores of `fact` with position `position` replaced by every entity.
    pub fn score_all(&self, fact: &Fact, position: usize) -> Result<Vec<f64>> {
        let ctx = self.context(fact)?;
        let mut w = vec![0.0; self.params.config.m * self.params.config.d];
        let mut q = Vec::new();
        ctx.position_weights(position, &mut w, &mut q);
        let ent = self.params.tensor(TensorId::Entity);
        Ok(ent.data.chunks_exact(w.len()).map(|e| dot(e, &w)).collect())
    }
}

/// Per-fact state: the weighted entity vectors of every term, optionally
/// with a dropout mask already applied.
#[derive(Debug, Clone)]
pub struct ScoreContext<'s> {
    pub fact: Fact,
    d: usize,
    m: usize,
    /// `(position owning the term, term)`.
    pub(crate) terms: Vec<(usize, &'s Term)>,
    /// `n_terms × a × d`; entry `(t, j)` is `P_t[j,:]·E_{e_j}` after masking.
    pub(crate) v: Vec<f64>,
    pub(crate) mask: Option<Vec<f64>>,
}

impl<'s> ScoreContext<'s> {
    pub fn arity(&self) -> usize {
        self.fact.arity()
    }

    pub fn n_terms(&self) -> usize {
        self.terms.len()
    }

    pub(crate) fn mask_at(&self, t: usize, j: usize, l: usize) -> f64 {
        self.mask
            .as_ref()
            .map_or(1.0, |mk| mk[(t * self.arity() + j) * self.d + l])
    }

    /// Inverted dropout on every weighted entity vector: each coordinate is
    /// zeroed with probability `p` and survivors are scaled by `1/(1−p)`.
    pub fn apply_dropout<R: Rng>(&mut self, p: f64, rng: &mut R) {
        if p <= 0.0 {
            return;
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.v.len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        for (x, k) in self.v.iter_mut().zip(&mask) {
            *x *= k;
        }
        self.mask = Some(mask);
    }

    pub fn score(&self) -> f64 {
        let a = self.arity();
        let mut total = 0.0;
        for (t, (_, term)) in self.terms.iter().enumerate() {
            let mut s = 0.0;
            for l in 0..self.d {
                let mut prod = term.u[l];
                for j in 0..a {
                    prod *= self.v[(t * a + j) * self.d + l];
                }
                s += prod;
            }
            total += term.omega * s;
        }
        total
    }

    /// Fill `w` (`m×d`) so that replacing position `i` by entity `e` scores
    /// `⟨E_e, w⟩`, and `q` (`n_terms × d`) with the per-term factor
    /// `ω·u ⊙ mask_i ⊙ Π_{j≠i} v_j`.
    pub(crate) fn position_weights(&self, i: usize, w: &mut [f64], q: &mut Vec<f64>) {
        let (a, d, m) = (self.arity(), self.d, self.m);
        q.clear();
        q.resize(self.terms.len() * d, 0.0);
        w.iter_mut().for_each(|x| *x = 0.0);
        for (t, (_, term)) in self.terms.iter().enumerate() {
            let qt = &mut q[t * d..(t + 1) * d];
            for l in 0..d {
                let mut prod = term.omega * term.u[l] * self.mask_at(t, i, l);
                for j in (0..a).filter(|&j| j != i) {
                    prod *= self.v[(t * a + j) * d + l];
                }
                qt[l] = prod;
            }
            for c in 0..m {
                let pic = term.p[i * m + c];
                if pic != 0.0 {
                    axpy(pic, qt, &mut w[c * d..(c + 1) * d]);
                }
            }
        }
    }
}

/// Score one fact.
pub fn score(params: &ModelParams, fact: &Fact) -> Result<f64> {
    Scorer::for_relations(params, &[fact.relation]).score(fact)
}

/// Scores of every entity substituted at `position`.
pub fn score_batch_position(params: &ModelParams, fact: &Fact, position: usize) -> Result<Vec<f64>> {
    if position >= fact.arity() {
        return Err(RamError::Dimension(format!(
            "position {position} out of range for arity {}",
            fact.arity()
        )));
    }
    Scorer::for_relations(params, &[fact.relation]).score_all(fact, position)
}

fn latent_only(params: &ModelParams) -> Result<()> {
    match params.config.mode {
        Mode::Latent | Mode::Extended => Ok(()),
        m => Err(RamError::Mode(format!("{m} has no latent role embeddings"))),
    }
}

/// `u^r_i = Σ_k softmax(α^r_i)[k]·û_k` (first role embedding in extended mode).
pub fn role_embedding(params: &ModelParams, relation: usize, position: usize) -> Result<Vec<f64>> {
    latent_only(params)?;
    check_slot(params, relation, position)?;
    let slot = params.layout.slot(relation, position);
    let s = softmax(params.tensor(TensorId::RoleWeights).block(slot * params.config.m_gamma));
    let basis = params.tensor(TensorId::BasisVectors);
    let mut u = vec![0.0; params.config.d];
    for (k, &sk) in s.iter().enumerate() {
        axpy(sk, basis.block(k), &mut u);
    }
    Ok(u)
}

/// `P^r_i = Σ_k softmax(α^r_i)[k]·softmax(P̂_{k,a})` (first pattern in
/// extended mode).
pub fn pattern_matrix(params: &ModelParams, relation: usize, position: usize) -> Result<DenseMatrix> {
    latent_only(params)?;
    check_slot(params, relation, position)?;
    let a = params.layout.relation_arity[relation];
    let m = params.config.m;
    let slot = params.layout.slot(relation, position);
    let s = softmax(params.tensor(TensorId::RoleWeights).block(slot * params.config.m_gamma));
    let basis = params.tensor(TensorId::BasisMatrices(a));
    let mut p = vec![0.0; a * m];
    for (k, &sk) in s.iter().enumerate() {
        axpy(sk, &softmax(&basis.block(k)[..a * m]), &mut p);
    }
    DenseMatrix::from_vec(a, m, p)
}

fn check_slot(params: &ModelParams, relation: usize, position: usize) -> Result<()> {
    match params.layout.relation_arity.get(relation) {
        Some(&a) if position < a => Ok(()),
        _ => Err(RamError::Dimension(format!(
            "no role at relation {relation} position {position}"
        ))),
    }
}
