//! Multi-class log-loss and its analytic gradient.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;

use super::NegMode;
use crate::error::{RamError, Result};
use crate::kb::Fact;
use crate::math::{axpy, derive_seed, dot, log_sum_exp, rng_for, softmax_backward};
use crate::model::{Mode, ModelParams, ScoreContext, Scorer, TensorId};

/// Negative entities for `position`: every other entity in full mode, or
/// `n` distinct uniform draws (clipped to `n_e − 1`) in sampled mode.
pub fn corrupt<R: Rng>(fact: &Fact, position: usize, neg_mode: NegMode, n_entities: usize, rng: &mut R) -> Vec<usize> {
    let truth = fact.entities[position];
    match neg_mode {
        NegMode::Full => (0..n_entities).filter(|&e| e != truth).collect(),
        NegMode::Sampled(n) => {
            let pool = n_entities.saturating_sub(1);
            index::sample(rng, pool, n.min(pool))
                .into_iter()
                .map(|e| if e >= truth { e + 1 } else { e })
                .collect()
        }
    }
}

/// One training fact with its fixed random choices.
#[derive(Debug, Clone)]
pub struct Example<'f> {
    pub fact: &'f Fact,
    /// Per-position negatives; `None` scores every entity.
    pub negatives: Option<Vec<Vec<usize>>>,
    pub dropout: f64,
    /// Seed of the dropout mask.
    pub mask_seed: u64,
}

impl<'f> Example<'f> {
    /// Full candidate set, no dropout.
    pub fn plain(fact: &'f Fact) -> Self {
        Self {
            fact,
            negatives: None,
            dropout: 0.0,
            mask_seed: 0,
        }
    }

    /// Draw negatives and the dropout seed from `seed`.
    pub fn draw(fact: &'f Fact, n_entities: usize, neg_mode: NegMode, dropout: f64, seed: u64) -> Self {
        let negatives = match neg_mode {
            NegMode::Full => None,
            NegMode::Sampled(_) => {
                let mut rng = rng_for(seed, &[0]);
                Some(
                    (0..fact.arity())
                        .map(|i| corrupt(fact, i, neg_mode, n_entities, &mut rng))
                        .collect(),
                )
            }
        };
        Self {
            fact,
            negatives,
            dropout,
            mask_seed: derive_seed(seed, &[1]),
        }
    }
}

/// Sparse map from parameter block to gradient.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradientBuffer {
    map: BTreeMap<(TensorId, usize), Vec<f64>>,
}

impl GradientBuffer {
    fn slot(&mut self, id: TensorId, block: usize, len: usize) -> &mut Vec<f64> {
        self.map.entry((id, block)).or_insert_with(|| vec![0.0; len])
    }

    pub fn add(&mut self, id: TensorId, block: usize, grad: &[f64]) {
        let g = self.slot(id, block, grad.len());
        axpy(1.0, grad, g);
    }

    pub fn get(&self, id: TensorId, block: usize) -> Option<&[f64]> {
        self.map.get(&(id, block)).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(TensorId, usize), &Vec<f64>)> {
        self.map.iter()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn touches(&self, id: TensorId) -> bool {
        self.map.keys().any(|(t, _)| *t == id)
    }

    pub fn all_finite(&self) -> bool {
        self.map.values().all(|g| g.iter().all(|x| x.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.map
            .values()
            .flat_map(|g| g.iter())
            .fold(0.0, |acc: f64, x| acc.max(x.abs()))
    }
}

#[derive(Debug, Clone)]
struct TermGrad {
    du: Vec<f64>,
    dp: Vec<f64>,
    domega: f64,
}

/// Dense per-batch accumulator for entity and term gradients.
#[derive(Debug, Clone)]
pub struct Accum {
    md: usize,
    entity: Vec<f64>,
    entity_touched: Vec<bool>,
    terms: Vec<Vec<TermGrad>>,
    slot_touched: Vec<bool>,
    pub loss_sum: f64,
}

impl Accum {
    pub fn new(scorer: &Scorer<'_>) -> Self {
        let p = scorer.params;
        let md = p.config.m * p.config.d;
        Self {
            md,
            entity: vec![0.0; p.n_entities() * md],
            entity_touched: vec![false; p.n_entities()],
            terms: scorer
                .slot_terms
                .iter()
                .map(|ts| {
                    ts.iter()
                        .map(|t| TermGrad {
                            du: vec![0.0; t.u.len()],
                            dp: vec![0.0; t.p.len()],
                            domega: 0.0,
                        })
                        .collect()
                })
                .collect(),
            slot_touched: vec![false; p.layout.n_slots],
            loss_sum: 0.0,
        }
    }

    fn entity_mut(&mut self, e: usize) -> &mut [f64] {
        self.entity_touched[e] = true;
        &mut self.entity[e * self.md..(e + 1) * self.md]
    }

    /// Add `other` into `self`.
    pub fn merge(&mut self, other: &Accum) {
        axpy(1.0, &other.entity, &mut self.entity);
        for (a, b) in self.entity_touched.iter_mut().zip(&other.entity_touched) {
            *a |= b;
        }
        for (s, (mine, theirs)) in self.terms.iter_mut().zip(&other.terms).enumerate() {
            if !other.slot_touched[s] {
                continue;
            }
            self.slot_touched[s] = true;
            for (x, y) in mine.iter_mut().zip(theirs) {
                axpy(1.0, &y.du, &mut x.du);
                axpy(1.0, &y.dp, &mut x.dp);
                x.domega += y.domega;
            }
        }
        self.loss_sum += other.loss_sum;
    }

    /// Push term gradients back through the derived quantities onto the
    /// stored parameters. Frozen tensors are skipped.
    pub fn into_gradients(self, scorer: &Scorer<'_>) -> GradientBuffer {
        let params = scorer.params;
        let cfg = &params.config;
        let layout = &params.layout;
        let live = |id: TensorId| params.tensors.get(&id).is_some_and(|t| !t.frozen);
        let mut out = GradientBuffer::default();

        if live(TensorId::Entity) {
            for (e, _) in self.entity_touched.iter().enumerate().filter(|(_, &t)| t) {
                out.add(TensorId::Entity, e, &self.entity[e * self.md..(e + 1) * self.md]);
            }
        }
        let touched = || {
            self.slot_touched
                .iter()
                .enumerate()
                .filter(|(_, &t)| t)
                .map(|(s, _)| s)
        };

        match cfg.mode {
            Mode::Latent | Mode::Extended => {
                let (d, m, k) = (cfg.d, cfg.m, cfg.k);
                let basis = params.tensor(TensorId::BasisVectors);
                let mut basis_grad = vec![vec![0.0; d]; k];
                let mut basis_used = false;
                let mut soft_grad: BTreeMap<usize, Vec<Vec<f64>>> = BTreeMap::new();
                for slot in touched() {
                    let a = layout.relation_arity[layout.slot_owner(slot).0];
                    let soft = &scorer.basis_soft[&a];
                    let sg = soft_grad
                        .entry(a)
                        .or_insert_with(|| vec![vec![0.0; cfg.n_pmat * a * m]; k]);
                    let grads = &self.terms[slot];
                    for j in 0..cfg.m_gamma {
                        let wb = slot * cfg.m_gamma + j;
                        let s = &scorer.simplex[wb];
                        let group = &grads[j * cfg.n_pmat..(j + 1) * cfg.n_pmat];
                        let mut du = vec![0.0; d];
                        for g in group {
                            axpy(1.0, &g.du, &mut du);
                        }
                        let mut ds = vec![0.0; k];
                        for kb in 0..k {
                            ds[kb] += dot(&du, basis.block(kb));
                            axpy(s[kb], &du, &mut basis_grad[kb]);
                            for (sub, g) in group.iter().enumerate() {
                                let range = sub * a * m..(sub + 1) * a * m;
                                ds[kb] += dot(&g.dp, &soft[kb][range.clone()]);
                                axpy(s[kb], &g.dp, &mut sg[kb][range]);
                            }
                        }
                        basis_used = true;
                        if live(TensorId::RoleWeights) {
                            out.add(TensorId::RoleWeights, wb, &softmax_backward(s, &ds));
                        }
                    }
                    if cfg.mode == Mode::Extended && live(TensorId::Omega) {
                        let dw: Vec<f64> = grads.iter().map(|g| g.domega).collect();
                        out.add(TensorId::Omega, slot, &dw);
                    }
                }
                if basis_used && live(TensorId::BasisVectors) {
                    for (kb, g) in basis_grad.iter().enumerate() {
                        out.add(TensorId::BasisVectors, kb, g);
                    }
                }
                for (a, per_basis) in soft_grad {
                    if !live(TensorId::BasisMatrices(a)) {
                        continue;
                    }
                    for (kb, g) in per_basis.iter().enumerate() {
                        let soft = &scorer.basis_soft[&a][kb];
                        let raw: Vec<f64> = soft
                            .chunks(a * m)
                            .zip(g.chunks(a * m))
                            .flat_map(|(s, gs)| softmax_backward(s, gs))
                            .collect();
                        out.add(TensorId::BasisMatrices(a), kb, &raw);
                    }
                }
            }
            Mode::Explicit => {
                let mut pattern_grad: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
                for slot in touched() {
                    let g = &self.terms[slot][0];
                    if live(TensorId::RoleVectors) {
                        out.add(TensorId::RoleVectors, layout.slot_role[slot], &g.du);
                    }
                    let pb = layout.slot_pattern[slot];
                    let acc = pattern_grad.entry(pb).or_insert_with(|| vec![0.0; g.dp.len()]);
                    axpy(1.0, &g.dp, acc);
                }
                if live(TensorId::RolePatterns) {
                    for (pb, g) in pattern_grad {
                        out.add(TensorId::RolePatterns, pb, &softmax_backward(&scorer.pattern_soft[pb], &g));
                    }
                }
            }
            Mode::Preset(_) => {
                if live(TensorId::RoleVectors) {
                    for slot in touched() {
                        for (t, g) in self.terms[slot].iter().enumerate() {
                            let j = t / cfg.n_pmat;
                            out.add(TensorId::RoleVectors, slot * cfg.m_gamma + j, &g.du);
                        }
                    }
                }
            }
            Mode::Raw => {
                for slot in touched() {
                    let g = &self.terms[slot][0];
                    if live(TensorId::RoleVectors) {
                        out.add(TensorId::RoleVectors, slot, &g.du);
                    }
                    if live(TensorId::RolePatterns) {
                        out.add(TensorId::RolePatterns, slot, &g.dp);
                    }
                }
            }
        }
        out
    }
}

/// Cross-entropy of candidate `truth` under a softmax over `scores`.
pub fn softmax_loss(scores: &[f64], truth: usize) -> f64 {
    log_sum_exp(scores) - scores[truth]
}

/// Loss of one fact (summed over positions). When `acc` is given, adds
/// `weight ×` the gradient of that loss.
fn fact_pass(
    scorer: &Scorer<'_>,
    ctx: &ScoreContext<'_>,
    negatives: Option<&[Vec<usize>]>,
    weight: f64,
    mut acc: Option<&mut Accum>,
) -> f64 {
    let params = scorer.params;
    let (d, m) = (params.config.d, params.config.m);
    let md = m * d;
    let n_pmat = params.config.n_pmat;
    let fact = &ctx.fact;
    let a = fact.arity();
    let ent = params.tensor(TensorId::Entity);
    let first_slot = params.layout.slot(fact.relation, 0);
    let n_terms = ctx.n_terms();

    let mut w = vec![0.0; md];
    let mut q = Vec::new();
    let mut g_w = vec![0.0; md];
    let mut dveff = if acc.is_some() { vec![0.0; ctx.v.len()] } else { Vec::new() };
    let mut scores = Vec::new();
    let mut total = 0.0;

    for i in 0..a {
        ctx.position_weights(i, &mut w, &mut q);
        let truth = fact.entities[i];
        // candidates in ascending entity order, so a sampled set covering
        // every entity reproduces the full-vocabulary computation exactly
        let ids: Option<Vec<usize>> = negatives.map(|negs| {
            let mut v: Vec<usize> = std::iter::once(truth).chain(negs[i].iter().copied()).collect();
            v.sort_unstable();
            v
        });
        scores.clear();
        match &ids {
            None => scores.extend(ent.data.chunks_exact(md).map(|e| dot(e, &w))),
            Some(ids) => scores.extend(ids.iter().map(|&e| dot(ent.block(e), &w))),
        }
        let true_idx = match &ids {
            Some(v) => v.binary_search(&truth).expect("truth is a candidate"),
            None => truth,
        };
        let lse = log_sum_exp(&scores);
        total += softmax_loss(&scores, true_idx);

        let Some(acc) = acc.as_deref_mut() else {
            continue;
        };
        // G = Σ_e g_e E_e and dE_e += g_e W
        g_w.iter_mut().for_each(|x| *x = 0.0);
        for (idx, &s) in scores.iter().enumerate() {
            let mut g = (s - lse).exp();
            if idx == true_idx {
                g -= 1.0;
            }
            g *= weight;
            if g == 0.0 {
                continue;
            }
            let e = ids.as_ref().map_or(idx, |v| v[idx]);
            axpy(g, ent.block(e), &mut g_w);
            axpy(g, &w, acc.entity_mut(e));
        }
        for t in 0..n_terms {
            let (pos, term) = ctx.terms[t];
            let slot = first_slot + pos;
            acc.slot_touched[slot] = true;
            let tg = &mut acc.terms[slot][term.j * n_pmat + term.sub];
            let qt = &q[t * d..(t + 1) * d];
            let mut gq = vec![0.0; d];
            for c in 0..m {
                let gc = &g_w[c * d..(c + 1) * d];
                tg.dp[i * m + c] += dot(gc, qt);
                axpy(term.p[i * m + c], gc, &mut gq);
            }
            for l in 0..d {
                let base = gq[l] * ctx.mask_at(t, i, l);
                if base == 0.0 {
                    continue;
                }
                let mut rest = 1.0;
                for j in (0..a).filter(|&j| j != i) {
                    rest *= ctx.v[(t * a + j) * d + l];
                }
                tg.du[l] += base * term.omega * rest;
                tg.domega += base * term.u[l] * rest;
                for j in (0..a).filter(|&j| j != i) {
                    let mut others = base * term.omega * term.u[l];
                    for jj in (0..a).filter(|&jj| jj != i && jj != j) {
                        others *= ctx.v[(t * a + jj) * d + l];
                    }
                    dveff[(t * a + j) * d + l] += others;
                }
            }
        }
    }

    if let Some(acc) = acc {
        let mut dv = vec![0.0; d];
        for t in 0..n_terms {
            let (pos, term) = ctx.terms[t];
            let slot = first_slot + pos;
            for (j, &e) in fact.entities.iter().enumerate() {
                let off = (t * a + j) * d;
                for l in 0..d {
                    dv[l] = dveff[off + l] * ctx.mask_at(t, j, l);
                }
                let eb = ent.block(e);
                let tg = &mut acc.terms[slot][term.j * n_pmat + term.sub];
                for c in 0..m {
                    tg.dp[j * m + c] += dot(&dv, &eb[c * d..(c + 1) * d]);
                }
                let ge = acc.entity_mut(e);
                for c in 0..m {
                    axpy(term.p[j * m + c], &dv, &mut ge[c * d..(c + 1) * d]);
                }
            }
        }
    }
    total
}

fn prepare<'s>(scorer: &'s Scorer<'_>, ex: &Example<'_>) -> Result<ScoreContext<'s>> {
    let mut ctx = scorer.context(ex.fact)?;
    if ex.dropout > 0.0 {
        ctx.apply_dropout(ex.dropout, &mut rng_for(ex.mask_seed, &[]));
    }
    Ok(ctx)
}

fn non_finite(params: &ModelParams, index: usize, fact: &Fact) -> RamError {
    RamError::NonFinite {
        fact_index: index,
        fact: format!("relation {} entities {:?}", fact.relation, fact.entities),
        norms: params.norm_summary(),
    }
}

/// Loss of one example (sum over positions), with its negatives and mask.
pub fn example_loss(scorer: &Scorer<'_>, ex: &Example<'_>) -> Result<f64> {
    let ctx = prepare(scorer, ex)?;
    Ok(fact_pass(scorer, &ctx, ex.negatives.as_deref(), 1.0, None))
}

/// Full-vocabulary loss of one fact, without dropout.
pub fn loss(params: &ModelParams, fact: &Fact) -> Result<f64> {
    let scorer = Scorer::for_relations(params, &[fact.relation]);
    example_loss(&scorer, &Example::plain(fact))
}

/// Mean loss over a batch.
pub fn batch_loss(scorer: &Scorer<'_>, batch: &[Example<'_>]) -> Result<f64> {
    let mut total = 0.0;
    for ex in batch {
        total += example_loss(scorer, ex)?;
    }
    Ok(total / batch.len() as f64)
}

fn run_chunk(scorer: &Scorer<'_>, chunk: &[Example<'_>], offset: usize, weight: f64) -> Result<Accum> {
    let mut acc = Accum::new(scorer);
    for (k, ex) in chunk.iter().enumerate() {
        let ctx = prepare(scorer, ex)?;
        let l = fact_pass(scorer, &ctx, ex.negatives.as_deref(), weight, Some(&mut acc));
        if !l.is_finite() {
            return Err(non_finite(scorer.params, offset + k, ex.fact));
        }
        acc.loss_sum += l;
    }
    Ok(acc)
}

/// Mean batch loss and its gradient.
///
/// With `chunks > 1` the batch is split into that many contiguous pieces
/// processed in parallel and summed in order.
pub fn backward(scorer: &Scorer<'_>, batch: &[Example<'_>], chunks: usize) -> Result<(f64, GradientBuffer)> {
    if batch.is_empty() {
        return Err(RamError::Data("empty batch".into()));
    }
    let weight = 1.0 / batch.len() as f64;
    let acc = if chunks <= 1 {
        run_chunk(scorer, batch, 0, weight)?
    } else {
        let size = batch.len().div_ceil(chunks);
        let parts: Vec<Result<Accum>> = batch
            .par_chunks(size)
            .enumerate()
            .map(|(c, chunk)| run_chunk(scorer, chunk, c * size, weight))
            .collect();
        let mut iter = parts.into_iter();
        let mut acc = iter.next().expect("non-empty batch")?;
        for part in iter {
            acc.merge(&part?);
        }
        acc
    };
    let loss = acc.loss_sum * weight;
    let grads = acc.into_gradients(scorer);
    if !grads.all_finite() {
        return Err(non_finite(scorer.params, 0, batch[0].fact));
    }
    Ok((loss, grads))
}
