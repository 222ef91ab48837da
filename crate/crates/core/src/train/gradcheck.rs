//! Central finite-difference check of the analytic gradient.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use super::{backward, batch_loss, Example};
use crate::error::Result;
use crate::kb::Fact;
use crate::math::rng_for;
use crate::model::{Layout, Mode, ModelConfig, ModelParams, Scorer, TensorId};

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct GradcheckOptions {
    pub h: f64,
    /// Gradients smaller than this are compared absolutely.
    pub floor: f64,
    /// Added to the first analytic coordinate of every family, to confirm
    /// the check notices a wrong gradient.
    pub perturb: Option<f64>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-5,
            floor: 1e-5,
            perturb: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    /// Max relative error per parameter family.
    pub per_family: BTreeMap<String, f64>,
    pub max_rel_err: f64,
    pub coordinates: usize,
    pub pass: bool,
}

/// Compare `backward` against central differences of the mean batch loss
/// over every unfrozen coordinate.
pub fn gradcheck(params: &ModelParams, batch: &[Example<'_>], opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let (_, grads) = backward(&Scorer::new(params), batch, 1)?;
    let mut work = params.clone();
    let mut per_family = BTreeMap::new();
    let mut coordinates = 0;
    let ids: Vec<TensorId> = params.tensors.keys().copied().collect();
    for id in ids {
        let tensor = params.tensor(id);
        if tensor.frozen {
            continue;
        }
        let mut worst: f64 = 0.0;
        for b in 0..tensor.n_blocks() {
            let g = grads.get(id, b);
            for i in 0..tensor.block_len(b) {
                let mut analytic = g.map_or(0.0, |g| g[i]);
                if b == 0 && i == 0 {
                    analytic += opts.perturb.unwrap_or(0.0);
                }
                let orig = work.tensor(id).block(b)[i];
                work.tensor_mut(id).block_mut(b)[i] = orig + opts.h;
                let up = batch_loss(&Scorer::new(&work), batch)?;
                work.tensor_mut(id).block_mut(b)[i] = orig - opts.h;
                let down = batch_loss(&Scorer::new(&work), batch)?;
                work.tensor_mut(id).block_mut(b)[i] = orig;
                let numeric = (up - down) / (2.0 * opts.h);
                let denom = analytic.abs().max(numeric.abs()).max(opts.floor);
                worst = worst.max((analytic - numeric).abs() / denom);
                coordinates += 1;
            }
        }
        per_family.insert(id.to_string(), worst);
    }
    let max_rel_err = per_family.values().fold(0.0f64, |a, &b| a.max(b));
    Ok(GradcheckReport {
        per_family,
        max_rel_err,
        coordinates,
        pass: max_rel_err <= GRADCHECK_TOLERANCE,
    })
}

/// A random toy problem: model within `d ≤ 5, m ≤ 3, K ≤ 4`, arities ≤ 4,
/// with non-trivial role weights (and `ω` in extended mode).
pub struct ToyProblem {
    pub params: ModelParams,
    pub facts: Vec<Fact>,
}

impl ToyProblem {
    /// Batch with full candidates and a fixed dropout mask per fact.
    pub fn batch(&self, dropout: f64) -> Vec<Example<'_>> {
        self.facts
            .iter()
            .enumerate()
            .map(|(i, f)| Example {
                fact: f,
                negatives: None,
                dropout,
                mask_seed: 1000 + i as u64,
            })
            .collect()
    }
}

pub fn random_toy(seed: u64, mode: Mode) -> Result<ToyProblem> {
    let mut rng = rng_for(seed, &[0x70e]);
    let d = rng.random_range(1..=5);
    let m = rng.random_range(1..=3);
    let k = rng.random_range(1..=4);
    let n_e = rng.random_range(3..=6);
    let n_rel = rng.random_range(1..=2);
    let arities: Vec<usize> = (0..n_rel).map(|_| rng.random_range(2..=4)).collect();
    let roles = (mode == Mode::Explicit).then(|| {
        let n_roles = 3;
        let per_rel = arities
            .iter()
            .map(|&a| (0..a).map(|_| rng.random_range(0..n_roles)).collect())
            .collect();
        (n_roles, per_rel)
    });
    let layout = Layout::from_arities(n_e, arities.clone(), roles, mode)?;
    let mut cfg = ModelConfig::new(d, m, k, mode)?;
    cfg.init_std = 0.5;
    if mode == Mode::Extended {
        cfg.m_gamma = rng.random_range(1..=2);
        cfg.n_pmat = rng.random_range(1..=2);
    }
    let mut params = ModelParams::init(cfg, layout, seed)?;
    let normal = Normal::new(0.0, 0.7).expect("valid std");
    for id in [TensorId::RoleWeights, TensorId::Omega] {
        if let Some(t) = params.tensors.get_mut(&id) {
            for x in &mut t.data {
                *x += normal.sample(&mut rng);
            }
        }
    }
    let n_facts = rng.random_range(2..=4);
    let facts = (0..n_facts)
        .map(|_| {
            let r = rng.random_range(0..n_rel);
            Fact::new(r, (0..arities[r]).map(|_| rng.random_range(0..n_e)).collect())
        })
        .collect();
    Ok(ToyProblem { params, facts })
}
