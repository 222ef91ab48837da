//! Learnable parameters and the role-aware scoring model.
//!
//! A fact of relation `r` (arity `a`) is scored as a sum of *terms*. Each
//! term owns a role vector `u` (length `d`), a pattern matrix `P` (`a×m`)
//! and a weight `ω`, and contributes
//! `ω·⟨u, P[0,:]E_{e_0}, …, P[a−1,:]E_{e_{a−1}}⟩`. Modes differ only in where
//! the terms come from:
//!
//! * `latent` – one term per role; `u` and `P` are softmax-weighted mixes of
//!   `K` shared basis vectors and per-arity basis matrices.
//! * `extended` – `m_gamma` role vectors per role, `n_pmat` patterns each,
//!   with learnable `ω`.
//! * `explicit` – one vector and one pattern per global role name.
//! * `preset:<kind>` – frozen patterns and signs that reproduce DistMult,
//!   SimplE, ComplEx or QuatE; role vectors stay learnable.
//! * `raw` – role vectors and pattern matrices stored directly, no softmax.

mod checkpoint;
mod export;
mod preset;
mod score;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{RamError, Result};
use crate::kb::Vocabulary;
use crate::math::rng_for;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointNames, CHECKPOINT_MAGIC};
pub use export::{export_entities_csv, export_patterns_csv, export_roles_csv, import_entities_csv};
pub use preset::{
    equivalence_trial, preset_patterns, reference_bilinear_score, run_equivalence, EquivalenceReport,
    PresetPatterns, ReferenceInputs,
};
pub use score::{pattern_matrix, role_embedding, score, score_batch_position, ScoreContext, Scorer, Term};

/// Bilinear models that RAM reduces to with fixed patterns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BilinearKind {
    DistMult,
    SimplE,
    ComplEx,
    QuatE,
}

impl BilinearKind {
    pub const ALL: [BilinearKind; 4] = [
        BilinearKind::DistMult,
        BilinearKind::SimplE,
        BilinearKind::ComplEx,
        BilinearKind::QuatE,
    ];

    /// `(m, m_gamma, n_pmat)` forced by the preset.
    pub fn shape(self) -> (usize, usize, usize) {
        match self {
            BilinearKind::DistMult | BilinearKind::SimplE => (2, 1, 1),
            BilinearKind::ComplEx => (2, 1, 2),
            BilinearKind::QuatE => (4, 2, 4),
        }
    }
}

impl FromStr for BilinearKind {
    type Err = RamError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "distmult" => Ok(BilinearKind::DistMult),
            "simple" => Ok(BilinearKind::SimplE),
            "complex" => Ok(BilinearKind::ComplEx),
            "quate" => Ok(BilinearKind::QuatE),
            _ => Err(RamError::Config(format!("unknown bilinear kind {s:?}"))),
        }
    }
}

impl fmt::Display for BilinearKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Mode {
    Latent,
    Explicit,
    Preset(BilinearKind),
    Extended,
    Raw,
}

impl FromStr for Mode {
    type Err = RamError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "latent" => Ok(Mode::Latent),
            "explicit" => Ok(Mode::Explicit),
            "extended" => Ok(Mode::Extended),
            "raw" => Ok(Mode::Raw),
            _ => match s.split_once(':') {
                Some(("preset", kind)) => Ok(Mode::Preset(kind.parse()?)),
                _ => Err(RamError::Config(format!("unknown mode {s:?}"))),
            },
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Latent => f.write_str("latent"),
            Mode::Explicit => f.write_str("explicit"),
            Mode::Extended => f.write_str("extended"),
            Mode::Raw => f.write_str("raw"),
            Mode::Preset(k) => write!(f, "preset:{k}"),
        }
    }
}

impl TryFrom<String> for Mode {
    type Error = RamError;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Mode> for String {
    fn from(m: Mode) -> String {
        m.to_string()
    }
}

/// Model shape and variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d: usize,
    pub m: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub mode: Mode,
    pub m_gamma: usize,
    pub n_pmat: usize,
    /// Standard deviation of the Gaussian initialisation.
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 25,
            m: 2,
            k: 10,
            mode: Mode::Latent,
            m_gamma: 1,
            n_pmat: 1,
            init_std: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn new(d: usize, m: usize, k: usize, mode: Mode) -> Result<Self> {
        Self {
            d,
            m,
            k,
            mode,
            ..Self::default()
        }
        .normalized()
    }

    /// Validate and apply the shape rules of the chosen mode.
    pub fn normalized(mut self) -> Result<Self> {
        if self.d == 0 || self.m == 0 || self.k == 0 {
            return Err(RamError::Config(format!(
                "d, m and K must be ≥ 1 (got d={}, m={}, K={})",
                self.d, self.m, self.k
            )));
        }
        if !(self.init_std.is_finite() && self.init_std >= 0.0) {
            return Err(RamError::Config(format!("bad init_std {}", self.init_std)));
        }
        match self.mode {
            Mode::Preset(kind) => {
                (self.m, self.m_gamma, self.n_pmat) = kind.shape();
            }
            Mode::Extended => {
                if self.m_gamma == 0 || self.n_pmat == 0 {
                    return Err(RamError::Config("m_gamma and n_pmat must be ≥ 1".into()));
                }
            }
            _ => {
                self.m_gamma = 1;
                self.n_pmat = 1;
            }
        }
        Ok(self)
    }

    pub fn terms_per_role(&self) -> usize {
        self.m_gamma * self.n_pmat
    }
}

/// Identifies one parameter family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TensorId {
    /// One `m×d` block per entity.
    Entity,
    /// `K` blocks of length `d`.
    BasisVectors,
    /// For one arity: `K` blocks of `n_pmat·a·m`.
    BasisMatrices(usize),
    /// One `K`-vector per (role slot, role-embedding index).
    RoleWeights,
    /// Directly stored role vectors (explicit, preset and raw modes).
    RoleVectors,
    /// Directly stored pattern matrices (explicit and raw modes).
    RolePatterns,
    /// One block of `m_gamma·n_pmat` term weights per role slot.
    Omega,
}

impl fmt::Display for TensorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorId::Entity => f.write_str("entity"),
            TensorId::BasisVectors => f.write_str("basis_vectors"),
            TensorId::BasisMatrices(a) => write!(f, "basis_matrices[{a}]"),
            TensorId::RoleWeights => f.write_str("role_weights"),
            TensorId::RoleVectors => f.write_str("role_vectors"),
            TensorId::RolePatterns => f.write_str("role_patterns"),
            TensorId::Omega => f.write_str("omega"),
        }
    }
}

/// Flat storage split into (possibly ragged) blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    offsets: Vec<usize>,
    pub data: Vec<f64>,
    /// Frozen tensors never receive gradients or updates.
    pub frozen: bool,
}

impl Tensor {
    pub fn uniform(n_blocks: usize, block_len: usize) -> Self {
        Self::ragged(&vec![block_len; n_blocks])
    }

    pub fn ragged(block_lens: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(block_lens.len() + 1);
        offsets.push(0);
        for len in block_lens {
            offsets.push(offsets.last().unwrap() + len);
        }
        let total = *offsets.last().unwrap();
        Self {
            offsets,
            data: vec![0.0; total],
            frozen: false,
        }
    }

    pub fn n_blocks(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn block_len(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn block_lens(&self) -> Vec<usize> {
        (0..self.n_blocks()).map(|i| self.block_len(i)).collect()
    }

    pub fn block(&self, i: usize) -> &[f64] {
        &self.data[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn block_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn fill_normal<R: Rng>(&mut self, std: f64, rng: &mut R) {
        if std == 0.0 {
            return;
        }
        let normal = Normal::new(0.0, std).expect("finite std");
        for x in &mut self.data {
            *x = normal.sample(rng);
        }
    }
}

/// Index arithmetic tying relations and roles to parameter blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub n_entities: usize,
    pub relation_arity: Vec<usize>,
    /// First role slot of each relation; slot `slot_offset[r] + i` is
    /// position `i` of relation `r`.
    pub slot_offset: Vec<usize>,
    pub n_slots: usize,
    /// Sorted distinct arities.
    pub arities: Vec<usize>,
    /// Explicit mode: global role of each slot.
    pub slot_role: Vec<usize>,
    /// Explicit mode: block of `RolePatterns` used by each slot.
    pub slot_pattern: Vec<usize>,
    /// Explicit mode: `(role, arity)` of each `RolePatterns` block.
    pub pattern_keys: Vec<(usize, usize)>,
    pub n_roles: usize,
}

impl Layout {
    pub fn new(vocab: &Vocabulary, mode: Mode) -> Result<Self> {
        Self::from_arities(
            vocab.n_entities(),
            vocab.relation_arities(),
            if mode == Mode::Explicit {
                let roles = vocab.roles.as_ref().ok_or_else(|| {
                    RamError::Config("explicit mode needs a dataset with role names".into())
                })?;
                let per_rel = vocab
                    .relation_roles
                    .iter()
                    .enumerate()
                    .map(|(r, x)| {
                        x.clone().ok_or_else(|| {
                            RamError::Config(format!("relation {r} has no role names"))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Some((roles.len(), per_rel))
            } else {
                None
            },
            mode,
        )
    }

    /// Build from raw arities; `roles` is `(n_roles, role ids per relation)`
    /// for explicit mode.
    pub fn from_arities(
        n_entities: usize,
        relation_arity: Vec<usize>,
        roles: Option<(usize, Vec<Vec<usize>>)>,
        mode: Mode,
    ) -> Result<Self> {
        if let Some(&a) = relation_arity.iter().find(|&&a| a < 2) {
            return Err(RamError::Data(format!("relation arity {a} < 2")));
        }
        if let Mode::Preset(kind) = mode {
            if let Some(&a) = relation_arity.iter().find(|&&a| a != 2) {
                return Err(RamError::Config(format!(
                    "preset:{kind} supports binary relations only; dataset has arity {a}"
                )));
            }
        }
        let mut slot_offset = Vec::with_capacity(relation_arity.len());
        let mut n_slots = 0;
        for &a in &relation_arity {
            slot_offset.push(n_slots);
            n_slots += a;
        }
        let mut arities = relation_arity.clone();
        arities.sort_unstable();
        arities.dedup();

        let mut layout = Layout {
            n_entities,
            relation_arity,
            slot_offset,
            n_slots,
            arities,
            slot_role: Vec::new(),
            slot_pattern: Vec::new(),
            pattern_keys: Vec::new(),
            n_roles: 0,
        };
        if mode == Mode::Explicit {
            let (n_roles, per_rel) = roles
                .ok_or_else(|| RamError::Config("explicit mode needs role names".into()))?;
            let mut key_index: BTreeMap<(usize, usize), usize> = BTreeMap::new();
            for (r, ids) in per_rel.iter().enumerate() {
                let a = layout.relation_arity[r];
                if ids.len() != a {
                    return Err(RamError::Data(format!(
                        "relation {r}: {} roles for arity {a}",
                        ids.len()
                    )));
                }
                for &role in ids {
                    let next = key_index.len();
                    let pb = *key_index.entry((role, a)).or_insert(next);
                    layout.slot_role.push(role);
                    layout.slot_pattern.push(pb);
                }
            }
            let mut keys = vec![(0, 0); key_index.len()];
            for (k, v) in key_index {
                keys[v] = k;
            }
            layout.pattern_keys = keys;
            layout.n_roles = n_roles;
        }
        Ok(layout)
    }

    pub fn slot(&self, relation: usize, position: usize) -> usize {
        self.slot_offset[relation] + position
    }

    /// `(relation, position)` of a slot.
    pub fn slot_owner(&self, slot: usize) -> (usize, usize) {
        let r = self.slot_offset.partition_point(|&o| o <= slot) - 1;
        (r, slot - self.slot_offset[r])
    }
}

/// Everything learned, plus the config and layout needed to interpret it.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub layout: Layout,
    pub tensors: BTreeMap<TensorId, Tensor>,
}

impl ModelParams {
    /// Allocate zeroed tensors for the given layout.
    pub fn zeros(config: ModelConfig, layout: Layout) -> Result<Self> {
        let config = config.normalized()?;
        let (d, m, k) = (config.d, config.m, config.k);
        let mut tensors = BTreeMap::new();
        tensors.insert(TensorId::Entity, Tensor::uniform(layout.n_entities, m * d));
        match config.mode {
            Mode::Latent | Mode::Extended => {
                tensors.insert(TensorId::BasisVectors, Tensor::uniform(k, d));
                for &a in &layout.arities {
                    tensors.insert(
                        TensorId::BasisMatrices(a),
                        Tensor::uniform(k, config.n_pmat * a * m),
                    );
                }
                tensors.insert(
                    TensorId::RoleWeights,
                    Tensor::uniform(layout.n_slots * config.m_gamma, k),
                );
                if config.mode == Mode::Extended {
                    let mut omega = Tensor::uniform(layout.n_slots, config.terms_per_role());
                    omega.data.fill(1.0);
                    tensors.insert(TensorId::Omega, omega);
                }
            }
            Mode::Explicit => {
                tensors.insert(TensorId::RoleVectors, Tensor::uniform(layout.n_roles, d));
                let lens: Vec<usize> = layout.pattern_keys.iter().map(|&(_, a)| a * m).collect();
                tensors.insert(TensorId::RolePatterns, Tensor::ragged(&lens));
            }
            Mode::Preset(_) => {
                tensors.insert(
                    TensorId::RoleVectors,
                    Tensor::uniform(layout.n_slots * config.m_gamma, d),
                );
            }
            Mode::Raw => {
                tensors.insert(TensorId::RoleVectors, Tensor::uniform(layout.n_slots, d));
                let lens: Vec<usize> = (0..layout.n_slots)
                    .map(|s| layout.relation_arity[layout.slot_owner(s).0] * m)
                    .collect();
                tensors.insert(TensorId::RolePatterns, Tensor::ragged(&lens));
            }
        }
        Ok(Self {
            config,
            layout,
            tensors,
        })
    }

    /// Gaussian initialisation (`init_std`) for embeddings, basis vectors,
    /// basis matrices and direct role parameters. Role weights start at zero
    /// (uniform simplex) and `ω` at one.
    pub fn init(config: ModelConfig, layout: Layout, seed: u64) -> Result<Self> {
        let mut params = Self::zeros(config, layout)?;
        let std = params.config.init_std;
        for (i, (id, t)) in params.tensors.iter_mut().enumerate() {
            if matches!(id, TensorId::RoleWeights | TensorId::Omega) {
                continue;
            }
            t.fill_normal(std, &mut rng_for(seed, &[0x1417, i as u64]));
        }
        Ok(params)
    }

    pub fn for_vocab(config: ModelConfig, vocab: &Vocabulary, seed: u64) -> Result<Self> {
        let layout = Layout::new(vocab, config.mode)?;
        Self::init(config, layout, seed)
    }

    pub fn tensor(&self, id: TensorId) -> &Tensor {
        &self.tensors[&id]
    }

    pub fn tensor_mut(&mut self, id: TensorId) -> &mut Tensor {
        self.tensors.get_mut(&id).expect("tensor exists for mode")
    }

    pub fn entity(&self, e: usize) -> &[f64] {
        self.tensors[&TensorId::Entity].block(e)
    }

    pub fn n_entities(&self) -> usize {
        self.layout.n_entities
    }

    pub fn freeze_all(&mut self) {
        for t in self.tensors.values_mut() {
            t.frozen = true;
        }
    }

    pub fn n_parameters(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// One-line summary of per-family L2 norms, for diagnostics.
    pub fn norm_summary(&self) -> String {
        self.tensors
            .iter()
            .map(|(id, t)| format!("{id}={:.4e}", crate::math::l2_norm(&t.data)))
            .collect::<Vec<_>>()
            .join(", ")
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(|t| t.data.iter().all(|x| x.is_finite()))
    }
}
