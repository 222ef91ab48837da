//! Fixed patterns that turn RAM into classic bilinear models, and the
//! reference scores they must reproduce.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::{BilinearKind, Layout, Mode, ModelConfig, ModelParams, Scorer, TensorId};
use crate::error::Result;
use crate::kb::Fact;
use crate::math::{rng_for, DenseMatrix};

/// `terms[i][j][sub]` is the `2×m` pattern and sign of one term of position
/// `i` (0 = head, 1 = tail).
#[derive(Debug, Clone)]
pub struct PresetPatterns {
    pub m: usize,
    pub terms: Vec<Vec<Vec<(DenseMatrix, f64)>>>,
}

/// Pattern with `½` at `[0, h]` and `[1, t]`.
fn pick(m: usize, h: usize, t: usize) -> DenseMatrix {
    let mut p = DenseMatrix::zeros(2, m);
    p.set(0, h, 0.5);
    p.set(1, t, 0.5);
    p
}

/// Build from `(h, t, sign)` triples with 1-based components.
fn from_triples(m: usize, roles: &[&[&[(usize, usize, f64)]]]) -> PresetPatterns {
    PresetPatterns {
        m,
        terms: roles
            .iter()
            .map(|per_j| {
                per_j
                    .iter()
                    .map(|subs| subs.iter().map(|&(h, t, s)| (pick(m, h - 1, t - 1), s)).collect())
                    .collect()
            })
            .collect(),
    }
}

pub fn preset_patterns(kind: BilinearKind) -> PresetPatterns {
    match kind {
        BilinearKind::DistMult => from_triples(2, &[&[&[(1, 1, 1.0)]], &[&[(2, 2, 1.0)]]]),
        BilinearKind::SimplE => from_triples(2, &[&[&[(1, 2, 1.0)]], &[&[(2, 1, 1.0)]]]),
        BilinearKind::ComplEx => from_triples(
            2,
            &[
                &[&[(1, 1, 1.0), (2, 2, 1.0)]],
                &[&[(1, 2, 1.0), (2, 1, -1.0)]],
            ],
        ),
        BilinearKind::QuatE => from_triples(
            4,
            &[
                &[
                    &[(1, 1, 1.0), (2, 2, 1.0), (3, 3, 1.0), (4, 4, 1.0)],
                    &[(1, 2, 1.0), (2, 1, -1.0), (3, 4, 1.0), (4, 3, -1.0)],
                ],
                &[
                    &[(1, 3, 1.0), (2, 4, -1.0), (3, 1, -1.0), (4, 2, 1.0)],
                    &[(1, 4, 1.0), (2, 3, 1.0), (3, 2, -1.0), (4, 1, -1.0)],
                ],
            ],
        ),
    }
}

/// Inputs to a reference bilinear score: role vectors in slot order
/// (`u_{1,1}, …, u_{1,m_gamma}, u_{2,1}, …`) and the `m×d` head and tail blocks.
#[derive(Debug, Clone)]
pub struct ReferenceInputs {
    pub roles: Vec<Vec<f64>>,
    pub head: DenseMatrix,
    pub tail: DenseMatrix,
}

fn hamilton(p: [f64; 4], q: [f64; 4]) -> [f64; 4] {
    let [a1, b1, c1, d1] = p;
    let [a2, b2, c2, d2] = q;
    [
        a1 * a2 - b1 * b2 - c1 * c2 - d1 * d2,
        a1 * b2 + b1 * a2 + c1 * d2 - d1 * c2,
        a1 * c2 - b1 * d2 + c1 * a2 + d1 * b2,
        a1 * d2 + b1 * c2 - c1 * b2 + d1 * a2,
    ]
}

/// Score of the classic model, scaled by `1/4`.
pub fn reference_bilinear_score(kind: BilinearKind, x: &ReferenceInputs) -> f64 {
    let (h, t, u) = (&x.head, &x.tail, &x.roles);
    let d = h.cols();
    let raw: f64 = match kind {
        BilinearKind::DistMult => {
            // ⟨[u1;u2], [h1;h2], [t1;t2]⟩
            (0..2)
                .map(|c| (0..d).map(|l| u[c][l] * h.get(c, l) * t.get(c, l)).sum::<f64>())
                .sum()
        }
        BilinearKind::SimplE => (0..d)
            .map(|l| u[0][l] * h.get(0, l) * t.get(1, l) + u[1][l] * h.get(1, l) * t.get(0, l))
            .sum(),
        BilinearKind::ComplEx => (0..d)
            .map(|l| {
                // Re(r·h·conj(t))
                let (rr, ri) = (u[0][l], u[1][l]);
                let (hr, hi) = (h.get(0, l), h.get(1, l));
                let (tr, ti) = (t.get(0, l), -t.get(1, l));
                let (pr, pi) = (rr * hr - ri * hi, rr * hi + ri * hr);
                pr * tr - pi * ti
            })
            .sum(),
        BilinearKind::QuatE => (0..d)
            .map(|l| {
                let w = [u[0][l], u[1][l], u[2][l], u[3][l]];
                let qh = [h.get(0, l), h.get(1, l), h.get(2, l), h.get(3, l)];
                let rot = hamilton(w, qh);
                (0..4).map(|c| rot[c] * t.get(c, l)).sum::<f64>()
            })
            .sum(),
    };
    raw / 4.0
}

/// Worst absolute and relative deviation over a batch of random draws.
#[derive(Debug, Clone, Serialize)]
pub struct EquivalenceReport {
    pub kind: String,
    pub draws: usize,
    pub max_abs_dev: f64,
    pub max_rel_dev: f64,
}

/// One random draw: `(RAM score, reference score)`.
pub fn equivalence_trial<R: Rng>(kind: BilinearKind, d: usize, rng: &mut R) -> Result<(f64, f64)> {
    let mode = Mode::Preset(kind);
    let cfg = ModelConfig::new(d, 1, 1, mode)?;
    let layout = Layout::from_arities(2, vec![2], None, mode)?;
    let mut params = ModelParams::zeros(cfg, layout)?;
    for t in params.tensors.values_mut() {
        for x in &mut t.data {
            *x = StandardNormal.sample(rng);
        }
    }
    let m = params.config.m;
    let roles = params.tensor(TensorId::RoleVectors);
    let inputs = ReferenceInputs {
        roles: (0..roles.n_blocks()).map(|b| roles.block(b).to_vec()).collect(),
        head: DenseMatrix::from_vec(m, d, params.entity(0).to_vec())?,
        tail: DenseMatrix::from_vec(m, d, params.entity(1).to_vec())?,
    };
    let ram = Scorer::new(&params).score(&Fact::new(0, vec![0, 1]))?;
    Ok((ram, reference_bilinear_score(kind, &inputs)))
}

/// Compare preset RAM scores with the reference models over `draws` random
/// parameter draws.
pub fn run_equivalence(kind: BilinearKind, draws: usize, d: usize, seed: u64) -> Result<EquivalenceReport> {
    let mut rng = rng_for(seed, &[kind as u64]);
    let (mut abs, mut rel): (f64, f64) = (0.0, 0.0);
    for _ in 0..draws {
        let (ram, reference) = equivalence_trial(kind, d, &mut rng)?;
        abs = abs.max((ram - reference).abs());
        rel = rel.max((ram - reference).abs() / reference.abs().max(1e-12));
    }
    Ok(EquivalenceReport {
        kind: kind.to_string(),
        draws,
        max_abs_dev: abs,
        max_rel_dev: rel,
    })
}
