use std::collections::HashMap;

use super::GradientBuffer;
use crate::model::{ModelParams, TensorId};

#[derive(Debug, Clone, Default)]
struct SlotState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

/// Adam with moments and step counts kept per parameter block; only blocks
/// present in the gradient buffer move.
#[derive(Debug, Clone)]
pub struct SparseAdam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    state: HashMap<(TensorId, usize), SlotState>,
}

impl Default for SparseAdam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            state: HashMap::new(),
        }
    }
}

impl SparseAdam {
    pub fn step(&mut self, params: &mut ModelParams, grads: &GradientBuffer, lr: f64) {
        for (&(id, block), g) in grads.iter() {
            let Some(tensor) = params.tensors.get_mut(&id) else {
                continue;
            };
            if tensor.frozen {
                continue;
            }
            let st = self.state.entry((id, block)).or_insert_with(|| SlotState {
                m: vec![0.0; g.len()],
                v: vec![0.0; g.len()],
                t: 0,
            });
            st.t += 1;
            let c1 = 1.0 - self.beta1.powi(st.t);
            let c2 = 1.0 - self.beta2.powi(st.t);
            let theta = tensor.block_mut(block);
            for i in 0..g.len() {
                st.m[i] = self.beta1 * st.m[i] + (1.0 - self.beta1) * g[i];
                st.v[i] = self.beta2 * st.v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = st.m[i] / c1;
                let v_hat = st.v[i] / c2;
                theta[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }

    /// Step count of a block (0 if never updated).
    pub fn steps(&self, id: TensorId, block: usize) -> i32 {
        self.state.get(&(id, block)).map_or(0, |s| s.t)
    }
}
