//! Mini-batch training with the multi-class log-loss, analytic gradients,
//! sparse Adam, per-epoch learning-rate decay and early stopping.

mod adam;
mod config;
mod grad;
mod gradcheck;

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use log::{debug, info};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{RamError, Result};
use crate::eval::evaluate;
use crate::kb::{KnowledgeBase, Split};
use crate::math::{derive_seed, rng_for};
use crate::model::{ModelConfig, ModelParams, Scorer};

pub use adam::SparseAdam;
pub use config::RunConfig;
pub use grad::{backward, batch_loss, corrupt, example_loss, loss, softmax_loss, Accum, Example, GradientBuffer};
pub use gradcheck::{gradcheck, random_toy, ToyProblem, GradcheckOptions, GradcheckReport, GRADCHECK_TOLERANCE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum NegMode {
    Full,
    Sampled(usize),
}

impl FromStr for NegMode {
    type Err = RamError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "full" {
            return Ok(NegMode::Full);
        }
        s.strip_prefix("sampled:")
            .and_then(|n| n.parse().ok())
            .map(NegMode::Sampled)
            .ok_or_else(|| RamError::Config(format!("bad neg_mode {s:?}; use full or sampled:N")))
    }
}

impl fmt::Display for NegMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NegMode::Full => f.write_str("full"),
            NegMode::Sampled(n) => write!(f, "sampled:{n}"),
        }
    }
}

impl TryFrom<String> for NegMode {
    type Error = RamError;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<NegMode> for String {
    fn from(n: NegMode) -> String {
        n.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub decay_rate: f64,
    pub dropout_p: f64,
    pub max_epochs: usize,
    /// Evaluations without improvement before stopping.
    pub patience: usize,
    pub eval_every: usize,
    pub neg_mode: NegMode,
    pub seed: u64,
    /// Worker threads; 1 is sequential and bitwise reproducible.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            learning_rate: 0.003,
            decay_rate: 0.995,
            dropout_p: 0.2,
            max_epochs: 1000,
            patience: 10,
            eval_every: 5,
            neg_mode: NegMode::Full,
            seed: 0,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(RamError::Config(msg));
        if self.batch_size == 0 {
            return fail("batch_size must be ≥ 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if !(self.decay_rate > 0.0 && self.decay_rate <= 1.0) {
            return fail(format!("decay_rate must lie in (0, 1], got {}", self.decay_rate));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return fail(format!("dropout_p must lie in [0, 1), got {}", self.dropout_p));
        }
        if self.eval_every == 0 {
            return fail("eval_every must be ≥ 1".into());
        }
        if self.threads == 0 {
            return fail("threads must be ≥ 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub seconds: f64,
    pub train_loss: f64,
    pub valid_mrr: Option<f64>,
}

pub const TRACE_HEADER: &str = "epoch,seconds,train_loss,valid_mrr";

pub fn write_trace<W: Write>(rows: &[TraceRow], mut out: W) -> Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for r in rows {
        write_trace_row(r, &mut out)?;
    }
    Ok(())
}

pub fn write_trace_row<W: Write>(r: &TraceRow, mut out: W) -> Result<()> {
    let mrr = r.valid_mrr.map(|x| x.to_string()).unwrap_or_default();
    writeln!(out, "{},{},{},{}", r.epoch, r.seconds, r.train_loss, mrr)?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best-validation parameters (last parameters if never evaluated).
    pub params: ModelParams,
    pub trace: Vec<TraceRow>,
    pub best_epoch: Option<usize>,
    pub best_valid_mrr: Option<f64>,
    pub stopped_early: bool,
}

/// Initialise parameters from `train_cfg.seed` and train.
pub fn train(kb: &KnowledgeBase, model_cfg: &ModelConfig, train_cfg: &TrainConfig) -> Result<TrainOutcome> {
    let params = ModelParams::for_vocab(model_cfg.clone(), &kb.vocab, train_cfg.seed)?;
    train_from(kb, params, train_cfg, |_| {})
}

/// Train starting from `params`, calling `on_epoch` after every epoch.
pub fn train_from(
    kb: &KnowledgeBase,
    params: ModelParams,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&TraceRow) + Send,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if kb.train.is_empty() {
        return Err(RamError::Data("empty training split".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| RamError::Config(format!("thread pool: {e}")))?;
    pool.install(|| run(kb, params, cfg, &mut on_epoch))
}

fn run(
    kb: &KnowledgeBase,
    mut params: ModelParams,
    cfg: &TrainConfig,
    on_epoch: &mut (dyn FnMut(&TraceRow) + Send),
) -> Result<TrainOutcome> {
    let n_e = kb.n_entities();
    let start = Instant::now();
    let mut adam = SparseAdam::default();
    let mut trace = Vec::new();
    let mut best: Option<(usize, f64, ModelParams)> = None;
    let mut bad_evals = 0;
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..kb.train.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng_for(cfg.seed, &[0x5eed, epoch as u64]));
        let lr = cfg.learning_rate * cfg.decay_rate.powi(epoch as i32 - 1);
        let mut loss_sum = 0.0;
        for (b, idxs) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<Example> = idxs
                .iter()
                .enumerate()
                .map(|(k, &fi)| {
                    let seed = derive_seed(cfg.seed, &[epoch as u64, b as u64, k as u64]);
                    Example::draw(&kb.train[fi], n_e, cfg.neg_mode, cfg.dropout_p, seed)
                })
                .collect();
            let (batch_loss, grads) = {
                let scorer = Scorer::new(&params);
                backward(&scorer, &batch, cfg.threads).map_err(|e| match e {
                    RamError::NonFinite { fact_index, fact, norms } => RamError::NonFinite {
                        fact_index: idxs.get(fact_index).copied().unwrap_or(fact_index),
                        fact,
                        norms,
                    },
                    other => other,
                })?
            };
            loss_sum += batch_loss * batch.len() as f64;
            adam.step(&mut params, &grads, lr);
        }
        let train_loss = loss_sum / kb.train.len() as f64;

        let mut valid_mrr = None;
        if epoch % cfg.eval_every == 0 && !kb.valid.is_empty() {
            let mrr = evaluate(&params, kb, Split::Valid)?.mrr;
            valid_mrr = Some(mrr);
            if best.as_ref().is_none_or(|(_, b, _)| mrr > *b) {
                best = Some((epoch, mrr, params.clone()));
                bad_evals = 0;
            } else {
                bad_evals += 1;
            }
        }
        let row = TraceRow {
            epoch,
            seconds: start.elapsed().as_secs_f64(),
            train_loss,
            valid_mrr,
        };
        match valid_mrr {
            Some(m) => info!("epoch {epoch}: loss {train_loss:.5}, valid MRR {m:.4}"),
            None => debug!("epoch {epoch}: loss {train_loss:.5}"),
        }
        on_epoch(&row);
        trace.push(row);
        if valid_mrr.is_some() && bad_evals >= cfg.patience {
            stopped_early = true;
            info!("early stop at epoch {epoch}");
            break;
        }
    }

    Ok(match best {
        Some((epoch, mrr, best_params)) => TrainOutcome {
            params: best_params,
            trace,
            best_epoch: Some(epoch),
            best_valid_mrr: Some(mrr),
            stopped_early,
        },
        None => TrainOutcome {
            params,
            trace,
            best_epoch: None,
            best_valid_mrr: None,
            stopped_early,
        },
    })
}
