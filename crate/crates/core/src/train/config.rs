//! Flat `key=value` run configuration.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{RamError, Result};
use crate::model::ModelConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

fn bad(key: &str, value: &str, line: usize) -> RamError {
    RamError::Config(format!("line {line}: bad value {value:?} for {key}"))
}

impl RunConfig {
    /// Parse `key=value` lines; `#` starts a comment. Unset keys keep their
    /// defaults, unknown keys are an error.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| RamError::Config(format!("line {line_no}: expected key=value")))?;
            cfg.set(key.trim(), value.trim(), line_no)?;
        }
        cfg.validated()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RamError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
            value.parse().map_err(|_| bad(key, value, line))
        }
        let (m, t) = (&mut self.model, &mut self.train);
        match key {
            "d" => m.d = num(key, value, line)?,
            "m" => m.m = num(key, value, line)?,
            "K" | "k" => m.k = num(key, value, line)?,
            "mode" => m.mode = value.parse().map_err(|_| bad(key, value, line))?,
            "m_gamma" => m.m_gamma = num(key, value, line)?,
            "n_pmat" => m.n_pmat = num(key, value, line)?,
            "init_std" => m.init_std = num(key, value, line)?,
            "batch_size" => t.batch_size = num(key, value, line)?,
            "learning_rate" => t.learning_rate = num(key, value, line)?,
            "decay_rate" => t.decay_rate = num(key, value, line)?,
            "dropout_p" => t.dropout_p = num(key, value, line)?,
            "max_epochs" => t.max_epochs = num(key, value, line)?,
            "patience" => t.patience = num(key, value, line)?,
            "eval_every" => t.eval_every = num(key, value, line)?,
            "neg_mode" => t.neg_mode = value.parse().map_err(|_| bad(key, value, line))?,
            "seed" => t.seed = num(key, value, line)?,
            "threads" => t.threads = num(key, value, line)?,
            _ => return Err(RamError::Config(format!("line {line}: unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validated(mut self) -> Result<Self> {
        self.model = self.model.normalized()?;
        self.train.validate()?;
        Ok(self)
    }

    /// Every key with its resolved value, in the file format.
    pub fn to_text(&self) -> String {
        let (m, t) = (&self.model, &self.train);
        let mut s = String::new();
        let _ = writeln!(s, "d={}\nm={}\nK={}\nmode={}", m.d, m.m, m.k, m.mode);
        let _ = writeln!(s, "m_gamma={}\nn_pmat={}\ninit_std={}", m.m_gamma, m.n_pmat, m.init_std);
        let _ = writeln!(
            s,
            "batch_size={}\nlearning_rate={}\ndecay_rate={}\ndropout_p={}",
            t.batch_size, t.learning_rate, t.decay_rate, t.dropout_p
        );
        let _ = writeln!(
            s,
            "max_epochs={}\npatience={}\neval_every={}\nneg_mode={}\nseed={}\nthreads={}",
            t.max_epochs, t.patience, t.eval_every, t.neg_mode, t.seed, t.threads
        );
        s
    }
}
