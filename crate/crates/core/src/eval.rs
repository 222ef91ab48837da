//! Filtered link-prediction ranking, MRR and Hit@k.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{RamError, Result};
use crate::kb::{filtered_candidates, Fact, KnowledgeBase, Split};
use crate::model::{ModelParams, Scorer};

pub const HIT_KS: [usize; 3] = [1, 3, 10];

/// `1 +` the number of candidates scoring strictly higher than `truth`.
pub fn rank_from_scores(scores: &[f64], truth: usize, candidates: &[bool]) -> usize {
    let s = scores[truth];
    1 + scores
        .iter()
        .zip(candidates)
        .filter(|(&x, &c)| c && x > s)
        .count()
}

/// Filtered rank of the true entity at `position`.
pub fn rank_with(scorer: &Scorer<'_>, kb: &KnowledgeBase, fact: &Fact, position: usize) -> Result<usize> {
    let scores = scorer.score_all(fact, position)?;
    let mask = filtered_candidates(kb, fact, position);
    Ok(rank_from_scores(&scores, fact.entities[position], &mask))
}

pub fn rank(params: &ModelParams, kb: &KnowledgeBase, fact: &Fact, position: usize) -> Result<usize> {
    rank_with(&Scorer::for_relations(params, &[fact.relation]), kb, fact, position)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mrr: f64,
    pub hits: BTreeMap<usize, f64>,
    pub count: usize,
}

impl Metrics {
    fn from_ranks(ranks: &[usize]) -> Self {
        let n = ranks.len().max(1) as f64;
        Self {
            mrr: ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n,
            hits: HIT_KS
                .iter()
                .map(|&k| (k, ranks.iter().filter(|&&r| r <= k).count() as f64 / n))
                .collect(),
            count: ranks.len(),
        }
    }

    pub fn hit(&self, k: usize) -> f64 {
        self.hits.get(&k).copied().unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mrr: f64,
    pub hits: BTreeMap<usize, f64>,
    pub per_arity: BTreeMap<usize, Metrics>,
    pub n_queries: usize,
    pub seconds: f64,
}

impl EvalReport {
    /// Aggregate `(arity, rank)` pairs.
    pub fn from_ranks(ranks: &[(usize, usize)], seconds: f64) -> Self {
        let all: Vec<usize> = ranks.iter().map(|&(_, r)| r).collect();
        let overall = Metrics::from_ranks(&all);
        let mut by_arity: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &(a, r) in ranks {
            by_arity.entry(a).or_default().push(r);
        }
        Self {
            mrr: overall.mrr,
            hits: overall.hits,
            per_arity: by_arity
                .into_iter()
                .map(|(a, rs)| (a, Metrics::from_ranks(&rs)))
                .collect(),
            n_queries: ranks.len(),
            seconds,
        }
    }

    pub fn hit(&self, k: usize) -> f64 {
        self.hits.get(&k).copied().unwrap_or(f64::NAN)
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }

    /// `arity,count,mrr,hit1,hit3,hit10`, one row per arity.
    pub fn write_arity_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "arity,count,mrr,hit1,hit3,hit10")?;
        for (a, m) in &self.per_arity {
            writeln!(
                out,
                "{a},{},{},{},{},{}",
                m.count,
                m.mrr,
                m.hit(1),
                m.hit(3),
                m.hit(10)
            )?;
        }
        Ok(())
    }

    /// Plain-text table for terminals.
    pub fn table(&self) -> String {
        let mut s = format!(
            "{:>8} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
            "arity", "queries", "MRR", "Hit@1", "Hit@3", "Hit@10"
        );
        for (a, m) in &self.per_arity {
            s += &format!(
                "{a:>8} {:>8} {:>8.4} {:>8.4} {:>8.4} {:>8.4}\n",
                m.count,
                m.mrr,
                m.hit(1),
                m.hit(3),
                m.hit(10)
            );
        }
        s += &format!(
            "{:>8} {:>8} {:>8.4} {:>8.4} {:>8.4} {:>8.4}\n",
            "all",
            self.n_queries,
            self.mrr,
            self.hit(1),
            self.hit(3),
            self.hit(10)
        );
        s
    }
}

/// Filtered ranks of every position of every fact, in fact order.
pub fn ranks(params: &ModelParams, kb: &KnowledgeBase, facts: &[Fact]) -> Result<Vec<(usize, usize)>> {
    let scorer = Scorer::new(params);
    let per_fact: Vec<Result<Vec<(usize, usize)>>> = facts
        .par_iter()
        .map(|f| {
            (0..f.arity())
                .map(|i| Ok((f.arity(), rank_with(&scorer, kb, f, i)?)))
                .collect()
        })
        .collect();
    let mut out = Vec::new();
    for r in per_fact {
        out.extend(r?);
    }
    Ok(out)
}

/// Rank every position of every fact in `split`.
pub fn evaluate(params: &ModelParams, kb: &KnowledgeBase, split: Split) -> Result<EvalReport> {
    let facts = kb.split(split);
    if facts.is_empty() {
        return Err(RamError::Data(format!("{split:?} split is empty")));
    }
    let start = Instant::now();
    let r = ranks(params, kb, facts)?;
    Ok(EvalReport::from_ranks(&r, start.elapsed().as_secs_f64()))
}
