//! Training-split subsetting for arity and binary-ratio ablations.

use rand::seq::SliceRandom;

use super::{Fact, KnowledgeBase};
use crate::error::{RamError, Result};
use crate::math::rng_for;

fn keep_random(facts: &[Fact], fraction: f64, seed: u64, tag: u64) -> Vec<bool> {
    let n_keep = (facts.len() as f64 * fraction).round() as usize;
    let mut order: Vec<usize> = (0..facts.len()).collect();
    order.shuffle(&mut rng_for(seed, &[tag]));
    let mut keep = vec![false; facts.len()];
    for &i in &order[..n_keep] {
        keep[i] = true;
    }
    keep
}

fn check_fraction(name: &str, x: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&x) {
        return Err(RamError::Config(format!("{name} must lie in [0, 1], got {x}")));
    }
    Ok(())
}

/// Filter the training split by arity, then keep a seeded uniform fraction
/// `binary_keep_ratio` of the surviving binary facts.
///
/// Valid and test splits and the vocabulary are untouched; the truth index
/// is rebuilt. The binary count kept is `round(ratio · n_binary)`.
pub fn subset_by_arity(
    kb: &KnowledgeBase,
    keep: impl Fn(usize) -> bool,
    binary_keep_ratio: f64,
    seed: u64,
) -> Result<KnowledgeBase> {
    check_fraction("binary_keep_ratio", binary_keep_ratio)?;
    let by_arity: Vec<&Fact> = kb.train.iter().filter(|f| keep(f.arity())).collect();
    let binary: Vec<Fact> = by_arity
        .iter()
        .filter(|f| f.arity() == 2)
        .map(|f| (*f).clone())
        .collect();
    let keep_binary = keep_random(&binary, binary_keep_ratio, seed, 0xb1_4a7);
    let mut binary_iter = keep_binary.into_iter();
    let train: Vec<Fact> = by_arity
        .into_iter()
        .filter(|f| f.arity() != 2 || binary_iter.next().unwrap_or(false))
        .cloned()
        .collect();
    finish(kb, train)
}

/// Keep a seeded uniform fraction of all training facts.
pub fn sample_train_fraction(kb: &KnowledgeBase, fraction: f64, seed: u64) -> Result<KnowledgeBase> {
    check_fraction("fraction", fraction)?;
    let keep = keep_random(&kb.train, fraction, seed, 0x5a_b5e7);
    let train = kb
        .train
        .iter()
        .zip(keep)
        .filter_map(|(f, k)| k.then(|| f.clone()))
        .collect();
    finish(kb, train)
}

fn finish(kb: &KnowledgeBase, train: Vec<Fact>) -> Result<KnowledgeBase> {
    if train.is_empty() {
        return Err(RamError::Data("subset leaves an empty training split".into()));
    }
    let mut out = kb.clone();
    out.train = train;
    out.rebuild_truth();
    Ok(out)
}
