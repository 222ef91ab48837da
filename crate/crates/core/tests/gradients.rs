use proptest::prelude::*;
use ram_core::kb::Fact;
use ram_core::math::rng_for;
use ram_core::model::{BilinearKind, Layout, Mode, ModelConfig, ModelParams, Scorer, TensorId};
use ram_core::train::{
    backward, batch_loss, corrupt, example_loss, gradcheck, loss, random_toy, softmax_loss, Example,
    GradcheckOptions, NegMode, SparseAdam, GRADCHECK_TOLERANCE,
};

fn toy_latent() -> (ModelParams, Vec<Fact>) {
    // d=4, m=2, K=3, one arity-3 relation
    let layout = Layout::from_arities(5, vec![3], None, Mode::Latent).unwrap();
    let mut cfg = ModelConfig::new(4, 2, 3, Mode::Latent).unwrap();
    cfg.init_std = 0.5;
    let mut p = ModelParams::init(cfg, layout, 21).unwrap();
    for (i, x) in p.tensor_mut(TensorId::RoleWeights).data.iter_mut().enumerate() {
        *x = (i as f64 * 0.37).sin();
    }
    (p, vec![Fact::new(0, vec![0, 3, 1]), Fact::new(0, vec![2, 2, 4])])
}

#[test]
fn finite_differences_on_ternary_toy() {
    let (p, facts) = toy_latent();
    let batch: Vec<Example> = facts.iter().map(Example::plain).collect();
    let rep = gradcheck(&p, &batch, &GradcheckOptions::default()).unwrap();
    assert!(rep.pass, "{rep:?}");
    assert!(rep.per_family.contains_key("role_weights"));
    assert!(rep.per_family.contains_key("basis_matrices[3]"));
}

#[test]
fn finite_differences_with_dropout_and_sampled_negatives() {
    let (p, facts) = toy_latent();
    let batch: Vec<Example> = facts
        .iter()
        .enumerate()
        .map(|(i, f)| Example::draw(f, 5, NegMode::Sampled(2), 0.3, 40 + i as u64))
        .collect();
    let rep = gradcheck(&p, &batch, &GradcheckOptions::default()).unwrap();
    assert!(rep.pass, "{rep:?}");
}

#[test]
fn finite_differences_every_mode() {
    for mode in [Mode::Latent, Mode::Extended, Mode::Explicit, Mode::Raw] {
        for seed in 0..5 {
            let toy = random_toy(seed, mode).unwrap();
            let rep = gradcheck(&toy.params, &toy.batch(0.2), &GradcheckOptions::default()).unwrap();
            assert!(rep.max_rel_err <= GRADCHECK_TOLERANCE, "{mode} seed {seed}: {rep:?}");
        }
    }
}

#[test]
fn finite_differences_presets() {
    for kind in BilinearKind::ALL {
        let mode = Mode::Preset(kind);
        let layout = Layout::from_arities(4, vec![2, 2], None, mode).unwrap();
        let mut cfg = ModelConfig::new(3, 2, 1, mode).unwrap();
        cfg.init_std = 0.5;
        let p = ModelParams::init(cfg, layout, 3).unwrap();
        let facts = [Fact::new(0, vec![0, 1]), Fact::new(1, vec![3, 3])];
        let batch: Vec<Example> = facts.iter().map(Example::plain).collect();
        let rep = gradcheck(&p, &batch, &GradcheckOptions::default()).unwrap();
        assert!(rep.pass, "{kind}: {rep:?}");
    }
}

#[test]
fn perturbed_backward_is_caught() {
    let (p, facts) = toy_latent();
    let batch: Vec<Example> = facts.iter().map(Example::plain).collect();
    let opts = GradcheckOptions {
        perturb: Some(1e-3),
        ..Default::default()
    };
    let rep = gradcheck(&p, &batch, &opts).unwrap();
    assert!(!rep.pass);
    assert!(rep.per_family.values().all(|&e| e > GRADCHECK_TOLERANCE));
}

#[test]
fn gradcheck_is_repeatable() {
    let toy = random_toy(9, Mode::Latent).unwrap();
    let a = gradcheck(&toy.params, &toy.batch(0.2), &GradcheckOptions::default()).unwrap();
    let b = gradcheck(&toy.params, &toy.batch(0.2), &GradcheckOptions::default()).unwrap();
    assert_eq!(a.per_family, b.per_family);
}

#[test]
fn single_candidate_has_zero_gradient() {
    let (p, facts) = toy_latent();
    let ex = Example::draw(&facts[0], 5, NegMode::Sampled(0), 0.0, 1);
    let sc = Scorer::new(&p);
    let (l, grads) = backward(&sc, std::slice::from_ref(&ex), 1).unwrap();
    assert_eq!(l, 0.0);
    assert_eq!(grads.max_abs(), 0.0);
}

#[test]
fn frozen_tensors_get_no_gradient() {
    let layout = Layout::from_arities(3, vec![2], None, Mode::Preset(BilinearKind::QuatE)).unwrap();
    let mut p = ModelParams::init(ModelConfig::new(2, 1, 1, Mode::Preset(BilinearKind::QuatE)).unwrap(), layout, 1).unwrap();
    let fact = Fact::new(0, vec![0, 2]);
    let sc = Scorer::new(&p);
    let (_, g) = backward(&sc, &[Example::plain(&fact)], 1).unwrap();
    assert!(g.touches(TensorId::RoleVectors));
    assert!(g.touches(TensorId::Entity));
    assert!(!g.touches(TensorId::RolePatterns) && !g.touches(TensorId::BasisMatrices(2)));
    p.tensor_mut(TensorId::Entity).frozen = true;
    let sc = Scorer::new(&p);
    let (_, g) = backward(&sc, &[Example::plain(&fact)], 1).unwrap();
    assert!(!g.touches(TensorId::Entity));
}

#[test]
fn uniform_scores_give_log_n() {
    let (mut p, facts) = toy_latent();
    p.tensor_mut(TensorId::Entity).data.fill(0.0);
    let l = loss(&p, &facts[0]).unwrap();
    assert!((l - 3.0 * 5f64.ln()).abs() < 1e-12);
    let layout = Layout::from_arities(4, vec![2], None, Mode::Latent).unwrap();
    let mut p2 = ModelParams::init(ModelConfig::new(3, 2, 2, Mode::Latent).unwrap(), layout, 0).unwrap();
    p2.tensor_mut(TensorId::Entity).data.fill(0.0);
    assert!((loss(&p2, &Fact::new(0, vec![1, 2])).unwrap() - 2.0 * 4f64.ln()).abs() < 1e-12);
}

#[test]
fn loss_matches_direct_exp_log() {
    let (p, facts) = toy_latent();
    for f in &facts {
        let mut want = 0.0;
        for i in 0..3 {
            let scores = ram_core::model::score_batch_position(&p, f, i).unwrap();
            let num = scores[f.entities[i]].exp();
            let den: f64 = scores.iter().map(|s| s.exp()).sum();
            want += -(num / den).ln();
        }
        let got = loss(&p, f).unwrap();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
}

#[test]
fn saturated_truth_gives_near_zero_loss() {
    assert!(softmax_loss(&[0.0, 800.0, -3.0], 1) < 1e-300);
    assert!((softmax_loss(&[0.0, 0.0], 0) - 2f64.ln()).abs() < 1e-15);
}

proptest! {
    #[test]
    fn loss_shift_invariant(scores in prop::collection::vec(-30.0f64..30.0, 1..20), c in -100.0f64..100.0, pick in 0usize..20) {
        let t = pick % scores.len();
        let shifted: Vec<f64> = scores.iter().map(|s| s + c).collect();
        prop_assert!((softmax_loss(&scores, t) - softmax_loss(&shifted, t)).abs() <= 1e-9);
    }

    #[test]
    fn optimizer_moves_only_touched_slots(seed in 0u64..200) {
        let toy = random_toy(seed, Mode::Latent).unwrap();
        let batch = toy.batch(0.0);
        let (_, grads) = backward(&Scorer::new(&toy.params), &batch[..1], 1).unwrap();
        let mut after = toy.params.clone();
        SparseAdam::default().step(&mut after, &grads, 0.01);
        for (id, t) in &toy.params.tensors {
            for b in 0..t.n_blocks() {
                if grads.get(*id, b).is_none() {
                    prop_assert_eq!(after.tensor(*id).block(b), t.block(b));
                }
            }
        }
    }
}

#[test]
fn corrupt_examples() {
    let f = Fact::new(0, vec![1, 2]);
    assert_eq!(corrupt(&f, 1, NegMode::Full, 4, &mut rng_for(0, &[])), vec![0, 1, 3]);
    let a = corrupt(&f, 0, NegMode::Sampled(2), 10, &mut rng_for(5, &[]));
    let b = corrupt(&f, 0, NegMode::Sampled(2), 10, &mut rng_for(5, &[]));
    assert_eq!(a, b);
    assert_eq!(a.len(), 2);
    assert!(a.iter().all(|&e| e != 1 && e < 10) && a[0] != a[1]);
    let c = corrupt(&f, 0, NegMode::Sampled(10), 5, &mut rng_for(5, &[]));
    let mut sorted = c.clone();
    sorted.sort();
    assert_eq!(sorted, vec![0, 2, 3, 4]);
}

#[test]
fn covering_sample_equals_full_loss() {
    let layout = Layout::from_arities(3, vec![2], None, Mode::Latent).unwrap();
    let p = ModelParams::init(ModelConfig::new(3, 2, 2, Mode::Latent).unwrap(), layout, 2).unwrap();
    let f = Fact::new(0, vec![2, 0]);
    let sc = Scorer::new(&p);
    for n in [2, 3, 7] {
        let ex = Example::draw(&f, 3, NegMode::Sampled(n), 0.0, 11);
        assert_eq!(example_loss(&sc, &ex).unwrap(), example_loss(&sc, &Example::plain(&f)).unwrap());
    }
}

#[test]
fn dropout_is_unbiased_on_scores() {
    let (p, facts) = toy_latent();
    let sc = Scorer::new(&p);
    let clean = sc.score(&facts[0]).unwrap();
    let n = 10_000;
    let mut xs = Vec::with_capacity(n);
    let mut rng = rng_for(77, &[]);
    for _ in 0..n {
        let mut ctx = sc.context(&facts[0]).unwrap();
        ctx.apply_dropout(0.2, &mut rng);
        xs.push(ctx.score());
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    assert!((mean - clean).abs() <= 3.0 * se, "mean {mean} clean {clean} se {se}");
}

#[test]
fn dropout_half_scales_by_two() {
    let (p, facts) = toy_latent();
    let sc = Scorer::new(&p);
    let base = sc.context(&facts[0]).unwrap();
    let mut a = sc.context(&facts[0]).unwrap();
    let mut b = sc.context(&facts[0]).unwrap();
    a.apply_dropout(0.5, &mut rng_for(3, &[]));
    b.apply_dropout(0.5, &mut rng_for(3, &[]));
    assert_eq!(a.score(), b.score());
    let mut c = sc.context(&facts[0]).unwrap();
    c.apply_dropout(0.0, &mut rng_for(3, &[]));
    assert_eq!(c.score(), base.score());
}

#[test]
fn parallel_chunks_match_sequential() {
    let layout = Layout::from_arities(30, vec![2, 3], None, Mode::Latent).unwrap();
    let p = ModelParams::init(ModelConfig::new(6, 2, 4, Mode::Latent).unwrap(), layout, 8).unwrap();
    let mut rng = rng_for(1, &[]);
    use rand::Rng;
    let facts: Vec<Fact> = (0..40)
        .map(|i| {
            let r = i % 2;
            Fact::new(r, (0..2 + r).map(|_| rng.random_range(0..30)).collect())
        })
        .collect();
    let batch: Vec<Example> = facts
        .iter()
        .enumerate()
        .map(|(i, f)| Example::draw(f, 30, NegMode::Full, 0.2, i as u64))
        .collect();
    let sc = Scorer::new(&p);
    let (l1, g1) = backward(&sc, &batch, 1).unwrap();
    let (l4, g4) = backward(&sc, &batch, 4).unwrap();
    assert!((l1 - l4).abs() <= 1e-9);
    assert_eq!(g1.len(), g4.len());
    for ((k1, v1), (k4, v4)) in g1.iter().zip(g4.iter()) {
        assert_eq!(k1, k4);
        for (a, b) in v1.iter().zip(v4) {
            assert!((a - b).abs() <= 1e-9);
        }
    }
    assert!((batch_loss(&sc, &batch).unwrap() - l1).abs() <= 1e-12);
}
