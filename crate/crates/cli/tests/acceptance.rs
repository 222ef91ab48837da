//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Dataset criteria read `$RAM_DATA_DIR/<name>` or `<workspace>/data/<name>`.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::Rng;
use ram_core::eval::{evaluate, rank, EvalReport};
use ram_core::express::check_random_ground_truths;
use ram_core::kb::{build_kb, Fact, KnowledgeBase, RawFact, Split};
use ram_core::math::rng_for;
use ram_core::model::{run_equivalence, score_batch_position, BilinearKind, Layout, Mode, ModelConfig, ModelParams, Scorer};
use ram_core::train::{train, TrainConfig};

type Outcome = Result<String, String>;

fn ram() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ram"))
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let out = ram()
        .args(["gradcheck", "--count", "20", "--seed", "1"])
        .env("RAM_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let stdout = String::from_utf8_lossy(&out.stdout);
    let summary = stdout.lines().last().unwrap_or("").to_string();
    let configs = stdout.lines().filter(|l| l.starts_with("config")).count();
    check(
        out.status.success() && configs == 20 && secs < 60.0,
        format!("{configs} configurations, {summary}, {secs:.1}s"),
    )
}

fn bilinear_equivalence() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for kind in BilinearKind::ALL {
        let rep = run_equivalence(kind, 200, 16, 7).map_err(|e| e.to_string())?;
        worst = worst.max(rep.max_rel_dev);
        parts.push(format!("{kind} {:.1e}", rep.max_rel_dev));
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst <= 1e-9 && secs < 10.0,
        format!("max rel dev {} ({secs:.2}s)", parts.join(", ")),
    )
}

fn expressiveness() -> Outcome {
    let start = Instant::now();
    let reports = check_random_ground_truths(50, 31).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let good = reports
        .iter()
        .filter(|r| r.pass && r.true_scores_equal_arity && r.max_false_score.is_none_or(|m| m == 0.0))
        .count();
    let tuples: u128 = reports.iter().map(|r| r.tuples).sum();
    check(
        good == 50 && secs < 60.0,
        format!("{good}/50 ground truths separated exactly, {tuples} tuples enumerated, {secs:.2}s"),
    )
}

fn random_kb(seed: u64) -> KnowledgeBase {
    let mut rng = rng_for(seed, &[0xacc]);
    let n_e = rng.random_range(3..=20);
    let n_facts = rng.random_range(4..=50);
    let arities = [2, 3, 4, 2];
    let mut seen = HashSet::new();
    let mut raws = Vec::new();
    for _ in 0..n_facts {
        let r = rng.random_range(0..arities.len());
        let ents: Vec<String> = (0..arities[r]).map(|_| format!("e{}", rng.random_range(0..n_e))).collect();
        if seen.insert((r, ents.clone())) {
            let refs: Vec<&str> = ents.iter().map(String::as_str).collect();
            raws.push(RawFact::new(format!("r{r}"), &refs));
        }
    }
    let test = raws.split_off(raws.len() - (raws.len() / 3).max(1));
    build_kb(&raws, &[], &test, false).expect("random kb")
}

/// Sort the surviving candidates by score and find the truth's first slot.
fn oracle_rank(params: &ModelParams, kb: &KnowledgeBase, fact: &Fact, pos: usize) -> usize {
    let scores = score_batch_position(params, fact, pos).expect("scores");
    let known: HashSet<(usize, Vec<usize>)> = kb.all_facts().map(|f| (f.relation, f.entities.clone())).collect();
    let mut kept: Vec<f64> = (0..scores.len())
        .filter(|&e| {
            let mut alt = fact.entities.clone();
            alt[pos] = e;
            e == fact.entities[pos] || !known.contains(&(fact.relation, alt))
        })
        .map(|e| scores[e])
        .collect();
    kept.sort_by(|a, b| b.total_cmp(a));
    let truth = scores[fact.entities[pos]];
    kept.iter().position(|&s| s == truth).expect("truth kept") + 1
}

fn ranking_oracle() -> Outcome {
    let start = Instant::now();
    let mut queries = 0;
    for seed in 0..20 {
        let kb = random_kb(seed);
        let cfg = ModelConfig::new(4, 2, 3, Mode::Latent).map_err(|e| e.to_string())?;
        let params = ModelParams::for_vocab(cfg, &kb.vocab, seed).map_err(|e| e.to_string())?;
        let mut want = Vec::new();
        for f in &kb.test {
            for i in 0..f.arity() {
                let expected = oracle_rank(&params, &kb, f, i);
                let got = rank(&params, &kb, f, i).map_err(|e| e.to_string())?;
                if got != expected {
                    return Err(format!("kb {seed}: rank {got} but oracle {expected}"));
                }
                want.push((f.arity(), expected));
            }
        }
        queries += want.len();
        let rep = evaluate(&params, &kb, Split::Test).map_err(|e| e.to_string())?;
        let oracle = EvalReport::from_ranks(&want, 0.0);
        if rep.mrr != oracle.mrr || rep.hits != oracle.hits || rep.per_arity != oracle.per_arity {
            return Err(format!("kb {seed}: report differs from oracle"));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(secs < 30.0, format!("20 KBs, {queries} queries identical, {secs:.2}s"))
}

fn overfit_smoke() -> Outcome {
    let facts = [
        RawFact::new("likes", &["ann", "bob"]),
        RawFact::new("likes", &["bob", "cat"]),
        RawFact::new("plays", &["ann", "hamlet", "globe"]),
        RawFact::new("plays", &["dan", "lear", "globe"]),
        RawFact::new("plays", &["cat", "hamlet", "rose"]),
    ];
    let kb = build_kb(&facts, &[], &[], false).map_err(|e| e.to_string())?;
    let model = ModelConfig::new(8, 2, 4, Mode::Latent).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        batch_size: 5,
        learning_rate: 0.05,
        decay_rate: 1.0,
        dropout_p: 0.0,
        max_epochs: 500,
        seed: 3,
        ..TrainConfig::default()
    };
    let out = train(&kb, &model, &cfg).map_err(|e| e.to_string())?;
    let rep = evaluate(&out.params, &kb, Split::Train).map_err(|e| e.to_string())?;
    check(
        rep.mrr == 1.0,
        format!("train MRR {} after {} epochs", rep.mrr, out.trace.len()),
    )
}

fn dataset_dir(name: &str) -> Option<PathBuf> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    let mut dirs: Vec<PathBuf> = std::env::var_os("RAM_DATA_DIR")
        .map(|d| vec![PathBuf::from(d).join(name)])
        .unwrap_or_default();
    dirs.push(root.join("data").join(name));
    dirs.into_iter().find(|d| d.join("train.txt").is_file() || d.join("train.json").is_file())
}

fn threads() -> String {
    std::thread::available_parallelism().map_or(1, |n| n.get()).to_string()
}

fn read_json(path: &Path) -> Result<serde_json::Value, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| e.to_string())
}

fn fb_auto_reproduction() -> Outcome {
    let data = dataset_dir("FB-AUTO").ok_or("FB-AUTO not found (set RAM_DATA_DIR or add data/FB-AUTO)")?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = dir.path().join("fb.cfg");
    std::fs::write(&cfg, "d=25\nm=2\nK=10\n").map_err(|e| e.to_string())?;
    let out = dir.path().join("run");
    let start = Instant::now();
    let status = ram()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--data-dir")
        .arg(&data)
        .arg("--out")
        .arg(&out)
        .args(["--threads", &threads()])
        .env("RAM_LOG", "warn")
        .status()
        .map_err(|e| e.to_string())?;
    if !status.success() {
        return Err(format!("train exited with {status}"));
    }
    let hours = start.elapsed().as_secs_f64() / 3600.0;
    let rep = read_json(&out.join("eval_test.json"))?;
    let mrr = rep["mrr"].as_f64().unwrap_or(0.0);
    let hit1 = rep["hits"]["1"].as_f64().unwrap_or(0.0);
    check(
        mrr >= 0.75 && hit1 >= 0.70,
        format!("test MRR {mrr:.4}, Hit@1 {hit1:.4}, {hours:.2}h"),
    )
}

fn jf17k_subset_smoke() -> Outcome {
    let data = dataset_dir("JF17K").ok_or("JF17K not found (set RAM_DATA_DIR or add data/JF17K)")?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = dir.path().join("jf.cfg");
    std::fs::write(&cfg, "max_epochs=10\neval_every=5\n").map_err(|e| e.to_string())?;
    let out = dir.path().join("run");
    let status = ram()
        .args(["train", "--subset", "0.1", "--config"])
        .arg(&cfg)
        .arg("--data-dir")
        .arg(&data)
        .arg("--out")
        .arg(&out)
        .args(["--threads", &threads()])
        .env("RAM_LOG", "warn")
        .status()
        .map_err(|e| e.to_string())?;
    if !status.success() {
        return Err(format!("train exited with {status}"));
    }
    well_formed_arity_report(&out)
}

/// Header, one row per arity with sane values, counts summing to the total.
fn well_formed_arity_report(run: &Path) -> Outcome {
    let json = read_json(&run.join("eval_test.json"))?;
    let total = json["n_queries"].as_u64().ok_or("n_queries missing")?;
    let csv = std::fs::read_to_string(run.join("eval_test_arity.csv")).map_err(|e| e.to_string())?;
    let mut lines = csv.lines();
    if lines.next() != Some("arity,count,mrr,hit1,hit3,hit10") {
        return Err("bad per-arity header".into());
    }
    let mut sum = 0;
    let mut arities = Vec::new();
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        let nums: Vec<f64> = cols.iter().filter_map(|c| c.parse().ok()).collect();
        if nums.len() != 6 || nums[2..].iter().any(|x| !(0.0..=1.0).contains(x)) || nums[3] > nums[4] || nums[4] > nums[5] {
            return Err(format!("malformed row {line:?}"));
        }
        sum += nums[1] as u64;
        arities.push(cols[0].to_string());
    }
    check(
        sum == total && !arities.is_empty(),
        format!("per-arity rows for arities {} covering {sum}/{total} queries", arities.join(",")),
    )
}

/// Median per-fact scoring time for each `d`, measured round-robin so that
/// background load hits every size alike.
fn median_score_times(dims: &[usize]) -> Vec<f64> {
    let n_e = 1000;
    let models: Vec<ModelParams> = dims
        .iter()
        .map(|&d| {
            let layout = Layout::from_arities(n_e, vec![3; 4], None, Mode::Latent).expect("layout");
            let cfg = ModelConfig::new(d, 2, 10, Mode::Latent).expect("config");
            ModelParams::init(cfg, layout, 1).expect("params")
        })
        .collect();
    let scorers: Vec<Scorer> = models.iter().map(Scorer::new).collect();
    let mut rng = rng_for(9, &[]);
    let facts: Vec<Fact> = (0..2000)
        .map(|_| Fact::new(rng.random_range(0..4), (0..3).map(|_| rng.random_range(0..n_e)).collect()))
        .collect();
    let mut sink = 0.0;
    let mut times = vec![Vec::new(); dims.len()];
    for _ in 0..61 {
        for (scorer, t) in scorers.iter().zip(&mut times) {
            let start = Instant::now();
            for f in &facts {
                sink += scorer.score(f).expect("score");
            }
            t.push(start.elapsed().as_secs_f64() / facts.len() as f64);
        }
    }
    std::hint::black_box(sink);
    times
        .into_iter()
        .map(|mut t| {
            t.sort_by(f64::total_cmp);
            t[t.len() / 2]
        })
        .collect()
}

fn linear_time_scoring() -> Outcome {
    let t = median_score_times(&[64, 128, 256]);
    let ratios = [t[1] / t[0], t[2] / t[1]];
    check(
        ratios.iter().all(|r| (1.5..=2.6).contains(r)),
        format!(
            "per-fact median {:.0}/{:.0}/{:.0} ns, ratios {:.2} and {:.2}",
            t[0] * 1e9,
            t[1] * 1e9,
            t[2] * 1e9,
            ratios[0],
            ratios[1]
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("gradient correctness", gradient_correctness),
        ("bilinear equivalence", bilinear_equivalence),
        ("expressiveness", expressiveness),
        ("filtered-ranking oracle", ranking_oracle),
        ("overfit smoke", overfit_smoke),
        ("FB-AUTO reproduction", fb_auto_reproduction),
        ("JF17K subset smoke", jf17k_subset_smoke),
        ("linear-time scoring", linear_time_scoring),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail})", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({detail})", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
