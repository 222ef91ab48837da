use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use ram_core::eval::evaluate;
use ram_core::express::{construct, verify_separation, GroundTruth};
use ram_core::kb::{
    load_dataset_dir, parse_tabular, sample_train_fraction, subset_by_arity, KnowledgeBase, Split,
};
use ram_core::model::{
    export_entities_csv, export_patterns_csv, export_roles_csv, load_checkpoint, run_equivalence, save_checkpoint,
    BilinearKind, CheckpointNames, Mode, ModelParams,
};
use ram_core::train::{
    gradcheck, random_toy, train_from, write_trace_row, GradcheckOptions, RunConfig, TRACE_HEADER,
};
use ram_core::{RamError, Result};

mod arity;
mod manifest;

use arity::ArityFilter;
use manifest::RunManifest;

#[derive(Parser)]
#[command(name = "ram", version, about = "Role-aware multilinear knowledge-base completion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoint, trace and manifest.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Seed used to carve the validation split; defaults to the one in
        /// the checkpoint.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Finite-difference check of the analytic gradient on random toy models.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of random configurations.
        #[arg(long, default_value_t = 20)]
        count: u64,
        /// Restrict to one mode; by default cycles latent, extended, explicit, raw.
        #[arg(long)]
        mode: Option<String>,
        #[arg(long, default_value_t = 0.0)]
        dropout: f64,
        /// Deliberately corrupt the analytic gradient by this amount.
        #[arg(long)]
        perturb: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare a preset against its reference bilinear score.
    Equiv {
        #[arg(long)]
        kind: String,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long, default_value_t = 16)]
        d: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the exact-separation assignment for a ground-truth fact file.
    Express {
        /// Tabular fact file listing every true fact.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export learned parameters as CSV.
    Export {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum)]
        what: ExportKind,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write an arity-filtered, binary-subsampled copy of a dataset.
    Subset {
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        ratio: f64,
        #[arg(long)]
        arity_filter: Option<ArityFilter>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ExportKind {
    Entity,
    Role,
    Pattern,
}

fn exit_code(err: &RamError) -> u8 {
    match err {
        e if e.is_config() => 2,
        RamError::NonFinite { .. } => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RAM_LOG", "info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// `Ok(false)` means the command ran but its check failed.
fn run(cmd: Command) -> Result<bool> {
    match cmd {
        Command::Train(args) => cmd_train(args),
        Command::Eval {
            checkpoint,
            data_dir,
            split,
            out,
            seed,
            threads,
        } => cmd_eval(&checkpoint, &data_dir, &split, &out, seed, threads),
        Command::Gradcheck {
            seed,
            count,
            mode,
            dropout,
            perturb,
            out,
        } => cmd_gradcheck(seed, count, mode.as_deref(), dropout, perturb, out.as_deref()),
        Command::Equiv {
            kind,
            trials,
            d,
            seed,
            out,
        } => cmd_equiv(&kind, trials, d, seed, out.as_deref()),
        Command::Express { spec, out } => cmd_express(&spec, out.as_deref()),
        Command::Export { checkpoint, what, out } => cmd_export(&checkpoint, what, &out),
        Command::Subset {
            data_dir,
            out,
            ratio,
            arity_filter,
            seed,
        } => cmd_subset(&data_dir, &out, ratio, arity_filter, seed),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| {
        RamError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })?))
}

fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut w = create(path)?;
    body(&mut w)?;
    w.flush()?;
    Ok(())
}

fn write_json(value: &impl serde::Serialize, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    println!("{text}");
    if let Some(path) = out {
        fs::write(path, text + "\n")?;
    }
    Ok(())
}

fn rayon_threads(n: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| RamError::Config(format!("thread pool: {e}")))
}

fn apply_subsets(
    mut kb: KnowledgeBase,
    subset: Option<f64>,
    ratio: Option<f64>,
    filter: Option<&ArityFilter>,
    seed: u64,
) -> Result<KnowledgeBase> {
    if ratio.is_some() || filter.is_some() {
        let all = ArityFilter::default();
        let f = filter.unwrap_or(&all);
        kb = subset_by_arity(&kb, |a| f.keeps(a), ratio.unwrap_or(1.0), seed)?;
    }
    if let Some(frac) = subset {
        kb = sample_train_fraction(&kb, frac, seed)?;
    }
    Ok(kb)
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    mode: Option<String>,
    /// Train on this seeded fraction of the training split.
    #[arg(long)]
    subset: Option<f64>,
    /// Fraction of binary training facts to keep.
    #[arg(long)]
    ratio: Option<f64>,
    /// Arities of training facts to keep, e.g. `2,3` or `3-6` or `3+`.
    #[arg(long)]
    arity_filter: Option<ArityFilter>,
}

fn cmd_train(args: TrainArgs) -> Result<bool> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.set("seed", &s.to_string(), 0)?;
    }
    if let Some(t) = args.threads {
        cfg.set("threads", &t.to_string(), 0)?;
    }
    if let Some(m) = &args.mode {
        cfg.set("mode", m, 0)?;
    }
    let cfg = cfg.validated()?;
    let seed = cfg.train.seed;

    let kb = load_dataset_dir(&args.data_dir, seed)?;
    let kb = apply_subsets(kb, args.subset, args.ratio, args.arity_filter.as_ref(), seed)?;
    info!(
        "{} entities, {} relations; {} train / {} valid / {} test facts",
        kb.n_entities(),
        kb.vocab.n_relations(),
        kb.train.len(),
        kb.valid.len(),
        kb.test.len()
    );
    let params = ModelParams::for_vocab(cfg.model.clone(), &kb.vocab, seed)?;
    info!("{} parameters", params.n_parameters());

    fs::create_dir_all(&args.out)?;
    let ckpt_path = args.out.join("model.ckpt");
    let trace_path = args.out.join("trace.csv");
    let manifest_path = args.out.join("manifest.json");
    fs::write(args.out.join("config.txt"), cfg.to_text())?;
    let mut manifest = RunManifest::start(&cfg, &args.data_dir)?;
    manifest.options = serde_json::json!({
        "subset": args.subset,
        "ratio": args.ratio,
        "arity_filter": args.arity_filter.as_ref().map(ToString::to_string),
    });
    manifest.artifacts.insert("checkpoint".into(), ckpt_path.clone());
    manifest.artifacts.insert("trace".into(), trace_path.clone());
    manifest.write(&manifest_path)?;

    let mut trace = create(&trace_path)?;
    writeln!(trace, "{TRACE_HEADER}")?;
    let mut trace_err = None;
    let outcome = train_from(&kb, params, &cfg.train, |row| {
        if trace_err.is_none() {
            if let Err(e) = write_trace_row(row, &mut trace).and_then(|_| Ok(trace.flush()?)) {
                trace_err = Some(e);
            }
        }
    })?;
    if let Some(e) = trace_err {
        return Err(e);
    }

    let names = CheckpointNames::from_vocab(&kb.vocab);
    let extra = serde_json::json!({
        "seed": seed,
        "best_epoch": outcome.best_epoch,
        "best_valid_mrr": outcome.best_valid_mrr,
        "epochs_run": outcome.trace.len(),
        "config": cfg,
    });
    save_checkpoint(&ckpt_path, &outcome.params, Some(&names), extra)?;
    info!("saved {}", ckpt_path.display());

    if !kb.test.is_empty() {
        let report = rayon_threads(cfg.train.threads)?.install(|| evaluate(&outcome.params, &kb, Split::Test))?;
        let (json, csv) = (args.out.join("eval_test.json"), args.out.join("eval_test_arity.csv"));
        write_file(&json, |w| report.write_json(w))?;
        write_file(&csv, |w| report.write_arity_csv(w))?;
        manifest.artifacts.insert("eval_json".into(), json);
        manifest.artifacts.insert("eval_arity_csv".into(), csv);
        println!("{}", report.table());
    }
    manifest.finish();
    manifest.write(&manifest_path)?;
    Ok(true)
}

fn cmd_eval(ckpt: &Path, data_dir: &Path, split: &str, out: &Path, seed: Option<u64>, threads: usize) -> Result<bool> {
    let split: Split = split.parse()?;
    let ck = load_checkpoint(ckpt)?;
    let seed = seed
        .or_else(|| ck.extra.get("seed").and_then(serde_json::Value::as_u64))
        .unwrap_or(0);
    let kb = load_dataset_dir(data_dir, seed)?;
    match &ck.names {
        Some(names) => names.check_matches(&kb.vocab)?,
        None => {
            if ck.params.n_entities() != kb.n_entities() || ck.params.layout.relation_arity != kb.vocab.relation_arities() {
                return Err(RamError::Data("checkpoint does not match the dataset vocabulary".into()));
            }
        }
    }
    let report = rayon_threads(threads)?.install(|| evaluate(&ck.params, &kb, split))?;
    fs::create_dir_all(out)?;
    let tag = format!("{split:?}").to_lowercase();
    write_file(&out.join(format!("eval_{tag}.json")), |w| report.write_json(w))?;
    write_file(&out.join(format!("eval_{tag}_arity.csv")), |w| report.write_arity_csv(w))?;
    println!("{}", report.table());
    Ok(true)
}

fn cmd_gradcheck(
    seed: u64,
    count: u64,
    mode: Option<&str>,
    dropout: f64,
    perturb: Option<f64>,
    out: Option<&Path>,
) -> Result<bool> {
    let modes: Vec<Mode> = match mode {
        Some(m) => vec![m.parse()?],
        None => vec![Mode::Latent, Mode::Extended, Mode::Explicit, Mode::Raw],
    };
    if !(0.0..1.0).contains(&dropout) {
        return Err(RamError::Config(format!("dropout must lie in [0, 1), got {dropout}")));
    }
    let opts = GradcheckOptions {
        perturb,
        ..GradcheckOptions::default()
    };
    let mut per_family = std::collections::BTreeMap::<String, f64>::new();
    let mut runs = Vec::new();
    for i in 0..count {
        let mode = modes[i as usize % modes.len()];
        let toy = random_toy(seed.wrapping_add(i), mode)?;
        let rep = gradcheck(&toy.params, &toy.batch(dropout), &opts)?;
        let c = &toy.params.config;
        println!(
            "config {i:>2} {mode:<10} d={} m={} K={}: max rel err {:.3e} over {} coordinates",
            c.d, c.m, c.k, rep.max_rel_err, rep.coordinates
        );
        for (fam, &e) in &rep.per_family {
            let w = per_family.entry(fam.clone()).or_insert(0.0);
            *w = w.max(e);
        }
        runs.push(serde_json::json!({ "mode": mode.to_string(), "d": c.d, "m": c.m, "K": c.k, "report": rep }));
    }
    for (fam, e) in &per_family {
        println!("{fam:<20} {e:.3e}");
    }
    let worst = per_family.values().fold(0.0f64, |a, &b| a.max(b));
    let pass = worst <= ram_core::train::GRADCHECK_TOLERANCE;
    println!("{} max relative error {worst:.3e}", if pass { "PASS" } else { "FAIL" });
    if let Some(path) = out {
        let v = serde_json::json!({ "per_family": per_family, "max_rel_err": worst, "pass": pass, "runs": runs });
        fs::write(path, serde_json::to_string_pretty(&v)? + "\n")?;
    }
    Ok(pass)
}

fn cmd_equiv(kind: &str, trials: usize, d: usize, seed: u64, out: Option<&Path>) -> Result<bool> {
    let kind: BilinearKind = kind.parse()?;
    let rep = run_equivalence(kind, trials, d, seed)?;
    let pass = rep.max_rel_dev <= 1e-9;
    write_json(&serde_json::json!({ "report": rep, "pass": pass }), out)?;
    Ok(pass)
}

fn cmd_express(spec: &Path, out: Option<&Path>) -> Result<bool> {
    let file = File::open(spec)
        .map_err(|e| RamError::Config(format!("cannot read ground truth {}: {e}", spec.display())))?;
    let raw = parse_tabular(BufReader::new(file))?;
    let gt = GroundTruth::from_raw(&raw)?;
    let rep = verify_separation(&gt, &construct(&gt)?)?;
    write_json(&rep, out)?;
    Ok(rep.pass)
}

fn cmd_export(ckpt: &Path, what: ExportKind, out: &Path) -> Result<bool> {
    let ck = load_checkpoint(ckpt)?;
    let entity_names = ck.names.as_ref().map(|n| n.entities.clone()).unwrap_or_default();
    let relation_names: Vec<String> = ck
        .names
        .as_ref()
        .map(|n| n.relations.iter().map(|(r, a)| format!("{r}/{a}")).collect())
        .unwrap_or_default();
    write_file(out, |w| match what {
        ExportKind::Entity => export_entities_csv(&ck.params, &entity_names, w),
        ExportKind::Role => export_roles_csv(&ck.params, &relation_names, w),
        ExportKind::Pattern => export_patterns_csv(&ck.params, &relation_names, w),
    })?;
    Ok(true)
}

fn cmd_subset(data_dir: &Path, out: &Path, ratio: f64, filter: Option<ArityFilter>, seed: u64) -> Result<bool> {
    let kb = load_dataset_dir(data_dir, seed)?;
    let filter = filter.unwrap_or_default();
    let sub = subset_by_arity(&kb, |a| filter.keeps(a), ratio, seed)?;
    fs::create_dir_all(out)?;
    let json = sub.vocab.roles.is_some();
    for split in [Split::Train, Split::Valid, Split::Test] {
        let stem = format!("{split:?}").to_lowercase();
        if json {
            write_file(&out.join(format!("{stem}.json")), |w| sub.write_role_json(split, w))?;
        } else {
            write_file(&out.join(format!("{stem}.txt")), |w| sub.write_tabular(split, w))?;
        }
    }
    println!(
        "kept {} of {} training facts; wrote {}",
        sub.train.len(),
        kb.train.len(),
        out.display()
    );
    Ok(true)
}
