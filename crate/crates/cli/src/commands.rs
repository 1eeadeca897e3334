//! Subcommand implementations.

use std::path::{Path, PathBuf};
use std::time::Instant;

use hsi_core::registry::{builtin_manifest, fetch_assets, list_configs};
use hsi_core::rng::keyed_rng;
use hsi_core::splits::{export_split, SplitTag};
use hsi_models::{BackboneHeadModel, Checkpoint, ModelRegistry, ModelSpec};
use hsi_train::results::CODE_VERSION;
use hsi_train::{
    aggregate_and_rank, build_params, evaluate, finetune, prepare, pretrain, train, FitOutcome, PrepareOptions,
    PreparedConfig, ResultStore, RunResult, TrainConfig,
};
use serde_json::json;

use crate::args::{Cli, Command, RunArgs};
use crate::experiment::ExperimentFile;
use crate::source::DataSource;
use crate::{CliError, Result};

pub fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Download { config } => download(&cli.cache, &config),
        Command::Splits { config, out, synthetic } => splits(&cli.cache, &config, &out, synthetic.as_deref()),
        Command::Run(args) => run(&cli.cache, &args),
        Command::Pretrain(args) => pretrain_cmd(&cli.cache, &args),
        Command::Finetune(args) => finetune_cmd(&cli.cache, &args),
        Command::Report { results, out } => report(&results, out.as_deref()),
        Command::List => list(),
    }
}

fn download(cache: &Path, id: &str) -> Result<()> {
    let manifest = builtin_manifest();
    let config = id.parse()?;
    manifest.entry(&config)?;
    for p in fetch_assets(&manifest, &config, cache)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn splits(cache: &Path, id: &str, out: &Path, synthetic: Option<&Path>) -> Result<()> {
    let loaded = DataSource::open(synthetic, cache)?.load(id)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(out, export_split(&loaded.split))?;
    let (train, val, test) = loaded.split.sizes();
    println!("{}: train {train}, val {val}, test {test} -> {}", loaded.config, out.display());
    Ok(())
}

/// `/` cannot appear in a path component.
fn slug(id: &str) -> String {
    id.replace('/', "__")
}

fn options(spec: &ModelSpec, exp: &ExperimentFile) -> PrepareOptions {
    PrepareOptions::for_model(spec, exp.patch_size, exp.train_stride)
}

fn resolved(cfg: &TrainConfig, spec: &ModelSpec, exp: &ExperimentFile) -> serde_json::Value {
    json!({
        "train": cfg,
        "preprocess": spec.input,
        "patch_size": exp.patch_size,
        "input_extent": spec.input_extent(exp.patch_size),
        "train_stride": exp.train_stride,
    })
}

struct Cell<'a> {
    data: &'a PreparedConfig,
    model: &'a str,
    seed: u64,
    cfg: &'a TrainConfig,
}

fn record(
    cell: &Cell,
    model: &mut BackboneHeadModel,
    fit: &FitOutcome,
    started: Instant,
    pretrained_on: Vec<String>,
    hash: &str,
    resolved: serde_json::Value,
) -> Result<RunResult> {
    let test = evaluate(model, cell.data, SplitTag::Test, cell.cfg.eval_batch_size)?;
    let train_eval = evaluate(model, cell.data, SplitTag::Train, cell.cfg.eval_batch_size)?;
    println!(
        "{} {} seed {}: test {:.2}% train {:.2}% (best epoch {}, {} epochs)",
        cell.model,
        cell.data.id(),
        cell.seed,
        100.0 * test.accuracy,
        100.0 * train_eval.accuracy,
        fit.best_epoch,
        fit.epochs_run
    );
    Ok(RunResult {
        config: (*cell.data.config).clone(),
        model: cell.model.to_string(),
        seed: cell.seed,
        accuracy: test.accuracy,
        train_accuracy: train_eval.accuracy,
        best_epoch: fit.best_epoch,
        epochs_run: fit.epochs_run,
        best_val_loss: fit.best_val_loss,
        wall_time_s: started.elapsed().as_secs_f64(),
        pretrained_on,
        manifest_hash: hash.to_string(),
        code_version: CODE_VERSION.to_string(),
        resolved,
    })
}

/// Resolves, validates and checks every configuration before any training.
fn setup(cache: &Path, args: &RunArgs) -> Result<(ExperimentFile, ModelRegistry, DataSource)> {
    let exp = ExperimentFile::resolve(args)?;
    let registry = ModelRegistry::with_builtins();
    exp.validate(&registry)?;
    let source = DataSource::open(exp.synthetic.as_deref(), cache)?;
    let mut ids: Vec<&String> = exp.configs.iter().collect();
    if let Some(p) = &exp.pretrain {
        ids.extend(&p.configs);
    }
    for id in ids {
        source.check(id)?;
    }
    Ok((exp, registry, source))
}

/// A prepared (configuration, model) pair whose build has been checked.
struct Planned<'a> {
    name: &'a str,
    spec: &'a ModelSpec,
    cfg: TrainConfig,
    data: PreparedConfig,
}

fn run(cache: &Path, args: &RunArgs) -> Result<()> {
    let (exp, registry, source) = setup(cache, args)?;
    if exp.configs.is_empty() {
        return Err(CliError::Invalid("no configurations given".into()));
    }
    let mut plan = Vec::new();
    for id in &exp.configs {
        let loaded = source.load(id)?;
        for name in &exp.models {
            let spec = registry.spec(name)?;
            let data = prepare(&loaded.config, &loaded.data, &loaded.split, &options(spec, &exp))?;
            registry.build(name, &build_params(&[&data], exp.patch_size), exp.seeds[0])?;
            plan.push(Planned { name, spec, cfg: exp.train.apply(spec), data });
        }
    }
    let store = ResultStore::new(exp.results_path());
    let hash = source.hash();
    for p in &plan {
        let params = build_params(&[&p.data], exp.patch_size);
        for &seed in &exp.seeds {
            let started = Instant::now();
            let mut model = registry.build(p.name, &params, seed)?;
            let fit = train(&mut model, &p.data, &p.cfg, seed)?;
            let cell = Cell { data: &p.data, model: p.name, seed, cfg: &p.cfg };
            let result = record(&cell, &mut model, &fit, started, Vec::new(), &hash, resolved(&p.cfg, p.spec, &exp))?;
            store.append(&result)?;
            let path = exp
                .out_dir()
                .join("checkpoints")
                .join(p.name)
                .join(slug(&p.data.id()))
                .join(format!("seed{seed}.json"));
            Checkpoint::capture(&model).with_manifest_hash(hash.clone()).save(&path)?;
        }
    }
    println!("results appended to {}", store.path().display());
    Ok(())
}

fn pretrained_path(exp: &ExperimentFile, model: &str, seed: u64) -> PathBuf {
    match exp.finetune.as_ref().and_then(|f| f.checkpoint.clone()) {
        Some(p) => p,
        None => exp.out_dir().join("pretrained").join(model).join(format!("seed{seed}.json")),
    }
}

fn pretrain_cmd(cache: &Path, args: &RunArgs) -> Result<()> {
    let (exp, registry, source) = setup(cache, args)?;
    let section =
        exp.pretrain.as_ref().ok_or_else(|| CliError::Invalid("the experiment has no [pretrain] section".into()))?;
    let loaded = section.configs.iter().map(|id| source.load(id)).collect::<Result<Vec<_>>>()?;
    let mut plan = Vec::new();
    for name in &exp.models {
        let spec = registry.spec(name)?;
        let datas = loaded
            .iter()
            .map(|l| prepare(&l.config, &l.data, &l.split, &options(spec, &exp)))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let refs: Vec<&PreparedConfig> = datas.iter().collect();
        let mut params = build_params(&refs, exp.patch_size);
        if let Some((lo, hi)) = section.range_nm {
            params = params.with_range(lo, hi);
        }
        registry.build(name, &params, exp.seeds[0])?;
        plan.push((name, exp.train.apply(spec), datas, params));
    }
    let hash = source.hash();
    for (name, cfg, datas, params) in &plan {
        let refs: Vec<&PreparedConfig> = datas.iter().collect();
        for &seed in &exp.seeds {
            let mut model = registry.build(name, params, seed)?;
            let fit = pretrain(&mut model, &refs, cfg, seed)?;
            let path = exp.out_dir().join("pretrained").join(name).join(format!("seed{seed}.json"));
            let mut ckpt = Checkpoint::capture(&model).with_manifest_hash(hash.clone());
            ckpt.meta.insert("best_epoch".into(), fit.best_epoch.to_string());
            ckpt.meta.insert("best_val_loss".into(), fit.best_val_loss.to_string());
            ckpt.meta.insert("base_lr".into(), fit.base_lr.to_string());
            ckpt.save(&path)?;
            println!(
                "{name} seed {seed}: pretrained on {} configurations at lr {} (best epoch {}, val loss {:.4}) -> {}",
                refs.len(),
                fit.base_lr,
                fit.best_epoch,
                fit.best_val_loss,
                path.display()
            );
        }
    }
    Ok(())
}

fn finetune_cmd(cache: &Path, args: &RunArgs) -> Result<()> {
    let (exp, registry, source) = setup(cache, args)?;
    if exp.configs.is_empty() {
        return Err(CliError::Invalid("no configurations given".into()));
    }
    let mut checkpoints = Vec::new();
    for name in &exp.models {
        for &seed in &exp.seeds {
            let path = pretrained_path(&exp, name, seed);
            let ckpt = Checkpoint::load(&path).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
            if &ckpt.model != name {
                return Err(CliError::Invalid(format!(
                    "{}: checkpoint holds {}, not {name}",
                    path.display(),
                    ckpt.model
                )));
            }
            checkpoints.push((name.as_str(), seed, ckpt));
        }
    }
    let mut plan = Vec::new();
    for id in &exp.configs {
        let loaded = source.load(id)?;
        for (name, seed, ckpt) in &checkpoints {
            let data = prepare(&loaded.config, &loaded.data, &loaded.split, &options(&ckpt.spec, &exp))?;
            // a throwaway head shows whether the backbone accepts this input
            let mut probe = ckpt.restore(&registry)?;
            probe.reinit_head_for_finetune(
                &data.id(),
                data.classes,
                data.grid.as_deref(),
                &mut keyed_rng("probe", &[]),
            )?;
            plan.push((*name, *seed, ckpt, data));
        }
    }
    let store = ResultStore::new(exp.results_path());
    let hash = source.hash();
    for (name, seed, ckpt, data) in &plan {
        let cfg = exp.train.apply(&ckpt.spec);
        let started = Instant::now();
        let mut model = ckpt.restore(&registry)?;
        let sources = ckpt.heads.iter().map(|h| h.config.clone()).collect();
        let fit = finetune(&mut model, data, &cfg, *seed)?;
        let cell = Cell { data, model: name, seed: *seed, cfg: &cfg };
        let result = record(&cell, &mut model, &fit, started, sources, &hash, resolved(&cfg, &ckpt.spec, &exp))?;
        store.append(&result)?;
    }
    println!("results appended to {}", store.path().display());
    Ok(())
}

fn report(results: &Path, out: Option<&Path>) -> Result<()> {
    let loaded = ResultStore::new(results).load()?;
    if loaded.records.is_empty() {
        return Err(CliError::Invalid(format!("{}: no results", results.display())));
    }
    let report = aggregate_and_rank(&loaded.records);
    let warnings: Vec<&String> = loaded.warnings.iter().chain(&report.warnings).collect();
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    if !warnings.is_empty() {
        eprintln!("{} warnings", warnings.len());
    }
    print!("{}", report.ranking_text());
    println!();
    print!("{}", report.configs_text());
    let dir = match out {
        Some(d) => d.to_path_buf(),
        None => results.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    if !dir.as_os_str().is_empty() {
        std::fs::create_dir_all(&dir)?;
    }
    std::fs::write(dir.join("ranking.csv"), report.ranking_csv())?;
    std::fs::write(dir.join("configs.csv"), report.configs_csv())?;
    if let Some(curve) = report.curve_csv() {
        std::fs::write(dir.join("curve.csv"), curve)?;
    }
    Ok(())
}

fn list() -> Result<()> {
    println!("configurations:");
    for c in list_configs(&builtin_manifest()) {
        println!("  {c}");
    }
    let registry = ModelRegistry::with_builtins();
    let implemented = registry.implemented();
    println!("models:");
    for m in registry.names() {
        if implemented.contains(&m.as_str()) {
            println!("  {m}");
        } else {
            println!("  {m} (plugin slot)");
        }
    }
    Ok(())
}
