use std::fs;
use std::path::{Path, PathBuf};

use quadfdi::config::RunConfig;
use quadfdi::eval::{run_experiment, Experiment, ExperimentReport, NamedNet};
use quadfdi::tensornet::{load_checkpoint, save_checkpoint, Checkpoint, NetError};
use quadfdi::train::{rollouts_to_samples, synthesize_rollouts, train, train_with, write_loss_trace, TrainOutcome};
use quadfdi::trajio::{load_dataset, write_dataset, Dataset, DatasetInfo, Manifest};
use quadfdi::{Error, Result};
use sha2::{Digest, Sha256};

use crate::{Command, Common};

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Shape(_) => 1,
        Error::Numeric(_) => 2,
        Error::Io(_) | Error::Format(_) => 3,
        Error::Net(n) => match n {
            NetError::Shape(_) | NetError::SpecMismatch(_) | NetError::Config(_) => 1,
            NetError::NonFinite(_) => 2,
            NetError::Version { .. } | NetError::Corrupt(_) | NetError::Io(_) => 3,
        },
    }
}

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData { common, out, epoch } => gen_data(&load_config(&common)?, &out, epoch),
        Command::Train { common, dataset, out } => train_cmd(&load_config(&common)?, dataset.as_deref(), &out),
        Command::Eval { common, checkpoint, experiment, out } => {
            let experiment: Experiment = experiment.parse()?;
            eval_cmd(&load_config(&common)?, &checkpoint, experiment, &out)
        }
        Command::Compare { common, reports, out } => {
            load_config(&common)?;
            compare(&reports, &out)
        }
    }
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path, common.scale)?,
        None => RunConfig::profile(common.scale.unwrap_or_default()),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn gen_data(cfg: &RunConfig, out: &Path, epoch: u64) -> Result<()> {
    let scenario = cfg.scenario();
    let records = synthesize_rollouts(&cfg.train, &scenario, cfg.seed, epoch)?;
    let info = DatasetInfo {
        seed: cfg.seed,
        epoch,
        params: scenario.params,
        reference: scenario.reference,
        sim: scenario.sim,
        controller: scenario.controller,
        fault_levels: cfg.train.fault_levels.clone(),
        trained_motor: cfg.train.trained_motor,
    };
    let ds = Dataset { info, records };
    let mut bytes = Vec::new();
    write_dataset(&ds, &mut bytes)?;
    fs::write(out, &bytes)?;
    let manifest = Manifest::build(&ds, &cfg.train, &bytes)?;
    fs::write(sibling(out, ".manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    eprintln!(
        "wrote {} rollouts ({} diverged) to {}",
        manifest.rollouts,
        manifest.dropped_divergence,
        out.display()
    );
    Ok(())
}

fn train_cmd(cfg: &RunConfig, dataset: Option<&Path>, out: &Path) -> Result<()> {
    let result = match dataset {
        None => train(&cfg.train, &cfg.scenario(), cfg.seed),
        Some(path) => {
            let ds = load_dataset(path)?;
            if cfg.train.uses_residuals() && ds.records.iter().any(|r| r.traj.is_valid() && r.resid.is_none()) {
                return Err(Error::Shape(format!("{} has no residuals for model-based features", path.display())));
            }
            let data = rollouts_to_samples(&ds.records, &cfg.train, ds.info.sim.horizon)?;
            let mut data = Some(data);
            train_with(&cfg.train, cfg.seed, |_| Ok(data.take()))
        }
    };
    let outcome: TrainOutcome = match result {
        Ok(o) => o,
        Err(e) => {
            let dump = serde_json::json!({ "error": e.to_string(), "config": cfg });
            fs::write(sibling(out, ".failure.json"), serde_json::to_string_pretty(&dump)? + "\n")?;
            return Err(e);
        }
    };
    let mut trace = Vec::new();
    write_loss_trace(&outcome.trace, &mut trace)?;
    fs::write(sibling(out, ".loss.csv"), trace)?;
    let metadata = serde_json::json!({
        "config": cfg,
        "dataset": dataset.map(|p| p.display().to_string()),
        "epochs": outcome.trace.len(),
        "converged": outcome.converged,
    });
    save_checkpoint(&Checkpoint { network: outcome.network, seed: cfg.seed, metadata }, out)?;
    let last = outcome.trace.last().map_or(f64::NAN, |r| r.mean_loss);
    eprintln!("trained {} epochs (final loss {last:.3e}) into {}", outcome.trace.len(), out.display());
    Ok(())
}

fn eval_cmd(cfg: &RunConfig, checkpoints: &[PathBuf], experiment: Experiment, out: &Path) -> Result<()> {
    let mut loaded = Vec::new();
    for path in checkpoints {
        let digest = sha256_hex(&fs::read(path)?);
        let ckpt = load_checkpoint(path, None)?;
        let name = path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
        loaded.push((name, digest, ckpt.network));
    }
    let nets: Vec<NamedNet> = loaded.iter().map(|(name, digest, net)| NamedNet { name, digest, net }).collect();
    let report = run_experiment(experiment, &nets, &cfg.eval, &cfg.scenario(), cfg.seed)?;
    fs::create_dir_all(out)?;
    let key: String = loaded.iter().map(|(_, d, _)| &d[..12]).collect::<Vec<_>>().join("-");
    let stem = out.join(format!("{}-{key}", experiment.id()));
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    fs::write(stem.with_extension("csv"), csv)?;
    fs::write(stem.with_extension("json"), report.summary_json(cfg.eval.summary_min_overlap)?)?;
    eprintln!("wrote {} rows to {}", report.rows.len(), stem.with_extension("csv").display());
    Ok(())
}

fn compare(reports: &[PathBuf], out: &Path) -> Result<()> {
    let parsed = reports
        .iter()
        .map(|p| ExperimentReport::read_csv(fs::File::open(p)?))
        .collect::<Result<Vec<_>>>()?;
    let merged = ExperimentReport::merge(&parsed)?;
    let mut csv = Vec::new();
    merged.write_csv(&mut csv)?;
    fs::write(out, csv)?;
    eprintln!("merged {} rows into {}", merged.rows.len(), out.display());
    Ok(())
}
