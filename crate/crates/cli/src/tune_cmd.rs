use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use klaunch::backend::{DeviceIdent, Executor, SimCostModel, SubprocessCompiler, SubprocessExecutor};
use klaunch::capture::Capture;
use klaunch::tuner::{tune_capture, Budget, StopReason, TuneOptions, DEFAULT_WALL_SECONDS, SESSION_EXTENSION};
use klaunch::wisdom::{wisdom_path, WisdomFile, WISDOM_ENV};

use crate::config::{resolve_dir, BackendKind, CliConfig};
use crate::TuneArgs;

fn executor(args: &TuneArgs, config: &CliConfig, capture: &Capture) -> Result<Arc<dyn Executor>> {
    match args.backend.or(config.backend).unwrap_or_default() {
        BackendKind::Sim => {
            anyhow::ensure!(args.noise >= 0.0, "--noise must be non-negative");
            let model = SimCostModel::new(capture.definition.space(), args.model_seed).with_noise(args.noise);
            Ok(Arc::new(model))
        }
        BackendKind::Subprocess => {
            let Some(bench) = args.bench_cmd.as_ref().or(config.bench_command.as_ref()) else {
                bail!("the subprocess backend needs --bench-cmd or bench_command in the config file");
            };
            let compiler = args
                .compile_cmd
                .as_ref()
                .or(config.compile_command.as_ref())
                .map(|t| SubprocessCompiler::new(t))
                .transpose()
                .context("bad compile command")?;
            Ok(Arc::new(SubprocessExecutor::new(bench, compiler).context("bad bench command")?))
        }
    }
}

pub fn run(args: TuneArgs, config: &CliConfig) -> Result<()> {
    let capture = Capture::read(&args.capture)
        .with_context(|| format!("cannot read capture {}", args.capture.display()))?;
    let definition = &capture.definition;
    let wall = args
        .budget_seconds
        .or(config.budget_seconds)
        .unwrap_or(DEFAULT_WALL_SECONDS);
    anyhow::ensure!(wall > 0.0, "--budget-seconds must be positive");
    anyhow::ensure!(
        !args.device.is_empty() && !args.arch.is_empty(),
        "--device and --arch must be non-empty"
    );
    let options = TuneOptions {
        device: DeviceIdent::new(&args.device, &args.arch),
        strategy: args.strategy,
        budget: Budget::new(args.max_evals, Some(wall))?,
        seed: args.seed.or(config.seed).unwrap_or(0),
    };
    let executor = executor(&args, config, &capture)?;
    let session = tune_capture(&capture, Some(&args.capture), &options, executor.as_ref())?;

    let session_path = args.session_out.clone().unwrap_or_else(|| {
        let stem = args
            .capture
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| definition.name().to_string());
        PathBuf::from(format!("{stem}.{SESSION_EXTENSION}"))
    });
    session.write(&session_path)?;
    println!("session: {}", session_path.display());
    println!(
        "evaluations: {} ({:?})",
        session.evaluations.len(),
        session.stop_reason
    );

    if session.evaluations.is_empty() && session.stop_reason == StopReason::SpaceExhausted {
        bail!("kernel `{}` has no configuration satisfying its restrictions", definition.name());
    }
    let Some(best) = &session.best else {
        bail!("no configuration evaluated successfully; nothing added to wisdom");
    };
    println!("best: {} s", best.objective);
    println!("config: {}", klaunch::canonical::to_string(&best.config));

    if let Some(dir) = resolve_dir(args.wisdom.clone(), WISDOM_ENV, config.wisdom_dir.as_ref()) {
        std::fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
        let path = wisdom_path(&dir, definition.name());
        let mut file = WisdomFile::open(&path, definition)?;
        let changed = file.append_result(&session)?;
        file.write(&path)?;
        println!(
            "wisdom: {} ({})",
            path.display(),
            if changed { "updated" } else { "kept existing record" }
        );
    }
    Ok(())
}
