use std::path::Path;

use anyhow::{anyhow, Context, Result};
use klaunch::backend::DeviceIdent;
use klaunch::kerneldef::{KernelDefinition, ProblemSize};
use klaunch::wisdom::WisdomFile;
use serde_json::json;

use crate::WisdomCommand;

pub fn run(cmd: WisdomCommand) -> Result<()> {
    match cmd {
        WisdomCommand::Best {
            file,
            device,
            arch,
            problem,
            kernel,
            json,
        } => {
            anyhow::ensure!(
                !device.is_empty() && !arch.is_empty(),
                "--device and --arch must be non-empty"
            );
            let problem: ProblemSize = problem
                .parse()
                .with_context(|| format!("bad --problem `{problem}`"))?;
            best(&file, &DeviceIdent::new(&device, &arch), &problem, kernel.as_deref(), json)
        }
        WisdomCommand::Show { file, json } => show(&file, json),
        WisdomCommand::Merge { output, inputs } => merge(&output, &inputs),
    }
}

fn load(path: &Path) -> Result<Option<WisdomFile>> {
    WisdomFile::load(path).with_context(|| format!("cannot read wisdom file {}", path.display()))
}

fn best(
    path: &Path,
    device: &DeviceIdent,
    problem: &ProblemSize,
    kernel: Option<&Path>,
    json: bool,
) -> Result<()> {
    let file = load(path)?;
    let definition = match kernel {
        Some(k) => KernelDefinition::load(k)
            .with_context(|| format!("cannot load kernel definition {}", k.display()))?,
        None => file
            .as_ref()
            .and_then(|f| f.definition())
            .ok_or_else(|| {
                anyhow!(
                    "{} does not carry a kernel definition; pass --kernel",
                    path.display()
                )
            })??,
    };
    let file = match file {
        Some(f) => {
            anyhow::ensure!(
                f.kernel_key() == definition.kernel_key(),
                "kernel key mismatch: {} has `{}`, definition has `{}`",
                path.display(),
                f.kernel_key(),
                definition.kernel_key()
            );
            f
        }
        None => WisdomFile::for_definition(&definition),
    };
    let default = definition.space().default_config().config;
    let selection = file.select(device, problem, &default);
    if json {
        let value = json!({
            "config": selection.config,
            "match_kind": selection.kind,
            "record": selection.record,
            "objective_seconds": selection.record.map(|i| file.records[i].objective_seconds),
        });
        println!("{}", klaunch::canonical::to_string(&value));
    } else {
        println!("match_kind: {}", selection.kind);
        println!("config: {}", klaunch::canonical::to_string(&selection.config));
        if let Some(i) = selection.record {
            let r = &file.records[i];
            println!(
                "record: {} ({}) {} -> {} s",
                r.device.name, r.device.architecture, r.problem, r.objective_seconds
            );
        }
    }
    Ok(())
}

fn show(path: &Path, json: bool) -> Result<()> {
    let Some(file) = load(path)? else {
        if !json {
            println!("{}: empty", path.display());
        }
        return Ok(());
    };
    if json {
        print!("{}", file.to_text());
        return Ok(());
    }
    println!("kernel key: {}", file.kernel_key());
    println!("records: {}", file.records.len());
    for r in &file.records {
        println!(
            "{}\t{}\t{}\t{} s\t{}\t{}",
            r.device.name,
            r.device.architecture,
            r.problem,
            r.objective_seconds,
            klaunch::canonical::to_string(&r.config),
            r.provenance.date
        );
    }
    Ok(())
}

fn merge(output: &Path, inputs: &[std::path::PathBuf]) -> Result<()> {
    let mut merged = load(output)?;
    for input in inputs {
        let Some(file) = load(input)? else {
            continue;
        };
        match merged.as_mut() {
            None => merged = Some(file),
            Some(m) => m
                .merge(file)
                .with_context(|| format!("cannot merge {}", input.display()))?,
        }
    }
    let Some(merged) = merged else {
        anyhow::bail!("all inputs are empty; nothing written");
    };
    merged.write(output)?;
    println!("{}: {} records", output.display(), merged.records.len());
    Ok(())
}
