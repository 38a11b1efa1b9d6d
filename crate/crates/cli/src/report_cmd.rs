use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use klaunch::backend::SimCostModel;
use klaunch::expr::Expr;
use klaunch::kerneldef::KernelDefinition;
use klaunch::report::{cross_matrix, histogram, ppm, write_ppm_csv, Ppm, Scenario};
use klaunch::space::Configuration;
use klaunch::tuner::TuningSession;

use crate::ReportCommand;

pub fn run(cmd: ReportCommand) -> Result<()> {
    match cmd {
        ReportCommand::Histogram {
            session,
            bins,
            references,
            output,
        } => histogram_cmd(&session, bins, &references, output),
        ReportCommand::Matrix { sessions, output } => matrix_cmd(&sessions, output),
        ReportCommand::Ppm { matrix, csv, json } => ppm_cmd(&matrix, csv, json),
    }
}

fn read_session(path: &Path) -> Result<TuningSession> {
    TuningSession::read(path).with_context(|| format!("cannot read session {}", path.display()))
}

fn sink(output: Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match output {
        Some(p) => Box::new(File::create(&p).with_context(|| format!("cannot create {}", p.display()))?),
        None => Box::new(std::io::stdout()),
    })
}

/// Objective of `config` in a session: its measurement if it was evaluated,
/// else a fresh evaluation when the session ran on the simulated backend.
fn objective(session: &TuningSession, model: Option<&SimCostModel>, config: &Configuration) -> Option<f64> {
    session
        .objective_of(config)
        .or_else(|| model.and_then(|m| m.sim_cost(config).objective))
}

fn sim_model(session: &TuningSession, definition: &KernelDefinition) -> Result<Option<SimCostModel>> {
    Ok(SimCostModel::from_info(definition.space(), &session.header.backend)?)
}

fn histogram_cmd(path: &Path, bins: usize, references: &[String], output: Option<PathBuf>) -> Result<()> {
    let session = read_session(path)?;
    let definition = session.definition()?;
    let model = sim_model(&session, &definition)?;
    let mut markers = Vec::new();
    let default = definition.space().default_config().config;
    markers.push(("default".to_string(), objective(&session, model.as_ref(), &default)));
    for r in references {
        let (label, text) = r
            .split_once('=')
            .ok_or_else(|| anyhow!("--reference expects LABEL=CONFIG, got `{r}`"))?;
        let config: Configuration =
            serde_json::from_str(text).with_context(|| format!("bad configuration in `{r}`"))?;
        markers.push((label.to_string(), objective(&session, model.as_ref(), &config)));
    }
    let h = histogram(&session, bins, &markers)?;
    h.write_csv(sink(output)?)?;
    Ok(())
}

/// The first string template argument, which by convention names the
/// precision (e.g. "float").
fn precision(definition: &KernelDefinition) -> String {
    definition
        .compile_spec()
        .template_args
        .iter()
        .find_map(|e| match e {
            Expr::Str(s) => Some(s.to_string()),
            _ => None,
        })
        .unwrap_or_else(|| "default".into())
}

fn matrix_cmd(paths: &[PathBuf], output: Option<PathBuf>) -> Result<()> {
    let sessions = paths.iter().map(|p| read_session(p)).collect::<Result<Vec<_>>>()?;
    let definitions = sessions
        .iter()
        .map(|s| s.definition())
        .collect::<Result<Vec<_>, _>>()?;
    let first = definitions[0].to_file();
    for (d, p) in definitions.iter().zip(paths) {
        let f = d.to_file();
        if f.params != first.params || f.restrictions != first.restrictions {
            bail!("{} was tuned over a different configuration space", p.display());
        }
    }
    let models = sessions
        .iter()
        .zip(&definitions)
        .zip(paths)
        .map(|((s, d), p)| {
            sim_model(s, d)?.ok_or_else(|| {
                anyhow!(
                    "{}: re-evaluating configurations needs a session from the sim backend",
                    p.display()
                )
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let labels = sessions
        .iter()
        .zip(&definitions)
        .map(|(s, d)| {
            Scenario::new(
                d.name(),
                &s.header.problem.to_string(),
                &precision(d),
                &s.header.device.name,
            )
            .map(|sc| sc.to_string())
        })
        .collect::<Result<Vec<_>, _>>()?;
    let m = cross_matrix(labels, &sessions, |j, config| objective(&sessions[j], Some(&models[j]), config))?;
    m.write_csv(sink(output)?)?;
    Ok(())
}

fn ppm_cmd(path: &Path, as_csv: bool, json: bool) -> Result<()> {
    let mut reader =
        csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut rows: Vec<(String, Vec<Option<f64>>)> = Vec::new();
    for record in reader.records() {
        let record = record.with_context(|| format!("malformed CSV in {}", path.display()))?;
        let (Some(label), Some(value)) = (record.get(0), record.get(2)) else {
            bail!("{}: expected columns row,column,fraction", path.display());
        };
        let value = match value.trim() {
            "" => None,
            v => Some(v.parse::<f64>().with_context(|| format!("bad fraction `{v}`"))?),
        };
        match rows.iter_mut().find(|(l, _)| l == label) {
            Some((_, values)) => values.push(value),
            None => rows.push((label.to_string(), vec![value])),
        }
    }
    if rows.is_empty() {
        bail!("{} has no rows", path.display());
    }
    let results = rows
        .into_iter()
        .map(|(label, values)| Ok((label, ppm(&values)?)))
        .collect::<Result<Vec<(String, Ppm)>>>()?;
    if json {
        let value: Vec<_> = results
            .iter()
            .map(|(label, p)| serde_json::json!({"label": label, "best": p.best, "worst": p.worst, "ppm": p.ppm}))
            .collect();
        println!("{}", serde_json::to_string_pretty(&value)?);
    } else if as_csv {
        write_ppm_csv(&results, std::io::stdout())?;
    } else {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        println!("label\tbest\tworst\tppm");
        for (label, p) in &results {
            println!("{label}\t{}\t{}\t{:.4}", fmt(p.best), fmt(p.worst), p.ppm);
        }
    }
    Ok(())
}
