//! Analyses over tuning results: fraction of optimum, cross-scenario
//! efficiency matrices, the performance portability metric (PPM) and
//! histograms, with CSV output for plotting elsewhere.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::space::Configuration;
use crate::tuner::TuningSession;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("session has no successful evaluation")]
    NoBest,
    #[error("configuration {0} has no successful measurement")]
    NotMeasured(String),
    #[error("no scenarios given")]
    NoScenarios,
    #[error("efficiency {0} is outside (0, 1]")]
    Efficiency(f64),
    #[error("histogram needs at least one bin")]
    NoBins,
    #[error("scenario label has an empty component")]
    EmptyLabel,
    #[error("{0} sessions but {1} evaluator rows")]
    Shape(usize, usize),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// `best / objective`; objectives are times, so the result is at most 1 for
/// any objective no better than the best.
pub fn fraction(best: f64, objective: f64) -> f64 {
    best / objective
}

pub fn fraction_of_optimum(session: &TuningSession, config: &Configuration) -> Result<f64, ReportError> {
    let best = session.best.as_ref().ok_or(ReportError::NoBest)?;
    let objective = session
        .objective_of(config)
        .ok_or_else(|| ReportError::NotMeasured(config.to_string()))?;
    Ok(fraction(best.objective, objective))
}

/// Kernel, problem size, precision and device of one tuning scenario.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Scenario {
    pub kernel: String,
    pub problem: String,
    pub precision: String,
    pub device: String,
}

impl Scenario {
    pub fn new(kernel: &str, problem: &str, precision: &str, device: &str) -> Result<Self, ReportError> {
        if [kernel, problem, precision, device].iter().any(|s| s.is_empty()) {
            return Err(ReportError::EmptyLabel);
        }
        Ok(Scenario {
            kernel: kernel.into(),
            problem: problem.into(),
            precision: precision.into(),
            device: device.into(),
        })
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}/{}", self.kernel, self.problem, self.precision, self.device)
    }
}

/// `entries[i][j]`: fraction of scenario `j`'s optimum reached there by the
/// configuration that was best for scenario `i`; `None` where it failed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EfficiencyMatrix {
    pub labels: Vec<String>,
    pub entries: Vec<Vec<Option<f64>>>,
}

impl EfficiencyMatrix {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn column(&self, j: usize) -> Vec<Option<f64>> {
        self.entries.iter().map(|row| row[j]).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), ReportError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["row", "column", "fraction"])?;
        for (i, row) in self.entries.iter().enumerate() {
            for (j, e) in row.iter().enumerate() {
                let value = e.map(|v| v.to_string()).unwrap_or_default();
                w.write_record([self.labels[i].as_str(), self.labels[j].as_str(), value.as_str()])?;
            }
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Builds the cross-scenario matrix. `evaluate(j, config)` measures `config`
/// under scenario `j`, returning `None` on failure. Each scenario's own best
/// is taken from its session rather than re-measured; a column's optimum is
/// the lowest objective seen in that column, so entries never exceed 1.
pub fn cross_matrix<F>(
    labels: Vec<String>,
    sessions: &[TuningSession],
    mut evaluate: F,
) -> Result<EfficiencyMatrix, ReportError>
where
    F: FnMut(usize, &Configuration) -> Option<f64>,
{
    if sessions.is_empty() {
        return Err(ReportError::NoScenarios);
    }
    if labels.len() != sessions.len() {
        return Err(ReportError::Shape(sessions.len(), labels.len()));
    }
    let bests = sessions
        .iter()
        .map(|s| s.best.as_ref().ok_or(ReportError::NoBest))
        .collect::<Result<Vec<_>, _>>()?;
    let n = sessions.len();
    let objectives: Vec<Vec<Option<f64>>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        Some(bests[j].objective)
                    } else {
                        evaluate(j, &bests[i].config).filter(|o| *o > 0.0)
                    }
                })
                .collect()
        })
        .collect();
    let optimum: Vec<f64> = (0..n)
        .map(|j| {
            objectives
                .iter()
                .filter_map(|row| row[j])
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let entries = objectives
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .map(|(j, o)| o.map(|o| fraction(optimum[j], o)))
                .collect()
        })
        .collect();
    Ok(EfficiencyMatrix { labels, entries })
}

/// Performance portability over a scenario set: the harmonic mean of the
/// efficiencies when every scenario is supported, otherwise zero. `best` and
/// `worst` range over the supported scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Ppm {
    pub ppm: f64,
    pub best: Option<f64>,
    pub worst: Option<f64>,
}

pub fn ppm(efficiencies: &[Option<f64>]) -> Result<Ppm, ReportError> {
    if efficiencies.is_empty() {
        return Err(ReportError::NoScenarios);
    }
    for e in efficiencies.iter().flatten() {
        if !(*e > 0.0 && *e <= 1.0) {
            return Err(ReportError::Efficiency(*e));
        }
    }
    let present: Vec<f64> = efficiencies.iter().flatten().copied().collect();
    let best = present.iter().copied().reduce(f64::max);
    let worst = present.iter().copied().reduce(f64::min);
    let value = if present.len() < efficiencies.len() {
        0.0
    } else {
        present.len() as f64 / present.iter().map(|e| 1.0 / e).sum::<f64>()
    };
    Ok(Ppm {
        ppm: value,
        best,
        worst,
    })
}

pub fn write_ppm_csv<W: Write>(rows: &[(String, Ppm)], out: W) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["label", "best", "worst", "ppm"])?;
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for (label, p) in rows {
        w.write_record([label.clone(), opt(p.best), opt(p.worst), p.ppm.to_string()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bin {
    pub low: f64,
    pub high: f64,
    pub count: u64,
}

/// A labelled reference point, such as the default configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Marker {
    pub label: String,
    pub fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub bins: Vec<Bin>,
    pub markers: Vec<Marker>,
}

/// Bin index for a fraction in [0, 1]; bins are half-open except the last,
/// which includes 1.
pub fn bin_index(fraction: f64, bins: usize) -> usize {
    ((fraction * bins as f64).floor() as usize).min(bins - 1)
}

/// Distribution of fraction of optimum over the session's successful
/// evaluations. `markers` pairs labels with objectives measured elsewhere
/// (`None` for a failed measurement).
pub fn histogram(
    session: &TuningSession,
    bins: usize,
    markers: &[(String, Option<f64>)],
) -> Result<Histogram, ReportError> {
    if bins == 0 {
        return Err(ReportError::NoBins);
    }
    let best = session.best.as_ref().ok_or(ReportError::NoBest)?.objective;
    let mut counts = vec![0u64; bins];
    for o in session.evaluations.iter().filter_map(|e| e.measurement.objective) {
        counts[bin_index(fraction(best, o), bins)] += 1;
    }
    Ok(Histogram {
        bins: counts
            .into_iter()
            .enumerate()
            .map(|(i, count)| Bin {
                low: i as f64 / bins as f64,
                high: (i + 1) as f64 / bins as f64,
                count,
            })
            .collect(),
        markers: markers
            .iter()
            .map(|(label, o)| Marker {
                label: label.clone(),
                fraction: o.map(|o| fraction(best, o)),
            })
            .collect(),
    })
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.bins.iter().map(|b| b.count).sum()
    }

    /// Bin rows, then one `marker` row per marker with the fraction in
    /// `bin_low` and the label in `count`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), ReportError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bin_low", "bin_high", "count"])?;
        for b in &self.bins {
            w.write_record([b.low.to_string(), b.high.to_string(), b.count.to_string()])?;
        }
        for m in &self.markers {
            let f = m.fraction.map(|f| f.to_string()).unwrap_or_default();
            w.write_record([f, "marker".to_string(), m.label.clone()])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}
