//! Offline tuning: replay one launch across configurations chosen by a search
//! strategy until the budget runs out.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendInfo, DeviceIdent, Executor, Job, Measurement, Status};
use crate::capture::{Capture, KernelArg};
use crate::kerneldef::{DefinitionError, DefinitionFile, KernelDefinition, ProblemSize, ScalarArgs};
use crate::rng::{mix_seed, SplitMix64};
use crate::space::{ConfigSpace, Configuration, REJECTION_LIMIT};

pub const DEFAULT_WALL_SECONDS: f64 = 900.0;
pub const SESSION_EXTENSION: &str = "klsession";

/// Surrogate search: random evaluations before the model is used.
pub const BOOTSTRAP_EVALUATIONS: usize = 20;
pub const POOL_SIZE: usize = 100;
pub const NEIGHBORS: usize = 5;
pub const EXPLORATION_WEIGHT: f64 = 1.0;
const DISTANCE_EPSILON: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum TuneError {
    #[error("budget needs at least one bound")]
    UnboundedBudget,
    #[error(transparent)]
    Definition(#[from] DefinitionError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed session log at line {line}: {message}")]
    Format { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Exhaustive,
    Random,
    Surrogate,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Exhaustive => "exhaustive",
            Strategy::Random => "random",
            Strategy::Surrogate => "surrogate",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exhaustive" => Ok(Strategy::Exhaustive),
            "random" => Ok(Strategy::Random),
            "surrogate" => Ok(Strategy::Surrogate),
            other => Err(format!(
                "unknown strategy `{other}` (expected exhaustive, random or surrogate)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_evaluations: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_wall_seconds: Option<f64>,
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            max_evaluations: None,
            max_wall_seconds: Some(DEFAULT_WALL_SECONDS),
        }
    }
}

impl Budget {
    pub fn new(max_evaluations: Option<u64>, max_wall_seconds: Option<f64>) -> Result<Self, TuneError> {
        if max_evaluations.is_none() && max_wall_seconds.is_none() {
            return Err(TuneError::UnboundedBudget);
        }
        Ok(Budget {
            max_evaluations,
            max_wall_seconds,
        })
    }

    pub fn evaluations(n: u64) -> Self {
        Budget {
            max_evaluations: Some(n),
            max_wall_seconds: None,
        }
    }

    fn exhausted(&self, evaluations: usize, elapsed: f64) -> bool {
        self.max_evaluations.is_some_and(|n| evaluations as u64 >= n)
            || self.max_wall_seconds.is_some_and(|s| elapsed >= s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub config: Configuration,
    pub measurement: Measurement,
    pub offset_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Best {
    pub config: Configuration,
    pub objective: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Budget,
    SpaceExhausted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Ok,
    NoSuccessfulEvaluations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionHeader {
    pub kernel_key: String,
    pub definition: DefinitionFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capture: Option<String>,
    pub problem: ProblemSize,
    pub device: DeviceIdent,
    pub strategy: Strategy,
    pub seed: u64,
    pub budget: Budget,
    pub backend: BackendInfo,
    pub created: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuningSession {
    pub header: SessionHeader,
    pub evaluations: Vec<Evaluation>,
    pub best: Option<Best>,
    pub stop_reason: StopReason,
}

impl TuningSession {
    pub fn status(&self) -> SessionStatus {
        if self.best.is_some() {
            SessionStatus::Ok
        } else {
            SessionStatus::NoSuccessfulEvaluations
        }
    }

    /// Objective of the first successful evaluation of `config`.
    pub fn objective_of(&self, config: &Configuration) -> Option<f64> {
        self.evaluations
            .iter()
            .find(|e| e.config == *config && e.measurement.is_ok())
            .and_then(|e| e.measurement.objective)
    }

    /// Best objective after each evaluation (`None` until the first success).
    pub fn running_best(&self) -> Vec<Option<f64>> {
        let mut best: Option<f64> = None;
        self.evaluations
            .iter()
            .map(|e| {
                if let Some(o) = e.measurement.objective {
                    best = Some(best.map_or(o, |b| b.min(o)));
                }
                best
            })
            .collect()
    }

    pub fn definition(&self) -> Result<KernelDefinition, DefinitionError> {
        self.header.definition.clone().into_definition()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let mut line = |v: serde_json::Value| {
            out.push_str(&crate::canonical::to_string(&v));
            out.push('\n');
        };
        line(serde_json::json!({ "type": "header", "header": self.header }));
        for (index, e) in self.evaluations.iter().enumerate() {
            line(serde_json::json!({ "type": "evaluation", "index": index, "evaluation": e }));
        }
        line(serde_json::json!({
            "type": "summary",
            "best": self.best,
            "status": self.status(),
            "stop_reason": self.stop_reason,
            "evaluations": self.evaluations.len(),
        }));
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, TuneError> {
        Self::from_lines(text.lines().map(|l| Ok(l.to_string())))
    }

    fn from_lines(lines: impl Iterator<Item = std::io::Result<String>>) -> Result<Self, TuneError> {
        #[derive(Deserialize)]
        #[serde(tag = "type", rename_all = "snake_case")]
        enum Line {
            Header {
                header: SessionHeader,
            },
            Evaluation {
                index: usize,
                evaluation: Evaluation,
            },
            Summary {
                best: Option<Best>,
                stop_reason: StopReason,
                evaluations: usize,
                #[allow(dead_code)]
                status: SessionStatus,
            },
        }
        let mut header = None;
        let mut evaluations = Vec::new();
        let mut summary = None;
        for (n, text) in lines.enumerate() {
            let line_no = n + 1;
            let text = text.map_err(|e| TuneError::Format {
                line: line_no,
                message: e.to_string(),
            })?;
            if text.trim().is_empty() {
                continue;
            }
            let fmt_err = |message: String| TuneError::Format {
                line: line_no,
                message,
            };
            let parsed: Line = serde_json::from_str(&text).map_err(|e| fmt_err(e.to_string()))?;
            match parsed {
                Line::Header { header: h } if header.is_none() && line_no == 1 => header = Some(h),
                Line::Header { .. } => return Err(fmt_err("unexpected header".into())),
                Line::Evaluation { index, evaluation } => {
                    if header.is_none() || summary.is_some() || index != evaluations.len() {
                        return Err(fmt_err(format!("out-of-order evaluation {index}")));
                    }
                    evaluations.push(evaluation);
                }
                Line::Summary {
                    best,
                    stop_reason,
                    evaluations: count,
                    ..
                } => {
                    if count != evaluations.len() || summary.is_some() {
                        return Err(fmt_err("summary does not match evaluations".into()));
                    }
                    summary = Some((best, stop_reason));
                }
            }
        }
        let header = header.ok_or(TuneError::Format {
            line: 1,
            message: "missing header".into(),
        })?;
        let (best, stop_reason) = summary.ok_or(TuneError::Format {
            line: evaluations.len() + 2,
            message: "missing summary".into(),
        })?;
        Ok(TuningSession {
            header,
            evaluations,
            best,
            stop_reason,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), TuneError> {
        crate::fsutil::write_atomic(path, self.to_jsonl().as_bytes()).map_err(|source| TuneError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn read(path: &Path) -> Result<Self, TuneError> {
        let file = std::fs::File::open(path).map_err(|source| TuneError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_lines(BufReader::new(file).lines())
    }
}

/// Inputs describing the launch being tuned.
#[derive(Debug, Clone, Copy)]
pub struct Replay<'a> {
    pub definition: &'a KernelDefinition,
    pub problem: &'a ProblemSize,
    pub scalars: &'a ScalarArgs,
    pub args: &'a [KernelArg<'a>],
    pub capture_path: Option<&'a Path>,
}

#[derive(Debug, Clone)]
pub struct TuneOptions {
    pub device: DeviceIdent,
    pub strategy: Strategy,
    pub budget: Budget,
    pub seed: u64,
}

/// Tunes a captured launch.
pub fn tune_capture(
    capture: &Capture,
    capture_path: Option<&Path>,
    options: &TuneOptions,
    executor: &dyn Executor,
) -> Result<TuningSession, TuneError> {
    let scalars = capture.scalar_args();
    let args = capture.kernel_args();
    tune(
        Replay {
            definition: &capture.definition,
            problem: &capture.problem,
            scalars: &scalars,
            args: &args,
            capture_path,
        },
        options,
        executor,
    )
}

pub fn tune(
    replay: Replay<'_>,
    options: &TuneOptions,
    executor: &dyn Executor,
) -> Result<TuningSession, TuneError> {
    if options.budget.max_evaluations.is_none() && options.budget.max_wall_seconds.is_none() {
        return Err(TuneError::UnboundedBudget);
    }
    let space = replay.definition.space();
    let header = SessionHeader {
        kernel_key: replay.definition.kernel_key(),
        definition: replay.definition.to_file(),
        capture: replay.capture_path.map(|p| p.display().to_string()),
        problem: replay.problem.clone(),
        device: options.device.clone(),
        strategy: options.strategy,
        seed: options.seed,
        budget: options.budget,
        backend: executor.describe(),
        created: crate::capture::now_iso8601(),
    };
    let mut search = Search::new(space, options.strategy, options.seed);
    let simulated = executor.simulated_time();
    let start = Instant::now();
    let mut clock = 0.0f64;
    let mut evaluations: Vec<Evaluation> = Vec::new();
    let stop_reason = loop {
        let elapsed = if simulated { clock } else { start.elapsed().as_secs_f64() };
        if options.budget.exhausted(evaluations.len(), elapsed) {
            break StopReason::Budget;
        }
        let Some(indices) = search.propose() else {
            break StopReason::SpaceExhausted;
        };
        let config = space.config_at(&indices);
        let measurement = match replay
            .definition
            .derive_geometry(&config, replay.problem, replay.scalars)
        {
            Err(e) => Measurement::failed(Status::InvalidConfig, e.to_string()),
            Ok(geometry) => executor.execute(&Job {
                definition: replay.definition,
                config: &config,
                problem: replay.problem,
                geometry: &geometry,
                device: &options.device,
                args: replay.args,
                handle: None,
                capture_path: replay.capture_path,
            }),
        };
        search.record(indices, measurement.objective);
        let now = if simulated {
            clock + measurement.elapsed()
        } else {
            start.elapsed().as_secs_f64()
        };
        // offsets are strictly increasing even for zero-cost evaluations
        let previous = evaluations.last().map_or(0.0, |e| e.offset_seconds);
        let offset = if now > previous { now } else { next_after(previous) };
        clock = offset;
        evaluations.push(Evaluation {
            config,
            measurement,
            offset_seconds: offset,
        });
    };
    let best = best_of(&evaluations);
    Ok(TuningSession {
        header,
        evaluations,
        best,
        stop_reason,
    })
}

fn next_after(x: f64) -> f64 {
    let step = (x.abs() * f64::EPSILON).max(1e-9);
    x + step
}

fn best_of(evaluations: &[Evaluation]) -> Option<Best> {
    let mut best: Option<Best> = None;
    for e in evaluations {
        if let Some(o) = e.measurement.objective {
            if best.as_ref().is_none_or(|b| o < b.objective) {
                best = Some(Best {
                    config: e.config.clone(),
                    objective: o,
                });
            }
        }
    }
    best
}

/// Evaluated points in normalized-index space.
#[derive(Debug, Default, Clone)]
pub struct History {
    seen: HashSet<Vec<usize>>,
    points: Vec<(Vec<f64>, Option<f64>)>,
}

impl History {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_evaluations(space: &ConfigSpace, evaluations: &[Evaluation]) -> Self {
        let mut h = History::new();
        for e in evaluations {
            if let Ok(idx) = space.indices_of(&e.config) {
                h.record(space, idx, e.measurement.objective);
            }
        }
        h
    }

    pub fn record(&mut self, space: &ConfigSpace, indices: Vec<usize>, objective: Option<f64>) {
        self.points.push((space.normalize(&indices), objective));
        self.seen.insert(indices);
    }

    pub fn contains(&self, indices: &[usize]) -> bool {
        self.seen.contains(indices)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Scores for one pool candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Acquisition {
    pub prediction: f64,
    pub nearest_distance: f64,
    pub value: f64,
}

/// Distance-weighted nearest-neighbour prediction minus an exploration bonus
/// `beta * d_min * sigma`.
pub fn acquisition(history: &History, x: &[f64]) -> Acquisition {
    let ok: Vec<(&[f64], f64)> = history
        .points
        .iter()
        .filter_map(|(p, o)| o.map(|o| (p.as_slice(), o)))
        .collect();
    if ok.is_empty() {
        // only failures so far: explore away from them
        let d_min = history
            .points
            .iter()
            .map(|(p, _)| distance(p, x))
            .fold(f64::INFINITY, f64::min);
        return Acquisition {
            prediction: 0.0,
            nearest_distance: d_min,
            value: 0.0,
        };
    }
    let mut neighbours: Vec<(f64, f64)> = ok.iter().map(|(p, o)| (distance(p, x), *o)).collect();
    neighbours.sort_by(|a, b| a.0.total_cmp(&b.0));
    let nearest = &neighbours[..neighbours.len().min(NEIGHBORS)];
    let prediction = if nearest.len() == 1 {
        nearest[0].1
    } else {
        let (num, den) = nearest.iter().fold((0.0, 0.0), |(n, d), (dist, o)| {
            let w = 1.0 / (dist + DISTANCE_EPSILON);
            (n + w * o, d + w)
        });
        num / den
    };
    let d_min = neighbours[0].0;
    let sigma = sample_std(ok.iter().map(|(_, o)| *o));
    Acquisition {
        prediction,
        nearest_distance: d_min,
        value: prediction - EXPLORATION_WEIGHT * d_min * sigma,
    }
}

fn sample_std(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count();
    if n < 2 {
        return 0.0;
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    var.sqrt()
}

/// Index of the pool candidate with the lowest acquisition value. Ties go to
/// the candidate farther from every evaluated point, then to the earliest.
pub fn select_from_pool(history: &History, space: &ConfigSpace, pool: &[Vec<usize>]) -> Option<usize> {
    let mut best: Option<(usize, Acquisition)> = None;
    for (i, candidate) in pool.iter().enumerate() {
        let a = acquisition(history, &space.normalize(candidate));
        let better = match &best {
            None => true,
            Some((_, b)) => {
                a.value < b.value || (a.value == b.value && a.nearest_distance > b.nearest_distance)
            }
        };
        if better {
            best = Some((i, a));
        }
    }
    best.map(|(i, _)| i)
}

/// First valid point not yet evaluated, in enumeration order.
fn first_unevaluated(space: &ConfigSpace, history: &History) -> Option<Vec<usize>> {
    space.enumerate_indices().find(|idx| !history.contains(idx))
}

/// A valid, unevaluated point drawn uniformly; falls back to enumeration
/// order when draws keep failing.
fn draw_unevaluated(space: &ConfigSpace, history: &History, rng: &mut SplitMix64) -> Option<Vec<usize>> {
    for _ in 0..REJECTION_LIMIT {
        let idx = space.draw_any(rng);
        if !history.contains(&idx) && space.satisfies(&idx) {
            return Some(idx);
        }
    }
    first_unevaluated(space, history)
}

fn draw_pool(space: &ConfigSpace, history: &History, rng: &mut SplitMix64) -> Vec<Vec<usize>> {
    let mut pool = Vec::with_capacity(POOL_SIZE);
    let mut misses = 0;
    while pool.len() < POOL_SIZE && misses < REJECTION_LIMIT {
        let idx = space.draw_any(rng);
        if !history.contains(&idx) && space.satisfies(&idx) {
            pool.push(idx);
            misses = 0;
        } else {
            misses += 1;
        }
    }
    if pool.is_empty() {
        pool.extend(first_unevaluated(space, history));
    }
    pool
}

/// Proposes the next configuration from an evaluation history. `None` means
/// every valid configuration has been evaluated.
pub fn surrogate_propose(
    evaluations: &[Evaluation],
    space: &ConfigSpace,
    seed: u64,
) -> Option<Configuration> {
    let history = History::from_evaluations(space, evaluations);
    let mut rng = SplitMix64::new(seed);
    let pool = draw_pool(space, &history, &mut rng);
    select_from_pool(&history, space, &pool).map(|i| space.config_at(&pool[i]))
}

struct Search<'a> {
    space: &'a ConfigSpace,
    strategy: Strategy,
    rng: SplitMix64,
    enumeration: Option<crate::space::IndexIter<'a>>,
    history: History,
}

impl<'a> Search<'a> {
    fn new(space: &'a ConfigSpace, strategy: Strategy, seed: u64) -> Self {
        Search {
            space,
            strategy,
            rng: SplitMix64::new(mix_seed(&[seed, strategy as u64])),
            enumeration: (strategy == Strategy::Exhaustive).then(|| space.enumerate_indices()),
            history: History::new(),
        }
    }

    fn propose(&mut self) -> Option<Vec<usize>> {
        match self.strategy {
            Strategy::Exhaustive => self.enumeration.as_mut()?.next(),
            Strategy::Random => draw_unevaluated(self.space, &self.history, &mut self.rng),
            Strategy::Surrogate if self.history.len() < BOOTSTRAP_EVALUATIONS => {
                draw_unevaluated(self.space, &self.history, &mut self.rng)
            }
            Strategy::Surrogate => {
                let pool = draw_pool(self.space, &self.history, &mut self.rng);
                let i = select_from_pool(&self.history, self.space, &pool)?;
                Some(pool[i].clone())
            }
        }
    }

    fn record(&mut self, indices: Vec<usize>, objective: Option<f64>) {
        self.history.record(self.space, indices, objective);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::SimCostModel;
    use crate::kerneldef::{KernelBuilder, KernelSource};
    use crate::space::TunableParam;

    fn grid_definition(sizes: &[usize]) -> KernelDefinition {
        let mut b = KernelBuilder::new("grid", KernelSource::inline(""));
        for (k, &n) in sizes.iter().enumerate() {
            b.tune(&format!("p{k}"), 0..n as i64);
        }
        b.problem_size(&["arg0"]).build().unwrap()
    }

    fn run(def: &KernelDefinition, model: &SimCostModel, strategy: Strategy, budget: Budget, seed: u64) -> TuningSession {
        let problem = ProblemSize::new(vec![64]).unwrap();
        let scalars: ScalarArgs = [(0, 64)].into_iter().collect();
        tune(
            Replay {
                definition: def,
                problem: &problem,
                scalars: &scalars,
                args: &[],
                capture_path: None,
            },
            &TuneOptions {
                device: DeviceIdent::new("sim", "Sim"),
                strategy,
                budget,
                seed,
            },
            model,
        )
        .unwrap()
    }

    #[test]
    fn exhaustive_finds_brute_force_minimum() {
        let def = grid_definition(&[4, 4]);
        let model = SimCostModel::new(def.space(), 11);
        let s = run(&def, &model, Strategy::Exhaustive, Budget::default(), 0);
        assert_eq!(s.evaluations.len(), 16);
        assert_eq!(s.stop_reason, StopReason::SpaceExhausted);
        let brute = (0..4)
            .flat_map(|a| (0..4).map(move |b| [a, b]))
            .map(|idx| model.noiseless_cost(&idx))
            .fold(f64::INFINITY, f64::min);
        assert_eq!(s.best.unwrap().objective, brute);
    }

    #[test]
    fn zero_budget_gives_empty_session() {
        let def = grid_definition(&[4, 4]);
        let model = SimCostModel::new(def.space(), 1);
        let s = run(&def, &model, Strategy::Random, Budget::evaluations(0), 0);
        assert!(s.evaluations.is_empty());
        assert!(s.best.is_none());
        assert_eq!(s.status(), SessionStatus::NoSuccessfulEvaluations);
    }

    #[test]
    fn unbounded_budget_is_rejected() {
        assert!(matches!(Budget::new(None, None), Err(TuneError::UnboundedBudget)));
        assert_eq!(Budget::default().max_wall_seconds, Some(900.0));
    }

    #[test]
    fn failures_are_recorded_and_counted() {
        let def = grid_definition(&[4, 4]);
        let model = SimCostModel::new(def.space(), 1).with_failure("p0 >= 0").unwrap();
        let s = run(&def, &model, Strategy::Random, Budget::evaluations(5), 3);
        assert_eq!(s.evaluations.len(), 5);
        assert!(s.evaluations.iter().all(|e| e.measurement.status == Status::InvalidConfig));
        assert_eq!(s.status(), SessionStatus::NoSuccessfulEvaluations);
        assert!(s.evaluations.windows(2).all(|w| w[0].offset_seconds < w[1].offset_seconds));
    }

    #[test]
    fn wall_clock_budget_in_simulated_time() {
        let def = grid_definition(&[10, 10]);
        let model = SimCostModel::new(def.space(), 1);
        let s = run(&def, &model, Strategy::Random, Budget::new(None, Some(30.0)).unwrap(), 3);
        // each evaluation costs 0.25 s compile plus 7 launches of >= 1 s
        assert!(s.evaluations.len() >= 3 && s.evaluations.len() <= 5, "{}", s.evaluations.len());
        assert_eq!(s.stop_reason, StopReason::Budget);
        let last = s.evaluations.last().unwrap().offset_seconds;
        let second_last = s.evaluations[s.evaluations.len() - 2].offset_seconds;
        assert!(second_last < 30.0 && last >= 30.0 || last < 30.0);
    }

    #[test]
    fn random_search_does_not_repeat_until_exhausted() {
        let def = grid_definition(&[3, 3]);
        let model = SimCostModel::new(def.space(), 2);
        let s = run(&def, &model, Strategy::Random, Budget::evaluations(50), 4);
        assert_eq!(s.evaluations.len(), 9);
        assert_eq!(s.stop_reason, StopReason::SpaceExhausted);
        let unique: HashSet<_> = s.evaluations.iter().map(|e| e.config.clone()).collect();
        assert_eq!(unique.len(), 9);
    }

    #[test]
    fn restricted_space_is_respected() {
        let mut b = KernelBuilder::new("r", KernelSource::inline(""));
        b.tune("a", 0..6i64).tune("b", 0..6i64).restriction("a + b < 5");
        let def = b.problem_size(&["arg0"]).build().unwrap();
        let model = SimCostModel::new(def.space(), 5);
        for strategy in [Strategy::Exhaustive, Strategy::Random, Strategy::Surrogate] {
            let s = run(&def, &model, strategy, Budget::evaluations(40), 9);
            for e in &s.evaluations {
                let a = e.config.get("a").unwrap().as_int().unwrap();
                let b = e.config.get("b").unwrap().as_int().unwrap();
                assert!(a + b < 5);
            }
        }
    }

    #[test]
    fn sessions_are_deterministic() {
        let def = grid_definition(&[6, 6, 6]);
        let model = SimCostModel::new(def.space(), 8).with_noise(0.02);
        for strategy in [Strategy::Random, Strategy::Surrogate] {
            let a = run(&def, &model, strategy, Budget::evaluations(40), 17);
            let mut b = run(&def, &model, strategy, Budget::evaluations(40), 17);
            b.header.created = a.header.created.clone();
            assert_eq!(a.to_jsonl(), b.to_jsonl());
        }
    }

    #[test]
    fn running_best_is_monotone() {
        let def = grid_definition(&[6, 6, 6]);
        let model = SimCostModel::new(def.space(), 8).with_noise(0.05);
        let s = run(&def, &model, Strategy::Surrogate, Budget::evaluations(60), 1);
        let running = s.running_best();
        for w in running.windows(2) {
            if let (Some(a), Some(b)) = (w[0], w[1]) {
                assert!(b <= a);
            }
        }
        assert_eq!(running.last().copied().flatten(), s.best.map(|b| b.objective));
    }

    #[test]
    fn single_point_history_explores_farthest() {
        let space = ConfigSpace::new(vec![
            TunableParam::new("x", 0..5i64, 0i64).unwrap(),
            TunableParam::new("y", 0..5i64, 0i64).unwrap(),
        ])
        .unwrap();
        let mut history = History::new();
        history.record(&space, vec![1, 1], Some(2.0));
        let pool = vec![vec![2, 1], vec![4, 4], vec![0, 3], vec![1, 2]];
        // independent check: the pool point maximizing distance to (1, 1)
        let far = pool
            .iter()
            .enumerate()
            .max_by(|a, b| {
                let da = ((a.1[0] as f64 - 1.0).powi(2) + (a.1[1] as f64 - 1.0).powi(2)).sqrt();
                let db = ((b.1[0] as f64 - 1.0).powi(2) + (b.1[1] as f64 - 1.0).powi(2)).sqrt();
                da.total_cmp(&db)
            })
            .unwrap()
            .0;
        assert_eq!(select_from_pool(&history, &space, &pool), Some(far));
        assert_eq!(far, 1);
    }

    #[test]
    fn identical_candidates_pick_earliest() {
        let space = ConfigSpace::new(vec![TunableParam::new("x", 0..10i64, 0i64).unwrap()]).unwrap();
        let mut history = History::new();
        history.record(&space, vec![0], Some(3.0));
        history.record(&space, vec![9], Some(1.0));
        history.record(&space, vec![5], Some(2.0));
        let pool = vec![vec![2], vec![7], vec![7], vec![3]];
        let winner = select_from_pool(&history, &space, &pool).unwrap();
        assert_eq!(winner, 1);
    }

    #[test]
    fn acquisition_matches_hand_computation() {
        let space = ConfigSpace::new(vec![TunableParam::new("x", 0..11i64, 0i64).unwrap()]).unwrap();
        let mut history = History::new();
        history.record(&space, vec![0], Some(1.0));
        history.record(&space, vec![10], Some(3.0));
        let a = acquisition(&history, &[0.25]);
        // weights 1/0.25 and 1/0.75 (plus 1e-9), sigma = sqrt(2)
        let (w0, w1) = (1.0 / (0.25 + 1e-9), 1.0 / (0.75 + 1e-9));
        let prediction = (w0 * 1.0 + w1 * 3.0) / (w0 + w1);
        assert!((a.prediction - prediction).abs() < 1e-12);
        assert!((a.nearest_distance - 0.25).abs() < 1e-12);
        assert!((a.value - (prediction - 0.25 * 2f64.sqrt())).abs() < 1e-12);
    }

    #[test]
    fn exhausted_space_signals_completion() {
        let def = grid_definition(&[2, 2]);
        let space = def.space();
        let evaluations: Vec<Evaluation> = space
            .enumerate()
            .map(|config| Evaluation {
                config,
                measurement: Measurement::ok(1.0),
                offset_seconds: 0.0,
            })
            .collect();
        assert!(surrogate_propose(&evaluations, space, 1).is_none());
        assert!(surrogate_propose(&evaluations[..3], space, 1).is_some());
        let model = SimCostModel::new(space, 1);
        let s = run(&def, &model, Strategy::Surrogate, Budget::evaluations(100), 1);
        assert_eq!(s.evaluations.len(), 4);
        assert_eq!(s.stop_reason, StopReason::SpaceExhausted);
    }

    #[test]
    fn session_log_round_trip() {
        let def = grid_definition(&[3, 3]);
        let model = SimCostModel::new(def.space(), 2).with_failure("p0 == 2").unwrap();
        let s = run(&def, &model, Strategy::Exhaustive, Budget::evaluations(7), 4);
        let text = s.to_jsonl();
        let back = TuningSession::from_jsonl(&text).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.to_jsonl(), text);
        assert_eq!(text.lines().count(), 9);
        assert!(text.lines().next().unwrap().starts_with(r#"{"header":"#));
        let truncated: String = text.lines().take(4).map(|l| format!("{l}\n")).collect();
        assert!(TuningSession::from_jsonl(&truncated).is_err());
    }
}
