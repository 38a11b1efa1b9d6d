//! Runtime launching through wisdom: the first launch for a (device, problem
//! size) selects a configuration and compiles it, later launches reuse the
//! compiled instance.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Compiler, DeviceIdent, ExecutableHandle, Executor, Job, Stage};
use crate::capture::{scalar_args, Capturer, KernelArg};
use crate::kerneldef::{DefinitionError, KernelDefinition, ProblemSize};
use crate::space::Configuration;
use crate::wisdom::{wisdom_path, MatchKind, WisdomFile, WISDOM_ENV};

pub const LOG_EXTENSION: &str = "kllog";

#[derive(Debug, Error)]
pub enum LaunchError {
    #[error(transparent)]
    Definition(#[from] DefinitionError),
    #[error("compiling {config} failed: {diagnostics}")]
    Compile { config: String, diagnostics: String },
    #[error("launching {config} failed: {diagnostics}")]
    Launch { config: String, diagnostics: String },
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("no launches recorded")]
pub struct NoLaunches;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaunchReport {
    pub kernel: String,
    pub device: String,
    pub problem: ProblemSize,
    pub config: Configuration,
    pub match_kind: MatchKind,
    /// Host-side seconds spent per stage. Compilation stages appear only on
    /// cache misses.
    pub stage_timings: BTreeMap<Stage, f64>,
    pub cache_hit: bool,
    /// The selected configuration failed to compile and the default was used.
    #[serde(default)]
    pub fallback: bool,
    /// Kernel time reported by the executor, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel_seconds: Option<f64>,
}

#[derive(Debug, Clone)]
struct Entry {
    handle: Arc<ExecutableHandle>,
    config: Configuration,
    match_kind: MatchKind,
    fallback: bool,
}

type Slot = Arc<Mutex<Option<Entry>>>;

#[derive(Debug, Default)]
struct Counters {
    selects: AtomicU64,
    compiles: AtomicU64,
    launches: AtomicU64,
    cache_hits: AtomicU64,
}

/// Snapshot of a kernel's instrumentation counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CounterSnapshot {
    pub selects: u64,
    pub compiles: u64,
    pub launches: u64,
    pub cache_hits: u64,
}

pub struct WisdomKernel {
    definition: KernelDefinition,
    wisdom_dir: Option<PathBuf>,
    compiler: Arc<dyn Compiler>,
    executor: Arc<dyn Executor>,
    cache: Mutex<HashMap<(String, ProblemSize), Slot>>,
    counters: Counters,
    reports: Mutex<Vec<LaunchReport>>,
    log: Option<Mutex<File>>,
    capturer: Option<Capturer>,
}

impl std::fmt::Debug for WisdomKernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WisdomKernel")
            .field("kernel", &self.definition.name())
            .field("wisdom_dir", &self.wisdom_dir)
            .field("counters", &self.counters())
            .finish()
    }
}

impl WisdomKernel {
    /// The wisdom directory defaults to `KERNEL_LAUNCHER_WISDOM` when set.
    pub fn new(definition: KernelDefinition, compiler: Arc<dyn Compiler>, executor: Arc<dyn Executor>) -> Self {
        WisdomKernel {
            definition,
            wisdom_dir: std::env::var_os(WISDOM_ENV).map(PathBuf::from),
            compiler,
            executor,
            cache: Mutex::new(HashMap::new()),
            counters: Counters::default(),
            reports: Mutex::new(Vec::new()),
            log: None,
            capturer: None,
        }
    }

    pub fn with_wisdom_dir(mut self, dir: Option<PathBuf>) -> Self {
        self.wisdom_dir = dir;
        self
    }

    /// Appends one JSON line per launch to `path`.
    pub fn with_log(mut self, path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        self.log = Some(Mutex::new(file));
        Ok(self)
    }

    pub fn with_capturer(mut self, capturer: Capturer) -> Self {
        self.capturer = Some(capturer);
        self
    }

    pub fn definition(&self) -> &KernelDefinition {
        &self.definition
    }

    pub fn wisdom_file(&self) -> Option<PathBuf> {
        self.wisdom_dir
            .as_ref()
            .map(|d| wisdom_path(d, self.definition.name()))
    }

    pub fn counters(&self) -> CounterSnapshot {
        let c = &self.counters;
        CounterSnapshot {
            selects: c.selects.load(Ordering::SeqCst),
            compiles: c.compiles.load(Ordering::SeqCst),
            launches: c.launches.load(Ordering::SeqCst),
            cache_hits: c.cache_hits.load(Ordering::SeqCst),
        }
    }

    pub fn reports(&self) -> Vec<LaunchReport> {
        self.reports.lock().expect("report log poisoned").clone()
    }

    /// Configuration and match kind cached for a key, if compiled.
    pub fn cached(&self, device: &DeviceIdent, problem: &ProblemSize) -> Option<(Configuration, MatchKind)> {
        let slot = self
            .cache
            .lock()
            .expect("cache poisoned")
            .get(&(device.name.clone(), problem.clone()))
            .cloned()?;
        let entry = slot.lock().expect("cache slot poisoned");
        entry.as_ref().map(|e| (e.config.clone(), e.match_kind))
    }

    pub fn cache_len(&self) -> usize {
        let cache = self.cache.lock().expect("cache poisoned");
        cache
            .values()
            .filter(|s| s.lock().map(|e| e.is_some()).unwrap_or(false))
            .count()
    }

    /// Selects the configuration for a key from the wisdom file. A missing
    /// or unreadable file counts as empty.
    fn select(&self, device: &DeviceIdent, problem: &ProblemSize) -> (Configuration, MatchKind) {
        self.counters.selects.fetch_add(1, Ordering::SeqCst);
        let default = self.definition.space().default_config().config;
        let file = match self.wisdom_file() {
            None => None,
            Some(path) => match WisdomFile::open(&path, &self.definition) {
                Ok(f) => Some(f),
                Err(e) => {
                    log::warn!("ignoring wisdom file {}: {e}", path.display());
                    None
                }
            },
        };
        match file {
            Some(f) => {
                let s = f.select(device, problem, &default);
                (s.config, s.kind)
            }
            None => (default, MatchKind::Default),
        }
    }

    fn compile(
        &self,
        config: &Configuration,
        device: &DeviceIdent,
        timings: &mut BTreeMap<Stage, f64>,
    ) -> Result<ExecutableHandle, LaunchError> {
        let request = self.definition.render_compile_request(config)?;
        self.counters.compiles.fetch_add(1, Ordering::SeqCst);
        let start = Instant::now();
        let result = self.compiler.compile(&request, device);
        *timings.entry(Stage::Compile).or_default() += start.elapsed().as_secs_f64();
        let fail = |diagnostics: String| LaunchError::Compile {
            config: config.to_string(),
            diagnostics,
        };
        let handle = result.map_err(|e| fail(e.diagnostics))?;
        let start = Instant::now();
        let loaded = self.compiler.load(&handle);
        *timings.entry(Stage::ModuleLoad).or_default() += start.elapsed().as_secs_f64();
        loaded.map_err(|e| fail(e.diagnostics))?;
        Ok(handle)
    }

    fn build_entry(
        &self,
        device: &DeviceIdent,
        problem: &ProblemSize,
        timings: &mut BTreeMap<Stage, f64>,
    ) -> Result<Entry, LaunchError> {
        let start = Instant::now();
        let (config, match_kind) = self.select(device, problem);
        timings.insert(Stage::WisdomRead, start.elapsed().as_secs_f64());
        match self.compile(&config, device, timings) {
            Ok(handle) => Ok(Entry {
                handle: Arc::new(handle),
                config,
                match_kind,
                fallback: false,
            }),
            Err(err) => {
                let default = self.definition.space().default_config().config;
                if default == config {
                    return Err(err);
                }
                log::warn!("{err}; retrying with the default configuration");
                let handle = self.compile(&default, device, timings)?;
                Ok(Entry {
                    handle: Arc::new(handle),
                    config: default,
                    match_kind,
                    fallback: true,
                })
            }
        }
    }

    pub fn launch(&self, device: &DeviceIdent, args: &[KernelArg<'_>]) -> Result<LaunchReport, LaunchError> {
        let scalars = scalar_args(args);
        let problem = self.definition.derive_problem_size(&scalars)?;
        if let Some(capturer) = &self.capturer {
            if let Err(e) = capturer.maybe_capture(&self.definition, &problem, args) {
                log::warn!("capture of {} failed: {e}", self.definition.name());
            }
        }
        let slot: Slot = self
            .cache
            .lock()
            .expect("cache poisoned")
            .entry((device.name.clone(), problem.clone()))
            .or_default()
            .clone();

        let mut timings = BTreeMap::new();
        // Holding the slot lock while compiling makes concurrent first
        // launches for the same key wait for a single compilation.
        let (entry, cache_hit) = {
            let mut guard = slot.lock().unwrap_or_else(|e| e.into_inner());
            match guard.as_ref() {
                Some(e) => (e.clone(), true),
                None => {
                    let e = self.build_entry(device, &problem, &mut timings)?;
                    *guard = Some(e.clone());
                    (e, false)
                }
            }
        };
        if cache_hit {
            self.counters.cache_hits.fetch_add(1, Ordering::SeqCst);
        }

        let geometry = self.definition.derive_geometry(&entry.config, &problem, &scalars)?;
        let job = Job {
            definition: &self.definition,
            config: &entry.config,
            problem: &problem,
            geometry: &geometry,
            device,
            args,
            handle: Some(&entry.handle),
            capture_path: None,
        };
        let start = Instant::now();
        let measurement = self.executor.execute(&job);
        timings.insert(Stage::Launch, start.elapsed().as_secs_f64());
        self.counters.launches.fetch_add(1, Ordering::SeqCst);
        if !measurement.is_ok() {
            return Err(LaunchError::Launch {
                config: entry.config.to_string(),
                diagnostics: measurement.diagnostics.unwrap_or_default(),
            });
        }
        let report = LaunchReport {
            kernel: self.definition.name().to_string(),
            device: device.name.clone(),
            problem,
            config: entry.config,
            match_kind: entry.match_kind,
            stage_timings: timings,
            cache_hit,
            fallback: entry.fallback,
            kernel_seconds: measurement.objective,
        };
        if let Some(log) = &self.log {
            let mut line = crate::canonical::to_string(&report);
            line.push('\n');
            let mut file = log.lock().unwrap_or_else(|e| e.into_inner());
            if let Err(e) = file.write_all(line.as_bytes()) {
                log::warn!("cannot write launch log: {e}");
            }
        }
        self.reports
            .lock()
            .expect("report log poisoned")
            .push(report.clone());
        Ok(report)
    }

    pub fn overhead_report(&self) -> Result<OverheadReport, NoLaunches> {
        OverheadReport::from_reports(&self.reports.lock().expect("report log poisoned"))
    }
}

/// Mean seconds per stage over a group of launches. A stage absent from a
/// launch counts as zero; stages absent from every launch are omitted.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageMeans {
    pub launches: usize,
    pub means: BTreeMap<Stage, f64>,
}

impl StageMeans {
    fn of<'a>(reports: impl Iterator<Item = &'a LaunchReport>) -> Option<Self> {
        let mut sums: BTreeMap<Stage, f64> = BTreeMap::new();
        let mut n = 0;
        for r in reports {
            n += 1;
            for (stage, t) in &r.stage_timings {
                *sums.entry(*stage).or_default() += t;
            }
        }
        (n > 0).then(|| StageMeans {
            launches: n,
            means: sums.into_iter().map(|(s, t)| (s, t / n as f64)).collect(),
        })
    }

    pub fn total(&self) -> f64 {
        self.means.values().sum()
    }

    pub fn mean(&self, stage: Stage) -> Option<f64> {
        self.means.get(&stage).copied()
    }

    /// Fraction of the total taken by `stage`; zero when the total is zero.
    pub fn share(&self, stage: Stage) -> f64 {
        let total = self.total();
        if total > 0.0 {
            self.mean(stage).unwrap_or(0.0) / total
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverheadReport {
    /// Launches that selected and compiled (cache misses).
    pub first: Option<StageMeans>,
    /// Launches served from the cache.
    pub subsequent: Option<StageMeans>,
}

impl OverheadReport {
    pub fn from_reports(reports: &[LaunchReport]) -> Result<Self, NoLaunches> {
        if reports.is_empty() {
            return Err(NoLaunches);
        }
        Ok(OverheadReport {
            first: StageMeans::of(reports.iter().filter(|r| !r.cache_hit)),
            subsequent: StageMeans::of(reports.iter().filter(|r| r.cache_hit)),
        })
    }

    pub fn compile_share(&self) -> f64 {
        self.first.as_ref().map_or(0.0, |m| m.share(Stage::Compile))
    }
}
