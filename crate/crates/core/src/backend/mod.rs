//! Everything hardware-specific sits behind two traits: [`Executor`] runs (and
//! times) a kernel configuration, [`Compiler`] turns a compile request into an
//! executable. Tuning and dispatch touch devices only through these.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::capture::KernelArg;
use crate::kerneldef::{KernelDefinition, LaunchGeometry, ProblemSize};
use crate::space::Configuration;

mod compiler;
mod sim;
mod subprocess;

pub use compiler::{CompileError, Compiler, ExecutableHandle, MockCompiler};
pub use sim::{SimCostModel, DEFAULT_REPETITIONS};
pub use subprocess::{SubprocessCompiler, SubprocessExecutor, TemplateError};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DeviceIdent {
    pub name: String,
    pub architecture: String,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
}

impl DeviceIdent {
    /// Panics on an empty name or architecture.
    pub fn new(name: &str, architecture: &str) -> Self {
        assert!(
            !name.is_empty() && !architecture.is_empty(),
            "device name and architecture must be non-empty"
        );
        DeviceIdent {
            name: name.to_string(),
            architecture: architecture.to_string(),
            attributes: BTreeMap::new(),
        }
    }

    pub fn with_attribute(mut self, key: &str, value: impl ToString) -> Self {
        self.attributes.insert(key.to_string(), value.to_string());
        self
    }
}

impl fmt::Display for DeviceIdent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({})", self.name, self.architecture)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    CompileFailed,
    LaunchFailed,
    InvalidConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    WisdomRead,
    Compile,
    ModuleLoad,
    Launch,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::WisdomRead, Stage::Compile, Stage::ModuleLoad, Stage::Launch];

    pub fn name(self) -> &'static str {
        match self {
            Stage::WisdomRead => "wisdom_read",
            Stage::Compile => "compile",
            Stage::ModuleLoad => "module_load",
            Stage::Launch => "launch",
        }
    }
}

/// Outcome of one evaluation. `objective` is the kernel time in seconds and
/// is present exactly when the status is `Ok`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<f64>,
    #[serde(default)]
    pub stage_timings: BTreeMap<Stage, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<String>,
}

impl Measurement {
    pub fn ok(objective: f64) -> Self {
        assert!(objective > 0.0, "objective must be positive, got {objective}");
        Measurement {
            status: Status::Ok,
            objective: Some(objective),
            stage_timings: BTreeMap::new(),
            diagnostics: None,
        }
    }

    pub fn failed(status: Status, diagnostics: impl Into<String>) -> Self {
        assert_ne!(status, Status::Ok);
        Measurement {
            status,
            objective: None,
            stage_timings: BTreeMap::new(),
            diagnostics: Some(diagnostics.into()),
        }
    }

    pub fn with_timing(mut self, stage: Stage, seconds: f64) -> Self {
        self.stage_timings.insert(stage, seconds);
        self
    }

    pub fn is_ok(&self) -> bool {
        self.status == Status::Ok
    }

    /// Sum of all recorded stage timings.
    pub fn elapsed(&self) -> f64 {
        self.stage_timings.values().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Concurrency {
    /// Safe to call from several threads at once.
    Reentrant,
    /// One evaluation at a time.
    Exclusive,
}

/// Description of an executor, stored in session logs so results can be
/// re-evaluated later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendInfo {
    Sim {
        seed: u64,
        noise_sigma: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        failure: Option<String>,
        repetitions: usize,
    },
    Subprocess {
        command: String,
    },
    Other {
        name: String,
    },
}

/// One request to an executor. Without a `handle` the executor compiles the
/// configuration itself (the tuning path); with one it only launches.
#[derive(Debug, Clone, Copy)]
pub struct Job<'a> {
    pub definition: &'a KernelDefinition,
    pub config: &'a Configuration,
    pub problem: &'a ProblemSize,
    pub geometry: &'a LaunchGeometry,
    pub device: &'a DeviceIdent,
    pub args: &'a [KernelArg<'a>],
    pub handle: Option<&'a ExecutableHandle>,
    pub capture_path: Option<&'a Path>,
}

pub trait Executor: Send + Sync {
    fn concurrency(&self) -> Concurrency;

    fn execute(&self, job: &Job<'_>) -> Measurement;

    fn describe(&self) -> BackendInfo;

    /// Whether session offsets should follow the simulated stage timings
    /// instead of the wall clock.
    fn simulated_time(&self) -> bool {
        false
    }
}

impl<E: Executor + ?Sized> Executor for std::sync::Arc<E> {
    fn concurrency(&self) -> Concurrency {
        (**self).concurrency()
    }

    fn execute(&self, job: &Job<'_>) -> Measurement {
        (**self).execute(job)
    }

    fn describe(&self) -> BackendInfo {
        (**self).describe()
    }

    fn simulated_time(&self) -> bool {
        (**self).simulated_time()
    }
}

pub(crate) fn scratch_path(dir: &Path, stem: &str, ext: &str) -> PathBuf {
    dir.join(format!("{stem}.{ext}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn measurement_serialization() {
        let m = Measurement::ok(0.25)
            .with_timing(Stage::Compile, 0.5)
            .with_timing(Stage::Launch, 1.75);
        let json = crate::canonical::to_string(&m);
        assert_eq!(
            json,
            r#"{"objective":0.25,"stage_timings":{"compile":0.5,"launch":1.75},"status":"ok"}"#
        );
        assert_eq!(serde_json::from_str::<Measurement>(&json).unwrap(), m);
        assert_eq!(m.elapsed(), 2.25);
        let f = Measurement::failed(Status::CompileFailed, "boom");
        assert!(!f.is_ok());
        assert!(f.objective.is_none());
    }

    #[test]
    #[should_panic]
    fn empty_device_name_panics() {
        DeviceIdent::new("", "Ampere");
    }

    #[test]
    fn backend_info_tagging() {
        let info = BackendInfo::Sim {
            seed: 3,
            noise_sigma: 0.0,
            failure: None,
            repetitions: 7,
        };
        assert_eq!(
            crate::canonical::to_string(&info),
            r#"{"kind":"sim","noise_sigma":0.0,"repetitions":7,"seed":3}"#
        );
    }
}
