//! Wisdom files: the best known configuration per (device, problem size) for
//! one kernel, and the runtime selection cascade over them.
//!
//! A file is newline-delimited canonical JSON. The first line is the header,
//! every further line one record.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::DeviceIdent;
use crate::kerneldef::{DefinitionError, DefinitionFile, KernelDefinition, ProblemSize};
use crate::space::Configuration;
use crate::tuner::TuningSession;

pub const FORMAT_VERSION: u32 = 1;
pub const EXTENSION: &str = "wisdom";
pub const OBJECTIVE: &str = "time";
pub const WISDOM_ENV: &str = "KERNEL_LAUNCHER_WISDOM";

#[derive(Debug, Error)]
pub enum WisdomError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("kernel key mismatch: file has `{file}`, got `{other}`")]
    KernelKey { file: String, other: String },
    #[error("session has no successful evaluation")]
    NoBest,
    #[error("configuration {config} is not valid for kernel `{kernel}`")]
    InvalidConfig { kernel: String, config: String },
    #[error(transparent)]
    Definition(#[from] DefinitionError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WisdomHeader {
    pub format_version: u32,
    pub kernel_key: String,
    pub objective: String,
    /// The kernel definition, so a file can be read without its source tree.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub definition: Option<DefinitionFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub date: String,
    pub software: BTreeMap<String, String>,
    pub hostname: String,
    pub gpu: BTreeMap<String, String>,
}

impl Provenance {
    /// Provenance for a result obtained now on `device`.
    pub fn collect(device: &DeviceIdent) -> Self {
        let mut software = BTreeMap::new();
        software.insert("klaunch".to_string(), env!("CARGO_PKG_VERSION").to_string());
        let mut gpu = device.attributes.clone();
        gpu.insert("name".into(), device.name.clone());
        gpu.insert("architecture".into(), device.architecture.clone());
        Provenance {
            date: crate::capture::now_iso8601(),
            software,
            hostname: hostname(),
            gpu,
        }
    }
}

fn hostname() -> String {
    std::fs::read_to_string("/proc/sys/kernel/hostname")
        .ok()
        .or_else(|| std::env::var("HOSTNAME").ok())
        .or_else(|| std::env::var("COMPUTERNAME").ok())
        .map(|h| h.trim().to_string())
        .filter(|h| !h.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WisdomRecord {
    pub device: DeviceIdent,
    pub problem: ProblemSize,
    pub config: Configuration,
    pub objective_seconds: f64,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchKind {
    Exact,
    SameDeviceNearest,
    SameArchNearest,
    AnyNearest,
    Default,
}

impl MatchKind {
    pub fn name(self) -> &'static str {
        match self {
            MatchKind::Exact => "exact",
            MatchKind::SameDeviceNearest => "same_device_nearest",
            MatchKind::SameArchNearest => "same_arch_nearest",
            MatchKind::AnyNearest => "any_nearest",
            MatchKind::Default => "default",
        }
    }
}

impl fmt::Display for MatchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Result of [`WisdomFile::select`]. `record` indexes into the file's records
/// and is `None` for the default configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub config: Configuration,
    pub kind: MatchKind,
    pub record: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WisdomFile {
    pub header: WisdomHeader,
    pub records: Vec<WisdomRecord>,
}

/// `<dir>/<kernel name>.wisdom`
pub fn wisdom_path(dir: &Path, kernel_name: &str) -> PathBuf {
    dir.join(format!("{kernel_name}.{EXTENSION}"))
}

impl WisdomFile {
    pub fn new(kernel_key: &str) -> Self {
        WisdomFile {
            header: WisdomHeader {
                format_version: FORMAT_VERSION,
                kernel_key: kernel_key.to_string(),
                objective: OBJECTIVE.to_string(),
                definition: None,
            },
            records: Vec::new(),
        }
    }

    pub fn for_definition(definition: &KernelDefinition) -> Self {
        let mut file = Self::new(&definition.kernel_key());
        file.header.definition = Some(definition.to_file());
        file
    }

    pub fn kernel_key(&self) -> &str {
        &self.header.kernel_key
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn definition(&self) -> Option<Result<KernelDefinition, DefinitionError>> {
        self.header.definition.clone().map(DefinitionFile::into_definition)
    }

    pub fn to_text(&self) -> String {
        let mut out = crate::canonical::to_string(&self.header);
        out.push('\n');
        for r in &self.records {
            out.push_str(&crate::canonical::to_string(r));
            out.push('\n');
        }
        out
    }

    /// Parses file contents; `None` for an empty file.
    pub fn parse(text: &str) -> Result<Option<Self>, WisdomError> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let Some((n, first)) = lines.next() else {
            return Ok(None);
        };
        let err = |line: usize, e: serde_json::Error| WisdomError::Format {
            line: line + 1,
            message: e.to_string(),
        };
        let header: WisdomHeader = serde_json::from_str(first).map_err(|e| err(n, e))?;
        if header.format_version != FORMAT_VERSION {
            return Err(WisdomError::Format {
                line: n + 1,
                message: format!("unsupported format version {}", header.format_version),
            });
        }
        if header.objective != OBJECTIVE {
            return Err(WisdomError::Format {
                line: n + 1,
                message: format!("unsupported objective `{}`", header.objective),
            });
        }
        let records = lines
            .map(|(n, l)| serde_json::from_str(l).map_err(|e| err(n, e)))
            .collect::<Result<Vec<WisdomRecord>, _>>()?;
        Ok(Some(WisdomFile { header, records }))
    }

    /// Reads an existing file; `None` if it is missing or empty.
    pub fn load(path: &Path) -> Result<Option<Self>, WisdomError> {
        match std::fs::read_to_string(path) {
            Ok(text) => Self::parse(&text),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(source) => Err(WisdomError::Io {
                path: path.to_path_buf(),
                source,
            }),
        }
    }

    /// Reads the file for `definition`, starting empty when there is none.
    pub fn open(path: &Path, definition: &KernelDefinition) -> Result<Self, WisdomError> {
        let key = definition.kernel_key();
        match Self::load(path)? {
            None => Ok(Self::for_definition(definition)),
            Some(file) if file.header.kernel_key == key => Ok(file),
            Some(file) => Err(WisdomError::KernelKey {
                file: file.header.kernel_key,
                other: key,
            }),
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), WisdomError> {
        crate::fsutil::write_atomic(path, self.to_text().as_bytes()).map_err(|source| {
            WisdomError::Io {
                path: path.to_path_buf(),
                source,
            }
        })
    }

    /// Inserts a record, keeping the lower objective when one already exists
    /// for the same device name and problem size. Provenance is refreshed to
    /// the incoming record's either way. Returns whether the stored
    /// configuration changed.
    pub fn insert(&mut self, record: WisdomRecord) -> bool {
        let existing = self
            .records
            .iter_mut()
            .find(|r| r.device.name == record.device.name && r.problem == record.problem);
        match existing {
            None => {
                self.records.push(record);
                true
            }
            Some(r) if record.objective_seconds < r.objective_seconds => {
                *r = record;
                true
            }
            Some(r) => {
                r.provenance = record.provenance;
                false
            }
        }
    }

    pub fn append_result(&mut self, session: &TuningSession) -> Result<bool, WisdomError> {
        if session.header.kernel_key != self.header.kernel_key {
            return Err(WisdomError::KernelKey {
                file: self.header.kernel_key.clone(),
                other: session.header.kernel_key.clone(),
            });
        }
        let best = session.best.as_ref().ok_or(WisdomError::NoBest)?;
        let definition = session.definition()?;
        if !definition.space().is_valid(&best.config) {
            return Err(WisdomError::InvalidConfig {
                kernel: definition.name().to_string(),
                config: best.config.to_string(),
            });
        }
        if self.header.definition.is_none() {
            self.header.definition = Some(session.header.definition.clone());
        }
        Ok(self.insert(WisdomRecord {
            device: session.header.device.clone(),
            problem: session.header.problem.clone(),
            config: best.config.clone(),
            objective_seconds: best.objective,
            provenance: Provenance::collect(&session.header.device),
        }))
    }

    /// Folds `other` into this file with keep-best semantics.
    pub fn merge(&mut self, other: WisdomFile) -> Result<(), WisdomError> {
        if other.header.kernel_key != self.header.kernel_key {
            return Err(WisdomError::KernelKey {
                file: self.header.kernel_key.clone(),
                other: other.header.kernel_key,
            });
        }
        if self.header.definition.is_none() {
            self.header.definition = other.header.definition;
        }
        for r in other.records {
            self.insert(r);
        }
        Ok(())
    }

    /// Chooses a configuration for `device` and `problem`:
    ///
    /// 1. a record for this device and problem size,
    /// 2. the nearest problem size recorded for this device,
    /// 3. the nearest problem size recorded for this architecture,
    /// 4. the nearest problem size recorded for any device,
    /// 5. `default`.
    ///
    /// Nearness is Euclidean distance between problem sizes. Records of a
    /// different dimensionality rank after all records of the same one; ties
    /// go to the lower objective, then to the earlier record.
    pub fn select(&self, device: &DeviceIdent, problem: &ProblemSize, default: &Configuration) -> Selection {
        if let Some(i) = self
            .records
            .iter()
            .position(|r| r.device.name == device.name && r.problem == *problem)
        {
            return self.selection(i, MatchKind::Exact);
        }
        let steps: [(MatchKind, &dyn Fn(&WisdomRecord) -> bool); 3] = [
            (MatchKind::SameDeviceNearest, &|r| r.device.name == device.name),
            (MatchKind::SameArchNearest, &|r| r.device.architecture == device.architecture),
            (MatchKind::AnyNearest, &|_| true),
        ];
        for (kind, filter) in steps {
            if let Some(i) = self.nearest(problem, filter) {
                return self.selection(i, kind);
            }
        }
        Selection {
            config: default.clone(),
            kind: MatchKind::Default,
            record: None,
        }
    }

    fn selection(&self, index: usize, kind: MatchKind) -> Selection {
        Selection {
            config: self.records[index].config.clone(),
            kind,
            record: Some(index),
        }
    }

    fn nearest(&self, problem: &ProblemSize, filter: &dyn Fn(&WisdomRecord) -> bool) -> Option<usize> {
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| filter(r))
            .map(|(i, r)| {
                let key = (
                    r.problem.dims() != problem.dims(),
                    r.problem.distance(problem),
                    r.objective_seconds,
                    i,
                );
                (key, i)
            })
            .min_by(|(a, _), (b, _)| {
                a.0.cmp(&b.0)
                    .then(a.1.total_cmp(&b.1))
                    .then(a.2.total_cmp(&b.2))
                    .then(a.3.cmp(&b.3))
            })
            .map(|(_, i)| i)
    }
}
