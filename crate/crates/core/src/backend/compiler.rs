use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use thiserror::Error;

use super::DeviceIdent;
use crate::kerneldef::CompileRequest;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("compilation of `{entry}` failed: {diagnostics}")]
pub struct CompileError {
    pub entry: String,
    pub diagnostics: String,
}

/// A compiled kernel instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutableHandle {
    pub id: u64,
    pub entry: String,
    pub device: String,
    pub request: CompileRequest,
    pub artifact: Option<PathBuf>,
    /// Compiler output (stdout and stderr) for subprocess compilers.
    pub log: String,
}

pub trait Compiler: Send + Sync {
    fn compile(
        &self,
        request: &CompileRequest,
        device: &DeviceIdent,
    ) -> Result<ExecutableHandle, CompileError>;

    /// Loads a compiled module onto the device.
    fn load(&self, _handle: &ExecutableHandle) -> Result<(), CompileError> {
        Ok(())
    }
}

type FailurePredicate = Box<dyn Fn(&CompileRequest) -> bool + Send + Sync>;

/// Records requests and counts invocations; optionally sleeps to model a slow
/// runtime compiler, or fails selected requests.
#[derive(Default)]
pub struct MockCompiler {
    invocations: AtomicU64,
    next_id: AtomicU64,
    delay: Duration,
    load_delay: Duration,
    fail_when: Option<FailurePredicate>,
    requests: Mutex<Vec<CompileRequest>>,
}

impl MockCompiler {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }

    pub fn with_load_delay(mut self, delay: Duration) -> Self {
        self.load_delay = delay;
        self
    }

    pub fn failing_when(
        mut self,
        predicate: impl Fn(&CompileRequest) -> bool + Send + Sync + 'static,
    ) -> Self {
        self.fail_when = Some(Box::new(predicate));
        self
    }

    pub fn invocations(&self) -> u64 {
        self.invocations.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<CompileRequest> {
        self.requests.lock().expect("request log poisoned").clone()
    }
}

impl std::fmt::Debug for MockCompiler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MockCompiler")
            .field("invocations", &self.invocations())
            .field("delay", &self.delay)
            .finish()
    }
}

impl Compiler for MockCompiler {
    fn compile(
        &self,
        request: &CompileRequest,
        device: &DeviceIdent,
    ) -> Result<ExecutableHandle, CompileError> {
        self.invocations.fetch_add(1, Ordering::SeqCst);
        self.requests
            .lock()
            .expect("request log poisoned")
            .push(request.clone());
        if !self.delay.is_zero() {
            std::thread::sleep(self.delay);
        }
        if self.fail_when.as_ref().is_some_and(|f| f(request)) {
            return Err(CompileError {
                entry: request.entry.clone(),
                diagnostics: "mock compiler rejected the request".into(),
            });
        }
        Ok(ExecutableHandle {
            id: self.next_id.fetch_add(1, Ordering::SeqCst),
            entry: request.entry.clone(),
            device: device.name.clone(),
            request: request.clone(),
            artifact: None,
            log: String::new(),
        })
    }

    fn load(&self, _handle: &ExecutableHandle) -> Result<(), CompileError> {
        if !self.load_delay.is_zero() {
            std::thread::sleep(self.load_delay);
        }
        Ok(())
    }
}
