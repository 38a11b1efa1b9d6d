//! Compiler and benchmark executor that shell out to user-configured commands.
//!
//! Command templates are split on whitespace into an argument vector; no shell
//! is involved. Placeholders such as `{SOURCE}` are replaced textually inside
//! each token, and a token consisting solely of `{FLAGS}` expands to one
//! argument per flag. Each placeholder may appear at most once.

use std::path::Path;
use std::process::Command;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use thiserror::Error;

use super::compiler::{CompileError, Compiler, ExecutableHandle};
use super::{scratch_path, BackendInfo, Concurrency, DeviceIdent, Executor, Job, Measurement, Stage, Status};
use crate::kerneldef::{CompileRequest, KernelSource};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("command template is empty")]
    Empty,
    #[error("placeholder {{{0}}} appears more than once")]
    Duplicate(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct CommandTemplate {
    text: String,
    tokens: Vec<String>,
}

impl CommandTemplate {
    fn parse(text: &str, placeholders: &[&str]) -> Result<Self, TemplateError> {
        let tokens: Vec<String> = text.split_whitespace().map(str::to_string).collect();
        if tokens.is_empty() {
            return Err(TemplateError::Empty);
        }
        for p in placeholders {
            if text.matches(&format!("{{{p}}}")).count() > 1 {
                return Err(TemplateError::Duplicate(p.to_string()));
            }
        }
        Ok(CommandTemplate {
            text: text.to_string(),
            tokens,
        })
    }

    fn render(&self, values: &[(&str, Vec<String>)]) -> Vec<String> {
        let mut argv = Vec::new();
        for token in &self.tokens {
            if let Some((_, list)) = values.iter().find(|(name, _)| *token == format!("{{{name}}}")) {
                argv.extend(list.iter().cloned());
                continue;
            }
            let mut t = token.clone();
            for (name, list) in values {
                t = t.replace(&format!("{{{name}}}"), &list.join(" "));
            }
            argv.push(t);
        }
        argv
    }
}

fn run(argv: &[String]) -> Result<(bool, String, String), String> {
    let output = Command::new(&argv[0])
        .args(&argv[1..])
        .output()
        .map_err(|e| format!("cannot run `{}`: {e}", argv[0]))?;
    Ok((
        output.status.success(),
        String::from_utf8_lossy(&output.stdout).into_owned(),
        String::from_utf8_lossy(&output.stderr).into_owned(),
    ))
}

/// Runs e.g. `nvcc -cubin {FLAGS} -o {OUTPUT} {SOURCE}`.
#[derive(Debug)]
pub struct SubprocessCompiler {
    template: CommandTemplate,
    scratch: tempfile::TempDir,
    counter: AtomicU64,
}

impl SubprocessCompiler {
    pub const PLACEHOLDERS: [&'static str; 4] = ["SOURCE", "OUTPUT", "FLAGS", "ENTRY"];

    pub fn new(template: &str) -> Result<Self, TemplateError> {
        Ok(SubprocessCompiler {
            template: CommandTemplate::parse(template, &Self::PLACEHOLDERS)?,
            scratch: tempfile::tempdir().expect("temporary directory"),
            counter: AtomicU64::new(0),
        })
    }

    pub fn template(&self) -> &str {
        &self.template.text
    }

    /// Defines become `-D`, `name=value` argument pairs, followed by the flags.
    fn flag_args(request: &CompileRequest) -> Vec<String> {
        let mut out = Vec::new();
        for d in &request.defines {
            match d.strip_prefix("-D ") {
                Some(rest) => {
                    out.push("-D".to_string());
                    out.push(rest.to_string());
                }
                None => out.push(d.clone()),
            }
        }
        out.extend(request.flags.iter().cloned());
        out
    }
}

impl Compiler for SubprocessCompiler {
    fn compile(
        &self,
        request: &CompileRequest,
        device: &DeviceIdent,
    ) -> Result<ExecutableHandle, CompileError> {
        let fail = |diagnostics: String| CompileError {
            entry: request.entry.clone(),
            diagnostics,
        };
        let id = self.counter.fetch_add(1, Ordering::SeqCst);
        let text = request
            .source
            .text()
            .map_err(|e| fail(format!("cannot read kernel source: {e}")))?;
        let ext = match &request.source {
            KernelSource::File(p) => p
                .extension()
                .map(|e| e.to_string_lossy().into_owned())
                .unwrap_or_else(|| "cu".into()),
            KernelSource::Inline(_) => "cu".into(),
        };
        let stem = format!("kernel{id}");
        let source = scratch_path(self.scratch.path(), &stem, &ext);
        let output = scratch_path(self.scratch.path(), &stem, "bin");
        std::fs::write(&source, text).map_err(|e| fail(format!("cannot write source: {e}")))?;
        let argv = self.template.render(&[
            ("SOURCE", vec![source.display().to_string()]),
            ("OUTPUT", vec![output.display().to_string()]),
            ("FLAGS", Self::flag_args(request)),
            ("ENTRY", vec![request.entry.clone()]),
        ]);
        let (success, stdout, stderr) = run(&argv).map_err(fail)?;
        let log = format!("{stdout}{stderr}");
        if !success {
            return Err(fail(if log.is_empty() {
                format!("`{}` exited with failure", argv[0])
            } else {
                log
            }));
        }
        Ok(ExecutableHandle {
            id,
            entry: request.entry.clone(),
            device: device.name.clone(),
            request: request.clone(),
            artifact: Some(output),
            log,
        })
    }
}

/// Benchmarks by running a command that prints the kernel time in seconds on
/// the last line of its standard output. One evaluation at a time.
#[derive(Debug)]
pub struct SubprocessExecutor {
    compiler: Option<SubprocessCompiler>,
    template: CommandTemplate,
    exclusive: Mutex<()>,
}

impl SubprocessExecutor {
    pub const PLACEHOLDERS: [&'static str; 9] = [
        "ARTIFACT", "ENTRY", "BLOCK", "GRID", "SHARED", "PROBLEM", "CONFIG", "CAPTURE", "DEVICE",
    ];

    pub fn new(template: &str, compiler: Option<SubprocessCompiler>) -> Result<Self, TemplateError> {
        Ok(SubprocessExecutor {
            compiler,
            template: CommandTemplate::parse(template, &Self::PLACEHOLDERS)?,
            exclusive: Mutex::new(()),
        })
    }

    fn join3(v: [u64; 3]) -> String {
        format!("{},{},{}", v[0], v[1], v[2])
    }
}

impl Executor for SubprocessExecutor {
    fn concurrency(&self) -> Concurrency {
        Concurrency::Exclusive
    }

    fn execute(&self, job: &Job<'_>) -> Measurement {
        let _guard = self.exclusive.lock().unwrap_or_else(|e| e.into_inner());
        let mut compile_time = None;
        let compiled;
        let handle = match (job.handle, &self.compiler) {
            (Some(h), _) => Some(h),
            (None, Some(compiler)) => {
                let request = match job.definition.render_compile_request(job.config) {
                    Ok(r) => r,
                    Err(e) => return Measurement::failed(Status::InvalidConfig, e.to_string()),
                };
                let start = Instant::now();
                let result = compiler.compile(&request, job.device);
                compile_time = Some(start.elapsed().as_secs_f64());
                match result {
                    Ok(h) => {
                        compiled = h;
                        Some(&compiled)
                    }
                    Err(e) => {
                        return Measurement::failed(Status::CompileFailed, e.diagnostics)
                            .with_timing(Stage::Compile, compile_time.unwrap_or_default())
                    }
                }
            }
            (None, None) => None,
        };
        let artifact = handle
            .and_then(|h| h.artifact.as_deref())
            .map(Path::display)
            .map(|d| d.to_string())
            .unwrap_or_default();
        let entry = handle
            .map(|h| h.entry.clone())
            .unwrap_or_else(|| job.definition.name().to_string());
        let capture = job
            .capture_path
            .map(|p| p.display().to_string())
            .unwrap_or_default();
        let argv = self.template.render(&[
            ("ARTIFACT", vec![artifact]),
            ("ENTRY", vec![entry]),
            ("BLOCK", vec![Self::join3(job.geometry.block)]),
            ("GRID", vec![Self::join3(job.geometry.grid)]),
            ("SHARED", vec![job.geometry.shared_mem_bytes.to_string()]),
            ("PROBLEM", vec![job.problem.to_string()]),
            ("CONFIG", vec![crate::canonical::to_string(job.config)]),
            ("CAPTURE", vec![capture]),
            ("DEVICE", vec![job.device.name.clone()]),
        ]);
        let start = Instant::now();
        let outcome = run(&argv);
        let launch_time = start.elapsed().as_secs_f64();
        let mut m = match outcome {
            Err(e) => Measurement::failed(Status::LaunchFailed, e),
            Ok((false, stdout, stderr)) => {
                Measurement::failed(Status::LaunchFailed, format!("{stdout}{stderr}"))
            }
            Ok((true, stdout, _)) => {
                let last = stdout.lines().rev().find(|l| !l.trim().is_empty()).unwrap_or("");
                match last.trim().parse::<f64>() {
                    Ok(t) if t > 0.0 && t.is_finite() => Measurement::ok(t),
                    _ => Measurement::failed(
                        Status::LaunchFailed,
                        format!("benchmark printed no positive time: `{last}`"),
                    ),
                }
            }
        };
        if let Some(t) = compile_time {
            m = m.with_timing(Stage::Compile, t);
        }
        m.with_timing(Stage::Launch, launch_time)
    }

    fn describe(&self) -> BackendInfo {
        BackendInfo::Subprocess {
            command: self.template.text.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kerneldef::{KernelBuilder, ProblemSize};

    fn request() -> CompileRequest {
        CompileRequest {
            source: KernelSource::inline("__global__ void k() {}"),
            entry: "k<128>".into(),
            defines: vec!["-D TILE=2".into()],
            flags: vec!["-O3".into()],
        }
    }

    fn device() -> DeviceIdent {
        DeviceIdent::new("RTX A4000", "Ampere")
    }

    #[test]
    fn failing_command_reports_compile_failure() {
        let c = SubprocessCompiler::new("false").unwrap();
        let err = c.compile(&request(), &device()).unwrap_err();
        assert_eq!(err.entry, "k<128>");
    }

    #[test]
    fn missing_program_reports_compile_failure() {
        let c = SubprocessCompiler::new("/nonexistent/compiler {SOURCE}").unwrap();
        let err = c.compile(&request(), &device()).unwrap_err();
        assert!(err.diagnostics.contains("cannot run"));
    }

    #[test]
    fn placeholders_are_substituted_once_each() {
        let c = SubprocessCompiler::new("echo {SOURCE} {OUTPUT} {FLAGS}").unwrap();
        let h = c.compile(&request(), &device()).unwrap();
        let source = scratch_path(c.scratch.path(), "kernel0", "cu");
        let output = scratch_path(c.scratch.path(), "kernel0", "bin");
        let expected = format!("{} {} -D TILE=2 -O3\n", source.display(), output.display());
        assert_eq!(h.log, expected);
        assert_eq!(std::fs::read_to_string(&source).unwrap(), "__global__ void k() {}");
        assert_eq!(h.artifact.as_deref(), Some(output.as_path()));
    }

    #[test]
    fn duplicate_placeholder_is_rejected() {
        assert_eq!(
            SubprocessCompiler::new("cc {SOURCE} {SOURCE}").unwrap_err(),
            TemplateError::Duplicate("SOURCE".into())
        );
        assert_eq!(SubprocessCompiler::new("  ").unwrap_err(), TemplateError::Empty);
    }

    #[test]
    fn placeholder_inside_token() {
        let c = SubprocessCompiler::new("echo -o{OUTPUT} --entry={ENTRY}").unwrap();
        let h = c.compile(&request(), &device()).unwrap();
        assert!(h.log.contains("--entry=k<128>"));
        assert!(h.log.starts_with("-o/"));
    }

    fn bench(template: &str) -> Measurement {
        let def = KernelBuilder::new("k", KernelSource::inline(""))
            .tune("bs", [64i64, 128])
            .problem_size(&["arg0"])
            .block_size(&["bs"])
            .build()
            .unwrap();
        let config = def.space().default_config().config;
        let problem = ProblemSize::new(vec![1000]).unwrap();
        let geometry = def.derive_geometry(&config, &problem, &Default::default()).unwrap();
        let exec = SubprocessExecutor::new(template, Some(SubprocessCompiler::new("true").unwrap())).unwrap();
        assert_eq!(exec.concurrency(), Concurrency::Exclusive);
        exec.execute(&Job {
            definition: &def,
            config: &config,
            problem: &problem,
            geometry: &geometry,
            device: &device(),
            args: &[],
            handle: None,
            capture_path: None,
        })
    }

    #[test]
    fn benchmark_parses_last_line() {
        let m = bench("printf warmup\\n0.00125\\n");
        assert_eq!(m.status, Status::Ok);
        assert_eq!(m.objective, Some(0.00125));
        assert!(m.stage_timings.contains_key(&Stage::Compile));
    }

    #[test]
    fn benchmark_failures() {
        assert_eq!(bench("false").status, Status::LaunchFailed);
        assert_eq!(bench("echo not-a-number").status, Status::LaunchFailed);
        let geometry = bench("echo {BLOCK} {GRID}");
        // "64,1,1 16,1,1" does not parse as a time
        assert!(geometry.diagnostics.unwrap().contains("64,1,1 16,1,1"));
    }
}
