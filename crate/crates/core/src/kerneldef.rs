//! Tunable kernel definitions: the configuration space, how the kernel is
//! compiled for a configuration, and how launch geometry is derived from the
//! kernel arguments.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::expr::{self, Env, EvalError, Expr, Layered, Value};
use crate::space::{ConfigSpace, Configuration, SpaceError, TunableParam};

const PROBLEM_NAMES: [&str; 3] = ["problem_x", "problem_y", "problem_z"];

#[derive(Debug, Error)]
pub enum DefinitionError {
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error("cannot parse {context} expression `{text}`: {source}")]
    Parse {
        context: String,
        text: String,
        #[source]
        source: expr::ParseError,
    },
    #[error("{context} expression references unknown identifier `{name}`")]
    UnknownIdentifier { context: String, name: String },
    #[error("problem size may only reference kernel arguments, found `{0}`")]
    ProblemUsesParameter(String),
    #[error("problem size needs 1 to 3 components, got {0}")]
    ProblemArity(usize),
    #[error("{0} needs 1 to 3 components")]
    GeometryArity(&'static str),
    #[error("invalid define name `{0}`")]
    DefineName(String),
    #[error("evaluating {context}: {source}")]
    Eval {
        context: String,
        #[source]
        source: EvalError,
    },
    #[error("{context} must be positive, got {value}")]
    NonPositive { context: String, value: i64 },
    #[error("shared memory size must be non-negative, got {0}")]
    NegativeSharedMemory(i64),
    #[error("configuration is not valid for kernel `{kernel}`: {reason}")]
    InvalidConfig { kernel: String, reason: String },
    #[error("malformed definition file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<u64>", into = "Vec<u64>")]
pub struct ProblemSize(Vec<u64>);

#[derive(Debug, Error)]
pub enum ProblemSizeError {
    #[error("problem size needs 1 to 3 components, got {0}")]
    Arity(usize),
    #[error("problem size components must be positive")]
    NonPositive,
    #[error("cannot parse problem size `{0}`")]
    Syntax(String),
}

impl ProblemSize {
    pub fn new(components: Vec<u64>) -> Result<Self, ProblemSizeError> {
        if components.is_empty() || components.len() > 3 {
            return Err(ProblemSizeError::Arity(components.len()));
        }
        if components.contains(&0) {
            return Err(ProblemSizeError::NonPositive);
        }
        Ok(ProblemSize(components))
    }

    pub fn components(&self) -> &[u64] {
        &self.0
    }

    pub fn dims(&self) -> usize {
        self.0.len()
    }

    /// Component `i`, with missing trailing dimensions reading as 1.
    pub fn extent(&self, i: usize) -> u64 {
        self.0.get(i).copied().unwrap_or(1)
    }

    pub fn distance(&self, other: &ProblemSize) -> f64 {
        let dims = self.dims().max(other.dims());
        (0..dims)
            .map(|i| {
                let d = self.extent(i) as f64 - other.extent(i) as f64;
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }
}

impl TryFrom<Vec<u64>> for ProblemSize {
    type Error = ProblemSizeError;

    fn try_from(v: Vec<u64>) -> Result<Self, Self::Error> {
        ProblemSize::new(v)
    }
}

impl From<ProblemSize> for Vec<u64> {
    fn from(p: ProblemSize) -> Self {
        p.0
    }
}

impl FromStr for ProblemSize {
    type Err = ProblemSizeError;

    /// Accepts `256,256,256` or `256x256x256`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts = s
            .split([',', 'x'])
            .map(|p| p.trim().parse::<u64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| ProblemSizeError::Syntax(s.to_string()))?;
        ProblemSize::new(parts)
    }
}

impl fmt::Display for ProblemSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("x")?;
            }
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

/// Scalar kernel arguments by position, bound as `arg0`, `arg1`, ...
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScalarArgs(BTreeMap<usize, i64>);

impl ScalarArgs {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, position: usize, value: i64) {
        self.0.insert(position, value);
    }

    pub fn get(&self, position: usize) -> Option<i64> {
        self.0.get(&position).copied()
    }
}

impl FromIterator<(usize, i64)> for ScalarArgs {
    fn from_iter<I: IntoIterator<Item = (usize, i64)>>(iter: I) -> Self {
        ScalarArgs(iter.into_iter().collect())
    }
}

impl Env for ScalarArgs {
    fn lookup(&self, name: &str) -> Option<Value> {
        let position = arg_position(name)?;
        self.get(position).map(Value::Int)
    }
}

fn arg_position(name: &str) -> Option<usize> {
    let digits = name.strip_prefix("arg")?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

struct ProblemEnv<'a>(&'a ProblemSize);

impl Env for ProblemEnv<'_> {
    fn lookup(&self, name: &str) -> Option<Value> {
        let i = PROBLEM_NAMES.iter().position(|n| *n == name)?;
        Some(Value::Int(self.0.extent(i) as i64))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelSource {
    File(PathBuf),
    Inline(String),
}

impl KernelSource {
    pub fn file(path: impl Into<PathBuf>) -> Self {
        KernelSource::File(path.into())
    }

    pub fn inline(text: impl Into<String>) -> Self {
        KernelSource::Inline(text.into())
    }

    /// The source text, reading it from disk for file sources.
    pub fn text(&self) -> std::io::Result<String> {
        match self {
            KernelSource::Inline(text) => Ok(text.clone()),
            KernelSource::File(path) => std::fs::read_to_string(path),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompileSpec {
    pub flags: Vec<String>,
    pub defines: Vec<(String, Expr)>,
    pub template_args: Vec<Expr>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaunchSpec {
    pub problem_size: Vec<Expr>,
    pub block: [Expr; 3],
    pub grid: [Expr; 3],
    pub shared_mem: Expr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LaunchGeometry {
    pub block: [u64; 3],
    pub grid: [u64; 3],
    pub shared_mem_bytes: u64,
}

impl LaunchGeometry {
    pub fn threads_per_block(&self) -> u64 {
        self.block.iter().product()
    }
}

/// What a compiler needs to build one configuration of a kernel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompileRequest {
    pub source: KernelSource,
    pub entry: String,
    pub defines: Vec<String>,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelDefinition {
    name: String,
    source: KernelSource,
    space: ConfigSpace,
    compile: CompileSpec,
    launch: LaunchSpec,
}

impl KernelDefinition {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn source(&self) -> &KernelSource {
        &self.source
    }

    pub fn space(&self) -> &ConfigSpace {
        &self.space
    }

    pub fn compile_spec(&self) -> &CompileSpec {
        &self.compile
    }

    pub fn launch_spec(&self) -> &LaunchSpec {
        &self.launch
    }

    /// Kernel name plus a digest of the parameters, restrictions, defines and
    /// template arguments. Wisdom tuned for a different parameter set never
    /// matches.
    pub fn kernel_key(&self) -> String {
        let file = self.to_file();
        let hashed = serde_json::json!({
            "defines": file.defines,
            "params": file.params,
            "restrictions": file.restrictions,
            "template_args": file.template_args,
        });
        let digest = Sha256::digest(hashed.to_string().as_bytes());
        let hex: String = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
        format!("{}-{hex}", self.name)
    }

    pub fn derive_problem_size(&self, args: &ScalarArgs) -> Result<ProblemSize, DefinitionError> {
        let components = self
            .launch
            .problem_size
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let context = format!("problem size component {i}");
                let v = e.evaluate_int(args).map_err(|source| DefinitionError::Eval {
                    context: context.clone(),
                    source,
                })?;
                if v <= 0 {
                    return Err(DefinitionError::NonPositive { context, value: v });
                }
                Ok(v as u64)
            })
            .collect::<Result<Vec<_>, _>>()?;
        ProblemSize::new(components)
            .map_err(|_| DefinitionError::ProblemArity(self.launch.problem_size.len()))
    }

    fn check_config(&self, config: &Configuration) -> Result<(), DefinitionError> {
        let invalid = |reason: String| DefinitionError::InvalidConfig {
            kernel: self.name.clone(),
            reason,
        };
        let idx = self.space.indices_of(config).map_err(|e| invalid(e.to_string()))?;
        let violated = self.space.violated_restrictions(&idx);
        if !violated.is_empty() {
            return Err(invalid(format!("violates {}", violated.join(", "))));
        }
        Ok(())
    }

    pub fn derive_geometry(
        &self,
        config: &Configuration,
        problem: &ProblemSize,
        args: &ScalarArgs,
    ) -> Result<LaunchGeometry, DefinitionError> {
        self.check_config(config)?;
        let problem_env = ProblemEnv(problem);
        let inner = Layered {
            first: args,
            second: &problem_env,
        };
        let env = Layered {
            first: config,
            second: &inner,
        };
        let eval = |e: &Expr, context: String| -> Result<i64, DefinitionError> {
            e.evaluate_int(&env)
                .map_err(|source| DefinitionError::Eval { context, source })
        };
        let mut geometry = LaunchGeometry {
            block: [1; 3],
            grid: [1; 3],
            shared_mem_bytes: 0,
        };
        for (axis, name) in ["x", "y", "z"].iter().enumerate() {
            for (kind, exprs, out) in [
                ("block", &self.launch.block, &mut geometry.block),
                ("grid", &self.launch.grid, &mut geometry.grid),
            ] {
                let context = format!("{kind}_{name}");
                let v = eval(&exprs[axis], context.clone())?;
                if v < 1 {
                    return Err(DefinitionError::NonPositive { context, value: v });
                }
                out[axis] = v as u64;
            }
        }
        let shared = eval(&self.launch.shared_mem, "shared memory".into())?;
        if shared < 0 {
            return Err(DefinitionError::NegativeSharedMemory(shared));
        }
        geometry.shared_mem_bytes = shared as u64;
        Ok(geometry)
    }

    pub fn render_compile_request(
        &self,
        config: &Configuration,
    ) -> Result<CompileRequest, DefinitionError> {
        self.check_config(config)?;
        let eval = |e: &Expr, context: String| {
            e.evaluate(config)
                .map_err(|source| DefinitionError::Eval { context, source })
        };
        let mut entry = self.name.clone();
        if !self.compile.template_args.is_empty() {
            let args = self
                .compile
                .template_args
                .iter()
                .enumerate()
                .map(|(i, e)| eval(e, format!("template argument {i}")).map(|v| v.to_code()))
                .collect::<Result<Vec<_>, _>>()?;
            entry = format!("{entry}<{}>", args.join(","));
        }
        let defines = self
            .compile
            .defines
            .iter()
            .map(|(name, e)| {
                eval(e, format!("define {name}")).map(|v| format!("-D {name}={}", v.to_code()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(CompileRequest {
            source: self.source.clone(),
            entry,
            defines,
            flags: self.compile.flags.clone(),
        })
    }

    pub fn to_file(&self) -> DefinitionFile {
        let (source_file, source) = match &self.source {
            KernelSource::File(path) => (Some(path.display().to_string()), None),
            KernelSource::Inline(text) => (None, Some(text.clone())),
        };
        DefinitionFile {
            name: self.name.clone(),
            source_file,
            source,
            params: self.space.params().to_vec(),
            restrictions: self
                .space
                .restrictions()
                .iter()
                .map(|r| r.text().to_string())
                .collect(),
            defines: self
                .compile
                .defines
                .iter()
                .map(|(n, e)| (n.clone(), e.to_string()))
                .collect(),
            template_args: self.compile.template_args.iter().map(Expr::to_string).collect(),
            block: self.launch.block.iter().map(Expr::to_string).collect(),
            grid: self.launch.grid.iter().map(Expr::to_string).collect(),
            problem_size: self.launch.problem_size.iter().map(Expr::to_string).collect(),
            shared_mem: self.launch.shared_mem.to_string(),
            flags: self.compile.flags.clone(),
        }
    }

    /// Canonical JSON text of the declarative form.
    pub fn to_json(&self) -> String {
        crate::canonical::to_string(&self.to_file())
    }

    pub fn from_json(text: &str) -> Result<Self, DefinitionError> {
        let file: DefinitionFile = serde_json::from_str(text)?;
        file.into_definition()
    }

    pub fn load(path: &Path) -> Result<Self, DefinitionError> {
        let text = std::fs::read_to_string(path).map_err(|source| DefinitionError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }
}

/// Declarative definition file. Expressions are stored as text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefinitionFile {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_file: Option<String>,
    /// Inline kernel source; used instead of `source_file` when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    pub params: Vec<TunableParam>,
    #[serde(default)]
    pub restrictions: Vec<String>,
    #[serde(default)]
    pub defines: BTreeMap<String, String>,
    #[serde(default)]
    pub template_args: Vec<String>,
    pub block: Vec<String>,
    #[serde(default)]
    pub grid: Vec<String>,
    pub problem_size: Vec<String>,
    #[serde(default = "zero_text")]
    pub shared_mem: String,
    #[serde(default)]
    pub flags: Vec<String>,
}

fn zero_text() -> String {
    "0".to_string()
}

impl DefinitionFile {
    pub fn into_definition(self) -> Result<KernelDefinition, DefinitionError> {
        let source = match (self.source, self.source_file) {
            (Some(text), _) => KernelSource::Inline(text),
            (None, Some(path)) => KernelSource::File(path.into()),
            (None, None) => KernelSource::Inline(String::new()),
        };
        let mut builder = KernelBuilder::new(&self.name, source);
        for p in self.params {
            builder.add_param(p);
        }
        for r in &self.restrictions {
            builder.restriction(r);
        }
        for (name, e) in &self.defines {
            builder.define(name, e);
        }
        builder
            .template_args(&self.template_args)
            .block_size(&self.block)
            .problem_size(&self.problem_size)
            .shared_memory(&self.shared_mem)
            .compiler_flags(&self.flags);
        if !self.grid.is_empty() {
            builder.grid_size(&self.grid);
        }
        builder.build()
    }
}

enum GridRule {
    Default,
    Divisors(Vec<String>),
    Explicit(Vec<String>),
}

/// Programmatic construction of a [`KernelDefinition`]. Expression text is
/// parsed and checked in [`KernelBuilder::build`].
pub struct KernelBuilder {
    name: String,
    source: KernelSource,
    params: Vec<TunableParam>,
    errors: Vec<DefinitionError>,
    restrictions: Vec<String>,
    defines: Vec<(String, String)>,
    template_args: Vec<String>,
    flags: Vec<String>,
    problem_size: Vec<String>,
    block: Vec<String>,
    grid: GridRule,
    shared_mem: String,
}

impl KernelBuilder {
    pub fn new(name: &str, source: KernelSource) -> Self {
        KernelBuilder {
            name: name.to_string(),
            source,
            params: Vec::new(),
            errors: Vec::new(),
            restrictions: Vec::new(),
            defines: Vec::new(),
            template_args: Vec::new(),
            flags: Vec::new(),
            problem_size: Vec::new(),
            block: vec!["1".into(); 3],
            grid: GridRule::Default,
            shared_mem: "0".into(),
        }
    }

    /// Declares a tunable parameter whose default is its first value.
    pub fn tune<V: Into<Value>>(
        &mut self,
        name: &str,
        values: impl IntoIterator<Item = V>,
    ) -> &mut Self {
        let values: Vec<Value> = values.into_iter().map(Into::into).collect();
        let default = values.first().cloned().unwrap_or(Value::Int(0));
        self.tune_with_default(name, values, default)
    }

    pub fn tune_with_default<V: Into<Value>>(
        &mut self,
        name: &str,
        values: impl IntoIterator<Item = V>,
        default: impl Into<Value>,
    ) -> &mut Self {
        match TunableParam::new(name, values, default) {
            Ok(p) => self.params.push(p),
            Err(e) => self.errors.push(e.into()),
        }
        self
    }

    pub fn add_param(&mut self, param: TunableParam) -> &mut Self {
        self.params.push(param);
        self
    }

    pub fn restriction(&mut self, text: &str) -> &mut Self {
        self.restrictions.push(text.to_string());
        self
    }

    pub fn define(&mut self, name: &str, text: &str) -> &mut Self {
        self.defines.push((name.to_string(), text.to_string()));
        self
    }

    pub fn template_args<S: AsRef<str>>(&mut self, args: &[S]) -> &mut Self {
        self.template_args = args.iter().map(|s| s.as_ref().to_string()).collect();
        self
    }

    pub fn compiler_flags<S: AsRef<str>>(&mut self, flags: &[S]) -> &mut Self {
        self.flags = flags.iter().map(|s| s.as_ref().to_string()).collect();
        self
    }

    pub fn problem_size<S: AsRef<str>>(&mut self, exprs: &[S]) -> &mut Self {
        self.problem_size = exprs.iter().map(|s| s.as_ref().to_string()).collect();
        self
    }

    /// Block extents; missing trailing extents are 1.
    pub fn block_size<S: AsRef<str>>(&mut self, exprs: &[S]) -> &mut Self {
        self.block = pad_to_three(exprs, "1");
        if exprs.is_empty() || exprs.len() > 3 {
            self.errors.push(DefinitionError::GeometryArity("block size"));
        }
        self
    }

    /// Explicit grid extents; missing trailing extents are 1.
    pub fn grid_size<S: AsRef<str>>(&mut self, exprs: &[S]) -> &mut Self {
        if exprs.is_empty() || exprs.len() > 3 {
            self.errors.push(DefinitionError::GeometryArity("grid size"));
        }
        self.grid = GridRule::Explicit(pad_to_three(exprs, "1"));
        self
    }

    /// Grid extent i becomes `ceil_div(problem_i, divisor_i)`.
    pub fn grid_divisors<S: AsRef<str>>(&mut self, exprs: &[S]) -> &mut Self {
        if exprs.is_empty() || exprs.len() > 3 {
            self.errors.push(DefinitionError::GeometryArity("grid divisors"));
        }
        self.grid = GridRule::Divisors(pad_to_three(exprs, "1"));
        self
    }

    pub fn shared_memory(&mut self, text: &str) -> &mut Self {
        self.shared_mem = text.to_string();
        self
    }

    pub fn build(&mut self) -> Result<KernelDefinition, DefinitionError> {
        if let Some(e) = self.errors.drain(..).next() {
            return Err(e);
        }
        let mut space = ConfigSpace::new(self.params.clone())?;
        for r in &self.restrictions {
            space.add_restriction(r)?;
        }
        let param_names: BTreeSet<&str> = space.params().iter().map(|p| p.name()).collect();
        let check = |context: &str, text: &str| -> Result<Expr, DefinitionError> {
            let e = expr::parse(text).map_err(|source| DefinitionError::Parse {
                context: context.to_string(),
                text: text.to_string(),
                source,
            })?;
            for id in e.identifiers() {
                let known = param_names.contains(id)
                    || arg_position(id).is_some()
                    || PROBLEM_NAMES.contains(&id);
                if !known {
                    return Err(DefinitionError::UnknownIdentifier {
                        context: context.to_string(),
                        name: id.to_string(),
                    });
                }
            }
            Ok(e)
        };

        if self.problem_size.is_empty() || self.problem_size.len() > 3 {
            return Err(DefinitionError::ProblemArity(self.problem_size.len()));
        }
        let problem_size = self
            .problem_size
            .iter()
            .map(|t| {
                let e = check("problem size", t)?;
                if let Some(id) = e.identifiers().into_iter().find(|id| arg_position(id).is_none()) {
                    return Err(DefinitionError::ProblemUsesParameter(id.to_string()));
                }
                Ok(e)
            })
            .collect::<Result<Vec<_>, _>>()?;

        let block = three(&self.block, |t| check("block", t))?;
        let grid = match &self.grid {
            GridRule::Explicit(g) => three(g, |t| check("grid", t))?,
            GridRule::Default => default_grid(&block),
            GridRule::Divisors(d) => default_grid(&three(d, |t| check("grid divisor", t))?),
        };
        let shared_mem = check("shared memory", &self.shared_mem)?;

        let defines = self
            .defines
            .iter()
            .map(|(name, t)| {
                if !crate::space::is_identifier(name) {
                    return Err(DefinitionError::DefineName(name.clone()));
                }
                Ok((name.clone(), check(&format!("define {name}"), t)?))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let template_args = self
            .template_args
            .iter()
            .map(|t| check("template argument", t))
            .collect::<Result<Vec<_>, _>>()?;
        for (context, e) in defines
            .iter()
            .map(|(n, e)| (n.as_str(), e))
            .chain(template_args.iter().map(|e| ("template argument", e)))
        {
            // compile-time values can only depend on tunable parameters
            if let Some(id) = e.identifiers().into_iter().find(|id| !param_names.contains(id)) {
                return Err(DefinitionError::UnknownIdentifier {
                    context: context.to_string(),
                    name: id.to_string(),
                });
            }
        }

        Ok(KernelDefinition {
            name: self.name.clone(),
            source: self.source.clone(),
            space,
            compile: CompileSpec {
                flags: self.flags.clone(),
                defines,
                template_args,
            },
            launch: LaunchSpec {
                problem_size,
                block,
                grid,
                shared_mem,
            },
        })
    }
}

fn pad_to_three<S: AsRef<str>>(exprs: &[S], fill: &str) -> Vec<String> {
    let mut v: Vec<String> = exprs.iter().take(3).map(|s| s.as_ref().to_string()).collect();
    v.resize(3, fill.to_string());
    v
}

fn three(
    texts: &[String],
    f: impl Fn(&str) -> Result<Expr, DefinitionError>,
) -> Result<[Expr; 3], DefinitionError> {
    if texts.len() != 3 {
        return Err(DefinitionError::GeometryArity("geometry"));
    }
    Ok([f(&texts[0])?, f(&texts[1])?, f(&texts[2])?])
}

fn default_grid(divisors: &[Expr; 3]) -> [Expr; 3] {
    std::array::from_fn(|i| {
        expr::Expr::Call(
            expr::Func::CeilDiv,
            vec![Expr::ident(PROBLEM_NAMES[i]), divisors[i].clone()],
        )
    })
}
