//! Tunable parameters, restrictions and the configuration space they induce.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{self, Env, Expr, Value};
use crate::rng::SplitMix64;

/// Consecutive rejected draws after which random sampling gives up.
pub const REJECTION_LIMIT: usize = 10_000;

#[derive(Debug, Error)]
pub enum SpaceError {
    #[error("parameter `{0}` has no values")]
    EmptyValues(String),
    #[error("parameter `{param}` lists value {value} more than once")]
    DuplicateValue { param: String, value: Value },
    #[error("parameter `{0}` mixes value types")]
    MixedTypes(String),
    #[error("default {value} of parameter `{param}` is not one of its values")]
    DefaultNotInValues { param: String, value: Value },
    #[error("duplicate parameter `{0}`")]
    DuplicateParam(String),
    #[error("invalid parameter name `{0}`")]
    InvalidName(String),
    #[error("restriction `{restriction}` references unknown parameter `{name}`")]
    UnknownIdentifier { restriction: String, name: String },
    #[error("restriction `{0}` does not evaluate to a boolean")]
    NotBoolean(String),
    #[error("cannot parse restriction `{text}`: {source}")]
    Parse {
        text: String,
        #[source]
        source: expr::ParseError,
    },
    #[error("configuration does not assign parameter `{0}`")]
    MissingParam(String),
    #[error("configuration assigns unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("value {value} is not allowed for parameter `{param}`")]
    ValueNotAllowed { param: String, value: Value },
    #[error("configuration count overflows")]
    CardinalityOverflow,
    #[error("no valid configuration after {0} consecutive rejected draws; space is over-constrained")]
    RejectionLimit(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunableParam {
    name: String,
    values: Vec<Value>,
    default: Value,
}

impl TunableParam {
    pub fn new<V: Into<Value>>(
        name: &str,
        values: impl IntoIterator<Item = V>,
        default: impl Into<Value>,
    ) -> Result<Self, SpaceError> {
        let param = TunableParam {
            name: name.to_string(),
            values: values.into_iter().map(Into::into).collect(),
            default: default.into(),
        };
        param.validate()?;
        Ok(param)
    }

    pub(crate) fn validate(&self) -> Result<(), SpaceError> {
        if !is_identifier(&self.name) {
            return Err(SpaceError::InvalidName(self.name.clone()));
        }
        let first = self
            .values
            .first()
            .ok_or_else(|| SpaceError::EmptyValues(self.name.clone()))?;
        let mut seen = HashSet::new();
        for v in &self.values {
            if std::mem::discriminant(v) != std::mem::discriminant(first) {
                return Err(SpaceError::MixedTypes(self.name.clone()));
            }
            if !seen.insert(v) {
                return Err(SpaceError::DuplicateValue {
                    param: self.name.clone(),
                    value: v.clone(),
                });
            }
        }
        if !self.values.contains(&self.default) {
            return Err(SpaceError::DefaultNotInValues {
                param: self.name.clone(),
                value: self.default.clone(),
            });
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn values(&self) -> &[Value] {
        &self.values
    }

    pub fn default_value(&self) -> &Value {
        &self.default
    }

    pub fn default_index(&self) -> usize {
        self.values.iter().position(|v| *v == self.default).unwrap_or(0)
    }

    pub fn index_of(&self, value: &Value) -> Option<usize> {
        self.values.iter().position(|v| v == value)
    }
}

pub(crate) fn is_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
        && name != "true"
        && name != "false"
}

/// A restriction keeps the text it was written as next to its parsed form.
#[derive(Debug, Clone)]
pub struct Restriction {
    text: String,
    expr: Expr,
}

impl Restriction {
    pub fn parse(text: &str) -> Result<Self, SpaceError> {
        let expr = expr::parse(text).map_err(|source| SpaceError::Parse {
            text: text.to_string(),
            source,
        })?;
        Ok(Restriction {
            text: text.to_string(),
            expr,
        })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }
}

impl PartialEq for Restriction {
    fn eq(&self, other: &Self) -> bool {
        self.expr == other.expr
    }
}

/// One value per parameter. Keys are sorted, which also fixes the canonical
/// JSON form.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Configuration(BTreeMap<String, Value>);

impl Configuration {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.0.get(name)
    }

    pub fn insert(&mut self, name: &str, value: impl Into<Value>) {
        self.0.insert(name.to_string(), value.into());
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Value)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl<S: Into<String>, V: Into<Value>> FromIterator<(S, V)> for Configuration {
    fn from_iter<I: IntoIterator<Item = (S, V)>>(iter: I) -> Self {
        Configuration(
            iter.into_iter()
                .map(|(k, v)| (k.into(), v.into()))
                .collect(),
        )
    }
}

impl Env for Configuration {
    fn lookup(&self, name: &str) -> Option<Value> {
        self.0.get(name).cloned()
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, (k, v)) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{k}: {v}")?;
        }
        f.write_str("}")
    }
}

/// Default configuration together with the restrictions it breaks, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct DefaultConfig {
    pub config: Configuration,
    pub violated: Vec<String>,
}

impl DefaultConfig {
    pub fn is_valid(&self) -> bool {
        self.violated.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConfigSpace {
    params: Vec<TunableParam>,
    restrictions: Vec<Restriction>,
}

impl ConfigSpace {
    pub fn new(params: Vec<TunableParam>) -> Result<Self, SpaceError> {
        let mut names = HashSet::new();
        for p in &params {
            p.validate()?;
            if !names.insert(p.name.as_str()) {
                return Err(SpaceError::DuplicateParam(p.name.clone()));
            }
        }
        Ok(ConfigSpace {
            params,
            restrictions: Vec::new(),
        })
    }

    pub fn with_restriction(mut self, text: &str) -> Result<Self, SpaceError> {
        self.add_restriction(text)?;
        Ok(self)
    }

    pub fn add_restriction(&mut self, text: &str) -> Result<(), SpaceError> {
        let restriction = Restriction::parse(text)?;
        for name in restriction.expr.identifiers() {
            if self.param(name).is_none() {
                return Err(SpaceError::UnknownIdentifier {
                    restriction: text.to_string(),
                    name: name.to_string(),
                });
            }
        }
        // a well-typed restriction yields a boolean under the defaults
        let defaults = self.default_indices();
        if let Ok(v) = restriction.expr.evaluate(&self.env(&defaults)) {
            if v.as_bool().is_none() {
                return Err(SpaceError::NotBoolean(text.to_string()));
            }
        }
        self.restrictions.push(restriction);
        Ok(())
    }

    pub fn params(&self) -> &[TunableParam] {
        &self.params
    }

    pub fn restrictions(&self) -> &[Restriction] {
        &self.restrictions
    }

    pub fn param(&self, name: &str) -> Option<&TunableParam> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    /// Product of value-list lengths, ignoring restrictions.
    pub fn cardinality(&self) -> Result<u64, SpaceError> {
        self.params.iter().try_fold(1u64, |acc, p| {
            acc.checked_mul(p.values.len() as u64)
                .ok_or(SpaceError::CardinalityOverflow)
        })
    }

    /// Number of restriction-satisfying points, counted by enumeration.
    pub fn valid_cardinality(&self) -> u64 {
        self.enumerate_indices().count() as u64
    }

    /// Valid configurations in index-lexicographic order, last parameter
    /// varying fastest.
    pub fn enumerate(&self) -> impl Iterator<Item = Configuration> + '_ {
        self.enumerate_indices().map(move |idx| self.config_at(&idx))
    }

    pub fn enumerate_indices(&self) -> IndexIter<'_> {
        IndexIter {
            space: self,
            next: Some(vec![0; self.params.len()]),
        }
    }

    pub fn env<'a>(&'a self, indices: &'a [usize]) -> IndexEnv<'a> {
        IndexEnv {
            space: self,
            indices,
        }
    }

    /// True when every restriction evaluates to `true`. A restriction that
    /// fails to evaluate (e.g. division by zero) rejects the point.
    pub fn satisfies(&self, indices: &[usize]) -> bool {
        let env = self.env(indices);
        self.restrictions
            .iter()
            .all(|r| matches!(r.expr.evaluate(&env), Ok(Value::Bool(true))))
    }

    pub fn violated_restrictions(&self, indices: &[usize]) -> Vec<String> {
        let env = self.env(indices);
        self.restrictions
            .iter()
            .filter(|r| !matches!(r.expr.evaluate(&env), Ok(Value::Bool(true))))
            .map(|r| r.text.clone())
            .collect()
    }

    pub fn is_valid(&self, config: &Configuration) -> bool {
        self.indices_of(config)
            .map(|idx| self.satisfies(&idx))
            .unwrap_or(false)
    }

    pub fn config_at(&self, indices: &[usize]) -> Configuration {
        Configuration(
            self.params
                .iter()
                .zip(indices)
                .map(|(p, &i)| (p.name.clone(), p.values[i].clone()))
                .collect(),
        )
    }

    pub fn indices_of(&self, config: &Configuration) -> Result<Vec<usize>, SpaceError> {
        if let Some(extra) = config.0.keys().find(|k| self.param(k).is_none()) {
            return Err(SpaceError::UnknownParam(extra.clone()));
        }
        self.params
            .iter()
            .map(|p| {
                let v = config
                    .get(&p.name)
                    .ok_or_else(|| SpaceError::MissingParam(p.name.clone()))?;
                p.index_of(v).ok_or_else(|| SpaceError::ValueNotAllowed {
                    param: p.name.clone(),
                    value: v.clone(),
                })
            })
            .collect()
    }

    /// Position of each parameter scaled to `[0, 1]`; single-valued
    /// parameters map to 0.
    pub fn normalize(&self, indices: &[usize]) -> Vec<f64> {
        self.params
            .iter()
            .zip(indices)
            .map(|(p, &i)| {
                let n = p.values.len();
                if n <= 1 {
                    0.0
                } else {
                    i as f64 / (n - 1) as f64
                }
            })
            .collect()
    }

    pub fn default_indices(&self) -> Vec<usize> {
        self.params.iter().map(TunableParam::default_index).collect()
    }

    pub fn default_config(&self) -> DefaultConfig {
        let idx = self.default_indices();
        DefaultConfig {
            config: self.config_at(&idx),
            violated: self.violated_restrictions(&idx),
        }
    }

    /// Draws `n` valid configurations; duplicates are possible.
    pub fn sample_random(&self, seed: u64, n: usize) -> Result<Vec<Configuration>, SpaceError> {
        let mut rng = SplitMix64::new(seed);
        (0..n)
            .map(|_| self.draw_valid(&mut rng).map(|idx| self.config_at(&idx)))
            .collect()
    }

    /// One point drawn uniformly per parameter, rejection-filtered by the
    /// restrictions.
    pub fn draw_valid(&self, rng: &mut SplitMix64) -> Result<Vec<usize>, SpaceError> {
        for _ in 0..REJECTION_LIMIT {
            let idx = self.draw_any(rng);
            if self.satisfies(&idx) {
                return Ok(idx);
            }
        }
        Err(SpaceError::RejectionLimit(REJECTION_LIMIT))
    }

    pub fn draw_any(&self, rng: &mut SplitMix64) -> Vec<usize> {
        self.params.iter().map(|p| rng.below(p.values.len())).collect()
    }
}

/// Binds parameter names to the values at a point given by value indices.
pub struct IndexEnv<'a> {
    space: &'a ConfigSpace,
    indices: &'a [usize],
}

impl Env for IndexEnv<'_> {
    fn lookup(&self, name: &str) -> Option<Value> {
        let pos = self.space.position(name)?;
        Some(self.space.params[pos].values[self.indices[pos]].clone())
    }
}

pub struct IndexIter<'a> {
    space: &'a ConfigSpace,
    next: Option<Vec<usize>>,
}

impl IndexIter<'_> {
    fn advance(&mut self) {
        let Some(idx) = self.next.as_mut() else {
            return;
        };
        for k in (0..idx.len()).rev() {
            idx[k] += 1;
            if idx[k] < self.space.params[k].values.len() {
                return;
            }
            idx[k] = 0;
        }
        self.next = None;
    }
}

impl Iterator for IndexIter<'_> {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        loop {
            let current = self.next.clone()?;
            self.advance();
            if self.space.satisfies(&current) {
                return Some(current);
            }
        }
    }
}
