//! Deterministic stand-in for a GPU: a seeded quadratic landscape over the
//! normalized parameter indices.
//!
//! `cost(x) = 1 + (x - mu)^T A (x - mu)` with `x_k = i_k / (n_k - 1)`. The
//! centre `mu` and the symmetric matrix `A` are drawn from a splitmix64 stream
//! seeded by the model seed, in this order: `mu_0..mu_{n-1}` uniform in
//! `[0, 1)`, then row by row the diagonal entry (uniform in `[0.5, 2]`)
//! followed by the off-diagonal entries to its right (uniform in
//! `[-0.3, 0.3]`). `A` is then shifted by `(|lambda_min| + 0.1) I`.

use nalgebra::{DMatrix, SymmetricEigen};

use super::{BackendInfo, Concurrency, Executor, Job, Measurement, Stage, Status};
use crate::rng::{mix_seed, SplitMix64};
use crate::space::{ConfigSpace, Configuration, Restriction, SpaceError};

pub const DEFAULT_REPETITIONS: usize = 7;
const DEFAULT_COMPILE_SECONDS: f64 = 0.25;

#[derive(Debug, Clone)]
pub struct SimCostModel {
    space: ConfigSpace,
    seed: u64,
    noise_sigma: f64,
    failure: Option<Restriction>,
    repetitions: usize,
    compile_seconds: f64,
    center: Vec<f64>,
    curvature: DMatrix<f64>,
}

impl SimCostModel {
    pub fn new(space: &ConfigSpace, seed: u64) -> Self {
        let n = space.params().len();
        let mut rng = SplitMix64::new(seed);
        let center: Vec<f64> = (0..n).map(|_| rng.next_f64()).collect();
        let mut a = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            a[(i, i)] = rng.uniform(0.5, 2.0);
            for j in i + 1..n {
                let v = rng.uniform(-0.3, 0.3);
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
        }
        if n > 0 {
            let min_eig = SymmetricEigen::new(a.clone()).eigenvalues.min();
            let shift = min_eig.abs() + 0.1;
            for i in 0..n {
                a[(i, i)] += shift;
            }
        }
        SimCostModel {
            space: space.clone(),
            seed,
            noise_sigma: 0.0,
            failure: None,
            repetitions: DEFAULT_REPETITIONS,
            compile_seconds: DEFAULT_COMPILE_SECONDS,
            center,
            curvature: a,
        }
    }

    /// Rebuilds the model a session was tuned against, or `None` when the
    /// description is not of a simulated backend.
    pub fn from_info(space: &ConfigSpace, info: &BackendInfo) -> Result<Option<Self>, SpaceError> {
        let BackendInfo::Sim {
            seed,
            noise_sigma,
            failure,
            repetitions,
        } = info
        else {
            return Ok(None);
        };
        let mut model = SimCostModel::new(space, *seed)
            .with_noise(*noise_sigma)
            .with_repetitions(*repetitions);
        if let Some(f) = failure {
            model = model.with_failure(f)?;
        }
        Ok(Some(model))
    }

    /// Multiplicative gaussian noise with standard deviation `sigma`.
    pub fn with_noise(mut self, sigma: f64) -> Self {
        self.noise_sigma = sigma.max(0.0);
        self
    }

    /// Configurations satisfying `text` report `invalid_config`.
    pub fn with_failure(mut self, text: &str) -> Result<Self, SpaceError> {
        let restriction = Restriction::parse(text)?;
        for name in restriction.expr().identifiers() {
            if self.space.param(name).is_none() {
                return Err(SpaceError::UnknownIdentifier {
                    restriction: text.to_string(),
                    name: name.to_string(),
                });
            }
        }
        self.failure = Some(restriction);
        Ok(self)
    }

    pub fn with_repetitions(mut self, repetitions: usize) -> Self {
        self.repetitions = repetitions.max(1);
        self
    }

    pub fn with_compile_seconds(mut self, seconds: f64) -> Self {
        self.compile_seconds = seconds.max(0.0);
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn space(&self) -> &ConfigSpace {
        &self.space
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn curvature(&self) -> &DMatrix<f64> {
        &self.curvature
    }

    /// Noise-free cost at a point given by value indices.
    pub fn noiseless_cost(&self, indices: &[usize]) -> f64 {
        let x = self.space.normalize(indices);
        let d: Vec<f64> = x.iter().zip(&self.center).map(|(x, m)| x - m).collect();
        let n = d.len();
        let mut q = 0.0;
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                row += self.curvature[(i, j)] * d[j];
            }
            q += d[i] * row;
        }
        1.0 + q
    }

    fn fails(&self, indices: &[usize]) -> bool {
        self.failure.as_ref().is_some_and(|f| {
            !matches!(
                f.expr().evaluate(&self.space.env(indices)),
                Ok(crate::expr::Value::Bool(false))
            )
        })
    }

    pub fn sim_cost(&self, config: &Configuration) -> Measurement {
        let indices = match self.space.indices_of(config) {
            Ok(idx) => idx,
            Err(e) => return Measurement::failed(Status::InvalidConfig, e.to_string()),
        };
        if !self.space.satisfies(&indices) {
            return Measurement::failed(Status::InvalidConfig, "violates a restriction");
        }
        if self.fails(&indices) {
            let text = self.failure.as_ref().map(|f| f.text()).unwrap_or_default();
            return Measurement::failed(Status::InvalidConfig, format!("matches failure rule `{text}`"));
        }
        let cost = self.noiseless_cost(&indices);
        let mut samples: Vec<f64> = (0..self.repetitions)
            .map(|r| {
                if self.noise_sigma == 0.0 {
                    return cost;
                }
                let mut words: Vec<u64> = vec![self.seed];
                words.extend(indices.iter().map(|&i| i as u64));
                words.push(r as u64);
                let g = SplitMix64::new(mix_seed(&words)).gaussian();
                cost * (1.0 + self.noise_sigma * g).max(1e-3)
            })
            .collect();
        samples.sort_by(f64::total_cmp);
        let mid = samples.len() / 2;
        let objective = if samples.len() % 2 == 1 {
            samples[mid]
        } else {
            0.5 * (samples[mid - 1] + samples[mid])
        };
        Measurement::ok(objective).with_timing(Stage::Launch, samples.iter().sum())
    }
}

impl Executor for SimCostModel {
    fn concurrency(&self) -> Concurrency {
        Concurrency::Reentrant
    }

    fn execute(&self, job: &Job<'_>) -> Measurement {
        let m = self.sim_cost(job.config);
        if job.handle.is_none() && m.status != Status::InvalidConfig {
            m.with_timing(Stage::Compile, self.compile_seconds)
        } else {
            m
        }
    }

    fn describe(&self) -> BackendInfo {
        BackendInfo::Sim {
            seed: self.seed,
            noise_sigma: self.noise_sigma,
            failure: self.failure.as_ref().map(|f| f.text().to_string()),
            repetitions: self.repetitions,
        }
    }

    fn simulated_time(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::TunableParam;

    fn grid_space(sizes: &[usize]) -> ConfigSpace {
        ConfigSpace::new(
            sizes
                .iter()
                .enumerate()
                .map(|(k, &n)| TunableParam::new(&format!("p{k}"), 0..n as i64, 0i64).unwrap())
                .collect(),
        )
        .unwrap()
    }

    fn exhaustive_min(model: &SimCostModel) -> f64 {
        model
            .space()
            .enumerate()
            .filter_map(|c| model.sim_cost(&c).objective)
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn nearest_grid_point_is_the_minimum_in_one_dimension() {
        for seed in 0..20 {
            let space = grid_space(&[11]);
            let model = SimCostModel::new(&space, seed);
            let mu = model.center()[0];
            let nearest = (mu * 10.0).round() as i64;
            let c: Configuration = [("p0", nearest)].into_iter().collect();
            assert_eq!(model.sim_cost(&c).objective.unwrap(), exhaustive_min(&model));
        }
    }

    #[test]
    fn curvature_is_positive_definite() {
        for seed in 0..10 {
            let model = SimCostModel::new(&grid_space(&[3, 4, 5, 6]), seed);
            let a = model.curvature();
            assert_eq!(a, &a.transpose());
            let eig = SymmetricEigen::new(a.clone()).eigenvalues;
            assert!(eig.min() > 0.1 - 1e-9, "seed {seed}: {}", eig.min());
            assert!(model.center().iter().all(|m| (0.0..1.0).contains(m)));
            // at least one coupling term
            assert!((0..4).any(|i| (0..4).any(|j| i != j && a[(i, j)] != 0.0)));
        }
    }

    #[test]
    fn noiseless_measurements_repeat_exactly() {
        let space = grid_space(&[4, 4]);
        let model = SimCostModel::new(&space, 7);
        let c = space.config_at(&[1, 3]);
        let a = model.sim_cost(&c);
        assert_eq!(a, model.sim_cost(&c));
        assert_eq!(a.objective.unwrap(), model.noiseless_cost(&[1, 3]));
        assert!(a.objective.unwrap() >= 1.0);
    }

    #[test]
    fn noisy_measurements_are_reproducible() {
        let space = grid_space(&[4, 4]);
        let model = SimCostModel::new(&space, 7).with_noise(0.05);
        let c = space.config_at(&[2, 2]);
        let a = model.sim_cost(&c).objective.unwrap();
        assert_eq!(Some(a), model.sim_cost(&c).objective);
        let clean = model.noiseless_cost(&[2, 2]);
        assert_ne!(a, clean);
        assert!((a / clean - 1.0).abs() < 0.25);
    }

    #[test]
    fn failure_rule_marks_invalid() {
        let space = ConfigSpace::new(vec![
            TunableParam::new("block_x", [256i64, 512, 1024], 256i64).unwrap(),
            TunableParam::new("block_y", [1i64, 2, 4], 1i64).unwrap(),
        ])
        .unwrap();
        let model = SimCostModel::new(&space, 1)
            .with_failure("block_x * block_y > 1024")
            .unwrap();
        let big = space.config_at(&[2, 1]);
        assert_eq!(model.sim_cost(&big).status, Status::InvalidConfig);
        assert_eq!(model.sim_cost(&space.config_at(&[1, 1])).status, Status::Ok);
        assert!(SimCostModel::new(&space, 1).with_failure("block_q > 1").is_err());
    }

    fn coordinate_descent(model: &SimCostModel, start: Vec<usize>) -> f64 {
        let space = model.space();
        let mut point = start;
        let mut best = model.noiseless_cost(&point);
        loop {
            let mut improved = false;
            for k in 0..point.len() {
                for v in 0..space.params()[k].values().len() {
                    let mut candidate = point.clone();
                    candidate[k] = v;
                    let c = model.noiseless_cost(&candidate);
                    if c < best {
                        best = c;
                        point = candidate;
                        improved = true;
                    }
                }
            }
            if !improved {
                return best;
            }
        }
    }

    #[test]
    fn landscapes_are_not_separable() {
        let space = grid_space(&[6, 6, 6, 6]);
        let stuck = (0..500u64).find(|&seed| {
            let model = SimCostModel::new(&space, seed);
            let local = coordinate_descent(&model, space.default_indices());
            local > exhaustive_min(&model) + 1e-12
        });
        assert!(stuck.is_some(), "coordinate descent always found the optimum");
    }

    #[test]
    fn compile_time_only_without_handle() {
        let def = crate::kerneldef::KernelBuilder::new("k", crate::kerneldef::KernelSource::inline(""))
            .tune("p0", [1i64, 2])
            .problem_size(&["arg0"])
            .build()
            .unwrap();
        let model = SimCostModel::new(def.space(), 3);
        let config = def.space().default_config().config;
        let problem = crate::kerneldef::ProblemSize::new(vec![8]).unwrap();
        let geometry = def
            .derive_geometry(&config, &problem, &Default::default())
            .unwrap();
        let device = super::super::DeviceIdent::new("sim", "Sim");
        let job = Job {
            definition: &def,
            config: &config,
            problem: &problem,
            geometry: &geometry,
            device: &device,
            args: &[],
            handle: None,
            capture_path: None,
        };
        let m = model.execute(&job);
        assert_eq!(m.stage_timings.get(&Stage::Compile), Some(&DEFAULT_COMPILE_SECONDS));
        let launch = m.stage_timings[&Stage::Launch];
        assert!((launch - 7.0 * m.objective.unwrap()).abs() < 1e-12);
    }

    #[test]
    fn rebuilt_from_description() {
        let space = grid_space(&[3, 4]);
        let model = SimCostModel::new(&space, 9).with_noise(0.1).with_failure("p0 == 2").unwrap();
        let again = SimCostModel::from_info(&space, &model.describe()).unwrap().unwrap();
        for c in space.enumerate() {
            assert_eq!(model.sim_cost(&c), again.sim_cost(&c));
        }
        let other = BackendInfo::Other { name: "x".into() };
        assert!(SimCostModel::from_info(&space, &other).unwrap().is_none());
    }
}
