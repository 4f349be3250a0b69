//! Flat `key = value` experiment configuration.
//!
//! Lines are `key = value`, `#` starts a comment, blank lines are ignored.
//! Unknown or repeated keys are errors. List values are comma separated.

use std::collections::HashMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::distributions::{DEFAULT_ALPHA, DEFAULT_TAIL_DF};
use crate::error::{McsaError, Result};
use crate::estimators::Method;
use crate::optimizers::{OptimizerKind, StepsizeSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExperimentKind {
    GaussianConvergence,
    VarianceSimulation,
    GradientVariance,
    StepsizeSweep,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::GaussianConvergence => "gaussian_convergence",
            ExperimentKind::VarianceSimulation => "variance_simulation",
            ExperimentKind::GradientVariance => "gradient_variance",
            ExperimentKind::StepsizeSweep => "stepsize_sweep",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = McsaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian_convergence" => Ok(ExperimentKind::GaussianConvergence),
            "variance_simulation" => Ok(ExperimentKind::VarianceSimulation),
            "gradient_variance" => Ok(ExperimentKind::GradientVariance),
            "stepsize_sweep" => Ok(ExperimentKind::StepsizeSweep),
            other => Err(McsaError::invalid(format!("unknown experiment `{other}`"))),
        }
    }
}

/// Fully resolved experiment settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub dim: usize,
    /// Wishart degrees of freedom of the target covariance; 0 selects the
    /// isotropic target `N(target_mean·1, target_scale²·I)`.
    pub nu: f64,
    pub target_mean: f64,
    pub target_scale: f64,
    pub methods: Vec<Method>,
    pub budgets: Vec<usize>,
    pub iterations: usize,
    pub repetitions: usize,
    pub optimizer: OptimizerKind,
    pub schedule: StepsizeSchedule,
    pub alpha: f64,
    pub tail_df: f64,
    pub seed: u64,
    pub output: Option<PathBuf>,
    /// `None` selects `max(1, iterations / 200)`.
    pub record_stride: Option<usize>,
    pub num_chains: usize,
    pub duplicate_replica_seeds: bool,
    pub stepsizes: Vec<f64>,
    pub optimizers: Vec<OptimizerKind>,
    pub mean_shifts: Vec<f64>,
    pub num_samples: usize,
    pub proposal_variance: f64,
    pub wall_clock: bool,
}

const KEYS: &[&str] = &[
    "experiment",
    "dim",
    "nu",
    "target_mean",
    "target_scale",
    "methods",
    "budgets",
    "iterations",
    "repetitions",
    "optimizer",
    "schedule",
    "stepsize",
    "alpha",
    "tail_df",
    "seed",
    "output",
    "record_stride",
    "num_chains",
    "duplicate_replica_seeds",
    "stepsizes",
    "optimizers",
    "mean_shifts",
    "num_samples",
    "proposal_variance",
    "wall_clock",
];

/// Default stepsize grid of the sweep: half-decades from 1e-4 to 1.
pub fn default_stepsize_grid() -> Vec<f64> {
    (0..=8).map(|k| 10f64.powf(-4.0 + 0.5 * k as f64)).collect()
}

struct Entries {
    values: HashMap<String, (usize, String)>,
}

impl Entries {
    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.values.remove(key)
    }

    fn parsed<T: FromStr>(&mut self, key: &str) -> Result<Option<(usize, T)>>
    where
        T::Err: fmt::Display,
    {
        match self.take(key) {
            None => Ok(None),
            Some((line, raw)) => raw
                .parse::<T>()
                .map(|v| Some((line, v)))
                .map_err(|e| McsaError::config(line, format!("invalid value `{raw}` for `{key}`: {e}"))),
        }
    }

    fn list<T: FromStr>(&mut self, key: &str) -> Result<Option<(usize, Vec<T>)>>
    where
        T::Err: fmt::Display,
    {
        match self.take(key) {
            None => Ok(None),
            Some((line, raw)) => {
                let items = raw
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        s.parse::<T>()
                            .map_err(|e| McsaError::config(line, format!("invalid item `{s}` in `{key}`: {e}")))
                    })
                    .collect::<Result<Vec<T>>>()?;
                if items.is_empty() {
                    return Err(McsaError::config(line, format!("`{key}` must not be empty")));
                }
                Ok(Some((line, items)))
            }
        }
    }
}

fn line_of<T>(entry: &Option<(usize, T)>) -> usize {
    entry.as_ref().map_or(0, |(l, _)| *l)
}

impl ExperimentConfig {
    /// Defaults for `experiment` without any overrides.
    pub fn defaults(experiment: ExperimentKind) -> Self {
        let (dim, budgets, methods) = match experiment {
            ExperimentKind::VarianceSimulation => (
                1,
                vec![4, 8, 16, 32, 64, 128],
                vec![Method::Msc, Method::MscRb, Method::Pmcsa],
            ),
            ExperimentKind::GradientVariance => (
                20,
                vec![8, 32, 128],
                vec![Method::Msc, Method::MscRb, Method::Jsa, Method::Pmcsa],
            ),
            _ => (
                20,
                vec![10],
                vec![Method::Msc, Method::MscRb, Method::Jsa, Method::Pmcsa],
            ),
        };
        let repetitions = if experiment == ExperimentKind::VarianceSimulation {
            1
        } else {
            10
        };
        Self {
            experiment,
            dim,
            nu: 0.0,
            target_mean: 1.0,
            target_scale: 1.0,
            methods,
            budgets,
            iterations: 5000,
            repetitions,
            optimizer: OptimizerKind::adam(),
            schedule: StepsizeSchedule::Constant(0.01),
            alpha: DEFAULT_ALPHA,
            tail_df: DEFAULT_TAIL_DF,
            seed: 0,
            output: None,
            record_stride: None,
            num_chains: 512,
            duplicate_replica_seeds: false,
            stepsizes: default_stepsize_grid(),
            optimizers: vec![
                OptimizerKind::Sgd,
                OptimizerKind::momentum(),
                OptimizerKind::nesterov(),
                OptimizerKind::adam(),
            ],
            mean_shifts: vec![0.0, 2.0, 4.0],
            num_samples: 1 << 14,
            proposal_variance: 2.0,
            wall_clock: false,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut values: HashMap<String, (usize, String)> = HashMap::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw_line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| McsaError::config(line, format!("expected `key = value`, found `{content}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(McsaError::config(line, format!("unknown key `{key}`")));
            }
            if value.is_empty() {
                return Err(McsaError::config(line, format!("missing value for `{key}`")));
            }
            if let Some((first, _)) = values.get(key) {
                return Err(McsaError::config(line, format!("`{key}` already set on line {first}")));
            }
            values.insert(key.to_string(), (line, value.to_string()));
        }
        let mut e = Entries { values };

        let (exp_line, experiment) = e
            .parsed::<ExperimentKind>("experiment")?
            .ok_or_else(|| McsaError::config(0, "missing required key `experiment`"))?;
        let _ = exp_line;
        let mut cfg = Self::defaults(experiment);

        let dim = e.parsed::<usize>("dim")?;
        let nu = e.parsed::<f64>("nu")?;
        let target_mean = e.parsed::<f64>("target_mean")?;
        let target_scale = e.parsed::<f64>("target_scale")?;
        let methods = e.list::<Method>("methods")?;
        let budgets = e.list::<usize>("budgets")?;
        let iterations = e.parsed::<usize>("iterations")?;
        let repetitions = e.parsed::<usize>("repetitions")?;
        let optimizer = e.parsed::<OptimizerKind>("optimizer")?;
        let schedule = e.take("schedule");
        let stepsize = e.parsed::<f64>("stepsize")?;
        let alpha = e.parsed::<f64>("alpha")?;
        let tail_df = e.parsed::<f64>("tail_df")?;
        let seed = e.parsed::<u64>("seed")?;
        let output = e.take("output");
        let record_stride = e.parsed::<usize>("record_stride")?;
        let num_chains = e.parsed::<usize>("num_chains")?;
        let duplicate = e.parsed::<bool>("duplicate_replica_seeds")?;
        let stepsizes = e.list::<f64>("stepsizes")?;
        let optimizers = e.list::<OptimizerKind>("optimizers")?;
        let mean_shifts = e.list::<f64>("mean_shifts")?;
        let num_samples = e.parsed::<usize>("num_samples")?;
        let proposal_variance = e.parsed::<f64>("proposal_variance")?;
        let wall_clock = e.parsed::<bool>("wall_clock")?;
        debug_assert!(e.values.is_empty());

        let check = |ok: bool, line: usize, msg: String| if ok { Ok(()) } else { Err(McsaError::config(line, msg)) };

        if let Some((line, d)) = dim {
            check(d >= 1, line, "`dim` must be at least 1".into())?;
            check(
                experiment != ExperimentKind::VarianceSimulation || d == 1,
                line,
                "variance_simulation is one-dimensional; `dim` must be 1".into(),
            )?;
            cfg.dim = d;
        }
        if let Some((line, v)) = nu {
            check(
                v == 0.0 || (v.is_finite() && v >= cfg.dim as f64),
                line,
                format!("`nu` must be 0 (isotropic) or at least dim = {}", cfg.dim),
            )?;
            check(
                v == 0.0 || experiment != ExperimentKind::VarianceSimulation,
                line,
                "variance_simulation uses a fixed N(0,1) target; `nu` must be 0".into(),
            )?;
            cfg.nu = v;
        } else if cfg.nu != 0.0 && cfg.nu < cfg.dim as f64 {
            return Err(McsaError::config(0, "`nu` must be at least `dim`"));
        }
        if let Some((line, v)) = target_mean {
            check(v.is_finite(), line, "`target_mean` must be finite".into())?;
            cfg.target_mean = v;
        }
        if let Some((line, v)) = target_scale {
            check(v > 0.0 && v.is_finite(), line, "`target_scale` must be positive".into())?;
            cfg.target_scale = v;
        }
        let methods_line = line_of(&methods);
        if let Some((line, m)) = methods {
            let mut seen = Vec::new();
            for method in m {
                check(!seen.contains(&method), line, format!("method {method} listed twice"))?;
                check(
                    experiment != ExperimentKind::VarianceSimulation || method.is_markovian(),
                    line,
                    "variance_simulation compares Markov kernels only; ELBO is not allowed".into(),
                )?;
                seen.push(method);
            }
            cfg.methods = seen;
        }
        let budgets_line = line_of(&budgets);
        if let Some((_, b)) = budgets {
            cfg.budgets = b;
        }
        for &n in &cfg.budgets {
            for &m in &cfg.methods {
                check(
                    n >= m.min_budget(),
                    budgets_line.max(methods_line),
                    format!("budget {n} is below the minimum {} of {m}", m.min_budget()),
                )?;
            }
        }
        if let Some((_, t)) = iterations {
            cfg.iterations = t;
        }
        if let Some((line, r)) = repetitions {
            check(r >= 1, line, "`repetitions` must be at least 1".into())?;
            cfg.repetitions = r;
        }
        if let Some((_, o)) = optimizer {
            cfg.optimizer = o;
        }
        if let Some((line, raw)) = schedule {
            cfg.schedule = match raw.as_str() {
                "constant" => StepsizeSchedule::Constant(cfg.schedule.base()),
                "invsqrt" => StepsizeSchedule::InvSqrt(cfg.schedule.base()),
                "inv" => StepsizeSchedule::Inv(cfg.schedule.base()),
                other => return Err(McsaError::config(line, format!("unknown schedule `{other}`"))),
            };
        }
        if let Some((line, g)) = stepsize {
            check(g > 0.0 && g.is_finite(), line, "`stepsize` must be positive".into())?;
            cfg.schedule = cfg.schedule.with_base(g);
        }
        if let Some((line, a)) = alpha {
            check(a > 0.0 && a < 1.0, line, "`alpha` must lie in (0, 1)".into())?;
            cfg.alpha = a;
        }
        if let Some((line, df)) = tail_df {
            check(df > 0.0 && df.is_finite(), line, "`tail_df` must be positive".into())?;
            cfg.tail_df = df;
        }
        if let Some((_, s)) = seed {
            cfg.seed = s;
        }
        if let Some((_, path)) = output {
            cfg.output = Some(PathBuf::from(path));
        }
        if let Some((line, r)) = record_stride {
            check(r >= 1, line, "`record_stride` must be at least 1".into())?;
            cfg.record_stride = Some(r);
        }
        if let Some((line, c)) = num_chains {
            check(c >= 2, line, "`num_chains` must be at least 2".into())?;
            cfg.num_chains = c;
        }
        if let Some((_, d)) = duplicate {
            cfg.duplicate_replica_seeds = d;
        }
        if let Some((line, s)) = stepsizes {
            check(
                s.iter().all(|g| *g > 0.0 && g.is_finite()),
                line,
                "`stepsizes` must be positive".into(),
            )?;
            cfg.stepsizes = s;
        }
        if let Some((_, o)) = optimizers {
            cfg.optimizers = o;
        }
        if let Some((line, m)) = mean_shifts {
            check(
                m.iter().all(|v| v.is_finite()),
                line,
                "`mean_shifts` must be finite".into(),
            )?;
            cfg.mean_shifts = m;
        }
        if let Some((line, n)) = num_samples {
            check(n >= 2, line, "`num_samples` must be at least 2".into())?;
            cfg.num_samples = n;
        }
        if let Some((line, v)) = proposal_variance {
            check(
                v > 0.0 && v.is_finite(),
                line,
                "`proposal_variance` must be positive".into(),
            )?;
            cfg.proposal_variance = v;
        }
        if let Some((_, w)) = wall_clock {
            cfg.wall_clock = w;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Cross-field checks shared by parsed and programmatic configs.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(McsaError::config(0, msg.to_string()));
        if self.dim == 0 {
            return fail("`dim` must be at least 1");
        }
        if self.budgets.is_empty() {
            return fail("`budgets` must not be empty");
        }
        if self.methods.is_empty() {
            return fail("`methods` must not be empty");
        }
        if self.repetitions == 0 {
            return fail("`repetitions` must be at least 1");
        }
        if self.nu != 0.0 && (self.nu.is_nan() || self.nu < self.dim as f64) {
            return fail("`nu` must be 0 or at least `dim`");
        }
        if self.experiment == ExperimentKind::VarianceSimulation && self.dim != 1 {
            return fail("variance_simulation is one-dimensional");
        }
        if self.experiment == ExperimentKind::StepsizeSweep && (self.stepsizes.is_empty() || self.optimizers.is_empty())
        {
            return fail("stepsize_sweep needs nonempty `stepsizes` and `optimizers`");
        }
        if self.num_chains < 2 {
            return fail("`num_chains` must be at least 2");
        }
        for &n in &self.budgets {
            if let Some(m) = self.methods.iter().find(|m| n < m.min_budget()) {
                return fail(&format!("budget {n} is below the minimum of {m}"));
            }
        }
        self.schedule
            .validate()
            .map_err(|e| McsaError::config(0, e.to_string()))
    }

    /// Effective recording stride.
    pub fn stride(&self) -> usize {
        self.record_stride.unwrap_or((self.iterations / 200).max(1))
    }
}
