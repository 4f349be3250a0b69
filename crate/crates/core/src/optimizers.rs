//! First-order update rules for the variational parameters.

use std::fmt;
use std::str::FromStr;

use crate::distributions::VariationalParams;
use crate::error::{check_dim, McsaError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepsizeSchedule {
    Constant(f64),
    /// `γ / √t`
    InvSqrt(f64),
    /// `γ / t`
    Inv(f64),
}

impl StepsizeSchedule {
    pub fn base(&self) -> f64 {
        match *self {
            StepsizeSchedule::Constant(g) | StepsizeSchedule::InvSqrt(g) | StepsizeSchedule::Inv(g) => g,
        }
    }

    /// Stepsize at 1-based iteration `t`.
    pub fn at(&self, t: u64) -> f64 {
        let t = t.max(1) as f64;
        match *self {
            StepsizeSchedule::Constant(g) => g,
            StepsizeSchedule::InvSqrt(g) => g / t.sqrt(),
            StepsizeSchedule::Inv(g) => g / t,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.base();
        if g > 0.0 && g.is_finite() {
            Ok(())
        } else {
            Err(McsaError::invalid(format!("stepsize must be positive, got {g}")))
        }
    }

    pub fn with_base(&self, g: f64) -> Self {
        match self {
            StepsizeSchedule::Constant(_) => StepsizeSchedule::Constant(g),
            StepsizeSchedule::InvSqrt(_) => StepsizeSchedule::InvSqrt(g),
            StepsizeSchedule::Inv(_) => StepsizeSchedule::Inv(g),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            StepsizeSchedule::Constant(_) => "constant",
            StepsizeSchedule::InvSqrt(_) => "invsqrt",
            StepsizeSchedule::Inv(_) => "inv",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    /// Polyak heavy ball.
    Momentum {
        beta: f64,
    },
    Nesterov {
        beta: f64,
    },
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

impl OptimizerKind {
    pub const DEFAULT_BETA: f64 = 0.9;

    pub fn momentum() -> Self {
        OptimizerKind::Momentum {
            beta: Self::DEFAULT_BETA,
        }
    }

    pub fn nesterov() -> Self {
        OptimizerKind::Nesterov {
            beta: Self::DEFAULT_BETA,
        }
    }

    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Momentum { .. } => "momentum",
            OptimizerKind::Nesterov { .. } => "nesterov",
            OptimizerKind::Adam { .. } => "adam",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerKind {
    type Err = McsaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "momentum" => Ok(OptimizerKind::momentum()),
            "nesterov" => Ok(OptimizerKind::nesterov()),
            "adam" => Ok(OptimizerKind::adam()),
            other => Err(McsaError::invalid(format!("unknown optimizer `{other}`"))),
        }
    }
}

/// Optimizer with its moment buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    kind: OptimizerKind,
    first: Vec<f64>,
    second: Vec<f64>,
    step_count: u64,
}

impl OptimizerState {
    /// Fresh state for a parameter vector of length `len` (`2d`).
    pub fn new(kind: OptimizerKind, len: usize) -> Self {
        let second = match kind {
            OptimizerKind::Adam { .. } => vec![0.0; len],
            _ => Vec::new(),
        };
        let first = match kind {
            OptimizerKind::Sgd => Vec::new(),
            _ => vec![0.0; len],
        };
        Self {
            kind,
            first,
            second,
            step_count: 0,
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Applies one descent step along `grad` in place.
    pub fn step(&mut self, values: &mut [f64], grad: &[f64], schedule: &StepsizeSchedule) -> Result<()> {
        check_dim(values.len(), grad.len())?;
        if !self.first.is_empty() {
            check_dim(self.first.len(), grad.len())?;
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(McsaError::NonFiniteGradient);
        }
        let t = self.step_count + 1;
        let lr = schedule.at(t);
        match self.kind {
            OptimizerKind::Sgd => {
                for (v, g) in values.iter_mut().zip(grad) {
                    *v -= lr * g;
                }
            }
            OptimizerKind::Momentum { beta } => {
                for ((v, m), g) in values.iter_mut().zip(&mut self.first).zip(grad) {
                    *m = beta * *m + g;
                    *v -= lr * *m;
                }
            }
            OptimizerKind::Nesterov { beta } => {
                for ((v, m), g) in values.iter_mut().zip(&mut self.first).zip(grad) {
                    *m = beta * *m + g;
                    *v -= lr * (g + beta * *m);
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powf(t as f64);
                let c2 = 1.0 - beta2.powf(t as f64);
                for (((v, m), s), g) in values.iter_mut().zip(&mut self.first).zip(&mut self.second).zip(grad) {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *s = beta2 * *s + (1.0 - beta2) * g * g;
                    *v -= lr * (*m / c1) / ((*s / c2).sqrt() + eps);
                }
            }
        }
        self.step_count = t;
        Ok(())
    }

    /// Updated copy of `params`. Non-finite results are reported as errors.
    pub fn update(
        &mut self,
        params: &VariationalParams,
        grad: &[f64],
        schedule: &StepsizeSchedule,
    ) -> Result<VariationalParams> {
        let mut values = params.as_flat().to_vec();
        self.step(&mut values, grad, schedule)?;
        VariationalParams::from_flat(values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic_run(kind: OptimizerKind, lr: f64, steps: usize) -> Vec<f64> {
        let mut opt = OptimizerState::new(kind, 2);
        let mut x = vec![1.0, 1.0];
        let schedule = StepsizeSchedule::Constant(lr);
        for _ in 0..steps {
            let g = x.clone();
            opt.step(&mut x, &g, &schedule).unwrap();
        }
        x
    }

    #[test]
    fn sgd_constant_step() {
        let p = VariationalParams::new(vec![1.0, 2.0], vec![0.5, -0.5]).unwrap();
        let mut opt = OptimizerState::new(OptimizerKind::Sgd, 4);
        let out = opt.update(&p, &[1.0; 4], &StepsizeSchedule::Constant(0.1)).unwrap();
        let expected = [0.9, 1.9, 0.4, -0.6];
        for (a, b) in out.as_flat().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn adam_first_step_is_scale_invariant() {
        let gamma = 0.01;
        let grads = [1e-3, -2e-3, 0.5, -7.0, 1e4];
        let mut opt = OptimizerState::new(OptimizerKind::adam(), grads.len());
        let mut x = vec![0.0; grads.len()];
        opt.step(&mut x, &grads, &StepsizeSchedule::Constant(gamma)).unwrap();
        for (v, g) in x.iter().zip(grads) {
            assert!(v.abs() >= 0.99 * gamma && v.abs() <= gamma, "{v}");
            assert_eq!(v.signum(), -g.signum());
        }
    }

    #[test]
    fn adam_solves_quadratic() {
        // simulated: ‖λ‖ falls below 1e-3 well before 1000 steps
        let x = quadratic_run(OptimizerKind::adam(), 0.1, 1000);
        let norm = (x[0] * x[0] + x[1] * x[1]).sqrt();
        assert!(norm < 1e-3, "{norm}");
    }

    #[test]
    fn every_variant_converges_on_a_quadratic() {
        for kind in [
            OptimizerKind::Sgd,
            OptimizerKind::momentum(),
            OptimizerKind::nesterov(),
            OptimizerKind::adam(),
        ] {
            let x = quadratic_run(kind, 0.1, 10_000);
            let f = 0.5 * (x[0] * x[0] + x[1] * x[1]);
            assert!(f < 1e-6, "{kind}: {f}");
        }
    }

    #[test]
    fn schedules() {
        assert_eq!(StepsizeSchedule::InvSqrt(0.4).at(4), 0.2);
        assert_eq!(StepsizeSchedule::Inv(0.4).at(4), 0.1);
        assert_eq!(StepsizeSchedule::Constant(0.4).at(4), 0.4);
        assert!(StepsizeSchedule::Constant(0.0).validate().is_err());
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut opt = OptimizerState::new(OptimizerKind::Sgd, 2);
        let mut x = vec![0.0, 0.0];
        assert!(matches!(
            opt.step(&mut x, &[f64::NAN, 0.0], &StepsizeSchedule::Constant(0.1)),
            Err(McsaError::NonFiniteGradient)
        ));
        assert_eq!(opt.step_count(), 0);
        assert!(opt.step(&mut x, &[0.0], &StepsizeSchedule::Constant(0.1)).is_err());
    }

    #[test]
    fn updates_are_deterministic() {
        for kind in [OptimizerKind::momentum(), OptimizerKind::adam()] {
            let a = quadratic_run(kind, 0.05, 37);
            let b = quadratic_run(kind, 0.05, 37);
            assert_eq!(a[0].to_bits(), b[0].to_bits());
            assert_eq!(a[1].to_bits(), b[1].to_bits());
        }
    }
}
