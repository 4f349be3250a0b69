//! Markov chain score ascent gradient estimators.
//!
//! Every estimator returns a stochastic estimate of
//! `∇_λ KL(π ‖ q(·; λ)) = −E_π[s(λ; z)]` and advances its chain state in
//! place. The budget `N` is the number of target evaluations per step:
//! MSC and MSC-RB draw `N − 1` proposals next to the retained state, JSA makes
//! `N` sequential IMH moves, pMCSA moves each of its `N` chains once.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::distributions::{Proposal, TargetModel, VariationalParams};
use crate::error::{check_dim, McsaError, Result};
use crate::kernels::{cis_step, effective_sample_size, imh_step_with_weight, KernelContext};
use crate::rng::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Msc,
    MscRb,
    Jsa,
    Pmcsa,
    Elbo,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Msc, Method::MscRb, Method::Jsa, Method::Pmcsa, Method::Elbo];

    pub fn name(self) -> &'static str {
        match self {
            Method::Msc => "MSC",
            Method::MscRb => "MSCRB",
            Method::Jsa => "JSA",
            Method::Pmcsa => "PMCSA",
            Method::Elbo => "ELBO",
        }
    }

    /// Smallest admissible budget.
    pub fn min_budget(self) -> usize {
        match self {
            Method::Msc | Method::MscRb => 2,
            _ => 1,
        }
    }

    pub fn is_markovian(self) -> bool {
        self != Method::Elbo
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = McsaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().replace(['-', '_'], "").as_str() {
            "MSC" => Ok(Method::Msc),
            "MSCRB" => Ok(Method::MscRb),
            "JSA" => Ok(Method::Jsa),
            "PMCSA" | "PIMH" => Ok(Method::Pmcsa),
            "ELBO" => Ok(Method::Elbo),
            other => Err(McsaError::invalid(format!("unknown method `{other}`"))),
        }
    }
}

/// Markov state `η` carried between optimizer steps.
#[derive(Debug, Clone, PartialEq)]
pub enum ChainState {
    Msc {
        z: Vec<f64>,
    },
    MscRb {
        z: Vec<f64>,
    },
    Jsa {
        z: Vec<f64>,
    },
    /// One state per chain; the count is the budget and never changes.
    Pmcsa {
        chains: Vec<Vec<f64>>,
    },
    /// The ELBO baseline carries no chain.
    Elbo,
}

impl ChainState {
    pub fn method(&self) -> Method {
        match self {
            ChainState::Msc { .. } => Method::Msc,
            ChainState::MscRb { .. } => Method::MscRb,
            ChainState::Jsa { .. } => Method::Jsa,
            ChainState::Pmcsa { .. } => Method::Pmcsa,
            ChainState::Elbo => Method::Elbo,
        }
    }

    /// Initial state drawn from `proposal`: one point, or `n` independent
    /// points for pMCSA.
    pub fn init<P, R>(method: Method, proposal: &P, n: usize, rng: &mut R) -> Result<Self>
    where
        P: Proposal + ?Sized,
        R: Rng + ?Sized,
    {
        let states = match method {
            Method::Pmcsa => (0..n).map(|_| proposal.sample(rng)).collect(),
            Method::Elbo => Vec::new(),
            _ => vec![proposal.sample(rng)],
        };
        Self::from_states(method, states)
    }

    /// State from explicit points: exactly one for single-chain methods.
    pub fn from_states(method: Method, mut states: Vec<Vec<f64>>) -> Result<Self> {
        let single = |states: &mut Vec<Vec<f64>>| {
            if states.len() == 1 {
                Ok(states.pop().expect("length checked"))
            } else {
                Err(McsaError::invalid(format!(
                    "{method} keeps a single chain state, got {}",
                    states.len()
                )))
            }
        };
        Ok(match method {
            Method::Msc => ChainState::Msc {
                z: single(&mut states)?,
            },
            Method::MscRb => ChainState::MscRb {
                z: single(&mut states)?,
            },
            Method::Jsa => ChainState::Jsa {
                z: single(&mut states)?,
            },
            Method::Pmcsa => {
                if states.is_empty() {
                    return Err(McsaError::invalid("pMCSA needs at least one chain"));
                }
                ChainState::Pmcsa { chains: states }
            }
            Method::Elbo => ChainState::Elbo,
        })
    }

    pub fn states(&self) -> Vec<&[f64]> {
        match self {
            ChainState::Msc { z } | ChainState::MscRb { z } | ChainState::Jsa { z } => vec![z.as_slice()],
            ChainState::Pmcsa { chains } => chains.iter().map(Vec::as_slice).collect(),
            ChainState::Elbo => Vec::new(),
        }
    }
}

/// Stochastic gradient of the objective with respect to `λ`, plus chain
/// statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    /// Laid out as `(∂/∂mean, ∂/∂log_scale)`.
    pub grad: Vec<f64>,
    /// Transitions that moved the chain (IMH acceptances, CIS picks of a fresh
    /// proposal).
    pub accepted: usize,
    pub transitions: usize,
    /// Effective sample size of the CIS weights.
    pub ess: Option<f64>,
}

impl GradientEstimate {
    pub fn acceptance_rate(&self) -> Option<f64> {
        (self.transitions > 0).then(|| self.accepted as f64 / self.transitions as f64)
    }

    fn checked(self) -> Result<Self> {
        if self.grad.iter().all(|g| g.is_finite()) {
            Ok(self)
        } else {
            Err(McsaError::NonFiniteGradient)
        }
    }
}

/// Kernel context plus the variational parameters whose score is averaged.
pub struct EstimatorContext<'a, T: ?Sized, P: ?Sized> {
    pub kernel: KernelContext<'a, T, P>,
    pub params: &'a VariationalParams,
}

impl<'a, T, P> EstimatorContext<'a, T, P>
where
    T: TargetModel + ?Sized,
    P: Proposal + ?Sized,
{
    pub fn new(target: &'a T, proposal: &'a P, params: &'a VariationalParams) -> Result<Self> {
        let kernel = KernelContext::new(target, proposal)?;
        check_dim(kernel.dim(), params.dim())?;
        Ok(Self { kernel, params })
    }

    fn grad_len(&self) -> usize {
        2 * self.params.dim()
    }
}

fn check_budget(method: Method, n: usize) -> Result<()> {
    if n < method.min_budget() {
        return Err(McsaError::invalid(format!(
            "{method} needs a budget of at least {}, got {n}",
            method.min_budget()
        )));
    }
    Ok(())
}

/// Markovian score climbing: one CIS move with `n − 1` proposals, gradient
/// `−s(λ; z_t)`.
pub fn msc_step<T, P, R>(
    ctx: &EstimatorContext<'_, T, P>,
    z: &mut Vec<f64>,
    n: usize,
    rng: &mut R,
) -> Result<GradientEstimate>
where
    T: TargetModel + ?Sized,
    P: Proposal + ?Sized,
    R: Rng + ?Sized,
{
    check_budget(Method::Msc, n)?;
    let out = cis_step(&ctx.kernel, z, n - 1, rng)?;
    let mut grad = vec![0.0; ctx.grad_len()];
    ctx.params.add_scaled_score(&out.next_state, -1.0, &mut grad);
    let ess = out.effective_sample_size();
    let moved = out.selected_index != 0;
    *z = out.next_state;
    GradientEstimate {
        grad,
        accepted: moved as usize,
        transitions: 1,
        ess: Some(ess),
    }
    .checked()
}

/// Rao-Blackwellized MSC: the CIS weights form a self-normalized average of
/// `−s` over every candidate; the chain moves by the same CIS resampling.
pub fn msc_rb_step<T, P, R>(
    ctx: &EstimatorContext<'_, T, P>,
    z: &mut Vec<f64>,
    n: usize,
    rng: &mut R,
) -> Result<GradientEstimate>
where
    T: TargetModel + ?Sized,
    P: Proposal + ?Sized,
    R: Rng + ?Sized,
{
    check_budget(Method::MscRb, n)?;
    let out = cis_step(&ctx.kernel, z, n - 1, rng)?;
    let weights = out.normalized_weights();
    let mut grad = vec![0.0; ctx.grad_len()];
    for (candidate, &w) in out.candidates.iter().zip(&weights) {
        if w > 0.0 {
            ctx.params.add_scaled_score(candidate, -w, &mut grad);
        }
    }
    let moved = out.selected_index != 0;
    *z = out.next_state;
    GradientEstimate {
        grad,
        accepted: moved as usize,
        transitions: 1,
        ess: Some(effective_sample_size(&weights)),
    }
    .checked()
}

/// Joint stochastic approximation: `n` sequential IMH moves, gradient is
/// minus the mean score of the visited states.
pub fn jsa_step<T, P, R>(
    ctx: &EstimatorContext<'_, T, P>,
    z: &mut Vec<f64>,
    n: usize,
    rng: &mut R,
) -> Result<GradientEstimate>
where
    T: TargetModel + ?Sized,
    P: Proposal + ?Sized,
    R: Rng + ?Sized,
{
    check_budget(Method::Jsa, n)?;
    check_dim(ctx.params.dim(), z.len())?;
    let mut grad = vec![0.0; ctx.grad_len()];
    let mut log_weight = ctx.kernel.log_weight(z);
    let mut accepted = 0;
    let scale = -1.0 / n as f64;
    for _ in 0..n {
        let out = imh_step_with_weight(&ctx.kernel, z, log_weight, rng);
        if out.accepted {
            accepted += 1;
            log_weight = out.log_weight_prop;
            *z = out.next_state;
        }
        ctx.params.add_scaled_score(z, scale, &mut grad);
    }
    GradientEstimate {
        grad,
        accepted,
        transitions: n,
        ess: None,
    }
    .checked()
}

/// Parallel MCSA: one IMH move per chain, gradient is minus the mean score
/// over the updated chains.
///
/// Each chain draws from its own stream keyed by one word of `rng` and the
/// chain index, so chains could be moved in any order with identical results.
pub fn pmcsa_step<T, P, R>(
    ctx: &EstimatorContext<'_, T, P>,
    chains: &mut [Vec<f64>],
    rng: &mut R,
) -> Result<GradientEstimate>
where
    T: TargetModel + ?Sized,
    P: Proposal + ?Sized,
    R: Rng + ?Sized,
{
    let n = chains.len();
    check_budget(Method::Pmcsa, n)?;
    let base = rng.next_u64();
    let mut grad = vec![0.0; ctx.grad_len()];
    let mut accepted = 0;
    let scale = -1.0 / n as f64;
    for (i, z) in chains.iter_mut().enumerate() {
        check_dim(ctx.params.dim(), z.len())?;
        let mut chain_rng = stream_rng(base, &[i as u64]);
        let out = imh_step_with_weight(&ctx.kernel, z, ctx.kernel.log_weight(z), &mut chain_rng);
        if out.accepted {
            accepted += 1;
            *z = out.next_state;
        }
        ctx.params.add_scaled_score(z, scale, &mut grad);
    }
    GradientEstimate {
        grad,
        accepted,
        transitions: n,
        ess: None,
    }
    .checked()
}

/// Path-derivative ("sticking the landing") gradient of the negative ELBO
/// averaged over `n` reparameterized draws.
pub fn elbo_step<T, P, R>(ctx: &EstimatorContext<'_, T, P>, n: usize, rng: &mut R) -> Result<GradientEstimate>
where
    T: TargetModel + ?Sized,
    P: Proposal + ?Sized,
    R: Rng + ?Sized,
{
    check_budget(Method::Elbo, n)?;
    let params = ctx.params;
    let d = params.dim();
    let mut grad = vec![0.0; 2 * d];
    let scale = 1.0 / n as f64;
    for _ in 0..n {
        let eps: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let sigma: Vec<f64> = (0..d).map(|i| params.scale(i)).collect();
        let z: Vec<f64> = (0..d).map(|i| params.mean()[i] + sigma[i] * eps[i]).collect();
        let target_grad = ctx
            .kernel
            .target
            .grad_log_density(&z)
            .ok_or(McsaError::MissingGradient)?;
        check_dim(d, target_grad.len())?;
        for i in 0..d {
            // ∇_z [log π(z) − log q(z; λ)] with λ held fixed inside q
            let dz = target_grad[i] + eps[i] / sigma[i];
            grad[i] -= scale * dz;
            grad[d + i] -= scale * dz * sigma[i] * eps[i];
        }
    }
    GradientEstimate {
        grad,
        accepted: 0,
        transitions: 0,
        ess: None,
    }
    .checked()
}

/// Dispatches on the state's method. pMCSA requires `n` to equal its chain
/// count.
pub fn step<T, P, R>(
    ctx: &EstimatorContext<'_, T, P>,
    state: &mut ChainState,
    n: usize,
    rng: &mut R,
) -> Result<GradientEstimate>
where
    T: TargetModel + ?Sized,
    P: Proposal + ?Sized,
    R: Rng + ?Sized,
{
    match state {
        ChainState::Msc { z } => msc_step(ctx, z, n, rng),
        ChainState::MscRb { z } => msc_rb_step(ctx, z, n, rng),
        ChainState::Jsa { z } => jsa_step(ctx, z, n, rng),
        ChainState::Pmcsa { chains } => {
            if chains.len() != n {
                return Err(McsaError::invalid(format!(
                    "pMCSA holds {} chains but the budget is {n}",
                    chains.len()
                )));
            }
            pmcsa_step(ctx, chains, rng)
        }
        ChainState::Elbo => elbo_step(ctx, n, rng),
    }
}
