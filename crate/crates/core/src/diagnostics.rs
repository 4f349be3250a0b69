//! Gradient-variance measurement and the closed-form variance bounds of the
//! four estimators.
//!
//! The scalar "variance" of a vector estimator is the trace of its
//! covariance, `E‖g − E g‖²`.

use rayon::prelude::*;

use crate::distributions::{kl_gaussian, w_star_gaussian, Proposal, TargetModel, VariationalParams};
use crate::error::{McsaError, Result};
use crate::estimators::{step, ChainState, EstimatorContext, Method};
use crate::kernels::mscrb_gamma;
use crate::rng::{stream_rng, StreamRng};

/// Neumaier-compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Mean vector and trace of the unbiased sample covariance.
pub fn trace_covariance(samples: &[Vec<f64>]) -> Result<(Vec<f64>, f64)> {
    if samples.len() < 2 {
        return Err(McsaError::invalid("variance needs at least two samples"));
    }
    let k = samples[0].len();
    let n = samples.len() as f64;
    let mean: Vec<f64> = (0..k)
        .map(|j| compensated_sum(samples.iter().map(|s| s[j])) / n)
        .collect();
    let ss = compensated_sum(
        samples
            .iter()
            .flat_map(|s| s.iter().zip(&mean).map(|(v, m)| (v - m) * (v - m))),
    );
    Ok((mean, ss / (n - 1.0)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceReport {
    pub method: Method,
    pub n: usize,
    pub num_samples: usize,
    /// Trace of the empirical covariance.
    pub variance: f64,
    /// Empirical `E‖g‖²`.
    pub second_moment: f64,
    pub mean_grad: Vec<f64>,
}

/// Variance of a single estimator step from a fixed previous state.
///
/// MSC, MSC-RB and JSA restart every replicate from `fixed_prev`. pMCSA draws
/// a fresh set of `n` chains from the target per replicate, which requires a
/// directly sampleable target.
pub fn conditional_variance<T, P>(
    method: Method,
    ctx: &EstimatorContext<'_, T, P>,
    fixed_prev: &[f64],
    n: usize,
    num_samples: usize,
    seed: u64,
) -> Result<VarianceReport>
where
    T: TargetModel + ?Sized,
    P: Proposal + ?Sized,
{
    if num_samples < 2 {
        return Err(McsaError::invalid("num_samples must be at least 2"));
    }
    let exact = match method {
        Method::Pmcsa => Some(ctx.kernel.target.exact().ok_or(McsaError::NotSampleable)?),
        _ => None,
    };
    let grads: Vec<Vec<f64>> = (0..num_samples)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(seed, &[r as u64]);
            let mut state = match exact {
                Some(pi) => ChainState::from_states(method, (0..n).map(|_| pi.sample(&mut rng)).collect())?,
                None => ChainState::from_states(method, vec![fixed_prev.to_vec()])?,
            };
            step(ctx, &mut state, n, &mut rng).map(|g| g.grad)
        })
        .collect::<Result<_>>()?;
    let (mean_grad, variance) = trace_covariance(&grads)?;
    let second_moment =
        compensated_sum(grads.iter().map(|g| g.iter().map(|v| v * v).sum::<f64>())) / num_samples as f64;
    Ok(VarianceReport {
        method,
        n,
        num_samples,
        variance,
        second_moment,
        mean_grad,
    })
}

/// Settings of [`replicated_gradient_variance`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Replication {
    pub num_chains: usize,
    pub seed: u64,
    /// When false every replicate reuses stream 0; only useful as a degenerate
    /// check.
    pub distinct_streams: bool,
}

impl Replication {
    pub fn new(num_chains: usize, seed: u64) -> Self {
        Self {
            num_chains,
            seed,
            distinct_streams: true,
        }
    }
}

/// Replays a parameter trace with `num_chains` independent chains and reports
/// the trace-variance of their gradients at each recorded index.
///
/// Chains start from independent proposal draws at `trace[0]` and evolve with
/// kernels built from `trace[t]` at step `t`, exactly as the main run did.
/// `record` holds increasing indices into `trace`.
pub fn replicated_gradient_variance<T, P, B>(
    method: Method,
    target: &T,
    trace: &[VariationalParams],
    build_proposal: B,
    n: usize,
    record: &[usize],
    replication: Replication,
) -> Result<Vec<(usize, f64)>>
where
    T: TargetModel + ?Sized,
    P: Proposal,
    B: Fn(&VariationalParams) -> Result<P>,
{
    if trace.is_empty() {
        return Err(McsaError::invalid("parameter trace is empty"));
    }
    if replication.num_chains < 2 {
        return Err(McsaError::invalid("need at least two replicate chains"));
    }
    if record.windows(2).any(|w| w[1] <= w[0]) || record.last().is_some_and(|&r| r >= trace.len()) {
        return Err(McsaError::invalid(
            "record indices must increase and lie inside the trace",
        ));
    }
    let Some(&last) = record.last() else {
        return Ok(Vec::new());
    };

    let first = build_proposal(&trace[0])?;
    let mut chains: Vec<(ChainState, StreamRng)> = (0..replication.num_chains)
        .map(|r| {
            let key = if replication.distinct_streams { r as u64 } else { 0 };
            let mut rng = stream_rng(replication.seed, &[key]);
            ChainState::init(method, &first, n, &mut rng).map(|s| (s, rng))
        })
        .collect::<Result<_>>()?;

    let mut out = Vec::with_capacity(record.len());
    let mut next_record = record.iter().peekable();
    for (t, params) in trace.iter().enumerate().take(last + 1) {
        let proposal = build_proposal(params)?;
        let ctx = EstimatorContext::new(target, &proposal, params)?;
        let grads: Vec<Vec<f64>> = chains
            .par_iter_mut()
            .map(|(state, rng)| step(&ctx, state, n, rng).map(|g| g.grad))
            .collect::<Result<_>>()?;
        if next_record.peek() == Some(&&t) {
            next_record.next();
            out.push((t, trace_covariance(&grads)?.1));
        }
    }
    Ok(out)
}

/// Symbols entering the variance bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundInputs {
    /// Score-norm bound `L`.
    pub score_bound: f64,
    pub w_star: f64,
    /// `χ²(π ‖ q)`.
    pub chi2: f64,
    pub n: usize,
    /// Iteration count, from 1.
    pub t: u64,
    /// `‖E_π s‖²`.
    pub mu_norm_sq: f64,
    /// Covariance term of the JSA bound; 0 ignores sample covariance.
    pub c_cov: f64,
}

impl Default for BoundInputs {
    fn default() -> Self {
        Self {
            score_bound: 1.0,
            w_star: 1.0,
            chi2: 0.0,
            n: 2,
            t: 1,
            mu_norm_sq: 0.0,
            c_cov: 0.0,
        }
    }
}

/// `E‖g_MSC‖² ≤ L²`, whatever the budget.
pub fn bound_msc(b: &BoundInputs) -> f64 {
    b.score_bound * b.score_bound
}

/// MSC-RB second-moment bound with the explicit constants of the BR-SNIS
/// analysis at `ε² = (N−1)^{-1/2}`:
///
/// `4L²[(1 + ε² + γ^{t−1}) χ²/(N−1) + γ^{t−1}(1 + w*)/(N−1)
///      + (1 + √(N−1))(1 + w*)²/N²] + ‖μ‖²`, `γ = 2w*/(2w* + N − 2)`.
pub fn bound_mscrb(b: &BoundInputs) -> Result<f64> {
    let gamma = mscrb_gamma(b.w_star, b.n)?;
    let n = b.n as f64;
    let m = n - 1.0;
    let decay = gamma.powf(b.t.saturating_sub(1) as f64);
    let eps2 = m.sqrt().recip();
    let inner = (1.0 + eps2 + decay) * b.chi2 / m
        + decay * (1.0 + b.w_star) / m
        + (1.0 + m.sqrt()) * (1.0 + b.w_star).powi(2) / (n * n);
    Ok(4.0 * b.score_bound * b.score_bound * inner + b.mu_norm_sq)
}

/// `L²(1/2 + 3/(2N)) + C_cov + ‖μ‖²`. The `O(1/(w* + r^{tN}))` remainder is
/// omitted.
pub fn bound_jsa(b: &BoundInputs) -> f64 {
    let n = b.n.max(1) as f64;
    b.score_bound * b.score_bound * (0.5 + 1.5 / n) + b.c_cov + b.mu_norm_sq
}

/// `L²(2 − 1/w*)/N + ‖μ‖²`. The `O(r^t)` remainder is omitted.
pub fn bound_pmcsa(b: &BoundInputs) -> f64 {
    let n = b.n.max(1) as f64;
    b.score_bound * b.score_bound * (2.0 - b.w_star.max(1.0).recip()) / n + b.mu_norm_sq
}

/// `exp(KL(p ‖ q)) < w*(p, q)` (strict). Errors when `w*` is infinite.
pub fn wstar_kl_check(p: &VariationalParams, q: &VariationalParams) -> Result<bool> {
    let w_star = w_star_gaussian(p, q)?;
    if !w_star.is_finite() {
        return Err(McsaError::invalid("w* is infinite for this pair"));
    }
    Ok(kl_gaussian(p, q)?.exp() < w_star)
}
