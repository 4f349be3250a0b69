//! π-invariant transition kernels driven by the current variational fit.
//!
//! Both kernels work on importance weights `w̃(z) = π(z) / q_def(z)` held in
//! log space, so unnormalized targets are fine and extreme weight ratios do
//! not overflow.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;

use crate::distributions::{log_sum_exp, Proposal, TargetModel};
use crate::error::{check_dim, McsaError, Result};
use crate::rng::stream_rng;

/// Target and proposal of one kernel application.
pub struct KernelContext<'a, T: ?Sized, P: ?Sized> {
    pub target: &'a T,
    pub proposal: &'a P,
}

impl<T: ?Sized, P: ?Sized> Clone for KernelContext<'_, T, P> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T: ?Sized, P: ?Sized> Copy for KernelContext<'_, T, P> {}

impl<'a, T, P> KernelContext<'a, T, P>
where
    T: TargetModel + ?Sized,
    P: Proposal + ?Sized,
{
    pub fn new(target: &'a T, proposal: &'a P) -> Result<Self> {
        check_dim(target.dim(), proposal.dim())?;
        Ok(Self { target, proposal })
    }

    pub fn dim(&self) -> usize {
        self.target.dim()
    }

    /// `log w̃(z)`. `-inf` outside the target support, `+inf` where only the
    /// proposal vanishes.
    pub fn log_weight(&self, z: &[f64]) -> f64 {
        let lt = self.target.log_density(z);
        if lt == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        lt - self.proposal.log_density(z)
    }
}

/// Result of one conditional importance sampling transition.
#[derive(Debug, Clone, PartialEq)]
pub struct CisOutcome {
    pub next_state: Vec<f64>,
    /// Index 0 is the retained previous state.
    pub candidates: Vec<Vec<f64>>,
    pub log_weights: Vec<f64>,
    pub selected_index: usize,
}

impl CisOutcome {
    pub fn normalized_weights(&self) -> Vec<f64> {
        normalize_log_weights(&self.log_weights)
    }

    /// `1 / Σ w̄²`.
    pub fn effective_sample_size(&self) -> f64 {
        effective_sample_size(&self.normalized_weights())
    }
}

pub(crate) fn normalize_log_weights(log_weights: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(log_weights);
    log_weights.iter().map(|lw| (lw - lse).exp()).collect()
}

pub fn effective_sample_size(normalized: &[f64]) -> f64 {
    1.0 / normalized.iter().map(|w| w * w).sum::<f64>()
}

/// Result of one independent Metropolis–Hastings transition.
#[derive(Debug, Clone, PartialEq)]
pub struct ImhOutcome {
    pub next_state: Vec<f64>,
    pub accepted: bool,
    pub log_weight_prev: f64,
    pub log_weight_prop: f64,
}

/// Inverse-CDF draw from normalized weights with a single uniform.
fn select_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last_positive = i;
        }
        cum += w;
        if u < cum {
            return i;
        }
    }
    // round-off left u above the final cumulative sum
    last_positive
}

/// Conditional importance sampling: the previous state competes with
/// `num_proposals` fresh draws from the proposal and one candidate is
/// resampled by importance weight.
pub fn cis_step<T, P, R>(
    ctx: &KernelContext<'_, T, P>,
    z_prev: &[f64],
    num_proposals: usize,
    rng: &mut R,
) -> Result<CisOutcome>
where
    T: TargetModel + ?Sized,
    P: Proposal + ?Sized,
    R: Rng + ?Sized,
{
    if num_proposals == 0 {
        return Err(McsaError::invalid("CIS needs at least one proposal"));
    }
    check_dim(ctx.dim(), z_prev.len())?;
    if z_prev.iter().any(|v| !v.is_finite()) {
        return Err(McsaError::invalid("previous state must be finite"));
    }

    let mut candidates = Vec::with_capacity(num_proposals + 1);
    candidates.push(z_prev.to_vec());
    candidates.extend((0..num_proposals).map(|_| ctx.proposal.sample(rng)));
    let log_weights: Vec<f64> = candidates.iter().map(|z| ctx.log_weight(z)).collect();

    if log_weights[0] == f64::INFINITY {
        return Err(McsaError::OutsideProposalSupport);
    }
    if log_sum_exp(&log_weights) == f64::NEG_INFINITY {
        return Err(McsaError::UnsupportedState);
    }
    let selected_index = select_index(&normalize_log_weights(&log_weights), rng);
    Ok(CisOutcome {
        next_state: candidates[selected_index].clone(),
        candidates,
        log_weights,
        selected_index,
    })
}

/// Independent Metropolis–Hastings with acceptance `min(w̃(z*)/w̃(z_prev), 1)`.
pub fn imh_step<T, P, R>(ctx: &KernelContext<'_, T, P>, z_prev: &[f64], rng: &mut R) -> ImhOutcome
where
    T: TargetModel + ?Sized,
    P: Proposal + ?Sized,
    R: Rng + ?Sized,
{
    let lw_prev = ctx.log_weight(z_prev);
    imh_step_with_weight(ctx, z_prev, lw_prev, rng)
}

/// IMH step reusing an already computed `log w̃(z_prev)`.
pub(crate) fn imh_step_with_weight<T, P, R>(
    ctx: &KernelContext<'_, T, P>,
    z_prev: &[f64],
    log_weight_prev: f64,
    rng: &mut R,
) -> ImhOutcome
where
    T: TargetModel + ?Sized,
    P: Proposal + ?Sized,
    R: Rng + ?Sized,
{
    let proposal = ctx.proposal.sample(rng);
    let log_weight_prop = ctx.log_weight(&proposal);
    let u: f64 = rng.random();
    let log_ratio = log_weight_prop - log_weight_prev;
    let accepted = log_weight_prop > f64::NEG_INFINITY && !log_ratio.is_nan() && u < log_ratio.min(0.0).exp();
    ImhOutcome {
        next_state: if accepted { proposal } else { z_prev.to_vec() },
        accepted,
        log_weight_prev,
        log_weight_prop,
    }
}

/// Rate `1 − (N−1)/(2w* + N − 2)` of the CIS kernel with budget `N`.
pub fn cis_mixing_rate(w_star: f64, n: usize) -> Result<f64> {
    check_rate_inputs(w_star, n)?;
    let n = n as f64;
    Ok(1.0 - (n - 1.0) / (2.0 * w_star + n - 2.0))
}

/// Rate `r = 1 − 1/w*` of the IMH kernel.
pub fn imh_mixing_rate(w_star: f64) -> Result<f64> {
    if w_star.is_nan() || w_star < 1.0 {
        return Err(McsaError::invalid(format!("w* must be at least 1, got {w_star}")));
    }
    Ok(1.0 - w_star.recip())
}

/// `γ = 2w* / (2w* + N − 2)` of the Rao-Blackwellized CIS kernel.
pub fn mscrb_gamma(w_star: f64, n: usize) -> Result<f64> {
    check_rate_inputs(w_star, n)?;
    Ok(2.0 * w_star / (2.0 * w_star + n as f64 - 2.0))
}

fn check_rate_inputs(w_star: f64, n: usize) -> Result<()> {
    if n < 2 {
        return Err(McsaError::invalid(format!("budget N must be at least 2, got {n}")));
    }
    if w_star.is_nan() || w_star < 1.0 {
        return Err(McsaError::invalid(format!("w* must be at least 1, got {w_star}")));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Discrete oracle

/// Largest state space the discrete oracle accepts.
pub const MAX_GRID: usize = 64;
/// Largest proposal count handled by exact enumeration.
pub const MAX_EXACT_CIS_PROPOSALS: usize = 3;
/// Total Monte-Carlo transitions used for larger proposal counts.
pub const CIS_MC_SAMPLES: usize = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscreteKernel {
    Cis { num_proposals: usize },
    Imh,
}

/// Proposal over the integer points `0, 1, …, G−1` with a given pmf.
///
/// Lets the continuous kernels run on the discrete oracle's state space.
#[derive(Debug, Clone)]
pub struct GridProposal {
    pmf: Vec<f64>,
    cdf: Vec<f64>,
}

impl GridProposal {
    pub fn new(pmf: Vec<f64>) -> Result<Self> {
        validate_pmf(&pmf, "proposal")?;
        let mut acc = 0.0;
        let cdf = pmf
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Ok(Self { pmf, cdf })
    }

    pub fn index_of(z: &[f64]) -> Option<usize> {
        let x = z[0];
        (x >= 0.0 && x.fract() == 0.0).then_some(x as usize)
    }

    fn draw_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random::<f64>() * self.cdf[self.cdf.len() - 1];
        self.cdf.partition_point(|&c| c <= u).min(self.pmf.len() - 1)
    }
}

impl Proposal for GridProposal {
    fn dim(&self) -> usize {
        1
    }

    fn log_density(&self, z: &[f64]) -> f64 {
        match GridProposal::index_of(z) {
            Some(i) if i < self.pmf.len() => self.pmf[i].ln(),
            _ => f64::NEG_INFINITY,
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        vec![self.draw_index(rng) as f64]
    }
}

fn validate_pmf(pmf: &[f64], what: &str) -> Result<()> {
    if pmf.is_empty() || pmf.len() > MAX_GRID {
        return Err(McsaError::invalid(format!(
            "{what} pmf must have between 1 and {MAX_GRID} entries, got {}",
            pmf.len()
        )));
    }
    if pmf.iter().any(|p| !(*p > 0.0 && p.is_finite())) {
        return Err(McsaError::invalid(format!("{what} pmf entries must be positive")));
    }
    let total: f64 = pmf.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(McsaError::invalid(format!("{what} pmf sums to {total}, not 1")));
    }
    Ok(())
}

/// Exact row-stochastic matrix `T[i][j] = P(next = j | prev = i)` of the
/// discrete analogue of a kernel.
///
/// CIS with more than [`MAX_EXACT_CIS_PROPOSALS`] proposals falls back to
/// [`cis_transition_matrix_mc`] with [`CIS_MC_SAMPLES`] transitions in total.
pub fn discrete_transition_matrix(
    kernel: DiscreteKernel,
    target_pmf: &[f64],
    proposal_pmf: &[f64],
) -> Result<DMatrix<f64>> {
    validate_pmf(target_pmf, "target")?;
    validate_pmf(proposal_pmf, "proposal")?;
    check_dim(target_pmf.len(), proposal_pmf.len())?;
    let g = target_pmf.len();
    let w: Vec<f64> = target_pmf.iter().zip(proposal_pmf).map(|(p, q)| p / q).collect();

    match kernel {
        DiscreteKernel::Imh => {
            let mut t = DMatrix::zeros(g, g);
            for i in 0..g {
                let mut off = 0.0;
                for j in (0..g).filter(|&j| j != i) {
                    let p = proposal_pmf[j] * (w[j] / w[i]).min(1.0);
                    t[(i, j)] = p;
                    off += p;
                }
                t[(i, i)] = 1.0 - off;
            }
            Ok(t)
        }
        DiscreteKernel::Cis { num_proposals: 0 } => Err(McsaError::invalid("CIS needs at least one proposal")),
        DiscreteKernel::Cis { num_proposals } if num_proposals <= MAX_EXACT_CIS_PROPOSALS => {
            Ok(cis_matrix_exact(&w, proposal_pmf, num_proposals))
        }
        DiscreteKernel::Cis { num_proposals } => {
            let per_row = CIS_MC_SAMPLES.div_ceil(g);
            Ok(cis_transition_matrix_mc(target_pmf, proposal_pmf, num_proposals, per_row, 0)?.estimate)
        }
    }
}

fn cis_matrix_exact(w: &[f64], q: &[f64], n: usize) -> DMatrix<f64> {
    let g = w.len();
    let mut t = DMatrix::zeros(g, g);
    let mut tuple = vec![0usize; n];
    for i in 0..g {
        tuple.iter_mut().for_each(|k| *k = 0);
        loop {
            let prob: f64 = tuple.iter().map(|&k| q[k]).product();
            let total = w[i] + tuple.iter().map(|&k| w[k]).sum::<f64>();
            t[(i, i)] += prob * w[i] / total;
            for &k in &tuple {
                t[(i, k)] += prob * w[k] / total;
            }
            // odometer increment
            let mut pos = 0;
            while pos < n {
                tuple[pos] += 1;
                if tuple[pos] < g {
                    break;
                }
                tuple[pos] = 0;
                pos += 1;
            }
            if pos == n {
                break;
            }
        }
    }
    t
}

/// Monte-Carlo estimate of the discrete CIS transition matrix with Wilson
/// score intervals per entry.
#[derive(Debug, Clone)]
pub struct McTransitionMatrix {
    pub estimate: DMatrix<f64>,
    pub lower: DMatrix<f64>,
    pub upper: DMatrix<f64>,
    pub samples_per_row: usize,
}

/// Two-sided Wilson interval for `successes / trials` at normal quantile `z`.
pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

pub fn cis_transition_matrix_mc(
    target_pmf: &[f64],
    proposal_pmf: &[f64],
    num_proposals: usize,
    samples_per_row: usize,
    seed: u64,
) -> Result<McTransitionMatrix> {
    validate_pmf(target_pmf, "target")?;
    let proposal = GridProposal::new(proposal_pmf.to_vec())?;
    check_dim(target_pmf.len(), proposal_pmf.len())?;
    if num_proposals == 0 || samples_per_row == 0 {
        return Err(McsaError::invalid("need at least one proposal and one sample"));
    }
    let g = target_pmf.len();
    let w: Vec<f64> = target_pmf.iter().zip(proposal_pmf).map(|(p, q)| p / q).collect();

    let counts: Vec<Vec<u64>> = (0..g)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, &[i as u64]);
            let mut row = vec![0u64; g];
            let mut picks = vec![0usize; num_proposals + 1];
            let mut weights = vec![0.0; num_proposals + 1];
            for _ in 0..samples_per_row {
                picks[0] = i;
                for slot in picks.iter_mut().skip(1) {
                    *slot = proposal.draw_index(&mut rng);
                }
                let total: f64 = picks.iter().map(|&k| w[k]).sum();
                for (wt, &k) in weights.iter_mut().zip(&picks) {
                    *wt = w[k] / total;
                }
                row[picks[select_index(&weights, &mut rng)]] += 1;
            }
            row
        })
        .collect();

    let z = 3.290_526_731_491_926; // 99.9% two-sided
    let n = samples_per_row as u64;
    let mut estimate = DMatrix::zeros(g, g);
    let mut lower = DMatrix::zeros(g, g);
    let mut upper = DMatrix::zeros(g, g);
    for (i, row) in counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            estimate[(i, j)] = c as f64 / n as f64;
            let (lo, hi) = wilson_interval(c, n, z);
            lower[(i, j)] = lo;
            upper[(i, j)] = hi;
        }
    }
    Ok(McTransitionMatrix {
        estimate,
        lower,
        upper,
        samples_per_row,
    })
}

/// `max_j |(πᵀ T)_j − π_j|`.
pub fn stationarity_error(t: &DMatrix<f64>, pmf: &[f64]) -> f64 {
    let g = pmf.len();
    (0..g)
        .map(|j| {
            let moved: f64 = (0..g).map(|i| pmf[i] * t[(i, j)]).sum();
            (moved - pmf[j]).abs()
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{FnTarget, VariationalParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_pmf(rng: &mut ChaCha8Rng, g: usize) -> Vec<f64> {
        let raw: Vec<f64> = (0..g).map(|_| 0.05 + rng.random::<f64>()).collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    }

    fn grid_target(pmf: &[f64]) -> FnTarget<impl Fn(&[f64]) -> f64 + Sync + '_> {
        FnTarget::new(1, move |z: &[f64]| match GridProposal::index_of(z) {
            Some(i) if i < pmf.len() => pmf[i].ln(),
            _ => f64::NEG_INFINITY,
        })
    }

    #[test]
    fn cis_equal_weights_select_uniformly() {
        let q = VariationalParams::standard(1);
        let target = FnTarget::new(1, |z: &[f64]| q.log_density(z).unwrap());
        let ctx = KernelContext::new(&target, &q).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 4;
        let calls = 100_000;
        let mut hits = 0;
        for _ in 0..calls {
            let out = cis_step(&ctx, &[0.3], n, &mut rng).unwrap();
            assert!(out.log_weights.iter().all(|&lw| lw == out.log_weights[0]));
            if out.selected_index == 0 {
                hits += 1;
            }
        }
        let p = 1.0 / (n as f64 + 1.0);
        let se = (p * (1.0 - p) / calls as f64).sqrt();
        let freq = hits as f64 / calls as f64;
        assert!((freq - p).abs() < 4.0 * se, "freq {freq}");
    }

    #[test]
    fn cis_dominating_retained_weight_always_wins() {
        let q = VariationalParams::standard(1);
        let boost = 1e30_f64.ln();
        let target = FnTarget::new(1, |z: &[f64]| {
            q.log_density(z).unwrap() + if z[0] == 100.0 { boost } else { 0.0 }
        });
        let ctx = KernelContext::new(&target, &q).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10_000 {
            let out = cis_step(&ctx, &[100.0], 3, &mut rng).unwrap();
            assert_eq!(out.selected_index, 0);
            assert_eq!(out.next_state, vec![100.0]);
            let total: f64 = out.normalized_weights().iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cis_errors() {
        let q = VariationalParams::standard(1);
        let nowhere = FnTarget::new(1, |_: &[f64]| f64::NEG_INFINITY);
        let ctx = KernelContext::new(&nowhere, &q).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(matches!(
            cis_step(&ctx, &[0.0], 2, &mut rng),
            Err(McsaError::UnsupportedState)
        ));
        assert!(cis_step(&ctx, &[0.0], 0, &mut rng).is_err());

        let pmf = vec![0.5, 0.5];
        let grid = GridProposal::new(pmf.clone()).unwrap();
        let target = grid_target(&pmf);
        let ctx = KernelContext::new(&target, &grid).unwrap();
        // target mass where the proposal has none
        let leaky = FnTarget::new(1, |_: &[f64]| 0.0);
        let leaky_ctx = KernelContext::new(&leaky, &grid).unwrap();
        assert!(matches!(
            cis_step(&leaky_ctx, &[0.5], 2, &mut rng),
            Err(McsaError::OutsideProposalSupport)
        ));
        assert!(cis_step(&ctx, &[0.0], 2, &mut rng).is_ok());
    }

    #[test]
    fn imh_unit_ratio_always_accepts() {
        let q = VariationalParams::standard(2);
        let target = FnTarget::new(2, |z: &[f64]| q.log_density(z).unwrap() + 3.0);
        let ctx = KernelContext::new(&target, &q).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            assert!(imh_step(&ctx, &[0.1, 0.2], &mut rng).accepted);
        }
    }

    #[test]
    fn imh_rejection_outside_support_keeps_state_exactly() {
        let q = VariationalParams::standard(1);
        // support is z < -50, so every proposal lands outside
        let target = FnTarget::new(1, |z: &[f64]| if z[0] < -50.0 { 0.0 } else { f64::NEG_INFINITY });
        let ctx = KernelContext::new(&target, &q).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let prev = [-50.123_456_789_012_34];
        for _ in 0..1000 {
            let out = imh_step(&ctx, &prev, &mut rng);
            assert!(!out.accepted);
            assert_eq!(out.next_state[0].to_bits(), prev[0].to_bits());
            assert_eq!(out.log_weight_prop, f64::NEG_INFINITY);
        }
    }

    #[test]
    fn discrete_imh_with_perfect_proposal_has_identical_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pmf = random_pmf(&mut rng, 21);
        let t = discrete_transition_matrix(DiscreteKernel::Imh, &pmf, &pmf).unwrap();
        for i in 0..21 {
            for j in 0..21 {
                assert!((t[(i, j)] - pmf[j]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn discrete_matrices_are_stochastic_and_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let pi = random_pmf(&mut rng, 21);
            let q = random_pmf(&mut rng, 21);
            for kernel in [
                DiscreteKernel::Imh,
                DiscreteKernel::Cis { num_proposals: 1 },
                DiscreteKernel::Cis { num_proposals: 2 },
                DiscreteKernel::Cis { num_proposals: 3 },
            ] {
                let t = discrete_transition_matrix(kernel, &pi, &q).unwrap();
                for i in 0..21 {
                    let row: f64 = t.row(i).iter().sum();
                    assert!((row - 1.0).abs() < 1e-12, "{kernel:?} row {i} sums to {row}");
                    assert!(t.row(i).iter().all(|&v| v >= 0.0));
                }
                assert!(stationarity_error(&t, &pi) < 1e-10, "{kernel:?}");
            }
        }
    }

    #[test]
    fn discrete_oracle_rejects_bad_input() {
        assert!(discrete_transition_matrix(DiscreteKernel::Imh, &[0.5, 0.5], &[1.0]).is_err());
        assert!(discrete_transition_matrix(DiscreteKernel::Imh, &[0.5, 0.6], &[0.5, 0.5]).is_err());
        let big = vec![1.0 / 65.0; 65];
        assert!(discrete_transition_matrix(DiscreteKernel::Imh, &big, &big).is_err());
        assert!(discrete_transition_matrix(DiscreteKernel::Cis { num_proposals: 0 }, &[1.0], &[1.0]).is_err());
    }

    #[test]
    fn cis_step_follows_the_oracle_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pi = random_pmf(&mut rng, 7);
        let q = random_pmf(&mut rng, 7);
        let t = discrete_transition_matrix(DiscreteKernel::Cis { num_proposals: 2 }, &pi, &q).unwrap();
        let grid = GridProposal::new(q.clone()).unwrap();
        let target = grid_target(&pi);
        let ctx = KernelContext::new(&target, &grid).unwrap();
        let trials = 200_000;
        for start in [0usize, 3, 6] {
            let mut counts = [0u32; 7];
            for _ in 0..trials {
                let out = cis_step(&ctx, &[start as f64], 2, &mut rng).unwrap();
                counts[out.next_state[0] as usize] += 1;
            }
            for j in 0..7 {
                let p = t[(start, j)];
                let se = (p * (1.0 - p) / trials as f64).sqrt();
                let f = counts[j] as f64 / trials as f64;
                assert!((f - p).abs() < 5.0 * se + 1e-12, "row {start} col {j}: {f} vs {p}");
            }
        }
    }

    #[test]
    fn imh_step_follows_the_oracle_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pi = random_pmf(&mut rng, 6);
        let q = random_pmf(&mut rng, 6);
        let t = discrete_transition_matrix(DiscreteKernel::Imh, &pi, &q).unwrap();
        let grid = GridProposal::new(q.clone()).unwrap();
        let target = grid_target(&pi);
        let ctx = KernelContext::new(&target, &grid).unwrap();
        let trials = 200_000;
        for start in 0..6 {
            let mut counts = [0u32; 6];
            for _ in 0..trials {
                counts[imh_step(&ctx, &[start as f64], &mut rng).next_state[0] as usize] += 1;
            }
            for j in 0..6 {
                let p = t[(start, j)];
                let se = (p * (1.0 - p) / trials as f64).sqrt();
                let f = counts[j] as f64 / trials as f64;
                assert!((f - p).abs() < 5.0 * se + 1e-12, "row {start} col {j}: {f} vs {p}");
            }
        }
    }

    #[test]
    fn mc_cis_matrix_brackets_exact_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let pi = random_pmf(&mut rng, 5);
        let q = random_pmf(&mut rng, 5);
        let exact = discrete_transition_matrix(DiscreteKernel::Cis { num_proposals: 3 }, &pi, &q).unwrap();
        let mc = cis_transition_matrix_mc(&pi, &q, 3, 400_000, 1).unwrap();
        let mut outside = 0;
        for i in 0..5 {
            for j in 0..5 {
                if exact[(i, j)] < mc.lower[(i, j)] || exact[(i, j)] > mc.upper[(i, j)] {
                    outside += 1;
                }
            }
        }
        assert!(outside <= 1, "{outside} entries outside their 99.9% intervals");
    }

    #[test]
    fn mc_cis_matrix_is_nearly_invariant_for_large_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pi = random_pmf(&mut rng, 8);
        let q = random_pmf(&mut rng, 8);
        let mc = cis_transition_matrix_mc(&pi, &q, 6, 500_000, 2).unwrap();
        assert!(stationarity_error(&mc.estimate, &pi) < 5e-3);
    }

    #[test]
    fn mixing_rate_formulas() {
        assert_eq!(cis_mixing_rate(1.0, 2).unwrap(), 0.5);
        assert!(cis_mixing_rate(1e12, 2).unwrap() > 1.0 - 1e-9);
        let rates: Vec<f64> = (2..=1024).map(|n| cis_mixing_rate(3.0, n).unwrap()).collect();
        assert!(rates.windows(2).all(|w| w[1] < w[0]));
        assert!(rates.iter().all(|r| (0.0..1.0).contains(r)));
        assert!(cis_mixing_rate(2.0, 1).is_err());

        assert_eq!(imh_mixing_rate(1.0).unwrap(), 0.0);
        assert_eq!(imh_mixing_rate(2.0).unwrap(), 0.5);
        assert!(imh_mixing_rate(0.5).is_err());

        assert_eq!(mscrb_gamma(5.0, 2).unwrap(), 1.0);
        assert_eq!(mscrb_gamma(1.0, 4).unwrap(), 0.5);
        let gammas: Vec<f64> = (2..=256).map(|n| mscrb_gamma(2.5, n).unwrap()).collect();
        assert!(gammas.windows(2).all(|w| w[1] < w[0]));
        assert!(mscrb_gamma(2.0, 0).is_err());
    }

    #[test]
    fn imh_spectral_gap_respects_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..5 {
            let pi = random_pmf(&mut rng, 21);
            let q = random_pmf(&mut rng, 21);
            let t = discrete_transition_matrix(DiscreteKernel::Imh, &pi, &q).unwrap();
            let w_star = pi.iter().zip(&q).map(|(p, q)| p / q).fold(0.0, f64::max);
            // IMH is reversible: D^½ T D^-½ is symmetric with the same spectrum
            let g = pi.len();
            let sym = DMatrix::from_fn(g, g, |i, j| pi[i].sqrt() * t[(i, j)] / pi[j].sqrt());
            let sym = (&sym + sym.transpose()) * 0.5;
            let mut moduli: Vec<f64> = sym.symmetric_eigenvalues().iter().map(|v| v.abs()).collect();
            moduli.sort_by(|a, b| b.partial_cmp(a).unwrap());
            assert!((moduli[0] - 1.0).abs() < 1e-10);
            assert!(moduli[1] <= imh_mixing_rate(w_star).unwrap() + 1e-12);
        }
    }

    #[test]
    fn wilson_interval_contains_point_estimate() {
        let (lo, hi) = wilson_interval(30, 100, 1.96);
        assert!(lo < 0.3 && 0.3 < hi);
        let (lo, hi) = wilson_interval(0, 100, 1.96);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0);
    }
}
