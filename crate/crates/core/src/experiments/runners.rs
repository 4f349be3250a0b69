//! Experiment drivers producing long-form [`RunRecord`]s.

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;

use crate::diagnostics::{conditional_variance, replicated_gradient_variance, Replication};
use crate::distributions::{kl_gaussian, sample_wishart_target, DefensiveMixture, FullGaussian, VariationalParams};
use crate::error::{McsaError, Result};
use crate::estimators::{step, ChainState, EstimatorContext, Method};
use crate::optimizers::{OptimizerKind, OptimizerState, StepsizeSchedule};
use crate::rng::{label_key, stream_id, stream_rng};

use super::config::{ExperimentConfig, ExperimentKind};
use super::records::RunRecord;

/// KL above which a run counts as diverged.
pub const DIVERGENCE_KL: f64 = 1e12;

/// Records plus divergence bookkeeping of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub records: Vec<RunRecord>,
    pub runs: usize,
    pub diverged_runs: usize,
}

impl RunSummary {
    pub fn all_diverged(&self) -> bool {
        self.runs > 0 && self.diverged_runs == self.runs
    }

    fn from_cells(cells: Vec<(Vec<RunRecord>, bool)>) -> Self {
        let runs = cells.len();
        let diverged_runs = cells.iter().filter(|(_, d)| *d).count();
        Self {
            records: cells.into_iter().flat_map(|(r, _)| r).collect(),
            runs,
            diverged_runs,
        }
    }
}

/// Settings of a single optimization run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSetup {
    pub method: Method,
    pub n: usize,
    pub iterations: usize,
    pub optimizer: OptimizerKind,
    pub schedule: StepsizeSchedule,
    pub alpha: f64,
    pub tail_df: f64,
}

/// State after each optimizer iteration.
#[derive(Debug)]
pub struct Checkpoint<'a> {
    pub iteration: usize,
    /// Parameters after the update; on divergence, the last finite ones.
    pub params: &'a VariationalParams,
    pub kl: f64,
    pub accepted: usize,
    pub transitions: usize,
    pub diverged: bool,
}

/// Outcome of [`optimize`].
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub final_params: VariationalParams,
    pub final_kl: f64,
    pub diverged_at: Option<usize>,
}

fn is_numerical(e: &McsaError) -> bool {
    matches!(
        e,
        McsaError::NonFiniteGradient
            | McsaError::UnsupportedState
            | McsaError::OutsideProposalSupport
            | McsaError::InvalidParameter(_)
    )
}

fn method_key(method: Method) -> u64 {
    Method::ALL.iter().position(|&m| m == method).unwrap_or(usize::MAX) as u64
}

/// Defensive proposal matched to `params`.
pub fn defensive_proposal(params: &VariationalParams, alpha: f64, tail_df: f64) -> Result<DefensiveMixture> {
    DefensiveMixture::with_matched_tail(alpha, params.clone(), tail_df)
}

/// Runs `setup.iterations` steps from the standard normal fit.
///
/// `visit` sees iteration 0 and every later iteration; the run stops early at
/// the first non-finite or exploding KL, which is reported with
/// `diverged = true`.
pub fn optimize<R, F>(setup: &RunSetup, target: &FullGaussian, rng: &mut R, mut visit: F) -> Result<Trajectory>
where
    R: Rng + ?Sized,
    F: FnMut(&Checkpoint<'_>),
{
    let d = target.dim();
    let mut params = VariationalParams::standard(d);
    let initial = defensive_proposal(&params, setup.alpha, setup.tail_df)?;
    let mut state = ChainState::init(setup.method, &initial, setup.n, rng)?;
    let mut opt = OptimizerState::new(setup.optimizer, 2 * d);
    let mut kl = kl_gaussian(target, &params)?;
    visit(&Checkpoint {
        iteration: 0,
        params: &params,
        kl,
        accepted: 0,
        transitions: 0,
        diverged: false,
    });

    for t in 1..=setup.iterations {
        let outcome = defensive_proposal(&params, setup.alpha, setup.tail_df).and_then(|proposal| {
            let ctx = EstimatorContext::new(target, &proposal, &params)?;
            let g = step(&ctx, &mut state, setup.n, rng)?;
            let next = opt.update(&params, &g.grad, &setup.schedule)?;
            let next_kl = kl_gaussian(target, &next)?;
            Ok((g, next, next_kl))
        });
        let (accepted, transitions, next_kl) = match outcome {
            Ok((g, next, next_kl)) => {
                params = next;
                (g.accepted, g.transitions, next_kl)
            }
            Err(e) if is_numerical(&e) => (0, 0, f64::NAN),
            Err(e) => return Err(e),
        };
        let diverged = !(next_kl.is_finite() && next_kl <= DIVERGENCE_KL);
        if !diverged {
            kl = next_kl;
        }
        visit(&Checkpoint {
            iteration: t,
            params: &params,
            kl: next_kl,
            accepted,
            transitions,
            diverged,
        });
        if diverged {
            return Ok(Trajectory {
                final_params: params,
                final_kl: next_kl,
                diverged_at: Some(t),
            });
        }
    }
    Ok(Trajectory {
        final_params: params,
        final_kl: kl,
        diverged_at: None,
    })
}

/// Target of repetition `rep`: isotropic, or a Wishart draw when `nu > 0`.
pub fn build_target(cfg: &ExperimentConfig, rep: usize) -> Result<FullGaussian> {
    if cfg.nu == 0.0 {
        FullGaussian::isotropic(vec![cfg.target_mean; cfg.dim], cfg.target_scale)
    } else {
        let mut rng = stream_rng(cfg.seed, &[label_key("target"), rep as u64]);
        sample_wishart_target(cfg.dim, cfg.nu, &mut rng)
    }
}

fn setup_for(cfg: &ExperimentConfig, method: Method, n: usize) -> RunSetup {
    RunSetup {
        method,
        n,
        iterations: cfg.iterations,
        optimizer: cfg.optimizer,
        schedule: cfg.schedule,
        alpha: cfg.alpha,
        tail_df: cfg.tail_df,
    }
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Runs the experiment selected by `cfg` on the current rayon pool.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary> {
    cfg.validate()?;
    match cfg.experiment {
        ExperimentKind::GaussianConvergence => run_gaussian_convergence(cfg),
        ExperimentKind::VarianceSimulation => run_variance_simulation(cfg),
        ExperimentKind::GradientVariance => run_gradient_variance(cfg),
        ExperimentKind::StepsizeSweep => run_stepsize_sweep(cfg),
    }
}

/// Runs the experiment on a dedicated pool of `threads` workers (all cores
/// when `None`). Output does not depend on the thread count.
pub fn run_with_threads(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<RunSummary> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        if t == 0 {
            return Err(McsaError::invalid("thread count must be positive"));
        }
        builder = builder.num_threads(t);
    }
    let pool = builder.build().map_err(|e| McsaError::invalid(e.to_string()))?;
    pool.install(|| run_experiment(cfg))
}

fn targets(cfg: &ExperimentConfig) -> Result<Vec<FullGaussian>> {
    (0..cfg.repetitions).map(|rep| build_target(cfg, rep)).collect()
}

fn grid(cfg: &ExperimentConfig) -> Vec<(Method, usize, usize)> {
    let mut cells = Vec::new();
    for &method in &cfg.methods {
        for &n in &cfg.budgets {
            for rep in 0..cfg.repetitions {
                cells.push((method, n, rep));
            }
        }
    }
    cells
}

/// KL trajectories of every (method, budget, repetition) cell, thinned to the
/// configured stride.
pub fn run_gaussian_convergence(cfg: &ExperimentConfig) -> Result<RunSummary> {
    let name = cfg.experiment.name();
    let targets = targets(cfg)?;
    let stride = cfg.stride();
    let cells = grid(cfg)
        .into_par_iter()
        .map(|(method, n, rep)| {
            let mut rng = stream_rng(cfg.seed, &[label_key(name), method_key(method), n as u64, rep as u64]);
            let start = Instant::now();
            let mut rows = Vec::new();
            let (mut accepted, mut transitions) = (0usize, 0usize);
            let traj = optimize(&setup_for(cfg, method, n), &targets[rep], &mut rng, |c| {
                accepted += c.accepted;
                transitions += c.transitions;
                if c.iteration % stride == 0 || c.iteration == cfg.iterations || c.diverged {
                    rows.push(RunRecord {
                        experiment: name.to_string(),
                        method: method.name().to_string(),
                        n,
                        repetition: rep,
                        iteration: c.iteration,
                        kl: finite(c.kl),
                        grad_variance: None,
                        acceptance_rate: (transitions > 0).then(|| accepted as f64 / transitions as f64),
                        diverged: c.diverged,
                        wall_ns: cfg.wall_clock.then(|| start.elapsed().as_nanos() as u64),
                    });
                    accepted = 0;
                    transitions = 0;
                }
            })?;
            Ok((rows, traj.diverged_at.is_some()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RunSummary::from_cells(cells))
}

/// Label of a Markov kernel in the variance simulation.
pub fn kernel_label(method: Method) -> &'static str {
    match method {
        Method::Msc => "CIS",
        Method::MscRb => "CISRB",
        Method::Pmcsa => "PIMH",
        Method::Jsa => "JSA",
        Method::Elbo => "ELBO",
    }
}

/// One-dimensional conditional-variance study: target `N(0, 1)`, proposal
/// `N(Δμ, proposal_variance)`, previous state fixed at the target mean.
pub fn run_variance_simulation(cfg: &ExperimentConfig) -> Result<RunSummary> {
    let name = cfg.experiment.name();
    let target = FullGaussian::isotropic(vec![0.0], 1.0)?;
    let mut cells = Vec::new();
    for (si, &shift) in cfg.mean_shifts.iter().enumerate() {
        for &n in &cfg.budgets {
            for &method in &cfg.methods {
                for rep in 0..cfg.repetitions {
                    cells.push((si, shift, n, method, rep));
                }
            }
        }
    }
    let cells = cells
        .into_iter()
        .map(|(si, shift, n, method, rep)| {
            let q = VariationalParams::new(vec![shift], vec![0.5 * cfg.proposal_variance.ln()])?;
            let ctx = EstimatorContext::new(&target, &q, &q)?;
            let seed = stream_id(&[
                cfg.seed,
                label_key(name),
                si as u64,
                n as u64,
                method_key(method),
                rep as u64,
            ]);
            let start = Instant::now();
            let report = conditional_variance(method, &ctx, &[0.0], n, cfg.num_samples, seed)?;
            let row = RunRecord {
                experiment: format!("{name}/dmu={shift}"),
                method: kernel_label(method).to_string(),
                n,
                repetition: rep,
                iteration: 0,
                kl: None,
                grad_variance: Some(report.variance),
                acceptance_rate: None,
                diverged: false,
                wall_ns: cfg.wall_clock.then(|| start.elapsed().as_nanos() as u64),
            };
            Ok((vec![row], false))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RunSummary::from_cells(cells))
}

/// Gradient variance along each optimization path, estimated by replaying
/// the parameter trace with `num_chains` independent chains.
pub fn run_gradient_variance(cfg: &ExperimentConfig) -> Result<RunSummary> {
    let name = cfg.experiment.name();
    let targets = targets(cfg)?;
    let stride = cfg.stride();
    let cells = grid(cfg)
        .into_par_iter()
        .map(|(method, n, rep)| {
            let keys = [label_key(name), method_key(method), n as u64, rep as u64];
            let mut rng = stream_rng(cfg.seed, &keys);
            let target = &targets[rep];
            let start = Instant::now();
            let mut trace = Vec::with_capacity(cfg.iterations + 1);
            let mut kls = Vec::with_capacity(cfg.iterations + 1);
            let mut last = None;
            let traj = optimize(&setup_for(cfg, method, n), target, &mut rng, |c| {
                if c.diverged {
                    last = Some((c.iteration, c.kl));
                } else {
                    trace.push(c.params.clone());
                    kls.push(c.kl);
                }
            })?;
            // the gradient of step t is evaluated at trace[t - 1]
            let usable = if traj.diverged_at.is_some() {
                trace.len().saturating_sub(1)
            } else {
                cfg.iterations
            };
            let record: Vec<usize> = (0..usable).filter(|t| t % stride == 0).collect();
            let replication = Replication {
                num_chains: cfg.num_chains,
                seed: stream_id(&[cfg.seed, label_key("replicas"), keys[1], keys[2], keys[3]]),
                distinct_streams: !cfg.duplicate_replica_seeds,
            };
            let variances = replicated_gradient_variance(
                method,
                target,
                &trace[..usable.max(1).min(trace.len())],
                |p| defensive_proposal(p, cfg.alpha, cfg.tail_df),
                n,
                &record,
                replication,
            )?;
            let wall = cfg.wall_clock.then(|| start.elapsed().as_nanos() as u64);
            let mut rows: Vec<RunRecord> = variances
                .into_iter()
                .map(|(t, v)| RunRecord {
                    experiment: name.to_string(),
                    method: method.name().to_string(),
                    n,
                    repetition: rep,
                    iteration: t,
                    kl: finite(kls[t]),
                    grad_variance: Some(v),
                    acceptance_rate: None,
                    diverged: false,
                    wall_ns: wall,
                })
                .collect();
            if let Some((t, kl)) = last {
                rows.push(RunRecord {
                    experiment: name.to_string(),
                    method: method.name().to_string(),
                    n,
                    repetition: rep,
                    iteration: t,
                    kl: finite(kl),
                    grad_variance: None,
                    acceptance_rate: None,
                    diverged: true,
                    wall_ns: wall,
                });
            }
            Ok((rows, traj.diverged_at.is_some()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RunSummary::from_cells(cells))
}

/// Final KL over an (optimizer, stepsize) grid, one row per run.
pub fn run_stepsize_sweep(cfg: &ExperimentConfig) -> Result<RunSummary> {
    let name = cfg.experiment.name();
    let targets = targets(cfg)?;
    let mut cells = Vec::new();
    for (oi, &optimizer) in cfg.optimizers.iter().enumerate() {
        for (gi, &gamma) in cfg.stepsizes.iter().enumerate() {
            for (method, n, rep) in grid(cfg) {
                cells.push((oi, optimizer, gi, gamma, method, n, rep));
            }
        }
    }
    let cells = cells
        .into_par_iter()
        .map(|(oi, optimizer, gi, gamma, method, n, rep)| {
            let keys = [
                label_key(name),
                oi as u64,
                gi as u64,
                method_key(method),
                n as u64,
                rep as u64,
            ];
            let mut rng = stream_rng(cfg.seed, &keys);
            let setup = RunSetup {
                optimizer,
                schedule: cfg.schedule.with_base(gamma),
                ..setup_for(cfg, method, n)
            };
            let start = Instant::now();
            let traj = optimize(&setup, &targets[rep], &mut rng, |_| {})?;
            let row = RunRecord {
                experiment: format!("{name}/{optimizer}/{gamma}"),
                method: method.name().to_string(),
                n,
                repetition: rep,
                iteration: traj.diverged_at.unwrap_or(cfg.iterations),
                kl: finite(traj.final_kl),
                grad_variance: None,
                acceptance_rate: None,
                diverged: traj.diverged_at.is_some(),
                wall_ns: cfg.wall_clock.then(|| start.elapsed().as_nanos() as u64),
            };
            Ok((vec![row], traj.diverged_at.is_some()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RunSummary::from_cells(cells))
}
