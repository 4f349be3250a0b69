//! Fixtures shared by the benchmarks.

use mcsa_core::distributions::sample_wishart_target;
use mcsa_core::{stream_rng, DefensiveMixture, FullGaussian, VariationalParams};

/// Wishart target, a slightly mismatched fit and its defensive proposal.
pub fn fixture(dim: usize) -> (FullGaussian, VariationalParams, DefensiveMixture) {
    let mut rng = stream_rng(0, &[dim as u64]);
    let target = sample_wishart_target(dim, (5 * dim) as f64, &mut rng).expect("nu ≥ dim");
    let params = VariationalParams::new(vec![0.1; dim], vec![0.2; dim]).expect("finite");
    let proposal = DefensiveMixture::with_matched_tail(0.95, params.clone(), 5.0).expect("valid mixture");
    (target, params, proposal)
}
