//! Probability primitives: the mean-field variational family, full-rank
//! Gaussian targets, the heavy-tailed defensive component, and closed-form
//! Gaussian divergences.
//!
//! All densities are evaluated in log space.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal, StudentT};
use statrs::function::gamma::ln_gamma;

use crate::error::{check_dim, McsaError, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Default weight of the variational component in a defensive mixture.
pub const DEFAULT_ALPHA: f64 = 0.95;
/// Default Student-t degrees of freedom of the defensive tail.
pub const DEFAULT_TAIL_DF: f64 = 5.0;

/// Stable `log(exp(a) + exp(b))`.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// Stable `log Σ exp(x_i)`. Returns `-inf` for an empty slice or all `-inf`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// A distribution that can propose states for a kernel.
pub trait Proposal: Sync {
    fn dim(&self) -> usize;
    fn log_density(&self, z: &[f64]) -> f64;
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64>;
}

/// Unnormalized target log-density `log π(z) + const`.
///
/// Implementations must not return NaN on finite input; `-inf` marks points
/// outside the support.
pub trait TargetModel: Sync {
    fn dim(&self) -> usize;

    fn log_density(&self, z: &[f64]) -> f64;

    fn grad_log_density(&self, _z: &[f64]) -> Option<Vec<f64>> {
        None
    }

    /// The target itself when it is a known Gaussian. Enables closed-form KL
    /// and direct sampling.
    fn exact(&self) -> Option<&FullGaussian> {
        None
    }
}

/// Target given by a log-density closure.
pub struct FnTarget<F> {
    dim: usize,
    log_density: F,
}

impl<F> FnTarget<F>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    pub fn new(dim: usize, log_density: F) -> Self {
        Self { dim, log_density }
    }
}

impl<F> TargetModel for FnTarget<F>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density(&self, z: &[f64]) -> f64 {
        (self.log_density)(z)
    }
}

/// Mean-field Gaussian parameters `λ = (mean, log_scale)`.
///
/// Stored flat as `[mean_1..mean_d, log_scale_1..log_scale_d]`, which is also
/// the layout of every gradient in this crate.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalParams {
    values: Vec<f64>,
}

impl VariationalParams {
    pub fn new(mean: Vec<f64>, log_scale: Vec<f64>) -> Result<Self> {
        if mean.is_empty() {
            return Err(McsaError::invalid("dimension must be at least 1"));
        }
        check_dim(mean.len(), log_scale.len())?;
        let mut values = mean;
        values.extend(log_scale);
        Self::from_flat(values)
    }

    /// Unit isotropic Gaussian `N(0, I_d)`.
    pub fn standard(dim: usize) -> Self {
        assert!(dim >= 1, "dimension must be at least 1");
        Self {
            values: vec![0.0; 2 * dim],
        }
    }

    pub fn from_flat(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || !values.len().is_multiple_of(2) {
            return Err(McsaError::invalid(format!(
                "flat parameter vector must have even positive length, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(McsaError::invalid("variational parameters must be finite"));
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len() / 2
    }

    pub fn mean(&self) -> &[f64] {
        &self.values[..self.dim()]
    }

    pub fn log_scale(&self) -> &[f64] {
        &self.values[self.dim()..]
    }

    pub fn scale(&self, i: usize) -> f64 {
        self.log_scale()[i].exp()
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.values
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.values
    }

    pub fn log_density(&self, z: &[f64]) -> Result<f64> {
        check_dim(self.dim(), z.len())?;
        Ok(self.log_density_unchecked(z))
    }

    pub(crate) fn log_density_unchecked(&self, z: &[f64]) -> f64 {
        let d = self.dim();
        let mut acc = -0.5 * LN_2PI * d as f64;
        for i in 0..d {
            let ls = self.values[d + i];
            let r = (z[i] - self.values[i]) * (-ls).exp();
            acc -= 0.5 * r * r + ls;
        }
        acc
    }

    /// `∇_λ log q(z; λ)`, laid out as `(∂/∂mean, ∂/∂log_scale)`.
    pub fn score(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), z.len())?;
        let mut out = vec![0.0; 2 * self.dim()];
        self.add_scaled_score(z, 1.0, &mut out);
        Ok(out)
    }

    /// `out += weight · s(λ; z)`. Dimensions are the caller's responsibility.
    pub(crate) fn add_scaled_score(&self, z: &[f64], weight: f64, out: &mut [f64]) {
        let d = self.dim();
        for i in 0..d {
            let inv_scale = (-self.values[d + i]).exp();
            let r = (z[i] - self.values[i]) * inv_scale;
            out[i] += weight * r * inv_scale;
            out[d + i] += weight * (r * r - 1.0);
        }
    }

    /// `z = mean + exp(log_scale) ⊙ ε`, `ε ~ N(0, I)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let d = self.dim();
        (0..d)
            .map(|i| {
                let eps: f64 = rng.sample(StandardNormal);
                self.values[i] + self.values[d + i].exp() * eps
            })
            .collect()
    }
}

impl Proposal for VariationalParams {
    fn dim(&self) -> usize {
        VariationalParams::dim(self)
    }

    fn log_density(&self, z: &[f64]) -> f64 {
        self.log_density_unchecked(z)
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        VariationalParams::sample(self, rng)
    }
}

pub fn log_density_diag(params: &VariationalParams, z: &[f64]) -> Result<f64> {
    params.log_density(z)
}

pub fn score_diag(params: &VariationalParams, z: &[f64]) -> Result<Vec<f64>> {
    params.score(z)
}

pub fn sample_diag<R: Rng + ?Sized>(params: &VariationalParams, rng: &mut R) -> Vec<f64> {
    params.sample(rng)
}

/// Independent Student-t per dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct HeavyTail {
    df: f64,
    location: Vec<f64>,
    scale: Vec<f64>,
    // log-density normalizer of one standardized dimension
    unit_log_norm: f64,
    log_scale_sum: f64,
}

impl HeavyTail {
    pub fn new(df: f64, location: Vec<f64>, scale: Vec<f64>) -> Result<Self> {
        if !(df > 0.0 && df.is_finite()) {
            return Err(McsaError::invalid(format!("tail df must be positive, got {df}")));
        }
        if location.is_empty() {
            return Err(McsaError::invalid("dimension must be at least 1"));
        }
        check_dim(location.len(), scale.len())?;
        if scale.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(McsaError::invalid("tail scales must be positive and finite"));
        }
        if location.iter().any(|l| !l.is_finite()) {
            return Err(McsaError::invalid("tail location must be finite"));
        }
        let unit_log_norm = ln_gamma(0.5 * (df + 1.0)) - ln_gamma(0.5 * df) - 0.5 * (df * std::f64::consts::PI).ln();
        let log_scale_sum = scale.iter().map(|s| s.ln()).sum();
        Ok(Self {
            df,
            location,
            scale,
            unit_log_norm,
            log_scale_sum,
        })
    }

    /// Tail centred on `params` with the same per-dimension scale.
    pub fn matched(params: &VariationalParams, df: f64) -> Result<Self> {
        let scale = params.log_scale().iter().map(|l| l.exp()).collect();
        Self::new(df, params.mean().to_vec(), scale)
    }

    pub fn dim(&self) -> usize {
        self.location.len()
    }

    pub fn df(&self) -> f64 {
        self.df
    }

    pub fn location(&self) -> &[f64] {
        &self.location
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    pub fn log_density(&self, z: &[f64]) -> f64 {
        let half = 0.5 * (self.df + 1.0);
        let quad: f64 = z
            .iter()
            .zip(&self.location)
            .zip(&self.scale)
            .map(|((zi, li), si)| {
                let r = (zi - li) / si;
                (r * r / self.df).ln_1p()
            })
            .sum();
        self.dim() as f64 * self.unit_log_norm - self.log_scale_sum - half * quad
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let t = StudentT::new(self.df).expect("df validated at construction");
        self.location
            .iter()
            .zip(&self.scale)
            .map(|(l, s)| l + s * t.sample(rng))
            .collect()
    }
}

/// `q_def(z) = α q(z; λ) + (1 − α) ν(z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DefensiveMixture {
    alpha: f64,
    variational: VariationalParams,
    tail: HeavyTail,
}

impl DefensiveMixture {
    pub fn new(alpha: f64, variational: VariationalParams, tail: HeavyTail) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(McsaError::invalid(format!(
                "defensive weight must lie in (0, 1), got {alpha}"
            )));
        }
        check_dim(variational.dim(), tail.dim())?;
        Ok(Self {
            alpha,
            variational,
            tail,
        })
    }

    /// Mixture whose Student-t tail shares the location and scale of `variational`.
    pub fn with_matched_tail(alpha: f64, variational: VariationalParams, df: f64) -> Result<Self> {
        let tail = HeavyTail::matched(&variational, df)?;
        Self::new(alpha, variational, tail)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn variational(&self) -> &VariationalParams {
        &self.variational
    }

    pub fn tail(&self) -> &HeavyTail {
        &self.tail
    }

    pub fn log_density(&self, z: &[f64]) -> f64 {
        log_add_exp(
            self.alpha.ln() + self.variational.log_density_unchecked(z),
            (-self.alpha).ln_1p() + self.tail.log_density(z),
        )
    }
}

impl Proposal for DefensiveMixture {
    fn dim(&self) -> usize {
        self.variational.dim()
    }

    fn log_density(&self, z: &[f64]) -> f64 {
        DefensiveMixture::log_density(self, z)
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        if rng.random::<f64>() < self.alpha {
            self.variational.sample(rng)
        } else {
            self.tail.sample(rng)
        }
    }
}

pub fn mixture_log_density(mix: &DefensiveMixture, z: &[f64]) -> Result<f64> {
    check_dim(mix.variational.dim(), z.len())?;
    Ok(mix.log_density(z))
}

/// Gaussian `N(mean, L Lᵀ)` with lower-triangular Cholesky factor `L`.
#[derive(Debug, Clone, PartialEq)]
pub struct FullGaussian {
    mean: Vec<f64>,
    cov_factor: DMatrix<f64>,
    // Σ ln L_ii = ½ ln|Σ|
    half_log_det: f64,
}

impl FullGaussian {
    pub fn new(mean: Vec<f64>, cov_factor: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(McsaError::invalid("dimension must be at least 1"));
        }
        check_dim(d, cov_factor.nrows())?;
        check_dim(d, cov_factor.ncols())?;
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(McsaError::invalid("mean must be finite"));
        }
        for i in 0..d {
            let lii = cov_factor[(i, i)];
            if !(lii > 0.0 && lii.is_finite()) {
                return Err(McsaError::invalid(format!(
                    "cholesky factor diagonal must be positive, entry {i} is {lii}"
                )));
            }
            for j in 0..d {
                let v = cov_factor[(i, j)];
                if !v.is_finite() || (j > i && v != 0.0) {
                    return Err(McsaError::invalid(
                        "cholesky factor must be finite and lower triangular",
                    ));
                }
            }
        }
        let half_log_det = (0..d).map(|i| cov_factor[(i, i)].ln()).sum();
        Ok(Self {
            mean,
            cov_factor,
            half_log_det,
        })
    }

    pub fn from_covariance(mean: Vec<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let chol =
            nalgebra::Cholesky::new(cov).ok_or_else(|| McsaError::invalid("covariance is not positive definite"))?;
        Self::new(mean, chol.l())
    }

    pub fn isotropic(mean: Vec<f64>, scale: f64) -> Result<Self> {
        let d = mean.len();
        Self::new(mean, DMatrix::from_diagonal_element(d, d, scale))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov_factor(&self) -> &DMatrix<f64> {
        &self.cov_factor
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        &self.cov_factor * self.cov_factor.transpose()
    }

    /// Diagonal of `Σ`.
    pub fn variances(&self) -> Vec<f64> {
        self.cov_factor
            .row_iter()
            .map(|row| row.iter().map(|v| v * v).sum())
            .collect()
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.half_log_det
    }

    /// `L⁻¹ v` by forward substitution.
    fn solve_lower(&self, v: &mut [f64]) {
        let d = self.dim();
        for i in 0..d {
            let mut acc = v[i];
            for j in 0..i {
                acc -= self.cov_factor[(i, j)] * v[j];
            }
            v[i] = acc / self.cov_factor[(i, i)];
        }
    }

    /// `L⁻ᵀ v` by backward substitution.
    fn solve_upper_transposed(&self, v: &mut [f64]) {
        let d = self.dim();
        for i in (0..d).rev() {
            let mut acc = v[i];
            for j in i + 1..d {
                acc -= self.cov_factor[(j, i)] * v[j];
            }
            v[i] = acc / self.cov_factor[(i, i)];
        }
    }

    pub fn log_density(&self, z: &[f64]) -> f64 {
        let mut r: Vec<f64> = z.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        self.solve_lower(&mut r);
        let quad: f64 = r.iter().map(|v| v * v).sum();
        -0.5 * quad - self.half_log_det - 0.5 * LN_2PI * self.dim() as f64
    }

    /// `−Σ⁻¹ (z − mean)`.
    pub fn grad_log_density(&self, z: &[f64]) -> Vec<f64> {
        let mut r: Vec<f64> = z.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        self.solve_lower(&mut r);
        self.solve_upper_transposed(&mut r);
        r.iter_mut().for_each(|v| *v = -*v);
        r
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let d = self.dim();
        let eps: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        (0..d)
            .map(|i| self.mean[i] + (0..=i).map(|j| self.cov_factor[(i, j)] * eps[j]).sum::<f64>())
            .collect()
    }
}

impl From<&VariationalParams> for FullGaussian {
    fn from(p: &VariationalParams) -> Self {
        let d = p.dim();
        let diag = nalgebra::DVector::from_iterator(d, p.log_scale().iter().map(|l| l.exp()));
        FullGaussian::new(p.mean().to_vec(), DMatrix::from_diagonal(&diag))
            .expect("finite variational parameters give a valid factor")
    }
}

impl TargetModel for FullGaussian {
    fn dim(&self) -> usize {
        FullGaussian::dim(self)
    }

    fn log_density(&self, z: &[f64]) -> f64 {
        FullGaussian::log_density(self, z)
    }

    fn grad_log_density(&self, z: &[f64]) -> Option<Vec<f64>> {
        Some(FullGaussian::grad_log_density(self, z))
    }

    fn exact(&self) -> Option<&FullGaussian> {
        Some(self)
    }
}

/// Zero-mean Gaussian with covariance `W ~ Wishart(ν, I/ν)`, so `E[W] = I`.
///
/// Uses the Bartlett decomposition `W = A Aᵀ / ν`; `A / √ν` is then already
/// the Cholesky factor.
pub fn sample_wishart_target<R: Rng + ?Sized>(d: usize, nu: f64, rng: &mut R) -> Result<FullGaussian> {
    if d == 0 {
        return Err(McsaError::invalid("dimension must be at least 1"));
    }
    if !nu.is_finite() || nu < d as f64 {
        return Err(McsaError::invalid(format!(
            "wishart degrees of freedom must be at least the dimension ({d}), got {nu}"
        )));
    }
    let inv_sqrt_nu = nu.sqrt().recip();
    let mut factor = DMatrix::zeros(d, d);
    for i in 0..d {
        let chi2 = ChiSquared::new(nu - i as f64).expect("positive degrees of freedom");
        factor[(i, i)] = chi2.sample(rng).sqrt() * inv_sqrt_nu;
        for j in 0..i {
            let n: f64 = rng.sample(StandardNormal);
            factor[(i, j)] = n * inv_sqrt_nu;
        }
    }
    FullGaussian::new(vec![0.0; d], factor)
}

/// Either Gaussian representation, for the divergence functions.
#[derive(Debug, Clone, Copy)]
pub enum GaussianRef<'a> {
    Diag(&'a VariationalParams),
    Full(&'a FullGaussian),
}

impl GaussianRef<'_> {
    pub fn dim(&self) -> usize {
        match self {
            GaussianRef::Diag(p) => p.dim(),
            GaussianRef::Full(p) => p.dim(),
        }
    }
}

impl<'a> From<&'a VariationalParams> for GaussianRef<'a> {
    fn from(p: &'a VariationalParams) -> Self {
        GaussianRef::Diag(p)
    }
}

impl<'a> From<&'a FullGaussian> for GaussianRef<'a> {
    fn from(p: &'a FullGaussian) -> Self {
        GaussianRef::Full(p)
    }
}

/// Closed-form `KL(p ‖ q)` between Gaussians.
pub fn kl_gaussian<'a, 'b>(p: impl Into<GaussianRef<'a>>, q: impl Into<GaussianRef<'b>>) -> Result<f64> {
    let (p, q) = (p.into(), q.into());
    check_dim(p.dim(), q.dim())?;
    let d = p.dim() as f64;
    let kl = match q {
        GaussianRef::Diag(q) => {
            let (p_mean, p_var, p_log_det): (&[f64], Vec<f64>, f64) = match p {
                GaussianRef::Diag(p) => (
                    p.mean(),
                    p.log_scale().iter().map(|l| (2.0 * l).exp()).collect(),
                    2.0 * p.log_scale().iter().sum::<f64>(),
                ),
                GaussianRef::Full(p) => (p.mean(), p.variances(), p.log_det()),
            };
            let mut acc = 0.0;
            for i in 0..q.dim() {
                let inv_var = (-2.0 * q.log_scale()[i]).exp();
                let dm = q.mean()[i] - p_mean[i];
                acc += (p_var[i] + dm * dm) * inv_var + 2.0 * q.log_scale()[i];
            }
            0.5 * (acc - d - p_log_det)
        }
        GaussianRef::Full(q) => {
            let owned;
            let p = match p {
                GaussianRef::Full(p) => p,
                GaussianRef::Diag(p) => {
                    owned = FullGaussian::from(p);
                    &owned
                }
            };
            let n = p.dim();
            // tr(Σq⁻¹ Σp) = ‖Lq⁻¹ Lp‖_F²
            let mut trace = 0.0;
            let mut col = vec![0.0; n];
            for j in 0..n {
                for i in 0..n {
                    col[i] = p.cov_factor[(i, j)];
                }
                q.solve_lower(&mut col);
                trace += col.iter().map(|v| v * v).sum::<f64>();
            }
            let mut delta: Vec<f64> = q.mean.iter().zip(&p.mean).map(|(a, b)| a - b).collect();
            q.solve_lower(&mut delta);
            let maha: f64 = delta.iter().map(|v| v * v).sum();
            0.5 * (trace + maha - d + q.log_det() - p.log_det())
        }
    };
    if kl.is_nan() {
        return Err(McsaError::invalid("KL evaluated to NaN"));
    }
    Ok(kl.max(0.0))
}

/// Closed-form `χ²(p ‖ q) = ∫ (p/q − 1)² q` for diagonal Gaussians.
///
/// `+inf` whenever `2σ_q,i² ≤ σ_p,i²` in some dimension.
pub fn chi2_gaussian(p: &VariationalParams, q: &VariationalParams) -> Result<f64> {
    check_dim(p.dim(), q.dim())?;
    let mut log_one_plus = 0.0;
    for i in 0..p.dim() {
        let (lp, lq) = (p.log_scale()[i], q.log_scale()[i]);
        let denom = 2.0 * (2.0 * lq).exp() - (2.0 * lp).exp();
        if denom <= 0.0 {
            return Ok(f64::INFINITY);
        }
        let dm = p.mean()[i] - q.mean()[i];
        log_one_plus += 2.0 * lq - lp - 0.5 * denom.ln() + dm * dm / denom;
    }
    Ok(log_one_plus.exp_m1().max(0.0))
}

/// `w* = sup_z p(z)/q(z)` for diagonal Gaussians; `+inf` when unbounded.
pub fn w_star_gaussian(p: &VariationalParams, q: &VariationalParams) -> Result<f64> {
    check_dim(p.dim(), q.dim())?;
    let mut log_w = 0.0;
    for i in 0..p.dim() {
        let (lp, lq) = (p.log_scale()[i], q.log_scale()[i]);
        let dm = p.mean()[i] - q.mean()[i];
        if lq < lp {
            return Ok(f64::INFINITY);
        }
        if lq == lp {
            if dm != 0.0 {
                return Ok(f64::INFINITY);
            }
            continue;
        }
        let gap = (2.0 * lq).exp() - (2.0 * lp).exp();
        log_w += lq - lp + dm * dm / (2.0 * gap);
    }
    Ok(log_w.exp())
}
