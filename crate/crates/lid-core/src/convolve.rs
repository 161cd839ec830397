//! Oracles for the Gaussian- and uniform-noised densities, their
//! derivatives in the log noise scale, and ball probabilities.
//!
//! All density arithmetic runs in log space with log-sum-exp: at delta = -8
//! the kernel exponent scale exp(-2 delta) is ~1e7 and naive exponentials
//! underflow.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::geometry::{DensitySpec, DensityVariant, GeometryError, ManifoldSpec};
use crate::numeric::{ln_gauss_kernel, ln_unit_ball_volume, log_sum_exp, softmax};

#[derive(Debug, Error)]
pub enum ConvolveError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("refused: {0}")]
    Refused(String),
    #[error("non-finite result; max kernel exponent {max_exponent:.3e}")]
    NonFinite { max_exponent: f64 },
    #[error("zero-probability ball at the stencil point delta = {0}")]
    ZeroProbability(f64),
    #[error("central-difference step must be > 0, got {0}")]
    BadStep(f64),
    #[error("unsupported: {0}")]
    Unsupported(String),
}

/// How a convolution integral is evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConvolveMethod {
    /// Exact algebra: point sets (Gaussian mixtures) and Gaussians on affine
    /// subspaces.
    ClosedForm,
    /// Composite trapezoid on the 1-d manifold parameter. The node count
    /// adapts to the kernel width: at least max(min_nodes, 1024) and at
    /// least 64 nodes per unit kernel-width of parameter length.
    Quadrature { min_nodes: usize },
    /// Sample-bank average. The bank is drawn once per (density, seed) and
    /// shared across evaluation points and noise scales.
    MonteCarlo { samples: usize, seed: u64 },
}

/// Kernel-weighted moments of X' under w(x') = p(x') N_D(x - c x'; 0, ln s).
///
/// These moments are everything the estimators need: the log mass is the
/// noised log density, `e_sq_dist` drives the delta-derivative, and
/// (`mean_cx`, `e_sq_dist`) give the score and its exact Jacobian trace.
#[derive(Debug, Clone)]
pub struct GaussMoments {
    /// log of the integral of the weights.
    pub log_mass: f64,
    /// E_w ||x - c X'||^2.
    pub e_sq_dist: f64,
    /// E_w [c X'].
    pub mean_cx: DVector<f64>,
}

/// Oracle for the Gaussian-noised density of a catalog density.
#[derive(Debug)]
pub struct ConvolutionOracle {
    density: DensitySpec,
    method: ConvolveMethod,
    bank: OnceLock<Vec<DVector<f64>>>,
    components: OnceLock<Vec<ConvolutionOracle>>,
}

impl ConvolutionOracle {
    pub fn new(density: DensitySpec, method: ConvolveMethod) -> Result<Self, ConvolveError> {
        if let ConvolveMethod::Quadrature { min_nodes } = method {
            if min_nodes < 16 {
                return Err(ConvolveError::Refused(format!(
                    "quadrature node count {min_nodes} < 16"
                )));
            }
        }
        Ok(ConvolutionOracle {
            density,
            method,
            bank: OnceLock::new(),
            components: OnceLock::new(),
        })
    }

    pub fn density(&self) -> &DensitySpec {
        &self.density
    }

    pub fn ambient_dim(&self) -> usize {
        self.density.ambient_dim()
    }

    fn mc_bank(&self, samples: usize, seed: u64) -> Result<&[DVector<f64>], ConvolveError> {
        if self.bank.get().is_none() {
            let b = self.density.sample(samples, seed)?;
            let _ = self.bank.set(b);
        }
        Ok(self.bank.get().unwrap())
    }

    fn component_oracles(&self) -> Result<&[ConvolutionOracle], ConvolveError> {
        if self.components.get().is_none() {
            let comps = match self.density.variant() {
                DensityVariant::Mixture(parts) => parts,
                _ => return Err(ConvolveError::Unsupported("not a mixture".into())),
            };
            let mut built = Vec::with_capacity(comps.len());
            for (i, c) in comps.iter().enumerate() {
                let m = match self.method {
                    ConvolveMethod::MonteCarlo { samples, seed } => ConvolveMethod::MonteCarlo {
                        samples,
                        seed: seed.wrapping_add(1 + i as u64),
                    },
                    other => other,
                };
                built.push(ConvolutionOracle::new(c.clone(), m)?);
            }
            let _ = self.components.set(built);
        }
        Ok(self.components.get().unwrap())
    }

    /// log rho_N(x, delta): the Gaussian-noised log density at noise scale
    /// exp(delta).
    pub fn log_rho_gauss(&self, x: &DVector<f64>, delta: f64) -> Result<f64, ConvolveError> {
        if !delta.is_finite() {
            return Err(ConvolveError::Refused(format!("delta {delta} not finite")));
        }
        Ok(self
            .kernel_moments_dim(x, 1.0, delta.exp(), self.ambient_dim())?
            .log_mass)
    }

    /// d/d delta of log rho_N(x, delta), via the exact ratio identity
    /// -D + exp(-2 delta) E_w ||x - X'||^2 (no finite differencing).
    pub fn dlogrho_ddelta_gauss(
        &self,
        x: &DVector<f64>,
        delta: f64,
    ) -> Result<f64, ConvolveError> {
        let d_amb = self.ambient_dim() as f64;
        let m = self.kernel_moments_dim(x, 1.0, delta.exp(), self.ambient_dim())?;
        let out = -d_amb + (-2.0 * delta).exp() * m.e_sq_dist;
        if out.is_nan() {
            return Err(ConvolveError::NonFinite {
                max_exponent: m.log_mass,
            });
        }
        Ok(out)
    }

    /// Integral of p against the unnormalized intrinsic-dimension kernel:
    /// int p(x') N_d(x - x'; 0, delta) dx'. Converges to p(x).
    pub fn prop1_integral(&self, x: &DVector<f64>, delta: f64) -> Result<f64, ConvolveError> {
        let d = self.density.manifold().intrinsic_dim_at(x);
        Ok(self
            .kernel_moments_dim(x, 1.0, delta.exp(), d)?
            .log_mass
            .exp())
    }

    /// exp(-2 delta) int p(x') ||x - x'||^2 N_d(x - x'; 0, delta) dx'.
    /// Converges to d * p(x).
    pub fn prop2_integral(&self, x: &DVector<f64>, delta: f64) -> Result<f64, ConvolveError> {
        let d = self.density.manifold().intrinsic_dim_at(x);
        let m = self.kernel_moments_dim(x, 1.0, delta.exp(), d)?;
        Ok((-2.0 * delta).exp() * m.log_mass.exp() * m.e_sq_dist)
    }

    /// Moments under the ambient-dimension kernel at mean scaling `scale`
    /// and noise level `sigma`. This is the shared engine for both the
    /// convolution at scale delta (scale = 1, sigma = exp(delta)) and the
    /// diffusion-time marginals (scale = psi(t), sigma = sigma(t)).
    pub fn kernel_moments(
        &self,
        x: &DVector<f64>,
        scale: f64,
        sigma: f64,
    ) -> Result<GaussMoments, ConvolveError> {
        self.kernel_moments_dim(x, scale, sigma, self.ambient_dim())
    }

    fn kernel_moments_dim(
        &self,
        x: &DVector<f64>,
        scale: f64,
        sigma: f64,
        kernel_dim: usize,
    ) -> Result<GaussMoments, ConvolveError> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(ConvolveError::Refused(format!(
                "noise level must be positive and finite, got {sigma}"
            )));
        }
        let moments = match (self.density.variant(), self.density.manifold()) {
            (DensityVariant::Empirical, ManifoldSpec::PointSet { points }) => {
                let weights = vec![-(points.len() as f64).ln(); points.len()];
                weighted_atom_moments(points, &weights, x, scale, sigma, kernel_dim)
            }
            (DensityVariant::GaussianOnAffine { mean, cov }, ManifoldSpec::AffineSubspace {
                basis,
                offset,
            }) => affine_gaussian_moments(basis, offset, mean, cov, x, scale, sigma, kernel_dim),
            (DensityVariant::UniformOnCompact, ManifoldSpec::Sphere {
                radius,
                ambient_dim,
                intrinsic_dim: 1,
            }) => match self.method {
                ConvolveMethod::Quadrature { min_nodes } => circle_quadrature_moments(
                    *radius,
                    *ambient_dim,
                    min_nodes,
                    x,
                    scale,
                    sigma,
                    kernel_dim,
                ),
                ConvolveMethod::MonteCarlo { samples, seed } => {
                    let bank = self.mc_bank(samples, seed)?;
                    bank_moments(bank, x, scale, sigma, kernel_dim)
                }
                ConvolveMethod::ClosedForm => {
                    return Err(ConvolveError::Unsupported(
                        "no closed form for the circle; use Quadrature or MonteCarlo".into(),
                    ))
                }
            },
            (DensityVariant::Mixture(parts), ManifoldSpec::DisjointUnion {
                parts: mparts, ..
            }) => {
                let _ = parts;
                let oracles = self.component_oracles()?;
                let mut sub = Vec::with_capacity(oracles.len());
                for (o, (_, w)) in oracles.iter().zip(mparts.iter()) {
                    let mut m = o.kernel_moments_dim(x, scale, sigma, kernel_dim)?;
                    m.log_mass += w.ln();
                    sub.push(m);
                }
                combine_moments(&sub, x.len())
            }
            _ => match self.method {
                ConvolveMethod::MonteCarlo { samples, seed } => {
                    let bank = self.mc_bank(samples, seed)?;
                    bank_moments(bank, x, scale, sigma, kernel_dim)
                }
                _ => {
                    return Err(ConvolveError::Unsupported(format!(
                        "no {:?} evaluation for this density; use MonteCarlo",
                        self.method
                    )))
                }
            },
        };
        if moments.log_mass.is_nan() || moments.e_sq_dist.is_nan() {
            return Err(ConvolveError::NonFinite {
                max_exponent: moments.log_mass,
            });
        }
        Ok(moments)
    }
}

fn weighted_atom_moments(
    atoms: &[DVector<f64>],
    log_weights: &[f64],
    x: &DVector<f64>,
    scale: f64,
    sigma: f64,
    kernel_dim: usize,
) -> GaussMoments {
    let delta = sigma.ln();
    let mut logw = Vec::with_capacity(atoms.len());
    let mut sq = Vec::with_capacity(atoms.len());
    for (a, lw) in atoms.iter().zip(log_weights) {
        let diff = x - a * scale;
        let s = diff.norm_squared();
        sq.push(s);
        logw.push(lw + ln_gauss_kernel(kernel_dim, s, delta));
    }
    let log_mass = log_sum_exp(&logw);
    let resp = softmax(&logw);
    let mut e_sq = 0.0;
    let mut mean = DVector::zeros(x.len());
    for ((a, r), s) in atoms.iter().zip(&resp).zip(&sq) {
        e_sq += r * s;
        mean += a * (*r * scale);
    }
    GaussMoments {
        log_mass,
        e_sq_dist: e_sq,
        mean_cx: mean,
    }
}

fn bank_moments(
    bank: &[DVector<f64>],
    x: &DVector<f64>,
    scale: f64,
    sigma: f64,
    kernel_dim: usize,
) -> GaussMoments {
    let lw = vec![-(bank.len() as f64).ln(); bank.len()];
    weighted_atom_moments(bank, &lw, x, scale, sigma, kernel_dim)
}

/// Composite trapezoid over the circle parameter. The rule is periodic, so
/// all node weights are equal.
fn circle_quadrature_moments(
    radius: f64,
    ambient_dim: usize,
    min_nodes: usize,
    x: &DVector<f64>,
    scale: f64,
    sigma: f64,
    kernel_dim: usize,
) -> GaussMoments {
    use std::f64::consts::PI;
    // >= 64 nodes per kernel width e^delta of parameter length, as the
    // kernel's effective support shrinks with delta.
    let adaptive = (64.0 * (scale * radius / sigma)).ceil();
    let n = (min_nodes.max(1024) as f64).max(adaptive).min(8e6) as usize;
    let dtheta = 2.0 * PI / n as f64;
    let ln_p = -(2.0 * PI * radius).ln();
    let ln_elem = ln_p + (radius * dtheta).ln();
    let delta = sigma.ln();

    let mut logw = Vec::with_capacity(n);
    let mut sq = Vec::with_capacity(n);
    let mut coords = Vec::with_capacity(n);
    for k in 0..n {
        let theta = dtheta * k as f64;
        let (c0, c1) = (radius * theta.cos(), radius * theta.sin());
        let mut s = (x[0] - scale * c0).powi(2) + (x[1] - scale * c1).powi(2);
        for i in 2..ambient_dim {
            s += x[i] * x[i];
        }
        sq.push(s);
        coords.push((c0, c1));
        logw.push(ln_elem + ln_gauss_kernel(kernel_dim, s, delta));
    }
    let log_mass = log_sum_exp(&logw);
    let resp = softmax(&logw);
    let mut e_sq = 0.0;
    let mut mean = DVector::zeros(x.len());
    for ((r, s), (c0, c1)) in resp.iter().zip(&sq).zip(&coords) {
        e_sq += r * s;
        mean[0] += r * scale * c0;
        mean[1] += r * scale * c1;
    }
    GaussMoments {
        log_mass,
        e_sq_dist: e_sq,
        mean_cx: mean,
    }
}

/// Closed-form moments for a Gaussian on an affine subspace convolved with
/// isotropic noise: the posterior over subspace coordinates stays Gaussian.
#[allow(clippy::too_many_arguments)]
fn affine_gaussian_moments(
    basis: &DMatrix<f64>,
    offset: &DVector<f64>,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    x: &DVector<f64>,
    scale: f64,
    sigma: f64,
    kernel_dim: usize,
) -> GaussMoments {
    let dim = x.len();
    let d = mean.len();
    let s2 = sigma * sigma;
    let y = x - offset * scale;
    let zy = basis.transpose() * &y;
    let ny_sq = (y.norm_squared() - zy.norm_squared()).max(0.0);

    // Marginal of the tangential coordinates: N(zy; c mean, c^2 cov + s2 I).
    let marg_cov = cov * (scale * scale) + DMatrix::identity(d, d) * s2;
    let log_tangential = crate::geometry::gaussian_log_pdf(&zy, &(mean * scale), &marg_cov);
    let normal_dims = (dim - d) as f64;
    let log_normal = -0.5 * normal_dims * (2.0 * std::f64::consts::PI * s2).ln()
        - 0.5 * ny_sq / s2;
    // Reweight the ambient-dim kernel constant to the requested kernel_dim.
    let delta = sigma.ln();
    let dim_shift = (dim as f64 - kernel_dim as f64)
        * (0.5 * (2.0 * std::f64::consts::PI).ln() + delta);
    let log_mass = log_tangential + log_normal + dim_shift;

    // Posterior over z: precision cov^-1 + (c^2/s2) I.
    let cov_inv = cov
        .clone()
        .cholesky()
        .expect("SPD covariance")
        .inverse();
    let precision = &cov_inv + DMatrix::identity(d, d) * (scale * scale / s2);
    let post_cov = precision
        .cholesky()
        .expect("SPD posterior precision")
        .inverse();
    let post_mean = &post_cov * (&cov_inv * mean + &zy * (scale / s2));

    let e_sq_dist =
        ny_sq + (&zy - &post_mean * scale).norm_squared() + scale * scale * post_cov.trace();
    let mean_cx = (basis * &post_mean + offset) * scale;
    GaussMoments {
        log_mass,
        e_sq_dist,
        mean_cx,
    }
}

fn combine_moments(parts: &[GaussMoments], dim: usize) -> GaussMoments {
    let logs: Vec<f64> = parts.iter().map(|m| m.log_mass).collect();
    let log_mass = log_sum_exp(&logs);
    let resp = softmax(&logs);
    let mut e_sq = 0.0;
    let mut mean = DVector::zeros(dim);
    for (m, r) in parts.iter().zip(&resp) {
        e_sq += r * m.e_sq_dist;
        mean += &m.mean_cx * *r;
    }
    GaussMoments {
        log_mass,
        e_sq_dist: e_sq,
        mean_cx: mean,
    }
}

// ---------------------------------------------------------------------------
// Ball probabilities and the uniform-convolution slope.
// ---------------------------------------------------------------------------

/// How ball probabilities are evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BallMethod {
    /// Closed forms: spherical caps, atoms, and mixtures thereof.
    Exact,
    /// Count fraction over a fixed sample bank shared across radii, with a
    /// Wilson interval. Shared banks make counts monotone in delta.
    MonteCarlo { samples: usize, seed: u64 },
    /// Unbiased importance-sampled Monte Carlo for uniform spheres: the
    /// polar angle is drawn log-uniformly so that small caps still receive
    /// samples. Plain count fractions have too few hits at strongly negative
    /// delta for slope estimation.
    ImportanceMc { samples: usize, seed: u64 },
}

/// A ball-probability value with uncertainty accounting.
#[derive(Debug, Clone, Copy)]
pub struct BallProb {
    pub value: f64,
    /// Standard error for stochastic methods, 0 for exact paths.
    pub stderr: f64,
    /// Wilson 95% interval for count-based estimates.
    pub wilson: Option<(f64, f64)>,
    /// Set when a Monte Carlo count registered no hits.
    pub no_hits: bool,
}

/// Which log-derivative the uniform-slope routine reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlopeForm {
    /// d/d delta log P(X in B(x, e^delta)); limit is the intrinsic dimension d.
    BallProbability,
    /// d/d delta log rho_U(x, delta) = slope of log P minus D; limit is d - D.
    RhoU,
}

/// Ball-probability oracle with a shared sample bank.
#[derive(Debug)]
pub struct BallOracle {
    density: DensitySpec,
    method: BallMethod,
    bank: OnceLock<Vec<DVector<f64>>>,
    /// (angle, importance weight) bank for `ImportanceMc`.
    angle_bank: OnceLock<Vec<(f64, f64)>>,
}

impl BallOracle {
    pub fn new(density: DensitySpec, method: BallMethod) -> Self {
        BallOracle {
            density,
            method,
            bank: OnceLock::new(),
            angle_bank: OnceLock::new(),
        }
    }

    pub fn density(&self) -> &DensitySpec {
        &self.density
    }

    /// P_{X ~ p}(X in B_D(x, e^delta)).
    pub fn probability(&self, x: &DVector<f64>, delta: f64) -> Result<BallProb, ConvolveError> {
        let r = delta.exp();
        if !(r > 0.0) {
            return Err(ConvolveError::Refused(format!(
                "ball radius must be positive, got exp({delta})"
            )));
        }
        match self.method {
            BallMethod::Exact => exact_ball_probability(&self.density, x, r),
            BallMethod::MonteCarlo { samples, seed } => {
                if self.bank.get().is_none() {
                    let b = self.density.sample(samples, seed)?;
                    let _ = self.bank.set(b);
                }
                let bank = self.bank.get().unwrap();
                let hits = bank.iter().filter(|p| (*p - x).norm() < r).count();
                let n = bank.len() as f64;
                let value = hits as f64 / n;
                let stderr = (value * (1.0 - value) / n).sqrt();
                Ok(BallProb {
                    value,
                    stderr,
                    wilson: Some(wilson_interval(hits as f64, n)),
                    no_hits: hits == 0,
                })
            }
            BallMethod::ImportanceMc { samples, seed } => {
                let (radius, d) = match self.density.manifold() {
                    ManifoldSpec::Sphere {
                        radius,
                        intrinsic_dim,
                        ..
                    } if matches!(self.density.variant(), DensityVariant::UniformOnCompact) => {
                        (*radius, *intrinsic_dim)
                    }
                    _ => {
                        return Err(ConvolveError::Unsupported(
                            "importance-sampled ball counting only applies to uniform spheres"
                                .into(),
                        ))
                    }
                };
                if !self.density.manifold().contains(x) {
                    return Err(ConvolveError::Unsupported(
                        "importance sampling needs the query point on the sphere".into(),
                    ));
                }
                if self.angle_bank.get().is_none() {
                    let _ = self.angle_bank.set(sphere_angle_bank(d, samples, seed));
                }
                let bank = self.angle_bank.get().unwrap();
                // theta* from the chord radius r.
                let u = (r / (2.0 * radius)).min(1.0);
                let theta_star = 2.0 * u.asin();
                let n = bank.len() as f64;
                let mut sum = 0.0;
                let mut sum_sq = 0.0;
                let mut hits = 0usize;
                for &(theta, w) in bank {
                    if theta < theta_star {
                        sum += w;
                        sum_sq += w * w;
                        hits += 1;
                    }
                }
                let value = (sum / n).min(1.0);
                let var = (sum_sq / n - (sum / n).powi(2)).max(0.0);
                let stderr = (var / n).sqrt();
                Ok(BallProb {
                    value,
                    stderr,
                    wilson: None,
                    no_hits: hits == 0,
                })
            }
        }
    }

    /// log rho_U(x, delta) = ln U_D - D delta + ln P(X in B(x, e^delta)).
    pub fn log_rho_uniform(&self, x: &DVector<f64>, delta: f64) -> Result<f64, ConvolveError> {
        let dim = self.density.ambient_dim();
        let p = self.probability(x, delta)?;
        if p.value <= 0.0 {
            return Err(ConvolveError::ZeroProbability(delta));
        }
        // U_D = 1 / vol(unit ball)
        Ok(-ln_unit_ball_volume(dim) - (dim as f64) * delta + p.value.ln())
    }

    /// d/d delta of the requested log form. Uses the closed-form derivative
    /// when the density is a uniform circle, a central difference of log P
    /// with step `h` otherwise.
    pub fn log_slope(
        &self,
        x: &DVector<f64>,
        delta: f64,
        h: f64,
        form: SlopeForm,
    ) -> Result<f64, ConvolveError> {
        let dim = self.density.ambient_dim() as f64;
        let offset = match form {
            SlopeForm::BallProbability => 0.0,
            SlopeForm::RhoU => -dim,
        };
        if self.method == BallMethod::Exact {
            if let (ManifoldSpec::Sphere {
                radius,
                intrinsic_dim: 1,
                ..
            }, DensityVariant::UniformOnCompact, true) = (
                self.density.manifold(),
                self.density.variant(),
                self.density.manifold().contains(x),
            ) {
                let u = delta.exp() / (2.0 * radius);
                if u < 1.0 {
                    // d/d delta log(2 asin(u) / pi) with u proportional to e^delta
                    return Ok(u / ((1.0 - u * u).sqrt() * u.asin()) + offset);
                }
                // ball covers the circle; P is constant
                return Ok(offset);
            }
            if let DensityVariant::Empirical = self.density.variant() {
                // Atom counts are flat in delta except at jump radii.
                let lo = self.probability(x, delta - 1e-9)?.value;
                let hi = self.probability(x, delta + 1e-9)?.value;
                if lo == hi && lo > 0.0 {
                    return Ok(offset);
                }
            }
        }
        if !(h > 0.0) {
            return Err(ConvolveError::BadStep(h));
        }
        let hi = self.probability(x, delta + h)?;
        let lo = self.probability(x, delta - h)?;
        if hi.value <= 0.0 {
            return Err(ConvolveError::ZeroProbability(delta + h));
        }
        if lo.value <= 0.0 {
            return Err(ConvolveError::ZeroProbability(delta - h));
        }
        Ok((hi.value.ln() - lo.value.ln()) / (2.0 * h) + offset)
    }
}

/// Log-uniform polar-angle bank with importance weights for a uniform
/// d-sphere; weights are the true angular density over the proposal density.
fn sphere_angle_bank(d: usize, samples: usize, seed: u64) -> Vec<(f64, f64)> {
    use rand::Rng;
    use std::f64::consts::PI;
    let theta_floor = 1e-9f64;
    let ln_span = (PI / theta_floor).ln();
    // Normalizer of sin^{d-1} over [0, pi].
    let b = sin_power_integral(PI, d as u32 - 1);
    let mut rng = crate::rng::seeded(seed);
    (0..samples)
        .map(|_| {
            let u: f64 = rng.gen();
            let theta = theta_floor * (u * ln_span).exp();
            let pdf = theta.sin().powi(d as i32 - 1) / b;
            let proposal = 1.0 / (theta * ln_span);
            (theta, pdf / proposal)
        })
        .collect()
}

/// int_0^x sin^k(t) dt by composite trapezoid (exact enough for cap areas).
fn sin_power_integral(x: f64, k: u32) -> f64 {
    match k {
        0 => x,
        1 => 1.0 - x.cos(),
        _ => {
            let n = 40_000;
            let dx = x / n as f64;
            let mut acc = 0.0;
            for i in 0..=n {
                let t = dx * i as f64;
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                acc += w * t.sin().powi(k as i32);
            }
            acc * dx
        }
    }
}

fn exact_ball_probability(
    density: &DensitySpec,
    x: &DVector<f64>,
    r: f64,
) -> Result<BallProb, ConvolveError> {
    let value = match (density.variant(), density.manifold()) {
        (DensityVariant::UniformOnCompact, ManifoldSpec::Sphere {
            radius,
            ambient_dim,
            intrinsic_dim,
        }) => {
            // Points of the sphere within r of x form a cap around the
            // projection of x; the cap angle comes from the law of cosines.
            // Works for any x, on the sphere or off it.
            let k = *intrinsic_dim as u32 - 1;
            let m = x.rows(0, (*intrinsic_dim + 1).min(*ambient_dim)).norm();
            let norm_sq = x.norm_squared();
            if m == 0.0 {
                // Equidistant from the whole sphere.
                if norm_sq + radius * radius <= r * r {
                    1.0
                } else {
                    0.0
                }
            } else {
                let c = (radius * radius + norm_sq - r * r) / (2.0 * radius * m);
                if c > 1.0 {
                    0.0
                } else if c < -1.0 {
                    1.0
                } else {
                    let theta_star = c.acos();
                    sin_power_integral(theta_star, k)
                        / sin_power_integral(std::f64::consts::PI, k)
                }
            }
        }
        (DensityVariant::Empirical, ManifoldSpec::PointSet { points }) => {
            let hits = points.iter().filter(|p| (*p - x).norm() < r).count();
            hits as f64 / points.len() as f64
        }
        (DensityVariant::Mixture(parts), ManifoldSpec::DisjointUnion {
            parts: mparts, ..
        }) => {
            let mut acc = 0.0;
            for (c, (_, w)) in parts.iter().zip(mparts.iter()) {
                acc += w * exact_ball_probability(c, x, r)?.value;
            }
            acc
        }
        (variant, manifold) => {
            return Err(ConvolveError::Unsupported(format!(
                "no exact ball probability for {variant:?} on {manifold:?}; use MonteCarlo"
            )))
        }
    };
    Ok(BallProb {
        value,
        stderr: 0.0,
        wilson: None,
        no_hits: value == 0.0,
    })
}

fn wilson_interval(hits: f64, n: f64) -> (f64, f64) {
    let z = 1.959963984540054f64; // 95%
    let p = hits / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * ((p * (1.0 - p) + z2 / (4.0 * n)) / n).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}
