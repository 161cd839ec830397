//! Score fields for diffusion marginals.
//!
//! For a data density p and schedule (psi, sigma), the marginal at time t is
//! p_t(y) = int p(x') N(y; psi(t) x', sigma^2(t) I) dx'. A [`ScoreField`]
//! evaluates log p_t, the score grad_y log p_t, and the trace of the score
//! Jacobian — exactly where the convolution has closed form or quadrature,
//! and by finite differences or Hutchinson probes otherwise.

use nalgebra::DVector;
use thiserror::Error;

use crate::convolve::{ConvolutionOracle, ConvolveError, ConvolveMethod, GaussMoments};
use crate::geometry::{DensitySpec, DensityVariant, GeometryError, ManifoldSpec};
use crate::numeric::softmax;
use crate::schedule::{ScheduleError, ScheduleSpec};

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error(transparent)]
    Convolve(#[from] ConvolveError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("mismatch: {0}")]
    Mismatch(String),
}

type LogDensityFn = dyn Fn(&DVector<f64>, f64) -> Result<f64, ScoreError> + Send + Sync;

/// Distribution of Hutchinson probe vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceProbe {
    Rademacher,
    Gaussian,
}

/// A stochastic trace estimate with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy)]
pub struct TraceEstimate {
    pub value: f64,
    pub stderr: f64,
    pub probes: usize,
}

/// A score field s(y, t) = grad_y log p_t(y).
pub enum ScoreField {
    /// Finite point set: p_t is an exact Gaussian mixture.
    MixtureAnalytic {
        oracle: ConvolutionOracle,
        schedule: ScheduleSpec,
    },
    /// Gaussian on an affine subspace: p_t stays Gaussian.
    AffineGaussianAnalytic {
        oracle: ConvolutionOracle,
        schedule: ScheduleSpec,
    },
    /// Uniform circle: kernel moments by adaptive trapezoid quadrature.
    CircleQuadrature {
        oracle: ConvolutionOracle,
        schedule: ScheduleSpec,
    },
    /// Mixture-of-fields combinator for disjoint unions. The combined score
    /// is the responsibility-weighted average of component scores, and the
    /// combined trace picks up a covariance correction.
    Union {
        parts: Vec<(f64, ScoreField)>,
        schedule: ScheduleSpec,
    },
    /// Black-box log density differentiated by central differences.
    NumericFd {
        log_density: Box<LogDensityFn>,
        schedule: ScheduleSpec,
        ambient_dim: usize,
        step: f64,
    },
}

impl std::fmt::Debug for ScoreField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ScoreField::MixtureAnalytic { .. } => f.write_str("MixtureAnalytic"),
            ScoreField::AffineGaussianAnalytic { .. } => f.write_str("AffineGaussianAnalytic"),
            ScoreField::CircleQuadrature { .. } => f.write_str("CircleQuadrature"),
            ScoreField::Union { parts, .. } => {
                write!(f, "Union({})", parts.len())
            }
            ScoreField::NumericFd { step, .. } => write!(f, "NumericFd(step {step})"),
        }
    }
}

impl ScoreField {
    pub fn mixture_analytic(
        density: DensitySpec,
        schedule: ScheduleSpec,
    ) -> Result<Self, ScoreError> {
        if !matches!(density.variant(), DensityVariant::Empirical) {
            return Err(ScoreError::Mismatch(
                "MixtureAnalytic needs an empirical point-set density".into(),
            ));
        }
        Ok(ScoreField::MixtureAnalytic {
            oracle: ConvolutionOracle::new(density, ConvolveMethod::ClosedForm)?,
            schedule,
        })
    }

    pub fn affine_gaussian(
        density: DensitySpec,
        schedule: ScheduleSpec,
    ) -> Result<Self, ScoreError> {
        if !matches!(density.variant(), DensityVariant::GaussianOnAffine { .. }) {
            return Err(ScoreError::Mismatch(
                "AffineGaussianAnalytic needs a Gaussian-on-affine density".into(),
            ));
        }
        Ok(ScoreField::AffineGaussianAnalytic {
            oracle: ConvolutionOracle::new(density, ConvolveMethod::ClosedForm)?,
            schedule,
        })
    }

    pub fn circle_quadrature(
        density: DensitySpec,
        schedule: ScheduleSpec,
        min_nodes: usize,
    ) -> Result<Self, ScoreError> {
        let is_circle = matches!(
            (density.variant(), density.manifold()),
            (
                DensityVariant::UniformOnCompact,
                ManifoldSpec::Sphere {
                    intrinsic_dim: 1,
                    ..
                }
            )
        );
        if !is_circle {
            return Err(ScoreError::Mismatch(
                "CircleQuadrature needs a uniform circle density".into(),
            ));
        }
        Ok(ScoreField::CircleQuadrature {
            oracle: ConvolutionOracle::new(density, ConvolveMethod::Quadrature { min_nodes })?,
            schedule,
        })
    }

    pub fn union_of(parts: Vec<(f64, ScoreField)>) -> Result<Self, ScoreError> {
        if parts.len() < 2 {
            return Err(ScoreError::Mismatch("union needs >= 2 components".into()));
        }
        let schedule = *parts[0].1.schedule();
        if parts.iter().any(|(_, p)| *p.schedule() != schedule) {
            return Err(ScoreError::Mismatch(
                "union components use different schedules".into(),
            ));
        }
        let dim = parts[0].1.ambient_dim();
        if parts.iter().any(|(_, p)| p.ambient_dim() != dim) {
            return Err(ScoreError::Mismatch(
                "union components have different ambient dimensions".into(),
            ));
        }
        let wsum: f64 = parts.iter().map(|(w, _)| w).sum();
        if parts.iter().any(|(w, _)| *w <= 0.0) || (wsum - 1.0).abs() > 1e-12 {
            return Err(ScoreError::Mismatch(format!(
                "union weights must be positive and sum to 1, got sum {wsum}"
            )));
        }
        Ok(ScoreField::Union { parts, schedule })
    }

    pub fn numeric_fd(
        log_density: Box<LogDensityFn>,
        schedule: ScheduleSpec,
        ambient_dim: usize,
        step: f64,
    ) -> Result<Self, ScoreError> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(ScoreError::Mismatch(format!(
                "finite-difference step must be positive, got {step}"
            )));
        }
        Ok(ScoreField::NumericFd {
            log_density,
            schedule,
            ambient_dim,
            step,
        })
    }

    /// Pick the exact field for a catalog density, recursing into mixtures.
    pub fn for_density(
        density: &DensitySpec,
        schedule: ScheduleSpec,
        min_nodes: usize,
    ) -> Result<Self, ScoreError> {
        match density.variant() {
            DensityVariant::Empirical => Self::mixture_analytic(density.clone(), schedule),
            DensityVariant::GaussianOnAffine { .. } => {
                Self::affine_gaussian(density.clone(), schedule)
            }
            DensityVariant::UniformOnCompact => match density.manifold() {
                ManifoldSpec::Sphere {
                    intrinsic_dim: 1, ..
                } => Self::circle_quadrature(density.clone(), schedule, min_nodes),
                other => Err(ScoreError::Unsupported(format!(
                    "no analytic score field for a uniform density on {other:?}"
                ))),
            },
            DensityVariant::Mixture(parts) => {
                let weights = match density.manifold() {
                    ManifoldSpec::DisjointUnion { parts: mp, .. } => {
                        mp.iter().map(|(_, w)| *w).collect::<Vec<_>>()
                    }
                    _ => {
                        return Err(ScoreError::Mismatch(
                            "mixture density without a union manifold".into(),
                        ))
                    }
                };
                let fields = parts
                    .iter()
                    .zip(weights)
                    .map(|(p, w)| Self::for_density(p, schedule, min_nodes).map(|f| (w, f)))
                    .collect::<Result<Vec<_>, _>>()?;
                Self::union_of(fields)
            }
        }
    }

    pub fn schedule(&self) -> &ScheduleSpec {
        match self {
            ScoreField::MixtureAnalytic { schedule, .. }
            | ScoreField::AffineGaussianAnalytic { schedule, .. }
            | ScoreField::CircleQuadrature { schedule, .. }
            | ScoreField::Union { schedule, .. }
            | ScoreField::NumericFd { schedule, .. } => schedule,
        }
    }

    pub fn ambient_dim(&self) -> usize {
        match self {
            ScoreField::MixtureAnalytic { oracle, .. }
            | ScoreField::AffineGaussianAnalytic { oracle, .. }
            | ScoreField::CircleQuadrature { oracle, .. } => oracle.ambient_dim(),
            ScoreField::Union { parts, .. } => parts[0].1.ambient_dim(),
            ScoreField::NumericFd { ambient_dim, .. } => *ambient_dim,
        }
    }

    fn moments(&self, y: &DVector<f64>, t: f64) -> Result<GaussMoments, ScoreError> {
        let sched = self.schedule();
        let (psi, sigma) = (sched.psi(t)?, sched.sigma(t)?);
        match self {
            ScoreField::MixtureAnalytic { oracle, .. }
            | ScoreField::AffineGaussianAnalytic { oracle, .. }
            | ScoreField::CircleQuadrature { oracle, .. } => {
                Ok(oracle.kernel_moments(y, psi, sigma)?)
            }
            _ => Err(ScoreError::Unsupported(
                "kernel moments only exist for analytic fields".into(),
            )),
        }
    }

    /// log p_t(y).
    pub fn log_density(&self, y: &DVector<f64>, t: f64) -> Result<f64, ScoreError> {
        match self {
            ScoreField::Union { parts, .. } => {
                let logs = parts
                    .iter()
                    .map(|(w, p)| p.log_density(y, t).map(|l| l + w.ln()))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(crate::numeric::log_sum_exp(&logs))
            }
            ScoreField::NumericFd { log_density, .. } => log_density(y, t),
            _ => Ok(self.moments(y, t)?.log_mass),
        }
    }

    /// s(y, t) = grad_y log p_t(y).
    pub fn score(&self, y: &DVector<f64>, t: f64) -> Result<DVector<f64>, ScoreError> {
        match self {
            ScoreField::Union { .. } => {
                let (resp, scores, _) = self.union_parts(y, t)?;
                let mut s = DVector::zeros(y.len());
                for (r, si) in resp.iter().zip(&scores) {
                    s += si * *r;
                }
                Ok(s)
            }
            ScoreField::NumericFd {
                log_density, step, ..
            } => {
                let h = *step;
                let mut s = DVector::zeros(y.len());
                let mut yy = y.clone();
                for i in 0..y.len() {
                    yy[i] = y[i] + h;
                    let hi = log_density(&yy, t)?;
                    yy[i] = y[i] - h;
                    let lo = log_density(&yy, t)?;
                    yy[i] = y[i];
                    s[i] = (hi - lo) / (2.0 * h);
                }
                Ok(s)
            }
            _ => {
                let sigma = self.schedule().sigma(t)?;
                let m = self.moments(y, t)?;
                Ok((m.mean_cx - y) / (sigma * sigma))
            }
        }
    }

    /// Trace of the score Jacobian, tr grad_y s(y, t) — exact for analytic
    /// fields, a second-difference Laplacian of log p_t for `NumericFd`.
    pub fn exact_trace(&self, y: &DVector<f64>, t: f64) -> Result<f64, ScoreError> {
        match self {
            ScoreField::Union { .. } => {
                // tr grad s = sum_j r_j (tr grad s_j + ||s_j||^2) - ||s||^2,
                // the usual mixture-of-experts covariance correction.
                let (resp, scores, traces) = self.union_parts(y, t)?;
                let mut s = DVector::zeros(y.len());
                let mut acc = 0.0;
                for ((r, si), tr) in resp.iter().zip(&scores).zip(&traces) {
                    acc += r * (tr + si.norm_squared());
                    s += si * *r;
                }
                Ok(acc - s.norm_squared())
            }
            ScoreField::NumericFd {
                log_density, step, ..
            } => {
                let h = *step;
                let mid = log_density(y, t)?;
                let mut acc = 0.0;
                let mut yy = y.clone();
                for i in 0..y.len() {
                    yy[i] = y[i] + h;
                    let hi = log_density(&yy, t)?;
                    yy[i] = y[i] - h;
                    let lo = log_density(&yy, t)?;
                    yy[i] = y[i];
                    acc += (hi - 2.0 * mid + lo) / (h * h);
                }
                Ok(acc)
            }
            _ => {
                // For a Gaussian-kernel moment field:
                // tr grad s = -D/sigma^2 + (E_w||cX'-y||^2 - ||E_w[cX']-y||^2)/sigma^4.
                let sigma = self.schedule().sigma(t)?;
                let s2 = sigma * sigma;
                let m = self.moments(y, t)?;
                let dim = y.len() as f64;
                let centered = (&m.mean_cx - y).norm_squared();
                Ok(-dim / s2 + (m.e_sq_dist - centered) / (s2 * s2))
            }
        }
    }

    /// Hutchinson trace estimate: mean over probes of eps^T J eps, with
    /// J eps approximated by a central directional difference of the score.
    pub fn hutchinson_trace(
        &self,
        y: &DVector<f64>,
        t: f64,
        probes: usize,
        seed: u64,
        probe: TraceProbe,
    ) -> Result<TraceEstimate, ScoreError> {
        use rand::Rng;
        if probes == 0 {
            return Err(ScoreError::Mismatch("need at least one probe".into()));
        }
        let mut rng = crate::rng::seeded(seed);
        let dim = y.len();
        let h = 1e-4 * (1.0 + y.norm());
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..probes {
            let eps = DVector::from_fn(dim, |_, _| match probe {
                TraceProbe::Rademacher => {
                    if rng.gen::<bool>() {
                        1.0
                    } else {
                        -1.0
                    }
                }
                TraceProbe::Gaussian => {
                    rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng)
                }
            });
            let s_hi = self.score(&(y + &eps * h), t)?;
            let s_lo = self.score(&(y - &eps * h), t)?;
            let jeps = (s_hi - s_lo) / (2.0 * h);
            let est = eps.dot(&jeps);
            sum += est;
            sum_sq += est * est;
        }
        let n = probes as f64;
        let mean = sum / n;
        let var = ((sum_sq / n - mean * mean) * n / (n - 1.0).max(1.0)).max(0.0);
        Ok(TraceEstimate {
            value: mean,
            stderr: (var / n).sqrt(),
            probes,
        })
    }

    /// Deterministic finite-difference trace: sum of central differences of
    /// the score components along coordinate axes.
    pub fn fd_trace(&self, y: &DVector<f64>, t: f64, step: f64) -> Result<f64, ScoreError> {
        if !(step > 0.0) {
            return Err(ScoreError::Mismatch(format!(
                "finite-difference step must be positive, got {step}"
            )));
        }
        let mut acc = 0.0;
        let mut yy = y.clone();
        for i in 0..y.len() {
            yy[i] = y[i] + step;
            let hi = self.score(&yy, t)?;
            yy[i] = y[i] - step;
            let lo = self.score(&yy, t)?;
            yy[i] = y[i];
            acc += (hi[i] - lo[i]) / (2.0 * step);
        }
        Ok(acc)
    }

    fn union_parts(
        &self,
        y: &DVector<f64>,
        t: f64,
    ) -> Result<(Vec<f64>, Vec<DVector<f64>>, Vec<f64>), ScoreError> {
        let parts = match self {
            ScoreField::Union { parts, .. } => parts,
            _ => unreachable!("union_parts on a non-union field"),
        };
        let mut logs = Vec::with_capacity(parts.len());
        let mut scores = Vec::with_capacity(parts.len());
        let mut traces = Vec::with_capacity(parts.len());
        for (w, p) in parts {
            logs.push(w.ln() + p.log_density(y, t)?);
            scores.push(p.score(y, t)?);
            traces.push(p.exact_trace(y, t)?);
        }
        Ok((softmax(&logs), scores, traces))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convolve::ConvolutionOracle;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn ve() -> ScheduleSpec {
        ScheduleSpec::ve(0.01, 50.0).unwrap()
    }

    fn vp() -> ScheduleSpec {
        ScheduleSpec::vp(0.1, 20.0).unwrap()
    }

    fn atoms(points: Vec<Vec<f64>>) -> DensitySpec {
        DensitySpec::empirical(
            ManifoldSpec::point_set(points.into_iter().map(DVector::from_vec).collect()).unwrap(),
        )
        .unwrap()
    }

    fn circle() -> DensitySpec {
        DensitySpec::uniform(ManifoldSpec::circle(1.0).unwrap()).unwrap()
    }

    #[test]
    fn point_mass_score_is_gaussian_score() {
        // Single atom at the origin, VE: p_t = N(0, sigma^2 I).
        let f = ScoreField::mixture_analytic(atoms(vec![vec![0.0, 0.0]]), ve()).unwrap();
        let t = 0.4;
        let sigma = ve().sigma(t).unwrap();
        let y = DVector::from_vec(vec![0.3, -0.7]);
        let s = f.score(&y, t).unwrap();
        assert_relative_eq!(s[0], -y[0] / (sigma * sigma), max_relative = 1e-12);
        assert_relative_eq!(s[1], -y[1] / (sigma * sigma), max_relative = 1e-12);
        assert_relative_eq!(
            f.exact_trace(&y, t).unwrap(),
            -2.0 / (sigma * sigma),
            max_relative = 1e-12
        );
    }

    #[test]
    fn correspondence_between_noised_density_and_marginal() {
        // log rho_N(x, delta) = D log psi(t) + log p_t(psi(t) x, t) with
        // t = t_of_delta(delta), for both schedule families.
        let density = atoms(vec![vec![1.0, 0.0], vec![-1.0, 0.5]]);
        let oracle = ConvolutionOracle::new(density.clone(), ConvolveMethod::ClosedForm).unwrap();
        let x = DVector::from_vec(vec![0.9, 0.1]);
        for sched in [ve(), vp()] {
            let field = ScoreField::mixture_analytic(density.clone(), sched).unwrap();
            for &delta in &[-4.0, -2.0, -0.5, 0.0] {
                let t = sched.t_of_delta(delta).unwrap();
                let psi = sched.psi(t).unwrap();
                let lhs = oracle.log_rho_gauss(&x, delta).unwrap();
                let rhs =
                    2.0 * psi.ln() + field.log_density(&(&x * psi), t).unwrap();
                assert!(
                    (lhs - rhs).abs() < 1e-8,
                    "{sched:?} delta {delta}: {lhs} vs {rhs}"
                );
            }
        }
    }

    #[test]
    fn exact_trace_matches_fd_trace() {
        let f =
            ScoreField::mixture_analytic(atoms(vec![vec![1.0, 0.0], vec![-1.0, 0.0]]), ve())
                .unwrap();
        let y = DVector::from_vec(vec![0.2, 0.6]);
        let t = 0.5;
        let exact = f.exact_trace(&y, t).unwrap();
        let fd = f.fd_trace(&y, t, 1e-5).unwrap();
        assert!((exact - fd).abs() < 1e-4, "exact {exact} fd {fd}");
    }

    #[test]
    fn circle_field_trace_matches_fd() {
        let f = ScoreField::circle_quadrature(circle(), ve(), 4096).unwrap();
        let y = DVector::from_vec(vec![1.1, 0.2]);
        let t = 0.5;
        let exact = f.exact_trace(&y, t).unwrap();
        let fd = f.fd_trace(&y, t, 1e-5).unwrap();
        assert!((exact - fd).abs() < 1e-4, "exact {exact} fd {fd}");
    }

    #[test]
    fn affine_gaussian_field_matches_numeric_fd() {
        let basis = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let m = ManifoldSpec::affine(basis, DVector::zeros(3)).unwrap();
        let density =
            DensitySpec::gaussian_on_affine(m, DVector::zeros(2), DMatrix::identity(2, 2))
                .unwrap();
        let analytic = ScoreField::affine_gaussian(density.clone(), ve()).unwrap();
        let oracle = ConvolutionOracle::new(density, ConvolveMethod::ClosedForm).unwrap();
        let sched = ve();
        let fd = ScoreField::numeric_fd(
            Box::new(move |y: &DVector<f64>, t: f64| {
                let (psi, sigma) = (sched.psi(t)?, sched.sigma(t)?);
                Ok(oracle.kernel_moments(y, psi, sigma)?.log_mass)
            }),
            ve(),
            3,
            1e-5,
        )
        .unwrap();
        let y = DVector::from_vec(vec![0.4, -0.3, 0.2]);
        let t = 0.6;
        let sa = analytic.score(&y, t).unwrap();
        let sf = fd.score(&y, t).unwrap();
        assert!((sa - &sf).norm() < 1e-5);
        let ta = analytic.exact_trace(&y, t).unwrap();
        let tf = fd.exact_trace(&y, t).unwrap();
        assert!((ta - tf).abs() < 1e-4, "analytic {ta} fd {tf}");
    }

    #[test]
    fn union_equals_flat_mixture_of_atoms() {
        // A union of two single-atom fields must agree exactly with the
        // two-atom analytic field.
        let flat = ScoreField::mixture_analytic(
            atoms(vec![vec![1.0, 0.0], vec![-1.0, 0.0]]),
            ve(),
        )
        .unwrap();
        let union = ScoreField::union_of(vec![
            (
                0.5,
                ScoreField::mixture_analytic(atoms(vec![vec![1.0, 0.0]]), ve()).unwrap(),
            ),
            (
                0.5,
                ScoreField::mixture_analytic(atoms(vec![vec![-1.0, 0.0]]), ve()).unwrap(),
            ),
        ])
        .unwrap();
        let y = DVector::from_vec(vec![0.3, 0.4]);
        for &t in &[0.2, 0.5, 0.9] {
            assert_relative_eq!(
                flat.log_density(&y, t).unwrap(),
                union.log_density(&y, t).unwrap(),
                max_relative = 1e-12
            );
            let sf = flat.score(&y, t).unwrap();
            let su = union.score(&y, t).unwrap();
            assert!((sf - su).norm() < 1e-10);
            assert_relative_eq!(
                flat.exact_trace(&y, t).unwrap(),
                union.exact_trace(&y, t).unwrap(),
                max_relative = 1e-10
            );
        }
    }

    #[test]
    fn union_score_norm_obeys_jensen() {
        // ||sum r_j s_j||^2 <= sum r_j ||s_j||^2, so the covariance
        // correction in the union trace is nonnegative.
        let a = ScoreField::mixture_analytic(atoms(vec![vec![2.0, 0.0]]), ve()).unwrap();
        let b = ScoreField::mixture_analytic(atoms(vec![vec![-2.0, 0.0]]), ve()).unwrap();
        let y = DVector::from_vec(vec![0.1, 0.0]);
        let t = 0.7;
        let (resp, scores, _) = {
            let u = ScoreField::union_of(vec![
                (
                    0.5,
                    ScoreField::mixture_analytic(atoms(vec![vec![2.0, 0.0]]), ve()).unwrap(),
                ),
                (
                    0.5,
                    ScoreField::mixture_analytic(atoms(vec![vec![-2.0, 0.0]]), ve()).unwrap(),
                ),
            ])
            .unwrap();
            u.union_parts(&y, t).unwrap()
        };
        let combined: DVector<f64> = &scores[0] * resp[0] + &scores[1] * resp[1];
        let avg_norm = resp[0] * scores[0].norm_squared() + resp[1] * scores[1].norm_squared();
        assert!(combined.norm_squared() <= avg_norm + 1e-12);
        let _ = (a, b);
    }

    #[test]
    fn hutchinson_is_unbiased_for_the_exact_trace() {
        let f = ScoreField::mixture_analytic(
            atoms(vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]),
            ve(),
        )
        .unwrap();
        let y = DVector::from_vec(vec![0.3, 0.2, -0.1]);
        let t = 0.6;
        let exact = f.exact_trace(&y, t).unwrap();
        for probe in [TraceProbe::Rademacher, TraceProbe::Gaussian] {
            let est = f.hutchinson_trace(&y, t, 4000, 11, probe).unwrap();
            assert!(
                (est.value - exact).abs() < 5.0 * est.stderr.max(1e-6),
                "{probe:?}: estimate {} vs exact {exact} (stderr {})",
                est.value,
                est.stderr
            );
        }
    }

    #[test]
    fn for_density_dispatch() {
        assert!(matches!(
            ScoreField::for_density(&circle(), ve(), 1024).unwrap(),
            ScoreField::CircleQuadrature { .. }
        ));
        assert!(matches!(
            ScoreField::for_density(&atoms(vec![vec![0.0, 0.0]]), ve(), 1024).unwrap(),
            ScoreField::MixtureAnalytic { .. }
        ));
        let sphere2 =
            DensitySpec::uniform(ManifoldSpec::sphere(1.0, 3, 2).unwrap()).unwrap();
        assert!(ScoreField::for_density(&sphere2, ve(), 1024).is_err());
    }

    #[test]
    fn schedule_mismatch_rejected() {
        let a = ScoreField::mixture_analytic(atoms(vec![vec![0.0, 0.0]]), ve()).unwrap();
        let b = ScoreField::mixture_analytic(atoms(vec![vec![1.0, 0.0]]), vp()).unwrap();
        assert!(ScoreField::union_of(vec![(0.5, a), (0.5, b)]).is_err());
    }
}
