//! LID estimators.
//!
//! Four estimators share a common output shape:
//! - `flipd`: D + sigma^2(t) (tr grad s + ||s||^2) evaluated at one delta_0,
//!   using a score field;
//! - `uniform_slope`: the log-derivative of the ball probability, whose
//!   small-radius limit is the intrinsic dimension;
//! - `lidl_regress`: OLS slope of the Gaussian-noised log density over a
//!   delta grid, shifted by D;
//! - `ball_count_regress`: OLS slope of smoothed log ball counts from a
//!   sample bank over a delta grid.

use nalgebra::DVector;
use thiserror::Error;

use crate::convolve::{BallOracle, ConvolutionOracle, ConvolveError, SlopeForm};
use crate::schedule::ScheduleError;
use crate::score::{ScoreError, ScoreField, TraceProbe};

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Convolve(#[from] ConvolveError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("insufficient data: {0}")]
    Insufficient(String),
}

/// Which estimator produced a value; `name` is the tag used in CSV output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    Flipd,
    UniformSlope,
    Lidl,
    BallCount,
}

impl EstimatorKind {
    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::Flipd => "flipd",
            EstimatorKind::UniformSlope => "uniform_slope",
            EstimatorKind::Lidl => "lidl",
            EstimatorKind::BallCount => "ball_count",
        }
    }
}

/// Per-estimate diagnostics; fields are filled where they make sense.
#[derive(Debug, Clone, Copy, Default)]
pub struct Diagnostics {
    pub score_norm_sq: Option<f64>,
    pub trace: Option<f64>,
    pub stderr: Option<f64>,
}

/// A single LID estimate.
#[derive(Debug, Clone)]
pub struct LidEstimate {
    pub value: f64,
    pub estimator: EstimatorKind,
    pub delta_used: f64,
    pub diagnostics: Diagnostics,
}

/// An OLS fit of y on x over a delta grid.
#[derive(Debug, Clone)]
pub struct RegressionFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub residual_rms: f64,
    pub grid: Vec<f64>,
}

/// How the score-Jacobian trace inside `flipd` is evaluated.
#[derive(Debug, Clone, Copy)]
pub enum TraceMode {
    Exact,
    Hutchinson {
        probes: usize,
        seed: u64,
        probe: TraceProbe,
    },
    Fd {
        step: f64,
    },
}

/// nu(s, x, t(delta_0)) = sigma^2 (tr grad s(psi x, t) + ||s(psi x, t)||^2).
pub fn nu(
    field: &ScoreField,
    x: &DVector<f64>,
    delta0: f64,
    mode: TraceMode,
) -> Result<(f64, Diagnostics), EstimatorError> {
    let sched = field.schedule();
    let t = sched.t_of_delta(delta0)?;
    let psi = sched.psi(t)?;
    let sigma = sched.sigma(t)?;
    let y = x * psi;
    let s = field.score(&y, t)?;
    let norm_sq = s.norm_squared();
    let (trace, stderr) = match mode {
        TraceMode::Exact => (field.exact_trace(&y, t)?, None),
        TraceMode::Hutchinson {
            probes,
            seed,
            probe,
        } => {
            let est = field.hutchinson_trace(&y, t, probes, seed, probe)?;
            (est.value, Some(sigma * sigma * est.stderr))
        }
        TraceMode::Fd { step } => (field.fd_trace(&y, t, step)?, None),
    };
    let value = sigma * sigma * (trace + norm_sq);
    Ok((
        value,
        Diagnostics {
            score_norm_sq: Some(norm_sq),
            trace: Some(trace),
            stderr,
        },
    ))
}

/// FLIPD(x, delta_0) = D + nu(s, x, t(delta_0)).
pub fn flipd(
    field: &ScoreField,
    x: &DVector<f64>,
    delta0: f64,
    mode: TraceMode,
) -> Result<LidEstimate, EstimatorError> {
    let (v, diagnostics) = nu(field, x, delta0, mode)?;
    Ok(LidEstimate {
        value: field.ambient_dim() as f64 + v,
        estimator: EstimatorKind::Flipd,
        delta_used: delta0,
        diagnostics,
    })
}

/// Mean of FLIPD over a delta grid. This averaging is a robustness
/// convenience, not the pointwise definition; the single-delta form is the
/// canonical one.
pub fn flipd_grid_mean(
    field: &ScoreField,
    x: &DVector<f64>,
    grid: &[f64],
    mode: TraceMode,
) -> Result<LidEstimate, EstimatorError> {
    if grid.is_empty() {
        return Err(EstimatorError::Insufficient("empty delta grid".into()));
    }
    let mut acc = 0.0;
    for &d in grid {
        acc += flipd(field, x, d, mode)?.value;
    }
    Ok(LidEstimate {
        value: acc / grid.len() as f64,
        estimator: EstimatorKind::Flipd,
        delta_used: grid[grid.len() / 2],
        diagnostics: Diagnostics::default(),
    })
}

/// d/d delta log P(X in B(x, e^delta)) at one delta; tends to the intrinsic
/// dimension as delta -> -inf.
pub fn uniform_slope(
    ball: &BallOracle,
    x: &DVector<f64>,
    delta: f64,
    h: f64,
) -> Result<LidEstimate, EstimatorError> {
    let v = ball.log_slope(x, delta, h, SlopeForm::BallProbability)?;
    Ok(LidEstimate {
        value: v,
        estimator: EstimatorKind::UniformSlope,
        delta_used: delta,
        diagnostics: Diagnostics::default(),
    })
}

/// LIDL regression: OLS of log rho_N(x, delta) on delta over the grid; the
/// estimate is D + slope.
pub fn lidl_regress(
    oracle: &ConvolutionOracle,
    x: &DVector<f64>,
    grid: &[f64],
) -> Result<(LidEstimate, RegressionFit), EstimatorError> {
    let ys = grid
        .iter()
        .map(|&d| oracle.log_rho_gauss(x, d))
        .collect::<Result<Vec<_>, _>>()?;
    let fit = ols(grid, &ys)?;
    let est = LidEstimate {
        value: oracle.ambient_dim() as f64 + fit.slope,
        estimator: EstimatorKind::Lidl,
        delta_used: grid[grid.len() / 2],
        diagnostics: Diagnostics {
            stderr: Some(fit.slope_stderr),
            ..Default::default()
        },
    };
    Ok((est, fit))
}

/// Ball-count regression on an empirical sample bank: OLS slope of
/// log((k(delta) + 1/2) / n) on delta, keeping only grid points with at
/// least `k_min` neighbors. The +1/2 smoothing keeps small counts usable.
pub fn ball_count_regress(
    bank: &[DVector<f64>],
    x: &DVector<f64>,
    grid: &[f64],
    k_min: usize,
) -> Result<(LidEstimate, RegressionFit), EstimatorError> {
    if bank.is_empty() {
        return Err(EstimatorError::Insufficient("empty sample bank".into()));
    }
    let n = bank.len() as f64;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &d in grid {
        let r = d.exp();
        let k = bank.iter().filter(|p| (*p - x).norm() < r).count();
        if k >= k_min {
            xs.push(d);
            ys.push(((k as f64 + 0.5) / n).ln());
        }
    }
    if xs.len() < 2 {
        return Err(EstimatorError::Insufficient(format!(
            "only {} grid points have >= {k_min} neighbors",
            xs.len()
        )));
    }
    let fit = ols(&xs, &ys)?;
    let est = LidEstimate {
        value: fit.slope,
        estimator: EstimatorKind::BallCount,
        delta_used: xs[xs.len() / 2],
        diagnostics: Diagnostics {
            stderr: Some(fit.slope_stderr),
            ..Default::default()
        },
    };
    Ok((est, fit))
}

/// Ordinary least squares of ys on xs via the normal equations.
pub fn ols(xs: &[f64], ys: &[f64]) -> Result<RegressionFit, EstimatorError> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(EstimatorError::Insufficient(format!(
            "OLS needs >= 2 paired observations, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len() as f64;
    let xm = xs.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - xm) * (x - xm);
        sxy += (x - xm) * (y - ym);
    }
    if sxx == 0.0 {
        return Err(EstimatorError::Insufficient(
            "degenerate grid: all abscissae equal".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let mut ss_res = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        let r = y - (intercept + slope * x);
        ss_res += r * r;
    }
    let residual_rms = (ss_res / n).sqrt();
    let slope_stderr = if xs.len() > 2 {
        (ss_res / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok(RegressionFit {
        slope,
        intercept,
        slope_stderr,
        residual_rms,
        grid: xs.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convolve::{BallMethod, ConvolveMethod};
    use crate::geometry::{DensitySpec, ManifoldSpec};
    use crate::schedule::ScheduleSpec;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn ve() -> ScheduleSpec {
        ScheduleSpec::ve(0.001, 50.0).unwrap()
    }

    fn vp() -> ScheduleSpec {
        ScheduleSpec::vp(0.1, 20.0).unwrap()
    }

    fn circle() -> DensitySpec {
        DensitySpec::uniform(ManifoldSpec::circle(1.0).unwrap()).unwrap()
    }

    fn atoms(points: Vec<Vec<f64>>) -> DensitySpec {
        DensitySpec::empirical(
            ManifoldSpec::point_set(points.into_iter().map(DVector::from_vec).collect()).unwrap(),
        )
        .unwrap()
    }

    fn plane_gaussian() -> DensitySpec {
        let basis = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let m = ManifoldSpec::affine(basis, DVector::zeros(3)).unwrap();
        DensitySpec::gaussian_on_affine(m, DVector::zeros(2), DMatrix::identity(2, 2)).unwrap()
    }

    #[test]
    fn ols_recovers_exact_line() {
        let xs: Vec<f64> = (0..20).map(|k| -4.0 + 0.2 * k as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x - 1.5).collect();
        let fit = ols(&xs, &ys).unwrap();
        assert_relative_eq!(fit.slope, 3.0, max_relative = 1e-12);
        assert_relative_eq!(fit.intercept, -1.5, max_relative = 1e-12);
        assert!(fit.residual_rms < 1e-12);
        // Normal-equation residuals vanish at the optimum.
        let mut r0 = 0.0;
        let mut r1 = 0.0;
        for (&x, &y) in xs.iter().zip(&ys) {
            let r = y - (fit.intercept + fit.slope * x);
            r0 += r;
            r1 += r * x;
        }
        assert!(r0.abs() < 1e-10 && r1.abs() < 1e-10);
    }

    #[test]
    fn flipd_equals_derivative_identity_on_circle() {
        // The score form D + sigma^2 (tr grad s + ||s||^2) must match
        // D + d/d delta log rho_N pointwise, not just in the limit.
        let field = ScoreField::circle_quadrature(circle(), ve(), 4096).unwrap();
        let oracle =
            ConvolutionOracle::new(circle(), ConvolveMethod::Quadrature { min_nodes: 4096 })
                .unwrap();
        let x = DVector::from_vec(vec![1.0, 0.0]);
        for k in 0..33 {
            let delta = -6.0 + 6.0 * k as f64 / 32.0;
            let lhs = flipd(&field, &x, delta, TraceMode::Exact).unwrap().value;
            let rhs = 2.0 + oracle.dlogrho_ddelta_gauss(&x, delta).unwrap();
            assert!(
                (lhs - rhs).abs() < 1e-6,
                "delta {delta}: flipd {lhs} vs derivative {rhs}"
            );
        }
    }

    #[test]
    fn flipd_schedule_invariance() {
        // FLIPD depends on the schedule only through delta.
        let density = atoms(vec![vec![1.0, 0.0], vec![-1.0, 0.3]]);
        let fe = ScoreField::mixture_analytic(density.clone(), ve()).unwrap();
        let fp = ScoreField::mixture_analytic(density, vp()).unwrap();
        let x = DVector::from_vec(vec![0.9, 0.1]);
        for &delta in &[-5.0, -3.0, -1.0] {
            let a = flipd(&fe, &x, delta, TraceMode::Exact).unwrap().value;
            let b = flipd(&fp, &x, delta, TraceMode::Exact).unwrap().value;
            assert!((a - b).abs() < 1e-6, "delta {delta}: VE {a} vs VP {b}");
        }
    }

    #[test]
    fn flipd_affine_gaussian_closed_form() {
        let field = ScoreField::affine_gaussian(plane_gaussian(), ve()).unwrap();
        let x = DVector::zeros(3);
        let delta0 = -3.0;
        let s = (2.0f64 * delta0).exp();
        let want = 2.0 - 2.0 * s / (1.0 + s);
        let got = flipd(&field, &x, delta0, TraceMode::Exact).unwrap().value;
        assert_relative_eq!(got, want, max_relative = 1e-9);
        assert_relative_eq!(got, 1.9950548, max_relative = 1e-6);
    }

    #[test]
    fn flipd_converges_to_zero_for_atoms() {
        let field = ScoreField::mixture_analytic(
            atoms(vec![vec![1.0, 0.0], vec![-1.0, 0.0]]),
            ve(),
        )
        .unwrap();
        let x = DVector::from_vec(vec![1.0, 0.0]);
        let v = flipd(&field, &x, -6.0, TraceMode::Exact).unwrap().value;
        assert!(v.abs() < 1e-4, "FLIPD at an atom should approach 0, got {v}");
    }

    #[test]
    fn flipd_hutchinson_consistent_with_exact() {
        let field = ScoreField::mixture_analytic(
            atoms(vec![vec![1.0, 0.0], vec![-1.0, 0.0]]),
            ve(),
        )
        .unwrap();
        let x = DVector::from_vec(vec![0.6, 0.1]);
        let exact = flipd(&field, &x, -1.0, TraceMode::Exact).unwrap().value;
        let hutch = flipd(
            &field,
            &x,
            -1.0,
            TraceMode::Hutchinson {
                probes: 5000,
                seed: 2,
                probe: TraceProbe::Rademacher,
            },
        )
        .unwrap();
        let tol = 5.0 * hutch.diagnostics.stderr.unwrap().max(1e-6);
        assert!(
            (hutch.value - exact).abs() < tol,
            "hutchinson {} vs exact {exact}",
            hutch.value
        );
    }

    #[test]
    fn flipd_grid_mean_is_between_extremes() {
        let field = ScoreField::circle_quadrature(circle(), ve(), 2048).unwrap();
        let x = DVector::from_vec(vec![1.0, 0.0]);
        let grid: Vec<f64> = (0..5).map(|k| -5.0 + 0.5 * k as f64).collect();
        let mean = flipd_grid_mean(&field, &x, &grid, TraceMode::Exact)
            .unwrap()
            .value;
        let vals: Vec<f64> = grid
            .iter()
            .map(|&d| flipd(&field, &x, d, TraceMode::Exact).unwrap().value)
            .collect();
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(mean >= lo && mean <= hi);
    }

    #[test]
    fn uniform_slope_circle() {
        let ball = BallOracle::new(circle(), BallMethod::Exact);
        let x = DVector::from_vec(vec![1.0, 0.0]);
        let est = uniform_slope(&ball, &x, -8.0, 0.05).unwrap();
        assert!((est.value - 1.0).abs() < 1e-3, "got {}", est.value);
        assert_eq!(est.estimator.name(), "uniform_slope");
    }

    #[test]
    fn lidl_recovers_circle_dimension() {
        let oracle =
            ConvolutionOracle::new(circle(), ConvolveMethod::Quadrature { min_nodes: 2048 })
                .unwrap();
        let x = DVector::from_vec(vec![1.0, 0.0]);
        let grid: Vec<f64> = (0..9).map(|k| -7.0 + 0.25 * k as f64).collect();
        let (est, fit) = lidl_regress(&oracle, &x, &grid).unwrap();
        assert!((est.value - 1.0).abs() < 0.02, "LIDL {}", est.value);
        assert!(fit.residual_rms < 0.05);
    }

    #[test]
    fn ball_count_recovers_circle_dimension() {
        let bank = circle().sample(200_000, 5).unwrap();
        let x = DVector::from_vec(vec![1.0, 0.0]);
        let grid: Vec<f64> = (0..8).map(|k| -4.0 + 0.25 * k as f64).collect();
        let (est, fit) = ball_count_regress(&bank, &x, &grid, 20).unwrap();
        assert!((est.value - 1.0).abs() < 0.1, "ball-count slope {}", est.value);
        assert_eq!(fit.grid.len(), 8, "no grid point should be trimmed here");
    }

    #[test]
    fn ball_count_trims_sparse_radii() {
        let bank = circle().sample(2_000, 6).unwrap();
        let x = DVector::from_vec(vec![1.0, 0.0]);
        // Includes radii far too small for a 2k bank.
        let grid: Vec<f64> = (0..10).map(|k| -9.0 + 0.9 * k as f64).collect();
        let (_, fit) = ball_count_regress(&bank, &x, &grid, 20).unwrap();
        assert!(fit.grid.len() < grid.len());
        assert!(fit.grid.iter().all(|&d| d > -7.0));
    }

    #[test]
    fn ball_count_insufficient_data_is_an_error() {
        let bank = circle().sample(50, 7).unwrap();
        let x = DVector::from_vec(vec![1.0, 0.0]);
        let grid = vec![-12.0, -11.0, -10.0];
        assert!(matches!(
            ball_count_regress(&bank, &x, &grid, 20),
            Err(EstimatorError::Insufficient(_))
        ));
    }
}
