//! Theorem-verification suites: each suite checks one limit statement or
//! identity numerically and reports target, observed value, tolerance, and
//! margin per check.

use nalgebra::DVector;
use rand::Rng;
use serde::Serialize;

use crate::convolve::{BallMethod, BallOracle, ConvolutionOracle, ConvolveMethod, SlopeForm};
use crate::estimators::{flipd, TraceMode};
use crate::geometry::{DensitySpec, ManifoldSpec};
use crate::schedule::ScheduleSpec;
use crate::score::ScoreField;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Thm1,
    Thm2,
    Cor1,
    Cor2,
    Prop1,
    Prop2,
    Eq14,
    Eq15,
}

impl Suite {
    pub const ALL: [Suite; 8] = [
        Suite::Thm1,
        Suite::Thm2,
        Suite::Cor1,
        Suite::Cor2,
        Suite::Prop1,
        Suite::Prop2,
        Suite::Eq14,
        Suite::Eq15,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Suite::Thm1 => "thm1",
            Suite::Thm2 => "thm2",
            Suite::Cor1 => "cor1",
            Suite::Cor2 => "cor2",
            Suite::Prop1 => "prop1",
            Suite::Prop2 => "prop2",
            Suite::Eq14 => "eq14",
            Suite::Eq15 => "eq15",
        }
    }
}

impl std::str::FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Suite::ALL
            .iter()
            .copied()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown suite `{s}`; expected one of thm1 thm2 cor1 cor2 prop1 prop2 eq14 eq15"))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub target: f64,
    pub observed: f64,
    pub tolerance: f64,
    /// tolerance - |observed - target|; negative means failure.
    pub margin: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub suite: &'static str,
    pub checks: Vec<CheckResult>,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub suites: Vec<SuiteReport>,
    pub pass: bool,
}

fn check(name: impl Into<String>, observed: f64, target: f64, tolerance: f64) -> CheckResult {
    let margin = tolerance - (observed - target).abs();
    CheckResult {
        name: name.into(),
        target,
        observed,
        tolerance,
        margin,
        pass: margin >= 0.0 && observed.is_finite(),
    }
}

/// An inequality check: passes when observed <= bound.
fn check_le(name: impl Into<String>, observed: f64, bound: f64) -> CheckResult {
    CheckResult {
        name: name.into(),
        target: bound,
        observed,
        tolerance: 0.0,
        margin: bound - observed,
        pass: observed <= bound && observed.is_finite(),
    }
}

fn circle_density() -> DensitySpec {
    DensitySpec::uniform(ManifoldSpec::circle(1.0).unwrap()).unwrap()
}

fn ve() -> ScheduleSpec {
    ScheduleSpec::ve(1e-4, 50.0).unwrap()
}

fn vp() -> ScheduleSpec {
    ScheduleSpec::vp(0.1, 20.0).unwrap()
}

/// Unit circle plus two atoms, gap 4, weights (0.5, 0.25, 0.25).
fn union_density() -> DensitySpec {
    let circle = circle_density();
    let atom = |x: f64, y: f64| {
        DensitySpec::empirical(
            ManifoldSpec::point_set(vec![DVector::from_vec(vec![x, y])]).unwrap(),
        )
        .unwrap()
    };
    DensitySpec::mixture(
        vec![(0.5, circle), (0.25, atom(5.0, 0.0)), (0.25, atom(0.0, 5.0))],
        4.0,
    )
    .unwrap()
}

/// Limit of the Gaussian log-derivative: on the unit circle (d=1, D=2) the
/// slope converges monotonically to d - D = -1.
fn thm1() -> Vec<CheckResult> {
    let oracle = ConvolutionOracle::new(
        circle_density(),
        ConvolveMethod::Quadrature { min_nodes: 2048 },
    )
    .unwrap();
    let x = DVector::from_vec(vec![1.0, 0.0]);
    let mut checks = Vec::new();
    let mut errs = Vec::new();
    for &delta in &[-2.0, -4.0, -6.0, -8.0] {
        let v = oracle.dlogrho_ddelta_gauss(&x, delta).unwrap();
        errs.push((v + 1.0).abs());
        if delta == -8.0 {
            checks.push(check("circle dlogrho/ddelta at delta=-8", v, -1.0, 1e-3));
        }
    }
    let max_increase = errs
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max);
    checks.push(check_le(
        "monotone convergence: max increase of |error| over delta = -2,-4,-6,-8",
        max_increase,
        0.0,
    ));
    checks
}

/// Limit of the ball-probability log-derivative: circle analytically,
/// 2-sphere by importance-sampled Monte Carlo with a 10^6 bank.
fn thm2() -> Vec<CheckResult> {
    let mut checks = Vec::new();
    let circle_ball = BallOracle::new(circle_density(), BallMethod::Exact);
    let x = DVector::from_vec(vec![1.0, 0.0]);
    let slope = circle_ball
        .log_slope(&x, -8.0, 0.05, SlopeForm::BallProbability)
        .unwrap();
    checks.push(check("circle ball slope at delta=-8", slope, 1.0, 1e-3));

    let sphere = DensitySpec::uniform(ManifoldSpec::sphere(1.0, 3, 2).unwrap()).unwrap();
    let ball = BallOracle::new(
        sphere,
        BallMethod::ImportanceMc {
            samples: 1_000_000,
            seed: 20,
        },
    );
    let pole = DVector::from_vec(vec![0.0, 0.0, 1.0]);
    let slope = ball
        .log_slope(&pole, -5.0, 0.1, SlopeForm::BallProbability)
        .unwrap();
    checks.push(check(
        "2-sphere Monte Carlo ball slope at delta=-5 (n=10^6)",
        slope,
        2.0,
        0.1,
    ));
    checks
}

/// Unions of manifolds with different dimensions: FLIPD at delta_0 = -6
/// recovers the dimension of the component the query point lies on.
fn cor1() -> Vec<CheckResult> {
    let field = ScoreField::for_density(&union_density(), ve(), 2048).unwrap();
    let cases = [
        ("circle point (1,0)", vec![1.0, 0.0], 1.0),
        ("atom (5,0)", vec![5.0, 0.0], 0.0),
        ("atom (0,5)", vec![0.0, 5.0], 0.0),
    ];
    cases
        .iter()
        .map(|(name, coords, want)| {
            let x = DVector::from_vec(coords.clone());
            let v = flipd(&field, &x, -6.0, TraceMode::Exact).unwrap().value;
            check(format!("union FLIPD at {name}"), v, *want, 0.01)
        })
        .collect()
}

/// Uniform-kernel locality: once e^delta < xi the off-component terms vanish
/// identically, so union ball probabilities and slopes match the on-component
/// values exactly.
fn cor2() -> Vec<CheckResult> {
    let union = union_density();
    let union_ball = BallOracle::new(union, BallMethod::Exact);
    let circle_ball = BallOracle::new(circle_density(), BallMethod::Exact);
    let x = DVector::from_vec(vec![1.0, 0.0]);
    let delta = -2.0; // e^delta = 0.135 << xi = 4
    let pu = union_ball.probability(&x, delta).unwrap().value;
    let pc = circle_ball.probability(&x, delta).unwrap().value;
    let mut checks = vec![check_le(
        "union ball probability equals weight * circle probability exactly",
        (pu - 0.5 * pc).abs(),
        0.0,
    )];
    let su = union_ball
        .log_slope(&x, delta, 0.01, SlopeForm::BallProbability)
        .unwrap();
    let sc = {
        // Same central-difference stencil as the union path, for an
        // apples-to-apples comparison of the slopes.
        let hi = circle_ball.probability(&x, delta + 0.01).unwrap().value;
        let lo = circle_ball.probability(&x, delta - 0.01).unwrap().value;
        (hi.ln() - lo.ln()) / 0.02
    };
    checks.push(check_le(
        "union slope equals circle slope (weights cancel in the log difference)",
        (su - sc).abs(),
        1e-12,
    ));
    let atom = DVector::from_vec(vec![5.0, 0.0]);
    let sa = union_ball
        .log_slope(&atom, delta, 0.01, SlopeForm::BallProbability)
        .unwrap();
    checks.push(check_le(
        "union slope at an atom is exactly 0 (flat counts)",
        sa.abs(),
        0.0,
    ));
    checks
}

/// Delta-function limit of the intrinsic-dimension Gaussian kernel:
/// int p N_d -> p(x) = 1/(2 pi) on the unit circle.
fn prop1() -> Vec<CheckResult> {
    let oracle = ConvolutionOracle::new(
        circle_density(),
        ConvolveMethod::Quadrature { min_nodes: 2048 },
    )
    .unwrap();
    let x = DVector::from_vec(vec![1.0, 0.0]);
    let v = oracle.prop1_integral(&x, -8.0).unwrap();
    vec![check(
        "circle prop1 integral at delta=-8",
        v,
        1.0 / (2.0 * std::f64::consts::PI),
        1e-4,
    )]
}

/// Second-moment limit: e^{-2 delta} int p ||x - x'||^2 N_d -> d p(x).
fn prop2() -> Vec<CheckResult> {
    let oracle = ConvolutionOracle::new(
        circle_density(),
        ConvolveMethod::Quadrature { min_nodes: 2048 },
    )
    .unwrap();
    let x = DVector::from_vec(vec![1.0, 0.0]);
    let v = oracle.prop2_integral(&x, -8.0).unwrap();
    vec![check(
        "circle prop2 integral at delta=-8",
        v,
        1.0 / (2.0 * std::f64::consts::PI),
        1e-3,
    )]
}

fn random_atoms(rng: &mut impl Rng, dim: usize, count: usize) -> DensitySpec {
    let points: Vec<DVector<f64>> = (0..count)
        .map(|_| DVector::from_fn(dim, |_, _| rng.gen_range(-2.0..2.0)))
        .collect();
    DensitySpec::empirical(ManifoldSpec::point_set(points).unwrap()).unwrap()
}

/// Correspondence between the noised density and the diffusion marginal:
/// log rho_N(x, delta) = D log psi(t(delta)) + log p_t(psi x, t(delta)).
fn eq14() -> Vec<CheckResult> {
    let mut rng = crate::rng::seeded(14);
    let density = random_atoms(&mut rng, 2, 5);
    let oracle = ConvolutionOracle::new(density.clone(), ConvolveMethod::ClosedForm).unwrap();
    let x = DVector::from_fn(2, |_, _| rng.gen_range(-1.5..1.5));
    let mut worst = 0.0f64;
    for sched in [ve(), vp()] {
        let field = ScoreField::mixture_analytic(density.clone(), sched).unwrap();
        for k in 0..=12 {
            let delta = -6.0 + 0.5 * k as f64;
            let t = sched.t_of_delta(delta).unwrap();
            let psi = sched.psi(t).unwrap();
            let lhs = oracle.log_rho_gauss(&x, delta).unwrap();
            let rhs = 2.0 * psi.ln() + field.log_density(&(&x * psi), t).unwrap();
            worst = worst.max((lhs - rhs).abs());
        }
    }
    vec![check_le(
        "max |log rho_N - (D log psi + log p_t)| over VE+VP, delta in [-6, 0]",
        worst,
        1e-8,
    )]
}

/// The score form of the log-derivative: for mixtures and both schedule
/// families, sigma^2 (tr grad s + ||s||^2) equals d/d delta log rho_N.
fn eq15() -> Vec<CheckResult> {
    let mut checks = Vec::new();
    for mix_id in 0u64..5 {
        let mut rng = crate::rng::seeded(150 + mix_id);
        let dim = 2 + (mix_id % 2) as usize;
        let count = 4 + (mix_id % 5) as usize;
        let density = random_atoms(&mut rng, dim, count);
        let oracle = ConvolutionOracle::new(density.clone(), ConvolveMethod::ClosedForm).unwrap();
        let x = DVector::from_fn(dim, |_, _| rng.gen_range(-1.5..1.5));
        let mut worst = 0.0f64;
        for sched in [ve(), vp()] {
            let field = ScoreField::mixture_analytic(density.clone(), sched).unwrap();
            for k in 0..33 {
                let delta = -8.0 + 8.0 * k as f64 / 32.0;
                let (nu, _) =
                    crate::estimators::nu(&field, &x, delta, TraceMode::Exact).unwrap();
                let d = oracle.dlogrho_ddelta_gauss(&x, delta).unwrap();
                worst = worst.max((nu - d).abs());
            }
        }
        checks.push(check_le(
            format!("mixture {mix_id}: max |nu - dlogrho/ddelta| over VE+VP, 33-point grid"),
            worst,
            1e-6,
        ));
    }
    checks
}

pub fn verify_suite(suite: Suite) -> SuiteReport {
    let checks = match suite {
        Suite::Thm1 => thm1(),
        Suite::Thm2 => thm2(),
        Suite::Cor1 => cor1(),
        Suite::Cor2 => cor2(),
        Suite::Prop1 => prop1(),
        Suite::Prop2 => prop2(),
        Suite::Eq14 => eq14(),
        Suite::Eq15 => eq15(),
    };
    let pass = checks.iter().all(|c| c.pass);
    SuiteReport {
        suite: suite.name(),
        checks,
        pass,
    }
}

pub fn verify_all(suites: &[Suite]) -> VerifyReport {
    let suites: Vec<SuiteReport> = suites.iter().map(|&s| verify_suite(s)).collect();
    let pass = suites.iter().all(|s| s.pass);
    VerifyReport { suites, pass }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_suites_pass() {
        for suite in [
            Suite::Thm1,
            Suite::Cor2,
            Suite::Prop1,
            Suite::Prop2,
            Suite::Eq14,
        ] {
            let report = verify_suite(suite);
            assert!(
                report.pass,
                "{} failed: {:?}",
                report.suite,
                report
                    .checks
                    .iter()
                    .filter(|c| !c.pass)
                    .collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn report_serializes() {
        let report = verify_all(&[Suite::Prop1]);
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("\"margin\""));
        assert!(json.contains("\"tolerance\""));
    }

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
        assert!("bogus".parse::<Suite>().is_err());
    }
}
