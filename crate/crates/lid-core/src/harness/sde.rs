//! Reverse-SDE sampling demo with the exact mixture score, plus a forward
//! Euler-Maruyama simulator used to validate the transition kernel.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{DensitySpec, DensityVariant, GeometryError, ManifoldSpec};
use crate::schedule::{ScheduleError, ScheduleSpec};
use crate::score::{ScoreError, ScoreField};

pub const EPS_STOP: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum SdeError {
    #[error("refused: {0}")]
    Refused(String),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone)]
pub struct SdeDemoResult {
    pub samples: Vec<DVector<f64>>,
    /// Sliced 1-Wasserstein distance between the generated samples and the
    /// target's Gaussian-smoothed law at `EPS_STOP`; `None` when n = 0
    /// (distance undefined).
    pub sliced_wasserstein: Option<f64>,
    pub eps_stop: f64,
}

fn standard_normal_vec<R: Rng>(dim: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| StandardNormal.sample(rng))
}

/// Integrate the reverse-time SDE from t = 1 down to `EPS_STOP` with
/// Euler-Maruyama, using the exact analytic score of an empirical density.
pub fn reverse_sde_demo(
    density: &DensitySpec,
    schedule: ScheduleSpec,
    steps: usize,
    n: usize,
    seed: u64,
) -> Result<SdeDemoResult, SdeError> {
    if steps < 100 {
        return Err(SdeError::Refused(format!(
            "step count {steps} < 100 is too coarse for Euler-Maruyama"
        )));
    }
    let atoms = match (density.variant(), density.manifold()) {
        (DensityVariant::Empirical, ManifoldSpec::PointSet { points }) => points.clone(),
        _ => {
            return Err(SdeError::Refused(
                "the demo needs an empirical density with an analytic score".into(),
            ))
        }
    };
    let field = ScoreField::mixture_analytic(density.clone(), schedule)?;
    let dim = density.ambient_dim();
    let dt = (1.0 - EPS_STOP) / steps as f64;

    let samples: Vec<DVector<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = crate::rng::derived(seed, i as u64, 0, 0);
            // Prior approximation at t = 1: VE uses N(0, sigma^2(1)),
            // VP uses the standard normal.
            let mut y = match schedule {
                ScheduleSpec::Ve { .. } => {
                    standard_normal_vec(dim, &mut rng) * schedule.sigma(1.0).unwrap()
                }
                ScheduleSpec::Vp { .. } => standard_normal_vec(dim, &mut rng),
            };
            for k in 0..steps {
                let tau = 1.0 - dt * k as f64;
                let g_sq = schedule.diffusion_sq(tau).expect("tau in [0, 1]");
                let gamma = schedule.drift_coeff(tau).expect("tau in [0, 1]");
                let s = field.score(&y, tau).expect("analytic score");
                let drift = s * g_sq - &y * gamma;
                let noise = standard_normal_vec(dim, &mut rng) * (g_sq * dt).sqrt();
                y += drift * dt + noise;
            }
            y
        })
        .collect();

    let sliced_wasserstein = if n == 0 {
        None
    } else {
        // Reference: the exact smoothed law at eps_stop, i.e. a random atom
        // scaled by psi plus sigma * noise.
        let psi = schedule.psi(EPS_STOP)?;
        let sigma = schedule.sigma(EPS_STOP)?;
        let mut rng = crate::rng::derived(seed, u64::MAX, 1, 0);
        let reference: Vec<DVector<f64>> = (0..n)
            .map(|_| {
                let atom = &atoms[rng.gen_range(0..atoms.len())];
                atom * psi + standard_normal_vec(dim, &mut rng) * sigma
            })
            .collect();
        Some(sliced_wasserstein_1(
            &samples,
            &reference,
            64,
            crate::rng::derived(seed, u64::MAX, 2, 0),
        ))
    };

    Ok(SdeDemoResult {
        samples,
        sliced_wasserstein,
        eps_stop: EPS_STOP,
    })
}

/// Simulate the forward SDE from a fixed x_0 up to time `t` with
/// Euler-Maruyama; used to check the transition kernel's psi and sigma.
pub fn forward_em_samples(
    x0: &DVector<f64>,
    schedule: ScheduleSpec,
    t: f64,
    steps: usize,
    n: usize,
    seed: u64,
) -> Result<Vec<DVector<f64>>, SdeError> {
    if steps < 100 {
        return Err(SdeError::Refused(format!(
            "step count {steps} < 100 is too coarse for Euler-Maruyama"
        )));
    }
    if !(0.0 < t && t <= 1.0) {
        return Err(SdeError::Refused(format!("target time {t} outside (0, 1]")));
    }
    let dim = x0.len();
    let dt = t / steps as f64;
    Ok((0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = crate::rng::derived(seed, i as u64, 1, 0);
            let mut y = x0.clone();
            for k in 0..steps {
                let tau = dt * k as f64;
                let g_sq = schedule.diffusion_sq(tau).expect("tau in [0, 1]");
                let gamma = schedule.drift_coeff(tau).expect("tau in [0, 1]");
                let noise = standard_normal_vec(dim, &mut rng) * (g_sq * dt).sqrt();
                y = &y * (1.0 + gamma * dt) + noise;
            }
            y
        })
        .collect())
}

/// Sliced 1-Wasserstein distance: average over random directions of the 1-d
/// W1 between the projected samples.
pub fn sliced_wasserstein_1(
    a: &[DVector<f64>],
    b: &[DVector<f64>],
    directions: usize,
    mut rng: impl Rng,
) -> f64 {
    assert_eq!(a.len(), b.len(), "paired sample sets required");
    assert!(!a.is_empty());
    let dim = a[0].len();
    let n_dir = if dim == 1 { 1 } else { directions };
    let mut total = 0.0;
    for _ in 0..n_dir {
        let mut u = standard_normal_vec(dim, &mut rng);
        let norm = u.norm();
        if norm == 0.0 {
            continue;
        }
        u /= norm;
        let mut pa: Vec<f64> = a.iter().map(|p| p.dot(&u)).collect();
        let mut pb: Vec<f64> = b.iter().map(|p| p.dot(&u)).collect();
        pa.sort_by(|x, y| x.partial_cmp(y).unwrap());
        pb.sort_by(|x, y| x.partial_cmp(y).unwrap());
        total += pa
            .iter()
            .zip(&pb)
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
            / pa.len() as f64;
    }
    total / n_dir as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ManifoldSpec;

    fn atoms(points: Vec<Vec<f64>>) -> DensitySpec {
        DensitySpec::empirical(
            ManifoldSpec::point_set(points.into_iter().map(DVector::from_vec).collect()).unwrap(),
        )
        .unwrap()
    }

    fn ve() -> ScheduleSpec {
        ScheduleSpec::ve(0.01, 50.0).unwrap()
    }

    #[test]
    fn single_atom_reverse_sde_statistics() {
        let density = atoms(vec![vec![0.0]]);
        let res = reverse_sde_demo(&density, ve(), 1000, 4000, 3).unwrap();
        let n = res.samples.len() as f64;
        let mean = res.samples.iter().map(|s| s[0]).sum::<f64>() / n;
        let var = res.samples.iter().map(|s| s[0] * s[0]).sum::<f64>() / n;
        let sigma = ve().sigma(EPS_STOP).unwrap();
        let se_mean = sigma / n.sqrt();
        assert!(mean.abs() < 3.0 * se_mean, "mean {mean} vs SE {se_mean}");
        let rel = (var - sigma * sigma).abs() / (sigma * sigma);
        assert!(rel < 0.08, "variance off by {rel:.3} relative");
        let sw = res.sliced_wasserstein.unwrap();
        assert!(sw < 0.05, "sliced Wasserstein {sw}");
    }

    #[test]
    fn two_atoms_give_balanced_modes() {
        let density = atoms(vec![vec![2.0], vec![-2.0]]);
        let res = reverse_sde_demo(&density, ve(), 1000, 4000, 9).unwrap();
        let pos = res.samples.iter().filter(|s| s[0] > 0.0).count() as f64;
        let frac = pos / res.samples.len() as f64;
        assert!((frac - 0.5).abs() < 0.03, "mode weight {frac}");
        // Bimodality: nothing lands between the modes.
        let mid = res
            .samples
            .iter()
            .filter(|s| s[0].abs() < 1.0)
            .count();
        assert_eq!(mid, 0, "{mid} samples in the inter-mode gap");
    }

    #[test]
    fn empty_request_flags_undefined_distance() {
        let res = reverse_sde_demo(&atoms(vec![vec![0.0]]), ve(), 500, 0, 1).unwrap();
        assert!(res.samples.is_empty());
        assert!(res.sliced_wasserstein.is_none());
    }

    #[test]
    fn too_few_steps_refused() {
        assert!(matches!(
            reverse_sde_demo(&atoms(vec![vec![0.0]]), ve(), 50, 10, 1),
            Err(SdeError::Refused(_))
        ));
    }

    #[test]
    fn forward_moments_match_transition_kernel() {
        let sched = ScheduleSpec::vp(0.1, 20.0).unwrap();
        let x0 = DVector::from_vec(vec![1.0]);
        let t = 0.5;
        let samples = forward_em_samples(&x0, sched, t, 1000, 4000, 7).unwrap();
        let n = samples.len() as f64;
        let psi = sched.psi(t).unwrap();
        let sigma = sched.sigma(t).unwrap();
        let mean = samples.iter().map(|s| s[0]).sum::<f64>() / n;
        let var = samples.iter().map(|s| (s[0] - mean).powi(2)).sum::<f64>() / n;
        let se_mean = sigma / n.sqrt();
        assert!(
            (mean - psi * x0[0]).abs() < 3.0 * se_mean + 0.01,
            "mean {mean} vs psi x0 {}",
            psi * x0[0]
        );
        let se_var = sigma * sigma * (2.0 / n).sqrt();
        assert!(
            (var - sigma * sigma).abs() < 3.0 * se_var + 0.02 * sigma * sigma,
            "var {var} vs sigma^2 {}",
            sigma * sigma
        );
    }

    #[test]
    fn demo_requires_empirical_density() {
        let circle = DensitySpec::uniform(ManifoldSpec::circle(1.0).unwrap()).unwrap();
        assert!(matches!(
            reverse_sde_demo(&circle, ve(), 500, 10, 1),
            Err(SdeError::Refused(_))
        ));
    }
}
