//! Small numeric helpers shared across the crate.

/// log(sum(exp(v))) without overflow. Returns -inf for an empty slice.
pub fn log_sum_exp(vals: &[f64]) -> f64 {
    let m = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = vals.iter().map(|v| (v - m).exp()).sum();
    m + s.ln()
}

/// Normalized weights exp(v_i) / sum_j exp(v_j), computed stably.
pub fn softmax(vals: &[f64]) -> Vec<f64> {
    let m = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = vals.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = out.iter().sum();
    for w in &mut out {
        *w /= s;
    }
    out
}

fn ln_factorial(n: u64) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

/// ln Gamma(two_a / 2) for positive integer `two_a`. Gamma at integer and
/// half-integer arguments is exact, which covers every dimension-dependent
/// constant we need.
pub fn ln_gamma_half(two_a: u64) -> f64 {
    assert!(two_a >= 1);
    if two_a % 2 == 0 {
        // Gamma(k) = (k-1)!
        ln_factorial(two_a / 2 - 1)
    } else {
        // Gamma(n + 1/2) = (2n)! sqrt(pi) / (4^n n!)
        let n = (two_a - 1) / 2;
        ln_factorial(2 * n) + 0.5 * std::f64::consts::PI.ln()
            - (n as f64) * 4f64.ln()
            - ln_factorial(n)
    }
}

/// ln of the volume of the unit ball in R^D: pi^{D/2} / Gamma(D/2 + 1).
pub fn ln_unit_ball_volume(dim: usize) -> f64 {
    (dim as f64) * 0.5 * std::f64::consts::PI.ln() - ln_gamma_half(dim as u64 + 2)
}

/// ln of the surface area of the unit d-sphere S^d embedded in R^{d+1}:
/// 2 pi^{(d+1)/2} / Gamma((d+1)/2).
pub fn ln_sphere_area(d: usize) -> f64 {
    2f64.ln() + (d as f64 + 1.0) * 0.5 * std::f64::consts::PI.ln()
        - ln_gamma_half(d as u64 + 1)
}

/// ln Z_D = -(D/2) ln(2 pi), the normalizing constant of a standard
/// isotropic Gaussian in R^D.
pub fn ln_gauss_const(dim: usize) -> f64 {
    -(dim as f64) * 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// ln of the isotropic Gaussian density in `dim` dimensions with log
/// standard deviation `delta`, evaluated at squared distance `sq_dist`.
pub fn ln_gauss_kernel(dim: usize, sq_dist: f64, delta: f64) -> f64 {
    ln_gauss_const(dim) - (dim as f64) * delta - 0.5 * sq_dist * (-2.0 * delta).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gamma_half_integers() {
        // Gamma(1/2) = sqrt(pi), Gamma(1) = 1, Gamma(3/2) = sqrt(pi)/2, Gamma(3) = 2
        assert_relative_eq!(
            ln_gamma_half(1).exp(),
            std::f64::consts::PI.sqrt(),
            max_relative = 1e-14
        );
        assert_relative_eq!(ln_gamma_half(2).exp(), 1.0, max_relative = 1e-14);
        assert_relative_eq!(
            ln_gamma_half(3).exp(),
            std::f64::consts::PI.sqrt() / 2.0,
            max_relative = 1e-14
        );
        assert_relative_eq!(ln_gamma_half(6).exp(), 2.0, max_relative = 1e-14);
    }

    #[test]
    fn ball_volumes() {
        use std::f64::consts::PI;
        assert_relative_eq!(ln_unit_ball_volume(1).exp(), 2.0, max_relative = 1e-14);
        assert_relative_eq!(ln_unit_ball_volume(2).exp(), PI, max_relative = 1e-14);
        assert_relative_eq!(
            ln_unit_ball_volume(3).exp(),
            4.0 * PI / 3.0,
            max_relative = 1e-14
        );
    }

    #[test]
    fn sphere_areas() {
        use std::f64::consts::PI;
        assert_relative_eq!(ln_sphere_area(1).exp(), 2.0 * PI, max_relative = 1e-14);
        assert_relative_eq!(ln_sphere_area(2).exp(), 4.0 * PI, max_relative = 1e-14);
    }

    #[test]
    fn log_sum_exp_extreme_range() {
        let v = [-1e8, -1e8 + 1.0];
        let got = log_sum_exp(&v);
        let want = -1e8 + (1.0 + 1f64.exp()).ln();
        assert_relative_eq!(got, want, max_relative = 1e-12);
    }
}
