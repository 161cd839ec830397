//! Synthetic embedded submanifolds of R^D with known local intrinsic
//! dimension, exact samplers, pointwise densities with respect to the
//! Riemannian measure, and closed-form geodesic distances.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::numeric::{ln_sphere_area, log_sum_exp};
use crate::rng;

/// Projection residual below which a point counts as lying on the manifold.
pub const ON_MANIFOLD_TOL: f64 = 1e-9;

const ORTHO_TOL: f64 = 1e-12;
const WEIGHT_TOL: f64 = 1e-12;

/// Swiss roll parameter domain: (t cos t, t sin t, h) with t in
/// [1.5 pi, 4.5 pi] and h in [0, 10], uniform in (arc-length, h).
pub const SWISS_T_MIN: f64 = 1.5 * std::f64::consts::PI;
pub const SWISS_T_MAX: f64 = 4.5 * std::f64::consts::PI;
pub const SWISS_H_MAX: f64 = 10.0;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("basis columns are not orthonormal (max deviation {0:.3e})")]
    NotOrthonormal(f64),
    #[error("mixture weights must be positive and sum to 1 (sum deviates by {0:.3e})")]
    BadWeights(f64),
    #[error("point is off the manifold: projection residual {residual:.3e}")]
    OffManifold { residual: f64 },
    #[error("not samplable: {0}")]
    NotSamplable(String),
    #[error("unsupported: no closed-form geodesic for {0}")]
    UnsupportedGeodesic(String),
    #[error("infinite: points lie on different components")]
    DifferentComponents,
    #[error("assumption violated: second moment estimate diverges")]
    AssumptionViolated,
    #[error("{0}")]
    Invalid(String),
}

/// A synthetic embedded submanifold (or finite disjoint union) with known
/// intrinsic dimension at every point.
///
/// Countable infinite unions are not supported; only finite ones.
#[derive(Debug, Clone)]
pub enum ManifoldSpec {
    /// offset + span of the orthonormal columns of `basis` (D x d).
    AffineSubspace {
        basis: DMatrix<f64>,
        offset: DVector<f64>,
    },
    /// {x : ||x_{1..d+1}|| = radius, x_{d+2..D} = 0}, d < D.
    Sphere {
        radius: f64,
        ambient_dim: usize,
        intrinsic_dim: usize,
    },
    /// The swiss roll surface, embedded in the first three coordinates.
    SwissRoll { ambient_dim: usize },
    /// A finite set of points; intrinsic dimension 0 everywhere, counting
    /// measure as the Riemannian measure.
    PointSet { points: Vec<DVector<f64>> },
    /// Finite disjoint union with mixture weights and a declared lower bound
    /// on the pairwise component separation.
    DisjointUnion {
        parts: Vec<(ManifoldSpec, f64)>,
        separation: f64,
    },
}

/// Result of projecting an ambient point onto a manifold.
#[derive(Debug, Clone)]
pub struct Projection {
    pub point: DVector<f64>,
    pub residual: f64,
    /// Component index for unions and point sets, 0 otherwise.
    pub component: usize,
    pub intrinsic_dim: usize,
}

impl ManifoldSpec {
    pub fn affine(basis: DMatrix<f64>, offset: DVector<f64>) -> Result<Self, GeometryError> {
        if basis.nrows() != offset.len() {
            return Err(GeometryError::Invalid(format!(
                "basis has {} rows but offset has dimension {}",
                basis.nrows(),
                offset.len()
            )));
        }
        let gram = basis.transpose() * &basis;
        let mut dev = 0.0f64;
        for i in 0..gram.nrows() {
            for j in 0..gram.ncols() {
                let want = if i == j { 1.0 } else { 0.0 };
                dev = dev.max((gram[(i, j)] - want).abs());
            }
        }
        if dev > ORTHO_TOL {
            return Err(GeometryError::NotOrthonormal(dev));
        }
        Ok(ManifoldSpec::AffineSubspace { basis, offset })
    }

    pub fn sphere(
        radius: f64,
        ambient_dim: usize,
        intrinsic_dim: usize,
    ) -> Result<Self, GeometryError> {
        if !(radius > 0.0) || intrinsic_dim >= ambient_dim {
            return Err(GeometryError::Invalid(format!(
                "sphere requires radius > 0 and d < D, got radius {radius}, d {intrinsic_dim}, D {ambient_dim}"
            )));
        }
        Ok(ManifoldSpec::Sphere {
            radius,
            ambient_dim,
            intrinsic_dim,
        })
    }

    /// Circle of the given radius in R^2.
    pub fn circle(radius: f64) -> Result<Self, GeometryError> {
        Self::sphere(radius, 2, 1)
    }

    pub fn swiss_roll(ambient_dim: usize) -> Result<Self, GeometryError> {
        if ambient_dim < 3 {
            return Err(GeometryError::Invalid(
                "swiss roll needs ambient dimension >= 3".into(),
            ));
        }
        Ok(ManifoldSpec::SwissRoll { ambient_dim })
    }

    pub fn point_set(points: Vec<DVector<f64>>) -> Result<Self, GeometryError> {
        if points.is_empty() {
            return Err(GeometryError::Invalid("point set is empty".into()));
        }
        let dim = points[0].len();
        if points.iter().any(|p| p.len() != dim) {
            return Err(GeometryError::Invalid(
                "point set has inconsistent dimensions".into(),
            ));
        }
        Ok(ManifoldSpec::PointSet { points })
    }

    /// Union of components with weights. `separation` is the declared lower
    /// bound xi > 0 on the pairwise distance between component supports,
    /// known at construction time.
    pub fn disjoint_union(
        parts: Vec<(ManifoldSpec, f64)>,
        separation: f64,
    ) -> Result<Self, GeometryError> {
        if parts.len() < 2 {
            return Err(GeometryError::Invalid("union needs >= 2 components".into()));
        }
        let dim = parts[0].0.ambient_dim();
        if parts.iter().any(|(m, _)| m.ambient_dim() != dim) {
            return Err(GeometryError::Invalid(
                "union components have inconsistent ambient dimensions".into(),
            ));
        }
        let sum: f64 = parts.iter().map(|(_, w)| w).sum();
        if parts.iter().any(|(_, w)| *w <= 0.0) || (sum - 1.0).abs() > WEIGHT_TOL {
            return Err(GeometryError::BadWeights((sum - 1.0).abs()));
        }
        if !(separation > 0.0) {
            return Err(GeometryError::Invalid(
                "union separation must be > 0".into(),
            ));
        }
        Ok(ManifoldSpec::DisjointUnion { parts, separation })
    }

    pub fn ambient_dim(&self) -> usize {
        match self {
            ManifoldSpec::AffineSubspace { basis, .. } => basis.nrows(),
            ManifoldSpec::Sphere { ambient_dim, .. } => *ambient_dim,
            ManifoldSpec::SwissRoll { ambient_dim } => *ambient_dim,
            ManifoldSpec::PointSet { points } => points[0].len(),
            ManifoldSpec::DisjointUnion { parts, .. } => parts[0].0.ambient_dim(),
        }
    }

    /// Intrinsic dimension of the component containing (or nearest to) `x`.
    pub fn intrinsic_dim_at(&self, x: &DVector<f64>) -> usize {
        self.project(x).intrinsic_dim
    }

    /// Nearest point on the manifold together with the residual distance.
    pub fn project(&self, x: &DVector<f64>) -> Projection {
        match self {
            ManifoldSpec::AffineSubspace { basis, offset } => {
                let z = basis.transpose() * (x - offset);
                let point = offset + basis * z;
                let residual = (x - &point).norm();
                Projection {
                    point,
                    residual,
                    component: 0,
                    intrinsic_dim: basis.ncols(),
                }
            }
            ManifoldSpec::Sphere {
                radius,
                ambient_dim,
                intrinsic_dim,
            } => {
                let k = intrinsic_dim + 1;
                let mut point = DVector::zeros(*ambient_dim);
                let head = x.rows(0, k).into_owned();
                let n = head.norm();
                if n > 0.0 {
                    for i in 0..k {
                        point[i] = head[i] / n * radius;
                    }
                } else {
                    point[0] = *radius;
                }
                let residual = (x - &point).norm();
                Projection {
                    point,
                    residual,
                    component: 0,
                    intrinsic_dim: *intrinsic_dim,
                }
            }
            ManifoldSpec::SwissRoll { ambient_dim } => {
                let (t, h) = swiss_nearest_params(x);
                let mut point = DVector::zeros(*ambient_dim);
                point[0] = t * t.cos();
                point[1] = t * t.sin();
                point[2] = h;
                let residual = (x - &point).norm();
                Projection {
                    point,
                    residual,
                    component: 0,
                    intrinsic_dim: 2,
                }
            }
            ManifoldSpec::PointSet { points } => {
                let (component, point) = points
                    .iter()
                    .enumerate()
                    .min_by(|(_, a), (_, b)| {
                        (x - *a).norm().partial_cmp(&(x - *b).norm()).unwrap()
                    })
                    .map(|(i, p)| (i, p.clone()))
                    .unwrap();
                let residual = (x - &point).norm();
                Projection {
                    point,
                    residual,
                    component,
                    intrinsic_dim: 0,
                }
            }
            ManifoldSpec::DisjointUnion { parts, .. } => {
                let mut best: Option<(usize, Projection)> = None;
                for (i, (m, _)) in parts.iter().enumerate() {
                    let proj = m.project(x);
                    if best
                        .as_ref()
                        .map(|(_, b)| proj.residual < b.residual)
                        .unwrap_or(true)
                    {
                        best = Some((i, proj));
                    }
                }
                let (i, mut proj) = best.unwrap();
                proj.component = i;
                proj
            }
        }
    }

    /// Whether `x` lies on the manifold within the projection tolerance.
    pub fn contains(&self, x: &DVector<f64>) -> bool {
        self.project(x).residual < ON_MANIFOLD_TOL
    }

    /// Geodesic distance between two on-manifold points, where a closed form
    /// exists.
    pub fn geodesic_distance(
        &self,
        x: &DVector<f64>,
        y: &DVector<f64>,
    ) -> Result<f64, GeometryError> {
        let px = self.project(x);
        let py = self.project(y);
        for p in [&px, &py] {
            if p.residual >= ON_MANIFOLD_TOL {
                return Err(GeometryError::OffManifold {
                    residual: p.residual,
                });
            }
        }
        match self {
            ManifoldSpec::AffineSubspace { .. } => Ok((x - y).norm()),
            ManifoldSpec::Sphere {
                radius,
                intrinsic_dim,
                ..
            } => {
                let k = intrinsic_dim + 1;
                let u = x.rows(0, k) / *radius;
                let v = y.rows(0, k) / *radius;
                let cos = u.dot(&v).clamp(-1.0, 1.0);
                Ok(radius * cos.acos())
            }
            ManifoldSpec::SwissRoll { .. } => {
                // Isometric to the flat (arc-length, h) rectangle.
                let (tx, hx) = swiss_nearest_params(x);
                let (ty, hy) = swiss_nearest_params(y);
                let ds = swiss_arc_length(tx) - swiss_arc_length(ty);
                let dh = hx - hy;
                Ok((ds * ds + dh * dh).sqrt())
            }
            ManifoldSpec::PointSet { .. } => {
                if px.component == py.component {
                    Ok(0.0)
                } else {
                    Err(GeometryError::DifferentComponents)
                }
            }
            ManifoldSpec::DisjointUnion { parts, .. } => {
                if px.component != py.component {
                    return Err(GeometryError::DifferentComponents);
                }
                parts[px.component].0.geodesic_distance(x, y)
            }
        }
    }

    /// Declared separation for unions.
    pub fn separation(&self) -> Option<f64> {
        match self {
            ManifoldSpec::DisjointUnion { separation, .. } => Some(*separation),
            _ => None,
        }
    }
}

/// Arc length of the spiral (t cos t, t sin t) from t = 0.
pub fn swiss_arc_length(t: f64) -> f64 {
    0.5 * (t * (1.0 + t * t).sqrt() + t.asinh())
}

/// Total arc length of the swiss roll spiral over its parameter domain.
pub fn swiss_total_arc_length() -> f64 {
    swiss_arc_length(SWISS_T_MAX) - swiss_arc_length(SWISS_T_MIN)
}

fn swiss_t_of_arc_length(s: f64) -> f64 {
    let target = swiss_arc_length(SWISS_T_MIN) + s;
    let (mut a, mut b) = (SWISS_T_MIN, SWISS_T_MAX);
    while b - a > 1e-13 {
        let mid = 0.5 * (a + b);
        if swiss_arc_length(mid) < target {
            a = mid;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}

/// Nearest (t, h) parameters on the swiss roll for an ambient point.
fn swiss_nearest_params(x: &DVector<f64>) -> (f64, f64) {
    let (a, b) = (x[0], x[1]);
    let h = x[2].clamp(0.0, SWISS_H_MAX);
    let f = |t: f64| {
        let dx = a - t * t.cos();
        let dy = b - t * t.sin();
        dx * dx + dy * dy
    };
    // Coarse scan, then ternary refinement around the best bracket.
    let n = 4096;
    let mut best_k = 0usize;
    let mut best_v = f64::INFINITY;
    for k in 0..=n {
        let t = SWISS_T_MIN + (SWISS_T_MAX - SWISS_T_MIN) * k as f64 / n as f64;
        let v = f(t);
        if v < best_v {
            best_v = v;
            best_k = k;
        }
    }
    let step = (SWISS_T_MAX - SWISS_T_MIN) / n as f64;
    let mut lo = SWISS_T_MIN + step * best_k.saturating_sub(1) as f64;
    let mut hi = (SWISS_T_MIN + step * (best_k + 1) as f64).min(SWISS_T_MAX);
    for _ in 0..200 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if f(m1) < f(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    (0.5 * (lo + hi), h)
}

/// Probability density on a [`ManifoldSpec`] with exact sampling and
/// pointwise evaluation with respect to the Riemannian measure.
#[derive(Debug, Clone)]
pub struct DensitySpec {
    manifold: ManifoldSpec,
    variant: DensityVariant,
}

#[derive(Debug, Clone)]
pub enum DensityVariant {
    UniformOnCompact,
    /// Gaussian in subspace coordinates of an affine manifold.
    GaussianOnAffine {
        mean: DVector<f64>,
        cov: DMatrix<f64>,
    },
    /// Equal atom weights on a point set.
    Empirical,
    /// Per-component densities aligned with the parts of a disjoint union.
    Mixture(Vec<DensitySpec>),
}

impl DensitySpec {
    pub fn uniform(manifold: ManifoldSpec) -> Result<Self, GeometryError> {
        match &manifold {
            ManifoldSpec::Sphere { .. } | ManifoldSpec::SwissRoll { .. } => Ok(DensitySpec {
                manifold,
                variant: DensityVariant::UniformOnCompact,
            }),
            other => Err(GeometryError::Invalid(format!(
                "uniform density needs a compact manifold, got {other:?}"
            ))),
        }
    }

    pub fn gaussian_on_affine(
        manifold: ManifoldSpec,
        mean: DVector<f64>,
        cov: DMatrix<f64>,
    ) -> Result<Self, GeometryError> {
        let d = match &manifold {
            ManifoldSpec::AffineSubspace { basis, .. } => basis.ncols(),
            other => {
                return Err(GeometryError::Invalid(format!(
                    "GaussianOnAffine needs an affine manifold, got {other:?}"
                )))
            }
        };
        if mean.len() != d || cov.nrows() != d || cov.ncols() != d {
            return Err(GeometryError::Invalid(
                "mean/cov dimensions do not match the subspace".into(),
            ));
        }
        if cov.clone().cholesky().is_none() {
            return Err(GeometryError::Invalid("covariance is not SPD".into()));
        }
        Ok(DensitySpec {
            manifold,
            variant: DensityVariant::GaussianOnAffine { mean, cov },
        })
    }

    pub fn empirical(manifold: ManifoldSpec) -> Result<Self, GeometryError> {
        match &manifold {
            ManifoldSpec::PointSet { .. } => Ok(DensitySpec {
                manifold,
                variant: DensityVariant::Empirical,
            }),
            other => Err(GeometryError::Invalid(format!(
                "empirical density needs a point set, got {other:?}"
            ))),
        }
    }

    /// Mixture over a declared disjoint union. Component manifolds are taken
    /// from the component densities.
    pub fn mixture(
        parts: Vec<(f64, DensitySpec)>,
        separation: f64,
    ) -> Result<Self, GeometryError> {
        let manifold = ManifoldSpec::disjoint_union(
            parts
                .iter()
                .map(|(w, d)| (d.manifold.clone(), *w))
                .collect(),
            separation,
        )?;
        Ok(DensitySpec {
            manifold,
            variant: DensityVariant::Mixture(parts.into_iter().map(|(_, d)| d).collect()),
        })
    }

    pub fn manifold(&self) -> &ManifoldSpec {
        &self.manifold
    }

    pub fn variant(&self) -> &DensityVariant {
        &self.variant
    }

    pub fn ambient_dim(&self) -> usize {
        self.manifold.ambient_dim()
    }

    /// Draw n i.i.d. points; deterministic for a fixed seed.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<DVector<f64>>, GeometryError> {
        if n == 0 {
            return Ok(Vec::new());
        }
        let mut rng = rng::seeded(seed);
        self.sample_with(n, &mut rng)
    }

    /// Draw n i.i.d. points from an existing RNG stream.
    pub fn sample_with<R: Rng>(
        &self,
        n: usize,
        rng: &mut R,
    ) -> Result<Vec<DVector<f64>>, GeometryError> {
        let dim = self.ambient_dim();
        let mut out = Vec::with_capacity(n);
        match (&self.variant, &self.manifold) {
            (DensityVariant::UniformOnCompact, ManifoldSpec::Sphere {
                radius,
                ambient_dim,
                intrinsic_dim,
            }) => {
                let k = intrinsic_dim + 1;
                for _ in 0..n {
                    let mut p = DVector::zeros(*ambient_dim);
                    loop {
                        let mut sq = 0.0;
                        for i in 0..k {
                            let g: f64 = rng.sample(StandardNormal);
                            p[i] = g;
                            sq += g * g;
                        }
                        if sq > 0.0 {
                            let norm = sq.sqrt();
                            for i in 0..k {
                                p[i] = p[i] / norm * radius;
                            }
                            break;
                        }
                    }
                    out.push(p);
                }
            }
            (DensityVariant::UniformOnCompact, ManifoldSpec::SwissRoll { ambient_dim }) => {
                let total = swiss_total_arc_length();
                for _ in 0..n {
                    let s: f64 = rng.gen::<f64>() * total;
                    let t = swiss_t_of_arc_length(s);
                    let h: f64 = rng.gen::<f64>() * SWISS_H_MAX;
                    let mut p = DVector::zeros(*ambient_dim);
                    p[0] = t * t.cos();
                    p[1] = t * t.sin();
                    p[2] = h;
                    out.push(p);
                }
            }
            (
                DensityVariant::GaussianOnAffine { mean, cov },
                ManifoldSpec::AffineSubspace { basis, offset },
            ) => {
                let chol = cov.clone().cholesky().expect("validated SPD").l();
                let d = mean.len();
                for _ in 0..n {
                    let u = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
                    let z = mean + &chol * u;
                    out.push(offset + basis * z);
                }
            }
            (DensityVariant::Empirical, ManifoldSpec::PointSet { points }) => {
                for _ in 0..n {
                    let i = rng.gen_range(0..points.len());
                    out.push(points[i].clone());
                }
            }
            (DensityVariant::Mixture(components), ManifoldSpec::DisjointUnion { parts, .. }) => {
                for _ in 0..n {
                    let u: f64 = rng.gen();
                    let mut acc = 0.0;
                    let mut idx = parts.len() - 1;
                    for (i, (_, w)) in parts.iter().enumerate() {
                        acc += w;
                        if u < acc {
                            idx = i;
                            break;
                        }
                    }
                    out.push(components[idx].sample_with(1, rng)?.pop().unwrap());
                }
            }
            (variant, manifold) => {
                return Err(GeometryError::NotSamplable(format!(
                    "{variant:?} on {manifold:?}"
                )));
            }
        }
        debug_assert!(out.iter().all(|p| p.len() == dim));
        Ok(out)
    }

    /// Pointwise density with respect to the Riemannian measure; atoms report
    /// their mass. Errors if `x` is off the manifold.
    pub fn density_at(&self, x: &DVector<f64>) -> Result<f64, GeometryError> {
        Ok(self.log_density_at(x)?.exp())
    }

    /// Log of [`Self::density_at`].
    pub fn log_density_at(&self, x: &DVector<f64>) -> Result<f64, GeometryError> {
        let proj = self.manifold.project(x);
        if proj.residual >= ON_MANIFOLD_TOL {
            return Err(GeometryError::OffManifold {
                residual: proj.residual,
            });
        }
        match (&self.variant, &self.manifold) {
            (DensityVariant::UniformOnCompact, ManifoldSpec::Sphere {
                radius,
                intrinsic_dim,
                ..
            }) => {
                // 1 / (A_d R^d)
                Ok(-(ln_sphere_area(*intrinsic_dim) + (*intrinsic_dim as f64) * radius.ln()))
            }
            (DensityVariant::UniformOnCompact, ManifoldSpec::SwissRoll { .. }) => {
                Ok(-(swiss_total_arc_length() * SWISS_H_MAX).ln())
            }
            (
                DensityVariant::GaussianOnAffine { mean, cov },
                ManifoldSpec::AffineSubspace { basis, offset },
            ) => {
                let z = basis.transpose() * (x - offset);
                Ok(gaussian_log_pdf(&z, mean, cov))
            }
            (DensityVariant::Empirical, ManifoldSpec::PointSet { points }) => {
                Ok(-(points.len() as f64).ln())
            }
            (DensityVariant::Mixture(components), ManifoldSpec::DisjointUnion { parts, .. }) => {
                let j = proj.component;
                Ok(parts[j].1.ln() + components[j].log_density_at(x)?)
            }
            (variant, manifold) => Err(GeometryError::Invalid(format!(
                "unsupported density {variant:?} on {manifold:?}"
            ))),
        }
    }

    /// Monte Carlo estimate of the minimum cross-component distance of a
    /// mixture, as a sanity check against the declared separation.
    pub fn estimate_separation(&self, n: usize, seed: u64) -> Result<f64, GeometryError> {
        let (components, parts) = match (&self.variant, &self.manifold) {
            (DensityVariant::Mixture(c), ManifoldSpec::DisjointUnion { parts, .. }) => (c, parts),
            _ => {
                return Err(GeometryError::Invalid(
                    "separation is only defined for mixtures".into(),
                ))
            }
        };
        let _ = parts;
        let mut banks = Vec::new();
        for (i, c) in components.iter().enumerate() {
            banks.push(c.sample(n, seed.wrapping_add(i as u64))?);
        }
        let mut min = f64::INFINITY;
        for i in 0..banks.len() {
            for j in (i + 1)..banks.len() {
                for a in &banks[i] {
                    for b in &banks[j] {
                        min = min.min((a - b).norm());
                    }
                }
            }
        }
        Ok(min)
    }

    /// Finite-second-moment constant of the limit theorems:
    /// the expected squared geodesic distance from `x` under this density,
    /// restricted to the component containing `x`.
    pub fn second_moment(&self, x: &DVector<f64>) -> Result<SecondMoment, GeometryError> {
        let proj = self.manifold.project(x);
        if proj.residual >= ON_MANIFOLD_TOL {
            return Err(GeometryError::OffManifold {
                residual: proj.residual,
            });
        }
        match (&self.variant, &self.manifold) {
            (DensityVariant::Empirical, ManifoldSpec::PointSet { .. }) => Ok(SecondMoment {
                value: 0.0,
                stderr: 0.0,
            }),
            (DensityVariant::UniformOnCompact, ManifoldSpec::Sphere {
                radius,
                intrinsic_dim,
                ..
            }) => {
                // E[(R theta)^2] with theta distributed as the polar angle,
                // density proportional to sin^{d-1}.
                let d = *intrinsic_dim as f64;
                let n = 200_000;
                let mut log_num = Vec::with_capacity(n + 1);
                let mut log_den = Vec::with_capacity(n + 1);
                for k in 0..=n {
                    let theta = std::f64::consts::PI * k as f64 / n as f64;
                    let w = if k == 0 || k == n { 0.5f64 } else { 1.0 };
                    let ls = if d == 1.0 {
                        0.0
                    } else if theta == 0.0 || theta == std::f64::consts::PI {
                        f64::NEG_INFINITY
                    } else {
                        (d - 1.0) * theta.sin().ln()
                    };
                    let base = w.ln() + ls;
                    log_den.push(base);
                    if theta > 0.0 {
                        log_num.push(base + 2.0 * theta.ln());
                    }
                }
                let value =
                    radius * radius * (log_sum_exp(&log_num) - log_sum_exp(&log_den)).exp();
                Ok(SecondMoment { value, stderr: 0.0 })
            }
            (DensityVariant::UniformOnCompact, ManifoldSpec::SwissRoll { .. }) => {
                let (t, h) = swiss_nearest_params(x);
                let s0 = swiss_arc_length(t) - swiss_arc_length(SWISS_T_MIN);
                let l = swiss_total_arc_length();
                let e_s = ((l - s0).powi(3) + s0.powi(3)) / (3.0 * l);
                let e_h = ((SWISS_H_MAX - h).powi(3) + h.powi(3)) / (3.0 * SWISS_H_MAX);
                Ok(SecondMoment {
                    value: e_s + e_h,
                    stderr: 0.0,
                })
            }
            (
                DensityVariant::GaussianOnAffine { mean, cov },
                ManifoldSpec::AffineSubspace { basis, offset },
            ) => {
                // Geodesics are straight lines: E||x - X||^2 = ||z - mean||^2 + tr cov.
                let z = basis.transpose() * (x - offset);
                let value = (z - mean).norm_squared() + cov.trace();
                Ok(SecondMoment { value, stderr: 0.0 })
            }
            (DensityVariant::Mixture(components), _) => {
                components[proj.component].second_moment(x)
            }
            (variant, manifold) => Err(GeometryError::UnsupportedGeodesic(format!(
                "{variant:?} on {manifold:?}"
            ))),
        }
    }
}

/// Second-moment estimate with a reported standard error (0 for exact paths).
#[derive(Debug, Clone, Copy)]
pub struct SecondMoment {
    pub value: f64,
    pub stderr: f64,
}

/// Log pdf of a multivariate normal in subspace coordinates.
pub fn gaussian_log_pdf(z: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let d = z.len() as f64;
    let chol = cov.clone().cholesky().expect("SPD covariance");
    let diff = z - mean;
    let sol = chol.solve(&diff);
    let ln_det: f64 = chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
    -0.5 * (d * (2.0 * std::f64::consts::PI).ln() + ln_det + diff.dot(&sol))
}

/// A point on a declared manifold with its known true LID.
#[derive(Debug, Clone)]
pub struct QueryPoint {
    pub coords: DVector<f64>,
    pub component_index: usize,
    pub true_lid: usize,
}

impl QueryPoint {
    /// Validate that `coords` lies on the manifold and record the component
    /// and its intrinsic dimension.
    pub fn on(manifold: &ManifoldSpec, coords: DVector<f64>) -> Result<Self, GeometryError> {
        let proj = manifold.project(&coords);
        if proj.residual >= ON_MANIFOLD_TOL {
            return Err(GeometryError::OffManifold {
                residual: proj.residual,
            });
        }
        Ok(QueryPoint {
            coords,
            component_index: proj.component,
            true_lid: proj.intrinsic_dim,
        })
    }
}
