//! Experiment config files: flat key-value text with section headers.
//!
//! One experiment per file. Example:
//!
//! ```text
//! [manifold]
//! kind = circle
//! radius = 1.0
//!
//! [density]
//! kind = uniform
//!
//! [schedule]
//! kind = ve
//! sigma_min = 1e-4
//! sigma_max = 50
//!
//! [grid]
//! start = -8
//! stop = -2
//! step = 0.5
//!
//! [queries]
//! points = 1 0; 0 1
//!
//! [estimators]
//! list = flipd uniform_slope lidl ball_count
//!
//! [experiment]
//! seed = 7
//! ```
//!
//! Unions declare `kind = union` plus `[component.0]`, `[component.1]`, ...
//! sections, each carrying a `weight`, the component manifold keys, and a
//! `density` key.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::estimators::EstimatorKind;
use crate::geometry::{DensitySpec, ManifoldSpec, QueryPoint};
use crate::schedule::ScheduleSpec;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config error: {0}")]
    Message(String),
    #[error("config read error: {0}")]
    Io(#[from] std::io::Error),
}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Message(msg.into()))
}

/// Trace evaluation requested for FLIPD; Hutchinson probe seeds are derived
/// per task at sweep time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TraceSetting {
    Exact,
    Hutchinson { probes: usize },
    Fd { step: f64 },
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub density: DensitySpec,
    pub schedule: ScheduleSpec,
    pub estimators: Vec<EstimatorKind>,
    pub grid: Vec<f64>,
    pub queries: Vec<QueryPoint>,
    pub trace: TraceSetting,
    pub seed: u64,
    /// Central-difference step for the uniform-slope estimator.
    pub slope_step: f64,
    /// Quadrature floor for circle integrals.
    pub quad_nodes: usize,
    /// Bank size for Monte Carlo balls and the ball-count regressor.
    pub mc_samples: usize,
    /// Minimum neighbor count per retained grid point in ball-count fits.
    pub k_min: usize,
    /// Count for the `sample` subcommand.
    pub sample_count: usize,
    pub sde_steps: usize,
    pub sde_samples: usize,
}

type Section = BTreeMap<String, String>;

fn parse_sections(text: &str) -> Result<BTreeMap<String, Section>, ConfigError> {
    let mut out: BTreeMap<String, Section> = BTreeMap::new();
    let mut current: Option<String> = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| {
                    ConfigError::Message(format!("line {}: unterminated section header", lineno + 1))
                })?
                .trim()
                .to_string();
            if out.contains_key(&name) {
                return err(format!("line {}: duplicate section [{name}]", lineno + 1));
            }
            out.insert(name.clone(), Section::new());
            current = Some(name);
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            ConfigError::Message(format!("line {}: expected `key = value`", lineno + 1))
        })?;
        let section = current.as_ref().ok_or_else(|| {
            ConfigError::Message(format!("line {}: key outside any section", lineno + 1))
        })?;
        let prev = out
            .get_mut(section)
            .unwrap()
            .insert(k.trim().to_string(), v.trim().to_string());
        if prev.is_some() {
            return err(format!(
                "line {}: duplicate key `{}` in [{section}]",
                lineno + 1,
                k.trim()
            ));
        }
    }
    Ok(out)
}

fn get<'a>(sec: &'a Section, name: &str, key: &str) -> Result<&'a str, ConfigError> {
    sec.get(key)
        .map(|s| s.as_str())
        .ok_or_else(|| ConfigError::Message(format!("[{name}] is missing `{key}`")))
}

fn get_f64(sec: &Section, name: &str, key: &str) -> Result<f64, ConfigError> {
    let raw = get(sec, name, key)?;
    raw.parse()
        .map_err(|_| ConfigError::Message(format!("[{name}] {key} = {raw}: not a number")))
}

fn get_usize(sec: &Section, name: &str, key: &str) -> Result<usize, ConfigError> {
    let raw = get(sec, name, key)?;
    raw.parse()
        .map_err(|_| ConfigError::Message(format!("[{name}] {key} = {raw}: not a count")))
}

fn opt_f64(sec: &Section, name: &str, key: &str, default: f64) -> Result<f64, ConfigError> {
    match sec.get(key) {
        Some(_) => get_f64(sec, name, key),
        None => Ok(default),
    }
}

fn opt_usize(sec: &Section, name: &str, key: &str, default: usize) -> Result<usize, ConfigError> {
    match sec.get(key) {
        Some(_) => get_usize(sec, name, key),
        None => Ok(default),
    }
}

fn parse_vector(raw: &str, ctx: &str) -> Result<DVector<f64>, ConfigError> {
    let vals = raw
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| ConfigError::Message(format!("{ctx}: `{raw}` is not a vector")))?;
    if vals.is_empty() {
        return err(format!("{ctx}: empty vector"));
    }
    Ok(DVector::from_vec(vals))
}

fn parse_points(raw: &str, ctx: &str) -> Result<Vec<DVector<f64>>, ConfigError> {
    raw.split(';')
        .map(|p| parse_vector(p, ctx))
        .collect::<Result<Vec<_>, _>>()
}

/// Build a single (non-union) manifold from its section.
fn build_manifold(sec: &Section, name: &str) -> Result<ManifoldSpec, ConfigError> {
    let kind = get(sec, name, "kind")?;
    let spec = match kind {
        "circle" => ManifoldSpec::circle(opt_f64(sec, name, "radius", 1.0)?),
        "sphere" => ManifoldSpec::sphere(
            opt_f64(sec, name, "radius", 1.0)?,
            get_usize(sec, name, "ambient_dim")?,
            get_usize(sec, name, "intrinsic_dim")?,
        ),
        "swiss_roll" => ManifoldSpec::swiss_roll(opt_usize(sec, name, "ambient_dim", 3)?),
        "point_set" => {
            let points = parse_points(get(sec, name, "points")?, &format!("[{name}] points"))?;
            ManifoldSpec::point_set(points)
        }
        "affine" => {
            // Axis-aligned coordinate subspace: `span_dims` lists the spanned
            // coordinates; general bases are available through the API.
            let offset = parse_vector(get(sec, name, "offset")?, &format!("[{name}] offset"))?;
            let span: Vec<usize> = get(sec, name, "span_dims")?
                .split_whitespace()
                .map(|t| t.parse::<usize>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| {
                    ConfigError::Message(format!("[{name}] span_dims must be indices"))
                })?;
            let dim = offset.len();
            if span.iter().any(|&i| i >= dim) {
                return err(format!("[{name}] span_dims index out of range"));
            }
            let mut basis = DMatrix::zeros(dim, span.len());
            for (col, &i) in span.iter().enumerate() {
                basis[(i, col)] = 1.0;
            }
            ManifoldSpec::affine(basis, offset)
        }
        other => return err(format!("[{name}] unknown manifold kind `{other}`")),
    };
    spec.map_err(|e| ConfigError::Message(format!("[{name}] invalid manifold: {e}")))
}

/// Build a density on an already-built manifold. `kind` comes from the
/// `[density]` section at top level or the `density` key in components.
fn build_density(
    manifold: ManifoldSpec,
    kind: &str,
    sec: &Section,
    name: &str,
) -> Result<DensitySpec, ConfigError> {
    let spec = match kind {
        "uniform" => DensitySpec::uniform(manifold),
        "empirical" => DensitySpec::empirical(manifold),
        "gaussian" => {
            let d = match &manifold {
                ManifoldSpec::AffineSubspace { basis, .. } => basis.ncols(),
                _ => return err(format!("[{name}] gaussian density needs an affine manifold")),
            };
            let mean = match sec.get("mean") {
                Some(raw) => parse_vector(raw, &format!("[{name}] mean"))?,
                None => DVector::zeros(d),
            };
            let cov = match sec.get("diag") {
                Some(raw) => {
                    let v = parse_vector(raw, &format!("[{name}] diag"))?;
                    DMatrix::from_diagonal(&v)
                }
                None => DMatrix::identity(d, d),
            };
            DensitySpec::gaussian_on_affine(manifold, mean, cov)
        }
        other => return err(format!("[{name}] unknown density kind `{other}`")),
    };
    spec.map_err(|e| ConfigError::Message(format!("[{name}] invalid density: {e}")))
}

fn build_top_density(sections: &BTreeMap<String, Section>) -> Result<DensitySpec, ConfigError> {
    let man = sections
        .get("manifold")
        .ok_or_else(|| ConfigError::Message("missing [manifold] section".into()))?;
    let kind = get(man, "manifold", "kind")?;
    if kind != "union" {
        let den = sections
            .get("density")
            .ok_or_else(|| ConfigError::Message("missing [density] section".into()))?;
        let manifold = build_manifold(man, "manifold")?;
        return build_density(manifold, get(den, "density", "kind")?, den, "density");
    }
    let separation = get_f64(man, "manifold", "separation")?;
    let mut parts = Vec::new();
    for i in 0.. {
        let name = format!("component.{i}");
        let sec = match sections.get(&name) {
            Some(s) => s,
            None => break,
        };
        let weight = get_f64(sec, &name, "weight")?;
        let manifold = build_manifold(sec, &name)?;
        let density = build_density(manifold, get(sec, &name, "density")?, sec, &name)?;
        parts.push((weight, density));
    }
    if parts.len() < 2 {
        return err("a union needs at least [component.0] and [component.1]");
    }
    DensitySpec::mixture(parts, separation)
        .map_err(|e| ConfigError::Message(format!("invalid union: {e}")))
}

fn build_schedule(sections: &BTreeMap<String, Section>) -> Result<ScheduleSpec, ConfigError> {
    let sec = sections
        .get("schedule")
        .ok_or_else(|| ConfigError::Message("missing [schedule] section".into()))?;
    match get(sec, "schedule", "kind")? {
        "ve" => ScheduleSpec::ve(
            opt_f64(sec, "schedule", "sigma_min", 1e-4)?,
            opt_f64(sec, "schedule", "sigma_max", 50.0)?,
        ),
        "vp" => ScheduleSpec::vp(
            opt_f64(sec, "schedule", "beta_min", 0.1)?,
            opt_f64(sec, "schedule", "beta_max", 20.0)?,
        ),
        other => return err(format!("[schedule] unknown kind `{other}`")),
    }
    .map_err(|e| ConfigError::Message(format!("[schedule] {e}")))
}

fn build_grid(
    sections: &BTreeMap<String, Section>,
    schedule: &ScheduleSpec,
) -> Result<Vec<f64>, ConfigError> {
    let sec = sections
        .get("grid")
        .ok_or_else(|| ConfigError::Message("missing [grid] section".into()))?;
    let start = get_f64(sec, "grid", "start")?;
    let stop = get_f64(sec, "grid", "stop")?;
    let step = get_f64(sec, "grid", "step")?;
    if !(step > 0.0) || stop < start {
        return err("[grid] needs step > 0 and stop >= start");
    }
    let mut grid = Vec::new();
    let mut k = 0u32;
    loop {
        let d = start + step * k as f64;
        if d > stop + 1e-9 {
            break;
        }
        grid.push(d);
        k += 1;
    }
    let (lo, hi) = schedule.delta_range();
    for &d in &grid {
        if d < lo - 1e-9 || d > hi + 1e-9 {
            return err(format!(
                "[grid] delta {d} outside the schedule range [{lo}, {hi}]"
            ));
        }
    }
    Ok(grid)
}

fn build_queries(
    sections: &BTreeMap<String, Section>,
    density: &DensitySpec,
) -> Result<Vec<QueryPoint>, ConfigError> {
    let sec = sections
        .get("queries")
        .ok_or_else(|| ConfigError::Message("missing [queries] section".into()))?;
    let manifold = density.manifold();
    let coords: Vec<DVector<f64>> = if let Some(raw) = sec.get("points") {
        parse_points(raw, "[queries] points")?
    } else if sec.contains_key("sample") {
        let n = get_usize(sec, "queries", "sample")?;
        let seed = opt_usize(sec, "queries", "seed", 0)? as u64;
        density
            .sample(n, seed)
            .map_err(|e| ConfigError::Message(format!("[queries] sampling failed: {e}")))?
    } else {
        return err("[queries] needs either `points` or `sample`");
    };
    if coords.is_empty() {
        return err("[queries] resolved to zero points");
    }
    coords
        .into_iter()
        .map(|c| {
            QueryPoint::on(manifold, c)
                .map_err(|e| ConfigError::Message(format!("[queries] off-manifold point: {e}")))
        })
        .collect()
}

impl ExperimentConfig {
    pub fn from_str(text: &str) -> Result<Self, ConfigError> {
        let sections = parse_sections(text)?;
        for name in sections.keys() {
            let known = matches!(
                name.as_str(),
                "manifold" | "density" | "schedule" | "grid" | "queries" | "estimators"
                    | "experiment" | "sample" | "sde"
            ) || name.starts_with("component.");
            if !known {
                return err(format!("unknown section [{name}]"));
            }
        }
        let density = build_top_density(&sections)?;
        let schedule = build_schedule(&sections)?;
        let grid = build_grid(&sections, &schedule)?;
        let queries = build_queries(&sections, &density)?;

        let empty = Section::new();
        let est = sections.get("estimators").unwrap_or(&empty);
        let estimators = est
            .get("list")
            .map(|s| s.as_str())
            .unwrap_or("flipd")
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| match t {
                "flipd" => Ok(EstimatorKind::Flipd),
                "uniform_slope" => Ok(EstimatorKind::UniformSlope),
                "lidl" => Ok(EstimatorKind::Lidl),
                "ball_count" => Ok(EstimatorKind::BallCount),
                other => err(format!("[estimators] unknown estimator `{other}`")),
            })
            .collect::<Result<Vec<_>, _>>()?;
        if estimators.is_empty() {
            return err("[estimators] list is empty");
        }
        let trace = match est.get("trace_mode").map(|s| s.as_str()).unwrap_or("exact") {
            "exact" => TraceSetting::Exact,
            "hutchinson" => TraceSetting::Hutchinson {
                probes: opt_usize(est, "estimators", "probes", 1000)?,
            },
            "fd" => TraceSetting::Fd {
                step: opt_f64(est, "estimators", "fd_step", 1e-4)?,
            },
            other => return err(format!("[estimators] unknown trace_mode `{other}`")),
        };

        let exp = sections.get("experiment").unwrap_or(&empty);
        let sample = sections.get("sample").unwrap_or(&empty);
        let sde = sections.get("sde").unwrap_or(&empty);
        Ok(ExperimentConfig {
            density,
            schedule,
            estimators,
            grid,
            queries,
            trace,
            seed: opt_usize(exp, "experiment", "seed", 0)? as u64,
            slope_step: opt_f64(est, "estimators", "slope_step", 0.05)?,
            quad_nodes: opt_usize(est, "estimators", "quad_nodes", 2048)?,
            mc_samples: opt_usize(est, "estimators", "mc_samples", 100_000)?,
            k_min: opt_usize(est, "estimators", "k_min", 20)?,
            sample_count: opt_usize(sample, "sample", "count", 1000)?,
            sde_steps: opt_usize(sde, "sde", "steps", 2000)?,
            sde_samples: opt_usize(sde, "sde", "samples", 10_000)?,
        })
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        Self::from_str(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CIRCLE: &str = "
[manifold]
kind = circle
radius = 1.0

[density]
kind = uniform

[schedule]
kind = ve
sigma_min = 1e-4
sigma_max = 50

[grid]
start = -8
stop = -2
step = 1.0

[queries]
points = 1 0; 0 1

[estimators]
list = flipd, lidl

[experiment]
seed = 7
";

    #[test]
    fn parses_circle_config() {
        let cfg = ExperimentConfig::from_str(CIRCLE).unwrap();
        assert_eq!(cfg.grid.len(), 7);
        assert_eq!(cfg.queries.len(), 2);
        assert_eq!(cfg.queries[0].true_lid, 1);
        assert_eq!(cfg.seed, 7);
        assert_eq!(
            cfg.estimators,
            vec![EstimatorKind::Flipd, EstimatorKind::Lidl]
        );
        assert_eq!(cfg.trace, TraceSetting::Exact);
    }

    #[test]
    fn parses_union_config() {
        let text = "
[manifold]
kind = union
separation = 4.0

[component.0]
weight = 0.5
kind = circle
radius = 1.0
density = uniform

[component.1]
weight = 0.5
kind = point_set
points = 5 0; 0 5
density = empirical

[schedule]
kind = ve

[grid]
start = -6
stop = -6
step = 1

[queries]
points = 1 0; 5 0
";
        let cfg = ExperimentConfig::from_str(text).unwrap();
        assert_eq!(cfg.queries[0].true_lid, 1);
        assert_eq!(cfg.queries[0].component_index, 0);
        assert_eq!(cfg.queries[1].true_lid, 0);
        assert_eq!(cfg.queries[1].component_index, 1);
    }

    #[test]
    fn rejects_off_manifold_query() {
        let bad = CIRCLE.replace("points = 1 0; 0 1", "points = 2 0");
        assert!(ExperimentConfig::from_str(&bad).is_err());
    }

    #[test]
    fn rejects_grid_outside_schedule() {
        let bad = CIRCLE.replace("start = -8", "start = -12");
        let e = ExperimentConfig::from_str(&bad).unwrap_err();
        assert!(e.to_string().contains("schedule range"), "{e}");
    }

    #[test]
    fn rejects_unknown_section_and_duplicate_key() {
        let bad = format!("{CIRCLE}\n[plots]\nx = 1\n");
        assert!(ExperimentConfig::from_str(&bad).is_err());
        let dup = CIRCLE.replace("seed = 7", "seed = 7\nseed = 8");
        assert!(ExperimentConfig::from_str(&dup).is_err());
    }

    #[test]
    fn sampled_queries_land_on_manifold() {
        let text = CIRCLE.replace("points = 1 0; 0 1", "sample = 5\nseed = 3");
        let cfg = ExperimentConfig::from_str(&text).unwrap();
        assert_eq!(cfg.queries.len(), 5);
        assert!(cfg.queries.iter().all(|q| q.true_lid == 1));
    }
}
