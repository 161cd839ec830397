//! Sweep execution: every (query point, delta, estimator) cell of a config,
//! run in parallel and emitted as CSV or JSON.
//!
//! Determinism: each task derives its RNG stream from (seed, point, delta
//! index, estimator), and all shared banks are seeded from the experiment
//! seed, so output is identical for any worker count. The `runtime_ms`
//! column is wall-clock and is the one column excluded from that guarantee.

use std::io::Write;
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::convolve::{BallMethod, BallOracle, ConvolutionOracle, ConvolveMethod, SlopeForm};
use crate::estimators::{
    ball_count_regress, flipd, lidl_regress, EstimatorKind, LidEstimate, TraceMode,
};
use crate::geometry::{DensitySpec, DensityVariant, ManifoldSpec};
use crate::harness::config::{ExperimentConfig, TraceSetting};
use crate::score::{ScoreField, TraceProbe};

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub point_id: usize,
    pub component_index: usize,
    pub true_lid: usize,
    pub delta: f64,
    pub estimator: &'static str,
    pub value: Option<f64>,
    pub stderr: Option<f64>,
    pub error: Option<String>,
    pub runtime_ms: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

/// True when every leaf density admits closed-form kernel moments.
fn closed_form_ok(density: &DensitySpec) -> bool {
    match density.variant() {
        DensityVariant::Empirical | DensityVariant::GaussianOnAffine { .. } => true,
        DensityVariant::UniformOnCompact => false,
        DensityVariant::Mixture(parts) => parts.iter().all(closed_form_ok),
    }
}

/// True when the density only involves uniform circles besides closed-form
/// leaves, so trapezoid quadrature covers everything.
fn quadrature_ok(density: &DensitySpec) -> bool {
    match (density.variant(), density.manifold()) {
        (DensityVariant::UniformOnCompact, ManifoldSpec::Sphere {
            intrinsic_dim: 1, ..
        }) => true,
        (DensityVariant::UniformOnCompact, _) => false,
        (DensityVariant::Mixture(parts), _) => parts.iter().all(|p| quadrature_ok(p) || closed_form_ok(p)),
        _ => true,
    }
}

fn exact_ball_ok(density: &DensitySpec) -> bool {
    match (density.variant(), density.manifold()) {
        (DensityVariant::UniformOnCompact, ManifoldSpec::Sphere { .. }) => true,
        (DensityVariant::Empirical, _) => true,
        (DensityVariant::Mixture(parts), _) => parts.iter().all(exact_ball_ok),
        _ => false,
    }
}

/// Shared per-sweep resources, each optional with a recorded failure reason.
struct SweepContext {
    score_field: Result<ScoreField, String>,
    conv_oracle: Result<ConvolutionOracle, String>,
    ball_oracle: Result<BallOracle, String>,
    ball_is_mc: bool,
    count_bank: Result<Vec<DVector<f64>>, String>,
}

impl SweepContext {
    fn build(cfg: &ExperimentConfig) -> Self {
        let density = &cfg.density;
        let score_field = ScoreField::for_density(density, cfg.schedule, cfg.quad_nodes)
            .map_err(|e| e.to_string());
        let method = if closed_form_ok(density) {
            Some(ConvolveMethod::ClosedForm)
        } else if quadrature_ok(density) {
            Some(ConvolveMethod::Quadrature {
                min_nodes: cfg.quad_nodes,
            })
        } else if density.sample(1, 0).is_ok() {
            Some(ConvolveMethod::MonteCarlo {
                samples: cfg.mc_samples,
                seed: crate::rng::mix(cfg.seed, 101),
            })
        } else {
            None
        };
        let conv_oracle = match method {
            Some(m) => ConvolutionOracle::new(density.clone(), m).map_err(|e| e.to_string()),
            None => Err("no applicable convolution method for this density".into()),
        };
        let ball_is_mc = !exact_ball_ok(density);
        let ball_method = if ball_is_mc {
            BallMethod::MonteCarlo {
                samples: cfg.mc_samples,
                seed: crate::rng::mix(cfg.seed, 102),
            }
        } else {
            BallMethod::Exact
        };
        let ball_oracle = Ok(BallOracle::new(density.clone(), ball_method));
        let count_bank = density
            .sample(cfg.mc_samples, crate::rng::mix(cfg.seed, 103))
            .map_err(|e| e.to_string());
        SweepContext {
            score_field,
            conv_oracle,
            ball_oracle,
            ball_is_mc,
            count_bank,
        }
    }
}

fn estimator_ordinal(kind: EstimatorKind) -> u64 {
    match kind {
        EstimatorKind::Flipd => 0,
        EstimatorKind::UniformSlope => 1,
        EstimatorKind::Lidl => 2,
        EstimatorKind::BallCount => 3,
    }
}

/// Whether an estimator consumes the whole delta grid at once; such
/// estimators produce one value replicated across the grid's rows.
fn is_grid_estimator(kind: EstimatorKind) -> bool {
    matches!(kind, EstimatorKind::Lidl | EstimatorKind::BallCount)
}

fn ok_rows(
    cfg: &ExperimentConfig,
    point_id: usize,
    kind: EstimatorKind,
    deltas: &[f64],
    est: &LidEstimate,
    ms: f64,
) -> Vec<SweepRow> {
    let q = &cfg.queries[point_id];
    deltas
        .iter()
        .map(|&delta| {
            if est.value.is_finite() {
                SweepRow {
                    point_id,
                    component_index: q.component_index,
                    true_lid: q.true_lid,
                    delta,
                    estimator: kind.name(),
                    value: Some(est.value),
                    stderr: Some(est.diagnostics.stderr.unwrap_or(0.0)),
                    error: None,
                    runtime_ms: ms,
                }
            } else {
                err_rows(cfg, point_id, kind, &[delta], "non-finite value", ms)
                    .pop()
                    .unwrap()
            }
        })
        .collect()
}

fn err_rows(
    cfg: &ExperimentConfig,
    point_id: usize,
    kind: EstimatorKind,
    deltas: &[f64],
    msg: &str,
    ms: f64,
) -> Vec<SweepRow> {
    let q = &cfg.queries[point_id];
    deltas
        .iter()
        .map(|&delta| SweepRow {
            point_id,
            component_index: q.component_index,
            true_lid: q.true_lid,
            delta,
            estimator: kind.name(),
            value: None,
            stderr: None,
            error: Some(msg.to_string()),
            runtime_ms: ms,
        })
        .collect()
}

fn run_task(
    cfg: &ExperimentConfig,
    ctx: &SweepContext,
    point_id: usize,
    kind: EstimatorKind,
    delta_idx: Option<usize>,
) -> Vec<SweepRow> {
    let start = Instant::now();
    let ms = |t: Instant| t.elapsed().as_secs_f64() * 1e3;
    let x = &cfg.queries[point_id].coords;
    match kind {
        EstimatorKind::Flipd => {
            let delta = cfg.grid[delta_idx.unwrap()];
            let field = match &ctx.score_field {
                Ok(f) => f,
                Err(e) => return err_rows(cfg, point_id, kind, &[delta], e, ms(start)),
            };
            let mode = match cfg.trace {
                TraceSetting::Exact => TraceMode::Exact,
                TraceSetting::Hutchinson { probes } => TraceMode::Hutchinson {
                    probes,
                    seed: crate::rng::mix(
                        cfg.seed,
                        (point_id as u64) << 32
                            | (delta_idx.unwrap() as u64) << 8
                            | estimator_ordinal(kind),
                    ),
                    probe: TraceProbe::Rademacher,
                },
                TraceSetting::Fd { step } => TraceMode::Fd { step },
            };
            match flipd(field, x, delta, mode) {
                Ok(est) => ok_rows(cfg, point_id, kind, &[delta], &est, ms(start)),
                Err(e) => err_rows(cfg, point_id, kind, &[delta], &e.to_string(), ms(start)),
            }
        }
        EstimatorKind::UniformSlope => {
            let delta = cfg.grid[delta_idx.unwrap()];
            let ball = match &ctx.ball_oracle {
                Ok(b) => b,
                Err(e) => return err_rows(cfg, point_id, kind, &[delta], e, ms(start)),
            };
            match ball.log_slope(x, delta, cfg.slope_step, SlopeForm::BallProbability) {
                Ok(v) => {
                    let stderr = if ctx.ball_is_mc {
                        mc_slope_stderr(ball, x, delta, cfg.slope_step)
                    } else {
                        0.0
                    };
                    let est = LidEstimate {
                        value: v,
                        estimator: kind,
                        delta_used: delta,
                        diagnostics: crate::estimators::Diagnostics {
                            stderr: Some(stderr),
                            ..Default::default()
                        },
                    };
                    ok_rows(cfg, point_id, kind, &[delta], &est, ms(start))
                }
                Err(e) => err_rows(cfg, point_id, kind, &[delta], &e.to_string(), ms(start)),
            }
        }
        EstimatorKind::Lidl => {
            let oracle = match &ctx.conv_oracle {
                Ok(o) => o,
                Err(e) => return err_rows(cfg, point_id, kind, &cfg.grid, e, ms(start)),
            };
            match lidl_regress(oracle, x, &cfg.grid) {
                Ok((est, _)) => ok_rows(cfg, point_id, kind, &cfg.grid, &est, ms(start)),
                Err(e) => err_rows(cfg, point_id, kind, &cfg.grid, &e.to_string(), ms(start)),
            }
        }
        EstimatorKind::BallCount => {
            let bank = match &ctx.count_bank {
                Ok(b) => b,
                Err(e) => return err_rows(cfg, point_id, kind, &cfg.grid, e, ms(start)),
            };
            match ball_count_regress(bank, x, &cfg.grid, cfg.k_min) {
                Ok((est, _)) => ok_rows(cfg, point_id, kind, &cfg.grid, &est, ms(start)),
                Err(e) => err_rows(cfg, point_id, kind, &cfg.grid, &e.to_string(), ms(start)),
            }
        }
    }
}

/// Delta-method standard error of the central-difference log slope from the
/// Wilson-free binomial standard errors at the two stencil points.
fn mc_slope_stderr(ball: &BallOracle, x: &DVector<f64>, delta: f64, h: f64) -> f64 {
    let hi = ball.probability(x, delta + h);
    let lo = ball.probability(x, delta - h);
    match (hi, lo) {
        (Ok(hi), Ok(lo)) if hi.value > 0.0 && lo.value > 0.0 => {
            let v = (hi.stderr / hi.value).powi(2) + (lo.stderr / lo.value).powi(2);
            v.sqrt() / (2.0 * h)
        }
        _ => f64::NAN,
    }
}

pub fn run_sweep(cfg: &ExperimentConfig) -> SweepResult {
    let ctx = SweepContext::build(cfg);
    let mut tasks: Vec<(usize, EstimatorKind, Option<usize>)> = Vec::new();
    for point_id in 0..cfg.queries.len() {
        for &kind in &cfg.estimators {
            if is_grid_estimator(kind) {
                tasks.push((point_id, kind, None));
            } else {
                for di in 0..cfg.grid.len() {
                    tasks.push((point_id, kind, Some(di)));
                }
            }
        }
    }
    let mut rows: Vec<SweepRow> = tasks
        .par_iter()
        .flat_map_iter(|&(p, k, di)| run_task(cfg, &ctx, p, k, di))
        .collect();
    rows.sort_by(|a, b| {
        a.point_id
            .cmp(&b.point_id)
            .then(a.delta.partial_cmp(&b.delta).unwrap())
            .then(a.estimator.cmp(b.estimator))
    });
    SweepResult { rows }
}

impl SweepResult {
    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "point_id",
            "component_index",
            "true_lid",
            "delta",
            "estimator",
            "value",
            "stderr",
            "error",
            "runtime_ms",
        ])?;
        for r in &self.rows {
            out.write_record([
                r.point_id.to_string(),
                r.component_index.to_string(),
                r.true_lid.to_string(),
                r.delta.to_string(),
                r.estimator.to_string(),
                r.value.map(|v| v.to_string()).unwrap_or_default(),
                r.stderr.map(|v| v.to_string()).unwrap_or_default(),
                r.error.clone().unwrap_or_default(),
                r.runtime_ms.to_string(),
            ])?;
        }
        out.flush()
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("CSV is UTF-8")
    }

    pub fn write(&self, w: &mut dyn Write, format: OutputFormat) -> std::io::Result<()> {
        match format {
            OutputFormat::Csv => self.write_csv(w),
            OutputFormat::Json => {
                serde_json::to_writer_pretty(&mut *w, self)?;
                writeln!(w)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circle_cfg(extra: &str) -> ExperimentConfig {
        let text = format!(
            "
[manifold]
kind = circle

[density]
kind = uniform

[schedule]
kind = ve
sigma_min = 1e-4
sigma_max = 50

[grid]
start = -6
stop = -4
step = 1.0

[queries]
points = 1 0

[estimators]
list = flipd uniform_slope lidl ball_count
mc_samples = 20000

[experiment]
seed = 5
{extra}
"
        );
        ExperimentConfig::from_str(&text).unwrap()
    }

    #[test]
    fn sweep_shape_and_sorting() {
        let cfg = circle_cfg("");
        let res = run_sweep(&cfg);
        // 1 point x 3 deltas x 4 estimators.
        assert_eq!(res.rows.len(), 12);
        for w in res.rows.windows(2) {
            let a = (&w[0].point_id, w[0].delta, w[0].estimator);
            let b = (&w[1].point_id, w[1].delta, w[1].estimator);
            assert!(a <= b, "rows must be sorted");
        }
        // One row per (point, delta, estimator).
        for r in &res.rows {
            assert!(r.error.is_some() || r.value.unwrap().is_finite());
        }
    }

    #[test]
    fn circle_values_near_one() {
        let cfg = circle_cfg("");
        let res = run_sweep(&cfg);
        for r in &res.rows {
            let v = r.value.expect("no errors expected on the circle");
            match r.estimator {
                "flipd" | "uniform_slope" => {
                    if r.delta == -6.0 {
                        assert!((v - 1.0).abs() < 5e-3, "{}: {v}", r.estimator);
                    }
                }
                "lidl" => assert!((v - 1.0).abs() < 0.05, "lidl {v}"),
                "ball_count" => assert!((v - 1.0).abs() < 0.2, "ball_count {v}"),
                other => panic!("unexpected estimator {other}"),
            }
        }
    }

    #[test]
    fn exact_rows_have_zero_stderr_mc_rows_positive() {
        let cfg = circle_cfg("");
        let res = run_sweep(&cfg);
        for r in &res.rows {
            match r.estimator {
                "flipd" | "uniform_slope" => assert_eq!(r.stderr, Some(0.0)),
                "ball_count" => assert!(r.stderr.unwrap() > 0.0),
                _ => {}
            }
        }
    }

    #[test]
    fn deterministic_modulo_runtime() {
        let cfg = circle_cfg("");
        let strip = |s: &str| -> String {
            s.lines()
                .map(|l| l.rsplit_once(',').unwrap().0.to_string())
                .collect::<Vec<_>>()
                .join("\n")
        };
        let a = strip(&run_sweep(&cfg).to_csv_string());
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let b = strip(&pool.install(|| run_sweep(&cfg).to_csv_string()));
        assert_eq!(a, b, "output must not depend on worker count");
    }

    #[test]
    fn errors_recorded_per_row() {
        // Uniform 2-sphere: no analytic score field, so flipd rows carry an
        // error while uniform_slope rows succeed.
        let text = "
[manifold]
kind = sphere
ambient_dim = 3
intrinsic_dim = 2

[density]
kind = uniform

[schedule]
kind = ve
sigma_min = 1e-4
sigma_max = 50

[grid]
start = -5
stop = -5
step = 1

[queries]
points = 0 0 1

[estimators]
list = flipd uniform_slope
";
        let cfg = ExperimentConfig::from_str(text).unwrap();
        let res = run_sweep(&cfg);
        let flipd_row = res.rows.iter().find(|r| r.estimator == "flipd").unwrap();
        assert!(flipd_row.error.is_some());
        assert!(flipd_row.value.is_none());
        let slope_row = res
            .rows
            .iter()
            .find(|r| r.estimator == "uniform_slope")
            .unwrap();
        assert!(slope_row.error.is_none());
        assert!((slope_row.value.unwrap() - 2.0).abs() < 0.05);
    }

    #[test]
    fn csv_has_fixed_columns() {
        let cfg = circle_cfg("");
        let csv = run_sweep(&cfg).to_csv_string();
        assert!(csv.starts_with(
            "point_id,component_index,true_lid,delta,estimator,value,stderr,error,runtime_ms"
        ));
    }

    #[test]
    fn point_mass_flipd_is_zero() {
        let text = "
[manifold]
kind = point_set
points = 0 0

[density]
kind = empirical

[schedule]
kind = ve
sigma_min = 1e-4
sigma_max = 50

[grid]
start = -6
stop = -2
step = 2.0

[queries]
points = 0 0

[estimators]
list = flipd
";
        let cfg = ExperimentConfig::from_str(text).unwrap();
        for r in &run_sweep(&cfg).rows {
            assert!(r.value.unwrap().abs() < 1e-9, "point mass FLIPD must be 0");
        }
    }
}
