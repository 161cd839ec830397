//! `lid`: sample synthetic manifolds, estimate local intrinsic dimension,
//! run sweeps and theorem-verification suites, and demo reverse-SDE sampling.
//!
//! Exit codes: 0 success, 2 config error, 3 verification failure.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use lid_core::harness::{
    reverse_sde_demo, run_sweep, verify_all, ExperimentConfig, OutputFormat, Suite,
};

#[derive(Parser)]
#[command(name = "lid", version, about = "Local intrinsic dimension estimation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config file (required by everything except `verify`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the seed declared in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output path; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,

    /// Worker thread count; defaults to the number of cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Draw samples from the configured density and emit their coordinates.
    Sample,
    /// Run the first configured estimator on the first query point.
    Estimate,
    /// Run every (query point, delta, estimator) cell of the config.
    Sweep,
    /// Run theorem-verification suites (all of them by default).
    Verify {
        /// Subset of suites: thm1 thm2 cor1 cor2 prop1 prop2 eq14 eq15.
        suites: Vec<String>,
    },
    /// Reverse-SDE sampling demo with the exact score of an empirical density.
    DemoSde,
}

const EXIT_CONFIG: u8 = 2;
const EXIT_VERIFY: u8 = 3;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
        {
            eprintln!("lid: failed to set worker count: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("lid: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}

/// Any error bubbling out of here is treated as a config problem (exit 2);
/// verification failures return exit 3 through the Ok path.
fn run(cli: &Cli) -> anyhow::Result<ExitCode> {
    let mut sink: Box<dyn Write> = match &cli.out {
        Some(path) => Box::new(std::fs::File::create(path)?),
        None => Box::new(std::io::stdout().lock()),
    };

    if let Command::Verify { suites } = &cli.command {
        let chosen: Vec<Suite> = if suites.is_empty() {
            Suite::ALL.to_vec()
        } else {
            suites
                .iter()
                .map(|s| s.parse::<Suite>())
                .collect::<Result<_, _>>()
                .map_err(|e| anyhow::anyhow!(e))?
        };
        let report = verify_all(&chosen);
        match cli.format {
            Format::Json => {
                serde_json::to_writer_pretty(&mut sink, &report)?;
                writeln!(sink)?;
            }
            Format::Csv => {
                writeln!(sink, "suite,check,target,observed,tolerance,margin,pass")?;
                for s in &report.suites {
                    for c in &s.checks {
                        writeln!(
                            sink,
                            "{},\"{}\",{},{},{},{},{}",
                            s.suite, c.name, c.target, c.observed, c.tolerance, c.margin, c.pass
                        )?;
                    }
                }
            }
        }
        return Ok(if report.pass {
            ExitCode::SUCCESS
        } else {
            ExitCode::from(EXIT_VERIFY)
        });
    }

    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| anyhow::anyhow!("--config is required for this subcommand"))?;
    let mut cfg = ExperimentConfig::from_path(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }

    match &cli.command {
        Command::Sample => {
            let samples = cfg.density.sample(cfg.sample_count, cfg.seed)?;
            match cli.format {
                Format::Csv => {
                    let dim = cfg.density.ambient_dim();
                    let header: Vec<String> =
                        std::iter::once("point_id".to_string())
                            .chain((0..dim).map(|i| format!("coord_{i}")))
                            .collect();
                    writeln!(sink, "{}", header.join(","))?;
                    for (i, p) in samples.iter().enumerate() {
                        let coords: Vec<String> = p.iter().map(|v| v.to_string()).collect();
                        writeln!(sink, "{i},{}", coords.join(","))?;
                    }
                }
                Format::Json => {
                    let rows: Vec<Vec<f64>> =
                        samples.iter().map(|p| p.iter().copied().collect()).collect();
                    serde_json::to_writer_pretty(&mut sink, &rows)?;
                    writeln!(sink)?;
                }
            }
        }
        Command::Estimate => {
            cfg.queries.truncate(1);
            cfg.estimators.truncate(1);
            let result = run_sweep(&cfg);
            result.write(
                &mut sink,
                match cli.format {
                    Format::Csv => OutputFormat::Csv,
                    Format::Json => OutputFormat::Json,
                },
            )?;
        }
        Command::Sweep => {
            let result = run_sweep(&cfg);
            result.write(
                &mut sink,
                match cli.format {
                    Format::Csv => OutputFormat::Csv,
                    Format::Json => OutputFormat::Json,
                },
            )?;
        }
        Command::DemoSde => {
            let res = reverse_sde_demo(
                &cfg.density,
                cfg.schedule,
                cfg.sde_steps,
                cfg.sde_samples,
                cfg.seed,
            )?;
            match cli.format {
                Format::Csv => {
                    let dim = cfg.density.ambient_dim();
                    let header: Vec<String> =
                        std::iter::once("sample_id".to_string())
                            .chain((0..dim).map(|i| format!("coord_{i}")))
                            .collect();
                    writeln!(sink, "{}", header.join(","))?;
                    for (i, p) in res.samples.iter().enumerate() {
                        let coords: Vec<String> = p.iter().map(|v| v.to_string()).collect();
                        writeln!(sink, "{i},{}", coords.join(","))?;
                    }
                    match res.sliced_wasserstein {
                        Some(d) => eprintln!("sliced_wasserstein = {d}"),
                        None => eprintln!("sliced_wasserstein = undefined (no samples)"),
                    }
                }
                Format::Json => {
                    let payload = serde_json::json!({
                        "eps_stop": res.eps_stop,
                        "sliced_wasserstein": res.sliced_wasserstein,
                        "samples": res.samples.iter()
                            .map(|p| p.iter().copied().collect::<Vec<f64>>())
                            .collect::<Vec<_>>(),
                    });
                    serde_json::to_writer_pretty(&mut sink, &payload)?;
                    writeln!(sink)?;
                }
            }
        }
        Command::Verify { .. } => unreachable!("handled above"),
    }
    Ok(ExitCode::SUCCESS)
}
