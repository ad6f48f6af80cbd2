//! `sls-bench`: run the chain-network synthesis experiments from the
//! command line.
//!
//! Exit status is 0 on success, 2 when a synthesis came out infeasible and
//! the config marks that as expected, 1 on any other failure.

mod plot;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;

use sls_core::bench::{run_fig2_sweep, run_table1, two_step, ExperimentConfig, Table1Entry};
use sls_core::clsyn::{lqr_cost, synthesize_clmaps};
use sls_core::evalsim::simulate_controller;
use sls_core::implsyn::{compute_delta_c, ImplementationMatrices};
use sls_core::stability::{
    build_internal_dynamics, distributed_stability_check, small_gain_check,
};
use sls_core::textfmt::{format_clmaps, format_fir, format_implementation, parse_implementation};
use sls_core::Error;

/// Two-step controller synthesis experiments on a chain network
#[derive(Parser, Debug)]
#[command(name = "sls-bench", version, about)]
struct Cli {
    /// Experiment config (TOML). Defaults apply to anything left out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; overrides `output.dir`
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Overrides {
    /// Closed-loop FIR horizon T
    #[arg(long, global = true)]
    horizon: Option<usize>,

    /// Controller orders for the sweep, comma separated
    #[arg(long, global = true, value_delimiter = ',')]
    orders: Option<Vec<usize>>,

    /// Initial weight on the Δ regularizer
    #[arg(long, global = true)]
    lambda: Option<f64>,

    /// Uniform ℓ1 weight on the implementation matrices
    #[arg(long, global = true)]
    l1_weight: Option<f64>,

    /// Drop all sparsity constraints
    #[arg(long, global = true)]
    no_mask: bool,

    /// Locality radius in hops
    #[arg(long, global = true)]
    locality: Option<usize>,

    /// Communication speed in hops per step
    #[arg(long, global = true)]
    comm_speed: Option<f64>,

    /// Simulated processors for the distributed stability check
    #[arg(long, global = true)]
    processors: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Optimal closed-loop maps under the configured mask
    SynthCl,
    /// Two-step implementation of order --order
    SynthImpl {
        #[arg(long, default_value_t = 2)]
        order: usize,
    },
    /// Stability checks of an implementation file
    CheckStability {
        /// File with the Rc block followed by the Mc block
        #[arg(long)]
        implementation: PathBuf,
    },
    /// Impulse response of an implementation
    Simulate {
        #[arg(long)]
        implementation: PathBuf,
        /// Node receiving the unit impulse at t = 0 (1-based)
        #[arg(long, default_value_t = 1)]
        impulse: usize,
        #[arg(long, default_value_t = 50)]
        steps: usize,
    },
    /// Reproduce an experiment
    Bench {
        #[command(subcommand)]
        which: BenchCommand,
        /// Skip the SVG plot
        #[arg(long, global = true)]
        no_plot: bool,
    },
}

#[derive(Subcommand, Debug)]
enum BenchCommand {
    /// Controller-order sweep without sparsity constraints
    Fig2,
    /// Method comparison under locality and delay constraints
    Table1,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    let o = &cli.overrides;
    if let Some(h) = o.horizon {
        cfg.synthesis.horizon = h;
    }
    if let Some(v) = &o.orders {
        cfg.synthesis.orders = v.clone();
    }
    if let Some(l) = o.lambda {
        cfg.synthesis.lambda = l;
    }
    if let Some(l) = o.l1_weight {
        cfg.synthesis.l1_weight = l;
    }
    if o.no_mask {
        cfg.mask.enabled = false;
    }
    if let Some(l) = o.locality {
        cfg.mask.locality = Some(l);
    }
    if let Some(s) = o.comm_speed {
        cfg.mask.comm_speed = Some(s);
    }
    if let Some(p) = o.processors {
        cfg.stability.processors = p;
    }
    if let Some(d) = &cli.out {
        cfg.output.dir = d.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn read_implementation(path: &Path) -> Result<ImplementationMatrices> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(parse_implementation(&text)?)
}

fn synth_cl(cfg: &ExperimentConfig) -> Result<ExitCode> {
    let sys = cfg.system()?;
    let t = cfg.synthesis.horizon;
    let mask = cfg.mask(&cfg.topology()?, t)?;
    let w = cfg.weights()?;
    match synthesize_clmaps(&sys, t, &w, mask.as_ref()) {
        Ok(cl) => {
            write(&cfg.output.dir, "clmaps.txt", &format_clmaps(&cl))?;
            println!("lqr_cost = {:e}", lqr_cost(&cl, &w));
            Ok(ExitCode::SUCCESS)
        }
        Err(e @ Error::Infeasible { .. }) if cfg.output.expect_infeasible => {
            println!("infeasible (expected): {e}");
            Ok(ExitCode::from(2))
        }
        Err(e) => Err(e.into()),
    }
}

fn synth_impl(cfg: &ExperimentConfig, order: usize) -> Result<ExitCode> {
    let sys = cfg.system()?;
    let cl = synthesize_clmaps(&sys, cfg.synthesis.horizon, &cfg.weights()?, None)?;
    let mask = cfg.mask(&cfg.topology()?, order)?;
    let e = two_step(cfg, &sys, &cl, order, mask.as_ref())?;
    let dir = &cfg.output.dir;
    write(dir, "implementation.txt", &format_implementation(&e.implementation))?;
    write(dir, "delta_c.txt", &format_fir(compute_delta_c(&sys, &e.implementation)?.as_fir()))?;
    let mut kv = e.diagnostics.as_ref().map(|d| d.to_key_value()).unwrap_or_default();
    kv.push_str(&format!(
        "lambda_attempts = {}\nspectral_radius = {:e}\nstability_iterations = {}\nl1_norm = {:e}\ndx = {:e}\ndu = {:e}\nnormalized_cost = {:e}\n",
        e.lambda_attempts, e.spectral_radius, e.stability_iterations, e.l1_norm, e.dx, e.du, e.normalized_cost
    ));
    write(dir, "diagnostics.txt", &kv)?;
    print!("{kv}");
    Ok(ExitCode::SUCCESS)
}

fn check_stability(cfg: &ExperimentConfig, path: &Path) -> Result<ExitCode> {
    let sys = cfg.system()?;
    let imp = read_implementation(path)?;
    let dynamics = build_internal_dynamics(&sys, &imp)?;
    let st = &cfg.stability;
    let procs = st.processors.min(dynamics.dim());
    let report = distributed_stability_check(&dynamics, procs, st.transient_bound, st.max_iterations)?;
    write(&cfg.output.dir, "stability_trace.csv", &report.trace_csv())?;
    let delta = compute_delta_c(&sys, &imp)?.delta();
    println!("verdict = {}", report.outcome.verdict.as_str());
    println!("iterations = {}", report.outcome.iterations);
    println!("final_norm = {:e}", report.outcome.final_norm);
    println!("spectral_radius = {:e}", dynamics.spectral_radius()?);
    println!("small_gain = {}", small_gain_check(&delta));
    println!("processors = {procs}");
    Ok(ExitCode::SUCCESS)
}

fn simulate(cfg: &ExperimentConfig, path: &Path, impulse: usize, steps: usize) -> Result<ExitCode> {
    let sys = cfg.system()?;
    let imp = read_implementation(path)?;
    if impulse == 0 || impulse > sys.n() {
        bail!("impulse node {impulse} outside 1..={}", sys.n());
    }
    let mut w = vec![DVector::zeros(sys.n()); steps];
    if let Some(w0) = w.first_mut() {
        w0[impulse - 1] = 1.0;
    }
    let traj = simulate_controller(&sys, &imp, &w)?;
    write(&cfg.output.dir, "trajectory.csv", &traj.to_csv())?;
    Ok(ExitCode::SUCCESS)
}

fn bench(cfg: &ExperimentConfig, which: &BenchCommand, no_plot: bool) -> Result<ExitCode> {
    let dir = &cfg.output.dir;
    match which {
        BenchCommand::Fig2 => {
            let r = run_fig2_sweep(cfg)?;
            let csv = r.to_csv();
            write(dir, "fig2.csv", &csv)?;
            if !no_plot {
                fs::create_dir_all(dir)?;
                let path = dir.join("fig2.svg");
                plot::fig2(&r, &path)?;
                println!("wrote {}", path.display());
            }
            print!("{csv}");
        }
        BenchCommand::Table1 => {
            let r = run_table1(cfg)?;
            let csv = r.to_csv();
            write(dir, "table1.csv", &csv)?;
            for row in &r.rows {
                if let Table1Entry::Infeasible(why) = &row.entry {
                    println!("{}: {why}", row.method);
                }
            }
            print!("{csv}");
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn run(cli: &Cli) -> Result<ExitCode> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::SynthCl => synth_cl(&cfg),
        Command::SynthImpl { order } => synth_impl(&cfg, *order),
        Command::CheckStability { implementation } => check_stability(&cfg, implementation),
        Command::Simulate {
            implementation,
            impulse,
            steps,
        } => simulate(&cfg, implementation, *impulse, *steps),
        Command::Bench { which, no_plot } => bench(&cfg, which, *no_plot),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
