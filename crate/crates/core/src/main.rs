use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use ceiling_mpc::harness::{run_scenario, sweep, ControllerKind, HarnessError, ScenarioConfig};

/// Closed-loop simulation of force-estimation-based NMPC near a ceiling.
#[derive(Debug, Parser)]
#[command(version, about)]
struct Cli {
    /// Scenario file (TOML); defaults apply to omitted keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// pid, nmpc or force_nmpc.
    #[arg(long)]
    controller: Option<ControllerKind>,
    /// Setpoint distance of the body below the ceiling [m].
    #[arg(long)]
    distance: Option<f64>,
    /// Noise seed for a single run; for a sweep, replaces the seed list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for traces and tables.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run the controller × distance × seed sweep.
    #[arg(long)]
    sweep: bool,
    /// Print the effective configuration as TOML and exit.
    #[arg(long)]
    dump_config: bool,
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let mut cfg = match &cli.config {
        Some(path) => ScenarioConfig::from_file(path)?,
        None => ScenarioConfig::default(),
    };
    if let Some(c) = cli.controller {
        cfg.controller = c;
        cfg.sweep.controllers = vec![c];
    }
    if let Some(d) = cli.distance {
        cfg.distance = d;
        cfg.sweep.distances = vec![d];
    }
    if let Some(s) = cli.seed {
        cfg.seeds = vec![s];
    }
    cfg.validate()?;
    if cli.dump_config {
        print!("{}", cfg.to_toml_string());
        return Ok(());
    }

    if cli.sweep {
        let result = sweep(&cfg, cli.out.as_deref())?;
        println!("controller  dz/R  error_mean[m]  error_std[m]  stuck  rel_power  rel_current  ms(est+ctl)");
        for c in &result.cells {
            println!(
                "{:<10} {:5.2}  {:13.4}  {:12.4}  {:5.2}  {:>9}  {:>11}  {:.2}+{:.2}",
                c.controller.name(),
                c.dz_over_r,
                c.error_mean_m,
                c.error_std_m,
                c.stuck_fraction,
                c.relative_power.map_or("-".into(), |v| format!("{:.4}", v)),
                c.relative_current.map_or("-".into(), |v| format!("{:.4}", v)),
                c.estimator_mean_ms,
                c.controller_mean_ms,
            );
        }
        let failed: usize = result.cells.iter().map(|c| c.failed).sum();
        if failed > 0 {
            eprintln!("{failed} run(s) failed; see runs.csv");
        }
        return Ok(());
    }

    let seed = cfg.seeds[0];
    let free = run_scenario(
        &ScenarioConfig {
            free_flight: true,
            ..cfg.clone()
        },
        seed,
    )?;
    let mut out = run_scenario(&cfg, seed)?;
    out.summary
        .set_free_hover(free.summary.hold.p_ave, free.summary.hold.i_ave);
    if let Some(dir) = &cli.out {
        out.write(dir)?;
    }
    println!("{}", serde_json::to_string_pretty(&out.summary)?);
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
