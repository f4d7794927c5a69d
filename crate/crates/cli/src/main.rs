//! `esc`: scenario-driven front end for the extremum seeking simulator.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use esc_core::config::{load_config, preset_names, preset_text};
use esc_core::metrics::{calibrated_bound, mad, median};
use esc_core::report::{
    self, parse_seeds, parse_sweep, run_averaged, run_batch, run_scenario, write_averaged,
};

#[derive(Parser)]
#[command(
    name = "esc",
    version,
    about = "Stochastic extremum seeking with delay compensation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write trajectory.csv, summary.txt and plots.
    Simulate {
        /// Scenario file or preset name.
        config: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, env = "ESC_OUT_DIR", default_value = "out")]
        out: PathBuf,
    },
    /// Run a scenario over several seeds and aggregate success rates.
    Batch {
        config: String,
        /// Comma-separated, distinct seeds.
        #[arg(long)]
        seeds: String,
        #[arg(long, env = "ESC_OUT_DIR", default_value = "out")]
        out: PathBuf,
        /// Success criterion: final-window mean |y - y*| at most this value.
        #[arg(long, default_value_t = 0.25)]
        y_bound: f64,
    },
    /// Simulate the averaged system and report the Lyapunov certificate.
    Averaged {
        config: String,
        /// Override the filter gain c.
        #[arg(long, conflicts_with = "sweep_c")]
        c: Option<f64>,
        /// Sweep c over lo:hi:step.
        #[arg(long)]
        sweep_c: Option<String>,
        #[arg(long, env = "ESC_OUT_DIR", default_value = "out")]
        out: PathBuf,
    },
    /// Median + 3 MAD thresholds of the tail residuals over a seed range.
    Calibrate {
        config: String,
        /// Number of seeds, starting at 0.
        #[arg(long, default_value_t = 50)]
        seeds: u64,
    },
    /// Bundled scenarios.
    Presets {
        #[command(subcommand)]
        action: PresetAction,
    },
}

#[derive(Subcommand)]
enum PresetAction {
    List,
    Show { name: String },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn execute(command: Command) -> Result<(), Box<dyn std::error::Error>> {
    match command {
        Command::Simulate { config, seed, out } => {
            let mut cfg = load_config(&config)?;
            if let Some(seed) = seed {
                cfg.dither.seed = seed;
            }
            let outcome = run_scenario(&cfg, &out)?;
            print!("{}", outcome.summary.render());
            println!("output = {}", out.display());
        }
        Command::Batch {
            config,
            seeds,
            out,
            y_bound,
        } => {
            let cfg = load_config(&config)?;
            let seeds = parse_seeds(&seeds)?;
            let outcome = run_batch(&cfg, &seeds, &out, y_bound)?;
            for (seed, run) in &outcome.runs {
                let y = run.report.as_ref().map_or(f64::NAN, |r| r.y_residual);
                println!(
                    "seed {seed}: status = {}, y_residual = {y}",
                    run.trajectory.status
                );
            }
            print!("{}", outcome.summary.render());
        }
        Command::Averaged {
            config,
            c,
            sweep_c,
            out,
        } => {
            let cfg = load_config(&config)?;
            match sweep_c {
                Some(spec) => {
                    let grid = parse_sweep(&spec)?;
                    println!("c,c_star,v_decay_rate,psi_decay_rate,max_v_increase");
                    let mut rows = Vec::new();
                    for c in grid {
                        let o = run_averaged(&cfg, Some(c))?;
                        let row = format!(
                            "{},{},{},{},{}",
                            c,
                            o.run.c_star,
                            o.run.v_decay_rate,
                            o.run.psi_decay_rate,
                            o.run.max_v_increase()
                        );
                        println!("{row}");
                        rows.push(row);
                    }
                    std::fs::create_dir_all(&out)?;
                    let text = format!(
                        "c,c_star,v_decay_rate,psi_decay_rate,max_v_increase\n{}\n",
                        rows.join("\n")
                    );
                    std::fs::write(out.join("sweep.csv"), text)?;
                }
                None => {
                    let o = run_averaged(&cfg, c)?;
                    write_averaged(&o, &out)?;
                    print!("{}", o.summary.render());
                }
            }
        }
        Command::Calibrate { config, seeds } => {
            let cfg = load_config(&config)?;
            let list: Vec<u64> = (0..seeds).collect();
            report::validate_seeds(&list)?;
            let tmp = std::env::temp_dir().join(format!("esc-calibrate-{}", std::process::id()));
            let outcome = run_batch(&cfg, &list, &tmp, f64::INFINITY)?;
            let _ = std::fs::remove_dir_all(&tmp);
            let reports: Vec<_> = outcome
                .runs
                .iter()
                .filter_map(|(_, o)| o.report.clone())
                .collect();
            let y: Vec<f64> = reports.iter().map(|r| r.y_residual).collect();
            let th: Vec<f64> = reports.iter().map(|r| r.theta_residual).collect();
            println!(
                "# median + 3 MAD over {} completed runs of {} seeds",
                y.len(),
                seeds
            );
            println!("diverged = {}", outcome.diverged.successes);
            println!("y_residual_median = {}", median(&y));
            println!("y_residual_mad = {}", mad(&y));
            println!("y_residual_bound = {}", calibrated_bound(&y));
            println!("theta_residual_median = {}", median(&th));
            println!("theta_residual_mad = {}", mad(&th));
            println!("theta_residual_bound = {}", calibrated_bound(&th));
        }
        Command::Presets { action } => match action {
            PresetAction::List => {
                for name in preset_names() {
                    println!("{name}");
                }
            }
            PresetAction::Show { name } => match preset_text(&name) {
                Some(text) => print!("{text}"),
                None => return Err(format!("unknown preset `{name}`").into()),
            },
        },
    }
    Ok(())
}
