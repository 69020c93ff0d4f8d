use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use natsim_cli::io::read_spectrum_csv;
use natsim_cli::{compare_engines, init_workers, noise_gen, run_scenario, CliError, CliResult, Scenario};
use natsim_core::fit::{lorentzian_doublet_fit, mollow_fit, FitResult, MollowMode};

#[derive(Parser)]
#[command(name = "natsim", version, about = "Noise-assisted transport simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario (TOML) or reproduce a run from its manifest.json.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cross-check the Lindblad, rate-equation and stochastic engines.
    Compare { config: PathBuf },
    /// Synthesize a noise trace; `.bin` output is binary, anything else CSV.
    NoiseGen { spec: PathBuf, out: PathBuf },
    /// Fit a spectrum CSV (freq_GHz, psd).
    Fit {
        spectrum: PathBuf,
        #[arg(value_enum)]
        model: FitModel,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FitModel {
    Lorentzian,
    Doublet,
    Mollow,
    Mollow3,
}

fn print_fit(f: &FitResult) {
    println!("model {}  residual {:.4e}  converged {}", f.model, f.residual_norm, f.converged);
    for p in &f.params {
        println!("  {:<18} {:>16.9e} ± {:.3e}", p.name, p.value, p.std_err);
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    init_workers()?;
    match cli.cmd {
        Cmd::Run { config, out } => {
            let (run, dir) = run_scenario(&config, out.as_deref())?;
            println!("{} points in {:.2} s -> {}", run.points.len(), run.wall_time_s, dir.display());
            for p in &run.points {
                match &p.decay {
                    Some(d) => println!("{:>4} {:>12.5} gamma {:.4} rms {:.4}", p.index, p.value, d.gamma, d.rms_deviation()),
                    None => println!(
                        "{:>4} {:>12.5} P2 {:.5e} P4 {:.5e} eta {:.5}",
                        p.index, p.value, p.summary.p2, p.summary.p4, p.summary.eta
                    ),
                }
            }
        }
        Cmd::Compare { config } => {
            let s = Scenario::load(&config)?;
            let r = compare_engines(&s)?;
            println!("{:>12} {:>10} {:>10} {:>12} {:>12}", "value", "eta_L", "eta_R", "P4_L", "P4_R");
            for row in &r.rows {
                println!(
                    "{:>12.4} {:>10.5} {:>10.5} {:>12.5e} {:>12.5e}",
                    row.value, row.lindblad.eta, row.rate_eq.eta, row.lindblad.p4, row.rate_eq.p4
                );
            }
            for c in &r.checks {
                println!("{} {}: {}", if c.passed { "ok  " } else { "FLAG" }, c.name, c.detail);
            }
        }
        Cmd::NoiseGen { spec, out } => {
            let s = noise_gen(&spec, &out)?;
            println!("{} samples, variance {:.6e} MHz² -> {}", s.len(), s.variance(), out.display());
        }
        Cmd::Fit { spectrum, model } => {
            let spec = read_spectrum_csv(&spectrum)?;
            let fit = match model {
                FitModel::Lorentzian => lorentzian_doublet_fit(&spec, 1),
                FitModel::Doublet => lorentzian_doublet_fit(&spec, 2),
                FitModel::Mollow => mollow_fit(&spec, MollowMode::FullMollow),
                FitModel::Mollow3 => mollow_fit(&spec, MollowMode::ThreeLorentzians),
            }
            .map_err(CliError::from)?;
            print_fit(&fit);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
