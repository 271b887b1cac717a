use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use qahsim::model::{chern_number, ModelError, QahParams};
use qahsim::runner::{self, Mode, RunConfig, RunError};

/// Noisy quench dynamics of the quantum anomalous Hall model.
#[derive(Debug, Parser)]
#[command(name = "qahsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON run configuration. `transitions` accepts it several times.
    #[arg(long, global = true)]
    config: Vec<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, env = "QAHSIM_OUT", default_value = "out")]
    out: PathBuf,

    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Override the configured master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the configured mode (sse, oracle or both).
    #[arg(long, global = true)]
    mode: Option<Mode>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Time-averaged texture, dBIS, windings and classification on a grid.
    Texture,
    /// Classify configurations (default: weak, type-I and type-II sets).
    Transitions,
    /// Step-count sweep and ensemble-size study against the exact evolution.
    Convergence,
    /// Stability of the dBIS along a noise direction.
    Sweetspot,
    /// Chern number of the lower band.
    Chern {
        #[arg(long, default_value_t = 1.0)]
        xi0: f64,
        #[arg(long, default_value_t = 0.2)]
        xi_so: f64,
        /// Zeeman term (default: post-quench value of the config, else 1.2).
        #[arg(long, allow_hyphen_values = true)]
        mz: Option<f64>,
        /// Lattice size per axis.
        #[arg(long, default_value_t = 64)]
        n: usize,
    },
}

const EXIT_PARTIAL: u8 = 3;

fn load_config(cli: &Cli) -> Result<RunConfig, RunError> {
    let mut cfg = match cli.config.as_slice() {
        [] => RunConfig::weak_noise_default(),
        [one] => RunConfig::from_file(one)?,
        _ => {
            return Err(RunError::Config(vec![
                "only `transitions` accepts more than one --config".into(),
            ]))
        }
    };
    apply_overrides(cli, &mut cfg)?;
    Ok(cfg)
}

fn apply_overrides(cli: &Cli, cfg: &mut RunConfig) -> Result<(), RunError> {
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(mode) = cli.mode {
        cfg.mode = mode;
    }
    cfg.validate()
}

fn run(cli: &Cli) -> Result<u8, RunError> {
    match &cli.command {
        Command::Texture => {
            let cfg = load_config(cli)?;
            let out = cfg.outputs.clone().unwrap_or_else(|| cli.out.clone());
            let run = runner::run_texture(&cfg)?;
            runner::write_texture_run(&run, &out)?;
            let s = &run.summary;
            println!("phase: {:?}", s.classification.phase);
            match &s.dbis {
                Some(d) => println!(
                    "dBIS: {} curve(s), closed: {}, windings: {:?}",
                    d.curves.len(),
                    d.is_closed(),
                    s.windings
                ),
                None => println!("dBIS: {}", s.dbis_error.as_deref().unwrap_or("none")),
            }
            if let Some((om, k)) = s.omega_min_lattice {
                println!("min omega on dBIS lattice: {om:.6} kHz at ({:.4}, {:.4})", k.kx, k.ky);
            }
            println!("wrote {}", out.display());
            if s.failed_cells > 0 {
                eprintln!("{} cell(s) failed and were masked", s.failed_cells);
                return Ok(EXIT_PARTIAL);
            }
            Ok(0)
        }
        Command::Transitions => {
            let cfgs = if cli.config.is_empty() {
                runner::canonical_transition_configs()
            } else {
                cli.config
                    .iter()
                    .map(|p| RunConfig::from_file(p))
                    .collect::<Result<Vec<_>, _>>()?
            };
            let cfgs = cfgs
                .into_iter()
                .map(|mut c| apply_overrides(cli, &mut c).map(|_| c))
                .collect::<Result<Vec<_>, _>>()?;
            let rows = runner::run_transition_suite(&cfgs)?;
            runner::write_transitions(&rows, &cli.out)?;
            for r in &rows {
                println!(
                    "{:<12} {:?}  N_E: {:?}",
                    r.name.as_deref().unwrap_or("-"),
                    r.phase,
                    r.n_e
                );
            }
            Ok(0)
        }
        Command::Convergence => {
            let cfg = load_config(cli)?;
            let report = runner::run_convergence(&cfg)?;
            runner::write_convergence(&report, &cli.out)?;
            for p in &report.sweep {
                println!(
                    "M = {:>5}  RSS = {:.4e}  fidelity = {:.5}",
                    p.n_steps, p.rss, p.mean_fidelity
                );
            }
            for e in &report.ensemble {
                println!("n = {:>6}  RMS = {:.4e}", e.n_configs, e.rms);
            }
            println!("ensemble slope: {:.3}", report.ensemble_slope);
            Ok(0)
        }
        Command::Sweetspot => {
            let cfg = load_config(cli)?;
            let report = runner::run_sweetspot(&cfg)?;
            runner::write_sweetspot(&report, &cli.out)?;
            println!("literal inequality at configured noise: {}", report.literal);
            for s in &report.scan {
                println!(
                    "magnitude {:>6}: dbis_stable = {}, ep_on_dbis = {}, phase = {:?}",
                    s.magnitude, s.dbis_stable, s.ep_on_dbis, s.phase
                );
            }
            Ok(0)
        }
        Command::Chern { xi0, xi_so, mz, n } => {
            let mz = match (mz, cli.config.first()) {
                (Some(m), _) => *m,
                (None, Some(_)) => load_config(cli)?.quench_mz,
                (None, None) => 1.2,
            };
            let p = QahParams::new(*xi0, *xi_so, mz).map_err(|e| RunError::Config(vec![e.to_string()]))?;
            match chern_number(&p, *n) {
                Ok(c) => {
                    println!("{c}");
                    Ok(0)
                }
                Err(e @ ModelError::GapClosed { .. }) => Err(RunError::Numerical(e.to_string())),
                Err(e) => Err(RunError::Config(vec![e.to_string()])),
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} workers: {e}");
            return ExitCode::from(1);
        }
    }
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
