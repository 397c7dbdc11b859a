use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use gridsync::equilibrium::{solve_references, ReferenceRequest};
use gridsync::plant::SystemParams;
use gridsync::sim::config::{ScenarioConfig, PRESETS};
use gridsync::sim::output::write_run;
use gridsync::sim::sweep::{sweep_random_init, Dispersion};
use gridsync::sim::{integrate, order};
use gridsync::Error;

#[derive(Parser)]
#[command(name = "gridsync", version, about = "Adaptive grid synchronization simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario and write `<name>.csv` and `<name>.metrics.json`.
    Simulate {
        /// Preset name or TOML file.
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        t_end: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve the power-flow references and print the equilibrium as JSON.
    Equilibrium {
        /// Active power, W.
        #[arg(long, allow_negative_numbers = true)]
        power: f64,
        /// PCC voltage magnitude in dq, V. Defaults to √1.5·V_g.
        #[arg(long)]
        voltage: Option<f64>,
        /// TOML file with system parameters.
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Randomized-initialization sweep of a scenario.
    Sweep {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Observed RK4 order from runs at dt, dt/2 and dt/4.
    OrderCheck {
        #[arg(long)]
        scenario: String,
        /// Horizon of the check, s.
        #[arg(long, default_value_t = 0.05)]
        t_end: f64,
        /// Start the estimator on the true parameters, which keeps the
        /// trajectory away from the near-singular cold-start transient.
        #[arg(long)]
        warm: bool,
    },
    /// Print a preset as TOML.
    Preset { name: String },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Parse(_) | Error::Io(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn load(spec: &str, dt: Option<f64>, t_end: Option<f64>, seed: Option<u64>) -> gridsync::Result<ScenarioConfig> {
    let mut cfg = ScenarioConfig::load(spec)?;
    if let Some(dt) = dt {
        cfg.integrator.dt = dt;
    }
    if let Some(t) = t_end {
        cfg.set_horizon(t);
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.resolve()?;
    Ok(cfg)
}

fn run(cmd: Cmd) -> gridsync::Result<ExitCode> {
    match cmd {
        Cmd::Simulate { scenario, dt, t_end, seed, out } => {
            let cfg = load(&scenario, dt, t_end, seed)?;
            let result = integrate(&cfg)?;
            let (csv, metrics) = write_run(&out, &result)?;
            println!("{}", serde_json::to_string_pretty(&result.metrics.to_flat_json())?);
            eprintln!("wrote {} and {}", csv.display(), metrics.display());
            if cfg.require_convergence && !result.metrics.converged {
                eprintln!("scenario {} did not converge", cfg.name);
                return Ok(ExitCode::from(3));
            }
        }
        Cmd::Equilibrium { power, voltage, params } => {
            let p = match params {
                Some(path) => toml::from_str::<SystemParams>(&std::fs::read_to_string(path)?)
                    .map_err(|e| Error::Parse(e.to_string()))?,
                None => SystemParams::weak_grid(),
            };
            p.validate()?;
            let voltage = voltage.unwrap_or_else(|| ReferenceRequest::nominal_voltage(&p));
            let refs = solve_references(&ReferenceRequest { power, voltage }, &p, p.omega)?;
            let eq = &refs.equilibrium;
            let report = json!({
                "power_w": power,
                "voltage_v": voltage,
                "phi_ref_rad": refs.phi_ref,
                "phi_ref_deg": refs.phi_ref.to_degrees(),
                "i_ref": [refs.i_ref.x, refs.i_ref.y],
                "equilibrium": {
                    "delta": eq.delta,
                    "y": eq.y.to_array(),
                    "u1": eq.u1,
                    "u23": [eq.u23.x, eq.u23.y],
                },
            });
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Cmd::Sweep { scenario, n, seed, out } => {
            let cfg = load(&scenario, None, None, seed)?;
            let report = sweep_random_init(&cfg, n, &Dispersion::default())?;
            std::fs::create_dir_all(&out)?;
            let path = out.join(format!("{}.sweep.json", cfg.name));
            std::fs::write(&path, serde_json::to_string_pretty(&report)?)?;
            println!("{}/{} converged ({:.1}%), report in {}", report.converged, n, 100.0 * report.fraction, path.display());
            if cfg.require_convergence && report.converged < n {
                return Ok(ExitCode::from(3));
            }
        }
        Cmd::OrderCheck { scenario, t_end, warm } => {
            let mut cfg = load(&scenario, None, Some(t_end), None)?;
            cfg.init.warm_estimator |= warm;
            let r = order::observed_order(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&r)?);
        }
        Cmd::Preset { name } => {
            let Some(cfg) = gridsync::sim::preset(&name) else {
                return Err(Error::Config(format!("unknown preset {name:?}; available: {}", PRESETS.join(", "))));
            };
            print!("{}", cfg.to_toml()?);
        }
    }
    Ok(ExitCode::SUCCESS)
}
