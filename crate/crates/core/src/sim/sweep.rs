//! Seeded randomized-initialization sweeps, fanned out over a thread pool.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ScenarioConfig;
use super::run::integrate;
use crate::error::{Error, Result};

/// Ranges for the randomized initial conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Dispersion {
    /// `θ̂₁(0)` drawn from `ω·[1 − f, 1 + f]`.
    pub theta1_frac: f64,
    /// `θ̂₂,₃(0)` drawn from `[−a, a]`.
    pub theta23_abs: f64,
    /// Each entry of `z(0)` drawn from `[−a, a]`.
    pub z_abs: f64,
    /// Initial `u₁` drawn from `ω·[1 − f, 1 + f]`, setting the PLL integrator.
    pub u1_frac: f64,
    /// Each entry of the current integrator drawn from `[−a, a]`.
    pub current_xc_abs: f64,
}

impl Default for Dispersion {
    fn default() -> Self {
        Self { theta1_frac: 0.5, theta23_abs: 1e6, z_abs: 5e3, u1_frac: 0.1, current_xc_abs: 1.0 }
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct SweepRun {
    pub index: usize,
    pub delta0: f64,
    pub theta0: [f64; 3],
    pub converged: bool,
    pub divergence_time_s: Option<f64>,
    pub final_delta_err_deg: Option<f64>,
    pub delta_settling_s: Option<f64>,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct SweepReport {
    pub scenario: String,
    pub seed: u64,
    pub n: usize,
    pub converged: usize,
    pub fraction: f64,
    /// Largest last-segment `δ` settling time among converged runs.
    pub worst_settling_s: Option<f64>,
    pub runs: Vec<SweepRun>,
}

/// Configuration of run `index`: the base scenario with randomized `δ(0)`,
/// `θ̂(0)`, `z(0)` and controller integrators. Depends only on `(seed, index)`.
pub fn randomized_config(base: &ScenarioConfig, d: &Dispersion, seed: u64, index: usize) -> ScenarioConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let omega = base.params.omega;
    let mut cfg = base.clone();
    cfg.name = format!("{}_{index:04}", base.name);
    cfg.init.delta0 = Some(rng.gen_range(-PI..PI));
    cfg.estimator.theta0 = Some([
        omega * rng.gen_range(1.0 - d.theta1_frac..=1.0 + d.theta1_frac),
        rng.gen_range(-d.theta23_abs..=d.theta23_abs),
        rng.gen_range(-d.theta23_abs..=d.theta23_abs),
    ]);
    cfg.observer.z0 = std::array::from_fn(|_| rng.gen_range(-d.z_abs..=d.z_abs));
    let u1 = omega * rng.gen_range(1.0 - d.u1_frac..=1.0 + d.u1_frac);
    cfg.init.pll_xc0 = Some(-u1 / base.pll.ki);
    cfg.init.current_xc0 = Some(std::array::from_fn(|_| rng.gen_range(-d.current_xc_abs..=d.current_xc_abs)));
    cfg
}

pub fn sweep_random_init(base: &ScenarioConfig, n: usize, d: &Dispersion) -> Result<SweepReport> {
    if n == 0 {
        return Err(Error::Config("sweep needs n >= 1".into()));
    }
    base.resolve()?;
    let runs: Vec<SweepRun> = (0..n)
        .into_par_iter()
        .map(|i| {
            let cfg = randomized_config(base, d, base.seed, i);
            let delta0 = cfg.init.delta0.unwrap_or(0.0);
            let theta0 = cfg.estimator.theta0();
            match integrate(&cfg) {
                Ok(out) => {
                    let last = out.metrics.segments.last();
                    SweepRun {
                        index: i,
                        delta0,
                        theta0,
                        converged: out.metrics.converged,
                        divergence_time_s: out.divergence_time,
                        final_delta_err_deg: last.map(|s| s.delta_final_err_deg),
                        delta_settling_s: last.and_then(|s| s.delta_settling_s),
                    }
                }
                Err(_) => SweepRun {
                    index: i,
                    delta0,
                    theta0,
                    converged: false,
                    divergence_time_s: None,
                    final_delta_err_deg: None,
                    delta_settling_s: None,
                },
            }
        })
        .collect();
    let converged = runs.iter().filter(|r| r.converged).count();
    let worst = runs
        .iter()
        .filter(|r| r.converged)
        .filter_map(|r| r.delta_settling_s)
        .reduce(f64::max);
    Ok(SweepReport {
        scenario: base.name.clone(),
        seed: base.seed,
        n,
        converged,
        fraction: converged as f64 / n as f64,
        worst_settling_s: worst,
        runs,
    })
}
