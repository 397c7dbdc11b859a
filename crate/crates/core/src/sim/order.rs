//! Richardson estimate of the integrator's convergence order on a scenario.

use serde::Serialize;

use super::config::ScenarioConfig;
use super::run::{integrate, RunOutput};
use crate::error::Result;

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct OrderReport {
    pub dt: [f64; 3],
    /// Scaled final-state differences between successive halvings.
    pub diff: [f64; 2],
    pub ratio: f64,
    pub order: f64,
}

/// Final plant state scaled by rated quantities.
fn scaled_final(out: &RunOutput, i_rated: f64, v_rated: f64) -> [f64; 7] {
    let s = out.final_state.plant;
    [
        s.i_g.x / i_rated,
        s.i_g.y / i_rated,
        s.v.x / v_rated,
        s.v.y / v_rated,
        s.i.x / i_rated,
        s.i.y / i_rated,
        s.delta,
    ]
}

fn distance(a: &[f64; 7], b: &[f64; 7]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Runs at `dt`, `dt/2`, `dt/4` and returns `log₂` of the ratio of successive
/// final-state differences.
pub fn observed_order(cfg: &ScenarioConfig) -> Result<OrderReport> {
    let base = cfg.resolve()?;
    let dt0 = cfg.integrator.dt;
    let mut finals = Vec::with_capacity(3);
    let mut dts = [0.0; 3];
    for (k, slot) in dts.iter_mut().enumerate() {
        let mut c = cfg.clone();
        c.integrator.dt = dt0 / f64::from(1u32 << k);
        c.integrator.record_every = usize::MAX / 2;
        *slot = c.integrator.dt;
        let out = integrate(&c)?;
        finals.push(scaled_final(&out, base.rated_current, base.rated_voltage));
    }
    let d1 = distance(&finals[0], &finals[1]);
    let d2 = distance(&finals[1], &finals[2]);
    let ratio = d1 / d2;
    Ok(OrderReport { dt: dts, diff: [d1, d2], ratio, order: ratio.log2() })
}
