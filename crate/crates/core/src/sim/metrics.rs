//! Step-response metrics over a recorded run.
//!
//! The run is cut into segments at every reference switch and parameter event;
//! each segment is scored against its own targets.

use serde::Serialize;
use serde_json::{Map, Value};

use super::config::Scenario;
use super::run::Sample;
use crate::signals::wrap_to_pi;

/// Time after `t0` from which `|x − target| ≤ band` holds until the end of the
/// series. `Some(0)` if it holds throughout, `None` if the last sample is
/// outside the band.
pub fn settling_time(t: &[f64], x: &[f64], target: f64, band: f64, t0: f64) -> Option<f64> {
    let last_out = x.iter().rposition(|v| !((v - target).abs() <= band));
    match last_out {
        None => Some(0.0),
        Some(i) if i + 1 == x.len() => None,
        Some(i) => Some(t[i + 1] - t0),
    }
}

/// Settling into `±band` around the last value of the series.
pub fn settling_time_to_final(t: &[f64], x: &[f64], band: f64) -> Option<f64> {
    let target = *x.last()?;
    settling_time(t, x, target, band, *t.first()?)
}

/// Largest excursion beyond `target` in the direction of the step from `x[0]`,
/// relative to the step size. Zero for a constant series.
pub fn overshoot(x: &[f64], target: f64) -> f64 {
    let Some(&x0) = x.first() else { return 0.0 };
    let step = target - x0;
    if step.abs() <= f64::EPSILON * target.abs().max(1.0) {
        return 0.0;
    }
    x.iter().map(|v| (v - target) * step.signum() / step.abs()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct SegmentMetrics {
    pub start_s: f64,
    pub end_s: f64,
    pub phi_ref_deg: f64,
    pub delta_settling_s: Option<f64>,
    pub delta_overshoot: f64,
    pub delta_final_err_deg: f64,
    pub current_settling_s: Option<f64>,
    pub current_final_err_a: f64,
    pub omega_hat_settling_s: Option<f64>,
    pub omega_hat_final_err_hz: f64,
    pub vg_hat_settling_s: Option<f64>,
    pub vg_hat_final_err_frac: f64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Metrics {
    pub converged: bool,
    pub all_segments_settled: bool,
    pub divergence_time_s: Option<f64>,
    pub rated_current_a: f64,
    pub max_norm_f: f64,
    pub pe_min_eig_min: Option<f64>,
    pub pe_min_eig_final: Option<f64>,
    pub worst_delta_settling_s: Option<f64>,
    pub worst_current_settling_s: Option<f64>,
    pub segments: Vec<SegmentMetrics>,
}

impl Metrics {
    /// Flat key/value view, `seg<i>_<field>` for per-segment values.
    pub fn to_flat_json(&self) -> Value {
        let mut map = Map::new();
        let Value::Object(top) = serde_json::to_value(self).unwrap_or(Value::Null) else {
            return Value::Null;
        };
        for (k, v) in top {
            if k == "segments" {
                continue;
            }
            map.insert(k, v);
        }
        map.insert("segment_count".into(), Value::from(self.segments.len()));
        for (i, seg) in self.segments.iter().enumerate() {
            if let Ok(Value::Object(m)) = serde_json::to_value(seg) {
                for (k, v) in m {
                    map.insert(format!("seg{i}_{k}"), v);
                }
            }
        }
        Value::Object(map)
    }
}

fn segment_bounds(sc: &Scenario, t_last: f64) -> Vec<(f64, f64)> {
    let mut cuts: Vec<f64> = sc
        .setpoints
        .iter()
        .map(|s| s.step as f64 * sc.dt)
        .chain(sc.events.iter().map(|e| e.step as f64 * sc.dt))
        .filter(|&t| t <= t_last)
        .collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|a, b| (*a - *b).abs() < 0.5 * sc.dt);
    let mut out = Vec::with_capacity(cuts.len());
    for (i, &start) in cuts.iter().enumerate() {
        let end = cuts.get(i + 1).copied().unwrap_or(t_last);
        out.push((start, end));
    }
    out
}

fn segment_metrics(samples: &[Sample], start: f64, end: f64, sc: &Scenario) -> SegmentMetrics {
    let m = &sc.config.metrics;
    let t: Vec<f64> = samples.iter().map(|s| s.t).collect();
    // everything in a segment shares the same setpoint and truth
    let first = samples[0];
    let sp = first.setpoint;
    let truth = first.truth;
    let delta_err: Vec<f64> = samples.iter().map(|s| wrap_to_pi(s.delta - sp.phi_ref).to_degrees()).collect();
    let delta_unwrapped: Vec<f64> = {
        let offset = samples[0].delta - delta_err[0].to_radians();
        samples.iter().map(|s| s.delta - offset).collect()
    };
    let cur_err: Vec<f64> = samples.iter().map(|s| (s.y.i - sp.i_ref).norm()).collect();
    let f_true = truth.omega / (2.0 * std::f64::consts::PI);
    let f_hat: Vec<f64> = samples.iter().map(|s| s.omega_hat_hz).collect();
    let vg_hat: Vec<f64> = samples.iter().map(|s| s.vg_hat).collect();
    let last = samples.len() - 1;
    SegmentMetrics {
        start_s: start,
        end_s: end,
        phi_ref_deg: sp.phi_ref.to_degrees(),
        delta_settling_s: settling_time(&t, &delta_err, 0.0, m.delta_band_deg, start),
        delta_overshoot: overshoot(&delta_unwrapped, sp.phi_ref),
        delta_final_err_deg: delta_err[last],
        current_settling_s: settling_time(&t, &cur_err, 0.0, m.current_band_frac * sc.rated_current, start),
        current_final_err_a: cur_err[last],
        omega_hat_settling_s: settling_time(&t, &f_hat, f_true, m.freq_band_hz, start),
        omega_hat_final_err_hz: f_hat[last] - f_true,
        vg_hat_settling_s: settling_time(&t, &vg_hat, truth.v_g, m.amplitude_band_frac * truth.v_g, start),
        vg_hat_final_err_frac: (vg_hat[last] - truth.v_g) / truth.v_g,
    }
}

fn worst(it: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    it.fold(Some(0.0), |acc, v| match (acc, v) {
        (Some(a), Some(b)) => Some(a.max(b)),
        _ => None,
    })
}

pub fn compute_metrics(samples: &[Sample], sc: &Scenario, divergence_time: Option<f64>, max_norm_f: f64) -> Metrics {
    let t_last = samples.last().map(|s| s.t).unwrap_or(0.0);
    let mut segments = Vec::new();
    for (start, end) in segment_bounds(sc, t_last) {
        let tol = 0.5 * sc.dt;
        let is_last = (end - t_last).abs() < tol;
        let seg: Vec<Sample> = samples
            .iter()
            .filter(|s| s.t >= start - tol && (s.t < end - tol || (is_last && s.t <= end + tol)))
            .copied()
            .collect();
        if !seg.is_empty() {
            segments.push(segment_metrics(&seg, start, end, sc));
        }
    }
    let pe: Vec<f64> = samples.iter().map(|s| s.pe_min_eig).filter(|v| v.is_finite()).collect();
    let worst_delta = worst(segments.iter().map(|s| s.delta_settling_s));
    let worst_current = worst(segments.iter().map(|s| s.current_settling_s));
    let all_settled = worst_delta.is_some() && worst_current.is_some();
    let final_settled = segments
        .last()
        .map(|s| s.delta_settling_s.is_some() && s.current_settling_s.is_some())
        .unwrap_or(false);
    Metrics {
        converged: divergence_time.is_none() && final_settled,
        all_segments_settled: divergence_time.is_none() && all_settled,
        divergence_time_s: divergence_time,
        rated_current_a: sc.rated_current,
        max_norm_f,
        pe_min_eig_min: pe.iter().copied().reduce(f64::min),
        pe_min_eig_final: pe.last().copied(),
        worst_delta_settling_s: worst_delta,
        worst_current_settling_s: worst_current,
        segments,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::{characteristic_roots, second_order_free_response};

    #[test]
    fn constant_series() {
        let t: Vec<f64> = (0..10).map(|k| k as f64 * 0.1).collect();
        let x = vec![3.0; 10];
        assert_eq!(settling_time_to_final(&t, &x, 0.01), Some(0.0));
        assert_eq!(overshoot(&x, 3.0), 0.0);
    }

    #[test]
    fn never_settles() {
        let t = [0.0, 1.0, 2.0];
        assert_eq!(settling_time(&t, &[0.0, 0.0, 5.0], 0.0, 1.0, 0.0), None);
        assert_eq!(settling_time(&t, &[5.0, f64::NAN, 0.0], 0.0, 1.0, 0.0), Some(2.0));
    }

    #[test]
    fn overshoot_of_step() {
        assert!((overshoot(&[0.0, 1.2, 0.9, 1.0], 1.0) - 0.2).abs() < 1e-12);
        assert!((overshoot(&[0.0, -1.5, -1.0], -1.0) - 0.5).abs() < 1e-12);
        assert_eq!(overshoot(&[0.0, 0.5, 1.0], 1.0), 0.0);
    }

    #[test]
    fn second_order_settling_matches_closed_form() {
        // overdamped ÿ + 3ẏ + 2y = 0 from y(0) = 1: y = 2e^{-t} − e^{-2t}
        let (kp, ki) = (3.0, 2.0);
        let dt = 1e-3;
        let t: Vec<f64> = (0..=10_000).map(|k| k as f64 * dt).collect();
        let y: Vec<f64> = t.iter().map(|&s| second_order_free_response(1.0, 0.0, kp, ki, s)).collect();
        let band: f64 = 0.02;
        // root of 2e^{-t} − e^{-2t} = 0.02 with e^{-t} = (1 − sqrt(1 − 0.02))
        let ts = -(1.0 - (1.0 - band).sqrt()).ln();
        let got = settling_time(&t, &y, 0.0, band, 0.0).unwrap();
        assert!((got - ts).abs() <= dt, "{got} vs {ts}");
        let roots = characteristic_roots(kp, ki);
        assert!(roots.iter().all(|r| r.0 < 0.0));
    }
}
