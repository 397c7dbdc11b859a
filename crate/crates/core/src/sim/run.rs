//! Fixed-step integration of a resolved scenario.

use nalgebra::{Vector2, Vector3};

use super::closed_loop::{loop_deriv, theta_from_truth, Controller, LoopSignals, LoopState, Setpoint};
use super::config::{ControlMode, InitKind, Scenario, ScenarioConfig};
use super::metrics::{compute_metrics, Metrics};
use super::ode::rk4_step;
use crate::control::{current_steady_state, pll_locked_state, CurrentCtrlState, PllState};
use crate::equilibrium::assignable_equilibrium;
use crate::error::Result;
use crate::estimator::{accept_info_step, InfoState, PeMonitor};
use crate::observer::ObserverState;
use crate::plant::{Measurement, PlantState, SystemParams};

/// One recorded instant. Ground-truth fields (`delta`, `truth`) are for metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub y: Measurement,
    pub delta: f64,
    pub u1: f64,
    pub u23: Vector2<f64>,
    pub e_detector: f64,
    pub x_hat: Vector2<f64>,
    pub theta: Vector3<f64>,
    pub norm_f: f64,
    pub vg_hat: f64,
    pub omega_hat_hz: f64,
    /// `NaN` until the excitation window has filled.
    pub pe_min_eig: f64,
    pub pll_xc: f64,
    pub current_xc: Vector2<f64>,
    pub setpoint: Setpoint,
    pub truth: SystemParams,
}

/// Extra per-sample quantities that need ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diagnostic {
    pub t: f64,
    /// `|x − W·θ₀| / |x|` with `θ₀` frozen at the start.
    pub gpebo_rel_err: f64,
    /// `|Y − Ω·θ₀|`
    pub lre_residual: f64,
    pub y_norm: f64,
    pub orthogonality_err: f64,
    pub frozen: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunOptions {
    pub diagnostics: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub name: String,
    pub samples: Vec<Sample>,
    pub diagnostics: Vec<Diagnostic>,
    pub metrics: Metrics,
    pub final_state: LoopState,
    pub divergence_time: Option<f64>,
    /// Largest `‖F‖` over every accepted step.
    pub max_norm_f: f64,
}

/// Initial closed-loop state as described by the scenario's `init` block.
pub fn initial_state(sc: &Scenario) -> LoopState {
    let cfg = &sc.config;
    let p = &sc.plant;
    let sp = sc.setpoints[0].setpoint;
    let ctrl = &sc.controller;
    let mut plant = match cfg.init.kind {
        InitKind::Equilibrium => assignable_equilibrium(sp.phi_ref, &sp.i_ref, p, p.omega)
            .map(|eq| eq.plant_state())
            .unwrap_or(PlantState { i_g: Vector2::zeros(), v: Vector2::zeros(), i: Vector2::zeros(), delta: sp.phi_ref }),
        InitKind::Zero => PlantState { i_g: Vector2::zeros(), v: Vector2::zeros(), i: Vector2::zeros(), delta: 0.0 },
    };
    if let Some(d) = cfg.init.delta0 {
        plant.delta = d;
    }
    let y0 = plant.measure();
    let observer = ObserverState::new(cfg.observer.z0, &y0);
    let pll = cfg.init.pll_xc0.map(|xc| PllState { xc }).unwrap_or_else(|| pll_locked_state(p.omega, &ctrl.pll));
    let current = cfg
        .init
        .current_xc0
        .map(|xc| CurrentCtrlState { xc: Vector2::new(xc[0], xc[1]) })
        .unwrap_or_else(|| current_steady_state(&sp.i_ref, &ctrl.current, &ctrl.current_params));
    let theta0 = Vector3::from(cfg.estimator.theta0());
    let mut s = LoopState { plant, observer, estimator: InfoState::new(theta0, &ctrl.estimator), pll, current };
    if cfg.init.warm_estimator {
        s.estimator = InfoState::new(theta_from_truth(&s, p), &ctrl.estimator);
    }
    s
}

fn sample(
    t: f64,
    s: &LoopState,
    sig: &LoopSignals,
    ctrl: &Controller,
    sp: &Setpoint,
    truth: &SystemParams,
    pe: &PeMonitor,
) -> Sample {
    let theta = s.estimator.theta();
    Sample {
        t,
        y: sig.y,
        delta: s.plant.delta,
        u1: sig.u1,
        u23: sig.u23,
        e_detector: sig.detector,
        x_hat: sig.x_hat,
        theta,
        norm_f: s.estimator.gain_norm(ctrl.estimator.norm),
        vg_hat: ctrl.observer.l_g * sig.x_hat.norm(),
        omega_hat_hz: theta.x / (2.0 * std::f64::consts::PI),
        pe_min_eig: pe.min_eig().unwrap_or(f64::NAN),
        pll_xc: s.pll.xc,
        current_xc: s.current.xc,
        setpoint: *sp,
        truth: *truth,
    }
}

fn diagnostic(t: f64, s: &LoopState, sig: &LoopSignals, truth: &SystemParams, theta0: &Vector3<f64>) -> Diagnostic {
    let x = truth.grid_voltage_dq(s.plant.delta) / truth.l_g;
    let r = &sig.regressor;
    Diagnostic {
        t,
        gpebo_rel_err: (x - sig.w * theta0).norm() / x.norm(),
        lre_residual: (r.y - r.omega * theta0).norm(),
        y_norm: r.y.norm(),
        orthogonality_err: s.observer.orthogonality_error(),
        frozen: s.estimator.frozen,
    }
}

fn out_of_range(s: &LoopState, sc: &Scenario) -> bool {
    let f = sc.config.metrics.divergence_factor;
    let (i_lim, v_lim) = (f * sc.rated_current, f * sc.rated_voltage);
    let p = &s.plant;
    !s.is_finite() || p.i_g.norm() > i_lim || p.i.norm() > i_lim || p.v.norm() > v_lim
}

pub fn integrate(cfg: &ScenarioConfig) -> Result<RunOutput> {
    integrate_with(cfg, RunOptions::default())
}

pub fn integrate_with(cfg: &ScenarioConfig, opts: RunOptions) -> Result<RunOutput> {
    let sc = cfg.resolve()?;
    Ok(integrate_scenario(&sc, initial_state(&sc), opts))
}

/// Integrates from an explicit initial state (used by sweeps and tests).
pub fn integrate_scenario(sc: &Scenario, init: LoopState, opts: RunOptions) -> RunOutput {
    let dt = sc.dt;
    let record_every = sc.config.integrator.record_every;
    let sampled = sc.config.integrator.mode == ControlMode::Sampled;
    let mut plant = sc.plant;
    let mut ctrl = sc.controller;
    let mut sp = sc.setpoints[0].setpoint;
    let (mut next_sp, mut next_ev) = (0usize, 0usize);
    let mut pe = PeMonitor::new(sc.config.metrics.pe_window);
    let theta0 = theta_from_truth(&init, &plant);

    let mut s = init;
    let mut held_u1 = -ctrl.pll.ki * s.pll.xc;
    let mut samples = Vec::with_capacity(sc.steps / record_every + 2);
    let mut diagnostics = Vec::new();
    let mut divergence_time = None;
    let mut max_norm_f = s.estimator.gain_norm(ctrl.estimator.norm);

    let mut k = 0usize;
    loop {
        let t = k as f64 * dt;
        while next_sp < sc.setpoints.len() && sc.setpoints[next_sp].step <= k {
            sp = sc.setpoints[next_sp].setpoint;
            next_sp += 1;
        }
        while next_ev < sc.events.len() && sc.events[next_ev].step <= k {
            sc.events[next_ev].apply(&mut plant, &mut ctrl.observer);
            next_ev += 1;
        }
        let sig = ctrl.signals_of(&s, &sp, held_u1);
        if !sig.degenerate {
            held_u1 = sig.u1;
        }
        pe.push(t, &sig.regressor.omega);
        let last = k == sc.steps;
        if k % record_every == 0 || last {
            samples.push(sample(t, &s, &sig, &ctrl, &sp, &plant, &pe));
            if opts.diagnostics {
                diagnostics.push(diagnostic(t, &s, &sig, &plant, &theta0));
            }
        }
        if last {
            break;
        }
        let hold = sampled.then_some(&sig);
        let mut next = rk4_step(t, &s, dt, |_, x| loop_deriv(x, &plant, &ctrl, &sp, held_u1, hold));
        next.estimator = accept_info_step(&s.estimator, &next.estimator, &ctrl.estimator);
        max_norm_f = max_norm_f.max(next.estimator.gain_norm(ctrl.estimator.norm));
        k += 1;
        if out_of_range(&next, sc) {
            divergence_time = Some(k as f64 * dt);
            break;
        }
        s = next;
    }

    let metrics = compute_metrics(&samples, sc, divergence_time, max_norm_f);
    RunOutput {
        name: sc.config.name.clone(),
        samples,
        diagnostics,
        metrics,
        final_state: s,
        divergence_time,
        max_norm_f,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::config::{base_config, preset, ReferenceStep};

    fn short(name: &str, t_end: f64) -> ScenarioConfig {
        let mut cfg = preset(name).unwrap();
        cfg.set_horizon(t_end);
        cfg
    }

    #[test]
    fn rows_increase_and_cover_horizon() {
        let mut cfg = short("nominal", 0.05);
        cfg.integrator.record_every = 7;
        let out = integrate(&cfg).unwrap();
        assert!(out.samples.windows(2).all(|w| w[1].t > w[0].t));
        assert!((out.samples.last().unwrap().t - 0.05).abs() < 1e-12);
        assert!(out.divergence_time.is_none());
    }

    #[test]
    fn gain_cap_respected() {
        let out = integrate(&short("nominal", 0.1)).unwrap();
        assert!(out.max_norm_f <= 100.0 * (1.0 + 1e-12));
    }

    #[test]
    fn warm_start_recovers_truth_parameters() {
        let mut cfg = base_config("warm");
        cfg.integrator.t_end = 0.01;
        cfg.init.warm_estimator = true;
        let sc = cfg.resolve().unwrap();
        let s0 = initial_state(&sc);
        let th = s0.estimator.theta();
        assert!((th.x - sc.plant.omega).abs() < 1e-9);
        // detector is at its reference at the equilibrium
        let sig = sc.controller.signals_of(&s0, &sc.setpoints[0].setpoint, 0.0);
        assert!(sig.detector.abs() < 1e-9, "{}", sig.detector);
    }

    #[test]
    fn sampled_mode_runs() {
        let mut cfg = short("nominal", 0.02);
        cfg.integrator.mode = ControlMode::Sampled;
        let out = integrate(&cfg).unwrap();
        assert!(out.divergence_time.is_none());
    }

    #[test]
    fn explicit_reference_form() {
        let mut cfg = base_config("explicit");
        cfg.integrator.t_end = 0.01;
        cfg.references = vec![ReferenceStep { t: 0.0, power: None, voltage: None, phi_ref: Some(0.3), i_ref: Some([1000.0, 0.0]) }];
        let out = integrate(&cfg).unwrap();
        assert_eq!(out.samples[0].setpoint.phi_ref, 0.3);
    }
}
