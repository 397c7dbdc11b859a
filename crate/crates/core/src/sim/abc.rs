//! The same closed loop with the plant in phase coordinates and an explicit
//! frame angle `ϑ` (`ϑ̇ = u₁`). Used to cross-check the dq model.
//!
//! With the source at phase `ωt`, the dq model's `δ` corresponds to
//! `ϑ − ωt + π/2`.

use std::f64::consts::FRAC_PI_2;

use super::closed_loop::{Controller, LoopState};
use super::config::Scenario;
use super::ode::{rk4_step, OdeState};
use crate::control::{CurrentCtrlState, PllState};
use crate::estimator::{accept_info_step, lsff_info_deriv, InfoState};
use crate::observer::{observer_deriv, ObserverState};
use crate::plant::{plant_deriv_abc, AbcPlantState, Measurement, PlantState, SystemParams};
use crate::signals::{dq_transform, inverse_dq, DqVec, ThreePhase};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbcLoopState {
    pub plant: AbcPlantState,
    pub frame: f64,
    pub observer: ObserverState,
    pub estimator: InfoState,
    pub pll: PllState,
    pub current: CurrentCtrlState,
}

impl OdeState for AbcLoopState {
    fn add_scaled(&self, d: &Self, h: f64) -> Self {
        AbcLoopState {
            plant: self.plant.add_scaled(&d.plant, h),
            frame: self.frame + h * d.frame,
            observer: self.observer.add_scaled(&d.observer, h),
            estimator: self.estimator.add_scaled(&d.estimator, h),
            pll: self.pll.add_scaled(&d.pll, h),
            current: self.current.add_scaled(&d.current, h),
        }
    }
}

impl AbcLoopState {
    /// Phase-coordinate image of a dq loop state at time `t`.
    pub fn from_dq(s: &LoopState, omega: f64, t: f64) -> Self {
        let frame = s.plant.delta + omega * t - FRAC_PI_2;
        let up = |v: &nalgebra::Vector2<f64>| inverse_dq(&DqVec::from(*v), frame);
        AbcLoopState {
            plant: AbcPlantState { i_g: up(&s.plant.i_g), v: up(&s.plant.v), i: up(&s.plant.i) },
            frame,
            observer: s.observer,
            estimator: s.estimator,
            pll: s.pll,
            current: s.current,
        }
    }

    pub fn measure(&self) -> Measurement {
        let dq = |x: &ThreePhase| dq_transform(x, self.frame).into();
        Measurement { i_g: dq(&self.plant.i_g), v: dq(&self.plant.v), i: dq(&self.plant.i) }
    }

    /// Projection back to dq coordinates, `δ = ϑ − ωt + π/2`.
    pub fn to_dq(&self, omega: f64, t: f64) -> PlantState {
        let y = self.measure();
        PlantState { i_g: y.i_g, v: y.v, i: y.i, delta: self.frame - omega * t + FRAC_PI_2 }
    }
}

pub fn abc_loop_deriv(
    s: &AbcLoopState,
    t: f64,
    plant: &SystemParams,
    ctrl: &Controller,
    sp: &super::closed_loop::Setpoint,
    held_u1: f64,
) -> AbcLoopState {
    let y = s.measure();
    let sig = ctrl.signals(&s.observer, &s.estimator.theta(), &s.pll, &s.current, &y, sp, held_u1);
    let m_dq = sig.u23 / plant.v_dc;
    let m = inverse_dq(&DqVec::from(m_dq), s.frame);
    AbcLoopState {
        plant: plant_deriv_abc(&s.plant, t, &m, plant),
        frame: sig.u1,
        observer: observer_deriv(&s.observer, &y, sig.u1, &ctrl.observer),
        estimator: lsff_info_deriv(&s.estimator, &sig.regressor, &ctrl.estimator),
        pll: sig.d_pll,
        current: sig.d_current,
    }
}

/// Integrates the phase-coordinate loop for `steps` steps of the scenario's
/// `dt`, returning the dq projection of the plant after every step (index 0 is
/// the initial state). Reference switches and events are applied as in the dq run.
pub fn integrate_abc(sc: &Scenario, init: &LoopState, steps: usize) -> Vec<(f64, PlantState)> {
    let dt = sc.dt;
    let mut plant = sc.plant;
    let mut ctrl = sc.controller;
    let omega0 = plant.omega;
    let mut sp = sc.setpoints[0].setpoint;
    let (mut next_sp, mut next_ev) = (0usize, 0usize);
    let mut s = AbcLoopState::from_dq(init, omega0, 0.0);
    let mut held_u1 = -ctrl.pll.ki * s.pll.xc;
    let mut out = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = k as f64 * dt;
        out.push((t, s.to_dq(omega0, t)));
        if k == steps {
            break;
        }
        while next_sp < sc.setpoints.len() && sc.setpoints[next_sp].step <= k {
            sp = sc.setpoints[next_sp].setpoint;
            next_sp += 1;
        }
        while next_ev < sc.events.len() && sc.events[next_ev].step <= k {
            sc.events[next_ev].apply(&mut plant, &mut ctrl.observer);
            next_ev += 1;
        }
        let sig = ctrl.signals(&s.observer, &s.estimator.theta(), &s.pll, &s.current, &s.measure(), &sp, held_u1);
        if !sig.degenerate {
            held_u1 = sig.u1;
        }
        let mut next = rk4_step(t, &s, dt, |tt, x| abc_loop_deriv(x, tt, &plant, &ctrl, &sp, held_u1));
        next.estimator = accept_info_step(&s.estimator, &next.estimator, &ctrl.estimator);
        s = next;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::config::base_config;
    use crate::sim::run::initial_state;

    #[test]
    fn round_trip_through_phase_coordinates() {
        let sc = base_config("x").resolve().unwrap();
        let s = initial_state(&sc);
        let t = 0.0123;
        let abc = AbcLoopState::from_dq(&s, sc.plant.omega, t);
        let back = abc.to_dq(sc.plant.omega, t);
        assert!((back.i_g - s.plant.i_g).norm() < 1e-9 * s.plant.i_g.norm());
        assert!((back.v - s.plant.v).norm() < 1e-9 * s.plant.v.norm());
        assert!((back.delta - s.plant.delta).abs() < 1e-12);
    }
}
