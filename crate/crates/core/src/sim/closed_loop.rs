//! The interconnection of plant, observer, estimator and both controllers as a
//! single ODE.
//!
//! Everything on the control side is computed from [`Measurement`] only; the
//! plant's `δ` and its grid parameters never reach [`Controller::signals`].

use nalgebra::{Matrix2x3, Vector2, Vector3};

use super::ode::OdeState;
use crate::control::{
    baseline_detector, current_controller, phase_detector_atan, phase_detector_srf, pll_update, CurrentCtrlState,
    CurrentGains, CurrentLoopParams, DetectorMode, PllGains, PllState,
};
use crate::estimator::{lsff_info_deriv, EstimatorGains, InfoState};
use crate::observer::{observer_deriv, regressor, w_matrix, xhat, ObserverParams, ObserverState, RegressorPair};
use crate::plant::{plant_deriv_dq, Measurement, PlantInput, PlantState, SystemParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopState {
    pub plant: PlantState,
    pub observer: ObserverState,
    pub estimator: InfoState,
    pub pll: PllState,
    pub current: CurrentCtrlState,
}

impl OdeState for LoopState {
    fn add_scaled(&self, d: &Self, h: f64) -> Self {
        LoopState {
            plant: self.plant.add_scaled(&d.plant, h),
            observer: self.observer.add_scaled(&d.observer, h),
            estimator: self.estimator.add_scaled(&d.estimator, h),
            pll: self.pll.add_scaled(&d.pll, h),
            current: self.current.add_scaled(&d.current, h),
        }
    }
}

impl LoopState {
    pub fn is_finite(&self) -> bool {
        let p = &self.plant;
        let o = &self.observer;
        let e = &self.estimator;
        p.i_g.iter().chain(p.v.iter()).chain(p.i.iter()).all(|v| v.is_finite())
            && p.delta.is_finite()
            && o.z12.iter().chain(o.z34.iter()).all(|v| v.is_finite())
            && o.psi.is_finite()
            && o.fy.iter().chain(o.fq.iter()).chain(o.fw.iter()).all(|v| v.is_finite())
            && e.g.iter().chain(e.h.iter()).all(|v| v.is_finite())
            && self.pll.xc.is_finite()
            && self.current.xc.iter().all(|v| v.is_finite())
    }
}

/// Targets handed to the controllers by the operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Setpoint {
    pub phi_ref: f64,
    pub i_ref: Vector2<f64>,
    /// Reference for the non-adaptive detector: the PCC-voltage angle of the
    /// target equilibrium.
    pub baseline_phi_ref: f64,
}

/// Everything the control side knows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Controller {
    pub observer: ObserverParams,
    pub estimator: EstimatorGains,
    pub pll: PllGains,
    pub current: CurrentGains,
    pub current_params: CurrentLoopParams,
    pub detector: DetectorMode,
    /// Floor on `|x̂|` (or `|v|`) below which the angle detector is undefined.
    pub x_min: f64,
}

/// Inputs and intermediate signals produced from one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopSignals {
    pub y: Measurement,
    pub w: Matrix2x3<f64>,
    pub regressor: RegressorPair,
    pub x_hat: Vector2<f64>,
    pub detector: f64,
    pub degenerate: bool,
    pub u1: f64,
    pub u23: Vector2<f64>,
    pub d_pll: PllState,
    pub d_current: CurrentCtrlState,
}

impl Controller {
    /// `held_u1` is used when the angle detector is undefined.
    pub fn signals(&self, obs: &ObserverState, theta: &Vector3<f64>, pll: &PllState, cur: &CurrentCtrlState, y: &Measurement, sp: &Setpoint, held_u1: f64) -> LoopSignals {
        let w = w_matrix(obs, y);
        let reg = regressor(obs, y, self.observer.lambda);
        let x_hat = xhat(&w, theta);
        let det = match self.detector {
            DetectorMode::Atan => phase_detector_atan(&x_hat, sp.phi_ref, self.x_min).ok(),
            DetectorMode::Srf => Some(phase_detector_srf(&x_hat, sp.phi_ref)),
            DetectorMode::BaselineAtan | DetectorMode::BaselineSrf => {
                baseline_detector(&y.v, sp.baseline_phi_ref, self.detector.is_atan(), self.x_min).ok()
            }
        };
        let (d_pll, u1, detector, degenerate) = match det {
            Some(e) => {
                let (d, u1) = pll_update(pll, e, &self.pll);
                (d, u1, e, false)
            }
            None => (PllState { xc: 0.0 }, held_u1, 0.0, true),
        };
        let (d_current, u23) = current_controller(cur, y, &sp.i_ref, u1, &self.current, &self.current_params);
        LoopSignals { y: *y, w, regressor: reg, x_hat, detector, degenerate, u1, u23, d_pll, d_current }
    }

    pub fn signals_of(&self, s: &LoopState, sp: &Setpoint, held_u1: f64) -> LoopSignals {
        self.signals(&s.observer, &s.estimator.theta(), &s.pll, &s.current, &s.plant.measure(), sp, held_u1)
    }
}

/// Derivative of the full loop. With `hold = Some(sig)` the plant inputs and
/// controller integrator rates are taken from `sig` (zero-order hold), otherwise
/// they are recomputed from `s`.
pub fn loop_deriv(
    s: &LoopState,
    plant: &SystemParams,
    ctrl: &Controller,
    sp: &Setpoint,
    held_u1: f64,
    hold: Option<&LoopSignals>,
) -> LoopState {
    let y = s.plant.measure();
    let live;
    let sig = match hold {
        Some(h) => h,
        None => {
            live = ctrl.signals_of(s, sp, held_u1);
            &live
        }
    };
    let input = PlantInput { u1: sig.u1, u_dq: sig.u23 };
    let reg = if hold.is_some() { regressor(&s.observer, &y, ctrl.observer.lambda) } else { sig.regressor };
    LoopState {
        plant: plant_deriv_dq(&s.plant, &input, plant),
        observer: observer_deriv(&s.observer, &y, sig.u1, &ctrl.observer),
        estimator: lsff_info_deriv(&s.estimator, &reg, &ctrl.estimator),
        pll: sig.d_pll,
        current: sig.d_current,
    }
}

/// Frozen `θ = (ω, e(0))` from truth at one instant, for diagnostics and warm starts.
pub fn theta_from_truth(s: &LoopState, plant: &SystemParams) -> Vector3<f64> {
    let x = plant.grid_voltage_dq(s.plant.delta) / plant.l_g;
    crate::observer::theta_true(&s.observer, &s.plant.measure(), plant.omega, &x)
}
