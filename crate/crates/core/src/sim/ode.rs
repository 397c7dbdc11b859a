//! Classical fixed-step Runge-Kutta.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use crate::control::{CurrentCtrlState, PllState};
use crate::estimator::{EstimatorState, InfoState};
use crate::observer::ObserverState;
use crate::plant::{AbcPlantState, PlantState};
use crate::signals::ThreePhase;

/// A state that can be advanced along a derivative of the same shape.
pub trait OdeState: Sized {
    /// `self + h·d`
    fn add_scaled(&self, d: &Self, h: f64) -> Self;
}

/// One RK4 step of size `h` from `(t, x)`.
pub fn rk4_step<S, F>(t: f64, x: &S, h: f64, mut f: F) -> S
where
    S: OdeState,
    F: FnMut(f64, &S) -> S,
{
    let k1 = f(t, x);
    let k2 = f(t + 0.5 * h, &x.add_scaled(&k1, 0.5 * h));
    let k3 = f(t + 0.5 * h, &x.add_scaled(&k2, 0.5 * h));
    let k4 = f(t + h, &x.add_scaled(&k3, h));
    x.add_scaled(&k1, h / 6.0)
        .add_scaled(&k2, h / 3.0)
        .add_scaled(&k3, h / 3.0)
        .add_scaled(&k4, h / 6.0)
}

impl OdeState for f64 {
    fn add_scaled(&self, d: &Self, h: f64) -> Self {
        self + h * d
    }
}

macro_rules! nalgebra_state {
    ($($t:ty),*) => {$(
        impl OdeState for $t {
            fn add_scaled(&self, d: &Self, h: f64) -> Self {
                self + d * h
            }
        }
    )*};
}
nalgebra_state!(Vector2<f64>, Vector3<f64>, Matrix2<f64>, Matrix3<f64>, Matrix2x3<f64>);

impl OdeState for ThreePhase {
    fn add_scaled(&self, d: &Self, h: f64) -> Self {
        *self + d.scale(h)
    }
}

impl OdeState for PlantState {
    fn add_scaled(&self, d: &Self, h: f64) -> Self {
        PlantState {
            i_g: self.i_g.add_scaled(&d.i_g, h),
            v: self.v.add_scaled(&d.v, h),
            i: self.i.add_scaled(&d.i, h),
            delta: self.delta + h * d.delta,
        }
    }
}

impl OdeState for AbcPlantState {
    fn add_scaled(&self, d: &Self, h: f64) -> Self {
        AbcPlantState {
            i_g: self.i_g.add_scaled(&d.i_g, h),
            v: self.v.add_scaled(&d.v, h),
            i: self.i.add_scaled(&d.i, h),
        }
    }
}

impl OdeState for ObserverState {
    fn add_scaled(&self, d: &Self, h: f64) -> Self {
        ObserverState {
            z12: self.z12.add_scaled(&d.z12, h),
            z34: self.z34.add_scaled(&d.z34, h),
            psi: self.psi + h * d.psi,
            fy: self.fy.add_scaled(&d.fy, h),
            fq: self.fq.add_scaled(&d.fq, h),
            fw: self.fw.add_scaled(&d.fw, h),
        }
    }
}

impl OdeState for EstimatorState {
    fn add_scaled(&self, d: &Self, h: f64) -> Self {
        EstimatorState {
            theta: self.theta.add_scaled(&d.theta, h),
            f: self.f.add_scaled(&d.f, h),
            frozen: self.frozen,
        }
    }
}

impl OdeState for InfoState {
    fn add_scaled(&self, d: &Self, h: f64) -> Self {
        InfoState { g: self.g.add_scaled(&d.g, h), h: self.h.add_scaled(&d.h, h), frozen: self.frozen }
    }
}

impl OdeState for PllState {
    fn add_scaled(&self, d: &Self, h: f64) -> Self {
        PllState { xc: self.xc + h * d.xc }
    }
}

impl OdeState for CurrentCtrlState {
    fn add_scaled(&self, d: &Self, h: f64) -> Self {
        CurrentCtrlState { xc: self.xc.add_scaled(&d.xc, h) }
    }
}
