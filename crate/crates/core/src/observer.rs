//! Grid-voltage observer built from a dynamic extension of the measured grid
//! current dynamics.
//!
//! With `x := v_g,dq / L_g` the grid current obeys `ẏ₁₂ = q − x`, where `q` is
//! measurable. The extension `z ∈ R⁴` and the rotation `Φ` (`Φ̇ = u₁JΦ`) make
//! `e := ω(z₁₂ + z₃₄ − Jy₁₂) + x` satisfy `e(t) = Φ(t)e(0)`, hence
//! `x = W·θ` with `W = [−(z₁₂ + z₃₄ − Jy₁₂) | Φ]` and `θ = (ω, e(0))`.
//! Filtering `ẏ₁₂ = q − Wθ` through `λ/(p+λ)` gives the regression
//! `Y = Ωθ + ε_t` consumed by the estimator.
//!
//! `Φ` is a rotation for every input, so it is carried as its angle `ψ`
//! (`ψ̇ = u₁`, `Φ = e^{Jψ}`). This is the same flow but stays exactly
//! orthogonal under a fixed-step integrator, even when `u₁` jumps.

use nalgebra::{Matrix2, Matrix2x3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::plant::Measurement;
use crate::signals::{j_mul, rotation};

/// Grid parameters as known to the observer, plus the filter pole.
///
/// These are deliberately separate from the plant's [`SystemParams`](crate::plant::SystemParams)
/// so that the observer can run with stale values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObserverParams {
    pub r_g: f64,
    pub l_g: f64,
    /// Pole of `F(p) = λ/(p+λ)`, rad/s.
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObserverState {
    pub z12: Vector2<f64>,
    pub z34: Vector2<f64>,
    /// Angle of `Φ`.
    pub psi: f64,
    /// `F[y₁₂]`
    pub fy: Vector2<f64>,
    /// `F[q]`
    pub fq: Vector2<f64>,
    /// `F[W]`
    pub fw: Matrix2x3<f64>,
}

impl ObserverState {
    /// `Φ(0) = I`, the chosen `z(0)`, and filter states chosen so that the
    /// regression residual starts at zero: `F[y₁₂](0) = y₁₂(0)`, the others zero.
    pub fn new(z0: [f64; 4], y0: &Measurement) -> Self {
        Self {
            z12: Vector2::new(z0[0], z0[1]),
            z34: Vector2::new(z0[2], z0[3]),
            psi: 0.0,
            fy: y0.i_g,
            fq: Vector2::zeros(),
            fw: Matrix2x3::zeros(),
        }
    }

    /// All-zero derivative placeholder / zero state.
    pub fn zeros() -> Self {
        Self {
            z12: Vector2::zeros(),
            z34: Vector2::zeros(),
            psi: 0.0,
            fy: Vector2::zeros(),
            fq: Vector2::zeros(),
            fw: Matrix2x3::zeros(),
        }
    }

    pub fn phi(&self) -> Matrix2<f64> {
        rotation(self.psi)
    }

    /// Largest entry of `ΦᵀΦ − I`, together with `|det Φ − 1|`.
    pub fn orthogonality_error(&self) -> f64 {
        let phi = self.phi();
        let gram = phi.transpose() * phi - Matrix2::identity();
        gram.abs().max().max((phi.determinant() - 1.0).abs())
    }
}

/// Linear-regression pair `Y ≈ Ωθ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressorPair {
    pub y: Vector2<f64>,
    pub omega: Matrix2x3<f64>,
}

/// `q = −(r_g/L_g)·y₁₂ + y₃₄/L_g + J·y₁₂·u₁`.
pub fn q_signal(y: &Measurement, u1: f64, r_g: f64, l_g: f64) -> Vector2<f64> {
    -(r_g / l_g) * y.i_g + y.v / l_g + u1 * j_mul(&y.i_g)
}

pub fn observer_deriv(o: &ObserverState, y: &Measurement, u1: f64, p: &ObserverParams) -> ObserverState {
    let q = q_signal(y, u1, p.r_g, p.l_g);
    let jy = j_mul(&y.i_g);
    let w = w_matrix(o, y);
    let l = p.lambda;
    ObserverState {
        // u₁Jz₁₂ − (r_g/L_g)Jy₁₂ + (1/L_g)Jy₃₄ − y₁₂u₁, i.e. u₁Jz₁₂ + Jq
        z12: u1 * j_mul(&o.z12) + j_mul(&q),
        z34: u1 * j_mul(&(o.z34 - jy)),
        psi: u1,
        fy: l * (y.i_g - o.fy),
        fq: l * (q - o.fq),
        fw: l * (w - o.fw),
    }
}

/// `W = [−(z₁₂ + z₃₄ − Jy₁₂) | Φ]`.
pub fn w_matrix(o: &ObserverState, y: &Measurement) -> Matrix2x3<f64> {
    let c = -(o.z12 + o.z34 - j_mul(&y.i_g));
    let phi = o.phi();
    Matrix2x3::new(c.x, phi[(0, 0)], phi[(0, 1)], c.y, phi[(1, 0)], phi[(1, 1)])
}

/// `Y = λ(y₁₂ − F[y₁₂]) − F[q]`, `Ω = −F[W]`.
///
/// `pF(p)[y] = λ(y − F(p)[y])`, so no signal is differentiated.
pub fn regressor(o: &ObserverState, y: &Measurement, lambda: f64) -> RegressorPair {
    RegressorPair { y: lambda * (y.i_g - o.fy) - o.fq, omega: -o.fw }
}

pub fn xhat(w: &Matrix2x3<f64>, theta: &Vector3<f64>) -> Vector2<f64> {
    w * theta
}

/// Readouts derived from `x̂`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoltageEstimate {
    pub x_hat: Vector2<f64>,
    /// `L_g·|x̂|`, volts
    pub amplitude: f64,
    /// `θ̂₁`, rad/s
    pub omega: f64,
}

pub fn voltage_estimate(w: &Matrix2x3<f64>, theta: &Vector3<f64>, l_g: f64) -> VoltageEstimate {
    let x_hat = xhat(w, theta);
    VoltageEstimate { x_hat, amplitude: l_g * x_hat.norm(), omega: theta.x }
}

/// Ground truth, for tests and metrics only: `e = ω(z₁₂ + z₃₄ − Jy₁₂) + x`.
pub fn extension_error(o: &ObserverState, y: &Measurement, omega: f64, x: &Vector2<f64>) -> Vector2<f64> {
    omega * (o.z12 + o.z34 - j_mul(&y.i_g)) + x
}

/// Ground truth parameter vector `θ = (ω, e(0))`, recovered at any instant as
/// `(ω, Φ(t)ᵀ e(t))`.
pub fn theta_true(o: &ObserverState, y: &Measurement, omega: f64, x: &Vector2<f64>) -> Vector3<f64> {
    let e0 = o.phi().transpose() * extension_error(o, y, omega, x);
    Vector3::new(omega, e0.x, e0.y)
}
