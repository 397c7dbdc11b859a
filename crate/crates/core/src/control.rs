//! Phase detectors, the PI phase-locked loop, and the decoupled PI current loop.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::Measurement;
use crate::signals::{j_mul, wrap_to_pi};

/// Which signal feeds the PLL and how its angle is extracted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorMode {
    /// `atan2` of the observer's grid-voltage estimate.
    #[default]
    Atan,
    /// Projection of the estimate onto the reference direction.
    Srf,
    /// `atan2` of the measured PCC voltage (conventional, non-adaptive PLL).
    BaselineAtan,
    /// Projection of the measured PCC voltage.
    BaselineSrf,
}

impl DetectorMode {
    pub fn is_baseline(self) -> bool {
        matches!(self, DetectorMode::BaselineAtan | DetectorMode::BaselineSrf)
    }

    pub fn is_atan(self) -> bool {
        matches!(self, DetectorMode::Atan | DetectorMode::BaselineAtan)
    }
}

/// `wrap(atan2(x̂₂, x̂₁) − φ_ref)`. Undefined near the origin.
pub fn phase_detector_atan(x_hat: &Vector2<f64>, phi_ref: f64, x_min: f64) -> Result<f64> {
    let norm = x_hat.norm();
    if !(norm >= x_min) {
        return Err(Error::DegenerateEstimate { norm, floor: x_min });
    }
    Ok(wrap_to_pi(x_hat.y.atan2(x_hat.x) - phi_ref))
}

/// `cos(φ_ref)·x̂₂ − sin(φ_ref)·x̂₁ = |x̂|·sin(∠x̂ − φ_ref)`.
pub fn phase_detector_srf(x_hat: &Vector2<f64>, phi_ref: f64) -> f64 {
    let (s, c) = phi_ref.sin_cos();
    c * x_hat.y - s * x_hat.x
}

/// The same detectors applied to the measured PCC voltage.
pub fn baseline_detector(v_dq: &Vector2<f64>, phi_ref: f64, atan: bool, x_min: f64) -> Result<f64> {
    if atan {
        phase_detector_atan(v_dq, phi_ref, x_min)
    } else {
        Ok(phase_detector_srf(v_dq, phi_ref))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PllGains {
    pub kp: f64,
    pub ki: f64,
}

impl PllGains {
    pub fn validate(&self) -> Result<()> {
        if self.kp > 0.0 && self.ki > 0.0 && self.kp.is_finite() && self.ki.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!("PLL gains must be positive, got kp = {}, ki = {}", self.kp, self.ki)))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PllState {
    pub xc: f64,
}

/// Returns `(ẋ_c, u₁)` with `ẋ_c = e` and `u₁ = −K_Pδ·e − K_Iδ·x_c`.
pub fn pll_update(s: &PllState, e: f64, g: &PllGains) -> (PllState, f64) {
    (PllState { xc: e }, -g.kp * e - g.ki * s.xc)
}

/// Integrator value that makes `u₁ = ω` with zero detector output.
pub fn pll_locked_state(omega: f64, g: &PllGains) -> PllState {
    PllState { xc: -omega / g.ki }
}

/// How the PI output enters the converter voltage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurrentLoopForm {
    /// `u = L(−K_P ỹ − K_I x_c) + r·y₅₆ + y₃₄ − LJy₅₆u₁`: the current error obeys
    /// `(p² + K_P p + K_I)[ỹ] = 0` exactly, with gains in 1/s and 1/s².
    #[default]
    Normalized,
    /// `u = −K_P ỹ − K_I x_c + y₃₄ − LJy₅₆u₁`: the error obeys
    /// `L p² + (r + K_P) p + K_I` with a constant `r·y₅₆^ref` forcing.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurrentGains {
    pub kp: Matrix2<f64>,
    pub ki: Matrix2<f64>,
}

impl CurrentGains {
    pub fn scalar(kp: f64, ki: f64) -> Self {
        Self { kp: Matrix2::identity() * kp, ki: Matrix2::identity() * ki }
    }

    /// Both gains must have a positive definite symmetric part.
    pub fn validate(&self) -> Result<()> {
        for (name, m) in [("kp", self.kp), ("ki", self.ki)] {
            let sym = (m + m.transpose()) * 0.5;
            let lo = sym.symmetric_eigenvalues().min();
            if !(lo > 0.0) {
                return Err(Error::Config(format!("current gain {name} is not positive definite (min eig {lo})")));
            }
        }
        Ok(())
    }
}

/// Converter-side constants the current loop relies on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurrentLoopParams {
    pub l: f64,
    pub r: f64,
    #[serde(default)]
    pub form: CurrentLoopForm,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CurrentCtrlState {
    pub xc: Vector2<f64>,
}

/// Returns `(ẋ_c, u₂₃)`.
pub fn current_controller(
    s: &CurrentCtrlState,
    y: &Measurement,
    i_ref: &Vector2<f64>,
    u1: f64,
    g: &CurrentGains,
    p: &CurrentLoopParams,
) -> (CurrentCtrlState, Vector2<f64>) {
    let err = y.i - i_ref;
    let pi = -g.kp * err - g.ki * s.xc;
    let feedforward = y.v - p.l * u1 * j_mul(&y.i);
    let u = match p.form {
        CurrentLoopForm::Normalized => p.l * pi + p.r * y.i + feedforward,
        CurrentLoopForm::Literal => pi + feedforward,
    };
    (CurrentCtrlState { xc: err }, u)
}

/// Integrator value holding `u₂₃` at its equilibrium when `y₅₆ = y₅₆^ref`.
pub fn current_steady_state(i_ref: &Vector2<f64>, g: &CurrentGains, p: &CurrentLoopParams) -> CurrentCtrlState {
    match p.form {
        CurrentLoopForm::Normalized => CurrentCtrlState::default(),
        CurrentLoopForm::Literal => {
            let ki_inv = g.ki.try_inverse().unwrap_or_else(Matrix2::zeros);
            CurrentCtrlState { xc: -(ki_inv * (p.r * i_ref)) }
        }
    }
}

/// Analytic solution of `ÿ + k_p ẏ + k_i y = 0` from `(y(0), ẏ(0))`, valid for
/// any sign of the discriminant.
pub fn second_order_free_response(y0: f64, yd0: f64, kp: f64, ki: f64, t: f64) -> f64 {
    let sigma = kp / 2.0;
    let disc = sigma * sigma - ki;
    let decay = (-sigma * t).exp();
    if disc < -1e-12 * ki {
        let wd = (-disc).sqrt();
        decay * (y0 * (wd * t).cos() + (yd0 + sigma * y0) / wd * (wd * t).sin())
    } else if disc > 1e-12 * ki {
        let root = disc.sqrt();
        let (s1, s2) = (-sigma + root, -sigma - root);
        let a = (yd0 - s2 * y0) / (s1 - s2);
        let b = y0 - a;
        a * (s1 * t).exp() + b * (s2 * t).exp()
    } else {
        decay * (y0 + (yd0 + sigma * y0) * t)
    }
}

/// Roots of `s² + k_p s + k_i` as `(re, im)` pairs.
pub fn characteristic_roots(kp: f64, ki: f64) -> [(f64, f64); 2] {
    let sigma = -kp / 2.0;
    let disc = kp * kp / 4.0 - ki;
    if disc < 0.0 {
        let w = (-disc).sqrt();
        [(sigma, w), (sigma, -w)]
    } else {
        let r = disc.sqrt();
        [(sigma + r, 0.0), (sigma - r, 0.0)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signals::rotation;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn atan_detector_examples() {
        assert_eq!(phase_detector_atan(&Vector2::new(1.0, 0.0), 0.0, 1e-9).unwrap(), 0.0);
        for &(c, d, r) in &[(1.0, 0.3, 0.1), (5e5, -2.0, 1.0), (1e-3, 3.0, -3.0)] {
            let x = rotation(d) * Vector2::new(c, 0.0);
            let e = phase_detector_atan(&x, r, 1e-9).unwrap();
            assert_relative_eq!(e, wrap_to_pi(d - r), epsilon = 1e-12);
        }
        assert!(matches!(
            phase_detector_atan(&Vector2::new(1e-9, 0.0), 0.0, 1e-6),
            Err(Error::DegenerateEstimate { .. })
        ));
    }

    #[test]
    fn srf_detector_examples() {
        assert_eq!(phase_detector_srf(&Vector2::new(1.0, 0.0), 0.0), 0.0);
        assert_eq!(phase_detector_srf(&Vector2::new(0.0, 1.0), 0.0), 1.0);
        let x = rotation(0.9) * Vector2::new(3.0, 0.0);
        assert_relative_eq!(phase_detector_srf(&x, 0.4), 3.0 * (0.5_f64).sin(), epsilon = 1e-12);
        // zero on both branches δ̂ = φ_ref and φ_ref + π
        let x = rotation(0.4 + PI) * Vector2::new(3.0, 0.0);
        assert!(phase_detector_srf(&x, 0.4).abs() < 1e-12);
    }

    #[test]
    fn baseline_shares_formula() {
        let v = Vector2::new(3.2e5, 1.1e4);
        assert_eq!(baseline_detector(&v, 0.2, true, 1.0).unwrap(), phase_detector_atan(&v, 0.2, 1.0).unwrap());
        assert_eq!(baseline_detector(&v, 0.2, false, 1.0).unwrap(), phase_detector_srf(&v, 0.2));
    }

    #[test]
    fn pll_examples() {
        let g = PllGains { kp: 200.0, ki: 1e3 };
        let w = 100.0 * PI;
        let (d, u1) = pll_update(&pll_locked_state(w, &g), 0.0, &g);
        assert_relative_eq!(u1, w);
        assert_eq!(d.xc, 0.0);
        assert_eq!(pll_update(&PllState::default(), 0.0, &g).1, 0.0);
        let (d, u1) = pll_update(&PllState::default(), 0.1, &g);
        assert_eq!(d.xc, 0.1);
        assert_relative_eq!(u1, -20.0);
    }

    #[test]
    fn pure_feedforward_at_zero_error() {
        let y = Measurement {
            i_g: Vector2::new(1.0, 2.0),
            v: Vector2::new(3.2e5, -1e3),
            i: Vector2::new(2000.0, 300.0),
        };
        let g = CurrentGains::scalar(250.0, 5e4);
        let p = CurrentLoopParams { l: 0.065, r: 1.02, form: CurrentLoopForm::Literal };
        let (d, u) = current_controller(&CurrentCtrlState::default(), &y, &y.i, 314.0, &g, &p);
        assert_eq!(d.xc, Vector2::zeros());
        assert_relative_eq!(u, y.v - 0.065 * 314.0 * j_mul(&y.i));
        let p = CurrentLoopParams { form: CurrentLoopForm::Normalized, ..p };
        let (_, u) = current_controller(&CurrentCtrlState::default(), &y, &y.i, 314.0, &g, &p);
        assert_relative_eq!(u, y.v - 0.065 * 314.0 * j_mul(&y.i) + 1.02 * y.i);
    }

    #[test]
    fn gain_validation() {
        assert!(CurrentGains::scalar(250.0, 5e4).validate().is_ok());
        assert!(CurrentGains::scalar(-1.0, 5e4).validate().is_err());
        let skew = CurrentGains { kp: Matrix2::new(1.0, 5.0, -5.0, 1.0), ki: Matrix2::identity() };
        assert!(skew.validate().is_ok());
        assert!(PllGains { kp: 0.0, ki: 1.0 }.validate().is_err());
    }

    #[test]
    fn roots_of_current_loop() {
        let [(re, im), _] = characteristic_roots(250.0, 5e4);
        assert_relative_eq!(re, -125.0);
        assert_relative_eq!(im, (5e4_f64 - 125.0 * 125.0).sqrt());
    }

    #[test]
    fn free_response_satisfies_ode() {
        // finite-difference residual of the analytic solution, all three regimes
        for &(kp, ki) in &[(250.0, 5e4), (250.0, 1e3), (200.0, 1e4)] {
            let f = |t: f64| second_order_free_response(-1.0, 250.0, kp, ki, t);
            assert_relative_eq!(f(0.0), -1.0, epsilon = 1e-12);
            let h = 1e-5;
            for &t in &[0.001, 0.01, 0.03] {
                let d1 = (f(t + h) - f(t - h)) / (2.0 * h);
                let d2 = (f(t + h) - 2.0 * f(t) + f(t - h)) / (h * h);
                assert!((d2 + kp * d1 + ki * f(t)).abs() < 1e-3 * ki, "kp={kp} ki={ki} t={t}");
            }
            let d0 = (f(h) - f(-h)) / (2.0 * h);
            assert_relative_eq!(d0, 250.0, max_relative = 1e-5);
        }
    }

    #[test]
    fn step_settling_time_matches_poles() {
        // 2% settling of the error envelope for s² + 250s + 5e4
        let (kp, ki) = (250.0, 5e4);
        let dt = 1e-6;
        let mut last_out = 0.0;
        let mut t = 0.0;
        while t < 0.2 {
            if second_order_free_response(-1.0, kp, kp, ki, t).abs() > 0.02 {
                last_out = t;
            }
            t += dt;
        }
        assert!(last_out > 0.02 && last_out < 0.04, "settling {last_out}");
    }
}
