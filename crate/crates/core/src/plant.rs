//! Average model of the grid-connected converter, in the rotating frame
//! (the simulation path) and in phase coordinates (the cross-check path).

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signals::{balanced_source, j_mul, rotation, ThreePhase};

/// Physical constants of converter, filter and Thevenin grid.
///
/// `v_g` is the magnitude of the grid voltage in the rotating frame (line-to-line
/// RMS for the power-invariant transform). `omega` is in rad/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemParams {
    pub r_g: f64,
    pub l_g: f64,
    pub c: f64,
    pub r: f64,
    pub l: f64,
    pub v_g: f64,
    pub omega: f64,
    pub v_dc: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_max: Option<f64>,
}

impl SystemParams {
    /// 1 GW converter on a 320 kV, 50 Hz grid with SCR 1.
    pub fn weak_grid() -> Self {
        Self {
            r_g: 10.24,
            l_g: 0.33,
            c: 5.29e-6,
            r: 1.02,
            l: 0.065,
            v_g: 261e3,
            omega: 100.0 * std::f64::consts::PI,
            v_dc: 640e3,
            m_min: Some(-1.0),
            m_max: Some(1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let named = [
            ("r_g", self.r_g),
            ("l_g", self.l_g),
            ("c", self.c),
            ("r", self.r),
            ("l", self.l),
            ("v_g", self.v_g),
            ("omega", self.omega),
            ("v_dc", self.v_dc),
        ];
        for (name, v) in named {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("parameter {name} must be positive, got {v}")));
            }
        }
        if let (Some(lo), Some(hi)) = (self.m_min, self.m_max) {
            if !(lo < hi) {
                return Err(Error::Config(format!("modulation bounds need m_min < m_max, got [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    /// Grid voltage in the frame, `V_g·e^{Jδ}·e₁`.
    pub fn grid_voltage_dq(&self, delta: f64) -> Vector2<f64> {
        rotation(delta) * Vector2::new(self.v_g, 0.0)
    }
}

/// The six measured electrical states.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Measurement {
    pub i_g: Vector2<f64>,
    pub v: Vector2<f64>,
    pub i: Vector2<f64>,
}

impl Measurement {
    pub fn to_array(&self) -> [f64; 6] {
        [self.i_g.x, self.i_g.y, self.v.x, self.v.y, self.i.x, self.i.y]
    }
}

/// Plant truth: measured states plus the frame error angle `δ = ϑ − ωt`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlantState {
    pub i_g: Vector2<f64>,
    pub v: Vector2<f64>,
    pub i: Vector2<f64>,
    pub delta: f64,
}

impl PlantState {
    /// What the controller is allowed to see. `δ` is not part of it.
    pub fn measure(&self) -> Measurement {
        Measurement { i_g: self.i_g, v: self.v, i: self.i }
    }

    pub fn stored_energy(&self, p: &SystemParams) -> f64 {
        0.5 * (p.l_g * self.i_g.norm_squared() + p.c * self.v.norm_squared() + p.l * self.i.norm_squared())
    }
}

/// Frame speed `u₁ = ϑ̇` and converter voltage `u_dq = V_dc·m_dq`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlantInput {
    pub u1: f64,
    pub u_dq: Vector2<f64>,
}

pub fn plant_deriv_dq(s: &PlantState, u: &PlantInput, p: &SystemParams) -> PlantState {
    let u1 = u.u1;
    let d_i_g = (-p.r_g * s.i_g + s.v + p.l_g * u1 * j_mul(&s.i_g) - p.grid_voltage_dq(s.delta)) / p.l_g;
    let d_v = (-s.i_g + s.i + p.c * u1 * j_mul(&s.v)) / p.c;
    let d_i = (-s.v - p.r * s.i + p.l * u1 * j_mul(&s.i) + u.u_dq) / p.l;
    PlantState { i_g: d_i_g, v: d_v, i: d_i, delta: u1 - p.omega }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AbcPlantState {
    pub i_g: ThreePhase,
    pub v: ThreePhase,
    pub i: ThreePhase,
}

/// Phase-coordinate model driven by modulation indices `m`. The grid source is
/// evaluated at phase `ωt`.
pub fn plant_deriv_abc(s: &AbcPlantState, t: f64, m: &ThreePhase, p: &SystemParams) -> AbcPlantState {
    let v_g = balanced_source(p.v_g, p.omega, t);
    abc_deriv_with_source(s, &v_g, m, p)
}

pub(crate) fn abc_deriv_with_source(
    s: &AbcPlantState,
    v_g: &ThreePhase,
    m: &ThreePhase,
    p: &SystemParams,
) -> AbcPlantState {
    AbcPlantState {
        i: (m.scale(p.v_dc) - s.i.scale(p.r) - s.v).scale(1.0 / p.l),
        i_g: (s.v - s.i_g.scale(p.r_g) - *v_g).scale(1.0 / p.l_g),
        v: (s.i - s.i_g).scale(1.0 / p.c),
    }
}

/// Modulation indices with a feasibility flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Modulation {
    pub m_dq: Vector2<f64>,
    /// Peak phase value over a rotation, `√(2/3)·|m_dq|`.
    pub peak: f64,
    pub saturated: bool,
}

/// `m_dq = u_dq / V_dc`. The value is never clamped; leaving `[m_min, m_max]`
/// in any phase only sets `saturated`.
pub fn modulation_indices(u_dq: &Vector2<f64>, p: &SystemParams) -> Modulation {
    let m_dq = u_dq / p.v_dc;
    let peak = (2.0_f64 / 3.0).sqrt() * m_dq.norm();
    let above = p.m_max.is_some_and(|hi| peak > hi);
    let below = p.m_min.is_some_and(|lo| -peak < lo);
    Modulation { m_dq, peak, saturated: above || below }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params() -> SystemParams {
        SystemParams::weak_grid()
    }

    #[test]
    fn zero_state_zero_input() {
        let p = params();
        let d = plant_deriv_dq(&PlantState::default(), &PlantInput::default(), &p);
        assert_relative_eq!(d.i_g, Vector2::new(-p.v_g / p.l_g, 0.0));
        assert_eq!(d.v, Vector2::zeros());
        assert_eq!(d.i, Vector2::zeros());
        assert_eq!(d.delta, -p.omega);
    }

    #[test]
    fn abc_zero_state() {
        let p = params();
        let t = 0.0037;
        let d = plant_deriv_abc(&AbcPlantState::default(), t, &ThreePhase::zero(), &p);
        let vg = balanced_source(p.v_g, p.omega, t);
        assert_eq!(d.i, ThreePhase::zero());
        assert_eq!(d.v, ThreePhase::zero());
        assert_relative_eq!(d.i_g.a, -vg.a / p.l_g);
        assert_relative_eq!(d.i_g.b, -vg.b / p.l_g);
        assert_relative_eq!(d.i_g.c, -vg.c / p.l_g);
    }

    #[test]
    fn modulation_examples() {
        let p = params();
        let m = modulation_indices(&Vector2::new(p.v_dc, 0.0), &p);
        assert_relative_eq!(m.m_dq, Vector2::new(1.0, 0.0));
        assert!(!m.saturated);
        let m = modulation_indices(&Vector2::zeros(), &p);
        assert_eq!(m.m_dq, Vector2::zeros());
        let m = modulation_indices(&Vector2::new(2.0 * p.v_dc, 0.0), &p);
        assert!(m.saturated);
        // returned unclamped
        assert_relative_eq!(m.m_dq.x, 2.0);
    }

    #[test]
    fn validation() {
        let mut p = params();
        assert!(p.validate().is_ok());
        p.l_g = 0.0;
        assert!(p.validate().is_err());
        let mut p = params();
        p.m_min = Some(1.0);
        assert!(p.validate().is_err());
    }

    #[test]
    fn derivative_matches_finite_difference() {
        // one RK4 step forward and backward with constant input; central difference
        let p = params();
        let s = PlantState {
            i_g: Vector2::new(1200.0, -300.0),
            v: Vector2::new(3.1e5, 2.0e4),
            i: Vector2::new(1100.0, 250.0),
            delta: 0.4,
        };
        let u = PlantInput { u1: 310.0, u_dq: Vector2::new(3.3e5, 1.0e4) };
        let step = |s: &PlantState, h: f64| {
            let add = |a: &PlantState, k: &PlantState, c: f64| PlantState {
                i_g: a.i_g + k.i_g * c,
                v: a.v + k.v * c,
                i: a.i + k.i * c,
                delta: a.delta + k.delta * c,
            };
            let k1 = plant_deriv_dq(s, &u, &p);
            let k2 = plant_deriv_dq(&add(s, &k1, h / 2.0), &u, &p);
            let k3 = plant_deriv_dq(&add(s, &k2, h / 2.0), &u, &p);
            let k4 = plant_deriv_dq(&add(s, &k3, h), &u, &p);
            let mut out = *s;
            out = add(&out, &k1, h / 6.0);
            out = add(&out, &k2, h / 3.0);
            out = add(&out, &k3, h / 3.0);
            add(&out, &k4, h / 6.0)
        };
        let h = 1e-8;
        let fwd = step(&s, h);
        let bwd = step(&s, -h);
        let d = plant_deriv_dq(&s, &u, &p);
        assert_relative_eq!((fwd.i_g - bwd.i_g) / (2.0 * h), d.i_g, max_relative = 1e-5);
        assert_relative_eq!((fwd.v - bwd.v) / (2.0 * h), d.v, max_relative = 1e-5);
        assert_relative_eq!((fwd.i - bwd.i) / (2.0 * h), d.i, max_relative = 1e-5);
        assert_relative_eq!((fwd.delta - bwd.delta) / (2.0 * h), d.delta, max_relative = 1e-6);
    }
}
