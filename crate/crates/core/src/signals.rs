//! Three-phase and rotating-frame primitives.
//!
//! The dq map used throughout is the power-invariant Park transform whose
//! derivative with respect to the frame angle is `J·T(θ)`. With this choice a
//! balanced source `√(2/3)·V·sin(ωt + ·)` seen at angle `ωt − π/2 + δ` reads
//! `V·e^{Jδ}·e₁`, and `vᵀi` in abc equals `v_dqᵀ·i_dq`.
//!
//! Angles are plain `f64` radians and are never wrapped here.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

const TWO_PI_3: f64 = 2.0 * PI / 3.0;

/// The skew matrix `J = [[0, −1], [1, 0]]`.
pub fn j_matrix() -> Matrix2<f64> {
    Matrix2::new(0.0, -1.0, 1.0, 0.0)
}

/// `J·v`, i.e. `v` turned a quarter turn counter-clockwise.
#[inline]
pub fn j_mul(v: &Vector2<f64>) -> Vector2<f64> {
    Vector2::new(-v.y, v.x)
}

/// A balanced (or not) set of phase quantities.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ThreePhase {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl ThreePhase {
    pub fn new(a: f64, b: f64, c: f64) -> Self {
        Self { a, b, c }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn sum(&self) -> f64 {
        self.a + self.b + self.c
    }

    pub fn dot(&self, other: &ThreePhase) -> f64 {
        self.a * other.a + self.b * other.b + self.c * other.c
    }

    pub fn scale(&self, k: f64) -> Self {
        Self::new(k * self.a, k * self.b, k * self.c)
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.a, self.b, self.c]
    }

    pub fn from_array(v: [f64; 3]) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    pub fn max_abs(&self) -> f64 {
        self.a.abs().max(self.b.abs()).max(self.c.abs())
    }
}

impl std::ops::Add for ThreePhase {
    type Output = ThreePhase;
    fn add(self, rhs: ThreePhase) -> ThreePhase {
        ThreePhase::new(self.a + rhs.a, self.b + rhs.b, self.c + rhs.c)
    }
}

impl std::ops::Sub for ThreePhase {
    type Output = ThreePhase;
    fn sub(self, rhs: ThreePhase) -> ThreePhase {
        ThreePhase::new(self.a - rhs.a, self.b - rhs.b, self.c - rhs.c)
    }
}

/// Rotating-frame pair.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DqVec {
    pub d: f64,
    pub q: f64,
}

impl DqVec {
    pub fn new(d: f64, q: f64) -> Self {
        Self { d, q }
    }

    pub fn norm(&self) -> f64 {
        self.d.hypot(self.q)
    }
}

impl From<Vector2<f64>> for DqVec {
    fn from(v: Vector2<f64>) -> Self {
        Self::new(v.x, v.y)
    }
}

impl From<DqVec> for Vector2<f64> {
    fn from(v: DqVec) -> Self {
        Vector2::new(v.d, v.q)
    }
}

/// `e^{Jα}`.
pub fn rotation(alpha: f64) -> Matrix2<f64> {
    let (s, c) = alpha.sin_cos();
    Matrix2::new(c, -s, s, c)
}

/// Power-invariant Park transform at frame angle `theta`.
pub fn dq_transform(s: &ThreePhase, theta: f64) -> DqVec {
    let k = (2.0_f64 / 3.0).sqrt();
    let angles = [theta, theta - TWO_PI_3, theta + TWO_PI_3];
    let x = s.to_array();
    let (mut d, mut q) = (0.0, 0.0);
    for (xi, ang) in x.iter().zip(angles) {
        let (sn, cs) = ang.sin_cos();
        d += cs * xi;
        q += sn * xi;
    }
    DqVec::new(k * d, k * q)
}

/// Transpose of [`dq_transform`]; a right inverse on the zero-sequence-free subspace.
pub fn inverse_dq(v: &DqVec, theta: f64) -> ThreePhase {
    let k = (2.0_f64 / 3.0).sqrt();
    let phase = |ang: f64| {
        let (sn, cs) = ang.sin_cos();
        k * (cs * v.d + sn * v.q)
    };
    ThreePhase::new(phase(theta), phase(theta - TWO_PI_3), phase(theta + TWO_PI_3))
}

/// Balanced grid source `√(2/3)·V_g·[sin ωt, sin(ωt − 2π/3), sin(ωt + 2π/3)]`.
pub fn balanced_source(v_g: f64, omega: f64, t: f64) -> ThreePhase {
    balanced_source_at_phase(v_g, omega * t)
}

/// Same waveform parametrised directly by the source phase `ωt`.
pub fn balanced_source_at_phase(v_g: f64, phase: f64) -> ThreePhase {
    let k = (2.0_f64 / 3.0).sqrt() * v_g;
    ThreePhase::new(
        k * phase.sin(),
        k * (phase - TWO_PI_3).sin(),
        k * (phase + TWO_PI_3).sin(),
    )
}

/// Wrap an angle to `[−π, π)`.
pub fn wrap_to_pi(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(2.0 * PI) - PI;
    // rem_euclid can return exactly 2π for tiny negative inputs
    if y >= PI {
        y - 2.0 * PI
    } else {
        y
    }
}
