//! Assignable equilibria of the rotating-frame model and the power-flow map
//! from an operator request `(P_ref, V_ref)` to `(φ_ref, i_dq_ref)`.
//!
//! Power-flow convention (calibrated against the reference operating points
//! of the 1 GW / SCR 1 case): the frame is aligned with the PCC voltage,
//! `v̄ = (V_ref, 0)`, and active power delivered into the grid branch is
//! `P = (3/2)·v̄ᵀ·ī_g`. With the power-invariant `P = v̄ᵀ·ī_g` a 0.9 GW request
//! is beyond the transfer limit of this grid, which is why the 3/2 scale is
//! the default.

use nalgebra::{Matrix2, Matrix4, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::{plant_deriv_dq, Measurement, PlantInput, PlantState, SystemParams};
use crate::signals::{j_matrix, j_mul, rotation};

/// Grid and converter impedances, filter admittance, and the block matrix
/// mapping `(ī_g, v̄)` to `(v̄_g, ī)` at steady state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImpedanceSet {
    pub z_g: Matrix2<f64>,
    pub z: Matrix2<f64>,
    pub y_c: Matrix2<f64>,
    /// `[[Z_g, I], [I, −Y_c]]`
    pub q: Matrix4<f64>,
}

const SINGULAR_DET: f64 = 1e-12;

pub fn build_impedances(p: &SystemParams, omega: f64) -> Result<ImpedanceSet> {
    let j = j_matrix();
    let i2 = Matrix2::identity();
    let z_g = p.l_g * omega * j - p.r_g * i2;
    let z = p.l * omega * j - p.r * i2;
    let y_c = p.c * omega * j;
    let mut q = Matrix4::zeros();
    q.fixed_view_mut::<2, 2>(0, 0).copy_from(&z_g);
    q.fixed_view_mut::<2, 2>(0, 2).copy_from(&i2);
    q.fixed_view_mut::<2, 2>(2, 0).copy_from(&i2);
    q.fixed_view_mut::<2, 2>(2, 2).copy_from(&(-y_c));
    let det = q.determinant();
    if !(det.abs() > SINGULAR_DET) {
        return Err(Error::SingularQ { det });
    }
    Ok(ImpedanceSet { z_g, z, y_c, q })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumPoint {
    pub delta: f64,
    pub y: Measurement,
    pub u1: f64,
    pub u23: Vector2<f64>,
}

impl EquilibriumPoint {
    pub fn plant_state(&self) -> PlantState {
        PlantState { i_g: self.y.i_g, v: self.y.v, i: self.y.i, delta: self.delta }
    }

    pub fn input(&self) -> PlantInput {
        PlantInput { u1: self.u1, u_dq: self.u23 }
    }

    /// Largest derivative component of the plant at this point, each scaled
    /// by its own natural magnitude so that volts and amperes compare.
    pub fn scaled_residual(&self, p: &SystemParams) -> f64 {
        let d = plant_deriv_dq(&self.plant_state(), &self.input(), p);
        let w = p.omega;
        let i_scale = self.y.i_g.norm().max(self.y.i.norm()).max(1.0) * w;
        let v_scale = self.y.v.norm().max(p.v_g) * w;
        let r = [
            d.i_g.norm() / i_scale,
            d.v.norm() / v_scale,
            d.i.norm() / i_scale,
            d.delta.abs() / w,
        ];
        r.into_iter().fold(0.0, f64::max)
    }
}

/// `ȳ₁₄ = Q⁻¹·col(V_g e^{Jδ̄}e₁, ȳ₅₆)`, `ū = (ω, ȳ₃₄ − Z·ȳ₅₆)`.
pub fn assignable_equilibrium(delta: f64, i_ref: &Vector2<f64>, p: &SystemParams, omega: f64) -> Result<EquilibriumPoint> {
    let imp = build_impedances(p, omega)?;
    let vg = rotation(delta) * Vector2::new(p.v_g, 0.0);
    let rhs = Vector4::new(vg.x, vg.y, i_ref.x, i_ref.y);
    let lu = imp.q.lu();
    let sol = lu.solve(&rhs).ok_or(Error::SingularQ { det: imp.q.determinant() })?;
    let i_g = Vector2::new(sol[0], sol[1]);
    let v = Vector2::new(sol[2], sol[3]);
    let y = Measurement { i_g, v, i: *i_ref };
    Ok(EquilibriumPoint { delta, y, u1: omega, u23: v - imp.z * i_ref })
}

/// Residual `‖Q·ȳ₁₄ − col(v̄_g, ȳ₅₆)‖` relative to the right-hand side.
pub fn q_solve_residual(eq: &EquilibriumPoint, p: &SystemParams, omega: f64) -> Result<f64> {
    let imp = build_impedances(p, omega)?;
    let y14 = Vector4::new(eq.y.i_g.x, eq.y.i_g.y, eq.y.v.x, eq.y.v.y);
    let vg = rotation(eq.delta) * Vector2::new(p.v_g, 0.0);
    let rhs = Vector4::new(vg.x, vg.y, eq.y.i.x, eq.y.i.y);
    Ok((imp.q * y14 - rhs).norm() / rhs.norm().max(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRequest {
    /// Active power delivered at the PCC, watts.
    pub power: f64,
    /// PCC voltage magnitude in the frame, volts.
    pub voltage: f64,
}

impl ReferenceRequest {
    /// `V_ref = √(3/2)·V_g`.
    pub fn nominal_voltage(p: &SystemParams) -> f64 {
        (1.5_f64).sqrt() * p.v_g
    }
}

/// Scale between `v̄ᵀ·ī_g` and reported active power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerConvention {
    pub power_scale: f64,
}

impl Default for PowerConvention {
    fn default() -> Self {
        Self { power_scale: 1.5 }
    }
}

impl PowerConvention {
    pub fn power_invariant() -> Self {
        Self { power_scale: 1.0 }
    }

    pub fn active_power(&self, y: &Measurement) -> f64 {
        self.power_scale * y.v.dot(&y.i_g)
    }

    /// Current magnitude at which `power` flows with PCC voltage `voltage`.
    pub fn rated_current(&self, power: f64, voltage: f64) -> f64 {
        power / (self.power_scale * voltage)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct References {
    pub phi_ref: f64,
    pub i_ref: Vector2<f64>,
    pub equilibrium: EquilibriumPoint,
}

/// Search grid and iteration limits for [`solve_references_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerFlowOptions {
    pub grid_points: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub convention: PowerConvention,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        Self { grid_points: 2001, max_iter: 60, tol: 1e-12, convention: PowerConvention::default() }
    }
}

pub fn solve_references(req: &ReferenceRequest, p: &SystemParams, omega: f64) -> Result<References> {
    solve_references_with(req, p, omega, &PowerFlowOptions::default())
}

struct Branch<'a> {
    z_g_inv: Matrix2<f64>,
    p: &'a SystemParams,
    v_ref: f64,
    scale: f64,
}

impl Branch<'_> {
    fn grid_current(&self, delta: f64) -> Vector2<f64> {
        let vg = rotation(delta) * Vector2::new(self.p.v_g, 0.0);
        self.z_g_inv * (vg - Vector2::new(self.v_ref, 0.0))
    }

    fn power(&self, delta: f64) -> f64 {
        self.scale * self.v_ref * self.grid_current(delta).x
    }

    fn dpower(&self, delta: f64) -> f64 {
        let dvg = j_mul(&(rotation(delta) * Vector2::new(self.p.v_g, 0.0)));
        self.scale * self.v_ref * (self.z_g_inv * dvg).x
    }
}

/// Solve for the frame angle and converter current that deliver `req.power`
/// with `|v̄| = req.voltage`.
///
/// A uniform scan of `δ̄ ∈ [−π/2, π/2]` brackets every root; each bracket is
/// refined by damped Newton (with bisection as the safeguard) and the root of
/// smallest `|δ̄|` is returned.
pub fn solve_references_with(
    req: &ReferenceRequest,
    p: &SystemParams,
    omega: f64,
    opts: &PowerFlowOptions,
) -> Result<References> {
    if !(req.voltage > 0.0) || !req.power.is_finite() {
        return Err(Error::Infeasible(format!("need V_ref > 0 and finite P_ref, got {req:?}")));
    }
    let imp = build_impedances(p, omega)?;
    let z_g_inv = imp.z_g.try_inverse().ok_or(Error::SingularQ { det: imp.z_g.determinant() })?;
    let br = Branch { z_g_inv, p, v_ref: req.voltage, scale: opts.convention.power_scale };
    let f = |d: f64| br.power(d) - req.power;

    let n = opts.grid_points.max(3);
    let half_pi = std::f64::consts::FRAC_PI_2;
    let grid: Vec<f64> = (0..n).map(|k| -half_pi + std::f64::consts::PI * k as f64 / (n - 1) as f64).collect();
    let mut brackets = Vec::new();
    for w in grid.windows(2) {
        let (fa, fb) = (f(w[0]), f(w[1]));
        if fa == 0.0 {
            brackets.push((w[0], w[0]));
        } else if fa * fb < 0.0 {
            brackets.push((w[0], w[1]));
        }
    }
    if f(grid[n - 1]) == 0.0 {
        brackets.push((grid[n - 1], grid[n - 1]));
    }
    brackets.sort_by(|a, b| (a.0 + a.1).abs().total_cmp(&(b.0 + b.1).abs()));
    let &(lo, hi) = brackets.first().ok_or_else(|| {
        let p_max = grid.iter().map(|&d| br.power(d)).fold(f64::NEG_INFINITY, f64::max);
        let p_min = grid.iter().map(|&d| br.power(d)).fold(f64::INFINITY, f64::min);
        Error::Infeasible(format!(
            "P_ref = {:.6e} W outside transferable range [{p_min:.6e}, {p_max:.6e}] W at V_ref = {:.6e} V",
            req.power, req.voltage
        ))
    })?;

    let delta = refine_root(&f, &|d| br.dpower(d), lo, hi, opts, req.power.abs().max(1.0))?;
    let i_g = br.grid_current(delta);
    let v = Vector2::new(req.voltage, 0.0);
    let i_ref = i_g - imp.y_c * v;
    let equilibrium = assignable_equilibrium(delta, &i_ref, p, omega)?;
    Ok(References { phi_ref: delta, i_ref, equilibrium })
}

fn refine_root(
    f: &dyn Fn(f64) -> f64,
    df: &dyn Fn(f64) -> f64,
    mut lo: f64,
    mut hi: f64,
    opts: &PowerFlowOptions,
    scale: f64,
) -> Result<f64> {
    if lo == hi {
        return Ok(lo);
    }
    let mut f_lo = f(lo);
    let mut x = 0.5 * (lo + hi);
    let mut fx = f(x);
    for _ in 0..opts.max_iter {
        if fx.abs() <= opts.tol * scale || (hi - lo) < 1e-15 {
            return Ok(x);
        }
        if f_lo * fx < 0.0 {
            hi = x;
        } else {
            lo = x;
            f_lo = fx;
        }
        // damped Newton step, falling back to bisection when it leaves the bracket
        let slope = df(x);
        let mut step = if slope != 0.0 { -fx / slope } else { f64::NAN };
        let mut next = x + step;
        let mut damping = 1.0;
        while step.is_finite() && (next <= lo || next >= hi) && damping > 1e-3 {
            damping *= 0.5;
            step *= 0.5;
            next = x + step;
        }
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        x = next;
        fx = f(x);
    }
    if fx.abs() <= 1e3 * opts.tol * scale {
        return Ok(x);
    }
    Err(Error::NoConvergence { iterations: opts.max_iter, residual: fx })
}
