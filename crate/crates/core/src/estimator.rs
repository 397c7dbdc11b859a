//! Continuous-time least squares with forgetting and a capped gain matrix,
//! plus a sliding-window excitation monitor.

use std::collections::VecDeque;

use nalgebra::{Matrix2x3, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::observer::RegressorPair;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainNorm {
    #[default]
    Frobenius,
    Spectral,
}

/// What happens once `‖F‖` reaches the cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreezePolicy {
    /// `Ḟ = 0` from then on. With large regressors the frozen gain makes the
    /// estimator too stiff for an explicit integrator.
    Latch,
    /// Keep only the decreasing term while frozen, resume the full law once
    /// `‖F‖ ≤ 0.99·M`.
    #[default]
    Hysteresis,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorGains {
    pub alpha: f64,
    pub beta: f64,
    /// Cap `M` on `‖F‖`.
    pub m_cap: f64,
    /// `F(0) = I/f₀`.
    pub f0: f64,
    #[serde(default)]
    pub norm: GainNorm,
    #[serde(default)]
    pub freeze: FreezePolicy,
}

impl EstimatorGains {
    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha > 0.0 && self.f0 > 0.0 && self.beta >= 0.0 && self.m_cap > 0.0;
        if !ok || ![self.alpha, self.beta, self.m_cap, self.f0].iter().all(|v| v.is_finite()) {
            return Err(Error::Config(format!(
                "estimator gains need alpha > 0, f0 > 0, beta >= 0, M > 0 (got {self:?})"
            )));
        }
        if matrix_norm(&(Matrix3::identity() / self.f0), self.norm) > self.m_cap {
            return Err(Error::Config(format!("initial gain norm of I/f0 exceeds the cap M = {}", self.m_cap)));
        }
        Ok(())
    }
}

pub fn matrix_norm(f: &Matrix3<f64>, norm: GainNorm) -> f64 {
    match norm {
        GainNorm::Frobenius => f.norm(),
        GainNorm::Spectral => {
            let sym = (f + f.transpose()) * 0.5;
            sym.symmetric_eigenvalues().iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorState {
    pub theta: Vector3<f64>,
    pub f: Matrix3<f64>,
    /// Discrete switch state; not integrated.
    pub frozen: bool,
}

impl EstimatorState {
    pub fn new(theta0: Vector3<f64>, g: &EstimatorGains) -> Self {
        Self { theta: theta0, f: Matrix3::identity() / g.f0, frozen: false }
    }

    pub fn zeros() -> Self {
        Self { theta: Vector3::zeros(), f: Matrix3::zeros(), frozen: false }
    }

    pub fn gain_norm(&self, norm: GainNorm) -> f64 {
        matrix_norm(&self.f, norm)
    }
}

/// `θ̂̇ = αFΩᵀ(Y − Ωθ̂)`; `Ḟ = −αFΩᵀΩF + βF` while `‖F‖ ≤ M` and not frozen,
/// otherwise zero (or the decreasing term alone under [`FreezePolicy::Hysteresis`]).
pub fn lsff_deriv(e: &EstimatorState, r: &RegressorPair, g: &EstimatorGains) -> EstimatorState {
    let om = &r.omega;
    let err = r.y - om * e.theta;
    let theta = g.alpha * e.f * om.transpose() * err;
    let decrease = -g.alpha * e.f * om.transpose() * om * e.f;
    let f = if e.frozen {
        match g.freeze {
            FreezePolicy::Latch => Matrix3::zeros(),
            FreezePolicy::Hysteresis => decrease,
        }
    } else if matrix_norm(&e.f, g.norm) <= g.m_cap {
        decrease + g.beta * e.f
    } else {
        Matrix3::zeros()
    };
    EstimatorState { theta, f, frozen: e.frozen }
}

/// Step-boundary bookkeeping for the gain switch.
///
/// A candidate `F` whose norm exceeds `M` is rejected (the previous `F` is kept,
/// which is the `Ḟ = 0` branch) and the switch latches, so `‖F‖ ≤ M` holds at
/// every accepted step. `F` is re-symmetrised.
pub fn accept_step(prev: &EstimatorState, candidate: &EstimatorState, g: &EstimatorGains) -> EstimatorState {
    let mut next = *candidate;
    next.f = (next.f + next.f.transpose()) * 0.5;
    if matrix_norm(&next.f, g.norm) > g.m_cap {
        next.f = prev.f;
        next.frozen = true;
    } else if next.frozen && g.freeze == FreezePolicy::Hysteresis && matrix_norm(&next.f, g.norm) <= 0.99 * g.m_cap {
        next.frozen = false;
    }
    next
}

/// The same estimator in information coordinates `G = F⁻¹`, `h = Gθ̂`.
///
/// While the gain law is active these obey `Ġ = αΩᵀΩ − βG` and
/// `ḣ = αΩᵀY − βh`, which are linear and free of the `α‖F‖‖Ω‖²` stiffness of
/// the `(θ̂, F)` form. Frozen under [`FreezePolicy::Latch`], `Ġ = 0` and
/// `ḣ = αΩᵀ(Y − Ωθ̂)`; under [`FreezePolicy::Hysteresis`] the forgetting terms
/// are dropped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfoState {
    pub g: Matrix3<f64>,
    pub h: Vector3<f64>,
    /// Discrete switch state; not integrated.
    pub frozen: bool,
}

impl InfoState {
    pub fn new(theta0: Vector3<f64>, g: &EstimatorGains) -> Self {
        let gm = Matrix3::identity() * g.f0;
        Self { g: gm, h: gm * theta0, frozen: false }
    }

    pub fn zeros() -> Self {
        Self { g: Matrix3::zeros(), h: Vector3::zeros(), frozen: false }
    }

    /// `F = G⁻¹`; `None` if `G` is not positive definite.
    pub fn gain(&self) -> Option<Matrix3<f64>> {
        let sym = (self.g + self.g.transpose()) * 0.5;
        sym.cholesky().map(|c| c.inverse())
    }

    /// `θ̂ = G⁻¹h`; non-finite if `G` is not positive definite.
    pub fn theta(&self) -> Vector3<f64> {
        let sym = (self.g + self.g.transpose()) * 0.5;
        match sym.cholesky() {
            Some(c) => c.solve(&self.h),
            None => Vector3::repeat(f64::NAN),
        }
    }

    pub fn gain_norm(&self, norm: GainNorm) -> f64 {
        self.gain().map(|f| matrix_norm(&f, norm)).unwrap_or(f64::INFINITY)
    }

    pub fn to_gain_form(&self) -> EstimatorState {
        EstimatorState {
            theta: self.theta(),
            f: self.gain().unwrap_or_else(|| Matrix3::repeat(f64::NAN)),
            frozen: self.frozen,
        }
    }

    pub fn from_gain_form(e: &EstimatorState) -> Option<Self> {
        let g = e.f.cholesky()?.inverse();
        let g = (g + g.transpose()) * 0.5;
        Some(Self { g, h: g * e.theta, frozen: e.frozen })
    }
}

pub fn lsff_info_deriv(s: &InfoState, r: &RegressorPair, g: &EstimatorGains) -> InfoState {
    let om = &r.omega;
    let info = g.alpha * om.transpose() * om;
    let drive = g.alpha * om.transpose() * r.y;
    let (dg, dh) = match (s.frozen, g.freeze) {
        (false, _) => (info - g.beta * s.g, drive - g.beta * s.h),
        (true, FreezePolicy::Hysteresis) => (info, drive),
        (true, FreezePolicy::Latch) => (Matrix3::zeros(), drive - info * s.theta()),
    };
    InfoState { g: dg, h: dh, frozen: s.frozen }
}

/// Step-boundary switch in information coordinates, mirroring [`accept_step`]:
/// a candidate with `‖G⁻¹‖ > M` keeps the previous `G` (and the candidate `θ̂`)
/// and latches.
pub fn accept_info_step(prev: &InfoState, candidate: &InfoState, g: &EstimatorGains) -> InfoState {
    let mut next = *candidate;
    next.g = (next.g + next.g.transpose()) * 0.5;
    let n = next.gain_norm(g.norm);
    if n > g.m_cap {
        let theta = next.theta();
        next.g = (prev.g + prev.g.transpose()) * 0.5;
        next.h = next.g * theta;
        next.frozen = true;
    } else if next.frozen && g.freeze == FreezePolicy::Hysteresis && n <= 0.99 * g.m_cap {
        next.frozen = false;
    }
    next
}

pub fn min_eigenvalue(m: &Matrix3<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeReport {
    pub gramian: Matrix3<f64>,
    pub min_eig: f64,
}

/// Trapezoidal `∫_{t_end−T}^{t_end} ΩᵀΩ ds` over a time-stamped history.
///
/// Samples are used from the latest one backwards until the window is spanned;
/// the first segment crossing the window start is cut by linear interpolation.
pub fn pe_gramian(history: &[(f64, Matrix2x3<f64>)], window: f64) -> Result<PeReport> {
    let have = match (history.first(), history.last()) {
        (Some(a), Some(b)) => b.0 - a.0,
        _ => 0.0,
    };
    if history.len() < 2 || have < window * (1.0 - 1e-9) {
        return Err(Error::InsufficientHistory { have, need: window });
    }
    let t_end = history[history.len() - 1].0;
    let t_start = t_end - window;
    let mut gram = Matrix3::zeros();
    for pair in history.windows(2).rev() {
        let (t0, o0) = pair[0];
        let (t1, o1) = pair[1];
        if t1 <= t_start {
            break;
        }
        let g1 = o1.transpose() * o1;
        if t0 >= t_start {
            gram += (o0.transpose() * o0 + g1) * (0.5 * (t1 - t0));
        } else {
            let s = (t_start - t0) / (t1 - t0);
            let om = o0 * (1.0 - s) + o1 * s;
            gram += (om.transpose() * om + g1) * (0.5 * (t1 - t_start));
        }
    }
    Ok(PeReport { gramian: gram, min_eig: min_eigenvalue(&gram) })
}

/// Running version of [`pe_gramian`] for fixed-step simulation.
#[derive(Debug, Clone)]
pub struct PeMonitor {
    window: f64,
    samples: VecDeque<(f64, Matrix3<f64>)>,
    sum: Matrix3<f64>,
}

impl PeMonitor {
    pub fn new(window: f64) -> Self {
        Self { window, samples: VecDeque::new(), sum: Matrix3::zeros() }
    }

    pub fn push(&mut self, t: f64, omega: &Matrix2x3<f64>) {
        let g = omega.transpose() * omega;
        if let Some(&(tp, gp)) = self.samples.back() {
            self.sum += (gp + g) * (0.5 * (t - tp));
        }
        self.samples.push_back((t, g));
        let horizon = t - self.window + 1e-12 * self.window.max(1.0);
        while self.samples.len() >= 2 && self.samples[1].0 <= horizon {
            let (t0, g0) = self.samples.pop_front().unwrap();
            let (t1, g1) = self.samples[0];
            self.sum -= (g0 + g1) * (0.5 * (t1 - t0));
        }
    }

    /// `None` until the window is filled.
    pub fn min_eig(&self) -> Option<f64> {
        self.gramian().map(|g| min_eigenvalue(&g))
    }

    pub fn gramian(&self) -> Option<Matrix3<f64>> {
        let (first, last) = (self.samples.front()?, self.samples.back()?);
        (last.0 - first.0 >= self.window * (1.0 - 1e-9)).then_some(self.sum)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Vector2;

    fn gains() -> EstimatorGains {
        EstimatorGains {
            alpha: 1e3,
            beta: 1e3,
            m_cap: 100.0,
            f0: 1.0,
            norm: GainNorm::Frobenius,
            freeze: FreezePolicy::Latch,
        }
    }

    #[test]
    fn no_excitation_no_motion() {
        let g = EstimatorGains { beta: 0.0, ..gains() };
        let e = EstimatorState::new(Vector3::new(1.0, 2.0, 3.0), &g);
        let r = RegressorPair { y: Vector2::new(5.0, -1.0), omega: Matrix2x3::zeros() };
        let d = lsff_deriv(&e, &r, &g);
        assert_eq!(d.theta, Vector3::zeros());
        assert_eq!(d.f, Matrix3::zeros());
    }

    #[test]
    fn freeze_stops_all_of_fdot() {
        let g = gains();
        let mut e = EstimatorState::new(Vector3::zeros(), &g);
        e.f = Matrix3::identity() * 60.0; // Frobenius ≈ 103.9 > 100
        let r = RegressorPair { y: Vector2::zeros(), omega: Matrix2x3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0) };
        assert_eq!(lsff_deriv(&e, &r, &g).f, Matrix3::zeros());
        // spectral norm 60 is inside the cap
        let gs = EstimatorGains { norm: GainNorm::Spectral, ..g };
        assert_ne!(lsff_deriv(&e, &r, &gs).f, Matrix3::zeros());
    }

    #[test]
    fn accept_step_enforces_cap_and_latches() {
        let g = gains();
        let prev = EstimatorState { f: Matrix3::identity() * 57.0, ..EstimatorState::zeros() };
        let cand = EstimatorState { f: Matrix3::identity() * 58.0, ..EstimatorState::zeros() };
        let next = accept_step(&prev, &cand, &g);
        assert_eq!(next.f, prev.f);
        assert!(next.frozen);
        // latched: no motion under the literal law
        let r = RegressorPair { y: Vector2::zeros(), omega: Matrix2x3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0) };
        assert_eq!(lsff_deriv(&next, &r, &g).f, Matrix3::zeros());
        // hysteresis keeps draining and eventually unlatches
        let gh = EstimatorGains { freeze: FreezePolicy::Hysteresis, ..g };
        let d = lsff_deriv(&next, &r, &gh);
        assert!(d.f[(0, 0)] < 0.0 && d.f[(2, 2)] == 0.0);
        let low = EstimatorState { f: Matrix3::identity() * 50.0, frozen: true, ..EstimatorState::zeros() };
        assert!(!accept_step(&next, &low, &gh).frozen);
        assert!(accept_step(&next, &low, &g).frozen);
    }

    #[test]
    fn constant_regressor_converges() {
        // closed-form reference: with β = 0 and constant Ω, F⁻¹(t) = f₀I + αΩᵀΩt and
        // F⁻¹(t)(θ̂ − θ*) is constant, so θ̂(t) − θ* = F(t)·f₀·(θ̂(0) − θ*)
        let g = EstimatorGains { beta: 0.0, alpha: 100.0, ..gains() };
        // alternating rows give full column rank over time
        let rows = [Matrix2x3::new(1.0, 0.5, 0.0, 0.0, 1.0, 2.0), Matrix2x3::new(0.0, 0.0, 1.0, 1.0, 0.0, 0.0)];
        let star = Vector3::new(2.0, -1.0, 0.5);
        let mut e = EstimatorState::new(Vector3::zeros(), &g);
        let h = 1e-3;
        let mut info = Matrix3::identity() * g.f0;
        for k in 0..4000 {
            let o = rows[(k / 50) % 2];
            let r = RegressorPair { y: o * star, omega: o };
            let f = |s: &EstimatorState| lsff_deriv(s, &r, &g);
            let add = |s: &EstimatorState, d: &EstimatorState, c: f64| EstimatorState {
                theta: s.theta + d.theta * c,
                f: s.f + d.f * c,
                frozen: s.frozen,
            };
            let k1 = f(&e);
            let k2 = f(&add(&e, &k1, h / 2.0));
            let k3 = f(&add(&e, &k2, h / 2.0));
            let k4 = f(&add(&e, &k3, h));
            let cand = EstimatorState {
                theta: e.theta + (k1.theta + k2.theta * 2.0 + k3.theta * 2.0 + k4.theta) * (h / 6.0),
                f: e.f + (k1.f + k2.f * 2.0 + k3.f * 2.0 + k4.f) * (h / 6.0),
                frozen: false,
            };
            e = accept_step(&e, &cand, &g);
            info += g.alpha * o.transpose() * o * h;
        }
        let expected = star + info.try_inverse().unwrap() * g.f0 * (Vector3::zeros() - star);
        assert_relative_eq!(e.theta, expected, epsilon = 1e-6);
        assert!((e.theta - star).norm() < 0.05);
        assert!(min_eigenvalue(&e.f) > 0.0);
    }

    #[test]
    fn gramian_trivial_cases() {
        let zero: Vec<_> = (0..=100).map(|k| (k as f64 * 1e-3, Matrix2x3::zeros())).collect();
        assert_eq!(pe_gramian(&zero, 0.1).unwrap().min_eig, 0.0);

        let om = Matrix2x3::new(1.0, 2.0, 0.0, 0.0, 1.0, 3.0);
        let hist: Vec<_> = (0..=300).map(|k| (k as f64 * 1e-3, om)).collect();
        let rep = pe_gramian(&hist, 0.1).unwrap();
        let expect = om.transpose() * om * 0.1;
        assert_relative_eq!(rep.gramian, expect, max_relative = 1e-9);
        assert_relative_eq!(rep.min_eig, min_eigenvalue(&expect), epsilon = 1e-12);

        assert!(matches!(pe_gramian(&hist[..50], 0.1), Err(Error::InsufficientHistory { .. })));
    }

    #[test]
    fn monitor_matches_batch() {
        let hist: Vec<_> = (0..=2000)
            .map(|k| {
                let t = k as f64 * 1e-4;
                let (s, c) = (314.0 * t).sin_cos();
                (t, Matrix2x3::new(3.0 + s, c, -s, 1.0, s, c))
            })
            .collect();
        let mut mon = PeMonitor::new(0.05);
        for (k, (t, o)) in hist.iter().enumerate() {
            mon.push(*t, o);
            if k < 499 {
                assert!(mon.min_eig().is_none());
            }
        }
        let batch = pe_gramian(&hist, 0.05).unwrap();
        assert_relative_eq!(mon.gramian().unwrap(), batch.gramian, max_relative = 1e-6);
        assert!(batch.min_eig > 0.0);
    }
}
