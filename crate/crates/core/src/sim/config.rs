//! Declarative scenario description (TOML) and the shipped presets.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use super::closed_loop::{Controller, Setpoint};
use crate::control::{CurrentGains, CurrentLoopForm, CurrentLoopParams, DetectorMode, PllGains};
use crate::equilibrium::{assignable_equilibrium, solve_references, ReferenceRequest};
use crate::error::{Error, Result};
use crate::estimator::{EstimatorGains, FreezePolicy, GainNorm};
use crate::observer::ObserverParams;
use crate::plant::SystemParams;

pub const PRESETS: [&str; 5] = ["nominal", "voltage_drop", "frequency_drop", "scr_trip", "baseline_comparison"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub detector: DetectorMode,
    /// Exit with a divergence status when the run does not converge.
    #[serde(default)]
    pub require_convergence: bool,
    #[serde(default)]
    pub seed: u64,
    pub params: SystemParams,
    #[serde(default)]
    pub observer: ObserverConfig,
    pub estimator: EstimatorConfig,
    pub pll: PllGains,
    pub current: CurrentConfig,
    pub integrator: IntegratorConfig,
    pub references: Vec<ReferenceStep>,
    #[serde(default)]
    pub events: Vec<EventSpec>,
    #[serde(default)]
    pub init: InitConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObserverConfig {
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Observer copy of the grid resistance; defaults to the plant value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_g: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_g: Option<f64>,
    #[serde(default)]
    pub z0: [f64; 4],
}

fn default_lambda() -> f64 {
    100.0
}

impl Default for ObserverConfig {
    fn default() -> Self {
        Self { lambda: default_lambda(), r_g: None, l_g: None, z0: [0.0; 4] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    pub alpha: f64,
    pub beta: f64,
    pub m_cap: f64,
    pub f0: f64,
    #[serde(default)]
    pub norm: GainNorm,
    #[serde(default)]
    pub freeze: FreezePolicy,
    /// `θ̂(0)`; defaults to `(2π·50, 0, 0)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta0: Option<[f64; 3]>,
}

impl EstimatorConfig {
    pub fn gains(&self) -> EstimatorGains {
        EstimatorGains {
            alpha: self.alpha,
            beta: self.beta,
            m_cap: self.m_cap,
            f0: self.f0,
            norm: self.norm,
            freeze: self.freeze,
        }
    }

    pub fn theta0(&self) -> [f64; 3] {
        self.theta0.unwrap_or([2.0 * PI * 50.0, 0.0, 0.0])
    }
}

/// A gain given either as a scalar (times identity) or a full 2×2 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GainSpec {
    Scalar(f64),
    Matrix([[f64; 2]; 2]),
}

impl GainSpec {
    pub fn matrix(&self) -> Matrix2<f64> {
        match *self {
            GainSpec::Scalar(k) => Matrix2::identity() * k,
            GainSpec::Matrix(m) => Matrix2::new(m[0][0], m[0][1], m[1][0], m[1][1]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurrentConfig {
    pub kp: GainSpec,
    pub ki: GainSpec,
    #[serde(default)]
    pub form: CurrentLoopForm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMode {
    /// Controllers evaluated inside every integrator stage.
    #[default]
    Continuous,
    /// Inputs computed at step start and held over the step.
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub t_end: f64,
    #[serde(default)]
    pub mode: ControlMode,
    /// Record one CSV row every this many steps.
    #[serde(default = "one")]
    pub record_every: usize,
}

fn one() -> usize {
    1
}

/// Either an operator request (`power`, optional `voltage`) or explicit
/// `phi_ref` / `i_ref`, taking effect at `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceStep {
    pub t: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub voltage: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi_ref: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub i_ref: Option<[f64; 2]>,
}

impl ReferenceStep {
    pub fn power(t: f64, power: f64) -> Self {
        Self { t, power: Some(power), voltage: None, phi_ref: None, i_ref: None }
    }
}

/// Parameter change at time `t`: either `value` or `scale` of the current value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventSpec {
    pub t: f64,
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    /// Plant at the equilibrium of the first reference, PLL locked.
    #[default]
    Equilibrium,
    /// Everything at zero except `Φ(0) = I`.
    Zero,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitConfig {
    #[serde(default)]
    pub kind: InitKind,
    /// Overrides the plant's initial `δ`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pll_xc0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub current_xc0: Option<[f64; 2]>,
    /// Start the estimator at the true parameter vector (test harness use).
    #[serde(default)]
    pub warm_estimator: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub rated_power: f64,
    pub delta_band_deg: f64,
    pub current_band_frac: f64,
    pub freq_band_hz: f64,
    pub amplitude_band_frac: f64,
    /// Window of the excitation Gramian, seconds.
    pub pe_window: f64,
    /// Currents or voltages beyond this multiple of rated count as divergence.
    pub divergence_factor: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            rated_power: 1e9,
            delta_band_deg: 1.0,
            current_band_frac: 0.01,
            freq_band_hz: 0.05,
            amplitude_band_frac: 0.01,
            pe_window: 0.1,
            divergence_factor: 100.0,
        }
    }
}

/// Which parameter an event touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamPath {
    Plant(PlantField),
    Observer(ObserverField),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlantField {
    RG,
    LG,
    C,
    R,
    L,
    VG,
    Omega,
    VDc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObserverField {
    RG,
    LG,
    Lambda,
}

impl ParamPath {
    pub fn parse(s: &str) -> Result<Self> {
        let p = match s {
            "plant.r_g" => ParamPath::Plant(PlantField::RG),
            "plant.l_g" => ParamPath::Plant(PlantField::LG),
            "plant.c" => ParamPath::Plant(PlantField::C),
            "plant.r" => ParamPath::Plant(PlantField::R),
            "plant.l" => ParamPath::Plant(PlantField::L),
            "plant.v_g" => ParamPath::Plant(PlantField::VG),
            "plant.omega" => ParamPath::Plant(PlantField::Omega),
            "plant.v_dc" => ParamPath::Plant(PlantField::VDc),
            "observer.r_g" => ParamPath::Observer(ObserverField::RG),
            "observer.l_g" => ParamPath::Observer(ObserverField::LG),
            "observer.lambda" => ParamPath::Observer(ObserverField::Lambda),
            other => return Err(Error::Config(format!("unknown parameter path {other:?}"))),
        };
        Ok(p)
    }

    fn slot<'a>(&self, plant: &'a mut SystemParams, obs: &'a mut ObserverParams) -> &'a mut f64 {
        match self {
            ParamPath::Plant(f) => match f {
                PlantField::RG => &mut plant.r_g,
                PlantField::LG => &mut plant.l_g,
                PlantField::C => &mut plant.c,
                PlantField::R => &mut plant.r,
                PlantField::L => &mut plant.l,
                PlantField::VG => &mut plant.v_g,
                PlantField::Omega => &mut plant.omega,
                PlantField::VDc => &mut plant.v_dc,
            },
            ParamPath::Observer(f) => match f {
                ObserverField::RG => &mut obs.r_g,
                ObserverField::LG => &mut obs.l_g,
                ObserverField::Lambda => &mut obs.lambda,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EventAction {
    Set(f64),
    Scale(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub step: usize,
    pub t: f64,
    pub path: ParamPath,
    pub action: EventAction,
}

impl Event {
    pub fn apply(&self, plant: &mut SystemParams, obs: &mut ObserverParams) {
        let slot = self.path.slot(plant, obs);
        *slot = match self.action {
            EventAction::Set(v) => v,
            EventAction::Scale(k) => *slot * k,
        };
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduledSetpoint {
    pub step: usize,
    pub t: f64,
    pub setpoint: Setpoint,
}

/// Validated, ready-to-integrate scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub plant: SystemParams,
    pub controller: Controller,
    pub setpoints: Vec<ScheduledSetpoint>,
    pub events: Vec<Event>,
    pub steps: usize,
    pub dt: f64,
    pub rated_current: f64,
    pub rated_voltage: f64,
}

fn step_index(t: f64, dt: f64) -> usize {
    (t / dt).round() as usize
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    /// A preset name or a path to a TOML file.
    pub fn load(spec: &str) -> Result<Self> {
        if let Some(cfg) = preset(spec) {
            return Ok(cfg);
        }
        let path = Path::new(spec);
        if !path.exists() {
            return Err(Error::Config(format!(
                "{spec:?} is neither a preset ({}) nor an existing file",
                PRESETS.join(", ")
            )));
        }
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Sets `t_end`, dropping reference steps and events at or beyond it.
    pub fn set_horizon(&mut self, t_end: f64) {
        self.integrator.t_end = t_end;
        self.references.retain(|r| r.t < t_end);
        self.events.retain(|e| e.t < t_end);
    }

    pub fn resolve(&self) -> Result<Scenario> {
        let cfg = self;
        let p = cfg.params;
        p.validate()?;
        let dt = cfg.integrator.dt;
        let t_end = cfg.integrator.t_end;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {dt}")));
        }
        if !(t_end > dt && t_end.is_finite()) {
            return Err(Error::Config(format!("t_end must exceed dt, got t_end = {t_end}, dt = {dt}")));
        }
        if cfg.integrator.record_every == 0 {
            return Err(Error::Config("record_every must be at least 1".into()));
        }
        cfg.pll.validate()?;
        let est = cfg.estimator.gains();
        est.validate()?;
        let current = CurrentGains { kp: cfg.current.kp.matrix(), ki: cfg.current.ki.matrix() };
        current.validate()?;
        if !(cfg.observer.lambda > 0.0) {
            return Err(Error::Config(format!("observer lambda must be positive, got {}", cfg.observer.lambda)));
        }
        let observer = ObserverParams {
            r_g: cfg.observer.r_g.unwrap_or(p.r_g),
            l_g: cfg.observer.l_g.unwrap_or(p.l_g),
            lambda: cfg.observer.lambda,
        };
        if !(observer.r_g > 0.0 && observer.l_g > 0.0) {
            return Err(Error::Config("observer r_g and l_g must be positive".into()));
        }
        let x_min = if cfg.detector.is_baseline() { 1e-6 * p.v_g } else { 1e-6 * p.v_g / observer.l_g };
        let controller = Controller {
            observer,
            estimator: est,
            pll: cfg.pll,
            current,
            current_params: CurrentLoopParams { l: p.l, r: p.r, form: cfg.current.form },
            detector: cfg.detector,
            x_min,
        };

        if cfg.references.is_empty() {
            return Err(Error::Config("at least one reference step is required".into()));
        }
        let mut setpoints = Vec::with_capacity(cfg.references.len());
        let mut last_t = f64::NEG_INFINITY;
        for r in &cfg.references {
            if !(r.t >= 0.0 && r.t <= t_end) || r.t <= last_t {
                return Err(Error::Config(format!("reference times must increase within [0, t_end], got {}", r.t)));
            }
            last_t = r.t;
            let setpoint = resolve_reference(r, &p)?;
            setpoints.push(ScheduledSetpoint { step: step_index(r.t, dt), t: r.t, setpoint });
        }
        if setpoints[0].step != 0 {
            return Err(Error::Config("the first reference must apply at t = 0".into()));
        }

        let mut events = Vec::with_capacity(cfg.events.len());
        for e in &cfg.events {
            if !(e.t >= 0.0 && e.t <= t_end) {
                return Err(Error::Config(format!("event time {} outside [0, t_end]", e.t)));
            }
            let path = ParamPath::parse(&e.path)?;
            let action = match (e.value, e.scale) {
                (Some(v), None) => EventAction::Set(v),
                (None, Some(k)) => EventAction::Scale(k),
                _ => return Err(Error::Config(format!("event on {} needs exactly one of value/scale", e.path))),
            };
            events.push(Event { step: step_index(e.t, dt), t: e.t, path, action });
        }
        events.sort_by(|a, b| a.t.total_cmp(&b.t));
        // parameters must stay valid after every event
        let (mut pp, mut op) = (p, observer);
        for e in &events {
            e.apply(&mut pp, &mut op);
            pp.validate()?;
            if !(op.r_g > 0.0 && op.l_g > 0.0 && op.lambda > 0.0) {
                return Err(Error::Config(format!("event at t = {} leaves observer parameters invalid", e.t)));
            }
        }
        let m = &cfg.metrics;
        if !(m.rated_power > 0.0 && m.pe_window > 0.0 && m.divergence_factor > 1.0) {
            return Err(Error::Config("metrics: rated_power, pe_window must be positive and divergence_factor > 1".into()));
        }
        let conv = crate::equilibrium::PowerConvention::default();
        let rated_voltage = ReferenceRequest::nominal_voltage(&p);
        Ok(Scenario {
            config: cfg.clone(),
            plant: p,
            controller,
            setpoints,
            events,
            steps: step_index(t_end, dt),
            dt,
            rated_current: conv.rated_current(m.rated_power, rated_voltage),
            rated_voltage,
        })
    }
}

fn resolve_reference(r: &ReferenceStep, p: &SystemParams) -> Result<Setpoint> {
    match (r.power, r.phi_ref, r.i_ref) {
        (Some(power), None, None) => {
            let voltage = r.voltage.unwrap_or_else(|| ReferenceRequest::nominal_voltage(p));
            let refs = solve_references(&ReferenceRequest { power, voltage }, p, p.omega)?;
            let v = refs.equilibrium.y.v;
            Ok(Setpoint { phi_ref: refs.phi_ref, i_ref: refs.i_ref, baseline_phi_ref: v.y.atan2(v.x) })
        }
        (None, Some(phi_ref), Some(i)) if r.voltage.is_none() => {
            let i_ref = Vector2::new(i[0], i[1]);
            let eq = assignable_equilibrium(phi_ref, &i_ref, p, p.omega)?;
            Ok(Setpoint { phi_ref, i_ref, baseline_phi_ref: eq.y.v.y.atan2(eq.y.v.x) })
        }
        _ => Err(Error::Config(format!(
            "reference at t = {} needs either power (+ optional voltage) or both phi_ref and i_ref",
            r.t
        ))),
    }
}

/// Parameters, gains and integrator settings shared by every preset.
pub fn base_config(name: &str) -> ScenarioConfig {
    ScenarioConfig {
        name: name.to_string(),
        detector: DetectorMode::Atan,
        require_convergence: true,
        seed: 0,
        params: SystemParams::weak_grid(),
        observer: ObserverConfig::default(),
        estimator: EstimatorConfig {
            alpha: 1e3,
            beta: 1e3,
            m_cap: 100.0,
            f0: 1.0,
            norm: GainNorm::Frobenius,
            freeze: FreezePolicy::Hysteresis,
            theta0: None,
        },
        pll: PllGains { kp: 200.0, ki: 1e3 },
        current: CurrentConfig { kp: GainSpec::Scalar(250.0), ki: GainSpec::Scalar(50e3), form: CurrentLoopForm::Normalized },
        integrator: IntegratorConfig { dt: 20e-6, t_end: 2.0, mode: ControlMode::Continuous, record_every: 1 },
        references: vec![ReferenceStep::power(0.0, 0.75e9)],
        events: Vec::new(),
        init: InitConfig::default(),
        metrics: MetricsConfig::default(),
    }
}

fn disturbance(name: &str, path: &str, scale: f64) -> ScenarioConfig {
    let mut cfg = base_config(name);
    cfg.events = vec![EventSpec { t: 1.0, path: path.to_string(), value: None, scale: Some(scale) }];
    cfg
}

pub fn preset(name: &str) -> Option<ScenarioConfig> {
    let cfg = match name {
        "nominal" => {
            let mut cfg = base_config(name);
            cfg.references = [(0.0, 0.4e9), (0.4, 0.9e9), (0.8, 0.2e9), (1.2, -0.5e9), (1.6, 0.75e9)]
                .iter()
                .map(|&(t, p)| ReferenceStep::power(t, p))
                .collect();
            cfg
        }
        "voltage_drop" => disturbance(name, "plant.v_g", 0.7),
        "frequency_drop" => disturbance(name, "plant.omega", 49.0 / 50.0),
        "scr_trip" => {
            let mut cfg = disturbance(name, "plant.l_g", 4.0 / 3.0);
            cfg.events.push(EventSpec { t: 1.0, path: "plant.r_g".into(), value: None, scale: Some(4.0 / 3.0) });
            // the stale observer leaves a bounded phase offset with a ripple at
            // the grid frequency; only boundedness is required
            cfg.metrics.delta_band_deg = 30.0;
            cfg
        }
        "baseline_comparison" => {
            let mut cfg = base_config(name);
            cfg.detector = DetectorMode::BaselineAtan;
            cfg.require_convergence = false;
            cfg.integrator.t_end = 1.0;
            cfg.references = vec![ReferenceStep::power(0.0, 0.4e9), ReferenceStep::power(0.5, 0.9e9)];
            cfg
        }
        _ => return None,
    };
    Some(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_resolve() {
        for name in PRESETS {
            let cfg = preset(name).unwrap();
            let sc = cfg.resolve().unwrap();
            assert_eq!(sc.steps, (cfg.integrator.t_end / cfg.integrator.dt).round() as usize);
        }
        assert!(preset("nope").is_none());
    }

    #[test]
    fn toml_round_trip() {
        let cfg = preset("scr_trip").unwrap();
        let text = cfg.to_toml().unwrap();
        let back = ScenarioConfig::from_toml(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = base_config("x");
        cfg.integrator.dt = 0.0;
        assert!(matches!(cfg.resolve(), Err(Error::Config(_))));

        let mut cfg = base_config("x");
        cfg.events.push(EventSpec { t: 0.5, path: "plant.nope".into(), value: Some(1.0), scale: None });
        assert!(matches!(cfg.resolve(), Err(Error::Config(_))));

        let mut cfg = base_config("x");
        cfg.events.push(EventSpec { t: 5.0, path: "plant.v_g".into(), value: Some(1.0), scale: None });
        assert!(cfg.resolve().is_err());

        let mut cfg = base_config("x");
        cfg.pll.kp = -1.0;
        assert!(cfg.resolve().is_err());

        let mut cfg = base_config("x");
        cfg.current.kp = GainSpec::Matrix([[1.0, 0.0], [0.0, -1.0]]);
        assert!(cfg.resolve().is_err());

        let mut cfg = base_config("x");
        cfg.references = vec![ReferenceStep::power(0.0, 9e9)];
        assert!(matches!(cfg.resolve(), Err(Error::Infeasible(_))));

        assert!(ScenarioConfig::from_toml("name = 3").is_err());
    }

    #[test]
    fn gain_spec_forms() {
        #[derive(Deserialize)]
        struct W {
            k: GainSpec,
        }
        let s: W = toml::from_str("k = 250.0").unwrap();
        assert_eq!(s.k.matrix(), Matrix2::identity() * 250.0);
        let m: W = toml::from_str("k = [[1.0, 2.0], [3.0, 4.0]]").unwrap();
        assert_eq!(m.k.matrix(), Matrix2::new(1.0, 2.0, 3.0, 4.0));
    }

    #[test]
    fn event_scaling() {
        let mut p = SystemParams::weak_grid();
        let mut o = ObserverParams { r_g: 1.0, l_g: 1.0, lambda: 100.0 };
        let e = Event { step: 0, t: 0.0, path: ParamPath::parse("plant.v_g").unwrap(), action: EventAction::Scale(0.7) };
        e.apply(&mut p, &mut o);
        assert!((p.v_g - 0.7 * 261e3).abs() < 1e-6);
        let e = Event { step: 0, t: 0.0, path: ParamPath::parse("observer.l_g").unwrap(), action: EventAction::Set(2.0) };
        e.apply(&mut p, &mut o);
        assert_eq!(o.l_g, 2.0);
        assert_eq!(p.l_g, 0.33);
    }
}
