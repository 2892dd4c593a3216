//! Fixed-step closed-loop simulation of either model under a reference
//! schedule.
//!
//! Both plants are integrated together with the four PI integrators of the
//! controller as one 16-entry state, so the controller sees every RK4 stage.
//! Reference steps land on the step grid and are held constant within a
//! step.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::Deserialize;
use thiserror::Error;

use crate::aam::{aam_derivatives, AamInputs, AamState, InsertionViolation, AAM_STATE_LABELS};
use crate::control::{control_law, delivered_power, ControlError, CtrlState, Measurements, Refs, CTRL_STATE_LABELS};
use crate::frames::{to_abc, to_dqz, Abc, Dqz, Frame};
use crate::params::{MmcParams, PuKind};
use crate::ssti::{
    reconstruct_vcdz, ssti_derivatives, ssti_to_aam, Modulation, SstiInputs, SstiState, SSTI_INPUT_LABELS,
    SSTI_STATE_LABELS,
};

/// Closed-loop state length: 12 plant states plus 4 integrators.
pub const LOOP_LEN: usize = 16;

pub const DEFAULT_DT_AAM: f64 = 10e-6;
pub const DEFAULT_DT_SSTI: f64 = 50e-6;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("trajectory blew up at t = {t} s")]
    Blowup { t: f64 },
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("scenario file {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error("initial state has {got} entries, expected {expected}")]
    InitialState { got: usize, expected: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Model {
    Aam,
    Ssti,
}

impl Model {
    pub fn as_str(self) -> &'static str {
        match self {
            Model::Aam => "aam",
            Model::Ssti => "ssti",
        }
    }

    pub fn default_dt(self) -> f64 {
        match self {
            Model::Aam => DEFAULT_DT_AAM,
            Model::Ssti => DEFAULT_DT_SSTI,
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Model {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "aam" => Ok(Model::Aam),
            "ssti" => Ok(Model::Ssti),
            other => Err(format!("unknown model '{other}' (expected aam or ssti)")),
        }
    }
}

// ---------------------------------------------------------------- scenario

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
pub enum RefField {
    #[serde(rename = "p_ref")]
    P,
    #[serde(rename = "q_ref")]
    Q,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Event {
    pub time_s: f64,
    pub field: RefField,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialRefs {
    pub p_ref: f64,
    pub q_ref: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub duration_s: f64,
    #[serde(default)]
    pub dt_s: Option<f64>,
    pub initial: InitialRefs,
    #[serde(default, rename = "event")]
    pub events: Vec<Event>,
}

impl Scenario {
    /// Reactive power to -0.1 pu at 50 ms, active power to 0.5 pu at 150 ms.
    pub fn steps() -> Self {
        Scenario {
            duration_s: 0.3,
            dt_s: None,
            initial: InitialRefs { p_ref: 1.0, q_ref: 0.0 },
            events: vec![
                Event { time_s: 0.05, field: RefField::Q, value: -0.1 },
                Event { time_s: 0.15, field: RefField::P, value: 0.5 },
            ],
        }
    }

    /// Constant references for `duration_s`.
    pub fn constant(p_ref: f64, q_ref: f64, duration_s: f64) -> Self {
        Scenario { duration_s, dt_s: None, initial: InitialRefs { p_ref, q_ref }, events: Vec::new() }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, SimError> {
        let sc: Scenario = toml::from_str(text).map_err(|e| SimError::Parse(e.to_string()))?;
        sc.validate(sc.dt_s.unwrap_or(DEFAULT_DT_SSTI))?;
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| SimError::Io { path: path.display().to_string(), source })?;
        Scenario::from_toml_str(&text)
    }

    pub fn validate(&self, dt: f64) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Scenario(m));
        if !(dt > 0.0) || !dt.is_finite() {
            return bad(format!("dt must be positive (got {dt})"));
        }
        if !(self.duration_s > dt) || !self.duration_s.is_finite() {
            return bad(format!("duration {} s must exceed dt {} s", self.duration_s, dt));
        }
        let mut last = 0.0;
        for e in &self.events {
            if !(0.0..=self.duration_s).contains(&e.time_s) {
                return bad(format!("event at {} s outside [0, {}]", e.time_s, self.duration_s));
            }
            if e.time_s < last {
                return bad("events must be sorted by time".into());
            }
            if !e.value.is_finite() {
                return bad(format!("event value {} is not finite", e.value));
            }
            last = e.time_s;
        }
        Ok(())
    }

    /// References in force after applying every event with `time_s <= t`.
    pub fn refs_at(&self, t: f64) -> Refs {
        let mut r = Refs::new(self.initial.p_ref, self.initial.q_ref);
        for e in self.events.iter().filter(|e| e.time_s <= t) {
            match e.field {
                RefField::P => r.p_ref = e.value,
                RefField::Q => r.q_ref = e.value,
            }
        }
        r
    }

    /// Intervals between consecutive distinct event times.
    pub fn segments(&self) -> Vec<(f64, f64)> {
        let mut edges = vec![0.0];
        for e in &self.events {
            if e.time_s > *edges.last().unwrap() && e.time_s < self.duration_s {
                edges.push(e.time_s);
            }
        }
        edges.push(self.duration_s);
        edges.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

// --------------------------------------------------------------- integrator

/// One classical Runge-Kutta step. Fails if any stage or the result is not
/// finite.
pub fn rk4_step<const N: usize>(
    f: impl Fn(f64, &[f64; N]) -> [f64; N],
    x: &[f64; N],
    t: f64,
    dt: f64,
) -> Result<[f64; N], SimError> {
    let check = |v: &[f64; N], at: f64| {
        if v.iter().all(|e| e.is_finite()) {
            Ok(())
        } else {
            Err(SimError::Blowup { t: at })
        }
    };
    let axpy = |k: &[f64; N], h: f64| -> [f64; N] { std::array::from_fn(|i| x[i] + h * k[i]) };
    let k1 = f(t, x);
    check(&k1, t)?;
    let k2 = f(t + 0.5 * dt, &axpy(&k1, 0.5 * dt));
    check(&k2, t)?;
    let k3 = f(t + 0.5 * dt, &axpy(&k2, 0.5 * dt));
    check(&k3, t)?;
    let k4 = f(t + dt, &axpy(&k3, dt));
    check(&k4, t)?;
    let out = std::array::from_fn(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
    check(&out, t + dt)?;
    Ok(out)
}

// --------------------------------------------------------------- trace log

#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub name: String,
    pub unit: String,
    /// Base used for per-unit output; `None` when the data is already
    /// dimensionless or per unit.
    pub base: Option<PuKind>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceLog {
    pub dt: f64,
    pub t: Vec<f64>,
    pub channels: Vec<Channel>,
}

fn unit_of(base: Option<PuKind>, pu_seconds: bool) -> &'static str {
    match base {
        Some(PuKind::AcVoltage) | Some(PuKind::DcVoltage) => "V",
        Some(PuKind::Current) => "A",
        Some(PuKind::Power) => "VA",
        None if pu_seconds => "pu*s",
        None => "pu",
    }
}

impl TraceLog {
    pub fn new(dt: f64) -> Self {
        TraceLog { dt, t: Vec::new(), channels: Vec::new() }
    }

    pub fn add_channel(&mut self, name: &str, base: Option<PuKind>, unit: &str) {
        self.channels.push(Channel {
            name: name.to_string(),
            unit: unit.to_string(),
            base,
            data: Vec::with_capacity(self.t.capacity()),
        });
    }

    pub fn with_capacity(dt: f64, n: usize) -> Self {
        TraceLog { dt, t: Vec::with_capacity(n), channels: Vec::new() }
    }

    /// Appends one sample; `values` follows channel order.
    pub fn push(&mut self, t: f64, values: &[f64]) {
        assert_eq!(values.len(), self.channels.len());
        self.t.push(t);
        for (c, v) in self.channels.iter_mut().zip(values) {
            c.data.push(*v);
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn channel(&self, name: &str) -> Option<&Channel> {
        self.channels.iter().find(|c| c.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.channel(name).map(|c| c.data.as_slice())
    }

    pub fn names(&self) -> Vec<&str> {
        self.channels.iter().map(|c| c.name.as_str()).collect()
    }

    /// Channel data in per unit.
    pub fn get_pu(&self, name: &str, p: &MmcParams) -> Option<Vec<f64>> {
        let c = self.channel(name)?;
        let b = c.base.map(|k| p.base(k)).unwrap_or(1.0);
        Some(c.data.iter().map(|v| v / b).collect())
    }

    /// Copy with every channel converted to per unit.
    pub fn to_pu(&self, p: &MmcParams) -> TraceLog {
        let mut out = self.clone();
        for c in &mut out.channels {
            if let Some(k) = c.base.take() {
                let b = p.base(k);
                c.data.iter_mut().for_each(|v| *v /= b);
                c.unit = "pu".into();
            }
        }
        out
    }

    /// Keeps every `k`-th sample.
    pub fn decimate(&self, k: usize) -> TraceLog {
        assert!(k >= 1);
        let pick = |v: &[f64]| v.iter().step_by(k).copied().collect::<Vec<_>>();
        TraceLog {
            dt: self.dt * k as f64,
            t: pick(&self.t),
            channels: self.channels.iter().map(|c| Channel { data: pick(&c.data), ..c.clone() }).collect(),
        }
    }

    /// Index of the sample closest to `t`.
    pub fn index_of(&self, t: f64) -> usize {
        (((t - self.t[0]) / self.dt).round().max(0.0) as usize).min(self.len() - 1)
    }

    pub fn last_values(&self) -> Vec<f64> {
        self.channels.iter().map(|c| *c.data.last().unwrap()).collect()
    }

    /// CSV with a header row, a units row, then one row per sample,
    /// nine significant digits.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> csv::Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend(self.channels.iter().map(|c| c.name.clone()));
        wr.write_record(&header)?;
        let mut units = vec!["s".to_string()];
        units.extend(self.channels.iter().map(|c| c.unit.clone()));
        wr.write_record(&units)?;
        for (k, t) in self.t.iter().enumerate() {
            let mut row = vec![format!("{t:.8e}")];
            row.extend(self.channels.iter().map(|c| format!("{:.8e}", c.data[k])));
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads a trace written by [`TraceLog::write_csv`]. Channel bases are
    /// inferred from units (`V` on `v_c_sigma*` is the dc base).
    pub fn read_csv<R: std::io::Read>(r: R) -> Result<TraceLog, String> {
        let mut rd = csv::ReaderBuilder::new().has_headers(false).from_reader(r);
        let mut rows = rd.records();
        let header = rows.next().ok_or("empty trace")?.map_err(|e| e.to_string())?;
        let units = rows.next().ok_or("missing units row")?.map_err(|e| e.to_string())?;
        if header.get(0) != Some("t") {
            return Err("first column must be t".into());
        }
        let mut tr = TraceLog::new(0.0);
        for (name, unit) in header.iter().zip(units.iter()).skip(1) {
            tr.add_channel(name, base_for(name, unit), unit);
        }
        for row in rows {
            let row = row.map_err(|e| e.to_string())?;
            let vals: Result<Vec<f64>, _> = row.iter().map(|s| s.parse::<f64>()).collect();
            let vals = vals.map_err(|e| e.to_string())?;
            if vals.len() != tr.channels.len() + 1 {
                return Err("ragged row".into());
            }
            tr.push(vals[0], &vals[1..]);
        }
        if tr.len() >= 2 {
            tr.dt = tr.t[1] - tr.t[0];
        }
        Ok(tr)
    }
}

fn base_for(name: &str, unit: &str) -> Option<PuKind> {
    match unit {
        "V" if name.starts_with("v_c_sigma") => Some(PuKind::DcVoltage),
        "V" => Some(PuKind::AcVoltage),
        "A" => Some(PuKind::Current),
        "VA" => Some(PuKind::Power),
        _ => None,
    }
}

// ---------------------------------------------------------- closed loops

fn vg_pu() -> [f64; 2] {
    [1.0, 0.0]
}

/// Per-unit scale of each closed-loop entry for either model.
pub fn loop_scales(model: Model, p: &MmcParams) -> [f64; LOOP_LEN] {
    let (vac, vdc, i) = (p.v_base_ac(), p.v_base_dc(), p.i_base());
    match model {
        Model::Ssti => [vac, vac, vac, vac, vdc, vdc, vdc, i, i, i, i, i, 1.0, 1.0, 1.0, 1.0],
        Model::Aam => [i, i, i, i, i, i, vdc, vdc, vdc, vac, vac, vac, 1.0, 1.0, 1.0, 1.0],
    }
}

/// SSTI plant with its controller.
#[derive(Debug, Clone)]
pub struct SstiLoop<'a> {
    pub p: &'a MmcParams,
    pub refs: Refs,
    /// Amplitude of a 6ω disturbance added to `mΔ (d, q)`; zero normally.
    pub detune_6w: f64,
}

impl<'a> SstiLoop<'a> {
    pub fn new(p: &'a MmcParams, refs: Refs) -> Self {
        SstiLoop { p, refs, detune_6w: 0.0 }
    }

    fn measurements(&self, s: &SstiState) -> Measurements {
        let ib = self.p.i_base();
        Measurements {
            i_delta: [s.i_delta[0] / ib, s.i_delta[1] / ib],
            i_sigma: [s.i_sigma[0] / ib, s.i_sigma[1] / ib],
            v_g: vg_pu(),
        }
    }

    /// Modulation and integrator derivatives at a closed-loop state.
    pub fn control(&self, t: f64, x: &[f64]) -> (Modulation, CtrlState) {
        let s = SstiState::from_slice(&x[..12]);
        let st = CtrlState::from_slice(&x[12..]);
        let (mut m, de) =
            control_law(&self.measurements(&s), &self.refs, &st, self.p).expect("grid voltage is fixed at 1 pu");
        if self.detune_6w != 0.0 {
            let (sn, cs) = (6.0 * self.p.omega() * t).sin_cos();
            m.m_delta[0] += self.detune_6w * sn;
            m.m_delta[1] += self.detune_6w * cs;
        }
        (m, de)
    }

    pub fn inputs(&self, m: Modulation) -> SstiInputs {
        let vb = self.p.v_base_ac();
        let [vd, vq] = vg_pu();
        SstiInputs { m, v_g: [vd * vb, vq * vb], v_dc: self.p.v_dc_nominal() }
    }

    pub fn derivative(&self, t: f64, x: &[f64; LOOP_LEN]) -> [f64; LOOP_LEN] {
        let (m, de) = self.control(t, x);
        let d = ssti_derivatives(&SstiState::from_slice(&x[..12]), &self.inputs(m), self.p).to_array();
        let e = de.to_array();
        std::array::from_fn(|i| if i < 12 { d[i] } else { e[i - 12] })
    }
}

/// AAM plant with the same controller acting on frame projections.
#[derive(Debug, Clone)]
pub struct AamLoop<'a> {
    pub p: &'a MmcParams,
    pub refs: Refs,
}

impl<'a> AamLoop<'a> {
    pub fn new(p: &'a MmcParams, refs: Refs) -> Self {
        AamLoop { p, refs }
    }

    fn v_g(&self, t: f64) -> Abc {
        let vb = self.p.v_base_ac();
        let [vd, vq] = vg_pu();
        to_abc(Dqz::new(Frame::Fundamental, vd * vb, vq * vb, 0.0), Frame::Fundamental.angle(self.p.omega(), t))
    }

    pub fn measurements(&self, t: f64, s: &AamState) -> Measurements {
        let w = self.p.omega();
        let ib = self.p.i_base();
        let id = to_dqz(s.i_delta, Frame::Fundamental, Frame::Fundamental.angle(w, t));
        let is = to_dqz(s.i_sigma, Frame::NegativeDouble, Frame::NegativeDouble.angle(w, t));
        Measurements { i_delta: [id.d / ib, id.q / ib], i_sigma: [is.d / ib, is.q / ib], v_g: vg_pu() }
    }

    pub fn control(&self, t: f64, x: &[f64]) -> (AamInputs, Modulation, CtrlState) {
        let s = AamState::from_slice(&x[..12]);
        let st = CtrlState::from_slice(&x[12..]);
        let (m, de) =
            control_law(&self.measurements(t, &s), &self.refs, &st, self.p).expect("grid voltage is fixed at 1 pu");
        let (ms, md) = m.to_abc(self.p.omega(), t);
        (AamInputs { m_sigma: ms, m_delta: md, v_g: self.v_g(t), v_dc: self.p.v_dc_nominal() }, m, de)
    }

    pub fn derivative(&self, t: f64, x: &[f64; LOOP_LEN]) -> [f64; LOOP_LEN] {
        let (u, _, de) = self.control(t, x);
        let d = aam_derivatives(&AamState::from_slice(&x[..12]), &u, self.p).to_array();
        let e = de.to_array();
        std::array::from_fn(|i| if i < 12 { d[i] } else { e[i - 12] })
    }
}

/// Closed-loop AAM state equivalent to a closed-loop SSTI state at time `t`.
pub fn aam_state_from_ssti(x: &[f64; LOOP_LEN], p: &MmcParams, t: f64) -> [f64; LOOP_LEN] {
    let a = ssti_to_aam(&SstiState::from_slice(&x[..12]), p.omega(), t).to_array();
    std::array::from_fn(|i| if i < 12 { a[i] } else { x[i] })
}

pub fn flat_start(model: Model, p: &MmcParams) -> [f64; LOOP_LEN] {
    let mut x = [0.0; LOOP_LEN];
    match model {
        Model::Ssti => x[..12].copy_from_slice(&SstiState::flat_start(p.v_dc_nominal()).to_array()),
        Model::Aam => x[..12].copy_from_slice(&AamState::flat_start(p.v_dc_nominal()).to_array()),
    }
    x
}

// ------------------------------------------------------------------ runner

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Step override; otherwise the scenario step, then the model default.
    pub dt: Option<f64>,
    /// Closed-loop initial state (SI plant states, then integrators).
    pub initial: Option<[f64; LOOP_LEN]>,
    pub detune_6w: f64,
}

/// Sample time and arm at which an insertion index left `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeEvent {
    pub t: f64,
    pub violation: InsertionViolation,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub model: Model,
    pub trace: TraceLog,
    /// First recorded range events (at most [`MAX_RANGE_EVENTS`]).
    pub range_events: Vec<RangeEvent>,
    pub range_event_count: usize,
    /// Closed-loop state at the end of the run.
    pub final_state: [f64; LOOP_LEN],
}

impl RunResult {
    pub fn range_flagged(&self) -> bool {
        self.range_event_count > 0
    }
}

pub const MAX_RANGE_EVENTS: usize = 64;

fn ssti_channels(tr: &mut TraceLog) {
    for (k, name) in SSTI_STATE_LABELS.iter().enumerate() {
        let base = match k {
            0..=3 => PuKind::AcVoltage,
            4..=6 => PuKind::DcVoltage,
            _ => PuKind::Current,
        };
        tr.add_channel(name, Some(base), unit_of(Some(base), false));
    }
    tr.add_channel("v_c_delta_z", Some(PuKind::AcVoltage), "V");
    common_channels(tr);
    for name in SSTI_INPUT_LABELS {
        tr.add_channel(name, None, "pu");
    }
}

fn aam_channels(tr: &mut TraceLog) {
    for (k, name) in AAM_STATE_LABELS.iter().enumerate() {
        let base = match k / 3 {
            0 | 1 => PuKind::Current,
            2 => PuKind::DcVoltage,
            _ => PuKind::AcVoltage,
        };
        tr.add_channel(name, Some(base), unit_of(Some(base), false));
    }
    common_channels(tr);
    for name in ["m_sigma_a", "m_sigma_b", "m_sigma_c", "m_delta_a", "m_delta_b", "m_delta_c"] {
        tr.add_channel(name, None, "pu");
    }
}

fn common_channels(tr: &mut TraceLog) {
    for name in CTRL_STATE_LABELS {
        tr.add_channel(name, None, unit_of(None, true));
    }
    for name in ["p_ref", "q_ref", "p", "q"] {
        tr.add_channel(name, None, "pu");
    }
}

pub fn run_scenario(model: Model, sc: &Scenario, p: &MmcParams) -> Result<RunResult, SimError> {
    run_scenario_with(model, sc, p, &RunOptions::default())
}

pub fn run_scenario_with(model: Model, sc: &Scenario, p: &MmcParams, opts: &RunOptions) -> Result<RunResult, SimError> {
    let dt = opts.dt.or(sc.dt_s).unwrap_or(model.default_dt());
    sc.validate(dt)?;
    let n = (sc.duration_s / dt).round() as usize;
    let w = p.omega();
    let ib = p.i_base();

    let mut x = opts.initial.unwrap_or_else(|| flat_start(model, p));
    let mut tr = TraceLog::with_capacity(dt, n + 1);
    match model {
        Model::Ssti => ssti_channels(&mut tr),
        Model::Aam => aam_channels(&mut tr),
    }
    let mut range_events = Vec::new();
    let mut range_event_count = 0usize;
    let mut row = Vec::with_capacity(tr.channels.len());

    // Step index at which each event takes effect.
    let event_steps: Vec<usize> = sc.events.iter().map(|e| (e.time_s / dt).round() as usize).collect();
    let refs_for_step = |k: usize| {
        let mut r = Refs::new(sc.initial.p_ref, sc.initial.q_ref);
        for (e, &ks) in sc.events.iter().zip(&event_steps) {
            if ks <= k {
                match e.field {
                    RefField::P => r.p_ref = e.value,
                    RefField::Q => r.q_ref = e.value,
                }
            }
        }
        r
    };

    for k in 0..=n {
        let t = k as f64 * dt;
        let refs = refs_for_step(k);
        row.clear();
        row.extend_from_slice(&x[..12]);
        let violations;
        let (pw, qw);
        match model {
            Model::Ssti => {
                let lp = SstiLoop { p, refs, detune_6w: opts.detune_6w };
                let (m, _) = lp.control(t, &x);
                row.push(reconstruct_vcdz([x[2], x[3]], 3.0 * w * t));
                (pw, qw) = delivered_power(vg_pu(), [x[10] / ib, x[11] / ib]);
                row.extend_from_slice(&x[12..]);
                row.extend_from_slice(&[refs.p_ref, refs.q_ref, pw, qw]);
                row.extend_from_slice(&m.to_array());
                let (ms, md) = m.to_abc(w, t);
                violations = AamInputs { m_sigma: ms, m_delta: md, v_g: Abc::zero(), v_dc: 0.0 }.insertion_violations();
            }
            Model::Aam => {
                let lp = AamLoop::new(p, refs);
                let (u, _, _) = lp.control(t, &x);
                let meas = lp.measurements(t, &AamState::from_slice(&x[..12]));
                (pw, qw) = delivered_power(vg_pu(), meas.i_delta);
                row.extend_from_slice(&x[12..]);
                row.extend_from_slice(&[refs.p_ref, refs.q_ref, pw, qw]);
                row.extend_from_slice(&u.m_sigma.to_array());
                row.extend_from_slice(&u.m_delta.to_array());
                violations = u.insertion_violations();
            }
        }
        tr.push(t, &row);
        range_event_count += violations.len();
        for v in violations {
            if range_events.len() < MAX_RANGE_EVENTS {
                range_events.push(RangeEvent { t, violation: v });
            }
        }
        if k == n {
            break;
        }
        x = match model {
            Model::Ssti => {
                let lp = SstiLoop { p, refs, detune_6w: opts.detune_6w };
                rk4_step(|t, x| lp.derivative(t, x), &x, t, dt)?
            }
            Model::Aam => {
                let lp = AamLoop::new(p, refs);
                rk4_step(|t, x| lp.derivative(t, x), &x, t, dt)?
            }
        };
    }

    Ok(RunResult { model, trace: tr, range_events, range_event_count, final_state: x })
}
