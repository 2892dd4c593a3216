//! Operating points, small-signal models, spectra, and the AAM/SSTI
//! comparison harness.

use nalgebra::{Complex, DMatrix, DVector};
use thiserror::Error;

use crate::control::{CtrlState, Refs, CTRL_STATE_LABELS};
use crate::frames::{to_dqz, Abc, Frame};
use crate::params::{MmcParams, PuKind};
use crate::sim::{loop_scales, Model, Scenario, SstiLoop, TraceLog, LOOP_LEN};
use crate::ssti::{ssti_derivatives, Modulation, SstiInputs, SstiState, SSTI_INPUT_LABELS, SSTI_STATE_LABELS};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("Newton did not converge in {iterations} iterations (best residual {best_residual:e} pu/s)")]
    NonConvergence { iterations: usize, best_residual: f64 },
    #[error("singular Jacobian at Newton iteration {0}")]
    SingularJacobian(usize),
    #[error("references out of range: |p|, |q| must not exceed {limit} pu (got p={p}, q={q})")]
    OutOfRange { p: f64, q: f64, limit: f64 },
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
    #[error("eigenvalue iteration did not converge (matrix norm {norm:e}, dimension {dim})")]
    EigenNonConvergence { norm: f64, dim: usize },
    #[error("missing channel {0}")]
    MissingChannel(String),
    #[error("incompatible time bases: dt {0} vs {1}")]
    IncompatibleTimeBase(f64, f64),
}

/// Largest `|p|` or `|q|` accepted by [`find_equilibrium`].
pub const MAX_REF_PU: f64 = 1.5;
pub const EQUILIBRIUM_TOL: f64 = 1e-10;

// ------------------------------------------------------------ equilibrium

#[derive(Debug, Clone)]
pub struct Equilibrium {
    pub x_star: SstiState,
    pub u_star: Modulation,
    pub ctrl_star: CtrlState,
    /// `‖f(x*)‖∞` of the per-unit closed loop, pu/s.
    pub residual_norm: f64,
    pub iterations: usize,
    pub refs: Refs,
}

impl Equilibrium {
    /// Closed-loop state in SI (plant) and pu·s (integrators).
    pub fn loop_state(&self) -> [f64; LOOP_LEN] {
        let s = self.x_star.to_array();
        let c = self.ctrl_star.to_array();
        std::array::from_fn(|i| if i < 12 { s[i] } else { c[i - 12] })
    }

    pub fn loop_state_pu(&self, p: &MmcParams) -> [f64; LOOP_LEN] {
        let x = self.loop_state();
        let sc = loop_scales(Model::Ssti, p);
        std::array::from_fn(|i| x[i] / sc[i])
    }
}

pub fn loop_labels() -> Vec<String> {
    SSTI_STATE_LABELS.iter().chain(CTRL_STATE_LABELS.iter()).map(|s| s.to_string()).collect()
}

/// Closed-loop SSTI vector field in per-unit coordinates (pu/s).
pub fn ssti_loop_field_pu(p: &MmcParams, refs: Refs) -> impl Fn(&[f64]) -> Vec<f64> + '_ {
    let sc = loop_scales(Model::Ssti, p);
    move |z: &[f64]| {
        let x: [f64; LOOP_LEN] = std::array::from_fn(|i| z[i] * sc[i]);
        let lp = SstiLoop::new(p, refs);
        let d = lp.derivative(0.0, &x);
        (0..LOOP_LEN).map(|i| d[i] / sc[i]).collect()
    }
}

fn fd_step(x: f64) -> f64 {
    1e-6_f64.max(1e-6 * x.abs())
}

/// Central-difference Jacobian.
pub fn jacobian(f: &dyn Fn(&[f64]) -> Vec<f64>, x: &[f64], rows: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(rows, x.len());
    let mut xp = x.to_vec();
    for c in 0..x.len() {
        let h = fd_step(x[c]);
        xp[c] = x[c] + h;
        let fp = f(&xp);
        xp[c] = x[c] - h;
        let fm = f(&xp);
        xp[c] = x[c];
        for r in 0..rows {
            j[(r, c)] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    j
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, e| m.max(e.abs()))
}

/// Newton iteration with backtracking on `‖f‖∞`.
pub fn newton(
    f: &dyn Fn(&[f64]) -> Vec<f64>,
    x0: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, f64, usize), AnalysisError> {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    let mut norm = inf_norm(&fx);
    for it in 0..max_iter {
        if norm < tol {
            return Ok((x, norm, it));
        }
        let j = jacobian(f, &x, n);
        let step = j.lu().solve(&DVector::from_column_slice(&fx)).ok_or(AnalysisError::SingularJacobian(it))?;
        if step.iter().any(|v| !v.is_finite()) {
            return Err(AnalysisError::SingularJacobian(it));
        }
        let mut lambda = 1.0;
        loop {
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, s)| a - lambda * s).collect();
            let ft = f(&trial);
            let nt = inf_norm(&ft);
            if nt.is_finite() && (nt < norm || lambda < 1e-4) {
                x = trial;
                fx = ft;
                norm = nt;
                break;
            }
            lambda *= 0.5;
        }
    }
    if norm < tol {
        Ok((x, norm, max_iter))
    } else {
        Err(AnalysisError::NonConvergence { iterations: max_iter, best_residual: norm })
    }
}

pub fn find_equilibrium(p: &MmcParams, refs: Refs) -> Result<Equilibrium, AnalysisError> {
    find_equilibrium_with(p, refs, 50)
}

pub fn find_equilibrium_with(p: &MmcParams, refs: Refs, max_iter: usize) -> Result<Equilibrium, AnalysisError> {
    if refs.p_ref.abs() > MAX_REF_PU
        || refs.q_ref.abs() > MAX_REF_PU
        || !refs.p_ref.is_finite()
        || !refs.q_ref.is_finite()
    {
        return Err(AnalysisError::OutOfRange { p: refs.p_ref, q: refs.q_ref, limit: MAX_REF_PU });
    }
    let f = ssti_loop_field_pu(p, refs);
    let mut z0 = vec![0.0; LOOP_LEN];
    z0[6] = 1.0;
    let i_ref = crate::control::power_to_current_refs(refs.p_ref, refs.q_ref, [1.0, 0.0]).expect("unit grid voltage");
    z0[10] = i_ref[0];
    z0[11] = i_ref[1];
    let (z, residual_norm, iterations) = newton(&f, &z0, EQUILIBRIUM_TOL, max_iter)?;
    let sc = loop_scales(Model::Ssti, p);
    let x: [f64; LOOP_LEN] = std::array::from_fn(|i| z[i] * sc[i]);
    let lp = SstiLoop::new(p, refs);
    let (u_star, _) = lp.control(0.0, &x);
    Ok(Equilibrium {
        x_star: SstiState::from_slice(&x[..12]),
        u_star,
        ctrl_star: CtrlState::from_slice(&x[12..]),
        residual_norm,
        iterations,
        refs,
    })
}

// ------------------------------------------------------------ linearization

#[derive(Debug, Clone)]
pub struct LinearModel {
    pub a_matrix: DMatrix<f64>,
    pub b_matrix: DMatrix<f64>,
    pub state_labels: Vec<String>,
    pub input_labels: Vec<String>,
    pub x0: Vec<f64>,
    pub u0: Vec<f64>,
}

/// `A = ∂f/∂x`, `B = ∂f/∂u` by central differences with
/// `h = max(1e-6, 1e-6 |·|)`.
pub fn linearize(f: &dyn Fn(&[f64], &[f64]) -> Vec<f64>, x0: &[f64], u0: &[f64]) -> Result<LinearModel, AnalysisError> {
    let n = x0.len();
    let fx = |x: &[f64]| f(x, u0);
    let fu = |u: &[f64]| f(x0, u);
    let a = jacobian(&fx, x0, n);
    let b = jacobian(&fu, u0, n);
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(AnalysisError::NonFinite("linearization"));
    }
    Ok(LinearModel {
        a_matrix: a,
        b_matrix: b,
        state_labels: (0..n).map(|i| format!("x{i}")).collect(),
        input_labels: (0..u0.len()).map(|i| format!("u{i}")).collect(),
        x0: x0.to_vec(),
        u0: u0.to_vec(),
    })
}

/// Per-unit closed-loop model at an equilibrium, inputs `(p_ref, q_ref)`.
pub fn linearize_closed_loop(p: &MmcParams, eq: &Equilibrium) -> Result<LinearModel, AnalysisError> {
    let f = |z: &[f64], u: &[f64]| {
        let mut r = eq.refs;
        r.p_ref = u[0];
        r.q_ref = u[1];
        ssti_loop_field_pu(p, r)(z)
    };
    let mut lm = linearize(&f, &eq.loop_state_pu(p), &[eq.refs.p_ref, eq.refs.q_ref])?;
    lm.state_labels = loop_labels();
    lm.input_labels = vec!["p_ref".into(), "q_ref".into()];
    Ok(lm)
}

/// Per-unit open-loop plant at an equilibrium: the 12 SSTI states driven by
/// the 7 modulation inputs, grid and dc voltages held at nominal.
pub fn linearize_plant(p: &MmcParams, eq: &Equilibrium) -> Result<LinearModel, AnalysisError> {
    let sc = loop_scales(Model::Ssti, p);
    let f = |z: &[f64], u: &[f64]| {
        let x: Vec<f64> = (0..12).map(|i| z[i] * sc[i]).collect();
        let inp = SstiInputs { m: Modulation::from_slice(u), v_g: [p.v_base_ac(), 0.0], v_dc: p.v_dc_nominal() };
        let d = ssti_derivatives(&SstiState::from_slice(&x), &inp, p).to_array();
        (0..12).map(|i| d[i] / sc[i]).collect()
    };
    let x0 = &eq.loop_state_pu(p)[..12];
    let mut lm = linearize(&f, x0, &eq.u_star.to_array())?;
    lm.state_labels = SSTI_STATE_LABELS.iter().map(|s| s.to_string()).collect();
    lm.input_labels = SSTI_INPUT_LABELS.iter().map(|s| s.to_string()).collect();
    Ok(lm)
}

/// Full spectrum sorted by real part, largest first (ties by imaginary part).
pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex<f64>>, AnalysisError> {
    assert!(a.is_square(), "eigenvalues need a square matrix");
    if a.iter().any(|v| !v.is_finite()) {
        return Err(AnalysisError::NonFinite("state matrix"));
    }
    let schur = nalgebra::linalg::Schur::try_new(a.clone(), f64::EPSILON, 10_000)
        .ok_or(AnalysisError::EigenNonConvergence { norm: a.norm(), dim: a.nrows() })?;
    let mut ev: Vec<Complex<f64>> = schur.complex_eigenvalues().iter().copied().collect();
    ev.sort_by(|x, y| y.re.total_cmp(&x.re).then(y.im.total_cmp(&x.im)));
    Ok(ev)
}

// ------------------------------------------------------------ projection

const AAM_REQUIRED: [&str; 12] = [
    "i_delta_a",
    "i_delta_b",
    "i_delta_c",
    "i_sigma_a",
    "i_sigma_b",
    "i_sigma_c",
    "v_c_sigma_a",
    "v_c_sigma_b",
    "v_c_sigma_c",
    "v_c_delta_a",
    "v_c_delta_b",
    "v_c_delta_c",
];

/// Channels shared by a projected AAM trace and an SSTI trace.
pub const COMPARED_CHANNELS: [&str; 13] = [
    "i_delta_d",
    "i_delta_q",
    "v_c_delta_d",
    "v_c_delta_q",
    "v_c_sigma_d",
    "v_c_sigma_q",
    "v_c_sigma_z",
    "i_sigma_d",
    "i_sigma_q",
    "i_sigma_z",
    "v_c_delta_z",
    "p",
    "q",
];

/// Projects an AAM trace onto the SSTI frames: Δ quantities at `+ω`, Σ
/// quantities at `-2ω`. The zero sequence of `vCΔ` stays a stationary
/// signal (`v_c_delta_z`) so it can be overlaid on the SSTI reconstruction.
pub fn project_aam_trace(tr: &TraceLog, p: &MmcParams) -> Result<TraceLog, AnalysisError> {
    let get = |n: &str| tr.get(n).ok_or_else(|| AnalysisError::MissingChannel(n.to_string()));
    let cols: Vec<&[f64]> = AAM_REQUIRED.iter().map(|n| get(n)).collect::<Result<_, _>>()?;
    let passthrough = ["p_ref", "q_ref", "p", "q"];
    let extra: Vec<&[f64]> = passthrough.iter().map(|n| get(n)).collect::<Result<_, _>>()?;

    let mut out = TraceLog::with_capacity(tr.dt, tr.len());
    let ch = [
        ("i_delta_d", PuKind::Current),
        ("i_delta_q", PuKind::Current),
        ("i_delta_z", PuKind::Current),
        ("i_sigma_d", PuKind::Current),
        ("i_sigma_q", PuKind::Current),
        ("i_sigma_z", PuKind::Current),
        ("v_c_sigma_d", PuKind::DcVoltage),
        ("v_c_sigma_q", PuKind::DcVoltage),
        ("v_c_sigma_z", PuKind::DcVoltage),
        ("v_c_delta_d", PuKind::AcVoltage),
        ("v_c_delta_q", PuKind::AcVoltage),
        ("v_c_delta_z", PuKind::AcVoltage),
    ];
    for (name, kind) in ch {
        out.add_channel(name, Some(kind), if kind == PuKind::Current { "A" } else { "V" });
    }
    for n in passthrough {
        out.add_channel(n, None, "pu");
    }
    let w = p.omega();
    let mut row = Vec::with_capacity(16);
    for (k, &t) in tr.t.iter().enumerate() {
        let v = |g: usize| Abc::new(cols[3 * g][k], cols[3 * g + 1][k], cols[3 * g + 2][k]);
        let th1 = Frame::Fundamental.angle(w, t);
        let th2 = Frame::NegativeDouble.angle(w, t);
        row.clear();
        for (g, fr, th) in [
            (0, Frame::Fundamental, th1),
            (1, Frame::NegativeDouble, th2),
            (2, Frame::NegativeDouble, th2),
            (3, Frame::Fundamental, th1),
        ] {
            row.extend_from_slice(&to_dqz(v(g), fr, th).to_array());
        }
        row.extend(extra.iter().map(|c| c[k]));
        out.push(t, &row);
    }
    Ok(out)
}

// ------------------------------------------------------------ windows

/// Last `fraction` of each scenario segment, shortened from the front to a
/// whole number of 6ω periods so that sixth-harmonic ripple averages out.
pub fn steady_state_windows(sc: &Scenario, f_nominal: f64, fraction: f64) -> Vec<(f64, f64)> {
    let period = 1.0 / (6.0 * f_nominal);
    sc.segments()
        .into_iter()
        .map(|(a, b)| {
            let len = (b - a) * fraction;
            let whole = (len / period + 1e-9).floor() * period;
            let len = if whole > 0.0 { whole } else { len };
            (b - len, b)
        })
        .collect()
}

/// Sample index range `[i0, i1)` of a time window.
pub fn window_range(tr: &TraceLog, w: (f64, f64)) -> (usize, usize) {
    let t0 = tr.t[0];
    let i0 = ((w.0 - t0) / tr.dt).round().max(0.0) as usize;
    let i1 = (((w.1 - t0) / tr.dt).round() as usize).min(tr.len() - 1);
    (i0.min(i1), i1)
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn peak_to_peak(v: &[f64]) -> f64 {
    let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
    hi - lo
}

pub fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

// ------------------------------------------------------------ comparison

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelError {
    pub name: String,
    /// RMS of `a - b` over the whole common time base, pu.
    pub rms: f64,
    pub max: f64,
    /// Largest `|mean(a) - mean(b)|` over the steady-state windows, pu.
    pub bias: f64,
    pub window_bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    pub windows: Vec<(f64, f64)>,
    pub channels: Vec<ChannelError>,
}

impl CompareReport {
    pub fn get(&self, name: &str) -> Option<&ChannelError> {
        self.channels.iter().find(|c| c.name == name)
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> csv::Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["channel".to_string(), "rms_pu".into(), "max_pu".into(), "bias_pu".into()];
        for (k, (a, b)) in self.windows.iter().enumerate() {
            header.push(format!("bias_w{k}[{a:.6}-{b:.6}]"));
        }
        wr.write_record(&header)?;
        for c in &self.channels {
            let mut row =
                vec![c.name.clone(), format!("{:.8e}", c.rms), format!("{:.8e}", c.max), format!("{:.8e}", c.bias)];
            row.extend(c.window_bias.iter().map(|b| format!("{b:.8e}")));
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for c in &self.channels {
            s.push_str(&format!("{:<14} rms {:.3e}  max {:.3e}  bias {:.3e}\n", c.name, c.rms, c.max, c.bias));
        }
        s
    }
}

/// Brings two traces to the coarser of their time bases.
pub fn align(a: &TraceLog, b: &TraceLog) -> Result<(TraceLog, TraceLog), AnalysisError> {
    let (fine, coarse, swapped) = if a.dt <= b.dt { (a, b, false) } else { (b, a, true) };
    let ratio = coarse.dt / fine.dt;
    let k = ratio.round();
    if k < 1.0 || (ratio - k).abs() > 1e-6 * k || (a.t[0] - b.t[0]).abs() > 1e-12 {
        return Err(AnalysisError::IncompatibleTimeBase(a.dt, b.dt));
    }
    let fine = fine.decimate(k as usize);
    let n = fine.len().min(coarse.len());
    let cut = |t: &TraceLog| {
        let mut t = t.clone();
        t.t.truncate(n);
        t.channels.iter_mut().for_each(|c| c.data.truncate(n));
        t
    };
    let (f, c) = (cut(&fine), cut(coarse));
    Ok(if swapped { (c, f) } else { (f, c) })
}

pub fn compare_traces(
    a: &TraceLog,
    b: &TraceLog,
    channels: &[&str],
    windows: &[(f64, f64)],
    p: &MmcParams,
) -> Result<CompareReport, AnalysisError> {
    let (a, b) = align(a, b)?;
    let mut out = Vec::new();
    for &name in channels {
        let miss = || AnalysisError::MissingChannel(name.to_string());
        let xa = a.get_pu(name, p).ok_or_else(miss)?;
        let xb = b.get_pu(name, p).ok_or_else(miss)?;
        let diff: Vec<f64> = xa.iter().zip(&xb).map(|(x, y)| x - y).collect();
        let window_bias: Vec<f64> = windows
            .iter()
            .map(|&w| {
                let (i0, i1) = window_range(&a, w);
                (mean(&xa[i0..i1]) - mean(&xb[i0..i1])).abs()
            })
            .collect();
        out.push(ChannelError {
            name: name.to_string(),
            rms: rms(&diff),
            max: inf_norm(&diff),
            bias: window_bias.iter().fold(0.0, |m: f64, v| m.max(*v)),
            window_bias,
        });
    }
    Ok(CompareReport { windows: windows.to_vec(), channels: out })
}

/// Closed-loop SSTI state (SI and pu·s) at sample `k` of an SSTI trace.
pub fn ssti_loop_state_at(tr: &TraceLog, k: usize) -> Result<[f64; LOOP_LEN], AnalysisError> {
    let labels = loop_labels();
    let mut x = [0.0; LOOP_LEN];
    for (i, n) in labels.iter().enumerate() {
        x[i] = tr.get(n).ok_or_else(|| AnalysisError::MissingChannel(n.clone()))?[k];
    }
    Ok(x)
}

/// Largest `|dx/dt|` (pu/s) of each closed-loop SSTI state over the samples
/// of a window (end excluded), evaluated from the logged states and
/// references.
pub fn ssti_max_rates(tr: &TraceLog, p: &MmcParams, w: (f64, f64)) -> Result<[f64; LOOP_LEN], AnalysisError> {
    let sc = loop_scales(Model::Ssti, p);
    let pr = tr.get("p_ref").ok_or_else(|| AnalysisError::MissingChannel("p_ref".into()))?;
    let qr = tr.get("q_ref").ok_or_else(|| AnalysisError::MissingChannel("q_ref".into()))?;
    let (i0, i1) = window_range(tr, w);
    let mut out = [0.0_f64; LOOP_LEN];
    for k in i0..i1 {
        let x = ssti_loop_state_at(tr, k)?;
        let lp = SstiLoop::new(p, Refs::new(pr[k], qr[k]));
        let d = lp.derivative(tr.t[k], &x);
        for i in 0..LOOP_LEN {
            out[i] = out[i].max((d[i] / sc[i]).abs());
        }
    }
    Ok(out)
}
