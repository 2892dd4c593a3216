//! Grid-current vector control in the `+ω` frame and circulating current
//! suppression (CCSC) in the `-2ω` frame, both PI with cross-coupling
//! compensation, plus the mapping from voltage references to insertion
//! indices.
//!
//! Everything here works in per unit: voltages on the ac peak-phase base,
//! currents on the ac current base. The PI law is
//! `kp (e + ξ/τ)` with `dξ/dt = e`.

use thiserror::Error;

use crate::frames::Abc;
use crate::params::MmcParams;
use crate::ssti::Modulation;

/// Smallest grid-voltage magnitude (pu) for which power references are
/// converted to current references.
pub const MIN_GRID_VOLTAGE_PU: f64 = 0.1;

#[derive(Debug, Error, PartialEq)]
pub enum ControlError {
    #[error("grid voltage collapsed: |vg| = {0} pu")]
    GridVoltageCollapse(f64),
    #[error("dc voltage must be positive (got {0})")]
    NonPositiveDcVoltage(f64),
}

/// PI integrator states, in pu·s.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CtrlState {
    pub int_i_delta: [f64; 2],
    pub int_i_sigma: [f64; 2],
}

impl CtrlState {
    pub fn reset(&mut self) {
        *self = CtrlState::default();
    }

    pub fn is_finite(&self) -> bool {
        self.int_i_delta.iter().chain(&self.int_i_sigma).all(|v| v.is_finite())
    }

    pub fn to_array(&self) -> [f64; 4] {
        let [a, b] = self.int_i_delta;
        let [c, d] = self.int_i_sigma;
        [a, b, c, d]
    }

    pub fn from_slice(x: &[f64]) -> Self {
        CtrlState { int_i_delta: [x[0], x[1]], int_i_sigma: [x[2], x[3]] }
    }
}

pub const CTRL_STATE_LABELS: [&str; 4] = ["int_i_delta_d", "int_i_delta_q", "int_i_sigma_d", "int_i_sigma_q"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Refs {
    pub p_ref: f64,
    pub q_ref: f64,
    pub i_sigma_ref: [f64; 2],
}

impl Refs {
    pub fn new(p_ref: f64, q_ref: f64) -> Self {
        Refs { p_ref, q_ref, i_sigma_ref: [0.0; 2] }
    }
}

/// Current references delivering `(p, q)` into a grid at `v_g` (all pu),
/// with `p = vd id + vq iq` and `q = vq id - vd iq`.
pub fn power_to_current_refs(p_ref: f64, q_ref: f64, v_g: [f64; 2]) -> Result<[f64; 2], ControlError> {
    let [vd, vq] = v_g;
    let m2 = vd * vd + vq * vq;
    if !(m2.sqrt() > MIN_GRID_VOLTAGE_PU) {
        return Err(ControlError::GridVoltageCollapse(m2.sqrt()));
    }
    Ok([(p_ref * vd + q_ref * vq) / m2, (p_ref * vq - q_ref * vd) / m2])
}

/// Active and reactive power for grid voltage and current in pu.
pub fn delivered_power(v_g: [f64; 2], i: [f64; 2]) -> (f64, f64) {
    (v_g[0] * i[0] + v_g[1] * i[1], v_g[1] * i[0] - v_g[0] * i[1])
}

/// Grid current control law. Returns the `vmΔ` reference and the
/// integrator derivative (the current error).
pub fn grid_current_law(
    i: [f64; 2],
    i_ref: [f64; 2],
    v_g: [f64; 2],
    int: [f64; 2],
    p: &MmcParams,
) -> ([f64; 2], [f64; 2]) {
    let x = p.omega() * p.l_eq_ac() / p.z_base();
    let (kp, tau) = (p.kp_delta(), p.tau_i_delta());
    let e = [i_ref[0] - i[0], i_ref[1] - i[1]];
    ([v_g[0] + x * i[1] + kp * (e[0] + int[0] / tau), v_g[1] - x * i[0] + kp * (e[1] + int[1] / tau)], e)
}

/// CCSC law. Returns the `vmΣ (d, q)` reference and the integrator
/// derivative.
pub fn ccsc_law(i: [f64; 2], i_ref: [f64; 2], int: [f64; 2], p: &MmcParams) -> ([f64; 2], [f64; 2]) {
    let x2 = 2.0 * p.omega() * p.l_arm() / p.z_base();
    let (kp, tau) = (p.kp_sigma(), p.tau_i_sigma());
    let e = [i_ref[0] - i[0], i_ref[1] - i[1]];
    ([-kp * (e[0] + int[0] / tau) - x2 * i[1], -kp * (e[1] + int[1] / tau) + x2 * i[0]], e)
}

/// Grid current PI advanced by one explicit-Euler step of `dt`.
pub fn grid_current_pi(
    i: [f64; 2],
    i_ref: [f64; 2],
    v_g: [f64; 2],
    st: CtrlState,
    dt: f64,
    p: &MmcParams,
) -> ([f64; 2], CtrlState) {
    let (v, e) = grid_current_law(i, i_ref, v_g, st.int_i_delta, p);
    let mut next = st;
    next.int_i_delta = [st.int_i_delta[0] + dt * e[0], st.int_i_delta[1] + dt * e[1]];
    (v, next)
}

/// CCSC PI advanced by one explicit-Euler step of `dt`.
pub fn ccsc_pi(i: [f64; 2], i_ref: [f64; 2], st: CtrlState, dt: f64, p: &MmcParams) -> ([f64; 2], CtrlState) {
    let (v, e) = ccsc_law(i, i_ref, st.int_i_sigma, p);
    let mut next = st;
    next.int_i_sigma = [st.int_i_sigma[0] + dt * e[0], st.int_i_sigma[1] + dt * e[1]];
    (v, next)
}

/// Direct modulation from voltage references in volts:
/// `mΔdq = -2 vmΔ*/vdc`, `mΣdq = 2 vmΣ*/vdc`, `mΣz = 1`, no third harmonic.
pub fn synthesize_modulation(vm_delta: [f64; 2], vm_sigma: [f64; 2], v_dc: f64) -> Result<Modulation, ControlError> {
    if !(v_dc > 0.0) {
        return Err(ControlError::NonPositiveDcVoltage(v_dc));
    }
    let k = 2.0 / v_dc;
    Ok(Modulation {
        m_sigma: [k * vm_sigma[0], k * vm_sigma[1], 1.0],
        m_delta: [-k * vm_delta[0], -k * vm_delta[1], 0.0, 0.0],
    })
}

/// Same as [`synthesize_modulation`] with references in pu of the ac voltage base.
pub fn synthesize_modulation_pu(
    vm_delta: [f64; 2],
    vm_sigma: [f64; 2],
    p: &MmcParams,
) -> Result<Modulation, ControlError> {
    let vb = p.v_base_ac();
    synthesize_modulation([vm_delta[0] * vb, vm_delta[1] * vb], [vm_sigma[0] * vb, vm_sigma[1] * vb], p.v_dc_nominal())
}

pub fn modulation_to_abc(u: &Modulation, t: f64, p: &MmcParams) -> (Abc, Abc) {
    u.to_abc(p.omega(), t)
}

/// Measured currents (pu) the controller acts on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurements {
    pub i_delta: [f64; 2],
    pub i_sigma: [f64; 2],
    pub v_g: [f64; 2],
}

/// Full controller evaluation: modulation and integrator derivatives.
pub fn control_law(
    meas: &Measurements,
    refs: &Refs,
    st: &CtrlState,
    p: &MmcParams,
) -> Result<(Modulation, CtrlState), ControlError> {
    let i_ref = power_to_current_refs(refs.p_ref, refs.q_ref, meas.v_g)?;
    let (vmd, ed) = grid_current_law(meas.i_delta, i_ref, meas.v_g, st.int_i_delta, p);
    let (vms, es) = ccsc_law(meas.i_sigma, refs.i_sigma_ref, st.int_i_sigma, p);
    let m = synthesize_modulation_pu(vmd, vms, p)?;
    Ok((m, CtrlState { int_i_delta: ed, int_i_sigma: es }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::{to_dqz, Frame};
    use proptest::prelude::*;

    #[test]
    fn power_reference_examples() {
        assert_eq!(power_to_current_refs(1.0, 0.0, [1.0, 0.0]).unwrap(), [1.0, 0.0]);
        assert_eq!(power_to_current_refs(0.0, -0.1, [1.0, 0.0]).unwrap(), [0.0, 0.1]);
        assert!(matches!(power_to_current_refs(1.0, 0.0, [0.05, 0.0]), Err(ControlError::GridVoltageCollapse(_))));
    }

    #[test]
    fn feedforward_only_at_zero_error() {
        let p = MmcParams::rated();
        let (v, st) = grid_current_pi([0.0; 2], [0.0; 2], [1.0, 0.0], CtrlState::default(), 1e-5, &p);
        assert_eq!(v, [1.0, 0.0]);
        assert_eq!(st, CtrlState::default());
        let (v, st) = ccsc_pi([0.0; 2], [0.0; 2], CtrlState::default(), 1e-5, &p);
        assert_eq!(v, [0.0; 2]);
        assert_eq!(st, CtrlState::default());
    }

    #[test]
    fn integral_doubles_proportional_after_tau() {
        let p = MmcParams::rated();
        let e = 0.1;
        let tau = p.tau_i_delta();
        let n = 1000;
        let dt = tau / n as f64;
        let mut st = CtrlState::default();
        let mut v = [0.0; 2];
        // Zero feedforward and no cross-axis current isolate the PI.
        for _ in 0..=n {
            let (out, next) = grid_current_pi([0.0; 2], [e, 0.0], [0.0; 2], st, dt, &p);
            v = out;
            st = next;
        }
        assert!((v[0] - 2.0 * p.kp_delta() * e).abs() < 1e-12);
    }

    #[test]
    fn ccsc_integrator_ramp() {
        let p = MmcParams::rated();
        let e = 0.05;
        let dt = 1e-5;
        let n = 250;
        let mut st = CtrlState::default();
        for _ in 0..n {
            st = ccsc_pi([-e, 0.0], [0.0; 2], st, dt, &p).1;
        }
        let (v, _) = ccsc_law([0.0; 2], [0.0; 2], st.int_i_sigma, &p);
        let expected = -p.kp_sigma() * e * (n as f64 * dt) / p.tau_i_sigma();
        assert!((v[0] - expected).abs() < 1e-12 * expected.abs().max(1.0));
    }

    #[test]
    fn integrators_stay_zero_without_error() {
        let p = MmcParams::rated();
        let mut st = CtrlState::default();
        for _ in 0..100 {
            st = grid_current_pi([0.3, -0.2], [0.3, -0.2], [1.0, 0.0], st, 1e-5, &p).1;
            st = ccsc_pi([0.0; 2], [0.0; 2], st, 1e-5, &p).1;
        }
        assert_eq!(st.to_array(), [0.0; 4]);
    }

    #[test]
    fn synthesis_examples() {
        let v = 640e3;
        let m = synthesize_modulation([v / 2.0, 0.0], [0.0; 2], v).unwrap();
        assert_eq!(m.m_delta[0], -1.0);
        let m = synthesize_modulation([0.0; 2], [0.0; 2], v).unwrap();
        assert_eq!(m.m_sigma, [0.0, 0.0, 1.0]);
        assert_eq!(m.m_delta, [0.0; 4]);
        assert_eq!(synthesize_modulation([0.0; 2], [0.0; 2], 0.0), Err(ControlError::NonPositiveDcVoltage(0.0)));
    }

    #[test]
    fn modulation_abc_examples() {
        let p = MmcParams::rated();
        let m = Modulation { m_sigma: [0.0, 0.0, 1.0], m_delta: [0.0; 4] };
        for t in [0.0, 1.234e-3, 0.017] {
            let (ms, _) = modulation_to_abc(&m, t, &p);
            assert!((ms - Abc::splat(1.0)).to_array().iter().all(|e| e.abs() < 1e-15));
        }
        let m = Modulation { m_sigma: [0.0; 3], m_delta: [0.85, 0.0, 0.0, 0.0] };
        assert_eq!(modulation_to_abc(&m, 0.0, &p).1.a, 0.85);
    }

    proptest! {
        #[test]
        fn power_reference_round_trip(pr in -1.5..1.5f64, qr in -1.5..1.5f64,
                                      vd in 0.2..1.2f64, vq in -0.5..0.5f64) {
            let i = power_to_current_refs(pr, qr, [vd, vq]).unwrap();
            let (p2, q2) = delivered_power([vd, vq], i);
            prop_assert!((p2 - pr).abs() < 1e-12 && (q2 - qr).abs() < 1e-12);
        }

        #[test]
        fn synthesis_is_scale_consistent(a in -2e5..2e5f64, b in -2e5..2e5f64, c in -1e4..1e4f64,
                                         d in -1e4..1e4f64, v in 1e5..1e6f64) {
            let m1 = synthesize_modulation([a, b], [c, d], v).unwrap();
            let m2 = synthesize_modulation([2.0 * a, 2.0 * b], [2.0 * c, 2.0 * d], 2.0 * v).unwrap();
            prop_assert_eq!(m1, m2);
        }

        #[test]
        fn modulation_abc_round_trip(sd in -0.2..0.2f64, sq in -0.2..0.2f64, dd in -1.0..1.0f64,
                                     dq in -1.0..1.0f64, t in 0.0..0.2f64) {
            let p = MmcParams::rated();
            let w = p.omega();
            let m = Modulation { m_sigma: [sd, sq, 1.0], m_delta: [dd, dq, 0.0, 0.0] };
            let (ms, md) = modulation_to_abc(&m, t, &p);
            let s = to_dqz(ms, Frame::NegativeDouble, Frame::NegativeDouble.angle(w, t));
            let d = to_dqz(md, Frame::Fundamental, Frame::Fundamental.angle(w, t));
            let back = Modulation { m_sigma: [s.d, s.q, s.z], m_delta: [d.d, d.q, 0.0, 0.0] };
            let (ms2, md2) = modulation_to_abc(&back, t, &p);
            prop_assert!((ms2 - ms).to_array().iter().chain((md2 - md).to_array().iter()).all(|e| e.abs() < 1e-13));
        }
    }
}
