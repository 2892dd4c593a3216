//! Arm-averaged model in Σ-Δ stationary-frame variables.
//!
//! Each arm is a controlled voltage source `m·vC` in series with `Larm`,
//! `Rarm`, backed by an equivalent capacitance `Carm` charged by `m·i`.
//! Rewritten with
//!
//! ```text
//! iΔ = iU - iL      iΣ = (iU + iL)/2      vCΔ = (vCU - vCL)/2      vCΣ = (vCU + vCL)/2
//! mΔ = mU - mL      mΣ = mU + mL
//! ```
//!
//! the per-phase dynamics are
//!
//! ```text
//! Leq  diΔ/dt  = vmΔ - vg - Req iΔ - vn
//! Larm diΣ/dt  = vdc/2 - vmΣ - Rarm iΣ
//! 2Carm dvCΣ/dt = mΔ iΔ/2 + mΣ iΣ
//! 2Carm dvCΔ/dt = mΣ iΔ/2 + mΔ iΣ
//! ```
//!
//! where `vn` is the common-mode voltage of the isolated ac neutral. It takes
//! whatever value keeps `ΣiΔ = 0`, so the grid current has no zero sequence
//! and the model carries 11 independent states.

use crate::frames::Abc;
use crate::params::MmcParams;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AamState {
    /// Grid currents (A).
    pub i_delta: Abc,
    /// Circulating currents (A).
    pub i_sigma: Abc,
    /// Half-sum of upper and lower arm capacitor voltages (V).
    pub v_c_sigma: Abc,
    /// Half-difference of upper and lower arm capacitor voltages (V).
    pub v_c_delta: Abc,
}

pub const AAM_STATE_LEN: usize = 12;

impl AamState {
    /// Flat start: no current, every arm charged to `v_dc`.
    pub fn flat_start(v_dc: f64) -> Self {
        AamState { v_c_sigma: Abc::splat(v_dc), ..Default::default() }
    }

    pub fn to_array(&self) -> [f64; AAM_STATE_LEN] {
        let mut out = [0.0; AAM_STATE_LEN];
        for (k, v) in [self.i_delta, self.i_sigma, self.v_c_sigma, self.v_c_delta].iter().enumerate() {
            out[3 * k..3 * k + 3].copy_from_slice(&v.to_array());
        }
        out
    }

    pub fn from_slice(x: &[f64]) -> Self {
        assert_eq!(x.len(), AAM_STATE_LEN, "AAM state has 12 entries");
        let g = |k: usize| Abc::new(x[3 * k], x[3 * k + 1], x[3 * k + 2]);
        AamState { i_delta: g(0), i_sigma: g(1), v_c_sigma: g(2), v_c_delta: g(3) }
    }

    pub fn is_finite(&self) -> bool {
        self.i_delta.is_finite() && self.i_sigma.is_finite() && self.v_c_sigma.is_finite() && self.v_c_delta.is_finite()
    }

    pub fn from_arms(arms: &ArmQuantities) -> Self {
        AamState {
            i_delta: arms.i_upper - arms.i_lower,
            i_sigma: (arms.i_upper + arms.i_lower).scale(0.5),
            v_c_sigma: (arms.v_c_upper + arms.v_c_lower).scale(0.5),
            v_c_delta: (arms.v_c_upper - arms.v_c_lower).scale(0.5),
        }
    }
}

/// Labels of the flattened state, in [`AamState::to_array`] order.
pub const AAM_STATE_LABELS: [&str; AAM_STATE_LEN] = [
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

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AamInputs {
    pub m_sigma: Abc,
    pub m_delta: Abc,
    /// Grid phase voltages (V).
    pub v_g: Abc,
    pub v_dc: f64,
}

/// An arm whose insertion index left `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InsertionViolation {
    pub phase: usize,
    pub upper: bool,
    pub value: f64,
}

impl AamInputs {
    /// Upper and lower arm insertion indices `((mΣ+mΔ)/2, (mΣ-mΔ)/2)`.
    pub fn arm_indices(&self) -> (Abc, Abc) {
        ((self.m_sigma + self.m_delta).scale(0.5), (self.m_sigma - self.m_delta).scale(0.5))
    }

    /// Reports, without clipping, every arm outside the physical range.
    pub fn insertion_violations(&self) -> Vec<InsertionViolation> {
        let (mu, ml) = self.arm_indices();
        let mut out = Vec::new();
        for (upper, m) in [(true, mu), (false, ml)] {
            for (phase, value) in m.to_array().into_iter().enumerate() {
                if !(0.0..=1.0).contains(&value) {
                    out.push(InsertionViolation { phase, upper, value });
                }
            }
        }
        out
    }
}

/// Returns `(vmΔ, vmΣ)`:
/// `vmΔ = -(mΔ⊙vCΣ + mΣ⊙vCΔ)/2`, `vmΣ = (mΣ⊙vCΣ + mΔ⊙vCΔ)/2`.
pub fn modulated_voltages(m_sigma: Abc, m_delta: Abc, v_c_sigma: Abc, v_c_delta: Abc) -> (Abc, Abc) {
    let vm_delta = -(m_delta * v_c_sigma + m_sigma * v_c_delta).scale(0.5);
    let vm_sigma = (m_sigma * v_c_sigma + m_delta * v_c_delta).scale(0.5);
    (vm_delta, vm_sigma)
}

/// Right-hand side of the Σ-Δ arm-averaged model.
pub fn aam_derivatives(s: &AamState, u: &AamInputs, p: &MmcParams) -> AamState {
    let (vm_delta, vm_sigma) = modulated_voltages(u.m_sigma, u.m_delta, s.v_c_sigma, s.v_c_delta);

    let drive = vm_delta - u.v_g - s.i_delta.scale(p.r_eq_ac());
    // Isolated neutral: the common mode of the driving voltage cannot push
    // current, it shows up as the neutral-point voltage instead.
    let neutral = drive.mean();
    let di_delta = (drive - Abc::splat(neutral)).scale(1.0 / p.l_eq_ac());

    let di_sigma = (Abc::splat(u.v_dc / 2.0) - vm_sigma - s.i_sigma.scale(p.r_arm())).scale(1.0 / p.l_arm());

    let k = 1.0 / (2.0 * p.c_arm());
    let dv_c_sigma = (u.m_delta * s.i_delta.scale(0.5) + u.m_sigma * s.i_sigma).scale(k);
    let dv_c_delta = (u.m_sigma * s.i_delta.scale(0.5) + u.m_delta * s.i_sigma).scale(k);

    AamState { i_delta: di_delta, i_sigma: di_sigma, v_c_sigma: dv_c_sigma, v_c_delta: dv_c_delta }
}

/// Per-arm currents and capacitor voltages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmQuantities {
    pub i_upper: Abc,
    pub i_lower: Abc,
    pub v_c_upper: Abc,
    pub v_c_lower: Abc,
}

pub fn arm_quantities(s: &AamState) -> ArmQuantities {
    let half_delta = s.i_delta.scale(0.5);
    ArmQuantities {
        i_upper: s.i_sigma + half_delta,
        i_lower: s.i_sigma - half_delta,
        v_c_upper: s.v_c_sigma + s.v_c_delta,
        v_c_lower: s.v_c_sigma - s.v_c_delta,
    }
}
