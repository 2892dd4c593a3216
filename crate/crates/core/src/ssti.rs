//! Twelve-state dqz model whose states settle to constants in steady state.
//!
//! Frames: Δ quantities at `+ω`, Σ quantities at `-2ω` (see [`crate::frames`]),
//! and the zero sequence of the Δ capacitor voltage as a 3ω pair
//! `vCΔz = Zd cos 3ωt + Zq sin 3ωt`. The zero-sequence modulation difference
//! is parameterised the same way. Products that only generate 6ω content in
//! these frames are dropped; everything else is kept.

use crate::frames::{to_abc, Abc, Dqz, Frame};
use crate::params::MmcParams;

pub const SSTI_STATE_LEN: usize = 12;
pub const SSTI_INPUT_LEN: usize = 7;

pub const SSTI_STATE_LABELS: [&str; SSTI_STATE_LEN] = [
    "v_c_delta_d",
    "v_c_delta_q",
    "v_c_delta_zd",
    "v_c_delta_zq",
    "v_c_sigma_d",
    "v_c_sigma_q",
    "v_c_sigma_z",
    "i_sigma_d",
    "i_sigma_q",
    "i_sigma_z",
    "i_delta_d",
    "i_delta_q",
];

pub const SSTI_INPUT_LABELS: [&str; SSTI_INPUT_LEN] =
    ["m_sigma_d", "m_sigma_q", "m_sigma_z", "m_delta_d", "m_delta_q", "m_delta_zd", "m_delta_zq"];

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SstiState {
    /// `(d, q, Zd, Zq)`, volts.
    pub v_c_delta: [f64; 4],
    /// `(d, q, z)`, volts.
    pub v_c_sigma: [f64; 3],
    /// `(d, q, z)`, amps.
    pub i_sigma: [f64; 3],
    /// `(d, q)`, amps.
    pub i_delta: [f64; 2],
}

impl SstiState {
    pub fn flat_start(v_dc: f64) -> Self {
        SstiState { v_c_sigma: [0.0, 0.0, v_dc], ..Default::default() }
    }

    pub fn to_array(&self) -> [f64; SSTI_STATE_LEN] {
        let mut x = [0.0; SSTI_STATE_LEN];
        x[0..4].copy_from_slice(&self.v_c_delta);
        x[4..7].copy_from_slice(&self.v_c_sigma);
        x[7..10].copy_from_slice(&self.i_sigma);
        x[10..12].copy_from_slice(&self.i_delta);
        x
    }

    pub fn from_slice(x: &[f64]) -> Self {
        assert_eq!(x.len(), SSTI_STATE_LEN, "SSTI state has 12 entries");
        SstiState {
            v_c_delta: [x[0], x[1], x[2], x[3]],
            v_c_sigma: [x[4], x[5], x[6]],
            i_sigma: [x[7], x[8], x[9]],
            i_delta: [x[10], x[11]],
        }
    }
}

/// The seven modulation inputs.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Modulation {
    /// `mΣ (d, q, z)`.
    pub m_sigma: [f64; 3],
    /// `mΔ (d, q, Zd, Zq)`.
    pub m_delta: [f64; 4],
}

impl Modulation {
    pub fn to_array(&self) -> [f64; SSTI_INPUT_LEN] {
        let [a, b, c] = self.m_sigma;
        let [d, e, f, g] = self.m_delta;
        [a, b, c, d, e, f, g]
    }

    pub fn from_slice(u: &[f64]) -> Self {
        assert_eq!(u.len(), SSTI_INPUT_LEN, "SSTI modulation has 7 entries");
        Modulation { m_sigma: [u[0], u[1], u[2]], m_delta: [u[3], u[4], u[5], u[6]] }
    }

    /// Stationary-frame `(mΣ, mΔ)` at time `t`.
    pub fn to_abc(&self, omega: f64, t: f64) -> (Abc, Abc) {
        let [sd, sq, sz] = self.m_sigma;
        let [dd, dq, zd, zq] = self.m_delta;
        let m_sigma = to_abc(Dqz::new(Frame::NegativeDouble, sd, sq, sz), Frame::NegativeDouble.angle(omega, t));
        let mz = m_delta_z_waveform([zd, zq], 3.0 * omega * t);
        let m_delta = to_abc(Dqz::new(Frame::Fundamental, dd, dq, mz), Frame::Fundamental.angle(omega, t));
        (m_sigma, m_delta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SstiInputs {
    pub m: Modulation,
    /// Grid voltage `(d, q)`, volts.
    pub v_g: [f64; 2],
    pub v_dc: f64,
}

/// Third-harmonic zero-sequence modulation `mΔZd cos θ3 + mΔZq sin θ3`.
pub fn m_delta_z_waveform(m_dz: [f64; 2], theta3: f64) -> f64 {
    let (s, c) = theta3.sin_cos();
    m_dz[0] * c + m_dz[1] * s
}

/// Zero-sequence Δ capacitor voltage rebuilt from its 3ω pair.
pub fn reconstruct_vcdz(v_cz: [f64; 2], theta3: f64) -> f64 {
    let (s, c) = theta3.sin_cos();
    v_cz[0] * c + v_cz[1] * s
}

pub fn vm_sigma_dqz(m: &Modulation, v_c_sigma: [f64; 3], v_c_delta: [f64; 4]) -> [f64; 3] {
    let [sd, sq, sz] = m.m_sigma;
    let [dd, dq, zd, zq] = m.m_delta;
    let [cd, cq, cz] = v_c_sigma;
    let [ed, eq, ezd, ezq] = v_c_delta;
    [
        0.25 * (2.0 * sz * cd + 2.0 * sd * cz) + 0.25 * ((dd + zd) * ed + (zq - dq) * eq + dd * ezd + dq * ezq),
        0.25 * (2.0 * sz * cq + 2.0 * sq * cz) + 0.25 * ((dq + zq) * ed + (dd - zd) * eq - dq * ezd + dd * ezq),
        0.25 * (sd * cd + sq * cq + 2.0 * sz * cz) + 0.25 * (dd * ed + dq * eq + zd * ezd + zq * ezq),
    ]
}

pub fn vm_delta_dq(m: &Modulation, v_c_sigma: [f64; 3], v_c_delta: [f64; 4]) -> [f64; 2] {
    let [sd, sq, sz] = m.m_sigma;
    let [dd, dq, zd, zq] = m.m_delta;
    let [cd, cq, cz] = v_c_sigma;
    let [ed, eq, ezd, ezq] = v_c_delta;
    [
        0.25 * (-(dd + zd) * cd - (dq + zq) * cq - 2.0 * dd * cz)
            + 0.25 * (-(sd + 2.0 * sz) * ed - sq * eq - sd * ezd - sq * ezq),
        0.25 * ((dq - zq) * cd + (zd - dd) * cq - 2.0 * dq * cz)
            + 0.25 * (-sq * ed + (sd - 2.0 * sz) * eq + sq * ezd - sd * ezq),
    ]
}

pub fn ssti_derivatives(s: &SstiState, u: &SstiInputs, p: &MmcParams) -> SstiState {
    let w = p.omega();
    let [sd, sq, sz] = u.m.m_sigma;
    let [dd, dq, zd, zq] = u.m.m_delta;
    let [id, iq] = s.i_delta;
    let [isd, isq, isz] = s.i_sigma;
    let inv_c = 1.0 / p.c_arm();

    let [ed, eq, ezd, ezq] = s.v_c_delta;
    let dv_delta = [
        -w * eq
            + inv_c
                * (0.125 * ((sd + 2.0 * sz) * id + sq * iq)
                    + 0.25 * ((dd + zd) * isd + (dq + zq) * isq + 2.0 * dd * isz)),
        w * ed
            + inv_c
                * (0.125 * (sq * id + (2.0 * sz - sd) * iq)
                    + 0.25 * ((zq - dq) * isd + (dd - zd) * isq + 2.0 * dq * isz)),
        -3.0 * w * ezq + inv_c * (0.125 * (sd * id - sq * iq) + 0.25 * (dd * isd - dq * isq + 2.0 * zd * isz)),
        3.0 * w * ezd + inv_c * (0.125 * (sq * id + sd * iq) + 0.25 * (dq * isd + dd * isq + 2.0 * zq * isz)),
    ];

    let [cd, cq, _] = s.v_c_sigma;
    let dv_sigma = [
        -2.0 * w * cq + inv_c * (0.25 * (2.0 * sz * isd + 2.0 * sd * isz) + 0.125 * ((dd + zd) * id + (zq - dq) * iq)),
        2.0 * w * cd + inv_c * (0.25 * (2.0 * sz * isq + 2.0 * sq * isz) + 0.125 * ((dq + zq) * id + (dd - zd) * iq)),
        inv_c * (0.25 * (sd * isd + sq * isq + 2.0 * sz * isz) + 0.125 * (dd * id + dq * iq)),
    ];

    let vms = vm_sigma_dqz(&u.m, s.v_c_sigma, s.v_c_delta);
    let r = p.r_arm();
    let l = p.l_arm();
    let di_sigma = [
        (-r * isd - vms[0]) / l - 2.0 * w * isq,
        (-r * isq - vms[1]) / l + 2.0 * w * isd,
        (u.v_dc / 2.0 - r * isz - vms[2]) / l,
    ];

    let vmd = vm_delta_dq(&u.m, s.v_c_sigma, s.v_c_delta);
    let (req, leq) = (p.r_eq_ac(), p.l_eq_ac());
    let di_delta = [(vmd[0] - u.v_g[0] - req * id) / leq - w * iq, (vmd[1] - u.v_g[1] - req * iq) / leq + w * id];

    SstiState { v_c_delta: dv_delta, v_c_sigma: dv_sigma, i_sigma: di_sigma, i_delta: di_delta }
}

/// Stationary-frame signals equivalent to an SSTI state at time `t`.
pub fn ssti_to_aam(s: &SstiState, omega: f64, t: f64) -> crate::aam::AamState {
    let th1 = Frame::Fundamental.angle(omega, t);
    let th2 = Frame::NegativeDouble.angle(omega, t);
    let [ed, eq, ezd, ezq] = s.v_c_delta;
    let [id, iq] = s.i_delta;
    let [cd, cq, cz] = s.v_c_sigma;
    let [isd, isq, isz] = s.i_sigma;
    crate::aam::AamState {
        i_delta: to_abc(Dqz::new(Frame::Fundamental, id, iq, 0.0), th1),
        i_sigma: to_abc(Dqz::new(Frame::NegativeDouble, isd, isq, isz), th2),
        v_c_sigma: to_abc(Dqz::new(Frame::NegativeDouble, cd, cq, cz), th2),
        v_c_delta: to_abc(Dqz::new(Frame::Fundamental, ed, eq, reconstruct_vcdz([ezd, ezq], 3.0 * omega * t)), th1),
    }
}
