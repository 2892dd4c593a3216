//! Physical, control and per-unit parameters of a single MMC terminal.
//!
//! Parameters are read from a TOML key/value file. Values are kept in the
//! units of the file (kV, mH, uF, ...) so that writing a parameter set back
//! out reproduces every field bit for bit; SI accessors convert on demand.
//!
//! Per-unit bases follow the amplitude-invariant dq convention: the ac
//! voltage base is the peak phase voltage, the current base is chosen so
//! that `p = v_d i_d + v_q i_q` holds in per unit.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ParamsError {
    #[error("failed to parse parameter file: {0}")]
    Parse(String),
    #[error("missing required key `{0}`")]
    MissingKey(&'static str),
    #[error("{name} must be positive (got {value})")]
    NotPositive { name: &'static str, value: f64 },
    #[error("{name} must be non-negative (got {value})")]
    Negative { name: &'static str, value: f64 },
    #[error("{name} must be finite")]
    NotFinite { name: &'static str },
    #[error("unknown per-unit kind `{0}` (expected ac-voltage, dc-voltage, current or power)")]
    UnknownKind(String),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// On-disk representation. Key names are part of the file format.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsConfig {
    /// Rated ac voltage, line-to-line RMS.
    pub u1n_kv: f64,
    pub fn_hz: f64,
    pub n_sm: u32,
    /// Arm equivalent capacitance (sub-module capacitance divided by N).
    pub c_arm_uf: f64,
    pub r_arm_ohm: f64,
    pub l_arm_mh: f64,
    pub r_f_ohm: f64,
    pub l_f_mh: f64,
    pub v_dc_kv: f64,
    pub kp_sigma: f64,
    pub tau_i_sigma_s: f64,
    pub kp_delta: f64,
    pub tau_i_delta_s: f64,
    pub s_base_mva: f64,
    /// Overrides the ac voltage base (peak phase voltage of `u1n_kv` by default).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_base_ac_kv: Option<f64>,
    /// Overrides the dc voltage base (`v_dc_kv` by default).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_base_dc_kv: Option<f64>,
}

const REQUIRED_KEYS: [&str; 14] = [
    "u1n_kv",
    "fn_hz",
    "n_sm",
    "c_arm_uf",
    "r_arm_ohm",
    "l_arm_mh",
    "r_f_ohm",
    "l_f_mh",
    "v_dc_kv",
    "kp_sigma",
    "tau_i_sigma_s",
    "kp_delta",
    "tau_i_delta_s",
    "s_base_mva",
];

/// Validated parameter set. Immutable once built.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmcParams {
    cfg: ParamsConfig,
}

/// Named parameter presets shipped with the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// 1000 MW, 640 kV terminal; PI time constants in seconds.
    Rated,
    /// Same terminal with the PI time constants scaled by 1e-3.
    RatedMilliseconds,
    /// Rated set with every resistance set to zero.
    Lossless,
}

impl FromStr for Preset {
    type Err = ParamsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rated" => Ok(Preset::Rated),
            "rated-ms" => Ok(Preset::RatedMilliseconds),
            "lossless" => Ok(Preset::Lossless),
            other => Err(ParamsError::UnknownPreset(other.to_string())),
        }
    }
}

impl ParamsConfig {
    pub fn preset(preset: Preset) -> Self {
        let base = ParamsConfig {
            u1n_kv: 320.0,
            fn_hz: 50.0,
            n_sm: 400,
            c_arm_uf: 32.55,
            r_arm_ohm: 1.024,
            l_arm_mh: 48.9,
            r_f_ohm: 0.512,
            l_f_mh: 58.7,
            v_dc_kv: 640.0,
            kp_sigma: 0.1253,
            tau_i_sigma_s: 0.0149,
            kp_delta: 0.8523,
            tau_i_delta_s: 0.0019,
            s_base_mva: 1000.0,
            v_base_ac_kv: None,
            v_base_dc_kv: None,
        };
        match preset {
            Preset::Rated => base,
            Preset::RatedMilliseconds => ParamsConfig { tau_i_sigma_s: 0.0149e-3, tau_i_delta_s: 0.0019e-3, ..base },
            Preset::Lossless => ParamsConfig { r_arm_ohm: 0.0, r_f_ohm: 0.0, ..base },
        }
    }
}

fn positive(name: &'static str, value: f64) -> Result<(), ParamsError> {
    if !value.is_finite() {
        return Err(ParamsError::NotFinite { name });
    }
    if value <= 0.0 {
        return Err(ParamsError::NotPositive { name, value });
    }
    Ok(())
}

fn non_negative(name: &'static str, value: f64) -> Result<(), ParamsError> {
    if !value.is_finite() {
        return Err(ParamsError::NotFinite { name });
    }
    if value < 0.0 {
        return Err(ParamsError::Negative { name, value });
    }
    Ok(())
}

impl MmcParams {
    pub fn new(cfg: ParamsConfig) -> Result<Self, ParamsError> {
        positive("u1n", cfg.u1n_kv)?;
        positive("f_nominal", cfg.fn_hz)?;
        if cfg.n_sm == 0 {
            return Err(ParamsError::NotPositive { name: "n_submodules", value: 0.0 });
        }
        positive("c_arm", cfg.c_arm_uf)?;
        // Resistances may be zero for the lossless study variant.
        non_negative("r_arm", cfg.r_arm_ohm)?;
        positive("l_arm", cfg.l_arm_mh)?;
        non_negative("r_f", cfg.r_f_ohm)?;
        positive("l_f", cfg.l_f_mh)?;
        positive("v_dc_nominal", cfg.v_dc_kv)?;
        positive("kp_sigma", cfg.kp_sigma)?;
        positive("tau_i_sigma", cfg.tau_i_sigma_s)?;
        positive("kp_delta", cfg.kp_delta)?;
        positive("tau_i_delta", cfg.tau_i_delta_s)?;
        positive("s_base", cfg.s_base_mva)?;
        if let Some(v) = cfg.v_base_ac_kv {
            positive("v_base_ac", v)?;
        }
        if let Some(v) = cfg.v_base_dc_kv {
            positive("v_base_dc", v)?;
        }
        Ok(MmcParams { cfg })
    }

    pub fn preset(preset: Preset) -> Self {
        MmcParams::new(ParamsConfig::preset(preset)).expect("shipped presets are valid")
    }

    /// Rated 1000 MW terminal, time constants in seconds.
    pub fn rated() -> Self {
        MmcParams::preset(Preset::Rated)
    }

    pub fn config(&self) -> &ParamsConfig {
        &self.cfg
    }

    /// Serializes to the TOML configuration format.
    pub fn to_config_text(&self) -> String {
        toml::to_string(&self.cfg).expect("plain struct serializes")
    }

    pub fn u1n_ac_voltage(&self) -> f64 {
        self.cfg.u1n_kv * 1e3
    }
    pub fn f_nominal(&self) -> f64 {
        self.cfg.fn_hz
    }
    /// Grid angular frequency in rad/s.
    pub fn omega(&self) -> f64 {
        2.0 * PI * self.cfg.fn_hz
    }
    pub fn n_submodules(&self) -> u32 {
        self.cfg.n_sm
    }
    pub fn c_arm(&self) -> f64 {
        self.cfg.c_arm_uf * 1e-6
    }
    pub fn r_arm(&self) -> f64 {
        self.cfg.r_arm_ohm
    }
    pub fn l_arm(&self) -> f64 {
        self.cfg.l_arm_mh * 1e-3
    }
    pub fn r_f(&self) -> f64 {
        self.cfg.r_f_ohm
    }
    pub fn l_f(&self) -> f64 {
        self.cfg.l_f_mh * 1e-3
    }
    pub fn v_dc_nominal(&self) -> f64 {
        self.cfg.v_dc_kv * 1e3
    }
    /// Equivalent ac-side resistance `Rf + Rarm/2`.
    pub fn r_eq_ac(&self) -> f64 {
        self.r_f() + self.r_arm() / 2.0
    }
    /// Equivalent ac-side inductance `Lf + Larm/2`.
    pub fn l_eq_ac(&self) -> f64 {
        self.l_f() + self.l_arm() / 2.0
    }
    pub fn kp_sigma(&self) -> f64 {
        self.cfg.kp_sigma
    }
    pub fn tau_i_sigma(&self) -> f64 {
        self.cfg.tau_i_sigma_s
    }
    pub fn kp_delta(&self) -> f64 {
        self.cfg.kp_delta
    }
    pub fn tau_i_delta(&self) -> f64 {
        self.cfg.tau_i_delta_s
    }
    pub fn s_base(&self) -> f64 {
        self.cfg.s_base_mva * 1e6
    }
    /// Peak phase voltage of `u1n` read as line-to-line RMS, unless overridden.
    pub fn v_base_ac(&self) -> f64 {
        match self.cfg.v_base_ac_kv {
            Some(v) => v * 1e3,
            None => self.u1n_ac_voltage() * (2.0f64 / 3.0).sqrt(),
        }
    }
    pub fn v_base_dc(&self) -> f64 {
        match self.cfg.v_base_dc_kv {
            Some(v) => v * 1e3,
            None => self.v_dc_nominal(),
        }
    }
    /// Peak current base, `2/3 * S / V`.
    pub fn i_base(&self) -> f64 {
        2.0 / 3.0 * self.s_base() / self.v_base_ac()
    }
    pub fn z_base(&self) -> f64 {
        self.v_base_ac() / self.i_base()
    }

    pub fn base(&self, kind: PuKind) -> f64 {
        match kind {
            PuKind::AcVoltage => self.v_base_ac(),
            PuKind::DcVoltage => self.v_base_dc(),
            PuKind::Current => self.i_base(),
            PuKind::Power => self.s_base(),
        }
    }

    /// Returns a copy with different resistances, re-validated.
    pub fn with_resistances(&self, r_arm: f64, r_f: f64) -> Result<Self, ParamsError> {
        MmcParams::new(ParamsConfig { r_arm_ohm: r_arm, r_f_ohm: r_f, ..self.cfg })
    }
}

/// Parses and validates a TOML parameter file body.
pub fn load_params(source: &str) -> Result<MmcParams, ParamsError> {
    let table: toml::Table =
        source.parse().map_err(|e: toml::de::Error| ParamsError::Parse(e.message().to_string()))?;
    for key in REQUIRED_KEYS {
        if !table.contains_key(key) {
            return Err(ParamsError::MissingKey(key));
        }
    }
    let cfg: ParamsConfig =
        table.try_into().map_err(|e: toml::de::Error| ParamsError::Parse(e.message().to_string()))?;
    MmcParams::new(cfg)
}

pub fn load_params_file(path: &Path) -> Result<MmcParams, ParamsError> {
    let text =
        std::fs::read_to_string(path).map_err(|source| ParamsError::Io { path: path.display().to_string(), source })?;
    load_params(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PuKind {
    AcVoltage,
    DcVoltage,
    Current,
    Power,
}

impl PuKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PuKind::AcVoltage => "ac-voltage",
            PuKind::DcVoltage => "dc-voltage",
            PuKind::Current => "current",
            PuKind::Power => "power",
        }
    }
}

impl fmt::Display for PuKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PuKind {
    type Err = ParamsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ac-voltage" => Ok(PuKind::AcVoltage),
            "dc-voltage" => Ok(PuKind::DcVoltage),
            "current" => Ok(PuKind::Current),
            "power" => Ok(PuKind::Power),
            other => Err(ParamsError::UnknownKind(other.to_string())),
        }
    }
}

pub fn to_per_unit(value: f64, kind: PuKind, p: &MmcParams) -> f64 {
    value / p.base(kind)
}

pub fn from_per_unit(value: f64, kind: PuKind, p: &MmcParams) -> f64 {
    value * p.base(kind)
}
