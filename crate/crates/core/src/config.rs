//! Simulation configuration.
//!
//! Keys follow the parameter names used throughout the project (`T_t`,
//! `n_sc`, `R_11`, `CBR_target`, ...). Files are flat `key = value` TOML;
//! every key is optional and falls back to the built-in default scenario.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Broadcasting strategy selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StrategyKind {
    /// Periodic broadcasting.
    #[serde(rename = "PB")]
    Pb,
    /// Error-threshold broadcasting.
    #[serde(rename = "ETB")]
    Etb,
}

/// Congestion-control selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CongestionKind {
    #[serde(rename = "none")]
    None,
    /// Channel-sensing control (LIMERIC on the channel busy ratio).
    #[serde(rename = "CSCC")]
    Cscc,
    /// Neighbor-aware control on the analytic collision probability.
    #[serde(rename = "NACC")]
    Nacc,
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StrategyKind::Pb => "PB",
            StrategyKind::Etb => "ETB",
        })
    }
}

impl fmt::Display for CongestionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CongestionKind::None => "none",
            CongestionKind::Cscc => "CSCC",
            CongestionKind::Nacc => "NACC",
        })
    }
}

impl FromStr for StrategyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "PB" => Ok(StrategyKind::Pb),
            "ETB" => Ok(StrategyKind::Etb),
            _ => Err(Error::Config(format!("unknown strategy `{s}` (expected PB or ETB)"))),
        }
    }
}

impl FromStr for CongestionKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "NONE" => Ok(CongestionKind::None),
            "CSCC" => Ok(CongestionKind::Cscc),
            "NACC" => Ok(CongestionKind::Nacc),
            _ => Err(Error::Config(format!("unknown congestion control `{s}` (expected none, CSCC or NACC)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Slot duration [s].
    #[serde(rename = "T_t")]
    pub slot: f64,
    /// Delivery delay [s]; a positive multiple of the slot.
    #[serde(rename = "T_d")]
    pub delay: f64,
    /// Communication range [m].
    #[serde(rename = "r")]
    pub range: f64,
    #[serde(rename = "n_sc")]
    pub n_sc: usize,
    #[serde(rename = "n_sc_tot")]
    pub n_sc_tot: usize,
    /// Run length [s].
    #[serde(rename = "T_sim")]
    pub sim_time: f64,
    /// Monte Carlo runs per sweep point.
    #[serde(rename = "N_sim")]
    pub runs: usize,
    /// Track timeout [s].
    #[serde(rename = "Delta_track")]
    pub track_timeout: f64,

    pub strategy: StrategyKind,
    pub congestion: CongestionKind,
    #[serde(rename = "T_period")]
    pub t_period: f64,
    #[serde(rename = "E_thr")]
    pub e_thr: f64,
    #[serde(rename = "T_max")]
    pub t_max: f64,

    /// Process noise `Q = q I`, added once per prediction step.
    pub q: f64,
    #[serde(rename = "R_11")]
    pub r11: f64,
    #[serde(rename = "R_22")]
    pub r22: f64,
    #[serde(rename = "R_33")]
    pub r33: f64,
    #[serde(rename = "R_44")]
    pub r44: f64,
    #[serde(rename = "R_55")]
    pub r55: f64,
    #[serde(rename = "R_66")]
    pub r66: f64,

    #[serde(rename = "A_lambda")]
    pub a_lambda: f64,
    #[serde(rename = "B_lambda")]
    pub b_lambda: f64,
    #[serde(rename = "C_lambda")]
    pub c_lambda: f64,
    #[serde(rename = "D_lambda")]
    pub d_lambda: f64,
    #[serde(rename = "E_lambda")]
    pub e_lambda: f64,
    #[serde(rename = "nu_lambda")]
    pub nu_lambda: f64,
    #[serde(rename = "d_0")]
    pub d0: f64,

    pub alpha: f64,
    /// LIMERIC gain; `(2 - alpha) / K` when unset.
    pub beta: Option<f64>,
    /// Users per channel; `|V| / n_sc` when unset.
    #[serde(rename = "K")]
    pub k: Option<f64>,
    #[serde(rename = "CBR_target")]
    pub cbr_target: f64,
    pub delta_min: f64,
    pub delta_max: f64,
    pub rho_min: f64,
    pub rho_max: f64,
    #[serde(rename = "P_thr")]
    pub p_thr: f64,
    #[serde(rename = "N_cbr_avg")]
    pub n_cbr_avg: usize,
    #[serde(rename = "N_cbr_update")]
    pub n_cbr_update: usize,

    /// Speed limit of the synthetic map [m/s].
    pub v_max: f64,
    /// Map area [km²].
    #[serde(rename = "A_S")]
    pub area_km2: f64,
    /// Number of vehicles |V|.
    #[serde(rename = "V")]
    pub vehicles: usize,

    /// Aggregates ignore slots before this time [s].
    pub warmup: f64,
    /// Receivers fuse remote estimates as measurements instead of replacing the track.
    pub remote_fusion: bool,
    /// Calibration map CSV for ETB under congestion control.
    pub map: Option<String>,
    /// Mobility trace (SUMO FCD XML or CSV); synthetic grid traffic when unset.
    pub trace: Option<String>,
    /// Calibration horizon cap (slots).
    #[serde(rename = "H_max")]
    pub h_max: usize,
    /// Calibration error-bin width [m].
    pub calib_bin: f64,
    /// Calibration reset stride (slots).
    pub calib_stride: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            slot: 0.1,
            delay: 0.1,
            range: 140.0,
            n_sc: 8,
            n_sc_tot: 52,
            sim_time: 100.0,
            runs: 20,
            track_timeout: 10.0,
            strategy: StrategyKind::Pb,
            congestion: CongestionKind::None,
            t_period: 1.0,
            e_thr: 2.0,
            t_max: 10.0,
            q: 1.0,
            r11: 1.18535,
            r22: 1.18535,
            r33: 0.5,
            r44: 0.39,
            r55: 0.09211,
            r66: 0.01587,
            a_lambda: 1.0,
            b_lambda: 0.05,
            c_lambda: 1.0,
            d_lambda: 1.0,
            e_lambda: 0.0,
            nu_lambda: 0.2,
            d0: 42.0,
            alpha: 0.1,
            beta: None,
            k: None,
            cbr_target: 0.68,
            delta_min: -1.0,
            delta_max: 1.0,
            rho_min: 0.0006,
            rho_max: 1.0,
            p_thr: 0.3,
            n_cbr_avg: 100,
            n_cbr_update: 10,
            v_max: 13.89,
            area_km2: 0.5168,
            vehicles: 62,
            warmup: 2.0,
            remote_fusion: false,
            map: None,
            trace: None,
            h_max: 100,
            calib_bin: 0.1,
            calib_stride: 10,
            seed: 1,
        }
    }
}

impl SimConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    // negated comparisons so that NaN fields are rejected too
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.slot > 0.0 && self.slot.is_finite()) {
            return fail("T_t must be positive");
        }
        if !(self.delay >= self.slot) || !is_multiple(self.delay, self.slot) {
            return fail("T_d must be a positive multiple of T_t");
        }
        if !(self.range > 0.0) {
            return fail("r must be positive");
        }
        if self.n_sc == 0 || self.n_sc > self.n_sc_tot {
            return fail("require 0 < n_sc <= n_sc_tot");
        }
        if !(self.sim_time > 0.0) {
            return fail("T_sim must be positive");
        }
        if !(self.rho_min > 0.0 && self.rho_min < self.rho_max && self.rho_max <= 1.0) {
            return fail("require 0 < rho_min < rho_max <= 1");
        }
        if !(self.delta_min <= self.delta_max) {
            return fail("require delta_min <= delta_max");
        }
        if !(self.p_thr > 0.0 && self.p_thr < 1.0) {
            return fail("P_thr must lie in (0, 1)");
        }
        if !(self.q > 0.0) {
            return fail("q must be positive");
        }
        if self.noise_diagonal().iter().any(|v| !(*v >= 0.0)) {
            return fail("R diagonal must be non-negative");
        }
        if !(self.nu_lambda > 0.0) {
            return fail("nu_lambda must be positive");
        }
        if self.n_cbr_avg == 0 || self.n_cbr_update == 0 {
            return fail("N_cbr_avg and N_cbr_update must be positive");
        }
        if !(self.t_period >= 0.0) || !(self.e_thr >= 0.0) || !(self.t_max > 0.0) {
            return fail("T_period, E_thr must be non-negative and T_max positive");
        }
        if !(self.track_timeout > 0.0) {
            return fail("Delta_track must be positive");
        }
        if self.h_max == 0 || !(self.calib_bin > 0.0) || self.calib_stride == 0 {
            return fail("H_max, calib_bin and calib_stride must be positive");
        }
        Ok(())
    }

    /// Diagonal of the measurement covariance `R`.
    pub fn noise_diagonal(&self) -> [f64; 6] {
        [self.r11, self.r22, self.r33, self.r44, self.r55, self.r66]
    }

    pub fn delay_slots(&self) -> u64 {
        (self.delay / self.slot).round() as u64
    }

    pub fn total_slots(&self) -> u64 {
        (self.sim_time / self.slot).round() as u64
    }

    pub fn warmup_slots(&self) -> u64 {
        (self.warmup / self.slot).round() as u64
    }

    pub fn users_per_channel(&self) -> f64 {
        self.k.unwrap_or(self.vehicles as f64 / self.n_sc as f64)
    }

    pub fn limeric_beta(&self) -> f64 {
        self.beta.unwrap_or((2.0 - self.alpha) / self.users_per_channel())
    }

    /// ETB combined with a congestion controller needs a threshold map.
    pub fn needs_error_map(&self) -> bool {
        self.strategy == StrategyKind::Etb && self.congestion != CongestionKind::None
    }
}

fn is_multiple(value: f64, unit: f64) -> bool {
    let k = (value / unit).round();
    k >= 1.0 && (value - k * unit).abs() <= 1e-9 * unit.max(value)
}
