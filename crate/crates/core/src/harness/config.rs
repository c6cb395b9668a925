//! Scenario configuration.
//!
//! The on-disk form is TOML with flat sections:
//!
//! ```toml
//! [scenario]
//! kind = "drift"        # static-converge | drift | scramble | sample-size-table
//! duration = 7200       # feedback cycles
//! fc_seconds = 12.0
//! seed = 1
//! control_enabled = true
//! sampler = "aggregated" # or "per-pulse"
//!
//! [link]      # alpha (dB/km), length (km), eta_bob
//! [source]    # mu, rep_rate, dark_count_prob, misalignment_floor
//! [channel]   # step_sigma, axis_resample_period, axis, angle_deg, rate_deg
//! [epc]       # gain, gain_jitter, v_min, v_max, max_axis_wander_deg, axis_drift_sigma
//! [controller_z] / [controller_x]
//!             # dither, tau, e_threshold, sample_fraction,
//!             # max_cycles_per_correction, batch_pulses
//! [table]     # mu, eta, qber, b
//! ```
//!
//! Every key is optional; missing keys take the defaults printed by
//! `poltrack config --print-defaults`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feedback::{ControllerConfig, Sampler};
use crate::optics::{ChannelModel, EpcParams, LinkBudget};
use crate::photon_sim::SourceParams;
use crate::poincare::{Rotation, StokesVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    /// Fixed channel misalignment.
    StaticConverge,
    /// Random-walk channel drift.
    Drift,
    /// Deterministic scrambler.
    Scramble,
    /// Estimator accuracy table; no time series.
    SampleSizeTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    pub kind: ScenarioKind,
    /// Feedback cycles to run.
    pub duration: u64,
    /// Wall-clock seconds per feedback cycle.
    pub fc_seconds: f64,
    pub seed: u64,
    pub control_enabled: bool,
    pub sampler: Sampler,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        ScenarioSection {
            kind: ScenarioKind::Drift,
            duration: 7200,
            fc_seconds: 12.0,
            seed: 1,
            control_enabled: true,
            sampler: Sampler::Aggregated,
        }
    }
}

/// Channel parameters; which ones apply depends on the scenario kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelSection {
    /// Random-walk step, radians per cycle (drift).
    pub step_sigma: f64,
    /// Cycles between random-walk axis draws (drift).
    pub axis_resample_period: u32,
    /// Rotation axis (static-converge and scramble).
    pub axis: [f64; 3],
    /// Fixed misalignment angle, degrees (static-converge).
    pub angle_deg: f64,
    /// Scrambler rate, degrees per cycle (scramble).
    pub rate_deg: f64,
}

impl Default for ChannelSection {
    fn default() -> Self {
        let a = std::f64::consts::FRAC_PI_8;
        ChannelSection {
            step_sigma: 0.005,
            axis_resample_period: 50,
            // a linear-birefringence axis between the two bases, so the
            // scrambler disturbs both of them
            axis: [a.cos(), a.sin(), 0.0],
            angle_deg: 45.0,
            rate_deg: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TableSection {
    pub mu: f64,
    pub eta: f64,
    pub qber: Vec<f64>,
    pub b: Vec<u64>,
}

impl Default for TableSection {
    fn default() -> Self {
        TableSection {
            mu: 0.1,
            eta: 0.1,
            qber: vec![0.01, 0.02, 0.03],
            b: vec![
                100, 200, 300, 500, 625, 1000, 1500, 2000, 2500, 3000, 4000, 5000, 7500, 10000,
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioSection,
    pub link: LinkBudget,
    pub source: SourceParams,
    pub channel: ChannelSection,
    pub epc: EpcParams,
    pub controller_z: ControllerConfig,
    pub controller_x: ControllerConfig,
    pub table: TableSection,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            let field = e
                .span()
                .and_then(|s| text.get(s))
                .map(|s| s.trim().to_string())
                .unwrap_or_else(|| "<document>".into());
            Error::config(field, msg)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        Self::from_toml(&text)
    }

    /// Canonical serialized form, as written to `config.resolved`.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.scenario;
        if s.duration < 1 {
            return Err(Error::config("scenario.duration", "must be >= 1"));
        }
        if !(s.fc_seconds.is_finite() && s.fc_seconds > 0.0) {
            return Err(Error::config("scenario.fc_seconds", "must be > 0"));
        }
        if s.seed > i64::MAX as u64 {
            return Err(Error::config(
                "scenario.seed",
                "must fit in a signed 64-bit integer",
            ));
        }
        self.link.validate("link")?;
        self.source.validate("source")?;
        self.epc.validate("epc")?;
        self.controller_z.validate("controller_z")?;
        self.controller_x.validate("controller_x")?;
        let c = &self.channel;
        if !(c.step_sigma.is_finite() && c.step_sigma >= 0.0) {
            return Err(Error::config("channel.step_sigma", "must be >= 0"));
        }
        if c.axis_resample_period == 0 {
            return Err(Error::config(
                "channel.axis_resample_period",
                "must be >= 1",
            ));
        }
        if StokesVector::normalized(c.axis).is_err() {
            return Err(Error::config("channel.axis", "must be a non-zero vector"));
        }
        if !c.angle_deg.is_finite() {
            return Err(Error::config("channel.angle_deg", "must be finite"));
        }
        if !(c.rate_deg.is_finite() && c.rate_deg >= 0.0) {
            return Err(Error::config("channel.rate_deg", "must be >= 0"));
        }
        let t = &self.table;
        if !(t.mu.is_finite() && t.mu > 0.0) {
            return Err(Error::config("table.mu", "must be > 0"));
        }
        if !(t.eta > 0.0 && t.eta <= 1.0) {
            return Err(Error::config("table.eta", "must lie in (0, 1]"));
        }
        if t.qber.is_empty() || t.qber.iter().any(|q| !(*q > 0.0 && *q < 1.0)) {
            return Err(Error::config(
                "table.qber",
                "must be a non-empty list in (0, 1)",
            ));
        }
        if t.b.is_empty() || t.b.contains(&0) {
            return Err(Error::config(
                "table.b",
                "must be a non-empty list of positive sizes",
            ));
        }
        if t.b.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("table.b", "must be strictly increasing"));
        }
        Ok(())
    }

    /// Channel model implied by the scenario kind.
    pub fn channel_model(&self) -> ChannelModel {
        let c = &self.channel;
        let axis = StokesVector::normalized(c.axis).unwrap_or(StokesVector::R);
        match self.scenario.kind {
            ScenarioKind::StaticConverge => ChannelModel::Static {
                rotation: Rotation::about(axis, c.angle_deg.to_radians()),
            },
            ScenarioKind::Drift => ChannelModel::random_walk(c.step_sigma, c.axis_resample_period),
            ScenarioKind::Scramble => ChannelModel::scrambler(axis, c.rate_deg),
            ScenarioKind::SampleSizeTable => ChannelModel::Static {
                rotation: Rotation::IDENTITY,
            },
        }
    }
}

/// Names accepted by [`preset`].
pub const PRESET_NAMES: [&str; 6] = [
    "static-converge",
    "drift24h",
    "scramble-0.2",
    "scramble-0.4",
    "scramble-0.6",
    "table",
];

/// Built-in experiment presets.
///
/// - `static-converge`: fixed 45° misalignment about the circular axis,
///   100 cycles.
/// - `drift24h`: random-walk drift for 24 h of 12 s cycles.
/// - `scramble-<rate>`: scrambler at 0.2, 0.4 or 0.6 degrees per cycle for
///   10 h.
/// - `table`: estimator accuracy table.
pub fn preset(name: &str) -> Result<ScenarioConfig> {
    let mut cfg = ScenarioConfig::default();
    match name {
        "static-converge" => {
            cfg.scenario.kind = ScenarioKind::StaticConverge;
            cfg.scenario.duration = 100;
            // circular axis: both bases start about 15% wrong
            cfg.channel.axis = [0.0, 0.0, 1.0];
        }
        "drift24h" => {
            cfg.scenario.kind = ScenarioKind::Drift;
            cfg.scenario.duration = 7200;
        }
        "scramble-0.2" | "scramble-0.4" | "scramble-0.6" => {
            cfg.scenario.kind = ScenarioKind::Scramble;
            cfg.scenario.duration = 3000;
            cfg.channel.rate_deg = name["scramble-".len()..].parse().expect("literal rate");
        }
        "table" => {
            cfg.scenario.kind = ScenarioKind::SampleSizeTable;
            cfg.scenario.duration = 1;
        }
        other => {
            return Err(Error::config(
                "preset",
                format!(
                    "unknown preset `{other}`; expected one of {}",
                    PRESET_NAMES.join(", ")
                ),
            ))
        }
    }
    Ok(cfg)
}
