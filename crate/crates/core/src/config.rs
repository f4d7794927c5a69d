//! Scenario files (TOML) and the bundled presets.
//!
//! ```toml
//! delays = [50.0, 100.0]
//!
//! [map]
//! y_star = 5.0
//! theta_star = [0.0, 1.0]
//! hessian = [[-2.0, -2.0], [-2.0, -4.0]]
//!
//! [dither]
//! a = [0.22, 0.22]
//! omega = 5.0
//! seed = 1
//!
//! [controller]
//! mode = "predictor"
//! c = 20.0
//! k_diag = [0.005, 0.005]
//!
//! [sim]
//! dt = 0.001
//! t_final = 5000.0
//! theta_hat0 = [1.0, 0.0]
//! decimation = 100
//! divergence_factor = 100.0
//! window_fraction = 0.2
//! ```
//!
//! An optional `[averaged]` table (`m`, `dt`, `t_final`, `record_every`)
//! configures the averaged-system analyzer.

use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::averaged::AveragedParams;
use crate::controller::{ControllerConfig, Mode, Scenario, SimSettings};
use crate::delayline::{delay_steps, DelayVector};
use crate::dither::DitherParams;
use crate::quadmap::StaticQuadraticMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapConfig {
    pub y_star: f64,
    pub theta_star: Vec<f64>,
    pub hessian: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DitherConfig {
    pub a: Vec<f64>,
    pub omega: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    pub mode: Mode,
    #[serde(default)]
    pub c: f64,
    pub k_diag: Vec<f64>,
}

fn default_decimation() -> usize {
    100
}

fn default_divergence_factor() -> f64 {
    100.0
}

fn default_window_fraction() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    pub t_final: f64,
    pub theta_hat0: Vec<f64>,
    #[serde(default = "default_decimation")]
    pub decimation: usize,
    #[serde(default = "default_divergence_factor")]
    pub divergence_factor: f64,
    #[serde(default = "default_window_fraction")]
    pub window_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AveragedConfig {
    pub m: usize,
    pub dt: f64,
    pub t_final: f64,
    pub record_every: usize,
}

impl Default for AveragedConfig {
    fn default() -> Self {
        Self {
            m: 200,
            dt: 0.01,
            t_final: 2000.0,
            record_every: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub delays: Vec<f64>,
    pub map: MapConfig,
    pub dither: DitherConfig,
    pub controller: ControllerSection,
    pub sim: SimConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub averaged: Option<AveragedConfig>,
}

/// A violated invariant, located by its key path in the scenario file.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario:\n{}", .0.iter().map(|e| format!("  {e}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<FieldError>),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
}

impl ConfigError {
    /// Field paths of all validation failures (empty for other error kinds).
    pub fn paths(&self) -> Vec<&str> {
        match self {
            ConfigError::Invalid(errs) => errs.iter().map(|e| e.path.as_str()).collect(),
            _ => Vec::new(),
        }
    }
}

struct Errors(Vec<FieldError>);

impl Errors {
    fn push(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.0.push(FieldError {
            path: path.into(),
            message: message.into(),
        });
    }

    fn check(&mut self, ok: bool, path: &str, message: impl Into<String>) {
        if !ok {
            self.push(path, message);
        }
    }

    fn len(&mut self, path: &str, got: usize, n: usize) -> bool {
        if got != n {
            self.push(path, format!("expected {n} entries, got {got}"));
            false
        } else {
            true
        }
    }
}

fn positive(v: f64) -> bool {
    v.is_finite() && v > 0.0
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes to TOML")
    }

    /// Reads and validates a scenario file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    /// Re-checks every invariant, reporting all failures at once.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errs = Errors(Vec::new());
        let n = self.map.theta_star.len();
        errs.check(n >= 1, "map.theta_star", "at least one input required");

        if errs.len("map.hessian", self.map.hessian.len(), n) {
            for (i, row) in self.map.hessian.iter().enumerate() {
                errs.len(&format!("map.hessian[{i}]"), row.len(), n);
            }
        }
        if errs.0.is_empty() {
            if let Err(e) = self.map_model() {
                errs.push("map.hessian", e.to_string());
            }
        }

        if errs.len("dither.a", self.dither.a.len(), n) {
            for (i, a) in self.dither.a.iter().enumerate() {
                errs.check(
                    positive(*a),
                    &format!("dither.a[{i}]"),
                    format!("amplitude must be positive, got {a}"),
                );
            }
        }
        errs.check(
            positive(self.dither.omega),
            "dither.omega",
            "frequency must be positive",
        );

        if errs.len("controller.k_diag", self.controller.k_diag.len(), n) {
            for (i, k) in self.controller.k_diag.iter().enumerate() {
                errs.check(
                    positive(*k),
                    &format!("controller.k_diag[{i}]"),
                    format!("gain must be positive, got {k}"),
                );
            }
        }
        if self.controller.mode == Mode::Predictor {
            errs.check(
                positive(self.controller.c),
                "controller.c",
                "filter gain must be positive in predictor mode",
            );
        }

        let sim = &self.sim;
        let dt_ok = positive(sim.dt);
        errs.check(dt_ok, "sim.dt", "time step must be positive");
        errs.check(
            sim.t_final.is_finite() && sim.t_final >= 0.0,
            "sim.t_final",
            "horizon must be nonnegative",
        );
        errs.len("sim.theta_hat0", sim.theta_hat0.len(), n);
        errs.check(
            sim.theta_hat0.iter().all(|v| v.is_finite()),
            "sim.theta_hat0",
            "must be finite",
        );
        errs.check(sim.decimation >= 1, "sim.decimation", "must be at least 1");
        errs.check(
            positive(sim.divergence_factor),
            "sim.divergence_factor",
            "must be positive",
        );
        errs.check(
            sim.window_fraction > 0.0 && sim.window_fraction <= 1.0,
            "sim.window_fraction",
            "must lie in (0, 1]",
        );

        if errs.len("delays", self.delays.len(), n) {
            for (i, d) in self.delays.iter().enumerate() {
                if dt_ok {
                    if let Err(e) = delay_steps(*d, sim.dt) {
                        errs.push(format!("delays[{i}]"), e.to_string());
                    }
                }
            }
            errs.check(
                self.delays.windows(2).all(|w| w[0] <= w[1]),
                "delays",
                "must be sorted ascending (reorder the channels)",
            );
        }

        if let Some(avg) = &self.averaged {
            errs.check(avg.m >= 1, "averaged.m", "must be at least 1");
            errs.check(
                positive(avg.dt),
                "averaged.dt",
                "time step must be positive",
            );
            errs.check(
                avg.t_final.is_finite() && avg.t_final >= 0.0,
                "averaged.t_final",
                "must be nonnegative",
            );
            errs.check(
                avg.record_every >= 1,
                "averaged.record_every",
                "must be at least 1",
            );
        }

        if errs.0.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errs.0))
        }
    }

    fn map_model(&self) -> crate::Result<StaticQuadraticMap> {
        let rows: Vec<f64> = self.map.hessian.iter().flatten().copied().collect();
        StaticQuadraticMap::from_slices(self.map.y_star, &self.map.theta_star, &rows)
    }

    pub fn hessian(&self) -> DMatrix<f64> {
        let n = self.map.theta_star.len();
        let rows: Vec<f64> = self.map.hessian.iter().flatten().copied().collect();
        DMatrix::from_row_slice(n, n, &rows)
    }

    /// Builds the runtime scenario; the config must already be valid.
    pub fn to_scenario(&self) -> Result<Scenario, ConfigError> {
        self.validate()?;
        let invalid = |path: &str, e: crate::EscError| {
            ConfigError::Invalid(vec![FieldError {
                path: path.into(),
                message: e.to_string(),
            }])
        };
        let scenario = Scenario {
            map: self.map_model().map_err(|e| invalid("map", e))?,
            dither: DitherParams::new(self.dither.a.clone(), self.dither.omega)
                .map_err(|e| invalid("dither", e))?,
            delays: DelayVector::new(self.delays.clone(), self.sim.dt)
                .map_err(|e| invalid("delays", e))?,
            controller: ControllerConfig::new(
                self.controller.k_diag.clone(),
                self.controller.c,
                self.controller.mode,
            )
            .map_err(|e| invalid("controller", e))?,
            sim: SimSettings {
                dt: self.sim.dt,
                t_final: self.sim.t_final,
                theta_hat0: self.sim.theta_hat0.clone(),
                decimation: self.sim.decimation,
                divergence_factor: self.sim.divergence_factor,
            },
            seed: self.dither.seed,
        };
        scenario.validate().map_err(|e| invalid("sim", e))?;
        Ok(scenario)
    }

    /// Averaged-system parameters; `c` overrides the controller's filter gain.
    pub fn averaged_params(&self, c: Option<f64>) -> AveragedParams {
        let avg = self.averaged.clone().unwrap_or_default();
        AveragedParams {
            hessian: self.hessian(),
            gains: self.controller.k_diag.clone(),
            c: c.unwrap_or(self.controller.c),
            delays: self.delays.clone(),
            m: avg.m,
            dt: avg.dt,
        }
    }

    /// `θ̃_av(0) = θ̂(0) − θ*`.
    pub fn initial_error(&self) -> Vec<f64> {
        self.sim
            .theta_hat0
            .iter()
            .zip(&self.map.theta_star)
            .map(|(a, b)| a - b)
            .collect()
    }
}

const PRESETS: &[(&str, &str)] = &[
    ("fig2_nodelay", include_str!("../presets/fig2_nodelay.toml")),
    ("fig3_nodelay", include_str!("../presets/fig3_nodelay.toml")),
    (
        "fig5_nopredictor",
        include_str!("../presets/fig5_nopredictor.toml"),
    ),
    (
        "fig6_predictor_input",
        include_str!("../presets/fig6_predictor_input.toml"),
    ),
    (
        "fig7_predictor_delays",
        include_str!("../presets/fig7_predictor_delays.toml"),
    ),
    ("fig8_control", include_str!("../presets/fig8_control.toml")),
    ("fig9_hessian", include_str!("../presets/fig9_hessian.toml")),
    ("short_delay", include_str!("../presets/short_delay.toml")),
];

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(name, _)| *name)
}

pub fn preset_text(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

pub fn preset(name: &str) -> Result<ScenarioConfig, ConfigError> {
    let text = preset_text(name).ok_or_else(|| ConfigError::UnknownPreset(name.to_string()))?;
    ScenarioConfig::from_toml(text)
}

/// Loads `source` as a file path, falling back to a preset name.
pub fn load_config(source: &str) -> Result<ScenarioConfig, ConfigError> {
    if Path::new(source).exists() {
        ScenarioConfig::load(source)
    } else if let Some(text) = preset_text(source) {
        ScenarioConfig::from_toml(text)
    } else {
        ScenarioConfig::load(source)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_is_valid() {
        for name in preset_names() {
            let cfg = preset(name).unwrap_or_else(|e| panic!("{name}: {e}"));
            cfg.to_scenario().unwrap();
        }
    }

    #[test]
    fn predictor_preset_matches_study_parameters() {
        let cfg = preset("fig7_predictor_delays").unwrap();
        assert_eq!(cfg.delays, vec![50.0, 100.0]);
        assert_eq!(cfg.controller.mode, Mode::Predictor);
        assert_eq!(cfg.controller.c, 20.0);
        assert_eq!(cfg.controller.k_diag, vec![0.005, 0.005]);
        assert_eq!(cfg.dither.a, vec![0.22, 0.22]);
        assert_eq!(cfg.dither.omega, 5.0);
        assert_eq!(cfg.sim.theta_hat0, vec![1.0, 0.0]);
        assert_eq!(cfg.map.theta_star, vec![0.0, 1.0]);
        assert_eq!(cfg.map.y_star, 5.0);
        assert_eq!(
            cfg.hessian(),
            DMatrix::from_row_slice(2, 2, &[-2.0, -2.0, -2.0, -4.0])
        );
    }

    #[test]
    fn off_grid_delay_is_rejected() {
        let mut cfg = preset("fig7_predictor_delays").unwrap();
        cfg.delays = vec![50.0, 100.0005];
        let err = cfg.validate().unwrap_err();
        assert_eq!(err.paths(), vec!["delays[1]"]);
    }

    #[test]
    fn negative_amplitude_is_rejected() {
        let mut cfg = preset("fig3_nodelay").unwrap();
        cfg.dither.a[0] = -0.22;
        cfg.controller.k_diag[1] = 0.0;
        let err = cfg.validate().unwrap_err();
        assert_eq!(err.paths(), vec!["dither.a[0]", "controller.k_diag[1]"]);
    }

    #[test]
    fn structural_errors_are_reported() {
        let mut cfg = preset("fig3_nodelay").unwrap();
        cfg.map.hessian = vec![vec![-1.0, 0.0], vec![0.0, 1.0]];
        cfg.delays = vec![2.0, 1.0];
        cfg.sim.window_fraction = 0.0;
        let err = cfg.validate().unwrap_err();
        assert_eq!(
            err.paths(),
            vec!["map.hessian", "sim.window_fraction", "delays"]
        );
        assert!(err.to_string().contains("sign-definite"));
    }

    #[test]
    fn unknown_fields_and_presets() {
        let text = preset_text("fig3_nodelay")
            .unwrap()
            .replace("omega", "omegaa");
        assert!(matches!(
            ScenarioConfig::from_toml(&text),
            Err(ConfigError::Parse(_))
        ));
        assert!(matches!(preset("nope"), Err(ConfigError::UnknownPreset(_))));
    }

    #[test]
    fn toml_round_trip() {
        for name in preset_names() {
            let cfg = preset(name).unwrap();
            assert_eq!(ScenarioConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        }
    }

    #[test]
    fn load_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.toml");
        std::fs::write(&path, preset_text("fig5_nopredictor").unwrap()).unwrap();
        let cfg = load_config(path.to_str().unwrap()).unwrap();
        assert_eq!(cfg.controller.mode, Mode::Classic);
        assert!(matches!(
            ScenarioConfig::load(dir.path().join("missing.toml")),
            Err(ConfigError::Io { .. })
        ));
        assert_eq!(load_config("fig5_nopredictor").unwrap(), cfg);
    }
}
