//! JSON run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::age_discretization::{age_average_initial, build_age_grid, regularize};
use crate::error::{Result, SimError};
use crate::model_spec::{AgeFamily, ModelFamilies};
use crate::solver::{Problem, RunParams, SimState};
use crate::spatial_grid::{GridSpec, SpatialGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelFamilies,
    pub alpha: f64,
    /// Age horizon covered by the bins; defaults to 4τ.
    #[serde(default)]
    pub a_max: Option<f64>,
    pub grid: GridSpec,
    pub t_end: f64,
    #[serde(default = "default_sample_every")]
    pub sample_every: f64,
    /// Optional cap on the time step.
    #[serde(default)]
    pub max_dt: Option<f64>,
    #[serde(default)]
    pub initial: InitialData,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default)]
    pub test_functions: TestFunctionConfig,
    #[serde(default)]
    pub sweep: Option<SweepPlan>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

fn default_sample_every() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AgeProfile {
    /// exp(−a²/(2w²))
    Gaussian { width: f64 },
    /// exp(−rate·a)
    Exponential { rate: f64 },
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpaceProfile {
    /// background + exp(−|x − c|²/(2w²))
    Gaussian { center: Vec<f64>, width: f64, background: f64 },
    /// background + cos(kπx/L) along the first axis, k = mode
    Cosine { mode: usize, background: f64 },
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwarmerData {
    pub amplitude: f64,
    pub age: AgeProfile,
    pub space: SpaceProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwimmerData {
    pub amplitude: f64,
    pub space: SpaceProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialData {
    pub u: SwarmerData,
    pub v: SwimmerData,
}

impl Default for InitialData {
    fn default() -> Self {
        Self {
            u: SwarmerData { amplitude: 0.0, age: AgeProfile::Constant, space: SpaceProfile::Uniform },
            v: SwimmerData { amplitude: 0.0, space: SpaceProfile::Uniform },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsConfig {
    pub enabled: bool,
    /// Ages A at which the tail mass is tracked.
    pub tail_ages: Vec<f64>,
    pub hypothesis_samples: usize,
    /// Radius for hypothesis sampling; defaults to 1/α.
    pub r_max: Option<f64>,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self { enabled: true, tail_ages: vec![], hypothesis_samples: 256, r_max: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TestFunctionConfig {
    pub enabled: bool,
    /// Cosine modes k of ω(x) = cos(kπx/L); 0 is the constant.
    pub modes: Vec<usize>,
}

impl Default for TestFunctionConfig {
    fn default() -> Self {
        Self { enabled: true, modes: vec![0, 1, 2, 3, 4] }
    }
}

/// α-refinement plan: cells scale with 1/α relative to the base config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepPlan {
    pub alphas: Vec<f64>,
}

impl SweepPlan {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.alphas.len() < 3 {
            out.push("sweep.alphas: at least 3 levels are required".into());
        }
        if self.alphas.windows(2).any(|w| !(w[1] < w[0])) {
            out.push("sweep.alphas: levels must be strictly decreasing".into());
        }
        if self.alphas.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            out.push("sweep.alphas: every level must lie in (0, 1)".into());
        }
        out
    }
}

fn profile_violations(p: &SpaceProfile, dim: usize, field: &str, out: &mut Vec<String>) {
    match p {
        SpaceProfile::Gaussian { center, width, background } => {
            if center.len() != dim {
                out.push(format!("{field}.center: expected {dim} coordinates"));
            }
            if !(*width > 0.0) {
                out.push(format!("{field}.width: must be > 0"));
            }
            if !(*background >= 0.0) {
                out.push(format!("{field}.background: must be >= 0"));
            }
        }
        SpaceProfile::Cosine { background, .. } => {
            if !(*background >= 1.0) {
                out.push(format!("{field}.background: must be >= 1 so the profile stays nonnegative"));
            }
        }
        SpaceProfile::Uniform => {}
    }
}

impl SpaceProfile {
    pub fn eval(&self, x: [f64; 2], lengths: [f64; 2]) -> f64 {
        match self {
            SpaceProfile::Gaussian { center, width, background } => {
                let d2: f64 = center.iter().enumerate().map(|(k, c)| (x[k] - c).powi(2)).sum();
                background + (-d2 / (2.0 * width * width)).exp()
            }
            SpaceProfile::Cosine { mode, background } => {
                background + (*mode as f64 * std::f64::consts::PI * x[0] / lengths[0]).cos()
            }
            SpaceProfile::Uniform => 1.0,
        }
    }
}

impl AgeProfile {
    pub fn eval(&self, a: f64) -> f64 {
        match self {
            AgeProfile::Gaussian { width } => (-a * a / (2.0 * width * width)).exp(),
            AgeProfile::Exponential { rate } => (-rate * a).exp(),
            AgeProfile::Constant => 1.0,
        }
    }
}

impl RunConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut out = self.model.violations();
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            out.push(format!("alpha: must lie in (0, 1), got {}", self.alpha));
        }
        if let Some(a) = self.a_max {
            if !(a > 0.0 && a >= self.alpha) {
                out.push("a_max: must be >= alpha".into());
            }
        }
        let dim = self.grid.extents.len();
        if !(dim == 1 || dim == 2) || self.grid.cells.len() != dim {
            out.push("grid: extents and cells must both have length 1 or 2".into());
        }
        if self.grid.extents.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            out.push("grid.extents: must be > 0".into());
        }
        if self.grid.cells.iter().any(|&n| n < 8) {
            out.push("grid.cells: at least 8 cells per axis".into());
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            out.push("t_end: must be > 0".into());
        }
        if !(self.sample_every > 0.0 && self.sample_every <= self.t_end) {
            out.push("sample_every: must lie in (0, t_end]".into());
        }
        if let Some(dt) = self.max_dt {
            if !(dt > 0.0) {
                out.push("max_dt: must be > 0".into());
            }
        }
        if !(self.initial.u.amplitude >= 0.0) {
            out.push("initial.u.amplitude: must be >= 0".into());
        }
        if !(self.initial.v.amplitude >= 0.0) {
            out.push("initial.v.amplitude: must be >= 0".into());
        }
        match self.initial.u.age {
            AgeProfile::Gaussian { width } if !(width > 0.0) => {
                out.push("initial.u.age.width: must be > 0".into())
            }
            AgeProfile::Exponential { rate } if !(rate >= 0.0) => {
                out.push("initial.u.age.rate: must be >= 0".into())
            }
            _ => {}
        }
        profile_violations(&self.initial.u.space, dim, "initial.u.space", &mut out);
        profile_violations(&self.initial.v.space, dim, "initial.v.space", &mut out);
        if self.diagnostics.hypothesis_samples < 64 {
            out.push("diagnostics.hypothesis_samples: at least 64".into());
        }
        for a in &self.diagnostics.tail_ages {
            if !(*a >= 4.0 * self.alpha) {
                out.push(format!("diagnostics.tail_ages: A = {a} must be >= 4 alpha"));
            }
        }
        if self.test_functions.modes.iter().any(|&k| k > 4) {
            out.push("test_functions.modes: cosine modes must be <= 4".into());
        }
        if let Some(s) = &self.sweep {
            out.extend(s.violations());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(SimError::ConfigInvalid(v))
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)
            .map_err(|e| SimError::ConfigInvalid(vec![format!("parse error: {e}")]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the compact JSON serialization.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn tau(&self) -> f64 {
        match &self.model.age {
            AgeFamily::Exponential { tau, .. } | AgeFamily::Table { tau, .. } => *tau,
        }
    }

    pub fn a_max(&self) -> f64 {
        self.a_max.unwrap_or(4.0 * self.tau())
    }

    pub fn run_params(&self) -> RunParams {
        RunParams { max_dt: self.max_dt, ..RunParams::new(self.t_end, self.sample_every) }
    }

    pub fn problem(&self) -> Result<Problem> {
        self.validate()?;
        let spec = self.model.build()?;
        let grid = build_age_grid(&spec, self.alpha, self.a_max())?;
        let reg = regularize(&spec, self.alpha);
        let sgrid = SpatialGrid::from_spec(&self.grid)?;
        Ok(Problem { spec, grid, reg, sgrid })
    }

    pub fn initial_state(&self, p: &Problem) -> Result<SimState> {
        let lengths = p.sgrid.lengths;
        let ud = self.initial.u.clone();
        let u0 = move |a: f64, x: [f64; 2]| ud.amplitude * ud.age.eval(a) * ud.space.eval(x, lengths);
        let u = age_average_initial(&u0, &p.grid, &p.sgrid)?;
        let v = p
            .sgrid
            .sample(|x| self.initial.v.amplitude * self.initial.v.space.eval(x, lengths));
        SimState::new(u, v, p)
    }

    /// The same configuration at a different α with cells scaled by
    /// base_alpha/α.
    pub fn at_alpha(&self, alpha: f64) -> RunConfig {
        let mut c = self.clone();
        let ratio = self.alpha / alpha;
        c.alpha = alpha;
        c.grid.cells = self.grid.cells.iter().map(|&n| (n as f64 * ratio).round() as usize).collect();
        c.max_dt = self.max_dt.map(|d| d / ratio);
        c.sweep = None;
        c
    }
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    RunConfig::from_json(&text)
}

/// The exponential-family reference configuration used throughout the
/// acceptance suite.
pub fn reference_config() -> RunConfig {
    RunConfig::from_json(REFERENCE_JSON).expect("reference config is valid")
}

pub const REFERENCE_JSON: &str = r#"{
  "model": {
    "age": { "family": "exponential", "m0": 1.0, "tau": 2.0, "m2": 0.2 },
    "diffusivity": { "family": "power", "d0": 0.5, "theta": 2.0 },
    "drift": { "family": "diffusivity_derivative" },
    "growth": { "family": "constant", "g0": 0.5 },
    "differentiation": { "family": "bump", "amplitude": 0.3, "s1": 0.05, "s2": 1.0 }
  },
  "alpha": 0.125,
  "a_max": 4.0,
  "grid": { "extents": [8.0], "cells": [128] },
  "t_end": 2.0,
  "sample_every": 0.1,
  "initial": {
    "u": { "amplitude": 0.5, "age": { "kind": "gaussian", "width": 0.4 },
           "space": { "kind": "gaussian", "center": [4.0], "width": 1.5, "background": 0.0 } },
    "v": { "amplitude": 0.15, "space": { "kind": "gaussian", "center": [4.0], "width": 2.25, "background": 0.0 } }
  },
  "diagnostics": { "tail_ages": [1.0, 2.0] }
}"#;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_defaults_and_round_trips() {
        let text = r#"{
          "model": {
            "age": { "family": "exponential", "m0": 1.0, "tau": 1.0, "m2": 0.1 },
            "diffusivity": { "family": "power", "d0": 1.0, "theta": 2.0 },
            "drift": { "family": "zero" },
            "growth": { "family": "constant", "g0": 0.0 },
            "differentiation": { "family": "zero" }
          },
          "alpha": 0.25, "grid": { "extents": [1.0], "cells": [16] }, "t_end": 1.0
        }"#;
        let c = RunConfig::from_json(text).unwrap();
        assert_eq!(c.sample_every, 0.1);
        assert!(c.diagnostics.enabled);
        let back = RunConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn bad_alpha_is_rejected() {
        let mut c = reference_config();
        c.alpha = 1.5;
        match c.validate() {
            Err(SimError::ConfigInvalid(v)) => assert!(v.iter().any(|m| m.contains("alpha"))),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_family_names_the_field() {
        let text = REFERENCE_JSON.replace("\"power\"", "\"quartic\"");
        match RunConfig::from_json(&text) {
            Err(SimError::ConfigInvalid(v)) => assert!(v[0].contains("quartic"), "{v:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn zero_diffusivity_is_refused() {
        let text = REFERENCE_JSON.replace(
            r#"{ "family": "power", "d0": 0.5, "theta": 2.0 }"#,
            r#"{ "family": "zero" }"#,
        );
        match RunConfig::from_json(&text) {
            Err(SimError::ConfigInvalid(v)) => assert!(v.iter().any(|m| m.contains("drift-only"))),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn all_violations_are_listed() {
        let mut c = reference_config();
        c.alpha = 0.0;
        c.t_end = -1.0;
        c.grid.cells = vec![4];
        let v = c.violations();
        assert!(v.len() >= 3, "{v:?}");
    }

    #[test]
    fn degenerate_sweep_is_rejected() {
        let mut c = reference_config();
        c.sweep = Some(SweepPlan { alphas: vec![0.125, 0.125, 0.0625] });
        assert!(c.validate().is_err());
    }

    #[test]
    fn alpha_rescaling_links_cells() {
        let c = reference_config().at_alpha(1.0 / 32.0);
        assert_eq!(c.grid.cells, vec![512]);
    }
}
