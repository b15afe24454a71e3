//! Flat TOML scenario files.
//!
//! Every key is optional and falls back to the reference scenario. Unknown
//! keys are rejected so a misspelt gain cannot silently take its default.

use fcbf_core::constraints::{CbfGains, ClassKLinear, ControllerKind, InputBounds};
use fcbf_core::model::{FilterParams, FilteredInput, SystemState, UnicycleParams};
use fcbf_core::sim::{ConfigError, QpWeights, ScenarioConfig};
use serde::{Deserialize, Serialize};
use sha1::{Digest, Sha1};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid scenario in {path}: {source}")]
    Invalid {
        path: PathBuf,
        #[source]
        source: ConfigError,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub controller: Option<ControllerKind>,
    pub seed: u64,
    pub dt: f64,
    #[serde(rename = "horizon_T")]
    pub horizon_t: f64,
    pub x0: f64,
    pub y0: f64,
    pub theta0: f64,
    pub v0: f64,
    pub uf1_0: f64,
    pub uf2_0: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub alpha: f64,
    pub c3: f64,
    #[serde(rename = "Q")]
    pub q: f64,
    /// Unset means the controller default.
    pub smoothness_weight: Option<f64>,
    pub tau: f64,
    pub order_ma: u32,
    #[serde(rename = "mass_M")]
    pub mass: f64,
    pub obstacle_x: f64,
    pub obstacle_y: f64,
    pub obstacle_r: f64,
    pub goal_x: f64,
    pub goal_y: f64,
    pub goal_tol_rd: f64,
    /// Unset bounds follow the mass: `[-5, 5]` and `[-5 M, 5 M]`.
    pub u1_min: Option<f64>,
    pub u1_max: Option<f64>,
    pub u2_min: Option<f64>,
    pub u2_max: Option<f64>,
}

impl Default for FileConfig {
    fn default() -> Self {
        let p = ScenarioConfig::paper(ControllerKind::Fcbf);
        Self {
            controller: None,
            seed: 0,
            dt: p.dt,
            horizon_t: p.horizon,
            x0: p.initial_state.x,
            y0: p.initial_state.y,
            theta0: p.initial_state.theta,
            v0: p.initial_state.v,
            uf1_0: p.initial_uf.uf1,
            uf2_0: p.initial_uf.uf2,
            k1: p.gains.k1.gain(),
            k2: p.gains.k2.gain(),
            k3: p.gains.k3.gain(),
            alpha: p.gains.alpha.gain(),
            c3: p.gains.c3,
            q: p.qp.q,
            smoothness_weight: None,
            tau: p.filter.tau,
            order_ma: p.filter.order,
            mass: p.unicycle.mass,
            obstacle_x: p.unicycle.obstacle_x,
            obstacle_y: p.unicycle.obstacle_y,
            obstacle_r: p.unicycle.obstacle_r,
            goal_x: p.unicycle.goal_x,
            goal_y: p.unicycle.goal_y,
            goal_tol_rd: p.unicycle.goal_tol,
            u1_min: None,
            u1_max: None,
            u2_min: None,
            u2_max: None,
        }
    }
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    /// Scenario for `controller`, or for the file's own controller when `None`.
    /// Falls back to the filtered controller if neither names one.
    pub fn scenario(&self, controller: Option<ControllerKind>) -> ScenarioConfig {
        let kind = controller.or(self.controller).unwrap_or(ControllerKind::Fcbf);
        let unicycle = UnicycleParams {
            mass: self.mass,
            obstacle_x: self.obstacle_x,
            obstacle_y: self.obstacle_y,
            obstacle_r: self.obstacle_r,
            goal_x: self.goal_x,
            goal_y: self.goal_y,
            goal_tol: self.goal_tol_rd,
        };
        let default_bounds = InputBounds::for_mass(self.mass);
        let input_bounds = InputBounds {
            min: [
                self.u1_min.unwrap_or(default_bounds.min[0]),
                self.u2_min.unwrap_or(default_bounds.min[1]),
            ],
            max: [
                self.u1_max.unwrap_or(default_bounds.max[0]),
                self.u2_max.unwrap_or(default_bounds.max[1]),
            ],
        };
        let base = ScenarioConfig::paper(kind);
        ScenarioConfig {
            dt: self.dt,
            horizon: self.horizon_t,
            initial_state: SystemState::new(self.x0, self.y0, self.theta0, self.v0),
            initial_uf: FilteredInput::new(self.uf1_0, self.uf2_0),
            controller: kind,
            gains: CbfGains {
                k1: ClassKLinear(self.k1),
                k2: ClassKLinear(self.k2),
                k3: ClassKLinear(self.k3),
                alpha: ClassKLinear(self.alpha),
                c3: self.c3,
            },
            qp: QpWeights {
                q: self.q,
                smoothness_weight: self.smoothness_weight.unwrap_or(base.qp.smoothness_weight),
            },
            filter: FilterParams {
                tau: self.tau,
                order: self.order_ma,
            },
            unicycle,
            input_bounds,
        }
    }

    /// Sets one sweepable parameter.
    pub fn set_param(&mut self, name: &str, value: f64) -> Result<(), String> {
        match name {
            "k3" => self.k3 = value,
            "alpha" => self.alpha = value,
            "tau" => self.tau = value,
            "theta0" => self.theta0 = value,
            other => return Err(format!("cannot sweep `{other}` (expected one of {})", SWEEP_PARAMS.join(", "))),
        }
        Ok(())
    }
}

pub const SWEEP_PARAMS: [&str; 4] = ["k3", "alpha", "tau", "theta0"];

/// A scenario file as loaded from disk.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub path: PathBuf,
    pub file: FileConfig,
    /// Git blob hash of the raw file bytes.
    pub hash: String,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self, LoadError> {
        let bytes = std::fs::read(path).map_err(|source| LoadError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let text = String::from_utf8(bytes.clone()).map_err(|e| LoadError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let file = FileConfig::parse(&text).map_err(|message| LoadError::Parse {
            path: path.to_path_buf(),
            message,
        })?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
            hash: git_blob_hash(&bytes),
        })
    }

    /// Validated scenario for `controller` (see [`FileConfig::scenario`]).
    pub fn scenario(&self, controller: Option<ControllerKind>) -> Result<ScenarioConfig, LoadError> {
        let s = self.file.scenario(controller);
        s.validate().map_err(|source| LoadError::Invalid {
            path: self.path.clone(),
            source,
        })?;
        Ok(s)
    }
}

/// Same digest `git hash-object` prints for a file with these bytes.
pub fn git_blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha1::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_reference_scenario() {
        let f = FileConfig::parse("").unwrap();
        for kind in ControllerKind::ALL {
            assert_eq!(f.scenario(Some(kind)), ScenarioConfig::paper(kind));
        }
    }

    #[test]
    fn unknown_key_rejected() {
        let err = FileConfig::parse("k4 = 1.0\n").unwrap_err();
        assert!(err.contains("k4"), "{err}");
    }

    #[test]
    fn renamed_keys() {
        let f = FileConfig::parse("horizon_T = 2.0\nQ = 10.0\nmass_M = 100.0\ncontroller = \"sp-hocbf\"\n").unwrap();
        let s = f.scenario(None);
        assert_eq!((s.horizon, s.qp.q, s.unicycle.mass), (2.0, 10.0, 100.0));
        assert_eq!(s.controller, ControllerKind::SpHocbf);
        assert_eq!(s.qp.smoothness_weight, 0.1);
        assert_eq!(s.input_bounds.max[1], 500.0);
    }

    #[test]
    fn blob_hash_matches_git() {
        // git hash-object of an empty file
        assert_eq!(git_blob_hash(b""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
        assert_eq!(git_blob_hash(b"hello\n"), "ce013625030ba8dba906f756967f9e9ca394464a");
    }

    #[test]
    fn sweep_param_names() {
        let mut f = FileConfig::default();
        f.set_param("alpha", 5.0).unwrap();
        assert_eq!(f.alpha, 5.0);
        assert!(f.set_param("k1", 1.0).is_err());
    }
}
