//! Optional TOML configuration shared by every subcommand. Command-line flags
//! override it; relative paths resolve against the config file's directory.
//!
//! ```toml
//! model = "robot.toml"
//! scene = "scene.toml"
//!
//! [controller]
//! timestep = 0.001          # seconds
//! watchdog_timeout = 0.1    # seconds
//! gains = { kp = 5e-3, ki = 1e-3, kd = 2.7e-5, output_limit = 1.0, integral_limit = 5.0 }
//!
//! [teleop]                  # any TeleopConfig field
//! translation_gain = 1e-3
//! collision_guard = true
//!
//! [serve]
//! bind = "127.0.0.1"
//! port = 7070
//! cockpit_port = 8080
//! teleop_rate_hz = 400
//! cockpit_dir = "cockpit/dist"
//! heatmap = "heatmap.csv"
//! ```

use std::net::IpAddr;
use std::path::{Path, PathBuf};

use ctbot_core::controller::{ControllerConfig, MotorModel, PidGains};
use ctbot_core::model::{default_scene, load_scene};
use ctbot_core::scene::{RobotBody, Scene};
use ctbot_core::sim::SimConfig;
use ctbot_core::teleop::TeleopConfig;
use ctbot_core::RobotModel;
use serde::Deserialize;

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub model: Option<PathBuf>,
    pub scene: Option<PathBuf>,
    pub controller: ControllerSection,
    pub teleop: Option<TeleopConfig>,
    pub serve: ServeSection,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerSection {
    pub timestep: Option<f64>,
    pub watchdog_timeout: Option<f64>,
    /// Applied to every axis.
    pub gains: Option<PidGains>,
    /// Applied to every axis.
    pub motor: Option<MotorModel>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeSection {
    pub bind: Option<IpAddr>,
    pub port: Option<u16>,
    pub cockpit_port: Option<u16>,
    pub teleop_rate_hz: Option<u32>,
    pub cockpit_dir: Option<PathBuf>,
    pub heatmap: Option<PathBuf>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("config {}: {e}", path.display()))?;
        let mut cfg: ConfigFile = toml::from_str(&text).map_err(|e| format!("config {}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.model,
            &mut cfg.scene,
            &mut cfg.serve.cockpit_dir,
            &mut cfg.serve.heatmap,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

/// Model and scene after overrides, loaded and validated.
pub struct Loaded {
    pub model: RobotModel,
    pub scene: Scene,
    pub body: RobotBody,
    pub file: ConfigFile,
}

impl Loaded {
    pub fn resolve(config: Option<&Path>, model: Option<&Path>, scene: Option<&Path>) -> Result<Self, String> {
        let file = match config {
            Some(p) => ConfigFile::load(p)?,
            None => ConfigFile::default(),
        };
        let model_path = model.map(Path::to_path_buf).or_else(|| file.model.clone());
        let model = match &model_path {
            Some(p) => RobotModel::load(p).map_err(|e| format!("model {}: {e}", p.display()))?,
            None => RobotModel::biopsy_arm(),
        };
        let scene_path = scene.map(Path::to_path_buf).or_else(|| file.scene.clone());
        let (scene, body) = match &scene_path {
            Some(p) => load_scene(p).map_err(|e| format!("scene {}: {e}", p.display()))?,
            None => default_scene(),
        };
        Ok(Self { model, scene, body, file })
    }

    /// Simulator settings from the config file, before command-line overrides.
    pub fn sim_config(&self) -> Result<SimConfig, String> {
        let mut controller = ControllerConfig::for_model(&self.model).map_err(|e| e.to_string())?;
        let c = &self.file.controller;
        if let Some(dt) = c.timestep {
            controller.dt = dt;
        }
        if let Some(t) = c.watchdog_timeout {
            controller.watchdog_timeout = t;
        }
        for axis in controller.axes.iter_mut() {
            if let Some(g) = c.gains {
                axis.gains = g;
            }
            if let Some(m) = c.motor {
                axis.motor = m;
            }
        }
        let mut cfg = SimConfig {
            controller,
            ..SimConfig::default()
        };
        if let Some(t) = &self.file.teleop {
            cfg.teleop = t.clone();
        }
        if let Some(rate) = self.file.serve.teleop_rate_hz {
            cfg.teleop_rate_hz = rate;
        }
        Ok(cfg)
    }
}
