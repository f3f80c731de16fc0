//! Run configuration: JSON ingestion, validation, and command-line overrides.

use std::path::{Path, PathBuf};

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::ekf::EkfConfig;
use crate::error::{Error, Result};
use crate::lie::{RowMode, MAX_ORDER};
use crate::model::ModelParams;
use crate::scenarios::{
    default_rig, make_scenario, rig_with, RotationProfile, ScenarioId, ScenarioSpec, DEFAULT_DT,
};
use crate::so3::Vec3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioSelection,
    #[serde(default)]
    pub engine: EngineConfig,
    #[serde(default)]
    pub gramian: GramianConfig,
    #[serde(default)]
    pub ekf: EkfSection,
    #[serde(default)]
    pub model: ModelParams,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Exactly one of a built-in id or a custom scenario.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSelection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<ScenarioId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custom: Option<CustomScenario>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomScenario {
    pub profiles: Vec<ProfileConfig>,
    #[serde(default)]
    pub rig: RigConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileConfig {
    pub axis: [f64; 3],
    pub rate: f64,
    pub duration: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigConfig {
    #[serde(rename = "p_IC")]
    pub p_ic: [f64; 3],
    pub extrinsic_axis: [f64; 3],
    /// Radians.
    pub extrinsic_angle: f64,
}

impl Default for RigConfig {
    fn default() -> Self {
        let rig = default_rig();
        RigConfig {
            p_ic: rig.p_ic.into(),
            extrinsic_axis: [1.0, 1.0, 1.0],
            extrinsic_angle: 10f64.to_radians(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub mode: RowMode,
    pub max_order: usize,
    pub rank_tol: f64,
    pub row_normalize: bool,
    /// Trajectory time (s) of the state and input the Lie analysis uses.
    pub eval_time: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            mode: RowMode::Excited,
            max_order: 4,
            rank_tol: 1e-8,
            row_normalize: true,
            eval_time: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GramianConfig {
    pub enabled: bool,
    /// Seconds of trajectory to accumulate; the whole scenario when absent.
    pub duration: Option<f64>,
    pub dt: f64,
}

impl Default for GramianConfig {
    fn default() -> Self {
        GramianConfig { enabled: true, duration: None, dt: DEFAULT_DT }
    }
}

/// `ekf` block: an `enabled` toggle beside the filter parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct EkfSection {
    pub enabled: bool,
    pub config: EkfConfig,
}

impl Default for EkfSection {
    fn default() -> Self {
        EkfSection { enabled: true, config: EkfConfig::default() }
    }
}

impl Serialize for EkfSection {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut value = serde_json::to_value(&self.config).map_err(serde::ser::Error::custom)?;
        if let Some(map) = value.as_object_mut() {
            map.insert("enabled".to_string(), serde_json::Value::Bool(self.enabled));
        }
        value.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for EkfSection {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let mut value = serde_json::Value::deserialize(deserializer)?;
        let map = value.as_object_mut().ok_or_else(|| D::Error::custom("ekf must be an object"))?;
        let enabled = match map.remove("enabled") {
            None => true,
            Some(serde_json::Value::Bool(b)) => b,
            Some(other) => return Err(D::Error::custom(format!("ekf.enabled must be a boolean, got {other}"))),
        };
        let config = EkfConfig::deserialize(value).map_err(D::Error::custom)?;
        Ok(EkfSection { enabled, config })
    }
}

/// Command-line values that replace their config counterparts.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub scenario: Option<ScenarioId>,
    pub mode: Option<RowMode>,
    pub order: Option<usize>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive and finite, got {v}")))
    }
}

impl RunConfig {
    /// A config for a built-in scenario with every other value at its default.
    pub fn for_scenario(id: ScenarioId) -> Self {
        RunConfig {
            scenario: ScenarioSelection { id: Some(id), custom: None },
            engine: EngineConfig::default(),
            gramian: GramianConfig::default(),
            ekf: EkfSection::default(),
            model: ModelParams::default(),
            seed: 0,
            out_dir: default_out_dir(),
        }
    }

    /// Parse and validate; every failure is a configuration error.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.display().to_string(), source })?;
        RunConfig::from_json(&text)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(id) = o.scenario {
            self.scenario = ScenarioSelection { id: Some(id), custom: None };
        }
        if let Some(mode) = o.mode {
            self.engine.mode = mode;
        }
        if let Some(order) = o.order {
            self.engine.max_order = order;
        }
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(out) = &o.out_dir {
            self.out_dir = out.clone();
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.scenario.id, &self.scenario.custom) {
            (Some(ScenarioId::Custom), None) | (None, None) => {
                return Err(Error::Config("scenario needs a built-in id or a custom block".into()))
            }
            (Some(id), Some(_)) if *id != ScenarioId::Custom => {
                return Err(Error::Config("scenario takes either an id or a custom block, not both".into()))
            }
            _ => {}
        }
        if let Some(custom) = &self.scenario.custom {
            if custom.profiles.is_empty() {
                return Err(Error::Config("custom scenario needs at least one profile".into()));
            }
            for (i, p) in custom.profiles.iter().enumerate() {
                if Vec3::from(p.axis).norm() == 0.0 || p.axis.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Config(format!("profile {i}: axis must be finite and nonzero")));
                }
                if !p.rate.is_finite() {
                    return Err(Error::Config(format!("profile {i}: rate must be finite")));
                }
                positive(&format!("profile {i}: duration"), p.duration)?;
            }
            let rig = &custom.rig;
            if Vec3::from(rig.extrinsic_axis).norm() == 0.0 {
                return Err(Error::Config("rig.extrinsic_axis must be nonzero".into()));
            }
            if rig.p_ic.iter().chain(&rig.extrinsic_axis).any(|v| !v.is_finite()) || !rig.extrinsic_angle.is_finite() {
                return Err(Error::Config("rig values must be finite".into()));
            }
        }
        let e = &self.engine;
        if e.max_order > MAX_ORDER {
            return Err(Error::Config(format!("engine.max_order must be at most {MAX_ORDER}, got {}", e.max_order)));
        }
        positive("engine.rank_tol", e.rank_tol)?;
        if !(e.eval_time >= 0.0) || !e.eval_time.is_finite() {
            return Err(Error::Config(format!("engine.eval_time must be non-negative, got {}", e.eval_time)));
        }
        positive("gramian.dt", self.gramian.dt)?;
        if let Some(d) = self.gramian.duration {
            positive("gramian.duration", d)?;
        }
        self.ekf.config.validate()?;
        if self.model.gravity.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("model.gravity must be finite".into()));
        }
        if self.model.landmarks.iter().any(|l| l.position.iter().any(|v| !v.is_finite())) {
            return Err(Error::Config("landmark positions must be finite".into()));
        }
        Ok(())
    }

    pub fn scenario_id(&self) -> ScenarioId {
        self.scenario.id.unwrap_or(ScenarioId::Custom)
    }

    /// The scenario this config describes, with the configured model.
    pub fn scenario_spec(&self) -> Result<ScenarioSpec> {
        match (&self.scenario.custom, self.scenario.id) {
            (Some(custom), _) => {
                let rig = rig_with(
                    custom.rig.p_ic.into(),
                    custom.rig.extrinsic_axis.into(),
                    custom.rig.extrinsic_angle,
                )
                .map_err(|e| Error::Config(format!("rig: {e}")))?;
                let profiles = custom
                    .profiles
                    .iter()
                    .map(|p| RotationProfile::new(p.axis.into(), p.rate, p.duration))
                    .collect::<Result<Vec<_>>>()
                    .map_err(|e| Error::Config(format!("profile: {e}")))?;
                Ok(ScenarioSpec {
                    id: ScenarioId::Custom,
                    profiles,
                    initial: rig,
                    params: self.model.clone(),
                    dt: DEFAULT_DT,
                })
            }
            (None, Some(id)) => make_scenario(id, default_rig(), self.model.clone()),
            (None, None) => Err(Error::Config("no scenario selected".into())),
        }
    }

    /// EKF parameters with the run seed applied.
    pub fn ekf_config(&self) -> EkfConfig {
        EkfConfig { seed: self.seed, ..self.ekf.config.clone() }
    }
}
