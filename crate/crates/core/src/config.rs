//! Top-level TOML configuration shared by every CLI verb.
//!
//! ```toml
//! seed = 7
//! robot = "my_robot.toml"        # omit for the bundled NAO model
//! joint_layout = "humanml3d"
//! axis_remap = ["+z", "+x", "+y"]
//!
//! [npr]
//! w_trans = 1.0
//! w_quat = 1.0
//!
//! [solver]
//! restarts = 8
//!
//! [train]
//! epochs = 200
//!
//! [dataset]
//! generated_fraction = 0.5
//!
//! [eval]
//! dt = 0.001
//! [eval.weights]
//! dof_target = 10.0
//! ```
//!
//! Every table is optional. `seed` seeds the solver restarts, network
//! training and randomization sampling alike.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::asn::TrainConfig;
use crate::ctrl_eval::EvalConfig;
use crate::error::{Error, Result};
use crate::ik_oracle::SolverConfig;
use crate::npr::NprWeights;
use crate::robot::{load_robot, RobotModel};
use crate::skeleton::{AxisRemap, JointLayout};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NprSection {
    pub w_trans: f64,
    pub w_quat: f64,
    /// Overrides the model's mean arm length.
    pub l_arm: Option<f64>,
    pub l_leg: Option<f64>,
}

impl Default for NprSection {
    fn default() -> Self {
        NprSection {
            w_trans: 1.0,
            w_quat: 1.0,
            l_arm: None,
            l_leg: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    /// Share of FK-generated reachable descriptors mixed into training data
    /// taken from motion or descriptor files.
    pub generated_fraction: f64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            generated_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub seed: u64,
    pub robot: Option<PathBuf>,
    pub joint_layout: String,
    pub axis_remap: Vec<String>,
    pub npr: NprSection,
    pub solver: SolverConfig,
    pub train: TrainConfig,
    pub dataset: DatasetSection,
    pub eval: EvalConfig,
}

impl Default for AppConfig {
    fn default() -> Self {
        AppConfig {
            seed: 0,
            robot: None,
            joint_layout: "humanml3d".into(),
            axis_remap: AxisRemap::y_up().to_strings(),
            npr: NprSection::default(),
            solver: SolverConfig::default(),
            train: TrainConfig::default(),
            dataset: DatasetSection::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// Config with every referenced resource loaded.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: AppConfig,
    pub model: RobotModel,
    pub layout: JointLayout,
    pub remap: AxisRemap,
    pub weights: NprWeights,
    pub solver: SolverConfig,
    pub train: TrainConfig,
}

impl AppConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file; relative robot paths resolve against the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let (Some(robot), Some(dir)) = (&cfg.robot, path.parent()) {
            if robot.is_relative() {
                cfg.robot = Some(dir.join(robot));
            }
        }
        Ok(cfg)
    }

    pub fn resolve(self) -> Result<Resolved> {
        let model = match &self.robot {
            Some(p) => {
                if !p.exists() {
                    return Err(Error::Config(format!("robot config {} does not exist", p.display())));
                }
                load_robot(p)?
            }
            None => RobotModel::nao(),
        };
        let layout = match self.joint_layout.as_str() {
            "humanml3d" => JointLayout::humanml3d(),
            other => return Err(Error::Config(format!("unknown joint layout {other:?}"))),
        };
        let remap = AxisRemap::parse(&self.axis_remap).map_err(|e| Error::Config(e.to_string()))?;
        let weights = NprWeights {
            w_trans: self.npr.w_trans,
            w_quat: self.npr.w_quat,
            l_arm: self.npr.l_arm.unwrap_or(model.l_arm),
            l_leg: self.npr.l_leg.unwrap_or(model.l_leg),
        };
        weights.validate().map_err(|e| Error::Config(e.to_string()))?;
        let solver = SolverConfig {
            seed: self.seed,
            ..self.solver.clone()
        };
        solver.validate().map_err(|e| Error::Config(e.to_string()))?;
        let train = TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        };
        train.validate()?;
        if !(0.0..1.0).contains(&self.dataset.generated_fraction) {
            return Err(Error::Config("dataset.generated_fraction must lie in [0, 1)".into()));
        }
        self.eval.validate()?;
        Ok(Resolved {
            config: self,
            model,
            layout,
            remap,
            weights,
            solver,
            train,
        })
    }
}
