//! Robot kinematic model: joint table, limits, keypoint bindings, forward
//! kinematics with analytic Jacobians and the shared HipYawPitch rule.
//!
//! FK is rooted at the torso with an identity floating base. Each joint
//! frame is `parent * translate(origin) * rotate(axis, q)`.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{axis_angle, Mat3, Vec3};

pub const NUM_COMMANDS: usize = 21;
pub const NUM_MODEL_JOINTS: usize = 22;

const NAO_TOML: &str = include_str!("../data/nao.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActuatorClass {
    Head,
    Arm,
    LegPitch,
    LegRoll,
    LegYawPitch,
}

impl ActuatorClass {
    pub const ALL: [ActuatorClass; 5] = [
        ActuatorClass::Head,
        ActuatorClass::Arm,
        ActuatorClass::LegPitch,
        ActuatorClass::LegRoll,
        ActuatorClass::LegYawPitch,
    ];
}

impl fmt::Display for ActuatorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ActuatorClass::Head => "head",
            ActuatorClass::Arm => "arm",
            ActuatorClass::LegPitch => "leg_pitch",
            ActuatorClass::LegRoll => "leg_roll",
            ActuatorClass::LegYawPitch => "leg_yaw_pitch",
        };
        f.write_str(s)
    }
}

/// Keypoints tracked on the robot, left side first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Keypoint {
    LeftShoulder,
    LeftElbow,
    LeftWrist,
    LeftHip,
    LeftKnee,
    LeftAnkle,
    LeftFoot,
    RightShoulder,
    RightElbow,
    RightWrist,
    RightHip,
    RightKnee,
    RightAnkle,
    RightFoot,
}

impl Keypoint {
    pub const COUNT: usize = 14;
    pub const ALL: [Keypoint; 14] = [
        Keypoint::LeftShoulder,
        Keypoint::LeftElbow,
        Keypoint::LeftWrist,
        Keypoint::LeftHip,
        Keypoint::LeftKnee,
        Keypoint::LeftAnkle,
        Keypoint::LeftFoot,
        Keypoint::RightShoulder,
        Keypoint::RightElbow,
        Keypoint::RightWrist,
        Keypoint::RightHip,
        Keypoint::RightKnee,
        Keypoint::RightAnkle,
        Keypoint::RightFoot,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn config_key(self) -> &'static str {
        match self {
            Keypoint::LeftShoulder => "left_shoulder",
            Keypoint::LeftElbow => "left_elbow",
            Keypoint::LeftWrist => "left_wrist",
            Keypoint::LeftHip => "left_hip",
            Keypoint::LeftKnee => "left_knee",
            Keypoint::LeftAnkle => "left_ankle",
            Keypoint::LeftFoot => "left_foot",
            Keypoint::RightShoulder => "right_shoulder",
            Keypoint::RightElbow => "right_elbow",
            Keypoint::RightWrist => "right_wrist",
            Keypoint::RightHip => "right_hip",
            Keypoint::RightKnee => "right_knee",
            Keypoint::RightAnkle => "right_ankle",
            Keypoint::RightFoot => "right_foot",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointSpec {
    pub name: String,
    pub parent: Option<usize>,
    pub origin: Vec3,
    pub axis: Vec3,
    pub q_min: f64,
    pub q_max: f64,
    pub actuator_class: ActuatorClass,
}

impl JointSpec {
    pub fn contains(&self, q: f64) -> bool {
        q >= self.q_min && q <= self.q_max
    }

    pub fn range(&self) -> f64 {
        self.q_max - self.q_min
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeypointBinding {
    pub link: usize,
    pub offset: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotModel {
    pub name: String,
    pub joints: Vec<JointSpec>,
    pub keypoints: [KeypointBinding; Keypoint::COUNT],
    /// Joint indices of the 21 independently commanded joints.
    pub command_order: Vec<usize>,
    /// `(source, target)`: the target joint copies the source command.
    pub mirror: (usize, usize),
    pub default_arm_dir: Vec3,
    pub default_foot_dir: Vec3,
    pub l_arm: f64,
    pub l_leg: f64,
}

// ---- config file schema ----

#[derive(Debug, Serialize, Deserialize)]
struct RobotFile {
    name: String,
    default_arm_dir: [f64; 3],
    default_foot_dir: [f64; 3],
    command_order: Vec<String>,
    mirror: MirrorFile,
    keypoints: HashMap<String, KeypointFile>,
    joints: Vec<JointFile>,
}

#[derive(Debug, Serialize, Deserialize)]
struct MirrorFile {
    source: String,
    target: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct KeypointFile {
    link: String,
    #[serde(default)]
    offset: [f64; 3],
}

#[derive(Debug, Serialize, Deserialize)]
struct JointFile {
    name: String,
    parent: String,
    origin: [f64; 3],
    axis: [f64; 3],
    q_min: f64,
    q_max: f64,
    actuator_class: ActuatorClass,
}

fn v3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

impl RobotModel {
    /// The bundled NAO-like model.
    pub fn nao() -> Self {
        Self::from_toml_str(NAO_TOML).expect("bundled robot config is valid")
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: RobotFile =
            toml::from_str(text).map_err(|e| Error::Config(format!("robot config: {e}")))?;
        Self::from_file(file)
    }

    fn from_file(file: RobotFile) -> Result<Self> {
        let cfg = |m: String| Error::Config(m);
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut joints = Vec::with_capacity(file.joints.len());
        for (i, j) in file.joints.iter().enumerate() {
            if index.contains_key(&j.name) || j.name == "torso" {
                return Err(cfg(format!("duplicate joint name {}", j.name)));
            }
            let parent = if j.parent == "torso" {
                None
            } else {
                Some(*index.get(&j.parent).ok_or_else(|| {
                    cfg(format!(
                        "joint {} has parent {} which is not declared before it",
                        j.name, j.parent
                    ))
                })?)
            };
            if !(j.q_min.is_finite() && j.q_max.is_finite() && j.q_min < j.q_max) {
                return Err(cfg(format!(
                    "joint {} needs q_min < q_max, got [{}, {}]",
                    j.name, j.q_min, j.q_max
                )));
            }
            let axis = v3(j.axis);
            if !(axis.norm() > 1e-12) || j.origin.iter().any(|v| !v.is_finite()) {
                return Err(cfg(format!("joint {} has a bad axis or origin", j.name)));
            }
            index.insert(j.name.clone(), i);
            joints.push(JointSpec {
                name: j.name.clone(),
                parent,
                origin: v3(j.origin),
                axis: axis.normalize(),
                q_min: j.q_min,
                q_max: j.q_max,
                actuator_class: j.actuator_class,
            });
        }
        if joints.len() != NUM_MODEL_JOINTS {
            return Err(cfg(format!(
                "expected {NUM_MODEL_JOINTS} joints, found {}",
                joints.len()
            )));
        }
        let lookup = |name: &str| {
            index
                .get(name)
                .copied()
                .ok_or_else(|| cfg(format!("unknown joint {name}")))
        };
        let command_order = file
            .command_order
            .iter()
            .map(|n| lookup(n))
            .collect::<Result<Vec<_>>>()?;
        if command_order.len() != NUM_COMMANDS {
            return Err(cfg(format!(
                "command_order needs {NUM_COMMANDS} entries, got {}",
                command_order.len()
            )));
        }
        let hyp = command_order
            .iter()
            .filter(|&&i| joints[i].name.contains("HipYawPitch"))
            .count();
        if hyp != 1 {
            return Err(cfg(format!(
                "command_order must contain exactly one HipYawPitch joint, found {hyp}"
            )));
        }
        let mirror = (lookup(&file.mirror.source)?, lookup(&file.mirror.target)?);
        if !command_order.contains(&mirror.0) || command_order.contains(&mirror.1) {
            return Err(cfg(
                "mirror source must be commanded and mirror target must not".into(),
            ));
        }
        let mut covered = vec![false; joints.len()];
        for &i in command_order.iter().chain(std::iter::once(&mirror.1)) {
            if covered[i] {
                return Err(cfg(format!("joint {} listed twice", joints[i].name)));
            }
            covered[i] = true;
        }

        let mut keypoints = [KeypointBinding {
            link: 0,
            offset: Vec3::zeros(),
        }; Keypoint::COUNT];
        for kp in Keypoint::ALL {
            let b = file
                .keypoints
                .get(kp.config_key())
                .ok_or_else(|| cfg(format!("missing keypoint binding {}", kp.config_key())))?;
            keypoints[kp.index()] = KeypointBinding {
                link: lookup(&b.link)?,
                offset: v3(b.offset),
            };
        }
        let default_arm_dir = v3(file.default_arm_dir);
        let default_foot_dir = v3(file.default_foot_dir);
        if !(default_arm_dir.norm() > 0.0 && default_foot_dir.norm() > 0.0) {
            return Err(cfg("default limb directions must be non-zero".into()));
        }

        let mut model = RobotModel {
            name: file.name,
            joints,
            keypoints,
            command_order,
            mirror,
            default_arm_dir: default_arm_dir.normalize(),
            default_foot_dir: default_foot_dir.normalize(),
            l_arm: 0.0,
            l_leg: 0.0,
        };
        let zero = fk_unchecked(&[0.0; NUM_MODEL_JOINTS], &model);
        let seg = |a: Keypoint, b: Keypoint| (zero.get(b) - zero.get(a)).norm();
        use Keypoint::*;
        let segments = [
            (LeftShoulder, LeftElbow),
            (LeftElbow, LeftWrist),
            (LeftHip, LeftKnee),
            (LeftKnee, LeftAnkle),
            (LeftAnkle, LeftFoot),
            (RightShoulder, RightElbow),
            (RightElbow, RightWrist),
            (RightHip, RightKnee),
            (RightKnee, RightAnkle),
            (RightAnkle, RightFoot),
        ];
        for (a, b) in segments {
            if seg(a, b) < 1e-9 {
                return Err(cfg(format!(
                    "zero-length segment {} -> {}",
                    a.config_key(),
                    b.config_key()
                )));
            }
        }
        model.l_arm = 0.5
            * (seg(LeftShoulder, LeftElbow)
                + seg(LeftElbow, LeftWrist)
                + seg(RightShoulder, RightElbow)
                + seg(RightElbow, RightWrist));
        model.l_leg = 0.5
            * (seg(LeftHip, LeftKnee)
                + seg(LeftKnee, LeftAnkle)
                + seg(RightHip, RightKnee)
                + seg(RightKnee, RightAnkle));
        Ok(model)
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    pub fn num_joints(&self) -> usize {
        self.joints.len()
    }

    /// Limits of the commanded joints, in command order.
    pub fn command_limits(&self) -> (Vec<f64>, Vec<f64>) {
        self.command_order
            .iter()
            .map(|&i| (self.joints[i].q_min, self.joints[i].q_max))
            .unzip()
    }

    pub fn command_names(&self) -> Vec<&str> {
        self.command_order
            .iter()
            .map(|&i| self.joints[i].name.as_str())
            .collect()
    }

    /// Position of the mirror-source joint inside the command vector.
    pub fn mirror_command_slot(&self) -> usize {
        self.command_order
            .iter()
            .position(|&i| i == self.mirror.0)
            .expect("validated at load")
    }

    /// Folds a per-joint gradient onto the command vector; the mirrored
    /// joint's entry accumulates onto its source.
    pub fn collapse_gradient(&self, grad: &[f64]) -> Vec<f64> {
        self.command_order
            .iter()
            .map(|&i| {
                if i == self.mirror.0 {
                    grad[i] + grad[self.mirror.1]
                } else {
                    grad[i]
                }
            })
            .collect()
    }
}

pub fn load_robot(path: &Path) -> Result<RobotModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RobotModel::from_toml_str(&text)
}

/// 21 joint angles in the model's command order.
#[derive(Debug, Clone, PartialEq)]
pub struct JointCommand(pub Vec<f64>);

impl JointCommand {
    pub fn zeros() -> Self {
        JointCommand(vec![0.0; NUM_COMMANDS])
    }

    pub fn validate(&self, model: &RobotModel) -> Result<()> {
        if self.0.len() != model.command_order.len() {
            return Err(Error::Validation(format!(
                "command has {} entries, expected {}",
                self.0.len(),
                model.command_order.len()
            )));
        }
        for (&q, &j) in self.0.iter().zip(&model.command_order) {
            let spec = &model.joints[j];
            if !spec.contains(q) {
                return Err(Error::Validation(format!(
                    "{} = {q} outside [{}, {}]",
                    spec.name, spec.q_min, spec.q_max
                )));
            }
        }
        Ok(())
    }
}

/// Expands a 21-entry command into the full joint map; the mirrored joint
/// takes the same value as its source (one shared actuator).
pub fn expand_command(cmd: &JointCommand, model: &RobotModel) -> Result<Vec<f64>> {
    cmd.validate(model)?;
    Ok(expand_unchecked(&cmd.0, model))
}

pub(crate) fn expand_unchecked(cmd: &[f64], model: &RobotModel) -> Vec<f64> {
    let mut q = vec![0.0; model.joints.len()];
    for (&v, &j) in cmd.iter().zip(&model.command_order) {
        q[j] = v;
    }
    q[model.mirror.1] = q[model.mirror.0];
    q
}

/// Keypoint positions in the torso frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FkResult {
    pub points: [Vec3; Keypoint::COUNT],
}

impl FkResult {
    pub fn get(&self, kp: Keypoint) -> Vec3 {
        self.points[kp.index()]
    }
}

/// World pose of every joint frame.
#[derive(Debug, Clone)]
pub struct LinkFrames {
    pub positions: Vec<Vec3>,
    pub rotations: Vec<Mat3>,
}

fn check_limits(q: &[f64], model: &RobotModel) -> Result<()> {
    if q.len() != model.joints.len() {
        return Err(Error::Validation(format!(
            "joint map has {} entries, expected {}",
            q.len(),
            model.joints.len()
        )));
    }
    for (v, spec) in q.iter().zip(&model.joints) {
        if !spec.contains(*v) {
            return Err(Error::Validation(format!(
                "{} = {v} outside [{}, {}]",
                spec.name, spec.q_min, spec.q_max
            )));
        }
    }
    Ok(())
}

pub fn link_frames(q: &[f64], model: &RobotModel) -> LinkFrames {
    let n = model.joints.len();
    let mut positions = Vec::with_capacity(n);
    let mut rotations = Vec::with_capacity(n);
    for (i, spec) in model.joints.iter().enumerate() {
        let (p_par, r_par) = match spec.parent {
            Some(p) => (positions[p], rotations[p]),
            None => (Vec3::zeros(), Mat3::identity()),
        };
        positions.push(p_par + r_par * spec.origin);
        rotations.push(r_par * axis_angle(&spec.axis, q[i]));
    }
    LinkFrames {
        positions,
        rotations,
    }
}

fn keypoints_from_frames(frames: &LinkFrames, model: &RobotModel) -> FkResult {
    let mut points = [Vec3::zeros(); Keypoint::COUNT];
    for (p, b) in points.iter_mut().zip(&model.keypoints) {
        *p = frames.positions[b.link] + frames.rotations[b.link] * b.offset;
    }
    FkResult { points }
}

/// Forward kinematics of the full joint map.
pub fn fk(q: &[f64], model: &RobotModel) -> Result<FkResult> {
    check_limits(q, model)?;
    Ok(fk_unchecked(q, model))
}

pub(crate) fn fk_unchecked(q: &[f64], model: &RobotModel) -> FkResult {
    keypoints_from_frames(&link_frames(q, model), model)
}

/// Keypoint Jacobian: row block `3k..3k+3` is `d(keypoint k)/dq`.
#[derive(Debug, Clone)]
pub struct FkJacobian {
    pub matrix: DMatrix<f64>,
}

impl FkJacobian {
    pub fn column(&self, kp: Keypoint, joint: usize) -> Vec3 {
        let r = 3 * kp.index();
        Vec3::new(
            self.matrix[(r, joint)],
            self.matrix[(r + 1, joint)],
            self.matrix[(r + 2, joint)],
        )
    }
}

pub fn fk_jacobian(q: &[f64], model: &RobotModel) -> Result<(FkResult, FkJacobian)> {
    check_limits(q, model)?;
    Ok(fk_with_jacobian(q, model))
}

pub(crate) fn fk_with_jacobian(q: &[f64], model: &RobotModel) -> (FkResult, FkJacobian) {
    let frames = link_frames(q, model);
    let result = keypoints_from_frames(&frames, model);
    let n = model.joints.len();
    let mut matrix = DMatrix::zeros(3 * Keypoint::COUNT, n);
    for kp in Keypoint::ALL {
        let p = result.get(kp);
        let mut link = Some(model.keypoints[kp.index()].link);
        while let Some(j) = link {
            let spec = &model.joints[j];
            let r_par = match spec.parent {
                Some(pi) => frames.rotations[pi],
                None => Mat3::identity(),
            };
            let col = (r_par * spec.axis).cross(&(p - frames.positions[j]));
            for r in 0..3 {
                matrix[(3 * kp.index() + r, j)] = col[r];
            }
            link = spec.parent;
        }
    }
    (result, FkJacobian { matrix })
}
