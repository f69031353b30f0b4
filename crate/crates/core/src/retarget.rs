//! Motion-to-command pipeline and the command file format.
//!
//! A command file is JSON Lines: a header object
//! `{"robot": .., "fps": .., "joints": [..]}` naming the 21 commanded joints
//! in order, then one JSON array of 21 radians per frame.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::asn::{forward_batch, MlpParams, Mode};
use crate::descriptor::{human_descriptor, robot_descriptor, PoseDescriptor};
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::ik_oracle::{solve_sequence, SolverConfig};
use crate::io::write_atomic;
use crate::npr::{npr_grad, NprWeights};
use crate::robot::{expand_command, fk, JointCommand, Keypoint, RobotModel};
use crate::skeleton::{root_frame, JointLayout, MotionSequence, SkeletonFrame, NUM_JOINTS};

/// Descriptors of every frame, each expressed relative to the first frame's
/// heading.
pub fn motion_descriptors(
    seq: &MotionSequence,
    layout: &JointLayout,
    model: &RobotModel,
) -> Result<Vec<PoseDescriptor>> {
    let first = seq
        .frames
        .first()
        .ok_or_else(|| Error::Validation("motion has no frames".into()))?;
    seq.frames
        .iter()
        .enumerate()
        .map(|(k, frame)| {
            let rf = root_frame(first, frame, layout)?;
            human_descriptor(frame, &rf, layout, model).map_err(|e| match e {
                Error::DegenerateFrame(msg) => Error::DegenerateFrame(format!("frame {k}: {msg}")),
                other => other,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Retargeted {
    pub commands: Vec<JointCommand>,
    pub losses: Vec<f64>,
    pub converged: Vec<bool>,
}

impl Retargeted {
    pub fn mean_loss(&self) -> f64 {
        self.losses.iter().sum::<f64>() / self.losses.len() as f64
    }
}

pub fn retarget_oracle(
    targets: &[PoseDescriptor],
    model: &RobotModel,
    w: &NprWeights,
    cfg: &SolverConfig,
) -> Result<Retargeted> {
    let reports = solve_sequence(targets, model, w, cfg)?;
    let mut out = Retargeted {
        commands: Vec::with_capacity(targets.len()),
        losses: Vec::with_capacity(targets.len()),
        converged: Vec::with_capacity(targets.len()),
    };
    for (k, r) in reports.into_iter().enumerate() {
        let r = r.map_err(|e| Error::Solver(format!("frame {k}: {e}")))?;
        out.commands.push(r.q);
        out.losses.push(r.final_loss);
        out.converged.push(r.converged);
    }
    Ok(out)
}

pub fn retarget_asn(
    targets: &[PoseDescriptor],
    params: &MlpParams,
    model: &RobotModel,
    w: &NprWeights,
) -> Result<Retargeted> {
    if targets.is_empty() {
        return Err(Error::Validation("empty target sequence".into()));
    }
    let xs: Vec<_> = targets.iter().map(|d| d.flatten()).collect();
    let (q, _) = forward_batch(&xs, params, model, Mode::Infer)?;
    let mut out = Retargeted {
        commands: Vec::with_capacity(targets.len()),
        losses: Vec::with_capacity(targets.len()),
        converged: vec![true; targets.len()],
    };
    for (k, t) in targets.iter().enumerate() {
        let cmd: Vec<f64> = q.column(k).iter().copied().collect();
        out.losses.push(npr_grad(t, &cmd, model, w)?.loss);
        out.commands.push(JointCommand(cmd));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CommandHeader {
    robot: String,
    fps: f64,
    joints: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommandFile {
    pub robot: String,
    pub fps: f64,
    pub frames: Vec<JointCommand>,
}

pub fn save_commands(path: &Path, file: &CommandFile, model: &RobotModel) -> Result<()> {
    let header = CommandHeader {
        robot: file.robot.clone(),
        fps: file.fps,
        joints: model.command_names().iter().map(|s| s.to_string()).collect(),
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for c in &file.frames {
        out.push_str(&serde_json::to_string(&c.0).expect("frame serializes"));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

pub fn load_commands(path: &Path, model: &RobotModel) -> Result<CommandFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_commands(&text, model).map_err(|msg| Error::parse(path, msg))
}

fn parse_commands(text: &str, model: &RobotModel) -> std::result::Result<CommandFile, String> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, head) = lines.next().ok_or("empty command file")?;
    let header: CommandHeader =
        serde_json::from_str(head).map_err(|e| format!("line 1: bad header: {e}"))?;
    if !(header.fps > 0.0 && header.fps.is_finite()) {
        return Err(format!("line 1: fps must be positive, got {}", header.fps));
    }
    let names = model.command_names();
    if header.joints != names {
        return Err(format!(
            "line 1: joint order {:?} does not match the model's {:?}",
            header.joints, names
        ));
    }
    let mut frames = Vec::new();
    for (i, line) in lines {
        let k = frames.len();
        let v: Vec<f64> = serde_json::from_str(line)
            .map_err(|e| format!("line {} (frame {k}): {e}", i + 1))?;
        let cmd = JointCommand(v);
        cmd.validate(model)
            .map_err(|e| format!("line {} (frame {k}): {e}", i + 1))?;
        frames.push(cmd);
    }
    if frames.is_empty() {
        return Err("command file has no frames".into());
    }
    Ok(CommandFile {
        robot: header.robot,
        fps: header.fps,
        frames,
    })
}

/// Builds a 22-joint human skeleton from the robot pose of `cmd`, scaled by
/// `scale` and lifted by `lift` along z. Limb descriptors of the result
/// equal the robot's own, which makes such motions exactly reachable.
pub fn skeleton_from_command(
    cmd: &JointCommand,
    model: &RobotModel,
    layout: &JointLayout,
    scale: f64,
    lift: f64,
) -> Result<SkeletonFrame> {
    let kp = fk(&expand_command(cmd, model)?, model)?;
    let mut j = vec![Vec3::zeros(); NUM_JOINTS];
    let hip_z = 0.5 * (kp.get(Keypoint::LeftHip).z + kp.get(Keypoint::RightHip).z);
    let fill = [
        (3, Vec3::new(0.0, 0.0, hip_z + 0.065)),
        (6, Vec3::new(0.0, 0.0, hip_z + 0.105)),
        (9, Vec3::new(0.0, 0.0, hip_z + 0.145)),
        (12, Vec3::new(0.0, 0.0, 0.126)),
        (13, Vec3::new(0.0, 0.04, 0.1)),
        (14, Vec3::new(0.0, -0.04, 0.1)),
        (15, Vec3::new(0.0, 0.0, 0.18)),
    ];
    for (i, p) in fill {
        j[i] = p;
    }
    j[layout.pelvis] = Vec3::new(0.0, 0.0, hip_z + 0.025);
    let bind = [
        (layout.left_hip, Keypoint::LeftHip),
        (layout.right_hip, Keypoint::RightHip),
        (layout.left_knee, Keypoint::LeftKnee),
        (layout.right_knee, Keypoint::RightKnee),
        (layout.left_ankle, Keypoint::LeftAnkle),
        (layout.right_ankle, Keypoint::RightAnkle),
        (layout.left_foot, Keypoint::LeftFoot),
        (layout.right_foot, Keypoint::RightFoot),
        (layout.left_shoulder, Keypoint::LeftShoulder),
        (layout.right_shoulder, Keypoint::RightShoulder),
        (layout.left_elbow, Keypoint::LeftElbow),
        (layout.right_elbow, Keypoint::RightElbow),
        (layout.left_wrist, Keypoint::LeftWrist),
        (layout.right_wrist, Keypoint::RightWrist),
    ];
    for (i, k) in bind {
        j[i] = kp.get(k);
    }
    let lift = Vec3::new(0.0, 0.0, lift);
    SkeletonFrame::new(j.into_iter().map(|p| p * scale + lift).collect())
}

/// Right-arm wave: shoulder raised sideways, elbow swinging sinusoidally.
pub fn wave_commands(model: &RobotModel, frames: usize, fps: f64) -> Vec<JointCommand> {
    let names = model.command_names();
    let slot = |n: &str| names.iter().position(|x| *x == n).expect("NAO joint name");
    let (sp, sr, ey, er) = (
        slot("RShoulderPitch"),
        slot("RShoulderRoll"),
        slot("RElbowYaw"),
        slot("RElbowRoll"),
    );
    (0..frames)
        .map(|k| {
            let t = k as f64 / fps;
            let phase = (2.0 * std::f64::consts::PI * t).sin();
            let mut c = vec![0.0; names.len()];
            c[sp] = -1.2;
            c[sr] = -0.6 - 0.2 * phase;
            c[ey] = 1.0;
            c[er] = 0.9 + 0.4 * phase;
            JointCommand(c)
        })
        .collect()
}

/// Robot descriptors of a command sequence.
pub fn command_descriptors(cmds: &[JointCommand], model: &RobotModel) -> Result<Vec<PoseDescriptor>> {
    cmds.iter()
        .map(|c| robot_descriptor(&fk(&expand_command(c, model)?, model)?, model))
        .collect()
}
