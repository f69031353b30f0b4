//! Human motion ingestion: 22-keypoint frames, the root-aligned body frame
//! and raw limb vectors.
//!
//! Motion files are JSON lines. The first line is a header object
//! `{"fps": 20.0, "joint_layout": "humanml3d", "label": "..."}`; every
//! following non-empty line is one frame, an array of 22 `[x, y, z]`
//! triples in meters in the source axis convention. Bare `NaN`/`Infinity`
//! tokens (as written by Python's `json`) are accepted by the reader and
//! rejected as non-finite with the frame index.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{rot_z, rotation_between_flagged, Mat3, Vec3};
use crate::io::write_atomic;

pub const NUM_JOINTS: usize = 22;

/// The four limb chains, in descriptor order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Limb {
    LeftArm,
    RightArm,
    LeftLeg,
    RightLeg,
}

impl Limb {
    pub const ALL: [Limb; 4] = [Limb::LeftArm, Limb::RightArm, Limb::LeftLeg, Limb::RightLeg];

    pub fn is_arm(self) -> bool {
        matches!(self, Limb::LeftArm | Limb::RightArm)
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Limb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Limb::LeftArm => "left_arm",
            Limb::RightArm => "right_arm",
            Limb::LeftLeg => "left_leg",
            Limb::RightLeg => "right_leg",
        };
        f.write_str(s)
    }
}

/// Indices of the keypoints the retargeter reads, within a 22-joint frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointLayout {
    pub name: String,
    pub pelvis: usize,
    pub left_hip: usize,
    pub right_hip: usize,
    pub left_knee: usize,
    pub right_knee: usize,
    pub left_ankle: usize,
    pub right_ankle: usize,
    pub left_foot: usize,
    pub right_foot: usize,
    pub left_shoulder: usize,
    pub right_shoulder: usize,
    pub left_elbow: usize,
    pub right_elbow: usize,
    pub left_wrist: usize,
    pub right_wrist: usize,
}

impl JointLayout {
    /// HumanML3D / SMPL-22 ordering. The "foot" keypoint is the toe.
    pub fn humanml3d() -> Self {
        JointLayout {
            name: "humanml3d".into(),
            pelvis: 0,
            left_hip: 1,
            right_hip: 2,
            left_knee: 4,
            right_knee: 5,
            left_ankle: 7,
            right_ankle: 8,
            left_foot: 10,
            right_foot: 11,
            left_shoulder: 16,
            right_shoulder: 17,
            left_elbow: 18,
            right_elbow: 19,
            left_wrist: 20,
            right_wrist: 21,
        }
    }

    /// Keypoint indices of one limb chain.
    fn chain(&self, limb: Limb) -> LimbChain {
        match limb {
            Limb::LeftArm => LimbChain {
                base: self.left_shoulder,
                mid: self.left_elbow,
                end: self.left_wrist,
                dir_from: self.left_elbow,
                dir_to: self.left_wrist,
            },
            Limb::RightArm => LimbChain {
                base: self.right_shoulder,
                mid: self.right_elbow,
                end: self.right_wrist,
                dir_from: self.right_elbow,
                dir_to: self.right_wrist,
            },
            Limb::LeftLeg => LimbChain {
                base: self.left_hip,
                mid: self.left_knee,
                end: self.left_ankle,
                dir_from: self.left_ankle,
                dir_to: self.left_foot,
            },
            Limb::RightLeg => LimbChain {
                base: self.right_hip,
                mid: self.right_knee,
                end: self.right_ankle,
                dir_from: self.right_ankle,
                dir_to: self.right_foot,
            },
        }
    }

    fn validate(&self) -> Result<()> {
        let idx = [
            self.pelvis,
            self.left_hip,
            self.right_hip,
            self.left_knee,
            self.right_knee,
            self.left_ankle,
            self.right_ankle,
            self.left_foot,
            self.right_foot,
            self.left_shoulder,
            self.right_shoulder,
            self.left_elbow,
            self.right_elbow,
            self.left_wrist,
            self.right_wrist,
        ];
        if let Some(i) = idx.iter().find(|&&i| i >= NUM_JOINTS) {
            return Err(Error::Config(format!(
                "joint layout {} has index {i} outside 0..{NUM_JOINTS}",
                self.name
            )));
        }
        Ok(())
    }
}

impl Default for JointLayout {
    fn default() -> Self {
        Self::humanml3d()
    }
}

struct LimbChain {
    base: usize,
    mid: usize,
    end: usize,
    dir_from: usize,
    dir_to: usize,
}

/// One signed source axis, e.g. `+z` or `-x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignedAxis {
    pub axis: usize,
    pub sign: f64,
}

impl FromStr for SignedAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (sign, rest) = match s.as_bytes().first() {
            Some(b'-') => (-1.0, &s[1..]),
            Some(b'+') => (1.0, &s[1..]),
            _ => (1.0, s),
        };
        let axis = match rest {
            "x" => 0,
            "y" => 1,
            "z" => 2,
            _ => return Err(Error::Config(format!("bad axis spec {s:?}"))),
        };
        Ok(SignedAxis { axis, sign })
    }
}

impl fmt::Display for SignedAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.sign < 0.0 { '-' } else { '+' };
        write!(f, "{sign}{}", ['x', 'y', 'z'][self.axis])
    }
}

/// Maps source coordinates to robot coordinates (x forward, y left, z up).
/// Entry `i` names the source axis feeding robot axis `i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisRemap(pub [SignedAxis; 3]);

impl AxisRemap {
    /// y-up, z-forward, x-left sources (HumanML3D) to the robot convention.
    pub fn y_up() -> Self {
        AxisRemap([
            SignedAxis { axis: 2, sign: 1.0 },
            SignedAxis { axis: 0, sign: 1.0 },
            SignedAxis { axis: 1, sign: 1.0 },
        ])
    }

    pub fn identity() -> Self {
        AxisRemap([
            SignedAxis { axis: 0, sign: 1.0 },
            SignedAxis { axis: 1, sign: 1.0 },
            SignedAxis { axis: 2, sign: 1.0 },
        ])
    }

    pub fn parse(spec: &[String]) -> Result<Self> {
        if spec.len() != 3 {
            return Err(Error::Config(format!(
                "axis remap needs 3 entries, got {}",
                spec.len()
            )));
        }
        let axes = [spec[0].parse()?, spec[1].parse()?, spec[2].parse()?];
        let mut seen = [false; 3];
        for a in &axes {
            let a: &SignedAxis = a;
            if seen[a.axis] {
                return Err(Error::Config(format!("axis remap {spec:?} repeats an axis")));
            }
            seen[a.axis] = true;
        }
        Ok(AxisRemap(axes))
    }

    pub fn to_strings(&self) -> Vec<String> {
        self.0.iter().map(|a| a.to_string()).collect()
    }

    pub fn apply(&self, src: &Vec3) -> Vec3 {
        Vec3::from_fn(|i, _| self.0[i].sign * src[self.0[i].axis])
    }

    pub fn invert(&self, robot: &Vec3) -> Vec3 {
        let mut out = Vec3::zeros();
        for (i, a) in self.0.iter().enumerate() {
            out[a.axis] = a.sign * robot[i];
        }
        out
    }
}

impl Default for AxisRemap {
    fn default() -> Self {
        Self::y_up()
    }
}

/// One motion frame in robot-convention world coordinates (meters).
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonFrame {
    pub joints: Vec<Vec3>,
}

impl SkeletonFrame {
    pub fn new(joints: Vec<Vec3>) -> Result<Self> {
        if joints.len() != NUM_JOINTS {
            return Err(Error::Validation(format!(
                "frame has {} joints, expected {NUM_JOINTS}",
                joints.len()
            )));
        }
        if joints.iter().any(|j| j.iter().any(|v| !v.is_finite())) {
            return Err(Error::Validation("frame has non-finite coordinates".into()));
        }
        Ok(SkeletonFrame { joints })
    }

    pub fn map(&self, f: impl Fn(&Vec3) -> Vec3) -> SkeletonFrame {
        SkeletonFrame {
            joints: self.joints.iter().map(f).collect(),
        }
    }

    /// Rejects frames whose limb segments collapse to zero length.
    pub fn check_segments(&self, layout: &JointLayout) -> Result<()> {
        for limb in Limb::ALL {
            let c = layout.chain(limb);
            let prox = (self.joints[c.mid] - self.joints[c.base]).norm();
            let dist = (self.joints[c.end] - self.joints[c.mid]).norm();
            if !(prox > 0.0 && dist > 0.0) {
                return Err(Error::DegenerateFrame(format!(
                    "{limb} has a zero-length segment"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    pub frames: Vec<SkeletonFrame>,
    pub fps: f64,
    pub label: String,
    pub joint_layout: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct MotionHeader {
    fps: f64,
    joint_layout: String,
    #[serde(default)]
    label: String,
}

/// Reads and validates a motion file, remapping axes into the robot
/// convention.
pub fn load_motion(path: &Path, layout: &JointLayout, remap: &AxisRemap) -> Result<MotionSequence> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_motion(&text, layout, remap).map_err(|msg| Error::parse(path, msg))
}

fn parse_motion(
    text: &str,
    layout: &JointLayout,
    remap: &AxisRemap,
) -> std::result::Result<MotionSequence, String> {
    layout.validate().map_err(|e| e.to_string())?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header_line = lines.next().ok_or("empty motion file")?;
    let header: MotionHeader =
        serde_json::from_str(header_line).map_err(|e| format!("bad header: {e}"))?;
    if !(header.fps.is_finite() && header.fps > 0.0) {
        return Err(format!("fps must be positive, got {}", header.fps));
    }
    if header.joint_layout != layout.name {
        return Err(format!(
            "file declares joint layout {:?} but {:?} is configured",
            header.joint_layout, layout.name
        ));
    }
    let mut frames = Vec::new();
    for (idx, line) in lines.enumerate() {
        let joints = parse_frame_line(line).map_err(|m| format!("frame {idx}: {m}"))?;
        let frame = SkeletonFrame {
            joints: joints.iter().map(|j| remap.apply(j)).collect(),
        };
        frame
            .check_segments(layout)
            .map_err(|e| format!("frame {idx}: {e}"))?;
        frames.push(frame);
    }
    if frames.is_empty() {
        return Err("motion file has no frames".into());
    }
    Ok(MotionSequence {
        frames,
        fps: header.fps,
        label: header.label,
        joint_layout: header.joint_layout,
    })
}

fn parse_frame_line(line: &str) -> std::result::Result<Vec<Vec3>, String> {
    // Python writes non-finite floats as bare tokens; turn them into nulls so
    // serde_json can still report the shape and we can name the frame.
    let cleaned = line
        .replace("-Infinity", "null")
        .replace("Infinity", "null")
        .replace("NaN", "null");
    let raw: Vec<Vec<Option<f64>>> =
        serde_json::from_str(&cleaned).map_err(|e| format!("malformed frame: {e}"))?;
    if raw.len() != NUM_JOINTS {
        return Err(format!("{} joints, expected {NUM_JOINTS}", raw.len()));
    }
    raw.iter()
        .enumerate()
        .map(|(j, p)| {
            if p.len() != 3 {
                return Err(format!("joint {j} has {} coordinates", p.len()));
            }
            match (p[0], p[1], p[2]) {
                (Some(x), Some(y), Some(z)) if x.is_finite() && y.is_finite() && z.is_finite() => {
                    Ok(Vec3::new(x, y, z))
                }
                _ => Err(format!("joint {j} has a non-finite coordinate")),
            }
        })
        .collect()
}

/// Writes a sequence back in the source convention, one frame per line.
pub fn save_motion(path: &Path, seq: &MotionSequence, remap: &AxisRemap) -> Result<()> {
    let header = MotionHeader {
        fps: seq.fps,
        joint_layout: seq.joint_layout.clone(),
        label: seq.label.clone(),
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for frame in &seq.frames {
        let rows: Vec<[f64; 3]> = frame
            .joints
            .iter()
            .map(|j| {
                let s = remap.invert(j);
                [s.x, s.y, s.z]
            })
            .collect();
        out.push_str(&serde_json::to_string(&rows).expect("frame serializes"));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// Heading of a frame: `(root->right hip) x (root->left hip)` flattened onto
/// the ground plane and normalized.
pub fn root_forward(frame: &SkeletonFrame, layout: &JointLayout) -> Result<Vec3> {
    let root = frame.joints[layout.pelvis];
    let to_right = frame.joints[layout.right_hip] - root;
    let to_left = frame.joints[layout.left_hip] - root;
    let mut fwd = to_right.cross(&to_left);
    if fwd.norm() < 1e-9 {
        return Err(Error::DegenerateFrame(
            "root and hips are collinear; no forward direction".into(),
        ));
    }
    fwd.z = 0.0;
    let n = fwd.norm();
    if n < 1e-9 {
        return Err(Error::DegenerateFrame(
            "root forward vector is vertical; heading undefined".into(),
        ));
    }
    Ok(fwd / n)
}

/// Body-aligned frame of a motion frame relative to the first frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RootFrame {
    /// Rotation from the first frame's forward vector to the current one.
    pub rotation: Mat3,
    /// Yaw alignment of the first frame's forward vector onto robot +x.
    pub heading: Mat3,
    /// Set when the rotation came from the parallel/antiparallel identity branch.
    pub degenerate: bool,
}

impl RootFrame {
    pub fn identity() -> Self {
        RootFrame {
            rotation: Mat3::identity(),
            heading: Mat3::identity(),
            degenerate: false,
        }
    }

    /// World vector expressed in the robot body frame.
    pub fn to_body(&self, v: &Vec3) -> Vec3 {
        self.heading * (self.rotation.transpose() * v)
    }
}

pub fn root_frame(
    first: &SkeletonFrame,
    current: &SkeletonFrame,
    layout: &JointLayout,
) -> Result<RootFrame> {
    let f0 = root_forward(first, layout)?;
    let f = root_forward(current, layout)?;
    let (rotation, degenerate) = rotation_between_flagged(&f0, &f)?;
    let heading = rot_z(-f0.y.atan2(f0.x));
    Ok(RootFrame {
        rotation,
        heading,
        degenerate,
    })
}

/// Body-frame vectors of one limb.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimbVectors {
    /// Chain root to chain end (shoulder->wrist, hip->ankle).
    pub position: Vec3,
    /// Distal direction (elbow->wrist, ankle->foot).
    pub direction: Vec3,
    /// Proximal plus distal segment length in this frame.
    pub length: f64,
}

pub fn limb_vectors(
    frame: &SkeletonFrame,
    rf: &RootFrame,
    layout: &JointLayout,
) -> Result<[LimbVectors; 4]> {
    let j = &frame.joints;
    let mut out = [LimbVectors {
        position: Vec3::zeros(),
        direction: Vec3::zeros(),
        length: 0.0,
    }; 4];
    for limb in Limb::ALL {
        let c = layout.chain(limb);
        let prox = (j[c.mid] - j[c.base]).norm();
        let dist = (j[c.end] - j[c.mid]).norm();
        let direction = j[c.dir_to] - j[c.dir_from];
        if !(prox > 0.0 && dist > 0.0) || direction.norm() == 0.0 {
            return Err(Error::DegenerateFrame(format!("{limb} has a zero-length segment")));
        }
        out[limb.index()] = LimbVectors {
            position: rf.to_body(&(j[c.end] - j[c.base])),
            direction: rf.to_body(&direction),
            length: prox + dist,
        };
    }
    Ok(out)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    /// Standing human in robot convention facing +x, left arm straight out
    /// along +y (T-pose on the left), right arm hanging.
    pub(crate) fn t_pose() -> SkeletonFrame {
        let mut j = vec![Vec3::zeros(); NUM_JOINTS];
        let l = JointLayout::humanml3d();
        j[l.pelvis] = Vec3::new(0.0, 0.0, 1.0);
        j[l.left_hip] = Vec3::new(0.0, 0.1, 0.92);
        j[l.right_hip] = Vec3::new(0.0, -0.1, 0.92);
        j[l.left_knee] = Vec3::new(0.0, 0.1, 0.5);
        j[l.right_knee] = Vec3::new(0.0, -0.1, 0.5);
        j[l.left_ankle] = Vec3::new(0.0, 0.1, 0.1);
        j[l.right_ankle] = Vec3::new(0.0, -0.1, 0.1);
        j[l.left_foot] = Vec3::new(0.15, 0.1, 0.05);
        j[l.right_foot] = Vec3::new(0.15, -0.1, 0.05);
        j[3] = Vec3::new(0.0, 0.0, 1.1);
        j[6] = Vec3::new(0.0, 0.0, 1.2);
        j[9] = Vec3::new(0.0, 0.0, 1.3);
        j[12] = Vec3::new(0.0, 0.0, 1.5);
        j[13] = Vec3::new(0.0, 0.08, 1.42);
        j[14] = Vec3::new(0.0, -0.08, 1.42);
        j[15] = Vec3::new(0.0, 0.0, 1.6);
        j[l.left_shoulder] = Vec3::new(0.0, 0.18, 1.42);
        j[l.right_shoulder] = Vec3::new(0.0, -0.18, 1.42);
        j[l.left_elbow] = Vec3::new(0.0, 0.48, 1.42);
        j[l.right_elbow] = Vec3::new(0.0, -0.18, 1.12);
        j[l.left_wrist] = Vec3::new(0.0, 0.73, 1.42);
        j[l.right_wrist] = Vec3::new(0.0, -0.18, 0.87);
        SkeletonFrame::new(j).unwrap()
    }

    #[test]
    fn root_forward_faces_x() {
        let layout = JointLayout::humanml3d();
        let mut j = vec![Vec3::new(0.0, 0.0, -1.0); NUM_JOINTS];
        j[0] = Vec3::zeros();
        j[layout.right_hip] = Vec3::new(0.0, -0.1, -0.05);
        j[layout.left_hip] = Vec3::new(0.0, 0.1, -0.05);
        let frame = SkeletonFrame { joints: j };
        assert_relative_eq!(root_forward(&frame, &layout).unwrap(), Vec3::x(), epsilon = 1e-15);
        let turned = frame.map(|p| rot_z(FRAC_PI_2) * p);
        assert_relative_eq!(root_forward(&turned, &layout).unwrap(), Vec3::y(), epsilon = 1e-15);
    }

    #[test]
    fn collinear_hips_are_degenerate() {
        let layout = JointLayout::humanml3d();
        let mut j = vec![Vec3::zeros(); NUM_JOINTS];
        j[layout.right_hip] = Vec3::new(0.0, -0.1, 0.0);
        j[layout.left_hip] = Vec3::new(0.0, 0.1, 0.0);
        let frame = SkeletonFrame { joints: j };
        assert!(matches!(
            root_forward(&frame, &layout),
            Err(Error::DegenerateFrame(_))
        ));
    }

    #[test]
    fn root_frame_examples() {
        let layout = JointLayout::humanml3d();
        let f = t_pose();
        let rf = root_frame(&f, &f, &layout).unwrap();
        assert_relative_eq!(rf.rotation, Mat3::identity(), epsilon = 1e-15);
        let turned = f.map(|p| rot_z(FRAC_PI_2) * p);
        let rf = root_frame(&f, &turned, &layout).unwrap();
        assert_relative_eq!(rf.rotation, rot_z(FRAC_PI_2), epsilon = 1e-12);
        let back = f.map(|p| rot_z(std::f64::consts::PI) * p);
        let rf = root_frame(&f, &back, &layout).unwrap();
        assert!(rf.degenerate);
        assert_eq!(rf.rotation, Mat3::identity());
    }

    #[test]
    fn t_pose_left_arm() {
        let layout = JointLayout::humanml3d();
        let f = t_pose();
        let limbs = limb_vectors(&f, &RootFrame::identity(), &layout).unwrap();
        let arm = limbs[Limb::LeftArm.index()];
        assert_relative_eq!(arm.position, Vec3::new(0.0, 0.55, 0.0), epsilon = 1e-12);
        assert_relative_eq!(arm.length, 0.55, epsilon = 1e-12);
        assert_relative_eq!(arm.direction, Vec3::new(0.0, 0.25, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn limb_vectors_heading_invariant() {
        let layout = JointLayout::humanml3d();
        let f = t_pose();
        let rf = root_frame(&f, &f, &layout).unwrap();
        let base = limb_vectors(&f, &rf, &layout).unwrap();
        let turned = f.map(|p| rot_z(FRAC_PI_2) * p);
        let rf2 = root_frame(&turned, &turned, &layout).unwrap();
        let rotated = limb_vectors(&turned, &rf2, &layout).unwrap();
        for (a, b) in base.iter().zip(&rotated) {
            assert_relative_eq!(a.position, b.position, epsilon = 1e-12);
            assert_relative_eq!(a.direction, b.direction, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_segment_rejected() {
        let layout = JointLayout::humanml3d();
        let mut f = t_pose();
        f.joints[layout.left_elbow] = f.joints[layout.left_shoulder];
        assert!(matches!(
            limb_vectors(&f, &RootFrame::identity(), &layout),
            Err(Error::DegenerateFrame(_))
        ));
    }

    #[test]
    fn axis_remap_parse_and_invert() {
        let r = AxisRemap::parse(&["+z".into(), "x".into(), "-y".into()]).unwrap();
        let v = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(r.apply(&v), Vec3::new(3.0, 1.0, -2.0));
        assert_eq!(r.invert(&r.apply(&v)), v);
        assert!(AxisRemap::parse(&["x".into(), "x".into(), "z".into()]).is_err());
        assert!(AxisRemap::parse(&["w".into(), "x".into(), "z".into()]).is_err());
    }

    #[test]
    fn frame_line_parsing() {
        let ok = format!("[{}]", vec!["[0,0,0]"; 22].join(","));
        assert_eq!(parse_frame_line(&ok).unwrap().len(), 22);
        let short = format!("[{}]", vec!["[0,0,0]"; 21].join(","));
        assert!(parse_frame_line(&short).unwrap_err().contains("21 joints"));
        let mut parts = vec!["[0,0,0]"; 22];
        parts[3] = "[0,NaN,0]";
        let nan = format!("[{}]", parts.join(","));
        assert!(parse_frame_line(&nan).unwrap_err().contains("non-finite"));
    }
}
