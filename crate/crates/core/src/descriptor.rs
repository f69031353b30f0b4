//! Normalized limb descriptors for human frames and robot poses.
//!
//! Each limb contributes a norm-position (chain vector over limb length)
//! and the quaternion rotating the model's default distal direction onto
//! the observed one. Flattened layout per limb is
//! `[q_w, q_x, q_y, q_z, d_x, d_y, d_z]`, limbs ordered left arm, right
//! arm, left leg, right leg: 28 values in total.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, Matrix4, SMatrix, Vector4};

use crate::error::{Error, Result};
use crate::geom::{mat_to_quat, rotation_between_flagged, skew, Quat, Vec3};
use crate::io::write_atomic;
use crate::robot::{fk_with_jacobian, FkJacobian, FkResult, Keypoint, RobotModel};
use crate::skeleton::{limb_vectors, JointLayout, Limb, RootFrame, SkeletonFrame};

pub const DESCRIPTOR_DIM: usize = 28;
const LIMB_DIM: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimbDescriptor {
    pub norm_pos: Vec3,
    pub rot: Quat,
}

impl LimbDescriptor {
    pub const DEFAULT: LimbDescriptor = LimbDescriptor {
        norm_pos: Vec3::new(0.0, 0.0, 0.0),
        rot: Quat::IDENTITY,
    };
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseDescriptor {
    pub limbs: [LimbDescriptor; 4],
    /// Limbs whose rotation came from the parallel/antiparallel identity branch.
    pub degenerate: [bool; 4],
}

impl PoseDescriptor {
    pub fn new(limbs: [LimbDescriptor; 4]) -> Self {
        PoseDescriptor {
            limbs,
            degenerate: [false; 4],
        }
    }

    pub fn limb(&self, limb: Limb) -> &LimbDescriptor {
        &self.limbs[limb.index()]
    }

    pub fn flatten(&self) -> [f64; DESCRIPTOR_DIM] {
        let mut out = [0.0; DESCRIPTOR_DIM];
        for (chunk, l) in out.chunks_exact_mut(LIMB_DIM).zip(&self.limbs) {
            chunk[..4].copy_from_slice(&l.rot.to_array());
            chunk[4..].copy_from_slice(l.norm_pos.as_slice());
        }
        out
    }

    pub fn unflatten(x: &[f64]) -> Result<Self> {
        if x.len() != DESCRIPTOR_DIM {
            return Err(Error::Validation(format!(
                "descriptor needs {DESCRIPTOR_DIM} values, got {}",
                x.len()
            )));
        }
        let mut limbs = [LimbDescriptor::DEFAULT; 4];
        for (l, c) in limbs.iter_mut().zip(x.chunks_exact(LIMB_DIM)) {
            l.rot = Quat::new(c[0], c[1], c[2], c[3]);
            l.norm_pos = Vec3::new(c[4], c[5], c[6]);
        }
        Ok(PoseDescriptor::new(limbs))
    }
}

/// Quaternion rotating `default_dir` onto `dir`, canonical hemisphere.
fn direction_quat(default_dir: &Vec3, dir: &Vec3, limb: Limb) -> Result<(Quat, bool)> {
    if !(dir.norm() > 1e-12) {
        return Err(Error::DegenerateFrame(format!(
            "{limb} direction vector is (near) zero"
        )));
    }
    let (r, degenerate) = rotation_between_flagged(default_dir, dir)?;
    Ok((mat_to_quat(&r)?, degenerate))
}

fn default_dir(limb: Limb, model: &RobotModel) -> Vec3 {
    if limb.is_arm() {
        model.default_arm_dir
    } else {
        model.default_foot_dir
    }
}

pub fn human_descriptor(
    frame: &SkeletonFrame,
    rf: &RootFrame,
    layout: &JointLayout,
    model: &RobotModel,
) -> Result<PoseDescriptor> {
    let vecs = limb_vectors(frame, rf, layout)?;
    let mut pd = PoseDescriptor::new([LimbDescriptor::DEFAULT; 4]);
    for limb in Limb::ALL {
        let v = &vecs[limb.index()];
        let (rot, degenerate) = direction_quat(&default_dir(limb, model), &v.direction, limb)?;
        pd.limbs[limb.index()] = LimbDescriptor {
            norm_pos: v.position / v.length,
            rot,
        };
        pd.degenerate[limb.index()] = degenerate;
    }
    Ok(pd)
}

/// Keypoints feeding one limb's descriptor:
/// `(chain base, chain end, direction from, direction to)`.
fn robot_chain(limb: Limb) -> (Keypoint, Keypoint, Keypoint, Keypoint) {
    use Keypoint::*;
    match limb {
        Limb::LeftArm => (LeftShoulder, LeftWrist, LeftElbow, LeftWrist),
        Limb::RightArm => (RightShoulder, RightWrist, RightElbow, RightWrist),
        Limb::LeftLeg => (LeftHip, LeftAnkle, LeftAnkle, LeftFoot),
        Limb::RightLeg => (RightHip, RightAnkle, RightAnkle, RightFoot),
    }
}

fn limb_length(limb: Limb, model: &RobotModel) -> f64 {
    if limb.is_arm() {
        model.l_arm
    } else {
        model.l_leg
    }
}

pub fn robot_descriptor(fkr: &FkResult, model: &RobotModel) -> Result<PoseDescriptor> {
    let mut pd = PoseDescriptor::new([LimbDescriptor::DEFAULT; 4]);
    for limb in Limb::ALL {
        let (base, end, from, to) = robot_chain(limb);
        let dir = fkr.get(to) - fkr.get(from);
        let (rot, degenerate) = direction_quat(&default_dir(limb, model), &dir, limb)?;
        pd.limbs[limb.index()] = LimbDescriptor {
            norm_pos: (fkr.get(end) - fkr.get(base)) / limb_length(limb, model),
            rot,
        };
        pd.degenerate[limb.index()] = degenerate;
    }
    Ok(pd)
}

fn keypoint_rows(jac: &FkJacobian, kp: Keypoint) -> DMatrix<f64> {
    jac.matrix.rows(3 * kp.index(), 3).into_owned()
}

/// Robot descriptor at the full joint map `q` together with its 28 x n
/// Jacobian (rows in flattened layout).
///
/// The rotation part is differentiated through the closed form of the
/// two-vector rotation, `normalize(1 + a.b, a x b)`, which coincides with
/// the Rodrigues construction outside the identity branch; inside that
/// branch the rotation is constant and its rows are zero.
pub fn robot_descriptor_jacobian(
    q: &[f64],
    model: &RobotModel,
) -> Result<(PoseDescriptor, DMatrix<f64>)> {
    let (fkr, jac) = fk_with_jacobian(q, model);
    let pd = robot_descriptor(&fkr, model)?;
    let mut out = DMatrix::zeros(DESCRIPTOR_DIM, q.len());
    for limb in Limb::ALL {
        let row0 = limb.index() * LIMB_DIM;
        let (base, end, from, to) = robot_chain(limb);
        let dpos = (keypoint_rows(&jac, end) - keypoint_rows(&jac, base)) / limb_length(limb, model);
        out.view_mut((row0 + 4, 0), (3, q.len())).copy_from(&dpos);
        if pd.degenerate[limb.index()] {
            continue;
        }
        let a = default_dir(limb, model);
        let d = fkr.get(to) - fkr.get(from);
        let dn = d.norm();
        let b = d / dn;
        let v = Vector4::new(1.0 + a.dot(&b), 0.0, 0.0, 0.0);
        let cross = a.cross(&b);
        let v = Vector4::new(v[0], cross.x, cross.y, cross.z);
        let vn = v.norm();
        let qv = v / vn;
        let dq_dv = (Matrix4::identity() - qv * qv.transpose()) / vn;
        let mut dv_db = SMatrix::<f64, 4, 3>::zeros();
        dv_db.row_mut(0).copy_from(&a.transpose());
        dv_db.fixed_view_mut::<3, 3>(1, 0).copy_from(&skew(&a));
        let db_dd = (nalgebra::Matrix3::identity() - b * b.transpose()) / dn;
        let dq_dd = dq_dv * dv_db * db_dd;
        let dd_dq = keypoint_rows(&jac, to) - keypoint_rows(&jac, from);
        let dq_dd = DMatrix::from_column_slice(4, 3, dq_dd.as_slice());
        out.view_mut((row0, 0), (4, q.len())).copy_from(&(dq_dd * dd_dq));
    }
    Ok((pd, out))
}

/// Writes one flattened descriptor per line.
pub fn save_descriptors(path: &Path, descriptors: &[PoseDescriptor]) -> Result<()> {
    let mut out = String::from("# 28 values per line: per limb [qw qx qy qz dx dy dz]; L-arm R-arm L-leg R-leg\n");
    for d in descriptors {
        let line: Vec<String> = d.flatten().iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

pub fn load_descriptors(path: &Path) -> Result<Vec<PoseDescriptor>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_descriptors(&text).map_err(|msg| Error::parse(path, msg))
}

/// Parses the text written by [`save_descriptors`]. Blank lines and lines
/// starting with `#` are skipped.
pub fn parse_descriptors(text: &str) -> std::result::Result<Vec<PoseDescriptor>, String> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let values = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| format!("line {}: {e}", n + 1))?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(format!("line {}: non-finite value", n + 1));
        }
        out.push(PoseDescriptor::unflatten(&values).map_err(|e| format!("line {}: {e}", n + 1))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{axis_angle, rot_z};
    use crate::robot::{expand_unchecked, fk};
    use crate::skeleton::tests::t_pose;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2};

    fn with_left_arm(elbow: Vec3, wrist: Vec3) -> SkeletonFrame {
        let layout = JointLayout::humanml3d();
        let mut f = t_pose();
        let s = f.joints[layout.left_shoulder];
        f.joints[layout.left_elbow] = s + elbow;
        f.joints[layout.left_wrist] = s + wrist;
        f
    }

    fn left_arm(f: &SkeletonFrame) -> LimbDescriptor {
        let m = RobotModel::nao();
        let d = human_descriptor(f, &RootFrame::identity(), &JointLayout::humanml3d(), &m).unwrap();
        *d.limb(Limb::LeftArm)
    }

    #[test]
    fn straight_forward_arm_is_default() {
        let l = left_arm(&with_left_arm(Vec3::new(0.3, 0.0, 0.0), Vec3::new(0.55, 0.0, 0.0)));
        assert_relative_eq!(l.norm_pos, Vec3::x(), epsilon = 1e-15);
        assert_eq!(l.rot, Quat::IDENTITY);
    }

    #[test]
    fn hanging_arm_quarter_turn() {
        let l = left_arm(&with_left_arm(Vec3::new(0.0, 0.0, -0.3), Vec3::new(0.0, 0.0, -0.55)));
        assert_relative_eq!(l.norm_pos, -Vec3::z(), epsilon = 1e-15);
        // x -> -z is a quarter turn about +y
        assert_relative_eq!(l.rot.w, FRAC_1_SQRT_2, epsilon = 1e-12);
        assert_relative_eq!(l.rot.y, FRAC_1_SQRT_2, epsilon = 1e-12);
        assert_relative_eq!(l.rot.x.abs() + l.rot.z.abs(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn folded_arm_norm() {
        let l = left_arm(&with_left_arm(Vec3::new(0.3, 0.0, 0.0), Vec3::new(0.05, 0.0, 0.0)));
        assert_relative_eq!(l.norm_pos.norm(), 0.05 / 0.55, epsilon = 1e-12);
    }

    #[test]
    fn robot_zero_pose_descriptor() {
        let m = RobotModel::nao();
        let pd = robot_descriptor(&fk(&[0.0; 22], &m).unwrap(), &m).unwrap();
        for limb in Limb::ALL {
            assert_eq!(pd.limb(limb).rot, Quat::IDENTITY);
        }
        assert_relative_eq!(pd.limb(Limb::LeftArm).norm_pos, Vec3::x(), epsilon = 1e-12);
        assert_relative_eq!(pd.limb(Limb::LeftLeg).norm_pos, -Vec3::z(), epsilon = 1e-12);
    }

    #[test]
    fn shoulder_roll_rotates_norm_pos() {
        let m = RobotModel::nao();
        let zero = robot_descriptor(&fk(&[0.0; 22], &m).unwrap(), &m).unwrap();
        let phi = 0.7;
        let mut q = vec![0.0; 22];
        q[m.joint_index("LShoulderRoll").unwrap()] = phi;
        let pd = robot_descriptor(&fk(&q, &m).unwrap(), &m).unwrap();
        let axis = m.joints[m.joint_index("LShoulderRoll").unwrap()].axis;
        let expected = axis_angle(&axis, phi) * zero.limb(Limb::LeftArm).norm_pos;
        assert_relative_eq!(pd.limb(Limb::LeftArm).norm_pos, expected, epsilon = 1e-12);
    }

    #[test]
    fn flatten_layout_and_errors() {
        let pd = PoseDescriptor::new([LimbDescriptor::DEFAULT; 4]);
        let flat = pd.flatten();
        for c in flat.chunks(7) {
            assert_eq!(c, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        }
        assert!(matches!(PoseDescriptor::unflatten(&[0.0; 27]), Err(Error::Validation(_))));
        assert_eq!(PoseDescriptor::unflatten(&flat).unwrap(), pd);
    }

    #[test]
    fn random_pose_bounds_and_units() {
        let m = RobotModel::nao();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (lo, hi) = m.command_limits();
        for _ in 0..500 {
            let cmd: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| rng.gen_range(*a..*b)).collect();
            let q = expand_unchecked(&cmd, &m);
            let pd = robot_descriptor(&fk(&q, &m).unwrap(), &m).unwrap();
            for l in &pd.limbs {
                assert!(l.norm_pos.norm() <= 1.0 + 1e-6);
                assert!((l.rot.norm() - 1.0).abs() < 1e-12);
                assert!(l.rot.w >= 0.0);
            }
            let back = PoseDescriptor::unflatten(&pd.flatten()).unwrap();
            assert_eq!(back.limbs, pd.limbs);
        }
    }

    #[test]
    fn descriptor_jacobian_matches_finite_differences() {
        let m = RobotModel::nao();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (lo, hi) = m.command_limits();
        let h = 1e-6;
        for _ in 0..50 {
            let cmd: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| rng.gen_range(*a..*b)).collect();
            let q = expand_unchecked(&cmd, &m);
            let (pd, jac) = robot_descriptor_jacobian(&q, &m).unwrap();
            if pd.degenerate.iter().any(|&d| d) {
                continue;
            }
            for j in 0..22 {
                let mut qp = q.clone();
                let mut qm = q.clone();
                qp[j] += h;
                qm[j] -= h;
                let fp = robot_descriptor(&crate::robot::fk_unchecked(&qp, &m), &m).unwrap().flatten();
                let fm = robot_descriptor(&crate::robot::fk_unchecked(&qm, &m), &m).unwrap().flatten();
                for r in 0..DESCRIPTOR_DIM {
                    let fd = (fp[r] - fm[r]) / (2.0 * h);
                    assert!((fd - jac[(r, j)]).abs() < 1e-6, "row {r} joint {j}");
                }
            }
        }
    }

    #[test]
    fn scale_and_heading_invariance() {
        let m = RobotModel::nao();
        let layout = JointLayout::humanml3d();
        let f = t_pose();
        let base = human_descriptor(&f, &crate::skeleton::root_frame(&f, &f, &layout).unwrap(), &layout, &m).unwrap();
        for s in [0.5, 2.0, 10.0] {
            let g = f.map(|p| p * s);
            let rf = crate::skeleton::root_frame(&g, &g, &layout).unwrap();
            let d = human_descriptor(&g, &rf, &layout, &m).unwrap();
            for (a, b) in d.flatten().iter().zip(base.flatten()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
        let g = f.map(|p| rot_z(FRAC_PI_2) * p);
        let rf = crate::skeleton::root_frame(&g, &g, &layout).unwrap();
        let d = human_descriptor(&g, &rf, &layout, &m).unwrap();
        for (a, b) in d.flatten().iter().zip(base.flatten()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn dump_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.txt");
        let m = RobotModel::nao();
        let pd = robot_descriptor(&fk(&[0.0; 22], &m).unwrap(), &m).unwrap();
        save_descriptors(&p, &[pd, pd]).unwrap();
        let back = load_descriptors(&p).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].limbs, pd.limbs);
        fs::write(&p, "1 2 3\n").unwrap();
        assert!(load_descriptors(&p).is_err());
    }
}
