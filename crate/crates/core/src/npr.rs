//! NPR loss: quaternion angular error plus limb-length weighted MSE of the
//! norm-positions, with analytic gradients.
//!
//! Aggregation over limbs uses means (two arms, two legs, four rotations)
//! so the weights stay comparable whatever the limb count.

use serde::{Deserialize, Serialize};

use crate::descriptor::{robot_descriptor_jacobian, PoseDescriptor, DESCRIPTOR_DIM};
use crate::error::{Error, Result};
use crate::geom::{quat_inv, quat_mul, Quat, Vec3};
use crate::robot::{expand_unchecked, RobotModel};
use crate::skeleton::Limb;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NprWeights {
    pub w_trans: f64,
    pub w_quat: f64,
    pub l_arm: f64,
    pub l_leg: f64,
}

impl NprWeights {
    /// Unit term weights with limb lengths taken from the model.
    pub fn for_model(model: &RobotModel) -> Self {
        NprWeights {
            w_trans: 1.0,
            w_quat: 1.0,
            l_arm: model.l_arm,
            l_leg: model.l_leg,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.w_trans >= 0.0
            && self.w_quat >= 0.0
            && self.w_trans.is_finite()
            && self.w_quat.is_finite()
            && self.l_arm > 0.0
            && self.l_leg > 0.0;
        if !ok {
            return Err(Error::Validation(format!("invalid NPR weights {self:?}")));
        }
        Ok(())
    }
}

fn check_unit(q: &Quat) -> Result<()> {
    if !q.is_unit(1e-6) {
        return Err(Error::Validation(format!(
            "quaternion {q:?} is not unit (norm {})",
            q.norm()
        )));
    }
    Ok(())
}

/// Angle of `q_target * q_pred^-1`, taken on the `|w|` hemisphere so that
/// `q` and `-q` are the same rotation. Range `[0, pi]`.
pub fn quat_loss(q_target: &Quat, q_pred: &Quat) -> Result<f64> {
    check_unit(q_target)?;
    check_unit(q_pred)?;
    Ok(quat_loss_unchecked(q_target, q_pred))
}

fn quat_loss_unchecked(q_target: &Quat, q_pred: &Quat) -> f64 {
    let e = quat_mul(q_target, &quat_inv(q_pred));
    2.0 * e.w.abs().clamp(0.0, 1.0).acos()
}

/// Gradient of [`quat_loss`] with respect to `q_pred`, treating the
/// components as free variables. Zero where `|w_e| >= 1`.
fn quat_loss_grad(q_target: &Quat, q_pred: &Quat) -> [f64; 4] {
    // For unit inputs w_e = q_target . q_pred.
    let c = q_target.dot(q_pred);
    let a = c.abs();
    if a >= 1.0 {
        return [0.0; 4];
    }
    let scale = -2.0 / (1.0 - a * a).sqrt() * c.signum();
    q_target.to_array().map(|v| scale * v)
}

pub fn trans_loss(p_target: &Vec3, p_pred: &Vec3) -> f64 {
    (p_target - p_pred).norm_squared() / 3.0
}

/// Combined weighted loss.
pub fn npr_loss(target: &PoseDescriptor, pred: &PoseDescriptor, w: &NprWeights) -> Result<f64> {
    for l in target.limbs.iter().chain(&pred.limbs) {
        check_unit(&l.rot)?;
    }
    Ok(npr_loss_unchecked(target, pred, w))
}

fn npr_loss_unchecked(target: &PoseDescriptor, pred: &PoseDescriptor, w: &NprWeights) -> f64 {
    let mut arm = 0.0;
    let mut leg = 0.0;
    let mut rot = 0.0;
    for limb in Limb::ALL {
        let (t, p) = (target.limb(limb), pred.limb(limb));
        let tl = trans_loss(&t.norm_pos, &p.norm_pos);
        if limb.is_arm() {
            arm += tl;
        } else {
            leg += tl;
        }
        rot += quat_loss_unchecked(&t.rot, &p.rot);
    }
    let trans_total = w.l_arm * arm / 2.0 + w.l_leg * leg / 2.0;
    w.w_trans * trans_total + w.w_quat * rot / 4.0
}

/// Loss and its gradient with respect to the flattened predicted
/// descriptor.
pub fn npr_loss_and_descriptor_grad(
    target: &PoseDescriptor,
    pred: &PoseDescriptor,
    w: &NprWeights,
) -> (f64, [f64; DESCRIPTOR_DIM]) {
    let loss = npr_loss_unchecked(target, pred, w);
    let mut grad = [0.0; DESCRIPTOR_DIM];
    for limb in Limb::ALL {
        let (t, p) = (target.limb(limb), pred.limb(limb));
        let base = limb.index() * 7;
        let gq = quat_loss_grad(&t.rot, &p.rot);
        for k in 0..4 {
            grad[base + k] = w.w_quat * gq[k] / 4.0;
        }
        let len = if limb.is_arm() { w.l_arm } else { w.l_leg };
        let scale = w.w_trans * len / 2.0 * 2.0 / 3.0;
        for k in 0..3 {
            grad[base + 4 + k] = scale * (p.norm_pos[k] - t.norm_pos[k]);
        }
    }
    (loss, grad)
}

/// Loss and gradient with respect to the 21 commanded joints.
#[derive(Debug, Clone)]
pub struct NprEval {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub pred: PoseDescriptor,
}

/// Evaluates the loss of command `cmd` against `target` and its analytic
/// gradient, chained through the robot descriptor, FK and the HipYawPitch
/// mirror. No limit projection is applied.
pub fn npr_grad(
    target: &PoseDescriptor,
    cmd: &[f64],
    model: &RobotModel,
    w: &NprWeights,
) -> Result<NprEval> {
    let q = expand_unchecked(cmd, model);
    let (pred, jac) = robot_descriptor_jacobian(&q, model)?;
    let (loss, g) = npr_loss_and_descriptor_grad(target, &pred, w);
    let g = nalgebra::DVector::from_column_slice(&g);
    let g_joint = jac.tr_mul(&g);
    Ok(NprEval {
        loss,
        grad: model.collapse_gradient(g_joint.as_slice()),
        pred,
    })
}
