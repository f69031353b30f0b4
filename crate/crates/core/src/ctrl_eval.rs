//! Desk-scale control evaluation of joint command sequences.
//!
//! Every joint is an independent second-order plant driven by a clamped PD
//! law. The floating base is fixed, so rewards that need base or foot
//! orientation read it from kinematics, and contact forces are external
//! inputs.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{quat_rotate, Mat3, Quat, Vec3};
use crate::robot::{expand_command, link_frames, ActuatorClass, Keypoint, RobotModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActuatorParams {
    pub max_torque: f64,
    pub max_speed: f64,
    pub kp: f64,
    pub kd: f64,
}

/// Actuator parameters per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ActuatorTable {
    pub head: ActuatorParams,
    pub arm: ActuatorParams,
    pub leg_pitch: ActuatorParams,
    pub leg_roll: ActuatorParams,
    pub leg_yaw_pitch: ActuatorParams,
}

impl Default for ActuatorTable {
    fn default() -> Self {
        let p = |max_torque, max_speed, kp, kd| ActuatorParams {
            max_torque,
            max_speed,
            kp,
            kd,
        };
        ActuatorTable {
            head: p(10.0, 7.0, 150.0, 5.0),
            arm: p(10.0, 7.0, 150.0, 5.0),
            leg_pitch: p(20.0, 6.4, 200.0, 5.0),
            leg_roll: p(20.0, 4.0, 150.0, 5.0),
            leg_yaw_pitch: p(30.0, 4.0, 200.0, 5.0),
        }
    }
}

impl ActuatorTable {
    pub fn get(&self, class: ActuatorClass) -> &ActuatorParams {
        match class {
            ActuatorClass::Head => &self.head,
            ActuatorClass::Arm => &self.arm,
            ActuatorClass::LegPitch => &self.leg_pitch,
            ActuatorClass::LegRoll => &self.leg_roll,
            ActuatorClass::LegYawPitch => &self.leg_yaw_pitch,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for class in ActuatorClass::ALL {
            let p = self.get(class);
            let ok = [p.max_torque, p.max_speed, p.kp, p.kd]
                .iter()
                .all(|v| v.is_finite() && *v > 0.0);
            if !ok {
                return Err(Error::Config(format!("actuator class {class} has non-positive parameters")));
            }
        }
        Ok(())
    }

    /// Parameters for every model joint.
    pub fn per_joint(&self, model: &RobotModel) -> Vec<ActuatorParams> {
        model.joints.iter().map(|j| *self.get(j.actuator_class)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
    pub inertia: Vec<f64>,
}

impl JointState {
    pub fn new(q: Vec<f64>, qd: Vec<f64>, inertia: Vec<f64>) -> Result<Self> {
        if q.len() != qd.len() || q.len() != inertia.len() {
            return Err(Error::Validation("joint state arrays differ in length".into()));
        }
        if q.iter().chain(&qd).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite joint state".into()));
        }
        if inertia.iter().any(|&i| !(i > 0.0 && i.is_finite())) {
            return Err(Error::Validation("joint inertia must be positive".into()));
        }
        Ok(JointState { q, qd, inertia })
    }
}

/// `tau = kp (q_cmd - q) + kd (qd_cmd - qd) + tau0`, clamped per joint.
pub fn pd_torque(
    q_cmd: &[f64],
    q: &[f64],
    qd_cmd: &[f64],
    qd: &[f64],
    params: &[ActuatorParams],
    tau0: &[f64],
) -> Result<Vec<f64>> {
    let n = q.len();
    if [q_cmd.len(), qd_cmd.len(), qd.len(), params.len(), tau0.len()]
        .iter()
        .any(|&l| l != n)
    {
        return Err(Error::Validation("pd_torque inputs differ in length".into()));
    }
    Ok((0..n)
        .map(|i| {
            let p = &params[i];
            let tau = p.kp * (q_cmd[i] - q[i]) + p.kd * (qd_cmd[i] - qd[i]) + tau0[i];
            tau.clamp(-p.max_torque, p.max_torque)
        })
        .collect())
}

/// Semi-implicit Euler step with speed clamp and hard stops at the limits.
pub fn step_dynamics(
    state: &JointState,
    tau: &[f64],
    dt: f64,
    params: &[ActuatorParams],
    limits: &[(f64, f64)],
) -> Result<JointState> {
    if !(dt > 0.0) {
        return Err(Error::Validation(format!("dt must be positive, got {dt}")));
    }
    let n = state.q.len();
    if tau.len() != n || params.len() != n || limits.len() != n {
        return Err(Error::Validation("step_dynamics inputs differ in length".into()));
    }
    let mut next = state.clone();
    for i in 0..n {
        let acc = tau[i] / state.inertia[i];
        let vmax = params[i].max_speed;
        let mut qd = (state.qd[i] + acc * dt).clamp(-vmax, vmax);
        let mut q = state.q[i] + qd * dt;
        let (lo, hi) = limits[i];
        if q <= lo || q >= hi {
            q = q.clamp(lo, hi);
            qd = 0.0;
        }
        if !q.is_finite() || !qd.is_finite() {
            return Err(Error::Numeric(format!("joint {i} state became non-finite")));
        }
        next.q[i] = q;
        next.qd[i] = qd;
    }
    Ok(next)
}

/// Gravity direction `[0, 0, -1]` expressed in the base frame.
pub fn projected_gravity(orientation: &Quat) -> Result<Vec3> {
    if !orientation.is_unit(1e-6) {
        return Err(Error::Validation(format!(
            "orientation {orientation:?} is not a unit quaternion"
        )));
    }
    Ok(quat_rotate(&orientation.conjugate(), &Vec3::new(0.0, 0.0, -1.0)))
}

fn gravity_in_frame(r: &Mat3) -> Vec3 {
    r.transpose() * Vec3::new(0.0, 0.0, -1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    pub dof_torque: f64,
    pub ankle_torque: f64,
    pub dof_acc: f64,
    pub action_rate: f64,
    pub action: f64,
    pub torso_flat: f64,
    pub feet_flat: f64,
    pub undesired_contacts: f64,
    pub dof_target: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            dof_torque: -8.0e-4,
            ankle_torque: -2.0e-3,
            dof_acc: -2.5e-7,
            action_rate: -2.0e-2,
            action: -6.5e-4,
            torso_flat: -1.2,
            feet_flat: 0.3,
            undesired_contacts: -1.0,
            dof_target: 10.0,
        }
    }
}

pub const REWARD_TERMS: [&str; 9] = [
    "dof_torque",
    "ankle_torque",
    "dof_acc",
    "action_rate",
    "action",
    "torso_flat",
    "feet_flat",
    "undesired_contacts",
    "dof_target",
];

impl RewardWeights {
    pub fn as_array(&self) -> [f64; 9] {
        [
            self.dof_torque,
            self.ankle_torque,
            self.dof_acc,
            self.action_rate,
            self.action,
            self.torso_flat,
            self.feet_flat,
            self.undesired_contacts,
            self.dof_target,
        ]
    }
}

pub const FEET_FLAT_SCALE: f64 = 3.046e-4;
pub const CONTACT_FORCE_THRESHOLD: f64 = 10.0;
pub const DOF_TARGET_SCALE: f64 = 5.0;

/// Unweighted reward terms in [`REWARD_TERMS`] order, their weighted
/// values and the total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub raw: [f64; 9],
    pub weighted: [f64; 9],
    pub total: f64,
}

impl RewardBreakdown {
    pub fn zero() -> Self {
        RewardBreakdown {
            raw: [0.0; 9],
            weighted: [0.0; 9],
            total: 0.0,
        }
    }

    pub fn accumulate(&mut self, other: &RewardBreakdown) {
        for i in 0..9 {
            self.raw[i] += other.raw[i];
            self.weighted[i] += other.weighted[i];
        }
        self.total += other.total;
    }

    pub fn by_name(&self) -> BTreeMap<&'static str, f64> {
        REWARD_TERMS.iter().copied().zip(self.weighted).collect()
    }
}

/// Inputs for one reward evaluation.
pub struct RewardInputs<'a> {
    pub q: &'a [f64],
    pub qdd: &'a [f64],
    pub action: &'a [f64],
    pub action_prev: &'a [f64],
    pub q_target: &'a [f64],
    pub tau: &'a [f64],
    /// Indices into `tau` of the ankle joints.
    pub ankle_joints: &'a [usize],
    pub gravity: Vec3,
    pub foot_gravities: &'a [Vec3],
    pub contact_forces: &'a [f64],
}

pub fn reward(inp: &RewardInputs, w: &RewardWeights) -> Result<RewardBreakdown> {
    let n = inp.q.len();
    if [inp.qdd.len(), inp.q_target.len(), inp.tau.len()]
        .iter()
        .any(|&l| l != n)
        || inp.action.len() != inp.action_prev.len()
        || inp.ankle_joints.iter().any(|&i| i >= n)
    {
        return Err(Error::Validation("reward inputs have mismatched dimensions".into()));
    }
    let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    let raw = [
        sq(inp.tau),
        inp.ankle_joints.iter().map(|&i| inp.tau[i].powi(2)).sum(),
        sq(inp.qdd),
        inp.action.iter().zip(inp.action_prev).map(|(a, b)| (a - b).abs()).sum(),
        inp.action.iter().map(|a| a.abs()).sum(),
        inp.gravity.x.powi(2) + inp.gravity.y.powi(2),
        inp.foot_gravities
            .iter()
            .map(|g| (-(g.x * g.x + g.y * g.y) / FEET_FLAT_SCALE).exp())
            .sum(),
        inp.contact_forces.iter().filter(|&&f| f > CONTACT_FORCE_THRESHOLD).count() as f64,
        (-inp.q.iter().zip(inp.q_target).map(|(a, b)| (a - b).abs()).sum::<f64>() / DOF_TARGET_SCALE).exp(),
    ];
    let wa = w.as_array();
    let mut weighted = [0.0; 9];
    for i in 0..9 {
        weighted[i] = wa[i] * raw[i];
    }
    Ok(RewardBreakdown {
        raw,
        weighted,
        total: weighted.iter().sum(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Running,
    Fell,
    Timeout,
}

pub const TILT_LIMIT_DEG: f64 = 60.0;

/// Roll and pitch of the ZYX Euler decomposition, radians.
pub fn roll_pitch(q: &Quat) -> (f64, f64) {
    let roll = (2.0 * (q.w * q.x + q.y * q.z)).atan2(1.0 - 2.0 * (q.x * q.x + q.y * q.y));
    let pitch = (2.0 * (q.w * q.y - q.z * q.x)).clamp(-1.0, 1.0).asin();
    (roll, pitch)
}

pub fn check_termination(orientation: &Quat, elapsed: f64, episode_len: f64) -> Termination {
    let (roll, pitch) = roll_pitch(&orientation.normalize());
    let limit = TILT_LIMIT_DEG.to_radians();
    if roll.abs() > limit || pitch.abs() > limit {
        Termination::Fell
    } else if elapsed >= episode_len {
        Termination::Timeout
    } else {
        Termination::Running
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Range { lo, hi }
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.gen_range(self.lo..self.hi)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomizationRanges {
    pub static_friction: Range,
    pub dynamic_friction: Range,
    pub base_mass_add: Range,
    pub hand_mass_add: Range,
    pub push_interval: Range,
    pub push_speed: f64,
}

impl Default for RandomizationRanges {
    fn default() -> Self {
        RandomizationRanges {
            static_friction: Range::new(0.3, 1.1),
            dynamic_friction: Range::new(0.2, 0.7),
            base_mass_add: Range::new(0.0, 0.2),
            hand_mass_add: Range::new(0.0, 0.1),
            push_interval: Range::new(4.0, 6.0),
            push_speed: 0.2,
        }
    }
}

impl RandomizationRanges {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("static_friction", self.static_friction),
            ("dynamic_friction", self.dynamic_friction),
            ("base_mass_add", self.base_mass_add),
            ("hand_mass_add", self.hand_mass_add),
            ("push_interval", self.push_interval),
        ] {
            if !(r.lo <= r.hi) || !r.lo.is_finite() || !r.hi.is_finite() {
                return Err(Error::Config(format!("range {name} has lo > hi")));
            }
        }
        if !(self.push_interval.lo > 0.0) || !(self.push_speed >= 0.0) {
            return Err(Error::Config("push interval must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PushEvent {
    pub time: f64,
    pub vx: f64,
    pub vy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomizationSample {
    pub static_friction: f64,
    pub dynamic_friction: f64,
    pub base_mass_add: f64,
    pub hand_mass_add: f64,
    pub pushes: Vec<PushEvent>,
}

/// Draws one parameter set and the push schedule over `horizon` seconds.
pub fn sample_randomization(
    ranges: &RandomizationRanges,
    horizon: f64,
    rng: &mut impl Rng,
) -> RandomizationSample {
    let static_friction = ranges.static_friction.sample(rng);
    let dynamic_friction = ranges.dynamic_friction.sample(rng);
    let base_mass_add = ranges.base_mass_add.sample(rng);
    let hand_mass_add = ranges.hand_mass_add.sample(rng);
    let mut pushes = Vec::new();
    let mut t = ranges.push_interval.sample(rng);
    while t <= horizon {
        let heading = rng.gen_range(0.0..std::f64::consts::TAU);
        pushes.push(PushEvent {
            time: t,
            vx: ranges.push_speed * heading.cos(),
            vy: ranges.push_speed * heading.sin(),
        });
        t += ranges.push_interval.sample(rng);
    }
    RandomizationSample {
        static_friction,
        dynamic_friction,
        base_mass_add,
        hand_mass_add,
        pushes,
    }
}

/// `count` samples from a ChaCha8 stream seeded with `seed`.
pub fn sample_many(
    ranges: &RandomizationRanges,
    horizon: f64,
    count: usize,
    seed: u64,
) -> Result<Vec<RandomizationSample>> {
    ranges.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count).map(|_| sample_randomization(ranges, horizon, &mut rng)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Simulation step, seconds.
    pub dt: f64,
    pub episode_len: f64,
    pub tau0: f64,
    pub inertia_arm: f64,
    pub inertia_leg: f64,
    pub actuators: ActuatorTable,
    pub weights: RewardWeights,
    pub randomization: RandomizationRanges,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            dt: 1e-3,
            episode_len: 10.0,
            tau0: 0.0,
            inertia_arm: 0.01,
            inertia_leg: 0.05,
            actuators: ActuatorTable::default(),
            weights: RewardWeights::default(),
            randomization: RandomizationRanges::default(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.dt > 0.0
            && self.episode_len > 0.0
            && self.inertia_arm > 0.0
            && self.inertia_leg > 0.0
            && self.tau0.is_finite();
        if !ok {
            return Err(Error::Config("eval dt, episode_len and inertias must be positive".into()));
        }
        self.actuators.validate()?;
        self.randomization.validate()
    }

    pub fn inertia(&self, class: ActuatorClass) -> f64 {
        match class {
            ActuatorClass::Head | ActuatorClass::Arm => self.inertia_arm,
            _ => self.inertia_leg,
        }
    }
}

/// State at the end of one held command frame.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub time: f64,
    pub reference: Vec<f64>,
    pub measured: Vec<f64>,
    pub reward: RewardBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeReport {
    pub frames: usize,
    pub duration: f64,
    pub joint_names: Vec<String>,
    /// Tracking RMSE per commanded joint over frame ends, radians.
    pub rmse: Vec<f64>,
    /// Distance between commanded and measured wrist positions, pooled over
    /// both wrists and all frames, metres.
    pub endpoint_error_mean: f64,
    pub endpoint_error_std: f64,
    pub reward: RewardBreakdown,
    pub termination: Termination,
    pub trace: Vec<TraceRow>,
}

/// Holds each command for `1 / fps` seconds under PD tracking and scores the
/// result. `orientations`, when given, is one base orientation per frame
/// and feeds the fall check; otherwise the base stays upright.
pub fn evaluate_commands(
    commands: &[Vec<f64>],
    fps: f64,
    model: &RobotModel,
    cfg: &EvalConfig,
    orientations: Option<&[Quat]>,
) -> Result<EpisodeReport> {
    if commands.is_empty() {
        return Err(Error::Validation("empty command list".into()));
    }
    if !(fps > 0.0) {
        return Err(Error::Validation(format!("fps must be positive, got {fps}")));
    }
    if let Some(o) = orientations {
        if o.len() != commands.len() {
            return Err(Error::Validation("one orientation per frame required".into()));
        }
    }
    cfg.validate()?;
    let targets: Vec<Vec<f64>> = commands
        .iter()
        .map(|c| expand_command(&crate::robot::JointCommand(c.clone()), model))
        .collect::<Result<_>>()?;

    let n = model.joints.len();
    let params = cfg.actuators.per_joint(model);
    let limits: Vec<(f64, f64)> = model.joints.iter().map(|j| (j.q_min, j.q_max)).collect();
    let inertia = model.joints.iter().map(|j| cfg.inertia(j.actuator_class)).collect();
    let ankles: Vec<usize> = model
        .joints
        .iter()
        .enumerate()
        .filter(|(_, j)| j.name.contains("Ankle"))
        .map(|(i, _)| i)
        .collect();
    let feet = [
        model.keypoints[Keypoint::LeftFoot.index()].link,
        model.keypoints[Keypoint::RightFoot.index()].link,
    ];
    let wrists = [Keypoint::LeftWrist, Keypoint::RightWrist];
    let tau0 = vec![cfg.tau0; n];

    let mut state = JointState::new(vec![0.0; n], vec![0.0; n], inertia)?;
    let steps_per_frame = ((1.0 / fps) / cfg.dt).round().max(1.0) as usize;
    let frame_dt = steps_per_frame as f64 * cfg.dt;
    let mut prev_action = targets[0].clone();
    let mut totals = RewardBreakdown::zero();
    let mut sq_err = vec![0.0; n];
    let mut endpoint = Vec::with_capacity(2 * targets.len());
    let mut trace = Vec::with_capacity(targets.len());
    let mut termination = Termination::Running;
    let mut elapsed = 0.0;

    for (k, target) in targets.iter().enumerate() {
        let qd_cmd: Vec<f64> = match k {
            0 => vec![0.0; n],
            _ => target.iter().zip(&targets[k - 1]).map(|(a, b)| (a - b) / frame_dt).collect(),
        };
        let mut tau = vec![0.0; n];
        let mut qdd = vec![0.0; n];
        for _ in 0..steps_per_frame {
            tau = pd_torque(target, &state.q, &qd_cmd, &state.qd, &params, &tau0)?;
            let next = step_dynamics(&state, &tau, cfg.dt, &params, &limits)?;
            qdd = next.qd.iter().zip(&state.qd).map(|(a, b)| (a - b) / cfg.dt).collect();
            state = next;
        }
        elapsed += frame_dt;

        let frames = link_frames(&state.q, model);
        let foot_g: Vec<Vec3> = feet.iter().map(|&l| gravity_in_frame(&frames.rotations[l])).collect();
        let orientation = orientations.map_or(Quat::IDENTITY, |o| o[k]);
        let r = reward(
            &RewardInputs {
                q: &state.q,
                qdd: &qdd,
                action: target,
                action_prev: &prev_action,
                q_target: target,
                tau: &tau,
                ankle_joints: &ankles,
                gravity: projected_gravity(&orientation.normalize())?,
                foot_gravities: &foot_g,
                contact_forces: &[],
            },
            &cfg.weights,
        )?;
        totals.accumulate(&r);
        prev_action = target.clone();

        for i in 0..n {
            sq_err[i] += (state.q[i] - target[i]).powi(2);
        }
        let ref_fk = crate::robot::fk(target, model)?;
        let meas_fk = crate::robot::fk(&state.q, model)?;
        for kp in wrists {
            endpoint.push((ref_fk.get(kp) - meas_fk.get(kp)).norm());
        }
        let pick = |v: &[f64]| model.command_order.iter().map(|&j| v[j]).collect::<Vec<_>>();
        trace.push(TraceRow {
            time: elapsed,
            reference: pick(target),
            measured: pick(&state.q),
            reward: r,
        });

        termination = check_termination(&orientation, elapsed, cfg.episode_len);
        if termination != Termination::Running {
            break;
        }
    }

    let frames_run = trace.len() as f64;
    let rmse = model
        .command_order
        .iter()
        .map(|&j| (sq_err[j] / frames_run).sqrt())
        .collect();
    let mean = endpoint.iter().sum::<f64>() / endpoint.len() as f64;
    let var = endpoint.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / endpoint.len() as f64;
    Ok(EpisodeReport {
        frames: trace.len(),
        duration: elapsed,
        joint_names: model.command_names().iter().map(|s| s.to_string()).collect(),
        rmse,
        endpoint_error_mean: mean,
        endpoint_error_std: var.sqrt(),
        reward: totals,
        termination,
        trace,
    })
}
