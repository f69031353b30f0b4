//! Per-frame NPR minimizer used as the reference the angle network is
//! judged against.
//!
//! Variables are unconstrained raw values mapped into the joint limits by
//! the same sigmoid squash the network uses, so every iterate is feasible.
//! Each start runs gradient descent with Armijo backtracking; the best
//! start wins (ties go to the lower start index).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use nalgebra::{DMatrix, DVector};

use crate::descriptor::{robot_descriptor_jacobian, PoseDescriptor, DESCRIPTOR_DIM};
use crate::error::{Error, Result};
use crate::npr::{npr_grad, NprWeights};
use crate::robot::{expand_unchecked, JointCommand, RobotModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Starts per frame: the zero pose plus `restarts - 1` random poses.
    pub restarts: usize,
    pub seed: u64,
    pub grad_tol: f64,
    pub loss_tol: f64,
    pub armijo_c: f64,
    /// Fraction of each joint range kept clear when initializing raw values.
    pub init_margin: f64,
    pub warm_start: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iters: 500,
            restarts: 8,
            seed: 0,
            grad_tol: 1e-7,
            loss_tol: 1e-8,
            armijo_c: 1e-4,
            init_margin: 0.01,
            warm_start: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 || self.max_iters == 0 {
            return Err(Error::Validation("solver needs restarts >= 1 and max_iters >= 1".into()));
        }
        if !(self.init_margin > 0.0 && self.init_margin < 0.5) {
            return Err(Error::Validation("init_margin must lie in (0, 0.5)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub q: JointCommand,
    pub final_loss: f64,
    pub iterations: usize,
    pub converged: bool,
    pub restarts_used: usize,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `sigmoid(raw) * (max - min) + min`, kept off the bounds when the sigmoid
/// saturates in floating point.
pub fn squash_one(raw: f64, lo: f64, hi: f64) -> f64 {
    (sigmoid(raw) * (hi - lo) + lo).clamp(lo.next_up(), hi.next_down())
}

/// Maps raw values strictly inside the limits with [`squash_one`].
pub fn squash(raw: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    raw.iter()
        .zip(lo.iter().zip(hi))
        .map(|(r, (a, b))| squash_one(*r, *a, *b))
        .collect()
}

/// Inverse of [`squash`] after pulling `q` at least `margin` of the range
/// inside the limits.
pub fn unsquash(q: &[f64], lo: &[f64], hi: &[f64], margin: f64) -> Vec<f64> {
    q.iter()
        .zip(lo.iter().zip(hi))
        .map(|(v, (a, b))| {
            let u = ((v - a) / (b - a)).clamp(margin, 1.0 - margin);
            (u / (1.0 - u)).ln()
        })
        .collect()
}

struct Run {
    q: Vec<f64>,
    loss: f64,
    iterations: usize,
    converged: bool,
}

fn descend(
    target: &PoseDescriptor,
    start: &[f64],
    margin: f64,
    model: &RobotModel,
    w: &NprWeights,
    cfg: &SolverConfig,
) -> Result<Run> {
    let (lo, hi) = model.command_limits();
    let mut raw = unsquash(start, &lo, &hi, margin);
    let eval_at = |raw: &[f64]| -> Result<(f64, Vec<f64>, Vec<f64>)> {
        let q = squash(raw, &lo, &hi);
        let e = npr_grad(target, &q, model, w)?;
        if !e.loss.is_finite() || e.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Solver(format!(
                "non-finite loss or gradient at q = {q:?}"
            )));
        }
        let g_raw = raw
            .iter()
            .zip(&e.grad)
            .zip(lo.iter().zip(&hi))
            .map(|((r, g), (a, b))| {
                let s = sigmoid(*r);
                g * s * (1.0 - s) * (b - a)
            })
            .collect();
        Ok((e.loss, g_raw, q))
    };

    let (mut loss, mut grad, mut q) = eval_at(&raw)?;
    let mut best = (loss, q.clone());
    let mut step: f64 = 1.0;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iters {
        let g_inf = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if g_inf < cfg.grad_tol || loss < cfg.loss_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let g2: f64 = grad.iter().map(|g| g * g).sum();
        let mut t = (step * 2.0).min(1e3);
        let accepted = loop {
            let cand: Vec<f64> = raw.iter().zip(&grad).map(|(r, g)| r - t * g).collect();
            let (l, g, qc) = eval_at(&cand)?;
            if l <= loss - cfg.armijo_c * t * g2 {
                break Some((cand, l, g, qc));
            }
            t *= 0.5;
            if t < 1e-20 {
                break None;
            }
        };
        match accepted {
            Some((cand, l, g, qc)) => {
                raw = cand;
                loss = l;
                grad = g;
                q = qc;
                step = t;
                if loss < best.0 {
                    best = (loss, q.clone());
                }
            }
            None => {
                // no descent possible at working precision
                converged = true;
                break;
            }
        }
    }
    Ok(Run {
        q: best.1,
        loss: best.0,
        iterations,
        converged,
    })
}


/// Weighted residuals whose squared norm matches the NPR translation term
/// exactly and replaces each quaternion angle by the squared chordal
/// distance to the nearer of `q_t`, `-q_t`. Both vanish at the same poses.
fn surrogate(
    target: &[f64; DESCRIPTOR_DIM],
    q: &[f64],
    model: &RobotModel,
    w: &NprWeights,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (pd, j22) = robot_descriptor_jacobian(&expand_unchecked(q, model), model)?;
    let pred = pd.flatten();
    let mut r = DVector::zeros(DESCRIPTOR_DIM);
    let mut scale = [0.0; DESCRIPTOR_DIM];
    for limb in 0..4 {
        let o = limb * 7;
        let l = if limb < 2 { w.l_arm } else { w.l_leg };
        let st = (w.w_trans * l / 6.0).sqrt();
        let sq = w.w_quat.sqrt();
        let dot: f64 = (0..4).map(|i| pred[o + i] * target[o + i]).sum();
        let sign = if dot < 0.0 { -1.0 } else { 1.0 };
        for i in 0..4 {
            r[o + i] = sq * (pred[o + i] - sign * target[o + i]);
            scale[o + i] = sq;
        }
        for i in 4..7 {
            r[o + i] = st * (pred[o + i] - target[o + i]);
            scale[o + i] = st;
        }
    }
    let mut j = DMatrix::zeros(DESCRIPTOR_DIM, q.len());
    for (c, &joint) in model.command_order.iter().enumerate() {
        let mut col = j22.column(joint).clone_owned();
        if joint == model.mirror.0 {
            col += j22.column(model.mirror.1);
        }
        for row in 0..DESCRIPTOR_DIM {
            j[(row, c)] = col[row] * scale[row];
        }
    }
    Ok((r, j))
}

/// Box-projected Levenberg-Marquardt on the surrogate residuals.
fn levenberg_marquardt(
    target: &PoseDescriptor,
    start: &[f64],
    model: &RobotModel,
    w: &NprWeights,
    max_iters: usize,
) -> Result<(Vec<f64>, usize)> {
    let (lo, hi) = model.command_limits();
    let t = target.flatten();
    let mut q: Vec<f64> = start
        .iter()
        .zip(lo.iter().zip(&hi))
        .map(|(v, (a, b))| v.clamp(*a, *b))
        .collect();
    let (mut r, mut j) = surrogate(&t, &q, model, w)?;
    let mut cost = r.norm_squared();
    let mut lambda = 1e-3;
    let mut iters = 0;
    while iters < max_iters && cost > 1e-24 {
        iters += 1;
        let jt = j.transpose();
        let jtj = &jt * &j;
        let g = &jt * &r;
        let mut a = jtj.clone();
        for i in 0..q.len() {
            a[(i, i)] += lambda * (jtj[(i, i)] + 1e-9);
        }
        let Some(chol) = a.cholesky() else {
            lambda *= 10.0;
            continue;
        };
        let step = chol.solve(&(-g));
        let cand: Vec<f64> = q
            .iter()
            .zip(step.iter())
            .zip(lo.iter().zip(&hi))
            .map(|((v, d), (a, b))| (v + d).clamp(*a, *b))
            .collect();
        let moved = cand.iter().zip(&q).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let (rc, jc) = surrogate(&t, &cand, model, w)?;
        let cc = rc.norm_squared();
        if cc < cost {
            q = cand;
            r = rc;
            j = jc;
            cost = cc;
            lambda = (lambda / 3.0).max(1e-12);
            if moved < 1e-12 {
                break;
            }
        } else {
            lambda *= 4.0;
            if lambda > 1e12 {
                break;
            }
        }
    }
    Ok((q, iters))
}

fn start_pool(model: &RobotModel, cfg: &SolverConfig, stream: u64) -> Vec<Vec<f64>> {
    let (lo, hi) = model.command_limits();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    let mut starts = vec![vec![0.0; lo.len()]];
    for _ in 1..cfg.restarts {
        starts.push(lo.iter().zip(&hi).map(|(a, b)| rng.gen_range(*a..*b)).collect());
    }
    starts
}

fn solve_from_starts(
    target: &PoseDescriptor,
    starts: &[Vec<f64>],
    model: &RobotModel,
    w: &NprWeights,
    cfg: &SolverConfig,
) -> Result<SolveReport> {
    let runs: Vec<Result<Run>> = starts
        .par_iter()
        .map(|s| {
            let (lo, hi) = model.command_limits();
            let s = squash(&unsquash(s, &lo, &hi, cfg.init_margin), &lo, &hi);
            let (q, lm_iters) = levenberg_marquardt(target, &s, model, w, cfg.max_iters)?;
            let lm_loss = npr_grad(target, &q, model, w)?.loss;
            if lm_loss < cfg.loss_tol {
                return Ok(Run { q, loss: lm_loss, iterations: lm_iters, converged: true });
            }
            let mut run = descend(target, &q, 1e-12, model, w, cfg)?;
            run.iterations += lm_iters;
            if lm_loss <= run.loss {
                run.q = q;
                run.loss = lm_loss;
                run.converged |= lm_loss < cfg.loss_tol;
            }
            Ok(run)
        })
        .collect();
    let runs = runs.into_iter().collect::<Result<Vec<Run>>>()?;
    // starts within loss_tol of the best are tied; the earliest wins, which
    // keeps joints the loss cannot see at their warm-start values
    let min = runs.iter().map(|r| r.loss).fold(f64::INFINITY, f64::min);
    let best = runs.into_iter().find(|r| r.loss <= min + cfg.loss_tol);
    let best = best.expect("at least one start");
    let q = JointCommand(best.q);
    debug_assert!(q.validate(model).is_ok());
    Ok(SolveReport {
        q,
        final_loss: best.loss,
        iterations: best.iterations,
        converged: best.converged,
        restarts_used: starts.len(),
    })
}

/// Finds the in-limit command minimizing the NPR loss against `target`.
pub fn solve(
    target: &PoseDescriptor,
    model: &RobotModel,
    w: &NprWeights,
    cfg: &SolverConfig,
) -> Result<SolveReport> {
    cfg.validate()?;
    w.validate()?;
    solve_from_starts(target, &start_pool(model, cfg, 0), model, w, cfg)
}

/// Solves every frame; with `warm_start` each frame also starts from the
/// previous frame's solution. A failing frame keeps its error and the
/// sequence carries on from the last good solution.
pub fn solve_sequence(
    targets: &[PoseDescriptor],
    model: &RobotModel,
    w: &NprWeights,
    cfg: &SolverConfig,
) -> Result<Vec<Result<SolveReport>>> {
    if targets.is_empty() {
        return Err(Error::Validation("empty target sequence".into()));
    }
    cfg.validate()?;
    w.validate()?;
    let mut out = Vec::with_capacity(targets.len());
    let mut prev: Option<Vec<f64>> = None;
    for (k, target) in targets.iter().enumerate() {
        let mut starts = Vec::new();
        if cfg.warm_start {
            if let Some(p) = &prev {
                starts.push(p.clone());
            }
        }
        starts.extend(start_pool(model, cfg, k as u64));
        let report = solve_from_starts(target, &starts, model, w, cfg);
        if let Ok(r) = &report {
            prev = Some(r.q.0.clone());
        }
        out.push(report);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptor::robot_descriptor;
    use crate::robot::{expand_unchecked, fk_unchecked};

    #[test]
    fn squash_round_trip_and_midpoint() {
        let lo = [-1.0, 0.0];
        let hi = [1.0, 2.0];
        assert_eq!(squash(&[0.0, 0.0], &lo, &hi), vec![0.0, 1.0]);
        let raw = unsquash(&[0.3, 1.5], &lo, &hi, 0.01);
        let q = squash(&raw, &lo, &hi);
        assert!((q[0] - 0.3).abs() < 1e-12 && (q[1] - 1.5).abs() < 1e-12);
        let clipped = squash(&unsquash(&[1.0, 0.0], &lo, &hi, 0.01), &lo, &hi);
        assert!((clipped[0] - 0.98).abs() < 1e-12 && (clipped[1] - 0.02).abs() < 1e-12);
    }

    #[test]
    fn zero_pose_target_recovers_zero() {
        let m = RobotModel::nao();
        let w = NprWeights::for_model(&m);
        let target = robot_descriptor(&fk_unchecked(&[0.0; 22], &m), &m).unwrap();
        let r = solve(&target, &m, &w, &SolverConfig::default()).unwrap();
        assert!(r.q.0.iter().all(|v| v.abs() < 1e-3), "{:?}", r.q.0);
        assert!(r.final_loss < 1e-8);
    }

    #[test]
    fn empty_sequence_rejected() {
        let m = RobotModel::nao();
        let w = NprWeights::for_model(&m);
        assert!(matches!(
            solve_sequence(&[], &m, &w, &SolverConfig::default()),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn deterministic_given_seed() {
        let m = RobotModel::nao();
        let w = NprWeights::for_model(&m);
        let mut c = vec![0.2; 21];
        c[3] = -0.5;
        c[8] = 0.5;
        let target = robot_descriptor(&fk_unchecked(&expand_unchecked(&c, &m), &m), &m).unwrap();
        let cfg = SolverConfig::default();
        let a = solve(&target, &m, &w, &cfg).unwrap();
        let b = solve(&target, &m, &w, &cfg).unwrap();
        assert_eq!(a, b);
    }

    fn target_for(c: &[f64], m: &RobotModel) -> PoseDescriptor {
        robot_descriptor(&fk_unchecked(&expand_unchecked(c, m), m), m).unwrap()
    }

    #[test]
    fn unreachable_target_keeps_positive_loss() {
        let m = RobotModel::nao();
        let w = NprWeights::for_model(&m);
        let mut t = target_for(&[0.0; 21], &m);
        // an arm stretched past its length cannot be matched
        t.limbs[0].norm_pos *= 1.5;
        let r = solve(&t, &m, &w, &SolverConfig::default()).unwrap();
        assert!(r.final_loss > 1e-3);
        assert!(r.q.validate(&m).is_ok());
    }

    #[test]
    fn constant_sequence_warm_start_is_cheaper() {
        let m = RobotModel::nao();
        let w = NprWeights::for_model(&m);
        let mut c = vec![0.0; 21];
        c[2] = 0.4;
        c[3] = -0.3;
        let t = target_for(&c, &m);
        let out = solve_sequence(&[t, t, t], &m, &w, &SolverConfig::default()).unwrap();
        let reports: Vec<_> = out.into_iter().map(|r| r.unwrap()).collect();
        let summary: Vec<_> = reports.iter().map(|r| (r.iterations, r.final_loss)).collect();
        assert!(reports.iter().all(|r| r.final_loss < 1e-6), "{summary:?} {:?}", m.command_names());
        assert!(reports[1].iterations <= reports[0].iterations, "{:?}", reports.iter().map(|r| (r.iterations, r.final_loss)).collect::<Vec<_>>());
        assert_eq!(reports[1].restarts_used, SolverConfig::default().restarts + 1);
    }

    #[test]
    fn sinusoid_sequence_tracks() {
        let m = RobotModel::nao();
        let w = NprWeights::for_model(&m);
        let (lo, hi) = m.command_limits();
        let targets: Vec<_> = (0..20)
            .map(|k| {
                let s = (k as f64 * 0.3).sin();
                let c: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b) + 0.3 * s * (b - a)).collect();
                target_for(&c, &m)
            })
            .collect();
        let out = solve_sequence(&targets, &m, &w, &SolverConfig::default()).unwrap();
        for r in out {
            assert!(r.unwrap().final_loss < 1e-4);
        }
    }
}
