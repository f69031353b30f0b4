//! Angle network against the per-frame oracle.

use npr_retarget::asn::{bundled_dataset, evaluate, infer, reachable_dataset, train, TrainConfig};
use npr_retarget::descriptor::{robot_descriptor, PoseDescriptor};
use npr_retarget::ik_oracle::{solve, SolverConfig};
use npr_retarget::npr::{npr_grad, NprWeights};
use npr_retarget::robot::{expand_command, fk, JointCommand, RobotModel};

/// Median of per-target `loss(network) - loss(oracle)` on held-out reachable
/// descriptors must stay below this. Frozen from the first verified run with
/// headroom for the default training setup.
const MEDIAN_GAP_THRESHOLD: f64 = 0.3;

fn unreachable_target(model: &RobotModel) -> PoseDescriptor {
    let mut c = vec![0.0; 21];
    c[0] = -0.6;
    c[1] = 0.5;
    let q = expand_command(&JointCommand(c), model).unwrap();
    let mut t = robot_descriptor(&fk(&q, model).unwrap(), model).unwrap();
    // stretched left arm and shortened right leg cannot both be matched
    t.limbs[0].norm_pos *= 1.6;
    t.limbs[1].norm_pos *= 1.6;
    t.limbs[2].norm_pos *= 0.4;
    t.limbs[3].norm_pos *= 0.4;
    t
}

#[test]
fn repeated_target_training_approaches_oracle() {
    let model = RobotModel::nao();
    let w = NprWeights::for_model(&model);
    let target = unreachable_target(&model);
    let oracle = solve(&target, &model, &w, &SolverConfig::default()).unwrap();
    assert!(oracle.final_loss > 1e-3, "target should be unreachable");
    let data = vec![target; 64];
    let cfg = TrainConfig {
        epochs: 4000,
        batch_size: 16,
        lr: 5e-3,
        ..TrainConfig::default()
    };
    let (params, report) = train(&data, &cfg, &model, &w).unwrap();
    let train_loss = *report.train_loss.last().unwrap();
    let infer_loss = npr_grad(&target, &infer(&target, &params, &model).unwrap().0, &model, &w)
        .unwrap()
        .loss;
    let bound = 1.1 * oracle.final_loss;
    assert!(train_loss <= bound, "train {train_loss} vs oracle {}", oracle.final_loss);
    assert!(infer_loss <= bound, "infer {infer_loss} vs oracle {}", oracle.final_loss);
}

#[test]
fn held_out_gap_to_oracle_below_threshold() {
    let model = RobotModel::nao();
    let w = NprWeights::for_model(&model);
    let (params, _) = train(&bundled_dataset(), &TrainConfig::default(), &model, &w).unwrap();
    let held_out = reachable_dataset(&model, 200, 77).unwrap();
    let cfg = SolverConfig::default();
    let mut gaps: Vec<f64> = held_out
        .iter()
        .map(|t| {
            let net = npr_grad(t, &infer(t, &params, &model).unwrap().0, &model, &w).unwrap().loss;
            net - solve(t, &model, &w, &cfg).unwrap().final_loss
        })
        .collect();
    gaps.sort_by(f64::total_cmp);
    let median = 0.5 * (gaps[99] + gaps[100]);
    println!("held-out mean net loss {} median gap {median}", evaluate(&held_out, &params, &model, &w).unwrap());
    assert!(median < MEDIAN_GAP_THRESHOLD, "median gap {median}");
}
