//! Regenerates the bundled training set and the wave motion fixture.
//!
//! cargo run --example make_fixtures

use std::path::Path;

use npr_retarget::asn::reachable_dataset;
use npr_retarget::descriptor::save_descriptors;
use npr_retarget::retarget::{skeleton_from_command, wave_commands};
use npr_retarget::robot::RobotModel;
use npr_retarget::skeleton::{save_motion, AxisRemap, JointLayout, MotionSequence};

fn main() -> npr_retarget::Result<()> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let model = RobotModel::nao();
    let data = reachable_dataset(&model, 2000, 2024)?;
    save_descriptors(&root.join("data/reachable_2000.txt"), &data)?;

    let layout = JointLayout::humanml3d();
    let fps = 20.0;
    let frames = wave_commands(&model, 40, fps)
        .iter()
        .map(|c| skeleton_from_command(c, &model, &layout, 5.5, 1.65))
        .collect::<npr_retarget::Result<Vec<_>>>()?;
    let seq = MotionSequence {
        frames,
        fps,
        label: "a person waves with the right hand".into(),
        joint_layout: layout.name.clone(),
    };
    save_motion(&root.join("tests/fixtures/wave.jsonl"), &seq, &AxisRemap::y_up())?;
    Ok(())
}
