//! Retargeting of 22-keypoint human motion onto a humanoid's 21 joint
//! commands.
//!
//! Limbs are reduced to dimensionless descriptors (normalized chain vector
//! plus distal-direction quaternion). Joint commands that reproduce a
//! descriptor are found either per frame by [`ik_oracle`] or by the
//! angle network in [`asn`]; [`ctrl_eval`] scores commands under PD
//! tracking on a decoupled joint plant.

pub mod error;
pub mod geom;
pub mod io;
pub mod robot;
pub mod skeleton;
pub mod descriptor;
pub mod npr;
pub mod ik_oracle;
pub mod asn;
pub mod config;
pub mod ctrl_eval;
pub mod retarget;

pub use error::{Error, Result};
