//! Geometric core for self-supervised articulated-object pose estimation.

pub mod checks;
pub mod cloud;
pub mod equivconv;
pub mod evalproto;
pub mod estimator;
pub mod icp;
pub mod kinematics;
pub mod losses;
pub mod rotgroup;
pub mod se3;
pub mod synthdata;

/// Guide chapters, compiled as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/rotation-groups.md")]
    mod rotation_groups {}
    #[doc = include_str!("../../../book/src/rigid-transforms.md")]
    mod rigid_transforms {}
    #[doc = include_str!("../../../book/src/point-clouds.md")]
    mod point_clouds {}
    #[doc = include_str!("../../../book/src/equivariant-convolution.md")]
    mod equivariant_convolution {}
    #[doc = include_str!("../../../book/src/kinematics.md")]
    mod kinematics {}
    #[doc = include_str!("../../../book/src/estimation.md")]
    mod estimation {}
    #[doc = include_str!("../../../book/src/icp-baseline.md")]
    mod icp_baseline {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/synthetic-data.md")]
    mod synthetic_data {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
