//! Multi-user mmWave ISAC simulation and environment reconstruction.
//!
//! The pipeline: trace specular paths in a [`scene::Scene`], build wideband
//! channels and beam-swept power maps ([`channel`]), pick *superior users*
//! whose power maps contain clean on-grid LOS and first-order reflections
//! ([`selection`]), triangulate reflection points ([`localization`]), and fit
//! cubic wall surfaces to the result ([`surface`]). [`camera`] renders depth
//! maps and exports datasets for a downstream fusion model.

// `!(x > y)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod camera;
pub mod channel;
pub mod experiment;
pub mod geometry;
pub mod localization;
pub mod rng;
pub mod raytrace;
pub mod scene;
pub mod selection;
pub mod surface;

pub use geometry::{direction, Axis, Cubic, Vec3};
pub use scene::{build_scene, Scene, SceneError, SceneSpec, Wall, WallSpec};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/scenes.md")]
    mod scenes {}
    #[doc = include_str!("../../../book/src/channels.md")]
    mod channels {}
    #[doc = include_str!("../../../book/src/selection.md")]
    mod selection {}
    #[doc = include_str!("../../../book/src/localization.md")]
    mod localization {}
    #[doc = include_str!("../../../book/src/surfaces.md")]
    mod surfaces {}
    #[doc = include_str!("../../../book/src/camera.md")]
    mod camera {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
