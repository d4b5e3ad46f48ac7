//! Scene-graph plausibility toolkit: oriented boxes, complete feature graphs,
//! a PNA graph discriminator with analytic gradients, synthetic scenes with
//! controlled corruptions, training, evaluation, and layout refinement.

pub mod error;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod neural;
pub mod pna;
pub mod scenegraph;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
pub use geometry::{OrientedBox, PointCloud, Rotation3, Vec3};
pub use pna::{Discriminator, PnaConfig};
pub use scenegraph::{build_graph, Scene, SceneElement, SceneGraph};
