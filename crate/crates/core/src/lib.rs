//! Two-stage shadow generation for image composition.
//!
//! The pipeline takes a composite image (a foreground object pasted onto a
//! background without its shadow) plus object/shadow masks, predicts the
//! foreground shadow mask in two decomposed steps (bounding box + shape,
//! then refinement), and fills the predicted region by attending to
//! background shadow pixels. The crate also ships a procedural 2D renderer
//! that builds training tuples analytically, a metrics suite for mask and
//! image quality, and a training/finetuning/evaluation harness.

pub mod geometry;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod synthdata;

pub use geometry::{BBox, BoxRegression, Mask};
pub use synthdata::{Image, SceneSpec, ShadowTuple};
