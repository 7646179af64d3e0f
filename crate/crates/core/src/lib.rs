//! Scene graph generation as mean-field inference in a CRF whose pairwise
//! terms come from trainable label embeddings.
//!
//! The crate is organized bottom-up: [`graph`] holds the scene-graph model,
//! [`numcore`] the small dense-math substrate, [`synthworld`] a synthetic
//! CLEVR-like world, [`vrd`] the unary heads, [`scn`] the mean-field
//! network, [`model`] the combined trainable model and [`evalkit`] the
//! Recall@K protocol.

pub mod error;
pub mod evalkit;
pub mod graph;
mod json;
pub mod model;
pub mod numcore;
pub mod potentials;
pub mod scn;
pub mod synthworld;
pub mod vrd;

pub use error::{Error, Result};
pub use graph::{export_dot, BBox, NodeRef, ObjectNode, RelationshipNode, SceneGraph, Vocabulary};
pub use potentials::{argmax, PotentialSet};
