//! Detection and segmentation of enhancing brain lesions on multi-sequence
//! volumetric MRI, at desk scale.
//!
//! The crate covers the whole chain: synthetic multi-sequence phantoms with
//! known lesions ([`cohort`]), the 2.5D 28-channel slab pipeline
//! ([`pipeline`]), a from-scratch CNN layer kit ([`nn`]), the modified fully
//! convolutional GoogLeNet ([`model`]), its training recipe ([`train`]), the
//! voxel- and lesion-level statistical evaluation ([`metrics`]), and the file
//! formats tying it together ([`io`]).

pub mod cohort;
pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod seed;
pub mod train;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{BinaryMask, Dims, MultiSequenceStudy, Plane, ProbabilityMap, Spacing, VoxelGrid};
