//! Skeleton graphs, input modalities, frame sampling and datasets.

mod graph;
mod sequence;
pub mod shrec;
pub mod synthetic;

pub use graph::{GraphSpec, HAND22_JOINTS};
pub use sequence::{
    center_on_root, derive_bone, derive_motion, reconstruct_from_bones, sample_frames, sample_indices, stack_batch,
    ModalityKind, SampleMode, SkeletonSequence,
};
pub use shrec::parse_shrec;
pub use synthetic::generate_synthetic;
