//! Synthetic articulated bodies and training pairs.
//!
//! [`KinematicBody`] is a 12-joint capsule humanoid posed by linear blend
//! skinning. Identity (α) scales bones, pose (β) rotates joints and a vertex
//! permutation (θ) shuffles the vertex order.

mod body;
mod dataset;

use thiserror::Error;

use crate::meshio::MeshError;

pub use body::{
    euler_xyz, sample_identity, sample_pose, IdentityParams, JointRange, KinematicBody, PoseParams, PoseRanges,
    JOINT_COUNT, JOINT_NAMES,
};
pub use dataset::{
    build_pair, child_seed, load_dataset, make_dataset, make_pair, pair_from_seed, skeleton_oracle_transfer, write_dataset, Dataset,
    DatasetConfig, EvalPair, Manifest, PairSample, SampleRecord, Split, TrainPool, MANIFEST_FILE,
};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid pose ranges: {0}")]
    Ranges(String),
    #[error("invalid dataset config: {0}")]
    Config(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = SynthError> = std::result::Result<T, E>;
