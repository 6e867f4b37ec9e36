//! Neural pose transfer between triangle meshes.
//!
//! A pose mesh and an identity mesh with the same vertex count go in; out
//! comes the identity's body in the pose mesh's posture, in the identity
//! mesh's vertex order. The crate contains everything needed to train and
//! evaluate that model from scratch on a CPU:
//!
//! - [`tensor`]: `[batch, channel, vertex]` tensors, reverse-mode autodiff, Adam
//! - [`network`]: the pose encoder, SPAdaIN units and residual decoder
//! - [`objectives`]: reconstruction and edge-length losses, the PMD metric
//! - [`meshio`]: OBJ/PLY I/O, normalization and vertex permutations
//! - [`synthdata`]: an articulated capsule body used to generate training pairs
//! - [`trainer`]: training loop, evaluation, ablations and robustness probes
//! - [`verify`]: finite-difference gradient checks of every operation

pub mod meshio;
pub mod network;
pub mod objectives;
pub mod synthdata;
pub mod tensor;
pub mod trainer;
pub mod util;
pub mod verify;
