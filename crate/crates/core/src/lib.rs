//! 3D face identification pipeline.
//!
//! Raw facial point clouds are aligned to a reference face with rigid ICP,
//! rendered orthographically into 2.5D depth maps and embedded into feature
//! vectors that are matched against a gallery by cosine distance. Training
//! data can be enlarged with morphable-model expression transfer, random
//! rigid perturbations and random occlusion patches.
//!
//! The modules follow the data flow:
//!
//! * [`pointcloud`]: point sets, PLY I/O, rigid transforms, nearest-neighbor index
//! * [`registration`]: nose-tip detection, rigid ICP and scan preprocessing
//! * [`depthmap`]: splatting renderer, median filter, normalization, resize, PGM
//! * [`morphable`]: linear morphable model, fitting and expression transfer
//! * [`augmentation`]: random expressions, poses and occlusion patches
//! * [`embedding`]: embedding backends, signed square root and PCA
//! * [`matching`]: cosine identification, CMC and ROC curves
//! * [`synthetic`]: toy identities and scans for self-contained experiments

pub mod augmentation;
pub mod depthmap;
pub mod embedding;
mod extrapolate;
pub mod matching;
pub mod morphable;
pub mod pipeline;
pub mod pointcloud;
pub mod registration;
pub mod synthetic;

pub use depthmap::{DepthMap, RenderParams};
pub use embedding::{EmbeddingBackend, FeatureVector, PcaModel};
pub use matching::{Gallery, RankedMatches};
pub use morphable::{ModelParams, MorphableModel};
pub use pointcloud::{NeighborIndex, PointCloud, RigidTransform};
pub use registration::{IcpParams, IcpResult};
