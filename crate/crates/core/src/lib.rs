//! Self-intersection penalty for closed triangle meshes.

pub mod body;
pub mod detector;
pub mod error;
pub mod fixtures;
pub mod mesh;
pub mod numeric;
pub mod optim;
pub mod oracle;
pub mod penalty;

pub use body::{build_toy_body, BodyConfig, Camera, PoseParams, ShapeParams, SkinnedModel, Targets};
pub use detector::{classify, Classification, DetectionGrid, Detector, Label, Rays, ViewAxis};
pub use error::{Error, Result};
pub use mesh::{generate, load_obj, save_obj, FaceGeometry, MeshKind, TriMesh, ValidationReport};
pub use optim::{fit_pose_2d, remove_pose_space, remove_vertex_space, OptimConfig, RunTrace, Termination};
pub use penalty::{spt_gradient, spt_value, volume_derivative, GradientField, PenaltyReport};
