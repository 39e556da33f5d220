//! Multilevel registration of large 2D images with the normalized gradient
//! fields distance: rotation pre-alignment, affine and curvature-regularized
//! deformable stages, plus landmark-based evaluation.

pub mod cli;
pub mod curvature;
pub mod error;
pub mod evaluation;
pub mod geom;
pub mod ngf;
pub mod optimizer;
pub mod parallel;
pub mod pipeline;
pub mod pyramid;
pub mod transform;

pub use error::{Error, Result};
pub use evaluation::{count_folds, mtre, tre, LandmarkSet, MetricsReport};
pub use geom::{Rect, Vec2};
pub use ngf::NgfConfig;
pub use pipeline::{register, PipelineConfig, RegistrationResult};
pub use pyramid::{Image, Pyramid, Raster};
pub use transform::{AffineParams, DisplacementGrid, GridShape, RigidParams, Transform};
