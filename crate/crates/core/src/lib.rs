//! Focus+context magnification lenses built from mesh geometry.
//!
//! An image is covered by a regular triangle mesh. Each lens lifts the mesh
//! into a 3D bump over its region of interest, texture coordinates are
//! re-solved harmonically on the bump, and the lifted mesh is flattened back
//! to the screen by an alternating per-triangle metric fit and a global,
//! prefactored least-squares solve. Rendering the flattened mesh with the
//! re-solved texture coordinates magnifies the region while the context stays
//! connected.
//!
//! The stages map onto modules:
//!
//! | stage                 | module         |
//! |-----------------------|----------------|
//! | mesh construction     | [`mesh`]       |
//! | lens regions          | [`lens`]       |
//! | height lift           | [`lift`]       |
//! | texture transfer      | [`texture`]    |
//! | flattening            | [`flatten`]    |
//! | distortion measure    | [`distortion`] |
//! | radial baselines      | [`baselines`]  |
//! | image I/O and raster  | [`raster`]     |
//! | end-to-end driver     | [`pipeline`]   |

// `!(x > 0.0)` is used on purpose so NaN parameters are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod distortion;
pub mod error;
pub mod flatten;
pub mod lens;
pub mod lift;
pub mod mesh;
pub mod pipeline;
pub mod raster;
pub mod sparse;
pub mod svd2;
pub mod texture;

pub type Vec2 = nalgebra::Vector2<f64>;
pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat2 = nalgebra::Matrix2<f64>;

pub use baselines::{RadialLens, RadialLensKind};
pub use distortion::DistortionReport;
pub use error::{LensError, Result};
pub use flatten::{
    BoundaryMode, FlattenOutput, FlattenProblem, MetricMatrix, MetricParams, PrefactoredSystem,
    SolveReport, StandardTriangle,
};
pub use lens::{LensRegion, LensShape, LensSpec, MarkedMesh};
pub use lift::{HeightProfile, ProfileKind, ProfileMode};
pub use mesh::{BoundaryFlag, OneRing, TriMesh, Vertex};
pub use pipeline::{PipelineConfig, PipelineOutput};
pub use raster::ImageBuffer;
pub use texture::{DirichletMode, HarmonicSolveParams};
