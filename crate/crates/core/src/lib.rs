//! Morphology reconstruction for millimeter-scale notched tubular continuum
//! robots (NTCRs) from two opposed stereo depth cameras.
//!
//! The crate follows the data flow of the capture rig:
//!
//! 1. [`synth`] builds the parametric notched tube and simulates the two
//!    depth cameras, so every stage has ground truth to be tested against.
//! 2. [`projection`] turns depth maps into point clouds in the robot base
//!    frame.
//! 3. [`filtering`] removes statistical outliers, applies spatial/color
//!    conditions, and smooths with moving least squares.
//! 4. [`registration`] relocates captured clouds onto the predefined tube
//!    geometry with KD-tree backed ICP ([`kdtree`]).
//! 5. [`surface`] estimates normals and runs a grid Poisson reconstruction.
//! 6. [`metrics`] reports point-density consistency and notch widths.
//!
//! [`pipeline`] wires the stages together behind the `ntcr-recon` CLI.
//!
//! ```
//! use ntcr_recon::geometry::{apply_transform, PointCloud, Point3, RigidTransform, Vec3};
//!
//! let cloud = PointCloud::new(vec![Point3::new(1.0, 0.0, 0.0)], "camera").unwrap();
//! let quarter = RigidTransform::from_axis_angle(
//!     Vec3::z(), std::f64::consts::FRAC_PI_2, Vec3::zeros()).unwrap();
//! let moved = apply_transform(&cloud, &quarter, "base");
//! assert!((moved.points()[0] - Point3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
//! ```

pub mod config;
pub mod error;
pub mod filtering;
pub mod geometry;
pub mod io;
pub mod kdtree;
pub mod metrics;
pub mod pipeline;
pub mod projection;
pub mod registration;
pub mod surface;
pub mod synth;

pub use error::{Error, Result};
pub use geometry::{apply_transform, compose, Point3, PointCloud, RigidTransform, TriangleMesh, Vec3};
pub use kdtree::KdTree;
