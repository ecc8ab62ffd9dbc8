//! File formats: PLY clouds and meshes, PGM depth maps and heatmaps, OBJ
//! meshes and CSV reports.

pub mod csv;
pub mod obj;
pub mod pgm;
pub mod ply;

pub use ply::PlyFormat;
