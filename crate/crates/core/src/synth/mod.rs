//! Synthetic ground truth: the parametric notched tube and a simulated pair
//! of opposed stereo depth cameras.

mod camera;
mod ntcr;
mod scene;

pub use camera::{
    make_opposed_rig, render_depth, RenderOptions, RenderOutput, RenderStatus, VirtualCamera,
};
pub use ntcr::{
    sample_ntcr_surface, NtcrSpec, SurfacePatch, TubeCoords, MIN_REFERENCE_POINTS,
};
pub use scene::{rack_geometry, Aabb, NtcrScene, Plane, RayTarget, Sphere, SurfaceLabel};
