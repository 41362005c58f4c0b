//! Meshes, rigid alignment, UV position maps, shape fitting and Laplacian editing.

mod deform;
mod frame;
mod kabsch;
mod mesh;
mod pmap;

pub use deform::{fit_shape_basis, laplacian_deform, DeformConfig, ShapeBasis, BASIS_DAMPING, DEFAULT_CONSTRAINT_WEIGHT};
pub use frame::{face_frame, face_frames, FaceFrame};
pub use kabsch::{kabsch_align, kabsch_align_f64, RigidTransform};
pub use mesh::{TriMesh, MIN_FACE_AREA};
pub use pmap::{
    image_laplacian, rasterize_position_map, sample_vertices, PositionMap, SampledVertices, UvRaster,
    MAP_RESOLUTION, OVERLAP_WARN_FRACTION, PMAP_MAGIC, SENTINEL,
};
