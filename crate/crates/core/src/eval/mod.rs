//! Trajectory, image and surface metrics, plus TSDF fusion and meshing.

mod marching;
mod mesh;
mod metrics;
mod prf;
mod tsdf;

pub use marching::extract_mesh;
pub use mesh::TriangleMesh;
pub use metrics::{
    associate, ate, ate_rmse, depth_l1, depth_mask, gaussian_taps, psnr, rigid_alignment, ssim,
    AteResult, ASSOCIATION_TOLERANCE, PSNR_CAP_DB, SSIM_SIGMA, SSIM_WINDOW,
};
pub use prf::{
    closest_point_on_triangle, mesh_prf, sample_surface, MeshPrf, TriangleGrid, DEFAULT_SAMPLES,
};
pub use tsdf::{TsdfVolume, DEFAULT_TRUNCATION};
