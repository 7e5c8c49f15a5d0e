//! Camera model, rigid transforms, back-projection, depth normals and point
//! covariances.

mod camera;
mod cloud;
mod normals;
mod se3;

pub use camera::{ColorImage, DepthImage, Frame, Image, Intrinsics};
pub use cloud::{
    backproject, estimate_point_covariances, flatten_covariance, least_variance_direction,
    plane_covariance, sample_covariance, PointCloud, DEFAULT_EPSILON,
};
pub use normals::{normals_from_depth, normals_from_depth_backward, NormalMap};
pub use se3::{
    hat, orthonormalize, quaternion_to_rotation, rotation_error, rotation_to_quaternion, so3_exp,
    so3_log, Mat3, Pose, Twist, Vec3,
};
