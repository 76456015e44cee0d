//! Skeletal motion: skeletons, clips, BVH text, and flat frame matrices.

mod bvh;
mod clip;
mod frames;
pub mod rotation;
mod skeleton;

pub use bvh::{parse_bvh, write_bvh};
pub use clip::MotionClip;
pub(crate) use frames::derivative_values;
pub use frames::{
    derivatives, from_frame_matrix, join_parts, read_matrix_bin, split_parts, to_frame_matrix,
    write_matrix_bin, FrameLayout, FrameMatrix,
};
pub use rotation::{EulerOrder, RotationParam};
pub use skeleton::{classify_joint, BodyPart, Skeleton};
