//! Feature-based registration of small-field-of-view retinal images into
//! wide-field images.
//!
//! Images are handled as vessel maps: the target is cropped around the
//! macula so both fields of view roughly agree, vessel junctions are
//! detected and matched, and the transform is fitted by RANSAC over a
//! homography followed by a polynomial least-squares refit on the inliers.

pub mod crop;
pub mod error;
pub mod evaluation;
pub mod fitting;
pub mod keypoints;
pub mod pipeline;
pub mod raster;
pub mod synth;
pub mod vessel;
pub mod warp;

pub use error::{RegError, Result};
