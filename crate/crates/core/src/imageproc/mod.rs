//! Classical image operations: edges, disparity warping, patches, quality metrics.

mod canny;
mod patch;
mod quality;
mod warp;

pub use canny::{canny, CannyParams};
pub use patch::{extract_patch, patch_indices, Patch};
pub use quality::{mse, psnr, psnr_masked, ssim, SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WINDOW};
pub use warp::{warp_by_disparity, warp_mask_by_disparity, WarpDirection, Warped};
