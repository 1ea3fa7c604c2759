//! Patch extraction and aggregation.
//!
//! An image is turned into a matrix whose columns are vectorized patches;
//! aggregation returns patches to their locations and averages where
//! windows overlap, so that `aggregate(extract(x)) == x`.
//!
//! Vectorization convention, shared by every module that touches patches:
//! channel-major, then row-major within a channel. Column `t` of the patch
//! matrix holds the window whose origin is `t`-th in raster order.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::image::Image;

/// Matrix of vectorized patches: `patch_side^2 * channels` rows, one column
/// per window.
pub type PatchMatrix = Array2<f64>;

/// Geometry of a dense patch decomposition (valid windows, no padding).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGrid {
    patch_side: usize,
    stride: usize,
    height: usize,
    width: usize,
    channels: usize,
}

impl PatchGrid {
    pub fn new(
        patch_side: usize,
        stride: usize,
        height: usize,
        width: usize,
        channels: usize,
    ) -> Result<Self> {
        if patch_side == 0 || stride == 0 {
            return Err(Error::InvalidGrid(format!(
                "patch_side ({patch_side}) and stride ({stride}) must be >= 1"
            )));
        }
        if patch_side > height || patch_side > width {
            return Err(Error::InvalidGrid(format!(
                "patch side {patch_side} exceeds image {height}x{width}"
            )));
        }
        Ok(Self {
            patch_side,
            stride,
            height,
            width,
            channels,
        })
    }

    /// Grid matching an image's shape.
    pub fn for_image(image: &Image, patch_side: usize, stride: usize) -> Result<Self> {
        Self::new(
            patch_side,
            stride,
            image.height(),
            image.width(),
            image.channels(),
        )
    }

    pub fn patch_side(&self) -> usize {
        self.patch_side
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn image_height(&self) -> usize {
        self.height
    }

    pub fn image_width(&self) -> usize {
        self.width
    }

    /// Pixels per patch per channel (`patch_side^2`).
    pub fn patch_area(&self) -> usize {
        self.patch_side * self.patch_side
    }

    /// Rows of the patch matrix: `patch_area * channels`.
    pub fn patch_dim(&self) -> usize {
        self.patch_area() * self.channels
    }

    /// Number of window origins along the vertical axis.
    pub fn origin_rows(&self) -> usize {
        (self.height - self.patch_side) / self.stride + 1
    }

    /// Number of window origins along the horizontal axis.
    pub fn origin_cols(&self) -> usize {
        (self.width - self.patch_side) / self.stride + 1
    }

    /// Total number of patches `T`.
    pub fn patch_count(&self) -> usize {
        self.origin_rows() * self.origin_cols()
    }

    /// Origin (top-left pixel) of patch `t` in raster order.
    pub fn origin(&self, t: usize) -> (usize, usize) {
        let cols = self.origin_cols();
        ((t / cols) * self.stride, (t % cols) * self.stride)
    }

    fn check_image(&self, x: &Image, context: &'static str) -> Result<()> {
        if x.shape() != (self.height, self.width, self.channels) {
            return Err(Error::shape(
                context,
                format!("{:?}", (self.height, self.width, self.channels)),
                format!("{:?}", x.shape()),
            ));
        }
        Ok(())
    }

    fn check_patches(&self, patches: &PatchMatrix, context: &'static str) -> Result<()> {
        if patches.nrows() != self.patch_dim() || patches.ncols() != self.patch_count() {
            return Err(Error::shape(
                context,
                format!("{}x{}", self.patch_dim(), self.patch_count()),
                format!("{}x{}", patches.nrows(), patches.ncols()),
            ));
        }
        Ok(())
    }
}

/// Extract all patches of `x` as columns of a matrix.
pub fn extract(x: &Image, grid: &PatchGrid) -> Result<PatchMatrix> {
    grid.check_image(x, "patch::extract")?;
    let s = grid.patch_side;
    let area = grid.patch_area();
    let mut out = Array2::zeros((grid.patch_dim(), grid.patch_count()));
    for t in 0..grid.patch_count() {
        let (r0, c0) = grid.origin(t);
        for ch in 0..grid.channels {
            for i in 0..s {
                for j in 0..s {
                    out[[ch * area + i * s + j, t]] = x.get(r0 + i, c0 + j, ch);
                }
            }
        }
    }
    Ok(out)
}

/// Transpose of [`extract`]: scatter every patch back to its window and sum
/// overlapping contributions (no averaging).
pub fn extract_adjoint(patches: &PatchMatrix, grid: &PatchGrid) -> Result<Image> {
    grid.check_patches(patches, "patch::extract_adjoint")?;
    let s = grid.patch_side;
    let area = grid.patch_area();
    let mut out = Image::zeros(grid.height, grid.width, grid.channels);
    for t in 0..grid.patch_count() {
        let (r0, c0) = grid.origin(t);
        for ch in 0..grid.channels {
            for i in 0..s {
                for j in 0..s {
                    let v = patches[[ch * area + i * s + j, t]];
                    let prev = out.get(r0 + i, c0 + j, ch);
                    out.set(r0 + i, c0 + j, ch, prev + v);
                }
            }
        }
    }
    Ok(out)
}

/// Per-pixel count of covering windows.
///
/// Errors unless every pixel is covered at least once, which for valid
/// windows requires `stride <= patch_side` (and origins reaching the last
/// row/column).
pub fn overlap_counts(grid: &PatchGrid) -> Result<Image> {
    if grid.stride > grid.patch_side {
        return Err(Error::CoverageGap {
            patch_side: grid.patch_side,
            stride: grid.stride,
        });
    }
    // Window coverage is separable: count per row times count per column.
    let axis_counts = |n: usize, origins: usize| -> Vec<f64> {
        let mut counts = vec![0.0; n];
        for o in 0..origins {
            let start = o * grid.stride;
            for c in &mut counts[start..start + grid.patch_side] {
                *c += 1.0;
            }
        }
        counts
    };
    let rows = axis_counts(grid.height, grid.origin_rows());
    let cols = axis_counts(grid.width, grid.origin_cols());
    if rows.iter().chain(cols.iter()).any(|&c| c == 0.0) {
        return Err(Error::CoverageGap {
            patch_side: grid.patch_side,
            stride: grid.stride,
        });
    }
    let mut out = Image::zeros(grid.height, grid.width, grid.channels);
    for (y, row_count) in rows.iter().enumerate() {
        for (x, col_count) in cols.iter().enumerate() {
            for c in 0..grid.channels {
                out.set(y, x, c, row_count * col_count);
            }
        }
    }
    Ok(out)
}

/// Pseudo-inverse of [`extract`]: scatter, sum, and divide by the overlap
/// count of each pixel.
pub fn aggregate(patches: &PatchMatrix, grid: &PatchGrid) -> Result<Image> {
    let counts = overlap_counts(grid)?;
    let mut out = extract_adjoint(patches, grid)?;
    for (v, d) in out.data_mut().iter_mut().zip(counts.data()) {
        *v /= d;
    }
    Ok(out)
}
