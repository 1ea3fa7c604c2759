//! Linear observation models with exact adjoints.
//!
//! Four degradations are supported: identity (denoising), pixel masking
//! (inpainting), Gaussian blur (deblurring), and block-average
//! downsampling (super-resolution). Every operator satisfies
//! `<F x, y> == <x, F^T y>` exactly up to rounding, which the data-fit
//! gradient relies on.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;

/// A known linear degradation `F` together with its adjoint.
#[derive(Debug, Clone)]
pub enum ObservationOp {
    /// `F = I` (denoising).
    Identity,
    /// Per-pixel binary mask, identically across channels (inpainting).
    /// The mask image has a single channel with entries 0 or 1.
    Mask { mask: Image },
    /// Separable Gaussian blur with symmetric (edge-repeating) padding.
    Blur { taps: Vec<f64> },
    /// Block averaging by an integer factor.
    Downsample { factor: usize },
}

impl ObservationOp {
    pub fn identity() -> Self {
        ObservationOp::Identity
    }

    /// Build a mask operator. `mask` must be single-channel; values at or
    /// above 0.5 count as observed.
    pub fn mask(mask: &Image) -> Result<Self> {
        if mask.channels() != 1 {
            return Err(Error::InvalidConfig(
                "mask must be single-channel".into(),
            ));
        }
        let mut bin = mask.clone();
        for v in bin.data_mut() {
            *v = if *v >= 0.5 { 1.0 } else { 0.0 };
        }
        Ok(ObservationOp::Mask { mask: bin })
    }

    /// Gaussian blur of odd width `w` and standard deviation `std`
    /// (defaulting to `w / 4` when `None`).
    pub fn blur(width: usize, std: Option<f64>) -> Result<Self> {
        if width == 0 || width.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "blur width must be odd and positive, got {width}"
            )));
        }
        let s = std.unwrap_or(width as f64 / 4.0);
        if s <= 0.0 {
            return Err(Error::InvalidConfig("blur std must be positive".into()));
        }
        let c = (width / 2) as f64;
        let mut taps: Vec<f64> = (0..width)
            .map(|i| (-((i as f64 - c) * (i as f64 - c)) / (2.0 * s * s)).exp())
            .collect();
        let sum: f64 = taps.iter().sum();
        for t in &mut taps {
            *t /= sum;
        }
        Ok(ObservationOp::Blur { taps })
    }

    pub fn downsample(factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::InvalidConfig("downsample factor must be >= 1".into()));
        }
        Ok(ObservationOp::Downsample { factor })
    }

    /// Shape of `forward(x)` for an input of shape `(h, w, c)`.
    pub fn output_shape(&self, input: (usize, usize, usize)) -> Result<(usize, usize, usize)> {
        let (h, w, c) = input;
        match self {
            ObservationOp::Identity | ObservationOp::Blur { .. } => Ok((h, w, c)),
            ObservationOp::Mask { mask } => {
                if (mask.height(), mask.width()) != (h, w) {
                    return Err(Error::shape(
                        "ObservationOp::mask shape",
                        format!("{}x{}", mask.height(), mask.width()),
                        format!("{h}x{w}"),
                    ));
                }
                Ok((h, w, c))
            }
            ObservationOp::Downsample { factor } => {
                if h % factor != 0 || w % factor != 0 {
                    return Err(Error::shape(
                        "ObservationOp::downsample shape",
                        format!("multiples of {factor}"),
                        format!("{h}x{w}"),
                    ));
                }
                Ok((h / factor, w / factor, c))
            }
        }
    }

    /// Apply the operator.
    pub fn forward(&self, x: &Image) -> Result<Image> {
        let out_shape = self.output_shape(x.shape())?;
        Ok(match self {
            ObservationOp::Identity => x.clone(),
            ObservationOp::Mask { mask } => {
                let mut out = x.clone();
                let (h, w, c) = x.shape();
                for y in 0..h {
                    for xx in 0..w {
                        let m = mask.get(y, xx, 0);
                        for ch in 0..c {
                            out.set(y, xx, ch, x.get(y, xx, ch) * m);
                        }
                    }
                }
                out
            }
            ObservationOp::Blur { taps } => {
                let tmp = conv_axis(x, taps, AxisDir::Vertical, false);
                conv_axis(&tmp, taps, AxisDir::Horizontal, false)
            }
            ObservationOp::Downsample { factor } => {
                let f = *factor;
                let (oh, ow, c) = out_shape;
                let norm = 1.0 / (f * f) as f64;
                let mut out = Image::zeros(oh, ow, c);
                for y in 0..oh {
                    for xx in 0..ow {
                        for ch in 0..c {
                            let mut acc = 0.0;
                            for i in 0..f {
                                for j in 0..f {
                                    acc += x.get(y * f + i, xx * f + j, ch);
                                }
                            }
                            out.set(y, xx, ch, acc * norm);
                        }
                    }
                }
                out
            }
        })
    }

    /// Apply the exact transpose of [`ObservationOp::forward`].
    ///
    /// `y` must have forward's output shape; `input_shape` gives the shape
    /// of the domain (needed because downsampling is not square).
    pub fn adjoint(&self, y: &Image, input_shape: (usize, usize, usize)) -> Result<Image> {
        let expect = self.output_shape(input_shape)?;
        if y.shape() != expect {
            return Err(Error::shape(
                "ObservationOp::adjoint",
                format!("{expect:?}"),
                format!("{:?}", y.shape()),
            ));
        }
        Ok(match self {
            ObservationOp::Identity => y.clone(),
            // A diagonal operator is self-adjoint.
            ObservationOp::Mask { .. } => self.forward(y)?,
            ObservationOp::Blur { taps } => {
                let tmp = conv_axis(y, taps, AxisDir::Horizontal, true);
                conv_axis(&tmp, taps, AxisDir::Vertical, true)
            }
            ObservationOp::Downsample { factor } => {
                let f = *factor;
                let (h, w, c) = input_shape;
                let norm = 1.0 / (f * f) as f64;
                let mut out = Image::zeros(h, w, c);
                for oy in 0..y.height() {
                    for ox in 0..y.width() {
                        for ch in 0..c {
                            let g = y.get(oy, ox, ch) * norm;
                            for i in 0..f {
                                for j in 0..f {
                                    out.set(oy * f + i, ox * f + j, ch, g);
                                }
                            }
                        }
                    }
                }
                out
            }
        })
    }

    /// A crude right-inverse used to initialize the optimization variable.
    ///
    /// identity -> `y`; mask -> `y` with missing pixels filled by the
    /// per-channel mean of observed pixels; blur -> `y`; downsample ->
    /// nearest-neighbor upscale.
    pub fn pseudo_init(&self, y: &Image) -> Image {
        match self {
            ObservationOp::Identity | ObservationOp::Blur { .. } => y.clone(),
            ObservationOp::Mask { mask } => {
                let (h, w, c) = y.shape();
                let mut out = y.clone();
                for ch in 0..c {
                    let mut sum = 0.0;
                    let mut count = 0.0;
                    for yy in 0..h {
                        for xx in 0..w {
                            if mask.get(yy, xx, 0) >= 0.5 {
                                sum += y.get(yy, xx, ch);
                                count += 1.0;
                            }
                        }
                    }
                    let fill = if count > 0.0 { sum / count } else { 0.5 };
                    for yy in 0..h {
                        for xx in 0..w {
                            if mask.get(yy, xx, 0) < 0.5 {
                                out.set(yy, xx, ch, fill);
                            }
                        }
                    }
                }
                out
            }
            ObservationOp::Downsample { factor } => {
                let f = *factor;
                let (h, w, c) = y.shape();
                let mut out = Image::zeros(h * f, w * f, c);
                for yy in 0..h * f {
                    for xx in 0..w * f {
                        for ch in 0..c {
                            out.set(yy, xx, ch, y.get(yy / f, xx / f, ch));
                        }
                    }
                }
                out
            }
        }
    }

    /// Dump the effective 2-D blur kernel as CSV for inspection.
    pub fn write_kernel_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let ObservationOp::Blur { taps } = self else {
            return Err(Error::InvalidConfig(
                "kernel dump is only defined for the blur operator".into(),
            ));
        };
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for a in taps {
            let row: Vec<String> = taps.iter().map(|b| format!("{:.17e}", a * b)).collect();
            writeln!(f, "{}", row.join(","))?;
        }
        Ok(())
    }
}

enum AxisDir {
    Vertical,
    Horizontal,
}

/// Fold an out-of-range index back into `[0, n)` by symmetric
/// (edge-repeating) reflection.
fn fold(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let mut m = i.rem_euclid(period);
    if m >= n as isize {
        m = period - 1 - m;
    }
    m as usize
}

/// 1-D convolution along one axis with symmetric padding, or its exact
/// transpose when `adjoint` is set.
fn conv_axis(x: &Image, taps: &[f64], dir: AxisDir, adjoint: bool) -> Image {
    let (h, w, c) = x.shape();
    let center = (taps.len() / 2) as isize;
    let mut out = Image::zeros(h, w, c);
    let n = match dir {
        AxisDir::Vertical => h,
        AxisDir::Horizontal => w,
    };
    for y in 0..h {
        for xx in 0..w {
            for ch in 0..c {
                if adjoint {
                    // Scatter: transpose of the gather below.
                    let g = x.get(y, xx, ch);
                    if g != 0.0 {
                        for (d, &k) in taps.iter().enumerate() {
                            let off = d as isize - center;
                            match dir {
                                AxisDir::Vertical => {
                                    let sy = fold(y as isize + off, n);
                                    let prev = out.get(sy, xx, ch);
                                    out.set(sy, xx, ch, prev + k * g);
                                }
                                AxisDir::Horizontal => {
                                    let sx = fold(xx as isize + off, n);
                                    let prev = out.get(y, sx, ch);
                                    out.set(y, sx, ch, prev + k * g);
                                }
                            }
                        }
                    }
                } else {
                    let mut acc = 0.0;
                    for (d, &k) in taps.iter().enumerate() {
                        let off = d as isize - center;
                        acc += k * match dir {
                            AxisDir::Vertical => x.get(fold(y as isize + off, n), xx, ch),
                            AxisDir::Horizontal => x.get(y, fold(xx as isize + off, n), ch),
                        };
                    }
                    out.set(y, xx, ch, acc);
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Image {
        Image::from_data(h, w, c, (0..h * w * c).map(|_| rng.random()).collect()).unwrap()
    }

    fn inner(a: &Image, b: &Image) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn identity_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = random_image(&mut rng, 5, 7, 1);
        let op = ObservationOp::identity();
        assert_eq!(op.forward(&x).unwrap().data(), x.data());
        assert_eq!(op.adjoint(&x, x.shape()).unwrap().data(), x.data());
        assert_eq!(op.pseudo_init(&x).data(), x.data());
    }

    #[test]
    fn full_and_empty_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_image(&mut rng, 4, 4, 3);
        let all = ObservationOp::mask(&Image::constant(4, 4, 1, 1.0)).unwrap();
        assert_eq!(all.forward(&x).unwrap().data(), x.data());
        assert_eq!(all.pseudo_init(&x).data(), x.data());
        let none = ObservationOp::mask(&Image::zeros(4, 4, 1)).unwrap();
        assert!(none.forward(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mask_pseudo_init_fills_with_observed_mean() {
        let mut mask = Image::zeros(1, 4, 1);
        mask.set(0, 0, 0, 1.0);
        mask.set(0, 1, 0, 1.0);
        let y = Image::from_data(1, 4, 1, vec![0.2, 0.4, 9.0, 9.0]).unwrap();
        let op = ObservationOp::mask(&mask).unwrap();
        let init = op.pseudo_init(&y);
        assert!((init.get(0, 2, 0) - 0.3).abs() < 1e-12);
        assert!((init.get(0, 3, 0) - 0.3).abs() < 1e-12);
        assert_eq!(init.get(0, 0, 0), 0.2);
    }

    #[test]
    fn downsample_block_means_hand_case() {
        let x = Image::from_data(4, 4, 1, (1..=16).map(f64::from).collect()).unwrap();
        let op = ObservationOp::downsample(2).unwrap();
        let y = op.forward(&x).unwrap();
        assert_eq!(y.shape(), (2, 2, 1));
        assert_eq!(y.data(), &[3.5, 5.5, 11.5, 13.5]);
    }

    #[test]
    fn downsample_rejects_indivisible_shapes() {
        let x = Image::zeros(5, 4, 1);
        let op = ObservationOp::downsample(2).unwrap();
        assert!(op.forward(&x).is_err());
    }

    #[test]
    fn nearest_neighbor_upscale_replicates_pixels() {
        let y = Image::from_data(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let op = ObservationOp::downsample(2).unwrap();
        let up = op.pseudo_init(&y);
        assert_eq!(up.shape(), (4, 4, 1));
        for yy in 0..4 {
            for xx in 0..4 {
                assert_eq!(up.get(yy, xx, 0), y.get(yy / 2, xx / 2, 0));
            }
        }
    }

    #[test]
    fn downsample_then_pseudo_init_preserves_block_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_image(&mut rng, 8, 8, 1);
        let op = ObservationOp::downsample(4).unwrap();
        let y = op.forward(&x).unwrap();
        let up = op.pseudo_init(&y);
        let y2 = op.forward(&up).unwrap();
        for (a, b) in y.data().iter().zip(y2.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn blur_kernel_preserves_constants() {
        for width in [3usize, 9, 15] {
            let op = ObservationOp::blur(width, None).unwrap();
            let x = Image::constant(12, 10, 1, 0.37);
            let y = op.forward(&x).unwrap();
            for &v in y.data() {
                assert!((v - 0.37).abs() < 1e-12, "width {width}");
            }
        }
    }

    #[test]
    fn blur_rejects_even_widths() {
        assert!(ObservationOp::blur(8, None).is_err());
        assert!(ObservationOp::blur(0, None).is_err());
    }

    #[test]
    fn adjoint_inner_product_identity_all_kinds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let shape = (12usize, 8usize, 1usize);
        let mut mask_img = Image::zeros(shape.0, shape.1, 1);
        for v in mask_img.data_mut() {
            *v = if rng.random::<f64>() < 0.5 { 1.0 } else { 0.0 };
        }
        let ops = vec![
            ObservationOp::identity(),
            ObservationOp::mask(&mask_img).unwrap(),
            ObservationOp::blur(5, None).unwrap(),
            ObservationOp::blur(9, Some(1.3)).unwrap(),
            ObservationOp::downsample(4).unwrap(),
        ];
        for op in &ops {
            for _ in 0..20 {
                let x = random_image(&mut rng, shape.0, shape.1, shape.2);
                let (oh, ow, oc) = op.output_shape(shape).unwrap();
                let y = random_image(&mut rng, oh, ow, oc);
                let lhs = inner(&op.forward(&x).unwrap(), &y);
                let rhs = inner(&x, &op.adjoint(&y, shape).unwrap());
                assert!(
                    (lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()),
                    "adjoint identity failed: {lhs} vs {rhs}"
                );
            }
        }
    }

    #[test]
    fn operators_are_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let shape = (6usize, 6usize, 3usize);
        let ops = vec![
            ObservationOp::identity(),
            ObservationOp::blur(3, None).unwrap(),
            ObservationOp::downsample(2).unwrap(),
        ];
        for op in &ops {
            let x = random_image(&mut rng, shape.0, shape.1, shape.2);
            let y = random_image(&mut rng, shape.0, shape.1, shape.2);
            let (a, b) = (0.7, -1.3);
            let mut combo = Image::zeros(shape.0, shape.1, shape.2);
            for i in 0..combo.len() {
                combo.data_mut()[i] = a * x.data()[i] + b * y.data()[i];
            }
            let lhs = op.forward(&combo).unwrap();
            let fx = op.forward(&x).unwrap();
            let fy = op.forward(&y).unwrap();
            for i in 0..lhs.len() {
                let want = a * fx.data()[i] + b * fy.data()[i];
                assert!((lhs.data()[i] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn kernel_csv_rows_sum_to_tap_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kernel.csv");
        let op = ObservationOp::blur(5, None).unwrap();
        op.write_kernel_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let total: f64 = text
            .lines()
            .flat_map(|l| l.split(','))
            .map(|v| v.parse::<f64>().unwrap())
            .sum();
        assert!((total - 1.0).abs() < 1e-12, "2-D kernel must sum to 1");
        assert!(ObservationOp::identity().write_kernel_csv(&path).is_err());
    }
}
