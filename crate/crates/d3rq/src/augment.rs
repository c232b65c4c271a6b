//! Random-shift image augmentation.
//!
//! The update path perturbs each observation by replicate-padding the image,
//! sampling one continuous shift per image, and resampling the original grid
//! with bilinear interpolation. A zero shift reproduces the input exactly and
//! every output pixel is a convex combination of padded-input pixels.

use crate::error::{Error, Result};
use crate::rng::DetRng;

/// Channel-major image with values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidArgument("image dims must be positive".into()));
        }
        if data.len() != channels * height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {channels}x{height}x{width}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::InvalidArgument("pixel values must lie in [0, 1]".into()));
        }
        Ok(ImageTensor { channels, height, width, data })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        ImageTensor { channels, height, width, data: vec![0.0; channels * height * width] }
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }
}

/// Replicate-pad by `pad` pixels on every side; border pixels repeat the
/// nearest edge pixel.
pub fn pad_replicate(img: &ImageTensor, pad: usize) -> ImageTensor {
    if pad == 0 {
        return img.clone();
    }
    let (h, w) = (img.height, img.width);
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut out = ImageTensor::zeros(img.channels, ph, pw);
    for c in 0..img.channels {
        for y in 0..ph {
            let sy = y.saturating_sub(pad).min(h - 1);
            for x in 0..pw {
                let sx = x.saturating_sub(pad).min(w - 1);
                out.set(c, y, x, img.at(c, sy, sx));
            }
        }
    }
    out
}

/// Resample the original grid from the padded image at a fixed continuous
/// offset `(shift_x, shift_y)`, bilinear. Shifts must lie in `[-pad, pad]`;
/// the same shift applies to all channels. Exposed so tests can force exact
/// shifts; [`random_shift`] draws them.
pub fn shift_with(img: &ImageTensor, pad: usize, shift: (f64, f64)) -> Result<ImageTensor> {
    let (sx, sy) = shift;
    let p = pad as f64;
    if !(sx.is_finite() && sy.is_finite()) || sx.abs() > p || sy.abs() > p {
        return Err(Error::InvalidArgument(format!(
            "shift ({sx}, {sy}) outside [-{pad}, {pad}]"
        )));
    }
    let padded = pad_replicate(img, pad);
    let mut out = ImageTensor::zeros(img.channels, img.height, img.width);
    for c in 0..img.channels {
        for y in 0..img.height {
            let fy = y as f64 + p + sy;
            let y0 = fy.floor() as usize;
            let ty = fy - y0 as f64;
            let y1 = (y0 + 1).min(padded.height - 1);
            for x in 0..img.width {
                let fx = x as f64 + p + sx;
                let x0 = fx.floor() as usize;
                let tx = fx - x0 as f64;
                let x1 = (x0 + 1).min(padded.width - 1);
                let v00 = padded.at(c, y0, x0);
                let v01 = padded.at(c, y0, x1);
                let v10 = padded.at(c, y1, x0);
                let v11 = padded.at(c, y1, x1);
                let v = v00 * (1.0 - ty) * (1.0 - tx)
                    + v01 * (1.0 - ty) * tx
                    + v10 * ty * (1.0 - tx)
                    + v11 * ty * tx;
                out.set(c, y, x, v);
            }
        }
    }
    Ok(out)
}

/// Pad by `pad`, draw one shift uniformly from `[-pad, pad]^2`, and resample.
/// Output dims equal input dims. The image must be square, matching the
/// pixel pipeline this augmentation serves.
pub fn random_shift(img: &ImageTensor, pad: usize, rng: &mut DetRng) -> Result<ImageTensor> {
    if img.height != img.width {
        return Err(Error::InvalidArgument(format!(
            "random_shift expects square images, got {}x{}",
            img.height, img.width
        )));
    }
    let p = pad as f64;
    let sx = rng.uniform(-p, p);
    let sy = rng.uniform(-p, p);
    shift_with(img, pad, (sx, sy))
}

/// Independent shift per image, drawn in batch order from `rng`.
pub fn augment_batch(batch: &[ImageTensor], pad: usize, rng: &mut DetRng) -> Result<Vec<ImageTensor>> {
    batch.iter().map(|img| random_shift(img, pad, rng)).collect()
}
