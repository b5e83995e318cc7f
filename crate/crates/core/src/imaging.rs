//! Image loading, normalization, resizing, and the two training-time
//! augmentations: random rotation within a degree bound and random
//! area-scaled crop-resize. All ops map [0,1] images to [0,1] images of the
//! same shape and are bit-deterministic given the rng stream.

use std::path::Path;

use ndarray::{Array3, Array4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Scalar;
use crate::rng::RngStream;

/// Dense H×W×C intensity array with values in [0,1]. C is 1 or 3.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<F: Scalar> {
    data: Array3<F>,
}

impl<F: Scalar> Image<F> {
    pub fn new(data: Array3<F>) -> Result<Self> {
        let (h, w, c) = data.dim();
        if h < 8 || w < 8 {
            return Err(Error::Invalid(format!("image too small: {h}x{w}")));
        }
        if c != 1 && c != 3 {
            return Err(Error::Invalid(format!("channels must be 1 or 3, got {c}")));
        }
        let zero = F::zero();
        let one = F::one();
        if data.iter().any(|v| *v < zero || *v > one || !v.is_finite()) {
            return Err(Error::Invalid("image values must lie in [0, 1]".into()));
        }
        Ok(Self { data })
    }

    /// Skips the range scan; callers guarantee values already lie in [0,1].
    pub(crate) fn from_valid(data: Array3<F>) -> Self {
        Self { data }
    }

    pub fn constant(h: usize, w: usize, c: usize, value: F) -> Result<Self> {
        Self::new(Array3::from_elem((h, w, c), value))
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn channels(&self) -> usize {
        self.data.dim().2
    }

    pub fn data(&self) -> &Array3<F> {
        &self.data
    }

    /// Mean across channels as an H×W view; used for rendering.
    pub fn to_gray(&self) -> ndarray::Array2<F> {
        let (h, w, c) = self.data.dim();
        let inv = F::from_f64(1.0 / c as f64);
        ndarray::Array2::from_shape_fn((h, w), |(y, x)| {
            let mut acc = F::zero();
            for ch in 0..c {
                acc = acc + self.data[[y, x, ch]];
            }
            acc * inv
        })
    }

    /// Replicate a single channel to three; identity for 3-channel images.
    pub fn to_channels(&self, channels: usize) -> Result<Self> {
        let (h, w, c) = self.data.dim();
        if c == channels {
            return Ok(self.clone());
        }
        if c == 1 && channels == 3 {
            let data = Array3::from_shape_fn((h, w, 3), |(y, x, _)| self.data[[y, x, 0]]);
            return Ok(Self::from_valid(data));
        }
        Err(Error::Invalid(format!(
            "cannot convert {c}-channel image to {channels} channels"
        )))
    }
}

/// Stack images into an N×C×H×W batch.
pub fn to_nchw<F: Scalar>(images: &[Image<F>]) -> Result<Array4<F>> {
    let first = images
        .first()
        .ok_or_else(|| Error::Invalid("empty batch".into()))?;
    let (h, w, c) = first.data.dim();
    let mut batch = Array4::zeros((images.len(), c, h, w));
    for (i, img) in images.iter().enumerate() {
        if img.data.dim() != (h, w, c) {
            return Err(Error::Shape {
                expected: format!("{h}x{w}x{c}"),
                got: format!("{:?}", img.data.dim()),
            });
        }
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    batch[[i, ch, y, x]] = img.data[[y, x, ch]];
                }
            }
        }
    }
    Ok(batch)
}

/// Decode an 8-bit image file, normalize by dividing by 255, resize to
/// `target_size` bilinearly, and expand to `channels` channels.
pub fn load_and_normalize<F: Scalar>(
    path: &Path,
    target_size: (usize, usize),
    channels: usize,
) -> Result<Image<F>> {
    let (th, tw) = target_size;
    if th == 0 || tw == 0 {
        return Err(Error::Invalid("zero-area resize target".into()));
    }
    let decoded = image::open(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let inv255 = F::from_f64(1.0 / 255.0);
    let raw: Array3<F> = if channels == 1 {
        let gray = decoded.into_luma8();
        let (w, h) = gray.dimensions();
        Array3::from_shape_fn((h as usize, w as usize, 1), |(y, x, _)| {
            F::from_f64(gray.get_pixel(x as u32, y as u32).0[0] as f64) * inv255
        })
    } else {
        let rgb = decoded.into_rgb8();
        let (w, h) = rgb.dimensions();
        Array3::from_shape_fn((h as usize, w as usize, 3), |(y, x, c)| {
            F::from_f64(rgb.get_pixel(x as u32, y as u32).0[c] as f64) * inv255
        })
    };
    let resized = resize_bilinear_array(&raw, th, tw);
    Image::new(resized)?.to_channels(channels)
}

/// Bilinear resize with the half-pixel-center convention; identity when the
/// target equals the source size.
pub fn resize_bilinear<F: Scalar>(image: &Image<F>, h: usize, w: usize) -> Result<Image<F>> {
    if h == 0 || w == 0 {
        return Err(Error::Invalid("zero-area resize target".into()));
    }
    Ok(Image::from_valid(resize_bilinear_array(&image.data, h, w)))
}

pub(crate) fn resize_bilinear_array<F: Scalar>(src: &Array3<F>, th: usize, tw: usize) -> Array3<F> {
    let (sh, sw, c) = src.dim();
    if (sh, sw) == (th, tw) {
        return src.clone();
    }
    let sy = sh as f64 / th as f64;
    let sx = sw as f64 / tw as f64;
    Array3::from_shape_fn((th, tw, c), |(y, x, ch)| {
        let py = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (sh - 1) as f64);
        let px = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (sw - 1) as f64);
        sample_clamped(src, py, px, ch)
    })
}

/// Bilinear sample at continuous pixel-center coordinates, clamping at the
/// border.
fn sample_clamped<F: Scalar>(src: &Array3<F>, py: f64, px: f64, ch: usize) -> F {
    let (h, w, _) = src.dim();
    let y0 = py.floor();
    let x0 = px.floor();
    let fy = py - y0;
    let fx = px - x0;
    let yi = y0 as isize;
    let xi = x0 as isize;
    let at = |y: isize, x: isize| -> F {
        let y = y.clamp(0, h as isize - 1) as usize;
        let x = x.clamp(0, w as isize - 1) as usize;
        src[[y, x, ch]]
    };
    let w00 = F::from_f64((1.0 - fy) * (1.0 - fx));
    let w01 = F::from_f64((1.0 - fy) * fx);
    let w10 = F::from_f64(fy * (1.0 - fx));
    let w11 = F::from_f64(fy * fx);
    at(yi, xi) * w00 + at(yi, xi + 1) * w01 + at(yi + 1, xi) * w10 + at(yi + 1, xi + 1) * w11
}

/// Bilinear sample where out-of-frame neighbors contribute the fill value 0.
fn sample_zero_fill<F: Scalar>(src: &Array3<F>, py: f64, px: f64, ch: usize) -> F {
    let (h, w, _) = src.dim();
    let y0 = py.floor();
    let x0 = px.floor();
    let fy = py - y0;
    let fx = px - x0;
    let yi = y0 as isize;
    let xi = x0 as isize;
    let at = |y: isize, x: isize| -> F {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            F::zero()
        } else {
            src[[y as usize, x as usize, ch]]
        }
    };
    let w00 = F::from_f64((1.0 - fy) * (1.0 - fx));
    let w01 = F::from_f64((1.0 - fy) * fx);
    let w10 = F::from_f64(fy * (1.0 - fx));
    let w11 = F::from_f64(fy * fx);
    at(yi, xi) * w00 + at(yi, xi + 1) * w01 + at(yi + 1, xi) * w10 + at(yi + 1, xi + 1) * w11
}

/// Draw the rotation angle in degrees, uniform over [-max_deg, +max_deg].
pub fn draw_rotation_angle(max_deg: f64, rng: &mut RngStream) -> f64 {
    rng.uniform(-max_deg, max_deg)
}

/// Rotate by a uniform random angle within ±`max_deg` about the image
/// center, bilinear interpolation, out-of-frame pixels filled with 0.
pub fn random_rotation<F: Scalar>(
    image: &Image<F>,
    max_deg: f64,
    rng: &mut RngStream,
) -> Result<Image<F>> {
    if !(0.0..45.0).contains(&max_deg) {
        return Err(Error::Invalid(format!(
            "rotation bound must lie in [0, 45), got {max_deg}"
        )));
    }
    let angle = draw_rotation_angle(max_deg, rng);
    rotate(image, angle)
}

/// Rotate by a fixed angle (degrees, counterclockwise).
pub fn rotate<F: Scalar>(image: &Image<F>, angle_deg: f64) -> Result<Image<F>> {
    let (h, w, c) = image.data.dim();
    let theta = angle_deg.to_radians();
    let (sin, cos) = theta.sin_cos();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let one = F::one();
    let zero = F::zero();
    let data = Array3::from_shape_fn((h, w, c), |(y, x, ch)| {
        // Inverse mapping: rotate the output coordinate back by -angle.
        let dy = y as f64 - cy;
        let dx = x as f64 - cx;
        let py = cy + dy * cos - dx * sin;
        let px = cx + dy * sin + dx * cos;
        let v = sample_zero_fill(&image.data, py, px, ch);
        // Interpolation of in-range values stays in range up to rounding.
        if v < zero {
            zero
        } else if v > one {
            one
        } else {
            v
        }
    });
    Ok(Image::from_valid(data))
}

/// Crop geometry for one draw: (crop_h, crop_w, offset_y, offset_x).
pub fn draw_crop_params(
    h: usize,
    w: usize,
    scale_range: (f64, f64),
    rng: &mut RngStream,
) -> Result<(usize, usize, usize, usize)> {
    let (lo, hi) = scale_range;
    if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
        return Err(Error::Invalid(format!(
            "crop scale range must satisfy 0 < lo <= hi <= 1, got ({lo}, {hi})"
        )));
    }
    let area = rng.uniform(lo, hi);
    let side = area.sqrt();
    // Ceil keeps the realized area fraction >= the drawn fraction.
    let ch = ((h as f64 * side).ceil() as usize).clamp(1, h);
    let cw = ((w as f64 * side).ceil() as usize).clamp(1, w);
    let oy = rng.below(h - ch + 1);
    let ox = rng.below(w - cw + 1);
    Ok((ch, cw, oy, ox))
}

/// Random crop with area fraction drawn uniformly from `scale_range`
/// (aspect ratio fixed at the source's), resized back to the input size.
pub fn random_resized_crop<F: Scalar>(
    image: &Image<F>,
    scale_range: (f64, f64),
    rng: &mut RngStream,
) -> Result<Image<F>> {
    let (h, w, c) = image.data.dim();
    let (ch, cw, oy, ox) = draw_crop_params(h, w, scale_range, rng)?;
    if (ch, cw) == (h, w) {
        return Ok(image.clone());
    }
    let crop = Array3::from_shape_fn((ch, cw, c), |(y, x, chn)| {
        image.data[[oy + y, ox + x, chn]]
    });
    Ok(Image::from_valid(resize_bilinear_array(&crop, h, w)))
}

/// The two training-time transforms with their default parameters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationPolicy {
    pub rotation_max_deg: f64,
    pub crop_scale_min: f64,
    pub crop_scale_max: f64,
    pub rotation_enabled: bool,
    pub crop_enabled: bool,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        Self {
            rotation_max_deg: 10.0,
            crop_scale_min: 0.75,
            crop_scale_max: 1.0,
            rotation_enabled: true,
            crop_enabled: true,
        }
    }
}

impl AugmentationPolicy {
    /// Policy with both transforms off; evaluation paths must use this.
    pub fn disabled() -> Self {
        Self {
            rotation_enabled: false,
            crop_enabled: false,
            ..Self::default()
        }
    }

    pub fn is_enabled(&self) -> bool {
        self.rotation_enabled || self.crop_enabled
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..45.0).contains(&self.rotation_max_deg) {
            return Err(Error::Invalid(format!(
                "rotation_max_deg must lie in [0, 45), got {}",
                self.rotation_max_deg
            )));
        }
        if !(self.crop_scale_min > 0.0
            && self.crop_scale_min <= self.crop_scale_max
            && self.crop_scale_max <= 1.0)
        {
            return Err(Error::Invalid(format!(
                "crop scale range ({}, {}) invalid",
                self.crop_scale_min, self.crop_scale_max
            )));
        }
        Ok(())
    }
}

/// Apply rotation then crop-resize, each only if enabled. Deterministic
/// given the rng state; a disabled policy is the identity.
pub fn apply_policy<F: Scalar>(
    image: &Image<F>,
    policy: &AugmentationPolicy,
    rng: &mut RngStream,
) -> Result<Image<F>> {
    policy.validate()?;
    let mut out = image.clone();
    if policy.rotation_enabled {
        out = random_rotation(&out, policy.rotation_max_deg, rng)?;
    }
    if policy.crop_enabled {
        out = random_resized_crop(&out, (policy.crop_scale_min, policy.crop_scale_max), rng)?;
    }
    Ok(out)
}
