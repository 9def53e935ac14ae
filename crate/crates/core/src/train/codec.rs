//! Exactly invertible stand-in for an image autoencoder: space-to-depth
//! followed by a fixed affine normalisation.
//!
//! The shift is either one value or a per-pixel mean image, always in
//! multiples of 1/256, and the scale is a power of two, so for `f32`
//! pixels the affine map and its inverse are exact in `f64`. A per-pixel
//! shift removes the structure shared by every training image (the body
//! silhouette), which otherwise survives at the largest diffusion
//! timestep and is absent from the pure noise sampling starts from.

use std::collections::BTreeMap;

use super::TrainError;
use crate::diffusion::LatentTensor;
use crate::drr::{Image, IntensityKind};

#[derive(Debug, Clone, PartialEq)]
enum Shift {
    Uniform(f64),
    /// Row-major per-pixel shift, in units of 1/256.
    PerPixel { width: usize, height: usize, steps: Vec<i32> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentCodec {
    factor: usize,
    shift: Shift,
    scale: f64,
}

const META_FACTOR: &str = "codec.factor";
const META_SHIFT: &str = "codec.shift";
const META_SCALE: &str = "codec.scale";
const SHIFT_STEP: f64 = 256.0;

impl LatentCodec {
    /// Identity affine map.
    pub fn new(factor: usize) -> Result<Self, TrainError> {
        Self::with_affine(factor, 0.0, 1.0)
    }

    /// Uniform shift.
    pub fn with_affine(factor: usize, shift: f64, scale: f64) -> Result<Self, TrainError> {
        if !shift.is_finite() {
            return Err(TrainError::Codec(format!("invalid shift {shift}")));
        }
        Self::build(factor, Shift::Uniform(shift), scale)
    }

    /// Per-pixel shift `steps[y * width + x] / 256`.
    pub fn with_shift_map(
        factor: usize,
        width: usize,
        height: usize,
        steps: Vec<i32>,
        scale: f64,
    ) -> Result<Self, TrainError> {
        if steps.len() != width * height || width == 0 {
            return Err(TrainError::Codec(format!(
                "shift map has {} values for {width}x{height}",
                steps.len()
            )));
        }
        Self::build(factor, Shift::PerPixel { width, height, steps }, scale)
    }

    fn build(factor: usize, shift: Shift, scale: f64) -> Result<Self, TrainError> {
        if factor == 0 {
            return Err(TrainError::Codec("factor must be positive".into()));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(TrainError::Codec(format!("invalid scale {scale}")));
        }
        Ok(Self { factor, shift, scale })
    }

    /// Fits a per-pixel mean image (rounded to 1/256) and a power-of-two
    /// scale near the standard deviation of the residuals. All images must
    /// share one size.
    pub fn fit<'a>(factor: usize, images: impl IntoIterator<Item = &'a Image>) -> Result<Self, TrainError> {
        let mut sums: Vec<f64> = Vec::new();
        let mut dims = None;
        let mut count = 0usize;
        let mut all = Vec::new();
        for img in images {
            let d = (img.width(), img.height());
            match dims {
                None => {
                    dims = Some(d);
                    sums = vec![0.0; d.0 * d.1];
                }
                Some(prev) if prev != d => {
                    return Err(TrainError::Codec(format!("mixed image sizes {prev:?} and {d:?}")));
                }
                Some(_) => {}
            }
            for (s, &p) in sums.iter_mut().zip(img.pixels()) {
                *s += p as f64;
            }
            count += 1;
            all.push(img);
        }
        let Some((width, height)) = dims else {
            return Err(TrainError::Codec("no images to fit".into()));
        };
        let steps: Vec<i32> = sums.iter().map(|s| (s / count as f64 * SHIFT_STEP).round() as i32).collect();
        let (mut sq, mut n) = (0.0, 0usize);
        for img in all {
            for (&p, &k) in img.pixels().iter().zip(&steps) {
                sq += (p as f64 - k as f64 / SHIFT_STEP).powi(2);
                n += 1;
            }
        }
        let std = (sq / n as f64).sqrt();
        let scale = if std > 0.0 { 2f64.powi(std.log2().round() as i32) } else { 1.0 };
        Self::with_shift_map(factor, width, height, steps, scale)
    }

    pub fn factor(&self) -> usize {
        self.factor
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Shift applied to pixel `(x, y)`.
    pub fn shift_at(&self, x: usize, y: usize) -> f64 {
        match &self.shift {
            Shift::Uniform(s) => *s,
            Shift::PerPixel { width, steps, .. } => steps[y * width + x] as f64 / SHIFT_STEP,
        }
    }

    pub fn channels(&self) -> usize {
        self.factor * self.factor
    }

    /// Latent side for an image side.
    pub fn latent_side(&self, image_side: usize) -> usize {
        image_side / self.factor
    }

    fn check_image_dims(&self, w: usize, h: usize) -> Result<(), TrainError> {
        let f = self.factor;
        if w % f != 0 || h % f != 0 {
            return Err(TrainError::Codec(format!("{w}x{h} image not divisible by factor {f}")));
        }
        if let Shift::PerPixel { width, height, .. } = &self.shift {
            if (*width, *height) != (w, h) {
                return Err(TrainError::Codec(format!("{w}x{h} image, codec fitted to {width}x{height}")));
            }
        }
        Ok(())
    }

    pub fn encode(&self, img: &Image) -> Result<LatentTensor, TrainError> {
        let f = self.factor;
        let (w, h) = (img.width(), img.height());
        self.check_image_dims(w, h)?;
        let (lw, lh) = (w / f, h / f);
        let mut data = vec![0.0; f * f * lw * lh];
        for y in 0..h {
            for x in 0..w {
                let c = (y % f) * f + x % f;
                data[(c * lh + y / f) * lw + x / f] = (img.get(x, y) as f64 - self.shift_at(x, y)) / self.scale;
            }
        }
        LatentTensor::new(f * f, lh, lw, data).map_err(|e| TrainError::Codec(e.to_string()))
    }

    pub fn decode(&self, z: &LatentTensor) -> Result<Image, TrainError> {
        let f = self.factor;
        if z.channels() != f * f {
            return Err(TrainError::Codec(format!("{} channels, expected {}", z.channels(), f * f)));
        }
        let (lh, lw) = (z.height(), z.width());
        let (w, h) = (lw * f, lh * f);
        self.check_image_dims(w, h)?;
        let mut pixels = vec![0.0f32; w * h];
        for y in 0..h {
            for x in 0..w {
                let c = (y % f) * f + x % f;
                pixels[y * w + x] = (z.get(c, y / f, x / f) * self.scale + self.shift_at(x, y)) as f32;
            }
        }
        Ok(Image::new(w, h, pixels, IntensityKind::LineIntegral)?)
    }

    /// Latents of the all-0 and all-1 images of side `w x h`: elementwise
    /// bounds of the pixel range `[0, 1]`.
    pub fn latent_bounds(&self, w: usize, h: usize) -> Result<(LatentTensor, LatentTensor), TrainError> {
        Ok((self.encode(&Image::filled(w, h, 0.0))?, self.encode(&Image::filled(w, h, 1.0))?))
    }

    pub fn to_metadata(&self, meta: &mut BTreeMap<String, String>) {
        meta.insert(META_FACTOR.into(), self.factor.to_string());
        let shift = match &self.shift {
            Shift::Uniform(s) => format!("{s:?}"),
            Shift::PerPixel { width, height, steps } => {
                let list: Vec<String> = steps.iter().map(i32::to_string).collect();
                format!("{width}x{height}/{SHIFT_STEP}:{}", list.join(","))
            }
        };
        meta.insert(META_SHIFT.into(), shift);
        meta.insert(META_SCALE.into(), format!("{:?}", self.scale));
    }

    /// `None` when no codec constants are recorded.
    pub fn from_metadata(meta: &BTreeMap<String, String>) -> Result<Option<Self>, TrainError> {
        let (Some(f), Some(sh), Some(sc)) = (meta.get(META_FACTOR), meta.get(META_SHIFT), meta.get(META_SCALE)) else {
            return Ok(None);
        };
        let bad = |k: &str| TrainError::Codec(format!("unparsable {k}"));
        let factor = f.parse().map_err(|_| bad(META_FACTOR))?;
        let scale = sc.parse().map_err(|_| bad(META_SCALE))?;
        match sh.split_once(':') {
            None => Self::with_affine(factor, sh.parse().map_err(|_| bad(META_SHIFT))?, scale).map(Some),
            Some((dims, list)) => {
                let (wh, unit) = dims.split_once('/').ok_or_else(|| bad(META_SHIFT))?;
                if unit.parse::<f64>().ok() != Some(SHIFT_STEP) {
                    return Err(bad(META_SHIFT));
                }
                let (w, h) = wh.split_once('x').ok_or_else(|| bad(META_SHIFT))?;
                let steps = list
                    .split(',')
                    .map(|v| v.parse::<i32>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|_| bad(META_SHIFT))?;
                Self::with_shift_map(
                    factor,
                    w.parse().map_err(|_| bad(META_SHIFT))?,
                    h.parse().map_err(|_| bad(META_SHIFT))?,
                    steps,
                    scale,
                )
                .map(Some)
            }
        }
    }
}
