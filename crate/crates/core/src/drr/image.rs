use serde::{Deserialize, Serialize};

use super::DrrError;

/// What the pixel values of an [`Image`] represent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntensityKind {
    LineIntegral,
    Transmittance,
}

/// Intensity mapping applied before images are stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizeMode {
    /// Affine map of line integrals onto `[0, 1]`.
    MinmaxLineIntegral,
    /// `1 - exp(-line_integral)` followed by min-max scaling.
    Transmittance,
}

/// Single-channel image, row-major, row 0 at the top.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
    intensity_kind: IntensityKind,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>, intensity_kind: IntensityKind) -> Result<Self, DrrError> {
        if width == 0 || height == 0 {
            return Err(DrrError::InvalidDetector("image dimensions must be positive".into()));
        }
        if pixels.len() != width * height {
            return Err(DrrError::PixelCount {
                expected: width * height,
                found: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
            intensity_kind,
        })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self::new(width, height, vec![value; width * height], IntensityKind::LineIntegral)
            .expect("positive dimensions")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn intensity_kind(&self) -> IntensityKind {
        self.intensity_kind
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> f32 {
        self.pixels[row * self.width + col]
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Image {
        Image {
            pixels: self.pixels.iter().map(|&p| f(p)).collect(),
            ..self.clone()
        }
    }

    pub fn flip_horizontal(&self) -> Image {
        let mut pixels = Vec::with_capacity(self.pixels.len());
        for row in self.pixels.chunks(self.width) {
            pixels.extend(row.iter().rev());
        }
        Image { pixels, ..self.clone() }
    }

    pub fn flip_vertical(&self) -> Image {
        let mut pixels = Vec::with_capacity(self.pixels.len());
        for row in self.pixels.chunks(self.width).rev() {
            pixels.extend_from_slice(row);
        }
        Image { pixels, ..self.clone() }
    }

    /// Normalizes to `[0, 1]`. A constant image maps to 0.5 everywhere.
    pub fn normalize(&self, mode: NormalizeMode) -> Image {
        let values: Vec<f64> = match mode {
            NormalizeMode::MinmaxLineIntegral => self.pixels.iter().map(|&p| p as f64).collect(),
            NormalizeMode::Transmittance => self.pixels.iter().map(|&p| -(-(p as f64)).exp_m1()).collect(),
        };
        let (lo, hi) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let range = hi - lo;
        let pixels = if range > 0.0 {
            values.iter().map(|&v| ((v - lo) / range) as f32).collect()
        } else {
            vec![0.5; values.len()]
        };
        Image {
            width: self.width,
            height: self.height,
            pixels,
            intensity_kind: match mode {
                NormalizeMode::MinmaxLineIntegral => self.intensity_kind,
                NormalizeMode::Transmittance => IntensityKind::Transmittance,
            },
        }
    }
}

/// Free-function form of [`Image::normalize`].
pub fn normalize_image(img: &Image, mode: NormalizeMode) -> Image {
    img.normalize(mode)
}

/// Averages non-overlapping `factor x factor` blocks.
pub fn box_downsample(img: &Image, factor: usize) -> Result<Image, DrrError> {
    if factor == 0 || img.width % factor != 0 || img.height % factor != 0 {
        return Err(DrrError::InvalidDetector(format!(
            "{}x{} image is not divisible by {factor}",
            img.width, img.height
        )));
    }
    let (w, h) = (img.width / factor, img.height / factor);
    let norm = 1.0 / (factor * factor) as f64;
    let mut pixels = Vec::with_capacity(w * h);
    for r in 0..h {
        for c in 0..w {
            let mut sum = 0.0f64;
            for dr in 0..factor {
                for dc in 0..factor {
                    sum += img.get(c * factor + dc, r * factor + dr) as f64;
                }
            }
            pixels.push((sum * norm) as f32);
        }
    }
    Image::new(w, h, pixels, img.intensity_kind)
}
