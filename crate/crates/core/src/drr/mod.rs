//! Cone-beam digitally reconstructed radiographs.
//!
//! Each detector pixel gets one ray from the source through the pixel
//! centre. The line integral of attenuation along the ray is approximated
//! with the midpoint rule over the ray/volume intersection, sampling the
//! volume trilinearly.

mod image;
mod io;

use rayon::prelude::*;
use thiserror::Error;

use crate::viewgeom::ViewPose;
use crate::voxel::{ValueKind, Volume};

pub use image::{box_downsample, normalize_image, Image, IntensityKind, NormalizeMode};
pub use io::{read_png16, write_pgm16, write_png16};

/// Physical detector edge length used by [`DetectorSpec::square`].
pub const DETECTOR_SIZE_MM: f64 = 300.0;

#[derive(Debug, Error)]
pub enum DrrError {
    #[error("ray direction must be non-zero and finite")]
    ZeroDirection,
    #[error("step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("DRR rendering needs an attenuation volume, got {0:?}")]
    NotAttenuation(ValueKind),
    #[error("invalid detector: {0}")]
    InvalidDetector(String),
    #[error("image has {found} pixels, expected {expected}")]
    PixelCount { expected: usize, found: usize },
    #[error("image i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

/// Flat-panel detector perpendicular to the view axis, centred on it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorSpec {
    pub width_px: usize,
    pub height_px: usize,
    pub pixel_pitch_mm: f64,
    pub source_to_detector_mm: f64,
}

impl DetectorSpec {
    /// Square detector of fixed physical size ([`DETECTOR_SIZE_MM`]) with the
    /// isocentre midway between source and detector. Changing `resolution`
    /// changes only the pixel pitch.
    pub fn square(resolution: usize, radius_m: f64) -> Self {
        Self {
            width_px: resolution,
            height_px: resolution,
            pixel_pitch_mm: DETECTOR_SIZE_MM / resolution as f64,
            source_to_detector_mm: 2.0 * radius_m * 1000.0,
        }
    }

    pub fn validate(&self) -> Result<(), DrrError> {
        if self.width_px == 0 || self.height_px == 0 {
            return Err(DrrError::InvalidDetector("zero pixel count".into()));
        }
        if !(self.pixel_pitch_mm > 0.0 && self.pixel_pitch_mm.is_finite()) {
            return Err(DrrError::InvalidDetector(format!("pixel pitch {}", self.pixel_pitch_mm)));
        }
        if !(self.source_to_detector_mm > 0.0 && self.source_to_detector_mm.is_finite()) {
            return Err(DrrError::InvalidDetector(format!(
                "source to detector distance {}",
                self.source_to_detector_mm
            )));
        }
        Ok(())
    }
}

/// Slab-method intersection of the half-line `origin + t * direction`
/// (`t >= 0`) with an axis-aligned box. Returns `None` on a miss.
pub fn ray_aabb(
    origin: [f64; 3],
    direction: [f64; 3],
    box_min: [f64; 3],
    box_max: [f64; 3],
) -> Result<Option<(f64, f64)>, DrrError> {
    if direction.iter().all(|&d| d == 0.0) || direction.iter().any(|d| !d.is_finite()) {
        return Err(DrrError::ZeroDirection);
    }
    let mut t_enter = 0.0f64;
    let mut t_exit = f64::INFINITY;
    for a in 0..3 {
        if direction[a] == 0.0 {
            if origin[a] < box_min[a] || origin[a] > box_max[a] {
                return Ok(None);
            }
            continue;
        }
        let inv = 1.0 / direction[a];
        let mut t0 = (box_min[a] - origin[a]) * inv;
        let mut t1 = (box_max[a] - origin[a]) * inv;
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
        }
        t_enter = t_enter.max(t0);
        t_exit = t_exit.min(t1);
        if t_enter > t_exit {
            return Ok(None);
        }
    }
    Ok(Some((t_enter, t_exit)))
}

/// Midpoint-rule line integral of attenuation along a unit-direction ray,
/// using `ceil(length / step_mm)` equal sub-intervals.
pub fn integrate_ray(
    volume: &Volume,
    origin: [f64; 3],
    direction_unit: [f64; 3],
    step_mm: f64,
) -> Result<f64, DrrError> {
    if volume.value_kind() != ValueKind::AttenuationPerMm {
        return Err(DrrError::NotAttenuation(volume.value_kind()));
    }
    if !(step_mm > 0.0 && step_mm.is_finite()) {
        return Err(DrrError::InvalidStep(step_mm));
    }
    let (lo, hi) = volume.bounds_mm();
    Ok(match ray_aabb(origin, direction_unit, lo, hi)? {
        Some((t0, t1)) => march(volume, origin, direction_unit, t0, t1, step_mm),
        None => 0.0,
    })
}

#[inline]
fn march(volume: &Volume, o: [f64; 3], d: [f64; 3], t0: f64, t1: f64, step: f64) -> f64 {
    let length = t1 - t0;
    if length <= 0.0 {
        return 0.0;
    }
    let n = (length / step).ceil().max(1.0) as usize;
    let h = length / n as f64;
    let mut sum = 0.0;
    for k in 0..n {
        let t = t0 + (k as f64 + 0.5) * h;
        sum += volume.sample_trilinear([o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2]]);
    }
    sum * h
}

/// Default marching step: half the smallest voxel spacing.
pub fn default_step_mm(volume: &Volume) -> f64 {
    0.5 * volume.spacing_mm().iter().cloned().fold(f64::INFINITY, f64::min)
}

/// World position (mm) of the centre of detector pixel `(col, row)`.
/// Row 0 is the top of the image (towards increasing elevation).
pub fn pixel_center_mm(pose: &ViewPose, det: &DetectorSpec, col: usize, row: usize) -> [f64; 3] {
    let (forward, right, up) = pose.camera_frame();
    let src = source_mm(pose);
    let du = (col as f64 + 0.5 - det.width_px as f64 / 2.0) * det.pixel_pitch_mm;
    let dv = (det.height_px as f64 / 2.0 - row as f64 - 0.5) * det.pixel_pitch_mm;
    let sdd = det.source_to_detector_mm;
    [
        src[0] + forward[0] * sdd + right[0] * du + up[0] * dv,
        src[1] + forward[1] * sdd + right[1] * du + up[1] * dv,
        src[2] + forward[2] * sdd + right[2] * du + up[2] * dv,
    ]
}

pub fn source_mm(pose: &ViewPose) -> [f64; 3] {
    let p = pose.position_m();
    [p[0] * 1000.0, p[1] * 1000.0, p[2] * 1000.0]
}

/// Renders a line-integral image. Rows are rendered in parallel; each pixel
/// is an independent ray, so the result does not depend on the thread count.
pub fn render_drr(volume: &Volume, pose: &ViewPose, det: &DetectorSpec, step_mm: f64) -> Result<Image, DrrError> {
    det.validate()?;
    if volume.value_kind() != ValueKind::AttenuationPerMm {
        return Err(DrrError::NotAttenuation(volume.value_kind()));
    }
    if !(step_mm > 0.0 && step_mm.is_finite()) {
        return Err(DrrError::InvalidStep(step_mm));
    }
    let src = source_mm(pose);
    let (lo, hi) = volume.bounds_mm();
    let mut pixels = vec![0.0f32; det.width_px * det.height_px];
    pixels
        .par_chunks_mut(det.width_px)
        .enumerate()
        .for_each(|(row, out)| {
            for (col, px) in out.iter_mut().enumerate() {
                let target = pixel_center_mm(pose, det, col, row);
                let mut d = [target[0] - src[0], target[1] - src[1], target[2] - src[2]];
                let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                d.iter_mut().for_each(|x| *x /= len);
                let value = match ray_aabb(src, d, lo, hi) {
                    Ok(Some((t0, t1))) => march(volume, src, d, t0, t1, step_mm),
                    _ => 0.0,
                };
                *px = value as f32;
            }
        });
    Image::new(det.width_px, det.height_px, pixels, IntensityKind::LineIntegral)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::viewgeom::{pose_from_angles, ViewPose};
    use rand::{Rng, SeedableRng};
    use std::f64::consts::FRAC_PI_2;

    fn inside(p: [f64; 3], lo: [f64; 3], hi: [f64; 3]) -> bool {
        (0..3).all(|a| p[a] >= lo[a] && p[a] <= hi[a])
    }

    /// Dense stepping finds a bracket, bisection refines both ends.
    fn stepping_oracle(o: [f64; 3], d: [f64; 3], lo: [f64; 3], hi: [f64; 3]) -> Option<(f64, f64)> {
        let at = |t: f64| [o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2]];
        let t_max = 20.0;
        let n = 20_000;
        let dt = t_max / n as f64;
        let hits: Vec<usize> = (0..=n).filter(|&k| inside(at(k as f64 * dt), lo, hi)).collect();
        let first = *hits.first()?;
        let last = *hits.last()?;
        let refine = |mut a: f64, mut b: f64, inside_at_b: bool| {
            for _ in 0..60 {
                let m = 0.5 * (a + b);
                if inside(at(m), lo, hi) == inside_at_b {
                    b = m;
                } else {
                    a = m;
                }
            }
            0.5 * (a + b)
        };
        let enter = if first == 0 { 0.0 } else { refine((first - 1) as f64 * dt, first as f64 * dt, true) };
        let exit = refine(last as f64 * dt, (last + 1) as f64 * dt, false);
        Some((enter, exit))
    }

    #[test]
    fn aabb_central_chord_and_miss() {
        let (lo, hi) = ([-0.5; 3], [0.5; 3]);
        let (t0, t1) = ray_aabb([-2.0, 0.0, 0.0], [1.0, 0.0, 0.0], lo, hi).unwrap().unwrap();
        assert!((t1 - t0 - 1.0).abs() < 1e-15);
        assert!((t0 - 1.5).abs() < 1e-15);
        assert_eq!(ray_aabb([-2.0, 0.7, 0.0], [1.0, 0.0, 0.0], lo, hi).unwrap(), None);
        // box behind the ray origin
        assert_eq!(ray_aabb([2.0, 0.0, 0.0], [1.0, 0.0, 0.0], lo, hi).unwrap(), None);
        assert!(matches!(ray_aabb([0.0; 3], [0.0; 3], lo, hi), Err(DrrError::ZeroDirection)));
    }

    #[test]
    fn aabb_matches_stepping_oracle_on_1000_rays() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let (lo, hi) = ([-1.0, -0.5, -2.0], [1.5, 0.5, 1.0]);
        let mut hits = 0;
        for _ in 0..1000 {
            let o = [rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)];
            // aim at a random point near the box so a good share of rays hit
            let aim = [rng.random_range(-2.0..2.0), rng.random_range(-1.5..1.5), rng.random_range(-2.5..2.0)];
            let mut d: [f64; 3] = [aim[0] - o[0], aim[1] - o[1], aim[2] - o[2]];
            let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            d.iter_mut().for_each(|x| *x /= n);
            let fast = ray_aabb(o, d, lo, hi).unwrap();
            let slow = stepping_oracle(o, d, lo, hi);
            match (fast, slow) {
                (Some((a0, a1)), Some((b0, b1))) => {
                    hits += 1;
                    assert!((a0 - b0).abs() < 1e-6 && (a1 - b1).abs() < 1e-6, "{fast:?} vs {slow:?}");
                    assert!(a0 <= a1 && a1 >= 0.0);
                }
                (None, None) => {}
                // grazing rays shorter than the stepping resolution
                (Some((a0, a1)), None) => assert!(a1 - a0 < 2e-3),
                (None, Some(_)) => panic!("oracle hit, slab missed: {o:?} {d:?}"),
            }
        }
        assert!(hits > 100);
    }

    fn uniform_cube(mu: f64) -> Volume {
        // 50 voxels of 2 mm: a 100 mm cube
        Volume::uniform([50, 50, 50], [2.0; 3], mu, ValueKind::AttenuationPerMm).unwrap()
    }

    #[test]
    fn uniform_cube_line_integral() {
        let v = uniform_cube(0.02);
        let val = integrate_ray(&v, [0.0, 0.0, -500.0], [0.0, 0.0, 1.0], 1.0).unwrap();
        assert!((val - 2.0).abs() < 1e-3, "{val}");
        let half = integrate_ray(&v, [0.0, 0.0, -500.0], [0.0, 0.0, 1.0], 0.5).unwrap();
        assert!(((half - val) / val).abs() < 1e-3);
        assert_eq!(integrate_ray(&v, [0.0, 80.0, -500.0], [0.0, 0.0, 1.0], 1.0).unwrap(), 0.0);
    }

    #[test]
    fn integrate_rejects_bad_inputs() {
        let hu = Volume::uniform([4, 4, 4], [1.0; 3], 0.0, ValueKind::Hounsfield).unwrap();
        assert!(matches!(
            integrate_ray(&hu, [0.0; 3], [1.0, 0.0, 0.0], 1.0),
            Err(DrrError::NotAttenuation(_))
        ));
        let mu = uniform_cube(0.01);
        assert!(matches!(integrate_ray(&mu, [0.0; 3], [1.0, 0.0, 0.0], 0.0), Err(DrrError::InvalidStep(_))));
        assert!(matches!(integrate_ray(&mu, [0.0; 3], [0.0; 3], 1.0), Err(DrrError::ZeroDirection)));
    }

    #[test]
    fn integral_is_linear_in_attenuation() {
        let base = crate::voxel::make_phantom(2, [24, 24, 24]).unwrap().hu_to_mu(0.02).unwrap();
        let dir = {
            let d = [0.3f64, -0.2, 1.0];
            let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            [d[0] / n, d[1] / n, d[2] / n]
        };
        let o = [-115.0, 77.0, -400.0];
        let reference = integrate_ray(&base, o, dir, 1.3).unwrap();
        assert!(reference > 0.0);
        for alpha in [0.0, 0.37, 1.0, 2.5, 11.0] {
            let scaled = integrate_ray(&base.scaled(alpha).unwrap(), o, dir, 1.3).unwrap();
            assert!((scaled - alpha * reference).abs() <= 1e-9 * (alpha * reference).abs().max(1e-300));
        }
    }

    #[test]
    fn empty_volume_renders_black() {
        let v = uniform_cube(0.0);
        let pose = ViewPose::posterior_anterior(1.8).unwrap();
        let img = render_drr(&v, &pose, &DetectorSpec::square(16, 1.8), 1.0).unwrap();
        assert!(img.pixels().iter().all(|&p| p == 0.0));
        assert_eq!(img.intensity_kind(), IntensityKind::LineIntegral);
    }

    #[test]
    fn render_is_independent_of_thread_count() {
        let v = crate::voxel::make_phantom(9, [24, 24, 24]).unwrap().hu_to_mu(0.02).unwrap();
        let pose = pose_from_angles(1.1, 0.4, 1.8).unwrap();
        let det = DetectorSpec::square(24, 1.8);
        let render_with = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| render_drr(&v, &pose, &det, 1.0).unwrap())
        };
        let a = render_with(1);
        let b = render_with(4);
        let bits = |img: &Image| img.pixels().iter().map(|p| p.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn azimuth_mirrored_views_of_symmetric_phantom_are_mirror_images() {
        // symmetric under y -> -y
        let v = Volume::from_fn([40, 40, 40], [3.0; 3], ValueKind::AttenuationPerMm, |p| {
            let body = (p[0] / 50.0).powi(2) + (p[1] / 40.0).powi(2) + (p[2] / 45.0).powi(2) <= 1.0;
            let blob = ((p[0] - 15.0).powi(2) + (p[1].abs() - 12.0).powi(2) + (p[2] - 5.0).powi(2)).sqrt() < 10.0;
            let rod = (p[0] + 20.0).abs() < 6.0 && p[1].abs() < 4.0;
            0.02 * body as u8 as f64 + 0.03 * blob as u8 as f64 + 0.01 * rod as u8 as f64
        })
        .unwrap();
        let det = DetectorSpec::square(32, 1.8);
        for (az, el) in [(0.7, 0.5), (2.0, 0.1), (0.3, FRAC_PI_2 - 0.2)] {
            let a = render_drr(&v, &pose_from_angles(az, el, 1.8).unwrap(), &det, 1.0).unwrap();
            let b = render_drr(&v, &pose_from_angles(-az, el, 1.8).unwrap(), &det, 1.0).unwrap();
            let mut total = 0.0;
            for row in 0..32 {
                for col in 0..32 {
                    total += (a.get(col, row) - b.get(31 - col, row)).abs() as f64;
                }
            }
            let mean = total / 1024.0;
            assert!(mean < 1e-4, "az {az} el {el}: mean abs {mean}");
        }
    }
}
