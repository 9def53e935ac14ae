//! View poses on the acquisition hemisphere.
//!
//! Positions are `radius * (cos e cos a, cos e sin a, sin e)`; the pole (+z)
//! is the posterior-anterior (PA) direction and every view looks at the
//! origin.

mod manifest;

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use manifest::{read_view_manifest, view_file_name, write_view_manifest, ViewRecord, ViewSet};

/// Source-to-isocentre distance of the acquisition hemisphere.
pub const HEMISPHERE_RADIUS_M: f64 = 1.8;

/// `2 pi (1 - 1/phi)`, the golden angle.
pub const GOLDEN_ANGLE: f64 = 2.399_963_229_728_653;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("view count must be at least 1")]
    EmptyLattice,
    #[error("elevation {0} rad is outside [0, pi/2]")]
    ElevationOutOfRange(f64),
    #[error("radius must be positive and finite, got {0}")]
    InvalidRadius(f64),
    #[error("azimuth must be finite, got {0}")]
    InvalidAzimuth(f64),
    #[error("arc step {0} deg must be positive and divide 90 evenly")]
    InvalidArcStep(f64),
}

/// A source position on the hemisphere, looking at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewPose {
    azimuth_rad: f64,
    elevation_rad: f64,
    radius_m: f64,
    position_m: [f64; 3],
}

impl ViewPose {
    /// Azimuth is wrapped into `[0, 2 pi)`.
    pub fn from_angles(azimuth_rad: f64, elevation_rad: f64, radius_m: f64) -> Result<Self, GeometryError> {
        if !azimuth_rad.is_finite() {
            return Err(GeometryError::InvalidAzimuth(azimuth_rad));
        }
        if !(0.0..=FRAC_PI_2).contains(&elevation_rad) {
            return Err(GeometryError::ElevationOutOfRange(elevation_rad));
        }
        if !(radius_m > 0.0 && radius_m.is_finite()) {
            return Err(GeometryError::InvalidRadius(radius_m));
        }
        let mut azimuth = azimuth_rad.rem_euclid(TAU);
        if azimuth >= TAU {
            azimuth = 0.0;
        }
        let (se, ce) = elevation_rad.sin_cos();
        let (sa, ca) = azimuth.sin_cos();
        Ok(Self {
            azimuth_rad: azimuth,
            elevation_rad,
            radius_m,
            position_m: [radius_m * ce * ca, radius_m * ce * sa, radius_m * se],
        })
    }

    /// The PA source view: the hemisphere pole.
    pub fn posterior_anterior(radius_m: f64) -> Result<Self, GeometryError> {
        Self::from_angles(0.0, FRAC_PI_2, radius_m)
    }

    pub fn azimuth_rad(&self) -> f64 {
        self.azimuth_rad
    }

    pub fn elevation_rad(&self) -> f64 {
        self.elevation_rad
    }

    pub fn radius_m(&self) -> f64 {
        self.radius_m
    }

    pub fn position_m(&self) -> [f64; 3] {
        self.position_m
    }

    /// Reads `(azimuth, elevation, radius)` back from the position.
    /// Azimuth is undefined at the pole and reported as 0 there.
    pub fn angles_from_position(&self) -> (f64, f64, f64) {
        let [x, y, z] = self.position_m;
        let r = (x * x + y * y + z * z).sqrt();
        let elevation = (z / r).clamp(-1.0, 1.0).asin();
        let azimuth = if x == 0.0 && y == 0.0 { 0.0 } else { y.atan2(x).rem_euclid(TAU) };
        (azimuth, elevation, r)
    }

    /// Orthonormal camera frame `(forward, right, up)`.
    ///
    /// `forward` points at the origin, `right` follows increasing azimuth and
    /// `up` follows increasing elevation. The frame is defined at the pole
    /// through the stored azimuth, so there is no roll ambiguity.
    pub fn camera_frame(&self) -> ([f64; 3], [f64; 3], [f64; 3]) {
        let (se, ce) = self.elevation_rad.sin_cos();
        let (sa, ca) = self.azimuth_rad.sin_cos();
        let forward = [-ce * ca, -ce * sa, -se];
        let right = [-sa, ca, 0.0];
        let up = [-se * ca, -se * sa, ce];
        (forward, right, up)
    }
}

/// Alias kept for call sites that read better as a free function.
pub fn pose_from_angles(azimuth_rad: f64, elevation_rad: f64, radius_m: f64) -> Result<ViewPose, GeometryError> {
    ViewPose::from_angles(azimuth_rad, elevation_rad, radius_m)
}

/// Relative polar coordinates of a target view with respect to a source view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewEncoding {
    pub d_elevation: f64,
    pub sin_d_azimuth: f64,
    pub cos_d_azimuth: f64,
    pub d_radius: f64,
}

impl ViewEncoding {
    pub const DIM: usize = 4;

    pub fn identity() -> Self {
        Self {
            d_elevation: 0.0,
            sin_d_azimuth: 0.0,
            cos_d_azimuth: 1.0,
            d_radius: 0.0,
        }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.d_elevation, self.sin_d_azimuth, self.cos_d_azimuth, self.d_radius]
    }
}

pub fn relative_view_encoding(src: &ViewPose, tgt: &ViewPose) -> ViewEncoding {
    let (s, c) = (tgt.azimuth_rad - src.azimuth_rad).sin_cos();
    ViewEncoding {
        d_elevation: tgt.elevation_rad - src.elevation_rad,
        sin_d_azimuth: s,
        cos_d_azimuth: c,
        d_radius: tgt.radius_m - src.radius_m,
    }
}

/// `n` poses on a Fibonacci lattice over the hemisphere, pole first.
///
/// Index `i` has `sin(elevation) = 1 - i / max(n - 1, 1)` and azimuth
/// `i * golden_angle mod 2 pi`, so the lattice is equal-area and pose 0 is
/// exactly the PA view.
pub fn fibonacci_hemisphere(n: usize, radius_m: f64) -> Result<Vec<ViewPose>, GeometryError> {
    if n < 1 {
        return Err(GeometryError::EmptyLattice);
    }
    let denom = (n - 1).max(1) as f64;
    (0..n)
        .map(|i| {
            let z = 1.0 - i as f64 / denom;
            let elevation = z.clamp(0.0, 1.0).asin();
            let azimuth = (i as f64 * GOLDEN_ANGLE).rem_euclid(TAU);
            ViewPose::from_angles(azimuth, elevation, radius_m)
        })
        .collect()
}

/// Sweep angles (degrees) of the simple arc: `-90..=90` by `step_deg`, without 0.
pub fn arc_sweep_angles(step_deg: f64) -> Result<Vec<f64>, GeometryError> {
    if !(step_deg > 0.0 && step_deg <= 90.0) {
        return Err(GeometryError::InvalidArcStep(step_deg));
    }
    let per_side = (90.0 / step_deg).round();
    if (per_side * step_deg - 90.0).abs() > 1e-9 {
        return Err(GeometryError::InvalidArcStep(step_deg));
    }
    let per_side = per_side as i64;
    Ok((-per_side..=per_side)
        .filter(|&k| k != 0)
        .map(|k| k as f64 * step_deg)
        .collect())
}

/// Pose reached by rotating the PA view by `sweep_deg` within the x-z plane.
/// Positive sweeps tilt towards +x (azimuth 0), negative towards -x
/// (azimuth pi); +-90 lands on the equator.
pub fn arc_pose(sweep_deg: f64, radius_m: f64) -> Result<ViewPose, GeometryError> {
    let sweep = sweep_deg.to_radians();
    let azimuth = if sweep >= 0.0 { 0.0 } else { PI };
    let elevation = (FRAC_PI_2 - sweep.abs()).max(0.0);
    ViewPose::from_angles(azimuth, elevation, radius_m)
}

/// The simple-arc evaluation views: a rotation away from PA from -90 to +90
/// degrees, excluding the source view itself.
pub fn simple_arc_views(step_deg: f64, radius_m: f64) -> Result<Vec<ViewPose>, GeometryError> {
    arc_sweep_angles(step_deg)?
        .into_iter()
        .map(|s| arc_pose(s, radius_m))
        .collect()
}
