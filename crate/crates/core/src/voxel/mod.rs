//! Scalar volumes in world (millimetre) coordinates.
//!
//! Data is stored x-fastest: the sample at voxel `(i, j, k)` lives at
//! `i + nx * (j + ny * k)`. Voxel `(0, 0, 0)` is centred on `origin_mm`.

mod io;
mod phantom;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{load_volume, save_volume, sidecar_path_for, VolumeSidecar};
pub use phantom::{make_phantom, PHANTOM_EXTENT_MM};

/// Attenuation of water used when none is given, in 1/mm.
pub const DEFAULT_MU_WATER_PER_MM: f64 = 0.02;

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("missing volume sidecar {0}")]
    MissingSidecar(String),
    #[error("malformed sidecar {path}: {source}")]
    Sidecar {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("data length mismatch: dims require {expected} samples, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("raw data file size {0} is not a multiple of 4 bytes")]
    TruncatedData(usize),
    #[error("every dimension must be at least {min}, got {dims:?}")]
    DimsTooSmall { dims: [usize; 3], min: usize },
    #[error("spacing must be positive and finite, got {0:?}")]
    InvalidSpacing([f64; 3]),
    #[error("attenuation values must be non-negative (voxel {index} = {value})")]
    NegativeAttenuation { index: usize, value: f64 },
    #[error("expected a {expected:?} volume, got {found:?}")]
    WrongKind { expected: ValueKind, found: ValueKind },
    #[error("water attenuation must be positive, got {0}")]
    InvalidMuWater(f64),
}

/// Physical meaning of the stored samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    Hounsfield,
    AttenuationPerMm,
}

/// An immutable 3D scalar field with spacing/origin metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    origin_mm: [f64; 3],
    data: Vec<f64>,
    value_kind: ValueKind,
}

impl Volume {
    pub fn new(
        dims: [usize; 3],
        spacing_mm: [f64; 3],
        origin_mm: [f64; 3],
        data: Vec<f64>,
        value_kind: ValueKind,
    ) -> Result<Self, VolumeError> {
        if dims.iter().any(|&d| d < 2) {
            return Err(VolumeError::DimsTooSmall { dims, min: 2 });
        }
        if spacing_mm.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(VolumeError::InvalidSpacing(spacing_mm));
        }
        let expected = dims[0] * dims[1] * dims[2];
        if data.len() != expected {
            return Err(VolumeError::LengthMismatch {
                expected,
                found: data.len(),
            });
        }
        if value_kind == ValueKind::AttenuationPerMm {
            if let Some((index, &value)) = data.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
                return Err(VolumeError::NegativeAttenuation { index, value });
            }
        }
        Ok(Self {
            dims,
            spacing_mm,
            origin_mm,
            data,
            value_kind,
        })
    }

    /// A volume of constant value centred on the world origin.
    pub fn uniform(
        dims: [usize; 3],
        spacing_mm: [f64; 3],
        value: f64,
        value_kind: ValueKind,
    ) -> Result<Self, VolumeError> {
        let origin = centred_origin(dims, spacing_mm);
        Self::new(
            dims,
            spacing_mm,
            origin,
            vec![value; dims[0] * dims[1] * dims[2]],
            value_kind,
        )
    }

    /// Builds a volume centred on the world origin by evaluating `f` at
    /// every voxel centre (world mm).
    pub fn from_fn(
        dims: [usize; 3],
        spacing_mm: [f64; 3],
        value_kind: ValueKind,
        mut f: impl FnMut([f64; 3]) -> f64,
    ) -> Result<Self, VolumeError> {
        let origin = centred_origin(dims, spacing_mm);
        let mut data = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    data.push(f([
                        origin[0] + i as f64 * spacing_mm[0],
                        origin[1] + j as f64 * spacing_mm[1],
                        origin[2] + k as f64 * spacing_mm[2],
                    ]));
                }
            }
        }
        Self::new(dims, spacing_mm, origin, data, value_kind)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing_mm(&self) -> [f64; 3] {
        self.spacing_mm
    }

    pub fn origin_mm(&self) -> [f64; 3] {
        self.origin_mm
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn value_kind(&self) -> ValueKind {
        self.value_kind
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.index(i, j, k)]
    }

    /// World position of a voxel centre.
    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        [
            self.origin_mm[0] + i as f64 * self.spacing_mm[0],
            self.origin_mm[1] + j as f64 * self.spacing_mm[1],
            self.origin_mm[2] + k as f64 * self.spacing_mm[2],
        ]
    }

    /// Axis-aligned bounds covering every voxel cell (half a voxel beyond
    /// the outermost centres).
    pub fn bounds_mm(&self) -> ([f64; 3], [f64; 3]) {
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        for a in 0..3 {
            lo[a] = self.origin_mm[a] - 0.5 * self.spacing_mm[a];
            hi[a] = self.origin_mm[a] + (self.dims[a] as f64 - 0.5) * self.spacing_mm[a];
        }
        (lo, hi)
    }

    /// Converts Hounsfield units to linear attenuation:
    /// `mu = mu_water * (1 + HU / 1000)`, clamped at zero.
    pub fn hu_to_mu(&self, mu_water_per_mm: f64) -> Result<Volume, VolumeError> {
        if self.value_kind != ValueKind::Hounsfield {
            return Err(VolumeError::WrongKind {
                expected: ValueKind::Hounsfield,
                found: self.value_kind,
            });
        }
        if !(mu_water_per_mm > 0.0 && mu_water_per_mm.is_finite()) {
            return Err(VolumeError::InvalidMuWater(mu_water_per_mm));
        }
        let data = self
            .data
            .iter()
            .map(|&hu| (mu_water_per_mm * (1.0 + hu / 1000.0)).max(0.0))
            .collect();
        Ok(Volume {
            data,
            value_kind: ValueKind::AttenuationPerMm,
            ..self.clone()
        })
    }

    /// Same geometry, every sample multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Volume, VolumeError> {
        Volume::new(
            self.dims,
            self.spacing_mm,
            self.origin_mm,
            self.data.iter().map(|v| v * factor).collect(),
            self.value_kind,
        )
    }

    /// Trilinear interpolation at a world point. Points outside
    /// [`bounds_mm`](Self::bounds_mm) sample as 0; inside the bounds but
    /// beyond the outermost voxel centres the edge value is held.
    #[inline]
    pub fn sample_trilinear(&self, p: [f64; 3]) -> f64 {
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let u = (p[a] - self.origin_mm[a]) / self.spacing_mm[a];
            let n = self.dims[a];
            if !(u >= -0.5 && u <= n as f64 - 0.5) {
                return 0.0;
            }
            let u = u.clamp(0.0, (n - 1) as f64);
            let i0 = (u.floor() as usize).min(n - 2);
            base[a] = i0;
            frac[a] = u - i0 as f64;
        }
        let [i, j, k] = base;
        let [fx, fy, fz] = frac;
        let sx = 1;
        let sy = self.dims[0];
        let sz = self.dims[0] * self.dims[1];
        let o = self.index(i, j, k);
        let d = &self.data;
        let c00 = d[o] + fx * (d[o + sx] - d[o]);
        let c10 = d[o + sy] + fx * (d[o + sy + sx] - d[o + sy]);
        let c01 = d[o + sz] + fx * (d[o + sz + sx] - d[o + sz]);
        let c11 = d[o + sz + sy] + fx * (d[o + sz + sy + sx] - d[o + sz + sy]);
        let c0 = c00 + fy * (c10 - c00);
        let c1 = c01 + fy * (c11 - c01);
        c0 + fz * (c1 - c0)
    }
}

/// Origin that places the volume centre at the world origin.
pub fn centred_origin(dims: [usize; 3], spacing_mm: [f64; 3]) -> [f64; 3] {
    let mut origin = [0.0; 3];
    for a in 0..3 {
        origin[a] = -0.5 * (dims[a] as f64 - 1.0) * spacing_mm[a];
    }
    origin
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp_x() -> Volume {
        // values 0 and 1 alternating along x so neighbouring centres differ by 1
        Volume::from_fn([4, 3, 3], [2.0, 1.0, 1.5], ValueKind::AttenuationPerMm, |p| {
            if p[0] < 0.0 {
                0.0
            } else {
                1.0
            }
        })
        .unwrap()
    }

    #[test]
    fn rejects_bad_construction() {
        let bad_len = Volume::new([2, 2, 2], [1.0; 3], [0.0; 3], vec![0.0; 7], ValueKind::Hounsfield);
        assert!(matches!(bad_len, Err(VolumeError::LengthMismatch { expected: 8, found: 7 })));
        let bad_spacing = Volume::new([2, 2, 2], [1.0, 0.0, 1.0], [0.0; 3], vec![0.0; 8], ValueKind::Hounsfield);
        assert!(matches!(bad_spacing, Err(VolumeError::InvalidSpacing(_))));
        let bad_dims = Volume::new([1, 2, 2], [1.0; 3], [0.0; 3], vec![0.0; 4], ValueKind::Hounsfield);
        assert!(matches!(bad_dims, Err(VolumeError::DimsTooSmall { .. })));
        let negative = Volume::new([2, 2, 2], [1.0; 3], [0.0; 3], vec![-1.0; 8], ValueKind::AttenuationPerMm);
        assert!(matches!(negative, Err(VolumeError::NegativeAttenuation { .. })));
    }

    #[test]
    fn hu_to_mu_reference_points() {
        let v = Volume::new(
            [2, 2, 2],
            [1.0; 3],
            [0.0; 3],
            vec![0.0, -1000.0, 1000.0, -2000.0, 0.0, 0.0, 0.0, 0.0],
            ValueKind::Hounsfield,
        )
        .unwrap();
        let mu = v.hu_to_mu(0.02).unwrap();
        assert_eq!(mu.value_kind(), ValueKind::AttenuationPerMm);
        assert!((mu.data()[0] - 0.02).abs() < 1e-15);
        assert_eq!(mu.data()[1], 0.0);
        assert!((mu.data()[2] - 0.04).abs() < 1e-15);
        assert_eq!(mu.data()[3], 0.0);
        assert!(matches!(mu.hu_to_mu(0.02), Err(VolumeError::WrongKind { .. })));
        assert!(matches!(v.hu_to_mu(0.0), Err(VolumeError::InvalidMuWater(_))));
    }

    #[test]
    fn trilinear_identity_and_midpoint() {
        let v = ramp_x();
        for k in 0..3 {
            for j in 0..3 {
                for i in 0..4 {
                    assert_eq!(v.sample_trilinear(v.voxel_center(i, j, k)), v.get(i, j, k));
                }
            }
        }
        // voxel centres at x = -1 (value 0) and x = 1 (value 1)
        let mid = v.sample_trilinear([0.0, 0.0, 0.0]);
        assert!((mid - 0.5).abs() < 1e-12);
    }

    #[test]
    fn trilinear_outside_is_zero_and_edges_hold() {
        let v = Volume::uniform([3, 3, 3], [1.0; 3], 2.0, ValueKind::AttenuationPerMm).unwrap();
        assert_eq!(v.sample_trilinear([1.49, 0.0, 0.0]), 2.0);
        assert_eq!(v.sample_trilinear([1.51, 0.0, 0.0]), 0.0);
        assert_eq!(v.sample_trilinear([0.0, -7.0, 0.0]), 0.0);
        assert_eq!(v.sample_trilinear([f64::NAN, 0.0, 0.0]), 0.0);
    }

    fn naive_trilinear(v: &Volume, p: [f64; 3]) -> f64 {
        let (lo, hi) = v.bounds_mm();
        if (0..3).any(|a| p[a] < lo[a] || p[a] > hi[a]) {
            return 0.0;
        }
        let mut total = 0.0;
        for k in 0..v.dims()[2] {
            for j in 0..v.dims()[1] {
                for i in 0..v.dims()[0] {
                    let c = v.voxel_center(i, j, k);
                    let mut w = 1.0;
                    for a in 0..3 {
                        let n = v.dims()[a] as f64;
                        let u = ((p[a] - v.origin_mm()[a]) / v.spacing_mm()[a]).clamp(0.0, n - 1.0);
                        let ua = (c[a] - v.origin_mm()[a]) / v.spacing_mm()[a];
                        w *= (1.0 - (u - ua).abs()).max(0.0);
                    }
                    total += w * v.get(i, j, k);
                }
            }
        }
        total
    }

    #[test]
    fn trilinear_matches_hat_function_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let v = Volume::from_fn([5, 4, 6], [1.5, 2.0, 0.75], ValueKind::AttenuationPerMm, |_| {
            rng.random_range(0.0..1.0)
        })
        .unwrap();
        let (lo, hi) = v.bounds_mm();
        for _ in 0..50 {
            let p = [
                rng.random_range(lo[0]..hi[0]),
                rng.random_range(lo[1]..hi[1]),
                rng.random_range(lo[2]..hi[2]),
            ];
            assert!((v.sample_trilinear(p) - naive_trilinear(&v, p)).abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn hu_to_mu_never_negative(hu in -3000.0f64..3000.0, mu_w in 1e-4f64..0.1) {
            let v = Volume::uniform([2, 2, 2], [1.0; 3], hu, ValueKind::Hounsfield).unwrap();
            let mu = v.hu_to_mu(mu_w).unwrap();
            prop_assert!(mu.data().iter().all(|&m| m >= 0.0));
        }

        #[test]
        fn trilinear_is_lipschitz_inside(
            seed in 0u64..1000,
            px in 0.0f64..1.0, py in 0.0f64..1.0, pz in 0.0f64..1.0,
            dx in -1.0f64..1.0, dy in -1.0f64..1.0, dz in -1.0f64..1.0,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let v = Volume::from_fn([5, 5, 5], [1.0, 1.5, 2.0], ValueKind::AttenuationPerMm, |_| {
                rng.random_range(0.0..1.0)
            }).unwrap();
            // max neighbour difference per axis, divided by spacing
            let mut grad = [0.0f64; 3];
            let d = v.dims();
            for k in 0..d[2] { for j in 0..d[1] { for i in 0..d[0] {
                let here = v.get(i, j, k);
                if i + 1 < d[0] { grad[0] = grad[0].max((v.get(i + 1, j, k) - here).abs()); }
                if j + 1 < d[1] { grad[1] = grad[1].max((v.get(i, j + 1, k) - here).abs()); }
                if k + 1 < d[2] { grad[2] = grad[2].max((v.get(i, j, k + 1) - here).abs()); }
            }}}
            let s = v.spacing_mm();
            let lipschitz = (0..3).map(|a| (grad[a] / s[a]).powi(2)).sum::<f64>().sqrt();
            // stay within the span of voxel centres, steps below one voxel
            let lo = v.voxel_center(0, 0, 0);
            let hi = v.voxel_center(d[0] - 1, d[1] - 1, d[2] - 1);
            let delta = [dx * 0.45 * s[0], dy * 0.45 * s[1], dz * 0.45 * s[2]];
            let p: Vec<f64> = (0..3).map(|a| {
                let t = [px, py, pz][a];
                let span = hi[a] - lo[a] - 2.0 * delta[a].abs();
                lo[a] + delta[a].abs() + t * span
            }).collect();
            let p = [p[0], p[1], p[2]];
            let q = [p[0] + delta[0], p[1] + delta[1], p[2] + delta[2]];
            let dist = delta.iter().map(|x| x * x).sum::<f64>().sqrt();
            let diff = (v.sample_trilinear(p) - v.sample_trilinear(q)).abs();
            prop_assert!(diff <= lipschitz * dist + 1e-12);
        }
    }
}
