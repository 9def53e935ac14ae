//! Procedural chest-like phantoms in Hounsfield units.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ValueKind, Volume, VolumeError};

/// Edge length of the cube every phantom occupies, regardless of `dims`.
pub const PHANTOM_EXTENT_MM: f64 = 140.0;

const AIR_HU: f64 = -1000.0;
const TISSUE_HU: f64 = 0.0;
const LUNG_HU: f64 = -800.0;
const BONE_HU: f64 = 700.0;

struct Ellipsoid {
    center: [f64; 3],
    semi_axes: [f64; 3],
    hu: f64,
}

impl Ellipsoid {
    fn contains(&self, p: [f64; 3]) -> bool {
        (0..3)
            .map(|a| ((p[a] - self.center[a]) / self.semi_axes[a]).powi(2))
            .sum::<f64>()
            <= 1.0
    }
}

/// Builds a deterministic phantom: a soft-tissue torso ellipsoid holding
/// 2 to 6 lung-like (-800 HU) and bone-like (+700 HU) ellipsoids on an air
/// background. The first inclusion is always lung-like and the second
/// bone-like.
pub fn make_phantom(seed: u64, dims: [usize; 3]) -> Result<Volume, VolumeError> {
    if dims.iter().any(|&d| d < 8) {
        return Err(VolumeError::DimsTooSmall { dims, min: 8 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spacing = PHANTOM_EXTENT_MM / *dims.iter().max().unwrap() as f64;

    let torso = Ellipsoid {
        center: [
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
        ],
        semi_axes: [
            rng.random_range(48.0..60.0),
            rng.random_range(36.0..48.0),
            rng.random_range(40.0..52.0),
        ],
        hu: TISSUE_HU,
    };
    let count = rng.random_range(2..=6usize);
    let inclusions: Vec<Ellipsoid> = (0..count)
        .map(|n| {
            let hu = match n {
                0 => LUNG_HU,
                1 => BONE_HU,
                _ if rng.random_bool(0.5) => LUNG_HU,
                _ => BONE_HU,
            };
            let mut center = [0.0; 3];
            for a in 0..3 {
                center[a] = torso.center[a] + rng.random_range(-0.55..0.55) * torso.semi_axes[a];
            }
            let semi_axes = [
                rng.random_range(8.0..22.0),
                rng.random_range(8.0..22.0),
                rng.random_range(8.0..22.0),
            ];
            Ellipsoid {
                center,
                semi_axes,
                hu,
            }
        })
        .collect();

    Volume::from_fn(dims, [spacing; 3], ValueKind::Hounsfield, |p| {
        if !torso.contains(p) {
            return AIR_HU;
        }
        inclusions
            .iter()
            .rev()
            .find(|e| e.contains(p))
            .map_or(torso.hu, |e| e.hu)
    })
}
