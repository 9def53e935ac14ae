//! Raw little-endian float32 volumes with a JSON sidecar.
//!
//! `<name>.vol.json`:
//! ```json
//! {"dims":[64,64,64],"spacing_mm":[2.1875,2.1875,2.1875],
//!  "origin_mm":[-68.9,-68.9,-68.9],"value_kind":"hounsfield","data_file":"<name>.raw"}
//! ```
//! `data_file` is resolved relative to the sidecar's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ValueKind, Volume, VolumeError};

const SIDECAR_SUFFIX: &str = ".vol.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeSidecar {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub origin_mm: [f64; 3],
    #[serde(default = "default_kind")]
    pub value_kind: ValueKind,
    pub data_file: String,
}

fn default_kind() -> ValueKind {
    ValueKind::Hounsfield
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> VolumeError + '_ {
    move |source| VolumeError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Sidecar path for either a sidecar or a raw data path
/// (`foo.raw` -> `foo.vol.json`).
pub fn sidecar_path_for(path: &Path) -> PathBuf {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    if name.ends_with(SIDECAR_SUFFIX) {
        return path.to_path_buf();
    }
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}{SIDECAR_SUFFIX}"))
}

/// Loads a volume from its sidecar (or its raw data file, in which case the
/// sidecar is looked up next to it).
pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume, VolumeError> {
    let sidecar_path = sidecar_path_for(path.as_ref());
    if !sidecar_path.is_file() {
        return Err(VolumeError::MissingSidecar(sidecar_path.display().to_string()));
    }
    let text = fs::read_to_string(&sidecar_path).map_err(io_err(&sidecar_path))?;
    let meta: VolumeSidecar =
        serde_json::from_str(&text).map_err(|source| VolumeError::Sidecar {
            path: sidecar_path.display().to_string(),
            source,
        })?;
    let data_path = sidecar_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&meta.data_file);
    let bytes = fs::read(&data_path).map_err(io_err(&data_path))?;
    if bytes.len() % 4 != 0 {
        return Err(VolumeError::TruncatedData(bytes.len()));
    }
    let data: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Volume::new(meta.dims, meta.spacing_mm, meta.origin_mm, data, meta.value_kind)
}

/// Writes `<name>.vol.json` and `<name>.raw` for the given sidecar path.
/// Samples are stored as float32; values not representable in f32 are rounded.
pub fn save_volume(volume: &Volume, sidecar: impl AsRef<Path>) -> Result<PathBuf, VolumeError> {
    let sidecar_path = sidecar_path_for(sidecar.as_ref());
    let name = sidecar_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let stem = name.trim_end_matches(SIDECAR_SUFFIX).to_string();
    let data_file = format!("{stem}.raw");
    let data_path = sidecar_path.with_file_name(&data_file);
    if let Some(dir) = sidecar_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut bytes = Vec::with_capacity(volume.data().len() * 4);
    for &v in volume.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(&data_path, bytes).map_err(io_err(&data_path))?;
    let meta = VolumeSidecar {
        dims: volume.dims(),
        spacing_mm: volume.spacing_mm(),
        origin_mm: volume.origin_mm(),
        value_kind: volume.value_kind(),
        data_file,
    };
    let text = serde_json::to_string_pretty(&meta).expect("sidecar serializes");
    fs::write(&sidecar_path, text).map_err(io_err(&sidecar_path))?;
    Ok(sidecar_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voxel::make_phantom;

    #[test]
    fn zeros_file_loads() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("z.raw"), vec![0u8; 64 * 4]).unwrap();
        fs::write(
            dir.path().join("z.vol.json"),
            r#"{"dims":[4,4,4],"spacing_mm":[1,1,1],"origin_mm":[0,0,0],"data_file":"z.raw"}"#,
        )
        .unwrap();
        let v = load_volume(dir.path().join("z.raw")).unwrap();
        assert_eq!(v.data().len(), 64);
        assert!(v.data().iter().all(|&x| x == 0.0));
        assert_eq!(v.value_kind(), ValueKind::Hounsfield);
    }

    #[test]
    fn short_file_is_length_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("z.raw"), vec![0u8; 63 * 4]).unwrap();
        fs::write(
            dir.path().join("z.vol.json"),
            r#"{"dims":[4,4,4],"spacing_mm":[1,1,1],"origin_mm":[0,0,0],"data_file":"z.raw"}"#,
        )
        .unwrap();
        let err = load_volume(dir.path().join("z.vol.json")).unwrap_err();
        assert!(matches!(err, VolumeError::LengthMismatch { expected: 64, found: 63 }));
    }

    #[test]
    fn missing_sidecar_and_bad_spacing() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("z.raw"), vec![0u8; 8 * 4]).unwrap();
        assert!(matches!(
            load_volume(dir.path().join("z.raw")),
            Err(VolumeError::MissingSidecar(_))
        ));
        fs::write(
            dir.path().join("z.vol.json"),
            r#"{"dims":[2,2,2],"spacing_mm":[1,-1,1],"origin_mm":[0,0,0],"data_file":"z.raw"}"#,
        )
        .unwrap();
        assert!(matches!(
            load_volume(dir.path().join("z.raw")),
            Err(VolumeError::InvalidSpacing(_))
        ));
    }

    #[test]
    fn phantom_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let v = make_phantom(7, [12, 10, 9]).unwrap();
        let path = save_volume(&v, dir.path().join("sub/p7.vol.json")).unwrap();
        let back = load_volume(&path).unwrap();
        assert_eq!(back.dims(), v.dims());
        assert_eq!(back.spacing_mm(), v.spacing_mm());
        assert_eq!(back.origin_mm(), v.origin_mm());
        assert_eq!(back.value_kind(), v.value_kind());
        let a: Vec<u64> = v.data().iter().map(|x| x.to_bits()).collect();
        let b: Vec<u64> = back.data().iter().map(|x| x.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn attenuation_kind_survives_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let v = Volume::uniform([3, 3, 3], [0.5, 0.5, 1.0], 0.015625, ValueKind::AttenuationPerMm).unwrap();
        save_volume(&v, dir.path().join("mu.vol.json")).unwrap();
        assert_eq!(load_volume(dir.path().join("mu.raw")).unwrap(), v);
    }
}
