//! Line-delimited JSON view manifests.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GeometryError, ViewPose};

/// Which evaluation protocol a view set belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewSet {
    /// The +-90 degree arc through the PA view.
    Simple,
    /// The Fibonacci hemisphere lattice.
    Hemisphere,
}

impl std::fmt::Display for ViewSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ViewSet::Simple => "simple",
            ViewSet::Hemisphere => "hemisphere",
        })
    }
}

/// One view of a manifest. `images` maps a resolution (pixels per side, as
/// a string key) to an image path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewRecord {
    pub index: usize,
    pub azimuth_rad: f64,
    pub elevation_rad: f64,
    pub radius_m: f64,
    pub is_source: bool,
    #[serde(default)]
    pub images: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub volume: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub set: Option<ViewSet>,
}

impl ViewRecord {
    pub fn new(index: usize, pose: &ViewPose, is_source: bool) -> Self {
        Self {
            index,
            azimuth_rad: pose.azimuth_rad(),
            elevation_rad: pose.elevation_rad(),
            radius_m: pose.radius_m(),
            is_source,
            images: BTreeMap::new(),
            volume: None,
            set: None,
        }
    }

    pub fn pose(&self) -> Result<ViewPose, GeometryError> {
        ViewPose::from_angles(self.azimuth_rad, self.elevation_rad, self.radius_m)
    }

    pub fn image(&self, resolution: usize) -> Option<&str> {
        self.images.get(&resolution.to_string()).map(String::as_str)
    }
}

/// Canonical image file name for a view, e.g. `az030.000_el45.000.png`.
pub fn view_file_name(azimuth_rad: f64, elevation_rad: f64) -> String {
    format!(
        "az{:07.3}_el{:06.3}.png",
        azimuth_rad.to_degrees(),
        elevation_rad.to_degrees()
    )
}

pub fn write_view_manifest(path: impl AsRef<Path>, records: &[ViewRecord]) -> std::io::Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_view_manifest(path: impl AsRef<Path>) -> std::io::Result<Vec<ViewRecord>> {
    let file = fs::File::open(path)?;
    let mut records = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line)?);
    }
    Ok(records)
}
