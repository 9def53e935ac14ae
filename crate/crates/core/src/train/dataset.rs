//! On-disk DRR datasets: seeded phantoms rendered from a Fibonacci
//! hemisphere at one or more resolutions.
//!
//! A dataset directory holds `dataset.json` (header), `manifest.jsonl`
//! (one view record per volume and view, image paths keyed by resolution)
//! and the PNG files, at `vol_XXX/<res>/view_NNNN.png`.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{io_error, TrainError};
use crate::drr::{default_step_mm, read_png16, render_drr, write_png16, DetectorSpec, Image, NormalizeMode};
use crate::viewgeom::{fibonacci_hemisphere, read_view_manifest, write_view_manifest, ViewRecord, ViewSet};
use crate::voxel::{make_phantom, DEFAULT_MU_WATER_PER_MM};

pub const DATASET_HEADER_FILE: &str = "dataset.json";
pub const MANIFEST_FILE: &str = "manifest.jsonl";
/// Voxel grid of generated phantoms.
pub const PHANTOM_DIMS: [usize; 3] = [64, 64, 64];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub volume_ids: Vec<String>,
    pub resolutions: Vec<usize>,
    pub normalization: NormalizeMode,
    pub seed: u64,
    pub radius_m: f64,
    pub n_views: usize,
    pub phantom_dims: [usize; 3],
    /// Per-view records, volume-major, view index ascending.
    #[serde(skip)]
    pub records: Vec<ViewRecord>,
    /// Directory that image paths are relative to.
    #[serde(skip)]
    pub root: PathBuf,
}

fn volume_id(k: usize) -> String {
    format!("vol_{k:03}")
}

fn image_rel_path(volume: &str, resolution: usize, view: usize) -> String {
    format!("{volume}/{resolution}/view_{view:04}.png")
}

/// Renders `n_volumes` phantoms (seeds `seed..seed + n_volumes`) from
/// `n_views` hemisphere poses at each resolution and writes everything
/// under `out_dir`.
pub fn build_dataset(
    n_volumes: usize,
    n_views: usize,
    resolutions: &[usize],
    radius_m: f64,
    seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<DatasetManifest, TrainError> {
    let out_dir = out_dir.as_ref();
    if n_volumes == 0 {
        return Err(TrainError::Config("at least one volume required".into()));
    }
    if n_views < 2 {
        return Err(TrainError::Config(format!("n_views must be at least 2, got {n_views}")));
    }
    let mut resolutions = resolutions.to_vec();
    resolutions.sort_unstable();
    resolutions.dedup();
    if resolutions.is_empty() || resolutions[0] == 0 {
        return Err(TrainError::Config("resolutions must be non-empty and positive".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| io_error(out_dir, e))?;
    let poses = fibonacci_hemisphere(n_views, radius_m)?;
    let normalization = NormalizeMode::MinmaxLineIntegral;

    let mut volume_ids = Vec::with_capacity(n_volumes);
    let mut records = Vec::with_capacity(n_volumes * n_views);
    for k in 0..n_volumes {
        let id = volume_id(k);
        let volume = make_phantom(seed.wrapping_add(k as u64), PHANTOM_DIMS)?.hu_to_mu(DEFAULT_MU_WATER_PER_MM)?;
        let step = default_step_mm(&volume);
        let jobs: Vec<(usize, usize)> = (0..n_views)
            .flat_map(|v| resolutions.iter().map(move |&r| (v, r)))
            .collect();
        jobs.par_iter().try_for_each(|&(v, res)| -> Result<(), TrainError> {
            let img = render_drr(&volume, &poses[v], &DetectorSpec::square(res, radius_m), step)?;
            write_png16(&img.normalize(normalization), out_dir.join(image_rel_path(&id, res, v)))?;
            Ok(())
        })?;
        for (v, pose) in poses.iter().enumerate() {
            let mut rec = ViewRecord::new(v, pose, v == 0);
            rec.volume = Some(id.clone());
            rec.set = Some(ViewSet::Hemisphere);
            for &res in &resolutions {
                rec.images.insert(res.to_string(), image_rel_path(&id, res, v));
            }
            records.push(rec);
        }
        volume_ids.push(id);
    }
    let manifest = DatasetManifest {
        volume_ids,
        resolutions,
        normalization,
        seed,
        radius_m,
        n_views,
        phantom_dims: PHANTOM_DIMS,
        records,
        root: out_dir.to_path_buf(),
    };
    manifest.save()?;
    Ok(manifest)
}

impl DatasetManifest {
    /// Writes the header and records into `root`.
    pub fn save(&self) -> Result<(), TrainError> {
        let header = self.root.join(DATASET_HEADER_FILE);
        let json = serde_json::to_string_pretty(self).map_err(|e| TrainError::Manifest(e.to_string()))?;
        fs::write(&header, json + "\n").map_err(|e| io_error(&header, e))?;
        let path = self.root.join(MANIFEST_FILE);
        write_view_manifest(&path, &self.records).map_err(|e| io_error(&path, e))
    }

    /// Reads a dataset directory and checks that every image exists.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, TrainError> {
        let dir = dir.as_ref();
        let header = dir.join(DATASET_HEADER_FILE);
        let text = fs::read_to_string(&header).map_err(|e| io_error(&header, e))?;
        let mut manifest: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| TrainError::Manifest(format!("{}: {e}", header.display())))?;
        let path = dir.join(MANIFEST_FILE);
        manifest.records = read_view_manifest(&path).map_err(|e| io_error(&path, e))?;
        manifest.root = dir.to_path_buf();
        manifest.validate()?;
        Ok(manifest)
    }

    /// Checks the record layout and that every referenced image exists.
    pub fn validate(&self) -> Result<(), TrainError> {
        for id in &self.volume_ids {
            let recs: Vec<&ViewRecord> = self.volume_records(id).collect();
            if recs.is_empty() {
                return Err(TrainError::Manifest(format!("volume {id} has no records")));
            }
            if recs.iter().filter(|r| r.is_source).count() != 1 || !recs.iter().any(|r| r.is_source && r.index == 0) {
                return Err(TrainError::Manifest(format!("volume {id}: view 0 must be the only source")));
            }
        }
        for rec in &self.records {
            let Some(id) = rec.volume.as_deref().filter(|id| self.volume_ids.iter().any(|v| v == id)) else {
                return Err(TrainError::Manifest(format!("record {} has no known volume", rec.index)));
            };
            for &res in &self.resolutions {
                let rel = rec
                    .image(res)
                    .ok_or_else(|| TrainError::Manifest(format!("{id} view {} lacks a {res} px image", rec.index)))?;
                let path = self.root.join(rel);
                if !path.is_file() {
                    return Err(io_error(&path, "image file missing"));
                }
            }
        }
        Ok(())
    }

    pub fn volume_records<'a>(&'a self, volume: &'a str) -> impl Iterator<Item = &'a ViewRecord> + 'a {
        self.records.iter().filter(move |r| r.volume.as_deref() == Some(volume))
    }

    /// Records carrying an image at `resolution`.
    pub fn records_at(&self, resolution: usize) -> impl Iterator<Item = &ViewRecord> {
        self.records.iter().filter(move |r| r.image(resolution).is_some())
    }

    pub fn image_path(&self, record: &ViewRecord, resolution: usize) -> Result<PathBuf, TrainError> {
        record
            .image(resolution)
            .map(|rel| self.root.join(rel))
            .ok_or_else(|| TrainError::Manifest(format!("view {} has no {resolution} px image", record.index)))
    }

    pub fn load_image(&self, record: &ViewRecord, resolution: usize) -> Result<Image, TrainError> {
        Ok(read_png16(self.image_path(record, resolution)?)?)
    }

    /// The source (PA) record of `volume`.
    pub fn source_record(&self, volume: &str) -> Result<&ViewRecord, TrainError> {
        self.records
            .iter()
            .find(|r| r.is_source && r.volume.as_deref() == Some(volume))
            .ok_or_else(|| TrainError::Manifest(format!("volume {volume} has no source view")))
    }

    /// Copy without the given view indices (in every volume). The source
    /// view cannot be held out.
    pub fn without_views(&self, held_out: &[usize]) -> Result<Self, TrainError> {
        if held_out.contains(&0) {
            return Err(TrainError::Config("the source view cannot be held out".into()));
        }
        Ok(Self {
            records: self.records.iter().filter(|r| !held_out.contains(&r.index)).cloned().collect(),
            ..self.clone()
        })
    }

    /// Copy restricted to the given view indices (plus every source view).
    pub fn only_views(&self, keep: &[usize]) -> Self {
        Self {
            records: self
                .records
                .iter()
                .filter(|r| r.is_source || keep.contains(&r.index))
                .cloned()
                .collect(),
            ..self.clone()
        }
    }
}
