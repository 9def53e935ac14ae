//! Full-reference image quality: PSNR, SSIM and per-view evaluation
//! reports over a view manifest.
//!
//! SSIM uses the canonical 11x11 Gaussian window (sigma 1.5) with
//! `K1 = 0.01`, `K2 = 0.03`, dynamic range 1, averaged over the valid
//! region (windows fully inside the image).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::drr::{read_png16, Image};
use crate::viewgeom::{view_file_name, ViewRecord, ViewSet};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const REPORT_HEADER: &str = "view,azimuth_rad,elevation_rad,psnr_db,ssim";

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("image sizes differ: {a:?} vs {b:?}")]
    DimMismatch { a: (usize, usize), b: (usize, usize) },
    #[error("image {width}x{height} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")]
    TooSmall { width: usize, height: usize },
    #[error("max_val must be positive and finite, got {0}")]
    InvalidMaxVal(f64),
    #[error("no views of set {0} to evaluate")]
    EmptySet(ViewSet),
    #[error("view {view}: {message}")]
    View { view: usize, message: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

fn check_dims(a: &Image, b: &Image) -> Result<(), MetricsError> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(MetricsError::DimMismatch {
            a: (a.width(), a.height()),
            b: (b.width(), b.height()),
        });
    }
    Ok(())
}

pub fn mse(a: &Image, b: &Image) -> Result<f64, MetricsError> {
    check_dims(a, b)?;
    let sum: f64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum();
    Ok(sum / a.pixels().len() as f64)
}

/// `10 log10(max_val^2 / MSE)` in dB; `+inf` for identical images.
pub fn psnr(a: &Image, b: &Image, max_val: f64) -> Result<f64, MetricsError> {
    if !(max_val > 0.0 && max_val.is_finite()) {
        return Err(MetricsError::InvalidMaxVal(max_val));
    }
    let e = mse(a, b)?;
    if e == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (max_val * max_val / e).log10())
}

/// Normalized 1-D Gaussian taps of the SSIM window.
pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= sum);
    w
}

/// Valid-region separable filtering of a `w x h` plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(k, t)| t * plane[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(k, t)| t * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Mean structural similarity over the valid region.
pub fn ssim(a: &Image, b: &Image) -> Result<f64, MetricsError> {
    check_dims(a, b)?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(MetricsError::TooSmall { width: w, height: h });
    }
    let taps = gaussian_window();
    let pa: Vec<f64> = a.pixels().iter().map(|&p| p as f64).collect();
    let pb: Vec<f64> = b.pixels().iter().map(|&p| p as f64).collect();
    let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(u, v)| u * v).collect::<Vec<f64>>();
    let mu_a = filter_valid(&pa, w, h, &taps);
    let mu_b = filter_valid(&pb, w, h, &taps);
    let e_aa = filter_valid(&prod(&pa, &pa), w, h, &taps);
    let e_bb = filter_valid(&prod(&pb, &pb), w, h, &taps);
    let e_ab = filter_valid(&prod(&pa, &pb), w, h, &taps);
    let (c1, c2) = ((SSIM_K1).powi(2), (SSIM_K2).powi(2));
    let total: f64 = (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / mu_a.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub view: usize,
    pub azimuth_rad: f64,
    pub elevation_rad: f64,
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub view_set: ViewSet,
    pub rows: Vec<EvalRow>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

impl EvalReport {
    pub fn from_rows(view_set: ViewSet, rows: Vec<EvalRow>) -> Result<Self, MetricsError> {
        if rows.is_empty() {
            return Err(MetricsError::EmptySet(view_set));
        }
        let n = rows.len() as f64;
        Ok(Self {
            view_set,
            mean_psnr: rows.iter().map(|r| r.psnr_db).sum::<f64>() / n,
            mean_ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / n,
            rows,
        })
    }

    pub fn summary_line(&self) -> String {
        format!(
            "mean_psnr={} mean_ssim={} n={}",
            self.mean_psnr,
            self.mean_ssim,
            self.rows.len()
        )
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{REPORT_HEADER}\n");
        for r in &self.rows {
            writeln!(out, "{},{},{},{},{}", r.view, r.azimuth_rad, r.elevation_rad, r.psnr_db, r.ssim)
                .expect("writing to a String");
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), MetricsError> {
        let path = path.as_ref();
        let io = |e: std::io::Error| MetricsError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io)?;
        }
        fs::write(path, self.to_csv()).map_err(io)
    }
}

/// Whether `record` belongs to `view_set`; untagged records belong to
/// every set.
pub fn in_view_set(record: &ViewRecord, view_set: ViewSet) -> bool {
    record.set.is_none_or(|s| s == view_set)
}

/// Compares `pred_dir/<name>` against `gt_dir/<name>` for every record
/// of `view_set`, where `<name>` is [`view_file_name`] of the record's
/// angles. Rows follow manifest order.
pub fn evaluate_set(
    pred_dir: impl AsRef<Path>,
    gt_dir: impl AsRef<Path>,
    records: &[ViewRecord],
    view_set: ViewSet,
) -> Result<EvalReport, MetricsError> {
    let (pred_dir, gt_dir) = (pred_dir.as_ref(), gt_dir.as_ref());
    let chosen: Vec<&ViewRecord> = records.iter().filter(|r| in_view_set(r, view_set)).collect();
    let rows = chosen
        .par_iter()
        .map(|r| {
            let name = view_file_name(r.azimuth_rad, r.elevation_rad);
            let load = |dir: &Path| {
                read_png16(dir.join(&name)).map_err(|e| MetricsError::View {
                    view: r.index,
                    message: e.to_string(),
                })
            };
            let (pred, gt) = (load(pred_dir)?, load(gt_dir)?);
            let per_view = |e: MetricsError| MetricsError::View {
                view: r.index,
                message: e.to_string(),
            };
            Ok(EvalRow {
                view: r.index,
                azimuth_rad: r.azimuth_rad,
                elevation_rad: r.elevation_rad,
                psnr_db: psnr(&pred, &gt, 1.0).map_err(per_view)?,
                ssim: ssim(&pred, &gt).map_err(per_view)?,
            })
        })
        .collect::<Result<Vec<_>, MetricsError>>()?;
    EvalReport::from_rows(view_set, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drr::{write_png16, IntensityKind};
    use crate::viewgeom::{fibonacci_hemisphere, simple_arc_views};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn image(w: usize, h: usize, px: Vec<f32>) -> Image {
        Image::new(w, h, px, IntensityKind::LineIntegral).unwrap()
    }

    fn random_image(w: usize, h: usize, rng: &mut ChaCha8Rng) -> Image {
        image(w, h, (0..w * h).map(|_| rng.random::<f32>()).collect())
    }

    fn naive_psnr(a: &Image, b: &Image, max_val: f64) -> f64 {
        let mut sum = 0.0;
        for y in 0..a.height() {
            for x in 0..a.width() {
                let d = a.get(x, y) as f64 - b.get(x, y) as f64;
                sum += d * d;
            }
        }
        let mse = sum / (a.width() * a.height()) as f64;
        10.0 * (max_val * max_val / mse).log10()
    }

    /// Direct windowed statistics with the 2-D Gaussian, one window at a time.
    fn naive_ssim(a: &Image, b: &Image) -> f64 {
        let g: Vec<f64> = (0..11).map(|i| (-((i as f64 - 5.0).powi(2)) / 4.5).exp()).collect();
        let norm: f64 = g.iter().sum::<f64>().powi(2);
        let (c1, c2) = (1e-4, 9e-4);
        let (mut total, mut count) = (0.0, 0);
        for y0 in 0..=a.height() - 11 {
            for x0 in 0..=a.width() - 11 {
                let (mut ma, mut mb) = (0.0, 0.0);
                for dy in 0..11 {
                    for dx in 0..11 {
                        let wt = g[dy] * g[dx] / norm;
                        ma += wt * a.get(x0 + dx, y0 + dy) as f64;
                        mb += wt * b.get(x0 + dx, y0 + dy) as f64;
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for dy in 0..11 {
                    for dx in 0..11 {
                        let wt = g[dy] * g[dx] / norm;
                        let da = a.get(x0 + dx, y0 + dy) as f64 - ma;
                        let db = b.get(x0 + dx, y0 + dy) as f64 - mb;
                        va += wt * da * da;
                        vb += wt * db * db;
                        cov += wt * da * db;
                    }
                }
                total += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
        total / count as f64
    }

    #[test]
    fn psnr_cases() {
        let a = Image::filled(4, 4, 0.3);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        // MSE exactly 0.01 from a 0.1 offset on every pixel
        let z = image(2, 2, vec![0.0; 4]);
        let b = image(2, 2, vec![0.1; 4]);
        assert!((psnr(&z, &b, 1.0).unwrap() - 20.0).abs() < 1e-6);
        assert!(matches!(psnr(&a, &Image::filled(4, 5, 0.3), 1.0), Err(MetricsError::DimMismatch { .. })));
        assert!(psnr(&a, &a, 0.0).is_err());
    }

    #[test]
    fn psnr_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let (a, b) = (random_image(13, 9, &mut rng), random_image(13, 9, &mut rng));
            assert!((psnr(&a, &b, 1.0).unwrap() - naive_psnr(&a, &b, 1.0)).abs() < 1e-9);
            assert!((psnr(&a, &b, 2.5).unwrap() - naive_psnr(&a, &b, 2.5)).abs() < 1e-9);
        }
    }

    #[test]
    fn ssim_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_image(16, 12, &mut rng);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        // constant images: zero variances leave (C1 / (1 + C1)) * (C2 / C2)
        let s = ssim(&Image::filled(11, 11, 0.0), &Image::filled(11, 11, 1.0)).unwrap();
        assert!((s - 1e-4 / (1.0 + 1e-4)).abs() < 1e-12);
        assert!(matches!(ssim(&Image::filled(10, 20, 0.0), &Image::filled(10, 20, 0.0)), Err(MetricsError::TooSmall { .. })));
    }

    #[test]
    fn ssim_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (w, h) in [(11, 11), (17, 14), (24, 24)] {
            let a = random_image(w, h, &mut rng);
            let noisy: Vec<f32> = a.pixels().iter().map(|p| (p + 0.2 * rng.random::<f32>()).min(1.0)).collect();
            for b in [random_image(w, h, &mut rng), image(w, h, noisy)] {
                assert!((ssim(&a, &b).unwrap() - naive_ssim(&a, &b)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn psnr_monotone_in_noise_level() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_image(32, 32, &mut rng);
        let base: Vec<f32> = (0..32 * 32).map(|_| rng.random::<f32>() - 0.5).collect();
        let mut last = f64::INFINITY;
        for level in 1..=20 {
            let s = level as f32 * 0.01;
            let b = image(32, 32, a.pixels().iter().zip(&base).map(|(p, n)| p + s * n).collect());
            let v = psnr(&a, &b, 1.0).unwrap();
            assert!(v <= last);
            last = v;
        }
    }

    proptest! {
        #[test]
        fn ssim_symmetric_and_flip_invariant(seed in any::<u64>(), w in 11usize..20, h in 11usize..20) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (a, b) = (random_image(w, h, &mut rng), random_image(w, h, &mut rng));
            let s = ssim(&a, &b).unwrap();
            prop_assert!((s - ssim(&b, &a).unwrap()).abs() < 1e-9);
            prop_assert!((-1.0..=1.0).contains(&s));
            let sh = ssim(&a.flip_horizontal(), &b.flip_horizontal()).unwrap();
            let sv = ssim(&a.flip_vertical(), &b.flip_vertical()).unwrap();
            prop_assert!((s - sh).abs() < 1e-9 && (s - sv).abs() < 1e-9);
            let p = psnr(&a, &b, 1.0).unwrap();
            prop_assert!((p - psnr(&a.flip_horizontal(), &b.flip_horizontal(), 1.0).unwrap()).abs() < 1e-9);
        }
    }

    fn write_set(dir: &Path, records: &[ViewRecord], f: impl Fn(usize) -> Image) {
        for (i, r) in records.iter().enumerate() {
            write_png16(&f(i), dir.join(view_file_name(r.azimuth_rad, r.elevation_rad))).unwrap();
        }
    }

    fn records(set: ViewSet) -> Vec<ViewRecord> {
        let poses = match set {
            ViewSet::Simple => simple_arc_views(30.0, 1.8).unwrap(),
            ViewSet::Hemisphere => fibonacci_hemisphere(6, 1.8).unwrap(),
        };
        poses
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut r = ViewRecord::new(i, p, i == 0);
                r.set = Some(set);
                r
            })
            .collect()
    }

    #[test]
    fn evaluate_identical_and_constant_predictions() {
        let (gt, pred, gray) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let mut recs = records(ViewSet::Hemisphere);
        let simple = records(ViewSet::Simple);
        let gt_img = |i: usize| {
            let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
            random_image(16, 16, &mut rng)
        };
        write_set(gt.path(), &recs, gt_img);
        write_set(pred.path(), &recs, gt_img);
        write_set(gray.path(), &recs, |_| Image::filled(16, 16, 0.5));
        recs.extend(simple);

        let same = evaluate_set(pred.path(), gt.path(), &recs, ViewSet::Hemisphere).unwrap();
        assert_eq!(same.rows.len(), 6);
        assert!((same.mean_ssim - 1.0).abs() < 1e-9);
        assert_eq!(same.mean_psnr, f64::INFINITY);

        let g = evaluate_set(gray.path(), gt.path(), &recs, ViewSet::Hemisphere).unwrap();
        // recompute from the stored 16-bit ground truth
        let expected: f64 = recs[..6]
            .iter()
            .map(|r| {
                let name = view_file_name(r.azimuth_rad, r.elevation_rad);
                let img = read_png16(gt.path().join(&name)).unwrap();
                // mid-gray is stored as 32768 / 65535
                let mid = 32768.0 / 65535.0;
                let m: f64 = img.pixels().iter().map(|&p| (p as f64 - mid).powi(2)).sum::<f64>() / 256.0;
                10.0 * (1.0 / m).log10()
            })
            .sum::<f64>()
            / 6.0;
        assert!((g.mean_psnr - expected).abs() < 1e-9);
        let mean: f64 = g.rows.iter().map(|r| r.ssim).sum::<f64>() / 6.0;
        assert_eq!(g.mean_ssim, mean);

        let csv = g.to_csv();
        assert_eq!(csv.lines().next(), Some(REPORT_HEADER));
        assert_eq!(csv.lines().count(), 7);
        assert!(g.summary_line().ends_with(" n=6"));
        assert!(g.summary_line().starts_with("mean_psnr="));

        // the simple-arc images were never written
        assert!(matches!(
            evaluate_set(gray.path(), gt.path(), &recs, ViewSet::Simple),
            Err(MetricsError::View { .. })
        ));
        assert!(matches!(evaluate_set(gray.path(), gt.path(), &[], ViewSet::Simple), Err(MetricsError::EmptySet(_))));
    }
}
