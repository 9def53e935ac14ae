//! 16-bit grayscale PNG and binary PGM output. Pixel values are clamped to
//! `[0, 1]` and stored as `round(p * 65535)`.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use super::{DrrError, Image, IntensityKind};

fn io_error(path: &Path, message: impl ToString) -> DrrError {
    DrrError::Io {
        path: path.display().to_string(),
        message: message.to_string(),
    }
}

fn quantize(p: f32) -> u16 {
    (p.clamp(0.0, 1.0) as f64 * 65535.0).round() as u16
}

fn ensure_parent(path: &Path) -> Result<(), DrrError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    Ok(())
}

pub fn write_png16(img: &Image, path: impl AsRef<Path>) -> Result<(), DrrError> {
    let path = path.as_ref();
    ensure_parent(path)?;
    let file = File::create(path).map_err(|e| io_error(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), img.width() as u32, img.height() as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Sixteen);
    let mut writer = encoder.write_header().map_err(|e| io_error(path, e))?;
    let bytes: Vec<u8> = img.pixels().iter().flat_map(|&p| quantize(p).to_be_bytes()).collect();
    writer.write_image_data(&bytes).map_err(|e| io_error(path, e))?;
    writer.finish().map_err(|e| io_error(path, e))
}

/// Reads an 8- or 16-bit grayscale PNG into `[0, 1]`.
pub fn read_png16(path: impl AsRef<Path>) -> Result<Image, DrrError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| io_error(path, e))?;
    let mut reader = png::Decoder::new(BufReader::new(file))
        .read_info()
        .map_err(|e| io_error(path, e))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| io_error(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| io_error(path, e))?;
    if info.color_type != png::ColorType::Grayscale {
        return Err(io_error(path, format!("expected grayscale, got {:?}", info.color_type)));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let pixels: Vec<f32> = match info.bit_depth {
        png::BitDepth::Sixteen => buf[..w * h * 2]
            .chunks_exact(2)
            .map(|c| (u16::from_be_bytes([c[0], c[1]]) as f64 / 65535.0) as f32)
            .collect(),
        png::BitDepth::Eight => buf[..w * h].iter().map(|&v| (v as f64 / 255.0) as f32).collect(),
        other => return Err(io_error(path, format!("unsupported bit depth {other:?}"))),
    };
    Image::new(w, h, pixels, IntensityKind::LineIntegral)
}

/// Binary PGM (`P5`, maxval 65535, big-endian samples).
pub fn write_pgm16(img: &Image, path: impl AsRef<Path>) -> Result<(), DrrError> {
    let path = path.as_ref();
    ensure_parent(path)?;
    let file = File::create(path).map_err(|e| io_error(path, e))?;
    let mut out = BufWriter::new(file);
    let write = |out: &mut BufWriter<File>| -> std::io::Result<()> {
        write!(out, "P5\n{} {}\n65535\n", img.width(), img.height())?;
        for &p in img.pixels() {
            out.write_all(&quantize(p).to_be_bytes())?;
        }
        out.flush()
    };
    write(&mut out).map_err(|e| io_error(path, e))
}
