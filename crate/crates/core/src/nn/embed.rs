//! Patch tokens, positional and timestep embeddings.

use super::{Mat, ModelError};
use crate::diffusion::LatentTensor;

/// Positional phases are `u * POS_EMBED_SPAN * omega_k` for a normalised
/// coordinate `u` in `[0, 1]`, so grids of any size share one phase range.
pub const POS_EMBED_SPAN: f64 = 16.0;
const MAX_PERIOD: f64 = 10_000.0;

/// Splits `z` into non-overlapping `p x p` patches in row-major patch order.
/// Each token lists channel-major, then row, then column values.
pub fn patchify(z: &LatentTensor, p: usize) -> Result<Mat, ModelError> {
    let [c, h, w] = z.shape();
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(ModelError::Shape(format!("latent {h}x{w} not divisible by patch {p}")));
    }
    let (gh, gw) = (h / p, w / p);
    let mut out = Mat::zeros(gh * gw, c * p * p);
    for gy in 0..gh {
        for gx in 0..gw {
            let row = out.row_mut(gy * gw + gx);
            for ch in 0..c {
                for py in 0..p {
                    for px in 0..p {
                        row[(ch * p + py) * p + px] = z.get(ch, gy * p + py, gx * p + px);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`patchify`] for a `grid_h x grid_w` token layout.
pub fn unpatchify(tokens: &Mat, p: usize, channels: usize, grid_h: usize, grid_w: usize) -> Result<LatentTensor, ModelError> {
    if tokens.rows != grid_h * grid_w || tokens.cols != channels * p * p {
        return Err(ModelError::Shape(format!(
            "{}x{} tokens do not form a {grid_h}x{grid_w} grid of {channels}-channel {p}x{p} patches",
            tokens.rows, tokens.cols
        )));
    }
    let (h, w) = (grid_h * p, grid_w * p);
    let mut data = vec![0.0; channels * h * w];
    for gy in 0..grid_h {
        for gx in 0..grid_w {
            let row = tokens.row(gy * grid_w + gx);
            for ch in 0..channels {
                for py in 0..p {
                    for px in 0..p {
                        data[(ch * h + gy * p + py) * w + gx * p + px] = row[(ch * p + py) * p + px];
                    }
                }
            }
        }
    }
    LatentTensor::new(channels, h, w, data).map_err(|e| ModelError::Shape(e.to_string()))
}

fn axis_embed(u: f64, quarter: usize, out: &mut [f64]) {
    for k in 0..quarter {
        let omega = MAX_PERIOD.powf(-(k as f64) / quarter as f64);
        let phase = u * POS_EMBED_SPAN * omega;
        out[k] = phase.sin();
        out[quarter + k] = phase.cos();
    }
}

/// Normalised coordinate of index `i` on a `grid`-point axis.
pub fn grid_coordinate(i: usize, grid: usize) -> f64 {
    if grid <= 1 {
        0.0
    } else {
        i as f64 / (grid - 1) as f64
    }
}

/// 2-D sine-cosine embedding, `grid^2 x dim` row-major. The first half of
/// each row encodes the row coordinate, the second half the column
/// coordinate, each as `[sin..., cos...]`.
pub fn sincos_pos_embed(grid: usize, dim: usize) -> Result<Vec<f64>, ModelError> {
    if dim == 0 || dim % 4 != 0 {
        return Err(ModelError::Config(format!("positional dim {dim} not divisible by 4")));
    }
    if grid == 0 {
        return Err(ModelError::Config("grid must be positive".into()));
    }
    let (half, quarter) = (dim / 2, dim / 4);
    let mut out = vec![0.0; grid * grid * dim];
    for y in 0..grid {
        for x in 0..grid {
            let row = &mut out[(y * grid + x) * dim..(y * grid + x + 1) * dim];
            axis_embed(grid_coordinate(y, grid), quarter, &mut row[..half]);
            axis_embed(grid_coordinate(x, grid), quarter, &mut row[half..]);
        }
    }
    Ok(out)
}

/// Bilinear resampling of a `grid_lr^2 x dim` embedding field onto a
/// `grid_hr` grid with aligned corners.
pub fn interpolate_pos_embed(pe: &[f64], grid_lr: usize, grid_hr: usize, dim: usize) -> Result<Vec<f64>, ModelError> {
    if grid_lr == 0 || pe.len() != grid_lr * grid_lr * dim {
        return Err(ModelError::Shape(format!(
            "positional embedding of length {} is not {grid_lr}^2 x {dim}",
            pe.len()
        )));
    }
    if grid_hr < grid_lr {
        return Err(ModelError::Shape(format!("target grid {grid_hr} smaller than source grid {grid_lr}")));
    }
    if grid_hr == grid_lr {
        return Ok(pe.to_vec());
    }
    let src = |i: usize| -> (usize, usize, f64) {
        let s = grid_coordinate(i, grid_hr) * (grid_lr - 1) as f64;
        let i0 = (s.floor() as usize).min(grid_lr - 1);
        let i1 = (i0 + 1).min(grid_lr - 1);
        (i0, i1, s - i0 as f64)
    };
    let mut out = vec![0.0; grid_hr * grid_hr * dim];
    for y in 0..grid_hr {
        let (y0, y1, fy) = src(y);
        for x in 0..grid_hr {
            let (x0, x1, fx) = src(x);
            let w = [
                (y0 * grid_lr + x0, (1.0 - fy) * (1.0 - fx)),
                (y0 * grid_lr + x1, (1.0 - fy) * fx),
                (y1 * grid_lr + x0, fy * (1.0 - fx)),
                (y1 * grid_lr + x1, fy * fx),
            ];
            let row = &mut out[(y * grid_hr + x) * dim..(y * grid_hr + x + 1) * dim];
            for (idx, wt) in w {
                if wt != 0.0 {
                    row.iter_mut()
                        .zip(&pe[idx * dim..(idx + 1) * dim])
                        .for_each(|(o, v)| *o += wt * v);
                }
            }
        }
    }
    Ok(out)
}

/// Sinusoidal timestep features `[cos(t w_k)..., sin(t w_k)...]` with
/// `w_k = 10000^(-k / (dim / 2))`.
pub fn timestep_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for k in 0..half {
        let arg = t as f64 * MAX_PERIOD.powf(-(k as f64) / half as f64);
        out[k] = arg.cos();
        out[half + k] = arg.sin();
    }
    out
}
