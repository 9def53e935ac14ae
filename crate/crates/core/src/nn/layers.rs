//! Transformer building blocks with hand-written backward passes.
//! Activations are `rows x cols` row-major [`Mat`]s; weights are stored
//! `in x out` so a linear layer is `y = x W + b`.

use super::linalg::{mm, mm_nt, mm_tn, Mat};
use super::ModelError;

pub const LAYER_NORM_EPS: f64 = 1e-6;

pub fn linear(x: &Mat, w: &[f64], b: &[f64]) -> Mat {
    let out = b.len();
    debug_assert_eq!(w.len(), x.cols * out);
    let mut data = Vec::with_capacity(x.rows * out);
    for _ in 0..x.rows {
        data.extend_from_slice(b);
    }
    let mut y = Mat::from_vec(x.rows, out, data);
    mm(x.rows, x.cols, out, &x.data, w, 1.0, &mut y.data);
    y
}

/// Accumulates weight and bias gradients; returns the input gradient when
/// `need_dx` is set.
pub fn linear_backward(x: &Mat, w: &[f64], dy: &Mat, gw: &mut [f64], gb: &mut [f64], need_dx: bool) -> Option<Mat> {
    mm_tn(x.cols, x.rows, dy.cols, &x.data, &dy.data, 1.0, gw);
    for r in 0..dy.rows {
        gb.iter_mut().zip(dy.row(r)).for_each(|(g, v)| *g += v);
    }
    need_dx.then(|| {
        let mut dx = Mat::zeros(x.rows, x.cols);
        mm_nt(dy.rows, dy.cols, x.cols, &dy.data, w, 0.0, &mut dx.data);
        dx
    })
}

/// Per-row normalisation without learned affine. Returns the normalised
/// rows and each row's inverse standard deviation.
pub fn layer_norm(x: &Mat) -> (Mat, Vec<f64>) {
    let n = x.cols as f64;
    let mut y = Mat::zeros(x.rows, x.cols);
    let mut inv = Vec::with_capacity(x.rows);
    for r in 0..x.rows {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        y.row_mut(r).iter_mut().zip(row).for_each(|(o, v)| *o = (v - mean) * is);
        inv.push(is);
    }
    (y, inv)
}

pub fn layer_norm_backward(y: &Mat, inv_std: &[f64], dy: &Mat) -> Mat {
    let n = y.cols as f64;
    let mut dx = Mat::zeros(y.rows, y.cols);
    for r in 0..y.rows {
        let (yr, dr) = (y.row(r), dy.row(r));
        let mean_d = dr.iter().sum::<f64>() / n;
        let mean_dy = dr.iter().zip(yr).map(|(d, v)| d * v).sum::<f64>() / n;
        dx.row_mut(r)
            .iter_mut()
            .zip(dr.iter().zip(yr))
            .for_each(|(o, (d, v))| *o = inv_std[r] * (d - mean_d - v * mean_dy));
    }
    dx
}

/// `x (1 + scale) + shift`, broadcast over rows.
pub fn modulate(x: &Mat, shift: &[f64], scale: &[f64]) -> Mat {
    let mut y = x.clone();
    for r in 0..y.rows {
        for ((o, s), sc) in y.row_mut(r).iter_mut().zip(shift).zip(scale) {
            *o = *o * (1.0 + sc) + s;
        }
    }
    y
}

/// Returns `dx`; accumulates into `dshift` and `dscale`.
pub fn modulate_backward(x: &Mat, scale: &[f64], dy: &Mat, dshift: &mut [f64], dscale: &mut [f64]) -> Mat {
    let mut dx = Mat::zeros(x.rows, x.cols);
    for r in 0..x.rows {
        let (xr, dr) = (x.row(r), dy.row(r));
        for c in 0..x.cols {
            dshift[c] += dr[c];
            dscale[c] += dr[c] * xr[c];
            dx.data[r * x.cols + c] = dr[c] * (1.0 + scale[c]);
        }
    }
    dx
}

/// Adaptive layer-norm modulation: normalise, then `(1 + scale)` and `shift`.
pub fn adaln_modulate(x: &Mat, shift: &[f64], scale: &[f64]) -> Result<Mat, ModelError> {
    if shift.len() != x.cols || scale.len() != x.cols {
        return Err(ModelError::Shape(format!(
            "modulation of width {}/{} applied to {}-wide tokens",
            shift.len(),
            scale.len(),
            x.cols
        )));
    }
    Ok(modulate(&layer_norm(x).0, shift, scale))
}

/// `stream + gate * branch`, gate broadcast over rows.
pub fn gate_apply(stream: &mut Mat, branch: &Mat, gate: &[f64]) -> Result<(), ModelError> {
    if stream.rows != branch.rows || stream.cols != branch.cols || gate.len() != stream.cols {
        return Err(ModelError::Shape("gated residual dimensions disagree".into()));
    }
    for r in 0..stream.rows {
        for ((s, b), g) in stream.row_mut(r).iter_mut().zip(branch.row(r)).zip(gate) {
            *s += g * b;
        }
    }
    Ok(())
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_C: f64 = 0.044715;

/// `tanh` through one `exp`; saturates cleanly at both ends.
#[inline]
fn fast_tanh(u: f64) -> f64 {
    1.0 - 2.0 / ((2.0 * u).exp() + 1.0)
}

/// Tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + fast_tanh(GELU_K * (x + GELU_C * x * x * x)))
}

pub fn gelu_grad(x: f64) -> f64 {
    let th = fast_tanh(GELU_K * (x + GELU_C * x * x * x));
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
}

pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

pub fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

/// Softmax attention weights per head, each `queries x keys`.
#[derive(Debug, Clone)]
pub struct AttentionProbs {
    pub heads: Vec<Mat>,
}

fn head_slice(m: &Mat, offset: usize, width: usize) -> Mat {
    let mut data = Vec::with_capacity(m.rows * width);
    for r in 0..m.rows {
        data.extend_from_slice(&m.row(r)[offset..offset + width]);
    }
    Mat::from_vec(m.rows, width, data)
}

fn head_scatter(dst: &mut Mat, src: &Mat, offset: usize) {
    for r in 0..src.rows {
        dst.row_mut(r)[offset..offset + src.cols].copy_from_slice(src.row(r));
    }
}

/// Multi-head scaled dot-product attention on projected `q`, `k`, `v`
/// (`d` columns each, split into `heads` contiguous groups). Returns the
/// concatenated head outputs and the attention weights.
pub fn multi_head_attention(q: &Mat, k: &Mat, v: &Mat, heads: usize) -> Result<(Mat, AttentionProbs), ModelError> {
    let d = q.cols;
    if heads == 0 || d % heads != 0 || k.cols != d || v.cols != d || k.rows != v.rows || k.rows == 0 {
        return Err(ModelError::Shape(format!(
            "attention with q {}x{}, k {}x{}, v {}x{}, {heads} heads",
            q.rows, q.cols, k.rows, k.cols, v.rows, v.cols
        )));
    }
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = Mat::zeros(q.rows, d);
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = (head_slice(q, h * dh, dh), head_slice(k, h * dh, dh), head_slice(v, h * dh, dh));
        let mut s = Mat::zeros(q.rows, k.rows);
        mm_nt(q.rows, dh, k.rows, &qh.data, &kh.data, 0.0, &mut s.data);
        for r in 0..s.rows {
            let row = s.row_mut(r);
            let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v * scale));
            let mut sum = 0.0;
            for x in row.iter_mut() {
                *x = (*x * scale - max).exp();
                sum += *x;
            }
            row.iter_mut().for_each(|x| *x /= sum);
        }
        let mut oh = Mat::zeros(q.rows, dh);
        mm(q.rows, k.rows, dh, &s.data, &vh.data, 0.0, &mut oh.data);
        head_scatter(&mut out, &oh, h * dh);
        probs.push(s);
    }
    Ok((out, AttentionProbs { heads: probs }))
}

/// Gradients of [`multi_head_attention`] with respect to `q`, `k`, `v`.
pub fn multi_head_attention_backward(q: &Mat, k: &Mat, v: &Mat, probs: &AttentionProbs, dout: &Mat) -> (Mat, Mat, Mat) {
    let d = q.cols;
    let heads = probs.heads.len();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let (mut dq, mut dk, mut dv) = (Mat::zeros(q.rows, d), Mat::zeros(k.rows, d), Mat::zeros(v.rows, d));
    for (h, p) in probs.heads.iter().enumerate() {
        let (qh, kh, vh) = (head_slice(q, h * dh, dh), head_slice(k, h * dh, dh), head_slice(v, h * dh, dh));
        let doh = head_slice(dout, h * dh, dh);
        let mut dvh = Mat::zeros(v.rows, dh);
        mm_tn(k.rows, q.rows, dh, &p.data, &doh.data, 0.0, &mut dvh.data);
        let mut dp = Mat::zeros(q.rows, k.rows);
        mm_nt(q.rows, dh, k.rows, &doh.data, &vh.data, 0.0, &mut dp.data);
        for r in 0..dp.rows {
            let pr = p.row(r);
            let dot: f64 = dp.row(r).iter().zip(pr).map(|(a, b)| a * b).sum();
            dp.row_mut(r)
                .iter_mut()
                .zip(pr)
                .for_each(|(g, pv)| *g = pv * (*g - dot) * scale);
        }
        let mut dqh = Mat::zeros(q.rows, dh);
        mm(q.rows, k.rows, dh, &dp.data, &kh.data, 0.0, &mut dqh.data);
        let mut dkh = Mat::zeros(k.rows, dh);
        mm_tn(k.rows, q.rows, dh, &dp.data, &qh.data, 0.0, &mut dkh.data);
        head_scatter(&mut dq, &dqh, h * dh);
        head_scatter(&mut dk, &dkh, h * dh);
        head_scatter(&mut dv, &dvh, h * dh);
    }
    (dq, dk, dv)
}

/// Splits the columns of `m` into consecutive `width`-wide blocks.
pub fn split_cols(m: &Mat, width: usize) -> Vec<Mat> {
    (0..m.cols / width).map(|i| head_slice(m, i * width, width)).collect()
}

/// Inverse of [`split_cols`].
pub fn concat_cols(parts: &[&Mat]) -> Mat {
    let cols = parts.iter().map(|p| p.cols).sum();
    let mut out = Mat::zeros(parts[0].rows, cols);
    let mut off = 0;
    for p in parts {
        head_scatter(&mut out, p, off);
        off += p.cols;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat {
        Mat::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn neutral_modulation_is_layer_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = rand_mat(3, 6, &mut rng);
        let zero = vec![0.0; 6];
        assert_eq!(adaln_modulate(&x, &zero, &zero).unwrap(), layer_norm(&x).0);
        assert!(adaln_modulate(&x, &zero[..5], &zero).is_err());
    }

    #[test]
    fn modulation_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_mat(4, 8, &mut rng);
        let shift: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let scale: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = adaln_modulate(&x, &shift, &scale).unwrap();
        for r in 0..4 {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / 8.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
            for c in 0..8 {
                let want = (row[c] - mean) / (var + 1e-6).sqrt() * (1.0 + scale[c]) + shift[c];
                assert!((y.at(r, c) - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_gate_leaves_stream() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut s = rand_mat(3, 4, &mut rng);
        let before = s.clone();
        gate_apply(&mut s, &rand_mat(3, 4, &mut rng), &[0.0; 4]).unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn single_key_returns_its_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = rand_mat(5, 8, &mut rng);
        let k = rand_mat(1, 8, &mut rng);
        let v = rand_mat(1, 8, &mut rng);
        let (o, _) = multi_head_attention(&q, &k, &v, 2).unwrap();
        for r in 0..5 {
            assert_eq!(o.row(r), v.row(0));
        }
    }

    #[test]
    fn zero_queries_average_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = Mat::zeros(3, 8);
        let k = rand_mat(6, 8, &mut rng);
        let v = rand_mat(6, 8, &mut rng);
        let (o, _) = multi_head_attention(&q, &k, &v, 4).unwrap();
        for c in 0..8 {
            let mean = (0..6).map(|r| v.at(r, c)).sum::<f64>() / 6.0;
            assert!((0..3).all(|r| (o.at(r, c) - mean).abs() < 1e-12));
        }
    }

    #[test]
    fn attention_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (nq, nk, d, heads) = (4, 7, 12, 3);
        let (q, k, v) = (rand_mat(nq, d, &mut rng), rand_mat(nk, d, &mut rng), rand_mat(nk, d, &mut rng));
        let (o, probs) = multi_head_attention(&q, &k, &v, heads).unwrap();
        let dh = d / heads;
        for h in 0..heads {
            for i in 0..nq {
                let logits: Vec<f64> = (0..nk)
                    .map(|j| (0..dh).map(|c| q.at(i, h * dh + c) * k.at(j, h * dh + c)).sum::<f64>() / (dh as f64).sqrt())
                    .collect();
                let z: f64 = logits.iter().map(|l| l.exp()).sum();
                let row_sum: f64 = probs.heads[h].row(i).iter().sum();
                assert!((row_sum - 1.0).abs() < 1e-6);
                for c in 0..dh {
                    let want: f64 = (0..nk).map(|j| logits[j].exp() / z * v.at(j, h * dh + c)).sum();
                    assert!((o.at(i, h * dh + c) - want).abs() < 1e-6);
                }
            }
        }
    }

    /// Scalar objective `sum(out * probe)` for finite-difference checks.
    fn fd<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], i: usize) -> f64 {
        let h = 1e-5;
        let (mut a, mut b) = (x.to_vec(), x.to_vec());
        a[i] += h;
        b[i] -= h;
        (f(&a) - f(&b)) / (2.0 * h)
    }

    fn dot(a: &Mat, b: &Mat) -> f64 {
        a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn attention_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (nq, nk, d, heads) = (3, 4, 6, 2);
        let (q, k, v) = (rand_mat(nq, d, &mut rng), rand_mat(nk, d, &mut rng), rand_mat(nk, d, &mut rng));
        let probe = rand_mat(nq, d, &mut rng);
        let (_, probs) = multi_head_attention(&q, &k, &v, heads).unwrap();
        let (dq, dk, dv) = multi_head_attention_backward(&q, &k, &v, &probs, &probe);
        let obj = |q: &Mat, k: &Mat, v: &Mat| dot(&multi_head_attention(q, k, v, heads).unwrap().0, &probe);
        for i in 0..q.data.len() {
            let n = fd(|x| obj(&Mat::from_vec(nq, d, x.to_vec()), &k, &v), &q.data, i);
            assert!((n - dq.data[i]).abs() < 1e-7);
        }
        for i in 0..k.data.len() {
            let n = fd(|x| obj(&q, &Mat::from_vec(nk, d, x.to_vec()), &v), &k.data, i);
            assert!((n - dk.data[i]).abs() < 1e-7);
            let n = fd(|x| obj(&q, &k, &Mat::from_vec(nk, d, x.to_vec())), &v.data, i);
            assert!((n - dv.data[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn layer_norm_and_activations_backward() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = rand_mat(2, 5, &mut rng);
        let probe = rand_mat(2, 5, &mut rng);
        let (y, inv) = layer_norm(&x);
        let dx = layer_norm_backward(&y, &inv, &probe);
        for i in 0..x.data.len() {
            let n = fd(|v| dot(&layer_norm(&Mat::from_vec(2, 5, v.to_vec())).0, &probe), &x.data, i);
            assert!((n - dx.data[i]).abs() < 1e-7);
        }
        for x in [-3.0, -0.7, 0.0, 0.4, 2.5] {
            assert!((fd(|v| gelu(v[0]), &[x], 0) - gelu_grad(x)).abs() < 1e-8);
            assert!((fd(|v| silu(v[0]), &[x], 0) - silu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn linear_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = rand_mat(3, 4, &mut rng);
        let w = rand_mat(4, 2, &mut rng);
        let b = vec![0.3, -0.1];
        let probe = rand_mat(3, 2, &mut rng);
        let (mut gw, mut gb) = (vec![0.0; 8], vec![0.0; 2]);
        let dx = linear_backward(&x, &w.data, &probe, &mut gw, &mut gb, true).unwrap();
        for i in 0..8 {
            assert!((fd(|v| dot(&linear(&x, v, &b), &probe), &w.data, i) - gw[i]).abs() < 1e-8);
        }
        for i in 0..2 {
            assert!((fd(|v| dot(&linear(&x, &w.data, v), &probe), &b, i) - gb[i]).abs() < 1e-8);
        }
        for i in 0..12 {
            let n = fd(|v| dot(&linear(&Mat::from_vec(3, 4, v.to_vec()), &w.data, &b), &probe), &x.data, i);
            assert!((n - dx.data[i]).abs() < 1e-8);
        }
    }
}
