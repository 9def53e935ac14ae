//! View-conditioned diffusion transformer: forward pass with activation
//! cache and the matching reverse pass.
//!
//! Block layout (pre-norm): modulated self-attention with gated residual,
//! cross-attention over projected condition tokens with a plain residual,
//! modulated MLP with gated residual. The six modulation vectors of every
//! block come from one shared timestep computation plus per-block offsets.

use rayon::prelude::*;

use super::layers::{
    concat_cols, gate_apply, gelu, gelu_grad, layer_norm, layer_norm_backward, linear, linear_backward, modulate,
    modulate_backward, multi_head_attention, multi_head_attention_backward, silu, silu_grad, split_cols,
    AttentionProbs,
};
use super::{patchify, timestep_embedding, unpatchify, Mat, ModelConfig, ModelError, ModelParams};
use crate::diffusion::{training_loss, ConditionBundle, LatentTensor, NoisePredictor, NoiseSchedule};
use crate::viewgeom::ViewEncoding;

/// Largest timestep accepted by the timestep embedding.
pub const MAX_TIMESTEP: usize = NoiseSchedule::DEFAULT_TIMESTEPS;

#[derive(Debug, Clone)]
struct BlockCache {
    modv: Vec<f64>,
    n1: Mat,
    inv1: Vec<f64>,
    m1: Mat,
    q: Mat,
    k: Mat,
    v: Mat,
    sa_probs: AttentionProbs,
    sa_cat: Mat,
    sa: Mat,
    n2: Mat,
    inv2: Vec<f64>,
    cq: Mat,
    ck: Mat,
    cv: Mat,
    ca_probs: AttentionProbs,
    ca_cat: Mat,
    n3: Mat,
    inv3: Vec<f64>,
    m3: Mat,
    hpre: Mat,
    hact: Mat,
    mo: Mat,
}

/// Activations recorded by [`vcdit_forward`] for [`vcdit_backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    patches: Mat,
    temb: Mat,
    h1: Mat,
    a1: Mat,
    tvec: Mat,
    st: Mat,
    null: bool,
    feats: Option<Mat>,
    craw: Mat,
    ctok: Mat,
    blocks: Vec<BlockCache>,
    nf: Mat,
    invf: Vec<f64>,
    mf: Mat,
    scale_f: Vec<f64>,
    shape: [usize; 3],
}

impl ForwardCache {
    /// Attention weights of every self- and cross-attention call, in order.
    pub fn attention_probs(&self) -> impl Iterator<Item = &Mat> {
        self.blocks
            .iter()
            .flat_map(|b| b.sa_probs.heads.iter().chain(b.ca_probs.heads.iter()))
    }

    pub fn was_null(&self) -> bool {
        self.null
    }
}

/// Gradients of a scalar objective.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: ModelParams,
    pub z_t: LatentTensor,
}

fn lin(p: &ModelParams, prefix: &str, x: &Mat) -> Mat {
    linear(x, p.get(&format!("{prefix}.weight")), p.get(&format!("{prefix}.bias")))
}

fn lin_back(g: &mut ModelParams, p: &ModelParams, prefix: &str, x: &Mat, dy: &Mat, need_dx: bool) -> Option<Mat> {
    let (wn, bn) = (format!("{prefix}.weight"), format!("{prefix}.bias"));
    let mut gw = std::mem::take(g.data_vec_mut(&wn));
    let mut gb = std::mem::take(g.data_vec_mut(&bn));
    let dx = linear_backward(x, p.get(&wn), dy, &mut gw, &mut gb, need_dx);
    *g.data_vec_mut(&wn) = gw;
    *g.data_vec_mut(&bn) = gb;
    dx
}

fn map(m: &Mat, f: impl Fn(f64) -> f64) -> Mat {
    Mat::from_vec(m.rows, m.cols, m.data.iter().map(|v| f(*v)).collect())
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
}

fn col_sum_product(a: &Mat, b: &Mat) -> Vec<f64> {
    let mut out = vec![0.0; a.cols];
    for r in 0..a.rows {
        for ((o, x), y) in out.iter_mut().zip(a.row(r)).zip(b.row(r)) {
            *o += x * y;
        }
    }
    out
}

fn scale_cols(m: &Mat, k: &[f64]) -> Mat {
    let mut out = m.clone();
    for r in 0..out.rows {
        out.row_mut(r).iter_mut().zip(k).for_each(|(v, s)| *v *= s);
    }
    out
}

/// Average-pools the source latent into `cond_tokens_count` regions of
/// `cond_pool x cond_pool` cells; one row per region.
fn pool_source(cfg: &ModelConfig, src: &LatentTensor) -> Mat {
    let (g, pool, c) = (cfg.cond_grid(), cfg.cond_pool, cfg.latent_channels);
    let region = src.height() / g;
    let cell = region / pool;
    let norm = 1.0 / (cell * cell) as f64;
    let mut out = Mat::zeros(g * g, cfg.cond_feature_dim());
    for ry in 0..g {
        for rx in 0..g {
            let row = out.row_mut(ry * g + rx);
            for ch in 0..c {
                for py in 0..pool {
                    for px in 0..pool {
                        let (y0, x0) = (ry * region + py * cell, rx * region + px * cell);
                        let mut s = 0.0;
                        for y in y0..y0 + cell {
                            for x in x0..x0 + cell {
                                s += src.get(ch, y, x);
                            }
                        }
                        row[(ch * pool + py) * pool + px] = s * norm;
                    }
                }
            }
        }
    }
    out
}

fn check_inputs(cfg: &ModelConfig, z_t: &LatentTensor, cond: &ConditionBundle, t: usize) -> Result<(), ModelError> {
    let side = cfg.latent_side();
    if z_t.shape() != [cfg.latent_channels, side, side] {
        return Err(ModelError::Shape(format!(
            "latent {:?} does not match configured {:?}",
            z_t.shape(),
            [cfg.latent_channels, side, side]
        )));
    }
    if cond.source_latent().shape() != z_t.shape() {
        return Err(ModelError::Shape(format!(
            "source latent {:?} differs from target latent {:?}",
            cond.source_latent().shape(),
            z_t.shape()
        )));
    }
    if let Some(w) = cond.token_dim() {
        if w != cfg.cond_dim {
            return Err(ModelError::Shape(format!("condition tokens are {w} wide, expected {}", cfg.cond_dim)));
        }
    }
    if t == 0 || t > MAX_TIMESTEP {
        return Err(ModelError::Timestep(t));
    }
    Ok(())
}

/// The shared modulation set `W silu(tvec) + b` for timestep `t`, before
/// per-block offsets; `6 * model_dim` values ordered shift, scale, gate
/// (attention) then shift, scale, gate (MLP).
pub fn adaln_single(cfg: &ModelConfig, params: &ModelParams, t: usize) -> Result<Vec<f64>, ModelError> {
    if t == 0 || t > MAX_TIMESTEP {
        return Err(ModelError::Timestep(t));
    }
    let temb = Mat::from_vec(1, cfg.model_dim, timestep_embedding(t, cfg.model_dim));
    let a1 = map(&lin(params, "timestep_mlp.fc1", &temb), silu);
    let tvec = lin(params, "timestep_mlp.fc2", &a1);
    Ok(lin(params, "adaln_single_global", &map(&tvec, silu)).data)
}

pub fn vcdit_forward(
    cfg: &ModelConfig,
    params: &ModelParams,
    z_t: &LatentTensor,
    cond: &ConditionBundle,
    t: usize,
) -> Result<(LatentTensor, ForwardCache), ModelError> {
    check_inputs(cfg, z_t, cond, t)?;
    params.check(cfg)?;
    let d = cfg.model_dim;
    let p = cfg.patch_size;

    let x_in = z_t
        .concat_channels(cond.source_latent())
        .map_err(|e| ModelError::Shape(e.to_string()))?;
    let patches = patchify(&x_in, p)?;
    let mut x = lin(params, "patch_embed", &patches);
    add_into(&mut x.data, params.get("pos_embed"));

    let temb = Mat::from_vec(1, d, timestep_embedding(t, d));
    let h1 = lin(params, "timestep_mlp.fc1", &temb);
    let a1 = map(&h1, silu);
    let tvec = lin(params, "timestep_mlp.fc2", &a1);
    let st = map(&tvec, silu);
    let glob = lin(params, "adaln_single_global", &st);

    let null = cond.is_null();
    let (feats, craw) = if null {
        let k = cfg.cond_tokens_count + 1;
        (None, Mat::from_vec(k, cfg.cond_dim, params.get("null_tokens").to_vec()))
    } else {
        let feats = pool_source(cfg, cond.source_latent());
        let mut img = lin(params, "cond_encoder", &feats);
        add_into(&mut img.data, params.get("cond_encoder.token_embed"));
        let extra: Vec<f64> = cond.cond_tokens().iter().flatten().copied().collect();
        img.data.extend_from_slice(&extra);
        img.rows += cond.cond_tokens().len();
        (Some(feats), img)
    };
    let ctok = lin(params, "cond_projection", &craw);

    let mut blocks = Vec::with_capacity(cfg.blocks);
    for i in 0..cfg.blocks {
        let pre = |s: &str| format!("blocks.{i}.{s}");
        let mut modv = glob.data.clone();
        add_into(&mut modv, params.get(&pre("adaln_offsets")));
        let part = |j: usize| &modv[j * d..(j + 1) * d];

        let (n1, inv1) = layer_norm(&x);
        let m1 = modulate(&n1, part(0), part(1));
        let qkv = split_cols(&lin(params, &pre("self_attn.qkv"), &m1), d);
        let (sa_cat, sa_probs) = multi_head_attention(&qkv[0], &qkv[1], &qkv[2], cfg.heads)?;
        let sa = lin(params, &pre("self_attn.out"), &sa_cat);
        gate_apply(&mut x, &sa, part(2))?;

        let (n2, inv2) = layer_norm(&x);
        let cq = lin(params, &pre("cross_attn.q"), &n2);
        let ckv = split_cols(&lin(params, &pre("cross_attn.kv"), &ctok), d);
        let (ca_cat, ca_probs) = multi_head_attention(&cq, &ckv[0], &ckv[1], cfg.heads)?;
        let ca = lin(params, &pre("cross_attn.out"), &ca_cat);
        add_into(&mut x.data, &ca.data);

        let (n3, inv3) = layer_norm(&x);
        let m3 = modulate(&n3, part(3), part(4));
        let hpre = lin(params, &pre("mlp.fc1"), &m3);
        let hact = map(&hpre, gelu);
        let mo = lin(params, &pre("mlp.fc2"), &hact);
        gate_apply(&mut x, &mo, part(5))?;

        let [q, k, v]: [Mat; 3] = qkv.try_into().expect("three projections");
        let [ck, cv]: [Mat; 2] = ckv.try_into().expect("two projections");
        blocks.push(BlockCache {
            modv: modv.clone(),
            n1,
            inv1,
            m1,
            q,
            k,
            v,
            sa_probs,
            sa_cat,
            sa,
            n2,
            inv2,
            cq,
            ck,
            cv,
            ca_probs,
            ca_cat,
            n3,
            inv3,
            m3,
            hpre,
            hact,
            mo,
        });
    }

    let off = params.get("final.adaln_offsets");
    let shift_f: Vec<f64> = off[..d].iter().zip(&tvec.data).map(|(a, b)| a + b).collect();
    let scale_f: Vec<f64> = off[d..].iter().zip(&tvec.data).map(|(a, b)| a + b).collect();
    let (nf, invf) = layer_norm(&x);
    let mf = modulate(&nf, &shift_f, &scale_f);
    let out = lin(params, "final.head", &mf);
    let eps = unpatchify(&out, p, cfg.latent_channels, cfg.grid, cfg.grid)?;

    let cache = ForwardCache {
        patches,
        temb,
        h1,
        a1,
        tvec,
        st,
        null,
        feats,
        craw,
        ctok,
        blocks,
        nf,
        invf,
        mf,
        scale_f,
        shape: z_t.shape(),
    };
    Ok((eps, cache))
}

/// Reverse pass for upstream gradient `d_eps` on the predicted noise.
pub fn vcdit_backward(
    cfg: &ModelConfig,
    params: &ModelParams,
    cache: &ForwardCache,
    d_eps: &LatentTensor,
) -> Result<Gradients, ModelError> {
    if d_eps.shape() != cache.shape {
        return Err(ModelError::Shape(format!(
            "upstream gradient {:?} does not match forward output {:?}",
            d_eps.shape(),
            cache.shape
        )));
    }
    let d = cfg.model_dim;
    let p = cfg.patch_size;
    let mut g = ModelParams::zeros(cfg);

    let dout = patchify(d_eps, p)?;
    let dmf = lin_back(&mut g, params, "final.head", &cache.mf, &dout, true).expect("dx requested");
    let (mut dshift_f, mut dscale_f) = (vec![0.0; d], vec![0.0; d]);
    let dnf = modulate_backward(&cache.nf, &cache.scale_f, &dmf, &mut dshift_f, &mut dscale_f);
    {
        let go = g.get_mut("final.adaln_offsets");
        add_into(&mut go[..d], &dshift_f);
        add_into(&mut go[d..], &dscale_f);
    }
    let mut dtvec: Vec<f64> = dshift_f.iter().zip(&dscale_f).map(|(a, b)| a + b).collect();
    let mut dx = layer_norm_backward(&cache.nf, &cache.invf, &dnf);

    let mut dglob = vec![0.0; 6 * d];
    let mut dctok = Mat::zeros(cache.ctok.rows, d);
    for (i, b) in cache.blocks.iter().enumerate().rev() {
        let pre = |s: &str| format!("blocks.{i}.{s}");
        let part = |j: usize| &b.modv[j * d..(j + 1) * d];
        let mut dmod = vec![0.0; 6 * d];

        // MLP branch
        dmod[5 * d..].copy_from_slice(&col_sum_product(&dx, &b.mo));
        let dmo = scale_cols(&dx, part(5));
        let dhact = lin_back(&mut g, params, &pre("mlp.fc2"), &b.hact, &dmo, true).expect("dx requested");
        let dhpre = Mat::from_vec(
            dhact.rows,
            dhact.cols,
            dhact.data.iter().zip(&b.hpre.data).map(|(g, x)| g * gelu_grad(*x)).collect(),
        );
        let dm3 = lin_back(&mut g, params, &pre("mlp.fc1"), &b.m3, &dhpre, true).expect("dx requested");
        let (ds, dc) = dmod[3 * d..5 * d].split_at_mut(d);
        let dn3 = modulate_backward(&b.n3, part(4), &dm3, ds, dc);
        add_into(&mut dx.data, &layer_norm_backward(&b.n3, &b.inv3, &dn3).data);

        // cross-attention branch
        let dca_cat = lin_back(&mut g, params, &pre("cross_attn.out"), &b.ca_cat, &dx, true).expect("dx requested");
        let (dcq, dck, dcv) = multi_head_attention_backward(&b.cq, &b.ck, &b.cv, &b.ca_probs, &dca_cat);
        let dn2 = lin_back(&mut g, params, &pre("cross_attn.q"), &b.n2, &dcq, true).expect("dx requested");
        let dckv = concat_cols(&[&dck, &dcv]);
        let dct = lin_back(&mut g, params, &pre("cross_attn.kv"), &cache.ctok, &dckv, true).expect("dx requested");
        add_into(&mut dctok.data, &dct.data);
        add_into(&mut dx.data, &layer_norm_backward(&b.n2, &b.inv2, &dn2).data);

        // self-attention branch
        dmod[2 * d..3 * d].copy_from_slice(&col_sum_product(&dx, &b.sa));
        let dsa = scale_cols(&dx, part(2));
        let dsa_cat = lin_back(&mut g, params, &pre("self_attn.out"), &b.sa_cat, &dsa, true).expect("dx requested");
        let (dq, dk, dv) = multi_head_attention_backward(&b.q, &b.k, &b.v, &b.sa_probs, &dsa_cat);
        let dqkv = concat_cols(&[&dq, &dk, &dv]);
        let dm1 = lin_back(&mut g, params, &pre("self_attn.qkv"), &b.m1, &dqkv, true).expect("dx requested");
        let (ds, dc) = dmod[..2 * d].split_at_mut(d);
        let dn1 = modulate_backward(&b.n1, part(1), &dm1, ds, dc);
        add_into(&mut dx.data, &layer_norm_backward(&b.n1, &b.inv1, &dn1).data);

        add_into(g.get_mut(&pre("adaln_offsets")), &dmod);
        add_into(&mut dglob, &dmod);
    }

    add_into(g.get_mut("pos_embed"), &dx.data);
    let dpatches = lin_back(&mut g, params, "patch_embed", &cache.patches, &dx, true).expect("dx requested");
    let dx_in = unpatchify(&dpatches, p, 2 * cfg.latent_channels, cfg.grid, cfg.grid)?;
    let (dz_t, _) = dx_in
        .split_channels(cfg.latent_channels)
        .map_err(|e| ModelError::Shape(e.to_string()))?;

    let dglob = Mat::from_vec(1, 6 * d, dglob);
    let dst = lin_back(&mut g, params, "adaln_single_global", &cache.st, &dglob, true).expect("dx requested");
    for ((acc, gs), tv) in dtvec.iter_mut().zip(&dst.data).zip(&cache.tvec.data) {
        *acc += gs * silu_grad(*tv);
    }
    let dtvec = Mat::from_vec(1, d, dtvec);
    let da1 = lin_back(&mut g, params, "timestep_mlp.fc2", &cache.a1, &dtvec, true).expect("dx requested");
    let dh1 = Mat::from_vec(
        1,
        d,
        da1.data.iter().zip(&cache.h1.data).map(|(g, x)| g * silu_grad(*x)).collect(),
    );
    lin_back(&mut g, params, "timestep_mlp.fc1", &cache.temb, &dh1, false);

    let dcraw = lin_back(&mut g, params, "cond_projection", &cache.craw, &dctok, true).expect("dx requested");
    match &cache.feats {
        None => add_into(g.get_mut("null_tokens"), &dcraw.data),
        Some(feats) => {
            let k = cfg.cond_tokens_count;
            let dimg = Mat::from_vec(k, cfg.cond_dim, dcraw.data[..k * cfg.cond_dim].to_vec());
            add_into(g.get_mut("cond_encoder.token_embed"), &dimg.data);
            lin_back(&mut g, params, "cond_encoder", feats, &dimg, false);
        }
    }
    Ok(Gradients { params: g, z_t: dz_t })
}

/// One supervised example for the noise-matching objective.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub z_t: LatentTensor,
    pub cond: ConditionBundle,
    pub t: usize,
    pub eps: LatentTensor,
}

/// Mean noise-matching loss over `batch` and its parameter gradient.
/// Per-sample work may run in parallel; gradients are summed in batch
/// order so the result does not depend on the worker count.
pub fn loss_and_grads(
    cfg: &ModelConfig,
    params: &ModelParams,
    batch: &[TrainingSample],
) -> Result<(f64, ModelParams), ModelError> {
    if batch.is_empty() {
        return Err(ModelError::Shape("empty batch".into()));
    }
    let scale = 1.0 / batch.len() as f64;
    let per_sample: Vec<Result<(f64, ModelParams), ModelError>> = batch
        .par_iter()
        .map(|s| {
            let (eps_hat, cache) = vcdit_forward(cfg, params, &s.z_t, &s.cond, s.t)?;
            let loss = training_loss(&eps_hat, &s.eps).map_err(|e| ModelError::Shape(e.to_string()))?;
            let k = 2.0 * scale / eps_hat.len() as f64;
            let d_eps = eps_hat
                .lincomb(k, &s.eps, -k)
                .map_err(|e| ModelError::Shape(e.to_string()))?;
            Ok((loss, vcdit_backward(cfg, params, &cache, &d_eps)?.params))
        })
        .collect();
    let mut total = 0.0;
    let mut grads: Option<ModelParams> = None;
    for r in per_sample {
        let (loss, g) = r?;
        total += loss;
        match grads.as_mut() {
            None => grads = Some(g),
            Some(acc) => acc.add_assign(&g),
        }
    }
    Ok((total * scale, grads.expect("non-empty batch")))
}

/// A configured network usable as a [`NoisePredictor`].
#[derive(Debug, Clone)]
pub struct Vcdit {
    config: ModelConfig,
    params: ModelParams,
}

impl Vcdit {
    pub fn new(config: ModelConfig, params: ModelParams) -> Result<Self, ModelError> {
        config.validate()?;
        params.check(&config)?;
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn into_parts(self) -> (ModelConfig, ModelParams) {
        (self.config, self.params)
    }

    /// Condition for generating a target view from `source_latent`: the
    /// view encoding enters as one extra raw token, zero-padded to
    /// `cond_dim`; image tokens are derived from the source latent inside
    /// the network.
    pub fn condition(&self, source_latent: LatentTensor, view: &ViewEncoding) -> Result<ConditionBundle, ModelError> {
        view_condition(&self.config, source_latent, view)
    }
}

pub fn view_condition(
    cfg: &ModelConfig,
    source_latent: LatentTensor,
    view: &ViewEncoding,
) -> Result<ConditionBundle, ModelError> {
    let mut token = vec![0.0; cfg.cond_dim];
    token[..ViewEncoding::DIM].copy_from_slice(&view.to_array());
    ConditionBundle::new(vec![token], source_latent, false).map_err(|e| ModelError::Shape(e.to_string()))
}

impl NoisePredictor for Vcdit {
    fn predict_noise(&self, z: &LatentTensor, cond: &ConditionBundle, t: usize) -> crate::Result<LatentTensor> {
        Ok(vcdit_forward(&self.config, &self.params, z, cond, t)?.0)
    }
}
