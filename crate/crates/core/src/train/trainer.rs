//! The staged training loop and weak-to-strong parameter transfer.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{io_error, AdamW, DatasetManifest, LatentCodec, ModelSpec, StageConfig, StageInit, TrainError};
use crate::diffusion::{q_sample, LatentTensor, NoiseSchedule};
use crate::nn::{
    interpolate_pos_embed, loss_and_grads, sincos_pos_embed, view_condition, Checkpoint, ModelConfig, ModelParams,
    Tensor, TrainingSample,
};
use crate::viewgeom::{relative_view_encoding, ViewPose};

/// Steps per emitted loss-trace point.
pub const LOSS_TRACE_INTERVAL: usize = 50;

const META_RADIUS: &str = "dataset.radius_m";
const META_RESOLUTION: &str = "stage.resolution";
const META_STEPS: &str = "stage.steps";
const META_SEED: &str = "stage.seed";

/// Mean loss over the `LOSS_TRACE_INTERVAL` steps ending at `step`
/// (fewer for a final partial window).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossPoint {
    pub step: usize,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct StageResult {
    pub checkpoint: Checkpoint,
    pub loss_trace: Vec<LossPoint>,
    /// Loss of every optimizer step.
    pub step_losses: Vec<f64>,
}

/// Encoded latents of one dataset resolution, grouped by volume.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub codec: LatentCodec,
    pub resolution: usize,
    volumes: Vec<VolumeViews>,
}

#[derive(Debug, Clone)]
struct VolumeViews {
    source: usize,
    poses: Vec<ViewPose>,
    latents: Vec<LatentTensor>,
}

impl TrainingSet {
    /// Loads every `resolution` image of `manifest` and encodes it with a
    /// codec fitted to those same images.
    pub fn load(manifest: &DatasetManifest, resolution: usize, codec_factor: usize) -> Result<Self, TrainError> {
        if !manifest.resolutions.contains(&resolution) {
            return Err(TrainError::Manifest(format!(
                "dataset has no {resolution} px images (present: {:?})",
                manifest.resolutions
            )));
        }
        let mut groups = Vec::new();
        for id in &manifest.volume_ids {
            let mut poses = Vec::new();
            let mut images = Vec::new();
            let mut source = None;
            for rec in manifest.volume_records(id) {
                if rec.is_source {
                    source = Some(poses.len());
                }
                poses.push(rec.pose()?);
                images.push(manifest.load_image(rec, resolution)?);
            }
            let source = source.ok_or_else(|| TrainError::Manifest(format!("volume {id} has no source view")))?;
            groups.push((source, poses, images));
        }
        let codec = LatentCodec::fit(codec_factor, groups.iter().flat_map(|g| g.2.iter()))?;
        let volumes = groups
            .into_iter()
            .map(|(source, poses, images)| {
                let latents = images.iter().map(|im| codec.encode(im)).collect::<Result<_, _>>()?;
                Ok(VolumeViews { source, poses, latents })
            })
            .collect::<Result<Vec<_>, TrainError>>()?;
        Ok(Self {
            codec,
            resolution,
            volumes,
        })
    }

    pub fn volume_count(&self) -> usize {
        self.volumes.len()
    }

    pub fn view_count(&self) -> usize {
        self.volumes.iter().map(|v| v.latents.len()).sum()
    }

    /// Draws one training example. Random draws happen in a fixed order:
    /// volume, target view, timestep, condition dropout, noise.
    fn sample(
        &self,
        cfg: &ModelConfig,
        schedule: &NoiseSchedule,
        dropout: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<TrainingSample, TrainError> {
        let vol = &self.volumes[rng.random_range(0..self.volumes.len())];
        let target = rng.random_range(0..vol.latents.len());
        let t = rng.random_range(1..=schedule.len());
        let drop = rng.random::<f64>() < dropout;
        let z0 = &vol.latents[target];
        let [c, h, w] = z0.shape();
        let eps = LatentTensor::randn(c, h, w, rng);
        let z_t = q_sample(z0, t, &eps, schedule)?;
        let view = relative_view_encoding(&vol.poses[vol.source], &vol.poses[target]);
        let mut cond = view_condition(cfg, vol.latents[vol.source].clone(), &view)?;
        if drop {
            cond = cond.as_null();
        }
        Ok(TrainingSample { z_t, cond, t, eps })
    }

    fn batch(
        &self,
        cfg: &ModelConfig,
        schedule: &NoiseSchedule,
        size: usize,
        dropout: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<TrainingSample>, TrainError> {
        (0..size).map(|_| self.sample(cfg, schedule, dropout, rng)).collect()
    }
}

/// Copies every parameter of `ckpt` and resamples `pos_embed` from the
/// checkpoint grid to `grid_hr`.
pub fn weak_to_strong_init(ckpt: &Checkpoint, grid_hr: usize) -> Result<Checkpoint, TrainError> {
    let lr = &ckpt.config;
    if grid_hr < lr.grid {
        return Err(TrainError::Config(format!(
            "target grid {grid_hr} is smaller than source grid {}",
            lr.grid
        )));
    }
    let hr = lr.with_grid(grid_hr);
    hr.validate()?;
    ckpt.params.check(lr)?;
    let mut params = ckpt.params.clone();
    let mut pe = interpolate_pos_embed(ckpt.params.get("pos_embed"), lr.grid, grid_hr, lr.model_dim)?;
    pe.iter_mut().for_each(|v| *v = *v as f32 as f64);
    params.insert(
        "pos_embed",
        Tensor {
            shape: vec![hr.tokens(), hr.model_dim],
            data: pe,
        },
    );
    params.check(&hr)?;
    Ok(Checkpoint {
        config: hr,
        params,
        metadata: ckpt.metadata.clone(),
    })
}

/// Replaces `pos_embed` with the fixed sine-cosine table of the config grid.
pub fn with_fresh_pos_embed(ckpt: &Checkpoint) -> Result<Checkpoint, TrainError> {
    let cfg = &ckpt.config;
    let mut out = ckpt.clone();
    let mut pe = sincos_pos_embed(cfg.grid, cfg.model_dim)?;
    pe.iter_mut().for_each(|v| *v = *v as f32 as f64);
    out.params.get_mut("pos_embed").copy_from_slice(&pe);
    Ok(out)
}

fn stage_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Runs one stage. `init` must be `None` for a fresh stage and the
/// previous stage's checkpoint otherwise.
pub fn train_stage(
    stage: &StageConfig,
    spec: &ModelSpec,
    manifest: &DatasetManifest,
    init: Option<&Checkpoint>,
) -> Result<StageResult, TrainError> {
    stage.validate(spec)?;
    let cfg = spec.model_config(stage.grid);
    let params = match (stage.init, init) {
        (StageInit::Fresh, None) => ModelParams::init(&cfg, &mut stage_rng(stage.seed, 1))?,
        (StageInit::Fresh, Some(_)) => {
            return Err(TrainError::Config("a fresh stage does not take an initial checkpoint".into()))
        }
        (StageInit::FromCheckpointWithPosInterp, None) => {
            return Err(TrainError::Config("stage needs an initial checkpoint".into()))
        }
        (StageInit::FromCheckpointWithPosInterp, Some(ck)) => {
            if ck.config.with_grid(cfg.grid) != cfg {
                return Err(TrainError::Config(format!(
                    "checkpoint architecture {:?} does not match stage {:?}",
                    ck.config, cfg
                )));
            }
            weak_to_strong_init(ck, cfg.grid)?.params
        }
    };
    let set = TrainingSet::load(manifest, stage.resolution, spec.codec_factor)?;
    let result = train_on_set(stage, &cfg, params, &set)?;
    let mut checkpoint = result.0;
    checkpoint.metadata.insert(META_RADIUS.into(), format!("{:?}", manifest.radius_m));
    Ok(StageResult {
        checkpoint,
        loss_trace: result.1,
        step_losses: result.2,
    })
}

/// Cosine decay from `base` at step 1 to zero after the last step.
pub fn lr_at(base: f64, step: usize, total: usize) -> f64 {
    let frac = (step - 1) as f64 / total as f64;
    base * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
}

type TrainOutput = (Checkpoint, Vec<LossPoint>, Vec<f64>);

fn train_on_set(
    stage: &StageConfig,
    cfg: &ModelConfig,
    mut params: ModelParams,
    set: &TrainingSet,
) -> Result<TrainOutput, TrainError> {
    let schedule = NoiseSchedule::default_latent();
    let mut rng = stage_rng(stage.seed, 0);
    let mut opt = AdamW::new(&params, stage.learning_rate);
    let mut step_losses = Vec::with_capacity(stage.steps);
    let mut trace = Vec::new();
    for step in 1..=stage.steps {
        let batch = set.batch(cfg, &schedule, stage.batch_size, stage.cond_dropout_prob, &mut rng)?;
        let (loss, grads) = loss_and_grads(cfg, &params, &batch)?;
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { step, loss });
        }
        opt.learning_rate = lr_at(stage.learning_rate, step, stage.steps);
        opt.step(&mut params, &grads);
        step_losses.push(loss);
        if step % LOSS_TRACE_INTERVAL == 0 || step == stage.steps {
            let window = &step_losses[(step - 1) / LOSS_TRACE_INTERVAL * LOSS_TRACE_INTERVAL..];
            trace.push(LossPoint {
                step,
                loss: window.iter().sum::<f64>() / window.len() as f64,
            });
        }
    }
    let mut checkpoint = Checkpoint::new(cfg.clone(), params);
    set.codec.to_metadata(&mut checkpoint.metadata);
    checkpoint.metadata.insert(META_RESOLUTION.into(), stage.resolution.to_string());
    checkpoint.metadata.insert(META_STEPS.into(), stage.steps.to_string());
    checkpoint.metadata.insert(META_SEED.into(), stage.seed.to_string());
    Ok((checkpoint, trace, step_losses))
}

/// Mean loss of `params` over `n_batches` batches drawn from `seed`
/// without condition dropout. Equal seeds give identical batches, so two
/// parameter sets can be compared on exactly the same examples.
pub fn mean_loss(
    cfg: &ModelConfig,
    params: &ModelParams,
    set: &TrainingSet,
    n_batches: usize,
    batch_size: usize,
    seed: u64,
) -> Result<f64, TrainError> {
    if n_batches == 0 || batch_size == 0 {
        return Err(TrainError::Config("mean_loss needs at least one non-empty batch".into()));
    }
    let schedule = NoiseSchedule::default_latent();
    let mut rng = stage_rng(seed, 2);
    let mut total = 0.0;
    for _ in 0..n_batches {
        let batch = set.batch(cfg, &schedule, batch_size, 0.0, &mut rng)?;
        total += loss_and_grads(cfg, params, &batch)?.0;
    }
    Ok(total / n_batches as f64)
}

/// Dataset radius recorded by [`train_stage`].
pub fn checkpoint_radius(ckpt: &Checkpoint) -> Result<f64, TrainError> {
    let raw = ckpt
        .metadata
        .get(META_RADIUS)
        .ok_or_else(|| TrainError::Config(format!("checkpoint lacks {META_RADIUS}")))?;
    raw.parse()
        .map_err(|_| TrainError::Config(format!("unparsable {META_RADIUS} = {raw:?}")))
}

pub fn write_loss_csv(path: impl AsRef<Path>, trace: &[LossPoint]) -> Result<(), TrainError> {
    let path = path.as_ref();
    let mut out = String::from("step,loss\n");
    for p in trace {
        out.push_str(&format!("{},{:?}\n", p.step, p.loss));
    }
    let mut f = fs::File::create(path).map_err(|e| io_error(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| io_error(path, e))
}

pub fn read_loss_csv(path: impl AsRef<Path>) -> Result<Vec<LossPoint>, TrainError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some("step,loss") {
        return Err(io_error(path, "missing step,loss header"));
    }
    lines
        .map(|line| {
            let (s, l) = line.split_once(',').ok_or_else(|| io_error(path, format!("bad row {line:?}")))?;
            Ok(LossPoint {
                step: s.parse().map_err(|_| io_error(path, format!("bad step {s:?}")))?,
                loss: l.parse().map_err(|_| io_error(path, format!("bad loss {l:?}")))?,
            })
        })
        .collect()
}
