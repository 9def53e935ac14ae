//! Subcommand implementations.

use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use xrayview::drr::{default_step_mm, read_png16, render_drr, write_png16, DetectorSpec, NormalizeMode};
use xrayview::metrics::evaluate_set;
use xrayview::nn::Checkpoint;
use xrayview::train::{
    build_dataset, checkpoint_radius, synthesize_views, train_stage, write_loss_csv, DatasetManifest,
    TrainConfigFile,
};
use xrayview::viewgeom::{
    fibonacci_hemisphere, read_view_manifest, simple_arc_views, view_file_name, write_view_manifest, ViewPose,
    ViewRecord, ViewSet,
};
use xrayview::voxel::{load_volume, make_phantom, save_volume, ValueKind, DEFAULT_MU_WATER_PER_MM};

use crate::args::{
    ArcArgs, Command, DatasetArgs, EvalArgs, FibonacciArgs, PhantomArgs, RenderArgs, SampleArgs, TrainArgs,
    ViewsCommand,
};
use crate::meta::{parent_dir, RunMeta};

pub fn run(command: Command, argv: &[String]) -> Result<()> {
    match command {
        Command::Phantom(a) => phantom(a, argv),
        Command::Views(ViewsCommand::Fibonacci(a)) => views_fibonacci(a, argv),
        Command::Views(ViewsCommand::Arc(a)) => views_arc(a, argv),
        Command::Render(a) => render(a, argv),
        Command::Dataset(a) => dataset(a, argv),
        Command::Train(a) => train(a, argv),
        Command::Sample(a) => sample(a, argv),
        Command::Eval(a) => eval(a, argv),
    }
}

fn list<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn phantom(a: PhantomArgs, argv: &[String]) -> Result<()> {
    let mut meta = RunMeta::new("phantom", argv);
    meta.set("seed", a.seed).set("out", a.out.display());
    meta.write(&a.out)?;
    let volume = make_phantom(a.seed, xrayview::train::PHANTOM_DIMS)?;
    let raw = save_volume(&volume, a.out.join("phantom.vol.json"))?;
    println!("{}", raw.display());
    Ok(())
}

fn write_records(records: &[ViewRecord], out: &Path) -> Result<()> {
    write_view_manifest(out, records).with_context(|| format!("writing {}", out.display()))
}

fn views_fibonacci(a: FibonacciArgs, argv: &[String]) -> Result<()> {
    let mut meta = RunMeta::new("views fibonacci", argv);
    meta.set("n", a.n).set("radius", a.radius).set("out", a.out.display());
    meta.write(parent_dir(&a.out))?;
    let records: Vec<ViewRecord> = fibonacci_hemisphere(a.n, a.radius)?
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut r = ViewRecord::new(i, p, i == 0);
            r.set = Some(ViewSet::Hemisphere);
            r
        })
        .collect();
    write_records(&records, &a.out)?;
    println!("{} views", records.len());
    Ok(())
}

fn views_arc(a: ArcArgs, argv: &[String]) -> Result<()> {
    let mut meta = RunMeta::new("views arc", argv);
    meta.set("step_deg", a.step_deg).set("radius", a.radius).set("out", a.out.display());
    meta.write(parent_dir(&a.out))?;
    let records: Vec<ViewRecord> = simple_arc_views(a.step_deg, a.radius)?
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut r = ViewRecord::new(i, p, false);
            r.set = Some(ViewSet::Simple);
            r
        })
        .collect();
    write_records(&records, &a.out)?;
    println!("{} views", records.len());
    Ok(())
}

fn render(a: RenderArgs, argv: &[String]) -> Result<()> {
    let mut meta = RunMeta::new("render", argv);
    meta.set("volume", a.volume.display())
        .set("views", a.views.display())
        .set("resolutions", list(&a.resolutions))
        .set("out", a.out.display());
    meta.write(&a.out)?;
    ensure!(!a.resolutions.is_empty(), "no resolutions given");
    let mut volume = load_volume(&a.volume)?;
    if volume.value_kind() == ValueKind::Hounsfield {
        volume = volume.hu_to_mu(DEFAULT_MU_WATER_PER_MM)?;
    }
    let step = default_step_mm(&volume);
    let mut records = read_view_manifest(&a.views).with_context(|| format!("reading {}", a.views.display()))?;
    for rec in &mut records {
        let pose = rec.pose()?;
        let name = view_file_name(rec.azimuth_rad, rec.elevation_rad);
        for &res in &a.resolutions {
            let img = render_drr(&volume, &pose, &DetectorSpec::square(res, pose.radius_m()), step)?;
            let rel = format!("{res}/{name}");
            write_png16(&img.normalize(NormalizeMode::MinmaxLineIntegral), a.out.join(&rel))?;
            rec.images.insert(res.to_string(), rel);
        }
    }
    write_records(&records, &a.out.join("views.manifest"))?;
    println!("{} images", records.len() * a.resolutions.len());
    Ok(())
}

fn dataset(a: DatasetArgs, argv: &[String]) -> Result<()> {
    let mut meta = RunMeta::new("dataset", argv);
    meta.set("n", a.n)
        .set("views", a.views)
        .set("resolutions", list(&a.resolutions))
        .set("radius", a.radius)
        .set("seed", a.seed)
        .set("out", a.out.display());
    meta.write(&a.out)?;
    let m = build_dataset(a.n, a.views, &a.resolutions, a.radius, a.seed, &a.out)?;
    println!("{} volumes, {} view records", m.volume_ids.len(), m.records.len());
    Ok(())
}

fn train(a: TrainArgs, argv: &[String]) -> Result<()> {
    let mut config = match &a.config {
        Some(path) => TrainConfigFile::load(path)?,
        None => TrainConfigFile::default_ladder(0),
    };
    if let Some(seed) = a.seed {
        config.stages.iter_mut().for_each(|s| s.seed = seed);
    }
    let stages: Vec<usize> = match a.stage {
        Some(k) if k == 0 || k > config.stages.len() => {
            bail!("--stage {k} outside 1..={}", config.stages.len())
        }
        Some(k) => vec![k],
        None => (1..=config.stages.len()).collect(),
    };
    let mut meta = RunMeta::new("train", argv);
    meta.set("config", a.config.as_ref().map_or("<default ladder>".into(), |p| p.display().to_string()))
        .set("views", a.views.display())
        .set("stage", list(&stages))
        .set("checkpoint", a.checkpoint.as_ref().map_or(String::new(), |p| p.display().to_string()))
        .set("out", a.out.display());
    for (k, s) in config.stages.iter().enumerate() {
        meta.set(&format!("stage{}", k + 1), format!("{s:?}"));
    }
    meta.set("model", format!("{:?}", config.model));
    meta.write(&a.out)?;

    let manifest = DatasetManifest::load(&a.views)?;
    let mut previous = match &a.checkpoint {
        Some(p) => Some(Checkpoint::load(p)?),
        None => None,
    };
    for k in stages {
        let stage = &config.stages[k - 1];
        let result = train_stage(stage, &config.model, &manifest, previous.as_ref())?;
        for p in &result.loss_trace {
            println!("stage {k} step {} loss {}", p.step, p.loss);
        }
        let ck_path = a.out.join(format!("stage{k}.ckpt"));
        result.checkpoint.save(&ck_path)?;
        write_loss_csv(a.out.join(format!("stage{k}_loss.csv")), &result.loss_trace)?;
        eprintln!("wrote {}", ck_path.display());
        previous = Some(result.checkpoint);
    }
    Ok(())
}

fn parse_targets(specs: &[String], radius_m: f64) -> Result<Vec<ViewPose>> {
    let mut poses = Vec::new();
    for item in specs.iter().flat_map(|s| s.split(';')).filter(|s| !s.trim().is_empty()) {
        let Some((az, el)) = item.split_once(',') else {
            bail!("target {item:?} is not azimuth,elevation");
        };
        let az: f64 = az.trim().parse().with_context(|| format!("azimuth in {item:?}"))?;
        let el: f64 = el.trim().parse().with_context(|| format!("elevation in {item:?}"))?;
        poses.push(ViewPose::from_angles(az.to_radians(), el.to_radians(), radius_m)?);
    }
    Ok(poses)
}

fn sample(a: SampleArgs, argv: &[String]) -> Result<()> {
    let mut meta = RunMeta::new("sample", argv);
    meta.set("checkpoint", a.checkpoint.display())
        .set("source", a.source.display())
        .set("target", a.target.join(";"))
        .set("views", a.views.as_ref().map_or(String::new(), |p| p.display().to_string()))
        .set("steps", a.steps)
        .set("cfg", a.cfg)
        .set("seed", a.seed)
        .set("out", a.out.display());
    meta.write(&a.out)?;
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let radius = checkpoint_radius(&ckpt)?;
    let mut targets = parse_targets(&a.target, radius)?;
    if let Some(path) = &a.views {
        let records = read_view_manifest(path).with_context(|| format!("reading {}", path.display()))?;
        for r in records {
            targets.push(r.pose()?);
        }
    }
    ensure!(!targets.is_empty(), "no target views given (use --target or --views)");
    let source = read_png16(&a.source)?;
    let images = synthesize_views(&ckpt, &source, &targets, a.steps, a.cfg, a.seed)?;
    for (pose, img) in targets.iter().zip(&images) {
        write_png16(img, a.out.join(view_file_name(pose.azimuth_rad(), pose.elevation_rad())))?;
    }
    println!("{} images", images.len());
    Ok(())
}

fn eval(a: EvalArgs, argv: &[String]) -> Result<()> {
    let mut meta = RunMeta::new("eval", argv);
    meta.set("pred", a.pred.display())
        .set("gt", a.gt.display())
        .set("views", a.views.display())
        .set("metrics", a.metrics.display());
    meta.write(parent_dir(&a.metrics))?;
    let records = read_view_manifest(&a.views).with_context(|| format!("reading {}", a.views.display()))?;
    let set = records.iter().find_map(|r| r.set).unwrap_or(ViewSet::Hemisphere);
    let report = evaluate_set(&a.pred, &a.gt, &records, set)?;
    report.write_csv(&a.metrics)?;
    println!("{}", report.summary_line());
    Ok(())
}

