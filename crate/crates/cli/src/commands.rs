use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use fracdet_core::augment::{expand_dataset, AugmentPlan};
use fracdet_core::config::PipelineConfig;
use fracdet_core::dataset::{load_gray, resize_sample, save_sample, split_dataset, DatasetManifest, Sample, Split};
use fracdet_core::eval::{emit_report, evaluate, ReportFormat};
use fracdet_core::geometry::clip_box;
use fracdet_core::nn::{detect, train_with_progress, Checkpoint, EpochRecord};
use fracdet_core::pipeline::{synth_originals, test_results, StageSeeds};

use crate::detections::{DetectionsFile, ImageDetections, ImageFailure};
use crate::exit::{DataError, UsageError};
use crate::{Cli, Command, Common, FormatArg, SplitArg};

pub fn name(c: &Command) -> &'static str {
    match c {
        Command::Synth => "synth",
        Command::Augment { .. } => "augment",
        Command::Train { .. } => "train",
        Command::Detect { .. } => "detect",
        Command::Eval { .. } => "eval",
        Command::Render { .. } => "render",
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.common)?;
    let common = cli.common;
    match cli.command {
        Command::Synth => synth(&cfg, &out_dir(&common)?),
        Command::Augment { manifest, plan } => {
            augment(&cfg, &manifest_path(manifest, &cfg)?, plan.or(cfg.augment.plan.clone()), &out_dir(&common)?)
        }
        Command::Train { manifest } => train(&cfg, &manifest_path(manifest, &cfg)?, &out_dir(&common)?),
        Command::Detect { checkpoint, score_threshold, images } => {
            detect_images(&cfg, &checkpoint, score_threshold, &images, common.out.as_deref())
        }
        Command::Eval { checkpoint, manifest, split, format } => {
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Test => Split::Test,
            };
            eval(&cfg, &checkpoint, &manifest_path(manifest, &cfg)?, split, format, &out_dir(&common)?)
        }
        Command::Render { image, detections, id } => {
            let out = common.out.ok_or_else(|| UsageError("--out <PATH> is required".into()))?;
            render(&cfg, &image, &detections, id, &out)
        }
    }
}

fn load_config(common: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    for s in &common.set {
        cfg.apply_override(s)?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn out_dir(common: &Common) -> Result<PathBuf> {
    let dir = common.out.clone().ok_or_else(|| UsageError("--out <DIR> is required".into()))?;
    std::fs::create_dir_all(&dir).with_context(|| format!("creating output directory {}", dir.display()))?;
    Ok(dir)
}

fn manifest_path(flag: Option<PathBuf>, cfg: &PipelineConfig) -> Result<PathBuf> {
    flag.or_else(|| cfg.data.manifest.clone())
        .ok_or_else(|| UsageError("no manifest: pass --manifest or set data.manifest".into()).into())
}

fn base_of(path: &Path) -> &Path {
    path.parent().unwrap_or(Path::new("."))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn maybe_resize(samples: Vec<Sample>, cfg: &PipelineConfig) -> Vec<Sample> {
    match cfg.data.image_size {
        Some(side) => samples.iter().map(|s| resize_sample(s, side)).collect(),
        None => samples,
    }
}

fn synth(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    let seeds = StageSeeds::derive(cfg.seed);
    let mut records = Vec::new();
    for s in synth_originals(cfg) {
        records.push(save_sample(&s, out).context("dataset")?);
    }
    let split = split_dataset(&DatasetManifest::new(cfg.seed, records), cfg.data.train_fraction, seeds.split)?;
    for w in &split.warnings {
        eprintln!("warning: {w}");
    }
    let path = out.join("manifest.json");
    split.manifest.save(&path)?;
    for (k, n) in split.manifest.counts() {
        eprintln!("{k}: {n}");
    }
    eprintln!("wrote {}", path.display());
    Ok(())
}

/// Paths in a manifest written to `to` that pointed at files under `from`.
fn rebase(rel: &str, from: &Path, to: &Path) -> Result<String> {
    let same = from.canonicalize().ok().zip(to.canonicalize().ok()).is_some_and(|(a, b)| a == b);
    if same || Path::new(rel).is_absolute() {
        return Ok(rel.to_string());
    }
    let abs = from.join(rel);
    let abs = abs.canonicalize().with_context(|| format!("resolving {}", abs.display()))?;
    Ok(abs.to_string_lossy().into_owned())
}

fn plan_for(cfg: &PipelineConfig, plan: Option<&Path>, originals: &[Sample]) -> Result<AugmentPlan> {
    match plan {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading plan {}", p.display()))?;
            Ok(AugmentPlan::from_json(&text).with_context(|| format!("augment: {}", p.display()))?)
        }
        None => {
            let ids: Vec<String> = originals.iter().map(|s| s.id.clone()).collect();
            Ok(AugmentPlan::random(
                &ids,
                cfg.augment.multiplier,
                &cfg.augment.ranges,
                StageSeeds::derive(cfg.seed).augment,
            ))
        }
    }
}

fn augment(cfg: &PipelineConfig, manifest: &Path, plan: Option<PathBuf>, out: &Path) -> Result<()> {
    let m = DatasetManifest::load(manifest)?;
    let base = base_of(manifest);
    if m.samples.iter().any(|r| r.origin.is_some()) {
        return Err(DataError(format!("{} already contains augmented samples", manifest.display())).into());
    }
    let train_records: Vec<_> = m.records_in(Split::Train).cloned().collect();
    if train_records.is_empty() {
        return Err(DataError(format!("{} has no train split", manifest.display())).into());
    }
    let originals =
        train_records.iter().map(|r| fracdet_core::dataset::load_sample(r, base)).collect::<Result<Vec<_>, _>>()?;
    let plan = plan_for(cfg, plan.as_deref(), &originals)?;
    let expanded = expand_dataset(&originals, &plan)?;

    let mut out_m = m.clone();
    for r in out_m.samples.iter_mut() {
        r.image = rebase(&r.image, base, out)?;
        if let Some(a) = r.annotation.as_mut() {
            *a = rebase(a, base, out)?;
        }
    }
    for a in &expanded {
        let mut rec = save_sample(&a.sample, out)?;
        rec.split = Some(Split::Train);
        rec.transforms = a.transforms.clone();
        out_m.samples.push(rec);
    }
    write(&out.join("plan.json"), &(plan.to_json() + "\n"))?;
    let path = out.join("manifest.json");
    out_m.save(&path)?;
    eprintln!("{} originals -> {} training samples; wrote {}", originals.len(), expanded.len(), path.display());
    Ok(())
}

fn loss_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,images,total,rpn_total,rpn_cls,rpn_reg,det_total,det_cls,det_reg\n");
    for r in history {
        let (p, d) = (&r.loss.rpn, &r.loss.det);
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.epoch, r.images, r.loss.total, p.total, p.cls_term, p.reg_term, d.total, d.cls_term, d.reg_term
        );
    }
    s
}

fn train(cfg: &PipelineConfig, manifest: &Path, out: &Path) -> Result<()> {
    let m = DatasetManifest::load(manifest)?;
    let base = base_of(manifest);
    let mut samples = m.load_samples(base, Some(Split::Train))?;
    if samples.is_empty() {
        return Err(DataError(format!("{} has no train split", manifest.display())).into());
    }
    // an expansion holds an identity copy of each original
    if samples.iter().any(|s| s.origin.is_some()) {
        samples.retain(|s| s.origin.is_some());
    } else if cfg.augment.multiplier > 1 || cfg.augment.plan.is_some() {
        let plan = plan_for(cfg, cfg.augment.plan.as_deref(), &samples)?;
        samples = expand_dataset(&samples, &plan)?.into_iter().map(|a| a.sample).collect();
    }
    let samples = maybe_resize(samples, cfg);
    eprintln!("training on {} samples for {} epochs", samples.len(), cfg.train.epochs);
    let started = std::time::Instant::now();
    let outcome =
        train_with_progress::<f32>(&samples, &cfg.detector, &cfg.train, StageSeeds::derive(cfg.seed).train, |r| {
            eprintln!("epoch {:>3}  loss {:.5}  ({:.1}s)", r.epoch, r.loss.total, started.elapsed().as_secs_f64())
        })
        .context("train")?;
    Checkpoint::new(cfg.detector.clone(), outcome.params)?.save(&out.join("model.fdck"))?;
    write(&out.join("loss.csv"), &loss_csv(&outcome.history))?;
    write(&out.join("config.toml"), &cfg.to_toml())?;
    eprintln!("wrote {}", out.join("model.fdck").display());
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint<f32>> {
    Ok(Checkpoint::<f32>::load(path)?)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn detect_images(
    cfg: &PipelineConfig,
    checkpoint: &Path,
    score_threshold: Option<f64>,
    images: &[PathBuf],
    out: Option<&Path>,
) -> Result<()> {
    let threshold = score_threshold.unwrap_or(cfg.eval.score_threshold);
    if !(0.0..=1.0).contains(&threshold) {
        return Err(UsageError(format!("--score-threshold {threshold} outside [0, 1]")).into());
    }
    let ck = load_checkpoint(checkpoint)?;
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for path in images {
        let image = match load_gray(path) {
            Ok(img) => img,
            Err(e) => {
                eprintln!("{e}");
                failed.push(ImageFailure { image: path.display().to_string(), error: e.to_string() });
                continue;
            }
        };
        let (w, h) = (image.width, image.height);
        let sample = Sample {
            id: stem(path),
            image,
            annotations: Vec::new(),
            kind: fracdet_core::SampleKind::PureNegative,
            origin: None,
        };
        let (input, back) = match cfg.data.image_size {
            Some(side) => (resize_sample(&sample, side), w.max(h) as f64 / side as f64),
            None => (sample, 1.0),
        };
        let mut detections = detect(&ck.params, &ck.detector, &input.image, threshold)?.detections;
        for d in &mut detections {
            d.bbox = clip_box(&d.bbox.scale(back, back), w as f64, h as f64);
        }
        ok.push(ImageDetections { id: input.id, image: path.display().to_string(), width: w, height: h, detections });
    }
    let n_failed = failed.len();
    let file = DetectionsFile::new(ok, failed);
    match out {
        Some(p) => write(p, &file.to_json())?,
        None => print!("{}", file.to_json()),
    }
    if n_failed > 0 {
        return Err(DataError(format!("{n_failed} of {} images could not be read", images.len())).into());
    }
    Ok(())
}

fn eval(
    cfg: &PipelineConfig,
    checkpoint: &Path,
    manifest: &Path,
    split: Split,
    format: FormatArg,
    out: &Path,
) -> Result<()> {
    let ck = load_checkpoint(checkpoint)?;
    let m = DatasetManifest::load(manifest)?;
    let base = base_of(manifest);
    let records: Vec<_> = m.records_in(split).filter(|r| r.origin.is_none()).cloned().collect();
    if records.is_empty() {
        return Err(DataError(format!("{}: split has no original images", manifest.display())).into());
    }
    let samples = records.iter().map(|r| fracdet_core::dataset::load_sample(r, base)).collect::<Result<Vec<_>, _>>()?;
    let samples = maybe_resize(samples, cfg);
    let mut run_cfg = cfg.clone();
    run_cfg.detector = ck.detector.clone();
    let results = test_results(&ck.params, &run_cfg, &samples)?;
    let report = evaluate(&results, &cfg.eval);

    if matches!(format, FormatArg::Json | FormatArg::Both) {
        emit_report(&report, &out.join("report.json"), ReportFormat::Json)?;
    }
    if matches!(format, FormatArg::Csv | FormatArg::Both) {
        emit_report(&report, &out.join("report.csv"), ReportFormat::Csv)?;
    }
    let images = records
        .iter()
        .zip(&samples)
        .zip(&results)
        .map(|((rec, s), r)| ImageDetections {
            id: r.id.clone(),
            image: base.join(&rec.image).display().to_string(),
            width: s.width(),
            height: s.height(),
            detections: r.detections.clone(),
        })
        .collect();
    write(&out.join("detections.json"), &DetectionsFile::new(images, Vec::new()).to_json())?;
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
    eprintln!(
        "images {}  mAP {}  two-label mAP {}  accuracy {:.4}",
        report.images,
        fmt(report.map),
        fmt(report.map_two_label),
        report.accuracy.accuracy
    );
    Ok(())
}

fn render(cfg: &PipelineConfig, image: &Path, detections: &Path, id: Option<String>, out: &Path) -> Result<()> {
    let img = load_gray(image)?;
    let file = DetectionsFile::load(detections)?;
    let id = id.unwrap_or_else(|| stem(image));
    let entry = file
        .images
        .iter()
        .find(|e| e.id == id)
        .ok_or_else(|| DataError(format!("{} has no entry for image id {id:?}", detections.display())))?;
    if (entry.width, entry.height) != (img.width, img.height) {
        return Err(DataError(format!(
            "{id}: detections are for a {}x{} image, {} is {}x{}",
            entry.width,
            entry.height,
            image.display(),
            img.width,
            img.height
        ))
        .into());
    }
    let rgb = crate::render::render(&img, &entry.detections, &cfg.render);
    rgb.save_with_format(out, image::ImageFormat::Png).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}
