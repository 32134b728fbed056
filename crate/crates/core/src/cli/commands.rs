use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    AugmentArgs, BlendArgs, Command, Context, CopyPasteArgs, CostArgs, CostmapArgs, CrfArgs, EvalArgs, Format,
    GradCheckArgs, LossOptions, McAggregateArgs, OverlayArgs, Outcome, PlanArgs, RankArgs, ServeArgs, SoftmaxArgs,
    TtaArgs, UncertaintyArgs,
};
use crate::augmentation::{
    copy_paste, hflip, normalize, random_resized_crop, CopyPasteConfig, CropWindow, PastedInstance, Sample,
    IMAGENET_MEAN, IMAGENET_STD,
};
use crate::costmap::{CostmapSidecar, TierCosts};
use crate::loss::{combined_loss_grad_f64, finite_difference_grad_f64, max_relative_error, LossConfig, Shape};
use crate::metrics::{accumulate_sharded, ConfusionAccumulator, ExclusionSet};
use crate::ops::{self, AppError, CostmapParams, PlanRequest, UncertaintyParams};
use crate::postprocess::{
    rank_difficulty, softmax, tta_ensemble, uncertainty_with, BandThresholds, CrfParams,
    DifficultyBlend, McAccumulator, TtaView, UncertaintyReport,
};
use crate::schema::ClassSchema;
use crate::tensor_io::{
    decode_label_png, decode_rgb_image, encode_heatmap, encode_mask, encode_rgb_image, read_tensor, render_overlay,
    write_tensor, MaskEncoding, TensorKind,
};

pub(super) fn dispatch(ctx: &Context, command: &Command) -> Result<Outcome, AppError> {
    match command {
        Command::Eval(a) => eval(ctx, a),
        Command::Confusions(a) => confusions(ctx, a),
        Command::Loss(a) => loss(ctx, a),
        Command::GradCheck(a) => grad_check(ctx, a),
        Command::Augment(a) => augment(ctx, a),
        Command::CopyPaste(a) => copy_paste_cmd(ctx, a),
        Command::Softmax(a) => softmax_cmd(ctx, a),
        Command::Tta(a) => tta(ctx, a),
        Command::Crf(a) => crf(ctx, a),
        Command::Uncertainty(a) => uncertainty_cmd(ctx, a),
        Command::McAggregate(a) => mc_aggregate_cmd(ctx, a),
        Command::Rank(a) => rank(ctx, a),
        Command::Costmap(a) => costmap(ctx, a),
        Command::Plan(a) => plan(ctx, a),
        Command::Overlay(a) => overlay(ctx, a),
        Command::Serve(_) => unreachable!("serve runs outside dispatch"),
    }
}

fn json_only(ctx: &Context, command: &str) -> Result<(), AppError> {
    match ctx.format {
        Format::Json => Ok(()),
        Format::Csv => Err(AppError::validation(
            "UnsupportedFormat",
            format!("`{command}` has no CSV form"),
        )),
    }
}

/// Sorted `*.png` / `*.tst1` / `*.json` files of a directory.
fn list_files(dir: &Path, extension: &str) -> Result<Vec<PathBuf>, AppError> {
    let entries = std::fs::read_dir(dir).map_err(|e| AppError::io(dir, &e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| AppError::io(dir, &e))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e.eq_ignore_ascii_case(extension)) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Files of `primary` paired by name with files in `secondary`.
fn paired_files(primary: &Path, secondary: &Path) -> Result<Vec<(PathBuf, PathBuf)>, AppError> {
    let files = list_files(primary, "png")?;
    if files.is_empty() {
        return Err(AppError::validation(
            "EmptyInput",
            format!("no PNG files in {}", primary.display()),
        ));
    }
    files
        .into_iter()
        .map(|a| {
            let name = a.file_name().expect("listed files have names");
            let b = secondary.join(name);
            if b.is_file() {
                Ok((a, b))
            } else {
                Err(AppError::validation(
                    "MissingPair",
                    format!("{} has no counterpart {}", a.display(), b.display()),
                ))
            }
        })
        .collect()
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn exclusions(schema: &ClassSchema, raw: &[String]) -> Result<Vec<ExclusionSet>, AppError> {
    if raw.is_empty() {
        return Ok(ExclusionSet::defaults(schema));
    }
    raw.iter()
        .map(|spec| {
            let names: Vec<&str> = spec.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
            ExclusionSet::from_names(schema, &names).map_err(AppError::from)
        })
        .collect()
}

fn accumulate_dirs(ctx: &Context, args: &EvalArgs) -> Result<ConfusionAccumulator, AppError> {
    let pairs = paired_files(&args.gt_dir, &args.pred_dir)?;
    let classes = ctx.schema.len();
    if args.workers <= 1 {
        let mut acc = ConfusionAccumulator::new(classes);
        for (gt, pred) in &pairs {
            ops::accumulate_pair(&mut acc, &ctx.read(gt)?, &ctx.read(pred)?, &ctx.schema)?;
        }
        return Ok(acc);
    }
    let mut maps = Vec::with_capacity(pairs.len());
    for (gt, pred) in &pairs {
        maps.push((
            decode_label_png(&ctx.read(gt)?, &ctx.schema)?,
            decode_label_png(&ctx.read(pred)?, &ctx.schema)?,
        ));
    }
    Ok(accumulate_sharded(classes, &maps, args.workers)?)
}

fn eval(ctx: &Context, args: &EvalArgs) -> Result<Outcome, AppError> {
    let acc = accumulate_dirs(ctx, args)?;
    let report = ops::metrics_report(&acc, &ctx.schema, &exclusions(&ctx.schema, &args.exclude)?, args.top_k)?;
    Ok(match ctx.format {
        Format::Json => Outcome::json(&report),
        Format::Csv => Outcome {
            stdout: report.to_csv(),
            files: Vec::new(),
            failure: None,
        },
    })
}

#[derive(Serialize)]
struct ConfusionDocument {
    classes: Vec<String>,
    pixels_seen: u64,
    /// Rows are ground truth, columns prediction.
    counts: Vec<Vec<u64>>,
    top_confusions: Vec<crate::metrics::ConfusionEntry>,
}

fn confusions(ctx: &Context, args: &EvalArgs) -> Result<Outcome, AppError> {
    let acc = accumulate_dirs(ctx, args)?;
    let report = ops::metrics_report(&acc, &ctx.schema, &[], args.top_k)?;
    match ctx.format {
        Format::Json => {
            let c = acc.classes();
            Ok(Outcome::json(&ConfusionDocument {
                classes: report.classes,
                pixels_seen: acc.pixels_seen(),
                counts: acc.counts().chunks(c).map(<[u64]>::to_vec).collect(),
                top_confusions: report.top_confusions,
            }))
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let io = |e: csv::Error| AppError::validation("Csv", e.to_string());
            w.write_record(["class_a", "class_b", "pixels"]).map_err(io)?;
            for e in &report.top_confusions {
                w.write_record([e.class_a.as_str(), e.class_b.as_str(), &e.pixels.to_string()])
                    .map_err(io)?;
            }
            let bytes = w.into_inner().map_err(|e| AppError::validation("Csv", e.to_string()))?;
            Ok(Outcome {
                stdout: String::from_utf8(bytes).expect("csv output is UTF-8"),
                files: Vec::new(),
                failure: None,
            })
        }
    }
}

fn loss_config(o: &LossOptions) -> LossConfig {
    LossConfig {
        lambda_ce: o.lambda_ce,
        lambda_dice: o.lambda_dice,
        epsilon: o.epsilon,
        ce_normalisation: o.ce_normalisation.into(),
        dice_class_mode: o.dice_classes.into(),
    }
}

fn loss(ctx: &Context, args: &super::LossArgs) -> Result<Outcome, AppError> {
    json_only(ctx, "loss")?;
    let logits = ctx.read(&args.logits)?;
    let mask = ctx.read(&args.mask)?;
    let breakdown = ops::loss_breakdown(&logits, &mask, &ctx.schema, &loss_config(&args.options))?;
    Ok(Outcome::json(&breakdown))
}

#[derive(Serialize)]
struct GradCheckReport {
    reference: &'static str,
    elements: usize,
    max_relative_error: f64,
    tolerance: f64,
    floor: f64,
    passed: bool,
}

fn grad_check(ctx: &Context, args: &GradCheckArgs) -> Result<Outcome, AppError> {
    json_only(ctx, "grad-check")?;
    let logits = read_tensor(&ctx.read(&args.logits)?)?;
    if logits.kind() != TensorKind::Logits {
        return Err(AppError::validation("NotLogits", "expected a logits tensor"));
    }
    let gt = decode_label_png(&ctx.read(&args.mask)?, &ctx.schema)?;
    let cfg = loss_config(&args.options);
    let shape = Shape::of(&logits);
    let values: Vec<f64> = logits.data().iter().map(|&v| v as f64).collect();
    let weights = ctx.schema.weights();
    let analytic = combined_loss_grad_f64(&values, shape, &gt, &weights, &cfg)?;
    let (reference, other) = match &args.gradient {
        Some(path) => {
            let ext = read_tensor(&ctx.read(path)?)?;
            if !ext.same_shape(&logits) {
                return Err(AppError::validation(
                    "DimensionMismatch",
                    format!("gradient {} vs logits {}", ext.shape_str(), logits.shape_str()),
                ));
            }
            ("external", ext.data().iter().map(|&v| v as f64).collect::<Vec<_>>())
        }
        None => (
            "finite_difference",
            finite_difference_grad_f64(&values, shape, &gt, &weights, &cfg, args.step)?,
        ),
    };
    let err = max_relative_error(&analytic, &other, args.floor);
    let passed = err < args.tolerance;
    let mut outcome = Outcome::json(&GradCheckReport {
        reference,
        elements: analytic.len(),
        max_relative_error: err,
        tolerance: args.tolerance,
        floor: args.floor,
        passed,
    });
    if !passed {
        outcome.failure = Some(AppError::validation(
            "GradientMismatch",
            format!("max relative error {err:e} exceeds {:e}", args.tolerance),
        ));
    }
    Ok(outcome)
}

fn load_samples(ctx: &Context, images: &Path, masks: &Path) -> Result<Vec<(String, Sample)>, AppError> {
    paired_files(images, masks)?
        .into_iter()
        .map(|(img, mask)| {
            let image = decode_rgb_image(&ctx.read(&img)?)?;
            let mask = decode_label_png(&ctx.read(&mask)?, &ctx.schema)?;
            let name = img.file_name().expect("listed").to_string_lossy().into_owned();
            Ok((name, Sample::new(image, mask)?))
        })
        .collect()
}

fn sample_files(ctx: &Context, name: &str, sample: &Sample) -> Result<Vec<(PathBuf, Vec<u8>)>, AppError> {
    Ok(vec![
        (Path::new("images").join(name), encode_rgb_image(sample.image())?),
        (
            Path::new("masks").join(name),
            encode_mask(sample.mask(), &ctx.schema, MaskEncoding::RawValues)?,
        ),
    ])
}

#[derive(Serialize)]
struct AugmentRecord {
    name: String,
    seed: u64,
    flipped: bool,
    window: CropWindow,
}

fn augment(ctx: &Context, args: &AugmentArgs) -> Result<Outcome, AppError> {
    json_only(ctx, "augment")?;
    ctx.output_dir("augment")?;
    if !(0.0..=1.0).contains(&args.flip_probability) {
        return Err(AppError::validation("InvalidParameter", "flip probability outside [0, 1]"));
    }
    let samples = load_samples(ctx, &args.pairs.images, &args.pairs.masks)?;
    let mut master = ChaCha8Rng::seed_from_u64(ctx.seed.unwrap_or(0));
    let mut files = Vec::new();
    let mut records = Vec::new();
    for (name, sample) in &samples {
        let seed: u64 = master.random();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let flipped = rng.random::<f64>() < args.flip_probability;
        let base = if flipped { hflip(sample) } else { sample.clone() };
        let out_size = args.out_size.unwrap_or((sample.height(), sample.width()));
        let (out, window) = random_resized_crop(&base, args.crop_scale, out_size, rng.random())?;
        files.extend(sample_files(ctx, name, &out)?);
        if args.normalize {
            let tensor = normalize(out.image(), IMAGENET_MEAN, IMAGENET_STD)?.to_tensor();
            files.push((
                Path::new("normalized").join(format!("{}.tst1", stem(Path::new(name)))),
                write_tensor(&tensor),
            ));
        }
        records.push(AugmentRecord {
            name: name.clone(),
            seed,
            flipped,
            window,
        });
    }
    let mut outcome = Outcome::json(&BTreeMap::from([("samples", &records)]));
    outcome.files = files;
    Ok(outcome)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ClassRef {
    Index(u8),
    Name(String),
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct CopyPasteDocument {
    rare_classes: Option<Vec<ClassRef>>,
    probability: Option<f64>,
    max_instances: Option<usize>,
    min_instance_pixels: Option<usize>,
    seed: Option<u64>,
}

fn copy_paste_config(ctx: &Context, path: Option<&Path>) -> Result<CopyPasteConfig, AppError> {
    let mut cfg = CopyPasteConfig::for_schema(&ctx.schema);
    let doc: CopyPasteDocument = match path {
        Some(p) => ops::parse_json("copy-paste config", &ctx.read(p)?)?,
        None => CopyPasteDocument::default(),
    };
    if let Some(classes) = doc.rare_classes {
        cfg.rare_classes = classes
            .into_iter()
            .map(|c| match c {
                ClassRef::Index(i) if (i as usize) < ctx.schema.len() => Ok(i),
                ClassRef::Index(i) => Err(AppError::validation("IndexOutOfRange", format!("class index {i}"))),
                ClassRef::Name(n) => ctx
                    .schema
                    .index_of(&n)
                    .map(|i| i as u8)
                    .ok_or_else(|| AppError::validation("UnknownClass", format!("unknown class name `{n}`"))),
            })
            .collect::<Result<_, _>>()?;
    }
    cfg.probability = doc.probability.unwrap_or(cfg.probability);
    cfg.max_instances = doc.max_instances.unwrap_or(cfg.max_instances);
    cfg.min_instance_pixels = doc.min_instance_pixels.unwrap_or(cfg.min_instance_pixels);
    cfg.seed = ctx.seed.or(doc.seed).unwrap_or(0);
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct PasteRecord {
    recipient: String,
    donor: String,
    seed: u64,
    applied: bool,
    no_rare_instances: bool,
    instances: Vec<PastedInstance>,
}

fn copy_paste_cmd(ctx: &Context, args: &CopyPasteArgs) -> Result<Outcome, AppError> {
    json_only(ctx, "copy-paste")?;
    ctx.output_dir("copy-paste")?;
    let base = copy_paste_config(ctx, args.config.as_deref())?;
    let samples = load_samples(ctx, &args.pairs.images, &args.pairs.masks)?;
    let mut master = ChaCha8Rng::seed_from_u64(base.seed);
    let mut files = Vec::new();
    let mut records = Vec::new();
    let n = samples.len();
    for (i, (name, recipient)) in samples.iter().enumerate() {
        // Any other sample donates; a lone sample donates to itself.
        let donor_idx = if n == 1 {
            0
        } else {
            let d = master.random_range(0..n - 1);
            if d >= i {
                d + 1
            } else {
                d
            }
        };
        let seed: u64 = master.random();
        let cfg = CopyPasteConfig { seed, ..base.clone() };
        let (donor_name, donor) = &samples[donor_idx];
        let out = copy_paste(donor, recipient, &cfg)?;
        files.extend(sample_files(ctx, name, &out.sample)?);
        records.push(PasteRecord {
            recipient: name.clone(),
            donor: donor_name.clone(),
            seed,
            applied: out.applied,
            no_rare_instances: out.no_rare_instances,
            instances: out.instances,
        });
    }
    let doc = serde_json::json!({
        "config": {
            "rare_classes": base.rare_classes,
            "probability": base.probability,
            "max_instances": base.max_instances,
            "min_instance_pixels": base.min_instance_pixels,
            "seed": base.seed,
        },
        "samples": records,
    });
    let mut outcome = Outcome::json(&doc);
    outcome.files = files;
    outcome.files.push(("provenance.json".into(), outcome.stdout.clone().into_bytes()));
    Ok(outcome)
}

#[derive(Serialize)]
struct TensorSummary {
    output: String,
    channels: usize,
    height: usize,
    width: usize,
}

fn tensor_outcome(name: &str, t: &crate::tensor_io::ProbTensor) -> Outcome {
    Outcome::json(&TensorSummary {
        output: name.to_string(),
        channels: t.channels(),
        height: t.height(),
        width: t.width(),
    })
    .with_file(name, write_tensor(t))
}

fn softmax_cmd(ctx: &Context, args: &SoftmaxArgs) -> Result<Outcome, AppError> {
    json_only(ctx, "softmax")?;
    ctx.output_dir("softmax")?;
    let logits = read_tensor(&ctx.read(&args.logits)?)?;
    let probs = softmax(&logits)?;
    Ok(tensor_outcome(&format!("{}.probs.tst1", stem(&args.logits)), &probs))
}

fn parse_view(spec: &str) -> Result<(PathBuf, TtaView), AppError> {
    let bad = || AppError::validation("InvalidView", format!("view `{spec}` is not PATH[:hflip][:scale=S]"));
    let mut parts = spec.split(':');
    let path = parts.next().filter(|p| !p.is_empty()).ok_or_else(bad)?;
    let mut view = TtaView::IDENTITY;
    for part in parts {
        if part == "hflip" {
            view.hflip = true;
        } else if let Some(s) = part.strip_prefix("scale=") {
            view.scale = s.parse().map_err(|_| bad())?;
        } else {
            return Err(bad());
        }
    }
    Ok((PathBuf::from(path), view))
}

fn tta(ctx: &Context, args: &TtaArgs) -> Result<Outcome, AppError> {
    json_only(ctx, "tta")?;
    ctx.output_dir("tta")?;
    let mut views = Vec::with_capacity(args.views.len());
    for spec in &args.views {
        let (path, view) = parse_view(spec)?;
        views.push((view, read_tensor(&ctx.read(&path)?)?));
    }
    let (h, w) = match args.base_size {
        Some(size) => size,
        None => views
            .iter()
            .find(|(v, _)| v.scale == 1.0)
            .map(|(_, t)| (t.height(), t.width()))
            .ok_or_else(|| AppError::validation("MissingBaseSize", "no unscaled view; pass --base-size"))?,
    };
    let merged = tta_ensemble(&views, h, w)?;
    Ok(tensor_outcome("tta.tst1", &merged))
}

#[derive(Serialize)]
struct CrfSummary {
    output: String,
    params: CrfParams,
    changed_pixels: usize,
}

fn crf(ctx: &Context, args: &CrfArgs) -> Result<Outcome, AppError> {
    json_only(ctx, "crf")?;
    ctx.output_dir("crf")?;
    let params = CrfParams {
        iterations: args.iterations,
        w_smooth: args.w_smooth,
        theta_gamma: args.theta_gamma,
        w_bilateral: args.w_bilateral,
        theta_alpha: args.theta_alpha,
        theta_beta: args.theta_beta,
    };
    let probs_bytes = ctx.read(&args.probs)?;
    let refined_bytes = ops::crf_bytes(&probs_bytes, &ctx.read(&args.image)?, &params, args.backend.into())?;
    let before = read_tensor(&probs_bytes)?.argmax();
    let after = read_tensor(&refined_bytes)?.argmax();
    let changed = before.data().iter().zip(after.data()).filter(|(a, b)| a != b).count();
    Ok(Outcome::json(&CrfSummary {
        output: "crf.tst1".into(),
        params,
        changed_pixels: changed,
    })
    .with_file("crf.tst1", refined_bytes))
}

fn uncertainty_params(b: &BlendArgs) -> UncertaintyParams {
    UncertaintyParams {
        threshold: b.threshold,
        blend: DifficultyBlend {
            uncertain_weight: b.uncertain_weight,
            confidence_weight: b.confidence_weight,
        },
    }
}

fn uncertainty_cmd(ctx: &Context, args: &UncertaintyArgs) -> Result<Outcome, AppError> {
    json_only(ctx, "uncertainty")?;
    let out = ops::uncertainty_outputs(&ctx.read(&args.probs)?, &uncertainty_params(&args.blend))?;
    let mut outcome = Outcome::json(&out.report);
    if ctx.output.is_some() {
        outcome = outcome.with_file("entropy.png", out.entropy_png);
    }
    Ok(outcome)
}

#[derive(Serialize)]
struct McSummary {
    samples: usize,
    predictive: UncertaintyReport,
    mean_variance: f64,
    max_variance: f64,
}

fn mc_aggregate_cmd(ctx: &Context, args: &McAggregateArgs) -> Result<Outcome, AppError> {
    json_only(ctx, "mc-aggregate")?;
    ctx.output_dir("mc-aggregate")?;
    let params = uncertainty_params(&args.blend);
    let mut acc = McAccumulator::new();
    for path in &args.samples {
        acc.push(&read_tensor(&ctx.read(path)?)?)?;
    }
    let agg = acc.finish(params.threshold, params.blend)?;
    let n = agg.variance.len() as f64;
    let max_variance = agg.variance.iter().copied().fold(0.0, f64::max);
    let (h, w) = (agg.predictive.height, agg.predictive.width);
    let classes = agg.predictive.classes;
    let entropy_max = if classes > 1 { (classes as f64).ln() } else { 0.0 };
    let entropy_png = encode_heatmap(&agg.predictive.entropy_map, w, h, entropy_max)?;
    // Per-class variance of values in [0, 1] is at most 0.25.
    let variance_png = encode_heatmap(&agg.variance, w, h, 0.25)?;
    let summary = McSummary {
        samples: agg.samples,
        mean_variance: agg.variance.iter().sum::<f64>() / n,
        max_variance,
        predictive: agg.predictive,
    };
    Ok(Outcome::json(&summary)
        .with_file("mean.tst1", write_tensor(&agg.mean))
        .with_file("entropy.png", entropy_png)
        .with_file("variance.png", variance_png))
}

fn rank(ctx: &Context, args: &RankArgs) -> Result<Outcome, AppError> {
    let params = uncertainty_params(&args.blend);
    let mut reports = Vec::new();
    if let Some(dir) = &args.probs_dir {
        for path in list_files(dir, "tst1")? {
            let probs = read_tensor(&ctx.read(&path)?)?;
            reports.push((stem(&path), uncertainty_with(&probs, params.threshold, params.blend)?));
        }
    } else if let Some(dir) = &args.reports_dir {
        for path in list_files(dir, "json")? {
            let report: UncertaintyReport = ops::parse_json(&path.display().to_string(), &ctx.read(&path)?)?;
            reports.push((stem(&path), report));
        }
    }
    let bands = BandThresholds {
        well_below: args.well_below,
        high_at_least: args.high_at_least,
    };
    let ranking = rank_difficulty(&reports, bands)?;
    let mut outcome = match ctx.format {
        Format::Json => Outcome::json(&ranking),
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let err = |e: csv::Error| AppError::validation("Csv", e.to_string());
            w.write_record(["rank", "image_id", "difficulty", "mean_confidence", "uncertain_fraction", "band"])
                .map_err(err)?;
            for r in &ranking.images {
                let band = serde_json::to_value(r.band).expect("band serialises");
                w.write_record([
                    r.rank.to_string(),
                    r.image_id.clone(),
                    crate::canonical::format_real(r.difficulty),
                    crate::canonical::format_real(r.mean_confidence),
                    crate::canonical::format_real(r.uncertain_fraction),
                    band.as_str().unwrap_or_default().to_string(),
                ])
                .map_err(err)?;
            }
            let bytes = w.into_inner().map_err(|e| AppError::validation("Csv", e.to_string()))?;
            Outcome {
                stdout: String::from_utf8(bytes).expect("csv output is UTF-8"),
                files: Vec::new(),
                failure: None,
            }
        }
    };
    if ctx.output.is_some() {
        outcome = outcome.with_file("summary.txt", ranking.render_text().into_bytes());
    }
    Ok(outcome)
}

fn tier_costs(c: &CostArgs) -> TierCosts {
    TierCosts {
        safe: c.safe_cost,
        caution: c.caution_cost,
    }
}

fn costmap(ctx: &Context, args: &CostmapArgs) -> Result<Outcome, AppError> {
    json_only(ctx, "costmap")?;
    ctx.output_dir("costmap")?;
    let params = CostmapParams {
        costs: tier_costs(&args.costs),
        homography: args.homography,
        out_size: args.out_size,
    };
    let out = ops::costmap_outputs(&ctx.read(&args.mask)?, &ctx.schema, &params)?;
    let outcome = Outcome::json(&out.sidecar);
    let sidecar = outcome.stdout.clone().into_bytes();
    Ok(outcome.with_file("costmap.png", out.png).with_file("costmap.json", sidecar))
}

fn plan(ctx: &Context, args: &PlanArgs) -> Result<Outcome, AppError> {
    json_only(ctx, "plan")?;
    let costs = match &args.sidecar {
        Some(path) => ops::parse_json::<CostmapSidecar>("costmap sidecar", &ctx.read(path)?)?.costs,
        None => tier_costs(&args.costs),
    };
    let req = PlanRequest {
        start: args.start,
        goal: args.goal,
        clearance: args.clearance,
        costs: Some(costs),
    };
    let plan = ops::plan_from_png(&ctx.read(&args.costmap)?, &req)?;
    Ok(Outcome::json(&plan))
}

fn overlay(ctx: &Context, args: &OverlayArgs) -> Result<Outcome, AppError> {
    json_only(ctx, "overlay")?;
    ctx.output_dir("overlay")?;
    let image = decode_rgb_image(&ctx.read(&args.image)?)?;
    let mask = decode_label_png(&ctx.read(&args.mask)?, &ctx.schema)?;
    let blended = render_overlay(&image, &mask, &ctx.schema, args.alpha)?;
    let name = format!("{}.overlay.png", stem(&args.image));
    Ok(Outcome::json(&BTreeMap::from([("output", &name)])).with_file(&name, encode_rgb_image(&blended)?))
}

pub(super) fn serve(ctx: &Context, args: &ServeArgs) -> Result<(), AppError> {
    let config = crate::service::ServiceConfig {
        schema: ctx.schema.clone(),
        max_body_bytes: args.max_body_bytes,
    };
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| AppError::io(Path::new("tokio runtime"), &e))?;
    runtime.block_on(crate::service::serve(&args.bind, config))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::postprocess::mc_aggregate;

    #[test]
    fn view_specs() {
        let (p, v) = parse_view("a/b.tst1:hflip:scale=0.75").unwrap();
        assert_eq!(p, PathBuf::from("a/b.tst1"));
        assert!(v.hflip);
        assert_eq!(v.scale, 0.75);
        assert_eq!(parse_view("x.tst1").unwrap().1, TtaView::IDENTITY);
        assert!(parse_view("x.tst1:flip").is_err());
        assert!(parse_view(":hflip").is_err());
    }

    #[test]
    fn mc_helper_is_consistent() {
        // Guard that the CLI path and the library agree on aggregation.
        let p = crate::tensor_io::ProbTensor::new(TensorKind::Probabilities, 2, 1, 1, vec![0.25, 0.75]).unwrap();
        let a = mc_aggregate(std::slice::from_ref(&p), 0.5).unwrap();
        let mut acc = McAccumulator::new();
        acc.push(&p).unwrap();
        assert_eq!(acc.finish(0.5, DifficultyBlend::default()).unwrap(), a);
    }
}
