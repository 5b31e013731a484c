use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use facegen_core::cgmm::{
    attribute_sets, collect_activations, fit_model, learn_weights, read_stats, stats_bytes,
    weight_gradient_check, weight_objective, CgmmModel, TargetMode, WeightLearning,
};
use facegen_core::data::{
    compute_mean_image, decode_ppm, default_schema, encode_ppm, generate_synthetic_dataset,
    AttributeSchema, Dataset, Split,
};
use facegen_core::generate::{
    class_visualize, generate_from_attributes, reconstruct_from_image, report_text, trace_csv, Init,
    InversionConfig, VisObjective,
};
use facegen_core::io::write_atomic;
use facegen_core::nn::{
    checkpoint_bytes, gradient_check, read_checkpoint, ArchitectureOptions, FreezeMask, NetworkSpec,
    Parameters,
};
use facegen_core::train::{train, TrainConfig};
use facegen_core::Tensor;

use crate::{
    ClassvisArgs, Cli, Command, ConfigError, FitArgs, GenerateArgs, GradCheckArgs, InitArg, InvertArgs,
    InversionArgs, LearnArgs, MeanImageArgs, ModeArg, NumericFailure, ObjectiveArg, SynthArgs, TrainArgs,
};

/// Step for the finite-difference check run before weight learning.
const WEIGHT_CHECK_H: f64 = 1e-5;
const WEIGHT_CHECK_TOLERANCE: f64 = 1e-4;

pub fn dispatch(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::SynthData(a) => synth_data(a, seed),
        Command::Train(a) => train_cmd(a, seed),
        Command::FitCgmm(a) => fit_cgmm(a, seed),
        Command::LearnWeights(a) => learn_weights_cmd(a, seed),
        Command::Generate(a) => generate(a, seed),
        Command::Classvis(a) => classvis(a, seed),
        Command::Invert(a) => invert(a, seed),
        Command::GradCheck(a) => grad_check(a, seed),
        Command::MeanImage(a) => mean_image(a),
    }
}

/// `key = value` lines, printed before a command runs and embedded in reports.
struct Echo(String);

impl Echo {
    fn new(command: &str, seed: u64) -> Self {
        Echo(format!("command = {command}\nseed = {seed}\n"))
    }

    fn add(mut self, key: &str, value: impl std::fmt::Display) -> Self {
        let _ = writeln!(self.0, "{key} = {value}");
        self
    }

    fn path(self, key: &str, value: &Path) -> Self {
        self.add(key, value.display())
    }

    fn opt_path(self, key: &str, value: Option<&PathBuf>) -> Self {
        match value {
            Some(p) => self.path(key, p),
            None => self.add(key, "-"),
        }
    }

    /// Appends the inversion settings; the seed is already echoed.
    fn with_inversion(mut self, cfg: &InversionConfig) -> Self {
        for line in cfg.echo().lines().filter(|l| !l.starts_with("seed =")) {
            self.0.push_str(line);
            self.0.push('\n');
        }
        self
    }

    fn print(&self) {
        print!("{}", self.0);
    }
}

fn config_error(message: impl Into<String>) -> anyhow::Error {
    ConfigError(message.into()).into()
}

fn load_dataset(dir: &Path, split: Split) -> Result<Dataset> {
    Dataset::load(dir, split).with_context(|| format!("loading dataset {}", dir.display()))
}

fn load_checkpoint(path: &Path) -> Result<(NetworkSpec, Parameters)> {
    let bytes = std::fs::read(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
    read_checkpoint(&mut bytes.as_slice()).with_context(|| format!("reading checkpoint {}", path.display()))
}

fn load_stats(path: &Path, schema: &AttributeSchema) -> Result<CgmmModel> {
    let bytes = std::fs::read(path).with_context(|| format!("reading stats {}", path.display()))?;
    read_stats(&mut bytes.as_slice(), schema).with_context(|| format!("reading stats {}", path.display()))
}

fn load_ppm(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).with_context(|| format!("reading image {}", path.display()))?;
    decode_ppm(&bytes).with_context(|| format!("reading image {}", path.display()))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// The schema a checkpoint was trained for, recovered from a dataset or, when
/// none is given, the default schema (which must match the heads).
fn schema_for(spec: &NetworkSpec, data: Option<&Dataset>) -> Result<AttributeSchema> {
    let schema = data.map_or_else(default_schema, |d| d.schema.clone());
    spec.check_schema(&schema)
        .context("checkpoint heads do not match the attribute schema")?;
    Ok(schema)
}

fn parse_attributes(schema: &AttributeSchema, list: &str) -> Result<Vec<usize>> {
    let names: Vec<&str> = list.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if names.is_empty() {
        return Err(config_error(format!(
            "no attributes given; valid attributes: {}",
            schema.valid_names().join(", ")
        )));
    }
    let mut out = Vec::with_capacity(names.len());
    for name in names {
        let index = schema.resolve(name)?;
        if out.contains(&index) {
            return Err(config_error(format!("attribute {name:?} listed twice")));
        }
        out.push(index);
    }
    Ok(out)
}

fn inversion_config(args: &InversionArgs, layer: usize, seed: u64, mean: Option<Tensor>) -> Result<InversionConfig> {
    let init = match (args.init, mean) {
        (InitArg::Noise, _) => Init::Noise,
        (InitArg::MeanImage, Some(m)) => Init::Image(m),
        (InitArg::MeanImage, None) => {
            return Err(config_error("--init mean-image needs a dataset (--data)"));
        }
    };
    let cfg = InversionConfig {
        layer,
        iterations: args.iterations,
        step: args.step,
        init,
        noise_std: args.noise_std,
        blur_sigma: args.blur_sigma,
        blur_period: args.blur_period,
        jitter: args.jitter,
        l2_decay: args.l2_decay,
        seed,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn mean_from(data: Option<&PathBuf>, needed: bool) -> Result<Option<Tensor>> {
    match data {
        Some(dir) if needed => Ok(Some(compute_mean_image(&load_dataset(dir, Split::Train)?)?)),
        _ => Ok(None),
    }
}

/// Writes `image.ppm`, `trace.csv` and `report.txt` into `dir`.
fn write_generation(
    dir: &Path,
    title: &str,
    echo: &Echo,
    value_column: &str,
    result: &facegen_core::generate::GenerationResult,
    schema: &AttributeSchema,
) -> Result<()> {
    let cfg_text = echo.0.clone();
    write(&dir.join("image.ppm"), &encode_ppm(&result.image)?)?;
    write(&dir.join("trace.csv"), trace_csv(result, value_column).as_bytes())?;
    write(&dir.join("report.txt"), report_text(title, &cfg_text, result, schema).as_bytes())?;
    Ok(())
}

fn print_classification(result: &facegen_core::generate::GenerationResult, schema: &AttributeSchema) {
    if let Some(c) = &result.classification {
        for (g, group) in schema.groups().iter().enumerate() {
            let p = c.probs[g][c.predictions[g]];
            println!("  {} -> {} ({p:.3})", group.name, group.labels[c.predictions[g]]);
        }
    }
}

fn synth_data(a: SynthArgs, seed: u64) -> Result<()> {
    let echo = Echo::new("synth-data", seed)
        .add("n", a.n)
        .add("size", a.size)
        .path("out", &a.out);
    echo.print();
    let schema = default_schema();
    let dataset = generate_synthetic_dataset(a.n, seed, &schema, a.size)?;
    dataset
        .save(&a.out)
        .with_context(|| format!("writing dataset to {}", a.out.display()))?;
    for (g, group) in schema.groups().iter().enumerate() {
        let mut counts = vec![0usize; group.labels.len() + 1];
        for item in &dataset.images {
            counts[item.labels[g].unwrap_or(group.labels.len())] += 1;
        }
        let cells: Vec<String> = group
            .labels
            .iter()
            .zip(&counts)
            .map(|(l, c)| format!("{l}={c}"))
            .chain(std::iter::once(format!("unlabeled={}", counts[group.labels.len()])))
            .collect();
        println!("{}: {}", group.name, cells.join(" "));
    }
    println!("wrote {} images to {}", dataset.len(), a.out.display());
    Ok(())
}

fn train_cmd(a: TrainArgs, seed: u64) -> Result<()> {
    let metrics_path = a.metrics.clone().unwrap_or_else(|| a.out.with_extension("csv"));
    let echo = Echo::new("train", seed)
        .path("data", &a.data)
        .opt_path("test_data", a.test_data.as_ref())
        .add("epochs", a.epochs)
        .add("lr", a.lr)
        .add("weight_decay", a.weight_decay)
        .add("batch_size", a.batch_size)
        .add("freeze_below", &a.freeze_below)
        .add("dropout", a.dropout)
        .opt_path("init", a.init.as_ref())
        .path("out", &a.out)
        .path("metrics", &metrics_path);
    echo.print();
    if !(a.dropout >= 0.0 && a.dropout < 1.0) {
        return Err(config_error(format!("dropout must be in [0, 1), got {}", a.dropout)));
    }
    let train_set = load_dataset(&a.data, Split::Train)?;
    let test_set = a.test_data.as_deref().map(|d| load_dataset(d, Split::Test)).transpose()?;
    let (spec, mut params) = match &a.init {
        Some(path) => load_checkpoint(path)?,
        None => {
            let shape = train_set.image_shape();
            if shape[1] != shape[2] {
                return Err(config_error(format!("images must be square, got {shape:?}")));
            }
            let opts = ArchitectureOptions {
                image_size: shape[1],
                dropout: a.dropout,
                ..Default::default()
            };
            let spec = NetworkSpec::desk_scale(&train_set.schema, opts)?;
            let params = Parameters::init(&spec, seed)?;
            (spec, params)
        }
    };
    spec.check_schema(&train_set.schema)?;
    let freeze = match a.freeze_below.trim() {
        "none" => FreezeMask::none(&spec),
        "all" => FreezeMask::all(&spec),
        layer => FreezeMask::below(&spec, spec.resolve_layer(layer)?),
    };
    let cfg = TrainConfig {
        epochs: a.epochs,
        lr: a.lr,
        weight_decay: a.weight_decay,
        batch_size: a.batch_size,
        freeze,
        seed,
        divergence_factor: TrainConfig::new(&spec).divergence_factor,
    };
    let groups: Vec<String> = train_set.schema.groups().iter().map(|g| g.name.clone()).collect();
    let history = train(&spec, &mut params, &train_set, test_set.as_ref(), &cfg, |s| {
        let test = s
            .test
            .as_ref()
            .map(|t| format!(" test_loss {:.4} test_acc {:.4}", t.loss, t.mean_accuracy()))
            .unwrap_or_default();
        println!("epoch {} train_loss {:.4}{test}", s.epoch, s.train_loss);
    })?;

    let mut csv = String::from("epoch,train_loss,test_loss,test_mean_accuracy");
    for g in &groups {
        let _ = write!(csv, ",train_acc_{g}");
    }
    for g in &groups {
        let _ = write!(csv, ",test_acc_{g}");
    }
    csv.push('\n');
    for s in &history {
        let _ = write!(csv, "{},{}", s.epoch, s.train_loss);
        match &s.test {
            Some(t) => {
                let _ = write!(csv, ",{},{}", t.loss, t.mean_accuracy());
            }
            None => csv.push_str(",,"),
        }
        for acc in &s.train_accuracy {
            let _ = write!(csv, ",{acc}");
        }
        for g in 0..groups.len() {
            match &s.test {
                Some(t) => {
                    let _ = write!(csv, ",{}", t.per_group_accuracy[g]);
                }
                None => csv.push(','),
            }
        }
        csv.push('\n');
    }
    write(&a.out, &checkpoint_bytes(&spec, &params)?)?;
    write(&metrics_path, csv.as_bytes())?;
    if let Some(last) = history.last() {
        let cells: Vec<String> = groups
            .iter()
            .zip(&last.train_accuracy)
            .map(|(g, acc)| format!("{g}={acc:.3}"))
            .collect();
        println!("train accuracy: {}", cells.join(" "));
        if let Some(t) = &last.test {
            let cells: Vec<String> = groups
                .iter()
                .zip(&t.per_group_accuracy)
                .map(|(g, acc)| format!("{g}={acc:.3}"))
                .collect();
            println!("test accuracy: {} mean={:.4}", cells.join(" "), t.mean_accuracy());
        }
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

fn fit_cgmm(a: FitArgs, seed: u64) -> Result<()> {
    let echo = Echo::new("fit-cgmm", seed)
        .path("data", &a.data)
        .path("checkpoint", &a.checkpoint)
        .add("layer", &a.layer)
        .add("m", a.m)
        .add("lambda", a.lambda)
        .path("out", &a.out);
    echo.print();
    let dataset = load_dataset(&a.data, Split::Train)?;
    let (spec, params) = load_checkpoint(&a.checkpoint)?;
    let layer = spec.resolve_layer(&a.layer)?;
    let (model, summary) = fit_model(&spec, &params, &dataset, layer, a.m, a.lambda, seed)?;
    for s in &summary {
        let mut line = format!(
            "{}: count {} of {} available",
            dataset.schema.qualified_name(s.attribute),
            s.count,
            s.available
        );
        if s.shortfall {
            line.push_str(" (shortfall)");
        }
        if !model.is_usable(s.attribute) {
            line.push_str(" (unusable)");
        }
        println!("{line}");
    }
    write(&a.out, &stats_bytes(&model)?)?;
    println!("wrote {} (layer {layer}, {} units)", a.out.display(), model.dim());
    Ok(())
}

fn learn_weights_cmd(a: LearnArgs, seed: u64) -> Result<()> {
    let out = a.out.clone().unwrap_or_else(|| a.stats.clone());
    let echo = Echo::new("learn-weights", seed)
        .path("data", &a.data)
        .path("checkpoint", &a.checkpoint)
        .path("stats", &a.stats)
        .add("lr", a.lr)
        .add("iters", a.iters)
        .add("lambda", a.lambda.map_or("-".to_string(), |l| l.to_string()))
        .add("halving", a.halving)
        .path("out", &out)
        .opt_path("trace", a.trace.as_ref());
    echo.print();
    let dataset = load_dataset(&a.data, Split::Train)?;
    let (spec, params) = load_checkpoint(&a.checkpoint)?;
    spec.check_schema(&dataset.schema)?;
    let mut model = load_stats(&a.stats, &dataset.schema)?;
    if let Some(lambda) = a.lambda {
        model.lambda = lambda;
        model.validate()?;
    }
    let (kept, sets) = attribute_sets(&dataset, &model);
    if kept.is_empty() {
        return Err(config_error("no image has a usable labeled attribute"));
    }
    println!("{} of {} images carry usable attributes", kept.len(), dataset.len());
    let activations = collect_activations(&spec, &params, &dataset, &kept, model.layer)?;
    let check = weight_gradient_check(&model, &activations, &sets, WEIGHT_CHECK_H)?;
    println!("gradient check: max relative error {check:.3e} (tolerance {WEIGHT_CHECK_TOLERANCE:e})");
    if check > WEIGHT_CHECK_TOLERANCE {
        return Err(NumericFailure(format!(
            "weight gradient check failed: relative error {check:e} exceeds {WEIGHT_CHECK_TOLERANCE:e}"
        ))
        .into());
    }
    let cfg = WeightLearning {
        lr: a.lr,
        iterations: a.iters,
        halving: a.halving,
    };
    let fit = learn_weights(&model, &activations, &sets, &cfg)?;
    model.weights = fit.weights.clone();
    let final_objective = weight_objective(&model, &activations, &sets)?;
    println!(
        "objective {:.6e} -> {:.6e} after {} steps (final step size {:e})",
        fit.trace[0],
        final_objective,
        fit.iterations,
        fit.step_sizes.last().copied().unwrap_or(0.0)
    );
    for (i, w) in model.weights.iter().enumerate() {
        println!("  w[{}] = {w:.6}", dataset.schema.qualified_name(i));
    }
    if let Some(path) = &a.trace {
        let mut csv = String::from("iteration,objective,step_size\n");
        for (i, v) in fit.trace.iter().enumerate() {
            let step = if i == 0 { 0.0 } else { fit.step_sizes[i - 1] };
            let _ = writeln!(csv, "{i},{v:e},{step:e}");
        }
        write(path, csv.as_bytes())?;
    }
    write(&out, &stats_bytes(&model)?)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn generate(a: GenerateArgs, seed: u64) -> Result<()> {
    let mode = match a.mode {
        ModeArg::Mean => TargetMode::Mean,
        ModeArg::Sample => TargetMode::Sample,
    };
    let echo = Echo::new("generate", seed)
        .path("checkpoint", &a.checkpoint)
        .path("stats", &a.stats)
        .add("attributes", &a.attributes)
        .add("mode", format!("{:?}", a.mode).to_lowercase())
        .opt_path("data", a.data.as_ref())
        .path("out", &a.out);
    let (spec, params) = load_checkpoint(&a.checkpoint)?;
    let data = a.data.as_deref().map(|d| load_dataset(d, Split::Train)).transpose()?;
    let schema = schema_for(&spec, data.as_ref())?;
    let attributes = parse_attributes(&schema, &a.attributes)?;
    let model = load_stats(&a.stats, &schema)?;
    let mean = match (&data, a.inversion.init) {
        (Some(d), InitArg::MeanImage) => Some(compute_mean_image(d)?),
        _ => None,
    };
    let cfg = inversion_config(&a.inversion, model.layer, seed, mean)?;
    let echo = echo.with_inversion(&cfg);
    echo.print();
    let result = generate_from_attributes(&spec, &params, &model, &attributes, mode, &cfg)?;
    println!(
        "data term {:.4e} -> {:.4e} over {} iterations",
        result.trace[0],
        result.trace.last().copied().unwrap_or(f64::NAN),
        result.iterations
    );
    print_classification(&result, &schema);
    write_generation(&a.out, "generate", &echo, "data_term", &result, &schema)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn classvis(a: ClassvisArgs, seed: u64) -> Result<()> {
    let echo = Echo::new("classvis", seed)
        .path("checkpoint", &a.checkpoint)
        .add("attributes", &a.attributes)
        .add("objective", format!("{:?}", a.objective).to_lowercase())
        .opt_path("mean", a.mean.as_ref())
        .opt_path("data", a.data.as_ref())
        .path("out", &a.out);
    let (spec, params) = load_checkpoint(&a.checkpoint)?;
    let data = a.data.as_deref().map(|d| load_dataset(d, Split::Train)).transpose()?;
    let mean = match (&a.mean, &data) {
        (Some(path), _) => load_ppm(path)?,
        (None, Some(d)) => compute_mean_image(d)?,
        (None, None) => return Err(config_error("class visualization needs --mean or --data")),
    };
    let schema = schema_for(&spec, data.as_ref())?;
    let attributes = parse_attributes(&schema, &a.attributes)?;
    let objective = match a.objective {
        ObjectiveArg::Softmax => VisObjective::Softmax,
        ObjectiveArg::Logits => VisObjective::Logits,
    };
    // the start is always the mean image; `layer` is unused here
    let cfg = inversion_config(&a.inversion, 0, seed, None).or_else(|e| {
        if a.inversion.init == InitArg::MeanImage {
            inversion_config(&InversionArgs { init: InitArg::Noise, ..a.inversion.clone() }, 0, seed, None)
        } else {
            Err(e)
        }
    })?;
    let echo = echo.with_inversion(&cfg);
    echo.print();
    let result = class_visualize(&spec, &params, &schema, &mean, &attributes, objective, &cfg)?;
    println!(
        "targeted score {:.4} -> {:.4} over {} iterations",
        result.trace[0],
        result.trace.last().copied().unwrap_or(f64::NAN),
        result.iterations
    );
    print_classification(&result, &schema);
    write_generation(&a.out, "classvis", &echo, "score", &result, &schema)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn invert(a: InvertArgs, seed: u64) -> Result<()> {
    let echo = Echo::new("invert", seed)
        .path("checkpoint", &a.checkpoint)
        .path("image", &a.image)
        .opt_path("data", a.data.as_ref())
        .path("out", &a.out);
    let (spec, params) = load_checkpoint(&a.checkpoint)?;
    let layer = spec.resolve_layer(&a.layer)?;
    let target = load_ppm(&a.image)?;
    let data = a.data.as_deref().map(|d| load_dataset(d, Split::Train)).transpose()?;
    let schema = schema_for(&spec, data.as_ref())?;
    let mean = mean_from(a.data.as_ref(), a.inversion.init == InitArg::MeanImage)?;
    let cfg = inversion_config(&a.inversion, layer, seed, mean)?;
    let echo = echo.with_inversion(&cfg);
    echo.print();
    let result = reconstruct_from_image(&spec, &params, &target, &cfg)?;
    let first = result.trace[0];
    let last = result.trace.last().copied().unwrap_or(f64::NAN);
    let reduction = if first > 0.0 { 1.0 - last / first } else { 0.0 };
    println!(
        "data term {first:.4e} -> {last:.4e} ({:.1}% reduction) over {} iterations",
        100.0 * reduction,
        result.iterations
    );
    print_classification(&result, &schema);
    write_generation(&a.out, "invert", &echo, "data_term", &result, &schema)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn grad_check(a: GradCheckArgs, seed: u64) -> Result<()> {
    let echo = Echo::new("grad-check", seed)
        .opt_path("checkpoint", a.checkpoint.as_ref())
        .opt_path("data", a.data.as_ref())
        .add("index", a.index)
        .add("size", a.size)
        .add("samples", a.samples)
        .add("h", a.h)
        .add("tolerance", a.tolerance)
        .opt_path("out", a.out.as_ref());
    echo.print();
    let data = match &a.data {
        Some(dir) => load_dataset(dir, Split::Train)?,
        None => generate_synthetic_dataset(1, seed, &default_schema(), a.size)?,
    };
    let item = data
        .images
        .get(a.index)
        .ok_or_else(|| config_error(format!("image index {} out of range ({} images)", a.index, data.len())))?;
    let (spec, params) = match &a.checkpoint {
        Some(path) => load_checkpoint(path)?,
        None => {
            let opts = ArchitectureOptions {
                image_size: data.image_shape()[1],
                ..Default::default()
            };
            let spec = NetworkSpec::desk_scale(&data.schema, opts)?;
            let params = Parameters::init(&spec, seed)?;
            (spec, params)
        }
    };
    spec.check_schema(&data.schema)?;
    let report = gradient_check(&spec, &params, &item.image, &item.labels, a.h, a.samples, seed)?;
    let mut text = echo.0.clone();
    let _ = writeln!(text, "checked = {}", report.checked);
    let _ = writeln!(text, "skipped = {}", report.skipped);
    let _ = writeln!(text, "max_rel_error = {:e}", report.max_rel_error);
    let _ = writeln!(text, "worst = {:?}", report.worst);
    let passed = report.max_rel_error <= a.tolerance;
    let _ = writeln!(text, "result = {}", if passed { "pass" } else { "fail" });
    print!("{}", &text[echo.0.len()..]);
    if let Some(path) = &a.out {
        write(path, text.as_bytes())?;
    }
    if !passed {
        return Err(NumericFailure(format!(
            "gradient check failed: max relative error {:e} exceeds {:e}",
            report.max_rel_error, a.tolerance
        ))
        .into());
    }
    Ok(())
}

fn mean_image(a: MeanImageArgs) -> Result<()> {
    let echo = Echo(String::from("command = mean-image\n"))
        .path("data", &a.data)
        .path("out", &a.out);
    echo.print();
    let dataset = load_dataset(&a.data, Split::Train)?;
    let mean = compute_mean_image(&dataset)?;
    write(&a.out, &encode_ppm(&mean)?)?;
    println!("wrote {} (mean of {} images)", a.out.display(), dataset.len());
    Ok(())
}
