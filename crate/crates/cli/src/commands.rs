//! The four subcommands. Each validates its inputs first (exit 2 on
//! failure) and only then starts work whose failures are runtime errors.

use std::path::{Path, PathBuf};

use log::info;
use photostyle::eval::{validate_resolutions, BENCHMARK_RESOLUTIONS};
use photostyle::{
    contour_similarity, load_image, prepare_content, prepare_style, run_benchmark, sobel_contour, to_grayscale,
    FeatureExtractor, Image64, ImageTensor, LossConfig, Scalar, TrainingRun, Transfer,
};
use serde::Serialize;

use crate::config::{ExtractorConfig, JobConfig, Precision};
use crate::CliError;

pub const OUTPUT_IMAGE: &str = "output.png";
pub const HISTORY_FILE: &str = "loss_history.csv";
pub const RESOLVED_CONFIG: &str = "resolved_config.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const SWEEP_SUMMARY: &str = "sweep_summary.csv";
pub const BENCHMARK_FILE: &str = "benchmark.csv";

fn runtime(what: &Path) -> impl FnOnce(photostyle::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("cannot write {}: {e}", what.display()))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))
}

fn build_extractor<T: Scalar>(cfg: &JobConfig) -> Result<FeatureExtractor<T>, CliError> {
    let fx = match cfg.extractor.as_ref().expect("resolved config names an extractor") {
        ExtractorConfig::Seeded { seed } => {
            log::warn!("using randomly initialized VGG19 weights (seed {seed}); results carry no perceptual meaning");
            FeatureExtractor::seeded(*seed)
        }
        ExtractorConfig::File { path, sha256 } => FeatureExtractor::from_safetensors(path, sha256)?,
    };
    for layer in cfg.loss.required_layers() {
        if !fx.has_layer(&layer) {
            return Err(CliError::Config(format!("extractor has no layer `{layer}`")));
        }
    }
    Ok(fx)
}

struct Inputs<T> {
    content: ImageTensor<T>,
    style: ImageTensor<T>,
}

fn load_inputs<T: Scalar>(cfg: &JobConfig) -> Result<Inputs<T>, CliError> {
    let content_path = cfg.require_content()?;
    let style_path = cfg.require_style()?;
    let content = prepare_content(&load_image::<T>(content_path)?, &cfg.resize)?;
    let style = prepare_style(&load_image::<T>(style_path)?, &cfg.resize).image;
    Ok(Inputs { content, style })
}

/// Steps a job to completion, logging progress and writing checkpoints.
fn drive<T: Scalar>(job: &mut Transfer<'_, T>, checkpoints: &Path, label: &str) -> Result<(), CliError> {
    let total = job.training_config().steps;
    let log_every = job.training_config().log_every;
    let checkpoint_every = job.training_config().checkpoint_every;
    while let Some(rec) = job.step()? {
        let rec = rec.clone();
        if rec.step == 1 || rec.step % log_every == 0 || rec.step == total {
            info!(
                "{label}step {}/{total}: total {:.4e}  content {:.4e}  style {:.4e}  tv {:.4e}",
                rec.step, rec.total, rec.content, rec.style, rec.tv
            );
        }
        if checkpoint_every.is_some_and(|k| rec.step % k == 0) {
            create_dir(checkpoints)?;
            let path = checkpoints.join(format!("step_{:06}.ckpt", rec.step));
            job.save_checkpoint(&path).map_err(runtime(&path))?;
            info!("{label}checkpoint {}", path.display());
        }
    }
    Ok(())
}

fn write_run<T: Scalar>(run: &TrainingRun<T>, image: &Path, history: &Path) -> Result<(), CliError> {
    photostyle::save_image(&run.final_image, image).map_err(runtime(image))?;
    run.write_history_csv(history).map_err(runtime(history))
}

pub fn transfer(cfg: &JobConfig, resume: Option<&Path>) -> Result<(), CliError> {
    match cfg.precision {
        Precision::F32 => transfer_as::<f32>(cfg, resume),
        Precision::F64 => transfer_as::<f64>(cfg, resume),
    }
}

fn transfer_as<T: Scalar>(cfg: &JobConfig, resume: Option<&Path>) -> Result<(), CliError> {
    let out = cfg.require_output_dir()?;
    let fx = build_extractor::<T>(cfg)?;
    let mut job = match resume {
        Some(path) => {
            if !path.is_file() {
                return Err(CliError::Config(format!(
                    "checkpoint {} does not exist",
                    path.display()
                )));
            }
            Transfer::resume(path, &fx)?
        }
        None => {
            let inputs = load_inputs::<T>(cfg)?;
            Transfer::new(
                &fx,
                &inputs.content,
                &inputs.style,
                &cfg.network,
                &cfg.loss,
                &cfg.training,
            )?
        }
    };
    create_dir(out)?;
    drive(&mut job, &out.join(CHECKPOINT_DIR), "")?;
    let run = job.finish()?;
    write_run(&run, &out.join(OUTPUT_IMAGE), &out.join(HISTORY_FILE))?;

    // A resumed job runs under the checkpoint's settings; record those.
    let mut resolved = JobConfig {
        network: run.network.clone(),
        loss: run.loss.clone(),
        training: run.training.clone(),
        ..cfg.clone()
    };
    resolved.absolutize();
    resolved.write(&out.join(RESOLVED_CONFIG))?;
    info!("wrote {}", out.join(OUTPUT_IMAGE).display());
    Ok(())
}

/// `cw_<value>` with the value printed without trailing zeros.
pub fn weight_label(w: f64) -> String {
    format!("cw_{w}")
}

#[derive(Debug, Serialize)]
struct SweepRow {
    content_weight: f64,
    style_weight: f64,
    total: f64,
    content_raw: f64,
    content_weighted: f64,
    style_raw: f64,
    style_weighted: f64,
    tv_raw: f64,
    tv_weighted: f64,
}

pub fn sweep(cfg: &JobConfig, weights: &[f64]) -> Result<(), CliError> {
    if weights.is_empty() {
        return Err(CliError::Config("the content-weight list is empty".into()));
    }
    for &w in weights {
        LossConfig {
            lambda_content: w,
            ..cfg.loss.clone()
        }
        .validate()?;
    }
    match cfg.precision {
        Precision::F32 => sweep_as::<f32>(cfg, weights),
        Precision::F64 => sweep_as::<f64>(cfg, weights),
    }
}

fn sweep_as<T: Scalar>(cfg: &JobConfig, weights: &[f64]) -> Result<(), CliError> {
    let out = cfg.require_output_dir()?;
    let fx = build_extractor::<T>(cfg)?;
    let inputs = load_inputs::<T>(cfg)?;
    create_dir(out)?;

    let mut resolved = cfg.clone();
    resolved.loss.lambda_style = 1.0;
    resolved.absolutize();
    resolved.write(&out.join(RESOLVED_CONFIG))?;

    let mut rows = Vec::with_capacity(weights.len());
    for &w in weights {
        let label = weight_label(w);
        let loss = LossConfig {
            lambda_content: w,
            lambda_style: 1.0,
            ..cfg.loss.clone()
        };
        let mut job = Transfer::new(&fx, &inputs.content, &inputs.style, &cfg.network, &loss, &cfg.training)?;
        drive(&mut job, &out.join(CHECKPOINT_DIR).join(&label), &format!("{label}: "))?;
        let run = job.finish()?;
        write_run(
            &run,
            &out.join(format!("{label}.png")),
            &out.join(format!("{label}_{HISTORY_FILE}")),
        )?;
        let b = &run.final_breakdown;
        rows.push(SweepRow {
            content_weight: w,
            style_weight: 1.0,
            total: b.total,
            content_raw: b.content.raw,
            content_weighted: b.content.weighted,
            style_raw: b.style.raw,
            style_weighted: b.style.weighted,
            tv_raw: b.tv.raw,
            tv_weighted: b.tv.weighted,
        });
    }
    let path = out.join(SWEEP_SUMMARY);
    let fail = |e: csv::Error| CliError::Runtime(format!("cannot write {}: {e}", path.display()));
    let mut w = csv::Writer::from_path(&path).map_err(fail)?;
    for row in &rows {
        w.serialize(row).map_err(fail)?;
    }
    w.flush()
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    info!("wrote {} images and {}", rows.len(), path.display());
    Ok(())
}

pub fn benchmark(cfg: &JobConfig, resolutions: &[(usize, usize)]) -> Result<(), CliError> {
    let resolutions = if resolutions.is_empty() {
        BENCHMARK_RESOLUTIONS.to_vec()
    } else {
        resolutions.to_vec()
    };
    validate_resolutions(&resolutions)?;
    match cfg.precision {
        Precision::F32 => benchmark_as::<f32>(cfg, &resolutions),
        Precision::F64 => benchmark_as::<f64>(cfg, &resolutions),
    }
}

fn benchmark_as<T: Scalar>(cfg: &JobConfig, resolutions: &[(usize, usize)]) -> Result<(), CliError> {
    let out = cfg.require_output_dir()?;
    let fx = build_extractor::<T>(cfg)?;
    create_dir(out)?;
    let report = run_benchmark(resolutions, cfg.training.steps, &cfg.network, &cfg.loss, &fx)?;
    let path = out.join(BENCHMARK_FILE);
    std::fs::write(&path, report.to_csv())
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    print!("{}", report.to_table());
    Ok(())
}

/// Grayscale and contour images of both inputs, and their contour similarity.
pub fn eval(content: &Path, stylized: &Path, out: Option<&Path>) -> Result<f64, CliError> {
    let load = |p: &Path| -> Result<Image64, CliError> {
        if !p.is_file() {
            return Err(CliError::Config(format!("image {} does not exist", p.display())));
        }
        Ok(load_image(p)?)
    };
    let (a, b) = (load(content)?, load(stylized)?);
    if a.dims() != b.dims() {
        return Err(CliError::Config(format!(
            "size mismatch: {} is {}x{}, {} is {}x{}",
            content.display(),
            a.height(),
            a.width(),
            stylized.display(),
            b.height(),
            b.width()
        )));
    }
    let (ga, gb) = (to_grayscale(&a), to_grayscale(&b));
    let (ea, eb) = (sobel_contour(ga.view())?, sobel_contour(gb.view())?);
    if let Some(out) = out {
        create_dir(out)?;
        let outputs = [
            ("content_gray.png", ga),
            ("content_contour.png", ea.max_normalized()),
            ("stylized_gray.png", gb),
            ("stylized_contour.png", eb.max_normalized()),
        ];
        for (name, map) in outputs {
            let path: PathBuf = out.join(name);
            photostyle::image_io::save_gray(map.view(), &path).map_err(runtime(&path))?;
        }
    }
    Ok(contour_similarity(&ea, &eb)?)
}
