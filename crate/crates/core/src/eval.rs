//! Structure-preservation metrics and the runtime benchmark.

use std::fmt::Write as _;
use std::time::Instant;

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extractor::FeatureExtractor;
use crate::image_io::ImageTensor;
use crate::loss::LossConfig;
use crate::network::GenerationNetworkSpec;
use crate::scalar::Scalar;
use crate::synthetic;
use crate::trainer::{run_transfer, TrainingConfig};

/// Rec.601 luma weights.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// Default benchmark ladder.
pub const BENCHMARK_RESOLUTIONS: [(usize, usize); 3] = [(128, 128), (256, 256), (512, 512)];

/// Luminance of a unit-range image.
pub fn to_grayscale<T: Scalar>(img: &ImageTensor<T>) -> Array2<T> {
    let d = img.data();
    let [wr, wg, wb] = LUMA_WEIGHTS.map(T::lit);
    Array2::from_shape_fn(img.dims(), |(y, x)| {
        (wr * d[[0, y, x]] + wg * d[[1, y, x]] + wb * d[[2, y, x]]).min(T::one())
    })
}

/// Sobel gradient magnitudes, non-negative, same size as the source.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeMap<T> {
    pub data: Array2<T>,
}

impl<T: Scalar> EdgeMap<T> {
    pub fn dims(&self) -> (usize, usize) {
        self.data.dim()
    }

    pub fn max(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &v| m.max(v))
    }

    /// Scaled so the strongest edge is 1 (all-zero maps stay zero).
    pub fn max_normalized(&self) -> Array2<T> {
        let m = self.max();
        if m > T::zero() {
            self.data.mapv(|v| v / m)
        } else {
            self.data.clone()
        }
    }
}

/// `sqrt(Gx² + Gy²)` with 3x3 Sobel kernels and replicate padding.
pub fn sobel_contour<T: Scalar>(gray: ArrayView2<'_, T>) -> Result<EdgeMap<T>> {
    let (h, w) = gray.dim();
    if h < 3 || w < 3 {
        return Err(Error::TooSmall {
            height: h,
            width: w,
            min: 3,
        });
    }
    let two = T::lit(2.0);
    let at = |y: isize, x: isize| gray[[y.clamp(0, h as isize - 1) as usize, x.clamp(0, w as isize - 1) as usize]];
    // Kernels evaluated as differences so flat regions give exactly zero.
    let data = Array2::from_shape_fn((h, w), |(y, x)| {
        let (y, x) = (y as isize, x as isize);
        let gx = (at(y - 1, x + 1) - at(y - 1, x - 1))
            + two * (at(y, x + 1) - at(y, x - 1))
            + (at(y + 1, x + 1) - at(y + 1, x - 1));
        let gy = (at(y + 1, x - 1) - at(y - 1, x - 1))
            + two * (at(y + 1, x) - at(y - 1, x))
            + (at(y + 1, x + 1) - at(y - 1, x + 1));
        (gx * gx + gy * gy).sqrt()
    });
    Ok(EdgeMap { data })
}

/// Normalized cross-correlation (means removed) of the two max-normalized
/// edge maps, clamped into `[0, 1]`; anti-correlated maps score 0.
/// Two empty maps score 1; an empty map against a non-empty one scores 0.
/// A spatially constant map has no structure to correlate and scores 1 only
/// against an identical map.
pub fn contour_similarity<T: Scalar>(a: &EdgeMap<T>, b: &EdgeMap<T>) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::ShapeMismatch {
            left: a.data.shape().to_vec(),
            right: b.data.shape().to_vec(),
        });
    }
    let (za, zb) = (a.max() <= T::zero(), b.max() <= T::zero());
    match (za, zb) {
        (true, true) => return Ok(1.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let na = a.max_normalized().mapv(|v| v.as_f64());
    let nb = b.max_normalized().mapv(|v| v.as_f64());
    let (ma, mb) = (na.mean().unwrap_or(0.0), nb.mean().unwrap_or(0.0));
    let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    Zip::from(&na).and(&nb).for_each(|&x, &y| {
        let (x, y) = (x - ma, y - mb);
        ab += x * y;
        aa += x * x;
        bb += y * y;
    });
    if aa == 0.0 || bb == 0.0 {
        return Ok(if na == nb { 1.0 } else { 0.0 });
    }
    Ok((ab / (aa.sqrt() * bb.sqrt())).clamp(0.0, 1.0))
}

/// Grayscale → Sobel → similarity in one call.
pub fn structure_score<T: Scalar>(reference: &ImageTensor<T>, candidate: &ImageTensor<T>) -> Result<f64> {
    if reference.dims() != candidate.dims() {
        return Err(Error::ShapeMismatch {
            left: reference.shape().to_vec(),
            right: candidate.shape().to_vec(),
        });
    }
    let a = sobel_contour(to_grayscale(reference).view())?;
    let b = sobel_contour(to_grayscale(candidate).view())?;
    contour_similarity(&a, &b)
}

/// Half the L1 distance between normalized grayscale histograms (in `[0, 1]`).
/// Auxiliary statistic for comparing tonal distributions; not a gate.
pub fn grayscale_histogram_distance<T: Scalar>(a: ArrayView2<'_, T>, b: ArrayView2<'_, T>, bins: usize) -> f64 {
    let hist = |g: ArrayView2<'_, T>| {
        let mut h = vec![0.0f64; bins];
        for &v in g.iter() {
            let i = ((v.as_f64().clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
            h[i] += 1.0;
        }
        let n = g.len().max(1) as f64;
        h.iter_mut().for_each(|c| *c /= n);
        h
    };
    let (ha, hb) = (hist(a), hist(b));
    0.5 * ha.iter().zip(&hb).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub height: usize,
    pub width: usize,
    pub steps: usize,
    pub wall_seconds: f64,
    pub device: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub rows: Vec<BenchmarkRow>,
}

impl BenchmarkReport {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:>11}  {:>6}  {:>12}  device", "resolution", "steps", "seconds");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:>11}  {:>6}  {:>12.3}  {}",
                format!("{}x{}", r.height, r.width),
                r.steps,
                r.wall_seconds,
                r.device
            );
        }
        s
    }
}

/// CPU model and thread count of the machine running the benchmark.
pub fn device_descriptor() -> String {
    let model = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|info| {
            info.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        })
        .unwrap_or_else(|| std::env::consts::ARCH.to_string());
    format!("cpu {model}, 1 thread")
}

/// Every benchmark resolution must be non-empty and divisible by 4.
pub fn validate_resolutions(resolutions: &[(usize, usize)]) -> Result<()> {
    for &(height, width) in resolutions {
        if height == 0 || width == 0 || height % 4 != 0 || width % 4 != 0 {
            return Err(Error::InvalidTarget { height, width });
        }
    }
    Ok(())
}

/// Times a full transfer per resolution on synthetic content/style images.
/// Runs sequentially.
pub fn run_benchmark<T: Scalar>(
    resolutions: &[(usize, usize)],
    steps: usize,
    net_spec: &GenerationNetworkSpec,
    loss_cfg: &LossConfig,
    fx: &FeatureExtractor<T>,
) -> Result<BenchmarkReport> {
    validate_resolutions(resolutions)?;
    let device = device_descriptor();
    let train = TrainingConfig {
        steps,
        record_wall_time: false,
        ..TrainingConfig::default()
    };
    let mut rows = Vec::with_capacity(resolutions.len());
    for &(height, width) in resolutions {
        let content = synthetic::content_scene::<T>(height, width);
        let style = synthetic::style_palette::<T>(height, width);
        let started = Instant::now();
        run_transfer(&content, &style, net_spec, loss_cfg, &train, fx)?;
        let wall_seconds = started.elapsed().as_secs_f64();
        log::info!("benchmark {height}x{width}: {wall_seconds:.3}s");
        rows.push(BenchmarkRow {
            height,
            width,
            steps,
            wall_seconds,
            device: device.clone(),
        });
    }
    Ok(BenchmarkReport { rows })
}
