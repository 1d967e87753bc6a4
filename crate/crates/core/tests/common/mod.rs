//! Fixtures, reference oracles and the per-criterion checks shared by the
//! integration tests and the acceptance report.
#![allow(dead_code)]

pub mod checks;
pub mod oracle;

use ndarray::{Array, Array3, Dimension, ShapeBuilder};
use photostyle::{load_image, ImageTensor, Scalar};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_array<D: Dimension, Sh: ShapeBuilder<Dim = D>>(
    rng: &mut ChaCha8Rng,
    shape: Sh,
    lo: f64,
    hi: f64,
) -> Array<f64, D> {
    Array::from_shape_simple_fn(shape, || rng.random_range(lo..hi))
}

pub fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> ImageTensor<f64> {
    ImageTensor::new(random_array(rng, (3, h, w), 0.05, 0.95), photostyle::RangeMode::Unit).unwrap()
}

pub fn asset(name: &str) -> String {
    format!("{}/assets/{name}", env!("CARGO_MANIFEST_DIR"))
}

/// The bundled 64x64 content/style pair.
pub fn smoke_pair<T: Scalar>() -> (ImageTensor<T>, ImageTensor<T>) {
    (
        load_image(asset("smoke_content_64.png")).unwrap(),
        load_image(asset("smoke_style_64.png")).unwrap(),
    )
}

/// `|a − b| / |b|`, with an absolute floor for reference values at zero.
pub fn scalar_rel_err(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    if b.abs() < 1e-300 {
        d
    } else {
        d / b.abs()
    }
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`; zero when both vectors vanish.
pub fn normwise_rel_err<'a>(a: impl IntoIterator<Item = &'a f64>, b: impl IntoIterator<Item = &'a f64>) -> f64 {
    let (mut dd, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.into_iter().zip(b) {
        dd += (x - y) * (x - y);
        aa += x * x;
        bb += y * y;
    }
    let scale = aa.max(bb).sqrt();
    if scale == 0.0 {
        0.0
    } else {
        dd.sqrt() / scale
    }
}

pub fn as3(a: &ndarray::ArrayD<f64>) -> Array3<f64> {
    a.clone().into_dimensionality().unwrap()
}
