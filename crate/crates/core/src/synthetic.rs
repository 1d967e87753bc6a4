//! Closed-form test scenes. Deterministic for any size, no RNG involved
//! except in [`uniform_noise`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image_io::ImageTensor;
use crate::scalar::Scalar;

fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

/// A daylight scene: sky gradient, sun disc, a house with a dark door and
/// window, and a grass band. Has strong horizontal and vertical edges.
pub fn content_scene<T: Scalar>(height: usize, width: usize) -> ImageTensor<T> {
    let (hf, wf) = (height as f64, width as f64);
    ImageTensor::from_fn(height, width, |(c, y, x)| {
        let (u, v) = ((x as f64 + 0.5) / wf, (y as f64 + 0.5) / hf);
        let sky = [0.35 + 0.3 * v, 0.55 + 0.25 * v, 0.95 - 0.1 * v];
        let sun = ((u - 0.78).powi(2) + (v - 0.2).powi(2)).sqrt() < 0.09;
        let ground = v > 0.72;
        let house = (0.18..0.55).contains(&u) && (0.38..0.78).contains(&v);
        let roof = (0.14..0.59).contains(&u) && (0.26..0.38).contains(&v) && (v - 0.26) > (0.365 - u).abs() * 0.5;
        let door = (0.3..0.38).contains(&u) && (0.58..0.78).contains(&v);
        let window = (0.43..0.51).contains(&u) && (0.46..0.56).contains(&v);
        let px = if door {
            [0.25, 0.15, 0.1]
        } else if window {
            [0.15, 0.2, 0.35]
        } else if house {
            [0.85, 0.8, 0.65]
        } else if roof {
            [0.6, 0.2, 0.15]
        } else if ground {
            [0.25, 0.55 + 0.1 * (u * 12.0).sin(), 0.2]
        } else if sun {
            [1.0, 0.95, 0.6]
        } else {
            sky
        };
        T::lit(clamp01(px[c]))
    })
    .expect("values in range")
}

/// A dusk palette: warm horizon gradient with soft diagonal banding.
pub fn style_palette<T: Scalar>(height: usize, width: usize) -> ImageTensor<T> {
    let (hf, wf) = (height as f64, width as f64);
    ImageTensor::from_fn(height, width, |(c, y, x)| {
        let (u, v) = ((x as f64 + 0.5) / wf, (y as f64 + 0.5) / hf);
        let band = 0.06 * ((u + v) * 9.0).sin();
        let px = [
            0.9 - 0.35 * v + band,
            0.45 + 0.2 * (1.0 - v) * u + 0.5 * band,
            0.3 + 0.35 * v - band,
        ];
        T::lit(clamp01(px[c]))
    })
    .expect("values in range")
}

/// Independent uniform `[0, 1)` samples per channel and pixel.
pub fn uniform_noise<T: Scalar>(height: usize, width: usize, seed: u64) -> ImageTensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ImageTensor::from_fn(height, width, |_| T::lit(rng.random::<f64>())).expect("values in range")
}
