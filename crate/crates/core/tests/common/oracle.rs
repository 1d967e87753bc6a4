//! Brute-force double-precision reference implementations. Plain nested
//! loops over explicit indices, independent of the library's kernels.

use ndarray::{Array1, Array2, Array3, Array4};

pub fn content_loss(y: &Array3<f64>, yhat: &Array3<f64>) -> f64 {
    let (c, h, w) = y.dim();
    let mut sum = 0.0;
    for ci in 0..c {
        for hi in 0..h {
            for wi in 0..w {
                let d = yhat[[ci, hi, wi]] - y[[ci, hi, wi]];
                sum += d * d;
            }
        }
    }
    sum / (c * h * w) as f64
}

pub fn gram(f: &Array3<f64>) -> Array2<f64> {
    let (c, h, w) = f.dim();
    let mut g = Array2::zeros((c, c));
    for a in 0..c {
        for b in 0..c {
            let mut s = 0.0;
            for hi in 0..h {
                for wi in 0..w {
                    s += f[[a, hi, wi]] * f[[b, hi, wi]];
                }
            }
            g[[a, b]] = s / (c * h * w) as f64;
        }
    }
    g
}

pub fn style_loss_layer(y: &Array3<f64>, yhat: &Array3<f64>) -> f64 {
    let (gy, gh) = (gram(y), gram(yhat));
    let c = gy.dim().0;
    let mut s = 0.0;
    for a in 0..c {
        for b in 0..c {
            let d = gy[[a, b]] - gh[[a, b]];
            s += d * d;
        }
    }
    s
}

pub fn tv_loss(x: &Array3<f64>) -> f64 {
    let (c, h, w) = x.dim();
    let (mut sh, mut nh, mut sv, mut nv) = (0.0, 0usize, 0.0, 0usize);
    for ci in 0..c {
        for hi in 0..h {
            for wi in 0..w {
                if wi + 1 < w {
                    let d = x[[ci, hi, wi + 1]] - x[[ci, hi, wi]];
                    sh += d * d;
                    nh += 1;
                }
                if hi + 1 < h {
                    let d = x[[ci, hi + 1, wi]] - x[[ci, hi, wi]];
                    sv += d * d;
                    nv += 1;
                }
            }
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    mean(sh, nh) + mean(sv, nv)
}

/// Zero-padded cross-correlation.
pub fn conv2d(x: &Array3<f64>, weight: &Array4<f64>, bias: &Array1<f64>, stride: usize, padding: usize) -> Array3<f64> {
    let (cin, h, w) = x.dim();
    let (cout, _, k, _) = weight.dim();
    let oh = (h + 2 * padding - k) / stride + 1;
    let ow = (w + 2 * padding - k) / stride + 1;
    let mut out = Array3::zeros((cout, oh, ow));
    for co in 0..cout {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut s = bias[co];
                for ci in 0..cin {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * stride + ky) as isize - padding as isize;
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                s += weight[[co, ci, ky, kx]] * x[[ci, iy as usize, ix as usize]];
                            }
                        }
                    }
                }
                out[[co, oy, ox]] = s;
            }
        }
    }
    out
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn symmetric_eigenvalues(m: &Array2<f64>) -> Vec<f64> {
    let n = m.dim().0;
    let mut a = m.clone();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[[i, j]] * a[[i, j]])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[[p, q]].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * a[[p, q]]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[[k, p]], a[[k, q]]);
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[[p, k]], a[[q, k]]);
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[[i, i]]).collect()
}
