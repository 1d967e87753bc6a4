//! Dense CPU kernels on `[C, H, W]` feature maps.
//!
//! Convolutions are lowered to GEMM through a banded im2col so the column
//! buffer stays bounded at large resolutions. Every forward kernel has a
//! matching adjoint used by the autograd tape.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Array3, Array4, ArrayView2, ArrayView3, ArrayView4, Axis};

use crate::scalar::Scalar;

/// Upper bound on im2col buffer elements per band.
const IM2COL_BUDGET: usize = 1 << 22;

/// Smallest plane (in pixels) for which the shifted-tap lowering is used.
const SHIFTED_MIN_PLANE: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub const fn same3() -> Self {
        Self {
            kernel: 3,
            stride: 1,
            padding: 1,
        }
    }

    pub const fn down3() -> Self {
        Self {
            kernel: 3,
            stride: 2,
            padding: 1,
        }
    }

    pub const fn pointwise() -> Self {
        Self {
            kernel: 1,
            stride: 1,
            padding: 0,
        }
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let oh = (h + 2 * self.padding - self.kernel) / self.stride + 1;
        let ow = (w + 2 * self.padding - self.kernel) / self.stride + 1;
        (oh, ow)
    }

    fn is_identity_lowering(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }

    /// Stride-1 kernels on large planes are evaluated as one GEMM per tap on
    /// shifted views of a padded copy of the input, with no im2col buffer.
    /// Small planes amortize better through a single im2col GEMM.
    fn is_shifted_lowering(&self, h: usize, w: usize) -> bool {
        self.stride == 1 && self.kernel > 1 && self.padding < self.kernel && h * w >= SHIFTED_MIN_PLANE
    }
}

fn band_rows(k_dim: usize, ow: usize, oh: usize) -> usize {
    (IM2COL_BUDGET / (k_dim * ow).max(1)).clamp(1, oh.max(1))
}

/// Fills `cols[K, (r1 - r0) * ow]` with the receptive fields of output rows `r0..r1`.
fn im2col_band<T: Scalar>(
    x: &[T],
    (cin, h, w): (usize, usize, usize),
    g: ConvGeometry,
    ow: usize,
    rows: (usize, usize),
    cols: &mut [T],
) {
    let (r0, r1) = rows;
    let band = (r1 - r0) * ow;
    let k = g.kernel;
    for ci in 0..cin {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * band..(row + 1) * band];
                for oy in r0..r1 {
                    let seg = &mut dst[(oy - r0) * ow..(oy - r0 + 1) * ow];
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= h as isize {
                        seg.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in seg.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        *d = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-adds `cols` back onto the input gradient; adjoint of [`im2col_band`].
fn col2im_band<T: Scalar>(
    cols: &[T],
    (cin, h, w): (usize, usize, usize),
    g: ConvGeometry,
    ow: usize,
    rows: (usize, usize),
    dx: &mut [T],
) {
    let (r0, r1) = rows;
    let band = (r1 - r0) * ow;
    let k = g.kernel;
    for ci in 0..cin {
        let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * band..(row + 1) * band];
                for oy in r0..r1 {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let seg = &src[(oy - r0) * ow..(oy - r0 + 1) * ow];
                    for (ox, &v) in seg.iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

fn weight_matrix<T: Scalar>(weight: &ArrayView4<'_, T>) -> Array2<T> {
    let (cout, cin, kh, kw) = weight.dim();
    weight
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((cout, cin * kh * kw))
        .expect("contiguous kernel")
}

/// Zero-padded copy of `x` flattened to `[C, (H + 2p) * (W + 2p) + k - 1]`;
/// the tail lets every tap view a full `oh * wp` window.
fn pad_flat<T: Scalar>(x: ArrayView3<'_, T>, p: usize, k: usize) -> (Array2<T>, usize) {
    let (c, h, w) = x.dim();
    let (hp, wp) = (h + 2 * p, w + 2 * p);
    let mut xp = Array2::<T>::zeros((c, hp * wp + k - 1));
    for (ci, plane) in x.outer_iter().enumerate() {
        let mut row = xp.row_mut(ci);
        for (y, src) in plane.outer_iter().enumerate() {
            let start = (y + p) * wp + p;
            row.slice_mut(s![start..start + w]).assign(&src);
        }
    }
    (xp, wp)
}

/// Stride-1 correlation over a padded flat input; `tap(ky, kx)` yields the
/// `[Cout, Cin]` mixing matrix for that kernel offset.
fn shifted_conv<'w, T: Scalar>(
    xp: &Array2<T>,
    wp: usize,
    cout: usize,
    k: usize,
    (oh, ow): (usize, usize),
    tap: impl Fn(usize, usize) -> ArrayView2<'w, T>,
) -> Array3<T> {
    let mut acc = Array2::<T>::zeros((cout, oh * wp));
    for ky in 0..k {
        for kx in 0..k {
            let off = ky * wp + kx;
            let b = xp.slice(s![.., off..off + oh * wp]);
            general_mat_mul(T::one(), &tap(ky, kx), &b, T::one(), &mut acc);
        }
    }
    let acc = acc.into_shape_with_order((cout, oh, wp)).expect("shape");
    acc.slice_move(s![.., .., ..ow]).as_standard_layout().into_owned()
}

/// Cross-correlation with zero padding: `x[Cin,H,W] * weight[Cout,Cin,k,k] + bias`.
pub fn conv2d<T: Scalar>(
    x: ArrayView3<'_, T>,
    weight: ArrayView4<'_, T>,
    bias: Option<&Array1<T>>,
    g: ConvGeometry,
) -> Array3<T> {
    let (cin, h, w) = x.dim();
    let (cout, wcin, kh, kw) = weight.dim();
    assert_eq!(cin, wcin, "conv2d input channels");
    assert!(kh == g.kernel && kw == g.kernel, "conv2d kernel size");
    let (oh, ow) = g.output_size(h, w);
    if g.is_shifted_lowering(h, w) {
        let (xp, wp) = pad_flat(x, g.padding, g.kernel);
        let mut out = shifted_conv(&xp, wp, cout, g.kernel, (oh, ow), |ky, kx| {
            weight.slice_move(s![.., .., ky, kx])
        });
        if let Some(b) = bias {
            for (mut plane, &bv) in out.outer_iter_mut().zip(b.iter()) {
                plane.mapv_inplace(|v| v + bv);
            }
        }
        return out;
    }
    let wmat = weight_matrix(&weight);
    let xs = x.as_standard_layout();
    let mut out = Array2::<T>::zeros((cout, oh * ow));

    if g.is_identity_lowering() {
        let xm = xs.view().into_shape_with_order((cin, h * w)).expect("contiguous");
        general_mat_mul(T::one(), &wmat, &xm, T::zero(), &mut out);
    } else {
        let k_dim = cin * g.kernel * g.kernel;
        let step = band_rows(k_dim, ow, oh);
        let xsl = xs.as_slice().expect("standard layout");
        let mut buf = vec![T::zero(); k_dim * step * ow];
        let mut r0 = 0;
        while r0 < oh {
            let r1 = (r0 + step).min(oh);
            let band = (r1 - r0) * ow;
            let cols = &mut buf[..k_dim * band];
            im2col_band(xsl, (cin, h, w), g, ow, (r0, r1), cols);
            let cm = ArrayView2::from_shape((k_dim, band), cols).expect("band shape");
            let mut dst = out.slice_mut(s![.., r0 * ow..r1 * ow]);
            general_mat_mul(T::one(), &wmat, &cm, T::zero(), &mut dst);
            r0 = r1;
        }
    }
    if let Some(b) = bias {
        for (mut row, &bv) in out.axis_iter_mut(Axis(0)).zip(b.iter()) {
            row.mapv_inplace(|v| v + bv);
        }
    }
    out.into_shape_with_order((cout, oh, ow)).expect("output shape")
}

/// Gradient of [`conv2d`] with respect to its input.
pub fn conv2d_backward_input<T: Scalar>(
    dout: ArrayView3<'_, T>,
    weight: ArrayView4<'_, T>,
    input_dim: (usize, usize, usize),
    g: ConvGeometry,
) -> Array3<T> {
    let (cin, h, w) = input_dim;
    let (cout, oh, ow) = dout.dim();
    if g.is_shifted_lowering(h, w) {
        // Full correlation of the output gradient with the flipped, transposed kernel.
        let k = g.kernel;
        let (dp, wp) = pad_flat(dout, k - 1 - g.padding, k);
        return shifted_conv(&dp, wp, cin, k, (h, w), |ky, kx| {
            weight.slice_move(s![.., .., k - 1 - ky, k - 1 - kx]).reversed_axes()
        });
    }
    let wmat = weight_matrix(&weight);
    let wt = wmat.t();
    let d = dout.as_standard_layout();
    let dm = d.view().into_shape_with_order((cout, oh * ow)).expect("contiguous");

    if g.is_identity_lowering() {
        let mut dx = Array2::<T>::zeros((cin, h * w));
        general_mat_mul(T::one(), &wt, &dm, T::zero(), &mut dx);
        return dx.into_shape_with_order((cin, h, w)).expect("shape");
    }

    let k_dim = cin * g.kernel * g.kernel;
    let step = band_rows(k_dim, ow, oh);
    let mut dx = vec![T::zero(); cin * h * w];
    let mut buf = Array2::<T>::zeros((k_dim, step * ow));
    let mut r0 = 0;
    while r0 < oh {
        let r1 = (r0 + step).min(oh);
        let band = (r1 - r0) * ow;
        let mut cols = buf.slice_mut(s![.., ..band]);
        general_mat_mul(T::one(), &wt, &dm.slice(s![.., r0 * ow..r1 * ow]), T::zero(), &mut cols);
        let packed = cols.as_standard_layout();
        col2im_band(
            packed.as_slice().expect("standard layout"),
            (cin, h, w),
            g,
            ow,
            (r0, r1),
            &mut dx,
        );
        r0 = r1;
    }
    Array3::from_shape_vec((cin, h, w), dx).expect("shape")
}

/// Gradients of [`conv2d`] with respect to its kernel and bias.
pub fn conv2d_backward_params<T: Scalar>(
    dout: ArrayView3<'_, T>,
    x: ArrayView3<'_, T>,
    weight_dim: (usize, usize, usize, usize),
    g: ConvGeometry,
) -> (Array4<T>, Array1<T>) {
    let (cin, h, w) = x.dim();
    let (cout, oh, ow) = dout.dim();
    let d = dout.as_standard_layout();
    let dm = d.view().into_shape_with_order((cout, oh * ow)).expect("contiguous");
    let dbias = dm.sum_axis(Axis(1));
    let k_dim = cin * g.kernel * g.kernel;
    if g.is_shifted_lowering(h, w) {
        let k = g.kernel;
        let (xp, wp) = pad_flat(x, g.padding, k);
        // Output gradient laid out on the padded row pitch, junk columns zero.
        let mut dpad = Array3::<T>::zeros((cout, oh, wp));
        dpad.slice_mut(s![.., .., ..ow]).assign(&dout);
        let dpad = dpad.into_shape_with_order((cout, oh * wp)).expect("shape");
        let mut dw = Array4::<T>::zeros(weight_dim);
        for ky in 0..k {
            for kx in 0..k {
                let off = ky * wp + kx;
                let b = xp.slice(s![.., off..off + oh * wp]);
                let mut dst = dw.slice_mut(s![.., .., ky, kx]);
                general_mat_mul(T::one(), &dpad, &b.t(), T::zero(), &mut dst);
            }
        }
        return (dw, dbias);
    }
    let mut dw = Array2::<T>::zeros((cout, k_dim));
    let xs = x.as_standard_layout();

    if g.is_identity_lowering() {
        let xm = xs.view().into_shape_with_order((cin, h * w)).expect("contiguous");
        general_mat_mul(T::one(), &dm, &xm.t(), T::zero(), &mut dw);
    } else {
        let step = band_rows(k_dim, ow, oh);
        let xsl = xs.as_slice().expect("standard layout");
        let mut buf = vec![T::zero(); k_dim * step * ow];
        let mut r0 = 0;
        while r0 < oh {
            let r1 = (r0 + step).min(oh);
            let band = (r1 - r0) * ow;
            let cols = &mut buf[..k_dim * band];
            im2col_band(xsl, (cin, h, w), g, ow, (r0, r1), cols);
            let cm = ArrayView2::from_shape((k_dim, band), cols).expect("band shape");
            general_mat_mul(
                T::one(),
                &dm.slice(s![.., r0 * ow..r1 * ow]),
                &cm.t(),
                T::one(),
                &mut dw,
            );
            r0 = r1;
        }
    }
    let dw = dw.into_shape_with_order(weight_dim).expect("kernel shape");
    (dw, dbias)
}

/// 2x2 max pooling with stride 2 (floor semantics on odd sizes).
pub fn max_pool2<T: Scalar>(x: ArrayView3<'_, T>) -> Array3<T> {
    let (c, h, w) = x.dim();
    let (oh, ow) = (h / 2, w / 2);
    Array3::from_shape_fn((c, oh, ow), |(ci, y, xx)| {
        let (y0, x0) = (2 * y, 2 * xx);
        let a = x[[ci, y0, x0]];
        let b = x[[ci, y0, x0 + 1]];
        let cc = x[[ci, y0 + 1, x0]];
        let d = x[[ci, y0 + 1, x0 + 1]];
        a.max(b).max(cc.max(d))
    })
}

/// Routes each pooled gradient to the first maximal element of its window.
pub fn max_pool2_backward<T: Scalar>(x: ArrayView3<'_, T>, dout: ArrayView3<'_, T>) -> Array3<T> {
    let mut dx = Array3::<T>::zeros(x.dim());
    let (c, oh, ow) = dout.dim();
    for ci in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                let (y0, x0) = (2 * y, 2 * xx);
                let mut best = (y0, x0);
                for (dy, dx_) in [(0, 1), (1, 0), (1, 1)] {
                    if x[[ci, y0 + dy, x0 + dx_]] > x[[ci, best.0, best.1]] {
                        best = (y0 + dy, x0 + dx_);
                    }
                }
                dx[[ci, best.0, best.1]] += dout[[ci, y, xx]];
            }
        }
    }
    dx
}

/// Half-pixel-centred bilinear sampling table for one axis: `(i0, i1, frac)`.
fn bilinear_axis(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear resampling of every channel to `(out_h, out_w)`.
pub fn resize_bilinear<T: Scalar>(x: ArrayView3<'_, T>, out_h: usize, out_w: usize) -> Array3<T> {
    let (c, h, w) = x.dim();
    if (h, w) == (out_h, out_w) {
        return x.to_owned();
    }
    let ys = bilinear_axis(h, out_h);
    let xs = bilinear_axis(w, out_w);
    let mut out = Array3::<T>::zeros((c, out_h, out_w));
    for ci in 0..c {
        let plane = x.index_axis(Axis(0), ci);
        let mut dst = out.index_axis_mut(Axis(0), ci);
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            let fy = T::lit(fy);
            let gy = T::one() - fy;
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let fx = T::lit(fx);
                let gx = T::one() - fx;
                let top = plane[[y0, x0]] * gx + plane[[y0, x1]] * fx;
                let bot = plane[[y1, x0]] * gx + plane[[y1, x1]] * fx;
                dst[[oy, ox]] = top * gy + bot * fy;
            }
        }
    }
    out
}

/// Adjoint of [`resize_bilinear`].
pub fn resize_bilinear_backward<T: Scalar>(dout: ArrayView3<'_, T>, in_h: usize, in_w: usize) -> Array3<T> {
    let (c, oh, ow) = dout.dim();
    if (in_h, in_w) == (oh, ow) {
        return dout.to_owned();
    }
    let ys = bilinear_axis(in_h, oh);
    let xs = bilinear_axis(in_w, ow);
    let mut dx = Array3::<T>::zeros((c, in_h, in_w));
    for ci in 0..c {
        let src = dout.index_axis(Axis(0), ci);
        let mut dst = dx.index_axis_mut(Axis(0), ci);
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            let fy = T::lit(fy);
            let gy = T::one() - fy;
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let fx = T::lit(fx);
                let gx = T::one() - fx;
                let g = src[[oy, ox]];
                dst[[y0, x0]] += g * gy * gx;
                dst[[y0, x1]] += g * gy * fx;
                dst[[y1, x0]] += g * fy * gx;
                dst[[y1, x1]] += g * fy * fx;
            }
        }
    }
    dx
}
