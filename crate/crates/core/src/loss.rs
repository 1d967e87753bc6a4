//! Perceptual objective: content distance, Gram-matrix style distance and
//! a total-variation smoothness term.

use std::collections::BTreeMap;
use std::sync::Arc;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Array3, ArrayView2, ArrayView3, Zip};
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::extractor::FeatureExtractor;
use crate::image_io::{self, ImageTensor};
use crate::scalar::Scalar;

/// Activations of one named extractor layer, `[C, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<T> {
    pub layer: String,
    pub data: Array3<T>,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn new(layer: impl Into<String>, data: Array3<T>) -> Result<Self> {
        let (c, h, w) = data.dim();
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::ShapeMismatch {
                left: vec![c, h, w],
                right: vec![c.max(1), h.max(1), w.max(1)],
            });
        }
        Ok(Self {
            layer: layer.into(),
            data,
        })
    }

    pub fn shape(&self) -> [usize; 3] {
        let (c, h, w) = self.data.dim();
        [c, h, w]
    }

    pub fn channels(&self) -> usize {
        self.data.dim().0
    }
}

pub type FeatureSet<T> = BTreeMap<String, FeatureMap<T>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub content_layer: String,
    pub style_layers: BTreeMap<String, f64>,
    pub lambda_content: f64,
    pub lambda_style: f64,
    pub lambda_tv: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        let style_layers = [
            ("conv1_1", 0.1),
            ("conv2_1", 0.2),
            ("conv3_1", 0.4),
            ("conv4_1", 0.8),
            ("conv5_1", 1.6),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        Self {
            content_layer: "conv4_2".into(),
            style_layers,
            lambda_content: 80.0,
            lambda_style: 1.0,
            lambda_tv: 1e-6,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.style_layers.is_empty() {
            return Err(Error::InvalidConfig("style_layers must not be empty".into()));
        }
        let weights = self
            .style_layers
            .iter()
            .map(|(name, w)| (format!("style weight for {name}"), *w))
            .chain([
                ("lambda_content".to_string(), self.lambda_content),
                ("lambda_style".to_string(), self.lambda_style),
                ("lambda_tv".to_string(), self.lambda_tv),
            ]);
        for (what, w) in weights {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::InvalidConfig(format!("{what} must be finite and >= 0, got {w}")));
            }
        }
        Ok(())
    }

    /// Every extractor layer the objective reads.
    pub fn required_layers(&self) -> Vec<String> {
        let mut layers: Vec<String> = self.style_layers.keys().cloned().collect();
        if !layers.contains(&self.content_layer) {
            layers.push(self.content_layer.clone());
        }
        layers
    }
}

fn check_same_shape<T: Scalar>(a: ArrayView3<'_, T>, b: ArrayView3<'_, T>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch {
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(())
}

pub(crate) fn content_loss_unchecked<T: Scalar>(y: ArrayView3<'_, T>, yhat: ArrayView3<'_, T>) -> T {
    let sum = Zip::from(&yhat).and(&y).fold(T::zero(), |acc, &a, &b| {
        let d = a - b;
        acc + d * d
    });
    sum / T::from_usize_lossy(y.len())
}

/// `‖φ(ŷ) − φ(y)‖² / (C·H·W)`.
pub fn content_loss<T: Scalar>(y: &FeatureMap<T>, yhat: &FeatureMap<T>) -> Result<T> {
    check_same_shape(y.data.view(), yhat.data.view())?;
    Ok(content_loss_unchecked(y.data.view(), yhat.data.view()))
}

/// `G = ψψᵀ / (C·H·W)` with `ψ` the `[C, H·W]` flattening.
pub fn gram_matrix<T: Scalar>(feat: ArrayView3<'_, T>) -> Array2<T> {
    let (c, h, w) = feat.dim();
    let std = feat.as_standard_layout();
    let psi = std.view().into_shape_with_order((c, h * w)).expect("contiguous");
    let mut g = Array2::<T>::zeros((c, c));
    let norm = T::one() / T::from_usize_lossy(c * h * w);
    general_mat_mul(norm, &psi, &psi.t(), T::zero(), &mut g);
    g
}

/// Gradient of `⟨dG, G(ψ)⟩` with respect to the features: `(dG + dGᵀ)ψ / (C·H·W)`.
pub fn gram_matrix_backward<T: Scalar>(feat: ArrayView3<'_, T>, dgram: ArrayView2<'_, T>) -> Array3<T> {
    let (c, h, w) = feat.dim();
    let std = feat.as_standard_layout();
    let psi = std.view().into_shape_with_order((c, h * w)).expect("contiguous");
    let sym = &dgram + &dgram.t();
    let mut out = Array2::<T>::zeros((c, h * w));
    let norm = T::one() / T::from_usize_lossy(c * h * w);
    general_mat_mul(norm, &sym, &psi, T::zero(), &mut out);
    out.into_shape_with_order((c, h, w)).expect("shape")
}

pub(crate) fn frobenius_sq_diff<T: Scalar>(a: ArrayView2<'_, T>, b: ArrayView2<'_, T>) -> T {
    Zip::from(&a).and(&b).fold(T::zero(), |acc, &x, &y| {
        let d = x - y;
        acc + d * d
    })
}

/// `‖G(y) − G(ŷ)‖²_F`. Spatial sizes may differ; channel counts may not.
pub fn style_loss_layer<T: Scalar>(y: &FeatureMap<T>, yhat: &FeatureMap<T>) -> Result<T> {
    if y.channels() != yhat.channels() {
        return Err(Error::ChannelMismatch {
            left: y.channels(),
            right: yhat.channels(),
        });
    }
    let gy = gram_matrix(y.data.view());
    let gyhat = gram_matrix(yhat.data.view());
    Ok(frobenius_sq_diff(gy.view(), gyhat.view()))
}

/// `Σ_l w_l · style_loss_layer(y_l, ŷ_l)` over the configured style layers.
pub fn total_style_loss<T: Scalar>(
    feats_y: &FeatureSet<T>,
    feats_yhat: &FeatureSet<T>,
    config: &LossConfig,
) -> Result<T> {
    let mut total = T::zero();
    for (layer, &weight) in &config.style_layers {
        let y = feats_y.get(layer).ok_or_else(|| Error::MissingLayer(layer.clone()))?;
        let yhat = feats_yhat
            .get(layer)
            .ok_or_else(|| Error::MissingLayer(layer.clone()))?;
        total += T::lit(weight) * style_loss_layer(y, yhat)?;
    }
    Ok(total)
}

/// Mean squared horizontal difference plus mean squared vertical difference.
/// A direction with no neighbour pairs contributes zero.
pub(crate) fn tv_loss_view<T: Scalar>(x: ArrayView3<'_, T>) -> T {
    let (c, h, w) = x.dim();
    let mut dh = T::zero();
    let mut dv = T::zero();
    for ci in 0..c {
        for y in 0..h {
            for xx in 0..w {
                let v = x[[ci, y, xx]];
                if xx + 1 < w {
                    let d = x[[ci, y, xx + 1]] - v;
                    dh += d * d;
                }
                if y + 1 < h {
                    let d = x[[ci, y + 1, xx]] - v;
                    dv += d * d;
                }
            }
        }
    }
    let nh = c * h * w.saturating_sub(1);
    let nv = c * h.saturating_sub(1) * w;
    let mean = |s: T, n: usize| if n == 0 { T::zero() } else { s / T::from_usize_lossy(n) };
    mean(dh, nh) + mean(dv, nv)
}

pub(crate) fn tv_loss_grad<T: Scalar>(x: ArrayView3<'_, T>) -> Array3<T> {
    let (c, h, w) = x.dim();
    let nh = c * h * w.saturating_sub(1);
    let nv = c * h.saturating_sub(1) * w;
    let two = T::lit(2.0);
    let kh = if nh == 0 {
        T::zero()
    } else {
        two / T::from_usize_lossy(nh)
    };
    let kv = if nv == 0 {
        T::zero()
    } else {
        two / T::from_usize_lossy(nv)
    };
    let mut g = Array3::<T>::zeros((c, h, w));
    for ci in 0..c {
        for y in 0..h {
            for xx in 0..w {
                let v = x[[ci, y, xx]];
                if xx + 1 < w {
                    let d = (x[[ci, y, xx + 1]] - v) * kh;
                    g[[ci, y, xx + 1]] += d;
                    g[[ci, y, xx]] -= d;
                }
                if y + 1 < h {
                    let d = (x[[ci, y + 1, xx]] - v) * kv;
                    g[[ci, y + 1, xx]] += d;
                    g[[ci, y, xx]] -= d;
                }
            }
        }
    }
    g
}

pub fn tv_loss<T: Scalar>(img: &ImageTensor<T>) -> T {
    tv_loss_view(img.data().view())
}

/// One objective term before and after its weight is applied.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub raw: f64,
    pub weighted: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub content: Term,
    /// `raw` here is the layer-weighted style sum, before `lambda_style`.
    pub style: Term,
    pub tv: Term,
    /// Unweighted per-layer style distances.
    pub style_layers: BTreeMap<String, f64>,
}

/// Fixed targets of the objective: content features at the content layer
/// and the style image's Gram matrices. Computed once per job.
#[derive(Clone, Debug)]
pub struct LossTargets<T> {
    pub content_features: Arc<Array3<T>>,
    pub style_grams: BTreeMap<String, Arc<Array2<T>>>,
}

/// Scalar nodes for each term of an objective built on a graph.
#[derive(Clone, Debug)]
pub struct LossNodes {
    pub total: Var,
    pub content: Var,
    pub style_layers: Vec<(String, Var)>,
    pub tv: Var,
}

impl<T: Scalar> LossTargets<T> {
    /// Both images are in unit range; normalization happens here.
    pub fn new(
        fx: &FeatureExtractor<T>,
        content: &ImageTensor<T>,
        style: &ImageTensor<T>,
        config: &LossConfig,
    ) -> Result<Self> {
        config.validate()?;
        let content_feats = fx.extract(&image_io::normalize(content)?, &[config.content_layer.as_str()])?;
        let style_names: Vec<&str> = config.style_layers.keys().map(String::as_str).collect();
        let style_feats = fx.extract(&image_io::normalize(style)?, &style_names)?;
        let content_features = content_feats
            .into_values()
            .next()
            .map(|f| Arc::new(f.data))
            .ok_or_else(|| Error::MissingLayer(config.content_layer.clone()))?;
        let style_grams = style_feats
            .into_iter()
            .map(|(name, f)| (name, Arc::new(gram_matrix(f.data.view()))))
            .collect();
        Ok(Self {
            content_features,
            style_grams,
        })
    }

    /// Appends the weighted objective for a unit-range `output` node.
    pub fn build(
        &self,
        g: &mut Graph<T>,
        fx: &FeatureExtractor<T>,
        output: Var,
        config: &LossConfig,
    ) -> Result<LossNodes> {
        let (scale, shift) = image_io::normalization_affine::<T>();
        let normalized = g.channel_affine(output, scale, shift);
        let layers = config.required_layers();
        let feats = fx.extract_graph(g, normalized, &layers)?;

        let content_var = feats[&config.content_layer];
        let have = g.shape(content_var).to_vec();
        if have != self.content_features.shape() {
            return Err(Error::ShapeMismatch {
                left: have,
                right: self.content_features.shape().to_vec(),
            });
        }
        let content = g.content_loss(content_var, self.content_features.clone());

        let mut style_layers = Vec::with_capacity(config.style_layers.len());
        for layer in config.style_layers.keys() {
            let target = self
                .style_grams
                .get(layer)
                .ok_or_else(|| Error::MissingLayer(layer.clone()))?;
            let gram = g.gram(feats[layer]);
            if g.shape(gram) != target.shape() {
                return Err(Error::ChannelMismatch {
                    left: g.shape(gram)[0],
                    right: target.shape()[0],
                });
            }
            style_layers.push((layer.clone(), g.gram_distance(gram, target.clone())));
        }
        let tv = g.tv_loss(output);

        let mut terms = vec![(content, T::lit(config.lambda_content))];
        for (layer, var) in &style_layers {
            terms.push((*var, T::lit(config.lambda_style * config.style_layers[layer])));
        }
        terms.push((tv, T::lit(config.lambda_tv)));
        let total = g.weighted_sum(&terms);
        Ok(LossNodes {
            total,
            content,
            style_layers,
            tv,
        })
    }
}

impl LossNodes {
    pub fn breakdown<T: Scalar>(&self, g: &Graph<T>, config: &LossConfig) -> LossBreakdown {
        let content_raw = g.scalar(self.content).as_f64();
        let style_layers: BTreeMap<String, f64> = self
            .style_layers
            .iter()
            .map(|(name, v)| (name.clone(), g.scalar(*v).as_f64()))
            .collect();
        let style_raw: f64 = style_layers.iter().map(|(name, v)| config.style_layers[name] * v).sum();
        let tv_raw = g.scalar(self.tv).as_f64();
        LossBreakdown {
            total: g.scalar(self.total).as_f64(),
            content: Term {
                raw: content_raw,
                weighted: config.lambda_content * content_raw,
            },
            style: Term {
                raw: style_raw,
                weighted: config.lambda_style * style_raw,
            },
            tv: Term {
                raw: tv_raw,
                weighted: config.lambda_tv * tv_raw,
            },
            style_layers,
        }
    }
}

/// `λ_c·ℓ_content + λ_s·Σ w_l·ℓ_style_l + λ_TV·ℓ_TV` for unit-range images.
pub fn total_loss<T: Scalar>(
    content_img: &ImageTensor<T>,
    style_img: &ImageTensor<T>,
    output_img: &ImageTensor<T>,
    fx: &FeatureExtractor<T>,
    config: &LossConfig,
) -> Result<(T, LossBreakdown)> {
    let targets = LossTargets::new(fx, content_img, style_img, config)?;
    let mut g = Graph::new();
    let out = g.leaf(output_img.data().clone().into_dyn(), false);
    let nodes = targets.build(&mut g, fx, out, config)?;
    Ok((g.scalar(nodes.total), nodes.breakdown(&g, config)))
}

/// [`total_loss`] together with its gradient with respect to the output pixels.
pub fn total_loss_with_grad<T: Scalar>(
    content_img: &ImageTensor<T>,
    style_img: &ImageTensor<T>,
    output_img: &ImageTensor<T>,
    fx: &FeatureExtractor<T>,
    config: &LossConfig,
) -> Result<(T, Array3<T>)> {
    let targets = LossTargets::new(fx, content_img, style_img, config)?;
    let mut g = Graph::new();
    let out = g.leaf(output_img.data().clone().into_dyn(), true);
    let nodes = targets.build(&mut g, fx, out, config)?;
    let mut grads = g.backward(nodes.total);
    let grad = grads
        .take(out)
        .expect("output participates in the objective")
        .into_dimensionality()
        .expect("rank-3 gradient");
    Ok((g.scalar(nodes.total), grad))
}
