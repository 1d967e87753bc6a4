//! Frozen VGG19 feature extractor.
//!
//! Weights come either from a safetensors file laid out like torchvision's
//! `vgg19().features` (`features.{idx}.weight` / `features.{idx}.bias`),
//! verified against a SHA-256 digest, or from a seeded He initialization
//! when no pretrained file is available.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array1, Array3, Array4, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;
use sha2::{Digest, Sha256};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::image_io::{ImageTensor, RangeMode};
use crate::kernels::ConvGeometry;
use crate::loss::{FeatureMap, FeatureSet};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VggOp {
    /// `(name, torchvision feature index, output channels)`
    Conv(&'static str, usize, usize),
    Pool,
}

/// The convolutional trunk of VGG19. Pools sit at torchvision indices 4, 9,
/// 18, 27 and 36.
pub const VGG19_LAYOUT: &[VggOp] = &[
    VggOp::Conv("conv1_1", 0, 64),
    VggOp::Conv("conv1_2", 2, 64),
    VggOp::Pool,
    VggOp::Conv("conv2_1", 5, 128),
    VggOp::Conv("conv2_2", 7, 128),
    VggOp::Pool,
    VggOp::Conv("conv3_1", 10, 256),
    VggOp::Conv("conv3_2", 12, 256),
    VggOp::Conv("conv3_3", 14, 256),
    VggOp::Conv("conv3_4", 16, 256),
    VggOp::Pool,
    VggOp::Conv("conv4_1", 19, 512),
    VggOp::Conv("conv4_2", 21, 512),
    VggOp::Conv("conv4_3", 23, 512),
    VggOp::Conv("conv4_4", 25, 512),
    VggOp::Pool,
    VggOp::Conv("conv5_1", 28, 512),
    VggOp::Conv("conv5_2", 30, 512),
    VggOp::Conv("conv5_3", 32, 512),
    VggOp::Conv("conv5_4", 34, 512),
];

#[derive(Clone, Debug)]
enum Stage<T> {
    Conv {
        name: &'static str,
        index: usize,
        weight: Arc<ArrayD<T>>,
        bias: Arc<ArrayD<T>>,
    },
    Pool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ExtractorSource {
    File { path: String, sha256: String },
    Seeded { seed: u64 },
}

/// Read-only after construction; safe to share across threads.
#[derive(Clone, Debug)]
pub struct FeatureExtractor<T> {
    stages: Vec<Stage<T>>,
    source: ExtractorSource,
}

/// Hex SHA-256 of a file's bytes.
pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex_digest(&bytes))
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn layout_until(last: &str) -> Result<&'static [VggOp]> {
    let pos = VGG19_LAYOUT
        .iter()
        .position(|op| matches!(op, VggOp::Conv(n, _, _) if *n == last))
        .ok_or_else(|| Error::UnknownLayer(last.to_string()))?;
    Ok(&VGG19_LAYOUT[..=pos])
}

impl<T: Scalar> FeatureExtractor<T> {
    /// Full VGG19 topology with He-uniform weights drawn from `seed`.
    pub fn seeded(seed: u64) -> Self {
        Self::seeded_until(seed, "conv5_4").expect("conv5_4 exists")
    }

    /// Seeded extractor truncated after `last_layer`.
    pub fn seeded_until(seed: u64, last_layer: &str) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cin = 3;
        let mut stages = Vec::new();
        for op in layout_until(last_layer)? {
            match *op {
                VggOp::Conv(name, index, cout) => {
                    let fan_in = (cin * 9) as f64;
                    let bound = (6.0 / fan_in).sqrt();
                    let weight =
                        Array4::from_shape_simple_fn((cout, cin, 3, 3), || T::lit(rng.random_range(-bound..bound)));
                    stages.push(Stage::Conv {
                        name,
                        index,
                        weight: Arc::new(weight.into_dyn()),
                        bias: Arc::new(Array1::zeros(cout).into_dyn()),
                    });
                    cin = cout;
                }
                VggOp::Pool => stages.push(Stage::Pool),
            }
        }
        Ok(Self {
            stages,
            source: ExtractorSource::Seeded { seed },
        })
    }

    /// Loads torchvision-layout VGG19 weights from safetensors after checking
    /// the file digest. Layers absent from the file truncate the extractor.
    pub fn from_safetensors(path: impl AsRef<Path>, expected_sha256: &str) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::ExtractorUnavailable(format!("{}: {e}", path.display())))?;
        let digest = hex_digest(&bytes);
        if !digest.eq_ignore_ascii_case(expected_sha256.trim()) {
            return Err(Error::ExtractorUnavailable(format!(
                "{}: sha256 {digest} does not match expected {expected_sha256}",
                path.display()
            )));
        }
        let st = SafeTensors::deserialize(&bytes)
            .map_err(|e| Error::ExtractorUnavailable(format!("{}: {e}", path.display())))?;

        let mut stages = Vec::new();
        let mut cin = 3;
        for op in VGG19_LAYOUT {
            match *op {
                VggOp::Conv(name, index, cout) => {
                    let Ok(w) = st.tensor(&format!("features.{index}.weight")) else {
                        break;
                    };
                    let b = st
                        .tensor(&format!("features.{index}.bias"))
                        .map_err(|e| Error::ExtractorUnavailable(format!("{name} bias: {e}")))?;
                    let weight = tensor_to_array::<T>(&w, &[cout, cin, 3, 3], name)?;
                    let bias = tensor_to_array::<T>(&b, &[cout], name)?;
                    stages.push(Stage::Conv {
                        name,
                        index,
                        weight: Arc::new(weight),
                        bias: Arc::new(bias),
                    });
                    cin = cout;
                }
                VggOp::Pool => stages.push(Stage::Pool),
            }
        }
        while matches!(stages.last(), Some(Stage::Pool)) {
            stages.pop();
        }
        if stages.is_empty() {
            return Err(Error::ExtractorUnavailable(format!(
                "{}: no VGG19 convolution weights found",
                path.display()
            )));
        }
        Ok(Self {
            stages,
            source: ExtractorSource::File {
                path: path.display().to_string(),
                sha256: digest,
            },
        })
    }

    /// Serializes the weights in the layout [`Self::from_safetensors`] reads.
    pub fn write_safetensors(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buffers = Vec::new();
        for stage in &self.stages {
            if let Stage::Conv {
                index, weight, bias, ..
            } = stage
            {
                for (suffix, arr) in [("weight", weight), ("bias", bias)] {
                    let bytes: Vec<u8> = arr.iter().flat_map(|v| (v.as_f64() as f32).to_le_bytes()).collect();
                    buffers.push((format!("features.{index}.{suffix}"), arr.shape().to_vec(), bytes));
                }
            }
        }
        let views = buffers
            .iter()
            .map(|(name, shape, bytes)| {
                TensorView::new(Dtype::F32, shape.clone(), bytes)
                    .map(|v| (name.clone(), v))
                    .map_err(|e| Error::InvalidConfig(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        safetensors::serialize_to_file(views, None, path.as_ref())
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
    }

    pub fn source(&self) -> &ExtractorSource {
        &self.source
    }

    pub fn layer_names(&self) -> Vec<&'static str> {
        self.stages
            .iter()
            .filter_map(|s| match s {
                Stage::Conv { name, .. } => Some(*name),
                Stage::Pool => None,
            })
            .collect()
    }

    pub fn has_layer(&self, layer: &str) -> bool {
        self.layer_names().contains(&layer)
    }

    /// Output channel count of a layer.
    pub fn channels(&self, layer: &str) -> Result<usize> {
        self.stages
            .iter()
            .find_map(|s| match s {
                Stage::Conv { name, weight, .. } if *name == layer => Some(weight.shape()[0]),
                _ => None,
            })
            .ok_or_else(|| Error::UnknownLayer(layer.to_string()))
    }

    /// SHA-256 over every weight and bias value, in layer order.
    pub fn weights_digest(&self) -> String {
        let mut hasher = Sha256::new();
        for stage in &self.stages {
            if let Stage::Conv { weight, bias, .. } = stage {
                for v in weight.iter().chain(bias.iter()) {
                    hasher.update(v.as_f64().to_le_bytes());
                }
            }
        }
        hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    fn check_layers<S: AsRef<str>>(&self, layers: &[S]) -> Result<usize> {
        let names = self.layer_names();
        let mut deepest = 0;
        for layer in layers {
            let pos = names
                .iter()
                .position(|n| *n == layer.as_ref())
                .ok_or_else(|| Error::UnknownLayer(layer.as_ref().to_string()))?;
            deepest = deepest.max(pos);
        }
        Ok(deepest)
    }

    /// Runs the trunk on a graph node and returns the post-rectifier
    /// activations of the requested layers. Evaluation stops at the deepest
    /// requested layer. Weights enter the graph as frozen leaves.
    pub fn extract_graph<S: AsRef<str>>(
        &self,
        g: &mut Graph<T>,
        input: Var,
        layers: &[S],
    ) -> Result<BTreeMap<String, Var>> {
        let deepest = self.check_layers(layers)?;
        let mut out = BTreeMap::new();
        let mut x = input;
        let mut conv_seen = 0;
        for stage in &self.stages {
            if conv_seen > deepest {
                break;
            }
            match stage {
                Stage::Conv { name, weight, bias, .. } => {
                    let w = g.shared_leaf(weight.clone(), false);
                    let b = g.shared_leaf(bias.clone(), false);
                    x = g.conv2d(x, w, Some(b), ConvGeometry::same3(), true);
                    if layers.iter().any(|l| l.as_ref() == *name) {
                        out.insert(name.to_string(), x);
                    }
                    conv_seen += 1;
                }
                Stage::Pool => x = g.max_pool2(x),
            }
        }
        Ok(out)
    }

    /// Feature maps for a normalized image.
    pub fn extract<S: AsRef<str>>(&self, img: &ImageTensor<T>, layers: &[S]) -> Result<FeatureSet<T>> {
        if img.range() != RangeMode::Normalized {
            return Err(Error::WrongRangeMode {
                expected: "normalized",
                found: "unit",
            });
        }
        let mut g = Graph::new();
        let x = g.leaf(img.data().clone().into_dyn(), false);
        let vars = self.extract_graph(&mut g, x, layers)?;
        vars.into_iter()
            .map(|(name, v)| {
                let data: Array3<T> = g.value(v).clone().into_dimensionality().expect("rank-3 features");
                Ok((name.clone(), FeatureMap::new(name, data)?))
            })
            .collect()
    }
}

fn tensor_to_array<T: Scalar>(view: &TensorView<'_>, shape: &[usize], layer: &str) -> Result<ArrayD<T>> {
    if view.shape() != shape {
        return Err(Error::ExtractorUnavailable(format!(
            "{layer}: expected shape {shape:?}, found {:?}",
            view.shape()
        )));
    }
    let data = view.data();
    let values: Vec<T> = match view.dtype() {
        Dtype::F32 => data
            .chunks_exact(4)
            .map(|c| T::lit(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
            .collect(),
        Dtype::F64 => data
            .chunks_exact(8)
            .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect(),
        other => {
            return Err(Error::ExtractorUnavailable(format!(
                "{layer}: unsupported dtype {other:?}"
            )))
        }
    };
    Ok(ArrayD::from_shape_vec(IxDyn(shape), values).expect("shape checked"))
}
