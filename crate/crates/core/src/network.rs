//! Multi-resolution generation network.
//!
//! Topology, for the default spec (`base_channels = 16`, scales `[1, 2, 4]`,
//! fusion schedule `[2, 3, 3]`):
//!
//! ```text
//! stem 3x3 (3 -> C) ─ segment 0 ─ fusion 1 ─ segment 1 ─ fusion 2 ─ segment 2 ─ fusion 3 ─ segment 3 ─ head
//!                                   │ spawns 1/2          │ spawns 1/4
//! ```
//!
//! A segment runs `blocks_per_segment` bottleneck residual blocks on every
//! active branch. At a fusion point each branch receives every other
//! branch's map (finer maps through chained stride-2 3x3 convolutions,
//! coarser maps through bilinear upsampling), concatenates them along the
//! channel axis and projects back to its own width with a 1x1 convolution.
//! The head upsamples every branch to full resolution, concatenates, and
//! maps through two 3x3 convolutions to a sigmoid-bounded RGB image.
//!
//! Branch `b` at downsample factor `s_b` carries `base_channels * s_b`
//! channels. Convolutions use zero padding and are followed by a rectifier,
//! except the second convolution of a bottleneck (whose output is added to
//! the residual stream) and the sigmoid head.

use std::collections::HashMap;
use std::path::Path;

use ndarray::{Array1, Array3, Array4, ArrayD, ArrayView3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::archive::Archive;
use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::image_io::{ImageTensor, RangeMode};
use crate::kernels::ConvGeometry;
use crate::scalar::Scalar;

/// Channel squeeze factor inside a bottleneck block.
pub const SQUEEZE_RATIO: usize = 4;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationNetworkSpec {
    pub base_channels: usize,
    /// Downsample factor of each branch, finest first.
    pub branch_scales: Vec<usize>,
    pub blocks_per_segment: usize,
    /// Number of active branches after each fusion point.
    pub fusion_schedule: Vec<usize>,
    pub kernel_size: usize,
}

impl Default for GenerationNetworkSpec {
    fn default() -> Self {
        Self {
            base_channels: 16,
            branch_scales: vec![1, 2, 4],
            blocks_per_segment: 2,
            fusion_schedule: vec![2, 3, 3],
            kernel_size: 3,
        }
    }
}

impl GenerationNetworkSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.base_channels == 0 {
            return bad("base_channels must be positive".into());
        }
        if self.blocks_per_segment == 0 {
            return bad("blocks_per_segment must be positive".into());
        }
        if self.kernel_size != 3 {
            return bad(format!("kernel_size must be 3, got {}", self.kernel_size));
        }
        let scales = &self.branch_scales;
        if scales.first() != Some(&1) {
            return bad("branch_scales must start at 1 (the full-resolution branch)".into());
        }
        for s in scales {
            if !s.is_power_of_two() {
                return bad(format!("branch scale {s} is not a power of 2"));
            }
        }
        if scales.windows(2).any(|w| w[0] >= w[1]) {
            return bad("branch_scales must be strictly increasing".into());
        }
        let mut active = 1;
        for &n in &self.fusion_schedule {
            if n < active || n > scales.len() {
                return bad(format!(
                    "fusion schedule entry {n} must be between {active} and {}",
                    scales.len()
                ));
            }
            active = n;
        }
        if active != scales.len() {
            return bad(format!(
                "fusion schedule activates {active} of {} branches",
                scales.len()
            ));
        }
        Ok(())
    }

    pub fn max_scale(&self) -> usize {
        *self.branch_scales.last().unwrap_or(&1)
    }

    pub fn branch_width(&self, branch: usize) -> usize {
        self.base_channels * self.branch_scales[branch]
    }
}

/// Internal width of a bottleneck on `channels` inputs: a quarter, at least 1.
pub fn bottleneck_width(channels: usize) -> usize {
    channels.div_ceil(SQUEEZE_RATIO).max(1)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvLayer {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub geom: ConvGeometry,
    pub relu: bool,
}

impl ConvLayer {
    fn new(name: String, cin: usize, cout: usize, geom: ConvGeometry, relu: bool) -> Self {
        Self {
            name,
            cin,
            cout,
            geom,
            relu,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }
}

#[derive(Clone, Debug)]
struct Bottleneck {
    reduce: ConvLayer,
    expand: ConvLayer,
}

#[derive(Clone, Debug)]
struct FusionTarget {
    branch: usize,
    /// Per source branch: stride-2 chain (empty unless the source is finer).
    down: Vec<Vec<ConvLayer>>,
    project: ConvLayer,
}

#[derive(Clone, Debug)]
struct Fusion {
    /// `(new branch, chain from branch 0)`
    spawns: Vec<(usize, Vec<ConvLayer>)>,
    targets: Vec<FusionTarget>,
}

/// Construction-time record of one fusion's channel bookkeeping.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FusionAudit {
    pub fusion: usize,
    pub target_branch: usize,
    pub input_channels: Vec<usize>,
    pub concat_channels: usize,
    pub output_channels: usize,
}

/// Fully expanded layer plan derived from a [`GenerationNetworkSpec`].
#[derive(Clone, Debug)]
pub struct Architecture {
    spec: GenerationNetworkSpec,
    stem: ConvLayer,
    /// `segments[i][branch]` holds that branch's blocks.
    segments: Vec<Vec<Vec<Bottleneck>>>,
    fusions: Vec<Fusion>,
    merge: ConvLayer,
    output: ConvLayer,
    audit: Vec<FusionAudit>,
}

fn octaves(from: usize, to: usize) -> usize {
    (to / from).trailing_zeros() as usize
}

impl Architecture {
    pub fn new(spec: &GenerationNetworkSpec) -> Result<Self> {
        spec.validate()?;
        let width = |b: usize| spec.branch_width(b);
        let base = spec.base_channels;
        let stem = ConvLayer::new("stem".into(), 3, base, ConvGeometry::same3(), true);

        let segment = |index: usize, active: usize| -> Vec<Vec<Bottleneck>> {
            (0..active)
                .map(|b| {
                    (0..spec.blocks_per_segment)
                        .map(|k| {
                            let c = width(b);
                            let mid = bottleneck_width(c);
                            let prefix = format!("segment{index}.branch{b}.block{k}");
                            Bottleneck {
                                reduce: ConvLayer::new(format!("{prefix}.reduce"), c, mid, ConvGeometry::same3(), true),
                                expand: ConvLayer::new(
                                    format!("{prefix}.expand"),
                                    mid,
                                    c,
                                    ConvGeometry::pointwise(),
                                    false,
                                ),
                            }
                        })
                        .collect()
                })
                .collect()
        };

        let mut segments = vec![segment(0, 1)];
        let mut fusions = Vec::new();
        let mut audit = Vec::new();
        let mut active = 1;
        for (fi, &after) in spec.fusion_schedule.iter().enumerate() {
            let fusion_id = fi + 1;
            let spawns = (active..after)
                .map(|j| {
                    let steps = octaves(1, spec.branch_scales[j]);
                    let chain = (0..steps)
                        .map(|o| {
                            let cin = if o == 0 { width(0) } else { width(j) };
                            ConvLayer::new(
                                format!("fusion{fusion_id}.spawn{j}.down{o}"),
                                cin,
                                width(j),
                                ConvGeometry::down3(),
                                true,
                            )
                        })
                        .collect();
                    (j, chain)
                })
                .collect();
            let targets = (0..after)
                .map(|t| {
                    let down = (0..after)
                        .map(|s| {
                            if s >= t {
                                return Vec::new();
                            }
                            let steps = octaves(spec.branch_scales[s], spec.branch_scales[t]);
                            (0..steps)
                                .map(|o| {
                                    ConvLayer::new(
                                        format!("fusion{fusion_id}.to{t}.from{s}.down{o}"),
                                        width(s),
                                        width(s),
                                        ConvGeometry::down3(),
                                        true,
                                    )
                                })
                                .collect()
                        })
                        .collect::<Vec<Vec<ConvLayer>>>();
                    let input_channels: Vec<usize> = (0..after)
                        .map(|s| down[s].last().map_or(width(s), |l| l.cout))
                        .collect();
                    let concat: usize = input_channels.iter().sum();
                    let project = ConvLayer::new(
                        format!("fusion{fusion_id}.to{t}.project"),
                        concat,
                        width(t),
                        ConvGeometry::pointwise(),
                        true,
                    );
                    audit.push(FusionAudit {
                        fusion: fusion_id,
                        target_branch: t,
                        input_channels,
                        concat_channels: concat,
                        output_channels: width(t),
                    });
                    FusionTarget {
                        branch: t,
                        down,
                        project,
                    }
                })
                .collect();
            fusions.push(Fusion { spawns, targets });
            active = after;
            segments.push(segment(fusion_id, active));
        }

        let head_in: usize = (0..active).map(width).sum();
        let merge = ConvLayer::new("head.merge".into(), head_in, base, ConvGeometry::same3(), true);
        let output = ConvLayer::new("head.output".into(), base, 3, ConvGeometry::same3(), false);
        let arch = Self {
            spec: spec.clone(),
            stem,
            segments,
            fusions,
            merge,
            output,
            audit,
        };
        arch.check_audit()?;
        Ok(arch)
    }

    fn check_audit(&self) -> Result<()> {
        for a in &self.audit {
            let sum: usize = a.input_channels.iter().sum();
            if sum != a.concat_channels {
                return Err(Error::InvalidSpec(format!(
                    "fusion {} target {}: concat {} != sum of inputs {sum}",
                    a.fusion, a.target_branch, a.concat_channels
                )));
            }
        }
        Ok(())
    }

    pub fn spec(&self) -> &GenerationNetworkSpec {
        &self.spec
    }

    pub fn fusion_audit(&self) -> &[FusionAudit] {
        &self.audit
    }

    /// Every convolution in evaluation order.
    pub fn layers(&self) -> Vec<&ConvLayer> {
        let mut out = vec![&self.stem];
        fn seg_layers<'a>(out: &mut Vec<&'a ConvLayer>, seg: &'a [Vec<Bottleneck>]) {
            for branch in seg {
                for block in branch {
                    out.push(&block.reduce);
                    out.push(&block.expand);
                }
            }
        }
        seg_layers(&mut out, &self.segments[0]);
        for (fusion, seg) in self.fusions.iter().zip(&self.segments[1..]) {
            for (_, chain) in &fusion.spawns {
                out.extend(chain.iter());
            }
            for target in &fusion.targets {
                for chain in &target.down {
                    out.extend(chain.iter());
                }
                out.push(&target.project);
            }
            seg_layers(&mut out, seg);
        }
        out.push(&self.merge);
        out.push(&self.output);
        out
    }

    /// Applies the network to a `[3, H, W]` node using bound parameters.
    pub fn forward_graph<T: Scalar>(&self, g: &mut Graph<T>, params: &BoundParams, input: Var) -> Result<Var> {
        let shape = g.shape(input).to_vec();
        let (h, w) = (shape[1], shape[2]);
        let factor = self.spec.max_scale();
        if shape[0] != 3 || h % factor != 0 || w % factor != 0 || h == 0 || w == 0 {
            return Err(Error::IndivisibleInput {
                height: h,
                width: w,
                factor,
            });
        }
        let conv = |g: &mut Graph<T>, x: Var, layer: &ConvLayer| -> Var {
            let (wv, bv) = params.get(layer);
            g.conv2d(x, wv, Some(bv), layer.geom, layer.relu)
        };
        let run_segment = |g: &mut Graph<T>, branches: &mut [Var], seg: &[Vec<Bottleneck>]| {
            for (b, blocks) in seg.iter().enumerate() {
                for block in blocks {
                    let (rw, rb) = params.get(&block.reduce);
                    let (ew, eb) = params.get(&block.expand);
                    branches[b] = bottleneck_graph(g, branches[b], (rw, rb), (ew, eb));
                }
            }
        };

        let mut branches = vec![conv(g, input, &self.stem)];
        run_segment(g, &mut branches, &self.segments[0]);
        for (fusion, seg) in self.fusions.iter().zip(&self.segments[1..]) {
            for (_, chain) in &fusion.spawns {
                let mut x = branches[0];
                for layer in chain {
                    x = conv(g, x, layer);
                }
                branches.push(x);
            }
            let scaled: Vec<ScaledVar> = branches
                .iter()
                .enumerate()
                .map(|(b, &var)| ScaledVar {
                    var,
                    scale: self.spec.branch_scales[b],
                })
                .collect();
            let mut fused = Vec::with_capacity(branches.len());
            for target in &fusion.targets {
                let chains: Vec<Vec<(Var, Var)>> = target
                    .down
                    .iter()
                    .map(|chain| chain.iter().map(|l| params.get(l)).collect())
                    .collect();
                let cat = fuse(g, &scaled, self.spec.branch_scales[target.branch], &chains)?;
                fused.push(conv(g, cat, &target.project));
            }
            branches = fused;
            run_segment(g, &mut branches, seg);
        }

        let full: Vec<Var> = branches
            .iter()
            .map(|&b| {
                let s = g.shape(b);
                if (s[1], s[2]) == (h, w) {
                    b
                } else {
                    g.resize_bilinear(b, h, w)
                }
            })
            .collect();
        let cat = if full.len() == 1 {
            full[0]
        } else {
            g.concat_channels(&full)
        };
        let merged = conv(g, cat, &self.merge);
        let logits = conv(g, merged, &self.output);
        Ok(g.sigmoid(logits))
    }
}

/// Graph handles for every parameter, keyed by layer name.
#[derive(Clone, Debug, Default)]
pub struct BoundParams {
    vars: HashMap<String, (Var, Var)>,
    order: Vec<Var>,
}

impl BoundParams {
    fn get(&self, layer: &ConvLayer) -> (Var, Var) {
        self.vars[&layer.name]
    }

    /// Parameter vars in [`NetworkParameters`] order.
    pub fn vars(&self) -> &[Var] {
        &self.order
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub layer: String,
    pub value: ArrayD<T>,
}

/// Named weights and biases of one generation network, in evaluation order.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParameters<T> {
    spec: GenerationNetworkSpec,
    seed: u64,
    params: Vec<Parameter<T>>,
}

/// Fan-in-scaled uniform initialization with zero biases: bound
/// `sqrt(6 / fan_in)` (He) for rectified layers and `sqrt(3 / fan_in)`
/// (unit gain) for the output head. Residual expansions start at zero, so
/// every bottleneck is an identity at init and activations do not grow
/// with depth.
pub fn build_network<T: Scalar>(spec: &GenerationNetworkSpec, seed: u64) -> Result<NetworkParameters<T>> {
    let arch = Architecture::new(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Vec::new();
    for layer in arch.layers() {
        let k = layer.geom.kernel;
        let gain_sq = if layer.name.ends_with(".expand") {
            0.0
        } else if layer.relu {
            2.0
        } else {
            1.0
        };
        let bound = (3.0 * gain_sq / (layer.cin * k * k) as f64).sqrt();
        let w = Array4::from_shape_simple_fn((layer.cout, layer.cin, k, k), || {
            T::lit(if bound > 0.0 {
                rng.random_range(-bound..bound)
            } else {
                0.0
            })
        });
        params.push(Parameter {
            name: layer.weight_name(),
            layer: layer.name.clone(),
            value: w.into_dyn(),
        });
        params.push(Parameter {
            name: layer.bias_name(),
            layer: layer.name.clone(),
            value: Array1::<T>::zeros(layer.cout).into_dyn(),
        });
    }
    Ok(NetworkParameters {
        spec: spec.clone(),
        seed,
        params,
    })
}

impl<T: Scalar> NetworkParameters<T> {
    pub fn spec(&self) -> &GenerationNetworkSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.params
    }

    pub fn get(&self, name: &str) -> Option<&Parameter<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Parameter<T>> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn architecture(&self) -> Architecture {
        Architecture::new(&self.spec).expect("spec validated at build")
    }

    /// Inserts every parameter as a graph leaf.
    pub fn bind(&self, g: &mut Graph<T>, requires_grad: bool) -> BoundParams {
        let mut bound = BoundParams::default();
        for pair in self.params.chunks(2) {
            let w = g.leaf(pair[0].value.clone(), requires_grad);
            let b = g.leaf(pair[1].value.clone(), requires_grad);
            bound.vars.insert(pair[0].layer.clone(), (w, b));
            bound.order.extend([w, b]);
        }
        bound
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_archive().write(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_archive(Archive::read(path)?)
    }

    pub(crate) fn to_archive(&self) -> Archive<T> {
        let layers: Vec<&str> = self.params.iter().map(|p| p.layer.as_str()).collect();
        let mut a = Archive::new(
            "generation-network",
            serde_json::json!({ "spec": self.spec, "seed": self.seed, "layers": layers }),
        );
        for p in &self.params {
            a.push(p.name.clone(), p.value.clone());
        }
        a
    }

    pub(crate) fn from_archive(mut a: Archive<T>) -> Result<Self> {
        let corrupt = |m: String| Error::CorruptCheckpoint(m);
        let spec: GenerationNetworkSpec =
            serde_json::from_value(a.meta["spec"].clone()).map_err(|e| corrupt(format!("spec: {e}")))?;
        let seed = a.meta["seed"].as_u64().ok_or_else(|| corrupt("missing seed".into()))?;
        let mut expected = build_network::<T>(&spec, seed).map_err(|e| corrupt(e.to_string()))?;
        for p in expected.params.iter_mut() {
            let value = a.take(&p.name)?;
            if value.shape() != p.value.shape() {
                return Err(corrupt(format!(
                    "{}: shape {:?}, expected {:?}",
                    p.name,
                    value.shape(),
                    p.value.shape()
                )));
            }
            p.value = value;
        }
        Ok(expected)
    }
}

/// Runs the network on a unit-range image and returns a unit-range image
/// of the same size.
pub fn forward<T: Scalar>(params: &NetworkParameters<T>, input: &ImageTensor<T>) -> Result<ImageTensor<T>> {
    let arch = params.architecture();
    let mut g = Graph::new();
    let bound = params.bind(&mut g, false);
    let x = g.leaf(input.data().clone().into_dyn(), false);
    let y = arch.forward_graph(&mut g, &bound, x)?;
    let data: Array3<T> = g.value(y).clone().into_dimensionality().expect("rank-3 output");
    ImageTensor::new(data, RangeMode::Unit)
}

/// Weights of one bottleneck residual block.
#[derive(Clone, Debug, PartialEq)]
pub struct BottleneckParams<T> {
    pub reduce_weight: Array4<T>,
    pub reduce_bias: Array1<T>,
    pub expand_weight: Array4<T>,
    pub expand_bias: Array1<T>,
}

impl<T: Scalar> BottleneckParams<T> {
    pub fn zeros(channels: usize) -> Self {
        let mid = bottleneck_width(channels);
        Self {
            reduce_weight: Array4::zeros((mid, channels, 3, 3)),
            reduce_bias: Array1::zeros(mid),
            expand_weight: Array4::zeros((channels, mid, 1, 1)),
            expand_bias: Array1::zeros(channels),
        }
    }

    pub fn internal_channels(&self) -> usize {
        self.reduce_weight.dim().0
    }
}

pub(crate) fn bottleneck_graph<T: Scalar>(g: &mut Graph<T>, x: Var, reduce: (Var, Var), expand: (Var, Var)) -> Var {
    let mid = g.conv2d(x, reduce.0, Some(reduce.1), ConvGeometry::same3(), true);
    let delta = g.conv2d(mid, expand.0, Some(expand.1), ConvGeometry::pointwise(), false);
    g.add(x, delta)
}

/// `x + expand(relu(reduce(x)))`, preserving channels and spatial size.
pub fn bottleneck_block<T: Scalar>(x: ArrayView3<'_, T>, p: &BottleneckParams<T>) -> Array3<T> {
    let mut g = Graph::new();
    let xv = g.leaf(x.to_owned().into_dyn(), false);
    let rw = g.leaf(p.reduce_weight.clone().into_dyn(), false);
    let rb = g.leaf(p.reduce_bias.clone().into_dyn(), false);
    let ew = g.leaf(p.expand_weight.clone().into_dyn(), false);
    let eb = g.leaf(p.expand_bias.clone().into_dyn(), false);
    let y = bottleneck_graph(&mut g, xv, (rw, rb), (ew, eb));
    g.value(y).clone().into_dimensionality().expect("rank-3")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScaledVar {
    pub var: Var,
    /// Downsample factor relative to full resolution.
    pub scale: usize,
}

/// Aligns every input to `target_scale` and concatenates along channels.
///
/// Finer inputs pass through their stride-2 chain in `downsamplers` (one
/// `(weight, bias)` pair per octave); coarser inputs are bilinearly
/// upsampled. A lone input already at the target scale is returned as is.
pub fn fuse<T: Scalar>(
    g: &mut Graph<T>,
    inputs: &[ScaledVar],
    target_scale: usize,
    downsamplers: &[Vec<(Var, Var)>],
) -> Result<Var> {
    let mismatch = |m: String| Err(Error::ScaleMismatch(m));
    if inputs.is_empty() {
        return mismatch("nothing to fuse".into());
    }
    if downsamplers.len() != inputs.len() {
        return mismatch(format!(
            "{} downsampler chains for {} inputs",
            downsamplers.len(),
            inputs.len()
        ));
    }
    if !target_scale.is_power_of_two() {
        return mismatch(format!("target scale {target_scale} is not a power of 2"));
    }
    let mut full = None;
    for input in inputs {
        if !input.scale.is_power_of_two() {
            return mismatch(format!("scale {} is not a power of 2", input.scale));
        }
        let s = g.shape(input.var);
        let res = (s[1] * input.scale, s[2] * input.scale);
        match full {
            None => full = Some(res),
            Some(f) if f != res => {
                return mismatch(format!(
                    "map {:?} at scale {} implies full size {res:?}, others imply {f:?}",
                    s, input.scale
                ))
            }
            _ => {}
        }
    }
    let (fh, fw) = full.expect("non-empty");
    if fh % target_scale != 0 || fw % target_scale != 0 {
        return mismatch(format!(
            "full size {fh}x{fw} not divisible by target scale {target_scale}"
        ));
    }
    let (th, tw) = (fh / target_scale, fw / target_scale);

    let mut aligned = Vec::with_capacity(inputs.len());
    for (input, chain) in inputs.iter().zip(downsamplers) {
        let x = if input.scale < target_scale {
            let need = octaves(input.scale, target_scale);
            if chain.len() != need {
                return mismatch(format!(
                    "scale {} -> {target_scale} needs {need} stride-2 convolutions, got {}",
                    input.scale,
                    chain.len()
                ));
            }
            chain.iter().fold(input.var, |x, &(w, b)| {
                g.conv2d(x, w, Some(b), ConvGeometry::down3(), true)
            })
        } else {
            if !chain.is_empty() {
                return mismatch(format!(
                    "scale {} input to target {target_scale} takes no downsampler",
                    input.scale
                ));
            }
            if input.scale > target_scale {
                g.resize_bilinear(input.var, th, tw)
            } else {
                input.var
            }
        };
        aligned.push(x);
    }
    Ok(if aligned.len() == 1 {
        aligned[0]
    } else {
        g.concat_channels(&aligned)
    })
}
