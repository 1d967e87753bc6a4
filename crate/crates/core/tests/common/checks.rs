//! One function per acceptance criterion. Each returns a short summary on
//! success and a description of the first violation otherwise. Tolerances
//! are fixed here.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use ndarray::{Array2, Array3, ArrayD, Axis};
use photostyle::autograd::Graph;
use photostyle::eval::BENCHMARK_RESOLUTIONS;
use photostyle::loss::{total_loss_with_grad, FeatureSet, LossTargets};
use photostyle::network::{BottleneckParams, ScaledVar};
use photostyle::trainer::history_csv;
use photostyle::{
    bottleneck_block, build_network, content_loss, forward, fuse, gram_matrix, run_benchmark, run_transfer,
    sobel_contour, structure_score, style_loss_layer, synthetic, total_style_loss, tv_loss, Error, Extractor32,
    Extractor64, FeatureMap, GenerationNetworkSpec, Image32, ImageTensor, LossConfig, RangeMode, TrainingConfig,
    Transfer,
};
use rand::seq::SliceRandom;
use rand::Rng;

use super::{normwise_rel_err, oracle, random_array, random_image, rng, scalar_rel_err, smoke_pair};

pub type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        // Bound first so a NaN comparison counts as a failure.
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($fmt)+));
        }
    };
}

fn fail(e: Error) -> String {
    e.to_string()
}

pub const ORACLE_REL_TOL: f64 = 1e-6;
pub const ORACLE_TRIALS: usize = 120;
pub const ORACLE_TIME_BUDGET_S: f64 = 10.0;

pub const GRAM_TOL: f64 = 1e-6;
pub const GRAM_TRIALS: usize = 100;

pub const FD_STEP: f64 = 1e-3;
pub const GRAD_REL_TOL: f64 = 1e-3;
pub const GRAD_TIME_BUDGET_S: f64 = 60.0;
/// Largest share of coordinates whose ±step probe may straddle a rectifier kink.
pub const MAX_KINK_FRACTION: f64 = 0.5;

pub const STYLE_STEPS: usize = 200;
pub const SELF_STEPS: usize = 300;
pub const SELF_RATIO_BOUND: f64 = 0.1;
pub const OPT_TIME_BUDGET_S: f64 = 300.0;

pub const REPRO_STEPS: usize = 12;
pub const RESUME_AT: usize = 6;
pub const RESUME_REL_TOL: f64 = 1e-5;

fn feature(layer: &str, data: Array3<f64>) -> FeatureMap<f64> {
    FeatureMap::new(layer, data).expect("non-empty feature map")
}

/// Brute-force oracle equivalence for every loss operation.
pub fn loss_oracles() -> Check {
    let started = Instant::now();
    let mut r = rng(11);
    let mut worst = 0.0f64;
    let mut track = |what: &str, trial: usize, err: f64| -> Result<(), String> {
        worst = worst.max(err);
        ensure!(err <= ORACLE_REL_TOL, "{what}: trial {trial} relative error {err:.3e}");
        Ok(())
    };
    for trial in 0..ORACLE_TRIALS {
        let c = r.random_range(1..=8);
        let (h, w) = (r.random_range(1..=6), r.random_range(1..=6));
        let y = random_array(&mut r, (c, h, w), -2.0, 2.0);
        let yhat = random_array(&mut r, (c, h, w), -2.0, 2.0);

        let got = content_loss(&feature("a", y.clone()), &feature("a", yhat.clone())).map_err(fail)?;
        track(
            "content_loss",
            trial,
            scalar_rel_err(got, oracle::content_loss(&y, &yhat)),
        )?;

        let g = gram_matrix(y.view());
        let want = oracle::gram(&y);
        track("gram_matrix", trial, normwise_rel_err(g.iter(), want.iter()))?;

        let (h2, w2) = (r.random_range(1..=6), r.random_range(1..=6));
        let other = random_array(&mut r, (c, h2, w2), -2.0, 2.0);
        let got = style_loss_layer(&feature("a", y.clone()), &feature("a", other.clone())).map_err(fail)?;
        track(
            "style_loss_layer",
            trial,
            scalar_rel_err(got, oracle::style_loss_layer(&y, &other)),
        )?;

        let mut cfg = LossConfig::default();
        for wgt in cfg.style_layers.values_mut() {
            *wgt = r.random_range(0.01..3.0);
        }
        let (mut fy, mut fyhat): (FeatureSet<f64>, FeatureSet<f64>) = (BTreeMap::new(), BTreeMap::new());
        let mut want = 0.0;
        for (layer, &wgt) in &cfg.style_layers {
            let cl = r.random_range(1..=8);
            let shape_a = (cl, r.random_range(1..=6), r.random_range(1..=6));
            let shape_b = (cl, r.random_range(1..=6), r.random_range(1..=6));
            let a = random_array(&mut r, shape_a, 0.0, 2.0);
            let b = random_array(&mut r, shape_b, 0.0, 2.0);
            want += wgt * oracle::style_loss_layer(&a, &b);
            fy.insert(layer.clone(), feature(layer, a));
            fyhat.insert(layer.clone(), feature(layer, b));
        }
        let got = total_style_loss(&fy, &fyhat, &cfg).map_err(fail)?;
        track("total_style_loss", trial, scalar_rel_err(got, want))?;

        let img = random_array(&mut r, (3, h.max(2), w.max(2)), 0.0, 1.0);
        let got = tv_loss(&ImageTensor::new(img.clone(), RangeMode::Unit).map_err(fail)?);
        track("tv_loss", trial, scalar_rel_err(got, oracle::tv_loss(&img)))?;
    }
    let secs = started.elapsed().as_secs_f64();
    ensure!(
        secs < ORACLE_TIME_BUDGET_S,
        "took {secs:.1}s (budget {ORACLE_TIME_BUDGET_S}s)"
    );
    Ok(format!(
        "{ORACLE_TRIALS} random shapes x 5 ops, worst relative error {worst:.1e} (tol {ORACLE_REL_TOL:.0e}), {secs:.2}s"
    ))
}

/// Symmetry, positive semidefiniteness, permutation invariance and
/// quadratic scaling of the Gram matrix.
pub fn gram_properties() -> Check {
    let mut r = rng(22);
    let (mut asym, mut min_eig, mut perm, mut scale) = (0.0f64, f64::INFINITY, 0.0f64, 0.0f64);
    for trial in 0..GRAM_TRIALS {
        let c = r.random_range(1..=8);
        let (h, w) = (r.random_range(1..=6), r.random_range(1..=6));
        let f = random_array(&mut r, (c, h, w), -2.0, 2.0);
        let g = gram_matrix(f.view());

        let a = (&g - &g.t()).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        asym = asym.max(a);
        ensure!(a <= GRAM_TOL, "trial {trial}: asymmetry {a:.3e}");

        let e = oracle::symmetric_eigenvalues(&g)
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        min_eig = min_eig.min(e);
        ensure!(e >= -GRAM_TOL, "trial {trial}: min eigenvalue {e:.3e}");

        let mut order: Vec<usize> = (0..h * w).collect();
        order.shuffle(&mut r);
        let flat = f.to_shape((c, h * w)).unwrap();
        let shuffled = Array3::from_shape_fn((c, h, w), |(ci, y, x)| flat[[ci, order[y * w + x]]]);
        let p = max_abs_diff(&gram_matrix(shuffled.view()), &g);
        perm = perm.max(p);
        ensure!(p <= GRAM_TOL, "trial {trial}: permutation changed the Gram by {p:.3e}");

        let s: f64 = r.random_range(-3.0..3.0);
        let gs = gram_matrix((&f * s).view());
        let want = &g * (s * s);
        let rel = max_abs_diff(&gs, &want) / want.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        scale = scale.max(rel);
        ensure!(rel <= GRAM_TOL, "trial {trial}: s^2 scaling off by {rel:.3e} (s = {s})");
    }
    Ok(format!(
        "{GRAM_TRIALS} trials each: max asymmetry {asym:.1e}, min eigenvalue {min_eig:.1e}, \
         permutation drift {perm:.1e}, scaling error {scale:.1e}"
    ))
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Truncated extractor plus objective variants that isolate each term.
fn gradient_loss_configs() -> Vec<(&'static str, LossConfig)> {
    let base = LossConfig {
        content_layer: "conv1_2".into(),
        style_layers: [("conv1_1".to_string(), 0.5), ("conv1_2".to_string(), 1.0)].into(),
        ..LossConfig::default()
    };
    let only = |c: f64, s: f64, t: f64| LossConfig {
        lambda_content: c,
        lambda_style: s,
        lambda_tv: t,
        ..base.clone()
    };
    vec![
        ("defaults", base.clone()),
        ("content", only(1.0, 0.0, 0.0)),
        ("style", only(0.0, 1.0, 0.0)),
        ("tv", only(0.0, 0.0, 1.0)),
    ]
}

/// Analytic vs central-difference gradients of the objective (w.r.t. the
/// output image) and of the tiny network (w.r.t. every parameter).
pub fn gradient_check() -> Check {
    let started = Instant::now();
    let loss_summary = loss_gradient_check()?;
    let net_summary = network_gradient_check()?;
    let secs = started.elapsed().as_secs_f64();
    ensure!(
        secs < GRAD_TIME_BUDGET_S,
        "took {secs:.1}s (budget {GRAD_TIME_BUDGET_S}s)"
    );
    Ok(format!("{loss_summary}; {net_summary}; {secs:.1}s"))
}

pub fn loss_gradient_check() -> Check {
    loss_gradient_check_with(FD_STEP)
}

pub fn loss_gradient_check_with(step: f64) -> Check {
    let fx = Extractor64::seeded_until(5, "conv1_2").map_err(fail)?;
    let mut r = rng(33);
    let content = random_image(&mut r, 8, 8);
    let style = random_image(&mut r, 8, 8);
    let output = random_image(&mut r, 8, 8);
    let (mut worst, mut straddling, mut probed) = (0.0f64, 0usize, 0usize);
    for (name, cfg) in gradient_loss_configs() {
        let (_, analytic) = total_loss_with_grad(&content, &style, &output, &fx, &cfg).map_err(fail)?;
        let targets = LossTargets::new(&fx, &content, &style, &cfg).map_err(fail)?;
        let eval = |img: Array3<f64>| -> Result<(f64, Vec<bool>), String> {
            let mut g = Graph::new();
            let out = g.leaf(img.into_dyn(), false);
            let nodes = targets.build(&mut g, &fx, out, &cfg).map_err(fail)?;
            Ok((g.scalar(nodes.total), g.rectifier_pattern()))
        };
        let (_, pattern) = eval(output.data().clone())?;
        let (mut kept_a, mut kept_n) = (Vec::new(), Vec::new());
        let mut any_nonzero = false;
        for (idx, &a) in analytic.indexed_iter() {
            let mut plus = output.data().clone();
            plus[idx] += step;
            let mut minus = output.data().clone();
            minus[idx] -= step;
            let ((fp, pp), (fm, pm)) = (eval(plus)?, eval(minus)?);
            let numeric = (fp - fm) / (2.0 * step);
            any_nonzero |= numeric != 0.0;
            probed += 1;
            if pp != pattern || pm != pattern {
                straddling += 1;
                continue;
            }
            kept_a.push(a);
            kept_n.push(numeric);
        }
        ensure!(
            any_nonzero,
            "objective `{name}` has an identically zero numeric gradient"
        );
        ensure!(
            !kept_a.is_empty(),
            "objective `{name}`: every probe straddles a rectifier kink"
        );
        let err = normwise_rel_err(kept_a.iter(), kept_n.iter());
        ensure!(
            err <= GRAD_REL_TOL,
            "objective `{name}`: gradient relative error {err:.3e}"
        );
        worst = worst.max(err);
    }
    let share = straddling as f64 / probed as f64;
    ensure!(
        share <= MAX_KINK_FRACTION,
        "{straddling} of {probed} objective probes straddle a rectifier kink"
    );
    Ok(format!(
        "objective w.r.t. 8x8 output: rel err {worst:.1e} ({straddling}/{probed} kink-straddling probes skipped)"
    ))
}

pub fn tiny_network_spec() -> GenerationNetworkSpec {
    GenerationNetworkSpec {
        base_channels: 4,
        ..GenerationNetworkSpec::default()
    }
}

type ScalarAndGrads = (f64, Vec<Option<ArrayD<f64>>>);

/// `Σ forward(x) ⊙ probe` and its analytic parameter gradients.
fn network_scalar_and_grads(
    params: &photostyle::Params64,
    input: &ImageTensor<f64>,
    probe: &Arc<ArrayD<f64>>,
) -> Result<ScalarAndGrads, String> {
    let arch = params.architecture();
    let mut g = Graph::new();
    let bound = params.bind(&mut g, true);
    let x = g.leaf(input.data().clone().into_dyn(), false);
    let y = arch.forward_graph(&mut g, &bound, x).map_err(fail)?;
    let s = g.dot_const(y, probe.clone());
    let grads = g.backward(s);
    Ok((
        g.scalar(s),
        bound.vars().iter().map(|&v| grads.get(v).cloned()).collect(),
    ))
}

pub fn network_gradient_check() -> Check {
    network_gradient_check_with(FD_STEP)
}

pub fn network_gradient_check_with(step: f64) -> Check {
    let mut r = rng(44);
    let mut params = build_network::<f64>(&tiny_network_spec(), 3).map_err(fail)?;
    // Zero-initialized tensors (biases, residual expansions) get random
    // values so every gradient is probed away from the init point.
    for p in params.params_mut() {
        if p.value.iter().all(|&v| v == 0.0) {
            p.value.mapv_inplace(|_| r.random_range(-0.1..0.1));
        }
    }
    let input = random_image(&mut r, 8, 8);
    let probe = Arc::new(random_array(&mut r, (3, 8, 8), -1.0, 1.0).into_dyn());
    let (_, analytic) = network_scalar_and_grads(&params, &input, &probe)?;
    let eval = |p: &photostyle::Params64| -> Result<(f64, Vec<bool>), String> {
        let mut g = Graph::new();
        let bound = p.bind(&mut g, false);
        let x = g.leaf(input.data().clone().into_dyn(), false);
        let y = p.architecture().forward_graph(&mut g, &bound, x).map_err(fail)?;
        let s = g.dot_const(y, probe.clone());
        Ok((g.scalar(s), g.rectifier_pattern()))
    };
    let (reference, pattern) = eval(&params)?;
    let direct: f64 = forward(&params, &input)
        .map_err(fail)?
        .data()
        .iter()
        .zip(probe.iter())
        .map(|(a, b)| a * b)
        .sum();
    ensure!(
        scalar_rel_err(direct, reference) <= 1e-12,
        "graph and direct forward disagree: {direct} vs {reference}"
    );

    let (mut all_a, mut all_n) = (Vec::new(), Vec::new());
    let (mut straddling, mut probed) = (0usize, 0usize);
    let mut worst_tensor = (0.0f64, String::new());
    for (i, grad) in analytic.iter().enumerate() {
        let name = params.params()[i].name.clone();
        let a = grad
            .clone()
            .ok_or_else(|| format!("parameter {name} received no gradient"))?;
        let (mut kept_a, mut kept_n) = (Vec::new(), Vec::new());
        for j in 0..a.len() {
            let orig = params.params()[i].value.as_slice().unwrap()[j];
            params.params_mut()[i].value.as_slice_mut().unwrap()[j] = orig + step;
            let (fp, pp) = eval(&params)?;
            params.params_mut()[i].value.as_slice_mut().unwrap()[j] = orig - step;
            let (fm, pm) = eval(&params)?;
            params.params_mut()[i].value.as_slice_mut().unwrap()[j] = orig;
            probed += 1;
            if pp != pattern || pm != pattern {
                straddling += 1;
                continue;
            }
            kept_a.push(a.as_slice().unwrap()[j]);
            kept_n.push((fp - fm) / (2.0 * step));
        }
        let err = normwise_rel_err(kept_a.iter(), kept_n.iter());
        if err > worst_tensor.0 {
            worst_tensor = (err, name.clone());
        }
        ensure!(
            err <= GRAD_REL_TOL,
            "parameter {name}: gradient relative error {err:.3e}"
        );
        all_a.extend(kept_a);
        all_n.extend(kept_n);
    }
    let overall = normwise_rel_err(all_a.iter(), all_n.iter());
    ensure!(overall <= GRAD_REL_TOL, "network gradient relative error {overall:.3e}");
    let share = straddling as f64 / probed as f64;
    ensure!(
        share <= MAX_KINK_FRACTION,
        "{straddling} of {probed} parameter probes straddle a rectifier kink"
    );
    Ok(format!(
        "tiny network w.r.t. {probed} params in {} tensors: rel err {overall:.1e} (worst tensor {:.1e}; \
         {straddling} kink-straddling probes skipped)",
        params.len(),
        worst_tensor.0
    ))
}

/// Shape preservation, input validation, residual identity, fusion audit
/// and parameter participation.
pub fn architecture_contracts() -> Check {
    let spec = GenerationNetworkSpec::default();
    let params = build_network::<f32>(&spec, 0).map_err(fail)?;
    for (h, w) in [(4, 4), (128, 128), (500, 500)] {
        let input = if h == 4 {
            Image32::filled(h, w, 0.0).map_err(fail)?
        } else {
            synthetic::content_scene(h, w)
        };
        let out = forward(&params, &input).map_err(fail)?;
        ensure!(
            out.shape() == [3, h, w],
            "input [3,{h},{w}] gave output {:?}",
            out.shape()
        );
        ensure!(
            out.data().iter().all(|v| (0.0..=1.0).contains(v)),
            "output for [3,{h},{w}] leaves [0,1]"
        );
    }
    for (h, w) in [(6, 6), (130, 128), (128, 66)] {
        let res = forward(&params, &Image32::filled(h, w, 0.5).map_err(fail)?);
        ensure!(
            matches!(res, Err(Error::IndivisibleInput { .. })),
            "input [3,{h},{w}] was not rejected as indivisible"
        );
    }

    let mut r = rng(55);
    for c in 1..=8 {
        let x = random_array(&mut r, (c, 5, 7), -1.0, 1.0);
        let y = bottleneck_block(x.view(), &BottleneckParams::zeros(c));
        ensure!(y == x, "zero-weight bottleneck with C={c} is not an exact identity");
    }
    ensure!(
        BottleneckParams::<f64>::zeros(4).internal_channels() == 1,
        "C=4 bottleneck must squeeze to 1 channel"
    );
    let mut worst = 0.0f64;
    for c in [1usize, 3, 4, 8, 13] {
        let mid = c.div_ceil(4);
        let p = BottleneckParams {
            reduce_weight: random_array(&mut r, (mid, c, 3, 3), -0.5, 0.5),
            reduce_bias: random_array(&mut r, mid, -0.2, 0.2),
            expand_weight: random_array(&mut r, (c, mid, 1, 1), -0.5, 0.5),
            expand_bias: random_array(&mut r, c, -0.2, 0.2),
        };
        let x = random_array(&mut r, (c, 6, 5), -1.0, 1.0);
        let got = bottleneck_block(x.view(), &p) - &x;
        let hidden = oracle::conv2d(&x, &p.reduce_weight, &p.reduce_bias, 1, 1).mapv(|v| v.max(0.0));
        let want = oracle::conv2d(&hidden, &p.expand_weight, &p.expand_bias, 1, 0);
        let err = got.iter().zip(&want).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        worst = worst.max(err);
        ensure!(
            err <= 1e-5,
            "bottleneck C={c} differs from the direct oracle by {err:.3e}"
        );
    }

    let arch = params.architecture();
    let audit = arch.fusion_audit();
    ensure!(!audit.is_empty(), "no fusion audit records");
    for a in audit {
        let sum: usize = a.input_channels.iter().sum();
        ensure!(
            a.concat_channels == sum,
            "fusion {} target {}: concat {} != sum {sum}",
            a.fusion,
            a.target_branch,
            a.concat_channels
        );
        ensure!(
            a.output_channels == spec.branch_width(a.target_branch),
            "fusion {} target {}: projected to {} channels",
            a.fusion,
            a.target_branch,
            a.output_channels
        );
    }

    let tiny = build_network::<f64>(&tiny_network_spec(), 1).map_err(fail)?;
    let probe = Arc::new(ArrayD::from_elem(vec![3, 8, 8], 1.0));
    let input = random_image(&mut r, 8, 8);
    let (_, grads) = network_scalar_and_grads(&tiny, &input, &probe)?;
    let layer_names: Vec<String> = tiny.architecture().layers().iter().map(|l| l.name.clone()).collect();
    for (p, g) in tiny.params().iter().zip(&grads) {
        ensure!(g.is_some(), "orphan parameter {} (no path to the output)", p.name);
        ensure!(
            layer_names.contains(&p.layer),
            "parameter {} names unknown layer {}",
            p.name,
            p.layer
        );
    }
    ensure!(
        tiny.len() == 2 * layer_names.len(),
        "parameter count does not match the layer plan"
    );

    Ok(format!(
        "shapes kept for 4x4/128x128/500x500, indivisible inputs rejected, zero bottlenecks exact, \
         bottleneck oracle err {worst:.1e}, {} fusion audits balanced, {} params all reachable",
        audit.len(),
        tiny.len()
    ))
}

/// Channel counts of every parameter scale by exactly 2 between base widths 8 and 16.
pub fn width_scaling() -> Check {
    let narrow = build_network::<f32>(
        &GenerationNetworkSpec {
            base_channels: 8,
            ..Default::default()
        },
        0,
    )
    .map_err(fail)?;
    let wide = build_network::<f32>(&GenerationNetworkSpec::default(), 0).map_err(fail)?;
    ensure!(narrow.len() == wide.len(), "parameter counts differ");
    for (a, b) in narrow.params().iter().zip(wide.params()) {
        ensure!(a.name == b.name, "parameter order differs: {} vs {}", a.name, b.name);
        for (axis, (&n, &w)) in a.value.shape().iter().zip(b.value.shape()).enumerate() {
            let spatial = a.value.ndim() == 4 && axis >= 2;
            let rgb = n == 3 && w == 3 && (a.name.starts_with("stem") || a.name.starts_with("head.output"));
            if spatial || rgb {
                ensure!(n == w, "{} axis {axis}: {n} vs {w}", a.name);
            } else {
                ensure!(w == 2 * n, "{} axis {axis}: {n} -> {w} is not 2x", a.name);
            }
        }
    }
    Ok(format!("{} parameter tensors scale by 2x", wide.len()))
}

/// Concat arithmetic, identity on a single input, and constant preservation.
pub fn fuse_examples() -> Check {
    let mut g = Graph::<f64>::new();
    let a = g.leaf(ArrayD::from_elem(vec![8, 100, 100], 0.1), false);
    let b = g.leaf(ArrayD::from_elem(vec![16, 50, 50], 0.7), false);
    let inputs = [ScaledVar { var: a, scale: 1 }, ScaledVar { var: b, scale: 2 }];
    let out = fuse(&mut g, &inputs, 1, &[vec![], vec![]]).map_err(fail)?;
    ensure!(g.shape(out) == [24, 100, 100], "fused shape {:?}", g.shape(out));
    let v = g.value3(out);
    ensure!(
        v.index_axis(Axis(0), 20).iter().all(|&x| (x - 0.7).abs() < 1e-12),
        "upsampled constant map is not constant"
    );
    let same = fuse(&mut g, &inputs[..1], 1, &[vec![]]).map_err(fail)?;
    ensure!(same == a, "single map at the target scale was not returned unchanged");
    let bad = fuse(&mut g, &[ScaledVar { var: b, scale: 3 }], 1, &[vec![]]);
    ensure!(matches!(bad, Err(Error::ScaleMismatch(_))), "scale 3 accepted");
    Ok("concat [8,100,100]+[16,50,50] -> [24,100,100], identity and constants hold".into())
}

pub struct OptimizationOutcome {
    pub check: Check,
    pub stylized: Option<Image32>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// The 200-step bundled-pair run and the 300-step content == style run.
pub fn desk_scale_optimization() -> OptimizationOutcome {
    let mut stylized = None;
    let check = (|| -> Check {
        let started = Instant::now();
        let (content, style) = smoke_pair::<f32>();
        let fx = Extractor32::seeded(0);
        let digest = fx.weights_digest();
        let net = GenerationNetworkSpec::default();
        let loss = LossConfig::default();
        let train = TrainingConfig {
            steps: STYLE_STEPS,
            ..TrainingConfig::default()
        };
        let run = run_transfer(&content, &style, &net, &loss, &train, &fx).map_err(fail)?;
        let totals: Vec<f64> = run.loss_history.iter().map(|r| r.total).collect();
        ensure!(
            totals.len() == STYLE_STEPS,
            "recorded {} of {STYLE_STEPS} steps",
            totals.len()
        );
        ensure!(totals.iter().all(|v| v.is_finite()), "non-finite loss in history");
        let (first, last) = (mean(&totals[..20]), mean(&totals[totals.len() - 20..]));
        ensure!(
            last < first,
            "mean of last 20 steps {last:.4e} is not below first 20 {first:.4e}"
        );
        ensure!(
            run.final_image.shape() == content.shape(),
            "stylized image changed size"
        );
        stylized = Some(run.final_image);

        let self_train = TrainingConfig {
            steps: SELF_STEPS,
            ..TrainingConfig::default()
        };
        let same = run_transfer(&content, &content, &net, &loss, &self_train, &fx).map_err(fail)?;
        let initial = same.loss_history.first().map(|r| r.total).unwrap_or(f64::NAN);
        let fin = same.loss_history.last().map(|r| r.total).unwrap_or(f64::NAN);
        let ratio = fin / initial;
        ensure!(
            ratio < SELF_RATIO_BOUND,
            "content == style: final/initial = {ratio:.4} (bound {SELF_RATIO_BOUND})"
        );
        ensure!(
            fx.weights_digest() == digest,
            "extractor weights changed during training"
        );
        let secs = started.elapsed().as_secs_f64();
        ensure!(
            secs <= OPT_TIME_BUDGET_S,
            "took {secs:.0}s (budget {OPT_TIME_BUDGET_S}s)"
        );
        Ok(format!(
            "{STYLE_STEPS} steps: first-20 mean {first:.3e} -> last-20 mean {last:.3e}; \
             content==style {SELF_STEPS} steps: final/initial {ratio:.3} (< {SELF_RATIO_BOUND}); \
             extractor unchanged; {secs:.0}s"
        ))
    })();
    OptimizationOutcome { check, stylized }
}

/// Contour ordering against a noise baseline, plus the exact Sobel step response.
pub fn structure_preservation(stylized: &Image32) -> Check {
    let (content, _) = smoke_pair::<f32>();
    let (h, w) = content.dims();
    let noise = synthetic::uniform_noise::<f32>(h, w, 2024);
    let kept = structure_score(&content, stylized).map_err(fail)?;
    let baseline = structure_score(&content, &noise).map_err(fail)?;
    ensure!(
        kept > baseline,
        "stylized similarity {kept:.4} does not exceed noise similarity {baseline:.4}"
    );

    let step = Array2::from_shape_fn((7, 10), |(_, x)| if x < 5 { 0.0f64 } else { 1.0 });
    let edges = sobel_contour(step.view()).map_err(fail)?;
    for ((y, x), &v) in edges.data.indexed_iter() {
        let want = if x == 4 || x == 5 { 4.0 } else { 0.0 };
        ensure!(v == want, "Sobel response at ({y},{x}) is {v}, expected {want}");
    }
    Ok(format!(
        "similarity(content, stylized) = {kept:.4} > similarity(content, noise) = {baseline:.4}; \
         unit step response exact"
    ))
}

/// The 128/256/512 ladder at one step per resolution.
pub fn benchmark_protocol() -> Check {
    let fx = Extractor32::seeded(0);
    let report = run_benchmark(
        &BENCHMARK_RESOLUTIONS,
        1,
        &GenerationNetworkSpec::default(),
        &LossConfig::default(),
        &fx,
    )
    .map_err(fail)?;
    ensure!(report.rows.len() == 3, "{} rows", report.rows.len());
    for (row, &(h, w)) in report.rows.iter().zip(&BENCHMARK_RESOLUTIONS) {
        ensure!(
            (row.height, row.width) == (h, w),
            "row for {}x{}",
            row.height,
            row.width
        );
        ensure!(row.wall_seconds > 0.0, "non-positive time at {h}x{w}");
        ensure!(!row.device.is_empty(), "missing device descriptor");
    }
    for pair in report.rows.windows(2) {
        ensure!(
            pair[1].wall_seconds > pair[0].wall_seconds,
            "time did not increase from {}x{} ({:.3}s) to {}x{} ({:.3}s)",
            pair[0].height,
            pair[0].width,
            pair[0].wall_seconds,
            pair[1].height,
            pair[1].width,
            pair[1].wall_seconds
        );
    }
    let times: Vec<String> = report
        .rows
        .iter()
        .map(|r| format!("{}x{} {:.2}s", r.height, r.width, r.wall_seconds))
        .collect();
    Ok(format!("{} on {}", times.join(", "), report.rows[0].device))
}

/// Byte-identical histories across runs, and save/resume continuity.
pub fn reproducibility() -> Check {
    let (content, style) = smoke_pair::<f32>();
    let fx = Extractor32::seeded(0);
    let net = GenerationNetworkSpec::default();
    let loss = LossConfig::default();
    let quiet = TrainingConfig {
        steps: REPRO_STEPS,
        seed: 7,
        record_wall_time: false,
        ..TrainingConfig::default()
    };
    let a = run_transfer(&content, &style, &net, &loss, &quiet, &fx).map_err(fail)?;
    let b = run_transfer(&content, &style, &net, &loss, &quiet, &fx).map_err(fail)?;
    let (csv_a, csv_b) = (history_csv(&a.loss_history), history_csv(&b.loss_history));
    ensure!(
        csv_a.as_bytes() == csv_b.as_bytes(),
        "loss histories differ between identical runs"
    );
    ensure!(
        a.final_params == b.final_params,
        "final parameters differ between identical runs"
    );

    let timed = TrainingConfig {
        record_wall_time: true,
        ..quiet.clone()
    };
    let c = run_transfer(&content, &style, &net, &loss, &timed, &fx).map_err(fail)?;
    for (x, y) in a.loss_history.iter().zip(&c.loss_history) {
        ensure!(
            (x.step, x.total, x.content, x.style, x.tv) == (y.step, y.total, y.content, y.style, y.tv),
            "step {}: loss columns depend on timing",
            x.step
        );
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("resume.ckpt");
    {
        let mut first = Transfer::new(&fx, &content, &style, &net, &loss, &quiet).map_err(fail)?;
        for _ in 0..RESUME_AT {
            first.step().map_err(fail)?;
        }
        first.save_checkpoint(&path).map_err(fail)?;
    }
    let mut resumed = Transfer::resume(&path, &fx).map_err(fail)?;
    ensure!(
        resumed.steps_done() == RESUME_AT,
        "resumed at step {}",
        resumed.steps_done()
    );
    while resumed.step().map_err(fail)?.is_some() {}
    let mut worst = 0.0f64;
    for (x, y) in a.loss_history.iter().zip(resumed.history()) {
        let rel = scalar_rel_err(y.total, x.total);
        worst = worst.max(rel);
        ensure!(
            rel <= RESUME_REL_TOL,
            "step {}: resumed loss differs by {rel:.3e}",
            x.step
        );
    }
    ensure!(
        resumed.history().len() == REPRO_STEPS,
        "resumed run recorded {} steps",
        resumed.history().len()
    );
    Ok(format!(
        "two {REPRO_STEPS}-step runs byte-identical ({} bytes); resume at step {RESUME_AT}: \
         max per-step relative difference {worst:.1e}",
        csv_a.len()
    ))
}
