//! Per-image-pair optimization of the generation network.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use ndarray::{Array3, ArrayD};
use serde::{Deserialize, Serialize};

use crate::archive::Archive;
use crate::autograd::Graph;
use crate::error::{Error, Result};
use crate::extractor::FeatureExtractor;
use crate::image_io::{ImageTensor, RangeMode};
use crate::loss::{LossBreakdown, LossConfig, LossTargets};
use crate::network::{build_network, Architecture, GenerationNetworkSpec, NetworkParameters};
use crate::optim::Adam;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub log_every: usize,
    pub checkpoint_every: Option<usize>,
    pub weight_decay: f64,
    /// When false, `wall_ms` is recorded as 0 so histories are byte-reproducible.
    pub record_wall_time: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            learning_rate: 1e-3,
            seed: 0,
            log_every: 10,
            checkpoint_every: None,
            weight_decay: 0.0,
            record_wall_time: true,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.steps == 0 {
            return bad("steps must be >= 1");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be > 0");
        }
        if self.log_every == 0 {
            return bad("log_every must be >= 1");
        }
        if self.checkpoint_every == Some(0) {
            return bad("checkpoint_every must be >= 1");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight_decay must be >= 0");
        }
        Ok(())
    }
}

/// Weighted objective terms evaluated at one step, before that step's update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub total: f64,
    pub content: f64,
    pub style: f64,
    pub tv: f64,
    pub wall_ms: f64,
}

#[derive(Clone, Debug)]
pub struct TrainingRun<T> {
    pub loss_history: Vec<StepRecord>,
    pub final_image: ImageTensor<T>,
    pub final_params: NetworkParameters<T>,
    pub final_breakdown: LossBreakdown,
    pub network: GenerationNetworkSpec,
    pub loss: LossConfig,
    pub training: TrainingConfig,
}

/// CSV with header `step,total,content,style,tv,wall_ms`.
pub fn write_history_csv<W: Write>(history: &[StepRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for rec in history {
        w.serialize(rec)
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    }
    w.flush()?;
    Ok(())
}

pub fn history_csv(history: &[StepRecord]) -> String {
    let mut buf = Vec::new();
    write_history_csv(history, &mut buf).expect("in-memory write");
    String::from_utf8(buf).expect("csv is utf-8")
}

pub fn read_history_csv(path: impl AsRef<Path>) -> Result<Vec<StepRecord>> {
    let mut r = csv::Reader::from_path(path.as_ref()).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    r.deserialize()
        .map(|rec| rec.map_err(|e| Error::InvalidConfig(e.to_string())))
        .collect()
}

impl<T: Scalar> TrainingRun<T> {
    pub fn history_csv(&self) -> String {
        history_csv(&self.loss_history)
    }

    pub fn write_history_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        write_history_csv(&self.loss_history, std::io::BufWriter::new(file))
    }
}

/// A run in progress. Owns its parameters and optimizer state; borrows the
/// frozen extractor.
pub struct Transfer<'fx, T: Scalar> {
    fx: &'fx FeatureExtractor<T>,
    arch: Architecture,
    targets: LossTargets<T>,
    content: ImageTensor<T>,
    style: ImageTensor<T>,
    params: NetworkParameters<T>,
    adam: Adam<T>,
    loss_cfg: LossConfig,
    train_cfg: TrainingConfig,
    history: Vec<StepRecord>,
    last_breakdown: LossBreakdown,
}

fn check_extractor<T: Scalar>(fx: &FeatureExtractor<T>, cfg: &LossConfig) -> Result<()> {
    for layer in cfg.required_layers() {
        if !fx.has_layer(&layer) {
            return Err(Error::ExtractorUnavailable(format!(
                "extractor does not provide layer `{layer}`"
            )));
        }
    }
    Ok(())
}

fn require_unit<T: Scalar>(img: &ImageTensor<T>, what: &str) -> Result<()> {
    if img.range() != RangeMode::Unit {
        return Err(Error::InvalidConfig(format!("{what} image must be in unit range")));
    }
    Ok(())
}

impl<'fx, T: Scalar> Transfer<'fx, T> {
    pub fn new(
        fx: &'fx FeatureExtractor<T>,
        content: &ImageTensor<T>,
        style: &ImageTensor<T>,
        net_spec: &GenerationNetworkSpec,
        loss_cfg: &LossConfig,
        train_cfg: &TrainingConfig,
    ) -> Result<Self> {
        train_cfg.validate()?;
        loss_cfg.validate()?;
        let params = build_network::<T>(net_spec, train_cfg.seed)?;
        let adam = Adam::new(
            train_cfg.learning_rate,
            train_cfg.weight_decay,
            params.params().iter().map(|p| p.value.shape()),
        );
        Self::assemble(fx, content, style, params, adam, loss_cfg, train_cfg, Vec::new())
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        fx: &'fx FeatureExtractor<T>,
        content: &ImageTensor<T>,
        style: &ImageTensor<T>,
        params: NetworkParameters<T>,
        adam: Adam<T>,
        loss_cfg: &LossConfig,
        train_cfg: &TrainingConfig,
        history: Vec<StepRecord>,
    ) -> Result<Self> {
        require_unit(content, "content")?;
        require_unit(style, "style")?;
        check_extractor(fx, loss_cfg)?;
        let arch = params.architecture();
        let factor = arch.spec().max_scale();
        let (h, w) = content.dims();
        if h % factor != 0 || w % factor != 0 {
            return Err(Error::IndivisibleInput {
                height: h,
                width: w,
                factor,
            });
        }
        let targets = LossTargets::new(fx, content, style, loss_cfg)?;
        Ok(Self {
            fx,
            arch,
            targets,
            content: content.clone(),
            style: style.clone(),
            params,
            adam,
            loss_cfg: loss_cfg.clone(),
            train_cfg: train_cfg.clone(),
            history,
            last_breakdown: LossBreakdown::default(),
        })
    }

    pub fn steps_done(&self) -> usize {
        self.history.len()
    }

    pub fn is_finished(&self) -> bool {
        self.history.len() >= self.train_cfg.steps
    }

    pub fn history(&self) -> &[StepRecord] {
        &self.history
    }

    pub fn params(&self) -> &NetworkParameters<T> {
        &self.params
    }

    pub fn optimizer(&self) -> &Adam<T> {
        &self.adam
    }

    pub fn training_config(&self) -> &TrainingConfig {
        &self.train_cfg
    }

    pub fn last_breakdown(&self) -> &LossBreakdown {
        &self.last_breakdown
    }

    /// Evaluates the objective, back-propagates and applies one Adam update.
    /// Returns `None` once the step budget is spent.
    pub fn step(&mut self) -> Result<Option<&StepRecord>> {
        if self.is_finished() {
            return Ok(None);
        }
        let started = Instant::now();
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g, true);
        let input = g.leaf(self.content.data().clone().into_dyn(), false);
        let output = self.arch.forward_graph(&mut g, &bound, input)?;
        let nodes = self.targets.build(&mut g, self.fx, output, &self.loss_cfg)?;
        let breakdown = nodes.breakdown(&g, &self.loss_cfg);
        let mut grads = g.backward(nodes.total);
        let grads: Vec<ArrayD<T>> = bound
            .vars()
            .iter()
            .zip(self.params.params())
            .map(|(&v, p)| grads.take(v).unwrap_or_else(|| ArrayD::zeros(p.value.shape())))
            .collect();
        drop(g);
        self.adam
            .update(self.params.params_mut().iter_mut().map(|p| &mut p.value), &grads);

        let wall_ms = if self.train_cfg.record_wall_time {
            started.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        };
        self.history.push(StepRecord {
            step: self.history.len() + 1,
            total: breakdown.total,
            content: breakdown.content.weighted,
            style: breakdown.style.weighted,
            tv: breakdown.tv.weighted,
            wall_ms,
        });
        self.last_breakdown = breakdown;
        Ok(self.history.last())
    }

    /// Current network output on the content image.
    pub fn render(&self) -> Result<ImageTensor<T>> {
        crate::network::forward(&self.params, &self.content)
    }

    pub fn finish(self) -> Result<TrainingRun<T>> {
        let final_image = self.render()?;
        Ok(TrainingRun {
            loss_history: self.history,
            final_image,
            final_params: self.params,
            final_breakdown: self.last_breakdown,
            network: self.arch.spec().clone(),
            loss: self.loss_cfg,
            training: self.train_cfg,
        })
    }

    /// Writes parameters, optimizer moments, step counter, history and both
    /// images so the run can continue bit-identically.
    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        let (first, second) = self.adam.moments();
        let meta = serde_json::json!({
            "network": self.arch.spec(),
            "seed": self.params.seed(),
            "loss": self.loss_cfg,
            "training": self.train_cfg,
            "adam_step": self.adam.steps_taken(),
            "history": self.history,
            "extractor_digest": self.fx.weights_digest(),
        });
        let mut a = Archive::new("transfer-checkpoint", meta);
        for p in self.params.params() {
            a.push(format!("param/{}", p.name), p.value.clone());
        }
        for (i, (m, v)) in first.iter().zip(second).enumerate() {
            a.push(format!("adam_m/{i}"), m.clone());
            a.push(format!("adam_v/{i}"), v.clone());
        }
        a.push("content", self.content.data().clone().into_dyn());
        a.push("style", self.style.data().clone().into_dyn());
        a.write(path)
    }

    pub fn resume(path: impl AsRef<Path>, fx: &'fx FeatureExtractor<T>) -> Result<Self> {
        let corrupt = |m: String| Error::CorruptCheckpoint(m);
        let mut a = Archive::<T>::read(path)?;
        if a.kind != "transfer-checkpoint" {
            return Err(corrupt(format!("unexpected archive kind `{}`", a.kind)));
        }
        let field = |name: &str| {
            a.meta
                .get(name)
                .cloned()
                .ok_or_else(|| corrupt(format!("missing `{name}`")))
        };
        let network: GenerationNetworkSpec =
            serde_json::from_value(field("network")?).map_err(|e| corrupt(e.to_string()))?;
        let seed: u64 = serde_json::from_value(field("seed")?).map_err(|e| corrupt(e.to_string()))?;
        let loss_cfg: LossConfig = serde_json::from_value(field("loss")?).map_err(|e| corrupt(e.to_string()))?;
        let train_cfg: TrainingConfig =
            serde_json::from_value(field("training")?).map_err(|e| corrupt(e.to_string()))?;
        let adam_step: u64 = serde_json::from_value(field("adam_step")?).map_err(|e| corrupt(e.to_string()))?;
        let history: Vec<StepRecord> = serde_json::from_value(field("history")?).map_err(|e| corrupt(e.to_string()))?;
        let digest: String = serde_json::from_value(field("extractor_digest")?).map_err(|e| corrupt(e.to_string()))?;
        if digest != fx.weights_digest() {
            return Err(Error::ExtractorUnavailable(
                "checkpoint was written with different extractor weights".into(),
            ));
        }
        if adam_step as usize != history.len() {
            return Err(corrupt("optimizer step count disagrees with history".into()));
        }

        let mut params = build_network::<T>(&network, seed).map_err(|e| corrupt(e.to_string()))?;
        let mut first = Vec::with_capacity(params.len());
        let mut second = Vec::with_capacity(params.len());
        for (i, p) in params.params_mut().iter_mut().enumerate() {
            let value = a.take(&format!("param/{}", p.name))?;
            let m = a.take(&format!("adam_m/{i}"))?;
            let v = a.take(&format!("adam_v/{i}"))?;
            if value.shape() != p.value.shape() || m.shape() != p.value.shape() || v.shape() != p.value.shape() {
                return Err(corrupt(format!("shape mismatch for {}", p.name)));
            }
            p.value = value;
            first.push(m);
            second.push(v);
        }
        let image = |arr: ArrayD<T>| -> Result<ImageTensor<T>> {
            let data: Array3<T> = arr.into_dimensionality().map_err(|e| corrupt(e.to_string()))?;
            ImageTensor::new(data, RangeMode::Unit).map_err(|e| corrupt(e.to_string()))
        };
        let content = image(a.take("content")?)?;
        let style = image(a.take("style")?)?;
        let adam = Adam::from_state(
            train_cfg.learning_rate,
            train_cfg.weight_decay,
            adam_step,
            first,
            second,
        );
        Self::assemble(fx, &content, &style, params, adam, &loss_cfg, &train_cfg, history)
    }
}

/// Runs the full step budget with the content image as network input.
pub fn run_transfer<T: Scalar>(
    content: &ImageTensor<T>,
    style: &ImageTensor<T>,
    net_spec: &GenerationNetworkSpec,
    loss_cfg: &LossConfig,
    train_cfg: &TrainingConfig,
    fx: &FeatureExtractor<T>,
) -> Result<TrainingRun<T>> {
    let mut run = Transfer::new(fx, content, style, net_spec, loss_cfg, train_cfg)?;
    while run.step()?.is_some() {}
    run.finish()
}
