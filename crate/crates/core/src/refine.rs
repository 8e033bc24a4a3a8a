//! Multi-stage self-refinement: the network is re-run on its own restored
//! output, optionally with per-layer links carrying the previous stage's
//! block features forward.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{forward_stage, Link, ModelConfig, ModelGraph, ParamStore, StageOutput};
use crate::ops;
use crate::tensor::{Float, Tensor};

pub const MAX_STAGES: usize = 8;

/// How features of stage `t - 1` enter stage `t`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LinkMode {
    /// Plain recurrence with full weight reuse.
    None,
    /// Linked features are concatenated to each block input; stages after
    /// the first use a separate shared set of wider blocks.
    SkipConcat,
    /// Linked features are added to each block input; all stages share the
    /// first stage's blocks.
    SkipAdd,
}

impl FromStr for LinkMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(LinkMode::None),
            "skip_concat" | "concat" => Ok(LinkMode::SkipConcat),
            "skip_add" | "add" => Ok(LinkMode::SkipAdd),
            _ => Err(Error::config(format!(
                "unknown link mode `{s}` (expected none, skip_concat or skip_add)"
            ))),
        }
    }
}

impl fmt::Display for LinkMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LinkMode::None => "none",
            LinkMode::SkipConcat => "skip_concat",
            LinkMode::SkipAdd => "skip_add",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RefineConfig {
    pub stages: usize,
    pub link: LinkMode,
    pub base: ModelConfig,
}

impl RefineConfig {
    pub fn single(base: ModelConfig) -> Self {
        RefineConfig {
            stages: 1,
            link: LinkMode::None,
            base,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_STAGES).contains(&self.stages) {
            return Err(Error::config(format!(
                "stages must be in 1..={MAX_STAGES}, got {}",
                self.stages
            )));
        }
        self.base.validate()
    }
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            stages: 2,
            link: LinkMode::SkipConcat,
            base: ModelConfig::default(),
        }
    }
}

/// Loss over the stage outputs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LossMode {
    /// Only the last stage is supervised.
    #[default]
    Final,
    /// Mean of the per-stage losses.
    PerStage,
}

impl FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "final" => Ok(LossMode::Final),
            "per_stage" => Ok(LossMode::PerStage),
            _ => Err(Error::config(format!(
                "unknown loss mode `{s}` (expected final or per_stage)"
            ))),
        }
    }
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossMode::Final => "final",
            LossMode::PerStage => "per_stage",
        })
    }
}

/// Freshly initialised multi-stage network.
pub fn build_sdsen(cfg: RefineConfig, seed: u64) -> Result<ModelGraph> {
    ModelGraph::build(cfg, seed)
}

/// Runs every stage; stage `t >= 2` consumes the restored output of stage `t - 1`.
pub fn forward_multistage<F: Float>(model: &ModelGraph<F>, input: &Tensor<F>) -> Result<Vec<StageOutput<F>>> {
    let cfg = model.config();
    let mut outputs: Vec<StageOutput<F>> = Vec::with_capacity(cfg.stages);
    for t in 0..cfg.stages {
        let out = match outputs.last() {
            None => forward_stage(&cfg.base, model.params(), input, Link::None)?,
            Some(prev) => {
                let link = match cfg.link {
                    LinkMode::None => Link::None,
                    LinkMode::SkipConcat => Link::Concat(&prev.taps),
                    LinkMode::SkipAdd => Link::Add(&prev.taps),
                };
                forward_stage(&cfg.base, model.params(), &prev.restored, link)?
            }
        };
        debug_assert_eq!(outputs.len(), t);
        outputs.push(out);
    }
    Ok(outputs)
}

/// Final `(restored, rain)` for one `[3, H, W]` image, without recording
/// gradients. `rain` is everything removed over all stages, `image - restored`.
/// The restored image is not clamped.
pub fn restore<F: Float>(model: &ModelGraph<F>, image: &Tensor<F>) -> Result<(Tensor<F>, Tensor<F>)> {
    let &[c, h, w] = image.shape() else {
        return Err(Error::ShapeMismatch {
            op: "restore",
            left: image.shape().to_vec(),
            right: vec![3, 0, 0],
        });
    };
    let mut frozen = ParamStore::new();
    for (name, t) in model.params().iter() {
        frozen.insert(name, t.detach());
    }
    let frozen = ModelGraph::from_params(model.config().clone(), frozen)?;
    let input = Tensor::from_vec(&[1, c, h, w], image.data().to_vec())?;
    let last = forward_multistage(&frozen, &input)?.pop().expect("at least one stage");
    let rain = if model.config().stages == 1 {
        last.rain.into_vec()
    } else {
        image.data().iter().zip(last.restored.data()).map(|(&o, &b)| o - b).collect()
    };
    Ok((
        Tensor::from_vec(&[c, h, w], last.restored.into_vec())?,
        Tensor::from_vec(&[c, h, w], rain)?,
    ))
}

/// Mean squared error of the restored output(s) against `target`.
pub fn unroll_loss<F: Float>(outputs: &[StageOutput<F>], target: &Tensor<F>, mode: LossMode) -> Result<Tensor<F>> {
    let last = outputs
        .last()
        .ok_or_else(|| Error::config("loss needs at least one stage output"))?;
    match mode {
        LossMode::Final => ops::mse_loss(&last.restored, target),
        LossMode::PerStage => {
            let mut total = ops::mse_loss(&outputs[0].restored, target)?;
            for out in &outputs[1..] {
                total = ops::add(&total, &ops::mse_loss(&out.restored, target)?)?;
            }
            Ok(ops::mul_scalar(&total, 1.0 / outputs.len() as f64))
        }
    }
}
