//! Network assembly, parameter layout and checkpoints.
//!
//! Parameter names are stable and grouped by prefix: `stage1/` holds the
//! single-stage network (lifting layer, residual blocks, aggregation,
//! attention, decoder), `link/` the per-block link layers between adjacent
//! stages and `refine/` the blocks used by every stage after the first.

pub mod checkpoint;
mod config;
mod params;
mod stage;

pub use config::{Aggregation, Backbone, ModelConfig, IMAGE_CHANNELS, LEAKY_SLOPE};
pub use params::{init_params, ParamSpec, ParamStore};
pub use stage::{StageOutput, LINK, REFINE, STAGE1};

pub(crate) use stage::{block_name, forward_stage, Link};

use crate::error::{Error, Result};
use crate::gconv::ORIENTATIONS;
use crate::refine::{LinkMode, RefineConfig};
use crate::tensor::{Float, Tensor};

/// Named parameters plus the architecture that consumes them.
#[derive(Clone)]
pub struct ModelGraph<F: Float = f32> {
    config: RefineConfig,
    params: ParamStore<F>,
}

/// Every trainable tensor of the architecture, in creation order.
pub fn param_specs(cfg: &RefineConfig) -> Vec<ParamSpec> {
    let m = &cfg.base;
    let (k, w) = (m.kernel, m.width());
    let group = |out: usize, inp: usize| match m.backbone {
        Backbone::P4 => vec![out, inp, ORIENTATIONS, k, k],
        Backbone::RegularCnn => vec![out, inp, k, k],
    };
    let mut specs = Vec::new();
    let lift = match m.backbone {
        Backbone::P4 => vec![w, IMAGE_CHANNELS, 1, k, k],
        Backbone::RegularCnn => vec![w, IMAGE_CHANNELS, k, k],
    };
    specs.extend(ParamSpec::conv_pair(&format!("{STAGE1}/lift"), &lift));
    for i in 0..m.p4_layers {
        specs.extend(ParamSpec::conv_pair(&block_name(STAGE1, i), &group(w, w)));
    }
    let agg_in = match (m.backbone, m.aggregation) {
        (Backbone::P4, Aggregation::Learned) => ORIENTATIONS * w,
        _ => w,
    };
    specs.extend(ParamSpec::conv_pair(&format!("{STAGE1}/aggregate"), &[w, agg_in, k, k]));
    if m.use_se {
        let hidden = w / m.se_reduction;
        specs.extend(ParamSpec::conv_pair(&format!("{STAGE1}/se.reduce"), &[hidden, w, 1, 1]));
        specs.extend(ParamSpec::conv_pair(&format!("{STAGE1}/se.expand"), &[w, hidden, 1, 1]));
    }
    specs.extend(ParamSpec::conv_pair(&format!("{STAGE1}/decoder"), &[IMAGE_CHANNELS, w, 1, 1]));

    if cfg.stages > 1 && cfg.link != LinkMode::None {
        for i in 0..m.p4_layers {
            specs.extend(ParamSpec::conv_pair(&block_name(LINK, i), &group(w, w)));
        }
    }
    if cfg.stages > 1 && cfg.link == LinkMode::SkipConcat {
        for i in 0..m.p4_layers {
            specs.extend(ParamSpec::conv_pair(&block_name(REFINE, i), &group(w, 2 * w)));
        }
    }
    specs
}

impl ModelGraph<f32> {
    /// Freshly initialised network from the init stream of `seed`.
    pub fn build(config: RefineConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = init_params(&param_specs(&config), seed);
        Ok(ModelGraph { config, params })
    }
}

impl<F: Float> ModelGraph<F> {
    /// Wraps existing parameters, checking every name and shape.
    pub fn from_params(config: RefineConfig, params: ParamStore<F>) -> Result<Self> {
        config.validate()?;
        let params = params.reordered(&param_specs(&config))?;
        Ok(ModelGraph { config, params })
    }

    pub fn config(&self) -> &RefineConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore<F> {
        self.params
    }

    pub fn count_params(&self) -> usize {
        self.params.count_params()
    }

    /// Same network with the stage count replaced (parameters must still fit).
    pub fn with_stages(&self, stages: usize) -> Result<Self> {
        let config = RefineConfig {
            stages,
            ..self.config.clone()
        };
        let specs = param_specs(&config);
        let mut params = ParamStore::new();
        for s in &specs {
            params.insert(s.name.clone(), self.params.get(&s.name)?.clone());
        }
        ModelGraph::from_params(config, params)
    }

    pub fn cast<G: Float>(&self) -> ModelGraph<G> {
        ModelGraph {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    /// Runs the first stage only.
    pub fn forward(&self, input: &Tensor<F>) -> Result<StageOutput<F>> {
        forward_stage(&self.config.base, &self.params, input, Link::None)
    }
}

/// Single-stage network for `cfg`.
pub fn build_dsen(cfg: ModelConfig, seed: u64) -> Result<ModelGraph> {
    ModelGraph::build(RefineConfig::single(cfg), seed)
}

/// Plain-CNN counterpart with the same topology.
pub fn build_cnn_counterpart(cfg: ModelConfig, seed: u64) -> Result<ModelGraph> {
    if cfg.backbone != Backbone::RegularCnn {
        return Err(Error::config("the CNN counterpart needs backbone = cnn"));
    }
    ModelGraph::build(RefineConfig::single(cfg), seed)
}

pub fn count_params<F: Float>(model: &ModelGraph<F>) -> usize {
    model.count_params()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops;
    use crate::rng::random_tensor;

    fn sized(cfg: &ModelConfig) -> usize {
        param_specs(&RefineConfig::single(cfg.clone())).iter().map(ParamSpec::numel).sum()
    }

    #[test]
    fn default_counts() {
        assert_eq!(sized(&ModelConfig::default()), 50958);
        assert_eq!(sized(&ModelConfig::cnn()), 52113);
        let no_se = ModelConfig {
            use_se: false,
            ..Default::default()
        };
        assert_eq!(sized(&no_se), 50843);
        for aggregation in [Aggregation::OrientMax, Aggregation::OrientAvg] {
            let pooled = ModelConfig {
                aggregation,
                ..Default::default()
            };
            assert_eq!(sized(&pooled), 43458);
        }
    }

    #[test]
    fn block_breakdown() {
        let specs = param_specs(&RefineConfig::single(ModelConfig::default()));
        let group = |prefix: &str| -> usize {
            specs.iter().filter(|s| s.name.starts_with(prefix)).map(ParamSpec::numel).sum()
        };
        assert_eq!(group("stage1/lift"), 760);
        assert_eq!(group("stage1/block1"), 10010);
        assert_eq!(group("stage1/aggregate"), 10010);
        assert_eq!(group("stage1/se"), 115);
        assert_eq!(group("stage1/decoder"), 33);
    }

    #[test]
    fn cnn_counterpart_is_deterministic_and_size_preserving() {
        let a = build_cnn_counterpart(ModelConfig::cnn(), 3).unwrap();
        let b = build_cnn_counterpart(ModelConfig::cnn(), 3).unwrap();
        for ((na, ta), (nb, tb)) in a.params().iter().zip(b.params().iter()) {
            assert_eq!(na, nb);
            assert_eq!(ta.data(), tb.data());
        }
        let x = random_tensor::<f32>(&[1, 3, 64, 64], 1);
        let out = a.forward(&x).unwrap();
        assert_eq!(out.rain.shape(), &[1, 3, 64, 64]);
        assert_eq!(out.restored.shape(), &[1, 3, 64, 64]);
        assert!(build_cnn_counterpart(ModelConfig::default(), 3).is_err());
    }

    #[test]
    fn zero_decoder_leaves_input_untouched() {
        let mut m = build_dsen(ModelConfig::default(), 0).unwrap();
        m.params_mut().set_data("stage1/decoder.weight", vec![0.0; 30]).unwrap();
        m.params_mut().set_data("stage1/decoder.bias", vec![0.0; 3]).unwrap();
        let x = random_tensor::<f32>(&[1, 3, 9, 9], 2);
        let out = m.forward(&x).unwrap();
        assert_eq!(out.restored.data(), x.data());
        assert!(out.rain.data().iter().all(|&v| v == 0.0));
        assert_eq!(out.taps.len(), 4);
        assert_eq!(out.taps[0].shape(), &[1, 10, 4, 9, 9]);
    }

    #[test]
    fn restored_plus_rain_is_input() {
        let m = build_dsen(ModelConfig::default(), 1).unwrap();
        let x = random_tensor::<f32>(&[2, 3, 7, 6], 5);
        let out = m.forward(&x).unwrap();
        let diff = ops::sub(&x, &out.restored).unwrap();
        for (d, r) in diff.data().iter().zip(out.rain.data()) {
            assert!((d - r).abs() < 1e-6);
        }
    }

    #[test]
    fn undersized_input_is_rejected() {
        let m = build_dsen(ModelConfig::default(), 1).unwrap();
        assert!(m.forward(&Tensor::zeros(&[1, 3, 4, 9])).is_err());
        assert!(m.forward(&Tensor::zeros(&[1, 1, 9, 9])).is_err());
    }

    #[test]
    fn from_params_rejects_mismatch() {
        let m = build_dsen(ModelConfig::default(), 1).unwrap();
        let cnn = RefineConfig::single(ModelConfig::cnn());
        let err = ModelGraph::from_params(cnn, m.params().clone()).err().unwrap();
        assert!(matches!(err, Error::Checkpoint(_)));
    }
}
