//! One pass of the network: lifting, residual group blocks, aggregation,
//! channel attention and the 1×1 rain decoder.

use super::config::{Aggregation, Backbone, ModelConfig, IMAGE_CHANNELS, LEAKY_SLOPE};
use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::gconv::{orientation_pool, p4conv_p4, p4conv_z2, GFeatureMap, P4Filter, PoolMode};
use crate::ops;
use crate::tensor::{Float, Tensor};

pub const STAGE1: &str = "stage1";
pub const LINK: &str = "link";
pub const REFINE: &str = "refine";

/// Result of one stage.
#[derive(Clone, Debug)]
pub struct StageOutput<F: Float = f32> {
    /// Predicted rain layer `R`, `[N, 3, H, W]`.
    pub rain: Tensor<F>,
    /// Restored background `B = O - R`, unclamped.
    pub restored: Tensor<F>,
    /// Post-activation output of every residual block (`[N, K, 4, H, W]` on p4).
    pub taps: Vec<Tensor<F>>,
}

/// Features carried in from the previous stage.
#[derive(Clone, Copy)]
pub(crate) enum Link<'a, F: Float> {
    None,
    /// Concatenate the linked features and use the `refine/` blocks.
    Concat(&'a [Tensor<F>]),
    /// Add the linked features to each block input and reuse the `stage1/` blocks.
    Add(&'a [Tensor<F>]),
}

pub(crate) fn block_name(group: &str, i: usize) -> String {
    format!("{group}/block{}", i + 1)
}

/// Weight-and-bias convolution from the parameter store, dispatched on backbone.
fn conv_layer<F: Float>(cfg: &ModelConfig, params: &ParamStore<F>, prefix: &str, h: &Tensor<F>) -> Result<Tensor<F>> {
    let w = params.get(&format!("{prefix}.weight"))?;
    let b = params.get(&format!("{prefix}.bias"))?;
    match (cfg.backbone, w.rank()) {
        (Backbone::P4, 5) => {
            let filter = P4Filter::new(w.clone(), b.clone())?;
            if filter.orientations() == 1 {
                Ok(p4conv_z2(h, &filter)?.into_tensor())
            } else {
                Ok(p4conv_p4(&GFeatureMap::new(h.clone())?, &filter)?.into_tensor())
            }
        }
        _ => ops::conv2d(h, w, Some(b), 1, w.shape()[w.rank() - 1] / 2),
    }
}

pub(crate) fn forward_stage<F: Float>(
    cfg: &ModelConfig,
    params: &ParamStore<F>,
    input: &Tensor<F>,
    link: Link<'_, F>,
) -> Result<StageOutput<F>> {
    let s = input.shape();
    if s.len() != 4 || s[1] != IMAGE_CHANNELS {
        return Err(Error::ShapeMismatch {
            op: "forward",
            left: s.to_vec(),
            right: vec![0, IMAGE_CHANNELS, 0, 0],
        });
    }
    if s[2] < cfg.kernel || s[3] < cfg.kernel {
        return Err(Error::config(format!(
            "image {}x{} is smaller than the {}x{} kernel",
            s[2], s[3], cfg.kernel, cfg.kernel
        )));
    }

    let mut h = conv_layer(cfg, params, &format!("{STAGE1}/lift"), input)?;
    let mut taps = Vec::with_capacity(cfg.p4_layers);
    for i in 0..cfg.p4_layers {
        h = match link {
            Link::None => {
                let out = conv_layer(cfg, params, &block_name(STAGE1, i), &h)?;
                ops::leaky_relu(&ops::add(&h, &out)?, LEAKY_SLOPE)
            }
            Link::Concat(prev) => {
                let linked = conv_layer(cfg, params, &block_name(LINK, i), &prev[i])?;
                let joined = ops::concat_channels(&[&h, &linked])?;
                let out = conv_layer(cfg, params, &block_name(REFINE, i), &joined)?;
                // Identity residual only exists on the stage's own half.
                ops::leaky_relu(&ops::add(&h, &out)?, LEAKY_SLOPE)
            }
            Link::Add(prev) => {
                let linked = conv_layer(cfg, params, &block_name(LINK, i), &prev[i])?;
                let summed = ops::add(&h, &linked)?;
                let out = conv_layer(cfg, params, &block_name(STAGE1, i), &summed)?;
                ops::leaky_relu(&ops::add(&summed, &out)?, LEAKY_SLOPE)
            }
        };
        taps.push(h.clone());
    }

    let merged = match (cfg.backbone, cfg.aggregation) {
        (Backbone::P4, Aggregation::Learned) => GFeatureMap::new(h)?.flatten()?,
        (Backbone::P4, Aggregation::OrientMax) => orientation_pool(&GFeatureMap::new(h)?, PoolMode::Max)?,
        (Backbone::P4, Aggregation::OrientAvg) => orientation_pool(&GFeatureMap::new(h)?, PoolMode::Avg)?,
        (Backbone::RegularCnn, _) => h,
    };
    let mut features = ops::leaky_relu(&conv_layer(cfg, params, &format!("{STAGE1}/aggregate"), &merged)?, LEAKY_SLOPE);

    if cfg.use_se {
        let pooled = ops::global_avg_pool(&features)?;
        let squeezed = ops::relu(&conv_layer(cfg, params, &format!("{STAGE1}/se.reduce"), &pooled)?);
        let gate = ops::sigmoid(&conv_layer(cfg, params, &format!("{STAGE1}/se.expand"), &squeezed)?);
        features = ops::mul_channelwise(&features, &gate)?;
    }

    let rain = conv_layer(cfg, params, &format!("{STAGE1}/decoder"), &features)?;
    let restored = ops::sub(input, &rain)?;
    Ok(StageOutput { rain, restored, taps })
}
