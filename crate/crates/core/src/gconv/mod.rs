//! p4 group convolutions.
//!
//! Feature maps on p4 carry an explicit orientation axis of extent 4,
//! `[N, K, 4, H, W]`, indexing the rotations 0°, 90°, 180°, 270° in
//! counter-clockwise order. Flattening to `[N, 4K, H, W]` puts regular
//! channel `k`, orientation `s` at plane `4k + s`.
//!
//! Both layers expand their canonical filter bank into a planar weight with
//! one rotated copy per output orientation and run a single [`conv2d`]; the
//! expansion is a differentiable gather, so gradients flow back onto the
//! canonical filters. Padding is always `(k - 1) / 2` with stride 1.
//!
//! [`conv2d`]: crate::ops::conv2d

mod layers;
pub mod oracle;
mod pool;
mod rotate;

pub use layers::{p4conv_p4, p4conv_z2, rotate_p4_filter};
pub use pool::{orientation_pool, PoolMode};
pub use rotate::rotate_plane_90;

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::ops::{gather, reshape};
use crate::tensor::{Float, Tensor};

pub const ORIENTATIONS: usize = 4;

/// Feature map on p4: `[N, K, 4, H, W]`.
#[derive(Clone, Debug)]
pub struct GFeatureMap<F: Float = f32>(Tensor<F>);

impl<F: Float> GFeatureMap<F> {
    pub fn new(t: Tensor<F>) -> Result<Self> {
        if t.rank() != 5 || t.shape()[2] != ORIENTATIONS {
            return Err(Error::ShapeMismatch {
                op: "GFeatureMap",
                left: t.shape().to_vec(),
                right: vec![0, 0, ORIENTATIONS, 0, 0],
            });
        }
        Ok(GFeatureMap(t))
    }

    /// Inverse of [`GFeatureMap::flatten`].
    pub fn from_flat(t: &Tensor<F>) -> Result<Self> {
        t.expect_rank("GFeatureMap::from_flat", 4)?;
        let s = t.shape();
        if s[1] % ORIENTATIONS != 0 {
            return Err(Error::ShapeMismatch {
                op: "GFeatureMap::from_flat",
                left: s.to_vec(),
                right: vec![s[0], ORIENTATIONS, s[2], s[3]],
            });
        }
        Self::new(reshape(t, &[s[0], s[1] / ORIENTATIONS, ORIENTATIONS, s[2], s[3]])?)
    }

    pub fn tensor(&self) -> &Tensor<F> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<F> {
        self.0
    }

    pub fn batch(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn regular_channels(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn height(&self) -> usize {
        self.0.shape()[3]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[4]
    }

    /// `[N, 4K, H, W]` view with orientation-major-within-channel layout.
    pub fn flatten(&self) -> Result<Tensor<F>> {
        let s = self.0.shape();
        reshape(&self.0, &[s[0], s[1] * ORIENTATIONS, s[3], s[4]])
    }

    /// The p4 action of rotation `r`: every orientation slice is rotated
    /// spatially by `r` steps and the orientation axis shifted cyclically by `r`.
    pub fn rotate(&self, r: usize) -> Result<Self> {
        if self.height() != self.width() {
            return Err(Error::config("p4 rotation of a feature map needs square planes"));
        }
        let lead = self.batch() * self.regular_channels();
        let index = rotate::p4_action_index(lead, self.height(), r);
        Ok(GFeatureMap(gather(&self.0, Arc::new(index), self.0.shape())?))
    }
}

/// Filter bank on p4 (`S = 4`) or on the plane (`S = 1`):
/// weight `[Kout, Kin, S, k, k]`, bias `[Kout]` shared by all output orientations.
#[derive(Clone, Debug)]
pub struct P4Filter<F: Float = f32> {
    pub weight: Tensor<F>,
    pub bias: Tensor<F>,
}

impl<F: Float> P4Filter<F> {
    pub fn new(weight: Tensor<F>, bias: Tensor<F>) -> Result<Self> {
        let f = P4Filter { weight, bias };
        f.validate()?;
        Ok(f)
    }

    fn validate(&self) -> Result<()> {
        let s = self.weight.shape();
        let ok = s.len() == 5 && (s[2] == 1 || s[2] == ORIENTATIONS) && s[3] == s[4] && s[3] % 2 == 1;
        if !ok {
            return Err(Error::config(format!(
                "p4 filter weight must be [Kout, Kin, 1|4, k, k] with odd k, got {s:?}"
            )));
        }
        self.bias.expect_shape("p4 filter bias", &[s[0]])
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    /// 1 for a lifting filter, 4 for a group filter.
    pub fn orientations(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[3]
    }

    pub fn num_params(&self) -> usize {
        self.weight.numel() + self.bias.numel()
    }
}
