//! Exact 90° rotations as index permutations.
//!
//! One counter-clockwise step maps `out[r][c] = in[c][W-1-r]`; an `H x W`
//! plane becomes `W x H`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::ops::gather;
use crate::tensor::{Float, Tensor};

/// Source index of every output element of a plane rotated `times` steps,
/// along with the rotated extents.
pub(crate) fn plane_rotation(h: usize, w: usize, times: usize) -> (Vec<usize>, usize, usize) {
    let mut map: Vec<usize> = (0..h * w).collect();
    let (mut ch, mut cw) = (h, w);
    for _ in 0..times % 4 {
        let mut next = vec![0; map.len()];
        for r in 0..cw {
            for c in 0..ch {
                next[r * ch + c] = map[c * cw + (cw - 1 - r)];
            }
        }
        map = next;
        std::mem::swap(&mut ch, &mut cw);
    }
    (map, ch, cw)
}

/// Rotates the trailing two axes of `x` counter-clockwise by `90°·times`.
pub fn rotate_plane_90<F: Float>(x: &Tensor<F>, times: usize) -> Result<Tensor<F>> {
    if x.rank() < 2 {
        return Err(Error::ShapeMismatch {
            op: "rotate_plane_90",
            left: x.shape().to_vec(),
            right: vec![0, 0],
        });
    }
    let r = x.rank();
    let (h, w) = (x.shape()[r - 2], x.shape()[r - 1]);
    let (map, oh, ow) = plane_rotation(h, w, times);
    let plane = h * w;
    let lead = x.numel() / plane;
    let index: Vec<usize> = (0..lead)
        .flat_map(|l| map.iter().map(move |&m| l * plane + m))
        .collect();
    let mut shape = x.shape().to_vec();
    shape[r - 2] = oh;
    shape[r - 1] = ow;
    gather(x, Arc::new(index), &shape)
}

/// Index map of the p4 rotation action on a `[lead.., 4, H, W]` layout with
/// square planes: orientation slice `s` of the result is the spatially
/// rotated input slice `(s - r) mod 4`.
pub(crate) fn p4_action_index(lead: usize, size: usize, r: usize) -> Vec<usize> {
    let (map, _, _) = plane_rotation(size, size, r);
    let plane = size * size;
    let mut index = Vec::with_capacity(lead * 4 * plane);
    for l in 0..lead {
        for s in 0..4 {
            let src = (s + 4 - r % 4) % 4;
            let base = (l * 4 + src) * plane;
            index.extend(map.iter().map(|&m| base + m));
        }
    }
    index
}
