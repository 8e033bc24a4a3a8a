use std::sync::Arc;

use super::rotate::{p4_action_index, plane_rotation};
use super::{GFeatureMap, P4Filter, ORIENTATIONS};
use crate::error::{Error, Result};
use crate::ops::{conv2d, gather};
use crate::tensor::{Float, Tensor};

/// Rotates a group filter by `r`: each orientation slice is rotated spatially
/// and slice `s` of the result takes input slice `(s - r) mod 4`.
pub fn rotate_p4_filter<F: Float>(psi: &P4Filter<F>, r: usize) -> Result<P4Filter<F>> {
    if psi.orientations() != ORIENTATIONS {
        return Err(Error::config("rotate_p4_filter needs a filter defined on p4 (S = 4)"));
    }
    let lead = psi.out_channels() * psi.in_channels();
    let index = p4_action_index(lead, psi.kernel(), r);
    let weight = gather(&psi.weight, Arc::new(index), psi.weight.shape())?;
    P4Filter::new(weight, psi.bias.clone())
}

/// Planar weight `[4*Kout, S*Kin, k, k]` holding every output orientation's
/// rotated filter. Row `4*o + r` is filter `o` rotated by `r`; for group
/// filters, column `4*i + s` reads slice `(s - r) mod 4` of input channel `i`.
fn expansion_index(kout: usize, kin: usize, slices: usize, k: usize) -> Vec<usize> {
    let plane = k * k;
    let rotations: Vec<Vec<usize>> = (0..ORIENTATIONS).map(|r| plane_rotation(k, k, r).0).collect();
    let mut index = Vec::with_capacity(kout * ORIENTATIONS * kin * slices * plane);
    for o in 0..kout {
        for (r, map) in rotations.iter().enumerate() {
            for i in 0..kin {
                for s in 0..slices {
                    let src_slice = if slices == 1 { 0 } else { (s + ORIENTATIONS - r) % ORIENTATIONS };
                    let base = ((o * kin + i) * slices + src_slice) * plane;
                    index.extend(map.iter().map(|&m| base + m));
                }
            }
        }
    }
    index
}

fn expand_filter<F: Float>(psi: &P4Filter<F>) -> Result<(Tensor<F>, Tensor<F>)> {
    let (kout, kin, slices, k) = (psi.out_channels(), psi.in_channels(), psi.orientations(), psi.kernel());
    let index = expansion_index(kout, kin, slices, k);
    let weight = gather(&psi.weight, Arc::new(index), &[kout * ORIENTATIONS, kin * slices, k, k])?;
    let bias_index: Vec<usize> = (0..kout * ORIENTATIONS).map(|j| j / ORIENTATIONS).collect();
    let bias = gather(&psi.bias, Arc::new(bias_index), &[kout * ORIENTATIONS])?;
    Ok((weight, bias))
}

/// Lifting convolution from the plane to p4.
///
/// Orientation `r` of output channel `k` is the input correlated with
/// filter `k` rotated by `r` steps, plus `bias[k]`.
pub fn p4conv_z2<F: Float>(input: &Tensor<F>, psi: &P4Filter<F>) -> Result<GFeatureMap<F>> {
    if psi.orientations() != 1 {
        return Err(Error::config("p4conv_z2 needs a planar filter (S = 1)"));
    }
    input.expect_rank("p4conv_z2 input", 4)?;
    if input.shape()[1] != psi.in_channels() {
        return Err(Error::ShapeMismatch {
            op: "p4conv_z2",
            left: input.shape().to_vec(),
            right: psi.weight.shape().to_vec(),
        });
    }
    let (weight, bias) = expand_filter(psi)?;
    let out = conv2d(input, &weight, Some(&bias), 1, psi.kernel() / 2)?;
    GFeatureMap::from_flat(&out)
}

/// Group convolution from p4 to p4.
///
/// Orientation `r` of output channel `k` sums, over input channels and input
/// orientations `s`, the correlation of slice `s` with slice `s` of filter
/// `k` rotated by `r` (see [`rotate_p4_filter`]), plus `bias[k]`.
pub fn p4conv_p4<F: Float>(input: &GFeatureMap<F>, psi: &P4Filter<F>) -> Result<GFeatureMap<F>> {
    if psi.orientations() != ORIENTATIONS {
        return Err(Error::config("p4conv_p4 needs a group filter (S = 4)"));
    }
    if input.regular_channels() != psi.in_channels() {
        return Err(Error::ShapeMismatch {
            op: "p4conv_p4",
            left: input.tensor().shape().to_vec(),
            right: psi.weight.shape().to_vec(),
        });
    }
    let (weight, bias) = expand_filter(psi)?;
    let out = conv2d(&input.flatten()?, &weight, Some(&bias), 1, psi.kernel() / 2)?;
    GFeatureMap::from_flat(&out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gconv::rotate_plane_90;
    use crate::rng::random_tensor;

    fn filter(kout: usize, kin: usize, s: usize, k: usize, seed: u64) -> P4Filter<f32> {
        P4Filter::new(
            random_tensor(&[kout, kin, s, k, k], seed),
            random_tensor(&[kout], seed + 1),
        )
        .unwrap()
    }

    #[test]
    fn rotate_filter_identity_and_closure() {
        let psi = filter(2, 3, 4, 3, 1);
        assert_eq!(rotate_p4_filter(&psi, 0).unwrap().weight.data(), psi.weight.data());
        let mut f = psi.clone();
        for _ in 0..4 {
            f = rotate_p4_filter(&f, 1).unwrap();
        }
        assert_eq!(f.weight.data(), psi.weight.data());
    }

    #[test]
    fn rotate_filter_moves_delta_to_next_slice() {
        let mut w = vec![0.0f32; 4 * 9];
        w[0] = 1.0; // slice 0, spatial (0, 0)
        let psi = P4Filter::new(Tensor::from_vec(&[1, 1, 4, 3, 3], w).unwrap(), Tensor::zeros(&[1])).unwrap();
        let rotated = rotate_p4_filter(&psi, 1).unwrap();
        let nz: Vec<usize> = rotated
            .weight
            .data()
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, _)| i)
            .collect();
        // slice 1, spatial (2, 0)
        assert_eq!(nz, vec![9 + 2 * 3]);
    }

    #[test]
    fn zero_input_gives_bias() {
        let psi = filter(3, 2, 1, 5, 4);
        let x = Tensor::zeros(&[1, 2, 6, 6]);
        let y = p4conv_z2(&x, &psi).unwrap();
        assert_eq!(y.tensor().shape(), &[1, 3, 4, 6, 6]);
        for (j, chunk) in y.tensor().data().chunks(4 * 36).enumerate() {
            assert!(chunk.iter().all(|&v| v == psi.bias.data()[j]));
        }
    }

    #[test]
    fn lifting_orientations_use_rotated_filters() {
        let psi = filter(1, 1, 1, 3, 7);
        let x = random_tensor::<f32>(&[1, 1, 5, 5], 8);
        let y = p4conv_z2(&x, &psi).unwrap();
        let planar = crate::ops::reshape(&psi.weight, &[1, 1, 3, 3]).unwrap();
        for r in 0..4 {
            let w = rotate_plane_90(&planar, r).unwrap();
            let want = crate::ops::conv2d_direct(&x, &w, Some(&psi.bias), 1, 1).unwrap();
            let got = &y.tensor().data()[r * 25..(r + 1) * 25];
            for (a, b) in got.iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn layers_reject_wrong_filters() {
        let x = random_tensor::<f32>(&[1, 2, 5, 5], 1);
        assert!(p4conv_z2(&x, &filter(1, 2, 4, 3, 1)).is_err());
        assert!(p4conv_z2(&x, &filter(1, 3, 1, 3, 1)).is_err());
        let g = p4conv_z2(&x, &filter(2, 2, 1, 3, 1)).unwrap();
        assert!(p4conv_p4(&g, &filter(1, 2, 1, 3, 1)).is_err());
        assert!(p4conv_p4(&g, &filter(1, 3, 4, 3, 1)).is_err());
        assert!(P4Filter::new(Tensor::<f32>::zeros(&[1, 1, 4, 2, 2]), Tensor::zeros(&[1])).is_err());
        assert!(P4Filter::new(Tensor::<f32>::zeros(&[1, 1, 3, 3, 3]), Tensor::zeros(&[1])).is_err());
    }
}
