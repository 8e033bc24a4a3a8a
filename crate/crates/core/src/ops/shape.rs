use std::sync::Arc;

use crate::autograd::{record, BackwardOp};
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

struct Reshape;

impl<F: Float> BackwardOp<F> for Reshape {
    fn backward(&self, _inputs: &[Tensor<F>], _out: &[F], grad: &[F]) -> Vec<Option<Vec<F>>> {
        vec![Some(grad.to_vec())]
    }
}

/// Same row-major data under a new shape with equal element count.
pub fn reshape<F: Float>(x: &Tensor<F>, shape: &[usize]) -> Result<Tensor<F>> {
    if shape.iter().product::<usize>() != x.numel() {
        return Err(Error::ShapeMismatch {
            op: "reshape",
            left: x.shape().to_vec(),
            right: shape.to_vec(),
        });
    }
    Ok(Tensor::from_op(shape.to_vec(), x.data().to_vec(), record(&[x], Reshape)))
}

struct Concat {
    /// Per-input extent of the concatenation axis times the trailing block.
    blocks: Vec<usize>,
}

impl<F: Float> BackwardOp<F> for Concat {
    fn backward(&self, inputs: &[Tensor<F>], _out: &[F], grad: &[F]) -> Vec<Option<Vec<F>>> {
        let row: usize = self.blocks.iter().sum();
        let outer = grad.len() / row;
        let mut offset = 0;
        inputs
            .iter()
            .zip(&self.blocks)
            .map(|(t, &b)| {
                let g = t.requires_grad().then(|| {
                    let mut g = Vec::with_capacity(outer * b);
                    for o in 0..outer {
                        g.extend_from_slice(&grad[o * row + offset..o * row + offset + b]);
                    }
                    g
                });
                offset += b;
                g
            })
            .collect()
    }
}

/// Concatenates along axis 1 (channels). All other extents must agree.
pub fn concat_channels<F: Float>(xs: &[&Tensor<F>]) -> Result<Tensor<F>> {
    let first = xs.first().ok_or_else(|| Error::config("concat_channels of an empty list"))?;
    if first.rank() < 2 {
        return Err(Error::ShapeMismatch {
            op: "concat_channels",
            left: first.shape().to_vec(),
            right: vec![0, 0],
        });
    }
    for x in &xs[1..] {
        let compatible = x.rank() == first.rank()
            && x.shape()[0] == first.shape()[0]
            && x.shape()[2..] == first.shape()[2..];
        if !compatible {
            return Err(Error::ShapeMismatch {
                op: "concat_channels",
                left: first.shape().to_vec(),
                right: x.shape().to_vec(),
            });
        }
    }
    let n = first.shape()[0];
    let inner: usize = first.shape()[2..].iter().product();
    let blocks: Vec<usize> = xs.iter().map(|x| x.shape()[1] * inner).collect();
    let mut data = Vec::with_capacity(xs.iter().map(|x| x.numel()).sum());
    for s in 0..n {
        for (x, &b) in xs.iter().zip(&blocks) {
            data.extend_from_slice(&x.data()[s * b..(s + 1) * b]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[1] = xs.iter().map(|x| x.shape()[1]).sum();
    Ok(Tensor::from_op(shape, data, record(xs, Concat { blocks })))
}

struct Gather {
    index: Arc<Vec<usize>>,
}

impl<F: Float> BackwardOp<F> for Gather {
    fn backward(&self, inputs: &[Tensor<F>], _out: &[F], grad: &[F]) -> Vec<Option<Vec<F>>> {
        let mut dx = vec![F::zero(); inputs[0].numel()];
        for (&src, &g) in self.index.iter().zip(grad) {
            dx[src] = dx[src] + g;
        }
        vec![Some(dx)]
    }
}

/// `out[i] = x[index[i]]` reshaped to `shape`; the backward pass scatter-adds.
///
/// Rotations, orientation shifts and filter-bank expansion are all instances
/// of this index map.
pub fn gather<F: Float>(x: &Tensor<F>, index: Arc<Vec<usize>>, shape: &[usize]) -> Result<Tensor<F>> {
    if shape.iter().product::<usize>() != index.len() {
        return Err(Error::ShapeMismatch {
            op: "gather",
            left: shape.to_vec(),
            right: vec![index.len()],
        });
    }
    if let Some(&bad) = index.iter().find(|&&i| i >= x.numel()) {
        return Err(Error::config(format!("gather index {bad} out of range for {:?}", x.shape())));
    }
    let src = x.data();
    let data = index.iter().map(|&i| src[i]).collect();
    Ok(Tensor::from_op(shape.to_vec(), data, record(&[x], Gather { index })))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::sum;
    use crate::rng::random_tensor;

    #[test]
    fn concat_single_is_identity() {
        let a = random_tensor::<f32>(&[1, 3, 4, 4], 1);
        let c = concat_channels(&[&a]).unwrap();
        assert_eq!(c.shape(), a.shape());
        assert_eq!(c.data(), a.data());
    }

    #[test]
    fn concat_shapes_and_gradient() {
        let a = random_tensor::<f64>(&[1, 10, 8, 8], 1).detached_param();
        let b = random_tensor::<f64>(&[1, 10, 8, 8], 2).detached_param();
        let c = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), &[1, 20, 8, 8]);
        sum(&c).backward().unwrap();
        assert!(a.grad().unwrap().iter().all(|&g| g == 1.0));
    }

    #[test]
    fn concat_keeps_argument_order_per_sample() {
        let a = Tensor::<f32>::from_vec(&[2, 1, 1, 1], vec![1.0, 2.0]).unwrap();
        let b = Tensor::from_vec(&[2, 2, 1, 1], vec![10.0, 11.0, 20.0, 21.0]).unwrap();
        let c = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.data(), &[1.0, 10.0, 11.0, 2.0, 20.0, 21.0]);
    }

    #[test]
    fn concat_rejects_spatial_mismatch() {
        let a = Tensor::<f32>::zeros(&[1, 2, 4, 4]);
        let b = Tensor::zeros(&[1, 2, 4, 5]);
        assert!(concat_channels(&[&a, &b]).is_err());
    }

    #[test]
    fn gather_scatters_back_with_repeats() {
        let x = Tensor::<f64>::param(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let y = gather(&x, Arc::new(vec![2, 0, 2, 1]), &[2, 2]).unwrap();
        assert_eq!(y.data(), &[3.0, 1.0, 3.0, 2.0]);
        sum(&y).backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 1.0, 2.0]);
    }
}
