use crate::autograd::{record, BackwardOp};
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

fn same_shape<F: Float>(op: &'static str, a: &Tensor<F>, b: &Tensor<F>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(())
}

struct AddSub {
    sign: f64,
}

impl<F: Float> BackwardOp<F> for AddSub {
    fn backward(&self, inputs: &[Tensor<F>], _out: &[F], grad: &[F]) -> Vec<Option<Vec<F>>> {
        let da = inputs[0].requires_grad().then(|| grad.to_vec());
        let db = inputs[1].requires_grad().then(|| {
            if self.sign > 0.0 {
                grad.to_vec()
            } else {
                grad.iter().map(|&g| -g).collect()
            }
        });
        vec![da, db]
    }
}

pub fn add<F: Float>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    same_shape("add", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Ok(Tensor::from_op(a.shape().to_vec(), data, record(&[a, b], AddSub { sign: 1.0 })))
}

pub fn sub<F: Float>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    same_shape("sub", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x - y).collect();
    Ok(Tensor::from_op(a.shape().to_vec(), data, record(&[a, b], AddSub { sign: -1.0 })))
}

struct Mul;

impl<F: Float> BackwardOp<F> for Mul {
    fn backward(&self, inputs: &[Tensor<F>], _out: &[F], grad: &[F]) -> Vec<Option<Vec<F>>> {
        let (a, b) = (&inputs[0], &inputs[1]);
        let times = |other: &Tensor<F>| grad.iter().zip(other.data()).map(|(&g, &o)| g * o).collect();
        vec![a.requires_grad().then(|| times(b)), b.requires_grad().then(|| times(a))]
    }
}

/// Elementwise (Hadamard) product.
pub fn mul<F: Float>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    same_shape("mul", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
    Ok(Tensor::from_op(a.shape().to_vec(), data, record(&[a, b], Mul)))
}

struct MulScalar {
    factor: f64,
}

impl<F: Float> BackwardOp<F> for MulScalar {
    fn backward(&self, _inputs: &[Tensor<F>], _out: &[F], grad: &[F]) -> Vec<Option<Vec<F>>> {
        let f = F::from_f64_lossy(self.factor);
        vec![Some(grad.iter().map(|&g| g * f).collect())]
    }
}

pub fn mul_scalar<F: Float>(a: &Tensor<F>, factor: f64) -> Tensor<F> {
    let f = F::from_f64_lossy(factor);
    let data = a.data().iter().map(|&x| x * f).collect();
    Tensor::from_op(a.shape().to_vec(), data, record(&[a], MulScalar { factor }))
}

struct MulChannelwise {
    channels: usize,
    plane: usize,
}

impl<F: Float> BackwardOp<F> for MulChannelwise {
    fn backward(&self, inputs: &[Tensor<F>], _out: &[F], grad: &[F]) -> Vec<Option<Vec<F>>> {
        let (x, scale) = (&inputs[0], &inputs[1]);
        let p = self.plane;
        let dx = x.requires_grad().then(|| {
            let mut dx = grad.to_vec();
            for (i, &s) in scale.data().iter().enumerate() {
                dx[i * p..(i + 1) * p].iter_mut().for_each(|v| *v = *v * s);
            }
            dx
        });
        let ds = scale.requires_grad().then(|| {
            (0..scale.numel())
                .map(|i| {
                    let xs = &x.data()[i * p..(i + 1) * p];
                    let gs = &grad[i * p..(i + 1) * p];
                    xs.iter().zip(gs).map(|(&a, &b)| a * b).sum()
                })
                .collect()
        });
        debug_assert_eq!(scale.numel() % self.channels, 0);
        vec![dx, ds]
    }
}

/// Scales each `(sample, channel)` plane of `x: [N, C, ...]` by `scale: [N, C, 1, ...]`.
pub fn mul_channelwise<F: Float>(x: &Tensor<F>, scale: &Tensor<F>) -> Result<Tensor<F>> {
    let s = x.shape();
    let ok = x.rank() >= 2
        && scale.rank() == x.rank()
        && scale.shape()[..2] == s[..2]
        && scale.shape()[2..].iter().all(|&d| d == 1);
    if !ok {
        return Err(Error::ShapeMismatch {
            op: "mul_channelwise",
            left: s.to_vec(),
            right: scale.shape().to_vec(),
        });
    }
    let plane: usize = s[2..].iter().product();
    let mut data = x.data().to_vec();
    for (i, &sv) in scale.data().iter().enumerate() {
        data[i * plane..(i + 1) * plane].iter_mut().for_each(|v| *v = *v * sv);
    }
    let op = MulChannelwise { channels: s[1], plane };
    Ok(Tensor::from_op(s.to_vec(), data, record(&[x, scale], op)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::random_tensor;

    #[test]
    fn subtracting_zero_is_identity() {
        let o = random_tensor::<f32>(&[1, 3, 4, 4], 1);
        let r = Tensor::zeros(&[1, 3, 4, 4]);
        assert_eq!(sub(&o, &r).unwrap().data(), o.data());
    }

    #[test]
    fn add_then_sub_recovers_input() {
        for seed in 0..10 {
            let a = random_tensor::<f32>(&[2, 3, 5, 5], seed);
            let b = random_tensor::<f32>(&[2, 3, 5, 5], seed + 100);
            let back = sub(&add(&a, &b).unwrap(), &b).unwrap();
            for (x, y) in back.data().iter().zip(a.data()) {
                assert!((x - y).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn unit_channel_scale_is_identity() {
        let x = random_tensor::<f32>(&[2, 3, 4, 4], 2);
        let s = Tensor::full(&[2, 3, 1, 1], 1.0);
        assert_eq!(mul_channelwise(&x, &s).unwrap().data(), x.data());
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let a = Tensor::<f32>::zeros(&[1, 3, 4, 4]);
        let b = Tensor::zeros(&[1, 3, 4, 5]);
        assert!(matches!(add(&a, &b), Err(Error::ShapeMismatch { op: "add", .. })));
        assert!(sub(&a, &b).is_err());
        let s = Tensor::zeros(&[1, 2, 1, 1]);
        assert!(mul_channelwise(&a, &s).is_err());
    }
}
