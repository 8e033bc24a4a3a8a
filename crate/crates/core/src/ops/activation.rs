use crate::autograd::{record, BackwardOp};
use crate::tensor::{Float, Tensor};

struct LeakyRelu {
    slope: f64,
}

impl<F: Float> BackwardOp<F> for LeakyRelu {
    fn backward(&self, inputs: &[Tensor<F>], _out: &[F], grad: &[F]) -> Vec<Option<Vec<F>>> {
        let slope = F::from_f64_lossy(self.slope);
        // x == 0 takes the positive branch.
        let dx = inputs[0]
            .data()
            .iter()
            .zip(grad)
            .map(|(&x, &g)| if x >= F::zero() { g } else { g * slope })
            .collect();
        vec![Some(dx)]
    }
}

/// `max(x, slope·x)` for `slope` in `[0, 1)`; `slope = 0` is a plain ReLU.
pub fn leaky_relu<F: Float>(x: &Tensor<F>, slope: f64) -> Tensor<F> {
    debug_assert!((0.0..1.0).contains(&slope), "slope {slope} outside [0, 1)");
    let s = F::from_f64_lossy(slope);
    let data = x
        .data()
        .iter()
        .map(|&v| if v >= F::zero() { v } else { v * s })
        .collect();
    Tensor::from_op(x.shape().to_vec(), data, record(&[x], LeakyRelu { slope }))
}

pub fn relu<F: Float>(x: &Tensor<F>) -> Tensor<F> {
    leaky_relu(x, 0.0)
}

struct Sigmoid;

impl<F: Float> BackwardOp<F> for Sigmoid {
    fn backward(&self, _inputs: &[Tensor<F>], out: &[F], grad: &[F]) -> Vec<Option<Vec<F>>> {
        let dx = out
            .iter()
            .zip(grad)
            .map(|(&y, &g)| g * y * (F::one() - y))
            .collect();
        vec![Some(dx)]
    }
}

pub fn sigmoid<F: Float>(x: &Tensor<F>) -> Tensor<F> {
    let data = x
        .data()
        .iter()
        .map(|&v| F::one() / (F::one() + (-v).exp()))
        .collect();
    Tensor::from_op(x.shape().to_vec(), data, record(&[x], Sigmoid))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaky_relu_values() {
        let x = Tensor::<f32>::from_vec(&[3], vec![2.0, -1.0, 0.0]).unwrap();
        assert_eq!(leaky_relu(&x, 0.2).data(), &[2.0, -0.2, 0.0]);
        assert_eq!(relu(&x).data(), &[2.0, 0.0, 0.0]);
    }

    #[test]
    fn leaky_relu_gradient_branches() {
        let x = Tensor::<f64>::param(&[3], vec![-3.0, 4.0, 0.0]).unwrap();
        let y = leaky_relu(&x, 0.2);
        crate::ops::sum(&y).backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.2, 1.0, 1.0]);
    }

    #[test]
    fn sigmoid_at_zero() {
        let x = Tensor::<f32>::zeros(&[1]);
        assert_eq!(sigmoid(&x).item(), 0.5);
    }
}
