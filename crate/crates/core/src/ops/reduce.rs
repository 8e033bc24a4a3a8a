use crate::autograd::{record, BackwardOp};
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

struct Sum {
    scale: f64,
}

impl<F: Float> BackwardOp<F> for Sum {
    fn backward(&self, inputs: &[Tensor<F>], _out: &[F], grad: &[F]) -> Vec<Option<Vec<F>>> {
        let g = grad[0] * F::from_f64_lossy(self.scale);
        vec![Some(vec![g; inputs[0].numel()])]
    }
}

/// Sum of all elements, shape `[1]`.
pub fn sum<F: Float>(x: &Tensor<F>) -> Tensor<F> {
    let s = x.data().iter().copied().sum();
    Tensor::from_op(vec![1], vec![s], record(&[x], Sum { scale: 1.0 }))
}

/// Mean of all elements, shape `[1]`.
pub fn mean<F: Float>(x: &Tensor<F>) -> Tensor<F> {
    let n = x.numel() as f64;
    let s: F = x.data().iter().copied().sum();
    let m = s / F::from_f64_lossy(n);
    Tensor::from_op(vec![1], vec![m], record(&[x], Sum { scale: 1.0 / n }))
}

struct GlobalAvgPool {
    plane: usize,
}

impl<F: Float> BackwardOp<F> for GlobalAvgPool {
    fn backward(&self, _inputs: &[Tensor<F>], _out: &[F], grad: &[F]) -> Vec<Option<Vec<F>>> {
        let inv = F::one() / F::from_f64_lossy(self.plane as f64);
        let dx = grad
            .iter()
            .flat_map(|&g| std::iter::repeat(g * inv).take(self.plane))
            .collect();
        vec![Some(dx)]
    }
}

/// `[N, C, H, W] -> [N, C, 1, 1]` spatial mean.
pub fn global_avg_pool<F: Float>(x: &Tensor<F>) -> Result<Tensor<F>> {
    x.expect_rank("global_avg_pool", 4)?;
    let s = x.shape();
    let plane = s[2] * s[3];
    let inv = F::one() / F::from_f64_lossy(plane as f64);
    let data = x
        .data()
        .chunks_exact(plane)
        .map(|c| c.iter().copied().sum::<F>() * inv)
        .collect();
    Ok(Tensor::from_op(vec![s[0], s[1], 1, 1], data, record(&[x], GlobalAvgPool { plane })))
}

struct Mse;

impl<F: Float> BackwardOp<F> for Mse {
    fn backward(&self, inputs: &[Tensor<F>], _out: &[F], grad: &[F]) -> Vec<Option<Vec<F>>> {
        let (p, t) = (&inputs[0], &inputs[1]);
        let k = grad[0] * F::from_f64_lossy(2.0 / p.numel() as f64);
        let diff: Vec<F> = p.data().iter().zip(t.data()).map(|(&a, &b)| (a - b) * k).collect();
        let dt = t.requires_grad().then(|| diff.iter().map(|&d| -d).collect());
        vec![p.requires_grad().then_some(diff), dt]
    }
}

/// Mean squared error over all elements.
pub fn mse_loss<F: Float>(pred: &Tensor<F>, target: &Tensor<F>) -> Result<Tensor<F>> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch {
            op: "mse_loss",
            left: pred.shape().to_vec(),
            right: target.shape().to_vec(),
        });
    }
    let n = F::from_f64_lossy(pred.numel() as f64);
    let s: F = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum();
    Ok(Tensor::from_op(vec![1], vec![s / n], record(&[pred, target], Mse)))
}
