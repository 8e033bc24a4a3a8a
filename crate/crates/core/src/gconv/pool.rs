use super::{GFeatureMap, ORIENTATIONS};
use crate::autograd::{record, BackwardOp};
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolMode {
    Max,
    Avg,
}

impl std::str::FromStr for PoolMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(PoolMode::Max),
            "avg" => Ok(PoolMode::Avg),
            other => Err(Error::config(format!("unknown pooling mode `{other}`"))),
        }
    }
}

struct OrientationPool {
    mode: PoolMode,
    plane: usize,
}

impl OrientationPool {
    /// Orientation holding the maximum; ties go to the lowest index.
    fn argmax<F: Float>(x: &[F], base: usize, plane: usize) -> usize {
        let mut best = 0;
        for s in 1..ORIENTATIONS {
            if x[base + s * plane] > x[base + best * plane] {
                best = s;
            }
        }
        best
    }
}

impl<F: Float> BackwardOp<F> for OrientationPool {
    fn backward(&self, inputs: &[Tensor<F>], _out: &[F], grad: &[F]) -> Vec<Option<Vec<F>>> {
        let x = inputs[0].data();
        let p = self.plane;
        let mut dx = vec![F::zero(); x.len()];
        let quarter = F::from_f64_lossy(0.25);
        for (j, &g) in grad.iter().enumerate() {
            let (lead, pix) = (j / p, j % p);
            let base = lead * ORIENTATIONS * p + pix;
            match self.mode {
                PoolMode::Max => {
                    let s = Self::argmax(x, base, p);
                    dx[base + s * p] = g;
                }
                PoolMode::Avg => {
                    for s in 0..ORIENTATIONS {
                        dx[base + s * p] = g * quarter;
                    }
                }
            }
        }
        vec![Some(dx)]
    }
}

/// Max or mean over the four orientation slices of every regular channel:
/// `[N, K, 4, H, W] -> [N, K, H, W]`.
pub fn orientation_pool<F: Float>(input: &GFeatureMap<F>, mode: PoolMode) -> Result<Tensor<F>> {
    let t = input.tensor();
    let s = t.shape();
    let p = s[3] * s[4];
    let lead = s[0] * s[1];
    let x = t.data();
    let quarter = F::from_f64_lossy(0.25);
    let mut out = Vec::with_capacity(lead * p);
    for l in 0..lead {
        for pix in 0..p {
            let base = l * ORIENTATIONS * p + pix;
            out.push(match mode {
                PoolMode::Max => x[base + OrientationPool::argmax(x, base, p) * p],
                PoolMode::Avg => (0..ORIENTATIONS).map(|o| x[base + o * p]).sum::<F>() * quarter,
            });
        }
    }
    let op = OrientationPool { mode, plane: p };
    Ok(Tensor::from_op(vec![s[0], s[1], s[3], s[4]], out, record(&[t], op)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stacked(values: [f32; 4]) -> GFeatureMap<f32> {
        let data: Vec<f32> = values.iter().flat_map(|&v| std::iter::repeat(v).take(9)).collect();
        GFeatureMap::new(Tensor::from_vec(&[1, 1, 4, 3, 3], data).unwrap()).unwrap()
    }

    #[test]
    fn equal_orientations_pool_to_that_slice() {
        let g = stacked([0.3; 4]);
        for mode in [PoolMode::Max, PoolMode::Avg] {
            let p = orientation_pool(&g, mode).unwrap();
            assert_eq!(p.shape(), &[1, 1, 3, 3]);
            assert!(p.data().iter().all(|&v| (v - 0.3).abs() < 1e-7));
        }
    }

    #[test]
    fn constant_slices_one_to_four() {
        let g = stacked([1.0, 2.0, 3.0, 4.0]);
        assert!(orientation_pool(&g, PoolMode::Max).unwrap().data().iter().all(|&v| v == 4.0));
        assert!(orientation_pool(&g, PoolMode::Avg).unwrap().data().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn max_ties_route_gradient_to_lowest_orientation() {
        let data: Vec<f64> = [2.0, 5.0, 5.0, 1.0].to_vec();
        let x = Tensor::param(&[1, 1, 4, 1, 1], data).unwrap();
        let g = GFeatureMap::new(x.clone()).unwrap();
        let p = orientation_pool(&g, PoolMode::Max).unwrap();
        crate::ops::sum(&p).backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 1.0, 0.0, 0.0]);
    }
}
