//! Reverse-mode traversal over the graph recorded by tensor operations.

use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// Backward rule of one recorded operation.
///
/// `inputs` are the operation's inputs in call order, `output` is the forward
/// result and `grad` the gradient flowing into it. The returned vector has one
/// entry per input; `None` means that input receives no gradient.
pub(crate) trait BackwardOp<F: Float>: Send + Sync {
    fn backward(&self, inputs: &[Tensor<F>], output: &[F], grad: &[F]) -> Vec<Option<Vec<F>>>;
}

pub(crate) struct GradFn<F: Float> {
    pub(crate) inputs: Vec<Tensor<F>>,
    pub(crate) op: Box<dyn BackwardOp<F>>,
}

/// Records `op` only if some input tracks gradients.
pub(crate) fn record<F: Float>(inputs: &[&Tensor<F>], op: impl BackwardOp<F> + 'static) -> Option<GradFn<F>> {
    if inputs.iter().any(|t| t.requires_grad()) {
        Some(GradFn {
            inputs: inputs.iter().map(|&t| t.clone()).collect(),
            op: Box::new(op),
        })
    } else {
        None
    }
}

pub(crate) fn accumulate<F: Float>(dst: &mut [F], src: &[F]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d = *d + *s;
    }
}

impl<F: Float> Tensor<F> {
    /// Back-propagates from a scalar loss, adding into the `grad` of every
    /// reachable leaf that tracks gradients.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::NonScalarLoss(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Ok(());
        }

        // Iterative post-order DFS gives a topological order.
        let mut order: Vec<Tensor<F>> = Vec::new();
        let mut visited: HashSet<u64> = HashSet::new();
        let mut stack: Vec<(Tensor<F>, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(gf) = &t.node.grad_fn {
                for input in gf.inputs.iter().rev() {
                    if input.requires_grad() && !visited.contains(&input.id()) {
                        stack.push((input.clone(), false));
                    }
                }
            }
        }

        let mut grads: HashMap<u64, Vec<F>> = HashMap::new();
        grads.insert(self.id(), vec![F::one()]);
        for t in order.iter().rev() {
            let Some(g) = grads.remove(&t.id()) else {
                continue;
            };
            match &t.node.grad_fn {
                None => {
                    let mut slot = t.grad_lock();
                    match slot.as_mut() {
                        Some(acc) => accumulate(acc, &g),
                        None => *slot = Some(g),
                    }
                }
                Some(gf) => {
                    let input_grads = gf.op.backward(&gf.inputs, t.data(), &g);
                    debug_assert_eq!(input_grads.len(), gf.inputs.len());
                    for (input, ig) in gf.inputs.iter().zip(input_grads) {
                        let Some(ig) = ig else { continue };
                        if !input.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(ig.len(), input.numel());
                        match grads.get_mut(&input.id()) {
                            Some(acc) => accumulate(acc, &ig),
                            None => {
                                grads.insert(input.id(), ig);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
