use indexmap::IndexMap;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::tensor::{Float, Tensor};

/// Name, shape and initialisation fan-in of one trainable tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub fan_in: usize,
    pub is_bias: bool,
}

impl ParamSpec {
    /// Weight plus bias of a convolution with weight shape `[out, in, ..]`.
    pub(crate) fn conv_pair(prefix: &str, shape: &[usize]) -> [ParamSpec; 2] {
        let fan_in = shape[1..].iter().product();
        [
            ParamSpec {
                name: format!("{prefix}.weight"),
                shape: shape.to_vec(),
                fan_in,
                is_bias: false,
            },
            ParamSpec {
                name: format!("{prefix}.bias"),
                shape: vec![shape[0]],
                fan_in,
                is_bias: true,
            },
        ]
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Ordered name → tensor map of trainable parameters.
#[derive(Clone, Default)]
pub struct ParamStore<F: Float = f32> {
    params: IndexMap<String, Tensor<F>>,
}

impl<F: Float> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            params: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<F>) {
        self.params.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<F>> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn count_params(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn zero_grad(&self) {
        self.params.values().for_each(Tensor::zero_grad);
    }

    /// Replaces the value of an existing parameter with a fresh leaf.
    pub fn set_data(&mut self, name: &str, data: Vec<F>) -> Result<()> {
        let slot = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
        *slot = Tensor::param(slot.shape(), data)?;
        Ok(())
    }

    /// Copy in another precision; all entries become gradient-tracking leaves.
    pub fn cast<G: Float>(&self) -> ParamStore<G> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), v.cast::<G>().detached_param()))
                .collect(),
        }
    }

    /// Checks names, order-independent presence and shapes against `specs`.
    pub fn check_against(&self, specs: &[ParamSpec]) -> Result<()> {
        for spec in specs {
            let t = self
                .params
                .get(&spec.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{}`", spec.name)))?;
            if t.shape() != spec.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{}` has shape {:?}, model expects {:?}",
                    spec.name,
                    t.shape(),
                    spec.shape
                )));
            }
        }
        if let Some(extra) = self.names().find(|n| !specs.iter().any(|s| s.name == *n)) {
            return Err(Error::Checkpoint(format!("unexpected parameter `{extra}`")));
        }
        Ok(())
    }

    /// Same parameters in the order given by `specs`.
    pub(crate) fn reordered(&self, specs: &[ParamSpec]) -> Result<Self> {
        self.check_against(specs)?;
        let mut out = ParamStore::new();
        for s in specs {
            out.insert(s.name.clone(), self.get(&s.name)?.clone());
        }
        Ok(out)
    }
}

/// Uniform fan-in initialisation from the init stream of `seed`:
/// weights in `±sqrt(6 / fan_in)`, biases in `±1 / sqrt(fan_in)`.
pub fn init_params(specs: &[ParamSpec], seed: u64) -> ParamStore<f32> {
    let mut rng = stream_rng(seed, Stream::Init);
    let mut store = ParamStore::new();
    for spec in specs {
        let fan = spec.fan_in.max(1) as f64;
        let bound = if spec.is_bias { 1.0 / fan.sqrt() } else { (6.0 / fan).sqrt() };
        let data = (0..spec.numel())
            .map(|_| rng.gen_range(-bound..bound) as f32)
            .collect();
        store.insert(spec.name.clone(), Tensor::param(&spec.shape, data).expect("spec shape"));
    }
    store
}

#[cfg(test)]
mod tests {
    use super::*;

    fn specs() -> Vec<ParamSpec> {
        ParamSpec::conv_pair("a", &[4, 2, 3, 3])
            .into_iter()
            .chain(ParamSpec::conv_pair("b", &[3, 4, 1, 1]))
            .collect()
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = init_params(&specs(), 7);
        let b = init_params(&specs(), 7);
        let c = init_params(&specs(), 8);
        for ((_, x), (_, y)) in a.iter().zip(b.iter()) {
            assert_eq!(x.data(), y.data());
        }
        assert_ne!(a.get("a.weight").unwrap().data(), c.get("a.weight").unwrap().data());
        let bound = (6.0f32 / 18.0).sqrt();
        assert!(a.get("a.weight").unwrap().data().iter().all(|v| v.abs() <= bound));
        assert_eq!(a.count_params(), 4 * 18 + 4 + 12 + 3);
    }

    #[test]
    fn check_against_reports_problems() {
        let store = init_params(&specs(), 1);
        assert!(store.check_against(&specs()).is_ok());
        let mut wrong = specs();
        wrong[0].shape = vec![4, 2, 5, 5];
        assert!(store.check_against(&wrong).unwrap_err().to_string().contains("a.weight"));
        assert!(store.check_against(&specs()[..3]).unwrap_err().to_string().contains("unexpected"));
    }
}
