//! Property suites run by `dsen check`: exact C4 equivariance, agreement with
//! the brute-force group convolution, finite-difference gradients and the
//! parameter budget.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::gconv::oracle::{g_conv_oracle, Domain, GroupSpec};
use crate::gconv::{orientation_pool, p4conv_p4, p4conv_z2, rotate_p4_filter, rotate_plane_90, GFeatureMap, P4Filter, PoolMode};
use crate::model::{build_cnn_counterpart, build_dsen, param_specs, ModelConfig, ModelGraph, LEAKY_SLOPE};
use crate::ops;
use crate::refine::{LinkMode, RefineConfig};
use crate::rng::{item_rng, random_tensor, Stream};
use crate::tensor::{Float, Tensor};

pub const DSEN_PARAMS: usize = 50958;
pub const CNN_PARAMS: usize = 52113;

/// Random cases per equivariance property.
pub const EQUIVARIANCE_CASES: usize = 20;
/// Seeds per gradient property.
pub const GRADCHECK_SEEDS: u64 = 10;
/// Shapes per oracle property.
pub const ORACLE_CASES: usize = 18;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Equivariance,
    Gradcheck,
    Params,
    Oracle,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Params, Suite::Equivariance, Suite::Oracle, Suite::Gradcheck];

    pub fn run(self) -> Result<Vec<Outcome>> {
        match self {
            Suite::Equivariance => equivariance(),
            Suite::Gradcheck => gradcheck(),
            Suite::Params => params(),
            Suite::Oracle => oracle(),
        }
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equivariance" => Ok(Suite::Equivariance),
            "gradcheck" => Ok(Suite::Gradcheck),
            "params" => Ok(Suite::Params),
            "oracle" => Ok(Suite::Oracle),
            other => Err(Error::config(format!(
                "unknown suite `{other}` (equivariance | gradcheck | params | oracle)"
            ))),
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Suite::Equivariance => "equivariance",
            Suite::Gradcheck => "gradcheck",
            Suite::Params => "params",
            Suite::Oracle => "oracle",
        })
    }
}

/// Result of one property: the worst measured value against its bound.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub name: String,
    pub measured: f64,
    pub bound: Bound,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Bound {
    Below(f64),
    Equal(f64),
}

impl Outcome {
    fn below(name: impl Into<String>, measured: f64, bound: f64) -> Self {
        Outcome {
            name: name.into(),
            measured,
            bound: Bound::Below(bound),
        }
    }

    fn equal(name: impl Into<String>, measured: usize, expected: usize) -> Self {
        Outcome {
            name: name.into(),
            measured: measured as f64,
            bound: Bound::Equal(expected as f64),
        }
    }

    pub fn passed(&self) -> bool {
        match self.bound {
            Bound::Below(b) => self.measured < b,
            Bound::Equal(e) => self.measured == e,
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        match self.bound {
            Bound::Below(b) => write!(f, "{verdict} {}: {:.3e} < {b:.0e}", self.name, self.measured),
            Bound::Equal(e) => write!(f, "{verdict} {}: {} == {e}", self.name, self.measured),
        }
    }
}

fn max_abs_diff<F: Float>(a: &Tensor<F>, b: &Tensor<F>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op: "check",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x.to_f64_lossy() - y.to_f64_lossy()).abs())
        .fold(0.0, f64::max))
}

fn scaled<F: Float>(t: Tensor<F>, factor: f64) -> Tensor<F> {
    ops::mul_scalar(&t, factor)
}

/// Filter with roughly unit-gain taps so stacked layers keep O(1) values.
fn random_filter<F: Float>(kout: usize, kin: usize, s: usize, k: usize, seed: u64) -> Result<P4Filter<F>> {
    let gain = 1.0 / ((kin * s * k * k) as f64).sqrt();
    let weight = scaled(random_tensor(&[kout, kin, s, k, k], seed), gain);
    let bias = scaled(random_tensor(&[kout], seed ^ 0x5eed), 0.1);
    P4Filter::new(weight, bias)
}

/// Test shape drawn from the case index; planes stay below the size at which
/// the 32-bit fast convolution switches on.
#[derive(Clone, Copy, Debug)]
struct Case {
    n: usize,
    kin: usize,
    kout: usize,
    k: usize,
    size: usize,
    seed: u64,
}

fn case(suite_seed: u64, i: usize) -> Case {
    let mut rng = item_rng(suite_seed, Stream::Check, i as u64);
    Case {
        n: rng.gen_range(1..=2),
        kin: rng.gen_range(1..=4),
        kout: rng.gen_range(1..=4),
        k: [1, 3, 5][rng.gen_range(0..3)],
        size: rng.gen_range(5..=13),
        seed: u64::from(rng.gen::<u32>()),
    }
}

/// `f(rotate(x)) - rotate'(f(x))` over all non-trivial rotations.
fn lift_deviation<F: Float>(c: Case) -> Result<f64> {
    let x = random_tensor::<F>(&[c.n, c.kin, c.size, c.size], c.seed);
    let psi = random_filter::<F>(c.kout, c.kin, 1, c.k, c.seed + 1)?;
    let y = p4conv_z2(&x, &psi)?;
    let mut worst: f64 = 0.0;
    for r in 1..4 {
        let lhs = p4conv_z2(&rotate_plane_90(&x, r)?, &psi)?;
        worst = worst.max(max_abs_diff(lhs.tensor(), y.rotate(r)?.tensor())?);
    }
    Ok(worst)
}

fn group_deviation<F: Float>(c: Case) -> Result<f64> {
    let x = GFeatureMap::new(random_tensor::<F>(&[c.n, c.kin, 4, c.size, c.size], c.seed))?;
    let psi = random_filter::<F>(c.kout, c.kin, 4, c.k, c.seed + 1)?;
    let y = p4conv_p4(&x, &psi)?;
    let mut worst: f64 = 0.0;
    for r in 1..4 {
        let lhs = p4conv_p4(&x.rotate(r)?, &psi)?;
        worst = worst.max(max_abs_diff(lhs.tensor(), y.rotate(r)?.tensor())?);
    }
    Ok(worst)
}

/// Lifting layer followed by four residual group layers with leaky ReLU.
fn stack<F: Float>(x: &Tensor<F>, filters: &[P4Filter<F>]) -> Result<GFeatureMap<F>> {
    let mut h = p4conv_z2(x, &filters[0])?;
    for psi in &filters[1..] {
        let z = p4conv_p4(&h, psi)?;
        let a = ops::leaky_relu(z.tensor(), LEAKY_SLOPE);
        h = GFeatureMap::new(ops::add(&a, h.tensor())?)?;
    }
    Ok(h)
}

fn stack_deviation<F: Float>(c: Case) -> Result<f64> {
    let width = c.kout;
    let x = random_tensor::<F>(&[c.n, c.kin, c.size, c.size], c.seed);
    let mut filters = vec![random_filter::<F>(width, c.kin, 1, c.k, c.seed + 1)?];
    for l in 0..4 {
        filters.push(random_filter::<F>(width, width, 4, c.k, c.seed + 2 + l)?);
    }
    let y = stack(&x, &filters)?;
    let mut worst: f64 = 0.0;
    for r in 1..4 {
        let lhs = stack(&rotate_plane_90(&x, r)?, &filters)?;
        worst = worst.max(max_abs_diff(lhs.tensor(), y.rotate(r)?.tensor())?);
    }
    Ok(worst)
}

/// Residual-block outputs of a whole single-stage network with random weights.
fn taps_deviation<F: Float>(c: Case) -> Result<f64> {
    let cfg = ModelConfig {
        regular_channels: 2 * c.kout,
        kernel: c.k.max(3),
        ..ModelConfig::default()
    };
    let model = ModelGraph::build(RefineConfig::single(cfg), c.seed)?.cast::<F>();
    let x = random_tensor::<F>(&[c.n, 3, c.size, c.size], c.seed);
    let taps = model.forward(&x)?.taps;
    let mut worst: f64 = 0.0;
    for r in 1..4 {
        let rotated = model.forward(&rotate_plane_90(&x, r)?)?.taps;
        for (a, b) in rotated.iter().zip(&taps) {
            let want = GFeatureMap::new(b.clone())?.rotate(r)?;
            worst = worst.max(max_abs_diff(a, want.tensor())?);
        }
    }
    Ok(worst)
}

/// Orientation pooling turns the p4 action into a plain rotation.
fn pool_deviation<F: Float>(c: Case, mode: PoolMode) -> Result<f64> {
    let x = random_tensor::<F>(&[c.n, c.kin, c.size, c.size], c.seed);
    let psi = random_filter::<F>(c.kout, c.kin, 1, c.k, c.seed + 1)?;
    let pooled = orientation_pool(&p4conv_z2(&x, &psi)?, mode)?;
    let mut worst: f64 = 0.0;
    for r in 1..4 {
        let lhs = orientation_pool(&p4conv_z2(&rotate_plane_90(&x, r)?, &psi)?, mode)?;
        worst = worst.max(max_abs_diff(&lhs, &rotate_plane_90(&pooled, r)?)?);
    }
    Ok(worst)
}

fn worst_case(n: usize, suite_seed: u64, f: impl Fn(Case) -> Result<f64>) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for i in 0..n {
        worst = worst.max(f(case(suite_seed, i))?);
    }
    Ok(worst)
}

pub fn equivariance() -> Result<Vec<Outcome>> {
    const F32: f64 = 1e-5;
    const F64: f64 = 1e-10;
    let n = EQUIVARIANCE_CASES;
    Ok(vec![
        Outcome::below("p4conv_z2 f32", worst_case(n, 1, lift_deviation::<f32>)?, F32),
        Outcome::below("p4conv_z2 f64", worst_case(n, 1, lift_deviation::<f64>)?, F64),
        Outcome::below("p4conv_p4 f32", worst_case(n, 2, group_deviation::<f32>)?, F32),
        Outcome::below("p4conv_p4 f64", worst_case(n, 2, group_deviation::<f64>)?, F64),
        Outcome::below("5-layer residual stack f32", worst_case(n, 3, stack_deviation::<f32>)?, F32),
        Outcome::below("5-layer residual stack f64", worst_case(n, 3, stack_deviation::<f64>)?, F64),
        Outcome::below("network block taps f32", worst_case(n, 5, taps_deviation::<f32>)?, F32),
        Outcome::below("network block taps f64", worst_case(n, 5, taps_deviation::<f64>)?, F64),
        Outcome::below("orientation max-pool f32", worst_case(n, 4, |c| pool_deviation::<f32>(c, PoolMode::Max))?, F32),
        Outcome::below("orientation avg-pool f32", worst_case(n, 4, |c| pool_deviation::<f32>(c, PoolMode::Avg))?, F32),
    ])
}

fn oracle_deviation(c: Case, domain: Domain) -> Result<f64> {
    let (s, x) = match domain {
        Domain::Plane => (1, random_tensor::<f64>(&[c.n, c.kin, c.size, c.size], c.seed)),
        Domain::P4 => (4, random_tensor::<f64>(&[c.n, c.kin, 4, c.size, c.size], c.seed)),
    };
    let psi = random_filter::<f64>(c.kout, c.kin, s, c.k, c.seed + 1)?;
    let fast = match domain {
        Domain::Plane => p4conv_z2(&x, &psi)?,
        Domain::P4 => p4conv_p4(&GFeatureMap::new(x.clone())?, &psi)?,
    };
    let spec = GroupSpec {
        input: domain,
        output: Domain::P4,
    };
    let slow = g_conv_oracle(&x, &psi.weight, Some(&psi.bias), spec)?;
    max_abs_diff(fast.tensor(), &slow)
}

pub fn oracle() -> Result<Vec<Outcome>> {
    let n = ORACLE_CASES;
    Ok(vec![
        Outcome::below(
            format!("p4conv_z2 vs direct summation ({n} shapes)"),
            worst_case(n, 11, |c| oracle_deviation(c, Domain::Plane))?,
            1e-6,
        ),
        Outcome::below(
            format!("p4conv_p4 vs direct summation ({n} shapes)"),
            worst_case(n, 12, |c| oracle_deviation(c, Domain::P4))?,
            1e-6,
        ),
    ])
}

pub fn params() -> Result<Vec<Outcome>> {
    let base = ModelConfig::default();
    let dsen = build_dsen(base.clone(), 0)?.count_params();
    let cnn = build_cnn_counterpart(ModelConfig::cnn(), 0)?.count_params();
    let group_layer = random_filter::<f32>(10, 10, 4, 5, 0)?.num_params();
    let mut out = vec![
        Outcome::equal("DSEN parameters", dsen, DSEN_PARAMS),
        Outcome::equal("CNN counterpart parameters", cnn, CNN_PARAMS),
        Outcome::equal("P4ConvP4 10->10 5x5 parameters", group_layer, 10010),
    ];
    for link in [LinkMode::SkipConcat, LinkMode::SkipAdd, LinkMode::None] {
        let count = |stages| -> usize {
            param_specs(&RefineConfig {
                stages,
                link,
                base: base.clone(),
            })
            .iter()
            .map(|s| s.numel())
            .sum()
        };
        let two = count(2);
        for stages in [4, 6, 8] {
            out.push(Outcome::equal(format!("{link} stages={stages} vs stages=2"), count(stages), two));
        }
    }
    let single = param_specs(&RefineConfig::single(base.clone()));
    let one = param_specs(&RefineConfig {
        stages: 1,
        link: LinkMode::SkipConcat,
        base,
    });
    let matching = one.iter().zip(&single).filter(|(a, b)| a == b).count();
    out.push(Outcome::equal("stages=1 tensor count vs DSEN", one.len(), single.len()));
    out.push(Outcome::equal("stages=1 tensors matching DSEN by name and shape", matching, single.len()));
    Ok(out)
}

/// Largest entry of `|analytic - numeric|` over the largest magnitude of
/// either, for every input that tracks gradients.
fn relative_error(inputs: &[Tensor<f64>], f: &dyn Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>) -> Result<f64> {
    const H: f64 = 1e-6;
    let probe_seed = inputs.iter().map(|t| t.numel() as u64).sum::<u64>();
    let out = f(inputs)?;
    let projection = random_tensor::<f64>(out.shape(), probe_seed);
    let loss = |xs: &[Tensor<f64>]| -> Result<Tensor<f64>> {
        let y = f(xs)?;
        Ok(ops::sum(&ops::mul(&y, &projection)?))
    };
    loss(inputs)?.backward()?;
    let mut worst: f64 = 0.0;
    for (i, t) in inputs.iter().enumerate().filter(|(_, t)| t.requires_grad()) {
        let analytic = t.grad().ok_or_else(|| Error::config(format!("input {i} received no gradient")))?;
        let mut numeric = Vec::with_capacity(t.numel());
        for j in 0..t.numel() {
            let eval = |delta: f64| -> Result<f64> {
                let mut d = t.data().to_vec();
                d[j] += delta;
                let mut xs = inputs.to_vec();
                xs[i] = Tensor::from_vec(t.shape(), d)?;
                Ok(loss(&xs)?.item())
            };
            numeric.push((eval(H)? - eval(-H)?) / (2.0 * H));
        }
        let scale = analytic.iter().chain(&numeric).fold(1e-12f64, |m, v| m.max(v.abs()));
        let err = analytic.iter().zip(&numeric).fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
        worst = worst.max(err / scale);
    }
    Ok(worst)
}

fn param(shape: &[usize], seed: u64) -> Tensor<f64> {
    random_tensor::<f64>(shape, seed).detached_param()
}

/// Values pushed at least 0.05 away from zero so no finite-difference probe
/// straddles a kink.
fn param_off_kink(shape: &[usize], seed: u64) -> Tensor<f64> {
    let t = random_tensor::<f64>(shape, seed);
    let d = t.data().iter().map(|&v| v.signum() * (v.abs() + 0.05)).collect();
    Tensor::param(shape, d).expect("non-empty shape")
}

/// p4 features whose four orientations at each pixel are at least 0.05 apart.
fn separated_orientations(shape: &[usize], seed: u64) -> Tensor<f64> {
    let t = random_tensor::<f64>(shape, seed);
    let plane = shape[3] * shape[4];
    let mut d = t.data().to_vec();
    for lead in 0..shape[0] * shape[1] {
        for p in 0..plane {
            let idx = |s: usize| (lead * 4 + s) * plane + p;
            let mut order: Vec<usize> = (0..4).collect();
            order.sort_by(|&a, &b| d[idx(a)].total_cmp(&d[idx(b)]));
            let base = d[idx(order[0])];
            for (rank, &s) in order.iter().enumerate() {
                d[idx(s)] = base + 0.3 * rank as f64 + 0.1 * d[idx(s)].fract().abs();
            }
        }
    }
    Tensor::param(shape, d).expect("non-empty shape")
}

type Probe = Box<dyn Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>>;

/// Named differentiable function with a generator of its inputs.
struct GradCase {
    name: &'static str,
    inputs: fn(u64) -> Vec<Tensor<f64>>,
    f: Probe,
}

fn gp(x: &Tensor<f64>) -> Result<GFeatureMap<f64>> {
    GFeatureMap::new(x.clone())
}

fn grad_cases() -> Vec<GradCase> {
    vec![
        GradCase {
            name: "add",
            inputs: |s| vec![param(&[2, 3, 4], s), param(&[2, 3, 4], s + 1)],
            f: Box::new(|x| ops::add(&x[0], &x[1])),
        },
        GradCase {
            name: "sub",
            inputs: |s| vec![param(&[2, 3, 4], s), param(&[2, 3, 4], s + 1)],
            f: Box::new(|x| ops::sub(&x[0], &x[1])),
        },
        GradCase {
            name: "mul",
            inputs: |s| vec![param(&[2, 3, 4], s), param(&[2, 3, 4], s + 1)],
            f: Box::new(|x| ops::mul(&x[0], &x[1])),
        },
        GradCase {
            name: "mul_scalar",
            inputs: |s| vec![param(&[3, 5], s)],
            f: Box::new(|x| Ok(ops::mul_scalar(&x[0], -1.7))),
        },
        GradCase {
            name: "mul_channelwise",
            inputs: |s| vec![param(&[2, 3, 4, 4], s), param(&[2, 3, 1, 1], s + 1)],
            f: Box::new(|x| ops::mul_channelwise(&x[0], &x[1])),
        },
        GradCase {
            name: "relu",
            inputs: |s| vec![param_off_kink(&[2, 3, 5], s)],
            f: Box::new(|x| Ok(ops::relu(&x[0]))),
        },
        GradCase {
            name: "leaky_relu",
            inputs: |s| vec![param_off_kink(&[2, 3, 5], s)],
            f: Box::new(|x| Ok(ops::leaky_relu(&x[0], LEAKY_SLOPE))),
        },
        GradCase {
            name: "sigmoid",
            inputs: |s| vec![scaled(param(&[2, 3, 5], s), 3.0).detached_param()],
            f: Box::new(|x| Ok(ops::sigmoid(&x[0]))),
        },
        GradCase {
            name: "sum",
            inputs: |s| vec![param(&[3, 4], s)],
            f: Box::new(|x| Ok(ops::sum(&x[0]))),
        },
        GradCase {
            name: "mean",
            inputs: |s| vec![param(&[3, 4], s)],
            f: Box::new(|x| Ok(ops::mean(&x[0]))),
        },
        GradCase {
            name: "global_avg_pool",
            inputs: |s| vec![param(&[2, 3, 4, 5], s)],
            f: Box::new(|x| ops::global_avg_pool(&x[0])),
        },
        GradCase {
            name: "mse_loss",
            inputs: |s| vec![param(&[2, 3, 4], s), param(&[2, 3, 4], s + 1)],
            f: Box::new(|x| ops::mse_loss(&x[0], &x[1])),
        },
        GradCase {
            name: "reshape",
            inputs: |s| vec![param(&[2, 3, 4], s)],
            f: Box::new(|x| ops::reshape(&x[0], &[4, 6])),
        },
        GradCase {
            name: "concat_channels",
            inputs: |s| vec![param(&[2, 1, 3, 3], s), param(&[2, 3, 3, 3], s + 1)],
            f: Box::new(|x| ops::concat_channels(&[&x[0], &x[1]])),
        },
        GradCase {
            name: "gather",
            inputs: |s| vec![param(&[2, 5], s)],
            f: Box::new(|x| ops::gather(&x[0], Arc::new(vec![9, 0, 0, 3, 4, 4, 4, 7]), &[2, 4])),
        },
        GradCase {
            name: "rotate_plane_90",
            inputs: |s| vec![param(&[2, 3, 4, 5], s)],
            f: Box::new(|x| rotate_plane_90(&x[0], 1)),
        },
        GradCase {
            name: "conv2d 3x3 pad 1",
            inputs: |s| vec![param(&[2, 3, 6, 6], s), param(&[4, 3, 3, 3], s + 1), param(&[4], s + 2)],
            f: Box::new(|x| ops::conv2d(&x[0], &x[1], Some(&x[2]), 1, 1)),
        },
        GradCase {
            name: "conv2d 5x5 pad 2",
            inputs: |s| vec![param(&[1, 2, 7, 7], s), param(&[3, 2, 5, 5], s + 1), param(&[3], s + 2)],
            f: Box::new(|x| ops::conv2d(&x[0], &x[1], Some(&x[2]), 1, 2)),
        },
        GradCase {
            name: "conv2d 1x1",
            inputs: |s| vec![param(&[2, 4, 3, 3], s), param(&[2, 4, 1, 1], s + 1), param(&[2], s + 2)],
            f: Box::new(|x| ops::conv2d(&x[0], &x[1], Some(&x[2]), 1, 0)),
        },
        GradCase {
            name: "conv2d stride 2",
            inputs: |s| vec![param(&[1, 2, 7, 7], s), param(&[3, 2, 3, 3], s + 1)],
            f: Box::new(|x| ops::conv2d(&x[0], &x[1], None, 2, 1)),
        },
        GradCase {
            name: "orientation_pool max",
            inputs: |s| vec![separated_orientations(&[2, 2, 4, 3, 3], s)],
            f: Box::new(|x| orientation_pool(&gp(&x[0])?, PoolMode::Max)),
        },
        GradCase {
            name: "orientation_pool avg",
            inputs: |s| vec![param(&[2, 2, 4, 3, 3], s)],
            f: Box::new(|x| orientation_pool(&gp(&x[0])?, PoolMode::Avg)),
        },
        GradCase {
            name: "p4conv_z2",
            inputs: |s| vec![param(&[2, 2, 5, 5], s), param(&[3, 2, 1, 3, 3], s + 1), param(&[3], s + 2)],
            f: Box::new(|x| {
                let psi = P4Filter::new(x[1].clone(), x[2].clone())?;
                Ok(p4conv_z2(&x[0], &psi)?.into_tensor())
            }),
        },
        GradCase {
            name: "p4conv_p4",
            inputs: |s| vec![param(&[1, 2, 4, 5, 5], s), param(&[2, 2, 4, 3, 3], s + 1), param(&[2], s + 2)],
            f: Box::new(|x| {
                let psi = P4Filter::new(x[1].clone(), x[2].clone())?;
                Ok(p4conv_p4(&gp(&x[0])?, &psi)?.into_tensor())
            }),
        },
        GradCase {
            name: "rotate_p4_filter",
            inputs: |s| vec![param(&[2, 1, 4, 3, 3], s), random_tensor(&[2], s + 1)],
            f: Box::new(|x| {
                let psi = P4Filter::new(x[0].clone(), x[1].clone())?;
                Ok(rotate_p4_filter(&psi, 3)?.weight)
            }),
        },
        GradCase {
            name: "diamond (value used twice)",
            inputs: |s| vec![param(&[3, 4], s)],
            f: Box::new(|x| {
                let a = ops::sigmoid(&x[0]);
                ops::mul(&ops::add(&a, &x[0])?, &a)
            }),
        },
    ]
}

pub fn gradcheck() -> Result<Vec<Outcome>> {
    let mut out = Vec::new();
    for case in grad_cases() {
        let mut worst: f64 = 0.0;
        for seed in 0..GRADCHECK_SEEDS {
            let inputs = (case.inputs)(1000 * seed + 17);
            worst = worst.max(relative_error(&inputs, case.f.as_ref())?);
        }
        out.push(Outcome::below(
            format!("{} ({GRADCHECK_SEEDS} seeds)", case.name),
            worst,
            1e-4,
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_parse_and_print() {
        for s in Suite::ALL {
            assert_eq!(s.to_string().parse::<Suite>().unwrap(), s);
        }
        assert!("all".parse::<Suite>().is_err());
    }

    #[test]
    fn outcome_verdicts() {
        assert!(Outcome::below("a", 1e-6, 1e-5).passed());
        assert!(!Outcome::below("a", f64::NAN, 1e-5).passed());
        assert!(!Outcome::equal("b", 3, 4).passed());
        assert!(Outcome::equal("b", 4, 4).to_string().starts_with("PASS b: 4 == 4"));
    }

    #[test]
    fn gradcheck_detects_a_wrong_gradient() {
        // The numeric side sees `x * c` while the graph only knows `x`.
        let x = param(&[4], 3);
        let err = relative_error(&[x], &|xs| {
            let c = Tensor::from_vec(&[4], vec![2.0; 4])?;
            let frozen = ops::mul(&xs[0].detach(), &c)?;
            let live = ops::sub(&xs[0], &xs[0].detach())?;
            ops::add(&frozen, &live)
        })
        .unwrap();
        assert!(err > 0.1, "{err}");
    }

    #[test]
    fn off_kink_values_avoid_zero() {
        assert!(param_off_kink(&[500], 1).data().iter().all(|v| v.abs() >= 0.05));
        let t = separated_orientations(&[1, 1, 4, 2, 2], 5);
        for p in 0..4 {
            let mut v: Vec<f64> = (0..4).map(|s| t.data()[s * 4 + p]).collect();
            v.sort_by(f64::total_cmp);
            assert!(v.windows(2).all(|w| w[1] - w[0] > 0.2));
        }
    }
}
