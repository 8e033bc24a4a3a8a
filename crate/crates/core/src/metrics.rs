//! PSNR, SSIM and dataset evaluation.
//!
//! SSIM uses an 11×11 Gaussian window (σ = 1.5), `K1 = 0.01`, `K2 = 0.03`,
//! dynamic range 1, valid-region windowing, and averages the map over all
//! positions of every colour channel.

use std::fmt::Write as _;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::ModelGraph;
use crate::refine::restore;
use crate::tensor::Tensor;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn same_shape(op: &'static str, x: &Tensor<f32>, y: &Tensor<f32>) -> Result<()> {
    if x.shape() != y.shape() {
        return Err(Error::ShapeMismatch {
            op,
            left: x.shape().to_vec(),
            right: y.shape().to_vec(),
        });
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB; `f64::INFINITY` for identical images.
pub fn psnr(x: &Tensor<f32>, y: &Tensor<f32>, max_val: f64) -> Result<f64> {
    same_shape("psnr", x, y)?;
    let mse = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(&a, &b)| (f64::from(a) - f64::from(b)).powi(2))
        .sum::<f64>()
        / x.numel() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (max_val * max_val / mse).log10()
    })
}

/// Normalised 1-D Gaussian taps.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let g: Vec<f64> = (0..size).map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = g.iter().sum();
    g.into_iter().map(|v| v / total).collect()
}

/// Valid-region separable filtering of an `h × w` plane.
fn filter_valid(x: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for xo in 0..ow {
            rows[y * ow + xo] = g.iter().zip(&x[y * w + xo..]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for yo in 0..oh {
        for (j, &gj) in g.iter().enumerate() {
            let src = &rows[(yo + j) * ow..][..ow];
            for (o, &v) in out[yo * ow..][..ow].iter_mut().zip(src) {
                *o += gj * v;
            }
        }
    }
    out
}

/// Mean structural similarity over channels and valid window positions.
pub fn ssim(x: &Tensor<f32>, y: &Tensor<f32>) -> Result<f64> {
    same_shape("ssim", x, y)?;
    let &[c, h, w] = x.shape() else {
        return Err(Error::ShapeMismatch {
            op: "ssim",
            left: x.shape().to_vec(),
            right: vec![3, 0, 0],
        });
    };
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::config(format!(
            "SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let g = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let (c1, c2) = ((SSIM_K1 * 1.0).powi(2), (SSIM_K2 * 1.0).powi(2));
    let plane = h * w;
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..c {
        let a: Vec<f64> = x.data()[ch * plane..][..plane].iter().map(|&v| f64::from(v)).collect();
        let b: Vec<f64> = y.data()[ch * plane..][..plane].iter().map(|&v| f64::from(v)).collect();
        let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
        let mu_a = filter_valid(&a, h, w, &g);
        let mu_b = filter_valid(&b, h, w, &g);
        let aa = filter_valid(&prod(&a, &a), h, w, &g);
        let bb = filter_valid(&prod(&b, &b), h, w, &g);
        let ab = filter_valid(&prod(&a, &b), h, w, &g);
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let (va, vb, cov) = (aa[i] - ma * ma, bb[i] - mb * mb, ab[i] - ma * mb);
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        count += mu_a.len();
    }
    Ok(total / count as f64)
}

/// Per-image scores and their means.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// Model or checkpoint identifier.
    pub id: String,
    /// `(image, psnr, ssim)` in dataset order.
    pub rows: Vec<(String, f64, f64)>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

impl EvalReport {
    pub fn from_rows(id: impl Into<String>, rows: Vec<(String, f64, f64)>) -> Self {
        let n = rows.len().max(1) as f64;
        let mean_psnr = rows.iter().map(|r| r.1).sum::<f64>() / n;
        let mean_ssim = rows.iter().map(|r| r.2).sum::<f64>() / n;
        EvalReport {
            id: id.into(),
            rows,
            mean_psnr,
            mean_ssim,
        }
    }

    /// `image<TAB>psnr<TAB>ssim` lines and a final `MEAN` line.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("# {}\nimage\tpsnr\tssim\n", self.id);
        for (name, p, s) in &self.rows {
            let _ = writeln!(out, "{name}\t{p:.4}\t{s:.6}");
        }
        let _ = writeln!(out, "MEAN\t{:.4}\t{:.6}", self.mean_psnr, self.mean_ssim);
        out
    }
}

/// Scores the clamped final-stage restoration of every pair against its clean image.
pub fn evaluate(model: &ModelGraph, data: &Dataset, id: &str) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::config("evaluation split is empty"));
    }
    let mut rows = Vec::with_capacity(data.len());
    for ((name, rainy), clean) in data.names.iter().zip(&data.rainy).zip(&data.clean) {
        let (restored, _) = restore(model, rainy)?;
        let clamped = Tensor::from_vec(
            restored.shape(),
            restored.data().iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        )?;
        rows.push((name.clone(), psnr(&clamped, clean, 1.0)?, ssim(&clamped, clean)?));
    }
    Ok(EvalReport::from_rows(id, rows))
}

/// Scores the rainy inputs themselves, the no-op baseline.
pub fn evaluate_inputs(data: &Dataset) -> Result<EvalReport> {
    let mut rows = Vec::with_capacity(data.len());
    for ((name, rainy), clean) in data.names.iter().zip(&data.rainy).zip(&data.clean) {
        rows.push((name.clone(), psnr(rainy, clean, 1.0)?, ssim(rainy, clean)?));
    }
    Ok(EvalReport::from_rows("input", rows))
}
