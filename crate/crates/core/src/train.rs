//! Batching, augmentation, the step schedule and the training loop.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gconv::rotate_plane_90;
use crate::model::{checkpoint, ModelGraph};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::refine::{forward_multistage, unroll_loss, LossMode};
use crate::rng::{stream_rng, Stream};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Augment {
    None,
    /// Bilinear rotation by a uniform angle in `[lo, hi]` degrees, then centre crop.
    RotRange(f64, f64),
    /// Exact rotation by a uniform multiple of 90°.
    C4,
}

impl FromStr for Augment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Augment::None),
            "rot" | "rot_range" => Ok(Augment::RotRange(-30.0, 30.0)),
            "c4" => Ok(Augment::C4),
            other => Err(Error::config(format!("unknown augmentation `{other}` (none | rot_range | c4)"))),
        }
    }
}

impl fmt::Display for Augment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Augment::None => f.write_str("none"),
            Augment::RotRange(..) => f.write_str("rot_range"),
            Augment::C4 => f.write_str("c4"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    /// Steps at which the rate is divided by `lr_drop_factor`, strictly increasing.
    pub lr_drop_steps: Vec<usize>,
    pub lr_drop_factor: f64,
    pub batch: usize,
    pub crop: usize,
    pub max_steps: usize,
    pub adam: AdamConfig,
    pub augment: Augment,
    pub seed: u64,
    pub loss_mode: LossMode,
    /// Write the checkpoint every this many steps; 0 writes it only at the end.
    pub checkpoint_every: usize,
    /// Global gradient-norm bound.
    pub clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 0.0005,
            lr_drop_steps: vec![15000, 17500],
            lr_drop_factor: 10.0,
            batch: 64,
            crop: 64,
            max_steps: 20000,
            adam: AdamConfig::default(),
            augment: Augment::None,
            seed: 0,
            loss_mode: LossMode::Final,
            checkpoint_every: 0,
            clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, kernel: usize) -> Result<()> {
        if self.lr_drop_steps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config(format!(
                "lr drop steps {:?} must be strictly increasing",
                self.lr_drop_steps
            )));
        }
        if self.crop < kernel {
            return Err(Error::config(format!("crop {} is smaller than the kernel {kernel}", self.crop)));
        }
        if self.batch == 0 {
            return Err(Error::config("batch must be positive"));
        }
        if !(self.lr0 > 0.0 && self.lr_drop_factor > 0.0) {
            return Err(Error::config("learning rate and drop factor must be positive"));
        }
        if let Augment::RotRange(lo, hi) = self.augment {
            if !(lo <= hi && lo.abs() < 90.0 && hi.abs() < 90.0) {
                return Err(Error::config(format!("rotation range [{lo}, {hi}] must be ordered within ±90°")));
            }
        }
        if self.clip.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::config("clip must be positive"));
        }
        Ok(())
    }
}

/// Piecewise-constant rate; a drop takes effect at its own step.
pub fn lr_at(step: usize, cfg: &TrainConfig) -> f64 {
    let drops = cfg.lr_drop_steps.iter().filter(|&&d| step >= d).count();
    cfg.lr0 / cfg.lr_drop_factor.powi(drops as i32)
}

/// Window `[y0, y0+s) × [x0, x0+s)` of a `[3, H, W]` image.
fn window(img: &Tensor<f32>, y0: usize, x0: usize, s: usize) -> Vec<f32> {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let mut out = Vec::with_capacity(3 * s * s);
    for c in 0..3 {
        for y in y0..y0 + s {
            out.extend_from_slice(&img.data()[(c * h + y) * w + x0..][..s]);
        }
    }
    out
}

/// Rotates an `s × s` patch about its centre by `deg` (clockwise on screen),
/// samples bilinearly with zero fill and keeps the central `crop × crop`.
fn rotate_crop(patch: &[f32], s: usize, deg: f64, crop: usize) -> Vec<f32> {
    let (sin, cos) = deg.to_radians().sin_cos();
    let centre = (s as f64 - 1.0) / 2.0;
    let off = (s - crop) as f64 / 2.0;
    let at = |c: usize, y: isize, x: isize| -> f64 {
        if y < 0 || x < 0 || y >= s as isize || x >= s as isize {
            0.0
        } else {
            f64::from(patch[(c * s + y as usize) * s + x as usize])
        }
    };
    let mut out = Vec::with_capacity(3 * crop * crop);
    for c in 0..3 {
        for i in 0..crop {
            for j in 0..crop {
                let (dy, dx) = (i as f64 + off - centre, j as f64 + off - centre);
                // Inverse map: the output pixel samples the input rotated back.
                let (sy, sx) = (centre + cos * dy - sin * dx, centre + sin * dy + cos * dx);
                let (y0, x0) = (sy.floor(), sx.floor());
                let (fy, fx) = (sy - y0, sx - x0);
                let (y0, x0) = (y0 as isize, x0 as isize);
                let v = (1.0 - fy) * ((1.0 - fx) * at(c, y0, x0) + fx * at(c, y0, x0 + 1))
                    + fy * ((1.0 - fx) * at(c, y0 + 1, x0) + fx * at(c, y0 + 1, x0 + 1));
                out.push(v as f32);
            }
        }
    }
    out
}

/// One training sample: identical crop and augmentation for rainy and clean.
fn sample(ds: &Dataset, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<(Vec<f32>, Vec<f32>)> {
    let i = rng.gen_range(0..ds.len());
    let (o, b) = (&ds.rainy[i], &ds.clean[i]);
    let (h, w) = (o.shape()[1], o.shape()[2]);
    if h < cfg.crop || w < cfg.crop {
        return Err(Error::config(format!(
            "sample {} is {h}x{w}, smaller than the {c}x{c} crop",
            ds.names[i],
            c = cfg.crop
        )));
    }
    let angle = match cfg.augment {
        Augment::RotRange(lo, hi) if lo < hi => Some(rng.gen_range(lo..=hi)),
        Augment::RotRange(lo, _) => Some(lo),
        _ => None,
    };
    // A rotated crop needs a larger source window to avoid fill in its corners.
    let s = match angle {
        Some(a) => {
            let (sin, cos) = a.to_radians().sin_cos();
            let need = (cfg.crop as f64 * (sin.abs() + cos.abs())).ceil() as usize + 2;
            need.min(h).min(w)
        }
        None => cfg.crop,
    };
    let y0 = if h > s { rng.gen_range(0..=h - s) } else { 0 };
    let x0 = if w > s { rng.gen_range(0..=w - s) } else { 0 };
    let (mut po, mut pb) = (window(o, y0, x0, s), window(b, y0, x0, s));
    if let Some(a) = angle {
        po = rotate_crop(&po, s, a, cfg.crop);
        pb = rotate_crop(&pb, s, a, cfg.crop);
    }
    if cfg.augment == Augment::C4 {
        let k = rng.gen_range(0..4);
        po = quarter_turns(po, cfg.crop, k)?;
        pb = quarter_turns(pb, cfg.crop, k)?;
    }
    Ok((po, pb))
}

fn quarter_turns(patch: Vec<f32>, crop: usize, k: usize) -> Result<Vec<f32>> {
    if k == 0 {
        return Ok(patch);
    }
    Ok(rotate_plane_90(&Tensor::from_vec(&[3, crop, crop], patch)?, k)?.into_vec())
}

/// `(rainy, clean)` batches of shape `[batch, 3, crop, crop]`.
pub fn make_batch(ds: &Dataset, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<(Tensor<f32>, Tensor<f32>)> {
    if ds.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    let n = 3 * cfg.crop * cfg.crop;
    let (mut o, mut b) = (Vec::with_capacity(cfg.batch * n), Vec::with_capacity(cfg.batch * n));
    for _ in 0..cfg.batch {
        let (po, pb) = sample(ds, cfg, rng)?;
        o.extend(po);
        b.extend(pb);
    }
    let shape = [cfg.batch, 3, cfg.crop, cfg.crop];
    Ok((Tensor::from_vec(&shape, o)?, Tensor::from_vec(&shape, b)?))
}

/// One logged step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

impl fmt::Display for StepRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{:e}\t{:.9e}", self.step, self.lr, self.loss)
    }
}

/// Where training writes its artifacts.
#[derive(Clone, Debug, Default)]
pub struct TrainOutputs {
    pub checkpoint: Option<PathBuf>,
    /// Tab-separated `step lr loss`, one line per step, flushed as it goes.
    pub log: Option<PathBuf>,
}

fn save_checkpoint(model: &ModelGraph, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => checkpoint::save(model.params(), p),
        None => Ok(()),
    }
}

/// Runs `cfg.max_steps` Adam steps on `model` and returns the loss record.
pub fn train(model: &mut ModelGraph, ds: &Dataset, cfg: &TrainConfig, out: &TrainOutputs) -> Result<Vec<StepRecord>> {
    cfg.validate(model.config().base.kernel)?;
    let mut log = match &out.log {
        Some(p) => {
            let mut f = BufWriter::new(File::create(p).map_err(|e| Error::io(p, e))?);
            writeln!(f, "step\tlr\tloss").map_err(|e| Error::io(p, e))?;
            Some((f, p))
        }
        None => None,
    };
    let mut rng = stream_rng(cfg.seed, Stream::Batch);
    let mut state = AdamState::new();
    let mut records = Vec::with_capacity(cfg.max_steps);
    for step in 0..cfg.max_steps {
        let lr = lr_at(step, cfg);
        let (o, b) = make_batch(ds, cfg, &mut rng)?;
        let outputs = forward_multistage(model, &o)?;
        let loss = unroll_loss(&outputs, &b, cfg.loss_mode)?;
        let value = f64::from(loss.item());
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss { step, value });
        }
        model.params().zero_grad();
        loss.backward()?;
        drop(outputs);
        drop(loss);
        adam_step(model.params_mut(), &mut state, &cfg.adam, lr, cfg.clip)?;

        let rec = StepRecord { step, lr, loss: value };
        if let Some((f, p)) = log.as_mut() {
            writeln!(f, "{rec}").and_then(|_| f.flush()).map_err(|e| Error::io(p.as_path(), e))?;
        }
        records.push(rec);
        if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 {
            save_checkpoint(model, out.checkpoint.as_deref())?;
        }
    }
    save_checkpoint(model, out.checkpoint.as_deref())?;
    Ok(records)
}
