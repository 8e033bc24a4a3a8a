//! Flat `key = value` run configuration.
//!
//! One setting per line, `#` starts a comment, unknown keys are errors.
//! Relative paths are resolved against the configuration file's directory.
//! The `preset` key applies a named architecture before any other key,
//! wherever it appears.

use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{AngleSpec, GenSpec, Split};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::refine::{LinkMode, RefineConfig};
use crate::train::{Augment, TrainConfig};

/// Every key with its default and meaning, in documentation order.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("preset", "", "named architecture applied first: DSEN, DSEN_maxpool, DSEN_avgpool, DSEN_w/o_SE, CNN, MCNN, MCNN+SR, MDSEN, MDSEN+SC, S-DSEN"),
    ("seed", "0", "run seed; data, initialisation and batching draw separate streams from it"),
    ("backbone", "p4", "p4 | cnn"),
    ("regular_channels", "10", "regular channels per p4 layer"),
    ("p4_layers", "4", "residual group blocks per stage"),
    ("kernel", "5", "odd spatial kernel size"),
    ("aggregation", "learned", "orientation merge: learned | max | avg"),
    ("use_se", "true", "channel attention after aggregation"),
    ("se_reduction", "2", "attention bottleneck divisor"),
    ("cnn_channels", "20", "planes per layer of the cnn backbone"),
    ("stages", "2", "recurrent stages, 1..=8"),
    ("link", "skip_concat", "stage link: none | skip_concat | skip_add"),
    ("lr0", "0.0005", "initial learning rate"),
    ("lr_drop_steps", "15000,17500", "comma-separated steps where the rate drops (inclusive)"),
    ("lr_drop_factor", "10", "divisor applied at each drop"),
    ("batch", "64", "pairs per step"),
    ("crop", "64", "square training crop"),
    ("max_steps", "20000", "optimisation steps"),
    ("beta1", "0.9", "Adam first-moment decay"),
    ("beta2", "0.999", "Adam second-moment decay"),
    ("eps", "1e-8", "Adam denominator offset"),
    ("augment", "none", "none | rot_range | c4"),
    ("rot_range", "-30,30", "angle bounds in degrees for rot_range augmentation"),
    ("loss_mode", "final", "final | per_stage"),
    ("checkpoint_every", "0", "steps between checkpoint writes; 0 = only at the end"),
    ("clip", "none", "global gradient-norm bound, or none"),
    ("manifest", "", "dataset manifest for training and evaluation"),
    ("split", "train", "manifest split used for training"),
    ("log", "", "training log path (tab-separated step, lr, loss)"),
    ("gen_n", "8", "pairs written by gen-data"),
    ("gen_size", "64", "square image size for gen-data"),
    ("gen_val", "0", "pairs tagged val by gen-data"),
    ("gen_test", "0", "pairs tagged test by gen-data"),
    ("streaks", "24", "streaks per image"),
    ("angles", "-30..30", "streak angles, degrees from vertical (clockwise): a range lo..hi or a list a,b,c"),
    ("streak_length", "8,20", "streak length range in pixels"),
    ("streak_width", "1,2", "streak width range in pixels"),
    ("streak_intensity", "0.25,0.6", "streak intensity range"),
    ("streak_blur", "0", "motion blur extent in pixels"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub model: RefineConfig,
    pub train: TrainConfig,
    pub gen: GenSpec,
    pub manifest: Option<PathBuf>,
    pub split: Split,
    pub log: Option<PathBuf>,
    /// Bounds used whenever `train.augment` is a rotation range.
    pub rot_range: (f64, f64),
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            model: RefineConfig::default(),
            train: TrainConfig::default(),
            gen: GenSpec::default(),
            manifest: None,
            split: Split::Train,
            log: None,
            rot_range: (-30.0, 30.0),
        }
    }
}

pub const PRESETS: &[&str] = &[
    "DSEN",
    "DSEN_maxpool",
    "DSEN_avgpool",
    "DSEN_w/o_SE",
    "CNN",
    "MCNN",
    "MCNN+SR",
    "MDSEN",
    "MDSEN+SC",
    "S-DSEN",
];

/// Key overrides of a named architecture.
pub fn preset(name: &str) -> Option<&'static [(&'static str, &'static str)]> {
    Some(match name {
        "DSEN" => &[("stages", "1"), ("link", "none")],
        "DSEN_maxpool" => &[("stages", "1"), ("link", "none"), ("aggregation", "max")],
        "DSEN_avgpool" => &[("stages", "1"), ("link", "none"), ("aggregation", "avg")],
        "DSEN_w/o_SE" => &[("stages", "1"), ("link", "none"), ("use_se", "false")],
        "CNN" => &[("stages", "1"), ("link", "none"), ("backbone", "cnn")],
        "MCNN" => &[("stages", "8"), ("backbone", "cnn"), ("link", "none")],
        "MCNN+SR" => &[("stages", "8"), ("backbone", "cnn"), ("link", "skip_concat")],
        "MDSEN" => &[("stages", "8"), ("link", "none")],
        "MDSEN+SC" => &[("stages", "8"), ("link", "skip_add")],
        "S-DSEN" => &[("stages", "8"), ("link", "skip_concat")],
        _ => return None,
    })
}

/// `--help` text listing every key.
pub fn keys_help() -> String {
    let width = KEYS.iter().map(|(k, _, _)| k.len()).max().unwrap_or(0);
    let mut out = String::new();
    for (key, default, about) in KEYS {
        let default = if default.is_empty() { "-" } else { default };
        out.push_str(&format!("  {key:<width$}  [{default}] {about}\n"));
    }
    out
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::config(format!("`{key}`: cannot parse `{v}` as a number")))
}

fn boolean(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::config(format!("`{key}`: expected true or false, got `{v}`"))),
    }
}

fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| num(key, s))
        .collect()
}

fn pair(key: &str, v: &str) -> Result<(f64, f64)> {
    match list::<f64>(key, v)?[..] {
        [a, b] => Ok((a, b)),
        [a] => Ok((a, a)),
        _ => Err(Error::config(format!("`{key}`: expected `lo,hi`, got `{v}`"))),
    }
}

/// `lo..hi` is a uniform range, `a,b,c` a set of directions.
pub fn parse_angles(v: &str) -> Result<AngleSpec> {
    let spec = match v.split_once("..") {
        Some((lo, hi)) => AngleSpec::Range(num("angles", lo.trim())?, num("angles", hi.trim())?),
        None => AngleSpec::Set(list("angles", v)?),
    };
    match &spec {
        AngleSpec::Set(s) if s.is_empty() => Err(Error::config("`angles`: empty list")),
        AngleSpec::Range(lo, hi) if lo > hi => Err(Error::config(format!("`angles`: {lo} > {hi}"))),
        _ => Ok(spec),
    }
}

fn optional_path(v: &str, base: &Path) -> Option<PathBuf> {
    (!v.is_empty()).then(|| base.join(v))
}

impl RunConfig {
    /// Reads a configuration file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::parse(&text, base).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    /// Parses `key = value` lines; `base` resolves relative paths.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut lines = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected `key = value`", i + 1)))?;
            let k = k.trim();
            if lines.iter().any(|&(_, prev, _)| prev == k) {
                return Err(Error::config(format!("line {}: `{k}` set twice", i + 1)));
            }
            lines.push((i + 1, k, v.trim()));
        }
        lines.sort_by_key(|&(_, k, _)| k != "preset");
        let mut cfg = RunConfig::default();
        for (n, k, v) in lines {
            cfg.set(k, v, base).map_err(|e| Error::config(format!("line {n}: {e}")))?;
        }
        Ok(cfg)
    }

    /// Applies one setting; `base` resolves relative paths.
    pub fn set(&mut self, key: &str, v: &str, base: &Path) -> Result<()> {
        let m: &mut ModelConfig = &mut self.model.base;
        let t = &mut self.train;
        let g = &mut self.gen;
        match key {
            "preset" => {
                let overrides = preset(v).ok_or_else(|| {
                    Error::config(format!("unknown preset `{v}` ({})", PRESETS.join(", ")))
                })?;
                for (k, val) in overrides {
                    self.set(k, val, base)?;
                }
            }
            "seed" => {
                self.seed = num(key, v)?;
                t.seed = self.seed;
                g.seed = self.seed;
            }
            "backbone" => m.backbone = v.parse()?,
            "regular_channels" => m.regular_channels = num(key, v)?,
            "p4_layers" => m.p4_layers = num(key, v)?,
            "kernel" => m.kernel = num(key, v)?,
            "aggregation" => m.aggregation = v.parse()?,
            "use_se" => m.use_se = boolean(key, v)?,
            "se_reduction" => m.se_reduction = num(key, v)?,
            "cnn_channels" => m.cnn_channels = num(key, v)?,
            "stages" => self.model.stages = num(key, v)?,
            "link" => self.model.link = v.parse::<LinkMode>()?,
            "lr0" => t.lr0 = num(key, v)?,
            "lr_drop_steps" => t.lr_drop_steps = list(key, v)?,
            "lr_drop_factor" => t.lr_drop_factor = num(key, v)?,
            "batch" => t.batch = num(key, v)?,
            "crop" => t.crop = num(key, v)?,
            "max_steps" => t.max_steps = num(key, v)?,
            "beta1" => t.adam.beta1 = num(key, v)?,
            "beta2" => t.adam.beta2 = num(key, v)?,
            "eps" => t.adam.eps = num(key, v)?,
            "augment" => t.augment = v.parse::<Augment>()?,
            "rot_range" => self.rot_range = pair(key, v)?,
            "loss_mode" => t.loss_mode = v.parse()?,
            "checkpoint_every" => t.checkpoint_every = num(key, v)?,
            "clip" => t.clip = if v == "none" { None } else { Some(num(key, v)?) },
            "manifest" => self.manifest = optional_path(v, base),
            "split" => self.split = v.parse()?,
            "log" => self.log = optional_path(v, base),
            "gen_n" => g.n = num(key, v)?,
            "gen_size" => g.size = num(key, v)?,
            "gen_val" => g.val = num(key, v)?,
            "gen_test" => g.test = num(key, v)?,
            "streaks" => g.streaks.count = num(key, v)?,
            "angles" => g.streaks.angles = parse_angles(v)?,
            "streak_length" => g.streaks.length = pair(key, v)?,
            "streak_width" => g.streaks.width = pair(key, v)?,
            "streak_intensity" => g.streaks.intensity = pair(key, v)?,
            "streak_blur" => g.streaks.blur = num(key, v)?,
            _ => return Err(Error::config(format!("unknown key `{key}`"))),
        }
        if let Augment::RotRange(..) = self.train.augment {
            self.train.augment = Augment::RotRange(self.rot_range.0, self.rot_range.1);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate(self.model.base.kernel)?;
        self.gen.streaks.validate()
    }

    /// Effective settings in the file format, one line per key.
    pub fn to_text(&self) -> String {
        let m = &self.model.base;
        let t = &self.train;
        let s = &self.gen.streaks;
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let angles = match &s.angles {
            AngleSpec::Range(lo, hi) => format!("{lo}..{hi}"),
            AngleSpec::Set(v) => v.iter().map(f64::to_string).collect::<Vec<_>>().join(","),
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let lines = [
            ("seed", self.seed.to_string()),
            ("backbone", m.backbone.to_string()),
            ("regular_channels", m.regular_channels.to_string()),
            ("p4_layers", m.p4_layers.to_string()),
            ("kernel", m.kernel.to_string()),
            ("aggregation", m.aggregation.to_string()),
            ("use_se", m.use_se.to_string()),
            ("se_reduction", m.se_reduction.to_string()),
            ("cnn_channels", m.cnn_channels.to_string()),
            ("stages", self.model.stages.to_string()),
            ("link", self.model.link.to_string()),
            ("lr0", t.lr0.to_string()),
            ("lr_drop_steps", join(&t.lr_drop_steps)),
            ("lr_drop_factor", t.lr_drop_factor.to_string()),
            ("batch", t.batch.to_string()),
            ("crop", t.crop.to_string()),
            ("max_steps", t.max_steps.to_string()),
            ("beta1", t.adam.beta1.to_string()),
            ("beta2", t.adam.beta2.to_string()),
            ("eps", t.adam.eps.to_string()),
            ("augment", t.augment.to_string()),
            ("rot_range", format!("{},{}", self.rot_range.0, self.rot_range.1)),
            ("loss_mode", t.loss_mode.to_string()),
            ("checkpoint_every", t.checkpoint_every.to_string()),
            ("clip", t.clip.map_or("none".into(), |c| c.to_string())),
            ("manifest", path(&self.manifest)),
            ("split", self.split.to_string()),
            ("log", path(&self.log)),
            ("gen_n", self.gen.n.to_string()),
            ("gen_size", self.gen.size.to_string()),
            ("gen_val", self.gen.val.to_string()),
            ("gen_test", self.gen.test.to_string()),
            ("streaks", s.count.to_string()),
            ("angles", angles),
            ("streak_length", format!("{},{}", s.length.0, s.length.1)),
            ("streak_width", format!("{},{}", s.width.0, s.width.1)),
            ("streak_intensity", format!("{},{}", s.intensity.0, s.intensity.1)),
            ("streak_blur", s.blur.to_string()),
        ];
        lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Aggregation, Backbone};

    #[test]
    fn documented_defaults_are_the_defaults() {
        let mut cfg = RunConfig::default();
        for (key, default, _) in KEYS.iter().filter(|(k, _, _)| *k != "preset") {
            cfg.set(key, default, Path::new("")).unwrap();
        }
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn every_key_is_documented_and_round_trips() {
        let text = "seed = 7\naugment = rot_range\nrot_range = -10,20\nangles = -5,5\nclip = 1.5\nmanifest = d/m.tsv\n";
        let cfg = RunConfig::parse(text, Path::new("/base")).unwrap();
        assert_eq!(cfg.train.augment, Augment::RotRange(-10.0, 20.0));
        assert_eq!(cfg.manifest.as_deref(), Some(Path::new("/base/d/m.tsv")));
        let written = cfg.to_text();
        for line in written.lines() {
            let key = line.split('=').next().unwrap().trim();
            assert!(KEYS.iter().any(|(k, _, _)| *k == key), "{key} undocumented");
        }
        let back = RunConfig::parse(&written, Path::new("")).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(written.lines().count() + 1, KEYS.len());
    }

    #[test]
    fn seed_reaches_every_stream_owner() {
        let cfg = RunConfig::parse("seed = 42", Path::new("")).unwrap();
        assert_eq!((cfg.seed, cfg.train.seed, cfg.gen.seed), (42, 42, 42));
    }

    #[test]
    fn rejects_unknown_duplicate_and_malformed() {
        for (text, needle) in [
            ("stagez = 2", "unknown key `stagez`"),
            ("stages = 2\nstages = 3", "set twice"),
            ("stages 2", "line 1"),
            ("  # c\nkernel = five", "line 2"),
            ("preset = DSEN_big", "unknown preset"),
            ("angles = 10..-10", "angles"),
        ] {
            let err = RunConfig::parse(text, Path::new("")).unwrap_err().to_string();
            assert!(err.contains(needle), "{text:?}: {err}");
        }
    }

    #[test]
    fn preset_applies_before_explicit_keys() {
        let cfg = RunConfig::parse("stages = 3   # trailing comment\npreset = MCNN+SR\n", Path::new("")).unwrap();
        assert_eq!(cfg.model.stages, 3);
        assert_eq!(cfg.model.base.backbone, Backbone::RegularCnn);
        assert_eq!(cfg.model.link, LinkMode::SkipConcat);
    }

    #[test]
    fn every_preset_builds_a_valid_configuration() {
        for name in PRESETS {
            let cfg = RunConfig::parse(&format!("preset = {name}"), Path::new("")).unwrap();
            cfg.validate().unwrap();
        }
        let pooled = RunConfig::parse("preset = DSEN_maxpool", Path::new("")).unwrap();
        assert_eq!(pooled.model.base.aggregation, Aggregation::OrientMax);
        let no_se = RunConfig::parse("preset = DSEN_w/o_SE", Path::new("")).unwrap();
        assert!(!no_se.model.base.use_se);
        assert_eq!(RunConfig::parse("preset = S-DSEN", Path::new("")).unwrap().model.stages, 8);
    }

    #[test]
    fn angle_lists_and_ranges() {
        assert_eq!(parse_angles("-30..30").unwrap(), AngleSpec::Range(-30.0, 30.0));
        assert_eq!(parse_angles("-20,0,20").unwrap(), AngleSpec::Set(vec![-20.0, 0.0, 20.0]));
        assert!(parse_angles("").is_err());
    }
}
