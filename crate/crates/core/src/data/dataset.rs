//! Procedural datasets on disk and their manifest.
//!
//! A manifest is a tab-separated text file, one pair per line:
//! `rainy_path<TAB>clean_path<TAB>split`, paths relative to the manifest's
//! directory. Lines starting with `#` are comments.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;

use super::image_io::{load_image, save_image};
use super::rainsim::{synth_rain, AngleSpec, StreakSpec};
use crate::error::{Error, Result};
use crate::rng::{item_rng, Stream};
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.tsv";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::config(format!("unknown split `{other}` (train | val | test)"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub rainy: PathBuf,
    pub clean: PathBuf,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    /// Directory the entry paths are relative to.
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// Parses a manifest and checks that every referenced file exists.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [rainy, clean, split] = fields[..] else {
                return Err(Error::format(path, format!("line {}: expected 3 tab-separated fields", i + 1)));
            };
            let split = split.parse().map_err(|e: Error| Error::format(path, format!("line {}: {e}", i + 1)))?;
            let entry = ManifestEntry {
                rainy: rainy.into(),
                clean: clean.into(),
                split,
            };
            for f in [&entry.rainy, &entry.clean] {
                if !root.join(f).is_file() {
                    return Err(Error::format(path, format!("line {}: missing file {}", i + 1, f.display())));
                }
            }
            entries.push(entry);
        }
        Ok(DatasetManifest { root, entries })
    }

    /// Writes the manifest with optional `#` comment lines first.
    pub fn save(&self, path: &Path, comments: &[String]) -> Result<()> {
        let mut text = String::new();
        for c in comments {
            text.push_str(&format!("# {c}\n"));
        }
        for e in &self.entries {
            text.push_str(&format!("{}\t{}\t{}\n", e.rainy.display(), e.clean.display(), e.split));
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.root.join(p)
    }
}

/// Pairs held in memory as `[3, H, W]` tensors.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub names: Vec<String>,
    pub rainy: Vec<Tensor<f32>>,
    pub clean: Vec<Tensor<f32>>,
}

impl Dataset {
    pub fn load(manifest: &DatasetManifest, split: Split) -> Result<Self> {
        let mut ds = Dataset::default();
        for e in manifest.split(split) {
            let (rp, cp) = (manifest.resolve(&e.rainy), manifest.resolve(&e.clean));
            let (o, b) = (load_image(&rp)?, load_image(&cp)?);
            if o.shape() != b.shape() {
                return Err(Error::format(
                    &rp,
                    format!("size {:?} differs from clean image {:?}", o.shape(), b.shape()),
                ));
            }
            ds.push(e.rainy.display().to_string(), o, b);
        }
        Ok(ds)
    }

    pub fn push(&mut self, name: String, rainy: Tensor<f32>, clean: Tensor<f32>) {
        self.names.push(name);
        self.rainy.push(rainy);
        self.clean.push(clean);
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// Settings of [`gen_dataset`].
#[derive(Clone, Debug, PartialEq)]
pub struct GenSpec {
    pub n: usize,
    pub size: usize,
    pub streaks: StreakSpec,
    pub seed: u64,
    /// The last `val + test` pairs are tagged `val`, then `test`.
    pub val: usize,
    pub test: usize,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec {
            n: 8,
            size: 64,
            streaks: StreakSpec::default(),
            seed: 0,
            val: 0,
            test: 0,
        }
    }
}

/// Smooth colour gradient plus Gaussian blobs, on the 8-bit grid.
pub fn procedural_background(size: usize, rng: &mut impl Rng) -> Tensor<f32> {
    let s = size as f64;
    let mut planes = vec![0.0f64; 3 * size * size];
    for plane in planes.chunks_exact_mut(size * size) {
        let (base, gx, gy) = (rng.gen_range(0.2..0.7), rng.gen_range(-0.25..0.25), rng.gen_range(-0.25..0.25));
        for (i, v) in plane.iter_mut().enumerate() {
            *v = base + gx * (i % size) as f64 / s + gy * (i / size) as f64 / s;
        }
    }
    for _ in 0..6 {
        let (cy, cx) = (rng.gen_range(0.0..s), rng.gen_range(0.0..s));
        let sigma = rng.gen_range(s / 12.0..s / 4.0);
        let amp: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-0.3..0.3));
        for (c, plane) in planes.chunks_exact_mut(size * size).enumerate() {
            for (i, v) in plane.iter_mut().enumerate() {
                let (y, x) = ((i / size) as f64, (i % size) as f64);
                *v += amp[c] * (-((y - cy).powi(2) + (x - cx).powi(2)) / (2.0 * sigma * sigma)).exp();
            }
        }
    }
    let data = planes.iter().map(|v| ((v.clamp(0.0, 1.0) * 255.0).round() / 255.0) as f32).collect();
    Tensor::from_vec(&[3, size, size], data).expect("square image")
}

fn describe(angles: &AngleSpec) -> String {
    match angles {
        AngleSpec::Set(v) => v.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(","),
        AngleSpec::Range(lo, hi) => format!("{lo}..{hi}"),
    }
}

/// Writes `rain_%04d.png` / `clean_%04d.png` pairs and [`MANIFEST_FILE`] into `out_dir`.
pub fn gen_dataset(spec: &GenSpec, out_dir: &Path) -> Result<DatasetManifest> {
    spec.streaks.validate()?;
    if spec.val + spec.test > spec.n {
        return Err(Error::config(format!(
            "val {} + test {} exceeds {} pairs",
            spec.val, spec.test, spec.n
        )));
    }
    if spec.n > 0 && spec.size == 0 {
        return Err(Error::config("image size must be positive"));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut entries = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let mut rng = item_rng(spec.seed, Stream::Data, i as u64);
        let clean = procedural_background(spec.size, &mut rng);
        let pair = synth_rain(&clean, &spec.streaks, rng.gen())?;
        let (rainy, clean_name) = (format!("rain_{i:04}.png"), format!("clean_{i:04}.png"));
        save_image(&pair.rainy, &out_dir.join(&rainy))?;
        save_image(&pair.clean, &out_dir.join(&clean_name))?;
        let split = if i < spec.n - spec.val - spec.test {
            Split::Train
        } else if i < spec.n - spec.test {
            Split::Val
        } else {
            Split::Test
        };
        entries.push(ManifestEntry {
            rainy: rainy.into(),
            clean: clean_name.into(),
            split,
        });
    }
    let manifest = DatasetManifest {
        root: out_dir.to_path_buf(),
        entries,
    };
    let comments = [
        "rainy\tclean\tsplit".to_owned(),
        format!(
            "seed={} n={} size={} streaks={} angles={} (degrees from vertical, positive clockwise)",
            spec.seed,
            spec.n,
            spec.size,
            spec.streaks.count,
            describe(&spec.streaks.angles)
        ),
    ];
    manifest.save(&out_dir.join(MANIFEST_FILE), &comments)?;
    Ok(manifest)
}
