use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

use dsen::config::{RunConfig, KEYS};
use dsen::data::{load_image, save_image, to_rgb8};
use dsen::model::{checkpoint, ModelGraph};
use dsen::rng::random_tensor;
use dsen::Tensor;

const SMALL: &str = "regular_channels = 2\np4_layers = 2\nkernel = 3\nbatch = 2\ncrop = 16\n";

fn dsen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dsen"))
        .args(args)
        .output()
        .expect("spawn dsen")
}

fn ok(o: &Output) {
    assert!(o.status.success(), "exit {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tree_hash(dir: &Path) -> Vec<u8> {
    let mut names: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    let mut h = Sha256::new();
    for n in names {
        h.update(n.to_string_lossy().as_bytes());
        h.update(fs::read(dir.join(&n)).unwrap());
    }
    h.finalize().to_vec()
}

/// Small dataset plus a config pointing at it.
fn setup(dir: &Path, extra: &str) -> std::path::PathBuf {
    ok(&dsen(&["gen-data", "--out", s(&dir.join("data")), "--n", "3", "--size", "16", "--seed", "4"]));
    let cfg = dir.join("run.cfg");
    fs::write(&cfg, format!("manifest = data/manifest.tsv\n{SMALL}{extra}")).unwrap();
    cfg
}

#[test]
fn gen_data_with_no_pairs_writes_an_empty_manifest() {
    let d = tempfile::tempdir().unwrap();
    ok(&dsen(&["gen-data", "--out", s(d.path()), "--n", "0"]));
    let text = fs::read_to_string(d.path().join("manifest.tsv")).unwrap();
    assert!(text.lines().all(|l| l.starts_with('#')));
    assert_eq!(fs::read_dir(d.path()).unwrap().count(), 1);
}

#[test]
fn gen_data_is_reproducible() {
    let d = tempfile::tempdir().unwrap();
    let (a, b) = (d.path().join("a"), d.path().join("b"));
    for out in [&a, &b] {
        ok(&dsen(&["gen-data", "--out", s(out), "--n", "3", "--size", "20", "--seed", "9", "--angles", "-20,0,20"]));
    }
    assert_eq!(tree_hash(&a), tree_hash(&b));
    let c = d.path().join("c");
    ok(&dsen(&["gen-data", "--out", s(&c), "--n", "3", "--size", "20", "--seed", "10", "--angles", "-20,0,20"]));
    assert_ne!(tree_hash(&a), tree_hash(&c));
}

#[test]
fn gen_data_writes_loadable_pairs() {
    let d = tempfile::tempdir().unwrap();
    ok(&dsen(&["gen-data", "--out", s(d.path()), "--n", "8", "--size", "64"]));
    let pngs: Vec<_> = fs::read_dir(d.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "png"))
        .collect();
    assert_eq!(pngs.len(), 16);
    for p in pngs {
        assert_eq!(load_image(&p).unwrap().shape(), &[3, 64, 64]);
    }
    assert!(d.path().join("manifest.tsv").exists());
}

#[test]
fn zero_steps_checkpoint_is_the_initialisation() {
    let d = tempfile::tempdir().unwrap();
    let cfg = setup(d.path(), "seed = 12\nmax_steps = 0\n");
    let ckpt = d.path().join("m.ckpt");
    ok(&dsen(&["train", "--config", s(&cfg), "--out", s(&ckpt)]));
    let run = RunConfig::load(&cfg).unwrap();
    let init = ModelGraph::<f32>::build(run.model, 12).unwrap();
    assert_eq!(fs::read(&ckpt).unwrap(), checkpoint::encode(init.params()));
}

#[test]
fn training_is_byte_reproducible() {
    let d = tempfile::tempdir().unwrap();
    let cfg = setup(d.path(), "max_steps = 3\naugment = c4\n");
    let (a, b) = (d.path().join("a.ckpt"), d.path().join("b.ckpt"));
    for out in [&a, &b] {
        let o = dsen(&["train", "--config", s(&cfg), "--out", s(out)]);
        ok(&o);
        assert!(String::from_utf8_lossy(&o.stdout).contains("final loss"));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(
        fs::read(d.path().join("a.ckpt.log")).unwrap(),
        fs::read(d.path().join("b.ckpt.log")).unwrap()
    );
}

/// Single-stage network whose decoder outputs zero rain.
fn zero_decoder(dir: &Path) -> std::path::PathBuf {
    let run = RunConfig::parse(&format!("preset = DSEN\n{SMALL}"), Path::new("")).unwrap();
    let mut m = ModelGraph::<f32>::build(run.model.clone(), 1).unwrap();
    for name in ["stage1/decoder.weight", "stage1/decoder.bias"] {
        let n = m.params().get(name).unwrap().numel();
        m.params_mut().set_data(name, vec![0.0; n]).unwrap();
    }
    let ckpt = dir.join("zero.ckpt");
    checkpoint::save(m.params(), &ckpt).unwrap();
    fs::write(dir.join("zero.ckpt.cfg"), run.to_text()).unwrap();
    ckpt
}

fn random_png(path: &Path, h: usize, w: usize, seed: u64) {
    let t = random_tensor::<f32>(&[3, h, w], seed);
    let unit = Tensor::from_vec(&[3, h, w], t.data().iter().map(|v| 0.5 * (v + 1.0)).collect()).unwrap();
    save_image(&unit, path).unwrap();
}

#[test]
fn zero_rain_network_returns_the_input() {
    let d = tempfile::tempdir().unwrap();
    let ckpt = zero_decoder(d.path());
    let (input, out, rain) = (d.path().join("in.png"), d.path().join("out.png"), d.path().join("rain.png"));
    random_png(&input, 17, 23, 2);
    ok(&dsen(&["infer", "--ckpt", s(&ckpt), "--in", s(&input), "--out", s(&out), "--rain", s(&rain)]));
    let a = image_bytes(&input);
    assert_eq!(a, image_bytes(&out));
    assert!(image_bytes(&rain).iter().all(|&v| v == 0));
}

fn image_bytes(p: &Path) -> Vec<u8> {
    to_rgb8(&load_image(p).unwrap()).unwrap().into_raw()
}

#[test]
fn inference_keeps_dimensions_and_is_deterministic() {
    let d = tempfile::tempdir().unwrap();
    let cfg = setup(d.path(), "stages = 2\nmax_steps = 1\n");
    let ckpt = d.path().join("m.ckpt");
    ok(&dsen(&["train", "--config", s(&cfg), "--out", s(&ckpt)]));
    for (i, (h, w)) in [(5, 5), (7, 12), (13, 6)].into_iter().enumerate() {
        let input = d.path().join(format!("in{i}.png"));
        random_png(&input, h, w, i as u64);
        let (a, b) = (d.path().join(format!("a{i}.png")), d.path().join(format!("b{i}.png")));
        ok(&dsen(&["infer", "--ckpt", s(&ckpt), "--in", s(&input), "--out", s(&a)]));
        ok(&dsen(&["infer", "--ckpt", s(&ckpt), "--in", s(&input), "--out", s(&b), "--stages", "2"]));
        assert_eq!(load_image(&a).unwrap().shape(), &[3, h, w]);
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    }
    let input = d.path().join("in0.png");
    let more = d.path().join("more.png");
    ok(&dsen(&["infer", "--ckpt", s(&ckpt), "--in", s(&input), "--out", s(&more), "--stages", "4"]));
    assert_eq!(load_image(&more).unwrap().shape(), &[3, 5, 5]);
}

#[test]
fn mismatched_architecture_is_reported_by_name() {
    let d = tempfile::tempdir().unwrap();
    let ckpt = zero_decoder(d.path());
    let cnn = d.path().join("cnn.cfg");
    fs::write(&cnn, "preset = CNN\n").unwrap();
    ok(&dsen(&["gen-data", "--out", s(&d.path().join("data")), "--n", "2", "--size", "16", "--test", "2"]));
    let o = dsen(&[
        "eval", "--ckpt", s(&ckpt), "--config", s(&cnn), "--manifest",
        s(&d.path().join("data/manifest.tsv")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("stage1/"), "{err}");

    let o = dsen(&["infer", "--ckpt", s(&d.path().join("missing.ckpt")), "--in", "x.png", "--out", "y.png"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--config"));
}

#[test]
fn evaluation_prints_both_scores() {
    let d = tempfile::tempdir().unwrap();
    let ckpt = zero_decoder(d.path());
    ok(&dsen(&["gen-data", "--out", s(&d.path().join("data")), "--n", "2", "--size", "16", "--test", "2"]));
    let report = d.path().join("r.tsv");
    let o = dsen(&[
        "eval", "--ckpt", s(&ckpt), "--manifest", s(&d.path().join("data/manifest.tsv")), "--out", s(&report),
    ]);
    ok(&o);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("test 2 images") && text.contains("rainy input"), "{text}");
    let tsv = fs::read_to_string(&report).unwrap();
    assert_eq!(tsv.lines().count(), 5);
    assert!(tsv.lines().last().unwrap().starts_with("MEAN\t"));
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(dsen(&[]).status.code(), Some(1));
    assert_eq!(dsen(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(dsen(&["check", "--suite", "everything"]).status.code(), Some(1));
    assert_eq!(dsen(&["train", "--out", "x"]).status.code(), Some(1));
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("bad.cfg");
    fs::write(&cfg, "stagse = 2\n").unwrap();
    let o = dsen(&["train", "--config", s(&cfg), "--out", s(&d.path().join("m"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown key `stagse`"));
}

#[test]
fn help_documents_every_key_and_default() {
    let o = dsen(&["train", "--help"]);
    ok(&o);
    let text = String::from_utf8_lossy(&o.stdout);
    for (key, default, _) in KEYS {
        let line = text.lines().find(|l| l.trim_start().starts_with(&format!("{key} "))).unwrap_or_else(|| panic!("{key} missing"));
        if !default.is_empty() {
            assert!(line.contains(&format!("[{default}]")), "{line}");
        }
    }
}

#[test]
fn params_suite_reports_both_counts() {
    let o = dsen(&["check", "--suite", "params"]);
    ok(&o);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("50958") && text.contains("52113"));
    assert!(text.lines().all(|l| l.starts_with("PASS")));
}
