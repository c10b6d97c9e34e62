use kpchange::cloud::ply::{load_ply, save_ply, PlyFormat};
use kpchange::{EpochTag, PointCloud};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use tempfile::TempDir;

const TINY: &str = r#"
seed = 7

[data]
n_tiles = 3
extent = [40.0, 40.0]

[features]
inputs = ["Stability"]

[architecture]
widths = [8, 16]
dl0 = 1.5
max_neighbors = 16

[training]
batch_size = 2
pairs_per_epoch = 4
val_pairs = 2
epochs = 2
cylinder_radius = 10.0
"#;

fn kpchange(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kpchange")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.toml");
    fs::write(&path, TINY).unwrap();
    path
}

fn gen(dir: &Path, name: &str) -> PathBuf {
    let cfg = tiny_config(dir);
    let out = dir.join(name);
    let o = kpchange(&["gen-data", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn gen_data_writes_manifests_and_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let a = gen(tmp.path(), "a");
    let b = gen(tmp.path(), "b");
    for split in ["train", "val", "test"] {
        assert!(a.join(split).join("manifest.json").is_file());
    }
    assert!(a.join("VERSION").is_file() && a.join("config.toml").is_file());
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    for tile in manifest["tiles"].as_array().unwrap() {
        for key in ["pc1", "pc2"] {
            let rel = tile[key].as_str().unwrap();
            assert_eq!(fs::read(a.join(rel)).unwrap(), fs::read(b.join(rel)).unwrap(), "{rel}");
        }
    }
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = TempDir::new().unwrap();
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "seed = 1\n[data]\nratios = { train = 0.7, val = 0.2, test = 0.2 }\n").unwrap();
    let out = tmp.path().join("o");
    let o = kpchange(&["gen-data", "--config", s(&bad), "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(!String::from_utf8_lossy(&o.stderr).is_empty());

    fs::write(&bad, "seed = 1\nbogus = 3\n").unwrap();
    assert_eq!(code(&kpchange(&["gen-data", "--config", s(&bad), "--out", s(&out)])), 2);
    assert_eq!(code(&kpchange(&["gen-data", "--out", s(&out)])), 2, "seed is mandatory");
    assert_eq!(code(&kpchange(&["gradcheck", "--arch", "resnet"])), 2);
    assert_eq!(code(&kpchange(&["no-such-command"])), 2);
    let missing = tmp.path().join("missing.ply");
    assert_eq!(code(&kpchange(&["features", "--pc1", s(&missing), "--pc2", s(&missing), "--out", s(&out)])), 2);
}

#[test]
fn non_empty_output_needs_force() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_config(tmp.path());
    let out = tmp.path().join("o");
    fs::create_dir_all(&out).unwrap();
    fs::write(out.join("keep.txt"), "x").unwrap();
    assert_eq!(code(&kpchange(&["gen-data", "--config", s(&cfg), "--out", s(&out)])), 2);
    assert_eq!(code(&kpchange(&["gen-data", "--config", s(&cfg), "--out", s(&out), "--force"])), 0);
}

fn plane(epoch: EpochTag) -> PointCloud {
    let mut pts = Vec::new();
    for i in -15..=15 {
        for j in -15..=15 {
            pts.push([i as f64, j as f64, 0.0]);
        }
    }
    PointCloud::new(pts, epoch)
}

#[test]
fn features_on_identical_planes_give_full_stability() {
    let tmp = TempDir::new().unwrap();
    let (p1, p2) = (tmp.path().join("p1.ply"), tmp.path().join("p2.ply"));
    save_ply(&plane(EpochTag::Pc1), &p1, PlyFormat::Ascii).unwrap();
    save_ply(&plane(EpochTag::Pc2), &p2, PlyFormat::Ascii).unwrap();
    let out = tmp.path().join("f");
    let o = kpchange(&["features", "--pc1", s(&p1), "--pc2", s(&p2), "--seed", "0", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let c = load_ply(out.join("pc2.ply")).unwrap();
    let f = c.features.unwrap();
    assert_eq!(f.channels, 10);
    for (i, p) in c.points.iter().enumerate() {
        if p[0].abs() <= 8.0 && p[1].abs() <= 8.0 {
            let stab = f.row(i)[9];
            assert!((99.0..=100.0).contains(&stab), "{p:?}: {stab}");
        }
    }
}

#[test]
fn gradcheck_one_conv_fusion_passes() {
    let o = kpchange(&["gradcheck", "--arch", "one_conv_fusion"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("end_to_end/one_conv_fusion"));
}

#[test]
fn eval_of_identical_labels_is_perfect() {
    let tmp = TempDir::new().unwrap();
    let n = 70;
    let c = PointCloud::new((0..n).map(|i| [i as f64, 0.0, 0.0]).collect(), EpochTag::Pc2)
        .with_labels((0..n).map(|i| (i % 7) as u8).collect());
    let path = tmp.path().join("t.ply");
    save_ply(&c, &path, PlyFormat::Ascii).unwrap();
    let out = tmp.path().join("e");
    let o = kpchange(&["eval", "--pred", s(&path), "--truth", s(&path), "--out", s(&out)]);
    assert_eq!(code(&o), 0);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(report["miou_ch"].as_f64(), Some(1.0));
    assert!(out.join("VERSION").is_file());
}

#[test]
fn train_then_infer_round_trip_in_strict_mode() {
    let tmp = TempDir::new().unwrap();
    let data = gen(tmp.path(), "data");
    let cfg = tiny_config(tmp.path());
    let run = |name: &str| {
        let out = tmp.path().join(name);
        let o = kpchange(&["--strict", "train", "--config", s(&cfg), "--data", s(&data), "--arch", "encoder_fusion", "--out", s(&out)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let (a, b) = (run("r1"), run("r2"));
    assert_eq!(fs::read(a.join("best.ckpt")).unwrap(), fs::read(b.join("best.ckpt")).unwrap());
    assert_eq!(fs::read_to_string(a.join("history.jsonl")).unwrap().lines().count(), 2);
    assert!(fs::read_to_string(a.join("config.toml")).unwrap().contains("encoder_fusion"));

    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(data.join("manifest.json")).unwrap()).unwrap();
    let tile = &manifest["tiles"][0];
    let (pc1, pc2) = (data.join(tile["pc1"].as_str().unwrap()), data.join(tile["pc2"].as_str().unwrap()));
    let pred_dir = tmp.path().join("pred");
    let o = kpchange(&["infer", "--checkpoint", s(&a.join("best.ckpt")), "--pc1", s(&pc1), "--pc2", s(&pc2), "--out", s(&pred_dir)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let pred = load_ply(pred_dir.join("pred.ply")).unwrap();
    assert_eq!(pred.len(), load_ply(&pc2).unwrap().len());
    let o = kpchange(&["eval", "--pred", s(&pred_dir.join("pred.ply")), "--truth", s(&pc2)]);
    assert_eq!(code(&o), 0);
}
