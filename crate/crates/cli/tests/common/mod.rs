#![allow(dead_code)]

use std::path::{Path, PathBuf};

pub const SMALL_MODEL: &str = r#"
epochs = 3
batch_size = 8
seed = 4

[model]
d_embed = 16
d_hidden = 32
n_rounds = 2
gcn_hidden = [32]
object_mask_size = 4
triplet_mask_size = 16
triplet_mask_coarse = 4
"#;

pub struct Pipeline {
    pub dir: tempfile::TempDir,
}

impl Pipeline {
    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn s(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }
}

/// Runs the tool in-process and returns (exit code, stdout).
pub fn sgir(args: &[&str]) -> (i32, String) {
    let mut out = Vec::new();
    let mut argv = vec!["sgir"];
    argv.extend_from_slice(args);
    let code = sgir_cli::run_with(argv, &mut out);
    (code, String::from_utf8(out).unwrap())
}

fn ok(args: &[&str]) -> String {
    let (code, out) = sgir(args);
    assert_eq!(code, 0, "sgir {args:?} failed");
    out
}

/// synth -> train -> embed with a small model in `dir`.
pub fn run_pipeline(dir: &Path, scenes: usize) {
    let p = |n: &str| dir.join(n).to_string_lossy().into_owned();
    std::fs::write(dir.join("train.toml"), SMALL_MODEL).unwrap();
    let scenes = scenes.to_string();
    ok(&["synth", "--scenes", &scenes, "--seed", "11", "--classes", "12", "--out", &p("corpus.jsonl"), "--vocab", &p("vocab.json")]);
    ok(&[
        "train", "--corpus", &p("corpus.jsonl"), "--vocab", &p("vocab.json"), "--config", &p("train.toml"),
        "--out", &p("model.ckpt"), "--report", &p("report.json"),
    ]);
    ok(&["embed", "--checkpoint", &p("model.ckpt"), "--corpus", &p("corpus.jsonl"), "--vocab", &p("vocab.json"), "--out", &p("db.sgdb")]);
}

pub fn pipeline(scenes: usize) -> Pipeline {
    let dir = tempfile::tempdir().unwrap();
    run_pipeline(dir.path(), scenes);
    Pipeline { dir }
}
