#![allow(dead_code)]

use std::path::{Path, PathBuf};

use tweetsift_cli::RunConfig;
use tweetsift_core::synthetic::{generate, to_csv, SyntheticConfig};

/// Small encoders and budgets so transformer commands finish in seconds.
pub const TINY_TRANSFORMERS: &str = r#"
[transformer.overrides.bert-toy]
layers = 2
d_model = 16
d_ff = 32
heads = 2
max_len = 24
vocab_size = 600
pretrain_steps = 8
pretrain_batch_size = 8
epochs = 1
batch_size = 16

[transformer.overrides.roberta-toy]
layers = 2
d_model = 16
d_ff = 32
heads = 2
max_len = 24
vocab_size = 600
pretrain_steps = 8
pretrain_batch_size = 8
epochs = 1
batch_size = 16

[transformer.overrides.distil-toy]
layers = 1
epochs = 1
batch_size = 16

[transformer.overrides.deberta-toy]
layers = 2
d_model = 16
d_ff = 32
heads = 2
max_len = 24
vocab_size = 600
rel_window = 4
pretrain_steps = 8
pretrain_batch_size = 8
epochs = 1
batch_size = 16
"#;

/// Fewer trees and stages than the defaults.
pub const QUICK_CLASSICAL: &str = r#"
[classical.rf]
n_trees = 20
[classical.gb]
n_stages = 30
[classical.xgb]
n_stages = 30
"#;

pub fn write_synthetic(path: &Path, rows: usize, seed: u64) {
    let records = generate(&SyntheticConfig { rows, seed, ..Default::default() });
    std::fs::write(path, to_csv(&records, true)).unwrap();
}

pub fn toml_path(p: &Path) -> String {
    p.display().to_string().replace('\\', "/")
}

/// Config text pointing at `data` with output under `out`.
pub fn config_text(data: &Path, out: &Path, extra: &str) -> String {
    format!(
        "seed = 42\nout = \"{}\"\n\n[data]\npath = \"{}\"\nsplit_ratio = 0.8\n{extra}",
        toml_path(out),
        toml_path(data)
    )
}

pub struct Run {
    pub dir: tempfile::TempDir,
    pub cfg: RunConfig,
    pub data: PathBuf,
}

pub fn run_with(rows: usize, extra: &str) -> Run {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("train.csv");
    write_synthetic(&data, rows, 2024);
    let cfg = RunConfig::from_toml(&config_text(&data, &dir.path().join("out"), extra)).unwrap();
    Run { dir, cfg, data }
}
