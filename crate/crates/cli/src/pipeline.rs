//! The five commands as library functions. Every artifact lands under the
//! configured output directory:
//!
//! ```text
//! data/      clean.csv, train_ids.txt, test_ids.txt, summary.json
//! models/    <name>/...   one directory per trained model
//! reports/   <name>.<split>.json and <name>.<split>.roc.csv
//! roc/       <name>.csv
//! compare/   table.csv, table.txt, accuracy.csv
//! ```

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tweetsift_classical::{fit, Classifier, ModelArtifact, ModelKind};
use tweetsift_core::corpus::{build_dataset_with_stats, load_csv, stratified_split, write_dataset_csv, IngestStats};
use tweetsift_core::eval::{compare_report, ComparisonTable};
use tweetsift_core::features::{fit_tfidf, tokenize, TokenSeq};
use tweetsift_core::{seed, CleanRecord, Dataset, EvalReport, SplitPair, TfIdfModel};
use tweetsift_transformer::{
    distill, finetune_classifier, predict_all, pretrain_mlm, EncoderModel, Preset, TrainLog, WordTokenizer,
};

use crate::audit::Audit;
use crate::config::{ModelName, RunConfig};
use crate::manifest::{sha256_hex, Manifest};
use crate::{io_err, CliError, Result};

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    std::fs::write(path, contents).map_err(io_err(path))
}

fn read_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(io_err(path))
}

fn data_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out.join("data")
}

pub fn model_dir(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.out.join("models").join(name)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Train,
    Test,
}

impl Side {
    pub fn name(self) -> &'static str {
        match self {
            Side::Train => "train",
            Side::Test => "test",
        }
    }

    fn pick(self, split: &SplitPair) -> &Dataset {
        match self {
            Side::Train => &split.train,
            Side::Test => &split.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub records: usize,
    pub class0: usize,
    pub class1: usize,
}

impl ClassCounts {
    fn of(d: &Dataset) -> Self {
        Self { records: d.len(), class0: d.negative_count(), class1: d.positive_count() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepareSummary {
    pub source_sha256: String,
    pub seed: u64,
    pub split_ratio: f64,
    pub ingest: IngestStats,
    pub dataset: ClassCounts,
    pub class0_fraction: f64,
    pub train: ClassCounts,
    pub test: ClassCounts,
}

fn id_lines(d: &Dataset) -> String {
    d.ids().iter().map(|id| format!("{id}\n")).collect()
}

/// Cleans, deduplicates and splits the dataset file, then writes the
/// cleaned dump, both id lists and a summary.
pub fn prepare(cfg: &RunConfig) -> Result<(SplitPair, PrepareSummary)> {
    cfg.validate()?;
    cfg.validate_data_path()?;
    let seed = cfg.seed()?;
    let bytes = std::fs::read(&cfg.data.path).map_err(io_err(&cfg.data.path))?;
    let raw = load_csv(&cfg.data.path)?;
    let (data, ingest) = build_dataset_with_stats(&raw)?;
    let split = stratified_split(&data, cfg.data.split_ratio, seed)?;
    let summary = PrepareSummary {
        source_sha256: sha256_hex(&bytes),
        seed,
        split_ratio: cfg.data.split_ratio,
        ingest,
        dataset: ClassCounts::of(&data),
        class0_fraction: data.negative_count() as f64 / data.len() as f64,
        train: ClassCounts::of(&split.train),
        test: ClassCounts::of(&split.test),
    };
    let dir = data_dir(cfg);
    let mut dump = Vec::new();
    write_dataset_csv(&data, &mut dump)?;
    write(&dir.join("clean.csv"), dump)?;
    write(&dir.join("train_ids.txt"), id_lines(&split.train))?;
    write(&dir.join("test_ids.txt"), id_lines(&split.test))?;
    write(&dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok((split, summary))
}

fn parse_ids(text: &str, path: &Path) -> Result<Vec<i64>> {
    text.lines()
        .map(|l| {
            l.parse().map_err(|_| CliError::NotPrepared {
                dir: path.to_path_buf(),
                reason: format!("bad id line `{l}` in {}", path.display()),
            })
        })
        .collect()
}

/// Reads the split written by [`prepare`]; refuses one made with another
/// seed or ratio.
pub fn load_prepared(cfg: &RunConfig) -> Result<SplitPair> {
    let dir = data_dir(cfg);
    let stale = |reason: String| CliError::NotPrepared { dir: dir.clone(), reason };
    let summary_path = dir.join("summary.json");
    if !summary_path.is_file() {
        return Err(stale("run `tweetsift prepare` first".into()));
    }
    let summary: PrepareSummary = serde_json::from_str(&read_string(&summary_path)?)?;
    let seed = cfg.seed()?;
    if summary.seed != seed || summary.split_ratio != cfg.data.split_ratio {
        return Err(stale(format!(
            "prepared with seed {} and ratio {}, config has seed {seed} and ratio {}",
            summary.seed, summary.split_ratio, cfg.data.split_ratio
        )));
    }
    let clean = dir.join("clean.csv");
    let mut reader = csv::Reader::from_path(&clean).map_err(|e| stale(e.to_string()))?;
    let mut records = Vec::new();
    for row in reader.deserialize::<(i64, String, u8)>() {
        let (id, text, label) = row.map_err(|e| stale(e.to_string()))?;
        records.push(CleanRecord { id, text, label });
    }
    let train_path = dir.join("train_ids.txt");
    let train_ids: HashSet<i64> = parse_ids(&read_string(&train_path)?, &train_path)?.into_iter().collect();
    let test_path = dir.join("test_ids.txt");
    let test_ids: HashSet<i64> = parse_ids(&read_string(&test_path)?, &test_path)?.into_iter().collect();
    let (train, rest): (Vec<_>, Vec<_>) = records.into_iter().partition(|r| train_ids.contains(&r.id));
    if rest.iter().any(|r| !test_ids.contains(&r.id)) || train.len() != train_ids.len() {
        return Err(stale("id lists do not partition clean.csv".into()));
    }
    Ok(SplitPair {
        train: Dataset::from_records(train)?,
        test: Dataset::from_records(rest)?,
        seed,
        ratio: cfg.data.split_ratio,
    })
}

/// Loads the prepared split, preparing it first when absent.
pub fn ensure_prepared(cfg: &RunConfig) -> Result<SplitPair> {
    if data_dir(cfg).join("summary.json").is_file() {
        load_prepared(cfg)
    } else {
        Ok(prepare(cfg)?.0)
    }
}

fn model_seed(cfg: &RunConfig, name: &str) -> Result<u64> {
    Ok(seed::derive(cfg.seed()?, &format!("model/{name}")))
}

fn trace_csv(trace: &[f64]) -> String {
    let mut out = String::from("step,loss\n");
    for (i, l) in trace.iter().enumerate() {
        let _ = writeln!(out, "{i},{l}");
    }
    out
}

fn write_audit(dir: &Path, audit: &Audit) -> Result<()> {
    write(&dir.join("audit.json"), serde_json::to_string_pretty(audit)? + "\n")
}

fn train_classical(cfg: &RunConfig, kind: ModelKind, train: &Dataset) -> Result<Audit> {
    let mut audit = Audit::default();
    let docs: Vec<TokenSeq> = audit.texts("tfidf_fit", train).into_iter().map(tokenize).collect();
    let tfidf = fit_tfidf(&docs, cfg.features.tfidf(kind))?;
    let x = if kind == ModelKind::Nb { tfidf.count_all(&docs) } else { tfidf.transform_all(&docs) };
    let y = audit.labels("model_fit", train);
    let seed = model_seed(cfg, kind.name())?;
    let model = fit(kind, &x, &y, &cfg.classical, seed)?;
    let echo = json!({ "features": tfidf.config, "model": cfg.classical.echo(kind) });
    let artifact = ModelArtifact::new(kind.name(), echo, seed, model);
    let dir = model_dir(cfg, kind.name());
    write(&dir.join("features.json"), tfidf.to_json()?)?;
    write(&dir.join("model.json"), artifact.to_json()?)?;
    write(&dir.join("loss.csv"), trace_csv(artifact.model.loss_trace()))?;
    write_audit(&dir, &audit)?;
    Ok(audit)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerMeta {
    pub name: String,
    pub preset: Preset,
    pub seed: u64,
    pub vocab_size: usize,
    /// Fraction of training-split word positions mapped to `[UNK]`.
    pub train_unk_rate: f64,
    pub parameters: usize,
    pub pretrained: bool,
}

fn write_log(path: &Path, log: &TrainLog) -> Result<()> {
    write(path, log.to_csv())
}

fn load_encoder(dir: &Path) -> Result<(EncoderModel, WordTokenizer)> {
    let model = EncoderModel::load(dir)?;
    let tok = WordTokenizer::load(dir.join("vocab.tsv"), model.config.max_len)?;
    Ok((model, tok))
}

/// Trains `preset` under the model name `name`. The name only chooses the
/// output directory and seed stream, so variants of a preset (for example
/// one with pretraining disabled) can live side by side.
pub fn train_transformer(cfg: &RunConfig, name: &str, preset: &Preset, train: &Dataset) -> Result<Audit> {
    let mut audit = Audit::default();
    let seed = model_seed(cfg, name)?;
    let dir = model_dir(cfg, name);
    let (model, tok, log) = if let Some(teacher_name) = &preset.teacher {
        let tdir = model_dir(cfg, teacher_name);
        if !tdir.join("encoder.json").is_file() {
            return Err(CliError::MissingTeacher { model: name.into(), teacher: teacher_name.clone(), dir: tdir });
        }
        let (teacher, tok) = load_encoder(&tdir)?;
        let dcfg = preset.distill.clone().unwrap_or_default();
        let texts = audit.texts("distill", train);
        let labels = audit.labels("distill", train);
        let (student, log) =
            distill(&teacher, &tok, &texts, &labels, &preset.finetune, &dcfg, seed::derive(seed, "distill"))?;
        (student, tok, log)
    } else {
        let enc = &preset.encoder;
        let tok = WordTokenizer::train(audit.texts("tokenizer", train), enc.vocab_size, enc.max_len)?;
        let config = tweetsift_transformer::EncoderConfig { vocab_size: tok.len(), ..enc.clone() };
        let mut model = EncoderModel::new(config, seed::derive(seed, "init"))?;
        if let Some(pre) = &preset.pretrain {
            let texts = audit.texts("pretrain", train);
            let (m, plog) = pretrain_mlm(model, &tok, &texts, pre, seed::derive(seed, "pretrain"))?;
            write_log(&dir.join("pretrain_log.csv"), &plog)?;
            model = m;
        }
        let texts = audit.texts("finetune", train);
        let labels = audit.labels("finetune", train);
        let (model, log) =
            finetune_classifier(model, &tok, &texts, &labels, &preset.finetune, seed::derive(seed, "finetune"))?;
        (model, tok, log)
    };
    let meta = TransformerMeta {
        name: name.into(),
        preset: preset.clone(),
        seed,
        vocab_size: tok.len(),
        train_unk_rate: tok.unk_rate(train.texts()),
        parameters: model.param_count(),
        pretrained: model.pretrained,
    };
    model.save(&dir)?;
    tok.save(dir.join("vocab.tsv"))?;
    write_log(&dir.join("train_log.csv"), &log)?;
    write(&dir.join("meta.json"), serde_json::to_string_pretty(&meta)? + "\n")?;
    write_audit(&dir, &audit)?;
    Ok(audit)
}

/// Trains `name` on the training side only; the test side never reaches a
/// fitting step.
pub fn train(cfg: &RunConfig, name: &str, split: &SplitPair) -> Result<Audit> {
    cfg.validate()?;
    match ModelName::parse(name)? {
        ModelName::Classical(kind) => train_classical(cfg, kind, &split.train),
        ModelName::Transformer(p) => train_transformer(cfg, p, &cfg.preset(p)?, &split.train),
    }
}

/// A trained model read back from its directory.
pub enum Loaded {
    Classical { artifact: ModelArtifact, features: TfIdfModel },
    Transformer { model: EncoderModel, tokenizer: WordTokenizer, meta: TransformerMeta },
}

impl Loaded {
    pub fn open(cfg: &RunConfig, name: &str) -> Result<Self> {
        let dir = model_dir(cfg, name);
        if dir.join("model.json").is_file() {
            let artifact = ModelArtifact::from_json(&read_string(&dir.join("model.json"))?)?;
            let features = TfIdfModel::from_json(&read_string(&dir.join("features.json"))?)?;
            Ok(Self::Classical { artifact, features })
        } else if dir.join("encoder.json").is_file() {
            let (model, tokenizer) = load_encoder(&dir)?;
            let meta = serde_json::from_str(&read_string(&dir.join("meta.json"))?)?;
            Ok(Self::Transformer { model, tokenizer, meta })
        } else {
            Err(CliError::MissingModel { model: name.into(), dir })
        }
    }

    pub fn scores(&self, texts: &[&str]) -> Result<Vec<f64>> {
        match self {
            Self::Classical { artifact, features } => {
                let docs: Vec<TokenSeq> = texts.iter().map(|t| tokenize(t)).collect();
                let x = if matches!(artifact.model, tweetsift_classical::ClassicalModel::NaiveBayes(_)) {
                    features.count_all(&docs)
                } else {
                    features.transform_all(&docs)
                };
                Ok(x.rows.iter().map(|r| artifact.model.score(r)).collect())
            }
            Self::Transformer { model, tokenizer, .. } => Ok(predict_all(model, tokenizer, texts)?),
        }
    }

    pub fn threshold(&self) -> f64 {
        match self {
            Self::Classical { artifact, .. } => artifact.model.threshold(),
            Self::Transformer { .. } => 0.5,
        }
    }

    fn echo(&self) -> Value {
        match self {
            Self::Classical { artifact, .. } => json!({ "seed": artifact.seed, "config": artifact.config }),
            Self::Transformer { meta, .. } => json!({ "seed": meta.seed, "config": meta.preset }),
        }
    }
}

/// Scores one side of the split and writes the JSON report and ROC CSV.
pub fn evaluate(cfg: &RunConfig, name: &str, split: &SplitPair, side: Side) -> Result<EvalReport> {
    let loaded = Loaded::open(cfg, name)?;
    let data = side.pick(split);
    let texts: Vec<&str> = data.texts().collect();
    let scores = loaded.scores(&texts)?;
    let report = EvalReport::from_scores(name, side.name(), &data.labels(), &scores, loaded.threshold(), loaded.echo())?;
    let dir = cfg.out.join("reports");
    write(&dir.join(format!("{name}.{}.json", side.name())), report.to_json()? + "\n")?;
    write(&dir.join(format!("{name}.{}.roc.csv", side.name())), report.roc_csv())?;
    Ok(report)
}

/// Test-split ROC points for `name` as `roc/<name>.csv`.
pub fn roc(cfg: &RunConfig, name: &str, split: &SplitPair) -> Result<EvalReport> {
    let report = evaluate(cfg, name, split, Side::Test)?;
    write(&cfg.out.join("roc").join(format!("{name}.csv")), report.roc_csv())?;
    Ok(report)
}

fn header_block(cfg: &RunConfig) -> Result<String> {
    let echo = serde_json::to_string(&serde_json::to_value(cfg)?)?;
    Ok(format!("# seed: {}\n# config: {echo}\n", cfg.seed()?))
}

/// Trains and evaluates every model in `compare.models` on one split, in
/// order, and writes the comparison tables.
pub fn compare(cfg: &RunConfig, split: &SplitPair) -> Result<ComparisonTable> {
    cfg.validate()?;
    let mut reports = Vec::new();
    for name in &cfg.compare.models {
        train(cfg, name, split)?;
        reports.push(evaluate(cfg, name, split, Side::Test)?);
    }
    let table = compare_report(&reports);
    let header = header_block(cfg)?;
    let dir = cfg.out.join("compare");
    write(&dir.join("table.csv"), header.clone() + &table.to_csv())?;
    write(&dir.join("table.txt"), header.clone() + &table.render())?;
    write(&dir.join("accuracy.csv"), header + &table.accuracy_bars_csv())?;
    Ok(table)
}

pub fn write_manifest(cfg: &RunConfig) -> Result<Manifest> {
    Manifest::write(&cfg.out)
}
