//! Shared evaluation: confusion matrix, accuracy / precision / recall / F1,
//! macro averages, ROC curve and AUC, report serialization, and the
//! model comparison table.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {labels} labels vs {other} predictions/scores")]
    LengthMismatch { labels: usize, other: usize },
    #[error("nothing to evaluate")]
    Empty,
    #[error("value {0} is not a binary label")]
    NotBinary(u8),
    #[error("ROC-AUC needs both classes among the labels")]
    SingleClass,
    #[error("score at position {0} is not finite")]
    NonFiniteScore(usize),
    #[error("report does not match schema at {path}: {message}")]
    Schema { path: String, message: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Counts with label 1 as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// The same matrix seen with class 0 as the positive class.
    pub fn swapped(&self) -> Self {
        Self { tp: self.tn, tn: self.tp, fp: self.fn_, fn_: self.fp }
    }
}

fn check_binary(values: &[u8]) -> Result<()> {
    match values.iter().find(|&&v| v > 1) {
        Some(&v) => Err(EvalError::NotBinary(v)),
        None => Ok(()),
    }
}

pub fn confusion(labels: &[u8], predictions: &[u8]) -> Result<ConfusionMatrix> {
    if labels.len() != predictions.len() {
        return Err(EvalError::LengthMismatch { labels: labels.len(), other: predictions.len() });
    }
    if labels.is_empty() {
        return Err(EvalError::Empty);
    }
    check_binary(labels)?;
    check_binary(predictions)?;
    let mut cm = ConfusionMatrix::default();
    for (&y, &p) in labels.iter().zip(predictions) {
        match (y, p) {
            (1, 1) => cm.tp += 1,
            (0, 0) => cm.tn += 1,
            (0, 1) => cm.fp += 1,
            _ => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// (TP + TN) / total; 0 for an empty matrix.
pub fn accuracy(cm: &ConfusionMatrix) -> f64 {
    ratio(cm.tp + cm.tn, cm.total())
}

/// TP / (TP + FP), defined as 0 when nothing was predicted positive.
pub fn precision(cm: &ConfusionMatrix) -> f64 {
    ratio(cm.tp, cm.tp + cm.fp)
}

/// TP / (TP + FN), defined as 0 when there are no positives.
pub fn recall(cm: &ConfusionMatrix) -> f64 {
    ratio(cm.tp, cm.tp + cm.fn_)
}

/// Harmonic mean of precision and recall, 0 when both are 0.
pub fn f1(cm: &ConfusionMatrix) -> f64 {
    f1_from(precision(cm), recall(cm))
}

fn f1_from(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf1 {
    pub fn of(cm: &ConfusionMatrix) -> Self {
        Self { precision: precision(cm), recall: recall(cm), f1: f1(cm) }
    }
}

/// Names of the conventions that had to be applied for `cm`.
fn degenerate_flags(cm: &ConfusionMatrix, class: u8) -> Vec<String> {
    let mut flags = Vec::new();
    if cm.tp + cm.fp == 0 {
        flags.push(format!("class{class}.precision_undefined"));
    }
    if cm.tp + cm.fn_ == 0 {
        flags.push(format!("class{class}.recall_undefined"));
    }
    if precision(cm) + recall(cm) == 0.0 {
        flags.push(format!("class{class}.f1_undefined"));
    }
    flags
}

/// Unweighted mean over the two classes of the per-class metrics.
pub fn macro_prf1(labels: &[u8], predictions: &[u8]) -> Result<Prf1> {
    let cm = confusion(labels, predictions)?;
    Ok(macro_of(&cm))
}

fn macro_of(cm: &ConfusionMatrix) -> Prf1 {
    let (pos, neg) = (Prf1::of(cm), Prf1::of(&cm.swapped()));
    Prf1 {
        precision: (pos.precision + neg.precision) / 2.0,
        recall: (pos.recall + neg.recall) / 2.0,
        f1: (pos.f1 + neg.f1) / 2.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// Sweeps thresholds over the distinct scores in descending order; tied
/// scores cross together. The trapezoid area is accumulated in integer
/// units and divided once, so it equals the pairwise statistic
/// `P(s+ > s-) + P(s+ = s-)/2` exactly up to the final division.
pub fn roc_auc(labels: &[u8], scores: &[f64]) -> Result<RocCurve> {
    if labels.len() != scores.len() {
        return Err(EvalError::LengthMismatch { labels: labels.len(), other: scores.len() });
    }
    check_binary(labels)?;
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(EvalError::NonFiniteScore(i));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClass);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut twice_area: u128 = 0;
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        let (tp_prev, fp_prev) = (tp, fp);
        while k < order.len() && scores[order[k]] == s {
            if labels[order[k]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        twice_area += u128::from(fp - fp_prev) * u128::from(tp + tp_prev);
        points.push(RocPoint { fpr: fp as f64 / n_neg as f64, tpr: tp as f64 / n_pos as f64 });
    }
    let auc = twice_area as f64 / (2 * u128::from(n_pos) * u128::from(n_neg)) as f64;
    Ok(RocCurve { points, auc })
}

/// Per-class block of an [`EvalReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassMetrics {
    pub label: u8,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub model: String,
    pub split: String,
    pub n: u64,
    pub threshold: f64,
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub macro_avg: Prf1,
    pub roc_points: Vec<RocPoint>,
    pub auc: f64,
    pub degenerate: Vec<String>,
    pub config: Value,
}

impl EvalReport {
    /// Predictions are `score >= threshold`, the same rule every classifier
    /// uses for `predict`.
    pub fn from_scores(
        model: &str,
        split: &str,
        labels: &[u8],
        scores: &[f64],
        threshold: f64,
        config: Value,
    ) -> Result<Self> {
        let predictions: Vec<u8> = scores.iter().map(|&s| u8::from(s >= threshold)).collect();
        let cm = confusion(labels, &predictions)?;
        let roc = roc_auc(labels, scores)?;
        let class_block = |label: u8, m: &ConfusionMatrix| {
            let p = Prf1::of(m);
            ClassMetrics { label, precision: p.precision, recall: p.recall, f1: p.f1, support: m.tp + m.fn_ }
        };
        let mut degenerate = degenerate_flags(&cm.swapped(), 0);
        degenerate.extend(degenerate_flags(&cm, 1));
        Ok(Self {
            model: model.to_string(),
            split: split.to_string(),
            n: cm.total(),
            threshold,
            confusion: cm,
            accuracy: accuracy(&cm),
            per_class: vec![class_block(0, &cm.swapped()), class_block(1, &cm)],
            macro_avg: macro_of(&cm),
            roc_points: roc.points,
            auc: roc.auc,
            degenerate,
            config,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Validates against the published schema, then deserializes.
    pub fn from_json(s: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(s)?;
        validate_report_json(&value)?;
        Ok(serde_json::from_value(value)?)
    }

    /// Two-column `fpr,tpr` CSV.
    pub fn roc_csv(&self) -> String {
        let mut out = String::from("fpr,tpr\n");
        for p in &self.roc_points {
            let _ = writeln!(out, "{},{}", p.fpr, p.tpr);
        }
        out
    }
}

/// JSON schema for serialized [`EvalReport`]s.
pub const REPORT_SCHEMA: &str = include_str!("../schemas/eval_report.schema.json");

/// Checks `value` against [`REPORT_SCHEMA`] plus the ROC invariants the
/// schema language cannot express (endpoints and monotonicity).
pub fn validate_report_json(value: &Value) -> Result<()> {
    let schema: Value = serde_json::from_str(REPORT_SCHEMA)?;
    schema_check(&schema, value, "$")?;
    let fail = |message: &str| EvalError::Schema { path: "$.roc_points".into(), message: message.into() };
    let pts = value["roc_points"].as_array().ok_or_else(|| fail("not an array"))?;
    let coord = |p: &Value, k: &str| p[k].as_f64().unwrap_or(f64::NAN);
    let (first, last) = (pts.first(), pts.last());
    if first.is_none_or(|p| coord(p, "fpr") != 0.0 || coord(p, "tpr") != 0.0) {
        return Err(fail("must start at (0,0)"));
    }
    if last.is_none_or(|p| coord(p, "fpr") != 1.0 || coord(p, "tpr") != 1.0) {
        return Err(fail("must end at (1,1)"));
    }
    for w in pts.windows(2) {
        if coord(&w[1], "fpr") < coord(&w[0], "fpr") || coord(&w[1], "tpr") < coord(&w[0], "tpr") {
            return Err(fail("fpr and tpr must be non-decreasing"));
        }
    }
    Ok(())
}

/// The subset of JSON Schema used by the published report schema: `type`,
/// `required`, `properties`, `additionalProperties: false`, `items`,
/// `minimum`, `maximum`, `minItems`.
fn schema_check(schema: &Value, value: &Value, path: &str) -> Result<()> {
    let fail = |message: String| EvalError::Schema { path: path.to_string(), message };
    if let Some(ty) = schema.get("type").and_then(Value::as_str) {
        let ok = match ty {
            "object" => value.is_object(),
            "array" => value.is_array(),
            "string" => value.is_string(),
            "boolean" => value.is_boolean(),
            "integer" => value.is_u64() || value.is_i64(),
            "number" => value.is_number(),
            _ => true,
        };
        if !ok {
            return Err(fail(format!("expected {ty}")));
        }
    }
    if let Some(x) = value.as_f64() {
        if let Some(min) = schema.get("minimum").and_then(Value::as_f64) {
            if x < min {
                return Err(fail(format!("{x} below minimum {min}")));
            }
        }
        if let Some(max) = schema.get("maximum").and_then(Value::as_f64) {
            if x > max {
                return Err(fail(format!("{x} above maximum {max}")));
            }
        }
    }
    if let Some(obj) = value.as_object() {
        for key in schema.get("required").and_then(Value::as_array).into_iter().flatten() {
            let key = key.as_str().unwrap_or_default();
            if !obj.contains_key(key) {
                return Err(fail(format!("missing required property `{key}`")));
            }
        }
        let props = schema.get("properties").and_then(Value::as_object);
        let closed = schema.get("additionalProperties") == Some(&Value::Bool(false));
        for (k, v) in obj {
            match props.and_then(|p| p.get(k)) {
                Some(sub) => schema_check(sub, v, &format!("{path}.{k}"))?,
                None if closed => return Err(fail(format!("unexpected property `{k}`"))),
                None => {}
            }
        }
    }
    if let Some(arr) = value.as_array() {
        if let Some(min) = schema.get("minItems").and_then(Value::as_u64) {
            if (arr.len() as u64) < min {
                return Err(fail(format!("fewer than {min} items")));
            }
        }
        if let Some(items) = schema.get("items") {
            for (i, v) in arr.iter().enumerate() {
                schema_check(items, v, &format!("{path}[{i}]"))?;
            }
        }
    }
    Ok(())
}

/// Half-to-even rounding to two decimals for display.
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round_ties_even() / 100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// One row per model with macro-averaged precision, recall and F1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

pub fn compare_report(reports: &[EvalReport]) -> ComparisonTable {
    ComparisonTable {
        rows: reports
            .iter()
            .map(|r| ComparisonRow {
                model: r.model.clone(),
                accuracy: r.accuracy,
                precision: r.macro_avg.precision,
                recall: r.macro_avg.recall,
                f1: r.macro_avg.f1,
            })
            .collect(),
    }
}

impl ComparisonTable {
    /// Machine-readable, full precision.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,accuracy,precision,recall,f1\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{},{}", r.model, r.accuracy, r.precision, r.recall, r.f1);
        }
        out
    }

    /// `model,accuracy` pairs for a bar chart.
    pub fn accuracy_bars_csv(&self) -> String {
        let mut out = String::from("model,accuracy\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{}", r.model, r.accuracy);
        }
        out
    }

    /// Fixed-width text table rounded to two decimals.
    pub fn render(&self) -> String {
        let width = self.rows.iter().map(|r| r.model.len()).max().unwrap_or(0).max(5);
        let mut out = format!(
            "{:<width$}  {:>8}  {:>9}  {:>6}  {:>8}\n",
            "Model", "Accuracy", "Precision", "Recall", "F1-Score"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<width$}  {:>8.2}  {:>9.2}  {:>6.2}  {:>8.2}",
                r.model,
                round2(r.accuracy),
                round2(r.precision),
                round2(r.recall),
                round2(r.f1)
            );
        }
        out
    }
}
