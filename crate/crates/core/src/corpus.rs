//! Ingestion of the Kaggle disaster-tweet CSV, text normalization,
//! deduplication and stratified train/test splitting.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("malformed row at line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("record {id} has no target label")]
    MissingLabel { id: i64 },
    #[error("invalid split ratio {0}; must lie strictly between 0 and 1")]
    InvalidRatio(f64),
    #[error("class {0} has no records")]
    EmptyClass(u8),
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("csv write failed: {0}")]
    Write(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

/// One data row of the Kaggle file, as found on disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawRecord {
    pub id: i64,
    pub keyword: Option<String>,
    pub location: Option<String>,
    pub text: String,
    pub target: Option<u8>,
}

/// A labelled tweet after normalization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanRecord {
    pub id: i64,
    pub text: String,
    pub label: u8,
}

/// Normalized, deduplicated labelled tweets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    records: Vec<CleanRecord>,
    positive_count: usize,
    negative_count: usize,
}

impl Dataset {
    /// Checks record invariants (non-empty normalized text, binary labels,
    /// unique texts and ids) and tallies the classes.
    pub fn from_records(records: Vec<CleanRecord>) -> Result<Self> {
        let mut texts = HashSet::with_capacity(records.len());
        let mut ids = HashSet::with_capacity(records.len());
        let mut positive_count = 0;
        for r in &records {
            if r.text.is_empty() || !is_normalized(&r.text) {
                return Err(CorpusError::Invalid(format!("record {} has unnormalized text", r.id)));
            }
            match r.label {
                0 => {}
                1 => positive_count += 1,
                other => {
                    return Err(CorpusError::Invalid(format!("record {} has label {other}", r.id)))
                }
            }
            if !texts.insert(r.text.as_str()) {
                return Err(CorpusError::Invalid(format!("duplicate text in record {}", r.id)));
            }
            if !ids.insert(r.id) {
                return Err(CorpusError::Invalid(format!("duplicate id {}", r.id)));
            }
        }
        let negative_count = records.len() - positive_count;
        Ok(Self { records, positive_count, negative_count })
    }

    pub fn records(&self) -> &[CleanRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn positive_count(&self) -> usize {
        self.positive_count
    }

    pub fn negative_count(&self) -> usize {
        self.negative_count
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.text.as_str())
    }

    pub fn labels(&self) -> Vec<u8> {
        self.records.iter().map(|r| r.label).collect()
    }

    pub fn ids(&self) -> Vec<i64> {
        self.records.iter().map(|r| r.id).collect()
    }
}

/// Counters describing what [`build_dataset`] discarded.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub raw_rows: usize,
    pub empty_dropped: usize,
    pub duplicate_dropped: usize,
    /// Dropped duplicates whose label disagreed with the retained record.
    pub label_conflicts: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitPair {
    pub train: Dataset,
    pub test: Dataset,
    pub seed: u64,
    pub ratio: f64,
}

const REQUIRED_COLUMNS: [&str; 4] = ["id", "keyword", "location", "text"];

/// Reads a Kaggle-format CSV (`id,keyword,location,text[,target]`).
pub fn load_csv(path: impl AsRef<Path>) -> Result<Vec<RawRecord>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_csv(&bytes)
}

/// Parses CSV bytes; see [`load_csv`].
pub fn parse_csv(bytes: &[u8]) -> Result<Vec<RawRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(bytes);

    let headers = reader.headers().map_err(|e| malformed(&e, 1))?.clone();
    let column = |name: &str| headers.iter().position(|h| h.trim() == name);
    let mut cols = [0usize; 4];
    for (slot, name) in cols.iter_mut().zip(REQUIRED_COLUMNS) {
        *slot = column(name).ok_or_else(|| {
            CorpusError::Schema(format!("missing required column `{name}`"))
        })?;
    }
    let target_col = column("target");
    let [id_col, keyword_col, location_col, text_col] = cols;

    // Spans are cut between consecutive record starts to detect unbalanced
    // quotes, which the csv reader otherwise swallows up to end of file.
    let mut rows = Vec::new();
    for result in reader.records() {
        let record = result.map_err(|e| malformed(&e, 0))?;
        let pos = record.position().expect("records read from a reader carry positions");
        rows.push((pos.byte() as usize, pos.line(), record));
    }

    let mut out = Vec::with_capacity(rows.len());
    let mut seen = HashMap::with_capacity(rows.len());
    for (i, (start, line, record)) in rows.iter().enumerate() {
        let end = rows.get(i + 1).map_or(bytes.len(), |r| r.0);
        let quotes = bytes[*start..end].iter().filter(|&&b| b == b'"').count();
        if quotes % 2 == 1 {
            return Err(CorpusError::Malformed {
                line: *line,
                message: "unbalanced quote".into(),
            });
        }

        let field = |c: usize| record.get(c).unwrap_or("");
        let optional = |c: usize| Some(field(c).to_string()).filter(|s| !s.is_empty());
        let id: i64 = field(id_col).trim().parse().map_err(|_| CorpusError::Malformed {
            line: *line,
            message: format!("invalid id `{}`", field(id_col)),
        })?;
        if let Some(first) = seen.insert(id, *line) {
            return Err(CorpusError::Malformed {
                line: *line,
                message: format!("id {id} already used at line {first}"),
            });
        }
        let target = match target_col.map(|c| field(c).trim()) {
            None | Some("") => None,
            Some("0") => Some(0),
            Some("1") => Some(1),
            Some(other) => {
                return Err(CorpusError::Malformed {
                    line: *line,
                    message: format!("target must be 0 or 1, found `{other}`"),
                })
            }
        };
        out.push(RawRecord {
            id,
            keyword: optional(keyword_col),
            location: optional(location_col),
            text: field(text_col).to_string(),
            target,
        });
    }
    Ok(out)
}

fn malformed(err: &csv::Error, fallback_line: u64) -> CorpusError {
    let line = match err.kind() {
        csv::ErrorKind::UnequalLengths { pos: Some(p), .. } => p.line(),
        csv::ErrorKind::Utf8 { pos: Some(p), .. } => p.line(),
        _ => err.position().map_or(fallback_line, |p| p.line()),
    };
    CorpusError::Malformed { line, message: err.to_string() }
}

fn decode_entities(s: &str) -> String {
    const ENTITIES: [(&str, char); 5] = [
        ("&amp;", '&'),
        ("&lt;", '<'),
        ("&gt;", '>'),
        ("&quot;", '"'),
        ("&apos;", '\''),
    ];
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    'outer: while let Some(pos) = rest.find('&') {
        out.push_str(&rest[..pos]);
        rest = &rest[pos..];
        for (name, ch) in ENTITIES {
            if let Some(tail) = rest.strip_prefix(name) {
                out.push(ch);
                rest = tail;
                continue 'outer;
            }
        }
        out.push('&');
        rest = &rest[1..];
    }
    out.push_str(rest);
    out
}

/// Cuts a token at the first URL prefix that starts the token or follows a
/// non-alphanumeric character.
fn strip_url(token: &str) -> &str {
    const PREFIXES: [&str; 3] = ["http://", "https://", "www."];
    let bytes = token.as_bytes();
    for (i, _) in token.char_indices() {
        if i > 0 && bytes[i - 1].is_ascii_alphanumeric() {
            continue;
        }
        if PREFIXES.iter().any(|p| token[i..].starts_with(p)) {
            return &token[..i];
        }
    }
    token
}

/// Normalizes a raw tweet: lowercase, drop URLs and @-mentions, keep hashtag
/// words without `#`, turn everything else that is not an ASCII letter or
/// digit into spaces, collapse and trim whitespace.
pub fn clean_text(raw: &str) -> String {
    let lowered = decode_entities(raw).to_ascii_lowercase();
    let mut out = String::with_capacity(lowered.len());
    let mut pending_space = false;
    let emit = |out: &mut String, c: char, pending: &mut bool| {
        if *pending && !out.is_empty() {
            out.push(' ');
        }
        *pending = false;
        out.push(c);
    };
    for token in lowered.split_whitespace() {
        let mut chars = strip_url(token).chars().peekable();
        while let Some(c) = chars.next() {
            match c {
                '@' => {
                    while chars.next_if(|n| n.is_ascii_alphanumeric() || *n == '_').is_some() {}
                    pending_space = true;
                }
                '#' => {}
                c if c.is_ascii_alphanumeric() => emit(&mut out, c, &mut pending_space),
                _ => pending_space = true,
            }
        }
        pending_space = true;
    }
    out
}

fn is_normalized(text: &str) -> bool {
    !text.starts_with(' ')
        && !text.ends_with(' ')
        && !text.contains("  ")
        && text.bytes().all(|b| b == b' ' || b.is_ascii_lowercase() || b.is_ascii_digit())
}

/// Cleans, drops empty texts, and deduplicates on cleaned text keeping the
/// first occurrence in file order.
pub fn build_dataset(records: &[RawRecord]) -> Result<Dataset> {
    build_dataset_with_stats(records).map(|(d, _)| d)
}

pub fn build_dataset_with_stats(records: &[RawRecord]) -> Result<(Dataset, IngestStats)> {
    let mut stats = IngestStats { raw_rows: records.len(), ..Default::default() };
    let mut first_label: HashMap<String, u8> = HashMap::with_capacity(records.len());
    let mut clean = Vec::with_capacity(records.len());
    for raw in records {
        let label = raw.target.ok_or(CorpusError::MissingLabel { id: raw.id })?;
        let text = clean_text(&raw.text);
        if text.is_empty() {
            stats.empty_dropped += 1;
            continue;
        }
        if let Some(&kept) = first_label.get(&text) {
            stats.duplicate_dropped += 1;
            if kept != label {
                stats.label_conflicts += 1;
            }
            continue;
        }
        first_label.insert(text.clone(), label);
        clean.push(CleanRecord { id: raw.id, text, label });
    }
    Ok((Dataset::from_records(clean)?, stats))
}

/// Round-half-up of `count * ratio`; the epsilon absorbs products such as
/// `5 * 0.7 = 3.4999999999999996`.
pub fn stratum_train_size(count: usize, ratio: f64) -> usize {
    ((count as f64 * ratio) + 0.5 + 1e-9).floor() as usize
}

/// Per-class shuffle with a generator derived from `seed`, first
/// `round(count * ratio)` of each class to train. Both sides keep dataset
/// order.
pub fn stratified_split(data: &Dataset, ratio: f64, seed: u64) -> Result<SplitPair> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(CorpusError::InvalidRatio(ratio));
    }
    let mut in_train = vec![false; data.len()];
    let mut rng = seed::stream(seed, "split");
    for class in [0u8, 1] {
        let mut members: Vec<usize> = (0..data.len())
            .filter(|&i| data.records[i].label == class)
            .collect();
        if members.is_empty() {
            return Err(CorpusError::EmptyClass(class));
        }
        members.shuffle(&mut rng);
        let n_train = stratum_train_size(members.len(), ratio);
        for &i in &members[..n_train] {
            in_train[i] = true;
        }
    }
    let (train, test): (Vec<_>, Vec<_>) = data
        .records
        .iter()
        .cloned()
        .zip(in_train)
        .partition(|(_, t)| *t);
    let strip = |v: Vec<(CleanRecord, bool)>| v.into_iter().map(|(r, _)| r).collect::<Vec<_>>();
    Ok(SplitPair {
        train: Dataset::from_records(strip(train))?,
        test: Dataset::from_records(strip(test))?,
        seed,
        ratio,
    })
}

/// Writes the canonical audit dump `id,text,label`.
pub fn write_dataset_csv<W: Write>(data: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["id", "text", "label"])?;
    for r in &data.records {
        w.write_record([r.id.to_string(), r.text.clone(), r.label.to_string()])?;
    }
    w.flush().map_err(|e| CorpusError::Write(e.into()))?;
    Ok(())
}
