//! Instrumented access to training data. Every fitting step reads texts and
//! labels through an [`Audit`], which records the record ids it handed out.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use tweetsift_core::Dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    /// Fitting step, e.g. `tfidf_fit` or `pretrain`.
    pub stage: String,
    /// `text` or `label`.
    pub field: String,
    pub ids: Vec<i64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Audit {
    pub entries: Vec<AuditEntry>,
}

impl Audit {
    fn record(&mut self, stage: &str, field: &str, data: &Dataset) {
        self.entries.push(AuditEntry { stage: stage.into(), field: field.into(), ids: data.ids() });
    }

    pub fn texts<'a>(&mut self, stage: &str, data: &'a Dataset) -> Vec<&'a str> {
        self.record(stage, "text", data);
        data.texts().collect()
    }

    pub fn labels(&mut self, stage: &str, data: &Dataset) -> Vec<u8> {
        self.record(stage, "label", data);
        data.labels()
    }

    pub fn stages(&self) -> Vec<&str> {
        let mut s: Vec<&str> = self.entries.iter().map(|e| e.stage.as_str()).collect();
        s.dedup();
        s
    }

    /// `(stage, field, id)` for every recorded read of an id in `forbidden`.
    pub fn violations(&self, forbidden: &[i64]) -> Vec<(String, String, i64)> {
        let forbidden: HashSet<i64> = forbidden.iter().copied().collect();
        self.entries
            .iter()
            .flat_map(|e| {
                e.ids.iter().filter(|id| forbidden.contains(id)).map(|&id| (e.stage.clone(), e.field.clone(), id))
            })
            .collect()
    }
}
