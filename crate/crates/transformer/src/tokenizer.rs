//! Word-level vocabulary with four fixed specials.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use tweetsift_core::features::tokenize;

use crate::{Result, TransformerError};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const MASK: usize = 3;
pub const SPECIALS: [&str; 4] = ["[PAD]", "[UNK]", "[CLS]", "[MASK]"];

#[derive(Debug, Clone, PartialEq)]
pub struct Encoding {
    pub ids: Vec<usize>,
    /// 1 for real positions, 0 for padding.
    pub mask: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WordTokenizer {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    max_len: usize,
}

impl WordTokenizer {
    /// Keeps the `vocab_size - 4` most frequent words of `texts`; ties go to
    /// the lexicographically smaller word.
    pub fn train<'a>(texts: impl IntoIterator<Item = &'a str>, vocab_size: usize, max_len: usize) -> Result<Self> {
        if vocab_size <= SPECIALS.len() {
            return Err(TransformerError::Config(format!("vocab_size must exceed 4, got {vocab_size}")));
        }
        if max_len == 0 {
            return Err(TransformerError::Config("max_len must be positive".into()));
        }
        let mut freq: HashMap<String, u64> = HashMap::new();
        for text in texts {
            for tok in tokenize(text).0 {
                *freq.entry(tok).or_default() += 1;
            }
        }
        let mut words: Vec<(String, u64)> = freq.into_iter().collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        words.truncate(vocab_size - SPECIALS.len());
        let tokens = SPECIALS.iter().map(|s| s.to_string()).chain(words.into_iter().map(|(w, _)| w)).collect();
        Ok(Self::from_tokens(tokens, max_len))
    }

    fn from_tokens(tokens: Vec<String>, max_len: usize) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index, max_len }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    /// `[CLS]` followed by word ids, truncated to `max_len`.
    pub fn encode(&self, text: &str) -> Encoding {
        let mut ids = Vec::with_capacity(self.max_len);
        ids.push(CLS);
        ids.extend(tokenize(text).0.iter().take(self.max_len - 1).map(|t| self.id(t)));
        let mask = vec![1; ids.len()];
        Encoding { ids, mask }
    }

    /// [`encode`](Self::encode), right-padded with `[PAD]` to `len`.
    pub fn encode_padded(&self, text: &str, len: usize) -> Encoding {
        let mut e = self.encode(text);
        e.ids.truncate(len);
        e.mask.truncate(len);
        e.ids.resize(len, PAD);
        e.mask.resize(len, 0);
        e
    }

    /// Fraction of word positions (excluding `[CLS]`) that map to `[UNK]`.
    pub fn unk_rate<'a>(&self, texts: impl IntoIterator<Item = &'a str>) -> f64 {
        let (mut unk, mut total) = (0usize, 0usize);
        for t in texts {
            let e = self.encode(t);
            total += e.ids.len() - 1;
            unk += e.ids[1..].iter().filter(|&&i| i == UNK).count();
        }
        if total == 0 {
            0.0
        } else {
            unk as f64 / total as f64
        }
    }

    /// One `token<TAB>id` line per entry, in id order.
    pub fn to_vocab_file(&self) -> String {
        let mut out = String::new();
        for (i, t) in self.tokens.iter().enumerate() {
            let _ = writeln!(out, "{t}\t{i}");
        }
        out
    }

    pub fn from_vocab_file(text: &str, max_len: usize) -> Result<Self> {
        let mut tokens = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let bad = || TransformerError::Tokenizer(format!("vocab line {}: `{line}`", n + 1));
            let (tok, id) = line.rsplit_once('\t').ok_or_else(bad)?;
            if id.parse::<usize>().map_err(|_| bad())? != n || tok.is_empty() {
                return Err(bad());
            }
            tokens.push(tok.to_string());
        }
        if tokens.len() < SPECIALS.len() || tokens[..4] != SPECIALS {
            return Err(TransformerError::Tokenizer("vocab must start with [PAD] [UNK] [CLS] [MASK]".into()));
        }
        let t = Self::from_tokens(tokens, max_len);
        if t.index.len() != t.tokens.len() {
            return Err(TransformerError::Tokenizer("duplicate vocab entry".into()));
        }
        Ok(t)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(std::fs::write(path, self.to_vocab_file())?)
    }

    pub fn load(path: impl AsRef<Path>, max_len: usize) -> Result<Self> {
        Self::from_vocab_file(&std::fs::read_to_string(path)?, max_len)
    }
}
