//! Partial facts: token sequences built from the parts of a triple that are
//! known at evaluation time, and their mapping to integer token ids.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::store::{EntityId, KgStore, Triple};

pub const PAD_ID: u32 = 0;
pub const OOV_ID: u32 = 1;
const RESERVED: u32 = 2;

pub const DEFAULT_MAX_SEQ_LEN: usize = 32;
pub const DEFAULT_MAX_SEQ_LEN_WITH_DESCRIPTIONS: usize = 128;
pub const DEFAULT_MAX_DESC_TOKENS: usize = 24;

/// Which parts of a triple a partial fact carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum PfKind {
    /// head + tail
    Ht,
    /// relation + tail
    Rt,
    /// head + relation + tail
    Hrt,
}

impl fmt::Display for PfKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PfKind::Ht => "HT",
            PfKind::Rt => "RT",
            PfKind::Hrt => "HRT",
        })
    }
}

impl FromStr for PfKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "HT" => Ok(PfKind::Ht),
            "RT" => Ok(PfKind::Rt),
            "HRT" => Ok(PfKind::Hrt),
            _ => Err(Error::InvalidConfig(format!("unknown partial-fact kind `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartialFact {
    pub kind: PfKind,
    pub tokens: Vec<String>,
    pub source: Triple,
}

impl PartialFact {
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TextOptions {
    pub use_descriptions: bool,
    pub max_desc_tokens: usize,
    pub max_seq_len: usize,
}

impl Default for TextOptions {
    fn default() -> Self {
        Self {
            use_descriptions: false,
            max_desc_tokens: DEFAULT_MAX_DESC_TOKENS,
            max_seq_len: DEFAULT_MAX_SEQ_LEN,
        }
    }
}

impl TextOptions {
    pub fn with_descriptions() -> Self {
        Self {
            use_descriptions: true,
            max_desc_tokens: DEFAULT_MAX_DESC_TOKENS,
            max_seq_len: DEFAULT_MAX_SEQ_LEN_WITH_DESCRIPTIONS,
        }
    }
}

/// Splits a label into word tokens on whitespace, `_` and `/`.
///
/// A label made only of separators yields itself as a single token so that
/// no part of a triple ever disappears.
pub fn tokenize_label(label: &str) -> Vec<String> {
    let tokens: Vec<String> = label
        .split(|c: char| c.is_whitespace() || c == '_' || c == '/')
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect();
    if tokens.is_empty() {
        vec![label.to_string()]
    } else {
        tokens
    }
}

fn push_entity(out: &mut Vec<String>, store: &KgStore, id: EntityId, opts: &TextOptions) {
    out.extend(tokenize_label(store.entity_label(id)));
    if opts.use_descriptions {
        if let Some(desc) = store.description(id) {
            out.extend(
                desc.split_whitespace()
                    .take(opts.max_desc_tokens)
                    .map(str::to_string),
            );
        }
    }
}

pub fn make_partial_fact(triple: Triple, kind: PfKind, store: &KgStore, opts: &TextOptions) -> PartialFact {
    let mut tokens = Vec::new();
    if matches!(kind, PfKind::Ht | PfKind::Hrt) {
        push_entity(&mut tokens, store, triple.head, opts);
    }
    if matches!(kind, PfKind::Rt | PfKind::Hrt) {
        tokens.extend(tokenize_label(store.relation_label(triple.relation)));
    }
    push_entity(&mut tokens, store, triple.tail, opts);
    PartialFact {
        kind,
        tokens,
        source: triple,
    }
}

/// Token ↔ id mapping with reserved PAD (0) and OOV (1) ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenVocab {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl TokenVocab {
    /// Collects every token of the training facts' labels (and descriptions
    /// when enabled), in first-seen order.
    pub fn from_train(store: &KgStore, opts: &TextOptions) -> Self {
        let mut vocab = Self::default();
        for t in store.train() {
            let pf = make_partial_fact(*t, PfKind::Hrt, store, opts);
            for tok in &pf.tokens {
                vocab.insert(tok);
            }
        }
        vocab
    }

    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut vocab = Self::default();
        for t in tokens {
            vocab.insert(t.as_ref());
        }
        vocab
    }

    fn insert(&mut self, token: &str) {
        if !self.ids.contains_key(token) {
            let id = self.tokens.len() as u32 + RESERVED;
            self.tokens.push(token.to_string());
            self.ids.insert(token.to_string(), id);
        }
    }

    /// Total id range including the reserved ids.
    pub fn size(&self) -> usize {
        self.tokens.len() + RESERVED as usize
    }

    pub fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(OOV_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        match id {
            PAD_ID => Some("<pad>"),
            OOV_ID => Some("<oov>"),
            _ => self.tokens.get((id - RESERVED) as usize).map(String::as_str),
        }
    }

    /// Maps tokens to ids, truncating to `max_seq_len`.
    pub fn encode(&self, pf: &PartialFact, max_seq_len: usize) -> Result<Vec<u32>> {
        if pf.tokens.is_empty() {
            return Err(Error::EmptySequence);
        }
        Ok(pf.tokens.iter().take(max_seq_len).map(|t| self.id(t)).collect())
    }

    /// One token per line; line `i` holds id `i + 2`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for t in &self.tokens {
            writeln!(w, "{t}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut vocab = Self::default();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if vocab.ids.contains_key(&line) {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    message: format!("duplicate token `{line}`"),
                });
            }
            vocab.insert(&line);
        }
        Ok(vocab)
    }
}
