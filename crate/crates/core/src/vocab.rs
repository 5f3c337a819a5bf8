//! Token ID to string mapping and safe display of token text.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("cannot read vocabulary {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed vocabulary JSON: {0}")]
    Malformed(String),
    #[error("token {token:?} has invalid id {id}")]
    InvalidId { token: String, id: String },
    #[error("id {id} assigned to both {first:?} and {second:?}")]
    DuplicateId {
        id: u64,
        first: String,
        second: String,
    },
    #[error("vocabulary has {size} entries but the weight matrix only {rows} rows")]
    LargerThanMatrix { size: usize, rows: usize },
}

/// Dense ID-indexed token strings. Duplicate strings are allowed.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Vocabulary {
    entries: Vec<String>,
}

impl Vocabulary {
    pub fn new(entries: Vec<String>) -> Self {
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<&str> {
        self.entries.get(id).map(String::as_str)
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    /// Display text for `id`; see [`render_token`].
    pub fn render(&self, id: usize) -> String {
        render_token(self, id)
    }

    /// Array-form JSON, the inverse of [`parse_vocabulary`] on array input.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.entries).expect("strings always serialise")
    }
}

/// Load a vocabulary exported as either a JSON array of strings (index = ID)
/// or a JSON object of `{"token": id}` pairs.
pub fn load_vocabulary(path: impl AsRef<Path>) -> Result<Vocabulary, VocabError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| VocabError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_vocabulary(&text)
}

/// Parse vocabulary JSON text. Lone surrogate escapes are rejected by the
/// JSON parser.
pub fn parse_vocabulary(text: &str) -> Result<Vocabulary, VocabError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| VocabError::Malformed(e.to_string()))?;
    match value {
        serde_json::Value::Array(items) => items
            .into_iter()
            .enumerate()
            .map(|(i, v)| match v {
                serde_json::Value::String(s) => Ok(s),
                other => Err(VocabError::Malformed(format!(
                    "entry {i} is {other}, expected a string"
                ))),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Vocabulary::new),
        serde_json::Value::Object(map) => {
            let mut pairs = Vec::with_capacity(map.len());
            for (token, id) in map {
                let Some(id_num) = id.as_u64() else {
                    return Err(VocabError::InvalidId {
                        token,
                        id: id.to_string(),
                    });
                };
                pairs.push((id_num, token));
            }
            pairs.sort();
            if let Some(w) = pairs.windows(2).find(|w| w[0].0 == w[1].0) {
                return Err(VocabError::DuplicateId {
                    id: w[0].0,
                    first: w[0].1.clone(),
                    second: w[1].1.clone(),
                });
            }
            let size = pairs.last().map_or(0, |(id, _)| *id as usize + 1);
            let mut entries = vec![String::new(); size];
            for (id, token) in pairs {
                entries[id as usize] = token;
            }
            Ok(Vocabulary::new(entries))
        }
        _ => Err(VocabError::Malformed(
            "expected a JSON array or object".into(),
        )),
    }
}

const OPEN: char = '\u{27E8}';
const CLOSE: char = '\u{27E9}';

fn needs_escape(c: char) -> bool {
    c.is_control() || c == '\u{FFFD}' || c == OPEN || c == CLOSE
}

/// Printable form of a token string.
///
/// Control characters (C0, DEL, C1), U+FFFD and the bracket characters used
/// by the escape itself become `⟨U+XXXX⟩`; the empty string becomes
/// `⟨empty⟩`. Everything else, including subword space markers and
/// historical glyphs, passes through verbatim.
pub fn escape_token(s: &str) -> String {
    if s.is_empty() {
        return format!("{OPEN}empty{CLOSE}");
    }
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        if needs_escape(c) {
            let _ = write!(out, "{OPEN}U+{:04X}{CLOSE}", c as u32);
        } else {
            out.push(c);
        }
    }
    out
}

/// Display text for token `id`. IDs past the end of the vocabulary render as
/// `<unmapped:ID>`.
pub fn render_token(vocab: &Vocabulary, id: usize) -> String {
    match vocab.get(id) {
        Some(s) => escape_token(s),
        None => format!("<unmapped:{id}>"),
    }
}
