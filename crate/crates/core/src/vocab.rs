//! Word-level vocabulary with fixed reserved ids, and the encoder input
//! layout `[<z>, <s>, p1…, </s>, p2…, </s>]`.

use std::collections::HashMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const LATENT: usize = 2;
pub const BOS: usize = 3;
pub const EOS: usize = 4;
pub const MAX_PLACEHOLDERS: usize = 120;
pub const NUM_RESERVED: usize = 5 + MAX_PLACEHOLDERS;

const SPECIALS: [&str; 5] = ["<pad>", "<unk>", "<z>", "<s>", "</s>"];

/// `<Ek>` for k in 1..=120.
pub fn placeholder(k: usize) -> String {
    assert!((1..=MAX_PLACEHOLDERS).contains(&k), "placeholder index {k}");
    format!("<E{k}>")
}

/// The k of a `<Ek>` token, if it is one.
pub fn placeholder_index(tok: &str) -> Option<usize> {
    let k: usize = tok.strip_prefix("<E")?.strip_suffix('>')?.parse().ok()?;
    (1..=MAX_PLACEHOLDERS).contains(&k).then_some(k)
}

pub fn is_reserved(tok: &str) -> bool {
    SPECIALS.contains(&tok) || placeholder_index(tok).is_some()
}

/// Whitespace tokenization. Reserved tokens pass through untouched; other
/// tokens are lowercased with surrounding punctuation stripped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|raw| {
            if is_reserved(raw) {
                return Some(raw.to_string());
            }
            let t = raw.trim_matches(|c: char| !c.is_alphanumeric() && c != '<' && c != '>');
            if is_reserved(t) {
                return Some(t.to_string());
            }
            let t = t.to_lowercase();
            (!t.is_empty()).then_some(t)
        })
        .collect()
}

pub fn join(tokens: &[String]) -> String {
    tokens.join(" ")
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    fn reserved_tokens() -> Vec<String> {
        SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain((1..=MAX_PLACEHOLDERS).map(placeholder))
            .collect()
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let reserved = Self::reserved_tokens();
        if tokens.len() < NUM_RESERVED || tokens[..NUM_RESERVED] != reserved[..] {
            return Err(Error::Input(
                "vocabulary must start with the 125 reserved tokens in order".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::Input(format!("vocabulary line {}: bad token {t:?}", i + 1)));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Input(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    /// Reserved tokens first, then corpus tokens seen at least `min_count`
    /// times, most frequent first, ties lexicographic.
    pub fn build<I, S>(corpus: I, min_count: usize) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[String]>,
    {
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut seen_any = false;
        for seq in corpus {
            seen_any = true;
            for tok in seq.as_ref() {
                if !is_reserved(tok) {
                    *counts.entry(tok.clone()).or_default() += 1;
                }
            }
        }
        if !seen_any {
            return Err(Error::Config("cannot build a vocabulary from an empty corpus".into()));
        }
        let mut kept: Vec<(String, usize)> =
            counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut tokens = Self::reserved_tokens();
        tokens.extend(kept.into_iter().map(|(t, _)| t));
        Self::from_tokens(tokens)
    }

    /// Vocabulary holding only the reserved tokens.
    pub fn reserved_only() -> Self {
        Self::from_tokens(Self::reserved_tokens()).unwrap()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, tok: &str) -> usize {
        self.index.get(tok).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, tok: &str) -> bool {
        self.index.contains_key(tok)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map(String::as_str).unwrap_or("<unk>")
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }

    /// One token per line; line number (from 0) is the id.
    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// Hex SHA-256 of the text form; checkpoints record it.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Encoder input for a premise pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedInput {
    ids: Vec<usize>,
    separator: usize,
}

impl EncodedInput {
    /// Checks the positional layout before accepting `ids`.
    pub fn new(ids: Vec<usize>) -> Result<Self> {
        let n = ids.len();
        if n < 5 || ids[0] != LATENT || ids[1] != BOS || ids[n - 1] != EOS {
            return Err(Error::Input(
                "encoded input must look like [<z>, <s>, …, </s>, …, </s>]".into(),
            ));
        }
        let internal: Vec<usize> = (2..n - 1).filter(|&i| ids[i] == EOS).collect();
        match internal[..] {
            [sep] if sep > 2 && sep < n - 2 => Ok(EncodedInput { ids, separator: sep }),
            _ => Err(Error::Input(
                "encoded input needs exactly one internal </s> between non-empty premises".into(),
            )),
        }
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn z_position(&self) -> usize {
        0
    }

    /// Positions of the internal and final `</s>`.
    pub fn separators(&self) -> [usize; 2] {
        [self.separator, self.ids.len() - 1]
    }
}

pub fn encode_pair(p1: &[String], p2: &[String], vocab: &Vocabulary) -> Result<EncodedInput> {
    if p1.is_empty() || p2.is_empty() {
        return Err(Error::Input("both premises must be non-empty".into()));
    }
    let mut ids = Vec::with_capacity(p1.len() + p2.len() + 4);
    ids.push(LATENT);
    ids.push(BOS);
    ids.extend(p1.iter().map(|t| vocab.id(t)));
    ids.push(EOS);
    ids.extend(p2.iter().map(|t| vocab.id(t)));
    ids.push(EOS);
    EncodedInput::new(ids)
}

/// Teacher-forcing pair for a conclusion: decoder input `[<s>, c…]` and
/// targets `[c…, </s>]`.
pub fn encode_target(c: &[String], vocab: &Vocabulary) -> (Vec<usize>, Vec<usize>) {
    let body = vocab.encode(c);
    let mut input = Vec::with_capacity(body.len() + 1);
    input.push(BOS);
    input.extend_from_slice(&body);
    let mut target = body;
    target.push(EOS);
    (input, target)
}
