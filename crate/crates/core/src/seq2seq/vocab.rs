//! Token vocabulary and sentences.

use crate::error::{Error, Result};
use std::collections::HashMap;
use std::fs;
use std::path::Path;

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;

pub const RESERVED: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Bijective token <-> id map with four fixed reserved ids.
#[derive(Debug, Clone)]
pub struct Vocab {
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, u32>,
}

impl Vocab {
    /// Build from non-reserved tokens, in the order they should receive ids
    /// (starting at 4). Duplicate tokens are an error.
    pub fn from_tokens<I: IntoIterator<Item = String>>(tokens: I) -> Result<Self> {
        let mut id_to_token: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut token_to_id: HashMap<String, u32> = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        for token in tokens {
            if token_to_id.contains_key(&token) {
                return Err(Error::Vocab(format!("duplicate token `{token}`")));
            }
            token_to_id.insert(token.clone(), id_to_token.len() as u32);
            id_to_token.push(token);
        }
        Ok(Vocab { id_to_token, token_to_id })
    }

    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    /// Id for a token; unknown tokens map to [`UNK`].
    pub fn encode(&self, token: &str) -> u32 {
        self.token_to_id.get(token).copied().unwrap_or(UNK)
    }

    pub fn decode(&self, id: u32) -> &str {
        &self.id_to_token[id as usize]
    }

    pub fn encode_words(&self, words: &[String]) -> Vec<u32> {
        words.iter().map(|w| self.encode(w)).collect()
    }

    pub fn decode_ids(&self, ids: &[u32]) -> Vec<String> {
        ids.iter().map(|&i| self.decode(i).to_string()).collect()
    }

    /// One token per line; the line number is the id. The four reserved
    /// tokens occupy lines 0-3.
    pub fn save(&self, path: &Path) -> Result<()> {
        let body = self.id_to_token.join("\n") + "\n";
        fs::write(path, body).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let body = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let lines: Vec<&str> = body.lines().collect();
        if lines.len() < RESERVED.len() {
            return Err(Error::Vocab(format!(
                "vocab file {} has fewer than {} lines",
                path.display(),
                RESERVED.len()
            )));
        }
        for (i, expected) in RESERVED.iter().enumerate() {
            if lines[i] != *expected {
                return Err(Error::Vocab(format!(
                    "vocab file {}: line {i} is `{}`, expected reserved `{expected}`",
                    path.display(),
                    lines[i]
                )));
            }
        }
        Vocab::from_tokens(lines[RESERVED.len()..].iter().map(|s| s.to_string()))
    }
}

/// A non-empty token-id sequence with no interior padding.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Sentence {
    tokens: Vec<u32>,
}

impl Sentence {
    pub fn new(tokens: Vec<u32>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Sentence("empty sentence".into()));
        }
        if tokens.contains(&PAD) {
            return Err(Error::Sentence("sentence contains PAD".into()));
        }
        Ok(Sentence { tokens })
    }

    pub fn from_words(vocab: &Vocab, words: &[String]) -> Result<Self> {
        Sentence::new(vocab.encode_words(words))
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}
