//! Character-level tokenizer over [a-z0-9 space] with a fixed context window.

use crate::error::{Error, Result};

/// Fixed context window: begin marker + characters + end marker + padding.
pub const CONTEXT: usize = 32;

pub const PAD: u16 = 0;
pub const BOS: u16 = 1;
pub const EOS: u16 = 2;
pub const SPACE: u16 = 3;

/// Token id count: 4 specials + 26 letters + 10 digits.
pub const VOCAB: usize = 40;

/// Id for one supported character, `None` otherwise. Uppercase letters map
/// to their lowercase ids.
pub fn char_id(ch: char) -> Option<u16> {
    let ch = ch.to_ascii_lowercase();
    match ch {
        ' ' => Some(SPACE),
        'a'..='z' => Some(4 + (ch as u16 - 'a' as u16)),
        '0'..='9' => Some(30 + (ch as u16 - '0' as u16)),
        _ => None,
    }
}

/// Token ids padded to [`CONTEXT`]; `len` counts the valid prefix
/// (begin marker, characters, end marker).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    ids: [u16; CONTEXT],
    len: usize,
    truncated: bool,
}

impl TokenSequence {
    /// Valid ids only: begin marker through end marker, padding excluded.
    pub fn ids(&self) -> &[u16] {
        &self.ids[..self.len]
    }

    /// All [`CONTEXT`] ids including trailing padding.
    pub fn padded(&self) -> &[u16; CONTEXT] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false // always holds at least the two markers
    }

    /// Index of the end marker, where the sentence feature is read.
    pub fn eos_position(&self) -> usize {
        self.len - 1
    }

    /// True when the input exceeded capacity and lost trailing characters.
    pub fn is_truncated(&self) -> bool {
        self.truncated
    }
}

/// Lowercases and encodes `text` as begin marker, one id per character,
/// end marker, right-padded to [`CONTEXT`]. Inputs longer than capacity
/// keep their first `CONTEXT - 2` characters and are flagged truncated.
pub fn tokenize(text: &str) -> Result<TokenSequence> {
    if text.is_empty() {
        return Err(Error::InvalidArgument("cannot tokenize empty text".into()));
    }
    let mut ids = [PAD; CONTEXT];
    ids[0] = BOS;
    let mut len = 1;
    let mut truncated = false;
    for (pos, ch) in text.chars().enumerate() {
        let id = char_id(ch).ok_or(Error::BadCharacter { ch, pos })?;
        if len == CONTEXT - 1 {
            truncated = true;
            continue; // keep scanning so unsupported characters still error
        }
        ids[len] = id;
        len += 1;
    }
    ids[len] = EOS;
    len += 1;
    Ok(TokenSequence {
        ids,
        len,
        truncated,
    })
}
