//! Sentence-level lyrics with structure tags.
//!
//! Two text forms are understood: the canonical JSON document
//! (`{"lines": [{"tag": "verse", "tokens": [...]}, ...]}`) and the tagged
//! plain-text form users write by hand:
//!
//! ```text
//! [verse]
//! 窗外的麻雀
//! 在电线杆上多嘴
//! [chorus]
//! ...
//! ```

use serde::{Deserialize, Serialize};

use crate::score::{SectionLabel, UnknownLabel};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LyricLine {
    pub tag: SectionLabel,
    pub tokens: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LyricsSheet {
    pub lines: Vec<LyricLine>,
}

#[derive(Debug, thiserror::Error)]
pub enum LyricsError {
    #[error("line {line}: {source}")]
    Label {
        line: usize,
        #[source]
        source: UnknownLabel,
    },
    #[error("line {0}: lyric text before any [section] tag")]
    Untagged(usize),
    #[error("lyric line {0} has no tokens")]
    EmptyLine(usize),
    #[error("malformed lyrics document: {0}")]
    Json(#[from] serde_json::Error),
}

/// True for characters in the common CJK ideograph / kana / hangul blocks.
fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF | 0x3400..=0x4DBF | 0x4E00..=0x9FFF | 0xAC00..=0xD7AF | 0xF900..=0xFAFF
        | 0x20000..=0x2FA1F)
}

/// Splits a lyric line into tokens: one token per visible character when the
/// line contains CJK text, whitespace-separated words otherwise.
pub fn tokenize_line(line: &str) -> Vec<String> {
    if line.chars().any(is_cjk) {
        line.chars()
            .filter(|c| !c.is_whitespace() && !c.is_control())
            .map(String::from)
            .collect()
    } else {
        line.split_whitespace().map(str::to_string).collect()
    }
}

impl LyricsSheet {
    pub fn token_counts(&self) -> Vec<usize> {
        self.lines.iter().map(|l| l.tokens.len()).collect()
    }

    pub fn tags(&self) -> Vec<SectionLabel> {
        self.lines.iter().map(|l| l.tag).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    /// Index of the first line with no tokens, if any.
    pub fn first_empty_line(&self) -> Option<usize> {
        self.lines.iter().position(|l| l.tokens.is_empty())
    }

    pub fn parse_tagged_text(text: &str) -> Result<Self, LyricsError> {
        let mut lines = Vec::new();
        let mut tag = None;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(inner) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                tag = Some(
                    inner
                        .parse::<SectionLabel>()
                        .map_err(|source| LyricsError::Label { line: n + 1, source })?,
                );
                continue;
            }
            let tag = tag.ok_or(LyricsError::Untagged(n + 1))?;
            lines.push(LyricLine { tag, tokens: tokenize_line(line) });
        }
        Ok(LyricsSheet { lines })
    }

    pub fn from_json(text: &str) -> Result<Self, LyricsError> {
        let sheet: LyricsSheet = serde_json::from_str(text)?;
        if let Some(i) = sheet.first_empty_line() {
            return Err(LyricsError::EmptyLine(i));
        }
        Ok(sheet)
    }

    /// Parses either form, choosing by the first non-blank character.
    pub fn parse(text: &str) -> Result<Self, LyricsError> {
        if text.trim_start().starts_with('{') {
            Self::from_json(text)
        } else {
            Self::parse_tagged_text(text)
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("lyrics serialize")
    }
}
