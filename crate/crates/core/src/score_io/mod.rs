//! Reading and writing vocal scores.
//!
//! Two interchange forms: Standard MIDI Files ([`smf`]) and the canonical
//! `.score.json` document, a direct JSON rendering of [`VocalScore`] with
//! all times in ticks.

pub mod smf;

use std::path::Path;

use crate::score::{Violation, VocalScore};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScoreFileFormat {
    Smf,
    CanonicalText,
}

impl ScoreFileFormat {
    /// `.mid` / `.midi` → SMF, anything else → canonical text.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("mid") | Some("midi") | Some("smf") => ScoreFileFormat::Smf,
            _ => ScoreFileFormat::CanonicalText,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScoreIoError {
    #[error("empty input")]
    EmptyInput,
    #[error("malformed header chunk: {0}")]
    BadHeader(String),
    #[error("truncated {what} at byte {offset}")]
    Truncated { what: &'static str, offset: usize },
    #[error("variable-length quantity longer than four bytes at byte {offset}")]
    VlqTooLong { offset: usize },
    #[error("unsupported SMF format {0}")]
    UnsupportedFormat(u16),
    #[error("data byte without a preceding status byte at byte {offset}")]
    MissingStatus { offset: usize },
    #[error("unsupported status byte {status:#04x} at byte {offset}")]
    UnsupportedStatus { status: u8, offset: usize },
    #[error("malformed meta event {meta_type:#04x} at byte {offset}")]
    BadMeta { meta_type: u8, offset: usize },
    #[error("unmatched note-on for pitch {pitch} at tick {tick}")]
    UnmatchedNoteOn { pitch: u8, tick: u64 },
    #[error("non-4/4 time signature ({numerator}/{denominator})")]
    NonCommonMeter { numerator: u8, denominator: u32 },
    #[error("unknown section label {0:?}")]
    UnknownSectionLabel(String),
    #[error("tick value exceeds 32 bits")]
    TickOverflow,
    #[error("invalid score: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("malformed score document: {0}")]
    Json(#[from] serde_json::Error),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

pub fn read_score(bytes: &[u8], format: ScoreFileFormat) -> Result<VocalScore, ScoreIoError> {
    if bytes.is_empty() {
        return Err(ScoreIoError::EmptyInput);
    }
    match format {
        ScoreFileFormat::Smf => smf::read(bytes),
        ScoreFileFormat::CanonicalText => {
            let score: VocalScore = serde_json::from_slice(bytes)?;
            let violations = score.validate();
            if !violations.is_empty() {
                return Err(ScoreIoError::Invalid(violations));
            }
            Ok(score)
        }
    }
}

pub fn write_score(score: &VocalScore, format: ScoreFileFormat) -> Result<Vec<u8>, ScoreIoError> {
    match format {
        ScoreFileFormat::Smf => smf::write(score),
        ScoreFileFormat::CanonicalText => {
            let violations = score.validate();
            if !violations.is_empty() {
                return Err(ScoreIoError::Invalid(violations));
            }
            let mut out = serde_json::to_vec_pretty(score)?;
            out.push(b'\n');
            Ok(out)
        }
    }
}
