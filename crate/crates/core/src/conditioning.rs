//! Framewise time-varying conditions derived from the vocal score and its
//! chord progression: rhythm activation, chord chromagram, section keys,
//! structure labels and pitch contour.
//!
//! Frame `i` samples time `i / frame_rate`. A bundle for a song of duration
//! `d` seconds has `T = ceil(d * frame_rate)` frames in every channel.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::chords::{ChordSequence, ChordSequenceError, ChordSpan, KeyLabel};
use crate::score::{SectionLabel, Violation, VocalScore};

pub const DEFAULT_FRAME_RATE: f64 = 50.0;
pub const DEFAULT_SIGMA: f64 = 0.05;

/// Gaussian tails are cut at this many standard deviations.
const GAUSSIAN_SUPPORT: f64 = 8.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConditionError {
    #[error("score is empty")]
    EmptyScore,
    #[error("invalid score: {0:?}")]
    InvalidScore(Vec<Violation>),
    #[error("frame rate must be positive and finite, got {0}")]
    FrameRate(f64),
    #[error("sigma must be positive and finite, got {0}")]
    Sigma(f64),
    #[error("event at {time}s lies outside [0, {duration}]")]
    EventOutOfRange { time: f64, duration: f64 },
    #[error("chord sequence: {0}")]
    Chords(#[from] ChordSequenceError),
    #[error("chords end at {end}s, past the duration {duration}s")]
    ChordsPastEnd { end: f64, duration: f64 },
    #[error("no snap targets")]
    NoSnapTargets,
    #[error("no key given for section {0}")]
    MissingKey(usize),
    #[error("key given for unknown section {0}")]
    UnknownSection(usize),
    #[error("more than one key given for section {0}")]
    DuplicateKey(usize),
    #[error("pitch contour has {found} frames, bundle has {expected}")]
    ContourLength { expected: usize, found: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionKey {
    pub section: usize,
    pub key: KeyLabel,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectionSpan {
    pub label: SectionLabel,
    pub start: f64,
    pub end: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionBundle {
    pub frame_rate: f64,
    pub duration_seconds: f64,
    pub sections: Vec<SectionSpan>,
    /// Column 0: beats, column 1: downbeats.
    pub rhythm: Vec<[f64; 2]>,
    pub chroma: Vec<[u8; 12]>,
    pub key_per_section: Vec<SectionKey>,
    pub structure: Vec<u8>,
    /// MIDI pitch per frame, 0 for silence.
    pub pitch_contour: Vec<f64>,
}

pub fn frame_count(duration: f64, frame_rate: f64) -> usize {
    // tolerate representation error such as 0.1 * 30 = 3.0000000000000004
    (duration * frame_rate - 1e-9).ceil().max(0.0) as usize
}

fn check_rate(frame_rate: f64) -> Result<(), ConditionError> {
    if frame_rate.is_finite() && frame_rate > 0.0 {
        Ok(())
    } else {
        Err(ConditionError::FrameRate(frame_rate))
    }
}

/// Beat and downbeat times on the quarter-note grid of a 4/4 score, from
/// tick 0 up to (excluding) the score end.
pub fn beat_downbeat_events(score: &VocalScore) -> Result<(Vec<f64>, Vec<f64>), ConditionError> {
    let end = score.end_tick();
    if end == 0 {
        return Err(ConditionError::EmptyScore);
    }
    let tpq = score.ticks_per_quarter.max(1) as u64;
    let mut beats = Vec::new();
    let mut downbeats = Vec::new();
    let mut k = 0u64;
    while k * tpq < end {
        let t = score.tick_to_seconds(k * tpq);
        beats.push(t);
        if k.is_multiple_of(4) {
            downbeats.push(t);
        }
        k += 1;
    }
    Ok((beats, downbeats))
}

fn gaussian_column(events: &[f64], frames: usize, frame_rate: f64, sigma: f64, out: &mut [[f64; 2]], col: usize) {
    let reach = GAUSSIAN_SUPPORT * sigma;
    for &te in events {
        let lo = ((te - reach) * frame_rate).floor().max(0.0) as usize;
        let hi = (((te + reach) * frame_rate).ceil().max(0.0) as usize + 1).min(frames);
        for (i, row) in out.iter_mut().enumerate().take(hi).skip(lo) {
            let d = i as f64 / frame_rate - te;
            let v = (-(d * d) / (2.0 * sigma * sigma)).exp();
            if v > row[col] {
                row[col] = v;
            }
        }
    }
}

/// Gaussian-smoothed beat / downbeat indicator curves. Overlapping bumps
/// combine by maximum, so every value stays in [0, 1].
pub fn rhythm_activation(
    beats: &[f64],
    downbeats: &[f64],
    duration: f64,
    frame_rate: f64,
    sigma: f64,
) -> Result<Vec<[f64; 2]>, ConditionError> {
    check_rate(frame_rate)?;
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(ConditionError::Sigma(sigma));
    }
    for &t in beats.iter().chain(downbeats) {
        if !(t >= 0.0 && t <= duration) {
            return Err(ConditionError::EventOutOfRange { time: t, duration });
        }
    }
    let frames = frame_count(duration, frame_rate);
    let mut out = vec![[0.0; 2]; frames];
    gaussian_column(beats, frames, frame_rate, sigma, &mut out, 0);
    gaussian_column(downbeats, frames, frame_rate, sigma, &mut out, 1);
    Ok(out)
}

/// Binary 12-bin chromagram of a triad progression.
pub fn chord_chromagram(
    chords: &ChordSequence,
    duration: f64,
    frame_rate: f64,
) -> Result<Vec<[u8; 12]>, ConditionError> {
    check_rate(frame_rate)?;
    chords.check()?;
    if chords.end() > duration + 1e-9 {
        return Err(ConditionError::ChordsPastEnd { end: chords.end(), duration });
    }
    let frames = frame_count(duration, frame_rate);
    let mut out = vec![[0u8; 12]; frames];
    let mut entry = 0;
    for (i, row) in out.iter_mut().enumerate() {
        let t = i as f64 / frame_rate;
        while entry < chords.entries.len() && chords.entries[entry].end <= t {
            entry += 1;
        }
        if let Some(e) = chords.entries.get(entry) {
            if e.start <= t {
                *row = e.chord.chroma();
            }
        }
    }
    Ok(out)
}

/// Framewise MIDI pitch of the sounding note, 0 where silent.
pub fn pitch_contour_from_score(score: &VocalScore, frame_rate: f64) -> Result<Vec<f64>, ConditionError> {
    check_rate(frame_rate)?;
    let frames = frame_count(score.duration_seconds(), frame_rate);
    let spans: Vec<(f64, f64, u8)> = score
        .notes
        .iter()
        .map(|n| {
            (score.tick_to_seconds(n.onset_tick as u64), score.tick_to_seconds(n.end_tick()), n.pitch)
        })
        .collect();
    let mut out = vec![0.0; frames];
    let mut idx = 0;
    for (i, v) in out.iter_mut().enumerate() {
        let t = i as f64 / frame_rate;
        while idx < spans.len() && spans[idx].1 <= t {
            idx += 1;
        }
        if let Some(&(start, _, pitch)) = spans.get(idx) {
            if start <= t {
                *v = pitch as f64;
            }
        }
    }
    Ok(out)
}

/// Nearest target to `x`; ties resolve to the earlier target.
fn nearest(x: f64, targets: &[f64]) -> f64 {
    let mut best = targets[0];
    for &t in &targets[1..] {
        if (t - x).abs() < (best - x).abs() {
            best = t;
        }
    }
    best
}

fn merged_targets(downbeats: &[f64], section_edges: &[f64]) -> Vec<f64> {
    let mut targets: Vec<f64> = downbeats.iter().chain(section_edges).copied().collect();
    targets.sort_by(f64::total_cmp);
    targets.dedup();
    targets
}

/// Moves every boundary onto the nearest downbeat or section edge. The
/// result is sorted with duplicates removed.
pub fn snap_boundaries(
    boundaries: &[f64],
    downbeats: &[f64],
    section_edges: &[f64],
) -> Result<Vec<f64>, ConditionError> {
    let targets = merged_targets(downbeats, section_edges);
    if targets.is_empty() {
        return Err(ConditionError::NoSnapTargets);
    }
    let mut out: Vec<f64> = boundaries.iter().map(|&b| nearest(b, &targets)).collect();
    out.sort_by(f64::total_cmp);
    out.dedup();
    Ok(out)
}

/// Chord boundaries moved onto downbeats / section edges. Entries that
/// collapse to zero length are dropped.
pub fn snap_chords(
    chords: &ChordSequence,
    downbeats: &[f64],
    section_edges: &[f64],
) -> Result<ChordSequence, ConditionError> {
    chords.check()?;
    if chords.is_empty() {
        return Ok(chords.clone());
    }
    let targets = merged_targets(downbeats, section_edges);
    if targets.is_empty() {
        return Err(ConditionError::NoSnapTargets);
    }
    let entries = chords
        .entries
        .iter()
        .map(|e| ChordSpan { start: nearest(e.start, &targets), end: nearest(e.end, &targets), chord: e.chord })
        .filter(|e| e.start < e.end)
        .collect();
    Ok(ChordSequence { entries })
}

fn check_keys(keys: &[SectionKey], sections: usize) -> Result<Vec<SectionKey>, ConditionError> {
    let mut seen = vec![false; sections];
    for k in keys {
        match seen.get_mut(k.section) {
            None => return Err(ConditionError::UnknownSection(k.section)),
            Some(true) => return Err(ConditionError::DuplicateKey(k.section)),
            Some(s) => *s = true,
        }
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(ConditionError::MissingKey(missing));
    }
    let mut sorted = keys.to_vec();
    sorted.sort_by_key(|k| k.section);
    Ok(sorted)
}

/// Assembles every conditioning channel on a shared frame grid. Chord
/// boundaries are snapped to downbeats / section edges first.
pub fn build_condition_bundle(
    score: &VocalScore,
    chords: &ChordSequence,
    keys: &[SectionKey],
    frame_rate: f64,
    sigma: f64,
) -> Result<ConditionBundle, ConditionError> {
    check_rate(frame_rate)?;
    let violations = score.validate();
    if !violations.is_empty() {
        return Err(ConditionError::InvalidScore(violations));
    }
    let key_per_section = check_keys(keys, score.sections.len())?;
    let duration = score.duration_seconds();
    let (beats, downbeats) = beat_downbeat_events(score)?;

    let sections: Vec<SectionSpan> = score
        .sections
        .iter()
        .zip(score.section_spans_seconds())
        .map(|(s, (start, end))| SectionSpan { label: s.label, start, end })
        .collect();
    let mut edges: Vec<f64> = sections.iter().map(|s| s.start).collect();
    edges.push(duration);

    let snapped = snap_chords(chords, &downbeats, &edges)?;
    let rhythm = rhythm_activation(&beats, &downbeats, duration, frame_rate, sigma)?;
    let chroma = chord_chromagram(&snapped, duration, frame_rate)?;
    let pitch_contour = pitch_contour_from_score(score, frame_rate)?;

    let frames = rhythm.len();
    let mut structure = vec![0u8; frames];
    let mut s = 0;
    for (i, v) in structure.iter_mut().enumerate() {
        let t = i as f64 / frame_rate;
        while s + 1 < sections.len() && sections[s].end <= t {
            s += 1;
        }
        *v = sections.get(s).map(|x| x.label.index()).unwrap_or(0);
    }

    Ok(ConditionBundle {
        frame_rate,
        duration_seconds: duration,
        sections,
        rhythm,
        chroma,
        key_per_section,
        structure,
        pitch_contour,
    })
}

impl ConditionBundle {
    pub fn frames(&self) -> usize {
        self.rhythm.len()
    }

    /// Replaces the symbolic contour with an externally extracted one.
    pub fn with_pitch_contour(mut self, contour: Vec<f64>) -> Result<Self, ConditionError> {
        if contour.len() != self.frames() {
            return Err(ConditionError::ContourLength { expected: self.frames(), found: contour.len() });
        }
        self.pitch_contour = contour;
        Ok(self)
    }

    pub fn shapes_consistent(&self) -> bool {
        let t = self.frames();
        t == frame_count(self.duration_seconds, self.frame_rate)
            && self.chroma.len() == t
            && self.structure.len() == t
            && self.pitch_contour.len() == t
    }

    /// Frames whose sample time lies in `[start, end)`.
    pub fn frame_range(&self, start: f64, end: f64) -> Range<usize> {
        let lo = ((start * self.frame_rate) - 1e-9).ceil().max(0.0) as usize;
        let hi = ((end * self.frame_rate) - 1e-9).ceil().max(0.0) as usize;
        lo.min(self.frames())..hi.min(self.frames())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("bundle serialize") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}
