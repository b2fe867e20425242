//! Generation windows for long-form synthesis.
//!
//! The first verse is generated first with no audio reference. Sections
//! before it are then generated backwards, each continuing from the audio
//! that follows it, and the rest of the song continues forwards from the
//! preceding window. Sections longer than the window limit are split at
//! downbeats.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conditioning::SectionSpan;
use crate::score::SectionLabel;

pub const MAX_WINDOW_SECONDS: f64 = 47.0;
pub const DEFAULT_P_BACKWARD: f64 = 0.5;
const EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "section")]
pub enum WindowReference {
    None,
    /// The window ending where this one starts.
    PreviousWindow,
    /// The already generated audio starting where this window ends, which
    /// belongs to the given section.
    BackwardFrom(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationWindow {
    pub start: f64,
    pub end: f64,
    pub anchor_section: usize,
    pub reference: WindowReference,
    /// Generation rank; windows run strictly in this order.
    pub order: usize,
    /// Span of reference audio shown to the generator.
    pub reference_span: Option<(f64, f64)>,
}

impl GenerationWindow {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSlice {
    pub window: GenerationWindow,
    pub reference_swapped: bool,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlanError {
    #[error("no sections")]
    NoSections,
    #[error("section {0} is empty or not contiguous with its predecessor")]
    NotContiguous(usize),
    #[error("song has no verse")]
    NoVerse,
    #[error("section {section} cannot be split: no downbeat in ({start}, {limit}]")]
    NoSplitPoint { section: usize, start: f64, limit: f64 },
    #[error("maximum window must be positive, got {0}")]
    MaxWindow(f64),
    #[error("probability must lie in [0, 1], got {0}")]
    Probability(f64),
    #[error("context length must be positive, got {0}")]
    Context(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlanOptions {
    pub max_window: f64,
    /// Seconds of reference audio to expose; `None` for the whole window.
    pub context: Option<f64>,
}

impl Default for PlanOptions {
    fn default() -> Self {
        PlanOptions { max_window: MAX_WINDOW_SECONDS, context: None }
    }
}

fn check_sections(sections: &[SectionSpan]) -> Result<(), PlanError> {
    if sections.is_empty() {
        return Err(PlanError::NoSections);
    }
    let mut expected = 0.0;
    for (i, s) in sections.iter().enumerate() {
        if (s.start - expected).abs() > EPS || s.end.partial_cmp(&s.start) != Some(std::cmp::Ordering::Greater) {
            return Err(PlanError::NotContiguous(i));
        }
        expected = s.end;
    }
    Ok(())
}

/// Splits `[start, end)` into pieces no longer than `max_window`, cutting
/// at the latest downbeat that keeps each piece within the limit.
pub fn split_span(
    section: usize,
    start: f64,
    end: f64,
    downbeats: &[f64],
    max_window: f64,
) -> Result<Vec<(f64, f64)>, PlanError> {
    let mut out = Vec::new();
    let mut cur = start;
    while end - cur > max_window + EPS {
        let limit = cur + max_window;
        let cut = downbeats
            .iter()
            .copied()
            .filter(|&d| d > cur + EPS && d <= limit + EPS)
            .fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |a| a.max(d))))
            .ok_or(PlanError::NoSplitPoint { section, start: cur, limit })?;
        out.push((cur, cut));
        cur = cut;
    }
    out.push((cur, end));
    Ok(out)
}

/// Inference windows in generation order. Together they tile the song.
pub fn plan_inference(
    sections: &[SectionSpan],
    downbeats: &[f64],
    options: PlanOptions,
) -> Result<Vec<GenerationWindow>, PlanError> {
    if !(options.max_window.is_finite() && options.max_window > 0.0) {
        return Err(PlanError::MaxWindow(options.max_window));
    }
    if let Some(c) = options.context {
        if !(c.is_finite() && c > 0.0) {
            return Err(PlanError::Context(c));
        }
    }
    check_sections(sections)?;
    let verse = sections.iter().position(|s| s.label == SectionLabel::Verse).ok_or(PlanError::NoVerse)?;

    let pieces: Vec<Vec<(f64, f64)>> = sections
        .iter()
        .enumerate()
        .map(|(i, s)| split_span(i, s.start, s.end, downbeats, options.max_window))
        .collect::<Result<_, _>>()?;

    let mut windows: Vec<GenerationWindow> = Vec::new();
    let mut push = |start: f64, end: f64, anchor: usize, reference: WindowReference| {
        let order = windows.len();
        windows.push(GenerationWindow { start, end, anchor_section: anchor, reference, order, reference_span: None });
    };

    for (k, &(a, b)) in pieces[verse].iter().enumerate() {
        push(a, b, verse, if k == 0 { WindowReference::None } else { WindowReference::PreviousWindow });
    }
    for s in (0..verse).rev() {
        let n = pieces[s].len();
        for k in (0..n).rev() {
            let (a, b) = pieces[s][k];
            let source = if k + 1 == n { s + 1 } else { s };
            push(a, b, s, WindowReference::BackwardFrom(source));
        }
    }
    for (s, section_pieces) in pieces.iter().enumerate().skip(verse + 1) {
        for &(a, b) in section_pieces {
            push(a, b, s, WindowReference::PreviousWindow);
        }
    }

    let spans: Vec<(f64, f64)> = windows.iter().map(|w| (w.start, w.end)).collect();
    for w in &mut windows {
        w.reference_span = match w.reference {
            WindowReference::None => None,
            WindowReference::PreviousWindow => spans.iter().find(|s| (s.1 - w.start).abs() <= EPS).map(|&(a, b)| {
                (options.context.map_or(a, |c| a.max(b - c)), b)
            }),
            WindowReference::BackwardFrom(_) => spans.iter().find(|s| (s.0 - w.end).abs() <= EPS).map(|&(a, b)| {
                (a, options.context.map_or(b, |c| b.min(a + c)))
            }),
        };
    }
    Ok(windows)
}

/// True when the windows, sorted by start, cover `[0, total]` without gaps
/// or overlaps.
pub fn tiles_exactly(windows: &[GenerationWindow], total: f64) -> bool {
    let mut spans: Vec<(f64, f64)> = windows.iter().map(|w| (w.start, w.end)).collect();
    spans.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut cursor = 0.0;
    for (a, b) in spans {
        if (a - cursor).abs() > EPS || b <= a {
            return false;
        }
        cursor = b;
    }
    (cursor - total).abs() <= EPS
}

/// One section-anchored training slice per section. A slice that starts
/// with an intro has its reference swapped, with probability `p_backward`,
/// for the first verse after it.
pub fn plan_training_slices(
    sections: &[SectionSpan],
    p_backward: f64,
    seed: u64,
    max_window: f64,
) -> Result<Vec<TrainingSlice>, PlanError> {
    if !(0.0..=1.0).contains(&p_backward) {
        return Err(PlanError::Probability(p_backward));
    }
    if !(max_window.is_finite() && max_window > 0.0) {
        return Err(PlanError::MaxWindow(max_window));
    }
    check_sections(sections)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(sections.len());
    for (i, s) in sections.iter().enumerate() {
        let end = s.end.min(s.start + max_window);
        let later_verse =
            sections.iter().enumerate().skip(i + 1).find(|(_, x)| x.label == SectionLabel::Verse).map(|(j, _)| j);
        let swapped = match later_verse {
            Some(_) if s.label == SectionLabel::Intro => rng.random_bool(p_backward),
            _ => false,
        };
        let (reference, reference_span) = match (swapped, later_verse) {
            (true, Some(v)) => (
                WindowReference::BackwardFrom(v),
                Some((sections[v].start, sections[v].end.min(sections[v].start + max_window))),
            ),
            _ if i == 0 => (WindowReference::None, None),
            _ => (WindowReference::PreviousWindow, Some((sections[i - 1].start, sections[i - 1].end))),
        };
        out.push(TrainingSlice {
            window: GenerationWindow { start: s.start, end, anchor_section: i, reference, order: i, reference_span },
            reference_swapped: swapped,
        });
    }
    Ok(out)
}
