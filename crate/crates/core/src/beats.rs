//! Full-song beat grids without a symbolic score.
//!
//! Beats are trusted only inside voiced segments; silent gaps are filled at
//! a tempo taken from the neighbouring segments, continuing the phase of
//! the segment before the gap.

use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;

/// Voiced segments closer than this are merged.
pub const MERGE_GAP_SECONDS: f64 = 0.2;
const EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoicedSegment {
    pub start: f64,
    pub end: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BeatGrid {
    pub beats: Vec<f64>,
    pub downbeats: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BeatError {
    #[error("audio has zero length")]
    ZeroLength,
    #[error("analysis window must be positive, got {0}")]
    Window(f64),
    #[error("{beats} beat lists for {segments} segments")]
    LengthMismatch { beats: usize, segments: usize },
    #[error("segment {0} is empty, unsorted or overlaps its predecessor")]
    BadSegment(usize),
    #[error("no voiced segment has two or more beats")]
    NoTempoEvidence,
    #[error("total duration must be positive, got {0}")]
    Duration(f64),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Energy gate: frames whose RMS is within `threshold_db` of the loudest
/// frame are voiced. Runs of voiced frames become segments; segments
/// separated by less than [`MERGE_GAP_SECONDS`] are merged.
pub fn detect_voiced_segments(
    audio: &AudioBuffer,
    window: f64,
    threshold_db: f64,
) -> Result<Vec<VoicedSegment>, BeatError> {
    if audio.is_empty() {
        return Err(BeatError::ZeroLength);
    }
    if !(window.is_finite() && window > 0.0) {
        return Err(BeatError::Window(window));
    }
    let sr = audio.sample_rate as f64;
    let mono = audio.to_mono();
    let frame = ((window * sr).round() as usize).max(1);
    let rms: Vec<f64> = mono
        .chunks(frame)
        .map(|c| (c.iter().map(|&x| x as f64 * x as f64).sum::<f64>() / c.len() as f64).sqrt())
        .collect();
    let peak = rms.iter().cloned().fold(0.0, f64::max);
    if peak == 0.0 {
        return Ok(Vec::new());
    }
    let mut segments: Vec<VoicedSegment> = Vec::new();
    let mut run_start: Option<usize> = None;
    for (i, &r) in rms.iter().enumerate().chain(std::iter::once((rms.len(), &0.0))) {
        let voiced = r > 0.0 && 20.0 * (r / peak).log10() >= threshold_db;
        match (voiced, run_start) {
            (true, None) => run_start = Some(i),
            (false, Some(s)) => {
                let start = (s * frame) as f64 / sr;
                let end = ((i * frame).min(mono.len())) as f64 / sr;
                match segments.last_mut() {
                    Some(prev) if start - prev.end < MERGE_GAP_SECONDS => prev.end = end,
                    _ => segments.push(VoicedSegment { start, end }),
                }
                run_start = None;
            }
            _ => {}
        }
    }
    Ok(segments)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Median inter-beat interval of a sorted beat list (needs ≥ 2 beats).
pub fn median_ibi(beats: &[f64]) -> Option<f64> {
    if beats.len() < 2 {
        return None;
    }
    let mut diffs: Vec<f64> = beats.windows(2).map(|w| w[1] - w[0]).collect();
    Some(median(&mut diffs))
}

/// Interval used across a gap: harmonic mean of the two neighbours' IBIs.
pub fn blended_interval(before: f64, after: f64) -> f64 {
    2.0 / (1.0 / before + 1.0 / after)
}

/// Gap beats after `last` at spacing `interval`, stopping once the next
/// detected beat `next` is less than half an interval away.
pub fn fill_gap(last: f64, next: f64, interval: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut k = 1.0;
    loop {
        let t = last + k * interval;
        if next - t < interval / 2.0 - EPS {
            break;
        }
        out.push(t);
        k += 1.0;
    }
    out
}

struct Evidence {
    beats: Vec<f64>,
    ibi: f64,
}

/// Builds a song-wide grid from per-segment detected beats.
///
/// Beats outside their segment are dropped as spurious. Segments with fewer
/// than two beats carry no tempo and are treated as silence. Downbeats are
/// every fourth beat counted from the first detected beat.
pub fn interpolate_beats(
    voiced_beats: &[Vec<f64>],
    segments: &[VoicedSegment],
    total_duration: f64,
) -> Result<BeatGrid, BeatError> {
    if voiced_beats.len() != segments.len() {
        return Err(BeatError::LengthMismatch { beats: voiced_beats.len(), segments: segments.len() });
    }
    if !(total_duration.is_finite() && total_duration > 0.0) {
        return Err(BeatError::Duration(total_duration));
    }
    for (i, s) in segments.iter().enumerate() {
        if s.start.partial_cmp(&s.end) != Some(std::cmp::Ordering::Less) || (i > 0 && s.start < segments[i - 1].end) {
            return Err(BeatError::BadSegment(i));
        }
    }

    let evidence: Vec<Evidence> = voiced_beats
        .iter()
        .zip(segments)
        .filter_map(|(beats, seg)| {
            let mut kept: Vec<f64> = beats
                .iter()
                .copied()
                .filter(|&b| b >= seg.start - EPS && b <= seg.end + EPS && b >= 0.0 && b <= total_duration)
                .collect();
            kept.sort_by(f64::total_cmp);
            kept.dedup_by(|a, b| (*a - *b).abs() <= EPS);
            median_ibi(&kept).map(|ibi| Evidence { beats: kept, ibi })
        })
        .collect();
    let first = evidence.first().ok_or(BeatError::NoTempoEvidence)?;

    let mut beats: Vec<f64> = Vec::new();
    let push = |t: f64, beats: &mut Vec<f64>| {
        if beats.last().is_none_or(|&l| t > l + EPS) {
            beats.push(t);
        }
    };

    // leading silence: extend backwards at the first segment's tempo
    let lead = ((first.beats[0] / first.ibi) + EPS).floor() as usize;
    for k in (1..=lead).rev() {
        push((first.beats[0] - k as f64 * first.ibi).max(0.0), &mut beats);
    }
    let anchor = beats.len();

    for (i, ev) in evidence.iter().enumerate() {
        for &b in &ev.beats {
            push(b, &mut beats);
        }
        let last = *ev.beats.last().expect("evidence has beats");
        match evidence.get(i + 1) {
            Some(next) => {
                let interval = blended_interval(ev.ibi, next.ibi);
                for t in fill_gap(last, next.beats[0], interval) {
                    push(t, &mut beats);
                }
            }
            None => {
                let mut k = 1.0;
                while last + k * ev.ibi <= total_duration + EPS {
                    push((last + k * ev.ibi).min(total_duration), &mut beats);
                    k += 1.0;
                }
            }
        }
    }

    let downbeats = beats
        .iter()
        .enumerate()
        .filter(|(i, _)| (*i as i64 - anchor as i64).rem_euclid(4) == 0)
        .map(|(_, &t)| t)
        .collect();
    Ok(BeatGrid { beats, downbeats })
}

/// Beat and downbeat event lists for the rhythm activation.
pub fn grid_to_events(grid: &BeatGrid) -> (Vec<f64>, Vec<f64>) {
    (grid.beats.clone(), grid.downbeats.clone())
}

impl BeatGrid {
    pub fn is_consistent(&self) -> bool {
        let increasing = |v: &[f64]| v.windows(2).all(|w| w[0] < w[1]);
        increasing(&self.beats)
            && increasing(&self.downbeats)
            && self.downbeats.iter().all(|d| self.beats.iter().any(|b| (b - d).abs() <= EPS))
    }

    /// Beat position within the bar for each beat: 1 on downbeats, counting
    /// up from there. Beats before the first downbeat count backwards
    /// modulo 4.
    pub fn positions(&self) -> Vec<u32> {
        let is_down: Vec<bool> = self
            .beats
            .iter()
            .map(|b| self.downbeats.iter().any(|d| (b - d).abs() <= EPS))
            .collect();
        let first = is_down.iter().position(|&d| d);
        let mut out = Vec::with_capacity(self.beats.len());
        let mut pos = 0u32;
        for (i, &down) in is_down.iter().enumerate() {
            pos = if down {
                1
            } else {
                match first {
                    Some(f) if i < f => (4 - ((f - i) % 4) as u32) % 4 + 1,
                    Some(_) => pos + 1,
                    None => (i % 4) as u32 + 2,
                }
            };
            out.push(pos);
        }
        out
    }

    /// Two columns per line: time in seconds and position in the bar
    /// (1 = downbeat).
    pub fn to_text(&self) -> String {
        self.beats
            .iter()
            .zip(self.positions())
            .map(|(t, p)| format!("{t:?}\t{p}\n"))
            .collect()
    }

    /// Accepts the two-column form; single-column lines are plain beats.
    pub fn from_text(text: &str) -> Result<Self, BeatError> {
        let mut grid = BeatGrid::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| BeatError::Parse { line: n + 1, message };
            let mut fields = line.split_whitespace();
            let t: f64 = fields
                .next()
                .unwrap_or_default()
                .parse()
                .map_err(|_| err(format!("bad time in {line:?}")))?;
            let pos: Option<u32> = match fields.next() {
                Some(p) => Some(p.parse().map_err(|_| err(format!("bad beat position in {line:?}")))?),
                None => None,
            };
            grid.beats.push(t);
            if pos == Some(1) {
                grid.downbeats.push(t);
            }
        }
        Ok(grid)
    }
}

/// Band-energy onset detector tuned to the stub renderer's click track.
#[derive(Clone, Copy, Debug)]
pub struct OnsetParams {
    pub center_hz: f64,
    pub window: usize,
    pub hop: usize,
    /// Peaks below this fraction of the strongest are ignored.
    pub relative_threshold: f64,
    pub min_separation: f64,
}

impl Default for OnsetParams {
    fn default() -> Self {
        OnsetParams { center_hz: 1000.0, window: 256, hop: 16, relative_threshold: 0.1, min_separation: 0.1 }
    }
}

/// Onset times of narrow-band bursts: Hann-windowed single-bin energy at
/// `center_hz`, peak-picked. Reported at the window centre.
pub fn detect_onsets(audio: &AudioBuffer, params: OnsetParams) -> Vec<f64> {
    let mono = audio.to_mono();
    let sr = audio.sample_rate as f64;
    if mono.len() < params.window || params.hop == 0 {
        return Vec::new();
    }
    let w = params.window;
    let hann: Vec<f64> =
        (0..w).map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / w as f64).cos()).collect();
    let omega = 2.0 * std::f64::consts::PI * params.center_hz / sr;
    let frames = (mono.len() - w) / params.hop + 1;
    let energy: Vec<f64> = (0..frames)
        .map(|k| {
            let start = k * params.hop;
            let (mut re, mut im) = (0.0, 0.0);
            for n in 0..w {
                let x = mono[start + n] as f64 * hann[n];
                let phase = omega * (start + n) as f64;
                re += x * phase.cos();
                im -= x * phase.sin();
            }
            re * re + im * im
        })
        .collect();
    let max = energy.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return Vec::new();
    }
    let threshold = params.relative_threshold * max;
    let radius = ((params.min_separation * sr) / params.hop as f64).ceil() as usize;
    let mut out = Vec::new();
    for k in 0..frames {
        let e = energy[k];
        if e < threshold {
            continue;
        }
        let lo = k.saturating_sub(radius);
        let hi = (k + radius + 1).min(frames);
        let is_peak = (lo..hi).all(|j| if j < k { energy[j] < e } else { energy[j] <= e });
        if is_peak {
            out.push((k * params.hop + w / 2) as f64 / sr);
        }
    }
    out
}
