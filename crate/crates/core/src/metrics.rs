//! Objective evaluation: beat F-measure, key accuracy, chromagram F1,
//! phoneme error rate, plus key and chroma estimation used to score
//! rendered audio.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::chords::{KeyLabel, Mode};

/// Beats within this distance (inclusive) are aligned.
pub const RHYTHM_TOLERANCE: f64 = 0.07;
/// Slack added to tolerance comparisons.
pub const TOLERANCE_SLACK: f64 = 1e-9;

pub const MAJOR_PROFILE: [f64; 12] = [6.35, 2.23, 3.48, 2.33, 4.38, 4.09, 2.52, 5.19, 2.39, 3.66, 2.29, 2.88];
pub const MINOR_PROFILE: [f64; 12] = [6.33, 2.68, 3.52, 5.38, 2.60, 3.53, 2.54, 4.75, 3.98, 2.69, 3.34, 3.17];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("chroma is all zero")]
    ZeroChroma,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl MatchReport {
    /// Two empty lists agree perfectly; otherwise an empty side scores 0.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let (precision, recall, f1) = if tp + fp + fn_ == 0 {
            (1.0, 1.0, 1.0)
        } else {
            let p = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
            let r = if tp + fn_ > 0 { tp as f64 / (tp + fn_) as f64 } else { 0.0 };
            let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
            (p, r, f)
        };
        MatchReport { true_positives: tp, false_positives: fp, false_negatives: fn_, precision, recall, f1 }
    }
}

/// One-to-one beat matching within `tolerance`. On sorted lists the greedy
/// sweep yields a maximum matching.
pub fn rhythm_f1(reference: &[f64], estimated: &[f64], tolerance: f64) -> MatchReport {
    let (mut i, mut j, mut tp) = (0, 0, 0);
    while i < reference.len() && j < estimated.len() {
        let d = estimated[j] - reference[i];
        if d.abs() <= tolerance + TOLERANCE_SLACK {
            tp += 1;
            i += 1;
            j += 1;
        } else if d < 0.0 {
            j += 1;
        } else {
            i += 1;
        }
    }
    MatchReport::from_counts(tp, estimated.len() - tp, reference.len() - tp)
}

pub fn key_accuracy(reference: &[KeyLabel], estimated: &[KeyLabel]) -> Result<f64, MetricError> {
    if reference.len() != estimated.len() {
        return Err(MetricError::LengthMismatch(reference.len(), estimated.len()));
    }
    if reference.is_empty() {
        return Err(MetricError::Empty);
    }
    let hits = reference.iter().zip(estimated).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / reference.len() as f64)
}

/// Micro-averaged F1 over every (frame, pitch class) cell.
pub fn chord_f1(reference: &[[u8; 12]], estimated: &[[u8; 12]]) -> Result<f64, MetricError> {
    if reference.len() != estimated.len() {
        return Err(MetricError::LengthMismatch(reference.len(), estimated.len()));
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (r, e) in reference.iter().zip(estimated) {
        for (&a, &b) in r.iter().zip(e) {
            match (a != 0, b != 0) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                _ => {}
            }
        }
    }
    Ok(MatchReport::from_counts(tp, fp, fn_).f1)
}

/// Unit-cost Levenshtein distance.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, x) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let next = (diag + (x != y) as usize).min(row[j] + 1).min(row[j + 1] + 1);
            diag = row[j + 1];
            row[j + 1] = next;
        }
    }
    row[b.len()]
}

/// (S + D + I) / N.
pub fn per<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> Result<f64, MetricError> {
    if reference.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(edit_distance(reference, hypothesis) as f64 / reference.len() as f64)
}

/// Collapses runs of identical consecutive lines.
pub fn dedup_lines<T: PartialEq + Clone>(lines: &[T]) -> Vec<T> {
    let mut out: Vec<T> = Vec::with_capacity(lines.len());
    for l in lines {
        if out.last() != Some(l) {
            out.push(l.clone());
        }
    }
    out
}

fn pearson(a: &[f64; 12], b: &[f64; 12]) -> f64 {
    let ma = a.iter().sum::<f64>() / 12.0;
    let mb = b.iter().sum::<f64>() / 12.0;
    let (mut num, mut va, mut vb) = (0.0, 0.0, 0.0);
    for i in 0..12 {
        let (x, y) = (a[i] - ma, b[i] - mb);
        num += x * y;
        va += x * x;
        vb += y * y;
    }
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        num / (va * vb).sqrt()
    }
}

/// Correlation of the summed chroma with each of the 24 rotated key
/// profiles, indexed like [`KeyLabel::index`].
pub fn key_correlations(chroma: &[[f64; 12]]) -> Result<[f64; 24], MetricError> {
    if chroma.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut sum = [0.0; 12];
    for row in chroma {
        for (s, v) in sum.iter_mut().zip(row) {
            *s += v;
        }
    }
    if sum.iter().all(|&v| v == 0.0) {
        return Err(MetricError::ZeroChroma);
    }
    let mut out = [0.0; 24];
    for (index, slot) in out.iter_mut().enumerate() {
        let key = KeyLabel::from_index(index);
        let profile = if key.mode == Mode::Major { &MAJOR_PROFILE } else { &MINOR_PROFILE };
        let tonic = key.tonic.value() as usize;
        let rotated: [f64; 12] = std::array::from_fn(|pc| profile[(pc + 12 - tonic) % 12]);
        *slot = pearson(&sum, &rotated);
    }
    Ok(out)
}

/// Krumhansl–Schmuckler key estimate; ties go to the lower key index.
pub fn estimate_key(chroma: &[[f64; 12]]) -> Result<KeyLabel, MetricError> {
    let corr = key_correlations(chroma)?;
    let mut best = 0;
    for i in 1..24 {
        if corr[i] > corr[best] {
            best = i;
        }
    }
    Ok(KeyLabel::from_index(best))
}

pub fn binary_to_real(chroma: &[[u8; 12]]) -> Vec<[f64; 12]> {
    chroma.iter().map(|r| std::array::from_fn(|i| r[i] as f64)).collect()
}

#[derive(Clone, Copy, Debug)]
pub struct ChromaParams {
    pub fft_size: usize,
    /// Peaks weaker than this fraction of the frame's strongest are dropped.
    pub relative_threshold: f64,
    /// Minimum sinusoid amplitude counted as sounding.
    pub amplitude_floor: f64,
    pub min_hz: f64,
    pub max_hz: f64,
}

impl Default for ChromaParams {
    fn default() -> Self {
        ChromaParams { fft_size: 4096, relative_threshold: 0.25, amplitude_floor: 0.05, min_hz: 50.0, max_hz: 5000.0 }
    }
}

/// Binary chromagram of audio on the frame grid `k / frame_rate`: a Hann
/// FFT centred on each frame, spectral peaks mapped to the nearest pitch
/// class.
pub fn audio_chromagram(audio: &AudioBuffer, frame_rate: f64, frames: usize, params: ChromaParams) -> Vec<[u8; 12]> {
    let mono = audio.to_mono();
    let sr = audio.sample_rate as f64;
    let n = params.fft_size;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let hann: Vec<f64> = (0..n).map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()).collect();
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    let mut out = Vec::with_capacity(frames);
    for k in 0..frames {
        let centre = ((k as f64 + 0.5) / frame_rate * sr).round() as i64;
        let start = centre - (n / 2) as i64;
        for (i, slot) in buf.iter_mut().enumerate() {
            let idx = start + i as i64;
            let x = if idx >= 0 && (idx as usize) < mono.len() { mono[idx as usize] as f64 } else { 0.0 };
            *slot = Complex::new(x * hann[i], 0.0);
        }
        fft.process(&mut buf);
        // Hann-windowed sinusoid of amplitude A peaks near A·N/4
        let amp: Vec<f64> = buf[..n / 2].iter().map(|c| c.norm() * 4.0 / n as f64).collect();
        let mut peaks: Vec<(f64, f64)> = Vec::new();
        for b in 1..n / 2 - 1 {
            let (l, c, r) = (amp[b - 1], amp[b], amp[b + 1]);
            if !(c > l && c >= r) || c < params.amplitude_floor {
                continue;
            }
            let (ll, lc, lr) = (l.max(1e-300).ln(), c.ln(), r.max(1e-300).ln());
            let denom = ll - 2.0 * lc + lr;
            let delta = if denom < 0.0 { (0.5 * (ll - lr) / denom).clamp(-0.5, 0.5) } else { 0.0 };
            let hz = (b as f64 + delta) * sr / n as f64;
            if hz >= params.min_hz && hz <= params.max_hz {
                peaks.push((hz, c));
            }
        }
        let strongest = peaks.iter().map(|p| p.1).fold(0.0, f64::max);
        let mut row = [0u8; 12];
        for (hz, a) in peaks {
            if a >= params.relative_threshold * strongest {
                let midi = 69.0 + 12.0 * (hz / 440.0).log2();
                row[(midi.round() as i64).rem_euclid(12) as usize] = 1;
            }
        }
        out.push(row);
    }
    out
}
