//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use songsmith::audio::{self, AudioBuffer, WavEncoding};
use songsmith::beats::{self, VoicedSegment};
use songsmith::chords::Chord;
use songsmith::conditioning::{beat_downbeat_events, ConditionBundle, SectionSpan};
use songsmith::harmonizer::{self, HarmonizerWeights};
use songsmith::lyrics::{LyricLine, LyricsSheet};
use songsmith::metrics::{self, audio_chromagram, ChromaParams, RHYTHM_TOLERANCE};
use songsmith::pipeline::artifact;
use songsmith::planner::{self, PlanOptions, WindowReference};
use songsmith::prep::{self, PenaltyBreakdown, SingerProfile};
use songsmith::render;
use songsmith::score::{Note, Section, SectionLabel, VocalScore};
use songsmith::score_io::{read_score, smf, write_score, ScoreFileFormat};

struct Outcome {
    failures: Vec<String>,
    notes: Vec<String>,
}

impl Outcome {
    fn new() -> Self {
        Outcome { failures: vec![], notes: vec![] }
    }

    fn check(&mut self, ok: bool, what: impl Into<String>) {
        if !ok {
            self.failures.push(what.into());
        }
    }

    fn note(&mut self, s: impl Into<String>) {
        self.notes.push(s.into());
    }
}

// ---------------------------------------------------------------------------
// 1. constants

fn constants() -> Outcome {
    let mut o = Outcome::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);

    // tolerance flips exactly at 70 ms
    let mut flips = 0;
    for _ in 0..1000 {
        let t = rng.random_range(0.0..300.0);
        let inside = metrics::rhythm_f1(&[t], &[t + 0.07], RHYTHM_TOLERANCE).true_positives == 1
            && metrics::rhythm_f1(&[t], &[t - 0.07], RHYTHM_TOLERANCE).true_positives == 1;
        let outside = metrics::rhythm_f1(&[t], &[t + 0.0701], RHYTHM_TOLERANCE).true_positives == 0
            && metrics::rhythm_f1(&[t], &[t - 0.0701], RHYTHM_TOLERANCE).true_positives == 0;
        flips += (inside && outside) as usize;
    }
    o.check(flips == 1000, format!("70 ms boundary held in {flips}/1000 cases"));

    // penalty weights
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let (a, b, c) = (rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>());
        worst = worst.max((PenaltyBreakdown::from_components(a, b, c).total - (0.4 * a + 0.4 * b + 0.2 * c)).abs());
    }
    for _ in 0..2000 {
        let (t, c) = (random_sheet(&mut rng), random_sheet(&mut rng));
        let p = prep::penalty_score(&t, &c, false).unwrap();
        worst = worst.max((p.total - (0.4 * p.p_sent + 0.4 * p.p_prof + 0.2 * p.p_struct)).abs());
        o.check(
            [p.p_sent, p.p_prof, p.p_struct].iter().all(|v| (0.0..=1.0).contains(v)),
            "penalty component outside [0, 1]",
        );
    }
    o.check(worst <= 1e-12, format!("penalty weight error {worst:e}"));

    // register search space
    for _ in 0..500 {
        let bars = rng.random_range(1..6);
        let score = common::random_score(&mut rng, bars, 120.0);
        let profiles: Vec<SingerProfile> = (0..rng.random_range(1..4))
            .map(|i| {
                let low = rng.random_range(30..80);
                SingerProfile::new(format!("p{i}"), low, low + rng.random_range(1..30))
            })
            .collect();
        let cands = prep::register_candidates(&score, &profiles).unwrap();
        let mut got: Vec<(usize, i32)> = cands.iter().map(|c| (c.profile, c.delta)).collect();
        got.sort();
        let want: Vec<(usize, i32)> =
            (0..profiles.len()).flat_map(|p| [-12, 0, 12].map(|d| (p, d))).collect();
        o.check(got == want, "register candidates differ from {-12, 0, +12} × profiles");
        let d = prep::register_match(&score, &profiles).unwrap();
        let best = (0..profiles.len())
            .flat_map(|p| [0, -12, 12].map(|d| (p, d)))
            .map(|(p, d)| {
                let count = score
                    .notes
                    .iter()
                    .filter(|n| {
                        let q = n.pitch as i32 + d;
                        q >= profiles[p].low as i32 && q <= profiles[p].high as i32
                    })
                    .count();
                count
            })
            .max()
            .unwrap();
        o.check(d.in_range_count == best && [-12, 0, 12].contains(&d.delta), "register_match is not the argmax");
    }

    // window length limit
    let mut longest: f64 = 0.0;
    for _ in 0..500 {
        let bpm = rng.random_range(60.0..180.0);
        let bar = 240.0 / bpm;
        let mut sections = vec![];
        let mut t = 0.0;
        let n = rng.random_range(1..6);
        for i in 0..n {
            let bars = rng.random_range(1..60) as f64;
            let label = if i == 0 && n > 1 { SectionLabel::Intro } else if i == 1 || n == 1 { SectionLabel::Verse } else { SectionLabel::Chorus };
            sections.push(SectionSpan { label, start: t, end: t + bars * bar });
            t += bars * bar;
        }
        let downbeats: Vec<f64> = (0..).map(|k| k as f64 * bar).take_while(|&x| x < t).collect();
        let plan = planner::plan_inference(&sections, &downbeats, PlanOptions::default()).unwrap();
        longest = plan.iter().map(|w| w.duration()).fold(longest, f64::max);
        o.check(planner::tiles_exactly(&plan, t), "plan does not tile the song");
    }
    o.check(longest <= 47.0 + 1e-9, format!("longest window {longest:.3} s"));
    o.note(format!("longest window {longest:.3} s"));

    // swap frequency
    let sections = vec![
        SectionSpan { label: SectionLabel::Intro, start: 0.0, end: 8.0 },
        SectionSpan { label: SectionLabel::Verse, start: 8.0, end: 40.0 },
    ];
    let swapped = (0..10_000u64)
        .filter(|&seed| planner::plan_training_slices(&sections, 0.5, seed, 47.0).unwrap()[0].reference_swapped)
        .count();
    let frac = swapped as f64 / 10_000.0;
    o.check((frac - 0.5).abs() <= 0.02, format!("swap fraction {frac}"));
    o.note(format!("swap fraction {frac:.4}"));
    o
}

fn random_sheet(rng: &mut impl Rng) -> LyricsSheet {
    let labels = [SectionLabel::Verse, SectionLabel::Chorus, SectionLabel::Bridge];
    LyricsSheet {
        lines: (0..rng.random_range(1..12))
            .map(|_| LyricLine {
                tag: labels[rng.random_range(0..3)],
                tokens: (0..rng.random_range(1..10)).map(|i| format!("t{i}")).collect(),
            })
            .collect(),
    }
}

// ---------------------------------------------------------------------------
// 2. oracle equivalence

/// Maximum one-to-one matching by exhaustive search over assignments.
fn brute_matching(r: &[f64], e: &[f64], tol: f64) -> usize {
    fn go(i: usize, used: u32, r: &[f64], e: &[f64], tol: f64, memo: &mut BTreeMap<(usize, u32), usize>) -> usize {
        if i == r.len() {
            return 0;
        }
        if let Some(&v) = memo.get(&(i, used)) {
            return v;
        }
        let mut best = go(i + 1, used, r, e, tol, memo);
        for j in 0..e.len() {
            if used & (1 << j) == 0 && (r[i] - e[j]).abs() <= tol + 1e-9 {
                best = best.max(1 + go(i + 1, used | (1 << j), r, e, tol, memo));
            }
        }
        memo.insert((i, used), best);
        best
    }
    go(0, 0, r, e, tol, &mut BTreeMap::new())
}

/// Edit distance by enumerating every alignment path.
fn brute_edit(a: &[u8], b: &[u8]) -> usize {
    match (a.split_first(), b.split_first()) {
        (None, _) => b.len(),
        (_, None) => a.len(),
        (Some((x, ra)), Some((y, rb))) => {
            let sub = brute_edit(ra, rb) + (x != y) as usize;
            let del = brute_edit(ra, b) + 1;
            let ins = brute_edit(a, rb) + 1;
            sub.min(del).min(ins)
        }
    }
}

/// Per-bar melody durations by pitch class, straight from the notes.
fn bar_histograms(score: &VocalScore) -> Vec<[f64; 12]> {
    let bar = score.ticks_per_bar() as u64;
    let bars = score.end_tick().div_ceil(bar) as usize;
    let mut out = vec![[0.0; 12]; bars];
    for n in &score.notes {
        for t in n.onset_tick as u64..n.end_tick() {
            out[(t / bar) as usize][(n.pitch % 12) as usize] += 1.0;
        }
    }
    out
}

fn brute_harmony(hist: &[[f64; 12]], w: &HarmonizerWeights) -> f64 {
    let vocab = Chord::vocabulary();
    let emit: Vec<Vec<f64>> = hist
        .iter()
        .map(|h| {
            let total: f64 = h.iter().sum();
            vocab
                .iter()
                .map(|c| w.emission_weight * c.chroma().iter().zip(h).filter(|(m, _)| **m == 1).map(|(_, d)| d).sum::<f64>() / total)
                .collect()
        })
        .collect();
    let trans = |a: usize, b: usize| {
        let common = vocab[a].chroma().iter().zip(vocab[b].chroma()).filter(|(x, y)| **x == 1 && *y == 1).count();
        w.transition_weight * common as f64 - if a == b { 0.0 } else { w.chord_change_penalty }
    };
    let t: Vec<Vec<f64>> = (0..24).map(|a| (0..24).map(|b| trans(a, b)).collect()).collect();
    fn go(k: usize, prev: usize, acc: f64, emit: &[Vec<f64>], t: &[Vec<f64>], best: &mut f64) {
        if k == emit.len() {
            *best = best.max(acc);
            return;
        }
        for c in 0..24 {
            go(k + 1, c, acc + emit[k][c] + t[prev][c], emit, t, best);
        }
    }
    let mut best = f64::NEG_INFINITY;
    for c in 0..24 {
        go(1, c, emit[0][c], &emit, &t, &mut best);
    }
    best
}

fn melody_with_full_bars(rng: &mut impl Rng, bars: u32) -> VocalScore {
    let mut s = VocalScore::new("m");
    s.sections.push(Section::new(SectionLabel::Verse, 0, bars * common::BAR));
    for b in 0..bars {
        let mut t = b * common::BAR;
        let end = t + common::BAR;
        let mut first = true;
        while t < end {
            let d = [240, 480, 960][rng.random_range(0..3)].min(end - t);
            if first || rng.random_bool(0.7) {
                s.notes.push(Note::new(t, d, rng.random_range(48..84)));
            }
            first = false;
            t += d;
        }
    }
    s
}

fn oracles() -> Outcome {
    let mut o = Outcome::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2);

    let mut bad = 0;
    for _ in 0..1000 {
        let mut r: Vec<f64> = (0..rng.random_range(0..=10)).map(|_| rng.random_range(0.0..1.5)).collect();
        let mut e: Vec<f64> = (0..rng.random_range(0..=10)).map(|_| rng.random_range(0.0..1.5)).collect();
        r.sort_by(f64::total_cmp);
        e.sort_by(f64::total_cmp);
        let tp = brute_matching(&r, &e, RHYTHM_TOLERANCE);
        let m = metrics::rhythm_f1(&r, &e, RHYTHM_TOLERANCE);
        let want = metrics::MatchReport::from_counts(tp, e.len() - tp, r.len() - tp);
        bad += (m != want) as usize;
    }
    o.check(bad == 0, format!("rhythm_f1 differs from exhaustive matching in {bad}/1000 cases"));

    let mut bad = 0;
    for _ in 0..1000 {
        let a: Vec<u8> = (0..rng.random_range(1..=8)).map(|_| rng.random_range(0..3)).collect();
        let b: Vec<u8> = (0..rng.random_range(0..=8)).map(|_| rng.random_range(0..3)).collect();
        let want = brute_edit(&a, &b) as f64 / a.len() as f64;
        bad += (metrics::per(&a, &b).unwrap() != want) as usize;
    }
    o.check(bad == 0, format!("PER differs from exhaustive alignment in {bad}/1000 cases"));

    let w = HarmonizerWeights::default();
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let bars = 1 + (i % 6) as u32;
        let score = melody_with_full_bars(&mut rng, bars);
        let seq = harmonizer::harmonize(&score, &w).unwrap();
        let chords: Vec<Chord> = seq.entries.iter().map(|e| e.chord).collect();
        let hist = bar_histograms(&score);
        let dp_score = harmonizer::path_score(&harmonizer::bar_pitch_weights(&score), &chords, &w);
        worst = worst.max((dp_score - brute_harmony(&hist, &w)).abs());
    }
    o.check(worst <= 1e-9, format!("harmonizer off the exhaustive optimum by {worst:e}"));

    let mut bad = 0;
    for _ in 0..200 {
        let target = random_sheet(&mut rng);
        let mut bank: Vec<LyricsSheet> = (0..100).map(|_| random_sheet(&mut rng)).collect();
        for _ in 0..5 {
            let (a, b) = (rng.random_range(0..100), rng.random_range(0..100));
            bank[b] = bank[a].clone();
        }
        let reject = rng.random_bool(0.5);
        let mut best: Option<(usize, f64)> = None;
        for (i, c) in bank.iter().enumerate() {
            let p = prep::penalty_score(&target, c, reject).unwrap().total;
            if p.is_finite() && best.is_none_or(|(_, b)| p < b) {
                best = Some((i, p));
            }
        }
        let got = prep::select_reference(&target, &bank, reject).ok().map(|(i, p)| (i, p.total));
        bad += (got != best) as usize;
    }
    o.check(bad == 0, format!("select_reference differs from a linear scan in {bad}/200 banks"));
    o
}

// ---------------------------------------------------------------------------
// 3. closed loop

fn closed_loop() -> Outcome {
    let mut o = Outcome::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut min_events, mut min_audio, mut min_chord, mut min_key) = (1.0f64, 1.0f64, 1.0f64, 1.0f64);
    for song in 0..20 {
        let bars = rng.random_range(8..=32);
        let bpm = rng.random_range(60.0..=160.0);
        let score = common::random_score(&mut rng, bars, bpm);
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("song.score.json"), write_score(&score, ScoreFileFormat::CanonicalText).unwrap())
            .unwrap();
        let config = songsmith::pipeline::PipelineConfig::from_toml("score = \"song.score.json\"", dir.path()).unwrap();
        songsmith::pipeline::run_pipeline(&config, songsmith::pipeline::Stage::Load).unwrap();
        let out = config.out_dir();

        let arranged = read_score(&std::fs::read(out.join(artifact::ARRANGED_SCORE)).unwrap(), ScoreFileFormat::CanonicalText)
            .unwrap();
        let bundle = ConditionBundle::from_json(&std::fs::read_to_string(out.join(artifact::CONDITIONS)).unwrap()).unwrap();
        let acc = audio::read_wav(&std::fs::read(out.join(artifact::ACCOMPANIMENT)).unwrap()).unwrap();
        let log = render::beat_times_from_text(&std::fs::read_to_string(out.join(artifact::EVENTS)).unwrap());

        let (beats, _) = beat_downbeat_events(&arranged).unwrap();
        let column: Vec<f64> = bundle.rhythm.iter().map(|r| r[0]).collect();
        let bundle_beats = render::activation_peaks(&column, bundle.frame_rate, render::PEAK_THRESHOLD);
        let f_events = metrics::rhythm_f1(&bundle_beats, &log, RHYTHM_TOLERANCE)
            .f1
            .min(metrics::rhythm_f1(&beats, &log, RHYTHM_TOLERANCE).f1);
        let peaks = common::energy_peaks(&acc.channels[0], acc.sample_rate);
        let f_audio = metrics::rhythm_f1(&log, &peaks, 0.005).f1;
        let chroma = audio_chromagram(&acc, bundle.frame_rate, bundle.frames(), ChromaParams::default());
        let f_chord = metrics::chord_f1(&bundle.chroma, &chroma).unwrap();
        let (expected, estimated): (Vec<_>, Vec<_>) = bundle
            .key_per_section
            .iter()
            .map(|k| {
                let s = &bundle.sections[k.section];
                let rows = metrics::binary_to_real(&chroma[bundle.frame_range(s.start, s.end)]);
                (k.key, metrics::estimate_key(&rows).unwrap())
            })
            .unzip();
        let key_acc = metrics::key_accuracy(&expected, &estimated).unwrap();
        if f_events < 0.99 || f_audio < 0.99 || f_chord < 0.95 || key_acc < 1.0 {
            o.note(format!(
                "song {song} ({bars} bars, {bpm:.1} BPM): events {f_events:.4} audio {f_audio:.4} chord {f_chord:.4} key {key_acc:.4}"
            ));
        }
        min_events = min_events.min(f_events);
        min_audio = min_audio.min(f_audio);
        min_chord = min_chord.min(f_chord);
        min_key = min_key.min(key_acc);
    }
    o.check(min_events >= 0.99, format!("event-log rhythm F1 {min_events:.4} < 0.99"));
    o.check(min_audio >= 0.99, format!("audio energy peaks vs log (5 ms) F1 {min_audio:.4} < 0.99"));
    o.check(min_chord >= 0.95, format!("chord F1 {min_chord:.4} < 0.95"));
    o.check(min_key >= 1.0, format!("key accuracy {min_key:.4} < 1"));
    o.note(format!(
        "min over 20 songs: rhythm events {min_events:.4}, audio {min_audio:.4}, chord {min_chord:.4}, key {min_key:.4}"
    ));
    o
}

// ---------------------------------------------------------------------------
// 4. beat interpolation

fn beat_interpolation() -> Outcome {
    let mut o = Outcome::new();
    let mut rng = ChaCha8Rng::seed_from_u64(4);

    let mut worst: f64 = 0.0;
    for case in 0..1000 {
        let bpm = rng.random_range(60.0..180.0);
        let d = 60.0 / bpm;
        let a0 = rng.random_range(0.0..2.0);
        let na = rng.random_range(2..16);
        let seg_a: Vec<f64> = (0..na).map(|k| a0 + k as f64 * d).collect();
        let gap_beats = rng.random_range(2..20);
        // half the cases keep the grid phase across the gap
        let jitter: f64 = if case % 2 == 0 { 0.0 } else { rng.random_range(-0.4..0.4) * d };
        let b0 = seg_a[na - 1] + gap_beats as f64 * d + jitter;
        let nb = rng.random_range(2..16);
        let seg_b: Vec<f64> = (0..nb).map(|k| b0 + k as f64 * d).collect();
        let total = seg_b[nb - 1] + rng.random_range(0.0..3.0);
        let segs = [
            VoicedSegment { start: seg_a[0] - 0.01, end: seg_a[na - 1] + 0.01 },
            VoicedSegment { start: seg_b[0] - 0.01, end: seg_b[nb - 1] + 0.01 },
        ];
        let grid = beats::interpolate_beats(&[seg_a.clone(), seg_b.clone()], &segs, total).unwrap();
        let gap: Vec<f64> =
            grid.beats.iter().copied().filter(|&t| t > seg_a[na - 1] + 1e-9 && t < seg_b[0] - 1e-9).collect();
        let mut chain = vec![seg_a[na - 1]];
        chain.extend(&gap);
        for w in chain.windows(2) {
            worst = worst.max((w[1] - w[0] - d).abs());
        }
        if case % 2 == 0 {
            for w in grid.beats.windows(2) {
                worst = worst.max((w[1] - w[0] - d).abs());
            }
        }
    }
    o.check(worst <= 1e-9, format!("gap spacing off by {worst:e}"));

    let mut non_monotone = 0;
    for _ in 0..1000 {
        let total = rng.random_range(5.0..120.0);
        let mut segs = vec![];
        let mut t = rng.random_range(0.0..3.0);
        while t < total - 1.0 && segs.len() < 5 {
            let end = (t + rng.random_range(0.5..20.0f64)).min(total);
            segs.push(VoicedSegment { start: t, end });
            t = end + rng.random_range(0.1..10.0);
        }
        if segs.is_empty() {
            segs.push(VoicedSegment { start: 0.0, end: total });
        }
        let lists: Vec<Vec<f64>> = segs
            .iter()
            .map(|s| {
                let d = 60.0 / rng.random_range(50.0..200.0);
                let mut v: Vec<f64> = (0..)
                    .map(|k| s.start + k as f64 * d + rng.random_range(-0.03..0.03))
                    .take_while(|&x| x < s.end + 0.5)
                    .collect();
                v.push(rng.random_range(0.0..total));
                v
            })
            .collect();
        match beats::interpolate_beats(&lists, &segs, total) {
            Ok(g) => {
                let ok = g.is_consistent() && g.beats.iter().all(|&b| (0.0..=total + 1e-9).contains(&b));
                non_monotone += (!ok) as usize;
            }
            Err(beats::BeatError::NoTempoEvidence) => {}
            Err(e) => {
                o.check(false, format!("unexpected error {e}"));
            }
        }
    }
    o.check(non_monotone == 0, format!("{non_monotone}/1000 grids not strictly increasing"));

    // 60 s song at 100 BPM with a silent bridge from 25 s to 35 s
    let sr = 16_000u32;
    let d = 0.6;
    let total = 60.0;
    let truth: Vec<f64> = (0..).map(|k| 0.3 + k as f64 * d).take_while(|&t| t <= total).collect();
    let voiced = |t: f64| !(25.0..35.0).contains(&t);
    let samples: Vec<f32> = (0..(total * sr as f64) as usize)
        .map(|n| {
            let t = n as f64 / sr as f64;
            if voiced(t) {
                (0.4 * (2.0 * std::f64::consts::PI * 220.0 * t).sin()) as f32
            } else {
                0.0
            }
        })
        .collect();
    let song = AudioBuffer::mono(sr, samples);
    let segments = beats::detect_voiced_segments(&song, 0.02, -30.0).unwrap();
    let detected: Vec<f64> = truth
        .iter()
        .enumerate()
        .filter(|(i, &t)| voiced(t) && i % 17 != 5)
        .map(|(_, &t)| t + rng.random_range(-0.02..0.02))
        .collect();
    let per_segment: Vec<Vec<f64>> = segments
        .iter()
        .map(|s| detected.iter().copied().filter(|&t| t >= s.start && t <= s.end).collect())
        .collect();
    let grid = beats::interpolate_beats(&per_segment, &segments, total).unwrap();
    let f1 = metrics::rhythm_f1(&truth, &grid.beats, RHYTHM_TOLERANCE).f1;
    let bridge_only: Vec<f64> = truth.iter().copied().filter(|&t| !voiced(t)).collect();
    let bridge_est: Vec<f64> = grid.beats.iter().copied().filter(|&t| !voiced(t)).collect();
    let f1_bridge = metrics::rhythm_f1(&bridge_only, &bridge_est, RHYTHM_TOLERANCE).f1;
    o.check(segments.len() == 2, format!("{} voiced segments detected", segments.len()));
    o.check(f1 >= 0.95, format!("bridge song F1 {f1:.4}"));
    o.note(format!("bridge song F1 {f1:.4} (inside the silent bridge {f1_bridge:.4})"));
    o
}

// ---------------------------------------------------------------------------
// 5. formats

fn formats() -> Outcome {
    let mut o = Outcome::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);

    let mut smf_bad = 0;
    let mut text_bad = 0;
    let mut valid_smf = Vec::new();
    for _ in 0..500 {
        let s = common::random_rich_score(&mut rng);
        let bytes = smf::write(&s).unwrap();
        smf_bad += (smf::read(&bytes).ok().as_ref() != Some(&s)) as usize;
        let text = write_score(&s, ScoreFileFormat::CanonicalText).unwrap();
        text_bad += (read_score(&text, ScoreFileFormat::CanonicalText).ok().as_ref() != Some(&s)) as usize;
        valid_smf.push(bytes);
    }
    o.check(smf_bad == 0, format!("{smf_bad}/500 SMF round trips differ"));
    o.check(text_bad == 0, format!("{text_bad}/500 canonical text round trips differ"));

    let mut wav_bad = 0;
    let mut valid_wav = Vec::new();
    for i in 0..500 {
        let channels = rng.random_range(1..=2);
        let len = rng.random_range(0..3000);
        let sample_rate = [8000, 22_050, 44_100, 48_000][rng.random_range(0..4)];
        let buf = AudioBuffer {
            sample_rate,
            channels: (0..channels).map(|_| (0..len).map(|_| rng.random_range(-1.0f32..1.0)).collect()).collect(),
        };
        let enc = if i % 2 == 0 { WavEncoding::Pcm16 } else { WavEncoding::Float32 };
        let bytes = audio::write_wav(&buf, enc).unwrap();
        let back = audio::read_wav(&bytes).unwrap();
        let ok = back.sample_rate == buf.sample_rate
            && back.channels.len() == buf.channels.len()
            && back.channels.iter().zip(&buf.channels).all(|(a, b)| {
                a.len() == b.len()
                    && a.iter().zip(b).all(|(x, y)| match enc {
                        WavEncoding::Float32 => x.to_bits() == y.to_bits(),
                        WavEncoding::Pcm16 => (x - y).abs() <= 1.0 / 32768.0,
                    })
            });
        wav_bad += (!ok) as usize;
        valid_wav.push(bytes);
    }
    o.check(wav_bad == 0, format!("{wav_bad}/500 WAV round trips out of tolerance"));

    // fuzz: half pure noise, half mutated valid files
    let prev_hook = std::panic::take_hook();
    std::panic::set_hook(Box::new(|_| {}));
    let (mut smf_panics, mut wav_panics) = (0, 0);
    let mut corpus: Vec<Vec<u8>> =
        (0..10_000).map(|_| (0..rng.random_range(0..512)).map(|_| rng.random()).collect()).collect();
    // plus mutated valid files, which get past the header checks
    for i in 0..2000 {
        let mut b = if i % 2 == 0 { valid_smf[i % 500].clone() } else { valid_wav[i % 500].clone() };
        for _ in 0..rng.random_range(1..8) {
            if b.is_empty() {
                break;
            }
            let k = rng.random_range(0..b.len());
            match rng.random_range(0..3) {
                0 => b[k] = rng.random(),
                1 => b.truncate(k),
                _ => b.insert(k, rng.random()),
            }
        }
        corpus.push(b);
    }
    for bytes in &corpus {
        smf_panics += std::panic::catch_unwind(|| {
            let _ = read_score(bytes, ScoreFileFormat::Smf);
        })
        .is_err() as usize;
        wav_panics += std::panic::catch_unwind(|| {
            let _ = audio::read_wav(bytes);
        })
        .is_err() as usize;
    }
    std::panic::set_hook(prev_hook);
    o.check(smf_panics == 0, format!("SMF reader panicked on {smf_panics}/{} inputs", corpus.len()));
    o.check(wav_panics == 0, format!("WAV reader panicked on {wav_panics}/{} inputs", corpus.len()));
    o
}

// ---------------------------------------------------------------------------
// 6. determinism and editability

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

fn cli(args: &[&str]) -> std::process::Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_songsmith")).args(args).output().unwrap()
}

fn determinism() -> Outcome {
    let mut o = Outcome::new();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let score = common::random_score(&mut rng, 12, 112.0);
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("song.mid"), smf::write(&score).unwrap()).unwrap();
    let config = dir.path().join("song.toml");
    std::fs::write(&config, "score = \"song.mid\"\noutput_dir = \"out\"\nseed = 11\nprompt = \"warm piano ballad\"\n")
        .unwrap();
    let config = config.to_str().unwrap();
    let out = dir.path().join("out");

    let first = cli(&["run", "--config", config]);
    o.check(first.status.success(), format!("first run failed: {}", String::from_utf8_lossy(&first.stderr)));
    let a = snapshot(&out);
    let second = cli(&["run", "--config", config]);
    o.check(second.status.success(), "second run failed");
    let b = snapshot(&out);
    o.check(!a.is_empty() && a == b, "rerun with the same seed is not byte-identical");

    // swap one chord in the middle of the progression
    let chords_path = out.join(artifact::CHORDS);
    let text = std::fs::read_to_string(&chords_path).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let mid = lines.len() / 2;
    let mut fields: Vec<String> = lines[mid].split_whitespace().map(str::to_string).collect();
    let old: Chord = fields[2].parse().unwrap();
    fields[2] = old.transpose(6).to_string();
    lines[mid] = fields.join(" ");
    std::fs::write(&chords_path, lines.join("\n") + "\n").unwrap();
    let edited_chords = std::fs::read(&chords_path).unwrap();

    let rerun = cli(&["run", "--config", config, "--from", "condition"]);
    o.check(rerun.status.success(), format!("rerun from condition failed: {}", String::from_utf8_lossy(&rerun.stderr)));
    let c = snapshot(&out);
    let upstream = [
        artifact::INPUT_SCORE,
        artifact::REGISTER,
        artifact::REGISTERED_SCORE,
        artifact::ARRANGED_SCORE,
    ];
    let downstream = [
        artifact::CONDITIONS,
        artifact::KEYS,
        artifact::PLAN,
        artifact::TRAINING_SLICES,
        artifact::ACCOMPANIMENT,
        artifact::EVENTS,
        artifact::VOCAL,
        artifact::MIX,
        artifact::REPORT_JSON,
        artifact::REPORT_TEXT,
        artifact::MANIFEST,
    ];
    for name in upstream {
        o.check(a.get(name) == c.get(name), format!("upstream artifact {name} changed"));
    }
    o.check(c.get(artifact::CHORDS) == Some(&edited_chords), "edited chord file was overwritten");
    let changed: Vec<&String> = c.keys().filter(|k| a.get(*k) != c.get(*k)).collect();
    for name in &changed {
        o.check(
            downstream.contains(&name.as_str()) || name.as_str() == artifact::CHORDS,
            format!("unexpected change to {name}"),
        );
    }
    for name in [artifact::CONDITIONS, artifact::ACCOMPANIMENT, artifact::MIX] {
        o.check(changed.iter().any(|c| c.as_str() == name), format!("{name} did not change after the chord edit"));
    }
    o.note(format!("changed after edit: {}", changed.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")));

    let bundle = ConditionBundle::from_json(&String::from_utf8(c[artifact::CONDITIONS].clone()).unwrap()).unwrap();
    let plan: songsmith::pipeline::PlanDocument = serde_json::from_slice(&c[artifact::PLAN]).unwrap();
    o.check(
        plan.windows.iter().any(|w| w.window.reference == WindowReference::None)
            && plan.windows.iter().all(|w| w.prompt.as_deref() == Some("warm piano ballad")),
        "plan lost its verse-first window or prompts",
    );
    o.check(bundle.shapes_consistent(), "edited bundle has inconsistent shapes");
    o
}

fn main() {
    type Criterion = (&'static str, fn() -> Outcome, Duration);
    let criteria: [Criterion; 6] = [
        ("1 fixed constants", constants, Duration::from_secs(5)),
        ("2 oracle equivalence", oracles, Duration::from_secs(60)),
        ("3 closed-loop conditioning fidelity", closed_loop, Duration::from_secs(120)),
        ("4 beat interpolation", beat_interpolation, Duration::from_secs(60)),
        ("5 format round trips and fuzzing", formats, Duration::from_secs(60)),
        ("6 pipeline determinism and editability", determinism, Duration::from_secs(120)),
    ];
    let mut failed = 0;
    for (name, run, limit) in criteria {
        let start = Instant::now();
        let mut outcome = run();
        let elapsed = start.elapsed();
        if elapsed > limit {
            outcome.failures.push(format!("took {elapsed:.2?}, limit {limit:?}"));
        }
        let verdict = if outcome.failures.is_empty() { "PASS" } else { "FAIL" };
        println!("criterion {name}: {verdict} ({elapsed:.2?})");
        for n in &outcome.notes {
            println!("    {n}");
        }
        for f in &outcome.failures {
            println!("    failure: {f}");
        }
        failed += (!outcome.failures.is_empty()) as usize;
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
