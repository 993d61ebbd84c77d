//! Reference implementations used to cross-check the library. Each one is
//! deliberately naive and shares no code with the implementation it checks.

#![allow(dead_code)]

use hleval_core::corpus::{
    DialogueRecord, EventAnnotation, EventKind, GazeInterval, GazeTarget, Millis, PartOfSpeech, SampleWindow,
    SpeakerChannel, SystemType, Token, UtteranceSegment,
};
use rand::Rng;

// ---------------------------------------------------------------- Spearman

/// Rank by counting: 1 + (number smaller) + (number equal - 1) / 2.
fn counting_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&a| {
            let less = v.iter().filter(|&&b| b < a).count() as f64;
            let equal = v.iter().filter(|&&b| b == a).count() as f64;
            1.0 + less + (equal - 1.0) / 2.0
        })
        .collect()
}

/// Textbook Pearson on counting ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    let (rx, ry) = (counting_ranks(x), counting_ranks(y));
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}

// ---------------------------------------------------------------- features

/// Millisecond tracks of one dialogue, built once and scanned per window.
pub struct Sweep<'a> {
    user_active: Vec<bool>,
    onsets: Vec<Vec<&'a UtteranceSegment>>,
    partner: Vec<bool>,
    event_onsets: Vec<[usize; 4]>,
    /// (speaker is user, start, end) of each turn.
    turns: Vec<(bool, Millis, Millis)>,
}

impl<'a> Sweep<'a> {
    pub fn new(d: &'a DialogueRecord, merge_gap: Millis) -> Self {
        let len = d.duration as usize + 1;
        let mut user_active = vec![false; len];
        let mut onsets: Vec<Vec<&UtteranceSegment>> = vec![Vec::new(); len];
        for s in &d.user.segments {
            for t in s.start..s.end {
                user_active[t as usize] = true;
            }
            onsets[s.start as usize].push(s);
        }
        let mut partner = vec![false; len];
        for g in d.gaze.iter().filter(|g| g.target == GazeTarget::Partner) {
            for t in g.start..g.end {
                partner[t as usize] = true;
            }
        }
        let mut event_onsets = vec![[0usize; 4]; len];
        for e in &d.user.events {
            event_onsets[e.start as usize][e.kind as usize] += 1;
        }

        // Turns from filled activity tracks.
        let track = |ch: &SpeakerChannel| {
            let mut active = vec![false; len];
            for s in &ch.segments {
                let covered = ch
                    .events
                    .iter()
                    .any(|e| e.kind == EventKind::Backchannel && e.start <= s.start && s.end <= e.end);
                if !covered {
                    for t in s.start..s.end {
                        active[t as usize] = true;
                    }
                }
            }
            // Fill interior silences shorter than the merge gap.
            let mut t = 0;
            let mut last_end: Option<usize> = None;
            while t < len {
                if active[t] {
                    if let Some(e) = last_end {
                        if ((t - e) as Millis) < merge_gap {
                            for f in &mut active[e..t] {
                                *f = true;
                            }
                        }
                    }
                    while t < len && active[t] {
                        t += 1;
                    }
                    last_end = Some(t);
                } else {
                    t += 1;
                }
            }
            active
        };
        let sys = track(&d.system);
        let usr = track(&d.user);
        let run_end = |a: &[bool], t: usize| (t..len).find(|&u| !a[u]).unwrap_or(len) as Millis;
        let mut turns: Vec<(bool, Millis, Millis)> = Vec::new();
        for t in 0..len {
            for (is_user, a) in [(false, &sys), (true, &usr)] {
                if a[t] && (t == 0 || !a[t - 1]) {
                    let end = run_end(a, t);
                    match turns.last_mut() {
                        Some(last) if last.0 == is_user => last.2 = last.2.max(end),
                        _ => turns.push((is_user, t as Millis, end)),
                    }
                }
            }
        }
        Sweep {
            user_active,
            onsets,
            partner,
            event_onsets,
            turns,
        }
    }

    /// Seventeen per-window values. Durations in seconds, the switching
    /// pause `None` when undefined.
    pub fn window(&self, w: &SampleWindow) -> [Option<f64>; 17] {
        let in_window = |t: Millis| w.start <= t && t < w.end;
        let mut speech_ms = 0;
        let mut n_utt = 0;
        let mut words: Vec<&Token> = Vec::new();
        let mut gaze_ms = 0;
        let mut shifts = 0;
        let mut events = [0usize; 4];
        for t in w.start..w.end {
            let i = t as usize;
            if self.user_active[i] {
                speech_ms += 1;
            }
            n_utt += self.onsets[i].len();
            for s in &self.onsets[i] {
                words.extend(&s.tokens);
            }
            if self.partner[i] {
                gaze_ms += 1;
                if t > w.start && !self.partner[i - 1] {
                    shifts += 1;
                }
            }
            for (k, c) in self.event_onsets[i].iter().enumerate() {
                events[k] += c;
            }
        }
        let mut surfaces: Vec<&str> = words.iter().map(|t| t.surface.as_str()).collect();
        surfaces.sort();
        surfaces.dedup();
        let content: Vec<&&Token> = words.iter().filter(|t| t.pos != PartOfSpeech::Other).collect();
        let mut content_surfaces: Vec<&str> = content.iter().map(|t| t.surface.as_str()).collect();
        content_surfaces.sort();
        content_surfaces.dedup();

        let mut n_turns = 0;
        let mut turn_ms = 0;
        let mut pauses = Vec::new();
        for (i, &(is_user, start, end)) in self.turns.iter().enumerate() {
            if is_user && in_window(start) {
                n_turns += 1;
                turn_ms += end - start;
                if i > 0 && !self.turns[i - 1].0 {
                    pauses.push(start - self.turns[i - 1].2);
                }
            }
        }

        let secs = |ms: Millis| ms as f64 / 1000.0;
        let avg = |ms: Millis, n: usize| if n == 0 { 0.0 } else { secs(ms) / n as f64 };
        let count = |kind: EventKind| events[kind as usize] as f64;
        [
            Some(secs(speech_ms)),
            Some(avg(speech_ms, n_utt)),
            Some(n_utt as f64),
            Some(words.len() as f64),
            Some(surfaces.len() as f64),
            Some(content.len() as f64),
            Some(content_surfaces.len() as f64),
            Some(shifts as f64),
            Some(secs(gaze_ms)),
            Some(avg(gaze_ms, shifts)),
            Some(n_turns as f64),
            Some(avg(turn_ms, n_turns)),
            (!pauses.is_empty()).then(|| avg(pauses.iter().sum(), pauses.len())),
            Some(count(EventKind::Backchannel)),
            Some(count(EventKind::Filler)),
            Some(count(EventKind::Laugh)),
            Some(count(EventKind::Disfluency)),
        ]
    }
}

/// Non-overlapping sorted spans inside `[0, duration)`.
fn random_spans<R: Rng>(rng: &mut R, duration: Millis, max_gap: Millis, max_len: Millis) -> Vec<(Millis, Millis)> {
    let mut spans = Vec::new();
    let mut t = rng.random_range(0..max_gap);
    loop {
        let len = rng.random_range(1..max_len);
        if t + len > duration {
            break;
        }
        spans.push((t, t + len));
        t += len + rng.random_range(0..max_gap);
    }
    spans
}

fn random_channel<R: Rng>(rng: &mut R, duration: Millis) -> SpeakerChannel {
    const POS: [PartOfSpeech; 6] = [
        PartOfSpeech::Noun,
        PartOfSpeech::Verb,
        PartOfSpeech::Adjective,
        PartOfSpeech::Adverb,
        PartOfSpeech::Conjunction,
        PartOfSpeech::Other,
    ];
    const KINDS: [EventKind; 4] = [
        EventKind::Backchannel,
        EventKind::Filler,
        EventKind::Laugh,
        EventKind::Disfluency,
    ];
    let segments: Vec<UtteranceSegment> = random_spans(rng, duration, 1500, 6000)
        .into_iter()
        .map(|(s, e)| {
            let n = rng.random_range(0..8);
            let tokens = (0..n)
                .map(|_| Token::new(format!("t{}", rng.random_range(0..12)), POS[rng.random_range(0..6)]))
                .collect();
            UtteranceSegment::new(s, e, tokens)
        })
        .collect();
    let mut events = Vec::new();
    for seg in &segments {
        // Some segments are exactly covered by a backchannel.
        if rng.random_bool(0.2) {
            events.push(EventAnnotation::new(EventKind::Backchannel, seg.start, seg.end));
        }
    }
    for _ in 0..rng.random_range(0..15) {
        let start = rng.random_range(0..duration);
        let end = (start + rng.random_range(0..800)).min(duration);
        events.push(EventAnnotation::new(KINDS[rng.random_range(0..4)], start, end));
    }
    events.sort_by_key(|e| (e.start, e.end));
    SpeakerChannel { segments, events }
}

/// A dialogue of at most `max_duration` ms with overlapping speakers,
/// backchannel-covered segments and gaze with unannotated gaps.
pub fn random_dialogue<R: Rng>(rng: &mut R, id: &str, max_duration: Millis) -> DialogueRecord {
    let duration = rng.random_range(5_000..=max_duration);
    let mut gaze = Vec::new();
    let mut last: Option<GazeTarget> = None;
    for (s, e) in random_spans(rng, duration, 700, 5000) {
        let touching = gaze.last().is_some_and(|g: &GazeInterval| g.end == s);
        let target = match (touching, last) {
            (true, Some(GazeTarget::Partner)) => GazeTarget::Away,
            (true, Some(GazeTarget::Away)) => GazeTarget::Partner,
            _ if rng.random_bool(0.5) => GazeTarget::Partner,
            _ => GazeTarget::Away,
        };
        gaze.push(GazeInterval::new(s, e, target));
        last = Some(target);
    }
    DialogueRecord {
        dialogue_id: id.to_string(),
        system_type: SystemType::Autonomous,
        duration,
        user: random_channel(rng, duration),
        system: random_channel(rng, duration),
        gaze,
        questionnaire: None,
    }
}

// ---------------------------------------------------------------- SVR dual

/// Solves `a x = b` by Gaussian elimination with partial pivoting; `None`
/// when the matrix is numerically singular.
fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let m = b.len();
    for col in 0..m {
        let pivot = (col..m).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-10 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..m {
            let f = a[row][col] / a[col][col];
            let (upper, lower) = a.split_at_mut(row);
            for (x, p) in lower[0][col..].iter_mut().zip(&upper[col][col..]) {
                *x -= f * p;
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; m];
    for row in (0..m).rev() {
        let tail: f64 = (row + 1..m).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    Some(x)
}

/// Exact maximizer of the epsilon-SVR dual for small n by enumerating every
/// face of the box: each beta_i is -C, free negative, 0, free positive or C.
/// On each face the stationary point of the equality-constrained quadratic
/// comes from its KKT system; the best feasible one wins.
pub fn dual_maximizer(k: &[Vec<f64>], y: &[f64], c: f64, eps: f64) -> Vec<f64> {
    let n = y.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for code in 0..5usize.pow(n as u32) {
        let state: Vec<usize> = (0..n).map(|i| code / 5usize.pow(i as u32) % 5).collect();
        let mut beta = vec![0.0; n];
        let mut free = Vec::new();
        for i in 0..n {
            match state[i] {
                0 => beta[i] = -c,
                4 => beta[i] = c,
                1 | 3 => free.push(i),
                _ => {}
            }
        }
        let fixed_sum: f64 = beta.iter().sum();
        if free.is_empty() {
            if fixed_sum.abs() > 1e-12 {
                continue;
            }
        } else {
            let m = free.len();
            let mut a = vec![vec![0.0; m + 1]; m + 1];
            let mut rhs = vec![0.0; m + 1];
            for (r, &i) in free.iter().enumerate() {
                let sign = if state[i] == 3 { 1.0 } else { -1.0 };
                for (col, &j) in free.iter().enumerate() {
                    a[r][col] = k[i][j];
                }
                a[r][m] = 1.0;
                a[m][r] = 1.0;
                rhs[r] = y[i] - eps * sign - (0..n).map(|j| k[i][j] * beta[j]).sum::<f64>();
            }
            rhs[m] = -fixed_sum;
            let Some(sol) = solve_linear(a, rhs) else { continue };
            let mut ok = true;
            for (r, &i) in free.iter().enumerate() {
                let v = sol[r];
                ok &= if state[i] == 3 {
                    (-1e-12..=c + 1e-12).contains(&v)
                } else {
                    (-c - 1e-12..=1e-12).contains(&v)
                };
                beta[i] = v.clamp(-c, c);
            }
            if !ok {
                continue;
            }
        }
        let value = dual_value(k, y, &beta, eps);
        if best.as_ref().is_none_or(|(b, _)| value > *b) {
            best = Some((value, beta));
        }
    }
    best.expect("beta = 0 is always feasible").1
}

/// sum(y*beta) - eps*sum|beta| - 1/2 beta' K beta, written out again.
pub fn dual_value(k: &[Vec<f64>], y: &[f64], beta: &[f64], eps: f64) -> f64 {
    let n = y.len();
    let mut v = 0.0;
    for i in 0..n {
        v += y[i] * beta[i] - eps * beta[i].abs();
        for j in 0..n {
            v -= 0.5 * beta[i] * beta[j] * k[i][j];
        }
    }
    v
}
