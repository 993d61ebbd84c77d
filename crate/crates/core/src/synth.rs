//! Synthetic corpora with a planted latent human-likeness.
//!
//! Every dialogue gets a latent `h` in [0, 1]. User behavior rates move
//! with `h - 0.5` through the configured slopes, and each sample's verdicts
//! are `k` Bernoulli draws with P(HUMAN) = clamp(h + noise). All numeric
//! defaults here are generator design values, not measurements.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    CorpusBundle, DialogueRecord, EventAnnotation, EventKind, GazeInterval, GazeTarget, Judgment, Millis, PartOfSpeech,
    SpeakerChannel, SystemType, Token, UtteranceSegment, Verdict, QUESTIONNAIRE_ITEMS, QUESTIONNAIRE_MAX,
    QUESTIONNAIRE_MIN,
};
use crate::features::Feature;
use crate::sampling::{allocate, annotator_ids, segment_all, AllocationParams, SamplingError};

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
}

/// Slopes per unit of `h - 0.5`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EffectSizes {
    /// Relative change of user segment length.
    pub speech: f64,
    /// Relative change of the user's vocabulary size.
    pub vocabulary: f64,
    /// Relative shortening of AWAY gaze runs.
    pub gaze_shifts: f64,
    /// Seconds added to the mean switching pause.
    pub switching_pause: f64,
    /// Added probability of a user backchannel per system utterance.
    pub backchannel: f64,
    /// Added laugh rate per user turn.
    pub laugh: f64,
}

impl Default for EffectSizes {
    fn default() -> Self {
        EffectSizes {
            speech: 1.2,
            vocabulary: 1.5,
            gaze_shifts: 1.2,
            switching_pause: -0.8,
            backchannel: 0.8,
            laugh: 0.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_dialogues: usize,
    /// Fraction of WOZ dialogues; the count is rounded to nearest.
    pub p_woz: f64,
    pub duration_s: f64,
    pub window_s: f64,
    pub hop_s: f64,
    pub k: usize,
    pub n_annotators: usize,
    pub load_min: usize,
    pub load_max: usize,
    pub woz_h_mean: f64,
    pub autonomous_h_mean: f64,
    pub h_spread: f64,
    pub effects: EffectSizes,
    /// Standard deviation of the per-sample perturbation of P(HUMAN).
    pub judgment_noise: f64,
    /// Questionnaire slope per item, in scale points per unit of `h - 0.5`.
    pub questionnaire_slopes: Vec<f64>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let mut questionnaire_slopes = vec![0.0; QUESTIONNAIRE_ITEMS];
        questionnaire_slopes[12] = 4.0;
        SynthConfig {
            n_dialogues: 69,
            p_woz: 49.0 / 69.0,
            duration_s: 480.0,
            window_s: 60.0,
            hop_s: 60.0,
            k: 5,
            n_annotators: 78,
            load_min: 50,
            load_max: 70,
            woz_h_mean: 0.65,
            autonomous_h_mean: 0.35,
            h_spread: 0.18,
            effects: EffectSizes::default(),
            judgment_noise: 0.1,
            questionnaire_slopes,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn check(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidConfig(m.to_string()));
        let e = &self.effects;
        let slopes = [
            e.speech,
            e.vocabulary,
            e.gaze_shifts,
            e.switching_pause,
            e.backchannel,
            e.laugh,
        ];
        if self.n_dialogues < 2 {
            return bad("n_dialogues must be at least 2");
        }
        if !(0.0..=1.0).contains(&self.p_woz) {
            return bad("p_woz must lie in [0, 1]");
        }
        if !(self.duration_s > 0.0 && self.window_s > 0.0 && self.hop_s > 0.0) {
            return bad("duration, window and hop must be positive");
        }
        if ![self.woz_h_mean, self.autonomous_h_mean]
            .iter()
            .all(|m| (0.0..=1.0).contains(m))
        {
            return bad("latent means must lie in [0, 1]");
        }
        if !(self.h_spread >= 0.0 && self.judgment_noise >= 0.0) {
            return bad("spread and noise must be non-negative");
        }
        if slopes.iter().chain(&self.questionnaire_slopes).any(|s| !s.is_finite()) {
            return bad("slopes must be finite");
        }
        if self.questionnaire_slopes.len() != QUESTIONNAIRE_ITEMS {
            return bad("questionnaire_slopes needs one entry per item");
        }
        Ok(())
    }

    /// Features whose correlation with the score has a designed sign.
    pub fn planted(&self) -> Vec<(Feature, f64)> {
        let e = &self.effects;
        [
            (Feature::TotalUtteranceTime, e.speech),
            (Feature::NWords, e.speech),
            (Feature::NUniqueWords, e.vocabulary),
            (Feature::NGazeShifts, e.gaze_shifts),
            (Feature::AvgSwitchingPause, e.switching_pause),
            (Feature::NBackchannels, e.backchannel),
            (Feature::NLaughs, e.laugh),
        ]
        .into_iter()
        .filter(|(_, s)| *s != 0.0)
        .map(|(f, s)| (f, s.signum()))
        .collect()
    }
}

/// Latent truth behind a generated corpus. Kept out of the corpus file.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub latent: BTreeMap<String, f64>,
    /// Planted features with their intended correlation sign (+1 or -1).
    pub planted: Vec<(Feature, f64)>,
}

#[derive(Serialize)]
struct LatentLine<'a> {
    dialogue_id: &'a str,
    h: f64,
}

/// Writes the `{dialogue_id, h}` sidecar, one JSON object per line.
pub fn write_ground_truth<W: Write>(truth: &GroundTruth, mut out: W) -> std::io::Result<()> {
    for (dialogue_id, &h) in &truth.latent {
        let line = serde_json::to_string(&LatentLine { dialogue_id, h }).expect("plain struct");
        writeln!(out, "{line}")?;
    }
    Ok(())
}

fn ms(secs: f64) -> Millis {
    (secs * 1000.0).round() as Millis
}

fn normal(rng: &mut ChaCha8Rng, mean: f64, sd: f64) -> f64 {
    Normal::new(mean, sd).expect("finite parameters").sample(rng)
}

fn poisson(rng: &mut ChaCha8Rng, rate: f64) -> u64 {
    if rate <= 0.0 {
        return 0;
    }
    Poisson::new(rate).expect("positive rate").sample(rng) as u64
}

const WORDS_PER_SECOND: f64 = 2.5;
const CONTENT_POS: [PartOfSpeech; 5] = [
    PartOfSpeech::Noun,
    PartOfSpeech::Verb,
    PartOfSpeech::Adjective,
    PartOfSpeech::Adverb,
    PartOfSpeech::Conjunction,
];

/// Word `i` of a synthetic vocabulary; POS is a fixed function of `i`.
fn word(prefix: char, i: usize) -> Token {
    let pos = if i % 10 < 5 {
        CONTENT_POS[i % 5]
    } else {
        PartOfSpeech::Other
    };
    Token::new(format!("{prefix}{i}"), pos)
}

fn tokens(rng: &mut ChaCha8Rng, prefix: char, len: Millis, vocab: usize) -> Vec<Token> {
    let n = ((len as f64 / 1000.0) * WORDS_PER_SECOND).round().max(1.0) as usize;
    (0..n).map(|_| word(prefix, rng.random_range(0..vocab))).collect()
}

/// One event of `len` ms placed uniformly inside `[start, end)`.
fn event_inside(rng: &mut ChaCha8Rng, kind: EventKind, start: Millis, end: Millis, len: Millis) -> EventAnnotation {
    let len = len.min(end - start);
    let at = rng.random_range(start..=end - len);
    EventAnnotation::new(kind, at, at + len)
}

fn dialogue(cfg: &SynthConfig, id: String, system_type: SystemType, h: f64, rng: &mut ChaCha8Rng) -> DialogueRecord {
    let e = &cfg.effects;
    let d = h - 0.5;
    let duration = ms(cfg.duration_s);
    let seg_mean = (2500.0 * (1.0 + e.speech * d)).max(300.0);
    let vocab = (120.0 * (1.0 + e.vocabulary * d)).round().max(5.0) as usize;
    let pause_mean = 400.0 + 1000.0 * e.switching_pause * d;
    let p_backchannel = (0.4 + e.backchannel * d).clamp(0.0, 1.0);
    let laugh_rate = (0.15 + e.laugh * d).max(0.0);

    let mut user = SpeakerChannel::default();
    let mut system = SpeakerChannel::default();
    let mut user_end: Millis = 0;
    let mut t: Millis = rng.random_range(500..1500);
    loop {
        let sys_len = normal(rng, 2200.0, 600.0).clamp(600.0, 5000.0) as Millis;
        if t + sys_len > duration {
            break;
        }
        system
            .segments
            .push(UtteranceSegment::new(t, t + sys_len, tokens(rng, 's', sys_len, 80)));
        if rng.random::<f64>() < p_backchannel {
            user.events
                .push(event_inside(rng, EventKind::Backchannel, t, t + sys_len, 300));
        }

        let pause = normal(rng, pause_mean, 250.0).clamp(-(sys_len as f64) / 2.0, 2500.0) as Millis;
        let mut u = (t + sys_len + pause).max(user_end + 50);
        let turn_start = u;
        let n_segments = 1 + poisson(rng, 0.8);
        let mut done = false;
        for _ in 0..n_segments {
            let len = normal(rng, seg_mean, 0.3 * seg_mean).clamp(300.0, 8000.0) as Millis;
            if u + len > duration {
                done = true;
                break;
            }
            user.segments
                .push(UtteranceSegment::new(u, u + len, tokens(rng, 'w', len, vocab)));
            for _ in 0..poisson(rng, 0.3) {
                user.events.push(event_inside(rng, EventKind::Filler, u, u + len, 400));
            }
            for _ in 0..poisson(rng, 0.15) {
                user.events
                    .push(event_inside(rng, EventKind::Disfluency, u, u + len, 500));
            }
            user_end = u + len;
            u = user_end + rng.random_range(100..400);
        }
        if user_end > turn_start {
            for _ in 0..poisson(rng, laugh_rate) {
                user.events
                    .push(event_inside(rng, EventKind::Laugh, turn_start, user_end, 600));
            }
        }
        if done {
            break;
        }
        t = user_end.max(t + sys_len) + normal(rng, 600.0, 200.0).clamp(150.0, 2000.0) as Millis;
    }
    user.events.sort_by_key(|ev| (ev.start, ev.end));

    let away_mean = 3000.0 * (1.0 - e.gaze_shifts * d).max(0.1);
    let mut gaze = Vec::new();
    let mut g = 0;
    let mut target = GazeTarget::Away;
    while g < duration {
        let mean = if target == GazeTarget::Away { away_mean } else { 4000.0 };
        let len = normal(rng, mean, 0.3 * mean).max(200.0) as Millis;
        let end = (g + len).min(duration);
        gaze.push(GazeInterval::new(g, end, target));
        g = end;
        target = match target {
            GazeTarget::Away => GazeTarget::Partner,
            GazeTarget::Partner => GazeTarget::Away,
        };
    }

    let questionnaire = cfg
        .questionnaire_slopes
        .iter()
        .map(|slope| {
            let v = normal(rng, 4.0 + slope * d, 0.7).round() as i64;
            v.clamp(QUESTIONNAIRE_MIN, QUESTIONNAIRE_MAX)
        })
        .collect();

    DialogueRecord {
        dialogue_id: id,
        system_type,
        duration,
        user,
        system,
        gaze,
        questionnaire: Some(questionnaire),
    }
}

/// Stream 0 drives dialogue-level draws, stream `i + 1` dialogue `i`'s
/// behavior, and the last stream the verdicts.
fn stream(seed: u64, n: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(n);
    rng
}

pub fn generate(cfg: &SynthConfig) -> Result<(CorpusBundle, GroundTruth), SynthError> {
    cfg.check()?;
    let n = cfg.n_dialogues;
    let mut top = stream(cfg.seed, 0);
    let n_woz = (cfg.p_woz * n as f64).round() as usize;
    let mut types: Vec<SystemType> = (0..n)
        .map(|i| {
            if i < n_woz {
                SystemType::Woz
            } else {
                SystemType::Autonomous
            }
        })
        .collect();
    types.shuffle(&mut top);

    let mut latent = BTreeMap::new();
    let mut dialogues = Vec::with_capacity(n);
    for (i, &ty) in types.iter().enumerate() {
        let mean = match ty {
            SystemType::Woz => cfg.woz_h_mean,
            SystemType::Autonomous => cfg.autonomous_h_mean,
        };
        let h = normal(&mut top, mean, cfg.h_spread).clamp(0.0, 1.0);
        let id = format!("syn{:03}", i + 1);
        latent.insert(id.clone(), h);
        dialogues.push(dialogue(cfg, id, ty, h, &mut stream(cfg.seed, i as u64 + 1)));
    }

    let samples = segment_all(&dialogues, ms(cfg.window_s), ms(cfg.hop_s))?.windows;
    let params = AllocationParams {
        k: cfg.k,
        load_min: cfg.load_min,
        load_max: cfg.load_max,
        seed: cfg.seed,
    };
    let assignment = allocate(&samples, &annotator_ids(cfg.n_annotators), &params)?;
    let by_sample = assignment.annotators_by_sample();
    let mut rng = stream(cfg.seed, u64::MAX);
    let mut judgments = Vec::with_capacity(samples.len() * cfg.k);
    for s in &samples {
        let h = latent[&s.dialogue_id];
        let p = if cfg.judgment_noise > 0.0 {
            (h + normal(&mut rng, 0.0, cfg.judgment_noise)).clamp(0.0, 1.0)
        } else {
            h
        };
        for annotator in by_sample.get(s.sample_id.as_str()).into_iter().flatten() {
            let verdict = if rng.random::<f64>() < p {
                Verdict::Human
            } else {
                Verdict::System
            };
            judgments.push(Judgment::new(s.sample_id.clone(), *annotator, verdict));
        }
    }

    Ok((
        CorpusBundle {
            dialogues,
            samples,
            judgments,
        },
        GroundTruth {
            latent,
            planted: cfg.planted(),
        },
    ))
}
