//! The seventeen user-behavior features, computed per sample window and
//! averaged per dialogue.
//!
//! Window membership is onset based: an utterance, token, event or turn
//! belongs to the window containing its start time. Durations that can
//! straddle a window edge (utterance time, gaze time) are clipped instead.

use std::collections::HashSet;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    millis_to_secs, DialogueRecord, EventAnnotation, EventKind, GazeInterval, GazeTarget, Millis, SampleWindow,
    Speaker, SpeakerChannel, SystemType,
};

pub const FEATURE_COUNT: usize = 17;
pub const DEFAULT_MERGE_GAP_MS: Millis = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    VoiceActivity,
    Linguistic,
    Gaze,
    Dialogue,
}

impl Category {
    pub fn heading(self) -> &'static str {
        match self {
            Category::VoiceActivity => "(Voice activity)",
            Category::Linguistic => "(Linguistic)",
            Category::Gaze => "(Gaze)",
            Category::Dialogue => "(Dialogue)",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    TotalUtteranceTime,
    AvgUtteranceDuration,
    NUtterances,
    NWords,
    NUniqueWords,
    NContentWords,
    NUniqueContentWords,
    NGazeShifts,
    TotalGazeDuration,
    AvgGazeDuration,
    NTurns,
    AvgTurnDuration,
    AvgSwitchingPause,
    NBackchannels,
    NFillers,
    NLaughs,
    NDisfluencies,
}

impl Feature {
    pub const ALL: [Feature; FEATURE_COUNT] = [
        Feature::TotalUtteranceTime,
        Feature::AvgUtteranceDuration,
        Feature::NUtterances,
        Feature::NWords,
        Feature::NUniqueWords,
        Feature::NContentWords,
        Feature::NUniqueContentWords,
        Feature::NGazeShifts,
        Feature::TotalGazeDuration,
        Feature::AvgGazeDuration,
        Feature::NTurns,
        Feature::AvgTurnDuration,
        Feature::AvgSwitchingPause,
        Feature::NBackchannels,
        Feature::NFillers,
        Feature::NLaughs,
        Feature::NDisfluencies,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn key(self) -> &'static str {
        match self {
            Feature::TotalUtteranceTime => "total_utterance_time",
            Feature::AvgUtteranceDuration => "avg_utterance_duration",
            Feature::NUtterances => "n_utterances",
            Feature::NWords => "n_words",
            Feature::NUniqueWords => "n_unique_words",
            Feature::NContentWords => "n_content_words",
            Feature::NUniqueContentWords => "n_unique_content_words",
            Feature::NGazeShifts => "n_gaze_shifts",
            Feature::TotalGazeDuration => "total_gaze_duration",
            Feature::AvgGazeDuration => "avg_gaze_duration",
            Feature::NTurns => "n_turns",
            Feature::AvgTurnDuration => "avg_turn_duration",
            Feature::AvgSwitchingPause => "avg_switching_pause",
            Feature::NBackchannels => "n_backchannels",
            Feature::NFillers => "n_fillers",
            Feature::NLaughs => "n_laughs",
            Feature::NDisfluencies => "n_disfluencies",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Feature::TotalUtteranceTime => "Total utterance time",
            Feature::AvgUtteranceDuration => "Average utterance duration",
            Feature::NUtterances => "# of utterances",
            Feature::NWords => "# of words",
            Feature::NUniqueWords => "# of unique words",
            Feature::NContentWords => "# of content words",
            Feature::NUniqueContentWords => "# of unique content words",
            Feature::NGazeShifts => "# of gaze shifts (eye contact)",
            Feature::TotalGazeDuration => "Total gaze duration",
            Feature::AvgGazeDuration => "Average gaze duration",
            Feature::NTurns => "# of turns",
            Feature::AvgTurnDuration => "Average turn duration",
            Feature::AvgSwitchingPause => "Average switching pause length",
            Feature::NBackchannels => "# of backchannels",
            Feature::NFillers => "# of fillers",
            Feature::NLaughs => "# of laughs",
            Feature::NDisfluencies => "# of disfluencies",
        }
    }

    pub fn category(self) -> Category {
        match self.index() {
            0..=2 => Category::VoiceActivity,
            3..=6 => Category::Linguistic,
            7..=9 => Category::Gaze,
            _ => Category::Dialogue,
        }
    }

    pub fn from_key(key: &str) -> Option<Feature> {
        Feature::ALL.into_iter().find(|f| f.key() == key)
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    /// Same-speaker segments separated by less than this are merged into one
    /// inter-pausal unit.
    pub merge_gap: Millis,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            merge_gap: DEFAULT_MERGE_GAP_MS,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FeatureError {
    #[error("dialogue `{0}` has no sample windows")]
    NoWindows(String),
    #[error("window `{window}` belongs to dialogue `{owner}`, not `{dialogue}`")]
    ForeignWindow {
        window: String,
        owner: String,
        dialogue: String,
    },
}

fn overlap(a: (Millis, Millis), b: (Millis, Millis)) -> Millis {
    (a.1.min(b.1) - a.0.max(b.0)).max(0)
}

fn mean_secs(total_ms: Millis, count: usize) -> f64 {
    if count == 0 {
        0.0
    } else {
        millis_to_secs(total_ms) / count as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoiceFeatures {
    pub total_utterance_time: f64,
    pub avg_utterance_duration: f64,
    pub n_utterances: usize,
}

/// Utterance time is every user segment clipped to the window; utterances
/// are counted by onset.
pub fn voice_features(window: &SampleWindow, user: &SpeakerChannel) -> VoiceFeatures {
    let span = (window.start, window.end);
    let total: Millis = user.segments.iter().map(|s| overlap((s.start, s.end), span)).sum();
    let n = user.segments.iter().filter(|s| window.contains_onset(s.start)).count();
    VoiceFeatures {
        total_utterance_time: millis_to_secs(total),
        avg_utterance_duration: mean_secs(total, n),
        n_utterances: n,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinguisticFeatures {
    pub n_words: usize,
    pub n_unique_words: usize,
    pub n_content_words: usize,
    pub n_unique_content_words: usize,
}

pub fn linguistic_features(window: &SampleWindow, user: &SpeakerChannel) -> LinguisticFeatures {
    let mut words = 0;
    let mut content = 0;
    let mut unique = HashSet::new();
    let mut unique_content = HashSet::new();
    let tokens = user
        .segments
        .iter()
        .filter(|s| window.contains_onset(s.start))
        .flat_map(|s| &s.tokens);
    for tok in tokens {
        words += 1;
        unique.insert(tok.surface.as_str());
        if tok.pos.is_content() {
            content += 1;
            unique_content.insert(tok.surface.as_str());
        }
    }
    LinguisticFeatures {
        n_words: words,
        n_unique_words: unique.len(),
        n_content_words: content,
        n_unique_content_words: unique_content.len(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazeFeatures {
    pub n_gaze_shifts: usize,
    pub total_gaze_duration: f64,
    pub avg_gaze_duration: f64,
    /// Partner gaze was present but no shift started inside the window, so
    /// the average is reported as 0.
    pub avg_degenerate: bool,
}

/// A gaze shift is the onset of a partner-directed interval strictly after
/// the window start, so that the preceding non-partner moment is observed
/// inside the same window. Gaze time is partner time clipped to the window.
pub fn gaze_features(window: &SampleWindow, gaze: &[GazeInterval]) -> GazeFeatures {
    let span = (window.start, window.end);
    let mut shifts = 0;
    let mut total = 0;
    for g in gaze.iter().filter(|g| g.target == GazeTarget::Partner) {
        total += overlap((g.start, g.end), span);
        if window.start < g.start && g.start < window.end {
            shifts += 1;
        }
    }
    GazeFeatures {
        n_gaze_shifts: shifts,
        total_gaze_duration: millis_to_secs(total),
        avg_gaze_duration: mean_secs(total, shifts),
        avg_degenerate: shifts == 0 && total > 0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub start: Millis,
    pub end: Millis,
}

impl Turn {
    pub fn duration(&self) -> Millis {
        self.end - self.start
    }
}

/// Inter-pausal units of one channel: segments covered by a backchannel
/// event are dropped, the rest are merged across gaps shorter than
/// `merge_gap`.
pub fn inter_pausal_units(channel: &SpeakerChannel, merge_gap: Millis) -> Vec<(Millis, Millis)> {
    let backchannels: Vec<&EventAnnotation> = channel
        .events
        .iter()
        .filter(|e| e.kind == EventKind::Backchannel)
        .collect();
    let mut spans: Vec<(Millis, Millis)> = channel
        .segments
        .iter()
        .filter(|s| !backchannels.iter().any(|e| e.start <= s.start && s.end <= e.end))
        .map(|s| (s.start, s.end))
        .collect();
    spans.sort_unstable();
    let mut units: Vec<(Millis, Millis)> = Vec::with_capacity(spans.len());
    for (start, end) in spans {
        match units.last_mut() {
            Some(last) if start - last.1 < merge_gap => last.1 = last.1.max(end),
            _ => units.push((start, end)),
        }
    }
    units
}

/// Orders both speakers' inter-pausal units by onset and collapses runs of
/// the same speaker into turns. Consecutive turns always alternate speaker.
pub fn derive_turns(user: &SpeakerChannel, system: &SpeakerChannel, merge_gap: Millis) -> Vec<Turn> {
    let mut units: Vec<(Millis, u8, Millis, Speaker)> = Vec::new();
    // On equal onsets the system unit goes first.
    for (start, end) in inter_pausal_units(system, merge_gap) {
        units.push((start, 0, end, Speaker::System));
    }
    for (start, end) in inter_pausal_units(user, merge_gap) {
        units.push((start, 1, end, Speaker::User));
    }
    units.sort_unstable();
    let mut turns: Vec<Turn> = Vec::new();
    for (start, _, end, speaker) in units {
        match turns.last_mut() {
            Some(t) if t.speaker == speaker => t.end = t.end.max(end),
            _ => turns.push(Turn { speaker, start, end }),
        }
    }
    turns
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DialogueFeatures {
    pub n_turns: usize,
    pub avg_turn_duration: f64,
    /// Mean gap from a system turn's end to the next user turn's start;
    /// negative values are overlaps. 0 when `switching_pause_defined` is false.
    pub avg_switching_pause: f64,
    pub switching_pause_defined: bool,
    pub n_backchannels: usize,
    pub n_fillers: usize,
    pub n_laughs: usize,
    pub n_disfluencies: usize,
}

pub fn dialogue_features(window: &SampleWindow, turns: &[Turn], user_events: &[EventAnnotation]) -> DialogueFeatures {
    let mut n_turns = 0;
    let mut turn_ms = 0;
    let mut n_switches = 0;
    let mut pause_ms = 0;
    for (i, turn) in turns.iter().enumerate() {
        if turn.speaker != Speaker::User || !window.contains_onset(turn.start) {
            continue;
        }
        n_turns += 1;
        turn_ms += turn.duration();
        if let Some(prev) = i.checked_sub(1).map(|p| &turns[p]) {
            if prev.speaker == Speaker::System {
                n_switches += 1;
                pause_ms += turn.start - prev.end;
            }
        }
    }
    let count = |kind| {
        user_events
            .iter()
            .filter(|e| e.kind == kind && window.contains_onset(e.start))
            .count()
    };
    DialogueFeatures {
        n_turns,
        avg_turn_duration: mean_secs(turn_ms, n_turns),
        avg_switching_pause: mean_secs(pause_ms, n_switches),
        switching_pause_defined: n_switches > 0,
        n_backchannels: count(EventKind::Backchannel),
        n_fillers: count(EventKind::Filler),
        n_laughs: count(EventKind::Laugh),
        n_disfluencies: count(EventKind::Disfluency),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowFeatures {
    pub voice: VoiceFeatures,
    pub linguistic: LinguisticFeatures,
    pub gaze: GazeFeatures,
    pub dialogue: DialogueFeatures,
}

impl WindowFeatures {
    /// The seventeen values in table order. The switching pause is `None`
    /// when the window contains no system-to-user switch.
    pub fn values(&self) -> [Option<f64>; FEATURE_COUNT] {
        let v = &self.voice;
        let l = &self.linguistic;
        let g = &self.gaze;
        let d = &self.dialogue;
        [
            Some(v.total_utterance_time),
            Some(v.avg_utterance_duration),
            Some(v.n_utterances as f64),
            Some(l.n_words as f64),
            Some(l.n_unique_words as f64),
            Some(l.n_content_words as f64),
            Some(l.n_unique_content_words as f64),
            Some(g.n_gaze_shifts as f64),
            Some(g.total_gaze_duration),
            Some(g.avg_gaze_duration),
            Some(d.n_turns as f64),
            Some(d.avg_turn_duration),
            d.switching_pause_defined.then_some(d.avg_switching_pause),
            Some(d.n_backchannels as f64),
            Some(d.n_fillers as f64),
            Some(d.n_laughs as f64),
            Some(d.n_disfluencies as f64),
        ]
    }
}

/// All seventeen features of one window. `turns` must be derived from the
/// whole dialogue so that switches into the window see their preceding turn.
pub fn window_features(dialogue: &DialogueRecord, turns: &[Turn], window: &SampleWindow) -> WindowFeatures {
    WindowFeatures {
        voice: voice_features(window, &dialogue.user),
        linguistic: linguistic_features(window, &dialogue.user),
        gaze: gaze_features(window, &dialogue.gaze),
        dialogue: dialogue_features(window, turns, &dialogue.user.events),
    }
}

/// Per-dialogue feature values: the mean over the dialogue's windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub dialogue_id: String,
    /// `None` only when the feature was undefined in every window.
    pub values: [Option<f64>; FEATURE_COUNT],
    pub n_windows: usize,
}

impl FeatureVector {
    pub fn get(&self, feature: Feature) -> Option<f64> {
        self.values[feature.index()]
    }

    /// Values with missing entries as NaN, the regression input convention.
    pub fn to_row(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.unwrap_or(f64::NAN)).collect()
    }
}

/// Element-wise mean of per-window values. A window with an undefined value
/// is left out of that element's mean only.
pub fn mean_vector(dialogue_id: &str, per_window: &[[Option<f64>; FEATURE_COUNT]]) -> FeatureVector {
    let mut values = [None; FEATURE_COUNT];
    for (i, slot) in values.iter_mut().enumerate() {
        let defined: Vec<f64> = per_window.iter().filter_map(|w| w[i]).collect();
        if !defined.is_empty() {
            *slot = Some(defined.iter().sum::<f64>() / defined.len() as f64);
        }
    }
    FeatureVector {
        dialogue_id: dialogue_id.to_string(),
        values,
        n_windows: per_window.len(),
    }
}

pub fn dialogue_feature_vector(
    dialogue: &DialogueRecord,
    windows: &[SampleWindow],
    config: &FeatureConfig,
) -> Result<FeatureVector, FeatureError> {
    if windows.is_empty() {
        return Err(FeatureError::NoWindows(dialogue.dialogue_id.clone()));
    }
    if let Some(w) = windows.iter().find(|w| w.dialogue_id != dialogue.dialogue_id) {
        return Err(FeatureError::ForeignWindow {
            window: w.sample_id.clone(),
            owner: w.dialogue_id.clone(),
            dialogue: dialogue.dialogue_id.clone(),
        });
    }
    let turns = derive_turns(&dialogue.user, &dialogue.system, config.merge_gap);
    let per_window: Vec<_> = windows
        .iter()
        .map(|w| window_features(dialogue, &turns, w).values())
        .collect();
    Ok(mean_vector(&dialogue.dialogue_id, &per_window))
}

/// One row of the exported feature table.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub vector: FeatureVector,
    pub system_type: SystemType,
    pub hl_score: Option<f64>,
}

/// Writes a tab-separated feature table: `dialogue_id`, `system_type`,
/// `n_windows`, `hl_score`, then the seventeen features in table order.
/// Missing values are empty cells.
pub fn write_feature_table<W: Write>(rows: &[FeatureRow], out: W) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new().delimiter(b'\t').from_writer(out);
    let mut header = vec!["dialogue_id", "system_type", "n_windows", "hl_score"];
    header.extend(Feature::ALL.iter().map(|f| f.key()));
    w.write_record(&header)?;
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for row in rows {
        let mut record = vec![
            row.vector.dialogue_id.clone(),
            row.system_type.to_string(),
            row.vector.n_windows.to_string(),
            cell(row.hl_score),
        ];
        record.extend(row.vector.values.iter().map(|&v| cell(v)));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{PartOfSpeech, Token, UtteranceSegment};
    use proptest::prelude::*;

    fn window(start: Millis, end: Millis) -> SampleWindow {
        SampleWindow {
            sample_id: "d#0".into(),
            dialogue_id: "d".into(),
            start,
            end,
        }
    }

    fn channel(spans: &[(Millis, Millis)]) -> SpeakerChannel {
        SpeakerChannel {
            segments: spans
                .iter()
                .map(|&(s, e)| UtteranceSegment::new(s, e, vec![]))
                .collect(),
            events: vec![],
        }
    }

    #[test]
    fn voice_basic() {
        let f = voice_features(&window(0, 60_000), &channel(&[(5_000, 10_000), (20_000, 30_000)]));
        assert_eq!(f.total_utterance_time, 15.0);
        assert_eq!(f.n_utterances, 2);
        assert_eq!(f.avg_utterance_duration, 7.5);
        let empty = voice_features(&window(0, 60_000), &channel(&[]));
        assert_eq!(
            (
                empty.total_utterance_time,
                empty.avg_utterance_duration,
                empty.n_utterances
            ),
            (0.0, 0.0, 0)
        );
    }

    #[test]
    fn voice_clips_straddling_segment() {
        let f = voice_features(&window(0, 60_000), &channel(&[(55_000, 65_000)]));
        assert_eq!(f.n_utterances, 1);
        assert_eq!(f.total_utterance_time, 5.0);
        let next = voice_features(&window(60_000, 120_000), &channel(&[(55_000, 65_000)]));
        assert_eq!(next.n_utterances, 0);
        assert_eq!(next.total_utterance_time, 5.0);
    }

    #[test]
    fn linguistic_counts() {
        let mut user = channel(&[(0, 1_000)]);
        user.segments[0].tokens = vec![
            Token::new("run", PartOfSpeech::Verb),
            Token::new("run", PartOfSpeech::Verb),
            Token::new("fast", PartOfSpeech::Adverb),
        ];
        let f = linguistic_features(&window(0, 60_000), &user);
        assert_eq!(
            f,
            LinguisticFeatures {
                n_words: 3,
                n_unique_words: 2,
                n_content_words: 3,
                n_unique_content_words: 2
            }
        );

        user.segments[0].tokens = vec![Token::new("ne", PartOfSpeech::Other); 4];
        let f = linguistic_features(&window(0, 60_000), &user);
        assert_eq!((f.n_content_words, f.n_unique_content_words), (0, 0));
    }

    #[test]
    fn gaze_examples() {
        let full = [GazeInterval::new(0, 60_000, GazeTarget::Partner)];
        let f = gaze_features(&window(0, 60_000), &full);
        assert_eq!(f.n_gaze_shifts, 0);
        assert_eq!(f.total_gaze_duration, 60.0);
        assert_eq!(f.avg_gaze_duration, 0.0);
        assert!(f.avg_degenerate);

        let two = [
            GazeInterval::new(10_000, 20_000, GazeTarget::Partner),
            GazeInterval::new(30_000, 45_000, GazeTarget::Partner),
        ];
        let f = gaze_features(&window(0, 60_000), &two);
        assert_eq!(f.n_gaze_shifts, 2);
        assert_eq!(f.total_gaze_duration, 25.0);
        assert_eq!(f.avg_gaze_duration, 12.5);
        assert!(!f.avg_degenerate);
    }

    #[test]
    fn turns_alternate() {
        let user = channel(&[(0, 5_000), (9_000, 12_000)]);
        let system = channel(&[(6_000, 8_000)]);
        let turns = derive_turns(&user, &system, DEFAULT_MERGE_GAP_MS);
        let speakers: Vec<_> = turns.iter().map(|t| t.speaker).collect();
        assert_eq!(speakers, [Speaker::User, Speaker::System, Speaker::User]);
    }

    #[test]
    fn short_gap_merges() {
        let user = channel(&[(0, 2_000), (2_300, 4_000)]);
        let turns = derive_turns(&user, &channel(&[]), DEFAULT_MERGE_GAP_MS);
        assert_eq!(
            turns,
            [Turn {
                speaker: Speaker::User,
                start: 0,
                end: 4_000
            }]
        );
    }

    #[test]
    fn backchannel_segments_leave_turn_stream() {
        let user = channel(&[(0, 3_000), (5_000, 8_000)]);
        let mut system = channel(&[(3_500, 3_900)]);
        system
            .events
            .push(EventAnnotation::new(EventKind::Backchannel, 3_500, 3_900));
        let turns = derive_turns(&user, &system, DEFAULT_MERGE_GAP_MS);
        assert_eq!(
            turns,
            [Turn {
                speaker: Speaker::User,
                start: 0,
                end: 8_000
            }]
        );
        system.events.clear();
        assert_eq!(derive_turns(&user, &system, DEFAULT_MERGE_GAP_MS).len(), 3);
    }

    fn turn(speaker: Speaker, start: Millis, end: Millis) -> Turn {
        Turn { speaker, start, end }
    }

    #[test]
    fn switching_pauses() {
        use Speaker::*;
        let w = window(0, 60_000);
        let f = dialogue_features(&w, &[turn(System, 5_000, 10_000), turn(User, 11_200, 15_000)], &[]);
        assert!((f.avg_switching_pause - 1.2).abs() < 1e-12);
        let f = dialogue_features(&w, &[turn(System, 5_000, 10_000), turn(User, 9_500, 15_000)], &[]);
        assert!((f.avg_switching_pause + 0.5).abs() < 1e-12);

        let turns = [
            turn(System, 0, 1_000),
            turn(User, 1_400, 3_000),
            turn(System, 3_500, 4_000),
            turn(User, 5_000, 6_000),
            turn(System, 7_000, 8_000),
            turn(User, 7_800, 9_000),
        ];
        let f = dialogue_features(&w, &turns, &[]);
        assert!((f.avg_switching_pause - (0.4 + 1.0 - 0.2) / 3.0).abs() < 1e-12);
        assert!((f.avg_switching_pause - 0.4).abs() < 1e-12);
        assert_eq!(f.n_turns, 3);
        assert!((f.avg_turn_duration - (1.6 + 1.0 + 1.2) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn no_switch_is_flagged() {
        let f = dialogue_features(&window(0, 60_000), &[turn(Speaker::User, 0, 1_000)], &[]);
        assert_eq!(f.avg_switching_pause, 0.0);
        assert!(!f.switching_pause_defined);
    }

    #[test]
    fn event_counts_by_onset() {
        let events = [
            EventAnnotation::new(EventKind::Backchannel, 1_000, 1_200),
            EventAnnotation::new(EventKind::Filler, 59_900, 60_100),
            EventAnnotation::new(EventKind::Laugh, 60_000, 61_000),
            EventAnnotation::new(EventKind::Disfluency, 2_000, 2_000),
        ];
        let f = dialogue_features(&window(0, 60_000), &[], &events);
        assert_eq!(
            (f.n_backchannels, f.n_fillers, f.n_laughs, f.n_disfluencies),
            (1, 1, 0, 1)
        );
    }

    fn dialogue(user: SpeakerChannel, duration: Millis) -> DialogueRecord {
        DialogueRecord {
            dialogue_id: "d".into(),
            system_type: SystemType::Autonomous,
            duration,
            user,
            system: channel(&[]),
            gaze: vec![],
            questionnaire: None,
        }
    }

    #[test]
    fn vector_means() {
        let mut user = channel(&[(0, 1_000), (60_000, 61_000)]);
        user.segments[0].tokens = vec![Token::new("a", PartOfSpeech::Noun); 10];
        user.segments[1].tokens = vec![Token::new("b", PartOfSpeech::Noun); 20];
        let d = dialogue(user, 120_000);
        let mut w2 = window(60_000, 120_000);
        w2.sample_id = "d#1".into();
        let v = dialogue_feature_vector(&d, &[window(0, 60_000), w2], &FeatureConfig::default()).unwrap();
        assert_eq!(v.get(Feature::NWords), Some(15.0));
        assert_eq!(v.get(Feature::AvgSwitchingPause), None);
        assert_eq!(v.n_windows, 2);

        let single = dialogue_feature_vector(&d, &[window(0, 60_000)], &FeatureConfig::default()).unwrap();
        let twice =
            dialogue_feature_vector(&d, &[window(0, 60_000), window(0, 60_000)], &FeatureConfig::default()).unwrap();
        assert_eq!(single.values, twice.values);
    }

    #[test]
    fn vector_errors() {
        let d = dialogue(channel(&[]), 60_000);
        assert_eq!(
            dialogue_feature_vector(&d, &[], &FeatureConfig::default()),
            Err(FeatureError::NoWindows("d".into()))
        );
        let mut w = window(0, 60_000);
        w.dialogue_id = "other".into();
        assert!(matches!(
            dialogue_feature_vector(&d, &[w], &FeatureConfig::default()),
            Err(FeatureError::ForeignWindow { .. })
        ));
    }

    #[test]
    fn table_order_and_labels() {
        assert_eq!(Feature::ALL.len(), FEATURE_COUNT);
        for (i, f) in Feature::ALL.iter().enumerate() {
            assert_eq!(f.index(), i);
            assert_eq!(Feature::from_key(f.key()), Some(*f));
        }
        assert_eq!(Feature::NGazeShifts.category(), Category::Gaze);
        assert_eq!(Feature::NDisfluencies.category(), Category::Dialogue);
    }

    #[test]
    fn feature_table_layout() {
        let row = FeatureRow {
            vector: FeatureVector {
                dialogue_id: "d1".into(),
                values: [Some(1.5); FEATURE_COUNT],
                n_windows: 8,
            },
            system_type: SystemType::Woz,
            hl_score: Some(0.6),
        };
        let mut missing = row.clone();
        missing.vector.values[Feature::AvgSwitchingPause.index()] = None;
        let mut buf = Vec::new();
        write_feature_table(&[row, missing], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0].split('\t').count(), 21);
        assert!(lines[0].starts_with("dialogue_id\tsystem_type\tn_windows\thl_score\ttotal_utterance_time"));
        assert!(lines[1].starts_with("d1\twoz\t8\t0.6\t1.5"));
        assert!(lines[2].contains("\t\t"));
    }

    /// Random valid dialogue: alternating user/system activity, random
    /// backchannels, events and gaze runs.
    fn arb_dialogue() -> impl Strategy<Value = DialogueRecord> {
        (
            proptest::collection::vec((1i64..3_000, 1i64..4_000, any::<bool>(), 0u8..4), 1..20),
            proptest::collection::vec((1i64..5_000, any::<bool>()), 1..30),
        )
            .prop_map(|(steps, gaze_runs)| {
                let mut user = SpeakerChannel::default();
                let mut system = SpeakerChannel::default();
                let mut t = 0;
                for (gap, len, is_user, extra) in steps {
                    let start = t + gap;
                    let end = start + len;
                    let ch = if is_user { &mut user } else { &mut system };
                    let toks = (0..extra)
                        .map(|i| Token::new(format!("w{i}"), PartOfSpeech::Noun))
                        .collect();
                    ch.segments.push(UtteranceSegment::new(start, end, toks));
                    if extra == 3 {
                        ch.events.push(EventAnnotation::new(EventKind::Backchannel, start, end));
                    } else if extra == 2 {
                        ch.events.push(EventAnnotation::new(EventKind::Laugh, start, start + 1));
                    }
                    t = end;
                }
                let mut gaze = Vec::new();
                let mut g = 0;
                let mut target = GazeTarget::Away;
                for (len, skip) in gaze_runs {
                    if skip {
                        g += 1;
                    }
                    target = if target == GazeTarget::Away {
                        GazeTarget::Partner
                    } else {
                        GazeTarget::Away
                    };
                    gaze.push(GazeInterval::new(g, g + len, target));
                    g += len;
                }
                let duration = t.max(g) + 1_000;
                DialogueRecord {
                    dialogue_id: "d".into(),
                    system_type: SystemType::Woz,
                    duration,
                    user,
                    system,
                    gaze,
                    questionnaire: None,
                }
            })
    }

    fn shift(d: &DialogueRecord, delta: Millis) -> DialogueRecord {
        let mut d = d.clone();
        d.duration += delta;
        for ch in [&mut d.user, &mut d.system] {
            for s in &mut ch.segments {
                s.start += delta;
                s.end += delta;
            }
            for e in &mut ch.events {
                e.start += delta;
                e.end += delta;
            }
        }
        for g in &mut d.gaze {
            g.start += delta;
            g.end += delta;
        }
        d
    }

    proptest! {
        #[test]
        fn tiling_windows_add_up(d in arb_dialogue(), len in 1_000i64..30_000) {
            let whole: Millis = d.user.segments.iter().map(|s| s.duration()).sum();
            let n = (d.duration + len - 1) / len;
            let total: f64 = (0..n)
                .map(|i| voice_features(&window(i * len, (i + 1) * len), &d.user).total_utterance_time)
                .sum();
            prop_assert!((total - millis_to_secs(whole)).abs() < 1e-3);
        }

        #[test]
        fn unique_counts_bounded(d in arb_dialogue(), start in 0i64..20_000, len in 1i64..60_000) {
            let f = linguistic_features(&window(start, start + len), &d.user);
            prop_assert!(f.n_unique_words <= f.n_words);
            prop_assert!(f.n_unique_content_words <= f.n_content_words);
            prop_assert!(f.n_content_words <= f.n_words);
        }

        #[test]
        fn turns_never_repeat_speaker(d in arb_dialogue(), gap in 0i64..2_000) {
            let turns = derive_turns(&d.user, &d.system, gap);
            for pair in turns.windows(2) {
                prop_assert_ne!(pair[0].speaker, pair[1].speaker);
            }
            prop_assert!(turns.iter().all(|t| t.end > t.start));
        }

        #[test]
        fn translation_invariance(d in arb_dialogue(), delta in 1i64..100_000, len in 5_000i64..60_000) {
            let moved = shift(&d, delta);
            let turns = derive_turns(&d.user, &d.system, DEFAULT_MERGE_GAP_MS);
            let moved_turns = derive_turns(&moved.user, &moved.system, DEFAULT_MERGE_GAP_MS);
            let mut start = 0;
            while start < d.duration {
                let a = window_features(&d, &turns, &window(start, start + len));
                let b = window_features(&moved, &moved_turns, &window(start + delta, start + len + delta));
                prop_assert_eq!(a, b);
                start += len;
            }
        }
    }
}
