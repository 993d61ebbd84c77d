//! Corpus data model and the line-delimited corpus file format.
//!
//! A corpus file is UTF-8 text with one JSON object per line. Every object
//! carries a `record` field naming its type: `header`, `dialogue`, `sample`
//! or `judgment`. Times are written as seconds with at most three decimal
//! places and held internally as integer milliseconds.
//!
//! Blank lines and lines starting with `#` are ignored by the parser, which
//! lets tools prepend provenance comments to corpus artifacts.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Integer milliseconds.
pub type Millis = i64;

pub const FORMAT_NAME: &str = "hleval-corpus";
pub const FORMAT_VERSION: u32 = 1;
pub const QUESTIONNAIRE_ITEMS: usize = 19;
pub const QUESTIONNAIRE_MIN: i64 = 1;
pub const QUESTIONNAIRE_MAX: i64 = 7;

/// Converts seconds to milliseconds, rejecting values with sub-millisecond
/// precision or non-finite input.
pub fn secs_to_millis(secs: f64) -> Option<Millis> {
    if !secs.is_finite() {
        return None;
    }
    let scaled = secs * 1000.0;
    let rounded = scaled.round();
    if (scaled - rounded).abs() > 1e-3 || rounded.abs() > 9.0e15 {
        return None;
    }
    Some(rounded as Millis)
}

pub fn millis_to_secs(ms: Millis) -> f64 {
    ms as f64 / 1000.0
}

mod seconds {
    use super::{millis_to_secs, secs_to_millis, Millis};
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(ms: &Millis, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(millis_to_secs(*ms))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Millis, D::Error> {
        let secs = f64::deserialize(d)?;
        secs_to_millis(secs).ok_or_else(|| {
            D::Error::custom(format!(
                "time {secs} is not a finite number of seconds with at most 3 decimal places"
            ))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemType {
    Autonomous,
    Woz,
}

impl SystemType {
    pub const ALL: [SystemType; 2] = [SystemType::Autonomous, SystemType::Woz];

    pub fn as_str(self) -> &'static str {
        match self {
            SystemType::Autonomous => "autonomous",
            SystemType::Woz => "woz",
        }
    }
}

impl fmt::Display for SystemType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    System,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PartOfSpeech {
    Noun,
    Verb,
    Adjective,
    Adverb,
    Conjunction,
    Other,
}

impl PartOfSpeech {
    /// Nouns, verbs, adjectives, adverbs and conjunctions.
    pub fn is_content(self) -> bool {
        !matches!(self, PartOfSpeech::Other)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Token {
    pub surface: String,
    pub pos: PartOfSpeech,
}

impl Token {
    pub fn new(surface: impl Into<String>, pos: PartOfSpeech) -> Self {
        Token {
            surface: surface.into(),
            pos,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtteranceSegment {
    #[serde(rename = "start_s", with = "seconds")]
    pub start: Millis,
    #[serde(rename = "end_s", with = "seconds")]
    pub end: Millis,
    #[serde(default)]
    pub tokens: Vec<Token>,
}

impl UtteranceSegment {
    pub fn new(start: Millis, end: Millis, tokens: Vec<Token>) -> Self {
        UtteranceSegment { start, end, tokens }
    }

    pub fn duration(&self) -> Millis {
        self.end - self.start
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Backchannel,
    Filler,
    Laugh,
    Disfluency,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventAnnotation {
    pub kind: EventKind,
    #[serde(rename = "start_s", with = "seconds")]
    pub start: Millis,
    #[serde(rename = "end_s", with = "seconds")]
    pub end: Millis,
}

impl EventAnnotation {
    pub fn new(kind: EventKind, start: Millis, end: Millis) -> Self {
        EventAnnotation { kind, start, end }
    }
}

/// One speaker's utterance segments and behavior events. Which speaker a
/// channel belongs to is given by its position in [`DialogueRecord`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeakerChannel {
    #[serde(default)]
    pub segments: Vec<UtteranceSegment>,
    #[serde(default)]
    pub events: Vec<EventAnnotation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GazeTarget {
    Partner,
    Away,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GazeInterval {
    #[serde(rename = "start_s", with = "seconds")]
    pub start: Millis,
    #[serde(rename = "end_s", with = "seconds")]
    pub end: Millis,
    pub target: GazeTarget,
}

impl GazeInterval {
    pub fn new(start: Millis, end: Millis, target: GazeTarget) -> Self {
        GazeInterval { start, end, target }
    }
}

/// Per-item questionnaire ratings Q1..Q19 on a 1..=7 scale. Length and range
/// are checked by [`validate`], not by the parser.
pub type QuestionnaireResponse = Vec<i64>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DialogueRecord {
    pub dialogue_id: String,
    pub system_type: SystemType,
    #[serde(rename = "duration_s", with = "seconds")]
    pub duration: Millis,
    pub user: SpeakerChannel,
    pub system: SpeakerChannel,
    #[serde(default)]
    pub gaze: Vec<GazeInterval>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub questionnaire: Option<QuestionnaireResponse>,
}

impl DialogueRecord {
    pub fn channel(&self, speaker: Speaker) -> &SpeakerChannel {
        match speaker {
            Speaker::User => &self.user,
            Speaker::System => &self.system,
        }
    }
}

/// A fixed-length evaluation segment of one dialogue.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleWindow {
    pub sample_id: String,
    pub dialogue_id: String,
    #[serde(rename = "start_s", with = "seconds")]
    pub start: Millis,
    #[serde(rename = "end_s", with = "seconds")]
    pub end: Millis,
}

impl SampleWindow {
    pub fn contains_onset(&self, t: Millis) -> bool {
        self.start <= t && t < self.end
    }

    pub fn length(&self) -> Millis {
        self.end - self.start
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Human,
    System,
}

/// One annotator's binary decision on one sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Judgment {
    pub sample_id: String,
    pub annotator_id: String,
    #[serde(rename = "judgment")]
    pub verdict: Verdict,
}

impl Judgment {
    pub fn new(sample_id: impl Into<String>, annotator_id: impl Into<String>, verdict: Verdict) -> Self {
        Judgment {
            sample_id: sample_id.into(),
            annotator_id: annotator_id.into(),
            verdict,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CorpusBundle {
    pub dialogues: Vec<DialogueRecord>,
    pub samples: Vec<SampleWindow>,
    pub judgments: Vec<Judgment>,
}

impl CorpusBundle {
    pub fn dialogue(&self, id: &str) -> Option<&DialogueRecord> {
        self.dialogues.iter().find(|d| d.dialogue_id == id)
    }

    pub fn system_types(&self) -> HashMap<String, SystemType> {
        self.dialogues
            .iter()
            .map(|d| (d.dialogue_id.clone(), d.system_type))
            .collect()
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: field `{field}`: {message}")]
    Decode {
        line: usize,
        field: String,
        message: String,
    },
    #[error("line {line}: duplicate dialogue_id `{dialogue_id}`")]
    DuplicateDialogue { line: usize, dialogue_id: String },
    #[error("line {line}: unsupported corpus format `{format}` version {version}")]
    UnsupportedFormat { line: usize, format: String, version: u64 },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum RecordOut<'a> {
    Header { format: &'a str, version: u32 },
    Dialogue(&'a DialogueRecord),
    Sample(&'a SampleWindow),
    Judgment(&'a Judgment),
}

fn decode<T: serde::de::DeserializeOwned>(value: serde_json::Value, line: usize) -> Result<T, CorpusError> {
    serde_path_to_error::deserialize(value).map_err(|err| {
        let field = err.path().to_string();
        CorpusError::Decode {
            line,
            field,
            message: err.into_inner().to_string(),
        }
    })
}

/// Decodes a corpus stream. Only field-level decoding and dialogue-id
/// uniqueness are checked here; everything else is left to [`validate`].
pub fn parse_corpus<R: BufRead>(reader: R) -> Result<CorpusBundle, CorpusError> {
    let mut bundle = CorpusBundle::default();
    let mut seen_dialogues = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(trimmed).map_err(|e| CorpusError::Decode {
            line: line_no,
            field: ".".to_string(),
            message: e.to_string(),
        })?;
        let serde_json::Value::Object(mut object) = value else {
            return Err(CorpusError::Decode {
                line: line_no,
                field: ".".to_string(),
                message: "expected a JSON object".to_string(),
            });
        };
        let kind = match object.remove("record") {
            Some(serde_json::Value::String(s)) => s,
            Some(other) => {
                return Err(CorpusError::Decode {
                    line: line_no,
                    field: "record".to_string(),
                    message: format!("expected a string, found {other}"),
                })
            }
            None => {
                return Err(CorpusError::Decode {
                    line: line_no,
                    field: "record".to_string(),
                    message: "missing field".to_string(),
                })
            }
        };
        let value = serde_json::Value::Object(object);
        match kind.as_str() {
            "header" => {
                #[derive(Deserialize)]
                #[serde(deny_unknown_fields)]
                struct Header {
                    format: String,
                    version: u64,
                }
                let header: Header = decode(value, line_no)?;
                if header.format != FORMAT_NAME || header.version != u64::from(FORMAT_VERSION) {
                    return Err(CorpusError::UnsupportedFormat {
                        line: line_no,
                        format: header.format,
                        version: header.version,
                    });
                }
            }
            "dialogue" => {
                let dialogue: DialogueRecord = decode(value, line_no)?;
                if !seen_dialogues.insert(dialogue.dialogue_id.clone()) {
                    return Err(CorpusError::DuplicateDialogue {
                        line: line_no,
                        dialogue_id: dialogue.dialogue_id,
                    });
                }
                bundle.dialogues.push(dialogue);
            }
            "sample" => bundle.samples.push(decode(value, line_no)?),
            "judgment" => bundle.judgments.push(decode(value, line_no)?),
            other => {
                return Err(CorpusError::Decode {
                    line: line_no,
                    field: "record".to_string(),
                    message: format!(
                        "unknown variant `{other}`, expected one of `header`, `dialogue`, `sample`, `judgment`"
                    ),
                })
            }
        }
    }
    Ok(bundle)
}

pub fn parse_corpus_str(input: &str) -> Result<CorpusBundle, CorpusError> {
    parse_corpus(input.as_bytes())
}

/// Writes the header line followed by dialogues, samples and judgments in
/// bundle order.
pub fn write_corpus<W: Write>(bundle: &CorpusBundle, mut out: W) -> std::io::Result<()> {
    let mut emit = |record: RecordOut<'_>| -> std::io::Result<()> {
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")
    };
    emit(RecordOut::Header {
        format: FORMAT_NAME,
        version: FORMAT_VERSION,
    })?;
    for d in &bundle.dialogues {
        emit(RecordOut::Dialogue(d))?;
    }
    for s in &bundle.samples {
        emit(RecordOut::Sample(s))?;
    }
    for j in &bundle.judgments {
        emit(RecordOut::Judgment(j))?;
    }
    Ok(())
}

pub fn serialize(bundle: &CorpusBundle) -> String {
    let mut buf = Vec::new();
    write_corpus(bundle, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ViolationKind {
    NonPositiveDuration,
    InvalidSpan,
    OutOfBounds,
    Unsorted,
    Overlap,
    EmptySurface,
    NonMaximalGaze,
    QuestionnaireLength,
    QuestionnaireRange,
    DuplicateId,
    DanglingRef,
    DuplicateJudgment,
}

impl ViolationKind {
    pub fn code(self) -> &'static str {
        match self {
            ViolationKind::NonPositiveDuration => "NON_POSITIVE_DURATION",
            ViolationKind::InvalidSpan => "INVALID_SPAN",
            ViolationKind::OutOfBounds => "OUT_OF_BOUNDS",
            ViolationKind::Unsorted => "UNSORTED",
            ViolationKind::Overlap => "OVERLAP",
            ViolationKind::EmptySurface => "EMPTY_SURFACE",
            ViolationKind::NonMaximalGaze => "NON_MAXIMAL_GAZE",
            ViolationKind::QuestionnaireLength => "QUESTIONNAIRE_LENGTH",
            ViolationKind::QuestionnaireRange => "QUESTIONNAIRE_RANGE",
            ViolationKind::DuplicateId => "DUPLICATE_ID",
            ViolationKind::DanglingRef => "DANGLING_REF",
            ViolationKind::DuplicateJudgment => "DUPLICATE_JUDGMENT",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Where the violation sits, e.g. `dialogue d01 user.segments[3]`.
    pub location: String,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at {}: {}", self.kind.code(), self.location, self.detail)
    }
}

struct Checker {
    out: Vec<Violation>,
}

impl Checker {
    fn push(&mut self, kind: ViolationKind, location: String, detail: String) {
        self.out.push(Violation { kind, location, detail });
    }

    fn bounds(&mut self, loc: impl Fn() -> String, start: Millis, end: Millis, duration: Millis) {
        if start < 0 || end > duration {
            self.push(
                ViolationKind::OutOfBounds,
                loc(),
                format!("span [{start}, {end}] ms outside [0, {duration}] ms"),
            );
        }
    }

    /// Checks that spans are well-formed, within the dialogue and, in order,
    /// neither unsorted nor overlapping.
    fn spans(&mut self, prefix: &str, spans: &[(Millis, Millis)], duration: Millis) {
        for (i, &(start, end)) in spans.iter().enumerate() {
            if end <= start {
                self.push(
                    ViolationKind::InvalidSpan,
                    format!("{prefix}[{i}]"),
                    format!("end {end} ms not after start {start} ms"),
                );
            }
            self.bounds(|| format!("{prefix}[{i}]"), start, end, duration);
        }
        for (i, pair) in spans.windows(2).enumerate() {
            let (prev, next) = (pair[0], pair[1]);
            if next.0 < prev.0 {
                self.push(
                    ViolationKind::Unsorted,
                    format!("{prefix}[{}..{}]", i, i + 1),
                    format!("start {} ms precedes previous start {} ms", next.0, prev.0),
                );
            } else if next.0 < prev.1 {
                self.push(
                    ViolationKind::Overlap,
                    format!("{prefix}[{}..{}]", i, i + 1),
                    format!("start {} ms before previous end {} ms", next.0, prev.1),
                );
            }
        }
    }

    fn channel(&mut self, dialogue: &DialogueRecord, name: &str, channel: &SpeakerChannel) {
        let id = &dialogue.dialogue_id;
        let prefix = format!("dialogue {id} {name}.segments");
        let spans: Vec<_> = channel.segments.iter().map(|s| (s.start, s.end)).collect();
        self.spans(&prefix, &spans, dialogue.duration);
        for (i, seg) in channel.segments.iter().enumerate() {
            for (j, tok) in seg.tokens.iter().enumerate() {
                if tok.surface.is_empty() {
                    self.push(
                        ViolationKind::EmptySurface,
                        format!("{prefix}[{i}].tokens[{j}]"),
                        "token surface is empty".to_string(),
                    );
                }
            }
        }
        for (i, ev) in channel.events.iter().enumerate() {
            let loc = || format!("dialogue {id} {name}.events[{i}]");
            if ev.end < ev.start {
                self.push(
                    ViolationKind::InvalidSpan,
                    loc(),
                    format!("end {} ms before start {} ms", ev.end, ev.start),
                );
            }
            self.bounds(loc, ev.start, ev.end, dialogue.duration);
        }
    }

    fn dialogue(&mut self, d: &DialogueRecord) {
        let id = &d.dialogue_id;
        if d.duration <= 0 {
            self.push(
                ViolationKind::NonPositiveDuration,
                format!("dialogue {id}"),
                format!("duration {} ms", d.duration),
            );
        }
        self.channel(d, "user", &d.user);
        self.channel(d, "system", &d.system);

        let prefix = format!("dialogue {id} gaze");
        let spans: Vec<_> = d.gaze.iter().map(|g| (g.start, g.end)).collect();
        self.spans(&prefix, &spans, d.duration);
        for (i, pair) in d.gaze.windows(2).enumerate() {
            if pair[0].end == pair[1].start && pair[0].target == pair[1].target {
                self.push(
                    ViolationKind::NonMaximalGaze,
                    format!("{prefix}[{}..{}]", i, i + 1),
                    "adjacent intervals share a target".to_string(),
                );
            }
        }

        if let Some(q) = &d.questionnaire {
            if q.len() != QUESTIONNAIRE_ITEMS {
                self.push(
                    ViolationKind::QuestionnaireLength,
                    format!("dialogue {id} questionnaire"),
                    format!("{} items, expected {QUESTIONNAIRE_ITEMS}", q.len()),
                );
            }
            for (i, &v) in q.iter().enumerate() {
                if !(QUESTIONNAIRE_MIN..=QUESTIONNAIRE_MAX).contains(&v) {
                    self.push(
                        ViolationKind::QuestionnaireRange,
                        format!("dialogue {id} questionnaire[Q{}]", i + 1),
                        format!("rating {v} outside [{QUESTIONNAIRE_MIN}, {QUESTIONNAIRE_MAX}]"),
                    );
                }
            }
        }
    }
}

/// Returns every invariant violation in the bundle. An empty list means the
/// bundle is valid.
pub fn validate(bundle: &CorpusBundle) -> Vec<Violation> {
    let mut c = Checker { out: Vec::new() };
    let mut durations: HashMap<&str, Millis> = HashMap::new();
    for d in &bundle.dialogues {
        if durations.insert(&d.dialogue_id, d.duration).is_some() {
            c.push(
                ViolationKind::DuplicateId,
                format!("dialogue {}", d.dialogue_id),
                "dialogue_id appears more than once".to_string(),
            );
        }
        c.dialogue(d);
    }

    let mut sample_ids = HashSet::new();
    for (i, s) in bundle.samples.iter().enumerate() {
        let loc = || format!("sample {} (#{i})", s.sample_id);
        if !sample_ids.insert(s.sample_id.as_str()) {
            c.push(
                ViolationKind::DuplicateId,
                loc(),
                "sample_id appears more than once".to_string(),
            );
        }
        if s.end <= s.start {
            c.push(
                ViolationKind::InvalidSpan,
                loc(),
                format!("end {} ms not after start {} ms", s.end, s.start),
            );
        }
        match durations.get(s.dialogue_id.as_str()) {
            Some(&duration) => c.bounds(loc, s.start, s.end, duration),
            None => c.push(
                ViolationKind::DanglingRef,
                loc(),
                format!("unknown dialogue_id `{}`", s.dialogue_id),
            ),
        }
    }

    let mut pairs = HashSet::new();
    for (i, j) in bundle.judgments.iter().enumerate() {
        let loc = || format!("judgment #{i} ({} by {})", j.sample_id, j.annotator_id);
        if !sample_ids.contains(j.sample_id.as_str()) {
            c.push(
                ViolationKind::DanglingRef,
                loc(),
                format!("unknown sample_id `{}`", j.sample_id),
            );
        }
        if !pairs.insert((j.sample_id.as_str(), j.annotator_id.as_str())) {
            c.push(
                ViolationKind::DuplicateJudgment,
                loc(),
                "annotator already judged this sample".to_string(),
            );
        }
    }
    c.out
}
