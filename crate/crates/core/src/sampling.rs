//! Windowing dialogues into samples, allocating samples to annotators, and
//! turning binary judgments into human-likeness scores.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};
use std::fmt::{self, Write as _};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusBundle, DialogueRecord, Millis, SystemType};
pub use crate::corpus::{Judgment, SampleWindow, Verdict};

pub const DEFAULT_WINDOW_MS: Millis = 60_000;
pub const DEFAULT_HOP_MS: Millis = 60_000;
/// Verdicts collected per sample under the standard protocol.
pub const STANDARD_JUDGMENTS: u32 = 5;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SamplingError {
    #[error("window ({window} ms) and hop ({hop} ms) must satisfy 0 < hop <= window")]
    InvalidWindow { window: Millis, hop: Millis },
    #[error("k = {k} must be at least 1")]
    ZeroK { k: usize },
    #[error("k = {k} exceeds the number of annotators ({annotators})")]
    TooFewAnnotators { k: usize, annotators: usize },
    #[error(
        "infeasible allocation: {required} verdict slots exceed capacity {capacity} \
         (deficit {deficit})"
    )]
    Infeasible {
        required: usize,
        capacity: usize,
        deficit: usize,
    },
    #[error("load_min {load_min} exceeds load_max {load_max}")]
    InvalidLoadBounds { load_min: usize, load_max: usize },
    #[error("duplicate {what} id `{id}`")]
    DuplicateId { what: &'static str, id: String },
    #[error("cannot aggregate an empty judgment list")]
    EmptyJudgments,
    #[error("judgments mix samples `{first}` and `{other}`")]
    MixedSamples { first: String, other: String },
    #[error("cannot average an empty score list")]
    EmptyScores,
    #[error("sample `{0}` cannot be resolved to a dialogue with a known system type")]
    Unresolved(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segmentation {
    pub windows: Vec<SampleWindow>,
    pub warnings: Vec<String>,
}

/// Cuts a dialogue into windows starting at 0, hop, 2*hop, ... that end no
/// later than the dialogue. Sample ids are `{dialogue_id}#{index}`.
pub fn segment(dialogue: &DialogueRecord, window: Millis, hop: Millis) -> Result<Segmentation, SamplingError> {
    if window <= 0 || hop <= 0 || hop > window {
        return Err(SamplingError::InvalidWindow { window, hop });
    }
    let mut warnings = Vec::new();
    if window > dialogue.duration {
        let msg = format!(
            "dialogue {} is shorter ({} ms) than the window ({} ms); no samples extracted",
            dialogue.dialogue_id, dialogue.duration, window
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let windows = (0..)
        .map(|i: i64| i * hop)
        .take_while(|&start| start + window <= dialogue.duration)
        .enumerate()
        .map(|(i, start)| SampleWindow {
            sample_id: format!("{}#{}", dialogue.dialogue_id, i),
            dialogue_id: dialogue.dialogue_id.clone(),
            start,
            end: start + window,
        })
        .collect();
    Ok(Segmentation { windows, warnings })
}

/// Segments every dialogue in order.
pub fn segment_all(dialogues: &[DialogueRecord], window: Millis, hop: Millis) -> Result<Segmentation, SamplingError> {
    let mut all = Segmentation {
        windows: Vec::new(),
        warnings: Vec::new(),
    };
    for d in dialogues {
        let s = segment(d, window, hop)?;
        all.windows.extend(s.windows);
        all.warnings.extend(s.warnings);
    }
    Ok(all)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocationParams {
    pub k: usize,
    pub load_min: usize,
    pub load_max: usize,
    pub seed: u64,
}

impl Default for AllocationParams {
    fn default() -> Self {
        AllocationParams {
            k: STANDARD_JUDGMENTS as usize,
            load_min: 50,
            load_max: 70,
            seed: 0,
        }
    }
}

/// Which samples each annotator must judge, in presentation order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub queues: BTreeMap<String, Vec<String>>,
    pub seed: u64,
    /// Annotators whose load ended below `load_min` because the sample pool
    /// was too small to reach it.
    pub under_loaded: Vec<String>,
}

impl Assignment {
    pub fn load(&self, annotator: &str) -> usize {
        self.queues.get(annotator).map_or(0, Vec::len)
    }

    pub fn total_slots(&self) -> usize {
        self.queues.values().map(Vec::len).sum()
    }

    /// Annotators per sample.
    pub fn annotators_by_sample(&self) -> BTreeMap<&str, Vec<&str>> {
        let mut by_sample: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for (annotator, queue) in &self.queues {
            for sample in queue {
                by_sample.entry(sample).or_default().push(annotator);
            }
        }
        by_sample
    }
}

/// Assigns each sample to `k` distinct annotators.
///
/// Samples are visited in a seeded random order; each one goes to the `k`
/// annotators with the lowest current load, ties broken by a random key
/// that is redrawn whenever an annotator receives work. Loads therefore
/// never differ by more than one, which keeps every annotator inside
/// `[load_min, load_max]` whenever the totals allow it.
pub fn allocate(
    samples: &[SampleWindow],
    annotators: &[String],
    params: &AllocationParams,
) -> Result<Assignment, SamplingError> {
    let AllocationParams {
        k,
        load_min,
        load_max,
        seed,
    } = *params;
    if k == 0 {
        return Err(SamplingError::ZeroK { k });
    }
    if load_min > load_max {
        return Err(SamplingError::InvalidLoadBounds { load_min, load_max });
    }
    if k > annotators.len() {
        return Err(SamplingError::TooFewAnnotators {
            k,
            annotators: annotators.len(),
        });
    }
    let required = k * samples.len();
    let capacity = load_max * annotators.len();
    if required > capacity {
        return Err(SamplingError::Infeasible {
            required,
            capacity,
            deficit: required - capacity,
        });
    }
    let mut seen = HashSet::new();
    for a in annotators {
        if !seen.insert(a.as_str()) {
            return Err(SamplingError::DuplicateId {
                what: "annotator",
                id: a.clone(),
            });
        }
    }
    let mut seen = HashSet::new();
    for s in samples {
        if !seen.insert(s.sample_id.as_str()) {
            return Err(SamplingError::DuplicateId {
                what: "sample",
                id: s.sample_id.clone(),
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng);

    let mut heap: BinaryHeap<Reverse<(usize, u64, usize)>> = (0..annotators.len())
        .map(|a| Reverse((0, rng.random::<u64>(), a)))
        .collect();
    let mut queues: Vec<Vec<String>> = vec![Vec::new(); annotators.len()];
    let mut picked = Vec::with_capacity(k);
    for &s in &order {
        picked.clear();
        for _ in 0..k {
            let Reverse((load, _, a)) = heap.pop().expect("k <= number of annotators");
            queues[a].push(samples[s].sample_id.clone());
            picked.push((load + 1, a));
        }
        for &(load, a) in &picked {
            heap.push(Reverse((load, rng.random::<u64>(), a)));
        }
    }

    let under_loaded = annotators
        .iter()
        .zip(&queues)
        .filter(|(_, q)| q.len() < load_min)
        .map(|(a, _)| a.clone())
        .collect::<Vec<_>>();
    if !under_loaded.is_empty() {
        log::warn!(
            "{} of {} annotators are below load_min {load_min}: only {required} verdict slots",
            under_loaded.len(),
            annotators.len()
        );
    }
    Ok(Assignment {
        queues: annotators.iter().cloned().zip(queues).collect(),
        seed,
        under_loaded,
    })
}

/// Annotator ids `a001`, `a002`, ...
pub fn annotator_ids(n: usize) -> Vec<String> {
    let width = n.to_string().len().max(3);
    (1..=n).map(|i| format!("a{i:0width$}")).collect()
}

/// Exact ratio of HUMAN verdicts for one sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HumanLikenessScore {
    pub sample_id: String,
    /// Number of HUMAN verdicts.
    pub human: u32,
    /// Number of verdicts.
    pub total: u32,
}

impl HumanLikenessScore {
    pub fn score(&self) -> f64 {
        f64::from(self.human) / f64::from(self.total)
    }

    /// False for partially annotated samples (verdict count other than five).
    pub fn is_standard(&self) -> bool {
        self.total == STANDARD_JUDGMENTS
    }

    pub fn level(&self) -> Level {
        Level::new(self.human, self.total)
    }
}

pub fn aggregate_sample(judgments: &[Judgment]) -> Result<HumanLikenessScore, SamplingError> {
    let first = judgments.first().ok_or(SamplingError::EmptyJudgments)?;
    let mut human = 0;
    for j in judgments {
        if j.sample_id != first.sample_id {
            return Err(SamplingError::MixedSamples {
                first: first.sample_id.clone(),
                other: j.sample_id.clone(),
            });
        }
        if j.verdict == Verdict::Human {
            human += 1;
        }
    }
    let score = HumanLikenessScore {
        sample_id: first.sample_id.clone(),
        human,
        total: judgments.len() as u32,
    };
    if !score.is_standard() {
        log::debug!(
            "sample {} has {} verdicts (standard is {STANDARD_JUDGMENTS})",
            score.sample_id,
            score.total
        );
    }
    Ok(score)
}

/// Scores every judged sample, ordered by sample id.
pub fn aggregate_all(judgments: &[Judgment]) -> Vec<HumanLikenessScore> {
    let mut by_sample: BTreeMap<&str, Vec<Judgment>> = BTreeMap::new();
    for j in judgments {
        by_sample.entry(&j.sample_id).or_default().push(j.clone());
    }
    by_sample
        .values()
        .map(|js| aggregate_sample(js).expect("non-empty, single-sample group"))
        .collect()
}

pub fn score_dialogue(sample_scores: &[HumanLikenessScore]) -> Result<f64, SamplingError> {
    if sample_scores.is_empty() {
        return Err(SamplingError::EmptyScores);
    }
    // Summed as an exact fraction over the common denominator so that equal
    // sample scores average to exactly that score.
    fn gcd(a: u64, b: u64) -> u64 {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    let den = sample_scores.iter().fold(1u64, |acc, s| {
        let t = u64::from(s.total.max(1));
        acc / gcd(acc, t) * t
    });
    let num: u64 = sample_scores
        .iter()
        .map(|s| u64::from(s.human) * (den / u64::from(s.total.max(1))))
        .sum();
    Ok(num as f64 / (den * sample_scores.len() as u64) as f64)
}

/// Mean sample score per dialogue. Samples without judgments are skipped, as
/// are dialogues left without any judged sample.
pub fn dialogue_scores(bundle: &CorpusBundle) -> BTreeMap<String, f64> {
    let dialogue_of: HashMap<&str, &str> = bundle
        .samples
        .iter()
        .map(|s| (s.sample_id.as_str(), s.dialogue_id.as_str()))
        .collect();
    let mut grouped: BTreeMap<String, Vec<HumanLikenessScore>> = BTreeMap::new();
    for score in aggregate_all(&bundle.judgments) {
        if let Some(d) = dialogue_of.get(score.sample_id.as_str()) {
            grouped.entry(d.to_string()).or_default().push(score);
        }
    }
    grouped
        .into_iter()
        .map(|(d, scores)| {
            let mean = score_dialogue(&scores).expect("groups are non-empty");
            (d, mean)
        })
        .collect()
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// A score level as a reduced fraction, ordered by value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Level {
    pub num: u32,
    pub den: u32,
}

impl Level {
    pub fn new(num: u32, den: u32) -> Self {
        let g = gcd(num, den).max(1);
        Level {
            num: num / g,
            den: den / g,
        }
    }

    pub fn value(self) -> f64 {
        f64::from(self.num) / f64::from(self.den)
    }
}

impl Ord for Level {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (u64::from(self.num) * u64::from(other.den)).cmp(&(u64::from(other.num) * u64::from(self.den)))
    }
}

impl PartialOrd for Level {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.1}", self.value())
    }
}

/// Percentage `count / total` in tenths of a percent, rounded half-up.
pub fn percent_tenths(count: usize, total: usize) -> u64 {
    if total == 0 {
        return 0;
    }
    let (c, t) = (count as u64, total as u64);
    (2 * c * 1000 + t) / (2 * t)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub level: Level,
    pub autonomous: usize,
    pub woz: usize,
}

impl HistogramRow {
    pub fn total(&self) -> usize {
        self.autonomous + self.woz
    }

    pub fn count(&self, column: Option<SystemType>) -> usize {
        match column {
            Some(SystemType::Autonomous) => self.autonomous,
            Some(SystemType::Woz) => self.woz,
            None => self.total(),
        }
    }
}

/// Machine-readable histogram cell. `type` is `autonomous`, `woz` or `total`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramCell {
    pub level: f64,
    #[serde(rename = "type")]
    pub column: String,
    pub count: usize,
    pub pct: f64,
}

/// Sample counts per score level and system type, highest level first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramTable {
    pub rows: Vec<HistogramRow>,
}

impl HistogramTable {
    pub fn column_total(&self, column: Option<SystemType>) -> usize {
        self.rows.iter().map(|r| r.count(column)).sum()
    }

    /// Percentage of the column total, half-up to one decimal.
    pub fn pct(&self, row: &HistogramRow, column: Option<SystemType>) -> f64 {
        percent_tenths(row.count(column), self.column_total(column)) as f64 / 10.0
    }

    pub fn cells(&self) -> Vec<HistogramCell> {
        let columns = [
            (Some(SystemType::Autonomous), "autonomous"),
            (Some(SystemType::Woz), "woz"),
            (None, "total"),
        ];
        let mut out = Vec::new();
        for row in &self.rows {
            for (column, name) in columns {
                out.push(HistogramCell {
                    level: row.level.value(),
                    column: name.to_string(),
                    count: row.count(column),
                    pct: self.pct(row, column),
                });
            }
        }
        out
    }

    pub fn render(&self) -> String {
        let cell = |row: &HistogramRow, column| format!("{:>4} ({:>5.1}%)", row.count(column), self.pct(row, column));
        // Levels are shown over their common denominator (5/5, not 1/1).
        let den = self
            .rows
            .iter()
            .fold(1u32, |acc, r| acc / gcd(acc, r.level.den) * r.level.den);
        let mut s = String::new();
        let _ = writeln!(s, "{:<12} {:>13} {:>13} {:>13}", "HL score", "Auto.", "WOZ", "Total");
        for row in &self.rows {
            let _ = writeln!(
                s,
                "{:<12} {:>13} {:>13} {:>13}",
                format!("{} ({}/{})", row.level, row.level.num * (den / row.level.den), den),
                cell(row, Some(SystemType::Autonomous)),
                cell(row, Some(SystemType::Woz)),
                cell(row, None),
            );
        }
        let _ = writeln!(
            s,
            "{:<12} {:>13} {:>13} {:>13}",
            "Total",
            self.column_total(Some(SystemType::Autonomous)),
            self.column_total(Some(SystemType::Woz)),
            self.column_total(None),
        );
        s
    }
}

/// Builds the level-by-system-type histogram. Every level reachable with the
/// verdict counts present is listed, including empty ones.
pub fn distribution(
    scores: &[HumanLikenessScore],
    samples: &[SampleWindow],
    system_types: &HashMap<String, SystemType>,
) -> Result<HistogramTable, SamplingError> {
    let dialogue_of: HashMap<&str, &str> = samples
        .iter()
        .map(|s| (s.sample_id.as_str(), s.dialogue_id.as_str()))
        .collect();
    let mut counts: BTreeMap<Level, (usize, usize)> = BTreeMap::new();
    let mut denominators = HashSet::new();
    for score in scores {
        let ty = dialogue_of
            .get(score.sample_id.as_str())
            .and_then(|d| system_types.get(*d))
            .ok_or_else(|| SamplingError::Unresolved(score.sample_id.clone()))?;
        denominators.insert(score.total);
        let cell = counts.entry(score.level()).or_default();
        match ty {
            SystemType::Autonomous => cell.0 += 1,
            SystemType::Woz => cell.1 += 1,
        }
    }
    for n in denominators {
        for k in 0..=n {
            counts.entry(Level::new(k, n)).or_default();
        }
    }
    let rows = counts
        .into_iter()
        .rev()
        .map(|(level, (autonomous, woz))| HistogramRow { level, autonomous, woz })
        .collect();
    Ok(HistogramTable { rows })
}
