//! Rank correlation, mean absolute error, and the feature and questionnaire
//! correlation reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{QuestionnaireResponse, QUESTIONNAIRE_ITEMS};
use crate::features::{Category, Feature, FeatureVector};

/// Rows with |r| at or above this are highlighted.
pub const DEFAULT_HIGHLIGHT_R: f64 = 0.20;
pub const MIN_CORRELATION_N: usize = 3;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {MIN_CORRELATION_N} observations, got {0}")]
    TooFew(usize),
    #[error("correlation undefined: constant input")]
    Constant,
    #[error("non-finite value in input")]
    NonFinite,
    #[error("empty input")]
    Empty,
    #[error("dialogue `{0}` has features but no score, or a score but no features")]
    Misaligned(String),
    #[error("dialogue `{0}`: questionnaire has {1} items, expected {QUESTIONNAIRE_ITEMS}")]
    BadQuestionnaire(String, usize),
}

/// Average (fractional) ranks starting at 1; tied values share the mean of
/// the ranks they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i..j (0-based) hold ranks i+1..=j
        let rank = (i + j + 1) as f64 / 2.0;
        for &idx in &order[i..j] {
            ranks[idx] = rank;
        }
        i = j;
    }
    ranks
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.is_empty() {
        return Err(StatsError::Empty);
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::Constant);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Spearman's rho as the Pearson correlation of average ranks, exact in the
/// presence of ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < MIN_CORRELATION_N {
        return Err(StatsError::TooFew(x.len()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let constant = |v: &[f64]| v.iter().all(|&a| a == v[0]);
    if constant(x) || constant(y) {
        return Err(StatsError::Constant);
    }
    // Doubled average ranks are integers, so the co-moments are exact.
    let doubled = |v: &[f64]| -> Vec<i128> { average_ranks(v).iter().map(|r| (r * 2.0) as i128).collect() };
    let (rx, ry) = (doubled(x), doubled(y));
    let n = rx.len() as i128;
    let (sx, sy): (i128, i128) = (rx.iter().sum(), ry.iter().sum());
    let dot = |a: &[i128], b: &[i128]| a.iter().zip(b).map(|(p, q)| p * q).sum::<i128>();
    let sxy = n * dot(&rx, &ry) - sx * sy;
    let sxx = n * dot(&rx, &rx) - sx * sx;
    let syy = n * dot(&ry, &ry) - sy * sy;
    let r = if sxx == syy {
        sxy as f64 / sxx as f64
    } else {
        sxy as f64 / ((sxx as f64) * (syy as f64)).sqrt()
    };
    Ok(r.clamp(-1.0, 1.0))
}

pub fn mae(pred: &[f64], actual: &[f64]) -> Result<f64, StatsError> {
    if pred.len() != actual.len() {
        return Err(StatsError::LengthMismatch(pred.len(), actual.len()));
    }
    if pred.is_empty() {
        return Err(StatsError::Empty);
    }
    let sum: f64 = pred.iter().zip(actual).map(|(p, a)| (p - a).abs()).sum();
    Ok(sum / pred.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub label: String,
    /// `None` when fewer than three pairs are available or one side is
    /// constant.
    pub r: Option<f64>,
    pub n: usize,
    pub highlighted: bool,
}

impl CorrelationResult {
    fn new(label: impl Into<String>, x: &[f64], y: &[f64], threshold: f64) -> Self {
        let r = spearman(x, y).ok();
        CorrelationResult {
            label: label.into(),
            r,
            n: x.len(),
            highlighted: r.is_some_and(|r| r.abs() >= threshold),
        }
    }
}

fn check_alignment<'a>(
    ids: impl Iterator<Item = &'a str>,
    scores: &BTreeMap<String, f64>,
) -> Result<usize, StatsError> {
    let mut n = 0;
    for id in ids {
        if !scores.contains_key(id) {
            return Err(StatsError::Misaligned(id.to_string()));
        }
        n += 1;
    }
    if n != scores.len() {
        let extra = scores.keys().next().cloned().unwrap_or_default();
        return Err(StatsError::Misaligned(extra));
    }
    Ok(n)
}

/// Spearman correlation of each feature with the dialogue scores, one row
/// per feature in table order. Dialogues where a feature is undefined are
/// left out of that row.
pub fn feature_correlation_report(
    features: &[FeatureVector],
    scores: &BTreeMap<String, f64>,
    threshold: f64,
) -> Result<Vec<CorrelationResult>, StatsError> {
    let n = check_alignment(features.iter().map(|f| f.dialogue_id.as_str()), scores)?;
    if let Some(dup) = duplicate(features.iter().map(|f| f.dialogue_id.as_str())) {
        return Err(StatsError::Misaligned(dup));
    }
    if n < MIN_CORRELATION_N {
        return Err(StatsError::TooFew(n));
    }
    Ok(Feature::ALL
        .iter()
        .map(|&feature| {
            let (x, y): (Vec<f64>, Vec<f64>) = features
                .iter()
                .filter_map(|f| f.get(feature).map(|v| (v, scores[&f.dialogue_id])))
                .unzip();
            CorrelationResult::new(feature.label(), &x, &y, threshold)
        })
        .collect())
}

fn duplicate<'a>(ids: impl Iterator<Item = &'a str>) -> Option<String> {
    let mut seen = std::collections::HashSet::new();
    ids.into_iter().find(|id| !seen.insert(*id)).map(str::to_string)
}

/// Spearman correlation of each questionnaire item with the dialogue
/// scores. `questionnaires` holds (dialogue_id, response) for the dialogues
/// that have one; `scores` must cover them.
pub fn subjective_correlation_report(
    questionnaires: &[(String, QuestionnaireResponse)],
    scores: &BTreeMap<String, f64>,
    threshold: f64,
) -> Result<Vec<CorrelationResult>, StatsError> {
    if questionnaires.len() < MIN_CORRELATION_N {
        return Err(StatsError::TooFew(questionnaires.len()));
    }
    if let Some(dup) = duplicate(questionnaires.iter().map(|(id, _)| id.as_str())) {
        return Err(StatsError::Misaligned(dup));
    }
    let mut y = Vec::with_capacity(questionnaires.len());
    for (id, q) in questionnaires {
        if q.len() != QUESTIONNAIRE_ITEMS {
            return Err(StatsError::BadQuestionnaire(id.clone(), q.len()));
        }
        y.push(*scores.get(id).ok_or_else(|| StatsError::Misaligned(id.clone()))?);
    }
    Ok((0..QUESTIONNAIRE_ITEMS)
        .map(|item| {
            let x: Vec<f64> = questionnaires.iter().map(|(_, q)| q[item] as f64).collect();
            CorrelationResult::new(format!("Q{}", item + 1), &x, &y, threshold)
        })
        .collect())
}

fn format_r(row: &CorrelationResult) -> String {
    match row.r {
        Some(r) if row.highlighted => format!("**{r:.2}**"),
        Some(r) => format!("{r:.2}"),
        None => "n/a".to_string(),
    }
}

/// Plain-text feature report grouped under category headings; highlighted
/// coefficients are wrapped in `**`.
pub fn render_feature_report(rows: &[CorrelationResult]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<36} {:>10} {:>4}", "Behavior", "Corr. (r)", "n");
    let mut category = None;
    for (row, feature) in rows.iter().zip(Feature::ALL) {
        let c: Category = feature.category();
        if category != Some(c) {
            let _ = writeln!(s, "{}", c.heading());
            category = Some(c);
        }
        let _ = writeln!(s, "  {:<34} {:>10} {:>4}", row.label, format_r(row), row.n);
    }
    s
}

pub fn render_subjective_report(rows: &[CorrelationResult]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<8} {:>10} {:>4}", "Item", "Corr.", "n");
    for row in rows {
        let _ = writeln!(s, "{:<8} {:>10} {:>4}", row.label, format_r(row), row.n);
    }
    s
}
