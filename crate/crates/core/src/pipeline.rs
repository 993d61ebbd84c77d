//! The stages strung together: scores, features, correlations and
//! leave-one-out evaluation for one corpus bundle.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::corpus::{CorpusBundle, SampleWindow};
use crate::features::{dialogue_feature_vector, FeatureConfig, FeatureError, FeatureVector};
use crate::regression::{loocv, mean_baseline_loocv, EvaluationResult, RegressionError, SvrParams};
use crate::sampling::dialogue_scores;
use crate::stats::{
    feature_correlation_report, subjective_correlation_report, CorrelationResult, StatsError, DEFAULT_HIGHLIGHT_R,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Regression(#[from] RegressionError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisConfig {
    pub features: FeatureConfig,
    pub highlight_r: f64,
    pub svr: SvrParams,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            features: FeatureConfig::default(),
            highlight_r: DEFAULT_HIGHLIGHT_R,
            svr: SvrParams::default(),
        }
    }
}

/// Feature vectors for every dialogue that has sample windows, sorted by
/// dialogue id.
pub fn extract_features(bundle: &CorpusBundle, config: &FeatureConfig) -> Result<Vec<FeatureVector>, FeatureError> {
    let mut windows: BTreeMap<&str, Vec<SampleWindow>> = BTreeMap::new();
    for s in &bundle.samples {
        windows.entry(s.dialogue_id.as_str()).or_default().push(s.clone());
    }
    let mut out = Vec::new();
    for d in &bundle.dialogues {
        match windows.get(d.dialogue_id.as_str()) {
            Some(w) => out.push(dialogue_feature_vector(d, w, config)?),
            None => log::warn!("dialogue {} has no sample windows, skipped", d.dialogue_id),
        }
    }
    out.sort_by(|a, b| a.dialogue_id.cmp(&b.dialogue_id));
    Ok(out)
}

/// Restricts features and scores to the dialogues present in both.
pub fn align(
    features: &[FeatureVector],
    scores: &BTreeMap<String, f64>,
) -> (Vec<FeatureVector>, BTreeMap<String, f64>) {
    let kept: Vec<FeatureVector> = features
        .iter()
        .filter(|f| scores.contains_key(&f.dialogue_id))
        .cloned()
        .collect();
    let dropped = features.len() - kept.len();
    if dropped > 0 {
        log::warn!("{dropped} dialogue(s) have features but no judgments");
    }
    let scores = kept
        .iter()
        .map(|f| (f.dialogue_id.clone(), scores[&f.dialogue_id]))
        .collect();
    (kept, scores)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub svr: EvaluationResult,
    pub baseline: EvaluationResult,
}

/// LOOCV of the SVR next to the mean-predictor baseline.
pub fn evaluate(
    features: &[FeatureVector],
    scores: &BTreeMap<String, f64>,
    params: &SvrParams,
) -> Result<Evaluation, PipelineError> {
    let (features, scores) = align(features, scores);
    let ids: Vec<String> = features.iter().map(|f| f.dialogue_id.clone()).collect();
    let x: Vec<Vec<f64>> = features.iter().map(FeatureVector::to_row).collect();
    let y: Vec<f64> = ids.iter().map(|id| scores[id]).collect();
    Ok(Evaluation {
        svr: loocv(&ids, &x, &y, params)?,
        baseline: mean_baseline_loocv(&ids, &y)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub scores: BTreeMap<String, f64>,
    pub features: Vec<FeatureVector>,
    pub feature_report: Vec<CorrelationResult>,
    /// Present when at least three scored dialogues carry a questionnaire.
    pub subjective_report: Option<Vec<CorrelationResult>>,
}

/// Scores, features and both correlation reports.
pub fn analyze(bundle: &CorpusBundle, config: &AnalysisConfig) -> Result<Analysis, PipelineError> {
    let all_scores = dialogue_scores(bundle);
    let (features, scores) = align(&extract_features(bundle, &config.features)?, &all_scores);
    let feature_report = feature_correlation_report(&features, &scores, config.highlight_r)?;
    let questionnaires: Vec<_> = bundle
        .dialogues
        .iter()
        .filter(|d| scores.contains_key(&d.dialogue_id))
        .filter_map(|d| d.questionnaire.clone().map(|q| (d.dialogue_id.clone(), q)))
        .collect();
    let subjective_report = if questionnaires.len() >= crate::stats::MIN_CORRELATION_N {
        Some(subjective_correlation_report(
            &questionnaires,
            &scores,
            config.highlight_r,
        )?)
    } else {
        None
    };
    Ok(Analysis {
        scores,
        features,
        feature_report,
        subjective_report,
    })
}
