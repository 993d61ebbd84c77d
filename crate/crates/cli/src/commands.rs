use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use hleval_core::corpus::{parse_corpus, serialize, validate, CorpusBundle};
use hleval_core::features::{write_feature_table, Feature, FeatureConfig, FeatureRow};
use hleval_core::pipeline::{self, extract_features};
use hleval_core::regression::{svr_train, KernelKind, SvrParams};
use hleval_core::sampling::{
    aggregate_all, allocate, annotator_ids, dialogue_scores, distribution, segment_all, AllocationParams,
};
use hleval_core::stats::{
    feature_correlation_report, render_feature_report, render_subjective_report, subjective_correlation_report,
    CorrelationResult, DEFAULT_HIGHLIGHT_R, MIN_CORRELATION_N,
};
use hleval_core::synth::{generate, write_ground_truth, SynthConfig};
use serde::Serialize;
use serde_json::json;

use crate::artifacts::{digest_file, tsv, InputDigest, OutDir};

/// A failure caused by the input data rather than by the tool.
#[derive(Debug)]
pub struct DataError(pub String);

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for DataError {}

fn data<E: fmt::Display>(e: E) -> anyhow::Error {
    anyhow::Error::new(DataError(e.to_string()))
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CorpusArgs {
    /// Corpus file (line-delimited JSON records).
    #[arg(long)]
    pub corpus: PathBuf,
    /// Extra files whose judgment records are merged into the corpus.
    #[arg(long = "judgments")]
    pub judgments: Vec<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct WindowArgs {
    /// Sample window length in seconds.
    #[arg(long, default_value_t = 60.0)]
    pub window_s: f64,
    /// Step between window starts in seconds.
    #[arg(long, default_value_t = 60.0)]
    pub hop_s: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelArg {
    Rbf,
    Linear,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SvrArgs {
    #[arg(long, default_value_t = 1.0)]
    pub svr_c: f64,
    #[arg(long, default_value_t = 0.05)]
    pub svr_eps: f64,
    /// RBF width; defaults to 1 / number of features.
    #[arg(long)]
    pub svr_gamma: Option<f64>,
    #[arg(long, value_enum, default_value_t = KernelArg::Rbf)]
    pub kernel: KernelArg,
    /// SMO stopping tolerance on the KKT violation.
    #[arg(long, default_value_t = 1e-3)]
    pub svr_tol: f64,
}

impl SvrArgs {
    fn params(&self) -> SvrParams {
        SvrParams {
            c: self.svr_c,
            epsilon: self.svr_eps,
            kernel: match self.kernel {
                KernelArg::Rbf => KernelKind::Rbf,
                KernelArg::Linear => KernelKind::Linear,
            },
            gamma: self.svr_gamma,
            tolerance: self.svr_tol,
            max_iter: None,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ValidateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: CorpusArgs,
    /// Also write the violation list and manifest here.
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SegmentArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: CorpusArgs,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub window: WindowArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AssignArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: CorpusArgs,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub window: WindowArgs,
    /// Number of annotators, named a001, a002, ...
    #[arg(long, default_value_t = 78)]
    pub annotators: usize,
    /// Verdicts per sample.
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 50)]
    pub load_min: usize,
    #[arg(long, default_value_t = 70)]
    pub load_max: usize,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AnalysisArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: CorpusArgs,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub window: WindowArgs,
    /// |r| at or above which a correlation is highlighted.
    #[arg(long, default_value_t = DEFAULT_HIGHLIGHT_R)]
    pub highlight_r: f64,
    #[command(flatten)]
    #[serde(flatten)]
    pub svr: SvrArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    /// TOML file overriding generator defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Generator seed; overrides any seed in the config file.
    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ServeArgs {
    /// Directory holding session logs and snapshots.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
    /// Prefix for clip URLs; the encoded sample id is appended.
    #[arg(long, default_value = "/clips/")]
    pub clip_base_url: String,
}

/// Reads, merges and validates the input corpus.
fn load(input: &CorpusArgs) -> Result<(CorpusBundle, Vec<InputDigest>)> {
    let read = |path: &Path| -> Result<CorpusBundle> {
        let file = File::open(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
        parse_corpus(BufReader::new(file)).map_err(|e| data(format!("{}: {e}", path.display())))
    };
    let mut bundle = read(&input.corpus)?;
    let mut digests = vec![digest_file(&input.corpus)?];
    for path in &input.judgments {
        bundle.judgments.extend(read(path)?.judgments);
        digests.push(digest_file(path)?);
    }
    let violations = validate(&bundle);
    if !violations.is_empty() {
        for v in &violations {
            eprintln!("{v}");
        }
        return Err(data(format!(
            "{} invariant violation(s) in the corpus",
            violations.len()
        )));
    }
    Ok((bundle, digests))
}

fn window_ms(w: &WindowArgs) -> Result<(i64, i64)> {
    let ms = |s: f64| (s * 1000.0).round() as i64;
    if !(w.window_s > 0.0 && w.hop_s > 0.0) {
        return Err(data("--window-s and --hop-s must be positive"));
    }
    Ok((ms(w.window_s), ms(w.hop_s)))
}

/// Segments the dialogues when the corpus carries no samples.
fn ensure_samples(bundle: &mut CorpusBundle, w: &WindowArgs) -> Result<()> {
    if bundle.samples.is_empty() {
        let (window, hop) = window_ms(w)?;
        let seg = segment_all(&bundle.dialogues, window, hop).map_err(data)?;
        for warning in &seg.warnings {
            log::warn!("{warning}");
        }
        bundle.samples = seg.windows;
    }
    Ok(())
}

fn config<T: Serialize>(args: &T) -> serde_json::Value {
    serde_json::to_value(args).expect("plain arguments")
}

pub fn validate_cmd(args: &ValidateArgs) -> Result<()> {
    let file = File::open(&args.input.corpus).map_err(|e| data(format!("{}: {e}", args.input.corpus.display())))?;
    let mut bundle = parse_corpus(BufReader::new(file)).map_err(data)?;
    let mut inputs = vec![digest_file(&args.input.corpus)?];
    for path in &args.input.judgments {
        let file = File::open(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
        bundle
            .judgments
            .extend(parse_corpus(BufReader::new(file)).map_err(data)?.judgments);
        inputs.push(digest_file(path)?);
    }
    let violations = validate(&bundle);
    let listing: String = violations.iter().map(|v| format!("{v}\n")).collect();
    if let Some(out) = &args.out {
        let mut dir = OutDir::create(out, "validate", config(args), inputs)?;
        dir.text("violations.txt", "violations", &listing)?;
    }
    if violations.is_empty() {
        println!(
            "ok: {} dialogues, {} samples, {} judgments",
            bundle.dialogues.len(),
            bundle.samples.len(),
            bundle.judgments.len()
        );
        Ok(())
    } else {
        print!("{listing}");
        Err(data(format!("{} invariant violation(s)", violations.len())))
    }
}

pub fn segment_cmd(args: &SegmentArgs) -> Result<()> {
    let (mut bundle, inputs) = load(&args.input)?;
    let (window, hop) = window_ms(&args.window)?;
    let seg = segment_all(&bundle.dialogues, window, hop).map_err(data)?;
    for warning in &seg.warnings {
        log::warn!("{warning}");
    }
    let kept: std::collections::HashSet<&str> = seg.windows.iter().map(|w| w.sample_id.as_str()).collect();
    let before = bundle.judgments.len();
    let judgments: Vec<_> = bundle
        .judgments
        .iter()
        .filter(|j| kept.contains(j.sample_id.as_str()))
        .cloned()
        .collect();
    if judgments.len() < before {
        log::warn!(
            "dropped {} judgment(s) of samples no longer present",
            before - judgments.len()
        );
    }
    bundle.judgments = judgments;
    bundle.samples = seg.windows;
    let mut out = OutDir::create(&args.out, "segment", config(args), inputs)?;
    out.text("corpus.jsonl", "corpus", &serialize(&bundle))?;
    println!(
        "{} samples from {} dialogues",
        bundle.samples.len(),
        bundle.dialogues.len()
    );
    Ok(())
}

pub fn assign_cmd(args: &AssignArgs) -> Result<()> {
    let (mut bundle, inputs) = load(&args.input)?;
    ensure_samples(&mut bundle, &args.window)?;
    let params = AllocationParams {
        k: args.k,
        load_min: args.load_min,
        load_max: args.load_max,
        seed: args.seed,
    };
    let assignment = allocate(&bundle.samples, &annotator_ids(args.annotators), &params).map_err(data)?;
    let mut out = OutDir::create(&args.out, "assign", config(args), inputs)?;
    out.json("assignment.json", "assignment", &assignment)?;
    let rows = assignment.queues.iter().flat_map(|(a, q)| {
        q.iter()
            .enumerate()
            .map(move |(i, s)| vec![a.clone(), (i + 1).to_string(), s.clone()])
    });
    out.text(
        "assignment.tsv",
        "assignment",
        &tsv(&["annotator_id", "position", "sample_id"], rows),
    )?;
    let loads: Vec<usize> = assignment.queues.values().map(Vec::len).collect();
    println!(
        "{} samples x {} verdicts over {} annotators; load {}..{}",
        bundle.samples.len(),
        args.k,
        args.annotators,
        loads.iter().min().unwrap_or(&0),
        loads.iter().max().unwrap_or(&0)
    );
    Ok(())
}

fn write_aggregate(bundle: &CorpusBundle, out: &mut OutDir) -> Result<String> {
    let scores = aggregate_all(&bundle.judgments);
    let types = bundle.system_types();
    let dialogue_of: BTreeMap<&str, &str> = bundle
        .samples
        .iter()
        .map(|s| (s.sample_id.as_str(), s.dialogue_id.as_str()))
        .collect();
    let rows = scores.iter().map(|s| {
        let d = dialogue_of.get(s.sample_id.as_str()).copied().unwrap_or("");
        vec![
            s.sample_id.clone(),
            d.to_string(),
            types.get(d).map(|t| t.to_string()).unwrap_or_default(),
            s.human.to_string(),
            s.total.to_string(),
            s.score().to_string(),
        ]
    });
    out.text(
        "sample_scores.tsv",
        "sample-scores",
        &tsv(
            &["sample_id", "dialogue_id", "system_type", "human", "total", "score"],
            rows,
        ),
    )?;
    let per_dialogue = dialogue_scores(bundle);
    let rows = per_dialogue.iter().map(|(d, s)| {
        vec![
            d.clone(),
            types.get(d).map(|t| t.to_string()).unwrap_or_default(),
            s.to_string(),
        ]
    });
    out.text(
        "dialogue_scores.tsv",
        "dialogue-scores",
        &tsv(&["dialogue_id", "system_type", "hl_score"], rows),
    )?;
    let table = distribution(&scores, &bundle.samples, &types).map_err(data)?;
    let rendered = table.render();
    out.text("histogram.txt", "histogram", &rendered)?;
    let rows = table.cells().into_iter().map(|c| {
        vec![
            c.level.to_string(),
            c.column,
            c.count.to_string(),
            format!("{:.1}", c.pct),
        ]
    });
    out.text(
        "histogram.tsv",
        "histogram",
        &tsv(&["level", "type", "count", "pct"], rows),
    )?;
    Ok(rendered)
}

pub fn aggregate_cmd(args: &AnalysisArgs) -> Result<()> {
    let (bundle, inputs) = load(&args.input)?;
    let mut out = OutDir::create(&args.out, "aggregate", config(args), inputs)?;
    print!("{}", write_aggregate(&bundle, &mut out)?);
    Ok(())
}

fn write_features(bundle: &CorpusBundle, out: &mut OutDir) -> Result<()> {
    let features = extract_features(bundle, &FeatureConfig::default()).map_err(data)?;
    let scores = dialogue_scores(bundle);
    let types = bundle.system_types();
    let rows: Vec<FeatureRow> = features
        .into_iter()
        .map(|v| FeatureRow {
            system_type: types[&v.dialogue_id],
            hl_score: scores.get(&v.dialogue_id).copied(),
            vector: v,
        })
        .collect();
    let mut buf = Vec::new();
    write_feature_table(&rows, &mut buf).context("formatting feature table")?;
    out.text("features.tsv", "features", &String::from_utf8(buf)?)
}

pub fn features_cmd(args: &AnalysisArgs) -> Result<()> {
    let (mut bundle, inputs) = load(&args.input)?;
    ensure_samples(&mut bundle, &args.window)?;
    let mut out = OutDir::create(&args.out, "features", config(args), inputs)?;
    write_features(&bundle, &mut out)?;
    println!("{} dialogues", bundle.dialogues.len());
    Ok(())
}

fn correlation_rows(rows: &[CorrelationResult], keys: &[String]) -> String {
    let body = rows.iter().zip(keys).map(|(r, k)| {
        vec![
            k.clone(),
            r.label.clone(),
            r.r.map(|v| v.to_string()).unwrap_or_default(),
            r.n.to_string(),
            r.highlighted.to_string(),
        ]
    });
    tsv(&["key", "label", "r", "n", "highlighted"], body)
}

fn write_correlations(bundle: &CorpusBundle, threshold: f64, out: &mut OutDir) -> Result<String> {
    let all_scores = dialogue_scores(bundle);
    let features = extract_features(bundle, &FeatureConfig::default()).map_err(data)?;
    let (features, scores) = pipeline::align(&features, &all_scores);
    let rows = feature_correlation_report(&features, &scores, threshold).map_err(data)?;
    let mut printed = render_feature_report(&rows);
    out.text("behavior_correlations.txt", "behavior-correlations", &printed)?;
    let keys: Vec<String> = Feature::ALL.iter().map(|f| f.key().to_string()).collect();
    out.text(
        "behavior_correlations.tsv",
        "behavior-correlations",
        &correlation_rows(&rows, &keys),
    )?;

    let questionnaires: Vec<_> = bundle
        .dialogues
        .iter()
        .filter(|d| scores.contains_key(&d.dialogue_id))
        .filter_map(|d| d.questionnaire.clone().map(|q| (d.dialogue_id.clone(), q)))
        .collect();
    if questionnaires.len() >= MIN_CORRELATION_N {
        let rows = subjective_correlation_report(&questionnaires, &scores, threshold).map_err(data)?;
        let rendered = render_subjective_report(&rows);
        out.text("subjective_correlations.txt", "subjective-correlations", &rendered)?;
        let keys: Vec<String> = rows.iter().map(|r| r.label.to_lowercase()).collect();
        out.text(
            "subjective_correlations.tsv",
            "subjective-correlations",
            &correlation_rows(&rows, &keys),
        )?;
        printed.push('\n');
        printed.push_str(&rendered);
    }
    Ok(printed)
}

pub fn correlate_cmd(args: &AnalysisArgs) -> Result<()> {
    let (mut bundle, inputs) = load(&args.input)?;
    ensure_samples(&mut bundle, &args.window)?;
    let mut out = OutDir::create(&args.out, "correlate", config(args), inputs)?;
    print!("{}", write_correlations(&bundle, args.highlight_r, &mut out)?);
    Ok(())
}

fn write_evaluation(bundle: &CorpusBundle, params: &SvrParams, out: &mut OutDir) -> Result<String> {
    params.check().map_err(data)?;
    let features = extract_features(bundle, &FeatureConfig::default()).map_err(data)?;
    let (features, scores) = pipeline::align(&features, &dialogue_scores(bundle));
    let eval = pipeline::evaluate(&features, &scores, params).map_err(data)?;
    let rows = eval.svr.predictions.iter().map(|p| {
        vec![
            p.dialogue_id.clone(),
            p.actual.to_string(),
            p.predicted.to_string(),
            p.abs_error().to_string(),
        ]
    });
    out.text(
        "loocv.tsv",
        "loocv",
        &tsv(&["dialogue_id", "actual", "predicted", "abs_error"], rows),
    )?;
    out.json(
        "evaluation.json",
        "evaluation",
        &json!({
            "n": eval.svr.predictions.len(),
            "mae": eval.svr.mae,
            "baseline_mae": eval.baseline.mae,
            "converged": eval.svr.converged,
            "imputed": eval.svr.imputed,
            "params": params,
        }),
    )?;
    let x: Vec<Vec<f64>> = features.iter().map(|f| f.to_row()).collect();
    let y: Vec<f64> = features.iter().map(|f| scores[&f.dialogue_id]).collect();
    let model = svr_train(&x, &y, params).map_err(data)?;
    out.json("model.json", "svr-model", &model)?;
    let mut summary = format!(
        "LOOCV over {} dialogues\nMAE {:.4}\nmean-baseline MAE {:.4}\n",
        eval.svr.predictions.len(),
        eval.svr.mae,
        eval.baseline.mae
    );
    if !eval.svr.converged {
        summary.push_str("warning: some folds hit the iteration cap\n");
    }
    if eval.svr.imputed {
        summary.push_str("note: missing feature values were imputed with fold means\n");
    }
    out.text("evaluation.txt", "evaluation", &summary)?;
    Ok(summary)
}

pub fn evaluate_cmd(args: &AnalysisArgs) -> Result<()> {
    let (mut bundle, inputs) = load(&args.input)?;
    ensure_samples(&mut bundle, &args.window)?;
    let mut out = OutDir::create(&args.out, "evaluate", config(args), inputs)?;
    print!("{}", write_evaluation(&bundle, &args.svr.params(), &mut out)?);
    Ok(())
}

pub fn report_cmd(args: &AnalysisArgs) -> Result<()> {
    let (mut bundle, inputs) = load(&args.input)?;
    ensure_samples(&mut bundle, &args.window)?;
    let mut out = OutDir::create(&args.out, "report", config(args), inputs)?;
    let mut text = write_aggregate(&bundle, &mut out)?;
    write_features(&bundle, &mut out)?;
    text.push('\n');
    text.push_str(&write_correlations(&bundle, args.highlight_r, &mut out)?);
    text.push('\n');
    text.push_str(&write_evaluation(&bundle, &args.svr.params(), &mut out)?);
    out.text("report.txt", "report", &text)?;
    print!("{text}");
    Ok(())
}

pub fn synth_cmd(args: &SynthArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
            toml::from_str::<SynthConfig>(&text).map_err(|e| data(format!("{}: {e}", path.display())))?
        }
        None => SynthConfig::default(),
    };
    cfg.seed = args.seed;
    let inputs = match &args.config {
        Some(path) => vec![digest_file(path)?],
        None => Vec::new(),
    };
    let (bundle, truth) = generate(&cfg).map_err(data)?;
    let mut out = OutDir::create(&args.out, "synth", json!({ "args": args, "effective": cfg }), inputs)?;
    out.text("corpus.jsonl", "corpus", &serialize(&bundle))?;
    let mut sidecar = Vec::new();
    write_ground_truth(&truth, &mut sidecar)?;
    out.text("ground_truth.jsonl", "ground-truth", &String::from_utf8(sidecar)?)?;
    println!(
        "{} dialogues, {} samples, {} judgments",
        bundle.dialogues.len(),
        bundle.samples.len(),
        bundle.judgments.len()
    );
    Ok(())
}

pub fn serve_cmd(args: &ServeArgs) -> Result<()> {
    let store = hleval_service::SessionStore::open(&args.data)
        .with_context(|| format!("opening session store {}", args.data.display()))?;
    let app = hleval_service::AppState {
        store: Arc::new(store),
        default_clip_base_url: args.clip_base_url.clone(),
    };
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&args.addr)
            .await
            .with_context(|| format!("binding {}", args.addr))?;
        hleval_service::serve(listener, app).await?;
        Ok(())
    })
}
