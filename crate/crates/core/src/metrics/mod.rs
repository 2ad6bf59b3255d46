//! Comprehensiveness (CS / M_clip) and accuracy (AS / M_ram) scores.
//!
//! CS_i is 1 when the text embedding of the predicted label set lies closer
//! to the image embedding than the text embedding of the gold set, else 0.
//! AS_i is the logistic of the number of predicted labels the tagger accepts
//! (confidence >= sigma) minus the number it rejects.

mod report;
mod timing;

use std::collections::BTreeMap;
use std::path::PathBuf;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{Backend, BackendError, EmbedInput, EmbedRequest, ImageData, TagRequest};
use crate::domain::{LabelSet, SplitId};
pub use report::{render_delta_table, render_table, TableRow};
pub use timing::LatencyStats;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("zero-length {0} embedding")]
    ZeroVector(&'static str),
    /// Text and image encoders disagree; scoring cannot continue.
    #[error("text embedding has dim {text} but image embedding has dim {image}")]
    DimensionMismatch { text: usize, image: usize },
    #[error("tagger returned {got} confidences for {expected} labels")]
    TagLength { expected: usize, got: usize },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("reading image {0}")]
    Image(String),
    #[error("invalid metric config: {0}")]
    InvalidConfig(String),
}

impl MetricError {
    /// Errors that invalidate the whole run rather than one image.
    pub fn is_fatal(&self) -> bool {
        matches!(self, MetricError::DimensionMismatch { .. } | MetricError::InvalidConfig(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EmptyPredictionPolicy {
    /// logistic of an empty sum
    #[default]
    ScoreHalf,
    ScoreZero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// Avg column is the mean of the per-split values.
    #[default]
    Splits,
    /// Avg column is the mean over every scored image.
    Images,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricConfig {
    pub sigma: f64,
    pub com_prompt_prefix: String,
    pub strict_inequality: bool,
    pub empty_prediction_policy: EmptyPredictionPolicy,
    pub averaging: Averaging,
    pub embed_model: String,
    pub tag_model: String,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            sigma: 0.73,
            com_prompt_prefix: "This image contains ".into(),
            strict_inequality: true,
            empty_prediction_policy: EmptyPredictionPolicy::ScoreHalf,
            averaging: Averaging::Splits,
            embed_model: "clip-vit-base-patch32".into(),
            tag_model: "ram-swin-large-14m".into(),
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<(), MetricError> {
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return Err(MetricError::InvalidConfig(format!("sigma {} outside (0, 1)", self.sigma)));
        }
        if !self.strict_inequality {
            return Err(MetricError::InvalidConfig("strict_inequality cannot be disabled".into()));
        }
        Ok(())
    }
}

/// `prefix + "a, b, c"`, or `prefix + "nothing"` for an empty set.
pub fn render_com_prompt(labels: &LabelSet, cfg: &MetricConfig) -> String {
    if labels.is_empty() {
        format!("{}nothing", cfg.com_prompt_prefix)
    } else {
        format!("{}{}", cfg.com_prompt_prefix, labels.join(", "))
    }
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn l2_normalized(v: &[f64], what: &'static str) -> Result<Vec<f64>, MetricError> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(MetricError::ZeroVector(what));
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

/// Cosine of two vectors of equal length, computed on L2-normalized copies.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::DimensionMismatch { text: a.len(), image: b.len() });
    }
    let a = l2_normalized(a, "first")?;
    let b = l2_normalized(b, "second")?;
    Ok(a.iter().zip(&b).map(|(x, y)| x * y).sum())
}

/// 1 iff cos(pred, image) > cos(gold, image); ties score 0.
pub fn cs_from_vectors(pred: &[f64], gold: &[f64], image: &[f64]) -> Result<u8, MetricError> {
    for (t, what) in [(pred, "prediction text"), (gold, "gold text")] {
        if t.len() != image.len() {
            return Err(MetricError::DimensionMismatch { text: t.len(), image: image.len() });
        }
        l2_normalized(t, what)?;
    }
    l2_normalized(image, "image")?;
    let p = cosine(pred, image)?;
    let g = cosine(gold, image)?;
    Ok(u8::from(p > g))
}

fn embed(backend: &dyn Backend, model: &str, input: EmbedInput) -> Result<Vec<f64>, MetricError> {
    Ok(backend.embed(&EmbedRequest { model: model.to_string(), input })?.vector)
}

pub fn cs_score(
    pred: &LabelSet,
    gold: &LabelSet,
    image: &ImageData,
    backend: &dyn Backend,
    cfg: &MetricConfig,
) -> Result<u8, MetricError> {
    let text = |labels: &LabelSet| EmbedInput::Text { text: render_com_prompt(labels, cfg) };
    let p = embed(backend, &cfg.embed_model, text(pred))?;
    let g = embed(backend, &cfg.embed_model, text(gold))?;
    let v = embed(backend, &cfg.embed_model, EmbedInput::Image { image: image.clone() })?;
    cs_from_vectors(&p, &g, &v)
}

/// Sum of +1 for each confidence >= sigma and -1 for each below.
pub fn signed_count(confidences: &[f64], sigma: f64) -> i64 {
    confidences.iter().map(|&c| if c >= sigma { 1 } else { -1 }).sum()
}

pub fn as_from_confidences(confidences: &[f64], sigma: f64, policy: EmptyPredictionPolicy) -> f64 {
    if confidences.is_empty() && policy == EmptyPredictionPolicy::ScoreZero {
        return 0.0;
    }
    logistic(signed_count(confidences, sigma) as f64)
}

/// Tagger confidences for `labels`, in order. Empty input makes no call.
pub fn tag_confidences(
    labels: &LabelSet,
    image: &ImageData,
    backend: &dyn Backend,
    cfg: &MetricConfig,
) -> Result<Vec<f64>, MetricError> {
    if labels.is_empty() {
        return Ok(Vec::new());
    }
    let req = TagRequest { model: cfg.tag_model.clone(), image: image.clone(), labels: labels.labels().to_vec() };
    let resp = backend.tag(&req)?;
    if resp.confidences.len() != labels.len() {
        return Err(MetricError::TagLength { expected: labels.len(), got: resp.confidences.len() });
    }
    Ok(resp.confidences)
}

pub fn as_score(
    pred: &LabelSet,
    image: &ImageData,
    backend: &dyn Backend,
    cfg: &MetricConfig,
) -> Result<f64, MetricError> {
    let conf = tag_confidences(pred, image, backend, cfg)?;
    Ok(as_from_confidences(&conf, cfg.sigma, cfg.empty_prediction_policy))
}

/// Keeps the labels whose confidence is >= sigma, carrying their confidences.
pub fn filter_by_confidence(pred: &LabelSet, confidences: &[f64], sigma: f64) -> LabelSet {
    let kept: Vec<usize> = (0..pred.len()).filter(|&i| confidences[i] >= sigma).collect();
    let labels = pred.retain_indices(|i| confidences[i] >= sigma);
    let conf = kept.iter().map(|&i| confidences[i]).collect();
    labels.with_confidences(conf).expect("confidences align with kept labels")
}

pub fn ram_filter(
    pred: &LabelSet,
    image: &ImageData,
    backend: &dyn Backend,
    cfg: &MetricConfig,
) -> Result<LabelSet, MetricError> {
    let conf = tag_confidences(pred, image, backend, cfg)?;
    Ok(filter_by_confidence(pred, &conf, cfg.sigma))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub cs: u8,
    #[serde(rename = "as")]
    pub as_score: f64,
    pub n_predicted: usize,
}

/// Scores one prediction. With `apply_ram_filter`, the tagger's verdicts
/// first drop rejected labels and both scores use the survivors.
pub fn score_image(
    pred: &LabelSet,
    gold: &LabelSet,
    image: &ImageData,
    backend: &dyn Backend,
    cfg: &MetricConfig,
    apply_ram_filter: bool,
) -> Result<ImageScore, MetricError> {
    let conf = tag_confidences(pred, image, backend, cfg)?;
    let (labels, conf) = if apply_ram_filter {
        let kept = filter_by_confidence(pred, &conf, cfg.sigma);
        let c = kept.confidences().unwrap_or_default().to_vec();
        (kept, c)
    } else {
        (pred.clone(), conf)
    };
    let cs = cs_score(&labels, gold, image, backend, cfg)?;
    let as_score = as_from_confidences(&conf, cfg.sigma, cfg.empty_prediction_policy);
    Ok(ImageScore { cs, as_score, n_predicted: labels.len() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredImage {
    pub id: String,
    pub split: SplitId,
    pub score: ImageScore,
    /// Total chat latency of the run that produced the prediction.
    pub latency_ms: Option<f64>,
}

/// One prediction to score.
#[derive(Debug, Clone)]
pub struct ScoreInput {
    pub id: String,
    pub split: SplitId,
    pub image_ref: PathBuf,
    pub pred: LabelSet,
    pub gold: LabelSet,
    pub latency_ms: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct BatchScores {
    /// In input order.
    pub scored: Vec<ScoredImage>,
    pub errors: Vec<ImageError>,
}

/// Scores every input with at most `parallelism` images in flight.
/// Per-image problems are collected; a fatal error aborts the batch.
pub fn score_batch(
    inputs: &[ScoreInput],
    backend: &dyn Backend,
    cfg: &MetricConfig,
    apply_ram_filter: bool,
    parallelism: usize,
) -> Result<BatchScores, MetricError> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(parallelism.max(1)).build().expect("thread pool builds");
    let results: Vec<Result<ImageScore, MetricError>> = pool.install(|| {
        inputs
            .par_iter()
            .map(|inp| {
                let image = ImageData::from_path(&inp.image_ref)
                    .map_err(|e| MetricError::Image(format!("{}: {e}", inp.image_ref.display())))?;
                score_image(&inp.pred, &inp.gold, &image, backend, cfg, apply_ram_filter)
            })
            .collect()
    });
    let mut out = BatchScores::default();
    for (inp, r) in inputs.iter().zip(results) {
        match r {
            Ok(score) => {
                out.scored.push(ScoredImage { id: inp.id.clone(), split: inp.split, score, latency_ms: inp.latency_ms })
            }
            Err(e) if e.is_fatal() => return Err(e),
            Err(e) => {
                warn!("image {}: {e}", inp.id);
                out.errors.push(ImageError { image_id: inp.id.clone(), error: e.to_string() });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub m_clip: f64,
    pub m_ram: f64,
    pub n_images: usize,
    pub mean_latency_ms: f64,
    pub latency_stddev_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub m_clip: f64,
    pub m_ram: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coverage {
    pub scored: usize,
    pub expected: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageError {
    pub image_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub config_fingerprint: String,
    pub averaging: Averaging,
    pub per_image: BTreeMap<String, ImageScore>,
    pub per_split: BTreeMap<u8, SplitReport>,
    pub avg: Averages,
    pub coverage: Coverage,
    pub errors: Vec<ImageError>,
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Avg column as the unweighted mean of per-split values.
pub fn average_over_splits(values: &[f64]) -> f64 {
    mean(values)
}

/// Folds per-image scores into per-split means and the Avg column. Input
/// order does not matter: images are reduced in id order.
pub fn aggregate(scored: &[ScoredImage], averaging: Averaging, fingerprint: &str) -> MetricReport {
    let mut by_split: BTreeMap<u8, BTreeMap<&str, &ScoredImage>> = BTreeMap::new();
    for s in scored {
        by_split.entry(s.split.get()).or_default().insert(&s.id, s);
    }
    let mut per_split = BTreeMap::new();
    for split in SplitId::ALL {
        let Some(images) = by_split.get(&split.get()) else {
            if !scored.is_empty() {
                warn!("split {} has no scored images; omitted", split.get());
            }
            continue;
        };
        let cs: Vec<f64> = images.values().map(|s| f64::from(s.score.cs)).collect();
        let ras: Vec<f64> = images.values().map(|s| s.score.as_score).collect();
        let lat: Vec<f64> = images.values().filter_map(|s| s.latency_ms).collect();
        let stats = LatencyStats::from_samples(&lat);
        per_split.insert(
            split.get(),
            SplitReport {
                m_clip: mean(&cs),
                m_ram: mean(&ras),
                n_images: images.len(),
                mean_latency_ms: stats.mean,
                latency_stddev_ms: stats.stddev,
            },
        );
    }
    let avg = match averaging {
        Averaging::Splits => Averages {
            m_clip: average_over_splits(&per_split.values().map(|s| s.m_clip).collect::<Vec<_>>()),
            m_ram: average_over_splits(&per_split.values().map(|s| s.m_ram).collect::<Vec<_>>()),
        },
        Averaging::Images => {
            let all: Vec<&ScoredImage> = by_split.values().flat_map(|m| m.values().copied()).collect();
            Averages {
                m_clip: mean(&all.iter().map(|s| f64::from(s.score.cs)).collect::<Vec<_>>()),
                m_ram: mean(&all.iter().map(|s| s.score.as_score).collect::<Vec<_>>()),
            }
        }
    };
    MetricReport {
        config_fingerprint: fingerprint.to_string(),
        averaging,
        per_image: scored.iter().map(|s| (s.id.clone(), s.score)).collect(),
        per_split,
        avg,
        coverage: Coverage { scored: scored.len(), expected: scored.len() },
        errors: Vec::new(),
    }
}
