//! Entropy statistics, C_V coherence and cross-validated model selection.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{count_windows, kfold, Corpus, WindowCounts, WordId};
use crate::error::{Error, Result};
use crate::inference::{fit, perplexity};
use crate::model::{ModelParams, Penalty, TrainConfig};

const SIMPLEX_TOL: f64 = 1e-9;
const NPMI_EPS: f64 = 1e-12;
pub const HISTOGRAM_BIN_WIDTH: f64 = 0.05;
pub const DEFAULT_TOP_N: usize = 20;
pub const DEFAULT_WINDOW: usize = 110;

/// `-Σ θ_i ln θ_i`, with `0 ln 0 = 0`.
pub fn entropy(dist: &[f64]) -> Result<f64> {
    if dist.is_empty() {
        return Err(Error::Input("entropy of an empty distribution".into()));
    }
    if let Some(&p) = dist.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
        return Err(Error::Domain { func: "entropy", value: p });
    }
    let s: f64 = dist.iter().sum();
    if (s - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::Input(format!("distribution sums to {s}, not 1")));
    }
    Ok(entropy_unchecked(dist))
}

fn entropy_unchecked(dist: &[f64]) -> f64 {
    -dist.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

/// Summary of per-document entropies of `γ_d / Σγ_d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyStats {
    pub entropies: Vec<f64>,
    pub mean: f64,
    /// Sample variance (n - 1 denominator).
    pub variance: f64,
    /// Adjusted sample skewness; 0 when fewer than 3 values or no spread.
    pub skewness: f64,
    /// Adjusted sample excess kurtosis; 0 when fewer than 4 values or no spread.
    pub excess_kurtosis: f64,
}

pub fn entropy_stats(per_doc_gamma: &[Vec<f64>]) -> Result<EntropyStats> {
    if per_doc_gamma.is_empty() {
        return Err(Error::Input("entropy statistics need at least one document".into()));
    }
    let entropies = per_doc_gamma
        .iter()
        .map(|g| {
            if g.is_empty() || g.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(Error::Input("gamma entries must be finite and non-negative".into()));
            }
            let s: f64 = g.iter().sum();
            if s <= 0.0 {
                return Err(Error::Input("gamma sums to zero".into()));
            }
            let theta: Vec<f64> = g.iter().map(|x| x / s).collect();
            Ok(entropy_unchecked(&theta).max(0.0))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(summarize(entropies))
}

fn summarize(values: Vec<f64>) -> EntropyStats {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let m2: f64 = values.iter().map(|x| (x - mean).powi(2)).sum();
    let variance = if values.len() > 1 { m2 / (n - 1.0) } else { 0.0 };
    let sd = variance.sqrt();
    let standardized = |p: i32| values.iter().map(|x| ((x - mean) / sd).powi(p)).sum::<f64>();
    let spread = sd > 1e-12 * mean.abs().max(1.0);
    let skewness = if values.len() >= 3 && spread {
        n / ((n - 1.0) * (n - 2.0)) * standardized(3)
    } else {
        0.0
    };
    let excess_kurtosis = if values.len() >= 4 && spread {
        n * (n + 1.0) / ((n - 1.0) * (n - 2.0) * (n - 3.0)) * standardized(4)
            - 3.0 * (n - 1.0).powi(2) / ((n - 2.0) * (n - 3.0))
    } else {
        0.0
    };
    EntropyStats {
        entropies: values,
        mean,
        variance,
        skewness,
        excess_kurtosis,
    }
}

/// Fixed-width histogram over `[0, ln K]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    /// Lower edge of every bin.
    pub bins: Vec<f64>,
    pub counts: Vec<u64>,
}

pub fn entropy_histogram(entropies: &[f64], k: usize) -> Result<Histogram> {
    if k < 2 {
        return Err(Error::Config(format!("histogram needs K >= 2, got {k}")));
    }
    let max = (k as f64).ln();
    let n_bins = ((max / HISTOGRAM_BIN_WIDTH).ceil() as usize).max(1);
    let mut counts = vec![0u64; n_bins];
    for &h in entropies {
        if !(h >= 0.0 && h <= max + 1e-12) {
            return Err(Error::Input(format!("entropy {h} outside [0, ln {k}]")));
        }
        let b = ((h / HISTOGRAM_BIN_WIDTH) as usize).min(n_bins - 1);
        counts[b] += 1;
    }
    Ok(Histogram {
        bin_width: HISTOGRAM_BIN_WIDTH,
        bins: (0..n_bins).map(|b| b as f64 * HISTOGRAM_BIN_WIDTH).collect(),
        counts,
    })
}

/// Normalized pointwise mutual information from window counts, with
/// `ε = 1e-12` inside every logarithm. Clamped to `[-1, 1]`; a pair present
/// in every window scores 1.
pub fn npmi(wi: WordId, wj: WordId, counts: &WindowCounts) -> Result<f64> {
    let total = counts.total_windows();
    if total == 0 {
        return Err(Error::Input("window counts contain no windows".into()));
    }
    for w in [wi, wj] {
        if !counts.is_tracked(w) {
            return Err(Error::Input(format!("word {w} is not tracked by the window counts")));
        }
    }
    Ok(npmi_unchecked(wi, wj, counts))
}

fn npmi_unchecked(wi: WordId, wj: WordId, counts: &WindowCounts) -> f64 {
    let total = counts.total_windows() as f64;
    let pi = counts.unigram(wi) as f64 / total;
    let pj = counts.unigram(wj) as f64 / total;
    let pij = counts.pair(wi, wj) as f64 / total;
    let denominator = -(pij + NPMI_EPS).ln();
    if denominator <= 0.0 {
        return 1.0;
    }
    let value = ((pij + NPMI_EPS).ln() - (pi * pj + NPMI_EPS).ln()) / denominator;
    value.clamp(-1.0, 1.0)
}

/// The top words of one topic, by descending η weight.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicTopWords {
    pub topic_id: usize,
    pub words: Vec<WordId>,
}

impl TopicTopWords {
    pub fn new(topic_id: usize, words: Vec<WordId>) -> Result<Self> {
        if words.len() < 2 {
            return Err(Error::Input(format!("topic {topic_id} needs at least 2 top words")));
        }
        if words.iter().collect::<BTreeSet<_>>().len() != words.len() {
            return Err(Error::Input(format!("topic {topic_id} has repeated top words")));
        }
        Ok(Self { topic_id, words })
    }
}

/// The `n` highest-weight words of every topic; ties go to the lower word id.
pub fn top_words(model: &ModelParams, n: usize) -> Result<Vec<TopicTopWords>> {
    if n < 2 || n > model.vocab_size() {
        return Err(Error::Config(format!(
            "top-N must be in [2, V = {}], got {n}",
            model.vocab_size()
        )));
    }
    (0..model.num_topics())
        .map(|i| {
            let row = model.topic(i);
            let mut ids: Vec<WordId> = (0..row.len()).collect();
            ids.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
            ids.truncate(n);
            TopicTopWords::new(i, ids)
        })
        .collect()
}

/// C_V: the mean cosine similarity between each top word's NPMI vector
/// `v(w_i) = (NPMI(w_i, w_j))_j` and their sum `v(W)`. A cosine with a
/// zero-norm vector counts as 0.
pub fn cv_score(topic: &TopicTopWords, counts: &WindowCounts) -> Result<f64> {
    if counts.total_windows() == 0 {
        return Err(Error::Input("window counts contain no windows".into()));
    }
    if let Some(w) = topic.words.iter().find(|&&w| !counts.is_tracked(w)) {
        return Err(Error::Input(format!("top word {w} is not tracked by the window counts")));
    }
    let mut words = topic.words.clone();
    words.sort_unstable();
    let n = words.len();
    let vectors: Vec<Vec<f64>> = words
        .iter()
        .map(|&a| words.iter().map(|&b| npmi_unchecked(a, b, counts)).collect())
        .collect();
    let mut total = vec![0.0; n];
    for v in &vectors {
        total.iter_mut().zip(v).for_each(|(t, x)| *t += x);
    }
    let total_norm = norm(&total);
    let sum: f64 = vectors
        .iter()
        .map(|v| {
            let denom = norm(v) * total_norm;
            if denom > 0.0 {
                (dot(v, &total) / denom).clamp(-1.0, 1.0)
            } else {
                0.0
            }
        })
        .sum();
    Ok(sum / n as f64)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceReport {
    pub topics: Vec<TopicTopWords>,
    /// C_V of topic i at index i.
    pub per_topic: Vec<f64>,
    pub mean_cv: f64,
    pub window_size: usize,
    pub top_n: usize,
}

/// Scores every topic of `model` against sliding-window counts over
/// `reference`.
pub fn coherence_report(
    model: &ModelParams,
    reference: &Corpus,
    top_n: usize,
    window_size: usize,
) -> Result<CoherenceReport> {
    if reference.vocab_size() != model.vocab_size() {
        return Err(Error::Input(format!(
            "reference corpus vocabulary ({}) differs from the model's ({})",
            reference.vocab_size(),
            model.vocab_size()
        )));
    }
    let topics = top_words(model, top_n)?;
    let targets: BTreeSet<WordId> = topics.iter().flat_map(|t| t.words.iter().copied()).collect();
    let counts = count_windows(reference, window_size, &targets)?;
    let per_topic = topics
        .par_iter()
        .map(|t| cv_score(t, &counts))
        .collect::<Result<Vec<f64>>>()?;
    let mean_cv = per_topic.iter().sum::<f64>() / per_topic.len() as f64;
    Ok(CoherenceReport {
        topics,
        per_topic,
        mean_cv,
        window_size,
        top_n,
    })
}

/// Which corpus supplies the window counts for C_V during λ selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoherenceReference {
    #[default]
    Validation,
    Train,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridOptions {
    pub folds: usize,
    pub reference: CoherenceReference,
    pub top_n: usize,
    pub window_size: usize,
    /// Seed of the fold partition.
    pub seed: u64,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self {
            folds: 5,
            reference: CoherenceReference::Validation,
            top_n: DEFAULT_TOP_N,
            window_size: DEFAULT_WINDOW,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridStage {
    /// K chosen by held-out perplexity at λ = 0.
    Topics,
    /// λ chosen by C_V at the chosen K.
    Penalty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub stage: GridStage,
    pub k: usize,
    pub lambda: f64,
    pub fold: usize,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best_k: usize,
    pub best_lambda: f64,
    pub rows: Vec<GridRow>,
}

impl GridResult {
    /// Mean of `metric` over folds for one grid point.
    pub fn fold_mean(&self, stage: GridStage, k: usize, lambda: f64) -> Option<f64> {
        let values: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.stage == stage && r.k == k && r.lambda == lambda)
            .map(|r| r.value)
            .collect();
        (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Index of the best fold mean; ties go to the earliest (smallest) candidate.
fn select(means: &[f64], lower_is_better: bool) -> usize {
    let mut best = 0;
    for (i, &m) in means.iter().enumerate().skip(1) {
        let better = if lower_is_better { m < means[best] } else { m > means[best] };
        if better {
            best = i;
        }
    }
    best
}

fn sorted_unique<T: Copy + PartialOrd>(values: &[T]) -> Vec<T> {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite grid values"));
    v.dedup_by(|a, b| a == b);
    v
}

/// Two-stage cross-validated selection: K by mean held-out perplexity at
/// λ = 0, then λ by mean C_V at that K. `config.k` and `config.penalty` are
/// overridden by the grid.
pub fn grid_select(
    corpus: &Corpus,
    candidate_ks: &[usize],
    candidate_lambdas: &[f64],
    config: &TrainConfig,
    options: &GridOptions,
) -> Result<GridResult> {
    if candidate_ks.is_empty() || candidate_lambdas.is_empty() {
        return Err(Error::Config("grids must be non-empty".into()));
    }
    if let Some(l) = candidate_lambdas.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
        return Err(Error::Config(format!("penalty weights must be >= 0, got {l}")));
    }
    let ks = sorted_unique(candidate_ks);
    let lambdas = sorted_unique(candidate_lambdas);
    let folds = kfold(corpus, options.folds, options.seed)?;
    let mut rows = Vec::new();

    let mut k_means = Vec::with_capacity(ks.len());
    for &k in &ks {
        let cfg = TrainConfig {
            k,
            penalty: Penalty::Homogeneous(0.0),
            ..config.clone()
        };
        cfg.validate()?;
        let mut sum = 0.0;
        for (f, (train, val)) in folds.iter().enumerate() {
            let fitted = fit(train, &cfg)?;
            let value = perplexity(val, &fitted.model, 0.0, &cfg)?;
            log::info!("grid K={k} fold {f}: perplexity {value:.4}");
            rows.push(GridRow {
                stage: GridStage::Topics,
                k,
                lambda: 0.0,
                fold: f,
                metric: "perplexity".into(),
                value,
            });
            sum += value;
        }
        k_means.push(sum / folds.len() as f64);
    }
    let best_k = ks[select(&k_means, true)];

    let mut l_means = Vec::with_capacity(lambdas.len());
    for &lambda in &lambdas {
        let cfg = TrainConfig {
            k: best_k,
            penalty: Penalty::Homogeneous(lambda),
            ..config.clone()
        };
        let mut sum = 0.0;
        for (f, (train, val)) in folds.iter().enumerate() {
            let fitted = fit(train, &cfg)?;
            let reference = match options.reference {
                CoherenceReference::Validation => val,
                CoherenceReference::Train => train,
            };
            let value = coherence_report(&fitted.model, reference, options.top_n, options.window_size)?.mean_cv;
            log::info!("grid K={best_k} lambda={lambda} fold {f}: C_V {value:.4}");
            rows.push(GridRow {
                stage: GridStage::Penalty,
                k: best_k,
                lambda,
                fold: f,
                metric: "cv".into(),
                value,
            });
            sum += value;
        }
        l_means.push(sum / folds.len() as f64);
    }
    let best_lambda = lambdas[select(&l_means, false)];
    Ok(GridResult {
        best_k,
        best_lambda,
        rows,
    })
}
