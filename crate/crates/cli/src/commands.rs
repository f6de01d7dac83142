use std::fs;
use std::path::Path;
use std::sync::Arc;

use cdtm_core::corpus::split_corpus;
use cdtm_core::eval::{coherence_report, entropy, entropy_histogram, entropy_stats, grid_select, top_words, GridStage};
use cdtm_core::inference::{fit, infer_document};
use cdtm_core::model::StoredModel;
use cdtm_core::{fmt_f64, Corpus, Error, GridOptions, ModelParams, Penalty, Result, TrainConfig, Vocabulary};
use rayon::prelude::*;
use serde::Serialize;

use crate::args::{CoherenceArgs, Common, EntropyStatsArgs, GridArgs, InferArgs, ModelArgs, SplitArgs, TrainArgs};
use crate::artifacts::{self, load_corpus, load_documents, model_vocabulary, write_corpus_dir};
use crate::manifest::RunManifest;
use crate::settings::Settings;

fn settings(common: &Common, apply: impl FnOnce(&mut Settings)) -> Result<Settings> {
    let mut s = match &common.config {
        Some(path) => Settings::from_file(path)?,
        None => Settings::default(),
    };
    apply(&mut s);
    Ok(s)
}

fn start(command: &str, common: &Common, settings: &Settings) -> Result<RunManifest> {
    fs::create_dir_all(&common.out)?;
    let mut m = RunManifest::new(command, settings);
    m.input("input", &common.input);
    if let Some(c) = &common.config {
        m.input("config", c);
    }
    Ok(m)
}

fn load_model(args: &ModelArgs, m: &mut RunManifest) -> Result<(StoredModel, Vocabulary)> {
    let stored = StoredModel::read(&args.model)?;
    let vocabulary = model_vocabulary(&args.model, args.vocab.as_deref())?;
    if vocabulary.len() != stored.model.vocab_size() {
        return Err(Error::Input(format!(
            "vocabulary has {} terms but the model has V = {}",
            vocabulary.len(),
            stored.model.vocab_size()
        )));
    }
    m.input("model", &args.model);
    if let Some(v) = &args.vocab {
        m.input("vocab", v);
    }
    Ok((stored, vocabulary))
}

pub fn split(args: &SplitArgs) -> Result<()> {
    let s = settings(&args.common, |s| {
        args.common.apply(s);
        args.corpus.apply(s);
        if let Some(f) = args.train_fraction {
            s.eval.train_fraction = f;
        }
    })?;
    let mut m = start("split", &args.common, &s)?;
    let corpus = m.timed("load", || load_corpus(&args.common.input, &s.corpus))?;
    let (train, test) = m.timed("split", || split_corpus(&corpus, s.eval.train_fraction, s.train.seed))?;
    for (name, part) in [("train", &train), ("test", &test)] {
        for path in write_corpus_dir(part, &args.common.out.join(name))? {
            m.output(path);
        }
    }
    println!(
        "train {} docs, test {} docs, vocabulary {}",
        train.num_docs(),
        test.num_docs(),
        train.vocab_size()
    );
    m.write(&args.common.out)
}

/// Files written for a fitted model: model, vocabulary, topics, gamma.
fn write_fit(
    dir: &Path,
    corpus: &Corpus,
    fitted: &cdtm_core::FitResult,
    config: &TrainConfig,
    top_n: usize,
    binary: bool,
    m: &mut RunManifest,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let stored = StoredModel {
        model: fitted.model.clone(),
        lambda: config.penalty.held_out(),
    };
    stored.write_json(&m.output(dir.join("model.json")))?;
    if binary {
        stored.write_binary(&m.output(dir.join("model.bin")))?;
    }
    for path in write_corpus_dir(corpus, dir)? {
        m.output(path);
    }
    let topics = top_words(&fitted.model, top_n.min(fitted.model.vocab_size()))?;
    artifacts::write_top_terms(&m.output(dir.join("topics.tsv")), &topics, corpus.vocabulary())?;
    artifacts::write_gamma(&m.output(dir.join("gamma.tsv")), corpus, &fitted.per_doc)?;
    artifacts::write_elbo_trace(&m.output(dir.join("elbo_trace.csv")), &fitted.elbo_trace)
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let s = settings(&args.common, |s| args.apply(s))?;
    s.train.validate()?;
    let mut m = start("train", &args.common, &s)?;
    let corpus = m.timed("load", || load_corpus(&args.common.input, &s.corpus))?;
    s.train.validate_for(&corpus)?;
    let fitted = m.timed("fit", || fit(&corpus, &s.train))?;
    if !fitted.converged {
        log::warn!("EM stopped after {} iterations without converging", fitted.iterations_run);
    }
    write_fit(&args.common.out, &corpus, &fitted, &s.train, s.eval.top_n, args.binary, &mut m)?;
    let out = &args.common.out;
    let last = fitted.elbo_trace.last().map_or(f64::NAN, |e| e.total);
    println!(
        "K={} docs={} iterations={} converged={} elbo={}",
        s.train.k,
        corpus.num_docs(),
        fitted.iterations_run,
        fitted.converged,
        fmt_f64(last)
    );
    m.write(out)
}

fn infer_all(corpus: &Corpus, model: &ModelParams, lambda: f64, config: &TrainConfig) -> Result<Vec<Vec<f64>>> {
    corpus
        .documents()
        .par_iter()
        .map(|d| infer_document(d, model, lambda, config).map(|s| s.theta()))
        .collect()
}

fn inference_config(s: &Settings, model: &ModelParams, lambda: f64) -> Result<TrainConfig> {
    let config = TrainConfig {
        k: model.num_topics(),
        penalty: Penalty::Homogeneous(lambda),
        zeta: None,
        ..s.train.clone()
    };
    config.validate()?;
    Ok(config)
}

pub fn infer(args: &InferArgs) -> Result<()> {
    let s = settings(&args.common, |s| args.common.apply(s))?;
    let mut m = start("infer", &args.common, &s)?;
    let (stored, vocabulary) = load_model(&args.model, &mut m)?;
    let lambda = args.lambda.unwrap_or(stored.lambda);
    let config = inference_config(&s, &stored.model, lambda)?;
    let (docs, skipped) = m.timed("load", || load_documents(&args.common.input, &vocabulary, &s.corpus.tokenizer))?;
    for id in &skipped {
        log::warn!("document {id:?} has no word in the model vocabulary; skipped");
    }
    if docs.is_empty() {
        return Err(Error::Input("no document has a word in the model vocabulary".into()));
    }
    let corpus = Corpus::new(Arc::new(vocabulary), docs)?;
    let thetas = m.timed("infer", || infer_all(&corpus, &stored.model, lambda, &config))?;
    let entropies = thetas.iter().map(|t| entropy(t)).collect::<Result<Vec<_>>>()?;
    let ids: Vec<String> = corpus.documents().iter().map(|d| d.id.clone()).collect();
    let out = &args.common.out;
    artifacts::write_rows(
        &m.output(out.join("theta.tsv")),
        ids.iter().map(String::as_str).zip(thetas.iter().map(Vec::as_slice)),
    )?;
    artifacts::write_entropies(&m.output(out.join("entropy.csv")), &ids, &entropies)?;
    println!("inferred {} docs, skipped {}", ids.len(), skipped.len());
    m.write(out)
}

pub fn coherence(args: &CoherenceArgs) -> Result<()> {
    let s = settings(&args.common, |s| {
        args.common.apply(s);
        if let Some(n) = args.top_n {
            s.eval.top_n = n;
        }
        if let Some(w) = args.window {
            s.eval.window_size = w;
        }
    })?;
    let mut m = start("coherence", &args.common, &s)?;
    let (stored, vocabulary) = load_model(&args.model, &mut m)?;
    let (docs, skipped) = load_documents(&args.common.input, &vocabulary, &s.corpus.tokenizer)?;
    if !skipped.is_empty() {
        log::warn!("{} reference document(s) have no word in the model vocabulary", skipped.len());
    }
    if docs.is_empty() {
        return Err(Error::Input("no reference document has a word in the model vocabulary".into()));
    }
    let vocabulary = Arc::new(vocabulary);
    let reference = Corpus::new(vocabulary.clone(), docs)?;
    let report = m.timed("coherence", || {
        coherence_report(&stored.model, &reference, s.eval.top_n, s.eval.window_size)
    })?;
    artifacts::write_coherence(&m.output(args.common.out.join("coherence.csv")), &report, &vocabulary)?;
    println!("mean_cv {}", fmt_f64(report.mean_cv));
    m.write(&args.common.out)
}

/// Writes entropy.csv and entropy_stats.json; returns the mean entropy.
fn write_entropy_outputs(dir: &Path, ids: &[String], rows: &[Vec<f64>], m: &mut RunManifest) -> Result<f64> {
    let stats = entropy_stats(rows)?;
    let k = rows.first().map_or(0, Vec::len);
    let histogram = entropy_histogram(&stats.entropies, k)?;
    artifacts::write_entropies(&m.output(dir.join("entropy.csv")), ids, &stats.entropies)?;
    artifacts::write_entropy_stats(&m.output(dir.join("entropy_stats.json")), &stats, k, &histogram)?;
    Ok(stats.mean)
}

pub fn entropy_stats_cmd(args: &EntropyStatsArgs) -> Result<()> {
    let s = settings(&args.common, |s| args.common.apply(s))?;
    let mut m = start("entropy-stats", &args.common, &s)?;
    let rows = artifacts::read_rows(&args.common.input)?;
    let (ids, values): (Vec<String>, Vec<Vec<f64>>) = rows.into_iter().unzip();
    let mean = write_entropy_outputs(&args.common.out, &ids, &values, &mut m)?;
    println!("mean_entropy {}", fmt_f64(mean));
    m.write(&args.common.out)
}

#[derive(Serialize)]
struct CandidateScore {
    #[serde(rename = "K")]
    k: usize,
    lambda: f64,
    metric: &'static str,
    fold_mean: f64,
}

#[derive(Serialize)]
struct TestScore {
    lambda: f64,
    mean_cv: f64,
    mean_entropy: f64,
}

#[derive(Serialize)]
struct Selection {
    best_k: usize,
    best_lambda: f64,
    candidates: Vec<CandidateScore>,
    selected: TestScore,
    baseline: TestScore,
}

pub fn grid(args: &GridArgs) -> Result<()> {
    let s = settings(&args.common, |s| args.apply(s))?;
    s.train.validate()?;
    let mut m = start("grid", &args.common, &s)?;
    let out = &args.common.out;
    let corpus = m.timed("load", || load_corpus(&args.common.input, &s.corpus))?;
    let (train, test) = m.timed("split", || split_corpus(&corpus, s.eval.train_fraction, s.train.seed))?;
    for (name, part) in [("train", &train), ("test", &test)] {
        for path in write_corpus_dir(part, &out.join(name))? {
            m.output(path);
        }
    }
    let options = GridOptions {
        folds: s.eval.folds,
        reference: s.eval.reference,
        top_n: s.eval.top_n,
        window_size: s.eval.window_size,
        seed: s.train.seed,
    };
    let result = m.timed("select", || grid_select(&train, &s.eval.ks, &s.eval.lambdas, &s.train, &options))?;
    artifacts::write_grid(&m.output(out.join("grid.csv")), &result)?;

    let mut candidates = Vec::new();
    let mut seen = Vec::new();
    for r in &result.rows {
        if seen.contains(&(r.stage, r.k, r.lambda.to_bits())) {
            continue;
        }
        seen.push((r.stage, r.k, r.lambda.to_bits()));
        candidates.push(CandidateScore {
            k: r.k,
            lambda: r.lambda,
            metric: if r.stage == GridStage::Topics { "perplexity" } else { "cv" },
            fold_mean: result.fold_mean(r.stage, r.k, r.lambda).unwrap_or(f64::NAN),
        });
    }

    let score = |name: &str, lambda: f64, m: &mut RunManifest| -> Result<TestScore> {
        let config = TrainConfig {
            k: result.best_k,
            penalty: Penalty::Homogeneous(lambda),
            ..s.train.clone()
        };
        let dir = out.join(name);
        let fitted = m.timed(&format!("fit {name}"), || fit(&train, &config))?;
        write_fit(&dir, &train, &fitted, &config, s.eval.top_n, false, m)?;
        let report = coherence_report(&fitted.model, &test, s.eval.top_n, s.eval.window_size)?;
        artifacts::write_coherence(&m.output(dir.join("coherence.csv")), &report, train.vocabulary())?;
        let thetas = infer_all(&test, &fitted.model, lambda, &config)?;
        let ids: Vec<String> = test.documents().iter().map(|d| d.id.clone()).collect();
        let mean_entropy = write_entropy_outputs(&dir, &ids, &thetas, m)?;
        Ok(TestScore {
            lambda,
            mean_cv: report.mean_cv,
            mean_entropy,
        })
    };
    let selected = score("selected", result.best_lambda, &mut m)?;
    let baseline = score("baseline", 0.0, &mut m)?;
    println!(
        "best K={} lambda={} | test C_V {:.4} (lambda=0: {:.4}) | test mean entropy {:.4} (lambda=0: {:.4})",
        result.best_k, result.best_lambda, selected.mean_cv, baseline.mean_cv, selected.mean_entropy, baseline.mean_entropy
    );
    let selection = Selection {
        best_k: result.best_k,
        best_lambda: result.best_lambda,
        candidates,
        selected,
        baseline,
    };
    artifacts::write_json(&m.output(out.join("selection.json")), &selection)?;
    m.write(out)
}
