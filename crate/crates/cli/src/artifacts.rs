//! Corpus loading and the on-disk artifact formats.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use cdtm_core::corpus::{build_corpus, encode_with_vocabulary, load_raw};
use cdtm_core::eval::{EntropyStats, GridResult, Histogram};
use cdtm_core::{
    fmt_f64, CoherenceReport, Corpus, CorpusConfig, DocVariational, Document, ElboBreakdown, Error,
    Result, TokenizerConfig, TopicTopWords, Vocabulary,
};
use serde::Serialize;

pub const VOCAB_FILE: &str = "vocab.tsv";
pub const CORPUS_FILE: &str = "corpus.tsv";

/// A directory holding `vocab.tsv` and `corpus.tsv`, as written by `split`
/// and `train`.
fn encoded_dir(path: &Path) -> bool {
    path.join(VOCAB_FILE).is_file() && path.join(CORPUS_FILE).is_file()
}

fn read_encoded_dir(path: &Path) -> Result<Corpus> {
    let vocabulary = Arc::new(Vocabulary::read_tsv(&path.join(VOCAB_FILE))?);
    Corpus::read_encoded(&path.join(CORPUS_FILE), vocabulary)
}

/// Reads an encoded corpus directory, or builds a corpus from raw text (a
/// directory of files or a file with one document per line).
pub fn load_corpus(path: &Path, config: &CorpusConfig) -> Result<Corpus> {
    if encoded_dir(path) {
        return read_encoded_dir(path);
    }
    let built = build_corpus(&load_raw(path)?, config)?;
    if !built.dropped.is_empty() {
        log::warn!("{} document(s) empty after filtering", built.dropped.len());
    }
    Ok(built.corpus)
}

/// Encodes documents against `vocabulary`. Returns the documents that keep at
/// least one known token and the ids of those that do not.
pub fn load_documents(
    path: &Path,
    vocabulary: &Vocabulary,
    tokenizer: &TokenizerConfig,
) -> Result<(Vec<Document>, Vec<String>)> {
    if !encoded_dir(path) {
        return Ok(encode_with_vocabulary(&load_raw(path)?, vocabulary, tokenizer));
    }
    let source = read_encoded_dir(path)?;
    let mut docs = Vec::new();
    let mut skipped = Vec::new();
    for doc in source.documents() {
        let tokens = vocabulary.encode(&source.vocabulary().decode(&doc.tokens));
        if tokens.is_empty() {
            skipped.push(doc.id.clone());
        } else {
            docs.push(Document::new(doc.id.clone(), tokens));
        }
    }
    Ok((docs, skipped))
}

/// Vocabulary stored next to a model unless given explicitly.
pub fn model_vocabulary(model_path: &Path, explicit: Option<&Path>) -> Result<Vocabulary> {
    let path = match explicit {
        Some(p) => p.to_path_buf(),
        None => model_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(VOCAB_FILE),
    };
    Vocabulary::read_tsv(&path)
}

pub fn write_corpus_dir(corpus: &Corpus, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let vocab = dir.join(VOCAB_FILE);
    let docs = dir.join(CORPUS_FILE);
    corpus.vocabulary().write_tsv(&vocab)?;
    corpus.write_encoded(&docs)?;
    Ok(vec![vocab, docs])
}

/// `doc_id<TAB>v_1<TAB>...<TAB>v_K`, one line per document.
pub fn write_rows<'a>(path: &Path, rows: impl IntoIterator<Item = (&'a str, &'a [f64])>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for (id, values) in rows {
        out.write_all(id.as_bytes())?;
        for v in values {
            write!(out, "\t{}", fmt_f64(*v))?;
        }
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_rows(path: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    let reader = BufReader::new(File::open(path)?);
    let mut rows: Vec<(String, Vec<f64>)> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let bad = |msg: String| Error::Parse {
            what: "topic table",
            line: lineno + 1,
            msg,
        };
        let mut fields = line.split('\t');
        let id = fields.next().unwrap_or_default().to_owned();
        let values = fields
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| bad(e.to_string()))?;
        if values.is_empty() {
            return Err(bad("no values".into()));
        }
        if let Some((_, first)) = rows.first() {
            if first.len() != values.len() {
                return Err(bad(format!("{} values, expected {}", values.len(), first.len())));
            }
        }
        rows.push((id, values));
    }
    if rows.is_empty() {
        return Err(Error::Input(format!("{} has no rows", path.display())));
    }
    Ok(rows)
}

pub fn write_gamma(path: &Path, corpus: &Corpus, per_doc: &[DocVariational]) -> Result<()> {
    write_rows(
        path,
        corpus
            .documents()
            .iter()
            .zip(per_doc)
            .map(|(d, s)| (d.id.as_str(), s.gamma.as_slice())),
    )
}

pub fn write_elbo_trace(path: &Path, trace: &[ElboBreakdown]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "iteration,ll_terms,q_entropy,penalty,total")?;
    for (i, e) in trace.iter().enumerate() {
        writeln!(
            out,
            "{},{},{},{},{}",
            i + 1,
            fmt_f64(e.log_likelihood_terms),
            fmt_f64(e.entropy_of_q),
            fmt_f64(e.penalty_term),
            fmt_f64(e.total)
        )?;
    }
    out.flush()?;
    Ok(())
}

/// `topic<TAB>term_1 term_2 ...` with the most probable terms first.
pub fn write_top_terms(path: &Path, topics: &[TopicTopWords], vocabulary: &Vocabulary) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for t in topics {
        writeln!(out, "{}\t{}", t.topic_id, vocabulary.decode(&t.words).join(" "))?;
    }
    out.flush()?;
    Ok(())
}

/// `topic_id,top_words,cv_score` with `|` between words, then a `mean` row.
pub fn write_coherence(path: &Path, report: &CoherenceReport, vocabulary: &Vocabulary) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "topic_id,top_words,cv_score")?;
    for (t, cv) in report.topics.iter().zip(&report.per_topic) {
        writeln!(out, "{},{},{}", t.topic_id, vocabulary.decode(&t.words).join("|"), fmt_f64(*cv))?;
    }
    writeln!(out, "mean,,{}", fmt_f64(report.mean_cv))?;
    out.flush()?;
    Ok(())
}

pub fn write_entropies(path: &Path, ids: &[String], entropies: &[f64]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "doc_id,entropy")?;
    for (id, h) in ids.iter().zip(entropies) {
        writeln!(out, "{id},{}", fmt_f64(*h))?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct EntropySummary<'a> {
    num_docs: usize,
    #[serde(rename = "K")]
    k: usize,
    mean: f64,
    variance: f64,
    skewness: f64,
    excess_kurtosis: f64,
    histogram: &'a Histogram,
}

pub fn write_entropy_stats(path: &Path, stats: &EntropyStats, k: usize, histogram: &Histogram) -> Result<()> {
    let summary = EntropySummary {
        num_docs: stats.entropies.len(),
        k,
        mean: stats.mean,
        variance: stats.variance,
        skewness: stats.skewness,
        excess_kurtosis: stats.excess_kurtosis,
        histogram,
    };
    fs::write(path, serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(())
}

/// `K,lambda,fold,metric_name,value`, one row per fitted fold.
pub fn write_grid(path: &Path, result: &GridResult) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "K,lambda,fold,metric_name,value")?;
    for r in &result.rows {
        writeln!(out, "{},{},{},{},{}", r.k, r.lambda, r.fold, r.metric, fmt_f64(r.value))?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}
