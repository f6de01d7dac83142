//! Text ingestion: tokenization, vocabulary, encoded documents, train/test
//! splits and boolean sliding-window co-occurrence counts.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stopwords;

pub type WordId = usize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenizerConfig {
    pub min_token_len: usize,
    pub remove_stopwords: bool,
    /// Replaces the built-in English list when set.
    pub stopwords: Option<Vec<String>>,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            min_token_len: 2,
            remove_stopwords: true,
            stopwords: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub tokenizer: TokenizerConfig,
    /// Terms must appear in at least this many documents.
    pub min_doc_freq: usize,
    /// Terms appearing in more than this fraction of documents are dropped.
    pub max_doc_fraction: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            tokenizer: TokenizerConfig::default(),
            min_doc_freq: 5,
            max_doc_fraction: 0.5,
        }
    }
}

/// Lowercases, turns every non-alphanumeric character into a separator and
/// splits on whitespace, then applies the length and stopword filters.
pub fn tokenize(raw_text: &str, config: &TokenizerConfig) -> Vec<String> {
    let custom: Option<std::collections::HashSet<&str>> = config
        .stopwords
        .as_ref()
        .map(|list| list.iter().map(String::as_str).collect());
    let is_stop = |tok: &str| -> bool {
        if !config.remove_stopwords {
            return false;
        }
        match &custom {
            Some(set) => set.contains(tok),
            None => stopwords::ENGLISH.contains(&tok),
        }
    };

    let cleaned: String = raw_text
        .chars()
        .flat_map(char::to_lowercase)
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    cleaned
        .split_whitespace()
        .filter(|tok| tok.chars().count() >= config.min_token_len && !is_stop(tok))
        .map(str::to_owned)
        .collect()
}

/// Bijective term ↔ id map with per-term document frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    terms: Vec<String>,
    index: HashMap<String, WordId>,
    doc_freq: Vec<usize>,
}

impl Vocabulary {
    pub fn new(terms: Vec<String>, doc_freq: Vec<usize>) -> Result<Self> {
        if terms.len() != doc_freq.len() {
            return Err(Error::Input(format!(
                "vocabulary has {} terms but {} document frequencies",
                terms.len(),
                doc_freq.len()
            )));
        }
        let mut index = HashMap::with_capacity(terms.len());
        for (id, term) in terms.iter().enumerate() {
            if term.is_empty() {
                return Err(Error::Input("empty term in vocabulary".into()));
            }
            if index.insert(term.clone(), id).is_some() {
                return Err(Error::Input(format!("duplicate term {term:?} in vocabulary")));
            }
        }
        Ok(Self {
            terms,
            index,
            doc_freq,
        })
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn id(&self, term: &str) -> Option<WordId> {
        self.index.get(term).copied()
    }

    pub fn term(&self, id: WordId) -> Option<&str> {
        self.terms.get(id).map(String::as_str)
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn doc_freq(&self, id: WordId) -> usize {
        self.doc_freq[id]
    }

    /// Maps tokens to ids, dropping tokens outside the vocabulary.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<WordId> {
        tokens.iter().filter_map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[WordId]) -> Vec<&str> {
        ids.iter().map(|&id| self.terms[id].as_str()).collect()
    }

    /// `word_id<TAB>term<TAB>document_frequency`, one line per term.
    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(fs::File::create(path)?);
        for (id, term) in self.terms.iter().enumerate() {
            writeln!(out, "{id}\t{term}\t{}", self.doc_freq[id])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_tsv(path: &Path) -> Result<Self> {
        let reader = BufReader::new(fs::File::open(path)?);
        let mut terms = Vec::new();
        let mut doc_freq = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let bad = |msg: &str| Error::Parse {
                what: "vocabulary",
                line: lineno + 1,
                msg: msg.to_owned(),
            };
            let mut fields = line.split('\t');
            let id: usize = fields
                .next()
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| bad("bad word id"))?;
            if id != terms.len() {
                return Err(bad("word ids must be consecutive from 0"));
            }
            let term = fields.next().ok_or_else(|| bad("missing term"))?;
            let df: usize = fields
                .next()
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| bad("bad document frequency"))?;
            terms.push(term.to_owned());
            doc_freq.push(df);
        }
        Self::new(terms, doc_freq)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub tokens: Vec<WordId>,
}

impl Document {
    pub fn new(id: impl Into<String>, tokens: Vec<WordId>) -> Self {
        Self {
            id: id.into(),
            tokens,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    vocabulary: Arc<Vocabulary>,
    documents: Vec<Document>,
}

impl Corpus {
    /// Checks that there is at least one document, that no document is empty
    /// and that every word id is inside the vocabulary.
    pub fn new(vocabulary: Arc<Vocabulary>, documents: Vec<Document>) -> Result<Self> {
        if documents.is_empty() {
            return Err(Error::EmptyCorpus("no documents".into()));
        }
        let v = vocabulary.len();
        for doc in &documents {
            if doc.is_empty() {
                return Err(Error::Input(format!("document {:?} has no tokens", doc.id)));
            }
            if let Some(&w) = doc.tokens.iter().find(|&&w| w >= v) {
                return Err(Error::Input(format!(
                    "document {:?} references word id {w} but V = {v}",
                    doc.id
                )));
            }
        }
        Ok(Self {
            vocabulary,
            documents,
        })
    }

    pub fn vocabulary(&self) -> &Arc<Vocabulary> {
        &self.vocabulary
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn num_docs(&self) -> usize {
        self.documents.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn total_tokens(&self) -> usize {
        self.documents.iter().map(Document::len).sum()
    }

    /// Corpus-wide occurrence count of every word id.
    pub fn word_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.vocab_size()];
        for doc in &self.documents {
            for &w in &doc.tokens {
                counts[w] += 1;
            }
        }
        counts
    }

    /// `doc_id<TAB>N_d<TAB>w_1 w_2 ... w_Nd`, one line per document.
    pub fn write_encoded(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(fs::File::create(path)?);
        for doc in &self.documents {
            write!(out, "{}\t{}\t", doc.id, doc.len())?;
            for (n, w) in doc.tokens.iter().enumerate() {
                if n > 0 {
                    out.write_all(b" ")?;
                }
                write!(out, "{w}")?;
            }
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_encoded(path: &Path, vocabulary: Arc<Vocabulary>) -> Result<Self> {
        let reader = BufReader::new(fs::File::open(path)?);
        let mut documents = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let bad = |msg: String| Error::Parse {
                what: "encoded corpus",
                line: lineno + 1,
                msg,
            };
            let mut fields = line.splitn(3, '\t');
            let id = fields.next().unwrap_or_default().to_owned();
            let n: usize = fields
                .next()
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| bad("bad token count".into()))?;
            let tokens = fields
                .next()
                .unwrap_or_default()
                .split_whitespace()
                .map(|t| t.parse::<WordId>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| bad(e.to_string()))?;
            if tokens.len() != n {
                return Err(bad(format!("declared {n} tokens, found {}", tokens.len())));
            }
            documents.push(Document::new(id, tokens));
        }
        Self::new(vocabulary, documents)
    }

    fn subset(&self, indices: &[usize]) -> Vec<Document> {
        indices.iter().map(|&i| self.documents[i].clone()).collect()
    }
}

/// A document before tokenization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawDocument {
    pub id: String,
    pub text: String,
}

/// Reads raw documents from a directory (one document per file, id = file
/// name, files in name order) or from a single file (one document per line,
/// id = 1-based line number).
pub fn load_raw(path: &Path) -> Result<Vec<RawDocument>> {
    if path.is_dir() {
        let mut entries: Vec<_> = fs::read_dir(path)?
            .collect::<std::io::Result<Vec<_>>>()?
            .into_iter()
            .filter(|e| e.path().is_file())
            .collect();
        entries.sort_by_key(|e| e.file_name());
        entries
            .into_iter()
            .map(|e| {
                Ok(RawDocument {
                    id: e.file_name().to_string_lossy().into_owned(),
                    text: fs::read_to_string(e.path())?,
                })
            })
            .collect()
    } else {
        let text = fs::read_to_string(path)?;
        Ok(text
            .lines()
            .enumerate()
            .map(|(i, line)| RawDocument {
                id: (i + 1).to_string(),
                text: line.to_owned(),
            })
            .collect())
    }
}

#[derive(Debug, Clone)]
pub struct BuiltCorpus {
    pub corpus: Corpus,
    /// Ids of documents left with no tokens after filtering.
    pub dropped: Vec<String>,
}

/// Tokenizes, applies the document-frequency filters, and encodes. Terms are
/// ordered lexicographically so the vocabulary does not depend on input order.
pub fn build_corpus(documents: &[RawDocument], config: &CorpusConfig) -> Result<BuiltCorpus> {
    if documents.is_empty() {
        return Err(Error::EmptyCorpus("no input documents".into()));
    }
    if !(config.max_doc_fraction > 0.0 && config.max_doc_fraction <= 1.0) {
        return Err(Error::Config(format!(
            "max_doc_fraction must be in (0, 1], got {}",
            config.max_doc_fraction
        )));
    }
    let tokenized: Vec<Vec<String>> = documents
        .par_iter()
        .map(|d| tokenize(&d.text, &config.tokenizer))
        .collect();

    let mut df: HashMap<&str, usize> = HashMap::new();
    for toks in &tokenized {
        let unique: BTreeSet<&str> = toks.iter().map(String::as_str).collect();
        for t in unique {
            *df.entry(t).or_insert(0) += 1;
        }
    }
    let max_df = config.max_doc_fraction * documents.len() as f64;
    let mut kept: Vec<(&str, usize)> = df
        .into_iter()
        .filter(|&(_, n)| n >= config.min_doc_freq && n as f64 <= max_df)
        .collect();
    kept.sort_unstable();
    let (terms, freqs): (Vec<String>, Vec<usize>) =
        kept.into_iter().map(|(t, n)| (t.to_owned(), n)).unzip();
    let vocabulary = Vocabulary::new(terms, freqs)?;

    let mut docs = Vec::with_capacity(documents.len());
    let mut dropped = Vec::new();
    for (raw, toks) in documents.iter().zip(&tokenized) {
        let ids = vocabulary.encode(toks);
        if ids.is_empty() {
            log::warn!("document {:?} is empty after filtering; dropped", raw.id);
            dropped.push(raw.id.clone());
        } else {
            docs.push(Document::new(raw.id.clone(), ids));
        }
    }
    if docs.is_empty() {
        return Err(Error::EmptyCorpus(
            "every document is empty after filtering".into(),
        ));
    }
    Ok(BuiltCorpus {
        corpus: Corpus::new(Arc::new(vocabulary), docs)?,
        dropped,
    })
}

/// Encodes raw documents against an existing vocabulary. Unknown tokens are
/// skipped; documents with no known token are returned by id in the second
/// element.
pub fn encode_with_vocabulary(
    documents: &[RawDocument],
    vocabulary: &Vocabulary,
    tokenizer: &TokenizerConfig,
) -> (Vec<Document>, Vec<String>) {
    let mut docs = Vec::new();
    let mut skipped = Vec::new();
    for raw in documents {
        let ids = vocabulary.encode(&tokenize(&raw.text, tokenizer));
        if ids.is_empty() {
            skipped.push(raw.id.clone());
        } else {
            docs.push(Document::new(raw.id.clone(), ids));
        }
    }
    (docs, skipped)
}

/// Rebuilds `train` and `held_out` over the vocabulary of words that occur in
/// `train`. Held-out tokens outside it are dropped, as are held-out documents
/// left empty.
fn restrict_to_training_vocabulary(
    source: &Vocabulary,
    train: Vec<Document>,
    held_out: Vec<Document>,
) -> Result<(Corpus, Corpus)> {
    let mut df = vec![0usize; source.len()];
    for doc in &train {
        let unique: BTreeSet<WordId> = doc.tokens.iter().copied().collect();
        for w in unique {
            df[w] += 1;
        }
    }
    let mut remap = vec![usize::MAX; source.len()];
    let mut terms = Vec::new();
    let mut freqs = Vec::new();
    for (old, &n) in df.iter().enumerate() {
        if n > 0 {
            remap[old] = terms.len();
            terms.push(source.terms()[old].clone());
            freqs.push(n);
        }
    }
    let vocabulary = Arc::new(Vocabulary::new(terms, freqs)?);
    let recode = |doc: Document| -> Document {
        let tokens = doc
            .tokens
            .iter()
            .map(|&w| remap[w])
            .filter(|&w| w != usize::MAX)
            .collect();
        Document::new(doc.id, tokens)
    };
    let train: Vec<Document> = train.into_iter().map(recode).collect();
    let held_out: Vec<Document> = held_out
        .into_iter()
        .map(recode)
        .filter(|d| {
            if d.is_empty() {
                log::warn!("held-out document {:?} has no training-vocabulary tokens; dropped", d.id);
            }
            !d.is_empty()
        })
        .collect();
    if held_out.is_empty() {
        return Err(Error::EmptyCorpus(
            "held-out part has no tokens in the training vocabulary".into(),
        ));
    }
    Ok((
        Corpus::new(vocabulary.clone(), train)?,
        Corpus::new(vocabulary, held_out)?,
    ))
}

fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

/// Random train/test split. The training part gets `floor(D·fraction)`
/// documents, clamped so both parts keep at least one. Both parts are
/// re-encoded over the training vocabulary and keep their original order.
pub fn split_corpus(corpus: &Corpus, train_fraction: f64, seed: u64) -> Result<(Corpus, Corpus)> {
    let d = corpus.num_docs();
    if d < 2 {
        return Err(Error::Input(format!("cannot split a corpus of {d} document(s)")));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let n_train = ((d as f64 * train_fraction).floor() as usize).clamp(1, d - 1);
    let idx = shuffled_indices(d, seed);
    let mut train_idx = idx[..n_train].to_vec();
    let mut test_idx = idx[n_train..].to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    restrict_to_training_vocabulary(
        corpus.vocabulary(),
        corpus.subset(&train_idx),
        corpus.subset(&test_idx),
    )
}

/// `folds`-way cross-validation partition. Fold `f` validates on the
/// documents whose shuffled position is `f` modulo `folds`.
pub fn kfold(corpus: &Corpus, folds: usize, seed: u64) -> Result<Vec<(Corpus, Corpus)>> {
    let d = corpus.num_docs();
    if folds < 2 || folds > d {
        return Err(Error::Config(format!(
            "cannot make {folds} folds from {d} documents"
        )));
    }
    let idx = shuffled_indices(d, seed);
    (0..folds)
        .map(|f| {
            let mut train_idx = Vec::new();
            let mut val_idx = Vec::new();
            for (pos, &i) in idx.iter().enumerate() {
                if pos % folds == f {
                    val_idx.push(i);
                } else {
                    train_idx.push(i);
                }
            }
            train_idx.sort_unstable();
            val_idx.sort_unstable();
            restrict_to_training_vocabulary(
                corpus.vocabulary(),
                corpus.subset(&train_idx),
                corpus.subset(&val_idx),
            )
        })
        .collect()
}

/// Boolean sliding-window document frequencies for a set of target words.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowCounts {
    window_size: usize,
    total_windows: u64,
    targets: Vec<WordId>,
    local: HashMap<WordId, usize>,
    unigram: Vec<u64>,
    pair: HashMap<(WordId, WordId), u64>,
}

impl WindowCounts {
    pub fn window_size(&self) -> usize {
        self.window_size
    }

    pub fn total_windows(&self) -> u64 {
        self.total_windows
    }

    pub fn targets(&self) -> &[WordId] {
        &self.targets
    }

    pub fn is_tracked(&self, w: WordId) -> bool {
        self.local.contains_key(&w)
    }

    /// Number of windows containing `w`; 0 for untracked words.
    pub fn unigram(&self, w: WordId) -> u64 {
        self.local.get(&w).map_or(0, |&i| self.unigram[i])
    }

    /// Number of windows containing both words. `pair(w, w) = unigram(w)`.
    pub fn pair(&self, a: WordId, b: WordId) -> u64 {
        if a == b {
            return self.unigram(a);
        }
        let key = if a < b { (a, b) } else { (b, a) };
        self.pair.get(&key).copied().unwrap_or(0)
    }
}

/// Per-shard accumulator over target-local indices.
struct WindowAccumulator {
    windows: u64,
    unigram: Vec<u64>,
    // upper triangle, row-major, i < j
    pair: Vec<u64>,
    n: usize,
}

impl WindowAccumulator {
    fn new(n: usize) -> Self {
        Self {
            windows: 0,
            unigram: vec![0; n],
            pair: vec![0; n * n],
            n,
        }
    }

    fn record(&mut self, present: &[usize], weight: u64) {
        self.windows += weight;
        for (a, &i) in present.iter().enumerate() {
            self.unigram[i] += weight;
            for &j in &present[a + 1..] {
                let (lo, hi) = if i < j { (i, j) } else { (j, i) };
                self.pair[lo * self.n + hi] += weight;
            }
        }
    }

    fn merge(mut self, other: Self) -> Self {
        self.windows += other.windows;
        for (a, b) in self.unigram.iter_mut().zip(other.unigram) {
            *a += b;
        }
        for (a, b) in self.pair.iter_mut().zip(other.pair) {
            *a += b;
        }
        self
    }

    fn add_document(&mut self, tokens: &[WordId], window: usize, local: &HashMap<WordId, usize>) {
        let locals: Vec<Option<usize>> = tokens.iter().map(|w| local.get(w).copied()).collect();
        if tokens.len() <= window {
            let present: BTreeSet<usize> = locals.iter().flatten().copied().collect();
            let present: Vec<usize> = present.into_iter().collect();
            self.record(&present, 1);
            return;
        }
        // Multiset of targets inside the current window; `present` lists the
        // distinct ones. Consecutive windows with the same distinct set are
        // recorded together.
        let mut in_window = vec![0u32; self.n];
        let mut present: Vec<usize> = Vec::new();
        for l in locals[..window].iter().flatten() {
            if in_window[*l] == 0 {
                present.push(*l);
            }
            in_window[*l] += 1;
        }
        let mut run = 1u64;
        for start in 1..=tokens.len() - window {
            let mut changed = false;
            if let Some(l) = locals[start - 1] {
                in_window[l] -= 1;
                if in_window[l] == 0 {
                    changed = true;
                }
            }
            if let Some(l) = locals[start + window - 1] {
                if in_window[l] == 0 {
                    changed = true;
                }
                in_window[l] += 1;
            }
            if changed {
                self.record(&present, run);
                present.retain(|&l| in_window[l] > 0);
                if let Some(l) = locals[start + window - 1] {
                    if !present.contains(&l) {
                        present.push(l);
                    }
                }
                run = 1;
            } else {
                run += 1;
            }
        }
        self.record(&present, run);
    }
}

/// Slides a window of `window_size` tokens (step 1) over every document and
/// counts, for each target word and target pair, the windows containing it.
/// A document shorter than the window is a single window.
pub fn count_windows(
    corpus: &Corpus,
    window_size: usize,
    target_words: &BTreeSet<WordId>,
) -> Result<WindowCounts> {
    if window_size < 2 {
        return Err(Error::Config(format!("window size must be >= 2, got {window_size}")));
    }
    if target_words.is_empty() {
        return Err(Error::Input("no target words to count".into()));
    }
    let targets: Vec<WordId> = target_words.iter().copied().collect();
    let local: HashMap<WordId, usize> = targets.iter().enumerate().map(|(i, &w)| (w, i)).collect();
    let n = targets.len();

    let acc = corpus
        .documents()
        .par_iter()
        .fold(
            || WindowAccumulator::new(n),
            |mut acc, doc| {
                acc.add_document(&doc.tokens, window_size, &local);
                acc
            },
        )
        .reduce(|| WindowAccumulator::new(n), WindowAccumulator::merge);

    let mut pair = HashMap::new();
    for i in 0..n {
        for j in i + 1..n {
            let c = acc.pair[i * n + j];
            if c > 0 {
                pair.insert((targets[i], targets[j]), c);
            }
        }
    }
    Ok(WindowCounts {
        window_size,
        total_windows: acc.windows,
        targets,
        local,
        unigram: acc.unigram,
        pair,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raw(id: &str, text: &str) -> RawDocument {
        RawDocument {
            id: id.into(),
            text: text.into(),
        }
    }

    fn permissive() -> CorpusConfig {
        CorpusConfig {
            min_doc_freq: 1,
            max_doc_fraction: 1.0,
            ..Default::default()
        }
    }

    fn toy_corpus(docs: &[Vec<WordId>], v: usize) -> Corpus {
        let terms = (0..v).map(|i| format!("w{i}")).collect();
        let vocab = Vocabulary::new(terms, vec![1; v]).unwrap();
        let docs = docs
            .iter()
            .enumerate()
            .map(|(i, t)| Document::new(format!("d{i}"), t.clone()))
            .collect();
        Corpus::new(Arc::new(vocab), docs).unwrap()
    }

    #[test]
    fn tokenize_default() {
        let cfg = TokenizerConfig::default();
        assert_eq!(
            tokenize("Neural Networks, neural nets.", &cfg),
            vec!["neural", "networks", "neural", "nets"]
        );
        assert!(tokenize("", &cfg).is_empty());
        assert!(tokenize("A the of", &cfg).is_empty());
        let keep = TokenizerConfig {
            remove_stopwords: false,
            min_token_len: 1,
            ..Default::default()
        };
        assert_eq!(tokenize("A the of", &keep), vec!["a", "the", "of"]);
    }

    #[test]
    fn custom_stopwords_replace_default_list() {
        let cfg = TokenizerConfig {
            stopwords: Some(vec!["neural".into()]),
            ..Default::default()
        };
        assert_eq!(tokenize("the neural net", &cfg), vec!["the", "net"]);
    }

    #[test]
    fn build_shared_tokens() {
        let docs = [
            raw("a", "alpha beta gamma delta epsilon"),
            raw("b", "epsilon delta gamma beta alpha"),
            raw("c", "gamma alpha beta epsilon delta"),
        ];
        let built = build_corpus(&docs, &permissive()).unwrap();
        assert_eq!(built.corpus.vocab_size(), 5);
        assert_eq!(built.corpus.num_docs(), 3);
        assert!(built.dropped.is_empty());
        let v = built.corpus.vocabulary();
        assert_eq!(v.terms(), &["alpha", "beta", "delta", "epsilon", "gamma"]);
        assert_eq!(v.doc_freq(v.id("gamma").unwrap()), 3);
    }

    #[test]
    fn build_drops_filtered_documents() {
        let docs = [
            raw("a", "alpha beta"),
            raw("b", "alpha beta"),
            raw("c", "the of and"),
        ];
        let built = build_corpus(&docs, &permissive()).unwrap();
        assert_eq!(built.corpus.num_docs(), 2);
        assert_eq!(built.dropped, vec!["c".to_string()]);
    }

    #[test]
    fn build_min_doc_frequency() {
        let docs = [raw("a", "alpha beta"), raw("b", "alpha gamma")];
        let cfg = CorpusConfig {
            min_doc_freq: 2,
            ..permissive()
        };
        let built = build_corpus(&docs, &cfg).unwrap();
        let v = built.corpus.vocabulary();
        assert_eq!(v.len(), 1);
        assert!(v.id("beta").is_none());
        assert!(v.id("gamma").is_none());
    }

    #[test]
    fn build_max_doc_fraction_and_all_empty() {
        let docs = [raw("a", "alpha beta"), raw("b", "alpha gamma"), raw("c", "alpha delta")];
        let cfg = CorpusConfig {
            max_doc_fraction: 0.5,
            ..permissive()
        };
        let built = build_corpus(&docs, &cfg).unwrap();
        assert!(built.corpus.vocabulary().id("alpha").is_none());

        let empty = [raw("a", "the"), raw("b", "")];
        assert!(matches!(
            build_corpus(&empty, &permissive()),
            Err(Error::EmptyCorpus(_))
        ));
    }

    #[test]
    fn split_counts_and_determinism() {
        let docs: Vec<Vec<WordId>> = (0..10).map(|i| vec![i % 3, (i + 1) % 3]).collect();
        let c = toy_corpus(&docs, 3);
        let (tr, te) = split_corpus(&c, 0.8, 7).unwrap();
        assert_eq!((tr.num_docs(), te.num_docs()), (8, 2));
        let (tr2, te2) = split_corpus(&c, 0.8, 7).unwrap();
        let ids = |c: &Corpus| c.documents().iter().map(|d| d.id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&tr), ids(&tr2));
        assert_eq!(ids(&te), ids(&te2));

        let five = toy_corpus(&docs[..5], 3);
        let (tr, te) = split_corpus(&five, 0.8, 1).unwrap();
        assert_eq!((tr.num_docs(), te.num_docs()), (4, 1));
        let (tr, te) = split_corpus(&five, 0.01, 1).unwrap();
        assert_eq!((tr.num_docs(), te.num_docs()), (1, 4));

        assert!(split_corpus(&toy_corpus(&docs[..1], 3), 0.5, 1).is_err());
        assert!(split_corpus(&c, 1.0, 1).is_err());
        assert!(split_corpus(&c, 0.0, 1).is_err());
    }

    #[test]
    fn split_restricts_test_to_training_vocabulary() {
        // word 3 only appears in the last document
        let docs = vec![vec![0, 1], vec![1, 2], vec![0, 2], vec![3, 0]];
        let c = toy_corpus(&docs, 4);
        for seed in 0..20 {
            let (tr, te) = split_corpus(&c, 0.75, seed).unwrap();
            let tv = tr.vocabulary();
            assert!(Arc::ptr_eq(tv, te.vocabulary()));
            for doc in tr.documents().iter().chain(te.documents()) {
                let original = &c.documents().iter().find(|d| d.id == doc.id).unwrap().tokens;
                let kept: Vec<&str> = original
                    .iter()
                    .map(|&w| c.vocabulary().term(w).unwrap())
                    .filter(|t| tv.id(t).is_some())
                    .collect();
                assert_eq!(tv.decode(&doc.tokens), kept);
            }
        }
    }

    #[test]
    fn kfold_partitions() {
        let docs: Vec<Vec<WordId>> = (0..11).map(|i| vec![i % 2, 2]).collect();
        let c = toy_corpus(&docs, 3);
        let folds = kfold(&c, 3, 4).unwrap();
        assert_eq!(folds.len(), 3);
        let mut seen: Vec<String> = folds
            .iter()
            .flat_map(|(_, v)| v.documents().iter().map(|d| d.id.clone()))
            .collect();
        seen.sort();
        let mut all: Vec<String> = c.documents().iter().map(|d| d.id.clone()).collect();
        all.sort();
        assert_eq!(seen, all);
        for (t, v) in &folds {
            assert_eq!(t.num_docs() + v.num_docs(), 11);
        }
        assert!(kfold(&c, 1, 0).is_err());
        assert!(kfold(&c, 12, 0).is_err());
    }

    #[test]
    fn windows_hand_enumerated() {
        // [a, b, a], window 2 → {a,b}, {b,a}
        let c = toy_corpus(&[vec![0, 1, 0]], 2);
        let wc = count_windows(&c, 2, &[0, 1].into_iter().collect()).unwrap();
        assert_eq!(wc.total_windows(), 2);
        assert_eq!(wc.unigram(0), 2);
        assert_eq!(wc.unigram(1), 2);
        assert_eq!(wc.pair(0, 1), 2);
        assert_eq!(wc.pair(1, 0), 2);
    }

    #[test]
    fn short_document_is_one_window() {
        let c = toy_corpus(&[vec![0, 1, 2]], 4);
        let wc = count_windows(&c, 110, &[0, 3].into_iter().collect()).unwrap();
        assert_eq!(wc.total_windows(), 1);
        assert_eq!(wc.unigram(0), 1);
        assert_eq!(wc.unigram(3), 0);
        assert_eq!(wc.pair(0, 3), 0);
    }

    #[test]
    fn window_errors() {
        let c = toy_corpus(&[vec![0, 1, 2]], 3);
        assert!(count_windows(&c, 2, &BTreeSet::new()).is_err());
        assert!(count_windows(&c, 1, &[0].into_iter().collect()).is_err());
    }

    #[test]
    fn encoded_roundtrip_files() {
        let dir = tempfile::tempdir().unwrap();
        let c = toy_corpus(&[vec![0, 1, 2, 1], vec![2]], 3);
        c.vocabulary().write_tsv(&dir.path().join("vocab.tsv")).unwrap();
        c.write_encoded(&dir.path().join("corpus.tsv")).unwrap();
        let text = fs::read_to_string(dir.path().join("corpus.tsv")).unwrap();
        assert_eq!(text, "d0\t4\t0 1 2 1\nd1\t1\t2\n");
        let vocab = Arc::new(Vocabulary::read_tsv(&dir.path().join("vocab.tsv")).unwrap());
        assert_eq!(&*vocab, &**c.vocabulary());
        let back = Corpus::read_encoded(&dir.path().join("corpus.tsv"), vocab).unwrap();
        assert_eq!(back.documents(), c.documents());

        fs::write(dir.path().join("bad.tsv"), "d0\t3\t0 1\n").unwrap();
        let vocab = Arc::new(Vocabulary::read_tsv(&dir.path().join("vocab.tsv")).unwrap());
        assert!(matches!(
            Corpus::read_encoded(&dir.path().join("bad.tsv"), vocab),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn load_raw_dir_and_lines() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("b.txt"), "second").unwrap();
        fs::write(dir.path().join("a.txt"), "first").unwrap();
        let docs = load_raw(dir.path()).unwrap();
        assert_eq!(docs[0], raw("a.txt", "first"));
        assert_eq!(docs[1], raw("b.txt", "second"));
        let file = dir.path().join("lines");
        fs::write(&file, "one\ntwo\n").unwrap();
        let docs = load_raw(&file).unwrap();
        assert_eq!(docs, vec![raw("1", "one"), raw("2", "two")]);
    }

    /// Direct enumeration of every window as a set.
    fn brute_force(docs: &[Vec<WordId>], window: usize, targets: &[WordId]) -> (u64, HashMap<(WordId, WordId), u64>) {
        let mut total = 0;
        let mut counts = HashMap::new();
        for doc in docs {
            let spans: Vec<&[WordId]> = if doc.len() <= window {
                vec![&doc[..]]
            } else {
                (0..=doc.len() - window).map(|s| &doc[s..s + window]).collect()
            };
            for span in spans {
                total += 1;
                for &a in targets {
                    for &b in targets {
                        if span.contains(&a) && span.contains(&b) {
                            *counts.entry((a, b)).or_insert(0) += 1;
                        }
                    }
                }
            }
        }
        (total, counts)
    }

    proptest! {
        #[test]
        fn windows_match_brute_force(
            docs in prop::collection::vec(prop::collection::vec(0usize..8, 1..25), 1..5),
            window in 2usize..12,
            targets in prop::collection::btree_set(0usize..9, 1..6),
        ) {
            let c = toy_corpus(&docs, 9);
            let wc = count_windows(&c, window, &targets).unwrap();
            let tv: Vec<WordId> = targets.iter().copied().collect();
            let (total, counts) = brute_force(&docs, window, &tv);
            prop_assert_eq!(wc.total_windows(), total);
            for &a in &tv {
                prop_assert_eq!(wc.unigram(a), counts.get(&(a, a)).copied().unwrap_or(0));
                for &b in &tv {
                    prop_assert_eq!(wc.pair(a, b), counts.get(&(a, b)).copied().unwrap_or(0));
                    prop_assert!(wc.pair(a, b) <= wc.unigram(a).min(wc.unigram(b)));
                }
            }
        }

        #[test]
        fn vocabulary_roundtrip(words in prop::collection::btree_set("[a-z]{2,6}", 1..20), picks in prop::collection::vec(any::<prop::sample::Index>(), 0..30)) {
            let terms: Vec<String> = words.into_iter().collect();
            let vocab = Vocabulary::new(terms.clone(), vec![1; terms.len()]).unwrap();
            let tokens: Vec<&str> = picks.iter().map(|i| terms[i.index(terms.len())].as_str()).collect();
            prop_assert_eq!(vocab.decode(&vocab.encode(&tokens)), tokens);
        }

        #[test]
        fn split_is_a_partition(n in 2usize..40, frac in 0.05f64..0.95, seed in any::<u64>()) {
            let docs: Vec<Vec<WordId>> = (0..n).map(|_| vec![0, 1]).collect();
            let c = toy_corpus(&docs, 2);
            let (tr, te) = split_corpus(&c, frac, seed).unwrap();
            let mut ids: Vec<String> = tr.documents().iter().chain(te.documents()).map(|d| d.id.clone()).collect();
            ids.sort();
            let mut all: Vec<String> = c.documents().iter().map(|d| d.id.clone()).collect();
            all.sort();
            prop_assert_eq!(ids, all);
        }
    }
}
