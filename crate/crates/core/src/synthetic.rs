//! Corpora sampled from a known topic model, for tests and benchmarks.

use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, Document, Vocabulary};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub num_docs: usize,
    pub vocab_size: usize,
    pub num_topics: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Each document mixes between 1 and this many distinct topics.
    pub max_topics_per_doc: usize,
    /// Share of each topic's mass on its own block of the vocabulary.
    pub block_mass: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_docs: 50,
            vocab_size: 100,
            num_topics: 5,
            min_len: 50,
            max_len: 200,
            max_topics_per_doc: 2,
            block_mass: 0.9,
            seed: 0,
        }
    }
}

/// A sampled corpus and the parameters it was drawn from.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    /// True topic-word distributions, `num_topics × vocab_size`, row-major.
    pub topics: Vec<f64>,
    /// True mixing proportions of every document.
    pub proportions: Vec<Vec<f64>>,
}

/// Samples a corpus. Topic `t` puts `block_mass` of its probability on the
/// t-th contiguous block of the vocabulary (random weights within the block)
/// and spreads the rest uniformly. Every document picks 1 to
/// `max_topics_per_doc` distinct topics with uniform random weights.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    let SyntheticSpec {
        num_docs,
        vocab_size: v,
        num_topics: k,
        min_len,
        max_len,
        max_topics_per_doc,
        block_mass,
        seed,
    } = *spec;
    if num_docs == 0 || k == 0 || v < k || min_len == 0 || min_len > max_len {
        return Err(Error::Config(format!("invalid synthetic corpus shape {spec:?}")));
    }
    if max_topics_per_doc == 0 || max_topics_per_doc > k || !(0.0..=1.0).contains(&block_mass) {
        return Err(Error::Config(format!("invalid synthetic mixing settings {spec:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let block = v / k;
    let mut topics = vec![(1.0 - block_mass) / v as f64; k * v];
    for t in 0..k {
        let weights: Vec<f64> = (0..block).map(|_| rng.random_range(0.5..1.5)).collect();
        let total: f64 = weights.iter().sum();
        for (j, w) in weights.iter().enumerate() {
            topics[t * v + t * block + j] += block_mass * w / total;
        }
    }
    let samplers = (0..k)
        .map(|t| WeightedIndex::new(&topics[t * v..(t + 1) * v]))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Numerical(e.to_string()))?;

    let mut documents = Vec::with_capacity(num_docs);
    let mut proportions = Vec::with_capacity(num_docs);
    for d in 0..num_docs {
        let n_topics = rng.random_range(1..=max_topics_per_doc);
        let chosen = sample(&mut rng, k, n_topics).into_vec();
        let raw: Vec<f64> = chosen.iter().map(|_| rng.random_range(0.2..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let mut theta = vec![0.0; k];
        for (&t, w) in chosen.iter().zip(&raw) {
            theta[t] = w / total;
        }
        let mixer = WeightedIndex::new(&theta).map_err(|e| Error::Numerical(e.to_string()))?;
        let len = rng.random_range(min_len..=max_len);
        let tokens = (0..len)
            .map(|_| samplers[mixer.sample(&mut rng)].sample(&mut rng))
            .collect();
        documents.push(Document::new(format!("doc{d:04}"), tokens));
        proportions.push(theta);
    }

    let mut doc_freq = vec![0usize; v];
    for doc in &documents {
        let mut seen = vec![false; v];
        for &w in &doc.tokens {
            if !seen[w] {
                seen[w] = true;
                doc_freq[w] += 1;
            }
        }
    }
    let terms = (0..v).map(|j| format!("w{j:04}")).collect();
    let vocabulary = Arc::new(Vocabulary::new(terms, doc_freq)?);
    Ok(SyntheticCorpus {
        corpus: Corpus::new(vocabulary, documents)?,
        topics,
        proportions,
    })
}
