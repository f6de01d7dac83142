use std::path::PathBuf;

use cdtm_core::eval::CoherenceReference;
use cdtm_core::{Penalty, Reduction};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::settings::Settings;

/// Concentrated document topic model: LDA with an entropy penalty on each
/// document's topic proportions.
///
/// Settings come from built-in defaults, then `--config`, then flags. Set
/// `CDTM_LOG` (error, warn, info, debug, trace) for progress output.
#[derive(Debug, Parser)]
#[command(name = "cdtm", version, propagate_version = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split a corpus into train/ and test/ encoded corpora.
    Split(SplitArgs),
    /// Fit a model and write model.json, gamma.tsv, elbo_trace.csv and the
    /// encoded training corpus.
    Train(TrainArgs),
    /// Infer topic proportions and entropies for documents under a model.
    Infer(InferArgs),
    /// Score a model's topics by C_V coherence against a reference corpus.
    Coherence(CoherenceArgs),
    /// Entropy summary and histogram of per-document topic proportions.
    EntropyStats(EntropyStatsArgs),
    /// Split 80/20, pick K by cross-validated perplexity at lambda = 0, pick
    /// lambda by cross-validated C_V, then score the chosen model and an
    /// unpenalized baseline on the test part.
    ///
    /// Held-out documents are inferred with the model's lambda, but the
    /// perplexity bound leaves out the penalty term.
    Grid(GridArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Input: raw text (a directory with one document per file, or a file with
    /// one document per line) or an encoded corpus directory.
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads. 1 runs serially. Defaults to every core.
    #[arg(long)]
    pub threads: Option<usize>,
    /// `key = value` settings file, or a manifest.json from an earlier run.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    /// Keep terms found in at least this many documents.
    #[arg(long)]
    pub min_doc_freq: Option<usize>,
    /// Drop terms found in more than this fraction of documents.
    #[arg(long)]
    pub max_doc_fraction: Option<f64>,
    #[arg(long)]
    pub min_token_len: Option<usize>,
    #[arg(long)]
    pub keep_stopwords: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ReductionArg {
    Ordered,
    Unordered,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub em_max_iters: Option<usize>,
    #[arg(long)]
    pub em_rel_tol: Option<f64>,
    /// `ordered` is bitwise reproducible across thread counts.
    #[arg(long, value_enum)]
    pub reduction: Option<ReductionArg>,
    /// Abort if an accepted Newton step lowers a document's objective.
    #[arg(long)]
    pub check_ascent: bool,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub train_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    /// Number of topics.
    #[arg(long)]
    pub k: Option<usize>,
    /// Entropy penalty weight; 0 gives plain LDA.
    #[arg(long, allow_hyphen_values = true)]
    pub lambda: Option<f64>,
    /// Also write model.bin.
    #[arg(long)]
    pub binary: bool,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// model.json or model.bin.
    #[arg(long)]
    pub model: PathBuf,
    /// Vocabulary of the model. Defaults to vocab.tsv beside the model.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Penalty weight for inference. Defaults to the model's.
    #[arg(long, allow_hyphen_values = true)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CoherenceArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Top words scored per topic.
    #[arg(long)]
    pub top_n: Option<usize>,
    /// Sliding window size in tokens.
    #[arg(long)]
    pub window: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EntropyStatsArgs {
    /// `--input` is a gamma.tsv or theta.tsv table.
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ReferenceArg {
    Validation,
    Train,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    /// Candidate topic counts [default: 5,10,15,20,25,30].
    #[arg(long, value_delimiter = ',')]
    pub ks: Option<Vec<usize>>,
    /// Candidate penalty weights [default: 25,30,35,40,45].
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub lambdas: Option<Vec<f64>>,
    /// Cross-validation folds [default: 5].
    #[arg(long)]
    pub folds: Option<usize>,
    /// Corpus that supplies C_V window counts during lambda selection.
    #[arg(long, value_enum)]
    pub reference: Option<ReferenceArg>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long)]
    pub top_n: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
}

impl Common {
    pub fn apply(&self, s: &mut Settings) {
        if let Some(seed) = self.seed {
            s.train.seed = seed;
        }
    }
}

impl CorpusArgs {
    pub fn apply(&self, s: &mut Settings) {
        if let Some(v) = self.min_doc_freq {
            s.corpus.min_doc_freq = v;
        }
        if let Some(v) = self.max_doc_fraction {
            s.corpus.max_doc_fraction = v;
        }
        if let Some(v) = self.min_token_len {
            s.corpus.tokenizer.min_token_len = v;
        }
        if self.keep_stopwords {
            s.corpus.tokenizer.remove_stopwords = false;
        }
    }
}

impl FitArgs {
    pub fn apply(&self, s: &mut Settings) {
        if let Some(v) = self.em_max_iters {
            s.train.em_max_iters = v;
        }
        if let Some(v) = self.em_rel_tol {
            s.train.em_rel_tol = v;
        }
        if let Some(r) = self.reduction {
            s.train.reduction = match r {
                ReductionArg::Ordered => Reduction::Ordered,
                ReductionArg::Unordered => Reduction::Unordered,
            };
        }
        if self.check_ascent {
            s.train.check_ascent = true;
        }
    }
}

impl TrainArgs {
    pub fn apply(&self, s: &mut Settings) {
        self.common.apply(s);
        self.corpus.apply(s);
        self.fit.apply(s);
        if let Some(k) = self.k {
            s.train.k = k;
        }
        if let Some(l) = self.lambda {
            s.train.penalty = Penalty::Homogeneous(l);
        }
    }
}

impl GridArgs {
    pub fn apply(&self, s: &mut Settings) {
        self.common.apply(s);
        self.corpus.apply(s);
        self.fit.apply(s);
        if let Some(ks) = &self.ks {
            s.eval.ks = ks.clone();
        }
        if let Some(ls) = &self.lambdas {
            s.eval.lambdas = ls.clone();
        }
        if let Some(f) = self.folds {
            s.eval.folds = f;
        }
        if let Some(r) = self.reference {
            s.eval.reference = match r {
                ReferenceArg::Validation => CoherenceReference::Validation,
                ReferenceArg::Train => CoherenceReference::Train,
            };
        }
        if let Some(f) = self.train_fraction {
            s.eval.train_fraction = f;
        }
        if let Some(n) = self.top_n {
            s.eval.top_n = n;
        }
        if let Some(w) = self.window {
            s.eval.window_size = w;
        }
    }
}
