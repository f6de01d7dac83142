//! Parameter containers, training configuration and model persistence.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};

/// Tolerance on row sums of stochastic matrices.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// Entropy penalty weights λ_d.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Penalty {
    /// One weight shared by every document. Zero gives plain LDA.
    Homogeneous(f64),
    /// One weight per training document, in corpus order.
    PerDocument(Vec<f64>),
}

impl Penalty {
    pub fn for_doc(&self, d: usize) -> f64 {
        match self {
            Penalty::Homogeneous(l) => *l,
            Penalty::PerDocument(ls) => ls[d],
        }
    }

    /// Weight used for documents outside the training corpus: the shared
    /// weight, or the mean of the per-document weights.
    pub fn held_out(&self) -> f64 {
        match self {
            Penalty::Homogeneous(l) => *l,
            Penalty::PerDocument(ls) if ls.is_empty() => 0.0,
            Penalty::PerDocument(ls) => ls.iter().sum::<f64>() / ls.len() as f64,
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Penalty::Homogeneous(l) => *l == 0.0,
            Penalty::PerDocument(ls) => ls.iter().all(|&l| l == 0.0),
        }
    }
}

/// How M-step sufficient statistics and ELBO terms are combined across workers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    /// Fixed document order; bitwise reproducible for any thread count.
    Ordered,
    /// Merge in whatever order workers finish.
    Unordered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub k: usize,
    pub penalty: Penalty,
    /// Dirichlet hyperparameter ζ; symmetric 1/K when unset. Held fixed.
    pub zeta: Option<Vec<f64>>,
    pub em_max_iters: usize,
    /// Stop EM when the relative change of the penalized ELBO drops below this.
    pub em_rel_tol: f64,
    pub estep_max_iters: usize,
    /// Mean absolute φ change below which the E-step may stop.
    pub estep_phi_tol: f64,
    /// Relative change of `L_[γ]` over one E-step iteration below which
    /// γ counts as settled even if a coordinate still moves by more than ε.
    pub estep_rel_tol: f64,
    /// Coordinate sweeps over γ per E-step iteration (stops early once a sweep
    /// moves no coordinate by more than `newton_tol`).
    pub max_sweeps: usize,
    pub newton_max_iters: usize,
    /// ε: a coordinate stops once the Newton step is smaller than this.
    pub newton_tol: f64,
    /// δ in the sufficient-decrease test, in (0, 0.5).
    pub armijo_delta: f64,
    /// ρ, the step shrink factor, in (0, 1).
    pub backtrack_rho: f64,
    pub max_backtracks: usize,
    pub gamma_floor: f64,
    pub eta_floor: f64,
    pub seed: u64,
    pub reduction: Reduction,
    /// Start each E-step from the previous iteration's γ instead of ζ + N/K.
    pub warm_start: bool,
    /// Fail with `Error::AscentViolation` if an accepted Newton step lowers
    /// the per-document objective.
    pub check_ascent: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k: 10,
            penalty: Penalty::Homogeneous(0.0),
            zeta: None,
            em_max_iters: 200,
            em_rel_tol: 1e-6,
            estep_max_iters: 100,
            estep_phi_tol: 1e-5,
            estep_rel_tol: 1e-6,
            max_sweeps: 20,
            newton_max_iters: 50,
            newton_tol: 1e-5,
            armijo_delta: 0.01,
            backtrack_rho: 0.5,
            max_backtracks: 60,
            gamma_floor: 1e-8,
            eta_floor: 1e-12,
            seed: 0,
            reduction: Reduction::Ordered,
            warm_start: false,
            check_ascent: false,
        }
    }
}

impl TrainConfig {
    pub fn with_k(k: usize) -> Self {
        Self {
            k,
            ..Self::default()
        }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.penalty = Penalty::Homogeneous(lambda);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.k < 2 {
            return fail(format!("K must be at least 2, got {}", self.k));
        }
        let lambdas: &[f64] = match &self.penalty {
            Penalty::Homogeneous(l) => std::slice::from_ref(l),
            Penalty::PerDocument(ls) => ls,
        };
        if let Some(l) = lambdas.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
            return fail(format!("penalty weight must be finite and >= 0, got {l}"));
        }
        if let Some(z) = &self.zeta {
            if z.len() != self.k {
                return fail(format!("zeta has {} entries but K = {}", z.len(), self.k));
            }
            if z.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return fail("zeta entries must be positive".into());
            }
        }
        if !(self.armijo_delta > 0.0 && self.armijo_delta < 0.5) {
            return fail(format!("armijo_delta must be in (0, 0.5), got {}", self.armijo_delta));
        }
        if !(self.backtrack_rho > 0.0 && self.backtrack_rho < 1.0) {
            return fail(format!("backtrack_rho must be in (0, 1), got {}", self.backtrack_rho));
        }
        for (name, v) in [
            ("em_rel_tol", self.em_rel_tol),
            ("estep_phi_tol", self.estep_phi_tol),
            ("estep_rel_tol", self.estep_rel_tol),
            ("newton_tol", self.newton_tol),
            ("gamma_floor", self.gamma_floor),
            ("eta_floor", self.eta_floor),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return fail(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [
            ("em_max_iters", self.em_max_iters),
            ("estep_max_iters", self.estep_max_iters),
            ("max_sweeps", self.max_sweeps),
            ("newton_max_iters", self.newton_max_iters),
            ("max_backtracks", self.max_backtracks),
        ] {
            if v == 0 {
                return fail(format!("{name} must be at least 1"));
            }
        }
        Ok(())
    }

    /// Checks per-document weights against the corpus size.
    pub fn validate_for(&self, corpus: &Corpus) -> Result<()> {
        self.validate()?;
        if let Penalty::PerDocument(ls) = &self.penalty {
            if ls.len() != corpus.num_docs() {
                return Err(Error::Config(format!(
                    "{} per-document penalty weights for {} documents",
                    ls.len(),
                    corpus.num_docs()
                )));
            }
        }
        Ok(())
    }

    pub fn zeta_or_default(&self) -> Vec<f64> {
        self.zeta
            .clone()
            .unwrap_or_else(|| vec![1.0 / self.k as f64; self.k])
    }
}

/// Topic-word distributions η (K×V, row-stochastic, row-major) and the
/// Dirichlet hyperparameter ζ.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    k: usize,
    v: usize,
    eta: Vec<f64>,
    zeta: Vec<f64>,
}

impl ModelParams {
    pub fn new(k: usize, v: usize, eta: Vec<f64>, zeta: Vec<f64>) -> Result<Self> {
        if k == 0 || v == 0 {
            return Err(Error::Input(format!("bad model shape K={k}, V={v}")));
        }
        if eta.len() != k * v || zeta.len() != k {
            return Err(Error::Input(format!(
                "model arrays do not match K={k}, V={v}: eta {} zeta {}",
                eta.len(),
                zeta.len()
            )));
        }
        if zeta.iter().any(|z| !(z.is_finite() && *z > 0.0)) {
            return Err(Error::Input("zeta entries must be positive".into()));
        }
        for (i, row) in eta.chunks(v).enumerate() {
            if row.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(Error::Input(format!("topic {i} has a negative or non-finite entry")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::Input(format!("topic {i} sums to {s}, not 1")));
            }
        }
        Ok(Self { k, v, eta, zeta })
    }

    pub fn num_topics(&self) -> usize {
        self.k
    }

    pub fn vocab_size(&self) -> usize {
        self.v
    }

    pub fn zeta(&self) -> &[f64] {
        &self.zeta
    }

    pub fn eta(&self) -> &[f64] {
        &self.eta
    }

    pub fn topic(&self, i: usize) -> &[f64] {
        &self.eta[i * self.v..(i + 1) * self.v]
    }

    #[inline]
    pub fn eta_at(&self, topic: usize, word: usize) -> f64 {
        self.eta[topic * self.v + word]
    }

    pub(crate) fn set_eta(&mut self, eta: Vec<f64>) {
        debug_assert_eq!(eta.len(), self.k * self.v);
        self.eta = eta;
    }

    /// Largest deviation of a topic row sum from 1.
    pub fn max_row_sum_error(&self) -> f64 {
        self.eta
            .chunks(self.v)
            .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Initial parameters: ζ from the config (symmetric 1/K by default) and each
/// topic a randomly perturbed copy of the corpus word frequencies.
pub fn init_model(corpus: &Corpus, config: &TrainConfig) -> Result<ModelParams> {
    config.validate()?;
    let (k, v) = (config.k, corpus.vocab_size());
    if v < k {
        return Err(Error::Config(format!("vocabulary size {v} is smaller than K = {k}")));
    }
    let counts = corpus.word_counts();
    let total = corpus.total_tokens() as f64;
    let base: Vec<f64> = counts
        .iter()
        .map(|&c| c as f64 / total + 1.0 / v as f64)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut eta = Vec::with_capacity(k * v);
    for _ in 0..k {
        let row: Vec<f64> = base
            .iter()
            .map(|&b| b * (1.0 - rng.random::<f64>()))
            .collect();
        let s: f64 = row.iter().sum();
        eta.extend(row.into_iter().map(|x| x / s));
    }
    ModelParams::new(k, v, eta, config.zeta_or_default())
}

/// Per-document variational state: γ (Dirichlet) and φ (N_d×K, row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct DocVariational {
    pub gamma: Vec<f64>,
    pub phi: Vec<f64>,
}

impl DocVariational {
    pub fn num_topics(&self) -> usize {
        self.gamma.len()
    }

    pub fn phi_row(&self, n: usize) -> &[f64] {
        let k = self.gamma.len();
        &self.phi[n * k..(n + 1) * k]
    }

    /// Σ_n φ_ni for every topic i.
    pub fn phi_colsums(&self) -> Vec<f64> {
        let k = self.gamma.len();
        let mut sums = vec![0.0; k];
        for row in self.phi.chunks(k) {
            for (s, p) in sums.iter_mut().zip(row) {
                *s += p;
            }
        }
        sums
    }

    /// γ normalized to the simplex: the point estimate of θ.
    pub fn theta(&self) -> Vec<f64> {
        let s: f64 = self.gamma.iter().sum();
        self.gamma.iter().map(|g| g / s).collect()
    }

    pub fn max_row_sum_error(&self) -> f64 {
        self.phi
            .chunks(self.gamma.len())
            .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// γ_i = ζ_i + N/K and φ_ni = 1/K.
pub fn init_doc_variational(doc_len: usize, zeta: &[f64]) -> DocVariational {
    let k = zeta.len();
    let share = doc_len as f64 / k as f64;
    DocVariational {
        gamma: zeta.iter().map(|z| z + share).collect(),
        phi: vec![1.0 / k as f64; doc_len * k],
    }
}

const FORMAT_VERSION: u32 = 1;
const BINARY_MAGIC: &[u8; 8] = b"CDTM0001";

/// A fitted model as stored on disk, with the penalty weight it was trained
/// under.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredModel {
    pub model: ModelParams,
    pub lambda: f64,
}

#[derive(Serialize, Deserialize)]
struct ModelJson {
    version: u32,
    #[serde(rename = "K")]
    k: usize,
    #[serde(rename = "V")]
    v: usize,
    zeta: Vec<f64>,
    lambda: f64,
    eta: Vec<Vec<f64>>,
}

impl StoredModel {
    pub fn to_json_string(&self) -> Result<String> {
        let m = &self.model;
        let doc = ModelJson {
            version: FORMAT_VERSION,
            k: m.k,
            v: m.v,
            zeta: m.zeta.clone(),
            lambda: self.lambda,
            eta: m.eta.chunks(m.v).map(<[f64]>::to_vec).collect(),
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let doc: ModelJson = serde_json::from_str(s)?;
        if doc.version != FORMAT_VERSION {
            return Err(Error::Input(format!("unsupported model version {}", doc.version)));
        }
        if doc.eta.len() != doc.k || doc.eta.iter().any(|r| r.len() != doc.v) {
            return Err(Error::Input("eta does not have K rows of length V".into()));
        }
        let eta = doc.eta.into_iter().flatten().collect();
        Ok(Self {
            model: ModelParams::new(doc.k, doc.v, eta, doc.zeta)?,
            lambda: doc.lambda,
        })
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json_string()?)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        Self::from_json_str(&fs::read_to_string(path)?)
    }

    /// `CDTM0001`, then little-endian u64 K, u64 V, f64 λ, K×f64 ζ and
    /// K·V×f64 η in row-major order.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let m = &self.model;
        let mut out = BufWriter::new(fs::File::create(path)?);
        out.write_all(BINARY_MAGIC)?;
        out.write_all(&(m.k as u64).to_le_bytes())?;
        out.write_all(&(m.v as u64).to_le_bytes())?;
        out.write_all(&self.lambda.to_le_bytes())?;
        for x in m.zeta.iter().chain(&m.eta) {
            out.write_all(&x.to_le_bytes())?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() < 32 || &bytes[..8] != BINARY_MAGIC {
            return Err(Error::Input("not a CDTM0001 model file".into()));
        }
        let word = |i: usize| -> [u8; 8] { bytes[i..i + 8].try_into().unwrap() };
        let k = u64::from_le_bytes(word(8)) as usize;
        let v = u64::from_le_bytes(word(16)) as usize;
        let lambda = f64::from_le_bytes(word(24));
        let expected = k
            .checked_mul(v)
            .and_then(|kv| kv.checked_add(k))
            .and_then(|n| n.checked_mul(8))
            .and_then(|n| n.checked_add(32));
        if expected != Some(bytes.len()) {
            return Err(Error::Input(format!(
                "binary model size {} does not match K={k}, V={v}",
                bytes.len()
            )));
        }
        let floats: Vec<f64> = bytes[32..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let (zeta, eta) = floats.split_at(k);
        Ok(Self {
            model: ModelParams::new(k, v, eta.to_vec(), zeta.to_vec())?,
            lambda,
        })
    }

    /// Reads either format, chosen by the magic bytes.
    pub fn read(path: &Path) -> Result<Self> {
        let mut head = [0u8; 8];
        let n = fs::File::open(path)?.read(&mut head)?;
        if n == 8 && &head == BINARY_MAGIC {
            Self::read_binary(path)
        } else {
            Self::read_json(path)
        }
    }
}
