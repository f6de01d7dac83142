//! Acceptance criteria AC1–AC9. Prints one `[PASS]`/`[FAIL]` line per
//! criterion and exits nonzero if any fails.

use std::fs;
use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::Instant;

use cdtm_core::corpus::split_corpus;
use cdtm_core::eval::{coherence_report, entropy_stats, grid_select, GridStage};
use cdtm_core::inference::{elbo_gamma_part, fit, grad_gamma, hess_gamma_diag};
use cdtm_core::specialfn::expected_neg_entropy;
use cdtm_core::synthetic::{generate, SyntheticSpec};
use cdtm_core::{Corpus, Document, FitResult, GridOptions, ModelParams, TrainConfig, Vocabulary, WordId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Worst normalization and range violations seen by any criterion.
#[derive(Default)]
struct Invariants {
    max_phi_row_err: f64,
    max_eta_row_err: f64,
    entropies: usize,
    bad_entropies: usize,
    cvs: usize,
    bad_cvs: usize,
}

impl Invariants {
    fn fitted(&mut self, f: &FitResult) {
        self.max_eta_row_err = self.max_eta_row_err.max(f.model.max_row_sum_error());
        for s in &f.per_doc {
            self.max_phi_row_err = self.max_phi_row_err.max(s.max_row_sum_error());
        }
    }

    fn entropy(&mut self, h: f64, k: usize) {
        self.entropies += 1;
        if !(0.0..=(k as f64).ln()).contains(&h) {
            self.bad_entropies += 1;
        }
    }

    fn cv(&mut self, cv: f64) {
        self.cvs += 1;
        if !(-1.0..=1.0).contains(&cv) {
            self.bad_cvs += 1;
        }
    }
}

fn synthetic(seed: u64) -> Corpus {
    generate(&SyntheticSpec { seed, ..SyntheticSpec::default() }).unwrap().corpus
}

fn config(lambda: f64, seed: u64) -> TrainConfig {
    TrainConfig {
        check_ascent: true,
        seed,
        ..TrainConfig::with_k(5).with_lambda(lambda)
    }
}

fn mean_entropy(f: &FitResult, inv: &mut Invariants) -> f64 {
    let gammas: Vec<Vec<f64>> = f.per_doc.iter().map(|s| s.gamma.clone()).collect();
    let stats = entropy_stats(&gammas).unwrap();
    for &h in &stats.entropies {
        inv.entropy(h, 5);
    }
    stats.mean
}

fn ac1(lda: &FitResult, secs: f64) -> Outcome {
    let zeta = lda.model.zeta();
    let mut worst = 0.0f64;
    for s in &lda.per_doc {
        for (i, c) in s.phi_colsums().iter().enumerate() {
            worst = worst.max((s.gamma[i] - zeta[i] - c).abs());
        }
    }
    outcome(
        lda.converged && worst <= 1e-5 && secs < 60.0,
        format!(
            "LDA reduction: max |gamma - zeta - sum phi| = {worst:.2e} (tol 1e-5), converged={}, {} EM iterations, {secs:.1} s",
            lda.converged, lda.iterations_run
        ),
    )
}

fn fd5(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (-f(x + 2.0 * h) + 8.0 * f(x + h) - 8.0 * f(x - h) + f(x - 2.0 * h)) / (12.0 * h)
}

fn ac2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst_g, mut worst_h) = (0.0f64, 0.0f64);
    let mut checked = 0;
    for _ in 0..1000 {
        let k = rng.random_range(2..=10);
        let gamma: Vec<f64> = (0..k).map(|_| (rng.random_range(0.05f64.ln()..50f64.ln())).exp()).collect();
        let zeta: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..2.0)).collect();
        let colsums: Vec<f64> = (0..k)
            .map(|_| if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.0..80.0) })
            .collect();
        let lambda = if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.0..50.0) };
        for i in 0..k {
            let at = |x: f64| {
                let mut g = gamma.clone();
                g[i] = x;
                g
            };
            let h = 1e-3 * gamma[i];
            let fd_g = fd5(|x| elbo_gamma_part(&at(x), &zeta, &colsums, lambda).unwrap(), gamma[i], h);
            let g = grad_gamma(&gamma, &zeta, &colsums, lambda, i).unwrap();
            worst_g = worst_g.max((g - fd_g).abs() / fd_g.abs());
            let fd_h = fd5(|x| grad_gamma(&at(x), &zeta, &colsums, lambda, i).unwrap(), gamma[i], h);
            let hh = hess_gamma_diag(&gamma, &zeta, &colsums, lambda, i).unwrap();
            worst_h = worst_h.max((hh - fd_h).abs() / fd_h.abs());
            checked += 1;
        }
    }
    outcome(
        worst_g < 1e-5 && worst_h < 1e-4,
        format!(
            "derivatives over 1000 states ({checked} coordinates): max rel err gradient {worst_g:.2e} (tol 1e-5), second derivative {worst_h:.2e} (tol 1e-4), {:.1} s",
            start.elapsed().as_secs_f64()
        ),
    )
}

fn ac3() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 1_000_000;
    let mut worst_z = 0.0f64;
    for j in 0..20 {
        let k = [2, 5, 10][j % 3];
        let gamma: Vec<f64> = (0..k).map(|_| (rng.random_range(0.1f64.ln()..20f64.ln())).exp()).collect();
        let samplers: Vec<Gamma<f64>> = gamma.iter().map(|&a| Gamma::new(a, 1.0).unwrap()).collect();
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        let mut draw = vec![0.0; k];
        for _ in 0..n {
            for (d, s) in draw.iter_mut().zip(&samplers) {
                *d = s.sample(&mut rng);
            }
            let total: f64 = draw.iter().sum();
            let v: f64 = draw
                .iter()
                .map(|&x| {
                    let t = x / total;
                    if t > 0.0 { t * t.ln() } else { 0.0 }
                })
                .sum();
            sum += v;
            sum_sq += v * v;
        }
        let mean = sum / n as f64;
        let se = ((sum_sq / n as f64 - mean * mean) / (n - 1) as f64).sqrt();
        let exact = expected_neg_entropy(&gamma).unwrap();
        worst_z = worst_z.max((exact - mean).abs() / se);
    }
    outcome(
        worst_z < 3.0,
        format!(
            "E[sum theta ln theta] vs Monte Carlo, 20 Dirichlets x 1e6 draws: worst |diff|/SE = {worst_z:.2} (tol 3), {:.1} s",
            start.elapsed().as_secs_f64()
        ),
    )
}

fn ac4(lda: &FitResult, penalized: &[(f64, Result<FitResult, cdtm_core::Error>)]) -> Outcome {
    let mut worst_drop = 0.0f64;
    for w in lda.elbo_trace.windows(2) {
        worst_drop = worst_drop.max((w[0].total - w[1].total) / w[0].total.abs());
    }
    let mut pass = worst_drop <= 1e-8;
    let mut parts = vec![format!("lambda=0 worst relative ELBO drop {worst_drop:.2e} (slack 1e-8)")];
    for (lambda, result) in penalized {
        match result {
            Ok(f) => {
                let steps: usize = f.estep_trace.iter().map(|s| s.newton_steps).sum();
                let min_gain = f.estep_trace.iter().map(|s| s.min_gain).fold(f64::INFINITY, f64::min);
                pass &= min_gain >= 0.0;
                parts.push(format!("lambda={lambda}: {steps} accepted steps, min gain {min_gain:.2e}"));
            }
            Err(e) => {
                pass = false;
                parts.push(format!("lambda={lambda}: {e}"));
            }
        }
    }
    outcome(pass, format!("monotonicity: {}", parts.join("; ")))
}

fn ac5(lda: &FitResult, concentrated: &FitResult, inv: &mut Invariants) -> Outcome {
    let h0 = mean_entropy(lda, inv);
    let h35 = mean_entropy(concentrated, inv);
    outcome(
        h35 < h0,
        format!("mean document-topic entropy lambda=35 {h35:.4} < lambda=0 {h0:.4}"),
    )
}

fn ac6(corpus: &Corpus, inv: &mut Invariants) -> Outcome {
    let start = Instant::now();
    let lambdas = [25.0, 30.0, 35.0, 40.0, 45.0];
    let mut wins = 0;
    let mut parts = Vec::new();
    for seed in 1..=5u64 {
        let (train, test) = split_corpus(corpus, 0.8, seed).unwrap();
        let base = config(0.0, seed);
        let options = GridOptions { folds: 2, seed, ..GridOptions::default() };
        let grid = grid_select(&train, &[5], &lambdas, &base, &options).unwrap();
        for r in grid.rows.iter().filter(|r| r.stage == GridStage::Penalty) {
            inv.cv(r.value);
        }
        let mut test_cv = |lambda: f64| {
            let fitted = fit(&train, &config(lambda, seed)).unwrap();
            inv.fitted(&fitted);
            let report = coherence_report(&fitted.model, &test, 20, 110).unwrap();
            for &cv in &report.per_topic {
                inv.cv(cv);
            }
            report.mean_cv
        };
        let selected = test_cv(grid.best_lambda);
        let lda = test_cv(0.0);
        if selected >= lda {
            wins += 1;
        }
        parts.push(format!("seed {seed}: lambda={} {selected:.10} vs {lda:.10}", grid.best_lambda));
    }
    outcome(
        wins >= 4,
        format!(
            "test C_V at selected lambda >= lambda=0 in {wins}/5 seeds (need 4) [{}], {:.0} s",
            parts.join("; "),
            start.elapsed().as_secs_f64()
        ),
    )
}

/// Independent C_V: enumerate windows as token slices, estimate NPMI from
/// boolean presence, then average cosines against the summed vector.
fn brute_force_cv(docs: &[Vec<WordId>], words: &[WordId], window: usize) -> f64 {
    let mut windows: Vec<&[WordId]> = Vec::new();
    for d in docs {
        if d.len() <= window {
            windows.push(d);
        } else {
            windows.extend(d.windows(window));
        }
    }
    let total = windows.len() as f64;
    let p = |a: WordId, b: WordId| {
        windows.iter().filter(|w| w.contains(&a) && w.contains(&b)).count() as f64 / total
    };
    let eps = 1e-12;
    let npmi = |a: WordId, b: WordId| {
        let (pa, pb, pab) = (p(a, a), p(b, b), p(a, b));
        let denom = -(pab + eps).ln();
        if denom <= 0.0 {
            return 1.0;
        }
        (((pab + eps).ln() - (pa * pb + eps).ln()) / denom).clamp(-1.0, 1.0)
    };
    let vectors: Vec<Vec<f64>> = words.iter().map(|&a| words.iter().map(|&b| npmi(a, b)).collect()).collect();
    let sum: Vec<f64> = (0..words.len()).map(|j| vectors.iter().map(|v| v[j]).sum()).collect();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let cosines: Vec<f64> = vectors
        .iter()
        .map(|v| {
            let d = norm(v) * norm(&sum);
            if d == 0.0 { 0.0 } else { v.iter().zip(&sum).map(|(a, b)| a * b).sum::<f64>() / d }
        })
        .collect();
    cosines.iter().sum::<f64>() / cosines.len() as f64
}

fn ac7(inv: &mut Invariants) -> Outcome {
    let docs: Vec<Vec<WordId>> = vec![
        vec![0, 1, 2, 0, 3, 4, 1, 5],
        vec![5, 6, 7, 8, 9, 6, 5],
        vec![0, 2, 4, 6, 8, 1, 3],
        vec![9, 8, 7, 0, 1, 2, 3, 4, 5, 6],
        vec![3, 3, 4, 9, 2, 7, 1],
        vec![6, 7, 8, 0, 9, 2],
    ];
    let tokens: usize = docs.iter().map(Vec::len).sum();
    let vocab = Arc::new(Vocabulary::new((0..10).map(|i| format!("t{i}")).collect(), vec![1; 10]).unwrap());
    let corpus = Corpus::new(
        vocab,
        docs.iter().enumerate().map(|(i, d)| Document::new(format!("d{i}"), d.clone())).collect(),
    )
    .unwrap();
    let mut eta = vec![0.0; 20];
    for (j, w) in [0.3, 0.25, 0.2, 0.15, 0.1].iter().enumerate() {
        eta[j] = *w;
        eta[10 + 5 + j] = *w;
    }
    let model = ModelParams::new(2, 10, eta, vec![0.5, 0.5]).unwrap();
    let mut worst = 0.0f64;
    for window in [2, 3, 5, 110] {
        let report = coherence_report(&model, &corpus, 5, window).unwrap();
        let mut mean = 0.0;
        for (t, &cv) in report.topics.iter().zip(&report.per_topic) {
            inv.cv(cv);
            let oracle = brute_force_cv(&docs, &t.words, window);
            worst = worst.max((cv - oracle).abs());
            mean += oracle / 2.0;
        }
        worst = worst.max((report.mean_cv - mean).abs());
    }
    outcome(
        tokens <= 50 && worst <= 1e-10,
        format!("C_V vs brute force on a {tokens}-token fixture, windows 2/3/5/110: max |diff| = {worst:.2e} (tol 1e-10)"),
    )
}

fn ac8(inv: &Invariants) -> Outcome {
    outcome(
        inv.max_phi_row_err <= 1e-9 && inv.max_eta_row_err <= 1e-9 && inv.bad_entropies == 0 && inv.bad_cvs == 0,
        format!(
            "max phi row error {:.2e}, max eta row error {:.2e} (tol 1e-9); {}/{} entropies outside [0, ln K]; {}/{} C_V outside [-1, 1]",
            inv.max_phi_row_err, inv.max_eta_row_err, inv.bad_entropies, inv.entropies, inv.bad_cvs, inv.cvs
        ),
    )
}

fn ac9(corpus: &Corpus) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("corpus");
    fs::create_dir_all(&input).unwrap();
    corpus.vocabulary().write_tsv(&input.join("vocab.tsv")).unwrap();
    corpus.write_encoded(&input.join("corpus.tsv")).unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_cdtm"))
            .args(["train", "--k", "5", "--lambda", "35", "--seed", "11", "--threads", "1", "--binary"])
            .arg("--input")
            .arg(&input)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        (status.status.success(), out)
    };
    let (ok_a, a) = run("a");
    let (ok_b, b) = run("b");
    let same = |f: &str| match (fs::read(a.join(f)), fs::read(b.join(f))) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    };
    let files = ["model.json", "model.bin", "gamma.tsv"];
    let identical: Vec<bool> = files.iter().map(|f| same(f)).collect();
    outcome(
        ok_a && ok_b && identical.iter().all(|&x| x),
        format!(
            "two `train --threads 1` runs: {}",
            files
                .iter()
                .zip(&identical)
                .map(|(f, &i)| format!("{f} {}", if i { "identical" } else { "DIFFERS" }))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    )
}

fn main() -> ExitCode {
    let mut inv = Invariants::default();
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let corpus = synthetic(0);

    let start = Instant::now();
    let lda = fit(&corpus, &config(0.0, 0)).expect("lambda=0 fit");
    let lda_secs = start.elapsed().as_secs_f64();
    inv.fitted(&lda);
    let penalized: Vec<(f64, Result<FitResult, cdtm_core::Error>)> =
        [5.0, 35.0].into_iter().map(|l| (l, fit(&corpus, &config(l, 0)))).collect();
    for (_, f) in &penalized {
        if let Ok(f) = f {
            inv.fitted(f);
        }
    }

    results.push(("AC1", ac1(&lda, lda_secs)));
    results.push(("AC2", ac2()));
    results.push(("AC3", ac3()));
    results.push(("AC4", ac4(&lda, &penalized)));
    let ac5_outcome = match &penalized[1].1 {
        Ok(concentrated) => ac5(&lda, concentrated, &mut inv),
        Err(e) => outcome(false, format!("lambda=35 fit failed: {e}")),
    };
    results.push(("AC5", ac5_outcome));
    results.push(("AC6", ac6(&corpus, &mut inv)));
    results.push(("AC7", ac7(&mut inv)));
    results.push(("AC8", ac8(&inv)));
    results.push(("AC9", ac9(&corpus)));

    let mut failed = 0;
    for (name, o) in &results {
        println!("[{}] {name} {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failed += 1;
        }
    }
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
