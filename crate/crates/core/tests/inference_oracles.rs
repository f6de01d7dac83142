use std::sync::Arc;

use cdtm_core::inference::{
    document_elbo, estep_document, fit, infer_document, mstep, penalized_elbo, perplexity,
};
use cdtm_core::synthetic::{generate, SyntheticSpec};
use cdtm_core::{Corpus, DocVariational, Document, ModelParams, Penalty, Reduction, TrainConfig, Vocabulary};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};

fn small_synthetic(seed: u64) -> Corpus {
    generate(&SyntheticSpec {
        num_docs: 20,
        vocab_size: 40,
        num_topics: 4,
        min_len: 30,
        max_len: 60,
        seed,
        ..SyntheticSpec::default()
    })
    .unwrap()
    .corpus
}

fn ln_beta_density(x: f64, a: f64, b: f64) -> f64 {
    use cdtm_core::specialfn::log_gamma;
    log_gamma(a + b).unwrap() - log_gamma(a).unwrap() - log_gamma(b).unwrap()
        + (a - 1.0) * x.ln()
        + (b - 1.0) * (1.0 - x).ln()
}

#[test]
fn single_word_elbo_matches_monte_carlo() {
    let vocab = Arc::new(Vocabulary::new(vec!["a".into(), "b".into()], vec![1, 1]).unwrap());
    let doc = Document::new("d", vec![1]);
    let model = ModelParams::new(2, 2, vec![0.3, 0.7, 0.8, 0.2], vec![0.6, 1.4]).unwrap();
    let state = DocVariational {
        gamma: vec![1.7, 2.3],
        phi: vec![0.35, 0.65],
    };
    let lambda = 3.0;
    let exact = document_elbo(&doc, &model, &state, lambda).unwrap();
    let corpus = Corpus::new(vocab, vec![doc]).unwrap();
    let summed = penalized_elbo(&corpus, &model, std::slice::from_ref(&state), &Penalty::Homogeneous(lambda)).unwrap();
    assert_eq!(exact, summed);

    // Sample (θ, z) from q and average the log-density ratio plus the penalty.
    let beta = Beta::new(1.7, 2.3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let n = 1_000_000;
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..n {
        let t: f64 = beta.sample(&mut rng);
        let theta = [t, 1.0 - t];
        let z = if rng.random::<f64>() < 0.35 { 0 } else { 1 };
        let log_p = ln_beta_density(t, 0.6, 1.4) + theta[z].ln() + model.eta_at(z, 1).ln();
        let log_q = ln_beta_density(t, 1.7, 2.3) + state.phi[z].ln();
        let penalty = lambda * theta.iter().map(|x| x * x.ln()).sum::<f64>();
        let v = log_p - log_q + penalty;
        sum += v;
        sum_sq += v * v;
    }
    let mean = sum / n as f64;
    let se = ((sum_sq / n as f64 - mean * mean) / n as f64).sqrt();
    assert!((exact.total - mean).abs() < 4.0 * se, "{} vs {mean} ± {se}", exact.total);
}

#[test]
fn lda_reduction_holds_for_every_document() {
    let corpus = small_synthetic(1);
    let config = TrainConfig::with_k(4);
    let fitted = fit(&corpus, &config).unwrap();
    for state in &fitted.per_doc {
        for ((g, z), c) in state.gamma.iter().zip(fitted.model.zeta()).zip(state.phi_colsums()) {
            assert!((g - (z + c)).abs() < 1e-5);
        }
        assert!(state.max_row_sum_error() < 1e-9);
    }
    assert!(fitted.model.max_row_sum_error() < 1e-9);
}

#[test]
fn elbo_is_monotone_without_penalty() {
    let corpus = small_synthetic(2);
    let fitted = fit(&corpus, &TrainConfig::with_k(4)).unwrap();
    for w in fitted.elbo_trace.windows(2) {
        assert!(w[1].total >= w[0].total - 1e-8 * w[0].total.abs());
    }
    for e in &fitted.elbo_trace {
        assert_eq!(e.penalty_term, 0.0);
    }
}

#[test]
fn penalized_steps_never_descend() {
    let corpus = small_synthetic(3);
    for lambda in [5.0, 35.0] {
        let config = TrainConfig {
            check_ascent: true,
            em_max_iters: 15,
            ..TrainConfig::with_k(4).with_lambda(lambda)
        };
        let fitted = fit(&corpus, &config).unwrap();
        for stats in &fitted.estep_trace {
            assert!(stats.min_gain >= 0.0);
        }
        for e in &fitted.elbo_trace {
            assert!(e.penalty_term <= 0.0);
        }
    }
}

#[test]
fn penalty_lowers_mean_entropy() {
    let corpus = small_synthetic(4);
    let mean_entropy = |lambda: f64| {
        let fitted = fit(&corpus, &TrainConfig::with_k(4).with_lambda(lambda)).unwrap();
        let total: f64 = fitted
            .per_doc
            .iter()
            .map(|s| -s.theta().iter().map(|t| t * t.ln()).sum::<f64>())
            .sum();
        total / fitted.per_doc.len() as f64
    };
    assert!(mean_entropy(35.0) < mean_entropy(0.0));
}

#[test]
fn one_iteration_runs_one_estep_and_one_mstep() {
    let corpus = small_synthetic(5);
    let config = TrainConfig {
        em_max_iters: 1,
        ..TrainConfig::with_k(4)
    };
    let fitted = fit(&corpus, &config).unwrap();
    assert_eq!(fitted.iterations_run, 1);
    assert_eq!(fitted.elbo_trace.len(), 1);
    assert!(!fitted.converged);
    // the returned model is the M-step applied to the returned states
    let eta = mstep(&corpus, &fitted.per_doc, &config).unwrap();
    assert_eq!(eta, fitted.model.eta());
}

#[test]
fn fits_are_deterministic() {
    let corpus = small_synthetic(6);
    let config = TrainConfig::with_k(4).with_lambda(5.0);
    let a = fit(&corpus, &config).unwrap();
    let b = fit(&corpus, &config).unwrap();
    assert_eq!(a.elbo_trace, b.elbo_trace);
    assert_eq!(a.per_doc, b.per_doc);
    assert_eq!(a.model, b.model);
}

#[test]
fn unordered_reduction_matches_up_to_rounding() {
    let corpus = small_synthetic(7);
    let ordered = TrainConfig {
        em_max_iters: 5,
        ..TrainConfig::with_k(4)
    };
    let unordered = TrainConfig {
        reduction: Reduction::Unordered,
        ..ordered.clone()
    };
    let a = fit(&corpus, &ordered).unwrap();
    let b = fit(&corpus, &unordered).unwrap();
    for (x, y) in a.model.eta().iter().zip(b.model.eta()) {
        assert!((x - y).abs() < 1e-9);
    }
}

#[test]
fn reinference_reproduces_training_gamma() {
    let corpus = small_synthetic(8);
    let config = TrainConfig::with_k(4).with_lambda(5.0);
    let fitted = fit(&corpus, &config).unwrap();
    assert!(fitted.converged);
    for (doc, state) in corpus.documents().iter().zip(&fitted.per_doc) {
        let again = infer_document(doc, &fitted.model, 5.0, &config).unwrap();
        for (a, b) in again.gamma.iter().zip(&state.gamma) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}

#[test]
fn uniform_topics_give_perplexity_near_vocabulary_size() {
    let v = 50;
    let terms = (0..v).map(|j| format!("t{j}")).collect();
    let vocab = Arc::new(Vocabulary::new(terms, vec![1; v]).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let docs = (0..3)
        .map(|d| Document::new(format!("d{d}"), (0..2000).map(|_| rng.random_range(0..v)).collect()))
        .collect();
    let corpus = Corpus::new(vocab, docs).unwrap();
    let model = ModelParams::new(2, v, vec![1.0 / v as f64; 2 * v], vec![0.5, 0.5]).unwrap();
    let p = perplexity(&corpus, &model, 0.0, &TrainConfig::with_k(2)).unwrap();
    assert!(p >= v as f64 * (1.0 - 1e-12));
    assert!((p - v as f64).abs() < 0.01 * v as f64, "{p}");
}

#[test]
fn longer_training_does_not_raise_training_perplexity() {
    let corpus = small_synthetic(11);
    let short = TrainConfig {
        em_max_iters: 2,
        ..TrainConfig::with_k(4)
    };
    let long = TrainConfig::with_k(4);
    let early = fit(&corpus, &short).unwrap();
    let late = fit(&corpus, &long).unwrap();
    let p_early = perplexity(&corpus, &early.model, 0.0, &long).unwrap();
    let p_late = perplexity(&corpus, &late.model, 0.0, &long).unwrap();
    assert!(p_late.is_finite() && p_late > 0.0);
    assert!(p_late <= p_early);
}

#[test]
fn per_document_weights() {
    let corpus = small_synthetic(12);
    let weights: Vec<f64> = (0..corpus.num_docs()).map(|d| if d % 2 == 0 { 0.0 } else { 20.0 }).collect();
    let config = TrainConfig {
        penalty: Penalty::PerDocument(weights),
        em_max_iters: 5,
        ..TrainConfig::with_k(4)
    };
    let fitted = fit(&corpus, &config).unwrap();
    let model = &fitted.model;
    for (d, (doc, state)) in corpus.documents().iter().zip(&fitted.per_doc).enumerate() {
        let e = document_elbo(doc, model, state, config.penalty.for_doc(d)).unwrap();
        if d % 2 == 0 {
            assert_eq!(e.penalty_term, 0.0);
        } else {
            assert!(e.penalty_term < 0.0);
        }
    }
    let short = TrainConfig {
        penalty: Penalty::PerDocument(vec![1.0; 3]),
        ..TrainConfig::with_k(4)
    };
    assert!(fit(&corpus, &short).is_err());
    let (_, stats) = estep_document(&corpus.documents()[0], model, 0.0, &config).unwrap();
    assert!(stats.iterations >= 1);
}
