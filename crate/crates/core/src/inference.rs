//! Penalized variational EM.
//!
//! Per document, the E-step alternates the closed-form φ update with
//! coordinate-wise Newton solves on γ. Each Newton step is damped by
//! backtracking until the Armijo sufficient-decrease test on `-L_[γ]` holds.
//! The M-step re-estimates η from the expected word-topic counts. With a zero
//! penalty weight everything reduces to LDA.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::corpus::{Corpus, Document, WordId};
use crate::error::{Error, Result};
use crate::model::{init_doc_variational, init_model, DocVariational, ModelParams, Penalty, Reduction, TrainConfig};
use crate::specialfn::{
    digamma_unchecked as psi, expected_log_theta_into, expected_neg_entropy_unchecked,
    log_gamma_unchecked as ln_gamma, tetragamma_unchecked as psi2, trigamma_unchecked as psi1, MIN_GAMMA,
};

/// |L″| below this is treated as zero curvature.
const MIN_CURVATURE: f64 = 1e-12;

/// The penalized ELBO split into its three parts.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ElboBreakdown {
    /// E_q[ln p(θ, Z, W | ζ, η)]
    pub log_likelihood_terms: f64,
    /// -E_q[ln q(θ, Z)]
    pub entropy_of_q: f64,
    /// E_q[-λ H(θ)]
    pub penalty_term: f64,
    pub total: f64,
}

impl ElboBreakdown {
    fn new(log_likelihood_terms: f64, entropy_of_q: f64, penalty_term: f64) -> Self {
        Self {
            log_likelihood_terms,
            entropy_of_q,
            penalty_term,
            total: log_likelihood_terms + entropy_of_q + penalty_term,
        }
    }

    /// The ordinary (unpenalized) evidence lower bound.
    pub fn bound(&self) -> f64 {
        self.log_likelihood_terms + self.entropy_of_q
    }
}

impl std::ops::Add for ElboBreakdown {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(
            self.log_likelihood_terms + o.log_likelihood_terms,
            self.entropy_of_q + o.entropy_of_q,
            self.penalty_term + o.penalty_term,
        )
    }
}

/// Bookkeeping from one or more document E-steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EStepStats {
    pub iterations: usize,
    pub converged: bool,
    /// Accepted Newton steps.
    pub newton_steps: usize,
    /// Line searches that ran out of backtracks.
    pub stalls: usize,
    /// Smallest objective increase over accepted steps (∞ if none).
    pub min_gain: f64,
}

impl Default for EStepStats {
    fn default() -> Self {
        Self {
            iterations: 0,
            converged: true,
            newton_steps: 0,
            stalls: 0,
            min_gain: f64::INFINITY,
        }
    }
}

impl EStepStats {
    fn merge(&mut self, o: &EStepStats) {
        self.iterations = self.iterations.max(o.iterations);
        self.converged &= o.converged;
        self.newton_steps += o.newton_steps;
        self.stalls += o.stalls;
        self.min_gain = self.min_gain.min(o.min_gain);
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: ModelParams,
    /// Variational state of every training document from the last E-step.
    pub per_doc: Vec<DocVariational>,
    pub elbo_trace: Vec<ElboBreakdown>,
    /// E-step statistics per EM iteration, summed over documents.
    pub estep_trace: Vec<EStepStats>,
    pub iterations_run: usize,
    pub converged: bool,
}

fn check_gamma(gamma: &[f64], zeta: &[f64], colsums: &[f64], lambda: f64) -> Result<()> {
    if gamma.len() != zeta.len() || gamma.len() != colsums.len() || gamma.len() < 2 {
        return Err(Error::Input(format!(
            "gamma/zeta/colsum lengths {}/{}/{} (need equal and >= 2)",
            gamma.len(),
            zeta.len(),
            colsums.len()
        )));
    }
    if let Some(&g) = gamma.iter().find(|g| !(g.is_finite() && **g >= MIN_GAMMA)) {
        return Err(Error::Domain { func: "gamma", value: g });
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::Domain { func: "lambda", value: lambda });
    }
    Ok(())
}

/// The part of the per-document ELBO that depends on γ:
///
/// `Σ_i (Ψ(γ_i) - Ψ(Σγ))(ζ_i + Σ_n φ_ni - γ_i) - ln Γ(Σγ) + Σ_i ln Γ(γ_i)
///  + λ (Σ_i γ_i Ψ(γ_i)/Σγ - Ψ(Σγ) + (K - 1)/Σγ)`
pub fn elbo_gamma_part(gamma: &[f64], zeta: &[f64], phi_colsums: &[f64], lambda: f64) -> Result<f64> {
    check_gamma(gamma, zeta, phi_colsums, lambda)?;
    let k = gamma.len() as f64;
    let s: f64 = gamma.iter().sum();
    let psi_s = psi(s);
    let mut value = -ln_gamma(s);
    let mut weighted = 0.0;
    for ((&g, &z), &c) in gamma.iter().zip(zeta).zip(phi_colsums) {
        let pg = psi(g);
        value += (pg - psi_s) * (z + c - g) + ln_gamma(g);
        weighted += g * pg;
    }
    Ok(value + lambda * (weighted / s - psi_s + (k - 1.0) / s))
}

/// `∂L_[γ]/∂γ_i`.
pub fn grad_gamma(gamma: &[f64], zeta: &[f64], phi_colsums: &[f64], lambda: f64, i: usize) -> Result<f64> {
    check_gamma(gamma, zeta, phi_colsums, lambda)?;
    Ok(CoordinateView::new(gamma, zeta, phi_colsums, lambda, i).grad(gamma[i]))
}

/// `∂²L_[γ]/∂γ_i²`.
pub fn hess_gamma_diag(gamma: &[f64], zeta: &[f64], phi_colsums: &[f64], lambda: f64, i: usize) -> Result<f64> {
    check_gamma(gamma, zeta, phi_colsums, lambda)?;
    Ok(CoordinateView::new(gamma, zeta, phi_colsums, lambda, i).hess(gamma[i]))
}

/// `L_[γ]` as a function of the single coordinate `γ_i = u`, the other
/// coordinates held fixed. Sums over the fixed coordinates are cached so every
/// evaluation is O(1).
#[derive(Debug, Clone, Copy)]
struct CoordinateView {
    k: f64,
    lambda: f64,
    /// ζ_i + Σ_n φ_ni
    target: f64,
    /// Σ_l (ζ_l + Σ_n φ_nl)
    target_total: f64,
    /// Σ_{l≠i} γ_l
    rest_sum: f64,
    /// Σ_{l≠i} γ_l Ψ(γ_l)
    rest_weighted: f64,
    /// Σ_{l≠i} (ζ_l + Σ_n φ_nl - γ_l)
    rest_residual: f64,
}

impl CoordinateView {
    fn new(gamma: &[f64], zeta: &[f64], colsums: &[f64], lambda: f64, i: usize) -> Self {
        let mut view = Self {
            k: gamma.len() as f64,
            lambda,
            target: zeta[i] + colsums[i],
            target_total: 0.0,
            rest_sum: 0.0,
            rest_weighted: 0.0,
            rest_residual: 0.0,
        };
        for (l, ((&g, &z), &c)) in gamma.iter().zip(zeta).zip(colsums).enumerate() {
            view.target_total += z + c;
            if l != i {
                view.rest_sum += g;
                view.rest_weighted += g * psi(g);
                view.rest_residual += z + c - g;
            }
        }
        view
    }

    /// `L_[γ](u)` up to terms that do not depend on u, together with the
    /// sum of absolute values of its parts (a scale for rounding error).
    fn value(&self, u: f64) -> (f64, f64) {
        let s = self.rest_sum + u;
        let (psi_s, psi_u) = (psi(s), psi(u));
        let parts = [
            -psi_s * self.rest_residual,
            (psi_u - psi_s) * (self.target - u),
            -ln_gamma(s),
            ln_gamma(u),
            self.lambda * ((self.rest_weighted + u * psi_u) / s - psi_s + (self.k - 1.0) / s),
        ];
        let scale = parts.iter().map(|p| p.abs()).sum::<f64>()
            + self.lambda * (psi_s.abs() + (self.rest_weighted + u * psi_u).abs() / s);
        (parts.iter().sum(), scale)
    }

    fn grad(&self, u: f64) -> f64 {
        let s = self.rest_sum + u;
        let residual_total = self.target_total - s;
        let (psi_u, psi1_u, psi1_s) = (psi(u), psi1(u), psi1(s));
        let weighted = self.rest_weighted + u * psi_u;
        let base = psi1_u * (self.target - u) - psi1_s * residual_total;
        let penalty = (psi_u + u * psi1_u) / s - weighted / (s * s) - psi1_s - (self.k - 1.0) / (s * s);
        base + self.lambda * penalty
    }

    fn hess(&self, u: f64) -> f64 {
        let s = self.rest_sum + u;
        let residual_total = self.target_total - s;
        let (psi_u, psi1_u, psi2_u) = (psi(u), psi1(u), psi2(u));
        let (psi1_s, psi2_s) = (psi1(s), psi2(s));
        let weighted = self.rest_weighted + u * psi_u;
        let base = psi2_u * (self.target - u) - psi1_u - psi2_s * residual_total + psi1_s;
        let penalty = (2.0 * psi1_u + u * psi2_u) / s - 2.0 * (psi_u + u * psi1_u) / (s * s)
            + 2.0 * (self.k - 1.0 + weighted) / (s * s * s)
            - psi2_s;
        base + self.lambda * penalty
    }

    /// `L(to) - L(from)`. A direct difference loses everything below the
    /// rounding error of the (possibly large) values, so small changes are
    /// recomputed as the integral of the gradient.
    fn change(&self, from: f64, to: f64) -> f64 {
        let (v0, s0) = self.value(from);
        let (v1, s1) = self.value(to);
        let direct = v1 - v0;
        let noise = 64.0 * f64::EPSILON * (s0 + s1);
        if direct.abs() > 1e4 * noise {
            return direct;
        }
        let (mid, half) = (0.5 * (from + to), 0.5 * (to - from));
        let mut integral = 0.0;
        for &(x, w) in GAUSS_LEGENDRE_16.iter() {
            integral += w * (self.grad(mid + half * x) + self.grad(mid - half * x));
        }
        integral * half
    }
}

// Positive nodes and weights of 16-point Gauss–Legendre quadrature on [-1, 1].
const GAUSS_LEGENDRE_16: [(f64, f64); 8] = [
    (0.09501250983763745, 0.18945061045506859),
    (0.2816035507792589, 0.1826034150449236),
    (0.45801677765722737, 0.16915651939500262),
    (0.6178762444026438, 0.14959598881657676),
    (0.755404408355003, 0.12462897125553403),
    (0.8656312023878318, 0.09515851168249259),
    (0.9445750230732326, 0.062253523938647706),
    (0.9894009349916499, 0.027152459411754037),
];

/// `L_[γ]` over the whole vector, for steps that move every coordinate.
struct GammaObjective<'a> {
    zeta: &'a [f64],
    colsums: &'a [f64],
    lambda: f64,
    target_total: f64,
}

impl<'a> GammaObjective<'a> {
    fn new(zeta: &'a [f64], colsums: &'a [f64], lambda: f64) -> Self {
        let target_total = zeta.iter().zip(colsums).map(|(z, c)| z + c).sum();
        Self { zeta, colsums, lambda, target_total }
    }

    /// `∇L_[γ] · d` in O(K).
    fn directional(&self, gamma: &[f64], d: &[f64]) -> f64 {
        let k = gamma.len() as f64;
        let s: f64 = gamma.iter().sum();
        let weighted: f64 = gamma.iter().map(|&g| g * psi(g)).sum();
        let psi1_s = psi1(s);
        let common = -psi1_s * (self.target_total - s)
            + self.lambda * (-weighted / (s * s) - psi1_s - (k - 1.0) / (s * s));
        let mut total = 0.0;
        for (((&g, &z), &c), &di) in gamma.iter().zip(self.zeta).zip(self.colsums).zip(d) {
            let psi1_g = psi1(g);
            let own = psi1_g * (z + c - g) + self.lambda * (psi(g) + g * psi1_g) / s;
            total += (own + common) * di;
        }
        total
    }

    fn value(&self, gamma: &[f64]) -> (f64, f64) {
        let k = gamma.len() as f64;
        let s: f64 = gamma.iter().sum();
        let psi_s = psi(s);
        let mut value = -ln_gamma(s);
        let mut scale = value.abs();
        let mut weighted = 0.0;
        for ((&g, &z), &c) in gamma.iter().zip(self.zeta).zip(self.colsums) {
            let pg = psi(g);
            let term = (pg - psi_s) * (z + c - g) + ln_gamma(g);
            value += term;
            scale += term.abs() + ln_gamma(g).abs();
            weighted += g * pg;
        }
        let penalty = self.lambda * (weighted / s - psi_s + (k - 1.0) / s);
        scale += self.lambda * (weighted.abs() / s + psi_s.abs());
        (value + penalty, scale)
    }

    fn along(gamma: &[f64], d: &[f64], t: f64) -> Vec<f64> {
        gamma.iter().zip(d).map(|(g, di)| g + t * di).collect()
    }

    /// `L(γ + t d) - L(γ)`, integrating the directional derivative when the
    /// direct difference is within rounding error.
    fn change(&self, gamma: &[f64], d: &[f64], t: f64) -> f64 {
        let moved = Self::along(gamma, d, t);
        let (v0, s0) = self.value(gamma);
        let (v1, s1) = self.value(&moved);
        let direct = v1 - v0;
        if direct.abs() > 1e4 * 64.0 * f64::EPSILON * (s0 + s1) {
            return direct;
        }
        let half = 0.5 * t;
        let mut integral = 0.0;
        for &(x, w) in GAUSS_LEGENDRE_16.iter() {
            let lo = Self::along(gamma, d, half - half * x);
            let hi = Self::along(gamma, d, half + half * x);
            integral += w * (self.directional(&lo, d) + self.directional(&hi, d));
        }
        integral * half
    }

    /// The full gradient and Hessian of `L_[γ]`. The Hessian is diagonal
    /// plus terms in the span of `1` and `w′ = (Ψ(γ_i) + γ_i Ψ′(γ_i))_i`.
    fn derivatives(&self, gamma: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let k = gamma.len();
        let kf = k as f64;
        let s: f64 = gamma.iter().sum();
        let (psi1_s, psi2_s) = (psi1(s), psi2(s));
        let residual = self.target_total - s;
        let mut weighted = 0.0;
        let mut w1 = vec![0.0; k];
        let mut own_grad = vec![0.0; k];
        let mut own_hess = vec![0.0; k];
        for i in 0..k {
            let g = gamma[i];
            let (p, p1, p2) = (psi(g), psi1(g), psi2(g));
            let a = self.zeta[i] + self.colsums[i] - g;
            weighted += g * p;
            w1[i] = p + g * p1;
            own_grad[i] = p1 * a + self.lambda * w1[i] / s;
            own_hess[i] = p2 * a - p1 + self.lambda * (2.0 * p1 + g * p2) / s;
        }
        let grad_common =
            -psi1_s * residual + self.lambda * (-weighted / (s * s) - psi1_s - (kf - 1.0) / (s * s));
        let hess_common = psi1_s - psi2_s * residual
            + self.lambda * (2.0 * (weighted + kf - 1.0) / (s * s * s) - psi2_s);
        let grad = own_grad.iter().map(|g| g + grad_common).collect();
        let mut hess = vec![hess_common; k * k];
        for i in 0..k {
            hess[i * k + i] += own_hess[i];
            for j in 0..k {
                hess[i * k + j] -= self.lambda * (w1[i] + w1[j]) / (s * s);
            }
        }
        (grad, hess)
    }

    /// One ascent step on all of γ. Coordinate ascent alone converges slowly
    /// along the total-mass direction, where the curvature is far smaller
    /// than on the individual coordinates. Where the Hessian is negative
    /// definite this is a damped Newton step; elsewhere it follows the
    /// gradient scaled by the inverse diagonal curvature, doubling the step
    /// while the objective keeps rising, which crosses flat convex stretches
    /// that coordinate steps would crawl through.
    fn newton_block(&self, gamma: &mut Vec<f64>, config: &TrainConfig, stats: &mut EStepStats) -> Result<()> {
        let (grad, hess) = self.derivatives(gamma);
        let neg: Vec<f64> = hess.iter().map(|h| -h).collect();
        let (direction, newton) = match cholesky_solve(&neg, &grad) {
            Some(d) => (d, true),
            None => {
                let k = gamma.len();
                let scaled = (0..k)
                    .map(|i| {
                        let h = hess[i * k + i].abs();
                        if h >= MIN_CURVATURE {
                            grad[i] / h
                        } else {
                            grad[i]
                        }
                    })
                    .collect();
                (scaled, false)
            }
        };
        let slope: f64 = grad.iter().zip(&direction).map(|(g, d)| g * d).sum();
        if !(slope > 0.0) {
            return Ok(());
        }
        let max_alpha = gamma
            .iter()
            .zip(&direction)
            .filter(|(_, &d)| d < 0.0)
            .map(|(&g, &d)| (config.gamma_floor - g) / d)
            .fold(f64::INFINITY, f64::min);
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..config.max_backtracks {
            if alpha <= max_alpha {
                let gain = self.change(gamma, &direction, alpha);
                if gain >= config.armijo_delta * alpha * slope {
                    accepted = Some((alpha, gain));
                    break;
                }
            }
            alpha *= config.backtrack_rho;
        }
        let Some((mut alpha, mut gain)) = accepted else {
            stats.stalls += 1;
            return Ok(());
        };
        if !newton && alpha == 1.0 {
            for _ in 0..config.max_backtracks {
                let longer = 2.0 * alpha;
                if longer > max_alpha {
                    break;
                }
                let longer_gain = self.change(gamma, &direction, longer);
                if !(longer_gain > gain && longer_gain >= config.armijo_delta * longer * slope) {
                    break;
                }
                alpha = longer;
                gain = longer_gain;
            }
        }
        if config.check_ascent && !(gain >= 0.0) {
            let before = self.value(gamma).0;
            return Err(Error::AscentViolation { before, after: before + gain });
        }
        stats.newton_steps += 1;
        stats.min_gain = stats.min_gain.min(gain);
        *gamma = Self::along(gamma, &direction, alpha);
        Ok(())
    }
}

/// Solves `A x = b` for symmetric positive definite `A` (row-major);
/// `None` if `A` is not positive definite.
fn cholesky_solve(a: &[f64], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for m in 0..j {
                sum -= l[i * n + m] * l[j * n + m];
            }
            if i == j {
                if !(sum > 0.0) {
                    return None;
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let sum: f64 = (0..i).map(|m| l[i * n + m] * y[m]).sum();
        y[i] = (b[i] - sum) / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let sum: f64 = (i + 1..n).map(|m| l[m * n + i] * x[m]).sum();
        x[i] = (y[i] - sum) / l[i * n + i];
    }
    Some(x)
}

/// Outcome of one damped Newton step on a single γ coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NewtonStep {
    /// The search direction was shorter than ε. `value` is `γ_i + Δ` when
    /// that final full step passes the sufficient-increase test, else `γ_i`.
    Converged { value: f64 },
    Accepted {
        value: f64,
        step_size: f64,
        /// Increase of L_[γ] (≥ 0 by the sufficient-decrease test).
        gain: f64,
    },
    /// No step size passed the line search within `max_backtracks`.
    Stalled,
}

fn newton_step_view(view: &CoordinateView, u: f64, config: &TrainConfig) -> NewtonStep {
    let g = view.grad(u);
    let h = view.hess(u);
    let direction = if h < 0.0 && h.abs() >= MIN_CURVATURE {
        -g / h
    } else {
        g.signum() * g.abs().min(1.0)
    };
    if !direction.is_finite() {
        return NewtonStep::Converged { value: u };
    }
    let slope = g * direction;
    if direction.abs() < config.newton_tol {
        let candidate = u + direction;
        let value = if candidate >= config.gamma_floor
            && view.change(u, candidate) >= config.armijo_delta * slope
        {
            candidate
        } else {
            u
        };
        return NewtonStep::Converged { value };
    }
    let mut alpha = 1.0;
    for _ in 0..config.max_backtracks {
        let candidate = u + alpha * direction;
        if candidate >= config.gamma_floor {
            let gain = view.change(u, candidate);
            // -L(u + αΔ) <= -L(u) - δ α L' Δ
            if gain >= config.armijo_delta * alpha * slope {
                return NewtonStep::Accepted {
                    value: candidate,
                    step_size: alpha,
                    gain,
                };
            }
        }
        alpha *= config.backtrack_rho;
    }
    NewtonStep::Stalled
}

/// One damped Newton step on `γ_i`.
///
/// The direction is `-L′/L″`, or the clipped gradient `sign(L′)·min(|L′|, 1)`
/// where L″ is not negative. The step size starts at 1 and shrinks by ρ until
/// `γ_i + αΔ ≥ gamma_floor` and the Armijo test with constant δ holds.
pub fn newton_coordinate_step(
    gamma: &[f64],
    i: usize,
    zeta: &[f64],
    phi_colsums: &[f64],
    lambda: f64,
    config: &TrainConfig,
) -> Result<NewtonStep> {
    check_gamma(gamma, zeta, phi_colsums, lambda)?;
    let view = CoordinateView::new(gamma, zeta, phi_colsums, lambda, i);
    Ok(newton_step_view(&view, gamma[i], config))
}

/// Runs Newton steps on coordinate `i` until one converges or stalls.
/// Returns how far γ_i moved.
fn solve_coordinate(
    gamma: &mut [f64],
    i: usize,
    zeta: &[f64],
    colsums: &[f64],
    lambda: f64,
    config: &TrainConfig,
    stats: &mut EStepStats,
) -> Result<f64> {
    let view = CoordinateView::new(gamma, zeta, colsums, lambda, i);
    let start = gamma[i];
    for _ in 0..config.newton_max_iters {
        match newton_step_view(&view, gamma[i], config) {
            NewtonStep::Converged { value } => {
                gamma[i] = value;
                break;
            }
            NewtonStep::Stalled => {
                stats.stalls += 1;
                break;
            }
            NewtonStep::Accepted { value, gain, .. } => {
                if config.check_ascent && !(gain >= 0.0) {
                    let before = view.value(gamma[i]).0;
                    return Err(Error::AscentViolation {
                        before,
                        after: before + gain,
                    });
                }
                stats.newton_steps += 1;
                stats.min_gain = stats.min_gain.min(gain);
                gamma[i] = value;
            }
        }
    }
    Ok((gamma[i] - start).abs())
}

/// A document as distinct words with multiplicities.
struct WordCounts {
    words: Vec<WordId>,
    counts: Vec<f64>,
}

impl WordCounts {
    fn new(tokens: &[WordId]) -> Self {
        let mut map = BTreeMap::new();
        for &w in tokens {
            *map.entry(w).or_insert(0.0) += 1.0;
        }
        let (words, counts) = map.into_iter().unzip();
        Self { words, counts }
    }
}

/// Fills `phi` (one row per distinct word) with the normalized
/// `η_{i,w} exp(E_q[ln θ_i])` and returns the count-weighted total absolute
/// change.
fn update_phi_rows(
    words: &WordCounts,
    elog: &[f64],
    model: &ModelParams,
    phi: &mut [f64],
) -> Result<f64> {
    let k = elog.len();
    let top = elog.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = elog.iter().map(|e| (e - top).exp()).collect();
    let mut change = 0.0;
    let mut row = vec![0.0; k];
    for (n, (&w, &c)) in words.words.iter().zip(&words.counts).enumerate() {
        let mut norm = 0.0;
        for i in 0..k {
            row[i] = model.eta_at(i, w) * weights[i];
            norm += row[i];
        }
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::Numerical(format!(
                "phi row for word {w} cannot be normalized (sum {norm})"
            )));
        }
        let out = &mut phi[n * k..(n + 1) * k];
        for i in 0..k {
            let p = row[i] / norm;
            change += c * (p - out[i]).abs();
            out[i] = p;
        }
    }
    Ok(change)
}

/// φ for every token of `doc`: row n is `η_{i,w_n} exp(Ψ(γ_i) - Ψ(Σγ))`
/// normalized over i.
pub fn update_phi(doc: &Document, gamma: &[f64], model: &ModelParams) -> Result<Vec<f64>> {
    crate::specialfn::expected_log_theta(gamma)?;
    check_tokens(doc, model)?;
    let k = gamma.len();
    if k != model.num_topics() {
        return Err(Error::Input(format!("gamma has {k} entries, model has {} topics", model.num_topics())));
    }
    let words = WordCounts::new(&doc.tokens);
    let mut elog = vec![0.0; k];
    expected_log_theta_into(gamma, &mut elog);
    let mut rows = vec![0.0; words.words.len() * k];
    update_phi_rows(&words, &elog, model, &mut rows)?;
    Ok(expand_phi(&doc.tokens, &words, &rows, k))
}

fn expand_phi(tokens: &[WordId], words: &WordCounts, rows: &[f64], k: usize) -> Vec<f64> {
    let mut phi = Vec::with_capacity(tokens.len() * k);
    for w in tokens {
        let n = words.words.binary_search(w).expect("token in word list");
        phi.extend_from_slice(&rows[n * k..(n + 1) * k]);
    }
    phi
}

fn check_tokens(doc: &Document, model: &ModelParams) -> Result<()> {
    if doc.is_empty() {
        return Err(Error::Input(format!("document {:?} is empty", doc.id)));
    }
    let v = model.vocab_size();
    if let Some(w) = doc.tokens.iter().find(|&&w| w >= v) {
        return Err(Error::Input(format!(
            "document {:?} has word id {w} outside the model vocabulary (V = {v})",
            doc.id
        )));
    }
    Ok(())
}

/// Variational E-step for one document, starting from `γ_i = ζ_i + N/K`.
pub fn estep_document(
    doc: &Document,
    model: &ModelParams,
    lambda: f64,
    config: &TrainConfig,
) -> Result<(DocVariational, EStepStats)> {
    estep_document_from(doc, model, lambda, config, None)
}

/// Variational E-step for one document with an optional starting γ.
///
/// Each iteration recomputes φ from the current γ, then sweeps the
/// coordinates of γ in ascending order, each followed by a damped Newton step
/// on the whole vector, until a sweep moves no coordinate by more than ε or
/// `max_sweeps` is reached. The E-step stops once the mean absolute φ change
/// is below `estep_phi_tol` and γ has settled: no coordinate moved by more
/// than ε, or `L_[γ]` changed by less than `estep_rel_tol` relatively.
pub fn estep_document_from(
    doc: &Document,
    model: &ModelParams,
    lambda: f64,
    config: &TrainConfig,
    gamma0: Option<&[f64]>,
) -> Result<(DocVariational, EStepStats)> {
    check_tokens(doc, model)?;
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::Config(format!("penalty weight must be >= 0, got {lambda}")));
    }
    let zeta = model.zeta();
    let k = zeta.len();
    let mut gamma = match gamma0 {
        Some(g) if g.len() == k => g.iter().map(|&x| x.max(config.gamma_floor)).collect(),
        Some(g) => {
            return Err(Error::Input(format!("initial gamma has {} entries, K = {k}", g.len())))
        }
        None => init_doc_variational(0, zeta).gamma,
    };
    if gamma0.is_none() {
        let share = doc.len() as f64 / k as f64;
        gamma.iter_mut().for_each(|g| *g += share);
    }

    let words = WordCounts::new(&doc.tokens);
    let n_tokens = doc.len() as f64;
    let mut rows = vec![1.0 / k as f64; words.words.len() * k];
    let mut elog = vec![0.0; k];
    let mut colsums = vec![0.0; k];
    let mut stats = EStepStats {
        converged: false,
        ..EStepStats::default()
    };

    for iter in 0..config.estep_max_iters {
        stats.iterations = iter + 1;
        expected_log_theta_into(&gamma, &mut elog);
        let phi_change = update_phi_rows(&words, &elog, model, &mut rows)? / (n_tokens * k as f64);

        colsums.iter_mut().for_each(|c| *c = 0.0);
        for (row, &c) in rows.chunks(k).zip(&words.counts) {
            for (s, p) in colsums.iter_mut().zip(row) {
                *s += c * p;
            }
        }

        let before = gamma.clone();
        let objective = GammaObjective::new(zeta, &colsums, lambda);
        let start_value = objective.value(&gamma).0;
        for _ in 0..config.max_sweeps {
            let mut largest = 0.0f64;
            for i in 0..k {
                let moved = solve_coordinate(&mut gamma, i, zeta, &colsums, lambda, config, &mut stats)?;
                largest = largest.max(moved);
            }
            objective.newton_block(&mut gamma, config, &mut stats)?;
            if largest < config.newton_tol {
                break;
            }
        }
        let max_dgamma = gamma
            .iter()
            .zip(&before)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let end_value = objective.value(&gamma).0;
        let rel_change = (end_value - start_value).abs() / end_value.abs().max(f64::MIN_POSITIVE);
        let gamma_settled = max_dgamma < config.newton_tol || rel_change < config.estep_rel_tol;
        if gamma_settled && phi_change < config.estep_phi_tol {
            stats.converged = true;
            break;
        }
    }

    let phi = expand_phi(&doc.tokens, &words, &rows, k);
    Ok((DocVariational { gamma, phi }, stats))
}

/// Expected topic-word counts `Σ_d Σ_n φ_dni [w_dn = j]`, smoothed by
/// `eta_floor` and row-normalized.
pub fn mstep(corpus: &Corpus, per_doc: &[DocVariational], config: &TrainConfig) -> Result<Vec<f64>> {
    if per_doc.len() != corpus.num_docs() {
        return Err(Error::Input(format!(
            "{} variational states for {} documents",
            per_doc.len(),
            corpus.num_docs()
        )));
    }
    let k = config.k;
    let v = corpus.vocab_size();
    let accumulate = |mut acc: Vec<f64>, (doc, state): (&Document, &DocVariational)| {
        for (n, &w) in doc.tokens.iter().enumerate() {
            for (i, &p) in state.phi_row(n).iter().enumerate() {
                acc[i * v + w] += p;
            }
        }
        acc
    };
    let pairs = corpus.documents().iter().zip(per_doc);
    let mut counts = match config.reduction {
        Reduction::Ordered => pairs.fold(vec![0.0; k * v], accumulate),
        Reduction::Unordered => corpus
            .documents()
            .par_iter()
            .zip(per_doc.par_iter())
            .fold(|| vec![0.0; k * v], accumulate)
            .reduce(
                || vec![0.0; k * v],
                |mut a, b| {
                    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                    a
                },
            ),
    };
    for row in counts.chunks_mut(v) {
        row.iter_mut().for_each(|x| *x += config.eta_floor);
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= s);
    }
    Ok(counts)
}

/// Per-document ELBO terms.
pub fn document_elbo(doc: &Document, model: &ModelParams, state: &DocVariational, lambda: f64) -> Result<ElboBreakdown> {
    check_tokens(doc, model)?;
    let k = model.num_topics();
    if state.gamma.len() != k || state.phi.len() != doc.len() * k {
        return Err(Error::Input("variational state does not match document/model".into()));
    }
    let elog = crate::specialfn::expected_log_theta(&state.gamma)?;
    let zeta = model.zeta();

    let zeta_sum: f64 = zeta.iter().sum();
    let mut ll = ln_gamma(zeta_sum);
    for (&z, &e) in zeta.iter().zip(&elog) {
        ll += (z - 1.0) * e - ln_gamma(z);
    }
    let gamma_sum: f64 = state.gamma.iter().sum();
    let mut ent = -ln_gamma(gamma_sum);
    for (&g, &e) in state.gamma.iter().zip(&elog) {
        ent += ln_gamma(g) - (g - 1.0) * e;
    }
    for (n, &w) in doc.tokens.iter().enumerate() {
        for (i, &p) in state.phi_row(n).iter().enumerate() {
            if p > 0.0 {
                ll += p * (elog[i] + model.eta_at(i, w).ln());
                ent -= p * p.ln();
            }
        }
    }
    let penalty = if lambda == 0.0 {
        0.0
    } else {
        lambda * expected_neg_entropy_unchecked(&state.gamma)
    };
    Ok(ElboBreakdown::new(ll, ent, penalty))
}

/// Penalized ELBO of the whole corpus, summed in document order.
pub fn penalized_elbo(
    corpus: &Corpus,
    model: &ModelParams,
    per_doc: &[DocVariational],
    penalty: &Penalty,
) -> Result<ElboBreakdown> {
    if per_doc.len() != corpus.num_docs() {
        return Err(Error::Input("one variational state per document required".into()));
    }
    let terms: Vec<ElboBreakdown> = corpus
        .documents()
        .par_iter()
        .zip(per_doc.par_iter())
        .enumerate()
        .map(|(d, (doc, state))| document_elbo(doc, model, state, penalty.for_doc(d)))
        .collect::<Result<_>>()?;
    Ok(terms.into_iter().fold(ElboBreakdown::default(), |a, b| a + b))
}

fn run_estep(
    corpus: &Corpus,
    model: &ModelParams,
    config: &TrainConfig,
    previous: Option<&[DocVariational]>,
) -> Result<(Vec<DocVariational>, EStepStats)> {
    let results: Vec<(DocVariational, EStepStats)> = corpus
        .documents()
        .par_iter()
        .enumerate()
        .map(|(d, doc)| {
            let start = previous.map(|p| p[d].gamma.as_slice());
            estep_document_from(doc, model, config.penalty.for_doc(d), config, start)
        })
        .collect::<Result<_>>()?;
    let mut total = EStepStats::default();
    let per_doc = results
        .into_iter()
        .map(|(state, stats)| {
            total.merge(&stats);
            state
        })
        .collect();
    Ok((per_doc, total))
}

/// Penalized variational EM.
///
/// Each iteration runs the E-step on every document, records the penalized
/// ELBO, and stops if its relative change is below `em_rel_tol`; otherwise
/// it re-estimates η. A converged result therefore pairs `per_doc` with the
/// returned model; a run that hits `em_max_iters` ends with an M-step.
pub fn fit(corpus: &Corpus, config: &TrainConfig) -> Result<FitResult> {
    config.validate_for(corpus)?;
    let mut model = init_model(corpus, config)?;
    let mut per_doc: Vec<DocVariational> = Vec::new();
    let mut elbo_trace = Vec::new();
    let mut estep_trace = Vec::new();
    let mut converged = false;
    let mut iterations_run = 0;

    for iter in 0..config.em_max_iters {
        let previous = (config.warm_start && iter > 0).then_some(per_doc.as_slice());
        let (states, stats) = run_estep(corpus, &model, config, previous)?;
        per_doc = states;
        let elbo = penalized_elbo(corpus, &model, &per_doc, &config.penalty)?;
        iterations_run = iter + 1;
        log::debug!(
            "EM iteration {iterations_run}: elbo {:.6} (penalty {:.6}), newton steps {}, stalls {}",
            elbo.total,
            elbo.penalty_term,
            stats.newton_steps,
            stats.stalls
        );
        if !elbo.total.is_finite() {
            return Err(Error::Numerical(format!("ELBO became {} at iteration {iterations_run}", elbo.total)));
        }
        let prev = elbo_trace.last().map(|e: &ElboBreakdown| e.total);
        elbo_trace.push(elbo);
        estep_trace.push(stats);
        if let Some(prev) = prev {
            if ((elbo.total - prev) / prev.abs()).abs() < config.em_rel_tol {
                converged = true;
                break;
            }
        }
        model.set_eta(mstep(corpus, &per_doc, config)?);
    }
    Ok(FitResult {
        model,
        per_doc,
        elbo_trace,
        estep_trace,
        iterations_run,
        converged,
    })
}

/// Held-out inference: the E-step with η frozen. Word ids outside the model
/// vocabulary are skipped.
pub fn infer_document(doc: &Document, model: &ModelParams, lambda: f64, config: &TrainConfig) -> Result<DocVariational> {
    let known = known_tokens(doc, model)?;
    Ok(estep_document(&known, model, lambda, config)?.0)
}

fn known_tokens(doc: &Document, model: &ModelParams) -> Result<Document> {
    let v = model.vocab_size();
    let tokens: Vec<WordId> = doc.tokens.iter().copied().filter(|&w| w < v).collect();
    if tokens.is_empty() {
        return Err(Error::Input(format!(
            "document {:?} has no in-vocabulary tokens",
            doc.id
        )));
    }
    Ok(Document::new(doc.id.clone(), tokens))
}

/// Per-word perplexity `exp(-Σ_d bound_d / Σ_d N_d)`, where `bound_d` is the
/// unpenalized ELBO after held-out inference. The penalty weight `lambda`
/// shapes inference only; it never enters the bound.
pub fn perplexity(test_corpus: &Corpus, model: &ModelParams, lambda: f64, config: &TrainConfig) -> Result<f64> {
    if test_corpus.num_docs() == 0 {
        return Err(Error::EmptyCorpus("no test documents".into()));
    }
    let parts: Vec<(f64, usize)> = test_corpus
        .documents()
        .par_iter()
        .map(|doc| {
            let known = known_tokens(doc, model)?;
            let (state, _) = estep_document(&known, model, lambda, config)?;
            let elbo = document_elbo(&known, model, &state, 0.0)?;
            Ok((elbo.bound(), known.len()))
        })
        .collect::<Result<_>>()?;
    let (bound, words) = parts
        .into_iter()
        .fold((0.0, 0usize), |(b, n), (db, dn)| (b + db, n + dn));
    Ok((-bound / words as f64).exp())
}
