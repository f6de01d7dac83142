//! Log-gamma and polygamma functions on the positive reals, plus the two
//! Dirichlet expectations the variational objective needs.
//!
//! The polygamma functions shift the argument up with their recurrences until
//! it reaches [`ASYMPTOTIC_FROM`] and then sum the asymptotic (Bernoulli)
//! series. `log_gamma` uses a Taylor series around 1 and 2 so that it stays
//! accurate in relative terms near its two zeros.
//!
//! The `*_unchecked` variants skip the domain test and are what the inner
//! loops of the E-step call once the inputs are known to be valid.

#![allow(clippy::excessive_precision)]

use crate::error::{Error, Result};

/// Smallest Dirichlet parameter accepted by [`expected_log_theta`] and
/// [`expected_neg_entropy`].
pub const MIN_GAMMA: f64 = 1e-10;

/// Euler–Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_860_6;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_741_78;

const ASYMPTOTIC_FROM: f64 = 6.0;
const STIRLING_FROM: f64 = 10.0;

// Bernoulli numbers B_2, B_4, ..., B_22.
const BERNOULLI: [f64; 11] = [
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
    -3617.0 / 510.0,
    43867.0 / 798.0,
    -174611.0 / 330.0,
    854513.0 / 138.0,
];

// zeta(k) - 1 for k = 2..=30.
const ZETA_MINUS_ONE: [f64; 29] = [
    0.644_934_066_848_226_436_47,
    0.202_056_903_159_594_285_4,
    0.082_323_233_711_138_191_516,
    0.036_927_755_143_369_926_331,
    0.017_343_061_984_449_139_715,
    0.008_349_277_381_922_826_839_8,
    0.004_077_356_197_944_339_378_7,
    0.002_008_392_826_082_214_417_9,
    0.000_994_575_127_818_085_337_15,
    0.000_494_188_604_119_464_558_7,
    0.000_246_086_553_308_048_298_64,
    0.000_122_713_347_578_489_146_75,
    6.124_813_505_870_482_925_9e-5,
    3.058_823_630_702_049_355_2e-5,
    1.528_225_940_865_187_173_3e-5,
    7.637_197_637_899_762_273_6e-6,
    3.817_293_264_999_839_856_5e-6,
    1.908_212_716_553_938_925_7e-6,
    9.539_620_338_727_961_131_5e-7,
    4.769_329_867_878_064_631_2e-7,
    2.384_505_027_277_329_9e-7,
    1.192_199_259_653_110_730_7e-7,
    5.960_818_905_125_947_961_2e-8,
    2.980_350_351_465_228_018_6e-8,
    1.490_155_482_836_504_123_5e-8,
    7.450_711_789_835_429_492e-9,
    3.725_334_024_788_457_054_8e-9,
    1.862_659_723_513_049_006_4e-9,
    9.313_274_324_196_681_828_7e-10,
];

fn check(func: &'static str, x: f64) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain { func, value: x })
    }
}

/// `ln Γ(x)` for `x > 0`.
pub fn log_gamma(x: f64) -> Result<f64> {
    check("log_gamma", x)?;
    Ok(log_gamma_unchecked(x))
}

/// Digamma `Ψ(x) = d/dx ln Γ(x)` for `x > 0`.
pub fn digamma(x: f64) -> Result<f64> {
    check("digamma", x)?;
    Ok(digamma_unchecked(x))
}

/// Trigamma `Ψ′(x)` for `x > 0`. Always positive.
pub fn trigamma(x: f64) -> Result<f64> {
    check("trigamma", x)?;
    Ok(trigamma_unchecked(x))
}

/// Tetragamma `Ψ″(x)` for `x > 0`. Always negative.
pub fn tetragamma(x: f64) -> Result<f64> {
    check("tetragamma", x)?;
    Ok(tetragamma_unchecked(x))
}

/// `ln Γ(2 + z) = z(1 - γ) + Σ_{k≥2} (-1)^k (ζ(k) - 1) z^k / k`, valid for |z| ≤ 1/2
/// to double precision with the tabulated terms.
fn log_gamma_two_plus(z: f64) -> f64 {
    let mut sum = 0.0;
    let mut power = -z;
    for (j, zm1) in ZETA_MINUS_ONE.iter().enumerate() {
        power *= -z;
        let k = (j + 2) as f64;
        sum += zm1 * power / k;
    }
    z * (1.0 - EULER_GAMMA) + sum
}

pub(crate) fn log_gamma_unchecked(x: f64) -> f64 {
    if x < 0.5 {
        // ln Γ(x) = ln Γ(2 + x) - ln(1 + x) - ln x
        return log_gamma_two_plus(x) - x.ln_1p() - x.ln();
    }
    if x < 1.5 {
        let z = x - 1.0;
        return log_gamma_two_plus(z) - z.ln_1p();
    }
    if x < 2.5 {
        return log_gamma_two_plus(x - 2.0);
    }
    if x < STIRLING_FROM {
        let mut shifted = x;
        let mut prod = 1.0;
        while shifted < STIRLING_FROM {
            prod *= shifted;
            shifted += 1.0;
        }
        return stirling(shifted) - prod.ln();
    }
    stirling(x)
}

fn stirling(x: f64) -> f64 {
    let r = 1.0 / (x * x);
    // B_2k / (2k (2k - 1) x^(2k - 1)), k = 1..=8
    let mut series = 0.0;
    for k in (1..=8).rev() {
        let b = BERNOULLI[k - 1];
        let two_k = 2.0 * k as f64;
        series = series * r + b / (two_k * (two_k - 1.0));
    }
    (x - 0.5) * x.ln() - x + HALF_LN_2PI + series / x
}

pub(crate) fn digamma_unchecked(x: f64) -> f64 {
    let mut acc = 0.0;
    let mut z = x;
    while z < ASYMPTOTIC_FROM {
        acc -= 1.0 / z;
        z += 1.0;
    }
    let r = 1.0 / (z * z);
    // sum_k B_2k / (2k z^2k)
    let mut series = 0.0;
    for k in (1..=BERNOULLI.len()).rev() {
        series = series * r + BERNOULLI[k - 1] / (2.0 * k as f64);
    }
    acc + z.ln() - 0.5 / z - series * r
}

pub(crate) fn trigamma_unchecked(x: f64) -> f64 {
    let mut acc = 0.0;
    let mut z = x;
    while z < ASYMPTOTIC_FROM {
        acc += 1.0 / (z * z);
        z += 1.0;
    }
    let r = 1.0 / (z * z);
    // sum_k B_2k / z^(2k+1)
    let mut series = 0.0;
    for b in BERNOULLI.iter().rev() {
        series = series * r + b;
    }
    acc + 1.0 / z + 0.5 * r + series * r / z
}

pub(crate) fn tetragamma_unchecked(x: f64) -> f64 {
    let mut acc = 0.0;
    let mut z = x;
    while z < ASYMPTOTIC_FROM {
        acc -= 2.0 / (z * z * z);
        z += 1.0;
    }
    let r = 1.0 / (z * z);
    // sum_k (2k + 1) B_2k / z^(2k+2)
    let mut series = 0.0;
    for k in (1..=BERNOULLI.len()).rev() {
        series = series * r + (2.0 * k as f64 + 1.0) * BERNOULLI[k - 1];
    }
    acc - r - r / z - series * r * r
}

fn check_dirichlet(func: &'static str, gamma: &[f64]) -> Result<()> {
    if gamma.is_empty() {
        return Err(Error::Input(format!("{func}: empty parameter vector")));
    }
    for &g in gamma {
        if !(g.is_finite() && g >= MIN_GAMMA) {
            return Err(Error::Domain { func, value: g });
        }
    }
    Ok(())
}

/// `E_q[ln θ_i] = Ψ(γ_i) - Ψ(Σγ)` under `θ ~ Dirichlet(γ)`.
pub fn expected_log_theta(gamma: &[f64]) -> Result<Vec<f64>> {
    check_dirichlet("expected_log_theta", gamma)?;
    let mut out = vec![0.0; gamma.len()];
    expected_log_theta_into(gamma, &mut out);
    Ok(out)
}

pub(crate) fn expected_log_theta_into(gamma: &[f64], out: &mut [f64]) {
    let psi_sum = digamma_unchecked(gamma.iter().sum());
    for (o, &g) in out.iter_mut().zip(gamma) {
        *o = digamma_unchecked(g) - psi_sum;
    }
}

/// `E_q[Σ θ_i ln θ_i]` under `θ ~ Dirichlet(γ)`, i.e. the expected negative
/// entropy of the topic proportions:
///
/// `Σγ_iΨ(γ_i)/Σγ - Ψ(Σγ) + (K - 1)/Σγ`
///
/// The value lies in `[-ln K, 0]`.
pub fn expected_neg_entropy(gamma: &[f64]) -> Result<f64> {
    check_dirichlet("expected_neg_entropy", gamma)?;
    if gamma.len() < 2 {
        return Err(Error::Input(
            "expected_neg_entropy: need at least two components".into(),
        ));
    }
    Ok(expected_neg_entropy_unchecked(gamma))
}

pub(crate) fn expected_neg_entropy_unchecked(gamma: &[f64]) -> f64 {
    let total: f64 = gamma.iter().sum();
    let weighted: f64 = gamma.iter().map(|&g| g * digamma_unchecked(g)).sum();
    let k = gamma.len() as f64;
    weighted / total - digamma_unchecked(total) + (k - 1.0) / total
}
