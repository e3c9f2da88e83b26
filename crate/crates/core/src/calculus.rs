//! Closed-form relations between clean and noisy posteriors, class priors and
//! decision thresholds for class-conditional label flipping.
//!
//! Labels are flipped independently of the features: a true class-1 label is
//! observed as 0 with probability `gamma1`, a true class-0 label is observed
//! as 1 with probability `gamma0`. Under that model the noisy posterior is an
//! increasing affine image of the clean posterior,
//!
//! ```text
//! p_noisy = (1 - gamma1 - gamma0) * p_clean + gamma0
//! ```
//!
//! which is what every function here is built on. Posterior values are plain
//! `f64`s. Recovered values are never clamped; use [`clamp01`] explicitly when
//! a probability is needed for display.

use crate::error::{Error, Result};

/// Class-conditional flip probabilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseParams {
    gamma1: f64,
    gamma0: f64,
}

impl NoiseParams {
    /// `gamma1` is the 1→0 flip rate, `gamma0` the 0→1 flip rate.
    ///
    /// Both must lie in `[0, 1)` and their sum must stay below 1. At a total
    /// noise of 1 the observed labels carry no information about the clean
    /// ones and the recovery map is undefined.
    pub fn new(gamma1: f64, gamma0: f64) -> Result<Self> {
        let invalid = |reason| Error::InvalidNoise {
            gamma1,
            gamma0,
            reason,
        };
        if !gamma1.is_finite() || !gamma0.is_finite() {
            return Err(invalid("flip rates must be finite"));
        }
        if !(0.0..1.0).contains(&gamma1) || !(0.0..1.0).contains(&gamma0) {
            return Err(invalid("flip rates must lie in [0, 1)"));
        }
        if gamma1 + gamma0 >= 1.0 {
            return Err(invalid("total noise gamma1 + gamma0 must be below 1"));
        }
        Ok(Self { gamma1, gamma0 })
    }

    pub fn noiseless() -> Self {
        Self {
            gamma1: 0.0,
            gamma0: 0.0,
        }
    }

    /// Splits a total noise level evenly between the two classes.
    pub fn symmetric(total: f64) -> Result<Self> {
        Self::new(total / 2.0, total / 2.0)
    }

    /// Splits a total noise level so that `gamma0 / gamma1 == ratio`.
    pub fn from_ratio(total: f64, ratio: f64) -> Result<Self> {
        if !(ratio.is_finite() && ratio > 0.0) {
            return Err(Error::domain(format!(
                "flip ratio must be positive and finite, got {ratio}"
            )));
        }
        let gamma1 = total / (1.0 + ratio);
        let gamma0 = total * ratio / (1.0 + ratio);
        Self::new(gamma1, gamma0)
    }

    pub fn gamma1(&self) -> f64 {
        self.gamma1
    }

    pub fn gamma0(&self) -> f64 {
        self.gamma0
    }

    /// Total noise `gamma1 + gamma0`.
    pub fn total(&self) -> f64 {
        self.gamma1 + self.gamma0
    }

    /// Slope of the clean→noisy posterior map, `1 - gamma1 - gamma0`.
    pub fn slope(&self) -> f64 {
        1.0 - self.gamma1 - self.gamma0
    }
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self::noiseless()
    }
}

/// A binary class prior. Only `p1` is stored; `p0` is always `1 - p1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassPriors {
    p1: f64,
}

impl ClassPriors {
    /// Boundary values 0 and 1 are accepted here; operations that take a
    /// log-odds reject them.
    pub fn new(p1: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p1) {
            return Err(Error::domain(format!(
                "class-1 prior must lie in [0, 1], got {p1}"
            )));
        }
        Ok(Self { p1 })
    }

    pub fn equal() -> Self {
        Self { p1: 0.5 }
    }

    pub fn p1(&self) -> f64 {
        self.p1
    }

    pub fn p0(&self) -> f64 {
        1.0 - self.p1
    }

    pub fn is_interior(&self) -> bool {
        self.p1 > 0.0 && self.p1 < 1.0
    }

    /// `ln(p1 / p0)`; fails at the boundary where it diverges.
    pub fn log_odds(&self) -> Result<f64> {
        if !self.is_interior() {
            return Err(Error::domain(format!(
                "log-odds undefined for boundary prior p1={}",
                self.p1
            )));
        }
        Ok((self.p1 / self.p0()).ln())
    }
}

impl Default for ClassPriors {
    fn default() -> Self {
        Self::equal()
    }
}

/// Additive change of a sigmoid network's final-layer bias caused by a
/// mismatch between training and evaluation priors.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct LogitShift(pub f64);

impl LogitShift {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// Clamps a (possibly out-of-range) recovered posterior into `[0, 1]`.
pub fn clamp01(p: f64) -> f64 {
    p.clamp(0.0, 1.0)
}

/// Numerically stable logistic function.
pub fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// `ln(p / (1 - p))` for `p` in `(0, 1)`.
pub fn logit(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!(
            "logit requires a probability strictly inside (0, 1), got {p}"
        )));
    }
    Ok((p / (1.0 - p)).ln())
}

/// Maps a clean posterior `p(y=1|x)` to the noisy posterior `p(z=1|x)`.
///
/// The result lies in `[gamma0, 1 - gamma1]`.
pub fn corrupt_posterior(p: f64, noise: &NoiseParams) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::domain(format!(
            "posterior must lie in [0, 1], got {p}"
        )));
    }
    Ok(noise.slope() * p + noise.gamma0)
}

/// Inverse of [`corrupt_posterior`]. Not clamped: an estimated noisy posterior
/// outside `[gamma0, 1 - gamma1]` maps outside `[0, 1]`.
pub fn recover_posterior(p_noisy: f64, noise: &NoiseParams) -> f64 {
    (p_noisy - noise.gamma0) / noise.slope()
}

/// Threshold on the noisy posterior equivalent to thresholding the clean
/// posterior at 1/2: `(1 - gamma1 + gamma0) / 2`.
pub fn noisy_decision_threshold(noise: &NoiseParams) -> f64 {
    // Written as an offset from 1/2 so equal flip rates give exactly 0.5.
    0.5 + (noise.gamma0 - noise.gamma1) / 2.0
}

/// Factor by which an error in the noisy posterior grows when recovering the
/// clean posterior, `1 / (1 - gamma1 - gamma0)`.
pub fn error_amplification(noise: &NoiseParams) -> f64 {
    1.0 / noise.slope()
}

/// Class priors of the observed labels given the clean priors.
pub fn propagate_priors(clean: &ClassPriors, noise: &NoiseParams) -> ClassPriors {
    // Offset form keeps equal priors under equal flip rates exactly at 0.5.
    let p1 = clean.p1() + (noise.gamma0 * clean.p0() - noise.gamma1 * clean.p1());
    // Floating rounding can leave p1 a hair outside [0, 1] at the endpoints.
    ClassPriors { p1: clamp01(p1) }
}

/// Log-odds of the training prior minus log-odds of the evaluation prior.
pub fn logit_shift(train_prior: &ClassPriors, eval_prior: &ClassPriors) -> Result<LogitShift> {
    Ok(LogitShift(train_prior.log_odds()? - eval_prior.log_odds()?))
}

/// Threshold on the trained network's probability output that undoes a bias
/// shift of `delta`: `exp(delta) / (1 + exp(delta))`.
pub fn threshold_from_shift(delta: LogitShift) -> f64 {
    sigmoid(delta.0)
}

/// Same threshold as `threshold_from_shift(logit_shift(noisy_train, eval))`,
/// written directly in terms of the priors.
pub fn threshold_from_priors(eval_prior: &ClassPriors, noisy_train_prior: &ClassPriors) -> Result<f64> {
    if !eval_prior.is_interior() || !noisy_train_prior.is_interior() {
        return Err(Error::domain(
            "prior-corrected threshold requires interior priors",
        ));
    }
    let num = eval_prior.p0() * noisy_train_prior.p1();
    Ok(num / (eval_prior.p1() * noisy_train_prior.p0() + num))
}

/// Estimates from a sequence of flipped coin tosses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BernoulliEstimate {
    /// Frequency of observed ones.
    pub noisy: f64,
    /// Recovered probability of the clean outcome; may fall outside `[0, 1]`.
    pub clean: f64,
}

/// Maximum-likelihood estimates of the observed and clean success
/// probabilities of a Bernoulli variable whose outcomes were flipped.
///
/// The likelihood depends on the clean probability only through the noisy
/// one, with a constant derivative between them, so the clean estimate is the
/// recovery map applied to the observed frequency.
pub fn mle_flipped_bernoulli(observations: &[bool], noise: &NoiseParams) -> Result<BernoulliEstimate> {
    if observations.is_empty() {
        return Err(Error::domain("no observations"));
    }
    let ones = observations.iter().filter(|&&o| o).count();
    let noisy = ones as f64 / observations.len() as f64;
    Ok(BernoulliEstimate {
        noisy,
        clean: recover_posterior(noisy, noise),
    })
}

/// Log-likelihood of `ones` successes in `total` flipped tosses as a function
/// of the clean success probability.
pub fn flipped_bernoulli_log_likelihood(p_clean: f64, ones: u64, total: u64, noise: &NoiseParams) -> f64 {
    let q = noise.slope() * p_clean + noise.gamma0;
    let zeros = total - ones;
    let term = |count: u64, prob: f64| {
        if count == 0 {
            0.0
        } else if prob <= 0.0 {
            f64::NEG_INFINITY
        } else {
            count as f64 * prob.ln()
        }
    };
    term(ones, q) + term(zeros, 1.0 - q)
}

/// Brute-force maximizer of the flipped-Bernoulli likelihood over a grid of
/// clean probabilities with the given step.
///
/// The grid spans every clean value whose noisy image is a probability, i.e.
/// `[-gamma0 / slope, (1 - gamma0) / slope]`, so it can reach unclamped
/// estimates as well.
pub fn grid_search_bernoulli(observations: &[bool], noise: &NoiseParams, step: f64) -> Result<f64> {
    if observations.is_empty() {
        return Err(Error::domain("no observations"));
    }
    if !(step > 0.0) {
        return Err(Error::domain(format!("grid step must be positive, got {step}")));
    }
    let total = observations.len() as u64;
    let ones = observations.iter().filter(|&&o| o).count() as u64;
    let lo = -noise.gamma0 / noise.slope();
    let hi = (1.0 - noise.gamma0) / noise.slope();
    let points = ((hi - lo) / step).floor() as u64;

    let mut best = (f64::NEG_INFINITY, lo);
    for i in 0..=points {
        let p = lo + i as f64 * step;
        let ll = flipped_bernoulli_log_likelihood(p, ones, total, noise);
        if ll > best.0 {
            best = (ll, p);
        }
    }
    // The upper end of the range is only on the grid by accident.
    let ll = flipped_bernoulli_log_likelihood(hi, ones, total, noise);
    if ll > best.0 {
        best = (ll, hi);
    }
    Ok(best.1)
}
