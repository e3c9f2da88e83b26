//! Synthetic two-class problems in the plane.
//!
//! Each class is a mixture of two bivariate Gaussians. A problem instance
//! fixes both mixtures and the clean class priors, so the clean and noisy
//! posteriors are known exactly and a Bayes-optimal ceiling is available for
//! every dataset drawn from it.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::calculus::{ClassPriors, NoiseParams};
use crate::error::{Error, Result};
use crate::seeds::{self, Purpose};

/// A bivariate normal with a cached Cholesky factor of its covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian2 {
    mean: [f64; 2],
    cov: [[f64; 2]; 2],
    // lower-triangular factor: [[l11, 0], [l21, l22]]
    l11: f64,
    l21: f64,
    l22: f64,
}

impl Gaussian2 {
    /// Fails unless `cov` is symmetric positive definite.
    pub fn new(mean: [f64; 2], cov: [[f64; 2]; 2]) -> Result<Self> {
        let [[a, b], [b2, c]] = cov;
        if !(mean.iter().chain(cov.iter().flatten()).all(|v| v.is_finite())) {
            return Err(Error::domain("gaussian parameters must be finite"));
        }
        if (b - b2).abs() > 1e-12 * (1.0 + b.abs()) {
            return Err(Error::domain(format!("covariance is not symmetric: {cov:?}")));
        }
        if a <= 0.0 {
            return Err(Error::domain(format!("covariance is not positive definite: {cov:?}")));
        }
        let l11 = a.sqrt();
        let l21 = b / l11;
        let rest = c - l21 * l21;
        if rest <= 0.0 {
            return Err(Error::domain(format!("covariance is not positive definite: {cov:?}")));
        }
        Ok(Self {
            mean,
            cov,
            l11,
            l21,
            l22: rest.sqrt(),
        })
    }

    pub fn mean(&self) -> [f64; 2] {
        self.mean
    }

    pub fn cov(&self) -> [[f64; 2]; 2] {
        self.cov
    }

    pub fn log_density(&self, x: [f64; 2]) -> f64 {
        let d0 = x[0] - self.mean[0];
        let d1 = x[1] - self.mean[1];
        let y0 = d0 / self.l11;
        let y1 = (d1 - self.l21 * y0) / self.l22;
        -(2.0 * PI).ln() - (self.l11 * self.l22).ln() - 0.5 * (y0 * y0 + y1 * y1)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        let z0: f64 = rng.sample(StandardNormal);
        let z1: f64 = rng.sample(StandardNormal);
        [
            self.mean[0] + self.l11 * z0,
            self.mean[1] + self.l21 * z0 + self.l22 * z1,
        ]
    }
}

/// Class-conditional density: a finite Gaussian mixture in the plane.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmClassModel {
    weights: Vec<f64>,
    components: Vec<Gaussian2>,
}

impl GmmClassModel {
    pub fn new(weights: Vec<f64>, components: Vec<Gaussian2>) -> Result<Self> {
        if weights.is_empty() || weights.len() != components.len() {
            return Err(Error::domain(format!(
                "need one weight per component, got {} weights for {} components",
                weights.len(),
                components.len()
            )));
        }
        if weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::domain("mixture weights must be non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::domain(format!("mixture weights sum to {total}, not 1")));
        }
        Ok(Self {
            weights,
            components,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[Gaussian2] {
        &self.components
    }

    /// Log of the mixture density, combined with log-sum-exp.
    pub fn log_density(&self, x: [f64; 2]) -> f64 {
        let terms: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.components)
            .filter(|(&w, _)| w > 0.0)
            .map(|(w, g)| w.ln() + g.log_density(x))
            .collect();
        log_sum_exp(&terms)
    }

    pub fn density(&self, x: [f64; 2]) -> f64 {
        self.log_density(x).exp()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = self.components.len() - 1;
        for (k, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                pick = k;
                break;
            }
        }
        self.components[pick].sample(rng)
    }
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Mixture density `sum_k w_k N(x; mu_k, Sigma_k)`.
pub fn gmm_density(model: &GmmClassModel, x: [f64; 2]) -> f64 {
    model.density(x)
}

/// Everything needed to regenerate a data distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    pub model1: GmmClassModel,
    pub model0: GmmClassModel,
    pub clean_priors: ClassPriors,
    pub seed: u64,
}

impl ProblemInstance {
    pub fn with_priors(mut self, priors: ClassPriors) -> Self {
        self.clean_priors = priors;
        self
    }
}

/// Draws a random problem with equal clean priors.
///
/// A base two-component mixture is drawn first: weights uniform on the
/// simplex, means uniform in `[-3, 3]^2`, covariances `R diag(l1, l2) R^T`
/// with eigenvalues uniform in `[0.3, 1.5]` and a uniformly random rotation.
/// Class 0 is the base mixture; class 1 is the same mixture translated by
/// `separation_scale` along a random unit vector, so the overlap between the
/// classes shrinks as the scale grows.
pub fn make_random_problem(seed: u64, separation_scale: f64) -> Result<ProblemInstance> {
    if !(separation_scale > 0.0 && separation_scale.is_finite()) {
        return Err(Error::domain(format!(
            "separation_scale must be positive, got {separation_scale}"
        )));
    }
    let mut rng = seeds::stream(seed, Purpose::Problem);
    let w: f64 = rng.random();
    let weights = vec![w, 1.0 - w];

    let mut base = Vec::with_capacity(2);
    for _ in 0..2 {
        let mean = [rng.random_range(-3.0..=3.0), rng.random_range(-3.0..=3.0)];
        let l1: f64 = rng.random_range(0.3..=1.5);
        let l2: f64 = rng.random_range(0.3..=1.5);
        let theta: f64 = rng.random_range(0.0..PI);
        let (s, c) = theta.sin_cos();
        let cov = [
            [c * c * l1 + s * s * l2, c * s * (l1 - l2)],
            [c * s * (l1 - l2), s * s * l1 + c * c * l2],
        ];
        base.push((mean, cov));
    }
    let phi: f64 = rng.random_range(0.0..2.0 * PI);
    let offset = [separation_scale * phi.cos(), separation_scale * phi.sin()];

    let build = |shift: [f64; 2]| -> Result<GmmClassModel> {
        let comps = base
            .iter()
            .map(|(m, cov)| Gaussian2::new([m[0] + shift[0], m[1] + shift[1]], *cov))
            .collect::<Result<Vec<_>>>()?;
        GmmClassModel::new(weights.clone(), comps)
    };

    Ok(ProblemInstance {
        model1: build(offset)?,
        model0: build([0.0, 0.0])?,
        clean_priors: ClassPriors::equal(),
        seed,
    })
}

/// A feature vector with its clean label and the label actually observed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledSample {
    pub x: [f64; 2],
    pub y_clean: u8,
    pub z_observed: u8,
}

/// Draws `n` samples: labels from the clean priors, features from the chosen
/// class's mixture. Observed labels start out equal to the clean ones.
///
/// Samples are drawn sequentially, so a smaller `n` with the same seed yields
/// a prefix of a larger draw.
pub fn sample_dataset(problem: &ProblemInstance, n: usize, seed: u64) -> Result<Vec<LabeledSample>> {
    if n == 0 {
        return Err(Error::domain("dataset size must be at least 1"));
    }
    let mut rng = seeds::stream(seed, Purpose::Sample);
    let p1 = problem.clean_priors.p1();
    Ok((0..n)
        .map(|_| {
            let y = u8::from(rng.random::<f64>() < p1);
            let model = if y == 1 { &problem.model1 } else { &problem.model0 };
            let x = model.sample(&mut rng);
            LabeledSample {
                x,
                y_clean: y,
                z_observed: y,
            }
        })
        .collect())
}

/// Flips observed labels independently of the features: a clean 1 is
/// observed as 0 with probability `gamma1`, a clean 0 as 1 with probability
/// `gamma0`. One uniform draw per sample, in order.
pub fn flip_labels(data: &[LabeledSample], noise: &NoiseParams, seed: u64) -> Vec<LabeledSample> {
    let mut rng = seeds::stream(seed, Purpose::Flip);
    data.iter()
        .map(|s| {
            let rate = if s.y_clean == 1 { noise.gamma1() } else { noise.gamma0() };
            let flip = rng.random::<f64>() < rate;
            LabeledSample {
                z_observed: if flip { 1 - s.y_clean } else { s.y_clean },
                ..*s
            }
        })
        .collect()
}

/// Observed outcomes of `count` coin tosses with heads probability `p`, each
/// reported through the same flipping process as the labels.
pub fn flipped_coin_tosses(p: f64, noise: &NoiseParams, count: usize, seed: u64) -> Result<Vec<bool>> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::domain(format!("heads probability {p} is outside [0, 1]")));
    }
    let mut rng = seeds::stream(seed, Purpose::Bernoulli);
    Ok((0..count)
        .map(|_| {
            let heads = rng.random::<f64>() < p;
            let rate = if heads { noise.gamma1() } else { noise.gamma0() };
            heads != (rng.random::<f64>() < rate)
        })
        .collect())
}

/// Bayes posterior `p(y=1|x)` of the clean label, formed in log-odds space.
/// Falls back to the prior when both class densities vanish.
pub fn clean_posterior(problem: &ProblemInstance, x: [f64; 2]) -> f64 {
    let p1 = problem.clean_priors.p1();
    if p1 == 0.0 || p1 == 1.0 {
        return p1;
    }
    let l1 = problem.model1.log_density(x);
    let l0 = problem.model0.log_density(x);
    match (l1 == f64::NEG_INFINITY, l0 == f64::NEG_INFINITY) {
        (true, true) => p1,
        (true, false) => 0.0,
        (false, true) => 1.0,
        (false, false) => {
            let log_odds = p1.ln() - (1.0 - p1).ln() + l1 - l0;
            crate::calculus::sigmoid(log_odds)
        }
    }
}

/// Posterior `p(z=1|x)` of the observed label, computed directly from the
/// class densities and the flip rates rather than through the affine map.
pub fn noisy_posterior(problem: &ProblemInstance, noise: &NoiseParams, x: [f64; 2]) -> f64 {
    let a1 = problem.clean_priors.p1() * problem.model1.density(x);
    let a0 = problem.clean_priors.p0() * problem.model0.density(x);
    if a1 + a0 == 0.0 {
        let p1 = problem.clean_priors.p1();
        return (1.0 - noise.gamma1()) * p1 + noise.gamma0() * (1.0 - p1);
    }
    ((1.0 - noise.gamma1()) * a1 + noise.gamma0() * a0) / (a1 + a0)
}

/// Accuracy against the clean labels of deciding class 1 whenever the exact
/// clean posterior is at least 1/2.
pub fn bayes_accuracy(problem: &ProblemInstance, test: &[LabeledSample]) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::domain("empty test set"));
    }
    let correct = test
        .iter()
        .filter(|s| u8::from(clean_posterior(problem, s.x) >= 0.5) == s.y_clean)
        .count();
    Ok(correct as f64 / test.len() as f64)
}

pub const DATASET_HEADER: [&str; 4] = ["x1", "x2", "y_clean", "z_observed"];

/// Writes samples as CSV with 17 significant digits per coordinate.
pub fn write_dataset_to<W: Write>(writer: W, data: &[LabeledSample]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(DATASET_HEADER)?;
    for s in data {
        w.write_record([
            format!("{:.16e}", s.x[0]),
            format!("{:.16e}", s.x[1]),
            s.y_clean.to_string(),
            s.z_observed.to_string(),
        ])?;
    }
    w.flush()
}

pub fn write_dataset(path: &Path, data: &[LabeledSample]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset_to(std::io::BufWriter::new(file), data).map_err(|e| Error::io(path, e))
}

/// Reads a dataset written by [`write_dataset_to`]. `origin` only labels
/// diagnostics, which carry 1-based line numbers.
pub fn read_dataset_from<R: Read>(reader: R, origin: &Path) -> Result<Vec<LabeledSample>> {
    let parse_err = |line: u64, message: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        message,
    };
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = r
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    if header.iter().collect::<Vec<_>>() != DATASET_HEADER {
        return Err(parse_err(
            1,
            format!(
                "expected header {}, found {}",
                DATASET_HEADER.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }

    let mut out = Vec::new();
    for record in r.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let float = |i: usize| -> Result<f64> {
            let v: f64 = record[i]
                .trim()
                .parse()
                .map_err(|_| parse_err(line, format!("{}: not a number: {:?}", DATASET_HEADER[i], &record[i])))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("{}: non-finite value", DATASET_HEADER[i])));
            }
            Ok(v)
        };
        let label = |i: usize| -> Result<u8> {
            match record[i].trim() {
                "0" => Ok(0),
                "1" => Ok(1),
                other => Err(parse_err(line, format!("{}: expected 0 or 1, got {other:?}", DATASET_HEADER[i]))),
            }
        };
        out.push(LabeledSample {
            x: [float(0)?, float(1)?],
            y_clean: label(2)?,
            z_observed: label(3)?,
        });
    }
    if out.is_empty() {
        return Err(parse_err(1, "dataset has no rows".into()));
    }
    Ok(out)
}

pub fn read_dataset(path: &Path) -> Result<Vec<LabeledSample>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset_from(std::io::BufReader::new(file), path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::{corrupt_posterior, propagate_priors};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn unit_model(mean: [f64; 2]) -> GmmClassModel {
        GmmClassModel::new(vec![1.0], vec![Gaussian2::new(mean, [[1.0, 0.0], [0.0, 1.0]]).unwrap()]).unwrap()
    }

    #[test]
    fn density_at_mean_of_unit_gaussian() {
        let m = unit_model([0.3, -1.2]);
        assert_abs_diff_eq!(gmm_density(&m, [0.3, -1.2]), 1.0 / (2.0 * PI), epsilon = 1e-15);
        assert_abs_diff_eq!(gmm_density(&m, [0.3, -1.2]), 0.1591549, epsilon = 1e-7);
    }

    #[test]
    fn density_matches_closed_form_with_correlation() {
        // independent evaluation through the explicit inverse and determinant
        let cov = [[1.3, 0.4], [0.4, 0.7]];
        let g = Gaussian2::new([0.5, 1.0], cov).unwrap();
        let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
        let inv = [[cov[1][1] / det, -cov[0][1] / det], [-cov[1][0] / det, cov[0][0] / det]];
        let x = [1.7, -0.2];
        let d = [x[0] - 0.5, x[1] - 1.0];
        let q = d[0] * (inv[0][0] * d[0] + inv[0][1] * d[1]) + d[1] * (inv[1][0] * d[0] + inv[1][1] * d[1]);
        let expected = (-0.5 * q).exp() / (2.0 * PI * det.sqrt());
        assert_abs_diff_eq!(g.log_density(x).exp(), expected, epsilon = 1e-15);
    }

    #[test]
    fn density_integrates_to_one() {
        let problem = make_random_problem(11, 1.0).unwrap();
        for model in [&problem.model0, &problem.model1] {
            let h = 0.02;
            let mut total = 0.0;
            let lo = -14.0;
            let steps = (28.0 / h) as usize;
            for i in 0..steps {
                for j in 0..steps {
                    let x = [lo + (i as f64 + 0.5) * h, lo + (j as f64 + 0.5) * h];
                    total += gmm_density(model, x);
                }
            }
            total *= h * h;
            assert!((total - 1.0).abs() < 1e-3, "integral {total}");
        }
    }

    #[test]
    fn rejects_bad_models() {
        assert!(Gaussian2::new([0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]]).is_err());
        assert!(Gaussian2::new([0.0, 0.0], [[1.0, 0.1], [0.2, 1.0]]).is_err());
        assert!(Gaussian2::new([0.0, 0.0], [[0.0, 0.0], [0.0, 1.0]]).is_err());
        let g = Gaussian2::new([0.0, 0.0], [[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert!(GmmClassModel::new(vec![0.6, 0.6], vec![g.clone(), g.clone()]).is_err());
        assert!(GmmClassModel::new(vec![1.2, -0.2], vec![g.clone(), g.clone()]).is_err());
        assert!(GmmClassModel::new(vec![1.0], vec![g.clone(), g]).is_err());
        assert!(make_random_problem(0, 0.0).is_err());
        assert!(make_random_problem(0, -1.0).is_err());
    }

    #[test]
    fn problems_are_deterministic() {
        assert_eq!(make_random_problem(5, 2.0).unwrap(), make_random_problem(5, 2.0).unwrap());
        assert_ne!(make_random_problem(5, 2.0).unwrap(), make_random_problem(6, 2.0).unwrap());
    }

    #[test]
    fn generated_covariances_are_valid() {
        for seed in 0..200 {
            let p = make_random_problem(seed, 1.5).unwrap();
            for m in [&p.model0, &p.model1] {
                assert_abs_diff_eq!(m.weights().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
                for g in m.components() {
                    let [[a, b], [_, c]] = g.cov();
                    let tr = a + c;
                    let det = a * c - b * b;
                    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
                    let (lmin, lmax) = (tr / 2.0 - disc, tr / 2.0 + disc);
                    assert!(lmin > 0.3 - 1e-9 && lmax < 1.5 + 1e-9, "{lmin} {lmax}");
                    assert!(Gaussian2::new(g.mean(), g.cov()).is_ok());
                    for v in g.mean() {
                        assert!(v.abs() <= 3.0 + 1.5 + 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn bayes_accuracy_tracks_separation() {
        for seed in [1, 2, 3] {
            let near = make_random_problem(seed, 0.01).unwrap();
            let test = sample_dataset(&near, 100_000, seed + 100).unwrap();
            let acc = bayes_accuracy(&near, &test).unwrap();
            assert!((acc - 0.5).abs() < 0.02, "seed {seed}: {acc}");

            let far = make_random_problem(seed, 10.0).unwrap();
            let test = sample_dataset(&far, 100_000, seed + 100).unwrap();
            let acc = bayes_accuracy(&far, &test).unwrap();
            assert!(acc > 0.99, "seed {seed}: {acc}");
        }
    }

    #[test]
    fn identical_classes_have_prior_posterior() {
        let p = make_random_problem(3, 1.0).unwrap();
        let same = ProblemInstance {
            model1: p.model0.clone(),
            ..p.clone()
        }
        .with_priors(ClassPriors::new(0.3).unwrap());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let x = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
            assert_abs_diff_eq!(clean_posterior(&same, x), 0.3, epsilon = 1e-12);
        }
        let balanced = same.with_priors(ClassPriors::equal());
        let test = sample_dataset(&balanced, 50_000, 9).unwrap();
        let acc = bayes_accuracy(&balanced, &test).unwrap();
        assert!((acc - 0.5).abs() < 0.01, "{acc}");
    }

    #[test]
    fn mirror_symmetric_problem_is_even_on_axis() {
        let m1 = unit_model([1.5, 0.0]);
        let m0 = unit_model([-1.5, 0.0]);
        let p = ProblemInstance {
            model1: m1,
            model0: m0,
            clean_priors: ClassPriors::equal(),
            seed: 0,
        };
        for y in [-3.0, 0.0, 0.7, 10.0] {
            assert_eq!(clean_posterior(&p, [0.0, y]), 0.5);
        }
    }

    #[test]
    fn posterior_handles_vanishing_densities() {
        let p = ProblemInstance {
            model1: unit_model([0.0, 0.0]),
            model0: unit_model([1.0, 0.0]),
            clean_priors: ClassPriors::new(0.25).unwrap(),
            seed: 0,
        };
        // both log densities are finite this far out; the odds still resolve
        let far = clean_posterior(&p, [1e10, 0.0]);
        assert!((0.0..=1.0).contains(&far));
        assert_eq!(clean_posterior(&p, [f64::INFINITY, 0.0]), 0.25);
        assert_eq!(noisy_posterior(&p, &NoiseParams::noiseless(), [1e200, 0.0]), 0.25);
    }

    #[test]
    fn posterior_matches_hand_bayes_ratio() {
        let p = make_random_problem(21, 1.2).unwrap().with_priors(ClassPriors::new(0.35).unwrap());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let x = [rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)];
            let f1 = gmm_density(&p.model1, x);
            let f0 = gmm_density(&p.model0, x);
            let expected = 0.35 * f1 / (0.35 * f1 + 0.65 * f0);
            assert_abs_diff_eq!(clean_posterior(&p, x), expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn sampling_concentrates_on_priors() {
        let p = make_random_problem(4, 1.0).unwrap();
        let data = sample_dataset(&p, 100_000, 17).unwrap();
        let frac = data.iter().filter(|s| s.y_clean == 1).count() as f64 / 1e5;
        assert!((frac - 0.5).abs() < 0.01, "{frac}");
        assert!(data.iter().all(|s| s.y_clean == s.z_observed));
        assert_eq!(data, sample_dataset(&p, 100_000, 17).unwrap());
        let prefix = sample_dataset(&p, 200, 17).unwrap();
        assert_eq!(prefix[..], data[..200]);

        let one = sample_dataset(&p, 1, 3).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].y_clean, one[0].z_observed);
        assert!(sample_dataset(&p, 0, 3).is_err());
    }

    #[test]
    fn flipping_rates_and_priors() {
        let p = make_random_problem(4, 1.0).unwrap();
        let data = sample_dataset(&p, 100_000, 18).unwrap();
        assert_eq!(flip_labels(&data, &NoiseParams::noiseless(), 1), data);

        let noise = NoiseParams::new(0.3, 0.1).unwrap();
        let flipped = flip_labels(&data, &noise, 5);
        let (mut ones, mut ones_flipped, mut zeros, mut zeros_flipped) = (0, 0, 0, 0);
        for (a, b) in data.iter().zip(&flipped) {
            assert_eq!(a.x, b.x);
            assert_eq!(a.y_clean, b.y_clean);
            if a.y_clean == 1 {
                ones += 1;
                ones_flipped += usize::from(b.z_observed == 0);
            } else {
                zeros += 1;
                zeros_flipped += usize::from(b.z_observed == 1);
            }
        }
        let r1 = ones_flipped as f64 / ones as f64;
        let r0 = zeros_flipped as f64 / zeros as f64;
        assert!((r1 - 0.3).abs() < 0.01, "{r1}");
        assert!((r0 - 0.1).abs() < 0.01, "{r0}");

        let observed = flipped.iter().filter(|s| s.z_observed == 1).count() as f64 / 1e5;
        let expected = propagate_priors(&ClassPriors::equal(), &noise).p1();
        assert_abs_diff_eq!(expected, 0.4, epsilon = 1e-15);
        assert!((observed - expected).abs() < 0.01, "{observed}");
    }

    #[test]
    fn bayes_accuracy_rejects_empty() {
        let p = make_random_problem(4, 1.0).unwrap();
        assert!(bayes_accuracy(&p, &[]).is_err());
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let origin = Path::new("mem.csv");
        let bad = "x1,x2,y_clean,z_observed\n1.0,2.0,1,1\n1.0,abc,0,0\n";
        match read_dataset_from(bad.as_bytes(), origin) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let bad_label = "x1,x2,y_clean,z_observed\n1.0,2.0,2,1\n";
        assert!(matches!(read_dataset_from(bad_label.as_bytes(), origin), Err(Error::Parse { line: 2, .. })));
        let bad_header = "a,b,c,d\n1,2,0,0\n";
        assert!(matches!(read_dataset_from(bad_header.as_bytes(), origin), Err(Error::Parse { line: 1, .. })));
        let ragged = "x1,x2,y_clean,z_observed\n1.0,2.0,1\n";
        assert!(matches!(read_dataset_from(ragged.as_bytes(), origin), Err(Error::Parse { line: 2, .. })));
    }

    proptest! {
        #[test]
        fn noisy_posterior_is_affine_image(seed in 0u64..1000, x0 in -6.0..6.0f64, x1 in -6.0..6.0f64,
                                           g1 in 0.0..0.5f64, g0 in 0.0..0.49f64, p1 in 0.05..0.95f64) {
            let p = make_random_problem(seed, 1.5).unwrap().with_priors(ClassPriors::new(p1).unwrap());
            let noise = NoiseParams::new(g1, g0).unwrap();
            let via_map = corrupt_posterior(clean_posterior(&p, [x0, x1]), &noise).unwrap();
            prop_assert!((via_map - noisy_posterior(&p, &noise, [x0, x1])).abs() < 1e-12);
        }

        #[test]
        fn csv_round_trip_is_bit_exact(seed in 0u64..10_000, n in 1usize..50) {
            let p = make_random_problem(seed, 1.0).unwrap();
            let data = flip_labels(&sample_dataset(&p, n, seed).unwrap(), &NoiseParams::new(0.2, 0.3).unwrap(), seed);
            let mut buf = Vec::new();
            write_dataset_to(&mut buf, &data).unwrap();
            let back = read_dataset_from(buf.as_slice(), Path::new("mem")).unwrap();
            prop_assert_eq!(back, data);
        }
    }
}
