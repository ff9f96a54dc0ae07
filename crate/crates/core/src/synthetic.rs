//! Seeded two-dimensional benchmark problems with ten items each.

use std::f64::consts::TAU;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::labels::{ItemProbabilities, Labeling};
use crate::predictors::{
    posterior_two_gaussians, sigmoid_predictor_b, train_logistic, LogisticModel, Point2D,
    ProbabilityFile, TrainingData,
};

pub const ITEMS: usize = 10;

/// Fraction of labels resampled uniformly in problem (c).
pub const LABEL_NOISE: f64 = 0.2;

/// Gradient steps for the problem (c) fit. Enough for plain gradient
/// descent to settle on the regularized optimum.
pub const FIT_EPOCHS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Problem {
    /// Two unit Gaussians, true posterior.
    A,
    /// Labels drawn from a sigmoid of `x2 - x1`, true posterior.
    B,
    /// Noisy one-feature problem with a logistic fit as predictor.
    C,
}

impl Problem {
    pub const ALL: [Problem; 3] = [Problem::A, Problem::B, Problem::C];

    fn stream(self) -> u64 {
        match self {
            Problem::A => 1,
            Problem::B => 2,
            Problem::C => 3,
        }
    }
}

impl fmt::Display for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Problem::A => "a",
            Problem::B => "b",
            Problem::C => "c",
        })
    }
}

impl std::str::FromStr for Problem {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "a" => Ok(Problem::A),
            "b" => Ok(Problem::B),
            "c" => Ok(Problem::C),
            other => Err(format!("unknown problem `{other}`, expected a, b or c")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticInstance {
    pub problem: Problem,
    pub seed: u64,
    pub points: Vec<Point2D>,
    pub labels: Labeling,
    pub probs: ItemProbabilities,
    /// Items whose label was resampled by the noise step (problem (c) only).
    pub noisy: Vec<usize>,
}

impl SyntheticInstance {
    /// Probability-file form, with features and ground truth.
    pub fn to_file(&self) -> ProbabilityFile {
        ProbabilityFile {
            probs: self.probs.clone(),
            labels: Some(self.labels.clone()),
            payloads: vec![None; self.points.len()],
            points: Some(self.points.clone()),
        }
    }
}

/// Standard normals by Box-Muller over a uniform stream.
struct Normals {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl Normals {
    fn new(problem: Problem, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(problem.stream());
        Self { rng, spare: None }
    }

    fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    fn next(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // 1 - u lies in (0, 1], so the log is finite.
        let r = (-2.0 * (1.0 - self.uniform()).ln()).sqrt();
        let theta = TAU * self.uniform();
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    fn point(&mut self, center: (f64, f64)) -> Point2D {
        Point2D::new(center.0 + self.next(), center.1 + self.next())
    }
}

pub fn gen_problem_a(seed: u64) -> SyntheticInstance {
    let mut g = Normals::new(Problem::A, seed);
    let mut points = Vec::with_capacity(ITEMS);
    let mut labels = Vec::with_capacity(ITEMS);
    for (center, label) in [((0.0, 0.0), false), ((2.0, 2.0), true)] {
        for _ in 0..ITEMS / 2 {
            points.push(g.point(center));
            labels.push(label);
        }
    }
    let probs = points.iter().map(|&p| posterior_two_gaussians(p)).collect();
    SyntheticInstance {
        problem: Problem::A,
        seed,
        probs: ItemProbabilities::new(probs).expect("posteriors are in range"),
        points,
        labels: Labeling::new(labels),
        noisy: Vec::new(),
    }
}

pub fn gen_problem_b(seed: u64) -> SyntheticInstance {
    let mut g = Normals::new(Problem::B, seed);
    let mut points = Vec::with_capacity(ITEMS);
    for center in [(0.0, 0.0), (3.0, 3.0)] {
        for _ in 0..ITEMS / 2 {
            points.push(g.point(center));
        }
    }
    let probs: Vec<f64> = points.iter().map(|&p| sigmoid_predictor_b(p)).collect();
    let labels = probs.iter().map(|&p| g.uniform() < p).collect();
    SyntheticInstance {
        problem: Problem::B,
        seed,
        probs: ItemProbabilities::new(probs).expect("sigmoid outputs are in range"),
        points,
        labels: Labeling::new(labels),
        noisy: Vec::new(),
    }
}

pub fn gen_problem_c(seed: u64) -> SyntheticInstance {
    let mut g = Normals::new(Problem::C, seed);
    // Per-class random scale of the informative coordinate.
    let scale = [2.0 * g.uniform() - 1.0, 2.0 * g.uniform() - 1.0];
    let mut labels: Vec<bool> = (0..ITEMS).map(|i| i >= ITEMS / 2).collect();
    let informative: Vec<f64> = labels
        .iter()
        .map(|&y| if y { 1.0 } else { -1.0 } + g.next() * scale[usize::from(y)])
        .collect();
    let points: Vec<Point2D> = informative
        .into_iter()
        .map(|x1| Point2D::new(x1, g.next()))
        .collect();
    let mut noisy = Vec::new();
    for (i, label) in labels.iter_mut().enumerate() {
        if g.uniform() < LABEL_NOISE {
            noisy.push(i);
            *label = g.uniform() < 0.5;
        }
    }
    let model = LogisticModel {
        epochs: FIT_EPOCHS,
        ..LogisticModel::default()
    };
    let fit = train_logistic(&TrainingData::new(&points, &labels), model)
        .expect("ten distinct points");
    SyntheticInstance {
        problem: Problem::C,
        seed,
        probs: fit.predict_all(&points).expect("clamped predictions"),
        points,
        labels: Labeling::new(labels),
        noisy,
    }
}

pub fn generate(problem: Problem, seed: u64) -> SyntheticInstance {
    match problem {
        Problem::A => gen_problem_a(seed),
        Problem::B => gen_problem_b(seed),
        Problem::C => gen_problem_c(seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean(xs: impl Iterator<Item = f64>) -> f64 {
        let v: Vec<f64> = xs.collect();
        v.iter().sum::<f64>() / v.len() as f64
    }

    #[test]
    fn deterministic() {
        for problem in Problem::ALL {
            assert_eq!(generate(problem, 7), generate(problem, 7));
            assert_ne!(generate(problem, 7).points, generate(problem, 8).points);
        }
    }

    #[test]
    fn problems_use_distinct_streams() {
        assert_ne!(gen_problem_a(3).points, gen_problem_b(3).points);
    }

    #[test]
    fn problem_a_is_balanced_and_exact() {
        for seed in 0..50 {
            let inst = gen_problem_a(seed);
            assert_eq!(inst.labels.iter().filter(|&b| b).count(), 5);
            for (i, &p) in inst.points.iter().enumerate() {
                assert_eq!(inst.probs.get(i), posterior_two_gaussians(p));
            }
        }
    }

    #[test]
    fn box_muller_moments() {
        let mut g = Normals::new(Problem::A, 11);
        let xs: Vec<f64> = (0..200_000).map(|_| g.next()).collect();
        let m = mean(xs.iter().copied());
        let v = mean(xs.iter().map(|x| (x - m).powi(2)));
        assert!(m.abs() < 0.01 && (v - 1.0).abs() < 0.01, "{m} {v}");
    }

    #[test]
    fn problem_b_labels_follow_probabilities() {
        // Bucket by predicted probability; each bucket's label frequency
        // must sit within 3 sigma of its mean probability.
        let mut buckets = vec![(0.0, 0.0, 0usize); 5];
        for seed in 0..2000 {
            let inst = gen_problem_b(seed);
            for i in 0..ITEMS {
                let p = inst.probs.get(i);
                let b = &mut buckets[((p * 5.0) as usize).min(4)];
                b.0 += p;
                b.1 += f64::from(u8::from(inst.labels.get(i)));
                b.2 += 1;
            }
        }
        for (sum_p, hits, n) in buckets {
            let n = n as f64;
            let q = sum_p / n;
            let sigma = (q * (1.0 - q) / n).sqrt();
            assert!((hits / n - q).abs() <= 3.0 * sigma, "{q} vs {}", hits / n);
        }
    }

    #[test]
    fn problem_c_noise_rate() {
        let flipped = mean((0..2000).map(|s| gen_problem_c(s).noisy.len() as f64));
        assert!((flipped - 2.0).abs() < 0.3, "{flipped}");
    }

    #[test]
    fn problem_c_fit_is_converged() {
        let inst = gen_problem_c(5);
        let labels: Vec<bool> = inst.labels.iter().collect();
        let data = TrainingData::new(&inst.points, &labels);
        let model = LogisticModel { epochs: FIT_EPOCHS, ..LogisticModel::default() };
        let fit = train_logistic(&data, model).unwrap();
        let g = fit.gradient(&data);
        assert!(g.iter().all(|x| x.abs() < 1e-6), "{g:?}");
    }

    #[test]
    fn export_round_trip() {
        let inst = gen_problem_c(2);
        let file = ProbabilityFile::from_value(inst.to_file().to_json()).unwrap();
        assert_eq!(file.points.as_deref(), Some(&inst.points[..]));
        assert_eq!(file.labels.as_ref(), Some(&inst.labels));
    }
}
