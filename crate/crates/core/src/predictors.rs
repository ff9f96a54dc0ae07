//! Probability providers.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{ItemProbabilities, Labeling, EPS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2D {
    pub x1: f64,
    pub x2: f64,
}

impl Point2D {
    pub fn new(x1: f64, x2: f64) -> Self {
        Self { x1, x2 }
    }
}

fn clamp(p: f64) -> f64 {
    p.clamp(EPS, 1.0 - EPS)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// `P(y = 1 | x)` for unit-covariance Gaussians at (0,0) (negative) and
/// (2,2) (positive) with equal priors.
pub fn posterior_two_gaussians(p: Point2D) -> f64 {
    let d0 = p.x1 * p.x1 + p.x2 * p.x2;
    let d1 = (p.x1 - 2.0).powi(2) + (p.x2 - 2.0).powi(2);
    clamp(1.0 / (1.0 + ((d1 - d0) / 2.0).exp()))
}

pub fn sigmoid_predictor_b(p: Point2D) -> f64 {
    clamp(sigmoid(((p.x2 - p.x1) / 2.0) / 0.3))
}

/// Two-feature logistic regression, `sigma(w1 x1 + w2 x2 + b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub w1: f64,
    pub w2: f64,
    pub b: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    /// L2 coefficient on `w1`, `w2` (the bias is not penalized).
    pub l2: f64,
}

impl Default for LogisticModel {
    fn default() -> Self {
        Self {
            w1: 0.0,
            w2: 0.0,
            b: 0.0,
            learning_rate: 0.1,
            epochs: 200,
            l2: 1.0,
        }
    }
}

/// Labeled points plus an optional guess known to contain an error.
#[derive(Debug, Clone, Copy)]
pub struct TrainingData<'a> {
    pub points: &'a [Point2D],
    pub labels: &'a [bool],
    /// Points of the pending incorrect guess with their pseudo-labels.
    pub pending: Option<(&'a [Point2D], &'a [bool])>,
}

impl<'a> TrainingData<'a> {
    pub fn new(points: &'a [Point2D], labels: &'a [bool]) -> Self {
        Self {
            points,
            labels,
            pending: None,
        }
    }

    pub fn with_pending(mut self, points: &'a [Point2D], pseudo: &'a [bool]) -> Self {
        self.pending = Some((points, pseudo));
        self
    }

    fn validate(&self) -> Result<()> {
        if self.points.len() != self.labels.len() {
            return Err(Error::LengthMismatch {
                expected: self.points.len(),
                got: self.labels.len(),
            });
        }
        let pending = self.pending.unwrap_or((&[], &[]));
        if pending.0.len() != pending.1.len() {
            return Err(Error::LengthMismatch {
                expected: pending.0.len(),
                got: pending.1.len(),
            });
        }
        let all: Vec<&Point2D> = self.points.iter().chain(pending.0).collect();
        if all.is_empty() {
            return Err(Error::DegenerateInput("no training data"));
        }
        if all.iter().any(|p| !p.x1.is_finite() || !p.x2.is_finite()) {
            return Err(Error::Invalid("non-finite point".into()));
        }
        if all.len() >= 2 && all.iter().all(|p| **p == *all[0]) {
            return Err(Error::DegenerateInput("all points identical"));
        }
        Ok(())
    }
}

impl LogisticModel {
    fn logit(&self, p: &Point2D) -> f64 {
        self.w1 * p.x1 + self.w2 * p.x2 + self.b
    }

    pub fn predict(&self, p: &Point2D) -> f64 {
        clamp(sigmoid(self.logit(p)))
    }

    pub fn predict_all(&self, points: &[Point2D]) -> Result<ItemProbabilities> {
        ItemProbabilities::new(points.iter().map(|p| self.predict(p)).collect())
    }

    /// Training objective: summed cross entropy over labeled points, plus
    /// `-ln(1 - P(pending guess correct))`, plus the L2 penalty.
    pub fn loss(&self, data: &TrainingData) -> f64 {
        let mut total = 0.0;
        for (p, &y) in data.points.iter().zip(data.labels) {
            let z = self.logit(p);
            total += softplus(z) - if y { z } else { 0.0 };
        }
        if let Some((pts, pseudo)) = data.pending {
            let log_p = self.log_pending_correct(pts, pseudo);
            total += -(-log_p.exp_m1()).ln();
        }
        total + 0.5 * self.l2 * (self.w1 * self.w1 + self.w2 * self.w2)
    }

    fn log_pending_correct(&self, pts: &[Point2D], pseudo: &[bool]) -> f64 {
        pts.iter()
            .zip(pseudo)
            .map(|(p, &y)| {
                let z = self.logit(p);
                // ln sigma(z) or ln(1 - sigma(z))
                -softplus(if y { -z } else { z })
            })
            .sum()
    }

    /// Analytic gradient of [`loss`](Self::loss) with respect to `(w1, w2, b)`.
    pub fn gradient(&self, data: &TrainingData) -> [f64; 3] {
        let mut g = [self.l2 * self.w1, self.l2 * self.w2, 0.0];
        let mut add = |p: &Point2D, dz: f64| {
            g[0] += dz * p.x1;
            g[1] += dz * p.x2;
            g[2] += dz;
        };
        for (p, &y) in data.points.iter().zip(data.labels) {
            add(p, sigmoid(self.logit(p)) - if y { 1.0 } else { 0.0 });
        }
        if let Some((pts, pseudo)) = data.pending {
            let log_p = self.log_pending_correct(pts, pseudo);
            let odds = log_p.exp() / -log_p.exp_m1();
            for (p, &y) in pts.iter().zip(pseudo) {
                let s = sigmoid(self.logit(p));
                add(p, odds * (if y { 1.0 } else { 0.0 } - s));
            }
        }
        g
    }
}

/// Full-batch gradient descent for `model.epochs` steps, starting from
/// `model`'s weights. A step that increases the loss is retried with half
/// the step size.
pub fn train_logistic(data: &TrainingData, model: LogisticModel) -> Result<LogisticModel> {
    data.validate()?;
    let mut m = model;
    let mut lr = model.learning_rate;
    let mut loss = m.loss(data);
    for _ in 0..model.epochs {
        let g = m.gradient(data);
        loop {
            let next = LogisticModel {
                w1: m.w1 - lr * g[0],
                w2: m.w2 - lr * g[1],
                b: m.b - lr * g[2],
                ..m
            };
            let next_loss = next.loss(data);
            if next_loss <= loss || lr < 1e-12 {
                m = next;
                loss = next_loss;
                break;
            }
            lr *= 0.5;
        }
    }
    debug_assert!(m.w1.is_finite() && m.w2.is_finite() && m.b.is_finite());
    Ok(m)
}

/// Contents of a probability file.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityFile {
    pub probs: ItemProbabilities,
    pub labels: Option<Labeling>,
    /// Opaque display payloads, one per item.
    pub payloads: Vec<Option<String>>,
    /// Feature vectors when every item carries one.
    pub points: Option<Vec<Point2D>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileItem {
    id: usize,
    p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    payload: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    x: Option<[f64; 2]>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileDoc {
    items: Vec<FileItem>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<u8>>,
}

impl ProbabilityFile {
    pub fn parse(text: &str) -> Result<Self> {
        let doc: FileDoc = serde_json::from_str(text)?;
        Self::from_doc(doc)
    }

    pub fn from_value(value: serde_json::Value) -> Result<Self> {
        let doc: FileDoc = serde_json::from_value(value)?;
        Self::from_doc(doc)
    }

    fn from_doc(doc: FileDoc) -> Result<Self> {
        for (i, item) in doc.items.iter().enumerate() {
            if item.id != i {
                return Err(Error::Invalid(format!(
                    "items[{i}]: id {} out of order, ids must be 0..N-1 in increasing order",
                    item.id
                )));
            }
        }
        let probs = ItemProbabilities::new(doc.items.iter().map(|it| it.p).collect())?;
        let labels = match doc.labels {
            None => None,
            Some(bits) => {
                if bits.len() != probs.len() {
                    return Err(Error::LengthMismatch {
                        expected: probs.len(),
                        got: bits.len(),
                    });
                }
                Some(Labeling::from_bits(&bits)?)
            }
        };
        let points = doc
            .items
            .iter()
            .map(|it| it.x.map(|[a, b]| Point2D::new(a, b)))
            .collect::<Option<Vec<_>>>();
        Ok(Self {
            probs,
            labels,
            payloads: doc.items.into_iter().map(|it| it.payload).collect(),
            points,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let doc = FileDoc {
            items: (0..self.probs.len())
                .map(|i| FileItem {
                    id: i,
                    p: self.probs.get(i),
                    payload: self.payloads.get(i).cloned().flatten(),
                    x: self.points.as_ref().map(|pts| [pts[i].x1, pts[i].x2]),
                })
                .collect(),
            labels: self
                .labels
                .as_ref()
                .map(|l| l.iter().map(u8::from).collect()),
        };
        serde_json::to_value(doc).expect("serializable")
    }
}

pub fn load_probability_file(path: &Path) -> Result<ProbabilityFile> {
    ProbabilityFile::load(path)
}
