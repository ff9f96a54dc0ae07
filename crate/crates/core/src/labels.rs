//! Probability model over dataset labelings.
//!
//! Items are independent Bernoulli variables, so every quantity over the
//! `2^N` labelings factors into per-item terms.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Lower clamp for item probabilities; the upper clamp is `1 - EPS`.
pub const EPS: f64 = 1e-6;

/// Largest dataset for which labelings may be enumerated.
pub const MAX_ENUMERATION_ITEMS: usize = 25;

/// Binary entropy in bits.
pub fn binary_entropy(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return 0.0;
    }
    -(p * p.log2() + (1.0 - p) * (1.0 - p).log2())
}

fn clamp(p: f64) -> f64 {
    p.clamp(EPS, 1.0 - EPS)
}

/// Predicted positive-class probability for every dataset item.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemProbabilities {
    probs: Vec<f64>,
}

impl ItemProbabilities {
    /// Validates that every entry is in `[0, 1]` and clamps to `[EPS, 1 - EPS]`.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Empty);
        }
        for (index, &value) in probs.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::InvalidProbability { index, value });
            }
        }
        Ok(Self {
            probs: probs.into_iter().map(clamp).collect(),
        })
    }

    /// Uniform `p` for `n` items.
    pub fn uniform(n: usize, p: f64) -> Result<Self> {
        Self::new(vec![p; n])
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    pub fn get(&self, i: usize) -> f64 {
        self.probs[i]
    }

    /// Per-item argmax label.
    pub fn pseudo_label(&self, i: usize) -> bool {
        self.probs[i] >= 0.5
    }

    /// Probability that the argmax label of item `i` is correct.
    pub fn confidence(&self, i: usize) -> f64 {
        let p = self.probs[i];
        p.max(1.0 - p)
    }

    /// Distance from 0.5; larger is more certain.
    pub fn certainty(&self, i: usize) -> f64 {
        (self.probs[i] - 0.5).abs()
    }

    /// Probability that item `i` takes `label`.
    pub fn prob_of(&self, i: usize, label: bool) -> f64 {
        if label {
            self.probs[i]
        } else {
            1.0 - self.probs[i]
        }
    }

    /// Entropy of the joint labeling distribution, in bits.
    pub fn joint_entropy(&self) -> f64 {
        self.probs.iter().map(|&p| binary_entropy(p)).sum()
    }

    /// `P(Y = y)` under the independence model.
    pub fn labeling_probability(&self, y: &Labeling) -> Result<f64> {
        if y.len() != self.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                got: y.len(),
            });
        }
        Ok(y.iter()
            .enumerate()
            .map(|(i, b)| self.prob_of(i, b))
            .product())
    }

    /// Weighted average with 0.5: `(1 - alpha) p + alpha / 2`, re-clamped.
    pub fn reduce_certainty(&self, alpha: f64) -> Self {
        let alpha = alpha.clamp(0.0, 1.0);
        Self {
            probs: self
                .probs
                .iter()
                .map(|&p| clamp((1.0 - alpha) * p + alpha * 0.5))
                .collect(),
        }
    }

    /// The `k` most probable labelings in descending probability.
    ///
    /// Ties break by ascending labeling, read left to right as a binary
    /// number (item 0 is the most significant bit).
    pub fn top_labelings(&self, k: usize) -> Result<Vec<(Labeling, f64)>> {
        let n = self.len();
        if n > MAX_ENUMERATION_ITEMS {
            return Err(Error::Capacity {
                what: "items",
                got: n,
                limit: MAX_ENUMERATION_ITEMS,
            });
        }
        let total = 1usize << n;
        if k > total {
            return Err(Error::Capacity {
                what: "requested labelings",
                got: k,
                limit: total,
            });
        }

        // Best-first search over prefixes. A prefix's key is the log
        // probability of its best completion, which is exact for the
        // completion that follows the per-item argmax.
        let logs: Vec<(f64, f64)> = (0..n)
            .map(|i| (self.prob_of(i, false).log2(), self.prob_of(i, true).log2()))
            .collect();
        let mut best_suffix = vec![0.0; n + 1];
        for i in (0..n).rev() {
            best_suffix[i] = best_suffix[i + 1] + logs[i].0.max(logs[i].1);
        }

        let mut heap = BinaryHeap::new();
        heap.push(Prefix {
            bound: best_suffix[0],
            log_prob: 0.0,
            bits: Vec::new(),
        });
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            let Some(node) = heap.pop() else { break };
            let depth = node.bits.len();
            if depth == n {
                let y = Labeling::new(node.bits);
                let p = self.labeling_probability(&y)?;
                out.push((y, p));
                continue;
            }
            for bit in [false, true] {
                let lp = node.log_prob + if bit { logs[depth].1 } else { logs[depth].0 };
                let mut bits = node.bits.clone();
                bits.push(bit);
                heap.push(Prefix {
                    bound: lp + best_suffix[depth + 1],
                    log_prob: lp,
                    bits,
                });
            }
        }
        Ok(out)
    }
}

struct Prefix {
    bound: f64,
    log_prob: f64,
    bits: Vec<bool>,
}

impl PartialEq for Prefix {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Prefix {}

impl PartialOrd for Prefix {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Prefix {
    // Max-heap: larger bound first, then lexicographically smaller prefix.
    fn cmp(&self, other: &Self) -> Ordering {
        self.bound
            .total_cmp(&other.bound)
            .then_with(|| other.bits.cmp(&self.bits))
    }
}

/// Full binary label vector for a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Labeling {
    bits: Vec<bool>,
}

impl Labeling {
    pub fn new(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn from_bits(bits: &[u8]) -> Result<Self> {
        bits.iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(Error::Invalid(format!("label {other} is not 0 or 1"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Self::new)
    }

    /// Decodes a symbol index where item 0 is the most significant bit.
    pub fn from_index(index: u64, n: usize) -> Self {
        Self::new((0..n).map(|i| (index >> (n - 1 - i)) & 1 == 1).collect())
    }

    /// Inverse of [`Labeling::from_index`].
    pub fn index(&self) -> u64 {
        self.bits.iter().fold(0u64, |acc, &b| (acc << 1) | b as u64)
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn get(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        self.bits.iter().copied()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.bits
    }

    /// Every labeling of `n` items in ascending index order.
    pub fn all(n: usize) -> impl Iterator<Item = Labeling> {
        (0..1u64 << n).map(move |i| Labeling::from_index(i, n))
    }
}

impl Serialize for Labeling {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.bits.iter().map(|&b| b as u8))
    }
}

impl<'de> Deserialize<'de> for Labeling {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = Vec::<u8>::deserialize(d)?;
        Labeling::from_bits(&raw).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn probs(v: &[f64]) -> ItemProbabilities {
        ItemProbabilities::new(v.to_vec()).unwrap()
    }

    fn brute_entropy(p: &ItemProbabilities) -> f64 {
        Labeling::all(p.len())
            .map(|y| p.labeling_probability(&y).unwrap())
            .filter(|&q| q > 0.0)
            .map(|q| -q * q.log2())
            .sum()
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(probs(&[0.5, 0.5]).joint_entropy(), 2.0);
        assert!(probs(&[1.0 - 1e-6]).joint_entropy() < 1e-4);
        // -(0.25 log2 0.25 + 0.75 log2 0.75) = 0.5 + 0.311278
        assert!((probs(&[0.25]).joint_entropy() - 0.811278).abs() < 1e-6);
    }

    #[test]
    fn labeling_probability_examples() {
        let p = probs(&[0.9, 0.8]);
        let y = Labeling::new(vec![true, true]);
        assert!((p.labeling_probability(&y).unwrap() - 0.72).abs() < 1e-12);
        let total: f64 = Labeling::all(2)
            .map(|y| p.labeling_probability(&y).unwrap())
            .sum();
        assert!((total - 1.0).abs() < 1e-12);

        let u = ItemProbabilities::uniform(7, 0.5).unwrap();
        let y = Labeling::from_index(37, 7);
        assert_eq!(u.labeling_probability(&y).unwrap(), 2f64.powi(-7));

        let err = p.labeling_probability(&Labeling::new(vec![true]));
        assert!(matches!(err, Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn top_labelings_examples() {
        let p = probs(&[0.9, 0.8]);
        let top = p.top_labelings(1).unwrap();
        assert_eq!(top[0].0, Labeling::new(vec![true, true]));
        assert!((top[0].1 - 0.72).abs() < 1e-12);

        let all = p.top_labelings(4).unwrap();
        let order: Vec<u64> = all.iter().map(|(y, _)| y.index()).collect();
        assert_eq!(order, vec![0b11, 0b10, 0b01, 0b00]);
        for ((_, got), want) in all.iter().zip([0.72, 0.18, 0.08, 0.02]) {
            assert!((got - want).abs() < 1e-12);
        }

        let u = probs(&[0.5, 0.5]);
        let order: Vec<u64> = u
            .top_labelings(4)
            .unwrap()
            .iter()
            .map(|(y, _)| y.index())
            .collect();
        assert_eq!(order, vec![0, 1, 2, 3]);
    }

    #[test]
    fn top_labelings_guards() {
        let big = ItemProbabilities::uniform(26, 0.7).unwrap();
        assert!(matches!(big.top_labelings(1), Err(Error::Capacity { .. })));
        assert!(matches!(probs(&[0.3]).top_labelings(3), Err(Error::Capacity { .. })));
        // Uniform ties at the guard size stay cheap for small k.
        let u = ItemProbabilities::uniform(25, 0.5).unwrap();
        let top = u.top_labelings(3).unwrap();
        assert_eq!(top[2].0.index(), 2);
    }

    #[test]
    fn reduce_certainty_examples() {
        assert_eq!(probs(&[0.9]).reduce_certainty(0.0).get(0), 0.9);
        assert!((probs(&[1.0]).reduce_certainty(0.05).get(0) - 0.975).abs() < 1e-6);
        assert_eq!(probs(&[0.5]).reduce_certainty(0.37).get(0), 0.5);
    }

    #[test]
    fn construction_rejects_out_of_range() {
        assert!(matches!(
            ItemProbabilities::new(vec![0.2, 1.5]),
            Err(Error::InvalidProbability { index: 1, .. })
        ));
        assert!(ItemProbabilities::new(vec![f64::NAN]).is_err());
        assert!(matches!(ItemProbabilities::new(vec![]), Err(Error::Empty)));
        assert_eq!(probs(&[0.0]).get(0), EPS);
    }

    proptest! {
        #[test]
        fn entropy_matches_enumeration(v in prop::collection::vec(0.0f64..=1.0, 1..=10)) {
            let p = probs(&v);
            let h = p.joint_entropy();
            prop_assert!((h - brute_entropy(&p)).abs() < 1e-9);
            prop_assert!(h >= 0.0 && h <= p.len() as f64);
        }

        #[test]
        fn labeling_mass_sums_to_one(v in prop::collection::vec(0.0f64..=1.0, 1..=10)) {
            let p = probs(&v);
            let total: f64 = Labeling::all(p.len()).map(|y| p.labeling_probability(&y).unwrap()).sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
        }

        #[test]
        fn top_labelings_agree_with_sorted_enumeration(
            v in prop::collection::vec(prop::sample::select(vec![0.1, 0.25, 0.5, 0.6, 0.75, 0.9, 0.97]), 1..=8),
            frac in 0.0f64..=1.0,
        ) {
            let p = probs(&v);
            let total = 1usize << p.len();
            let k = ((total as f64 * frac).ceil() as usize).clamp(1, total);
            let got = p.top_labelings(k).unwrap();
            for w in got.windows(2) {
                prop_assert!(w[0].1 >= w[1].1 - 1e-15);
            }
            let mut want: Vec<(Labeling, f64)> = Labeling::all(p.len())
                .map(|y| { let q = p.labeling_probability(&y).unwrap(); (y, q) })
                .collect();
            want.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            // Probabilities must agree exactly in rank; labelings may swap only
            // between floating-point near-ties.
            for (g, w) in got.iter().zip(&want) {
                prop_assert!((g.1 - w.1).abs() < 1e-12);
            }
            let top1: Vec<bool> = (0..p.len()).map(|i| p.get(i) >= 0.5).collect();
            prop_assert!((got[0].1 - p.labeling_probability(&Labeling::new(top1)).unwrap()).abs() < 1e-15);
        }

        #[test]
        fn reduce_certainty_moves_toward_half(p in 0.0f64..=1.0, a in 0.0f64..=1.0) {
            let before = probs(&[p]).get(0);
            let after = probs(&[p]).reduce_certainty(a).get(0);
            prop_assert!((after - 0.5).abs() <= (before - 0.5).abs() + 1e-15);
            prop_assert!((after - 0.5) * (before - 0.5) >= 0.0);
        }
    }
}
