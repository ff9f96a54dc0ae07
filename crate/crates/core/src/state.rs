//! Annotation state: committed labels, open items, and at most one pending
//! incorrect guess.
//!
//! A pending guess is a set of pseudo-labels known to contain at least one
//! mistake. It removes exactly one labeling (the one where every
//! pseudo-label is right) from the joint distribution over its items, so
//! both proxy costs have closed forms.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::labels::{binary_entropy, ItemProbabilities, Labeling};

/// Largest number of open items [`AnnotationState::consistent_labelings`]
/// will enumerate.
pub const MAX_CONSISTENT_ENUMERATION: usize = 12;

/// "Are these pseudo-labels all correct?"
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "GuessDoc", into = "GuessDoc")]
pub struct Guess {
    indices: Vec<usize>,
    labels: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
struct GuessDoc {
    indices: Vec<usize>,
    labels: Vec<u8>,
}

impl TryFrom<GuessDoc> for Guess {
    type Error = Error;

    fn try_from(doc: GuessDoc) -> Result<Self> {
        let labels = Labeling::from_bits(&doc.labels)?;
        Guess::new(doc.indices, labels.as_slice().to_vec())
    }
}

impl From<Guess> for GuessDoc {
    fn from(g: Guess) -> Self {
        GuessDoc {
            indices: g.indices,
            labels: g.labels.into_iter().map(u8::from).collect(),
        }
    }
}

impl Guess {
    pub fn new(indices: Vec<usize>, labels: Vec<bool>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidGuess("empty guess".into()));
        }
        if indices.len() != labels.len() {
            return Err(Error::LengthMismatch {
                expected: indices.len(),
                got: labels.len(),
            });
        }
        let distinct: BTreeSet<_> = indices.iter().collect();
        if distinct.len() != indices.len() {
            return Err(Error::InvalidGuess("repeated index".into()));
        }
        Ok(Self { indices, labels })
    }

    /// Argmax pseudo-labels for `indices`.
    pub fn pseudo_labeled(indices: Vec<usize>, probs: &ItemProbabilities) -> Result<Self> {
        let labels = indices.iter().map(|&i| probs.pseudo_label(i)).collect();
        Self::new(indices, labels)
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, bool)> + '_ {
        self.indices.iter().copied().zip(self.labels.iter().copied())
    }

    pub fn label_for(&self, index: usize) -> Option<bool> {
        self.iter().find(|&(i, _)| i == index).map(|(_, l)| l)
    }

    pub fn contains(&self, index: usize) -> bool {
        self.indices.contains(&index)
    }

    /// Unconditional probability that every pseudo-label is right.
    pub fn prior_probability(&self, probs: &ItemProbabilities) -> f64 {
        self.iter().map(|(i, l)| probs.prob_of(i, l)).product()
    }

    /// True when every pseudo-label of `self` also appears in `other`.
    fn is_sub_guess_of(&self, other: &Guess) -> bool {
        self.iter().all(|(i, l)| other.label_for(i) == Some(l))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Slot {
    Open,
    Zero,
    One,
}

impl Slot {
    fn label(self) -> Option<bool> {
        match self {
            Slot::Open => None,
            Slot::Zero => Some(false),
            Slot::One => Some(true),
        }
    }

    fn of(label: bool) -> Self {
        if label {
            Slot::One
        } else {
            Slot::Zero
        }
    }
}

/// Labelings with their renormalized probabilities.
pub type WeightedLabelings = Vec<(Labeling, f64)>;

/// Search state over a dataset of fixed size.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AnnotationState {
    slots: Vec<Slot>,
    open: usize,
    pending: Option<Guess>,
}

impl AnnotationState {
    /// Every item unlabeled.
    pub fn new(n: usize) -> Self {
        Self {
            slots: vec![Slot::Open; n],
            open: n,
            pending: None,
        }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn is_terminal(&self) -> bool {
        self.open == 0
    }

    pub fn labeled_count(&self) -> usize {
        self.slots.len() - self.open
    }

    pub fn unlabeled_count(&self) -> usize {
        self.open
    }

    pub fn label(&self, index: usize) -> Option<bool> {
        self.slots.get(index).and_then(|s| s.label())
    }

    pub fn is_unlabeled(&self, index: usize) -> bool {
        matches!(self.slots.get(index), Some(Slot::Open))
    }

    pub fn pending(&self) -> Option<&Guess> {
        self.pending.as_ref()
    }

    pub fn labeled(&self) -> impl Iterator<Item = (usize, bool)> + '_ {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.label().map(|l| (i, l)))
    }

    pub fn unlabeled(&self) -> impl Iterator<Item = usize> + '_ {
        self.slots
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == Slot::Open)
            .map(|(i, _)| i)
    }

    /// Unlabeled items outside the pending guess.
    pub fn free(&self) -> impl Iterator<Item = usize> + '_ {
        self.unlabeled()
            .filter(move |&i| !self.pending.as_ref().is_some_and(|g| g.contains(i)))
    }

    /// Full labeling once every item is labeled.
    pub fn final_labeling(&self) -> Option<Labeling> {
        self.slots
            .iter()
            .map(|s| s.label())
            .collect::<Option<Vec<_>>>()
            .map(Labeling::new)
    }

    fn check_unlabeled(&self, g: &Guess) -> Result<()> {
        for &i in g.indices() {
            if i >= self.slots.len() {
                return Err(Error::InvalidGuess(format!("index {i} out of range")));
            }
            if !self.is_unlabeled(i) {
                return Err(Error::InvalidGuess(format!("item {i} is already labeled")));
            }
        }
        Ok(())
    }

    /// Probability that every pseudo-label in `g` is right, conditioned on
    /// the pending guess being wrong.
    pub fn guess_probability(&self, probs: &ItemProbabilities, g: &Guess) -> Result<f64> {
        self.check_unlabeled(g)?;
        let p = g.prior_probability(probs);
        let Some(pending) = &self.pending else {
            return Ok(p);
        };
        let q = pending.prior_probability(probs);
        // P(g ok and pending ok) is zero when the two disagree somewhere,
        // otherwise the product over the union of their items.
        let conflict = g.iter().any(|(i, l)| pending.label_for(i) == Some(!l));
        let joint = if conflict {
            0.0
        } else {
            p * pending
                .iter()
                .filter(|&(i, _)| !g.contains(i))
                .map(|(i, l)| probs.prob_of(i, l))
                .product::<f64>()
        };
        Ok(((p - joint) / (1.0 - q)).clamp(0.0, 1.0))
    }

    /// Successor state after the annotator answers `g`.
    pub fn apply_answer(&self, g: &Guess, correct: bool) -> Result<Self> {
        self.check_unlabeled(g)?;
        let mut next = self.clone();
        if correct {
            for (i, l) in g.iter() {
                next.commit(i, l);
            }
            next.settle_pending()?;
            return Ok(next);
        }
        if g.len() == 1 {
            let (i, l) = g.iter().next().expect("non-empty guess");
            next.commit(i, !l);
            next.settle_pending()?;
            return Ok(next);
        }
        match &self.pending {
            None => next.pending = Some(g.clone()),
            // The new mismatch implies the old one.
            Some(pending) if g.is_sub_guess_of(pending) => next.pending = Some(g.clone()),
            // The old mismatch already implies this one.
            Some(pending) if pending.is_sub_guess_of(g) => {}
            Some(_) => {
                return Err(Error::InvalidGuess(
                    "incorrect answer would leave two pending guesses".into(),
                ))
            }
        }
        Ok(next)
    }

    fn commit(&mut self, index: usize, label: bool) {
        debug_assert_eq!(self.slots[index], Slot::Open);
        self.slots[index] = Slot::of(label);
        self.open -= 1;
    }

    /// Resolves the pending constraint after new labels were committed.
    fn settle_pending(&mut self) -> Result<()> {
        let Some(pending) = self.pending.take() else {
            return Ok(());
        };
        let mut open = Vec::new();
        for (i, l) in pending.iter() {
            match self.label(i) {
                // A mismatch was found: the constraint holds, nothing to deduce.
                Some(actual) if actual != l => return Ok(()),
                Some(_) => {}
                None => open.push((i, l)),
            }
        }
        match open.as_slice() {
            [] => Err(Error::InvalidGuess(
                "answer contradicts the pending incorrect guess".into(),
            )),
            [(i, l)] => {
                self.commit(*i, !*l);
                Ok(())
            }
            _ => {
                let (indices, labels) = open.into_iter().unzip();
                self.pending = Some(Guess::new(indices, labels)?);
                Ok(())
            }
        }
    }

    /// The pending guess without its least certain item (lowest index on ties).
    pub fn next_dont_give_up_guess(&self, probs: &ItemProbabilities) -> Result<Guess> {
        let pending = self.pending.as_ref().ok_or(Error::NoPending)?;
        let drop = pending
            .indices()
            .iter()
            .copied()
            .min_by(|&a, &b| probs.certainty(a).total_cmp(&probs.certainty(b)).then(a.cmp(&b)))
            .expect("pending guess is non-empty");
        let (indices, labels) = pending.iter().filter(|&(i, _)| i != drop).unzip();
        Guess::new(indices, labels)
    }

    /// Entropy in bits of the labeling distribution restricted to this state.
    pub fn state_entropy(&self, probs: &ItemProbabilities) -> f64 {
        let free: f64 = self.free().map(|i| binary_entropy(probs.get(i))).sum();
        match &self.pending {
            None => free,
            Some(g) => {
                let q = g.prior_probability(probs);
                let joint: f64 = g.indices().iter().map(|&i| binary_entropy(probs.get(i))).sum();
                free + pending_entropy(joint, q)
            }
        }
    }

    /// `log2` of the number of labelings consistent with this state.
    pub fn state_log_size(&self) -> f64 {
        let free = self.free().count();
        let pending = self.pending.as_ref().map_or(0, Guess::len);
        if free + pending < 64 {
            // Exact count while it fits in an integer.
            let block = if pending == 0 { 1u64 } else { (1u64 << pending) - 1 };
            return ((block << free) as f64).log2();
        }
        match pending {
            0 => free as f64,
            k => free as f64 + log2_pow2_minus_one(k),
        }
    }

    /// Every labeling of the unlabeled items (in ascending index order) that
    /// the pending guess does not exclude, with renormalized probability.
    pub fn consistent_labelings(
        &self,
        probs: &ItemProbabilities,
    ) -> Result<(Vec<usize>, WeightedLabelings)> {
        let open: Vec<usize> = self.unlabeled().collect();
        if open.len() > MAX_CONSISTENT_ENUMERATION {
            return Err(Error::Capacity {
                what: "unlabeled items",
                got: open.len(),
                limit: MAX_CONSISTENT_ENUMERATION,
            });
        }
        let mut out = Vec::new();
        for y in Labeling::all(open.len()) {
            let excluded = self.pending.as_ref().is_some_and(|g| {
                g.iter()
                    .all(|(i, l)| y.get(open.iter().position(|&o| o == i).unwrap()) == l)
            });
            if excluded {
                continue;
            }
            let p: f64 = open
                .iter()
                .zip(y.iter())
                .map(|(&i, b)| probs.prob_of(i, b))
                .product();
            out.push((y, p));
        }
        let total: f64 = out.iter().map(|(_, p)| p).sum();
        for (_, p) in &mut out {
            *p /= total;
        }
        Ok((open, out))
    }
}

/// Entropy of a block of independent items after removing the single
/// all-correct labeling of mass `q`. `joint` is the block's unconditioned
/// entropy.
pub(crate) fn pending_entropy(joint: f64, q: f64) -> f64 {
    (joint + q * q.log2()) / (1.0 - q) + (1.0 - q).log2()
}

/// `log2(2^k - 1)` without overflow.
pub(crate) fn log2_pow2_minus_one(k: usize) -> f64 {
    if k < 53 {
        return (((1u64 << k) - 1) as f64).log2();
    }
    k as f64 + (-(0.5f64).powi(k as i32)).ln_1p() / std::f64::consts::LN_2
}

/// Free-function forms mirroring the state methods.
pub fn guess_probability(state: &AnnotationState, probs: &ItemProbabilities, g: &Guess) -> Result<f64> {
    state.guess_probability(probs, g)
}

pub fn apply_answer(state: &AnnotationState, g: &Guess, correct: bool) -> Result<AnnotationState> {
    state.apply_answer(g, correct)
}

pub fn state_entropy(state: &AnnotationState, probs: &ItemProbabilities) -> f64 {
    state.state_entropy(probs)
}

pub fn state_log_size(state: &AnnotationState) -> f64 {
    state.state_log_size()
}

#[derive(Serialize, Deserialize)]
struct StateDoc {
    labeled: BTreeMap<usize, u8>,
    unlabeled: Vec<usize>,
    pending: Option<Guess>,
}

impl Serialize for AnnotationState {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        StateDoc {
            labeled: self.labeled().map(|(i, l)| (i, l as u8)).collect(),
            unlabeled: self.unlabeled().collect(),
            pending: self.pending.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for AnnotationState {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let doc = StateDoc::deserialize(d)?;
        let n = doc.labeled.len() + doc.unlabeled.len();
        let mut slots = vec![None; n];
        for (&i, &l) in &doc.labeled {
            let slot = match l {
                0 => Slot::Zero,
                1 => Slot::One,
                _ => return Err(D::Error::custom(format!("label {l} is not 0 or 1"))),
            };
            *slots.get_mut(i).ok_or_else(|| D::Error::custom("index out of range"))? = Some(slot);
        }
        for &i in &doc.unlabeled {
            let slot = slots.get_mut(i).ok_or_else(|| D::Error::custom("index out of range"))?;
            if slot.is_some() {
                return Err(D::Error::custom(format!("item {i} listed twice")));
            }
            *slot = Some(Slot::Open);
        }
        let slots: Vec<Slot> = slots
            .into_iter()
            .collect::<Option<_>>()
            .ok_or_else(|| D::Error::custom("labeled and unlabeled do not partition the items"))?;
        let state = AnnotationState {
            open: doc.unlabeled.len(),
            slots,
            pending: doc.pending,
        };
        if let Some(g) = &state.pending {
            if g.len() < 2 || g.indices().iter().any(|&i| !state.is_unlabeled(i)) {
                return Err(D::Error::custom("pending guess must cover at least two unlabeled items"));
            }
        }
        Ok(state)
    }
}
