//! Huffman coding over whole-dataset labelings.
//!
//! Each of the `2^N` labelings is a symbol. Decoding the tree is a
//! questioning session where every question asks whether the true labeling
//! lies in the right subtree of the current node. The expected number of
//! questions is the expected codeword length, so it sits within one bit of
//! the joint entropy.
//!
//! [`optimal_expected_questions_dp`] solves the same problem by exhaustive
//! search over symbol subsets. It is exponential and only exists to check
//! Huffman optimality on tiny alphabets.

use std::collections::{HashMap, VecDeque};

use crate::error::{Error, Result};
use crate::labels::{ItemProbabilities, Labeling};

/// Largest dataset a labeling tree may be built for.
pub const MAX_HUFFMAN_ITEMS: usize = 20;

/// Largest alphabet accepted by the subset DP.
pub const MAX_DP_SYMBOLS: usize = 12;

const MIN_LEAF_PROB: f64 = 1e-300;
const NONE: u32 = u32::MAX;

#[derive(Debug, Clone, Copy)]
struct Node {
    prob: f64,
    parent: u32,
    left: u32,
    right: u32,
}

/// Binary prefix tree over symbols. Leaves occupy node ids `0..m` and leaf
/// `s` is symbol `s`; internal nodes follow in merge order.
#[derive(Debug, Clone)]
pub struct HuffmanTree {
    nodes: Vec<Node>,
    leaves: usize,
    items: Option<usize>,
}

impl HuffmanTree {
    /// Builds the tree over all labelings of `probs`. Symbol indices follow
    /// [`Labeling::index`].
    pub fn for_labelings(probs: &ItemProbabilities) -> Result<Self> {
        let n = probs.len();
        if n > MAX_HUFFMAN_ITEMS {
            return Err(Error::Capacity {
                what: "items",
                got: n,
                limit: MAX_HUFFMAN_ITEMS,
            });
        }
        // Fill symbol probabilities by doubling: item 0 is the most
        // significant bit, so each new item splits every existing symbol.
        let mut symbol_probs = vec![1.0f64];
        for i in 0..n {
            let (p0, p1) = (probs.prob_of(i, false), probs.prob_of(i, true));
            symbol_probs = symbol_probs
                .iter()
                .flat_map(|&q| [q * p0, q * p1])
                .collect();
        }
        let mut tree = Self::from_symbol_probs(&symbol_probs)?;
        tree.items = Some(n);
        Ok(tree)
    }

    /// Builds the tree for an explicit symbol distribution.
    pub fn from_symbol_probs(symbol_probs: &[f64]) -> Result<Self> {
        let m = symbol_probs.len();
        if m == 0 {
            return Err(Error::Empty);
        }
        if let Some((index, &value)) = symbol_probs
            .iter()
            .enumerate()
            .find(|(_, p)| !p.is_finite() || **p < 0.0)
        {
            return Err(Error::InvalidProbability { index, value });
        }
        let mut nodes: Vec<Node> = symbol_probs
            .iter()
            .map(|&p| Node {
                prob: p.max(MIN_LEAF_PROB),
                parent: NONE,
                left: NONE,
                right: NONE,
            })
            .collect();
        nodes.reserve(m.saturating_sub(1));

        // Two-queue construction: sorted leaves, then internal nodes in
        // creation order (their probabilities never decrease). On equal
        // probability the earlier-created node goes first.
        let mut order: Vec<u32> = (0..m as u32).collect();
        order.sort_by(|&a, &b| {
            nodes[a as usize]
                .prob
                .total_cmp(&nodes[b as usize].prob)
                .then(a.cmp(&b))
        });
        let mut leaves: VecDeque<u32> = order.into();
        let mut merged: VecDeque<u32> = VecDeque::new();

        let pop_min = |nodes: &Vec<Node>, leaves: &mut VecDeque<u32>, merged: &mut VecDeque<u32>| {
            match (leaves.front(), merged.front()) {
                (Some(&l), Some(&i)) => {
                    if nodes[l as usize].prob <= nodes[i as usize].prob {
                        leaves.pop_front()
                    } else {
                        merged.pop_front()
                    }
                }
                (Some(_), None) => leaves.pop_front(),
                (None, Some(_)) => merged.pop_front(),
                (None, None) => None,
            }
        };

        while leaves.len() + merged.len() > 1 {
            let a = pop_min(&nodes, &mut leaves, &mut merged).expect("two nodes remain");
            let b = pop_min(&nodes, &mut leaves, &mut merged).expect("two nodes remain");
            let id = nodes.len() as u32;
            nodes.push(Node {
                prob: nodes[a as usize].prob + nodes[b as usize].prob,
                parent: NONE,
                left: a,
                right: b,
            });
            nodes[a as usize].parent = id;
            nodes[b as usize].parent = id;
            merged.push_back(id);
        }

        Ok(Self {
            nodes,
            leaves: m,
            items: None,
        })
    }

    pub fn root(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Number of dataset items when built with [`HuffmanTree::for_labelings`].
    pub fn items(&self) -> Option<usize> {
        self.items
    }

    pub fn probability(&self, node: usize) -> f64 {
        self.nodes[node].prob
    }

    pub fn is_leaf(&self, node: usize) -> bool {
        node < self.leaves
    }

    /// `(left, right)` children of an internal node.
    pub fn children(&self, node: usize) -> Option<(usize, usize)> {
        if self.is_leaf(node) {
            None
        } else {
            let n = &self.nodes[node];
            Some((n.left as usize, n.right as usize))
        }
    }

    pub fn parent(&self, node: usize) -> Option<usize> {
        match self.nodes[node].parent {
            NONE => None,
            p => Some(p as usize),
        }
    }

    /// Depth of every leaf, indexed by symbol.
    pub fn leaf_depths(&self) -> Vec<usize> {
        let mut depth = vec![0usize; self.nodes.len()];
        // Parents always have larger ids than their children.
        for id in (self.leaves..self.nodes.len()).rev() {
            let n = self.nodes[id];
            depth[n.left as usize] = depth[id] + 1;
            depth[n.right as usize] = depth[id] + 1;
        }
        depth.truncate(self.leaves);
        depth
    }

    /// Expected codeword length `sum_leaf p(leaf) depth(leaf)`.
    pub fn expected_questions(&self) -> f64 {
        self.leaf_depths()
            .iter()
            .zip(&self.nodes)
            .map(|(&d, n)| n.prob * d as f64)
            .sum()
    }

    /// True when `node` is `ancestor` or lies below it.
    pub fn is_descendant(&self, mut node: usize, ancestor: usize) -> bool {
        loop {
            if node == ancestor {
                return true;
            }
            match self.parent(node) {
                Some(p) if p <= ancestor => node = p,
                _ => return false,
            }
        }
    }

    /// Symbols of the leaves under `node`.
    pub fn leaf_symbols(&self, node: usize) -> Vec<u64> {
        let mut out = Vec::new();
        let mut stack = vec![node];
        while let Some(id) = stack.pop() {
            match self.children(id) {
                Some((l, r)) => {
                    stack.push(r);
                    stack.push(l);
                }
                None => out.push(id as u64),
            }
        }
        out
    }

    /// Walks from the root asking `oracle` at every internal node.
    pub fn decode<O: MembershipOracle + ?Sized>(&self, oracle: &mut O) -> Result<DecodeOutcome> {
        let mut node = self.root();
        let mut questions = 0;
        while let Some((left, right)) = self.children(node) {
            let question = Question {
                tree: self,
                node,
                right,
            };
            questions += 1;
            node = match oracle.answer(&question) {
                Some(true) => right,
                Some(false) => left,
                None => return Err(Error::InconsistentOracle),
            };
        }
        let symbol = node as u64;
        Ok(DecodeOutcome {
            symbol,
            labeling: self.items.map(|n| Labeling::from_index(symbol, n)),
            questions,
        })
    }
}

/// Builds the labeling tree for `probs`.
pub fn build_huffman(probs: &ItemProbabilities) -> Result<HuffmanTree> {
    HuffmanTree::for_labelings(probs)
}

/// Runs a decoding session against `oracle`.
pub fn decode_session<O: MembershipOracle + ?Sized>(
    tree: &HuffmanTree,
    oracle: &mut O,
) -> Result<DecodeOutcome> {
    tree.decode(oracle)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutcome {
    pub symbol: u64,
    pub labeling: Option<Labeling>,
    pub questions: usize,
}

/// "Is the true labeling among the right branch's leaves?"
pub struct Question<'a> {
    tree: &'a HuffmanTree,
    node: usize,
    right: usize,
}

impl Question<'_> {
    /// Node the question is asked at.
    pub fn node(&self) -> usize {
        self.node
    }

    pub fn in_question_set(&self, symbol: u64) -> bool {
        (symbol as usize) < self.tree.leaves && self.tree.is_descendant(symbol as usize, self.right)
    }

    pub fn in_current_set(&self, symbol: u64) -> bool {
        (symbol as usize) < self.tree.leaves && self.tree.is_descendant(symbol as usize, self.node)
    }

    /// Symbols in the question set.
    pub fn symbols(&self) -> Vec<u64> {
        self.tree.leaf_symbols(self.right)
    }
}

/// Answer source for a decoding session. `None` means the truth is in
/// neither branch, which ends the session with an error.
pub trait MembershipOracle {
    fn answer(&mut self, question: &Question<'_>) -> Option<bool>;
}

impl<F: FnMut(&Question<'_>) -> Option<bool>> MembershipOracle for F {
    fn answer(&mut self, question: &Question<'_>) -> Option<bool> {
        self(question)
    }
}

/// Answers from a fixed ground-truth symbol.
#[derive(Debug, Clone, Copy)]
pub struct TruthOracle {
    symbol: u64,
}

impl TruthOracle {
    pub fn new(symbol: u64) -> Self {
        Self { symbol }
    }

    pub fn for_labeling(labeling: &Labeling) -> Self {
        Self::new(labeling.index())
    }
}

impl MembershipOracle for TruthOracle {
    fn answer(&mut self, q: &Question<'_>) -> Option<bool> {
        if !q.in_current_set(self.symbol) {
            return None;
        }
        Some(q.in_question_set(self.symbol))
    }
}

/// Exact minimum expected number of yes/no questions over every
/// questioning strategy, by memoized search over symbol subsets.
pub fn optimal_expected_questions_dp(symbol_probs: &[f64]) -> Result<f64> {
    let m = symbol_probs.len();
    if m == 0 {
        return Err(Error::Empty);
    }
    if m > MAX_DP_SYMBOLS {
        return Err(Error::Capacity {
            what: "symbols",
            got: m,
            limit: MAX_DP_SYMBOLS,
        });
    }
    let full: u32 = (1u32 << m) - 1;
    let mass: Vec<f64> = (0..=full)
        .map(|s| {
            (0..m)
                .filter(|i| s >> i & 1 == 1)
                .map(|i| symbol_probs[i])
                .sum()
        })
        .collect();
    if mass[full as usize] <= 0.0 {
        return Err(Error::Invalid("symbol probabilities sum to zero".into()));
    }
    // weighted(S) = P(S) * cost(S) avoids dividing by zero-mass subsets.
    let mut memo: HashMap<u32, f64> = HashMap::new();
    let w = weighted_cost(full, &mass, &mut memo);
    Ok(w / mass[full as usize])
}

fn weighted_cost(set: u32, mass: &[f64], memo: &mut HashMap<u32, f64>) -> f64 {
    if set.count_ones() <= 1 {
        return 0.0;
    }
    if let Some(&v) = memo.get(&set) {
        return v;
    }
    // Splits are unordered, so fix the lowest symbol on side A.
    let low = set & set.wrapping_neg();
    let rest = set ^ low;
    let mut best = f64::INFINITY;
    let mut sub = rest;
    loop {
        let a = sub | low;
        if a != set {
            let b = set ^ a;
            let c = weighted_cost(a, mass, memo) + weighted_cost(b, mass, memo);
            if c < best {
                best = c;
            }
        }
        if sub == 0 {
            break;
        }
        sub = (sub - 1) & rest;
    }
    let v = mass[set as usize] + best;
    memo.insert(set, v);
    v
}
