//! Lookahead questioner.
//!
//! The search tree alternates state nodes and action nodes. An action is a
//! guess; it has two child states, one per answer, weighted by the
//! probability of that answer. Unexpanded states are scored with a proxy
//! cost (state entropy or log state size), expanded states take the cost of
//! their cheapest action, and an action costs one question plus the
//! expected cost of its children.
//!
//! Each call to [`SearchTree::best_action`] runs a fixed number of
//! select / expand / update cycles, then returns the cheapest root action.
//! Node selection follows priorities: a state's priority is its parent
//! action's priority times the transition probability, and sibling actions
//! split their parent's priority by a softmax over their costs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::ItemProbabilities;
use crate::state::{AnnotationState, Guess};

/// How the single-item guess is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlMethod {
    Random,
    Uncertainty,
}

/// Proxy cost used on unexpanded states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostFn {
    /// State entropy `H(s)`.
    Entropy,
    /// Log state size `log2 |s|`.
    Length,
}

impl CostFn {
    pub fn default_reduce_certainty(self) -> f64 {
        match self {
            CostFn::Entropy => 0.01,
            CostFn::Length => 0.05,
        }
    }
}

impl std::str::FromStr for AlMethod {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "random" => Ok(AlMethod::Random),
            "uncertainty" => Ok(AlMethod::Uncertainty),
            other => Err(format!("unknown al method `{other}`")),
        }
    }
}

impl std::str::FromStr for CostFn {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "entropy" => Ok(CostFn::Entropy),
            "length" => Ok(CostFn::Length),
            other => Err(format!("unknown cost function `{other}`")),
        }
    }
}

/// Search parameters. Serialized with these exact field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ConfigDoc")]
pub struct SearchConfig {
    pub max_n: usize,
    pub max_expansions: usize,
    pub temperature: f64,
    pub max_depth: usize,
    pub al_method: AlMethod,
    pub cost_fn: CostFn,
    pub reduce_certainty_factor: f64,
    pub reset_tree: bool,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self::with_cost_fn(CostFn::Entropy)
    }
}

impl SearchConfig {
    /// Defaults, with the certainty reduction that goes with `cost_fn`.
    pub fn with_cost_fn(cost_fn: CostFn) -> Self {
        Self {
            max_n: 8,
            max_expansions: 8,
            temperature: 10.0,
            max_depth: 20,
            al_method: AlMethod::Uncertainty,
            cost_fn,
            reduce_certainty_factor: cost_fn.default_reduce_certainty(),
            reset_tree: false,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_n < 1 {
            return Err(Error::Invalid("max_n must be at least 1".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Invalid("temperature must be positive".into()));
        }
        if self.max_depth < 1 {
            return Err(Error::Invalid("max_depth must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.reduce_certainty_factor) {
            return Err(Error::Invalid(
                "reduce_certainty_factor must be in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigDoc {
    max_n: Option<usize>,
    max_expansions: Option<usize>,
    temperature: Option<f64>,
    max_depth: Option<usize>,
    al_method: Option<AlMethod>,
    cost_fn: Option<CostFn>,
    reduce_certainty_factor: Option<f64>,
    reset_tree: Option<bool>,
    seed: Option<u64>,
}

impl TryFrom<ConfigDoc> for SearchConfig {
    type Error = Error;

    fn try_from(d: ConfigDoc) -> Result<Self> {
        let base = SearchConfig::with_cost_fn(d.cost_fn.unwrap_or(CostFn::Entropy));
        let config = SearchConfig {
            max_n: d.max_n.unwrap_or(base.max_n),
            max_expansions: d.max_expansions.unwrap_or(base.max_expansions),
            temperature: d.temperature.unwrap_or(base.temperature),
            max_depth: d.max_depth.unwrap_or(base.max_depth),
            al_method: d.al_method.unwrap_or(base.al_method),
            cost_fn: base.cost_fn,
            reduce_certainty_factor: d
                .reduce_certainty_factor
                .unwrap_or(base.reduce_certainty_factor),
            reset_tree: d.reset_tree.unwrap_or(base.reset_tree),
            seed: d.seed.unwrap_or(base.seed),
        };
        config.validate()?;
        Ok(config)
    }
}

type StateId = usize;
type ActionId = usize;

#[derive(Debug, Clone)]
struct StateNode {
    state: AnnotationState,
    cost: f64,
    actions: Vec<ActionId>,
    expanded: bool,
    terminal: bool,
    parent: Option<ActionId>,
    depth: usize,
}

#[derive(Debug, Clone, Copy)]
struct Outcome {
    child: StateId,
    prob: f64,
}

#[derive(Debug, Clone)]
struct ActionNode {
    guess: Guess,
    cost: f64,
    /// `[correct, incorrect]`.
    outcomes: [Outcome; 2],
    parent: StateId,
}

/// Lookahead tree rooted at the current annotation state.
#[derive(Debug, Clone)]
pub struct SearchTree {
    states: Vec<StateNode>,
    actions: Vec<ActionNode>,
    root: StateId,
    rng: ChaCha8Rng,
    /// Effective probabilities the costs were computed with.
    probs: Option<ItemProbabilities>,
    /// Items by decreasing certainty, lowest index first on ties.
    by_certainty: Vec<usize>,
    cost_fn: CostFn,
}

/// Softmax over negated costs at temperature `t`: cheaper actions weigh more.
pub fn softmax_weights(costs: &[f64], t: f64) -> Vec<f64> {
    let min = costs.iter().copied().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = costs.iter().map(|c| (-(c - min) / t).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

impl SearchTree {
    /// Fresh single-node tree; the generator for random guesses is seeded
    /// from `config.seed`.
    pub fn new(state: AnnotationState, config: &SearchConfig) -> Self {
        let mut tree = Self {
            states: Vec::new(),
            actions: Vec::new(),
            root: 0,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            probs: None,
            by_certainty: Vec::new(),
            cost_fn: config.cost_fn,
        };
        tree.reset_root(state);
        tree
    }

    fn reset_root(&mut self, state: AnnotationState) {
        let terminal = state.is_terminal();
        self.states.clear();
        self.actions.clear();
        self.states.push(StateNode {
            state,
            cost: f64::NAN,
            actions: Vec::new(),
            expanded: false,
            terminal,
            parent: None,
            depth: 0,
        });
        self.root = 0;
        if terminal {
            self.states[0].cost = 0.0;
        } else if let Some(p) = &self.probs {
            let c = self.proxy_cost_with(p, &self.states[0].state.clone());
            self.states[0].cost = c;
        }
    }

    pub fn root_state(&self) -> &AnnotationState {
        &self.states[self.root].state
    }

    pub fn root_cost(&self) -> f64 {
        self.states[self.root].cost
    }

    pub fn is_terminal(&self) -> bool {
        self.states[self.root].terminal
    }

    pub fn state_count(&self) -> usize {
        self.states.len()
    }

    pub fn action_count(&self) -> usize {
        self.actions.len()
    }

    /// Number of expanded state nodes.
    pub fn expanded_count(&self) -> usize {
        self.states.iter().filter(|s| s.expanded).count()
    }

    /// Root actions with their current costs, in creation order.
    pub fn root_actions(&self) -> Vec<(Guess, f64)> {
        self.states[self.root]
            .actions
            .iter()
            .map(|&a| (self.actions[a].guess.clone(), self.actions[a].cost))
            .collect()
    }

    /// Runs up to `max_expansions` select / expand / update cycles and
    /// returns the cheapest root action.
    pub fn best_action(&mut self, probs: &ItemProbabilities, config: &SearchConfig) -> Result<Guess> {
        if self.is_terminal() {
            return Err(Error::Terminal);
        }
        let effective = probs.reduce_certainty(config.reduce_certainty_factor);
        if effective.len() != self.root_state().len() {
            return Err(Error::LengthMismatch {
                expected: self.root_state().len(),
                got: effective.len(),
            });
        }
        if self.probs.as_ref() != Some(&effective) || self.cost_fn != config.cost_fn {
            self.cost_fn = config.cost_fn;
            self.set_probs(effective);
        }
        for _ in 0..config.max_expansions {
            let Some(node) = self.select_node(config) else { break };
            self.expand_node(node, config)?;
            self.update_parents(node);
        }
        if !self.states[self.root].expanded {
            self.expand_node(self.root, config)?;
        }
        Ok(self.best_root_action().expect("expanded root has actions").0)
    }

    fn set_probs(&mut self, probs: ItemProbabilities) {
        let mut order: Vec<usize> = (0..probs.len()).collect();
        order.sort_by(|&a, &b| {
            probs
                .certainty(b)
                .total_cmp(&probs.certainty(a))
                .then(a.cmp(&b))
        });
        self.by_certainty = order;
        self.probs = Some(probs);
        let state = self.root_state().clone();
        self.reset_root(state);
    }

    fn best_root_action(&self) -> Option<(Guess, f64)> {
        let mut best: Option<(ActionId, f64)> = None;
        for &a in &self.states[self.root].actions {
            let c = self.actions[a].cost;
            if best.is_none_or(|(_, bc)| c < bc) {
                best = Some((a, c));
            }
        }
        best.map(|(a, c)| (self.actions[a].guess.clone(), c))
    }

    /// Highest-priority unexpanded, non-terminal state below `max_depth`.
    fn select_node(&self, config: &SearchConfig) -> Option<StateId> {
        let mut best: Option<(StateId, f64)> = None;
        let mut stack = vec![(self.root, 1.0f64)];
        while let Some((sid, priority)) = stack.pop() {
            let node = &self.states[sid];
            if node.terminal {
                continue;
            }
            if !node.expanded {
                if node.depth < config.max_depth && best.is_none_or(|(_, bp)| priority > bp) {
                    best = Some((sid, priority));
                }
                continue;
            }
            let costs: Vec<f64> = node.actions.iter().map(|&a| self.actions[a].cost).collect();
            let weights = softmax_weights(&costs, config.temperature);
            // Reverse push so the first action is visited first.
            for (&a, w) in node.actions.iter().zip(weights).rev() {
                for o in self.actions[a].outcomes.iter().rev() {
                    stack.push((o.child, priority * w * o.prob));
                }
            }
        }
        best.map(|(sid, _)| sid)
    }

    fn proxy_cost_with(&self, probs: &ItemProbabilities, state: &AnnotationState) -> f64 {
        if state.is_terminal() {
            return 0.0;
        }
        match self.cost_fn {
            CostFn::Entropy => state.state_entropy(probs),
            CostFn::Length => state.state_log_size(),
        }
    }

    fn expand_node(&mut self, sid: StateId, config: &SearchConfig) -> Result<()> {
        let probs = self.probs.clone().expect("probabilities set before expansion");
        let state = self.states[sid].state.clone();
        debug_assert!(!state.is_terminal());

        if state.pending().is_some() {
            let g = state.next_dont_give_up_guess(&probs)?;
            self.add_action(sid, g, &probs)?;
        } else {
            let open = state.unlabeled_count();
            let single = match config.al_method {
                AlMethod::Uncertainty => state
                    .unlabeled()
                    .min_by(|&a, &b| {
                        probs
                            .certainty(a)
                            .total_cmp(&probs.certainty(b))
                            .then(a.cmp(&b))
                    })
                    .expect("non-terminal state has open items"),
                AlMethod::Random => {
                    let k = self.rng.random_range(0..open);
                    state.unlabeled().nth(k).expect("k < open")
                }
            };
            self.add_action(sid, Guess::pseudo_labeled(vec![single], &probs)?, &probs)?;
            // Most-certain guesses of growing size. The single-item action
            // above is chosen by a different rule and stays out of the
            // comparison chain, so the chain starts at n = 2.
            let max_n = config.max_n.min(open);
            let certain: Vec<usize> = self
                .by_certainty
                .iter()
                .copied()
                .filter(|&i| state.is_unlabeled(i))
                .take(max_n)
                .collect();
            let mut prev = f64::INFINITY;
            for n in 2..=max_n {
                let g = Guess::pseudo_labeled(certain[..n].to_vec(), &probs)?;
                let cost = self.add_action(sid, g, &probs)?;
                if cost > prev {
                    break;
                }
                prev = cost;
            }
        }

        let node = &mut self.states[sid];
        node.expanded = true;
        node.cost = node
            .actions
            .iter()
            .map(|&a| self.actions[a].cost)
            .fold(f64::INFINITY, f64::min);
        Ok(())
    }

    fn add_action(&mut self, sid: StateId, guess: Guess, probs: &ItemProbabilities) -> Result<f64> {
        let state = &self.states[sid].state;
        let depth = self.states[sid].depth + 1;
        let p = state.guess_probability(probs, &guess)?;
        let ok = state.apply_answer(&guess, true)?;
        let bad = state.apply_answer(&guess, false)?;
        let aid = self.actions.len();
        let mut outcomes = [Outcome { child: 0, prob: p }, Outcome { child: 0, prob: 1.0 - p }];
        for (slot, child) in outcomes.iter_mut().zip([ok, bad]) {
            let cost = self.proxy_cost_with(probs, &child);
            slot.child = self.states.len();
            self.states.push(StateNode {
                terminal: child.is_terminal(),
                state: child,
                cost,
                actions: Vec::new(),
                expanded: false,
                parent: Some(aid),
                depth,
            });
        }
        let cost = self.action_value(&outcomes);
        self.actions.push(ActionNode {
            guess,
            cost,
            outcomes,
            parent: sid,
        });
        self.states[sid].actions.push(aid);
        Ok(cost)
    }

    fn action_value(&self, outcomes: &[Outcome; 2]) -> f64 {
        1.0 + outcomes
            .iter()
            .filter(|o| o.prob > 0.0)
            .map(|o| o.prob * self.states[o.child].cost)
            .sum::<f64>()
    }

    fn argmin_action(&self, sid: StateId) -> Option<(ActionId, f64)> {
        let mut best: Option<(ActionId, f64)> = None;
        for &a in &self.states[sid].actions {
            let c = self.actions[a].cost;
            if best.is_none_or(|(_, bc)| c < bc) {
                best = Some((a, c));
            }
        }
        best
    }

    /// Propagates a changed state cost toward the root, stopping once an
    /// ancestor keeps both its cost and its cheapest action.
    fn update_parents(&mut self, mut sid: StateId) {
        while let Some(aid) = self.states[sid].parent {
            let value = self.action_value(&self.actions[aid].outcomes);
            self.actions[aid].cost = value;
            let psid = self.actions[aid].parent;
            let before = (self.states[psid].cost, self.argmin_action(psid).map(|(a, _)| a));
            let (best, cost) = self.argmin_action(psid).expect("parent has actions");
            self.states[psid].cost = cost;
            if before.0 == cost && before.1 == Some(best) {
                break;
            }
            sid = psid;
        }
    }

    /// Moves the root to the child reached by answering `taken`. The
    /// explored subtree is kept unless `config.reset_tree` is set.
    pub fn advance(mut self, taken: &Guess, correct: bool, config: &SearchConfig) -> Result<Self> {
        let aid = self.states[self.root]
            .actions
            .iter()
            .copied()
            .find(|&a| &self.actions[a].guess == taken)
            .ok_or(Error::UnknownAction)?;
        let child = self.actions[aid].outcomes[if correct { 0 } else { 1 }].child;
        if config.reset_tree {
            let state = self.states[child].state.clone();
            self.reset_root(state);
            return Ok(self);
        }
        Ok(self.extract_subtree(child))
    }

    fn extract_subtree(self, new_root: StateId) -> Self {
        let mut states: Vec<StateNode> = Vec::new();
        let mut actions: Vec<ActionNode> = Vec::new();
        let shift = self.states[new_root].depth;
        // (old state id, new parent action id)
        let mut queue = std::collections::VecDeque::from([(new_root, None)]);
        let mut old = self.states;
        let old_actions = self.actions;
        while let Some((osid, parent)) = queue.pop_front() {
            let nsid = states.len();
            let node = std::mem::replace(
                &mut old[osid],
                StateNode {
                    state: AnnotationState::new(0),
                    cost: 0.0,
                    actions: Vec::new(),
                    expanded: false,
                    terminal: true,
                    parent: None,
                    depth: 0,
                },
            );
            let old_action_ids = node.actions.clone();
            states.push(StateNode {
                actions: Vec::new(),
                parent,
                depth: node.depth - shift,
                ..node
            });
            if let Some(pa) = parent {
                let a: &mut ActionNode = &mut actions[pa];
                // Children are visited in outcome order; fill the first unset.
                if a.outcomes[0].child == usize::MAX {
                    a.outcomes[0].child = nsid;
                } else {
                    a.outcomes[1].child = nsid;
                }
            }
            for oaid in old_action_ids {
                let oa = &old_actions[oaid];
                let naid = actions.len();
                actions.push(ActionNode {
                    guess: oa.guess.clone(),
                    cost: oa.cost,
                    outcomes: [
                        Outcome { child: usize::MAX, prob: oa.outcomes[0].prob },
                        Outcome { child: usize::MAX, prob: oa.outcomes[1].prob },
                    ],
                    parent: nsid,
                });
                states[nsid].actions.push(naid);
                queue.push_back((oa.outcomes[0].child, Some(naid)));
                queue.push_back((oa.outcomes[1].child, Some(naid)));
            }
        }
        Self {
            states,
            actions,
            root: 0,
            rng: self.rng,
            probs: self.probs,
            by_certainty: self.by_certainty,
            cost_fn: self.cost_fn,
        }
    }
}

/// Free-function form of [`SearchTree::best_action`].
pub fn best_action(tree: &mut SearchTree, probs: &ItemProbabilities, config: &SearchConfig) -> Result<Guess> {
    tree.best_action(probs, config)
}

/// Free-function form of [`SearchTree::advance`].
pub fn advance(tree: SearchTree, taken: &Guess, correct: bool, config: &SearchConfig) -> Result<SearchTree> {
    tree.advance(taken, correct, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::Labeling;
    use proptest::prelude::*;

    fn probs(p: &[f64]) -> ItemProbabilities {
        ItemProbabilities::new(p.to_vec()).unwrap()
    }

    fn config(cost_fn: CostFn) -> SearchConfig {
        SearchConfig {
            reduce_certainty_factor: 0.0,
            ..SearchConfig::with_cost_fn(cost_fn)
        }
    }

    fn unlimited(cost_fn: CostFn) -> SearchConfig {
        SearchConfig {
            max_expansions: usize::MAX,
            max_depth: 64,
            ..config(cost_fn)
        }
    }

    #[test]
    fn defaults_follow_cost_fn() {
        let c: SearchConfig = serde_json::from_str(r#"{"cost_fn":"length"}"#).unwrap();
        assert_eq!(c.reduce_certainty_factor, 0.05);
        assert_eq!((c.max_n, c.max_expansions, c.max_depth), (8, 8, 20));
        assert_eq!(c.temperature, 10.0);
        let c: SearchConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c.reduce_certainty_factor, 0.01);
        assert_eq!(c.al_method, AlMethod::Uncertainty);
    }

    #[test]
    fn config_round_trips() {
        let c = SearchConfig {
            al_method: AlMethod::Random,
            seed: 42,
            reset_tree: true,
            ..SearchConfig::with_cost_fn(CostFn::Length)
        };
        let text = serde_json::to_string(&c).unwrap();
        assert!(text.contains(r#""al_method":"random""#));
        assert!(text.contains(r#""cost_fn":"length""#));
        let back: SearchConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn config_rejects_bad_values() {
        assert!(serde_json::from_str::<SearchConfig>(r#"{"max_n":0}"#).is_err());
        assert!(serde_json::from_str::<SearchConfig>(r#"{"temperature":-1}"#).is_err());
        assert!(serde_json::from_str::<SearchConfig>(r#"{"typo":1}"#).is_err());
    }

    #[test]
    fn softmax_examples() {
        let w = softmax_weights(&[1.0, 2.0], 10.0);
        assert!((w[0] - 0.525).abs() < 5e-4 && (w[1] - 0.475).abs() < 5e-4);
        // exp(-0.1) by hand
        assert!((w[0] - 1.0 / (1.0 + 0.904_837_418_035_959_6)).abs() < 1e-12);
        assert_eq!(softmax_weights(&[3.0, 3.0], 10.0), vec![0.5, 0.5]);
    }

    #[test]
    fn expansion_example_two_items() {
        let c = config(CostFn::Length);
        let mut tree = SearchTree::new(AnnotationState::new(2), &c);
        tree.set_probs(probs(&[0.9, 0.8]));
        tree.expand_node(0, &c).unwrap();
        let actions = tree.root_actions();
        assert_eq!(actions.len(), 2);
        assert_eq!(actions[0].0, Guess::new(vec![1], vec![true]).unwrap());
        assert_eq!(actions[0].1, 2.0);
        assert_eq!(actions[1].0, Guess::new(vec![0, 1], vec![true, true]).unwrap());
        let expected = 1.0 + 0.28 * 3f64.log2();
        assert!((actions[1].1 - expected).abs() < 1e-12);
        assert!((actions[1].1 - 1.44377).abs() < 1e-4);
        assert!((tree.root_cost() - expected).abs() < 1e-12);
    }

    #[test]
    fn single_item_node() {
        let c = config(CostFn::Entropy);
        let mut tree = SearchTree::new(AnnotationState::new(1), &c);
        tree.set_probs(probs(&[0.7]));
        tree.expand_node(0, &c).unwrap();
        assert_eq!(tree.root_actions().len(), 1);
        assert_eq!(tree.root_cost(), 1.0);
        assert!(tree.states[1].terminal && tree.states[2].terminal);
        assert_eq!(tree.select_node(&c), None);
    }

    #[test]
    fn selection_follows_priorities() {
        let c = config(CostFn::Length);
        let mut tree = SearchTree::new(AnnotationState::new(2), &c);
        tree.set_probs(probs(&[0.9, 0.8]));
        tree.expand_node(0, &c).unwrap();
        // n=1 action: weight ~0.486, correct child 0.8 -> ~0.389.
        // n=2 action: only the incorrect child is open, ~0.514 * 0.28.
        let first = tree.actions[0].outcomes[0].child;
        assert_eq!(tree.select_node(&c), Some(first));
        let shallow = SearchConfig { max_depth: 1, ..c };
        assert_eq!(tree.select_node(&shallow), None);
    }

    #[test]
    fn pending_offers_only_dont_give_up() {
        let p = probs(&[0.9, 0.8, 0.7, 0.6]);
        let g = Guess::new(vec![0, 1, 2], vec![true, true, true]).unwrap();
        let state = AnnotationState::new(4).apply_answer(&g, false).unwrap();
        let c = config(CostFn::Entropy);
        let mut tree = SearchTree::new(state.clone(), &c);
        let best = tree.best_action(&p, &c).unwrap();
        assert_eq!(best, state.next_dont_give_up_guess(&p).unwrap());
        assert_eq!(best.len(), 2);
        assert_eq!(tree.root_actions().len(), 1);
    }

    #[test]
    fn near_certain_items_take_max_guess() {
        // One step of lookahead: 1 + E[log size] falls all the way to n = max_n.
        let c = SearchConfig {
            max_expansions: 1,
            ..SearchConfig::with_cost_fn(CostFn::Length)
        };
        let p = probs(&[0.999; 10]);
        let mut tree = SearchTree::new(AnnotationState::new(10), &c);
        let best = tree.best_action(&p, &c).unwrap();
        assert_eq!(best.len(), 8);
        assert!(best.labels().iter().all(|&l| l));
        let costs: Vec<f64> = tree.root_actions().iter().map(|a| a.1).collect();
        assert!(costs.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn deeper_lookahead_revises_large_guesses() {
        // Expanding the failure branch of the size-8 guess exposes the cost
        // of the don't-give-up chain; a mid-sized guess wins.
        let c = SearchConfig::with_cost_fn(CostFn::Length);
        let p = probs(&[0.999; 10]);
        let mut tree = SearchTree::new(AnnotationState::new(10), &c);
        let best = tree.best_action(&p, &c).unwrap();
        assert!(best.len() >= 2 && best.len() < 8);
        let (_, c8) = tree.root_actions()[7].clone();
        assert!(tree.root_cost() < c8);
    }

    /// Plays the tree's policy against a fixed truth, returning the
    /// number of questions asked.
    fn play(mut tree: SearchTree, p: &ItemProbabilities, c: &SearchConfig, truth: &Labeling) -> usize {
        let mut asked = 0;
        while !tree.is_terminal() {
            let g = tree.best_action(p, c).unwrap();
            let correct = g.iter().all(|(i, l)| truth.get(i) == l);
            tree = tree.advance(&g, correct, c).unwrap();
            asked += 1;
            assert!(asked < 64);
        }
        assert_eq!(tree.root_state().final_labeling().unwrap(), *truth);
        asked
    }

    fn exact_lookahead_matches_simulation(p: &[f64], cost_fn: CostFn) {
        let c = unlimited(cost_fn);
        let p = probs(p);
        let mut tree = SearchTree::new(AnnotationState::new(p.len()), &c);
        tree.best_action(&p, &c).unwrap();
        assert!(tree.select_node(&c).is_none());
        let root = tree.root_cost();
        let mut expected = 0.0;
        for truth in Labeling::all(p.len()) {
            let w = p.labeling_probability(&truth).unwrap();
            expected += w * play(tree.clone(), &p, &c, &truth) as f64;
        }
        assert!((root - expected).abs() < 1e-9, "root {root} vs simulated {expected}");
    }

    #[test]
    fn exact_lookahead_examples() {
        exact_lookahead_matches_simulation(&[0.9, 0.8], CostFn::Length);
        exact_lookahead_matches_simulation(&[0.95, 0.9, 0.85, 0.2], CostFn::Entropy);
        exact_lookahead_matches_simulation(&[0.5, 0.6, 0.99, 0.01], CostFn::Length);
    }

    #[test]
    fn uniform_probabilities_ask_one_item_at_a_time() {
        for cost_fn in [CostFn::Entropy, CostFn::Length] {
            let c = SearchConfig::with_cost_fn(cost_fn);
            let p = ItemProbabilities::uniform(10, 0.5).unwrap();
            let truth = Labeling::from_index(0b1011001110, 10);
            let mut tree = SearchTree::new(AnnotationState::new(10), &c);
            let mut asked = 0;
            while !tree.is_terminal() {
                let g = tree.best_action(&p, &c).unwrap();
                assert_eq!(g.len(), 1);
                let correct = g.iter().all(|(i, l)| truth.get(i) == l);
                tree = tree.advance(&g, correct, &c).unwrap();
                asked += 1;
            }
            assert_eq!(asked, 10);
        }
    }

    #[test]
    fn reset_and_reuse_agree_on_first_move() {
        let p = probs(&[0.9, 0.3, 0.75, 0.55, 0.98]);
        for reset_tree in [false, true] {
            let c = SearchConfig { reset_tree, ..SearchConfig::default() };
            let mut tree = SearchTree::new(AnnotationState::new(5), &c);
            let g = tree.best_action(&p, &c).unwrap();
            let tree = tree.advance(&g, false, &c).unwrap();
            assert!(tree.state_count() >= 1);
            assert_eq!(tree.states[0].depth, 0);
            assert!(tree.states.iter().all(|s| s.parent.is_none_or(|a| a < tree.actions.len())));
        }
    }

    #[test]
    fn advance_rejects_unknown_action() {
        let c = SearchConfig::default();
        let p = probs(&[0.9, 0.3]);
        let mut tree = SearchTree::new(AnnotationState::new(2), &c);
        tree.best_action(&p, &c).unwrap();
        let g = Guess::new(vec![0], vec![false]).unwrap();
        assert!(matches!(tree.advance(&g, true, &c), Err(Error::UnknownAction)));
    }

    #[test]
    fn terminal_root_has_no_action() {
        let c = SearchConfig::default();
        let done = AnnotationState::new(1)
            .apply_answer(&Guess::new(vec![0], vec![true]).unwrap(), true)
            .unwrap();
        let mut tree = SearchTree::new(done, &c);
        assert!(matches!(tree.best_action(&probs(&[0.4]), &c), Err(Error::Terminal)));
    }

    fn run_sequence(c: &SearchConfig, p: &ItemProbabilities, truth: &Labeling) -> Vec<Guess> {
        let mut tree = SearchTree::new(AnnotationState::new(p.len()), c);
        let mut out = Vec::new();
        while !tree.is_terminal() {
            let g = tree.best_action(p, c).unwrap();
            let correct = g.iter().all(|(i, l)| truth.get(i) == l);
            tree = tree.advance(&g, correct, c).unwrap();
            out.push(g);
        }
        out
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn softmax_sums_to_one(costs in prop::collection::vec(0.0f64..50.0, 1..10), t in 0.1f64..100.0) {
            let w = softmax_weights(&costs, t);
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn deterministic_given_seed(
            p in prop::collection::vec(0.01f64..0.99, 1..9),
            bits in any::<u64>(),
            seed in any::<u64>(),
            random in any::<bool>(),
        ) {
            let c = SearchConfig {
                seed,
                al_method: if random { AlMethod::Random } else { AlMethod::Uncertainty },
                ..SearchConfig::default()
            };
            let n = p.len();
            let p = probs(&p);
            let truth = Labeling::from_index(bits & ((1 << n) - 1), n);
            prop_assert_eq!(run_sequence(&c, &p, &truth), run_sequence(&c, &p, &truth));
        }

        #[test]
        fn exact_lookahead_random(
            p in prop::collection::vec(0.02f64..0.98, 1..5),
            length in any::<bool>(),
        ) {
            exact_lookahead_matches_simulation(&p, if length { CostFn::Length } else { CostFn::Entropy });
        }
    }
}
