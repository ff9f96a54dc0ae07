//! Question/answer loop over one dataset, shared by the simulator and the
//! HTTP service. Everything here is deterministic given the config seed and
//! the sequence of answers, which is what makes event-log replay work.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::ItemProbabilities;
use crate::predictors::{train_logistic, LogisticModel, Point2D, TrainingData};
use crate::search::{SearchConfig, SearchTree};
use crate::state::{AnnotationState, Guess};

/// Retrain after answer `q` (1-based): every answer for the first hundred,
/// every second answer for the next hundred, and so on.
pub fn should_retrain(q: usize) -> bool {
    q > 0 && q.is_multiple_of(q.div_ceil(100))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Predictor {
    /// Probabilities that never change.
    Fixed(ItemProbabilities),
    /// Logistic model over item features, refit on the answers so far.
    Logistic {
        points: Vec<Point2D>,
        model: LogisticModel,
        probs: ItemProbabilities,
        version: u64,
    },
}

impl Predictor {
    pub fn logistic(points: Vec<Point2D>, model: LogisticModel) -> Result<Self> {
        let probs = model.predict_all(&points)?;
        Ok(Predictor::Logistic {
            points,
            model,
            probs,
            version: 0,
        })
    }

    pub fn probs(&self) -> &ItemProbabilities {
        match self {
            Predictor::Fixed(p) => p,
            Predictor::Logistic { probs, .. } => probs,
        }
    }

    /// Bumped on every refit; 0 for fixed predictors.
    pub fn version(&self) -> u64 {
        match self {
            Predictor::Fixed(_) => 0,
            Predictor::Logistic { version, .. } => *version,
        }
    }

    pub fn is_trainable(&self) -> bool {
        matches!(self, Predictor::Logistic { .. })
    }

    /// Refits on the labeled items plus the pending incorrect guess. Does
    /// nothing for fixed predictors or when there is nothing usable to fit.
    fn retrain(&mut self, state: &AnnotationState) -> Result<()> {
        let Predictor::Logistic {
            points,
            model,
            probs,
            version,
        } = self
        else {
            return Ok(());
        };
        let (xs, ys): (Vec<Point2D>, Vec<bool>) =
            state.labeled().map(|(i, l)| (points[i], l)).unzip();
        let (pxs, pys): (Vec<Point2D>, Vec<bool>) = state
            .pending()
            .map(|g| g.iter().map(|(i, l)| (points[i], l)).unzip())
            .unwrap_or_default();
        let mut data = TrainingData::new(&xs, &ys);
        if !pxs.is_empty() {
            data = data.with_pending(&pxs, &pys);
        }
        match train_logistic(&data, *model) {
            Ok(m) => {
                *model = m;
                *probs = m.predict_all(points)?;
                *version += 1;
                Ok(())
            }
            Err(Error::DegenerateInput(_)) => Ok(()),
            Err(e) => Err(e),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Questions asked so far.
    pub q: usize,
    pub labeled: usize,
    /// Incorrect answers so far.
    pub incorrect: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub labeled: usize,
    pub total: usize,
    pub questions: usize,
    pub incorrect: usize,
}

/// Result of applying one answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerOutcome {
    /// Items that went from unlabeled to labeled, with their labels.
    pub committed: Vec<(usize, bool)>,
    pub progress: Progress,
    pub complete: bool,
}

#[derive(Debug, Clone)]
pub struct Engine {
    config: SearchConfig,
    state: AnnotationState,
    tree: SearchTree,
    predictor: Predictor,
    outstanding: Option<Guess>,
    questions: usize,
    incorrect: usize,
    curve: Vec<CurvePoint>,
}

impl Engine {
    pub fn new(config: SearchConfig, predictor: Predictor) -> Result<Self> {
        config.validate()?;
        let state = AnnotationState::new(predictor.probs().len());
        Ok(Self {
            tree: SearchTree::new(state.clone(), &config),
            config,
            state,
            predictor,
            outstanding: None,
            questions: 0,
            incorrect: 0,
            curve: vec![CurvePoint {
                q: 0,
                labeled: 0,
                incorrect: 0,
            }],
        })
    }

    /// Labels an item before any question is asked (a seed example for a
    /// predictor trained from scratch), then refits.
    pub fn provide_label(&mut self, index: usize, label: bool) -> Result<()> {
        if self.questions > 0 || self.outstanding.is_some() {
            return Err(Error::Invalid("seed labels must precede questions".into()));
        }
        let g = Guess::new(vec![index], vec![label])?;
        self.state = self.state.apply_answer(&g, true)?;
        self.tree = SearchTree::new(self.state.clone(), &self.config);
        self.predictor.retrain(&self.state)?;
        self.curve[0].labeled = self.state.labeled_count();
        Ok(())
    }

    pub fn config(&self) -> &SearchConfig {
        &self.config
    }

    pub fn state(&self) -> &AnnotationState {
        &self.state
    }

    pub fn predictor(&self) -> &Predictor {
        &self.predictor
    }

    pub fn outstanding(&self) -> Option<&Guess> {
        self.outstanding.as_ref()
    }

    pub fn is_complete(&self) -> bool {
        self.state.is_terminal()
    }

    pub fn curve(&self) -> &[CurvePoint] {
        &self.curve
    }

    pub fn progress(&self) -> Progress {
        Progress {
            labeled: self.state.labeled_count(),
            total: self.state.len(),
            questions: self.questions,
            incorrect: self.incorrect,
        }
    }

    /// Picks the next guess and marks it outstanding. Fails if a question
    /// is already outstanding or every item is labeled.
    pub fn next_question(&mut self) -> Result<Guess> {
        if self.outstanding.is_some() {
            return Err(Error::Invalid("a question is already outstanding".into()));
        }
        let g = self.tree.best_action(self.predictor.probs(), &self.config)?;
        self.outstanding = Some(g.clone());
        Ok(g)
    }

    pub fn answer(&mut self, correct: bool) -> Result<AnswerOutcome> {
        let g = self
            .outstanding
            .take()
            .ok_or_else(|| Error::Invalid("no outstanding question".into()))?;
        let before = self.state.clone();
        self.state = self.state.apply_answer(&g, correct)?;
        let tree = std::mem::replace(&mut self.tree, SearchTree::new(AnnotationState::new(0), &self.config));
        self.tree = tree.advance(&g, correct, &self.config)?;
        self.questions += 1;
        if !correct {
            self.incorrect += 1;
        }
        if self.predictor.is_trainable() && should_retrain(self.questions) && !self.state.is_terminal() {
            self.predictor.retrain(&self.state)?;
        }
        self.curve.push(CurvePoint {
            q: self.questions,
            labeled: self.state.labeled_count(),
            incorrect: self.incorrect,
        });
        let committed = self
            .state
            .labeled()
            .filter(|&(i, _)| before.is_unlabeled(i))
            .collect();
        Ok(AnswerOutcome {
            committed,
            progress: self.progress(),
            complete: self.state.is_terminal(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::Labeling;
    use crate::search::CostFn;

    #[test]
    fn retrain_cadence() {
        let hits: Vec<usize> = (1..=400).filter(|&q| should_retrain(q)).collect();
        assert_eq!(&hits[..100], (1..=100).collect::<Vec<_>>().as_slice());
        assert!(hits.contains(&102) && !hits.contains(&101));
        assert!(hits.contains(&201) && !hits.contains(&202) && hits.contains(&204));
        assert!(!should_retrain(0));
    }

    fn play(engine: &mut Engine, truth: &Labeling) -> usize {
        while !engine.is_complete() {
            let g = engine.next_question().unwrap();
            let ok = g.iter().all(|(i, l)| truth.get(i) == l);
            engine.answer(ok).unwrap();
        }
        engine.progress().questions
    }

    #[test]
    fn engine_labels_everything_correctly() {
        let probs = ItemProbabilities::new(vec![0.9, 0.2, 0.6, 0.95, 0.4, 0.7]).unwrap();
        let truth = Labeling::new(vec![true, true, false, true, false, true]);
        let mut e = Engine::new(SearchConfig::default(), Predictor::Fixed(probs)).unwrap();
        let q = play(&mut e, &truth);
        assert_eq!(e.state().final_labeling().unwrap(), truth);
        assert_eq!(e.curve().len(), q + 1);
        assert_eq!(e.curve().last().unwrap().labeled, 6);
        assert!(matches!(e.next_question(), Err(Error::Terminal)));
    }

    #[test]
    fn outstanding_question_guard() {
        let probs = ItemProbabilities::new(vec![0.9, 0.2]).unwrap();
        let mut e = Engine::new(SearchConfig::default(), Predictor::Fixed(probs)).unwrap();
        assert!(e.answer(true).is_err());
        e.next_question().unwrap();
        assert!(e.next_question().is_err());
    }

    #[test]
    fn answer_reports_committed_items() {
        let probs = ItemProbabilities::new(vec![0.5; 3]).unwrap();
        let mut e = Engine::new(SearchConfig::default(), Predictor::Fixed(probs)).unwrap();
        let g = e.next_question().unwrap();
        assert_eq!(g.len(), 1);
        let out = e.answer(false).unwrap();
        assert_eq!(out.committed, vec![(g.indices()[0], !g.labels()[0])]);
        assert_eq!(out.progress.incorrect, 1);
    }

    #[test]
    fn trainable_predictor_refits() {
        let points: Vec<Point2D> = (0..12)
            .map(|i| Point2D::new(i as f64 / 3.0 - 2.0, (i % 3) as f64 - 1.0))
            .collect();
        let truth = Labeling::new(points.iter().map(|p| p.x1 > 0.0).collect());
        let predictor = Predictor::logistic(points, LogisticModel::default()).unwrap();
        let config = SearchConfig::with_cost_fn(CostFn::Entropy);
        let mut e = Engine::new(config, predictor).unwrap();
        e.provide_label(0, truth.get(0)).unwrap();
        assert_eq!(e.predictor().version(), 1);
        assert_eq!(e.curve()[0].labeled, 1);
        play(&mut e, &truth);
        assert_eq!(e.state().final_labeling().unwrap(), truth);
        assert!(e.predictor().version() > 1);
    }

    #[test]
    fn replay_is_deterministic() {
        let probs = ItemProbabilities::new(vec![0.8, 0.3, 0.55, 0.9, 0.1, 0.65, 0.45]).unwrap();
        let truth = Labeling::new(vec![true, true, false, true, false, false, true]);
        let config = SearchConfig {
            al_method: crate::search::AlMethod::Random,
            seed: 9,
            ..SearchConfig::default()
        };
        let mut a = Engine::new(config.clone(), Predictor::Fixed(probs.clone())).unwrap();
        let mut answers = Vec::new();
        let mut guesses = Vec::new();
        while !a.is_complete() {
            let g = a.next_question().unwrap();
            let ok = g.iter().all(|(i, l)| truth.get(i) == l);
            a.answer(ok).unwrap();
            guesses.push(g);
            answers.push(ok);
        }
        let mut b = Engine::new(config, Predictor::Fixed(probs)).unwrap();
        for (g, ok) in guesses.iter().zip(answers) {
            assert_eq!(&b.next_question().unwrap(), g);
            b.answer(ok).unwrap();
        }
        assert_eq!(a.state(), b.state());
    }
}
