//! Simulated-oracle experiments.

use std::fmt;
use std::ops::Range;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::huffman::HuffmanTree;
use crate::labels::Labeling;
use crate::search::SearchConfig;
use crate::session::{CurvePoint, Engine, Predictor};
use crate::synthetic::{generate, Problem};

pub const DEFAULT_MAX_QUESTIONS: usize = 2500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ia,
    Huffman,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Ia => "ia",
            Method::Huffman => "huffman",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "ia" => Ok(Method::Ia),
            "huffman" => Ok(Method::Huffman),
            other => Err(format!("unknown method `{other}`, expected ia or huffman")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionRecord {
    /// Guess size; 0 for Huffman subset questions.
    pub n: usize,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub method: Method,
    pub question_log: Vec<QuestionRecord>,
    pub questions: usize,
    /// Joint entropy of the initial probabilities, in bits.
    pub entropy: f64,
    pub curve: Vec<CurvePoint>,
    pub truncated: bool,
    pub cap: usize,
    /// Labels at the end of a completed run.
    pub labels: Option<Labeling>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub max_questions: usize,
    /// Reveal one random item's label before the first question.
    pub first_example: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            max_questions: DEFAULT_MAX_QUESTIONS,
            first_example: false,
        }
    }
}

fn answer_for(g: &crate::state::Guess, truth: &Labeling) -> bool {
    g.iter().all(|(i, l)| truth.get(i) == l)
}

/// Answers every question from `truth` until the dataset is labeled or the
/// question cap is reached.
pub fn simulate_run(
    predictor: Predictor,
    truth: &Labeling,
    method: Method,
    config: &SearchConfig,
    options: RunOptions,
    seed: u64,
) -> Result<RunRecord> {
    let n = predictor.probs().len();
    if truth.len() != n {
        return Err(Error::LengthMismatch { expected: n, got: truth.len() });
    }
    let entropy = predictor.probs().joint_entropy();
    match method {
        Method::Ia => simulate_ia(predictor, truth, config, options, seed, entropy),
        Method::Huffman => simulate_huffman(&predictor, truth, options, seed, entropy),
    }
}

fn simulate_ia(
    predictor: Predictor,
    truth: &Labeling,
    config: &SearchConfig,
    options: RunOptions,
    seed: u64,
    entropy: f64,
) -> Result<RunRecord> {
    let n = truth.len();
    let mut engine = Engine::new(config.clone(), predictor)?;
    if options.first_example {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(7);
        let i = rng.random_range(0..n);
        engine.provide_label(i, truth.get(i))?;
    }
    let mut log = Vec::new();
    while !engine.is_complete() && log.len() < options.max_questions {
        let g = engine.next_question()?;
        let correct = answer_for(&g, truth);
        engine.answer(correct)?;
        log.push(QuestionRecord { n: g.len(), correct });
    }
    let labels = engine.state().final_labeling();
    if let Some(l) = &labels {
        debug_assert_eq!(l, truth);
    }
    Ok(RunRecord {
        seed,
        method: Method::Ia,
        questions: log.len(),
        question_log: log,
        entropy,
        curve: engine.curve().to_vec(),
        truncated: labels.is_none(),
        cap: options.max_questions,
        labels,
    })
}

/// Walks the Huffman tree toward `truth`. An item counts as labeled once
/// every labeling left in the current subtree agrees on it.
fn simulate_huffman(
    predictor: &Predictor,
    truth: &Labeling,
    options: RunOptions,
    seed: u64,
    entropy: f64,
) -> Result<RunRecord> {
    let n = truth.len();
    let tree = HuffmanTree::for_labelings(predictor.probs())?;
    let target = truth.index();
    let labeled_at = |node: usize| -> usize {
        let symbols = tree.leaf_symbols(node);
        let any = symbols.iter().fold(0u64, |acc, s| acc | s);
        let all = symbols.iter().fold(u64::MAX, |acc, s| acc & s);
        let mask = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
        (!(any ^ all) & mask).count_ones() as usize
    };
    let mut node = tree.root();
    let mut log = Vec::new();
    let mut curve = vec![CurvePoint { q: 0, labeled: labeled_at(node), incorrect: 0 }];
    while let Some((left, right)) = tree.children(node) {
        if log.len() >= options.max_questions {
            break;
        }
        let yes = tree.leaf_symbols(right).contains(&target);
        node = if yes { right } else { left };
        log.push(QuestionRecord { n: 0, correct: yes });
        curve.push(CurvePoint { q: log.len(), labeled: labeled_at(node), incorrect: 0 });
    }
    let labels = tree
        .is_leaf(node)
        .then(|| Labeling::from_index(tree.leaf_symbols(node)[0], n));
    Ok(RunRecord {
        seed,
        method: Method::Huffman,
        questions: log.len(),
        question_log: log,
        entropy,
        curve,
        truncated: labels.is_none(),
        cap: options.max_questions,
        labels,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveMetrics {
    pub q_at_l: usize,
    pub max_q: usize,
    pub l_at_max_q: usize,
    pub incorrect_at_max_q: usize,
    /// `q_at_l / target`.
    pub ratio: f64,
}

pub fn curve_metrics(record: &RunRecord, target_l: usize) -> Result<CurveMetrics> {
    let last = match record.curve.last() {
        Some(p) if record.questions > 0 => *p,
        _ => return Err(Error::EmptyRecord),
    };
    if target_l == 0 {
        return Err(Error::Invalid("target L must be positive".into()));
    }
    let q_at_l = record
        .curve
        .iter()
        .find(|p| p.labeled >= target_l)
        .map_or(record.cap, |p| p.q);
    Ok(CurveMetrics {
        q_at_l,
        max_q: last.q,
        l_at_max_q: last.labeled,
        incorrect_at_max_q: last.incorrect,
        ratio: q_at_l as f64 / target_l as f64,
    })
}

#[derive(Debug, Clone)]
pub struct SuiteConfig {
    pub problems: Vec<Problem>,
    pub seeds: Range<u64>,
    pub search: SearchConfig,
    pub max_questions: usize,
    /// Worker threads; `None` uses every logical CPU.
    pub jobs: Option<usize>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            problems: Problem::ALL.to_vec(),
            seeds: 0..1000,
            search: SearchConfig::default(),
            max_questions: DEFAULT_MAX_QUESTIONS,
            jobs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteRun {
    pub problem: Problem,
    /// `entropy`, `huffman` or `ia`.
    pub method: String,
    pub seed: u64,
    pub questions: f64,
    pub entropy: f64,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub problem: Problem,
    pub method: String,
    pub runs: usize,
    pub mean_q: f64,
    pub sem_q: f64,
    pub mean_q_minus_h: f64,
    pub sem_q_minus_h: f64,
    pub mean_q_over_h: f64,
    pub sem_q_over_h: f64,
    pub truncated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub problem: Problem,
    pub method: String,
    pub seed: u64,
    pub q: usize,
    pub labeled: usize,
    pub incorrect: usize,
}

#[derive(Debug, Clone, Default)]
pub struct SuiteResult {
    pub runs: Vec<SuiteRun>,
    pub summary: Vec<SummaryRow>,
    pub curves: Vec<CurveRow>,
}

impl SuiteResult {
    pub fn summary_for(&self, problem: Problem, method: &str) -> Option<&SummaryRow> {
        self.summary
            .iter()
            .find(|r| r.problem == problem && r.method == method)
    }

    /// Writes `runs.csv`, `summary.csv` and `curves.csv` into `dir`.
    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        fn write<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
            let mut w = csv::Writer::from_path(path)?;
            for r in rows {
                w.serialize(r)?;
            }
            w.flush()?;
            Ok(())
        }
        write(&dir.join("runs.csv"), &self.runs)?;
        write(&dir.join("summary.csv"), &self.summary)?;
        write(&dir.join("curves.csv"), &self.curves)
    }
}

/// Mean and standard error of the mean.
pub fn mean_sem(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn summarize(problem: Problem, method: &str, runs: &[&SuiteRun]) -> SummaryRow {
    let col = |f: &dyn Fn(&SuiteRun) -> f64| -> (f64, f64) {
        mean_sem(&runs.iter().map(|r| f(r)).collect::<Vec<_>>())
    };
    let (mean_q, sem_q) = col(&|r| r.questions);
    let (mean_q_minus_h, sem_q_minus_h) = col(&|r| r.questions - r.entropy);
    let (mean_q_over_h, sem_q_over_h) = col(&|r| r.questions / r.entropy);
    SummaryRow {
        problem,
        method: method.to_string(),
        runs: runs.len(),
        mean_q,
        sem_q,
        mean_q_minus_h,
        sem_q_minus_h,
        mean_q_over_h,
        sem_q_over_h,
        truncated: runs.iter().filter(|r| r.truncated).count(),
    }
}

/// Entropy bound, Huffman and IA on every (problem, seed) pair. Output
/// order depends only on the config, not on thread scheduling.
pub fn run_table1_suite(config: &SuiteConfig) -> Result<SuiteResult> {
    config.search.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = config.jobs {
        builder = builder.num_threads(j.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;
    let tasks: Vec<(Problem, u64)> = config
        .problems
        .iter()
        .flat_map(|&p| config.seeds.clone().map(move |s| (p, s)))
        .collect();
    let options = RunOptions {
        max_questions: config.max_questions,
        first_example: false,
    };
    let per_task: Vec<Result<(RunRecord, RunRecord)>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(problem, seed)| {
                let inst = generate(problem, seed);
                let search = SearchConfig {
                    seed: config.search.seed.wrapping_add(seed),
                    ..config.search.clone()
                };
                let predictor = Predictor::Fixed(inst.probs.clone());
                let huffman = simulate_run(predictor.clone(), &inst.labels, Method::Huffman, &search, options, seed)?;
                let ia = simulate_run(predictor, &inst.labels, Method::Ia, &search, options, seed)?;
                Ok((huffman, ia))
            })
            .collect()
    });

    let mut result = SuiteResult::default();
    for (&(problem, seed), task) in tasks.iter().zip(per_task) {
        let (huffman, ia) = task?;
        result.runs.push(SuiteRun {
            problem,
            method: "entropy".into(),
            seed,
            questions: huffman.entropy,
            entropy: huffman.entropy,
            truncated: false,
        });
        for rec in [huffman, ia] {
            let method = rec.method.to_string();
            result.runs.push(SuiteRun {
                problem,
                method: method.clone(),
                seed,
                questions: rec.questions as f64,
                entropy: rec.entropy,
                truncated: rec.truncated,
            });
            result.curves.extend(rec.curve.iter().map(|p| CurveRow {
                problem,
                method: method.clone(),
                seed,
                q: p.q,
                labeled: p.labeled,
                incorrect: p.incorrect,
            }));
        }
    }
    for &problem in &config.problems {
        for method in ["entropy", "huffman", "ia"] {
            let rows: Vec<&SuiteRun> = result
                .runs
                .iter()
                .filter(|r| r.problem == problem && r.method == method)
                .collect();
            result.summary.push(summarize(problem, method, &rows));
        }
    }
    Ok(result)
}
