//! `yesno` command line.

use std::io::{BufRead, Write};
use std::net::SocketAddr;
use std::ops::Range;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use yesno_core::harness::{
    curve_metrics, run_table1_suite, simulate_run, Method, RunOptions, SuiteConfig, DEFAULT_MAX_QUESTIONS,
};
use yesno_core::huffman::{HuffmanTree, MAX_HUFFMAN_ITEMS};
use yesno_core::predictors::{load_probability_file, LogisticModel, ProbabilityFile};
use yesno_core::session::{Engine, Predictor};
use yesno_core::synthetic::{generate, Problem};
use yesno_core::{AlMethod, CostFn, Error, ItemProbabilities, Labeling, SearchConfig};

/// Exit status for bad invocations, same as clap's.
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_FAILURE: i32 = 1;

#[derive(Debug, Parser)]
#[command(name = "yesno", version, about = "Annotate binary datasets with yes/no questions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run entropy, Huffman and the lookahead questioner on synthetic problems.
    Synth(SynthArgs),
    /// Annotate a probability file, simulated when it carries labels and
    /// interactive on stdin otherwise.
    Annotate(AnnotateArgs),
    /// Print the Huffman tree over all labelings of a small dataset.
    HuffmanDemo(HuffmanArgs),
    /// Start the HTTP session service.
    Serve(ServeArgs),
    /// Write synthetic instances as probability files.
    Export(ExportArgs),
}

/// Search flags, named after the config fields.
#[derive(Debug, Clone, Args)]
pub struct SearchFlags {
    /// Largest guess size
    #[arg(long, default_value_t = 8)]
    pub max_n: usize,
    /// Tree expansions per question
    #[arg(long, default_value_t = 8)]
    pub max_expansions: usize,
    /// Softmax temperature for node selection
    #[arg(long, default_value_t = 10.0)]
    pub temperature: f64,
    /// Maximum selection depth
    #[arg(long, default_value_t = 20)]
    pub max_depth: usize,
    /// Single-item guess rule: random or uncertainty
    #[arg(long, default_value = "uncertainty")]
    pub al_method: AlMethod,
    /// Cost of unexpanded states: entropy or length
    #[arg(long, default_value = "entropy")]
    pub cost_fn: CostFn,
    /// Certainty reduction; defaults to 0.01 for entropy and 0.05 for length
    #[arg(long)]
    pub reduce_certainty_factor: Option<f64>,
    /// Rebuild the search tree after every answer
    #[arg(long, default_value_t = false)]
    pub reset_tree: bool,
    /// Random seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON config file; its fields override these flags
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
}

impl SearchFlags {
    /// Flags overlaid with the config file, if any.
    pub fn resolve(&self) -> anyhow::Result<SearchConfig> {
        let mut doc = json!({
            "max_n": self.max_n,
            "max_expansions": self.max_expansions,
            "temperature": self.temperature,
            "max_depth": self.max_depth,
            "al_method": self.al_method,
            "cost_fn": self.cost_fn,
            "reset_tree": self.reset_tree,
            "seed": self.seed,
        });
        if let Some(r) = self.reduce_certainty_factor {
            doc["reduce_certainty_factor"] = json!(r);
        }
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let file: Value = serde_json::from_str(&text).map_err(|e| parse_error(path, &e))?;
            let Value::Object(fields) = file else {
                bail!("{}: config must be a JSON object", path.display());
            };
            for (k, v) in fields {
                doc[k] = v;
            }
        }
        serde_json::from_value(doc).context("invalid search config")
    }
}

fn parse_error(path: &Path, e: &serde_json::Error) -> anyhow::Error {
    anyhow::anyhow!("{}:{}:{}: {e}", path.display(), e.line(), e.column())
}

/// `a..b` (end exclusive) or a single seed.
pub fn parse_seeds(s: &str) -> Result<Range<u64>, String> {
    let bad = || format!("invalid seed range `{s}`, expected START..END or a single seed");
    match s.split_once("..") {
        Some((a, b)) => {
            let a: u64 = a.trim().parse().map_err(|_| bad())?;
            let b: u64 = b.trim().parse().map_err(|_| bad())?;
            if b <= a {
                return Err(format!("empty seed range `{s}`"));
            }
            Ok(a..b)
        }
        None => {
            let a: u64 = s.trim().parse().map_err(|_| bad())?;
            Ok(a..a + 1)
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Problem to run (repeatable): a, b or c; all three when omitted
    #[arg(long = "problem")]
    pub problems: Vec<Problem>,
    /// Seed range, end exclusive
    #[arg(long, default_value = "0..1000", value_parser = parse_seeds)]
    pub seeds: Range<u64>,
    /// Output directory for runs.csv, summary.csv and curves.csv
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads; defaults to the number of logical CPUs
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Question cap per run
    #[arg(long, default_value_t = DEFAULT_MAX_QUESTIONS)]
    pub max_questions: usize,
    #[command(flatten)]
    pub search: SearchFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PredictorArg {
    Fixed,
    Logistic,
}

#[derive(Debug, Args)]
pub struct AnnotateArgs {
    /// Probability file
    #[arg(long)]
    pub file: PathBuf,
    /// Questioning method for simulated runs: ia or huffman
    #[arg(long, default_value = "ia")]
    pub method: Method,
    /// Predictor: fixed file probabilities, or logistic refit on the item features
    #[arg(long, value_enum, default_value_t = PredictorArg::Fixed)]
    pub predictor: PredictorArg,
    /// Report the questions needed to label this many items; defaults to all
    #[arg(long)]
    pub target_l: Option<usize>,
    /// Question cap for simulated runs
    #[arg(long, default_value_t = DEFAULT_MAX_QUESTIONS)]
    pub max_questions: usize,
    /// Write the full run record as JSON here
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub search: SearchFlags,
}

#[derive(Debug, Args)]
pub struct HuffmanArgs {
    /// Number of items (at most 20), with random probabilities from --seed
    #[arg(long, default_value_t = 3)]
    pub n: usize,
    /// Explicit comma-separated probabilities; overrides --n
    #[arg(long, value_delimiter = ',')]
    pub probs: Option<Vec<f64>>,
    /// Seed for random probabilities
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Print the tree only up to this many leaves
    #[arg(long, default_value_t = 64)]
    pub max_print: usize,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Port to listen on
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Address to bind
    #[arg(long, default_value = "127.0.0.1")]
    pub host: std::net::IpAddr,
    /// Data directory; defaults to $ANNOTATOR_DATA_DIR, then ./yesno-data
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Problem: a, b or c
    #[arg(long)]
    pub problem: Problem,
    /// Seed range, end exclusive
    #[arg(long, default_value = "0..1", value_parser = parse_seeds)]
    pub seeds: Range<u64>,
    /// Output directory; one `<problem>-<seed>.json` per instance
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `argv` (including the program name) and runs it. Returns the
/// process exit code.
pub fn run<I, T>(argv: I, input: &mut dyn BufRead, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{}", e.render());
                return EXIT_USAGE;
            }
            let _ = write!(out, "{}", e.render());
            return 0;
        }
    };
    let result = match cli.command {
        Command::Synth(a) => synth(&a, out),
        Command::Annotate(a) => annotate(&a, input, out),
        Command::HuffmanDemo(a) => huffman_demo(&a, out),
        Command::Serve(a) => serve(&a, out),
        Command::Export(a) => export(&a, out),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let usage = matches!(e.downcast_ref::<Error>(), Some(Error::Capacity { .. }));
            let _ = writeln!(err, "error: {e:#}");
            if usage {
                EXIT_USAGE
            } else {
                EXIT_FAILURE
            }
        }
    }
}

fn synth(a: &SynthArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let config = SuiteConfig {
        problems: if a.problems.is_empty() { Problem::ALL.to_vec() } else { a.problems.clone() },
        seeds: a.seeds.clone(),
        search: a.search.resolve()?,
        max_questions: a.max_questions,
        jobs: a.jobs,
    };
    let result = run_table1_suite(&config)?;
    result.write_csv(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    writeln!(out, "{:<8} {:<8} {:>5} {:>10} {:>10} {:>10} {:>6}", "problem", "method", "runs", "Q", "Q-H", "Q/H", "trunc")?;
    for r in &result.summary {
        writeln!(
            out,
            "{:<8} {:<8} {:>5} {:>10.3} {:>10.3} {:>10.3} {:>6}",
            r.problem.to_string(),
            r.method,
            r.runs,
            r.mean_q,
            r.mean_q_minus_h,
            r.mean_q_over_h,
            r.truncated
        )?;
    }
    writeln!(out, "wrote {}", a.out.display())?;
    Ok(())
}

fn build_predictor(kind: PredictorArg, file: &ProbabilityFile) -> anyhow::Result<Predictor> {
    Ok(match kind {
        PredictorArg::Fixed => Predictor::Fixed(file.probs.clone()),
        PredictorArg::Logistic => {
            let Some(points) = &file.points else {
                bail!("the logistic predictor needs an `x` feature pair on every item");
            };
            Predictor::logistic(points.clone(), LogisticModel::default())?
        }
    })
}

fn annotate(a: &AnnotateArgs, input: &mut dyn BufRead, out: &mut dyn Write) -> anyhow::Result<()> {
    let file = load_probability_file(&a.file).with_context(|| format!("loading {}", a.file.display()))?;
    let config = a.search.resolve()?;
    let predictor = build_predictor(a.predictor, &file)?;
    match &file.labels {
        Some(truth) => simulate(a, &config, predictor, truth, out),
        None => interactive(&config, predictor, &file, input, out),
    }
}

fn simulate(
    a: &AnnotateArgs,
    config: &SearchConfig,
    predictor: Predictor,
    truth: &Labeling,
    out: &mut dyn Write,
) -> anyhow::Result<()> {
    let options = RunOptions {
        max_questions: a.max_questions,
        first_example: predictor.is_trainable(),
    };
    let record = simulate_run(predictor, truth, a.method, config, options, config.seed)?;
    let target = a.target_l.unwrap_or(truth.len());
    let metrics = curve_metrics(&record, target).ok();
    let summary = json!({
        "method": record.method,
        "items": truth.len(),
        "questions": record.questions,
        "entropy": record.entropy,
        "truncated": record.truncated,
        "correct": record.labels.as_ref() == Some(truth),
        "target_l": target,
        "metrics": metrics,
    });
    writeln!(out, "{}", serde_json::to_string_pretty(&summary)?)?;
    if let Some(path) = &a.out {
        std::fs::write(path, serde_json::to_vec_pretty(&record)?).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn interactive(
    config: &SearchConfig,
    predictor: Predictor,
    file: &ProbabilityFile,
    input: &mut dyn BufRead,
    out: &mut dyn Write,
) -> anyhow::Result<()> {
    let mut engine = Engine::new(config.clone(), predictor)?;
    let mut line = String::new();
    while !engine.is_complete() {
        let g = engine.next_question()?;
        writeln!(out, "question {}: are all of these correct?", engine.progress().questions + 1)?;
        for (i, label) in g.iter() {
            let payload = file.payloads.get(i).cloned().flatten().unwrap_or_default();
            writeln!(out, "  item {i}: {} {payload}", u8::from(label))?;
        }
        let correct = loop {
            write!(out, "[y/n] ")?;
            out.flush()?;
            line.clear();
            if input.read_line(&mut line)? == 0 {
                bail!("input ended before every item was labeled");
            }
            match line.trim().to_ascii_lowercase().as_str() {
                "y" | "yes" => break true,
                "n" | "no" => break false,
                _ => writeln!(out, "please answer y or n")?,
            }
        };
        let outcome = engine.answer(correct)?;
        writeln!(out, "labeled {}/{}", outcome.progress.labeled, outcome.progress.total)?;
    }
    let labels = engine.state().final_labeling().context("session ended unlabeled")?;
    let labels: Vec<u8> = labels.iter().map(u8::from).collect();
    writeln!(out, "{}", json!({ "questions": engine.progress().questions, "labels": labels }))?;
    Ok(())
}

fn huffman_demo(a: &HuffmanArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let probs = match &a.probs {
        Some(p) => p.clone(),
        None => {
            if a.n > MAX_HUFFMAN_ITEMS {
                return Err(Error::Capacity { what: "items", got: a.n, limit: MAX_HUFFMAN_ITEMS }.into());
            }
            // A small LCG keeps the demo independent of the library's streams.
            let mut x = a.seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (0..a.n)
                .map(|_| {
                    x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    ((x >> 11) as f64 / (1u64 << 53) as f64 * 100.0).round() / 100.0
                })
                .collect()
        }
    };
    let probs = ItemProbabilities::new(probs)?;
    let tree = HuffmanTree::for_labelings(&probs)?;
    let n = probs.len();
    writeln!(out, "items: {n}")?;
    writeln!(out, "probabilities: {:?}", probs.as_slice())?;
    writeln!(out, "labelings: {}", tree.leaf_count())?;
    if tree.leaf_count() <= a.max_print {
        let mut stack = vec![(tree.root(), 0usize, "")];
        while let Some((node, depth, edge)) = stack.pop() {
            let indent = "  ".repeat(depth);
            match tree.children(node) {
                Some((l, r)) => {
                    writeln!(out, "{indent}{edge}* p={:.4}", tree.probability(node))?;
                    stack.push((l, depth + 1, "no  "));
                    stack.push((r, depth + 1, "yes "));
                }
                None => {
                    let bits: String = Labeling::from_index(node as u64, n)
                        .iter()
                        .map(|b| if b { '1' } else { '0' })
                        .collect();
                    writeln!(out, "{indent}{edge}{bits} p={:.4}", tree.probability(node))?;
                }
            }
        }
    }
    let h = probs.joint_entropy();
    let q = tree.expected_questions();
    writeln!(out, "entropy: {h:.6}")?;
    writeln!(out, "expected questions: {q:.6}")?;
    writeln!(out, "gap: {:.6}", q - h)?;
    Ok(())
}

fn serve(a: &ServeArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let store = match &a.data_dir {
        Some(d) => yesno_server::Store::open(d),
        None => yesno_server::Store::from_env(),
    }
    .context("opening data directory")?;
    let addr = SocketAddr::new(a.host, a.port);
    writeln!(out, "listening on http://{addr}, data in {}", store.root().display())?;
    out.flush()?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(yesno_server::serve(addr, store))?;
    Ok(())
}

fn export(a: &ExportArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for seed in a.seeds.clone() {
        let inst = generate(a.problem, seed);
        let path = a.out.join(format!("{}-{seed}.json", a.problem));
        std::fs::write(&path, serde_json::to_vec_pretty(&inst.to_file().to_json())?)
            .with_context(|| format!("writing {}", path.display()))?;
        writeln!(out, "{}", path.display())?;
    }
    Ok(())
}
