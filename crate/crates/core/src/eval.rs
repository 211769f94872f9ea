//! Accuracy metrics over held-out trees, plus the train/test harness used
//! for depth sweeps and hapax ablations.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::chart::{ParseError, Parser};
use crate::disambiguation::{
    compute_inside, estimate_parse_distribution, most_probable_derivation,
    most_probable_parse_exact, select_top_parses, DisambiguationError, SampleSize, SamplingScheme,
};
use crate::fragments::{corpus_fragments, project_stsg, FragmentError, FragmentFilter};
use crate::stsg::{EnumerateError, GrammarError, DEFAULT_ENUMERATION_CAP};
use crate::treebank::{Corpus, CorpusError, Label, Tree};

/// Suffix marking auxiliary nodes introduced by [`binarize`].
pub const AUX_MARK: char = '|';

/// Right-folds nodes with more than two children:
/// `(X a b c)` becomes `(X a (X| b c))`. Yield is unchanged and the
/// auxiliary labels let [`unbinarize`] undo it.
pub fn binarize(tree: &Tree) -> Tree {
    fn aux(label: &Label) -> Label {
        if label.as_str().ends_with(AUX_MARK) {
            label.clone()
        } else {
            Label::nonterminal(&format!("{}{AUX_MARK}", label.as_str()))
        }
    }
    fn fold(label: &Label, children: &[Tree]) -> Tree {
        let kids = if children.len() > 2 {
            vec![children[0].clone(), fold(&aux(label), &children[1..])]
        } else {
            children.to_vec()
        };
        Tree::internal(label.clone(), kids).expect("nonterminal label")
    }
    if tree.is_leaf() {
        return tree.clone();
    }
    let children: Vec<Tree> = tree.children().iter().map(binarize).collect();
    fold(tree.label(), &children)
}

/// Splices auxiliary nodes back into their parents.
pub fn unbinarize(tree: &Tree) -> Tree {
    fn push_children(node: &Tree, out: &mut Vec<Tree>) {
        for c in node.children() {
            if !c.is_leaf() && c.label().as_str().ends_with(AUX_MARK) {
                push_children(c, out);
            } else {
                out.push(unbinarize(c));
            }
        }
    }
    if tree.is_leaf() {
        return tree.clone();
    }
    let mut kids = Vec::new();
    push_children(tree, &mut kids);
    Tree::internal(tree.label().clone(), kids).expect("nonterminal label")
}

pub type Span = (usize, usize);

/// Spans `(i, j)` with `j - i ≥ 2` of all internal nodes, over leaf
/// positions. The whole-sentence span is included.
pub fn brackets_of(tree: &Tree) -> BTreeSet<Span> {
    fn walk(node: &Tree, start: usize, out: &mut BTreeSet<Span>) -> usize {
        if node.is_leaf() {
            return start + 1;
        }
        let mut end = start;
        for c in node.children() {
            end = walk(c, end, out);
        }
        if end - start >= 2 {
            out.insert((start, end));
        }
        end
    }
    let mut out = BTreeSet::new();
    walk(tree, 0, &mut out);
    out
}

/// Strict overlap without nesting.
pub fn crosses(a: Span, b: Span) -> bool {
    let ((i, j), (k, l)) = (a, b);
    (i < k && k < j && j < l) || (k < i && i < l && l < j)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("{candidates} candidates for {golds} gold trees")]
    LengthMismatch { candidates: usize, golds: usize },
}

/// Per-sentence outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceScore {
    pub parsed: bool,
    pub exact: bool,
    pub crossing_free: bool,
    /// Brackets counted in the bracketing denominator.
    pub brackets: usize,
    pub non_crossing: usize,
    pub status: String,
    pub candidate: Option<Tree>,
}

/// Settings echoed into a report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportConfig {
    pub filter: FragmentFilter,
    pub mode: Mode,
    pub samples: Option<usize>,
    pub seed: u64,
    pub split_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyReport {
    pub parse_accuracy: f64,
    pub sentence_accuracy: f64,
    pub bracketing_accuracy: f64,
    pub coverage: f64,
    pub rows: Vec<SentenceScore>,
    pub config: Option<ReportConfig>,
}

impl AccuracyReport {
    pub fn n_test(&self) -> usize {
        self.rows.len()
    }
}

fn percent(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

/// Scores candidates against gold trees.
///
/// Parse accuracy compares raw trees; sentence and bracketing accuracy use
/// binarized trees. A missing candidate fails every metric, and its gold
/// brackets count as failed brackets.
pub fn score(candidates: &[Option<Tree>], golds: &[Tree]) -> Result<AccuracyReport, EvalError> {
    score_with(candidates, golds, true)
}

/// [`score`] with a choice of whether the whole-sentence span counts as a
/// bracket. It never crosses anything, so including it only raises the
/// bracketing denominator and numerator alike.
pub fn score_with(
    candidates: &[Option<Tree>],
    golds: &[Tree],
    include_root: bool,
) -> Result<AccuracyReport, EvalError> {
    let spans = |t: &Tree| {
        let mut b = brackets_of(&binarize(t));
        if !include_root {
            b.remove(&(0, t.leaf_count()));
        }
        b
    };
    if candidates.len() != golds.len() {
        return Err(EvalError::LengthMismatch {
            candidates: candidates.len(),
            golds: golds.len(),
        });
    }
    let rows: Vec<SentenceScore> = candidates
        .iter()
        .zip(golds)
        .map(|(cand, gold)| {
            let gold_brackets = spans(gold);
            match cand {
                None => SentenceScore {
                    parsed: false,
                    exact: false,
                    crossing_free: false,
                    brackets: gold_brackets.len(),
                    non_crossing: 0,
                    status: "no-parse".into(),
                    candidate: None,
                },
                Some(c) => {
                    let ours = spans(c);
                    let non_crossing = ours
                        .iter()
                        .filter(|a| !gold_brackets.iter().any(|b| crosses(**a, *b)))
                        .count();
                    SentenceScore {
                        parsed: true,
                        exact: c == gold,
                        crossing_free: non_crossing == ours.len(),
                        brackets: ours.len(),
                        non_crossing,
                        status: "ok".into(),
                        candidate: Some(c.clone()),
                    }
                }
            }
        })
        .collect();
    Ok(report_from_rows(rows))
}

fn report_from_rows(rows: Vec<SentenceScore>) -> AccuracyReport {
    let n = rows.len();
    let count = |f: fn(&SentenceScore) -> bool| rows.iter().filter(|r| f(r)).count();
    let brackets: usize = rows.iter().map(|r| r.brackets).sum();
    let good: usize = rows.iter().map(|r| r.non_crossing).sum();
    AccuracyReport {
        parse_accuracy: percent(count(|r| r.exact), n),
        sentence_accuracy: percent(count(|r| r.crossing_free), n),
        bracketing_accuracy: percent(good, brackets),
        coverage: percent(count(|r| r.parsed), n),
        config: None,
        rows,
    }
}

/// How a parse is selected from the forest.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    /// Tree of the most probable derivation.
    Mpd,
    /// Most frequent parse among sampled derivations.
    MppMc {
        size: SampleSize,
        scheme: SamplingScheme,
    },
    /// Exact most probable parse by exhaustive unpacking.
    MppExact { cap: usize },
}

impl Mode {
    pub fn mc(size: SampleSize) -> Self {
        Mode::MppMc {
            size,
            scheme: SamplingScheme::TopDown,
        }
    }

    pub fn exact() -> Self {
        Mode::MppExact {
            cap: DEFAULT_ENUMERATION_CAP,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Mpd => f.write_str("mpd"),
            Mode::MppMc { size, scheme } => {
                f.write_str("mpp-mc")?;
                if let Ok(n) = size.resolve() {
                    write!(f, ":N={n}")?;
                }
                if *scheme == SamplingScheme::BottomUpElimination {
                    f.write_str(":bottom-up")?;
                }
                Ok(())
            }
            Mode::MppExact { cap } => write!(f, "mpp-exact:cap={cap}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExperimentError {
    #[error("corpus of {0} trees is too small to split")]
    CorpusTooSmall(u64),
    #[error("train fraction must lie in (0, 1), got {0}")]
    BadFraction(f64),
    #[error(transparent)]
    Fragments(#[from] FragmentError),
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Sampling(#[from] DisambiguationError),
    #[error("{0}")]
    Threads(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub train_fraction: f64,
    pub split_seed: u64,
    pub filters: Vec<FragmentFilter>,
    pub mode: Mode,
    pub rng_seed: u64,
    /// Start symbol; defaults to the most frequent root of the training trees.
    pub start: Option<Label>,
    /// Worker threads for per-sentence jobs; `None` uses the global pool.
    pub jobs: Option<usize>,
}

impl ExperimentConfig {
    pub fn new(filters: Vec<FragmentFilter>, mode: Mode) -> Self {
        ExperimentConfig {
            train_fraction: 0.9,
            split_seed: 0,
            filters,
            mode,
            rng_seed: 0,
            start: None,
            jobs: None,
        }
    }
}

/// Shuffles every tree occurrence with `seed` and cuts off the first
/// `round(fraction · n)` (at least one, leaving at least one) for training.
pub fn split_corpus(
    corpus: &Corpus,
    fraction: f64,
    seed: u64,
) -> Result<(Corpus, Vec<Tree>), ExperimentError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(ExperimentError::BadFraction(fraction));
    }
    let mut trees = corpus.expanded();
    if trees.len() < 2 {
        return Err(ExperimentError::CorpusTooSmall(corpus.len()));
    }
    trees.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let k = ((fraction * trees.len() as f64).round() as usize).clamp(1, trees.len() - 1);
    let test = trees.split_off(k);
    Ok((Corpus::from_trees(trees)?, test))
}

/// Most frequent root label of the corpus trees, ties to the smallest label.
pub fn most_frequent_root(corpus: &Corpus) -> Option<Label> {
    let mut counts: std::collections::BTreeMap<&Label, u64> = Default::default();
    for (t, n) in corpus.entries() {
        *counts.entry(t.label()).or_insert(0) += n;
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(a.0)))
        .map(|(l, _)| l.clone())
}

/// SplitMix64 step; decorrelates per-sentence seeds.
fn mix(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn select(
    parser: &Parser,
    gold: &Tree,
    index: usize,
    mode: Mode,
    seed: u64,
) -> (Option<Tree>, String) {
    let sentence = gold.leaves();
    let forest = match parser.parse(&sentence) {
        Ok(f) => f,
        Err(ParseError::UnknownTerminal { word, position }) => {
            return (None, format!("unknown-terminal {word}@{position}"))
        }
        Err(ParseError::UnaryCycle { .. }) => return (None, "unary-cycle".into()),
        Err(ParseError::EmptySentence) => return (None, "empty".into()),
    };
    if !forest.has_parse() {
        return (None, "no-derivation".into());
    }
    let g = parser.grammar();
    let picked = match mode {
        Mode::Mpd => {
            most_probable_derivation(&forest).map(|(d, _)| g.derive(&d).expect("well formed"))
        }
        Mode::MppMc { size, scheme } => {
            let masses = compute_inside(&forest);
            estimate_parse_distribution(&forest, &masses, size, mix(seed, index as u64), scheme)
                .map(|dist| select_top_parses(&dist, 0.0).swap_remove(0))
        }
        Mode::MppExact { cap } => most_probable_parse_exact(&forest, cap).map(|(t, _)| t),
    };
    match picked {
        Ok(t) => (Some(t), "ok".into()),
        Err(DisambiguationError::Enumerate(EnumerateError::CapExceeded(c))) => {
            (None, format!("cap-exceeded {c}"))
        }
        Err(e) => (None, e.to_string()),
    }
}

/// Runs every filter of `config` on an explicit train/test split.
pub fn run_on_split(
    train: &Corpus,
    test: &[Tree],
    config: &ExperimentConfig,
) -> Result<Vec<AccuracyReport>, ExperimentError> {
    if let Mode::MppMc { size, .. } = config.mode {
        size.resolve()?;
    }
    let start = match &config.start {
        Some(s) => s.clone(),
        None => most_frequent_root(train).ok_or(ExperimentError::CorpusTooSmall(0))?,
    };
    let samples = match config.mode {
        Mode::MppMc { size, .. } => size.resolve().ok(),
        _ => None,
    };
    let work = || -> Result<Vec<AccuracyReport>, ExperimentError> {
        let mut reports = Vec::with_capacity(config.filters.len());
        for filter in &config.filters {
            let bag = corpus_fragments(train, filter)?;
            let grammar = Arc::new(project_stsg(&bag, &start)?);
            let parser = Parser::new(grammar);
            let picked: Vec<(Option<Tree>, String)> = test
                .par_iter()
                .enumerate()
                .map(|(i, gold)| select(&parser, gold, i, config.mode, config.rng_seed))
                .collect();
            let (candidates, statuses): (Vec<_>, Vec<_>) = picked.into_iter().unzip();
            let mut report = score(&candidates, test).expect("one candidate per test tree");
            for (row, status) in report.rows.iter_mut().zip(statuses) {
                row.status = status;
            }
            report.config = Some(ReportConfig {
                filter: filter.clone(),
                mode: config.mode,
                samples,
                seed: config.rng_seed,
                split_seed: config.split_seed,
            });
            reports.push(report);
        }
        Ok(reports)
    };
    match config.jobs {
        None => work(),
        Some(jobs) => rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build()
            .map_err(|e| ExperimentError::Threads(e.to_string()))?
            .install(work),
    }
}

/// Splits `corpus`, then for each filter extracts a grammar from the
/// training part, parses every test yield, selects a parse per `mode`, and
/// scores against the held-out trees. One report per filter.
pub fn run_experiment(
    corpus: &Corpus,
    config: &ExperimentConfig,
) -> Result<Vec<AccuracyReport>, ExperimentError> {
    let (train, test) = split_corpus(corpus, config.train_fraction, config.split_seed)?;
    run_on_split(&train, &test, config)
}

pub const REPORT_HEADER: &str = "filter-id\tmax-depth\tmax-sites\tmin-count\tmode\tparse-acc\tsentence-acc\tbracketing-acc\tcoverage\tn-test\tseed";

/// Report grid: header plus one row per report.
pub fn reports_to_tsv(reports: &[AccuracyReport]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in reports {
        let opt = |v: Option<usize>| v.map_or("unbounded".to_string(), |v| v.to_string());
        let (id, depth, sites, min_count, mode, seed) = match &r.config {
            Some(c) => (
                c.filter.to_string(),
                opt(c.filter.max_depth),
                opt(c.filter.max_sites),
                c.filter.min_count.to_string(),
                c.mode.to_string(),
                c.seed.to_string(),
            ),
            None => Default::default(),
        };
        out.push_str(&format!(
            "{id}\t{depth}\t{sites}\t{min_count}\t{mode}\t{:.2}\t{:.2}\t{:.2}\t{:.2}\t{}\t{seed}\n",
            r.parse_accuracy,
            r.sentence_accuracy,
            r.bracketing_accuracy,
            r.coverage,
            r.n_test()
        ));
    }
    out
}
