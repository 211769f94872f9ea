//! `dop`: extract a tree-substitution grammar from a treebank and parse
//! token lines with it. Held-out evaluation lives in `eval` and `sweep`.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser as ClapParser, Subcommand, ValueEnum};
use dop_core::chart::ParseError;
use dop_core::disambiguation::{most_probable_parse_exact, DisambiguationError};
use dop_core::eval::{most_frequent_root, reports_to_tsv, ExperimentConfig};
use dop_core::prelude::*;
use dop_core::stsg::{EnumerateError, DEFAULT_ENUMERATION_CAP};
use rayon::prelude::*;

#[derive(ClapParser)]
#[command(
    name = "dop",
    version,
    about = "Data-oriented parsing with tree-substitution grammars"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract fragments from a treebank and write the grammar as TSV.
    Extract(ExtractArgs),
    /// Parse whitespace-separated token lines with a grammar.
    Parse(ParseArgs),
    /// Train on a random split of a treebank and score the held-out part.
    Eval(EvalArgs),
    /// Like `eval`, once per maximum fragment depth.
    Sweep(SweepArgs),
}

#[derive(Args, Clone)]
struct FilterArgs {
    /// Maximum fragment depth.
    #[arg(long)]
    max_depth: Option<usize>,
    /// Maximum number of substitution sites per fragment.
    #[arg(long)]
    max_sites: Option<usize>,
    /// Comma-separated root labels to keep.
    #[arg(long, value_delimiter = ',')]
    roots: Option<Vec<String>>,
    /// Drop fragments seen fewer than this many times.
    #[arg(long, default_value_t = 1)]
    min_count: u64,
    /// Apply --min-count only to fragments deeper than this.
    #[arg(long)]
    hapax_min_depth: Option<usize>,
}

impl FilterArgs {
    fn filter(&self, depth: Option<usize>) -> Result<FragmentFilter, CliError> {
        let mut f = FragmentFilter::default().with_min_count(self.min_count);
        if let Some(d) = depth {
            f = f.with_max_depth(d);
        }
        if let Some(s) = self.max_sites {
            f = f.with_max_sites(s);
        }
        if let Some(roots) = &self.roots {
            for r in roots {
                Label::try_new(r, dop_core::treebank::LabelKind::Nonterminal)
                    .map_err(|e| CliError::Usage(format!("--roots: {e}")))?;
            }
            f = f.with_roots(roots.iter().map(String::as_str));
        }
        if let Some(h) = self.hapax_min_depth {
            f = f.with_hapax_min_depth(h);
        }
        f.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(f)
    }
}

#[derive(ValueEnum, Clone, Copy, PartialEq, Eq)]
enum ModeName {
    /// Tree of the most probable derivation.
    Mpd,
    /// Most frequent parse among sampled derivations.
    MppMc,
    /// Exact most probable parse by exhaustive unpacking.
    MppExact,
}

#[derive(Args, Clone)]
struct ModeArgs {
    #[arg(long, value_enum)]
    mode: ModeName,
    /// Bound on the standard error of the estimates; fixes N.
    #[arg(long, conflicts_with = "samples")]
    sigma: Option<f64>,
    /// Number of sampled derivations.
    #[arg(long)]
    samples: Option<usize>,
    /// Random seed, required by mpp-mc.
    #[arg(long)]
    seed: Option<u64>,
    /// Sample with bottom-up elimination instead of top-down.
    #[arg(long)]
    bottom_up: bool,
    /// Derivation limit for mpp-exact.
    #[arg(long, default_value_t = DEFAULT_ENUMERATION_CAP)]
    cap: usize,
}

impl ModeArgs {
    fn mode(&self) -> Result<Mode, CliError> {
        match self.mode {
            ModeName::Mpd => Ok(Mode::Mpd),
            ModeName::MppExact => Ok(Mode::MppExact { cap: self.cap }),
            ModeName::MppMc => {
                if self.seed.is_none() {
                    return Err(CliError::Usage("--mode mpp-mc requires --seed".into()));
                }
                let size = match (self.sigma, self.samples) {
                    (Some(s), None) => SampleSize::Sigma(s),
                    (None, Some(n)) => SampleSize::Count(n),
                    _ => {
                        return Err(CliError::Usage(
                            "--mode mpp-mc requires exactly one of --sigma or --samples".into(),
                        ))
                    }
                };
                size.resolve().map_err(|e| CliError::Usage(e.to_string()))?;
                let scheme = if self.bottom_up {
                    SamplingScheme::BottomUpElimination
                } else {
                    SamplingScheme::TopDown
                };
                Ok(Mode::MppMc { size, scheme })
            }
        }
    }
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[command(flatten)]
    filter: FilterArgs,
    /// Start symbol; defaults to the most frequent root label.
    #[arg(long)]
    start: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ParseArgs {
    #[arg(long)]
    grammar: PathBuf,
    /// Token lines to parse; standard input when absent.
    #[arg(long)]
    input: Option<PathBuf>,
    #[command(flatten)]
    mode: ModeArgs,
    /// Also report parses whose estimate is within this distance of the best.
    #[arg(long, default_value_t = 0.0)]
    tie_width: f64,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 0.9)]
    train_fraction: f64,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    /// Start symbol; defaults to the most frequent root label of the training part.
    #[arg(long)]
    start: Option<String>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write per-sentence rows here.
    #[arg(long)]
    rows: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    split: SplitArgs,
    #[command(flatten)]
    filter: FilterArgs,
    #[command(flatten)]
    mode: ModeArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    split: SplitArgs,
    #[command(flatten)]
    filter: FilterArgs,
    #[command(flatten)]
    mode: ModeArgs,
    /// Comma-separated depths; `unbounded` lifts the limit.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6,unbounded")]
    depths: Vec<String>,
}

enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    fn data(context: impl std::fmt::Display, e: impl std::fmt::Display) -> Self {
        CliError::Data(format!("{context}: {e}"))
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::data(path.display(), e))
}

fn write_out(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| CliError::data(p.display(), e)),
        None => io::stdout()
            .lock()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::data("stdout", e)),
    }
}

fn load_corpus(path: &Path) -> Result<Corpus, CliError> {
    Corpus::from_lines(read(path)?.lines()).map_err(|e| CliError::data(path.display(), e))
}

fn start_label(name: &str) -> Result<Label, CliError> {
    Label::try_new(name, dop_core::treebank::LabelKind::Nonterminal)
        .map_err(|e| CliError::Usage(format!("--start: {e}")))
}

fn with_pool<T: Send>(jobs: Option<usize>, work: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    match jobs {
        None => Ok(work()),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map(|pool| pool.install(work))
            .map_err(|e| CliError::Usage(format!("--jobs: {e}"))),
    }
}

fn extract(args: &ExtractArgs) -> Result<(), CliError> {
    let filter = args.filter.filter(args.filter.max_depth)?;
    let corpus = load_corpus(&args.corpus)?;
    let start = match &args.start {
        Some(s) => start_label(s)?,
        None => most_frequent_root(&corpus)
            .ok_or_else(|| CliError::data(args.corpus.display(), "no trees"))?,
    };
    let bag =
        corpus_fragments(&corpus, &filter).map_err(|e| CliError::data(args.corpus.display(), e))?;
    let grammar =
        project_stsg(&bag, &start).map_err(|e| CliError::data(args.corpus.display(), e))?;
    write_out(args.out.as_deref(), &grammar.to_tsv())
}

fn parse_block(
    parser: &Parser,
    line: &str,
    mode: Mode,
    seed: u64,
    tie_width: f64,
    index: usize,
) -> String {
    let mut out = format!("sentence\t{line}\n");
    let sentence = tokens(line);
    let forest = match parser.parse(&sentence) {
        Ok(f) if f.has_parse() => f,
        Ok(_) => return out + "NO-PARSE no-derivation\n\n",
        Err(ParseError::UnknownTerminal { word, position }) => {
            return out + &format!("NO-PARSE unknown-terminal {word}@{position}\n\n")
        }
        Err(ParseError::EmptySentence) => return out + "NO-PARSE empty\n\n",
        Err(e @ ParseError::UnaryCycle { .. }) => return out + &format!("NO-PARSE {e}\n\n"),
    };
    let g = parser.grammar();
    match mode {
        Mode::Mpd => {
            let (d, p) = most_probable_derivation(&forest).expect("forest has a parse");
            let _ = writeln!(out, "parse\t{}", g.derive(&d).expect("forest derivation"));
            let _ = writeln!(out, "derivation-probability\t{p}");
            let _ = writeln!(out, "derivation\t{}", g.render_derivation(&d));
        }
        Mode::MppExact { cap } => match most_probable_parse_exact(&forest, cap) {
            Ok((t, p)) => {
                let _ = writeln!(out, "parse\t{t}");
                let _ = writeln!(out, "probability\t{p}");
            }
            Err(DisambiguationError::Enumerate(EnumerateError::CapExceeded(c))) => {
                let _ = writeln!(out, "NO-PARSE cap-exceeded {c}");
            }
            Err(e) => {
                let _ = writeln!(out, "NO-PARSE {e}");
            }
        },
        Mode::MppMc { size, scheme } => {
            let masses = compute_inside(&forest);
            let sentence_seed = seed.wrapping_add(index as u64);
            let dist = estimate_parse_distribution(&forest, &masses, size, sentence_seed, scheme)
                .expect("sample size validated");
            let top = select_top_parses(&dist, tie_width);
            let _ = writeln!(out, "parse\t{}", top[0]);
            let _ = writeln!(out, "estimate\t{:.6}", dist.estimate(&top[0]));
            for t in &top[1..] {
                let _ = writeln!(out, "tied\t{t}\t{:.6}", dist.estimate(t));
            }
            let _ = writeln!(out, "N\t{}", dist.samples);
            let _ = writeln!(out, "sigma-bound\t{:.6}", dist.sigma_bound());
        }
    }
    out.push('\n');
    out
}

fn parse(args: &ParseArgs) -> Result<(), CliError> {
    let mode = args.mode.mode()?;
    if args.tie_width.is_nan() || args.tie_width < 0.0 {
        return Err(CliError::Usage("--tie-width must be non-negative".into()));
    }
    let text = read(&args.grammar)?;
    let grammar = Stsg::from_tsv(&text).map_err(|e| CliError::data(args.grammar.display(), e))?;
    let input = match &args.input {
        Some(p) => read(p)?,
        None => {
            let mut s = String::new();
            io::stdin()
                .read_to_string(&mut s)
                .map_err(|e| CliError::data("stdin", e))?;
            s
        }
    };
    let lines: Vec<&str> = input
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect();
    let parser = Parser::new(Arc::new(grammar));
    let seed = args.mode.seed.unwrap_or(0);
    let blocks: Vec<String> = with_pool(args.jobs, || {
        lines
            .par_iter()
            .enumerate()
            .map(|(i, l)| parse_block(&parser, l, mode, seed, args.tie_width, i))
            .collect()
    })?;
    write_out(args.out.as_deref(), &blocks.concat())
}

fn rows_tsv(reports: &[AccuracyReport]) -> String {
    let mut out = String::from(
        "filter-id\tmode\tindex\tstatus\texact\tcrossing-free\tbrackets\tnon-crossing\tcandidate\n",
    );
    for r in reports {
        let (id, mode) = r
            .config
            .as_ref()
            .map(|c| (c.filter.to_string(), c.mode.to_string()))
            .unwrap_or_default();
        for (i, row) in r.rows.iter().enumerate() {
            let cand = row
                .candidate
                .as_ref()
                .map_or("-".to_string(), |t| t.to_string());
            let _ = writeln!(
                out,
                "{id}\t{mode}\t{i}\t{}\t{}\t{}\t{}\t{}\t{cand}",
                row.status,
                row.exact as u8,
                row.crossing_free as u8,
                row.brackets,
                row.non_crossing
            );
        }
    }
    out
}

fn experiment(
    split: &SplitArgs,
    filters: Vec<FragmentFilter>,
    mode_args: &ModeArgs,
) -> Result<(), CliError> {
    let mode = mode_args.mode()?;
    if !(split.train_fraction > 0.0 && split.train_fraction < 1.0) {
        return Err(CliError::Usage(
            "--train-fraction must lie strictly between 0 and 1".into(),
        ));
    }
    let corpus = load_corpus(&split.corpus)?;
    let mut config = ExperimentConfig::new(filters, mode);
    config.train_fraction = split.train_fraction;
    config.split_seed = split.split_seed;
    config.rng_seed = mode_args.seed.unwrap_or(0);
    config.start = split.start.as_deref().map(start_label).transpose()?;
    config.jobs = split.jobs;
    let reports =
        run_experiment(&corpus, &config).map_err(|e| CliError::data(split.corpus.display(), e))?;
    let header = format!(
        "# corpus\t{}\n# train-fraction\t{}\n# split-seed\t{}\n",
        split.corpus.display(),
        split.train_fraction,
        split.split_seed
    );
    write_out(split.out.as_deref(), &(header + &reports_to_tsv(&reports)))?;
    if let Some(p) = &split.rows {
        write_out(Some(p), &rows_tsv(&reports))?;
    }
    Ok(())
}

fn sweep(args: &SweepArgs) -> Result<(), CliError> {
    if args.filter.max_depth.is_some() {
        return Err(CliError::Usage(
            "sweep takes --depths instead of --max-depth".into(),
        ));
    }
    let mut filters = Vec::new();
    for d in &args.depths {
        let depth = match d.as_str() {
            "unbounded" | "*" => None,
            n => Some(
                n.parse::<usize>()
                    .map_err(|_| CliError::Usage(format!("--depths: bad depth {n:?}")))?,
            ),
        };
        filters.push(args.filter.filter(depth)?);
    }
    experiment(&args.split, filters, &args.mode)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Extract(a) => extract(a),
        Command::Parse(a) => parse(a),
        Command::Eval(a) => experiment(
            &a.split,
            vec![a.filter.filter(a.filter.max_depth)?],
            &a.mode,
        ),
        Command::Sweep(a) => sweep(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(CliError::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
