//! Acceptance suite: one PASS/FAIL line per criterion, then a non-zero exit
//! if any criterion failed.

mod common;

use std::collections::{BTreeMap, HashMap};
use std::time::{Duration, Instant};

use common::*;
use dop_core::disambiguation::{
    exact_parse_distribution, most_probable_parse_exact, DerivationSampler,
};
use dop_core::eval::{reports_to_tsv, run_on_split, ExperimentConfig};
use dop_core::prelude::*;
use dop_core::stsg::enumerate_derivations;
use num_traits::ToPrimitive;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SUITE_SIZE: u64 = 240;
const CAP: usize = 100_000;

type Outcome = Result<String, String>;
type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(limit: Duration, elapsed: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || {
        format!("took {elapsed:?}, limit {limit:?}")
    })
}

fn ratio(n: i64, d: i64) -> BigRational {
    BigRational::new(n.into(), d.into())
}

fn c01_toy_root_totals() -> Outcome {
    let corpus = toy_corpus();
    let t0 = Instant::now();
    let bag = corpus_fragments(&corpus, &FragmentFilter::default()).map_err(|e| e.to_string())?;
    let elapsed = t0.elapsed();
    let got: Vec<(String, u64)> = bag
        .root_totals()
        .iter()
        .map(|(l, n)| (l.to_string(), *n))
        .collect();
    let want: Vec<(String, u64)> = [("NP", 4), ("S", 20), ("V", 2), ("VP", 8)]
        .iter()
        .map(|(l, n)| (l.to_string(), *n))
        .collect();
    ensure(got == want, || format!("root totals {got:?}"))?;
    within(Duration::from_millis(1), elapsed)?;
    Ok(format!("S=20 NP=4 VP=8 V=2 in {elapsed:?}"))
}

fn c02_toy_derivations() -> Outcome {
    let g = toy_grammar();
    let derivations = [
        (
            vec!["(S (NP) (VP (V likes) (NP)))", "(NP Mary)", "(NP Susan)"],
            ratio(1, 320),
        ),
        (
            vec!["(S (NP) (VP (V) (NP Susan)))", "(NP Mary)", "(V likes)"],
            ratio(1, 160),
        ),
        (
            vec![
                "(S (NP) (VP))",
                "(NP Mary)",
                "(VP (V likes) (NP))",
                "(NP Susan)",
            ],
            ratio(1, 1280),
        ),
    ];
    let target = tree("(S (NP Mary) (VP (V likes) (NP Susan)))");
    let steps: Vec<Vec<Tree>> = derivations
        .iter()
        .map(|(s, _)| s.iter().map(|t| tree(t)).collect())
        .collect();
    let t0 = Instant::now();
    let mut probs = Vec::new();
    for s in &steps {
        let d = g.derivation_of_trees(s).map_err(|e| e.to_string())?;
        ensure(g.derive(&d).as_ref() == Ok(&target), || {
            "derivation yields a different tree".into()
        })?;
        probs.push(g.derivation_probability(&d));
    }
    let elapsed = t0.elapsed();
    for ((_, want), got) in derivations.iter().zip(&probs) {
        ensure(want == got, || format!("expected {want}, got {got}"))?;
    }
    within(Duration::from_millis(1), elapsed)?;
    Ok(format!("1/320 1/160 1/1280 in {elapsed:?}"))
}

struct SuiteCase {
    grammar: std::sync::Arc<Stsg>,
    sentence: Vec<Label>,
}

fn suite() -> Vec<SuiteCase> {
    (0..SUITE_SIZE)
        .flat_map(|seed| {
            let g = random_grammar(seed);
            sentences(&g, seed, 4)
                .into_iter()
                .map(move |sentence| SuiteCase {
                    grammar: g.clone(),
                    sentence,
                })
        })
        .collect()
}

fn c03_forest_oracle(cases: &[SuiteCase]) -> Outcome {
    let t0 = Instant::now();
    let (mut parsed, mut derivations) = (0usize, 0usize);
    for (i, case) in cases.iter().enumerate() {
        let g = &case.grammar;
        let oracle =
            enumerate_derivations(g, &case.sentence, CAP).map_err(|e| format!("case {i}: {e}"))?;
        let forest = build_forest(g, &case.sentence);
        let packed = match forest {
            Ok(f) => unpack_forest(&f, CAP).map_err(|e| format!("case {i}: {e}"))?,
            Err(_) => Vec::new(),
        };
        ensure(
            weighted_multiset(g, &oracle) == weighted_multiset(g, &packed),
            || format!("case {i}: forest and oracle differ on {:?}", case.sentence),
        )?;
        parsed += usize::from(!oracle.is_empty());
        derivations += oracle.len();
    }
    let elapsed = t0.elapsed();
    within(Duration::from_secs(30), elapsed)?;
    Ok(format!(
        "{SUITE_SIZE} grammars, {} sentences ({parsed} parsable, {derivations} derivations) in {elapsed:?}",
        cases.len()
    ))
}

fn c04_viterbi(cases: &[SuiteCase]) -> Outcome {
    let mut checked = 0;
    for (i, case) in cases.iter().enumerate() {
        let g = &case.grammar;
        let oracle = enumerate_derivations(g, &case.sentence, CAP).map_err(|e| e.to_string())?;
        let Some(max) = oracle.iter().map(|(_, p)| p.clone()).max() else {
            continue;
        };
        let smallest_key = oracle
            .iter()
            .filter(|(_, p)| *p == max)
            .map(|(d, _)| g.derivation_key(d))
            .min()
            .unwrap();
        let forest = build_forest(g, &case.sentence).map_err(|e| e.to_string())?;
        let (d1, p1) = most_probable_derivation(&forest).map_err(|e| e.to_string())?;
        let (d2, _) = most_probable_derivation(&build_forest(g, &case.sentence).unwrap()).unwrap();
        ensure(p1 == max, || {
            format!("case {i}: viterbi {p1} vs oracle max {max}")
        })?;
        ensure(d1 == d2, || format!("case {i}: repeated runs disagree"))?;
        ensure(g.derivation_key(&d1) == smallest_key, || {
            format!("case {i}: tie not broken to the smallest key")
        })?;
        checked += 1;
    }
    Ok(format!(
        "{checked} parsable sentences, exact max, deterministic ties"
    ))
}

fn c05_four_derivations_two_trees() -> Outcome {
    let counts = [
        "(S (A) (B))",
        "(S (A a b) (B))",
        "(S (C) (D))",
        "(S (C) (D d))",
        "(A a b)",
        "(B c d)",
        "(C a b c)",
        "(D d)",
    ]
    .map(|s| (tree(s), 1));
    let g = std::sync::Arc::new(
        Stsg::from_counts(counts, Label::nonterminal("S")).map_err(|e| e.to_string())?,
    );
    let sentence = tokens("a b c d");
    let oracle = enumerate_derivations(&g, &sentence, CAP).map_err(|e| e.to_string())?;
    let forest = build_forest(&g, &sentence).map_err(|e| e.to_string())?;
    let packed = unpack_forest(&forest, CAP).map_err(|e| e.to_string())?;
    ensure(
        weighted_multiset(&g, &oracle) == weighted_multiset(&g, &packed),
        || "forest differs from oracle".into(),
    )?;
    ensure(packed.len() == 4, || {
        format!("{} derivations", packed.len())
    })?;
    let mut per_tree: BTreeMap<String, usize> = BTreeMap::new();
    for (d, p) in &packed {
        ensure(*p == ratio(1, 4), || format!("derivation probability {p}"))?;
        *per_tree
            .entry(g.derive(d).unwrap().to_string())
            .or_insert(0) += 1;
    }
    ensure(
        per_tree.len() == 2 && per_tree.values().all(|&n| n == 2),
        || format!("{per_tree:?}"),
    )?;
    let dist = exact_parse_distribution(&forest, CAP).map_err(|e| e.to_string())?;
    ensure(dist.iter().all(|(_, p)| *p == ratio(1, 2)), || {
        "trees are not equiprobable".into()
    })?;
    Ok("4 derivations, 2 trees, each generated twice, P = 1/2 each".into())
}

fn c06_sampler_fidelity() -> Outcome {
    const N: usize = 100_000;
    let g = toy_grammar();
    let forest = build_forest(&g, &tokens("Mary likes Susan")).map_err(|e| e.to_string())?;
    let t0 = Instant::now();
    let masses = compute_inside(&forest);
    let sampler = DerivationSampler::new(&forest, &masses, SamplingScheme::TopDown)
        .map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut counts: HashMap<Derivation, usize> = HashMap::new();
    for _ in 0..N {
        *counts.entry(sampler.sample(&mut rng)).or_insert(0) += 1;
    }
    let elapsed = t0.elapsed();
    let oracle = unpack_forest(&forest, CAP).map_err(|e| e.to_string())?;
    let total: BigRational = oracle.iter().map(|(_, p)| p.clone()).sum();
    let mut worst: f64 = 0.0;
    for (d, p) in &oracle {
        let q = (p / &total).to_f64().unwrap();
        let freq = *counts.get(d).unwrap_or(&0) as f64 / N as f64;
        let tol = 4.0 * (q * (1.0 - q) / N as f64).sqrt();
        ensure((freq - q).abs() <= tol, || {
            format!("{}: {freq} vs {q} (tol {tol})", g.render_derivation(d))
        })?;
        worst = worst.max((freq - q).abs() / tol);
    }
    ensure(
        counts.keys().all(|d| oracle.iter().any(|(o, _)| o == d)),
        || "sampled a foreign derivation".into(),
    )?;
    within(Duration::from_secs(10), elapsed)?;
    Ok(format!(
        "{} derivations, worst deviation {:.2} of the 4σ band, {elapsed:?}",
        oracle.len(),
        worst
    ))
}

fn c07_sample_size() -> Outcome {
    let a = SampleSize::Sigma(0.05)
        .resolve()
        .map_err(|e| e.to_string())?;
    let b = SampleSize::Sigma(0.01)
        .resolve()
        .map_err(|e| e.to_string())?;
    ensure(a == 100 && b == 2500, || format!("N = {a}, {b}"))?;
    Ok("σ 0.05 -> 100, σ 0.01 -> 2500".into())
}

fn c08_error_bound() -> Outcome {
    let a = mc_error_bound(&[1.0], 100);
    let b = mc_error_bound(&[0.5, 0.5], 100);
    let c = mc_error_bound(&[0.9, 0.1], 1);
    ensure(a == 0.0, || format!("[1.0] gives {a}"))?;
    ensure(b == 1.0, || format!("[0.5,0.5] gives {b}"))?;
    ensure((c - 0.6).abs() <= 1e-12, || format!("[0.9,0.1] gives {c}"))?;
    Ok(format!("0, 1, {c:.12}"))
}

fn c09_depth_one() -> Outcome {
    let filter = FragmentFilter::default().with_max_depth(1);
    let (mut grammars, mut sentences_checked, mut ties) = (0, 0, 0);
    for seed in 0..SUITE_SIZE {
        let source = random_grammar(seed);
        let bank = generated_treebank(&source, seed, 6);
        if bank.is_empty() {
            continue;
        }
        let corpus = Corpus::from_trees(bank.clone()).map_err(|e| e.to_string())?;
        let bag = corpus_fragments(&corpus, &filter).map_err(|e| e.to_string())?;
        let g = std::sync::Arc::new(
            project_stsg(&bag, &Label::nonterminal("S")).map_err(|e| e.to_string())?,
        );
        grammars += 1;
        let mut yields: Vec<Vec<Label>> = bank.iter().map(|t| t.leaves()).collect();
        yields.extend(sentences(&source, seed, 2));
        yields.sort();
        yields.dedup();
        for y in yields {
            let Ok(forest) = build_forest(&g, &y) else {
                continue;
            };
            if !forest.has_parse() {
                continue;
            }
            let packed = unpack_forest(&forest, CAP).map_err(|e| e.to_string())?;
            let mut trees: Vec<Tree> = packed.iter().map(|(d, _)| g.derive(d).unwrap()).collect();
            let n = trees.len();
            trees.sort();
            trees.dedup();
            ensure(trees.len() == n, || {
                format!("seed {seed}: a parse has several derivations")
            })?;
            let (mpd, p_mpd) = most_probable_derivation(&forest).map_err(|e| e.to_string())?;
            let dist = exact_parse_distribution(&forest, CAP).map_err(|e| e.to_string())?;
            let best = dist[0].1.clone();
            let winners: Vec<&Tree> = dist
                .iter()
                .filter(|(_, p)| *p == best)
                .map(|(t, _)| t)
                .collect();
            let mpd_tree = g.derive(&mpd).unwrap();
            ensure(p_mpd == best && winners.contains(&&mpd_tree), || {
                format!("seed {seed}: MPD tree {mpd_tree} at {p_mpd} is not a most probable parse")
            })?;
            ties += usize::from(winners.len() > 1);
            sentences_checked += 1;
        }
    }
    Ok(format!(
        "{grammars} depth-1 grammars, {sentences_checked} sentences, one derivation per parse, MPD = MPP ({ties} exact ties)"
    ))
}

fn c10_mpd_mpp_witness(cases: &[SuiteCase]) -> Outcome {
    let corpus = Corpus::from_lines([
        "(S (X a b))",
        "(S (X a b))",
        "(S (X a b))",
        "(S (Y a) (Z b))",
        "(S (Y a) (Z b))",
    ])
    .map_err(|e| e.to_string())?;
    let bag = corpus_fragments(&corpus, &FragmentFilter::default()).map_err(|e| e.to_string())?;
    let g = std::sync::Arc::new(
        project_stsg(&bag, &Label::nonterminal("S")).map_err(|e| e.to_string())?,
    );
    let forest = build_forest(&g, &tokens("a b")).map_err(|e| e.to_string())?;
    let (mpd, p_mpd) = most_probable_derivation(&forest).map_err(|e| e.to_string())?;
    let (mpp, p_mpp) = most_probable_parse_exact(&forest, CAP).map_err(|e| e.to_string())?;
    let mpd_tree = g.derive(&mpd).unwrap();
    ensure(
        mpd_tree == tree("(S (X a b))") && p_mpd == ratio(3, 14),
        || format!("MPD {mpd_tree} {p_mpd}"),
    )?;
    ensure(
        mpp == tree("(S (Y a) (Z b))") && p_mpp == ratio(8, 14),
        || format!("MPP {mpp} {p_mpp}"),
    )?;

    let mut config = ExperimentConfig::new(vec![FragmentFilter::default()], Mode::Mpd);
    let gold = vec![tree("(S (Y a) (Z b))")];
    let mpd_report = run_on_split(&corpus, &gold, &config).map_err(|e| e.to_string())?;
    config.mode = Mode::exact();
    let mpp_report = run_on_split(&corpus, &gold, &config).map_err(|e| e.to_string())?;
    ensure(
        mpd_report[0].parse_accuracy == 0.0 && mpp_report[0].parse_accuracy == 100.0,
        || "experiment harness does not separate MPD from MPP".into(),
    )?;
    let mut random_witnesses = 0;
    for case in cases {
        let Ok(forest) = build_forest(&case.grammar, &case.sentence) else {
            continue;
        };
        let Ok((d, _)) = most_probable_derivation(&forest) else {
            continue;
        };
        let dist = exact_parse_distribution(&forest, CAP).map_err(|e| e.to_string())?;
        let tree = case.grammar.derive(&d).unwrap();
        random_witnesses += usize::from(dist.iter().all(|(t, p)| *t != tree || *p < dist[0].1));
    }
    Ok(format!(
        "MPD {mpd_tree} at {p_mpd}, MPP {mpp} at {p_mpp}; {random_witnesses} more in the random suite"
    ))
}

fn c11_metrics() -> Outcome {
    let golds = vec![
        tree("(S (NP Mary) (VP (V likes) (NP Susan)))"),
        tree("(S (NP John) (VP (V hates) (NP Peter)))"),
    ];
    let same: Vec<Option<Tree>> = golds.iter().cloned().map(Some).collect();
    let r = score(&same, &golds).map_err(|e| e.to_string())?;
    ensure(
        (r.parse_accuracy, r.sentence_accuracy, r.bracketing_accuracy) == (100.0, 100.0, 100.0),
        || format!("identical sets score {r:?}"),
    )?;
    let r = score(&[Some(tree("(X (A a b) c)"))], &[tree("(X a (B b c))")])
        .map_err(|e| e.to_string())?;
    ensure(r.bracketing_accuracy == 50.0, || {
        format!("crossing example scores {}", r.bracketing_accuracy)
    })?;
    Ok("identical 100/100/100, crossing example 50%".into())
}

/// Sweep grid on the bundled corpus; the numbers are pinned to catch
/// regressions, not taken from any reference.
const PINNED_SWEEP: &str = include_str!("pinned_sweep.tsv");

fn synthetic_sweep() -> Result<String, String> {
    let corpus = Corpus::from_lines(include_str!("../data/synthetic200.mrg").lines())
        .map_err(|e| e.to_string())?;
    let depths = [Some(1), Some(2), Some(3), Some(4), None];
    let filters: Vec<FragmentFilter> = depths
        .iter()
        .map(|d| {
            d.map_or_else(FragmentFilter::default, |d| {
                FragmentFilter::default().with_max_depth(d)
            })
        })
        .collect();
    let mut config = ExperimentConfig::new(filters, Mode::mc(SampleSize::Sigma(0.05)));
    config.split_seed = 7;
    config.train_fraction = 0.8;
    config.rng_seed = 11;
    let mut reports = run_experiment(&corpus, &config).map_err(|e| e.to_string())?;
    config.filters = vec![FragmentFilter::default()
        .with_min_count(2)
        .with_hapax_min_depth(1)];
    reports.extend(run_experiment(&corpus, &config).map_err(|e| e.to_string())?);
    config.filters = vec![FragmentFilter::default()];
    config.mode = Mode::Mpd;
    reports.extend(run_experiment(&corpus, &config).map_err(|e| e.to_string())?);
    Ok(reports_to_tsv(&reports))
}

fn c12_synthetic_sweep() -> Outcome {
    let t0 = Instant::now();
    let first = synthetic_sweep()?;
    let elapsed = t0.elapsed();
    let second = synthetic_sweep()?;
    ensure(first == second, || "two runs differ".into())?;
    within(Duration::from_secs(120), elapsed)?;
    if std::env::var_os("DOP_PRINT_SWEEP").is_some() {
        print!("{first}");
    }
    ensure(first == PINNED_SWEEP, || {
        format!("sweep drifted from pinned values:\n{first}")
    })?;
    Ok(format!(
        "{} rows, deterministic, pinned, {elapsed:?}",
        first.lines().count() - 1
    ))
}

fn main() {
    let cases = suite();
    let criteria: Vec<(&str, Check)> = vec![
        ("toy-corpus root totals", Box::new(c01_toy_root_totals)),
        (
            "toy derivation probabilities",
            Box::new(c02_toy_derivations),
        ),
        (
            "forest equals oracle enumeration",
            Box::new(|| c03_forest_oracle(&cases)),
        ),
        (
            "viterbi exact max and deterministic ties",
            Box::new(|| c04_viterbi(&cases)),
        ),
        (
            "four derivations, two trees",
            Box::new(c05_four_derivations_two_trees),
        ),
        ("sampler fidelity", Box::new(c06_sampler_fidelity)),
        ("sample size from sigma", Box::new(c07_sample_size)),
        ("monte carlo error bound", Box::new(c08_error_bound)),
        ("depth-1 grammars: MPD = MPP", Box::new(c09_depth_one)),
        (
            "MPD differs from MPP",
            Box::new(|| c10_mpd_mpp_witness(&cases)),
        ),
        ("accuracy metrics", Box::new(c11_metrics)),
        ("synthetic sweep", Box::new(c12_synthetic_sweep)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", i + 1);
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
