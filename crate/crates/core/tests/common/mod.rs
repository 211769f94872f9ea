#![allow(dead_code)]

use std::collections::HashMap;
use std::sync::Arc;

use dop_core::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const NONTERMINALS: [&str; 3] = ["S", "A", "B"];
pub const TERMINALS: [&str; 2] = ["a", "b"];
pub const MAX_TREES: usize = 8;
pub const MAX_SENTENCE: usize = 6;

pub fn tree(s: &str) -> Tree {
    parse_bracketed(s).unwrap()
}

pub fn toy_corpus() -> Corpus {
    Corpus::from_lines([
        "(S (NP John) (VP (V likes) (NP Mary)))",
        "(S (NP Peter) (VP (V hates) (NP Susan)))",
    ])
    .unwrap()
}

pub fn toy_grammar() -> Arc<Stsg> {
    let bag = corpus_fragments(&toy_corpus(), &FragmentFilter::default()).unwrap();
    Arc::new(project_stsg(&bag, &Label::nonterminal("S")).unwrap())
}

fn random_node(rng: &mut ChaCha8Rng, label: &str, depth: usize) -> Tree {
    let arity = rng.gen_range(1..=3);
    let children = (0..arity)
        .map(|_| match rng.gen_range(0..10) {
            0..=3 => Tree::leaf(Label::terminal(TERMINALS.choose(rng).unwrap())),
            4..=5 if depth > 1 => {
                let label = *NONTERMINALS.choose(rng).unwrap();
                random_node(rng, label, depth - 1)
            }
            _ => Tree::leaf(Label::nonterminal(NONTERMINALS.choose(rng).unwrap())),
        })
        .collect();
    Tree::internal(Label::nonterminal(label), children).unwrap()
}

/// Fills the leftmost open site of `t` with one of the rules for it.
fn compose_random(rng: &mut ChaCha8Rng, t: &Tree, rules: &[Tree]) -> Option<Tree> {
    let site = t.leftmost_site()?;
    let options: Vec<&Tree> = rules.iter().filter(|r| r.label() == site).collect();
    compose(t, options.choose(rng)?).ok()
}

/// A random grammar over `S A B` / `a b` with at most eight elementary
/// trees and no unary cycle. Every nonterminal that occurs as an open site
/// has at least one rule.
///
/// Even seeds draw unrelated trees of depth at most three. Odd seeds draw a
/// few depth-one rules and add trees composed from them, so many parses have
/// several derivations.
pub fn random_grammar(seed: u64) -> Arc<Stsg> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let mut counts: HashMap<Tree, u64> = HashMap::new();
        if seed.is_multiple_of(2) {
            let n = rng.gen_range(2..=MAX_TREES);
            for i in 0..n {
                let root = if i == 0 {
                    "S"
                } else {
                    NONTERMINALS.choose(&mut rng).unwrap()
                };
                let depth = rng.gen_range(1..=3);
                let t = random_node(&mut rng, root, depth);
                *counts.entry(t).or_insert(0) += rng.gen_range(1..=4);
            }
        } else {
            let n = rng.gen_range(3..=5);
            let rules: Vec<Tree> = (0..n)
                .map(|i| {
                    let root = if i == 0 {
                        "S"
                    } else {
                        NONTERMINALS.choose(&mut rng).unwrap()
                    };
                    random_node(&mut rng, root, 1)
                })
                .collect();
            for r in &rules {
                *counts.entry(r.clone()).or_insert(0) += rng.gen_range(1..=4);
            }
            for _ in 0..MAX_TREES * 2 {
                if counts.len() >= MAX_TREES {
                    break;
                }
                let base = rules.choose(&mut rng).unwrap().clone();
                let steps = rng.gen_range(1..=2);
                let mut t = base;
                for _ in 0..steps {
                    match compose_random(&mut rng, &t, &rules) {
                        Some(next) => t = next,
                        None => break,
                    }
                }
                *counts.entry(t).or_insert(0) += rng.gen_range(1..=3);
            }
        }
        let roots: Vec<Label> = counts.keys().map(|t| t.label().clone()).collect();
        let closed = counts.keys().all(|t| {
            t.preorder()
                .iter()
                .filter(|n| n.is_open_site())
                .all(|n| roots.contains(n.label()))
        });
        if !closed {
            continue;
        }
        let g = Stsg::from_counts(counts, Label::nonterminal("S")).unwrap();
        if g.unary_cycle().is_none() {
            return Arc::new(g);
        }
    }
}

fn sample_tree(g: &Stsg, rng: &mut ChaCha8Rng, label: &Label, budget: &mut usize) -> Option<Tree> {
    if *budget == 0 {
        return None;
    }
    *budget -= 1;
    let options = g.rooted_at(label);
    let id = *options.choose(rng)?;
    fill(g, rng, &g.elementary(id).tree, budget)
}

fn fill(g: &Stsg, rng: &mut ChaCha8Rng, t: &Tree, budget: &mut usize) -> Option<Tree> {
    if t.is_open_site() {
        return sample_tree(g, rng, t.label(), budget);
    }
    if t.is_leaf() {
        return Some(t.clone());
    }
    let kids: Option<Vec<Tree>> = t
        .children()
        .iter()
        .map(|c| fill(g, rng, c, budget))
        .collect();
    Some(Tree::internal(t.label().clone(), kids?).unwrap())
}

/// Up to `want` distinct sentences of at most six tokens: yields of
/// randomly generated trees, plus one random token string that may or may
/// not be in the language.
pub fn sentences(g: &Stsg, seed: u64, want: usize) -> Vec<Vec<Label>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut out: Vec<Vec<Label>> = Vec::new();
    for _ in 0..40 {
        if out.len() >= want {
            break;
        }
        let mut budget = 12;
        if let Some(t) = sample_tree(g, &mut rng, g.start(), &mut budget) {
            let y = t.leaves();
            if y.len() <= MAX_SENTENCE && !out.contains(&y) {
                out.push(y);
            }
        }
    }
    let len = rng.gen_range(1..=4);
    let random: Vec<Label> = (0..len)
        .map(|_| Label::terminal(TERMINALS.choose(&mut rng).unwrap()))
        .collect();
    if !out.contains(&random) {
        out.push(random);
    }
    out
}

/// Treebank of trees generated by `g`, for extraction experiments.
pub fn generated_treebank(g: &Stsg, seed: u64, want: usize) -> Vec<Tree> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7e3e);
    let mut out = Vec::new();
    for _ in 0..want * 10 {
        if out.len() >= want {
            break;
        }
        let mut budget = 12;
        if let Some(t) = sample_tree(g, &mut rng, g.start(), &mut budget) {
            if t.leaf_count() <= MAX_SENTENCE && t.node_count() > 1 && t.is_lexicalized() {
                out.push(t);
            }
        }
    }
    out
}

/// Derivations as a canonical multiset: sorted `(key, probability)` pairs.
pub fn weighted_multiset(g: &Stsg, ds: &[(Derivation, BigRational)]) -> Vec<(String, BigRational)> {
    let mut v: Vec<(String, BigRational)> = ds
        .iter()
        .map(|(d, p)| (g.render_derivation(d), p.clone()))
        .collect();
    v.sort();
    v
}
