//! Choosing analyses from a derivation forest.
//!
//! The most probable derivation is found with Viterbi. The most probable
//! parse cannot be found that way, since a parse's probability is a sum over
//! its derivations; instead derivations are sampled in proportion to their
//! probability and the resulting parses are tallied.

use std::collections::HashMap;

use num_rational::BigRational;
use num_traits::Zero;
use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::chart::{unpack_forest, DerivationForest, EntryId};
use crate::stsg::{Derivation, EnumerateError};
use crate::treebank::{serialize_tree, Tree};
use crate::weight::{LogProb, Weight};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DisambiguationError {
    #[error("sentence has no parse")]
    NoParse,
    #[error("sigma must lie in (0, 0.5], got {0}")]
    InvalidSigma(f64),
    #[error("sample count must be positive")]
    ZeroSamples,
    #[error(transparent)]
    Enumerate(#[from] EnumerateError),
}

/// Per-entry sum of the probabilities of all subderivations rooted there.
#[derive(Debug, Clone)]
pub struct InsideMasses<W> {
    mass: Vec<W>,
}

impl<W: Weight> InsideMasses<W> {
    pub fn get(&self, entry: EntryId) -> &W {
        &self.mass[entry.index()]
    }

    /// Sentence probability; zero when there is no parse.
    pub fn goal_mass(&self, forest: &DerivationForest) -> W {
        forest.goal().map_or_else(W::zero, |g| self.get(g).clone())
    }

    pub fn as_slice(&self) -> &[W] {
        &self.mass
    }
}

fn edge_weight<W: Weight>(
    forest: &DerivationForest,
    edge: &crate::chart::ForestEdge,
    mass: &[W],
) -> W {
    edge.site_children.iter().fold(
        W::of(forest.grammar().elementary(edge.elementary)),
        |acc, c| acc.times(&mass[c.index()]),
    )
}

pub fn compute_inside_with<W: Weight>(forest: &DerivationForest) -> InsideMasses<W> {
    let mut mass: Vec<W> = Vec::with_capacity(forest.entries().len());
    for entry in forest.entries() {
        let m = entry.edges.iter().fold(W::zero(), |acc, edge| {
            acc.plus(&edge_weight(forest, edge, &mass))
        });
        mass.push(m);
    }
    InsideMasses { mass }
}

/// Inside masses in log space.
pub fn compute_inside(forest: &DerivationForest) -> InsideMasses<LogProb> {
    compute_inside_with(forest)
}

/// Inside masses as exact rationals.
pub fn compute_inside_exact(forest: &DerivationForest) -> InsideMasses<BigRational> {
    compute_inside_with(forest)
}

/// Subderivation below `entry` following `choice`, in leftmost order.
fn trace(forest: &DerivationForest, entry: EntryId, choice: &[usize]) -> Derivation {
    let mut steps = Vec::new();
    let mut stack = vec![entry];
    while let Some(e) = stack.pop() {
        let edge = &forest.entry(e).edges[choice[e.index()]];
        steps.push(edge.elementary);
        stack.extend(edge.site_children.iter().rev());
    }
    Derivation::new(steps)
}

/// Viterbi over any weight. Exact ties (or log-space near-ties) are broken
/// at each entry in favour of the subderivation whose sequence of serialized
/// elementary trees is lexicographically smallest.
pub fn most_probable_derivation_with<W: Weight>(
    forest: &DerivationForest,
) -> Result<(Derivation, W), DisambiguationError> {
    let goal = forest.goal().ok_or(DisambiguationError::NoParse)?;
    let g = forest.grammar();
    let mut best: Vec<W> = Vec::with_capacity(forest.entries().len());
    let mut choice: Vec<usize> = Vec::with_capacity(forest.entries().len());
    for (i, entry) in forest.entries().iter().enumerate() {
        let mut top: Option<(W, usize)> = None;
        for (k, edge) in entry.edges.iter().enumerate() {
            let w = edge_weight(forest, edge, &best);
            top = match top {
                None => Some((w, k)),
                Some((bw, bk)) => {
                    if w.ties(&bw) {
                        choice.push(k);
                        let cand = trace(forest, EntryId(i as u32), &choice);
                        choice[i] = bk;
                        let incumbent = trace(forest, EntryId(i as u32), &choice);
                        choice.pop();
                        if g.derivation_key(&cand) < g.derivation_key(&incumbent) {
                            Some((w, k))
                        } else {
                            Some((bw, bk))
                        }
                    } else if w.compare(&bw).is_gt() {
                        Some((w, k))
                    } else {
                        Some((bw, bk))
                    }
                }
            };
        }
        let (w, k) = top.expect("forest entries have edges");
        best.push(w);
        choice.push(k);
    }
    Ok((trace(forest, goal, &choice), best[goal.index()].clone()))
}

/// The most probable derivation (log-space Viterbi) and its exact probability.
pub fn most_probable_derivation(
    forest: &DerivationForest,
) -> Result<(Derivation, BigRational), DisambiguationError> {
    let (d, _) = most_probable_derivation_with::<LogProb>(forest)?;
    let p = forest.grammar().derivation_probability(&d);
    Ok((d, p))
}

/// How random derivations are drawn from the forest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SamplingScheme {
    /// Top-down: at each entry pick an edge with probability
    /// `P(edge) · Π mass(children) / mass(entry)`. Every derivation is drawn
    /// with probability exactly `P(d) / mass(goal)`.
    #[default]
    TopDown,
    /// Bottom-up over spans. Each entry keeps one randomly chosen
    /// subderivation, weighted by its edge probability times the
    /// subderivations already kept below it.
    BottomUpElimination,
}

/// Precomputed per-entry edge distributions for repeated sampling.
pub struct DerivationSampler<'f> {
    forest: &'f DerivationForest,
    goal: EntryId,
    scheme: SamplingScheme,
    tables: Vec<WeightedIndex<f64>>,
}

impl<'f> DerivationSampler<'f> {
    pub fn new(
        forest: &'f DerivationForest,
        masses: &InsideMasses<LogProb>,
        scheme: SamplingScheme,
    ) -> Result<Self, DisambiguationError> {
        let goal = forest.goal().ok_or(DisambiguationError::NoParse)?;
        let tables = match scheme {
            SamplingScheme::TopDown => forest
                .entries()
                .iter()
                .enumerate()
                .map(|(i, entry)| {
                    let total = masses.mass[i].0;
                    let weights: Vec<f64> = entry
                        .edges
                        .iter()
                        .map(|edge| (edge_weight(forest, edge, &masses.mass).0 - total).exp())
                        .collect();
                    WeightedIndex::new(weights).expect("reachable entries have positive mass")
                })
                .collect(),
            SamplingScheme::BottomUpElimination => Vec::new(),
        };
        Ok(DerivationSampler {
            forest,
            goal,
            scheme,
            tables,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Derivation {
        match self.scheme {
            SamplingScheme::TopDown => {
                let mut steps = Vec::new();
                let mut stack = vec![self.goal];
                while let Some(e) = stack.pop() {
                    let k = self.tables[e.index()].sample(rng);
                    let edge = &self.forest.entry(e).edges[k];
                    steps.push(edge.elementary);
                    stack.extend(edge.site_children.iter().rev());
                }
                Derivation::new(steps)
            }
            SamplingScheme::BottomUpElimination => self.sample_bottom_up(rng),
        }
    }

    fn sample_bottom_up<R: Rng + ?Sized>(&self, rng: &mut R) -> Derivation {
        let entries = self.forest.entries();
        // Visit entries by span width, then start, as the chart is filled.
        let mut order: Vec<usize> = (0..entries.len()).collect();
        order.sort_by_key(|&i| (entries[i].end - entries[i].start, entries[i].start));
        let mut kept = vec![f64::NAN; entries.len()];
        let mut choice = vec![usize::MAX; entries.len()];
        let mut pending: Vec<usize> = order;
        // Unary chains inside one span need their children settled first.
        while !pending.is_empty() {
            let mut deferred = Vec::new();
            for i in pending {
                let entry = &entries[i];
                let ready = entry.edges.iter().all(|e| {
                    e.site_children
                        .iter()
                        .all(|c| choice[c.index()] != usize::MAX)
                });
                if !ready {
                    deferred.push(i);
                    continue;
                }
                let logs: Vec<f64> = entry
                    .edges
                    .iter()
                    .map(|edge| {
                        edge.site_children.iter().fold(
                            self.forest.grammar().elementary(edge.elementary).log_prob,
                            |acc, c| acc + kept[c.index()],
                        )
                    })
                    .collect();
                let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let weights = logs.iter().map(|l| (l - top).exp());
                let k = WeightedIndex::new(weights)
                    .expect("positive weights")
                    .sample(rng);
                choice[i] = k;
                kept[i] = logs[k];
            }
            pending = deferred;
        }
        trace(self.forest, self.goal, &choice)
    }
}

/// Draws one derivation from the forest.
pub fn sample_derivation<R: Rng + ?Sized>(
    forest: &DerivationForest,
    masses: &InsideMasses<LogProb>,
    rng: &mut R,
) -> Result<Derivation, DisambiguationError> {
    Ok(DerivationSampler::new(forest, masses, SamplingScheme::TopDown)?.sample(rng))
}

/// Number of samples, given directly or through a bound on the standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SampleSize {
    Sigma(f64),
    Count(usize),
}

impl SampleSize {
    /// The smallest `N` with `N ≥ 1/(4σ²)`, so that `1/(2√N) ≤ σ`.
    pub fn resolve(self) -> Result<usize, DisambiguationError> {
        match self {
            SampleSize::Count(0) => Err(DisambiguationError::ZeroSamples),
            SampleSize::Count(n) => Ok(n),
            SampleSize::Sigma(s) if !(s > 0.0 && s <= 0.5) => {
                Err(DisambiguationError::InvalidSigma(s))
            }
            SampleSize::Sigma(s) => {
                let x = 1.0 / (4.0 * s * s);
                let r = x.round();
                // 0.05 squares to 0.0025000000000000005; treat such values as exact.
                if (x - r).abs() <= 1e-9 * x {
                    Ok(r as usize)
                } else {
                    Ok(x.ceil() as usize)
                }
            }
        }
    }
}

/// Samples per independently seeded block; results do not depend on how
/// blocks are spread over threads.
const BLOCK: usize = 4096;

/// Frequencies of parses over `samples` sampled derivations.
#[derive(Debug, Clone, PartialEq)]
pub struct ParseDistribution {
    /// Parses with sample counts, most frequent first, ties by serialization.
    pub parses: Vec<(Tree, u64)>,
    pub samples: usize,
    pub seed: u64,
}

impl ParseDistribution {
    pub fn from_counts(counts: impl IntoIterator<Item = (Tree, u64)>, seed: u64) -> Self {
        let mut merged: HashMap<Tree, u64> = HashMap::new();
        for (t, n) in counts {
            *merged.entry(t).or_insert(0) += n;
        }
        let samples = merged.values().sum::<u64>() as usize;
        let mut parses: Vec<(String, Tree, u64)> = merged
            .into_iter()
            .filter(|(_, n)| *n > 0)
            .map(|(t, n)| (serialize_tree(&t), t, n))
            .collect();
        parses.sort_by(|a, b| b.2.cmp(&a.2).then_with(|| a.0.cmp(&b.0)));
        ParseDistribution {
            parses: parses.into_iter().map(|(_, t, n)| (t, n)).collect(),
            samples,
            seed,
        }
    }

    /// `1/(2√N)`, the worst-case standard error of any estimate.
    pub fn sigma_bound(&self) -> f64 {
        1.0 / (2.0 * (self.samples as f64).sqrt())
    }

    pub fn estimate(&self, tree: &Tree) -> f64 {
        self.parses
            .iter()
            .find(|(t, _)| t == tree)
            .map_or(0.0, |(_, n)| *n as f64 / self.samples as f64)
    }

    /// `(parse, p_i)` in the stored order.
    pub fn estimates(&self) -> impl Iterator<Item = (&Tree, f64)> {
        let n = self.samples as f64;
        self.parses.iter().map(move |(t, c)| (t, *c as f64 / n))
    }

    pub fn best(&self) -> Option<&Tree> {
        self.parses.first().map(|(t, _)| t)
    }

    /// Header lines with N, seed and σ bound, then `parse<TAB>count<TAB>estimate`.
    pub fn to_tsv(&self) -> String {
        let mut out = format!(
            "# N\t{}\n# seed\t{}\n# sigma_bound\t{:.6}\n",
            self.samples,
            self.seed,
            self.sigma_bound()
        );
        let n = self.samples as f64;
        for (t, count) in &self.parses {
            out.push_str(&format!(
                "{}\t{}\t{:.6}\n",
                serialize_tree(t),
                count,
                *count as f64 / n
            ));
        }
        out
    }
}

/// Samples `size` derivations and tallies the parses they produce.
pub fn estimate_parse_distribution(
    forest: &DerivationForest,
    masses: &InsideMasses<LogProb>,
    size: SampleSize,
    seed: u64,
    scheme: SamplingScheme,
) -> Result<ParseDistribution, DisambiguationError> {
    let n = size.resolve()?;
    let sampler = DerivationSampler::new(forest, masses, scheme)?;
    let g = forest.grammar();
    let blocks = n.div_ceil(BLOCK);
    let tallies: Vec<HashMap<Derivation, u64>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let take = BLOCK.min(n - b * BLOCK);
            let mut tally = HashMap::new();
            for _ in 0..take {
                *tally.entry(sampler.sample(&mut rng)).or_insert(0) += 1;
            }
            tally
        })
        .collect();
    let mut by_derivation: HashMap<Derivation, u64> = HashMap::new();
    for t in tallies {
        for (d, c) in t {
            *by_derivation.entry(d).or_insert(0) += c;
        }
    }
    let mut by_tree: HashMap<Tree, u64> = HashMap::new();
    for (d, c) in by_derivation {
        let tree = g.derive(&d).expect("forest derivations are well formed");
        *by_tree.entry(tree).or_insert(0) += c;
    }
    let mut dist = ParseDistribution::from_counts(by_tree, seed);
    dist.samples = n;
    Ok(dist)
}

/// Parses whose estimate is within `tie_width` of the best one, best first,
/// ties ordered by serialization. With `tie_width = 0` only parses sharing
/// the maximum estimate are returned.
pub fn select_top_parses(dist: &ParseDistribution, tie_width: f64) -> Vec<Tree> {
    let Some(&(_, top)) = dist.parses.first() else {
        return Vec::new();
    };
    let n = dist.samples as f64;
    let floor = top as f64 / n - tie_width;
    dist.parses
        .iter()
        .filter(|(_, c)| *c == top || *c as f64 / n >= floor - 1e-12)
        .map(|(t, _)| t.clone())
        .collect()
}

/// Upper bound on the chance that the most frequently sampled parse is not
/// the most probable one: `Σ_{i≠0} (1 − (√p₀ − √pᵢ)²)^N`, with `p[0]` maximal.
/// Not clamped to 1.
pub fn mc_error_bound(p: &[f64], n: u64) -> f64 {
    let Some((&p0, rest)) = p.split_first() else {
        return 0.0;
    };
    rest.iter()
        .map(|&pi| {
            let d = p0.sqrt() - pi.sqrt();
            (1.0 - d * d).powf(n as f64)
        })
        .sum()
}

/// Exact distribution over parses by unpacking the forest; parse
/// probabilities are sums over their derivations. Most probable first,
/// ties by serialization.
pub fn exact_parse_distribution(
    forest: &DerivationForest,
    cap: usize,
) -> Result<Vec<(Tree, BigRational)>, DisambiguationError> {
    let g = forest.grammar();
    let mut by_tree: HashMap<Tree, BigRational> = HashMap::new();
    for (d, p) in unpack_forest(forest, cap)? {
        let tree = g.derive(&d).expect("forest derivations are well formed");
        let slot = by_tree
            .entry(tree)
            .or_insert_with(<BigRational as Zero>::zero);
        *slot += p;
    }
    let mut rows: Vec<(String, Tree, BigRational)> = by_tree
        .into_iter()
        .map(|(t, p)| (serialize_tree(&t), t, p))
        .collect();
    rows.sort_by(|a, b| b.2.cmp(&a.2).then_with(|| a.0.cmp(&b.0)));
    Ok(rows.into_iter().map(|(_, t, p)| (t, p)).collect())
}

/// The exact most probable parse, by exhaustive unpacking.
pub fn most_probable_parse_exact(
    forest: &DerivationForest,
    cap: usize,
) -> Result<(Tree, BigRational), DisambiguationError> {
    exact_parse_distribution(forest, cap)?
        .into_iter()
        .next()
        .ok_or(DisambiguationError::NoParse)
}
