//! Subtree extraction. The bag of all fragments of a corpus can be narrowed
//! by a [`FragmentFilter`] before it is projected into a grammar.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use rayon::prelude::*;
use thiserror::Error;

use crate::stsg::{GrammarError, Stsg};
use crate::treebank::{parse_bracketed, serialize_tree, Corpus, Label, Tree, TreeError};

/// Restrictions on which corpus subtrees become elementary trees.
///
/// Filters apply in a fixed order: depth cap, substitution-site cap, root
/// whitelist, then the occurrence-count rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FragmentFilter {
    pub max_depth: Option<usize>,
    pub max_sites: Option<usize>,
    pub roots: Option<BTreeSet<Label>>,
    /// Fragments occurring fewer times than this are dropped; 2 drops hapaxes.
    pub min_count: u64,
    /// When set, the count rule only drops fragments deeper than this.
    pub hapax_min_depth: Option<usize>,
}

impl Default for FragmentFilter {
    fn default() -> Self {
        FragmentFilter {
            max_depth: None,
            max_sites: None,
            roots: None,
            min_count: 1,
            hapax_min_depth: None,
        }
    }
}

impl FragmentFilter {
    pub fn with_max_depth(mut self, depth: usize) -> Self {
        self.max_depth = Some(depth);
        self
    }

    pub fn with_max_sites(mut self, sites: usize) -> Self {
        self.max_sites = Some(sites);
        self
    }

    pub fn with_roots<'a>(mut self, roots: impl IntoIterator<Item = &'a str>) -> Self {
        self.roots = Some(roots.into_iter().map(Label::nonterminal).collect());
        self
    }

    pub fn with_min_count(mut self, min_count: u64) -> Self {
        self.min_count = min_count;
        self
    }

    pub fn with_hapax_min_depth(mut self, depth: usize) -> Self {
        self.hapax_min_depth = Some(depth);
        self
    }

    pub fn validate(&self) -> Result<(), FragmentError> {
        let bad = |name: &'static str| Err(FragmentError::InvalidFilter(name));
        if self.max_depth == Some(0) {
            return bad("max_depth must be at least 1");
        }
        if self.max_sites == Some(0) {
            return bad("max_sites must be at least 1");
        }
        if self.min_count == 0 {
            return bad("min_count must be at least 1");
        }
        if self.hapax_min_depth == Some(0) {
            return bad("hapax_min_depth must be at least 1");
        }
        if self.roots.as_ref().is_some_and(|r| r.is_empty()) {
            return bad("root whitelist must not be empty");
        }
        Ok(())
    }

    fn keeps_root(&self, label: &Label) -> bool {
        self.roots.as_ref().is_none_or(|r| r.contains(label))
    }

    fn drops_by_count(&self, fragment: &Tree, count: u64) -> bool {
        count < self.min_count && self.hapax_min_depth.is_none_or(|d| fragment.depth() > d)
    }
}

/// Short identifier used in report rows, e.g. `d2-s*-r*-c1`.
impl fmt::Display for FragmentFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |v: Option<usize>| v.map_or("*".to_string(), |v| v.to_string());
        write!(f, "d{}-s{}-r", opt(self.max_depth), opt(self.max_sites))?;
        match &self.roots {
            None => f.write_str("*")?,
            Some(r) => {
                let names: Vec<_> = r.iter().map(Label::as_str).collect();
                f.write_str(&names.join("+"))?
            }
        }
        write!(f, "-c{}", self.min_count)?;
        if let Some(h) = self.hapax_min_depth {
            write!(f, "-h{h}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FragmentError {
    #[error("invalid filter: {0}")]
    InvalidFilter(&'static str),
    #[error("no fragment rooted in a corpus start label survives filtering")]
    EmptyBagAfterFiltering,
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("line {line}: {source}")]
    Tree {
        line: usize,
        #[source]
        source: TreeError,
    },
}

/// A multiset of fragments with per-root totals.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FragmentBag {
    counts: HashMap<Tree, u64>,
    root_totals: BTreeMap<Label, u64>,
}

impl FragmentBag {
    pub fn from_counts(counts: HashMap<Tree, u64>) -> Self {
        let counts: HashMap<Tree, u64> = counts.into_iter().filter(|(_, n)| *n > 0).collect();
        let mut root_totals = BTreeMap::new();
        for (t, n) in &counts {
            *root_totals.entry(t.label().clone()).or_insert(0) += n;
        }
        FragmentBag {
            counts,
            root_totals,
        }
    }

    pub fn counts(&self) -> &HashMap<Tree, u64> {
        &self.counts
    }

    pub fn count(&self, fragment: &Tree) -> u64 {
        self.counts.get(fragment).copied().unwrap_or(0)
    }

    pub fn root_totals(&self) -> &BTreeMap<Label, u64> {
        &self.root_totals
    }

    pub fn root_total(&self, label: &str) -> u64 {
        self.root_totals
            .get(&Label::nonterminal(label))
            .copied()
            .unwrap_or(0)
    }

    /// Number of distinct fragments.
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Total occurrences across all fragments.
    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    /// `(serialized, count)` pairs in lexicographic order of serialization.
    pub fn sorted(&self) -> Vec<(String, u64)> {
        let mut rows: Vec<_> = self
            .counts
            .iter()
            .map(|(t, n)| (serialize_tree(t), *n))
            .collect();
        rows.sort();
        rows
    }

    /// One `fragment<TAB>count` line per distinct fragment.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (s, n) in self.sorted() {
            out.push_str(&s);
            out.push('\t');
            out.push_str(&n.to_string());
            out.push('\n');
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self, FragmentError> {
        let mut counts = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line.split('\t');
            let (Some(frag), Some(count)) = (cols.next(), cols.next()) else {
                return Err(FragmentError::Format {
                    line: line_no,
                    message: "expected fragment<TAB>count".into(),
                });
            };
            let tree = parse_bracketed(frag).map_err(|source| FragmentError::Tree {
                line: line_no,
                source,
            })?;
            let n: u64 = count.trim().parse().map_err(|_| FragmentError::Format {
                line: line_no,
                message: format!("bad count {count:?}"),
            })?;
            if n == 0 {
                return Err(FragmentError::Format {
                    line: line_no,
                    message: "count must be positive".into(),
                });
            }
            *counts.entry(tree).or_insert(0) += n;
        }
        Ok(FragmentBag::from_counts(counts))
    }

    fn merge(&mut self, other: HashMap<Tree, u64>, times: u64) {
        for (t, n) in other {
            *self.counts.entry(t).or_insert(0) += n * times;
        }
    }
}

struct Piece {
    tree: Tree,
    depth: usize,
    sites: usize,
}

/// All fragments rooted at `node` with depth at most `depth_cap` and at most
/// `site_cap` substitution sites. `node` must be internal.
fn fragments_rooted_at(node: &Tree, depth_cap: usize, site_cap: usize) -> Vec<Piece> {
    debug_assert!(!node.is_leaf() && depth_cap >= 1);
    // Per child: the alternatives it can contribute.
    let options: Vec<Vec<Piece>> = node
        .children()
        .iter()
        .map(|c| {
            if c.is_leaf() {
                return vec![Piece {
                    tree: c.clone(),
                    depth: 0,
                    sites: usize::from(c.is_open_site()),
                }];
            }
            let mut alts = vec![Piece {
                tree: Tree::leaf(c.label().clone()),
                depth: 0,
                sites: 1,
            }];
            if depth_cap > 1 {
                alts.extend(fragments_rooted_at(c, depth_cap - 1, site_cap));
            }
            alts
        })
        .collect();

    let mut out = Vec::new();
    let mut chosen: Vec<usize> = Vec::with_capacity(options.len());
    fn product(
        node: &Tree,
        options: &[Vec<Piece>],
        chosen: &mut Vec<usize>,
        sites: usize,
        site_cap: usize,
        out: &mut Vec<Piece>,
    ) {
        let k = chosen.len();
        if k == options.len() {
            let mut depth = 0;
            let children = chosen
                .iter()
                .zip(options)
                .map(|(&i, alts)| {
                    depth = depth.max(alts[i].depth + 1);
                    alts[i].tree.clone()
                })
                .collect();
            out.push(Piece {
                tree: Tree::internal(node.label().clone(), children)
                    .expect("internal corpus node has nonterminal label"),
                depth,
                sites,
            });
            return;
        }
        for (i, alt) in options[k].iter().enumerate() {
            let s = sites + alt.sites;
            if s > site_cap {
                continue;
            }
            chosen.push(i);
            product(node, options, chosen, s, site_cap, out);
            chosen.pop();
        }
    }
    product(node, &options, &mut chosen, 0, site_cap, &mut out);
    out
}

fn extract_filtered(tree: &Tree, filter: &FragmentFilter) -> HashMap<Tree, u64> {
    let depth_cap = filter.max_depth.unwrap_or(usize::MAX);
    let site_cap = filter.max_sites.unwrap_or(usize::MAX);
    let mut counts = HashMap::new();
    for node in tree.preorder() {
        if node.is_leaf() || !filter.keeps_root(node.label()) {
            continue;
        }
        for piece in fragments_rooted_at(node, depth_cap, site_cap) {
            *counts.entry(piece.tree).or_insert(0) += 1;
        }
    }
    counts
}

/// The bag of all subtrees of one tree: for every internal node, every way
/// of independently cutting or expanding each internal descendant.
pub fn extract_subtrees(tree: &Tree) -> FragmentBag {
    FragmentBag::from_counts(extract_filtered(tree, &FragmentFilter::default()))
}

/// Sums subtree bags over the corpus (respecting multiplicities) and
/// applies `filter`.
pub fn corpus_fragments(
    corpus: &Corpus,
    filter: &FragmentFilter,
) -> Result<FragmentBag, FragmentError> {
    filter.validate()?;
    let per_tree: Vec<(HashMap<Tree, u64>, u64)> = corpus
        .entries()
        .par_iter()
        .map(|(t, n)| (extract_filtered(t, filter), *n))
        .collect();
    let mut bag = FragmentBag::default();
    for (counts, times) in per_tree {
        bag.merge(counts, times);
    }
    let counts = bag
        .counts
        .into_iter()
        .filter(|(t, n)| !filter.drops_by_count(t, *n))
        .collect();
    let bag = FragmentBag::from_counts(counts);

    let starts: BTreeSet<&Label> = corpus.entries().iter().map(|(t, _)| t.label()).collect();
    if !starts.iter().any(|s| bag.root_totals.contains_key(*s)) {
        return Err(FragmentError::EmptyBagAfterFiltering);
    }
    Ok(bag)
}

/// Relative-frequency grammar: `P(t) = #t / #(fragments with root(t))`.
pub fn project_stsg(bag: &FragmentBag, start: &Label) -> Result<Stsg, GrammarError> {
    Stsg::from_counts(
        bag.counts.iter().map(|(t, n)| (t.clone(), *n)),
        start.clone(),
    )
}
