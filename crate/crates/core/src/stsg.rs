//! Stochastic tree-substitution grammars: leftmost composition, derivations
//! and exact probability computations for small instances.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use thiserror::Error;

use crate::treebank::{parse_bracketed, serialize_tree, Label, Tree, TreeError};

/// Default limit on enumerated derivations.
pub const DEFAULT_ENUMERATION_CAP: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ComposeError {
    #[error("tree has no open substitution site")]
    NoOpenSite,
    #[error("leftmost site {site} does not match root {root}")]
    Undefined { site: String, root: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DeriveError {
    #[error("empty derivation")]
    Empty,
    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: ComposeError,
    },
    #[error("step {step} is not an elementary tree of the grammar")]
    StepNotInGrammar { step: usize },
    #[error("derivation leaves {0} step(s) unused")]
    UnusedSteps(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GrammarError {
    #[error("no elementary tree is rooted in the start symbol {0}")]
    NoStartFragments(String),
    #[error("elementary tree {0} must have more than one node")]
    TrivialTree(String),
    #[error("elementary tree {0} has zero count")]
    ZeroCount(String),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("line {line}: {source}")]
    Tree {
        line: usize,
        #[source]
        source: TreeError,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnumerateError {
    #[error("more than {0} derivations")]
    CapExceeded(usize),
    #[error("grammar has a unary cycle through {0}")]
    UnaryCycle(String),
}

/// `t ∘ u`: a copy of `t` with a copy of `u` substituted at the leftmost
/// nonterminal leaf of `t`. Defined only when that leaf's label equals the
/// root label of `u`.
pub fn compose(t: &Tree, u: &Tree) -> Result<Tree, ComposeError> {
    let site = t.leftmost_site().ok_or(ComposeError::NoOpenSite)?;
    if site != u.label() {
        return Err(ComposeError::Undefined {
            site: site.to_string(),
            root: u.label().to_string(),
        });
    }
    Ok(t.replace_leftmost_site(u).expect("site exists"))
}

/// Left fold of [`compose`]: `((t1 ∘ t2) ∘ t3) ∘ …`.
pub fn derive_trees(steps: &[Tree]) -> Result<Tree, DeriveError> {
    let (first, rest) = steps.split_first().ok_or(DeriveError::Empty)?;
    rest.iter()
        .enumerate()
        .try_fold(first.clone(), |acc, (i, u)| {
            compose(&acc, u).map_err(|source| DeriveError::Step {
                step: i + 1,
                source,
            })
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ElementaryId(pub u32);

impl ElementaryId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// A leftmost derivation: elementary trees in substitution order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Derivation {
    pub steps: Vec<ElementaryId>,
}

impl Derivation {
    pub fn new(steps: Vec<ElementaryId>) -> Self {
        Derivation { steps }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Elementary {
    pub tree: Tree,
    pub count: u64,
    pub probability: BigRational,
    pub log_prob: f64,
    /// `yield(t)`, terminals and sites.
    pub frontier: Vec<Label>,
    pub sites: usize,
    serialized: String,
}

impl Elementary {
    pub fn root(&self) -> &Label {
        self.tree.label()
    }

    pub fn serialized(&self) -> &str {
        &self.serialized
    }
}

/// `⟨V_N, V_T, S, R, P⟩` with relative-frequency probabilities.
///
/// Elementary trees are stored in lexicographic order of their serialization,
/// so [`ElementaryId`]s are stable for a given set of trees.
#[derive(Debug, Clone)]
pub struct Stsg {
    start: Label,
    nonterminals: BTreeSet<Label>,
    terminals: BTreeSet<Label>,
    elementary: Vec<Elementary>,
    index: HashMap<Tree, ElementaryId>,
    by_root: HashMap<Label, Vec<ElementaryId>>,
    root_totals: BTreeMap<Label, u64>,
}

impl Stsg {
    /// Builds a grammar from fragment counts; `P(t) = count(t) / Σ count(root(t))`.
    pub fn from_counts(
        counts: impl IntoIterator<Item = (Tree, u64)>,
        start: Label,
    ) -> Result<Self, GrammarError> {
        let mut merged: HashMap<Tree, u64> = HashMap::new();
        for (t, n) in counts {
            let text = serialize_tree(&t);
            if n == 0 {
                return Err(GrammarError::ZeroCount(text));
            }
            if t.is_leaf() || t.label().is_terminal() {
                return Err(GrammarError::TrivialTree(text));
            }
            *merged.entry(t).or_insert(0) += n;
        }
        let mut rows: Vec<(String, Tree, u64)> = merged
            .into_iter()
            .map(|(t, n)| (serialize_tree(&t), t, n))
            .collect();
        rows.sort_by(|a, b| a.0.cmp(&b.0));

        let mut root_totals: BTreeMap<Label, u64> = BTreeMap::new();
        for (_, t, n) in &rows {
            *root_totals.entry(t.label().clone()).or_insert(0) += n;
        }
        if !root_totals.contains_key(&start) {
            return Err(GrammarError::NoStartFragments(start.to_string()));
        }

        let mut nonterminals = BTreeSet::new();
        let mut terminals = BTreeSet::new();
        nonterminals.insert(start.clone());
        let mut elementary = Vec::with_capacity(rows.len());
        let mut index = HashMap::with_capacity(rows.len());
        let mut by_root: HashMap<Label, Vec<ElementaryId>> = HashMap::new();
        for (i, (serialized, tree, count)) in rows.into_iter().enumerate() {
            for node in tree.preorder() {
                if node.label().is_terminal() {
                    terminals.insert(node.label().clone());
                } else {
                    nonterminals.insert(node.label().clone());
                }
            }
            let total = root_totals[tree.label()];
            let id = ElementaryId(i as u32);
            let frontier = tree.leaves();
            let sites = frontier.iter().filter(|l| l.is_nonterminal()).count();
            index.insert(tree.clone(), id);
            by_root.entry(tree.label().clone()).or_default().push(id);
            elementary.push(Elementary {
                probability: BigRational::new(BigInt::from(count), BigInt::from(total)),
                log_prob: (count as f64).ln() - (total as f64).ln(),
                frontier,
                sites,
                count,
                tree,
                serialized,
            });
        }
        Ok(Stsg {
            start,
            nonterminals,
            terminals,
            elementary,
            index,
            by_root,
            root_totals,
        })
    }

    pub fn start(&self) -> &Label {
        &self.start
    }

    pub fn nonterminals(&self) -> &BTreeSet<Label> {
        &self.nonterminals
    }

    pub fn terminals(&self) -> &BTreeSet<Label> {
        &self.terminals
    }

    pub fn root_totals(&self) -> &BTreeMap<Label, u64> {
        &self.root_totals
    }

    pub fn len(&self) -> usize {
        self.elementary.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elementary.is_empty()
    }

    pub fn elementary(&self, id: ElementaryId) -> &Elementary {
        &self.elementary[id.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ElementaryId, &Elementary)> {
        self.elementary
            .iter()
            .enumerate()
            .map(|(i, e)| (ElementaryId(i as u32), e))
    }

    pub fn id_of(&self, tree: &Tree) -> Option<ElementaryId> {
        self.index.get(tree).copied()
    }

    pub fn probability_of(&self, tree: &Tree) -> Option<&BigRational> {
        self.id_of(tree).map(|id| &self.elementary(id).probability)
    }

    pub fn rooted_at(&self, label: &Label) -> &[ElementaryId] {
        self.by_root.get(label).map_or(&[], Vec::as_slice)
    }

    /// Looks up each tree, failing with the index of the first unknown one.
    pub fn derivation_of_trees(&self, steps: &[Tree]) -> Result<Derivation, DeriveError> {
        steps
            .iter()
            .enumerate()
            .map(|(i, t)| {
                self.id_of(t)
                    .ok_or(DeriveError::StepNotInGrammar { step: i })
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Derivation::new)
    }

    /// The derived tree. Equivalent to [`derive_trees`] on the step trees,
    /// but built in one pass.
    pub fn derive(&self, derivation: &Derivation) -> Result<Tree, DeriveError> {
        fn fill(
            g: &Stsg,
            node: &Tree,
            steps: &[ElementaryId],
            next: &mut usize,
        ) -> Result<Tree, DeriveError> {
            if node.is_open_site() {
                let Some(&id) = steps.get(*next) else {
                    return Ok(node.clone());
                };
                let sub = &g.elementary(id).tree;
                if sub.label() != node.label() {
                    return Err(DeriveError::Step {
                        step: *next,
                        source: ComposeError::Undefined {
                            site: node.label().to_string(),
                            root: sub.label().to_string(),
                        },
                    });
                }
                *next += 1;
                return fill(g, sub, steps, next);
            }
            if node.is_leaf() {
                return Ok(node.clone());
            }
            let children = node
                .children()
                .iter()
                .map(|c| fill(g, c, steps, next))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(Tree::internal(node.label().clone(), children).expect("nonterminal internal node"))
        }
        let (&first, _) = derivation.steps.split_first().ok_or(DeriveError::Empty)?;
        let mut next = 1;
        let tree = fill(
            self,
            &self.elementary(first).tree,
            &derivation.steps,
            &mut next,
        )?;
        if next < derivation.steps.len() {
            return Err(DeriveError::Step {
                step: next,
                source: ComposeError::NoOpenSite,
            });
        }
        Ok(tree)
    }

    /// `P(t_1) · … · P(t_n)`.
    pub fn derivation_probability(&self, derivation: &Derivation) -> BigRational {
        derivation.steps.iter().fold(BigRational::one(), |acc, id| {
            acc * &self.elementary(*id).probability
        })
    }

    /// Probability of a derivation given as trees; every step must be an
    /// elementary tree and the composition must be defined.
    pub fn derivation_probability_of_trees(
        &self,
        steps: &[Tree],
    ) -> Result<BigRational, DeriveError> {
        let d = self.derivation_of_trees(steps)?;
        derive_trees(steps)?;
        Ok(self.derivation_probability(&d))
    }

    pub fn derivation_log_prob(&self, derivation: &Derivation) -> f64 {
        derivation
            .steps
            .iter()
            .map(|id| self.elementary(*id).log_prob)
            .sum()
    }

    /// Serialized step trees, used for deterministic tie-breaking.
    pub fn derivation_key(&self, derivation: &Derivation) -> Vec<&str> {
        derivation
            .steps
            .iter()
            .map(|id| self.elementary(*id).serialized())
            .collect()
    }

    pub fn render_derivation(&self, derivation: &Derivation) -> String {
        self.derivation_key(derivation).join(" ∘ ")
    }

    /// A nonterminal on a cycle of single-site, terminal-free elementary
    /// trees (`A → B → … → A`), if any. Such grammars give some sentences
    /// infinitely many derivations.
    pub fn unary_cycle(&self) -> Option<&Label> {
        let mut edges: HashMap<&Label, Vec<&Label>> = HashMap::new();
        for e in &self.elementary {
            if let [only] = e.frontier.as_slice() {
                if only.is_nonterminal() {
                    edges.entry(e.root()).or_default().push(only);
                }
            }
        }
        // 0 = unseen, 1 = on stack, 2 = done
        let mut state: HashMap<&Label, u8> = HashMap::new();
        fn visit<'a>(
            n: &'a Label,
            edges: &HashMap<&'a Label, Vec<&'a Label>>,
            state: &mut HashMap<&'a Label, u8>,
        ) -> Option<&'a Label> {
            match state.get(n) {
                Some(1) => return Some(n),
                Some(2) => return None,
                _ => {}
            }
            state.insert(n, 1);
            for m in edges.get(n).into_iter().flatten() {
                if let Some(c) = visit(m, edges, state) {
                    return Some(c);
                }
            }
            state.insert(n, 2);
            None
        }
        let mut roots: Vec<&Label> = edges.keys().copied().collect();
        roots.sort();
        roots.into_iter().find_map(|r| visit(r, &edges, &mut state))
    }

    /// Grammar TSV: header comments with the start symbol and root totals,
    /// then `tree<TAB>count<TAB>p/q` per elementary tree in lexicographic order.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("# start\t{}\n", self.start);
        for (label, n) in &self.root_totals {
            out.push_str(&format!("# root-total\t{label}\t{n}\n"));
        }
        for e in &self.elementary {
            out.push_str(&format!(
                "{}\t{}\t{}/{}\n",
                e.serialized,
                e.count,
                e.probability.numer(),
                e.probability.denom()
            ));
        }
        out
    }

    /// Reads [`Stsg::to_tsv`] output. Probabilities are recomputed from the
    /// counts and must agree with the stored column.
    pub fn from_tsv(text: &str) -> Result<Self, GrammarError> {
        let mut start = None;
        let mut rows = Vec::new();
        let mut stated = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let mut cols = rest.trim().split('\t');
                if cols.next() == Some("start") {
                    let name = cols.next().ok_or_else(|| GrammarError::Format {
                        line: line_no,
                        message: "missing start symbol".into(),
                    })?;
                    start = Some(
                        Label::try_new(name.trim(), crate::treebank::LabelKind::Nonterminal)
                            .map_err(|source| GrammarError::Tree {
                                line: line_no,
                                source,
                            })?,
                    );
                }
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() < 2 {
                return Err(GrammarError::Format {
                    line: line_no,
                    message: "expected tree<TAB>count[<TAB>p/q]".into(),
                });
            }
            let tree = parse_bracketed(cols[0]).map_err(|source| GrammarError::Tree {
                line: line_no,
                source,
            })?;
            let count: u64 = cols[1].trim().parse().map_err(|_| GrammarError::Format {
                line: line_no,
                message: format!("bad count {:?}", cols[1]),
            })?;
            if let Some(p) = cols.get(2) {
                let p: BigRational = p.trim().parse().map_err(|_| GrammarError::Format {
                    line: line_no,
                    message: format!("bad probability {p:?}"),
                })?;
                stated.push((line_no, tree.clone(), p));
            }
            rows.push((tree, count));
        }
        let start = start.unwrap_or_else(|| Label::nonterminal("S"));
        let g = Stsg::from_counts(rows, start)?;
        for (line, tree, p) in stated {
            if g.probability_of(&tree) != Some(&p) {
                return Err(GrammarError::Format {
                    line,
                    message: "probability does not match counts".into(),
                });
            }
        }
        Ok(g)
    }
}

impl fmt::Display for Stsg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_tsv())
    }
}

/// All leftmost derivations of `sentence`, by backtracking over the grammar.
///
/// Exponential; meant as a test oracle. Fails rather than truncating when
/// more than `cap` derivations exist.
pub fn enumerate_derivations(
    g: &Stsg,
    sentence: &[Label],
    cap: usize,
) -> Result<Vec<(Derivation, BigRational)>, EnumerateError> {
    if let Some(label) = g.unary_cycle() {
        return Err(EnumerateError::UnaryCycle(label.to_string()));
    }
    struct Search<'a> {
        g: &'a Stsg,
        sentence: &'a [Label],
        cap: usize,
        steps: Vec<ElementaryId>,
        out: Vec<(Derivation, BigRational)>,
    }
    impl Search<'_> {
        // `pending` holds the unexpanded frontier, leftmost symbol last.
        fn go(&mut self, pos: usize, pending: &mut Vec<Label>) -> Result<(), EnumerateError> {
            if pending.len() > self.sentence.len() - pos {
                return Ok(());
            }
            let Some(sym) = pending.pop() else {
                if pos == self.sentence.len() {
                    if self.out.len() == self.cap {
                        return Err(EnumerateError::CapExceeded(self.cap));
                    }
                    let d = Derivation::new(self.steps.clone());
                    let p = self.g.derivation_probability(&d);
                    self.out.push((d, p));
                }
                return Ok(());
            };
            if sym.is_terminal() {
                if self.sentence[pos] == sym {
                    self.go(pos + 1, pending)?;
                }
            } else {
                for &id in self.g.rooted_at(&sym) {
                    let e = self.g.elementary(id);
                    let mark = pending.len();
                    pending.extend(e.frontier.iter().rev().cloned());
                    self.steps.push(id);
                    self.go(pos, pending)?;
                    self.steps.pop();
                    pending.truncate(mark);
                }
            }
            pending.push(sym);
            Ok(())
        }
    }
    if sentence.is_empty() {
        return Ok(Vec::new());
    }
    let mut search = Search {
        g,
        sentence,
        cap,
        steps: Vec::new(),
        out: Vec::new(),
    };
    search.go(0, &mut vec![g.start().clone()])?;
    Ok(search.out)
}

/// Probability of a parse tree: the sum over every way of decomposing it
/// into elementary trees of the grammar. Zero when it cannot be derived.
pub fn exact_parse_probability(g: &Stsg, parse: &Tree) -> BigRational {
    if parse.label() != g.start() {
        return BigRational::zero();
    }
    // Inside sums keyed by node address; the parse is borrowed throughout.
    let mut memo: HashMap<*const Tree, BigRational> = HashMap::new();

    fn matches<'p>(pattern: &Tree, node: &'p Tree, cuts: &mut Vec<&'p Tree>) -> bool {
        if pattern.label() != node.label() {
            return false;
        }
        if pattern.is_open_site() {
            if node.is_leaf() {
                return false;
            }
            cuts.push(node);
            return true;
        }
        if pattern.children().len() != node.children().len() {
            return false;
        }
        pattern
            .children()
            .iter()
            .zip(node.children())
            .all(|(p, n)| matches(p, n, cuts))
    }

    fn inside(g: &Stsg, node: &Tree, memo: &mut HashMap<*const Tree, BigRational>) -> BigRational {
        let key = node as *const Tree;
        if let Some(v) = memo.get(&key) {
            return v.clone();
        }
        let mut total = BigRational::zero();
        for &id in g.rooted_at(node.label()) {
            let e = g.elementary(id);
            let mut cuts = Vec::new();
            if matches(&e.tree, node, &mut cuts) {
                let mut p = e.probability.clone();
                for c in cuts {
                    if p.is_zero() {
                        break;
                    }
                    p *= inside(g, c, memo);
                }
                total += p;
            }
        }
        memo.insert(key, total.clone());
        total
    }

    if parse.is_leaf() {
        return BigRational::zero();
    }
    inside(g, parse, &mut memo)
}
