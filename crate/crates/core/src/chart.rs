//! Chart parsing with a tree-substitution grammar.
//!
//! Every elementary tree is read as the flat rule `root(t) → yield(t)` and
//! matched left to right with dotted items. Completed items become edges of
//! the packed derivation forest; an edge remembers the full elementary tree
//! and the chart entry filling each of its substitution sites, so distinct
//! derivations of identical trees stay distinct.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;
use std::sync::Arc;

use num_rational::BigRational;
use thiserror::Error;

use crate::stsg::{Derivation, ElementaryId, EnumerateError, Stsg};
use crate::treebank::Label;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("unknown terminal {word}@{position}")]
    UnknownTerminal { word: String, position: usize },
    #[error("empty sentence")]
    EmptySentence,
    #[error("unary cycle through {label} over ({start},{end})")]
    UnaryCycle {
        label: String,
        start: usize,
        end: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntryId(pub u32);

impl EntryId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// One way of building an entry: an elementary tree plus the entries
/// filling its substitution sites, left to right.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ForestEdge {
    pub elementary: ElementaryId,
    pub site_children: Vec<EntryId>,
}

/// All subderivations rooted in `label` spanning words `start..end`.
#[derive(Debug, Clone)]
pub struct Entry {
    pub start: usize,
    pub end: usize,
    pub label: Label,
    pub edges: Vec<ForestEdge>,
}

impl fmt::Display for Entry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.start, self.end, self.label)
    }
}

/// Packed derivation forest for one sentence. Only entries that take part
/// in some derivation of the whole sentence are kept; entries are stored
/// children-first, so a forward scan is a valid bottom-up order.
#[derive(Debug, Clone)]
pub struct DerivationForest {
    grammar: Arc<Stsg>,
    sentence: Vec<Label>,
    entries: Vec<Entry>,
    index: HashMap<(usize, usize, Label), EntryId>,
    goal: Option<EntryId>,
}

impl DerivationForest {
    pub fn grammar(&self) -> &Arc<Stsg> {
        &self.grammar
    }

    pub fn sentence(&self) -> &[Label] {
        &self.sentence
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn entry(&self, id: EntryId) -> &Entry {
        &self.entries[id.index()]
    }

    pub fn lookup(&self, start: usize, end: usize, label: &Label) -> Option<EntryId> {
        self.index.get(&(start, end, label.clone())).copied()
    }

    /// The `(0, n, S)` entry, absent when the sentence has no parse.
    pub fn goal(&self) -> Option<EntryId> {
        self.goal
    }

    pub fn has_parse(&self) -> bool {
        self.goal.is_some()
    }

    pub fn edge_count(&self) -> usize {
        self.entries.iter().map(|e| e.edges.len()).sum()
    }

    /// Number of sentence derivations, saturating at `u128::MAX`.
    pub fn derivation_count(&self) -> u128 {
        let Some(goal) = self.goal else { return 0 };
        let mut counts = vec![0u128; self.entries.len()];
        for (i, entry) in self.entries.iter().enumerate() {
            counts[i] = entry.edges.iter().fold(0u128, |acc, edge| {
                let n = edge
                    .site_children
                    .iter()
                    .fold(1u128, |m, c| m.saturating_mul(counts[c.index()]));
                acc.saturating_add(n)
            });
        }
        counts[goal.index()]
    }

    /// One line per edge: `(i,j,A) ← tree [(k,l,B) …]`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for entry in &self.entries {
            for edge in &entry.edges {
                let children: Vec<String> = edge
                    .site_children
                    .iter()
                    .map(|c| self.entry(*c).to_string())
                    .collect();
                out.push_str(&format!(
                    "{} ← {} [{}]\n",
                    entry,
                    self.grammar.elementary(edge.elementary).serialized(),
                    children.join(" ")
                ));
            }
        }
        out
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
struct ItemKey {
    rule: ElementaryId,
    dot: u32,
    start: u32,
    end: u32,
}

/// How an item was reached: the item one symbol shorter (absent at dot 1)
/// and the entry consumed (absent for a terminal).
type Back = (Option<usize>, Option<EntryId>);

struct Item {
    key: ItemKey,
    backs: Vec<Back>,
}

/// A grammar prepared for parsing many sentences.
#[derive(Debug, Clone)]
pub struct Parser {
    grammar: Arc<Stsg>,
    /// Lexicalized rules keyed by their first terminal.
    anchored: HashMap<Label, Vec<ElementaryId>>,
    unlexicalized: Vec<ElementaryId>,
}

impl Parser {
    pub fn new(grammar: Arc<Stsg>) -> Self {
        let mut anchored: HashMap<Label, Vec<ElementaryId>> = HashMap::new();
        let mut unlexicalized = Vec::new();
        for (id, e) in grammar.iter() {
            match e.frontier.iter().find(|l| l.is_terminal()) {
                Some(w) => anchored.entry(w.clone()).or_default().push(id),
                None => unlexicalized.push(id),
            }
        }
        Parser {
            grammar,
            anchored,
            unlexicalized,
        }
    }

    pub fn grammar(&self) -> &Arc<Stsg> {
        &self.grammar
    }

    /// Rules whose terminals occur in the sentence in order and whose
    /// frontier is no longer than the sentence.
    fn candidates(&self, sentence: &[Label]) -> Vec<ElementaryId> {
        let g = &*self.grammar;
        let n = sentence.len();
        let mut seen = HashSet::new();
        let mut out: Vec<ElementaryId> = self
            .unlexicalized
            .iter()
            .copied()
            .filter(|id| g.elementary(*id).frontier.len() <= n)
            .collect();
        for w in sentence {
            if !seen.insert(w) {
                continue;
            }
            for &id in self.anchored.get(w).into_iter().flatten() {
                let e = g.elementary(id);
                if e.frontier.len() > n {
                    continue;
                }
                let mut words = sentence.iter();
                if e.frontier
                    .iter()
                    .filter(|l| l.is_terminal())
                    .all(|t| words.any(|w| w == t))
                {
                    out.push(id);
                }
            }
        }
        out.sort();
        out
    }

    pub fn parse(&self, sentence: &[Label]) -> Result<DerivationForest, ParseError> {
        let g = &*self.grammar;
        if sentence.is_empty() {
            return Err(ParseError::EmptySentence);
        }
        if let Some((position, w)) = sentence
            .iter()
            .enumerate()
            .find(|(_, w)| !g.terminals().contains(*w))
        {
            return Err(ParseError::UnknownTerminal {
                word: w.to_string(),
                position,
            });
        }
        let n = sentence.len();
        let mut by_first: HashMap<&Label, Vec<ElementaryId>> = HashMap::new();
        for id in self.candidates(sentence) {
            by_first
                .entry(&g.elementary(id).frontier[0])
                .or_default()
                .push(id);
        }

        let mut chart = Chart {
            g,
            sentence,
            by_first: &by_first,
            items: Vec::new(),
            item_index: HashMap::new(),
            incomplete: vec![Vec::new(); (n + 1) * (n + 1)],
            expansions: HashMap::new(),
            entries: Vec::new(),
            entry_index: HashMap::new(),
            edge_seen: HashSet::new(),
            fresh: Vec::new(),
            n,
        };
        for end in 1..=n {
            for start in (0..end).rev() {
                chart.fill_span(start, end);
            }
        }
        chart.finish(self.grammar.clone())
    }
}

struct Chart<'a> {
    g: &'a Stsg,
    sentence: &'a [Label],
    by_first: &'a HashMap<&'a Label, Vec<ElementaryId>>,
    items: Vec<Item>,
    item_index: HashMap<ItemKey, usize>,
    /// Incomplete items by `start * (n + 1) + end`.
    incomplete: Vec<Vec<usize>>,
    expansions: HashMap<usize, Rc<Vec<Vec<EntryId>>>>,
    entries: Vec<Entry>,
    entry_index: HashMap<(usize, usize, Label), EntryId>,
    edge_seen: HashSet<(EntryId, ForestEdge)>,
    /// Entries created in the current span whose closure is pending.
    fresh: Vec<EntryId>,
    n: usize,
}

impl Chart<'_> {
    fn fill_span(&mut self, start: usize, end: usize) {
        let n1 = self.n + 1;
        for mid in start + 1..end {
            let pending = self.incomplete[start * n1 + mid].clone();
            for idx in pending {
                let key = self.items[idx].key;
                let sym = &self.g.elementary(key.rule).frontier[key.dot as usize];
                if sym.is_terminal() {
                    if mid + 1 == end && self.sentence[mid] == *sym {
                        self.add_item(key.rule, key.dot + 1, start, end, (Some(idx), None));
                    }
                } else if let Some(&e) = self.entry_index.get(&(mid, end, sym.clone())) {
                    self.add_item(key.rule, key.dot + 1, start, end, (Some(idx), Some(e)));
                }
            }
        }
        if end == start + 1 {
            let word = &self.sentence[start];
            for &rule in self.by_first.get(word).into_iter().flatten() {
                self.add_item(rule, 1, start, end, (None, None));
            }
        }
        while let Some(entry) = self.fresh.pop() {
            let label = self.entries[entry.index()].label.clone();
            for &rule in self.by_first.get(&label).into_iter().flatten() {
                self.add_item(rule, 1, start, end, (None, Some(entry)));
            }
        }
    }

    fn add_item(&mut self, rule: ElementaryId, dot: u32, start: usize, end: usize, back: Back) {
        let key = ItemKey {
            rule,
            dot,
            start: start as u32,
            end: end as u32,
        };
        let idx = match self.item_index.get(&key) {
            Some(&i) => i,
            None => {
                let i = self.items.len();
                self.items.push(Item {
                    key,
                    backs: Vec::new(),
                });
                self.item_index.insert(key, i);
                if (dot as usize) < self.g.elementary(rule).frontier.len() {
                    self.incomplete[start * (self.n + 1) + end].push(i);
                }
                i
            }
        };
        self.items[idx].backs.push(back);
        if dot as usize == self.g.elementary(rule).frontier.len() {
            self.complete(rule, start, end, back);
        }
    }

    /// Site-children sequences of a finished item.
    fn expand(&mut self, idx: usize) -> Rc<Vec<Vec<EntryId>>> {
        if let Some(v) = self.expansions.get(&idx) {
            return v.clone();
        }
        let mut out = Vec::new();
        for (prev, child) in self.items[idx].backs.clone() {
            let prefixes = match prev {
                Some(p) => self.expand(p),
                None => Rc::new(vec![Vec::new()]),
            };
            for prefix in prefixes.iter() {
                let mut seq = prefix.clone();
                seq.extend(child);
                out.push(seq);
            }
        }
        let out = Rc::new(out);
        self.expansions.insert(idx, out.clone());
        out
    }

    fn complete(&mut self, rule: ElementaryId, start: usize, end: usize, back: Back) {
        let (prev, child) = back;
        let prefixes = match prev {
            Some(p) => self.expand(p),
            None => Rc::new(vec![Vec::new()]),
        };
        let label = self.g.elementary(rule).root().clone();
        let entry = match self.entry_index.get(&(start, end, label.clone())) {
            Some(&e) => e,
            None => {
                let e = EntryId(self.entries.len() as u32);
                self.entries.push(Entry {
                    start,
                    end,
                    label: label.clone(),
                    edges: Vec::new(),
                });
                self.entry_index.insert((start, end, label), e);
                self.fresh.push(e);
                e
            }
        };
        for prefix in prefixes.iter() {
            let mut site_children = prefix.clone();
            site_children.extend(child);
            let edge = ForestEdge {
                elementary: rule,
                site_children,
            };
            if self.edge_seen.insert((entry, edge.clone())) {
                self.entries[entry.index()].edges.push(edge);
            }
        }
    }

    /// Keeps entries reachable from the goal, in children-first order.
    fn finish(self, grammar: Arc<Stsg>) -> Result<DerivationForest, ParseError> {
        let goal = self
            .entry_index
            .get(&(0, self.n, grammar.start().clone()))
            .copied();
        let mut order = Vec::new();
        if let Some(goal) = goal {
            // 0 = unseen, 1 = on stack, 2 = done
            let mut state = vec![0u8; self.entries.len()];
            let children: Vec<Vec<EntryId>> = self
                .entries
                .iter()
                .map(|entry| {
                    entry
                        .edges
                        .iter()
                        .flat_map(|edge| edge.site_children.iter().copied())
                        .collect()
                })
                .collect();
            let mut stack: Vec<(EntryId, usize)> = vec![(goal, 0)];
            state[goal.index()] = 1;
            while let Some(top) = stack.last_mut() {
                let (e, next) = *top;
                match children[e.index()].get(next) {
                    Some(&c) => {
                        top.1 += 1;
                        match state[c.index()] {
                            0 => {
                                state[c.index()] = 1;
                                stack.push((c, 0));
                            }
                            1 => {
                                let entry = &self.entries[c.index()];
                                return Err(ParseError::UnaryCycle {
                                    label: entry.label.to_string(),
                                    start: entry.start,
                                    end: entry.end,
                                });
                            }
                            _ => {}
                        }
                    }
                    None => {
                        state[e.index()] = 2;
                        order.push(e);
                        stack.pop();
                    }
                }
            }
        }
        let mut renumber = vec![None; self.entries.len()];
        for (new, old) in order.iter().enumerate() {
            renumber[old.index()] = Some(EntryId(new as u32));
        }
        let mut entries = Vec::with_capacity(order.len());
        let mut index = HashMap::with_capacity(order.len());
        let mut old_entries: Vec<Option<Entry>> = self.entries.into_iter().map(Some).collect();
        for (new, old) in order.iter().enumerate() {
            let mut entry = old_entries[old.index()].take().expect("each entry once");
            for edge in &mut entry.edges {
                for c in &mut edge.site_children {
                    *c = renumber[c.index()].expect("child reachable");
                }
            }
            index.insert(
                (entry.start, entry.end, entry.label.clone()),
                EntryId(new as u32),
            );
            entries.push(entry);
        }
        Ok(DerivationForest {
            grammar,
            sentence: self.sentence.to_vec(),
            goal: goal.map(|g| renumber[g.index()].expect("goal kept")),
            entries,
            index,
        })
    }
}

/// Parses one sentence. Prefer [`Parser`] when parsing many sentences with
/// the same grammar.
pub fn build_forest(g: &Arc<Stsg>, sentence: &[Label]) -> Result<DerivationForest, ParseError> {
    Parser::new(g.clone()).parse(sentence)
}

/// Every derivation packed in the forest, with its exact probability.
/// Fails when there are more than `cap`.
pub fn unpack_forest(
    forest: &DerivationForest,
    cap: usize,
) -> Result<Vec<(Derivation, BigRational)>, EnumerateError> {
    let Some(goal) = forest.goal() else {
        return Ok(Vec::new());
    };
    if forest.derivation_count() > cap as u128 {
        return Err(EnumerateError::CapExceeded(cap));
    }
    let mut subs: Vec<Vec<Vec<ElementaryId>>> = Vec::with_capacity(forest.entries.len());
    for entry in &forest.entries {
        let mut here = Vec::new();
        for edge in &entry.edges {
            let mut partial: Vec<Vec<ElementaryId>> = vec![vec![edge.elementary]];
            for c in &edge.site_children {
                let options = &subs[c.index()];
                partial = partial
                    .iter()
                    .flat_map(|p| {
                        options.iter().map(move |o| {
                            let mut v = p.clone();
                            v.extend_from_slice(o);
                            v
                        })
                    })
                    .collect();
            }
            here.extend(partial);
        }
        subs.push(here);
    }
    let g = forest.grammar();
    Ok(subs
        .swap_remove(goal.index())
        .into_iter()
        .map(|steps| {
            let d = Derivation::new(steps);
            let p = g.derivation_probability(&d);
            (d, p)
        })
        .collect())
}
