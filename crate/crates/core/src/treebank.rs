//! Labelled phrase-structure trees and their bracketed text format.
//! A [`Corpus`] is a bag of such trees.
//!
//! Whether a label is terminal or nonterminal is decided by position in the
//! bracketing: a bare token is a terminal word, a parenthesised label is a
//! nonterminal. `(NP)` with no children is an open substitution site.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LabelKind {
    Nonterminal,
    Terminal,
}

/// A node label. Equality is case-sensitive and includes the kind, so the
/// word `NP` and the category `NP` are different labels.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Label {
    text: Arc<str>,
    kind: LabelKind,
}

impl Label {
    pub fn try_new(text: &str, kind: LabelKind) -> Result<Self, TreeError> {
        if text.is_empty() {
            return Err(TreeError::EmptyLabel { offset: 0 });
        }
        if let Some((offset, _)) = text
            .char_indices()
            .find(|&(_, c)| c.is_whitespace() || c == '(' || c == ')')
        {
            return Err(TreeError::InvalidLabel {
                label: text.to_string(),
                offset,
            });
        }
        Ok(Label {
            text: Arc::from(text),
            kind,
        })
    }

    /// Panics if `text` is not a valid label; intended for literals.
    pub fn nonterminal(text: &str) -> Self {
        Self::try_new(text, LabelKind::Nonterminal).expect("invalid nonterminal label")
    }

    /// Panics if `text` is not a valid label; intended for literals.
    pub fn terminal(text: &str) -> Self {
        Self::try_new(text, LabelKind::Terminal).expect("invalid terminal label")
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn kind(&self) -> LabelKind {
        self.kind
    }

    pub fn is_terminal(&self) -> bool {
        self.kind == LabelKind::Terminal
    }

    pub fn is_nonterminal(&self) -> bool {
        self.kind == LabelKind::Nonterminal
    }
}

impl fmt::Debug for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            LabelKind::Nonterminal => write!(f, "{}", self.text),
            LabelKind::Terminal => write!(f, "{:?}", &*self.text),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

/// Splits a whitespace-separated sentence into terminal labels.
pub fn tokens(sentence: &str) -> Vec<Label> {
    sentence.split_whitespace().map(Label::terminal).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TreeError {
    #[error("unbalanced parentheses at byte {offset}")]
    UnbalancedParens { offset: usize },
    #[error("empty label at byte {offset}")]
    EmptyLabel { offset: usize },
    #[error("terminal label {label:?} on an internal node (byte {offset:?})")]
    InternalNodeWithTerminalLabel {
        label: String,
        offset: Option<usize>,
    },
    #[error("invalid character in label {label:?} at byte {offset}")]
    InvalidLabel { label: String, offset: usize },
    #[error("unexpected input after tree at byte {offset}")]
    TrailingInput { offset: usize },
    #[error("empty input")]
    EmptyInput,
}

/// A labelled ordered tree. Internal nodes always carry nonterminal labels;
/// leaves are terminal words or nonterminal substitution sites.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Tree {
    label: Label,
    children: Vec<Tree>,
}

impl Tree {
    pub fn leaf(label: Label) -> Self {
        Tree {
            label,
            children: Vec::new(),
        }
    }

    pub fn internal(label: Label, children: Vec<Tree>) -> Result<Self, TreeError> {
        if label.is_terminal() && !children.is_empty() {
            return Err(TreeError::InternalNodeWithTerminalLabel {
                label: label.to_string(),
                offset: None,
            });
        }
        Ok(Tree { label, children })
    }

    /// Shorthand for `(label word)`.
    pub fn preterminal(label: &str, word: &str) -> Self {
        Tree {
            label: Label::nonterminal(label),
            children: vec![Tree::leaf(Label::terminal(word))],
        }
    }

    pub fn label(&self) -> &Label {
        &self.label
    }

    pub fn children(&self) -> &[Tree] {
        &self.children
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// A nonterminal leaf, open for substitution.
    pub fn is_open_site(&self) -> bool {
        self.children.is_empty() && self.label.is_nonterminal()
    }

    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(Tree::node_count).sum::<usize>()
    }

    pub fn leaf_count(&self) -> usize {
        if self.is_leaf() {
            1
        } else {
            self.children.iter().map(Tree::leaf_count).sum()
        }
    }

    /// Edges on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        self.children
            .iter()
            .map(|c| c.depth() + 1)
            .max()
            .unwrap_or(0)
    }

    /// Number of nonterminal leaves.
    pub fn open_sites(&self) -> usize {
        if self.is_leaf() {
            usize::from(self.label.is_nonterminal())
        } else {
            self.children.iter().map(Tree::open_sites).sum()
        }
    }

    pub fn is_lexicalized(&self) -> bool {
        self.open_sites() == 0
    }

    /// Left-to-right leaf labels, open sites included.
    pub fn leaves(&self) -> Vec<Label> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves(&self, out: &mut Vec<Label>) {
        if self.is_leaf() {
            out.push(self.label.clone());
        } else {
            for c in &self.children {
                c.collect_leaves(out);
            }
        }
    }

    /// Copy of `self` with `replacement` substituted at the leftmost open site, or `None`
    /// when there is no open site.
    pub(crate) fn replace_leftmost_site(&self, replacement: &Tree) -> Option<Tree> {
        fn go(node: &Tree, replacement: &Tree, done: &mut bool) -> Tree {
            if *done {
                return node.clone();
            }
            if node.is_open_site() {
                *done = true;
                return replacement.clone();
            }
            Tree {
                label: node.label.clone(),
                children: node
                    .children
                    .iter()
                    .map(|c| go(c, replacement, done))
                    .collect(),
            }
        }
        let mut done = false;
        let out = go(self, replacement, &mut done);
        done.then_some(out)
    }

    /// The leftmost nonterminal leaf, if any.
    pub fn leftmost_site(&self) -> Option<&Label> {
        if self.is_open_site() {
            return Some(&self.label);
        }
        self.children.iter().find_map(Tree::leftmost_site)
    }

    /// All nodes in pre-order.
    pub fn preorder(&self) -> Vec<&Tree> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(n) = stack.pop() {
            out.push(n);
            stack.extend(n.children.iter().rev());
        }
        out
    }

    pub fn map_labels(&self, f: &mut impl FnMut(&Label, bool) -> Label) -> Tree {
        Tree {
            label: f(&self.label, self.is_leaf()),
            children: self.children.iter().map(|c| c.map_labels(f)).collect(),
        }
    }

    fn write_bracketed(&self, out: &mut String) {
        if self.label.is_terminal() {
            out.push_str(self.label.as_str());
            return;
        }
        out.push('(');
        out.push_str(self.label.as_str());
        for c in &self.children {
            out.push(' ');
            c.write_bracketed(out);
        }
        out.push(')');
    }
}

/// Canonical single-space bracketed form.
pub fn serialize_tree(tree: &Tree) -> String {
    let mut s = String::new();
    tree.write_bracketed(&mut s);
    s
}

/// Yield: left-to-right leaf labels.
pub fn tree_yield(tree: &Tree) -> Vec<Label> {
    tree.leaves()
}

impl fmt::Display for Tree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize_tree(self))
    }
}

impl fmt::Debug for Tree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize_tree(self))
    }
}

impl PartialOrd for Tree {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Trees order by their canonical serialization.
impl Ord for Tree {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        if self == other {
            return std::cmp::Ordering::Equal;
        }
        serialize_tree(self).cmp(&serialize_tree(other))
    }
}

impl std::str::FromStr for Tree {
    type Err = TreeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_bracketed(s)
    }
}

struct BracketParser<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> BracketParser<'a> {
    fn skip_ws(&mut self) {
        let rest = &self.text[self.pos..];
        self.pos += rest.len() - rest.trim_start().len();
    }

    fn peek(&self) -> Option<u8> {
        self.text.as_bytes().get(self.pos).copied()
    }

    fn token(&mut self) -> &'a str {
        let start = self.pos;
        let rest = &self.text[start..];
        let len = rest
            .find(|c: char| c.is_whitespace() || c == '(' || c == ')')
            .unwrap_or(rest.len());
        self.pos += len;
        &self.text[start..start + len]
    }

    fn tree(&mut self) -> Result<Tree, TreeError> {
        self.skip_ws();
        match self.peek() {
            None => Err(TreeError::UnbalancedParens { offset: self.pos }),
            Some(b')') => Err(TreeError::UnbalancedParens { offset: self.pos }),
            Some(b'(') => {
                let open = self.pos;
                self.pos += 1;
                self.skip_ws();
                let label_at = self.pos;
                let text = self.token();
                if text.is_empty() {
                    return match self.peek() {
                        None => Err(TreeError::UnbalancedParens { offset: open }),
                        _ => Err(TreeError::EmptyLabel { offset: label_at }),
                    };
                }
                let label = Label::try_new(text, LabelKind::Nonterminal).map_err(|e| match e {
                    TreeError::InvalidLabel { label, offset } => TreeError::InvalidLabel {
                        label,
                        offset: label_at + offset,
                    },
                    other => other,
                })?;
                let mut children = Vec::new();
                loop {
                    self.skip_ws();
                    match self.peek() {
                        None => return Err(TreeError::UnbalancedParens { offset: open }),
                        Some(b')') => {
                            self.pos += 1;
                            break;
                        }
                        _ => children.push(self.tree()?),
                    }
                }
                Ok(Tree { label, children })
            }
            Some(_) => {
                let text = self.token();
                Ok(Tree::leaf(Label {
                    text: Arc::from(text),
                    kind: LabelKind::Terminal,
                }))
            }
        }
    }
}

/// Parses one tree in bracketed notation, e.g. `(S (NP John) (VP (V likes) (NP Mary)))`.
pub fn parse_bracketed(text: &str) -> Result<Tree, TreeError> {
    if text.trim().is_empty() {
        return Err(TreeError::EmptyInput);
    }
    let mut p = BracketParser { text, pos: 0 };
    let tree = p.tree()?;
    p.skip_ws();
    match p.peek() {
        None => Ok(tree),
        Some(b')') => Err(TreeError::UnbalancedParens { offset: p.pos }),
        Some(_) => Err(TreeError::TrailingInput { offset: p.pos }),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CorpusError {
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: TreeError,
    },
    #[error("line {line}: corpus trees must be fully lexicalized, found open site {site}")]
    RejectsOpenSites { line: usize, site: String },
}

/// A bag of fully lexicalized trees. Distinct shapes keep first-seen order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    entries: Vec<(Tree, u64)>,
}

impl Corpus {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one occurrence of `tree`.
    pub fn push(&mut self, tree: Tree) -> Result<(), CorpusError> {
        self.push_at(tree, 0)
    }

    fn push_at(&mut self, tree: Tree, line: usize) -> Result<(), CorpusError> {
        if let Some(site) = tree.preorder().into_iter().find(|n| n.is_open_site()) {
            return Err(CorpusError::RejectsOpenSites {
                line,
                site: site.label().to_string(),
            });
        }
        match self.entries.iter_mut().find(|(t, _)| *t == tree) {
            Some((_, n)) => *n += 1,
            None => self.entries.push((tree, 1)),
        }
        Ok(())
    }

    /// One bracketed tree per line; blank lines and `#` comments are skipped.
    /// Line numbers in errors are 1-based.
    pub fn from_lines<I, S>(lines: I) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut corpus = Corpus::new();
        let mut index: HashMap<Tree, usize> = HashMap::new();
        for (i, line) in lines.into_iter().enumerate() {
            let line = line.as_ref().trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let tree = parse_bracketed(line).map_err(|source| CorpusError::Parse {
                line: i + 1,
                source,
            })?;
            if let Some(site) = tree.preorder().into_iter().find(|n| n.is_open_site()) {
                return Err(CorpusError::RejectsOpenSites {
                    line: i + 1,
                    site: site.label().to_string(),
                });
            }
            match index.get(&tree) {
                Some(&k) => corpus.entries[k].1 += 1,
                None => {
                    index.insert(tree.clone(), corpus.entries.len());
                    corpus.entries.push((tree, 1));
                }
            }
        }
        Ok(corpus)
    }

    /// Distinct trees with their multiplicities.
    pub fn entries(&self) -> &[(Tree, u64)] {
        &self.entries
    }

    pub fn multiplicity(&self, tree: &Tree) -> u64 {
        self.entries
            .iter()
            .find(|(t, _)| t == tree)
            .map_or(0, |(_, n)| *n)
    }

    /// Total number of trees, counting duplicates.
    pub fn len(&self) -> u64 {
        self.entries.iter().map(|(_, n)| n).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Every occurrence, duplicates repeated.
    pub fn expanded(&self) -> Vec<Tree> {
        self.entries
            .iter()
            .flat_map(|(t, n)| std::iter::repeat_n(t.clone(), *n as usize))
            .collect()
    }

    pub fn from_trees(trees: impl IntoIterator<Item = Tree>) -> Result<Self, CorpusError> {
        let mut c = Corpus::new();
        for (i, t) in trees.into_iter().enumerate() {
            c.push_at(t, i + 1)?;
        }
        Ok(c)
    }
}
