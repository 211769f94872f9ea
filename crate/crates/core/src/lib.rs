//! Data-oriented parsing over labelled phrase-structure trees.
//!
//! Every subtree of every corpus tree becomes an elementary tree of a
//! stochastic tree-substitution grammar. New sentences are parsed into
//! packed derivation forests. An analysis is then picked either by the most
//! probable derivation or by Monte Carlo estimation of the parse
//! distribution.
//!
//! ```
//! use dop_core::prelude::*;
//!
//! let corpus = Corpus::from_lines([
//!     "(S (NP John) (VP (V likes) (NP Mary)))",
//!     "(S (NP Peter) (VP (V hates) (NP Susan)))",
//! ])
//! .unwrap();
//! let bag = corpus_fragments(&corpus, &FragmentFilter::default()).unwrap();
//! let grammar = std::sync::Arc::new(project_stsg(&bag, &Label::nonterminal("S")).unwrap());
//! let forest = build_forest(&grammar, &tokens("Mary likes Susan")).unwrap();
//! let (derivation, _p) = most_probable_derivation(&forest).unwrap();
//! let tree = grammar.derive(&derivation).unwrap();
//! assert_eq!(tree.to_string(), "(S (NP Mary) (VP (V likes) (NP Susan)))");
//! ```

pub mod chart;
pub mod disambiguation;
pub mod eval;
pub mod fragments;
pub mod stsg;
pub mod treebank;
pub mod weight;

pub use num_rational::BigRational;

pub mod prelude {
    pub use crate::chart::{build_forest, unpack_forest, DerivationForest, ForestEdge, Parser};
    pub use crate::disambiguation::{
        compute_inside, compute_inside_exact, estimate_parse_distribution, mc_error_bound,
        most_probable_derivation, sample_derivation, select_top_parses, ParseDistribution,
        SampleSize, SamplingScheme,
    };
    pub use crate::eval::{
        binarize, brackets_of, crosses, run_experiment, score, AccuracyReport, Mode,
    };
    pub use crate::fragments::{
        corpus_fragments, extract_subtrees, project_stsg, FragmentBag, FragmentFilter,
    };
    pub use crate::stsg::{compose, Derivation, ElementaryId, Stsg};
    pub use crate::treebank::{parse_bracketed, tokens, Corpus, Label, Tree};
    pub use crate::BigRational;
}
