//! Python module `dop`. Grammars are extracted from bracketed trees; their
//! derivation forests support exact and sampled disambiguation.

use std::sync::Arc;

use dop_core::disambiguation::{
    exact_parse_distribution, most_probable_parse_exact, ParseDistribution,
};
use dop_core::eval::{binarize, brackets_of, crosses, most_frequent_root, score};
use dop_core::prelude::*;
use dop_core::stsg::DEFAULT_ENUMERATION_CAP;
use dop_core::treebank::LabelKind;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn fraction<'py>(py: Python<'py>, r: &BigRational) -> PyResult<Bound<'py, PyAny>> {
    py.import("fractions")?
        .getattr("Fraction")?
        .call1((r.to_string(),))
}

/// A labelled ordered tree in bracketed notation.
#[pyclass(name = "Tree", module = "dop", frozen, eq, hash, skip_from_py_object)]
#[derive(Clone, PartialEq, Eq, Hash)]
struct PyTree {
    inner: Tree,
}

#[pymethods]
impl PyTree {
    #[new]
    fn new(text: &str) -> PyResult<Self> {
        parse_bracketed(text)
            .map(|inner| PyTree { inner })
            .map_err(value_error)
    }

    #[getter]
    fn label(&self) -> String {
        self.inner.label().to_string()
    }

    #[getter]
    fn children(&self) -> Vec<PyTree> {
        self.inner
            .children()
            .iter()
            .map(|c| PyTree { inner: c.clone() })
            .collect()
    }

    fn leaves(&self) -> Vec<String> {
        self.inner.leaves().iter().map(|l| l.to_string()).collect()
    }

    fn depth(&self) -> usize {
        self.inner.depth()
    }

    fn node_count(&self) -> usize {
        self.inner.node_count()
    }

    fn open_sites(&self) -> usize {
        self.inner.open_sites()
    }

    fn binarize(&self) -> PyTree {
        PyTree {
            inner: binarize(&self.inner),
        }
    }

    /// Spans of width at least two, over leaf positions.
    fn brackets(&self) -> Vec<(usize, usize)> {
        brackets_of(&self.inner).into_iter().collect()
    }

    /// Leftmost substitution of `other` into this tree.
    fn compose(&self, other: &PyTree) -> PyResult<PyTree> {
        compose(&self.inner, &other.inner)
            .map(|inner| PyTree { inner })
            .map_err(value_error)
    }

    fn __str__(&self) -> String {
        self.inner.to_string()
    }

    fn __repr__(&self) -> String {
        format!("Tree({:?})", self.inner.to_string())
    }
}

fn nonterminal(name: &str) -> PyResult<Label> {
    Label::try_new(name, LabelKind::Nonterminal).map_err(value_error)
}

/// A stochastic tree-substitution grammar.
#[pyclass(name = "Grammar", module = "dop", frozen)]
struct PyGrammar {
    inner: Arc<Stsg>,
    parser: Parser,
}

impl PyGrammar {
    fn wrap(g: Stsg) -> Self {
        let inner = Arc::new(g);
        PyGrammar {
            parser: Parser::new(inner.clone()),
            inner,
        }
    }
}

#[pymethods]
impl PyGrammar {
    /// Extracts every fragment of the bracketed trees in `lines`, subject to
    /// the filter arguments, and normalizes counts per root label.
    #[staticmethod]
    #[pyo3(signature = (lines, *, start=None, max_depth=None, max_sites=None, roots=None, min_count=1, hapax_min_depth=None))]
    #[allow(clippy::too_many_arguments)]
    fn from_treebank(
        lines: Vec<String>,
        start: Option<&str>,
        max_depth: Option<usize>,
        max_sites: Option<usize>,
        roots: Option<Vec<String>>,
        min_count: u64,
        hapax_min_depth: Option<usize>,
    ) -> PyResult<Self> {
        let corpus = Corpus::from_lines(&lines).map_err(value_error)?;
        let mut filter = FragmentFilter::default().with_min_count(min_count);
        if let Some(d) = max_depth {
            filter = filter.with_max_depth(d);
        }
        if let Some(s) = max_sites {
            filter = filter.with_max_sites(s);
        }
        if let Some(r) = &roots {
            filter = filter.with_roots(r.iter().map(String::as_str));
        }
        if let Some(h) = hapax_min_depth {
            filter = filter.with_hapax_min_depth(h);
        }
        let start = match start {
            Some(s) => nonterminal(s)?,
            None => most_frequent_root(&corpus).ok_or_else(|| value_error("empty treebank"))?,
        };
        let bag = corpus_fragments(&corpus, &filter).map_err(value_error)?;
        project_stsg(&bag, &start)
            .map(Self::wrap)
            .map_err(value_error)
    }

    #[staticmethod]
    fn from_tsv(text: &str) -> PyResult<Self> {
        Stsg::from_tsv(text).map(Self::wrap).map_err(value_error)
    }

    fn to_tsv(&self) -> String {
        self.inner.to_tsv()
    }

    #[getter]
    fn start(&self) -> String {
        self.inner.start().to_string()
    }

    fn root_totals(&self) -> Vec<(String, u64)> {
        self.inner
            .root_totals()
            .iter()
            .map(|(l, n)| (l.to_string(), *n))
            .collect()
    }

    /// `(tree, count, probability)` for every elementary tree.
    fn elementary_trees<'py>(
        &self,
        py: Python<'py>,
    ) -> PyResult<Vec<(PyTree, u64, Bound<'py, PyAny>)>> {
        self.inner
            .iter()
            .map(|(_, e)| {
                Ok((
                    PyTree {
                        inner: e.tree.clone(),
                    },
                    e.count,
                    fraction(py, &e.probability)?,
                ))
            })
            .collect()
    }

    fn probability<'py>(
        &self,
        py: Python<'py>,
        tree: &PyTree,
    ) -> PyResult<Option<Bound<'py, PyAny>>> {
        self.inner
            .probability_of(&tree.inner)
            .map(|p| fraction(py, p))
            .transpose()
    }

    /// Probability of the derivation given as a sequence of elementary trees.
    fn derivation_probability<'py>(
        &self,
        py: Python<'py>,
        steps: Vec<PyRef<'py, PyTree>>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let steps: Vec<Tree> = steps.iter().map(|t| t.inner.clone()).collect();
        let p = self
            .inner
            .derivation_probability_of_trees(&steps)
            .map_err(value_error)?;
        fraction(py, &p)
    }

    /// Exact probability of a full parse tree: the sum over its derivations.
    fn parse_probability<'py>(
        &self,
        py: Python<'py>,
        tree: &PyTree,
    ) -> PyResult<Bound<'py, PyAny>> {
        fraction(
            py,
            &dop_core::stsg::exact_parse_probability(&self.inner, &tree.inner),
        )
    }

    /// Builds the derivation forest of a whitespace-separated sentence.
    fn parse(&self, sentence: &str) -> PyResult<PyForest> {
        self.parser
            .parse(&tokens(sentence))
            .map(|inner| PyForest { inner })
            .map_err(value_error)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Packed derivations of one sentence.
#[pyclass(name = "Forest", module = "dop", frozen)]
struct PyForest {
    inner: DerivationForest,
}

#[pymethods]
impl PyForest {
    fn has_parse(&self) -> bool {
        self.inner.has_parse()
    }

    fn derivation_count(&self) -> u128 {
        self.inner.derivation_count()
    }

    /// Total probability of the sentence.
    fn inside<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        fraction(
            py,
            &compute_inside_exact(&self.inner).goal_mass(&self.inner),
        )
    }

    /// Tree of the most probable derivation with that derivation's probability.
    fn most_probable_derivation<'py>(
        &self,
        py: Python<'py>,
    ) -> PyResult<(PyTree, Vec<PyTree>, Bound<'py, PyAny>)> {
        let (d, p) = most_probable_derivation(&self.inner).map_err(value_error)?;
        let g = self.inner.grammar();
        let tree = g.derive(&d).map_err(value_error)?;
        let steps = d
            .steps
            .iter()
            .map(|id| PyTree {
                inner: g.elementary(*id).tree.clone(),
            })
            .collect();
        Ok((PyTree { inner: tree }, steps, fraction(py, &p)?))
    }

    #[pyo3(signature = (cap=DEFAULT_ENUMERATION_CAP))]
    fn most_probable_parse<'py>(
        &self,
        py: Python<'py>,
        cap: usize,
    ) -> PyResult<(PyTree, Bound<'py, PyAny>)> {
        let (t, p) = most_probable_parse_exact(&self.inner, cap).map_err(value_error)?;
        Ok((PyTree { inner: t }, fraction(py, &p)?))
    }

    /// Every parse with its exact probability, most probable first.
    #[pyo3(signature = (cap=DEFAULT_ENUMERATION_CAP))]
    fn parses<'py>(
        &self,
        py: Python<'py>,
        cap: usize,
    ) -> PyResult<Vec<(PyTree, Bound<'py, PyAny>)>> {
        exact_parse_distribution(&self.inner, cap)
            .map_err(value_error)?
            .into_iter()
            .map(|(t, p)| Ok((PyTree { inner: t }, fraction(py, &p)?)))
            .collect()
    }

    /// Every derivation as a list of elementary trees, with its probability.
    #[pyo3(signature = (cap=DEFAULT_ENUMERATION_CAP))]
    fn derivations<'py>(
        &self,
        py: Python<'py>,
        cap: usize,
    ) -> PyResult<Vec<(Vec<PyTree>, Bound<'py, PyAny>)>> {
        let g = self.inner.grammar();
        unpack_forest(&self.inner, cap)
            .map_err(value_error)?
            .into_iter()
            .map(|(d, p)| {
                let steps = d
                    .steps
                    .iter()
                    .map(|id| PyTree {
                        inner: g.elementary(*id).tree.clone(),
                    })
                    .collect();
                Ok((steps, fraction(py, &p)?))
            })
            .collect()
    }

    /// Samples derivations and tallies their parses. Give exactly one of
    /// `samples` or `sigma`.
    #[pyo3(signature = (*, seed, samples=None, sigma=None, bottom_up=false))]
    fn sample(
        &self,
        seed: u64,
        samples: Option<usize>,
        sigma: Option<f64>,
        bottom_up: bool,
    ) -> PyResult<PyDistribution> {
        let size = match (samples, sigma) {
            (Some(n), None) => SampleSize::Count(n),
            (None, Some(s)) => SampleSize::Sigma(s),
            _ => return Err(value_error("give exactly one of samples or sigma")),
        };
        let scheme = if bottom_up {
            SamplingScheme::BottomUpElimination
        } else {
            SamplingScheme::TopDown
        };
        let masses = compute_inside(&self.inner);
        estimate_parse_distribution(&self.inner, &masses, size, seed, scheme)
            .map(|inner| PyDistribution { inner })
            .map_err(value_error)
    }

    fn dump(&self) -> String {
        self.inner.dump()
    }
}

/// Parse frequencies over sampled derivations.
#[pyclass(name = "ParseDistribution", module = "dop", frozen)]
struct PyDistribution {
    inner: ParseDistribution,
}

#[pymethods]
impl PyDistribution {
    #[getter]
    fn samples(&self) -> usize {
        self.inner.samples
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    fn sigma_bound(&self) -> f64 {
        self.inner.sigma_bound()
    }

    /// `(parse, count)`, most frequent first.
    fn counts(&self) -> Vec<(PyTree, u64)> {
        self.inner
            .parses
            .iter()
            .map(|(t, n)| (PyTree { inner: t.clone() }, *n))
            .collect()
    }

    fn estimate(&self, tree: &PyTree) -> f64 {
        self.inner.estimate(&tree.inner)
    }

    /// Parses whose estimate lies within `tie_width` of the best.
    #[pyo3(signature = (tie_width=0.0))]
    fn top(&self, tie_width: f64) -> Vec<PyTree> {
        select_top_parses(&self.inner, tie_width)
            .into_iter()
            .map(|inner| PyTree { inner })
            .collect()
    }

    fn to_tsv(&self) -> String {
        self.inner.to_tsv()
    }
}

/// Accuracy percentages against gold trees: `(parse, sentence, bracketing, coverage)`.
#[pyfunction]
#[pyo3(name = "score")]
fn py_score(
    candidates: Vec<Option<PyRef<'_, PyTree>>>,
    golds: Vec<PyRef<'_, PyTree>>,
) -> PyResult<(f64, f64, f64, f64)> {
    let c: Vec<Option<Tree>> = candidates
        .iter()
        .map(|t| t.as_ref().map(|t| t.inner.clone()))
        .collect();
    let g: Vec<Tree> = golds.iter().map(|t| t.inner.clone()).collect();
    let r = score(&c, &g).map_err(value_error)?;
    Ok((
        r.parse_accuracy,
        r.sentence_accuracy,
        r.bracketing_accuracy,
        r.coverage,
    ))
}

#[pyfunction]
#[pyo3(name = "crosses")]
fn py_crosses(a: (usize, usize), b: (usize, usize)) -> bool {
    crosses(a, b)
}

/// Number of samples that bounds every estimate's standard error by `sigma`.
#[pyfunction]
fn sample_size(sigma: f64) -> PyResult<usize> {
    SampleSize::Sigma(sigma).resolve().map_err(value_error)
}

/// Upper bound on the probability that sampling picks a wrong most probable parse.
#[pyfunction]
#[pyo3(name = "mc_error_bound")]
fn py_mc_error_bound(probabilities: Vec<f64>, samples: u64) -> f64 {
    mc_error_bound(&probabilities, samples)
}

#[pymodule]
fn dop(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTree>()?;
    m.add_class::<PyGrammar>()?;
    m.add_class::<PyForest>()?;
    m.add_class::<PyDistribution>()?;
    m.add_function(wrap_pyfunction!(py_score, m)?)?;
    m.add_function(wrap_pyfunction!(py_crosses, m)?)?;
    m.add_function(wrap_pyfunction!(sample_size, m)?)?;
    m.add_function(wrap_pyfunction!(py_mc_error_bound, m)?)?;
    Ok(())
}
