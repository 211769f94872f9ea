//! Probability representations used by forest algorithms.
//!
//! Chart computations run in log space; the same code runs over exact
//! rationals when a test needs equality rather than closeness.

use std::cmp::Ordering;

use num_rational::BigRational;
use num_traits::{One, Zero};

use crate::stsg::Elementary;

pub trait Weight: Clone + std::fmt::Debug {
    fn zero() -> Self;
    fn one() -> Self;
    fn of(e: &Elementary) -> Self;
    fn plus(&self, other: &Self) -> Self;
    fn times(&self, other: &Self) -> Self;
    fn compare(&self, other: &Self) -> Ordering;
    fn is_zero(&self) -> bool;
    /// Whether two values should count as a tie for deterministic tie-breaking.
    fn ties(&self, other: &Self) -> bool;
}

impl Weight for BigRational {
    fn zero() -> Self {
        Zero::zero()
    }

    fn one() -> Self {
        One::one()
    }

    fn of(e: &Elementary) -> Self {
        e.probability.clone()
    }

    fn plus(&self, other: &Self) -> Self {
        self + other
    }

    fn times(&self, other: &Self) -> Self {
        self * other
    }

    fn compare(&self, other: &Self) -> Ordering {
        self.cmp(other)
    }

    fn is_zero(&self) -> bool {
        Zero::is_zero(self)
    }

    fn ties(&self, other: &Self) -> bool {
        self == other
    }
}

/// Natural-log probability. `-inf` is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogProb(pub f64);

/// Relative tolerance under which two log-space scores are treated as equal.
pub const LOG_TIE_TOLERANCE: f64 = 1e-12;

impl LogProb {
    pub fn prob(self) -> f64 {
        self.0.exp()
    }
}

impl Weight for LogProb {
    fn zero() -> Self {
        LogProb(f64::NEG_INFINITY)
    }

    fn one() -> Self {
        LogProb(0.0)
    }

    fn of(e: &Elementary) -> Self {
        LogProb(e.log_prob)
    }

    fn plus(&self, other: &Self) -> Self {
        let (hi, lo) = if self.0 >= other.0 {
            (self.0, other.0)
        } else {
            (other.0, self.0)
        };
        if lo == f64::NEG_INFINITY {
            return LogProb(hi);
        }
        LogProb(hi + (lo - hi).exp().ln_1p())
    }

    fn times(&self, other: &Self) -> Self {
        LogProb(self.0 + other.0)
    }

    fn compare(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }

    fn is_zero(&self) -> bool {
        self.0 == f64::NEG_INFINITY
    }

    fn ties(&self, other: &Self) -> bool {
        if self.0 == other.0 {
            return true;
        }
        let scale = self.0.abs().max(other.0.abs()).max(1.0);
        (self.0 - other.0).abs() <= LOG_TIE_TOLERANCE * scale
    }
}
