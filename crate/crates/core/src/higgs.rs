//! Twisted Higgs fields and their metric brackets.
//!
//! A Higgs field on `O(a_1) ⊕ … ⊕ O(a_r)` twisted by `O(m)` is an
//! `r × r` matrix of polynomials; entry `(i, j)` maps the summand
//! `O(a_j)` into `O(a_i) ⊗ O(m)` and so has degree at most
//! `d_ij = a_i + m - a_j`. Entries with `d_ij < 0` must vanish.
//!
//! Evaluation happens in the weighted frame shared with [`crate::metric`]:
//! entry `(i, j)` of the pointwise matrix is
//! `Σ_q c_q t^{q/2} (1-t)^{(d_ij - q)/2} e^{iqθ}`, which is bounded.
//! Traces, eigenvalues, and adjoints with respect to a metric `P` read
//! exactly as in the chart frame, so the bracket and its damped
//! correction are simple pointwise matrix algebra.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::C64;
use crate::bundle::{BundleSpec, weighted_polynomial};
use crate::grid::{QuadGrid, ScalarField};
use crate::linalg;
use crate::metric::{EndoField, MetricField};
use crate::poly;
use crate::reduce::par_map;

#[derive(Debug, Error, PartialEq)]
pub enum HiggsError {
    #[error("expected {expected} entries for rank {rank}, got {got}")]
    EntryCountMismatch {
        rank: usize,
        expected: usize,
        got: usize,
    },
    #[error("entry ({row},{col}) has degree {got} but the twist allows at most {max}")]
    EntryDegreeTooHigh {
        row: usize,
        col: usize,
        got: usize,
        max: i64,
    },
    #[error("entry ({row},{col}) must vanish: its target degree {max} is negative")]
    ForbiddenEntry { row: usize, col: usize, max: i64 },
    #[error("damping parameter beta must lie in (0, 1/2], got {0}")]
    BetaOutOfRange(f64),
    #[error("coupling parameter alpha must be non-negative, got {0}")]
    AlphaNegative(f64),
    #[error("coupling strength tau must be non-negative, got {0}")]
    TauNegative(f64),
}

/// A Higgs field as a matrix of polynomial coefficient vectors, stored
/// row-major; entry `(i, j)` holds the coefficients of the polynomial
/// mapping summand `j` into summand `i` twisted by `O(m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HiggsSpec {
    rank: usize,
    entries: Vec<Vec<C64>>,
}

impl HiggsSpec {
    pub fn new(bundle: &BundleSpec, entries: Vec<Vec<C64>>) -> Result<Self, HiggsError> {
        let r = bundle.rank();
        if entries.len() != r * r {
            return Err(HiggsError::EntryCountMismatch {
                rank: r,
                expected: r * r,
                got: entries.len(),
            });
        }
        let degrees = bundle.degrees();
        let m = bundle.twist();
        let mut trimmed = Vec::with_capacity(r * r);
        for i in 0..r {
            for j in 0..r {
                let entry = poly::trimmed(&entries[i * r + j], 0.0);
                let max = degrees[i] + m - degrees[j];
                match poly::degree(&entry, 0.0) {
                    Some(_) if max < 0 => {
                        return Err(HiggsError::ForbiddenEntry {
                            row: i,
                            col: j,
                            max,
                        });
                    }
                    Some(d) if (d as i64) > max => {
                        return Err(HiggsError::EntryDegreeTooHigh {
                            row: i,
                            col: j,
                            got: d,
                            max,
                        });
                    }
                    _ => {}
                }
                trimmed.push(entry);
            }
        }
        Ok(Self {
            rank: r,
            entries: trimmed,
        })
    }

    /// The zero Higgs field.
    pub fn zero(bundle: &BundleSpec) -> Self {
        let r = bundle.rank();
        Self {
            rank: r,
            entries: vec![Vec::new(); r * r],
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn entry(&self, row: usize, col: usize) -> &[C64] {
        &self.entries[row * self.rank + col]
    }

    pub fn entries(&self) -> &[Vec<C64>] {
        &self.entries
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|e| e.is_empty())
    }

    /// Multiplies every entry by a constant, e.g. `√τ` when folding the
    /// coupling strength into the field.
    pub fn scaled(&self, factor: C64) -> Self {
        Self {
            rank: self.rank,
            entries: self
                .entries
                .iter()
                .map(|e| poly::scale(e, factor))
                .collect(),
        }
    }

    /// Evaluates the field on the grid in the weighted frame.
    pub fn evaluate(&self, bundle: &BundleSpec, grid: &QuadGrid) -> EndoField {
        let r = self.rank;
        let degrees = bundle.degrees().to_vec();
        let m = bundle.twist();
        let entries = self.entries.clone();
        EndoField::from_fn(grid, r, move |node| {
            DMatrix::from_fn(r, r, |i, j| {
                let entry = &entries[i * r + j];
                if entry.is_empty() {
                    C64::ZERO
                } else {
                    let d = (degrees[i] + m - degrees[j]) as usize;
                    weighted_polynomial(entry, d, node)
                }
            })
        })
    }
}

/// Coupling and damping parameters of the quantized moment map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantizationParams {
    pub tau: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl QuantizationParams {
    /// The canonical choice at level `k`: `α = 2(r-1)τ/k`,
    /// `β = 1/(2(r-1))`, so that `αβ = τ/k`.
    pub fn defaults(rank: usize, level: i64, tau: f64) -> Self {
        let r1 = (rank - 1) as f64;
        Self {
            tau,
            alpha: 2.0 * r1 * tau / level as f64,
            beta: 0.5 / r1,
        }
    }

    pub fn validate(&self) -> Result<(), HiggsError> {
        if !(self.beta > 0.0 && self.beta <= 0.5) {
            return Err(HiggsError::BetaOutOfRange(self.beta));
        }
        if self.alpha < 0.0 || !self.alpha.is_finite() {
            return Err(HiggsError::AlphaNegative(self.alpha));
        }
        if self.tau < 0.0 || !self.tau.is_finite() {
            return Err(HiggsError::TauNegative(self.tau));
        }
        Ok(())
    }
}

/// Pointwise adjoint `φ^{*P} = P⁻¹ φ† P` of an evaluated Higgs field
/// with respect to a metric.
pub fn metric_adjoint(phi: &EndoField, h: &MetricField) -> EndoField {
    let values = par_map(phi.len(), |q| {
        let p = h.value(q);
        let p_inv = p
            .clone()
            .try_inverse()
            .expect("metric is positive definite");
        p_inv * phi.value(q).adjoint() * p
    });
    EndoField::from_matrices(phi.rank(), values)
}

/// Pointwise bracket `[φ, φ^{*P}] = φ φ^{*P} - φ^{*P} φ`. It is
/// traceless, self-adjoint for `h`, and invariant under conformal
/// rescaling of the metric.
pub fn bracket(phi: &EndoField, h: &MetricField) -> EndoField {
    let values = par_map(phi.len(), |q| {
        let p = h.value(q);
        let p_inv = p
            .clone()
            .try_inverse()
            .expect("metric is positive definite");
        let f = phi.value(q);
        let adj = p_inv * f.adjoint() * p;
        f * &adj - adj * f
    });
    EndoField::from_matrices(phi.rank(), values)
}

/// Pointwise squared norm `|φ|²_h = tr(φ P⁻¹ φ† P)`, a non-negative
/// scalar field.
pub fn norm_squared(phi: &EndoField, h: &MetricField) -> ScalarField {
    let values = par_map(phi.len(), |q| {
        let p = h.value(q);
        let p_inv = p
            .clone()
            .try_inverse()
            .expect("metric is positive definite");
        let f = phi.value(q);
        C64::new((f * p_inv * f.adjoint() * p).trace().re, 0.0)
    });
    ScalarField::from_values(values)
}

/// The damped bracket correction
/// `c = (αβ / (1 + α|φ|²_h)) [φ, φ^{*h}]`.
///
/// Its eigenvalues are confined to `(-2β, 2β)`, so with `β ≤ 1/2` the
/// corrected metric `P(Id - c)` stays positive definite.
pub fn bracket_correction(
    phi: &EndoField,
    h: &MetricField,
    params: QuantizationParams,
) -> EndoField {
    let ab = params.alpha * params.beta;
    let values = par_map(phi.len(), |q| {
        let p = h.value(q);
        let p_inv = p
            .clone()
            .try_inverse()
            .expect("metric is positive definite");
        let f = phi.value(q);
        let adj = p_inv * f.adjoint() * p;
        let norm_sq = (f * &adj).trace().re;
        let damp = ab / (1.0 + params.alpha * norm_sq);
        (f * &adj - &adj * f).scale(damp)
    });
    EndoField::from_matrices(phi.rank(), values)
}

/// Applies the correction to a metric: `P ↦ P (Id - c)`. The product is
/// hermitian because `c` is self-adjoint for `P`, and positive definite
/// for admissible damping.
pub fn corrected_metric(h: &MetricField, correction: &EndoField) -> MetricField {
    let values = par_map(h.len(), |q| {
        let r = correction.rank();
        let m = h.value(q) * (DMatrix::identity(r, r) - correction.value(q));
        linalg::hermitize(&m)
    });
    MetricField::from_matrices_unchecked(h.rank(), values)
}
