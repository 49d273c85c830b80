//! Invariant subbundles, one-parameter-subgroup weights, and the
//! rank-2 stability verdict.
//!
//! A line subbundle `O(ℓ) ⊂ ⊕O(a_i)` is a tuple of polynomials
//! `q_i` with `deg q_i ≤ a_i - ℓ` and no common zero, including the
//! point at infinity; a common zero would mean the map saturates to a
//! line of higher degree. The subbundle destabilizes when its
//! normalized section count `ℓ + k + 1` beats the bundle average
//! `N/r`, and the associated one-parameter subgroup measures this
//! through two weights:
//!
//! * `w_fs = (N/r - N') · V·r/(N - N')` for `N' = ℓ + k + 1`, the
//!   geometric part, negative exactly when the subbundle destabilizes;
//! * `w_phi`, a damped norm of the off-diagonal block `π φ (Id - π)`
//!   of the Higgs field, which vanishes when the field splits.
//!
//! The numeric weight curve evaluates the same pairing without closed
//! forms: rescale an adapted orthonormal basis by `(e^t, e^{-νt})`,
//! feed the frame through the balance step operator, and pair the
//! moment map against the subgroup generator. Its large-`t` limit
//! reproduces `w_fs` on zero-field cases, which fixes the sign and
//! normalization conventions once and for all.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::C64;
use crate::balance::t_step;
use crate::bergman::BergmanError;
use crate::bundle::{BundleError, BundleSpec, weighted_polynomial};
use crate::grid::{GridError, QuadGrid, SPHERE_VOLUME, ScalarField, integrate};
use crate::higgs::{HiggsError, HiggsSpec, QuantizationParams, norm_squared};
use crate::linalg;
use crate::metric::MetricField;
use crate::poly;

/// Relative tolerance for all polynomial coefficient tests.
const COEFF_TOL: f64 = 1e-10;
/// Condition estimate of the rescaled Gram beyond which the weight
/// curve is truncated.
const CURVE_CONDITION_LIMIT: f64 = 1e12;
/// Relative residual below which a completion candidate is considered
/// linearly dependent during adapted-basis Gram-Schmidt.
const COMPLETION_CUTOFF: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum StabilityError {
    #[error("embedding has {got} components, bundle has rank {want}")]
    WrongComponentCount { got: usize, want: usize },
    #[error("component {index} has degree {got}, embedding into O({max}) allows {max}")]
    ComponentDegreeTooHigh { index: usize, got: usize, max: i64 },
    #[error("embedding components are all zero")]
    ZeroEmbedding,
    #[error("embedding components share a zero; the subbundle saturates to higher degree")]
    CommonZero,
    #[error("embedding components all drop degree; the subbundle saturates at infinity")]
    CommonZeroAtInfinity,
    #[error("subbundle sections ({sub}) must number between 1 and the full count {total}")]
    DegenerateSubspace { sub: i64, total: usize },
    #[error("adapted basis completion failed: candidates are numerically dependent")]
    AdaptedBasisDegenerate,
    #[error("invariant subbundle search is implemented for rank 2, got rank {0}")]
    RankUnsupported(usize),
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error(transparent)]
    Higgs(#[from] HiggsError),
    #[error(transparent)]
    Bergman(#[from] BergmanError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// A line subbundle `O(ℓ) → ⊕O(a_i)` given by polynomial components.
#[derive(Debug, Clone, PartialEq)]
pub struct SubbundleSpec {
    degree: i64,
    components: Vec<Vec<C64>>,
}

impl SubbundleSpec {
    pub fn new(
        bundle: &BundleSpec,
        degree: i64,
        components: Vec<Vec<C64>>,
    ) -> Result<Self, StabilityError> {
        let r = bundle.rank();
        if components.len() != r {
            return Err(StabilityError::WrongComponentCount {
                got: components.len(),
                want: r,
            });
        }
        let scale = components
            .iter()
            .map(|q| poly::max_coeff(q))
            .fold(0.0, f64::max);
        let tol = COEFF_TOL * (1.0 + scale);
        let components: Vec<Vec<C64>> = components.iter().map(|q| poly::trimmed(q, tol)).collect();

        let mut attains_top = false;
        let mut nonzero = Vec::new();
        for (i, q) in components.iter().enumerate() {
            let Some(deg) = poly::degree(q, tol) else {
                continue;
            };
            let max = bundle.degrees()[i] - degree;
            if max < 0 || deg as i64 > max {
                return Err(StabilityError::ComponentDegreeTooHigh {
                    index: i,
                    got: deg,
                    max,
                });
            }
            if deg as i64 == max {
                attains_top = true;
            }
            nonzero.push(q.clone());
        }
        if nonzero.is_empty() {
            return Err(StabilityError::ZeroEmbedding);
        }
        let mut g = nonzero[0].clone();
        for q in &nonzero[1..] {
            g = poly::gcd(&g, q, tol);
        }
        if poly::degree(&g, tol).unwrap_or(0) > 0 {
            return Err(StabilityError::CommonZero);
        }
        if !attains_top {
            return Err(StabilityError::CommonZeroAtInfinity);
        }
        Ok(Self { degree, components })
    }

    pub fn degree(&self) -> i64 {
        self.degree
    }

    pub fn components(&self) -> &[Vec<C64>] {
        &self.components
    }

    /// Section count of the twisted subbundle, `h⁰(O(ℓ + k))`.
    pub fn section_count(&self, level: i64) -> i64 {
        self.degree + level + 1
    }

    /// The image line in the weighted frame at every node, up to a
    /// positive scalar: component `i` is the weighted evaluation of
    /// `q_i` as a section of `O(a_i - ℓ)`.
    fn line_values(&self, bundle: &BundleSpec, grid: &QuadGrid) -> Vec<DVector<C64>> {
        let r = bundle.rank();
        (0..grid.node_count())
            .map(|n| {
                let node = grid.node(n);
                DVector::from_fn(r, |i, _| {
                    if self.components[i].is_empty() {
                        C64::ZERO
                    } else {
                        let n_i = (bundle.degrees()[i] - self.degree) as usize;
                        weighted_polynomial(&self.components[i], n_i, node)
                    }
                })
            })
            .collect()
    }

    /// Coefficients of the subbundle sections `z^j·q` in the monomial
    /// basis at `level`: an `N × N'` matrix, one column per section.
    fn section_matrix(
        &self,
        bundle: &BundleSpec,
        level: i64,
    ) -> Result<DMatrix<C64>, StabilityError> {
        let total = bundle.section_count(level)?;
        let nsub = self.section_count(level);
        if nsub <= 0 || (nsub as usize) >= total {
            return Err(StabilityError::DegenerateSubspace { sub: nsub, total });
        }
        let mut offsets = Vec::with_capacity(bundle.rank());
        let mut acc = 0usize;
        for &a in bundle.degrees() {
            offsets.push(acc);
            acc += (a + level + 1) as usize;
        }
        let mut m = DMatrix::<C64>::zeros(total, nsub as usize);
        for j in 0..nsub as usize {
            for (i, q) in self.components.iter().enumerate() {
                for (d, &coeff) in q.iter().enumerate() {
                    m[(offsets[i] + j + d, j)] = coeff;
                }
            }
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvarianceReport {
    pub invariant: bool,
    /// Largest wedge coefficient of `q ∧ φq` relative to the input
    /// coefficient scale.
    pub residual: f64,
}

/// Tests whether the Higgs field maps the subbundle into itself (up to
/// the twist), by checking that `φq` is proportional to `q`: all the
/// wedges `q_i (φq)_j - q_j (φq)_i` must vanish identically.
pub fn invariance_check(
    sub: &SubbundleSpec,
    phi: &HiggsSpec,
    bundle: &BundleSpec,
) -> InvarianceReport {
    let r = bundle.rank();
    let image: Vec<Vec<C64>> = (0..r)
        .map(|i| {
            let mut acc = Vec::new();
            for j in 0..r {
                acc = poly::add(&acc, &poly::mul(phi.entry(i, j), &sub.components[j]));
            }
            acc
        })
        .collect();
    let scale = sub
        .components
        .iter()
        .map(|q| poly::max_coeff(q))
        .fold(0.0, f64::max)
        * (1.0
            + phi
                .entries()
                .iter()
                .map(|e| poly::max_coeff(e))
                .fold(0.0, f64::max));
    let mut worst = 0.0_f64;
    for i in 0..r {
        for j in (i + 1)..r {
            let wedge = poly::sub(
                &poly::mul(&sub.components[i], &image[j]),
                &poly::mul(&sub.components[j], &image[i]),
            );
            worst = worst.max(poly::max_coeff(&wedge));
        }
    }
    let residual = worst / scale.max(f64::MIN_POSITIVE);
    InvarianceReport {
        invariant: residual <= COEFF_TOL,
        residual,
    }
}

/// Closed-form one-parameter-subgroup weight of a subbundle.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightReport {
    /// Generator weight on the complement block, `N'/(N - N')`.
    pub nu: f64,
    pub sections_sub: i64,
    pub sections_total: usize,
    pub w_fs: f64,
    /// Damped off-block norm term, with the damping factor inside the
    /// squared norm.
    pub w_phi: f64,
    /// Same term with the damping factor outside the square.
    pub w_phi_alt: f64,
    pub total: f64,
    pub invariant: bool,
    pub invariance_residual: f64,
    /// Undamped L² norms of `π φ (Id-π)` and `(Id-π) φ π`.
    pub block_norms: (f64, f64),
}

pub fn closed_form_weight(
    sub: &SubbundleSpec,
    bundle: &BundleSpec,
    phi_spec: &HiggsSpec,
    h: &MetricField,
    params: QuantizationParams,
    level: i64,
    grid: &QuadGrid,
) -> Result<WeightReport, StabilityError> {
    params.validate()?;
    let r = bundle.rank();
    let total_sections = bundle.section_count(level)?;
    let nsub = sub.section_count(level);
    if nsub <= 0 || (nsub as usize) >= total_sections {
        return Err(StabilityError::DegenerateSubspace {
            sub: nsub,
            total: total_sections,
        });
    }
    let n = total_sections as f64;
    let complement = n - nsub as f64;
    let nu = nsub as f64 / complement;
    let w_fs = (n / r as f64 - nsub as f64) * SPHERE_VOLUME * r as f64 / complement;

    let phi = phi_spec.evaluate(bundle, grid);
    let lines = sub.line_values(bundle, grid);
    let phi_norm = norm_squared(&phi, h);
    let alpha_beta = params.alpha * params.beta;

    let mut fwd = vec![C64::ZERO; grid.node_count()];
    let mut back = vec![C64::ZERO; grid.node_count()];
    let mut damped = vec![C64::ZERO; grid.node_count()];
    for q in 0..grid.node_count() {
        let p = h.value(q);
        let v = &lines[q];
        let vhp = v.adjoint() * p;
        let denom = (&vhp * v)[(0, 0)].re;
        let proj = (v * vhp).unscale(denom);
        let co_proj = DMatrix::<C64>::identity(r, r) - &proj;
        let l = linalg::cholesky_lower(p).expect("metric is positive definite");
        let x = &proj * phi.value(q) * &co_proj;
        let y = &co_proj * phi.value(q) * &proj;
        let x_sq = linalg::metric_frame(&l, &x).norm_squared();
        let y_sq = linalg::metric_frame(&l, &y).norm_squared();
        fwd[q] = C64::new(x_sq, 0.0);
        back[q] = C64::new(y_sq, 0.0);
        damped[q] = C64::new(x_sq / (1.0 + params.alpha * phi_norm.values()[q].re), 0.0);
    }
    let block_fwd = integrate(&ScalarField::from_values(fwd), grid)?.re;
    let block_back = integrate(&ScalarField::from_values(back), grid)?.re;
    let damped_int = integrate(&ScalarField::from_values(damped), grid)?.re;
    let w_phi = -(1.0 + nu) * alpha_beta * alpha_beta * damped_int;
    let w_phi_alt = -(1.0 + nu) * alpha_beta * damped_int;

    let inv = invariance_check(sub, phi_spec, bundle);
    Ok(WeightReport {
        nu,
        sections_sub: nsub,
        sections_total: total_sections,
        w_fs,
        w_phi,
        w_phi_alt,
        total: w_fs + w_phi,
        invariant: inv.invariant,
        invariance_residual: inv.residual,
        block_norms: (block_fwd, block_back),
    })
}

/// Moment-map pairing along the one-parameter subgroup of a subbundle.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightCurve {
    pub samples: Vec<(f64, f64)>,
    /// Set when the rescaled frame left the numerically trustworthy
    /// range before the sample list was exhausted.
    pub truncated: bool,
    /// Mean of the last three samples, when that many exist.
    pub limit: Option<f64>,
}

/// Orthonormalizes the subbundle sections against the Gram form and
/// completes them to a full basis with monomial candidates. Columns
/// `0..N'` of the result span the subbundle sections.
fn adapted_basis(
    section_columns: &DMatrix<C64>,
    gram: &DMatrix<C64>,
) -> Result<DMatrix<C64>, StabilityError> {
    let n = gram.nrows();
    let nsub = section_columns.ncols();
    let form = gram.transpose();
    let pair = |u: &DVector<C64>, v: &DVector<C64>| (v.adjoint() * (&form * u))[(0, 0)];

    let mut basis: Vec<DVector<C64>> = Vec::with_capacity(n);
    let push_orthonormalized = |basis: &mut Vec<DVector<C64>>, v: DVector<C64>| {
        let norm_in = pair(&v, &v).re;
        let mut w = v;
        for u in basis.iter() {
            let c = pair(&w, u);
            w -= u * c;
        }
        let norm_out = pair(&w, &w).re;
        if norm_out <= COMPLETION_CUTOFF * COMPLETION_CUTOFF * norm_in {
            return false;
        }
        basis.push(w.unscale(norm_out.sqrt()));
        true
    };

    for j in 0..nsub {
        let v = DVector::from_column_slice(section_columns.column(j).as_slice());
        if !push_orthonormalized(&mut basis, v) {
            return Err(StabilityError::AdaptedBasisDegenerate);
        }
    }
    for i in 0..n {
        if basis.len() == n {
            break;
        }
        let mut e = DVector::<C64>::zeros(n);
        e[i] = C64::ONE;
        push_orthonormalized(&mut basis, e);
    }
    if basis.len() != n {
        return Err(StabilityError::AdaptedBasisDegenerate);
    }
    Ok(DMatrix::from_columns(&basis))
}

/// Evaluates the weight pairing at each `t`, in order, stopping early
/// if the rescaled frame degenerates.
///
/// `gram` is the Gram matrix of the monomial basis at the base point,
/// in the raw monomial frame; use the balanced Gram when one exists and
/// the reference Gram otherwise.
#[allow(clippy::too_many_arguments)]
pub fn numeric_weight_curve(
    sub: &SubbundleSpec,
    bundle: &BundleSpec,
    phi_spec: &HiggsSpec,
    gram: &DMatrix<C64>,
    params: QuantizationParams,
    level: i64,
    grid: &QuadGrid,
    t_samples: &[f64],
) -> Result<WeightCurve, StabilityError> {
    params.validate()?;
    let r = bundle.rank();
    let sections = sub.section_matrix(bundle, level)?;
    let nsub = sections.ncols();
    let n = sections.nrows();
    let nu = nsub as f64 / (n - nsub) as f64;

    let adapted = adapted_basis(&sections, gram)?;
    let tables = bundle.evaluate_basis(level, grid)?;
    let base_tables: Vec<DMatrix<C64>> = tables.tables().iter().map(|e| e * &adapted).collect();
    let phi = phi_spec.evaluate(bundle, grid);
    let identity = DMatrix::<C64>::identity(n, n);

    let mut samples = Vec::with_capacity(t_samples.len());
    let mut truncated = false;
    for &t in t_samples {
        if (2.0 * (1.0 + nu) * t).exp() > CURVE_CONDITION_LIMIT {
            truncated = true;
            break;
        }
        let up = t.exp();
        let down = (-nu * t).exp();
        let rescaled: Vec<DMatrix<C64>> = base_tables
            .iter()
            .map(|b| {
                let mut m = b.clone();
                for a in 0..n {
                    let s = if a < nsub { up } else { down };
                    for c in 0..r {
                        m[(c, a)] *= s;
                    }
                }
                m
            })
            .collect();
        let step = match t_step(&rescaled, &identity, &phi, params, grid) {
            Ok(step) => step,
            Err(BergmanError::GramNotPositive | BergmanError::DegenerateDensity { .. }) => {
                truncated = true;
                break;
            }
            Err(e) => return Err(e.into()),
        };
        let mut pairing = 0.0;
        for a in 0..n {
            let weight = if a < nsub { 1.0 } else { -nu };
            pairing += (step.orthonormal_gram[(a, a)].re - 1.0) * weight;
        }
        let w = r as f64 * SPHERE_VOLUME / n as f64 * pairing;
        samples.push((t, w));
    }
    let limit = (samples.len() >= 3)
        .then(|| samples.iter().rev().take(3).map(|&(_, w)| w).sum::<f64>() / 3.0);
    Ok(WeightCurve {
        samples,
        truncated,
        limit,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StabilityVerdict {
    Stable,
    Semistable,
    Unstable,
}

/// An invariant line subbundle found by the rank-2 search.
#[derive(Debug, Clone, PartialEq)]
pub struct InvariantLine {
    pub degree: i64,
    pub components: Vec<Vec<C64>>,
}

/// Normalized Euler characteristics at one level: `χ(F⊗L^k)/rk F`
/// against `χ(E⊗L^k)/rk E`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiRow {
    pub level: i64,
    pub sub_slope: f64,
    pub total_slope: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GiesekerReport {
    pub verdict: StabilityVerdict,
    /// Maximal-degree invariant line subbundles.
    pub lines: Vec<InvariantLine>,
    /// The invariant line witnessing the verdict when one exists with
    /// degree at least the slope.
    pub destabilizer: Option<InvariantLine>,
    pub table: Vec<ChiRow>,
}

/// Divides out the content of a rank-2 column and normalizes the first
/// nonzero component to be monic.
fn primitive_line(p0: &[C64], p1: &[C64], tol: f64) -> Option<(Vec<C64>, Vec<C64>)> {
    let p0 = poly::trimmed(p0, tol);
    let p1 = poly::trimmed(p1, tol);
    let (mut q0, mut q1) = match (p0.is_empty(), p1.is_empty()) {
        (true, true) => return None,
        (true, false) => (Vec::new(), vec![C64::ONE]),
        (false, true) => (vec![C64::ONE], Vec::new()),
        (false, false) => {
            let g = poly::gcd(&p0, &p1, tol);
            let q0 = poly::div_rem(&p0, &g, tol)?.0;
            let q1 = poly::div_rem(&p1, &g, tol)?.0;
            (q0, q1)
        }
    };
    let lead = *[&q0, &q1]
        .iter()
        .find_map(|q| q.last())
        .expect("at least one component is nonzero");
    q0 = poly::trimmed(&poly::scale(&q0, C64::ONE / lead), tol);
    q1 = poly::trimmed(&poly::scale(&q1, C64::ONE / lead), tol);
    Some((q0, q1))
}

fn same_line(a: &(Vec<C64>, Vec<C64>), b: &(Vec<C64>, Vec<C64>), tol: f64) -> bool {
    let wedge = poly::sub(&poly::mul(&a.0, &b.1), &poly::mul(&a.1, &b.0));
    poly::max_coeff(&wedge) <= tol
}

/// Eigenlines of a rank-2 polynomial matrix: the invariant lines of the
/// Higgs field. Returns `None` when the field is a scalar multiple of
/// the identity, in which case every line is invariant.
fn eigenlines(phi: &HiggsSpec, tol: f64) -> Option<Vec<(Vec<C64>, Vec<C64>)>> {
    let (a, b) = (phi.entry(0, 0), phi.entry(0, 1));
    let (c, d) = (phi.entry(1, 0), phi.entry(1, 1));
    let trace = poly::add(a, d);
    let det = poly::sub(&poly::mul(a, d), &poly::mul(b, c));
    let disc = poly::sub(
        &poly::mul(&trace, &trace),
        &poly::scale(&det, C64::new(4.0, 0.0)),
    );

    let lines_for = |lambda: &[C64]| -> Option<(Vec<C64>, Vec<C64>)> {
        // Columns of adj(φ - λ) span the kernel; pick the larger one.
        let col0 = (poly::sub(d, lambda), poly::scale(c, -C64::ONE));
        let col1 = (poly::scale(b, -C64::ONE), poly::sub(a, lambda));
        let size0 = poly::max_coeff(&col0.0).max(poly::max_coeff(&col0.1));
        let size1 = poly::max_coeff(&col1.0).max(poly::max_coeff(&col1.1));
        let col = if size0 >= size1 { col0 } else { col1 };
        primitive_line(&col.0, &col.1, tol)
    };

    if poly::trimmed(&disc, tol).is_empty() {
        let lambda = poly::scale(&trace, C64::new(0.5, 0.0));
        let off = poly::max_coeff(b).max(poly::max_coeff(c));
        let diag = poly::max_coeff(&poly::sub(a, d));
        if off.max(diag) <= tol {
            return None;
        }
        return Some(lines_for(&lambda).into_iter().collect());
    }
    if let Some(s) = poly::exact_sqrt(&disc, tol) {
        let mut lines: Vec<(Vec<C64>, Vec<C64>)> = Vec::new();
        for sign in [C64::ONE, -C64::ONE] {
            let lambda = poly::scale(
                &poly::add(&trace, &poly::scale(&s, sign)),
                C64::new(0.5, 0.0),
            );
            if let Some(line) = lines_for(&lambda)
                && !lines.iter().any(|known| same_line(known, &line, tol))
            {
                lines.push(line);
            }
        }
        return Some(lines);
    }
    Some(Vec::new())
}

/// Degree of the saturated line subbundle spanned by a primitive
/// component pair.
fn line_degree(bundle: &BundleSpec, q: &(Vec<C64>, Vec<C64>), tol: f64) -> i64 {
    let mut deg = i64::MAX;
    for (i, comp) in [&q.0, &q.1].into_iter().enumerate() {
        if let Some(d) = poly::degree(comp, tol) {
            deg = deg.min(bundle.degrees()[i] - d as i64);
        } else if !comp.is_empty() {
            deg = deg.min(bundle.degrees()[i]);
        }
    }
    deg
}

/// Searches the invariant line subbundles of a rank-2 pair and compares
/// normalized Euler characteristics over a level range.
pub fn gieseker_report(
    bundle: &BundleSpec,
    phi: &HiggsSpec,
    k_range: &[i64],
) -> Result<GiesekerReport, StabilityError> {
    let r = bundle.rank();
    if r != 2 {
        return Err(StabilityError::RankUnsupported(r));
    }
    let scale = phi
        .entries()
        .iter()
        .map(|e| poly::max_coeff(e))
        .fold(0.0, f64::max);
    let tol = COEFF_TOL * (1.0 + scale);

    let lines: Vec<InvariantLine> = match eigenlines(phi, tol) {
        None => bundle
            .degrees()
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                let mut components = vec![Vec::new(); 2];
                components[i] = vec![C64::ONE];
                InvariantLine {
                    degree: a,
                    components,
                }
            })
            .collect(),
        Some(found) => found
            .into_iter()
            .map(|q| InvariantLine {
                degree: line_degree(bundle, &q, tol),
                components: vec![q.0, q.1],
            })
            .collect(),
    };

    let best = lines.iter().max_by_key(|l| l.degree).cloned();
    let (verdict, destabilizer) = match &best {
        None => (StabilityVerdict::Stable, None),
        Some(line) => {
            if 2 * line.degree > bundle.degree() {
                (StabilityVerdict::Unstable, Some(line.clone()))
            } else if 2 * line.degree == bundle.degree() {
                (StabilityVerdict::Semistable, Some(line.clone()))
            } else {
                (StabilityVerdict::Stable, None)
            }
        }
    };
    let table = best
        .map(|line| {
            k_range
                .iter()
                .map(|&k| ChiRow {
                    level: k,
                    sub_slope: (line.degree + k + 1) as f64,
                    total_slope: bundle.degree() as f64 / 2.0 + (k + 1) as f64,
                })
                .collect()
        })
        .unwrap_or_default();

    Ok(GiesekerReport {
        verdict,
        lines,
        destabilizer,
        table,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::balance::{BalanceOptions, BalanceOutcome, solve_balanced};
    use crate::bergman::gram;
    use crate::grid::build_grid;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn split_bundle() -> BundleSpec {
        BundleSpec::new(vec![1, -1], 2).unwrap()
    }

    fn nilpotent(bundle: &BundleSpec) -> HiggsSpec {
        HiggsSpec::new(bundle, vec![vec![], vec![], vec![c(1.0, 0.0)], vec![]]).unwrap()
    }

    fn reference_gram(bundle: &BundleSpec, level: i64, grid: &QuadGrid) -> DMatrix<C64> {
        let basis = bundle.evaluate_basis(level, grid).unwrap();
        let href = MetricField::reference(grid, bundle.rank());
        gram(&basis, &href, grid).unwrap()
    }

    #[test]
    fn embedding_validation_catches_saturation_failures() {
        let bundle = split_bundle();
        // Clean summand embeddings.
        assert!(SubbundleSpec::new(&bundle, 1, vec![vec![c(1.0, 0.0)], vec![]]).is_ok());
        assert!(SubbundleSpec::new(&bundle, -1, vec![vec![], vec![c(1.0, 0.0)]]).is_ok());
        // A finite common zero.
        let err = SubbundleSpec::new(&bundle, 0, vec![vec![C64::ZERO, c(1.0, 0.0)], vec![]]);
        assert!(matches!(err, Err(StabilityError::CommonZero)));
        // Every component drops degree: a zero at infinity.
        let err = SubbundleSpec::new(&bundle, 0, vec![vec![c(1.0, 0.0)], vec![]]);
        assert!(matches!(err, Err(StabilityError::CommonZeroAtInfinity)));
        // Degree overflow and the zero embedding.
        let err = SubbundleSpec::new(&bundle, 1, vec![vec![c(0.0, 0.0), c(1.0, 0.0)], vec![]]);
        assert!(matches!(
            err,
            Err(StabilityError::ComponentDegreeTooHigh { .. })
        ));
        let err = SubbundleSpec::new(&bundle, 0, vec![vec![], vec![]]);
        assert!(matches!(err, Err(StabilityError::ZeroEmbedding)));
    }

    #[test]
    fn invariance_distinguishes_the_two_summands() {
        let bundle = split_bundle();
        let phi = nilpotent(&bundle);
        let top = SubbundleSpec::new(&bundle, 1, vec![vec![c(1.0, 0.0)], vec![]]).unwrap();
        let bottom = SubbundleSpec::new(&bundle, -1, vec![vec![], vec![c(1.0, 0.0)]]).unwrap();
        assert!(!invariance_check(&top, &phi, &bundle).invariant);
        assert!(invariance_check(&bottom, &phi, &bundle).invariant);

        let zero = HiggsSpec::zero(&bundle);
        assert!(invariance_check(&top, &zero, &bundle).invariant);
        assert!(invariance_check(&bottom, &zero, &bundle).invariant);
    }

    #[test]
    fn destabilizing_weight_matches_the_arithmetic() {
        let bundle = split_bundle();
        let phi = HiggsSpec::zero(&bundle);
        let grid = build_grid(10, 12).unwrap();
        let sub = SubbundleSpec::new(&bundle, 1, vec![vec![c(1.0, 0.0)], vec![]]).unwrap();
        let href = MetricField::reference(&grid, 2);
        let params = QuantizationParams::defaults(2, 3, 1.0);
        let report = closed_form_weight(&sub, &bundle, &phi, &href, params, 3, &grid).unwrap();
        assert_eq!(report.sections_sub, 5);
        assert_eq!(report.sections_total, 8);
        assert!((report.nu - 5.0 / 3.0).abs() < 1e-14);
        let expected = -4.0 * std::f64::consts::PI / 3.0;
        assert!((report.w_fs - expected).abs() < 1e-12, "{}", report.w_fs);
        assert_eq!(report.w_phi, 0.0);
        assert!((report.total - expected).abs() < 1e-12);
        assert!(report.invariant);
    }

    #[test]
    fn equal_splitting_carries_zero_geometric_weight() {
        let bundle = BundleSpec::new(vec![0, 0], 1).unwrap();
        let phi = HiggsSpec::zero(&bundle);
        let grid = build_grid(8, 10).unwrap();
        let sub = SubbundleSpec::new(&bundle, 0, vec![vec![c(1.0, 0.0)], vec![]]).unwrap();
        let href = MetricField::reference(&grid, 2);
        let params = QuantizationParams::defaults(2, 4, 1.0);
        let report = closed_form_weight(&sub, &bundle, &phi, &href, params, 4, &grid).unwrap();
        assert!((report.nu - 1.0).abs() < 1e-14);
        assert_eq!(report.w_fs, 0.0);
        assert_eq!(report.total, 0.0);
    }

    #[test]
    fn higgs_weight_term_sees_only_the_forward_block() {
        let bundle = split_bundle();
        let phi = nilpotent(&bundle);
        let grid = build_grid(10, 12).unwrap();
        let href = MetricField::reference(&grid, 2);
        let params = QuantizationParams::defaults(2, 3, 1.0);

        // The top summand is not invariant, but the field maps the
        // complement into it, not the other way around.
        let top = SubbundleSpec::new(&bundle, 1, vec![vec![c(1.0, 0.0)], vec![]]).unwrap();
        let r_top = closed_form_weight(&top, &bundle, &phi, &href, params, 3, &grid).unwrap();
        assert!(r_top.w_phi.abs() < 1e-13);
        assert!(r_top.block_norms.0 < 1e-13);
        assert!(r_top.block_norms.1 > 1e-2);
        assert!(!r_top.invariant);

        // The invariant bottom summand absorbs the field, so the
        // forward block and the weight term are nonzero.
        let bottom = SubbundleSpec::new(&bundle, -1, vec![vec![], vec![c(1.0, 0.0)]]).unwrap();
        let r_bot = closed_form_weight(&bottom, &bundle, &phi, &href, params, 3, &grid).unwrap();
        assert!(r_bot.w_phi < -1e-4, "{}", r_bot.w_phi);
        assert!(r_bot.block_norms.0 > 1e-2);
        assert!(r_bot.block_norms.1 < 1e-13);
        assert!(r_bot.invariant);
        assert!(r_bot.w_phi > -(1.0 + r_bot.nu) * r_bot.block_norms.0);
    }

    #[test]
    fn weight_curve_reproduces_the_closed_form_on_the_split_case() {
        let bundle = split_bundle();
        let phi = HiggsSpec::zero(&bundle);
        let grid = build_grid(10, 12).unwrap();
        let sub = SubbundleSpec::new(&bundle, 1, vec![vec![c(1.0, 0.0)], vec![]]).unwrap();
        let params = QuantizationParams::defaults(2, 3, 1.0);
        let gram = reference_gram(&bundle, 3, &grid);
        let ts: Vec<f64> = (0..9).map(|i| 0.5 * i as f64).collect();
        let curve =
            numeric_weight_curve(&sub, &bundle, &phi, &gram, params, 3, &grid, &ts).unwrap();
        assert!(!curve.truncated);
        assert_eq!(curve.samples.len(), ts.len());
        let expected = -4.0 * std::f64::consts::PI / 3.0;
        for &(t, w) in &curve.samples {
            assert!(
                (w - expected).abs() < 1e-2 * expected.abs(),
                "t={t} w={w} expected {expected}"
            );
        }
        let limit = curve.limit.unwrap();
        assert!((limit - expected).abs() < 1e-2 * expected.abs());
    }

    #[test]
    fn weight_curve_vanishes_on_the_trivial_splitting() {
        let bundle = BundleSpec::new(vec![0, 0], 1).unwrap();
        let phi = HiggsSpec::zero(&bundle);
        let grid = build_grid(8, 10).unwrap();
        let sub = SubbundleSpec::new(&bundle, 0, vec![vec![c(1.0, 0.0)], vec![]]).unwrap();
        let params = QuantizationParams::defaults(2, 4, 1.0);
        let gram = reference_gram(&bundle, 4, &grid);
        let ts = [0.0, 0.5, 1.0, 1.5, 2.0];
        let curve =
            numeric_weight_curve(&sub, &bundle, &phi, &gram, params, 4, &grid, &ts).unwrap();
        for &(_, w) in &curve.samples {
            assert!(w.abs() < 1e-10, "{w}");
        }
    }

    #[test]
    fn weight_curve_truncates_when_the_frame_degenerates() {
        let bundle = split_bundle();
        let phi = HiggsSpec::zero(&bundle);
        let grid = build_grid(10, 12).unwrap();
        let sub = SubbundleSpec::new(&bundle, 1, vec![vec![c(1.0, 0.0)], vec![]]).unwrap();
        let params = QuantizationParams::defaults(2, 3, 1.0);
        let gram = reference_gram(&bundle, 3, &grid);
        let ts = [0.0, 2.0, 4.0, 6.0, 8.0];
        let curve =
            numeric_weight_curve(&sub, &bundle, &phi, &gram, params, 3, &grid, &ts).unwrap();
        assert!(curve.truncated);
        assert!(curve.samples.len() < ts.len());
    }

    #[test]
    fn weights_at_a_balanced_point_are_nonnegative() {
        let bundle = split_bundle();
        let phi = nilpotent(&bundle);
        let grid = build_grid(12, 14).unwrap();
        let level = 6;
        let params = QuantizationParams::defaults(2, level, 1.0);
        let balance = solve_balanced(
            &bundle,
            &phi,
            params,
            level,
            &grid,
            BalanceOptions::default(),
        )
        .unwrap();
        assert_eq!(balance.outcome, BalanceOutcome::Converged);
        let ts: Vec<f64> = (0..9).map(|i| 0.4 * i as f64).collect();
        for sub in [
            SubbundleSpec::new(&bundle, 1, vec![vec![c(1.0, 0.0)], vec![]]).unwrap(),
            SubbundleSpec::new(&bundle, -1, vec![vec![], vec![c(1.0, 0.0)]]).unwrap(),
        ] {
            let curve = numeric_weight_curve(
                &sub,
                &bundle,
                &phi,
                &balance.gram,
                params,
                level,
                &grid,
                &ts,
            )
            .unwrap();
            let limit = curve.limit.expect("curve long enough for a limit");
            assert!(limit >= -1e-6, "limit {limit}");
            // The pairing starts at zero: the base point is balanced.
            assert!(curve.samples[0].1.abs() < 1e-7, "{}", curve.samples[0].1);
        }
    }

    #[test]
    fn nilpotent_pair_is_stable() {
        let bundle = split_bundle();
        let phi = nilpotent(&bundle);
        let report = gieseker_report(&bundle, &phi, &[3, 4, 5]).unwrap();
        assert_eq!(report.verdict, StabilityVerdict::Stable);
        assert_eq!(report.lines.len(), 1);
        assert_eq!(report.lines[0].degree, -1);
        assert!(report.destabilizer.is_none());
        let sub = SubbundleSpec::new(&bundle, -1, report.lines[0].components.clone()).unwrap();
        assert!(invariance_check(&sub, &phi, &bundle).invariant);
    }

    #[test]
    fn zero_field_on_unbalanced_splitting_is_unstable() {
        let bundle = split_bundle();
        let phi = HiggsSpec::zero(&bundle);
        let report = gieseker_report(&bundle, &phi, &[3]).unwrap();
        assert_eq!(report.verdict, StabilityVerdict::Unstable);
        let line = report.destabilizer.unwrap();
        assert_eq!(line.degree, 1);
        assert_eq!(report.table[0].sub_slope, 5.0);
        assert_eq!(report.table[0].total_slope, 4.0);
    }

    #[test]
    fn zero_field_on_equal_splitting_is_semistable() {
        let bundle = BundleSpec::new(vec![0, 0], 1).unwrap();
        let phi = HiggsSpec::zero(&bundle);
        let report = gieseker_report(&bundle, &phi, &[4]).unwrap();
        assert_eq!(report.verdict, StabilityVerdict::Semistable);
        assert_eq!(report.lines.len(), 2);
    }

    #[test]
    fn upper_triangular_field_keeps_the_top_summand() {
        let bundle = split_bundle();
        // φ e₂ = z⁴ e₁ keeps O(1) invariant and nothing else.
        let phi = HiggsSpec::new(
            &bundle,
            vec![
                vec![],
                vec![C64::ZERO, C64::ZERO, C64::ZERO, C64::ZERO, c(1.0, 0.0)],
                vec![],
                vec![],
            ],
        )
        .unwrap();
        let report = gieseker_report(&bundle, &phi, &[3]).unwrap();
        assert_eq!(report.verdict, StabilityVerdict::Unstable);
        assert_eq!(report.lines.len(), 1);
        assert_eq!(report.lines[0].degree, 1);
    }

    #[test]
    fn distinct_eigenvalues_give_two_lines() {
        let bundle = BundleSpec::new(vec![0, 0], 2).unwrap();
        // φ = diag(z², -z²): eigenlines are the summands.
        let phi = HiggsSpec::new(
            &bundle,
            vec![
                vec![C64::ZERO, C64::ZERO, c(1.0, 0.0)],
                vec![],
                vec![],
                vec![C64::ZERO, C64::ZERO, c(-1.0, 0.0)],
            ],
        )
        .unwrap();
        let report = gieseker_report(&bundle, &phi, &[3]).unwrap();
        assert_eq!(report.verdict, StabilityVerdict::Semistable);
        assert_eq!(report.lines.len(), 2);
        assert!(report.lines.iter().all(|l| l.degree == 0));
    }

    #[test]
    fn rank_three_search_is_rejected() {
        let bundle = BundleSpec::new(vec![1, 0, -1], 2).unwrap();
        let phi = HiggsSpec::zero(&bundle);
        let err = gieseker_report(&bundle, &phi, &[3]);
        assert!(matches!(err, Err(StabilityError::RankUnsupported(3))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn verdicts_are_invariant_under_field_scaling(
            re in -2.0_f64..2.0,
            im in -2.0_f64..2.0,
            coeffs in proptest::collection::vec(-1.0_f64..1.0, 6),
        ) {
            prop_assume!(re * re + im * im > 1e-2);
            let bundle = split_bundle();
            let phi = HiggsSpec::new(
                &bundle,
                vec![
                    vec![c(coeffs[0], coeffs[1])],
                    vec![c(coeffs[2], 0.0), c(coeffs[3], 0.0)],
                    vec![c(coeffs[4], coeffs[5])],
                    vec![],
                ],
            )
            .unwrap();
            let base = gieseker_report(&bundle, &phi, &[3]).unwrap();
            let scaled = gieseker_report(&bundle, &phi.scaled(c(re, im)), &[3]).unwrap();
            prop_assert_eq!(base.verdict, scaled.verdict);
            prop_assert_eq!(base.lines.len(), scaled.lines.len());
        }
    }
}
