//! Direct sums of line bundles on the sphere and their section bases.
//!
//! A bundle is described by its splitting degrees `a_1 ≥ … ≥ a_r`
//! together with the twist degree `m` of the line carrying the Higgs
//! field. At quantization level `k` the summand `O(a_c)` contributes
//! the monomials `1, z, …, z^{a_c + k}` to the twisted section space,
//! so the basis has `N = r·k + deg E + r` elements.
//!
//! Sections are always evaluated in the *weighted frame*: the monomial
//! `z^p` in a summand with `n = a_c + k` becomes
//! `t^{p/2} (1-t)^{(n-p)/2} e^{ipθ}`, which is bounded by one on the
//! whole sphere. Gram integrals against a metric stored in the same
//! frame then need no further weight factors.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::C64;
use crate::grid::{Node, QuadGrid};
use crate::reduce::par_map;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BundleError {
    #[error("bundle rank must be at least 2, got {0}")]
    RankTooSmall(usize),
    #[error("splitting degrees must be non-increasing, got {0:?}")]
    DegreesNotSorted(Vec<i64>),
    #[error(
        "quantization level {level} gives summand of degree {degree} no sections; need level >= {min}"
    )]
    LevelTooSmall { level: i64, degree: i64, min: i64 },
}

/// The bundle `O(a_1) ⊕ … ⊕ O(a_r)` and the twist degree of the Higgs
/// line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BundleSpec {
    degrees: Vec<i64>,
    twist: i64,
}

impl BundleSpec {
    pub fn new(degrees: Vec<i64>, twist: i64) -> Result<Self, BundleError> {
        if degrees.len() < 2 {
            return Err(BundleError::RankTooSmall(degrees.len()));
        }
        if degrees.windows(2).any(|w| w[0] < w[1]) {
            return Err(BundleError::DegreesNotSorted(degrees));
        }
        Ok(Self { degrees, twist })
    }

    pub fn rank(&self) -> usize {
        self.degrees.len()
    }

    pub fn degrees(&self) -> &[i64] {
        &self.degrees
    }

    pub fn twist(&self) -> i64 {
        self.twist
    }

    /// Total degree `deg E = Σ a_c`.
    pub fn degree(&self) -> i64 {
        self.degrees.iter().sum()
    }

    /// Slope `deg E / rk E`, the constant on the right of the Hitchin
    /// equation.
    pub fn slope(&self) -> f64 {
        self.degree() as f64 / self.rank() as f64
    }

    /// Smallest quantization level at which every summand has sections.
    pub fn min_level(&self) -> i64 {
        -self.degrees.iter().copied().min().unwrap()
    }

    /// Smallest `(radial, angular)` grid that integrates every pairing
    /// of level-`level` sections against the reference metric exactly:
    /// the top summand degree bounds both the radial polynomial degree
    /// and the angular frequency of such a pairing. Metrics with angular
    /// dependence of their own need margin beyond this floor.
    pub fn exact_grid(&self, level: i64) -> Result<(usize, usize), BundleError> {
        self.check_level(level)?;
        let top = (self.degrees.iter().max().unwrap() + level) as usize;
        Ok((top / 2 + 1, top + 1))
    }

    fn check_level(&self, level: i64) -> Result<(), BundleError> {
        let min = self.min_level();
        if level < min {
            let degree = *self.degrees.iter().min().unwrap();
            return Err(BundleError::LevelTooSmall { level, degree, min });
        }
        Ok(())
    }

    /// Dimension of the twisted section space at `level`.
    pub fn section_count(&self, level: i64) -> Result<usize, BundleError> {
        self.check_level(level)?;
        Ok(self.degrees.iter().map(|&a| (a + level + 1) as usize).sum())
    }

    /// The monomial basis at `level`, summand-major: all powers of the
    /// first summand, then the second, and so on.
    pub fn monomial_basis(&self, level: i64) -> Result<Vec<MonomialSection>, BundleError> {
        self.check_level(level)?;
        let mut basis = Vec::with_capacity(self.section_count(level)?);
        for (summand, &a) in self.degrees.iter().enumerate() {
            for power in 0..=(a + level) as usize {
                basis.push(MonomialSection { summand, power });
            }
        }
        Ok(basis)
    }

    /// Evaluates the monomial basis on every grid node in the weighted
    /// frame. Entry `(c, a)` of the node matrix is component `c` of
    /// basis section `a`.
    pub fn evaluate_basis(&self, level: i64, grid: &QuadGrid) -> Result<SectionBasis, BundleError> {
        let basis = self.monomial_basis(level)?;
        let rank = self.rank();
        let count = basis.len();
        let degrees = self.degrees.clone();
        let tables = par_map(grid.node_count(), |i| {
            let node = grid.node(i);
            DMatrix::from_fn(rank, count, |c, a| {
                let section = basis[a];
                if section.summand == c {
                    weighted_monomial(section.power, (degrees[c] + level) as usize, node)
                } else {
                    C64::ZERO
                }
            })
        });
        Ok(SectionBasis {
            level,
            count,
            tables,
        })
    }
}

/// One monomial section: `z^power` placed in a single summand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MonomialSection {
    pub summand: usize,
    pub power: usize,
}

/// The weighted-frame values of a section basis on a grid, one
/// `rank × count` matrix per node.
#[derive(Debug, Clone)]
pub struct SectionBasis {
    level: i64,
    count: usize,
    tables: Vec<DMatrix<C64>>,
}

impl SectionBasis {
    pub fn level(&self) -> i64 {
        self.level
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn table(&self, node: usize) -> &DMatrix<C64> {
        &self.tables[node]
    }

    pub fn tables(&self) -> &[DMatrix<C64>] {
        &self.tables
    }
}

/// Weighted-frame value of `z^power` in a summand whose sections have
/// degree at most `n`: `t^{p/2} (1-t)^{(n-p)/2} e^{ipθ}`.
pub fn weighted_monomial(power: usize, n: usize, node: Node) -> C64 {
    debug_assert!(power <= n);
    let radial = node.t.powf(0.5 * power as f64) * (1.0 - node.t).powf(0.5 * (n - power) as f64);
    C64::from_polar(radial, power as f64 * node.theta)
}

/// Weighted-frame value of a polynomial `Σ q_j z^j` in a summand of
/// section degree `n`; the polynomial must have degree at most `n`.
pub fn weighted_polynomial(coeffs: &[C64], n: usize, node: Node) -> C64 {
    coeffs
        .iter()
        .enumerate()
        .filter(|(_, q)| q.norm_sqr() > 0.0)
        .map(|(j, q)| q * weighted_monomial(j, n, node))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{ScalarField, build_grid, integrate};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn bundle(degrees: &[i64]) -> BundleSpec {
        BundleSpec::new(degrees.to_vec(), 2).unwrap()
    }

    #[test]
    fn validation_rejects_bad_specs() {
        assert_eq!(
            BundleSpec::new(vec![3], 0).unwrap_err(),
            BundleError::RankTooSmall(1)
        );
        assert!(matches!(
            BundleSpec::new(vec![0, 1], 0).unwrap_err(),
            BundleError::DegreesNotSorted(_)
        ));
        assert!(matches!(
            bundle(&[1, -1]).section_count(0).unwrap_err(),
            BundleError::LevelTooSmall { min: 1, .. }
        ));
    }

    #[test]
    fn section_count_matches_enumeration() {
        let e = bundle(&[1, -1]);
        assert_eq!(e.section_count(3).unwrap(), 8);
        assert_eq!(e.monomial_basis(3).unwrap().len(), 8);
        let t = bundle(&[0, 0]);
        assert_eq!(t.section_count(5).unwrap(), 12);
    }

    #[test]
    fn basis_is_summand_major() {
        let e = bundle(&[1, -1]);
        let basis = e.monomial_basis(2).unwrap();
        let summands: Vec<usize> = basis.iter().map(|s| s.summand).collect();
        let powers: Vec<usize> = basis.iter().map(|s| s.power).collect();
        assert_eq!(summands, [0, 0, 0, 0, 1, 1]);
        assert_eq!(powers, [0, 1, 2, 3, 0, 1]);
    }

    #[test]
    fn weighted_sections_are_bounded_by_one() {
        let grid = build_grid(16, 12).unwrap();
        let e = bundle(&[2, 0, -1]);
        let basis = e.evaluate_basis(4, &grid).unwrap();
        for table in basis.tables() {
            for v in table.iter() {
                assert!(v.norm() <= 1.0 + 1e-14);
            }
        }
    }

    #[test]
    fn monomial_pairings_match_the_beta_integral() {
        // ∫ s̄_q s_p (1+|z|²)^{-n} ω = δ_{pq} · 2π p!(n-p)!/(n+1)!
        let grid = build_grid(16, 12).unwrap();
        let n = 5usize;
        let factorial = |j: usize| (1..=j).product::<usize>() as f64;
        for p in 0..=n {
            for q in 0..=n {
                let f = ScalarField::from_fn(&grid, |node| {
                    weighted_monomial(p, n, node) * weighted_monomial(q, n, node).conj()
                });
                let got = integrate(&f, &grid).unwrap();
                let want = if p == q {
                    2.0 * PI * factorial(p) * factorial(n - p) / factorial(n + 1)
                } else {
                    0.0
                };
                assert!(
                    (got - C64::new(want, 0.0)).norm() < 1e-13,
                    "p={p} q={q} got {got} want {want}"
                );
            }
        }
    }

    #[test]
    fn exact_grid_floor_is_sharp() {
        let e = bundle(&[1, -1]);
        let (radial, angular) = e.exact_grid(4).unwrap();
        assert_eq!((radial, angular), (3, 6));

        let n = 5usize;
        let pairing = |grid: &crate::grid::QuadGrid, p: usize, q: usize| {
            let f = ScalarField::from_fn(grid, |node| {
                weighted_monomial(p, n, node) * weighted_monomial(q, n, node).conj()
            });
            integrate(&f, grid).unwrap()
        };
        let factorial = |j: usize| (1..=j).product::<usize>() as f64;
        let want = 2.0 * PI * factorial(2) * factorial(n - 2) / factorial(n + 1);

        let floor = build_grid(radial, angular).unwrap();
        assert!((pairing(&floor, 2, 2).re - want).abs() < 1e-14);
        assert!(pairing(&floor, n, 0).norm() < 1e-15);

        // One fewer node on either axis and the top pairings go wrong:
        // the quintic diagonal is under-integrated and the frequency-5
        // off-diagonal aliases onto the mean.
        let starved = build_grid(radial - 1, angular).unwrap();
        assert!((pairing(&starved, 2, 2).re - want).abs() > 1e-6);
        let aliased = build_grid(radial, angular - 1).unwrap();
        assert!(pairing(&aliased, n, 0).norm() > 1e-3);
    }

    #[test]
    fn weighted_polynomial_sums_monomials() {
        let grid = build_grid(8, 8).unwrap();
        let coeffs = [C64::new(1.0, 0.0), C64::new(0.0, -2.0), C64::new(0.5, 0.0)];
        let node = grid.node(17);
        let direct: C64 = (0..3)
            .map(|j| coeffs[j] * weighted_monomial(j, 4, node))
            .sum();
        assert!((weighted_polynomial(&coeffs, 4, node) - direct).norm() < 1e-15);
    }

    proptest! {
        #[test]
        fn section_count_is_linear_in_level_and_degree(
            mut degrees in prop::collection::vec(-4i64..=4, 2..5),
            extra in 0i64..6,
        ) {
            degrees.sort_unstable_by(|a, b| b.cmp(a));
            let e = BundleSpec::new(degrees.clone(), 1).unwrap();
            let level = e.min_level() + extra;
            let n = e.section_count(level).unwrap() as i64;
            let r = degrees.len() as i64;
            prop_assert_eq!(n, r * level + e.degree() + r);
        }
    }
}
