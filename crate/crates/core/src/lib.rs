//! Numerical balanced metrics for twisted Higgs bundles over the Riemann sphere.
//!
//! The library models a direct sum of line bundles `E = O(a_1) ⊕ … ⊕ O(a_r)`
//! on the sphere together with a polynomial Higgs field `φ: E → E ⊗ O(m)`,
//! and provides:
//!
//! * exact quadrature and spectral calculus on the sphere ([`grid`]),
//! * explicit polynomial section bases of `H⁰(E ⊗ O(k))` ([`bundle`]),
//! * hermitian metric fields, Chern curvature, and the Hitchin residual
//!   ([`metric`]),
//! * the Higgs bracket, the deformation endomorphism `𝔠`, and the hatted
//!   metric ([`higgs`]),
//! * L² Gram matrices, Fubini-Study pullbacks, and the Bergman function
//!   ([`bergman`]),
//! * the T-operator fixed-point iteration for balanced metrics ([`balance`]),
//! * a Donaldson heat-flow solver of the Hitchin equation used as an
//!   independent oracle ([`flow`]),
//! * invariant-subbundle analysis and one-parameter-subgroup stability
//!   weights ([`stability`]).
//!
//! Conventions, fixed once and used everywhere: the affine coordinate `z`
//! covers the sphere minus one point, `t = |z|²/(1+|z|²)`, the Kähler form is
//! `ω = i(1+|z|²)^{-2} dz∧dz̄ = dt∧dθ` with total volume `V = 2π`, and the
//! reference metric on `O(a)` is `(1+|z|²)^{-a}`, whose contracted curvature
//! is the constant `a`. Fields are stored in the *weighted frame* in which
//! the reference metric is the identity matrix, so every stored quantity
//! stays bounded over the whole sphere.

pub mod balance;
pub mod bergman;
pub mod bundle;
pub mod flow;
pub mod grid;
pub mod higgs;
pub mod metric;
pub mod poly;
pub mod stability;

pub(crate) mod linalg;
pub(crate) mod reduce;

/// Complex double-precision scalar used throughout.
pub type C64 = num_complex::Complex<f64>;

/// Caps the global worker pool used for node-parallel loops. Call once,
/// before any computation; later calls fail. Results do not depend on
/// the pool size, only wall time does.
pub fn configure_threads(threads: usize) -> Result<(), String> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| e.to_string())
}
