//! The base geometry: the round sphere in a single affine chart.
//!
//! With `z` the affine coordinate and `t = |z|²/(1+|z|²)`, the Fubini-Study
//! form `ω = i(1+|z|²)^{-2} dz∧dz̄` becomes exactly `dt∧dθ` on
//! `(t, θ) ∈ (0,1) × [0,2π)`. A tensor grid of Gauss-Legendre nodes in `t`
//! and uniform nodes in `θ` therefore integrates
//!
//! * `z^p z̄^q (1+|z|²)^{-d} ω` *exactly* whenever `p = q` and `d ≤ 2n_t - 1`
//!   (the integrand is the polynomial `t^p (1-t)^{d-p}`), and
//! * kills every off-diagonal monomial `p ≠ q` exactly as long as
//!   `n_θ > |p - q|`.
//!
//! All Gram-matrix integrands arising from polynomial section data are of
//! this shape, so the quadrature error of the core pipeline is zero.
//!
//! Closed form used as the test oracle throughout:
//! `∫ z^p z̄^q (1+|z|²)^{-d} ω = δ_{pq} · 2π · p!(d-p)!/(d+1)!`.

use nalgebra::{DMatrix, DVector};
use rustfft::FftPlanner;
use thiserror::Error;

use crate::C64;
use crate::reduce;

/// Tolerance above which the relative size of the trailing spectral
/// coefficients of a field marks it as under-resolved on the grid.
pub const RESOLUTION_TAIL_TOL: f64 = 1e-8;

/// Total area of the sphere in the fixed normalization, `V = ∫ ω = 2π`.
pub const SPHERE_VOLUME: f64 = std::f64::consts::TAU;

/// Errors from grid construction and grid-bound operations.
#[derive(Debug, Error)]
pub enum GridError {
    /// Fewer radial nodes than the supported minimum.
    #[error("n_t = {got} radial nodes requested, need at least {min}")]
    TooFewRadialNodes { got: usize, min: usize },
    /// Fewer angular nodes than the supported minimum.
    #[error("n_theta = {got} angular nodes requested, need at least {min}")]
    TooFewAngularNodes { got: usize, min: usize },
    /// A field was paired with a grid of a different node count.
    #[error("field has {field} values but the grid has {grid} nodes")]
    NodeCountMismatch { field: usize, grid: usize },
}

/// One quadrature node of a [`QuadGrid`].
#[derive(Debug, Clone, Copy)]
pub struct Node {
    /// Radial coordinate `t = |z|²/(1+|z|²)`, strictly inside `(0,1)`.
    pub t: f64,
    /// Angular coordinate in `[0, 2π)`.
    pub theta: f64,
    /// Quadrature weight; all weights are positive and sum to `2π`.
    pub weight: f64,
}

impl Node {
    /// The affine coordinate `z = √(t/(1-t)) e^{iθ}` of the node.
    pub fn z(&self) -> C64 {
        let r = (self.t / (1.0 - self.t)).sqrt();
        C64::from_polar(r, self.theta)
    }

    /// Density `ρ = (1+|z|²)^{-2} = (1-t)²` of `ω` against `i dz∧dz̄`.
    pub fn rho(&self) -> f64 {
        let omt = 1.0 - self.t;
        omt * omt
    }
}

/// Differentiation direction on the chart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Holomorphic derivative `∂/∂z`.
    Z,
    /// Antiholomorphic derivative `∂/∂z̄`.
    ZBar,
}

/// Tensor-product quadrature grid on the sphere.
///
/// Nodes are flattened radially-major: node `i_t * n_theta + i_θ` sits at
/// `(t_{i_t}, θ_{i_θ})`.
#[derive(Debug, Clone)]
pub struct QuadGrid {
    n_t: usize,
    n_theta: usize,
    exactness_degree: usize,
    t_nodes: Vec<f64>,
    nodes: Vec<Node>,
    /// Barycentric differentiation matrix on the radial nodes.
    diff_t: DMatrix<f64>,
    /// Second-derivative matrix on the radial nodes.
    diff2_t: DMatrix<f64>,
    /// Row `l` maps radial samples to the shifted-Legendre coefficient `a_l`.
    legendre_proj: DMatrix<f64>,
}

impl QuadGrid {
    /// Number of quadrature nodes.
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Radial node count.
    pub fn n_t(&self) -> usize {
        self.n_t
    }

    /// Angular node count.
    pub fn n_theta(&self) -> usize {
        self.n_theta
    }

    /// Largest polynomial degree in `t` integrated exactly by the radial rule.
    pub fn exactness_degree(&self) -> usize {
        self.exactness_degree
    }

    /// The node at flattened index `i`.
    pub fn node(&self, i: usize) -> Node {
        self.nodes[i]
    }

    /// All nodes in flattened order.
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    fn check_len(&self, len: usize) -> Result<(), GridError> {
        if len == self.nodes.len() {
            Ok(())
        } else {
            Err(GridError::NodeCountMismatch {
                field: len,
                grid: self.nodes.len(),
            })
        }
    }
}

/// A complex scalar sampled at every grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    values: Vec<C64>,
}

impl ScalarField {
    /// Builds a field by evaluating `f` at every node.
    pub fn from_fn<F: Fn(Node) -> C64>(grid: &QuadGrid, f: F) -> Self {
        Self {
            values: grid.nodes.iter().map(|&n| f(n)).collect(),
        }
    }

    /// Constant field.
    pub fn constant(grid: &QuadGrid, c: C64) -> Self {
        Self {
            values: vec![c; grid.node_count()],
        }
    }

    /// Wraps raw per-node values.
    pub fn from_values(values: Vec<C64>) -> Self {
        Self { values }
    }

    /// Per-node values in flattened grid order.
    pub fn values(&self) -> &[C64] {
        &self.values
    }

    /// Mutable per-node values.
    pub fn values_mut(&mut self) -> &mut [C64] {
        &mut self.values
    }

    /// Number of samples.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    /// Whether the field carries no samples.
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Pointwise complex conjugate.
    pub fn conj(&self) -> Self {
        Self {
            values: self.values.iter().map(|v| v.conj()).collect(),
        }
    }
}

/// Builds the tensor quadrature grid with `n_t` Gauss-Legendre radial nodes
/// and `n_theta` uniform angular nodes.
///
/// The radial rule is exact for polynomials in `t` up to degree
/// `2·n_t - 1`; the angular rule integrates `e^{ifθ}` exactly for all
/// `|f| < n_theta`.
///
/// # Errors
///
/// Rejects `n_t < 2` and `n_theta < 4`.
pub fn build_grid(n_t: usize, n_theta: usize) -> Result<QuadGrid, GridError> {
    if n_t < 2 {
        return Err(GridError::TooFewRadialNodes { got: n_t, min: 2 });
    }
    if n_theta < 4 {
        return Err(GridError::TooFewAngularNodes {
            got: n_theta,
            min: 4,
        });
    }

    let (t_nodes, t_weights) = gauss_legendre_unit(n_t);
    let theta_step = std::f64::consts::TAU / n_theta as f64;
    let theta_nodes: Vec<f64> = (0..n_theta).map(|j| j as f64 * theta_step).collect();

    let mut nodes = Vec::with_capacity(n_t * n_theta);
    for (&t, &wt) in t_nodes.iter().zip(&t_weights) {
        for &theta in &theta_nodes {
            nodes.push(Node {
                t,
                theta,
                weight: wt * theta_step,
            });
        }
    }

    let diff_t = barycentric_diff_matrix(&t_nodes);
    let diff2_t = &diff_t * &diff_t;
    let legendre_proj = legendre_projection(&t_nodes, &t_weights);

    Ok(QuadGrid {
        n_t,
        n_theta,
        exactness_degree: 2 * n_t - 1,
        t_nodes,
        nodes,
        diff_t,
        diff2_t,
        legendre_proj,
    })
}

/// Integrates a scalar field against `ω`: `∫ f ω = Σ_j weight_j f_j`.
///
/// # Errors
///
/// Fails if the field was sampled on a different node count.
pub fn integrate(f: &ScalarField, grid: &QuadGrid) -> Result<C64, GridError> {
    grid.check_len(f.len())?;
    let vals = f.values();
    let nodes = &grid.nodes;
    Ok(reduce::par_sum(vals.len(), |i| vals[i] * nodes[i].weight))
}

/// Contracts a `(1,1)`-form against `ω`: given the `dz∧dz̄` coefficient of
/// `F`, returns the scalar `Λ(iF) = F_coeff / ρ`, so that `Λω = 1`.
///
/// # Errors
///
/// Fails on a node-count mismatch.
pub fn lambda_contract(f_coeff: &ScalarField, grid: &QuadGrid) -> Result<ScalarField, GridError> {
    grid.check_len(f_coeff.len())?;
    let values = f_coeff
        .values()
        .iter()
        .zip(&grid.nodes)
        .map(|(&v, n)| v / n.rho())
        .collect();
    Ok(ScalarField::from_values(values))
}

/// Differentiates a field spectrally in `∂/∂z` or `∂/∂z̄`.
///
/// The field is split into angular Fourier modes `f_m(t) e^{imθ}`. A
/// function that is smooth on the sphere has `f_m = (t(1-t))^{|m|/2} g_m`
/// with `g_m` polynomial-like in `t`, so the prefactor is divided out,
/// `g_m` is differentiated on the radial nodes, and the result is
/// reassembled with the prefactor of the shifted mode. `∂_z` sends mode
/// `m` to mode `m - 1` as
///
/// `t^{(m-1)/2} (1-t)^{(m+3)/2} (t g' + m g)`   for `m ≥ 1`,
/// `(t(1-t))^{(|m|+1)/2} ((1-t) g' + m g)`      for `m ≤ 0`,
///
/// and `∂_z̄ f = conj(∂_z conj f)`. All prefactors stay bounded, so the
/// scheme reaches machine accuracy for any sphere-smooth field
/// regardless of angular parity. The input Nyquist mode has no
/// well-defined shift direction and is dropped.
///
/// Returns the derivative together with the *resolution tail* of the
/// input, see [`resolution_tail`].
///
/// # Errors
///
/// Fails on a node-count mismatch.
pub fn spectral_derivative(
    f: &ScalarField,
    direction: Direction,
    grid: &QuadGrid,
) -> Result<(ScalarField, f64), GridError> {
    grid.check_len(f.len())?;
    if direction == Direction::ZBar {
        let (d, tail) = spectral_derivative(&f.conj(), Direction::Z, grid)?;
        return Ok((d.conj(), tail));
    }
    let nt = grid.n_t;
    let nth = grid.n_theta;
    let modes = field_modes(f.values(), nt, nth);
    let mut out_modes = vec![vec![C64::ZERO; nt]; nth];
    for (mi, fm) in modes.iter().enumerate() {
        if fm.iter().all(|c| *c == C64::ZERO) {
            continue;
        }
        let m = signed_mode(mi, nth);
        let target = m - 1;
        if is_nyquist(m, nth) || is_nyquist(target, nth) || target < -(nth as i64) / 2 {
            continue;
        }
        let g = split_prefactor(fm, m, &grid.t_nodes);
        let dg = diff_apply(&grid.diff_t, &g);
        let mut out = vec![C64::ZERO; nt];
        for it in 0..nt {
            let t = grid.t_nodes[it];
            out[it] = if m >= 1 {
                let pre = t.powf(0.5 * (m - 1) as f64) * (1.0 - t).powf(0.5 * (m + 3) as f64);
                (dg[it] * t + g[it] * m as f64) * pre
            } else {
                let pre = (t * (1.0 - t)).powf(0.5 * (m.abs() + 1) as f64);
                (dg[it] * (1.0 - t) + g[it] * m as f64) * pre
            };
        }
        out_modes[mode_index(target, nth)] = out;
    }
    let tail = resolution_tail(f, grid);
    let out = modes_to_field(&out_modes, nt, nth);
    Ok((ScalarField::from_values(out), tail))
}

/// Computes the mixed derivative `∂_z̄ ∂_z f` in one pass.
///
/// Written on angular mode `m` with the prefactor split
/// `f_m = (t(1-t))^{|m|/2} g_m`, the operator collapses to
///
/// `(t(1-t))^{|m|/2} [ t(1-t)³ g'' + (|m|+1)(1-t)²(1-2t) g'
///                     - |m|(|m|+1)(1-t)² g ]`,
///
/// with the apparent `1/t` angular singularity cancelling identically.
/// Every coefficient is polynomial, so the result is machine-accurate
/// for sphere-smooth fields and cheaper than composing two
/// [`spectral_derivative`] passes, which would also lose the band-edge
/// modes twice.
///
/// Returns the field and the resolution tail of the input, as in
/// [`spectral_derivative`].
///
/// # Errors
///
/// Fails on a node-count mismatch.
pub fn mixed_second_derivative(
    f: &ScalarField,
    grid: &QuadGrid,
) -> Result<(ScalarField, f64), GridError> {
    grid.check_len(f.len())?;
    let nt = grid.n_t;
    let nth = grid.n_theta;
    let modes = field_modes(f.values(), nt, nth);
    let mut out_modes = vec![vec![C64::ZERO; nt]; nth];
    for (mi, fm) in modes.iter().enumerate() {
        if fm.iter().all(|c| *c == C64::ZERO) {
            continue;
        }
        let m = signed_mode(mi, nth);
        let am = m.unsigned_abs() as f64;
        let g = split_prefactor(fm, m, &grid.t_nodes);
        let dg = diff_apply(&grid.diff_t, &g);
        let ddg = diff_apply(&grid.diff2_t, &g);
        let mut out = vec![C64::ZERO; nt];
        for it in 0..nt {
            let t = grid.t_nodes[it];
            let omt = 1.0 - t;
            let pre = (t * omt).powf(0.5 * am);
            out[it] = (ddg[it] * (t * omt * omt * omt)
                + dg[it] * ((am + 1.0) * omt * omt * (1.0 - 2.0 * t))
                - g[it] * (am * (am + 1.0) * omt * omt))
                * pre;
        }
        out_modes[mi] = out;
    }
    let tail = resolution_tail(f, grid);
    let out = modes_to_field(&out_modes, nt, nth);
    Ok((ScalarField::from_values(out), tail))
}

/// Relative magnitude of the trailing Fourier/Legendre coefficients of a
/// field; values above [`RESOLUTION_TAIL_TOL`] mean the grid does not
/// resolve the field. The radial test is applied per angular mode to the
/// smooth quotient `g_m = f_m / (t(1-t))^{|m|/2}`, weighted back by the
/// sup of the prefactor, so sphere-smooth fields of odd parity are not
/// misflagged.
pub fn resolution_tail(f: &ScalarField, grid: &QuadGrid) -> f64 {
    let nt = grid.n_t;
    let nth = grid.n_theta;
    let vals = f.values();
    if vals.len() != grid.nodes.len() {
        return f64::INFINITY;
    }
    let modes = field_modes(vals, nt, nth);

    let mut theta_tail = 0.0_f64;
    let mut theta_peak = 0.0_f64;
    let mut t_tail = 0.0_f64;
    let mut t_peak = 0.0_f64;
    for (mi, fm) in modes.iter().enumerate() {
        if fm.iter().all(|c| *c == C64::ZERO) {
            continue;
        }
        let m = signed_mode(mi, nth);
        let mag = fm.iter().map(|c| c.norm()).fold(0.0, f64::max);
        theta_peak = theta_peak.max(mag);
        if m.unsigned_abs() as usize + 1 >= nth / 2 {
            theta_tail = theta_tail.max(mag);
        }

        let g = split_prefactor(fm, m, &grid.t_nodes);
        let scale = grid
            .t_nodes
            .iter()
            .map(|&t| (t * (1.0 - t)).powf(0.5 * m.unsigned_abs() as f64))
            .fold(0.0, f64::max);
        let re: DVector<f64> = &grid.legendre_proj * DVector::from_fn(nt, |i, _| g[i].re);
        let im: DVector<f64> = &grid.legendre_proj * DVector::from_fn(nt, |i, _| g[i].im);
        for l in 0..nt {
            let coef = C64::new(re[l], im[l]).norm() * scale;
            t_peak = t_peak.max(coef);
            if l + 2 >= nt {
                t_tail = t_tail.max(coef);
            }
        }
    }

    relative_tail(theta_tail, theta_peak).max(relative_tail(t_tail, t_peak))
}

/// Fourier modes of a field, indexed by FFT bin: `modes[mi][it]` is the
/// coefficient of `e^{i·signed_mode(mi)·θ}` on the radial node `it`.
/// Whole modes below relative roundoff are zeroed so that later
/// prefactor divisions cannot amplify FFT noise.
fn field_modes(vals: &[C64], nt: usize, nth: usize) -> Vec<Vec<C64>> {
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(nth);
    let mut modes = vec![vec![C64::ZERO; nt]; nth];
    let mut row = vec![C64::ZERO; nth];
    for it in 0..nt {
        row.copy_from_slice(&vals[it * nth..(it + 1) * nth]);
        fwd.process(&mut row);
        for (mi, c) in row.iter().enumerate() {
            modes[mi][it] = c / nth as f64;
        }
    }
    let peak = modes.iter().flatten().map(|c| c.norm()).fold(0.0, f64::max);
    let floor = 1e-15 * peak;
    for fm in &mut modes {
        if fm.iter().map(|c| c.norm()).fold(0.0, f64::max) <= floor {
            fm.fill(C64::ZERO);
        }
    }
    modes
}

fn modes_to_field(modes: &[Vec<C64>], nt: usize, nth: usize) -> Vec<C64> {
    let mut planner = FftPlanner::<f64>::new();
    let inv = planner.plan_fft_inverse(nth);
    let mut out = vec![C64::ZERO; nt * nth];
    let mut row = vec![C64::ZERO; nth];
    for it in 0..nt {
        for (mi, c) in row.iter_mut().enumerate() {
            *c = modes[mi][it];
        }
        inv.process(&mut row);
        out[it * nth..(it + 1) * nth].copy_from_slice(&row);
    }
    out
}

/// Divides out the parity prefactor `(t(1-t))^{|m|/2}` of mode `m`.
fn split_prefactor(fm: &[C64], m: i64, t_nodes: &[f64]) -> Vec<C64> {
    if m == 0 {
        return fm.to_vec();
    }
    let mu = 0.5 * m.unsigned_abs() as f64;
    fm.iter()
        .zip(t_nodes)
        .map(|(&c, &t)| c / (t * (1.0 - t)).powf(mu))
        .collect()
}

/// Applies a differentiation matrix against differences, which keeps
/// the row-sum-zero property exact: constants map to exactly zero.
fn diff_apply(d: &DMatrix<f64>, g: &[C64]) -> Vec<C64> {
    let n = g.len();
    (0..n)
        .map(|i| {
            let gi = g[i];
            let mut acc = C64::ZERO;
            for j in 0..n {
                if j != i {
                    acc += (g[j] - gi) * d[(i, j)];
                }
            }
            acc
        })
        .collect()
}

fn signed_mode(m: usize, n: usize) -> i64 {
    if 2 * m <= n {
        m as i64
    } else {
        m as i64 - n as i64
    }
}

fn is_nyquist(m: i64, n: usize) -> bool {
    n.is_multiple_of(2) && 2 * m.unsigned_abs() as usize == n
}

fn mode_index(m: i64, n: usize) -> usize {
    if m >= 0 {
        m as usize
    } else {
        (m + n as i64) as usize
    }
}

fn relative_tail(tail: f64, peak: f64) -> f64 {
    if peak == 0.0 { 0.0 } else { tail / peak }
}

/// Gauss-Legendre nodes and weights on `(0,1)` by the Golub-Welsch method:
/// eigenvalues of the symmetric Jacobi matrix are the nodes, weights come
/// from the first eigenvector components.
fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for j in 1..n {
        let b = j as f64 / ((4 * j * j - 1) as f64).sqrt();
        jac[(j - 1, j)] = b;
        jac[(j, j - 1)] = b;
    }
    let eig = nalgebra::SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let x = eig.eigenvalues[i];
            let w = 2.0 * eig.eigenvectors[(0, i)].powi(2);
            (x, w)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("nodes are finite"));
    let nodes = pairs.iter().map(|p| (p.0 + 1.0) / 2.0).collect();
    let weights = pairs.iter().map(|p| p.1 / 2.0).collect();
    (nodes, weights)
}

/// Differentiation matrix of polynomial interpolation at distinct nodes, in
/// barycentric form. Log-scaled weights keep the entries finite for large
/// node counts.
fn barycentric_diff_matrix(t: &[f64]) -> DMatrix<f64> {
    let n = t.len();
    let mut log_w = vec![0.0_f64; n];
    let mut sign = vec![1.0_f64; n];
    for i in 0..n {
        let mut l = 0.0;
        let mut s = 1.0;
        for j in 0..n {
            if j != i {
                let d = t[i] - t[j];
                l -= d.abs().ln();
                if d < 0.0 {
                    s = -s;
                }
            }
        }
        log_w[i] = l;
        sign[i] = s;
    }
    let mut d = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let mut diag = 0.0;
        for j in 0..n {
            if j != i {
                let ratio = sign[j] * sign[i] * (log_w[j] - log_w[i]).exp();
                let v = ratio / (t[i] - t[j]);
                d[(i, j)] = v;
                diag -= v;
            }
        }
        d[(i, i)] = diag;
    }
    d
}

/// Matrix whose row `l` computes the coefficient of the shifted Legendre
/// polynomial `P_l(2t-1)` from samples at the radial nodes, via the radial
/// quadrature (exact for the degrees involved).
fn legendre_projection(t: &[f64], w: &[f64]) -> DMatrix<f64> {
    let n = t.len();
    let mut p_prev = vec![1.0_f64; n];
    let mut p_cur: Vec<f64> = t.iter().map(|&ti| 2.0 * ti - 1.0).collect();
    let mut m = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        m[(0, i)] = w[i];
    }
    if n > 1 {
        for i in 0..n {
            m[(1, i)] = 3.0 * w[i] * p_cur[i];
        }
    }
    for l in 2..n {
        let lf = l as f64;
        let next: Vec<f64> = (0..n)
            .map(|i| {
                let x = 2.0 * t[i] - 1.0;
                ((2.0 * lf - 1.0) * x * p_cur[i] - (lf - 1.0) * p_prev[i]) / lf
            })
            .collect();
        for i in 0..n {
            m[(l, i)] = (2.0 * lf + 1.0) * w[i] * next[i];
        }
        p_prev = p_cur;
        p_cur = next;
    }
    m
}
