//! Dense univariate polynomials over the complex numbers.
//!
//! Higgs field entries and subbundle embeddings are small polynomial
//! matrices. This module supplies their coefficient arithmetic: ring
//! operations, Euclidean division, a tolerance-based gcd, and perfect
//! square detection. Coefficients are stored in ascending order, so
//! `p[i]` multiplies `z^i`. Tolerances are relative to the largest
//! coefficient of the inputs involved.

use crate::C64;

/// Largest coefficient magnitude, zero for an empty slice.
pub fn max_coeff(p: &[C64]) -> f64 {
    p.iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// Index of the highest coefficient with magnitude above `tol`.
pub fn degree(p: &[C64], tol: f64) -> Option<usize> {
    p.iter().rposition(|c| c.norm() > tol)
}

/// Drops trailing coefficients with magnitude at or below `tol`.
pub fn trimmed(p: &[C64], tol: f64) -> Vec<C64> {
    match degree(p, tol) {
        Some(d) => p[..=d].to_vec(),
        None => Vec::new(),
    }
}

/// Horner evaluation at `z`.
pub fn eval(p: &[C64], z: C64) -> C64 {
    p.iter().rev().fold(C64::ZERO, |acc, &c| acc * z + c)
}

pub fn add(p: &[C64], q: &[C64]) -> Vec<C64> {
    let mut out = vec![C64::ZERO; p.len().max(q.len())];
    for (o, &c) in out.iter_mut().zip(p) {
        *o += c;
    }
    for (o, &c) in out.iter_mut().zip(q) {
        *o += c;
    }
    out
}

pub fn sub(p: &[C64], q: &[C64]) -> Vec<C64> {
    let mut out = vec![C64::ZERO; p.len().max(q.len())];
    for (o, &c) in out.iter_mut().zip(p) {
        *o += c;
    }
    for (o, &c) in out.iter_mut().zip(q) {
        *o -= c;
    }
    out
}

pub fn scale(p: &[C64], c: C64) -> Vec<C64> {
    p.iter().map(|&a| a * c).collect()
}

pub fn mul(p: &[C64], q: &[C64]) -> Vec<C64> {
    if p.is_empty() || q.is_empty() {
        return Vec::new();
    }
    let mut out = vec![C64::ZERO; p.len() + q.len() - 1];
    for (i, &a) in p.iter().enumerate() {
        for (j, &b) in q.iter().enumerate() {
            out[i + j] += a * b;
        }
    }
    out
}

/// Euclidean division: `p = quot · d + rem` with `deg rem < deg d`.
///
/// Returns `None` when the divisor vanishes at tolerance `tol`.
pub fn div_rem(p: &[C64], d: &[C64], tol: f64) -> Option<(Vec<C64>, Vec<C64>)> {
    let dd = degree(d, tol)?;
    let lead = d[dd];
    let mut rem = p.to_vec();
    let pd = match degree(&rem, 0.0) {
        Some(pd) if pd >= dd => pd,
        _ => return Some((Vec::new(), rem)),
    };
    let mut quot = vec![C64::ZERO; pd - dd + 1];
    for k in (0..=pd - dd).rev() {
        let c = rem[k + dd] / lead;
        quot[k] = c;
        for i in 0..=dd {
            rem[k + i] -= c * d[i];
        }
    }
    rem.truncate(dd);
    Some((quot, rem))
}

/// Monic greatest common divisor by the Euclidean algorithm.
///
/// Remainders whose coefficients all fall below `tol` relative to the
/// working scale are treated as zero. Coprime inputs yield `[1]`; two
/// zero inputs yield an empty vector.
pub fn gcd(p: &[C64], q: &[C64], tol: f64) -> Vec<C64> {
    let abs = tol * (1.0 + max_coeff(p).max(max_coeff(q)));
    let mut a = trimmed(p, abs);
    let mut b = trimmed(q, abs);
    if a.len() < b.len() {
        std::mem::swap(&mut a, &mut b);
    }
    while !b.is_empty() {
        let lead = *b.last().unwrap();
        let monic: Vec<C64> = b.iter().map(|&c| c / lead).collect();
        let (_, r) = div_rem(&a, &monic, 0.0).unwrap();
        a = b;
        b = trimmed(&r, tol * (1.0 + max_coeff(&r)));
    }
    match a.last() {
        Some(&lead) => a.iter().map(|&c| c / lead).collect(),
        None => Vec::new(),
    }
}

/// Polynomial square root: returns `s` with `s² = p` when `p` is a
/// perfect square, by matching coefficients downward from the leading
/// term. The candidate is verified against `tol` before returning, so a
/// non-square input yields `None` rather than a near miss.
pub fn exact_sqrt(p: &[C64], tol: f64) -> Option<Vec<C64>> {
    let scale = 1.0 + max_coeff(p);
    let pt = trimmed(p, tol * scale);
    if pt.is_empty() {
        return Some(Vec::new());
    }
    let d = pt.len() - 1;
    if !d.is_multiple_of(2) {
        return None;
    }
    let m = d / 2;
    let mut s = vec![C64::ZERO; m + 1];
    s[m] = pt[d].sqrt();
    for j in (0..m).rev() {
        let n = m + j;
        let mut acc = C64::ZERO;
        for i in (j + 1)..m {
            acc += s[i] * s[n - i];
        }
        s[j] = (pt[n] - acc) / (s[m] * 2.0);
    }
    let residual = sub(&mul(&s, &s), &pt);
    if max_coeff(&residual) <= tol * scale {
        Some(s)
    } else {
        None
    }
}
