//! Exact multi-index combinatorics in two and three variables.
//!
//! Everything here is either exact integer arithmetic (factorial ratios with
//! overflow detection) or brute-force enumeration of sub-indices, so the
//! values can serve as oracles for the analytic bounds checked elsewhere.

use std::fmt;

use crate::error::{Error, Result};

/// Tuple of per-coordinate derivative orders. The dimension is a runtime
/// value in `{2, 3}`; for `dim == 2` the third slot stays zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex {
    dim: usize,
    comps: [u32; 3],
}

impl MultiIndex {
    pub fn new(dim: usize, comps: &[u32]) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::Dimension(dim));
        }
        if comps.len() != dim {
            return Err(Error::Domain(format!(
                "expected {dim} components, got {}",
                comps.len()
            )));
        }
        let mut c = [0u32; 3];
        c[..dim].copy_from_slice(comps);
        Ok(Self { dim, comps: c })
    }

    pub fn zero(dim: usize) -> Self {
        Self::new(dim, &vec![0; dim]).expect("dim in {2,3}")
    }

    /// Unit index `e_axis`.
    pub fn unit(dim: usize, axis: usize) -> Self {
        let mut c = vec![0; dim];
        c[axis] = 1;
        Self::new(dim, &c).expect("dim in {2,3}")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[u32] {
        &self.comps[..self.dim]
    }

    pub fn component(&self, axis: usize) -> u32 {
        self.comps[axis]
    }

    /// |α|, the total order.
    pub fn order(&self) -> usize {
        self.components().iter().map(|&c| c as usize).sum()
    }

    /// Componentwise partial order β ≤ μ.
    pub fn is_sub_index_of(&self, mu: &MultiIndex) -> bool {
        self.dim == mu.dim
            && self
                .components()
                .iter()
                .zip(mu.components())
                .all(|(b, m)| b <= m)
    }

    /// Componentwise sum.
    pub fn add(&self, other: &MultiIndex) -> MultiIndex {
        debug_assert_eq!(self.dim, other.dim);
        let mut c = self.comps;
        for (ci, oi) in c.iter_mut().zip(other.comps.iter()) {
            *ci += oi;
        }
        Self { dim: self.dim, comps: c }
    }

    /// Componentwise difference μ − β; requires β ≤ μ.
    pub fn sub(&self, beta: &MultiIndex) -> Result<MultiIndex> {
        if !beta.is_sub_index_of(self) {
            return Err(Error::NotSubIndex {
                beta: beta.to_string(),
                mu: self.to_string(),
            });
        }
        let mut c = self.comps;
        for (ci, bi) in c.iter_mut().zip(beta.comps.iter()) {
            *ci -= bi;
        }
        Ok(Self { dim: self.dim, comps: c })
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.components().iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

/// All β with β ≤ μ and `lo <= |β| <= hi`, in lexicographic component order.
pub fn enumerate(mu: &MultiIndex, lo: usize, hi: usize) -> Result<Vec<MultiIndex>> {
    if lo > hi || hi > mu.order() {
        return Err(Error::OrderRange {
            lo,
            hi,
            order: mu.order(),
        });
    }
    let mut out = Vec::new();
    let d = mu.dim();
    let mut beta = vec![0u32; d];
    loop {
        let order: usize = beta.iter().map(|&c| c as usize).sum();
        if order >= lo && order <= hi {
            out.push(MultiIndex::new(d, &beta)?);
        }
        // odometer increment over the box 0..=mu, last axis fastest
        let mut axis = d;
        loop {
            if axis == 0 {
                return Ok(out);
            }
            axis -= 1;
            if beta[axis] < mu.component(axis) {
                beta[axis] += 1;
                break;
            }
            beta[axis] = 0;
        }
    }
}

/// Number of multi-indices of order `l` in `d` variables.
pub fn count_order(d: usize, l: usize) -> Result<u64> {
    match d {
        2 => Ok(l as u64 + 1),
        3 => Ok(((l as u64 + 1) * (l as u64 + 2)) / 2),
        _ => Err(Error::Dimension(d)),
    }
}

/// All multi-indices of order exactly `l` in `d` variables, lexicographic.
pub fn indices_of_order(d: usize, l: usize) -> Result<Vec<MultiIndex>> {
    if d != 2 && d != 3 {
        return Err(Error::Dimension(d));
    }
    let mut out = Vec::new();
    if d == 2 {
        for i in 0..=l {
            out.push(MultiIndex::new(2, &[i as u32, (l - i) as u32])?);
        }
    } else {
        for i in 0..=l {
            for j in 0..=(l - i) {
                out.push(MultiIndex::new(3, &[i as u32, j as u32, (l - i - j) as u32])?);
            }
        }
    }
    Ok(out)
}

fn binomial_1d(n: u32, k: u32) -> Result<u128> {
    debug_assert!(k <= n);
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k as u128 {
        acc = acc
            .checked_mul(n as u128 - i)
            .ok_or(Error::Overflow("binomial"))?;
        acc /= i + 1;
    }
    Ok(acc)
}

/// The multi-dimensional binomial coefficient μ!/((μ−β)!·β!), exact.
pub fn binomial(mu: &MultiIndex, beta: &MultiIndex) -> Result<u128> {
    if !beta.is_sub_index_of(mu) {
        return Err(Error::NotSubIndex {
            beta: beta.to_string(),
            mu: mu.to_string(),
        });
    }
    let mut acc: u128 = 1;
    for (m, b) in mu.components().iter().zip(beta.components()) {
        acc = acc
            .checked_mul(binomial_1d(*m, *b)?)
            .ok_or(Error::Overflow("multi-index binomial"))?;
    }
    Ok(acc)
}

/// The two inverse-power sums over sub-indices of μ:
/// `sum1 = Σ_{β≤μ, 1≤|β|≤|μ|} |β|⁻³` and
/// `sum2 = Σ_{β≤μ, 1≤|β|≤|μ|−1} (|β|²(|μ|−|β|))⁻¹`,
/// both by direct enumeration.
pub fn sub_index_sums(mu: &MultiIndex) -> Result<(f64, f64)> {
    let m = mu.order();
    if m == 0 {
        return Err(Error::Domain(
            "sub-index sums need |mu| >= 1".to_string(),
        ));
    }
    let mut sum1 = 0.0;
    let mut sum2 = 0.0;
    for beta in enumerate(mu, 1, m)? {
        let l = beta.order() as f64;
        sum1 += 1.0 / (l * l * l);
        if beta.order() <= m - 1 {
            sum2 += 1.0 / (l * l * (m as f64 - l));
        }
    }
    Ok((sum1, sum2))
}

/// Same sums recomputed by grouping sub-indices over their order, with the
/// per-order multiplicities taken from the generating polynomial
/// Π_i (1 + x + … + x^{μ_i}). Independent of [`sub_index_sums`].
pub fn sub_index_sums_grouped(mu: &MultiIndex) -> Result<(f64, f64)> {
    let m = mu.order();
    if m == 0 {
        return Err(Error::Domain(
            "sub-index sums need |mu| >= 1".to_string(),
        ));
    }
    // counts[l] = #{beta <= mu : |beta| = l}
    let mut counts = vec![0u64; m + 1];
    counts[0] = 1;
    for &c in mu.components() {
        let mut next = vec![0u64; m + 1];
        for (l, &n) in counts.iter().enumerate() {
            if n == 0 {
                continue;
            }
            for add in 0..=(c as usize) {
                if l + add <= m {
                    next[l + add] += n;
                }
            }
        }
        counts = next;
    }
    let mut sum1 = 0.0;
    let mut sum2 = 0.0;
    for (l, &n) in counts.iter().enumerate().skip(1) {
        let lf = l as f64;
        sum1 += n as f64 / (lf * lf * lf);
        if l <= m - 1 {
            sum2 += n as f64 / (lf * lf * (m as f64 - lf));
        }
    }
    Ok((sum1, sum2))
}

/// Representatives of all μ with `1 ≤ |μ| ≤ max_order`, up to permutation of
/// the components (the sums only depend on the sorted component multiset).
pub fn representatives(d: usize, max_order: usize) -> Result<Vec<MultiIndex>> {
    if d != 2 && d != 3 {
        return Err(Error::Dimension(d));
    }
    let mut out = Vec::new();
    for order in 1..=max_order {
        if d == 2 {
            for a in 0..=order / 2 {
                out.push(MultiIndex::new(2, &[(order - a) as u32, a as u32])?);
            }
        } else {
            for a in 0..=order {
                for b in 0..=a {
                    if order >= a + b && order - a - b <= b {
                        let c = order - a - b;
                        out.push(MultiIndex::new(3, &[a as u32, b as u32, c as u32])?);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Smallest constant C with `sum1(μ) ≤ C·|μ|^{σ−1}` and
/// `sum2(μ) ≤ C·|μ|^{σ−1}` over every μ with `1 ≤ |μ| ≤ max_order`.
pub fn fit_bound_constant(sigma: f64, max_order: usize, d: usize) -> Result<f64> {
    if sigma <= 1.0 {
        return Err(Error::Domain(format!("sigma = {sigma} must exceed 1")));
    }
    if max_order < 1 {
        return Err(Error::Domain("max_order must be >= 1".to_string()));
    }
    let mut best = 0.0f64;
    for mu in representatives(d, max_order)? {
        let (s1, s2) = sub_index_sums(&mu)?;
        let weight = (mu.order() as f64).powf(sigma - 1.0);
        best = best.max(s1 / weight).max(s2 / weight);
    }
    Ok(best)
}
