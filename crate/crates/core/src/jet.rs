//! Truncated multivariate Taylor arithmetic ("jets").
//!
//! A [`Jet`] of order `m` in `d` variables stores the Taylor coefficients
//! `t_α = D^α f(x₀) / α!` for every multi-index `|α| ≤ m`. Products are Cauchy
//! products, elementary functions are applied by composing their univariate
//! Taylor series with the non-constant part, and `∂_i` lowers the order by one.
//! This gives all partial derivatives up to order `m` to machine precision.
//!
//! Multi-indices are stored in graded order (by total degree), so the
//! coefficients of an order-`m'` jet are a prefix of those of any higher order
//! jet at the same point. Truncation is therefore a slice operation.

use std::collections::HashMap;
use std::fmt;
use std::sync::OnceLock;

/// Highest jet order supported by the shared index tables.
pub const MAX_ORDER: usize = 9;
/// Highest number of variables supported.
pub const MAX_DIM: usize = 5;

/// Index tables shared by every jet in a given dimension.
pub struct JetSpace {
    dim: usize,
    /// Flattened multi-indices, `dim` entries per index, graded order.
    exps: Vec<u8>,
    /// Number of multi-indices with `|α| ≤ m`.
    len_upto: [usize; MAX_ORDER + 1],
    /// `(γ, α, β)` with `α + β = γ`, sorted by `γ`.
    mul: Vec<(u32, u32, u32)>,
    mul_upto: [usize; MAX_ORDER + 1],
    /// `shift[i * n + k]` is the index of `α_k + e_i`, or `u32::MAX` past the top order.
    shift: Vec<u32>,
    /// `α!` for each index.
    fact: Vec<f64>,
    /// For each index: the axis `i` if it is `k·e_i` with `k ≥ 1`,
    /// `CONSTANT` for the zero index, `MIXED` otherwise.
    axis_of: Vec<u8>,
    /// `pure[i * (MAX_ORDER + 1) + k]` is the index of `k·e_i`.
    pure: Vec<u32>,
    lookup: HashMap<Vec<u8>, usize>,
}

impl fmt::Debug for JetSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("JetSpace")
            .field("dim", &self.dim)
            .field("len", &self.len_upto[MAX_ORDER])
            .finish()
    }
}

const CONSTANT: u8 = u8::MAX;
const MIXED: u8 = u8::MAX - 1;

fn compositions(total: usize, parts: usize, out: &mut Vec<Vec<u8>>, prefix: &mut Vec<u8>) {
    if parts == 1 {
        prefix.push(total as u8);
        out.push(prefix.clone());
        prefix.pop();
        return;
    }
    for first in (0..=total).rev() {
        prefix.push(first as u8);
        compositions(total - first, parts - 1, out, prefix);
        prefix.pop();
    }
}

impl JetSpace {
    fn build(dim: usize) -> Self {
        let mut all: Vec<Vec<u8>> = Vec::new();
        let mut len_upto = [0usize; MAX_ORDER + 1];
        for m in 0..=MAX_ORDER {
            compositions(m, dim, &mut all, &mut Vec::with_capacity(dim));
            len_upto[m] = all.len();
        }
        let n = all.len();
        let lookup: HashMap<Vec<u8>, usize> =
            all.iter().enumerate().map(|(k, a)| (a.clone(), k)).collect();

        let mut mul = Vec::new();
        let mut mul_upto = [0usize; MAX_ORDER + 1];
        let mut deg = 0;
        for (g, gamma) in all.iter().enumerate() {
            let gdeg: usize = gamma.iter().map(|&e| e as usize).sum();
            while deg < gdeg {
                mul_upto[deg] = mul.len();
                deg += 1;
            }
            let gdeg_len = len_upto[gdeg];
            for (a, alpha) in all[..gdeg_len].iter().enumerate() {
                if alpha.iter().zip(gamma).all(|(x, y)| x <= y) {
                    let beta: Vec<u8> = gamma.iter().zip(alpha).map(|(y, x)| y - x).collect();
                    mul.push((g as u32, a as u32, lookup[&beta] as u32));
                }
            }
        }
        while deg <= MAX_ORDER {
            mul_upto[deg] = mul.len();
            deg += 1;
        }

        let mut shift = vec![u32::MAX; dim * n];
        for i in 0..dim {
            for (k, alpha) in all.iter().enumerate() {
                let mut up = alpha.clone();
                up[i] += 1;
                if let Some(&j) = lookup.get(&up) {
                    shift[i * n + k] = j as u32;
                }
            }
        }
        let fact = all
            .iter()
            .map(|a| a.iter().map(|&e| factorial(e as usize)).product())
            .collect();
        let exps = all.iter().flatten().copied().collect();
        let axis_of = all
            .iter()
            .map(|a| {
                let nz: Vec<usize> = (0..dim).filter(|&i| a[i] > 0).collect();
                match nz.as_slice() {
                    [] => CONSTANT,
                    [i] => *i as u8,
                    _ => MIXED,
                }
            })
            .collect();
        let mut pure = vec![0u32; dim * (MAX_ORDER + 1)];
        for i in 0..dim {
            for k in 0..=MAX_ORDER {
                let mut a = vec![0u8; dim];
                a[i] = k as u8;
                pure[i * (MAX_ORDER + 1) + k] = lookup[&a] as u32;
            }
        }

        JetSpace {
            dim,
            exps,
            len_upto,
            mul,
            mul_upto,
            shift,
            fact,
            axis_of,
            pure,
            lookup,
        }
    }

    /// Shared tables for dimension `dim` (1..=MAX_DIM).
    pub fn get(dim: usize) -> &'static JetSpace {
        static SPACES: [OnceLock<JetSpace>; MAX_DIM] = [const { OnceLock::new() }; MAX_DIM];
        assert!(
            (1..=MAX_DIM).contains(&dim),
            "jet dimension {dim} outside 1..={MAX_DIM}"
        );
        SPACES[dim - 1].get_or_init(|| JetSpace::build(dim))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of coefficients of an order-`m` jet.
    pub fn len(&self, order: usize) -> usize {
        self.len_upto[order]
    }

    /// Multi-index stored at position `k`.
    pub fn multi_index(&self, k: usize) -> &[u8] {
        &self.exps[k * self.dim..(k + 1) * self.dim]
    }

    pub fn index_of(&self, alpha: &[u8]) -> Option<usize> {
        self.lookup.get(alpha).copied()
    }

    pub fn degree(&self, k: usize) -> usize {
        self.multi_index(k).iter().map(|&e| e as usize).sum()
    }

    /// `out += a · b` truncated at `order`. All three slices must hold at
    /// least `len(order)` coefficients.
    fn mul_into(&self, order: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
        let len = self.len_upto[order];
        assert!(a.len() >= len && b.len() >= len && out.len() >= len);
        for &(g, i, j) in &self.mul[..self.mul_upto[order]] {
            // SAFETY: every triple up to `mul_upto[order]` indexes a
            // multi-index of degree ≤ order, i.e. a position below `len`,
            // and the assert above covers all three slices.
            unsafe {
                *out.get_unchecked_mut(g as usize) += a.get_unchecked(i as usize) * b.get_unchecked(j as usize);
            }
        }
    }

    /// `α!` for the index at position `k`.
    pub fn factorial(&self, k: usize) -> f64 {
        self.fact[k]
    }
}

pub fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Multinomial coefficient `|α|! / α!`: the number of ordered index tuples
/// that collapse onto `α`.
pub fn multinomial(alpha: &[u8]) -> f64 {
    let total: usize = alpha.iter().map(|&e| e as usize).sum();
    factorial(total) / alpha.iter().map(|&e| factorial(e as usize)).product::<f64>()
}

/// Truncated Taylor expansion at a point.
#[derive(Clone)]
pub struct Jet {
    space: &'static JetSpace,
    order: usize,
    coeffs: Vec<f64>,
}

impl fmt::Debug for Jet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Jet")
            .field("dim", &self.space.dim)
            .field("order", &self.order)
            .field("coeffs", &self.coeffs)
            .finish()
    }
}

impl Jet {
    pub fn constant(space: &'static JetSpace, order: usize, value: f64) -> Jet {
        assert!(order <= MAX_ORDER, "jet order {order} exceeds {MAX_ORDER}");
        let mut coeffs = vec![0.0; space.len(order)];
        coeffs[0] = value;
        Jet {
            space,
            order,
            coeffs,
        }
    }

    pub fn zero(space: &'static JetSpace, order: usize) -> Jet {
        Jet::constant(space, order, 0.0)
    }

    /// The coordinate function `x_i` expanded at `value`.
    pub fn variable(space: &'static JetSpace, order: usize, value: f64, i: usize) -> Jet {
        let mut j = Jet::constant(space, order, value);
        if order >= 1 {
            j.coeffs[1 + i] = 1.0;
        }
        j
    }

    /// All coordinate jets at `point`.
    pub fn variables(point: &[f64], order: usize) -> Vec<Jet> {
        let space = JetSpace::get(point.len());
        point
            .iter()
            .enumerate()
            .map(|(i, &v)| Jet::variable(space, order, v, i))
            .collect()
    }

    pub fn from_coeffs(space: &'static JetSpace, order: usize, coeffs: Vec<f64>) -> Jet {
        assert_eq!(coeffs.len(), space.len(order));
        Jet {
            space,
            order,
            coeffs,
        }
    }

    pub fn space(&self) -> &'static JetSpace {
        self.space
    }

    pub fn dim(&self) -> usize {
        self.space.dim
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn value(&self) -> f64 {
        self.coeffs[0]
    }

    /// Taylor coefficients `D^α f / α!` in graded order.
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// `D^α f` at the expansion point, for the index stored at position `k`.
    pub fn derivative_at(&self, k: usize) -> f64 {
        self.coeffs[k] * self.space.fact[k]
    }

    /// `D^α f` for an explicit multi-index.
    pub fn partial(&self, alpha: &[u8]) -> f64 {
        let k = self
            .space
            .index_of(alpha)
            .expect("multi-index dimension mismatch");
        assert!(k < self.coeffs.len(), "multi-index above jet order");
        self.derivative_at(k)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0.0)
    }

    pub fn truncate(&self, order: usize) -> Jet {
        let order = order.min(self.order);
        Jet {
            space: self.space,
            order,
            coeffs: self.coeffs[..self.space.len(order)].to_vec(),
        }
    }

    /// `∂_i f`, one order lower.
    pub fn diff(&self, i: usize) -> Jet {
        assert!(self.order >= 1, "cannot differentiate an order-0 jet");
        let space = self.space;
        let order = self.order - 1;
        let n = space.len(MAX_ORDER);
        let len = space.len(order);
        let mut coeffs = Vec::with_capacity(len);
        for k in 0..len {
            let up = space.shift[i * n + k] as usize;
            let e = space.exps[k * space.dim + i] as f64;
            coeffs.push((e + 1.0) * self.coeffs[up]);
        }
        Jet {
            space,
            order,
            coeffs,
        }
    }

    pub fn scale(&self, s: f64) -> Jet {
        Jet {
            space: self.space,
            order: self.order,
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
        }
    }

    pub fn add_scalar(&self, s: f64) -> Jet {
        let mut out = self.clone();
        out.coeffs[0] += s;
        out
    }

    fn zip_with(&self, other: &Jet, f: impl Fn(f64, f64) -> f64) -> Jet {
        debug_assert!(std::ptr::eq(self.space, other.space));
        let order = self.order.min(other.order);
        let len = self.space.len(order);
        Jet {
            space: self.space,
            order,
            coeffs: self.coeffs[..len]
                .iter()
                .zip(&other.coeffs[..len])
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add(&self, other: &Jet) -> Jet {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Jet) -> Jet {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Jet) -> Jet {
        debug_assert!(std::ptr::eq(self.space, other.space));
        let order = self.order.min(other.order);
        let space = self.space;
        let mut coeffs = vec![0.0; space.len(order)];
        match (self.single_axis(), other.single_axis()) {
            (Some(i), Some(j)) if i == j || self.is_constant() || other.is_constant() => {
                let axis = if self.is_constant() { j } else { i };
                let base = axis * (MAX_ORDER + 1);
                let pure = &space.pure[base..base + order + 1];
                for a in 0..=order {
                    let x = self.coeffs[pure[a] as usize];
                    if x == 0.0 {
                        continue;
                    }
                    for b in 0..=order - a {
                        coeffs[pure[a + b] as usize] += x * other.coeffs[pure[b] as usize];
                    }
                }
            }
            _ => space.mul_into(order, &self.coeffs, &other.coeffs, &mut coeffs),
        }
        Jet {
            space,
            order,
            coeffs,
        }
    }

    fn is_constant(&self) -> bool {
        self.coeffs[1..].iter().all(|&c| c == 0.0)
    }

    /// `self += s * other` in place.
    pub fn axpy(&mut self, s: f64, other: &Jet) {
        let len = self.coeffs.len().min(other.coeffs.len());
        self.coeffs.truncate(len);
        self.order = self.order.min(other.order);
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += s * b;
        }
    }

    /// Applies a univariate function given its Taylor coefficients
    /// `f^{(k)}(u₀)/k!` at `u₀ = self.value()`, for `k = 0..=order`.
    pub fn compose(&self, taylor: &[f64]) -> Jet {
        let order = self.order;
        debug_assert!(taylor.len() > order);
        if let Some(i) = self.single_axis() {
            return self.compose_univariate(i, taylor);
        }
        let mut h = self.coeffs.clone();
        h[0] = 0.0;
        let len = h.len();
        let mut r = vec![0.0; len];
        let mut tmp = vec![0.0; len];
        r[0] = taylor[order];
        for k in (0..order).rev() {
            tmp.fill(0.0);
            self.space.mul_into(order, &r, &h, &mut tmp);
            std::mem::swap(&mut r, &mut tmp);
            r[0] += taylor[k];
        }
        Jet {
            space: self.space,
            order,
            coeffs: r,
        }
    }

    /// The axis `i` when the jet depends on `x_i` alone (axis 0 for a
    /// constant), else `None`.
    fn single_axis(&self) -> Option<usize> {
        let mut axis = CONSTANT;
        for (k, &c) in self.coeffs.iter().enumerate().skip(1) {
            if c == 0.0 {
                continue;
            }
            match self.space.axis_of[k] {
                MIXED => return None,
                a if axis == CONSTANT => axis = a,
                a if a != axis => return None,
                _ => {}
            }
        }
        Some(if axis == CONSTANT { 0 } else { axis as usize })
    }

    /// Composition by one-variable Taylor arithmetic along `x_i`.
    fn compose_univariate(&self, i: usize, taylor: &[f64]) -> Jet {
        let order = self.order;
        let base = i * (MAX_ORDER + 1);
        let pure = &self.space.pure[base..base + order + 1];
        let mut h = [0.0; MAX_ORDER + 1];
        for k in 1..=order {
            h[k] = self.coeffs[pure[k] as usize];
        }
        let mut r = [0.0; MAX_ORDER + 1];
        r[0] = taylor[order];
        for k in (0..order).rev() {
            let mut next = [0.0; MAX_ORDER + 1];
            for a in 0..=order {
                if r[a] == 0.0 {
                    continue;
                }
                for b in 1..=order - a {
                    next[a + b] += r[a] * h[b];
                }
            }
            next[0] += taylor[k];
            r = next;
        }
        let mut coeffs = vec![0.0; self.coeffs.len()];
        for k in 0..=order {
            coeffs[pure[k] as usize] = r[k];
        }
        Jet {
            space: self.space,
            order,
            coeffs,
        }
    }

    pub fn exp(&self) -> Jet {
        let e = self.value().exp();
        let t: Vec<f64> = (0..=self.order).map(|k| e / factorial(k)).collect();
        self.compose(&t)
    }

    pub fn sin(&self) -> Jet {
        let (s, c) = self.value().sin_cos();
        let cycle = [s, c, -s, -c];
        let t: Vec<f64> = (0..=self.order)
            .map(|k| cycle[k % 4] / factorial(k))
            .collect();
        self.compose(&t)
    }

    pub fn cos(&self) -> Jet {
        let (s, c) = self.value().sin_cos();
        let cycle = [c, -s, -c, s];
        let t: Vec<f64> = (0..=self.order)
            .map(|k| cycle[k % 4] / factorial(k))
            .collect();
        self.compose(&t)
    }

    pub fn recip(&self) -> Jet {
        let u = self.value();
        let inv = 1.0 / u;
        let mut t = Vec::with_capacity(self.order + 1);
        let mut p = inv;
        for k in 0..=self.order {
            t.push(if k % 2 == 0 { p } else { -p });
            p *= inv;
        }
        self.compose(&t)
    }

    pub fn div(&self, other: &Jet) -> Jet {
        self.mul(&other.recip())
    }

    /// `u^p` for real `p`; requires `u₀ > 0` unless `p` is a nonnegative integer.
    pub fn powf(&self, p: f64) -> Jet {
        let u = self.value();
        let mut t = Vec::with_capacity(self.order + 1);
        let mut binom = 1.0;
        for k in 0..=self.order {
            let kf = k as f64;
            t.push(if binom == 0.0 { 0.0 } else { binom * u.powf(p - kf) });
            binom *= (p - kf) / (kf + 1.0);
        }
        self.compose(&t)
    }

    pub fn powi(&self, n: i32) -> Jet {
        if n < 0 {
            return self.powi(-n).recip();
        }
        let mut out: Option<Jet> = None;
        let mut base = self.clone();
        let mut e = n as u32;
        while e > 0 {
            if e & 1 == 1 {
                out = Some(match out {
                    None => base.clone(),
                    Some(o) => o.mul(&base),
                });
            }
            e >>= 1;
            if e > 0 {
                base = base.mul(&base);
            }
        }
        out.unwrap_or_else(|| Jet::constant(self.space, self.order, 1.0))
    }

    pub fn sqrt(&self) -> Jet {
        self.powf(0.5)
    }

    pub fn ln(&self) -> Jet {
        let u = self.value();
        let mut t = Vec::with_capacity(self.order + 1);
        t.push(u.ln());
        let mut p = 1.0;
        for k in 1..=self.order {
            p /= u;
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            t.push(sign * p / k as f64);
        }
        self.compose(&t)
    }

    pub fn neg(&self) -> Jet {
        self.scale(-1.0)
    }
}

impl std::ops::Add for &Jet {
    type Output = Jet;
    fn add(self, rhs: &Jet) -> Jet {
        Jet::add(self, rhs)
    }
}

impl std::ops::Sub for &Jet {
    type Output = Jet;
    fn sub(self, rhs: &Jet) -> Jet {
        Jet::sub(self, rhs)
    }
}

impl std::ops::Mul for &Jet {
    type Output = Jet;
    fn mul(self, rhs: &Jet) -> Jet {
        Jet::mul(self, rhs)
    }
}

impl std::ops::Neg for &Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        Jet::neg(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn graded_prefix_layout() {
        let s = JetSpace::get(2);
        assert_eq!(s.len(0), 1);
        assert_eq!(s.len(1), 3);
        assert_eq!(s.len(2), 6);
        assert_eq!(s.multi_index(1), &[1, 0]);
        assert_eq!(s.multi_index(2), &[0, 1]);
        assert_eq!(s.multi_index(4), &[1, 1]);
    }

    #[test]
    fn exp_series_one_variable() {
        let x = Jet::variables(&[0.0], 5).remove(0);
        let e = x.exp();
        for k in 0..=5 {
            assert_relative_eq!(e.coeffs()[k], 1.0 / factorial(k), epsilon = 1e-15);
        }
    }

    #[test]
    fn product_rule_two_variables() {
        // f = x^2 y at (2, 3): f_xy = 2x = 4, f_xx = 2y = 6, f_xxy = 2
        let v = Jet::variables(&[2.0, 3.0], 3);
        let f = v[0].mul(&v[0]).mul(&v[1]);
        assert_relative_eq!(f.value(), 12.0);
        assert_relative_eq!(f.partial(&[1, 1]), 4.0);
        assert_relative_eq!(f.partial(&[2, 0]), 6.0);
        assert_relative_eq!(f.partial(&[2, 1]), 2.0);
        assert_relative_eq!(f.partial(&[0, 2]), 0.0);
    }

    #[test]
    fn diff_lowers_order_and_matches_partials() {
        let v = Jet::variables(&[0.3, -0.7], 4);
        let f = v[0].sin().mul(&v[1].exp());
        let fx = f.diff(0);
        assert_eq!(fx.order(), 3);
        assert_relative_eq!(fx.partial(&[0, 2]), f.partial(&[1, 2]), epsilon = 1e-14);
        assert_relative_eq!(fx.partial(&[2, 1]), f.partial(&[3, 1]), epsilon = 1e-14);
    }

    #[test]
    fn recip_and_sqrt_derivatives() {
        let x = Jet::variables(&[4.0], 3).remove(0);
        let r = x.recip();
        assert_relative_eq!(r.partial(&[1]), -1.0 / 16.0);
        assert_relative_eq!(r.partial(&[2]), 2.0 / 64.0);
        let s = x.sqrt();
        assert_relative_eq!(s.partial(&[1]), 0.25);
        assert_relative_eq!(s.partial(&[2]), -1.0 / 32.0);
    }

    #[test]
    fn univariate_composition_matches_general_path() {
        let v = Jet::variables(&[0.3, -0.7, 0.2], 5);
        let u = v[1].mul(&v[1]).add_scalar(0.5);
        let (s, c) = u.value().sin_cos();
        let cycle = [s, c, -s, -c];
        let t: Vec<f64> = (0..=5).map(|k| cycle[k % 4] / factorial(k)).collect();
        let fast = u.compose(&t);
        // A zero-valued mixed coefficient keeps the jet on the one-variable
        // path; a tiny nonzero one forces the general Horner loop.
        let mut mixed = u.clone();
        let k = mixed.space().index_of(&[1, 1, 0]).unwrap();
        mixed.coeffs[k] = 1e-300;
        let slow = mixed.compose(&t);
        for (a, b) in fast.coeffs().iter().zip(slow.coeffs()) {
            assert!((a - b).abs() < 1e-13, "{a} vs {b}");
        }
        // sin(y² + 1/2) at y = 1
        let y = &Jet::variables(&[0.0, 1.0, 0.0], 3)[1];
        let w = y.mul(y).add_scalar(0.5).sin();
        assert_relative_eq!(w.value(), 1.5f64.sin(), epsilon = 1e-15);
        assert_relative_eq!(w.partial(&[0, 1, 0]), 2.0 * 1.5f64.cos(), epsilon = 1e-14);
        assert_relative_eq!(w.partial(&[0, 2, 0]), 2.0 * 1.5f64.cos() - 4.0 * 1.5f64.sin(), epsilon = 1e-13);
    }

    #[test]
    fn multinomial_counts_ordered_tuples() {
        assert_eq!(multinomial(&[1, 1]), 2.0);
        assert_eq!(multinomial(&[2, 1]), 3.0);
        assert_eq!(multinomial(&[2, 0]), 1.0);
    }
}
