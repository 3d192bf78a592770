//! Expression trees for phases.
//!
//! The supported class of phases is exactly what these nodes can build:
//! constants, coordinates, sums, products, integer powers, `sin`, `cos`,
//! `exp` and a guarded reciprocal. Every node evaluates either to an `f64`
//! (fast path used by the quadrature oracle) or to a [`Jet`] (all partial
//! derivatives up to the jet order).

use std::collections::BTreeSet;
use std::ops;

use serde::{Deserialize, Serialize};

use crate::jet::{Jet, MAX_DIM};

/// Value with first partial derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual {
    pub v: f64,
    pub g: [f64; MAX_DIM],
}

impl Dual {
    pub fn constant(v: f64) -> Dual {
        Dual { v, g: [0.0; MAX_DIM] }
    }

    /// `f ∘ self`, given `(f(v), f'(v))`.
    fn chain(self, f: impl Fn(f64) -> (f64, f64)) -> Dual {
        let (v, dv) = f(self.v);
        Dual {
            v,
            g: self.g.map(|x| x * dv),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expr {
    Const(f64),
    /// Coordinate `ξ_i` (zero-based).
    Var(usize),
    Add(Vec<Expr>),
    Mul(Vec<Expr>),
    Neg(Box<Expr>),
    Powi(Box<Expr>, i32),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
    Exp(Box<Expr>),
    /// `1/x`, evaluating to NaN where `|x| < guard`.
    Recip { arg: Box<Expr>, guard: f64 },
}

pub fn c(v: f64) -> Expr {
    Expr::Const(v)
}

pub fn x(i: usize) -> Expr {
    Expr::Var(i)
}

impl Expr {
    pub fn sin(self) -> Expr {
        Expr::Sin(Box::new(self))
    }

    pub fn cos(self) -> Expr {
        Expr::Cos(Box::new(self))
    }

    pub fn exp(self) -> Expr {
        Expr::Exp(Box::new(self))
    }

    pub fn powi(self, n: i32) -> Expr {
        Expr::Powi(Box::new(self), n)
    }

    pub fn recip(self, guard: f64) -> Expr {
        Expr::Recip {
            arg: Box::new(self),
            guard,
        }
    }

    pub fn sum(terms: Vec<Expr>) -> Expr {
        match terms.len() {
            0 => Expr::Const(0.0),
            1 => terms.into_iter().next().unwrap(),
            _ => Expr::Add(terms),
        }
    }

    pub fn product(factors: Vec<Expr>) -> Expr {
        match factors.len() {
            0 => Expr::Const(1.0),
            1 => factors.into_iter().next().unwrap(),
            _ => Expr::Mul(factors),
        }
    }

    pub fn eval(&self, p: &[f64]) -> f64 {
        match self {
            Expr::Const(v) => *v,
            Expr::Var(i) => p[*i],
            Expr::Add(ts) => ts.iter().map(|t| t.eval(p)).sum(),
            Expr::Mul(fs) => fs.iter().map(|f| f.eval(p)).product(),
            Expr::Neg(a) => -a.eval(p),
            Expr::Powi(a, n) => a.eval(p).powi(*n),
            Expr::Sin(a) => a.eval(p).sin(),
            Expr::Cos(a) => a.eval(p).cos(),
            Expr::Exp(a) => a.eval(p).exp(),
            Expr::Recip { arg, guard } => {
                let v = arg.eval(p);
                if v.abs() < *guard {
                    f64::NAN
                } else {
                    1.0 / v
                }
            }
        }
    }

    /// Evaluates on coordinate jets (see [`Jet::variables`]).
    pub fn eval_jet(&self, vars: &[Jet]) -> Jet {
        let proto = &vars[0];
        match self {
            Expr::Const(v) => Jet::constant(proto.space(), proto.order(), *v),
            Expr::Var(i) => vars[*i].clone(),
            Expr::Add(ts) => {
                let mut acc = ts[0].eval_jet(vars);
                for t in &ts[1..] {
                    acc = acc.add(&t.eval_jet(vars));
                }
                acc
            }
            Expr::Mul(fs) => {
                let mut k = 1.0;
                let mut acc: Option<Jet> = None;
                for f in fs {
                    match f {
                        Expr::Const(v) => k *= v,
                        _ => {
                            let j = f.eval_jet(vars);
                            acc = Some(match acc {
                                None => j,
                                Some(a) => a.mul(&j),
                            });
                        }
                    }
                }
                match acc {
                    None => Jet::constant(proto.space(), proto.order(), k),
                    Some(a) if k == 1.0 => a,
                    Some(a) => a.scale(k),
                }
            }
            Expr::Neg(a) => a.eval_jet(vars).neg(),
            Expr::Powi(a, n) => a.eval_jet(vars).powi(*n),
            Expr::Sin(a) => a.eval_jet(vars).sin(),
            Expr::Cos(a) => a.eval_jet(vars).cos(),
            Expr::Exp(a) => a.eval_jet(vars).exp(),
            Expr::Recip { arg, guard } => {
                let j = arg.eval_jet(vars);
                if j.value().abs() < *guard {
                    Jet::constant(proto.space(), proto.order(), f64::NAN)
                } else {
                    j.recip()
                }
            }
        }
    }

    /// Value and gradient by forward-mode dual numbers, without allocation.
    pub fn eval_grad(&self, p: &[f64]) -> Dual {
        match self {
            Expr::Const(v) => Dual::constant(*v),
            Expr::Var(i) => {
                let mut g = [0.0; MAX_DIM];
                g[*i] = 1.0;
                Dual { v: p[*i], g }
            }
            Expr::Add(ts) => {
                let mut acc = ts[0].eval_grad(p);
                for t in &ts[1..] {
                    let b = t.eval_grad(p);
                    acc.v += b.v;
                    acc.g.iter_mut().zip(b.g).for_each(|(x, y)| *x += y);
                }
                acc
            }
            Expr::Mul(fs) => {
                let mut acc = fs[0].eval_grad(p);
                for f in &fs[1..] {
                    let b = f.eval_grad(p);
                    for k in 0..MAX_DIM {
                        acc.g[k] = acc.g[k] * b.v + acc.v * b.g[k];
                    }
                    acc.v *= b.v;
                }
                acc
            }
            Expr::Neg(a) => a.eval_grad(p).chain(|v| (-v, -1.0)),
            Expr::Powi(a, n) => a
                .eval_grad(p)
                .chain(|v| (v.powi(*n), if *n == 0 { 0.0 } else { *n as f64 * v.powi(*n - 1) })),
            Expr::Sin(a) => a.eval_grad(p).chain(|v| (v.sin(), v.cos())),
            Expr::Cos(a) => a.eval_grad(p).chain(|v| (v.cos(), -v.sin())),
            Expr::Exp(a) => a.eval_grad(p).chain(|v| (v.exp(), v.exp())),
            Expr::Recip { arg, guard } => arg.eval_grad(p).chain(|v| {
                if v.abs() < *guard {
                    (f64::NAN, f64::NAN)
                } else {
                    (1.0 / v, -1.0 / (v * v))
                }
            }),
        }
    }

    /// Coordinates the expression depends on.
    pub fn variables(&self) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<usize>) {
        match self {
            Expr::Const(_) => {}
            Expr::Var(i) => {
                out.insert(*i);
            }
            Expr::Add(ts) | Expr::Mul(ts) => ts.iter().for_each(|t| t.collect_vars(out)),
            Expr::Neg(a) | Expr::Powi(a, _) | Expr::Sin(a) | Expr::Cos(a) | Expr::Exp(a) => {
                a.collect_vars(out)
            }
            Expr::Recip { arg, .. } => arg.collect_vars(out),
        }
    }

    pub fn max_var(&self) -> Option<usize> {
        self.variables().into_iter().next_back()
    }

    /// Top-level additive terms, with nested sums, negations and constant
    /// multiples of sums flattened.
    fn additive_terms(&self, scale: f64, out: &mut Vec<Expr>) {
        match self {
            Expr::Add(ts) => ts.iter().for_each(|t| t.additive_terms(scale, out)),
            Expr::Neg(a) => a.additive_terms(-scale, out),
            Expr::Mul(fs) => {
                let mut k = 1.0;
                let mut rest = Vec::new();
                for f in fs {
                    match f {
                        Expr::Const(v) => k *= v,
                        other => rest.push(other),
                    }
                }
                match rest.as_slice() {
                    [single] if matches!(single, Expr::Add(_) | Expr::Neg(_) | Expr::Mul(_)) => {
                        single.additive_terms(scale * k, out)
                    }
                    _ => out.push(self.scaled_term(scale)),
                }
            }
            other => out.push(other.scaled_term(scale)),
        }
    }

    fn scaled_term(&self, scale: f64) -> Expr {
        if scale == 1.0 {
            self.clone()
        } else {
            self.scaled(scale)
        }
    }

    /// Splits `Φ(ξ) = c + Σ_i f_i(ξ_i)` when every additive term depends on at
    /// most one coordinate. Returns the constant and one expression per axis.
    pub fn split_separable(&self, dim: usize) -> Option<(f64, Vec<Expr>)> {
        let mut terms = Vec::new();
        self.additive_terms(1.0, &mut terms);
        let mut constant = 0.0;
        let mut per_axis: Vec<Vec<Expr>> = vec![Vec::new(); dim];
        for t in terms {
            let vars = t.variables();
            match vars.len() {
                0 => constant += t.eval(&vec![0.0; dim]),
                1 => {
                    let i = *vars.iter().next().unwrap();
                    if i >= dim {
                        return None;
                    }
                    per_axis[i].push(t);
                }
                _ => return None,
            }
        }
        Some((constant, per_axis.into_iter().map(Expr::sum).collect()))
    }

    /// `s · self`.
    pub fn scaled(&self, s: f64) -> Expr {
        Expr::Mul(vec![Expr::Const(s), self.clone()])
    }
}

impl ops::Add for Expr {
    type Output = Expr;
    fn add(self, rhs: Expr) -> Expr {
        Expr::Add(vec![self, rhs])
    }
}

impl ops::Sub for Expr {
    type Output = Expr;
    fn sub(self, rhs: Expr) -> Expr {
        Expr::Add(vec![self, Expr::Neg(Box::new(rhs))])
    }
}

impl ops::Mul for Expr {
    type Output = Expr;
    fn mul(self, rhs: Expr) -> Expr {
        Expr::Mul(vec![self, rhs])
    }
}

impl ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::Neg(Box::new(self))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn jet_matches_value_path() {
        let e = c(0.5) * x(0).powi(2) + c(0.1) * x(0).sin() * x(1).exp() - x(1).recip(1e-12);
        let p = [0.4, 1.3];
        let j = e.eval_jet(&Jet::variables(&p, 3));
        assert_relative_eq!(j.value(), e.eval(&p), epsilon = 1e-15);
    }

    #[test]
    fn dual_gradient_matches_jet() {
        let e = c(0.5) * x(0).powi(3) + c(0.1) * x(0).sin() * x(1).exp() - x(1).recip(1e-12) + x(0).cos() * x(1);
        let p = [0.4, 1.3];
        let j = e.eval_jet(&Jet::variables(&p, 1));
        let g = e.eval_grad(&p);
        assert_relative_eq!(g.v, j.value(), epsilon = 1e-15);
        assert_relative_eq!(g.g[0], j.coeffs()[1], epsilon = 1e-14);
        assert_relative_eq!(g.g[1], j.coeffs()[2], epsilon = 1e-14);
    }

    #[test]
    fn separable_split() {
        let e = c(0.5) * x(0).powi(2) + c(1.0) * x(1).powi(2) + c(0.05) * x(0).cos() + c(3.0);
        let (k, parts) = e.split_separable(2).unwrap();
        assert_eq!(k, 3.0);
        let p = [0.3, -0.8];
        assert_relative_eq!(parts[0].eval(&p) + parts[1].eval(&p) + k, e.eval(&p));
        let scaled_sum = c(0.5) * x(0).powi(2) + c(0.1) * (x(0).cos() + x(1).cos()) - c(2.0) * x(1);
        let (_, parts) = scaled_sum.split_separable(2).unwrap();
        assert_relative_eq!(parts[0].eval(&p) + parts[1].eval(&p), scaled_sum.eval(&p), epsilon = 1e-15);
        let coupled = x(0) * x(1);
        assert!(coupled.split_separable(2).is_none());
    }

    #[test]
    fn guarded_recip_is_nan_inside_guard() {
        let e = x(0).recip(1e-3);
        assert!(e.eval(&[1e-4]).is_nan());
        assert_eq!(e.eval(&[2.0]), 0.5);
    }
}
