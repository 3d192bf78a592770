//! Non-stationary machinery: the field `A = ∇Φ/|∇Φ|²`, the operator
//! `L = A·∇`, the powers `(ᵗL)^N v` with `ᵗL v = Σ_i ∂_i(A_i v)`, and the
//! cutoff `ψ`.
//!
//! `X = (1/iλ) L` reproduces the exponential: `X e^{iλΦ} = e^{iλΦ}`. Its
//! formal transpose is `ᵗX = −(1/iλ) ᵗL = (i/λ) ᵗL`, so integrating by parts
//! `N` times gives `∫ e^{iλΦ} u = (i/λ)^N ∫ e^{iλΦ} (ᵗL)^N u`.
//!
//! `(ᵗL)^N` is evaluated two ways: by `N` nested applications of
//! `g ↦ Σ_i ∂_i(A_i g)`, and through the coefficients `c_{α,N}` of
//! `(ᵗL)^N = Σ_{|α|≤N} c_{α,N} ∂^α` built by the recursion
//! `c_{γ,N+1} = (div A) c_{γ,N} + A·∇c_{γ,N} + Σ_i A_i c_{γ−e_i,N}`.

use std::io::Write;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audit::random_point;
use crate::bump::Transition;
use crate::deriv::PhaseModel;
use crate::domain::BoxDomain;
use crate::table::fmt_f64;
use crate::error::{Error, Result};
use crate::jet::{Jet, JetSpace, MAX_ORDER};

/// `|∇Φ|` below this marks a critical point.
pub const GRADIENT_FLOOR: f64 = 1e-14;

/// `ψ(x) = 1` for `|x| ≤ 1`, `0` for `|x| ≥ 2`, smooth and monotone between.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cutoff {
    pub transition: Transition,
}

impl Cutoff {
    pub fn new(transition: Transition) -> Self {
        Cutoff { transition }
    }

    pub fn value(&self, x: f64) -> f64 {
        self.transition.step(x.abs() - 1.0)
    }

    /// `ψ^{(k)}(x)`.
    pub fn deriv(&self, x: f64, order: usize) -> f64 {
        let space = JetSpace::get(1);
        let t = Jet::variable(space, order, x.abs() - 1.0, 0);
        let j = self.transition.step_jet(&t);
        let sign = if x < 0.0 && order % 2 == 1 { -1.0 } else { 1.0 };
        sign * j.partial(&[order as u8])
    }

    /// `ψ(s)` for a jet `s ≥ 0`.
    pub fn jet(&self, s: &Jet) -> Jet {
        self.transition.step_jet(&s.add_scalar(-1.0))
    }

    /// Jet of `ξ ↦ ψ(√λ |∇Φ(ξ)|)`, given the jet of `Φ` at `ξ` (one order
    /// higher than the result).
    pub fn composite_jet(&self, phi: &Jet, lambda: f64) -> Jet {
        let order = phi.order().saturating_sub(1);
        let space = phi.space();
        let g2: f64 = phi.coeffs()[1..=phi.dim()].iter().map(|g| g * g).sum();
        let s = lambda.sqrt() * g2.sqrt();
        if s <= 1.0 {
            return Jet::constant(space, order, 1.0);
        }
        if s >= 2.0 {
            return Jet::zero(space, order);
        }
        self.jet(&grad_norm_jet(phi).scale(lambda.sqrt()))
    }
}

fn unit(d: usize, i: usize) -> Vec<u8> {
    let mut a = vec![0u8; d];
    a[i] = 1;
    a
}

/// Jets of `∂_iΦ`, one order below `phi`.
pub fn gradient_jets(phi: &Jet) -> Vec<Jet> {
    (0..phi.dim()).map(|i| phi.diff(i)).collect()
}

/// Jet of `|∇Φ|`, one order below `phi`. Requires `∇Φ ≠ 0`.
pub fn grad_norm_jet(phi: &Jet) -> Jet {
    let g = gradient_jets(phi);
    let mut s = Jet::zero(phi.space(), phi.order() - 1);
    for gi in &g {
        s = s.add(&gi.mul(gi));
    }
    s.sqrt()
}

fn check_gradient(phase: &PhaseModel, xi: &[f64], floor: f64) -> Result<()> {
    let n = phase.gradient(xi).iter().map(|v| v * v).sum::<f64>().sqrt();
    if n < floor || !n.is_finite() {
        return Err(Error::NearCritical {
            point: xi.to_vec(),
            grad_norm: n,
            floor,
        });
    }
    Ok(())
}

fn check_order(n: usize, extra: usize) -> Result<()> {
    if n + extra + 1 > MAX_ORDER {
        return Err(Error::Capability {
            requested: n + extra + 1,
            available: MAX_ORDER,
        });
    }
    Ok(())
}

/// Jets of `A_i = ∂_iΦ/|∇Φ|²` from the jet of `Φ` (one order lower).
pub fn field_jets(phi: &Jet) -> Vec<Jet> {
    let g = gradient_jets(phi);
    let mut s = Jet::zero(phi.space(), phi.order() - 1);
    for gi in &g {
        s = s.add(&gi.mul(gi));
    }
    let inv = s.recip();
    g.iter().map(|gi| gi.mul(&inv)).collect()
}

/// `A` and its derivatives up to `order` at `xi`, one jet per component.
pub fn field_a(phase: &PhaseModel, xi: &[f64], order: usize) -> Result<Vec<Jet>> {
    check_order(order, 0)?;
    check_gradient(phase, xi, GRADIENT_FLOOR)?;
    Ok(field_jets(&phase.jet(xi, order + 1)))
}

fn divergence(a: &[Jet]) -> Jet {
    let mut div = a[0].diff(0);
    for (i, ai) in a.iter().enumerate().skip(1) {
        div = div.add(&ai.diff(i));
    }
    div
}

/// Coefficients `c_{α,N}` of `(ᵗL)^N` at one point.
#[derive(Clone, Debug)]
pub struct IbpCoefficients {
    pub order: usize,
    pub point: Vec<f64>,
    /// Jets of `c_{α,N}`, indexed like [`JetSpace::multi_index`] for `|α| ≤ N`.
    jets: Vec<Jet>,
}

impl IbpCoefficients {
    pub fn dim(&self) -> usize {
        self.point.len()
    }

    /// `c_{α,N}(ξ)`.
    pub fn get(&self, alpha: &[u8]) -> f64 {
        let space = JetSpace::get(self.dim());
        match space.index_of(alpha) {
            Some(k) if k < self.jets.len() => self.jets[k].value(),
            _ => 0.0,
        }
    }

    /// `∂^β c_{α,N}(ξ)`, for `|β|` up to the extra order requested.
    pub fn derivative(&self, alpha: &[u8], beta: &[u8]) -> f64 {
        let space = JetSpace::get(self.dim());
        match space.index_of(alpha) {
            Some(k) if k < self.jets.len() => self.jets[k].partial(beta),
            _ => 0.0,
        }
    }

    /// `(α, c_{α,N})` for every `|α| ≤ N`.
    pub fn entries(&self) -> impl Iterator<Item = (&[u8], f64)> + '_ {
        let space = JetSpace::get(self.dim());
        self.jets.iter().enumerate().map(move |(k, j)| (space.multi_index(k), j.value()))
    }

    /// Writes `x_1..x_d,alpha,N,value` rows (α as `a1;a2;…`).
    pub fn write_csv<W: Write>(&self, out: W, header: bool) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        if header {
            let mut h: Vec<String> = (1..=self.dim()).map(|i| format!("x{i}")).collect();
            h.extend(["alpha".into(), "N".into(), "value".into()]);
            w.write_record(&h)?;
        }
        for (alpha, v) in self.entries() {
            let mut row: Vec<String> = self.point.iter().map(|x| fmt_f64(*x)).collect();
            row.push(alpha.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(";"));
            row.push(self.order.to_string());
            row.push(fmt_f64(v));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs the coefficient recursion up to `n`, keeping `extra` orders of
/// derivatives of the final coefficients. Returns `c_{·,k}` for `k = 0..=n`.
fn coefficient_ladder(phase: &PhaseModel, xi: &[f64], n: usize, extra: usize) -> Result<Vec<Vec<Jet>>> {
    check_order(n, extra)?;
    check_gradient(phase, xi, GRADIENT_FLOOR)?;
    let d = phase.dim();
    let space = JetSpace::get(d);
    let top = n + extra;
    let phi = phase.jet(xi, top + 1);
    let a = field_jets(&phi);
    let div = divergence(&a);
    let mut ladder = vec![vec![Jet::constant(space, top, 1.0)]];
    for k in 0..n {
        let prev = &ladder[k];
        let ord = top - k - 1;
        let a_k: Vec<Jet> = a.iter().map(|j| j.truncate(ord)).collect();
        let div_k = div.truncate(ord);
        let mut next = Vec::with_capacity(space.len(k + 1));
        for g in 0..space.len(k + 1) {
            let gamma = space.multi_index(g);
            let mut c = Jet::zero(space, ord);
            // (div A) c_{γ,k} + A·∇c_{γ,k}, absent when |γ| = k+1
            if g < prev.len() {
                let cg = &prev[g];
                c = c.add(&div_k.mul(&cg.truncate(ord)));
                for (i, ai) in a_k.iter().enumerate() {
                    c = c.add(&ai.mul(&cg.diff(i)));
                }
            }
            // Σ_i A_i c_{γ−e_i,k}, absent when |γ| = 0
            for (i, ai) in a_k.iter().enumerate() {
                if gamma[i] == 0 {
                    continue;
                }
                let mut lower = gamma.to_vec();
                lower[i] -= 1;
                let l = space.index_of(&lower).expect("lower multi-index in range");
                c = c.add(&ai.mul(&prev[l].truncate(ord)));
            }
            next.push(c);
        }
        ladder.push(next);
    }
    Ok(ladder)
}

/// `c_{α,N}` at `xi` by the literal recursion, with derivatives of each
/// coefficient up to order `extra`.
pub fn transpose_power_coeffs(phase: &PhaseModel, xi: &[f64], n: usize, extra: usize) -> Result<IbpCoefficients> {
    let mut ladder = coefficient_ladder(phase, xi, n, extra)?;
    Ok(IbpCoefficients {
        order: n,
        point: xi.to_vec(),
        jets: ladder.pop().unwrap(),
    })
}

/// `(ᵗL)^N g` at `xi` by `N` nested applications of `g ↦ Σ_i ∂_i(A_i g)`.
/// `g(ξ, k)` must return the jet of the amplitude to order `k`.
pub fn transpose_power<G>(phase: &PhaseModel, g: G, n: usize, xi: &[f64]) -> Result<f64>
where
    G: Fn(&[f64], usize) -> Jet,
{
    check_order(n, 0)?;
    let w = g(xi, n);
    if w.is_zero() {
        return Ok(0.0);
    }
    check_gradient(phase, xi, GRADIENT_FLOOR)?;
    let a = field_jets(&phase.jet(xi, n + 1));
    Ok(nested_transpose(&a, w, n))
}

/// `n` applications of `w ↦ Σ_i ∂_i(A_i w)`, with `a` and `w` jets of order `n`.
pub(crate) fn nested_transpose(a: &[Jet], mut w: Jet, n: usize) -> f64 {
    for k in 0..n {
        let ord = n - k;
        let mut next = Jet::zero(w.space(), ord - 1);
        for (i, ai) in a.iter().enumerate() {
            next = next.add(&ai.truncate(ord).mul(&w).diff(i));
        }
        w = next;
    }
    w.value()
}

/// `Σ_α c_{α,N} ∂^α g` at `xi`: the coefficient form of [`transpose_power`].
pub fn transpose_power_via_coeffs<G>(phase: &PhaseModel, g: G, n: usize, xi: &[f64]) -> Result<f64>
where
    G: Fn(&[f64], usize) -> Jet,
{
    let c = transpose_power_coeffs(phase, xi, n, 0)?;
    let w = g(xi, n);
    Ok(c.entries().map(|(alpha, v)| v * w.partial(alpha)).sum())
}

/// `(ᵗX)^N g = (i/λ)^N (ᵗL)^N g` at `xi`.
pub fn apply_transpose_power<G>(phase: &PhaseModel, g: G, n: usize, xi: &[f64], lambda: f64) -> Result<Complex64>
where
    G: Fn(&[f64], usize) -> Jet,
{
    let v = transpose_power(phase, g, n, xi)?;
    Ok(ibp_factor(n, lambda) * v)
}

/// `(i/λ)^N`.
pub fn ibp_factor(n: usize, lambda: f64) -> Complex64 {
    Complex64::new(0.0, 1.0 / lambda).powi(n as i32)
}

/// `|X e^{iλΦ} − e^{iλΦ}|` at `xi`, with the gradient of `e^{iλΦ}` taken
/// from jets of `cos λΦ` and `sin λΦ`.
pub fn exponential_reproduction_error(phase: &PhaseModel, xi: &[f64], lambda: f64) -> Result<f64> {
    check_gradient(phase, xi, GRADIENT_FLOOR)?;
    let phi = phase.jet(xi, 2);
    let a = field_jets(&phi);
    let arg = phi.truncate(1).scale(lambda);
    let (co, si) = (arg.cos(), arg.sin());
    let mut lu = Complex64::new(0.0, 0.0);
    for (i, ai) in a.iter().enumerate() {
        let e = unit(xi.len(), i);
        lu += ai.value() * Complex64::new(co.partial(&e), si.partial(&e));
    }
    let xe = lu / Complex64::new(0.0, lambda);
    let e = Complex64::new(co.value(), si.value());
    Ok((xe - e).norm())
}

/// Maxima of the structural ratios of the three coefficient lemmas over a
/// sample of points, with the non-constructive `F` set to 1.
#[derive(Clone, Debug, Serialize)]
pub struct LemmaShapeReport {
    pub samples: usize,
    /// `(|α|, max |D^α A_i| / Σ_{k=2}^{1+|α|} |∇Φ|^{−k})`.
    pub est_ai: Vec<(usize, f64)>,
    /// `(|α|, max |∂^α|∇Φ|| / |∇Φ|^{1−|α|})` over points with `0 < |∇Φ| ≤ 2`.
    pub est_nablaphi: Vec<(usize, f64)>,
    /// `(N, |α|, |β|, max |∂^β c_{α,N}| / Σ_{k=N}^{2N−|α|+|β|} |∇Φ|^{−k})`.
    pub ltranspose: Vec<(usize, usize, usize, f64)>,
    /// Points that had `0 < |∇Φ| ≤ 2`.
    pub nablaphi_samples: usize,
}

impl LemmaShapeReport {
    pub fn max_est_ai(&self) -> f64 {
        self.est_ai.iter().map(|p| p.1).fold(0.0, f64::max)
    }

    pub fn max_est_nablaphi(&self) -> f64 {
        self.est_nablaphi.iter().map(|p| p.1).fold(0.0, f64::max)
    }

    pub fn max_ltranspose(&self) -> f64 {
        self.ltranspose.iter().map(|p| p.3).fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.est_ai.iter().all(|p| p.1.is_finite())
            && self.est_nablaphi.iter().all(|p| p.1.is_finite())
            && self.ltranspose.iter().all(|p| p.3.is_finite())
    }
}

fn inverse_power_sum(g: f64, lo: usize, hi: usize) -> f64 {
    (lo..=hi).map(|k| g.powi(-(k as i32))).sum()
}

/// Samples `samples` random points of `region` and records the structural
/// ratios for `|α| ≤ max_order` in the `A_i` and `|∇Φ|` lemmas and for
/// `N ≤ n`, `|β| ≤ beta_max` in the coefficient lemma.
pub fn verify_coefficient_bounds(
    phase: &PhaseModel,
    region: &BoxDomain,
    n: usize,
    max_order: usize,
    beta_max: usize,
    samples: usize,
    seed: u64,
) -> Result<LemmaShapeReport> {
    check_order(n, beta_max)?;
    check_order(max_order, 0)?;
    let d = phase.dim();
    let space = JetSpace::get(d);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut est_ai = vec![0.0f64; max_order + 1];
    let mut est_nabla = vec![0.0f64; max_order + 1];
    let mut lt = vec![vec![vec![0.0f64; beta_max + 1]; n + 1]; n + 1];
    let mut used = 0;
    let mut near = 0;
    for _ in 0..samples {
        let p = random_point(&mut rng, region);
        let grad = phase.gradient(&p);
        let g = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(g >= GRADIENT_FLOOR) {
            continue;
        }
        used += 1;
        let phi = phase.jet(&p, max_order + 1);
        for ai in field_jets(&phi) {
            for k in space.len(0)..space.len(max_order) {
                let deg = space.degree(k);
                let r = ai.derivative_at(k).abs() / inverse_power_sum(g, 2, 1 + deg);
                est_ai[deg] = est_ai[deg].max(r);
            }
        }
        if g <= 2.0 {
            near += 1;
            let nj = grad_norm_jet(&phi);
            for k in space.len(0)..space.len(max_order) {
                let deg = space.degree(k);
                let r = nj.derivative_at(k).abs() / g.powi(1 - deg as i32);
                est_nabla[deg] = est_nabla[deg].max(r);
            }
        }
        let ladder = coefficient_ladder(phase, &p, n, beta_max)?;
        for (nn, coeffs) in ladder.iter().enumerate().skip(1) {
            for (ka, c) in coeffs.iter().enumerate() {
                let alpha_deg = space.degree(ka);
                for kb in 0..space.len(beta_max.min(c.order())) {
                    let beta_deg = space.degree(kb);
                    let hi = 2 * nn - alpha_deg + beta_deg;
                    let r = c.derivative_at(kb).abs() / inverse_power_sum(g, nn, hi);
                    let slot = &mut lt[nn][alpha_deg][beta_deg];
                    *slot = slot.max(r);
                }
            }
        }
    }
    let mut ltranspose = Vec::new();
    for (nn, by_alpha) in lt.iter().enumerate().skip(1) {
        for (a, by_beta) in by_alpha.iter().enumerate().take(nn + 1) {
            for (b, v) in by_beta.iter().enumerate() {
                ltranspose.push((nn, a, b, *v));
            }
        }
    }
    Ok(LemmaShapeReport {
        samples: used,
        est_ai: (1..=max_order).map(|k| (k, est_ai[k])).collect(),
        est_nablaphi: (1..=max_order).map(|k| (k, est_nabla[k])).collect(),
        ltranspose,
        nablaphi_samples: near,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{c, x};
    use crate::families;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use rand::RngExt;

    fn half_square_1d() -> PhaseModel {
        PhaseModel::new("custom", c(0.5) * x(0).powi(2), BoxDomain::symmetric(1, 3.0), vec![]).unwrap()
    }

    fn cubic_2d() -> PhaseModel {
        PhaseModel::new(
            "custom",
            c(0.5) * x(0).powi(2) + x(1).powi(2) + c(0.3) * x(0).powi(3) + c(0.2) * x(0) * x(1).powi(2),
            BoxDomain::symmetric(2, 1.0),
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn cutoff_profile() {
        let psi = Cutoff::default();
        assert_eq!(psi.value(0.5), 1.0);
        assert_eq!(psi.value(-1.0), 1.0);
        assert_eq!(psi.value(3.0), 0.0);
        assert_eq!(psi.value(2.0), 0.0);
        let v = psi.value(1.5);
        assert!(v > 0.0 && v < 1.0);
        let mut prev = 1.0;
        for k in 0..=200 {
            let t = psi.value(1.0 + k as f64 / 200.0);
            assert!(t <= prev);
            prev = t;
        }
        // derivative matches a central difference
        let h = 1e-6;
        let fd = (psi.value(1.3 + h) - psi.value(1.3 - h)) / (2.0 * h);
        assert_relative_eq!(psi.deriv(1.3, 1), fd, epsilon = 1e-7);
        assert_relative_eq!(psi.deriv(-1.3, 1), -fd, epsilon = 1e-7);
        assert_eq!(psi.deriv(0.3, 2), 0.0);
    }

    #[test]
    fn field_examples() {
        let a = field_a(&half_square_1d(), &[2.0], 1).unwrap();
        assert_relative_eq!(a[0].value(), 0.5);
        assert_relative_eq!(a[0].partial(&[1]), -0.25);

        let iso = families::quadratic(DMatrix::identity(2, 2), BoxDomain::symmetric(2, 2.0)).unwrap();
        let a = field_a(&iso, &[1.0, 0.0], 1).unwrap();
        assert_relative_eq!(a[0].value(), 1.0);
        assert_eq!(a[1].value(), 0.0);
        assert!(divergence(&a).value().abs() < 1e-15);

        assert!(matches!(field_a(&iso, &[0.0, 0.0], 1), Err(Error::NearCritical { .. })));
    }

    #[test]
    fn field_derivatives_match_finite_differences() {
        let p = cubic_2d();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let xi = [rng.random_range(0.2..0.9), rng.random_range(-0.9..0.9)];
            let a = field_a(&p, &xi, 1).unwrap();
            let av = |q: &[f64]| {
                let g = p.gradient(q);
                let n2 = g[0] * g[0] + g[1] * g[1];
                [g[0] / n2, g[1] / n2]
            };
            let h = 1e-6;
            for j in 0..2 {
                let mut u = xi;
                let mut v = xi;
                u[j] += h;
                v[j] -= h;
                let (fu, fv) = (av(&u), av(&v));
                for i in 0..2 {
                    let fd = (fu[i] - fv[i]) / (2.0 * h);
                    assert_relative_eq!(a[i].partial(&unit(2, j)), fd, epsilon = 1e-6, max_relative = 1e-6);
                }
            }
        }
    }

    #[test]
    fn base_case_coefficients() {
        let c1 = transpose_power_coeffs(&half_square_1d(), &[2.0], 1, 0).unwrap();
        assert_relative_eq!(c1.get(&[1]), 0.5);
        assert_relative_eq!(c1.get(&[0]), -0.25);

        let p = cubic_2d();
        let xi = [0.4, -0.3];
        let c1 = transpose_power_coeffs(&p, &xi, 1, 0).unwrap();
        let a = field_a(&p, &xi, 1).unwrap();
        assert_eq!(c1.get(&[1, 0]), a[0].value());
        assert_eq!(c1.get(&[0, 1]), a[1].value());
        assert_relative_eq!(c1.get(&[0, 0]), divergence(&a).value(), epsilon = 1e-15);
    }

    #[test]
    fn second_power_in_one_dimension() {
        // A = 1/ξ: (ᵗL)² u = (A(Au)')' expands to A² u'' + 3AA' u' + (AA')' u
        let c2 = transpose_power_coeffs(&half_square_1d(), &[2.0], 2, 0).unwrap();
        let (a, a1, a2) = (0.5, -0.25, 0.25);
        assert_relative_eq!(c2.get(&[2]), a * a);
        assert_relative_eq!(c2.get(&[1]), 3.0 * a * a1);
        assert_relative_eq!(c2.get(&[0]), a1 * a1 + a * a2);
    }

    #[test]
    fn transpose_examples() {
        let p = half_square_1d();
        let zero = |q: &[f64], k: usize| Jet::zero(JetSpace::get(q.len()), k);
        assert_eq!(apply_transpose_power(&p, zero, 2, &[0.0], 3.0).unwrap(), Complex64::new(0.0, 0.0));
        let ident = |q: &[f64], k: usize| Jet::variable(JetSpace::get(1), k, q[0], 0);
        let v = apply_transpose_power(&p, ident, 1, &[2.0], 1.0).unwrap();
        assert!(v.norm() < 1e-15);
    }

    #[test]
    fn two_paths_agree() {
        let p = cubic_2d();
        let g = |q: &[f64], k: usize| {
            let v = Jet::variables(q, k);
            v[0].mul(&v[1]).sin().add(&v[1].scale(0.7).exp())
        };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for n in 1..=3 {
            for _ in 0..20 {
                let xi = [rng.random_range(0.2..0.9), rng.random_range(-0.9..0.9)];
                let a = transpose_power(&p, g, n, &xi).unwrap();
                let b = transpose_power_via_coeffs(&p, g, n, &xi).unwrap();
                assert_relative_eq!(a, b, max_relative = 1e-10, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn exponential_is_reproduced() {
        let p = cubic_2d();
        for lambda in [1.0, 10.0, 100.0] {
            for xi in [[0.5, 0.2], [0.3, -0.7], [-0.1, 0.4]] {
                assert!(exponential_reproduction_error(&p, &xi, lambda).unwrap() < 1e-10);
            }
        }
    }

    #[test]
    fn composite_cutoff_matches_finite_differences() {
        let p = cubic_2d();
        let psi = Cutoff::default();
        let lambda: f64 = 16.0;
        let f = |q: &[f64]| {
            let g = p.gradient(q);
            psi.value(lambda.sqrt() * (g[0] * g[0] + g[1] * g[1]).sqrt())
        };
        // √λ|∇Φ| is in the transition band near this point
        let xi = [0.3, 0.1];
        let jet = psi.composite_jet(&p.jet(&xi, 3), lambda);
        assert!(jet.value() > 0.0 && jet.value() < 1.0);
        assert_relative_eq!(jet.value(), f(&xi), epsilon = 1e-14);
        let h = 1e-5;
        for i in 0..2 {
            let mut u = xi;
            let mut v = xi;
            u[i] += h;
            v[i] -= h;
            let fd1 = (f(&u) - f(&v)) / (2.0 * h);
            let fd2 = (f(&u) - 2.0 * f(&xi) + f(&v)) / (h * h);
            let mut e2 = [0u8; 2];
            e2[i] = 2;
            assert_relative_eq!(jet.partial(&unit(2, i)), fd1, epsilon = 1e-7, max_relative = 1e-6);
            assert_relative_eq!(jet.partial(&e2), fd2, epsilon = 1e-3, max_relative = 1e-3);
        }
    }

    #[test]
    fn nablaphi_shape_is_exact_for_one_dimensional_quadratic() {
        let r = verify_coefficient_bounds(&half_square_1d(), &BoxDomain::symmetric(1, 2.0), 1, 1, 0, 200, 1).unwrap();
        assert_relative_eq!(r.est_nablaphi[0].1, 1.0);
    }

    #[test]
    fn lemma_ratios_are_finite_and_stable() {
        let p = cubic_2d();
        let region = BoxDomain::symmetric(2, 0.8);
        let a = verify_coefficient_bounds(&p, &region, 3, 3, 1, 500, 2).unwrap();
        let b = verify_coefficient_bounds(&p, &region, 3, 3, 1, 2000, 2).unwrap();
        assert!(a.all_finite() && b.all_finite());
        for (x, y) in [
            (a.max_est_ai(), b.max_est_ai()),
            (a.max_est_nablaphi(), b.max_est_nablaphi()),
            (a.max_ltranspose(), b.max_ltranspose()),
        ] {
            assert!(y >= x && y <= 2.0 * x, "{x} -> {y}");
        }
    }

    #[test]
    fn coefficient_csv() {
        let c1 = transpose_power_coeffs(&half_square_1d(), &[2.0], 1, 0).unwrap();
        let mut buf = Vec::new();
        c1.write_csv(&mut buf, true).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "x1,alpha,N,value\n2.0,0,1,-0.25\n2.0,1,1,0.5\n");
    }
}
