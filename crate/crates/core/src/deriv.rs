//! Phases, symbols and their derivative tensors.

use nalgebra::{DMatrix, DVector};

use crate::bump::{bump_profile, bump_profile_jet, Transition};
use crate::domain::BoxDomain;
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::jet::{Jet, JetSpace, MAX_DIM, MAX_ORDER};

/// Largest dimension for which oscillatory integrals are evaluated.
pub const MAX_QUADRATURE_DIM: usize = 3;

/// All partial derivatives `D^α f(ξ)` with `|α| ≤ order`, one entry per
/// multi-index (mixed partials are stored once).
#[derive(Clone, Debug)]
pub struct DerivativeTensor {
    point: Vec<f64>,
    order: usize,
    values: Vec<f64>,
}

impl DerivativeTensor {
    pub fn from_jet(point: &[f64], jet: &Jet) -> Self {
        let values = (0..jet.coeffs().len()).map(|k| jet.derivative_at(k)).collect();
        DerivativeTensor {
            point: point.to_vec(),
            order: jet.order(),
            values,
        }
    }

    pub fn point(&self) -> &[f64] {
        &self.point
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn dim(&self) -> usize {
        self.point.len()
    }

    pub fn value(&self) -> f64 {
        self.values[0]
    }

    /// `D^α f` for a multi-index `α`.
    pub fn get(&self, alpha: &[u8]) -> f64 {
        let k = JetSpace::get(self.dim())
            .index_of(alpha)
            .expect("multi-index dimension mismatch");
        self.values[k]
    }

    /// `∂_{i_1} … ∂_{i_k} f` for an index tuple in any order.
    pub fn get_ordered(&self, indices: &[usize]) -> f64 {
        let mut alpha = vec![0u8; self.dim()];
        for &i in indices {
            alpha[i] += 1;
        }
        self.get(&alpha)
    }

    pub fn gradient(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.get_ordered(&[i])).collect()
    }

    pub fn hessian(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_fn(d, d, |i, j| self.get_ordered(&[i, j]))
    }

    /// `(multi-index, D^α f)` pairs in graded order.
    pub fn entries(&self) -> impl Iterator<Item = (&[u8], f64)> + '_ {
        let space = JetSpace::get(self.dim());
        self.values
            .iter()
            .enumerate()
            .map(move |(k, &v)| (space.multi_index(k), v))
    }
}

/// A real phase `Φ` on an open box `V`.
#[derive(Clone, Debug)]
pub struct PhaseModel {
    family: String,
    params: Vec<(String, f64)>,
    domain: BoxDomain,
    expr: Expr,
}

impl PhaseModel {
    pub fn new(
        family: impl Into<String>,
        expr: Expr,
        domain: BoxDomain,
        params: Vec<(String, f64)>,
    ) -> Result<Self> {
        let d = domain.dim();
        if d == 0 || d > MAX_DIM {
            return Err(Error::Validation(format!(
                "phase dimension {d} outside 1..={MAX_DIM}"
            )));
        }
        if let Some(i) = expr.max_var() {
            if i >= d {
                return Err(Error::Validation(format!(
                    "expression uses coordinate {i} but the domain has dimension {d}"
                )));
            }
        }
        Ok(PhaseModel {
            family: family.into(),
            params,
            domain,
            expr,
        })
    }

    pub fn family(&self) -> &str {
        &self.family
    }

    pub fn params(&self) -> &[(String, f64)] {
        &self.params
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    /// Highest derivative order the representation supports.
    pub fn smoothness(&self) -> usize {
        MAX_ORDER
    }

    pub fn value(&self, xi: &[f64]) -> f64 {
        self.expr.eval(xi)
    }

    /// Jet of `Φ` at `xi`, no domain checks.
    pub fn jet(&self, xi: &[f64], order: usize) -> Jet {
        self.expr.eval_jet(&Jet::variables(xi, order))
    }

    pub fn gradient(&self, xi: &[f64]) -> Vec<f64> {
        self.expr.eval_grad(xi).g[..xi.len()].to_vec()
    }

    pub fn gradient_hessian(&self, xi: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let j = self.jet(xi, 2);
        let t = DerivativeTensor::from_jet(xi, &j);
        (DVector::from_vec(t.gradient()), t.hessian())
    }

    pub fn derivatives_at(&self, xi: &[f64], order: usize) -> Result<DerivativeTensor> {
        if !self.domain.contains(xi) {
            return Err(Error::Domain {
                point: xi.to_vec(),
                domain: self.domain.to_string(),
            });
        }
        if order > self.smoothness() {
            return Err(Error::Capability {
                requested: order,
                available: self.smoothness(),
            });
        }
        let j = self.jet(xi, order);
        if j.coeffs().iter().any(|c| !c.is_finite()) {
            return Err(Error::Domain {
                point: xi.to_vec(),
                domain: format!("{} (guarded reciprocal)", self.domain),
            });
        }
        Ok(DerivativeTensor::from_jet(xi, &j))
    }

    /// `s · Φ` on the same domain.
    pub fn scaled(&self, s: f64) -> PhaseModel {
        let mut params = self.params.clone();
        params.push(("scale".into(), s));
        PhaseModel {
            family: self.family.clone(),
            params,
            domain: self.domain.clone(),
            expr: self.expr.scaled(s),
        }
    }

    pub fn with_domain(&self, domain: BoxDomain) -> Result<PhaseModel> {
        PhaseModel::new(self.family.clone(), self.expr.clone(), domain, self.params.clone())
    }
}

/// Concrete compactly supported amplitudes.
#[derive(Clone, Debug, PartialEq)]
pub enum SymbolKind {
    /// `b ≡ 0`; the support box is kept for bookkeeping.
    Zero,
    /// Radial `exp(1 - 1/(1 - |ξ-c|²/R²))`, equal to 1 at the center.
    SmoothBump { center: Vec<f64>, radius: f64 },
    /// 1 on `|ξ-c| ≤ inner`, 0 on `|ξ-c| ≥ outer`.
    PlateauBump {
        center: Vec<f64>,
        inner: f64,
        outer: f64,
    },
    /// Product of one-dimensional smooth bumps with per-axis radii.
    ProductBump { center: Vec<f64>, radii: Vec<f64> },
    /// `Π_i (1 - ((ξ_i-c_i)/r_i)²)^p`: finitely smooth, `C^{p-1}`.
    PolynomialBump {
        center: Vec<f64>,
        radii: Vec<f64>,
        power: u32,
    },
}

/// A compactly supported symbol `b` with support box `K`.
#[derive(Clone, Debug)]
pub struct SymbolModel {
    kind: SymbolKind,
    support: BoxDomain,
}

impl SymbolModel {
    pub fn zero(support: BoxDomain) -> Self {
        SymbolModel {
            kind: SymbolKind::Zero,
            support,
        }
    }

    pub fn smooth_bump(center: Vec<f64>, radius: f64) -> Result<Self> {
        positive("radius", radius)?;
        let support = BoxDomain::cube(&center, radius);
        Ok(SymbolModel {
            kind: SymbolKind::SmoothBump { center, radius },
            support,
        })
    }

    pub fn plateau_bump(center: Vec<f64>, inner: f64, outer: f64) -> Result<Self> {
        positive("inner radius", inner)?;
        positive("outer radius", outer)?;
        if inner >= outer {
            return Err(Error::Validation(format!(
                "plateau inner radius {inner} must be below outer radius {outer}"
            )));
        }
        let support = BoxDomain::cube(&center, outer);
        Ok(SymbolModel {
            kind: SymbolKind::PlateauBump {
                center,
                inner,
                outer,
            },
            support,
        })
    }

    pub fn product_bump(center: Vec<f64>, radii: Vec<f64>) -> Result<Self> {
        check_radii(&center, &radii)?;
        let support = axis_box(&center, &radii);
        Ok(SymbolModel {
            kind: SymbolKind::ProductBump { center, radii },
            support,
        })
    }

    pub fn polynomial_bump(center: Vec<f64>, radii: Vec<f64>, power: u32) -> Result<Self> {
        check_radii(&center, &radii)?;
        if power == 0 {
            return Err(Error::Validation("polynomial bump power must be ≥ 1".into()));
        }
        let support = axis_box(&center, &radii);
        Ok(SymbolModel {
            kind: SymbolKind::PolynomialBump {
                center,
                radii,
                power,
            },
            support,
        })
    }

    pub fn kind(&self) -> &SymbolKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.support.dim()
    }

    /// Support box `K`; `b` vanishes identically outside it.
    pub fn support(&self) -> &BoxDomain {
        &self.support
    }

    pub fn smoothness(&self) -> usize {
        match &self.kind {
            SymbolKind::PolynomialBump { power, .. } => *power as usize,
            _ => MAX_ORDER,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.kind, SymbolKind::Zero)
    }

    pub fn family(&self) -> &'static str {
        match self.kind {
            SymbolKind::Zero => "zero",
            SymbolKind::SmoothBump { .. } => "smooth_bump",
            SymbolKind::PlateauBump { .. } => "plateau_bump",
            SymbolKind::ProductBump { .. } => "product_bump",
            SymbolKind::PolynomialBump { .. } => "polynomial_bump",
        }
    }

    pub fn value(&self, xi: &[f64]) -> f64 {
        match &self.kind {
            SymbolKind::Zero => 0.0,
            SymbolKind::SmoothBump { center, radius } => {
                bump_profile(1.0 - dist2(xi, center) / (radius * radius))
            }
            SymbolKind::PlateauBump {
                center,
                inner,
                outer,
            } => {
                let t = (dist2(xi, center) - inner * inner) / (outer * outer - inner * inner);
                Transition::Exp.step(t)
            }
            SymbolKind::ProductBump { .. } | SymbolKind::PolynomialBump { .. } => {
                (0..xi.len()).map(|i| self.axis_factor(i, xi[i])).product()
            }
        }
    }

    /// One-dimensional factor along axis `i` for separable symbols.
    pub fn axis_factor(&self, i: usize, t: f64) -> f64 {
        match &self.kind {
            SymbolKind::Zero => 0.0,
            SymbolKind::ProductBump { center, radii } => {
                let u = (t - center[i]) / radii[i];
                bump_profile(1.0 - u * u)
            }
            SymbolKind::PolynomialBump {
                center,
                radii,
                power,
            } => {
                let u = (t - center[i]) / radii[i];
                if u.abs() >= 1.0 {
                    0.0
                } else {
                    (1.0 - u * u).powi(*power as i32)
                }
            }
            _ => panic!("axis_factor on a non-separable symbol"),
        }
    }

    /// Whether `b(ξ) = Π_i g_i(ξ_i)`.
    pub fn is_separable(&self) -> bool {
        matches!(
            self.kind,
            SymbolKind::Zero | SymbolKind::ProductBump { .. } | SymbolKind::PolynomialBump { .. }
        )
    }

    /// Jet of `b` at `xi`, no checks. Outside the support this is exactly zero.
    pub fn jet(&self, xi: &[f64], order: usize) -> Jet {
        let space = JetSpace::get(xi.len());
        if !self.support.contains(xi) || self.is_zero() {
            return Jet::zero(space, order);
        }
        let vars = Jet::variables(xi, order);
        match &self.kind {
            SymbolKind::Zero => Jet::zero(space, order),
            SymbolKind::SmoothBump { center, radius } => {
                let s = dist2_jet(&vars, center).scale(-1.0 / (radius * radius)).add_scalar(1.0);
                bump_profile_jet(&s)
            }
            SymbolKind::PlateauBump {
                center,
                inner,
                outer,
            } => {
                let t = dist2_jet(&vars, center)
                    .add_scalar(-inner * inner)
                    .scale(1.0 / (outer * outer - inner * inner));
                Transition::Exp.step_jet(&t)
            }
            SymbolKind::ProductBump { center, radii } => {
                let mut acc = Jet::constant(space, order, 1.0);
                for (i, v) in vars.iter().enumerate() {
                    let u = v.add_scalar(-center[i]).scale(1.0 / radii[i]);
                    let s = u.mul(&u).neg().add_scalar(1.0);
                    acc = acc.mul(&bump_profile_jet(&s));
                }
                acc
            }
            SymbolKind::PolynomialBump {
                center,
                radii,
                power,
            } => {
                let mut acc = Jet::constant(space, order, 1.0);
                for (i, v) in vars.iter().enumerate() {
                    let u = v.add_scalar(-center[i]).scale(1.0 / radii[i]);
                    if u.value().abs() >= 1.0 {
                        return Jet::zero(space, order);
                    }
                    let s = u.mul(&u).neg().add_scalar(1.0);
                    acc = acc.mul(&s.powi(*power as i32));
                }
                acc
            }
        }
    }

    pub fn derivatives_at(&self, xi: &[f64], order: usize) -> Result<DerivativeTensor> {
        if xi.len() != self.dim() {
            return Err(Error::Domain {
                point: xi.to_vec(),
                domain: self.support.to_string(),
            });
        }
        if order > self.smoothness() {
            return Err(Error::Capability {
                requested: order,
                available: self.smoothness(),
            });
        }
        Ok(DerivativeTensor::from_jet(xi, &self.jet(xi, order)))
    }
}

fn positive(what: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Validation(format!("{what} must be positive, got {v}")))
    }
}

fn check_radii(center: &[f64], radii: &[f64]) -> Result<()> {
    if center.len() != radii.len() {
        return Err(Error::Validation(format!(
            "center has dimension {} but {} radii were given",
            center.len(),
            radii.len()
        )));
    }
    radii.iter().try_for_each(|&r| positive("radius", r))
}

fn axis_box(center: &[f64], radii: &[f64]) -> BoxDomain {
    BoxDomain {
        lo: center.iter().zip(radii).map(|(c, r)| c - r).collect(),
        hi: center.iter().zip(radii).map(|(c, r)| c + r).collect(),
    }
}

fn dist2(x: &[f64], c: &[f64]) -> f64 {
    x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn dist2_jet(vars: &[Jet], c: &[f64]) -> Jet {
    let mut acc = Jet::zero(vars[0].space(), vars[0].order());
    for (v, ci) in vars.iter().zip(c) {
        let u = v.add_scalar(-ci);
        acc = acc.add(&u.mul(&u));
    }
    acc
}

/// Sample a smooth scalar amplitude as a jet. Implemented by symbols and by
/// ad-hoc amplitudes in tests.
pub trait Amplitude: Sync {
    fn dim(&self) -> usize;
    fn support(&self) -> &BoxDomain;
    fn jet(&self, xi: &[f64], order: usize) -> Jet;
}

impl Amplitude for SymbolModel {
    fn dim(&self) -> usize {
        SymbolModel::dim(self)
    }

    fn support(&self) -> &BoxDomain {
        SymbolModel::support(self)
    }

    fn jet(&self, xi: &[f64], order: usize) -> Jet {
        SymbolModel::jet(self, xi, order)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{c, x};
    use approx::assert_relative_eq;

    fn half_square() -> PhaseModel {
        PhaseModel::new(
            "custom",
            c(0.5) * x(0).powi(2),
            BoxDomain::symmetric(1, 5.0),
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn one_dimensional_quadratic_tensor() {
        let t = half_square().derivatives_at(&[3.0], 3).unwrap();
        assert_eq!(t.value(), 4.5);
        assert_eq!(t.get(&[1]), 3.0);
        assert_eq!(t.get(&[2]), 1.0);
        assert_eq!(t.get(&[3]), 0.0);
    }

    #[test]
    fn outside_domain_is_rejected() {
        let err = half_square().derivatives_at(&[6.0], 2).unwrap_err();
        assert!(matches!(err, Error::Domain { .. }));
    }

    #[test]
    fn excessive_order_is_rejected() {
        let err = half_square().derivatives_at(&[0.0], MAX_ORDER + 1).unwrap_err();
        assert!(matches!(err, Error::Capability { .. }));
        let b = SymbolModel::polynomial_bump(vec![0.0], vec![1.0], 2).unwrap();
        assert!(matches!(
            b.derivatives_at(&[0.0], 3).unwrap_err(),
            Error::Capability { .. }
        ));
    }

    #[test]
    fn two_dimensional_quadratic_gradient_and_hessian() {
        let p = PhaseModel::new(
            "custom",
            c(0.5) * (x(0).powi(2) + c(2.0) * x(1).powi(2)),
            BoxDomain::symmetric(2, 2.0),
            vec![],
        )
        .unwrap();
        let t = p.derivatives_at(&[1.0, 1.0], 2).unwrap();
        assert_eq!(t.gradient(), vec![1.0, 2.0]);
        let h = t.hessian();
        assert_eq!(h[(0, 0)], 1.0);
        assert_eq!(h[(1, 1)], 2.0);
        assert_eq!(h[(0, 1)], 0.0);
        assert_eq!(t.get_ordered(&[1, 0]), t.get_ordered(&[0, 1]));
    }

    #[test]
    fn sine_perturbation_at_origin() {
        // Φ = ξ²/2 + 0.1 sin ξ: {0, 0.1, 1, -0.1}
        let p = PhaseModel::new(
            "custom",
            c(0.5) * x(0).powi(2) + c(0.1) * x(0).sin(),
            BoxDomain::symmetric(1, 2.0),
            vec![],
        )
        .unwrap();
        let t = p.derivatives_at(&[0.0], 3).unwrap();
        assert_relative_eq!(t.get(&[0]), 0.0);
        assert_relative_eq!(t.get(&[1]), 0.1, epsilon = 1e-15);
        assert_relative_eq!(t.get(&[2]), 1.0, epsilon = 1e-15);
        assert_relative_eq!(t.get(&[3]), -0.1, epsilon = 1e-15);
    }

    #[test]
    fn bumps_are_normalized_and_compactly_supported() {
        let b = SymbolModel::smooth_bump(vec![0.0], 1.0).unwrap();
        assert_eq!(b.value(&[0.0]), 1.0);
        assert_eq!(b.value(&[1.0]), 0.0);
        assert_eq!(b.value(&[1.5]), 0.0);
        assert!(b.jet(&[1.0], 3).is_zero());
        let p = SymbolModel::plateau_bump(vec![0.0], 1.0, 2.0).unwrap();
        assert_eq!(p.value(&[0.5]), 1.0);
        assert_eq!(p.value(&[2.0]), 0.0);
        assert!(p.value(&[1.5]) > 0.0 && p.value(&[1.5]) < 1.0);
    }

    #[test]
    fn nonpositive_radius_rejected() {
        assert!(SymbolModel::smooth_bump(vec![0.0], 0.0).is_err());
        assert!(SymbolModel::product_bump(vec![0.0, 0.0], vec![1.0, -1.0]).is_err());
    }

    #[test]
    fn product_bump_value_matches_jet() {
        let b = SymbolModel::product_bump(vec![0.1, -0.2], vec![0.5, 0.7]).unwrap();
        let p = [0.3, 0.1];
        assert_relative_eq!(b.jet(&p, 3).value(), b.value(&p), epsilon = 1e-15);
    }
}
