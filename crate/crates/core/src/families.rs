//! Built-in phase and symbol families, constructible by name from a JSON
//! parameter map.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::deriv::{PhaseModel, SymbolModel};
use crate::domain::BoxDomain;
use crate::error::{Error, Result};
use crate::expr::{c, x, Expr};

/// Perturbations `Ψ` for `Φ = ½⟨Aξ,ξ⟩ + εΨ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perturbation {
    /// `cos ξ₁`
    CosX1,
    /// `Σ cos ξ_i`
    CosSum,
    /// `Σ sin ξ_i`
    SinSum,
    /// `Σ ξ_i³ / 6`
    Cubic,
    /// `sin ξ₁ cos ξ₂` (needs d ≥ 2)
    Coupled,
}

impl Perturbation {
    fn parse(s: &str) -> Result<Self> {
        serde_json::from_value(Value::String(s.into()))
            .map_err(|_| Error::Validation(format!("unknown perturbation `{s}`")))
    }

    pub fn expr(self, d: usize) -> Result<Expr> {
        Ok(match self {
            Perturbation::CosX1 => x(0).cos(),
            Perturbation::CosSum => Expr::sum((0..d).map(|i| x(i).cos()).collect()),
            Perturbation::SinSum => Expr::sum((0..d).map(|i| x(i).sin()).collect()),
            Perturbation::Cubic => Expr::sum((0..d).map(|i| c(1.0 / 6.0) * x(i).powi(3)).collect()),
            Perturbation::Coupled => {
                if d < 2 {
                    return Err(Error::Validation("coupled perturbation needs d ≥ 2".into()));
                }
                x(0).sin() * x(1).cos()
            }
        })
    }
}

/// `θ` choices for the dispersive family `(x−y)·ξ + tθ(ξ)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Theta {
    /// `½|ξ|²`
    Quadratic,
    /// `½|ξ|² + 0.1 Σ cos ξ_i`
    Perturbed,
}

impl Theta {
    pub fn expr(self, d: usize) -> Expr {
        let quad = Expr::sum((0..d).map(|i| c(0.5) * x(i).powi(2)).collect());
        match self {
            Theta::Quadratic => quad,
            Theta::Perturbed => {
                quad + c(0.1) * Expr::sum((0..d).map(|i| x(i).cos()).collect())
            }
        }
    }
}

fn quadratic_form(a: &DMatrix<f64>) -> Expr {
    let d = a.nrows();
    let mut terms = Vec::new();
    for i in 0..d {
        if a[(i, i)] != 0.0 {
            terms.push(c(0.5 * a[(i, i)]) * x(i).powi(2));
        }
        for j in i + 1..d {
            if a[(i, j)] != 0.0 {
                terms.push(c(a[(i, j)]) * x(i) * x(j));
            }
        }
    }
    Expr::sum(terms)
}

fn validate_matrix(a: &DMatrix<f64>, d: usize) -> Result<()> {
    if a.nrows() != d || a.ncols() != d {
        return Err(Error::Validation(format!(
            "matrix is {}×{} but the domain has dimension {d}",
            a.nrows(),
            a.ncols()
        )));
    }
    let scale = a.amax().max(f64::MIN_POSITIVE);
    if (a - a.transpose()).amax() > 1e-12 * scale {
        return Err(Error::Validation("matrix A must be symmetric".into()));
    }
    let det = a.determinant();
    if !(det.abs() > 1e-12 * scale.powi(d as i32)) {
        return Err(Error::Validation(format!(
            "matrix A must be non-singular (det = {det:e})"
        )));
    }
    Ok(())
}

fn matrix_params(a: &DMatrix<f64>) -> Vec<(String, f64)> {
    let d = a.nrows();
    let mut out = Vec::new();
    for i in 0..d {
        for j in i..d {
            out.push((format!("A{}{}", i + 1, j + 1), a[(i, j)]));
        }
    }
    out
}

/// `Φ(ξ) = ½⟨Aξ,ξ⟩` with `A` real, symmetric and non-singular.
pub fn quadratic(a: DMatrix<f64>, domain: BoxDomain) -> Result<PhaseModel> {
    validate_matrix(&a, domain.dim())?;
    let params = matrix_params(&a);
    PhaseModel::new("quadratic", quadratic_form(&a), domain, params)
}

/// `Φ(ξ) = ½⟨Aξ,ξ⟩ + εΨ(ξ)`.
pub fn perturbed_quadratic(
    a: DMatrix<f64>,
    epsilon: f64,
    psi: Perturbation,
    domain: BoxDomain,
) -> Result<PhaseModel> {
    validate_matrix(&a, domain.dim())?;
    let mut params = matrix_params(&a);
    params.push(("epsilon".into(), epsilon));
    let expr = quadratic_form(&a) + c(epsilon) * psi.expr(domain.dim())?;
    PhaseModel::new("perturbed_quadratic", expr, domain, params)
}

/// `Φ(ξ) = (x−y)·ξ + tθ(ξ)`.
pub fn dispersive(
    t: f64,
    xs: &[f64],
    ys: &[f64],
    theta: Theta,
    domain: BoxDomain,
) -> Result<PhaseModel> {
    let d = domain.dim();
    if xs.len() != d || ys.len() != d {
        return Err(Error::Validation(format!(
            "x and y must have dimension {d} (got {} and {})",
            xs.len(),
            ys.len()
        )));
    }
    let mut terms: Vec<Expr> = (0..d)
        .filter(|&i| xs[i] != ys[i])
        .map(|i| c(xs[i] - ys[i]) * x(i))
        .collect();
    if t != 0.0 {
        terms.push(c(t) * theta.expr(d));
    }
    let mut params = vec![("t".to_string(), t)];
    params.extend(xs.iter().enumerate().map(|(i, v)| (format!("x{}", i + 1), *v)));
    params.extend(ys.iter().enumerate().map(|(i, v)| (format!("y{}", i + 1), *v)));
    PhaseModel::new("dispersive", Expr::sum(terms), domain, params)
}

/// One monomial `coef · Π ξ_i^{p_i}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coef: f64,
    pub powers: Vec<u32>,
}

pub fn custom_polynomial(terms: &[Monomial], domain: BoxDomain) -> Result<PhaseModel> {
    let d = domain.dim();
    let mut exprs = Vec::new();
    for m in terms {
        if m.powers.len() != d {
            return Err(Error::Validation(format!(
                "monomial {:?} does not have {d} exponents",
                m.powers
            )));
        }
        let mut factors = vec![c(m.coef)];
        for (i, &p) in m.powers.iter().enumerate() {
            match p {
                0 => {}
                1 => factors.push(x(i)),
                _ => factors.push(x(i).powi(p as i32)),
            }
        }
        exprs.push(Expr::product(factors));
    }
    PhaseModel::new("custom_polynomial", Expr::sum(exprs), domain, vec![])
}

/// `Φ(ξ) = (e^{kξ₁} cos(kξ₂) − kξ₁)/k²` in two dimensions: `|det Hess Φ| = e^{2kξ₁}`
/// never vanishes, while `∇Φ` vanishes at every `(0, 2πm/k)`, so the gradient
/// map is not injective once the box spans more than one period in `ξ₂`.
pub fn multi_critical(k: f64, domain: BoxDomain) -> Result<PhaseModel> {
    if domain.dim() != 2 {
        return Err(Error::Validation("multi_critical is two-dimensional".into()));
    }
    if !(k > 0.0) {
        return Err(Error::Validation(format!("k must be positive, got {k}")));
    }
    let inv = 1.0 / (k * k);
    let expr = c(inv) * ((c(k) * x(0)).exp() * (c(k) * x(1)).cos() - c(k) * x(0));
    PhaseModel::new("multi_critical", expr, domain, vec![("k".into(), k)])
}

fn get_f64(params: &Value, key: &str) -> Result<Option<f64>> {
    match params.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v
            .as_f64()
            .map(Some)
            .ok_or_else(|| Error::Validation(format!("parameter `{key}` must be a number"))),
    }
}

fn require_f64(params: &Value, key: &str) -> Result<f64> {
    get_f64(params, key)?.ok_or_else(|| Error::Validation(format!("missing parameter `{key}`")))
}

fn get_vec(params: &Value, key: &str) -> Result<Option<Vec<f64>>> {
    match params.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => serde_json::from_value(v.clone())
            .map(Some)
            .map_err(|_| Error::Validation(format!("parameter `{key}` must be a list of numbers"))),
    }
}

fn get_str<'a>(params: &'a Value, key: &str) -> Option<&'a str> {
    params.get(key).and_then(Value::as_str)
}

/// `A` from either `"A": [[..], ..]` or `"diag": [..]`; identity by default.
fn matrix_param(params: &Value, d: usize) -> Result<DMatrix<f64>> {
    if let Some(rows) = params.get("A") {
        let rows: Vec<Vec<f64>> = serde_json::from_value(rows.clone())
            .map_err(|_| Error::Validation("parameter `A` must be a list of rows".into()))?;
        if rows.len() != d || rows.iter().any(|r| r.len() != d) {
            return Err(Error::Validation(format!("parameter `A` must be {d}×{d}")));
        }
        return Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]));
    }
    if let Some(diag) = get_vec(params, "diag")? {
        if diag.len() != d {
            return Err(Error::Validation(format!("parameter `diag` must have {d} entries")));
        }
        return Ok(DMatrix::from_diagonal(&nalgebra::DVector::from_vec(diag)));
    }
    Ok(DMatrix::identity(d, d))
}

/// Build a phase family by name.
pub fn builtin_phase(family: &str, params: &Value, domain: BoxDomain) -> Result<PhaseModel> {
    let d = domain.dim();
    match family {
        "quadratic" => quadratic(matrix_param(params, d)?, domain),
        "perturbed_quadratic" => {
            let eps = require_f64(params, "epsilon")?;
            let psi = Perturbation::parse(get_str(params, "psi").unwrap_or("cos_x1"))?;
            perturbed_quadratic(matrix_param(params, d)?, eps, psi, domain)
        }
        "dispersive" => {
            let t = require_f64(params, "t")?;
            let xs = get_vec(params, "x")?.unwrap_or_else(|| vec![0.0; d]);
            let ys = get_vec(params, "y")?.unwrap_or_else(|| vec![0.0; d]);
            let theta = match get_str(params, "theta").unwrap_or("quadratic") {
                "quadratic" => Theta::Quadratic,
                "perturbed" => Theta::Perturbed,
                other => return Err(Error::Validation(format!("unknown θ choice `{other}`"))),
            };
            dispersive(t, &xs, &ys, theta, domain)
        }
        "custom_polynomial" => {
            let terms: Vec<Monomial> = serde_json::from_value(
                params
                    .get("terms")
                    .cloned()
                    .ok_or_else(|| Error::Validation("missing parameter `terms`".into()))?,
            )
            .map_err(|e| Error::Validation(format!("bad `terms`: {e}")))?;
            custom_polynomial(&terms, domain)
        }
        "multi_critical" => multi_critical(get_f64(params, "k")?.unwrap_or(3.0), domain),
        "expression" => {
            let expr: Expr = serde_json::from_value(
                params
                    .get("expr")
                    .cloned()
                    .ok_or_else(|| Error::Validation("missing parameter `expr`".into()))?,
            )
            .map_err(|e| Error::Validation(format!("bad `expr`: {e}")))?;
            PhaseModel::new("expression", expr, domain, vec![])
        }
        other => Err(Error::UnknownFamily(other.to_string())),
    }
}

/// Build a symbol family by name. When `v` is given, the support must lie
/// strictly inside it.
pub fn builtin_symbol(family: &str, params: &Value, d: usize, v: Option<&BoxDomain>) -> Result<SymbolModel> {
    let center = get_vec(params, "center")?.unwrap_or_else(|| vec![0.0; d]);
    if center.len() != d {
        return Err(Error::Validation(format!("symbol center must have {d} entries")));
    }
    let sym = match family {
        "smooth_bump" => SymbolModel::smooth_bump(center, get_f64(params, "radius")?.unwrap_or(1.0))?,
        "plateau_bump" => SymbolModel::plateau_bump(
            center,
            require_f64(params, "inner")?,
            require_f64(params, "outer")?,
        )?,
        "product_bump" => {
            let radii = match get_vec(params, "radii")? {
                Some(r) => r,
                None => vec![get_f64(params, "radius")?.unwrap_or(1.0); d],
            };
            SymbolModel::product_bump(center, radii)?
        }
        "polynomial_bump" => {
            let radii = match get_vec(params, "radii")? {
                Some(r) => r,
                None => vec![get_f64(params, "radius")?.unwrap_or(1.0); d],
            };
            let power = get_f64(params, "power")?.unwrap_or(4.0);
            if power < 1.0 || power.fract() != 0.0 {
                return Err(Error::Validation(format!("power must be a positive integer, got {power}")));
            }
            SymbolModel::polynomial_bump(center, radii, power as u32)?
        }
        "zero" => {
            let r = get_f64(params, "radius")?.unwrap_or(1.0);
            SymbolModel::zero(BoxDomain::cube(&center, r))
        }
        other => return Err(Error::UnknownFamily(other.to_string())),
    };
    if let Some(v) = v {
        if !v.strictly_contains(sym.support()) {
            return Err(Error::Validation(format!(
                "symbol support {} is not strictly inside V = {v}",
                sym.support()
            )));
        }
    }
    Ok(sym)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use serde_json::json;

    #[test]
    fn identity_quadratic() {
        let p = builtin_phase("quadratic", &json!({}), BoxDomain::symmetric(2, 1.0)).unwrap();
        assert_relative_eq!(p.value(&[0.6, -0.8]), 0.5);
    }

    #[test]
    fn singular_matrix_rejected() {
        let err = builtin_phase("quadratic", &json!({"diag": [1.0, 0.0]}), BoxDomain::symmetric(2, 1.0))
            .unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn unknown_family_rejected() {
        assert!(matches!(
            builtin_phase("quartic", &json!({}), BoxDomain::symmetric(1, 1.0)).unwrap_err(),
            Error::UnknownFamily(_)
        ));
        assert!(matches!(
            builtin_symbol("gaussian", &json!({}), 1, None).unwrap_err(),
            Error::UnknownFamily(_)
        ));
    }

    #[test]
    fn dispersive_at_zero_time_is_linear() {
        let p = builtin_phase(
            "dispersive",
            &json!({"t": 0.0, "x": [1.0, 0.5], "y": [0.0, 0.0]}),
            BoxDomain::symmetric(2, 1.0),
        )
        .unwrap();
        let h = p.derivatives_at(&[0.2, 0.3], 2).unwrap().hessian();
        assert_eq!(h.amax(), 0.0);
        assert_relative_eq!(p.value(&[0.2, 0.3]), 0.35);
    }

    #[test]
    fn perturbed_hessian_at_origin() {
        let p = builtin_phase(
            "perturbed_quadratic",
            &json!({"epsilon": 0.05, "psi": "cos_x1"}),
            BoxDomain::symmetric(2, 1.0),
        )
        .unwrap();
        let h = p.derivatives_at(&[0.0, 0.0], 2).unwrap().hessian();
        assert_relative_eq!(h[(0, 0)], 0.95, epsilon = 1e-15);
        assert_relative_eq!(h[(1, 1)], 1.0);
        assert_relative_eq!(h.determinant(), 0.95, epsilon = 1e-15);
    }

    #[test]
    fn symbol_must_sit_inside_v() {
        let v = BoxDomain::symmetric(1, 1.0);
        assert!(builtin_symbol("smooth_bump", &json!({"radius": 1.0}), 1, Some(&v)).is_err());
        assert!(builtin_symbol("smooth_bump", &json!({"radius": 0.9}), 1, Some(&v)).is_ok());
    }

    #[test]
    fn polynomial_terms() {
        let p = builtin_phase(
            "custom_polynomial",
            &json!({"terms": [{"coef": 1.0, "powers": [3]}, {"coef": -2.0, "powers": [1]}]}),
            BoxDomain::symmetric(1, 2.0),
        )
        .unwrap();
        assert_relative_eq!(p.value(&[1.5]), 1.5f64.powi(3) - 3.0);
    }

    #[test]
    fn multi_critical_has_two_critical_points() {
        let k = 3.0;
        let p = multi_critical(k, BoxDomain::new(vec![-0.5, -0.6], vec![0.5, 2.8]).unwrap()).unwrap();
        for y in [0.0, 2.0 * std::f64::consts::PI / k] {
            let g = p.gradient(&[0.0, y]);
            assert!(g.iter().all(|v| v.abs() < 1e-14), "{g:?}");
        }
        let h = p.derivatives_at(&[0.2, 0.4], 2).unwrap().hessian();
        assert_relative_eq!(h.determinant(), -(2.0 * k * 0.2f64).exp(), epsilon = 1e-12);
    }
}
