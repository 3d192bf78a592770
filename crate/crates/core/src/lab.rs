//! Experiments confronting measured `|I(λ)|` with the bound formulas:
//! decay-exponent fits, rescaling covariance, the dispersive family and the
//! calibrated plateau comparison.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::audit::{audit, AuditOptions, HypothesisReport};
use crate::cover::PartitionOfUnity;
use crate::deriv::{PhaseModel, SymbolModel};
use crate::domain::BoxDomain;
use crate::error::{Error, Result};
use crate::families::{self, Theta};
use crate::quadrature::{decomposition_integral, oracle_integral, DecompositionOptions, Method, QuadOptions};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundVariant {
    /// `C a₀^{−(1+d)} (1 + M_{d+2}^{d/2+d²}) N_{d+1} λ^{−d/2}`.
    Thm1,
    /// `C a₀^{−1} (1 + M_{d+2}^{d/2}) N_{d+1} λ^{−d/2}`, for injective `∇Φ`.
    Thm2,
}

impl BoundVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            BoundVariant::Thm1 => "thm1",
            BoundVariant::Thm2 => "thm2",
        }
    }
}

/// Right-hand side of one of the two bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundFormula {
    pub variant: BoundVariant,
    pub d: usize,
    pub a0: f64,
    /// `M_{d+2}`.
    pub m: f64,
    /// `N_{d+1}`.
    pub n: f64,
    pub c: f64,
}

impl BoundFormula {
    pub fn from_report(report: &HypothesisReport, variant: BoundVariant, c: f64) -> Self {
        BoundFormula {
            variant,
            d: report.dim,
            a0: report.a0,
            m: report.m_top(),
            n: report.n_top(),
            c,
        }
    }

    /// Exponent of `M_{d+2}`.
    pub fn m_exponent(&self) -> f64 {
        let d = self.d as f64;
        match self.variant {
            BoundVariant::Thm1 => d / 2.0 + d * d,
            BoundVariant::Thm2 => d / 2.0,
        }
    }

    /// Exponent of `a₀^{-1}`.
    pub fn a0_exponent(&self) -> f64 {
        match self.variant {
            BoundVariant::Thm1 => 1.0 + self.d as f64,
            BoundVariant::Thm2 => 1.0,
        }
    }

    /// Everything but `λ^{−d/2}`.
    pub fn prefactor(&self) -> f64 {
        self.c * self.a0.powf(-self.a0_exponent()) * (1.0 + self.m.powf(self.m_exponent())) * self.n
    }

    pub fn eval(&self, lambda: f64) -> f64 {
        self.prefactor() * lambda.powf(-(self.d as f64) / 2.0)
    }

    pub fn with_c(&self, c: f64) -> Self {
        BoundFormula { c, ..self.clone() }
    }
}

/// `count` points from `start` to `stop`, equally spaced in `log λ`.
pub fn geometric_grid(start: f64, stop: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![start],
        _ => {
            let r = (stop / start).ln() / (count - 1) as f64;
            (0..count)
                .map(|k| if k == count - 1 { stop } else { snap(start * (r * k as f64).exp()) })
                .collect()
        }
    }
}

/// Rounds values within a few ulps of an integer, so that power-of-two
/// grids hit the powers exactly.
fn snap(v: f64) -> f64 {
    let r = v.round();
    if r != 0.0 && ((v - r) / r).abs() < 1e-12 {
        r
    } else {
        v
    }
}

/// Least-squares line through `(log x, log y)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual in `log y`.
    pub residual: f64,
    pub points: usize,
}

pub fn fit_loglog(xs: &[f64], ys: &[f64]) -> Option<LogLogFit> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum::<f64>() / n).sqrt();
    Some(LogLogFit {
        slope,
        intercept,
        residual,
        points: pts.len(),
    })
}

/// One sweep point.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub lambda: f64,
    pub value: Complex64,
    pub error_estimate: f64,
    /// Set when the integrator failed to converge; the point is left out of
    /// fits and plateaus.
    pub failed: bool,
}

impl SweepPoint {
    pub fn abs(&self) -> f64 {
        self.value.norm()
    }
}

#[derive(Clone, Debug)]
pub struct DecaySweepResult {
    pub d: usize,
    pub method: Method,
    pub points: Vec<SweepPoint>,
    /// Fit over the tail window; `None` when the residual exceeds the
    /// threshold or too few points converged.
    pub fit: Option<LogLogFit>,
    /// The fit as computed, whatever its residual.
    pub raw_fit: Option<LogLogFit>,
    /// `max_λ |I(λ)| λ^{d/2}` over converged points.
    pub plateau: f64,
}

impl DecaySweepResult {
    pub fn scaled(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let h = self.d as f64 / 2.0;
        self.points.iter().filter(|p| !p.failed).map(move |p| (p.lambda, p.abs() * p.lambda.powf(h)))
    }

    /// `|I(λ)| / bound(λ)` per converged point.
    pub fn ratios(&self, formula: &BoundFormula) -> Vec<(f64, f64)> {
        self.points
            .iter()
            .filter(|p| !p.failed)
            .map(|p| (p.lambda, p.abs() / formula.eval(p.lambda)))
            .collect()
    }
}

/// How to evaluate `I(λ)` in a sweep.
#[derive(Clone, Debug)]
pub enum SweepMethod<'a> {
    Oracle(QuadOptions),
    Decomposition {
        partition: &'a PartitionOfUnity,
        a0: f64,
        options: DecompositionOptions,
    },
}

/// Fit window and acceptance of a decay sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepOptions {
    /// Fraction of the grid (largest `λ`) used for the fit.
    pub tail_fraction: f64,
    pub residual_threshold: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            tail_fraction: 0.5,
            residual_threshold: 0.05,
        }
    }
}

pub fn evaluate(phase: &PhaseModel, symbol: &SymbolModel, lambda: f64, method: &SweepMethod) -> Result<(Complex64, f64)> {
    let r = match method {
        SweepMethod::Oracle(q) => oracle_integral(phase, symbol, lambda, q)?,
        SweepMethod::Decomposition { partition, a0, options } => {
            decomposition_integral(phase, symbol, lambda, partition, *a0, options)?
        }
    };
    Ok((r.value, r.error_estimate))
}

/// `|I(λ)|` over a grid of `λ ≥ 1` and a log-log fit over the tail window.
pub fn decay_sweep(
    phase: &PhaseModel,
    symbol: &SymbolModel,
    lambdas: &[f64],
    method: &SweepMethod,
    opts: &SweepOptions,
) -> Result<DecaySweepResult> {
    if let Some(l) = lambdas.iter().find(|l| !(**l >= 1.0)) {
        return Err(Error::Validation(format!("sweep λ = {l} is below 1")));
    }
    let d = phase.dim();
    let mut points = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let p = match evaluate(phase, symbol, lambda, method) {
            Ok((value, err)) => SweepPoint {
                lambda,
                value,
                error_estimate: err,
                failed: false,
            },
            Err(Error::Accuracy { best_re, best_im, delta }) => SweepPoint {
                lambda,
                value: Complex64::new(best_re, best_im),
                error_estimate: delta,
                failed: true,
            },
            Err(e) => return Err(e),
        };
        points.push(p);
    }
    let mut sorted: Vec<&SweepPoint> = points.iter().filter(|p| !p.failed).collect();
    sorted.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
    let keep = ((sorted.len() as f64) * opts.tail_fraction).ceil() as usize;
    let tail = &sorted[sorted.len() - keep.min(sorted.len())..];
    let xs: Vec<f64> = tail.iter().map(|p| p.lambda).collect();
    let ys: Vec<f64> = tail.iter().map(|p| p.abs()).collect();
    let raw_fit = fit_loglog(&xs, &ys);
    let fit = raw_fit.clone().filter(|f| f.residual < opts.residual_threshold);
    let h = d as f64 / 2.0;
    let plateau = sorted.iter().map(|p| p.abs() * p.lambda.powf(h)).fold(0.0, f64::max);
    Ok(DecaySweepResult {
        d,
        method: match method {
            SweepMethod::Oracle(_) => Method::Oracle,
            SweepMethod::Decomposition { .. } => Method::Decomposition,
        },
        points,
        fit,
        raw_fit,
        plateau,
    })
}

/// Outcome of comparing `(λ, Φ)` with `(tλ, Φ/t)`.
#[derive(Clone, Debug, Serialize)]
pub struct RescalingReport {
    pub t: f64,
    pub lambda: f64,
    /// `|I(λ,Φ) − I(tλ,Φ/t)| / |I(λ,Φ)|`.
    pub discrepancy: f64,
    /// Largest `|t·M_k(Φ/t) / M_k(Φ) − 1|`.
    pub m_error: f64,
    /// `|t^d a₀(Φ/t) / a₀(Φ) − 1|`.
    pub a0_error: f64,
    /// `|thm1(tλ; Φ/t) / (t^{d/2+d²} · C a₀^{−(1+d)}(1+(M/t)^{d/2+d²}) N λ^{−d/2}) − 1|`.
    pub algebra_error: f64,
}

pub fn rescaling_check(
    phase: &PhaseModel,
    symbol: &SymbolModel,
    lambda: f64,
    t: f64,
    audit_opts: &AuditOptions,
    quad: &QuadOptions,
) -> Result<RescalingReport> {
    if !(t > 0.0) {
        return Err(Error::Validation(format!("rescaling factor t = {t} must be positive")));
    }
    let scaled = phase.scaled(1.0 / t);
    let i0 = oracle_integral(phase, symbol, lambda, quad)?;
    let i1 = if t == 1.0 {
        i0.clone()
    } else {
        oracle_integral(&scaled, symbol, t * lambda, quad)?
    };
    let discrepancy = if i0.abs() > 0.0 {
        (i0.value - i1.value).norm() / i0.abs()
    } else {
        (i0.value - i1.value).norm()
    };
    let r0 = audit(phase, symbol, audit_opts)?;
    let r1 = audit(&scaled, symbol, audit_opts)?;
    let m_error = r0
        .m
        .iter()
        .zip(&r1.m)
        .map(|((_, a), (_, b))| if *a == 0.0 { b.abs() } else { (t * b / a - 1.0).abs() })
        .fold(0.0, f64::max);
    let d = phase.dim();
    let a0_error = (t.powi(d as i32) * r1.a0 / r0.a0 - 1.0).abs();
    let f0 = BoundFormula::from_report(&r0, BoundVariant::Thm1, 1.0);
    let f1 = BoundFormula {
        a0: f0.a0 / t.powi(d as i32),
        m: f0.m / t,
        ..f0.clone()
    };
    let e = f0.m_exponent();
    let direct = f1.eval(t * lambda);
    let chain = t.powf(e) * f0.c * f0.a0.powf(-f0.a0_exponent()) * (1.0 + (f0.m / t).powf(e)) * f0.n * lambda.powf(-(d as f64) / 2.0);
    Ok(RescalingReport {
        t,
        lambda,
        discrepancy,
        m_error,
        a0_error,
        algebra_error: (direct / chain - 1.0).abs(),
    })
}

/// One row of the dispersive table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DispersiveRow {
    pub t: f64,
    pub lambda: f64,
    pub abs: f64,
    /// `(tλ)^{−d/2}`.
    pub envelope: f64,
    /// `t ≥ 1/λ`.
    pub in_regime: bool,
}

#[derive(Clone, Debug)]
pub struct DispersiveResult {
    pub rows: Vec<DispersiveRow>,
    /// Fit of `log |I|` against `log t` over in-regime rows with `t ≥ fit_min_t`.
    pub fit: Option<LogLogFit>,
}

/// Specification of the dispersive experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DispersiveSetup {
    pub theta: Theta,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub lambda: f64,
    pub t: Vec<f64>,
    /// Lower end of the fit window; `None` means `4/λ`.
    #[serde(default)]
    pub fit_min_t: Option<f64>,
}

/// `|I|` for `Φ_t(ξ) = (x−y)·ξ + t θ(ξ)` at fixed `λ` across `t`.
pub fn dispersive_experiment(setup: &DispersiveSetup, domain: &BoxDomain, symbol: &SymbolModel, quad: &QuadOptions) -> Result<DispersiveResult> {
    let d = domain.dim();
    let lambda = setup.lambda;
    let mut rows = Vec::with_capacity(setup.t.len());
    for &t in &setup.t {
        let phase = families::dispersive(t, &setup.x, &setup.y, setup.theta, domain.clone())?;
        let r = oracle_integral(&phase, symbol, lambda, quad)?;
        rows.push(DispersiveRow {
            t,
            lambda,
            abs: r.abs(),
            envelope: (t * lambda).powf(-(d as f64) / 2.0),
            in_regime: t >= 1.0 / lambda,
        });
    }
    let min_t = setup.fit_min_t.unwrap_or(4.0 / lambda);
    let (xs, ys): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.in_regime && r.t >= min_t * (1.0 - 1e-12))
        .map(|r| (r.t, r.abs))
        .unzip();
    Ok(DispersiveResult {
        fit: fit_loglog(&xs, &ys),
        rows,
    })
}

/// Calibrated plateau comparison for one test phase.
#[derive(Clone, Debug, Serialize)]
pub struct BoundRatioReport {
    pub variant: BoundVariant,
    pub calibrated_c: f64,
    /// Formula prefactor with the calibrated constant.
    pub prefactor: f64,
    /// `max_λ |I(λ)| λ^{d/2}`.
    pub plateau: f64,
    /// `plateau / prefactor`; above 1 means the measurement exceeds the
    /// calibrated bound.
    pub ratio: f64,
    pub exceeds: bool,
    /// `(λ, |I(λ)| / bound(λ))`.
    pub series: Vec<(f64, f64)>,
}

/// `C` making the formula exact for a reference measurement
/// `|I(λ_ref)| λ_ref^{d/2}`.
pub fn calibrate(formula: &BoundFormula, reference_abs: f64, reference_lambda: f64) -> f64 {
    let unit = formula.with_c(1.0);
    reference_abs / unit.eval(reference_lambda)
}

pub fn bound_ratio_report(sweep: &DecaySweepResult, formula: &BoundFormula) -> BoundRatioReport {
    let prefactor = formula.prefactor();
    let ratio = sweep.plateau / prefactor;
    BoundRatioReport {
        variant: formula.variant,
        calibrated_c: formula.c,
        prefactor,
        plateau: sweep.plateau,
        ratio,
        exceeds: ratio > 1.0,
        series: sweep.ratios(formula),
    }
}

/// Empirical power `p` in `plateau ∝ a₀^{p}` across a family.
pub fn a0_power(a0s: &[f64], plateaus: &[f64]) -> Option<LogLogFit> {
    fit_loglog(a0s, plateaus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn formula(variant: BoundVariant) -> BoundFormula {
        BoundFormula {
            variant,
            d: 2,
            a0: 0.5,
            m: 3.0,
            n: 4.0,
            c: 1.5,
        }
    }

    #[test]
    fn formula_values() {
        let f = formula(BoundVariant::Thm1);
        assert_relative_eq!(f.eval(16.0), 1.5 * 0.5f64.powi(-3) * (1.0 + 3.0f64.powf(5.0)) * 4.0 / 16.0);
        let g = formula(BoundVariant::Thm2);
        assert_relative_eq!(g.eval(16.0), 1.5 * 2.0 * (1.0 + 3.0) * 4.0 / 16.0);
    }

    #[test]
    fn grid_and_fit() {
        let g = geometric_grid(4.0, 1024.0, 5);
        assert_eq!(g.len(), 5);
        assert_eq!(g[0], 4.0);
        assert_eq!(g[4], 1024.0);
        assert_relative_eq!(g[1], 16.0, epsilon = 1e-12);
        let ys: Vec<f64> = g.iter().map(|l| 3.0 * l.powf(-0.5)).collect();
        let f = fit_loglog(&g, &ys).unwrap();
        assert_relative_eq!(f.slope, -0.5, epsilon = 1e-12);
        assert_relative_eq!(f.intercept, 3.0f64.ln(), epsilon = 1e-12);
        assert!(f.residual < 1e-12);
    }

    #[test]
    fn one_dimensional_quadratic_decays_like_inverse_root() {
        let v = BoxDomain::symmetric(1, 2.0);
        let p = families::quadratic(DMatrix::identity(1, 1), v).unwrap();
        let b = SymbolModel::smooth_bump(vec![0.0], 1.0).unwrap();
        let grid = geometric_grid(64.0, 16384.0, 9);
        let s = decay_sweep(&p, &b, &grid, &SweepMethod::Oracle(QuadOptions::default()), &SweepOptions::default()).unwrap();
        let f = s.fit.unwrap();
        assert!((f.slope + 0.5).abs() < 0.02, "{f:?}");
        assert!(s.plateau.is_finite());
    }

    #[test]
    fn non_stationary_phase_decays_fast() {
        let v = BoxDomain::symmetric(1, 4.0);
        let p = families::quadratic(DMatrix::identity(1, 1), v).unwrap();
        let b = SymbolModel::smooth_bump(vec![2.5], 1.0).unwrap();
        let grid = geometric_grid(4.0, 64.0, 5);
        let s = decay_sweep(&p, &b, &grid, &SweepMethod::Oracle(QuadOptions::default()), &SweepOptions { tail_fraction: 1.0, residual_threshold: f64::INFINITY }).unwrap();
        assert!(s.fit.unwrap().slope <= -2.0);
    }

    #[test]
    fn rescaling_identity_and_factor_two() {
        let v = BoxDomain::symmetric(1, 2.0);
        let p = families::quadratic(DMatrix::identity(1, 1), v).unwrap();
        let b = SymbolModel::smooth_bump(vec![0.0], 1.0).unwrap();
        let ao = AuditOptions { grid_points: Some(101), injectivity_samples: 200, taylor_pairs: 100, ..Default::default() };
        let q = QuadOptions::default();
        let r = rescaling_check(&p, &b, 64.0, 1.0, &ao, &q).unwrap();
        assert_eq!(r.discrepancy, 0.0);
        let r = rescaling_check(&p, &b, 64.0, 2.0, &ao, &q).unwrap();
        assert!(r.discrepancy <= 1e-7);
        assert!(r.m_error <= 1e-12);
        assert!(r.a0_error <= 1e-12);
        assert!(r.algebra_error <= 1e-12);
    }

    #[test]
    fn dispersive_with_equal_points_is_a_rescaled_quadratic() {
        let v = BoxDomain::symmetric(1, 3.0);
        let b = SymbolModel::smooth_bump(vec![0.0], 2.0).unwrap();
        let setup = DispersiveSetup {
            theta: Theta::Quadratic,
            x: vec![0.3],
            y: vec![0.3],
            lambda: 256.0,
            t: vec![0.25, 0.5],
            fit_min_t: None,
        };
        let r = dispersive_experiment(&setup, &v, &b, &QuadOptions::default()).unwrap();
        let q = families::quadratic(DMatrix::identity(1, 1), v.clone()).unwrap();
        for row in &r.rows {
            let direct = oracle_integral(&q, &b, row.t * 256.0, &QuadOptions::default()).unwrap();
            assert_relative_eq!(row.abs, direct.abs(), max_relative = 1e-6);
        }
    }

    #[test]
    fn calibration_makes_reference_ratio_one() {
        let f = formula(BoundVariant::Thm2);
        let c = calibrate(&f, 0.01, 1024.0);
        assert_relative_eq!(f.with_c(c).eval(1024.0), 0.01, max_relative = 1e-14);
    }

    proptest! {
        #[test]
        fn formulas_are_monotone(
            a0 in 0.01f64..10.0, m in 0.0f64..10.0, n in 0.0f64..10.0, d in 1usize..4,
            l in 1.0f64..1e6, k in 1.0f64..4.0,
        ) {
            for variant in [BoundVariant::Thm1, BoundVariant::Thm2] {
                let f = BoundFormula { variant, d, a0, m, n, c: 1.0 };
                let base = f.eval(l);
                let more_m = BoundFormula { m: m * k, ..f.clone() }.eval(l);
                let more_n = BoundFormula { n: n * k, ..f.clone() }.eval(l);
                let less_a0 = BoundFormula { a0: a0 / k, ..f.clone() }.eval(l);
                prop_assert!(f.eval(l * k) <= base);
                prop_assert!(more_m >= base);
                prop_assert!(more_n >= base);
                prop_assert!(less_a0 >= base);
            }
        }
    }
}
