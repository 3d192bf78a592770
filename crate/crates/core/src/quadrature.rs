//! Evaluation of `I(λ) = ∫ e^{iλΦ(ξ)} b(ξ) dξ`.
//!
//! The oracle integrates the integrand directly with composite tensor
//! Gauss–Legendre panels, doubling the panel count until two successive
//! values agree. The decomposition evaluates, for each piece `χ_j` of a
//! partition of unity,
//!
//! ```text
//! K_j = ∫ e^{iλΦ} ψ(√λ|∇Φ|) χ_j b
//! L_j = (i/λ)^N ∫ e^{iλΦ} (ᵗL)^N [(1 − ψ(√λ|∇Φ|)) χ_j b]
//! ```
//!
//! and sums `K_j + L_j`. Both terms use a locally adaptive cubature, so the
//! two routes share no integration code beyond the Gauss–Legendre nodes.

use std::io::Write;
use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;
use num_complex::Complex64;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cover::PartitionOfUnity;
use crate::deriv::{Amplitude, PhaseModel, SymbolModel, MAX_QUADRATURE_DIM};
use crate::domain::BoxDomain;
use crate::error::{Error, Result};
use crate::ibp::{field_jets, ibp_factor, nested_transpose, Cutoff};
use crate::jet::{Jet, JetSpace};
use crate::table::fmt_f64;

/// Stopping rule and resolution limits of the panel integrator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadOptions {
    /// Successive refinements must agree to `rtol·|I| + atol`.
    pub rtol: f64,
    pub atol: f64,
    /// Gauss–Legendre points per panel and axis.
    pub rule_points: usize,
    pub min_panels: usize,
    /// Target quadrature points per local wavelength of `e^{iλΦ}`.
    pub points_per_wavelength: f64,
    /// Cap on integrand evaluations in a single pass.
    pub max_evaluations: usize,
    /// Gauss–Legendre points per axis on each box of the adaptive
    /// integrator.
    pub adaptive_rule_points: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        QuadOptions {
            rtol: 1e-7,
            atol: 1e-15,
            rule_points: 16,
            min_panels: 2,
            points_per_wavelength: 10.0,
            max_evaluations: 200_000_000,
            adaptive_rule_points: 8,
        }
    }
}

impl QuadOptions {
    pub fn with_rtol(mut self, rtol: f64) -> Self {
        self.rtol = rtol;
        self
    }
}

/// A converged panel integral.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadEstimate {
    pub value: Complex64,
    /// Change between the last two refinements.
    pub error: f64,
    pub panels: Vec<usize>,
    pub evaluations: usize,
}

fn rule(points: usize) -> Vec<(f64, f64)> {
    let n = NonZeroUsize::new(points.max(1)).unwrap();
    GaussLegendre::new(n).as_node_weight_pairs().to_vec()
}

/// Nodes and weights of the composite rule along each axis.
fn axis_rules(region: &BoxDomain, panels: &[usize], base: &[(f64, f64)]) -> Vec<(Vec<f64>, Vec<f64>)> {
    (0..region.dim())
        .map(|i| {
            let (lo, hi) = (region.lo[i], region.hi[i]);
            let p = panels[i];
            let h = (hi - lo) / p as f64;
            let mut xs = Vec::with_capacity(p * base.len());
            let mut ws = Vec::with_capacity(p * base.len());
            for k in 0..p {
                let a = lo + h * k as f64;
                for &(x, w) in base {
                    xs.push(a + 0.5 * h * (x + 1.0));
                    ws.push(0.5 * h * w);
                }
            }
            (xs, ws)
        })
        .collect()
}

/// Tensor-product sum; the outermost axis is split across threads and the
/// partial sums are added in index order.
fn tensor_sum<F>(axes: &[(Vec<f64>, Vec<f64>)], f: &F) -> Complex64
where
    F: Fn(&[f64]) -> Complex64 + Sync,
{
    let d = axes.len();
    let (x0, w0) = &axes[0];
    let partial: Vec<Complex64> = (0..x0.len())
        .into_par_iter()
        .map(|i0| {
            let mut p = vec![0.0; d];
            p[0] = x0[i0];
            let mut acc = Complex64::new(0.0, 0.0);
            if d == 1 {
                acc = f(&p);
            } else {
                let mut idx = vec![0usize; d];
                loop {
                    let mut w = 1.0;
                    for k in 1..d {
                        p[k] = axes[k].0[idx[k]];
                        w *= axes[k].1[idx[k]];
                    }
                    if w != 0.0 {
                        acc += f(&p) * w;
                    }
                    let mut k = d - 1;
                    loop {
                        idx[k] += 1;
                        if idx[k] < axes[k].0.len() {
                            break;
                        }
                        idx[k] = 0;
                        k -= 1;
                        if k == 0 {
                            break;
                        }
                    }
                    if k == 0 {
                        break;
                    }
                }
            }
            acc * w0[i0]
        })
        .collect();
    partial.into_iter().sum()
}

/// Integrates `f` over `region`, starting from `panels` per axis and
/// doubling until successive values agree.
pub fn integrate<F>(f: F, region: &BoxDomain, panels: Vec<usize>, opts: &QuadOptions) -> Result<QuadEstimate>
where
    F: Fn(&[f64]) -> Complex64 + Sync,
{
    if region.volume() == 0.0 {
        return Ok(QuadEstimate {
            value: Complex64::new(0.0, 0.0),
            error: 0.0,
            panels,
            evaluations: 0,
        });
    }
    let base = rule(opts.rule_points);
    let mut panels: Vec<usize> = panels.into_iter().map(|p| p.max(opts.min_panels).max(1)).collect();
    let mut prev: Option<Complex64> = None;
    let mut evaluations = 0usize;
    let mut last_delta = f64::INFINITY;
    loop {
        let count: f64 = panels.iter().map(|p| (p * base.len()) as f64).product();
        if count > opts.max_evaluations as f64 {
            let best = prev.unwrap_or_default();
            return Err(Error::Accuracy {
                best_re: best.re,
                best_im: best.im,
                delta: last_delta,
            });
        }
        let axes = axis_rules(region, &panels, &base);
        let v = tensor_sum(&axes, &f);
        evaluations += count as usize;
        if let Some(p) = prev {
            let delta = (v - p).norm();
            if delta <= opts.rtol * v.norm() + opts.atol {
                return Ok(QuadEstimate {
                    value: v,
                    error: delta,
                    panels,
                    evaluations,
                });
            }
            last_delta = delta;
        }
        prev = Some(v);
        for p in panels.iter_mut() {
            *p *= 2;
        }
    }
}

fn box_rule<F>(f: &F, region: &BoxDomain, base: &[(f64, f64)]) -> Complex64
where
    F: Fn(&[f64]) -> Complex64,
{
    let d = region.dim();
    let axes = axis_rules(region, &vec![1; d], base);
    let m = base.len();
    let mut idx = vec![0usize; d];
    let mut p = vec![0.0; d];
    let mut acc = Complex64::new(0.0, 0.0);
    loop {
        let mut w = 1.0;
        for k in 0..d {
            p[k] = axes[k].0[idx[k]];
            w *= axes[k].1[idx[k]];
        }
        acc += f(&p) * w;
        let mut k = 0;
        loop {
            idx[k] += 1;
            if idx[k] < m {
                break;
            }
            idx[k] = 0;
            k += 1;
            if k == d {
                return acc;
            }
        }
    }
}

/// The two halves of `region` along axis `i`.
fn halve(region: &BoxDomain, i: usize) -> [BoxDomain; 2] {
    let mid = 0.5 * (region.lo[i] + region.hi[i]);
    let mut left = region.clone();
    let mut right = region.clone();
    left.hi[i] = mid;
    right.lo[i] = mid;
    [left, right]
}

/// A cell of the adaptive integrator, with its halves along the axis
/// where halving changes the estimate most.
struct Leaf {
    halves: [(BoxDomain, Complex64); 2],
    refined: Complex64,
    error: f64,
}

fn make_leaf<F>(f: &F, region: &BoxDomain, value: Complex64, base: &[(f64, f64)]) -> Leaf
where
    F: Fn(&[f64]) -> Complex64,
{
    let mut best: Option<Leaf> = None;
    for i in 0..region.dim() {
        let [l, r] = halve(region, i);
        let (vl, vr) = (box_rule(f, &l, base), box_rule(f, &r, base));
        let refined = vl + vr;
        let error = (refined - value).norm();
        if best.as_ref().is_none_or(|b| error > b.error) {
            best = Some(Leaf {
                halves: [(l, vl), (r, vr)],
                refined,
                error,
            });
        }
    }
    best.expect("region has at least one axis")
}

/// Locally adaptive cubature: the region is cut into `panels` cells, each
/// cell is compared with the sum over its two halves, and the cells carrying
/// the largest share of the error are bisected until the summed error is
/// below `rtol·|I| + atol`.
pub fn integrate_adaptive<F>(f: F, region: &BoxDomain, panels: Vec<usize>, opts: &QuadOptions) -> Result<QuadEstimate>
where
    F: Fn(&[f64]) -> Complex64 + Sync,
{
    let d = region.dim();
    if region.volume() == 0.0 {
        return Ok(QuadEstimate {
            value: Complex64::new(0.0, 0.0),
            error: 0.0,
            panels,
            evaluations: 0,
        });
    }
    let base = rule(opts.adaptive_rule_points);
    let per_box = base.len().pow(d as u32);
    let panels: Vec<usize> = panels.into_iter().map(|p| p.max(1)).collect();
    let cells = region.grid_cells(&panels);
    let mut evaluations = cells.len() * per_box * (1 + 2 * d);
    if evaluations > opts.max_evaluations {
        return Err(Error::Accuracy {
            best_re: f64::NAN,
            best_im: f64::NAN,
            delta: f64::INFINITY,
        });
    }
    let mut leaves: Vec<Leaf> = cells
        .par_iter()
        .map(|c| {
            let v = box_rule(&f, c, &base);
            make_leaf(&f, c, v, &base)
        })
        .collect();
    loop {
        let value: Complex64 = leaves.iter().map(|l| l.refined).sum();
        let error: f64 = leaves.iter().map(|l| l.error).sum();
        let target = opts.rtol * value.norm() + opts.atol;
        if error <= target {
            return Ok(QuadEstimate {
                value,
                error,
                panels,
                evaluations,
            });
        }
        let mut order: Vec<usize> = (0..leaves.len()).collect();
        order.sort_by(|&a, &b| leaves[b].error.total_cmp(&leaves[a].error).then(a.cmp(&b)));
        let mut chosen = Vec::new();
        let mut share = 0.0;
        for &i in &order {
            if share >= 0.5 * (error - target) {
                break;
            }
            share += leaves[i].error;
            chosen.push(i);
        }
        let cost = chosen.len() * 2 * 2 * d * per_box;
        if evaluations + cost > opts.max_evaluations {
            return Err(Error::Accuracy {
                best_re: value.re,
                best_im: value.im,
                delta: error,
            });
        }
        evaluations += cost;
        chosen.sort_unstable();
        let mut split: Vec<Leaf> = chosen
            .par_iter()
            .flat_map_iter(|&i| {
                leaves[i]
                    .halves
                    .iter()
                    .map(|(c, v)| make_leaf(&f, c, *v, &base))
                    .collect::<Vec<_>>()
            })
            .collect();
        let mut keep = Vec::with_capacity(leaves.len() + split.len());
        let mut next = chosen.iter().peekable();
        for (i, leaf) in leaves.into_iter().enumerate() {
            if next.peek() == Some(&&i) {
                next.next();
            } else {
                keep.push(leaf);
            }
        }
        keep.append(&mut split);
        leaves = keep;
    }
}

/// Panels per axis resolving `e^{iλΦ}` on `region` at the requested points
/// per wavelength, from `max |∂_iΦ|` over a coarse grid.
pub fn oscillation_panels(phase: &PhaseModel, region: &BoxDomain, lambda: f64, opts: &QuadOptions) -> Vec<usize> {
    let d = region.dim();
    let mut gmax = vec![0.0f64; d];
    for p in region.grid_points(9).points() {
        for (i, g) in phase.gradient(&p).iter().enumerate() {
            gmax[i] = gmax[i].max(g.abs());
        }
    }
    let widths = region.widths();
    (0..d)
        .map(|i| {
            let waves = lambda * gmax[i] * widths[i] / (2.0 * std::f64::consts::PI);
            let pts = waves * opts.points_per_wavelength;
            ((pts / opts.rule_points as f64).ceil() as usize).max(opts.min_panels)
        })
        .collect()
}

/// Which integration route produced a value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Oracle,
    Decomposition,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Oracle => "oracle",
            Method::Decomposition => "decomposition",
        }
    }
}

/// Contribution of one partition piece.
#[derive(Clone, Debug, PartialEq)]
pub struct PieceContribution {
    pub j: usize,
    pub k: Complex64,
    pub l: Complex64,
    pub k_error: f64,
    pub l_error: f64,
}

#[derive(Clone, Debug)]
pub struct OscillatoryIntegralResult {
    pub lambda: f64,
    pub value: Complex64,
    pub method: Method,
    pub error_estimate: f64,
    /// `∫|b|`, an upper bound for `|I(λ)|`.
    pub trivial_bound: f64,
    pub pieces: Vec<PieceContribution>,
    /// Number of pieces `J` (1 for the oracle).
    pub pieces_total: usize,
    /// Integrations by parts `N` (0 for the oracle).
    pub ibp_order: usize,
    pub warnings: Vec<String>,
}

impl OscillatoryIntegralResult {
    pub fn abs(&self) -> f64 {
        self.value.norm()
    }

    pub fn within_trivial_bound(&self) -> bool {
        self.abs() <= self.trivial_bound * (1.0 + 1e-9) + self.error_estimate
    }

    pub fn csv_header() -> [&'static str; 8] {
        ["lambda", "method", "re", "im", "abs", "error_estimate", "J", "N"]
    }

    pub fn csv_row(&self) -> Vec<String> {
        vec![
            fmt_f64(self.lambda),
            self.method.as_str().to_string(),
            fmt_f64(self.value.re),
            fmt_f64(self.value.im),
            fmt_f64(self.abs()),
            fmt_f64(self.error_estimate),
            self.pieces_total.to_string(),
            self.ibp_order.to_string(),
        ]
    }

    /// Writes `j,K_re,K_im,L_re,L_im,K_error,L_error` rows.
    pub fn write_pieces_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["j", "K_re", "K_im", "L_re", "L_im", "K_error", "L_error"])?;
        for p in &self.pieces {
            w.write_record([
                p.j.to_string(),
                fmt_f64(p.k.re),
                fmt_f64(p.k.im),
                fmt_f64(p.l.re),
                fmt_f64(p.l.im),
                fmt_f64(p.k_error),
                fmt_f64(p.l_error),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_dim(d: usize) -> Result<()> {
    if d > MAX_QUADRATURE_DIM {
        return Err(Error::Capability {
            requested: d,
            available: MAX_QUADRATURE_DIM,
        });
    }
    Ok(())
}

fn phase_factor(phase: &PhaseModel, lambda: f64, p: &[f64]) -> Complex64 {
    Complex64::from_polar(1.0, lambda * phase.value(p))
}

/// `∫|b|` over the support box.
pub fn symbol_mass(symbol: &SymbolModel) -> Result<f64> {
    if symbol.is_zero() {
        return Ok(0.0);
    }
    let opts = QuadOptions::default().with_rtol(1e-10);
    let panels = vec![4; symbol.dim()];
    let est = integrate(|p| Complex64::new(symbol.value(p).abs(), 0.0), symbol.support(), panels, &opts)?;
    Ok(est.value.re)
}

/// `Φ = c + Σ_i f_i(ξ_i)` with `b = Π_i g_i(ξ_i)`: product of 1-D integrals.
fn separable_oracle(
    phase: &PhaseModel,
    symbol: &SymbolModel,
    lambda: f64,
    opts: &QuadOptions,
) -> Option<Result<(Complex64, f64)>> {
    if !symbol.is_separable() || symbol.is_zero() {
        return None;
    }
    let d = phase.dim();
    let (constant, parts) = phase.expr().split_separable(d)?;
    let k = symbol.support();
    let mut value = Complex64::from_polar(1.0, lambda * constant);
    let mut rel = 0.0;
    for (i, part) in parts.iter().enumerate() {
        let axis = BoxDomain {
            lo: vec![k.lo[i]],
            hi: vec![k.hi[i]],
        };
        let mut gmax = 0.0f64;
        let mut pt = vec![0.0; d];
        for s in 0..=64 {
            let t = axis.lo[0] + (axis.hi[0] - axis.lo[0]) * s as f64 / 64.0;
            pt[i] = t;
            gmax = gmax.max(phase.gradient(&pt)[i].abs());
        }
        let waves = lambda * gmax * axis.widths()[0] / (2.0 * std::f64::consts::PI);
        let panels = ((waves * opts.points_per_wavelength / opts.rule_points as f64).ceil() as usize).max(opts.min_panels);
        let f = |p: &[f64]| {
            let mut v = vec![0.0; d];
            v[i] = p[0];
            Complex64::from_polar(symbol.axis_factor(i, p[0]), lambda * part.eval(&v))
        };
        let est = match integrate(f, &axis, vec![panels], opts) {
            Ok(e) => e,
            Err(e) => return Some(Err(e)),
        };
        if est.value.norm() > 0.0 {
            rel += est.error / est.value.norm();
        }
        value *= est.value;
    }
    Some(Ok((value, rel * value.norm())))
}

/// Brute-force `I(λ)` over the support of `b`.
pub fn oracle_integral(
    phase: &PhaseModel,
    symbol: &SymbolModel,
    lambda: f64,
    opts: &QuadOptions,
) -> Result<OscillatoryIntegralResult> {
    let d = phase.dim();
    check_dim(d)?;
    let mass = symbol_mass(symbol)?;
    let mut result = OscillatoryIntegralResult {
        lambda,
        value: Complex64::new(0.0, 0.0),
        method: Method::Oracle,
        error_estimate: 0.0,
        trivial_bound: mass,
        pieces: Vec::new(),
        pieces_total: 1,
        ibp_order: 0,
        warnings: Vec::new(),
    };
    if symbol.is_zero() {
        return Ok(result);
    }
    let (value, error) = match separable_oracle(phase, symbol, lambda, opts) {
        Some(r) => r?,
        None => {
            let k = symbol.support();
            let panels = oscillation_panels(phase, k, lambda, opts);
            let est = integrate(
                |p| phase_factor(phase, lambda, p) * symbol.value(p),
                k,
                panels,
                opts,
            )?;
            (est.value, est.error)
        }
    };
    result.value = value;
    result.error_estimate = error;
    Ok(result)
}

/// `∫ e^{iλΦ} u` over the support box of a general amplitude.
pub fn amplitude_integral(phase: &PhaseModel, u: &dyn Amplitude, lambda: f64, opts: &QuadOptions) -> Result<QuadEstimate> {
    check_dim(u.dim())?;
    let region = u.support();
    let panels = oscillation_panels(phase, region, lambda, opts);
    integrate(
        |p| phase_factor(phase, lambda, p) * u.jet(p, 0).value(),
        region,
        panels,
        opts,
    )
}

/// `∫ e^{iλΦ} (ᵗX)^N u = (i/λ)^N ∫ e^{iλΦ} (ᵗL)^N u` over the support box of
/// `u`, which must stay away from critical points of `Φ`.
pub fn ibp_integral(phase: &PhaseModel, u: &dyn Amplitude, n: usize, lambda: f64, opts: &QuadOptions) -> Result<QuadEstimate> {
    check_dim(u.dim())?;
    let region = u.support();
    let panels = oscillation_panels(phase, region, lambda, opts);
    let f = |p: &[f64]| {
        let w = u.jet(p, n);
        if w.is_zero() {
            return Complex64::new(0.0, 0.0);
        }
        let a = field_jets(&phase.jet(p, n + 1));
        phase_factor(phase, lambda, p) * nested_transpose(&a, w, n)
    };
    let mut est = integrate(f, region, panels, opts)?;
    let factor = ibp_factor(n, lambda);
    est.value *= factor;
    est.error *= factor.norm();
    Ok(est)
}

/// `(ᵗL)^N [(1 − ψ(√λ|∇Φ|)) χ_j b]` at `p`.
#[allow(clippy::too_many_arguments)]
fn l_integrand(
    phase: &PhaseModel,
    symbol: &SymbolModel,
    pou: &PartitionOfUnity,
    j: usize,
    cutoff: &Cutoff,
    lambda: f64,
    n: usize,
    p: &[f64],
) -> f64 {
    if !symbol.support().contains(p) {
        return 0.0;
    }
    let grad = phase.gradient(p);
    let s = lambda.sqrt() * grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if s <= 1.0 {
        return 0.0;
    }
    let chi = pou.weight_jet(j, p, n);
    if chi.is_zero() {
        return 0.0;
    }
    let b = symbol.jet(p, n);
    if b.is_zero() {
        return 0.0;
    }
    let phi = phase.jet(p, n + 1);
    let one_minus_psi = cutoff.composite_jet(&phi, lambda).neg().add_scalar(1.0);
    let g = one_minus_psi.mul(&chi).mul(&b);
    nested_transpose(&field_jets(&phi), g, n)
}

/// Options of the decomposition route.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecompositionOptions {
    /// Integrations by parts; `None` means `d + 1`.
    pub ibp_order: Option<usize>,
    pub cutoff: Cutoff,
    pub quad: QuadOptions,
}

/// `I(λ) = Σ_j (K_j + L_j)`.
///
/// `a0` is only used for the `λ^{1/2} a₀ ≥ 1` regime warning; a
/// non-positive value is rejected as a failed hypothesis.
pub fn decomposition_integral(
    phase: &PhaseModel,
    symbol: &SymbolModel,
    lambda: f64,
    pou: &PartitionOfUnity,
    a0: f64,
    opts: &DecompositionOptions,
) -> Result<OscillatoryIntegralResult> {
    let d = phase.dim();
    check_dim(d)?;
    if !(a0 > 0.0) {
        return Err(Error::Hypothesis(format!("a0 = {a0}: the Hessian determinant is not bounded below")));
    }
    let n = opts.ibp_order.unwrap_or(d + 1);
    let mut warnings = Vec::new();
    if lambda.sqrt() * a0 < 1.0 {
        warnings.push(format!(
            "λ^(1/2)·a0 = {} < 1: below the regime where the bound is derived",
            lambda.sqrt() * a0
        ));
    }
    let mass = symbol_mass(symbol)?;
    let mut pieces = Vec::new();
    if !symbol.is_zero() {
        for j in 0..pou.len() {
            let Some(region) = pou.piece_box(j) else { continue };
            let Some(region) = region.intersect(symbol.support()) else { continue };
            let panels: Vec<usize> = oscillation_panels(phase, &region, lambda, &opts.quad)
                .into_iter()
                .map(|p| p.div_ceil(2))
                .collect();
            let cutoff = opts.cutoff;
            let k = integrate_adaptive(
                |p| {
                    let b = symbol.value(p);
                    if b == 0.0 {
                        return Complex64::new(0.0, 0.0);
                    }
                    let grad = phase.gradient(p);
                    let s = lambda.sqrt() * grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                    let psi = cutoff.value(s);
                    if psi == 0.0 {
                        return Complex64::new(0.0, 0.0);
                    }
                    let chi = pou.weight(j, p).unwrap_or(0.0);
                    phase_factor(phase, lambda, p) * (psi * chi * b)
                },
                &region,
                panels.clone(),
                &opts.quad,
            )?;
            let factor = ibp_factor(n, lambda);
            let l = integrate_adaptive(
                |p| {
                    let v = l_integrand(phase, symbol, pou, j, &cutoff, lambda, n, p);
                    if v == 0.0 {
                        Complex64::new(0.0, 0.0)
                    } else {
                        phase_factor(phase, lambda, p) * v
                    }
                },
                &region,
                panels,
                &QuadOptions {
                    atol: opts.quad.atol / factor.norm(),
                    ..opts.quad.clone()
                },
            )?;
            pieces.push(PieceContribution {
                j,
                k: k.value,
                l: l.value * factor,
                k_error: k.error,
                l_error: l.error * factor.norm(),
            });
        }
    }
    let value = pieces.iter().map(|p| p.k + p.l).sum();
    let error_estimate = pieces.iter().map(|p| p.k_error + p.l_error).sum();
    Ok(OscillatoryIntegralResult {
        lambda,
        value,
        method: Method::Decomposition,
        error_estimate,
        trivial_bound: mass,
        pieces,
        pieces_total: pou.len(),
        ibp_order: n,
        warnings,
    })
}

/// `I_j(λ) = ∫ e^{iλΦ} χ_j b` by the oracle integrator, one entry per piece.
pub fn piece_integrals(
    phase: &PhaseModel,
    symbol: &SymbolModel,
    lambda: f64,
    pou: &PartitionOfUnity,
    opts: &QuadOptions,
) -> Result<Vec<Complex64>> {
    check_dim(phase.dim())?;
    (0..pou.len())
        .map(|j| {
            let Some(region) = pou.piece_box(j).and_then(|r| r.intersect(symbol.support())) else {
                return Ok(Complex64::new(0.0, 0.0));
            };
            let panels = oscillation_panels(phase, &region, lambda, opts);
            let est = integrate(
                |p| {
                    let b = symbol.value(p);
                    if b == 0.0 {
                        return Complex64::new(0.0, 0.0);
                    }
                    phase_factor(phase, lambda, p) * (b * pou.weight(j, p).unwrap_or(0.0))
                },
                &region,
                panels,
                opts,
            )?;
            Ok(est.value)
        })
        .collect()
}

/// Monte Carlo estimate of the measure of `{ξ ∈ region : |∇Φ(ξ)| ≤ r}`.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasureEstimate {
    pub radius: f64,
    pub measure: f64,
    pub std_error: f64,
    pub hits: usize,
    pub samples: usize,
}

/// Measure of `{ξ ∈ region : |∇Φ(ξ)| ≤ 2λ^{-1/2}}`.
///
/// The region is first cut into cells; a cell is kept only if the gradient
/// at its center minus `M₂ ×` half its diagonal could reach the radius
/// (`M₂` is measured on the same cells). Samples are then spread uniformly
/// over the kept cells.
pub fn near_stationary_measure(phase: &PhaseModel, lambda: f64, region: &BoxDomain, samples: usize, seed: u64) -> MeasureEstimate {
    let d = region.dim();
    let radius = 2.0 / lambda.sqrt();
    let cells_per_axis = 64usize.min((4096f64.powf(1.0 / d as f64)) as usize).max(2);
    let widths = region.widths();
    let cell_w: Vec<f64> = widths.iter().map(|w| w / cells_per_axis as f64).collect();
    let half_diag = 0.5 * cell_w.iter().map(|w| w * w).sum::<f64>().sqrt();
    let grid = region.grid_points(cells_per_axis + 1);
    let mut lip = 0.0f64;
    for p in grid.points() {
        let (_, h) = phase.gradient_hessian(&p);
        lip = lip.max(h.iter().map(|v| v.abs()).sum::<f64>());
    }
    // margin for curvature between grid nodes
    let lip = 2.0 * lip;
    let total_cells = cells_per_axis.pow(d as u32);
    let mut kept = Vec::new();
    for c in 0..total_cells {
        let mut idx = c;
        let mut lo = vec![0.0; d];
        let mut center = vec![0.0; d];
        for i in (0..d).rev() {
            let k = idx % cells_per_axis;
            idx /= cells_per_axis;
            lo[i] = region.lo[i] + k as f64 * cell_w[i];
            center[i] = lo[i] + 0.5 * cell_w[i];
        }
        let g = phase.gradient(&center).iter().map(|v| v * v).sum::<f64>().sqrt();
        if g - lip * half_diag <= radius {
            kept.push(lo);
        }
    }
    let cell_volume: f64 = cell_w.iter().product();
    let kept_volume = cell_volume * kept.len() as f64;
    if kept.is_empty() || samples == 0 {
        return MeasureEstimate {
            radius,
            measure: 0.0,
            std_error: 0.0,
            hits: 0,
            samples,
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    let mut p = vec![0.0; d];
    for _ in 0..samples {
        let lo = &kept[rng.random_range(0..kept.len())];
        for i in 0..d {
            p[i] = lo[i] + cell_w[i] * rng.random_range(0.0..1.0);
        }
        let g = phase.gradient(&p).iter().map(|v| v * v).sum::<f64>().sqrt();
        if g <= radius {
            hits += 1;
        }
    }
    let frac = hits as f64 / samples as f64;
    MeasureEstimate {
        radius,
        measure: frac * kept_volume,
        std_error: (frac * (1.0 - frac) / samples as f64).sqrt() * kept_volume,
        hits,
        samples,
    }
}

/// Volume of the unit ball in `ℝ^d`.
pub fn unit_ball_volume(d: usize) -> f64 {
    use std::f64::consts::PI;
    match d {
        0 => 1.0,
        1 => 2.0,
        _ => unit_ball_volume(d - 2) * 2.0 * PI / d as f64,
    }
}

/// `ω_d (2λ^{-1/2})^d / a₀`: the change-of-variables bound for the measure
/// of the near-stationary set inside one injectivity ball.
pub fn near_stationary_bound(d: usize, lambda: f64, a0: f64) -> f64 {
    unit_ball_volume(d) * (2.0 / lambda.sqrt()).powi(d as i32) / a0
}

/// A symbol-like amplitude evaluated through a closure, used to feed
/// arbitrary smooth functions to the IBP routines.
pub struct FnAmplitude<F> {
    pub support: BoxDomain,
    pub f: F,
}

impl<F> Amplitude for FnAmplitude<F>
where
    F: Fn(&[Jet]) -> Jet + Sync,
{
    fn dim(&self) -> usize {
        self.support.dim()
    }

    fn support(&self) -> &BoxDomain {
        &self.support
    }

    fn jet(&self, xi: &[f64], order: usize) -> Jet {
        if !self.support.contains(xi) {
            return Jet::zero(JetSpace::get(xi.len()), order);
        }
        (self.f)(&Jet::variables(xi, order))
    }
}
