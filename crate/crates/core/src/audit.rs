//! Measurement of the phase and symbol constants and the hypotheses the
//! bounds rest on: `M_k`, `N_l`, `a₀`, the Hessian eigenvalue floor, the
//! Taylor remainder constant and injectivity of `∇Φ`.
//!
//! All sups and infs are taken over uniform grids (boundary included), so
//! every value is reported together with the grid spacing it was measured at.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::deriv::{DerivativeTensor, PhaseModel, SymbolModel};
use crate::domain::{BoxDomain, Grid};
use crate::error::{Error, Result};
use crate::jet::{multinomial, JetSpace};

/// Tunables for an audit. `None` constants fall back to `C_d = d` and
/// `C'_d = d²/2`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct AuditOptions {
    pub c_d: Option<f64>,
    pub c_prime_d: Option<f64>,
    /// Points per axis of the audit grid; `None` picks 201 for d ≤ 2, 41 for
    /// d = 3 and 13 above.
    pub grid_points: Option<usize>,
    pub degeneracy_threshold: f64,
    pub injectivity_samples: usize,
    pub taylor_pairs: usize,
    pub seed: u64,
}

impl Default for AuditOptions {
    fn default() -> Self {
        AuditOptions {
            c_d: None,
            c_prime_d: None,
            grid_points: None,
            degeneracy_threshold: 1e-12,
            injectivity_samples: 10_000,
            taylor_pairs: 1_000,
            seed: 42,
        }
    }
}

impl AuditOptions {
    pub fn c_d(&self, d: usize) -> f64 {
        self.c_d.unwrap_or(d as f64)
    }

    pub fn c_prime_d(&self, d: usize) -> f64 {
        self.c_prime_d.unwrap_or((d * d) as f64 / 2.0)
    }

    pub fn grid_points(&self, d: usize) -> usize {
        self.grid_points.unwrap_or(match d {
            1 | 2 => 201,
            3 => 41,
            _ => 13,
        })
    }

    /// Grid step giving `grid_points` per axis on `v`.
    pub fn grid_step(&self, v: &BoxDomain) -> f64 {
        let n = self.grid_points(v.dim()).max(2);
        v.widths().iter().cloned().fold(0.0, f64::max) / (n - 1) as f64
    }
}

/// Outcome of the injectivity test for `ξ ↦ ∇Φ(ξ)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Verified,
    Refuted,
    Undetermined,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Verified => "verified",
            Verdict::Refuted => "refuted",
            Verdict::Undetermined => "undetermined",
        }
    }
}

#[derive(Clone, Debug)]
pub struct InjectivityCheck {
    pub verdict: Verdict,
    /// `(ξ, η)` with `ξ ≠ η` and `∇Φ(ξ) = ∇Φ(η)` when refuted.
    pub witness: Option<(Vec<f64>, Vec<f64>)>,
    /// Smallest `⟨∇Φ(ξ)−∇Φ(η), ξ−η⟩ / |ξ−η|²` seen over the sampled pairs
    /// (sign-adjusted for negative definite Hessians).
    pub min_monotonicity: f64,
    /// The constant `a₀/(C_d M₂)^{d−1}` the pairs were tested against.
    pub monotonicity_constant: f64,
}

/// `a₀` together with the degeneracy flag.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct A0Measurement {
    pub value: f64,
    pub degenerate: bool,
}

/// Everything the bounds need to know about `(Φ, b)`.
#[derive(Clone, Debug, Serialize)]
pub struct HypothesisReport {
    pub dim: usize,
    pub phase_family: String,
    pub symbol_family: String,
    /// `(k, M_k)` for `k = 2..=d+2`.
    pub m: Vec<(usize, f64)>,
    /// `(l, N_l)` for `l = 0..=d+1`.
    pub n: Vec<(usize, f64)>,
    /// Sum over ordered index triples of `sup |∂³Φ|`: the third-order part of `M_3`.
    pub third_order_norm: f64,
    pub a0: f64,
    pub degenerate: bool,
    /// `a₀/(C_d M₂)^{d−1}`; zero when degenerate.
    pub eigenvalue_floor: f64,
    /// Smallest `|λ_j|` of the Hessian over the audit grid.
    pub min_abs_eigenvalue: f64,
    pub eigenvalue_floor_holds: bool,
    /// Largest relative gap between `|det H|` and `Π|λ_j|` over the grid.
    pub det_eigen_mismatch: f64,
    pub positive_definite: bool,
    pub negative_definite: bool,
    pub injective: Verdict,
    pub injectivity_witness: Option<(Vec<f64>, Vec<f64>)>,
    pub taylor_ratio: f64,
    pub taylor_ratio_admissible: bool,
    pub audit_resolution: f64,
    pub symbol_resolution: f64,
    pub c_d: f64,
    pub c_prime_d: f64,
}

impl HypothesisReport {
    pub fn m_k(&self, k: usize) -> f64 {
        self.m.iter().find(|(i, _)| *i == k).map(|p| p.1).unwrap_or(f64::NAN)
    }

    pub fn n_l(&self, l: usize) -> f64 {
        self.n.iter().find(|(i, _)| *i == l).map(|p| p.1).unwrap_or(f64::NAN)
    }

    pub fn m_top(&self) -> f64 {
        self.m_k(self.dim + 2)
    }

    pub fn n_top(&self) -> f64 {
        self.n_l(self.dim + 1)
    }

    pub fn passed(&self) -> bool {
        !self.degenerate && self.a0 > 0.0
    }

    /// One `(name, value)` row per constant.
    pub fn rows(&self) -> Vec<(String, f64)> {
        let b = |v: bool| if v { 1.0 } else { 0.0 };
        let mut rows = vec![("d".to_string(), self.dim as f64)];
        rows.extend(self.m.iter().map(|(k, v)| (format!("M_{k}"), *v)));
        rows.extend(self.n.iter().map(|(l, v)| (format!("N_{l}"), *v)));
        rows.extend([
            ("third_order_norm".into(), self.third_order_norm),
            ("a0".into(), self.a0),
            ("degenerate".into(), b(self.degenerate)),
            ("eigenvalue_floor".into(), self.eigenvalue_floor),
            ("min_abs_eigenvalue".into(), self.min_abs_eigenvalue),
            ("eigenvalue_floor_holds".into(), b(self.eigenvalue_floor_holds)),
            ("det_eigen_mismatch".into(), self.det_eigen_mismatch),
            ("positive_definite".into(), b(self.positive_definite)),
            ("negative_definite".into(), b(self.negative_definite)),
            (
                "injective".into(),
                match self.injective {
                    Verdict::Verified => 1.0,
                    Verdict::Refuted => -1.0,
                    Verdict::Undetermined => 0.0,
                },
            ),
            ("taylor_ratio".into(), self.taylor_ratio),
            ("taylor_ratio_admissible".into(), b(self.taylor_ratio_admissible)),
            ("audit_resolution".into(), self.audit_resolution),
            ("symbol_resolution".into(), self.symbol_resolution),
            ("C_d".into(), self.c_d),
            ("C'_d".into(), self.c_prime_d),
        ]);
        rows
    }

    /// Flat `key = value` text block.
    pub fn to_key_value(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "phase_family = {}", self.phase_family);
        let _ = writeln!(s, "symbol_family = {}", self.symbol_family);
        for (k, v) in self.rows() {
            let _ = writeln!(s, "{k} = {v}");
        }
        let _ = writeln!(s, "injective_verdict = {}", self.injective.as_str());
        if let Some((a, b)) = &self.injectivity_witness {
            let _ = writeln!(s, "injectivity_witness = {a:?} {b:?}");
        }
        s
    }
}

/// Per-multi-index maxima of `|D^α f|` over a grid, orders `lo..=hi`.
fn sup_table<F>(grid: &Grid, d: usize, order: usize, mut jet_at: F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> Option<DerivativeTensor>,
{
    let len = JetSpace::get(d).len(order);
    let mut sups = vec![0.0f64; len];
    for p in grid.points() {
        if let Some(t) = jet_at(&p) {
            for (k, (_, v)) in t.entries().enumerate() {
                sups[k] = sups[k].max(v.abs());
            }
        }
    }
    sups
}

/// `Σ_{lo ≤ |α| ≤ k} (|α|!/α!) sups[α]` for each `k` in `lo..=hi`: the sum over
/// all ordered index tuples, so mixed partials count once per permutation.
fn cumulative_sums(sups: &[f64], d: usize, lo: usize, hi: usize) -> Vec<(usize, f64)> {
    let space = JetSpace::get(d);
    let mut by_order = vec![0.0; hi + 1];
    for (k, s) in sups.iter().enumerate() {
        let deg = space.degree(k);
        if deg >= lo && deg <= hi {
            by_order[deg] += multinomial(space.multi_index(k)) * s;
        }
    }
    let mut acc = 0.0;
    (lo..=hi)
        .map(|k| {
            acc += by_order[k];
            (k, acc)
        })
        .collect()
}

fn check_grid(v: &BoxDomain, step: f64) -> Result<Grid> {
    let g = v.grid(step)?;
    if g.is_empty() {
        return Err(Error::EmptyGrid(format!("no grid points in {v}")));
    }
    Ok(g)
}

/// `M_k` for `k = 2..=max_order` over the uniform grid on `V`.
pub fn compute_m(phase: &PhaseModel, v: &BoxDomain, max_order: usize, grid_step: f64) -> Result<Vec<(usize, f64)>> {
    let d = phase.dim();
    if max_order < 2 || max_order > phase.smoothness() {
        return Err(Error::Capability {
            requested: max_order,
            available: phase.smoothness(),
        });
    }
    let grid = check_grid(v, grid_step)?;
    let sups = sup_table(&grid, d, max_order, |p| phase.derivatives_at(p, max_order).ok());
    Ok(cumulative_sums(&sups, d, 2, max_order))
}

/// `N_l` for `l = 0..=max_order` over the uniform grid on `K`.
pub fn compute_n(symbol: &SymbolModel, max_order: usize, grid_step: f64) -> Result<Vec<(usize, f64)>> {
    let d = symbol.dim();
    if max_order > symbol.smoothness() {
        return Err(Error::Capability {
            requested: max_order,
            available: symbol.smoothness(),
        });
    }
    let grid = check_grid(symbol.support(), grid_step)?;
    let sups = sup_table(&grid, d, max_order, |p| symbol.derivatives_at(p, max_order).ok());
    Ok(cumulative_sums(&sups, d, 0, max_order))
}

/// Minimum of `|det Hess Φ|` over the grid on `V`.
pub fn compute_a0(phase: &PhaseModel, v: &BoxDomain, grid_step: f64, threshold: f64) -> Result<A0Measurement> {
    let grid = check_grid(v, grid_step)?;
    let mut min = f64::INFINITY;
    for p in grid.points() {
        let (_, h) = phase.gradient_hessian(&p);
        min = min.min(h.determinant().abs());
    }
    let degenerate = !(min >= threshold);
    Ok(A0Measurement {
        value: if degenerate { 0.0 } else { min },
        degenerate,
    })
}

/// `a₀/(C_d M₂)^{d−1}`.
pub fn eigenvalue_floor(a0: f64, m2: f64, d: usize, c_d: f64) -> Result<f64> {
    if !(a0 > 0.0) {
        return Err(Error::DegeneratePhase(format!("a0 = {a0}")));
    }
    if !(m2 > 0.0) {
        return Err(Error::DegeneratePhase(format!("M_2 = {m2}")));
    }
    Ok(a0 / (c_d * m2).powi(d as i32 - 1))
}

/// Largest `|R| / (m3 |ξ−η|²)` over the pairs, where
/// `R = ∇Φ(ξ) − ∇Φ(η) − Hess Φ(η)(ξ−η)`.
pub fn taylor_remainder_check(phase: &PhaseModel, pairs: &[(Vec<f64>, Vec<f64>)], m3: f64) -> f64 {
    let mut worst = 0.0f64;
    for (xi, eta) in pairs {
        let (gx, _) = phase.gradient_hessian(xi);
        let (ge, he) = phase.gradient_hessian(eta);
        let dx = DVector::from_iterator(xi.len(), xi.iter().zip(eta).map(|(a, b)| a - b));
        let r = gx - ge - he * &dx;
        let rn = r.norm();
        let dn2 = dx.norm_squared();
        if dn2 == 0.0 {
            continue;
        }
        let ratio = if rn == 0.0 { 0.0 } else { rn / (m3 * dn2) };
        worst = worst.max(ratio);
    }
    worst
}

pub(crate) fn random_point(rng: &mut ChaCha8Rng, v: &BoxDomain) -> Vec<f64> {
    v.lo.iter()
        .zip(&v.hi)
        .map(|(a, b)| if a == b { *a } else { rng.random_range(*a..*b) })
        .collect()
}

pub(crate) fn random_pairs(v: &BoxDomain, n: usize, seed: u64) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (random_point(&mut rng, v), random_point(&mut rng, v)))
        .collect()
}

#[derive(Default)]
struct HessianScan {
    min_abs_det: f64,
    min_abs_eig: f64,
    det_eigen_mismatch: f64,
    positive_definite: bool,
    negative_definite: bool,
}

fn scan_hessians(phase: &PhaseModel, grid: &Grid) -> HessianScan {
    let mut s = HessianScan {
        min_abs_det: f64::INFINITY,
        min_abs_eig: f64::INFINITY,
        det_eigen_mismatch: 0.0,
        positive_definite: true,
        negative_definite: true,
    };
    for p in grid.points() {
        let (_, h) = phase.gradient_hessian(&p);
        let det = h.determinant();
        let eig = SymmetricEigen::new(h).eigenvalues;
        let prod: f64 = eig.iter().map(|l| l.abs()).product();
        let scale = prod.max(det.abs());
        if scale > 0.0 {
            s.det_eigen_mismatch = s.det_eigen_mismatch.max((prod - det.abs()).abs() / scale);
        }
        s.min_abs_det = s.min_abs_det.min(det.abs());
        s.min_abs_eig = s.min_abs_eig.min(eig.iter().fold(f64::INFINITY, |m, l| m.min(l.abs())));
        s.positive_definite &= eig.iter().all(|&l| l > 0.0);
        s.negative_definite &= eig.iter().all(|&l| l < 0.0);
    }
    s
}

fn definiteness(phase: &PhaseModel, v: &BoxDomain, opts: &AuditOptions) -> (bool, bool) {
    let grid = v.grid_points(opts.grid_points(v.dim()).min(101));
    let s = scan_hessians(phase, &grid);
    (s.positive_definite, s.negative_definite)
}

/// Injectivity of `∇Φ` on `V` (assumed convex).
///
/// Verified when the Hessian is definite on the audit grid and the
/// monotonicity inequality `⟨∇Φ(ξ)−∇Φ(η), ξ−η⟩ ≥ a₀/(C_d M₂)^{d−1} |ξ−η|²`
/// holds on `samples` random pairs; refuted when a pair `ξ ≠ η` with equal
/// gradients is found; undetermined otherwise.
pub fn check_injectivity(phase: &PhaseModel, v: &BoxDomain, samples: usize, opts: &AuditOptions) -> Result<InjectivityCheck> {
    let d = phase.dim();
    let step = opts.grid_step(v);
    let m2 = compute_m(phase, v, 2, step)?[0].1;
    let a0 = compute_a0(phase, v, step, opts.degeneracy_threshold)?;
    let (pd, nd) = definiteness(phase, v, opts);
    Ok(injectivity_with(phase, v, samples, a0.value, m2, opts.c_d(d), pd, nd, opts.seed))
}

#[allow(clippy::too_many_arguments)]
fn injectivity_with(
    phase: &PhaseModel,
    v: &BoxDomain,
    samples: usize,
    a0: f64,
    m2: f64,
    c_d: f64,
    pd: bool,
    nd: bool,
    seed: u64,
) -> InjectivityCheck {
    let d = phase.dim();
    let kappa = if a0 > 0.0 && m2 > 0.0 {
        a0 / (c_d * m2).powi(d as i32 - 1)
    } else {
        0.0
    };
    let sign = if nd && !pd { -1.0 } else { 1.0 };
    let mut min_mono = f64::INFINITY;
    if pd || nd {
        for (xi, eta) in random_pairs(v, samples.max(2), seed ^ 0x1a2b) {
            let gx = phase.gradient(&xi);
            let ge = phase.gradient(&eta);
            let mut dot = 0.0;
            let mut n2 = 0.0;
            for i in 0..d {
                let dx = xi[i] - eta[i];
                dot += (gx[i] - ge[i]) * dx;
                n2 += dx * dx;
            }
            if n2 > 0.0 {
                min_mono = min_mono.min(sign * dot / n2);
            }
        }
        if kappa > 0.0 && min_mono >= kappa * (1.0 - 1e-12) {
            return InjectivityCheck {
                verdict: Verdict::Verified,
                witness: None,
                min_monotonicity: min_mono,
                monotonicity_constant: kappa,
            };
        }
        // Definite Hessians on a convex domain rule out a refutation.
        return InjectivityCheck {
            verdict: Verdict::Undetermined,
            witness: None,
            min_monotonicity: min_mono,
            monotonicity_constant: kappa,
        };
    }
    let witness = search_gradient_collision(phase, v, c_d * m2.max(1e-300));
    InjectivityCheck {
        verdict: if witness.is_some() {
            Verdict::Refuted
        } else {
            Verdict::Undetermined
        },
        witness,
        min_monotonicity: min_mono,
        monotonicity_constant: kappa,
    }
}

/// Looks for `ξ ≠ η` in `V` with `∇Φ(ξ) = ∇Φ(η)`: close gradient pairs on a
/// coarse grid are polished by Newton's method on `∇Φ(η) = ∇Φ(ξ)`.
fn search_gradient_collision(phase: &PhaseModel, v: &BoxDomain, lipschitz: f64) -> Option<(Vec<f64>, Vec<f64>)> {
    let d = phase.dim();
    let per_axis = ((4096f64).powf(1.0 / d as f64).floor() as usize).max(3);
    let grid = v.grid_points(per_axis);
    let h = grid.spacing();
    let pts: Vec<Vec<f64>> = grid.points().collect();
    let grads: Vec<Vec<f64>> = pts.iter().map(|p| phase.gradient(p)).collect();
    let sep = 3.0 * h * (d as f64).sqrt();
    let tol = lipschitz * h * (d as f64).sqrt();
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for a in 0..pts.len() {
        for b in a + 1..pts.len() {
            if dist(&pts[a], &pts[b]) <= sep {
                continue;
            }
            let gd = dist(&grads[a], &grads[b]);
            if gd <= tol {
                candidates.push((gd, a, b));
            }
        }
    }
    candidates.sort_by(|x, y| x.0.total_cmp(&y.0));
    for &(_, a, b) in candidates.iter().take(200) {
        let target = DVector::from_vec(grads[a].clone());
        let mut eta = DVector::from_vec(pts[b].clone());
        for _ in 0..50 {
            let (g, hmat): (DVector<f64>, DMatrix<f64>) = phase.gradient_hessian(eta.as_slice());
            let r = &g - &target;
            if r.norm() <= 1e-13 * (1.0 + target.norm()) {
                break;
            }
            match hmat.lu().solve(&r) {
                Some(step) => eta -= step,
                None => break,
            }
            if !v.contains(eta.as_slice()) {
                break;
            }
        }
        if !v.contains(eta.as_slice()) {
            continue;
        }
        let g = DVector::from_vec(phase.gradient(eta.as_slice()));
        if (&g - &target).norm() <= 1e-10 * (1.0 + target.norm()) && dist(eta.as_slice(), &pts[a]) > sep {
            return Some((pts[a].clone(), eta.as_slice().to_vec()));
        }
    }
    None
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Full audit of `(Φ, b)` on the phase's domain `V`.
pub fn audit(phase: &PhaseModel, symbol: &SymbolModel, opts: &AuditOptions) -> Result<HypothesisReport> {
    let d = phase.dim();
    if symbol.dim() != d {
        return Err(Error::Validation(format!(
            "phase has dimension {d} but symbol has dimension {}",
            symbol.dim()
        )));
    }
    let v = phase.domain().clone();
    let c_d = opts.c_d(d);
    let c_prime_d = opts.c_prime_d(d);
    let step = opts.grid_step(&v);
    let grid = check_grid(&v, step)?;

    let top = d + 2;
    let sups = sup_table(&grid, d, top, |p| phase.derivatives_at(p, top).ok());
    let m = cumulative_sums(&sups, d, 2, top);
    let third_order_norm = cumulative_sums(&sups, d, 3, 3)[0].1;

    let ksteps = opts.grid_step(symbol.support()).max(f64::MIN_POSITIVE);
    let n = if symbol.support().widths().iter().all(|&w| w == 0.0) {
        let t = symbol.derivatives_at(&symbol.support().lo, d + 1)?;
        let sups: Vec<f64> = t.entries().map(|(_, v)| v.abs()).collect();
        cumulative_sums(&sups, d, 0, d + 1)
    } else {
        compute_n(symbol, d + 1, ksteps)?
    };

    let scan = scan_hessians(phase, &grid);
    let degenerate = !(scan.min_abs_det >= opts.degeneracy_threshold);
    let a0 = if degenerate { 0.0 } else { scan.min_abs_det };
    let m2 = m[0].1;
    let floor = if degenerate || m2 <= 0.0 {
        0.0
    } else {
        eigenvalue_floor(a0, m2, d, c_d)?
    };
    let eigenvalue_floor_holds = !degenerate && scan.min_abs_eig >= floor * (1.0 - 1e-12);

    let inj = if degenerate {
        InjectivityCheck {
            verdict: Verdict::Undetermined,
            witness: None,
            min_monotonicity: f64::NAN,
            monotonicity_constant: 0.0,
        }
    } else {
        injectivity_with(
            phase,
            &v,
            opts.injectivity_samples,
            a0,
            m2,
            c_d,
            scan.positive_definite,
            scan.negative_definite,
            opts.seed,
        )
    };
    let m3 = m.iter().find(|(k, _)| *k == 3).map(|p| p.1).unwrap_or(0.0);
    let pairs = random_pairs(&v, opts.taylor_pairs, opts.seed ^ 0x7a11);
    let taylor_ratio = if m3 > 0.0 {
        taylor_remainder_check(phase, &pairs, m3)
    } else {
        0.0
    };

    Ok(HypothesisReport {
        dim: d,
        phase_family: phase.family().to_string(),
        symbol_family: symbol.family().to_string(),
        m,
        n,
        third_order_norm,
        a0,
        degenerate,
        eigenvalue_floor: floor,
        min_abs_eigenvalue: scan.min_abs_eig,
        eigenvalue_floor_holds,
        det_eigen_mismatch: scan.det_eigen_mismatch,
        positive_definite: scan.positive_definite,
        negative_definite: scan.negative_definite,
        injective: inj.verdict,
        injectivity_witness: inj.witness,
        taylor_ratio,
        taylor_ratio_admissible: taylor_ratio <= c_prime_d,
        audit_resolution: grid.spacing(),
        symbol_resolution: ksteps,
        c_d,
        c_prime_d,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{c, x};
    use crate::families;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn phase(e: crate::expr::Expr, v: BoxDomain) -> PhaseModel {
        PhaseModel::new("custom", e, v, vec![]).unwrap()
    }

    #[test]
    fn m_for_one_dimensional_quadratic() {
        let p = phase(c(0.5) * x(0).powi(2), BoxDomain::symmetric(1, 2.0));
        let m = compute_m(&p, p.domain(), 3, 0.01).unwrap();
        assert_eq!(m, vec![(2, 1.0), (3, 1.0)]);
    }

    #[test]
    fn m_counts_mixed_partials_per_permutation() {
        let p = families::quadratic(
            DMatrix::from_diagonal(&nalgebra::dvector![1.0, 2.0]),
            BoxDomain::symmetric(2, 1.0),
        )
        .unwrap();
        let m = compute_m(&p, p.domain(), 2, 0.1).unwrap();
        assert_eq!(m[0], (2, 3.0));
        let q = families::quadratic(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 2.0]),
            BoxDomain::symmetric(2, 1.0),
        )
        .unwrap();
        let m = compute_m(&q, q.domain(), 2, 0.1).unwrap();
        assert_relative_eq!(m[0].1, 1.0 + 0.5 + 0.5 + 2.0);
    }

    #[test]
    fn m3_of_sine_perturbation_matches_dense_closed_form() {
        let p = phase(c(0.5) * x(0).powi(2) + c(0.1) * x(0).sin(), BoxDomain::symmetric(1, 2.0));
        let h = 4.0 / 200.0;
        let m = compute_m(&p, p.domain(), 3, h).unwrap();
        // oracle: closed-form Φ'' = 1 - 0.1 sin, Φ''' = -0.1 cos on a 10x finer grid
        let (mut s2, mut s3) = (0.0f64, 0.0f64);
        for k in 0..=2000 {
            let t = -2.0 + 4.0 * k as f64 / 2000.0;
            s2 = s2.max((1.0 - 0.1 * t.sin()).abs());
            s3 = s3.max((0.1 * t.cos()).abs());
        }
        // the coarse grid misses the maximiser -π/2 by O(h), so agreement is O(h²)
        assert_relative_eq!(m[1].1, s2 + s3, max_relative = 1e-4);
        assert!((m[1].1 - 1.2).abs() < 0.01);
    }

    #[test]
    fn n_of_plateau_zero_and_bump() {
        let plateau = SymbolModel::plateau_bump(vec![0.0], 1.0, 2.0).unwrap();
        assert_eq!(compute_n(&plateau, 0, 0.01).unwrap()[0], (0, 1.0));

        let zero = SymbolModel::zero(BoxDomain::symmetric(2, 1.0));
        assert!(compute_n(&zero, 3, 0.1).unwrap().iter().all(|(_, v)| *v == 0.0));

        let bump = SymbolModel::smooth_bump(vec![0.0], 1.0).unwrap();
        let n = compute_n(&bump, 1, 2.0 / 2000.0).unwrap();
        // oracle: closed-form b' = -2x/(1-x²)² · b on a 10x finer grid
        let mut s1 = 0.0f64;
        for k in 1..20000 {
            let t = -1.0 + 2.0 * k as f64 / 20000.0;
            let s = 1.0 - t * t;
            let b = (1.0 - 1.0 / s).exp();
            s1 = s1.max((2.0 * t / (s * s) * b).abs());
        }
        assert_relative_eq!(n[0].1, 1.0);
        assert_relative_eq!(n[1].1, 1.0 + s1, max_relative = 1e-5);
    }

    #[test]
    fn a0_examples() {
        let q = families::quadratic(
            DMatrix::from_diagonal(&nalgebra::dvector![1.0, 2.0]),
            BoxDomain::symmetric(2, 1.0),
        )
        .unwrap();
        let a = compute_a0(&q, q.domain(), 0.1, 1e-12).unwrap();
        assert_eq!(a, A0Measurement { value: 2.0, degenerate: false });

        let lin = families::dispersive(
            0.0,
            &[1.0, 0.0],
            &[0.0, 0.0],
            families::Theta::Quadratic,
            BoxDomain::symmetric(2, 1.0),
        )
        .unwrap();
        let a = compute_a0(&lin, lin.domain(), 0.1, 1e-12).unwrap();
        assert!(a.degenerate);
        assert_eq!(a.value, 0.0);

        let pq = families::perturbed_quadratic(
            DMatrix::identity(2, 2),
            0.05,
            families::Perturbation::CosX1,
            BoxDomain::symmetric(2, 1.0),
        )
        .unwrap();
        let a = compute_a0(&pq, pq.domain(), 0.01, 1e-12).unwrap();
        assert_relative_eq!(a.value, 0.95, epsilon = 1e-14);
    }

    #[test]
    fn eigenvalue_floor_examples() {
        assert_eq!(eigenvalue_floor(1.0, 17.0, 1, 1.0).unwrap(), 1.0);
        assert_relative_eq!(eigenvalue_floor(2.0, 3.0, 2, 2.0).unwrap(), 1.0 / 3.0);
        assert!(matches!(
            eigenvalue_floor(0.0, 1.0, 2, 2.0),
            Err(Error::DegeneratePhase(_))
        ));
    }

    #[test]
    fn diagonal_quadratic_meets_floor() {
        let q = families::quadratic(
            DMatrix::from_diagonal(&nalgebra::dvector![1.0, 2.0]),
            BoxDomain::symmetric(2, 1.0),
        )
        .unwrap();
        let b = SymbolModel::smooth_bump(vec![0.0, 0.0], 0.5).unwrap();
        let r = audit(&q, &b, &AuditOptions { grid_points: Some(21), ..Default::default() }).unwrap();
        assert_eq!(r.min_abs_eigenvalue, 1.0);
        assert!(r.eigenvalue_floor_holds);
        assert!(r.a0 <= (r.c_d * r.m_k(2)).powi(2));
    }

    #[test]
    fn injectivity_verdicts() {
        let opts = AuditOptions {
            grid_points: Some(41),
            injectivity_samples: 2000,
            ..Default::default()
        };
        let iso = families::quadratic(DMatrix::identity(2, 2), BoxDomain::symmetric(2, 1.0)).unwrap();
        let r = check_injectivity(&iso, iso.domain(), 2000, &opts).unwrap();
        assert_eq!(r.verdict, Verdict::Verified);
        // gradient map is the identity: ⟨∇Φ(ξ)−∇Φ(η), ξ−η⟩ = |ξ−η|² exactly
        assert_relative_eq!(r.min_monotonicity, 1.0, epsilon = 1e-12);

        let cosine = phase(x(0).cos(), BoxDomain::symmetric(1, 6.0));
        let r = check_injectivity(&cosine, cosine.domain(), 100, &opts).unwrap();
        assert_eq!(r.verdict, Verdict::Refuted);
        let (a, b) = r.witness.unwrap();
        assert!((a[0] - b[0]).abs() > 0.1);
        assert!((a[0].sin() - b[0].sin()).abs() < 1e-10);

        let pq = families::perturbed_quadratic(
            DMatrix::identity(2, 2),
            0.05,
            families::Perturbation::CosSum,
            BoxDomain::symmetric(2, 1.0),
        )
        .unwrap();
        let r = check_injectivity(&pq, pq.domain(), 10_000, &opts).unwrap();
        assert_eq!(r.verdict, Verdict::Verified);
    }

    #[test]
    fn taylor_remainder_examples() {
        let q = families::quadratic(DMatrix::identity(2, 2), BoxDomain::symmetric(2, 1.0)).unwrap();
        let pairs = random_pairs(q.domain(), 50, 1);
        assert_eq!(taylor_remainder_check(&q, &pairs, 1.0), 0.0);

        let cubic = phase(c(1.0 / 6.0) * x(0).powi(3), BoxDomain::symmetric(1, 1.0));
        let h = 0.3;
        let r = taylor_remainder_check(&cubic, &[(vec![h], vec![0.0])], 1.0);
        assert_relative_eq!(r, 0.5, epsilon = 1e-14);
    }

    #[test]
    fn taylor_constant_is_admissible_for_smooth_phases() {
        let p = phase(
            c(0.5) * x(0).powi(2) + c(0.7) * x(1).powi(2) + c(0.3) * (x(0) * x(1)).sin() + c(0.2) * x(1).exp(),
            BoxDomain::symmetric(2, 1.0),
        );
        let b = SymbolModel::smooth_bump(vec![0.0, 0.0], 0.5).unwrap();
        let r = audit(&p, &b, &AuditOptions { grid_points: Some(41), ..Default::default() }).unwrap();
        assert!(r.taylor_ratio > 0.0);
        assert!(r.taylor_ratio <= r.c_prime_d, "{} > {}", r.taylor_ratio, r.c_prime_d);
    }

    #[test]
    fn scaling_covariance_of_constants() {
        let p = families::perturbed_quadratic(
            DMatrix::from_diagonal(&nalgebra::dvector![1.0, 2.0]),
            0.1,
            families::Perturbation::Coupled,
            BoxDomain::symmetric(2, 1.0),
        )
        .unwrap();
        let b = SymbolModel::smooth_bump(vec![0.0, 0.0], 0.5).unwrap();
        let opts = AuditOptions { grid_points: Some(31), ..Default::default() };
        let t = 2.5;
        let r = audit(&p, &b, &opts).unwrap();
        let rs = audit(&p.scaled(1.0 / t), &b, &opts).unwrap();
        for ((_, m), (_, ms)) in r.m.iter().zip(&rs.m) {
            assert_relative_eq!(*ms, m / t, max_relative = 1e-12);
        }
        assert_relative_eq!(rs.a0, r.a0 / (t * t), max_relative = 1e-12);
    }

    #[test]
    fn refinement_is_monotone() {
        let p = phase(
            c(0.5) * x(0).powi(2) + c(0.1) * x(0).sin() + c(0.05) * x(0).powi(3),
            BoxDomain::symmetric(1, 1.3),
        );
        let coarse_m = compute_m(&p, p.domain(), 3, 2.6 / 10.0).unwrap();
        let fine_m = compute_m(&p, p.domain(), 3, 2.6 / 20.0).unwrap();
        let coarse_a = compute_a0(&p, p.domain(), 2.6 / 10.0, 1e-12).unwrap().value;
        let fine_a = compute_a0(&p, p.domain(), 2.6 / 20.0, 1e-12).unwrap().value;
        assert!(fine_a <= coarse_a);
        for (c, f) in coarse_m.iter().zip(&fine_m) {
            assert!(f.1 >= c.1);
        }
    }

    #[test]
    fn empty_grid_is_an_error() {
        let p = phase(c(0.5) * x(0).powi(2), BoxDomain::symmetric(1, 1.0));
        assert!(matches!(compute_m(&p, p.domain(), 2, 0.0), Err(Error::EmptyGrid(_))));
    }

    #[test]
    fn report_serializes_every_constant() {
        let q = families::quadratic(DMatrix::identity(1, 1), BoxDomain::symmetric(1, 2.0)).unwrap();
        let b = SymbolModel::smooth_bump(vec![0.0], 1.0).unwrap();
        let r = audit(&q, &b, &AuditOptions::default()).unwrap();
        let kv = r.to_key_value();
        assert!(kv.contains("a0 = 1\n"));
        assert!(kv.contains("M_3 = 1\n"));
        assert!(kv.contains("injective_verdict = verified"));
        assert_eq!(r.rows().iter().filter(|(k, _)| k.starts_with("N_")).count(), 3);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn constants_are_nondecreasing_and_det_matches_eigenvalues(
                a in 0.5f64..2.0, b in -0.4f64..0.4, eps in 0.0f64..0.2, r in 0.3f64..0.8,
            ) {
                let p = families::perturbed_quadratic(
                    DMatrix::from_row_slice(2, 2, &[a, b, b, 1.5]),
                    eps,
                    families::Perturbation::Coupled,
                    BoxDomain::symmetric(2, 1.0),
                ).unwrap();
                let s = SymbolModel::smooth_bump(vec![0.0, 0.0], r).unwrap();
                let rep = audit(&p, &s, &AuditOptions { grid_points: Some(15), injectivity_samples: 100, taylor_pairs: 50, ..Default::default() }).unwrap();
                prop_assert!(rep.m.windows(2).all(|w| w[1].1 >= w[0].1));
                prop_assert!(rep.n.windows(2).all(|w| w[1].1 >= w[0].1));
                prop_assert!(rep.det_eigen_mismatch <= 1e-9);
                if rep.positive_definite {
                    prop_assert_ne!(rep.injective, Verdict::Refuted);
                }
            }
        }
    }
}
