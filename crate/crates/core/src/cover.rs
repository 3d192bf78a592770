//! δ-ball cover of the symbol support and the smooth partition of unity
//! subordinate to it.
//!
//! Centers sit on a rectangular lattice whose spacing is at most `δ/√d`, so
//! every point of `K` lies within `δ/2` of a center. Weights are
//! Shepard-normalized bumps: `χ_j = θ_j / Σ_k θ_k` with
//! `θ_j(ξ) = θ(|ξ−ξ_j|/δ)` and `θ(r) = exp(1 − 1/(1−r²))` for `r < 1`.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::audit::random_point;
use crate::bump::{bump_profile, bump_profile_jet};
use crate::deriv::PhaseModel;
use crate::domain::BoxDomain;
use crate::table::fmt_f64;
use crate::error::{Error, Result};
use crate::jet::{Jet, JetSpace};

/// Default hard cap on the number of balls.
pub const MAX_BALLS: usize = 1_000_000;

/// `δ = a₀ / (12 C'_d M₃ (C_d M₂)^{d−1})`.
///
/// `m3 = 0` stands for a phase without third-order derivatives; the formula
/// is then unbounded and `cap` is returned instead.
pub fn compute_delta(a0: f64, m2: f64, m3: f64, d: usize, c_d: f64, c_prime_d: f64, cap: f64) -> Result<f64> {
    if !(a0 > 0.0) {
        return Err(Error::DegeneratePhase(format!("a0 = {a0}")));
    }
    if m3 == 0.0 {
        return Ok(cap);
    }
    Ok(a0 / (12.0 * c_prime_d * m3 * (c_d * m2).powi(d as i32 - 1)))
}

/// Lattice cover of a box by balls of radius `δ`.
#[derive(Clone, Debug)]
pub struct Cover {
    support: BoxDomain,
    delta: f64,
    /// Lattice coordinates per axis.
    axes: Vec<Vec<f64>>,
}

/// Lattice cover of `support` by balls of radius `delta`, with at most
/// `cap` balls.
pub fn build_cover(support: &BoxDomain, delta: f64, cap: usize) -> Result<Cover> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::Validation(format!("cover radius δ = {delta} must be positive")));
    }
    let d = support.dim();
    let sd = (d as f64).sqrt();
    let mut counts = Vec::with_capacity(d);
    for w in support.widths() {
        let n = if w == 0.0 { 1.0 } else { (w * sd / delta).ceil() + 1.0 };
        counts.push(n);
    }
    let total: f64 = counts.iter().product();
    if total > cap as f64 {
        return Err(Error::Resource {
            required: total.min(usize::MAX as f64) as usize,
            cap,
        });
    }
    let axes = counts
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let n = n as usize;
            let (lo, hi) = (support.lo[i], support.hi[i]);
            if n == 1 {
                vec![0.5 * (lo + hi)]
            } else {
                (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
            }
        })
        .collect();
    Ok(Cover {
        support: support.clone(),
        delta,
        axes,
    })
}

impl Cover {
    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn support(&self) -> &BoxDomain {
        &self.support
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn center(&self, mut j: usize) -> Vec<f64> {
        let mut c = vec![0.0; self.dim()];
        for i in (0..self.dim()).rev() {
            let n = self.axes[i].len();
            c[i] = self.axes[i][j % n];
            j /= n;
        }
        c
    }

    pub fn centers(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        (0..self.len()).map(|j| self.center(j))
    }

    /// `δ^{−d} Π_i (L_i √d + 2δ)`: the count the lattice construction can
    /// never exceed.
    pub fn count_bound(&self) -> f64 {
        let sd = (self.dim() as f64).sqrt();
        let prod: f64 = self.support.widths().iter().map(|w| w * sd + 2.0 * self.delta).product();
        prod / self.delta.powi(self.dim() as i32)
    }

    /// Largest distance from a point of `K` to its nearest center.
    pub fn covering_radius(&self) -> f64 {
        self.axes
            .iter()
            .map(|a| {
                let gap = a.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
                let h = 0.5 * gap;
                h * h
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Indices of the centers within distance `< δ` of `xi`.
    pub fn neighbors(&self, xi: &[f64]) -> Vec<usize> {
        let mut ranges = Vec::with_capacity(self.dim());
        for (i, a) in self.axes.iter().enumerate() {
            let lo = a.partition_point(|c| *c <= xi[i] - self.delta);
            let hi = a.partition_point(|c| *c < xi[i] + self.delta);
            if lo >= hi {
                return Vec::new();
            }
            ranges.push(lo..hi);
        }
        let mut out = Vec::new();
        let mut idx: Vec<usize> = ranges.iter().map(|r| r.start).collect();
        let r2 = self.delta * self.delta;
        loop {
            let mut flat = 0;
            let mut dist2 = 0.0;
            for (i, a) in self.axes.iter().enumerate() {
                flat = flat * a.len() + idx[i];
                let t = a[idx[i]] - xi[i];
                dist2 += t * t;
            }
            if dist2 < r2 {
                out.push(flat);
            }
            let mut i = self.dim();
            loop {
                if i == 0 {
                    return out;
                }
                i -= 1;
                idx[i] += 1;
                if idx[i] < ranges[i].end {
                    break;
                }
                idx[i] = ranges[i].start;
            }
        }
    }

    /// Writes `j,c_1,…,c_d,delta` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["j".to_string()];
        header.extend((1..=self.dim()).map(|i| format!("c{i}")));
        header.push("delta".into());
        w.write_record(&header)?;
        for (j, c) in self.centers().enumerate() {
            let mut row = vec![j.to_string()];
            row.extend(c.iter().map(|v| fmt_f64(*v)));
            row.push(fmt_f64(self.delta));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Partition of unity `(χ_j)` on `K`.
#[derive(Clone, Debug)]
pub enum PartitionOfUnity {
    /// One piece, `χ ≡ 1` on `K`.
    Single(BoxDomain),
    /// Shepard-normalized bumps on a lattice cover.
    Lattice(Cover),
}

impl PartitionOfUnity {
    pub fn single(support: &BoxDomain) -> Self {
        PartitionOfUnity::Single(support.clone())
    }

    pub fn from_cover(cover: Cover) -> Self {
        PartitionOfUnity::Lattice(cover)
    }

    pub fn build(support: &BoxDomain, delta: f64, cap: usize) -> Result<Self> {
        Ok(PartitionOfUnity::Lattice(build_cover(support, delta, cap)?))
    }

    pub fn support(&self) -> &BoxDomain {
        match self {
            PartitionOfUnity::Single(k) => k,
            PartitionOfUnity::Lattice(c) => c.support(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            PartitionOfUnity::Single(_) => 1,
            PartitionOfUnity::Lattice(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Ball radius; for the single piece, the diameter of `K`.
    pub fn delta(&self) -> f64 {
        match self {
            PartitionOfUnity::Single(k) => k.diameter(),
            PartitionOfUnity::Lattice(c) => c.delta(),
        }
    }

    pub fn center(&self, j: usize) -> Vec<f64> {
        match self {
            PartitionOfUnity::Single(k) => k.center(),
            PartitionOfUnity::Lattice(c) => c.center(j),
        }
    }

    /// Bounding box of `supp χ_j ∩ K`.
    pub fn piece_box(&self, j: usize) -> Option<BoxDomain> {
        match self {
            PartitionOfUnity::Single(k) => Some(k.clone()),
            PartitionOfUnity::Lattice(c) => BoxDomain::cube(&c.center(j), c.delta()).intersect(c.support()),
        }
    }

    /// Nonzero weights `(j, χ_j(ξ))` at `xi`, in increasing `j`.
    pub fn weights_at(&self, xi: &[f64]) -> Result<Vec<(usize, f64)>> {
        match self {
            PartitionOfUnity::Single(_) => Ok(vec![(0, 1.0)]),
            PartitionOfUnity::Lattice(c) => {
                let raw: Vec<(usize, f64)> = c
                    .neighbors(xi)
                    .into_iter()
                    .map(|j| (j, template(&c.center(j), c.delta(), xi)))
                    .filter(|(_, t)| *t > 0.0)
                    .collect();
                let total: f64 = raw.iter().map(|p| p.1).sum();
                if total <= 0.0 {
                    return Err(Error::CoverDefect(xi.to_vec()));
                }
                Ok(raw.into_iter().map(|(j, t)| (j, t / total)).collect())
            }
        }
    }

    pub fn weight(&self, j: usize, xi: &[f64]) -> Result<f64> {
        Ok(self
            .weights_at(xi)?
            .into_iter()
            .find(|(k, _)| *k == j)
            .map(|p| p.1)
            .unwrap_or(0.0))
    }

    /// `χ_j` as a jet at `xi`. Points outside every ball give the zero jet.
    pub fn weight_jet(&self, j: usize, xi: &[f64], order: usize) -> Jet {
        let space = JetSpace::get(xi.len());
        match self {
            PartitionOfUnity::Single(_) => Jet::constant(space, order, 1.0),
            PartitionOfUnity::Lattice(c) => {
                let vars = Jet::variables(xi, order);
                let mut total = Jet::zero(space, order);
                let mut own = None;
                for k in c.neighbors(xi) {
                    let t = template_jet(&c.center(k), c.delta(), &vars);
                    if k == j {
                        own = Some(t.clone());
                    }
                    total = total.add(&t);
                }
                match own {
                    Some(t) if total.value() > 0.0 => t.div(&total),
                    _ => Jet::zero(space, order),
                }
            }
        }
    }

    /// Weight matrix: one row per point, one column per piece.
    pub fn partition_weights(&self, points: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        points
            .iter()
            .map(|p| {
                let mut row = vec![0.0; self.len()];
                for (j, w) in self.weights_at(p)? {
                    row[j] = w;
                }
                Ok(row)
            })
            .collect()
    }
}

fn template(center: &[f64], delta: f64, xi: &[f64]) -> f64 {
    let r2: f64 = center.iter().zip(xi).map(|(c, x)| (x - c) * (x - c)).sum::<f64>() / (delta * delta);
    if r2 >= 1.0 {
        0.0
    } else {
        bump_profile(1.0 - r2)
    }
}

fn template_jet(center: &[f64], delta: f64, vars: &[Jet]) -> Jet {
    let mut r2 = Jet::zero(vars[0].space(), vars[0].order());
    for (v, c) in vars.iter().zip(center) {
        let u = v.add_scalar(-c);
        r2 = r2.add(&u.mul(&u));
    }
    bump_profile_jet(&r2.scale(-1.0 / (delta * delta)).add_scalar(1.0))
}

/// Result of sampling the local injectivity inequality inside the balls.
#[derive(Clone, Debug)]
pub struct LocalInjectivity {
    /// `5a₀ / (6 (C_d M₂)^{d−1})`.
    pub constant: f64,
    pub pairs: usize,
    pub violations: usize,
    /// Smallest `|∇Φ(ξ)−∇Φ(η)| / |ξ−η|` seen.
    pub min_ratio: f64,
}

/// Samples `pairs` pairs, each inside one ball (cycling through the balls)
/// intersected with the phase domain, and counts violations of
/// `|∇Φ(ξ)−∇Φ(η)| ≥ 5a₀/(6(C_d M₂)^{d−1}) |ξ−η|`.
pub fn check_local_injectivity(
    phase: &PhaseModel,
    pou: &PartitionOfUnity,
    a0: f64,
    m2: f64,
    c_d: f64,
    pairs: usize,
    seed: u64,
) -> LocalInjectivity {
    let d = phase.dim();
    let constant = 5.0 * a0 / (6.0 * (c_d * m2).powi(d as i32 - 1));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let delta = pou.delta();
    let mut min_ratio = f64::INFINITY;
    let mut violations = 0;
    let mut tested = 0;
    let j_count = pou.len();
    for n in 0..pairs {
        let j = n % j_count;
        let center = pou.center(j);
        let Some(region) = BoxDomain::cube(&center, delta).intersect(phase.domain()) else {
            continue;
        };
        let in_ball = |p: &Vec<f64>| {
            matches!(pou, PartitionOfUnity::Single(_))
                || p.iter().zip(&center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() < delta * delta
        };
        let draw = |rng: &mut ChaCha8Rng| {
            (0..64).map(|_| random_point(rng, &region)).find(|p| in_ball(p))
        };
        let (Some(xi), Some(eta)) = (draw(&mut rng), draw(&mut rng)) else {
            continue;
        };
        let dist: f64 = xi.iter().zip(&eta).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        if dist == 0.0 {
            continue;
        }
        let gx = phase.gradient(&xi);
        let ge = phase.gradient(&eta);
        let gd: f64 = gx.iter().zip(&ge).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let ratio = gd / dist;
        min_ratio = min_ratio.min(ratio);
        if ratio < constant {
            violations += 1;
        }
        tested += 1;
    }
    LocalInjectivity {
        constant,
        pairs: tested,
        violations,
        min_ratio,
    }
}

/// For each order `k = 0..=max_order`, the largest `|∂^α χ_j(ξ)| δ^{|α|}` over
/// `samples` random points of `K` and all pieces alive there.
pub fn derivative_profile(pou: &PartitionOfUnity, max_order: usize, samples: usize, seed: u64) -> Vec<f64> {
    let support = pou.support();
    let space = JetSpace::get(support.dim());
    let delta = pou.delta();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0.0f64; max_order + 1];
    for _ in 0..samples {
        let p = random_point(&mut rng, support);
        let Ok(ws) = pou.weights_at(&p) else { continue };
        for (j, _) in ws {
            let jet = pou.weight_jet(j, &p, max_order);
            for k in 0..space.len(max_order) {
                let deg = space.degree(k);
                let v = jet.derivative_at(k).abs() * delta.powi(deg as i32);
                out[deg] = out[deg].max(v);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{c, x};
    use approx::assert_relative_eq;

    #[test]
    fn delta_formula() {
        assert_relative_eq!(compute_delta(1.0, 1.0, 1.0, 1, 1.0, 0.5, 9.0).unwrap(), 1.0 / 6.0);
        assert_eq!(
            compute_delta(1.0, 7.0, 1.0, 1, 1.0, 0.5, 9.0).unwrap(),
            compute_delta(1.0, 1.0, 1.0, 1, 1.0, 0.5, 9.0).unwrap()
        );
        assert_eq!(compute_delta(1.0, 1.0, 0.0, 2, 2.0, 2.0, 2.5).unwrap(), 2.5);
        assert_relative_eq!(
            compute_delta(2.0, 3.0, 4.0, 2, 2.0, 2.0, 1.0).unwrap(),
            2.0 / (12.0 * 2.0 * 4.0 * 6.0)
        );
        assert!(compute_delta(0.0, 1.0, 1.0, 1, 1.0, 0.5, 1.0).is_err());
    }

    #[test]
    fn cover_examples() {
        let c = build_cover(&BoxDomain::symmetric(1, 1.0), 2.0, MAX_BALLS).unwrap();
        assert_eq!(c.len(), 2);
        let c = build_cover(&BoxDomain::new(vec![0.3, 0.3], vec![0.3, 0.3]).unwrap(), 0.1, MAX_BALLS).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.center(0), vec![0.3, 0.3]);
        let c = build_cover(&BoxDomain::symmetric(2, 1.0), 0.5, MAX_BALLS).unwrap();
        // ⌈2√2/0.5⌉ + 1 = 7 lattice points per axis
        assert_eq!(c.len(), 49);
        assert!(c.len() as f64 <= c.count_bound());
        assert!(matches!(
            build_cover(&BoxDomain::symmetric(2, 1.0), 1e-4, MAX_BALLS),
            Err(Error::Resource { .. })
        ));
    }

    #[test]
    fn every_point_is_within_half_delta_of_a_center() {
        let k = BoxDomain::new(vec![-1.0, 0.0], vec![1.0, 0.7]).unwrap();
        let c = build_cover(&k, 0.3, MAX_BALLS).unwrap();
        assert!(c.covering_radius() <= 0.15 + 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let p = random_point(&mut rng, &k);
            let nearest = c
                .centers()
                .map(|q| q.iter().zip(&p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
                .fold(f64::INFINITY, f64::min);
            assert!(nearest <= 0.15 + 1e-12);
            // neighbor lookup agrees with brute force
            let brute: Vec<usize> = c
                .centers()
                .enumerate()
                .filter(|(_, q)| q.iter().zip(&p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() < 0.09)
                .map(|(j, _)| j)
                .collect();
            assert_eq!(c.neighbors(&p), brute);
        }
    }

    #[test]
    fn weights_sum_to_one() {
        let k = BoxDomain::symmetric(2, 1.0);
        let pou = PartitionOfUnity::build(&k, 1.5, MAX_BALLS).unwrap();
        assert_eq!(pou.len(), 9);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<Vec<f64>> = (0..10_000).map(|_| random_point(&mut rng, &k)).collect();
        for row in pou.partition_weights(&pts).unwrap() {
            assert!(row.iter().all(|w| *w >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
        assert_eq!(PartitionOfUnity::single(&k).weight(0, &[0.2, 0.1]).unwrap(), 1.0);
    }

    #[test]
    fn symmetric_point_gets_equal_weights() {
        let pou = PartitionOfUnity::build(&BoxDomain::symmetric(1, 1.0), 2.0, MAX_BALLS).unwrap();
        let w = pou.weights_at(&[0.0]).unwrap();
        assert_eq!(w.len(), 2);
        assert_relative_eq!(w[0].1, 0.5, epsilon = 1e-15);
        assert_relative_eq!(w[1].1, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn uncovered_point_is_a_defect() {
        let pou = PartitionOfUnity::build(&BoxDomain::symmetric(1, 1.0), 0.5, MAX_BALLS).unwrap();
        assert!(matches!(pou.weights_at(&[5.0]), Err(Error::CoverDefect(_))));
    }

    #[test]
    fn weight_jets_sum_to_constant_one() {
        let k = BoxDomain::symmetric(2, 1.0);
        let pou = PartitionOfUnity::build(&k, 0.7, MAX_BALLS).unwrap();
        let p = [0.13, -0.41];
        let mut total = Jet::zero(JetSpace::get(2), 3);
        for (j, w) in pou.weights_at(&p).unwrap() {
            let jet = pou.weight_jet(j, &p, 3);
            assert_relative_eq!(jet.value(), w, epsilon = 1e-14);
            total = total.add(&jet);
        }
        assert_relative_eq!(total.value(), 1.0, epsilon = 1e-13);
        for v in &total.coeffs()[1..] {
            assert!(v.abs() < 1e-9, "{v}");
        }
    }

    #[test]
    fn weight_jet_matches_finite_differences() {
        let pou = PartitionOfUnity::build(&BoxDomain::symmetric(2, 1.0), 0.8, MAX_BALLS).unwrap();
        let p = [0.21, 0.05];
        let j = pou.weights_at(&p).unwrap()[0].0;
        let jet = pou.weight_jet(j, &p, 1);
        let h = 1e-6;
        for i in 0..2 {
            let mut a = p;
            let mut b = p;
            a[i] += h;
            b[i] -= h;
            let fd = (pou.weight(j, &a).unwrap() - pou.weight(j, &b).unwrap()) / (2.0 * h);
            let mut alpha = [0u8; 2];
            alpha[i] = 1;
            assert_relative_eq!(jet.partial(&alpha), fd, epsilon = 1e-7);
        }
    }

    #[test]
    fn scaled_derivatives_do_not_depend_on_delta() {
        let k = BoxDomain::symmetric(2, 1.0);
        let a = derivative_profile(&PartitionOfUnity::build(&k, 0.4, MAX_BALLS).unwrap(), 3, 3000, 5);
        let b = derivative_profile(&PartitionOfUnity::build(&k, 0.2, MAX_BALLS).unwrap(), 3, 3000, 5);
        for (x, y) in a.iter().zip(&b) {
            assert!(x.is_finite() && y.is_finite());
            assert!(x / y <= 2.0 && y / x <= 2.0, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn local_injectivity_holds_in_formula_balls() {
        let v = BoxDomain::symmetric(2, 1.0);
        let phase = PhaseModel::new(
            "custom",
            c(0.5) * x(0).powi(2) + x(1).powi(2) + c(0.1) * x(0).sin() * x(1).cos(),
            v.clone(),
            vec![],
        )
        .unwrap();
        let opts = crate::audit::AuditOptions { grid_points: Some(41), ..Default::default() };
        let symbol = crate::deriv::SymbolModel::smooth_bump(vec![0.0, 0.0], 0.5).unwrap();
        let rep = crate::audit::audit(&phase, &symbol, &opts).unwrap();
        let delta = compute_delta(rep.a0, rep.m_k(2), rep.m_k(3), 2, rep.c_d, rep.c_prime_d, 1.0).unwrap();
        let pou = PartitionOfUnity::build(symbol.support(), delta, MAX_BALLS).unwrap();
        let r = check_local_injectivity(&phase, &pou, rep.a0, rep.m_k(2), rep.c_d, 2000, 1);
        assert_eq!(r.pairs, 2000);
        assert_eq!(r.violations, 0);
        assert!(r.min_ratio >= r.constant);
    }

    #[test]
    fn csv_dump() {
        let c = build_cover(&BoxDomain::symmetric(1, 1.0), 2.0, MAX_BALLS).unwrap();
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "j,c1,delta\n0,-1.0,2.0\n1,1.0,2.0\n");
    }
}
