use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box `[lo_1, hi_1] × … × [lo_d, hi_d]`.
///
/// Used both for the open evaluation domain `V` of a phase (membership is then
/// tested on the closure) and for the closed support box `K` of a symbol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::Validation(format!(
                "box bounds have mismatched or zero dimension ({} vs {})",
                lo.len(),
                hi.len()
            )));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a <= b) || !a.is_finite() || !b.is_finite()) {
            return Err(Error::Validation(format!("box bounds out of order: {lo:?} / {hi:?}")));
        }
        Ok(BoxDomain { lo, hi })
    }

    /// Cube `[-r, r]^d` around `center`.
    pub fn cube(center: &[f64], r: f64) -> Self {
        BoxDomain {
            lo: center.iter().map(|c| c - r).collect(),
            hi: center.iter().map(|c| c + r).collect(),
        }
    }

    pub fn symmetric(d: usize, r: f64) -> Self {
        BoxDomain::cube(&vec![0.0; d], r)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).collect()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(a, b)| 0.5 * (a + b)).collect()
    }

    pub fn diameter(&self) -> f64 {
        self.widths().iter().map(|w| w * w).sum::<f64>().sqrt()
    }

    pub fn volume(&self) -> f64 {
        self.widths().iter().product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (a, b))| *v >= *a && *v <= *b)
    }

    /// Strict containment of `other` inside `self` (every face separated).
    pub fn strictly_contains(&self, other: &BoxDomain) -> bool {
        self.dim() == other.dim()
            && (0..self.dim()).all(|i| self.lo[i] < other.lo[i] && other.hi[i] < self.hi[i])
    }

    pub fn intersect(&self, other: &BoxDomain) -> Option<BoxDomain> {
        let lo: Vec<f64> = self.lo.iter().zip(&other.lo).map(|(a, b)| a.max(*b)).collect();
        let hi: Vec<f64> = self.hi.iter().zip(&other.hi).map(|(a, b)| a.min(*b)).collect();
        if lo.iter().zip(&hi).all(|(a, b)| a <= b) {
            Some(BoxDomain { lo, hi })
        } else {
            None
        }
    }

    /// Map the unit cube `[0,1]^d` onto the box.
    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .enumerate()
            .map(|(i, t)| self.lo[i] + t * (self.hi[i] - self.lo[i]))
            .collect()
    }

    /// Uniform grid with spacing at most `step` along every axis, boundary included.
    pub fn grid(&self, step: f64) -> Result<Grid> {
        if !(step > 0.0) {
            return Err(Error::EmptyGrid(format!("grid step {step} must be positive")));
        }
        let counts: Vec<usize> = self
            .widths()
            .iter()
            .map(|w| (w / step).ceil() as usize + 1)
            .collect();
        let total = counts.iter().try_fold(1usize, |acc, &c| acc.checked_mul(c));
        match total {
            Some(t) if t <= 50_000_000 => Ok(Grid {
                domain: self.clone(),
                counts,
            }),
            _ => Err(Error::EmptyGrid(format!(
                "grid step {step} on {self} gives too many points"
            ))),
        }
    }

    /// The `Π counts[i]` congruent cells of a regular subdivision, first axis
    /// slowest.
    pub fn grid_cells(&self, counts: &[usize]) -> Vec<BoxDomain> {
        let d = self.dim();
        let total: usize = counts.iter().product();
        let mut out = Vec::with_capacity(total);
        let mut idx = vec![0usize; d];
        for _ in 0..total {
            let mut lo = Vec::with_capacity(d);
            let mut hi = Vec::with_capacity(d);
            for i in 0..d {
                let h = (self.hi[i] - self.lo[i]) / counts[i] as f64;
                lo.push(self.lo[i] + h * idx[i] as f64);
                hi.push(if idx[i] + 1 == counts[i] { self.hi[i] } else { self.lo[i] + h * (idx[i] + 1) as f64 });
            }
            out.push(BoxDomain { lo, hi });
            for i in (0..d).rev() {
                idx[i] += 1;
                if idx[i] < counts[i] {
                    break;
                }
                idx[i] = 0;
            }
        }
        out
    }

    /// Grid with a fixed number of points per axis.
    pub fn grid_points(&self, per_axis: usize) -> Grid {
        let counts = self
            .widths()
            .iter()
            .map(|&w| if w == 0.0 { 1 } else { per_axis.max(2) })
            .collect();
        Grid {
            domain: self.clone(),
            counts,
        }
    }
}

impl fmt::Display for BoxDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| format!("[{a}, {b}]"))
            .collect();
        write!(f, "{}", parts.join("×"))
    }
}

/// Tensor grid over a box.
#[derive(Clone, Debug)]
pub struct Grid {
    domain: BoxDomain,
    counts: Vec<usize>,
}

impl Grid {
    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// Largest spacing along any axis.
    pub fn spacing(&self) -> f64 {
        self.domain
            .widths()
            .iter()
            .zip(&self.counts)
            .map(|(w, &c)| if c > 1 { w / (c - 1) as f64 } else { 0.0 })
            .fold(0.0, f64::max)
    }

    pub fn point(&self, mut flat: usize) -> Vec<f64> {
        let d = self.counts.len();
        let mut x = vec![0.0; d];
        for i in (0..d).rev() {
            let c = self.counts[i];
            let k = flat % c;
            flat /= c;
            x[i] = if c == 1 {
                0.5 * (self.domain.lo[i] + self.domain.hi[i])
            } else {
                let t = k as f64 / (c - 1) as f64;
                self.domain.lo[i] + t * (self.domain.hi[i] - self.domain.lo[i])
            };
        }
        x
    }

    pub fn points(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        (0..self.len()).map(move |k| self.point(k))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cells_tile_the_box() {
        let b = BoxDomain::new(vec![0.0, -1.0], vec![2.0, 1.0]).unwrap();
        let cells = b.grid_cells(&[2, 3]);
        assert_eq!(cells.len(), 6);
        let vol: f64 = cells.iter().map(|c| c.volume()).sum();
        assert!((vol - b.volume()).abs() < 1e-12);
        assert_eq!(cells[5].hi, b.hi);
        assert_eq!(cells[0].lo, b.lo);
    }

    #[test]
    fn grid_includes_endpoints_and_midpoint() {
        let b = BoxDomain::symmetric(1, 1.0);
        let g = b.grid_points(201);
        assert_eq!(g.len(), 201);
        assert_eq!(g.point(0), vec![-1.0]);
        assert_eq!(g.point(100), vec![0.0]);
        assert_eq!(g.point(200), vec![1.0]);
    }

    #[test]
    fn rejects_inverted_bounds() {
        assert!(BoxDomain::new(vec![1.0], vec![0.0]).is_err());
    }

    #[test]
    fn strict_containment() {
        let v = BoxDomain::symmetric(2, 2.0);
        assert!(v.strictly_contains(&BoxDomain::symmetric(2, 1.0)));
        assert!(!v.strictly_contains(&BoxDomain::symmetric(2, 2.0)));
    }
}
