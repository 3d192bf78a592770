//! Smooth compactly supported profiles shared by symbols, the partition of
//! unity and the cutoff `ψ`.

use crate::jet::Jet;

/// Below this argument `exp(-1/u)` is exactly zero in `f64`, and so is every
/// derivative to working precision.
const FLAT_EPS: f64 = 1.0 / 740.0;

/// Flat-at-zero building block of the transition profiles.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transition {
    /// `f(u) = exp(-1/u)`.
    #[default]
    Exp,
    /// `f(u) = exp(-1/u²)`.
    ExpSquared,
}

impl Transition {
    fn flat(self, u: f64) -> f64 {
        match self {
            Transition::Exp if u > FLAT_EPS => (-1.0 / u).exp(),
            Transition::ExpSquared if u > FLAT_EPS.sqrt() => (-1.0 / (u * u)).exp(),
            _ => 0.0,
        }
    }

    fn flat_jet(self, u: &Jet) -> Jet {
        match self {
            Transition::Exp if u.value() > FLAT_EPS => u.recip().neg().exp(),
            Transition::ExpSquared if u.value() > FLAT_EPS.sqrt() => u.mul(u).recip().neg().exp(),
            _ => Jet::zero(u.space(), u.order()),
        }
    }

    /// Smooth step: 1 for `t ≤ 0`, 0 for `t ≥ 1`, monotone in between.
    pub fn step(self, t: f64) -> f64 {
        if t <= 0.0 {
            1.0
        } else if t >= 1.0 {
            0.0
        } else {
            let a = self.flat(1.0 - t);
            a / (a + self.flat(t))
        }
    }

    pub fn step_jet(self, t: &Jet) -> Jet {
        let v = t.value();
        if v <= 0.0 {
            Jet::constant(t.space(), t.order(), 1.0)
        } else if v >= 1.0 {
            Jet::zero(t.space(), t.order())
        } else {
            let a = self.flat_jet(&t.neg().add_scalar(1.0));
            let b = self.flat_jet(t);
            a.div(&a.add(&b))
        }
    }
}

/// `exp(1 - 1/s)` for `s > 0`, else 0. Equals 1 at `s = 1`.
pub fn bump_profile(s: f64) -> f64 {
    if s > FLAT_EPS {
        (1.0 - 1.0 / s).exp()
    } else {
        0.0
    }
}

pub fn bump_profile_jet(s: &Jet) -> Jet {
    if s.value() > FLAT_EPS {
        s.recip().neg().add_scalar(1.0).exp()
    } else {
        Jet::zero(s.space(), s.order())
    }
}
