//! KPSK symbol geometry and the minimum-error decision rule.
//!
//! Symbol `k` sits on the unit circle at phase `2πk/K`. With isotropic
//! Gaussian noise and equiprobable symbols the minimum-error decision is the
//! nearest constellation point, so the decision regions are wedges of
//! angular half-width `π/K` centred on each symbol.

use std::f64::consts::{PI, TAU};

use crate::error::{Error, Result};

/// Relative slack (in units of one wedge) inside which an angle counts as
/// lying on a decision boundary.
const BOUNDARY_EPS: f64 = 1e-12;

/// A received in-phase/quadrature sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IqPoint {
    pub i: f64,
    pub q: f64,
}

impl IqPoint {
    pub fn new(i: f64, q: f64) -> Self {
        Self { i, q }
    }

    pub fn from_polar(radius: f64, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new(radius * c, radius * s)
    }

    pub fn rotate(self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new(c * self.i - s * self.q, s * self.i + c * self.q)
    }

    pub fn is_finite(self) -> bool {
        self.i.is_finite() && self.q.is_finite()
    }
}

/// Unit-circle KPSK alphabet.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    k: usize,
    angles: Vec<f64>,
}

impl Constellation {
    pub fn size(&self) -> usize {
        self.k
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn angle(&self, symbol: usize) -> f64 {
        self.angles[symbol]
    }

    /// Unit-radius point of `symbol`.
    pub fn point(&self, symbol: usize) -> IqPoint {
        IqPoint::from_polar(1.0, self.angles[symbol])
    }

    /// Angular step between neighbouring symbols.
    pub fn spacing(&self) -> f64 {
        TAU / self.k as f64
    }

    /// Nearest-point decision.
    ///
    /// Points exactly on a wedge boundary go to the lower of the two
    /// adjacent indices (the boundary between `K-1` and `0` goes to `0`),
    /// and the origin decodes as symbol 0.
    pub fn decide(&self, p: IqPoint) -> usize {
        debug_assert!(p.is_finite(), "decide on non-finite point {p:?}");
        if p.i == 0.0 && p.q == 0.0 {
            return 0;
        }
        let mut phi = p.q.atan2(p.i);
        if phi < 0.0 {
            phi += TAU;
        }
        // Position in units of the symbol spacing, in [0, K].
        let t = phi / self.spacing();
        let lower = t.floor();
        let frac = t - lower;
        let lower = lower as usize;
        let idx = if (frac - 0.5).abs() <= BOUNDARY_EPS {
            // On a boundary: the lower index, except that the K-1 | 0 seam
            // resolves to 0.
            if lower + 1 >= self.k {
                0
            } else {
                lower
            }
        } else if frac < 0.5 {
            lower
        } else {
            lower + 1
        };
        idx % self.k
    }

    /// Wedge boundary angles `(2k+1)π/K`, `k = 0..K-1`.
    pub fn boundary_angles(&self) -> Vec<f64> {
        let k = self.k as f64;
        (0..self.k)
            .map(|j| (2 * j + 1) as f64 * PI / k)
            .collect()
    }
}

/// Builds the `K`-point PSK alphabet at angles `2πk/K`.
pub fn make_kpsk(k: usize) -> Result<Constellation> {
    if k < 2 {
        return Err(Error::InvalidAlphabet(k));
    }
    let angles = (0..k).map(|j| TAU * j as f64 / k as f64).collect();
    Ok(Constellation { k, angles })
}

/// Free-function form of [`Constellation::decide`].
pub fn decide(p: IqPoint, c: &Constellation) -> usize {
    c.decide(p)
}

/// Free-function form of [`Constellation::boundary_angles`].
pub fn boundary_angles(c: &Constellation) -> Vec<f64> {
    c.boundary_angles()
}
