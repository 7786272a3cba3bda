//! Lattice points, zero-sum observables and stable-law parameter bundles.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, ZdxError};

/// Residual allowed on `|Σ β(p)|` for an observable to be used downstream.
pub const ZERO_SUM_TOL: f64 = 1e-12;

/// Lattice dimension. Only `d ∈ {1, 2}` is supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub enum Dim {
    One,
    Two,
}

impl Dim {
    pub fn get(self) -> usize {
        match self {
            Dim::One => 1,
            Dim::Two => 2,
        }
    }
}

impl TryFrom<usize> for Dim {
    type Error = ZdxError;

    fn try_from(d: usize) -> Result<Self> {
        match d {
            1 => Ok(Dim::One),
            2 => Ok(Dim::Two),
            _ => invalid(format!("dimension must be 1 or 2, got {d}")),
        }
    }
}

impl From<Dim> for usize {
    fn from(d: Dim) -> usize {
        d.get()
    }
}

/// A point of Z or Z². One-dimensional points keep `y == 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: i64,
    pub y: i64,
}

impl Point {
    pub const ZERO: Point = Point { x: 0, y: 0 };

    pub const fn d1(x: i64) -> Self {
        Point { x, y: 0 }
    }

    pub const fn d2(x: i64, y: i64) -> Self {
        Point { x, y }
    }

    pub fn from_coords(coords: &[i64]) -> Result<Self> {
        match coords {
            [x] => Ok(Point::d1(*x)),
            [x, y] => Ok(Point::d2(*x, *y)),
            _ => invalid(format!("lattice point must have 1 or 2 coordinates, got {}", coords.len())),
        }
    }

    pub fn coords(self, d: Dim) -> Vec<i64> {
        match d {
            Dim::One => vec![self.x],
            Dim::Two => vec![self.x, self.y],
        }
    }

    pub fn is_zero(self) -> bool {
        self == Point::ZERO
    }

    /// Whether the point is representable in dimension `d`.
    pub fn fits(self, d: Dim) -> bool {
        d == Dim::Two || self.y == 0
    }

    pub fn norm(self) -> f64 {
        ((self.x * self.x + self.y * self.y) as f64).sqrt()
    }

    pub fn norm_inf(self) -> i64 {
        self.x.abs().max(self.y.abs())
    }

    pub fn dot(self, u: &[f64]) -> f64 {
        let mut s = self.x as f64 * u[0];
        if u.len() > 1 {
            s += self.y as f64 * u[1];
        }
        s
    }
}

impl std::ops::Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::d2(self.x + o.x, self.y + o.y)
    }
}

impl std::ops::Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::d2(self.x - o.x, self.y - o.y)
    }
}

impl std::ops::Neg for Point {
    type Output = Point;
    fn neg(self) -> Point {
        Point::d2(-self.x, -self.y)
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// A finitely supported real function β on Z^d.
///
/// [`Observable::centred`] subtracts the mean over the support so that
/// `Σ β = 0` up to rounding; [`Observable::from_weights`] stores the weights
/// untouched so that non-centred input can still be inspected by
/// [`validate_observable`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Observable {
    dim: Dim,
    support: Vec<(Point, f64)>,
}

impl Observable {
    /// Weights as given. Rejects repeated points and points of the wrong dimension.
    pub fn from_weights(dim: Dim, support: Vec<(Point, f64)>) -> Result<Self> {
        for (i, (p, w)) in support.iter().enumerate() {
            if !p.fits(dim) {
                return invalid(format!("point {p} does not fit d={}", dim.get()));
            }
            if !w.is_finite() {
                return invalid(format!("weight at {p} is not finite"));
            }
            if support[..i].iter().any(|(q, _)| q == p) {
                return invalid(format!("support point {p} repeated"));
            }
        }
        Ok(Observable { dim, support })
    }

    /// Canonical constructor: subtracts the mean so the weights sum to zero.
    ///
    /// A single-point support cannot carry a non-trivial zero-sum function and
    /// is rejected. The empty support is the zero observable.
    pub fn centred(dim: Dim, support: Vec<(Point, f64)>) -> Result<Self> {
        if support.len() == 1 {
            return invalid("a single-point support cannot be centred to a non-zero observable");
        }
        let mut obs = Observable::from_weights(dim, support)?;
        if !obs.support.is_empty() {
            let mean = obs.support.iter().map(|(_, w)| w).sum::<f64>() / obs.support.len() as f64;
            for (_, w) in &mut obs.support {
                *w -= mean;
            }
        }
        Ok(obs)
    }

    pub fn zero(dim: Dim) -> Self {
        Observable { dim, support: Vec::new() }
    }

    pub fn dim(&self) -> Dim {
        self.dim
    }

    pub fn support(&self) -> &[(Point, f64)] {
        &self.support
    }

    pub fn points(&self) -> impl Iterator<Item = Point> + '_ {
        self.support.iter().map(|(p, _)| *p)
    }

    pub fn weight(&self, p: Point) -> f64 {
        self.support.iter().find(|(q, _)| *q == p).map_or(0.0, |(_, w)| *w)
    }

    pub fn sum(&self) -> f64 {
        self.support.iter().map(|(_, w)| w).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.support.iter().all(|(_, w)| *w == 0.0)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Observable {
            dim: self.dim,
            support: self.support.iter().map(|&(p, w)| (p, c * w)).collect(),
        }
    }

    /// Pointwise sum; points whose weights cancel are kept with weight 0.
    pub fn plus(&self, other: &Observable) -> Result<Self> {
        if self.dim != other.dim {
            return Err(ZdxError::Dimension { expected: self.dim.get(), got: other.dim.get() });
        }
        let mut support = self.support.clone();
        for &(p, w) in &other.support {
            match support.iter_mut().find(|(q, _)| *q == p) {
                Some(e) => e.1 += w,
                None => support.push((p, w)),
            }
        }
        Ok(Observable { dim: self.dim, support })
    }

    /// Errors unless `|Σ β| ≤ ZERO_SUM_TOL`.
    pub fn ensure_centred(&self) -> Result<()> {
        let residual = self.sum().abs();
        if residual > ZERO_SUM_TOL {
            return Err(ZdxError::NotCentred { residual });
        }
        Ok(())
    }

    /// `Σ_{k} β(pos_k)` style lookup for a single position.
    #[inline]
    pub fn eval(&self, p: Point) -> f64 {
        for &(q, w) in &self.support {
            if q == p {
                return w;
            }
        }
        0.0
    }
}

/// `f_p = 1_{p} − 1_{0}`.
pub fn make_fp(dim: Dim, p: Point) -> Result<Observable> {
    if p.is_zero() {
        return invalid("f_p is the zero observable for p = 0");
    }
    Observable::from_weights(dim, vec![(p, 1.0), (Point::ZERO, -1.0)])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ObservableReport {
    pub zero_sum_residual: f64,
    pub weighted_norm: f64,
    pub accepted: bool,
}

/// Residual `|Σβ|` and the weighted norm `Σ |p|^{(α−d)/2+ε} |β(p)|`.
pub fn validate_observable(obs: &Observable, alpha: f64, d: Dim, eps: f64) -> Result<ObservableReport> {
    if eps <= 0.0 {
        return invalid("eps must be positive");
    }
    if obs.dim() != d {
        return Err(ZdxError::Dimension { expected: d.get(), got: obs.dim().get() });
    }
    let exponent = (alpha - d.get() as f64) / 2.0 + eps;
    let zero_sum_residual = obs.sum().abs();
    let weighted_norm = obs
        .support()
        .iter()
        .map(|(p, w)| p.norm().powf(exponent) * w.abs())
        .sum();
    Ok(ObservableReport {
        zero_sum_residual,
        weighted_norm,
        accepted: zero_sum_residual <= ZERO_SUM_TOL,
    })
}

/// Slowly varying factor `L` in the stable normalisation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SlowlyVarying {
    Constant { c: f64 },
    /// `L(t) = ln(max(t, e))`.
    Logarithmic,
}

impl SlowlyVarying {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            SlowlyVarying::Constant { c } => c,
            SlowlyVarying::Logarithmic => t.max(std::f64::consts::E).ln(),
        }
    }
}

impl Default for SlowlyVarying {
    fn default() -> Self {
        SlowlyVarying::Constant { c: 1.0 }
    }
}

/// Parameters of `ψ(u) = ϑ|u|^α [1 − iζ sgn u]` (d = 1) or `ϑ |√Σ u|^α` (d = 2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StableParams {
    pub dim: Dim,
    pub alpha: f64,
    pub theta: f64,
    pub zeta: f64,
    /// Row-major symmetric 2×2 matrix; `[[1,0],[0,1]]` for d = 1.
    pub sigma: [[f64; 2]; 2],
    pub slowly_varying: SlowlyVarying,
}

impl StableParams {
    pub fn new(
        dim: Dim,
        alpha: f64,
        theta: f64,
        zeta: f64,
        sigma: [[f64; 2]; 2],
        slowly_varying: SlowlyVarying,
    ) -> Result<Self> {
        let p = StableParams { dim, alpha, theta, zeta, sigma, slowly_varying };
        p.validate()?;
        Ok(p)
    }

    /// Gaussian-regime parameters for a one-dimensional step of variance `var`.
    pub fn gaussian_1d(var: f64) -> Result<Self> {
        StableParams::new(Dim::One, 2.0, var / 2.0, 0.0, IDENTITY, SlowlyVarying::default())
    }

    /// Gaussian-regime parameters for a two-dimensional step covariance.
    pub fn gaussian_2d(cov: [[f64; 2]; 2]) -> Result<Self> {
        StableParams::new(Dim::Two, 2.0, 0.5, 0.0, cov, SlowlyVarying::default())
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim.get() as f64;
        if !(self.alpha >= d && self.alpha <= 2.0) {
            return invalid(format!("alpha = {} outside [d, 2]", self.alpha));
        }
        if !(self.theta > 0.0) {
            return invalid("theta must be positive");
        }
        match self.dim {
            Dim::Two => {
                if self.zeta != 0.0 {
                    return invalid("zeta must be 0 in dimension 2");
                }
            }
            Dim::One => {
                if self.alpha > 1.0 && self.alpha < 2.0 {
                    let bound = (std::f64::consts::PI * self.alpha / 2.0).tan().abs();
                    if self.zeta.abs() > bound + 1e-12 {
                        return invalid(format!("|zeta| = {} exceeds |tan(pi alpha/2)| = {bound}", self.zeta));
                    }
                }
                if self.sigma != IDENTITY {
                    return invalid("sigma must be the identity in dimension 1");
                }
            }
        }
        let s = self.sigma;
        if (s[0][1] - s[1][0]).abs() > 1e-12 {
            return invalid("sigma must be symmetric");
        }
        if !(self.det_sigma() > 0.0) || s[0][0] <= 0.0 {
            return invalid("sigma must be positive definite");
        }
        Ok(())
    }

    pub fn det_sigma(&self) -> f64 {
        self.sigma[0][0] * self.sigma[1][1] - self.sigma[0][1] * self.sigma[1][0]
    }

    /// `ψ(u)` as a complex number `(re, im)`.
    pub fn psi(&self, u: &[f64]) -> (f64, f64) {
        match self.dim {
            Dim::One => {
                let a = u[0].abs().powf(self.alpha) * self.theta;
                (a, -a * self.zeta * u[0].signum())
            }
            Dim::Two => {
                let s = self.sigma;
                let q = s[0][0] * u[0] * u[0] + 2.0 * s[0][1] * u[0] * u[1] + s[1][1] * u[1] * u[1];
                (self.theta * q.powf(self.alpha / 2.0), 0.0)
            }
        }
    }
}

pub const IDENTITY: [[f64; 2]; 2] = [[1.0, 0.0], [0.0, 1.0]];

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn make_fp_instances() {
        let f = make_fp(Dim::One, Point::d1(1)).unwrap();
        assert_eq!(f.weight(Point::d1(1)), 1.0);
        assert_eq!(f.weight(Point::ZERO), -1.0);
        assert_eq!(f.sum(), 0.0);

        let f = make_fp(Dim::Two, Point::d2(2, 1)).unwrap();
        assert_eq!(f.weight(Point::d2(2, 1)), 1.0);
        assert_eq!(f.weight(Point::ZERO), -1.0);

        assert!(make_fp(Dim::One, Point::ZERO).is_err());
    }

    #[test]
    fn validate_examples() {
        let f1 = make_fp(Dim::One, Point::d1(1)).unwrap();
        let r = validate_observable(&f1, 2.0, Dim::One, 0.5).unwrap();
        assert_eq!(r.zero_sum_residual, 0.0);
        assert_eq!(r.weighted_norm, 1.0);
        assert!(r.accepted);

        let sym = Observable::from_weights(
            Dim::One,
            vec![(Point::d1(2), 1.0), (Point::d1(-2), 1.0), (Point::ZERO, -2.0)],
        )
        .unwrap();
        let r = validate_observable(&sym, 2.0, Dim::One, 0.5).unwrap();
        assert_eq!(r.zero_sum_residual, 0.0);
        assert_eq!(r.weighted_norm, 4.0);

        let bad = Observable::from_weights(Dim::One, vec![(Point::d1(1), 1.0)]).unwrap();
        let r = validate_observable(&bad, 2.0, Dim::One, 0.5).unwrap();
        assert_eq!(r.zero_sum_residual, 1.0);
        assert!(!r.accepted);
        assert!(bad.ensure_centred().is_err());
    }

    #[test]
    fn centred_constructor() {
        let obs = Observable::centred(Dim::One, vec![(Point::d1(1), 3.0), (Point::d1(5), 1.0), (Point::ZERO, 0.5)])
            .unwrap();
        assert!(obs.sum().abs() <= ZERO_SUM_TOL);
        assert!(Observable::centred(Dim::One, vec![(Point::d1(1), 1.0)]).is_err());
        assert!(Observable::from_weights(Dim::One, vec![(Point::d1(1), 1.0), (Point::d1(1), -1.0)]).is_err());
        assert!(Observable::from_weights(Dim::One, vec![(Point::d2(1, 1), 1.0)]).is_err());
    }

    #[test]
    fn stable_params_validation() {
        assert!(StableParams::gaussian_1d(0.5).is_ok());
        assert!(StableParams::new(Dim::Two, 2.0, 0.5, 0.1, IDENTITY, SlowlyVarying::default()).is_err());
        assert!(StableParams::new(Dim::Two, 1.5, 0.5, 0.0, IDENTITY, SlowlyVarying::default()).is_err());
        assert!(StableParams::new(Dim::One, 1.5, 1.0, 5.0, IDENTITY, SlowlyVarying::default()).is_err());
        assert!(StableParams::new(Dim::Two, 2.0, 0.5, 0.0, [[1.0, 2.0], [2.0, 1.0]], SlowlyVarying::default()).is_err());
    }

    proptest! {
        #[test]
        fn make_fp_always_valid(x in -50i64..50, y in -50i64..50) {
            prop_assume!(x != 0 || y != 0);
            let f = make_fp(Dim::Two, Point::d2(x, y)).unwrap();
            let r = validate_observable(&f, 2.0, Dim::Two, 0.3).unwrap();
            prop_assert_eq!(r.zero_sum_residual, 0.0);
        }

        #[test]
        fn validation_is_permutation_invariant(
            ws in proptest::collection::vec(-5.0f64..5.0, 2..7),
            shift in 0usize..7,
        ) {
            let support: Vec<(Point, f64)> =
                ws.iter().enumerate().map(|(i, w)| (Point::d1(i as i64 * 3 - 4), *w)).collect();
            let obs = Observable::centred(Dim::One, support.clone()).unwrap();
            let mut rotated = obs.support().to_vec();
            let len = rotated.len();
            rotated.rotate_left(shift % len);
            let obs2 = Observable::from_weights(Dim::One, rotated).unwrap();
            let a = validate_observable(&obs, 1.5, Dim::One, 0.25).unwrap();
            let b = validate_observable(&obs2, 1.5, Dim::One, 0.25).unwrap();
            prop_assert!((a.weighted_norm - b.weighted_norm).abs() <= 1e-12 * a.weighted_norm.max(1.0));
            prop_assert!((a.zero_sum_residual - b.zero_sum_residual).abs() <= 1e-12);
            prop_assert!(a.accepted);
        }
    }
}
