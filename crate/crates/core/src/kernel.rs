//! The symmetrised potential kernel
//! `g(p) = Σ_{n≥0} (2μ(S_n=0) − μ(S_n=p) − μ(S_n=−p))`
//! by direct summation of occupation probabilities, by Fourier inversion of
//! the resolvent, and by its renewal asymptotics.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::driver::{Driver, Propagator};
use crate::error::{invalid, Result, ZdxError};
use crate::exec::Exec;
use crate::lattice::{Dim, Point, SlowlyVarying, StableParams};
use crate::linalg;
use crate::numeric::{gamma, integrate, linear_fit, TailExtrapolator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Series,
    Fourier,
    Asymptotic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelEstimate {
    pub p: Point,
    pub value: f64,
    pub method: Method,
    pub error_bound: f64,
    /// Number of series terms, or the finest grid size per axis.
    pub horizon: usize,
    /// Whether the requested tolerance was met.
    pub converged: bool,
}

/// Horizon control for series summation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesOptions {
    pub tol: f64,
    pub max_horizon: usize,
    /// Propagation window in standard deviations.
    pub cut: f64,
}

impl SeriesOptions {
    pub fn for_dim(d: Dim, tol: f64) -> Self {
        match d {
            Dim::One => SeriesOptions { tol, max_horizon: 1 << 20, cut: 8.0 },
            Dim::Two => SeriesOptions { tol, max_horizon: 1 << 14, cut: 7.0 },
        }
    }
}

/// Outcome of summing `Σ_k Σ_i c_i μ(S_k = x_i)` for one functional.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeriesSum {
    pub value: f64,
    pub error_bound: f64,
    pub horizon: usize,
    pub beta: f64,
    pub converged: bool,
}

/// Sums several linear functionals of the occupation law along one
/// propagation. Stops at the first power-of-two horizon where every
/// functional's extrapolation error is below `tol`, or at `max_horizon`.
pub fn series_sums(driver: &Driver, functionals: &[Vec<(Point, f64)>], opts: SeriesOptions) -> Result<Vec<SeriesSum>> {
    Ok(run_series(driver, functionals, opts)?.0)
}

/// A single functional's sum together with its terms `k = 0, 1, …`.
pub fn series_terms(driver: &Driver, functional: &[(Point, f64)], opts: SeriesOptions) -> Result<(SeriesSum, Vec<f64>)> {
    let (mut sums, mut acc) = run_series(driver, &[functional.to_vec()], opts)?;
    Ok((sums.remove(0), std::mem::take(&mut acc[0].terms)))
}

/// Several functionals' sums and terms from one propagation.
pub fn series_terms_many(driver: &Driver, functionals: &[Vec<(Point, f64)>], opts: SeriesOptions) -> Result<Vec<(SeriesSum, Vec<f64>)>> {
    let (sums, acc) = run_series(driver, functionals, opts)?;
    Ok(sums.into_iter().zip(acc).map(|(s, a)| (s, a.terms)).collect())
}

fn run_series(
    driver: &Driver,
    functionals: &[Vec<(Point, f64)>],
    opts: SeriesOptions,
) -> Result<(Vec<SeriesSum>, Vec<TailExtrapolator>)> {
    if !(opts.tol > 0.0) {
        return invalid("tol must be positive");
    }
    let reach = functionals.iter().flatten().map(|(p, _)| p.norm_inf()).max().unwrap_or(0);
    let spread = spread_of(driver);
    let radius = ((opts.cut * spread * (opts.max_horizon as f64).sqrt()).ceil() as i64 + driver.max_step() + 1)
        .max(reach)
        .min(opts.max_horizon as i64 * driver.max_step() + reach);
    let mut prop = Propagator::new(driver, radius, Some(opts.cut), Exec::default())?;
    let mut acc: Vec<TailExtrapolator> = vec![TailExtrapolator::default(); functionals.len()];
    let mut k = 0usize;
    let mut next_check = 64usize;
    loop {
        for (f, a) in functionals.iter().zip(acc.iter_mut()) {
            a.push(f.iter().map(|(p, c)| c * prop.at(*p)).sum());
        }
        if k + 1 == next_check || k + 1 >= opts.max_horizon {
            let ests: Vec<_> = acc.iter().map(|a| a.estimate()).collect();
            let done = ests.iter().all(|e| e.is_some_and(|e| e.error_bound <= opts.tol));
            if done || k + 1 >= opts.max_horizon {
                let sums = acc
                    .iter()
                    .zip(ests)
                    .map(|(a, e)| match e {
                        Some(e) => Ok(SeriesSum {
                            value: e.value,
                            error_bound: e.error_bound,
                            horizon: e.horizon + 1,
                            beta: e.beta,
                            converged: e.error_bound <= opts.tol,
                        }),
                        None => exact_or_divergent(a),
                    })
                    .collect::<Result<Vec<_>>>()?;
                return Ok((sums, acc));
            }
            next_check *= 2;
        }
        prop.advance();
        k += 1;
    }
}

/// A functional whose terms vanish identically (e.g. `p = 0`) sums to 0
/// exactly; otherwise the terms failed to show summable decay.
fn exact_or_divergent(a: &TailExtrapolator) -> Result<SeriesSum> {
    let n = a.len();
    let tail_zero = a.terms[n / 2..].iter().all(|t| *t == 0.0);
    if tail_zero {
        return Ok(SeriesSum { value: a.partial(n - 1), error_bound: 0.0, horizon: n, beta: f64::INFINITY, converged: true });
    }
    Err(ZdxError::NoConvergence { terms: n, reason: "terms do not decay faster than k^-1.05 over the last decade".into() })
}

fn spread_of(driver: &Driver) -> f64 {
    let m = driver.to_markov();
    m.stationary()
        .iter()
        .zip(m.step())
        .map(|(w, p)| w * (p.x * p.x).max(p.y * p.y) as f64)
        .sum::<f64>()
        .sqrt()
        .max(0.1)
}

fn g_functional(p: Point) -> Vec<(Point, f64)> {
    vec![(Point::ZERO, 2.0), (p, -1.0), (-p, -1.0)]
}

/// `g(p)` by partial sums with a fitted power-law tail.
pub fn g_series(driver: &Driver, p: Point, tol: f64) -> Result<KernelEstimate> {
    Ok(g_series_many(driver, &[p], SeriesOptions::for_dim(driver.dim(), tol))?[0])
}

/// `g` at several points from a single propagation.
pub fn g_series_many(driver: &Driver, ps: &[Point], opts: SeriesOptions) -> Result<Vec<KernelEstimate>> {
    check_points(driver, ps)?;
    let funcs: Vec<_> = ps.iter().map(|&p| if p.is_zero() { Vec::new() } else { g_functional(p) }).collect();
    let sums = series_sums(driver, &funcs, opts)?;
    Ok(ps
        .iter()
        .zip(sums)
        .map(|(&p, s)| KernelEstimate {
            p,
            value: if p.is_zero() { 0.0 } else { s.value },
            method: Method::Series,
            error_bound: if p.is_zero() { 0.0 } else { s.error_bound },
            horizon: s.horizon,
            converged: s.converged,
        })
        .collect())
}

fn check_points(driver: &Driver, ps: &[Point]) -> Result<()> {
    if let Some(p) = ps.iter().find(|p| !p.fits(driver.dim())) {
        return invalid(format!("point {p} does not fit d={}", driver.dim().get()));
    }
    Ok(())
}

/// `Ψ(u) = Re μ(I − P_u)^{−1} 1`; for i.i.d. walks `Re 1/(1 − φ(u))`.
pub fn psi_resolvent(driver: &Driver, u: &[f64]) -> Result<f64> {
    match driver {
        Driver::Iid(s) => Ok((1.0 / (Complex64::new(1.0, 0.0) - s.char_fn(u))).re),
        Driver::Markov(m) => {
            let n = m.n_states();
            let a = linalg::CMat::identity(n, n) - m.twisted(u);
            let ones = linalg::CVec::from_element(n, Complex64::new(1.0, 0.0));
            let x = linalg::solve(&a, &ones)?;
            Ok(m.stationary().iter().zip(x.iter()).map(|(w, z)| w * z.re).sum())
        }
    }
}

/// Midpoint sums of `2/(2π)^d ∫ (1 − cos⟨u,p⟩) Ψ(u) du` on a `k^d` grid for
/// every `p`.
fn midpoint_sums(driver: &Driver, ps: &[Point], k: usize, exec: Exec) -> Result<Vec<f64>> {
    let h = 2.0 * PI / k as f64;
    let node = |j: usize| -PI + (j as f64 + 0.5) * h;
    let d = driver.dim();
    let rows = if d == Dim::Two { k } else { 1 };
    let per_row: Vec<Result<Vec<f64>>> = exec.map(rows, |r| {
        let mut acc = vec![0.0; ps.len()];
        for j in 0..k {
            let u = match d {
                Dim::One => vec![node(j)],
                Dim::Two => vec![node(j), node(r)],
            };
            let psi = psi_resolvent(driver, &u)?;
            for (a, p) in acc.iter_mut().zip(ps) {
                *a += (1.0 - p.dot(&u).cos()) * psi;
            }
        }
        Ok(acc)
    });
    let mut total = vec![0.0; ps.len()];
    for row in per_row {
        for (t, v) in total.iter_mut().zip(row?) {
            *t += v;
        }
    }
    let scale = 2.0 * (h / (2.0 * PI)).powi(d.get() as i32);
    Ok(total.into_iter().map(|t| t * scale).collect())
}

/// `g(p)` by midpoint quadrature of the resolvent on grids `K`, `2K`, `4K`
/// with Richardson extrapolation in `h²`.
pub fn g_fourier(driver: &Driver, p: Point, grid_size: usize) -> Result<KernelEstimate> {
    Ok(g_fourier_many(driver, &[p], grid_size)?[0])
}

pub fn g_fourier_many(driver: &Driver, ps: &[Point], grid_size: usize) -> Result<Vec<KernelEstimate>> {
    check_points(driver, ps)?;
    if grid_size < 8 {
        return invalid("grid_size must be at least 8");
    }
    if driver.dim() == Dim::Two && grid_size > 1024 {
        return Err(ZdxError::MemoryGuard(format!("2D grid {grid_size} x 4 refinements is too large")));
    }
    let exec = Exec::default();
    let i1 = midpoint_sums(driver, ps, grid_size, exec)?;
    let i2 = midpoint_sums(driver, ps, 2 * grid_size, exec)?;
    let i4 = midpoint_sums(driver, ps, 4 * grid_size, exec)?;
    let mut out = Vec::with_capacity(ps.len());
    for (idx, &p) in ps.iter().enumerate() {
        if p.is_zero() {
            out.push(KernelEstimate { p, value: 0.0, method: Method::Fourier, error_bound: 0.0, horizon: 4 * grid_size, converged: true });
            continue;
        }
        let r1 = (4.0 * i2[idx] - i1[idx]) / 3.0;
        let r2 = (4.0 * i4[idx] - i2[idx]) / 3.0;
        let floor = 1e-13 * r2.abs().max(1.0);
        let error_bound = (r2 - r1).abs() + floor;
        let raw_step = (i4[idx] - i2[idx]).abs();
        // Two extrapolants disagreeing by far more than the raw refinement
        // step means the grid is not yet in the h² regime.
        if (r2 - r1).abs() > 10.0 * raw_step.max(floor) {
            return Err(ZdxError::GridTooCoarse {
                detail: format!("p = {p}: raw refinement {raw_step:e}, extrapolants differ by {:e}", (r2 - r1).abs()),
            });
        }
        out.push(KernelEstimate { p, value: r2, method: Method::Fourier, error_bound, horizon: 4 * grid_size, converged: true });
    }
    Ok(out)
}

/// `I(x) = ∫_x^{x0} dt / (t L(1/t))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenewalParams {
    pub x0: f64,
    pub slowly_varying: SlowlyVarying,
}

impl RenewalParams {
    pub fn new(x0: f64, slowly_varying: SlowlyVarying) -> Result<Self> {
        if !(x0 > 0.0) {
            return invalid("x0 must be positive");
        }
        Ok(RenewalParams { x0, slowly_varying })
    }

    pub fn i(&self, x: f64) -> f64 {
        match self.slowly_varying {
            SlowlyVarying::Constant { c } => (self.x0 / x).ln() / c,
            // substitute t = e^s
            _ => integrate(|s| 1.0 / self.slowly_varying.eval((-s).exp()), x.ln(), self.x0.ln(), 1e-12),
        }
    }
}

/// Leading-order asymptotics of `g(p)` for the three regimes.
pub fn g_asymptotic(params: &StableParams, renewal: &RenewalParams, p: Point) -> Result<KernelEstimate> {
    params.validate()?;
    if !p.fits(params.dim) {
        return invalid(format!("point {p} does not fit d={}", params.dim.get()));
    }
    let r = p.norm();
    let (a, th, z) = (params.alpha, params.theta, params.zeta);
    let value = match params.dim {
        Dim::One if a > 1.0 => {
            r.powf(a - 1.0) / (th * (1.0 + z * z) * gamma(a) * ((a - 1.0) * PI / 2.0).sin() * params.slowly_varying.eval(r))
        }
        Dim::One => 2.0 / (PI * th * (1.0 + z * z)) * renewal.i(1.0 / r),
        Dim::Two => {
            if (th - 0.5).abs() > 1e-12 {
                return invalid("d = 2 asymptotics assume theta = 1/2");
            }
            2.0 / (PI * params.det_sigma().sqrt()) * renewal.i(1.0 / r)
        }
    };
    if (params.dim == Dim::One && a == 1.0 || params.dim == Dim::Two) && renewal.slowly_varying != params.slowly_varying {
        return invalid("renewal slowly varying function must match the stable parameters");
    }
    Ok(KernelEstimate { p, value, method: Method::Asymptotic, error_bound: f64::NAN, horizon: 0, converged: true })
}

/// The one-sided potential kernel `a(x) = Σ_n (μ(S_n=0) − μ(S_n=x))` of an
/// i.i.d. walk: exact series values on `|x|_∞ ≤ r0` and the far-field form
/// `|x|/σ² + κ_±` (d = 1) or `ln(xᵀC⁻¹x)/(2π√det C) + κ` (d = 2) beyond.
#[derive(Debug, Clone, Serialize)]
pub struct PotentialKernel {
    pub dim: Dim,
    pub r0: i64,
    table: Vec<f64>,
    pub error_bound: f64,
    cov: [[f64; 2]; 2],
    /// `κ` for `x < 0` and `x > 0` in d = 1; both equal in d = 2.
    pub kappa: (f64, f64),
}

impl PotentialKernel {
    pub fn build(driver: &Driver, r0: i64, opts: SeriesOptions) -> Result<Self> {
        let step = driver.as_iid().ok_or_else(|| ZdxError::Invalid("potential kernel needs an i.i.d. driver".into()))?;
        let dim = step.dim();
        if r0 < 3 {
            return invalid("r0 must be at least 3");
        }
        let pts = box_points(dim, r0);
        let funcs: Vec<_> = pts.iter().map(|&x| if x.is_zero() { Vec::new() } else { vec![(Point::ZERO, 1.0), (x, -1.0)] }).collect();
        let sums = series_sums(driver, &funcs, opts)?;
        let error_bound = sums.iter().map(|s| s.error_bound).fold(0.0, f64::max);
        let table: Vec<f64> = pts.iter().zip(&sums).map(|(x, s)| if x.is_zero() { 0.0 } else { s.value }).collect();
        let cov = step.covariance();
        let mut k = PotentialKernel { dim, r0, table, error_bound, cov, kappa: (0.0, 0.0) };
        // κ from the outer shell of the table
        match dim {
            Dim::One => {
                let lo: Vec<f64> = (r0 - 2..=r0).map(|x| k.exact(Point::d1(-x)) - k.leading(Point::d1(-x))).collect();
                let hi: Vec<f64> = (r0 - 2..=r0).map(|x| k.exact(Point::d1(x)) - k.leading(Point::d1(x))).collect();
                k.kappa = (lo.iter().sum::<f64>() / 3.0, hi.iter().sum::<f64>() / 3.0);
            }
            Dim::Two => {
                let shell: Vec<f64> = box_points(dim, r0)
                    .into_iter()
                    .filter(|x| x.norm_inf() >= r0 - 1)
                    .map(|x| k.exact(x) - k.leading(x))
                    .collect();
                let kappa = shell.iter().sum::<f64>() / shell.len() as f64;
                k.kappa = (kappa, kappa);
            }
        }
        Ok(k)
    }

    fn exact(&self, x: Point) -> f64 {
        let r = self.r0;
        let side = (2 * r + 1) as usize;
        let idx = match self.dim {
            Dim::One => (x.x + r) as usize,
            Dim::Two => (x.y + r) as usize * side + (x.x + r) as usize,
        };
        self.table[idx]
    }

    fn leading(&self, x: Point) -> f64 {
        let c = self.cov;
        match self.dim {
            Dim::One => x.x.abs() as f64 / c[0][0],
            Dim::Two => {
                let det = c[0][0] * c[1][1] - c[0][1] * c[1][0];
                let (a, b) = (x.x as f64, x.y as f64);
                let q = (a * a * c[1][1] - 2.0 * a * b * c[0][1] + b * b * c[0][0]) / det;
                q.ln() / (2.0 * PI * det.sqrt())
            }
        }
    }

    pub fn a(&self, x: Point) -> f64 {
        if x.is_zero() {
            return 0.0;
        }
        if x.norm_inf() <= self.r0 {
            return self.exact(x);
        }
        let kappa = if self.dim == Dim::One && x.x < 0 { self.kappa.0 } else { self.kappa.1 };
        self.leading(x) + kappa
    }

    /// Green function of the walk killed at 0: expected visits to `p` before
    /// hitting 0, started from `x`.
    pub fn green_killed(&self, x: Point, p: Point) -> f64 {
        self.a(x) + self.a(-p) - self.a(x - p)
    }

    /// `P_x(hit p before 0)` for a symmetric walk.
    pub fn hit_before_zero(&self, x: Point, p: Point) -> f64 {
        ((self.a(p) + self.a(x) - self.a(x - p)) / (2.0 * self.a(p))).clamp(0.0, 1.0)
    }
}

fn box_points(dim: Dim, r: i64) -> Vec<Point> {
    match dim {
        Dim::One => (-r..=r).map(Point::d1).collect(),
        Dim::Two => (-r..=r).flat_map(|y| (-r..=r).map(move |x| Point::d2(x, y))).collect(),
    }
}

/// Fits `g(p) ≈ c_1 log|p| + c_0` over the given points; used to compare
/// the leading coefficient with the asymptotic prediction.
pub fn log_fit(points: &[(f64, f64)]) -> (f64, f64) {
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    let (c0, c1) = linear_fit(&xs, &ys);
    (c1, c0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::{IidStep, MarkovDriver};
    use crate::lattice::IDENTITY;
    use approx::assert_abs_diff_eq;

    #[test]
    fn series_on_lazy_1d() {
        let d: Driver = IidStep::lazy_1d().into();
        let g = g_series(&d, Point::d1(1), 1e-5).unwrap();
        assert!((g.value - 4.0).abs() < 1e-4, "{g:?}");
        assert!((g.value - 4.0).abs() <= g.error_bound.max(1e-6) * 10.0);
        let z = g_series(&d, Point::ZERO, 1e-5).unwrap();
        assert_eq!(z.value, 0.0);
    }

    #[test]
    fn series_is_symmetric_in_p() {
        let d: Driver = MarkovDriver::three_state().into();
        let opts = SeriesOptions { tol: 1e-3, max_horizon: 1 << 14, cut: 8.0 };
        let g = g_series_many(&d, &[Point::d1(2), Point::d1(-2)], opts).unwrap();
        assert!((g[0].value - g[1].value).abs() < 1e-12 * g[0].value);
    }

    #[test]
    fn fourier_on_lazy_1d_is_exact() {
        let d: Driver = IidStep::lazy_1d().into();
        for p in 1..=5 {
            let g = g_fourier(&d, Point::d1(p), 16).unwrap();
            assert_abs_diff_eq!(g.value, 4.0 * p as f64, epsilon = 1e-10);
        }
        assert_eq!(g_fourier(&d, Point::ZERO, 16).unwrap().value, 0.0);
    }

    #[test]
    fn asymptotic_examples() {
        let p1 = StableParams::gaussian_1d(0.5).unwrap();
        let r = RenewalParams::new(1.0, SlowlyVarying::default()).unwrap();
        assert_abs_diff_eq!(g_asymptotic(&p1, &r, Point::d1(10)).unwrap().value, 40.0, epsilon = 1e-12);
        let p2 = StableParams::gaussian_2d([[0.25, 0.0], [0.0, 0.25]]).unwrap();
        let e3 = 3.0f64.exp();
        // |p| = e³ exactly is not a lattice point; evaluate the formula through I directly
        assert_abs_diff_eq!(2.0 / (PI * 0.25) * r.i(1.0 / e3), 24.0 / PI, epsilon = 1e-12);
        let g = g_asymptotic(&p2, &r, Point::d2(20, 0)).unwrap();
        assert_abs_diff_eq!(g.value, 8.0 / PI * 20f64.ln(), epsilon = 1e-12);
        let p3 = StableParams::new(Dim::One, 1.5, 1.0, 0.0, IDENTITY, SlowlyVarying::default()).unwrap();
        let expected = 4.0 / ((PI.sqrt() / 2.0) * (2f64.sqrt() / 2.0));
        assert_abs_diff_eq!(g_asymptotic(&p3, &r, Point::d1(16)).unwrap().value, expected, epsilon = 1e-10);
        assert_abs_diff_eq!(expected, 6.383, epsilon = 1e-3);
    }

    #[test]
    fn renewal_integral() {
        let r = RenewalParams::new(0.5, SlowlyVarying::Logarithmic).unwrap();
        assert_abs_diff_eq!(r.i(0.5), 0.0, epsilon = 1e-14);
        assert!(r.i(0.01) > r.i(0.1));
        // for t < 1/e, L(1/t) = ln(1/t): ∫ dt/(t ln(1/t)) = ln ln(1/x) − ln ln(1/x1)
        let a = r.i(1e-6) - r.i(1e-3);
        assert_abs_diff_eq!(a, (1e6f64.ln()).ln() - (1e3f64.ln()).ln(), epsilon = 1e-9);
        let c = RenewalParams::new(1.0, SlowlyVarying::Constant { c: 2.0 }).unwrap();
        assert_abs_diff_eq!(c.i(0.1), 10f64.ln() / 2.0, epsilon = 1e-14);
    }

    #[test]
    fn potential_kernel_lazy_1d_is_linear() {
        let d: Driver = IidStep::lazy_1d().into();
        let k = PotentialKernel::build(&d, 6, SeriesOptions { tol: 1e-7, max_horizon: 1 << 18, cut: 8.0 }).unwrap();
        for x in [-30, -6, -1, 1, 4, 6, 40] {
            assert!((k.a(Point::d1(x)) - 2.0 * (x as f64).abs()).abs() < 1e-4, "{x}");
        }
        // skip-free: from 2, the walk must pass 1 before 0, so P_2(hit 1 first) = 1
        assert_abs_diff_eq!(k.hit_before_zero(Point::d1(2), Point::d1(1)), 1.0, epsilon = 1e-4);
        assert_abs_diff_eq!(k.hit_before_zero(Point::d1(-1), Point::d1(1)), 0.0, epsilon = 1e-4);
    }
}
