//! Twisted transfer operators of finite chains: eigenstructure on a torus
//! grid, aperiodicity, stable-parameter recovery, local limit checks and the
//! normalising sequences.

use std::collections::VecDeque;
use std::f64::consts::PI;

use num_complex::Complex64;
use serde::Serialize;

use crate::driver::{distribution_fft, Driver, MarkovDriver};
use crate::error::{invalid, Result, ZdxError};
use crate::exec::Exec;
use crate::lattice::{Dim, Point, SlowlyVarying, StableParams, IDENTITY};
use crate::linalg::{self, CMat};
use crate::numeric::{bisect_increasing, convolve, gamma, integrate};

/// Modulus above which an eigenvalue counts as lying on the unit circle.
pub const UNIT_MODULUS_TOL: f64 = 1e-9;
/// Spectral gap defining the neighbourhood `U` of `u = 0`.
pub const DEFAULT_GAP: f64 = 0.05;

/// `P_u = λ_u Π_u + R_u` at one frequency.
#[derive(Debug, Clone)]
pub struct LocalSpectrum {
    pub u: Vec<f64>,
    pub lambda: Complex64,
    pub projector: CMat,
    pub remainder: CMat,
    /// Largest modulus among eigenvalues outside the dominant group.
    pub second_modulus: f64,
}

/// Eigenvalues sorted by decreasing modulus.
fn sorted_eigenvalues(m: &CMat) -> Result<Vec<Complex64>> {
    let mut ev = linalg::eigenvalues(m)?;
    ev.sort_by(|a, b| b.norm().partial_cmp(&a.norm()).unwrap());
    Ok(ev)
}

/// Number of eigenvalues of the plain transition matrix on the unit circle.
pub fn period(chain: &MarkovDriver) -> Result<usize> {
    let ev = sorted_eigenvalues(&chain.twisted(&[0.0, 0.0]))?;
    Ok(ev.iter().filter(|z| z.norm() >= 1.0 - UNIT_MODULUS_TOL).count())
}

/// Decomposition at `u` for a chain of period `m`, taking as `λ_u` the
/// eigenvalue closest to `reference` (the continuation of the branch).
pub fn local_spectrum(chain: &MarkovDriver, u: &[f64], m: usize, reference: Complex64) -> Result<LocalSpectrum> {
    let pu = chain.twisted(u);
    let ev = sorted_eigenvalues(&pu)?;
    let lambda = *ev
        .iter()
        .min_by(|a, b| (*a - reference).norm().partial_cmp(&(*b - reference).norm()).unwrap())
        .expect("non-empty spectrum");
    let n = pu.nrows();
    let mut projector = CMat::zeros(n, n);
    let mut group = Vec::with_capacity(m);
    for j in 0..m {
        let w = Complex64::from_polar(1.0, 2.0 * PI * j as f64 / m as f64);
        let target = lambda * w;
        let mu = *ev
            .iter()
            .min_by(|a, b| (*a - target).norm().partial_cmp(&(*b - target).norm()).unwrap())
            .unwrap();
        group.push(mu);
        projector += linalg::rank_one_projector(&pu, mu)? * w;
    }
    let mut rest = ev.clone();
    for g in &group {
        if let Some(i) = rest.iter().position(|z| (z - g).norm() < 1e-12 * (1.0 + g.norm())) {
            rest.remove(i);
        }
    }
    let second_modulus = rest.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let remainder = &pu - &projector * lambda;
    Ok(LocalSpectrum { u: u.to_vec(), lambda, projector, remainder, second_modulus })
}

/// Grid point `j` of an axis with `g` points: `−π + 2πj/g`.
pub fn grid_freq(j: usize, g: usize) -> f64 {
    -PI + 2.0 * PI * j as f64 / g as f64
}

#[derive(Debug, Clone, Serialize)]
pub struct GridEntry {
    pub u: Vec<f64>,
    /// Dominant branch value where the point lies in `U`.
    pub lambda: Option<(f64, f64)>,
    pub spectral_radius: f64,
    pub second_modulus: f64,
}

/// Eigenstructure of the twisted operators over a torus grid.
#[derive(Debug, Clone, Serialize)]
pub struct SpectralData {
    #[serde(skip)]
    pub chain: MarkovDriver,
    pub dim: Dim,
    pub grid_size: usize,
    pub period: usize,
    pub aperiodic: bool,
    /// Largest eigenvalue modulus over grid points `u ≠ 0`, with its location.
    pub max_offzero_modulus: f64,
    pub argmax_u: Vec<f64>,
    /// `sup` of the spectral radius of `R_u` over grid points in `U`.
    pub remainder_radius: f64,
    /// `sup` of the spectral radius of `P_u` over grid points outside `U`.
    pub outside_radius: f64,
    pub gap: f64,
    pub points_in_u: usize,
    /// Points where eigenvector continuation and largest modulus disagree.
    pub branch_switches: usize,
    pub entries: Vec<GridEntry>,
}

impl SpectralData {
    pub fn lambda_at(&self, idx: &[usize]) -> Option<Complex64> {
        let flat = if self.dim == Dim::Two { idx[1] * self.grid_size + idx[0] } else { idx[0] };
        self.entries[flat].lambda.map(|(re, im)| Complex64::new(re, im))
    }
}

/// Decomposes `P_u` on a `grid_size^d` torus grid and tracks the dominant
/// branch continuously from `u = 0` through the gap neighbourhood.
///
/// Fails with [`ZdxError::Periodic`] when some grid point `u ≠ 0` carries an
/// eigenvalue of modulus `≥ 1 − 1e−9`; [`spectral_scan`] reports the same
/// information without failing.
pub fn decompose(driver: &Driver, grid_size: usize) -> Result<SpectralData> {
    let data = spectral_scan(driver, grid_size, DEFAULT_GAP, Exec::default())?;
    if !data.aperiodic {
        return Err(ZdxError::Periodic { u: data.argmax_u.clone(), modulus: data.max_offzero_modulus });
    }
    Ok(data)
}

pub fn spectral_scan(driver: &Driver, grid_size: usize, gap: f64, exec: Exec) -> Result<SpectralData> {
    if grid_size < 16 || grid_size % 2 != 0 {
        return invalid("grid_size must be even and at least 16");
    }
    let chain = driver.to_markov();
    let dim = chain.dim();
    let g = grid_size;
    let npts = if dim == Dim::Two { g * g } else { g };
    let coords = |flat: usize| -> Vec<f64> {
        match dim {
            Dim::One => vec![grid_freq(flat, g)],
            Dim::Two => vec![grid_freq(flat % g, g), grid_freq(flat / g, g)],
        }
    };
    let m = period(&chain)?;
    let spectra: Vec<Result<Vec<Complex64>>> = exec.map(npts, |i| sorted_eigenvalues(&chain.twisted(&coords(i))));
    let spectra: Vec<Vec<Complex64>> = spectra.into_iter().collect::<Result<_>>()?;
    let zero = if dim == Dim::Two { (g / 2) * g + g / 2 } else { g / 2 };

    let mut max_off = 0.0f64;
    let mut argmax = vec![0.0; dim.get()];
    for (i, ev) in spectra.iter().enumerate() {
        if i == zero {
            continue;
        }
        let r = ev[0].norm();
        if r > max_off {
            max_off = r;
            argmax = coords(i);
        }
    }
    let aperiodic = max_off < 1.0 - UNIT_MODULUS_TOL;

    // Continuation through U by breadth-first search from u = 0.
    let mut lambda: Vec<Option<Complex64>> = vec![None; npts];
    let mut vectors: Vec<Option<linalg::CVec>> = vec![None; npts];
    let mut second = vec![0.0; npts];
    let mut switches = 0;
    lambda[zero] = Some(Complex64::new(1.0, 0.0));
    vectors[zero] = Some(linalg::eigenvectors(&chain.twisted(&coords(zero)), Complex64::new(1.0, 0.0)).0);
    second[zero] = spectra[zero].get(m).map_or(0.0, |z| z.norm());
    let mut queue = VecDeque::from([zero]);
    let neighbours = |i: usize| -> Vec<usize> {
        match dim {
            Dim::One => [i.wrapping_sub(1), i + 1].into_iter().filter(|&j| j < g).collect(),
            Dim::Two => {
                let (x, y) = (i % g, i / g);
                let mut v = Vec::new();
                if x > 0 {
                    v.push(i - 1);
                }
                if x + 1 < g {
                    v.push(i + 1);
                }
                if y > 0 {
                    v.push(i - g);
                }
                if y + 1 < g {
                    v.push(i + g);
                }
                v
            }
        }
    };
    while let Some(i) = queue.pop_front() {
        let r_ref = vectors[i].clone().expect("visited");
        for j in neighbours(i) {
            if lambda[j].is_some() {
                continue;
            }
            let ev = &spectra[j];
            // gap: dominant modulus minus the largest modulus outside the top group
            let top = ev[0].norm();
            let sec = ev.get(m).map_or(0.0, |z| z.norm());
            if top - sec <= gap {
                continue;
            }
            let pu = chain.twisted(&coords(j));
            let mut best = (0usize, -1.0);
            let mut vecs = Vec::new();
            for (k, z) in ev.iter().enumerate().take(m.max(1) + 1) {
                let (r, _) = linalg::eigenvectors(&pu, *z);
                let overlap = (r.adjoint() * &r_ref)[(0, 0)].norm();
                if overlap > best.1 + 1e-12 {
                    best = (k, overlap);
                }
                vecs.push(r);
            }
            if best.0 != 0 {
                switches += 1;
            }
            lambda[j] = Some(ev[best.0]);
            vectors[j] = Some(vecs.swap_remove(best.0));
            second[j] = sec;
            queue.push_back(j);
        }
    }

    let mut remainder_radius = 0.0f64;
    let mut outside_radius = 0.0f64;
    let mut entries = Vec::with_capacity(npts);
    for i in 0..npts {
        let rad = spectra[i][0].norm();
        let sec = spectra[i].get(m).map_or(0.0, |z| z.norm());
        match lambda[i] {
            Some(_) => remainder_radius = remainder_radius.max(second[i]),
            None => outside_radius = outside_radius.max(rad),
        }
        entries.push(GridEntry { u: coords(i), lambda: lambda[i].map(|z| (z.re, z.im)), spectral_radius: rad, second_modulus: sec });
    }
    Ok(SpectralData {
        chain,
        dim,
        grid_size: g,
        period: m,
        aperiodic,
        max_offzero_modulus: max_off,
        argmax_u: argmax,
        remainder_radius,
        outside_radius,
        gap,
        points_in_u: lambda.iter().filter(|l| l.is_some()).count(),
        branch_switches: switches,
        entries,
    })
}

/// Lattice criterion for aperiodicity: the subgroup of `Z^d` generated by
/// differences of cycle displacements of equal total length is all of `Z^d`.
pub fn lattice_aperiodic(driver: &Driver) -> bool {
    let chain = driver.to_markov();
    let d = chain.dim().get();
    let n = chain.n_states();
    // Tree potentials (length, displacement) from state 0.
    let mut pot: Vec<Option<Vec<i64>>> = vec![None; n];
    pot[0] = Some(vec![0; d + 1]);
    let mut queue = VecDeque::from([0usize]);
    let mut gens: Vec<Vec<i64>> = Vec::new();
    let edge = |s: usize| -> Vec<i64> {
        let f = chain.step()[s];
        let mut v = vec![1, f.x];
        if d == 2 {
            v.push(f.y);
        }
        v
    };
    while let Some(s) = queue.pop_front() {
        let ps = pot[s].clone().unwrap();
        for t in 0..n {
            if chain.transition()[s][t] <= 0.0 {
                continue;
            }
            let e = edge(t);
            let via: Vec<i64> = ps.iter().zip(&e).map(|(a, b)| a + b).collect();
            match &pot[t] {
                None => {
                    pot[t] = Some(via);
                    queue.push_back(t);
                }
                Some(pt) => gens.push(via.iter().zip(pt).map(|(a, b)| a - b).collect()),
            }
        }
    }
    // Every edge not in the tree closes a cycle; tree edges give zero vectors.
    let h = length_zero_subgroup(gens, d);
    integer_index(&h, d) == Some(1)
}

/// Generators of `{D : (0, D) ∈ ⟨gens⟩}` for vectors `(ℓ, D)`.
fn length_zero_subgroup(mut gens: Vec<Vec<i64>>, d: usize) -> Vec<Vec<i64>> {
    gens.retain(|g| g.iter().any(|&x| x != 0));
    // Euclid on the first column.
    loop {
        let nz: Vec<usize> = (0..gens.len()).filter(|&i| gens[i][0] != 0).collect();
        if nz.len() <= 1 {
            break;
        }
        let pivot = *nz.iter().min_by_key(|&&i| gens[i][0].abs()).unwrap();
        for &i in &nz {
            if i != pivot {
                let q = gens[i][0] / gens[pivot][0];
                let p = gens[pivot].clone();
                for (a, b) in gens[i].iter_mut().zip(&p) {
                    *a -= q * b;
                }
            }
        }
    }
    gens.into_iter().filter(|g| g[0] == 0).map(|g| g[1..=d].to_vec()).collect()
}

/// Index of the subgroup of `Z^d` generated by `vecs`, `None` if infinite.
fn integer_index(vecs: &[Vec<i64>], d: usize) -> Option<u64> {
    let mut rows: Vec<Vec<i64>> = vecs.iter().filter(|v| v.iter().any(|&x| x != 0)).cloned().collect();
    let mut index = 1u64;
    for col in 0..d {
        loop {
            let nz: Vec<usize> = (0..rows.len()).filter(|&i| rows[i][col] != 0).collect();
            if nz.len() <= 1 {
                break;
            }
            let pivot = *nz.iter().min_by_key(|&&i| rows[i][col].abs()).unwrap();
            for &i in &nz {
                if i != pivot {
                    let q = rows[i][col] / rows[pivot][col];
                    let p = rows[pivot].clone();
                    for (a, b) in rows[i].iter_mut().zip(&p) {
                        *a -= q * b;
                    }
                }
            }
        }
        let pos = rows.iter().position(|r| r[col] != 0)?;
        let r = rows.remove(pos);
        index *= r[col].unsigned_abs();
        rows.retain(|v| v.iter().any(|&x| x != 0));
    }
    Some(index)
}

/// Recovered stable parameters and the limit density at 0.
#[derive(Debug, Clone, Serialize)]
pub struct StableFit {
    pub params: StableParams,
    pub phi0: f64,
    /// Relative residual of the local fit of `−log λ_u`.
    pub fit_residual: f64,
    pub poor_fit: bool,
}

/// Dominant eigenvalue at a small frequency, continued from `λ_0 = 1`.
fn small_u_lambda(chain: &MarkovDriver, u: &[f64]) -> Result<Complex64> {
    let ev = linalg::eigenvalues(&chain.twisted(u))?;
    Ok(*ev
        .iter()
        .min_by(|a, b| (*a - 1.0).norm().partial_cmp(&(*b - 1.0).norm()).unwrap())
        .unwrap())
}

/// Least-squares fit of `−Re log λ_u` near 0 by a quadratic form plus quartic
/// corrections, identifying `ψ(u) = ϑ|√Σ u|²` in the finite-variance regime.
pub fn fit_stable_params(spec: &SpectralData) -> Result<StableFit> {
    if !spec.aperiodic {
        return Err(ZdxError::Periodic { u: spec.argmax_u.clone(), modulus: spec.max_offzero_modulus });
    }
    fit_chain(&spec.chain)
}

pub(crate) fn fit_chain(chain: &MarkovDriver) -> Result<StableFit> {
    let radii = [0.005, 0.01, 0.015, 0.02, 0.025, 0.03, 0.035, 0.04];
    match chain.dim() {
        Dim::One => {
            let mut rows = Vec::new();
            let mut ys = Vec::new();
            for &r in &radii {
                for u in [r, -r] {
                    let l = small_u_lambda(chain, &[u])?;
                    rows.push(vec![u * u, u.powi(4)]);
                    ys.push(-l.ln().re);
                }
            }
            let (coef, rel) = least_squares(&rows, &ys)?;
            let theta = coef[0];
            if !(theta > 0.0) {
                return Err(ZdxError::Numerical(format!("fitted theta {theta} is not positive")));
            }
            let params = StableParams::new(Dim::One, 2.0, theta, 0.0, IDENTITY, SlowlyVarying::default())?;
            let phi0 = StableDensity::new(params).at(&[0.0]);
            Ok(StableFit { params, phi0, fit_residual: rel, poor_fit: rel > 1e-3 })
        }
        Dim::Two => {
            let mut rows = Vec::new();
            let mut ys = Vec::new();
            for &r in &radii {
                for k in 0..12 {
                    let t = PI * k as f64 / 6.0 + 0.1;
                    let (a, b) = (r * t.cos(), r * t.sin());
                    let l = small_u_lambda(chain, &[a, b])?;
                    rows.push(vec![a * a, 2.0 * a * b, b * b, a.powi(4), a.powi(3) * b, a * a * b * b, a * b.powi(3), b.powi(4)]);
                    ys.push(-l.ln().re);
                }
            }
            let (c, rel) = least_squares(&rows, &ys)?;
            // ψ(u) = ϑ uᵀΣu with ϑ = 1/2 makes Σ the covariance of the limit.
            let sigma = [[2.0 * c[0], 2.0 * c[1]], [2.0 * c[1], 2.0 * c[2]]];
            let params = StableParams::new(Dim::Two, 2.0, 0.5, 0.0, sigma, SlowlyVarying::default())?;
            let phi0 = StableDensity::new(params).at(&[0.0, 0.0]);
            Ok(StableFit { params, phi0, fit_residual: rel, poor_fit: rel > 1e-3 })
        }
    }
}

fn least_squares(rows: &[Vec<f64>], ys: &[f64]) -> Result<(Vec<f64>, f64)> {
    let m = rows.len();
    let k = rows[0].len();
    let a = nalgebra::DMatrix::from_fn(m, k, |i, j| rows[i][j]);
    let b = nalgebra::DVector::from_column_slice(ys);
    let svd = a.clone().svd(true, true);
    let x = svd.solve(&b, 1e-300).map_err(|e| ZdxError::Numerical(e.to_string()))?;
    let resid = (&a * &x - &b).norm();
    Ok((x.iter().copied().collect(), resid / b.norm()))
}

/// Density `Φ` of the limit law with characteristic function `e^{−ψ}`.
#[derive(Debug, Clone, Copy)]
pub struct StableDensity {
    params: StableParams,
}

impl StableDensity {
    pub fn new(params: StableParams) -> Self {
        StableDensity { params }
    }

    pub fn at(&self, x: &[f64]) -> f64 {
        let p = &self.params;
        match p.dim {
            Dim::Two => {
                // α = 2: Gaussian with covariance 2ϑΣ.
                let det = p.det_sigma();
                let inv = [[p.sigma[1][1] / det, -p.sigma[0][1] / det], [-p.sigma[1][0] / det, p.sigma[0][0] / det]];
                let q = x[0] * x[0] * inv[0][0] + 2.0 * x[0] * x[1] * inv[0][1] + x[1] * x[1] * inv[1][1];
                (-q / (4.0 * p.theta)).exp() / (4.0 * PI * p.theta * det.sqrt())
            }
            Dim::One => {
                if p.alpha == 2.0 {
                    return (-x[0] * x[0] / (4.0 * p.theta)).exp() / (2.0 * (PI * p.theta).sqrt());
                }
                // (1/π) ∫_0^∞ e^{−ϑu^α} cos(ϑζu^α − u x) du
                let upper = (60.0 / p.theta).powf(1.0 / p.alpha);
                let f = |u: f64| {
                    let s = p.theta * u.powf(p.alpha);
                    (-s).exp() * (p.zeta * s - u * x[0]).cos()
                };
                integrate(f, 0.0, upper, 1e-13) / PI
            }
        }
    }
}

/// The normalisers `𝔞_n` (solving `𝔞^α = n L(𝔞)`) and `𝔄_n = √(Σ_{k≤n} 𝔞_k^{−d})`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Normalizer {
    pub alpha: f64,
    pub d: Dim,
    pub slowly_varying: SlowlyVarying,
}

impl Normalizer {
    pub fn new(alpha: f64, d: Dim, slowly_varying: SlowlyVarying) -> Self {
        Normalizer { alpha, d, slowly_varying }
    }

    pub fn from_params(p: &StableParams) -> Self {
        Normalizer::new(p.alpha, p.dim, p.slowly_varying)
    }

    /// Positive root of `𝔞^α − n L(𝔞)`, by bisection in `log 𝔞`.
    pub fn a(&self, n: f64) -> f64 {
        let f = |t: f64| {
            let a = t.exp();
            a.powf(self.alpha) - n * self.slowly_varying.eval(a)
        };
        let (mut lo, mut hi) = (-50.0f64, 1.0f64);
        while f(hi) < 0.0 {
            hi *= 2.0;
        }
        while f(lo) > 0.0 {
            lo *= 2.0;
        }
        bisect_increasing(f, lo, hi, 1e-15).exp()
    }

    /// `𝔄_k²` for `k = 0..=n`.
    pub fn big_a_sq_table(&self, n: usize) -> Vec<f64> {
        let d = self.d.get() as i32;
        let mut out = Vec::with_capacity(n + 1);
        let mut acc = 0.0;
        out.push(0.0);
        for k in 1..=n {
            acc += self.a(k as f64).powi(-d);
            out.push(acc);
        }
        out
    }

    pub fn big_a(&self, n: usize) -> f64 {
        self.big_a_sq_table(n)[n].sqrt()
    }
}

/// Local-limit comparison at one horizon.
#[derive(Debug, Clone, Serialize)]
pub struct LltReport {
    pub n: u64,
    pub a_n: f64,
    pub max_scaled_error: f64,
    /// Exact `μ(S_n = 0)` and the prediction `Φ(0)/𝔞_n^d`.
    pub p0_exact: f64,
    pub p0_predicted: f64,
    pub points: usize,
}

/// `max_{|a| ≤ 2𝔞_n} 𝔞_n^d |μ(S_n=a) − Φ(a/𝔞_n)/𝔞_n^d|` from the exact law of `S_n`.
pub fn llt_check(driver: &Driver, n: u64, box_radius: i64) -> Result<LltReport> {
    let chain = driver.to_markov();
    if !lattice_aperiodic(driver) {
        return invalid("local limit check needs an aperiodic driver");
    }
    let fit = fit_chain(&chain)?;
    let norm = Normalizer::from_params(&fit.params);
    let a_n = norm.a(n as f64);
    let dens = StableDensity::new(fit.params);
    let dist = distribution_fft(driver, n, Exec::default())?;
    let d = driver.dim().get() as i32;
    let reach = ((2.0 * a_n).floor() as i64).min(box_radius);
    let mut worst = 0.0f64;
    let mut points = 0;
    let ys: Vec<i64> = if driver.dim() == Dim::Two { (-reach..=reach).collect() } else { vec![0] };
    for &y in &ys {
        for x in -reach..=reach {
            let p = Point::d2(x, y);
            if p.norm() > 2.0 * a_n {
                continue;
            }
            let pred = match driver.dim() {
                Dim::One => dens.at(&[x as f64 / a_n]),
                Dim::Two => dens.at(&[x as f64 / a_n, y as f64 / a_n]),
            } / a_n.powi(d);
            worst = worst.max(a_n.powi(d) * (dist.get(p) - pred).abs());
            points += 1;
        }
    }
    Ok(LltReport {
        n,
        a_n,
        max_scaled_error: worst,
        p0_exact: dist.get(Point::ZERO),
        p0_predicted: fit.phi0 / a_n.powi(d),
        points,
    })
}

/// `Σ_{ℓ ∈ E_{q,n}} Π_j 𝔞_{ℓ_j}^{−d} / 𝔄_n^{2q}` with `𝔞_ℓ = ℓ^{1/α}` and
/// `E_{q,n} = {ℓ ∈ {1..n}^q : Σℓ_j ≤ n}`.
pub fn integrale_ratio(q: usize, alpha: f64, d: usize, n: usize) -> Result<f64> {
    if !(1..=3).contains(&q) {
        return invalid("q must be 1, 2 or 3");
    }
    if n == 0 {
        return invalid("n must be positive");
    }
    let w: Vec<f64> = (0..=n).map(|l| if l == 0 { 0.0 } else { (l as f64).powf(-(d as f64) / alpha) }).collect();
    // t[m] = Σ over compositions of total ≤ m with the current number of parts
    let mut t: Vec<f64> = w
        .iter()
        .scan(0.0, |acc, x| {
            *acc += x;
            Some(*acc)
        })
        .collect();
    let big_a_sq = t[n];
    for _ in 1..q {
        let c = convolve(&w, &t);
        t = c[..=n].to_vec();
    }
    Ok(t[n] / big_a_sq.powi(q as i32))
}

/// `Γ(1+γ)^q / Γ(1+qγ)` with `γ = (α−d)/α`, the limit of [`integrale_ratio`].
pub fn integrale_limit(q: usize, alpha: f64, d: usize) -> f64 {
    let g = (alpha - d as f64) / alpha;
    gamma(1.0 + g).powi(q as i32) / gamma(1.0 + q as f64 * g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::IidStep;
    use approx::assert_abs_diff_eq;

    fn lazy1() -> Driver {
        IidStep::lazy_1d().into()
    }

    #[test]
    fn periodic_walk_is_flagged() {
        let d: Driver = IidStep::simple_1d().into();
        match decompose(&d, 32) {
            Err(ZdxError::Periodic { u, modulus }) => {
                assert!((u[0].abs() - PI).abs() < 1e-12);
                assert!((modulus - 1.0).abs() < 1e-12);
            }
            other => panic!("expected periodic, got {other:?}"),
        }
        assert!(!lattice_aperiodic(&d));
    }

    #[test]
    fn fixtures_are_aperiodic() {
        for name in ["lazy1d", "lazy2d", "markov3"] {
            let d = Driver::fixture(name).unwrap();
            let s = decompose(&d, 32).unwrap();
            assert_eq!(s.period, 1, "{name}");
            assert!(s.aperiodic);
            assert!(lattice_aperiodic(&d), "{name}");
        }
    }

    #[test]
    fn lazy_branch_is_the_characteristic_function() {
        let s = decompose(&lazy1(), 64).unwrap();
        for e in &s.entries {
            if let Some((re, im)) = e.lambda {
                assert_abs_diff_eq!(re, 0.5 + 0.5 * e.u[0].cos(), epsilon = 1e-10);
                assert_abs_diff_eq!(im, 0.0, epsilon = 1e-10);
            }
        }
        assert_eq!(s.branch_switches, 0);
    }

    #[test]
    fn lattice_criterion_on_sublattice_walks() {
        // steps ±2 and 0 live on 2Z
        let d: Driver = IidStep::new(Dim::One, vec![(Point::d1(2), 0.25), (Point::d1(-2), 0.25), (Point::ZERO, 0.5)])
            .unwrap()
            .into();
        assert!(!lattice_aperiodic(&d));
        // diagonal steps in 2D generate the checkerboard sublattice
        let diag: Driver = IidStep::new(
            Dim::Two,
            vec![(Point::d2(1, 1), 0.25), (Point::d2(-1, -1), 0.25), (Point::d2(1, -1), 0.25), (Point::d2(-1, 1), 0.25)],
        )
        .unwrap()
        .into();
        assert!(!lattice_aperiodic(&diag));
        assert!(decompose(&diag, 16).is_err());
    }

    #[test]
    fn spectral_invariants_on_markov_fixture() {
        let chain = MarkovDriver::three_state();
        for &u in &[0.3, -0.3, 1.1, 2.0] {
            let s = local_spectrum(&chain, &[u], 1, Complex64::new(1.0, 0.0)).unwrap();
            let c = local_spectrum(&chain, &[-u], 1, Complex64::new(1.0, 0.0)).unwrap();
            assert!((s.lambda - c.lambda.conj()).norm() < 1e-10);
            let pi = &s.projector;
            assert!(linalg::max_abs(&(pi * pi - pi)) < 1e-8);
            assert!(linalg::max_abs(&(pi * &s.remainder)) < 1e-8);
            assert!(linalg::max_abs(&(&s.remainder * pi)) < 1e-8);
            let recon = pi * s.lambda + &s.remainder;
            assert!(linalg::max_abs(&(recon - chain.twisted(&[u]))) < 1e-8);
        }
    }

    #[test]
    fn fitted_parameters_of_lazy_walks() {
        let f = fit_chain(&lazy1().to_markov()).unwrap();
        assert_abs_diff_eq!(f.params.theta, 0.25, epsilon = 1e-9);
        assert_abs_diff_eq!(f.phi0, 1.0 / PI.sqrt(), epsilon = 1e-9);
        let d2: Driver = IidStep::lazy_2d().into();
        let f = fit_chain(&d2.to_markov()).unwrap();
        assert_abs_diff_eq!(f.params.sigma[0][0], 0.25, epsilon = 1e-9);
        assert_abs_diff_eq!(f.params.sigma[0][1], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(f.phi0, 2.0 / PI, epsilon = 1e-8);
        assert!(!f.poor_fit);
    }

    #[test]
    fn normalizer_forms() {
        let n = Normalizer::new(2.0, Dim::One, SlowlyVarying::Constant { c: 0.5 });
        assert_abs_diff_eq!(n.a(100.0), (50.0f64).sqrt(), epsilon = 1e-10);
        // 𝔄_n² / (2√n/σ) → 1 with 𝔞_n = σ√n
        let sigma = 0.5f64.sqrt();
        let t = n.big_a_sq_table(100_000);
        let ratio = |k: usize| t[k] / (2.0 * (k as f64).sqrt() / sigma);
        assert!((ratio(100_000) - 1.0).abs() < (ratio(1000) - 1.0).abs());
        assert!((ratio(100_000) - 1.0).abs() < 0.01);
        for w in t.windows(2).skip(1) {
            assert!(w[1] > w[0]);
        }
        // d = α = 2: 𝔄_n²/log n → 1
        let n2 = Normalizer::new(2.0, Dim::Two, SlowlyVarying::default());
        let t2 = n2.big_a_sq_table(100_000);
        let r = |k: usize| t2[k] / (k as f64).ln();
        assert!((r(100_000) - 1.0).abs() < (r(100) - 1.0).abs());
    }

    #[test]
    fn density_quadrature_matches_gaussian() {
        let p = StableParams::new(Dim::One, 2.0, 0.25, 0.0, IDENTITY, SlowlyVarying::default()).unwrap();
        let mut q = p;
        q.alpha = 1.999_999_999;
        for x in [0.0, 0.5, 1.3] {
            assert_abs_diff_eq!(StableDensity::new(p).at(&[x]), StableDensity::new(q).at(&[x]), epsilon = 1e-7);
        }
        // Cauchy: ψ = |u| gives 1/(π(1+x²))
        let c = StableParams::new(Dim::One, 1.0, 1.0, 0.0, IDENTITY, SlowlyVarying::default()).unwrap();
        assert_abs_diff_eq!(StableDensity::new(c).at(&[0.7]), 1.0 / (PI * 1.49), epsilon = 1e-9);
    }

    #[test]
    fn integrale_small_cases() {
        assert_eq!(integrale_ratio(1, 2.0, 1, 1000).unwrap(), 1.0);
        assert_eq!(integrale_ratio(1, 1.5, 1, 77).unwrap(), 1.0);
        // direct double sum for small n
        let n = 40;
        let w = |l: usize| (l as f64).powf(-0.5);
        let mut s = 0.0;
        for a in 1..=n {
            for b in 1..=n - a {
                s += w(a) * w(b);
            }
        }
        let big: f64 = (1..=n).map(w).sum();
        assert_abs_diff_eq!(integrale_ratio(2, 2.0, 1, n).unwrap(), s / (big * big), epsilon = 1e-12);
        assert_abs_diff_eq!(integrale_limit(2, 2.0, 1), PI / 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(integrale_limit(2, 2.0, 2), 1.0, epsilon = 1e-12);
    }
}
