//! Mittag-Leffler laws `ML(γ)`, their Gaussian mixtures `MLGM(γ)` and the
//! generalised CLT experiment for Birkhoff sums of extension observables.
//!
//! `𝒴 ~ MLGM(γ)` is `√Y·Z` with `Y ~ ML(γ)` and `Z` standard normal. For a
//! walk with index `α` in dimension `d`, `γ = 1 − d/α`, and
//! `𝒵_n(β)/(√Φ(0)·𝔄_n)` converges to `σ_GK·𝒴`.

use std::f64::consts::PI;

use rand_distr::{Distribution as _, Exp1, StandardNormal};
use serde::Serialize;

use crate::driver::{return_mass, Driver, IidStep, Propagator, Walker};
use crate::error::{Result, ZdxError};
use crate::exec::{Batches, Exec};
use crate::greenkubo::gk_extension;
use crate::lattice::{Dim, Observable, Point};
use crate::numeric::gamma;
use crate::rng::{open01, Stream, StreamFactory};
use crate::spectral::{fit_chain, Normalizer, StableFit};
use crate::stats::{MeanSe, PowerSums};

/// `𝔼[𝒴^m]` for `𝒴 ~ MLGM(γ)`.
pub fn mlgm_moment(gamma_: f64, m: u32) -> f64 {
    if m % 2 == 1 {
        return 0.0;
    }
    let h = (m / 2) as f64;
    factorial(m) * gamma(1.0 + gamma_).powf(h) / (2f64.powf(h) * gamma(1.0 + h * gamma_))
}

/// `𝔼[Y^m]` for `Y ~ ML(γ)`.
pub fn ml_moment(gamma_: f64, m: u32) -> f64 {
    factorial(m) * gamma(1.0 + gamma_).powi(m as i32) / gamma(1.0 + m as f64 * gamma_)
}

fn factorial(m: u32) -> f64 {
    (1..=m).map(f64::from).product()
}

/// One draw of `Y ~ ML(γ)`, `γ ∈ [0, 1]`.
///
/// For `0 < γ < 1`, `Y = Γ(1+γ)·S^{−γ}` with `S` positive `γ`-stable
/// (`𝔼 e^{−sS} = e^{−s^γ}`), drawn by the one-sided Chambers-Mallows-Stuck
/// (Kanter) transform `S = (A(U)/E)^{(1−γ)/γ}`.
pub fn sample_ml(gamma_: f64, rng: &mut Stream) -> f64 {
    let e: f64 = Exp1.sample(rng);
    if gamma_ <= 0.0 {
        return e;
    }
    if gamma_ >= 1.0 {
        return 1.0;
    }
    let u = open01(rng);
    let g = gamma_;
    let a = (g * PI * u).sin().powf(g / (1.0 - g)) * ((1.0 - g) * PI * u).sin() / (PI * u).sin().powf(1.0 / (1.0 - g));
    gamma(1.0 + g) * (e / a).powf(1.0 - g)
}

/// One draw of `√Y·Z`.
pub fn sample_mlgm(gamma_: f64, rng: &mut Stream) -> f64 {
    let y = sample_ml(gamma_, rng);
    let z: f64 = StandardNormal.sample(rng);
    y.sqrt() * z
}

/// The law `MLGM(γ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MlgmLaw {
    pub gamma: f64,
}

impl MlgmLaw {
    pub fn new(gamma_: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma_) {
            return Err(ZdxError::Invalid(format!("gamma = {gamma_} is outside [0, 1]")));
        }
        Ok(MlgmLaw { gamma: gamma_ })
    }

    /// `γ = 1 − d/α`.
    pub fn for_walk(alpha: f64, d: Dim) -> Result<Self> {
        MlgmLaw::new(1.0 - d.get() as f64 / alpha)
    }

    pub fn moment(&self, m: u32) -> f64 {
        mlgm_moment(self.gamma, m)
    }

    pub fn sample(&self, rng: &mut Stream) -> f64 {
        sample_mlgm(self.gamma, rng)
    }
}

/// Empirical moments of `n` draws, for the sampler checks.
pub fn sampler_moments(gamma_: f64, mixture: bool, n: u64, seed: u64, max_m: usize) -> Vec<MeanSe> {
    let streams = StreamFactory::new(seed, if mixture { "mlgm" } else { "ml" });
    let b = Batches::new(n, 10_000);
    let parts = Exec::default().map(b.count(), |i| {
        let mut rng = streams.stream(i as u64);
        let mut ps = PowerSums::new(2 * max_m);
        for _ in 0..b.len(i) {
            ps.add(if mixture { sample_mlgm(gamma_, &mut rng) } else { sample_ml(gamma_, &mut rng) });
        }
        ps
    });
    let mut acc = PowerSums::new(2 * max_m);
    for p in &parts {
        acc.merge(p);
    }
    (1..=max_m).map(|m| acc.moment(m)).collect()
}

// ---------------------------------------------------------------------------
// Birkhoff sums

/// `𝒵_n(β) = Σ_{k=1}^n β(S_k)` over independent trajectories, with the
/// primary normaliser `√Φ(0)·𝔄_n` and, where affordable, `√Σ_{k<n} μ(S_k = 0)`.
#[derive(Debug, Clone, Serialize)]
pub struct BirkhoffSample {
    pub n: usize,
    #[serde(skip)]
    pub values: Vec<f64>,
    pub normalization: f64,
    pub alt_normalization: Option<f64>,
}

/// Largest horizon for which the exact return mass is computed in d = 2.
const RETURN_MASS_2D: usize = 512;
const TRAJ_BATCH: u64 = 1000;

/// Simulates `n_traj` trajectories up to `max(n_list)` and records `𝒵_n` at
/// every `n` in `n_list` along the same paths.
pub fn birkhoff_samples(driver: &Driver, obs: &Observable, fit: &StableFit, n_list: &[usize], n_traj: u64, seed: u64) -> Result<Vec<BirkhoffSample>> {
    check_horizons(n_list)?;
    if obs.dim() != driver.dim() {
        return Err(ZdxError::Invalid("observable and driver dimensions differ".into()));
    }
    let n_max = *n_list.last().unwrap();
    let streams = StreamFactory::new(seed, "birkhoff");
    let b = Batches::new(n_traj, TRAJ_BATCH);
    let support: Vec<(Point, f64)> = obs.support().to_vec();
    let parts = Exec::default().map(b.count(), |i| {
        let mut rng = streams.stream(i as u64);
        let len = b.len(i) as usize;
        let mut out = vec![Vec::with_capacity(len); n_list.len()];
        for _ in 0..len {
            let mut w = Walker::new(driver, &mut rng);
            let mut z = 0.0;
            let mut next = 0;
            for k in 1..=n_max {
                w.step(&mut rng);
                if let Some(&(_, v)) = support.iter().find(|(q, _)| *q == w.pos) {
                    z += v;
                }
                if k == n_list[next] {
                    out[next].push(z);
                    next += 1;
                }
            }
        }
        out
    });
    let norm = Normalizer::from_params(&fit.params);
    let big_a = norm.big_a_sq_table(n_max);
    let mut samples = Vec::with_capacity(n_list.len());
    for (j, &n) in n_list.iter().enumerate() {
        let values: Vec<f64> = parts.iter().flat_map(|p| p[j].iter().copied()).collect();
        let alt = if driver.dim() == Dim::One || n <= RETURN_MASS_2D { Some(return_mass(driver, n)?.sqrt()) } else { None };
        samples.push(BirkhoffSample { n, values, normalization: (fit.phi0 * big_a[n]).sqrt(), alt_normalization: alt });
    }
    Ok(samples)
}

fn check_horizons(n_list: &[usize]) -> Result<()> {
    if n_list.is_empty() || n_list[0] == 0 || n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ZdxError::Invalid("horizons must be positive and strictly increasing".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct CltRow {
    pub n: usize,
    pub normalization: f64,
    pub alt_normalization: Option<f64>,
    /// `return_mass(n)/(Φ(0)𝔄_n²)`.
    pub normalization_ratio: Option<f64>,
    /// `𝔼[(𝒵_n/(√Φ(0)𝔄_n))^m]`, `m = 1..4`.
    pub moments: Vec<MeanSe>,
    /// `σ_GK^m·𝔼[𝒴^m]`.
    pub limits: Vec<f64>,
    /// Even `m`: empirical over limit; odd `m`: the empirical moment itself.
    pub ratios: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CltReport {
    pub sigma_gk2: f64,
    pub gamma: f64,
    pub phi0: f64,
    pub n_traj: u64,
    pub rows: Vec<CltRow>,
    /// Quantiles at the largest horizon: `(level, empirical, σ_GK·𝒴)`.
    pub qq: Option<Vec<(f64, f64, f64)>>,
    pub note: Option<String>,
}

/// Normalised moments of `𝒵_n` against the `σ_GK·MLGM(γ)` limit.
pub fn clt_experiment(driver: &Driver, obs: &Observable, n_list: &[usize], n_traj: u64, seed: u64) -> Result<CltReport> {
    obs.ensure_centred()?;
    let fit = fit_chain(&driver.to_markov())?;
    let law = MlgmLaw::for_walk(fit.params.alpha, driver.dim())?;
    let sigma_gk2 = gk_extension(driver, obs, 1e-6)?.value;
    let samples = birkhoff_samples(driver, obs, &fit, n_list, n_traj, seed)?;
    let sigma = sigma_gk2.max(0.0).sqrt();
    let limits: Vec<f64> = (1..=4).map(|m| sigma.powi(m as i32) * law.moment(m)).collect();
    let mut rows = Vec::new();
    for s in &samples {
        let mut ps = PowerSums::new(8);
        for v in &s.values {
            ps.add(v / s.normalization);
        }
        let moments: Vec<MeanSe> = (1..=4).map(|m| ps.moment(m)).collect();
        let ratios = moments
            .iter()
            .zip(&limits)
            .enumerate()
            .map(|(i, (e, l))| if i % 2 == 1 { e.mean / l } else { e.mean })
            .collect();
        rows.push(CltRow {
            n: s.n,
            normalization: s.normalization,
            alt_normalization: s.alt_normalization,
            normalization_ratio: s.alt_normalization.map(|a| (a / s.normalization).powi(2)),
            moments,
            limits: limits.clone(),
            ratios,
        });
    }
    let (qq, note) = match driver.dim() {
        Dim::One => {
            let last = samples.last().unwrap();
            let mut emp: Vec<f64> = last.values.iter().map(|v| v / last.normalization).collect();
            let mut rng = StreamFactory::new(seed, "clt-qq").stream(0);
            let mut lim: Vec<f64> = (0..emp.len()).map(|_| sigma * law.sample(&mut rng)).collect();
            emp.sort_by(f64::total_cmp);
            lim.sort_by(f64::total_cmp);
            let q = (1..20)
                .map(|i| {
                    let level = i as f64 / 20.0;
                    let k = ((emp.len() as f64 * level) as usize).min(emp.len() - 1);
                    (level, emp[k], lim[k])
                })
                .collect();
            (Some(q), None)
        }
        Dim::Two => (None, Some("d = 2: moments only; the sqrt(log n) normaliser makes distributional convergence unobservable at this scale".into())),
    };
    Ok(CltReport { sigma_gk2, gamma: law.gamma, phi0: fit.phi0, n_traj, rows, qq, note })
}

// ---------------------------------------------------------------------------
// Exact moments for i.i.d. walks

/// `μ(S_m = v)` for `m = 0..=n` at the support points and their differences.
struct GapTables {
    beta: Vec<f64>,
    /// `at[m][i] = μ(S_m = a_i)`.
    at: Vec<Vec<f64>>,
    /// `diff[m][i][j] = μ(S_m = a_j − a_i)`.
    diff: Vec<Vec<Vec<f64>>>,
}

fn gap_tables(step: &IidStep, obs: &Observable, n: usize) -> Result<GapTables> {
    if obs.dim() != step.dim() {
        return Err(ZdxError::Invalid("observable and step dimensions differ".into()));
    }
    if step.dim() == Dim::Two && n > 512 {
        return Err(ZdxError::MemoryGuard(format!("exact moments in d = 2 need n <= 512, got {n}")));
    }
    let driver = Driver::Iid(step.clone());
    let pts: Vec<Point> = obs.support().iter().map(|a| a.0).collect();
    let beta: Vec<f64> = obs.support().iter().map(|a| a.1).collect();
    let reach = pts.iter().map(|p| p.norm_inf()).max().unwrap_or(0) * 2;
    let ms = driver.max_step().max(1);
    let radius = (n as i64 * ms).min(12 * ((n as f64).sqrt() as i64 + 1) * ms) + reach;
    let mut prop = Propagator::new(&driver, radius, Some(12.0), Exec::default())?;
    let k = pts.len();
    let mut at = Vec::with_capacity(n + 1);
    let mut diff = Vec::with_capacity(n + 1);
    for m in 0..=n {
        if m > 0 {
            prop.advance();
        }
        at.push(pts.iter().map(|&p| prop.at(p)).collect());
        diff.push((0..k).map(|i| (0..k).map(|j| prop.at(pts[j] - pts[i])).collect()).collect());
    }
    Ok(GapTables { beta, at, diff })
}

impl GapTables {
    /// `U(M) = Σ_{m=1}^M β(a)μ(S_m = a)` for `M = 0..=n`.
    fn prefix(&self) -> Vec<Vec<f64>> {
        let k = self.beta.len();
        let mut out = vec![vec![0.0; k]];
        for m in 1..self.at.len() {
            let prev = &out[m - 1];
            let row: Vec<f64> = (0..k).map(|i| prev[i] + self.beta[i] * self.at[m][i]).collect();
            out.push(row);
        }
        out
    }

    /// `v_g(i) = Σ_j β_j μ(S_g = a_j − a_i)`.
    fn v(&self, g: usize) -> Vec<f64> {
        self.diff[g].iter().map(|row| row.iter().zip(&self.beta).map(|(p, b)| p * b).sum()).collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `𝔼[𝒵_n²]` for an i.i.d. walk, splitting over the ordered visit times:
/// `Σ_{g≥0} w_g Σ_{t≥1, t+g≤n} Σ_{a,b} β(a)μ(S_t=a)β(b)μ(S_g=b−a)` with
/// `w_0 = 1`, `w_g = 2` otherwise.
pub fn exact_second_moment(step: &IidStep, obs: &Observable, n: usize) -> Result<f64> {
    Ok(exact_second_moments(step, obs, &[n])?[0])
}

/// [`exact_second_moment`] at several horizons from one table.
pub fn exact_second_moments(step: &IidStep, obs: &Observable, ns: &[usize]) -> Result<Vec<f64>> {
    let n_max = ns.iter().copied().max().unwrap_or(0);
    if obs.is_zero() || n_max == 0 {
        return Ok(vec![0.0; ns.len()]);
    }
    let t = gap_tables(step, obs, n_max)?;
    let u = t.prefix();
    let vs: Vec<Vec<f64>> = (0..n_max).map(|g| t.v(g)).collect();
    Ok(ns
        .iter()
        .map(|&n| (0..n).map(|g| if g == 0 { 1.0 } else { 2.0 } * dot(&u[n - g], &vs[g])).sum())
        .collect())
}

/// `𝔼[𝒵_n³]` for an i.i.d. walk at several horizons. With gaps
/// `t ≥ 1, g, h ≥ 0` between the three ordered times, the weight is 6, 3 or
/// 1 according to how many of `g, h` are positive.
pub fn exact_third_moments(step: &IidStep, obs: &Observable, ns: &[usize]) -> Result<Vec<f64>> {
    let n_max = ns.iter().copied().max().unwrap_or(0);
    if obs.is_zero() || n_max == 0 {
        return Ok(vec![0.0; ns.len()]);
    }
    let t = gap_tables(step, obs, n_max)?;
    let u = t.prefix();
    let k = t.beta.len();
    let vs: Vec<Vec<f64>> = (0..n_max).map(|g| t.v(g)).collect();
    // K_g v_h with K_g(i, j) = β_j μ(S_g = a_j − a_i)
    let kv = |g: usize, v: &[f64]| -> Vec<f64> { (0..k).map(|i| (0..k).map(|j| t.beta[j] * t.diff[g][i][j] * v[j]).sum()).collect() };
    let w: Vec<Vec<f64>> = Exec::default().map(n_max, |s| {
        let mut acc = vec![0.0; k];
        for g in 0..=s {
            let h = s - g;
            let weight = match (g > 0, h > 0) {
                (true, true) => 6.0,
                (false, false) => 1.0,
                _ => 3.0,
            };
            for (a, x) in acc.iter_mut().zip(kv(g, &vs[h])) {
                *a += weight * x;
            }
        }
        acc
    });
    Ok(ns.iter().map(|&n| (0..n).map(|s| dot(&u[n - s], &w[s])).sum()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::make_fp;
    use approx::assert_relative_eq;

    #[test]
    fn closed_forms() {
        assert_relative_eq!(mlgm_moment(0.5, 2), 1.0, epsilon = 1e-14);
        assert_relative_eq!(mlgm_moment(0.0, 4), 6.0, epsilon = 1e-12);
        assert_relative_eq!(mlgm_moment(0.5, 4), 1.5 * PI, epsilon = 1e-12);
        assert_eq!(mlgm_moment(0.3, 3), 0.0);
        assert_relative_eq!(ml_moment(0.5, 2), PI / 2.0, epsilon = 1e-12);
        assert_relative_eq!(ml_moment(0.0, 3), 6.0, epsilon = 1e-12);
    }

    #[test]
    fn ml_half_is_folded_gaussian() {
        let m = sampler_moments(0.5, false, 1_000_000, 3, 2);
        assert!((m[0].mean - 1.0).abs() < 0.01, "{:?}", m[0]);
        assert!((m[1].mean / (PI / 2.0) - 1.0).abs() < 0.01, "{:?}", m[1]);
    }

    #[test]
    fn ml_third_second_moment() {
        let m = sampler_moments(1.0 / 3.0, false, 1_000_000, 4, 2);
        let exact = 2.0 * gamma(4.0 / 3.0).powi(2) / gamma(5.0 / 3.0);
        assert!((m[1].mean / exact - 1.0).abs() < 0.02);
    }

    #[test]
    fn mlgm_sampler_matches_moments() {
        for g in [0.0, 1.0 / 3.0, 0.5] {
            let m = sampler_moments(g, true, 1_000_000, 7, 4);
            assert!(m[0].mean.abs() <= 3.0 * m[0].se);
            assert!(m[2].mean.abs() <= 3.0 * m[2].se);
            for k in [2, 4] {
                assert!((m[k - 1].mean / mlgm_moment(g, k as u32) - 1.0).abs() < 0.02, "gamma {g} m {k}: {:?}", m[k - 1]);
            }
        }
        let laplace = sampler_moments(0.0, true, 1_000_000, 7, 2);
        assert!((laplace[1].mean - 1.0).abs() < 0.01);
    }

    #[test]
    fn mlgm_fourth_moment_unbiased() {
        for g in [0.0, 1.0 / 3.0, 0.5] {
            let m = sampler_moments(g, true, 20_000_000, 99, 4);
            assert!((m[3].mean - mlgm_moment(g, 4)).abs() <= 3.0 * m[3].se, "gamma {g}: {:?}", m[3]);
        }
    }

    #[test]
    fn second_moment_small_n() {
        let step = IidStep::lazy_1d();
        let f1 = make_fp(Dim::One, Point::d1(1)).unwrap();
        assert_relative_eq!(exact_second_moment(&step, &f1, 1).unwrap(), 0.75, epsilon = 1e-14);
        // n = 2 by enumeration: Z = β(S_1) + β(S_2)
        let mut e = 0.0;
        for (s1, p1) in step.atoms() {
            for (s2, p2) in step.atoms() {
                let a = *s1;
                let b = a + *s2;
                let z = f1.eval(a) + f1.eval(b);
                e += p1 * p2 * z * z;
            }
        }
        assert_relative_eq!(exact_second_moment(&step, &f1, 2).unwrap(), e, epsilon = 1e-14);
        assert_eq!(exact_second_moment(&step, &Observable::zero(Dim::One), 10).unwrap(), 0.0);
    }

    #[test]
    fn third_moment_by_enumeration() {
        let step = IidStep::lazy_1d();
        let f1 = make_fp(Dim::One, Point::d1(1)).unwrap();
        let n = 4;
        let mut paths = vec![(Point::ZERO, 0.0, 1.0)];
        for _ in 0..n {
            let mut next = Vec::new();
            for (pos, z, w) in &paths {
                for (s, p) in step.atoms() {
                    let q = *pos + *s;
                    next.push((q, z + f1.eval(q), w * p));
                }
            }
            paths = next;
        }
        let e3: f64 = paths.iter().map(|(_, z, w)| w * z.powi(3)).sum();
        let e2: f64 = paths.iter().map(|(_, z, w)| w * z * z).sum();
        assert_relative_eq!(exact_third_moments(&step, &f1, &[n]).unwrap()[0], e3, epsilon = 1e-14);
        assert_relative_eq!(exact_second_moment(&step, &f1, n).unwrap(), e2, epsilon = 1e-14);
    }

    #[test]
    fn second_moment_matches_monte_carlo() {
        let driver = Driver::Iid(IidStep::lazy_1d());
        let f1 = make_fp(Dim::One, Point::d1(1)).unwrap();
        let fit = fit_chain(&driver.to_markov()).unwrap();
        let ns = [64, 256, 1024];
        let samples = birkhoff_samples(&driver, &f1, &fit, &ns, 40_000, 11).unwrap();
        let exact = exact_second_moments(&IidStep::lazy_1d(), &f1, &ns).unwrap();
        for (s, e) in samples.iter().zip(exact) {
            let sq: Vec<f64> = s.values.iter().map(|v| v * v).collect();
            let m = crate::stats::mean_se(&sq);
            assert!((m.mean - e).abs() <= 3.0 * m.se, "n {}: {m:?} vs {e}", s.n);
        }
    }

    #[test]
    fn two_dim_guard() {
        let f = make_fp(Dim::Two, Point::d2(1, 0)).unwrap();
        assert!(matches!(exact_second_moment(&IidStep::lazy_2d(), &f, 1024), Err(ZdxError::MemoryGuard(_))));
    }
}
