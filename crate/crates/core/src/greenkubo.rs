//! Green-Kubo variances: the extension series
//! `σ² = Σ_a β(a)² + 2 Σ_{k≥1} Σ_{a,b} β(a)β(b) μ(S_k = a−b)`, its induced
//! counterpart on the zero fibre (Monte Carlo, Cesàro averaged), and the
//! exact invariance check for chains with constant return time to a block.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::driver::{Driver, MarkovDriver, Walker};
use crate::error::{invalid, Result, ZdxError};
use crate::excursion::{ExcursionOptions, ExcursionSampler, DEFAULT_CAP};
use crate::exec::Exec;
use crate::kernel::{series_terms_many, SeriesOptions};
use crate::lattice::{Dim, Observable, Point};
use crate::linalg::solve_real;
use crate::numeric::PowerLaw;
use crate::rng::StreamFactory;
use crate::stats::mean_se;

#[derive(Debug, Clone, Serialize)]
pub struct GkResult {
    pub value: f64,
    /// Extension: `Σ_{a,b} β(a)β(b) μ(S_k = a−b)` for `k = 1, 2, …`.
    /// Induced: lag covariances `E[f_{{0}} · f_{{0}}∘T̃_{{0}}^k]`, `k = 1..=k_max`.
    pub per_k_terms: Vec<f64>,
    /// Extension: tail extrapolation error. Induced: distance between the
    /// Cesàro value and the plain partial sum at `k_max`.
    pub truncation_bound: f64,
    pub cesaro: bool,
    /// Induced only: standard error and 95% half-width across chains.
    pub se: Option<f64>,
    pub ci: Option<f64>,
    /// Induced only: plain partial sum at `k_max`.
    pub plain: Option<f64>,
    /// Fitted decay exponent of the per-k terms (extension).
    pub decay_exponent: Option<f64>,
    pub converged: bool,
    pub censored: u64,
}

/// `c(v) = Σ_{a−b=v} β(a)β(b)`.
fn difference_coefficients(obs: &Observable) -> Vec<(Point, f64)> {
    let mut c: BTreeMap<Point, f64> = BTreeMap::new();
    for &(a, wa) in obs.support() {
        for &(b, wb) in obs.support() {
            *c.entry(a - b).or_default() += wa * wb;
        }
    }
    c.into_iter().collect()
}

/// Exact Green-Kubo variance of a zero-sum position observable.
pub fn gk_extension(driver: &Driver, obs: &Observable, tol: f64) -> Result<GkResult> {
    gk_extension_with(driver, obs, SeriesOptions::for_dim(driver.dim(), tol))
}

pub fn gk_extension_with(driver: &Driver, obs: &Observable, opts: SeriesOptions) -> Result<GkResult> {
    Ok(gk_extension_many(driver, std::slice::from_ref(obs), opts)?.remove(0))
}

/// [`gk_extension_with`] for several observables along one propagation.
pub fn gk_extension_many(driver: &Driver, obs: &[Observable], opts: SeriesOptions) -> Result<Vec<GkResult>> {
    for o in obs {
        if o.dim() != driver.dim() {
            return Err(ZdxError::Dimension { expected: driver.dim().get(), got: o.dim().get() });
        }
        o.ensure_centred()?;
    }
    let live: Vec<usize> = (0..obs.len()).filter(|&i| !obs[i].is_zero()).collect();
    let coeffs: Vec<Vec<(Point, f64)>> = live.iter().map(|&i| difference_coefficients(&obs[i])).collect();
    let runs = if live.is_empty() { Vec::new() } else { series_terms_many(driver, &coeffs, opts)? };
    let mut out: Vec<GkResult> = obs
        .iter()
        .map(|_| GkResult {
            value: 0.0,
            per_k_terms: Vec::new(),
            truncation_bound: 0.0,
            cesaro: false,
            se: None,
            ci: None,
            plain: None,
            decay_exponent: None,
            converged: true,
            censored: 0,
        })
        .collect();
    for ((&i, c), (sum, terms)) in live.iter().zip(&coeffs).zip(runs) {
        let c0: f64 = c.iter().filter(|c| c.0.is_zero()).map(|c| c.1).sum();
        let n = terms.len();
        let decay = PowerLaw::fit(&terms, n / 10, n - 1).map(|l| -l.beta);
        out[i] = GkResult {
            value: 2.0 * sum.value - c0,
            per_k_terms: terms[1..].to_vec(),
            truncation_bound: 2.0 * sum.error_bound,
            cesaro: false,
            se: None,
            ci: None,
            plain: None,
            decay_exponent: decay,
            converged: sum.converged && decay.is_some_and(|e| e < -1.0),
            censored: 0,
        };
    }
    Ok(out)
}

/// Induced Green-Kubo variance of `f_{{0}}` from independent long chains of
/// consecutive excursions. Each chain starts from the stationary law on the
/// zero fibre, so its lag covariances are unbiased; the Cesàro value
/// `(1/K) Σ_{n=1}^{K} (C_0 + 2 Σ_{k≤n} C_k)` is averaged over chains and the
/// chain spread gives the error bar.
pub fn gk_induced(driver: &Driver, obs: &Observable, n_excursions: u64, k_max: usize, seed: u64) -> Result<GkResult> {
    Ok(gk_induced_many(driver, std::slice::from_ref(obs), n_excursions, k_max, seed)?.remove(0))
}

/// [`gk_induced`] for several observables along the same excursions.
pub fn gk_induced_many(driver: &Driver, obs: &[Observable], n_excursions: u64, k_max: usize, seed: u64) -> Result<Vec<GkResult>> {
    if k_max < 1 {
        return invalid("k_max must be at least 1");
    }
    if obs.is_empty() {
        return Ok(Vec::new());
    }
    for o in obs {
        o.ensure_centred()?;
    }
    let n_chains = (n_excursions / 100_000).clamp(20, 200) as usize;
    let len = (n_excursions / n_chains as u64) as usize;
    if len <= 4 * k_max {
        return invalid("too few excursions per chain for the requested k_max");
    }
    let fold = driver.dim() == Dim::One && driver.max_step() == 1;
    let opts = ExcursionOptions { cap: DEFAULT_CAP, fold };
    let sampler = ExcursionSampler::new(driver, obs, &[], opts)
        .or_else(|_| ExcursionSampler::new(driver, obs, &[], ExcursionOptions { cap: DEFAULT_CAP, fold: false }))?;
    let streams = StreamFactory::new(seed, "gk-induced");
    // per chain: lag products for each observable, and the censored count
    let chains: Vec<(Vec<Vec<f64>>, u64)> = Exec::default().map(n_chains, |c| {
        let mut rng = streams.stream(c as u64);
        let mut w = Walker::new(driver, &mut rng);
        let mut ys = vec![Vec::with_capacity(len); obs.len()];
        let mut censored = 0;
        for _ in 0..len {
            let r = sampler.continue_from(&mut w, &mut rng);
            if r.censored {
                censored += 1;
                // restart the chain from the stationary law
                w = Walker::new(driver, &mut rng);
            }
            for (y, v) in ys.iter_mut().zip(&r.induced_sums) {
                y.push(*v);
            }
        }
        (ys.iter().map(|y| lag_products(y, k_max)).collect(), censored)
    });
    let censored = chains.iter().map(|c| c.1).sum();
    let cesaro_of = |c: &[f64]| {
        let mut s = c[0];
        let mut acc = 0.0;
        for ck in &c[1..] {
            s += 2.0 * ck;
            acc += s;
        }
        (acc / k_max as f64, s)
    };
    Ok((0..obs.len())
        .map(|j| {
            let per_chain: Vec<(f64, f64)> = chains.iter().map(|c| cesaro_of(&c.0[j])).collect();
            let ces: Vec<f64> = per_chain.iter().map(|x| x.0).collect();
            let plain: Vec<f64> = per_chain.iter().map(|x| x.1).collect();
            let m = mean_se(&ces);
            let plain = mean_se(&plain).mean;
            let per_k_terms: Vec<f64> = (1..=k_max).map(|k| chains.iter().map(|c| c.0[j][k]).sum::<f64>() / n_chains as f64).collect();
            GkResult {
                value: m.mean,
                per_k_terms,
                truncation_bound: (m.mean - plain).abs(),
                cesaro: true,
                se: Some(m.se),
                ci: Some(1.96 * m.se),
                plain: Some(plain),
                decay_exponent: None,
                converged: true,
                censored,
            }
        })
        .collect())
}

/// `C_k = (1/(L−k)) Σ_i y_i y_{i+k}` for `k = 0..=k_max`; the mean of `f_{{0}}`
/// is 0 by Kac's formula and is not subtracted.
fn lag_products(ys: &[f64], k_max: usize) -> Vec<f64> {
    let n = ys.len();
    (0..=k_max).map(|k| ys[..n - k].iter().zip(&ys[k..]).map(|(a, b)| a * b).sum::<f64>() / (n - k) as f64).collect()
}

/// The point of `a + t·b` minimising the Green-Kubo variance. The variance is
/// a quadratic form in the weights, so the search is exact from three
/// evaluations.
#[derive(Debug, Clone, Serialize)]
pub struct Surrogate {
    pub t: f64,
    pub observable: Observable,
    pub value: f64,
    pub error_bound: f64,
}

pub fn coboundary_surrogate(driver: &Driver, a: &Observable, b: &Observable, tol: f64) -> Result<Surrogate> {
    let sa = gk_extension(driver, a, tol)?;
    let sb = gk_extension(driver, b, tol)?;
    let sab = gk_extension(driver, &a.plus(b)?, tol)?;
    if !(sb.value > 0.0) {
        return invalid("direction observable has zero variance");
    }
    let cross = 0.5 * (sab.value - sa.value - sb.value);
    let t = -cross / sb.value;
    let observable = a.plus(&b.scaled(t))?;
    let s = gk_extension(driver, &observable, tol)?;
    Ok(Surrogate { t, observable, value: s.value, error_bound: s.truncation_bound })
}

/// `f = δ_{e} + δ_{−e} − 2δ_0` with `e` the first unit vector.
pub fn two_sided(dim: Dim) -> Observable {
    let e = match dim {
        Dim::One => Point::d1(1),
        Dim::Two => Point::d2(1, 0),
    };
    Observable::centred(dim, vec![(e, 1.0), (-e, 1.0), (Point::ZERO, -2.0)]).expect("zero-sum")
}

#[derive(Debug, Clone, Serialize)]
pub struct SubsetInvarianceReport {
    pub block_period: usize,
    pub block: Vec<usize>,
    /// Cesàro Green-Kubo variance on the full chain.
    pub full: f64,
    /// Induced variance under the normalised stationary law on the block.
    pub induced_normalised: f64,
    /// Induced variance under the stationary law restricted to the block
    /// (mass `1/M`); equals `full`.
    pub induced: f64,
    pub difference: f64,
    pub paths: usize,
}

/// Green-Kubo variance of a function of the chain state, centred under `π`.
pub fn state_gk(chain: &MarkovDriver, f: &[f64]) -> Result<f64> {
    let pi = chain.stationary();
    if f.len() != pi.len() {
        return invalid("one value per state is required");
    }
    let mean: f64 = f.iter().zip(pi).map(|(a, b)| a * b).sum();
    let centred: Vec<f64> = f.iter().map(|x| x - mean).collect();
    let n = pi.len();
    let p = DMatrix::from_fn(n, n, |i, j| chain.transition()[i][j]);
    chain_gk(&p, pi, &centred)
}

/// `2⟨f, Z f⟩_π − ⟨f, f⟩_π` with `Z = (I − P + 1πᵀ)^{-1}`: the Cesàro sum of
/// the Green-Kubo series of a zero-mean function of an irreducible chain.
fn chain_gk(p: &DMatrix<f64>, pi: &[f64], f: &[f64]) -> Result<f64> {
    let n = pi.len();
    let mut a = DMatrix::<f64>::identity(n, n) - p;
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] += pi[j];
        }
    }
    let zf = solve_real(&a, &DVector::from_column_slice(f))?;
    let fz: f64 = (0..n).map(|i| pi[i] * f[i] * zf[i]).sum();
    let ff: f64 = (0..n).map(|i| pi[i] * f[i] * f[i]).sum();
    Ok(2.0 * fz - ff)
}

/// Exact check that inducing on a block with constant return time `M`
/// preserves the Green-Kubo variance of a zero-mean state observable.
pub fn gk_subset_invariance(chain: &MarkovDriver, block_period: usize, obs_on_states: &[f64]) -> Result<SubsetInvarianceReport> {
    let n = chain.n_states();
    let m = block_period;
    if m < 1 {
        return invalid("block period must be at least 1");
    }
    if obs_on_states.len() != n {
        return invalid(format!("observable has {} values for {n} states", obs_on_states.len()));
    }
    let pi = chain.stationary();
    let mean: f64 = pi.iter().zip(obs_on_states).map(|(a, b)| a * b).sum();
    if mean.abs() > 1e-10 {
        return Err(ZdxError::NotCentred { residual: mean });
    }
    let t = chain.transition();
    let p = DMatrix::from_fn(n, n, |i, j| t[i][j]);

    // the block of state 0: states reached from 0 at times ≡ 0 mod M
    let mut class = vec![usize::MAX; n];
    class[0] = 0;
    let mut queue = vec![0usize];
    while let Some(i) = queue.pop() {
        for j in 0..n {
            if t[i][j] > 0.0 {
                let c = (class[i] + 1) % m;
                if class[j] == usize::MAX {
                    class[j] = c;
                    queue.push(j);
                } else if class[j] != c {
                    return invalid(format!("return time to the block of state 0 is not constantly {m}"));
                }
            }
        }
    }
    let block: Vec<usize> = (0..n).filter(|&i| class[i] == 0).collect();
    if class.contains(&usize::MAX) {
        return invalid("chain is not irreducible");
    }
    if m > 1 && (1..m).any(|c| !class.contains(&c)) {
        return invalid(format!("return time to the block of state 0 is not constantly {m}"));
    }

    let full = chain_gk(&p, pi, obs_on_states)?;

    // path-space chain of the induced map
    let mut paths: Vec<Vec<usize>> = block.iter().map(|&b| vec![b]).collect();
    for _ in 1..m {
        paths = paths
            .into_iter()
            .flat_map(|path| {
                let last = *path.last().expect("non-empty");
                (0..n).filter(move |&j| t[last][j] > 0.0).map(move |j| {
                    let mut q = path.clone();
                    q.push(j);
                    q
                })
            })
            .collect();
    }
    let np = paths.len();
    if np > 4096 {
        return Err(ZdxError::MemoryGuard(format!("{np} induced paths")));
    }
    let mass_b: f64 = block.iter().map(|&b| pi[b]).sum();
    let weight = |path: &[usize]| path.windows(2).map(|w| t[w[0]][w[1]]).product::<f64>();
    let nu: Vec<f64> = paths.iter().map(|q| pi[q[0]] / mass_b * weight(q)).collect();
    let fb: Vec<f64> = paths.iter().map(|q| q.iter().map(|&s| obs_on_states[s]).sum()).collect();
    let q = DMatrix::from_fn(np, np, |a, b| t[*paths[a].last().expect("non-empty")][paths[b][0]] * weight(&paths[b]));
    let induced_normalised = chain_gk(&q, &nu, &fb)?;
    let induced = induced_normalised * mass_b;
    Ok(SubsetInvarianceReport {
        block_period: m,
        block,
        full,
        induced_normalised,
        induced,
        difference: (full - induced).abs(),
        paths: np,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::IidStep;
    use crate::kernel::{g_series_many, series_terms};
    use crate::lattice::make_fp;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn extension_lazy_1d_f1_is_six() {
        let d: Driver = IidStep::lazy_1d().into();
        let r = gk_extension(&d, &make_fp(Dim::One, Point::d1(1)).unwrap(), 1e-6).unwrap();
        assert_abs_diff_eq!(r.value, 6.0, epsilon = 1e-5);
        assert!(r.converged);
    }

    #[test]
    fn per_k_terms_match_kernel_terms() {
        let d: Driver = MarkovDriver::three_state().into();
        let p = Point::d1(2);
        let opts = SeriesOptions { tol: 1e-3, max_horizon: 256, cut: 8.0 };
        let r = gk_extension_with(&d, &make_fp(Dim::One, p).unwrap(), opts).unwrap();
        let (_, terms) = series_terms(&d, &[(Point::ZERO, 2.0), (p, -1.0), (-p, -1.0)], opts).unwrap();
        // the double sum collapses to 2δ_0 − δ_p − δ_{−p}
        let c = difference_coefficients(&make_fp(Dim::One, p).unwrap());
        assert_eq!(c, vec![(-p, -1.0), (Point::ZERO, 2.0), (p, -1.0)]);
        assert_eq!(r.per_k_terms.len(), terms.len() - 1);
        for (a, b) in r.per_k_terms.iter().zip(&terms[1..]) {
            assert!((a - b).abs() <= 1e-15, "{a} {b}");
        }
        let g = g_series_many(&d, &[p], opts).unwrap()[0];
        assert_abs_diff_eq!(r.value, 2.0 * g.value - 2.0, epsilon = 1e-12);
    }

    #[test]
    fn single_point_support_is_rejected() {
        assert!(Observable::centred(Dim::One, vec![(Point::d1(1), 1.0)]).is_err());
    }

    #[test]
    fn induced_lazy_1d_has_no_lag_correlation() {
        let d: Driver = IidStep::lazy_1d().into();
        let r = gk_induced(&d, &make_fp(Dim::One, Point::d1(1)).unwrap(), 2_000_000, 8, 3).unwrap();
        assert!((r.value - 6.0).abs() < 3.0 * r.ci.unwrap(), "{r:?}");
        for c in &r.per_k_terms {
            assert!(c.abs() < 0.1, "{c}");
        }
    }

    #[test]
    fn subset_invariance_on_cyclic_chains() {
        for m in [2, 3] {
            let c = MarkovDriver::cyclic_blocks(m).unwrap();
            let pi = c.stationary().to_vec();
            let raw: Vec<f64> = (0..2 * m).map(|i| ((i * 7 + 3) % 5) as f64 - 1.5).collect();
            let mean: f64 = raw.iter().zip(&pi).map(|(a, b)| a * b).sum();
            let f: Vec<f64> = raw.iter().map(|x| x - mean).collect();
            let r = gk_subset_invariance(&c, m, &f).unwrap();
            assert!(r.difference < 1e-10, "{r:?}");
            assert_eq!(r.paths, 1 << m);
            let z = gk_subset_invariance(&c, m, &vec![0.0; 2 * m]).unwrap();
            assert_eq!((z.full, z.induced), (0.0, 0.0));
        }
    }

    #[test]
    fn subset_invariance_rejects_wrong_period() {
        let c = MarkovDriver::cyclic_blocks(3).unwrap();
        assert!(gk_subset_invariance(&c, 2, &[0.0; 6]).is_err());
        let pi = c.stationary().to_vec();
        assert!(gk_subset_invariance(&c, 3, &[1.0; 6]).is_err() || pi.is_empty());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn extension_is_quadratic(c in -3.0f64..3.0, w in 0.1f64..2.0) {
            let d: Driver = IidStep::lazy_1d().into();
            let obs = Observable::centred(Dim::One, vec![(Point::d1(1), w), (Point::d1(-2), 1.0), (Point::ZERO, -1.0 - w)]).unwrap();
            let opts = SeriesOptions { tol: 1e-300, max_horizon: 128, cut: 8.0 };
            let base = gk_extension_with(&d, &obs, opts).unwrap().value;
            let scaled = gk_extension_with(&d, &obs.scaled(c), opts).unwrap().value;
            prop_assert!((scaled - c * c * base).abs() <= 1e-12 * (1.0 + c * c * base.abs()));
        }
    }
}
