//! Estimators and goodness-of-fit statistics used by the Monte Carlo modules.

use rand::RngCore;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::rng::Stream;

/// Mean and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub n: u64,
}

pub fn mean_se(xs: &[f64]) -> MeanSe {
    let n = xs.len();
    if n == 0 {
        return MeanSe { mean: f64::NAN, se: f64::NAN, n: 0 };
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = if n > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
    MeanSe { mean, se: (var / n as f64).sqrt(), n: n as u64 }
}

/// Running power sums `Σ x^m`, `m = 0..=M`, mergeable in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSums {
    pub sums: Vec<f64>,
}

impl PowerSums {
    pub fn new(max_power: usize) -> Self {
        PowerSums { sums: vec![0.0; max_power + 1] }
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let mut p = 1.0;
        for s in &mut self.sums {
            *s += p;
            p *= x;
        }
    }

    pub fn merge(&mut self, other: &PowerSums) {
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            *a += b;
        }
    }

    pub fn count(&self) -> f64 {
        self.sums[0]
    }

    /// Raw moment `E[x^m]` and its standard error.
    pub fn moment(&self, m: usize) -> MeanSe {
        let n = self.sums[0];
        let mean = self.sums[m] / n;
        let se = if 2 * m < self.sums.len() {
            let var = (self.sums[2 * m] / n - mean * mean).max(0.0);
            (var / (n - 1.0).max(1.0)).sqrt()
        } else {
            f64::NAN
        };
        MeanSe { mean, se, n: n as u64 }
    }
}

/// Wilson score interval for a binomial proportion.
pub fn wilson(successes: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Kolmogorov–Smirnov distance between the empirical law of `xs` and a
/// continuous CDF. Ties are handled by comparing both sides of every jump.
pub fn ks_statistic<F: Fn(f64) -> f64>(xs: &[f64], cdf: F) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("NaN in sample"));
    let n = v.len() as f64;
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < v.len() {
        let mut j = i;
        while j + 1 < v.len() && v[j + 1] == v[i] {
            j += 1;
        }
        let f = cdf(v[i]);
        let below = i as f64 / n;
        let upto = (j + 1) as f64 / n;
        d = d.max((f - below).abs()).max((upto - f).abs());
        i = j + 1;
    }
    d
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChiSquare {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub bins: usize,
}

/// Pearson goodness-of-fit test of integer-valued samples against a pmf on
/// `1, 2, …`. Consecutive cells are merged until each expects at least
/// `min_expected` observations; the last cell absorbs the upper tail.
pub fn chi_square_pmf<F: Fn(u64) -> f64>(samples: &[u64], pmf: F, min_expected: f64) -> ChiSquare {
    let n = samples.len() as f64;
    let max = samples.iter().copied().max().unwrap_or(1);
    let mut counts = vec![0u64; max as usize + 2];
    for &s in samples {
        counts[s as usize] += 1;
    }
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let (mut obs, mut exp, mut cum) = (0.0, 0.0, 0.0);
    for k in 1..=max {
        let p = pmf(k);
        obs += counts[k as usize] as f64;
        exp += n * p;
        cum += p;
        if exp >= min_expected && n * (1.0 - cum) >= min_expected {
            cells.push((obs, exp));
            obs = 0.0;
            exp = 0.0;
        }
    }
    // upper tail: everything not yet assigned
    exp += n * (1.0 - cum).max(0.0);
    if let Some(last) = cells.last_mut().filter(|_| exp < min_expected) {
        last.0 += obs;
        last.1 += exp;
    } else {
        cells.push((obs, exp));
    }
    let statistic: f64 = cells.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    let dof = cells.len().saturating_sub(1).max(1);
    let p_value = 1.0 - ChiSquared::new(dof as f64).expect("dof > 0").cdf(statistic);
    ChiSquare { statistic, dof, p_value, bins: cells.len() }
}

/// Nonparametric bootstrap standard error of `stat` over resamples of `xs`.
pub fn bootstrap_se<F: Fn(&[f64]) -> f64>(xs: &[f64], stat: F, resamples: usize, rng: &mut Stream) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    let n = xs.len() as u64;
    let mut buf = vec![0.0; xs.len()];
    let vals: Vec<f64> = (0..resamples)
        .map(|_| {
            for b in buf.iter_mut() {
                *b = xs[(rng.next_u64() % n) as usize];
            }
            stat(&buf)
        })
        .collect();
    mean_se(&vals).se * (resamples as f64).sqrt()
}

/// Least-squares fit of `ln S(t) = ln C − κ t` on survival values.
pub fn exp_tail_fit(ts: &[f64], survival: &[f64]) -> Option<(f64, f64)> {
    let pts: Vec<(f64, f64)> = ts.iter().zip(survival).filter(|(_, s)| **s > 0.0).map(|(t, s)| (*t, s.ln())).collect();
    if pts.len() < 3 {
        return None;
    }
    let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let (a, b) = crate::numeric::linear_fit(&xs, &ys);
    Some((a.exp(), -b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    #[test]
    fn wilson_contains_truth_and_is_ordered() {
        let (lo, hi) = wilson(250, 1000, 1.96);
        assert!(lo < 0.25 && hi > 0.25 && lo > 0.2 && hi < 0.3);
        assert_eq!(wilson(0, 0, 1.96), (0.0, 1.0));
    }

    #[test]
    fn ks_of_exact_quantiles_is_small() {
        let n = 1000;
        let xs: Vec<f64> = (0..n).map(|i| -(1.0 - (i as f64 + 0.5) / n as f64).ln()).collect();
        let d = ks_statistic(&xs, |x| 1.0 - (-x).exp());
        assert!(d <= 0.5 / n as f64 + 1e-12, "{d}");
    }

    #[test]
    fn ks_sees_atoms() {
        // all mass at one point: the CDF jumps by 1 there
        let d = ks_statistic(&[1.0; 10], |x| 1.0 - (-x).exp());
        assert!((d - (1.0 - (-1.0f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn chi_square_accepts_the_true_law() {
        let mut r = stream(3, 3, 3);
        let q = 0.25;
        let samples: Vec<u64> = (0..20_000)
            .map(|_| {
                let mut k = 1;
                while r.random::<f64>() >= q {
                    k += 1;
                }
                k
            })
            .collect();
        let t = chi_square_pmf(&samples, |k| q * (1.0 - q).powi(k as i32 - 1), 5.0);
        assert!(t.p_value > 0.001, "{t:?}");
        let wrong = chi_square_pmf(&samples, |k| 0.3 * 0.7f64.powi(k as i32 - 1), 5.0);
        assert!(wrong.p_value < 1e-6);
    }

    #[test]
    fn power_sums_moments() {
        let mut ps = PowerSums::new(4);
        for x in [1.0, 2.0, 3.0] {
            ps.add(x);
        }
        assert_eq!(ps.moment(1).mean, 2.0);
        assert!((ps.moment(2).mean - 14.0 / 3.0).abs() < 1e-12);
    }
}
