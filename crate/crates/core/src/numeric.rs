//! Small numerical helpers: quadrature, root bracketing, power-law fits and
//! FFT convolution.

use num_complex::Complex64;
use rustfft::FftPlanner;

/// Adaptive Simpson quadrature of `f` on `[a, b]` to absolute tolerance `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(&f, a, b, fa, fm, fb, whole, tol, 48)
}

/// Root of an increasing function on `[lo, hi]` by bisection.
pub fn bisect_increasing<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, rel_tol: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= rel_tol * hi.abs().max(1e-300) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Ordinary least squares `y ≈ a + b x`; returns `(a, b)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let b = sxy / sxx;
    (my - b * mx, b)
}

/// Fitted `|t_k| ≈ c k^{-β}` over a window of terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerLaw {
    pub c: f64,
    pub beta: f64,
    /// Sign shared by every term in the window.
    pub sign: f64,
}

impl PowerLaw {
    /// Fits `terms[k]` for `k ∈ [lo, hi]`; `None` if the window mixes signs
    /// or contains zeros.
    pub fn fit(terms: &[f64], lo: usize, hi: usize) -> Option<PowerLaw> {
        let lo = lo.max(1);
        if hi <= lo + 2 || hi >= terms.len() {
            return None;
        }
        let sign = terms[hi].signum();
        if sign == 0.0 {
            return None;
        }
        // Geometric subsampling keeps the fit cheap and evenly weighted in log k.
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut k = lo as f64;
        while (k as usize) <= hi {
            let t = terms[k as usize];
            if t == 0.0 || t.signum() != sign {
                return None;
            }
            xs.push(k.ln());
            ys.push((t * sign).ln());
            k = (k * 1.02).max(k + 1.0);
        }
        let (a, b) = linear_fit(&xs, &ys);
        Some(PowerLaw { c: a.exp(), beta: -b, sign })
    }

    /// `Σ_{k > n} c k^{-β}` by the midpoint integral approximation.
    pub fn tail_after(&self, n: usize) -> f64 {
        if self.beta <= 1.0 {
            return f64::INFINITY;
        }
        self.sign * self.c * (n as f64 + 0.5).powf(1.0 - self.beta) / (self.beta - 1.0)
    }
}

/// Accumulates a series of terms and decides convergence by extrapolating a
/// power-law tail fitted on the last decade of terms.
///
/// The estimate at horizon `N` is `S_N + tail(N)`; its error bound is the
/// change in that estimate against the same construction at horizon `N/2`.
#[derive(Debug, Clone, Default)]
pub struct TailExtrapolator {
    pub terms: Vec<f64>,
    partial: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesEstimate {
    pub horizon: usize,
    pub partial_sum: f64,
    pub tail: f64,
    pub value: f64,
    pub error_bound: f64,
    pub beta: f64,
}

/// Minimum fitted decay exponent for which a tail is accepted.
pub const MIN_TAIL_EXPONENT: f64 = 1.05;

impl TailExtrapolator {
    pub fn push(&mut self, t: f64) {
        let last = self.partial.last().copied().unwrap_or(0.0);
        self.terms.push(t);
        self.partial.push(last + t);
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Sum of terms `0..=n`.
    pub fn partial(&self, n: usize) -> f64 {
        self.partial[n]
    }

    fn extrapolate(&self, n: usize) -> Option<(f64, PowerLaw)> {
        let law = PowerLaw::fit(&self.terms, n / 10, n)?;
        if law.beta <= MIN_TAIL_EXPONENT {
            return None;
        }
        Some((self.partial[n] + law.tail_after(n), law))
    }

    /// Estimate using all terms pushed so far; `None` while the tail cannot be
    /// fitted (mixed signs, too few terms or exponent ≤ 1.05).
    pub fn estimate(&self) -> Option<SeriesEstimate> {
        let n = self.terms.len().checked_sub(1)?;
        if n < 40 {
            return None;
        }
        let (value, law) = self.extrapolate(n)?;
        let (prev, _) = self.extrapolate(n / 2)?;
        let tail = law.tail_after(n);
        let error_bound = (value - prev).abs() + 4.0 * f64::EPSILON * (n as f64) * self.partial[n].abs().max(1.0);
        Some(SeriesEstimate { horizon: n, partial_sum: self.partial[n], tail, value, error_bound, beta: law.beta })
    }
}

/// Linear convolution of two real sequences via FFT.
pub fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let out_len = a.len() + b.len() - 1;
    if a.len().min(b.len()) <= 32 {
        let mut out = vec![0.0; out_len];
        for (i, x) in a.iter().enumerate() {
            for (j, y) in b.iter().enumerate() {
                out[i + j] += x * y;
            }
        }
        return out;
    }
    let n = out_len.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut fa: Vec<Complex64> = a.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    fa.resize(n, Complex64::default());
    let mut fb: Vec<Complex64> = b.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    fb.resize(n, Complex64::default());
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    inv.process(&mut fa);
    let scale = 1.0 / n as f64;
    fa.iter().take(out_len).map(|z| z.re * scale).collect()
}

/// `ln Γ(x)` and `Γ(x)` for positive arguments.
pub fn gamma(x: f64) -> f64 {
    statrs::function::gamma::gamma(x)
}

pub fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn simpson_matches_closed_forms() {
        assert_relative_eq!(integrate(|x| x.sin(), 0.0, std::f64::consts::PI, 1e-12), 2.0, epsilon = 1e-10);
        assert_relative_eq!(integrate(|x| (-x * x).exp(), -8.0, 8.0, 1e-13), std::f64::consts::PI.sqrt(), epsilon = 1e-10);
    }

    #[test]
    fn tail_extrapolation_on_known_series() {
        // Σ_{k≥1} k^{-3/2} = ζ(3/2)
        let mut acc = TailExtrapolator::default();
        acc.push(0.0);
        for k in 1..4000 {
            acc.push((k as f64).powf(-1.5));
        }
        let est = acc.estimate().unwrap();
        let zeta_3_2 = 2.612_375_348_685_488;
        assert!((est.value - zeta_3_2).abs() <= est.error_bound, "{est:?}");
        assert!(est.error_bound < 1e-3);
        assert!((est.beta - 1.5).abs() < 1e-3);
    }

    #[test]
    fn harmonic_like_series_is_rejected() {
        let mut acc = TailExtrapolator::default();
        for k in 0..2000 {
            acc.push(1.0 / (k as f64 + 1.0));
        }
        assert!(acc.estimate().is_none());
    }

    #[test]
    fn fft_convolution_matches_direct() {
        let a: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..77).map(|i| 1.0 / (1.0 + i as f64)).collect();
        let fast = convolve(&a, &b);
        let mut direct = vec![0.0; a.len() + b.len() - 1];
        for i in 0..a.len() {
            for j in 0..b.len() {
                direct[i + j] += a[i] * b[j];
            }
        }
        for (x, y) in fast.iter().zip(&direct) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
