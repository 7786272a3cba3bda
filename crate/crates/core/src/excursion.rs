//! Excursions from the zero fibre: local times `N_p`, hitting probabilities
//! `α(p)^{-1} = μ(N_p > 0)`, induced sums `f_{{0}}`, and a harmonic-equation
//! oracle bracketing `α(p)^{-1}` on finite boxes.
//!
//! An excursion starts at the origin with the chain state drawn from the
//! stationary law and ends at the first `k > 0` with `S_k = 0`. Visits are
//! counted over `k ∈ [0, φ)` and only for a watch set (the origin, the
//! requested points and the supports of the registered observables).

use std::collections::BTreeMap;

use serde::Serialize;

use crate::driver::{Driver, IidStep, Walker};
use crate::error::{invalid, Result, ZdxError};
use crate::exec::{Batches, Exec};
use crate::kernel::PotentialKernel;
use crate::lattice::{Dim, Observable, Point};
use crate::rng::{open01, Stream, StreamFactory};
use crate::stats::{mean_se, wilson, ks_statistic, exp_tail_fit, MeanSe};

pub const DEFAULT_CAP: u64 = 1_000_000_000;
/// Censoring rate above which statistics are flagged unreliable.
pub const CENSOR_LIMIT: f64 = 1e-3;
const BATCH: u64 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExcursionOptions {
    /// Maximum number of simulated steps per excursion.
    pub cap: u64,
    /// One-dimensional skip-free walks only: a sojourn beyond the watch box
    /// is replaced by the forced re-entry step. Visit counts and induced sums
    /// keep their exact law; `length` then counts simulated steps only.
    pub fold: bool,
}

impl Default for ExcursionOptions {
    fn default() -> Self {
        ExcursionOptions { cap: DEFAULT_CAP, fold: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExcursionRecord {
    pub length: u64,
    pub visits: Vec<(Point, u64)>,
    pub induced_sums: Vec<f64>,
    pub censored: bool,
    /// Position when the excursion ended or was censored.
    pub last: Point,
    pub folds: u64,
}

impl ExcursionRecord {
    pub fn visits_to(&self, p: Point) -> u64 {
        self.visits.iter().find(|v| v.0 == p).map_or(0, |v| v.1)
    }
}

/// Dense lookup of watched points on a small box.
#[derive(Debug, Clone)]
struct Probe {
    dim: Dim,
    radius: i64,
    side: i64,
    cell: Vec<u32>,
    points: Vec<Point>,
    /// `(observable, weight)` per watched point.
    weights: Vec<Vec<(usize, f64)>>,
}

const EMPTY: u32 = u32::MAX;

impl Probe {
    fn new(dim: Dim, watch: &[Point], observables: &[Observable]) -> Self {
        let mut pts: Vec<Point> = vec![Point::ZERO];
        pts.extend_from_slice(watch);
        for o in observables {
            pts.extend(o.points());
        }
        pts.sort_by_key(|p| (p.y, p.x));
        pts.dedup();
        let radius = pts.iter().map(|p| p.norm_inf()).max().unwrap_or(0);
        let side = 2 * radius + 1;
        let cells = match dim {
            Dim::One => side,
            Dim::Two => side * side,
        } as usize;
        let mut cell = vec![EMPTY; cells];
        let mut weights = Vec::with_capacity(pts.len());
        let mut probe = Probe { dim, radius, side, cell: Vec::new(), points: pts.clone(), weights: Vec::new() };
        for (i, p) in pts.iter().enumerate() {
            cell[probe.index(*p).expect("inside")] = i as u32;
            weights.push(
                observables
                    .iter()
                    .enumerate()
                    .filter_map(|(j, o)| {
                        let w = o.weight(*p);
                        (w != 0.0).then_some((j, w))
                    })
                    .collect(),
            );
        }
        probe.cell = cell;
        probe.weights = weights;
        probe
    }

    #[inline]
    fn index(&self, p: Point) -> Option<usize> {
        let r = self.radius;
        if p.x.abs() > r || p.y.abs() > r {
            return None;
        }
        Some(match self.dim {
            Dim::One => (p.x + r) as usize,
            Dim::Two => ((p.y + r) * self.side + p.x + r) as usize,
        })
    }

    #[inline]
    fn lookup(&self, p: Point) -> Option<usize> {
        self.index(p).map(|i| self.cell[i]).filter(|&c| c != EMPTY).map(|c| c as usize)
    }
}

/// States entered by the re-entry step from above and from below.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Fold {
    radius: i64,
    down_state: usize,
    up_state: usize,
}

fn fold_states(driver: &Driver) -> Option<(usize, usize)> {
    if driver.dim() != Dim::One || driver.max_step() != 1 {
        return None;
    }
    match driver {
        Driver::Iid(_) => Some((0, 0)),
        Driver::Markov(m) => {
            let with = |v: i64| {
                let s: Vec<usize> = (0..m.n_states()).filter(|&i| m.step()[i].x == v).collect();
                (s.len() == 1).then(|| s[0])
            };
            Some((with(-1)?, with(1)?))
        }
    }
}

/// Reusable excursion simulator for a fixed driver, watch set and
/// observable list.
#[derive(Debug, Clone)]
pub struct ExcursionSampler<'a> {
    driver: &'a Driver,
    probe: Probe,
    n_obs: usize,
    cap: u64,
    fold: Option<Fold>,
}

impl<'a> ExcursionSampler<'a> {
    pub fn new(driver: &'a Driver, observables: &[Observable], watch: &[Point], opts: ExcursionOptions) -> Result<Self> {
        let d = driver.dim();
        for o in observables {
            if o.dim() != d {
                return Err(ZdxError::Dimension { expected: d.get(), got: o.dim().get() });
            }
        }
        if let Some(p) = watch.iter().find(|p| !p.fits(d)) {
            return invalid(format!("watch point {p} does not fit d={}", d.get()));
        }
        if opts.cap == 0 {
            return invalid("cap must be positive");
        }
        let probe = Probe::new(d, watch, observables);
        let fold = if opts.fold {
            let (down_state, up_state) =
                fold_states(driver).ok_or_else(|| ZdxError::Invalid("folding needs a skip-free 1D driver".into()))?;
            Some(Fold { radius: probe.radius.max(1), down_state, up_state })
        } else {
            None
        };
        Ok(ExcursionSampler { driver, probe, n_obs: observables.len(), cap: opts.cap, fold })
    }

    /// Watched points in the order used by [`ExcursionRecord::visits`].
    pub fn points(&self) -> &[Point] {
        &self.probe.points
    }

    pub fn sample(&self, rng: &mut Stream) -> ExcursionRecord {
        let mut w = Walker::new(self.driver, rng);
        self.continue_from(&mut w, rng)
    }

    /// Runs the next excursion of a walker standing at the origin, keeping its
    /// chain state; consecutive calls follow the induced map.
    pub fn continue_from(&self, w: &mut Walker, rng: &mut Stream) -> ExcursionRecord {
        debug_assert!(w.pos.is_zero());
        let mut counts = vec![0u64; self.probe.points.len()];
        let mut sums = vec![0.0; self.n_obs];
        let mut length = 0u64;
        let mut folds = 0u64;
        let mut censored = false;
        loop {
            if let Some(i) = self.probe.lookup(w.pos) {
                counts[i] += 1;
                for &(j, c) in &self.probe.weights[i] {
                    sums[j] += c;
                }
            }
            if length >= self.cap {
                censored = true;
                break;
            }
            w.step(rng);
            length += 1;
            if w.pos.is_zero() {
                break;
            }
            if let Some(f) = self.fold {
                if w.pos.x > f.radius {
                    w.pos = Point::d1(f.radius);
                    w.state = f.down_state;
                    folds += 1;
                } else if w.pos.x < -f.radius {
                    w.pos = Point::d1(-f.radius);
                    w.state = f.up_state;
                    folds += 1;
                }
            }
        }
        ExcursionRecord {
            length,
            visits: self.probe.points.iter().copied().zip(counts).collect(),
            induced_sums: sums,
            censored,
            last: w.pos,
            folds,
        }
    }
}

/// One excursion, visits recorded on the observables' supports.
pub fn simulate_excursion(driver: &Driver, observables: &[Observable], rng: &mut Stream, cap: u64) -> Result<ExcursionRecord> {
    Ok(ExcursionSampler::new(driver, observables, &[], ExcursionOptions { cap, fold: false })?.sample(rng))
}

/// Runs `n` excursions in fixed batches; results come back in excursion order.
pub fn run_batches<T: Send, F>(n: u64, streams: &StreamFactory, f: F) -> Vec<T>
where
    F: Fn(&mut Stream) -> T + Sync + Send,
{
    let b = Batches::new(n, BATCH);
    Exec::default()
        .map(b.count(), |i| {
            let mut rng = streams.stream(i as u64);
            (0..b.len(i)).map(|_| f(&mut rng)).collect::<Vec<T>>()
        })
        .into_iter()
        .flatten()
        .collect()
}

// ---------------------------------------------------------------------------
// Kac identity

#[derive(Debug, Clone, Serialize)]
pub struct KacEstimate {
    pub p: Point,
    pub mean: MeanSe,
    /// Excursions that hit the cap.
    pub censored: u64,
    /// Whether censored excursions were completed with the expected number of
    /// remaining visits; otherwise they are excluded.
    pub completed: bool,
}

/// Monte Carlo `E[N_p]` for several `p` from one set of excursions. With a
/// potential kernel, a censored excursion at `x` is completed by
/// `G_{{0}}(x, p) = a(x) + a(−p) − a(x − p)`, the expected number of further
/// visits to `p` before hitting 0, which leaves the estimator unbiased.
pub fn kac_check(
    driver: &Driver,
    ps: &[Point],
    n_excursions: u64,
    seed: u64,
    opts: ExcursionOptions,
    completion: Option<&PotentialKernel>,
) -> Result<Vec<KacEstimate>> {
    let sampler = ExcursionSampler::new(driver, &[], ps, opts)?;
    if completion.is_some() && driver.as_iid().is_none() {
        return invalid("completion needs an i.i.d. driver");
    }
    let streams = StreamFactory::new(seed, "kac");
    let recs: Vec<(Vec<f64>, bool)> = run_batches(n_excursions, &streams, |rng| {
        let r = sampler.sample(rng);
        let vals = ps
            .iter()
            .map(|&p| {
                let v = r.visits_to(p) as f64;
                match (r.censored, completion) {
                    (true, Some(k)) => v + k.green_killed(r.last, p),
                    _ => v,
                }
            })
            .collect();
        (vals, r.censored)
    });
    let censored = recs.iter().filter(|r| r.1).count() as u64;
    Ok(ps
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let xs: Vec<f64> = recs.iter().filter(|r| !r.1 || completion.is_some()).map(|r| r.0[i]).collect();
            KacEstimate { p, mean: mean_se(&xs), censored, completed: completion.is_some() }
        })
        .collect())
}

/// Exact `E[N_p]` for a one-dimensional walk with steps in `{−1, 0, 1}`,
/// enumerating the killed walk until its remaining mass is below `mass_tol`.
///
/// Skip-freeness confines the relevant path space to `{1, …, p}`: an
/// excursion below 0 returns to 0 before reaching `p > 0`, and a sojourn above
/// `p` returns to `p`.
pub fn kac_enumeration_skip_free(step: &IidStep, p: i64, mass_tol: f64) -> Result<f64> {
    if step.dim() != Dim::One || step.atoms().iter().any(|a| a.0.x.abs() > 1) {
        return invalid("enumeration needs a skip-free 1D step law");
    }
    if p == 0 {
        return Ok(1.0);
    }
    let (up, down) = if p > 0 {
        (step.prob(Point::d1(1)), step.prob(Point::d1(-1)))
    } else {
        (step.prob(Point::d1(-1)), step.prob(Point::d1(1)))
    };
    let stay = step.prob(Point::ZERO);
    let m = p.unsigned_abs() as usize;
    // mass[i] = probability of being at i+1 and not yet killed
    let mut mass = vec![0.0; m];
    mass[0] = up;
    let mut expected = 0.0;
    let mut iters = 0usize;
    loop {
        expected += mass[m - 1];
        let total: f64 = mass.iter().sum();
        if total < mass_tol {
            return Ok(expected);
        }
        iters += 1;
        if iters > 100_000_000 {
            return Err(ZdxError::NoConvergence { terms: iters, reason: "killed mass decays too slowly".into() });
        }
        let mut next = vec![0.0; m];
        for i in 0..m {
            let v = mass[i];
            next[i] += stay * v;
            if i > 0 {
                next[i - 1] += down * v;
            }
            if i + 1 < m {
                next[i + 1] += up * v;
            } else {
                next[i] += up * v;
            }
        }
        mass = next;
    }
}

// ---------------------------------------------------------------------------
// Harmonic-equation oracle

/// Bracket `[lo, hi]` for `α(p)^{-1}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AlphaBracket {
    pub p: Point,
    pub lo: f64,
    pub hi: f64,
    pub radius: i64,
    /// Box absorbed to 0 / absorbed to `p`.
    pub dirichlet: (f64, f64),
    /// Free / wired electrical-network bounds; symmetric steps only.
    pub network: Option<(f64, f64)>,
}

impl AlphaBracket {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

#[derive(Debug, Clone, Copy)]
struct BoxGrid {
    dim: Dim,
    r: i64,
    side: i64,
}

impl BoxGrid {
    fn new(dim: Dim, r: i64) -> Self {
        BoxGrid { dim, r, side: 2 * r + 1 }
    }

    fn len(&self) -> usize {
        match self.dim {
            Dim::One => self.side as usize,
            Dim::Two => (self.side * self.side) as usize,
        }
    }

    fn index(&self, p: Point) -> Option<usize> {
        if p.x.abs() > self.r || p.y.abs() > self.r {
            return None;
        }
        Some(match self.dim {
            Dim::One => (p.x + self.r) as usize,
            Dim::Two => ((p.y + self.r) * self.side + p.x + self.r) as usize,
        })
    }

    fn point(&self, i: usize) -> Point {
        let i = i as i64;
        match self.dim {
            Dim::One => Point::d1(i - self.r),
            Dim::Two => Point::d2(i % self.side - self.r, i / self.side - self.r),
        }
    }
}

/// Sparse system `A h = b` over the unknown cells of a box.
struct System {
    diag: Vec<f64>,
    /// Off-diagonal entries `(column, coefficient)` per row.
    off: Vec<Vec<(usize, f64)>>,
    rhs: Vec<f64>,
}

impl System {
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..x.len() {
            let mut s = self.diag[i] * x[i];
            for &(j, c) in &self.off[i] {
                s += c * x[j];
            }
            y[i] = s;
        }
    }

    fn solve_cg(&self, tol: f64) -> Result<Vec<f64>> {
        let n = self.rhs.len();
        let mut x = vec![0.0; n];
        let mut r = self.rhs.clone();
        let mut p = r.clone();
        let mut ap = vec![0.0; n];
        let norm_b = dot(&r, &r).sqrt().max(1e-300);
        let mut rr = dot(&r, &r);
        for _ in 0..(20 * n + 100) {
            if rr.sqrt() <= tol * norm_b {
                return Ok(x);
            }
            self.apply(&p, &mut ap);
            let a = rr / dot(&p, &ap);
            for i in 0..n {
                x[i] += a * p[i];
                r[i] -= a * ap[i];
            }
            let rr_new = dot(&r, &r);
            let beta = rr_new / rr;
            rr = rr_new;
            for i in 0..n {
                p[i] = r[i] + beta * p[i];
            }
        }
        Err(ZdxError::NoConvergence { terms: 20 * n + 100, reason: "conjugate gradients stalled".into() })
    }

    fn solve_gauss_seidel(&self, tol: f64) -> Result<Vec<f64>> {
        let n = self.rhs.len();
        let mut x = vec![0.0; n];
        for sweep in 0..1_000_000 {
            let mut change: f64 = 0.0;
            for i in 0..n {
                let mut s = self.rhs[i];
                for &(j, c) in &self.off[i] {
                    s -= c * x[j];
                }
                let v = s / self.diag[i];
                change = change.max((v - x[i]).abs());
                x[i] = v;
            }
            if change <= tol && sweep > 0 {
                return Ok(x);
            }
        }
        Err(ZdxError::NoConvergence { terms: 1_000_000, reason: "Gauss-Seidel stalled".into() })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Boundary {
    /// Outside cells take a fixed value (with exact skip-free overrides in 1D).
    Value(f64),
    /// Steps leaving the box are suppressed.
    Free,
    /// All outside cells are merged into one extra unknown.
    Wired,
}

/// Known value of `h(y) = P_y(hit p before 0)` outside the box, if the
/// skip-free structure forces it.
fn forced_outside(step: &IidStep, p: Point, y: Point) -> Option<f64> {
    if step.dim() != Dim::One {
        return None;
    }
    let max_up = step.atoms().iter().map(|a| a.0.x).max().unwrap_or(0);
    let max_down = -step.atoms().iter().map(|a| a.0.x).min().unwrap_or(0);
    let (toward, away) = if p.x > 0 { (max_up, max_down) } else { (max_down, max_up) };
    let (y, p) = if p.x > 0 { (y.x, p.x) } else { (-y.x, -p.x) };
    if y < 0 && toward <= 1 {
        // must pass through 0 before reaching p
        return Some(0.0);
    }
    if y > p && away <= 1 {
        return Some(1.0);
    }
    None
}

fn escape_probability(step: &IidStep, p: Point, r: i64, boundary: Boundary) -> Result<f64> {
    let grid = BoxGrid::new(step.dim(), r);
    let n_cells = grid.len();
    let i0 = grid.index(Point::ZERO).expect("origin inside");
    let ip = grid.index(p).expect("p inside");
    let unknown: Vec<usize> = (0..n_cells).filter(|&i| i != i0 && i != ip).collect();
    let mut col = vec![usize::MAX; n_cells];
    for (k, &i) in unknown.iter().enumerate() {
        col[i] = k;
    }
    let wired = boundary == Boundary::Wired;
    let n = unknown.len() + usize::from(wired);
    let moves: Vec<(Point, f64)> = step.atoms().iter().copied().filter(|a| !a.0.is_zero()).collect();
    let mut sys = System { diag: vec![0.0; n], off: vec![Vec::new(); n], rhs: vec![0.0; n] };
    let mut wire_diag = 0.0;
    for (k, &i) in unknown.iter().enumerate() {
        let x = grid.point(i);
        for &(s, w) in &moves {
            let y = x + s;
            match grid.index(y) {
                Some(j) if j == i0 => sys.diag[k] += w,
                Some(j) if j == ip => {
                    sys.diag[k] += w;
                    sys.rhs[k] += w;
                }
                Some(j) => {
                    sys.diag[k] += w;
                    sys.off[k].push((col[j], -w));
                }
                None => match boundary {
                    Boundary::Free => {}
                    Boundary::Wired => {
                        sys.diag[k] += w;
                        sys.off[k].push((n - 1, -w));
                        sys.off[n - 1].push((k, -w));
                        wire_diag += w;
                    }
                    Boundary::Value(b) => {
                        sys.diag[k] += w;
                        sys.rhs[k] += w * forced_outside(step, p, y).unwrap_or(b);
                    }
                },
            }
        }
    }
    if wired {
        sys.diag[n - 1] = wire_diag;
    }
    let h = if step.is_symmetric() { sys.solve_cg(1e-13)? } else { sys.solve_gauss_seidel(1e-14)? };
    let value_at = |y: Point| -> f64 {
        if y == p {
            1.0
        } else if y.is_zero() {
            0.0
        } else {
            h[col[grid.index(y).expect("step inside box")]]
        }
    };
    Ok(moves.iter().map(|&(s, w)| w * value_at(s)).sum())
}

const MAX_DP_RADIUS_1D: i64 = 1 << 15;
const MAX_DP_RADIUS_2D: i64 = 256;

/// Brackets `α(p)^{-1} = P_0(hit p before returning to 0)` by solving the
/// harmonic equation on boxes `|x|_∞ ≤ R`, doubling `R` from `box_radius`
/// until `hi − lo ≤ tol`.
///
/// The Dirichlet pair absorbs the walk at the box boundary into 0 (lower) or
/// into `p` (upper). For symmetric steps the free and wired network
/// restrictions give a second pair by Rayleigh monotonicity of the effective
/// resistance; the reported bracket is the intersection.
pub fn alpha_dp(step: &IidStep, p: Point, box_radius: i64, tol: f64) -> Result<AlphaBracket> {
    if p.is_zero() {
        return invalid("alpha_dp needs p != 0");
    }
    if !p.fits(step.dim()) {
        return invalid(format!("point {p} does not fit d={}", step.dim().get()));
    }
    if !(tol > 0.0) {
        return invalid("tol must be positive");
    }
    let max_step = step.atoms().iter().map(|a| a.0.norm_inf()).max().unwrap_or(1);
    let max_r = if step.dim() == Dim::One { MAX_DP_RADIUS_1D } else { MAX_DP_RADIUS_2D };
    let mut r = box_radius.max(p.norm_inf() + max_step + 1);
    let mut last = None;
    while r <= max_r {
        let dlo = escape_probability(step, p, r, Boundary::Value(0.0))?;
        let dhi = escape_probability(step, p, r, Boundary::Value(1.0))?;
        let network = if step.is_symmetric() {
            Some((escape_probability(step, p, r, Boundary::Free)?, escape_probability(step, p, r, Boundary::Wired)?))
        } else {
            None
        };
        let (mut lo, mut hi) = (dlo, dhi);
        if let Some((a, b)) = network {
            lo = lo.max(a);
            hi = hi.min(b);
        }
        // rounding can cross exact brackets by a few ulps
        if hi < lo {
            let m = 0.5 * (lo + hi);
            (lo, hi) = (m, m);
        }
        let b = AlphaBracket { p, lo, hi, radius: r, dirichlet: (dlo, dhi), network };
        if b.width() <= tol {
            return Ok(b);
        }
        last = Some(b);
        r *= 2;
    }
    let b = last.expect("at least one box");
    Err(ZdxError::BoxExhausted { radius: b.radius, width: b.width(), tol })
}

// ---------------------------------------------------------------------------
// Local times N_p

/// How an excursion's long sojourns are resolved when counting visits to a
/// single point `p`.
#[derive(Debug, Clone, Copy)]
pub enum Resolution<'a> {
    /// Plain simulation up to `cap` steps.
    Plain { cap: u64 },
    /// Skip-free 1D folding beyond the watch box (exact).
    Fold,
    /// Symmetric i.i.d. walks: once the walk is farther than `radius` from
    /// both 0 and `p`, draw whether it reaches `p` before 0 with probability
    /// `h(x) = (a(p) + a(x) − a(x−p)) / (2a(p))` and continue from `p` or stop.
    Harmonic { kernel: &'a PotentialKernel, radius: i64 },
}

/// Samples `N_p` for excursions from 0 (or, with `from_p`, the visit count
/// from a walk started at `p`, which has the law of `N_p | N_p > 0`).
#[derive(Debug, Clone)]
pub struct VisitSampler<'a> {
    driver: &'a Driver,
    p: Point,
    resolution: Resolution<'a>,
    fold: Option<Fold>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VisitSample {
    pub visits: u64,
    pub censored: bool,
}

impl<'a> VisitSampler<'a> {
    pub fn new(driver: &'a Driver, p: Point, resolution: Resolution<'a>) -> Result<Self> {
        if p.is_zero() || !p.fits(driver.dim()) {
            return invalid(format!("invalid target {p}"));
        }
        let fold = match resolution {
            Resolution::Fold => {
                let (down_state, up_state) =
                    fold_states(driver).ok_or_else(|| ZdxError::Invalid("folding needs a skip-free 1D driver".into()))?;
                Some(Fold { radius: p.norm_inf(), down_state, up_state })
            }
            Resolution::Harmonic { kernel, .. } => {
                let step = driver.as_iid().ok_or_else(|| ZdxError::Invalid("harmonic resolution needs an i.i.d. driver".into()))?;
                if !step.is_symmetric() || kernel.dim != driver.dim() {
                    return invalid("harmonic resolution needs a symmetric step and a matching kernel");
                }
                None
            }
            Resolution::Plain { .. } => None,
        };
        Ok(VisitSampler { driver, p, resolution, fold })
    }

    /// The natural resolution for a driver: harmonic when a kernel is given
    /// and the walk is symmetric i.i.d., folding for skip-free 1D drivers,
    /// plain simulation otherwise.
    pub fn auto(driver: &'a Driver, p: Point, kernel: Option<&'a PotentialKernel>, cap: u64) -> Result<Self> {
        let symmetric_iid = driver.as_iid().is_some_and(|s| s.is_symmetric());
        let res = match kernel {
            Some(k) if symmetric_iid && k.dim == driver.dim() => Resolution::Harmonic { kernel: k, radius: far_radius(p) },
            _ if fold_states(driver).is_some() => Resolution::Fold,
            _ => Resolution::Plain { cap },
        };
        VisitSampler::new(driver, p, res)
    }

    pub fn sample(&self, rng: &mut Stream, from_p: bool) -> VisitSample {
        let mut w = Walker::new(self.driver, rng);
        let p = self.p;
        let mut visits = 0u64;
        if from_p {
            w.pos = p;
            visits = 1;
        }
        let cap = match self.resolution {
            Resolution::Plain { cap } => cap,
            _ => u64::MAX,
        };
        let mut steps = 0u64;
        loop {
            if steps >= cap {
                return VisitSample { visits, censored: true };
            }
            w.step(rng);
            steps += 1;
            let x = w.pos;
            if x.is_zero() {
                return VisitSample { visits, censored: false };
            }
            if x == p {
                visits += 1;
                continue;
            }
            match self.resolution {
                Resolution::Harmonic { kernel, radius } => {
                    if x.norm_inf() > radius && (x - p).norm_inf() > radius {
                        if open01(rng) < kernel.hit_before_zero(x, p) {
                            w.pos = p;
                            visits += 1;
                        } else {
                            return VisitSample { visits, censored: false };
                        }
                    }
                }
                Resolution::Fold => {
                    let f = self.fold.expect("fold states");
                    if x.x > f.radius {
                        w.pos = Point::d1(f.radius);
                        w.state = f.down_state;
                        if w.pos == p {
                            visits += 1;
                        }
                    } else if x.x < -f.radius {
                        w.pos = Point::d1(-f.radius);
                        w.state = f.up_state;
                        if w.pos == p {
                            visits += 1;
                        }
                    }
                }
                Resolution::Plain { .. } => {}
            }
        }
    }
}

/// Distance from both 0 and `p` beyond which the harmonic resolution applies.
pub fn far_radius(p: Point) -> i64 {
    p.norm_inf().max(8)
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbEstimate {
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct HitStats {
    pub p: Point,
    pub n_excursions: u64,
    /// `α̂(p)` as the inverse hit frequency, with the inverted Wilson interval.
    pub alpha_hat: ProbEstimate,
    /// Histogram of `N_p | N_p > 0` as `(k, count)`.
    pub conditional_np: Vec<(u64, u64)>,
    pub conditional_mean: MeanSe,
    /// `E[N_{0,p}]`, the number of excursions before the first that hits `p`.
    pub n0p_mean: MeanSe,
    /// `(q, E|f_{p,{0}}|^q)` with batch-bootstrap standard errors.
    pub moments: Vec<(f64, MeanSe)>,
    pub censored: u64,
    pub censor_rate: f64,
    pub unreliable: bool,
}

#[derive(Debug, Clone)]
pub struct HitConfig<'a> {
    pub moments: Vec<f64>,
    pub cap: u64,
    pub kernel: Option<&'a PotentialKernel>,
}

impl Default for HitConfig<'_> {
    fn default() -> Self {
        HitConfig { moments: vec![1.0, 2.0, 3.0], cap: DEFAULT_CAP, kernel: None }
    }
}

pub fn hit_stats(driver: &Driver, p: Point, n_excursions: u64, seed: u64, cfg: &HitConfig) -> Result<HitStats> {
    if n_excursions < 1000 {
        return invalid("hit_stats needs at least 1000 excursions");
    }
    let sampler = VisitSampler::auto(driver, p, cfg.kernel, cfg.cap)?;
    let streams = StreamFactory::new(seed, "hit").derive(&format!("{p}"));
    let samples: Vec<VisitSample> = run_batches(n_excursions, &streams, |rng| sampler.sample(rng, false));
    let censored = samples.iter().filter(|s| s.censored).count() as u64;
    let valid: Vec<u64> = samples.iter().filter(|s| !s.censored).map(|s| s.visits).collect();
    let n = valid.len() as u64;
    let hits = valid.iter().filter(|&&v| v > 0).count() as u64;
    if hits == 0 {
        return Err(ZdxError::Numerical(format!("no excursion hit {p}")));
    }
    let (plo, phi) = wilson(hits, n, 1.96);
    let alpha_hat = ProbEstimate { value: n as f64 / hits as f64, lo: 1.0 / phi, hi: 1.0 / plo };

    let mut hist: BTreeMap<u64, u64> = BTreeMap::new();
    for &v in valid.iter().filter(|&&v| v > 0) {
        *hist.entry(v).or_default() += 1;
    }
    let cond: Vec<f64> = valid.iter().filter(|&&v| v > 0).map(|&v| v as f64).collect();

    // runs of non-hitting excursions, in excursion order; the trailing
    // incomplete run is dropped
    let mut runs = Vec::new();
    let mut current = 0u64;
    for &v in &valid {
        if v > 0 {
            runs.push(current as f64);
            current = 0;
        } else {
            current += 1;
        }
    }

    let xs_f: Vec<f64> = valid.iter().map(|&v| v as f64 - 1.0).collect();
    let moments = cfg.moments.iter().map(|&q| (q, batch_bootstrap_mean(&xs_f, |x| x.abs().powf(q), seed))).collect();
    let censor_rate = censored as f64 / n_excursions as f64;
    Ok(HitStats {
        p,
        n_excursions,
        alpha_hat,
        conditional_np: hist.into_iter().collect(),
        conditional_mean: mean_se(&cond),
        n0p_mean: mean_se(&runs),
        moments,
        censored,
        censor_rate,
        unreliable: censor_rate > CENSOR_LIMIT,
    })
}

/// Mean of `g(x)` with a bootstrap standard error over 100 contiguous blocks.
fn batch_bootstrap_mean<G: Fn(f64) -> f64>(xs: &[f64], g: G, seed: u64) -> MeanSe {
    let vals: Vec<f64> = xs.iter().map(|&x| g(x)).collect();
    let n = vals.len();
    let mean = vals.iter().sum::<f64>() / n as f64;
    let blocks = 100.min(n);
    let size = n / blocks;
    let block_means: Vec<f64> = (0..blocks).map(|b| vals[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64).collect();
    let mut rng = StreamFactory::new(seed, "bootstrap").stream(0);
    let se = crate::stats::bootstrap_se(&block_means, |v| v.iter().sum::<f64>() / v.len() as f64, 200, &mut rng);
    MeanSe { mean, se, n: n as u64 }
}

/// Samples of `N_p | N_p > 0`. For symmetric i.i.d. walks with a kernel the
/// walk is started at `p` (by the strong Markov property this is the
/// conditional law, and no rejection is needed); otherwise excursions are
/// simulated and those that miss `p` are rejected.
pub fn conditioned_visits(
    driver: &Driver,
    p: Point,
    n_conditioned: usize,
    seed: u64,
    kernel: Option<&PotentialKernel>,
    max_attempts: u64,
) -> Result<Vec<u64>> {
    let sampler = VisitSampler::auto(driver, p, kernel, DEFAULT_CAP)?;
    let streams = StreamFactory::new(seed, "conditioned").derive(&format!("{p}"));
    if matches!(sampler.resolution, Resolution::Harmonic { .. }) || (driver.as_iid().is_some() && fold_states(driver).is_some()) {
        let s: Vec<VisitSample> = run_batches(n_conditioned as u64, &streams, |rng| sampler.sample(rng, true));
        return Ok(s.into_iter().map(|v| v.visits).collect());
    }
    let mut out = Vec::with_capacity(n_conditioned);
    let mut round = 0u64;
    let chunk = (n_conditioned as u64).max(BATCH);
    while out.len() < n_conditioned {
        if round * chunk >= max_attempts {
            return Err(ZdxError::NoConvergence {
                terms: out.len(),
                reason: format!("rejection sampling reached {max_attempts} excursions"),
            });
        }
        let sub = streams.derive(&round.to_string());
        let s: Vec<VisitSample> = run_batches(chunk, &sub, |rng| sampler.sample(rng, false));
        out.extend(s.into_iter().filter(|v| !v.censored && v.visits > 0).map(|v| v.visits));
        round += 1;
    }
    out.truncate(n_conditioned);
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct ExpLawReport {
    pub p: Point,
    pub n_conditioned: usize,
    /// `E[N_p | N_p > 0]`, which equals `α(p)` for i.i.d. walks.
    pub alpha_hat: f64,
    pub ks_stat: f64,
    /// `(C, κ)` from `log P(N_p/α̂ > t) ≈ log C − κ t` on `t ∈ [1, 5]`.
    pub tail_fit: Option<(f64, f64)>,
    /// KS distance of `Geom(1/α̂)/α̂` from `Exp(1)`.
    pub geometric_ks: f64,
}

pub fn exp_law_test(driver: &Driver, p: Point, n_conditioned: usize, seed: u64, kernel: Option<&PotentialKernel>) -> Result<ExpLawReport> {
    let samples = conditioned_visits(driver, p, n_conditioned, seed, kernel, 4_000_000)?;
    Ok(exp_law_from_samples(p, &samples))
}

pub fn exp_law_from_samples(p: Point, samples: &[u64]) -> ExpLawReport {
    let alpha_hat = samples.iter().sum::<u64>() as f64 / samples.len() as f64;
    let scaled: Vec<f64> = samples.iter().map(|&v| v as f64 / alpha_hat).collect();
    let ks_stat = ks_statistic(&scaled, |t| 1.0 - (-t).exp());
    let mut sorted = scaled.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = sorted.len() as f64;
    let ts: Vec<f64> = (0..=16).map(|i| 1.0 + 0.25 * i as f64).collect();
    let surv: Vec<f64> = ts.iter().map(|&t| (sorted.len() - sorted.partition_point(|&x| x <= t)) as f64 / n).collect();
    ExpLawReport {
        p,
        n_conditioned: samples.len(),
        alpha_hat,
        ks_stat,
        tail_fit: exp_tail_fit(&ts, &surv),
        geometric_ks: geometric_exp_ks(alpha_hat),
    }
}

/// Exact KS distance between the law of `N/α` with `N ~ Geom(1/α)` on
/// `{1, 2, …}` and `Exp(1)`.
pub fn geometric_exp_ks(alpha: f64) -> f64 {
    let q = 1.0 / alpha;
    let mut d: f64 = 0.0;
    // on [k/α, (k+1)/α) the geometric CDF is 1 − (1−q)^k
    for k in 0..100_000u32 {
        let surv = (1.0 - q).powi(k as i32);
        let a = ((-(k as f64) / alpha).exp() - surv).abs();
        let b = ((-((k + 1) as f64) / alpha).exp() - surv).abs();
        d = d.max(a).max(b);
        if surv < 1e-16 {
            break;
        }
    }
    d
}

#[derive(Debug, Clone, Serialize)]
pub struct NormBoundReport {
    pub q: f64,
    /// Monte Carlo `‖f_{{0}}‖_q`.
    pub estimate: f64,
    /// `Σ_p α̂(p)^{1−1/q} |β(p)|`.
    pub bound: f64,
    /// `max_p ‖N_p‖_q / α̂(p)^{1−1/q}`; Minkowski's inequality gives
    /// `estimate ≤ constant · bound`.
    pub constant: f64,
    pub holds: bool,
    pub censored: u64,
    pub n_excursions: u64,
}

pub fn induced_norm_bound(driver: &Driver, obs: &Observable, q: f64, n_excursions: u64, seed: u64, cap: u64) -> Result<NormBoundReport> {
    if !(q >= 1.0) {
        return invalid("q must be at least 1");
    }
    if obs.is_zero() {
        return Ok(NormBoundReport { q, estimate: 0.0, bound: 0.0, constant: 0.0, holds: true, censored: 0, n_excursions });
    }
    let fold = fold_states(driver).is_some();
    let sampler = ExcursionSampler::new(driver, std::slice::from_ref(obs), &[], ExcursionOptions { cap, fold })?;
    let pts: Vec<Point> = obs.points().collect();
    let streams = StreamFactory::new(seed, "norm");
    let recs: Vec<Option<(f64, Vec<u64>)>> = run_batches(n_excursions, &streams, |rng| {
        let r = sampler.sample(rng);
        (!r.censored).then(|| (r.induced_sums[0], pts.iter().map(|&p| r.visits_to(p)).collect()))
    });
    let censored = recs.iter().filter(|r| r.is_none()).count() as u64;
    let valid: Vec<&(f64, Vec<u64>)> = recs.iter().flatten().collect();
    let n = valid.len() as f64;
    let estimate = (valid.iter().map(|r| r.0.abs().powf(q)).sum::<f64>() / n).powf(1.0 / q);
    let mut bound = 0.0;
    let mut constant: f64 = 0.0;
    for (i, &p) in pts.iter().enumerate() {
        let hits = valid.iter().filter(|r| r.1[i] > 0).count() as f64;
        let alpha = n / hits.max(1.0);
        let np_norm = (valid.iter().map(|r| (r.1[i] as f64).powf(q)).sum::<f64>() / n).powf(1.0 / q);
        let a = alpha.powf(1.0 - 1.0 / q);
        bound += a * obs.weight(p).abs();
        constant = constant.max(np_norm / a);
    }
    Ok(NormBoundReport {
        q,
        estimate,
        bound,
        constant,
        holds: estimate <= constant * bound * (1.0 + 1e-12),
        censored,
        n_excursions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::MarkovDriver;
    use crate::kernel::SeriesOptions;
    use crate::lattice::make_fp;
    use approx::assert_abs_diff_eq;

    fn lazy1() -> Driver {
        IidStep::lazy_1d().into()
    }

    #[test]
    fn excursion_basics() {
        let d = lazy1();
        let f1 = make_fp(Dim::One, Point::d1(1)).unwrap();
        let s = ExcursionSampler::new(&d, std::slice::from_ref(&f1), &[], ExcursionOptions::default()).unwrap();
        let mut rng = StreamFactory::new(1, "t").stream(0);
        for _ in 0..2000 {
            let r = s.sample(&mut rng);
            assert_eq!(r.visits_to(Point::ZERO), 1);
            assert!(r.length >= 1);
            // f_{1,{0}} = N_1 − 1
            assert_eq!(r.induced_sums[0], r.visits_to(Point::d1(1)) as f64 - 1.0);
            if r.length == 1 {
                assert_eq!(r.visits_to(Point::d1(1)), 0);
            }
        }
    }

    #[test]
    fn excursion_is_deterministic() {
        let d: Driver = MarkovDriver::three_state().into();
        let s = ExcursionSampler::new(&d, &[], &[Point::d1(2)], ExcursionOptions::default()).unwrap();
        let a = s.sample(&mut StreamFactory::new(5, "t").stream(9));
        let b = s.sample(&mut StreamFactory::new(5, "t").stream(9));
        assert_eq!(a, b);
    }

    #[test]
    fn cap_censors() {
        let d = lazy1();
        let s = ExcursionSampler::new(&d, &[], &[Point::d1(1)], ExcursionOptions { cap: 3, fold: false }).unwrap();
        let mut rng = StreamFactory::new(2, "t").stream(0);
        let recs: Vec<_> = (0..1000).map(|_| s.sample(&mut rng)).collect();
        assert!(recs.iter().any(|r| r.censored));
        assert!(recs.iter().all(|r| r.length <= 3));
    }

    #[test]
    fn hit_probability_is_a_quarter() {
        let d = lazy1();
        let sampler = VisitSampler::auto(&d, Point::d1(1), None, DEFAULT_CAP).unwrap();
        let streams = StreamFactory::new(3, "t");
        let v: Vec<VisitSample> = run_batches(40_000, &streams, |rng| sampler.sample(rng, false));
        let hits = v.iter().filter(|s| s.visits > 0).count() as f64 / v.len() as f64;
        assert!((hits - 0.25).abs() < 4.0 * (0.25f64 * 0.75 / 40_000.0).sqrt(), "{hits}");
    }

    #[test]
    fn kac_enumeration_is_one() {
        for p in [1, 2, 3, -2] {
            let e = kac_enumeration_skip_free(&IidStep::lazy_1d(), p, 1e-12).unwrap();
            assert_abs_diff_eq!(e, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn alpha_dp_lazy_1d_is_exact() {
        let b = alpha_dp(&IidStep::lazy_1d(), Point::d1(1), 4, 1e-12).unwrap();
        assert_abs_diff_eq!(b.lo, 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(b.hi, 0.25, epsilon = 1e-12);
        let b = alpha_dp(&IidStep::lazy_1d(), Point::d1(-3), 4, 1e-10).unwrap();
        assert_abs_diff_eq!(b.mid(), 1.0 / 12.0, epsilon = 1e-10);
        assert!(alpha_dp(&IidStep::lazy_1d(), Point::ZERO, 4, 1e-3).is_err());
    }

    #[test]
    fn alpha_dp_lazy_2d_contains_a_quarter() {
        let b = alpha_dp(&IidStep::lazy_2d(), Point::d2(1, 0), 8, 1e-3).unwrap();
        assert!(b.lo <= 0.25 + 1e-12 && b.hi >= 0.25 - 1e-12, "{b:?}");
        let (flo, fhi) = b.network.unwrap();
        assert!(flo <= fhi);
        assert!(b.dirichlet.0 <= b.dirichlet.1);
    }

    #[test]
    fn geometric_ks_closed_form() {
        // α = 4: the largest gap is at t → 1/4⁻ where Exp(1) has mass 1 − e^{−1/4}
        assert_abs_diff_eq!(geometric_exp_ks(4.0), 1.0 - (-0.25f64).exp(), epsilon = 1e-12);
        assert!(geometric_exp_ks(50.0) < geometric_exp_ks(10.0));
    }

    #[test]
    fn harmonic_resolution_matches_exact_kernel() {
        let d = lazy1();
        let k = PotentialKernel::build(&d, 8, SeriesOptions { tol: 1e-7, max_horizon: 1 << 17, cut: 8.0 }).unwrap();
        let cfg = HitConfig { moments: vec![2.0], cap: DEFAULT_CAP, kernel: Some(&k) };
        let h = hit_stats(&d, Point::d1(3), 100_000, 11, &cfg).unwrap();
        // α(3) = g(3) = 12; E f² = 2α − 2 = 22
        assert!((h.alpha_hat.lo..=h.alpha_hat.hi).contains(&12.0), "{:?}", h.alpha_hat);
        let m = h.moments[0].1;
        assert!((m.mean - 22.0).abs() < 4.0 * m.se, "{m:?}");
        assert!((h.n0p_mean.mean - 11.0).abs() < 4.0 * h.n0p_mean.se);
    }

    #[test]
    fn norm_bound_examples() {
        let d = lazy1();
        let f1 = make_fp(Dim::One, Point::d1(1)).unwrap();
        let r = induced_norm_bound(&d, &f1, 2.0, 200_000, 4, DEFAULT_CAP).unwrap();
        assert!((r.estimate.powi(2) - 6.0).abs() < 0.25, "{r:?}");
        assert!(r.holds);
        let z = induced_norm_bound(&d, &Observable::zero(Dim::One), 2.0, 1000, 4, DEFAULT_CAP).unwrap();
        assert_eq!(z.estimate, 0.0);
        let o = Observable::centred(Dim::One, vec![(Point::d1(2), 1.0), (Point::d1(-2), 1.0), (Point::ZERO, -2.0)]).unwrap();
        let r = induced_norm_bound(&d, &o, 2.0, 50_000, 4, DEFAULT_CAP).unwrap();
        assert!(r.estimate.is_finite() && r.holds);
    }
}
