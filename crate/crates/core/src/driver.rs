//! Step-law generators: i.i.d. lattice walks and finite-state Markov chains
//! with a lattice step attached to each state.
//!
//! Markov convention: the chain starts from its stationary law, moves
//! `X_k → X_{k+1}` by the transition matrix and the walk increments by
//! `F(X_{k+1})`. An i.i.d. walk is the chain whose states are its atoms and
//! whose rows all equal the atom probabilities.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::RngCore;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, ZdxError};
use crate::exec::Exec;
use crate::lattice::{Dim, Point};
use crate::linalg::{self, CMat};
use crate::rng::{Bits, Stream};

const PROB_TOL: f64 = 1e-12;
const STATIONARY_TOL: f64 = 1e-10;

/// An i.i.d. step law with finitely many atoms and zero mean.
#[derive(Debug, Clone, PartialEq)]
pub struct IidStep {
    dim: Dim,
    atoms: Vec<(Point, f64)>,
}

impl IidStep {
    pub fn new(dim: Dim, atoms: Vec<(Point, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return invalid("step law needs at least one atom");
        }
        for (i, (p, w)) in atoms.iter().enumerate() {
            if !p.fits(dim) {
                return invalid(format!("atom {p} does not fit d={}", dim.get()));
            }
            if !(*w > 0.0) {
                return invalid(format!("atom {p} has non-positive probability {w}"));
            }
            if atoms[..i].iter().any(|(q, _)| q == p) {
                return invalid(format!("atom {p} repeated"));
            }
        }
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        if (total - 1.0).abs() > PROB_TOL {
            return invalid(format!("probabilities sum to {total}"));
        }
        let (mx, my) = atoms.iter().fold((0.0, 0.0), |(x, y), (p, w)| (x + w * p.x as f64, y + w * p.y as f64));
        if mx.abs() > PROB_TOL || my.abs() > PROB_TOL {
            return invalid(format!("mean step ({mx}, {my}) is not zero"));
        }
        Ok(IidStep { dim, atoms })
    }

    /// Stay 1/2, ±1 each 1/4.
    pub fn lazy_1d() -> Self {
        IidStep::new(Dim::One, vec![(Point::d1(0), 0.5), (Point::d1(1), 0.25), (Point::d1(-1), 0.25)]).unwrap()
    }

    /// Stay 1/2, each of the four neighbours 1/8.
    pub fn lazy_2d() -> Self {
        IidStep::new(
            Dim::Two,
            vec![
                (Point::ZERO, 0.5),
                (Point::d2(1, 0), 0.125),
                (Point::d2(-1, 0), 0.125),
                (Point::d2(0, 1), 0.125),
                (Point::d2(0, -1), 0.125),
            ],
        )
        .unwrap()
    }

    /// ±1 with probability 1/2 each (periodic).
    pub fn simple_1d() -> Self {
        IidStep::new(Dim::One, vec![(Point::d1(1), 0.5), (Point::d1(-1), 0.5)]).unwrap()
    }

    pub fn dim(&self) -> Dim {
        self.dim
    }

    pub fn atoms(&self) -> &[(Point, f64)] {
        &self.atoms
    }

    pub fn prob(&self, p: Point) -> f64 {
        self.atoms.iter().find(|(q, _)| *q == p).map_or(0.0, |a| a.1)
    }

    /// `φ(u) = Σ p_a e^{i⟨u,a⟩}`.
    pub fn char_fn(&self, u: &[f64]) -> Complex64 {
        self.atoms.iter().map(|(a, w)| Complex64::from_polar(*w, a.dot(u))).sum()
    }

    /// Step covariance matrix.
    pub fn covariance(&self) -> [[f64; 2]; 2] {
        let mut c = [[0.0; 2]; 2];
        for (p, w) in &self.atoms {
            let v = [p.x as f64, p.y as f64];
            for i in 0..2 {
                for j in 0..2 {
                    c[i][j] += w * v[i] * v[j];
                }
            }
        }
        c
    }

    pub fn is_symmetric(&self) -> bool {
        self.atoms.iter().all(|(p, w)| (self.prob(-*p) - w).abs() <= PROB_TOL)
    }
}

/// A stationary finite-state Markov chain with a lattice step per state.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovDriver {
    dim: Dim,
    transition: Vec<Vec<f64>>,
    stationary: Vec<f64>,
    step: Vec<Point>,
}

impl MarkovDriver {
    /// Validates the chain; the stationary law is computed when not supplied.
    pub fn new(dim: Dim, transition: Vec<Vec<f64>>, step: Vec<Point>, stationary: Option<Vec<f64>>) -> Result<Self> {
        Self::build(dim, transition, step, stationary, true)
    }

    /// As [`MarkovDriver::new`] without the zero-drift requirement; used for
    /// chains that only carry state observables.
    pub fn new_state_chain(transition: Vec<Vec<f64>>, stationary: Option<Vec<f64>>) -> Result<Self> {
        let n = transition.len();
        Self::build(Dim::One, transition, vec![Point::ZERO; n], stationary, false)
    }

    fn build(
        dim: Dim,
        transition: Vec<Vec<f64>>,
        step: Vec<Point>,
        stationary: Option<Vec<f64>>,
        require_centred: bool,
    ) -> Result<Self> {
        let n = transition.len();
        if n == 0 {
            return invalid("chain needs at least one state");
        }
        if step.len() != n {
            return invalid(format!("{} steps for {n} states", step.len()));
        }
        for (s, row) in transition.iter().enumerate() {
            if row.len() != n {
                return invalid(format!("transition row {s} has length {}", row.len()));
            }
            if row.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                return invalid(format!("transition row {s} has a negative or non-finite entry"));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > PROB_TOL {
                return invalid(format!("transition row {s} sums to {sum}"));
            }
        }
        if let Some(p) = step.iter().find(|p| !p.fits(dim)) {
            return invalid(format!("step {p} does not fit d={}", dim.get()));
        }
        if !irreducible(&transition) {
            return invalid("transition matrix is not irreducible");
        }
        let stationary = match stationary {
            Some(mu) => mu,
            None => stationary_law(&transition)?,
        };
        if stationary.len() != n {
            return invalid("stationary vector has the wrong length");
        }
        let mass: f64 = stationary.iter().sum();
        if (mass - 1.0).abs() > STATIONARY_TOL || stationary.iter().any(|&m| m < 0.0) {
            return invalid("stationary vector is not a probability vector");
        }
        let residual: f64 = (0..n)
            .map(|j| ((0..n).map(|i| stationary[i] * transition[i][j]).sum::<f64>() - stationary[j]).abs())
            .sum();
        if residual > STATIONARY_TOL {
            return invalid(format!("stationarity residual {residual:e}"));
        }
        if require_centred {
            let (mx, my) = (0..n).fold((0.0, 0.0), |(x, y), s| {
                (x + stationary[s] * step[s].x as f64, y + stationary[s] * step[s].y as f64)
            });
            if mx.abs() > STATIONARY_TOL || my.abs() > STATIONARY_TOL {
                return invalid(format!("stationary mean step ({mx}, {my}) is not zero"));
            }
        }
        Ok(MarkovDriver { dim, transition, stationary, step })
    }

    /// Three states with steps +1, −1, 0 and a non-reversible circulant
    /// transition matrix; the stationary law is uniform.
    pub fn three_state() -> Self {
        MarkovDriver::new(
            Dim::One,
            vec![vec![0.2, 0.5, 0.3], vec![0.3, 0.2, 0.5], vec![0.5, 0.3, 0.2]],
            vec![Point::d1(1), Point::d1(-1), Point::d1(0)],
            None,
        )
        .unwrap()
    }

    /// `M` blocks of two states visited cyclically, with zero steps. The
    /// return time to block 0 is exactly `M`.
    pub fn cyclic_blocks(m: usize) -> Result<Self> {
        if m < 2 {
            return invalid("cyclic block chain needs M >= 2");
        }
        let kernels = [[0.7, 0.3], [0.4, 0.6], [0.1, 0.9], [0.55, 0.45]];
        let n = 2 * m;
        let mut t = vec![vec![0.0; n]; n];
        for b in 0..m {
            let next = (b + 1) % m;
            for i in 0..2 {
                let row = kernels[(2 * b + i) % kernels.len()];
                t[2 * b + i][2 * next] = row[0];
                t[2 * b + i][2 * next + 1] = row[1];
            }
        }
        MarkovDriver::new_state_chain(t, None)
    }

    pub fn dim(&self) -> Dim {
        self.dim
    }

    pub fn n_states(&self) -> usize {
        self.transition.len()
    }

    pub fn transition(&self) -> &[Vec<f64>] {
        &self.transition
    }

    pub fn stationary(&self) -> &[f64] {
        &self.stationary
    }

    pub fn step(&self) -> &[Point] {
        &self.step
    }

    /// Twisted matrix with entries `P[s][s'] e^{i⟨u, F(s')⟩}`.
    pub fn twisted(&self, u: &[f64]) -> CMat {
        let n = self.n_states();
        let phase: Vec<Complex64> = self.step.iter().map(|p| Complex64::from_polar(1.0, p.dot(u))).collect();
        CMat::from_fn(n, n, |i, j| phase[j] * self.transition[i][j])
    }

    /// `𝔼 e^{i⟨u, S_n⟩} = μ P_uⁿ 1`, by repeated squaring.
    pub fn char_fn_n(&self, u: &[f64], n: u64) -> Complex64 {
        let pu = self.twisted(u);
        let k = self.n_states();
        let mut v: Vec<Complex64> = self.stationary.iter().map(|&m| Complex64::new(m, 0.0)).collect();
        let mut base = pu;
        let mut e = n;
        while e > 0 {
            if e & 1 == 1 {
                v = (0..k).map(|j| (0..k).map(|i| v[i] * base[(i, j)]).sum()).collect();
            }
            e >>= 1;
            if e > 0 {
                base = &base * &base;
            }
        }
        v.iter().sum()
    }
}

/// Strong connectivity of the transition graph.
fn irreducible(t: &[Vec<f64>]) -> bool {
    let n = t.len();
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(s) = stack.pop() {
            for r in 0..n {
                let w = if forward { t[s][r] } else { t[r][s] };
                if w > 0.0 && !seen[r] {
                    seen[r] = true;
                    stack.push(r);
                }
            }
        }
        seen.iter().all(|&b| b)
    };
    reach(true) && reach(false)
}

/// Left Perron vector of a row-stochastic matrix.
fn stationary_law(t: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = t.len();
    // Solve μ (I − P + 1 1ᵀ) = 1ᵀ.
    let a = nalgebra::DMatrix::from_fn(n, n, |i, j| (if i == j { 1.0 } else { 0.0 }) - t[j][i] + 1.0);
    let b = nalgebra::DVector::from_element(n, 1.0);
    let mu = linalg::solve_real(&a, &b)?;
    Ok(mu.iter().copied().collect())
}

/// Either kind of driver.
#[derive(Debug, Clone, PartialEq)]
pub enum Driver {
    Iid(IidStep),
    Markov(MarkovDriver),
}

impl From<IidStep> for Driver {
    fn from(s: IidStep) -> Self {
        Driver::Iid(s)
    }
}

impl From<MarkovDriver> for Driver {
    fn from(m: MarkovDriver) -> Self {
        Driver::Markov(m)
    }
}

/// Names accepted by [`Driver::fixture`].
pub const FIXTURES: [&str; 6] = ["lazy1d", "lazy2d", "markov3", "simple1d", "cyclic2", "cyclic3"];

impl Driver {
    pub fn fixture(name: &str) -> Result<Driver> {
        Ok(match name {
            "lazy1d" => IidStep::lazy_1d().into(),
            "lazy2d" => IidStep::lazy_2d().into(),
            "markov3" => MarkovDriver::three_state().into(),
            "simple1d" => IidStep::simple_1d().into(),
            "cyclic2" => MarkovDriver::cyclic_blocks(2)?.into(),
            "cyclic3" => MarkovDriver::cyclic_blocks(3)?.into(),
            _ => return invalid(format!("unknown fixture `{name}`; known: {}", FIXTURES.join(", "))),
        })
    }

    pub fn dim(&self) -> Dim {
        match self {
            Driver::Iid(s) => s.dim(),
            Driver::Markov(m) => m.dim(),
        }
    }

    pub fn as_iid(&self) -> Option<&IidStep> {
        match self {
            Driver::Iid(s) => Some(s),
            Driver::Markov(_) => None,
        }
    }

    /// The driver as a Markov chain; i.i.d. walks become chains on their atoms.
    pub fn to_markov(&self) -> MarkovDriver {
        match self {
            Driver::Markov(m) => m.clone(),
            Driver::Iid(s) => {
                let probs: Vec<f64> = s.atoms.iter().map(|a| a.1).collect();
                MarkovDriver {
                    dim: s.dim,
                    transition: vec![probs.clone(); probs.len()],
                    stationary: probs,
                    step: s.atoms.iter().map(|a| a.0).collect(),
                }
            }
        }
    }

    /// Largest `|F|_∞` over the step support.
    pub fn max_step(&self) -> i64 {
        match self {
            Driver::Iid(s) => s.atoms.iter().map(|a| a.0.norm_inf()).max().unwrap_or(0),
            Driver::Markov(m) => m.step.iter().map(|p| p.norm_inf()).max().unwrap_or(0),
        }
    }

    /// `𝔼 e^{i⟨u, S_n⟩}`.
    pub fn char_fn_n(&self, u: &[f64], n: u64) -> Complex64 {
        match self {
            Driver::Iid(s) => s.char_fn(u).powu(n as u32),
            Driver::Markov(m) => m.char_fn_n(u, n),
        }
    }

    /// Whether the law of `S_n` is invariant under `a ↦ −a`.
    pub fn is_symmetric(&self) -> bool {
        match self {
            Driver::Iid(s) => s.is_symmetric(),
            Driver::Markov(_) => false,
        }
    }

    /// Largest per-axis standard deviation of one step, used to size
    /// propagation windows. Markov chains use the marginal step law.
    pub(crate) fn step_spread(&self) -> f64 {
        let m = self.to_markov();
        let (vx, vy) = m
            .stationary
            .iter()
            .zip(&m.step)
            .fold((0.0, 0.0), |(x, y), (w, p)| (x + w * (p.x * p.x) as f64, y + w * (p.y * p.y) as f64));
        vx.max(vy).sqrt()
    }

    pub fn from_json(text: &str) -> Result<Driver> {
        let spec: DriverSpec = serde_json::from_str(text)?;
        spec.build()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&DriverSpec::from(self)).expect("driver serialises")
    }
}

/// JSON form of a driver.
///
/// `{"kind":"iid","d":1,"atoms":[[[1],0.25],[[0],0.5],[[-1],0.25]]}` or
/// `{"kind":"markov","d":1,"transition":[[..]],"step":[[1],[-1],[0]]}` with
/// an optional `"stationary"` vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DriverSpec {
    Iid {
        d: usize,
        atoms: Vec<(Vec<i64>, f64)>,
    },
    Markov {
        d: usize,
        transition: Vec<Vec<f64>>,
        step: Vec<Vec<i64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        stationary: Option<Vec<f64>>,
    },
}

impl DriverSpec {
    pub fn build(self) -> Result<Driver> {
        let point = |c: &[i64], d: Dim| -> Result<Point> {
            if c.len() != d.get() {
                return Err(ZdxError::Dimension { expected: d.get(), got: c.len() });
            }
            Point::from_coords(c)
        };
        match self {
            DriverSpec::Iid { d, atoms } => {
                let d = Dim::try_from(d)?;
                let atoms = atoms.iter().map(|(c, w)| Ok((point(c, d)?, *w))).collect::<Result<Vec<_>>>()?;
                Ok(IidStep::new(d, atoms)?.into())
            }
            DriverSpec::Markov { d, transition, step, stationary } => {
                let d = Dim::try_from(d)?;
                let step = step.iter().map(|c| point(c, d)).collect::<Result<Vec<_>>>()?;
                Ok(MarkovDriver::new(d, transition, step, stationary)?.into())
            }
        }
    }
}

impl From<&Driver> for DriverSpec {
    fn from(d: &Driver) -> Self {
        match d {
            Driver::Iid(s) => DriverSpec::Iid {
                d: s.dim.get(),
                atoms: s.atoms.iter().map(|(p, w)| (p.coords(s.dim), *w)).collect(),
            },
            Driver::Markov(m) => DriverSpec::Markov {
                d: m.dim.get(),
                transition: m.transition.clone(),
                step: m.step.iter().map(|p| p.coords(m.dim)).collect(),
                stationary: Some(m.stationary.clone()),
            },
        }
    }
}

/// Sampler for a finite categorical law. Dyadic laws use a bit-indexed
/// table; other laws use Walker's alias method.
#[derive(Debug, Clone)]
pub enum Categorical {
    Const(u32),
    Dyadic { bits: u32, table: Vec<u32> },
    Alias { prob: Vec<f64>, alias: Vec<u32> },
}

impl Categorical {
    pub fn new(probs: &[f64]) -> Self {
        let n = probs.len();
        if let Some(i) = probs.iter().position(|&p| p >= 1.0 - PROB_TOL) {
            return Categorical::Const(i as u32);
        }
        for bits in 1..=10u32 {
            let scale = (1u64 << bits) as f64;
            let counts: Vec<f64> = probs.iter().map(|p| (p * scale).round()).collect();
            let exact = probs.iter().zip(&counts).all(|(p, c)| (p * scale - c).abs() < 1e-9);
            if exact && counts.iter().sum::<f64>() == scale {
                let table = counts.iter().enumerate().flat_map(|(i, &c)| std::iter::repeat_n(i as u32, c as usize)).collect();
                return Categorical::Dyadic { bits, table };
            }
        }
        // Vose's alias construction.
        let mut prob = vec![0.0; n];
        let mut alias = vec![0u32; n];
        let mut scaled: Vec<f64> = probs.iter().map(|p| p * n as f64).collect();
        let (mut small, mut large): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| scaled[i] < 1.0);
        while let (Some(&s), Some(&l)) = (small.last(), large.last()) {
            small.pop();
            prob[s] = scaled[s];
            alias[s] = l as u32;
            scaled[l] -= 1.0 - scaled[s];
            if scaled[l] < 1.0 {
                large.pop();
                small.push(l);
            }
        }
        for i in small.into_iter().chain(large) {
            prob[i] = 1.0;
            alias[i] = i as u32;
        }
        Categorical::Alias { prob, alias }
    }

    #[inline]
    pub fn sample(&self, rng: &mut Stream, bits: &mut Bits) -> usize {
        match self {
            Categorical::Const(i) => *i as usize,
            Categorical::Dyadic { bits: b, table } => table[bits.take(rng, *b) as usize] as usize,
            Categorical::Alias { prob, alias } => {
                let r = rng.next_u64();
                let i = (((r >> 32) * prob.len() as u64) >> 32) as usize;
                let u = (r as u32) as f64 * (1.0 / 4_294_967_296.0);
                if u < prob[i] {
                    i
                } else {
                    alias[i] as usize
                }
            }
        }
    }
}

/// A walk in progress: position, chain state and sampling tables.
#[derive(Debug, Clone)]
pub struct Walker {
    rows: Vec<Categorical>,
    steps: Vec<Point>,
    iid: bool,
    pub state: usize,
    pub pos: Point,
    bits: Bits,
}

impl Walker {
    /// Starts at the origin with the chain state drawn from the stationary law.
    pub fn new(driver: &Driver, rng: &mut Stream) -> Self {
        let mut bits = Bits::default();
        match driver {
            Driver::Iid(s) => {
                let probs: Vec<f64> = s.atoms.iter().map(|a| a.1).collect();
                Walker {
                    rows: vec![Categorical::new(&probs)],
                    steps: s.atoms.iter().map(|a| a.0).collect(),
                    iid: true,
                    state: 0,
                    pos: Point::ZERO,
                    bits,
                }
            }
            Driver::Markov(m) => {
                let state = Categorical::new(&m.stationary).sample(rng, &mut bits);
                Walker {
                    rows: m.transition.iter().map(|r| Categorical::new(r)).collect(),
                    steps: m.step.clone(),
                    iid: false,
                    state,
                    pos: Point::ZERO,
                    bits,
                }
            }
        }
    }

    /// Draws one step, updates position and state, returns the increment.
    #[inline]
    pub fn step(&mut self, rng: &mut Stream) -> Point {
        let row = if self.iid { 0 } else { self.state };
        let next = self.rows[row].sample(rng, &mut self.bits);
        self.state = next;
        let s = self.steps[next];
        self.pos = Point::d2(self.pos.x + s.x, self.pos.y + s.y);
        s
    }

    pub fn trajectory(&mut self, n: usize, rng: &mut Stream) -> Trajectory {
        let mut positions = Vec::with_capacity(n + 1);
        let mut states = Vec::with_capacity(n + 1);
        positions.push(self.pos);
        states.push(self.state);
        for _ in 0..n {
            self.step(rng);
            positions.push(self.pos);
            states.push(self.state);
        }
        Trajectory { positions, states }
    }
}

/// `S_0, …, S_n` and the chain states alongside (constant 0 for i.i.d. walks).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub positions: Vec<Point>,
    pub states: Vec<usize>,
}

/// One step: `(increment, next_state)`.
pub fn step_sample(walker: &mut Walker, rng: &mut Stream) -> (Point, usize) {
    let s = walker.step(rng);
    (s, walker.state)
}

/// Exact propagation of the law of `(X_k, S_k)` on a box `|a|_∞ ≤ R`.
///
/// Mass is kept only inside a window that grows with the step count: the
/// full reachable range, or `cut` standard deviations when `cut` is given.
/// Whatever leaves the window is counted in [`Propagator::escaped`].
#[derive(Debug, Clone)]
pub struct Propagator {
    dim: Dim,
    radius: i64,
    side: usize,
    /// `transition[s][s']`; a single state for i.i.d. walks.
    transition: Vec<Vec<f64>>,
    steps: Vec<Point>,
    max_step: i64,
    spread: f64,
    cut: Option<f64>,
    layers: Vec<Vec<f64>>,
    scratch: Vec<Vec<f64>>,
    window: i64,
    k: usize,
    exec: Exec,
}

impl Propagator {
    pub fn new(driver: &Driver, radius: i64, cut: Option<f64>, exec: Exec) -> Result<Self> {
        if radius < 0 {
            return invalid("box radius must be non-negative");
        }
        let dim = driver.dim();
        let side = (2 * radius + 1) as usize;
        let rows = if dim == Dim::Two { side } else { 1 };
        let cells = side
            .checked_mul(rows)
            .filter(|&c| c <= 1 << 26)
            .ok_or_else(|| ZdxError::MemoryGuard(format!("box of radius {radius} is too large")))?;
        let (transition, steps, init) = match driver {
            Driver::Iid(s) => (vec![s.atoms.iter().map(|a| a.1).collect()], s.atoms.iter().map(|a| a.0).collect(), vec![1.0]),
            Driver::Markov(m) => (m.transition.clone(), m.step.clone(), m.stationary.clone()),
        };
        let mut layers = vec![vec![0.0; cells]; init.len()];
        let origin = radius as usize + if dim == Dim::Two { radius as usize * side } else { 0 };
        for (layer, w) in layers.iter_mut().zip(&init) {
            layer[origin] = *w;
        }
        let scratch = layers.clone();
        Ok(Propagator {
            dim,
            radius,
            side,
            transition,
            steps,
            max_step: driver.max_step(),
            spread: driver.step_spread(),
            cut,
            layers,
            scratch,
            window: 0,
            k: 0,
            exec,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn radius(&self) -> i64 {
        self.radius
    }

    pub fn window(&self) -> i64 {
        self.window
    }

    fn index(&self, p: Point) -> Option<usize> {
        let r = self.radius;
        if p.x.abs() > r || p.y.abs() > r || (self.dim == Dim::One && p.y != 0) {
            return None;
        }
        let row = if self.dim == Dim::Two { (p.y + r) as usize } else { 0 };
        Some(row * self.side + (p.x + r) as usize)
    }

    /// `μ(S_k = p)`; zero outside the box.
    pub fn at(&self, p: Point) -> f64 {
        self.index(p).map_or(0.0, |i| self.layers.iter().map(|l| l[i]).sum())
    }

    /// `μ(X_k = s, S_k = p)`; i.i.d. walks have the single state 0.
    pub fn at_state(&self, s: usize, p: Point) -> f64 {
        self.index(p).map_or(0.0, |i| self.layers[s][i])
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn total_mass(&self) -> f64 {
        self.layers.iter().map(|l| crate::exec::pairwise_sum(l)).sum()
    }

    /// Mass lost to the window or the box so far.
    pub fn escaped(&self) -> f64 {
        (1.0 - self.total_mass()).max(0.0)
    }

    fn next_window(&self) -> i64 {
        let reach = self.window + self.max_step;
        let w = match self.cut {
            Some(c) => reach.min((c * self.spread * ((self.k + 1) as f64).sqrt()).ceil() as i64 + self.max_step),
            None => reach,
        };
        w.max(self.window).min(self.radius)
    }

    /// Advances the law by one step.
    pub fn advance(&mut self) {
        let w_old = self.window;
        let w = self.next_window();
        let r = self.radius;
        let side = self.side;
        let two_d = self.dim == Dim::Two;
        let n = self.layers.len();
        // Mix chain states (identity for i.i.d. walks): scratch[s'] = Σ_s P[s][s'] layers[s].
        let row_range = |w: i64| if two_d { ((r - w) as usize, (r + w) as usize) } else { (0, 0) };
        let (y0, y1) = row_range(w_old);
        let (x0, x1) = ((r - w_old) as usize, (r + w_old) as usize);
        if n > 1 {
            for t in 0..n {
                let (dst, src) = (&mut self.scratch[t], &self.layers);
                for y in y0..=y1 {
                    let d = &mut dst[y * side + x0..=y * side + x1];
                    d.fill(0.0);
                    for (s, layer) in src.iter().enumerate() {
                        let p = self.transition[s][t];
                        if p != 0.0 {
                            for (a, b) in d.iter_mut().zip(&layer[y * side + x0..=y * side + x1]) {
                                *a += p * b;
                            }
                        }
                    }
                }
            }
            std::mem::swap(&mut self.scratch, &mut self.layers);
        }
        // Shift and gather into the new window: new_t[a] = Σ_atoms w · old[a − step].
        // Atoms s and −s of equal weight are applied together as w·(old[a − s] + old[a + s]),
        // which keeps symmetric laws exactly symmetric in floating point.
        let atoms: Vec<Vec<(Point, f64, bool)>> = if n > 1 {
            (0..n).map(|t| vec![(self.steps[t], 1.0, false)]).collect()
        } else {
            vec![pair_atoms(&self.steps, &self.transition[0])]
        };
        let (ny0, ny1) = row_range(w);
        for (t, atoms) in atoms.iter().enumerate() {
            let src = &self.layers[t];
            let dst = &mut self.scratch[t];
            self.exec.for_chunks(dst, side, |y, row| {
                if y < ny0 || y > ny1 {
                    return;
                }
                let lo = r - w;
                let hi = r + w;
                row[lo as usize..=hi as usize].fill(0.0);
                for &(s, p, paired) in atoms {
                    if paired {
                        let in_window = |yy: i64| yy >= y0 as i64 && yy <= y1 as i64;
                        let (ya, yb) = if two_d { (y as i64 - s.y, y as i64 + s.y) } else { (0, 0) };
                        let ra = in_window(ya).then(|| &src[ya as usize * side..(ya as usize + 1) * side]);
                        let rb = in_window(yb).then(|| &src[yb as usize * side..(yb as usize + 1) * side]);
                        let get = |r: Option<&[f64]>, x: i64| match r {
                            Some(r) if x >= x0 as i64 && x <= x1 as i64 => r[x as usize],
                            _ => 0.0,
                        };
                        // both sources lie in the old window for x in [mlo, mhi]
                        let (mlo, mhi) = match (ra, rb) {
                            (Some(_), Some(_)) => (lo.max(x0 as i64 + s.x.abs()), hi.min(x1 as i64 - s.x.abs())),
                            _ => (1, 0),
                        };
                        let edge = |x: i64| get(ra, x - s.x) + get(rb, x + s.x);
                        if mlo > mhi {
                            for x in lo..=hi {
                                row[x as usize] += p * edge(x);
                            }
                            continue;
                        }
                        for x in lo..mlo {
                            row[x as usize] += p * edge(x);
                        }
                        let (ra, rb) = (ra.unwrap(), rb.unwrap());
                        let n = (mhi - mlo + 1) as usize;
                        let a = &ra[(mlo - s.x) as usize..][..n];
                        let b = &rb[(mlo + s.x) as usize..][..n];
                        for ((d, u), v) in row[mlo as usize..=mhi as usize].iter_mut().zip(a).zip(b) {
                            *d += p * (u + v);
                        }
                        for x in mhi + 1..=hi {
                            row[x as usize] += p * edge(x);
                        }
                        continue;
                    }
                    let sy = y as i64 - if two_d { s.y } else { 0 };
                    if sy < y0 as i64 || sy > y1 as i64 {
                        continue;
                    }
                    // destination x range such that source x − s.x lies in the old window
                    let dlo = lo.max(x0 as i64 + s.x);
                    let dhi = hi.min(x1 as i64 + s.x);
                    if dlo > dhi {
                        continue;
                    }
                    let srow = &src[sy as usize * side..(sy as usize + 1) * side];
                    let dst = &mut row[dlo as usize..=dhi as usize];
                    let sslice = &srow[(dlo - s.x) as usize..=(dhi - s.x) as usize];
                    for (a, b) in dst.iter_mut().zip(sslice) {
                        *a += p * b;
                    }
                }
            });
        }
        std::mem::swap(&mut self.scratch, &mut self.layers);
        // The scratch buffers keep stale values outside the old window only.
        self.window = w;
        self.k += 1;
    }
}

/// Merges each atom `s` with `−s` when both carry bit-identical weight.
fn pair_atoms(steps: &[Point], probs: &[f64]) -> Vec<(Point, f64, bool)> {
    let mut out = Vec::with_capacity(steps.len());
    for (i, (&s, &p)) in steps.iter().zip(probs).enumerate() {
        let mirror = Point::d2(-s.x, -s.y);
        let partner = steps.iter().zip(probs).position(|(&t, &q)| t == mirror && q == p);
        match partner {
            Some(j) if j != i && (s.y, s.x) > (0, 0) => out.push((s, p, true)),
            Some(j) if j != i => {}
            _ => out.push((s, p, false)),
        }
    }
    out
}

/// `μ(S_k = a)` for `k ≤ n`, `|a|_∞ ≤ R`.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupationTable {
    pub dim: Dim,
    pub radius: i64,
    /// `probs[k]` is row-major over the box (`y` outer).
    pub probs: Vec<Vec<f64>>,
    /// Mass outside the box at each `k`.
    pub escaped: Vec<f64>,
}

impl OccupationTable {
    pub fn get(&self, k: usize, p: Point) -> f64 {
        let r = self.radius;
        if p.x.abs() > r || p.y.abs() > r || (self.dim == Dim::One && p.y != 0) {
            return 0.0;
        }
        let side = (2 * r + 1) as usize;
        let row = if self.dim == Dim::Two { (p.y + r) as usize } else { 0 };
        self.probs[k][row * side + (p.x + r) as usize]
    }

    pub fn mass(&self, k: usize) -> f64 {
        self.probs[k].iter().sum()
    }
}

/// Exact occupation probabilities by iterated convolution (i.i.d.) or the
/// state-resolved recursion (Markov).
pub fn occupation_probs(driver: &Driver, n: usize, box_radius: i64) -> Result<OccupationTable> {
    let side = (2 * box_radius + 1) as usize;
    let cells = if driver.dim() == Dim::Two { side * side } else { side };
    if cells.saturating_mul(n + 1) > 1 << 27 {
        return Err(ZdxError::MemoryGuard(format!("table of {} x {cells} entries", n + 1)));
    }
    let mut prop = Propagator::new(driver, box_radius, None, Exec::default())?;
    let mut probs = Vec::with_capacity(n + 1);
    let mut escaped = Vec::with_capacity(n + 1);
    for k in 0..=n {
        if k > 0 {
            prop.advance();
        }
        let mut flat = vec![0.0; cells];
        for layer in &prop.layers {
            for (a, b) in flat.iter_mut().zip(layer) {
                *a += b;
            }
        }
        // stale scratch values can sit outside the active window; mask them
        mask_outside(&mut flat, driver.dim(), box_radius, prop.window);
        escaped.push(prop.escaped());
        probs.push(flat);
    }
    Ok(OccupationTable { dim: driver.dim(), radius: box_radius, probs, escaped })
}

fn mask_outside(flat: &mut [f64], dim: Dim, r: i64, w: i64) {
    let side = (2 * r + 1) as usize;
    let rows = if dim == Dim::Two { side } else { 1 };
    for y in 0..rows {
        for x in 0..side {
            let (cx, cy) = (x as i64 - r, if dim == Dim::Two { y as i64 - r } else { 0 });
            if cx.abs() > w || cy.abs() > w {
                flat[y * side + x] = 0.0;
            }
        }
    }
}

/// `Σ_{k=0}^{n−1} μ(S_k = 0)`.
pub fn return_mass(driver: &Driver, n: usize) -> Result<f64> {
    if n == 0 {
        return invalid("return_mass needs n >= 1");
    }
    let radius = match driver.dim() {
        Dim::One => (n as i64 * driver.max_step()).min(12 * ((n as f64).sqrt() as i64 + 1) * driver.max_step().max(1)),
        Dim::Two => (n as i64 * driver.max_step()).min(10 * ((n as f64).sqrt() as i64 + 1) * driver.max_step().max(1)),
    };
    let mut prop = Propagator::new(driver, radius, Some(10.0), Exec::default())?;
    let mut acc = 0.0;
    for k in 0..n {
        if k > 0 {
            prop.advance();
        }
        acc += prop.at(Point::ZERO);
    }
    Ok(acc)
}

/// The law of `S_n` on a square grid, computed by inverting `𝔼 e^{i⟨u,S_n⟩}`
/// with an FFT of size larger than the reachable range (so no aliasing).
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    pub dim: Dim,
    pub radius: i64,
    pub values: Vec<f64>,
}

impl Distribution {
    pub fn get(&self, p: Point) -> f64 {
        let r = self.radius;
        if p.x.abs() > r || p.y.abs() > r || (self.dim == Dim::One && p.y != 0) {
            return 0.0;
        }
        let side = (2 * r + 1) as usize;
        let row = if self.dim == Dim::Two { (p.y + r) as usize } else { 0 };
        self.values[row * side + (p.x + r) as usize]
    }
}

pub fn distribution_fft(driver: &Driver, n: u64, exec: Exec) -> Result<Distribution> {
    let reach = n as i64 * driver.max_step();
    let m = ((2 * reach + 1) as usize).next_power_of_two().max(2);
    let d = driver.dim();
    let total = if d == Dim::Two { m * m } else { m };
    if total > 1 << 24 {
        return Err(ZdxError::MemoryGuard(format!("FFT grid {m}^{} too large", d.get())));
    }
    let freq = |j: usize| 2.0 * PI * j as f64 / m as f64;
    let mut grid: Vec<Complex64> = match d {
        Dim::One => exec.map(m, |j| driver.char_fn_n(&[freq(j)], n)),
        Dim::Two => exec.map(total, |idx| driver.char_fn_n(&[freq(idx % m), freq(idx / m)], n)),
    };
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(m);
    for row in grid.chunks_mut(m) {
        fft.process(row);
    }
    if d == Dim::Two {
        let mut col = vec![Complex64::default(); m];
        for x in 0..m {
            for y in 0..m {
                col[y] = grid[y * m + x];
            }
            fft.process(&mut col);
            for y in 0..m {
                grid[y * m + x] = col[y];
            }
        }
    }
    let scale = 1.0 / total as f64;
    let r = reach;
    let side = (2 * r + 1) as usize;
    let wrap = |c: i64| c.rem_euclid(m as i64) as usize;
    let mut values = vec![0.0; if d == Dim::Two { side * side } else { side }];
    for (i, v) in values.iter_mut().enumerate() {
        let x = (i % side) as i64 - r;
        let y = if d == Dim::Two { (i / side) as i64 - r } else { 0 };
        *v = grid[wrap(y) * m + wrap(x)].re * scale;
        if d == Dim::One {
            *v = grid[wrap(x)].re * scale;
        }
    }
    Ok(Distribution { dim: d, radius: r, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use approx::assert_abs_diff_eq;

    #[test]
    fn fixtures_validate() {
        for name in FIXTURES {
            Driver::fixture(name).unwrap();
        }
        assert!(Driver::fixture("nope").is_err());
        let m = MarkovDriver::three_state();
        for s in m.stationary() {
            assert_abs_diff_eq!(*s, 1.0 / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn invalid_drivers_rejected() {
        assert!(IidStep::new(Dim::One, vec![(Point::d1(1), 1.0)]).is_err());
        assert!(IidStep::new(Dim::One, vec![(Point::d1(1), 0.5), (Point::d1(-1), 0.4)]).is_err());
        let reducible = vec![vec![1.0, 0.0], vec![0.5, 0.5]];
        assert!(MarkovDriver::new(Dim::One, reducible, vec![Point::ZERO, Point::ZERO], None).is_err());
    }

    #[test]
    fn small_k_occupations() {
        let t = occupation_probs(&IidStep::lazy_1d().into(), 2, 2).unwrap();
        assert_eq!(t.get(1, Point::ZERO), 0.5);
        assert_eq!(t.get(1, Point::d1(1)), 0.25);
        assert_eq!(t.get(2, Point::ZERO), 0.375);
        let t = occupation_probs(&IidStep::lazy_2d().into(), 2, 2).unwrap();
        assert_abs_diff_eq!(t.get(2, Point::ZERO), 5.0 / 16.0, epsilon = 1e-15);
    }

    #[test]
    fn return_mass_values() {
        let d: Driver = IidStep::lazy_1d().into();
        assert_eq!(return_mass(&d, 1).unwrap(), 1.0);
        assert_eq!(return_mass(&d, 2).unwrap(), 1.5);
        assert_eq!(return_mass(&d, 3).unwrap(), 1.875);
    }

    #[test]
    fn markov_occupation_matches_enumeration() {
        let m = MarkovDriver::three_state();
        let d: Driver = m.clone().into();
        let t = occupation_probs(&d, 3, 3).unwrap();
        // brute force over state paths
        let mut direct = std::collections::HashMap::new();
        for s0 in 0..3 {
            for s1 in 0..3 {
                for s2 in 0..3 {
                    for s3 in 0..3 {
                        let w = m.stationary()[s0] * m.transition()[s0][s1] * m.transition()[s1][s2] * m.transition()[s2][s3];
                        let x = m.step()[s1].x + m.step()[s2].x + m.step()[s3].x;
                        *direct.entry(x).or_insert(0.0) += w;
                    }
                }
            }
        }
        for (x, w) in direct {
            assert_abs_diff_eq!(t.get(3, Point::d1(x)), w, epsilon = 1e-14);
        }
    }

    #[test]
    fn fft_distribution_matches_convolution() {
        for name in ["lazy1d", "lazy2d", "markov3"] {
            let d = Driver::fixture(name).unwrap();
            let t = occupation_probs(&d, 12, 12).unwrap();
            let f = distribution_fft(&d, 12, Exec::Sequential).unwrap();
            for x in -12..=12 {
                for y in if d.dim() == Dim::Two { -12..=12 } else { 0..=0 } {
                    let p = Point::d2(x, y);
                    assert_abs_diff_eq!(t.get(12, p), f.get(p), epsilon = 1e-14);
                }
            }
        }
    }

    #[test]
    fn cut_window_loses_little_mass() {
        let d: Driver = IidStep::lazy_2d().into();
        let mut p = Propagator::new(&d, 200, Some(8.0), Exec::Sequential).unwrap();
        for _ in 0..400 {
            p.advance();
        }
        assert!(p.escaped() < 1e-12, "{}", p.escaped());
        assert!(p.window() < 200);
    }

    #[test]
    fn walker_is_deterministic_and_degenerate_steps_work() {
        let d: Driver = IidStep::lazy_1d().into();
        let run = || {
            let mut r = stream(1, 2, 3);
            let mut w = Walker::new(&d, &mut r);
            w.trajectory(50, &mut r).positions
        };
        assert_eq!(run(), run());
        let zero: Driver = IidStep::new(Dim::One, vec![(Point::ZERO, 1.0)]).unwrap().into();
        let mut r = stream(1, 2, 3);
        let mut w = Walker::new(&zero, &mut r);
        assert!((0..10).all(|_| step_sample(&mut w, &mut r).0 == Point::ZERO));
    }

    #[test]
    fn markov_step_is_f_of_next_state() {
        let d: Driver = MarkovDriver::three_state().into();
        let m = d.to_markov();
        let mut r = stream(9, 9, 9);
        let mut w = Walker::new(&d, &mut r);
        for _ in 0..100 {
            let (s, next) = step_sample(&mut w, &mut r);
            assert_eq!(s, m.step()[next]);
        }
    }

    #[test]
    fn json_round_trip() {
        for name in ["lazy1d", "lazy2d", "markov3"] {
            let d = Driver::fixture(name).unwrap();
            let back = Driver::from_json(&d.to_json()).unwrap();
            assert_eq!(d, back);
        }
        assert!(Driver::from_json(r#"{"kind":"levy","d":1}"#).is_err());
    }

    #[test]
    fn alias_sampler_frequencies() {
        let c = Categorical::new(&[0.2, 0.5, 0.3]);
        assert!(matches!(c, Categorical::Alias { .. }));
        let mut r = stream(4, 4, 4);
        let mut bits = Bits::default();
        let mut counts = [0u32; 3];
        for _ in 0..200_000 {
            counts[c.sample(&mut r, &mut bits)] += 1;
        }
        for (c, p) in counts.iter().zip([0.2, 0.5, 0.3]) {
            assert!((*c as f64 / 200_000.0 - p).abs() < 0.005);
        }
    }
}
