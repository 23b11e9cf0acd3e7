//! The kernel packing game `Z_s(r; E) = inf_μ J_s(r, μ) = inf_μ I_s(r, μ)`
//! and its reciprocal, the weighted packing number `N_r(E; ψ_s)`.
//!
//! On a finite cloud the game is the standard quadratic program
//! `min { wᵀKw : w ∈ simplex }`. Substituting `w = u / Σu` turns it into
//! the nonnegative quadratic program `min { uᵀKu − 2·Σu : u ≥ 0 }`, whose
//! stationary points satisfy `(Ku)_i = 1` on the support and `(Ku)_i ≥ 1`
//! off it. At such a point the potential is constant on the support, so
//! `J = I = 1/Σu` and the two functionals certify each other.
//!
//! The kernel matrix need not be positive definite (the indicator kernel
//! never is once three points form a path), so the program can have
//! several local minima. The solver runs coordinate descent from zero
//! under several deterministic visiting orders and keeps the best
//! stationary point. Starting from zero, the first sweep of coordinate
//! descent on the indicator kernel is exactly the greedy packing in the
//! visiting order.
//!
//! Coordinate descent crawls when many points share one ball, because
//! their kernel rows nearly coincide. If a short sweep budget does not
//! settle, the start switches to active-set pivoting on the equalizer
//! system and only falls back to further sweeps if pivoting breaks down.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kernel::{kernel_matrix, KernelMatrix, KernelOrder, WeightedMeasure};
use crate::pointset::{distance, PointCloud};

/// Largest cloud accepted by the exact entropy count.
pub const MAX_EXACT_ENTROPY_POINTS: usize = 24;

/// Weights below this are omitted from serialized solutions.
pub const WEIGHT_REPORT_FLOOR: f64 = 1e-12;

/// Seed of the visiting-order permutations; fixed so that solves repeat.
const RESTART_SEED: u64 = 0x5eed_0f_9a3e;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Relative tolerance on the equalizer residual.
    pub tol: f64,
    /// Sweep budget per start.
    pub max_iters: usize,
    /// Seeded random visiting orders tried on top of the input order and
    /// its reverse. `None` picks a size-dependent default.
    pub restarts: Option<usize>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-6,
            max_iters: 1_000_000,
            restarts: None,
        }
    }
}

impl SolverOptions {
    pub fn with_tol(tol: f64) -> Self {
        SolverOptions {
            tol,
            ..Self::default()
        }
    }

    fn restarts_for(&self, k: usize) -> usize {
        self.restarts.unwrap_or(match k {
            0..=32 => 256,
            33..=128 => 8,
            _ => 1,
        })
    }

    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol < 0.1) {
            return Err(invalid(format!("solver tolerance {} outside (0, 0.1)", self.tol)));
        }
        if self.max_iters == 0 {
            return Err(invalid("max_iters must be at least 1"));
        }
        Ok(())
    }
}

/// Optimal packing weights and the game value `Z_s(r; E)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GameSolution {
    /// Probability weights indexed like the cloud (or matrix rows).
    pub weights: Vec<f64>,
    /// Largest potential over the support: `J_s(r, w)`.
    pub value: f64,
    /// Energy `wᵀKw = I_s(r, w)`; never above `value`.
    pub energy: f64,
    /// Largest deviation of a support potential from `value`.
    pub residual: f64,
    /// Total coordinate sweeps across all starts.
    pub iterations: usize,
    pub converged: bool,
}

impl GameSolution {
    /// `N_r(E; ψ_s) = 1 / Z_s(r; E)`.
    pub fn n_value(&self) -> f64 {
        1.0 / self.value
    }

    /// `J − I` at the returned weights.
    pub fn certificate_gap(&self) -> f64 {
        self.value - self.energy
    }

    pub fn to_measure(&self, cloud: &PointCloud) -> Result<WeightedMeasure> {
        WeightedMeasure::new(cloud.clone(), self.weights.clone())
    }

    pub fn report(&self) -> SolutionReport {
        SolutionReport {
            value: self.value,
            n_value: self.n_value(),
            residual: self.residual,
            iterations: self.iterations,
            converged: self.converged,
            weights: self
                .weights
                .iter()
                .enumerate()
                .filter(|(_, w)| **w > WEIGHT_REPORT_FLOOR)
                .map(|(i, w)| (i, *w))
                .collect(),
        }
    }
}

/// Serialized form of a [`GameSolution`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionReport {
    pub value: f64,
    pub n_value: f64,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub weights: Vec<(usize, f64)>,
}

struct Descent<'a> {
    k: &'a KernelMatrix,
    u: Vec<f64>,
    // running K u
    g: Vec<f64>,
}

impl<'a> Descent<'a> {
    fn new(k: &'a KernelMatrix) -> Self {
        let n = k.size();
        Descent {
            k,
            u: vec![0.0; n],
            g: vec![0.0; n],
        }
    }

    fn sweep(&mut self, order: &[usize]) {
        for &i in order {
            // exact minimization along coordinate i; the diagonal is 1
            let next = (self.u[i] + 1.0 - self.g[i]).max(0.0);
            let delta = next - self.u[i];
            if delta != 0.0 {
                self.u[i] = next;
                for (gj, kij) in self.g.iter_mut().zip(self.k.row(i)) {
                    *gj += delta * kij;
                }
            }
        }
    }

    fn refresh(&mut self) {
        self.g = self.k.mul_vec(&self.u);
    }

    fn support(&self) -> Vec<usize> {
        (0..self.u.len()).filter(|&i| self.u[i] > 0.0).collect()
    }

    // Stationarity in u-coordinates: g = 1 on the support, g ≥ 1 off it.
    fn kkt_violation(&self) -> f64 {
        self.u
            .iter()
            .zip(&self.g)
            .map(|(u, g)| if *u > 0.0 { (g - 1.0).abs() } else { (1.0 - g).max(0.0) })
            .fold(0.0, f64::max)
    }

    /// Solves the equalizer system on the current support and jumps there
    /// when the solution is positive and does not raise the objective.
    fn polish(&mut self) -> bool {
        let support = self.support();
        let m = support.len();
        if m == 0 {
            return false;
        }
        let sub = DMatrix::from_fn(m, m, |a, b| self.k.get(support[a], support[b]));
        let Some(x) = sub.lu().solve(&DVector::from_element(m, 1.0)) else {
            return false;
        };
        if x.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return false;
        }
        let before: f64 = self.u.iter().zip(&self.g).map(|(u, g)| u * g - 2.0 * u).sum();
        let mut candidate = vec![0.0; self.u.len()];
        for (a, &i) in support.iter().enumerate() {
            candidate[i] = x[a];
        }
        let g = self.k.mul_vec(&candidate);
        let after: f64 = candidate.iter().zip(&g).map(|(u, g)| u * g - 2.0 * u).sum();
        if after > before + 1e-12 * before.abs() {
            return false;
        }
        self.u = candidate;
        self.g = g;
        true
    }
}

struct StartOutcome {
    weights: Vec<f64>,
    value: f64,
    energy: f64,
    residual: f64,
    sweeps: usize,
    converged: bool,
}

fn evaluate(k: &KernelMatrix, u: &[f64], tol: f64) -> (Vec<f64>, f64, f64, f64, bool) {
    let total: f64 = u.iter().sum();
    let w: Vec<f64> = u.iter().map(|x| x / total).collect();
    let loads = k.mul_vec(&w);
    let energy: f64 = loads.iter().zip(&w).map(|(l, x)| l * x).sum();
    let (mut hi, mut lo, mut off) = (f64::NEG_INFINITY, f64::INFINITY, f64::INFINITY);
    for (l, x) in loads.iter().zip(&w) {
        if *x > 0.0 {
            hi = hi.max(*l);
            lo = lo.min(*l);
        } else {
            off = off.min(*l);
        }
    }
    let residual = hi - lo;
    let converged = residual <= tol * hi && off >= hi * (1.0 - tol);
    (w, hi, energy, residual, converged)
}

/// Sweeps granted to coordinate descent before pivoting takes over.
const SWEEP_BUDGET: usize = 256;

/// Active-set pivoting for `min { uᵀKu − 2·Σu : u ≥ 0 }`.
///
/// Points enter one at a time (most overloaded first, ties broken by the
/// visiting order); a ratio test drops points whose weight would turn
/// negative. `inv` tracks `K_P⁻¹` on the active set `P` through bordering
/// updates, so each pivot costs `O(|P|²)` plus one potential refresh.
struct Pivoting<'a> {
    k: &'a KernelMatrix,
    members: Vec<usize>,
    inv: Vec<f64>,
}

impl<'a> Pivoting<'a> {
    fn m(&self) -> usize {
        self.members.len()
    }

    fn add(&mut self, j: usize) -> bool {
        let m = self.m();
        let b: Vec<f64> = self.members.iter().map(|&p| self.k.get(p, j)).collect();
        let mb: Vec<f64> = (0..m)
            .map(|a| (0..m).map(|c| self.inv[a * m + c] * b[c]).sum())
            .collect();
        let schur = 1.0 - b.iter().zip(&mb).map(|(x, y)| x * y).sum::<f64>();
        if !(schur.abs() > 1e-10) {
            return false;
        }
        let n = m + 1;
        let mut inv = vec![0.0; n * n];
        for a in 0..m {
            for c in 0..m {
                inv[a * n + c] = self.inv[a * m + c] + mb[a] * mb[c] / schur;
            }
            inv[a * n + m] = -mb[a] / schur;
            inv[m * n + a] = -mb[a] / schur;
        }
        inv[m * n + m] = 1.0 / schur;
        self.inv = inv;
        self.members.push(j);
        true
    }

    fn remove(&mut self, pos: usize) {
        let m = self.m();
        let pivot = self.inv[pos * m + pos];
        let keep: Vec<usize> = (0..m).filter(|&a| a != pos).collect();
        let n = m - 1;
        let mut inv = vec![0.0; n * n];
        for (a2, &a) in keep.iter().enumerate() {
            for (c2, &c) in keep.iter().enumerate() {
                inv[a2 * n + c2] = self.inv[a * m + c] - self.inv[a * m + pos] * self.inv[pos * m + c] / pivot;
            }
        }
        self.inv = inv;
        self.members.remove(pos);
    }

    // K_P⁻¹ · 1
    fn equalizer(&self) -> Vec<f64> {
        let m = self.m();
        (0..m).map(|a| self.inv[a * m..(a + 1) * m].iter().sum()).collect()
    }

    fn potentials(&self, u: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; u.len()];
        for &p in &self.members {
            for (gi, kip) in g.iter_mut().zip(self.k.row(p)) {
                *gi += u[p] * kip;
            }
        }
        g
    }

    /// Returns a stationary `u`, or `None` if the active-set system turns
    /// singular or the iteration stops making progress.
    fn run(k: &'a KernelMatrix, order: &[usize], tol: f64, max_pivots: usize) -> Option<(Vec<f64>, usize)> {
        let n = k.size();
        let mut piv = Pivoting {
            k,
            members: Vec::new(),
            inv: Vec::new(),
        };
        let mut u = vec![0.0; n];
        let mut g = vec![0.0; n];
        let mut active = vec![false; n];
        let mut objective: f64 = 0.0;
        for pivots in 0..max_pivots {
            let mut enter = None;
            let mut lowest = 1.0 - 0.1 * tol;
            for &i in order {
                if !active[i] && g[i] < lowest {
                    lowest = g[i];
                    enter = Some(i);
                }
            }
            let Some(j) = enter else {
                return Some((u, pivots));
            };
            if !piv.add(j) {
                return None;
            }
            active[j] = true;
            loop {
                let z = piv.equalizer();
                if z.iter().all(|v| *v > 0.0 && v.is_finite()) {
                    for (a, &p) in piv.members.iter().enumerate() {
                        u[p] = z[a];
                    }
                    break;
                }
                let mut alpha: f64 = 1.0;
                for (a, &p) in piv.members.iter().enumerate() {
                    if !(z[a] > 0.0) {
                        alpha = alpha.min(u[p] / (u[p] - z[a]));
                    }
                }
                if !(alpha > 0.0) && piv.members.last() == Some(&j) && !(z[piv.m() - 1] > 0.0) {
                    // the entering point cannot share the active set with its
                    // closest member: swap the two instead
                    let m = piv.m();
                    if m == 1 {
                        return None;
                    }
                    let pos = (0..m - 1)
                        .max_by(|&a, &b| k.get(piv.members[a], j).total_cmp(&k.get(piv.members[b], j)))
                        .expect("nonempty");
                    let p = piv.members[pos];
                    u[p] = 0.0;
                    active[p] = false;
                    piv.remove(pos);
                    continue;
                }
                for (a, &p) in piv.members.iter().enumerate() {
                    u[p] += alpha * (z[a] - u[p]);
                }
                let mut a = 0;
                while a < piv.m() {
                    let p = piv.members[a];
                    if !(z[a] > 0.0) && u[p] <= 1e-14 * (1.0 + z[a].abs()) {
                        u[p] = 0.0;
                        active[p] = false;
                        piv.remove(a);
                    } else {
                        a += 1;
                    }
                }
                if piv.m() == 0 {
                    return None;
                }
            }
            g = piv.potentials(&u);
            let next: f64 = piv.members.iter().map(|&p| u[p] * g[p] - 2.0 * u[p]).sum();
            if next > objective + 1e-12 * objective.abs() {
                return None;
            }
            objective = next;
        }
        None
    }
}

fn run_start(k: &KernelMatrix, order: &[usize], opts: &SolverOptions) -> StartOutcome {
    let mut d = Descent::new(k);
    let mut sweeps = 0;
    let mut last_support = Vec::new();
    let mut stable_since = 0;
    let mut pivoted = false;
    while sweeps < opts.max_iters {
        d.sweep(order);
        sweeps += 1;
        if sweeps % 64 == 0 {
            d.refresh();
        }
        if d.kkt_violation() <= 0.25 * opts.tol {
            d.refresh();
            if evaluate(k, &d.u, opts.tol).4 {
                d.polish();
                break;
            }
        }
        if sweeps >= SWEEP_BUDGET && !pivoted {
            pivoted = true;
            if let Some((u, pivots)) = Pivoting::run(k, order, opts.tol, 4 * k.size() + 16) {
                sweeps += pivots;
                d.u = u;
                d.refresh();
                d.polish();
                if evaluate(k, &d.u, opts.tol).4 {
                    break;
                }
            }
        }
        let support = d.support();
        if support == last_support {
            stable_since += 1;
        } else {
            last_support = support;
            stable_since = 0;
        }
        // once the active set has settled, jump straight to its equalizer
        if stable_since > 0 && stable_since % 8 == 0 && d.polish() && evaluate(k, &d.u, opts.tol).4 {
            break;
        }
    }
    d.refresh();
    let (weights, value, energy, residual, converged) = evaluate(k, &d.u, opts.tol);
    StartOutcome {
        weights,
        value,
        energy,
        residual,
        sweeps,
        converged,
    }
}

fn visiting_orders(n: usize, restarts: usize) -> Vec<Vec<usize>> {
    let forward: Vec<usize> = (0..n).collect();
    let mut orders = vec![forward.clone()];
    if n > 1 {
        orders.push(forward.iter().rev().copied().collect());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(RESTART_SEED);
    for _ in 0..restarts {
        let mut p = forward.clone();
        p.shuffle(&mut rng);
        orders.push(p);
    }
    orders
}

/// Minimizes `max_{i ∈ supp w} (Kw)_i` over the simplex.
///
/// Returns the best stationary point over all starts. A solution is
/// `converged` when the support potentials agree within `tol·value` and
/// no point outside the support carries a smaller potential.
pub fn solve_game(k: &KernelMatrix, opts: &SolverOptions) -> Result<GameSolution> {
    opts.validate()?;
    let n = k.size();
    let orders = visiting_orders(n, opts.restarts_for(n));
    let mut best: Option<StartOutcome> = None;
    let mut total_sweeps = 0;
    for order in &orders {
        let out = run_start(k, order, opts);
        total_sweeps += out.sweeps;
        let better = match &best {
            None => true,
            Some(b) => match (out.converged, b.converged) {
                (true, false) => true,
                (false, true) => false,
                _ => out.value < b.value * (1.0 - 1e-12),
            },
        };
        if better {
            best = Some(out);
        }
    }
    let best = best.expect("at least one start");
    Ok(GameSolution {
        weights: best.weights,
        value: best.value,
        energy: best.energy,
        residual: best.residual,
        iterations: total_sweeps,
        converged: best.converged,
    })
}

/// Builds the kernel matrix of `points` at scale `r` and solves the game.
pub fn z_value(points: &PointCloud, r: f64, order: KernelOrder, opts: &SolverOptions) -> Result<GameSolution> {
    let k = kernel_matrix(points, r, order)?;
    solve_game(&k, opts)
}

/// Like [`z_value`] but fails when the solver does not converge.
pub fn z_value_converged(points: &PointCloud, r: f64, order: KernelOrder, opts: &SolverOptions) -> Result<GameSolution> {
    let sol = z_value(points, r, order, opts)?;
    if !sol.converged {
        return Err(Error::NotConverged {
            scale: r,
            residual: sol.residual,
            iterations: sol.iterations,
        });
    }
    Ok(sol)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntropyMode {
    Greedy,
    Exact,
}

/// Number of points pairwise farther apart than `2r`, i.e. of disjoint
/// closed `r`-balls centred in the cloud. `Greedy` scans in input order
/// and returns a maximal packing; `Exact` returns the maximum (at most
/// [`MAX_EXACT_ENTROPY_POINTS`] points).
pub fn entropy_number(points: &PointCloud, r: f64, mode: EntropyMode) -> Result<usize> {
    if !(r > 0.0) {
        return Err(invalid("entropy scale must be positive"));
    }
    let sep = 2.0 * r;
    match mode {
        EntropyMode::Greedy => {
            if points.dim() == 1 {
                return Ok(greedy_line(points.coords(), sep));
            }
            let mut kept: Vec<&[f64]> = Vec::new();
            for p in points.iter() {
                if kept.iter().all(|q| distance(p, q) > sep) {
                    kept.push(p);
                }
            }
            Ok(kept.len())
        }
        EntropyMode::Exact => {
            let k = points.len();
            if k > MAX_EXACT_ENTROPY_POINTS {
                return Err(Error::TooManyPoints {
                    count: k as u128,
                    cap: MAX_EXACT_ENTROPY_POINTS,
                });
            }
            let mut adj = vec![0u32; k];
            for i in 0..k {
                for j in 0..k {
                    if i != j && distance(points.point(i), points.point(j)) <= sep {
                        adj[i] |= 1 << j;
                    }
                }
            }
            let all = if k == 32 { u32::MAX } else { (1u32 << k) - 1 };
            Ok(max_independent(all, &adj) as usize)
        }
    }
}

// Greedy in input order, but against a sorted index of kept points so
// that long 1-D clouds stay cheap.
fn greedy_line(xs: &[f64], sep: f64) -> usize {
    let mut kept: Vec<f64> = Vec::new();
    for &x in xs {
        let pos = kept.partition_point(|&y| y < x);
        let left_ok = pos == 0 || x - kept[pos - 1] > sep;
        let right_ok = pos == kept.len() || kept[pos] - x > sep;
        if left_ok && right_ok {
            kept.insert(pos, x);
        }
    }
    kept.len()
}

fn max_independent(candidates: u32, adj: &[u32]) -> u32 {
    if candidates == 0 {
        return 0;
    }
    let v = candidates.trailing_zeros() as usize;
    let rest = candidates & !(1 << v);
    let with = 1 + max_independent(rest & !adj[v], adj);
    if adj[v] & rest == 0 || with >= rest.count_ones() {
        // an isolated vertex always belongs to some maximum set
        return with;
    }
    with.max(max_independent(rest, adj))
}

/// Both sides of `N_r(E; ψ_∞) = N_{r/2}(E)` on one cloud and scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub scale: f64,
    pub game_count: f64,
    pub entropy_count: usize,
    pub mode: EntropyMode,
    pub deviation: f64,
    pub holds: bool,
}

/// Compares `1 / Z_∞(r)` with the packing count at `r/2`, exact when the
/// cloud is small enough and greedy otherwise (greedy only bounds the
/// maximum from below).
pub fn verify_indicator_identity(points: &PointCloud, r: f64, tol: f64, opts: &SolverOptions) -> Result<IdentityCheck> {
    let sol = z_value(points, r, KernelOrder::Infinity, opts)?;
    let mode = if points.len() <= MAX_EXACT_ENTROPY_POINTS {
        EntropyMode::Exact
    } else {
        EntropyMode::Greedy
    };
    let count = entropy_number(points, r / 2.0, mode)?;
    let deviation = (sol.n_value() - count as f64).abs();
    Ok(IdentityCheck {
        scale: r,
        game_count: sol.n_value(),
        entropy_count: count,
        mode,
        deviation,
        holds: sol.converged && deviation <= tol,
    })
}

/// Cell of `[0, 1)` of width `1/n` holding `x`; boundaries absorb rounding
/// of order `1e-9` cell widths.
fn cell_index(x: f64, n: usize) -> usize {
    ((x * n as f64 + 1e-9).floor().max(0.0) as usize).min(n - 1)
}

/// Moves the mass of each cell `[j/n, (j+1)/n)` onto one cloud point of
/// that cell (the smallest), producing a measure on the cloud whose atoms
/// are one per charged cell.
pub fn coarsen_measure(mu: &WeightedMeasure, n: usize, cloud: &PointCloud) -> Result<WeightedMeasure> {
    if n == 0 {
        return Err(invalid("cell count must be positive"));
    }
    if mu.support().dim() != 1 || cloud.dim() != 1 {
        return Err(invalid("coarsening is defined for one-dimensional sets"));
    }
    let in_unit = |x: f64| (0.0..1.0).contains(&x);
    if !mu.support().coords().iter().all(|&x| in_unit(x)) || !cloud.coords().iter().all(|&x| in_unit(x)) {
        return Err(invalid("coarsening needs every point in [0, 1)"));
    }
    let mut reps: Vec<Option<f64>> = vec![None; n];
    for &x in cloud.coords() {
        let j = cell_index(x, n);
        reps[j] = Some(reps[j].map_or(x, |y: f64| y.min(x)));
    }
    let mut mass = vec![0.0; n];
    for (&x, &w) in mu.support().coords().iter().zip(mu.weights()) {
        mass[cell_index(x, n)] += w;
    }
    let mut support = Vec::new();
    let mut weights = Vec::new();
    for j in 0..n {
        if mass[j] > 0.0 {
            let rep = reps[j].ok_or(Error::EmptyCell {
                lo: j as f64 / n as f64,
                hi: (j + 1) as f64 / n as f64,
            })?;
            support.push(rep);
            weights.push(mass[j]);
        }
    }
    let support = PointCloud::new(1, support, cloud.resolution().max(1.0 / n as f64), format!("coarse(n={n})"))?;
    WeightedMeasure::new(support, weights)
}

/// Representatives of every cell of width `1/n` that contains cloud points.
pub fn cell_representatives(cloud: &PointCloud, n: usize) -> Result<PointCloud> {
    let uniform = WeightedMeasure::uniform(cloud.clone());
    Ok(coarsen_measure(&uniform, n, cloud)?.support().clone())
}

/// Independent reference solutions used to cross-check [`solve_game`].
pub mod oracle {
    use super::*;

    /// Number of lattice points `w = c/m` (with `Σc = m`) on the
    /// `k`-simplex.
    pub fn grid_size(k: usize, m: usize) -> u128 {
        // C(m + k - 1, k - 1)
        let mut acc: u128 = 1;
        for i in 0..(k as u128 - 1) {
            acc = acc * (m as u128 + 1 + i) / (i + 1);
        }
        acc
    }

    /// Finest lattice resolution whose point count stays within `budget`.
    pub fn divisions_for_budget(k: usize, budget: u128) -> usize {
        let mut m = 1;
        while grid_size(k, m + 1) <= budget {
            m += 1;
        }
        m
    }

    fn support_max(k: &KernelMatrix, w: &[f64]) -> f64 {
        k.mul_vec(w)
            .iter()
            .zip(w)
            .filter(|(_, x)| **x > 0.0)
            .map(|(l, _)| *l)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn energy(k: &KernelMatrix, w: &[f64]) -> f64 {
        k.quad(w)
    }

    /// Smallest `max_{i ∈ supp w} (Kw)_i` over the simplex lattice with
    /// `divisions` steps per unit, with the minimizing lattice point.
    pub fn grid_minimum(k: &KernelMatrix, divisions: usize) -> (f64, Vec<f64>) {
        let (value, counts) = lattice_minimum(k, divisions, support_max);
        (value, counts.iter().map(|&c| c as f64 / divisions as f64).collect())
    }

    type Objective = fn(&KernelMatrix, &[f64]) -> f64;

    fn lattice_minimum(k: &KernelMatrix, m: usize, f: Objective) -> (f64, Vec<usize>) {
        fn walk(
            k: &KernelMatrix,
            f: Objective,
            counts: &mut Vec<usize>,
            idx: usize,
            left: usize,
            m: usize,
            best: &mut (f64, Vec<usize>),
        ) {
            let n = counts.len();
            if idx == n - 1 {
                counts[idx] = left;
                let w: Vec<f64> = counts.iter().map(|&c| c as f64 / m as f64).collect();
                let j = f(k, &w);
                if j < best.0 {
                    *best = (j, counts.clone());
                }
                return;
            }
            for c in 0..=left {
                counts[idx] = c;
                walk(k, f, counts, idx + 1, left - c, m, best);
            }
        }
        let mut best = (f64::INFINITY, vec![0; k.size()]);
        walk(k, f, &mut vec![0; k.size()], 0, m, m, &mut best);
        best
    }

    /// Grid search for the smallest energy `wᵀKw`, refined around its own
    /// optimum. The energy has the same infimum as the support maximum but
    /// is smooth, so local lattice refinement does not stall on kinks.
    ///
    /// Round one scans the full lattice within `budget` points. Every later
    /// round doubles the lattice resolution and scans the offsets
    /// `z ∈ [−R, R]^{k−1}` (last coordinate balancing the sum) around the
    /// incumbent, with `(2R + 1)^{k−1} ≤ budget`, skipping points that leave
    /// the simplex. Weights can reach zero exactly, so support changes stay
    /// visible.
    pub fn refined_grid_minimum(k: &KernelMatrix, budget: u128, rounds: usize) -> (f64, Vec<f64>) {
        let n = k.size();
        let mut m = divisions_for_budget(n, budget);
        let (mut value, mut counts) = lattice_minimum(k, m, energy);
        if n == 1 {
            return (value, vec![1.0]);
        }
        let mut radius: i64 = 1;
        while ((2 * radius + 3) as u128).pow(n as u32 - 1) <= budget {
            radius += 1;
        }
        let span = (2 * radius + 1) as usize;
        let cells = span.pow(n as u32 - 1);
        for _ in 1..rounds {
            m *= 2;
            let centre: Vec<i64> = counts.iter().map(|&c| 2 * c as i64).collect();
            let mut best = (value, centre.clone());
            let mut w = vec![0.0; n];
            'cell: for cell in 0..cells {
                let mut rest = cell;
                let mut drift = 0;
                let mut point = centre.clone();
                for p in point.iter_mut().take(n - 1) {
                    let z = (rest % span) as i64 - radius;
                    rest /= span;
                    *p += z;
                    drift += z;
                    if *p < 0 {
                        continue 'cell;
                    }
                }
                point[n - 1] -= drift;
                if point[n - 1] < 0 {
                    continue;
                }
                for (x, &c) in w.iter_mut().zip(&point) {
                    *x = c as f64 / m as f64;
                }
                let j = energy(k, &w);
                if j < best.0 {
                    best = (j, point);
                }
            }
            value = best.0;
            counts = best.1.iter().map(|&c| c as usize).collect();
        }
        (value, counts.iter().map(|&c| c as f64 / m as f64).collect())
    }

    /// Exact game value by enumerating every support: on each nonempty
    /// subset `S` solve `K_S x = 1`; positive solutions are stationary
    /// candidates with value `1/Σx`. Feasible for small `k` only.
    pub fn support_enumeration(k: &KernelMatrix) -> f64 {
        let n = k.size();
        assert!(n <= 16, "support enumeration is exponential");
        let mut best = f64::INFINITY;
        for mask in 1u32..(1 << n) {
            let idx: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
            let m = idx.len();
            let sub = DMatrix::from_fn(m, m, |a, b| k.get(idx[a], idx[b]));
            if let Some(x) = sub.lu().solve(&DVector::from_element(m, 1.0)) {
                if x.iter().all(|v| *v >= 0.0 && v.is_finite()) {
                    let total: f64 = x.iter().sum();
                    if total > 0.0 {
                        best = best.min(1.0 / total);
                    }
                }
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::oracle::*;
    use super::*;
    use crate::kernel::{functional_i, functional_j};
    use crate::pointset::gen_cantor;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn line(xs: &[f64]) -> PointCloud {
        PointCloud::new(1, xs.to_vec(), 1e-3, "line").unwrap()
    }

    fn matrix(size: usize, entries: &[f64]) -> KernelMatrix {
        KernelMatrix::from_entries(size, entries.to_vec(), 1.0, KernelOrder::Finite(1.0)).unwrap()
    }

    #[test]
    fn all_ones_game() {
        let sol = solve_game(&matrix(2, &[1.0, 1.0, 1.0, 1.0]), &SolverOptions::default()).unwrap();
        assert_abs_diff_eq!(sol.value, 1.0, epsilon = 1e-12);
        assert!(sol.converged);
    }

    #[test]
    fn two_by_two_game() {
        let k = matrix(2, &[1.0, 0.5, 0.5, 1.0]);
        let sol = solve_game(&k, &SolverOptions::default()).unwrap();
        // brute force over a fine grid of the 1-simplex
        let grid = (0..=10_000)
            .map(|i| {
                let a = i as f64 / 10_000.0;
                let w = [a, 1.0 - a];
                let l = k.mul_vec(&w);
                let mut j = f64::NEG_INFINITY;
                for t in 0..2 {
                    if w[t] > 0.0 {
                        j = j.max(l[t]);
                    }
                }
                j
            })
            .fold(f64::INFINITY, f64::min);
        assert_abs_diff_eq!(grid, 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.value, 0.75, epsilon = 1e-9);
        assert_abs_diff_eq!(sol.weights[0], 0.5, epsilon = 1e-9);
        assert!(sol.residual <= 1e-6);
    }

    #[test]
    fn identity_game() {
        for n in [1, 3, 7] {
            let mut e = vec![0.0; n * n];
            for i in 0..n {
                e[i * n + i] = 1.0;
            }
            let sol = solve_game(&matrix(n, &e), &SolverOptions::default()).unwrap();
            assert_abs_diff_eq!(sol.value, 1.0 / n as f64, epsilon = 1e-12);
            for w in &sol.weights {
                assert_abs_diff_eq!(*w, 1.0 / n as f64, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn path_graph_needs_support_restricted_maximum() {
        // closed-ball indicator on {0, 1, 2} at r = 1: the middle point sees
        // both ends. The best packing drops it and puts 1/2 on each end.
        let sol = z_value(&line(&[0.0, 1.0, 2.0]), 1.0, KernelOrder::Infinity, &SolverOptions::default()).unwrap();
        assert_abs_diff_eq!(sol.value, 0.5, epsilon = 1e-12);
        assert_eq!(sol.weights[1], 0.0);
    }

    #[test]
    fn z_value_examples() {
        let one = z_value(&line(&[0.3]), 0.1, KernelOrder::Finite(1.0), &SolverOptions::default()).unwrap();
        assert_eq!(one.value, 1.0);
        assert_eq!(one.n_value(), 1.0);
        let two = z_value(&line(&[0.0, 2.0]), 1.0, KernelOrder::Finite(1.0), &SolverOptions::default()).unwrap();
        assert_abs_diff_eq!(two.value, 0.75, epsilon = 1e-9);
        assert_abs_diff_eq!(two.n_value(), 4.0 / 3.0, epsilon = 1e-8);
    }

    #[test]
    fn cantor_values_are_certified() {
        let cloud = gen_cantor(1.0 / 3.0, 4).unwrap();
        let opts = SolverOptions::default();
        for j in 1..=4 {
            let r = 3f64.powi(-j);
            for s in [0.3, 1.0, 2.0] {
                let order = KernelOrder::Finite(s);
                let sol = z_value(&cloud, r, order, &opts).unwrap();
                assert!(sol.converged, "r={r} s={s}");
                assert!(sol.value <= 1.0 && sol.value >= 1.0 / 16.0);
                let mu = sol.to_measure(&cloud).unwrap();
                let gap = functional_j(order, &mu, r).unwrap() - functional_i(order, &mu, r).unwrap();
                assert!(gap <= 2.0 * opts.tol, "gap {gap}");
            }
        }
    }

    #[test]
    fn matches_support_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..40 {
            let k = 2 + trial % 7;
            let xs: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
            let cloud = PointCloud::merged(1, xs, 1e-3, "rand").unwrap();
            let r = 0.05 + 0.3 * rng.random::<f64>();
            for order in [KernelOrder::Finite(0.5), KernelOrder::Finite(3.0), KernelOrder::Infinity] {
                let km = kernel_matrix(&cloud, r, order).unwrap();
                let exact = support_enumeration(&km);
                let sol = solve_game(&km, &SolverOptions::default()).unwrap();
                assert!(sol.converged);
                assert!((sol.value - exact).abs() <= 1e-8, "{} vs {exact}", sol.value);
            }
        }
    }

    #[test]
    fn grid_budget_math() {
        assert_eq!(grid_size(2, 10), 11);
        assert_eq!(grid_size(3, 2), 6);
        let m = divisions_for_budget(6, 10_000);
        assert!(grid_size(6, m) <= 10_000 && grid_size(6, m + 1) > 10_000);
    }

    #[test]
    fn six_point_games_match_grid_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10 {
            let coords: Vec<f64> = (0..12).map(|_| rng.random::<f64>()).collect();
            let cloud = PointCloud::merged(2, coords, 1e-3, "six").unwrap();
            let km = kernel_matrix(&cloud, 0.3, KernelOrder::Finite(1.5)).unwrap();
            let sol = solve_game(&km, &SolverOptions::default()).unwrap();
            let (coarse, _) = grid_minimum(&km, divisions_for_budget(6, 10_000));
            assert!(sol.value <= coarse + 1e-12);
            let (fine, w) = refined_grid_minimum(&km, 10_000, 12);
            let exact = support_enumeration(&km);
            assert!((fine - exact).abs() <= 1e-3, "solver {} coarse {coarse} refined {fine} exact {exact}", sol.value);
            assert!((sol.value - fine).abs() <= 1e-3, "{} vs {fine}", sol.value);
            assert_abs_diff_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn rejects_bad_options() {
        let k = matrix(1, &[1.0]);
        assert!(solve_game(&k, &SolverOptions::with_tol(0.5)).is_err());
        let opts = SolverOptions {
            max_iters: 0,
            ..SolverOptions::default()
        };
        assert!(solve_game(&k, &opts).is_err());
    }

    #[test]
    fn entropy_examples() {
        let c = line(&[0.0, 1.0, 2.0]);
        for mode in [EntropyMode::Greedy, EntropyMode::Exact] {
            assert_eq!(entropy_number(&c, 0.4, mode).unwrap(), 3);
            assert_eq!(entropy_number(&c, 0.6, mode).unwrap(), 2);
            assert_eq!(entropy_number(&c, 1.01, mode).unwrap(), 1);
        }
        // greedy follows input order: starting in the middle blocks both ends
        let mid_first = line(&[1.0, 0.0, 2.0]);
        assert_eq!(entropy_number(&mid_first, 0.6, EntropyMode::Greedy).unwrap(), 1);
        assert_eq!(entropy_number(&mid_first, 0.6, EntropyMode::Exact).unwrap(), 2);
        let big = gen_cantor(0.5, 5).unwrap();
        assert!(entropy_number(&big, 0.1, EntropyMode::Exact).is_err());
    }

    #[test]
    fn exact_entropy_matches_subset_enumeration() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..30 {
            let k = rng.random_range(1..=12);
            let coords: Vec<f64> = (0..2 * k).map(|_| rng.random::<f64>()).collect();
            let cloud = PointCloud::merged(2, coords, 1e-3, "r").unwrap();
            let r = 0.05 + 0.2 * rng.random::<f64>();
            let n = cloud.len();
            let mut best = 0;
            for mask in 0u32..(1 << n) {
                let idx: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
                let ok = idx.iter().all(|&a| {
                    idx.iter()
                        .all(|&b| a == b || distance(cloud.point(a), cloud.point(b)) > 2.0 * r)
                });
                if ok {
                    best = best.max(idx.len());
                }
            }
            assert_eq!(entropy_number(&cloud, r, EntropyMode::Exact).unwrap(), best);
        }
    }

    #[test]
    fn indicator_identity_examples() {
        let opts = SolverOptions::default();
        let single = verify_indicator_identity(&line(&[0.5]), 0.3, 1e-4, &opts).unwrap();
        assert!(single.holds && single.entropy_count == 1);
        let pair = verify_indicator_identity(&line(&[0.0, 2.0]), 1.0, 1e-4, &opts).unwrap();
        assert_eq!(pair.entropy_count, 2);
        assert_abs_diff_eq!(pair.game_count, 2.0, epsilon = 1e-9);
        assert!(pair.holds);
    }

    #[test]
    fn coarsening_examples() {
        let cloud = line(&[0.1, 0.15, 0.8]);
        let mu = WeightedMeasure::uniform(cloud.clone());
        let nu = coarsen_measure(&mu, 2, &cloud).unwrap();
        assert_eq!(nu.support().coords(), &[0.1, 0.8]);
        assert_abs_diff_eq!(nu.weights()[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(nu.weights()[1], 1.0 / 3.0, epsilon = 1e-15);

        // already on representatives: a fixed point
        let again = coarsen_measure(&nu, 2, &cloud).unwrap();
        assert_eq!(again, nu);

        // a charged cell without cloud points
        let sparse = line(&[0.1]);
        assert!(matches!(coarsen_measure(&mu, 2, &sparse), Err(Error::EmptyCell { .. })));
        assert!(coarsen_measure(&WeightedMeasure::uniform(line(&[1.0])), 2, &line(&[0.5])).is_err());
    }

    #[test]
    fn cantor_cells_follow_construction() {
        let cloud = gen_cantor(1.0 / 3.0, 6).unwrap();
        let reps = cell_representatives(&cloud, 27).unwrap();
        let level3 = gen_cantor(1.0 / 3.0, 3).unwrap();
        assert_eq!(reps.len(), 8);
        for (a, b) in reps.iter().zip(level3.iter()) {
            assert_abs_diff_eq!(a[0], b[0], epsilon = 1e-12);
        }
    }
}
