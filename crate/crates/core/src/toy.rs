//! Binary quadratic toy problem: `L(c) = 1/2 (c - W*)^T A (c - W*)` over
//! corners `c` in `{-1, +1}^d`, with hidden weights driven by the gradient
//! evaluated at their own sign.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};
use crate::stats;

/// Largest dimension accepted by exhaustive enumeration.
pub const MAX_BRUTE_FORCE_DIM: usize = 24;
pub const DEFAULT_TARGET_RANGE: f64 = 0.95;
pub const DEFAULT_INIT_RANGE: f64 = 0.1;
const RIDGE: f64 = 0.05;

/// Default step count `20 d / eta`.
pub fn default_steps(d: usize, eta: f64) -> usize {
    (20.0 * d as f64 / eta).round() as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProblem {
    a: Vec<f64>,
    target: Vec<f64>,
    d: usize,
}

impl QuadraticProblem {
    /// `a` is row-major `d x d`, symmetric within 1e-9 and positive definite.
    pub fn new(a: Vec<f64>, target: Vec<f64>) -> Result<Self> {
        let d = target.len();
        if d == 0 {
            return Err(Error::InvalidArgument("dimension must be >= 1"));
        }
        if a.len() != d * d {
            return Err(Error::ShapeMismatch {
                expected: vec![d, d],
                actual: vec![a.len()],
            });
        }
        if let Some(i) = a.iter().chain(&target).position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index: i });
        }
        let mut gap = 0.0f64;
        for i in 0..d {
            for j in 0..i {
                gap = gap.max((a[i * d + j] - a[j * d + i]).abs());
            }
        }
        if gap > 1e-9 {
            return Err(Error::NotSymmetric { gap });
        }
        if !cholesky_ok(&a, d) {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(QuadraticProblem { a, target, d })
    }

    /// `A = B^T B / d + 0.05 I` with standard normal `B`, and `W*` uniform in
    /// `(-target_range, target_range)^d`, from the `(seed, index)` stream.
    pub fn random(d: usize, seed: u64, index: u64, target_range: f64) -> Result<Self> {
        if !target_range.is_finite() || target_range <= 0.0 {
            return Err(Error::InvalidArgument("target range must be positive"));
        }
        let mut r = rng::stream(seed, Purpose::ToyProblem, index);
        let b: Vec<f64> = (0..d * d).map(|_| r.sample(StandardNormal)).collect();
        let mut a = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..=i {
                let dot: f64 = (0..d).map(|k| b[k * d + i] * b[k * d + j]).sum::<f64>() / d as f64;
                a[i * d + j] = dot;
                a[j * d + i] = dot;
            }
            a[i * d + i] += RIDGE;
        }
        let target = (0..d).map(|_| r.gen_range(-target_range..target_range)).collect();
        Self::new(a, target)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn a(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.d + j]
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    fn check_corner(&self, c: &[f64]) -> Result<()> {
        if c.len() != self.d {
            return Err(Error::ShapeMismatch {
                expected: vec![self.d],
                actual: vec![c.len()],
            });
        }
        match c.iter().find(|&&v| v != 1.0 && v != -1.0) {
            Some(&v) => Err(Error::NotACorner(v)),
            None => Ok(()),
        }
    }

    /// `g = A (c - W*)`, each entry summed over `j` in index order.
    fn grad_unchecked(&self, c: &[f64]) -> Vec<f64> {
        (0..self.d)
            .map(|i| {
                let row = &self.a[i * self.d..(i + 1) * self.d];
                row.iter().zip(c).zip(&self.target).map(|((&a, &cj), &t)| a * (cj - t)).sum()
            })
            .collect()
    }

    fn loss_unchecked(&self, c: &[f64]) -> f64 {
        let g = self.grad_unchecked(c);
        0.5 * g.iter().zip(c).zip(&self.target).map(|((&g, &cj), &t)| (cj - t) * g).sum::<f64>()
    }

    /// Loss gradient at corner `c`.
    pub fn gradient(&self, c: &[f64]) -> Result<Vec<f64>> {
        self.check_corner(c)?;
        Ok(self.grad_unchecked(c))
    }

    pub fn corner_loss(&self, c: &[f64]) -> Result<f64> {
        self.check_corner(c)?;
        Ok(self.loss_unchecked(c))
    }

    /// `L(c with c_i negated) - L(c)` in closed form: `-2 c_i g_i + 2 A_ii`.
    pub fn flip_importance(&self, c: &[f64], i: usize) -> Result<f64> {
        self.check_corner(c)?;
        if i >= self.d {
            return Err(Error::IndexOutOfRange { index: i, len: self.d });
        }
        let row = &self.a[i * self.d..(i + 1) * self.d];
        let gi: f64 = row.iter().zip(c).zip(&self.target).map(|((&a, &cj), &t)| a * (cj - t)).sum();
        Ok(-2.0 * c[i] * gi + 2.0 * self.a(i, i))
    }

    /// The same quantity as two full loss evaluations.
    pub fn flip_importance_brute(&self, c: &[f64], i: usize) -> Result<f64> {
        self.check_corner(c)?;
        if i >= self.d {
            return Err(Error::IndexOutOfRange { index: i, len: self.d });
        }
        let mut f = c.to_vec();
        f[i] = -f[i];
        Ok(self.loss_unchecked(&f) - self.loss_unchecked(c))
    }

    /// Exact minimiser over all `2^d` corners, by Gray-code enumeration.
    ///
    /// The running loss is updated incrementally; every corner within a
    /// small tolerance of the running minimum is re-evaluated from scratch,
    /// and exact ties go to the lexicographically smallest corner.
    pub fn brute_force_optimum(&self) -> Result<(Vec<f64>, f64)> {
        let d = self.d;
        if d > MAX_BRUTE_FORCE_DIM {
            return Err(Error::DimensionTooLarge { dim: d, max: MAX_BRUTE_FORCE_DIM });
        }
        let corner_of = |mask: u32| -> Vec<f64> { (0..d).map(|i| if mask >> i & 1 == 1 { 1.0 } else { -1.0 }).collect() };
        let mut mask = 0u32;
        let mut c = corner_of(mask);
        let mut g = self.grad_unchecked(&c);
        let mut loss = self.loss_unchecked(&c);
        let tol = |l: f64| 1e-9 * (1.0 + l.abs());
        let mut best = loss;
        let mut candidates = vec![mask];
        for k in 1u64..(1u64 << d) {
            let i = k.trailing_zeros() as usize;
            let ci = c[i];
            loss += -2.0 * ci * g[i] + 2.0 * self.a(i, i);
            c[i] = -ci;
            for (j, gj) in g.iter_mut().enumerate() {
                *gj -= 2.0 * ci * self.a(j, i);
            }
            mask ^= 1 << i;
            if k % 4096 == 0 {
                g = self.grad_unchecked(&c);
                loss = self.loss_unchecked(&c);
            }
            if loss < best - tol(best) {
                best = loss;
                candidates.retain(|&m| self.loss_unchecked(&corner_of(m)) <= best + tol(best));
                candidates.push(mask);
            } else if loss <= best + tol(best) {
                best = best.min(loss);
                candidates.push(mask);
            }
        }
        let mut winner: Option<(Vec<f64>, f64)> = None;
        for m in candidates {
            let cand = corner_of(m);
            let l = self.loss_unchecked(&cand);
            let better = match &winner {
                None => true,
                Some((wc, wl)) => l < *wl || (l == *wl && lex_less(&cand, wc)),
            };
            if better {
                winner = Some((cand, l));
            }
        }
        Ok(winner.expect("at least one corner"))
    }
}

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if x != y {
            return x < y;
        }
    }
    false
}

fn cholesky_ok(a: &[f64], d: usize) -> bool {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if s.is_nan() || s <= 0.0 {
                    return false;
                }
                l[i * d + i] = Float::sqrt(s);
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    true
}

/// Corner `sign(w)`, with `sign(0) = +1`.
pub fn corner_of(w: &[f64]) -> Vec<f64> {
    w.iter().map(|&v| if v >= 0.0 { 1.0 } else { -1.0 }).collect()
}

/// Seeded start point, uniform in `(-0.1, 0.1)^d`.
pub fn random_start(d: usize, seed: u64, index: u64) -> Vec<f64> {
    let mut r = rng::stream(seed, Purpose::ToyStart, index);
    (0..d).map(|_| r.gen_range(-DEFAULT_INIT_RANGE..DEFAULT_INIT_RANGE)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub eta: f64,
    pub steps: usize,
    /// `(t, W^h_t)` every `record_every` steps, plus the final state.
    pub snapshots: Vec<(usize, Vec<f64>)>,
    /// `sign(W^h_t)` for `t = 0..steps`, i.e. the corner used by each step.
    pub corners: Vec<Vec<f64>>,
    pub final_hidden: Vec<f64>,
}

impl Trajectory {
    /// Snapshots of `|W^h|`.
    pub fn magnitudes(&self) -> impl Iterator<Item = (usize, Vec<f64>)> + '_ {
        self.snapshots.iter().map(|(t, w)| (*t, w.iter().map(|v| v.abs()).collect()))
    }
}

/// Iterates `W^h <- W^h - eta * A (sign(W^h) - W*)`.
///
/// Within a run of steps that share the same corner the state is computed
/// as `W^h_s - k * (eta * g)` from the first state `W^h_s` of the run, so
/// the trajectory is exactly linear while the corner is unchanged.
pub fn run_dynamics(p: &QuadraticProblem, eta: f64, steps: usize, w0: &[f64], record_every: usize) -> Result<Trajectory> {
    if !eta.is_finite() || eta < 0.0 {
        return Err(Error::InvalidArgument("eta must be finite and >= 0"));
    }
    if w0.len() != p.d {
        return Err(Error::ShapeMismatch {
            expected: vec![p.d],
            actual: vec![w0.len()],
        });
    }
    if let Some(i) = w0.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index: i });
    }
    let record_every = record_every.max(1);
    let mut w = w0.to_vec();
    let mut anchor = w.clone();
    let mut k = 0.0f64;
    let mut seg_corner: Vec<f64> = Vec::new();
    let mut delta = vec![0.0; p.d];
    let mut snapshots = Vec::new();
    let mut corners = Vec::with_capacity(steps);
    for t in 0..steps {
        if t % record_every == 0 {
            snapshots.push((t, w.clone()));
        }
        let c = corner_of(&w);
        if c != seg_corner {
            anchor.copy_from_slice(&w);
            k = 0.0;
            let g = p.grad_unchecked(&c);
            for (dl, gi) in delta.iter_mut().zip(&g) {
                *dl = eta * gi;
            }
            seg_corner = c.clone();
        }
        k += 1.0;
        for ((wi, &ai), &di) in w.iter_mut().zip(&anchor).zip(&delta) {
            *wi = ai - k * di;
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { step: t + 1 });
        }
        corners.push(c);
    }
    if snapshots.last().map(|s| s.0) != Some(steps) {
        snapshots.push((steps, w.clone()));
    }
    Ok(Trajectory {
        eta,
        steps,
        snapshots,
        corners,
        final_hidden: w,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceRow {
    pub i: usize,
    /// Flip importance at the binary optimum.
    pub delta_l: f64,
    /// Flip importance at the most visited corner of the last tenth.
    pub delta_l_visited: f64,
    pub wh_abs: f64,
    pub wh_norm: f64,
    /// `(|W^h_i(T)| - |W^h_i(T/2)|) / (T - T/2)`.
    pub growth_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub mean_delta_l: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceReport {
    pub optimum: Vec<f64>,
    pub optimum_loss: f64,
    pub visited: Vec<f64>,
    pub rows: Vec<ImportanceRow>,
    pub bins: Vec<Bin>,
    /// Spearman correlation of `|W^h_i(T)|` with `delta_l`.
    pub spearman: Option<f64>,
    pub spearman_visited: Option<f64>,
}

/// Equal-width bins of `(x, y)` pairs over `[0, 1]`; the last bin is closed.
pub fn bin_means(pairs: &[(f64, f64)], bins: usize) -> Vec<Bin> {
    let bins = bins.max(1);
    let mut sums = vec![(0usize, 0.0f64); bins];
    for &(x, y) in pairs {
        let b = ((x * bins as f64) as usize).min(bins - 1);
        sums[b].0 += 1;
        sums[b].1 += y;
    }
    sums.into_iter()
        .enumerate()
        .map(|(b, (count, s))| Bin {
            lo: b as f64 / bins as f64,
            hi: (b + 1) as f64 / bins as f64,
            count,
            mean_delta_l: if count > 0 { Some(s / count as f64) } else { None },
        })
        .collect()
}

fn most_visited(corners: &[Vec<f64>]) -> Vec<f64> {
    let mut sorted: Vec<&Vec<f64>> = corners.iter().collect();
    sorted.sort_by(|a, b| {
        if lex_less(a, b) {
            core::cmp::Ordering::Less
        } else if lex_less(b, a) {
            core::cmp::Ordering::Greater
        } else {
            core::cmp::Ordering::Equal
        }
    });
    let (mut best, mut best_n) = (sorted[0], 0);
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        if j - i > best_n {
            best = sorted[i];
            best_n = j - i;
        }
        i = j;
    }
    best.clone()
}

/// Runs the dynamics from `w0` and relates final hidden magnitudes to flip
/// importance at the binary optimum.
pub fn divergence_importance_report(p: &QuadraticProblem, eta: f64, steps: usize, w0: &[f64], bins: usize) -> Result<ImportanceReport> {
    if steps == 0 {
        return Err(Error::InvalidArgument("steps must be >= 1"));
    }
    let (optimum, optimum_loss) = p.brute_force_optimum()?;
    let half = steps / 2;
    let traj = run_dynamics(p, eta, steps, w0, half.max(1))?;
    let mid = traj
        .snapshots
        .iter()
        .find(|(t, _)| *t == half)
        .map(|(_, w)| w.clone())
        .unwrap_or_else(|| w0.to_vec());
    let tail = (steps / 10).max(1);
    let visited = most_visited(&traj.corners[steps - tail..]);
    let w = &traj.final_hidden;
    let max_abs = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max_abs == 0.0 {
        return Err(Error::InvalidArgument("final hidden state is all zero"));
    }
    let span = (steps - half) as f64;
    let rows = (0..p.d)
        .map(|i| {
            Ok(ImportanceRow {
                i,
                delta_l: p.flip_importance(&optimum, i)?,
                delta_l_visited: p.flip_importance(&visited, i)?,
                wh_abs: w[i].abs(),
                wh_norm: w[i].abs() / max_abs,
                growth_rate: (w[i].abs() - mid[i].abs()) / span,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let abs: Vec<f64> = rows.iter().map(|r| r.wh_abs).collect();
    let dl: Vec<f64> = rows.iter().map(|r| r.delta_l).collect();
    let dlv: Vec<f64> = rows.iter().map(|r| r.delta_l_visited).collect();
    let pairs: Vec<(f64, f64)> = rows.iter().map(|r| (r.wh_norm, r.delta_l)).collect();
    Ok(ImportanceReport {
        optimum,
        optimum_loss,
        visited,
        bins: bin_means(&pairs, bins),
        spearman: stats::spearman(&abs, &dl),
        spearman_visited: stats::spearman(&abs, &dlv),
        rows,
    })
}
