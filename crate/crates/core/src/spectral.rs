//! Grid discretisation of the transfer operators
//! `T_k f(v) = E[f((vM)~) |vM|^k]` (row action) and
//! `T*_k f(v) = E[f((Mv)~) |Mv|^k]` (column action), the spectral radius
//! `rho(k)`, the tail index solving `rho(k) = 1` and the eigen-objects.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::batch::SampleBatch;
use crate::env::Environment;
use crate::error::{config, Error, Result};
use crate::grid::{GridFunction, GridMeasure, SphereGrid};
use crate::linalg::{dot, norm, Mat};
use crate::rng::{chunks, derive_seed, label, substream};

/// Largest tolerated fraction of singular draws (`vM = 0`).
pub const SINGULAR_BUDGET: f64 = 1e-3;
const POWER_TOL: f64 = 1e-8;
const POWER_MAX_ITER: usize = 1000;
const BISECTION_WIDTH: f64 = 1e-3;
const RHO_TOL: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    /// Row action `vM`.
    T,
    /// Column action `Mv`.
    TStar,
}

/// Monte-Carlo draws behind one operator: for every grid row the log-length
/// `log |vM|` of each draw and the interpolation weights of its direction.
///
/// Every row uses the same stratified set of matrix draws, and the cache is
/// reused for every exponent, so `k -> rho(k)` is a smooth function.
#[derive(Debug, Clone)]
pub struct KernelSamples {
    kind: OperatorKind,
    n: usize,
    mc_n: usize,
    rows: Vec<KernelRow>,
    singular: usize,
}

#[derive(Debug, Clone, Default)]
struct KernelRow {
    logs: Vec<f64>,
    starts: Vec<usize>,
    cells: Vec<u32>,
    weights: Vec<f64>,
}

impl KernelRow {
    fn draw(&self, k: usize) -> (f64, std::ops::Range<usize>) {
        (self.logs[k], self.starts[k]..self.starts[k + 1])
    }
}

fn act(kind: OperatorKind, m: &Mat, v: &[f64], out: &mut [f64]) {
    match kind {
        OperatorKind::T => m.row_mul_into(v, out),
        OperatorKind::TStar => m.mul_vec_into(v, out),
    }
}

impl KernelSamples {
    pub fn draw(kind: OperatorKind, env: &Environment, grid: &SphereGrid, mc_n: usize, seed: u64) -> Result<Self> {
        env.validate()?;
        if mc_n < 100 {
            return Err(config(format!("operator needs mc_n >= 100, got {mc_n}")));
        }
        if grid.dim != env.dim {
            return Err(config(format!(
                "grid dimension {} does not match environment dimension {}",
                grid.dim, env.dim
            )));
        }
        let d = env.dim;
        let mut rng = substream(seed, 0);
        let mats: Vec<Mat> = (0..mc_n)
            .map(|k| {
                let u0 = (k as f64 + rng.random::<f64>()) / mc_n as f64;
                let mut m = Mat::zeros(d);
                env.draw_matrix_stratified_into(&mut rng, u0, &mut m);
                m
            })
            .collect();
        let built: Vec<(KernelRow, usize)> = (0..grid.len())
            .into_par_iter()
            .map(|i| {
                let v = grid.point(i);
                let mut resample = substream(seed, 1 + i as u64);
                let mut row = KernelRow {
                    logs: Vec::with_capacity(mc_n),
                    starts: Vec::with_capacity(mc_n + 1),
                    ..KernelRow::default()
                };
                row.starts.push(0);
                let mut y = vec![0.0; d];
                let mut spare = Mat::zeros(d);
                let mut w = Vec::new();
                let mut singular = 0usize;
                for m in &mats {
                    act(kind, m, v, &mut y);
                    let mut len = norm(&y);
                    // Replace singular draws; give up once the budget is blown.
                    while (len == 0.0 || !len.is_finite()) && singular <= mc_n {
                        singular += 1;
                        env.draw_matrix_into(&mut resample, &mut spare);
                        act(kind, &spare, v, &mut y);
                        len = norm(&y);
                    }
                    if len == 0.0 || !len.is_finite() {
                        break;
                    }
                    y.iter_mut().for_each(|x| *x /= len);
                    grid.interpolation_weights(&y, &mut w);
                    row.logs.push(len.ln());
                    for &(j, a) in &w {
                        row.cells.push(j as u32);
                        row.weights.push(a);
                    }
                    row.starts.push(row.cells.len());
                }
                (row, singular)
            })
            .collect();
        let singular: usize = built.iter().map(|b| b.1).sum();
        let total = grid.len() * mc_n;
        if singular as f64 > SINGULAR_BUDGET * total as f64 {
            return Err(Error::SingularDraws { singular, total });
        }
        Ok(KernelSamples {
            kind,
            n: grid.len(),
            mc_n,
            rows: built.into_iter().map(|b| b.0).collect(),
            singular,
        })
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn mc_n(&self) -> usize {
        self.mc_n
    }

    /// Number of singular draws that were replaced.
    pub fn singular_draws(&self) -> usize {
        self.singular
    }

    pub fn operator(&self, kappa: f64) -> OperatorMatrix {
        let n = self.n;
        let inv = 1.0 / self.mc_n as f64;
        let entries: Vec<f64> = self
            .rows
            .par_iter()
            .flat_map_iter(|row| {
                let mut out = vec![0.0; n];
                for k in 0..row.logs.len() {
                    let (l, range) = row.draw(k);
                    let s = (kappa * l).exp() * inv;
                    for e in range {
                        out[row.cells[e] as usize] += s * row.weights[e];
                    }
                }
                out
            })
            .collect();
        OperatorMatrix {
            kind: self.kind,
            n,
            entries,
            mc_count: self.mc_n,
            kappa,
        }
    }

    /// `rho(kappa)` by power iteration on the operator at `kappa`.
    pub fn rho(&self, kappa: f64) -> Result<f64> {
        Ok(self.operator(kappa).right_eigen()?.0)
    }

    /// `sum_y pi(y) / r(y) * mean[log|yM| r((yM)~) |yM|^k]`.
    fn drift(&self, kappa: f64, r: &GridFunction, pi: &GridMeasure) -> f64 {
        let inv = 1.0 / self.mc_n as f64;
        self.rows
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let inner: f64 = (0..row.logs.len())
                    .map(|k| {
                        let (l, range) = row.draw(k);
                        let rv: f64 = range.map(|e| row.weights[e] * r.0[row.cells[e] as usize]).sum();
                        l * (kappa * l).exp() * rv
                    })
                    .sum();
                pi.0[i] / r.0[i] * inner * inv
            })
            .sum()
    }
}

/// Dense `n x n` kernel: `entries[i * n + j]` is the Monte-Carlo mass that
/// row `i` sends to grid point `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorMatrix {
    pub kind: OperatorKind,
    pub n: usize,
    pub entries: Vec<f64>,
    pub mc_count: usize,
    pub kappa: f64,
}

impl OperatorMatrix {
    pub fn build(kind: OperatorKind, kappa: f64, env: &Environment, grid: &SphereGrid, mc_n: usize, seed: u64) -> Result<Self> {
        Ok(KernelSamples::draw(kind, env, grid, mc_n, seed)?.operator(kappa))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    /// `(Tf)(v_i) = sum_j K_ij f_j`.
    pub fn apply(&self, f: &GridFunction) -> GridFunction {
        GridFunction(
            (0..self.n)
                .map(|i| dot(&self.entries[i * self.n..(i + 1) * self.n], &f.0))
                .collect(),
        )
    }

    /// `(mu T)_j = sum_i mu_i K_ij`.
    pub fn push(&self, mu: &GridMeasure) -> GridMeasure {
        let mut out = vec![0.0; self.n];
        for (i, m) in mu.0.iter().enumerate() {
            if *m == 0.0 {
                continue;
            }
            for (o, k) in out.iter_mut().zip(&self.entries[i * self.n..(i + 1) * self.n]) {
                *o += m * k;
            }
        }
        GridMeasure(out)
    }

    /// Leading eigenpair of `K`, eigenvector positive and sup-normalised.
    pub fn right_eigen(&self) -> Result<(f64, GridFunction)> {
        let (rho, v) = power_iteration(self.n, |x, y| {
            let f = self.apply(&GridFunction(x.to_vec()));
            y.copy_from_slice(&f.0);
        }, self.mean_row_sum())?;
        Ok((rho, GridFunction(v)))
    }

    /// Leading left eigenpair, i.e. of `K^T`, normalised to a probability.
    pub fn left_eigen(&self) -> Result<(f64, GridMeasure)> {
        let (rho, v) = power_iteration(self.n, |x, y| {
            let m = self.push(&GridMeasure(x.to_vec()));
            y.copy_from_slice(&m.0);
        }, self.mean_row_sum())?;
        Ok((rho, GridMeasure(v).normalized()))
    }

    fn mean_row_sum(&self) -> f64 {
        self.entries.iter().sum::<f64>() / self.n as f64
    }
}

/// Power iteration on `A + mu I`: the shift `mu > 0` removes the
/// oscillation of periodic kernels.
fn power_iteration<F>(n: usize, mut apply: F, mu: f64) -> Result<(f64, Vec<f64>)>
where
    F: FnMut(&[f64], &mut [f64]),
{
    let mut x = vec![1.0; n];
    let mut y = vec![0.0; n];
    let mut prev = f64::NAN;
    let mut recent = std::collections::VecDeque::with_capacity(8);
    for _ in 0..POWER_MAX_ITER {
        apply(&x, &mut y);
        for (yi, xi) in y.iter_mut().zip(&x) {
            *yi += mu * xi;
        }
        let lam = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if lam == 0.0 {
            return Ok((0.0, x));
        }
        if !lam.is_finite() {
            return Err(Error::PowerIteration {
                iterations: 0,
                last: vec![lam],
            });
        }
        for (xi, yi) in x.iter_mut().zip(&y) {
            *xi = yi / lam;
        }
        if recent.len() == 8 {
            recent.pop_front();
        }
        recent.push_back(lam - mu);
        if (lam - prev).abs() <= POWER_TOL * lam {
            return Ok((lam - mu, x));
        }
        prev = lam;
    }
    Err(Error::PowerIteration {
        iterations: POWER_MAX_ITER,
        last: recent.into_iter().collect(),
    })
}

/// Monte-Carlo `T_k f` (or `T*_k f`) at every grid point.
pub fn apply_t(
    kind: OperatorKind,
    f: &GridFunction,
    kappa: f64,
    env: &Environment,
    grid: &SphereGrid,
    mc_n: usize,
    seed: u64,
) -> Result<GridFunction> {
    if f.0.len() != grid.len() {
        return Err(config("grid function length does not match the grid"));
    }
    Ok(OperatorMatrix::build(kind, kappa, env, grid, mc_n, seed)?.apply(f))
}

/// `rho(kappa)` and the leading right eigenvector of `T_kappa`.
pub fn spectral_radius(kappa: f64, env: &Environment, grid: &SphereGrid, mc_n: usize, seed: u64) -> Result<(f64, GridFunction)> {
    OperatorMatrix::build(OperatorKind::T, kappa, env, grid, mc_n, seed)?.right_eigen()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralSolution {
    pub kappa: f64,
    pub rho: f64,
    pub alpha: f64,
    pub bracket: (f64, f64),
    pub rho_history: Vec<(f64, f64)>,
    pub grid: SphereGrid,
    pub r: GridFunction,
    pub eta: GridMeasure,
    pub pi: GridMeasure,
    pub mc_n: usize,
    pub seed: u64,
}

impl SpectralSolution {
    /// `sum_i r_i eta_i`, equal to 1 after solving.
    pub fn r_eta_integral(&self) -> f64 {
        self.eta.integrate(&self.r)
    }
}

/// Bisect `log rho(k) = 0` on `bracket` with a single draw cache, then
/// extract `r`, `eta`, `pi` and `alpha` at the root.
pub fn solve_kappa(env: &Environment, grid: &SphereGrid, bracket: (f64, f64), mc_n: usize, seed: u64) -> Result<SpectralSolution> {
    let (mut lo, mut hi) = bracket;
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(config(format!("invalid kappa bracket ({lo}, {hi})")));
    }
    let samples = KernelSamples::draw(OperatorKind::T, env, grid, mc_n, seed)?;
    let mut history = Vec::new();
    let mut eval = |k: f64| -> Result<f64> {
        let r = samples.rho(k)?;
        history.push((k, r));
        Ok(r)
    };
    let rho_lo = eval(lo)?;
    let rho_hi = eval(hi)?;
    if !(rho_lo < 1.0 && rho_hi > 1.0) {
        return Err(Error::Bracket {
            lo,
            hi,
            rho_lo,
            rho_hi,
        });
    }
    while hi - lo > BISECTION_WIDTH {
        let mid = 0.5 * (lo + hi);
        if eval(mid)?.ln() < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let kappa = 0.5 * (lo + hi);
    let op = samples.operator(kappa);
    let (rho, r) = op.right_eigen()?;
    let (_, eta) = op.left_eigen()?;
    history.push((kappa, rho));
    if (rho - 1.0).abs() > RHO_TOL {
        return Err(Error::Estimate(format!(
            "rho({kappa:.4}) = {rho:.4} after bisection; rho is not continuous across the bracket"
        )));
    }
    let scale = eta.integrate(&r);
    let r = GridFunction(r.0.iter().map(|x| x / scale).collect());
    let pi = GridMeasure(r.0.iter().zip(&eta.0).map(|(a, b)| a * b).collect()).normalized();
    let alpha = samples.drift(kappa, &r, &pi);
    if !(alpha > 0.0) {
        return Err(Error::NonPositiveDrift(alpha));
    }
    Ok(SpectralSolution {
        kappa,
        rho,
        alpha,
        bracket,
        rho_history: history,
        grid: grid.clone(),
        r,
        eta,
        pi,
        mc_n,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenResiduals {
    /// `||T r - r||_sup / ||r||_sup`.
    pub right: f64,
    /// Total variation distance between `eta T` and `eta`.
    pub left: f64,
}

/// Fixed-point residuals of `r` and `eta` under an operator built from fresh draws.
pub fn eigen_residuals(sol: &SpectralSolution, env: &Environment, mc_n: usize, seed: u64) -> Result<EigenResiduals> {
    let op = OperatorMatrix::build(OperatorKind::T, sol.kappa, env, &sol.grid, mc_n, seed)?;
    Ok(EigenResiduals {
        right: sol.r.relative_sup_distance(&op.apply(&sol.r)),
        left: op.push(&sol.eta).tv_distance(&sol.eta),
    })
}

/// `(E ||M_1 ... M_n||^k)^{1/n}` by plain Monte Carlo.
pub fn product_moment_rate(env: &Environment, kappa: f64, n: usize, mc: usize, seed: u64) -> Result<f64> {
    env.validate()?;
    if n < 1 || mc < 1 {
        return Err(config("product_moment_rate needs n >= 1 and mc >= 1"));
    }
    let d = env.dim;
    let logs: Vec<f64> = chunks(mc, 4096)
        .into_par_iter()
        .enumerate()
        .flat_map_iter(|(ci, (_, len))| {
            let mut rng = substream(seed, ci as u64);
            let mut m = Mat::zeros(d);
            let mut p = Mat::identity(d);
            let mut tmp = Mat::zeros(d);
            (0..len)
                .map(|_| {
                    p.set_identity();
                    let mut log = 0.0;
                    for _ in 0..n {
                        env.draw_matrix_into(&mut rng, &mut m);
                        p.mul_into(&m, &mut tmp);
                        std::mem::swap(&mut p, &mut tmp);
                        let s = p.op_norm();
                        if s == 0.0 {
                            return f64::NEG_INFINITY;
                        }
                        p.scale(1.0 / s);
                        log += s.ln();
                    }
                    kappa * log
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return Ok(0.0);
    }
    let mean = logs.iter().map(|l| (l - top).exp()).sum::<f64>() / mc as f64;
    Ok(((mean.ln() + top) / n as f64).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldieEstimate {
    pub directions: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// `sum_y pi(y)/r(y) E[(<y, MR+Q>+)^k - (<y, MR>+)^k]`.
    pub bracket: f64,
    pub bracket_se: f64,
    pub samples: usize,
    pub warning: Option<String>,
}

/// `K(v) = r(v) / (alpha k) * sum_y pi(y)/r(y) E[(<y, MR+Q>+)^k - (<y, MR>+)^k]`
/// with `R` from `stationary` and `(M, Q)` drawn independently of `R`.
pub fn goldie_constant(
    sol: &SpectralSolution,
    env: &Environment,
    stationary: &SampleBatch,
    directions: &[Vec<f64>],
    seed: u64,
) -> Result<GoldieEstimate> {
    env.validate()?;
    let d = env.dim;
    if stationary.dim() != d || stationary.len() < 2 {
        return Err(config("goldie_constant needs at least two stationary samples of the environment's dimension"));
    }
    if directions.iter().any(|v| v.len() != d || (norm(v) - 1.0).abs() > 1e-9) {
        return Err(config("goldie_constant directions must be unit vectors"));
    }
    let k = sol.kappa;
    let grid = &sol.grid;
    let coef: Vec<f64> = (0..grid.len()).map(|i| sol.pi.0[i] / sol.r.0[i]).collect();
    let pos_pow = |x: f64| if x > 0.0 { x.powf(k) } else { 0.0 };
    let seed = derive_seed(seed, label("goldie"));
    let per_sample: Vec<f64> = chunks(stationary.len(), 4096)
        .into_par_iter()
        .enumerate()
        .flat_map_iter(|(ci, (start, len))| {
            let mut rng = substream(seed, ci as u64);
            let (mut m, mut q) = env.buffers();
            let mut mr = vec![0.0; d];
            (start..start + len)
                .map(|i| {
                    env.draw_into(&mut rng, &mut m, &mut q);
                    m.mul_vec_into(stationary.get(i), &mut mr);
                    (0..grid.len())
                        .filter(|&y| coef[y] != 0.0)
                        .map(|y| {
                            let p = grid.point(y);
                            let a = dot(p, &mr);
                            let b = a + dot(p, &q);
                            coef[y] * (pos_pow(b) - pos_pow(a))
                        })
                        .sum::<f64>()
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let (bracket, bracket_se) = crate::stats::mean_se(&per_sample);
    let mut warning = None;
    if bracket <= 0.0 {
        if bracket < -3.0 * bracket_se {
            return Err(Error::Estimate(format!(
                "Goldie bracket {bracket:e} is more than 3 SE ({bracket_se:e}) below zero"
            )));
        }
        warning = Some(format!("Goldie bracket {bracket:e} is not positive (SE {bracket_se:e})"));
    }
    let factor = |v: &[f64]| grid.interpolate(&sol.r, v) / (sol.alpha * k);
    Ok(GoldieEstimate {
        directions: directions.to_vec(),
        values: directions.iter().map(|v| factor(v) * bracket).collect(),
        std_errors: directions.iter().map(|v| factor(v) * bracket_se).collect(),
        bracket,
        bracket_se,
        samples: stationary.len(),
        warning,
    })
}
