//! The stable limit of normalised Birkhoff sums: the series
//! `W(x) = sum_k M_k ... M_1 x`, the exponent
//! `C_k(v) = int ((e^{i<v,x>} - 1) h_v(x) - i corr(x)) Lambda(dx)`,
//! centering, empirical characteristic functions and nondegeneracy checks.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::batch::SampleBatch;
use crate::env::Environment;
use crate::error::{config, precondition, Error, Result};
use crate::linalg::{dot, norm, Mat};
use crate::quadrature::{integrate, QuadSettings};
use crate::recursion::{SeriesConfig, Truncation};
use crate::rng::{chunks, substream};
use crate::stats::{ks_two_sample, mean_se};
use crate::tails::SpectralMeasure;

/// `|k - 1|` below this is treated as the Cauchy-type case `k = 1`.
pub const UNIT_KAPPA_TOL: f64 = 0.05;
pub const DEFAULT_S_MAX: f64 = 50.0;

/// Draws of the random matrix `S = sum_{k>=1} M_k ... M_1`, so that
/// `W(x) = S x` and `W* v = S^T v` on the same draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WSeries {
    pub dim: usize,
    pub draws: Vec<Mat>,
    pub truncation: Truncation,
    pub max_depth: usize,
    pub mean_depth: f64,
    pub seed: u64,
}

impl WSeries {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    /// `W(x)` for every draw.
    pub fn apply(&self, x: &[f64]) -> SampleBatch {
        let mut out = Vec::with_capacity(self.dim * self.len());
        let mut y = vec![0.0; self.dim];
        for s in &self.draws {
            s.mul_vec_into(x, &mut y);
            out.extend_from_slice(&y);
        }
        SampleBatch::new(self.dim, out, crate::batch::BatchMeta {
            kind: crate::batch::BatchKind::WSeries,
            seed: self.seed,
            truncation: match self.truncation {
                Truncation::Fixed(n) => Some(n),
                Truncation::Adaptive(_) => None,
            },
            tolerance: match self.truncation {
                Truncation::Adaptive(e) => Some(e),
                Truncation::Fixed(_) => None,
            },
            max_depth: self.max_depth,
            mean_depth: self.mean_depth,
            steps: None,
        })
    }

    /// `W* v = sum_k M_1^T ... M_k^T v` for every draw.
    pub fn apply_transposed(&self, v: &[f64]) -> Vec<Vec<f64>> {
        let mut y = vec![0.0; self.dim];
        self.draws
            .iter()
            .map(|s| {
                s.row_mul_into(v, &mut y);
                y.clone()
            })
            .collect()
    }

    /// `<v, W(x)>` for every draw.
    pub fn projections(&self, v: &[f64], x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim];
        self.draws
            .iter()
            .map(|s| {
                s.mul_vec_into(x, &mut y);
                dot(v, &y)
            })
            .collect()
    }
}

/// Sample `S = sum_{k=1}^N M_k ... M_1`; the adaptive rule stops once
/// `||M_k ... M_1|| < tolerance`.
pub fn sample_w_series(env: &Environment, cfg: &SeriesConfig, count: usize) -> Result<WSeries> {
    env.validate()?;
    cfg.validate()?;
    let d = env.dim;
    let parts: Vec<Result<Vec<(Mat, usize)>>> = chunks(count, 1024)
        .into_par_iter()
        .enumerate()
        .map(|(ci, (_, len))| {
            let mut rng = substream(cfg.seed, ci as u64);
            let mut m = Mat::zeros(d);
            let mut p = Mat::identity(d);
            let mut tmp = Mat::zeros(d);
            (0..len)
                .map(|_| {
                    p.set_identity();
                    let mut s = Mat::zeros(d);
                    let limit = match cfg.truncation {
                        Truncation::Fixed(n) => n,
                        Truncation::Adaptive(_) => cfg.cap,
                    };
                    let mut depth = limit;
                    for k in 1..=limit {
                        env.draw_matrix_into(&mut rng, &mut m);
                        m.mul_into(&p, &mut tmp);
                        std::mem::swap(&mut p, &mut tmp);
                        for (a, b) in s.as_mut_slice().iter_mut().zip(p.as_slice()) {
                            *a += b;
                        }
                        if let Truncation::Adaptive(eps) = cfg.truncation {
                            let pn = p.op_norm();
                            if !pn.is_finite() {
                                return Err(Error::Overflow { step: k, norm: pn });
                            }
                            if pn < eps {
                                depth = k;
                                break;
                            }
                            if k == limit {
                                return Err(Error::NonContraction { cap: cfg.cap, last_norm: pn });
                            }
                        }
                    }
                    Ok((s, depth))
                })
                .collect()
        })
        .collect();
    let mut draws = Vec::with_capacity(count);
    let mut max_depth = 0;
    let mut total = 0usize;
    for p in parts {
        for (s, depth) in p? {
            draws.push(s);
            max_depth = max_depth.max(depth);
            total += depth;
        }
    }
    Ok(WSeries {
        dim: d,
        draws,
        truncation: cfg.truncation,
        max_depth,
        mean_depth: if count > 0 { total as f64 / count as f64 } else { 0.0 },
        seed: cfg.seed,
    })
}

/// `W(x)` draws for a single starting vector.
pub fn sample_w(env: &Environment, x: &[f64], cfg: &SeriesConfig, count: usize) -> Result<SampleBatch> {
    if x.len() != env.dim {
        return Err(config("x has the wrong dimension"));
    }
    Ok(sample_w_series(env, cfg, count)?.apply(x))
}

/// `h_v(x) = E exp(i <v, W(x)>)` over the draws.
pub fn h_v(v: &[f64], x: &[f64], w: &WSeries) -> Result<Complex64> {
    if (norm(v) - 1.0).abs() > 1e-9 {
        return Err(precondition("h_v needs |v| = 1"));
    }
    let b = w.projections(v, x);
    let sum: Complex64 = b.iter().map(|t| Complex64::new(0.0, *t).exp()).sum();
    Ok(sum / b.len() as f64)
}

/// Which centering the normalised sums need.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `k < 1`: no centering.
    Small,
    /// `k = 1`: `n^{-1} S_n - n xi(1/n)`, with the truncated correction.
    Unit,
    /// `1 < k < 2`: centering by `n m_k`, `m_k = E R`.
    Mean,
}

impl Regime {
    pub fn of(kappa: f64) -> Result<Regime> {
        if !(kappa > 0.0 && kappa < 2.0) {
            return Err(precondition(format!("stable limits need 0 < kappa < 2, got {kappa}")));
        }
        Ok(if (kappa - 1.0).abs() < UNIT_KAPPA_TOL {
            Regime::Unit
        } else if kappa < 1.0 {
            Regime::Small
        } else {
            Regime::Mean
        })
    }

    /// The exponent used by the limit law: `1` in the unit regime.
    pub fn effective_kappa(self, kappa: f64) -> f64 {
        if self == Regime::Unit {
            1.0
        } else {
            kappa
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CBudget {
    pub quadrature: f64,
    /// Certified bound for `s > s_max`.
    pub tail: f64,
    /// Truncation of the small-`s` expansion.
    pub small_s: f64,
    /// Monte-Carlo standard error over batches of `W` draws.
    pub mc_se: f64,
}

impl CBudget {
    /// `quadrature + tail + small_s + 3 mc_se`.
    pub fn total(&self) -> f64 {
        self.quadrature + self.tail + self.small_s + 3.0 * self.mc_se
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialSettings {
    pub s_max: f64,
    pub batches: usize,
}

impl Default for RadialSettings {
    fn default() -> Self {
        RadialSettings {
            s_max: DEFAULT_S_MAX,
            batches: 8,
        }
    }
}

const TABLE_STEP: f64 = 0.25;
const TABLE_PANELS: usize = 5024;

/// The scaled radial integral `F(X) = int_0^X phi(s) s^{-k-1} ds` with
/// `phi(s) = e^{is} - 1 - i corr(s)`, where `corr(s) = s` in the mean
/// regime, `s 1{s <= 1}` in the unit regime and `0` otherwise.
///
/// Since `W(sw) = s W(w)`, the radial integral of one draw with
/// `c = <v, W(w)>` (or `c = <v, w + W(w)>`) up to `s_max` equals
/// `|c|^k F(s_max |c|)`, conjugated for `c < 0`.
#[derive(Debug, Clone)]
pub struct RadialTable {
    kappa: f64,
    regime: Regime,
    f_one: Complex64,
    /// `int_1^{1 + j h} e^{is} s^{-k-1} ds` at the table nodes.
    cum: Vec<Complex64>,
    e_inf: Complex64,
    error: f64,
}

impl RadialTable {
    pub fn new(kappa: f64, regime: Regime) -> Self {
        let k = kappa;
        let p = k + 1.0;
        // power series of phi on [0, 1]
        let first = if regime == Regime::Small { 1 } else { 2 };
        let mut f_one = Complex64::new(0.0, 0.0);
        let mut fact = 1.0;
        let mut ipow = Complex64::new(1.0, 0.0);
        for j in 1..40 {
            fact *= j as f64;
            ipow *= Complex64::new(0.0, 1.0);
            if j >= first {
                f_one += ipow / (fact * (j as f64 - k));
            }
        }
        let g = |s: f64| Complex64::new(0.0, s).exp() * s.powf(-p);
        let mut cum = Vec::with_capacity(TABLE_PANELS + 1);
        let mut acc = Complex64::new(0.0, 0.0);
        let mut error = 0.0;
        cum.push(acc);
        for j in 0..TABLE_PANELS {
            let a = 1.0 + j as f64 * TABLE_STEP;
            let (v, e) = crate::quadrature::gauss_kronrod(g, a, a + TABLE_STEP);
            acc += v;
            error += e;
            cum.push(acc);
        }
        let x_max = 1.0 + TABLE_PANELS as f64 * TABLE_STEP;
        let e_inf = acc + Self::oscillatory_tail(p, x_max);
        error += p * (p + 1.0) * (p + 2.0) * x_max.powf(-p - 3.0);
        RadialTable {
            kappa,
            regime,
            f_one,
            cum,
            e_inf,
            error,
        }
    }

    /// `int_X^inf e^{is} s^{-p} ds` to three terms of integration by parts.
    fn oscillatory_tail(p: f64, x: f64) -> Complex64 {
        let e = Complex64::new(0.0, x).exp();
        e * Complex64::new(p * x.powf(-p - 1.0), x.powf(-p) - p * (p + 1.0) * x.powf(-p - 2.0))
    }

    /// Accumulated quadrature error of the table.
    pub fn error(&self) -> f64 {
        self.error
    }

    fn e_of(&self, x: f64) -> Complex64 {
        let p = self.kappa + 1.0;
        let x_max = 1.0 + TABLE_PANELS as f64 * TABLE_STEP;
        if x >= x_max {
            return self.e_inf - Self::oscillatory_tail(p, x);
        }
        let j = (((x - 1.0) / TABLE_STEP).floor() as usize).min(TABLE_PANELS - 1);
        let a = 1.0 + j as f64 * TABLE_STEP;
        if x == a {
            return self.cum[j];
        }
        let g = |s: f64| Complex64::new(0.0, s).exp() * s.powf(-p);
        self.cum[j] + crate::quadrature::gauss_kronrod(g, a, x).0
    }

    /// `F(X)` for `X >= 0`.
    pub fn f(&self, x: f64) -> Complex64 {
        let k = self.kappa;
        if x <= 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        if x <= 1.0 {
            let first = if self.regime == Regime::Small { 1 } else { 2 };
            let mut out = Complex64::new(0.0, 0.0);
            let mut fact = 1.0;
            let mut ipow = Complex64::new(1.0, 0.0);
            for j in 1..40 {
                fact *= j as f64;
                ipow *= Complex64::new(0.0, 1.0);
                if j >= first {
                    out += ipow * x.powf(j as f64 - k) / (fact * (j as f64 - k));
                }
            }
            return out;
        }
        let mut out = self.f_one + self.e_of(x) + (x.powf(-k) - 1.0) / k;
        if self.regime == Regime::Mean {
            out -= Complex64::new(0.0, (x.powf(1.0 - k) - 1.0) / (1.0 - k));
        }
        out
    }

    /// `F(inf)`; the limit exists for every regime.
    pub fn f_infinity(&self) -> Complex64 {
        let k = self.kappa;
        let mut out = self.f_one + self.e_inf - 1.0 / k;
        if self.regime == Regime::Mean {
            out += Complex64::new(0.0, 1.0 / (1.0 - k));
        }
        out
    }

    /// `int_0^S (e^{isc} - 1 - i corr_c(s)) s^{-k-1} ds = |c|^k F(S|c|)`.
    pub fn draw_integral(&self, c: f64, s_max: f64) -> Complex64 {
        if c == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        let v = self.f(s_max * c.abs()) * c.abs().powf(self.kappa);
        if c > 0.0 {
            v
        } else {
            v.conj()
        }
    }
}

/// `C_k(v)` with its error budget, from `sigma` atoms and shared `W` draws.
///
/// The integrand over `Lambda = sigma x s^{-k-1} ds` is integrated per draw
/// of `W` on `(0, s_max]`; the remainder beyond `s_max` enters the budget
/// through the bound `2 total_mass s_max^{-k} / k`.
pub fn c_kappa(
    v: &[f64],
    kappa: f64,
    sigma: &SpectralMeasure,
    w: &WSeries,
    q_symmetric: bool,
    radial: &RadialSettings,
) -> Result<(Complex64, CBudget)> {
    let regime = Regime::of(kappa)?;
    let k = regime.effective_kappa(kappa);
    c_kappa_with(v, &RadialTable::new(k, regime), sigma, w, q_symmetric, radial)
}

fn c_kappa_with(
    v: &[f64],
    table: &RadialTable,
    sigma: &SpectralMeasure,
    w: &WSeries,
    q_symmetric: bool,
    radial: &RadialSettings,
) -> Result<(Complex64, CBudget)> {
    let (k, regime) = (table.kappa, table.regime);
    if regime == Regime::Unit && !q_symmetric {
        return Err(precondition("kappa = 1 requires symmetric Q"));
    }
    if (sigma.kappa - k).abs() >= UNIT_KAPPA_TOL {
        return Err(precondition(format!("sigma was estimated at kappa = {}, not {k}", sigma.kappa)));
    }
    if (norm(v) - 1.0).abs() > 1e-9 || v.len() != w.dim {
        return Err(precondition("c_kappa needs a unit direction of the right dimension"));
    }
    if !(radial.s_max > 0.0) || radial.batches < 2 || w.len() < radial.batches {
        return Err(config("radial settings need s_max > 0, >= 2 batches and a W draw per batch"));
    }
    let big = radial.s_max;
    let nb = radial.batches;
    let per = w.len() / nb;
    let mut batch = vec![Complex64::new(0.0, 0.0); nb];
    let mut total_mass = 0.0;
    let mut corr_tail = 0.0;
    for i in 0..sigma.grid.len() {
        let m = sigma.mass.0[i];
        if m <= 0.0 {
            continue;
        }
        total_mass += m;
        let p = sigma.grid.point(i);
        let a = dot(v, p);
        let b = w.projections(v, p);
        for (j, out) in batch.iter_mut().enumerate() {
            let mut acc = Complex64::new(0.0, 0.0);
            for &bk in &b[j * per..(j + 1) * per] {
                let c1 = a + bk;
                acc += table.draw_integral(c1, big) - table.draw_integral(bk, big);
                if regime == Regime::Unit {
                    // the unit-regime corrections of the two draw integrals
                    // and of the limit integrand differ by a logarithm
                    let lg = |c: f64| if c == 0.0 { 0.0 } else { c * big.min(1.0 / c.abs()).ln() };
                    let l = lg(c1) - lg(bk) - a * (big.ln() - 0.5 * (big * big).ln_1p());
                    acc += Complex64::new(0.0, l);
                }
            }
            *out += acc * (m / per as f64);
        }
        corr_tail += m * a * match regime {
            Regime::Small => 0.0,
            Regime::Mean => big.powf(1.0 - k) / (k - 1.0),
            Regime::Unit => 0.5 * (1.0 / (big * big)).ln_1p(),
        };
    }
    let values: Vec<Complex64> = batch.iter().map(|c| c - Complex64::new(0.0, corr_tail)).collect();
    let mean = values.iter().sum::<Complex64>() / nb as f64;
    let re: Vec<f64> = values.iter().map(|c| c.re).collect();
    let im: Vec<f64> = values.iter().map(|c| c.im).collect();
    let mc_se = mean_se(&re).1.hypot(mean_se(&im).1);
    Ok((
        mean,
        CBudget {
            quadrature: table.error() * total_mass,
            tail: 2.0 * total_mass * big.powf(-k) / k,
            small_s: 0.0,
            mc_se,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Centering {
    /// `k < 1`.
    None,
    /// `d_n = n m_k`.
    Mean {
        m_kappa: Vec<f64>,
        /// Monte-Carlo mean of the stationary draws and its standard errors.
        sample_mean: Vec<f64>,
        sample_se: Vec<f64>,
    },
    /// `n xi(1/n)`, identically zero for symmetric `Q`.
    Xi {
        /// `(t, MC mean of tR/(1+|tR|^2), SE)` per probe `t`, first coordinate.
        diagnostics: Vec<(f64, Vec<f64>, Vec<f64>)>,
    },
}

impl Centering {
    /// Offset subtracted from `n^{-1/k} S_n`, divided by `n^{1 - 1/k}`.
    fn mean_vector(&self) -> Option<&[f64]> {
        match self {
            Centering::Mean { m_kappa, .. } => Some(m_kappa),
            _ => None,
        }
    }
}

/// Centering constants for the regime of `kappa`. With symmetric `Q` the
/// law of `R` is symmetric, so `m_k = 0` and `xi = 0` exactly; Monte-Carlo
/// values are reported alongside.
pub fn centering(env: &Environment, kappa: f64, samples: &SampleBatch) -> Result<Centering> {
    let regime = Regime::of(kappa)?;
    let d = samples.dim();
    let coord_mean = |f: &dyn Fn(&[f64]) -> Vec<f64>| -> (Vec<f64>, Vec<f64>) {
        let vals: Vec<Vec<f64>> = samples.iter().map(f).collect();
        (0..d)
            .map(|i| mean_se(&vals.iter().map(|x| x[i]).collect::<Vec<_>>()))
            .unzip()
    };
    Ok(match regime {
        Regime::Small => Centering::None,
        Regime::Mean => {
            let (mean, se) = coord_mean(&|x: &[f64]| x.to_vec());
            Centering::Mean {
                m_kappa: if env.q_symmetric { vec![0.0; d] } else { mean.clone() },
                sample_mean: mean,
                sample_se: se,
            }
        }
        Regime::Unit => {
            if !env.q_symmetric {
                return Err(precondition("kappa = 1 requires symmetric Q for the centering xi"));
            }
            let diagnostics = [1e-3, 1e-2, 1e-1, 1.0]
                .iter()
                .map(|&t| {
                    let (m, se) = coord_mean(&|x: &[f64]| {
                        let n2 = t * t * dot(x, x);
                        x.iter().map(|v| t * v / (1.0 + n2)).collect()
                    });
                    (t, m, se)
                })
                .collect();
            Centering::Xi { diagnostics }
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StableLaw {
    pub kappa: f64,
    pub regime: Regime,
    pub directions: Vec<Vec<f64>>,
    pub c_values: Vec<Complex64>,
    pub budgets: Vec<CBudget>,
    pub centering: Centering,
    pub provenance: StableProvenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StableProvenance {
    pub w_draws: usize,
    pub w_truncation: Truncation,
    pub w_max_depth: usize,
    pub sigma_threshold: f64,
    pub sigma_exceedances: usize,
    pub sigma_samples: usize,
    pub radial: RadialSettings,
    pub seed: u64,
}

impl StableLaw {
    /// `exp(s^k C_k(v))` at direction index `j`.
    pub fn cf(&self, s: f64, j: usize) -> Complex64 {
        (self.c_values[j] * s.abs().powf(self.kappa)).exp()
    }

    /// Largest budget over directions.
    pub fn max_budget(&self) -> f64 {
        self.budgets.iter().map(CBudget::total).fold(0.0, f64::max)
    }

    /// Normalise `S_n` by `n^{1/kappa}` with the centering of the regime.
    pub fn normalize(&self, sum: &[f64], n: usize) -> Vec<f64> {
        normalize_sum(sum, n, self.kappa, self.regime, &self.centering)
    }
}

fn normalize_sum(sum: &[f64], n: usize, kappa: f64, regime: Regime, c: &Centering) -> Vec<f64> {
    let nf = n as f64;
    let k = regime.effective_kappa(kappa);
    let scale = nf.powf(-1.0 / k);
    match c.mean_vector() {
        Some(m) => sum.iter().zip(m).map(|(s, mi)| scale * (s - nf * mi)).collect(),
        None => sum.iter().map(|s| scale * s).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StableConfig {
    pub w_draws: usize,
    pub truncation: SeriesConfig,
    pub radial: RadialSettings,
}

/// Evaluate `C_k` on `directions` from one shared set of `W` draws.
pub fn fit_stable_law(
    env: &Environment,
    kappa: f64,
    sigma: &SpectralMeasure,
    stationary: &SampleBatch,
    directions: &[Vec<f64>],
    cfg: &StableConfig,
) -> Result<StableLaw> {
    let regime = Regime::of(kappa)?;
    let w = sample_w_series(env, &cfg.truncation, cfg.w_draws)?;
    let table = RadialTable::new(regime.effective_kappa(kappa), regime);
    let results: Vec<Result<(Complex64, CBudget)>> = directions
        .par_iter()
        .map(|v| c_kappa_with(v, &table, sigma, &w, env.q_symmetric, &cfg.radial))
        .collect();
    let mut c_values = Vec::new();
    let mut budgets = Vec::new();
    for r in results {
        let (c, b) = r?;
        c_values.push(c);
        budgets.push(b);
    }
    Ok(StableLaw {
        kappa: regime.effective_kappa(kappa),
        regime,
        directions: directions.to_vec(),
        c_values,
        budgets,
        centering: centering(env, kappa, stationary)?,
        provenance: StableProvenance {
            w_draws: w.len(),
            w_truncation: w.truncation,
            w_max_depth: w.max_depth,
            sigma_threshold: sigma.threshold_used,
            sigma_exceedances: sigma.exceedances,
            sigma_samples: sigma.samples,
            radial: cfg.radial,
            seed: cfg.truncation.seed,
        },
    })
}

/// Empirical characteristic function on an `(s, v)` grid:
/// `values[j][i]` is the estimate at `s[i] * directions[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcfGrid {
    pub n: usize,
    pub replicas: usize,
    pub s: Vec<f64>,
    pub directions: Vec<Vec<f64>>,
    pub values: Vec<Vec<Complex64>>,
}

/// `E exp(i <s v, X>)` over the normalised sums `X` of `sums`.
pub fn empirical_cf(sums: &SampleBatch, n: usize, law: &StableLaw, s_grid: &[f64]) -> EcfGrid {
    let xs: Vec<Vec<f64>> = sums.iter().map(|x| law.normalize(x, n)).collect();
    empirical_cf_of(&xs, n, s_grid, &law.directions)
}

fn empirical_cf_of(xs: &[Vec<f64>], n: usize, s_grid: &[f64], directions: &[Vec<f64>]) -> EcfGrid {
    let values = directions
        .par_iter()
        .map(|v| {
            let p: Vec<f64> = xs.iter().map(|x| dot(v, x)).collect();
            s_grid
                .iter()
                .map(|&s| {
                    let (mut c, mut si) = (0.0, 0.0);
                    for t in &p {
                        let (a, b) = (s * t).sin_cos();
                        c += b;
                        si += a;
                    }
                    Complex64::new(c, si) / p.len() as f64
                })
                .collect()
        })
        .collect();
    EcfGrid {
        n,
        replicas: xs.len(),
        s: s_grid.to_vec(),
        directions: directions.to_vec(),
        values,
    }
}

/// The same grid for one-dimensional samples taken as they are.
pub fn empirical_cf_raw(samples: &SampleBatch, s_grid: &[f64], directions: &[Vec<f64>]) -> EcfGrid {
    let xs: Vec<Vec<f64>> = samples.iter().map(<[f64]>::to_vec).collect();
    empirical_cf_of(&xs, 0, s_grid, directions)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StableFit {
    /// `sup |ecf - exp(s^k C)|` over the grid.
    pub sup_deviation: f64,
    /// Largest deviation minus the propagated budget `s^k |dC|`.
    pub sup_excess: f64,
    pub per_direction: Vec<f64>,
}

impl StableFit {
    /// Deviation within `tol` once the budget of `C` is allowed for.
    pub fn within(&self, tol: f64) -> bool {
        self.sup_excess <= tol
    }
}

pub fn stable_fit_check(ecf: &EcfGrid, law: &StableLaw) -> Result<StableFit> {
    if ecf.directions != law.directions {
        return Err(precondition("ECF and stable law use different direction grids"));
    }
    let mut sup = 0.0f64;
    let mut excess = f64::NEG_INFINITY;
    let per_direction = ecf
        .values
        .iter()
        .enumerate()
        .map(|(j, row)| {
            let mut m = 0.0f64;
            for (i, z) in row.iter().enumerate() {
                let s = ecf.s[i];
                let dev = (z - law.cf(s, j)).norm();
                m = m.max(dev);
                excess = excess.max(dev - s.abs().powf(law.kappa) * law.budgets[j].total());
            }
            sup = sup.max(m);
            m
        })
        .collect();
    Ok(StableFit {
        sup_deviation: sup,
        sup_excess: excess,
        per_direction,
    })
}

/// KS distance per direction between the normalised sums at `n` and `2n`.
pub fn self_similarity(
    sums_n: &SampleBatch,
    sums_2n: &SampleBatch,
    n: usize,
    kappa: f64,
    centering: &Centering,
    directions: &[Vec<f64>],
) -> Result<Vec<f64>> {
    let regime = Regime::of(kappa)?;
    let proj = |b: &SampleBatch, m: usize, v: &[f64]| -> Vec<f64> {
        b.iter().map(|x| dot(v, &normalize_sum(x, m, kappa, regime, centering))).collect()
    };
    Ok(directions
        .par_iter()
        .map(|v| ks_two_sample(&proj(sums_n, n, v), &proj(sums_2n, 2 * n, v)))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Nondegeneracy {
    pub all_negative: bool,
    pub span_rank: usize,
    pub dim: usize,
    /// Orthonormal basis of the directions missed by `{v : Re C(v) < -tol}`.
    pub offending_subspace: Vec<Vec<f64>>,
    pub c_constant: f64,
    pub c_constant_error: f64,
}

impl Nondegeneracy {
    pub fn is_nondegenerate(&self) -> bool {
        self.all_negative && self.span_rank == self.dim && self.c_constant < 0.0
    }
}

/// `C(k) = int_0^inf (cos s - 1) s^{-k-1} ds` with its error estimate:
/// power series on `[0, 1]`, adaptive quadrature on `[1, 2 pi N]` and
/// one integration by parts for the remainder.
pub fn stable_constant(kappa: f64) -> Result<(f64, f64)> {
    if !(kappa > 0.0 && kappa < 2.0) {
        return Err(precondition("C(kappa) needs 0 < kappa < 2"));
    }
    let mut head = 0.0;
    let mut fact = 1.0;
    for j in 1..30 {
        fact *= ((2 * j - 1) * (2 * j)) as f64;
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        head += sign / (fact * (2 * j) as f64 - fact * kappa);
    }
    let p = kappa + 1.0;
    let a = TAU * 200.0;
    let settings = QuadSettings {
        abs_tol: 1e-12,
        rel_tol: 1e-12,
        max_panels: 20_000,
    };
    let mid = integrate(|s: f64| s.cos() * s.powf(-p), 1.0, a, &settings)?;
    // int_A^inf cos(s) s^{-p} ds = p int_A^inf sin(s) s^{-p-1} ds ~ p A^{-p-1}
    let tail = p * a.powf(-p - 1.0);
    let value = head + mid.value + tail - 1.0 / kappa;
    Ok((value, mid.error + tail * (p + 1.0) / a))
}

/// Check `Re C(v) < 0` on the grid and that the strongly negative
/// directions span `R^d`.
pub fn nondegeneracy(law: &StableLaw, tol: f64) -> Result<Nondegeneracy> {
    let d = law.directions.first().map_or(0, Vec::len);
    let (c, c_err) = stable_constant(law.kappa)?;
    let strong: Vec<&Vec<f64>> = law
        .directions
        .iter()
        .zip(&law.c_values)
        .filter(|(_, c)| c.re < -tol)
        .map(|(v, _)| v)
        .collect();
    let (rank, complement) = if strong.is_empty() {
        (0, (0..d).map(|i| (0..d).map(|j| f64::from(u8::from(i == j))).collect()).collect())
    } else {
        let m = nalgebra::DMatrix::from_fn(strong.len(), d, |i, j| strong[i][j]);
        let svd = m.svd(false, true);
        let vt = svd.v_t.expect("requested V^T");
        let top = svd.singular_values.iter().copied().fold(0.0, f64::max);
        let mut rank = 0;
        let mut comp = Vec::new();
        for i in 0..vt.nrows() {
            if svd.singular_values[i] > 1e-8 * top {
                rank += 1;
            } else {
                comp.push(vt.row(i).iter().copied().collect());
            }
        }
        // rows beyond the number of strong directions are never reached by V^T
        (rank, comp)
    };
    Ok(Nondegeneracy {
        all_negative: law.c_values.iter().all(|c| c.re < 0.0),
        span_rank: rank,
        dim: d,
        offending_subspace: complement,
        c_constant: c,
        c_constant_error: c_err,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositivityCheck {
    pub plus: f64,
    pub plus_se: f64,
    pub minus: f64,
    pub minus_se: f64,
}

impl PositivityCheck {
    /// Both integrals exceed `z` standard errors.
    pub fn positive_beyond(&self, z: f64) -> bool {
        self.plus > z * self.plus_se && self.minus > z * self.minus_se
    }
}

/// `int E[(<W* v + v, w>+)^k - (<W* v, w>+)^k] sigma(dw)` for `v` and `-v`.
pub fn transposed_positivity_check(kappa: f64, sigma: &SpectralMeasure, w: &WSeries, v: &[f64]) -> Result<PositivityCheck> {
    if (norm(v) - 1.0).abs() > 1e-9 || v.len() != w.dim {
        return Err(precondition("positivity check needs |v| = 1"));
    }
    if w.len() < 2 {
        return Err(config("positivity check needs at least two W draws"));
    }
    let pos = |x: f64| if x > 0.0 { x.powf(kappa) } else { 0.0 };
    let wstar = w.apply_transposed(v);
    let atoms: Vec<(f64, &[f64])> = (0..sigma.grid.len())
        .filter(|&i| sigma.mass.0[i] > 0.0)
        .map(|i| (sigma.mass.0[i], sigma.grid.point(i)))
        .collect();
    let (plus, minus): (Vec<f64>, Vec<f64>) = wstar
        .iter()
        .map(|ws| {
            let mut p = 0.0;
            let mut m = 0.0;
            for &(mass, pt) in &atoms {
                let b = dot(ws, pt);
                let a = dot(v, pt);
                p += mass * (pos(b + a) - pos(b));
                m += mass * (pos(-b - a) - pos(-b));
            }
            (p, m)
        })
        .unzip();
    let (plus, plus_se) = mean_se(&plus);
    let (minus, minus_se) = mean_se(&minus);
    Ok(PositivityCheck {
        plus,
        plus_se,
        minus,
        minus_se,
    })
}

/// Symmetric `k`-stable draws with characteristic function `exp(-scale |s|^k)`
/// (Chambers-Mallows-Stuck).
pub fn symmetric_stable_samples(kappa: f64, scale: f64, n: usize, seed: u64) -> Result<SampleBatch> {
    if !(kappa > 0.0 && kappa <= 2.0 && scale > 0.0) {
        return Err(config("symmetric stable draws need 0 < kappa <= 2 and scale > 0"));
    }
    let c = scale.powf(1.0 / kappa);
    let values = chunks(n, 8192)
        .into_par_iter()
        .enumerate()
        .flat_map_iter(|(ci, (_, len))| {
            let mut rng = substream(seed, ci as u64);
            (0..len)
                .map(|_| {
                    let v = PI * (rng.random::<f64>() - 0.5);
                    let e: f64 = Exp1.sample(&mut rng);
                    let x = if (kappa - 1.0).abs() < 1e-12 {
                        v.tan()
                    } else {
                        (kappa * v).sin() / v.cos().powf(1.0 / kappa)
                            * (((1.0 - kappa) * v).cos() / e).powf((1.0 - kappa) / kappa)
                    };
                    c * x
                })
                .collect::<Vec<_>>()
        })
        .collect();
    Ok(SampleBatch::from_scalars(values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, GridMeasure};

    fn point_sigma(kappa: f64, masses: Vec<f64>) -> SpectralMeasure {
        let grid = build_grid(1, 2).unwrap();
        SpectralMeasure {
            total_mass: masses.iter().sum(),
            mass: GridMeasure(masses),
            counts: vec![1000, 1000],
            grid,
            threshold_used: 1.0,
            kappa,
            exceedances: 2000,
            samples: 100_000,
        }
    }

    fn zero_env() -> Environment {
        Environment::deterministic(vec![vec![0.0]], vec![1.0])
    }

    #[test]
    fn w_of_zero_and_geometric_w() {
        let env = Environment::similarity_two_point(2);
        let w = sample_w(&env, &[0.0, 0.0], &SeriesConfig::adaptive(1e-10, 1), 50).unwrap();
        assert!(w.values().iter().all(|x| *x == 0.0));
        let half = Environment::deterministic(vec![vec![0.5, 0.0], vec![0.0, 0.5]], vec![1.0, 0.0]);
        for n in [3usize, 10, 30] {
            let b = sample_w(&half, &[1.0, -2.0], &SeriesConfig::fixed(n, 0), 2).unwrap();
            let err = ((b.get(0)[0] - 1.0).powi(2) + (b.get(0)[1] + 2.0).powi(2)).sqrt();
            assert!(err <= 2f64.powi(-(n as i32)) * 5f64.sqrt() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn w_is_linear_on_the_same_stream() {
        let env = Environment::similarity_two_point(2);
        let cfg = SeriesConfig::adaptive(1e-10, 4);
        let a = sample_w(&env, &[0.3, 0.4], &cfg, 100).unwrap();
        let b = sample_w(&env, &[0.6, 0.8], &cfg, 100).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((2.0 * x - y).abs() <= 1e-12 * y.abs().max(1.0));
        }
    }

    #[test]
    fn h_v_edge_cases() {
        let env = Environment::scalar_two_point();
        let w = sample_w_series(&env, &SeriesConfig::adaptive(1e-10, 5), 4000).unwrap();
        assert_eq!(h_v(&[1.0], &[0.0], &w).unwrap(), Complex64::new(1.0, 0.0));
        let z = h_v(&[1.0], &[0.7], &w).unwrap();
        let zm = h_v(&[1.0], &[-0.7], &w).unwrap();
        assert!(z.norm() <= 1.0 + 1e-12);
        assert!((z.im + zm.im).abs() < 1e-12);
        assert!(h_v(&[2.0], &[1.0], &w).is_err());
        let diag = Environment::deterministic(vec![vec![0.5, 0.0], vec![0.0, 0.3]], vec![1.0, 0.0]);
        let wd = sample_w_series(&diag, &SeriesConfig::adaptive(1e-12, 0), 10).unwrap();
        assert!((h_v(&[0.0, 1.0], &[2.0, 0.0], &wd).unwrap() - 1.0).norm() < 1e-15);
    }

    #[test]
    fn regimes() {
        assert_eq!(Regime::of(0.5).unwrap(), Regime::Small);
        assert_eq!(Regime::of(1.02).unwrap(), Regime::Unit);
        assert_eq!(Regime::of(1.5).unwrap(), Regime::Mean);
        assert!(Regime::of(2.0).is_err());
    }

    #[test]
    fn stable_constant_at_one() {
        let (c, err) = stable_constant(1.0).unwrap();
        assert!((c + PI / 2.0).abs() < 1e-6, "{c}");
        assert!(err < 1e-6);
        for k in [0.5, 1.5] {
            assert!(stable_constant(k).unwrap().0 < 0.0);
        }
    }

    #[test]
    fn positivity_on_zero_matrix() {
        // W = 0: plus = sigma(+1), minus = sigma(-1) for kappa = 1
        let w = sample_w_series(&zero_env(), &SeriesConfig::adaptive(1e-12, 0), 10).unwrap();
        let sig = point_sigma(1.0, vec![0.3, 0.5]);
        let p = transposed_positivity_check(1.0, &sig, &w, &[1.0]).unwrap();
        assert!((p.plus - 0.5).abs() < 1e-15 && (p.minus - 0.3).abs() < 1e-15);
    }

    #[test]
    fn stability_functional_equation() {
        let law = law_with(1.3, Regime::Mean, Complex64::new(-0.8, 0.2));
        for n in [2u32, 3, 4] {
            for s in [0.1, 0.5, 1.0, 2.0] {
                let lhs = law.cf(s, 0).powu(n);
                let rhs = law.cf(f64::from(n).powf(1.0 / 1.3) * s, 0);
                assert!((lhs - rhs).norm() < 1e-12);
                assert!(law.cf(s, 0).norm() <= 1.0);
            }
        }
    }

    fn law_with(kappa: f64, regime: Regime, c: Complex64) -> StableLaw {
        StableLaw {
            kappa,
            regime,
            directions: vec![vec![1.0]],
            c_values: vec![c],
            budgets: vec![CBudget { quadrature: 0.0, tail: 0.0, small_s: 0.0, mc_se: 0.0 }],
            centering: Centering::None,
            provenance: StableProvenance {
                w_draws: 0,
                w_truncation: Truncation::Fixed(1),
                w_max_depth: 0,
                sigma_threshold: 1.0,
                sigma_exceedances: 0,
                sigma_samples: 0,
                radial: RadialSettings::default(),
                seed: 0,
            },
        }
    }

    fn gamma_oracle(kappa: f64) -> Complex64 {
        // int_0^inf (e^{is} - 1 [- is]) s^{-k-1} ds = Gamma(-k) e^{-i pi k / 2}
        Complex64::from_polar(statrs::function::gamma::gamma(-kappa), -PI * kappa / 2.0)
    }

    #[test]
    fn stable_constant_matches_gamma() {
        for k in [0.3, 0.5, 1.5, 1.8] {
            let (c, _) = stable_constant(k).unwrap();
            let want = statrs::function::gamma::gamma(-k) * (PI * k / 2.0).cos();
            assert!((c - want).abs() < 1e-7, "{k}: {c} vs {want}");
        }
    }

    #[test]
    fn radial_table_limits() {
        for (k, r) in [(0.5, Regime::Small), (0.8, Regime::Small), (1.5, Regime::Mean), (1.7, Regime::Mean)] {
            let t = RadialTable::new(k, r);
            let got = t.f_infinity();
            assert!((got - gamma_oracle(k)).norm() < 1e-8, "{k}: {got} vs {}", gamma_oracle(k));
            let x: f64 = 1e9;
            let gap = 2.0 * x.powf(-k) / k + if k > 1.0 { x.powf(1.0 - k) / (k - 1.0) } else { 0.0 };
            assert!((t.f(x) - got).norm() < gap);
        }
        // int (sin s - s 1{s<1}) s^{-2} ds = 1 - Euler gamma
        let t = RadialTable::new(1.0, Regime::Unit);
        let want = Complex64::new(-PI / 2.0, 1.0 - 0.577_215_664_901_532_9);
        assert!((t.f_infinity() - want).norm() < 1e-8, "{}", t.f_infinity());
    }

    #[test]
    fn radial_table_against_adaptive_quadrature() {
        let settings = QuadSettings { abs_tol: 1e-9, rel_tol: 1e-10, max_panels: 20_000 };
        for (k, r) in [(0.5, Regime::Small), (1.0, Regime::Unit), (1.5, Regime::Mean)] {
            let t = RadialTable::new(k, r);
            for x in [0.3f64, 1.0, 1.6, 37.3, 900.0, 2000.0] {
                let phi = |s: f64| {
                    let corr = match r {
                        Regime::Small => 0.0,
                        Regime::Mean => s,
                        Regime::Unit if s <= 1.0 => s,
                        Regime::Unit => 0.0,
                    };
                    let e = (Complex64::new(0.0, s).exp() - 1.0 - Complex64::new(0.0, corr)) * s.powf(-k - 1.0);
                    vec![e.re, e.im]
                };
                // two Taylor terms on (0, eps), where the integrand cancels
                let eps: f64 = 1e-4;
                let mut want = if r == Regime::Small {
                    Complex64::new(-eps.powf(2.0 - k) / (2.0 * (2.0 - k)), eps.powf(1.0 - k) / (1.0 - k))
                } else {
                    Complex64::new(-eps.powf(2.0 - k) / (2.0 * (2.0 - k)), -eps.powf(3.0 - k) / (6.0 * (3.0 - k)))
                };
                let head = integrate(phi, eps, x.min(1.0), &settings).unwrap().value;
                want += Complex64::new(head[0], head[1]);
                if x > 1.0 {
                    let tail = integrate(phi, 1.0, x, &settings).unwrap().value;
                    want += Complex64::new(tail[0], tail[1]);
                }
                assert!((t.f(x) - want).norm() < 1e-6, "k {k} x {x}: {} vs {want}", t.f(x));
            }
        }
    }

    #[test]
    fn c_kappa_closed_form_without_memory() {
        // M = 0: h = 1 and C(v) sums the one-dimensional stable exponents
        let w = sample_w_series(&zero_env(), &SeriesConfig::adaptive(1e-12, 0), 16).unwrap();
        let (mp, mm) = (0.7, 0.4);
        let sig = point_sigma(0.5, vec![mm, mp]);
        let plus = sig.grid.point(1)[0] > 0.0;
        let (m_up, m_down) = if plus { (mp, mm) } else { (mm, mp) };
        let g = gamma_oracle(0.5);
        for v in [1.0, -1.0] {
            let want = if v > 0.0 { m_up * g + m_down * g.conj() } else { m_down * g + m_up * g.conj() };
            let (c, budget) = c_kappa(&[v], 0.5, &sig, &w, false, &RadialSettings::default()).unwrap();
            assert!((c - want).norm() <= budget.total(), "{c} vs {want}");
            let far = RadialSettings { s_max: 1e12, batches: 8 };
            let (c, _) = c_kappa(&[v], 0.5, &sig, &w, false, &far).unwrap();
            assert!((c - want).norm() < 1e-5, "{c} vs {want}");
        }
    }

    #[test]
    fn c_kappa_preconditions() {
        let w = sample_w_series(&zero_env(), &SeriesConfig::adaptive(1e-12, 0), 16).unwrap();
        let sig = point_sigma(1.0, vec![0.5, 0.5]);
        let r = RadialSettings::default();
        assert!(c_kappa(&[1.0], 1.0, &sig, &w, false, &r).is_err());
        assert!(c_kappa(&[1.0], 1.5, &sig, &w, true, &r).is_err());
        assert!(c_kappa(&[0.5], 1.0, &sig, &w, true, &r).is_err());
        let (c, b) = c_kappa(&[1.0], 1.0, &sig, &w, true, &r).unwrap();
        assert!((c.re + PI / 2.0).abs() <= b.total() && c.im.abs() < 1e-9, "{c}");
    }

    #[test]
    fn exact_stable_draws_reach_the_noise_floor() {
        let (k, scale) = (1.5, 0.8);
        let n = 20_000;
        let xs = symmetric_stable_samples(k, scale, n, 9).unwrap();
        let law = law_with(k, Regime::Mean, Complex64::new(-scale, 0.0));
        let s: Vec<f64> = (1..=20).map(|i| 0.1 * f64::from(i)).collect();
        let ecf = empirical_cf_raw(&xs, &s, &law.directions);
        let fit = stable_fit_check(&ecf, &law).unwrap();
        assert!(fit.sup_deviation < 4.0 / (n as f64).sqrt(), "{}", fit.sup_deviation);
        for row in &ecf.values {
            assert!(row.iter().all(|z| z.norm() <= 1.0 + 1e-12));
        }
    }

    #[test]
    fn light_tail_env_fails_the_stable_check() {
        let env = Environment::deterministic(vec![vec![0.2]], vec![1.0]);
        let cfg = crate::recursion::PathConfig::new(1 << 10, vec![0.0], 4000, 5);
        let sums = crate::recursion::birkhoff_sums(&env, &cfg).unwrap();
        let law = law_with(1.5, Regime::Mean, Complex64::new(-0.5, 0.0));
        let s: Vec<f64> = (1..=20).map(|i| 0.1 * f64::from(i)).collect();
        let fit = stable_fit_check(&empirical_cf(&sums, 1 << 10, &law, &s), &law).unwrap();
        assert!(fit.sup_deviation > 0.15, "{}", fit.sup_deviation);
    }
}
