//! Empirical tail estimators for the stationary law: Hill index, directional
//! tail constants, the spectral measure `sigma` of exceedance directions and
//! checks of the limit measure `Lambda = sigma x s^{-k-1} ds`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::batch::SampleBatch;
use crate::env::Environment;
use crate::error::{config, precondition, Error, Result};
use crate::grid::{GridMeasure, SphereGrid};
use crate::linalg::{dot, norm};
use crate::quadrature::{integrate, QuadSettings};
use crate::rng::{chunks, substream};
use crate::spectral::{KernelSamples, OperatorKind};
use crate::stats::{mean_se, pareto_mle, quantile_sorted};

/// Minimum exceedance count for angular estimates.
pub const MIN_EXCEEDANCES: usize = 500;
/// Default sensitivity sweep of tail fractions.
pub const DEFAULT_FRACTIONS: [f64; 3] = [0.02, 0.01, 0.005];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HillEstimate {
    pub index: f64,
    pub ci: (f64, f64),
    pub k: usize,
    pub threshold: f64,
    pub top_fraction: f64,
    /// Index at a quarter of the fraction, when enough order statistics remain.
    pub index_quarter: Option<f64>,
    /// False when the index keeps growing deeper in the tail.
    pub heavy_tail: bool,
}

fn sorted_desc(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

fn hill_on_sorted(desc: &[f64], k: usize) -> Result<(f64, f64)> {
    let u = desc[k];
    if !(u > 0.0) {
        return Err(Error::Estimate(format!(
            "Hill threshold is {u}; fewer than {k} strictly positive values"
        )));
    }
    let s: f64 = desc[..k].iter().map(|x| (x / u).ln()).sum();
    if !(s > 0.0) {
        return Err(Error::Estimate("all top order statistics tie with the threshold".into()));
    }
    Ok((k as f64 / s, u))
}

/// Hill estimator on `|R|` with `k = floor(top_fraction * N)` order statistics.
pub fn hill_tail_index(samples: &SampleBatch, top_fraction: f64) -> Result<HillEstimate> {
    if samples.len() < 10_000 {
        return Err(config(format!("Hill estimator needs >= 10^4 samples, got {}", samples.len())));
    }
    if !(top_fraction > 0.0 && top_fraction <= 0.05) {
        return Err(config(format!("top_fraction must lie in (0, 0.05], got {top_fraction}")));
    }
    let desc = sorted_desc(&samples.norms());
    let k = (top_fraction * desc.len() as f64).floor() as usize;
    let top = &desc[..=k];
    let distinct = 1 + top.windows(2).filter(|w| w[0] != w[1]).count();
    if 2 * distinct < top.len() {
        return Err(Error::Estimate(format!(
            "{} of the top {} order statistics are ties (discrete law); use a larger sample",
            top.len() - distinct,
            top.len()
        )));
    }
    let (index, threshold) = hill_on_sorted(&desc, k)?;
    let half = 1.96 / (k as f64).sqrt();
    let index_quarter = if k / 4 >= 50 {
        hill_on_sorted(&desc, k / 4).ok().map(|e| e.0)
    } else {
        None
    };
    Ok(HillEstimate {
        index,
        ci: (index * (1.0 - half), index * (1.0 + half)),
        k,
        threshold,
        top_fraction,
        index_quarter,
        heavy_tail: index_quarter.is_none_or(|q| q <= 1.5 * index),
    })
}

/// Thresholds at the given upper fractions of `|R|`, increasing.
pub fn norm_thresholds(samples: &SampleBatch, fractions: &[f64]) -> Vec<f64> {
    let mut n = samples.norms();
    n.sort_by(f64::total_cmp);
    let mut t: Vec<f64> = fractions.iter().map(|f| quantile_sorted(&n, 1.0 - f)).collect();
    t.sort_by(f64::total_cmp);
    t
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectK {
    pub direction: Vec<f64>,
    pub thresholds: Vec<f64>,
    /// `u^k P(<x, R> > u)` per threshold.
    pub values: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub plateau: f64,
    pub plateau_se: f64,
    /// `(max - min) / plateau` across thresholds.
    pub dispersion: f64,
}

/// Plateau of `u^k P(<x, R> > u)` over `thresholds`.
pub fn direct_k(samples: &SampleBatch, x: &[f64], kappa: f64, thresholds: &[f64]) -> Result<DirectK> {
    if x.len() != samples.dim() || (norm(x) - 1.0).abs() > 1e-9 {
        return Err(config("direct_K direction must be a unit vector of the sample dimension"));
    }
    if thresholds.is_empty() || thresholds.iter().any(|u| !(*u > 0.0)) {
        return Err(config("direct_K needs positive thresholds"));
    }
    let proj = samples.project(x);
    let n = proj.len() as f64;
    let mut values = Vec::new();
    let mut std_errors = Vec::new();
    for &u in thresholds {
        let c = proj.iter().filter(|p| **p > u).count();
        if c == 0 {
            return Err(config(format!("threshold {u:e} lies beyond the sample range")));
        }
        let p = c as f64 / n;
        let s = u.powf(kappa);
        values.push(s * p);
        std_errors.push(s * (p * (1.0 - p) / n).sqrt());
    }
    let plateau = values.iter().sum::<f64>() / values.len() as f64;
    let plateau_se = std_errors.iter().sum::<f64>() / std_errors.len() as f64;
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let dispersion = (hi - lo) / plateau;
    if dispersion > 0.5 {
        return Err(Error::NoPlateau {
            dispersion,
            level: plateau,
        });
    }
    Ok(DirectK {
        direction: x.to_vec(),
        thresholds: thresholds.to_vec(),
        values,
        std_errors,
        plateau,
        plateau_se,
        dispersion,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailEstimate {
    pub thresholds: Vec<f64>,
    /// `P(|R| > u)` per threshold.
    pub norm_frequencies: Vec<f64>,
    /// `u^k P(|R| > u)`.
    pub scaled_norm: Vec<f64>,
    pub direction: Vec<f64>,
    /// `u^k P(<x, R> > u)`.
    pub scaled_directional: Vec<f64>,
    pub hill: HillEstimate,
}

/// Scaled exceedance frequencies over the default sweep plus the Hill index.
pub fn tail_estimate(samples: &SampleBatch, kappa: f64, x: &[f64], top_fraction: f64) -> Result<TailEstimate> {
    let hill = hill_tail_index(samples, top_fraction)?;
    let thresholds = norm_thresholds(samples, &DEFAULT_FRACTIONS);
    let norms = samples.norms();
    let proj = samples.project(x);
    let n = norms.len() as f64;
    let freq = |v: &[f64], u: f64| v.iter().filter(|a| **a > u).count() as f64 / n;
    let norm_frequencies: Vec<f64> = thresholds.iter().map(|&u| freq(&norms, u)).collect();
    Ok(TailEstimate {
        scaled_norm: thresholds.iter().zip(&norm_frequencies).map(|(u, p)| u.powf(kappa) * p).collect(),
        scaled_directional: thresholds.iter().map(|&u| u.powf(kappa) * freq(&proj, u)).collect(),
        norm_frequencies,
        thresholds,
        direction: x.to_vec(),
        hill,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralMeasure {
    pub grid: SphereGrid,
    pub mass: GridMeasure,
    pub counts: Vec<usize>,
    pub threshold_used: f64,
    pub total_mass: f64,
    pub kappa: f64,
    pub exceedances: usize,
    pub samples: usize,
}

impl SpectralMeasure {
    /// Standard error of each cell mass (binomial counts).
    pub fn std_errors(&self) -> Vec<f64> {
        let s = self.kappa * self.threshold_used.powf(self.kappa) / self.samples as f64;
        self.counts.iter().map(|&c| s * (c as f64).sqrt()).collect()
    }

    /// Angular law: the mass normalised to a probability.
    pub fn angular(&self) -> GridMeasure {
        self.mass.normalized()
    }
}

/// Refuse `sigma` estimation where the product structure may fail:
/// integer `k` needs odd `k` and symmetric `Q`.
pub fn check_sigma_regime(kappa: f64, q_symmetric: bool) -> Result<()> {
    let nearest = kappa.round();
    if (kappa - nearest).abs() < 0.05 {
        let m = nearest as i64;
        if m % 2 == 0 {
            return Err(precondition(format!(
                "kappa = {kappa:.3} is close to the even integer {m}; the tail measure need not be a product"
            )));
        }
        if !q_symmetric {
            return Err(precondition(format!(
                "kappa = {kappa:.3} is close to the odd integer {m}; symmetric Q is required"
            )));
        }
    }
    Ok(())
}

fn exceedance_cells(samples: &SampleBatch, u: f64, grid: &SphereGrid) -> Result<Vec<usize>> {
    if samples.dim() != grid.dim {
        return Err(config("grid dimension does not match the samples"));
    }
    let mut counts = vec![0usize; grid.len()];
    let mut total = 0usize;
    let mut dir = vec![0.0; grid.dim];
    for x in samples.iter() {
        let n = norm(x);
        if n > u {
            for (d, xi) in dir.iter_mut().zip(x) {
                *d = xi / n;
            }
            counts[grid.nearest(&dir)] += 1;
            total += 1;
        }
    }
    if total < MIN_EXCEEDANCES {
        let mut norms = samples.norms();
        norms.sort_by(|a, b| b.total_cmp(a));
        let suggested = norms.get(2 * MIN_EXCEEDANCES).copied().unwrap_or(0.0);
        return Err(Error::TooFewExceedances {
            count: total,
            needed: MIN_EXCEEDANCES,
            u,
            suggested,
        });
    }
    Ok(counts)
}

/// `sigma(A) = k u^k (1/N) #{|R_i| > u, R_i/|R_i| in A}` on the Voronoi cells of `grid`.
pub fn estimate_sigma(samples: &SampleBatch, kappa: f64, q_symmetric: bool, u: f64, grid: &SphereGrid) -> Result<SpectralMeasure> {
    check_sigma_regime(kappa, q_symmetric)?;
    if !(u > 0.0) {
        return Err(config("sigma threshold must be positive"));
    }
    let counts = exceedance_cells(samples, u, grid)?;
    let s = kappa * u.powf(kappa) / samples.len() as f64;
    let mass = GridMeasure(counts.iter().map(|&c| s * c as f64).collect());
    let exceedances = counts.iter().sum();
    Ok(SpectralMeasure {
        grid: grid.clone(),
        total_mass: mass.total(),
        mass,
        counts,
        threshold_used: u,
        kappa,
        exceedances,
        samples: samples.len(),
    })
}

/// `||sigma T* - sigma||_1 / total_mass` with `T*` built from fresh draws.
pub fn check_sigma_invariance(sigma: &SpectralMeasure, env: &Environment, kappa: f64, mc_n: usize, seed: u64) -> Result<f64> {
    if !(sigma.total_mass > 0.0) {
        return Err(precondition("sigma has zero total mass"));
    }
    let op = KernelSamples::draw(OperatorKind::TStar, env, &sigma.grid, mc_n, seed)?.operator(kappa);
    Ok(op.push(&sigma.mass).l1_distance(&sigma.mass) / sigma.total_mass)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductStructure {
    pub thresholds: (f64, f64),
    pub exceedances: (usize, usize),
    /// Total variation distance of the angular histograms.
    pub angular_distance: f64,
    /// Pareto MLE of `|R|` above the lower threshold.
    pub radial_index: f64,
    /// Pareto MLE above the upper threshold.
    pub radial_index_upper: f64,
    pub kappa: f64,
}

impl ProductStructure {
    pub fn radial_error(&self) -> f64 {
        (self.radial_index - self.kappa).abs()
    }
}

/// Compare angular exceedance laws at `u1 < u2` and fit the radial index.
pub fn check_product_structure(samples: &SampleBatch, kappa: f64, u1: f64, u2: f64, grid: &SphereGrid) -> Result<ProductStructure> {
    if !(u1 > 0.0 && u1 < u2) {
        return Err(config(format!("need 0 < u1 < u2, got u1 = {u1}, u2 = {u2}")));
    }
    let c1 = exceedance_cells(samples, u1, grid)?;
    let c2 = exceedance_cells(samples, u2, grid)?;
    let n1: usize = c1.iter().sum();
    let n2: usize = c2.iter().sum();
    let h1 = GridMeasure(c1.iter().map(|&c| c as f64 / n1 as f64).collect());
    let h2 = GridMeasure(c2.iter().map(|&c| c as f64 / n2 as f64).collect());
    let norms = samples.norms();
    let fit = |u: f64| pareto_mle(&norms, u).map(|e| e.0).unwrap_or(f64::NAN);
    Ok(ProductStructure {
        thresholds: (u1, u2),
        exceedances: (n1, n2),
        angular_distance: h1.tv_distance(&h2),
        radial_index: fit(u1),
        radial_index_upper: fit(u2),
        kappa,
    })
}

/// Test functions with a certified growth bound near 0 and infinity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TestFunction {
    /// Indicator of `r_min < |x| <= r_max` and `<x/|x|, direction> >= cos_min`.
    AnnulusCone {
        r_min: f64,
        #[serde(default)]
        r_max: Option<f64>,
        direction: Vec<f64>,
        cos_min: f64,
    },
    /// Indicator of `<x, direction> > level`.
    HalfSpace { direction: Vec<f64>, level: f64 },
    /// `exp(1 - 1/(1 - |x-c|^2/rho^2))` on the ball, zero outside.
    Bump { center: Vec<f64>, radius: f64 },
    /// `|x|^k / (1 + |log |x||)^2`.
    LogDamped,
    Zero,
}

impl TestFunction {
    /// The indicator of `|x| > 1`.
    pub fn norm_exceedance(dim: usize) -> Self {
        let mut e = vec![0.0; dim];
        e[0] = 1.0;
        TestFunction::AnnulusCone {
            r_min: 1.0,
            r_max: None,
            direction: e,
            cos_min: -1.0,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let unit = |v: &[f64]| v.len() == dim && (norm(v) - 1.0).abs() < 1e-9;
        match self {
            TestFunction::AnnulusCone { r_min, r_max, direction, cos_min } => {
                if !(*r_min > 0.0) || r_max.is_some_and(|r| !(r > *r_min)) {
                    return Err(config("annulus needs 0 < r_min < r_max"));
                }
                if !unit(direction) || !(-1.0..=1.0).contains(cos_min) {
                    return Err(config("cone needs a unit direction and cos_min in [-1, 1]"));
                }
            }
            TestFunction::HalfSpace { direction, level } => {
                if !unit(direction) || !(*level > 0.0) {
                    return Err(config("half-space needs a unit direction and a positive level"));
                }
            }
            TestFunction::Bump { center, radius } => {
                if center.len() != dim || !(*radius > 0.0) || norm(center) <= *radius {
                    return Err(config("bump must be supported away from the origin"));
                }
            }
            TestFunction::LogDamped | TestFunction::Zero => {}
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64], kappa: f64) -> f64 {
        match self {
            TestFunction::AnnulusCone { r_min, r_max, direction, cos_min } => {
                let r = norm(x);
                let inside = r > *r_min && r_max.is_none_or(|m| r <= m) && dot(x, direction) >= cos_min * r;
                f64::from(u8::from(inside))
            }
            TestFunction::HalfSpace { direction, level } => f64::from(u8::from(dot(x, direction) > *level)),
            TestFunction::Bump { center, radius } => {
                let d2: f64 = x.iter().zip(center).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / radius.powi(2);
                if d2 < 1.0 {
                    (1.0 - 1.0 / (1.0 - d2)).exp()
                } else {
                    0.0
                }
            }
            TestFunction::LogDamped => {
                let r = norm(x);
                if r == 0.0 {
                    0.0
                } else {
                    r.powf(kappa) / (1.0 + r.ln().abs()).powi(2)
                }
            }
            TestFunction::Zero => 0.0,
        }
    }

    /// `sum_w sigma_w int_0^inf f(s w) s^{-k-1} ds`.
    pub fn polar_integral(&self, sigma: &SpectralMeasure) -> Result<f64> {
        let k = sigma.kappa;
        let grid = &sigma.grid;
        let atoms = || (0..grid.len()).filter(|&i| sigma.mass.0[i] > 0.0).map(|i| (grid.point(i), sigma.mass.0[i]));
        Ok(match self {
            TestFunction::AnnulusCone { r_min, r_max, direction, cos_min } => {
                let radial = (r_min.powf(-k) - r_max.map_or(0.0, |m| m.powf(-k))) / k;
                atoms().filter(|(w, _)| dot(w, direction) >= *cos_min).map(|(_, m)| m).sum::<f64>() * radial
            }
            TestFunction::HalfSpace { direction, level } => atoms()
                .map(|(w, m)| {
                    let c = dot(w, direction);
                    if c > 0.0 {
                        m * (level / c).powf(-k) / k
                    } else {
                        0.0
                    }
                })
                .sum(),
            TestFunction::Bump { center, radius } => {
                let lo = (norm(center) - radius).max(1e-12);
                let hi = norm(center) + radius;
                let mut total = 0.0;
                for (w, m) in atoms() {
                    let r = integrate(
                        |s: f64| self.eval(&w.iter().map(|x| s * x).collect::<Vec<_>>(), k) * s.powf(-k - 1.0),
                        lo,
                        hi,
                        &QuadSettings::default(),
                    )?;
                    total += m * r.value;
                }
                total
            }
            TestFunction::LogDamped => 2.0 * sigma.total_mass,
            TestFunction::Zero => 0.0,
        })
    }
}

/// Mean of `t^{-k} f(tR)` over the samples.
fn scaled_mean(samples: &SampleBatch, f: &TestFunction, kappa: f64, t: f64) -> (f64, f64) {
    let vals: Vec<f64> = samples
        .iter()
        .map(|x| f.eval(&x.iter().map(|v| t * v).collect::<Vec<_>>(), kappa))
        .collect();
    let (m, se) = mean_se(&vals);
    let s = t.powf(-kappa);
    (s * m, s * se)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailFunctional {
    pub t: Vec<f64>,
    pub values: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub limit: f64,
    /// `"power_fit"` or `"plateau"`.
    pub method: String,
}

/// `t^{-k} E f(tR)` along `t_grid` and its extrapolation to `t -> 0` from
/// the three smallest `t` via `value(t) = L + c t^g`.
pub fn tail_functional(samples: &SampleBatch, f: &TestFunction, kappa: f64, t_grid: &[f64]) -> Result<TailFunctional> {
    f.validate(samples.dim())?;
    if t_grid.len() < 3 || t_grid.iter().any(|t| !(*t > 0.0)) {
        return Err(config("t_grid needs at least three positive values"));
    }
    let mut t = t_grid.to_vec();
    t.sort_by(f64::total_cmp);
    let (values, std_errors): (Vec<f64>, Vec<f64>) = t.par_iter().map(|&ti| scaled_mean(samples, f, kappa, ti)).unzip();
    let (v0, v1, v2) = (values[0], values[1], values[2]);
    let plateau = (v0 + v1 + v2) / 3.0;
    let spread = [v0, v1, v2].iter().fold(0.0f64, |m, v| m.max((v - plateau).abs()));
    let geometric = ((t[1] / t[0]) - (t[2] / t[1])).abs() < 1e-9 * (t[1] / t[0]);
    let denom = v2 - 2.0 * v1 + v0;
    let fit = if geometric && denom.abs() > 1e-300 && (v1 - v0) * (v2 - v1) > 0.0 {
        // geometric t makes value(t_i) - L geometric in i
        let l = v0 - (v1 - v0).powi(2) / denom;
        (l.is_finite() && (l - v0).abs() <= 2.0 * spread).then_some(l)
    } else {
        None
    };
    let (limit, method) = match fit {
        Some(l) => (l, "power_fit"),
        None => (plateau, "plateau"),
    };
    Ok(TailFunctional {
        t,
        values,
        std_errors,
        limit,
        method: method.to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaStationarity {
    /// `int f dLambda` estimated at scale `t`.
    pub direct: f64,
    /// `int E f(Mx) dLambda` at the same scale.
    pub pushed: f64,
    pub relative_difference: f64,
}

/// Compare `t^{-k} E f(tR)` with `t^{-k} E f(t M R)`, `M` independent of `R`.
pub fn check_lambda_stationarity(
    samples: &SampleBatch,
    f: &TestFunction,
    env: &Environment,
    kappa: f64,
    t: f64,
    seed: u64,
) -> Result<LambdaStationarity> {
    env.validate()?;
    f.validate(samples.dim())?;
    if matches!(f, TestFunction::LogDamped) {
        return Err(config("stationarity check needs f vanishing near the origin"));
    }
    let d = env.dim;
    let n = samples.len();
    let pushed: Vec<f64> = chunks(n, 4096)
        .into_par_iter()
        .enumerate()
        .flat_map_iter(|(ci, (start, len))| {
            let mut rng = substream(seed, ci as u64);
            let mut m = crate::linalg::Mat::zeros(d);
            let mut y = vec![0.0; d];
            (start..start + len)
                .map(|i| {
                    env.draw_matrix_into(&mut rng, &mut m);
                    m.mul_vec_into(samples.get(i), &mut y);
                    y.iter_mut().for_each(|v| *v *= t);
                    f.eval(&y, kappa)
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let s = t.powf(-kappa);
    let pushed = s * pushed.iter().sum::<f64>() / n as f64;
    let (direct, _) = scaled_mean(samples, f, kappa, t);
    Ok(LambdaStationarity {
        direct,
        pushed,
        relative_difference: (pushed - direct).abs() / direct.abs(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingCheck {
    pub lower: f64,
    pub upper_rescaled: f64,
    pub std_error: f64,
}

/// `Lambda(|x| > a u)` against `a^{-k} Lambda(|x| > u)`, both as
/// `u^k P(|R| > u)`-type estimates.
pub fn scaling_law_check(samples: &SampleBatch, kappa: f64, u: f64, a: f64) -> Result<ScalingCheck> {
    if !(a > 1.0 && u > 0.0) {
        return Err(config("scaling check needs a > 1 and u > 0"));
    }
    let norms = samples.norms();
    let n = norms.len() as f64;
    let p1 = norms.iter().filter(|x| **x > u).count() as f64 / n;
    let p2 = norms.iter().filter(|x| **x > a * u).count() as f64 / n;
    let lower = a.powf(-kappa) * p1;
    // p2 counts a subset of p1; the difference is binomial in the annulus.
    let se = ((p1 - p2).abs().max(p2) / n).sqrt() + (p2 / n).sqrt();
    Ok(ScalingCheck {
        lower,
        upper_rescaled: p2,
        std_error: se,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;
    use rand::Rng;

    fn pareto(n: usize, kappa: f64, seed: u64) -> SampleBatch {
        let mut rng = substream(seed, 0);
        SampleBatch::from_scalars(
            (0..n)
                .map(|_| {
                    let u: f64 = 1.0 - rng.random::<f64>();
                    let s = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    s * u.powf(-1.0 / kappa)
                })
                .collect(),
        )
    }

    #[test]
    fn hill_on_exact_pareto() {
        let e = hill_tail_index(&pareto(200_000, 1.0, 1), 0.01).unwrap();
        assert!(e.ci.0 < 1.0 && 1.0 < e.ci.1, "{e:?}");
        assert!(e.heavy_tail);
    }

    #[test]
    fn hill_flags_bounded_support() {
        let mut rng = substream(2, 0);
        let s = SampleBatch::from_scalars((0..100_000).map(|_| rng.random::<f64>()).collect());
        let e = hill_tail_index(&s, 0.05).unwrap();
        assert!(!e.heavy_tail, "{e:?}");
    }

    #[test]
    fn hill_rejects_discrete_law() {
        let s = SampleBatch::from_scalars((0..20_000).map(|i| (i % 3) as f64).collect());
        assert!(hill_tail_index(&s, 0.01).is_err());
        assert!(hill_tail_index(&pareto(100, 1.0, 0), 0.01).is_err());
        assert!(hill_tail_index(&pareto(20_000, 1.0, 0), 0.2).is_err());
    }

    #[test]
    fn direct_k_scaling_and_symmetry() {
        let s = pareto(400_000, 1.0, 3);
        let t = norm_thresholds(&s, &DEFAULT_FRACTIONS);
        let a = direct_k(&s, &[1.0], 1.0, &t).unwrap();
        let b = direct_k(&s, &[-1.0], 1.0, &t).unwrap();
        assert!((a.plateau - 0.5).abs() < 3.0 * a.plateau_se + 0.02);
        assert!((a.plateau - b.plateau).abs() < 3.0 * (a.plateau_se + b.plateau_se));
        let c = direct_k(&s.scaled(2.0), &[1.0], 1.0, &t).unwrap();
        assert!((c.plateau / a.plateau - 2.0).abs() < 0.1);
    }

    #[test]
    fn direct_k_reports_missing_plateau() {
        // light tail: u P(X > u) falls fast
        let mut rng = substream(4, 0);
        let s = SampleBatch::from_scalars((0..100_000).map(|_| -rng.random::<f64>().ln()).collect());
        let err = direct_k(&s, &[1.0], 1.0, &[2.0, 6.0, 9.0]).unwrap_err();
        assert!(matches!(err, Error::NoPlateau { .. }));
    }

    #[test]
    fn sigma_symmetric_scalar() {
        let s = pareto(200_000, 1.3, 5);
        let grid = build_grid(1, 2).unwrap();
        let u = norm_thresholds(&s, &[0.01])[0];
        let sig = estimate_sigma(&s, 1.3, false, u, &grid).unwrap();
        let se = sig.std_errors();
        assert!((sig.mass.0[0] - sig.mass.0[1]).abs() < 3.0 * (se[0] + se[1]));
        assert!(sig.total_mass > 0.0);
        let f = TestFunction::norm_exceedance(1);
        assert!((f.polar_integral(&sig).unwrap() - sig.total_mass / 1.3).abs() < 1e-12);
    }

    #[test]
    fn sigma_regime_guard() {
        assert!(check_sigma_regime(1.0, false).is_err());
        assert!(check_sigma_regime(1.0, true).is_ok());
        assert!(check_sigma_regime(2.01, true).is_err());
        assert!(check_sigma_regime(1.5, false).is_ok());
    }

    #[test]
    fn too_few_exceedances() {
        let s = pareto(20_000, 1.5, 6);
        let grid = build_grid(1, 2).unwrap();
        let err = estimate_sigma(&s, 1.5, true, 1e6, &grid).unwrap_err();
        assert!(matches!(err, Error::TooFewExceedances { count: 0, .. }));
    }

    #[test]
    fn tail_functional_limits() {
        let s = pareto(400_000, 1.5, 7);
        let ts = [0.01, 0.02, 0.04, 0.08];
        let tf = tail_functional(&s, &TestFunction::norm_exceedance(1), 1.5, &ts).unwrap();
        // P(|R| > 1/t) = t^{1.5} exactly for t <= 1
        assert!((tf.limit - 1.0).abs() < 0.05, "{tf:?}");
        let z = tail_functional(&s, &TestFunction::Zero, 1.5, &ts).unwrap();
        assert_eq!(z.limit, 0.0);
        let bad = TestFunction::Bump { center: vec![0.5], radius: 1.0 };
        assert!(tail_functional(&s, &bad, 1.5, &ts).is_err());
    }

    #[test]
    fn scaling_law_holds_for_pareto() {
        let s = pareto(500_000, 1.0, 8);
        let u = norm_thresholds(&s, &[0.01])[0];
        for a in [1.5, 2.0, 3.0] {
            let c = scaling_law_check(&s, 1.0, u, a).unwrap();
            assert!((c.lower - c.upper_rescaled).abs() < 3.0 * c.std_error, "{c:?}");
        }
    }
}
