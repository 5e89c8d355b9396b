//! Laws of the driving pair `(M, Q)` and feasibility checks on their moments.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::linalg::{random_rotation_into, Mat};
use crate::rng::Stream;

/// Matrices from the Gaussian family are redrawn until `|det| >= DET_FLOOR`.
pub const DET_FLOOR: f64 = 1e-6;

/// Law of the scale `c` of a similarity `c * U`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScaleLaw {
    TwoPoint { high: f64, low: f64, p_high: f64 },
    LogNormal { mu: f64, sigma: f64 },
    Fixed { value: f64 },
}

impl ScaleLaw {
    fn validate(&self) -> Result<()> {
        match *self {
            ScaleLaw::TwoPoint { high, low, p_high } => {
                check_prob(p_high, "p_high")?;
                if !(high > 0.0 && low > 0.0) {
                    return Err(config("two-point scale values must be positive"));
                }
            }
            ScaleLaw::LogNormal { mu, sigma } => {
                if !mu.is_finite() || !(sigma >= 0.0) {
                    return Err(config("log-normal scale needs finite mu and sigma >= 0"));
                }
            }
            ScaleLaw::Fixed { value } => {
                if !(value > 0.0 && value.is_finite()) {
                    return Err(config("fixed scale must be positive"));
                }
            }
        }
        Ok(())
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R, u0: Option<f64>) -> f64 {
        match *self {
            ScaleLaw::TwoPoint { high, low, p_high } => {
                if u0.unwrap_or_else(|| rng.random::<f64>()) < p_high {
                    high
                } else {
                    low
                }
            }
            ScaleLaw::LogNormal { mu, sigma } => {
                let z: f64 = rng.sample(StandardNormal);
                (mu + sigma * z).exp()
            }
            ScaleLaw::Fixed { value } => value,
        }
    }
}

/// Law of the matrix `M`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum MatrixLaw {
    /// d = 1: `M = high` with probability `p_high`, else `low`.
    ScalarTwoPoint { high: f64, low: f64, p_high: f64 },
    /// `M = c * U` with `U` Haar on SO(d) and `c` drawn from `scale`.
    Similarity { scale: ScaleLaw },
    /// i.i.d. `N(0, scale^2)` entries, redrawn while `|det| < DET_FLOOR`.
    GaussianEntries { scale: f64 },
    /// `M = diag(diag_i * exp(log_sd * Z_i)) * U` with `U` Haar on SO(d).
    DiagonalRotation { diag: Vec<f64>, log_sd: f64 },
    /// Deterministic matrix, given by rows.
    Fixed { rows: Vec<Vec<f64>> },
    /// Mixture of the other families.
    Mixture { components: Vec<MixtureComponent> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureComponent {
    pub weight: f64,
    pub law: MatrixLaw,
}

/// Law of the vector `Q` before optional symmetrisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum VectorLaw {
    Fixed {
        value: Vec<f64>,
    },
    /// `mean + scale * Z` with `Z` standard normal in R^d.
    Gaussian {
        #[serde(default)]
        mean: Option<Vec<f64>>,
        scale: f64,
    },
}

fn default_true() -> bool {
    true
}

fn default_kappa0() -> f64 {
    2.0
}

/// Joint law of `(M, Q)` driving `R_n = M_n R_{n-1} + Q_n`.
///
/// With `independent_mq = false` the vector is coupled to the matrix as
/// `Q = ||M|| * Q_raw`. With `q_symmetric = true` each raw `Q` is multiplied
/// by an independent fair sign, so `(M, Q)` and `(M, -Q)` have the same law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Environment {
    pub dim: usize,
    pub matrix: MatrixLaw,
    pub vector: VectorLaw,
    #[serde(default = "default_true")]
    pub independent_mq: bool,
    #[serde(default)]
    pub q_symmetric: bool,
    #[serde(default = "default_kappa0")]
    pub kappa0_hint: f64,
    /// Draw `M^T` instead of `M`.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub transpose_matrix: bool,
}

fn transpose_in_place(m: &mut Mat) {
    let d = m.dim();
    let a = m.as_mut_slice();
    for i in 0..d {
        for j in (i + 1)..d {
            a.swap(i * d + j, j * d + i);
        }
    }
}

fn check_prob(p: f64, name: &str) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(config(format!("{name} must lie in [0, 1], got {p}")))
    }
}

impl MatrixLaw {
    fn validate(&self, dim: usize) -> Result<()> {
        match self {
            MatrixLaw::ScalarTwoPoint { high, low, p_high } => {
                if dim != 1 {
                    return Err(config("scalar_two_point requires dim = 1"));
                }
                check_prob(*p_high, "p_high")?;
                if *high == 0.0 || *low == 0.0 || !high.is_finite() || !low.is_finite() {
                    return Err(config("scalar_two_point values must be finite and non-zero"));
                }
            }
            MatrixLaw::Similarity { scale } => scale.validate()?,
            MatrixLaw::GaussianEntries { scale } => {
                if !(*scale > 0.0 && scale.is_finite()) {
                    return Err(config(format!(
                        "gaussian_entries scale must be positive, got {scale}"
                    )));
                }
            }
            MatrixLaw::DiagonalRotation { diag, log_sd } => {
                if diag.len() != dim {
                    return Err(config(format!(
                        "diagonal_rotation needs {dim} diagonal entries, got {}",
                        diag.len()
                    )));
                }
                if diag.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
                    return Err(config("diagonal_rotation entries must be positive"));
                }
                if !(*log_sd >= 0.0) {
                    return Err(config("diagonal_rotation log_sd must be >= 0"));
                }
            }
            MatrixLaw::Fixed { rows } => {
                let m = Mat::from_rows(rows)
                    .ok_or_else(|| config("fixed matrix rows must form a square matrix"))?;
                if m.dim() != dim {
                    return Err(config(format!(
                        "fixed matrix is {}x{}, environment dim is {dim}",
                        m.dim(),
                        m.dim()
                    )));
                }
                if m.as_slice().iter().any(|x| !x.is_finite()) {
                    return Err(config("fixed matrix entries must be finite"));
                }
            }
            MatrixLaw::Mixture { components } => {
                if components.is_empty() {
                    return Err(config("mixture needs at least one component"));
                }
                if components.iter().any(|c| !(c.weight > 0.0 && c.weight.is_finite())) {
                    return Err(config("mixture weights must be positive"));
                }
                for c in components {
                    c.law.validate(dim)?;
                }
            }
        }
        Ok(())
    }

    /// `u0`, when given, replaces the uniform behind the discrete choices
    /// (two-point values, mixture components).
    fn draw_into<R: Rng + ?Sized>(&self, rng: &mut R, u0: Option<f64>, m: &mut Mat) {
        let d = m.dim();
        match self {
            MatrixLaw::ScalarTwoPoint { high, low, p_high } => {
                let u = u0.unwrap_or_else(|| rng.random::<f64>());
                m.as_mut_slice()[0] = if u < *p_high { *high } else { *low };
            }
            MatrixLaw::Similarity { scale } => {
                random_rotation_into(rng, m);
                let c = scale.draw(rng, u0);
                m.scale(c);
            }
            MatrixLaw::GaussianEntries { scale } => loop {
                for x in m.as_mut_slice() {
                    let z: f64 = rng.sample(StandardNormal);
                    *x = scale * z;
                }
                if m.determinant().abs() >= DET_FLOOR {
                    break;
                }
            },
            MatrixLaw::DiagonalRotation { diag, log_sd } => {
                random_rotation_into(rng, m);
                for (i, di) in diag.iter().enumerate() {
                    let z: f64 = if *log_sd > 0.0 { rng.sample(StandardNormal) } else { 0.0 };
                    let s = di * (log_sd * z).exp();
                    for x in &mut m.as_mut_slice()[i * d..(i + 1) * d] {
                        *x *= s;
                    }
                }
            }
            MatrixLaw::Fixed { rows } => {
                for (i, row) in rows.iter().enumerate() {
                    m.as_mut_slice()[i * d..(i + 1) * d].copy_from_slice(row);
                }
            }
            MatrixLaw::Mixture { components } => {
                let total: f64 = components.iter().map(|c| c.weight).sum();
                let mut u = u0.unwrap_or_else(|| rng.random::<f64>()) * total;
                let last = &components[components.len() - 1];
                let mut chosen = (&last.law, (u - (total - last.weight)).max(0.0) / last.weight);
                for c in components {
                    if u < c.weight {
                        chosen = (&c.law, u / c.weight);
                        break;
                    }
                    u -= c.weight;
                }
                chosen.0.draw_into(rng, u0.map(|_| chosen.1.min(1.0 - f64::EPSILON)), m);
            }
        }
    }

    /// True when the law is a point mass.
    pub fn is_deterministic(&self) -> bool {
        match self {
            MatrixLaw::Fixed { .. } => true,
            MatrixLaw::ScalarTwoPoint { high, low, p_high } => {
                high == low || *p_high == 0.0 || *p_high == 1.0
            }
            MatrixLaw::Similarity { .. } => false,
            MatrixLaw::GaussianEntries { .. } | MatrixLaw::DiagonalRotation { .. } => false,
            MatrixLaw::Mixture { components } => {
                components.len() == 1 && components[0].law.is_deterministic()
            }
        }
    }

    /// True when every draw is a multiple of an orthogonal matrix.
    pub fn is_similarity(&self) -> bool {
        match self {
            MatrixLaw::ScalarTwoPoint { .. } | MatrixLaw::Similarity { .. } => true,
            MatrixLaw::Fixed { rows } => Mat::from_rows(rows)
                .map(|m| {
                    let s = m.singular_values();
                    let top = s[0];
                    s.iter().all(|x| (x - top).abs() <= 1e-12 * top.max(1.0))
                })
                .unwrap_or(false),
            MatrixLaw::DiagonalRotation { diag, log_sd } => {
                *log_sd == 0.0 && diag.iter().all(|x| (x - diag[0]).abs() <= 1e-15)
            }
            MatrixLaw::GaussianEntries { .. } => false,
            MatrixLaw::Mixture { components } => components.iter().all(|c| c.law.is_similarity()),
        }
    }
}

impl VectorLaw {
    fn validate(&self, dim: usize) -> Result<()> {
        match self {
            VectorLaw::Fixed { value } => {
                if value.len() != dim {
                    return Err(config(format!(
                        "fixed vector has length {}, environment dim is {dim}",
                        value.len()
                    )));
                }
                if value.iter().any(|x| !x.is_finite()) {
                    return Err(config("fixed vector entries must be finite"));
                }
            }
            VectorLaw::Gaussian { mean, scale } => {
                if !(*scale >= 0.0 && scale.is_finite()) {
                    return Err(config(format!("gaussian vector scale must be >= 0, got {scale}")));
                }
                if let Some(m) = mean {
                    if m.len() != dim {
                        return Err(config(format!(
                            "gaussian mean has length {}, environment dim is {dim}",
                            m.len()
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    fn draw_into<R: Rng + ?Sized>(&self, rng: &mut R, q: &mut [f64]) {
        match self {
            VectorLaw::Fixed { value } => q.copy_from_slice(value),
            VectorLaw::Gaussian { mean, scale } => {
                for (i, x) in q.iter_mut().enumerate() {
                    let z: f64 = rng.sample(StandardNormal);
                    *x = mean.as_ref().map_or(0.0, |m| m[i]) + scale * z;
                }
            }
        }
    }

    fn is_identically_zero(&self) -> bool {
        match self {
            VectorLaw::Fixed { value } => value.iter().all(|x| *x == 0.0),
            VectorLaw::Gaussian { mean, scale } => {
                *scale == 0.0 && mean.as_ref().is_none_or(|m| m.iter().all(|x| *x == 0.0))
            }
        }
    }

    fn is_deterministic(&self) -> bool {
        match self {
            VectorLaw::Fixed { .. } => true,
            VectorLaw::Gaussian { scale, .. } => *scale == 0.0,
        }
    }
}

impl Environment {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(config("dim must be >= 1"));
        }
        if !(self.kappa0_hint > 0.0 && self.kappa0_hint.is_finite()) {
            return Err(config("kappa0_hint must be positive"));
        }
        self.matrix.validate(self.dim)?;
        self.vector.validate(self.dim)
    }

    /// Scalar law `P(M = 2) = 1/3`, `P(M = 1/2) = 2/3`, `Q = +-1`; tail index 1.
    pub fn scalar_two_point() -> Self {
        Environment {
            dim: 1,
            matrix: MatrixLaw::ScalarTwoPoint {
                high: 2.0,
                low: 0.5,
                p_high: 1.0 / 3.0,
            },
            vector: VectorLaw::Fixed { value: vec![1.0] },
            independent_mq: true,
            q_symmetric: true,
            kappa0_hint: 2.0,
            transpose_matrix: false,
        }
    }

    /// `M = c * U` in dimension `dim` with the same two-point `c` as
    /// [`Environment::scalar_two_point`] and symmetric Gaussian `Q`.
    pub fn similarity_two_point(dim: usize) -> Self {
        Environment {
            dim,
            matrix: MatrixLaw::Similarity {
                scale: ScaleLaw::TwoPoint {
                    high: 2.0,
                    low: 0.5,
                    p_high: 1.0 / 3.0,
                },
            },
            vector: VectorLaw::Gaussian {
                mean: None,
                scale: 1.0,
            },
            independent_mq: true,
            q_symmetric: true,
            kappa0_hint: 2.0,
            transpose_matrix: false,
        }
    }

    /// Deterministic `M = rows` with deterministic `Q = q`.
    pub fn deterministic(rows: Vec<Vec<f64>>, q: Vec<f64>) -> Self {
        Environment {
            dim: q.len(),
            matrix: MatrixLaw::Fixed { rows },
            vector: VectorLaw::Fixed { value: q },
            independent_mq: true,
            q_symmetric: false,
            kappa0_hint: 2.0,
            transpose_matrix: false,
        }
    }

    /// Same environment with `M` replaced by `M^T`.
    pub fn transposed(&self) -> Self {
        let mut env = self.clone();
        env.transpose_matrix = !self.transpose_matrix;
        env
    }

    /// Fresh zeroed buffers of the right shape for [`Environment::draw_into`].
    pub fn buffers(&self) -> (Mat, Vec<f64>) {
        (Mat::zeros(self.dim), vec![0.0; self.dim])
    }

    /// Draw one `M` into `m`.
    #[inline]
    pub fn draw_matrix_into<R: Rng + ?Sized>(&self, rng: &mut R, m: &mut Mat) {
        self.matrix.draw_into(rng, None, m);
        if self.transpose_matrix {
            transpose_in_place(m);
        }
    }

    /// Draw `M` with its discrete choices driven by `u0 in [0, 1)`; feeding
    /// stratified `u0` values gives a stratified sample of the matrix law.
    pub fn draw_matrix_stratified_into<R: Rng + ?Sized>(&self, rng: &mut R, u0: f64, m: &mut Mat) {
        self.matrix.draw_into(rng, Some(u0), m);
        if self.transpose_matrix {
            transpose_in_place(m);
        }
    }

    /// Draw one pair `(M, Q)` into the buffers. The environment must be valid.
    #[inline]
    pub fn draw_into<R: Rng + ?Sized>(&self, rng: &mut R, m: &mut Mat, q: &mut [f64]) {
        self.draw_matrix_into(rng, m);
        self.vector.draw_into(rng, q);
        if !self.independent_mq {
            let s = m.op_norm();
            for x in q.iter_mut() {
                *x *= s;
            }
        }
        if self.q_symmetric && rng.random::<bool>() {
            for x in q.iter_mut() {
                *x = -*x;
            }
        }
    }

    /// One validated draw of `(M, Q)`.
    pub fn sample_pair(&self, rng: &mut Stream) -> Result<(Mat, Vec<f64>)> {
        self.validate()?;
        let (mut m, mut q) = self.buffers();
        self.draw_into(rng, &mut m, &mut q);
        Ok((m, q))
    }

    /// `2 * pairs` draws of `Q` where each raw draw is emitted with both signs.
    pub fn paired_q_draws(&self, rng: &mut Stream, pairs: usize) -> Result<Vec<Vec<f64>>> {
        self.validate()?;
        let (mut m, mut q) = self.buffers();
        let mut out = Vec::with_capacity(2 * pairs);
        for _ in 0..pairs {
            self.draw_matrix_into(rng, &mut m);
            self.vector.draw_into(rng, &mut q);
            if !self.independent_mq {
                let s = m.op_norm();
                q.iter_mut().for_each(|x| *x *= s);
            }
            out.push(q.clone());
            out.push(q.iter().map(|x| -x).collect());
        }
        Ok(out)
    }

    /// True when `Q` is almost surely zero.
    pub fn q_is_zero(&self) -> bool {
        self.vector.is_identically_zero()
    }

    /// True when `Q` is not almost surely constant.
    pub fn q_nondegenerate(&self) -> bool {
        !self.q_is_zero() && (self.q_symmetric || !self.vector.is_deterministic())
    }
}
