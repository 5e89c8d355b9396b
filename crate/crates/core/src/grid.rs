//! Direction grids on the unit sphere and functions/measures carried by them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::linalg::{dot, norm};

const HIGH_DIM_SEED: u64 = 0x5eed_9a1d;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphereGrid {
    pub dim: usize,
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub kernel_bandwidth: f64,
}

/// Values of a function at the grid points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GridFunction(pub Vec<f64>);

/// Point masses at the grid points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GridMeasure(pub Vec<f64>);

impl GridFunction {
    pub fn constant(n: usize, c: f64) -> Self {
        GridFunction(vec![c; n])
    }

    pub fn sup_norm(&self) -> f64 {
        self.0.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Sup-norm distance relative to the sup norm of `self`.
    pub fn relative_sup_distance(&self, other: &GridFunction) -> f64 {
        let d = self.0.iter().zip(&other.0).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        d / self.sup_norm()
    }
}

impl GridMeasure {
    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn normalized(&self) -> GridMeasure {
        let t = self.total();
        GridMeasure(self.0.iter().map(|m| m / t).collect())
    }

    pub fn integrate(&self, f: &GridFunction) -> f64 {
        dot(&self.0, &f.0)
    }

    pub fn l1_distance(&self, other: &GridMeasure) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).abs()).sum()
    }

    /// Total variation distance `sup_A |mu(A) - nu(A)|`: half the L1 distance.
    pub fn tv_distance(&self, other: &GridMeasure) -> f64 {
        0.5 * self.l1_distance(other)
    }
}

/// `d = 1`: `{-1, +1}`; `d = 2`: `resolution` uniform angles; `d = 3`:
/// Fibonacci spiral; `d >= 4`: fixed-seed normalised Gaussian points.
pub fn build_grid(d: usize, resolution: usize) -> Result<SphereGrid> {
    if d < 1 {
        return Err(config("grid dimension must be >= 1"));
    }
    if resolution < 2 {
        return Err(config(format!("grid resolution must be >= 2, got {resolution}")));
    }
    let points: Vec<Vec<f64>> = match d {
        1 => vec![vec![-1.0], vec![1.0]],
        2 => (0..resolution)
            .map(|k| {
                let t = std::f64::consts::TAU * k as f64 / resolution as f64;
                vec![t.cos(), t.sin()]
            })
            .collect(),
        3 => {
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            (0..resolution)
                .map(|i| {
                    let z = 1.0 - (2 * i + 1) as f64 / resolution as f64;
                    let r = (1.0 - z * z).sqrt();
                    let phi = golden * i as f64;
                    vec![r * phi.cos(), r * phi.sin(), z]
                })
                .collect()
        }
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(HIGH_DIM_SEED ^ d as u64);
            (0..resolution)
                .map(|_| loop {
                    let g: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
                    let n = norm(&g);
                    if n > 1e-8 {
                        break g.into_iter().map(|x| x / n).collect();
                    }
                })
                .collect()
        }
    };
    let n = points.len();
    let kernel_bandwidth = 2.0 * mean_nearest_distance(&points);
    Ok(SphereGrid {
        dim: d,
        points,
        weights: vec![1.0 / n as f64; n],
        kernel_bandwidth,
    })
}

fn mean_nearest_distance(points: &[Vec<f64>]) -> f64 {
    let n = points.len();
    let total: f64 = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    points[i]
                        .iter()
                        .zip(&points[j])
                        .map(|(a, b)| (a - b).powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    total / n as f64
}

impl SphereGrid {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i]
    }

    /// Index of the grid point closest to the direction of `u` (its Voronoi cell).
    pub fn nearest(&self, u: &[f64]) -> usize {
        match self.dim {
            1 => usize::from(u[0] >= 0.0),
            2 => {
                let n = self.len();
                let t = u[1].atan2(u[0]).rem_euclid(std::f64::consts::TAU);
                (t / std::f64::consts::TAU * n as f64).round() as usize % n
            }
            _ => {
                let mut best = 0;
                let mut best_dot = f64::NEG_INFINITY;
                for (i, p) in self.points.iter().enumerate() {
                    let c = dot(p, u);
                    if c > best_dot {
                        best_dot = c;
                        best = i;
                    }
                }
                best
            }
        }
    }

    /// Interpolation weights at the unit vector `u`: the nearest point for
    /// `d <= 2`, a normalised Gaussian kernel in chordal distance otherwise.
    pub fn interpolation_weights(&self, u: &[f64], out: &mut Vec<(usize, f64)>) {
        out.clear();
        if self.dim <= 2 {
            out.push((self.nearest(u), 1.0));
            return;
        }
        let h2 = self.kernel_bandwidth * self.kernel_bandwidth;
        let mut total = 0.0;
        for (i, p) in self.points.iter().enumerate() {
            // |u - p|^2 = 2 - 2<u, p> on the sphere
            let d2 = (2.0 - 2.0 * dot(p, u)).max(0.0);
            let w = (-0.5 * d2 / h2).exp();
            if w > 1e-12 {
                out.push((i, w));
                total += w;
            }
        }
        if total == 0.0 {
            out.push((self.nearest(u), 1.0));
            return;
        }
        for e in out.iter_mut() {
            e.1 /= total;
        }
    }

    pub fn interpolate(&self, f: &GridFunction, u: &[f64]) -> f64 {
        let mut w = Vec::new();
        self.interpolation_weights(u, &mut w);
        w.iter().map(|&(i, a)| a * f.0[i]).sum()
    }

    pub fn uniform_measure(&self) -> GridMeasure {
        GridMeasure(self.weights.clone())
    }
}
