//! Run configuration, read from one TOML file.

use std::fmt;
use std::path::PathBuf;

use kestenlab::env::Environment;
use kestenlab::grid::{build_grid, SphereGrid};
use kestenlab::recursion::Truncation;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, CliResult};

/// Pipeline stages in dependency order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Simulate,
    Lyapunov,
    Kappa,
    Tail,
    Sigma,
    Limit,
    Nondeg,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Simulate,
        Stage::Lyapunov,
        Stage::Kappa,
        Stage::Tail,
        Stage::Sigma,
        Stage::Limit,
        Stage::Nondeg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::Lyapunov => "lyapunov",
            Stage::Kappa => "kappa",
            Stage::Tail => "tail",
            Stage::Sigma => "sigma",
            Stage::Limit => "limit",
            Stage::Nondeg => "nondeg",
        }
    }

    /// Stages whose artifacts this stage reads.
    pub fn upstream(self) -> &'static [Stage] {
        match self {
            Stage::Simulate | Stage::Lyapunov | Stage::Kappa => &[],
            Stage::Tail | Stage::Sigma => &[Stage::Kappa],
            Stage::Limit => &[Stage::Kappa, Stage::Sigma],
            Stage::Nondeg => &[Stage::Limit],
        }
    }

    /// File the stage writes its result to.
    pub fn artifact(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate.json",
            Stage::Lyapunov => "lyapunov.json",
            Stage::Kappa => "spectral_solution.json",
            Stage::Tail => "tail.json",
            Stage::Sigma => "sigma.json",
            Stage::Limit => "stable_law.json",
            Stage::Nondeg => "nondeg.json",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; generated and recorded when absent.
    #[serde(default)]
    pub seed: Option<u64>,
    pub env: Environment,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub mc: McConfig,
    #[serde(default)]
    pub checks: CheckConfig,
    #[serde(default)]
    pub pipeline: Vec<Stage>,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Number of sphere points; defaults to 2, 32 and 64 for d = 1, 2, 3+.
    pub resolution: Option<usize>,
    /// Interpolation kernel bandwidth override (d >= 3).
    pub bandwidth: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McConfig {
    pub stationary: usize,
    pub truncation: Truncation,
    pub series_cap: usize,
    pub kernel_mc: usize,
    pub residual_mc: usize,
    pub kappa_bracket: [f64; 2],
    pub lyapunov_steps: usize,
    pub lyapunov_replicas: usize,
    pub top_fraction: f64,
    pub product_fractions: [f64; 2],
    pub k_fractions: Vec<f64>,
    pub w_draws: usize,
    pub positivity_draws: usize,
    pub s_max: f64,
    pub birkhoff_n: usize,
    pub birkhoff_replicas: usize,
    pub cf_s: Vec<f64>,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            stationary: 1_000_000,
            truncation: Truncation::Adaptive(1e-12),
            series_cap: kestenlab::recursion::DEFAULT_SERIES_CAP,
            kernel_mc: 10_000,
            residual_mc: 10_000,
            kappa_bracket: [0.2, 3.0],
            lyapunov_steps: 10_000,
            lyapunov_replicas: 100,
            top_fraction: 0.01,
            product_fractions: [0.02, 0.005],
            k_fractions: vec![0.02, 0.01, 0.005],
            w_draws: 20_000,
            positivity_draws: 100_000,
            s_max: kestenlab::stable::DEFAULT_S_MAX,
            birkhoff_n: 1 << 14,
            birkhoff_replicas: 20_000,
            cf_s: (1..=20).map(|i| 0.1 * f64::from(i)).collect(),
        }
    }
}

/// Tolerances of the invariant checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckConfig {
    pub eigen_residual: f64,
    pub hill: f64,
    pub angular_tv: f64,
    pub radial_index: f64,
    pub k_agreement: f64,
    pub sigma_invariance: f64,
    pub self_similarity_ks: f64,
    pub cf_deviation: f64,
    pub positivity_z: f64,
    pub nondeg_tol: f64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            eigen_residual: 0.05,
            hill: 0.1,
            angular_tv: 0.08,
            radial_index: 0.1,
            k_agreement: 0.30,
            sigma_invariance: 0.10,
            self_similarity_ks: 0.05,
            cf_deviation: 0.15,
            positivity_z: 3.0,
            nondeg_tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Write CSV data next to the JSON artifacts.
    pub csv: bool,
    /// Also write the full stationary sample (large).
    pub samples: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("out"),
            csv: true,
            samples: false,
        }
    }
}

impl RunConfig {
    /// Parse and validate; errors carry the offending field path.
    pub fn from_toml(text: &str) -> CliResult<RunConfig> {
        let de = toml::Deserializer::new(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            config_err(path, e.into_inner().message().trim())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.env.validate().map_err(|e| config_err("env", e))?;
        self.build_grid()?;
        let mc = &self.mc;
        let positive = [
            ("mc.stationary", mc.stationary),
            ("mc.series_cap", mc.series_cap),
            ("mc.kernel_mc", mc.kernel_mc),
            ("mc.residual_mc", mc.residual_mc),
            ("mc.lyapunov_steps", mc.lyapunov_steps),
            ("mc.lyapunov_replicas", mc.lyapunov_replicas),
            ("mc.w_draws", mc.w_draws),
            ("mc.positivity_draws", mc.positivity_draws),
            ("mc.birkhoff_replicas", mc.birkhoff_replicas),
        ];
        for (path, v) in positive {
            if v == 0 {
                return Err(config_err(path, "must be positive"));
            }
        }
        if mc.birkhoff_n < 2 || !mc.birkhoff_n.is_multiple_of(2) {
            return Err(config_err("mc.birkhoff_n", "must be an even number >= 2"));
        }
        match mc.truncation {
            Truncation::Fixed(0) => return Err(config_err("mc.truncation.fixed", "must be positive")),
            Truncation::Adaptive(t) if !(t > 0.0 && t < 1.0) => {
                return Err(config_err("mc.truncation.adaptive", "tolerance must lie in (0, 1)"))
            }
            _ => {}
        }
        let [lo, hi] = mc.kappa_bracket;
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return Err(config_err("mc.kappa_bracket", "need 0 < lo < hi"));
        }
        let fraction = |path: &str, f: f64| -> CliResult<()> {
            if f > 0.0 && f <= 0.05 {
                Ok(())
            } else {
                Err(config_err(path, format!("{f} is not in (0, 0.05]")))
            }
        };
        fraction("mc.top_fraction", mc.top_fraction)?;
        fraction("mc.product_fractions", mc.product_fractions[0])?;
        fraction("mc.product_fractions", mc.product_fractions[1])?;
        if mc.product_fractions[0] <= mc.product_fractions[1] {
            return Err(config_err("mc.product_fractions", "the first (lower threshold) fraction must be the larger"));
        }
        if mc.k_fractions.len() < 3 {
            return Err(config_err("mc.k_fractions", "need at least three fractions"));
        }
        for f in &mc.k_fractions {
            fraction("mc.k_fractions", *f)?;
        }
        if !(mc.s_max > 0.0 && mc.s_max.is_finite()) {
            return Err(config_err("mc.s_max", "must be positive"));
        }
        if mc.cf_s.is_empty() || mc.cf_s.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(config_err("mc.cf_s", "need a non-empty list of s >= 0"));
        }
        for w in self.pipeline.windows(2) {
            if w[0] >= w[1] {
                return Err(config_err(
                    "pipeline",
                    format!("stage `{}` listed after `{}`; stages must appear once, in dependency order", w[1], w[0]),
                ));
            }
        }
        Ok(())
    }

    pub fn grid_resolution(&self) -> usize {
        self.grid.resolution.unwrap_or(match self.env.dim {
            1 => 2,
            2 => 32,
            _ => 64,
        })
    }

    pub fn build_grid(&self) -> CliResult<SphereGrid> {
        let mut grid = build_grid(self.env.dim, self.grid_resolution()).map_err(|e| config_err("grid.resolution", e))?;
        if let Some(h) = self.grid.bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                return Err(config_err("grid.bandwidth", "must be positive"));
            }
            grid.kernel_bandwidth = h;
        }
        Ok(grid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCALAR: &str = r#"
        seed = 3
        pipeline = ["lyapunov", "kappa"]
        [env]
        dim = 1
        q_symmetric = true
        [env.matrix]
        family = "scalar_two_point"
        high = 2.0
        low = 0.5
        p_high = 0.3333333333333333
        [env.vector]
        family = "fixed"
        value = [1.0]
    "#;

    #[test]
    fn parses_with_defaults() {
        let cfg = RunConfig::from_toml(SCALAR).unwrap();
        assert_eq!(cfg.pipeline, vec![Stage::Lyapunov, Stage::Kappa]);
        assert_eq!(cfg.grid_resolution(), 2);
        assert_eq!(cfg.mc.stationary, 1_000_000);
    }

    #[test]
    fn negative_resolution_names_the_field() {
        let text = format!("{SCALAR}\n[grid]\nresolution = -4\n");
        match RunConfig::from_toml(&text) {
            Err(crate::CliError::Config { path, .. }) => assert_eq!(path, "grid.resolution"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn stage_order_is_enforced() {
        let text = SCALAR.replace(r#"["lyapunov", "kappa"]"#, r#"["tail", "kappa"]"#);
        assert!(matches!(RunConfig::from_toml(&text), Err(crate::CliError::Config { path, .. }) if path == "pipeline"));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = format!("{SCALAR}\n[mc]\nstationry = 5\n");
        assert!(RunConfig::from_toml(&text).is_err());
    }
}
