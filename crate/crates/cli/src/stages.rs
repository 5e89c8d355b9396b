//! Pipeline stages and the runner that owns an output directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use kestenlab::assumptions::{check_assumptions, AssumptionReport};
use kestenlab::batch::{BatchMeta, SampleBatch};
use kestenlab::grid::SphereGrid;
use kestenlab::recursion::{birkhoff_sums, lyapunov, sample_stationary, LyapunovEstimate, PathConfig, SeriesConfig};
use kestenlab::rng::{derive_seed, label, substream};
use kestenlab::spectral::{eigen_residuals, goldie_constant, product_moment_rate, solve_kappa, EigenResiduals, GoldieEstimate, SpectralSolution};
use kestenlab::stable::{
    empirical_cf, fit_stable_law, nondegeneracy, sample_w_series, self_similarity, stable_fit_check, transposed_positivity_check,
    EcfGrid, Nondegeneracy, PositivityCheck, RadialSettings, StableConfig, StableFit, StableLaw,
};
use kestenlab::stats::quantile_sorted;
use kestenlab::tails::{
    check_product_structure, check_sigma_invariance, direct_k, estimate_sigma, hill_tail_index, norm_thresholds, tail_functional, DirectK,
    HillEstimate, ProductStructure, SpectralMeasure, TailFunctional, TestFunction,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::canonical::{hash, to_canonical, value_to_canonical};
use crate::config::{RunConfig, Stage};
use crate::error::{io_err, CliError, CliResult};

/// Monte Carlo draws for the moment-assumption checks.
const ASSUMPTION_MC: usize = 10_000;

/// One invariant check: `value` compared against `threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub threshold: f64,
}

impl Check {
    fn at_most(name: &str, value: f64, threshold: f64) -> Check {
        Check {
            name: name.to_string(),
            passed: value <= threshold,
            value,
            threshold,
        }
    }

    fn at_least(name: &str, value: f64, threshold: f64) -> Check {
        Check {
            name: name.to_string(),
            passed: value >= threshold,
            value,
            threshold,
        }
    }
}

/// What a stage writes: its result plus the provenance needed downstream.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub stage: Stage,
    pub env_hash: String,
    pub seed: u64,
    pub payload: T,
    pub checks: Vec<Check>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulatePayload {
    pub count: usize,
    pub meta: BatchMeta,
    /// `(p, quantile of |R|)` pairs.
    pub norm_quantiles: Vec<(f64, f64)>,
    pub assumptions: AssumptionReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LyapunovPayload {
    pub estimate: LyapunovEstimate,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KappaPayload {
    pub solution: SpectralSolution,
    pub residuals: EigenResiduals,
    /// Monte Carlo `E ||M||^kappa` at the solved exponent.
    pub norm_moment: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TailPayload {
    pub kappa: f64,
    pub samples: usize,
    pub hill: HillEstimate,
    pub product: ProductStructure,
    pub direction: Vec<f64>,
    pub direct_k: DirectK,
    pub goldie: GoldieEstimate,
    pub tail_functional: TailFunctional,
    /// Largest `|a / b - 1|` over the three K estimates.
    pub k_spread: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SigmaPayload {
    pub top_fraction: f64,
    pub sigma: SpectralMeasure,
    pub invariance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LimitPayload {
    pub law: StableLaw,
    pub positivity: Vec<PositivityCheck>,
    pub n: usize,
    pub replicas: usize,
    pub self_similarity: Vec<f64>,
    pub fit: StableFit,
    pub ecf: EcfGrid,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NondegPayload {
    pub re_c: Vec<f64>,
    pub verdict: Nondegeneracy,
}

/// Outcome of one stage in the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub ok: bool,
    pub error: Option<String>,
    pub artifact: Option<String>,
    pub checks: Vec<Check>,
}

impl StageRecord {
    pub fn passed(&self) -> bool {
        self.ok && self.checks.iter().all(|c| c.passed)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub seed: u64,
    pub env_hash: String,
    pub config: RunConfig,
    pub stages: Vec<StageRecord>,
    pub passed: bool,
    /// Wall-clock seconds per stage; the only field that varies between reruns.
    pub timing: BTreeMap<String, f64>,
}

/// Exclusive ownership of an output directory while a run is active.
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> CliResult<OutputLock> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join(".lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(OutputLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Locked(dir.to_path_buf())),
            Err(e) => Err(CliError::Io { path, source: e }),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

pub struct Runner {
    cfg: RunConfig,
    seed: u64,
    env_hash: String,
    grid: SphereGrid,
    out: PathBuf,
    stationary: Option<SampleBatch>,
    records: Vec<StageRecord>,
    timing: BTreeMap<String, f64>,
    verbose: bool,
    _lock: OutputLock,
}

fn check_between(name: &str, value: f64, target: f64, tol: f64) -> Check {
    Check::at_most(name, (value - target).abs(), tol)
}

impl Runner {
    /// Validate the config, then lock the output directory.
    pub fn new(cfg: RunConfig) -> CliResult<Runner> {
        cfg.validate()?;
        let seed = cfg.seed.unwrap_or_else(rand::random);
        let env_hash = hash(&cfg.env).map_err(|e| crate::error::config_err("env", e))?;
        let grid = cfg.build_grid()?;
        let out = cfg.output.dir.clone();
        let lock = OutputLock::acquire(&out)?;
        let mut cfg = cfg;
        cfg.seed = Some(seed);
        Ok(Runner {
            cfg,
            seed,
            env_hash,
            grid,
            out,
            stationary: None,
            records: Vec::new(),
            timing: BTreeMap::new(),
            verbose: true,
            _lock: lock,
        })
    }

    pub fn quiet(mut self) -> Self {
        self.verbose = false;
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn records(&self) -> &[StageRecord] {
        &self.records
    }

    fn say(&self, line: impl AsRef<str>) {
        if self.verbose {
            println!("{}", line.as_ref());
        }
    }

    fn stage_seed(&self, stage: Stage) -> u64 {
        derive_seed(self.seed, label(stage.name()))
    }

    fn series(&self, seed: u64) -> SeriesConfig {
        SeriesConfig {
            truncation: self.cfg.mc.truncation,
            seed,
            cap: self.cfg.mc.series_cap,
        }
    }

    fn stationary(&mut self) -> CliResult<&SampleBatch> {
        if self.stationary.is_none() {
            let cfg = self.series(derive_seed(self.seed, label("stationary")));
            self.stationary = Some(sample_stationary(&self.cfg.env, &cfg, self.cfg.mc.stationary)?);
        }
        Ok(self.stationary.as_ref().expect("just filled"))
    }

    fn write_text(&self, name: &str, text: &str) -> CliResult<()> {
        let path = self.out.join(name);
        fs::write(&path, text).map_err(io_err(path))
    }

    fn write_csv(&self, name: &str, header: &[String], rows: &[Vec<String>]) -> CliResult<()> {
        if !self.cfg.output.csv {
            return Ok(());
        }
        let path = self.out.join(name);
        let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::Io {
            path: path.clone(),
            source: e.into(),
        })?;
        let io = |e: csv::Error| CliError::Io {
            path: path.clone(),
            source: e.into(),
        };
        w.write_record(header).map_err(io)?;
        for r in rows {
            w.write_record(r).map_err(io)?;
        }
        w.flush().map_err(io_err(&path))
    }

    fn load<T: DeserializeOwned>(&self, stage: Stage) -> CliResult<Artifact<T>> {
        let path = self.out.join(stage.artifact());
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(CliError::MissingArtifact(path)),
            Err(e) => return Err(CliError::Io { path, source: e }),
        };
        let art: Artifact<T> = serde_json::from_str(&text).map_err(|e| CliError::Artifact {
            path: path.clone(),
            message: e.to_string(),
        })?;
        if art.env_hash != self.env_hash {
            return Err(CliError::EnvMismatch {
                artifact: path,
                expected: self.env_hash.clone(),
                found: art.env_hash,
            });
        }
        Ok(art)
    }

    fn store<T: Serialize>(&self, stage: Stage, seed: u64, payload: T, checks: &[Check]) -> CliResult<()> {
        let art = Artifact {
            stage,
            env_hash: self.env_hash.clone(),
            seed,
            payload,
            checks: checks.to_vec(),
        };
        let text = to_canonical(&art).map_err(|e| CliError::Artifact {
            path: self.out.join(stage.artifact()),
            message: e.to_string(),
        })?;
        self.write_text(stage.artifact(), &(text + "\n"))
    }

    /// Run one stage, recording success, checks or the failure.
    pub fn run_stage(&mut self, stage: Stage) -> &StageRecord {
        let t = Instant::now();
        let outcome = self.execute(stage);
        self.timing.insert(stage.name().to_string(), t.elapsed().as_secs_f64());
        let record = match outcome {
            Ok(checks) => {
                for c in &checks {
                    let mark = if c.passed { "PASS" } else { "FAIL" };
                    self.say(format!("  [{mark}] {}: {:.6} (limit {})", c.name, c.value, c.threshold));
                }
                StageRecord {
                    stage,
                    ok: true,
                    error: None,
                    artifact: Some(stage.artifact().to_string()),
                    checks,
                }
            }
            Err(e) => {
                self.say(format!("  [FAIL] {stage}: {e}"));
                StageRecord {
                    stage,
                    ok: false,
                    error: Some(e.to_string()),
                    artifact: None,
                    checks: Vec::new(),
                }
            }
        };
        self.records.push(record);
        self.records.last().expect("just pushed")
    }

    /// Run the configured pipeline, stopping at the first failed stage.
    pub fn run_pipeline(&mut self) -> CliResult<Report> {
        for stage in self.cfg.pipeline.clone() {
            if !self.run_stage(stage).ok {
                break;
            }
        }
        self.write_report()
    }

    /// Aggregate this run's records with artifacts already on disk.
    pub fn write_report(&self) -> CliResult<Report> {
        let mut stages = self.records.clone();
        for stage in Stage::ALL {
            if stages.iter().any(|r| r.stage == stage) {
                continue;
            }
            let path = self.out.join(stage.artifact());
            if !path.exists() {
                continue;
            }
            stages.push(match self.load::<Value>(stage) {
                Ok(art) => StageRecord {
                    stage,
                    ok: true,
                    error: None,
                    artifact: Some(stage.artifact().to_string()),
                    checks: art.checks,
                },
                Err(e) => StageRecord {
                    stage,
                    ok: false,
                    error: Some(e.to_string()),
                    artifact: Some(stage.artifact().to_string()),
                    checks: Vec::new(),
                },
            });
        }
        stages.sort_by_key(|r| r.stage);
        let report = Report {
            seed: self.seed,
            env_hash: self.env_hash.clone(),
            config: self.cfg.clone(),
            passed: stages.iter().all(StageRecord::passed),
            stages,
            timing: self.timing.clone(),
        };
        let text = to_canonical(&report).map_err(|e| CliError::Artifact {
            path: self.out.join("report.json"),
            message: e.to_string(),
        })?;
        self.write_text("report.json", &(text + "\n"))?;
        Ok(report)
    }

    fn execute(&mut self, stage: Stage) -> CliResult<Vec<Check>> {
        self.say(format!("{stage}"));
        match stage {
            Stage::Simulate => self.simulate(),
            Stage::Lyapunov => self.lyapunov(),
            Stage::Kappa => self.kappa(),
            Stage::Tail => self.tail(),
            Stage::Sigma => self.sigma(),
            Stage::Limit => self.limit(),
            Stage::Nondeg => self.nondeg(),
        }
    }

    fn simulate(&mut self) -> CliResult<Vec<Check>> {
        let seed = self.stage_seed(Stage::Simulate);
        let mut rng = substream(seed, 0);
        let assumptions = check_assumptions(&self.cfg.env, ASSUMPTION_MC, &mut rng)?;
        let (count, meta, mut norms) = {
            let st = self.stationary()?;
            (st.len(), st.meta.clone(), st.norms())
        };
        norms.sort_by(f64::total_cmp);
        let ps = [0.5, 0.9, 0.99, 0.999, 0.9999];
        let norm_quantiles: Vec<(f64, f64)> = ps.iter().map(|&p| (p, quantile_sorted(&norms, p))).collect();
        self.say(format!(
            "  {count} stationary draws, mean series depth {:.1}, median |R| {:.4}",
            meta.mean_depth, norm_quantiles[0].1
        ));
        let rows: Vec<Vec<String>> = norm_quantiles.iter().map(|(p, q)| vec![p.to_string(), q.to_string()]).collect();
        self.write_csv("stationary_quantiles.csv", &["p".into(), "norm_quantile".into()], &rows)?;
        if self.cfg.output.samples {
            let path = self.out.join("stationary.csv");
            let f = fs::File::create(&path).map_err(io_err(&path))?;
            self.stationary
                .as_ref()
                .expect("sampled above")
                .write_csv(std::io::BufWriter::new(f))
                .map_err(io_err(&path))?;
        }
        let payload = SimulatePayload {
            count,
            meta,
            norm_quantiles,
            assumptions,
        };
        self.store(Stage::Simulate, seed, payload, &[])?;
        Ok(Vec::new())
    }

    fn lyapunov(&mut self) -> CliResult<Vec<Check>> {
        let seed = self.stage_seed(Stage::Lyapunov);
        let mc = &self.cfg.mc;
        let estimate = lyapunov(&self.cfg.env, mc.lyapunov_steps, mc.lyapunov_replicas, seed)?;
        self.say(format!("  beta = {:.6} +- {:.6}", estimate.beta, estimate.std_error));
        let checks = vec![Check::at_most("contractive", estimate.beta, 0.0)];
        self.store(Stage::Lyapunov, seed, LyapunovPayload { estimate }, &checks)?;
        Ok(checks)
    }

    fn kappa(&mut self) -> CliResult<Vec<Check>> {
        let seed = self.stage_seed(Stage::Kappa);
        let mc = &self.cfg.mc;
        let env = &self.cfg.env;
        let [lo, hi] = mc.kappa_bracket;
        let solution = solve_kappa(env, &self.grid, (lo, hi), mc.kernel_mc, seed)?;
        let residuals = eigen_residuals(&solution, env, mc.residual_mc, derive_seed(seed, 1))?;
        let norm_moment = product_moment_rate(env, solution.kappa, 1, 100_000, derive_seed(seed, 2))?;
        self.say(format!(
            "  kappa = {:.6} (rho {:.6}, alpha {:.6}), E||M||^kappa = {:.6}",
            solution.kappa, solution.rho, solution.alpha, norm_moment
        ));
        let tol = self.cfg.checks.eigen_residual;
        let checks = vec![
            Check::at_most("right_eigen_residual", residuals.right, tol),
            Check::at_most("left_eigen_residual", residuals.left, tol),
        ];
        let rows: Vec<Vec<String>> = (0..solution.grid.len())
            .map(|i| {
                let mut row: Vec<String> = solution.grid.point(i).iter().map(f64::to_string).collect();
                row.extend([solution.r.0[i], solution.eta.0[i], solution.pi.0[i]].iter().map(f64::to_string));
                row
            })
            .collect();
        let mut header: Vec<String> = (0..env.dim).map(|j| format!("x{j}")).collect();
        header.extend(["r", "eta", "pi"].map(String::from));
        self.write_csv("eigen.csv", &header, &rows)?;
        let payload = KappaPayload {
            solution,
            residuals,
            norm_moment,
        };
        self.store(Stage::Kappa, seed, payload, &checks)?;
        Ok(checks)
    }

    fn tail(&mut self) -> CliResult<Vec<Check>> {
        let seed = self.stage_seed(Stage::Tail);
        let sol = self.load::<KappaPayload>(Stage::Kappa)?.payload.solution;
        let k = sol.kappa;
        let mc = self.cfg.mc.clone();
        let env = self.cfg.env.clone();
        let st = self.stationary()?.clone();
        let hill = hill_tail_index(&st, mc.top_fraction)?;
        let th = norm_thresholds(&st, &mc.product_fractions);
        let product = check_product_structure(&st, k, th[0], th[1], &sol.grid)?;
        let mut direction = vec![0.0; env.dim];
        direction[0] = 1.0;
        let thresholds = norm_thresholds(&st, &mc.k_fractions);
        let dk = direct_k(&st, &direction, k, &thresholds)?;
        let goldie = goldie_constant(&sol, &env, &st, std::slice::from_ref(&direction), seed)?;
        let half_space = TestFunction::HalfSpace {
            direction: direction.clone(),
            level: 1.0,
        };
        let t: Vec<f64> = thresholds.iter().map(|u| 1.0 / u).collect();
        let tf = tail_functional(&st, &half_space, k, &t)?;
        let ks = [dk.plateau, goldie.values[0], tf.limit];
        let mut k_spread = 0.0f64;
        for a in ks {
            for b in ks {
                k_spread = k_spread.max((a / b - 1.0).abs());
            }
        }
        self.say(format!(
            "  Hill index {:.4}, K(e1): direct {:.4}, Goldie {:.4}, tail functional {:.4}",
            hill.index, dk.plateau, goldie.values[0], tf.limit
        ));
        let c = &self.cfg.checks;
        let checks = vec![
            check_between("hill_index", hill.index, k, c.hill),
            Check::at_most("angular_tv", product.angular_distance, c.angular_tv),
            check_between("radial_index", product.radial_index, k, c.radial_index),
            Check::at_most("k_agreement", k_spread, c.k_agreement),
        ];
        let rows: Vec<Vec<String>> = (0..dk.thresholds.len())
            .map(|i| vec![dk.thresholds[i].to_string(), dk.values[i].to_string(), dk.std_errors[i].to_string()])
            .collect();
        self.write_csv("tail_thresholds.csv", &["u".into(), "scaled_frequency".into(), "std_error".into()], &rows)?;
        let payload = TailPayload {
            kappa: k,
            samples: st.len(),
            hill,
            product,
            direction,
            direct_k: dk,
            goldie,
            tail_functional: tf,
            k_spread,
        };
        self.store(Stage::Tail, seed, payload, &checks)?;
        Ok(checks)
    }

    fn sigma(&mut self) -> CliResult<Vec<Check>> {
        let seed = self.stage_seed(Stage::Sigma);
        let sol = self.load::<KappaPayload>(Stage::Kappa)?.payload.solution;
        let top = self.cfg.mc.top_fraction;
        let env = self.cfg.env.clone();
        let st = self.stationary()?;
        let u = norm_thresholds(st, &[top])[0];
        let sigma = estimate_sigma(st, sol.kappa, env.q_symmetric, u, &sol.grid)?;
        let invariance = check_sigma_invariance(&sigma, &env, sol.kappa, self.cfg.mc.kernel_mc, seed)?;
        self.say(format!(
            "  sigma total mass {:.5} from {} exceedances, invariance residual {:.5}",
            sigma.total_mass, sigma.exceedances, invariance
        ));
        let checks = vec![Check::at_most("sigma_invariance", invariance, self.cfg.checks.sigma_invariance)];
        let se = sigma.std_errors();
        let rows: Vec<Vec<String>> = (0..sigma.grid.len())
            .map(|i| {
                let mut row: Vec<String> = sigma.grid.point(i).iter().map(f64::to_string).collect();
                row.extend([sigma.mass.0[i].to_string(), sigma.counts[i].to_string(), se[i].to_string()]);
                row
            })
            .collect();
        let mut header: Vec<String> = (0..env.dim).map(|j| format!("x{j}")).collect();
        header.extend(["mass", "count", "std_error"].map(String::from));
        self.write_csv("sigma.csv", &header, &rows)?;
        let payload = SigmaPayload {
            top_fraction: top,
            sigma,
            invariance,
        };
        self.store(Stage::Sigma, seed, payload, &checks)?;
        Ok(checks)
    }

    fn limit(&mut self) -> CliResult<Vec<Check>> {
        let seed = self.stage_seed(Stage::Limit);
        let sol = self.load::<KappaPayload>(Stage::Kappa)?.payload.solution;
        let sigma = self.load::<SigmaPayload>(Stage::Sigma)?.payload.sigma;
        let mc = self.cfg.mc.clone();
        let env = self.cfg.env.clone();
        let directions = sol.grid.points.clone();
        let w_series = self.series(derive_seed(seed, 1));
        let positivity_series = self.series(derive_seed(seed, 2));
        let st = self.stationary()?;
        let cfg = StableConfig {
            w_draws: mc.w_draws,
            truncation: w_series,
            radial: RadialSettings {
                s_max: mc.s_max,
                ..RadialSettings::default()
            },
        };
        let law = fit_stable_law(&env, sol.kappa, &sigma, st, &directions, &cfg)?;
        let w = sample_w_series(&env, &positivity_series, mc.positivity_draws)?;
        let positivity = directions
            .iter()
            .map(|v| transposed_positivity_check(law.kappa, &sigma, &w, v))
            .collect::<kestenlab::Result<Vec<_>>>()?;
        let n = mc.birkhoff_n;
        let start = vec![0.0; env.dim];
        let half = birkhoff_sums(&env, &PathConfig::new(n / 2, start.clone(), mc.birkhoff_replicas, derive_seed(seed, 3)))?;
        let full = birkhoff_sums(&env, &PathConfig::new(n, start, mc.birkhoff_replicas, derive_seed(seed, 4)))?;
        let ks = self_similarity(&half, &full, n / 2, law.kappa, &law.centering, &directions)?;
        let ecf = empirical_cf(&full, n, &law, &mc.cf_s);
        let fit = stable_fit_check(&ecf, &law)?;
        let max_re = law.c_values.iter().map(|c| c.re).fold(f64::NEG_INFINITY, f64::max);
        let min_z = positivity
            .iter()
            .flat_map(|p| [p.plus / p.plus_se, p.minus / p.minus_se])
            .fold(f64::INFINITY, f64::min);
        let max_ks = ks.iter().copied().fold(0.0, f64::max);
        self.say(format!(
            "  max Re C = {max_re:.5}, positivity z >= {min_z:.1}, self-similarity KS {max_ks:.4}, CF deviation {:.4} (budget {:.4})",
            fit.sup_deviation,
            law.max_budget()
        ));
        let c = &self.cfg.checks;
        let checks = vec![
            Check::at_most("re_c_negative", max_re, 0.0),
            Check::at_least("transposed_positivity_z", min_z, c.positivity_z),
            Check::at_most("self_similarity_ks", max_ks, c.self_similarity_ks),
            Check::at_most("cf_deviation_beyond_budget", fit.sup_excess, c.cf_deviation),
        ];
        let mut rows = Vec::new();
        for (j, row) in ecf.values.iter().enumerate() {
            for (i, z) in row.iter().enumerate() {
                let model = law.cf(ecf.s[i], j);
                rows.push(
                    [j as f64, ecf.s[i], z.re, z.im, model.re, model.im]
                        .iter()
                        .map(f64::to_string)
                        .collect(),
                );
            }
        }
        let header = ["direction", "s", "ecf_re", "ecf_im", "model_re", "model_im"].map(String::from);
        self.write_csv("ecf.csv", &header, &rows)?;
        let payload = LimitPayload {
            law,
            positivity,
            n,
            replicas: mc.birkhoff_replicas,
            self_similarity: ks,
            fit,
            ecf,
        };
        self.store(Stage::Limit, seed, payload, &checks)?;
        Ok(checks)
    }

    fn nondeg(&mut self) -> CliResult<Vec<Check>> {
        let art = self.load::<LimitPayload>(Stage::Limit)?;
        let law = art.payload.law;
        let verdict = nondegeneracy(&law, self.cfg.checks.nondeg_tol)?;
        let re_c: Vec<f64> = law.c_values.iter().map(|c| c.re).collect();
        for (v, re) in law.directions.iter().zip(&re_c) {
            self.say(format!("  Re C({}) = {re:.6}", fmt_vec(v)));
        }
        self.say(format!(
            "  C(kappa) = {:.6}, span rank {}/{}: {}",
            verdict.c_constant,
            verdict.span_rank,
            verdict.dim,
            if verdict.is_nondegenerate() { "nondegenerate" } else { "degenerate" }
        ));
        let checks = vec![Check::at_least(
            "nondegenerate",
            f64::from(u8::from(verdict.is_nondegenerate())),
            1.0,
        )];
        self.store(Stage::Nondeg, art.seed, NondegPayload { re_c, verdict }, &checks)?;
        Ok(checks)
    }
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", parts.join(", "))
}

/// Canonical text of a report without its timing, for rerun comparisons.
pub fn numeric_payload(report: &Report) -> String {
    let mut v = serde_json::to_value(report).expect("reports serialize");
    if let Value::Object(m) = &mut v {
        m.remove("timing");
    }
    value_to_canonical(&v)
}
