//! End-to-end runs: simulate, identify, decode, estimate the transition
//! matrix and score the result against the generating system.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decode::{decode_all, snippet_plan, DecodeOutcome, TransitionCounts};
use crate::error::{Error, Result};
use crate::extract::{
    default_pool, extract_subsystems, match_to_truth, ExtractOptions, DEFAULT_RESTARTS,
};
use crate::io::{write_atomic, SubsystemDoc};
use crate::model::{Dataset, NoiseSpec, SarModel, SubsystemParams, TransitionMatrix};
use crate::ptm::{estimate_ptm, normalized_frobenius};
use crate::sigma::{estimate_sigma, SigmaEstimate, SigmaSearchOptions, DEFAULT_GRID, MIN_GRID};
use crate::simulate::{
    derive_seed, noise_to_output_ratio, random_transition_matrix, simulate, stream_rng, InputKind,
    SimulationOptions,
};
use crate::veronese::VeroneseSpec;

const MODEL_STREAM: u64 = 5;
const MAX_MODEL_DRAWS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelSource {
    /// `a = (0.3, -0.5)`, `c = (1, -1)`.
    Example,
    /// Coefficients drawn uniformly from the given ranges for every run.
    Random {
        n: usize,
        n_a: usize,
        n_c: usize,
        #[serde(default = "default_a_range")]
        a_range: [f64; 2],
        #[serde(default = "default_c_range")]
        c_range: [f64; 2],
    },
    Explicit {
        n_a: usize,
        n_c: usize,
        subsystems: Vec<SubsystemDoc>,
    },
}

fn default_a_range() -> [f64; 2] {
    [-0.9, 0.9]
}

fn default_c_range() -> [f64; 2] {
    [-2.0, 2.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PtmSource {
    /// `"random"` (flat rows on the simplex) or `"uniform"`.
    Named(String),
    Rows(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_model")]
    pub model: ModelSource,
    #[serde(default = "default_ptm")]
    pub ptm: PtmSource,
    #[serde(default)]
    pub sigma2: Vec<f64>,
    #[serde(default)]
    pub lengths: Vec<usize>,
    #[serde(default = "default_n_l")]
    pub n_l: usize,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub sigma_max: Option<f64>,
    #[serde(default = "default_grid")]
    pub grid: usize,
    #[serde(default)]
    pub smoothing: f64,
    #[serde(default = "default_input")]
    pub input: String,
    #[serde(default)]
    pub pool: Option<usize>,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default)]
    pub output_dir: Option<String>,
}

fn default_model() -> ModelSource {
    ModelSource::Example
}

fn default_ptm() -> PtmSource {
    PtmSource::Named("random".into())
}

fn default_n_l() -> usize {
    2
}

fn default_grid() -> usize {
    DEFAULT_GRID
}

fn default_input() -> String {
    "gaussian".into()
}

fn default_restarts() -> usize {
    DEFAULT_RESTARTS
}

impl ExperimentConfig {
    pub fn new(sigma2: Vec<f64>, lengths: Vec<usize>, seeds: Vec<u64>) -> Self {
        Self {
            model: default_model(),
            ptm: default_ptm(),
            sigma2,
            lengths,
            n_l: default_n_l(),
            seeds,
            epsilon: None,
            sigma_max: None,
            grid: default_grid(),
            smoothing: 0.0,
            input: default_input(),
            pool: None,
            restarts: default_restarts(),
            output_dir: None,
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg = Self::parse_toml(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses without validating, for configs completed by later overrides.
    pub fn parse_toml(s: &str) -> Result<Self> {
        Ok(toml::from_str(s)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn input_kind(&self) -> Result<InputKind> {
        InputKind::from_str(&self.input)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.sigma2.is_empty() || self.sigma2.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return bad("sigma2 must be a non-empty list of finite values >= 0".into());
        }
        if self.lengths.is_empty() || self.lengths.contains(&0) {
            return bad("lengths must be a non-empty list of values >= 1".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if self.n_l == 0 {
            return bad("n_l must be at least 1".into());
        }
        if self.grid < MIN_GRID {
            return bad(format!("grid must be at least {MIN_GRID}"));
        }
        if !(self.smoothing >= 0.0) || !self.smoothing.is_finite() {
            return bad("smoothing must be finite and >= 0".into());
        }
        if self.restarts == 0 {
            return bad("restarts must be at least 1".into());
        }
        if let Some(e) = self.epsilon {
            if !(e >= 0.0) {
                return bad("epsilon must be >= 0".into());
            }
        }
        if let Some(s) = self.sigma_max {
            if !(s > 0.0) || !s.is_finite() {
                return bad("sigma_max must be positive".into());
            }
        }
        self.input_kind()?;
        let model = self.model_for_run(0)?;
        if let PtmSource::Named(name) = &self.ptm {
            if name != "random" && name != "uniform" {
                return bad(format!(
                    "unknown ptm {name:?}, expected \"random\", \"uniform\" or explicit rows"
                ));
            }
        }
        self.ptm_for_run(model.n(), 0)?;
        Ok(())
    }

    pub fn model_for_run(&self, run_seed: u64) -> Result<SarModel> {
        match &self.model {
            ModelSource::Example => Ok(SarModel::two_mode_example()),
            ModelSource::Explicit {
                n_a,
                n_c,
                subsystems,
            } => SarModel::new(
                *n_a,
                *n_c,
                subsystems
                    .iter()
                    .map(|s| SubsystemParams::new(s.a.clone(), s.c.clone()))
                    .collect::<Result<_>>()?,
            ),
            ModelSource::Random {
                n,
                n_a,
                n_c,
                a_range,
                c_range,
            } => random_model(*n, *n_a, *n_c, *a_range, *c_range, run_seed),
        }
    }

    pub fn ptm_for_run(&self, n: usize, run_seed: u64) -> Result<TransitionMatrix> {
        match &self.ptm {
            PtmSource::Named(s) if s == "uniform" => Ok(TransitionMatrix::uniform(n)),
            PtmSource::Named(_) => Ok(random_transition_matrix(n, run_seed)),
            PtmSource::Rows(rows) => {
                if rows.len() != n {
                    return Err(Error::InvalidTransitionMatrix(format!(
                        "{} rows for {n} subsystems",
                        rows.len()
                    )));
                }
                TransitionMatrix::from_rows(rows)
            }
        }
    }

    fn sigma_options(&self) -> SigmaSearchOptions {
        SigmaSearchOptions {
            sigma_max: self.sigma_max,
            grid: self.grid,
            epsilon: self.epsilon,
            ..Default::default()
        }
    }
}

/// Coefficients uniform in the given ranges; autoregressive parts with
/// `Σ|a_j| ≥ 1` are scaled to `0.95` to keep every subsystem stable.
pub fn random_model(
    n: usize,
    n_a: usize,
    n_c: usize,
    a_range: [f64; 2],
    c_range: [f64; 2],
    seed: u64,
) -> Result<SarModel> {
    if !(a_range[0] < a_range[1]) || !(c_range[0] < c_range[1]) {
        return Err(Error::InvalidArgument(
            "coefficient ranges must be increasing".into(),
        ));
    }
    let mut rng = stream_rng(seed, MODEL_STREAM);
    let mut last = None;
    for _ in 0..MAX_MODEL_DRAWS {
        let subs = (0..n)
            .map(|_| {
                let mut a: Vec<f64> = (0..n_a)
                    .map(|_| rng.random_range(a_range[0]..a_range[1]))
                    .collect();
                let l1: f64 = a.iter().map(|v| v.abs()).sum();
                if l1 >= 1.0 {
                    a.iter_mut().for_each(|v| *v *= 0.95 / l1);
                }
                let c = (0..n_c)
                    .map(|_| rng.random_range(c_range[0]..c_range[1]))
                    .collect();
                SubsystemParams::new(a, c)
            })
            .collect::<Result<Vec<_>>>()?;
        match SarModel::new(n_a, n_c, subs) {
            Ok(m) => return Ok(m),
            Err(e) => last = Some(e),
        }
    }
    Err(last.unwrap_or_else(|| Error::InvalidModel("no model drawn".into())))
}

/// Run seed for one `(seed, σ², N)` cell; changing other cells never moves it.
pub fn run_seed(seed: u64, sigma2: f64, len: usize) -> u64 {
    derive_seed(derive_seed(seed, sigma2.to_bits()), len as u64)
}

#[derive(Debug, Clone)]
pub struct IdentifyOptions {
    pub sigma: SigmaSearchOptions,
    pub extract: ExtractOptions,
}

#[derive(Debug, Clone)]
pub struct Identification {
    pub sigma: SigmaEstimate,
    /// Vectors `[-1, a, c]` in sorted order.
    pub coefficients: Vec<Vec<f64>>,
    pub model: SarModel,
}

/// Estimates σ and the decoupling polynomial, then the subsystems.
pub fn identify(ds: &Dataset, n: usize, opts: &IdentifyOptions) -> Result<Identification> {
    let spec = VeroneseSpec::for_model(n, ds.n_a(), ds.n_c())?;
    let sigma = estimate_sigma(ds, &spec, &opts.sigma)?;
    let coefficients = extract_subsystems(&sigma.c_n, &spec, ds, n, &opts.extract)?;
    let model = SarModel::from_coefficient_vectors(&coefficients, ds.n_a(), ds.n_c())?;
    Ok(Identification {
        sigma,
        coefficients,
        model,
    })
}

/// Per-run outcome. Metric fields are `None` when the run failed before
/// reaching them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub seed: u64,
    pub sigma2: f64,
    pub len: usize,
    pub run_seed: u64,
    pub true_ptm: Vec<Vec<f64>>,
    pub estimated_ptm: Option<Vec<Vec<f64>>>,
    pub frobenius: Option<f64>,
    pub gamma: Option<f64>,
    pub sigma_estimate: Option<f64>,
    pub sigma_status: Option<String>,
    pub min_singular_value: Option<f64>,
    pub coefficient_errors: Option<Vec<Vec<f64>>>,
    pub max_coefficient_error: Option<f64>,
    pub decode_accuracy: Option<f64>,
    pub snippets: Option<usize>,
    pub unvisited: Option<Vec<usize>>,
    pub regularized: Option<usize>,
    pub counts: Option<Vec<Vec<u64>>>,
    pub error: Option<String>,
    /// Seconds; kept out of the CSV so reruns are byte-identical.
    pub wall_time: f64,
}

impl RunRecord {
    fn empty(seed: u64, sigma2: f64, len: usize, run_seed: u64) -> Self {
        Self {
            seed,
            sigma2,
            len,
            run_seed,
            true_ptm: Vec::new(),
            estimated_ptm: None,
            frobenius: None,
            gamma: None,
            sigma_estimate: None,
            sigma_status: None,
            min_singular_value: None,
            coefficient_errors: None,
            max_coefficient_error: None,
            decode_accuracy: None,
            snippets: None,
            unvisited: None,
            regularized: None,
            counts: None,
            error: None,
            wall_time: 0.0,
        }
    }

    pub fn ok(&self) -> bool {
        self.error.is_none()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }
}

/// Everything a run produces beyond the record.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub identification: Identification,
    /// Estimated model relabelled to line up with the generating model.
    pub model: SarModel,
    pub decode: DecodeOutcome,
    pub ptm: TransitionMatrix,
}

/// Runs identification, decoding and transition estimation on `ds`, which
/// must carry ground truth, and fills the metric fields of `rec`.
pub fn run_pipeline(
    ds: &Dataset,
    truth_model: &SarModel,
    truth_ptm: &TransitionMatrix,
    cfg: &ExperimentConfig,
    extract_seed: u64,
    rec: &mut RunRecord,
) -> Result<PipelineOutput> {
    rec.gamma = Some(noise_to_output_ratio(ds)?);
    let n = truth_model.n();
    let opts = IdentifyOptions {
        sigma: cfg.sigma_options(),
        extract: ExtractOptions {
            pool: Some(cfg.pool.unwrap_or_else(|| default_pool(ds.len(), n))),
            restarts: cfg.restarts,
            seed: extract_seed,
        },
    };
    let id = identify(ds, n, &opts)?;
    rec.sigma_estimate = Some(id.sigma.sigma);
    rec.sigma_status = Some(id.sigma.status.to_string());
    rec.min_singular_value = Some(id.sigma.min_singular_value);

    let m = match_to_truth(&id.coefficients, &truth_model.coefficient_vectors())?;
    rec.max_coefficient_error = Some(m.max_error());
    rec.coefficient_errors = Some(m.errors.clone());
    let model = id.model.permuted(&m.permutation)?;

    let plan = snippet_plan(ds.len(), ds.n_a(), cfg.n_l)?;
    let decode = decode_all(ds, &model, id.sigma.sigma, &plan)?;
    rec.decode_accuracy = Some(decode.accuracy(ds)?);
    rec.snippets = Some(decode.snippets.len());
    rec.regularized = Some(decode.regularized);
    rec.counts = Some(decode.counts.n_ij.clone());

    let est = estimate_ptm(&decode.counts, cfg.smoothing)?;
    rec.frobenius = Some(normalized_frobenius(&est.ptm, truth_ptm)?);
    rec.estimated_ptm = Some(est.ptm.rows());
    rec.unvisited = Some(est.unvisited);
    Ok(PipelineOutput {
        identification: id,
        model,
        decode,
        ptm: est.ptm,
    })
}

fn simulate_run(
    cfg: &ExperimentConfig,
    rs: u64,
    len: usize,
    sigma2: f64,
) -> Result<(SarModel, TransitionMatrix, Dataset)> {
    let model = cfg.model_for_run(rs)?;
    let ptm = cfg.ptm_for_run(model.n(), rs)?;
    let opts = SimulationOptions::new(len, rs).with_input(cfg.input_kind()?);
    let ds = simulate(&model, &ptm, &NoiseSpec::normal(sigma2)?, &opts)?;
    Ok((model, ptm, ds))
}

fn single_run(cfg: &ExperimentConfig, seed: u64, sigma2: f64, len: usize) -> RunRecord {
    let start = Instant::now();
    let rs = run_seed(seed, sigma2, len);
    let mut rec = RunRecord::empty(seed, sigma2, len, rs);
    let result = simulate_run(cfg, rs, len, sigma2).and_then(|(model, ptm, ds)| {
        rec.true_ptm = ptm.rows();
        run_pipeline(&ds, &model, &ptm, cfg, rs, &mut rec)
    });
    if let Err(e) = result {
        log::warn!("run seed={seed} sigma2={sigma2} N={len} failed: {e}");
        rec.error = Some(e.to_string());
    }
    rec.wall_time = start.elapsed().as_secs_f64();
    rec
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub runs: Vec<RunRecord>,
}

impl ExperimentReport {
    pub fn failures(&self) -> usize {
        self.runs.iter().filter(|r| !r.ok()).count()
    }

    /// Median normalized Frobenius error per `(σ², N)` over successful runs.
    pub fn medians(&self) -> Vec<(f64, usize, Option<f64>)> {
        let mut cells: Vec<(f64, usize)> = Vec::new();
        for r in &self.runs {
            if !cells.contains(&(r.sigma2, r.len)) {
                cells.push((r.sigma2, r.len));
            }
        }
        cells
            .into_iter()
            .map(|(s, n)| {
                let v: Vec<f64> = self
                    .runs
                    .iter()
                    .filter(|r| r.sigma2 == s && r.len == n)
                    .filter_map(|r| r.frobenius)
                    .collect();
                (s, n, median(&v))
            })
            .collect()
    }
}

pub fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    Some(if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    })
}

/// One run per `(σ², N, seed)`, executed concurrently. Stage failures are
/// recorded in the run and do not stop the others.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let mut cells = Vec::new();
    for &s in &cfg.sigma2 {
        for &n in &cfg.lengths {
            for &seed in &cfg.seeds {
                cells.push((s, n, seed));
            }
        }
    }
    let runs = cells
        .par_iter()
        .map(|&(s, n, seed)| single_run(cfg, seed, s, n))
        .collect();
    Ok(ExperimentReport {
        config: cfg.clone(),
        runs,
    })
}

/// Simulates once per `(σ², seed)` at the largest `N` and runs the pipeline
/// on every prefix, so shorter runs are exact prefixes of longer ones.
pub fn run_convergence_sweep(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    if cfg.lengths.len() < 2 {
        return Err(Error::InvalidArgument(
            "a sweep needs at least two lengths".into(),
        ));
    }
    let mut lengths = cfg.lengths.clone();
    lengths.sort_unstable();
    lengths.dedup();
    let max_len = *lengths.last().unwrap_or(&1);
    let mut cells = Vec::new();
    for &s in &cfg.sigma2 {
        for &seed in &cfg.seeds {
            cells.push((s, seed));
        }
    }
    let groups: Vec<Vec<RunRecord>> = cells
        .par_iter()
        .map(|&(s, seed)| {
            let rs = run_seed(seed, s, 0);
            match simulate_run(cfg, rs, max_len, s) {
                Ok((model, ptm, full)) => lengths
                    .par_iter()
                    .map(|&n| {
                        let start = Instant::now();
                        let mut rec = RunRecord::empty(seed, s, n, rs);
                        rec.true_ptm = ptm.rows();
                        let res = full
                            .truncate(n)
                            .and_then(|ds| run_pipeline(&ds, &model, &ptm, cfg, rs, &mut rec));
                        if let Err(e) = res {
                            log::warn!("sweep seed={seed} sigma2={s} N={n} failed: {e}");
                            rec.error = Some(e.to_string());
                        }
                        rec.wall_time = start.elapsed().as_secs_f64();
                        rec
                    })
                    .collect(),
                Err(e) => lengths
                    .iter()
                    .map(|&n| {
                        let mut rec = RunRecord::empty(seed, s, n, rs);
                        rec.error = Some(e.to_string());
                        rec
                    })
                    .collect(),
            }
        })
        .collect();
    Ok(ExperimentReport {
        config: cfg.clone(),
        runs: groups.into_iter().flatten().collect(),
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `p11 p12;p21 p22`.
fn fmt_rows<T: ToString>(rows: &[Vec<T>]) -> String {
    rows.iter()
        .map(|r| r.iter().map(T::to_string).collect::<Vec<_>>().join(" "))
        .collect::<Vec<_>>()
        .join(";")
}

/// One row per run; wall time is left out.
pub fn report_csv(report: &ExperimentReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "seed",
        "sigma2",
        "n",
        "run_seed",
        "status",
        "true_ptm",
        "estimated_ptm",
        "frobenius",
        "gamma",
        "sigma",
        "sigma_estimate",
        "sigma_status",
        "min_singular_value",
        "max_coefficient_error",
        "decode_accuracy",
        "snippets",
        "counts",
        "unvisited",
        "error",
    ])?;
    for r in &report.runs {
        w.write_record([
            r.seed.to_string(),
            r.sigma2.to_string(),
            r.len.to_string(),
            r.run_seed.to_string(),
            if r.ok() { "ok" } else { "failed" }.to_string(),
            fmt_rows(&r.true_ptm),
            r.estimated_ptm.as_deref().map(fmt_rows).unwrap_or_default(),
            fmt_opt(r.frobenius),
            fmt_opt(r.gamma),
            r.sigma().to_string(),
            fmt_opt(r.sigma_estimate),
            r.sigma_status.clone().unwrap_or_default(),
            fmt_opt(r.min_singular_value),
            fmt_opt(r.max_coefficient_error),
            fmt_opt(r.decode_accuracy),
            r.snippets.map(|s| s.to_string()).unwrap_or_default(),
            r.counts.as_deref().map(fmt_rows).unwrap_or_default(),
            r.unvisited
                .as_ref()
                .map(|u| {
                    u.iter()
                        .map(|i| (i + 1).to_string())
                        .collect::<Vec<_>>()
                        .join(" ")
                })
                .unwrap_or_default(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

#[derive(Serialize)]
struct Summary<'a> {
    config: &'a ExperimentConfig,
    runs: usize,
    failures: usize,
    medians: Vec<MedianRow>,
    records: &'a [RunRecord],
}

#[derive(Serialize)]
struct MedianRow {
    sigma2: f64,
    n: usize,
    median_frobenius: Option<f64>,
}

pub fn report_json(report: &ExperimentReport) -> Result<String> {
    let s = Summary {
        config: &report.config,
        runs: report.runs.len(),
        failures: report.failures(),
        medians: report
            .medians()
            .into_iter()
            .map(|(sigma2, n, median_frobenius)| MedianRow {
                sigma2,
                n,
                median_frobenius,
            })
            .collect(),
        records: &report.runs,
    };
    Ok(serde_json::to_string_pretty(&s)?)
}

/// Writes `<stem>.csv` and `<stem>.json` into `dir`.
pub fn write_report(report: &ExperimentReport, dir: &Path, stem: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_atomic(&dir.join(format!("{stem}.csv")), &report_csv(report)?)?;
    write_atomic(
        &dir.join(format!("{stem}.json")),
        report_json(report)?.as_bytes(),
    )
}

/// `(seed, N, error)` points read back from a report CSV.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct CurvePoint {
    pub seed: u64,
    pub sigma2: f64,
    pub n: usize,
    pub frobenius: Option<f64>,
}

pub fn read_curve<R: std::io::Read>(r: R) -> Result<Vec<CurvePoint>> {
    let mut rdr = csv::Reader::from_reader(r);
    rdr.deserialize().map(|p| p.map_err(Error::from)).collect()
}

/// Line chart of error against `N` on a log axis: one grey line per
/// `(seed, σ²)` and the per-`N` median in black.
pub fn convergence_svg(points: &[CurvePoint]) -> Result<String> {
    let pts: Vec<&CurvePoint> = points
        .iter()
        .filter(|p| p.frobenius.is_some() && p.n > 0)
        .collect();
    if pts.is_empty() {
        return Err(Error::InvalidArgument("no successful runs to plot".into()));
    }
    let (w, h, left, right, top, bottom) = (640.0, 400.0, 70.0, 20.0, 20.0, 50.0);
    let lx = |n: usize| (n as f64).log10();
    let xmin = pts
        .iter()
        .map(|p| lx(p.n))
        .fold(f64::INFINITY, f64::min)
        .floor();
    let mut xmax = pts
        .iter()
        .map(|p| lx(p.n))
        .fold(f64::NEG_INFINITY, f64::max)
        .ceil();
    if xmax <= xmin {
        xmax = xmin + 1.0;
    }
    let ymax = pts
        .iter()
        .filter_map(|p| p.frobenius)
        .fold(0.0, f64::max)
        .max(1e-12)
        * 1.1;
    let px = |n: usize| left + (lx(n) - xmin) / (xmax - xmin) * (w - left - right);
    let py = |v: f64| top + (1.0 - v / ymax) * (h - top - bottom);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let (x0, x1, y0, y1) = (left, w - right, h - bottom, top);
    let _ = writeln!(
        s,
        r#"<path d="M{x0} {y1} L{x0} {y0} L{x1} {y0}" stroke="black" fill="none"/>"#
    );
    let mut d = xmin as i32;
    while d as f64 <= xmax {
        let x = left + (d as f64 - xmin) / (xmax - xmin) * (w - left - right);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{y0}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#,
            y0 + 5.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{:.2}" font-size="12" text-anchor="middle">1e{d}</text>"#,
            y0 + 20.0
        );
        d += 1;
    }
    for i in 0..=4 {
        let v = ymax * i as f64 / 4.0;
        let y = py(v);
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{x0}" y2="{y:.2}" stroke="black"/>"#,
            x0 - 5.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="end">{v:.3}</text>"#,
            x0 - 8.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-size="13" text-anchor="middle">N</text>"#,
        (x0 + x1) / 2.0,
        h - 8.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" font-size="13" text-anchor="middle" transform="rotate(-90 16 {:.2})">normalized Frobenius error</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );

    let mut series: Vec<(u64, u64)> = Vec::new();
    for p in &pts {
        let key = (p.seed, p.sigma2.to_bits());
        if !series.contains(&key) {
            series.push(key);
        }
    }
    let polyline = |line: &[(usize, f64)], stroke: &str, width: f64| {
        let coords: Vec<String> = line
            .iter()
            .map(|&(n, v)| format!("{:.2},{:.2}", px(n), py(v)))
            .collect();
        format!(
            r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="{width}"/>"#,
            coords.join(" ")
        )
    };
    for key in &series {
        let mut line: Vec<(usize, f64)> = pts
            .iter()
            .filter(|p| (p.seed, p.sigma2.to_bits()) == *key)
            .filter_map(|p| p.frobenius.map(|f| (p.n, f)))
            .collect();
        line.sort_by_key(|p| p.0);
        let _ = writeln!(s, "{}", polyline(&line, "#999999", 1.0));
    }
    let mut ns: Vec<usize> = pts.iter().map(|p| p.n).collect();
    ns.sort_unstable();
    ns.dedup();
    let med: Vec<(usize, f64)> = ns
        .iter()
        .filter_map(|&n| {
            let v: Vec<f64> = pts
                .iter()
                .filter(|p| p.n == n)
                .filter_map(|p| p.frobenius)
                .collect();
            median(&v).map(|m| (n, m))
        })
        .collect();
    let _ = writeln!(s, "{}", polyline(&med, "black", 2.0));
    s.push_str("</svg>\n");
    Ok(s)
}

/// Transition counts of the true modes over the planned snippets of `ds`.
pub fn oracle_counts(ds: &Dataset, n: usize, n_l: usize) -> Result<TransitionCounts> {
    let plan = snippet_plan(ds.len(), ds.n_a(), n_l)?;
    crate::decode::true_snippet_counts(ds, &plan, n)
}
