#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::anyhow;
use clap::{Args, Parser, Subcommand};
use log::info;

use sarid::decode::{decode_all, snippet_plan};
use sarid::experiment::{
    convergence_svg, identify, read_curve, run_convergence_sweep, run_experiment, write_report,
    ExperimentConfig, ExperimentReport, IdentifyOptions,
};
use sarid::extract::{default_pool, match_to_truth, ExtractOptions, DEFAULT_RESTARTS};
use sarid::io::{
    load_dataset, read_counts, save_dataset, write_atomic, write_coefficient_report, write_counts,
    write_decisions, write_matrix, ModelDocument, PtmDocument,
};
use sarid::ptm::{estimate_ptm, normalized_frobenius};
use sarid::sigma::{SigmaObjective, SigmaSearchOptions, DEFAULT_GRID};
use sarid::simulate::{
    noise_to_output_ratio, random_transition_matrix, simulate, InputKind, SimulationOptions,
};
use sarid::veronese::{AccumulateOptions, VeroneseSpec};
use sarid::{Error, NoiseSpec};

#[derive(Parser)]
#[command(
    name = "sarid",
    version,
    about = "Identify Markov-switched autoregressive systems from noisy data"
)]
struct Cli {
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true, env = "SARID_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset from a model document
    Simulate {
        #[arg(long)]
        model: PathBuf,
        /// Number of samples N
        #[arg(long)]
        n: usize,
        /// Noise variance; overrides the document's noise.variance
        #[arg(long)]
        sigma2: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// uniform, prbs or gaussian
        #[arg(long, default_value = "uniform")]
        input: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate the noise level and subsystem coefficients
    Identify {
        #[arg(long)]
        data: PathBuf,
        /// Number of subsystems
        #[arg(long)]
        modes: usize,
        #[arg(long)]
        sigma_max: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_GRID)]
        grid: usize,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        pool: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Estimated model document
        #[arg(long)]
        out: Option<PathBuf>,
        /// True model document; estimates are matched and relabelled to it
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Per-coefficient error CSV (needs --truth)
        #[arg(long, requires = "truth")]
        report: Option<PathBuf>,
        /// Corrected moment matrix at the estimated noise level
        #[arg(long)]
        dump_matrix: Option<PathBuf>,
    },
    /// Decode switching sequences on independent snippets
    Decode {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 2)]
        n_l: usize,
        /// Noise standard deviation; defaults to the document's noise level
        #[arg(long)]
        sigma: Option<f64>,
        /// Per-snippet decisions CSV
        #[arg(long)]
        out: Option<PathBuf>,
        /// Transition count CSV
        #[arg(long)]
        counts_out: Option<PathBuf>,
    },
    /// Estimate the transition matrix from a count CSV
    EstimatePtm {
        #[arg(long)]
        counts: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        smoothing: f64,
        /// Document holding the true transition matrix
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every (noise level, length, seed) combination of a config
    Experiment(RunArgs),
    /// Convergence sweep over nested prefixes of one simulation per seed
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Also write an SVG chart
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Chart normalized error against N from a report CSV
    Plot {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML config; flags below override its fields
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    sigma2: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    lengths: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    n_l: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    sigma_max: Option<f64>,
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    smoothing: Option<f64>,
    #[arg(long)]
    input: Option<String>,
    #[arg(long)]
    pool: Option<usize>,
    #[arg(long)]
    restarts: Option<usize>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

struct Failure {
    code: u8,
    err: anyhow::Error,
}

type CmdResult<T> = Result<T, Failure>;

trait Classify<T> {
    /// Bad input or configuration: exit code 1.
    fn config(self, ctx: &str) -> CmdResult<T>;
    /// Failure while running: exit code 2.
    fn run(self, ctx: &str) -> CmdResult<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn config(self, ctx: &str) -> CmdResult<T> {
        self.map_err(|e| Failure {
            code: 1,
            err: e.into().context(ctx.to_string()),
        })
    }

    fn run(self, ctx: &str) -> CmdResult<T> {
        self.map_err(|e| Failure {
            code: 2,
            err: e.into().context(ctx.to_string()),
        })
    }
}

fn config_error(msg: String) -> Failure {
    Failure {
        code: 1,
        err: anyhow!(msg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Some(w) = cli.workers {
        if w == 0 {
            eprintln!("error: worker count must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cmd: Command) -> CmdResult<u8> {
    match cmd {
        Command::Simulate {
            model,
            n,
            sigma2,
            seed,
            input,
            out,
        } => cmd_simulate(&model, n, sigma2, seed, &input, &out),
        Command::Identify {
            data,
            modes,
            sigma_max,
            grid,
            epsilon,
            pool,
            seed,
            out,
            truth,
            report,
            dump_matrix,
        } => {
            let sigma = SigmaSearchOptions {
                sigma_max,
                grid,
                epsilon,
                ..Default::default()
            };
            cmd_identify(
                &data,
                modes,
                sigma,
                pool,
                seed,
                out,
                truth,
                report,
                dump_matrix,
            )
        }
        Command::Decode {
            data,
            model,
            n_l,
            sigma,
            out,
            counts_out,
        } => cmd_decode(&data, &model, n_l, sigma, out, counts_out),
        Command::EstimatePtm {
            counts,
            smoothing,
            truth,
            out,
        } => cmd_estimate_ptm(&counts, smoothing, truth, out),
        Command::Experiment(args) => {
            let (cfg, dir) = build_config(&args)?;
            let report = run_experiment(&cfg).config("invalid experiment config")?;
            finish_report(&report, &dir, "runs")
        }
        Command::Sweep { run, plot } => {
            let (cfg, dir) = build_config(&run)?;
            let report = run_convergence_sweep(&cfg).config("invalid sweep config")?;
            let code = finish_report(&report, &dir, "sweep")?;
            if let Some(p) = plot {
                let csv = fs::read(dir.join("sweep.csv")).run("reading sweep report")?;
                let points = read_curve(csv.as_slice()).run("parsing sweep report")?;
                let svg = convergence_svg(&points).run("plotting")?;
                write_atomic(&p, svg.as_bytes()).run("writing plot")?;
            }
            Ok(code)
        }
        Command::Plot { input, out } => {
            let csv = fs::read(&input).config("reading report")?;
            let points = read_curve(csv.as_slice()).config("parsing report")?;
            let svg = convergence_svg(&points).config("plotting")?;
            write_atomic(&out, svg.as_bytes()).run("writing plot")?;
            Ok(0)
        }
    }
}

fn load_model(path: &Path) -> CmdResult<ModelDocument> {
    ModelDocument::load(path).config(&format!("reading model document {}", path.display()))
}

fn cmd_simulate(
    model: &Path,
    n: usize,
    sigma2: Option<f64>,
    seed: u64,
    input: &str,
    out: &Path,
) -> CmdResult<u8> {
    let doc = load_model(model)?;
    let m = doc.model().config("model document")?;
    let noise = match sigma2 {
        Some(v) => NoiseSpec::normal(v).config("--sigma2")?,
        None => doc.noise().config("model document")?.ok_or_else(|| {
            config_error("no noise variance: pass --sigma2 or set noise.variance".into())
        })?,
    };
    let ptm = match doc.ptm().config("model document")? {
        Some(p) => p,
        None => {
            let p = random_transition_matrix(m.n(), seed);
            info!("no transition matrix in the document; drew {:?}", p.rows());
            p
        }
    };
    let input: InputKind = input.parse().config("--input")?;
    let opts = SimulationOptions::new(n, seed).with_input(input);
    let ds = simulate(&m, &ptm, &noise, &opts).run("simulation")?;
    save_dataset(&ds, out).run("writing dataset")?;
    let gamma = noise_to_output_ratio(&ds).run("noise ratio")?;
    println!("samples = {n}");
    println!("gamma = {gamma}");
    Ok(0)
}

#[allow(clippy::too_many_arguments)]
fn cmd_identify(
    data: &Path,
    modes: usize,
    sigma: SigmaSearchOptions,
    pool: Option<usize>,
    seed: u64,
    out: Option<PathBuf>,
    truth: Option<PathBuf>,
    report: Option<PathBuf>,
    dump_matrix: Option<PathBuf>,
) -> CmdResult<u8> {
    if modes == 0 {
        return Err(config_error("--modes must be at least 1".into()));
    }
    let ds = load_dataset(data).config("reading dataset")?;
    let truth_doc = truth.as_deref().map(load_model).transpose()?;
    let opts = IdentifyOptions {
        sigma,
        extract: ExtractOptions {
            pool: Some(pool.unwrap_or_else(|| default_pool(ds.len(), modes))),
            restarts: DEFAULT_RESTARTS,
            seed,
        },
    };
    let id = identify(&ds, modes, &opts).map_err(|e| match e {
        Error::InvalidArgument(_) => Failure {
            code: 1,
            err: e.into(),
        },
        e => Failure {
            code: 2,
            err: anyhow::Error::from(e).context("identification"),
        },
    })?;
    let mut model = id.model.clone();
    println!("sigma = {}", id.sigma.sigma);
    println!("min_singular_value = {}", id.sigma.min_singular_value);
    println!("status = {}", id.sigma.status);
    println!("epsilon = {}", id.sigma.epsilon);
    println!("c_n = {:?}", id.sigma.c_n);

    if let Some(t) = &truth_doc {
        let true_model = t.model().config("truth document")?;
        let m = match_to_truth(&id.coefficients, &true_model.coefficient_vectors())
            .config("matching to truth")?;
        model = model.permuted(&m.permutation).run("relabelling")?;
        println!("max_coefficient_error = {}", m.max_error());
        if let Some(r) = &report {
            let mut buf = Vec::new();
            write_coefficient_report(&model, &true_model, &mut buf).run("coefficient report")?;
            write_atomic(r, &buf).run("writing report")?;
        }
    }
    for (i, s) in model.subsystems().iter().enumerate() {
        println!("mode {}: a = {:?}, c = {:?}", i + 1, s.a, s.c);
    }
    if let Some(p) = &dump_matrix {
        let spec = VeroneseSpec::for_model(modes, ds.n_a(), ds.n_c()).run("veronese spec")?;
        let obj = SigmaObjective::from_dataset(&ds, &spec, AccumulateOptions::default())
            .run("moments")?;
        let m = obj.matrix(id.sigma.sigma).run("corrected matrix")?;
        let mut buf = Vec::new();
        write_matrix(&m, &mut buf).run("matrix dump")?;
        write_atomic(p, &buf).run("writing matrix")?;
    }
    if let Some(p) = &out {
        let noise = NoiseSpec::from_std(id.sigma.sigma).run("noise")?;
        ModelDocument::new(&model, None, Some(&noise))
            .save(p)
            .run("writing model document")?;
    }
    Ok(0)
}

fn cmd_decode(
    data: &Path,
    model: &Path,
    n_l: usize,
    sigma: Option<f64>,
    out: Option<PathBuf>,
    counts_out: Option<PathBuf>,
) -> CmdResult<u8> {
    let ds = load_dataset(data).config("reading dataset")?;
    let doc = load_model(model)?;
    let m = doc.model().config("model document")?;
    let sigma = match sigma {
        Some(s) => s,
        None => doc
            .noise()
            .config("model document")?
            .map(|n| n.std_dev())
            .ok_or_else(|| {
                config_error("no noise level: pass --sigma or set noise.variance".into())
            })?,
    };
    let plan = snippet_plan(ds.len(), ds.n_a(), n_l).config("snippet plan")?;
    let outcome = decode_all(&ds, &m, sigma, &plan).map_err(|e| match e {
        Error::InvalidArgument(_) | Error::DimensionMismatch(_) => Failure {
            code: 1,
            err: e.into(),
        },
        e => Failure {
            code: 2,
            err: anyhow::Error::from(e).context("decoding"),
        },
    })?;
    if let Some(p) = &out {
        let mut buf = Vec::new();
        write_decisions(&outcome.snippets, &mut buf).run("decisions")?;
        write_atomic(p, &buf).run("writing decisions")?;
    }
    let mut buf = Vec::new();
    write_counts(&outcome.counts, &mut buf).run("counts")?;
    match &counts_out {
        Some(p) => write_atomic(p, &buf).run("writing counts")?,
        None => print!("{}", String::from_utf8_lossy(&buf)),
    }
    println!("snippets = {}", outcome.snippets.len());
    if outcome.regularized > 0 {
        println!("regularized = {}", outcome.regularized);
    }
    if ds.truth().is_some() {
        println!("accuracy = {}", outcome.accuracy(&ds).run("accuracy")?);
    }
    Ok(0)
}

fn cmd_estimate_ptm(
    counts: &Path,
    smoothing: f64,
    truth: Option<PathBuf>,
    out: Option<PathBuf>,
) -> CmdResult<u8> {
    let c =
        read_counts(fs::File::open(counts).config("opening counts")?).config("reading counts")?;
    let est = estimate_ptm(&c, smoothing).config("estimating transition matrix")?;
    let text = PtmDocument::new(&est.ptm, &est.unvisited)
        .to_toml_string()
        .run("ptm document")?;
    match &out {
        Some(p) => write_atomic(p, text.as_bytes()).run("writing ptm document")?,
        None => print!("{text}"),
    }
    for i in &est.unvisited {
        log::warn!("state {} was never left; its row is set to uniform", i + 1);
    }
    if let Some(t) = &truth {
        let p = load_model(t)?
            .ptm()
            .config("truth document")?
            .ok_or_else(|| config_error("truth document has no ptm".into()))?;
        let f = normalized_frobenius(&est.ptm, &p).config("comparing to truth")?;
        println!("normalized_frobenius = {f}");
    }
    Ok(0)
}

fn build_config(a: &RunArgs) -> CmdResult<(ExperimentConfig, PathBuf)> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).config(&format!("reading config {}", p.display()))?;
            ExperimentConfig::parse_toml(&text).config("parsing config")?
        }
        None => ExperimentConfig::new(Vec::new(), Vec::new(), Vec::new()),
    };
    if let Some(v) = &a.sigma2 {
        cfg.sigma2 = v.clone();
    }
    if let Some(v) = &a.lengths {
        cfg.lengths = v.clone();
    }
    if let Some(v) = &a.seeds {
        cfg.seeds = v.clone();
    }
    if let Some(v) = a.n_l {
        cfg.n_l = v;
    }
    if a.epsilon.is_some() {
        cfg.epsilon = a.epsilon;
    }
    if a.sigma_max.is_some() {
        cfg.sigma_max = a.sigma_max;
    }
    if let Some(v) = a.grid {
        cfg.grid = v;
    }
    if let Some(v) = a.smoothing {
        cfg.smoothing = v;
    }
    if let Some(v) = &a.input {
        cfg.input = v.clone();
    }
    if a.pool.is_some() {
        cfg.pool = a.pool;
    }
    if let Some(v) = a.restarts {
        cfg.restarts = v;
    }
    if let Some(v) = &a.out {
        cfg.output_dir = Some(v.display().to_string());
    }
    cfg.validate().config("invalid config")?;
    let dir = PathBuf::from(cfg.output_dir.clone().unwrap_or_else(|| ".".into()));
    Ok((cfg, dir))
}

fn finish_report(report: &ExperimentReport, dir: &Path, stem: &str) -> CmdResult<u8> {
    write_report(report, dir, stem).run("writing report")?;
    for (s, n, med) in report.medians() {
        match med {
            Some(m) => println!("sigma2 = {s}, N = {n}: median normalized Frobenius = {m}"),
            None => println!("sigma2 = {s}, N = {n}: no successful runs"),
        }
    }
    let failed = report.failures();
    if failed > 0 {
        for r in report.runs.iter().filter(|r| !r.ok()) {
            eprintln!(
                "run seed={} sigma2={} N={} failed: {}",
                r.seed,
                r.sigma2,
                r.len,
                r.error.as_deref().unwrap_or("")
            );
        }
        return Ok(2);
    }
    Ok(0)
}
