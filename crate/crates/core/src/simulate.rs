//! Synthetic Markov-jump trajectories with measurement noise.
//!
//! Every random quantity draws from its own ChaCha8 stream (chain, input,
//! noise) keyed by the same seed. ChaCha is counter based, so each stream is
//! reproducible on its own and a longer run always extends a shorter one with
//! the same seed sample for sample. Gaussian variates use the Ziggurat
//! sampler of `rand_distr::StandardNormal`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{Dataset, Generator, NoiseSpec, SarModel, TransitionMatrix, Truth};

const CHAIN_STREAM: u64 = 1;
const INPUT_STREAM: u64 = 2;
const NOISE_STREAM: u64 = 3;

/// Default bound on `|x_k|`.
pub const DEFAULT_STATE_BOUND: f64 = 1e6;

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 finalizer applied to `master + (stream + 1) * golden-gamma`.
///
/// Child seeds depend only on `(master, stream)`, so adding streams never
/// changes the seeds of existing ones.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master.wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub enum InputKind {
    /// i.i.d. uniform on `[-1, 1]`.
    Uniform,
    /// i.i.d. equiprobable `±1`.
    Prbs,
    /// i.i.d. standard normal.
    Gaussian,
    /// Caller-supplied sequence.
    Custom(Vec<f64>),
}

impl std::str::FromStr for InputKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "prbs" => Ok(Self::Prbs),
            "gaussian" => Ok(Self::Gaussian),
            other => Err(Error::InvalidArgument(format!(
                "unknown input kind '{other}'"
            ))),
        }
    }
}

fn sample_index(weights: impl Iterator<Item = f64>, draw: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, w) in weights.enumerate() {
        if w > 0.0 {
            last = i;
            acc += w;
            if draw < acc {
                return i;
            }
        }
    }
    last
}

/// Samples `δ_1 ..= δ_len` (0-based modes) from the chain with initial law `init`.
pub fn sample_markov_chain(
    ptm: &TransitionMatrix,
    len: usize,
    init: &[f64],
    seed: u64,
) -> Result<Vec<usize>> {
    let n = ptm.n();
    if init.len() != n {
        return Err(Error::DimensionMismatch(
            "initial distribution must have length n".into(),
        ));
    }
    if init.iter().any(|p| *p < 0.0) || (init.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(
            "initial distribution must sum to 1".into(),
        ));
    }
    let mut rng = stream_rng(seed, CHAIN_STREAM);
    let mut delta = Vec::with_capacity(len);
    if len == 0 {
        return Ok(delta);
    }
    let mut state = sample_index(init.iter().copied(), rng.random::<f64>());
    delta.push(state);
    let p = ptm.matrix();
    for _ in 1..len {
        let draw = rng.random::<f64>();
        state = sample_index((0..n).map(|j| p[(state, j)]), draw);
        delta.push(state);
    }
    Ok(delta)
}

pub fn generate_input(kind: &InputKind, len: usize, seed: u64) -> Result<Vec<f64>> {
    let mut rng = stream_rng(seed, INPUT_STREAM);
    let u = match kind {
        InputKind::Uniform => (0..len).map(|_| rng.random_range(-1.0..=1.0)).collect(),
        InputKind::Prbs => (0..len)
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect(),
        InputKind::Gaussian => (0..len)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect(),
        InputKind::Custom(v) => {
            if v.len() != len {
                return Err(Error::DimensionMismatch(format!(
                    "custom input has length {}, expected {len}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidArgument("custom input must be finite".into()));
            }
            v.clone()
        }
    };
    Ok(u)
}

/// Draws a transition matrix whose rows are uniform on the probability simplex.
pub fn random_transition_matrix(n: usize, seed: u64) -> TransitionMatrix {
    let mut rng = stream_rng(seed, 0);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            // normalized i.i.d. Exp(1) draws are flat Dirichlet
            let e: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
            let s: f64 = e.iter().sum();
            let mut row: Vec<f64> = e.iter().map(|v| v / s).collect();
            let head: f64 = row[..n - 1].iter().sum();
            row[n - 1] = (1.0 - head).max(0.0);
            row
        })
        .collect();
    TransitionMatrix::from_rows(&rows).expect("normalized rows are stochastic")
}

#[derive(Debug, Clone)]
pub struct SimulationOptions {
    /// Number of samples `N`.
    pub len: usize,
    pub seed: u64,
    pub input: InputKind,
    /// Law of `δ_1`; uniform over modes when `None`.
    pub init: Option<Vec<f64>>,
    pub state_bound: f64,
}

impl SimulationOptions {
    pub fn new(len: usize, seed: u64) -> Self {
        Self {
            len,
            seed,
            input: InputKind::Uniform,
            init: None,
            state_bound: DEFAULT_STATE_BOUND,
        }
    }

    pub fn with_input(mut self, input: InputKind) -> Self {
        self.input = input;
        self
    }
}

/// Simulates `x_k = Σ a_{jδ_k} x_{k-j} + Σ c_{jδ_k} u_{k-j}`, `y_k = x_k + η_k`
/// from zero initial states.
pub fn simulate(
    model: &SarModel,
    ptm: &TransitionMatrix,
    noise: &NoiseSpec,
    opts: &SimulationOptions,
) -> Result<Dataset> {
    let n = model.n();
    if ptm.n() != n {
        return Err(Error::DimensionMismatch(format!(
            "transition matrix is {}x{}, model has {n} subsystems",
            ptm.n(),
            ptm.n()
        )));
    }
    if !(opts.state_bound > 0.0) {
        return Err(Error::InvalidArgument(
            "state bound must be positive".into(),
        ));
    }
    if opts.len == 0 {
        return Err(Error::InvalidArgument(
            "simulation length must be at least 1".into(),
        ));
    }
    let (n_a, n_c, len) = (model.n_a(), model.n_c(), opts.len);
    let init = opts.init.clone().unwrap_or_else(|| vec![1.0 / n as f64; n]);
    let delta = sample_markov_chain(ptm, len, &init, opts.seed)?;
    let u = generate_input(&opts.input, len + n_c - 1, opts.seed)?;

    // slot of time k: x/y/eta at k + n_a - 1, u at k + n_c - 1
    let mut x = vec![0.0; len + n_a];
    for k in 1..=len {
        let s = model.subsystem(delta[k - 1]);
        let xs = k + n_a - 1;
        let us = k + n_c - 1;
        let mut v = 0.0;
        for (j, a) in s.a.iter().enumerate() {
            v += a * x[xs - 1 - j];
        }
        for (j, c) in s.c.iter().enumerate() {
            v += c * u[us - 1 - j];
        }
        if !(v.abs() <= opts.state_bound) {
            return Err(Error::StateBoundExceeded {
                k: k as i64,
                value: v.abs(),
                bound: opts.state_bound,
            });
        }
        x[xs] = v;
    }

    let sigma = noise.std_dev();
    let mut rng = stream_rng(opts.seed, NOISE_STREAM);
    let eta: Vec<f64> = (0..x.len())
        .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let y: Vec<f64> = x.iter().zip(&eta).map(|(a, b)| a + b).collect();

    let truth = Truth {
        x,
        delta,
        eta,
        generator: Some(Generator {
            model: model.clone(),
            ptm: ptm.clone(),
            noise: *noise,
            seed: opts.seed,
        }),
    };
    Dataset::new(n_a, n_c, u, y)?.with_truth(truth)
}

/// `γ = max|η| / max|y|` over the stored output range (0 when `y ≡ 0`).
pub fn noise_to_output_ratio(ds: &Dataset) -> Result<f64> {
    let truth = ds.truth().ok_or(Error::TruthMissing)?;
    let max_eta = truth.eta.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let max_y = ds.y_values().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if max_y == 0.0 {
        return Ok(0.0);
    }
    Ok(max_eta / max_y)
}
