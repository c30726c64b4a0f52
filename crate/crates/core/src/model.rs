//! Domain types shared by every stage of the identification pipeline.
//!
//! Time indices follow the data layout of the identification problem: inputs
//! are stored for `k = -n_c+1 ..= N-1` and outputs for `k = -n_a+1 ..= N`, so
//! sequences carry an explicit offset and are addressed with signed `k`.
//! Modes are 0-based internally and written 1-based in every file format.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Tolerance for row sums of a transition matrix.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Minimum Euclidean distance between two subsystem coefficient vectors.
pub const DISTINCT_TOL: f64 = 1e-9;

/// Coefficients of one autoregressive subsystem.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsystemParams {
    /// AR coefficients `a_1 ..= a_{n_a}`.
    pub a: Vec<f64>,
    /// Input coefficients `c_1 ..= c_{n_c}`.
    pub c: Vec<f64>,
}

impl SubsystemParams {
    pub fn new(a: Vec<f64>, c: Vec<f64>) -> Result<Self> {
        if a.iter().chain(c.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel(
                "subsystem coefficients must be finite".into(),
            ));
        }
        Ok(Self { a, c })
    }

    /// Builds a subsystem from a coefficient vector `[-1, a.., c..]` (any
    /// non-zero leading entry; the vector is rescaled so it becomes `-1`).
    pub fn from_coefficient_vector(b: &[f64], n_a: usize, n_c: usize) -> Result<Self> {
        if b.len() != n_a + n_c + 1 {
            return Err(Error::DimensionMismatch(format!(
                "coefficient vector has length {}, expected {}",
                b.len(),
                n_a + n_c + 1
            )));
        }
        let lead = b[0];
        if lead.abs() < 1e-300 || !lead.is_finite() {
            return Err(Error::InvalidModel(
                "coefficient vector has zero leading entry".into(),
            ));
        }
        let scale = -1.0 / lead;
        let a = b[1..=n_a].iter().map(|v| v * scale).collect();
        let c = b[n_a + 1..].iter().map(|v| v * scale).collect();
        Self::new(a, c)
    }
}

/// Returns `b = [-1, a_1, .., a_{n_a}, c_1, .., c_{n_c}]`, the vector with
/// `b · r_k = 0` along noiseless trajectories of the subsystem.
pub fn coefficient_vector(s: &SubsystemParams) -> Vec<f64> {
    let mut b = Vec::with_capacity(1 + s.a.len() + s.c.len());
    b.push(-1.0);
    b.extend_from_slice(&s.a);
    b.extend_from_slice(&s.c);
    b
}

/// A switched autoregressive model with `n` subsystems of common orders.
#[derive(Debug, Clone, PartialEq)]
pub struct SarModel {
    n_a: usize,
    n_c: usize,
    subsystems: Vec<SubsystemParams>,
}

impl SarModel {
    pub fn new(n_a: usize, n_c: usize, subsystems: Vec<SubsystemParams>) -> Result<Self> {
        if subsystems.is_empty() {
            return Err(Error::InvalidModel(
                "at least one subsystem is required".into(),
            ));
        }
        if n_a < 1 {
            return Err(Error::InvalidModel("n_a must be at least 1".into()));
        }
        for (i, s) in subsystems.iter().enumerate() {
            if s.a.len() != n_a || s.c.len() != n_c {
                return Err(Error::InvalidModel(format!(
                    "subsystem {} has orders ({}, {}), expected ({n_a}, {n_c})",
                    i + 1,
                    s.a.len(),
                    s.c.len()
                )));
            }
        }
        for i in 0..subsystems.len() {
            for j in i + 1..subsystems.len() {
                let bi = coefficient_vector(&subsystems[i]);
                let bj = coefficient_vector(&subsystems[j]);
                let dist = bi
                    .iter()
                    .zip(&bj)
                    .map(|(p, q)| (p - q).powi(2))
                    .sum::<f64>()
                    .sqrt();
                if dist <= DISTINCT_TOL {
                    return Err(Error::InvalidModel(format!(
                        "subsystems {} and {} are not distinct",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        Ok(Self {
            n_a,
            n_c,
            subsystems,
        })
    }

    /// The two-mode first-order system used throughout the numerical study:
    /// `x_k = 0.3 x_{k-1} + u_{k-1}` and `x_k = -0.5 x_{k-1} - u_{k-1}`.
    pub fn two_mode_example() -> Self {
        Self::new(
            1,
            1,
            vec![
                SubsystemParams {
                    a: vec![0.3],
                    c: vec![1.0],
                },
                SubsystemParams {
                    a: vec![-0.5],
                    c: vec![-1.0],
                },
            ],
        )
        .expect("example model is valid")
    }

    pub fn from_coefficient_vectors(b: &[Vec<f64>], n_a: usize, n_c: usize) -> Result<Self> {
        let subs = b
            .iter()
            .map(|v| SubsystemParams::from_coefficient_vector(v, n_a, n_c))
            .collect::<Result<Vec<_>>>()?;
        Self::new(n_a, n_c, subs)
    }

    /// Number of subsystems.
    pub fn n(&self) -> usize {
        self.subsystems.len()
    }

    pub fn n_a(&self) -> usize {
        self.n_a
    }

    pub fn n_c(&self) -> usize {
        self.n_c
    }

    /// Regressor dimension `n_a + n_c + 1`.
    pub fn regressor_dim(&self) -> usize {
        self.n_a + self.n_c + 1
    }

    pub fn subsystems(&self) -> &[SubsystemParams] {
        &self.subsystems
    }

    pub fn subsystem(&self, mode: usize) -> &SubsystemParams {
        &self.subsystems[mode]
    }

    pub fn coefficient_vectors(&self) -> Vec<Vec<f64>> {
        self.subsystems.iter().map(coefficient_vector).collect()
    }

    /// Reorders subsystems so that new mode `i` is old mode `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.n() {
            return Err(Error::DimensionMismatch(
                "permutation length differs from n".into(),
            ));
        }
        let subs = order.iter().map(|&i| self.subsystems[i].clone()).collect();
        Self::new(self.n_a, self.n_c, subs)
    }
}

/// Row-stochastic matrix with `p[i][j] = P{δ_{k+1} = j | δ_k = i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    p: DMatrix<f64>,
}

impl TransitionMatrix {
    pub fn new(p: DMatrix<f64>) -> Result<Self> {
        if p.nrows() == 0 || p.nrows() != p.ncols() {
            return Err(Error::InvalidTransitionMatrix(
                "matrix must be square and non-empty".into(),
            ));
        }
        for (i, row) in p.row_iter().enumerate() {
            if row.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
                return Err(Error::InvalidTransitionMatrix(format!(
                    "row {} has entries outside [0, 1]",
                    i + 1
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidTransitionMatrix(format!(
                    "row {} sums to {sum}",
                    i + 1
                )));
            }
        }
        Ok(Self { p })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidTransitionMatrix(
                "rows must all have length n".into(),
            ));
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            p: DMatrix::from_element(n, n, 1.0 / n as f64),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            p: DMatrix::identity(n, n),
        }
    }

    pub fn n(&self) -> usize {
        self.p.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.p[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.p
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect()
    }

    /// Relabels modes so that new mode `i` is old mode `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let n = self.n();
        Self {
            p: DMatrix::from_fn(n, n, |i, j| self.p[(order[i], order[j])]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseFamily {
    Normal,
}

/// Zero-mean measurement noise law, parameterized by its variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub family: NoiseFamily,
    variance: f64,
}

impl NoiseSpec {
    pub fn normal(variance: f64) -> Result<Self> {
        if !(variance >= 0.0) || !variance.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "noise variance {variance} must be >= 0"
            )));
        }
        Ok(Self {
            family: NoiseFamily::Normal,
            variance,
        })
    }

    pub fn from_std(sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "noise std {sigma} must be >= 0"
            )));
        }
        Self::normal(sigma * sigma)
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }

    /// `d`-th raw moment of the noise.
    pub fn moment(&self, d: u32) -> f64 {
        match self.family {
            NoiseFamily::Normal => normal_moment(d, self.std_dev()),
        }
    }
}

/// `E[η^d]` for `η ~ N(0, sigma²)`: zero for odd `d`, `sigma^d (d-1)!!` otherwise.
pub fn normal_moment(d: u32, sigma: f64) -> f64 {
    if d % 2 == 1 {
        return 0.0;
    }
    let s2 = sigma * sigma;
    let mut m = 1.0;
    let mut k = 1;
    while k < d {
        m *= k as f64 * s2;
        k += 2;
    }
    m
}

/// Parameters that generated a synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub model: SarModel,
    pub ptm: TransitionMatrix,
    pub noise: NoiseSpec,
    pub seed: u64,
}

/// Ground truth carried by simulated datasets. `x` and `eta` share the
/// layout of `y`; `delta[k-1]` is the mode active at time `k` (`1 ..= N`).
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub x: Vec<f64>,
    pub delta: Vec<usize>,
    pub eta: Vec<f64>,
    pub generator: Option<Generator>,
}

/// Input record `u_{-n_c+1} ..= u_{N-1}` and noisy output record
/// `y_{-n_a+1} ..= y_N`, optionally with ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n_a: usize,
    n_c: usize,
    len: usize,
    u: Vec<f64>,
    y: Vec<f64>,
    truth: Option<Truth>,
}

impl Dataset {
    pub fn new(n_a: usize, n_c: usize, u: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if y.len() <= n_a {
            return Err(Error::InvalidArgument(format!(
                "output record of length {} leaves no samples after {n_a} initial values",
                y.len()
            )));
        }
        let len = y.len() - n_a;
        if u.len() + 1 != len + n_c {
            return Err(Error::DimensionMismatch(format!(
                "input record has length {}, expected {} for N = {len}, n_c = {n_c}",
                u.len(),
                len + n_c - 1
            )));
        }
        Ok(Self {
            n_a,
            n_c,
            len,
            u,
            y,
            truth: None,
        })
    }

    pub fn with_truth(mut self, truth: Truth) -> Result<Self> {
        if truth.x.len() != self.y.len() || truth.eta.len() != self.y.len() {
            return Err(Error::DimensionMismatch(
                "truth x/eta must match the output layout".into(),
            ));
        }
        if truth.delta.len() != self.len {
            return Err(Error::DimensionMismatch(
                "truth delta must have length N".into(),
            ));
        }
        for (i, ((y, x), e)) in self.y.iter().zip(&truth.x).zip(&truth.eta).enumerate() {
            if *y != x + e {
                return Err(Error::InvalidArgument(format!(
                    "y != x + eta at k = {}",
                    i as i64 - self.n_a as i64 + 1
                )));
            }
        }
        self.truth = Some(truth);
        Ok(self)
    }

    /// Number of samples `N`.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn n_a(&self) -> usize {
        self.n_a
    }

    pub fn n_c(&self) -> usize {
        self.n_c
    }

    pub fn truth(&self) -> Option<&Truth> {
        self.truth.as_ref()
    }

    /// First stored input index, `-n_c + 1`.
    pub fn u_start(&self) -> i64 {
        1 - self.n_c as i64
    }

    /// First stored output index, `-n_a + 1`.
    pub fn y_start(&self) -> i64 {
        1 - self.n_a as i64
    }

    pub fn u_values(&self) -> &[f64] {
        &self.u
    }

    pub fn y_values(&self) -> &[f64] {
        &self.y
    }

    fn y_slot(&self, k: i64) -> Result<usize> {
        let min = self.y_start();
        let max = self.len as i64;
        if k < min || k > max {
            return Err(Error::IndexOutOfRange { index: k, min, max });
        }
        Ok((k - min) as usize)
    }

    pub fn u(&self, k: i64) -> Result<f64> {
        let min = self.u_start();
        let max = self.len as i64 - 1;
        if k < min || k > max {
            return Err(Error::IndexOutOfRange { index: k, min, max });
        }
        Ok(self.u[(k - min) as usize])
    }

    pub fn y(&self, k: i64) -> Result<f64> {
        Ok(self.y[self.y_slot(k)?])
    }

    pub fn x(&self, k: i64) -> Result<f64> {
        let t = self.truth.as_ref().ok_or(Error::TruthMissing)?;
        Ok(t.x[self.y_slot(k)?])
    }

    pub fn eta(&self, k: i64) -> Result<f64> {
        let t = self.truth.as_ref().ok_or(Error::TruthMissing)?;
        Ok(t.eta[self.y_slot(k)?])
    }

    /// True mode at time `k` in `1 ..= N`.
    pub fn delta(&self, k: i64) -> Result<usize> {
        let t = self.truth.as_ref().ok_or(Error::TruthMissing)?;
        if k < 1 || k > self.len as i64 {
            return Err(Error::IndexOutOfRange {
                index: k,
                min: 1,
                max: self.len as i64,
            });
        }
        Ok(t.delta[(k - 1) as usize])
    }

    /// `r_k = [x_k, .., x_{k-n_a}, u_{k-1}, .., u_{k-n_c}]`, with `y` in place
    /// of `x` unless `use_truth` is set. Valid for `k` in `1 ..= N`.
    pub fn regressor(&self, k: i64, use_truth: bool) -> Result<Vec<f64>> {
        if k < 1 || k > self.len as i64 {
            return Err(Error::IndexOutOfRange {
                index: k,
                min: 1,
                max: self.len as i64,
            });
        }
        let mut r = Vec::with_capacity(self.n_a + self.n_c + 1);
        self.regressor_into(k as usize, use_truth, &mut r)?;
        Ok(r)
    }

    /// Unchecked-range fast path for hot loops; `k` must lie in `1 ..= N`.
    pub(crate) fn regressor_into(
        &self,
        k: usize,
        use_truth: bool,
        out: &mut Vec<f64>,
    ) -> Result<()> {
        out.clear();
        let src = if use_truth {
            &self.truth.as_ref().ok_or(Error::TruthMissing)?.x
        } else {
            &self.y
        };
        // y slot of time k is k + n_a - 1
        let top = k + self.n_a - 1;
        for j in 0..=self.n_a {
            out.push(src[top - j]);
        }
        // u slot of time k is k + n_c - 1
        for j in 1..=self.n_c {
            out.push(self.u[k + self.n_c - 1 - j]);
        }
        Ok(())
    }

    /// First `len` samples: outputs through `k = len`, inputs through `len - 1`.
    pub fn truncate(&self, len: usize) -> Result<Self> {
        if len == 0 || len > self.len {
            return Err(Error::InvalidArgument(format!(
                "cannot truncate a dataset of length {} to {len}",
                self.len
            )));
        }
        let ny = len + self.n_a;
        let nu = len + self.n_c - 1;
        let truth = self.truth.as_ref().map(|t| Truth {
            x: t.x[..ny].to_vec(),
            delta: t.delta[..len].to_vec(),
            eta: t.eta[..ny].to_vec(),
            generator: t.generator.clone(),
        });
        Ok(Self {
            n_a: self.n_a,
            n_c: self.n_c,
            len,
            u: self.u[..nu].to_vec(),
            y: self.y[..ny].to_vec(),
            truth,
        })
    }
}
