//! Maximum-likelihood switching decisions on independent residual snippets.
//!
//! Under hypothesis `δ` the residual `z_k(δ_k)` equals `η_k - Σ_j a_{jδ_k} η_{k-j}`,
//! a moving average of the noise. A block of `n_l` residuals is therefore
//! Gaussian with covariance `σ² A Aᵀ`, and blocks separated by `n_a` skipped
//! samples share no noise terms. Every block is decoded on its own by
//! enumerating all `n^{n_l}` hypotheses.

use nalgebra::{Cholesky, DMatrix, Dyn};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{Dataset, SarModel};

/// Upper limit on `n^{n_l}`.
pub const MAX_HYPOTHESES: usize = 1 << 20;
/// Relative ridge added to a covariance whose factorization fails.
pub const RIDGE: f64 = 1e-12;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Snippet start times `k = (n_a+1) + (n_a+n_l) l` for every snippet that fits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SnippetPlan {
    pub n_l: usize,
    pub n_a: usize,
    pub starts: Vec<usize>,
}

impl SnippetPlan {
    /// Fraction of the `len` samples that enter some snippet.
    pub fn fraction_used(&self, len: usize) -> f64 {
        (self.starts.len() * self.n_l) as f64 / len as f64
    }
}

pub fn snippet_plan(len: usize, n_a: usize, n_l: usize) -> Result<SnippetPlan> {
    if n_l == 0 {
        return Err(Error::InvalidArgument(
            "snippet length must be at least 1".into(),
        ));
    }
    let starts: Vec<usize> = (0..)
        .map(|l| n_a + 1 + (n_a + n_l) * l)
        .take_while(|k| k + n_l - 1 <= len)
        .collect();
    if starts.is_empty() {
        return Err(Error::NoSnippetFits { len, n_l });
    }
    Ok(SnippetPlan { n_l, n_a, starts })
}

/// `z_k(mode) = y_k - Σ_j a_j y_{k-j} - Σ_j c_j u_{k-j}` for `k` in `1 ..= N`.
pub fn residual(ds: &Dataset, model: &SarModel, k: i64, mode: usize) -> Result<f64> {
    if k < 1 || k > ds.len() as i64 {
        return Err(Error::IndexOutOfRange {
            index: k,
            min: 1,
            max: ds.len() as i64,
        });
    }
    check_orders(ds, model)?;
    let s = model.subsystem(mode);
    let mut z = ds.y(k)?;
    for (j, a) in s.a.iter().enumerate() {
        z -= a * ds.y(k - 1 - j as i64)?;
    }
    for (j, c) in s.c.iter().enumerate() {
        z -= c * ds.u(k - 1 - j as i64)?;
    }
    Ok(z)
}

fn check_orders(ds: &Dataset, model: &SarModel) -> Result<()> {
    if ds.n_a() != model.n_a() || ds.n_c() != model.n_c() {
        return Err(Error::DimensionMismatch(format!(
            "model orders ({}, {}) differ from dataset orders ({}, {})",
            model.n_a(),
            model.n_c(),
            ds.n_a(),
            ds.n_c()
        )));
    }
    Ok(())
}

/// `σ² A Aᵀ`, with row `t` of `A` holding `+1` for `η_{k+t}` and
/// `-a_{j,δ_{k+t}}` for `η_{k+t-j}`; columns run over `η_{k-n_a} ..= η_{k+n_l-1}`.
pub fn snippet_covariance(hypothesis: &[usize], model: &SarModel, sigma: f64) -> DMatrix<f64> {
    let n_l = hypothesis.len();
    let n_a = model.n_a();
    let mut a = DMatrix::zeros(n_l, n_l + n_a);
    for (t, &mode) in hypothesis.iter().enumerate() {
        a[(t, t + n_a)] = 1.0;
        for (j, coef) in model.subsystem(mode).a.iter().enumerate() {
            a[(t, t + n_a - 1 - j)] -= coef;
        }
    }
    (&a * a.transpose()) * (sigma * sigma)
}

/// Multivariate normal log-density of `z` under zero mean and covariance `cov`.
pub fn snippet_loglik(z: &[f64], cov: &DMatrix<f64>) -> Result<f64> {
    if cov.nrows() != z.len() || cov.ncols() != z.len() {
        return Err(Error::DimensionMismatch(
            "covariance size differs from residual length".into(),
        ));
    }
    let chol = Cholesky::new(cov.clone()).ok_or(Error::NotPositiveDefinite)?;
    Ok(Factor::from_cholesky(chol).loglik(z))
}

#[derive(Debug, Clone)]
struct Factor {
    l: DMatrix<f64>,
    half_log_det: f64,
}

impl Factor {
    fn from_cholesky(chol: Cholesky<f64, Dyn>) -> Self {
        let l = chol.unpack();
        let half_log_det = l.diagonal().iter().map(|d| d.ln()).sum();
        Self { l, half_log_det }
    }

    fn loglik(&self, z: &[f64]) -> f64 {
        let n = z.len();
        // forward substitution L w = z
        let mut w = vec![0.0; n];
        for i in 0..n {
            let v = z[i] - (0..i).map(|j| self.l[(i, j)] * w[j]).sum::<f64>();
            w[i] = v / self.l[(i, i)];
        }
        let quad: f64 = w.iter().map(|v| v * v).sum();
        -0.5 * n as f64 * LN_2PI - self.half_log_det - 0.5 * quad
    }
}

/// Maximum-likelihood hypothesis for one snippet (modes are 0-based).
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedSnippet {
    pub start: usize,
    pub hypothesis: Vec<usize>,
    /// Log-density of the residual vector under `hypothesis`. With zero noise
    /// the decoder ranks by residual energy and this holds `-Σ z_t²`.
    pub loglik: f64,
}

/// Counts `n_ij` of `i → j` transitions inside decoded snippets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransitionCounts {
    pub n_ij: Vec<Vec<u64>>,
}

impl TransitionCounts {
    pub fn zeros(n: usize) -> Self {
        Self {
            n_ij: vec![vec![0; n]; n],
        }
    }

    pub fn n(&self) -> usize {
        self.n_ij.len()
    }

    pub fn total(&self) -> u64 {
        self.n_ij.iter().flatten().sum()
    }

    pub fn add_sequence(&mut self, seq: &[usize]) {
        for w in seq.windows(2) {
            self.n_ij[w[0]][w[1]] += 1;
        }
    }

    pub fn merge(&mut self, other: &Self) {
        for (r, o) in self.n_ij.iter_mut().zip(&other.n_ij) {
            for (a, b) in r.iter_mut().zip(o) {
                *a += b;
            }
        }
    }
}

/// Precomputed covariance factors for every hypothesis of one model.
#[derive(Debug, Clone)]
pub struct SnippetDecoder<'m> {
    model: &'m SarModel,
    n_l: usize,
    sigma: f64,
    hypotheses: Vec<Vec<usize>>,
    factors: Vec<Factor>,
    regularized: usize,
}

/// All length-`n_l` mode sequences over `n` modes in lexicographic order.
pub fn enumerate_hypotheses(n: usize, n_l: usize) -> Result<Vec<Vec<usize>>> {
    let count = (n as u128)
        .checked_pow(n_l as u32)
        .filter(|c| *c <= MAX_HYPOTHESES as u128);
    let count = count.ok_or_else(|| {
        Error::InvalidArgument(format!(
            "{n}^{n_l} hypotheses exceed the limit of {MAX_HYPOTHESES}"
        ))
    })? as usize;
    Ok((0..count)
        .map(|mut idx| {
            let mut h = vec![0; n_l];
            for t in (0..n_l).rev() {
                h[t] = idx % n;
                idx /= n;
            }
            h
        })
        .collect())
}

impl<'m> SnippetDecoder<'m> {
    pub fn new(model: &'m SarModel, sigma: f64, n_l: usize) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "sigma must be finite and >= 0, got {sigma}"
            )));
        }
        if n_l == 0 {
            return Err(Error::InvalidArgument(
                "snippet length must be at least 1".into(),
            ));
        }
        let hypotheses = enumerate_hypotheses(model.n(), n_l)?;
        let mut factors = Vec::new();
        let mut regularized = 0;
        if sigma > 0.0 {
            for h in &hypotheses {
                let cov = snippet_covariance(h, model, sigma);
                let chol = match Cholesky::new(cov.clone()) {
                    Some(c) => c,
                    None => {
                        regularized += 1;
                        let ridge = RIDGE * cov.trace();
                        let reg = cov + DMatrix::identity(n_l, n_l) * ridge;
                        Cholesky::new(reg).ok_or(Error::NotPositiveDefinite)?
                    }
                };
                factors.push(Factor::from_cholesky(chol));
            }
        }
        Ok(Self {
            model,
            n_l,
            sigma,
            hypotheses,
            factors,
            regularized,
        })
    }

    pub fn hypotheses(&self) -> &[Vec<usize>] {
        &self.hypotheses
    }

    /// Number of hypothesis covariances that needed the ridge.
    pub fn regularized(&self) -> usize {
        self.regularized
    }

    /// `z_{start+t}(m)` for `t < n_l` and every mode `m`.
    fn residual_table(&self, ds: &Dataset, start: usize) -> Result<Vec<Vec<f64>>> {
        if start < 1 || start + self.n_l - 1 > ds.len() {
            return Err(Error::IndexOutOfRange {
                index: start as i64,
                min: 1,
                max: ds.len() as i64 + 1 - self.n_l as i64,
            });
        }
        let (n_a, n_c) = (ds.n_a(), ds.n_c());
        let y = ds.y_values();
        let u = ds.u_values();
        Ok((0..self.n_l)
            .map(|t| {
                let k = start + t;
                let ys = k + n_a - 1;
                let us = k + n_c - 1;
                self.model
                    .subsystems()
                    .iter()
                    .map(|s| {
                        let mut z = y[ys];
                        for (j, a) in s.a.iter().enumerate() {
                            z -= a * y[ys - 1 - j];
                        }
                        for (j, c) in s.c.iter().enumerate() {
                            z -= c * u[us - 1 - j];
                        }
                        z
                    })
                    .collect()
            })
            .collect())
    }

    /// Score of every hypothesis, in [`enumerate_hypotheses`] order.
    pub fn score_all(&self, ds: &Dataset, start: usize) -> Result<Vec<f64>> {
        check_orders(ds, self.model)?;
        let table = self.residual_table(ds, start)?;
        let mut z = vec![0.0; self.n_l];
        Ok(self
            .hypotheses
            .iter()
            .enumerate()
            .map(|(i, h)| {
                for t in 0..self.n_l {
                    z[t] = table[t][h[t]];
                }
                if self.sigma > 0.0 {
                    self.factors[i].loglik(&z)
                } else {
                    -z.iter().map(|v| v * v).sum::<f64>()
                }
            })
            .collect())
    }

    pub fn decode(&self, ds: &Dataset, start: usize) -> Result<DecodedSnippet> {
        let scores = self.score_all(ds, start)?;
        let mut best = 0;
        for (i, s) in scores.iter().enumerate() {
            // strict comparison keeps the lexicographically smallest on ties
            if *s > scores[best] {
                best = i;
            }
        }
        Ok(DecodedSnippet {
            start,
            hypothesis: self.hypotheses[best].clone(),
            loglik: scores[best],
        })
    }
}

pub fn decode_snippet(
    ds: &Dataset,
    model: &SarModel,
    sigma: f64,
    start: usize,
    n_l: usize,
) -> Result<DecodedSnippet> {
    SnippetDecoder::new(model, sigma, n_l)?.decode(ds, start)
}

#[derive(Debug, Clone)]
pub struct DecodeOutcome {
    pub snippets: Vec<DecodedSnippet>,
    pub counts: TransitionCounts,
    /// Hypothesis covariances that needed regularization.
    pub regularized: usize,
}

impl DecodeOutcome {
    /// Fraction of decoded positions that agree with the true modes.
    pub fn accuracy(&self, ds: &Dataset) -> Result<f64> {
        let mut hits = 0usize;
        let mut total = 0usize;
        for s in &self.snippets {
            for (t, m) in s.hypothesis.iter().enumerate() {
                total += 1;
                if ds.delta((s.start + t) as i64)? == *m {
                    hits += 1;
                }
            }
        }
        Ok(if total == 0 {
            0.0
        } else {
            hits as f64 / total as f64
        })
    }
}

/// Decodes every planned snippet and counts within-snippet transitions.
pub fn decode_all(
    ds: &Dataset,
    model: &SarModel,
    sigma: f64,
    plan: &SnippetPlan,
) -> Result<DecodeOutcome> {
    check_orders(ds, model)?;
    if plan.n_a != model.n_a() {
        return Err(Error::DimensionMismatch(
            "snippet plan gap differs from model n_a".into(),
        ));
    }
    let decoder = SnippetDecoder::new(model, sigma, plan.n_l)?;
    let snippets = plan
        .starts
        .par_iter()
        .map(|&k| decoder.decode(ds, k))
        .collect::<Result<Vec<_>>>()?;
    let mut counts = TransitionCounts::zeros(model.n());
    for s in &snippets {
        counts.add_sequence(&s.hypothesis);
    }
    Ok(DecodeOutcome {
        snippets,
        counts,
        regularized: decoder.regularized(),
    })
}

/// Transition counts of the true mode sequence inside the planned snippets.
pub fn true_snippet_counts(ds: &Dataset, plan: &SnippetPlan, n: usize) -> Result<TransitionCounts> {
    let mut counts = TransitionCounts::zeros(n);
    for &k in &plan.starts {
        let seq = (0..plan.n_l)
            .map(|t| ds.delta((k + t) as i64))
            .collect::<Result<Vec<_>>>()?;
        counts.add_sequence(&seq);
    }
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{NoiseSpec, SubsystemParams, TransitionMatrix};
    use crate::simulate::{simulate, SimulationOptions};

    fn noiseless(len: usize, seed: u64) -> Dataset {
        let p = TransitionMatrix::from_rows(&[vec![0.1837, 0.8163], vec![0.3424, 0.6576]]).unwrap();
        simulate(
            &SarModel::two_mode_example(),
            &p,
            &NoiseSpec::normal(0.0).unwrap(),
            &SimulationOptions::new(len, seed),
        )
        .unwrap()
    }

    #[test]
    fn plan_examples() {
        let p = snippet_plan(20, 1, 2).unwrap();
        assert_eq!(p.starts, vec![2, 5, 8, 11, 14, 17]);
        let p = snippet_plan(5, 0, 1).unwrap();
        assert_eq!(p.starts, vec![1, 2, 3, 4, 5]);
        assert!(matches!(
            snippet_plan(2, 1, 2),
            Err(Error::NoSnippetFits { .. })
        ));
        let p = snippet_plan(300_000, 1, 2).unwrap();
        assert!((p.fraction_used(300_000) - 2.0 / 3.0).abs() < 1e-4);
    }

    #[test]
    fn snippets_share_no_noise_terms() {
        let p = snippet_plan(1000, 2, 3).unwrap();
        for w in p.starts.windows(2) {
            // noise indices k - n_a ..= k + n_l - 1
            let last = w[0] + p.n_l - 1;
            let first_next = w[1] - p.n_a;
            assert!(first_next > last);
            assert_eq!(w[1] - (w[0] + p.n_l), p.n_a);
        }
    }

    #[test]
    fn residual_cases() {
        let ds = noiseless(200, 3);
        let model = SarModel::two_mode_example();
        for k in 1..=200i64 {
            let m = ds.delta(k).unwrap();
            assert!(residual(&ds, &model, k, m).unwrap().abs() < 1e-14);
            if m == 0 {
                let want = 0.8 * ds.x(k - 1).unwrap() + 2.0 * ds.u(k - 1).unwrap();
                assert!((residual(&ds, &model, k, 1).unwrap() - want).abs() < 1e-12);
            }
        }
        assert!(residual(&ds, &model, 201, 0).is_err());

        let fixture = Dataset::new(1, 1, vec![1.0, 0.0], vec![1.0, 1.3, 0.0]).unwrap();
        assert!(residual(&fixture, &model, 1, 0).unwrap().abs() < 1e-15);
    }

    #[test]
    fn covariance_cases() {
        let s1 = SubsystemParams::new(vec![0.3], vec![1.0]).unwrap();
        let s2 = SubsystemParams::new(vec![-0.5], vec![-1.0]).unwrap();
        let model = SarModel::new(1, 1, vec![s1, s2]).unwrap();
        let sigma: f64 = 0.2;
        let c = snippet_covariance(&[1], &model, sigma);
        assert!((c[(0, 0)] - sigma.powi(2) * 1.25).abs() < 1e-15);
        let (p, q) = (0.3, -0.5);
        let c = snippet_covariance(&[0, 1], &model, sigma);
        let want =
            DMatrix::from_row_slice(2, 2, &[1.0 + p * p, -q, -q, 1.0 + q * q]) * sigma.powi(2);
        assert!((c - want).norm() < 1e-15);

        let w1 = SubsystemParams::new(vec![0.0], vec![1.0]).unwrap();
        let w2 = SubsystemParams::new(vec![0.0], vec![2.0]).unwrap();
        let white = SarModel::new(1, 1, vec![w1, w2]).unwrap();
        let c = snippet_covariance(&[0, 1, 1], &white, 0.5);
        assert!((c - DMatrix::identity(3, 3) * 0.25).norm() < 1e-15);
    }

    #[test]
    fn loglik_cases() {
        let id = DMatrix::identity(2, 2);
        assert!((snippet_loglik(&[0.0, 0.0], &id).unwrap() + LN_2PI).abs() < 1e-14);
        assert!((snippet_loglik(&[1.0, 0.0], &id).unwrap() + LN_2PI + 0.5).abs() < 1e-14);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            snippet_loglik(&[0.0, 0.0], &bad),
            Err(Error::NotPositiveDefinite)
        ));
    }

    #[test]
    fn hypotheses_are_lexicographic() {
        let h = enumerate_hypotheses(2, 2).unwrap();
        assert_eq!(h, vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]);
        assert!(enumerate_hypotheses(10, 10).is_err());
    }

    #[test]
    fn noiseless_decoding_recovers_truth() {
        let ds = noiseless(3000, 7);
        let model = SarModel::two_mode_example();
        let plan = snippet_plan(ds.len(), 1, 2).unwrap();
        let decoder = SnippetDecoder::new(&model, 0.0, 2).unwrap();
        assert_eq!(decoder.score_all(&ds, 2).unwrap().len(), 4);
        let out = decode_all(&ds, &model, 0.0, &plan).unwrap();
        assert_eq!(out.accuracy(&ds).unwrap(), 1.0);
        assert_eq!(out.counts, true_snippet_counts(&ds, &plan, 2).unwrap());
        assert_eq!(out.counts.total(), plan.starts.len() as u64);
        // with sigma > 0 the log-determinant can outweigh a small wrong residual
        let out = decode_all(&ds, &model, 0.1, &plan).unwrap();
        assert!(out.accuracy(&ds).unwrap() > 0.95);
    }

    #[test]
    fn constant_chain_has_no_switches() {
        let ds = simulate(
            &SarModel::two_mode_example(),
            &TransitionMatrix::identity(2),
            &NoiseSpec::normal(0.0).unwrap(),
            &SimulationOptions {
                init: Some(vec![0.0, 1.0]),
                ..SimulationOptions::new(600, 2)
            },
        )
        .unwrap();
        let plan = snippet_plan(ds.len(), 1, 3).unwrap();
        let out = decode_all(&ds, &SarModel::two_mode_example(), 0.0, &plan).unwrap();
        assert_eq!(out.counts.n_ij[0][1] + out.counts.n_ij[1][0], 0);
        assert_eq!(out.counts.total(), 2 * plan.starts.len() as u64);
    }
}
