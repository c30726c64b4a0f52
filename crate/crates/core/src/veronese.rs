//! Veronese embedding and the noise-corrected second-moment matrix.
//!
//! The regressor `r_k = [x_k, .., x_{k-n_a}, u_{k-1}, .., u_{k-n_c}]` is embedded
//! into all monomials of degree `n`. Products `ν_n(r_k) ν_n(r_k)ᵀ` are monomials
//! of degree `2n`; the state factors `x^h` are replaced by the polynomials
//! `H_h(y)` with `E[H_h(x + η)] = x^h`, which gives an unbiased estimate of the
//! noiseless matrix because noise at distinct times is independent.
//!
//! `H_h` is linear in the noise moments, so the corrected matrix is assembled
//! from one pass of raw `y`/`u` monomial means ([`RawMoments`]) and can then be
//! re-evaluated for any noise level without touching the data again.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{Dataset, NoiseSpec};

/// Samples per accumulation chunk. Chunk sums are merged in chunk order with
/// compensated summation, so results do not depend on the thread count.
pub const CHUNK: usize = 4096;

/// Degree-`n` monomial basis over `dim` variables, the first `noisy` of which
/// are measured with additive noise.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VeroneseSpec {
    degree: usize,
    dim: usize,
    noisy: usize,
    exponents: Vec<Vec<u32>>,
}

/// All exponent vectors of length `dim` summing to `degree`, in descending
/// lexicographic order (`x²`, `xy`, `y²` for two variables).
fn exponent_list(degree: u32, dim: usize) -> Vec<Vec<u32>> {
    fn rec(rest: u32, dim: usize, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if prefix.len() + 1 == dim {
            prefix.push(rest);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for e in (0..=rest).rev() {
            prefix.push(e);
            rec(rest - e, dim, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if dim > 0 {
        rec(degree, dim, &mut Vec::with_capacity(dim), &mut out);
    }
    out
}

fn binomial(n: u64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut r = 1.0;
    for i in 0..k {
        r = r * (n - i) as f64 / (i + 1) as f64;
    }
    r.round()
}

impl VeroneseSpec {
    pub fn new(degree: usize, dim: usize, noisy: usize) -> Result<Self> {
        if degree == 0 || dim == 0 || noisy > dim {
            return Err(Error::InvalidArgument(format!(
                "invalid Veronese spec (degree {degree}, dim {dim}, noisy {noisy})"
            )));
        }
        let exponents = exponent_list(degree as u32, dim);
        Ok(Self {
            degree,
            dim,
            noisy,
            exponents,
        })
    }

    /// Embedding for `n` subsystems of orders `(n_a, n_c)`.
    pub fn for_model(n: usize, n_a: usize, n_c: usize) -> Result<Self> {
        Self::new(n, n_a + n_c + 1, n_a + 1)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Regressor dimension `s`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn noisy(&self) -> usize {
        self.noisy
    }

    /// Embedding dimension `D = C(n + s - 1, n)`.
    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn exponents(&self) -> &[Vec<u32>] {
        &self.exponents
    }

    pub fn map(&self, v: &[f64]) -> Vec<f64> {
        self.exponents
            .iter()
            .map(|e| e.iter().zip(v).map(|(&p, &x)| x.powi(p as i32)).product())
            .collect()
    }
}

/// `ν_n(v)`: every degree-`n` monomial of `v` in descending lexicographic order.
pub fn veronese_map(v: &[f64], n: usize) -> Result<Vec<f64>> {
    Ok(VeroneseSpec::new(n, v.len(), 0)?.map(v))
}

/// Coefficients `c_n` of `Π_i b_iᵀ r` in the Veronese basis of degree `b_list.len()`.
pub fn decoupling_coefficients(b_list: &[Vec<f64>]) -> Result<Vec<f64>> {
    let dim = b_list.first().map(Vec::len).unwrap_or(0);
    if b_list.iter().any(|b| b.len() != dim) {
        return Err(Error::DimensionMismatch(
            "coefficient vectors differ in length".into(),
        ));
    }
    let spec = VeroneseSpec::new(b_list.len(), dim, 0)?;
    let mut poly: HashMap<Vec<u32>, f64> = HashMap::from([(vec![0; dim], 1.0)]);
    for b in b_list {
        let mut next: HashMap<Vec<u32>, f64> = HashMap::with_capacity(poly.len() * dim);
        for (e, c) in &poly {
            for (t, bt) in b.iter().enumerate() {
                if *bt == 0.0 {
                    continue;
                }
                let mut e2 = e.clone();
                e2[t] += 1;
                *next.entry(e2).or_insert(0.0) += c * bt;
            }
        }
        poly = next;
    }
    Ok(spec
        .exponents()
        .iter()
        .map(|e| poly.get(e).copied().unwrap_or(0.0))
        .collect())
}

/// Coefficient table `κ[h][j]` with `H_h(y) = Σ_j κ[h][j] y^j`, from
/// `H_0 = 1`, `H_h = y^h - Σ_{d=1..h} C(h,d) m_d H_{h-d}`.
pub fn unbiased_power_coefficients(max_h: usize, moments: &[f64]) -> Vec<Vec<f64>> {
    let mut k: Vec<Vec<f64>> = Vec::with_capacity(max_h + 1);
    for h in 0..=max_h {
        let mut row = vec![0.0; h + 1];
        row[h] = 1.0;
        for d in 1..=h {
            let w = binomial(h as u64, d as u64) * moments[d];
            if w == 0.0 {
                continue;
            }
            for (j, c) in k[h - d].iter().enumerate() {
                row[j] -= w * c;
            }
        }
        k.push(row);
    }
    k
}

fn moment_vector(noise: &NoiseSpec, max_d: usize, scale: f64) -> Vec<f64> {
    (0..=max_d)
        .map(|d| noise.moment(d as u32) / scale.powi(d as i32))
        .collect()
}

/// `H_h(y)`, the unbiased estimator of `x^h` from `y = x + η`.
pub fn unbiased_power(y: f64, h: usize, noise: &NoiseSpec) -> f64 {
    let mut hs = Vec::with_capacity(h + 1);
    for p in 0..=h {
        let mut v = y.powi(p as i32);
        for d in 1..=p {
            let m = noise.moment(d as u32);
            if m != 0.0 {
                v -= binomial(p as u64, d as u64) * m * hs[p - d];
            }
        }
        hs.push(v);
    }
    hs[h]
}

/// Per-sample corrected matrix `M[ν_n(r_k) ν_n(r_k)ᵀ]` built from `y`.
pub fn corrected_sample_matrix(
    ds: &Dataset,
    k: i64,
    spec: &VeroneseSpec,
    noise: &NoiseSpec,
) -> Result<DMatrix<f64>> {
    check_spec(ds, spec)?;
    let r = ds.regressor(k, false)?;
    let d = spec.len();
    let ex = spec.exponents();
    let mut m = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let mut v = 1.0;
            for t in 0..spec.dim() {
                let p = (ex[i][t] + ex[j][t]) as usize;
                v *= if t < spec.noisy() {
                    unbiased_power(r[t], p, noise)
                } else {
                    r[t].powi(p as i32)
                };
            }
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(m)
}

fn check_spec(ds: &Dataset, spec: &VeroneseSpec) -> Result<()> {
    if spec.dim() != ds.n_a() + ds.n_c() + 1 || spec.noisy() != ds.n_a() + 1 {
        return Err(Error::DimensionMismatch(format!(
            "Veronese spec (dim {}, noisy {}) does not fit dataset orders ({}, {})",
            spec.dim(),
            spec.noisy(),
            ds.n_a(),
            ds.n_c()
        )));
    }
    Ok(())
}

/// Symmetric moment matrix together with the number of samples it averages.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectedMatrix {
    pub m: DMatrix<f64>,
    pub count: usize,
}

impl CorrectedMatrix {
    /// Sample-weighted mean of two accumulated matrices.
    pub fn merge(&self, other: &Self) -> Result<Self> {
        if self.m.shape() != other.m.shape() {
            return Err(Error::DimensionMismatch("matrices differ in size".into()));
        }
        let count = self.count + other.count;
        if count == 0 {
            return Ok(self.clone());
        }
        let (wa, wb) = (
            self.count as f64 / count as f64,
            other.count as f64 / count as f64,
        );
        let mut m = &self.m * wa + &other.m * wb;
        symmetrize(&mut m);
        Ok(Self { m, count })
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let d = m.nrows();
    for i in 0..d {
        for j in i + 1..d {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AccumulateOptions {
    /// Divide `y` and `u` by their maximum magnitudes before forming
    /// monomials; the corrected matrix is scaled back afterwards.
    pub prescale: bool,
}

/// One state-factor term of an expanded matrix entry: `mean[raw] · Π κ[h][j]`.
#[derive(Debug)]
struct Term {
    raw: usize,
    factors: Vec<(usize, usize)>,
}

#[derive(Debug)]
struct Plan {
    monomials: Vec<Vec<u32>>,
    // sparse (var, exponent) view of each monomial
    sparse: Vec<Vec<(usize, u32)>>,
    entries: Vec<(usize, usize, Vec<Term>)>,
    max_h: usize,
}

impl Plan {
    fn build(spec: &VeroneseSpec) -> Self {
        let s = spec.dim();
        let top = 2 * spec.degree() as u32;
        let mut monomials = Vec::new();
        for deg in 0..=top {
            monomials.extend(exponent_list(deg, s));
        }
        let index: HashMap<&[u32], usize> = monomials
            .iter()
            .enumerate()
            .map(|(i, e)| (e.as_slice(), i))
            .collect();
        let sparse = monomials
            .iter()
            .map(|e| {
                e.iter()
                    .enumerate()
                    .filter(|(_, p)| **p > 0)
                    .map(|(t, p)| (t, *p))
                    .collect()
            })
            .collect();

        let ex = spec.exponents();
        let noisy = spec.noisy();
        let mut entries = Vec::new();
        for i in 0..ex.len() {
            for j in i..ex.len() {
                let e: Vec<u32> = ex[i].iter().zip(&ex[j]).map(|(a, b)| a + b).collect();
                // enumerate reduced state exponents 0..=e_t for each noisy variable
                let mut terms = Vec::new();
                let mut sub = vec![0u32; noisy];
                loop {
                    let mut mono = e.clone();
                    mono[..noisy].copy_from_slice(&sub);
                    let factors = (0..noisy)
                        .map(|t| (e[t] as usize, sub[t] as usize))
                        .collect();
                    terms.push(Term {
                        raw: index[mono.as_slice()],
                        factors,
                    });
                    let mut t = 0;
                    while t < noisy {
                        if sub[t] < e[t] {
                            sub[t] += 1;
                            break;
                        }
                        sub[t] = 0;
                        t += 1;
                    }
                    if t == noisy {
                        break;
                    }
                }
                entries.push((i, j, terms));
            }
        }
        Self {
            monomials,
            sparse,
            entries,
            max_h: top as usize,
        }
    }
}

/// Sums of every monomial of degree `<= 2n` in the (noisy) regressor.
#[derive(Debug, Clone)]
pub struct RawMoments {
    spec: VeroneseSpec,
    plan: Arc<Plan>,
    sums: Vec<f64>,
    count: usize,
    y_scale: f64,
    u_scale: f64,
}

fn neumaier_add(sum: &mut f64, comp: &mut f64, v: f64) {
    let t = *sum + v;
    if sum.abs() >= v.abs() {
        *comp += (*sum - t) + v;
    } else {
        *comp += (v - t) + *sum;
    }
    *sum = t;
}

impl RawMoments {
    pub fn accumulate(ds: &Dataset, spec: &VeroneseSpec, opts: AccumulateOptions) -> Result<Self> {
        check_spec(ds, spec)?;
        let n = ds.len();
        if n < spec.len() {
            log::warn!(
                "accumulating {n} samples for a {0}x{0} moment matrix",
                spec.len()
            );
        }
        let max_abs = |v: &[f64]| v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        let (y_scale, u_scale) = if opts.prescale {
            let ys = max_abs(ds.y_values());
            let us = max_abs(ds.u_values());
            (
                if ys > 0.0 { ys } else { 1.0 },
                if us > 0.0 { us } else { 1.0 },
            )
        } else {
            (1.0, 1.0)
        };
        let plan = Arc::new(Plan::build(spec));
        let n_mono = plan.monomials.len();
        let max_p = 2 * spec.degree();
        let noisy = spec.noisy();
        let dim = spec.dim();

        let chunk_ranges: Vec<(usize, usize)> = (0..n.div_ceil(CHUNK))
            .map(|c| (1 + c * CHUNK, ((c + 1) * CHUNK).min(n)))
            .collect();
        let partials: Vec<Vec<f64>> = chunk_ranges
            .par_iter()
            .map(|&(lo, hi)| {
                let mut sums = vec![0.0; n_mono];
                let mut r = Vec::with_capacity(dim);
                let mut pow = vec![vec![1.0; max_p + 1]; dim];
                for k in lo..=hi {
                    ds.regressor_into(k, false, &mut r)
                        .expect("index within 1..=N");
                    for t in 0..dim {
                        let v = r[t] / if t < noisy { y_scale } else { u_scale };
                        for p in 1..=max_p {
                            pow[t][p] = pow[t][p - 1] * v;
                        }
                    }
                    for (acc, sp) in sums.iter_mut().zip(&plan.sparse) {
                        let mut v = 1.0;
                        for &(t, p) in sp {
                            v *= pow[t][p as usize];
                        }
                        *acc += v;
                    }
                }
                sums
            })
            .collect();

        let mut sums = vec![0.0; n_mono];
        let mut comp = vec![0.0; n_mono];
        for part in &partials {
            for i in 0..n_mono {
                neumaier_add(&mut sums[i], &mut comp[i], part[i]);
            }
        }
        for i in 0..n_mono {
            sums[i] += comp[i];
        }
        Ok(Self {
            spec: spec.clone(),
            plan,
            sums,
            count: n,
            y_scale,
            u_scale,
        })
    }

    pub fn spec(&self) -> &VeroneseSpec {
        &self.spec
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Combines statistics from two datasets accumulated under the same spec.
    pub fn merge(&self, other: &Self) -> Result<Self> {
        if self.spec != other.spec || self.y_scale != other.y_scale || self.u_scale != other.u_scale
        {
            return Err(Error::DimensionMismatch(
                "raw moments use different specs or scales".into(),
            ));
        }
        let sums = self
            .sums
            .iter()
            .zip(&other.sums)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Self {
            sums,
            count: self.count + other.count,
            ..self.clone()
        })
    }

    /// `M̂_N` for the given noise law.
    pub fn corrected(&self, noise: &NoiseSpec) -> CorrectedMatrix {
        let d = self.spec.len();
        let mut m = DMatrix::zeros(d, d);
        if self.count == 0 {
            return CorrectedMatrix { m, count: 0 };
        }
        let kappa = unbiased_power_coefficients(
            self.plan.max_h,
            &moment_vector(noise, self.plan.max_h, self.y_scale),
        );
        let inv_n = 1.0 / self.count as f64;
        for (i, j, terms) in &self.plan.entries {
            let mut v = 0.0;
            for term in terms {
                let mut w = 1.0;
                for &(h, p) in &term.factors {
                    w *= kappa[h][p];
                    if w == 0.0 {
                        break;
                    }
                }
                if w != 0.0 {
                    v += w * self.sums[term.raw];
                }
            }
            m[(*i, *j)] = v * inv_n;
            m[(*j, *i)] = v * inv_n;
        }
        if self.y_scale != 1.0 || self.u_scale != 1.0 {
            let noisy = self.spec.noisy();
            let w: Vec<f64> = self
                .spec
                .exponents()
                .iter()
                .map(|e| {
                    let hy: u32 = e[..noisy].iter().sum();
                    let hu: u32 = e[noisy..].iter().sum();
                    self.y_scale.powi(hy as i32) * self.u_scale.powi(hu as i32)
                })
                .collect();
            for i in 0..d {
                for j in 0..d {
                    m[(i, j)] *= w[i] * w[j];
                }
            }
        }
        CorrectedMatrix {
            m,
            count: self.count,
        }
    }
}

/// Running mean of the corrected sample matrices over `k = 1 ..= N`.
pub fn accumulate(ds: &Dataset, spec: &VeroneseSpec, noise: &NoiseSpec) -> Result<CorrectedMatrix> {
    Ok(RawMoments::accumulate(ds, spec, AccumulateOptions::default())?.corrected(noise))
}
