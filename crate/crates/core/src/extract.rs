//! Recovering subsystem coefficient vectors from the decoupling polynomial
//! `p(r) = c_nᵀ ν_n(r)` by polynomial differentiation.
//!
//! On the zero set of `p` near hyperplane `b_iᵀ r = 0` the gradient of `p` is
//! parallel to `b_i`. Points are ranked by the first-order distance
//! `|p(r)| / ‖∇p(r)‖` to the zero set, their gradient directions are clustered
//! into `n` groups (a direction and its negative are the same hyperplane), and
//! each group mean is rescaled to a leading `-1`.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::Dataset;
use crate::simulate::stream_rng;
use crate::veronese::VeroneseSpec;

pub const DEFAULT_RESTARTS: usize = 20;
pub const MAX_POOL: usize = 10_000;
const KMEANS_ITERS: usize = 100;
/// Two cluster directions with `|cos| > 1 - SAME_DIRECTION` are one hyperplane.
const SAME_DIRECTION: f64 = 1e-6;

#[derive(Debug, Clone, Copy)]
pub struct ExtractOptions {
    /// Number of scored points to keep; `min(10⁴, N/10)` (at least `10 n`) when `None`.
    pub pool: Option<usize>,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self {
            pool: None,
            restarts: DEFAULT_RESTARTS,
            seed: 0,
        }
    }
}

pub fn default_pool(len: usize, n: usize) -> usize {
    (len / 10).min(MAX_POOL).max(10 * n).min(len)
}

/// Evaluates `p(point)` and `∇p(point)` from the exponent table.
pub fn polynomial_value_and_gradient(
    c_n: &[f64],
    spec: &VeroneseSpec,
    point: &[f64],
) -> (f64, Vec<f64>) {
    let s = spec.dim();
    let deg = spec.degree();
    let mut pow = vec![vec![1.0; deg + 1]; s];
    for t in 0..s {
        for p in 1..=deg {
            pow[t][p] = pow[t][p - 1] * point[t];
        }
    }
    let mut value = 0.0;
    let mut grad = vec![0.0; s];
    for (c, e) in c_n.iter().zip(spec.exponents()) {
        if *c == 0.0 {
            continue;
        }
        value += c * (0..s).map(|t| pow[t][e[t] as usize]).product::<f64>();
        for t in 0..s {
            if e[t] == 0 {
                continue;
            }
            let mut d = c * e[t] as f64 * pow[t][e[t] as usize - 1];
            for u in 0..s {
                if u != t {
                    d *= pow[u][e[u] as usize];
                }
            }
            grad[t] += d;
        }
    }
    (value, grad)
}

/// `∇p(point)` for `p(r) = c_nᵀ ν_n(r)`.
pub fn polynomial_gradient(c_n: &[f64], spec: &VeroneseSpec, point: &[f64]) -> Vec<f64> {
    polynomial_value_and_gradient(c_n, spec, point).1
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Flips `v` so that its largest-magnitude entry is positive.
fn canonical_sign(v: &mut [f64]) {
    let pivot = v
        .iter()
        .copied()
        .fold(0.0_f64, |a, x| if x.abs() > a.abs() { x } else { a });
    if pivot < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

struct Clustering {
    centers: Vec<Vec<f64>>,
    assign: Vec<usize>,
    objective: f64,
}

fn farthest_point_seeds(dirs: &[Vec<f64>], k: usize, first: usize) -> Vec<Vec<f64>> {
    let mut centers = vec![dirs[first].clone()];
    let mut closeness: Vec<f64> = dirs.iter().map(|g| dot(g, &centers[0]).abs()).collect();
    while centers.len() < k {
        let mut far = 0;
        for i in 1..dirs.len() {
            if closeness[i] < closeness[far] {
                far = i;
            }
        }
        let c = dirs[far].clone();
        for (cl, g) in closeness.iter_mut().zip(dirs) {
            *cl = cl.max(dot(g, &c).abs());
        }
        centers.push(c);
    }
    centers
}

/// Spherical k-means on lines through the origin.
fn sign_folded_kmeans(dirs: &[Vec<f64>], mut centers: Vec<Vec<f64>>) -> Clustering {
    let k = centers.len();
    let s = dirs[0].len();
    let mut assign = vec![usize::MAX; dirs.len()];
    for _ in 0..KMEANS_ITERS {
        let mut changed = false;
        for (a, g) in assign.iter_mut().zip(dirs) {
            let mut best = 0;
            let mut best_v = -1.0;
            for (c, center) in centers.iter().enumerate() {
                let v = dot(g, center).abs();
                if v > best_v {
                    best_v = v;
                    best = c;
                }
            }
            if *a != best {
                *a = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; s]; k];
        for (g, &a) in dirs.iter().zip(&assign) {
            let sign = if dot(g, &centers[a]) < 0.0 { -1.0 } else { 1.0 };
            for t in 0..s {
                sums[a][t] += sign * g[t];
            }
        }
        for (c, mut sum) in sums.into_iter().enumerate() {
            if normalize(&mut sum) > 0.0 {
                centers[c] = sum;
            }
        }
    }
    let objective = dirs
        .iter()
        .zip(&assign)
        .map(|(g, &a)| dot(g, &centers[a]).abs())
        .sum();
    Clustering {
        centers,
        assign,
        objective,
    }
}

/// Estimates `n` coefficient vectors `[-1, â, ĉ]` from the decoupling vector.
pub fn extract_subsystems(
    c_n: &[f64],
    spec: &VeroneseSpec,
    ds: &Dataset,
    n: usize,
    opts: &ExtractOptions,
) -> Result<Vec<Vec<f64>>> {
    if c_n.len() != spec.len() {
        return Err(Error::DimensionMismatch(format!(
            "decoupling vector has length {}, spec has {}",
            c_n.len(),
            spec.len()
        )));
    }
    if spec.dim() != ds.n_a() + ds.n_c() + 1 {
        return Err(Error::DimensionMismatch(
            "spec does not fit dataset orders".into(),
        ));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let len = ds.len();
    let pool = opts.pool.unwrap_or_else(|| default_pool(len, n)).min(len);
    if pool < n {
        return Err(Error::InvalidArgument(format!(
            "pool of {pool} points cannot hold {n} clusters"
        )));
    }
    if pool < 10 * n {
        log::warn!("extraction pool of {pool} points is small for {n} subsystems");
    }

    let mut scored: Vec<(f64, usize)> = (1..=len)
        .into_par_iter()
        .map_init(Vec::new, |r, k| {
            ds.regressor_into(k, false, r).expect("index within 1..=N");
            let (v, g) = polynomial_value_and_gradient(c_n, spec, r);
            let gn = dot(&g, &g).sqrt();
            let score = if gn > 0.0 && gn.is_finite() && v.is_finite() {
                v.abs() / gn
            } else {
                f64::INFINITY
            };
            (score, k)
        })
        .collect();
    let order = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if pool < scored.len() {
        scored.select_nth_unstable_by(pool, order);
        scored.truncate(pool);
    }
    scored.sort_unstable_by(order);

    let mut r = Vec::new();
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(pool);
    for &(score, k) in &scored {
        if !score.is_finite() {
            continue;
        }
        ds.regressor_into(k, false, &mut r)?;
        let mut g = polynomial_gradient(c_n, spec, &r);
        if normalize(&mut g) > 0.0 {
            canonical_sign(&mut g);
            dirs.push(g);
        }
    }
    if dirs.len() < n {
        return Err(Error::DegenerateClusters {
            found: dirs.len(),
            expected: n,
        });
    }

    let mut rng = stream_rng(opts.seed, 7);
    let mut best: Option<Clustering> = None;
    for restart in 0..opts.restarts.max(1) {
        let first = if restart == 0 {
            0
        } else {
            rng.random_range(0..dirs.len())
        };
        let c = sign_folded_kmeans(&dirs, farthest_point_seeds(&dirs, n, first));
        if best.as_ref().is_none_or(|b| c.objective > b.objective) {
            best = Some(c);
        }
    }
    let best = best.expect("at least one restart");

    let mut sizes = vec![0usize; n];
    best.assign.iter().for_each(|&a| sizes[a] += 1);
    let mut distinct = 0;
    for i in 0..n {
        if sizes[i] == 0 {
            continue;
        }
        if (0..i).all(|j| {
            sizes[j] == 0 || dot(&best.centers[i], &best.centers[j]).abs() < 1.0 - SAME_DIRECTION
        }) {
            distinct += 1;
        }
    }
    if distinct < n {
        return Err(Error::DegenerateClusters {
            found: distinct,
            expected: n,
        });
    }

    let s = spec.dim();
    let mut out = Vec::with_capacity(n);
    for c in 0..n {
        let mut mean = vec![0.0; s];
        for (g, _) in dirs.iter().zip(&best.assign).filter(|(_, &a)| a == c) {
            let sign = if dot(g, &best.centers[c]) < 0.0 {
                -1.0
            } else {
                1.0
            };
            for t in 0..s {
                mean[t] += sign * g[t];
            }
        }
        if mean[0].abs() < 1e-12 * dot(&mean, &mean).sqrt() {
            return Err(Error::DegenerateClusters {
                found: c,
                expected: n,
            });
        }
        let scale = -1.0 / mean[0];
        out.push(mean.iter().map(|v| v * scale).collect::<Vec<f64>>());
    }
    out.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    /// `permutation[i]` is the index of the estimate paired with truth `i`.
    pub permutation: Vec<usize>,
    /// Absolute per-coefficient errors, indexed like `truth`.
    pub errors: Vec<Vec<f64>>,
    pub total_error: f64,
}

impl Matching {
    pub fn max_error(&self) -> f64 {
        self.errors.iter().flatten().fold(0.0, |m, e| m.max(*e))
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(cur: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if cur.len() == used.len() {
            out.push(cur.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                cur.push(i);
                rec(cur, used, out);
                cur.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(n), &mut vec![false; n], &mut out);
    out
}

/// Minimum total absolute error assignment of estimates to true vectors,
/// found by exhaustive search (ties go to the lexicographically first permutation).
pub fn match_to_truth(estimated: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<Matching> {
    if estimated.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} estimates for {} true subsystems",
            estimated.len(),
            truth.len()
        )));
    }
    if estimated.len() > 9 {
        return Err(Error::InvalidArgument(
            "exhaustive matching supports at most 9 subsystems".into(),
        ));
    }
    if estimated
        .iter()
        .chain(truth)
        .any(|v| v.len() != truth[0].len())
    {
        return Err(Error::DimensionMismatch(
            "coefficient vectors differ in length".into(),
        ));
    }
    let cost = |i: usize, j: usize| -> f64 {
        truth[i]
            .iter()
            .zip(&estimated[j])
            .map(|(a, b)| (a - b).abs())
            .sum()
    };
    let mut best: Option<(f64, Vec<usize>)> = None;
    for perm in permutations(truth.len()) {
        let total: f64 = perm.iter().enumerate().map(|(i, &j)| cost(i, j)).sum();
        if best.as_ref().is_none_or(|(b, _)| total < *b) {
            best = Some((total, perm));
        }
    }
    let (total_error, permutation) = best.expect("at least one permutation");
    let errors = permutation
        .iter()
        .enumerate()
        .map(|(i, &j)| {
            truth[i]
                .iter()
                .zip(&estimated[j])
                .map(|(a, b)| (a - b).abs())
                .collect()
        })
        .collect();
    Ok(Matching {
        permutation,
        errors,
        total_error,
    })
}
