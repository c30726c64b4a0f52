//! Noise-level search: the corrected moment matrix is singular at the true
//! noise level, so σ is chosen where its smallest singular value vanishes.

use nalgebra::{DMatrix, SymmetricEigen, SVD};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{Dataset, NoiseSpec};
use crate::veronese::{AccumulateOptions, RawMoments, VeroneseSpec};

pub const DEFAULT_GRID: usize = 64;
pub const MIN_GRID: usize = 8;
/// Default threshold relative to the largest singular value at σ = 0.
pub const DEFAULT_RELATIVE_EPSILON: f64 = 1e-3;
/// Golden-section stops once the bracket is narrower than `sigma_max` times this.
pub const REFINE_WIDTH: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SigmaStatus {
    /// Smallest grid σ whose objective falls below ε (then refined).
    ThresholdHit,
    /// No grid point fell below ε; global grid minimizer (then refined).
    GlobalMin,
}

impl std::fmt::Display for SigmaStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::ThresholdHit => "threshold-hit",
            Self::GlobalMin => "global-min",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SigmaEstimate {
    pub sigma: f64,
    pub min_singular_value: f64,
    /// Unit right singular vector for `min_singular_value`.
    pub c_n: Vec<f64>,
    pub status: SigmaStatus,
    /// Threshold actually used.
    pub epsilon: f64,
    pub sigma_max: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct SigmaSearchOptions {
    /// Upper end of the search interval; sample standard deviation of `y` when `None`.
    pub sigma_max: Option<f64>,
    pub grid: usize,
    /// Absolute threshold; `1e-3 ×` largest singular value at σ = 0 when `None`.
    pub epsilon: Option<f64>,
    pub accumulate: AccumulateOptions,
}

impl Default for SigmaSearchOptions {
    fn default() -> Self {
        Self {
            sigma_max: None,
            grid: DEFAULT_GRID,
            epsilon: None,
            accumulate: AccumulateOptions::default(),
        }
    }
}

/// Smallest and largest singular values of `m`, with the unit right singular
/// vector of the smallest (sign fixed so its largest entry is positive).
pub fn singular_extremes(m: &DMatrix<f64>) -> (f64, Vec<f64>, f64) {
    let svd = SVD::new(m.clone(), false, true);
    let sv = &svd.singular_values;
    let (mut imin, mut imax) = (0, 0);
    for i in 1..sv.len() {
        if sv[i] < sv[imin] {
            imin = i;
        }
        if sv[i] > sv[imax] {
            imax = i;
        }
    }
    let vt = svd.v_t.expect("right singular vectors requested");
    let mut v: Vec<f64> = vt.row(imin).iter().copied().collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let pivot = v
        .iter()
        .copied()
        .fold(0.0_f64, |a, x| if x.abs() > a.abs() { x } else { a });
    let s = if pivot < 0.0 { -1.0 / norm } else { 1.0 / norm };
    v.iter_mut().for_each(|x| *x *= s);
    (sv[imin], v, sv[imax])
}

/// Objective evaluator over pre-accumulated raw moments; every σ reuses the
/// same data pass.
#[derive(Debug, Clone)]
pub struct SigmaObjective {
    raw: RawMoments,
}

impl SigmaObjective {
    pub fn new(raw: RawMoments) -> Self {
        Self { raw }
    }

    pub fn from_dataset(
        ds: &Dataset,
        spec: &VeroneseSpec,
        opts: AccumulateOptions,
    ) -> Result<Self> {
        Ok(Self::new(RawMoments::accumulate(ds, spec, opts)?))
    }

    pub fn raw(&self) -> &RawMoments {
        &self.raw
    }

    pub fn matrix(&self, sigma: f64) -> Result<DMatrix<f64>> {
        Ok(self.raw.corrected(&NoiseSpec::from_std(sigma)?).m)
    }

    /// `(smallest singular value, its right singular vector)` of `M̂_N(σ)`.
    pub fn eval(&self, sigma: f64) -> Result<(f64, Vec<f64>)> {
        let (s, v, _) = singular_extremes(&self.matrix(sigma)?);
        Ok((s, v))
    }

    fn value(&self, sigma: f64) -> f64 {
        self.eval(sigma).map(|(s, _)| s).unwrap_or(f64::INFINITY)
    }

    /// Number of negative eigenvalues of the symmetric matrix `M̂_N(σ)`.
    pub fn negative_eigenvalues(&self, sigma: f64) -> Result<usize> {
        let m = self.matrix(sigma)?;
        let sym = (&m + m.transpose()) * 0.5;
        Ok(SymmetricEigen::new(sym)
            .eigenvalues
            .iter()
            .filter(|l| **l < 0.0)
            .count())
    }
}

/// Smallest singular value of the corrected matrix at noise level `sigma`.
pub fn objective(ds: &Dataset, spec: &VeroneseSpec, sigma: f64) -> Result<(f64, Vec<f64>)> {
    SigmaObjective::from_dataset(ds, spec, AccumulateOptions::default())?.eval(sigma)
}

/// Golden-section minimization of `f` on `[a, b]` down to bracket width `tol`.
pub fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while b - a > tol {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

fn sample_std(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    if v.len() < 2 {
        return 0.0;
    }
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

enum Hit {
    Grid(usize),
    Crossing(f64),
}

/// Bisects on the count of negative eigenvalues until an endpoint of the
/// bracket has objective below `epsilon`.
fn locate_crossing(
    obj: &SigmaObjective,
    mut lo: f64,
    mut hi: f64,
    lo_count: usize,
    epsilon: f64,
) -> Option<f64> {
    const MAX_STEPS: usize = 200;
    for _ in 0..MAX_STEPS {
        for s in [lo, hi] {
            if obj.value(s) < epsilon {
                return Some(s);
            }
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        match obj.negative_eigenvalues(mid) {
            Ok(c) if c == lo_count => lo = mid,
            Ok(_) => hi = mid,
            Err(_) => return None,
        }
    }
    None
}

pub fn estimate_sigma(
    ds: &Dataset,
    spec: &VeroneseSpec,
    opts: &SigmaSearchOptions,
) -> Result<SigmaEstimate> {
    let obj = SigmaObjective::from_dataset(ds, spec, opts.accumulate)?;
    let sigma_max = opts.sigma_max.unwrap_or_else(|| sample_std(ds.y_values()));
    estimate_sigma_with(&obj, sigma_max, opts)
}

/// Grid scan of `[0, sigma_max]` followed by golden-section refinement.
///
/// The scan stops at the first grid point below ε, or at the first interval
/// over which an eigenvalue changes sign and the crossing can be located to
/// below ε. A grid point below ε starts a descent along the grid to the first
/// local grid minimum, whose neighbours bracket a golden-section refinement.
/// When neither occurs the global grid minimizer is refined the same way.
pub fn estimate_sigma_with(
    obj: &SigmaObjective,
    sigma_max: f64,
    opts: &SigmaSearchOptions,
) -> Result<SigmaEstimate> {
    if !(sigma_max > 0.0) || !sigma_max.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "sigma_max must be positive, got {sigma_max}"
        )));
    }
    if opts.grid < MIN_GRID {
        return Err(Error::InvalidArgument(format!(
            "grid needs at least {MIN_GRID} points"
        )));
    }
    let g = opts.grid;
    let step = sigma_max / (g - 1) as f64;
    let sigmas: Vec<f64> = (0..g).map(|i| i as f64 * step).collect();
    let values: Vec<f64> = sigmas.par_iter().map(|&s| obj.value(s)).collect();

    let epsilon = match opts.epsilon {
        Some(e) => e,
        None => {
            let (_, _, largest) = singular_extremes(&obj.matrix(0.0)?);
            DEFAULT_RELATIVE_EPSILON * largest
        }
    };

    let negatives: Vec<usize> = sigmas
        .par_iter()
        .map(|&s| obj.negative_eigenvalues(s).unwrap_or(usize::MAX))
        .collect();

    // An eigenvalue changing sign between grid points means the smallest
    // singular value reaches zero inside that interval.
    let mut hit = None;
    for i in 0..g {
        if values[i] < epsilon {
            hit = Some(Hit::Grid(i));
            break;
        }
        if i > 0 && negatives[i] != negatives[i - 1] {
            if let Some(s) =
                locate_crossing(obj, sigmas[i - 1], sigmas[i], negatives[i - 1], epsilon)
            {
                hit = Some(Hit::Crossing(s));
                break;
            }
        }
    }

    let (sigma, status) = match hit {
        Some(Hit::Crossing(s)) => (s, SigmaStatus::ThresholdHit),
        _ => {
            let (mut best, status) = match hit {
                Some(Hit::Grid(i)) => (i, SigmaStatus::ThresholdHit),
                _ => {
                    let mut j = 0;
                    for i in 1..g {
                        if values[i] < values[j] {
                            j = i;
                        }
                    }
                    (j, SigmaStatus::GlobalMin)
                }
            };
            while best + 1 < g && values[best + 1] < values[best] {
                best += 1;
            }
            if best == g - 1 {
                return Err(Error::SigmaNotBracketed { sigma_max });
            }
            let lo = sigmas[best.saturating_sub(1)];
            let hi = sigmas[best + 1];
            let (s_ref, v_ref) = golden_section(|s| obj.value(s), lo, hi, sigma_max * REFINE_WIDTH);
            (
                if values[best] <= v_ref {
                    sigmas[best]
                } else {
                    s_ref
                },
                status,
            )
        }
    };
    let (min_singular_value, c_n) = obj.eval(sigma)?;
    Ok(SigmaEstimate {
        sigma,
        min_singular_value,
        c_n,
        status,
        epsilon,
        sigma_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{SarModel, TransitionMatrix};
    use crate::simulate::{simulate, SimulationOptions};

    fn dataset(var: f64, len: usize, seed: u64) -> Dataset {
        let p = TransitionMatrix::from_rows(&[vec![0.1837, 0.8163], vec![0.3424, 0.6576]]).unwrap();
        simulate(
            &SarModel::two_mode_example(),
            &p,
            &NoiseSpec::normal(var).unwrap(),
            &SimulationOptions::new(len, seed),
        )
        .unwrap()
    }

    #[test]
    fn golden_section_finds_parabola_minimum() {
        let (x, fx) = golden_section(|x| (x - 0.37).powi(2) + 1.0, 0.0, 1.0, 1e-8);
        assert!((x - 0.37).abs() < 1e-7);
        assert!((fx - 1.0).abs() < 1e-12);
        let (x, _) = golden_section(|x| (x - 0.2).abs(), 0.0, 1.0, 1e-9);
        assert!((x - 0.2).abs() < 1e-8);
    }

    #[test]
    fn noiseless_objective() {
        let ds = dataset(0.0, 5000, 2);
        let spec = VeroneseSpec::for_model(2, 1, 1).unwrap();
        let obj = SigmaObjective::from_dataset(&ds, &spec, AccumulateOptions::default()).unwrap();
        let (_, _, largest) = singular_extremes(&obj.matrix(0.0).unwrap());
        let (v0, _) = obj.eval(0.0).unwrap();
        let (v3, _) = obj.eval(0.3).unwrap();
        assert!(v0 < 1e-8 * largest);
        assert!(v3 > v0);
        assert_eq!(obj.eval(0.13).unwrap(), obj.eval(0.13).unwrap());
    }

    #[test]
    fn noiseless_estimate_is_exactly_zero() {
        let ds = dataset(0.0, 5000, 3);
        let spec = VeroneseSpec::for_model(2, 1, 1).unwrap();
        let opts = SigmaSearchOptions {
            epsilon: Some(1e-6),
            ..Default::default()
        };
        let est = estimate_sigma(&ds, &spec, &opts).unwrap();
        assert_eq!(est.sigma, 0.0);
        assert_eq!(est.status, SigmaStatus::ThresholdHit);
        assert!(est.min_singular_value < 1e-6);
    }

    #[test]
    fn singular_vector_matches_value() {
        let ds = dataset(0.05, 20_000, 4);
        let spec = VeroneseSpec::for_model(2, 1, 1).unwrap();
        let est = estimate_sigma(&ds, &spec, &SigmaSearchOptions::default()).unwrap();
        let norm: f64 = est.c_n.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        let m = SigmaObjective::from_dataset(&ds, &spec, AccumulateOptions::default())
            .unwrap()
            .matrix(est.sigma)
            .unwrap();
        let mc = &m * nalgebra::DVector::from_vec(est.c_n.clone());
        let scale = m.norm();
        assert!((mc.norm() - est.min_singular_value).abs() <= 1e-10 * scale);
        if est.status == SigmaStatus::ThresholdHit {
            assert!(est.min_singular_value < est.epsilon);
        }
    }

    #[test]
    fn rejects_coarse_grid() {
        let ds = dataset(0.0, 500, 5);
        let spec = VeroneseSpec::for_model(2, 1, 1).unwrap();
        let opts = SigmaSearchOptions {
            grid: 4,
            ..Default::default()
        };
        assert!(matches!(
            estimate_sigma(&ds, &spec, &opts),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn reports_unbracketed_minimum() {
        // true sigma far above sigma_max: objective keeps falling to the end
        let ds = dataset(0.25, 20_000, 6);
        let spec = VeroneseSpec::for_model(2, 1, 1).unwrap();
        let opts = SigmaSearchOptions {
            sigma_max: Some(0.1),
            epsilon: Some(0.0),
            ..Default::default()
        };
        assert!(matches!(
            estimate_sigma(&ds, &spec, &opts),
            Err(Error::SigmaNotBracketed { .. })
        ));
    }
}
