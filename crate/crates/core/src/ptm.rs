//! Transition matrix estimation from decoded transition counts.

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::decode::TransitionCounts;
use crate::error::{Error, Result};
use crate::model::TransitionMatrix;
use crate::simulate::stream_rng;

const PERTURB_STREAM: u64 = 11;
const MIN_STEP: f64 = 1e-3;
const MAX_STEP: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct PtmEstimate {
    pub ptm: TransitionMatrix,
    /// Rows with no observed transitions, set to uniform.
    pub unvisited: Vec<usize>,
}

/// `P_ij = (n_ij + s) / Σ_j (n_ij + s)`.
pub fn estimate_ptm(counts: &TransitionCounts, smoothing: f64) -> Result<PtmEstimate> {
    if !(smoothing >= 0.0) || !smoothing.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "smoothing must be finite and >= 0, got {smoothing}"
        )));
    }
    let n = counts.n();
    if n == 0 || counts.n_ij.iter().any(|r| r.len() != n) {
        return Err(Error::DimensionMismatch(
            "transition counts must be a non-empty square matrix".into(),
        ));
    }
    let mut unvisited = Vec::new();
    let rows = counts
        .n_ij
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let total: f64 = row.iter().map(|&c| c as f64 + smoothing).sum();
            if total == 0.0 {
                unvisited.push(i);
                return vec![1.0 / n as f64; n];
            }
            let mut p: Vec<f64> = row
                .iter()
                .map(|&c| (c as f64 + smoothing) / total)
                .collect();
            // push rounding residue onto the largest entry so the row sums to one
            let drift = 1.0 - p.iter().sum::<f64>();
            let j = (0..n).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap_or(0);
            p[j] += drift;
            p
        })
        .collect::<Vec<_>>();
    Ok(PtmEstimate {
        ptm: TransitionMatrix::from_rows(&rows)?,
        unvisited,
    })
}

/// `‖P̂ − P‖_F / ‖P‖_F`.
pub fn normalized_frobenius(estimate: &TransitionMatrix, truth: &TransitionMatrix) -> Result<f64> {
    if estimate.n() != truth.n() {
        return Err(Error::DimensionMismatch(format!(
            "estimate is {0}x{0} but truth is {1}x{1}",
            estimate.n(),
            truth.n()
        )));
    }
    Ok((estimate.matrix() - truth.matrix()).norm() / truth.matrix().norm())
}

/// `Σ n_ij ln P_ij` with `0 ln 0 = 0`.
pub fn log_likelihood(counts: &TransitionCounts, ptm: &TransitionMatrix) -> Result<f64> {
    check_dims(counts, ptm)?;
    let mut ll = 0.0;
    for (i, row) in counts.n_ij.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0 {
                ll += c as f64 * ptm.get(i, j).ln();
            }
        }
    }
    Ok(ll)
}

fn check_dims(counts: &TransitionCounts, ptm: &TransitionMatrix) -> Result<()> {
    if counts.n() != ptm.n() || counts.n_ij.iter().any(|r| r.len() != ptm.n()) {
        return Err(Error::DimensionMismatch(
            "counts and transition matrix differ in size".into(),
        ));
    }
    Ok(())
}

/// Checks that no random feasible perturbation of `candidate` has a larger
/// count log-likelihood. Each trial moves every row toward a random point of
/// the simplex, `P' = P + ε (q − P)` with `ε ∈ [1e-3, 0.2]`.
pub fn verify_mle_optimality(
    counts: &TransitionCounts,
    candidate: &TransitionMatrix,
    trials: usize,
    seed: u64,
) -> Result<bool> {
    check_dims(counts, candidate)?;
    let n = candidate.n();
    let p = candidate.rows();
    if !log_likelihood(counts, candidate)?.is_finite() {
        // an observed transition has zero probability; any interior point beats it
        return Ok(trials == 0);
    }
    let mut rng = stream_rng(seed, PERTURB_STREAM);
    let mut q = vec![0.0; n];
    for _ in 0..trials {
        let eps = rng.random_range(MIN_STEP..=MAX_STEP);
        let mut delta = 0.0;
        for (i, row) in p.iter().enumerate() {
            let mut s = 0.0;
            for v in q.iter_mut() {
                *v = Exp1.sample(&mut rng);
                s += *v;
            }
            for (j, &pij) in row.iter().enumerate() {
                let c = counts.n_ij[i][j];
                if c == 0 {
                    continue;
                }
                let step = eps * (q[j] / s - pij);
                delta += c as f64 * (step / pij).ln_1p();
            }
        }
        if delta > 0.0 {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(rows: &[&[u64]]) -> TransitionCounts {
        TransitionCounts {
            n_ij: rows.iter().map(|r| r.to_vec()).collect(),
        }
    }

    fn ptm(rows: &[&[f64]]) -> TransitionMatrix {
        TransitionMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn ratio_estimates() {
        let e = estimate_ptm(&counts(&[&[2, 8], &[3, 7]]), 0.0).unwrap();
        let want = ptm(&[&[0.2, 0.8], &[0.3, 0.7]]);
        assert!((e.ptm.matrix() - want.matrix()).norm() < 1e-15);
        assert!(e.unvisited.is_empty());

        let e = estimate_ptm(&counts(&[&[5, 5], &[5, 5]]), 0.0).unwrap();
        assert_eq!(e.ptm, TransitionMatrix::uniform(2));

        let e = estimate_ptm(&counts(&[&[0, 0], &[1, 0]]), 0.0).unwrap();
        assert_eq!(e.unvisited, vec![0]);
        assert_eq!(e.ptm.rows(), vec![vec![0.5, 0.5], vec![1.0, 0.0]]);

        let e = estimate_ptm(&counts(&[&[0, 0], &[1, 0]]), 1.0).unwrap();
        assert!(e.unvisited.is_empty());
        assert!((e.ptm.get(1, 0) - 2.0 / 3.0).abs() < 1e-15);

        assert!(estimate_ptm(&counts(&[&[1, 2]]), 0.0).is_err());
        assert!(estimate_ptm(&counts(&[&[1]]), -1.0).is_err());
    }

    #[test]
    fn frobenius_table_values() {
        assert_eq!(
            normalized_frobenius(&TransitionMatrix::uniform(3), &TransitionMatrix::uniform(3))
                .unwrap(),
            0.0
        );
        let est = ptm(&[&[0.2116, 0.7884], &[0.3472, 0.6528]]);
        let truth = ptm(&[&[0.1837, 0.8163], &[0.3424, 0.6576]]);
        assert!((normalized_frobenius(&est, &truth).unwrap() - 0.035810).abs() < 1e-5);
        let est = ptm(&[&[0.3897, 0.6103], &[0.1776, 0.8224]]);
        let truth = ptm(&[&[0.4286, 0.5714], &[0.1412, 0.8588]]);
        assert!((normalized_frobenius(&est, &truth).unwrap() - 0.066922).abs() < 1e-5);
        assert!(
            normalized_frobenius(&TransitionMatrix::uniform(2), &TransitionMatrix::uniform(3))
                .is_err()
        );
    }

    #[test]
    fn optimality_oracle() {
        let c = counts(&[&[2, 8], &[3, 7]]);
        assert!(verify_mle_optimality(&c, &ptm(&[&[0.2, 0.8], &[0.3, 0.7]]), 10_000, 1).unwrap());
        assert!(
            !verify_mle_optimality(&c, &ptm(&[&[0.25, 0.75], &[0.3, 0.7]]), 10_000, 1).unwrap()
        );
        assert!(verify_mle_optimality(&counts(&[&[17]]), &ptm(&[&[1.0]]), 100, 1).unwrap());
        assert!(!verify_mle_optimality(&c, &ptm(&[&[0.0, 1.0], &[0.3, 0.7]]), 10, 1).unwrap());
    }

    #[test]
    fn zero_counts_allow_zero_probability() {
        let c = counts(&[&[0, 4], &[3, 3]]);
        let e = estimate_ptm(&c, 0.0).unwrap();
        assert_eq!(e.ptm.get(0, 0), 0.0);
        assert!(verify_mle_optimality(&c, &e.ptm, 2000, 3).unwrap());
        assert!((log_likelihood(&c, &e.ptm).unwrap() - 6.0 * 0.5f64.ln()).abs() < 1e-12);
    }
}
