//! Homotopy (LARS-Lasso) solver for `min ||D a - y||^2 s.t. ||a||_1 <= lambda`.
//!
//! The penalized problem `min 1/2 ||D a - y||^2 + t ||a||_1` has a piecewise
//! linear solution path in `t`. Starting from `t = max |D^T y|` (where `a = 0`)
//! the path is followed downwards; along it `||a(t)||_1` is non-increasing in
//! `t`, so the constrained solution is the path point where the L1 norm first
//! reaches `lambda`, found by interpolating within the last linear segment. If
//! the path reaches `t = 0` first, the constraint is inactive and the result
//! is the least-squares solution on the final active set.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// How the path ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// The signal has (numerically) zero correlation with every atom.
    Zero,
    /// `||a||_1 = lambda` with a positive multiplier.
    Tight,
    /// The penalty reached zero before the L1 budget was used up.
    Unconstrained,
    /// The active Gram block became singular; the last path point is kept.
    Degenerate,
}

enum Event {
    PenaltyZero,
    BudgetReached,
    Drop(usize),
    Join(usize, f64),
}

/// Solve the constrained problem from the Gram matrix `G = D^T D` and the
/// correlations `c = D^T y`. `tol` is the penalty level treated as zero.
pub fn solve(
    gram: &DMatrix<f64>,
    corr: &[f64],
    lambda: f64,
    tol: f64,
) -> Result<(Vec<f64>, Termination)> {
    let k = corr.len();
    if gram.shape() != (k, k) {
        return Err(Error::Dimension(format!(
            "Gram matrix {:?} does not match {k} correlations",
            gram.shape()
        )));
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::Config(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    if corr.iter().any(|v| !v.is_finite()) || gram.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite input to sparse coding".into()));
    }

    let mut alpha = vec![0.0; k];
    let (first, t0) =
        corr.iter()
            .enumerate()
            .map(|(j, v)| (j, v.abs()))
            .fold(
                (0, 0.0),
                |best, cur| if cur.1 > best.1 { cur } else { best },
            );
    if k == 0 || t0 <= tol {
        return Ok((alpha, Termination::Zero));
    }
    let mut active: Vec<usize> = vec![first];
    let mut signs: Vec<f64> = vec![corr[first].signum()];
    let mut is_active = vec![false; k];
    is_active[first] = true;
    let mut t = t0;
    // A just-dropped atom sits exactly on the boundary with its old sign;
    // it may not rejoin with that sign in the very next segment.
    let mut excluded: Option<(usize, f64)> = None;

    for _ in 0..(20 * k + 100) {
        let n = active.len();
        let gaa = DMatrix::from_fn(n, n, |a, b| gram[(active[a], active[b])]);
        let Some(chol) = gaa.cholesky() else {
            return Ok((alpha, Termination::Degenerate));
        };
        let d = chol.solve(&DVector::from_column_slice(&signs));

        // Residual correlations, recomputed from scratch for stability.
        let mut r = corr.to_vec();
        for &j in &active {
            let aj = alpha[j];
            if aj != 0.0 {
                for (i, ri) in r.iter_mut().enumerate() {
                    *ri -= gram[(i, j)] * aj;
                }
            }
        }
        // Change in correlations per unit step: a = G[:, A] d.
        let mut a = vec![0.0; k];
        for (idx, &j) in active.iter().enumerate() {
            for (i, ai) in a.iter_mut().enumerate() {
                *ai += gram[(i, j)] * d[idx];
            }
        }

        let l1: f64 = alpha.iter().map(|v| v.abs()).sum();
        let sd: f64 = signs.iter().zip(d.iter()).map(|(s, v)| s * v).sum();

        let mut gamma = t;
        let mut event = Event::PenaltyZero;
        if sd > 0.0 {
            let g = (lambda - l1) / sd;
            if g <= gamma {
                gamma = g.max(0.0);
                event = Event::BudgetReached;
            }
        }
        for (idx, &j) in active.iter().enumerate() {
            if d[idx] != 0.0 {
                let g = -alpha[j] / d[idx];
                if g > 0.0 && g < gamma {
                    gamma = g;
                    event = Event::Drop(idx);
                }
            }
        }
        for j in 0..k {
            if is_active[j] {
                continue;
            }
            for sign in [1.0, -1.0] {
                if excluded == Some((j, sign)) {
                    continue;
                }
                let denom = 1.0 - sign * a[j];
                if denom > 1e-12 {
                    let g = (t - sign * r[j]) / denom;
                    if g > 0.0 && g < gamma {
                        gamma = g;
                        event = Event::Join(j, sign);
                    }
                }
            }
        }

        for (idx, &j) in active.iter().enumerate() {
            alpha[j] += gamma * d[idx];
        }
        t -= gamma;
        excluded = None;
        match event {
            Event::PenaltyZero => return Ok((alpha, Termination::Unconstrained)),
            Event::BudgetReached => {
                let l1: f64 = alpha.iter().map(|v| v.abs()).sum();
                if l1 > lambda {
                    let f = lambda / l1;
                    alpha.iter_mut().for_each(|v| *v *= f);
                }
                return Ok((alpha, Termination::Tight));
            }
            Event::Drop(idx) => {
                let j = active.remove(idx);
                let sign = signs.remove(idx);
                alpha[j] = 0.0;
                is_active[j] = false;
                excluded = Some((j, sign));
            }
            Event::Join(j, sign) => {
                active.push(j);
                signs.push(sign);
                is_active[j] = true;
            }
        }
        if t <= tol {
            return Ok((alpha, Termination::Unconstrained));
        }
    }
    log::warn!("sparse coding path did not terminate; returning the last path point");
    Ok((alpha, Termination::Degenerate))
}
