//! Alternating minimization for `min sum_i ||y_i - D a_i||^2` subject to
//! `||a_i||_1 <= lambda` and `||d_j|| <= 1`.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{homotopy, Dictionary};
use crate::error::{Error, Result};

/// Penalty level treated as zero by the coding step.
const CODE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearnConfig {
    pub atoms: usize,
    pub lambda: f64,
    pub epochs: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct LearnedDictionary {
    pub dictionary: Dictionary,
    /// Mean per-sample objective after each epoch; non-increasing.
    pub history: Vec<f64>,
}

type SparseVec = Vec<(usize, f64)>;

fn residual_energy(d: &DMatrix<f64>, code: &SparseVec, y: &[f64]) -> f64 {
    let mut r = y.to_vec();
    for &(j, a) in code {
        for (ri, dij) in r.iter_mut().zip(d.column(j).iter()) {
            *ri -= a * dij;
        }
    }
    r.iter().map(|v| v * v).sum()
}

fn initial_dictionary(samples: &DMatrix<f64>, atoms: usize, seed: u64) -> DMatrix<f64> {
    let (dim, n) = samples.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d = DMatrix::zeros(dim, atoms);
    let mut filled = 0;
    for i in sample(&mut rng, n, n).into_iter() {
        if filled == atoms {
            break;
        }
        let col = samples.column(i);
        let norm = col.norm();
        if norm > 0.0 {
            d.set_column(filled, &(col / norm));
            filled += 1;
        }
    }
    if filled < atoms {
        log::warn!(
            "only {filled} usable samples for {atoms} atoms; filling the rest with random noise"
        );
        for j in filled..atoms {
            let v: DVector<f64> = DVector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));
            let norm = v.norm();
            d.set_column(j, &(v / norm));
        }
    }
    d
}

/// Learn `config.atoms` unit-norm atoms from the columns of `samples`.
///
/// Each epoch codes every sample against the current dictionary (keeping
/// the previous code when it is better under the current dictionary), then
/// runs one pass of block coordinate descent over the atoms, each updated by
/// least squares on its residual and projected onto the unit ball. The
/// update is accepted only if it does not increase the objective, so the
/// recorded history is non-increasing exactly.
pub fn learn_dictionary(samples: &DMatrix<f64>, config: &LearnConfig) -> Result<LearnedDictionary> {
    let (dim, n) = samples.shape();
    if n == 0 || dim == 0 {
        return Err(Error::EmptyCorpus("no training samples".into()));
    }
    if config.atoms == 0 {
        return Err(Error::Config("dictionary needs at least one atom".into()));
    }
    if !(config.lambda > 0.0) {
        return Err(Error::Config(format!(
            "lambda must be positive, got {}",
            config.lambda
        )));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(
            "training samples have non-finite values".into(),
        ));
    }
    let k = config.atoms;
    let mut d = initial_dictionary(samples, k, config.seed);
    let columns: Vec<Vec<f64>> = samples
        .column_iter()
        .map(|c| c.iter().copied().collect())
        .collect();

    let mut codes: Vec<Option<SparseVec>> = vec![None; n];
    // Per-sample objective of `codes` under the current `d`.
    let mut energies: Vec<f64> = vec![f64::INFINITY; n];
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        // Coding step.
        let gram = d.tr_mul(&d);
        let corr = d.tr_mul(samples);
        let coded: Vec<Result<(SparseVec, f64)>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let (alpha, _) =
                    homotopy::solve(&gram, corr.column(i).as_slice(), config.lambda, CODE_TOL)?;
                let code: SparseVec = alpha
                    .into_iter()
                    .enumerate()
                    .filter(|(_, a)| *a != 0.0)
                    .collect();
                let e = residual_energy(&d, &code, &columns[i]);
                Ok((code, e))
            })
            .collect();
        let mut coding_total = 0.0;
        for (i, result) in coded.into_iter().enumerate() {
            let (code, e) = result?;
            if codes[i].is_none() || e <= energies[i] {
                codes[i] = Some(code);
                energies[i] = e;
            }
            coding_total += energies[i];
        }

        // Dictionary step: sufficient statistics A = sum a a^T, B = sum y a^T.
        let mut a_stat = DMatrix::<f64>::zeros(k, k);
        let mut b_stat = DMatrix::<f64>::zeros(dim, k);
        for (i, code) in codes.iter().enumerate() {
            let code = code.as_ref().expect("every sample is coded");
            for &(j, aj) in code {
                for &(l, al) in code {
                    a_stat[(j, l)] += aj * al;
                }
                let mut col = b_stat.column_mut(j);
                for (b, y) in col.iter_mut().zip(&columns[i]) {
                    *b += aj * y;
                }
            }
        }
        let mut candidate = d.clone();
        for j in 0..k {
            let ajj = a_stat[(j, j)];
            if ajj <= 1e-12 {
                continue;
            }
            let da = &candidate * a_stat.column(j);
            let mut u: DVector<f64> = candidate.column(j) + (b_stat.column(j) - da) / ajj;
            let norm = u.norm();
            if norm > 1.0 {
                u /= norm;
            }
            candidate.set_column(j, &u);
        }
        let new_energies: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| residual_energy(&candidate, codes[i].as_ref().unwrap(), &columns[i]))
            .collect();
        let updated_total: f64 = new_energies.iter().sum();
        let total = if updated_total <= coding_total {
            d = candidate;
            energies = new_energies;
            updated_total
        } else {
            log::debug!("epoch {epoch}: dictionary update rejected");
            coding_total
        };
        history.push(total / n as f64);
        log::info!(
            "dictionary epoch {}/{}: objective {:.6}",
            epoch + 1,
            config.epochs,
            total / n as f64
        );
    }

    Ok(LearnedDictionary {
        dictionary: Dictionary::new(d)?,
        history,
    })
}
