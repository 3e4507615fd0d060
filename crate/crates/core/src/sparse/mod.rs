//! L1-constrained sparse coding and dictionary learning.

pub mod homotopy;
mod learn;

pub use homotopy::Termination;
pub use learn::{learn_dictionary, LearnConfig, LearnedDictionary};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A `dim x atoms` matrix whose columns have norm at most 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    matrix: DMatrix<f64>,
}

impl Dictionary {
    /// Wrap a matrix, checking finiteness and the column-norm cap.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("dictionary has non-finite entries".into()));
        }
        for (j, col) in matrix.column_iter().enumerate() {
            let n = col.norm();
            if n > 1.0 + 1e-9 {
                return Err(Error::Numerical(format!("atom {j} has norm {n} > 1")));
            }
        }
        Ok(Self { matrix })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn atoms(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    /// `D a` for a dense coefficient vector.
    pub fn reconstruct(&self, coefficients: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        for (j, &a) in coefficients.iter().enumerate() {
            if a != 0.0 {
                out.axpy(a, &self.matrix.column(j), 1.0);
            }
        }
        out
    }

    /// `||D a - y||^2`.
    pub fn objective(&self, coefficients: &[f64], signal: &[f64]) -> f64 {
        let recon = self.reconstruct(coefficients);
        recon
            .iter()
            .zip(signal)
            .map(|(r, y)| (r - y) * (r - y))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseCode {
    pub coefficients: Vec<f64>,
    pub l1_norm: f64,
    /// `||D a - y||^2`.
    pub objective: f64,
    pub termination: Termination,
}

/// Reusable coder holding the dictionary's Gram matrix.
pub struct SparseCoder<'a> {
    dict: &'a Dictionary,
    gram: DMatrix<f64>,
}

impl<'a> SparseCoder<'a> {
    pub fn new(dict: &'a Dictionary) -> Self {
        let gram = dict.matrix.tr_mul(&dict.matrix);
        Self { dict, gram }
    }

    pub fn dictionary(&self) -> &Dictionary {
        self.dict
    }

    pub fn code(&self, signal: &[f64], lambda: f64, tol: f64) -> Result<SparseCode> {
        if signal.len() != self.dict.dim() {
            return Err(Error::Dimension(format!(
                "signal has {} values, dictionary dimension is {}",
                signal.len(),
                self.dict.dim()
            )));
        }
        if signal.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("signal has non-finite values".into()));
        }
        let y = DVector::from_column_slice(signal);
        let corr = self.dict.matrix.tr_mul(&y);
        self.code_with_correlations(signal, corr.as_slice(), lambda, tol)
    }

    /// As [`SparseCoder::code`] with `D^T y` already computed.
    pub fn code_with_correlations(
        &self,
        signal: &[f64],
        corr: &[f64],
        lambda: f64,
        tol: f64,
    ) -> Result<SparseCode> {
        let (coefficients, termination) = homotopy::solve(&self.gram, corr, lambda, tol)?;
        let l1_norm = coefficients.iter().map(|v| v.abs()).sum();
        let objective = self.dict.objective(&coefficients, signal);
        Ok(SparseCode {
            coefficients,
            l1_norm,
            objective,
            termination,
        })
    }
}

/// Solve `min ||D a - y||^2` subject to `||a||_1 <= lambda`.
pub fn sparse_code(dict: &Dictionary, signal: &[f64], lambda: f64, tol: f64) -> Result<SparseCode> {
    SparseCoder::new(dict).code(signal, lambda, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_dict(dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Dictionary {
        let mut m = DMatrix::from_fn(dim, k, |_, _| StandardNormal.sample(rng));
        for mut c in m.column_iter_mut() {
            let n = c.norm();
            c /= n;
        }
        Dictionary::new(m).unwrap()
    }

    /// Exhaustive optimum over all sign/support patterns.
    pub(crate) fn kkt_oracle(dict: &Dictionary, y: &[f64], lambda: f64) -> f64 {
        let k = dict.atoms();
        let d = dict.matrix();
        let yv = DVector::from_column_slice(y);
        let mut best = yv.norm_squared();
        for code in 0..3usize.pow(k as u32) {
            let mut c = code;
            let mut support = vec![];
            let mut signs = vec![];
            for j in 0..k {
                match c % 3 {
                    1 => {
                        support.push(j);
                        signs.push(1.0);
                    }
                    2 => {
                        support.push(j);
                        signs.push(-1.0);
                    }
                    _ => {}
                }
                c /= 3;
            }
            if support.is_empty() {
                continue;
            }
            let sub = DMatrix::from_fn(d.nrows(), support.len(), |i, a| d[(i, support[a])]);
            let g = sub.tr_mul(&sub);
            let Some(chol) = g.clone().cholesky() else {
                continue;
            };
            let cvec = sub.tr_mul(&yv);
            let s = DVector::from_vec(signs.clone());
            let ginv_c = chol.solve(&cvec);
            let ginv_s = chol.solve(&s);
            let mu = (s.dot(&ginv_c) - lambda) / s.dot(&ginv_s);
            let mut candidates = vec![ginv_c.clone()];
            if mu.is_finite() {
                candidates.push(&ginv_c - &ginv_s * mu);
            }
            for a in candidates {
                let consistent = a.iter().zip(&signs).all(|(v, s)| v * s > 0.0);
                let l1: f64 = a.iter().map(|v| v.abs()).sum();
                if consistent && l1 <= lambda + 1e-9 {
                    let obj = (&sub * &a - &yv).norm_squared();
                    best = best.min(obj);
                }
            }
        }
        best
    }

    #[test]
    fn zero_signal_gives_zero_code() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let dict = random_dict(8, 5, &mut rng);
        let code = sparse_code(&dict, &[0.0; 8], 0.5, 1e-10).unwrap();
        assert!(code.coefficients.iter().all(|&v| v == 0.0));
        assert_eq!(code.objective, 0.0);
    }

    #[test]
    fn exact_atom_is_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dict = random_dict(8, 5, &mut rng);
        let y: Vec<f64> = dict.matrix().column(3).iter().copied().collect();
        let code = sparse_code(&dict, &y, 1.0, 1e-12).unwrap();
        for (j, &v) in code.coefficients.iter().enumerate() {
            let expect = if j == 3 { 1.0 } else { 0.0 };
            assert!((v - expect).abs() < 1e-9, "{:?}", code.coefficients);
        }
        assert!(code.objective < 1e-18);
    }

    #[test]
    fn matches_exhaustive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for trial in 0..25 {
            let k = 2 + trial % 5;
            let dict = random_dict(8, k, &mut rng);
            let y: Vec<f64> = (0..8).map(|_| StandardNormal.sample(&mut rng)).collect();
            let lambda = [0.2, 0.5, 1.0, 3.0, 50.0][trial % 5];
            let code = sparse_code(&dict, &y, lambda, 1e-12).unwrap();
            let oracle = kkt_oracle(&dict, &y, lambda);
            assert!(code.l1_norm <= lambda + 1e-7);
            assert!(
                (code.objective - oracle).abs() <= 1e-4,
                "trial {trial}: {} vs {oracle} ({:?}, {:?})",
                code.objective,
                code.termination,
                code.coefficients
            );
        }
    }

    #[test]
    fn kkt_conditions_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dict = random_dict(30, 60, &mut rng);
        let y: Vec<f64> = (0..30).map(|_| StandardNormal.sample(&mut rng)).collect();
        let lambda = 2.0;
        let code = sparse_code(&dict, &y, lambda, 1e-12).unwrap();
        assert_eq!(code.termination, Termination::Tight);
        assert!((code.l1_norm - lambda).abs() < 1e-7);
        // Gradient of 1/2||Da - y||^2 is D^T(Da - y) = -r; on the support,
        // r_j = mu * sign(a_j) with a common mu >= |r_i| elsewhere.
        let resid = DVector::from_column_slice(&y) - dict.reconstruct(&code.coefficients);
        let r = dict.matrix().tr_mul(&resid);
        let active: Vec<usize> = (0..60).filter(|&j| code.coefficients[j] != 0.0).collect();
        let mu = r[active[0]] * code.coefficients[active[0]].signum();
        assert!(mu > 0.0);
        for &j in &active {
            assert!((r[j] * code.coefficients[j].signum() - mu).abs() < 1e-8);
        }
        for j in 0..60 {
            assert!(r[j].abs() <= mu + 1e-8);
        }
    }

    #[test]
    fn rejects_bad_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dict = random_dict(4, 3, &mut rng);
        assert!(matches!(
            sparse_code(&dict, &[1.0; 3], 1.0, 0.0),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            sparse_code(&dict, &[f64::NAN, 0.0, 0.0, 0.0], 1.0, 0.0),
            Err(Error::Numerical(_))
        ));
    }

    proptest::proptest! {
        #![proptest_config(proptest::test_runner::Config::with_cases(64))]
        #[test]
        fn feasible_and_optimal(seed in 0u64..10_000, k in 1usize..=6, lambda in 0.05f64..4.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dict = random_dict(8, k, &mut rng);
            let y: Vec<f64> = (0..8).map(|_| StandardNormal.sample(&mut rng)).collect();
            let code = sparse_code(&dict, &y, lambda, 1e-12).unwrap();
            proptest::prop_assert!(code.l1_norm <= lambda + 1e-7);
            proptest::prop_assert!(code.objective >= 0.0);
            let oracle = kkt_oracle(&dict, &y, lambda);
            proptest::prop_assert!((code.objective - oracle).abs() <= 1e-4);
        }
    }
}
