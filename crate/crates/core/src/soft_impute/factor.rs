use nalgebra::DMatrix;

use super::{FitResult, SvdTriple};

/// Balanced rank factorization `L = A B^T` of a fitted matrix.
#[derive(Clone, Debug)]
pub struct FactorPair {
    /// `N x R`
    pub a: DMatrix<f64>,
    /// `T x R`
    pub b: DMatrix<f64>,
}

impl FactorPair {
    pub fn rank(&self) -> usize {
        self.a.ncols()
    }

    pub fn product(&self) -> DMatrix<f64> {
        &self.a * self.b.transpose()
    }
}

/// `A = S sqrt(Sigma)`, `B = R sqrt(Sigma)` from the SVD of the estimate,
/// truncated at its effective rank. Then `||A||_F^2 = ||B||_F^2 = ||L||_*`.
pub fn factorize(fit: &FitResult) -> FactorPair {
    let svd = SvdTriple::of(&fit.estimate).truncate(fit.effective_rank);
    let mut a = svd.left;
    let mut b = svd.right;
    for (k, s) in svd.singular_values.iter().enumerate() {
        let root = s.sqrt();
        a.column_mut(k).scale_mut(root);
        b.column_mut(k).scale_mut(root);
    }
    FactorPair { a, b }
}
