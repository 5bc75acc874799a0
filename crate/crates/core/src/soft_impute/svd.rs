use nalgebra::DMatrix;

use crate::panel::{numerical_rank, to_faer, PanelMatrix};

/// Thin singular value decomposition `A = S diag(sigma) R^T` with the
/// singular values sorted in descending order.
#[derive(Clone, Debug)]
pub struct SvdTriple {
    /// `N x k`, orthonormal columns.
    pub left: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    /// `T x k`, orthonormal columns.
    pub right: DMatrix<f64>,
}

impl SvdTriple {
    /// Computed with faer's divide-and-conquer SVD, sequentially, so the
    /// result does not depend on the thread pool.
    pub fn compute(a: &DMatrix<f64>) -> Self {
        let svd = to_faer(a).thin_svd().expect("SVD of a finite matrix converges");
        let (u, v, s) = (svd.U(), svd.V(), svd.S().column_vector());
        let k = s.nrows();
        SvdTriple {
            left: DMatrix::from_fn(u.nrows(), k, |r, c| u[(r, c)]),
            singular_values: (0..k).map(|c| s[c]).collect(),
            right: DMatrix::from_fn(v.nrows(), k, |r, c| v[(r, c)]),
        }
    }

    pub fn of(a: &PanelMatrix) -> Self {
        Self::compute(a.as_matrix())
    }

    /// Number of singular values above the relative rank tolerance.
    pub fn rank(&self) -> usize {
        numerical_rank(&self.singular_values)
    }

    /// `S diag(values) R^T`, skipping zero weights.
    pub fn reconstruct_with(&self, values: &[f64]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.left.nrows(), self.right.nrows());
        for (k, &s) in values.iter().enumerate() {
            if s != 0.0 {
                let u = self.left.column(k);
                let v = self.right.column(k);
                out.ger(s, &u, &v, 1.0);
            }
        }
        out
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.reconstruct_with(&self.singular_values)
    }

    pub fn truncate(&self, rank: usize) -> SvdTriple {
        let k = rank.min(self.singular_values.len());
        SvdTriple {
            left: self.left.columns(0, k).into_owned(),
            singular_values: self.singular_values[..k].to_vec(),
            right: self.right.columns(0, k).into_owned(),
        }
    }
}

/// Result of a singular value shrinkage: the matrix and its (shrunk) spectrum.
pub(crate) struct Shrunk {
    pub matrix: DMatrix<f64>,
    pub singular_values: Vec<f64>,
}

/// `shrink_threshold(A) = A V diag(1 - threshold / sigma)_+ V^T`, with `V`
/// and `sigma^2` from the eigendecomposition of the smaller Gram matrix
/// (`A A^T` on the left when `A` is wide). This needs no left singular
/// vectors and is about 2.5x cheaper than a full SVD. Components at or below
/// the threshold are dropped exactly; a zero threshold returns `A` itself.
pub(crate) fn shrink_matrix(a: &DMatrix<f64>, threshold: f64) -> Shrunk {
    let m = to_faer(a);
    let tall = a.nrows() >= a.ncols();
    let gram = if tall { m.transpose() * &m } else { &m * m.transpose() };
    let eig = gram
        .self_adjoint_eigen(faer::Side::Lower)
        .expect("eigendecomposition of a finite symmetric matrix converges");
    let (values, vectors) = (eig.S().column_vector(), eig.U());
    let d = values.nrows();
    // ascending eigenvalues -> descending singular values
    let sigma: Vec<f64> = (0..d).rev().map(|k| values[k].max(0.0).sqrt()).collect();
    let singular_values: Vec<f64> = sigma.iter().map(|&s| (s - threshold).max(0.0)).collect();
    if threshold == 0.0 {
        return Shrunk {
            matrix: a.clone(),
            singular_values,
        };
    }
    let kept = singular_values.iter().take_while(|&&s| s > 0.0).count();
    let basis = faer::Mat::from_fn(d, kept, |r, c| vectors[(r, d - 1 - c)]);
    let weighted = faer::Mat::from_fn(d, kept, |r, c| basis[(r, c)] * (1.0 - threshold / sigma[c]));
    let projector = &weighted * basis.transpose();
    let product = if tall { &m * &projector } else { &projector * &m };
    Shrunk {
        matrix: DMatrix::from_fn(a.nrows(), a.ncols(), |r, c| product[(r, c)]),
        singular_values,
    }
}

/// Singular value soft-thresholding: every singular value `sigma_i` is
/// replaced by `max(sigma_i - threshold, 0)`.
pub fn shrink(a: &PanelMatrix, threshold: f64) -> PanelMatrix {
    assert!(threshold >= 0.0, "shrink threshold must be nonnegative");
    PanelMatrix::from_matrix_unchecked(shrink_matrix(a.as_matrix(), threshold).matrix)
}
