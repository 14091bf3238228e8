//! Geographic adjacency and the row-stochastic mixing operator derived from it.

use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Dense nonnegative adjacency; entry `(i, j)` is the relation from region
/// `j` to region `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyMatrix<T: Scalar = f64> {
    weights: Matrix<T>,
}

impl<T: Scalar> AdjacencyMatrix<T> {
    pub fn new(weights: Matrix<T>) -> Result<Self> {
        if weights.rows() != weights.cols() {
            return Err(Error::DimensionMismatch {
                expected: weights.rows(),
                actual: weights.cols(),
            });
        }
        if weights.as_slice().iter().any(|w| !(w.is_finite() && *w >= T::zero())) {
            return Err(Error::validation("adjacency", "weights must be finite and nonnegative"));
        }
        Ok(Self { weights })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            weights: Matrix::zeros(n, n),
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn weights(&self) -> &Matrix<T> {
        &self.weights
    }
}

/// Nonnegative row-stochastic operator `P`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingOperator<T: Scalar = f64> {
    matrix: Matrix<T>,
}

impl<T: Scalar> MixingOperator<T> {
    pub fn identity(n: usize) -> Self {
        Self {
            matrix: Matrix::identity(n),
        }
    }

    /// Wraps a matrix that is already row-stochastic (rows sum to one within
    /// `1e-12`, entries nonnegative).
    pub fn from_stochastic(matrix: Matrix<T>) -> Result<Self> {
        if matrix.rows() != matrix.cols() {
            return Err(Error::DimensionMismatch {
                expected: matrix.rows(),
                actual: matrix.cols(),
            });
        }
        for i in 0..matrix.rows() {
            let row = matrix.row(i);
            if row.iter().any(|&w| w < T::zero()) || (matrix.row_sum(i) - T::one()).abs() > T::lit(1e-12) {
                return Err(Error::InvalidArgument(format!("row {i} is not stochastic")));
            }
        }
        Ok(Self { matrix })
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.matrix
    }

    pub fn row_sums(&self) -> Vec<T> {
        (0..self.dim()).map(|i| self.matrix.row_sum(i)).collect()
    }

    /// `P v`.
    pub fn mix(&self, v: &[T]) -> Result<Vec<T>> {
        self.matrix.mul_vec(v)
    }

    /// `Pᵀ v`, the adjoint used when backpropagating through [`Self::mix`].
    pub fn mix_transpose(&self, v: &[T]) -> Result<Vec<T>> {
        self.matrix.tr_mul_vec(v)
    }
}

/// How [`row_normalize`] treats a row with no outgoing weight.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum ZeroRowPolicy {
    /// The isolated region mixes only with itself.
    #[default]
    SelfLoop,
}

/// Divides each row by its sum; all-zero rows become `e_i`.
pub fn row_normalize<T: Scalar>(adjacency: &AdjacencyMatrix<T>, policy: ZeroRowPolicy) -> MixingOperator<T> {
    let n = adjacency.dim();
    let a = adjacency.weights();
    let mut p = Matrix::zeros(n, n);
    for i in 0..n {
        let sum = a.row_sum(i);
        if sum > T::zero() {
            for j in 0..n {
                p[(i, j)] = a[(i, j)] / sum;
            }
            // Fold rounding residue into the largest entry so the row sums
            // to one as tightly as floating point allows.
            let residue = T::one() - p.row_sum(i);
            let jmax = (0..n).fold(0, |m, j| if p[(i, j)] > p[(i, m)] { j } else { m });
            p[(i, jmax)] += residue;
        } else {
            match policy {
                ZeroRowPolicy::SelfLoop => p[(i, i)] = T::one(),
            }
        }
    }
    MixingOperator { matrix: p }
}

/// Reads a `src,dst,weight` edge list. An edge `src → dst` sets entry
/// `(dst, src)`; edges are directed and repeated edges accumulate.
pub fn load_adjacency(path: impl AsRef<Path>, regions: &[String]) -> Result<AdjacencyMatrix<f64>> {
    let path = path.as_ref();
    let ctx = path.display().to_string();
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let headers = reader.headers().map_err(|e| Error::csv(path, e))?.clone();
    if headers.iter().map(str::trim).collect::<Vec<_>>() != ["src", "dst", "weight"] {
        return Err(Error::validation(&ctx, "expected header `src,dst,weight`"));
    }
    let n = regions.len();
    let index = |name: &str, line: usize| {
        regions
            .iter()
            .position(|r| r == name)
            .ok_or_else(|| Error::validation(format!("{ctx}:{line}"), format!("unknown region {name:?}")))
    };
    let mut weights = Matrix::zeros(n, n);
    for (k, record) in reader.records().enumerate() {
        let line = k + 2;
        let record = record.map_err(|e| Error::csv(path, e))?;
        let src = index(record[0].trim(), line)?;
        let dst = index(record[1].trim(), line)?;
        let w: f64 = record[2].trim().parse().map_err(|_| {
            Error::validation(format!("{ctx}:{line}"), format!("non-numeric weight {:?}", &record[2]))
        })?;
        if !(w.is_finite() && w >= 0.0) {
            return Err(Error::validation(format!("{ctx}:{line}"), format!("negative or non-finite weight {w}")));
        }
        weights[(dst, src)] += w;
    }
    AdjacencyMatrix::new(weights)
}

/// Writes the nonzero entries as a `src,dst,weight` edge list.
pub fn write_adjacency(path: impl AsRef<Path>, adjacency: &AdjacencyMatrix<f64>, regions: &[String]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut write = || -> std::result::Result<(), csv::Error> {
        w.write_record(["src", "dst", "weight"])?;
        let a = adjacency.weights();
        for dst in 0..adjacency.dim() {
            for src in 0..adjacency.dim() {
                let v = a[(dst, src)];
                if v != 0.0 {
                    w.write_record([regions[src].as_str(), regions[dst].as_str(), &v.to_string()])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    };
    write().map_err(|e| Error::csv(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn edges(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    fn regions(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn symmetric_pair() {
        let f = edges("src,dst,weight\na,b,1\nb,a,1\n");
        let a = load_adjacency(f.path(), &regions(&["a", "b"])).unwrap();
        assert_eq!(a.weights().as_slice(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn empty_edge_list_is_zero() {
        let f = edges("src,dst,weight\n");
        let a = load_adjacency(f.path(), &regions(&["a", "b"])).unwrap();
        assert!(a.weights().as_slice().iter().all(|&w| w == 0.0));
    }

    #[test]
    fn unknown_region_and_negative_weight() {
        let f = edges("src,dst,weight\na,zz,1\n");
        let err = load_adjacency(f.path(), &regions(&["a", "b"])).unwrap_err();
        assert!(err.to_string().contains("zz"));
        let f = edges("src,dst,weight\na,b,-1\n");
        assert!(load_adjacency(f.path(), &regions(&["a", "b"])).is_err());
    }

    #[test]
    fn normalization_cases() {
        let a = AdjacencyMatrix::new(
            Matrix::from_rows(&[vec![2.0, 2.0, 0.0], vec![0.0, 0.0, 0.0], vec![1.0, 0.0, 3.0]]).unwrap(),
        )
        .unwrap();
        let p = row_normalize(&a, ZeroRowPolicy::SelfLoop);
        assert_eq!(p.matrix().row(0), &[0.5, 0.5, 0.0]);
        assert_eq!(p.matrix().row(1), &[0.0, 1.0, 0.0]);
        let id = AdjacencyMatrix::new(Matrix::<f64>::identity(3)).unwrap();
        assert_eq!(row_normalize(&id, ZeroRowPolicy::SelfLoop), MixingOperator::identity(3));
    }

    #[test]
    fn mixing_examples() {
        let id = MixingOperator::<f64>::identity(2);
        assert_eq!(id.mix(&[3.0, 7.0]).unwrap(), vec![3.0, 7.0]);
        let swap = MixingOperator::from_stochastic(Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap()).unwrap();
        assert_eq!(swap.mix(&[1.0, 2.0]).unwrap(), vec![2.0, 1.0]);
        let avg = MixingOperator::from_stochastic(Matrix::from_row_major(3, 3, vec![1.0f64 / 3.0; 9]).unwrap());
        // 3 × (1/3) is not exactly 1 in binary; the tolerance admits it.
        let avg = avg.unwrap();
        let out = avg.mix(&[1.0, 2.0, 6.0]).unwrap();
        assert!(out.iter().all(|v| (v - 3.0).abs() < 1e-12));
        assert!(matches!(swap.mix(&[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn works_in_f32() {
        let a = AdjacencyMatrix::new(Matrix::<f32>::from_rows(&[vec![1.0, 3.0], vec![0.0, 0.0]]).unwrap()).unwrap();
        let p = row_normalize(&a, ZeroRowPolicy::SelfLoop);
        assert_eq!(p.mix(&[4.0, 8.0]).unwrap(), vec![7.0, 8.0]);
    }

    fn arb_adjacency() -> impl Strategy<Value = AdjacencyMatrix<f64>> {
        (1usize..8).prop_flat_map(|n| {
            proptest::collection::vec(prop_oneof![Just(0.0), 0.0..10.0f64], n * n)
                .prop_map(move |w| AdjacencyMatrix::new(Matrix::from_row_major(n, n, w).unwrap()).unwrap())
        })
    }

    proptest! {
        #[test]
        fn rows_are_stochastic(a in arb_adjacency()) {
            let p = row_normalize(&a, ZeroRowPolicy::SelfLoop);
            for i in 0..p.dim() {
                prop_assert!((p.matrix().row_sum(i) - 1.0).abs() <= 1e-12);
                prop_assert!(p.matrix().row(i).iter().all(|&x| x >= 0.0));
            }
        }

        #[test]
        fn mixing_is_convex(a in arb_adjacency(), seed in proptest::collection::vec(-100.0..100.0f64, 8)) {
            let p = row_normalize(&a, ZeroRowPolicy::SelfLoop);
            let v = &seed[..p.dim()];
            let out = p.mix(v).unwrap();
            let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
            for x in out {
                prop_assert!(x <= hi + 1e-9 && x >= lo - 1e-9);
            }
        }

        #[test]
        fn normalization_is_idempotent(a in arb_adjacency()) {
            let p = row_normalize(&a, ZeroRowPolicy::SelfLoop);
            let again = row_normalize(&AdjacencyMatrix::new(p.matrix().clone()).unwrap(), ZeroRowPolicy::SelfLoop);
            for (x, y) in p.matrix().as_slice().iter().zip(again.matrix().as_slice()) {
                prop_assert!((x - y).abs() <= 1e-15);
            }
        }
    }
}
