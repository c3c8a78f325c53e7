//! Matrix-free linear operators and the concrete transforms used everywhere:
//! unitary DFTs, Kronecker products, dense matrices, row subsets of a base
//! transform, and the `1 ⊕ F` direct-sum example.
//!
//! Operators are immutable after construction and safe to apply from many
//! threads at once. Forward and adjoint maps are deterministic.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// A linear map `C^cols -> C^rows` with an adjoint.
///
/// Implementations must satisfy adjoint consistency:
/// `<A x, y> = <x, A* y>` for all vectors, and must not mutate shared state.
pub trait LinearOperator: Send + Sync {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;

    /// Forward map. Panics if `x.len() != self.cols()`.
    fn apply(&self, x: &DVector<Complex64>) -> DVector<Complex64>;

    /// Adjoint map. Panics if `y.len() != self.rows()`.
    fn apply_adjoint(&self, y: &DVector<Complex64>) -> DVector<Complex64>;

    /// Dense materialization, column by column. Intended for small sizes
    /// (oracles, reports); cost is `cols` forward applications.
    fn materialize(&self) -> DMatrix<Complex64> {
        let mut out = DMatrix::zeros(self.rows(), self.cols());
        for j in 0..self.cols() {
            let col = self.apply(&canonical_vector(self.cols(), j));
            out.set_column(j, &col);
        }
        out
    }

    /// The row-subset view of this operator, when it is one. Stacks of blocks
    /// over a common base transform use this to share base applications.
    fn as_row_subset(&self) -> Option<&RowSubsetOperator> {
        None
    }
}

/// Shared handle to a type-erased operator.
pub type DynOperator = Arc<dyn LinearOperator>;

/// The `j`-th canonical basis vector of `C^n`.
pub fn canonical_vector(n: usize, j: usize) -> DVector<Complex64> {
    assert!(j < n, "canonical index {j} out of range for dimension {n}");
    let mut e = DVector::zeros(n);
    e[j] = Complex64::new(1.0, 0.0);
    e
}

/// A dense complex matrix as an operator. Doubles as the exact small-scale
/// oracle for everything matrix-free.
#[derive(Clone, Debug)]
pub struct DenseOperator {
    mat: DMatrix<Complex64>,
}

impl DenseOperator {
    pub fn new(mat: DMatrix<Complex64>) -> Self {
        assert!(
            mat.iter().all(|z| z.re.is_finite() && z.im.is_finite()),
            "non-finite matrix entry"
        );
        Self { mat }
    }

    pub fn from_real(mat: DMatrix<f64>) -> Self {
        Self::new(mat.map(|v| Complex64::new(v, 0.0)))
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.mat
    }
}

impl LinearOperator for DenseOperator {
    fn rows(&self) -> usize {
        self.mat.nrows()
    }
    fn cols(&self) -> usize {
        self.mat.ncols()
    }
    fn apply(&self, x: &DVector<Complex64>) -> DVector<Complex64> {
        assert_eq!(x.len(), self.cols(), "dimension mismatch in forward apply");
        &self.mat * x
    }
    fn apply_adjoint(&self, y: &DVector<Complex64>) -> DVector<Complex64> {
        assert_eq!(y.len(), self.rows(), "dimension mismatch in adjoint apply");
        self.mat.ad_mul(y)
    }
    fn materialize(&self) -> DMatrix<Complex64> {
        self.mat.clone()
    }
}

/// The unitary 1D discrete Fourier transform of size `dim`.
///
/// Entry `(p, l)` is `exp(2 i pi p l / dim) / sqrt(dim)`; frequency indices
/// are 0-based and the DC row/column is index 0. The adjoint is the inverse.
pub struct DftOperator {
    dim: usize,
    // positive-exponent kernel = rustfft's "inverse" direction
    plus: Arc<dyn Fft<f64>>,
    minus: Arc<dyn Fft<f64>>,
}

impl DftOperator {
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 1, "DFT dimension must be positive");
        let mut planner = FftPlanner::new();
        let plus = planner.plan_fft_inverse(dim);
        let minus = planner.plan_fft_forward(dim);
        Self { dim, plus, minus }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn run(&self, fft: &Arc<dyn Fft<f64>>, x: &DVector<Complex64>) -> DVector<Complex64> {
        let mut buf: Vec<Complex64> = x.iter().copied().collect();
        let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
        fft.process_with_scratch(&mut buf, &mut scratch);
        let scale = 1.0 / (self.dim as f64).sqrt();
        DVector::from_iterator(self.dim, buf.into_iter().map(|z| z * scale))
    }
}

impl LinearOperator for DftOperator {
    fn rows(&self) -> usize {
        self.dim
    }
    fn cols(&self) -> usize {
        self.dim
    }
    fn apply(&self, x: &DVector<Complex64>) -> DVector<Complex64> {
        assert_eq!(x.len(), self.dim, "dimension mismatch in forward apply");
        self.run(&self.plus, x)
    }
    fn apply_adjoint(&self, y: &DVector<Complex64>) -> DVector<Complex64> {
        assert_eq!(y.len(), self.dim, "dimension mismatch in adjoint apply");
        self.run(&self.minus, y)
    }
}

/// `dft_operator(dim)`: the unitary 1D DFT as a shared operator.
pub fn dft_operator(dim: usize) -> DynOperator {
    Arc::new(DftOperator::new(dim))
}

/// Identity operator, occasionally useful as a base transform.
pub struct IdentityOperator {
    dim: usize,
}

impl IdentityOperator {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl LinearOperator for IdentityOperator {
    fn rows(&self) -> usize {
        self.dim
    }
    fn cols(&self) -> usize {
        self.dim
    }
    fn apply(&self, x: &DVector<Complex64>) -> DVector<Complex64> {
        assert_eq!(x.len(), self.dim);
        x.clone()
    }
    fn apply_adjoint(&self, y: &DVector<Complex64>) -> DVector<Complex64> {
        assert_eq!(y.len(), self.dim);
        y.clone()
    }
}

/// Identity as a shared operator.
pub fn identity_operator(dim: usize) -> DynOperator {
    Arc::new(IdentityOperator::new(dim))
}

/// Kronecker product `A ⊗ B`, applied through the reshape identity
/// `(A ⊗ B) vec(X) = vec(B X A^T)`; never materialized.
///
/// Index convention: the left factor's index is the slow one, so
/// `(a ⊗ b)[i * B.rows + k] = a[i] * b[k]`.
pub struct KronOperator {
    left: DynOperator,
    right: DynOperator,
    rows: usize,
    cols: usize,
}

impl KronOperator {
    pub fn new(left: DynOperator, right: DynOperator) -> Result<Self> {
        let rows = left
            .rows()
            .checked_mul(right.rows())
            .ok_or(Error::DimensionOverflow)?;
        let cols = left
            .cols()
            .checked_mul(right.cols())
            .ok_or(Error::DimensionOverflow)?;
        Ok(Self {
            left,
            right,
            rows,
            cols,
        })
    }

    fn apply_impl(&self, x: &DVector<Complex64>, adjoint: bool) -> DVector<Complex64> {
        let (a, b) = (&self.left, &self.right);
        let (a_rows, a_cols) = if adjoint {
            (a.cols(), a.rows())
        } else {
            (a.rows(), a.cols())
        };
        let (b_rows, b_cols) = if adjoint {
            (b.cols(), b.rows())
        } else {
            (b.rows(), b.cols())
        };
        // x is vec of X (b_cols x a_cols), slow index = left factor.
        // Step 1: Z = B X (b_rows x a_cols), one B-apply per slow index.
        let mut z = DMatrix::<Complex64>::zeros(b_rows, a_cols);
        for i in 0..a_cols {
            let xi = DVector::from_iterator(b_cols, (0..b_cols).map(|k| x[i * b_cols + k]));
            let zi = if adjoint {
                b.apply_adjoint(&xi)
            } else {
                b.apply(&xi)
            };
            z.set_column(i, &zi);
        }
        // Step 2: Y = Z A'^T row by row, where A' is A (forward) or A^H
        // (adjoint); the transpose is absorbed by iterating over rows of Z.
        let mut y = DVector::<Complex64>::zeros(a_rows * b_rows);
        for k in 0..b_rows {
            let zrow = DVector::from_iterator(a_cols, (0..a_cols).map(|i| z[(k, i)]));
            let yrow = if adjoint {
                a.apply_adjoint(&zrow)
            } else {
                a.apply(&zrow)
            };
            for i in 0..a_rows {
                y[i * b_rows + k] = yrow[i];
            }
        }
        y
    }
}

impl LinearOperator for KronOperator {
    fn rows(&self) -> usize {
        self.rows
    }
    fn cols(&self) -> usize {
        self.cols
    }
    fn apply(&self, x: &DVector<Complex64>) -> DVector<Complex64> {
        assert_eq!(x.len(), self.cols, "dimension mismatch in forward apply");
        self.apply_impl(x, false)
    }
    fn apply_adjoint(&self, y: &DVector<Complex64>) -> DVector<Complex64> {
        assert_eq!(y.len(), self.rows, "dimension mismatch in adjoint apply");
        self.apply_impl(y, true)
    }
}

/// `kron(A, B)`: Kronecker product operator.
pub fn kron(left: DynOperator, right: DynOperator) -> Result<DynOperator> {
    Ok(Arc::new(KronOperator::new(left, right)?))
}

/// The unitary 2D DFT on `sqrt_n x sqrt_n` images, `dft(sqrt_n) ⊗ dft(sqrt_n)`.
pub fn dft2_operator(sqrt_n: usize) -> DynOperator {
    kron(dft_operator(sqrt_n), dft_operator(sqrt_n)).expect("2D DFT dimensions overflow")
}

/// The `n x n` orthogonal matrix `1 ⊕ F_{n-1}`: top-left entry 1, lower-right
/// block the unitary `(n-1)`-point DFT. Its first row has sup-norm 1 while
/// the remaining rows are maximally flat, the textbook case where the
/// optimal drawing distribution is far from uniform.
pub struct OnePlusDftOperator {
    n: usize,
    dft: DftOperator,
}

impl OnePlusDftOperator {
    pub fn new(n: usize) -> Self {
        assert!(n >= 2, "1 ⊕ F requires n >= 2");
        Self {
            n,
            dft: DftOperator::new(n - 1),
        }
    }
}

impl LinearOperator for OnePlusDftOperator {
    fn rows(&self) -> usize {
        self.n
    }
    fn cols(&self) -> usize {
        self.n
    }
    fn apply(&self, x: &DVector<Complex64>) -> DVector<Complex64> {
        assert_eq!(x.len(), self.n);
        let tail = DVector::from_iterator(self.n - 1, x.iter().skip(1).copied());
        let ft = self.dft.apply(&tail);
        let mut y = DVector::zeros(self.n);
        y[0] = x[0];
        for i in 0..self.n - 1 {
            y[i + 1] = ft[i];
        }
        y
    }
    fn apply_adjoint(&self, y: &DVector<Complex64>) -> DVector<Complex64> {
        assert_eq!(y.len(), self.n);
        let tail = DVector::from_iterator(self.n - 1, y.iter().skip(1).copied());
        let ft = self.dft.apply_adjoint(&tail);
        let mut x = DVector::zeros(self.n);
        x[0] = y[0];
        for i in 0..self.n - 1 {
            x[i + 1] = ft[i];
        }
        x
    }
}

/// `block_diag_example(n)`: the `1 ⊕ F_{n-1}` operator.
pub fn block_diag_example(n: usize) -> DynOperator {
    Arc::new(OnePlusDftOperator::new(n))
}

/// A subset of rows of a base operator, each row optionally rescaled.
///
/// Forward: apply the base, gather the selected rows. Adjoint: scatter into
/// the base's output space, apply the base adjoint. Blocks built from rows of
/// an orthogonal transform are exactly this, which also lets stacks of such
/// blocks share a single base application.
pub struct RowSubsetOperator {
    base: DynOperator,
    row_indices: Vec<usize>,
    row_scales: Vec<f64>,
}

impl RowSubsetOperator {
    pub fn new(base: DynOperator, row_indices: Vec<usize>, row_scales: Vec<f64>) -> Self {
        assert_eq!(row_indices.len(), row_scales.len());
        assert!(
            row_indices.iter().all(|&i| i < base.rows()),
            "row index out of range"
        );
        Self {
            base,
            row_indices,
            row_scales,
        }
    }

    pub fn base(&self) -> &DynOperator {
        &self.base
    }

    pub fn row_indices(&self) -> &[usize] {
        &self.row_indices
    }

    pub fn row_scales(&self) -> &[f64] {
        &self.row_scales
    }
}

impl LinearOperator for RowSubsetOperator {
    fn rows(&self) -> usize {
        self.row_indices.len()
    }
    fn cols(&self) -> usize {
        self.base.cols()
    }
    fn apply(&self, x: &DVector<Complex64>) -> DVector<Complex64> {
        assert_eq!(x.len(), self.cols());
        let full = self.base.apply(x);
        DVector::from_iterator(
            self.row_indices.len(),
            self.row_indices
                .iter()
                .zip(&self.row_scales)
                .map(|(&i, &s)| full[i] * s),
        )
    }
    fn apply_adjoint(&self, y: &DVector<Complex64>) -> DVector<Complex64> {
        assert_eq!(y.len(), self.rows());
        let mut full = DVector::zeros(self.base.rows());
        for ((&i, &s), v) in self.row_indices.iter().zip(&self.row_scales).zip(y.iter()) {
            full[i] += v * s;
        }
        self.base.apply_adjoint(&full)
    }

    fn as_row_subset(&self) -> Option<&RowSubsetOperator> {
        Some(self)
    }
}

/// Default relative tolerance for [`operator_norm`].
pub const POWER_ITERATION_TOL: f64 = 1e-8;
/// Iteration cap for [`operator_norm`].
pub const POWER_ITERATION_CAP: usize = 10_000;

/// Largest singular value of `A`, by power iteration on `A* A`.
///
/// The start vector is drawn from a fixed internal seed so estimates are
/// reproducible. Hitting the iteration cap reports
/// [`Error::PowerIterationDiverged`] carrying the last iterate.
pub fn operator_norm(a: &dyn LinearOperator, tol: f64) -> Result<f64> {
    assert!(tol > 0.0, "tolerance must be positive");
    if a.cols() == 0 || a.rows() == 0 {
        return Ok(0.0);
    }
    let mut rng = crate::seeding::rng(0x706f_7765_7269_7465);
    let mut v = random_unit_vector(&mut rng, a.cols());
    let mut lambda = 0.0_f64;
    for iter in 0..POWER_ITERATION_CAP {
        let w = a.apply_adjoint(&a.apply(&v));
        let norm = w.norm();
        if norm == 0.0 {
            // v is (numerically) in the kernel of A*A; the operator may still
            // be nonzero, but a random restart lands here with probability 0.
            return Ok(0.0);
        }
        let new_lambda = v.dotc(&w).re.max(0.0);
        v = w / Complex64::new(norm, 0.0);
        if iter > 0 && (new_lambda - lambda).abs() <= tol * new_lambda.max(f64::MIN_POSITIVE) {
            return Ok(new_lambda.sqrt());
        }
        lambda = new_lambda;
    }
    Err(Error::PowerIterationDiverged {
        iterations: POWER_ITERATION_CAP,
        estimate: lambda.sqrt(),
    })
}

/// A random unit vector with i.i.d. complex Gaussian entries.
pub fn random_unit_vector(rng: &mut impl rand::Rng, n: usize) -> DVector<Complex64> {
    use rand_distr::{Distribution, StandardNormal};
    let mut v = DVector::from_fn(n, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        Complex64::new(re, im)
    });
    let norm = v.norm();
    if norm > 0.0 {
        v /= Complex64::new(norm, 0.0);
    }
    v
}

/// Largest singular value of a dense matrix via SVD, the oracle that
/// [`operator_norm`] is tested against.
pub fn dense_spectral_norm(m: &DMatrix<Complex64>) -> f64 {
    m.clone()
        .singular_values()
        .iter()
        .copied()
        .fold(0.0, f64::max)
}
