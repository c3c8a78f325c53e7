//! Block dictionaries: partitions of orthogonal transforms, overlapping
//! blocks with multiplicity renormalization, Kronecker line blocks, the
//! rows+columns 2D example, and Gaussian random blocks.
//!
//! A deterministic-finite dictionary satisfies the isotropy identity
//! `sum_k B_k* B_k = Id` exactly (up to rounding); a Gaussian dictionary is a
//! generator whose draws satisfy it in expectation. Multiplicity weights and
//! overlap renormalization are folded into the stored blocks, so downstream
//! code never tracks them. The per-draw rescale `1/sqrt(pi_k)` is *not*
//! stored here; the sampling module applies it, so one dictionary serves many
//! drawing distributions.

use std::collections::BTreeSet;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::operators::{
    canonical_vector, dft2_operator, operator_norm, DynOperator, LinearOperator, RowSubsetOperator,
};
use crate::seeding;

/// What a dictionary is made of.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum DictionaryKind {
    /// A finite family of fixed blocks.
    DeterministicFinite,
    /// A generator of fresh `p x n` blocks with i.i.d. `N(0, 1/p)` entries.
    Gaussian { p: usize },
}

/// A dictionary of measurement blocks over `C^n`.
pub struct BlockDictionary {
    n: usize,
    kind: DictionaryKind,
    blocks: Vec<DynOperator>,
    /// For dictionaries cut out of a base transform: the base-row indices
    /// covered by each block. Drives k-space mask exports.
    row_cover: Option<Vec<Vec<usize>>>,
}

impl BlockDictionary {
    /// Ambient dimension `n`.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> &DictionaryKind {
        &self.kind
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self.kind, DictionaryKind::Gaussian { .. })
    }

    /// Number of blocks `M` (0 for Gaussian generators).
    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn block(&self, k: usize) -> &DynOperator {
        &self.blocks[k]
    }

    pub fn blocks(&self) -> &[DynOperator] {
        &self.blocks
    }

    /// Row count `p_k` of block `k`.
    pub fn block_rows(&self, k: usize) -> usize {
        self.blocks[k].rows()
    }

    /// Base-transform rows covered by each block, when the dictionary was cut
    /// out of a base transform.
    pub fn row_cover(&self) -> Option<&[Vec<usize>]> {
        self.row_cover.as_deref()
    }

    /// Dense `p_k x n` materialization of block `k`, row by row through the
    /// adjoint (cheaper than column-wise when `p_k << n`).
    pub fn materialize_block(&self, k: usize) -> DMatrix<Complex64> {
        let block = &self.blocks[k];
        let (p, n) = (block.rows(), block.cols());
        let mut out = DMatrix::zeros(p, n);
        for j in 0..p {
            let col = block.apply_adjoint(&canonical_vector(p, j));
            for i in 0..n {
                out[(j, i)] = col[i].conj();
            }
        }
        out
    }

    /// One fresh Gaussian block. Identical seeds give bitwise-identical
    /// matrices.
    pub fn draw_gaussian(&self, seed: u64) -> Result<DMatrix<Complex64>> {
        let DictionaryKind::Gaussian { p } = self.kind else {
            return Err(Error::WrongDictionaryKind(
                "draw_gaussian requires a Gaussian generator".into(),
            ));
        };
        let mut rng = seeding::rng(seed);
        let normal = Normal::new(0.0, (1.0 / p as f64).sqrt()).expect("valid std");
        Ok(DMatrix::from_fn(p, self.n, |_, _| {
            Complex64::new(normal.sample(&mut rng), 0.0)
        }))
    }

    /// `|| sum_k B_k* B_k - Id ||_{2->2}`, dense for n <= 1024 and by power
    /// iteration on the residual operator above that.
    pub fn verify_isotropy(&self) -> Result<f64> {
        if self.is_gaussian() {
            return Err(Error::WrongDictionaryKind(
                "verify_isotropy requires a deterministic-finite dictionary; use a Monte-Carlo check for Gaussian generators".into(),
            ));
        }
        if self.n <= 1024 {
            let mut acc = DMatrix::<Complex64>::zeros(self.n, self.n);
            for k in 0..self.num_blocks() {
                let b = self.materialize_block(k);
                acc += b.ad_mul(&b);
            }
            for i in 0..self.n {
                acc[(i, i)] -= Complex64::new(1.0, 0.0);
            }
            // acc is Hermitian; its spectral norm is the largest |eigenvalue|.
            let eig = nalgebra::SymmetricEigen::new(acc);
            Ok(eig.eigenvalues.iter().map(|v| v.abs()).fold(0.0, f64::max))
        } else {
            let residual = IsotropyResidual { dict: self };
            operator_norm(&residual, 1e-10)
        }
    }
}

/// `sum_k B_k*(B_k x) - x` as an operator, for power-iteration isotropy
/// checks at sizes where the dense Gram is too large.
struct IsotropyResidual<'a> {
    dict: &'a BlockDictionary,
}

impl LinearOperator for IsotropyResidual<'_> {
    fn rows(&self) -> usize {
        self.dict.n()
    }
    fn cols(&self) -> usize {
        self.dict.n()
    }
    fn apply(&self, x: &DVector<Complex64>) -> DVector<Complex64> {
        let mut acc = -x.clone();
        for b in self.dict.blocks() {
            acc += b.apply_adjoint(&b.apply(x));
        }
        acc
    }
    fn apply_adjoint(&self, y: &DVector<Complex64>) -> DVector<Complex64> {
        // Hermitian by construction.
        self.apply(y)
    }
}

/// A probability vector over the blocks of a dictionary.
///
/// Every entry must be strictly positive (remove zero-probability blocks
/// before constructing) and the entries must sum to 1 within 1e-12.
#[derive(Clone, Debug, Serialize)]
pub struct DrawingDistribution {
    probabilities: Vec<f64>,
}

impl DrawingDistribution {
    pub fn new(probabilities: Vec<f64>) -> Result<Self> {
        if probabilities.is_empty() {
            return Err(Error::InvalidDistribution(
                "empty probability vector".into(),
            ));
        }
        if let Some(k) = probabilities.iter().position(|&p| {
            p.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) || !p.is_finite()
        }) {
            return Err(Error::InvalidDistribution(format!(
                "probability {} at index {k} is not strictly positive",
                probabilities[k]
            )));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidDistribution(format!(
                "probabilities sum to {total}, expected 1 within 1e-12"
            )));
        }
        Ok(Self { probabilities })
    }

    pub fn uniform(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidDistribution(
                "uniform distribution over 0 blocks".into(),
            ));
        }
        Ok(Self {
            probabilities: vec![1.0 / m as f64; m],
        })
    }

    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn prob(&self, k: usize) -> f64 {
        self.probabilities[k]
    }

    /// Inverse-CDF draw from a uniform variate in `[0, 1)`.
    pub fn index_from_uniform(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for (k, &p) in self.probabilities.iter().enumerate() {
            acc += p;
            if u < acc {
                return k;
            }
        }
        self.probabilities.len() - 1
    }
}

fn validate_cover(n: usize, index_sets: &[Vec<usize>], disjoint: bool) -> Result<Vec<usize>> {
    if index_sets.is_empty() {
        return Err(Error::InvalidIndexSets("no index sets given".into()));
    }
    let mut multiplicity = vec![0usize; n];
    for (j, set) in index_sets.iter().enumerate() {
        if set.is_empty() {
            return Err(Error::InvalidIndexSets(format!("index set {j} is empty")));
        }
        let unique: BTreeSet<usize> = set.iter().copied().collect();
        if unique.len() != set.len() {
            return Err(Error::InvalidIndexSets(format!(
                "index set {j} contains duplicates"
            )));
        }
        for &i in set {
            if i >= n {
                return Err(Error::InvalidIndexSets(format!(
                    "index {i} in set {j} out of range for n = {n}"
                )));
            }
            multiplicity[i] += 1;
        }
    }
    if let Some(i) = multiplicity.iter().position(|&m| m == 0) {
        return Err(Error::InvalidIndexSets(format!(
            "row {i} is not covered by any set"
        )));
    }
    if disjoint {
        if let Some(i) = multiplicity.iter().position(|&m| m > 1) {
            return Err(Error::InvalidIndexSets(format!(
                "row {i} appears in more than one set"
            )));
        }
    }
    Ok(multiplicity)
}

fn row_subset_blocks(
    a0: DynOperator,
    index_sets: &[Vec<usize>],
    multiplicity: &[usize],
) -> (Vec<DynOperator>, Vec<Vec<usize>>) {
    let mut blocks: Vec<DynOperator> = Vec::with_capacity(index_sets.len());
    let mut cover = Vec::with_capacity(index_sets.len());
    for set in index_sets {
        let scales: Vec<f64> = set
            .iter()
            .map(|&i| 1.0 / (multiplicity[i] as f64).sqrt())
            .collect();
        blocks.push(Arc::new(RowSubsetOperator::new(
            a0.clone(),
            set.clone(),
            scales,
        )));
        cover.push(set.clone());
    }
    (blocks, cover)
}

/// Blocks from a partition of the rows of an orthogonal transform.
///
/// The index sets must be disjoint and cover `{0, .., n-1}`; block `j` is the
/// rows of `a0` indexed by set `j`.
pub fn partition_blocks(a0: DynOperator, index_sets: &[Vec<usize>]) -> Result<BlockDictionary> {
    if a0.rows() != a0.cols() {
        return Err(Error::InvalidArgument(
            "base transform must be square".into(),
        ));
    }
    let n = a0.cols();
    let multiplicity = validate_cover(n, index_sets, true)?;
    let (blocks, cover) = row_subset_blocks(a0, index_sets, &multiplicity);
    Ok(BlockDictionary {
        n,
        kind: DictionaryKind::DeterministicFinite,
        blocks,
        row_cover: Some(cover),
    })
}

/// Blocks from possibly overlapping row sets of an orthogonal transform.
///
/// Each row `a_i*` is scaled by `1/sqrt(alpha_i)` where `alpha_i` is the
/// number of sets containing `i`, which restores the isotropy identity.
pub fn overlapping_blocks(a0: DynOperator, index_sets: &[Vec<usize>]) -> Result<BlockDictionary> {
    if a0.rows() != a0.cols() {
        return Err(Error::InvalidArgument(
            "base transform must be square".into(),
        ));
    }
    let n = a0.cols();
    let multiplicity = validate_cover(n, index_sets, false)?;
    let (blocks, cover) = row_subset_blocks(a0, index_sets, &multiplicity);
    Ok(BlockDictionary {
        n,
        kind: DictionaryKind::DeterministicFinite,
        blocks,
        row_cover: Some(cover),
    })
}

/// The partition of `a0` into `n` single-row blocks: the isolated
/// measurement setting.
pub fn singleton_partition(a0: DynOperator) -> Result<BlockDictionary> {
    let n = a0.cols();
    let sets: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    partition_blocks(a0, &sets)
}

/// Line blocks of the separable transform `Psi ⊗ Psi`:
/// `B_k = Psi_{k,:} ⊗ Psi`, one block per row of `Psi`.
///
/// Stacking the blocks in order reproduces `Psi ⊗ Psi` exactly, so the
/// dictionary is the partition of the 2D transform into `sqrt_n` consecutive
/// row groups ("horizontal lines" of the 2D frequency grid).
pub fn line_blocks(psi: DynOperator) -> Result<BlockDictionary> {
    if psi.rows() != psi.cols() {
        return Err(Error::InvalidArgument(
            "line blocks require a square transform".into(),
        ));
    }
    let sqrt_n = psi.rows();
    let a0 = crate::operators::kron(psi.clone(), psi)?;
    let sets: Vec<Vec<usize>> = (0..sqrt_n)
        .map(|k| (k * sqrt_n..(k + 1) * sqrt_n).collect())
        .collect();
    partition_blocks(a0, &sets)
}

/// The index sets of the `k`-th row and `k`-th column of the `sqrt_n x sqrt_n`
/// frequency grid, in the vector indexing where the slow Kronecker index is
/// the image row.
pub fn grid_row_set(sqrt_n: usize, k: usize) -> Vec<usize> {
    (k * sqrt_n..(k + 1) * sqrt_n).collect()
}

pub fn grid_col_set(sqrt_n: usize, k: usize) -> Vec<usize> {
    (0..sqrt_n).map(|t| t * sqrt_n + k).collect()
}

/// Overlapping blocks made of the rows and the columns of the 2D DFT grid:
/// `2 sqrt_n` blocks of `sqrt_n` rows each, every row scaled by `1/sqrt(2)`
/// since each grid point lies in exactly one row and one column.
pub fn rows_and_columns_blocks(sqrt_n: usize) -> Result<BlockDictionary> {
    if sqrt_n < 2 {
        return Err(Error::InvalidArgument(
            "rows+columns blocks require sqrt_n >= 2".into(),
        ));
    }
    let a0 = dft2_operator(sqrt_n);
    let mut sets: Vec<Vec<usize>> = (0..sqrt_n).map(|k| grid_row_set(sqrt_n, k)).collect();
    sets.extend((0..sqrt_n).map(|k| grid_col_set(sqrt_n, k)));
    overlapping_blocks(a0, &sets)
}

/// A Gaussian generator dictionary: draws are fresh `p x n` matrices with
/// i.i.d. `N(0, 1/p)` entries, so `E[B* B] = Id` holds in expectation.
pub fn gaussian_dictionary(p: usize, n: usize) -> Result<BlockDictionary> {
    if p == 0 || n == 0 {
        return Err(Error::InvalidArgument(
            "gaussian dictionary requires p >= 1 and n >= 1".into(),
        ));
    }
    Ok(BlockDictionary {
        n,
        kind: DictionaryKind::Gaussian { p },
        blocks: Vec::new(),
        row_cover: None,
    })
}
