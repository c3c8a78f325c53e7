//! Drawing i.i.d. blocks under a distribution and stacking them, with the
//! per-draw rescale `1/sqrt(m pi_k)`, into the sensing operator
//! `A = (1/sqrt(m)) (B_{k_1}/sqrt(pi_{k_1}); ...; B_{k_m}/sqrt(pi_{k_m}))`.
//!
//! Seeding contract: the randomness of draw `j` is fully determined by
//! `(master seed, j)`, so operators are replayable across platforms and a
//! drawn operator can be partitioned into independent groups for the golfing
//! scheme without re-seeding.
//!
//! When every block of the dictionary is a row subset of one shared base
//! transform (partitions, overlaps, line blocks), the stacked operator
//! applies the base once per forward/adjoint and gathers rows, instead of
//! applying every drawn block separately.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;

use crate::blocks::{BlockDictionary, DrawingDistribution};
use crate::error::{Error, Result};
use crate::operators::{DynOperator, LinearOperator};
use crate::seeding;

enum DrawnBlocks {
    /// Indices into the dictionary, in draw order.
    Deterministic(Vec<usize>),
    /// Fresh Gaussian draws, in draw order.
    Gaussian(Vec<DMatrix<Complex64>>),
}

/// Flattened row view used when all drawn blocks share one base transform.
struct FlatRows {
    base: DynOperator,
    row_indices: Vec<usize>,
    /// Per sampled row: block row scale times `1/sqrt(m_scale pi_k)`.
    scales: Vec<f64>,
}

/// A realized sensing operator: `m` drawn blocks with their rescaling.
pub struct SampledOperator {
    dict: Arc<BlockDictionary>,
    pi: Option<DrawingDistribution>,
    draws: DrawnBlocks,
    /// The `m` entering the `1/sqrt(m pi)` scale. Groups produced by
    /// [`SampledOperator::partition_for_golfing`] keep the parent's value, so
    /// stacking the groups reproduces the parent exactly.
    m_scale: usize,
    /// Prefix sums of drawn block row counts; `row_offsets[m]` is `q`.
    row_offsets: Vec<usize>,
    fast: Option<FlatRows>,
}

impl SampledOperator {
    fn build(
        dict: Arc<BlockDictionary>,
        pi: Option<DrawingDistribution>,
        draws: DrawnBlocks,
        m_scale: usize,
    ) -> Self {
        let mut row_offsets = Vec::new();
        row_offsets.push(0usize);
        match &draws {
            DrawnBlocks::Deterministic(indices) => {
                for &k in indices {
                    row_offsets.push(row_offsets.last().unwrap() + dict.block_rows(k));
                }
            }
            DrawnBlocks::Gaussian(blocks) => {
                for b in blocks {
                    row_offsets.push(row_offsets.last().unwrap() + b.nrows());
                }
            }
        }
        let fast = Self::try_flatten(&dict, pi.as_ref(), &draws, m_scale);
        Self {
            dict,
            pi,
            draws,
            m_scale,
            row_offsets,
            fast,
        }
    }

    fn try_flatten(
        dict: &BlockDictionary,
        pi: Option<&DrawingDistribution>,
        draws: &DrawnBlocks,
        m_scale: usize,
    ) -> Option<FlatRows> {
        let DrawnBlocks::Deterministic(indices) = draws else {
            return None;
        };
        let pi = pi?;
        let mut base: Option<DynOperator> = None;
        let mut row_indices = Vec::new();
        let mut scales = Vec::new();
        for &k in indices {
            let sub = dict.block(k).as_row_subset()?;
            match &base {
                None => base = Some(sub.base().clone()),
                Some(b) => {
                    if !Arc::ptr_eq(b, sub.base()) {
                        return None;
                    }
                }
            }
            let block_scale = 1.0 / (m_scale as f64 * pi.prob(k)).sqrt();
            for (&r, &s) in sub.row_indices().iter().zip(sub.row_scales()) {
                row_indices.push(r);
                scales.push(s * block_scale);
            }
        }
        base.map(|base| FlatRows {
            base,
            row_indices,
            scales,
        })
    }

    /// Number of drawn blocks in this operator.
    pub fn num_draws(&self) -> usize {
        self.row_offsets.len() - 1
    }

    /// The `m` used in the `1/sqrt(m pi)` rescale (equals [`Self::num_draws`]
    /// except for golfing groups).
    pub fn scale_draws(&self) -> usize {
        self.m_scale
    }

    /// Total row count `q = sum_j p_{k_j}`.
    pub fn total_rows(&self) -> usize {
        *self.row_offsets.last().unwrap()
    }

    pub fn dictionary(&self) -> &Arc<BlockDictionary> {
        &self.dict
    }

    pub fn distribution(&self) -> Option<&DrawingDistribution> {
        self.pi.as_ref()
    }

    /// Drawn dictionary indices `K`, in draw order (absent for Gaussian
    /// generators).
    pub fn drawn_indices(&self) -> Option<&[usize]> {
        match &self.draws {
            DrawnBlocks::Deterministic(indices) => Some(indices),
            DrawnBlocks::Gaussian(_) => None,
        }
    }

    fn scale_for(&self, k: usize) -> f64 {
        match &self.pi {
            Some(pi) => 1.0 / (self.m_scale as f64 * pi.prob(k)).sqrt(),
            None => 1.0 / (self.m_scale as f64).sqrt(),
        }
    }

    /// Base-transform rows covered by the drawn blocks (requires a dictionary
    /// cut out of a base transform). Duplicate draws cover the same rows.
    pub fn sampled_base_rows(&self) -> Result<Vec<bool>> {
        let cover = self.dict.row_cover().ok_or_else(|| {
            Error::InvalidArgument("dictionary does not expose base-row coverage".into())
        })?;
        let indices = self.drawn_indices().ok_or_else(|| {
            Error::InvalidArgument("gaussian draws have no base-row coverage".into())
        })?;
        let mut mask = vec![false; self.dict.n()];
        for &k in indices {
            for &r in &cover[k] {
                mask[r] = true;
            }
        }
        Ok(mask)
    }

    /// Splits the drawn blocks into consecutive groups of the given sizes.
    ///
    /// Each group keeps the parent's `1/sqrt(m pi)` scale, so stacking the
    /// groups reproduces the parent operator; the `m/m_l` reweighting of the
    /// golfing recursion is applied by the certificate construction.
    pub fn partition_for_golfing(&self, group_sizes: &[usize]) -> Result<Vec<SampledOperator>> {
        let total: usize = group_sizes.iter().sum();
        if total != self.num_draws() {
            return Err(Error::InvalidArgument(format!(
                "group sizes sum to {total}, operator has {} draws",
                self.num_draws()
            )));
        }
        if group_sizes.contains(&0) {
            return Err(Error::InvalidArgument("group sizes must be >= 1".into()));
        }
        let mut out = Vec::with_capacity(group_sizes.len());
        let mut start = 0usize;
        for &g in group_sizes {
            let draws = match &self.draws {
                DrawnBlocks::Deterministic(indices) => {
                    DrawnBlocks::Deterministic(indices[start..start + g].to_vec())
                }
                DrawnBlocks::Gaussian(blocks) => {
                    DrawnBlocks::Gaussian(blocks[start..start + g].to_vec())
                }
            };
            out.push(SampledOperator::build(
                self.dict.clone(),
                self.pi.clone(),
                draws,
                self.m_scale,
            ));
            start += g;
        }
        Ok(out)
    }
}

impl LinearOperator for SampledOperator {
    fn rows(&self) -> usize {
        self.total_rows()
    }

    fn cols(&self) -> usize {
        self.dict.n()
    }

    fn apply(&self, x: &DVector<Complex64>) -> DVector<Complex64> {
        assert_eq!(x.len(), self.cols(), "dimension mismatch in forward apply");
        if let Some(flat) = &self.fast {
            let full = flat.base.apply(x);
            return DVector::from_iterator(
                flat.row_indices.len(),
                flat.row_indices
                    .iter()
                    .zip(&flat.scales)
                    .map(|(&r, &s)| full[r] * s),
            );
        }
        let mut out = DVector::zeros(self.total_rows());
        match &self.draws {
            DrawnBlocks::Deterministic(indices) => {
                for (j, &k) in indices.iter().enumerate() {
                    let y = self.dict.block(k).apply(x) * Complex64::new(self.scale_for(k), 0.0);
                    out.rows_mut(self.row_offsets[j], y.len()).copy_from(&y);
                }
            }
            DrawnBlocks::Gaussian(blocks) => {
                let s = Complex64::new(1.0 / (self.m_scale as f64).sqrt(), 0.0);
                for (j, b) in blocks.iter().enumerate() {
                    let y = b * x * s;
                    out.rows_mut(self.row_offsets[j], y.len()).copy_from(&y);
                }
            }
        }
        out
    }

    fn apply_adjoint(&self, y: &DVector<Complex64>) -> DVector<Complex64> {
        assert_eq!(y.len(), self.rows(), "dimension mismatch in adjoint apply");
        if let Some(flat) = &self.fast {
            let mut full = DVector::zeros(flat.base.rows());
            for ((&r, &s), v) in flat.row_indices.iter().zip(&flat.scales).zip(y.iter()) {
                full[r] += v * s;
            }
            return flat.base.apply_adjoint(&full);
        }
        let mut out = DVector::zeros(self.cols());
        match &self.draws {
            DrawnBlocks::Deterministic(indices) => {
                for (j, &k) in indices.iter().enumerate() {
                    let p = self.dict.block_rows(k);
                    let seg = y.rows(self.row_offsets[j], p).clone_owned();
                    out += self.dict.block(k).apply_adjoint(&seg)
                        * Complex64::new(self.scale_for(k), 0.0);
                }
            }
            DrawnBlocks::Gaussian(blocks) => {
                let s = Complex64::new(1.0 / (self.m_scale as f64).sqrt(), 0.0);
                for (j, b) in blocks.iter().enumerate() {
                    let seg = y.rows(self.row_offsets[j], b.nrows()).clone_owned();
                    out += b.ad_mul(&seg) * s;
                }
            }
        }
        out
    }
}

/// Draws `m` blocks i.i.d. under `pi` and assembles the sensing operator.
///
/// Draw `j` uses the sub-stream `(seed, j)`; identical inputs produce an
/// identical operator. Sampling is with replacement. For Gaussian generators
/// `pi` is ignored and each draw is a fresh block scaled by `1/sqrt(m)`.
pub fn draw_blocks(
    dict: &Arc<BlockDictionary>,
    pi: &DrawingDistribution,
    m: usize,
    seed: u64,
) -> Result<SampledOperator> {
    if m == 0 {
        return Err(Error::InvalidArgument("m must be >= 1".into()));
    }
    if dict.is_gaussian() {
        let blocks: Result<Vec<_>> = (0..m)
            .map(|j| dict.draw_gaussian(seeding::derive_seed(seed, &[j as u64])))
            .collect();
        return Ok(SampledOperator::build(
            dict.clone(),
            None,
            DrawnBlocks::Gaussian(blocks?),
            m,
        ));
    }
    if pi.len() != dict.num_blocks() {
        return Err(Error::InvalidDistribution(format!(
            "distribution over {} blocks does not match dictionary with {} blocks",
            pi.len(),
            dict.num_blocks()
        )));
    }
    let indices: Vec<usize> = (0..m)
        .map(|j| {
            let u: f64 = seeding::rng_from(seed, &[j as u64]).gen();
            pi.index_from_uniform(u)
        })
        .collect();
    Ok(SampledOperator::build(
        dict.clone(),
        Some(pi.clone()),
        DrawnBlocks::Deterministic(indices),
        m,
    ))
}

/// Assembles the operator for an explicit list of drawn indices (no
/// randomness). `m_scale` is the `m` used in the `1/sqrt(m pi)` rescale;
/// passing `indices.len()` gives the ordinary stacked operator.
pub fn from_indices(
    dict: &Arc<BlockDictionary>,
    pi: &DrawingDistribution,
    indices: &[usize],
    m_scale: usize,
) -> Result<SampledOperator> {
    if dict.is_gaussian() {
        return Err(Error::WrongDictionaryKind(
            "explicit index sampling requires a deterministic-finite dictionary".into(),
        ));
    }
    if indices.is_empty() || m_scale == 0 {
        return Err(Error::InvalidArgument(
            "need at least one drawn index".into(),
        ));
    }
    if pi.len() != dict.num_blocks() {
        return Err(Error::InvalidDistribution(
            "distribution length mismatch".into(),
        ));
    }
    if let Some(&k) = indices.iter().find(|&&k| k >= dict.num_blocks()) {
        return Err(Error::InvalidArgument(format!(
            "drawn index {k} out of range"
        )));
    }
    Ok(SampledOperator::build(
        dict.clone(),
        Some(pi.clone()),
        DrawnBlocks::Deterministic(indices.to_vec()),
        m_scale,
    ))
}

/// Isolated measurements: draws `m` single rows of `a0` under `p`, exactly
/// [`draw_blocks`] on the singleton-block partition of `a0`.
pub fn isolated_sampler(
    a0: DynOperator,
    p: &DrawingDistribution,
    m: usize,
    seed: u64,
) -> Result<SampledOperator> {
    if p.len() != a0.rows() {
        return Err(Error::InvalidDistribution(format!(
            "row distribution over {} rows does not match transform with {} rows",
            p.len(),
            a0.rows()
        )));
    }
    let dict = Arc::new(crate::blocks::singleton_partition(a0)?);
    draw_blocks(&dict, p, m, seed)
}

/// Renders a sampled k-space mask as an ASCII PGM (P2) image, 255 for
/// sampled grid points and 0 elsewhere. Grid point `(row r, col c)` of the
/// `sqrt_n x sqrt_n` frequency grid is base row `r * sqrt_n + c`.
pub fn write_pgm(mask: &[bool], sqrt_n: usize, comment: Option<&str>) -> Result<String> {
    if mask.len() != sqrt_n * sqrt_n {
        return Err(Error::InvalidArgument(format!(
            "mask of length {} is not a {sqrt_n} x {sqrt_n} grid",
            mask.len()
        )));
    }
    let mut out = String::from("P2\n");
    if let Some(c) = comment {
        for line in c.lines() {
            out.push_str("# ");
            out.push_str(line);
            out.push('\n');
        }
    }
    out.push_str(&format!("{sqrt_n} {sqrt_n}\n255\n"));
    for r in 0..sqrt_n {
        let row: Vec<&str> = (0..sqrt_n)
            .map(|c| if mask[r * sqrt_n + c] { "255" } else { "0" })
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    Ok(out)
}
