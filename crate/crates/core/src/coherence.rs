//! Intra/inter-support block-coherence quantities.
//!
//! For a dictionary `{B_k}` drawn under `Pi` (so the random block is
//! `B = B_k / sqrt(pi_k)` with probability `pi_k`) and a support `S` of size
//! `s`, the module computes the smallest constants with
//!
//! * `mu1(S)`: `||B_S* B_S||_{2->2} <= mu1`, intra-support coherence,
//! * `mu2(S)`: `sqrt(s) max_{i in S^c} ||B_S* B e_i||_2 <= mu2`,
//! * `mu3(S)`: `s max_{i in S^c} ||E[B_S* (B e_i)(B e_i)* B_S]||_{2->2} <= mu3`,
//! * `gamma(S) = max(mu1, mu2, mu3)`,
//!
//! plus the crude support-free bound `mu4 = max_k ||B_k* B_k||_{1->inf}/pi_k`
//! (which dominates: `gamma(S) <= s mu4`), the drawing distribution that
//! minimizes the `s mu4` surrogate, the block-count bound of the recovery
//! guarantee, and the `Upsilon` comparison quantity used by the competing
//! row-renormalized criterion.
//!
//! Deterministic dictionaries are handled exactly (max over blocks, dense
//! Hermitian eigensolves). Gaussian generators report Monte-Carlo
//! high-quantile estimates for `mu1`, `mu2` and the closed form `s/p` for
//! `mu3`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::blocks::{BlockDictionary, DictionaryKind, DrawingDistribution};
use crate::error::{Error, Result};
use crate::operators::LinearOperator;
use crate::seeding;

/// A strictly increasing set of indices in `{0, .., n-1}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SupportSet {
    indices: Vec<usize>,
    n: usize,
}

impl SupportSet {
    pub fn new(n: usize, mut indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidSupport("support must be nonempty".into()));
        }
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidSupport("duplicate indices".into()));
        }
        if *indices.last().unwrap() >= n {
            return Err(Error::InvalidSupport(format!(
                "index {} out of range for n = {n}",
                indices.last().unwrap()
            )));
        }
        Ok(Self { indices, n })
    }

    /// Uniformly random support of size `s`.
    pub fn random(n: usize, s: usize, rng: &mut impl rand::Rng) -> Result<Self> {
        if s == 0 || s > n {
            return Err(Error::InvalidSupport(format!(
                "cannot draw s = {s} of n = {n}"
            )));
        }
        let indices = rand::seq::index::sample(rng, n, s).into_vec();
        Self::new(n, indices)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }

    /// The complement `S^c` in order.
    pub fn complement(&self) -> Vec<usize> {
        (0..self.n).filter(|i| !self.contains(*i)).collect()
    }
}

/// How the coherence values were obtained.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum ComputationMode {
    /// Exact maxima over a deterministic-finite dictionary.
    Exact,
    /// Empirical quantiles over Monte-Carlo draws of a Gaussian generator.
    MonteCarlo { trials: usize, quantile: f64 },
}

/// Per-quantity argmax indices, for diagnostics.
#[derive(Clone, Debug, Default, Serialize)]
pub struct ArgmaxInfo {
    /// Block attaining `mu1`.
    pub mu1_block: Option<usize>,
    /// Block and off-support column attaining `mu2`.
    pub mu2_block: Option<usize>,
    pub mu2_col: Option<usize>,
    /// Off-support column attaining `mu3`.
    pub mu3_col: Option<usize>,
    /// Block attaining `mu4`.
    pub mu4_block: Option<usize>,
}

/// The full coherence report for one `(dictionary, Pi, S)` triple.
#[derive(Clone, Debug, Serialize)]
pub struct CoherenceReport {
    pub mu1: f64,
    pub mu2: f64,
    pub mu3: f64,
    /// Support-free bound; absent for Gaussian generators where no exact
    /// `||B* B||_{1->inf}` bound exists.
    pub mu4: Option<f64>,
    pub gamma: f64,
    pub s: usize,
    #[serde(flatten)]
    pub mode: ComputationMode,
    pub argmax: ArgmaxInfo,
}

/// Side length above which Gram norms switch from a dense eigensolve to
/// power iteration.
const DENSE_EIG_MAX_SIZE: usize = 512;

/// Largest eigenvalue of a Hermitian PSD matrix: dense eigensolve up to
/// [`DENSE_EIG_MAX_SIZE`], power iteration beyond.
fn hermitian_lambda_max(m: DMatrix<Complex64>) -> f64 {
    if m.nrows() == 1 {
        return m[(0, 0)].re.max(0.0);
    }
    if m.nrows() <= DENSE_EIG_MAX_SIZE {
        let eig = nalgebra::SymmetricEigen::new(m);
        return eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    }
    let mut rng = seeding::rng(0x6772_616d_6d61_786c);
    let mut v = crate::operators::random_unit_vector(&mut rng, m.nrows());
    let mut lambda = 0.0f64;
    for _ in 0..crate::operators::POWER_ITERATION_CAP {
        let w = &m * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = v.dotc(&w).re.max(0.0);
        v = w / Complex64::new(norm, 0.0);
        if (next - lambda).abs() <= 1e-10 * next.max(f64::MIN_POSITIVE) {
            return next;
        }
        lambda = next;
    }
    lambda
}

fn check_deterministic(dict: &BlockDictionary, pi: &DrawingDistribution) -> Result<()> {
    if dict.is_gaussian() {
        return Err(Error::WrongDictionaryKind(
            "exact coherence requires a deterministic-finite dictionary".into(),
        ));
    }
    if pi.len() != dict.num_blocks() {
        return Err(Error::InvalidDistribution(format!(
            "distribution over {} blocks does not match dictionary with {} blocks",
            pi.len(),
            dict.num_blocks()
        )));
    }
    Ok(())
}

fn check_support(dict: &BlockDictionary, support: &SupportSet) -> Result<()> {
    if support.n() != dict.n() {
        return Err(Error::InvalidSupport(format!(
            "support over n = {} does not match dictionary n = {}",
            support.n(),
            dict.n()
        )));
    }
    Ok(())
}

/// Columns of a dense block restricted to an index list, as a `p x |idx|`
/// matrix.
fn restrict_columns(block: &DMatrix<Complex64>, idx: &[usize]) -> DMatrix<Complex64> {
    let mut out = DMatrix::zeros(block.nrows(), idx.len());
    for (j, &i) in idx.iter().enumerate() {
        out.set_column(j, &block.column(i));
    }
    out
}

/// `mu1(S)`: worst rescaled intra-support Gram norm,
/// `max_k ||B_{k,S}* B_{k,S}||_{2->2} / pi_k`.
pub fn mu1(dict: &BlockDictionary, pi: &DrawingDistribution, support: &SupportSet) -> Result<f64> {
    Ok(mu1_with_argmax(dict, pi, support)?.0)
}

fn mu1_with_argmax(
    dict: &BlockDictionary,
    pi: &DrawingDistribution,
    support: &SupportSet,
) -> Result<(f64, usize)> {
    check_deterministic(dict, pi)?;
    check_support(dict, support)?;
    let mut best = (0.0f64, 0usize);
    for k in 0..dict.num_blocks() {
        let b = dict.materialize_block(k);
        let bs = restrict_columns(&b, support.indices());
        let val = hermitian_lambda_max(bs.ad_mul(&bs)) / pi.prob(k);
        if val > best.0 {
            best = (val, k);
        }
    }
    Ok(best)
}

/// `mu2(S)`: `sqrt(s) max_k max_{i in S^c} ||B_{k,S}* B_k e_i||_2 / pi_k`.
pub fn mu2(dict: &BlockDictionary, pi: &DrawingDistribution, support: &SupportSet) -> Result<f64> {
    Ok(mu2_with_argmax(dict, pi, support)?.0)
}

fn mu2_with_argmax(
    dict: &BlockDictionary,
    pi: &DrawingDistribution,
    support: &SupportSet,
) -> Result<(f64, usize, usize)> {
    check_deterministic(dict, pi)?;
    check_support(dict, support)?;
    let complement = support.complement();
    if complement.is_empty() {
        return Err(Error::InvalidSupport(
            "mu2 requires a nonempty complement".into(),
        ));
    }
    let sqrt_s = (support.len() as f64).sqrt();
    let mut best = (0.0f64, 0usize, 0usize);
    for k in 0..dict.num_blocks() {
        let b = dict.materialize_block(k);
        let bs = restrict_columns(&b, support.indices());
        // cross[:, j] = B_{k,S}* B_k e_{complement[j]}
        let bc = restrict_columns(&b, &complement);
        let cross = bs.ad_mul(&bc);
        for (j, &i) in complement.iter().enumerate() {
            let val = sqrt_s * cross.column(j).norm() / pi.prob(k);
            if val > best.0 {
                best = (val, k, i);
            }
        }
    }
    Ok(best)
}

/// `mu3(S)`: exact expectation over the drawing distribution,
/// `s max_{i in S^c} || sum_k B_{k,S}* (B_k e_i)(B_k e_i)* B_{k,S} / pi_k ||_{2->2}`.
///
/// For Gaussian generators use [`mu3_gaussian`].
pub fn mu3(dict: &BlockDictionary, pi: &DrawingDistribution, support: &SupportSet) -> Result<f64> {
    Ok(mu3_with_argmax(dict, pi, support)?.0)
}

fn mu3_with_argmax(
    dict: &BlockDictionary,
    pi: &DrawingDistribution,
    support: &SupportSet,
) -> Result<(f64, usize)> {
    check_deterministic(dict, pi)?;
    check_support(dict, support)?;
    let complement = support.complement();
    if complement.is_empty() {
        return Err(Error::InvalidSupport(
            "mu3 requires a nonempty complement".into(),
        ));
    }
    let s = support.len();
    // Accumulate the rank-one sums for every off-support column.
    let mut sums: Vec<DMatrix<Complex64>> =
        complement.iter().map(|_| DMatrix::zeros(s, s)).collect();
    for k in 0..dict.num_blocks() {
        let b = dict.materialize_block(k);
        let bs = restrict_columns(&b, support.indices());
        let bc = restrict_columns(&b, &complement);
        // c_j = B_{k,S}* B_k e_{complement[j]}
        let cross = bs.ad_mul(&bc);
        let inv_pi = 1.0 / pi.prob(k);
        for (j, sum) in sums.iter_mut().enumerate() {
            let c = cross.column(j);
            // sum += c c* / pi_k
            for r in 0..s {
                for q in 0..s {
                    sum[(r, q)] += c[r] * c[q].conj() * inv_pi;
                }
            }
        }
    }
    let mut best = (0.0f64, 0usize);
    for (j, m) in sums.into_iter().enumerate() {
        let val = s as f64 * hermitian_lambda_max(m);
        if val > best.0 {
            best = (val, complement[j]);
        }
    }
    Ok(best)
}

/// Closed-form `mu3 = s / p` for the Gaussian generator.
pub fn mu3_gaussian(dict: &BlockDictionary, s: usize) -> Result<f64> {
    match dict.kind() {
        DictionaryKind::Gaussian { p } => Ok(s as f64 / *p as f64),
        DictionaryKind::DeterministicFinite => Err(Error::WrongDictionaryKind(
            "mu3_gaussian requires a Gaussian generator".into(),
        )),
    }
}

/// `||B_k* B_k||_{1->inf}` of one block, the largest absolute entry of the
/// Gram matrix, without any `pi` rescale.
pub fn block_gram_sup_norm(dict: &BlockDictionary, k: usize) -> f64 {
    let b = dict.materialize_block(k);
    let gram = b.ad_mul(&b);
    gram.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// `mu4`: `max_k ||B_k* B_k||_{1->inf} / pi_k`.
pub fn mu4(dict: &BlockDictionary, pi: &DrawingDistribution) -> Result<f64> {
    Ok(mu4_with_argmax(dict, pi)?.0)
}

fn mu4_with_argmax(dict: &BlockDictionary, pi: &DrawingDistribution) -> Result<(f64, usize)> {
    check_deterministic(dict, pi)?;
    let mut best = (0.0f64, 0usize);
    for k in 0..dict.num_blocks() {
        let val = block_gram_sup_norm(dict, k) / pi.prob(k);
        if val > best.0 {
            best = (val, k);
        }
    }
    Ok(best)
}

/// Default number of Monte-Carlo draws for Gaussian quantile estimates.
pub const GAUSSIAN_MC_TRIALS: usize = 10_000;
/// Default quantile reported for stochastic `mu1`/`mu2` bounds.
pub const GAUSSIAN_MC_QUANTILE: f64 = 0.99;

/// Full report for a deterministic dictionary: exact `mu1..mu4` and `gamma`.
pub fn gamma(
    dict: &BlockDictionary,
    pi: &DrawingDistribution,
    support: &SupportSet,
) -> Result<CoherenceReport> {
    let (m1, k1) = mu1_with_argmax(dict, pi, support)?;
    let (m2, k2, i2) = mu2_with_argmax(dict, pi, support)?;
    let (m3, i3) = mu3_with_argmax(dict, pi, support)?;
    let (m4, k4) = mu4_with_argmax(dict, pi)?;
    Ok(CoherenceReport {
        mu1: m1,
        mu2: m2,
        mu3: m3,
        mu4: Some(m4),
        gamma: m1.max(m2).max(m3),
        s: support.len(),
        mode: ComputationMode::Exact,
        argmax: ArgmaxInfo {
            mu1_block: Some(k1),
            mu2_block: Some(k2),
            mu2_col: Some(i2),
            mu3_col: Some(i3),
            mu4_block: Some(k4),
        },
    })
}

/// Report for a Gaussian generator: `mu1`, `mu2` as empirical quantiles over
/// seeded draws, `mu3 = s/p` exact, no `mu4`.
pub fn gamma_gaussian(
    dict: &BlockDictionary,
    support: &SupportSet,
    trials: usize,
    quantile: f64,
    seed: u64,
) -> Result<CoherenceReport> {
    let DictionaryKind::Gaussian { .. } = dict.kind() else {
        return Err(Error::WrongDictionaryKind(
            "gamma_gaussian requires a Gaussian generator".into(),
        ));
    };
    check_support(dict, support)?;
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&quantile) {
        return Err(Error::InvalidArgument("quantile must lie in [0, 1]".into()));
    }
    let complement = support.complement();
    if complement.is_empty() {
        return Err(Error::InvalidSupport(
            "mu2 requires a nonempty complement".into(),
        ));
    }
    let sqrt_s = (support.len() as f64).sqrt();
    let mut m1_samples = Vec::with_capacity(trials);
    let mut m2_samples = Vec::with_capacity(trials);
    for t in 0..trials {
        let b = dict.draw_gaussian(seeding::derive_seed(seed, &[t as u64]))?;
        let bs = restrict_columns(&b, support.indices());
        m1_samples.push(hermitian_lambda_max(bs.ad_mul(&bs)));
        let bc = restrict_columns(&b, &complement);
        let cross = bs.ad_mul(&bc);
        let max_col = (0..complement.len())
            .map(|j| cross.column(j).norm())
            .fold(0.0, f64::max);
        m2_samples.push(sqrt_s * max_col);
    }
    let m1 = empirical_quantile(&mut m1_samples, quantile);
    let m2 = empirical_quantile(&mut m2_samples, quantile);
    let m3 = mu3_gaussian(dict, support.len())?;
    Ok(CoherenceReport {
        mu1: m1,
        mu2: m2,
        mu3: m3,
        mu4: None,
        gamma: m1.max(m2).max(m3),
        s: support.len(),
        mode: ComputationMode::MonteCarlo { trials, quantile },
        argmax: ArgmaxInfo::default(),
    })
}

/// Empirical quantile by sorting (lower interpolation).
pub fn empirical_quantile(samples: &mut [f64], q: f64) -> f64 {
    assert!(!samples.is_empty());
    samples.sort_by(|a, b| a.partial_cmp(b).expect("NaN sample"));
    let idx = ((samples.len() as f64 - 1.0) * q).floor() as usize;
    samples[idx.min(samples.len() - 1)]
}

/// The drawing distribution minimizing `max_j ||B_j* B_j||_{1->inf} / pi_j`:
/// `pi_j* = ||B_j* B_j||_{1->inf} / sum_k ||B_k* B_k||_{1->inf}`.
pub fn optimal_pi(dict: &BlockDictionary) -> Result<DrawingDistribution> {
    if dict.is_gaussian() {
        return Err(Error::WrongDictionaryKind(
            "optimal_pi requires a deterministic-finite dictionary".into(),
        ));
    }
    let norms: Vec<f64> = (0..dict.num_blocks())
        .map(|k| block_gram_sup_norm(dict, k))
        .collect();
    let total: f64 = norms.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidArgument(
            "all block Gram norms vanish; cannot build a drawing distribution".into(),
        ));
    }
    if let Some(k) = norms.iter().position(|&v| v <= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "block {k} has a vanishing Gram norm; remove it before optimizing"
        )));
    }
    DrawingDistribution::new(norms.iter().map(|v| v / total).collect())
}

/// Constant of the block-count bound as stated with the recovery guarantee.
pub const BLOCK_COUNT_CONSTANT: f64 = 3.0 * 534.0;
/// Constant appearing in the underlying two-term estimate.
pub const TWO_TERM_CONSTANT: f64 = 534.0;

/// Block-count bound `c * gamma * ln(4n) * ln(12 / eps)` (natural logs).
///
/// Returns a real number; callers round up if they need an integer count.
pub fn required_blocks(gamma: f64, n: usize, eps: f64, c: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&eps) || eps == 0.0 {
        return Err(Error::InvalidArgument("eps must lie in (0, 1)".into()));
    }
    Ok(c * gamma * (4.0 * n as f64).ln() * (12.0 / eps).ln())
}

/// The sharper two-term form of the block-count bound,
/// `c * gamma * (2 ln(4n) ln(12/eps) + ln(s) ln(12 e ln(s) / eps))`,
/// customarily used with [`TWO_TERM_CONSTANT`]. The second term vanishes for
/// `s = 1`.
pub fn required_blocks_two_term(gamma: f64, n: usize, s: usize, eps: f64, c: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&eps) || eps == 0.0 {
        return Err(Error::InvalidArgument("eps must lie in (0, 1)".into()));
    }
    if s == 0 {
        return Err(Error::InvalidArgument("s must be >= 1".into()));
    }
    let log_s = (s as f64).ln();
    let second = if s == 1 {
        0.0
    } else {
        log_s * (12.0 * std::f64::consts::E * log_s / eps).ln()
    };
    Ok(c * gamma * (2.0 * (4.0 * n as f64).ln() * (12.0 / eps).ln() + second))
}

/// Row limit for exact sign-pattern enumeration in [`upsilon_pdg`].
pub const UPSILON_EXACT_MAX_ROWS: usize = 20;

/// Result of the `Upsilon` computation.
#[derive(Clone, Debug, Serialize)]
pub struct UpsilonReport {
    /// `||bar(B)_S||_{2->1}` (exact) or a certified upper bound.
    pub value: f64,
    /// Whether the value is the exact sign-enumeration maximum.
    pub exact: bool,
    /// Number of block rows.
    pub p: usize,
    pub s: usize,
    /// Row normalization applied before restriction.
    pub row_normalization: &'static str,
}

/// `Upsilon(S, B) = ||bar(B)_S||_{2->1}` where `bar(B)` is the block with
/// rows renormalized to unit l2 norm and columns restricted to `S`.
///
/// Evaluated through the dual characterization
/// `||M||_{2->1} = max_{sigma in {-1,+1}^p} ||M* sigma||_2`, enumerated
/// exactly for `p <=` [`UPSILON_EXACT_MAX_ROWS`] rows; above that the report
/// carries the certified bound `sqrt(p) ||M||_{2->2}` and is flagged inexact.
pub fn upsilon_pdg(block: &dyn LinearOperator, support: &SupportSet) -> Result<UpsilonReport> {
    if support.n() != block.cols() {
        return Err(Error::InvalidSupport(format!(
            "support over n = {} does not match block with {} columns",
            support.n(),
            block.cols()
        )));
    }
    let p = block.rows();
    let s = support.len();
    // Materialize the block row by row via the adjoint.
    let mut rows: Vec<DVector<Complex64>> = Vec::with_capacity(p);
    for j in 0..p {
        let col = block.apply_adjoint(&crate::operators::canonical_vector(p, j));
        rows.push(col.map(|v| v.conj()));
    }
    // Renormalize rows to unit l2 norm, then restrict columns to S.
    let mut m = DMatrix::<Complex64>::zeros(p, s);
    for (j, row) in rows.iter().enumerate() {
        let norm = row.norm();
        if norm == 0.0 {
            return Err(Error::InvalidArgument(format!("block row {j} is zero")));
        }
        for (c, &i) in support.indices().iter().enumerate() {
            m[(j, c)] = row[i] / norm;
        }
    }
    if p <= UPSILON_EXACT_MAX_ROWS {
        // max over sign patterns of ||M^H sigma||_2; sigma and -sigma agree,
        // so fix the first sign.
        let mut best = 0.0f64;
        for bits in 0..(1u64 << (p - 1)) {
            let mut acc = DVector::<Complex64>::zeros(s);
            for j in 0..p {
                let sign = if j == 0 {
                    1.0
                } else if (bits >> (j - 1)) & 1 == 1 {
                    -1.0
                } else {
                    1.0
                };
                for c in 0..s {
                    acc[c] += m[(j, c)].conj() * sign;
                }
            }
            best = best.max(acc.norm());
        }
        Ok(UpsilonReport {
            value: best,
            exact: true,
            p,
            s,
            row_normalization: "unit-l2",
        })
    } else {
        let spectral = crate::operators::dense_spectral_norm(&m);
        Ok(UpsilonReport {
            value: (p as f64).sqrt() * spectral,
            exact: false,
            p,
            s,
            row_normalization: "unit-l2",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::{gaussian_dictionary, line_blocks, partition_blocks, singleton_partition};
    use crate::operators::{
        block_diag_example, dft_operator, identity_operator, DenseOperator, DynOperator,
    };
    use approx::assert_abs_diff_eq;

    fn full_dictionary(a0: DynOperator) -> BlockDictionary {
        let n = a0.cols();
        partition_blocks(a0, &[(0..n).collect()]).unwrap()
    }

    #[test]
    fn support_set_validation() {
        assert!(SupportSet::new(8, vec![3, 1, 5]).is_ok());
        assert!(SupportSet::new(8, vec![1, 1]).is_err());
        assert!(SupportSet::new(8, vec![8]).is_err());
        assert!(SupportSet::new(8, vec![]).is_err());
        let s = SupportSet::new(6, vec![4, 0]).unwrap();
        assert_eq!(s.indices(), &[0, 4]);
        assert_eq!(s.complement(), vec![1, 2, 3, 5]);
    }

    #[test]
    fn single_block_orthogonal_dictionary() {
        // M = 1, pi = 1: B_S* B_S = Id_s so mu1 = 1, mu2 = mu3 = 0, gamma = 1.
        let dict = full_dictionary(dft_operator(8));
        let pi = DrawingDistribution::uniform(1).unwrap();
        let s = SupportSet::new(8, vec![1, 4, 6]).unwrap();
        let report = gamma(&dict, &pi, &s).unwrap();
        assert_abs_diff_eq!(report.mu1, 1.0, epsilon = 1e-12);
        assert!(report.mu2 <= 1e-10);
        assert!(report.mu3 <= 1e-10);
        assert_abs_diff_eq!(report.gamma, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn mu1_line_blocks_singleton_support() {
        // Line blocks of the 2D DFT, n = 16, uniform pi = 1/4, singleton S:
        // mu1 = (1/sqrt(n)) / (1/4) / ... = 1.
        let dict = line_blocks(dft_operator(4)).unwrap();
        let pi = DrawingDistribution::uniform(4).unwrap();
        let s = SupportSet::new(16, vec![5]).unwrap();
        assert_abs_diff_eq!(mu1(&dict, &pi, &s).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn mu_values_match_dense_oracle() {
        // Partition of dft(16) into 4 blocks, s = 3: compare against an
        // independent computation from the fully materialized stacked blocks.
        let sets: Vec<Vec<usize>> = (0..4).map(|j| (4 * j..4 * j + 4).collect()).collect();
        let dict = partition_blocks(dft_operator(16), &sets).unwrap();
        let pi = DrawingDistribution::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let sup = SupportSet::new(16, vec![2, 7, 11]).unwrap();
        let comp = sup.complement();

        let blocks: Vec<DMatrix<Complex64>> = (0..4).map(|k| dict.materialize_block(k)).collect();

        // mu1 oracle: eigenvalues of each restricted Gram.
        let mut m1 = 0.0f64;
        for (k, b) in blocks.iter().enumerate() {
            let bs = restrict_columns(b, sup.indices());
            let gram = bs.ad_mul(&bs);
            let eig = nalgebra::SymmetricEigen::new(gram);
            m1 = m1.max(eig.eigenvalues.max() / pi.prob(k));
        }
        assert_abs_diff_eq!(mu1(&dict, &pi, &sup).unwrap(), m1, epsilon = 1e-10);

        // mu2 oracle.
        let mut m2 = 0.0f64;
        for (k, b) in blocks.iter().enumerate() {
            let bs = restrict_columns(b, sup.indices());
            for &i in &comp {
                let col = b.column(i).clone_owned();
                let v = (bs.ad_mul(&DMatrix::from_columns(&[col]))).column(0).norm();
                m2 = m2.max((3.0f64).sqrt() * v / pi.prob(k));
            }
        }
        assert_abs_diff_eq!(mu2(&dict, &pi, &sup).unwrap(), m2, epsilon = 1e-10);

        // mu3 oracle.
        let mut m3 = 0.0f64;
        for &i in &comp {
            let mut acc = DMatrix::<Complex64>::zeros(3, 3);
            for (k, b) in blocks.iter().enumerate() {
                let bs = restrict_columns(b, sup.indices());
                let col = b.column(i).clone_owned();
                let c = bs.ad_mul(&DMatrix::from_columns(&[col]));
                let c = c.column(0);
                for r in 0..3 {
                    for q in 0..3 {
                        acc[(r, q)] += c[r] * c[q].conj() / pi.prob(k);
                    }
                }
            }
            let eig = nalgebra::SymmetricEigen::new(acc);
            m3 = m3.max(3.0 * eig.eigenvalues.max());
        }
        assert_abs_diff_eq!(mu3(&dict, &pi, &sup).unwrap(), m3, epsilon = 1e-10);
    }

    #[test]
    fn mu1_power_iteration_branch_above_dense_cutoff() {
        // s > 512 routes the Gram norm through power iteration; a full
        // orthogonal block gives exactly 1 either way.
        let n = 700;
        let dict = full_dictionary(dft_operator(n));
        let pi = DrawingDistribution::uniform(1).unwrap();
        let s = SupportSet::new(n, (0..600).collect()).unwrap();
        assert_abs_diff_eq!(mu1(&dict, &pi, &s).unwrap(), 1.0, epsilon = 1e-8);
    }

    #[test]
    fn mu1_matches_dense_oracle_at_n_256() {
        // Matrix-free coherence at the largest routine scale against a fully
        // materialized computation.
        let dict = line_blocks(dft_operator(16)).unwrap();
        let pi = DrawingDistribution::uniform(16).unwrap();
        let sup = SupportSet::new(256, vec![3, 77, 130]).unwrap();
        let fast = mu1(&dict, &pi, &sup).unwrap();
        let mut oracle = 0.0f64;
        for k in 0..16 {
            let b = dict.materialize_block(k);
            let bs = restrict_columns(&b, sup.indices());
            let eig = nalgebra::SymmetricEigen::new(bs.ad_mul(&bs));
            oracle = oracle.max(eig.eigenvalues.max() * 16.0);
        }
        assert_abs_diff_eq!(fast, oracle, epsilon = 1e-10);
    }

    #[test]
    fn mu2_vanishes_for_orthogonal_single_block_and_identity_partition() {
        let dict = full_dictionary(dft_operator(6));
        let pi = DrawingDistribution::uniform(1).unwrap();
        let s = SupportSet::new(6, vec![0, 3]).unwrap();
        assert!(mu2(&dict, &pi, &s).unwrap() <= 1e-10);

        let dict = partition_blocks(identity_operator(6), &[vec![0, 1, 2], vec![3, 4, 5]]).unwrap();
        let pi = DrawingDistribution::uniform(2).unwrap();
        assert!(mu2(&dict, &pi, &s).unwrap() <= 1e-12);
        assert!(mu3(&dict, &pi, &s).unwrap() <= 1e-12);
    }

    #[test]
    fn mu3_gaussian_closed_form() {
        let dict = gaussian_dictionary(4, 64).unwrap();
        assert_abs_diff_eq!(mu3_gaussian(&dict, 8).unwrap(), 2.0, epsilon = 0.0);
    }

    #[test]
    fn mu4_line_blocks_uniform_is_one() {
        // n = 256 line blocks: ||B_k* B_k||_{1->inf} = 1/16 and pi = 1/16.
        let dict = line_blocks(dft_operator(16)).unwrap();
        let pi = DrawingDistribution::uniform(16).unwrap();
        assert_abs_diff_eq!(mu4(&dict, &pi).unwrap(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn mu4_identity_partition_is_block_count() {
        let sets: Vec<Vec<usize>> = (0..3).map(|j| vec![2 * j, 2 * j + 1]).collect();
        let dict = partition_blocks(identity_operator(6), &sets).unwrap();
        let pi = DrawingDistribution::uniform(3).unwrap();
        assert_abs_diff_eq!(mu4(&dict, &pi).unwrap(), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn gram_sup_norm_matches_bruteforce_sup() {
        // ||G||_{1->inf} over the unit l1 ball is attained at a canonical
        // basis vector: max_j ||G e_j||_inf = max entry.
        let dict = line_blocks(dft_operator(3)).unwrap();
        let b = dict.materialize_block(1);
        let gram = b.ad_mul(&b);
        let brute = (0..gram.ncols())
            .map(|j| gram.column(j).iter().map(|z| z.norm()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        assert_abs_diff_eq!(block_gram_sup_norm(&dict, 1), brute, epsilon = 1e-14);
    }

    #[test]
    fn optimal_pi_one_plus_fourier() {
        // Singleton blocks of 1 ⊕ F_{n-1}: pi_0* = 1/2, the rest 1/(2(n-1)).
        let n = 8;
        let dict = singleton_partition(block_diag_example(n)).unwrap();
        let pi = optimal_pi(&dict).unwrap();
        assert_abs_diff_eq!(pi.prob(0), 0.5, epsilon = 1e-12);
        for j in 1..n {
            assert_abs_diff_eq!(pi.prob(j), 1.0 / (2.0 * (n as f64 - 1.0)), epsilon = 1e-12);
        }
    }

    #[test]
    fn optimal_pi_line_blocks_uniform_and_single_block() {
        let dict = line_blocks(dft_operator(4)).unwrap();
        let pi = optimal_pi(&dict).unwrap();
        for k in 0..4 {
            assert_abs_diff_eq!(pi.prob(k), 0.25, epsilon = 1e-12);
        }
        let single = full_dictionary(dft_operator(5));
        let pi = optimal_pi(&single).unwrap();
        assert_eq!(pi.len(), 1);
        assert_abs_diff_eq!(pi.prob(0), 1.0, epsilon = 0.0);
    }

    #[test]
    fn optimal_pi_minimizes_surrogate() {
        // The objective max_j norms_j / pi_j is constant across j at pi* and
        // strictly worse for perturbations.
        let sets: Vec<Vec<usize>> = vec![vec![0], vec![1, 2], vec![3, 4, 5, 6, 7]];
        let dict = partition_blocks(block_diag_example(8), &sets).unwrap();
        let norms: Vec<f64> = (0..3).map(|k| block_gram_sup_norm(&dict, k)).collect();
        let star = optimal_pi(&dict).unwrap();
        let objective = |pi: &[f64]| norms.iter().zip(pi).map(|(n, p)| n / p).fold(0.0, f64::max);
        let base = objective(star.probabilities());
        let per_j: Vec<f64> = norms
            .iter()
            .zip(star.probabilities())
            .map(|(n, p)| n / p)
            .collect();
        for v in &per_j {
            assert_abs_diff_eq!(*v, base, epsilon = 1e-9 * base.abs());
        }
        let mut rng = seeding::rng(31);
        for _ in 0..20 {
            let mut perturbed: Vec<f64> = star
                .probabilities()
                .iter()
                .map(|p| p * (1.0 + 0.3 * (rand::Rng::gen::<f64>(&mut rng) - 0.5)))
                .collect();
            let total: f64 = perturbed.iter().sum();
            perturbed.iter_mut().for_each(|p| *p /= total);
            assert!(objective(&perturbed) >= base - 1e-12);
        }
    }

    #[test]
    fn required_blocks_formula() {
        let v = required_blocks(1.0, 1024, 0.01, 1602.0).unwrap();
        let oracle = 1602.0 * (4096.0f64).ln() * (1200.0f64).ln();
        assert_abs_diff_eq!(v, oracle, epsilon = 1e-9 * oracle);
        assert!((v - 94_475.7).abs() < 1.0);
        assert_abs_diff_eq!(
            required_blocks(0.0, 64, 0.1, 1602.0).unwrap(),
            0.0,
            epsilon = 0.0
        );
        let single = required_blocks(1.5, 64, 0.1, 1602.0).unwrap();
        let double = required_blocks(3.0, 64, 0.1, 1602.0).unwrap();
        assert_abs_diff_eq!(double, 2.0 * single, epsilon = 1e-9 * double);
        assert!(required_blocks(1.0, 64, 0.0, 1602.0).is_err());
        // two-term variant degrades gracefully at s = 1
        let t = required_blocks_two_term(1.0, 64, 1, 0.1, 534.0).unwrap();
        assert!(t.is_finite() && t > 0.0);
    }

    #[test]
    fn upsilon_small_cases() {
        // Single unit-norm row, singleton S with entry of modulus a.
        let row =
            DMatrix::from_row_slice(1, 2, &[Complex64::new(0.6, 0.0), Complex64::new(0.0, 0.8)]);
        let op = DenseOperator::new(row);
        let s = SupportSet::new(2, vec![1]).unwrap();
        let rep = upsilon_pdg(&op, &s).unwrap();
        assert!(rep.exact);
        assert_abs_diff_eq!(rep.value, 0.8, epsilon = 1e-12);

        // 2x2 identity block, S = both columns: Upsilon = sqrt(2).
        let op = DenseOperator::from_real(DMatrix::identity(2, 2));
        let s = SupportSet::new(2, vec![0, 1]).unwrap();
        let rep = upsilon_pdg(&op, &s).unwrap();
        assert_abs_diff_eq!(rep.value, 2.0f64.sqrt(), epsilon = 1e-12);

        // zero row rejected
        let op = DenseOperator::new(DMatrix::zeros(1, 2));
        assert!(upsilon_pdg(&op, &SupportSet::new(2, vec![0]).unwrap()).is_err());
    }

    #[test]
    fn upsilon_matches_bruteforce_enumeration() {
        // Line block of dft ⊗ dft, n = 16, |S| = 2, against an independent
        // full 2^p enumeration (no shared sign-fixing shortcut).
        let dict = line_blocks(dft_operator(4)).unwrap();
        let block = dict.block(2).clone();
        let s = SupportSet::new(16, vec![3, 9]).unwrap();
        let rep = upsilon_pdg(&*block, &s).unwrap();

        let b = dict.materialize_block(2);
        let p = b.nrows();
        let mut m = DMatrix::<Complex64>::zeros(p, 2);
        for (c, &i) in s.indices().iter().enumerate() {
            for j in 0..p {
                let row_norm = b.row(j).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                m[(j, c)] = b[(j, i)] / row_norm;
            }
        }
        let mut brute = 0.0f64;
        for bits in 0..(1u64 << p) {
            let mut acc = DVector::<Complex64>::zeros(2);
            for j in 0..p {
                let sign = if (bits >> j) & 1 == 1 { -1.0 } else { 1.0 };
                for c in 0..2 {
                    acc[c] += m[(j, c)].conj() * sign;
                }
            }
            brute = brute.max(acc.norm());
        }
        assert_abs_diff_eq!(rep.value, brute, epsilon = 1e-10);
    }

    #[test]
    fn upsilon_large_blocks_fall_back_to_certified_bound() {
        let op = DenseOperator::from_real(DMatrix::identity(24, 24));
        let s = SupportSet::new(24, (0..4).collect()).unwrap();
        let rep = upsilon_pdg(&op, &s).unwrap();
        assert!(!rep.exact);
        // ||M||_{2->1} <= sqrt(p) ||M||_{2->2} always holds.
        assert!(rep.value >= 1.0);
    }

    #[test]
    fn mu1_at_least_one_for_isotropic_dictionaries() {
        let mut rng = seeding::rng(77);
        for trial in 0..20 {
            let n = 8;
            let cut = 1 + (trial % 6);
            let sets = vec![(0..cut).collect::<Vec<_>>(), (cut..n).collect::<Vec<_>>()];
            let dict = partition_blocks(dft_operator(n), &sets).unwrap();
            let pi = DrawingDistribution::uniform(2).unwrap();
            let s = SupportSet::random(n, 1 + trial % 4, &mut rng).unwrap();
            assert!(mu1(&dict, &pi, &s).unwrap() >= 1.0 - 1e-10);
        }
    }

    #[test]
    fn mu1_monotone_under_support_growth() {
        let dict = line_blocks(dft_operator(4)).unwrap();
        let pi = DrawingDistribution::uniform(4).unwrap();
        let chain = vec![vec![2], vec![2, 5], vec![2, 5, 9], vec![2, 5, 9, 14]];
        let mut last = 0.0;
        for ids in chain {
            let s = SupportSet::new(16, ids).unwrap();
            let v = mu1(&dict, &pi, &s).unwrap();
            assert!(v >= last - 1e-12);
            last = v;
        }
    }

    #[test]
    fn gamma_bounded_by_s_mu4() {
        let mut rng = seeding::rng(55);
        for trial in 0..25 {
            let dict: BlockDictionary = match trial % 3 {
                0 => line_blocks(dft_operator(4)).unwrap(),
                1 => {
                    let sets: Vec<Vec<usize>> =
                        (0..4).map(|j| (4 * j..4 * j + 4).collect()).collect();
                    partition_blocks(dft_operator(16), &sets).unwrap()
                }
                _ => crate::blocks::rows_and_columns_blocks(4).unwrap(),
            };
            let m = dict.num_blocks();
            let pi = if trial % 2 == 0 {
                DrawingDistribution::uniform(m).unwrap()
            } else {
                let mut w: Vec<f64> = (0..m)
                    .map(|_| rand::Rng::gen_range(&mut rng, 0.2..1.0))
                    .collect();
                let t: f64 = w.iter().sum();
                w.iter_mut().for_each(|v| *v /= t);
                DrawingDistribution::new(w).unwrap()
            };
            let s_len = 1 + (trial % 5);
            let sup = SupportSet::random(16, s_len, &mut rng).unwrap();
            let rep = gamma(&dict, &pi, &sup).unwrap();
            let bound = sup.len() as f64 * rep.mu4.unwrap();
            assert!(
                rep.gamma <= bound + 1e-9,
                "gamma {} > s mu4 {} (trial {trial})",
                rep.gamma,
                bound
            );
        }
    }

    #[test]
    fn gaussian_gamma_report_scales_like_s_over_p() {
        let dict = gaussian_dictionary(4, 64).unwrap();
        let s = SupportSet::new(64, (0..8).collect()).unwrap();
        let rep = gamma_gaussian(&dict, &s, 2000, 0.99, 7).unwrap();
        assert_abs_diff_eq!(rep.mu3, 2.0, epsilon = 0.0);
        assert!(rep.mu4.is_none());
        // gamma = O(s log(s) / p): generous bracket around s/p = 2.
        let s_over_p = 2.0;
        let log_s = (8.0f64).ln();
        assert!(rep.gamma >= s_over_p - 1e-12);
        assert!(
            rep.gamma <= 10.0 * s_over_p * log_s,
            "gamma {} far above s log(s)/p scale",
            rep.gamma
        );
        match rep.mode {
            ComputationMode::MonteCarlo { trials, quantile } => {
                assert_eq!(trials, 2000);
                assert_abs_diff_eq!(quantile, 0.99, epsilon = 0.0);
            }
            _ => panic!("expected monte-carlo mode"),
        }
    }

    #[test]
    fn coherence_report_serializes_fixed_fields() {
        let dict = line_blocks(dft_operator(4)).unwrap();
        let pi = DrawingDistribution::uniform(4).unwrap();
        let s = SupportSet::new(16, vec![1, 6]).unwrap();
        let rep = gamma(&dict, &pi, &s).unwrap();
        let json = serde_json::to_value(&rep).unwrap();
        for key in ["mu1", "mu2", "mu3", "mu4", "gamma", "s", "mode"] {
            assert!(json.get(key).is_some(), "missing key {key}");
        }
        assert_eq!(json["mode"], "exact");

        let gdict = gaussian_dictionary(2, 10).unwrap();
        let gsup = SupportSet::new(10, vec![0, 3]).unwrap();
        let grep_ = gamma_gaussian(&gdict, &gsup, 50, 0.99, 1).unwrap();
        let gjson = serde_json::to_value(&grep_).unwrap();
        assert_eq!(gjson["mode"], "monte-carlo");
        assert_eq!(gjson["trials"], 50);
        assert!(gjson["mu4"].is_null());
        assert!((gjson["quantile"].as_f64().unwrap() - 0.99).abs() < 1e-12);
    }
}
