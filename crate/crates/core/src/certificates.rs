//! Exact-recovery certification: the inexact-duality conditions, the golfing
//! construction of the dual vector, and rank-based identifiability tests.
//!
//! A planted signal `x` supported on `S` is certified as the unique
//! basis-pursuit minimizer when
//!
//! 1. `||(A_S* A_S)^{-1}||_{2->2} <= 2`,
//! 2. `max_{i in S^c} ||A_S* A e_i||_2 <= 1`,
//! 3. a vector `v` in the row space of `A` has `||v_S - sign(x_S)||_2 <= 1/4`,
//! 4. and `||v_{S^c}||_inf <= 1/4`.
//!
//! The golfing scheme builds `v` from disjoint consecutive groups of the
//! drawn blocks: starting from `v^(0) = 0`,
//! `v^(l) = (m/m_l) A^(l)* A^(l)_S (e - v_S^(l-1)) + v^(l-1)`, so the
//! on-support error `w^(l) = e - v_S^(l)` contracts as
//! `w^(l) = (Id - (m/m_l) A_S^(l)* A_S^(l)) w^(l-1)`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::coherence::SupportSet;
use crate::error::{Error, Result};
use crate::operators::{canonical_vector, DenseOperator, LinearOperator};
use crate::sampling::SampledOperator;
use crate::seeding;
use crate::solver::SparseSignal;

/// Smallest and largest eigenvalue of a Hermitian matrix.
fn hermitian_eig_range(m: DMatrix<Complex64>) -> (f64, f64) {
    if m.nrows() == 1 {
        let v = m[(0, 0)].re;
        return (v, v);
    }
    let eig = nalgebra::SymmetricEigen::new(m);
    let min = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let max = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

/// Materializes `A_S` (columns of `A` on the support) as a dense matrix.
fn restricted_columns(a: &dyn LinearOperator, support: &SupportSet) -> DMatrix<Complex64> {
    let mut out = DMatrix::zeros(a.rows(), support.len());
    for (j, &i) in support.indices().iter().enumerate() {
        out.set_column(j, &a.apply(&canonical_vector(a.cols(), i)));
    }
    out
}

/// The two spectral conditions of inexact duality.
#[derive(Clone, Debug, Serialize)]
pub struct DualityConditions {
    /// `||(A_S* A_S)^{-1}||_{2->2}`; infinite when the Gram is singular.
    pub inv_norm: f64,
    /// `max_{i in S^c} ||A_S* A e_i||_2`.
    pub max_col: f64,
    pub inv_norm_ok: bool,
    pub max_col_ok: bool,
}

/// Evaluates the spectral conditions densely. A singular on-support Gram is
/// reported as `inv_norm = +inf` with a failed flag, not an error.
pub fn duality_conditions(
    a: &dyn LinearOperator,
    support: &SupportSet,
) -> Result<DualityConditions> {
    if support.n() != a.cols() {
        return Err(Error::InvalidSupport(format!(
            "support over n = {} does not match operator with {} columns",
            support.n(),
            a.cols()
        )));
    }
    let a_s = restricted_columns(a, support);
    let gram = a_s.ad_mul(&a_s);
    let (lambda_min, lambda_max) = hermitian_eig_range(gram);
    let inv_norm = if lambda_min <= 1e-12 * lambda_max.max(1.0) {
        f64::INFINITY
    } else {
        1.0 / lambda_min
    };
    // Row i of A* A_S is the adjoint of A_S* A e_i.
    let mut cross = DMatrix::<Complex64>::zeros(a.cols(), support.len());
    for j in 0..support.len() {
        cross.set_column(j, &a.apply_adjoint(&a_s.column(j).clone_owned()));
    }
    let mut max_col = 0.0f64;
    for i in support.complement() {
        let norm: f64 = cross
            .row(i)
            .iter()
            .map(|z| z.norm_sqr())
            .sum::<f64>()
            .sqrt();
        max_col = max_col.max(norm);
    }
    Ok(DualityConditions {
        inv_norm,
        max_col,
        inv_norm_ok: inv_norm <= 2.0,
        max_col_ok: max_col <= 1.0,
    })
}

/// Group sizes and analysis targets for the golfing construction.
///
/// Produced by [`golfing_schedule`]; the targets `r_l`, `t_l` are analysis
/// quantities echoed into reports, the construction itself only uses the
/// group sizes.
#[derive(Clone, Debug, Serialize)]
pub struct GolfingSchedule {
    pub group_sizes: Vec<usize>,
    /// Contraction targets: `1/(4 sqrt(ln 4n))` for the first two groups,
    /// `1/4` afterwards.
    pub contraction_targets: Vec<f64>,
    /// Off-support targets: `1/(8 sqrt(s))` for the first two groups,
    /// `ln(4n)/(8 sqrt(s))` afterwards.
    pub off_support_targets: Vec<f64>,
}

impl GolfingSchedule {
    pub fn num_groups(&self) -> usize {
        self.group_sizes.len()
    }
}

/// Number of golfing groups: `L = 2 + ceil(ln(s) / (2 ln 2))`.
pub fn golfing_group_count(s: usize) -> usize {
    assert!(s >= 1);
    2 + ((s as f64).ln() / (2.0 * 2.0f64.ln())).ceil() as usize
}

/// Splits `m` drawn blocks into `L` groups with weighted proportions:
/// the first two groups carry weight `ln(4n) ln(2/eps)` each, the remaining
/// groups weight `ln(2L/eps)` each; integer sizes by largest remainder with
/// ties to the earliest groups, every group nonempty.
pub fn golfing_schedule(s: usize, n: usize, m: usize, eps: f64) -> Result<GolfingSchedule> {
    if s == 0 || n == 0 {
        return Err(Error::InvalidArgument("s and n must be >= 1".into()));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidArgument("eps must lie in (0, 1)".into()));
    }
    let l = golfing_group_count(s);
    if m < l {
        return Err(Error::InvalidArgument(format!(
            "m = {m} is below the number of golfing groups L = {l}"
        )));
    }
    let log4n = (4.0 * n as f64).ln();
    let head = log4n * (2.0 / eps).ln();
    let tail = (2.0 * l as f64 / eps).ln();
    let weights: Vec<f64> = (0..l).map(|i| if i < 2 { head } else { tail }).collect();
    let group_sizes = apportion(m, &weights);

    let sqrt_s = (s as f64).sqrt();
    let r_head = 1.0 / (4.0 * log4n.sqrt());
    let t_head = 1.0 / (8.0 * sqrt_s);
    let t_tail = log4n / (8.0 * sqrt_s);
    let contraction_targets = (0..l).map(|i| if i < 2 { r_head } else { 0.25 }).collect();
    let off_support_targets = (0..l)
        .map(|i| if i < 2 { t_head } else { t_tail })
        .collect();
    Ok(GolfingSchedule {
        group_sizes,
        contraction_targets,
        off_support_targets,
    })
}

/// Largest-remainder apportionment of `m` into `weights.len()` positive
/// integer shares (requires `m >= weights.len()`).
fn apportion(m: usize, weights: &[f64]) -> Vec<usize> {
    let l = weights.len();
    let total: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| m as f64 * w / total).collect();
    let mut sizes: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    // Hand out the leftover by largest fractional part, earliest group first.
    let mut order: Vec<usize> = (0..l).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for idx in 0..m.saturating_sub(assigned) {
        sizes[order[idx % l]] += 1;
    }
    // Nonempty groups: take from the currently largest group.
    for i in 0..l {
        while sizes[i] == 0 {
            let donor = (0..l).max_by_key(|&j| sizes[j]).unwrap();
            sizes[donor] -= 1;
            sizes[i] += 1;
        }
    }
    debug_assert_eq!(sizes.iter().sum::<usize>(), m);
    sizes
}

/// Pass/fail flags for the four inexact-duality conditions.
#[derive(Clone, Debug, Serialize)]
pub struct CertificateFlags {
    /// `||(A_S* A_S)^{-1}|| <= 2`
    pub inv_norm_ok: bool,
    /// `max_{i in S^c} ||A_S* A e_i||_2 <= 1`
    pub max_col_ok: bool,
    /// `||v_S - sign(x_S)||_2 <= 1/4`
    pub support_close: bool,
    /// `||v_{S^c}||_inf <= 1/4`
    pub off_support_small: bool,
}

impl CertificateFlags {
    pub fn all_pass(&self) -> bool {
        self.inv_norm_ok && self.max_col_ok && self.support_close && self.off_support_small
    }
}

/// Everything the golfing construction produced for one instance.
#[derive(Clone, Debug, Serialize)]
pub struct CertificateReport {
    pub inv_norm: f64,
    pub max_col: f64,
    /// The dual vector `v`, in the row space of the stacked groups.
    pub v: Vec<Complex64>,
    /// `||v_S - e||_2 = ||w^(L)||_2`.
    pub v_support_error: f64,
    /// `||v_{S^c}||_inf`.
    pub v_off_support_inf: f64,
    /// `||w^(l)||_2` for `l = 0..L` (index 0 is `||e||_2 = sqrt(s)`).
    pub contraction_log: Vec<f64>,
    pub group_sizes: Vec<usize>,
    pub flags: CertificateFlags,
}

/// Runs the golfing recursion over the groups and evaluates all four
/// conditions on the stacked operator. Failed conditions are reported
/// through the flags, never as errors.
///
/// `e` must be a unit-modulus sign vector on the support (in support order);
/// the groups must come from
/// [`SampledOperator::partition_for_golfing`] with the schedule's sizes.
pub fn golfing_certificate(
    groups: &[SampledOperator],
    support: &SupportSet,
    e: &DVector<Complex64>,
    schedule: &GolfingSchedule,
) -> Result<CertificateReport> {
    if groups.is_empty() {
        return Err(Error::InvalidArgument("no golfing groups".into()));
    }
    if schedule.num_groups() != groups.len() {
        return Err(Error::InvalidArgument(format!(
            "schedule has {} groups, got {} operators",
            schedule.num_groups(),
            groups.len()
        )));
    }
    for (g, (op, &sz)) in groups.iter().zip(schedule.group_sizes.iter()).enumerate() {
        if op.num_draws() != sz {
            return Err(Error::InvalidArgument(format!(
                "group {g} holds {} draws, schedule says {sz}",
                op.num_draws()
            )));
        }
    }
    let n = groups[0].cols();
    if support.n() != n {
        return Err(Error::InvalidSupport("support dimension mismatch".into()));
    }
    let s = support.len();
    if e.len() != s {
        return Err(Error::InvalidArgument(
            "sign vector length must equal |S|".into(),
        ));
    }
    if e.iter().any(|v| (v.norm() - 1.0).abs() > 1e-9) {
        return Err(Error::InvalidArgument(
            "sign vector entries must have unit modulus".into(),
        ));
    }

    let embed = |w: &DVector<Complex64>| {
        let mut x = DVector::<Complex64>::zeros(n);
        for (j, &i) in support.indices().iter().enumerate() {
            x[i] = w[j];
        }
        x
    };
    let restrict =
        |v: &DVector<Complex64>| DVector::from_iterator(s, support.indices().iter().map(|&i| v[i]));

    let mut w = e.clone();
    let mut v = DVector::<Complex64>::zeros(n);
    let mut contraction_log = vec![w.norm()];
    for group in groups {
        let factor = group.scale_draws() as f64 / group.num_draws() as f64;
        let forward = group.apply(&embed(&w));
        let update = group.apply_adjoint(&forward) * Complex64::new(factor, 0.0);
        v += update;
        w = e - restrict(&v);
        contraction_log.push(w.norm());
    }
    let v_support_error = *contraction_log.last().unwrap();
    let v_off_support_inf = support
        .complement()
        .iter()
        .map(|&i| v[i].norm())
        .fold(0.0, f64::max);

    // Spectral conditions of the stacked operator, accumulated group-wise.
    let mut gram = DMatrix::<Complex64>::zeros(s, s);
    let mut cross = DMatrix::<Complex64>::zeros(n, s);
    for group in groups {
        let g_s = restricted_columns(group, support);
        gram += g_s.ad_mul(&g_s);
        for j in 0..s {
            let back = group.apply_adjoint(&g_s.column(j).clone_owned());
            for i in 0..n {
                cross[(i, j)] += back[i];
            }
        }
    }
    let (lambda_min, lambda_max) = hermitian_eig_range(gram);
    let inv_norm = if lambda_min <= 1e-12 * lambda_max.max(1.0) {
        f64::INFINITY
    } else {
        1.0 / lambda_min
    };
    let mut max_col = 0.0f64;
    for i in support.complement() {
        let norm: f64 = cross
            .row(i)
            .iter()
            .map(|z| z.norm_sqr())
            .sum::<f64>()
            .sqrt();
        max_col = max_col.max(norm);
    }

    let flags = CertificateFlags {
        inv_norm_ok: inv_norm <= 2.0,
        max_col_ok: max_col <= 1.0,
        support_close: v_support_error <= 0.25,
        off_support_small: v_off_support_inf <= 0.25,
    };
    Ok(CertificateReport {
        inv_norm,
        max_col,
        v: v.iter().copied().collect(),
        v_support_error,
        v_off_support_inf,
        contraction_log,
        group_sizes: schedule.group_sizes.clone(),
        flags,
    })
}

/// How subsets are scanned in [`identifiability_rank_test`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum IdentifiabilityMode {
    /// Every size-2s column subset; a pass is conclusive.
    Exhaustive,
    /// Uniformly sampled subsets; a failure is conclusive, a pass is only
    /// evidence.
    Randomized { trials: usize },
}

/// A nullspace witness: two distinct at-most-`s`-sparse vectors with equal
/// measurements.
#[derive(Clone, Debug, Serialize)]
pub struct IdentifiabilityWitness {
    pub first: Vec<Complex64>,
    pub second: Vec<Complex64>,
    /// The offending column subset.
    pub subset: Vec<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct IdentifiabilityReport {
    pub identifiable: bool,
    /// Whether the verdict is conclusive (exhaustive scan, or a found
    /// witness).
    pub conclusive: bool,
    pub tested_subsets: usize,
    pub witness: Option<IdentifiabilityWitness>,
}

/// Cap on the exhaustive subset scan.
pub const EXHAUSTIVE_SUBSET_CAP: usize = 1_000_000;

fn binomial(n: usize, k: usize) -> Option<usize> {
    let k = k.min(n - k.min(n));
    let mut acc: usize = 1;
    for i in 0..k {
        acc = acc.checked_mul(n - i)?;
        acc /= i + 1;
    }
    Some(acc)
}

/// Tests whether every (or any sampled) set `T` of `min(2s, n)` columns of
/// `A` has full column rank, i.e. whether some decoder can recover
/// every `s`-sparse vector from `A x`. On a rank-deficient subset the report
/// carries a nullspace witness split into two `s`-sparse signals with equal
/// measurements.
pub fn identifiability_rank_test(
    a: &dyn LinearOperator,
    s: usize,
    mode: IdentifiabilityMode,
    seed: u64,
) -> Result<IdentifiabilityReport> {
    let n = a.cols();
    if s == 0 || s > n {
        return Err(Error::InvalidArgument(format!(
            "invalid sparsity s = {s} for n = {n}"
        )));
    }
    let t_size = (2 * s).min(n);
    let dense = a.materialize();
    let mut tested = 0usize;

    let mut check_subset = |t: &[usize]| -> Option<IdentifiabilityWitness> {
        tested += 1;
        // Pad to square when there are fewer rows than columns: the thin SVD
        // of a wide matrix does not carry the nullspace part of V.
        let rows = dense.nrows().max(t.len());
        let mut at = DMatrix::<Complex64>::zeros(rows, t.len());
        for (j, &i) in t.iter().enumerate() {
            at.view_mut((0, j), (dense.nrows(), 1))
                .copy_from(&dense.column(i));
        }
        let svd = at.svd(false, true);
        let sigma_max = svd.singular_values.iter().copied().fold(0.0, f64::max);
        let tol = 1e-10 * sigma_max.max(1.0);
        let rank = svd.singular_values.iter().filter(|&&v| v > tol).count();
        if rank == t.len() {
            return None;
        }
        // Nullspace vector: right singular vector of the smallest singular
        // value (A_T = U S V^H, v_t = V^H).
        let v_t = svd.v_t.expect("requested V^H");
        let smallest = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        let h = v_t.row(smallest).adjoint();
        // Split T into two halves of size <= s; x - x' = h on T.
        let mut first = DVector::<Complex64>::zeros(n);
        let mut second = DVector::<Complex64>::zeros(n);
        for (j, &i) in t.iter().enumerate() {
            if j < s {
                first[i] = h[j];
            } else {
                second[i] = -h[j];
            }
        }
        Some(IdentifiabilityWitness {
            first: first.iter().copied().collect(),
            second: second.iter().copied().collect(),
            subset: t.to_vec(),
        })
    };

    match mode {
        IdentifiabilityMode::Exhaustive => {
            match binomial(n, t_size) {
                Some(count) if count <= EXHAUSTIVE_SUBSET_CAP => {}
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "C({n}, {t_size}) exceeds the exhaustive cap; use randomized mode"
                    )))
                }
            }
            use itertools::Itertools;
            for t in (0..n).combinations(t_size) {
                if let Some(witness) = check_subset(&t) {
                    return Ok(IdentifiabilityReport {
                        identifiable: false,
                        conclusive: true,
                        tested_subsets: tested,
                        witness: Some(witness),
                    });
                }
            }
            Ok(IdentifiabilityReport {
                identifiable: true,
                conclusive: true,
                tested_subsets: tested,
                witness: None,
            })
        }
        IdentifiabilityMode::Randomized { trials } => {
            if trials == 0 {
                return Err(Error::InvalidArgument("trials must be >= 1".into()));
            }
            for trial in 0..trials {
                let mut rng = seeding::rng_from(seed, &[trial as u64]);
                let mut t = rand::seq::index::sample(&mut rng, n, t_size).into_vec();
                t.sort_unstable();
                if let Some(witness) = check_subset(&t) {
                    return Ok(IdentifiabilityReport {
                        identifiable: false,
                        conclusive: true,
                        tested_subsets: tested,
                        witness: Some(witness),
                    });
                }
            }
            Ok(IdentifiabilityReport {
                identifiable: true,
                conclusive: false,
                tested_subsets: tested,
                witness: None,
            })
        }
    }
}

/// The signal class that defeats line-block sampling: `x = alpha ⊗ e_1` with
/// `alpha` `s`-sparse in `C^{sqrt_n}` with unit-modulus random values. In the
/// image identification, the support sits on the first image column and the
/// separable 2D transform of `x` is constant along every line block.
pub fn pathological_signal(sqrt_n: usize, s: usize, seed: u64) -> Result<SparseSignal> {
    if s > sqrt_n {
        return Err(Error::InvalidArgument(format!(
            "pathological sparsity s = {s} exceeds sqrt_n = {sqrt_n}"
        )));
    }
    let mut rng = seeding::rng(seed);
    let alpha = SparseSignal::random_unit_modulus(sqrt_n, s, &mut rng)?;
    embed_column_class(&alpha, sqrt_n)
}

/// Embeds an `s`-sparse `alpha` over `C^{sqrt_n}` as `alpha ⊗ e_1` over
/// `C^{sqrt_n^2}`: entry `alpha_i` lands at vector index `i * sqrt_n`.
pub fn embed_column_class(alpha: &SparseSignal, sqrt_n: usize) -> Result<SparseSignal> {
    if alpha.n() != sqrt_n {
        return Err(Error::InvalidArgument(
            "alpha must live in C^{sqrt_n}".into(),
        ));
    }
    let support = SupportSet::new(
        sqrt_n * sqrt_n,
        alpha
            .support()
            .indices()
            .iter()
            .map(|&i| i * sqrt_n)
            .collect(),
    )?;
    SparseSignal::new(support, alpha.values().to_vec())
}

/// The reduced matrix governing the pathological class under line-block
/// sampling: row `j` is row `k_j` of `psi` scaled by `1/sqrt(m pi_{k_j})`;
/// measurements of `alpha ⊗ e_1` factor through it.
pub fn reduced_line_matrix(
    psi: &dyn LinearOperator,
    drawn: &[usize],
    pi: &crate::blocks::DrawingDistribution,
    m_scale: usize,
) -> Result<DenseOperator> {
    let sqrt_n = psi.cols();
    if psi.rows() != sqrt_n {
        return Err(Error::InvalidArgument("psi must be square".into()));
    }
    if pi.len() != sqrt_n {
        return Err(Error::InvalidDistribution(
            "pi must have one entry per row of psi".into(),
        ));
    }
    let dense_psi = psi.materialize();
    let mut out = DMatrix::<Complex64>::zeros(drawn.len(), sqrt_n);
    for (j, &k) in drawn.iter().enumerate() {
        if k >= sqrt_n {
            return Err(Error::InvalidArgument(format!(
                "drawn index {k} out of range"
            )));
        }
        let scale = 1.0 / (m_scale as f64 * pi.prob(k)).sqrt();
        for c in 0..sqrt_n {
            out[(j, c)] = dense_psi[(k, c)] * scale;
        }
    }
    Ok(DenseOperator::new(out))
}
