//! Empirical validation of the deviation inequalities behind the recovery
//! guarantee, phase-transition experiments over `(s, m)`, and the Gaussian
//! coherence-scaling study.
//!
//! The four tail events, for a freshly drawn sensing operator `A` over a
//! support `S`:
//!
//! * E1: `||A_S* A_S - Id||_{2->2} >= delta`,
//! * E2: `||(A_S* A_S - Id) w||_2 >= (sqrt((mu1-1)/m) + t) ||w||_2` for a
//!   fixed unit `w`,
//! * E3: `||A_{S^c}* A_S v||_inf >= t ||v||_2` for a fixed unit `v`,
//! * E4: `max_{i in S^c} ||A_S* A e_i||_2 >= t` (valid for
//!   `0 < t < mu1/mu2`).
//!
//! Each check redraws `A` independently, counts event occurrences, and
//! compares the Wilson 95% lower edge of the empirical frequency against the
//! closed-form bound evaluated with exactly computed coherence values. The
//! inequalities are proven, so a violation beyond the confidence band points
//! at an implementation bug.
//!
//! Trials are seeded as `(master seed, cell index, trial index)` and run in
//! parallel; aggregation is order-independent.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::blocks::{BlockDictionary, DrawingDistribution};
use crate::coherence::{self, SupportSet};
use crate::error::{Error, Result};
use crate::operators::{canonical_vector, LinearOperator};
use crate::sampling::draw_blocks;
use crate::seeding;
use crate::solver::{basis_pursuit, check_recovery, SolverOptions, SparseSignal};

/// The tail events of the deviation bounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum TailEvent {
    E1,
    E2,
    E3,
    E4,
}

impl std::str::FromStr for TailEvent {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "E1" => Ok(TailEvent::E1),
            "E2" => Ok(TailEvent::E2),
            "E3" => Ok(TailEvent::E3),
            "E4" => Ok(TailEvent::E4),
            other => Err(Error::InvalidArgument(format!(
                "unknown tail event {other}"
            ))),
        }
    }
}

/// Outcome of one tail check at one threshold.
#[derive(Clone, Debug, Serialize)]
pub struct TailCheckReport {
    pub event: TailEvent,
    /// `delta` (E1) or `t` (E2-E4).
    pub threshold: f64,
    pub m: usize,
    pub s: usize,
    pub support: Vec<usize>,
    pub trials: usize,
    pub hits: usize,
    pub frequency: f64,
    pub wilson_low: f64,
    pub wilson_high: f64,
    /// The closed-form bound evaluated with the exact coherence values.
    pub bound: f64,
    /// Wilson lower edge does not exceed the bound.
    pub pass: bool,
    pub mu1: f64,
    pub mu2: f64,
    pub mu3: f64,
    /// Extra validity information (E4's threshold range; the range's `mu2`
    /// does not enter the bound formula itself).
    pub validity_note: Option<String>,
}

/// Wilson 95% score interval for `hits` successes in `trials`.
pub fn wilson_interval(hits: usize, trials: usize) -> (f64, f64) {
    assert!(trials > 0);
    let z = 1.959_963_984_540_054f64;
    let n = trials as f64;
    let p = hits as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = p + z2 / (2.0 * n);
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    (
        ((center - half) / denom).max(0.0),
        ((center + half) / denom).min(1.0),
    )
}

fn tail_bound(
    event: TailEvent,
    threshold: f64,
    m: usize,
    n: usize,
    s: usize,
    mu: (f64, f64, f64),
) -> f64 {
    let (mu1, mu2, mu3) = mu;
    let mf = m as f64;
    let sf = s as f64;
    match event {
        TailEvent::E1 => {
            let denom = mu1 + (mu1 - 1.0).max(1.0) * threshold / 3.0;
            2.0 * sf * (-(mf * threshold * threshold / 2.0) / denom).exp()
        }
        TailEvent::E2 => {
            let excess = (mu1 - 1.0).max(0.0);
            let denom = excess + 2.0 * (excess / mf).sqrt() * mu1 + mu1 * threshold / 3.0;
            (-(mf * threshold * threshold / 2.0) / denom).exp()
        }
        TailEvent::E3 => {
            let denom = mu3 / sf + mu2 / sf.sqrt() * threshold / 3.0;
            4.0 * n as f64 * (-(mf * threshold * threshold / 4.0) / denom).exp()
        }
        TailEvent::E4 => {
            let arg = (mf / mu1).sqrt() * threshold - 1.0;
            n as f64 * (-(arg * arg) / 4.0).exp()
        }
    }
}

/// Runs one tail check: redraws `A` `trials` times, counts occurrences of
/// `event` at `threshold`, and compares against the closed-form bound.
#[allow(clippy::too_many_arguments)]
pub fn tail_check(
    event: TailEvent,
    dict: &Arc<BlockDictionary>,
    pi: &DrawingDistribution,
    support: &SupportSet,
    m: usize,
    threshold: f64,
    trials: usize,
    seed: u64,
) -> Result<TailCheckReport> {
    Ok(
        tail_check_grid(event, dict, pi, support, m, &[threshold], trials, seed)?
            .pop()
            .unwrap(),
    )
}

/// [`tail_check`] over a whole threshold grid, evaluating the per-trial
/// statistic once and counting against every threshold.
#[allow(clippy::too_many_arguments)]
pub fn tail_check_grid(
    event: TailEvent,
    dict: &Arc<BlockDictionary>,
    pi: &DrawingDistribution,
    support: &SupportSet,
    m: usize,
    thresholds: &[f64],
    trials: usize,
    seed: u64,
) -> Result<Vec<TailCheckReport>> {
    if dict.is_gaussian() {
        return Err(Error::WrongDictionaryKind(
            "tail checks need exact coherence values; no closed form exists for a Gaussian generator's mu1/mu2".into(),
        ));
    }
    if trials == 0 || m == 0 || thresholds.is_empty() {
        return Err(Error::InvalidArgument(
            "need trials >= 1, m >= 1 and thresholds".into(),
        ));
    }
    if thresholds.iter().any(|&t| t <= 0.0) {
        return Err(Error::InvalidArgument("thresholds must be positive".into()));
    }
    let n = dict.n();
    let s = support.len();
    let mu1 = coherence::mu1(dict, pi, support)?;
    let mu2 = coherence::mu2(dict, pi, support)?;
    let mu3 = coherence::mu3(dict, pi, support)?;

    let mut validity_note = None;
    if event == TailEvent::E4 && mu2 > 0.0 {
        let limit = mu1 / mu2;
        if let Some(&bad) = thresholds.iter().find(|&&t| t >= limit) {
            return Err(Error::InvalidArgument(format!(
                "E4 threshold {bad} outside the valid range (0, mu1/mu2) = (0, {limit})"
            )));
        }
        validity_note = Some(format!(
            "t restricted to (0, mu1/mu2) = (0, {limit:.6}); mu2 does not enter the bound formula"
        ));
    }

    // E2/E3 use one fixed unit vector per report, drawn from the seed.
    let fixed = match event {
        TailEvent::E2 | TailEvent::E3 => {
            let mut rng = seeding::rng_from(seed, &[0xfe]);
            Some(crate::operators::random_unit_vector(&mut rng, s))
        }
        _ => None,
    };

    let stats: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let a = draw_blocks(dict, pi, m, seeding::derive_seed(seed, &[t as u64]))
                .expect("validated inputs");
            trial_statistic(event, &a, support, fixed.as_ref())
        })
        .collect();

    let reports = thresholds
        .iter()
        .map(|&threshold| {
            let cut = match event {
                // E2 compares against the full right-hand side.
                TailEvent::E2 => ((mu1 - 1.0).max(0.0) / m as f64).sqrt() + threshold,
                _ => threshold,
            };
            let hits = stats.iter().filter(|&&v| v >= cut).count();
            let frequency = hits as f64 / trials as f64;
            let (wilson_low, wilson_high) = wilson_interval(hits, trials);
            let bound = tail_bound(event, threshold, m, n, s, (mu1, mu2, mu3));
            TailCheckReport {
                event,
                threshold,
                m,
                s,
                support: support.indices().to_vec(),
                trials,
                hits,
                frequency,
                wilson_low,
                wilson_high,
                bound,
                pass: wilson_low <= bound,
                mu1,
                mu2,
                mu3,
                validity_note: validity_note.clone(),
            }
        })
        .collect();
    Ok(reports)
}

fn trial_statistic(
    event: TailEvent,
    a: &crate::sampling::SampledOperator,
    support: &SupportSet,
    fixed: Option<&DVector<Complex64>>,
) -> f64 {
    let s = support.len();
    let n = a.cols();
    match event {
        TailEvent::E1 => {
            let a_s = columns_on(a, support);
            let mut gram = a_s.ad_mul(&a_s);
            for i in 0..s {
                gram[(i, i)] -= Complex64::new(1.0, 0.0);
            }
            let eig = nalgebra::SymmetricEigen::new(gram);
            eig.eigenvalues.iter().map(|v| v.abs()).fold(0.0, f64::max)
        }
        TailEvent::E2 => {
            let w = fixed.expect("fixed vector for E2");
            let a_s = columns_on(a, support);
            let asw = &a_s * w;
            let gw = a_s.ad_mul(&DMatrix::from_columns(&[asw]));
            let mut diff = gw.column(0).clone_owned();
            diff -= w;
            diff.norm()
        }
        TailEvent::E3 => {
            let v = fixed.expect("fixed vector for E3");
            let mut embedded = DVector::<Complex64>::zeros(n);
            for (j, &i) in support.indices().iter().enumerate() {
                embedded[i] = v[j];
            }
            let back = a.apply_adjoint(&a.apply(&embedded));
            support
                .complement()
                .iter()
                .map(|&i| back[i].norm())
                .fold(0.0, f64::max)
        }
        TailEvent::E4 => {
            let a_s = columns_on(a, support);
            let mut max_col = 0.0f64;
            let mut cross = DMatrix::<Complex64>::zeros(n, s);
            for j in 0..s {
                cross.set_column(j, &a.apply_adjoint(&a_s.column(j).clone_owned()));
            }
            for i in support.complement() {
                let norm: f64 = cross
                    .row(i)
                    .iter()
                    .map(|z| z.norm_sqr())
                    .sum::<f64>()
                    .sqrt();
                max_col = max_col.max(norm);
            }
            max_col
        }
    }
}

fn columns_on(a: &dyn LinearOperator, support: &SupportSet) -> DMatrix<Complex64> {
    let mut out = DMatrix::zeros(a.rows(), support.len());
    for (j, &i) in support.indices().iter().enumerate() {
        out.set_column(j, &a.apply(&canonical_vector(a.cols(), i)));
    }
    out
}

/// Signal model for phase-transition experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignalClass {
    /// Uniform random support, unit-modulus random-phase values.
    Generic,
    /// `alpha ⊗ e_1` signals concentrated on the first image column; defined
    /// for dictionaries over `n = sqrt_n^2` with `s <= sqrt_n`.
    Pathological,
}

/// One `(s, m)` cell of a phase diagram.
#[derive(Clone, Debug, Serialize)]
pub struct PhaseCell {
    pub s: usize,
    pub m: usize,
    pub trials: usize,
    pub successes: usize,
    /// Solver hit its iteration cap (tallied separately, counted as failure).
    pub nonconverged: usize,
}

impl PhaseCell {
    pub fn success_rate(&self) -> f64 {
        self.successes as f64 / self.trials as f64
    }
}

/// An `(s, m)` grid of recovery frequencies with full replay provenance.
#[derive(Clone, Debug, Serialize)]
pub struct PhaseDiagram {
    pub n: usize,
    pub signal_class: SignalClass,
    pub trials_per_cell: usize,
    pub seed: u64,
    pub cells: Vec<PhaseCell>,
}

/// Runs the recovery experiment over the `(s, m)` grid: per trial, draw a
/// signal of the given class, draw `A`, solve basis pursuit, count exact
/// recoveries at the solver's success tolerance. Deterministic given the
/// seed; trials run in parallel.
#[allow(clippy::too_many_arguments)]
pub fn phase_transition(
    dict: &Arc<BlockDictionary>,
    pi: &DrawingDistribution,
    s_values: &[usize],
    m_values: &[usize],
    trials: usize,
    seed: u64,
    class: SignalClass,
    opts: &SolverOptions,
) -> Result<PhaseDiagram> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be >= 1".into()));
    }
    if s_values.is_empty() || m_values.is_empty() {
        return Err(Error::InvalidArgument("empty (s, m) grid".into()));
    }
    let n = dict.n();
    let sqrt_n = (n as f64).sqrt().round() as usize;
    if class == SignalClass::Pathological && sqrt_n * sqrt_n != n {
        return Err(Error::InvalidArgument(
            "pathological signals need a square image dimension".into(),
        ));
    }
    let mut cells = Vec::with_capacity(s_values.len() * m_values.len());
    for (si, &s) in s_values.iter().enumerate() {
        for (mi, &m) in m_values.iter().enumerate() {
            let cell_index = (si * m_values.len() + mi) as u64;
            let outcomes: Vec<(bool, bool)> = (0..trials)
                .into_par_iter()
                .map(|t| {
                    let trial_seed = seeding::derive_seed(seed, &[cell_index, t as u64]);
                    run_trial(dict, pi, s, m, trial_seed, class, opts)
                })
                .collect::<Result<Vec<_>>>()?;
            let successes = outcomes.iter().filter(|(ok, _)| *ok).count();
            let nonconverged = outcomes.iter().filter(|(_, conv)| !conv).count();
            cells.push(PhaseCell {
                s,
                m,
                trials,
                successes,
                nonconverged,
            });
        }
    }
    Ok(PhaseDiagram {
        n,
        signal_class: class,
        trials_per_cell: trials,
        seed,
        cells,
    })
}

fn run_trial(
    dict: &Arc<BlockDictionary>,
    pi: &DrawingDistribution,
    s: usize,
    m: usize,
    trial_seed: u64,
    class: SignalClass,
    opts: &SolverOptions,
) -> Result<(bool, bool)> {
    let x = match class {
        SignalClass::Generic => {
            let mut rng = seeding::rng_from(trial_seed, &[0]);
            SparseSignal::random_unit_modulus(dict.n(), s, &mut rng)?
        }
        SignalClass::Pathological => {
            let sqrt_n = (dict.n() as f64).sqrt().round() as usize;
            crate::certificates::pathological_signal(
                sqrt_n,
                s,
                seeding::derive_seed(trial_seed, &[0]),
            )?
        }
    };
    let a = draw_blocks(dict, pi, m, seeding::derive_seed(trial_seed, &[1]))?;
    let y = a.apply(&x.dense());
    let mut result = basis_pursuit(&a, &y, opts)?;
    let converged = result.converged;
    let (success, _) = check_recovery(&x, &mut result, opts.success_tol);
    Ok((success && converged, converged))
}

/// One `(s, p)` point of the Gaussian coherence-scaling study.
#[derive(Clone, Debug, Serialize)]
pub struct GammaScalingRow {
    pub s: usize,
    pub p: usize,
    /// Monte-Carlo quantile estimates.
    pub mu1_quantile: f64,
    pub mu2_quantile: f64,
    /// Exact closed form `s/p`.
    pub mu3: f64,
    pub gamma: f64,
    /// `a * (s/p) * ln(s)` at the fitted coefficient.
    pub model_value: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GammaScalingTable {
    pub n: usize,
    pub trials: usize,
    pub quantile: f64,
    pub seed: u64,
    /// Least-squares coefficient of `gamma ~ a * (s/p) * ln(s)`.
    pub fit_coefficient: f64,
    pub fit_rms_residual: f64,
    pub rows: Vec<GammaScalingRow>,
}

/// Monte-Carlo coherence quantiles for Gaussian blocks over an `(s, p)`
/// grid, with the exact `mu3 = s/p` column and a fit against the
/// `(s/p) ln(s)` scaling model.
pub fn gaussian_gamma_scaling(
    s_values: &[usize],
    p_values: &[usize],
    n: usize,
    trials: usize,
    seed: u64,
) -> Result<GammaScalingTable> {
    if s_values.is_empty() || p_values.is_empty() {
        return Err(Error::InvalidArgument("empty (s, p) grid".into()));
    }
    if s_values.iter().any(|&s| s >= n) {
        return Err(Error::InvalidArgument("requires s < n".into()));
    }
    let quantile = coherence::GAUSSIAN_MC_QUANTILE;
    let mut raw = Vec::new();
    for (si, &s) in s_values.iter().enumerate() {
        for (pj, &p) in p_values.iter().enumerate() {
            let dict = crate::blocks::gaussian_dictionary(p, n)?;
            let support = SupportSet::new(n, (0..s).collect())?;
            let rep = coherence::gamma_gaussian(
                &dict,
                &support,
                trials,
                quantile,
                seeding::derive_seed(seed, &[si as u64, pj as u64]),
            )?;
            raw.push((s, p, rep));
        }
    }
    // Fit gamma ~ a * (s/p) * ln(s); s = 1 rows carry model value 0.
    let xs: Vec<f64> = raw
        .iter()
        .map(|(s, p, _)| (*s as f64 / *p as f64) * (*s as f64).ln())
        .collect();
    let sum_xx: f64 = xs.iter().map(|x| x * x).sum();
    let fit_coefficient = if sum_xx > 0.0 {
        raw.iter()
            .zip(&xs)
            .map(|((_, _, r), x)| r.gamma * x)
            .sum::<f64>()
            / sum_xx
    } else {
        0.0
    };
    let residuals: Vec<f64> = raw
        .iter()
        .zip(&xs)
        .map(|((_, _, r), x)| r.gamma - fit_coefficient * x)
        .collect();
    let fit_rms_residual =
        (residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len() as f64).sqrt();
    let rows = raw
        .into_iter()
        .zip(&xs)
        .map(|((s, p, r), x)| GammaScalingRow {
            s,
            p,
            mu1_quantile: r.mu1,
            mu2_quantile: r.mu2,
            mu3: r.mu3,
            gamma: r.gamma,
            model_value: fit_coefficient * x,
        })
        .collect();
    Ok(GammaScalingTable {
        n,
        trials,
        quantile,
        seed,
        fit_coefficient,
        fit_rms_residual,
        rows,
    })
}
