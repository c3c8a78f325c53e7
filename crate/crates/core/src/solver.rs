//! Noiseless basis pursuit: `min ||z||_1 subject to A z = y`, for complex
//! data, plus recovery diagnostics and PSNR.
//!
//! The solver is a first-order primal-dual iteration (Chambolle-Pock on the
//! equality-constrained problem). It touches `A` only through forward and
//! adjoint applications, with step sizes set from a power-iteration estimate
//! of `||A||`. The proximal step is complex soft-thresholding: magnitudes
//! shrink, phases are preserved.

use nalgebra::DVector;
use num_complex::Complex64;
use serde::Serialize;

use crate::coherence::SupportSet;
use crate::error::{Error, Result};
use crate::operators::{operator_norm, LinearOperator};

/// An `s`-sparse signal stored as support plus values.
#[derive(Clone, Debug, Serialize)]
pub struct SparseSignal {
    n: usize,
    support: SupportSet,
    /// Values on the support, in support (increasing-index) order.
    values: Vec<Complex64>,
}

impl SparseSignal {
    pub fn new(support: SupportSet, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != support.len() {
            return Err(Error::InvalidArgument(format!(
                "{} values for a support of size {}",
                values.len(),
                support.len()
            )));
        }
        if values.iter().any(|v| v.norm() == 0.0) {
            return Err(Error::InvalidArgument("zero value on the support".into()));
        }
        Ok(Self {
            n: support.n(),
            support,
            values,
        })
    }

    /// Uniform random support, unit-modulus values with uniform random
    /// phases, the signal model of all recovery experiments.
    pub fn random_unit_modulus(n: usize, s: usize, rng: &mut impl rand::Rng) -> Result<Self> {
        let support = SupportSet::random(n, s, rng)?;
        let values = (0..s)
            .map(|_| {
                let phase = rng.gen_range(0.0..std::f64::consts::TAU);
                Complex64::new(phase.cos(), phase.sin())
            })
            .collect();
        Self::new(support, values)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn support(&self) -> &SupportSet {
        &self.support
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    /// Dense embedding in `C^n`.
    pub fn dense(&self) -> DVector<Complex64> {
        let mut x = DVector::zeros(self.n);
        for (&i, &v) in self.support.indices().iter().zip(&self.values) {
            x[i] = v;
        }
        x
    }

    /// `sign(x_S)`: unit-modulus phases on the support, in support order.
    pub fn sign_on_support(&self) -> DVector<Complex64> {
        DVector::from_iterator(self.values.len(), self.values.iter().map(|v| v / v.norm()))
    }
}

/// Options for [`basis_pursuit`].
#[derive(Clone, Debug, Serialize)]
pub struct SolverOptions {
    /// Converged when `||A z - y||_2 <= feasibility_tol * ||y||_2` ...
    pub feasibility_tol: f64,
    /// ... and the iterate change is below `step_tol * max(1, ||z||_2)`.
    pub step_tol: f64,
    pub iteration_cap: usize,
    /// Tolerance of the `||A||` power-iteration estimate for step sizes.
    pub norm_tol: f64,
    /// Relative l2 error below which a recovery counts as exact.
    pub success_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            feasibility_tol: 1e-9,
            step_tol: 1e-9,
            iteration_cap: 50_000,
            norm_tol: 1e-6,
            success_tol: 1e-5,
        }
    }
}

/// Outcome of a basis-pursuit solve.
#[derive(Clone, Debug)]
pub struct RecoveryResult {
    pub estimate: DVector<Complex64>,
    pub iterations: usize,
    /// `||A z - y||_2` at the returned iterate.
    pub primal_residual: f64,
    /// `||z||_1` at the returned iterate.
    pub objective: f64,
    pub converged: bool,
    /// Relative l2 error against a reference signal, when one was checked.
    pub relative_error: Option<f64>,
    /// Whether the relative error fell below the success tolerance.
    pub success: Option<bool>,
}

fn soft_threshold_into(z: &mut DVector<Complex64>, thresh: f64) {
    for v in z.iter_mut() {
        let mag = v.norm();
        *v = if mag <= thresh {
            Complex64::new(0.0, 0.0)
        } else {
            *v * (1.0 - thresh / mag)
        };
    }
}

/// Solves `min ||z||_1 s.t. A z = y` (noiseless model: `y` must lie in the
/// range of `A`).
pub fn basis_pursuit(
    a: &dyn LinearOperator,
    y: &DVector<Complex64>,
    opts: &SolverOptions,
) -> Result<RecoveryResult> {
    if y.len() != a.rows() {
        return Err(Error::InvalidArgument(format!(
            "measurement vector of length {} does not match operator with {} rows",
            y.len(),
            a.rows()
        )));
    }
    let y_norm = y.norm();
    if y_norm == 0.0 {
        // 0 is feasible and has minimal norm.
        return Ok(RecoveryResult {
            estimate: DVector::zeros(a.cols()),
            iterations: 0,
            primal_residual: 0.0,
            objective: 0.0,
            converged: true,
            relative_error: None,
            success: None,
        });
    }
    let norm = match operator_norm(a, opts.norm_tol) {
        Ok(v) => v,
        // A capped estimate is still usable for step sizes after inflation.
        Err(Error::PowerIterationDiverged { estimate, .. }) => estimate * 2.0,
        Err(e) => return Err(e),
    };
    if norm == 0.0 {
        return Err(Error::InvalidArgument("zero operator".into()));
    }
    let tau = 0.95 / norm;
    let sigma = 0.95 / norm;

    let n = a.cols();
    let mut z = DVector::<Complex64>::zeros(n);
    let mut az = DVector::<Complex64>::zeros(a.rows());
    let mut u = DVector::<Complex64>::zeros(a.rows());
    let mut residual = y_norm;
    let mut iterations = 0;

    for iter in 1..=opts.iteration_cap {
        iterations = iter;
        let mut z_next = &z - a.apply_adjoint(&u) * Complex64::new(tau, 0.0);
        soft_threshold_into(&mut z_next, tau);
        let az_next = a.apply(&z_next);
        // u update at the extrapolated point 2 z_next - z.
        let extrapolated = &az_next * Complex64::new(2.0, 0.0) - &az;
        u += (extrapolated - y) * Complex64::new(sigma, 0.0);

        residual = (&az_next - y).norm();
        let dz = (&z_next - &z).norm();
        let z_scale = z_next.norm().max(1.0);
        z = z_next;
        az = az_next;
        if residual <= opts.feasibility_tol * y_norm && dz <= opts.step_tol * z_scale {
            let objective = z.iter().map(|v| v.norm()).sum();
            return Ok(RecoveryResult {
                estimate: z,
                iterations,
                primal_residual: residual,
                objective,
                converged: true,
                relative_error: None,
                success: None,
            });
        }
    }
    let objective = z.iter().map(|v| v.norm()).sum();
    Ok(RecoveryResult {
        estimate: z,
        iterations,
        primal_residual: residual,
        objective,
        converged: false,
        relative_error: None,
        success: None,
    })
}

/// Relative l2 error of the estimate against the planted signal, and the
/// success verdict at tolerance `tol`. Updates the result in place.
pub fn check_recovery(x: &SparseSignal, result: &mut RecoveryResult, tol: f64) -> (bool, f64) {
    let reference = x.dense();
    let x_norm = reference.norm();
    let err = (&result.estimate - &reference).norm();
    let (success, rel) = if x_norm == 0.0 {
        (result.estimate.norm() <= tol, result.estimate.norm())
    } else {
        let rel = err / x_norm;
        (rel <= tol, rel)
    };
    result.relative_error = Some(rel);
    result.success = Some(success);
    (success, rel)
}

/// Peak signal-to-noise ratio `10 log10(peak^2 n / ||ref - est||^2)` in dB;
/// `+inf` for identical inputs.
pub fn psnr(reference: &[f64], estimate: &[f64], peak: f64) -> f64 {
    assert_eq!(reference.len(), estimate.len(), "length mismatch");
    assert!(peak > 0.0, "peak must be positive");
    let err_sq: f64 = reference
        .iter()
        .zip(estimate)
        .map(|(r, e)| (r - e) * (r - e))
        .sum();
    if err_sq == 0.0 {
        return f64::INFINITY;
    }
    10.0 * (peak * peak * reference.len() as f64 / err_sq).log10()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::DrawingDistribution;
    use crate::operators::{dft_operator, identity_operator, random_unit_vector};
    use crate::sampling::isolated_sampler;
    use crate::seeding;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_measurements_give_zero_estimate() {
        let a = identity_operator(5);
        let y = DVector::zeros(5);
        let r = basis_pursuit(&*a, &y, &SolverOptions::default()).unwrap();
        assert!(r.converged);
        assert_eq!(r.estimate, DVector::zeros(5));
        assert_eq!(r.iterations, 0);
    }

    #[test]
    fn identity_operator_returns_measurements() {
        let a = identity_operator(6);
        let mut rng = seeding::rng(2);
        let y = random_unit_vector(&mut rng, 6);
        let r = basis_pursuit(&*a, &y, &SolverOptions::default()).unwrap();
        assert!(r.converged);
        assert!((r.estimate - y).norm() <= 1e-7);
    }

    #[test]
    fn feasibility_at_convergence() {
        let mut rng = seeding::rng(3);
        let p = DrawingDistribution::uniform(16).unwrap();
        let a = isolated_sampler(dft_operator(16), &p, 12, 4).unwrap();
        let x = SparseSignal::random_unit_modulus(16, 2, &mut rng).unwrap();
        let y = a.apply(&x.dense());
        let r = basis_pursuit(&a, &y, &SolverOptions::default()).unwrap();
        assert!(r.converged, "no convergence in {} iterations", r.iterations);
        assert!(r.primal_residual <= 1e-9 * y.norm());
    }

    #[test]
    fn phase_equivariance() {
        let p = DrawingDistribution::uniform(16).unwrap();
        let a = isolated_sampler(dft_operator(16), &p, 10, 6).unwrap();
        let mut rng = seeding::rng(7);
        let x = SparseSignal::random_unit_modulus(16, 2, &mut rng).unwrap();
        let y = a.apply(&x.dense());
        let theta = Complex64::from_polar(1.0, 1.234);
        let y_rot = &y * theta;
        let opts = SolverOptions::default();
        let r1 = basis_pursuit(&a, &y, &opts).unwrap();
        let r2 = basis_pursuit(&a, &y_rot, &opts).unwrap();
        assert!(r1.converged && r2.converged);
        assert!((r2.estimate - r1.estimate * theta).norm() <= 1e-5);
    }

    #[test]
    fn scaling_equivariance() {
        let p = DrawingDistribution::uniform(16).unwrap();
        let a = isolated_sampler(dft_operator(16), &p, 10, 8).unwrap();
        let mut rng = seeding::rng(9);
        let x = SparseSignal::random_unit_modulus(16, 2, &mut rng).unwrap();
        let y = a.apply(&x.dense());
        let c = 3.5;
        let opts = SolverOptions::default();
        let r1 = basis_pursuit(&a, &y, &opts).unwrap();
        let r2 = basis_pursuit(&a, &(&y * Complex64::new(c, 0.0)), &opts).unwrap();
        assert!((r2.estimate - r1.estimate * Complex64::new(c, 0.0)).norm() <= 1e-5 * c);
    }

    #[test]
    fn check_recovery_semantics() {
        let mut rng = seeding::rng(4);
        let x = SparseSignal::random_unit_modulus(8, 2, &mut rng).unwrap();
        let mut exact = RecoveryResult {
            estimate: x.dense(),
            iterations: 1,
            primal_residual: 0.0,
            objective: 2.0,
            converged: true,
            relative_error: None,
            success: None,
        };
        let (ok, err) = check_recovery(&x, &mut exact, 1e-5);
        assert!(ok);
        assert_abs_diff_eq!(err, 0.0, epsilon = 0.0);

        let mut zero = exact.clone();
        zero.estimate = DVector::zeros(8);
        let (ok, err) = check_recovery(&x, &mut zero, 1e-5);
        assert!(!ok);
        assert_abs_diff_eq!(err, 1.0, epsilon = 1e-12);

        // 1e-7 relative perturbation succeeds at tol 1e-5.
        let mut perturbed = exact.clone();
        let noise = random_unit_vector(&mut rng, 8);
        let x_norm = x.dense().norm();
        perturbed.estimate = x.dense() + noise * Complex64::new(1e-7 * x_norm, 0.0);
        let (ok, err) = check_recovery(&x, &mut perturbed, 1e-5);
        assert!(ok);
        assert!(err <= 2e-7);
    }

    #[test]
    fn psnr_cases() {
        let a = [0.1, 0.5, 0.9, 0.3];
        assert_eq!(psnr(&a, &a, 1.0), f64::INFINITY);
        let b = [0.2, 0.6, 1.0, 0.4];
        assert_abs_diff_eq!(psnr(&a, &b, 1.0), 20.0, epsilon = 1e-12);
        // independent formula evaluation on random pairs
        let mut rng = seeding::rng(12);
        for _ in 0..5 {
            let r: Vec<f64> = (0..9)
                .map(|_| rand::Rng::gen_range(&mut rng, 0.0..1.0))
                .collect();
            let e: Vec<f64> = (0..9)
                .map(|_| rand::Rng::gen_range(&mut rng, 0.0..1.0))
                .collect();
            let err: f64 = r.iter().zip(&e).map(|(x, y)| (x - y).powi(2)).sum();
            let oracle = 10.0 * ((1.0 * 1.0 * 9.0) / err).log10();
            assert_abs_diff_eq!(psnr(&r, &e, 1.0), oracle, epsilon = 1e-12);
        }
    }

    #[test]
    fn sparse_signal_validation_and_embedding() {
        let sup = SupportSet::new(6, vec![1, 4]).unwrap();
        assert!(SparseSignal::new(sup.clone(), vec![Complex64::new(1.0, 0.0)]).is_err());
        assert!(SparseSignal::new(
            sup.clone(),
            vec![Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)]
        )
        .is_err());
        let x = SparseSignal::new(
            sup,
            vec![Complex64::new(0.0, 2.0), Complex64::new(-1.0, 0.0)],
        )
        .unwrap();
        let d = x.dense();
        assert_eq!(d.iter().filter(|v| v.norm() > 0.0).count(), 2);
        let e = x.sign_on_support();
        assert_abs_diff_eq!(e[0].im, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(e[1].re, -1.0, epsilon = 1e-15);
    }
}
