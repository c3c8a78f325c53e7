#![allow(dead_code)]

//! Shared oracles for integration tests. Everything here is independent of
//! the library's solution paths: brute-force enumerations and direct dense
//! formulas only.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// Exact small-scale basis-pursuit oracle: enumerate every candidate support
/// `T` with `|T| <= min(q, n)`, solve the least-squares system `A_T c = y`,
/// keep feasible candidates (residual below `feas_tol`), and return the one
/// with minimal l1 norm, embedded densely.
pub fn bp_support_enumeration_oracle(
    a: &DMatrix<Complex64>,
    y: &DVector<Complex64>,
    feas_tol: f64,
) -> (DVector<Complex64>, f64) {
    let (q, n) = (a.nrows(), a.ncols());
    let y_scale = y.norm().max(1.0);
    if y.norm() == 0.0 {
        return (DVector::zeros(n), 0.0);
    }
    let max_size = q.min(n);
    let mut best: Option<(DVector<Complex64>, f64)> = None;
    for size in 1..=max_size {
        for t in combinations(n, size) {
            let mut at = DMatrix::<Complex64>::zeros(q, size);
            for (j, &i) in t.iter().enumerate() {
                at.set_column(j, &a.column(i));
            }
            let svd = at.clone().svd(true, true);
            let Ok(c) = svd.solve(y, 1e-12) else { continue };
            let residual = (&at * &c - y).norm();
            if residual > feas_tol * y_scale {
                continue;
            }
            let l1: f64 = c.iter().map(|v| v.norm()).sum();
            if best.as_ref().is_none_or(|(_, b)| l1 < *b - 1e-14) {
                let mut dense = DVector::zeros(n);
                for (j, &i) in t.iter().enumerate() {
                    dense[i] = c[j];
                }
                best = Some((dense, l1));
            }
        }
    }
    best.expect("no feasible support found; y not in the range of A?")
}

/// All size-`k` subsets of `{0, .., n-1}` in lexicographic order.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if current.len() == k {
            out.push(current.clone());
            return;
        }
        for i in start..n {
            current.push(i);
            rec(i + 1, n, k, current, out);
            current.pop();
        }
    }
    rec(0, n, k, &mut current, &mut out);
    out
}

/// Independent optimality certificate for a basis-pursuit candidate `z` via
/// convex duality: a dual `u` with `A_S* u = sign(z_S)` and
/// `||A* u||_inf <= 1` certifies optimality for any support size, unlike
/// support enumeration, which over the complex field can miss optima
/// supported on more than `q` columns. The alignment equations pin an affine
/// set; within it `||A* u||_inf` is driven down by projected subgradient
/// steps starting from the min-norm solution (which alone is often invalid
/// when the alignment system is underdetermined).
pub fn dual_optimality_certificate(
    a: &DMatrix<Complex64>,
    y: &DVector<Complex64>,
    z: &DVector<Complex64>,
    tol: f64,
) -> Result<(), String> {
    let feas = (a * z - y).norm();
    if feas > tol * y.norm().max(1.0) {
        return Err(format!("infeasible: residual {feas:.3e}"));
    }
    let objective: f64 = z.iter().map(|v| v.norm()).sum();
    let support: Vec<usize> = z
        .iter()
        .enumerate()
        .filter(|(_, v)| v.norm() > 1e-7)
        .map(|(i, _)| i)
        .collect();
    if support.is_empty() {
        return if objective <= tol {
            Ok(())
        } else {
            Err("empty support, nonzero norm".into())
        };
    }
    let mut a_s = DMatrix::<Complex64>::zeros(a.nrows(), support.len());
    for (j, &i) in support.iter().enumerate() {
        a_s.set_column(j, &a.column(i));
    }
    let signs = DVector::from_iterator(support.len(), support.iter().map(|&i| z[i] / z[i].norm()));
    // Min-norm solution of A_S* u = signs and the projector onto the
    // constraint's tangent space.
    let gram = a_s.ad_mul(&a_s);
    let gram_inv = gram.try_inverse().ok_or("singular support Gram")?;
    let mut u = &a_s * (&gram_inv * &signs);
    let align = (a_s.ad_mul(&DMatrix::from_columns(&[u.clone()])).column(0) - &signs).norm();
    if align > tol {
        return Err(format!("dual alignment residual {align:.3e}"));
    }
    let project = |w: &DVector<Complex64>| -> DVector<Complex64> {
        let coeff = a_s.ad_mul(&DMatrix::from_columns(std::slice::from_ref(w)));
        w - &a_s * (&gram_inv * coeff.column(0).clone_owned())
    };
    let sup_norm = |u: &DVector<Complex64>| -> (usize, f64) {
        let v = a.ad_mul(&DMatrix::from_columns(std::slice::from_ref(u)));
        let mut best = (0usize, 0.0f64);
        for (i, w) in v.column(0).iter().enumerate() {
            if w.norm() > best.1 {
                best = (i, w.norm());
            }
        }
        best
    };
    let (mut arg, mut vinf) = sup_norm(&u);
    let mut best_vinf = vinf;
    let u_scale = u.norm().max(1.0);
    for iter in 0..4000 {
        if best_vinf <= 1.0 + tol {
            break;
        }
        let v_arg = a.column(arg).adjoint() * &u;
        let sign = v_arg[0] / v_arg[0].norm();
        let descent = project(&(a.column(arg).clone_owned() * sign));
        let dnorm = descent.norm();
        if dnorm <= 1e-14 {
            break;
        }
        let step = 0.5 * u_scale / ((1.0 + iter as f64).powf(0.75) * dnorm);
        u -= descent * Complex64::new(step, 0.0);
        let (na, nv) = sup_norm(&u);
        arg = na;
        vinf = nv;
        best_vinf = best_vinf.min(vinf);
    }
    if best_vinf > 1.0 + tol {
        return Err(format!(
            "no valid dual found: best sup-norm {best_vinf:.10}"
        ));
    }
    // With exact alignment, <u, y> = <A* u, z> = sum |z_i| automatically; the
    // remaining gap only reflects the feasibility residual.
    let _ = objective;
    Ok(())
}

/// Direct nullspace search over all 2s-sparse supports: returns true when
/// some `h != 0` supported on `2s` columns satisfies `A h = 0`, the
/// negation of identifiability. Independent of the SVD-rank route.
pub fn has_sparse_nullvector(a: &DMatrix<Complex64>, s: usize) -> bool {
    let n = a.ncols();
    let t_size = (2 * s).min(n);
    for t in combinations(n, t_size) {
        let mut at = DMatrix::<Complex64>::zeros(a.nrows(), t.len());
        for (j, &i) in t.iter().enumerate() {
            at.set_column(j, &a.column(i));
        }
        // Smallest eigenvalue of the Gram: zero iff the columns are
        // dependent.
        let gram = at.ad_mul(&at);
        let eig = nalgebra::SymmetricEigen::new(gram);
        let min = eig
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        let max = eig.eigenvalues.iter().copied().fold(0.0f64, f64::max);
        if min <= 1e-10 * max.max(1.0) {
            return true;
        }
    }
    false
}
