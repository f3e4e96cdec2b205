//! Preconditioned conjugate gradients for complex Hermitian systems.

use num_traits::Zero;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::{dot, norm, Cx, Real};

/// Square linear map on complex vectors.
pub trait LinearOperator<T: Real> {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[Cx<T>], out: &mut [Cx<T>]);
}

/// `x -> x`.
#[derive(Debug, Clone, Copy)]
pub struct Identity(pub usize);

impl<T: Real> LinearOperator<T> for Identity {
    fn dim(&self) -> usize {
        self.0
    }

    fn apply(&self, x: &[Cx<T>], out: &mut [Cx<T>]) {
        out.copy_from_slice(x);
    }
}

/// Operator defined by a closure.
pub struct FnOperator<F> {
    dim: usize,
    f: F,
}

impl<F> FnOperator<F> {
    pub fn new(dim: usize, f: F) -> Self {
        FnOperator { dim, f }
    }
}

impl<T: Real, F: Fn(&[Cx<T>], &mut [Cx<T>])> LinearOperator<T> for FnOperator<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &[Cx<T>], out: &mut [Cx<T>]) {
        (self.f)(x, out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcgOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_iterations: usize,
    /// Stop when the residual norm changes by less than a relative
    /// `stagnation_tol` across `stagnation_window` iterations, returning the
    /// minimum-residual iterate. Meant for singular (PSD) systems.
    pub detect_stagnation: bool,
    pub stagnation_window: usize,
    pub stagnation_tol: f64,
    /// Randomized `<x, A y> == <A x, y>` probe before iterating.
    pub check_hermitian: bool,
}

impl Default for PcgOptions {
    fn default() -> Self {
        PcgOptions {
            abs_tol: 1e-13,
            rel_tol: 1e-10,
            max_iterations: 5000,
            detect_stagnation: false,
            stagnation_window: 20,
            stagnation_tol: 1e-14,
            check_hermitian: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PcgOutcome<T: Real> {
    pub solution: Vec<Cx<T>>,
    pub iterations: usize,
    /// `||r||_2` before the first iteration and after each one.
    pub residuals: Vec<f64>,
    pub converged: bool,
    pub stagnated: bool,
    /// `||rhs - A x||_2` of the returned solution.
    pub true_residual: f64,
}

fn axpy<T: Real>(alpha: Cx<T>, x: &[Cx<T>], y: &mut [Cx<T>]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn residual<T: Real, A: LinearOperator<T> + ?Sized>(a: &A, rhs: &[Cx<T>], x: &[Cx<T>], scratch: &mut [Cx<T>]) -> Vec<Cx<T>> {
    a.apply(x, scratch);
    rhs.iter().zip(scratch.iter()).map(|(b, ax)| b - ax).collect()
}

fn check_hermitian<T: Real, A: LinearOperator<T> + ?Sized>(a: &A) -> Result<()> {
    let n = a.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut rand_vec = || -> Vec<Cx<T>> {
        (0..n)
            .map(|_| Cx::new(T::of(rng.random::<f64>() - 0.5), T::of(rng.random::<f64>() - 0.5)))
            .collect()
    };
    let (x, y) = (rand_vec(), rand_vec());
    let mut ax = vec![Cx::zero(); n];
    let mut ay = vec![Cx::zero(); n];
    a.apply(&x, &mut ax);
    a.apply(&y, &mut ay);
    let lhs = dot(&x, &ay);
    let rhs = dot(&ax, &y);
    let scale = (norm(&x) * norm(&ay)).max(norm(&ax) * norm(&y)).to_f64_lossy();
    if (lhs - rhs).norm().to_f64_lossy() > 1e-6 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::InvalidOperator(format!(
            "operator is not Hermitian: <x, Ay> = {lhs}, <Ax, y> = {rhs}"
        )));
    }
    Ok(())
}

/// Solve `A x = rhs` from `x = 0`.
///
/// Terminates when `||rhs - A x||_2 <= max(abs_tol, rel_tol ||rhs||_2)`,
/// verified on the true residual, or after `max_iterations`.
pub fn pcg<T, A, P>(a: &A, precond: &P, rhs: &[Cx<T>], opts: &PcgOptions) -> Result<PcgOutcome<T>>
where
    T: Real,
    A: LinearOperator<T> + ?Sized,
    P: LinearOperator<T> + ?Sized,
{
    let n = rhs.len();
    if a.dim() != n || precond.dim() != n {
        return Err(Error::invalid(format!(
            "system dimension {} / preconditioner {} / rhs {n} disagree",
            a.dim(),
            precond.dim()
        )));
    }
    if !(opts.abs_tol > 0.0) || !(opts.rel_tol > 0.0) {
        return Err(Error::invalid("tolerances must be positive"));
    }
    if opts.check_hermitian {
        check_hermitian(a)?;
    }
    let rhs_norm = norm(rhs).to_f64_lossy();
    let tol = opts.abs_tol.max(opts.rel_tol * rhs_norm);

    let mut x = vec![Cx::zero(); n];
    let mut r = rhs.to_vec();
    let mut z = vec![Cx::zero(); n];
    let mut q = vec![Cx::zero(); n];
    let mut residuals = vec![rhs_norm];
    if rhs_norm <= tol {
        return Ok(PcgOutcome {
            solution: x,
            iterations: 0,
            residuals,
            converged: true,
            stagnated: false,
            true_residual: rhs_norm,
        });
    }

    precond.apply(&r, &mut z);
    let mut rz = dot(&r, &z).re;
    if !(rz > T::zero()) {
        return Err(Error::NumericalBreakdown {
            iteration: 0,
            detail: "preconditioner is not positive definite".into(),
        });
    }
    let mut p = z.clone();
    let mut best = (rhs_norm, x.clone());
    let mut restarts = 0usize;
    let mut converged = false;
    let mut stagnated = false;
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        iterations += 1;
        a.apply(&p, &mut q);
        let pq = dot(&p, &q).re;
        if !(pq > T::zero()) || !pq.is_finite() {
            if opts.detect_stagnation {
                stagnated = true;
                break;
            }
            return Err(Error::NumericalBreakdown {
                iteration: iterations,
                detail: format!("non-positive curvature p^H A p = {pq}"),
            });
        }
        let alpha = rz / pq;
        axpy(Cx::new(alpha, T::zero()), &p, &mut x);
        axpy(Cx::new(-alpha, T::zero()), &q, &mut r);
        let mut rn = norm(&r).to_f64_lossy();

        if rn <= tol {
            // confirm on the true residual; drifted recurrences restart
            r = residual(a, rhs, &x, &mut q);
            rn = norm(&r).to_f64_lossy();
            if rn <= tol {
                residuals.push(rn);
                converged = true;
                break;
            }
            restarts += 1;
            precond.apply(&r, &mut z);
            rz = dot(&r, &z).re;
            p.copy_from_slice(&z);
            residuals.push(rn);
            if restarts > 8 {
                break;
            }
            continue;
        }
        residuals.push(rn);

        if rn < best.0 {
            best.0 = rn;
            best.1.copy_from_slice(&x);
        }
        if opts.detect_stagnation && residuals.len() > opts.stagnation_window {
            let old = residuals[residuals.len() - 1 - opts.stagnation_window];
            if (rn - old).abs() <= opts.stagnation_tol * old {
                stagnated = true;
                break;
            }
        }

        precond.apply(&r, &mut z);
        let rz_new = dot(&r, &z).re;
        if !(rz_new > T::zero()) {
            if opts.detect_stagnation {
                stagnated = true;
                break;
            }
            return Err(Error::NumericalBreakdown {
                iteration: iterations,
                detail: "preconditioned residual lost positivity".into(),
            });
        }
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + pi.scale(beta);
        }
    }

    if !converged && best.0 < *residuals.last().unwrap() {
        x = best.1;
    }
    let true_residual = norm(&residual(a, rhs, &x, &mut q)).to_f64_lossy();
    Ok(PcgOutcome {
        solution: x,
        iterations,
        residuals,
        converged,
        stagnated,
        true_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag_op(d: Vec<f64>) -> impl LinearOperator<f64> {
        let n = d.len();
        FnOperator::new(n, move |x: &[Cx<f64>], out: &mut [Cx<f64>]| {
            for ((o, xi), di) in out.iter_mut().zip(x).zip(&d) {
                *o = xi * di;
            }
        })
    }

    #[test]
    fn identity_converges_in_one_step() {
        let f: Vec<Cx<f64>> = (0..6).map(|i| Cx::new(i as f64, 1.0 - i as f64)).collect();
        let out = pcg(&Identity(6), &Identity(6), &f, &PcgOptions::default()).unwrap();
        assert!(out.converged);
        assert_eq!(out.iterations, 1);
        for (a, b) in out.solution.iter().zip(&f) {
            assert!((a - b).norm() < 1e-15);
        }
    }

    #[test]
    fn diagonal_finite_termination() {
        let a = diag_op((1..=8).map(|i| i as f64).collect());
        let f: Vec<Cx<f64>> = (0..8).map(|i| Cx::new(1.0, i as f64 * 0.1)).collect();
        let opts = PcgOptions { rel_tol: 1e-14, abs_tol: 1e-14, ..Default::default() };
        let out = pcg(&a, &Identity(8), &f, &opts).unwrap();
        assert!(out.converged);
        assert!(out.iterations <= 8, "{} iterations", out.iterations);
        for (i, (xi, fi)) in out.solution.iter().zip(&f).enumerate() {
            assert!((xi * (i as f64 + 1.0) - fi).norm() < 1e-13);
        }
    }

    #[test]
    fn exact_preconditioner_is_one_step() {
        let d: Vec<f64> = (1..=20).map(|i| (i * i) as f64).collect();
        let inv: Vec<f64> = d.iter().map(|x| 1.0 / x).collect();
        let f: Vec<Cx<f64>> = (0..20).map(|i| Cx::new(1.0, -(i as f64))).collect();
        let out = pcg(&diag_op(d), &diag_op(inv), &f, &PcgOptions::default()).unwrap();
        assert!(out.converged);
        assert_eq!(out.iterations, 1);
    }

    #[test]
    fn zero_rhs_is_immediate() {
        let f = vec![Cx::<f64>::zero(); 4];
        let out = pcg(&Identity(4), &Identity(4), &f, &PcgOptions::default()).unwrap();
        assert!(out.converged);
        assert_eq!(out.iterations, 0);
    }

    #[test]
    fn non_hermitian_is_detected() {
        let a = FnOperator::new(3, |x: &[Cx<f64>], out: &mut [Cx<f64>]| {
            out[0] = x[0] + x[1] * 2.0;
            out[1] = x[1];
            out[2] = x[2];
        });
        let opts = PcgOptions { check_hermitian: true, ..Default::default() };
        let f = vec![Cx::new(1.0, 0.0); 3];
        assert!(matches!(pcg(&a, &Identity(3), &f, &opts), Err(Error::InvalidOperator(_))));
    }

    #[test]
    fn indefinite_operator_breaks_down() {
        let a = diag_op(vec![1.0, -1.0]);
        let f = vec![Cx::new(0.0, 0.0), Cx::new(1.0, 0.0)];
        let err = pcg(&a, &Identity(2), &f, &PcgOptions::default());
        assert!(matches!(err, Err(Error::NumericalBreakdown { iteration: 1, .. })));
    }

    #[test]
    fn residual_bound_holds_when_converged() {
        let d: Vec<f64> = (0..50).map(|i| 1.0 + (i as f64).powi(3)).collect();
        let a = diag_op(d.clone());
        let f: Vec<Cx<f64>> = (0..50).map(|i| Cx::new((i as f64).sin(), 0.3)).collect();
        let out = pcg(&a, &Identity(50), &f, &PcgOptions::default()).unwrap();
        assert!(out.converged);
        let tol = 1e-13f64.max(1e-10 * norm(&f));
        assert!(out.true_residual <= tol);
    }

    #[test]
    fn dimension_mismatch() {
        let f = vec![Cx::new(1.0, 0.0); 3];
        assert!(pcg(&Identity(4), &Identity(3), &f, &PcgOptions::default()).is_err());
    }
}
