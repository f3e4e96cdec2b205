use nalgebra::{DMatrix, DVector};
use num_complex::Complex;

use crate::error::{Error, Result};
use crate::grid::RangeDopplerGrid;
use crate::operators::dense_materialize;
use crate::scalar::Real;
use crate::solver::FilterOutput;
use crate::waveform::PulseTrain;

/// Direct solve of the regularized normal equations on the explicit dictionary.
///
/// Solves the stacked least-squares problem `[A; diag(sqrt sigma)] g ~ [y; 0]`
/// by column-pivoted QR, which avoids squaring the condition number. Pivots
/// below `(rows + cols) * eps * |r_00|` are treated as zero; the result is
/// then the minimum-norm least-squares solution and `rank_deficient` is set.
pub fn dense_filter_oracle<T: Real>(
    train: &PulseTrain<T>,
    grid: &RangeDopplerGrid,
    sigma: &[f64],
    y: &[Complex<f64>],
) -> Result<FilterOutput<f64>> {
    let a = dense_materialize(train, grid)?;
    let (rows, cols) = a.shape();
    if y.len() != rows {
        return Err(Error::invalid(format!("signal has {} samples, expected {rows}", y.len())));
    }
    if sigma.len() != cols {
        return Err(Error::invalid(format!("regularizer has length {}, expected {cols}", sigma.len())));
    }
    if sigma.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
        return Err(Error::invalid("regularizer weights must be finite and non-negative"));
    }
    let mut stacked = DMatrix::<Complex<f64>>::zeros(rows + cols, cols);
    stacked.rows_mut(0, rows).copy_from(&a);
    for (i, s) in sigma.iter().enumerate() {
        stacked[(rows + i, i)] = Complex::new(s.sqrt(), 0.0);
    }
    let mut rhs = DVector::<Complex<f64>>::zeros(rows + cols);
    rhs.rows_mut(0, rows).copy_from_slice(y);

    let qr = stacked.col_piv_qr();
    let r = qr.r();
    let diag0 = r[(0, 0)].norm();
    let tol = (rows + cols) as f64 * f64::EPSILON * diag0;
    let rank = (0..cols).take_while(|&i| r[(i, i)].norm() > tol).count();
    let z = qr.q().adjoint() * rhs;
    let mut x = DVector::<Complex<f64>>::zeros(cols);
    let breakdown = || Error::NumericalBreakdown { iteration: 0, detail: "singular triangular factor".into() };
    if rank == cols {
        x = r.solve_upper_triangular(&z.rows(0, cols).into_owned()).ok_or_else(breakdown)?;
    } else if rank > 0 {
        // Minimum-norm solution of [R11 R12] x = z1: factor its adjoint.
        let t_h = r.rows(0, rank).adjoint();
        let qr2 = t_h.qr();
        let w = qr2
            .r()
            .adjoint()
            .solve_lower_triangular(&z.rows(0, rank).into_owned())
            .ok_or_else(breakdown)?;
        x = qr2.q() * w;
    }
    qr.p().inv_permute_rows(&mut x);
    let g = x;

    let clutter = &a * &g;
    let mut out = FilterOutput::assemble(y, clutter.as_slice().to_vec(), g.as_slice().to_vec());
    out.rank_deficient = rank < cols;
    let ah = a.adjoint();
    let mut normal = &ah * (&a * &g) - &ah * DVector::from_column_slice(y);
    for (i, s) in sigma.iter().enumerate() {
        normal[i] += g[i] * *s;
    }
    out.normal_residual = normal.norm();
    Ok(out)
}
