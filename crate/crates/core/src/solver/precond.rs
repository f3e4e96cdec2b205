//! Block-circulant preconditioner for the regularized Gram system.
//!
//! Every diagonal Doppler block of `A_C^H A_C` equals `sum_m S_m^H S_m`
//! (the phases have unit modulus), which is the leading `J x J` section of
//! the circulant with symbol `sum_m |F s_m|^2`. Each block is
//! preconditioned by the inverse of that circulant, shifted by the mean
//! regularizer weight of the block so it stays FFT-invertible.

use num_traits::Zero;

use crate::operators::ClutterOperator;
use crate::scalar::{Cx, Real};
use crate::solver::pcg::LinearOperator;

pub struct CirculantPreconditioner<'a, T: Real> {
    op: &'a ClutterOperator<T>,
    /// `1 / (symbol + mean sigma_k)` per Doppler block.
    inv_symbols: Vec<Vec<T>>,
}

impl<'a, T: Real> CirculantPreconditioner<'a, T> {
    pub fn new(op: &'a ClutterOperator<T>, sigma: &[T]) -> Self {
        let symbol = op.power_spectrum_sum();
        let peak = symbol.iter().cloned().fold(T::zero(), T::max);
        let floor = T::of(1e-12) * peak;
        let j = op.n_delays();
        let inv_symbols = sigma
            .chunks_exact(j)
            .map(|block| {
                let mean = block.iter().cloned().sum::<T>() / T::from_usize(j).unwrap();
                symbol
                    .iter()
                    .map(|s| {
                        let d = (*s + mean).max(floor).max(T::min_positive_value());
                        T::one() / d
                    })
                    .collect()
            })
            .collect();
        CirculantPreconditioner { op, inv_symbols }
    }

    pub fn inverse_symbols(&self) -> &[Vec<T>] {
        &self.inv_symbols
    }
}

impl<T: Real> LinearOperator<T> for CirculantPreconditioner<'_, T> {
    fn dim(&self) -> usize {
        self.op.n_coeffs()
    }

    fn apply(&self, x: &[Cx<T>], out: &mut [Cx<T>]) {
        let (j, l) = (self.op.n_delays(), self.op.block_len());
        let mut buf = vec![Cx::zero(); l];
        for ((xb, ob), inv) in x.chunks_exact(j).zip(out.chunks_exact_mut(j)).zip(&self.inv_symbols) {
            buf[..j].copy_from_slice(xb);
            buf[j..].fill(Cx::zero());
            self.op.fwd(&mut buf);
            for (b, w) in buf.iter_mut().zip(inv) {
                *b = b.scale(*w);
            }
            self.op.inv(&mut buf);
            ob.copy_from_slice(&buf[..j]);
        }
    }
}

/// Block-circulant preconditioner for `A_C^H A_C + diag(sigma)`.
pub fn build_preconditioner<'a, T: Real>(
    op: &'a ClutterOperator<T>,
    sigma: &[T],
) -> CirculantPreconditioner<'a, T> {
    CirculantPreconditioner::new(op, sigma)
}
