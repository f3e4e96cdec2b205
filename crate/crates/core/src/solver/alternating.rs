use crate::error::Result;
use crate::grid::RangeDopplerGrid;
use crate::kernel::ClutterKernel;
use crate::operators::ClutterOperator;
use crate::scalar::{Cx, Real};
use crate::solver::{filter_with_weights, FilterConfig, FilterOutput};
use crate::targets::{estimate_targets, PursuitResult, TargetSearch};

/// Target dictionary and pursuit settings for [`alternating_solve`].
pub struct TargetSetup<'a, T: Real> {
    pub op: &'a ClutterOperator<T>,
    pub grid: &'a RangeDopplerGrid,
    pub search: TargetSearch,
}

#[derive(Debug, Clone)]
pub struct AlternatingResult<T: Real> {
    pub targets: PursuitResult<T>,
    /// Filter pass on `y - A_T x_T` for the accepted `x_T`.
    pub filter: FilterOutput<T>,
    /// `||y - A_T x_T - A_C g||^2 + g^H diag(sigma) g` after every half-step.
    pub objective: Vec<f64>,
    /// Outer iterations run.
    pub outer_iterations: usize,
}

fn objective<T: Real>(y: &[Cx<T>], s_t: &[Cx<T>], out: &FilterOutput<T>, sigma: &[T]) -> f64 {
    let fit: f64 = y
        .iter()
        .zip(s_t)
        .zip(&out.clutter_estimate)
        .map(|((a, b), c)| (a - b - c).norm_sqr().to_f64_lossy())
        .sum();
    let penalty: f64 = out
        .coefficients
        .iter()
        .zip(sigma)
        .map(|(g, s)| (g.norm_sqr() * *s).to_f64_lossy())
        .sum();
    fit + penalty
}

/// Block-coordinate descent between clutter filtering and target pursuit.
///
/// Each outer iteration filters `y - A_T x_T`, then runs the pursuit on
/// `y - y_C`. A new target set is kept only if it does not raise the
/// quadratic objective; otherwise the iteration stops. With `n_outer = 1`
/// this is the plain filter-then-detect pipeline.
pub fn alternating_solve<T: Real>(
    y: &[Cx<T>],
    clutter_op: &ClutterOperator<T>,
    kernel: &ClutterKernel,
    config: &FilterConfig,
    target: &TargetSetup<'_, T>,
    n_outer: usize,
) -> Result<AlternatingResult<T>> {
    if n_outer == 0 {
        return Err(crate::error::Error::invalid("n_outer must be at least 1"));
    }
    let sigma = kernel.inverse_weights::<T>(config.lambda_c)?;
    let mut s_t = vec![Cx::new(T::zero(), T::zero()); y.len()];
    let mut filter = filter_with_weights(y, clutter_op, &sigma, config)?;
    let mut objective_hist = vec![objective(y, &s_t, &filter, &sigma)];
    let mut targets: Option<PursuitResult<T>> = None;
    let mut outer = 0;

    for it in 0..n_outer {
        outer = it + 1;
        if it > 0 {
            let shifted: Vec<Cx<T>> = y.iter().zip(&s_t).map(|(a, b)| a - b).collect();
            filter = filter_with_weights(&shifted, clutter_op, &sigma, config)?;
            objective_hist.push(objective(y, &s_t, &filter, &sigma));
        }
        if !filter.converged {
            log::warn!("alternating solve: clutter filter did not converge at outer iteration {outer}");
            break;
        }
        let cleaned: Vec<Cx<T>> = y.iter().zip(&filter.clutter_estimate).map(|(a, c)| a - c).collect();
        let candidate = estimate_targets(&cleaned, target.op, target.grid, &target.search)?;
        let cand_s = target.op.forward(&candidate.coefficients(target.grid))?;
        let cand_obj = objective(y, &cand_s, &filter, &sigma);
        let current = *objective_hist.last().unwrap();
        if cand_obj > current {
            break;
        }
        objective_hist.push(cand_obj);
        s_t = cand_s;
        targets = Some(candidate);
    }

    Ok(AlternatingResult {
        targets: targets.unwrap_or_else(|| PursuitResult { estimates: Vec::new(), residual_norms: Vec::new(), residual: y.to_vec() }),
        filter,
        objective: objective_hist,
        outer_iterations: outer,
    })
}
