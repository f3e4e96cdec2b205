//! Kernel-regularized clutter filtering.
//!
//! The filter solves `(A_C^H A_C + lambda_C Sigma_C^-1) g = A_C^H y` by PCG
//! over the matrix-free operators, predicts the clutter `y_C = A_C g` and
//! returns `y_filt = y - y_C`. A dense direct solve is kept as an oracle.

mod alternating;
mod dense;
mod pcg;
mod precond;

pub use alternating::{alternating_solve, AlternatingResult, TargetSetup};
pub use dense::dense_filter_oracle;
pub use pcg::{pcg, FnOperator, Identity, LinearOperator, PcgOptions, PcgOutcome};
pub use precond::{build_preconditioner, CirculantPreconditioner};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::ClutterKernel;
use crate::operators::ClutterOperator;
use crate::scalar::{Cx, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreconditionerKind {
    None,
    BlockCirculant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    pub lambda_c: f64,
    #[serde(default = "default_abs_tol")]
    pub pcg_abs_tol: f64,
    #[serde(default = "default_rel_tol")]
    pub pcg_rel_tol: f64,
    /// Defaults to `min(10 J K, 5000)`.
    #[serde(default)]
    pub max_iterations: Option<usize>,
    #[serde(default = "default_preconditioner")]
    pub preconditioner: PreconditionerKind,
    #[serde(default)]
    pub reproducible: bool,
}

fn default_abs_tol() -> f64 {
    1e-13
}

fn default_rel_tol() -> f64 {
    1e-10
}

fn default_preconditioner() -> PreconditionerKind {
    PreconditionerKind::BlockCirculant
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            lambda_c: 1.0,
            pcg_abs_tol: default_abs_tol(),
            pcg_rel_tol: default_rel_tol(),
            max_iterations: None,
            preconditioner: default_preconditioner(),
            reproducible: false,
        }
    }
}

impl FilterConfig {
    pub fn with_lambda(lambda_c: f64) -> Self {
        FilterConfig { lambda_c, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_c >= 0.0) || !self.lambda_c.is_finite() {
            return Err(Error::invalid(format!("lambda_c must be finite and >= 0, got {}", self.lambda_c)));
        }
        if !(self.pcg_abs_tol > 0.0) || !(self.pcg_rel_tol > 0.0) {
            return Err(Error::invalid("PCG tolerances must be positive"));
        }
        if self.max_iterations == Some(0) {
            return Err(Error::invalid("max_iterations must be at least 1"));
        }
        Ok(())
    }

    pub fn iteration_cap(&self, n_coeffs: usize) -> usize {
        self.max_iterations.unwrap_or_else(|| (10 * n_coeffs).min(5000))
    }
}

/// Result of one clutter-filtering pass.
#[derive(Debug, Clone)]
pub struct FilterOutput<T: Real> {
    pub y_filt: Vec<Cx<T>>,
    /// `y_C = A_C g`; `y_filt[i] == y[i] - clutter_estimate[i]` exactly.
    pub clutter_estimate: Vec<Cx<T>>,
    pub coefficients: Vec<Cx<T>>,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    pub converged: bool,
    /// PCG stopped on a stalled residual (singular system).
    pub stagnated: bool,
    /// Dense oracle found the system rank-deficient.
    pub rank_deficient: bool,
    /// `||(A^H A + diag(sigma)) g - A^H y||_2`.
    pub normal_residual: f64,
}

impl<T: Real> FilterOutput<T> {
    pub(crate) fn assemble(y: &[Cx<T>], clutter_estimate: Vec<Cx<T>>, coefficients: Vec<Cx<T>>) -> Self {
        let y_filt = y.iter().zip(&clutter_estimate).map(|(a, b)| a - b).collect();
        FilterOutput {
            y_filt,
            clutter_estimate,
            coefficients,
            iterations: 0,
            residual_history: Vec::new(),
            converged: true,
            stagnated: false,
            rank_deficient: false,
            normal_residual: 0.0,
        }
    }

    /// Diagnostic CSV `iter,resid_norm`.
    pub fn residual_csv(&self) -> String {
        let mut s = String::from("iter,resid_norm\n");
        for (i, r) in self.residual_history.iter().enumerate() {
            s.push_str(&format!("{i},{r:e}\n"));
        }
        s
    }
}

/// `A_C^H A_C + diag(sigma)` as a [`LinearOperator`].
pub struct RegularizedGram<'a, T: Real> {
    op: &'a ClutterOperator<T>,
    sigma: &'a [T],
}

impl<'a, T: Real> RegularizedGram<'a, T> {
    pub fn new(op: &'a ClutterOperator<T>, sigma: &'a [T]) -> Result<Self> {
        if sigma.len() != op.n_coeffs() {
            return Err(Error::invalid(format!(
                "regularizer has length {}, operator has {} coefficients",
                sigma.len(),
                op.n_coeffs()
            )));
        }
        if sigma.iter().any(|s| !(*s >= T::zero()) || !s.is_finite()) {
            return Err(Error::invalid("regularizer weights must be finite and non-negative"));
        }
        Ok(RegularizedGram { op, sigma })
    }
}

impl<T: Real> LinearOperator<T> for RegularizedGram<'_, T> {
    fn dim(&self) -> usize {
        self.op.n_coeffs()
    }

    fn apply(&self, x: &[Cx<T>], out: &mut [Cx<T>]) {
        self.op
            .gram_into(self.sigma, x, out)
            .expect("dimensions checked at construction");
    }
}

/// Clutter filter with regularizer `lambda_C Sigma_C^-1` taken from `kernel`.
pub fn filter_clutter<T: Real>(
    y: &[Cx<T>],
    op: &ClutterOperator<T>,
    kernel: &ClutterKernel,
    config: &FilterConfig,
) -> Result<FilterOutput<T>> {
    config.validate()?;
    if kernel.len() != op.n_coeffs() {
        return Err(Error::invalid(format!(
            "kernel has {} entries, operator has {} coefficients",
            kernel.len(),
            op.n_coeffs()
        )));
    }
    let sigma = kernel.inverse_weights::<T>(config.lambda_c)?;
    filter_with_weights(y, op, &sigma, config)
}

/// Clutter filter with an explicit diagonal regularizer `sigma`.
pub fn filter_with_weights<T: Real>(
    y: &[Cx<T>],
    op: &ClutterOperator<T>,
    sigma: &[T],
    config: &FilterConfig,
) -> Result<FilterOutput<T>> {
    config.validate()?;
    if y.len() != op.n_samples() {
        return Err(Error::invalid(format!(
            "signal has {} samples, operator expects M * L = {}",
            y.len(),
            op.n_samples()
        )));
    }
    let singular = sigma.iter().any(|s| s.is_zero());
    if singular {
        log::warn!("lambda_C = 0: the normal equations may be singular (projection filter)");
    }
    let gram = RegularizedGram::new(op, sigma)?;
    let f = op.adjoint(y)?;
    let opts = PcgOptions {
        abs_tol: config.pcg_abs_tol,
        rel_tol: config.pcg_rel_tol,
        max_iterations: config.iteration_cap(op.n_coeffs()),
        detect_stagnation: singular,
        ..Default::default()
    };
    let outcome = match config.preconditioner {
        PreconditionerKind::None => pcg(&gram, &Identity(op.n_coeffs()), &f, &opts)?,
        PreconditionerKind::BlockCirculant => {
            let pre = build_preconditioner(op, sigma);
            pcg(&gram, &pre, &f, &opts)?
        }
    };
    if !outcome.converged {
        log::warn!(
            "PCG did not converge: {} iterations, residual {:e}",
            outcome.iterations,
            outcome.true_residual
        );
    }
    let clutter = op.forward(&outcome.solution)?;
    let mut out = FilterOutput::assemble(y, clutter, outcome.solution);
    out.iterations = outcome.iterations;
    out.residual_history = outcome.residuals;
    out.converged = outcome.converged;
    out.stagnated = outcome.stagnated;
    out.normal_residual = outcome.true_residual;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{RangeDopplerGrid, VelocityAxis};
    use crate::scalar::norm;
    use crate::waveform::{assemble_train_samples, lfm_pulse, PulseTrain};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(k: usize) -> (PulseTrain<f64>, RangeDopplerGrid, Vec<Cx<f64>>) {
        let pulse = lfm_pulse::<f64>(4e5, 16e-6, 1e6).unwrap();
        let starts = [0u64, 61, 140, 197, 280, 341];
        let pulses = vec![pulse; starts.len()];
        let train = assemble_train_samples(pulses, &starts, 1e6, 1e10, Some(56)).unwrap();
        let vels: Vec<f64> = (0..k).map(|i| -60.0 + 17.0 * i as f64).collect();
        let grid = RangeDopplerGrid::for_train(&train, VelocityAxis::explicit(vels).unwrap(), 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y = (0..train.n_pulses() * train.block_len())
            .map(|_| Cx::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect();
        (train, grid, y)
    }

    fn rel(a: &[Cx<f64>], b: &[Cx<f64>]) -> f64 {
        let d: Vec<_> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        norm(&d) / norm(b)
    }

    #[test]
    fn pcg_matches_dense_oracle() {
        let (train, grid, y) = setup(5);
        let op = ClutterOperator::new(&train, &grid).unwrap();
        for lambda in [10.0, 1.0, 1e-2] {
            let sigma = vec![lambda; op.n_coeffs()];
            let cfg = FilterConfig::with_lambda(lambda);
            let it = filter_with_weights(&y, &op, &sigma, &cfg).unwrap();
            let dense = dense_filter_oracle(&train, &grid, &sigma, &y).unwrap();
            assert!(it.converged);
            assert!(!dense.rank_deficient);
            assert!(rel(&it.coefficients, &dense.coefficients) < 1e-7, "lambda {lambda}");
            assert!(rel(&it.y_filt, &dense.y_filt) < 1e-8);
            assert!(dense.normal_residual < 1e-10);
        }
    }

    #[test]
    fn output_split_is_exact() {
        let (train, grid, y) = setup(4);
        let op = ClutterOperator::new(&train, &grid).unwrap();
        let out = filter_clutter(&y, &op, &ClutterKernel::identity(&grid), &FilterConfig::default()).unwrap();
        for ((a, b), c) in out.y_filt.iter().zip(&out.clutter_estimate).zip(&y) {
            assert_eq!(*a, c - b);
        }
    }

    #[test]
    fn preconditioner_reduces_iterations() {
        let (train, grid, y) = setup(9);
        let op = ClutterOperator::new(&train, &grid).unwrap();
        let kernel = ClutterKernel::identity(&grid);
        let mut cfg = FilterConfig::with_lambda(1e-2);
        let pre = filter_clutter(&y, &op, &kernel, &cfg).unwrap();
        cfg.preconditioner = PreconditionerKind::None;
        let plain = filter_clutter(&y, &op, &kernel, &cfg).unwrap();
        assert!(pre.converged && plain.converged);
        assert!(pre.iterations <= plain.iterations, "{} vs {}", pre.iterations, plain.iterations);
        assert!(rel(&pre.coefficients, &plain.coefficients) < 1e-7);
    }

    #[test]
    fn preconditioner_is_exact_for_single_pulse_single_velocity() {
        // One pulse, one velocity: the Gram is the J x J section of a
        // circulant, so the preconditioner is close but not exact; with
        // a large regularizer the system is nearly diagonal.
        let (train, grid, y) = setup(1);
        let op = ClutterOperator::new(&train, &grid).unwrap();
        let sigma = vec![1e6; op.n_coeffs()];
        let out = filter_with_weights(&y, &op, &sigma, &FilterConfig::with_lambda(1e6)).unwrap();
        assert!(out.converged);
        assert!(out.iterations <= 3);
    }

    #[test]
    fn zero_lambda_is_a_projection() {
        let (train, grid, y) = setup(3);
        let op = ClutterOperator::new(&train, &grid).unwrap();
        let out = filter_clutter(&y, &op, &ClutterKernel::identity(&grid), &FilterConfig::with_lambda(0.0)).unwrap();
        // Residual is orthogonal to the dictionary.
        let back = op.adjoint(&out.y_filt).unwrap();
        assert!(norm(&back) < 1e-7 * norm(&op.adjoint(&y).unwrap()));
        let dense = dense_filter_oracle(&train, &grid, &vec![0.0; op.n_coeffs()], &y).unwrap();
        assert!(rel(&out.y_filt, &dense.y_filt) < 1e-7);
    }

    #[test]
    fn dense_oracle_minimum_norm_when_singular() {
        // With one pulse at t = 0 every Doppler column repeats, so the
        // minimum-norm solution splits evenly across the two copies.
        let pulse = lfm_pulse::<f64>(4e5, 16e-6, 1e6).unwrap();
        let train = assemble_train_samples(vec![pulse], &[0], 1e6, 1e10, Some(40)).unwrap();
        let y: Vec<Cx<f64>> = (0..40).map(|i| Cx::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos())).collect();
        let twin = RangeDopplerGrid::for_train(&train, VelocityAxis::explicit(vec![0.0, 5.0]).unwrap(), 0.0).unwrap();
        let single = RangeDopplerGrid::for_train(&train, VelocityAxis::explicit(vec![0.0]).unwrap(), 0.0).unwrap();
        let out = dense_filter_oracle(&train, &twin, &vec![0.0; twin.len()], &y).unwrap();
        let base = dense_filter_oracle(&train, &single, &vec![0.0; single.len()], &y).unwrap();
        assert!(out.rank_deficient && !base.rank_deficient);
        let j = twin.n_delays();
        let halves: Vec<Cx<f64>> = base.coefficients.iter().map(|c| c * 0.5).collect();
        assert!(rel(&out.coefficients[..j], &halves) < 1e-10);
        assert!(rel(&out.coefficients[j..], &halves) < 1e-10);
        assert!(rel(&out.y_filt, &base.y_filt) < 1e-10);
    }

    #[test]
    fn large_lambda_leaves_signal_untouched() {
        let (train, grid, y) = setup(3);
        let op = ClutterOperator::new(&train, &grid).unwrap();
        let out = filter_clutter(&y, &op, &ClutterKernel::identity(&grid), &FilterConfig::with_lambda(1e12)).unwrap();
        assert!(rel(&out.y_filt, &y) < 1e-9);
    }

    #[test]
    fn config_validation() {
        let (train, grid, y) = setup(2);
        let op = ClutterOperator::new(&train, &grid).unwrap();
        let k = ClutterKernel::identity(&grid);
        assert!(filter_clutter(&y, &op, &k, &FilterConfig::with_lambda(-1.0)).is_err());
        assert!(filter_clutter(&y, &op, &k, &FilterConfig::with_lambda(f64::NAN)).is_err());
        assert!(filter_clutter(&y[1..], &op, &k, &FilterConfig::default()).is_err());
        let cfg = FilterConfig { max_iterations: Some(0), ..Default::default() };
        assert!(filter_clutter(&y, &op, &k, &cfg).is_err());
        assert_eq!(FilterConfig::default().iteration_cap(41 * 2), 820);
        assert_eq!(FilterConfig::default().iteration_cap(10_000), 5000);
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let (train, grid, y) = setup(9);
        let op = ClutterOperator::new(&train, &grid).unwrap();
        let cfg = FilterConfig {
            lambda_c: 1e-3,
            max_iterations: Some(2),
            preconditioner: PreconditionerKind::None,
            ..Default::default()
        };
        let out = filter_clutter(&y, &op, &ClutterKernel::identity(&grid), &cfg).unwrap();
        assert!(!out.converged);
        assert!(out.iterations <= 2);
    }

    #[test]
    fn f32_filter_tracks_f64() {
        let (train, grid, y) = setup(3);
        let op64 = ClutterOperator::new(&train, &grid).unwrap();
        let t32: PulseTrain<f32> = PulseTrain::from_json(&train.to_json().unwrap()).unwrap();
        let op32 = ClutterOperator::new(&t32, &grid).unwrap();
        let y32: Vec<Cx<f32>> = crate::scalar::from_c64(&y);
        let k = ClutterKernel::identity(&grid);
        let mut cfg = FilterConfig::with_lambda(1.0);
        let a = filter_clutter(&y, &op64, &k, &cfg).unwrap();
        cfg.pcg_abs_tol = 1e-6;
        cfg.pcg_rel_tol = 1e-5;
        let b = filter_clutter(&y32, &op32, &k, &cfg).unwrap();
        assert!(rel(&crate::scalar::to_c64(&b.y_filt), &a.y_filt) < 1e-4);
    }
}
