//! Best-fit rate, MSE and filter response curves.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::RangeDopplerGrid;
use crate::kernel::ClutterKernel;
use crate::operators::ClutterOperator;
use crate::scalar::{norm, Cx, Real};
use crate::scene::{synthesize_received, Scene, SignalModel, Target};
use crate::solver::{filter_clutter, FilterConfig};
use crate::waveform::PulseTrain;

/// Aggregation of the per-sample errors in the best-fit rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BfrMode {
    /// `sum_i |c_i - y_i| / sum_i |c_i - mean(c)|`.
    #[default]
    PerSample,
    /// `||c - y||_2 / ||c - mean(c)||_2`.
    AggregateL2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BfrResult {
    /// Percent in `[0, 100]`.
    pub bfr: f64,
    pub mse: f64,
    pub n_samples: usize,
}

/// Best-fit rate of `estimate` against `truth`, in percent.
pub fn bfr<T: Real>(truth: &[Cx<T>], estimate: &[Cx<T>], mode: BfrMode) -> Result<f64> {
    if truth.len() != estimate.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} vs {}",
            truth.len(),
            estimate.len()
        )));
    }
    if truth.len() < 2 {
        return Err(Error::invalid("best-fit rate needs at least two samples"));
    }
    let c: Vec<Complex<f64>> = crate::scalar::to_c64(truth);
    let e: Vec<Complex<f64>> = crate::scalar::to_c64(estimate);
    let mean = c.iter().sum::<Complex<f64>>() / c.len() as f64;
    let (num, den) = match mode {
        BfrMode::PerSample => (
            c.iter().zip(&e).map(|(a, b)| (a - b).norm()).sum::<f64>(),
            c.iter().map(|a| (a - mean).norm()).sum::<f64>(),
        ),
        BfrMode::AggregateL2 => (
            c.iter().zip(&e).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt(),
            c.iter().map(|a| (a - mean).norm_sqr()).sum::<f64>().sqrt(),
        ),
    };
    if !(den > 0.0) {
        return Err(Error::UndefinedMetric("true signal is constant; best-fit rate is undefined".into()));
    }
    Ok(100.0 * (1.0 - num / den).max(0.0))
}

/// `sum_i |c_i - y_i|^2`.
pub fn mse<T: Real>(truth: &[Cx<T>], estimate: &[Cx<T>]) -> Result<f64> {
    if truth.len() != estimate.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} vs {}",
            truth.len(),
            estimate.len()
        )));
    }
    Ok(truth
        .iter()
        .zip(estimate)
        .map(|(a, b)| (a - b).norm_sqr().to_f64_lossy())
        .sum())
}

pub fn bfr_result<T: Real>(truth: &[Cx<T>], estimate: &[Cx<T>], mode: BfrMode) -> Result<BfrResult> {
    Ok(BfrResult { bfr: bfr(truth, estimate, mode)?, mse: mse(truth, estimate)?, n_samples: truth.len() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseCurve {
    pub velocities: Vec<f64>,
    pub response_db: Vec<f64>,
    pub iterations: Vec<usize>,
    pub all_converged: bool,
}

impl ResponseCurve {
    /// CSV `velocity_mps,response_db`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("velocity_mps,response_db\n");
        for (v, r) in self.velocities.iter().zip(&self.response_db) {
            s.push_str(&format!("{v},{r}\n"));
        }
        s
    }
}

/// Response of the clutter filter to a unit scatterer at range bin `j`.
///
/// Each probe velocity is synthesized with the full signal model, filtered,
/// and reported as `20 log10(||y_filt|| / ||y_in||)`.
pub fn filter_response_curve<T: Real>(
    train: &PulseTrain<T>,
    grid: &RangeDopplerGrid,
    op: &ClutterOperator<T>,
    kernel: &ClutterKernel,
    config: &FilterConfig,
    j: usize,
    probes: &[f64],
) -> Result<ResponseCurve> {
    if j >= grid.n_delays() {
        return Err(Error::invalid(format!("range bin {j} outside the grid of {} bins", grid.n_delays())));
    }
    let mut curve = ResponseCurve {
        velocities: probes.to_vec(),
        response_db: Vec::with_capacity(probes.len()),
        iterations: Vec::with_capacity(probes.len()),
        all_converged: true,
    };
    for &v in probes {
        let mut scene = Scene::empty(grid);
        scene.targets.push(Target { delay: grid.delay(j), velocity: v, amplitude: Complex::new(1.0, 0.0) });
        let y = synthesize_received(train, grid, &scene, SignalModel::Full)?;
        let out = filter_clutter(&y, op, kernel, config)?;
        let ratio = norm(&out.y_filt).to_f64_lossy() / norm(&y).to_f64_lossy();
        curve.response_db.push(20.0 * ratio.log10());
        curve.iterations.push(out.iterations);
        curve.all_converged &= out.converged;
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(v: &[(f64, f64)]) -> Vec<Cx<f64>> {
        v.iter().map(|&(a, b)| Cx::new(a, b)).collect()
    }

    #[test]
    fn bfr_unit_cases() {
        let truth = c(&[(1.0, 0.0), (-1.0, 0.0)]);
        assert_eq!(bfr(&truth, &truth, BfrMode::PerSample).unwrap(), 100.0);
        assert_eq!(bfr(&truth, &c(&[(0.0, 0.0), (0.0, 0.0)]), BfrMode::PerSample).unwrap(), 0.0);
        assert_eq!(bfr(&truth, &c(&[(0.5, 0.0), (-0.5, 0.0)]), BfrMode::PerSample).unwrap(), 50.0);
        assert_eq!(bfr(&truth, &c(&[(0.5, 0.0), (-0.5, 0.0)]), BfrMode::AggregateL2).unwrap(), 50.0);
    }

    #[test]
    fn bfr_mean_estimate_is_zero_and_clamped() {
        let truth = c(&[(1.0, 2.0), (3.0, -1.0), (0.0, 0.5)]);
        let mean = truth.iter().sum::<Cx<f64>>() / 3.0;
        assert!(bfr(&truth, &[mean; 3], BfrMode::PerSample).unwrap().abs() < 1e-12);
        assert_eq!(bfr(&truth, &c(&[(9.0, 9.0); 3]), BfrMode::PerSample).unwrap(), 0.0);
    }

    #[test]
    fn bfr_errors() {
        let k = c(&[(1.0, 1.0); 4]);
        assert!(matches!(bfr(&k, &k, BfrMode::PerSample), Err(Error::UndefinedMetric(_))));
        assert!(bfr(&k[..1], &k[..1], BfrMode::PerSample).is_err());
        assert!(bfr(&k, &k[..3], BfrMode::PerSample).is_err());
    }

    #[test]
    fn mse_values() {
        let a = c(&[(1.0, 0.0), (0.0, 0.0)]);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        assert_eq!(mse(&a, &c(&[(0.0, 0.0), (0.0, 0.0)])).unwrap(), 1.0);
        let b = c(&[(0.5, -0.25), (2.0, 1.0)]);
        assert_eq!(mse(&a, &b).unwrap(), 0.25 + 0.0625 + 4.0 + 1.0);
        assert!(mse(&a, &b[..1]).is_err());
    }

    #[test]
    fn bfr_falls_with_offset() {
        let truth = c(&[(1.0, 0.0), (-2.0, 1.0), (0.5, 0.5), (0.0, -1.0)]);
        let mut last = 100.0;
        for step in 1..20 {
            let d = step as f64 * 0.05;
            let est: Vec<_> = truth.iter().map(|z| z + Cx::new(d, 0.0)).collect();
            let b = bfr(&truth, &est, BfrMode::PerSample).unwrap();
            assert!(b < last);
            last = b;
        }
    }
}
