//! Matched-filter maps and greedy sparse target reconstruction.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::RangeDopplerGrid;
use crate::operators::ClutterOperator;
use crate::scalar::{norm, to_c64, Cx, Real};

/// Power over a range-velocity grid, k-major like the coefficient vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeDopplerMap {
    pub n_delays: usize,
    pub n_velocities: usize,
    pub power: Vec<f64>,
}

impl RangeDopplerMap {
    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.power[k * self.n_delays + j]
    }

    /// Cell of the largest value; ties go to the lowest flat index.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, p) in self.power.iter().enumerate() {
            if *p > self.power[best] {
                best = i;
            }
        }
        (best % self.n_delays, best / self.n_delays)
    }

    /// The `n` strongest local maxima (8-neighbourhood), strongest first.
    pub fn top_peaks(&self, n: usize) -> Vec<(usize, usize, f64)> {
        let (jn, kn) = (self.n_delays as isize, self.n_velocities as isize);
        let mut peaks = Vec::new();
        for k in 0..kn {
            for j in 0..jn {
                let p = self.power[(k * jn + j) as usize];
                let is_peak = (-1..=1).all(|dk| {
                    (-1..=1).all(|dj| {
                        let (jj, kk) = (j + dj, k + dk);
                        (dj == 0 && dk == 0)
                            || jj < 0
                            || kk < 0
                            || jj >= jn
                            || kk >= kn
                            || self.power[(kk * jn + jj) as usize] <= p
                    })
                });
                if is_peak && p > 0.0 {
                    peaks.push((j as usize, k as usize, p));
                }
            }
        }
        peaks.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.1, a.0).cmp(&(b.1, b.0))));
        peaks.truncate(n);
        peaks
    }

    pub fn median(&self) -> f64 {
        let mut v = self.power.clone();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    }

    /// `10 log10(power)`, `-inf` for empty cells.
    pub fn to_db(&self) -> Vec<f64> {
        self.power.iter().map(|p| 10.0 * p.log10()).collect()
    }
}

/// `|A_T^H y|^2` over the operator's grid.
pub fn matched_filter_map<T: Real>(y: &[Cx<T>], op: &ClutterOperator<T>) -> Result<RangeDopplerMap> {
    let f = op.adjoint(y)?;
    Ok(RangeDopplerMap {
        n_delays: op.n_delays(),
        n_velocities: op.n_velocities(),
        power: f.iter().map(|z| z.norm_sqr().to_f64_lossy()).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSearch {
    #[serde(default = "default_iterations")]
    pub n_iterations: usize,
    /// Minimum peak height above the median of the residual map, dB.
    #[serde(default = "default_threshold")]
    pub threshold_db: f64,
}

fn default_iterations() -> usize {
    2
}

fn default_threshold() -> f64 {
    13.0
}

impl Default for TargetSearch {
    fn default() -> Self {
        TargetSearch { n_iterations: default_iterations(), threshold_db: default_threshold() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetEstimate {
    pub j: usize,
    pub k: usize,
    pub delay: f64,
    pub velocity: f64,
    pub range_m: f64,
    pub amplitude: Complex<f64>,
    /// `10 log10 |amplitude|^2`.
    pub power_db: f64,
    pub loss_db: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct PursuitResult<T: Real> {
    /// Sorted by decreasing power.
    pub estimates: Vec<TargetEstimate>,
    /// `||y - A_S x_S||` after each accepted atom, starting with `||y||`.
    pub residual_norms: Vec<f64>,
    pub residual: Vec<Cx<T>>,
}

impl<T: Real> PursuitResult<T> {
    /// Target coefficient vector on the search grid.
    pub fn coefficients(&self, grid: &RangeDopplerGrid) -> Vec<Cx<T>> {
        let mut x = vec![Cx::zero(); grid.len()];
        for e in &self.estimates {
            x[grid.flat_index(e.j, e.k)] = Cx::new(T::of(e.amplitude.re), T::of(e.amplitude.im));
        }
        x
    }
}

/// Matching pursuit with a joint least-squares refit of all selected atoms.
///
/// Each iteration picks the strongest cell of `|A^H r|^2`, refits every
/// selected amplitude against `y` and updates the residual `r`. The search
/// stops after `n_iterations`, when the next peak is less than
/// `threshold_db` above the median of the residual map, or when the residual
/// has vanished.
pub fn estimate_targets<T: Real>(
    y: &[Cx<T>],
    op: &ClutterOperator<T>,
    grid: &RangeDopplerGrid,
    search: &TargetSearch,
) -> Result<PursuitResult<T>> {
    if search.n_iterations == 0 {
        return Err(Error::invalid("target search needs at least one iteration"));
    }
    if grid.len() != op.n_coeffs() {
        return Err(Error::invalid("target grid does not match the target operator"));
    }
    if y.len() != op.n_samples() {
        return Err(Error::invalid(format!("signal has {} samples, expected {}", y.len(), op.n_samples())));
    }
    let y64 = DVector::from_vec(to_c64(y));
    let y_norm = y64.norm();
    let mut residual: Vec<Cx<T>> = y.to_vec();
    let mut residual_norms = vec![y_norm];
    let mut support: Vec<usize> = Vec::new();
    let mut atoms: Vec<DVector<Complex<f64>>> = Vec::new();
    let mut amplitudes = DVector::<Complex<f64>>::zeros(0);

    for _ in 0..search.n_iterations {
        let r_norm = *residual_norms.last().unwrap();
        if r_norm <= 1e-10 * y_norm || r_norm == 0.0 {
            break;
        }
        let map = matched_filter_map(&residual, op)?;
        let (best, peak) = map
            .power
            .iter()
            .enumerate()
            .filter(|(i, _)| !support.contains(i))
            .fold((usize::MAX, f64::NEG_INFINITY), |acc, (i, p)| if *p > acc.1 { (i, *p) } else { acc });
        if best == usize::MAX {
            break;
        }
        let median = map.median();
        if median > 0.0 && 10.0 * (peak / median).log10() < search.threshold_db {
            break;
        }
        support.push(best);
        let mut unit = vec![Cx::<T>::zero(); op.n_coeffs()];
        unit[best] = Cx::new(T::one(), T::zero());
        atoms.push(DVector::from_vec(to_c64(&op.forward(&unit)?)));
        let basis = DMatrix::from_columns(&atoms);
        let qr = basis.clone().qr();
        amplitudes = qr
            .r()
            .solve_upper_triangular(&(qr.q().adjoint() * &y64))
            .ok_or_else(|| Error::NumericalBreakdown {
                iteration: support.len(),
                detail: "selected atoms are linearly dependent".into(),
            })?;
        let fit = &basis * &amplitudes;
        residual = y
            .iter()
            .zip(fit.iter())
            .map(|(a, b)| a - Cx::new(T::of(b.re), T::of(b.im)))
            .collect();
        residual_norms.push(norm(&residual).to_f64_lossy());
    }

    let mut estimates: Vec<TargetEstimate> = support
        .iter()
        .zip(amplitudes.iter())
        .map(|(&flat, &a)| {
            let (j, k) = grid.cell(flat);
            TargetEstimate {
                j,
                k,
                delay: grid.delay(j),
                velocity: grid.velocity(k),
                range_m: grid.range(j),
                amplitude: a,
                power_db: 10.0 * a.norm_sqr().log10(),
                loss_db: None,
            }
        })
        .collect();
    estimates.sort_by(|a, b| b.power_db.total_cmp(&a.power_db));
    Ok(PursuitResult { estimates, residual_norms, residual })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakLoss {
    /// `+inf` when the target was fully suppressed.
    pub db: f64,
    pub fully_suppressed: bool,
}

/// `10 log10(before / after)` at cell `(j, k)`; `before` is the map of the
/// clutter-free, noise-free target signal.
pub fn peak_power_loss(before: &RangeDopplerMap, after: &RangeDopplerMap, j: usize, k: usize) -> Result<PeakLoss> {
    if before.n_delays != after.n_delays || before.n_velocities != after.n_velocities {
        return Err(Error::invalid("maps have different shapes"));
    }
    if j >= before.n_delays || k >= before.n_velocities {
        return Err(Error::invalid(format!("cell ({j}, {k}) is outside the map")));
    }
    let (b, a) = (before.get(j, k), after.get(j, k));
    if !(b > 0.0) {
        return Err(Error::invalid("reference map is empty at the target cell"));
    }
    if a == 0.0 {
        return Ok(PeakLoss { db: f64::INFINITY, fully_suppressed: true });
    }
    Ok(PeakLoss { db: 10.0 * (b / a).log10(), fully_suppressed: false })
}

/// CSV `range_m,velocity_mps,amplitude_re,amplitude_im,power_db,loss_db`.
pub fn estimates_csv(estimates: &[TargetEstimate]) -> String {
    let mut s = String::from("range_m,velocity_mps,amplitude_re,amplitude_im,power_db,loss_db\n");
    for e in estimates {
        let loss = e.loss_db.map(|l| format!("{l}")).unwrap_or_default();
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            e.range_m, e.velocity, e.amplitude.re, e.amplitude.im, e.power_db, loss
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::VelocityAxis;
    use crate::operators::dense_materialize;
    use crate::scene::{synthesize_received, Scene, SignalModel, Target};
    use crate::waveform::{assemble_train_samples, lfm_pulse, PulseTrain};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn setup() -> (PulseTrain<f64>, RangeDopplerGrid, ClutterOperator<f64>) {
        let pulse = lfm_pulse::<f64>(5e5, 20e-6, 1e6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut starts = vec![0u64];
        for _ in 1..16 {
            starts.push(starts.last().unwrap() + rng.random_range(120..200));
        }
        let train = assemble_train_samples(vec![pulse; 16], &starts, 1e6, 1e10, Some(100)).unwrap();
        let axis = VelocityAxis::uniform(-40.0, 4.0, 40.0).unwrap();
        let grid = RangeDopplerGrid::for_train(&train, axis, 0.0).unwrap();
        let op = ClutterOperator::new(&train, &grid).unwrap();
        (train, grid, op)
    }

    fn scene_with(grid: &RangeDopplerGrid, targets: &[(usize, usize, Complex<f64>)]) -> Scene {
        let mut s = Scene::empty(grid);
        for &(j, k, a) in targets {
            s.targets.push(Target { delay: grid.delay(j), velocity: grid.velocity(k), amplitude: a });
        }
        s
    }

    #[test]
    fn zero_signal_gives_zero_map() {
        let (_, _, op) = setup();
        let map = matched_filter_map(&vec![Cx::zero(); op.n_samples()], &op).unwrap();
        assert!(map.power.iter().all(|p| *p == 0.0));
        assert_eq!(map.median(), 0.0);
    }

    #[test]
    fn map_matches_dense() {
        let (train, grid, op) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y: Vec<Cx<f64>> = (0..op.n_samples()).map(|_| Cx::new(rng.random(), rng.random())).collect();
        let map = matched_filter_map(&y, &op).unwrap();
        let a = dense_materialize(&train, &grid).unwrap();
        let f = a.adjoint() * DVector::from_column_slice(&y);
        for (p, z) in map.power.iter().zip(f.iter()) {
            assert!((p - z.norm_sqr()).abs() <= 1e-10 * z.norm_sqr().max(1.0));
        }
    }

    #[test]
    fn single_target_peak_and_exact_amplitude() {
        let (train, grid, op) = setup();
        let amp = Complex::new(0.5, -0.2);
        let y = synthesize_received(&train, &grid, &scene_with(&grid, &[(37, 13, amp)]), SignalModel::PerPulse).unwrap();
        assert_eq!(matched_filter_map(&y, &op).unwrap().argmax(), (37, 13));
        let search = TargetSearch { n_iterations: 1, ..Default::default() };
        let res = estimate_targets(&y, &op, &grid, &search).unwrap();
        assert_eq!(res.estimates.len(), 1);
        let e = &res.estimates[0];
        assert_eq!((e.j, e.k), (37, 13));
        assert!((e.amplitude - amp).norm() <= 1e-6 * amp.norm());
        assert!(res.residual_norms[1] < 1e-10 * res.residual_norms[0]);
    }

    #[test]
    fn two_targets_recovered_and_residual_decreases() {
        let (train, grid, op) = setup();
        let truth = [(20, 4, Complex::new(0.5, 0.0)), (61, 16, Complex::new(0.0, 0.3))];
        let y = synthesize_received(&train, &grid, &scene_with(&grid, &truth), SignalModel::PerPulse).unwrap();
        let res = estimate_targets(&y, &op, &grid, &TargetSearch::default()).unwrap();
        let cells: Vec<_> = res.estimates.iter().map(|e| (e.j, e.k)).collect();
        assert_eq!(cells, vec![(20, 4), (61, 16)]);
        assert!(res.residual_norms.windows(2).all(|w| w[1] <= w[0]));
        assert!((res.estimates[1].amplitude - truth[1].2).norm() < 1e-8);
        let x = res.coefficients(&grid);
        assert_eq!(x.iter().filter(|z| z.norm() > 0.0).count(), 2);
    }

    #[test]
    fn pure_noise_rarely_detects() {
        let (_, grid, op) = setup();
        let mut false_alarms = 0;
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y: Vec<Cx<f64>> = (0..op.n_samples())
                .map(|_| {
                    let (re, im): (f64, f64) = (StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
                    Cx::new(re, im)
                })
                .collect();
            let res = estimate_targets(&y, &op, &grid, &TargetSearch::default()).unwrap();
            false_alarms += usize::from(!res.estimates.is_empty());
        }
        assert!(false_alarms <= 1, "{false_alarms} false alarms in 100 runs");
    }

    #[test]
    fn peak_loss_values() {
        let map = RangeDopplerMap { n_delays: 2, n_velocities: 1, power: vec![4.0, 1.0] };
        assert_eq!(peak_power_loss(&map, &map, 0, 0).unwrap().db, 0.0);
        let tenth = RangeDopplerMap { power: vec![0.4, 0.1], ..map.clone() };
        assert!((peak_power_loss(&map, &tenth, 0, 0).unwrap().db - 10.0).abs() < 1e-12);
        let zero = RangeDopplerMap { power: vec![0.0, 0.0], ..map.clone() };
        let l = peak_power_loss(&map, &zero, 1, 0).unwrap();
        assert!(l.fully_suppressed && l.db == f64::INFINITY);
        assert!(peak_power_loss(&map, &map, 2, 0).is_err());
    }

    #[test]
    fn peaks_are_local_maxima() {
        let map = RangeDopplerMap { n_delays: 4, n_velocities: 2, power: vec![1.0, 5.0, 2.0, 3.0, 0.5, 0.5, 0.1, 4.0] };
        let peaks = map.top_peaks(10);
        assert_eq!(peaks.iter().map(|p| (p.0, p.1)).collect::<Vec<_>>(), vec![(1, 0), (3, 1)]);
    }

    #[test]
    fn csv_header() {
        let csv = estimates_csv(&[]);
        assert_eq!(csv, "range_m,velocity_mps,amplitude_re,amplitude_im,power_db,loss_db\n");
    }
}
