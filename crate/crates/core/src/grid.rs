//! Range-Doppler dictionary grid and per-pulse Doppler phase tables.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{Cx, Real};
use crate::waveform::PulseTrain;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Sorted velocity axis, either one uniform segment or a union of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityAxis {
    values: Vec<f64>,
    /// Constant spacing when the axis is a single uniform segment.
    spacing: Option<f64>,
}

impl VelocityAxis {
    /// `v_min, v_min + dv, ..., v_max`; `v_max - v_min` must be a multiple of `dv`.
    pub fn uniform(v_min: f64, dv: f64, v_max: f64) -> Result<Self> {
        let values = segment(v_min, dv, v_max)?;
        Ok(VelocityAxis { values, spacing: Some(dv) })
    }

    /// Union of disjoint uniform segments `(v_min, dv, v_max)`.
    pub fn segments(parts: &[(f64, f64, f64)]) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::invalid("velocity axis needs at least one segment"));
        }
        let mut values = Vec::new();
        for &(lo, dv, hi) in parts {
            values.extend(segment(lo, dv, hi)?);
        }
        values.sort_by(f64::total_cmp);
        let spacing = if parts.len() == 1 { Some(parts[0].1) } else { None };
        let axis = VelocityAxis { values, spacing };
        axis.check_sorted()?;
        Ok(axis)
    }

    pub fn explicit(values: Vec<f64>) -> Result<Self> {
        let axis = VelocityAxis { values, spacing: None };
        axis.check_sorted()?;
        Ok(axis)
    }

    fn check_sorted(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::invalid("velocity axis is empty"));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("velocity axis has non-finite entries"));
        }
        if self.values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("velocities must be strictly increasing"));
        }
        Ok(())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn uniform_spacing(&self) -> Option<f64> {
        self.spacing
    }

    /// Width of the Doppler bin around entry `k`: the uniform spacing, or the
    /// distance to the nearest neighbour on a segmented axis.
    pub fn bin_width(&self, k: usize) -> f64 {
        if let Some(dv) = self.spacing {
            return dv;
        }
        let v = &self.values;
        let left = if k > 0 { v[k] - v[k - 1] } else { f64::INFINITY };
        let right = if k + 1 < v.len() { v[k + 1] - v[k] } else { f64::INFINITY };
        let w = left.min(right);
        if w.is_finite() {
            w
        } else {
            1.0
        }
    }
}

fn segment(v_min: f64, dv: f64, v_max: f64) -> Result<Vec<f64>> {
    if !(dv > 0.0) || !dv.is_finite() {
        return Err(Error::invalid(format!("velocity spacing must be positive, got {dv}")));
    }
    if !(v_max >= v_min) {
        return Err(Error::invalid(format!("v_max {v_max} below v_min {v_min}")));
    }
    let steps = (v_max - v_min) / dv;
    let n = steps.round();
    if (steps - n).abs() > 1e-9 * steps.max(1.0) {
        return Err(Error::invalid(format!(
            "velocity span [{v_min}, {v_max}] is not a multiple of {dv}"
        )));
    }
    Ok((0..=n as usize).map(|k| v_min + k as f64 * dv).collect())
}

/// Uniform rectangular `(tau_j, v_k)` grid. Delays are per-pulse fast time
/// `j / f_s`, `j = 0..J`; coefficient vectors are laid out k-major, so cell
/// `(j, k)` lives at `k * J + j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeDopplerGrid {
    n_delays: usize,
    sample_rate: f64,
    velocities: VelocityAxis,
    /// Absolute range of delay bin 0, m.
    range_offset: f64,
}

impl RangeDopplerGrid {
    pub fn new(
        n_delays: usize,
        sample_rate: f64,
        velocities: VelocityAxis,
        range_offset: f64,
    ) -> Result<Self> {
        if n_delays == 0 {
            return Err(Error::invalid("grid needs at least one delay bin"));
        }
        if !(sample_rate > 0.0) {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if !range_offset.is_finite() {
            return Err(Error::invalid("range offset must be finite"));
        }
        Ok(RangeDopplerGrid { n_delays, sample_rate, velocities, range_offset })
    }

    /// Grid whose delay axis covers the valid window `J = L - N + 1` of `train`.
    pub fn for_train<T: Real>(
        train: &PulseTrain<T>,
        velocities: VelocityAxis,
        range_offset: f64,
    ) -> Result<Self> {
        Self::new(train.n_delays(), train.sample_rate(), velocities, range_offset)
    }

    /// `J`
    pub fn n_delays(&self) -> usize {
        self.n_delays
    }

    /// `K`
    pub fn n_velocities(&self) -> usize {
        self.velocities.len()
    }

    /// `J * K`
    pub fn len(&self) -> usize {
        self.n_delays * self.velocities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn range_offset(&self) -> f64 {
        self.range_offset
    }

    pub fn velocity_axis(&self) -> &VelocityAxis {
        &self.velocities
    }

    pub fn velocities(&self) -> &[f64] {
        self.velocities.values()
    }

    pub fn delay(&self, j: usize) -> f64 {
        j as f64 / self.sample_rate
    }

    pub fn velocity(&self, k: usize) -> f64 {
        self.velocities.values[k]
    }

    /// Absolute range of delay bin `j`, m.
    pub fn range(&self, j: usize) -> f64 {
        self.delay(j) * SPEED_OF_LIGHT / 2.0 + self.range_offset
    }

    /// Range-bin spacing `c / (2 f_s)`, m.
    pub fn range_spacing(&self) -> f64 {
        SPEED_OF_LIGHT / (2.0 * self.sample_rate)
    }

    /// Delay (fast time, s) of an absolute range.
    pub fn delay_of_range(&self, range: f64) -> f64 {
        (range - self.range_offset) * 2.0 / SPEED_OF_LIGHT
    }

    pub fn flat_index(&self, j: usize, k: usize) -> usize {
        k * self.n_delays + j
    }

    pub fn cell(&self, flat: usize) -> (usize, usize) {
        (flat % self.n_delays, flat / self.n_delays)
    }

    /// Exact lookup of a grid cell; `None` when `(tau, v)` is off-grid.
    pub fn grid_index(&self, tau: f64, v: f64) -> Option<(usize, usize)> {
        const TOL: f64 = 1e-6;
        let j = self.delay_bin(tau, TOL)?;
        let k = self.velocity_bin(v, TOL)?;
        Some((j, k))
    }

    /// Nearest cell within half a bin in both axes.
    pub fn nearest_index(&self, tau: f64, v: f64) -> Option<(usize, usize)> {
        let j = self.delay_bin(tau, 0.5)?;
        let k = self.velocity_bin(v, 0.5)?;
        Some((j, k))
    }

    fn delay_bin(&self, tau: f64, tol: f64) -> Option<usize> {
        let pos = tau * self.sample_rate;
        let j = pos.round();
        if !pos.is_finite() || (pos - j).abs() > tol || j < 0.0 || j >= self.n_delays as f64 {
            return None;
        }
        Some(j as usize)
    }

    fn velocity_bin(&self, v: f64, tol: f64) -> Option<usize> {
        let vals = self.velocities.values();
        let k = match vals.binary_search_by(|x| x.total_cmp(&v)) {
            Ok(k) => k,
            Err(i) => {
                let lo = i.checked_sub(1);
                let hi = (i < vals.len()).then_some(i);
                match (lo, hi) {
                    (Some(a), Some(b)) => {
                        if v - vals[a] <= vals[b] - v {
                            a
                        } else {
                            b
                        }
                    }
                    (Some(a), None) => a,
                    (None, Some(b)) => b,
                    (None, None) => return None,
                }
            }
        };
        let width = self.velocities.bin_width(k);
        ((v - vals[k]).abs() <= tol * width).then_some(k)
    }
}

/// Rule-of-thumb Doppler grid spacing `c / (2 T_obs f_c)`, with `T_obs` the
/// end of the last pulse.
pub fn recommended_doppler_spacing<T: Real>(train: &PulseTrain<T>) -> f64 {
    SPEED_OF_LIGHT / (2.0 * train.observation_time() * train.carrier_freq())
}

/// Doppler phase of a scatterer at velocity `v` for a pulse starting `start`
/// seconds after the first, in cycles reduced to `[-0.5, 0.5]`.
pub(crate) fn doppler_cycles(start: f64, v: f64, carrier_freq: f64) -> f64 {
    let cycles = start * (2.0 * v / SPEED_OF_LIGHT) * carrier_freq;
    cycles - cycles.round()
}

pub(crate) fn doppler_phase<T: Real>(start: f64, v: f64, carrier_freq: f64) -> Cx<T> {
    let (s, c) = (2.0 * std::f64::consts::PI * doppler_cycles(start, v, carrier_freq)).sin_cos();
    Cx::new(T::of(c), T::of(s))
}

/// `phi_m[k] = exp(j 2 pi T_s,m (2 v_k / c) f_c)` for every pulse `m`.
pub fn doppler_phases<T: Real>(grid: &RangeDopplerGrid, train: &PulseTrain<T>) -> Vec<Vec<Cx<T>>> {
    doppler_phases_for(grid.velocities(), train)
}

pub(crate) fn doppler_phases_for<T: Real>(velocities: &[f64], train: &PulseTrain<T>) -> Vec<Vec<Cx<T>>> {
    (0..train.n_pulses())
        .map(|m| {
            let start = train.start_time(m);
            velocities
                .iter()
                .map(|&v| doppler_phase(start, v, train.carrier_freq()))
                .collect()
        })
        .collect()
}
