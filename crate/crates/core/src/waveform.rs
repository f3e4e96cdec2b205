//! Baseband pulse generation and irregular-PRI pulse trains.
//!
//! All timing is held as integer sample counts so that every pulse start and
//! every pulse interval sits exactly on the `1/f_s` sampling grid.

use rand::distr::{Distribution, Uniform};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{Cx, Real};

/// Off-grid tolerance, in samples, when converting a time in seconds to a
/// sample index.
const GRID_TOL_SAMPLES: f64 = 1e-6;

/// Single transmitted pulse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct Pulse<T> {
    pub samples: Vec<Cx<T>>,
    /// Start of transmission, in samples from the first pulse.
    pub start_sample: u64,
}

impl<T: Real> Pulse<T> {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Ordered, validated sequence of pulses sharing one sampling grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct PulseTrain<T> {
    pulses: Vec<Pulse<T>>,
    sample_rate: f64,
    carrier_freq: f64,
    block_len: usize,
}

impl<T: Real> PulseTrain<T> {
    pub fn pulses(&self) -> &[Pulse<T>] {
        &self.pulses
    }

    pub fn pulse(&self, m: usize) -> &Pulse<T> {
        &self.pulses[m]
    }

    /// `M`
    pub fn n_pulses(&self) -> usize {
        self.pulses.len()
    }

    /// `N`, the longest pulse in samples.
    pub fn max_pulse_len(&self) -> usize {
        self.pulses.iter().map(Pulse::len).max().unwrap_or(0)
    }

    /// `L`, the per-pulse block length in samples.
    pub fn block_len(&self) -> usize {
        self.block_len
    }

    /// `J = L - N + 1`, the number of valid delay bins per block.
    pub fn n_delays(&self) -> usize {
        self.block_len + 1 - self.max_pulse_len()
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn carrier_freq(&self) -> f64 {
        self.carrier_freq
    }

    pub fn start_time(&self, m: usize) -> f64 {
        self.pulses[m].start_sample as f64 / self.sample_rate
    }

    pub fn start_times(&self) -> Vec<f64> {
        (0..self.n_pulses()).map(|m| self.start_time(m)).collect()
    }

    pub fn duration(&self, m: usize) -> f64 {
        self.pulses[m].len() as f64 / self.sample_rate
    }

    /// Pulse intervals `T_d,m` in samples (M - 1 entries).
    pub fn intervals_samples(&self) -> Vec<u64> {
        self.pulses
            .windows(2)
            .map(|w| w[1].start_sample - w[0].start_sample)
            .collect()
    }

    /// End of the last pulse, in seconds.
    pub fn observation_time(&self) -> f64 {
        let last = self.n_pulses() - 1;
        self.start_time(last) + self.duration(last)
    }

    pub fn to_json(&self) -> Result<String>
    where
        T: Serialize,
    {
        serde_json::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    /// Parse and re-validate a serialized train.
    pub fn from_json(text: &str) -> Result<Self>
    where
        T: for<'a> Deserialize<'a>,
    {
        let raw: Self = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        raw.validate()?;
        Ok(raw)
    }

    fn validate(&self) -> Result<()> {
        check_layout(
            self.pulses.iter().map(|p| (p.len(), p.start_sample)),
            self.sample_rate,
            self.block_len,
        )
    }
}

/// Centered linear up-chirp with unit modulus.
///
/// Sample `n` has phase `pi * (B / tau) * (t_n - tau / 2)^2` with `t_n = n / f_s`.
pub fn lfm_pulse<T: Real>(bandwidth: f64, duration: f64, sample_rate: f64) -> Result<Vec<Cx<T>>> {
    if !(duration > 0.0) || !duration.is_finite() {
        return Err(Error::invalid(format!("pulse duration must be positive, got {duration}")));
    }
    if !(sample_rate > 0.0) || !sample_rate.is_finite() {
        return Err(Error::invalid(format!("sample rate must be positive, got {sample_rate}")));
    }
    if !(bandwidth >= 0.0) {
        return Err(Error::invalid(format!("bandwidth must be non-negative, got {bandwidth}")));
    }
    if bandwidth > sample_rate {
        return Err(Error::invalid(format!(
            "bandwidth {bandwidth} Hz exceeds complex Nyquist rate {sample_rate} Hz"
        )));
    }
    let n = (sample_rate * duration).round() as usize;
    if n < 2 {
        return Err(Error::invalid(format!("pulse has {n} samples, need at least 2")));
    }
    let rate = bandwidth / duration;
    Ok((0..n)
        .map(|i| {
            let t = i as f64 / sample_rate - duration / 2.0;
            let phase = std::f64::consts::PI * rate * t * t;
            Cx::new(T::of(phase.cos()), T::of(phase.sin()))
        })
        .collect())
}

/// Draw pulse start times with intervals uniform on `[pri_low, pri_high]`,
/// each rounded to the nearest sample. The first start is 0.
pub fn draw_irregular_pri<R: Rng + ?Sized>(
    n_pulses: usize,
    pri_low: f64,
    pri_high: f64,
    sample_rate: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    Ok(draw_irregular_pri_samples(n_pulses, pri_low, pri_high, sample_rate, rng)?
        .into_iter()
        .map(|s| s as f64 / sample_rate)
        .collect())
}

/// Same draw as [`draw_irregular_pri`], returned as sample indices.
pub fn draw_irregular_pri_samples<R: Rng + ?Sized>(
    n_pulses: usize,
    pri_low: f64,
    pri_high: f64,
    sample_rate: f64,
    rng: &mut R,
) -> Result<Vec<u64>> {
    if n_pulses == 0 {
        return Err(Error::invalid("need at least one pulse"));
    }
    if !(pri_low > 0.0) || !(pri_high >= pri_low) {
        return Err(Error::invalid(format!(
            "PRI bounds must satisfy 0 < low <= high, got [{pri_low}, {pri_high}]"
        )));
    }
    if !(sample_rate > 0.0) {
        return Err(Error::invalid("sample rate must be positive"));
    }
    let dist = Uniform::new_inclusive(pri_low, pri_high)
        .map_err(|e| Error::invalid(format!("PRI distribution: {e}")))?;
    let mut starts = Vec::with_capacity(n_pulses);
    let mut at = 0u64;
    starts.push(at);
    for _ in 1..n_pulses {
        // f64::round is half-away-from-zero.
        at += (dist.sample(rng) * sample_rate).round() as u64;
        starts.push(at);
    }
    Ok(starts)
}

/// Build and validate a pulse train. `block_len = None` selects the largest
/// admissible block, the shortest pulse interval in samples.
pub fn assemble_train<T: Real>(
    pulses: Vec<Vec<Cx<T>>>,
    start_times: &[f64],
    sample_rate: f64,
    carrier_freq: f64,
    block_len: Option<usize>,
) -> Result<PulseTrain<T>> {
    if pulses.len() != start_times.len() {
        return Err(Error::invalid(format!(
            "{} pulses but {} start times",
            pulses.len(),
            start_times.len()
        )));
    }
    if !(sample_rate > 0.0) {
        return Err(Error::invalid("sample rate must be positive"));
    }
    if !(carrier_freq > 0.0) {
        return Err(Error::invalid("carrier frequency must be positive"));
    }
    let mut starts = Vec::with_capacity(start_times.len());
    for (m, &t) in start_times.iter().enumerate() {
        let pos = t * sample_rate;
        let idx = pos.round();
        if !pos.is_finite() || idx < 0.0 || (pos - idx).abs() > GRID_TOL_SAMPLES {
            return Err(Error::invalid(format!(
                "start time of pulse {m} ({t} s) is not on the sampling grid"
            )));
        }
        starts.push(idx as u64);
    }
    assemble_train_samples(pulses, &starts, sample_rate, carrier_freq, block_len)
}

/// [`assemble_train`] with start positions already in samples.
pub fn assemble_train_samples<T: Real>(
    pulses: Vec<Vec<Cx<T>>>,
    start_samples: &[u64],
    sample_rate: f64,
    carrier_freq: f64,
    block_len: Option<usize>,
) -> Result<PulseTrain<T>> {
    if pulses.len() != start_samples.len() {
        return Err(Error::invalid(format!(
            "{} pulses but {} start times",
            pulses.len(),
            start_samples.len()
        )));
    }
    let block_len = match block_len {
        Some(l) => l,
        None => start_samples
            .windows(2)
            .map(|w| w[1].saturating_sub(w[0]))
            .min()
            .ok_or_else(|| Error::invalid("block length must be given for a single-pulse train"))?
            as usize,
    };
    check_layout(
        pulses.iter().map(Vec::len).zip(start_samples.iter().copied()),
        sample_rate,
        block_len,
    )?;
    let pulses = pulses
        .into_iter()
        .zip(start_samples)
        .map(|(samples, &start_sample)| Pulse { samples, start_sample })
        .collect();
    Ok(PulseTrain { pulses, sample_rate, carrier_freq, block_len })
}

fn check_layout(
    layout: impl Iterator<Item = (usize, u64)>,
    sample_rate: f64,
    block_len: usize,
) -> Result<()> {
    if !(sample_rate > 0.0) {
        return Err(Error::invalid("sample rate must be positive"));
    }
    let layout: Vec<(usize, u64)> = layout.collect();
    if layout.is_empty() {
        return Err(Error::invalid("pulse train is empty"));
    }
    if layout[0].1 != 0 {
        return Err(Error::invalid("first pulse must start at time 0"));
    }
    let mut max_len = 0usize;
    for (m, &(len, _)) in layout.iter().enumerate() {
        if len == 0 {
            return Err(Error::invalid(format!("pulse {m} has no samples")));
        }
        max_len = max_len.max(len);
    }
    for (m, w) in layout.windows(2).enumerate() {
        if w[1].1 <= w[0].1 {
            return Err(Error::invalid(format!(
                "start times must be strictly increasing (pulse {})",
                m + 1
            )));
        }
        let interval = w[1].1 - w[0].1;
        if interval <= w[0].0 as u64 {
            return Err(Error::invalid(format!(
                "pulse {m} overlaps pulse {}: interval {interval} samples <= duration {} samples",
                m + 1,
                w[0].0
            )));
        }
        if block_len as u64 > interval {
            return Err(Error::invalid(format!(
                "block length {block_len} exceeds pulse interval {interval} samples (pulse {m})"
            )));
        }
    }
    if block_len < max_len {
        return Err(Error::invalid(format!(
            "block length {block_len} shorter than pulse length {max_len}: no delay bins"
        )));
    }
    Ok(())
}
