//! Ground-truth scenes and received-signal synthesis.

use std::f64::consts::PI;

use num_complex::Complex;
use rand::distr::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{doppler_phase, RangeDopplerGrid, SPEED_OF_LIGHT};
use crate::kernel::ClutterKernel;
use crate::scalar::{to_c64, Cx, Real};
use crate::waveform::PulseTrain;

type C64 = Complex<f64>;

/// Point target. `delay` is measured from the start of each receive block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub delay: f64,
    pub velocity: f64,
    pub amplitude: C64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    /// `x_C`, k-major.
    pub clutter_coeffs: Vec<C64>,
    pub targets: Vec<Target>,
    pub noise_variance: f64,
    pub seed: u64,
}

impl Scene {
    /// No clutter, no targets, no noise.
    pub fn empty(grid: &RangeDopplerGrid) -> Self {
        Scene { clutter_coeffs: vec![C64::new(0.0, 0.0); grid.len()], targets: Vec::new(), noise_variance: 0.0, seed: 0 }
    }

    pub fn validate(&self, grid: &RangeDopplerGrid) -> Result<()> {
        if self.clutter_coeffs.len() != grid.len() {
            return Err(Error::invalid(format!(
                "scene has {} clutter coefficients, grid has {} cells",
                self.clutter_coeffs.len(),
                grid.len()
            )));
        }
        if !(self.noise_variance >= 0.0) || !self.noise_variance.is_finite() {
            return Err(Error::invalid("noise variance must be finite and >= 0"));
        }
        for (i, t) in self.targets.iter().enumerate() {
            if !t.delay.is_finite() || !t.velocity.is_finite() || !t.amplitude.is_finite() {
                return Err(Error::invalid(format!("target {i} has non-finite parameters")));
            }
        }
        Ok(())
    }
}

/// How Doppler enters a synthesized echo.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalModel {
    /// Per-sample Doppler phase across each echo; off-grid delays allowed.
    Full,
    /// One Doppler phase per pulse, the dictionary model.
    PerPulse,
}

/// Circular complex Gaussian draw with per-entry variance from `kernel`.
pub fn draw_clutter_gaussian<R: Rng + ?Sized>(kernel: &ClutterKernel, rng: &mut R) -> Vec<C64> {
    kernel
        .variances()
        .iter()
        .map(|v| {
            let s = (v / 2.0).sqrt();
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            C64::new(s * re, s * im)
        })
        .collect()
}

/// Exponential power with mean from `kernel`, uniform phase on `[-pi, pi]`.
pub fn draw_clutter_exponential<R: Rng + ?Sized>(kernel: &ClutterKernel, rng: &mut R) -> Vec<C64> {
    let phase = Uniform::new_inclusive(-PI, PI).expect("finite bounds");
    kernel
        .variances()
        .iter()
        .map(|v| {
            let e: f64 = Exp1.sample(rng);
            let power = v * e;
            C64::from_polar(power.sqrt(), phase.sample(rng))
        })
        .collect()
}

/// Received signal split by source; `total()` is their sum.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalParts<T: Real> {
    pub clutter: Vec<Cx<T>>,
    pub targets: Vec<Cx<T>>,
    pub noise: Vec<Cx<T>>,
}

impl<T: Real> SignalParts<T> {
    pub fn total(&self) -> Vec<Cx<T>> {
        self.clutter
            .iter()
            .zip(&self.targets)
            .zip(&self.noise)
            .map(|((c, t), n)| c + t + n)
            .collect()
    }
}

/// Concatenated receive blocks `y` (`M L` samples).
pub fn synthesize_received<T: Real>(
    train: &PulseTrain<T>,
    grid: &RangeDopplerGrid,
    scene: &Scene,
    model: SignalModel,
) -> Result<Vec<Cx<T>>> {
    Ok(synthesize_parts(train, grid, scene, model)?.total())
}

pub fn synthesize_parts<T: Real>(
    train: &PulseTrain<T>,
    grid: &RangeDopplerGrid,
    scene: &Scene,
    model: SignalModel,
) -> Result<SignalParts<T>> {
    if grid.n_delays() != train.n_delays() {
        return Err(Error::invalid(format!(
            "grid has {} delay bins, train supports {}",
            grid.n_delays(),
            train.n_delays()
        )));
    }
    scene.validate(grid)?;
    let (m_n, l) = (train.n_pulses(), train.block_len());
    let j_max = (grid.n_delays() - 1) as f64;
    let fs = train.sample_rate();
    for (i, t) in scene.targets.iter().enumerate() {
        let d = t.delay * fs;
        if !(d >= -1e-9) || d > j_max + 1e-9 {
            return Err(Error::invalid(format!(
                "target {i} delay {:e} s lies outside the receive window [0, {:e}] s",
                t.delay,
                j_max / fs
            )));
        }
    }
    let pulses: Vec<Vec<C64>> = train.pulses().iter().map(|p| to_c64(&p.samples)).collect();

    let mut clutter = vec![C64::new(0.0, 0.0); m_n * l];
    match model {
        SignalModel::PerPulse => clutter_per_pulse(train, grid, &pulses, &scene.clutter_coeffs, &mut clutter),
        SignalModel::Full => clutter_full(train, grid, &pulses, &scene.clutter_coeffs, &mut clutter),
    }

    let mut targets = vec![C64::new(0.0, 0.0); m_n * l];
    let mut planner = FftPlanner::<f64>::new();
    for t in &scene.targets {
        let d = t.delay * fs;
        match model {
            SignalModel::PerPulse => {
                let j = d.round();
                if (d - j).abs() > 1e-6 {
                    log::warn!("per-pulse model: target delay {:e} s snapped to sample {j}", t.delay);
                }
                let j = (j as usize).min(grid.n_delays() - 1);
                for (m, s) in pulses.iter().enumerate() {
                    let a = t.amplitude * doppler_phase::<f64>(train.start_time(m), t.velocity, train.carrier_freq());
                    for (n, sn) in s.iter().enumerate() {
                        targets[m * l + j + n] += a * sn;
                    }
                }
            }
            SignalModel::Full => {
                let f_d = 2.0 * t.velocity / SPEED_OF_LIGHT * train.carrier_freq();
                for (m, s) in pulses.iter().enumerate() {
                    let echo = delayed_echo(s, d, l, f_d / fs, &mut planner);
                    let a = t.amplitude * doppler_phase::<f64>(train.start_time(m), t.velocity, train.carrier_freq());
                    for (out, e) in targets[m * l..(m + 1) * l].iter_mut().zip(&echo) {
                        *out += a * e;
                    }
                }
            }
        }
    }

    let mut noise = vec![C64::new(0.0, 0.0); m_n * l];
    if scene.noise_variance > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(scene.seed);
        let s = (scene.noise_variance / 2.0).sqrt();
        for z in noise.iter_mut() {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            *z = C64::new(s * re, s * im);
        }
    }

    let cast = |v: Vec<C64>| v.iter().map(|z| Cx::new(T::of(z.re), T::of(z.im))).collect();
    Ok(SignalParts { clutter: cast(clutter), targets: cast(targets), noise: cast(noise) })
}

/// Dictionary model: `y_m = S_m (sum_k phi_m[k] x_k)`.
fn clutter_per_pulse<T: Real>(
    train: &PulseTrain<T>,
    grid: &RangeDopplerGrid,
    pulses: &[Vec<C64>],
    x: &[C64],
    out: &mut [C64],
) {
    let (j_n, l) = (grid.n_delays(), train.block_len());
    if x.iter().all(|z| *z == C64::new(0.0, 0.0)) {
        return;
    }
    for (m, s) in pulses.iter().enumerate() {
        let mut agg = vec![C64::new(0.0, 0.0); j_n];
        for (k, &v) in grid.velocities().iter().enumerate() {
            let phi = doppler_phase::<f64>(train.start_time(m), v, train.carrier_freq());
            for (a, xj) in agg.iter_mut().zip(&x[k * j_n..(k + 1) * j_n]) {
                *a += phi * xj;
            }
        }
        let block = &mut out[m * l..(m + 1) * l];
        for (j, a) in agg.iter().enumerate() {
            for (n, sn) in s.iter().enumerate() {
                block[j + n] += a * sn;
            }
        }
    }
}

/// Each grid scatterer carries its own intrapulse Doppler ramp.
fn clutter_full<T: Real>(
    train: &PulseTrain<T>,
    grid: &RangeDopplerGrid,
    pulses: &[Vec<C64>],
    x: &[C64],
    out: &mut [C64],
) {
    let (j_n, l, fs) = (grid.n_delays(), train.block_len(), train.sample_rate());
    for (k, &v) in grid.velocities().iter().enumerate() {
        let xk = &x[k * j_n..(k + 1) * j_n];
        if xk.iter().all(|z| *z == C64::new(0.0, 0.0)) {
            continue;
        }
        let step = 2.0 * v / SPEED_OF_LIGHT * train.carrier_freq() / fs;
        for (m, s) in pulses.iter().enumerate() {
            let phi = doppler_phase::<f64>(train.start_time(m), v, train.carrier_freq());
            let ramped: Vec<C64> = s
                .iter()
                .enumerate()
                .map(|(n, sn)| sn * C64::from_polar(1.0, 2.0 * PI * step * n as f64))
                .collect();
            let block = &mut out[m * l..(m + 1) * l];
            for (j, xj) in xk.iter().enumerate() {
                let a = phi * xj;
                for (n, r) in ramped.iter().enumerate() {
                    block[j + n] += a * r;
                }
            }
        }
    }
}

/// Pulse `s` delayed by `d` samples (fractional part by an FFT phase ramp)
/// inside a length-`l` block, with Doppler ramp `exp(j 2 pi step (i - d))`.
fn delayed_echo(s: &[C64], d: f64, l: usize, step: f64, planner: &mut FftPlanner<f64>) -> Vec<C64> {
    let j0 = d.floor();
    let frac = d - j0;
    let j0 = j0 as usize;
    let mut buf = vec![C64::new(0.0, 0.0); l];
    if frac.abs() < 1e-12 {
        buf[j0..j0 + s.len()].copy_from_slice(s);
    } else {
        buf[..s.len()].copy_from_slice(s);
        planner.plan_fft_forward(l).process(&mut buf);
        for (q, b) in buf.iter_mut().enumerate() {
            let f = if 2 * q < l {
                q as f64
            } else {
                q as f64 - l as f64
            } / l as f64;
            if 2 * q == l {
                *b *= (PI * frac).cos();
            } else {
                *b *= C64::from_polar(1.0, -2.0 * PI * f * frac);
            }
        }
        planner.plan_fft_inverse(l).process(&mut buf);
        let scale = 1.0 / l as f64;
        buf.rotate_right(j0);
        for b in buf.iter_mut() {
            *b *= scale;
        }
    }
    for (i, b) in buf.iter_mut().enumerate() {
        *b *= C64::from_polar(1.0, 2.0 * PI * step * (i as f64 - d));
    }
    buf
}

/// `sigma^2 = mean |y|^2 / 10^(snr_db / 10)` over the noiseless signal.
pub fn noise_variance_for_snr<T: Real>(noiseless: &[Cx<T>], snr_db: f64) -> Result<f64> {
    if noiseless.is_empty() {
        return Err(Error::invalid("empty signal"));
    }
    let power = noiseless.iter().map(|z| z.norm_sqr().to_f64_lossy()).sum::<f64>() / noiseless.len() as f64;
    if !(power > 0.0) {
        return Err(Error::invalid("noiseless signal is identically zero; SNR is undefined"));
    }
    if !snr_db.is_finite() {
        return Err(Error::invalid("SNR must be finite"));
    }
    Ok(power / 10f64.powf(snr_db / 10.0))
}
