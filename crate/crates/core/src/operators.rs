//! Matrix-free clutter dictionary `A_C`.
//!
//! Pulse `m` contributes the block `A_C,m = phi_m^T (x) S_m`, where `S_m` is
//! the `L x J` Toeplitz convolution matrix of pulse `m` and `phi_m` its
//! Doppler phase vector. Products with `S_m` and `S_m^H` are length-`L`
//! FFTs: the pulse is zero-padded beyond `N` and coefficient blocks beyond
//! `J = L - N + 1`, so circular convolution equals linear convolution on the
//! valid window and correlations are read at lags `0..J`.
//!
//! Sums over Doppler index `k` (forward, Gram) and over pulses `m`
//! (adjoint, Gram) are accumulated in the frequency domain, so every product
//! needs one inverse transform per output block.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex;
use num_traits::Zero;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::grid::{doppler_phases_for, RangeDopplerGrid};
use crate::scalar::{Cx, Real};
use crate::waveform::PulseTrain;

/// Default cap on the number of entries of a materialized dictionary.
pub const DENSE_ENTRY_CAP: usize = 1 << 26;

/// FFT invocations recorded by a [`ClutterOperator`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FftCounts {
    /// Forward transforms of signal or coefficient blocks.
    pub forward: usize,
    /// Inverse transforms.
    pub inverse: usize,
    /// Forward transforms of the pulse waveforms (construction only).
    pub pulse: usize,
}

impl FftCounts {
    pub fn total(&self) -> usize {
        self.forward + self.inverse + self.pulse
    }
}

#[derive(Debug, Default)]
struct FftCounter {
    forward: AtomicUsize,
    inverse: AtomicUsize,
    pulse: AtomicUsize,
}

/// FFT-backed clutter dictionary for one pulse train and velocity set.
pub struct ClutterOperator<T: Real> {
    n_pulses: usize,
    block_len: usize,
    pulse_len: usize,
    n_delays: usize,
    n_velocities: usize,
    /// `F s_m`, length `L` each.
    pulse_spectra: Vec<Vec<Cx<T>>>,
    /// `|F s_m|^2`.
    power_spectra: Vec<Vec<T>>,
    /// `phi_m[k]`, `M x K`.
    phases: Vec<Vec<Cx<T>>>,
    fft: Arc<dyn Fft<T>>,
    ifft: Arc<dyn Fft<T>>,
    counter: FftCounter,
}

impl<T: Real> std::fmt::Debug for ClutterOperator<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ClutterOperator")
            .field("n_pulses", &self.n_pulses)
            .field("block_len", &self.block_len)
            .field("pulse_len", &self.pulse_len)
            .field("n_delays", &self.n_delays)
            .field("n_velocities", &self.n_velocities)
            .finish()
    }
}

impl<T: Real> ClutterOperator<T> {
    pub fn new(train: &PulseTrain<T>, grid: &RangeDopplerGrid) -> Result<Self> {
        if grid.n_delays() != train.n_delays() {
            return Err(Error::invalid(format!(
                "grid has {} delay bins, train supports L - N + 1 = {}",
                grid.n_delays(),
                train.n_delays()
            )));
        }
        if (grid.sample_rate() - train.sample_rate()).abs() > 1e-9 * train.sample_rate() {
            return Err(Error::invalid("grid and train sample rates differ"));
        }
        Ok(Self::with_velocities(train, grid.velocities()))
    }

    /// Operator over the full delay window of `train` and the given velocities.
    pub fn with_velocities(train: &PulseTrain<T>, velocities: &[f64]) -> Self {
        let l = train.block_len();
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(l);
        let ifft = planner.plan_fft_inverse(l);
        let counter = FftCounter::default();
        let mut pulse_spectra = Vec::with_capacity(train.n_pulses());
        for p in train.pulses() {
            let mut buf = vec![Cx::zero(); l];
            buf[..p.len()].copy_from_slice(&p.samples);
            fft.process(&mut buf);
            counter.pulse.fetch_add(1, Ordering::Relaxed);
            pulse_spectra.push(buf);
        }
        let power_spectra = pulse_spectra
            .iter()
            .map(|s| s.iter().map(|z| z.norm_sqr()).collect())
            .collect();
        ClutterOperator {
            n_pulses: train.n_pulses(),
            block_len: l,
            pulse_len: train.max_pulse_len(),
            n_delays: train.n_delays(),
            n_velocities: velocities.len(),
            pulse_spectra,
            power_spectra,
            phases: doppler_phases_for(velocities, train),
            fft,
            ifft,
            counter,
        }
    }

    /// `M`
    pub fn n_pulses(&self) -> usize {
        self.n_pulses
    }

    /// `L`
    pub fn block_len(&self) -> usize {
        self.block_len
    }

    /// `N`
    pub fn pulse_len(&self) -> usize {
        self.pulse_len
    }

    /// `J`
    pub fn n_delays(&self) -> usize {
        self.n_delays
    }

    /// `K`
    pub fn n_velocities(&self) -> usize {
        self.n_velocities
    }

    /// Length of a coefficient vector, `J * K`.
    pub fn n_coeffs(&self) -> usize {
        self.n_delays * self.n_velocities
    }

    /// Length of a signal vector, `M * L`.
    pub fn n_samples(&self) -> usize {
        self.n_pulses * self.block_len
    }

    pub fn phases(&self) -> &[Vec<Cx<T>>] {
        &self.phases
    }

    pub fn power_spectra(&self) -> &[Vec<T>] {
        &self.power_spectra
    }

    pub fn fft_counts(&self) -> FftCounts {
        FftCounts {
            forward: self.counter.forward.load(Ordering::Relaxed),
            inverse: self.counter.inverse.load(Ordering::Relaxed),
            pulse: self.counter.pulse.load(Ordering::Relaxed),
        }
    }

    pub fn reset_fft_counts(&self) {
        self.counter.forward.store(0, Ordering::Relaxed);
        self.counter.inverse.store(0, Ordering::Relaxed);
        self.counter.pulse.store(0, Ordering::Relaxed);
    }

    fn check_len(&self, what: &str, got: usize, want: usize) -> Result<()> {
        if got != want {
            return Err(Error::invalid(format!("{what} has length {got}, expected {want}")));
        }
        Ok(())
    }

    pub(crate) fn fwd(&self, buf: &mut [Cx<T>]) {
        self.fft.process(buf);
        self.counter.forward.fetch_add(1, Ordering::Relaxed);
    }

    /// Normalized inverse transform.
    pub(crate) fn inv(&self, buf: &mut [Cx<T>]) {
        self.ifft.process(buf);
        self.counter.inverse.fetch_add(1, Ordering::Relaxed);
        let scale = T::one() / T::from_usize(self.block_len).unwrap();
        for z in buf.iter_mut() {
            *z = z.scale(scale);
        }
    }

    /// Spectra of the zero-padded coefficient blocks `g_k`.
    fn block_spectra(&self, g: &[Cx<T>]) -> Vec<Vec<Cx<T>>> {
        let (j, l) = (self.n_delays, self.block_len);
        g.chunks_exact(j)
            .map(|blk| {
                let mut buf = vec![Cx::zero(); l];
                buf[..j].copy_from_slice(blk);
                self.fwd(&mut buf);
                buf
            })
            .collect()
    }

    /// `A_C g`: `M` concatenated blocks of length `L`.
    pub fn forward(&self, g: &[Cx<T>]) -> Result<Vec<Cx<T>>> {
        let mut out = vec![Cx::zero(); self.n_samples()];
        self.forward_into(g, &mut out)?;
        Ok(out)
    }

    pub fn forward_into(&self, g: &[Cx<T>], out: &mut [Cx<T>]) -> Result<()> {
        self.check_len("coefficient vector", g.len(), self.n_coeffs())?;
        self.check_len("output signal", out.len(), self.n_samples())?;
        let spectra = self.block_spectra(g);
        let l = self.block_len;
        for (m, block) in out.chunks_exact_mut(l).enumerate() {
            block.fill(Cx::zero());
            for (gk, phi) in spectra.iter().zip(&self.phases[m]) {
                for (acc, z) in block.iter_mut().zip(gk) {
                    *acc += z * phi;
                }
            }
            for (acc, s) in block.iter_mut().zip(&self.pulse_spectra[m]) {
                *acc *= s;
            }
            self.inv(block);
        }
        Ok(())
    }

    /// `A_C g` with one inverse FFT per `(m, k)` slice; reference for the
    /// frequency-domain accumulation in [`forward`](Self::forward).
    pub fn forward_per_slice(&self, g: &[Cx<T>]) -> Result<Vec<Cx<T>>> {
        self.check_len("coefficient vector", g.len(), self.n_coeffs())?;
        let spectra = self.block_spectra(g);
        let l = self.block_len;
        let mut out = vec![Cx::zero(); self.n_samples()];
        let mut buf = vec![Cx::zero(); l];
        for (m, block) in out.chunks_exact_mut(l).enumerate() {
            for (gk, phi) in spectra.iter().zip(&self.phases[m]) {
                for ((b, z), s) in buf.iter_mut().zip(gk).zip(&self.pulse_spectra[m]) {
                    *b = z * s;
                }
                self.inv(&mut buf);
                for (acc, b) in block.iter_mut().zip(&buf) {
                    *acc += b * phi;
                }
            }
        }
        Ok(out)
    }

    /// `A_C^H y` for `y` of length `M * L`.
    pub fn adjoint(&self, y: &[Cx<T>]) -> Result<Vec<Cx<T>>> {
        self.check_len("signal", y.len(), self.n_samples())?;
        let (l, j, k_n) = (self.block_len, self.n_delays, self.n_velocities);
        let mut acc = vec![vec![Cx::zero(); l]; k_n];
        let mut buf = vec![Cx::zero(); l];
        for (m, block) in y.chunks_exact(l).enumerate() {
            buf.copy_from_slice(block);
            self.fwd(&mut buf);
            for (b, s) in buf.iter_mut().zip(&self.pulse_spectra[m]) {
                *b *= s.conj();
            }
            for (a, phi) in acc.iter_mut().zip(&self.phases[m]) {
                let w = phi.conj();
                for (x, b) in a.iter_mut().zip(&buf) {
                    *x += b * w;
                }
            }
        }
        let mut out = Vec::with_capacity(self.n_coeffs());
        for mut a in acc {
            self.inv(&mut a);
            out.extend_from_slice(&a[..j]);
        }
        Ok(out)
    }

    /// `(A_C^H A_C + diag(sigma)) g`, with `sigma` from
    /// [`ClutterKernel::inverse_weights`](crate::kernel::ClutterKernel::inverse_weights).
    pub fn gram_regularized(&self, sigma: &[T], g: &[Cx<T>]) -> Result<Vec<Cx<T>>> {
        self.check_len("regularizer", sigma.len(), self.n_coeffs())?;
        if sigma.iter().any(|s| !(*s >= T::zero())) {
            return Err(Error::invalid("regularizer weights must be non-negative"));
        }
        let mut out = vec![Cx::zero(); self.n_coeffs()];
        self.gram_into(sigma, g, &mut out)?;
        Ok(out)
    }

    /// Unchecked-sign variant used inside the solver loop.
    pub(crate) fn gram_into(&self, sigma: &[T], g: &[Cx<T>], out: &mut [Cx<T>]) -> Result<()> {
        self.check_len("coefficient vector", g.len(), self.n_coeffs())?;
        self.check_len("output", out.len(), self.n_coeffs())?;
        let (l, j) = (self.block_len, self.n_delays);
        let spectra = self.block_spectra(g);
        let mut acc = vec![vec![Cx::zero(); l]; self.n_velocities];
        let mut u = vec![Cx::zero(); l];
        for m in 0..self.n_pulses {
            // project the K blocks onto phi_m, filter by |F s_m|^2, spread back
            u.fill(Cx::zero());
            for (gk, phi) in spectra.iter().zip(&self.phases[m]) {
                for (x, z) in u.iter_mut().zip(gk) {
                    *x += z * phi;
                }
            }
            for (x, p) in u.iter_mut().zip(&self.power_spectra[m]) {
                *x = x.scale(*p);
            }
            for (a, phi) in acc.iter_mut().zip(&self.phases[m]) {
                let w = phi.conj();
                for (x, z) in a.iter_mut().zip(&u) {
                    *x += z * w;
                }
            }
        }
        for (k, mut a) in acc.into_iter().enumerate() {
            self.inv(&mut a);
            let range = k * j..(k + 1) * j;
            for ((o, x), (gi, s)) in out[range.clone()]
                .iter_mut()
                .zip(&a[..j])
                .zip(g[range.clone()].iter().zip(&sigma[range]))
            {
                *o = x + gi.scale(*s);
            }
        }
        Ok(())
    }

    /// `sum_m |F s_m|^2`, the symbol of the circulant approximation of every
    /// diagonal Gram block.
    pub fn power_spectrum_sum(&self) -> Vec<T> {
        let mut sum = vec![T::zero(); self.block_len];
        for p in &self.power_spectra {
            for (s, x) in sum.iter_mut().zip(p) {
                *s += *x;
            }
        }
        sum
    }
}

/// Explicit `A_C` (`M L x J K`, f64), stacked Kronecker blocks `phi_m^T (x) S_m`.
pub fn dense_materialize<T: Real>(
    train: &PulseTrain<T>,
    grid: &RangeDopplerGrid,
) -> Result<DMatrix<Complex<f64>>> {
    dense_materialize_capped(train, grid, DENSE_ENTRY_CAP)
}

pub fn dense_materialize_capped<T: Real>(
    train: &PulseTrain<T>,
    grid: &RangeDopplerGrid,
    cap: usize,
) -> Result<DMatrix<Complex<f64>>> {
    if grid.n_delays() != train.n_delays() {
        return Err(Error::invalid("grid does not match the train's delay window"));
    }
    let (m_n, l) = (train.n_pulses(), train.block_len());
    let (j_n, k_n) = (grid.n_delays(), grid.n_velocities());
    let rows = m_n * l;
    let cols = j_n * k_n;
    let entries = rows.saturating_mul(cols);
    if entries > cap {
        return Err(Error::ResourceLimit(format!(
            "dense dictionary needs {entries} entries (cap {cap}); use the matrix-free operator"
        )));
    }
    let phases = doppler_phases_for::<f64>(grid.velocities(), &train_as_f64(train));
    let mut a = DMatrix::<Complex<f64>>::zeros(rows, cols);
    for m in 0..m_n {
        let s: Vec<Complex<f64>> = crate::scalar::to_c64(&train.pulse(m).samples);
        for k in 0..k_n {
            let phi = phases[m][k];
            for j in 0..j_n {
                let col = k * j_n + j;
                for (n, sn) in s.iter().enumerate() {
                    a[(m * l + j + n, col)] = sn * phi;
                }
            }
        }
    }
    Ok(a)
}

/// Timing-only view of a train; samples are not needed for the phase table.
fn train_as_f64<T: Real>(train: &PulseTrain<T>) -> PulseTrain<f64> {
    let pulses = train.pulses().iter().map(|p| crate::scalar::to_c64(&p.samples)).collect();
    let starts: Vec<u64> = train.pulses().iter().map(|p| p.start_sample).collect();
    crate::waveform::assemble_train_samples(
        pulses,
        &starts,
        train.sample_rate(),
        train.carrier_freq(),
        Some(train.block_len()),
    )
    .expect("a valid train stays valid in f64")
}
