//! Config-driven experiments: filter response, Monte Carlo BFR sweep and the
//! two-target scenario.
//!
//! Every run draws its PRI, clutter and noise from a single seed, so any row
//! of a result table can be replayed alone. Runs are independent and may be
//! executed in parallel; rows are sorted before aggregation.

use std::path::Path;

use num_complex::Complex;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ClutterLaw, KernelKind, LambdaScale, NoiseSpec, RegMode, ScenarioConfig};
use crate::error::{Error, Result};
use crate::grid::{RangeDopplerGrid, VelocityAxis};
use crate::io::{encode_map, fmt_f64, write_text};
use crate::kernel::{build_kernel_with, ClutterKernel, DopplerSpectrum, KernelOptions, RadarConstants};
use crate::metrics::{bfr_result, filter_response_curve, ResponseCurve};
use crate::operators::ClutterOperator;
use crate::scene::{
    draw_clutter_exponential, draw_clutter_gaussian, noise_variance_for_snr, synthesize_parts, Scene, Target,
};
use crate::solver::{filter_clutter, FilterConfig};
use crate::targets::{
    estimate_targets, estimates_csv, matched_filter_map, peak_power_loss, PeakLoss, RangeDopplerMap, TargetEstimate,
};
use crate::waveform::{assemble_train_samples, draw_irregular_pri_samples, lfm_pulse, PulseTrain};

/// 64-bit FNV-1a over the little-endian pulse start samples.
pub fn pri_hash(starts: &[u64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for s in starts {
        for b in s.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

fn segments(segs: &[[f64; 3]]) -> Result<VelocityAxis> {
    let parts: Vec<_> = segs.iter().map(|s| (s[0], s[1], s[2])).collect();
    VelocityAxis::segments(&parts)
}

/// Draw a pulse train from the waveform section with `n_pulses` pulses.
pub fn build_train<R: RngCore>(cfg: &ScenarioConfig, n_pulses: usize, rng: &mut R) -> Result<(PulseTrain<f64>, u64)> {
    let w = &cfg.waveform;
    let pulse = lfm_pulse::<f64>(w.bandwidth_hz, w.pulse_duration_us * 1e-6, w.sample_rate_hz)?;
    let starts =
        draw_irregular_pri_samples(n_pulses, w.pri_low_us * 1e-6, w.pri_high_us * 1e-6, w.sample_rate_hz, rng)?;
    let train =
        assemble_train_samples(vec![pulse; n_pulses], &starts, w.sample_rate_hz, w.carrier_freq_hz, w.block_len_samples)?;
    Ok((train, pri_hash(&starts)))
}

/// Physical sea-clutter kernel from the `[kernel]` section.
pub fn physical_kernel(cfg: &ScenarioConfig, grid: &RangeDopplerGrid) -> Result<ClutterKernel> {
    let k = &cfg.kernel;
    let constants = RadarConstants::new(
        k.k_radar_wm2,
        cfg.waveform.carrier_freq_hz,
        cfg.waveform.bandwidth_hz,
        k.beamwidth_deg.to_radians(),
        k.grazing_angle_rad,
        k.beaufort,
    )?;
    let spectrum = DopplerSpectrum::new(k.clutter_mean_velocity_mps, k.doppler_spread_mps)?;
    build_kernel_with(grid, &constants, &spectrum, &KernelOptions { floor_rel: k.floor_rel, area_override: None })
}

/// Kernel selected by `[kernel].kind`.
pub fn configured_kernel(cfg: &ScenarioConfig, grid: &RangeDopplerGrid) -> Result<ClutterKernel> {
    match cfg.kernel.kind {
        KernelKind::Identity => Ok(ClutterKernel::identity(grid)),
        KernelKind::Physical => physical_kernel(cfg, grid),
    }
}

fn mean_variance(kernel: &ClutterKernel) -> f64 {
    kernel.variances().iter().sum::<f64>() / kernel.len() as f64
}

/// Everything one synthesized realization needs downstream.
pub struct Realization {
    pub train: PulseTrain<f64>,
    pub pri_hash: u64,
    pub grid: RangeDopplerGrid,
    /// Kernel the clutter was drawn from.
    pub kernel: ClutterKernel,
    pub scene: Scene,
    pub clutter: Vec<Complex<f64>>,
    pub targets: Vec<Complex<f64>>,
    pub received: Vec<Complex<f64>>,
}

/// Draw PRI, clutter and noise for one seed from the scene section.
///
/// `velocities` overrides the `[grid]` axis; `n_pulses` the waveform count.
pub fn realize(cfg: &ScenarioConfig, seed: u64, n_pulses: usize, velocities: Option<VelocityAxis>) -> Result<Realization> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (train, pri_hash) = build_train(cfg, n_pulses, &mut rng)?;
    let axis = match velocities {
        Some(a) => a,
        None => segments(&cfg.grid.velocity_segments_mps)?,
    };
    let grid = RangeDopplerGrid::for_train(&train, axis, cfg.grid.range_offset_m)?;
    let kernel = configured_kernel(cfg, &grid)?;
    let mut scene = Scene::empty(&grid);
    scene.clutter_coeffs = match cfg.scene.clutter_law {
        ClutterLaw::None => scene.clutter_coeffs,
        ClutterLaw::Gaussian => draw_clutter_gaussian(&kernel, &mut rng),
        ClutterLaw::Exponential => draw_clutter_exponential(&kernel, &mut rng),
    };
    for t in &cfg.scene.targets {
        let phase = t.phase_deg.to_radians();
        scene.targets.push(Target {
            delay: grid.delay_of_range(t.range_m),
            velocity: t.velocity_mps,
            amplitude: Complex::from_polar(t.amplitude, phase),
        });
    }
    scene.seed = rng.next_u64();
    let noiseless = synthesize_parts::<f64>(&train, &grid, &scene, cfg.scene.model)?;
    scene.noise_variance = match cfg.scene.noise() {
        NoiseSpec::Variance(v) => v,
        NoiseSpec::SnrDb(snr) => {
            let total: Vec<_> = noiseless.clutter.iter().zip(&noiseless.targets).map(|(a, b)| a + b).collect();
            noise_variance_for_snr(&total, snr)?
        }
    };
    let parts = synthesize_parts::<f64>(&train, &grid, &scene, cfg.scene.model)?;
    let received = parts.total();
    Ok(Realization {
        train,
        pri_hash,
        grid,
        kernel,
        scene,
        clutter: parts.clutter,
        targets: parts.targets,
        received,
    })
}

/// Effective `lambda_C` for a weight given in `scale` units.
pub fn effective_lambda(scale: LambdaScale, mode: RegMode, value: f64, noise_variance: f64, physical: &ClutterKernel) -> f64 {
    match (mode, scale) {
        (RegMode::None, _) => 0.0,
        (_, LambdaScale::Absolute) => value,
        (RegMode::Identity, LambdaScale::NoiseRelative) => value * noise_variance / mean_variance(physical),
        (RegMode::Kernel, LambdaScale::NoiseRelative) => value * noise_variance,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BfrRow {
    pub n_pulses: usize,
    pub mode: RegMode,
    /// Weight in the configured scale.
    pub lambda: f64,
    pub lambda_c: f64,
    pub run: usize,
    pub seed: u64,
    pub pri_hash: u64,
    pub noise_variance: f64,
    pub bfr: f64,
    pub mse: f64,
    pub iterations: usize,
    pub converged: bool,
    pub stagnated: bool,
}

impl BfrRow {
    /// Converged, or stopped on a flat residual of the singular `lambda_C = 0`
    /// system.
    pub fn usable(&self) -> bool {
        self.converged || (self.stagnated && self.lambda_c == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BfrAggregate {
    pub n_pulses: usize,
    pub mode: RegMode,
    pub lambda: f64,
    pub n_runs: usize,
    pub n_excluded: usize,
    pub n_stagnated: usize,
    pub mean: f64,
    /// Sample standard deviation.
    pub std: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub mean_iterations: f64,
    /// Highest mean BFR among the weights tried for this cell.
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BfrSweep {
    pub rows: Vec<BfrRow>,
    pub aggregates: Vec<BfrAggregate>,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn aggregate(n_pulses: usize, mode: RegMode, lambda: f64, rows: &[&BfrRow]) -> BfrAggregate {
    let used: Vec<&&BfrRow> = rows.iter().filter(|r| r.usable()).collect();
    let mut vals: Vec<f64> = used.iter().map(|r| r.bfr).collect();
    vals.sort_by(f64::total_cmp);
    let n = vals.len();
    let mean = if n > 0 { vals.iter().sum::<f64>() / n as f64 } else { f64::NAN };
    let std = if n > 1 {
        (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        f64::NAN
    };
    BfrAggregate {
        n_pulses,
        mode,
        lambda,
        n_runs: n,
        n_excluded: rows.len() - n,
        n_stagnated: used.iter().filter(|r| r.stagnated).count(),
        mean,
        std,
        q1: quantile(&vals, 0.25),
        median: quantile(&vals, 0.5),
        q3: quantile(&vals, 0.75),
        mean_iterations: used.iter().map(|r| r.iterations as f64).sum::<f64>() / n.max(1) as f64,
        selected: false,
    }
}

/// Seed of run `run` in `n_pulses` cell `cell`.
pub fn run_seed(cfg: &ScenarioConfig, cell: usize, run: usize) -> u64 {
    cfg.experiment.seed.wrapping_add((cell * cfg.experiment.n_monte_carlo + run) as u64)
}

fn sweep_run(cfg: &ScenarioConfig, cell: usize, run: usize) -> Result<Vec<BfrRow>> {
    let e = &cfg.experiment;
    let n_pulses = e.n_pulses[cell];
    let vmax = e.clutter_velocity_max_mps;
    let axis = VelocityAxis::uniform(-vmax, e.velocity_step_mps[cell], vmax)?;
    let seed = run_seed(cfg, cell, run);
    let mut scene_cfg = cfg.clone();
    scene_cfg.kernel.kind = KernelKind::Physical;
    let real = realize(&scene_cfg, seed, n_pulses, Some(axis))?;
    let op = ClutterOperator::new(&real.train, &real.grid)?;
    let identity = ClutterKernel::identity(&real.grid);

    let mut rows = Vec::new();
    for &mode in &e.modes {
        let weights: Vec<f64> = match mode {
            RegMode::None => vec![0.0],
            _ if !e.lambda_search.is_empty() => e.lambda_search.clone(),
            RegMode::Identity => vec![e.lambda_identity[cell]],
            RegMode::Kernel => vec![e.lambda_kernel[cell]],
        };
        let kernel = if mode == RegMode::Kernel { &real.kernel } else { &identity };
        for lambda in weights {
            let lambda_c = effective_lambda(e.lambda_scale, mode, lambda, real.scene.noise_variance, &real.kernel);
            let fc = FilterConfig { lambda_c, ..cfg.solver.clone() };
            let out = filter_clutter(&real.received, &op, kernel, &fc)?;
            let m = bfr_result(&real.clutter, &out.clutter_estimate, e.bfr_mode)?;
            rows.push(BfrRow {
                n_pulses,
                mode,
                lambda,
                lambda_c,
                run,
                seed,
                pri_hash: real.pri_hash,
                noise_variance: real.scene.noise_variance,
                bfr: m.bfr,
                mse: m.mse,
                iterations: out.iterations,
                converged: out.converged,
                stagnated: out.stagnated,
            });
        }
    }
    Ok(rows)
}

/// Monte Carlo BFR sweep over `n_pulses` and regularization modes.
///
/// Each `(n_pulses, run)` realization is filtered with every mode, so the
/// modes are compared on identical data.
pub fn run_bfr_sweep(cfg: &ScenarioConfig) -> Result<BfrSweep> {
    cfg.validate()?;
    let e = &cfg.experiment;
    let jobs: Vec<(usize, usize)> =
        (0..e.n_pulses.len()).flat_map(|c| (0..e.n_monte_carlo).map(move |r| (c, r))).collect();
    let results: Vec<Result<Vec<BfrRow>>> = jobs.par_iter().map(|&(c, r)| sweep_run(cfg, c, r)).collect();
    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    rows.sort_by(|a, b| {
        a.n_pulses
            .cmp(&b.n_pulses)
            .then(a.mode.cmp(&b.mode))
            .then(a.lambda.total_cmp(&b.lambda))
            .then(a.run.cmp(&b.run))
    });

    let mut aggregates: Vec<BfrAggregate> = Vec::new();
    let mut i = 0;
    while i < rows.len() {
        let key = (rows[i].n_pulses, rows[i].mode, rows[i].lambda);
        let group: Vec<&BfrRow> = rows[i..].iter().take_while(|r| (r.n_pulses, r.mode, r.lambda) == key).collect();
        i += group.len();
        let excluded = group.iter().filter(|r| !r.usable()).count();
        if excluded > 0 {
            log::warn!("N_p={} {}: {excluded} run(s) did not converge and are excluded", key.0, key.1.as_str());
        }
        aggregates.push(aggregate(key.0, key.1, key.2, &group));
    }
    let mut start = 0;
    while start < aggregates.len() {
        let key = (aggregates[start].n_pulses, aggregates[start].mode);
        let end = start + aggregates[start..].iter().take_while(|a| (a.n_pulses, a.mode) == key).count();
        let best = (start..end)
            .filter(|&j| aggregates[j].mean.is_finite())
            .max_by(|&a, &b| aggregates[a].mean.total_cmp(&aggregates[b].mean).then(b.cmp(&a)));
        if let Some(b) = best {
            aggregates[b].selected = true;
        }
        start = end;
    }
    Ok(BfrSweep { rows, aggregates })
}

impl BfrSweep {
    pub fn runs_csv(&self) -> String {
        let mut s = String::from(
            "n_pulses,mode,lambda,lambda_c,run,seed,pri_hash,noise_variance,bfr,mse,iterations,converged,stagnated\n",
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{:016x},{},{},{},{},{},{}\n",
                r.n_pulses,
                r.mode.as_str(),
                fmt_f64(r.lambda),
                fmt_f64(r.lambda_c),
                r.run,
                r.seed,
                r.pri_hash,
                fmt_f64(r.noise_variance),
                fmt_f64(r.bfr),
                fmt_f64(r.mse),
                r.iterations,
                r.converged,
                r.stagnated
            ));
        }
        s
    }

    pub fn aggregate_csv(&self) -> String {
        let mut s = String::from(
            "n_pulses,mode,lambda,n_runs,n_excluded,n_stagnated,mean_bfr,std_bfr,q1_bfr,median_bfr,q3_bfr,mean_iterations,selected\n",
        );
        for a in &self.aggregates {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                a.n_pulses,
                a.mode.as_str(),
                fmt_f64(a.lambda),
                a.n_runs,
                a.n_excluded,
                a.n_stagnated,
                fmt_f64(a.mean),
                fmt_f64(a.std),
                fmt_f64(a.q1),
                fmt_f64(a.median),
                fmt_f64(a.q3),
                fmt_f64(a.mean_iterations),
                a.selected
            ));
        }
        s
    }

    /// Aggregate of the selected weight for a cell.
    pub fn cell(&self, n_pulses: usize, mode: RegMode) -> Option<&BfrAggregate> {
        self.aggregates.iter().find(|a| a.n_pulses == n_pulses && a.mode == mode && a.selected)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabeledCurve {
    pub label: String,
    pub lambda_c: f64,
    pub realization: usize,
    pub seed: u64,
    pub pri_hash: u64,
    pub curve: ResponseCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResponseStudy {
    /// Range bin of the probe scatterer.
    pub range_bin: usize,
    pub designed_velocities: Vec<f64>,
    pub curves: Vec<LabeledCurve>,
}

/// Probe velocities of the `[experiment]` response segments.
pub fn probe_velocities(cfg: &ScenarioConfig) -> Result<Vec<f64>> {
    Ok(segments(&cfg.experiment.response_probe_segments_mps)?.values().to_vec())
}

/// Filter response curves for every `response_lambdas` entry and PRI
/// realization. Weights are absolute; the probe is a noiseless unit
/// scatterer at `response_range_m`.
pub fn run_response_study(cfg: &ScenarioConfig) -> Result<ResponseStudy> {
    run_response_study_with(cfg, &probe_velocities(cfg)?)
}

/// [`run_response_study`] with explicit probe velocities.
pub fn run_response_study_with(cfg: &ScenarioConfig, probes: &[f64]) -> Result<ResponseStudy> {
    cfg.validate()?;
    let e = &cfg.experiment;
    let jobs: Vec<(usize, f64)> = (0..e.response_realizations)
        .flat_map(|r| e.response_lambdas.iter().map(move |&l| (r, l)))
        .collect();
    let results: Vec<Result<(usize, LabeledCurve, RangeDopplerGrid)>> = jobs
        .par_iter()
        .map(|&(r, lambda_c)| {
            let seed = e.seed.wrapping_add(r as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (train, hash) = build_train(cfg, cfg.waveform.n_pulses, &mut rng)?;
            let grid = RangeDopplerGrid::for_train(&train, segments(&cfg.grid.velocity_segments_mps)?, cfg.grid.range_offset_m)?;
            let j = response_bin(&grid, e.response_range_m)?;
            let kernel = configured_kernel(cfg, &grid)?;
            let op = ClutterOperator::new(&train, &grid)?;
            let fc = FilterConfig { lambda_c, ..cfg.solver.clone() };
            let curve = filter_response_curve(&train, &grid, &op, &kernel, &fc, j, probes)?;
            let label = format!("lambda={}/r{r}", fmt_f64(lambda_c));
            Ok((j, LabeledCurve { label, lambda_c, realization: r, seed, pri_hash: hash, curve }, grid))
        })
        .collect();
    let mut curves = Vec::with_capacity(results.len());
    let mut range_bin = 0;
    let mut designed = Vec::new();
    for res in results {
        let (j, c, grid) = res?;
        range_bin = j;
        designed = grid.velocities().to_vec();
        curves.push(c);
    }
    Ok(ResponseStudy { range_bin, designed_velocities: designed, curves })
}

fn response_bin(grid: &RangeDopplerGrid, range: f64) -> Result<usize> {
    let pos = (range - grid.range_offset()) / grid.range_spacing();
    let j = pos.round();
    if !(j >= 0.0) || j as usize >= grid.n_delays() {
        return Err(Error::config(
            "experiment",
            "response_range_m",
            format!("{range} m lies outside the range window of {} bins", grid.n_delays()),
        ));
    }
    Ok(j as usize)
}

impl ResponseStudy {
    /// Long-format CSV, one row per probe of every curve.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("label,lambda_c,realization,seed,pri_hash,velocity_mps,response_db,iterations,converged\n");
        for c in &self.curves {
            for ((v, r), it) in c.curve.velocities.iter().zip(&c.curve.response_db).zip(&c.curve.iterations) {
                s.push_str(&format!(
                    "{},{},{},{},{:016x},{},{},{},{}\n",
                    c.label,
                    fmt_f64(c.lambda_c),
                    c.realization,
                    c.seed,
                    c.pri_hash,
                    fmt_f64(*v),
                    fmt_f64(*r),
                    it,
                    c.curve.all_converged
                ));
            }
        }
        s
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InjectedTarget {
    pub j: usize,
    pub k: usize,
    pub range_m: f64,
    pub velocity_mps: f64,
    pub loss: PeakLoss,
}

#[derive(Debug, Clone)]
pub struct TargetScenario {
    pub seed: u64,
    pub pri_hash: u64,
    pub target_grid: RangeDopplerGrid,
    pub map_before: RangeDopplerMap,
    pub map_after: RangeDopplerMap,
    /// Map of the clutter- and noise-free target echoes.
    pub map_reference: RangeDopplerMap,
    pub injected: Vec<InjectedTarget>,
    pub estimates: Vec<TargetEstimate>,
    pub lambda_c: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Clutter filtering and target pursuit on the configured target scene.
///
/// `solver.lambda_c` is read in `experiment.lambda_scale` units with the
/// `[kernel]` kernel; losses are measured against the clutter-free map.
pub fn run_target_scenario(cfg: &ScenarioConfig) -> Result<TargetScenario> {
    cfg.validate()?;
    let seed = cfg.experiment.seed;
    let real = realize(cfg, seed, cfg.waveform.n_pulses, None)?;
    let target_axis = segments(&cfg.targets.velocity_segments_mps)?;
    let target_grid = RangeDopplerGrid::for_train(&real.train, target_axis, cfg.grid.range_offset_m)?;
    let top = ClutterOperator::new(&real.train, &target_grid)?;
    let cop = ClutterOperator::new(&real.train, &real.grid)?;

    let mode = match cfg.kernel.kind {
        KernelKind::Identity => RegMode::Identity,
        KernelKind::Physical => RegMode::Kernel,
    };
    let physical = physical_kernel(cfg, &real.grid)?;
    let lambda_c = effective_lambda(cfg.experiment.lambda_scale, mode, cfg.solver.lambda_c, real.scene.noise_variance, &physical);
    let fc = FilterConfig { lambda_c, ..cfg.solver.clone() };

    let map_before = matched_filter_map(&real.received, &top)?;
    let map_reference = matched_filter_map(&real.targets, &top)?;
    let (y_filt, iterations, converged) = if cfg.targets.n_outer > 1 {
        let setup = crate::solver::TargetSetup { op: &top, grid: &target_grid, search: cfg.targets.search() };
        let alt = crate::solver::alternating_solve(&real.received, &cop, &real.kernel, &fc, &setup, cfg.targets.n_outer)?;
        (alt.filter.y_filt, alt.filter.iterations, alt.filter.converged)
    } else {
        let out = filter_clutter(&real.received, &cop, &real.kernel, &fc)?;
        (out.y_filt, out.iterations, out.converged)
    };
    let map_after = matched_filter_map(&y_filt, &top)?;
    let mut estimates = estimate_targets(&y_filt, &top, &target_grid, &cfg.targets.search())?.estimates;

    let mut injected = Vec::new();
    for t in &real.scene.targets {
        let (j, k) = target_grid.nearest_index(t.delay, t.velocity).ok_or_else(|| {
            Error::invalid(format!("target at {} m/s lies outside the target grid", t.velocity))
        })?;
        let loss = peak_power_loss(&map_reference, &map_after, j, k)?;
        injected.push(InjectedTarget { j, k, range_m: target_grid.range(j), velocity_mps: target_grid.velocity(k), loss });
    }
    for e in &mut estimates {
        if let Some(t) = injected.iter().find(|t| (t.j, t.k) == (e.j, e.k)) {
            e.loss_db = Some(t.loss.db);
        }
    }
    Ok(TargetScenario {
        seed,
        pri_hash: real.pri_hash,
        target_grid,
        map_before,
        map_after,
        map_reference,
        injected,
        estimates,
        lambda_c,
        iterations,
        converged,
    })
}

impl TargetScenario {
    pub fn losses_csv(&self) -> String {
        let mut s = String::from("range_m,velocity_mps,j,k,loss_db,fully_suppressed\n");
        for t in &self.injected {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                fmt_f64(t.range_m),
                fmt_f64(t.velocity_mps),
                t.j,
                t.k,
                fmt_f64(t.loss.db),
                t.loss.fully_suppressed
            ));
        }
        s
    }

    pub fn write_maps(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let g = &self.target_grid;
        for (name, map) in [("before", &self.map_before), ("after", &self.map_after), ("reference", &self.map_reference)] {
            let bytes = encode_map(map, g.range_offset(), g.range_spacing(), g.velocities())?;
            std::fs::write(dir.join(format!("{name}.bin")), bytes)?;
        }
        Ok(())
    }
}

/// Resolved configuration plus run metadata, written next to the results.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub crate_version: String,
    pub seeds: Vec<u64>,
    pub reproducible: bool,
    pub threads: Option<usize>,
    pub outputs: Vec<String>,
    pub config: ScenarioConfig,
}

impl Manifest {
    pub fn new(command: &str, cfg: &ScenarioConfig, seeds: Vec<u64>) -> Self {
        Manifest {
            command: command.into(),
            crate_version: env!("CARGO_PKG_VERSION").into(),
            seeds,
            reproducible: cfg.solver.reproducible,
            threads: None,
            outputs: Vec::new(),
            config: cfg.clone(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        write_text(&dir.join("manifest.json"), &(text + "\n"))
    }
}

/// Seeds the BFR sweep will use, in run order.
pub fn sweep_seeds(cfg: &ScenarioConfig) -> Vec<u64> {
    let e = &cfg.experiment;
    (0..e.n_pulses.len()).flat_map(|c| (0..e.n_monte_carlo).map(move |r| run_seed(cfg, c, r))).collect()
}

/// Write `runs.csv`, `aggregate.csv` and the manifest.
pub fn write_bfr_sweep(dir: &Path, cfg: &ScenarioConfig, sweep: &BfrSweep, threads: Option<usize>) -> Result<()> {
    write_text(&dir.join("runs.csv"), &sweep.runs_csv())?;
    write_text(&dir.join("aggregate.csv"), &sweep.aggregate_csv())?;
    let mut m = Manifest::new("bfr-sweep", cfg, sweep_seeds(cfg));
    m.threads = threads;
    m.outputs = vec!["runs.csv".into(), "aggregate.csv".into()];
    m.write(dir)
}

pub fn write_response_study(dir: &Path, cfg: &ScenarioConfig, study: &ResponseStudy, threads: Option<usize>) -> Result<()> {
    write_text(&dir.join("curves.csv"), &study.to_csv())?;
    let seeds = study.curves.iter().map(|c| c.seed).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    let mut m = Manifest::new("response", cfg, seeds);
    m.threads = threads;
    m.outputs = vec!["curves.csv".into()];
    m.write(dir)
}

pub fn write_target_scenario(dir: &Path, cfg: &ScenarioConfig, sc: &TargetScenario, threads: Option<usize>) -> Result<()> {
    write_text(&dir.join("estimates.csv"), &estimates_csv(&sc.estimates))?;
    write_text(&dir.join("losses.csv"), &sc.losses_csv())?;
    sc.write_maps(&dir.join("maps"))?;
    let mut m = Manifest::new("target-scenario", cfg, vec![sc.seed]);
    m.threads = threads;
    m.outputs = ["estimates.csv", "losses.csv", "maps/before.bin", "maps/after.bin", "maps/reference.bin"]
        .map(String::from)
        .to_vec();
    m.write(dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ScenarioConfig {
        let mut cfg = ScenarioConfig::parse(
            r#"
            [waveform]
            n_pulses = 4
            bandwidth_hz = 5e5
            pulse_duration_us = 20.0
            sample_rate_hz = 1e6
            pri_low_us = 120.0
            pri_high_us = 200.0
            block_len_samples = 100
            [grid]
            velocity_segments_mps = [[-8.0, 4.0, 8.0]]
            range_offset_m = 500.0
            "#,
        )
        .unwrap();
        cfg.experiment.n_pulses = vec![4, 6];
        cfg.experiment.velocity_step_mps = vec![8.0, 4.0];
        cfg.experiment.lambda_identity = vec![1.0, 1.0];
        cfg.experiment.lambda_kernel = vec![1.0, 1.0];
        cfg.experiment.clutter_velocity_max_mps = 8.0;
        cfg.experiment.n_monte_carlo = 3;
        cfg.experiment.seed = 40;
        cfg
    }

    #[test]
    fn pri_hash_is_fnv1a() {
        assert_eq!(pri_hash(&[]), 0xcbf2_9ce4_8422_2325);
        assert_ne!(pri_hash(&[0, 1]), pri_hash(&[1, 0]));
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.25), 1.75);
        assert_eq!(quantile(&v, 1.0), 4.0);
    }

    #[test]
    fn sweep_rows_replay_alone() {
        let cfg = small();
        let sweep = run_bfr_sweep(&cfg).unwrap();
        assert_eq!(sweep.rows.len(), 2 * 3 * 3);
        assert_eq!(sweep.aggregates.len(), 6);
        let row = sweep.rows.iter().find(|r| r.n_pulses == 6 && r.run == 2 && r.mode == RegMode::Kernel).unwrap();
        assert_eq!(row.seed, 40 + 3 + 2);
        let again = sweep_run(&cfg, 1, 2).unwrap();
        assert!(again.contains(row));
        assert!(sweep.aggregates.iter().all(|a| a.selected && a.n_runs + a.n_excluded == 3));
    }

    #[test]
    fn lambda_search_selects_one_weight_per_cell() {
        let mut cfg = small();
        cfg.experiment.modes = vec![RegMode::Kernel];
        cfg.experiment.lambda_search = vec![0.01, 1.0, 100.0];
        cfg.experiment.n_pulses = vec![4];
        cfg.experiment.velocity_step_mps = vec![8.0];
        cfg.experiment.lambda_identity = vec![1.0];
        cfg.experiment.lambda_kernel = vec![1.0];
        let sweep = run_bfr_sweep(&cfg).unwrap();
        assert_eq!(sweep.aggregates.len(), 3);
        assert_eq!(sweep.aggregates.iter().filter(|a| a.selected).count(), 1);
        let best = sweep.cell(4, RegMode::Kernel).unwrap();
        assert!(sweep.aggregates.iter().all(|a| a.mean <= best.mean));
    }

    #[test]
    fn noise_relative_lambda() {
        let cfg = small();
        let real = realize(&cfg, 1, 4, None).unwrap();
        let nv = real.scene.noise_variance;
        assert!(nv > 0.0);
        let k = &real.kernel;
        assert_eq!(effective_lambda(LambdaScale::NoiseRelative, RegMode::Kernel, 2.0, nv, k), 2.0 * nv);
        assert_eq!(effective_lambda(LambdaScale::Absolute, RegMode::Identity, 2.0, nv, k), 2.0);
        assert_eq!(effective_lambda(LambdaScale::Absolute, RegMode::None, 2.0, nv, k), 0.0);
        let id = effective_lambda(LambdaScale::NoiseRelative, RegMode::Identity, 1.0, nv, k);
        assert!((id * mean_variance(k) / nv - 1.0).abs() < 1e-12);
    }

    #[test]
    fn response_bin_must_be_in_window() {
        let cfg = small();
        let real = realize(&cfg, 1, 4, None).unwrap();
        let g = &real.grid;
        assert_eq!(response_bin(g, g.range(3)).unwrap(), 3);
        assert!(matches!(response_bin(g, 0.0), Err(Error::Config { .. })));
    }

    #[test]
    fn zero_clutter_scene_loses_nothing() {
        let mut cfg = small();
        cfg.waveform.n_pulses = 8;
        cfg.scene.clutter_law = ClutterLaw::None;
        cfg.scene.noise_variance = Some(0.0);
        cfg.kernel.kind = KernelKind::Identity;
        cfg.experiment.lambda_scale = LambdaScale::Absolute;
        cfg.solver.lambda_c = 1e4;
        cfg.targets.velocity_segments_mps = vec![[-40.0, 4.0, 40.0]];
        cfg.scene.targets = vec![crate::config::TargetSpec { range_m: 500.0 + 20.0 * 149.896229, velocity_mps: 24.0, amplitude: 1.0, phase_deg: 0.0 }];
        let sc = run_target_scenario(&cfg).unwrap();
        let t = &sc.injected[0];
        assert_eq!((t.j, t.k), (20, 16));
        assert!(t.loss.db.abs() < 0.05, "{:?}", t.loss);
        assert_eq!((sc.estimates[0].j, sc.estimates[0].k), (20, 16));
    }
}
