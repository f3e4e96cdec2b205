//! Diagonal clutter covariance built from the radar range equation, a
//! Gaussian Doppler spectrum and a sea-surface reflectivity model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{RangeDopplerGrid, SPEED_OF_LIGHT};
use crate::scalar::Real;

/// Radar and surface parameters feeding the range equation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarConstants {
    /// `P_t G lambda^2 / ((4 pi)^3 L_s)`, W m^2.
    pub k_radar: f64,
    pub wavelength: f64,
    /// Azimuth beamwidth, rad.
    pub beamwidth: f64,
    /// Grazing angle, rad.
    pub grazing_angle: f64,
    /// Beaufort wind-scale number.
    pub beaufort: f64,
    /// Waveform range resolution `c / (2 B)`, m; the radial extent of a patch.
    pub range_resolution: f64,
}

impl RadarConstants {
    pub fn new(
        k_radar: f64,
        carrier_freq: f64,
        bandwidth: f64,
        beamwidth: f64,
        grazing_angle: f64,
        beaufort: f64,
    ) -> Result<Self> {
        if !(bandwidth > 0.0) {
            return Err(Error::invalid("bandwidth must be positive for the patch area model"));
        }
        if !(carrier_freq > 0.0) {
            return Err(Error::invalid("carrier frequency must be positive"));
        }
        let c = RadarConstants {
            k_radar,
            wavelength: SPEED_OF_LIGHT / carrier_freq,
            beamwidth,
            grazing_angle,
            beaufort,
            range_resolution: SPEED_OF_LIGHT / (2.0 * bandwidth),
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k_radar > 0.0) || !self.k_radar.is_finite() {
            return Err(Error::invalid("radar constant must be positive"));
        }
        if !(self.wavelength > 0.0) {
            return Err(Error::invalid("wavelength must be positive"));
        }
        if !(self.beamwidth > 0.0 && self.beamwidth < 2.0 * std::f64::consts::PI) {
            return Err(Error::invalid("beamwidth must lie in (0, 2 pi)"));
        }
        if !(self.range_resolution > 0.0) {
            return Err(Error::invalid("range resolution must be positive"));
        }
        if !self.grazing_angle.is_finite() || !self.beaufort.is_finite() {
            return Err(Error::invalid("grazing angle and Beaufort number must be finite"));
        }
        Ok(())
    }

    /// Patch area `R * theta_BW * dR` at range `R`.
    pub fn patch_area(&self, range: f64) -> f64 {
        range * self.beamwidth * self.range_resolution
    }
}

/// Gaussian clutter Doppler spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DopplerSpectrum {
    pub mean_velocity: f64,
    /// Standard deviation `sigma_s`, m/s.
    pub spread: f64,
}

impl DopplerSpectrum {
    pub fn new(mean_velocity: f64, spread: f64) -> Result<Self> {
        if !(spread > 0.0) || !spread.is_finite() || !mean_velocity.is_finite() {
            return Err(Error::invalid(format!("Doppler spread must be positive, got {spread}")));
        }
        Ok(DopplerSpectrum { mean_velocity, spread })
    }
}

/// Where the kernel came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSource {
    Identity,
    Explicit,
    Physical {
        constants: RadarConstants,
        spectrum: DopplerSpectrum,
        floor_rel: f64,
    },
}

/// Diagonal of `Sigma_C`, k-major like every coefficient vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClutterKernel {
    variances: Vec<f64>,
    n_delays: usize,
    n_velocities: usize,
    source: KernelSource,
}

/// Knobs of [`build_kernel_with`].
#[derive(Debug, Clone, PartialEq)]
pub struct KernelOptions {
    /// Variances are clamped below at `floor_rel * max`.
    pub floor_rel: f64,
    /// Per-range-bin patch areas replacing the linear area model.
    pub area_override: Option<Vec<f64>>,
}

impl Default for KernelOptions {
    fn default() -> Self {
        KernelOptions { floor_rel: 1e-30, area_override: None }
    }
}

impl ClutterKernel {
    /// `Sigma_C = I`.
    pub fn identity(grid: &RangeDopplerGrid) -> Self {
        ClutterKernel {
            variances: vec![1.0; grid.len()],
            n_delays: grid.n_delays(),
            n_velocities: grid.n_velocities(),
            source: KernelSource::Identity,
        }
    }

    pub fn from_variances(grid: &RangeDopplerGrid, variances: Vec<f64>) -> Result<Self> {
        if variances.len() != grid.len() {
            return Err(Error::invalid(format!(
                "kernel has {} variances, grid has {} cells",
                variances.len(),
                grid.len()
            )));
        }
        if let Some(i) = variances.iter().position(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::invalid(format!("variance {i} is not positive and finite")));
        }
        Ok(ClutterKernel {
            variances,
            n_delays: grid.n_delays(),
            n_velocities: grid.n_velocities(),
            source: KernelSource::Explicit,
        })
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn variance(&self, j: usize, k: usize) -> f64 {
        self.variances[k * self.n_delays + j]
    }

    pub fn len(&self) -> usize {
        self.variances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variances.is_empty()
    }

    pub fn n_delays(&self) -> usize {
        self.n_delays
    }

    pub fn n_velocities(&self) -> usize {
        self.n_velocities
    }

    pub fn source(&self) -> &KernelSource {
        &self.source
    }

    /// `sigma = lambda_C / variance`, the diagonal regularizer of the normal
    /// equations. All zeros when `lambda_c == 0`.
    pub fn inverse_weights<T: Real>(&self, lambda_c: f64) -> Result<Vec<T>> {
        if !(lambda_c >= 0.0) || !lambda_c.is_finite() {
            return Err(Error::invalid(format!("lambda_C must be finite and >= 0, got {lambda_c}")));
        }
        Ok(self.variances.iter().map(|v| T::of(lambda_c / v)).collect())
    }

    /// CSV rows `j,k,tau_s,v_mps,variance`.
    pub fn to_csv(&self, grid: &RangeDopplerGrid) -> String {
        let mut out = String::from("j,k,tau_s,v_mps,variance\n");
        for k in 0..self.n_velocities {
            for j in 0..self.n_delays {
                out.push_str(&format!(
                    "{j},{k},{:e},{},{:e}\n",
                    grid.delay(j),
                    grid.velocity(k),
                    self.variance(j, k)
                ));
            }
        }
        out
    }
}

/// Sea-surface clutter RCS of the patch at `range`:
/// `10^(0.6 K_b sin psi) / (2.51e6 lambda) * A`.
pub fn sea_rcs(range: f64, constants: &RadarConstants) -> Result<f64> {
    if !(range > 0.0) || !range.is_finite() {
        return Err(Error::invalid(format!("range must be positive, got {range}")));
    }
    Ok(sea_rcs_with_area(constants.patch_area(range), constants))
}

fn sea_rcs_with_area(area: f64, constants: &RadarConstants) -> f64 {
    let reflectivity = 10f64.powf(0.6 * constants.beaufort * constants.grazing_angle.sin())
        / (2.51e6 * constants.wavelength);
    reflectivity * area
}

/// Unnormalized Gaussian mass of the Doppler bin `[v - dv/2, v + dv/2]`:
/// `integral exp(-(s - v_c)^2 / (2 sigma_s^2)) ds`, evaluated in closed form.
pub fn doppler_weight(v: f64, dv: f64, spectrum: &DopplerSpectrum) -> f64 {
    let scale = std::f64::consts::SQRT_2 * spectrum.spread;
    let a = (v - dv / 2.0 - spectrum.mean_velocity) / scale;
    let b = (v + dv / 2.0 - spectrum.mean_velocity) / scale;
    // erf(b) - erf(a), using complementary functions in the tails to avoid
    // cancellation between two values near +-1.
    let diff = if a >= 0.0 {
        libm::erfc(a) - libm::erfc(b)
    } else if b <= 0.0 {
        libm::erfc(-b) - libm::erfc(-a)
    } else {
        libm::erf(b) - libm::erf(a)
    };
    spectrum.spread * (std::f64::consts::PI / 2.0).sqrt() * diff
}

/// Physical kernel with default options.
pub fn build_kernel(
    grid: &RangeDopplerGrid,
    constants: &RadarConstants,
    spectrum: &DopplerSpectrum,
) -> Result<ClutterKernel> {
    build_kernel_with(grid, constants, spectrum, &KernelOptions::default())
}

/// `sigma^2(tau_j, v_k) = sigma_0(R_j) k_radar / R_j^4 * w(v_k)`.
pub fn build_kernel_with(
    grid: &RangeDopplerGrid,
    constants: &RadarConstants,
    spectrum: &DopplerSpectrum,
    options: &KernelOptions,
) -> Result<ClutterKernel> {
    constants.validate()?;
    if !(options.floor_rel >= 0.0 && options.floor_rel < 1.0) {
        return Err(Error::invalid("kernel floor must lie in [0, 1)"));
    }
    let n_delays = grid.n_delays();
    if let Some(area) = &options.area_override {
        if area.len() != n_delays {
            return Err(Error::invalid(format!(
                "area override has {} entries, grid has {n_delays} range bins",
                area.len()
            )));
        }
        if area.iter().any(|a| !(*a > 0.0)) {
            return Err(Error::invalid("area override entries must be positive"));
        }
    }
    let mut range_power = Vec::with_capacity(n_delays);
    for j in 0..n_delays {
        let r = grid.range(j);
        if !(r > 0.0) {
            return Err(Error::invalid(format!(
                "range bin {j} sits at {r} m; kernel needs positive ranges (set a range offset)"
            )));
        }
        let sigma0 = match &options.area_override {
            Some(area) => sea_rcs_with_area(area[j], constants),
            None => sea_rcs(r, constants)?,
        };
        range_power.push(sigma0 * constants.k_radar / r.powi(4));
    }
    let axis = grid.velocity_axis();
    let doppler: Vec<f64> = (0..grid.n_velocities())
        .map(|k| doppler_weight(grid.velocity(k), axis.bin_width(k), spectrum))
        .collect();

    let mut variances = Vec::with_capacity(grid.len());
    for w in &doppler {
        variances.extend(range_power.iter().map(|p| p * w));
    }
    let max = variances.iter().cloned().fold(0.0, f64::max);
    if !(max > 0.0) || !max.is_finite() {
        return Err(Error::invalid("kernel has no positive finite variance"));
    }
    let floor = (options.floor_rel * max).max(f64::MIN_POSITIVE);
    for v in &mut variances {
        if !(*v >= floor) {
            *v = floor;
        }
    }
    Ok(ClutterKernel {
        variances,
        n_delays,
        n_velocities: grid.n_velocities(),
        source: KernelSource::Physical {
            constants: constants.clone(),
            spectrum: *spectrum,
            floor_rel: options.floor_rel,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::VelocityAxis;

    fn reference_constants() -> RadarConstants {
        RadarConstants::new(250e8, 10e9, 5e6, 4f64.to_radians(), 0.5 * std::f64::consts::PI, 5.0)
            .unwrap()
    }

    #[test]
    fn rcs_at_6430m() {
        // frozen from an independent scalar evaluation
        let s = sea_rcs(6430.0, &reference_constants()).unwrap();
        assert!((s - 178.84409705694887).abs() < 1e-9 * s);
    }

    #[test]
    fn rcs_calm_sea_and_linearity() {
        let mut c = reference_constants();
        c.beaufort = 0.0;
        let area = c.patch_area(1000.0);
        let s = sea_rcs(1000.0, &c).unwrap();
        assert!((s - area / (2.51e6 * c.wavelength)).abs() < 1e-12 * s);
        let s2 = sea_rcs(2000.0, &c).unwrap();
        assert!((s2 - 2.0 * s).abs() < 1e-12 * s2);
        assert!(sea_rcs(0.0, &c).is_err());
        assert!(sea_rcs(-5.0, &c).is_err());
    }

    #[test]
    fn doppler_weight_reference_value() {
        let spec = DopplerSpectrum::new(-2.2, 5f64.sqrt()).unwrap();
        let w = doppler_weight(0.0, 1.0, &spec);
        // 30-digit quadrature of the integrand
        assert!((w - 0.616_125_062_867_441_357).abs() < 1e-15);
    }

    #[test]
    fn doppler_weight_symmetry_and_mode() {
        let spec = DopplerSpectrum::new(1.3, 0.8).unwrap();
        let peak = doppler_weight(1.3, 0.5, &spec);
        for d in [0.1, 0.5, 1.7, 4.0, 9.0] {
            let lo = doppler_weight(1.3 - d, 0.5, &spec);
            let hi = doppler_weight(1.3 + d, 0.5, &spec);
            assert!((lo - hi).abs() <= 1e-14 * lo.max(1e-300), "d={d}: {lo} vs {hi}");
            assert!(lo < peak);
            assert!(lo > 0.0);
        }
    }

    fn small_grid(offset: f64) -> RangeDopplerGrid {
        RangeDopplerGrid::new(6, 10e6, VelocityAxis::uniform(-4.0, 1.0, 4.0).unwrap(), offset)
            .unwrap()
    }

    #[test]
    fn kernel_range_ratio_is_cubic() {
        let g = small_grid(5000.0);
        let spec = DopplerSpectrum::new(-2.2, 5f64.sqrt()).unwrap();
        let k = build_kernel(&g, &reference_constants(), &spec).unwrap();
        assert_eq!(k.len(), g.len());
        assert!(k.variances().iter().all(|v| *v > 0.0));
        let (r1, r2) = (g.range(0), g.range(5));
        for kk in 0..g.n_velocities() {
            let ratio = k.variance(0, kk) / k.variance(5, kk);
            assert!((ratio - (r2 / r1).powi(3)).abs() < 1e-12 * ratio);
            for j in 1..6 {
                assert!(k.variance(j, kk) < k.variance(j - 1, kk));
            }
        }
        // layout: flat index k * J + j
        assert_eq!(k.variances()[g.flat_index(3, 2)], k.variance(3, 2));
    }

    #[test]
    fn kernel_rejects_zero_range() {
        let g = small_grid(0.0);
        let spec = DopplerSpectrum::new(0.0, 1.0).unwrap();
        let err = build_kernel(&g, &reference_constants(), &spec);
        assert!(matches!(err, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn kernel_floor_applies() {
        let g = RangeDopplerGrid::new(2, 10e6, VelocityAxis::uniform(-40.0, 1.0, 40.0).unwrap(), 1e4)
            .unwrap();
        let spec = DopplerSpectrum::new(0.0, 0.5).unwrap();
        let opts = KernelOptions { floor_rel: 1e-12, area_override: None };
        let k = build_kernel_with(&g, &reference_constants(), &spec, &opts).unwrap();
        let max = k.variances().iter().cloned().fold(0.0, f64::max);
        let min = k.variances().iter().cloned().fold(f64::INFINITY, f64::min);
        assert!((min - 1e-12 * max).abs() <= 1e-24 * max);
    }

    #[test]
    fn area_override_is_used() {
        let g = small_grid(5000.0);
        let spec = DopplerSpectrum::new(0.0, 1.0).unwrap();
        let c = reference_constants();
        let area = vec![1.0; 6];
        let opts = KernelOptions { floor_rel: 0.0, area_override: Some(area) };
        let k = build_kernel_with(&g, &c, &spec, &opts).unwrap();
        let expect = 1e3 / (2.51e6 * c.wavelength) * c.k_radar / g.range(2).powi(4)
            * doppler_weight(g.velocity(1), 1.0, &spec);
        assert!((k.variance(2, 1) - expect).abs() < 1e-12 * expect);
        let bad = KernelOptions { floor_rel: 0.0, area_override: Some(vec![1.0; 5]) };
        assert!(build_kernel_with(&g, &c, &spec, &bad).is_err());
    }

    #[test]
    fn inverse_weights_cases() {
        let g = small_grid(5000.0);
        let id = ClutterKernel::identity(&g);
        assert!(id.variances().iter().all(|v| *v == 1.0));
        let w: Vec<f64> = id.inverse_weights(1e-4).unwrap();
        assert!(w.iter().all(|x| *x == 1e-4));
        let z: Vec<f64> = id.inverse_weights(0.0).unwrap();
        assert!(z.iter().all(|x| *x == 0.0));
        assert!(id.inverse_weights::<f64>(-1.0).is_err());

        let g2 = RangeDopplerGrid::new(2, 1e6, VelocityAxis::explicit(vec![0.0]).unwrap(), 0.0)
            .unwrap();
        let k = ClutterKernel::from_variances(&g2, vec![1.0, 4.0]).unwrap();
        assert_eq!(k.inverse_weights::<f64>(2.0).unwrap(), vec![2.0, 0.5]);
        assert!(ClutterKernel::from_variances(&g2, vec![1.0, 0.0]).is_err());
        assert!(ClutterKernel::from_variances(&g2, vec![1.0]).is_err());
    }

    #[test]
    fn kernel_csv_header_and_rows() {
        let g = small_grid(5000.0);
        let k = ClutterKernel::identity(&g);
        let csv = k.to_csv(&g);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("j,k,tau_s,v_mps,variance"));
        assert_eq!(lines.count(), g.len());
    }
}
