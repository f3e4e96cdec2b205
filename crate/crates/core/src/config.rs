//! Scenario configuration: strict TOML with unit-suffixed keys.
//!
//! Every key may be overridden from the environment as
//! `CLUTTERK_<SECTION>__<KEY>=<toml value>`, e.g.
//! `CLUTTERK_SOLVER__LAMBDA_C=0.5`.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::BfrMode;
use crate::scene::SignalModel;
use crate::solver::FilterConfig;
use crate::targets::TargetSearch;

pub const ENV_PREFIX: &str = "CLUTTERK_";

const SECTIONS: [&str; 7] = ["waveform", "grid", "kernel", "scene", "solver", "targets", "experiment"];
const REQUIRED: [&str; 2] = ["waveform", "grid"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub waveform: WaveformSection,
    pub grid: GridSection,
    #[serde(default)]
    pub kernel: KernelSection,
    #[serde(default)]
    pub scene: SceneSection,
    #[serde(default)]
    pub solver: FilterConfig,
    #[serde(default)]
    pub targets: TargetsSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WaveformSection {
    pub n_pulses: usize,
    pub bandwidth_hz: f64,
    pub pulse_duration_us: f64,
    pub sample_rate_hz: f64,
    pub carrier_freq_hz: f64,
    pub pri_low_us: f64,
    pub pri_high_us: f64,
    /// Receive block length `L`; the shortest pulse interval when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub block_len_samples: Option<usize>,
}

impl Default for WaveformSection {
    fn default() -> Self {
        WaveformSection {
            n_pulses: 32,
            bandwidth_hz: 5e6,
            pulse_duration_us: 40.0,
            sample_rate_hz: 10e6,
            carrier_freq_hz: 10e9,
            pri_low_us: 500.0,
            pri_high_us: 800.0,
            block_len_samples: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    /// Segments `[v_min, dv, v_max]` of the clutter velocity axis.
    pub velocity_segments_mps: Vec<[f64; 3]>,
    /// Range of delay bin 0.
    pub range_offset_m: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection { velocity_segments_mps: vec![[-30.0, 7.5, 30.0]], range_offset_m: 1500.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Identity,
    Physical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelSection {
    pub kind: KernelKind,
    pub k_radar_wm2: f64,
    pub beamwidth_deg: f64,
    pub grazing_angle_rad: f64,
    pub beaufort: f64,
    pub clutter_mean_velocity_mps: f64,
    pub doppler_spread_mps: f64,
    pub floor_rel: f64,
}

impl Default for KernelSection {
    fn default() -> Self {
        KernelSection {
            kind: KernelKind::Physical,
            k_radar_wm2: 250e8,
            beamwidth_deg: 4.0,
            grazing_angle_rad: std::f64::consts::FRAC_PI_2,
            beaufort: 5.0,
            clutter_mean_velocity_mps: -2.2,
            doppler_spread_mps: 5f64.sqrt(),
            floor_rel: 1e-30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClutterLaw {
    None,
    Gaussian,
    Exponential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub range_m: f64,
    pub velocity_mps: f64,
    pub amplitude: f64,
    #[serde(default)]
    pub phase_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSection {
    pub clutter_law: ClutterLaw,
    pub model: SignalModel,
    /// Ratio of mean noiseless sample power to noise power.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
    /// Explicit noise power; mutually exclusive with `snr_db`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_variance: Option<f64>,
    pub targets: Vec<TargetSpec>,
}

impl Default for SceneSection {
    fn default() -> Self {
        SceneSection {
            clutter_law: ClutterLaw::Gaussian,
            model: SignalModel::PerPulse,
            snr_db: None,
            noise_variance: None,
            targets: Vec::new(),
        }
    }
}

/// How the noise level of a scene is set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseSpec {
    SnrDb(f64),
    Variance(f64),
}

impl SceneSection {
    /// `snr_db` if given, else `noise_variance`, else 20 dB SNR.
    pub fn noise(&self) -> NoiseSpec {
        match (self.snr_db, self.noise_variance) {
            (_, Some(v)) => NoiseSpec::Variance(v),
            (Some(s), None) => NoiseSpec::SnrDb(s),
            (None, None) => NoiseSpec::SnrDb(20.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TargetsSection {
    pub velocity_segments_mps: Vec<[f64; 3]>,
    pub n_iterations: usize,
    pub threshold_db: f64,
    /// Outer clutter/target iterations.
    pub n_outer: usize,
}

impl Default for TargetsSection {
    fn default() -> Self {
        TargetsSection { velocity_segments_mps: vec![[-40.0, 1.0, 40.0]], n_iterations: 2, threshold_db: 13.0, n_outer: 1 }
    }
}

impl TargetsSection {
    pub fn search(&self) -> TargetSearch {
        TargetSearch { n_iterations: self.n_iterations, threshold_db: self.threshold_db }
    }
}

/// Regularization of a BFR sweep cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegMode {
    /// `lambda_C = 0`.
    None,
    /// `lambda_C I`.
    Identity,
    /// `lambda_C Sigma_C^-1` with the physical kernel.
    Kernel,
}

impl RegMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RegMode::None => "none",
            RegMode::Identity => "identity",
            RegMode::Kernel => "kernel",
        }
    }
}

/// Units of the experiment `lambda_*` lists and of `solver.lambda_c` in the
/// target scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaScale {
    /// Used as given.
    Absolute,
    /// Multiplied by the noise power of the realization; in `identity` mode
    /// also divided by the mean physical-kernel variance. A factor of 1 is
    /// then the MAP weighting for the respective prior.
    #[default]
    NoiseRelative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub name: String,
    pub seed: u64,
    pub n_monte_carlo: usize,
    pub n_pulses: Vec<usize>,
    /// Clutter and filter grid spacing per `n_pulses` entry.
    pub velocity_step_mps: Vec<f64>,
    /// Half-width of the symmetric clutter grid of the BFR sweep.
    pub clutter_velocity_max_mps: f64,
    pub modes: Vec<RegMode>,
    /// `lambda_C` per `n_pulses` entry for `identity` mode.
    pub lambda_identity: Vec<f64>,
    /// `lambda_C` per `n_pulses` entry for `kernel` mode.
    pub lambda_kernel: Vec<f64>,
    /// Optional `lambda_C` grid searched per cell instead of the fixed lists.
    pub lambda_search: Vec<f64>,
    pub lambda_scale: LambdaScale,
    pub bfr_mode: BfrMode,
    pub response_lambdas: Vec<f64>,
    pub response_probe_segments_mps: Vec<[f64; 3]>,
    pub response_range_m: f64,
    pub response_realizations: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            name: "experiment".into(),
            seed: 0,
            n_monte_carlo: 20,
            n_pulses: vec![4, 8, 16],
            velocity_step_mps: vec![7.5, 4.0, 2.0],
            clutter_velocity_max_mps: 30.0,
            modes: vec![RegMode::None, RegMode::Identity, RegMode::Kernel],
            lambda_identity: vec![1.0, 1.0, 1.0],
            lambda_kernel: vec![1.0, 1.0, 1.0],
            lambda_search: Vec::new(),
            lambda_scale: LambdaScale::NoiseRelative,
            bfr_mode: BfrMode::PerSample,
            response_lambdas: vec![1e-4, 1e-2, 1.0, 1e2],
            response_probe_segments_mps: vec![[-20.0, 0.5, 60.0]],
            response_range_m: 6430.0,
            response_realizations: 1,
        }
    }
}

impl ScenarioConfig {
    /// Parse TOML text, then apply environment overrides from `env`.
    pub fn parse_with_env<I>(text: &str, env: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut table: toml::Table =
            text.parse().map_err(|e: toml::de::Error| Error::config("", "", e.message().to_string()))?;
        apply_env_overrides(&mut table, env)?;
        Self::from_table(table)
    }

    /// Parse TOML text without environment overrides.
    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_with_env(text, std::iter::empty())
    }

    /// Read a file and apply overrides from the process environment.
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("", "", format!("cannot read {}: {e}", path.display())))?;
        Self::parse_with_env(&text, std::env::vars())
    }

    fn from_table(mut table: toml::Table) -> Result<Self> {
        for key in table.keys() {
            if !SECTIONS.contains(&key.as_str()) {
                return Err(Error::config(key.clone(), "", format!("unknown section: {key}")));
            }
        }
        for s in REQUIRED {
            if !table.contains_key(s) {
                return Err(Error::config(s, "", format!("missing section: {s}")));
            }
        }
        fn section<T: DeserializeOwned + Default>(table: &mut toml::Table, name: &str) -> Result<T> {
            match table.remove(name) {
                None => Ok(T::default()),
                Some(toml::Value::Table(t)) => {
                    T::deserialize(t).map_err(|e| Error::config(name, offending_key(e.message()), e.message().to_string()))
                }
                Some(_) => Err(Error::config(name, "", format!("[{name}] must be a table"))),
            }
        }
        let cfg = ScenarioConfig {
            waveform: section(&mut table, "waveform")?,
            grid: section(&mut table, "grid")?,
            kernel: section(&mut table, "kernel")?,
            scene: section(&mut table, "scene")?,
            solver: section(&mut table, "solver")?,
            targets: section(&mut table, "targets")?,
            experiment: section(&mut table, "experiment")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    /// Range checks that serde cannot express.
    pub fn validate(&self) -> Result<()> {
        let w = &self.waveform;
        let bad = |section: &str, key: &str, msg: &str| Err(Error::config(section, key, msg));
        if w.n_pulses == 0 {
            return bad("waveform", "n_pulses", "must be at least 1");
        }
        for (key, v) in [
            ("pulse_duration_us", w.pulse_duration_us),
            ("sample_rate_hz", w.sample_rate_hz),
            ("carrier_freq_hz", w.carrier_freq_hz),
            ("pri_low_us", w.pri_low_us),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return bad("waveform", key, "must be positive and finite");
            }
        }
        if !(w.bandwidth_hz >= 0.0) {
            return bad("waveform", "bandwidth_hz", "must be non-negative");
        }
        if !(w.pri_high_us >= w.pri_low_us) {
            return bad("waveform", "pri_high_us", "must be >= pri_low_us");
        }
        let pulse_len = (w.pulse_duration_us * 1e-6 * w.sample_rate_hz).round() as usize;
        if let Some(l) = w.block_len_samples {
            if l < pulse_len {
                return bad("waveform", "block_len_samples", &format!("must be >= the pulse length ({pulse_len} samples)"));
            }
        }
        check_segments("grid", "velocity_segments_mps", &self.grid.velocity_segments_mps)?;
        check_segments("targets", "velocity_segments_mps", &self.targets.velocity_segments_mps)?;
        if !self.grid.range_offset_m.is_finite() {
            return bad("grid", "range_offset_m", "must be finite");
        }
        if self.scene.snr_db.is_some() && self.scene.noise_variance.is_some() {
            return bad("scene", "noise_variance", "give either snr_db or noise_variance, not both");
        }
        if let Some(v) = self.scene.noise_variance {
            if !(v >= 0.0) {
                return bad("scene", "noise_variance", "must be >= 0");
            }
        }
        for t in &self.scene.targets {
            if !(t.amplitude >= 0.0) {
                return bad("scene", "targets", "amplitude must be >= 0");
            }
        }
        self.solver
            .validate()
            .map_err(|e| Error::config("solver", "", e.to_string()))?;
        if self.targets.n_iterations == 0 {
            return bad("targets", "n_iterations", "must be at least 1");
        }
        if self.targets.n_outer == 0 {
            return bad("targets", "n_outer", "must be at least 1");
        }
        let e = &self.experiment;
        let n = e.n_pulses.len();
        if n == 0 {
            return bad("experiment", "n_pulses", "must not be empty");
        }
        for (key, len) in [
            ("velocity_step_mps", e.velocity_step_mps.len()),
            ("lambda_identity", e.lambda_identity.len()),
            ("lambda_kernel", e.lambda_kernel.len()),
        ] {
            if len != n {
                return bad("experiment", key, &format!("has {len} entries, n_pulses has {n}"));
            }
        }
        if e.modes.is_empty() {
            return bad("experiment", "modes", "must not be empty");
        }
        if e.response_lambdas.is_empty() {
            return bad("experiment", "response_lambdas", "lambda sweep is empty");
        }
        if e.lambda_search.iter().chain(&e.lambda_identity).chain(&e.lambda_kernel).chain(&e.response_lambdas).any(|l| !(*l >= 0.0)) {
            return bad("experiment", "lambda", "regularization weights must be >= 0");
        }
        check_segments("experiment", "response_probe_segments_mps", &e.response_probe_segments_mps)?;
        if e.n_monte_carlo == 0 {
            return bad("experiment", "n_monte_carlo", "must be at least 1");
        }
        if e.response_realizations == 0 {
            return bad("experiment", "response_realizations", "must be at least 1");
        }
        Ok(())
    }
}

fn check_segments(section: &str, key: &str, segs: &[[f64; 3]]) -> Result<()> {
    if segs.is_empty() {
        return Err(Error::config(section, key, "needs at least one [v_min, dv, v_max] segment"));
    }
    for s in segs {
        if !(s[1] > 0.0) || !(s[2] >= s[0]) {
            return Err(Error::config(section, key, format!("bad segment {s:?}")));
        }
    }
    Ok(())
}

fn offending_key(message: &str) -> String {
    for marker in ["unknown field `", "missing field `", "unknown variant `"] {
        if let Some(i) = message.find(marker) {
            let rest = &message[i + marker.len()..];
            if let Some(end) = rest.find('`') {
                return rest[..end].to_string();
            }
        }
    }
    String::new()
}

/// Apply `CLUTTERK_<SECTION>__<KEY>` variables to a parsed document.
pub fn apply_env_overrides<I>(table: &mut toml::Table, env: I) -> Result<()>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut vars: Vec<(String, String)> = env.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
    vars.sort();
    for (name, raw) in vars {
        let rest = &name[ENV_PREFIX.len()..];
        let Some((section, key)) = rest.split_once("__") else {
            return Err(Error::config("", name.clone(), "override must look like CLUTTERK_<SECTION>__<KEY>"));
        };
        let (section, key) = (section.to_ascii_lowercase(), key.to_ascii_lowercase());
        if !SECTIONS.contains(&section.as_str()) {
            return Err(Error::config(section.clone(), key, format!("unknown section: {section}")));
        }
        let value = parse_env_value(&raw);
        let entry = table
            .entry(section.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        match entry {
            toml::Value::Table(t) => {
                t.insert(key, value);
            }
            _ => return Err(Error::config(section.clone(), key, format!("[{section}] must be a table"))),
        }
    }
    Ok(())
}

/// A TOML literal when it parses as one, otherwise a bare string.
fn parse_env_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[waveform]\n[grid]\n";

    #[test]
    fn defaults_fill_in() {
        let cfg = ScenarioConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg.waveform, WaveformSection::default());
        assert_eq!(cfg.experiment.n_pulses, vec![4, 8, 16]);
        assert_eq!(cfg.solver.pcg_abs_tol, 1e-13);
    }

    #[test]
    fn missing_section_is_named() {
        let err = ScenarioConfig::parse("[grid]\n").unwrap_err();
        assert!(err.to_string().contains("missing section: waveform"), "{err}");
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = ScenarioConfig::parse("[waveform]\nbandwith_hz = 5e6\n[grid]\n").unwrap_err();
        match err {
            Error::Config { section, key, .. } => {
                assert_eq!(section, "waveform");
                assert_eq!(key, "bandwith_hz");
            }
            other => panic!("unexpected {other}"),
        }
        assert!(ScenarioConfig::parse("[waveform]\n[grid]\n[extra]\n").is_err());
    }

    #[test]
    fn round_trip_is_identity() {
        let text = r#"
            [waveform]
            n_pulses = 8
            block_len_samples = 700
            [grid]
            velocity_segments_mps = [[-5.0, 1.0, 0.0], [30.0, 1.0, 40.0]]
            [scene]
            clutter_law = "exponential"
            snr_db = 15.0
            targets = [{ range_m = 2000.0, velocity_mps = -13.0, amplitude = 0.5 }]
            [solver]
            lambda_c = 0.25
            preconditioner = "none"
        "#;
        let cfg = ScenarioConfig::parse(text).unwrap();
        let again = ScenarioConfig::parse(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(again.scene.targets[0].phase_deg, 0.0);
    }

    #[test]
    fn env_overrides_apply() {
        let env = vec![
            ("CLUTTERK_SOLVER__LAMBDA_C".to_string(), "0.5".to_string()),
            ("CLUTTERK_EXPERIMENT__NAME".to_string(), "bare".to_string()),
            ("CLUTTERK_EXPERIMENT__N_PULSES".to_string(), "[4]".to_string()),
            ("CLUTTERK_EXPERIMENT__VELOCITY_STEP_MPS".to_string(), "[7.5]".to_string()),
            ("CLUTTERK_EXPERIMENT__LAMBDA_IDENTITY".to_string(), "[1.0]".to_string()),
            ("CLUTTERK_EXPERIMENT__LAMBDA_KERNEL".to_string(), "[1.0]".to_string()),
            ("UNRELATED".to_string(), "x".to_string()),
        ];
        let cfg = ScenarioConfig::parse_with_env(MINIMAL, env).unwrap();
        assert_eq!(cfg.solver.lambda_c, 0.5);
        assert_eq!(cfg.experiment.name, "bare");
        assert_eq!(cfg.experiment.n_pulses, vec![4]);
        let bad = vec![("CLUTTERK_NOPE__X".to_string(), "1".to_string())];
        assert!(ScenarioConfig::parse_with_env(MINIMAL, bad).is_err());
    }

    #[test]
    fn semantic_checks() {
        let e = ScenarioConfig::parse("[waveform]\npri_low_us = 900.0\n[grid]\n").unwrap_err();
        assert!(e.to_string().contains("pri_high_us"));
        let e = ScenarioConfig::parse("[waveform]\n[grid]\n[experiment]\nn_pulses = [4, 8]\n").unwrap_err();
        assert!(e.to_string().contains("velocity_step_mps"));
        let e = ScenarioConfig::parse("[waveform]\n[grid]\n[scene]\nsnr_db = 1.0\nnoise_variance = 1.0\n").unwrap_err();
        assert!(e.to_string().contains("noise_variance"));
        let e = ScenarioConfig::parse("[waveform]\n[grid]\n[experiment]\nresponse_lambdas = []\n").unwrap_err();
        assert!(e.to_string().contains("empty"));
    }

    #[test]
    fn noise_resolution() {
        let mut s = SceneSection::default();
        assert_eq!(s.noise(), NoiseSpec::SnrDb(20.0));
        s.noise_variance = Some(0.0);
        assert_eq!(s.noise(), NoiseSpec::Variance(0.0));
    }
}
