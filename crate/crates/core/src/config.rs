//! Run configuration as written by a user: TOML, degrees and dB units,
//! every field optional with the reference scenario as default.
//!
//! [`RunConfig`] keeps the values in file units so that serialising and
//! reloading is exact; the SI views used by the simulator are derived on
//! demand.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detector::{AngleGrid, Cfar, Detector, TrainingLayout};
use crate::engine::Scenario;
use crate::error::Error;
use crate::geometry::{SystemParams, TargetGeometry, UserGeometry};
use crate::policy::{energy_budget, Policy, PrecoderNorm};
use crate::units::{db_to_linear, dbm_to_watts};

#[derive(Debug)]
pub enum ConfigError {
    Io {
        path: String,
        source: std::io::Error,
    },
    /// Syntax or schema problem at `path` (dotted field path).
    Schema {
        path: String,
        message: String,
    },
    /// Parsed fine but violates a model constraint.
    Invalid {
        field: String,
        source: Error,
    },
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Io { path, source } => write!(f, "cannot read {path}: {source}"),
            ConfigError::Schema { path, message } if path.is_empty() || path == "." => write!(f, "{message}"),
            ConfigError::Schema { path, message } => write!(f, "{path}: {message}"),
            ConfigError::Invalid { field, source } => write!(f, "{field}: {source}"),
        }
    }
}

impl std::error::Error for ConfigError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            ConfigError::Io { source, .. } => Some(source),
            ConfigError::Invalid { source, .. } => Some(source),
            ConfigError::Schema { .. } => None,
        }
    }
}

fn invalid(field: &str, source: Error) -> ConfigError {
    ConfigError::Invalid { field: field.to_string(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub carrier_frequency_ghz: f64,
    pub tx_power_dbm: f64,
    pub antennas: usize,
    pub bandwidth_mhz: f64,
    pub noise_psd_dbm_per_hz: f64,
    pub packet_bits: u32,
    /// Packet arrival rate normalised by the bandwidth, `lambda_u / W`.
    pub normalized_packet_rate: f64,
    pub modulation_order: u32,
    pub max_sweep_angle_deg: f64,
    pub sensing_window_ms: f64,
    pub false_alarm_probability: f64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            carrier_frequency_ghz: 5.0,
            tx_power_dbm: 20.0,
            antennas: 16,
            bandwidth_mhz: 10.0,
            noise_psd_dbm_per_hz: -174.0,
            packet_bits: 1000,
            normalized_packet_rate: 1e-4,
            modulation_order: 2,
            max_sweep_angle_deg: 70.0,
            sensing_window_ms: 0.3,
            false_alarm_probability: 1e-2,
        }
    }
}

/// Target placement relative to the user at 40 degrees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Target at 43 degrees, inside the user's beam.
    #[default]
    LowDtheta,
    /// Target at -25 degrees, reachable through sidelobes.
    MidDtheta,
    /// Target at -58 degrees, masked by the user beam pattern.
    HighDtheta,
    /// Use the explicit `targets` list.
    Custom,
}

impl Preset {
    pub fn target_angle_deg(self) -> Option<f64> {
        match self {
            Preset::LowDtheta => Some(43.0),
            Preset::MidDtheta => Some(-25.0),
            Preset::HighDtheta => Some(-58.0),
            Preset::Custom => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    pub angle_deg: f64,
    pub distance_m: f64,
    pub rcs_dbsm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub preset: Preset,
    pub user_angle_deg: f64,
    pub user_distance_m: f64,
    /// Preset target distance.
    pub target_distance_m: f64,
    /// Preset target RCS.
    pub target_rcs_dbsm: f64,
    /// Only read with `preset = "custom"`.
    pub targets: Vec<TargetConfig>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            preset: Preset::LowDtheta,
            user_angle_deg: 40.0,
            user_distance_m: 500.0,
            target_distance_m: 80.0,
            target_rcs_dbsm: 5.0,
            targets: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub pure_comm: bool,
    pub time_sharing_beta: Vec<f64>,
    pub concurrent_rho: Vec<f64>,
    pub precoder_norm: PrecoderNorm,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            pure_comm: true,
            time_sharing_beta: vec![1.0, 200.0],
            concurrent_rho: vec![0.5],
            precoder_norm: PrecoderNorm::Renormalized,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayoutKind {
    #[default]
    Beamspace,
    Contiguous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub grid_step_deg: f64,
    pub training_cells: usize,
    pub training_layout: LayoutKind,
    /// Beamspace guard half-width, in units of `1/N` in `sin(theta)`.
    pub guard_beams: f64,
    /// Beamspace minimum training spacing, in units of `1/N` in `sin(theta)`.
    pub training_spacing_beams: f64,
    /// Guard cells per side for the contiguous layout.
    pub guard_cells: usize,
    pub hit_tolerance_deg: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            grid_step_deg: 0.5,
            training_cells: 16,
            training_layout: LayoutKind::Beamspace,
            guard_beams: 2.0,
            training_spacing_beams: 1.0,
            guard_cells: 3,
            hit_tolerance_deg: 4.0,
        }
    }
}

impl DetectorConfig {
    pub fn layout(&self) -> TrainingLayout {
        match self.training_layout {
            LayoutKind::Beamspace => {
                TrainingLayout::Beamspace { guard: self.guard_beams, spacing: self.training_spacing_beams }
            }
            LayoutKind::Contiguous => TrainingLayout::Contiguous { guard: self.guard_cells },
        }
    }

    pub fn build(&self, params: &SystemParams) -> Result<Detector, Error> {
        if self.hit_tolerance_deg.is_nan() || self.hit_tolerance_deg <= 0.0 {
            return Err(Error::Invalid(format!("hit tolerance must be positive, got {}", self.hit_tolerance_deg)));
        }
        let grid = AngleGrid::symmetric(params.theta_max, self.grid_step_deg.to_radians(), params.antennas)?;
        let cfar = match self.layout() {
            TrainingLayout::Contiguous { guard } => Cfar::contiguous(grid.len(), self.training_cells, guard)?,
            TrainingLayout::Beamspace { guard, spacing } => {
                if guard.is_nan() || spacing.is_nan() || guard < 0.0 || spacing < 0.0 {
                    return Err(Error::Invalid("guard and spacing must be non-negative".into()));
                }
                Cfar::beamspace(&grid, self.training_cells, guard, spacing)?
            }
        };
        Ok(Detector { grid, cfar, p_fa: params.p_fa, tolerance: self.hit_tolerance_deg.to_radians() })
    }
}

/// Either an explicit list or an inclusive arithmetic range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Values {
    List(Vec<f64>),
    Range { start: f64, stop: f64, step: f64 },
}

impl Values {
    pub fn expand(&self) -> Result<Vec<f64>, Error> {
        match *self {
            Values::List(ref v) => Ok(v.clone()),
            Values::Range { start, stop, step } => {
                if !start.is_finite() || !stop.is_finite() || step.is_nan() || step <= 0.0 || stop < start {
                    return Err(Error::Invalid(format!("bad range {start}..{stop} step {step}")));
                }
                let n = ((stop - start) / step + 1e-9).floor() as usize;
                if n > 100_000 {
                    return Err(Error::Invalid(format!("range {start}..{stop} step {step} has too many points")));
                }
                // Index-based so that -30 + k*2.5 stays exact.
                Ok((0..=n).map(|k| start + k as f64 * step).collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub rcs_dbsm: Values,
    pub sensing_window_ms: Values,
    pub rho: Values,
    pub beta: Values,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            rcs_dbsm: Values::Range { start: -30.0, stop: 10.0, step: 2.5 },
            sensing_window_ms: Values::List(vec![0.2, 0.3, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
            rho: Values::Range { start: 0.0, stop: 1.0, step: 0.1 },
            beta: Values::List(vec![0.0, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub trials: usize,
    pub out: String,
    pub system: SystemConfig,
    pub scenario: ScenarioConfig,
    pub policies: PolicyConfig,
    pub detector: DetectorConfig,
    pub sweeps: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            trials: 2000,
            out: "results".into(),
            system: SystemConfig::default(),
            scenario: ScenarioConfig::default(),
            policies: PolicyConfig::default(),
            detector: DetectorConfig::default(),
            sweeps: SweepConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses and validates a TOML document.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let de = toml::Deserializer::parse(text)
            .map_err(|e| ConfigError::Schema { path: String::new(), message: e.to_string() })?;
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Schema {
            path: e.path().to_string(),
            message: e.into_inner().message().trim().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn system_params(&self) -> SystemParams {
        let s = &self.system;
        let bandwidth_hz = s.bandwidth_mhz * 1e6;
        SystemParams {
            carrier_hz: s.carrier_frequency_ghz * 1e9,
            tx_power_w: dbm_to_watts(s.tx_power_dbm),
            antennas: s.antennas,
            bandwidth_hz,
            noise_psd: dbm_to_watts(s.noise_psd_dbm_per_hz),
            packet_bits: s.packet_bits,
            arrival_rate: s.normalized_packet_rate * bandwidth_hz,
            modulation_order: s.modulation_order,
            theta_max: s.max_sweep_angle_deg.to_radians(),
            sensing_window_s: s.sensing_window_ms * 1e-3,
            p_fa: s.false_alarm_probability,
        }
    }

    pub fn target_configs(&self) -> Vec<TargetConfig> {
        let sc = &self.scenario;
        match sc.preset.target_angle_deg() {
            Some(angle_deg) => {
                vec![TargetConfig { angle_deg, distance_m: sc.target_distance_m, rcs_dbsm: sc.target_rcs_dbsm }]
            }
            None => sc.targets.clone(),
        }
    }

    /// Fully resolved SI scenario.
    pub fn scenario(&self) -> Result<Scenario, ConfigError> {
        let params = self.system_params();
        params.validate().map_err(|e| invalid("system", e))?;
        let lam = params.wavelength();
        let sc = &self.scenario;
        check_angle("scenario.user_angle_deg", sc.user_angle_deg)?;
        let user = UserGeometry::new(sc.user_angle_deg.to_radians(), sc.user_distance_m, lam)
            .map_err(|e| invalid("scenario.user_distance_m", e))?;
        let targets = self
            .target_configs()
            .iter()
            .enumerate()
            .map(|(i, t)| {
                check_angle(&format!("scenario.targets[{i}].angle_deg"), t.angle_deg)?;
                TargetGeometry::new(t.angle_deg.to_radians(), t.distance_m, db_to_linear(t.rcs_dbsm), lam)
                    .map_err(|e| invalid(&format!("scenario.targets[{i}]"), e))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let detector = self.detector.build(&params).map_err(|e| invalid("detector", e))?;
        Ok(Scenario::new(params, user, targets, detector, self.policies.precoder_norm))
    }

    /// Policies listed under `[policies]`, in a fixed order.
    pub fn policies(&self) -> Vec<Policy> {
        let p = &self.policies;
        let mut out = Vec::new();
        if p.pure_comm {
            out.push(Policy::PureComm);
        }
        out.extend(p.time_sharing_beta.iter().map(|&beta| Policy::TimeSharing { beta }));
        out.extend(p.concurrent_rho.iter().map(|&rho| Policy::Concurrent { rho }));
        out
    }

    /// Checks every module precondition before anything runs.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.trials == 0 {
            return Err(invalid("trials", Error::Invalid("at least one trial is required".into())));
        }
        let scenario = self.scenario()?;
        let params = scenario.params;
        for (i, policy) in self.policies().iter().enumerate() {
            policy.validate().map_err(|e| invalid(&format!("policies[{i}]"), e))?;
            energy_budget(*policy, &params).map_err(|e| invalid(&format!("policies ({policy})"), e))?;
        }
        for (name, values) in [
            ("sweeps.rcs_dbsm", &self.sweeps.rcs_dbsm),
            ("sweeps.sensing_window_ms", &self.sweeps.sensing_window_ms),
            ("sweeps.rho", &self.sweeps.rho),
            ("sweeps.beta", &self.sweeps.beta),
        ] {
            let v = values.expand().map_err(|e| invalid(name, e))?;
            if v.iter().any(|x| !x.is_finite()) {
                return Err(invalid(name, Error::Invalid("values must be finite".into())));
            }
        }
        for rho in self.sweeps.rho.expand().map_err(|e| invalid("sweeps.rho", e))? {
            Policy::Concurrent { rho }.validate().map_err(|e| invalid("sweeps.rho", e))?;
        }
        for beta in self.sweeps.beta.expand().map_err(|e| invalid("sweeps.beta", e))? {
            energy_budget(Policy::TimeSharing { beta }, &params).map_err(|e| invalid("sweeps.beta", e))?;
        }
        let has_ts = self.policies().iter().any(|p| matches!(p, Policy::TimeSharing { .. }));
        for ts in self.sweeps.sensing_window_ms.expand().map_err(|e| invalid("sweeps.sensing_window_ms", e))? {
            let mut p = params;
            p.sensing_window_s = ts * 1e-3;
            p.validate().map_err(|e| invalid("sweeps.sensing_window_ms", e))?;
            if has_ts {
                energy_budget(Policy::TimeSharing { beta: 0.0 }, &p)
                    .map_err(|e| invalid("sweeps.sensing_window_ms", e))?;
            }
        }
        Ok(())
    }
}

fn check_angle(field: &str, deg: f64) -> Result<(), ConfigError> {
    if (-90.0..=90.0).contains(&deg) {
        Ok(())
    } else {
        Err(invalid(field, Error::Invalid(format!("angle {deg} deg outside [-90, 90]"))))
    }
}

/// Reads, parses and validates a configuration file.
pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text =
        std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
    RunConfig::from_toml_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_file_gives_reference_defaults() {
        let cfg = RunConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        let sc = cfg.scenario().unwrap();
        assert_eq!(sc.targets.len(), 1);
        assert!((sc.targets[0].theta.to_degrees() - 43.0).abs() < 1e-12);
        let p = sc.params;
        assert!((p.carrier_hz - 5e9).abs() < 1.0);
        assert!((p.tx_power_w - 0.1).abs() < 1e-15);
        assert_eq!(p.antennas, 16);
        assert!((p.arrival_rate - 1000.0).abs() < 1e-9);
        assert!((sc.user.theta.to_degrees() - 40.0).abs() < 1e-12);
    }

    #[test]
    fn reference_file_matches_defaults() {
        let text = include_str!("../../../configs/reference.toml");
        assert_eq!(RunConfig::from_toml_str(text).unwrap(), RunConfig::default());
    }

    #[test]
    fn saturated_traffic_rejected() {
        let err = RunConfig::from_toml_str("[system]\nnormalized_packet_rate = 1.0\n").unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, ConfigError::Invalid { source: Error::NotBursty { .. }, .. }));
        assert!(msg.contains("B*lambda_u"), "{msg}");
    }

    #[test]
    fn infeasible_time_sharing_cites_bound() {
        let err = RunConfig::from_toml_str("[system]\nsensing_window_ms = 0.05\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("1.016000e-4"), "{msg}");
        // Without time sharing the same window is fine.
        let ok = "[system]\nsensing_window_ms = 0.05\n[policies]\ntime_sharing_beta = []\n[sweeps]\nbeta = []\nsensing_window_ms = [0.05]\n";
        RunConfig::from_toml_str(ok).unwrap();
    }

    #[test]
    fn schema_errors_carry_the_field_path() {
        let err = RunConfig::from_toml_str("[detector]\ngrid_step_deg = \"fine\"\n").unwrap_err();
        match &err {
            ConfigError::Schema { path, .. } => assert_eq!(path, "detector.grid_step_deg"),
            e => panic!("{e:?}"),
        }
        let err = RunConfig::from_toml_str("[system]\nantenas = 4\n").unwrap_err();
        assert!(err.to_string().contains("antenas"), "{err}");
        assert!(matches!(RunConfig::from_toml_str("[system"), Err(ConfigError::Schema { .. })));
    }

    #[test]
    fn presets_and_custom_targets() {
        let cfg = RunConfig::from_toml_str("[scenario]\npreset = \"high-dtheta\"\n").unwrap();
        assert!((cfg.scenario().unwrap().targets[0].theta.to_degrees() + 58.0).abs() < 1e-12);
        let custom = r#"
            [scenario]
            preset = "custom"
            targets = [
                { angle_deg = 10.0, distance_m = 50.0, rcs_dbsm = 0.0 },
                { angle_deg = -30.0, distance_m = 90.0, rcs_dbsm = -5.0 },
            ]
        "#;
        let sc = RunConfig::from_toml_str(custom).unwrap().scenario().unwrap();
        assert_eq!(sc.targets.len(), 2);
        assert!((sc.targets[1].rcs - 10f64.powf(-0.5)).abs() < 1e-12);
        assert!(RunConfig::from_toml_str("[scenario]\nuser_angle_deg = 120.0\n").is_err());
    }

    #[test]
    fn default_rcs_grid_has_17_points() {
        let v = SweepConfig::default().rcs_dbsm.expand().unwrap();
        assert_eq!(v.len(), 17);
        assert_eq!(v[0], -30.0);
        assert_eq!(v[16], 10.0);
        assert_eq!(SweepConfig::default().rho.expand().unwrap().len(), 11);
    }

    #[test]
    fn detector_grid_must_fit_the_cfar() {
        let err = RunConfig::from_toml_str("[detector]\ngrid_step_deg = 20.0\n").unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { source: Error::CfarGridTooShort { .. }, .. }), "{err:?}");
    }

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg);
    }

    proptest! {
        #[test]
        fn round_trip(
            seed in any::<u64>(),
            trials in 1usize..100_000,
            tx in 0.0f64..40.0,
            ts in 0.11f64..20.0,
            user in -80.0f64..80.0,
            rcs in -40.0f64..20.0,
            betas in proptest::collection::vec(0.0f64..500.0, 0..4),
            rhos in proptest::collection::vec(0.0f64..=1.0, 0..4),
            preset in prop_oneof![Just(Preset::LowDtheta), Just(Preset::MidDtheta), Just(Preset::HighDtheta)],
            raw in any::<bool>(),
        ) {
            let mut cfg = RunConfig { seed, trials, ..RunConfig::default() };
            cfg.system.tx_power_dbm = tx;
            cfg.system.sensing_window_ms = ts;
            cfg.sweeps.sensing_window_ms = Values::List(vec![ts]);
            cfg.scenario.user_angle_deg = user;
            cfg.scenario.target_rcs_dbsm = rcs;
            cfg.scenario.preset = preset;
            cfg.policies.time_sharing_beta = betas;
            cfg.policies.concurrent_rho = rhos;
            cfg.policies.precoder_norm = if raw { PrecoderNorm::Raw } else { PrecoderNorm::Renormalized };
            cfg.validate().unwrap();
            let back = RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
            prop_assert_eq!(back, cfg);
        }

        #[test]
        fn arbitrary_text_never_panics(text in ".{0,200}") {
            let _ = RunConfig::from_toml_str(&text);
        }
    }
}
