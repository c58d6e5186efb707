//! Scenario configuration.
//!
//! A scenario is a flat `key = value` document. Every key maps one-to-one to a
//! field of [`ScenarioConfig`]; missing keys take their value from
//! [`ScenarioConfig::default`], unknown keys are rejected, and `#` starts a
//! comment.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

use crate::phy;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key `{key}` given more than once")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: invalid value for `{key}`: {msg}")]
    InvalidValue {
        line: usize,
        key: String,
        msg: String,
    },
    #[error("invalid `{field}`: {msg}")]
    Invariant { field: &'static str, msg: String },
}

/// Layout of PSCCH and PSSCH inside the sidelink band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GridLayout {
    /// D2D style: dedicated PSCCH pool, disjoint PSSCH pool.
    R12,
    /// V2X style: each subchannel starts with its own PSCCH RBs.
    R14,
    /// Legacy PSCCH pool kept, R14 subchannels carved out of the old PSSCH pool.
    Hybrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrafficPattern {
    /// Only the platoon leader (vehicle 1) generates traffic.
    LeaderBroadcast,
    /// Every vehicle broadcasts its own application stream.
    AllBroadcast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MobilitySource {
    PlatoonModel,
    Ns2Trace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PathlossModel {
    /// Log-distance LOS law `41 + 22.7 log10(d) + 20 log10(f/5)`, 3 m floor.
    WinnerB1,
    /// Friis free-space loss, 1 m floor.
    FreeSpace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DecodeMode {
    /// Success iff SINR reaches the MCS threshold.
    Deterministic,
    /// Success with logistic probability around the threshold.
    Logistic,
}

macro_rules! config_enum {
    ($ty:ident { $($variant:ident => $name:literal),+ $(,)? }) => {
        impl $ty {
            pub const fn as_str(self) -> &'static str {
                match self {
                    $($ty::$variant => $name),+
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $ty {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, String> {
                $(
                    if s.eq_ignore_ascii_case($name) {
                        return Ok($ty::$variant);
                    }
                )+
                Err(format!(
                    "expected one of {}",
                    [$($name),+].join(", ")
                ))
            }
        }
    };
}

config_enum!(GridLayout { R12 => "R12", R14 => "R14", Hybrid => "HYBRID" });
config_enum!(TrafficPattern {
    LeaderBroadcast => "LEADER_BROADCAST",
    AllBroadcast => "ALL_BROADCAST",
});
config_enum!(MobilitySource {
    PlatoonModel => "PLATOON_MODEL",
    Ns2Trace => "NS2_TRACE",
});
config_enum!(PathlossModel {
    WinnerB1 => "WINNER_B1",
    FreeSpace => "FREE_SPACE",
});
config_enum!(DecodeMode {
    Deterministic => "DETERMINISTIC",
    Logistic => "LOGISTIC",
});

/// Conversion between a field value and its textual form in a scenario file.
trait ConfigValue: Sized {
    fn parse_value(s: &str) -> Result<Self, String>;
    fn render_value(&self) -> String;
}

macro_rules! display_value {
    ($($ty:ty),+) => {
        $(
            impl ConfigValue for $ty {
                fn parse_value(s: &str) -> Result<Self, String> {
                    s.parse::<$ty>().map_err(|e| e.to_string())
                }

                fn render_value(&self) -> String {
                    self.to_string()
                }
            }
        )+
    };
}

display_value!(
    u32,
    u64,
    bool,
    GridLayout,
    TrafficPattern,
    MobilitySource,
    PathlossModel,
    DecodeMode
);

impl ConfigValue for f64 {
    fn parse_value(s: &str) -> Result<Self, String> {
        let v: f64 = s.parse().map_err(|e: std::num::ParseFloatError| e.to_string())?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err("value must be finite".into())
        }
    }

    fn render_value(&self) -> String {
        // `Display` for f64 is shortest-round-trip, so render/parse is lossless.
        self.to_string()
    }
}

impl ConfigValue for PathBuf {
    fn parse_value(s: &str) -> Result<Self, String> {
        Ok(PathBuf::from(s))
    }

    fn render_value(&self) -> String {
        self.display().to_string()
    }
}

impl<T: ConfigValue> ConfigValue for Option<T> {
    fn parse_value(s: &str) -> Result<Self, String> {
        if s.is_empty() || s.eq_ignore_ascii_case("none") {
            Ok(None)
        } else {
            T::parse_value(s).map(Some)
        }
    }

    fn render_value(&self) -> String {
        match self {
            Some(v) => v.render_value(),
            None => "none".into(),
        }
    }
}

macro_rules! scenario_config {
    ($($(#[$meta:meta])* $field:ident: $ty:ty,)+) => {
        /// All tunables of one simulation run.
        #[derive(Debug, Clone, PartialEq)]
        pub struct ScenarioConfig {
            $($(#[$meta])* pub $field: $ty,)+
        }

        impl ScenarioConfig {
            /// Every key accepted in a scenario file, in rendering order.
            pub const KEYS: &'static [&'static str] = &[$(stringify!($field)),+];

            fn set_field(&mut self, key: &str, value: &str) -> Option<Result<(), String>> {
                match key {
                    $(stringify!($field) => Some(
                        <$ty as ConfigValue>::parse_value(value).map(|v| self.$field = v)
                    ),)+
                    _ => None,
                }
            }

            /// Renders the configuration as a scenario document listing every key.
            pub fn render(&self) -> String {
                let mut out = String::new();
                $(
                    out.push_str(stringify!($field));
                    out.push_str(" = ");
                    out.push_str(&ConfigValue::render_value(&self.$field));
                    out.push('\n');
                )+
                out
            }
        }
    };
}

scenario_config! {
    n_vehicles: u32,
    /// Bumper-to-bumper gap between consecutive vehicles.
    inter_vehicle_gap_m: f64,
    vehicle_length_m: f64,
    speed_mps: f64,
    /// Length of the traffic window.
    sim_time_ms: u64,
    app_packet_bytes: u32,
    app_interval_ms: u32,
    mcs: u32,
    /// PSSCH data RBs granted per transmission.
    n_rbs: u32,
    shadowing_enabled: bool,
    shadow_sigma_db: f64,
    d_cor_m: f64,
    shadow_block_ms: u64,
    tx_power_dbm: f64,
    noise_dbm: f64,
    /// Antenna height of every vehicle. Both ends of a link share it, so the
    /// built-in pathloss laws only see horizontal distance.
    antenna_height_m: f64,
    grid_layout: GridLayout,
    /// Sidelink bandwidth in RBs.
    n_rb_total: u32,
    subchannel_size_rb: u32,
    pscch_rb_per_subchannel: u32,
    /// Size of the dedicated PSCCH pool (R12 and HYBRID), starting at RB 0.
    pscch_pool_rb: u32,
    /// First RB of the PSSCH pool (R12 and HYBRID).
    pssch_pool_start_rb: u32,
    dmrs_symbols: u32,
    pathloss_model: PathlossModel,
    carrier_ghz: f64,
    sinr_margin_db: f64,
    decode_mode: DecodeMode,
    logistic_beta_db: f64,
    t_reordering_ms: u64,
    sps_sensing_window_ms: u64,
    sps_rsrp_threshold_dbm: f64,
    sps_keep_probability: f64,
    /// Selection window start, relative to the triggering subframe.
    sps_t1_ms: u32,
    /// Selection window end; `none` means `app_interval_ms`.
    sps_t2_ms: Option<u32>,
    hdr_transport_bytes: u32,
    hdr_network_bytes: u32,
    hdr_pdcp_bytes: u32,
    hdr_rlc_bytes: u32,
    hdr_mac_bytes: u32,
    seed: u64,
    traffic_pattern: TrafficPattern,
    mobility_source: MobilitySource,
    trace_path: Option<PathBuf>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_vehicles: 9,
            inter_vehicle_gap_m: 5.0,
            vehicle_length_m: 4.0,
            speed_mps: 50.4 / 3.6,
            sim_time_ms: 45_000,
            app_packet_bytes: 72,
            app_interval_ms: 20,
            mcs: 4,
            n_rbs: 24,
            shadowing_enabled: true,
            shadow_sigma_db: 3.0,
            d_cor_m: 25.0,
            shadow_block_ms: 100,
            tx_power_dbm: 23.0,
            noise_dbm: -116.0,
            antenna_height_m: 1.5,
            grid_layout: GridLayout::Hybrid,
            n_rb_total: 50,
            subchannel_size_rb: 10,
            pscch_rb_per_subchannel: 2,
            pscch_pool_rb: 10,
            pssch_pool_start_rb: 10,
            dmrs_symbols: 4,
            pathloss_model: PathlossModel::WinnerB1,
            carrier_ghz: 5.9,
            sinr_margin_db: 3.0,
            decode_mode: DecodeMode::Deterministic,
            logistic_beta_db: 0.5,
            t_reordering_ms: 25,
            sps_sensing_window_ms: 1000,
            sps_rsrp_threshold_dbm: -110.0,
            sps_keep_probability: 0.0,
            sps_t1_ms: 1,
            sps_t2_ms: None,
            hdr_transport_bytes: 8,
            hdr_network_bytes: 20,
            hdr_pdcp_bytes: 2,
            hdr_rlc_bytes: 1,
            hdr_mac_bytes: 2,
            seed: 1,
            traffic_pattern: TrafficPattern::LeaderBroadcast,
            mobility_source: MobilitySource::PlatoonModel,
            trace_path: None,
        }
    }
}

/// The baseline scenario: 9 vehicles at 50.4 km/h, 72-byte packets every
/// 20 ms, 3 dB / 25 m shadowing, -116 dBm noise, 45 s.
pub fn default_scenario() -> ScenarioConfig {
    ScenarioConfig::default()
}

/// Parses a scenario document, filling missing keys from the defaults.
pub fn parse_scenario(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let mut cfg = ScenarioConfig::default();
    let mut seen: Vec<&str> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line,
            msg: format!("expected `key = value`, found `{content}`"),
        })?;
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() {
            return Err(ConfigError::Syntax {
                line,
                msg: "missing key before `=`".into(),
            });
        }
        if seen.contains(&key) {
            return Err(ConfigError::DuplicateKey {
                line,
                key: key.into(),
            });
        }
        match cfg.set_field(key, value) {
            None => {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.into(),
                })
            }
            Some(Err(msg)) => {
                return Err(ConfigError::InvalidValue {
                    line,
                    key: key.into(),
                    msg,
                })
            }
            Some(Ok(())) => seen.push(key),
        }
    }

    cfg.validate()?;
    Ok(cfg)
}

fn invariant(field: &'static str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invariant {
        field,
        msg: msg.into(),
    }
}

fn check(ok: bool, field: &'static str, msg: &str) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(invariant(field, msg))
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        check(self.n_vehicles >= 2, "n_vehicles", "must be at least 2")?;
        check(self.n_vehicles <= 1000, "n_vehicles", "must be at most 1000")?;
        check(self.inter_vehicle_gap_m > 0.0, "inter_vehicle_gap_m", "must be positive")?;
        check(self.vehicle_length_m >= 0.0, "vehicle_length_m", "must be non-negative")?;
        check(self.speed_mps >= 0.0, "speed_mps", "must be non-negative")?;
        check(self.sim_time_ms > 0, "sim_time_ms", "must be positive")?;
        check(self.app_packet_bytes >= 1, "app_packet_bytes", "must be at least 1")?;
        check(self.app_interval_ms >= 1, "app_interval_ms", "must be at least 1")?;
        check(self.mcs <= phy::MAX_MCS, "mcs", "must be in 0..=28")?;
        check(self.n_rbs >= 1, "n_rbs", "must be at least 1")?;
        check(self.shadow_sigma_db >= 0.0, "shadow_sigma_db", "must be non-negative")?;
        check(self.d_cor_m > 0.0, "d_cor_m", "must be positive")?;
        check(self.shadow_block_ms >= 1, "shadow_block_ms", "must be at least 1")?;
        check(self.antenna_height_m >= 0.0, "antenna_height_m", "must be non-negative")?;
        check(
            (2..=4).contains(&self.dmrs_symbols),
            "dmrs_symbols",
            "must be 2, 3 or 4",
        )?;
        check(self.carrier_ghz > 0.0, "carrier_ghz", "must be positive")?;
        check(self.logistic_beta_db > 0.0, "logistic_beta_db", "must be positive")?;
        check(
            self.sps_sensing_window_ms >= 1,
            "sps_sensing_window_ms",
            "must be at least 1",
        )?;
        check(
            (0.0..=0.8).contains(&self.sps_keep_probability),
            "sps_keep_probability",
            "must be in [0, 0.8]",
        )?;
        check(self.sps_t1_ms >= 1, "sps_t1_ms", "must be at least 1")?;
        check(
            self.selection_window_end_ms() >= self.sps_t1_ms,
            "sps_t2_ms",
            "must not be smaller than sps_t1_ms",
        )?;
        if self.mobility_source == MobilitySource::Ns2Trace {
            check(
                self.trace_path.is_some(),
                "trace_path",
                "required when mobility_source = NS2_TRACE",
            )?;
        }

        let grid = phy::ResourceGrid::build(self)
            .map_err(|e| invariant("grid_layout", e.to_string()))?;
        let needed = grid.subchannels_for(self.n_rbs);
        if needed > grid.n_subchannels() {
            return Err(invariant(
                "n_rbs",
                format!(
                    "{} data RBs need {needed} subchannels but the grid has {}",
                    self.n_rbs,
                    grid.n_subchannels()
                ),
            ));
        }
        Ok(())
    }

    /// End of the SPS selection window relative to the trigger subframe.
    pub fn selection_window_end_ms(&self) -> u32 {
        self.sps_t2_ms.unwrap_or(self.app_interval_ms)
    }

    /// Sum of all per-layer header sizes below the application.
    pub fn stack_overhead_bytes(&self) -> u32 {
        self.hdr_transport_bytes
            + self.hdr_network_bytes
            + self.hdr_pdcp_bytes
            + self.hdr_rlc_bytes
            + self.hdr_mac_bytes
    }

    /// Extra time the engine keeps running after the traffic window so that
    /// packets generated near the end can still be sent and reordered.
    pub fn drain_ms(&self) -> u64 {
        u64::from(self.app_interval_ms.max(self.selection_window_end_ms())) * 2
            + self.t_reordering_ms
            + 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_baseline_table() {
        let cfg = default_scenario();
        assert_eq!(cfg.n_vehicles, 9);
        assert_eq!(cfg.noise_dbm, -116.0);
        assert!((cfg.speed_mps - 14.0).abs() < 1e-12);
        assert_eq!(cfg.d_cor_m, 25.0);
        assert_eq!(cfg.shadow_sigma_db, 3.0);
        assert_eq!(cfg.sim_time_ms, 45_000);
        assert_eq!(cfg.app_packet_bytes, 72);
        assert_eq!(cfg.app_interval_ms, 20);
        assert_eq!(cfg.antenna_height_m, 1.5);
        assert_eq!(cfg.shadow_block_ms, 100);
        assert_eq!(cfg.sps_sensing_window_ms, 1000);
        assert_eq!(cfg.t_reordering_ms, 25);
        assert_eq!(cfg.sps_keep_probability, 0.0);
        assert_eq!(cfg.vehicle_length_m, 4.0);
        cfg.validate().unwrap();
    }

    #[test]
    fn empty_document_is_default() {
        assert_eq!(parse_scenario("").unwrap(), default_scenario());
        assert_eq!(
            parse_scenario("# only a comment\n\n   \n").unwrap(),
            default_scenario()
        );
    }

    #[test]
    fn overrides_are_applied() {
        let cfg = parse_scenario("mcs = 4\nn_rbs = 24").unwrap();
        let mut expected = default_scenario();
        expected.mcs = 4;
        expected.n_rbs = 24;
        assert_eq!(cfg, expected);

        let cfg = parse_scenario("mcs = 20 # fig 8\nn_rbs=4\ngrid_layout = r14").unwrap();
        assert_eq!(cfg.mcs, 20);
        assert_eq!(cfg.n_rbs, 4);
        assert_eq!(cfg.grid_layout, GridLayout::R14);
    }

    #[test]
    fn too_few_vehicles_rejected() {
        let err = parse_scenario("n_vehicles = 1").unwrap_err();
        assert!(matches!(
            err,
            ConfigError::Invariant {
                field: "n_vehicles",
                ..
            }
        ));
    }

    #[test]
    fn syntax_error_reports_line() {
        let err = parse_scenario("mcs = 4\n\nthis is not a pair\n").unwrap_err();
        assert!(matches!(err, ConfigError::Syntax { line: 3, .. }), "{err}");
        assert!(err.to_string().starts_with("line 3"));
    }

    #[test]
    fn unknown_and_duplicate_keys_rejected() {
        assert_eq!(
            parse_scenario("mcs = 4\nbogus = 1").unwrap_err(),
            ConfigError::UnknownKey {
                line: 2,
                key: "bogus".into()
            }
        );
        assert!(matches!(
            parse_scenario("mcs = 4\nmcs = 5").unwrap_err(),
            ConfigError::DuplicateKey { line: 2, .. }
        ));
    }

    #[test]
    fn bad_values_rejected() {
        assert!(matches!(
            parse_scenario("mcs = four").unwrap_err(),
            ConfigError::InvalidValue { line: 1, .. }
        ));
        assert!(matches!(
            parse_scenario("speed_mps = NaN").unwrap_err(),
            ConfigError::InvalidValue { .. }
        ));
        assert!(matches!(
            parse_scenario("mcs = 29").unwrap_err(),
            ConfigError::Invariant { field: "mcs", .. }
        ));
        assert!(matches!(
            parse_scenario("sps_keep_probability = 0.9").unwrap_err(),
            ConfigError::Invariant {
                field: "sps_keep_probability",
                ..
            }
        ));
        assert!(matches!(
            parse_scenario("app_interval_ms = 0").unwrap_err(),
            ConfigError::Invariant {
                field: "app_interval_ms",
                ..
            }
        ));
        assert!(matches!(
            parse_scenario("inter_vehicle_gap_m = 0").unwrap_err(),
            ConfigError::Invariant { .. }
        ));
        assert!(matches!(
            parse_scenario("mobility_source = NS2_TRACE").unwrap_err(),
            ConfigError::Invariant {
                field: "trace_path",
                ..
            }
        ));
        assert!(matches!(
            parse_scenario("n_rbs = 500").unwrap_err(),
            ConfigError::Invariant { field: "n_rbs", .. }
        ));
    }

    #[test]
    fn render_lists_every_key() {
        let text = default_scenario().render();
        for key in ScenarioConfig::KEYS {
            assert!(text.contains(&format!("{key} = ")), "missing {key}");
        }
        assert_eq!(text.lines().count(), ScenarioConfig::KEYS.len());
    }

    #[test]
    fn optional_values_round_trip() {
        let cfg = parse_scenario(
            "mobility_source = NS2_TRACE\ntrace_path = traces/highway.ns2\nsps_t2_ms = 15",
        )
        .unwrap();
        assert_eq!(cfg.trace_path, Some(PathBuf::from("traces/highway.ns2")));
        assert_eq!(cfg.selection_window_end_ms(), 15);
        assert_eq!(parse_scenario(&cfg.render()).unwrap(), cfg);
    }
}
