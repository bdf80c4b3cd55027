//! The `key=value` parameter file, city profiles and demand scoping.
//!
//! ```text
//! # Dhaka, non-lane, rush hour
//! DemandType=2
//! StripWidth=0.5
//! PedestrianMode=on
//! SlowVehicle=55
//! MediumVehicle=40
//! FastVehicle=5
//! Class.Rickshaw.MaxSpeed=9
//! ```
//!
//! Absent keys take the defaults of [`Parameters::default`]. Unknown keys
//! are kept as warnings, bad values fail with the key name.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::carfollow::CarFollowingModel;
use crate::engine::{EngineConfig, PedestrianConfig};
use crate::fleet::{default_classes, default_modal_shares, DemandLevel, DemandProfile, FleetError, FleetMix};
use crate::lanechange::{GapAcceptanceParams, GhrParams, LaneChangingModel};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected key=value, got '{text}'")]
    Syntax { line: usize, text: String },
    #[error("{key}: invalid value '{value}': {msg}")]
    Value { key: String, value: String, msg: String },
    #[error(transparent)]
    Fleet(#[from] FleetError),
    #[error("unknown profile '{0}' (expected dhaka, miami or riyadh)")]
    Profile(String),
    #[error("unknown rate scope '{0}' (expected per-node or total)")]
    RateScope(String),
}

/// City preset: which absolute rates the three demand levels stand for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub enum Profile {
    #[default]
    Dhaka,
    Miami,
    Riyadh,
}

impl Profile {
    pub const ALL: [Profile; 3] = [Profile::Dhaka, Profile::Miami, Profile::Riyadh];

    pub fn name(self) -> &'static str {
        match self {
            Profile::Dhaka => "dhaka",
            Profile::Miami => "miami",
            Profile::Riyadh => "riyadh",
        }
    }

    /// veh/h for a demand level.
    pub fn rate(self, level: DemandLevel) -> f64 {
        let rates = match self {
            Profile::Dhaka => [100.0, 400.0, 800.0],
            Profile::Miami | Profile::Riyadh => [500.0, 1000.0, 2000.0],
        };
        rates[level.code() as usize]
    }

    pub fn default_mix(self) -> FleetMix {
        match self {
            Profile::Dhaka => FleetMix::dhaka(),
            Profile::Miami | Profile::Riyadh => FleetMix::miami_riyadh(),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Profile {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Profile::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| ConfigError::Profile(s.to_string()))
    }
}

/// Whether a profile rate applies to each generating node or is split
/// evenly across all of them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum RateScope {
    #[default]
    PerNode,
    Total,
}

impl RateScope {
    pub fn name(self) -> &'static str {
        match self {
            RateScope::PerNode => "per-node",
            RateScope::Total => "total",
        }
    }

    /// Rate seen by one of `generators` nodes.
    pub fn node_rate(self, rate: f64, generators: usize) -> f64 {
        match self {
            RateScope::PerNode => rate,
            RateScope::Total => rate / generators.max(1) as f64,
        }
    }
}

impl fmt::Display for RateScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RateScope {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "per-node" | "pernode" | "node" => Ok(RateScope::PerNode),
            "total" => Ok(RateScope::Total),
            _ => Err(ConfigError::RateScope(s.to_string())),
        }
    }
}

/// One `Class.<name>.<field>` override.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ClassField {
    Length,
    Width,
    MaxSpeed,
    MaxAccel,
    Braking,
    LeaderBraking,
    Share,
}

impl ClassField {
    const ALL: [ClassField; 7] = [
        ClassField::Length,
        ClassField::Width,
        ClassField::MaxSpeed,
        ClassField::MaxAccel,
        ClassField::Braking,
        ClassField::LeaderBraking,
        ClassField::Share,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ClassField::Length => "Length",
            ClassField::Width => "Width",
            ClassField::MaxSpeed => "MaxSpeed",
            ClassField::MaxAccel => "MaxAccel",
            ClassField::Braking => "Braking",
            ClassField::LeaderBraking => "LeaderBraking",
            ClassField::Share => "Share",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassOverride {
    pub class: String,
    pub field: ClassField,
    pub value: f64,
}

/// Everything the parameter file can say.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub demand: DemandLevel,
    /// slow, medium, fast (percent)
    pub shares: [f64; 3],
    pub strip_width: f64,
    pub pedestrians: bool,
    pub car_following: CarFollowingModel,
    pub lane_changing: LaneChangingModel,
    pub lambda: f64,
    pub critical_gap: f64,
    pub ghr_c: f64,
    pub ghr_m: f64,
    pub ghr_l: f64,
    pub ghr_lag: usize,
    /// Pedestrian crossings per hour per link when pedestrians are on.
    pub pedestrian_rate: f64,
    pub overrides: Vec<ClassOverride>,
}

impl Default for Parameters {
    fn default() -> Self {
        let ghr = GhrParams::default();
        Parameters {
            demand: DemandLevel::Medium,
            shares: [55.0, 40.0, 5.0],
            strip_width: 0.5,
            pedestrians: false,
            car_following: CarFollowingModel::Hybrid,
            lane_changing: LaneChangingModel::Gipps,
            lambda: 1.0,
            critical_gap: 1.0,
            ghr_c: ghr.c,
            ghr_m: ghr.m,
            ghr_l: ghr.l,
            ghr_lag: ghr.lag_steps,
            pedestrian_rate: PedestrianConfig::default().rate_per_hour,
            overrides: Vec::new(),
        }
    }
}

/// A parse result plus the lines that were ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed {
    pub params: Parameters,
    pub warnings: Vec<String>,
}

fn bad(key: &str, value: &str, msg: impl ToString) -> ConfigError {
    ConfigError::Value {
        key: key.to_string(),
        value: value.to_string(),
        msg: msg.to_string(),
    }
}

fn number(key: &str, value: &str) -> Result<f64, ConfigError> {
    let v: f64 = value.parse().map_err(|e| bad(key, value, e))?;
    if !v.is_finite() {
        return Err(bad(key, value, "not finite"));
    }
    Ok(v)
}

fn positive(key: &str, value: &str) -> Result<f64, ConfigError> {
    let v = number(key, value)?;
    if v <= 0.0 {
        return Err(bad(key, value, "must be positive"));
    }
    Ok(v)
}

fn switch(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value.to_ascii_lowercase().as_str() {
        "on" | "true" | "yes" | "1" => Ok(true),
        "off" | "false" | "no" | "0" => Ok(false),
        _ => Err(bad(key, value, "expected on or off")),
    }
}

pub fn parse_parameters(text: &str) -> Result<Parsed, ConfigError> {
    let mut p = Parameters::default();
    let mut warnings = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::Syntax {
                line: i + 1,
                text: raw.to_string(),
            });
        };
        let (key, value) = (key.trim(), value.trim());
        match key.to_ascii_lowercase().as_str() {
            "demandtype" => p.demand = DemandLevel::from_code(value).map_err(|e| bad(key, value, e))?,
            "slowvehicle" => p.shares[0] = number(key, value)?,
            "mediumvehicle" => p.shares[1] = number(key, value)?,
            "fastvehicle" => p.shares[2] = number(key, value)?,
            "stripwidth" => p.strip_width = positive(key, value)?,
            "pedestrianmode" => p.pedestrians = switch(key, value)?,
            "carfollowingmodel" => p.car_following = value.parse().map_err(|e| bad(key, value, e))?,
            "lanechangingmodel" => p.lane_changing = value.parse().map_err(|e| bad(key, value, e))?,
            "lambda" => p.lambda = positive(key, value)?,
            "criticalgapt" => {
                p.critical_gap = number(key, value)?;
                if p.critical_gap < 0.0 {
                    return Err(bad(key, value, "must be non-negative"));
                }
            }
            "ghrc" => p.ghr_c = number(key, value)?,
            "ghrm" => p.ghr_m = number(key, value)?,
            "ghrl" => p.ghr_l = number(key, value)?,
            "ghrlag" => p.ghr_lag = value.parse().map_err(|e| bad(key, value, e))?,
            "pedestrianrate" => {
                p.pedestrian_rate = number(key, value)?;
                if p.pedestrian_rate < 0.0 {
                    return Err(bad(key, value, "must be non-negative"));
                }
            }
            lower if lower.starts_with("class.") => match class_key(key) {
                Some((class, field)) => set_override(&mut p, class, field, number(key, value)?),
                None => warnings.push(format!("line {}: unrecognized class override '{key}'", i + 1)),
            },
            _ => warnings.push(format!("line {}: unknown key '{key}' ignored", i + 1)),
        }
    }
    GhrParams::new(p.ghr_c, p.ghr_m, p.ghr_l, p.ghr_lag)
        .map_err(|e| bad("GhrC/GhrM/GhrL", &format!("{}/{}/{}", p.ghr_c, p.ghr_m, p.ghr_l), e))?;
    // shares, class envelopes
    p.mix()?;
    Ok(Parsed { params: p, warnings })
}

fn class_key(key: &str) -> Option<(String, ClassField)> {
    let rest = &key["class.".len()..];
    let (class, field) = rest.rsplit_once('.')?;
    let field = ClassField::ALL
        .into_iter()
        .find(|f| f.name().eq_ignore_ascii_case(field))?;
    let canonical = default_classes()
        .into_iter()
        .find(|c| c.name.eq_ignore_ascii_case(class))?
        .name;
    Some((canonical, field))
}

fn set_override(p: &mut Parameters, class: String, field: ClassField, value: f64) {
    match p.overrides.iter_mut().find(|o| o.class == class && o.field == field) {
        Some(o) => o.value = value,
        None => p.overrides.push(ClassOverride { class, field, value }),
    }
}

impl Parameters {
    /// Fleet mix: default class table with overrides, under the file's
    /// category shares.
    pub fn mix(&self) -> Result<FleetMix, FleetError> {
        self.mix_with_shares(self.shares)
    }

    /// Same class table and overrides under other category shares.
    pub fn mix_with_shares(&self, shares: [f64; 3]) -> Result<FleetMix, FleetError> {
        let mut classes = default_classes();
        let mut modal = default_modal_shares();
        for o in &self.overrides {
            let i = classes
                .iter()
                .position(|c| c.name == o.class)
                .ok_or_else(|| FleetError::UnknownClass(o.class.clone()))?;
            let c = &mut classes[i];
            match o.field {
                ClassField::Length => c.length = o.value,
                ClassField::Width => c.width = o.value,
                ClassField::MaxSpeed => c.max_speed_kmh = o.value,
                ClassField::MaxAccel => c.max_accel = o.value,
                ClassField::Braking => c.desired_braking = o.value,
                ClassField::LeaderBraking => c.expected_leader_braking = o.value,
                ClassField::Share => modal[i] = o.value,
            }
        }
        FleetMix::new(classes, modal, shares)
    }

    pub fn engine_config(&self) -> EngineConfig {
        EngineConfig {
            car_following: self.car_following,
            lane_changing: self.lane_changing,
            gap: GapAcceptanceParams {
                lambda: self.lambda,
                critical_gap: self.critical_gap,
            },
            ghr: GhrParams {
                c: self.ghr_c,
                m: self.ghr_m,
                l: self.ghr_l,
                lag_steps: self.ghr_lag,
            },
            pedestrians: self.pedestrians.then(|| PedestrianConfig {
                rate_per_hour: self.pedestrian_rate,
                ..PedestrianConfig::default()
            }),
            ..EngineConfig::default()
        }
    }

    /// Per-node demand for a profile on a network with `generators`
    /// generating nodes.
    pub fn demand_profile(
        &self,
        profile: Profile,
        scope: RateScope,
        generators: usize,
    ) -> Result<DemandProfile, FleetError> {
        DemandProfile::new(self.demand, scope.node_rate(profile.rate(self.demand), generators))
    }

    /// Canonical text: every key, fixed order, shortest round-trip
    /// numbers.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push('=');
            s.push_str(&v);
            s.push('\n');
        };
        kv("DemandType", self.demand.code().to_string());
        kv("SlowVehicle", self.shares[0].to_string());
        kv("MediumVehicle", self.shares[1].to_string());
        kv("FastVehicle", self.shares[2].to_string());
        kv("StripWidth", self.strip_width.to_string());
        kv("PedestrianMode", if self.pedestrians { "on" } else { "off" }.into());
        kv("CarFollowingModel", self.car_following.to_string());
        kv("LaneChangingModel", self.lane_changing.to_string());
        kv("Lambda", self.lambda.to_string());
        kv("CriticalGapT", self.critical_gap.to_string());
        kv("GhrC", self.ghr_c.to_string());
        kv("GhrM", self.ghr_m.to_string());
        kv("GhrL", self.ghr_l.to_string());
        kv("GhrLag", self.ghr_lag.to_string());
        kv("PedestrianRate", self.pedestrian_rate.to_string());
        let mut ov = self.overrides.clone();
        ov.sort_by(|a, b| (&a.class, a.field).cmp(&(&b.class, b.field)));
        for o in ov {
            kv(&format!("Class.{}.{}", o.class, o.field.name()), o.value.to_string());
        }
        s
    }
}
