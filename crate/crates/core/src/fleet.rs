//! Vehicle classes, fleet composition, and arrival generation.

use thiserror::Error;

use crate::rng::SimRng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FleetError {
    #[error("uniform draw R must be in (0, 1], got {0}")]
    BadUniform(f64),
    #[error("mean headway must be positive, got {0}")]
    BadHeadway(f64),
    #[error("generation rate must be positive, got {0}")]
    BadRate(f64),
    #[error("{what} shares sum to {sum}, expected 100")]
    SharesSum { what: String, sum: f64 },
    #[error("{what} share {value} outside [0, 100]")]
    ShareRange { what: String, value: f64 },
    #[error("class {name}: {msg}")]
    BadClass { name: String, msg: String },
    #[error("unknown vehicle class '{0}'")]
    UnknownClass(String),
    #[error("demand type must be 0, 1 or 2, got {0}")]
    BadDemandType(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    Slow,
    Medium,
    Fast,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Slow, Category::Medium, Category::Fast];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Allowed max-speed band in km/h.
    pub fn speed_band(self) -> (f64, f64) {
        match self {
            Category::Slow => (0.0, 15.0),
            Category::Medium => (30.0, 50.0),
            Category::Fast => (80.0, 120.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Slow => "slow",
            Category::Medium => "medium",
            Category::Fast => "fast",
        }
    }
}

/// Physical and kinematic envelope of one vehicle type.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleClass {
    pub name: String,
    pub category: Category,
    /// m
    pub length: f64,
    /// m
    pub width: f64,
    /// km/h
    pub max_speed_kmh: f64,
    /// a_n, m/s² (> 0)
    pub max_accel: f64,
    /// b_n, m/s² (< 0)
    pub desired_braking: f64,
    /// b̂, m/s² (< 0): braking the driver expects of its leader.
    pub expected_leader_braking: f64,
}

impl VehicleClass {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        category: Category,
        length: f64,
        width: f64,
        max_speed_kmh: f64,
        max_accel: f64,
        desired_braking: f64,
        expected_leader_braking: f64,
    ) -> Self {
        VehicleClass {
            name: name.to_string(),
            category,
            length,
            width,
            max_speed_kmh,
            max_accel,
            desired_braking,
            expected_leader_braking,
        }
    }

    /// Desired (maximum) speed in m/s.
    pub fn desired_speed(&self) -> f64 {
        self.max_speed_kmh / 3.6
    }

    pub fn validate(&self) -> Result<(), FleetError> {
        let bad = |msg: String| FleetError::BadClass {
            name: self.name.clone(),
            msg,
        };
        if !(self.length > 0.0) {
            return Err(bad(format!("length {} must be positive", self.length)));
        }
        if !(self.width > 0.0) {
            return Err(bad(format!("width {} must be positive", self.width)));
        }
        let (lo, hi) = self.category.speed_band();
        let v = self.max_speed_kmh;
        if !(v > 0.0 && v >= lo && v <= hi) {
            return Err(bad(format!(
                "max speed {} km/h outside the {} band [{lo}, {hi}]",
                self.max_speed_kmh,
                self.category.name()
            )));
        }
        if !(self.max_accel > 0.0) {
            return Err(bad("max acceleration must be positive".into()));
        }
        if !(self.desired_braking < 0.0) || !(self.expected_leader_braking < 0.0) {
            return Err(bad("braking rates must be negative".into()));
        }
        Ok(())
    }
}

/// Default class table. Dimensions and kinematic envelopes are
/// conventional values, not measured ground truth; every field can be
/// overridden from the parameter file.
///
/// | class     | cat    | L (m) | W (m) | v max (km/h) | a (m/s²) | b (m/s²) | b̂ (m/s²) |
/// |-----------|--------|-------|-------|--------------|----------|----------|----------|
/// | Bicycle   | slow   | 1.8   | 0.6   | 12           | 1.0      | -2.0     | -2.0     |
/// | Rickshaw  | slow   | 2.5   | 1.2   | 8            | 0.8      | -2.0     | -2.0     |
/// | Van/Cart  | slow   | 2.8   | 1.3   | 8            | 0.6      | -1.8     | -1.8     |
/// | CNG       | medium | 2.7   | 1.4   | 40           | 1.5      | -3.0     | -3.0     |
/// | Bus       | medium | 10.0  | 2.5   | 40           | 1.0      | -2.5     | -3.0     |
/// | Truck     | medium | 8.0   | 2.4   | 35           | 0.8      | -2.5     | -3.0     |
/// | Motorbike | fast   | 2.0   | 0.8   | 90           | 2.5      | -4.0     | -3.5     |
/// | Car       | fast   | 4.5   | 1.8   | 100          | 2.0      | -3.5     | -3.5     |
pub fn default_classes() -> Vec<VehicleClass> {
    use Category::*;
    vec![
        VehicleClass::new("Bicycle", Slow, 1.8, 0.6, 12.0, 1.0, -2.0, -2.0),
        VehicleClass::new("Rickshaw", Slow, 2.5, 1.2, 8.0, 0.8, -2.0, -2.0),
        VehicleClass::new("Van/Cart", Slow, 2.8, 1.3, 8.0, 0.6, -1.8, -1.8),
        VehicleClass::new("CNG", Medium, 2.7, 1.4, 40.0, 1.5, -3.0, -3.0),
        VehicleClass::new("Bus", Medium, 10.0, 2.5, 40.0, 1.0, -2.5, -3.0),
        VehicleClass::new("Truck", Medium, 8.0, 2.4, 35.0, 0.8, -2.5, -3.0),
        VehicleClass::new("Motorbike", Fast, 2.0, 0.8, 90.0, 2.5, -4.0, -3.5),
        VehicleClass::new("Car", Fast, 4.5, 1.8, 100.0, 2.0, -3.5, -3.5),
    ]
}

/// Modal share (percent) of each default class within its category.
pub fn default_modal_shares() -> Vec<f64> {
    vec![9.0, 89.0, 2.0, 83.0, 15.0, 2.0, 88.0, 12.0]
}

/// Fleet composition: category shares and per-class modal shares, in
/// percent.
#[derive(Debug, Clone, PartialEq)]
pub struct FleetMix {
    classes: Vec<VehicleClass>,
    modal_shares: Vec<f64>,
    category_shares: [f64; 3],
}

const SHARE_TOL: f64 = 1e-6;

fn check_share(what: &str, v: f64) -> Result<(), FleetError> {
    if !(0.0..=100.0).contains(&v) {
        return Err(FleetError::ShareRange {
            what: what.to_string(),
            value: v,
        });
    }
    Ok(())
}

impl FleetMix {
    pub fn new(
        classes: Vec<VehicleClass>,
        modal_shares: Vec<f64>,
        category_shares: [f64; 3],
    ) -> Result<Self, FleetError> {
        assert_eq!(classes.len(), modal_shares.len());
        for c in &classes {
            c.validate()?;
        }
        let mut sum = 0.0;
        for (cat, &s) in Category::ALL.iter().zip(&category_shares) {
            check_share(cat.name(), s)?;
            sum += s;
        }
        if (sum - 100.0).abs() > SHARE_TOL {
            return Err(FleetError::SharesSum {
                what: "category".into(),
                sum,
            });
        }
        for cat in Category::ALL {
            let mut group = 0.0;
            let mut members = 0;
            for (c, &s) in classes.iter().zip(&modal_shares) {
                if c.category == cat {
                    check_share(&c.name, s)?;
                    group += s;
                    members += 1;
                }
            }
            // A category without classes is fine only if nobody draws it.
            let needed = members > 0 || category_shares[cat.index()] > 0.0;
            if needed && (group - 100.0).abs() > SHARE_TOL {
                return Err(FleetError::SharesSum {
                    what: format!("{} modal", cat.name()),
                    sum: group,
                });
            }
        }
        Ok(FleetMix {
            classes,
            modal_shares,
            category_shares,
        })
    }

    /// Default classes under the given slow/medium/fast shares.
    pub fn with_shares(slow: f64, medium: f64, fast: f64) -> Result<Self, FleetError> {
        Self::new(default_classes(), default_modal_shares(), [slow, medium, fast])
    }

    /// 55 / 40 / 5.
    pub fn dhaka() -> Self {
        Self::with_shares(55.0, 40.0, 5.0).expect("preset is valid")
    }

    /// 9 / 75 / 16, used for both Miami and Riyadh.
    pub fn miami_riyadh() -> Self {
        Self::with_shares(9.0, 75.0, 16.0).expect("preset is valid")
    }

    /// Medium-speed vehicles only.
    pub fn homogeneous_medium() -> Self {
        Self::with_shares(0.0, 100.0, 0.0).expect("preset is valid")
    }

    pub fn classes(&self) -> &[VehicleClass] {
        &self.classes
    }

    pub fn modal_shares(&self) -> &[f64] {
        &self.modal_shares
    }

    pub fn category_shares(&self) -> [f64; 3] {
        self.category_shares
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.classes
            .iter()
            .position(|c| c.name.eq_ignore_ascii_case(name))
    }

    /// Product of category share and modal share, as a probability.
    pub fn class_probability(&self, idx: usize) -> f64 {
        let c = &self.classes[idx];
        self.category_shares[c.category.index()] / 100.0 * self.modal_shares[idx] / 100.0
    }

    /// Two-stage categorical draw: category first, then a class within it.
    /// Returns the class index.
    pub fn sample_class(&self, rng: &mut SimRng) -> usize {
        let cat = pick(
            Category::ALL.iter().map(|c| self.category_shares[c.index()]),
            rng.uniform() * 100.0,
        );
        let cat = Category::ALL[cat];
        let members: Vec<usize> = (0..self.classes.len())
            .filter(|&i| self.classes[i].category == cat)
            .collect();
        let k = pick(
            members.iter().map(|&i| self.modal_shares[i]),
            rng.uniform() * 100.0,
        );
        members[k]
    }

    /// Replace one class (matched by name), revalidating the mix.
    pub fn with_class(mut self, class: VehicleClass, modal_share: Option<f64>) -> Result<Self, FleetError> {
        let idx = self
            .class_index(&class.name)
            .ok_or_else(|| FleetError::UnknownClass(class.name.clone()))?;
        self.classes[idx] = class;
        if let Some(s) = modal_share {
            self.modal_shares[idx] = s;
        }
        Self::new(self.classes, self.modal_shares, self.category_shares)
    }
}

/// Index of the bucket containing `u` given bucket weights; zero-weight
/// buckets are never chosen.
fn pick(weights: impl Iterator<Item = f64>, u: f64) -> usize {
    let mut acc = 0.0;
    let mut last_nonzero = 0;
    for (i, w) in weights.enumerate() {
        if w <= 0.0 {
            continue;
        }
        last_nonzero = i;
        acc += w;
        if u < acc {
            return i;
        }
    }
    last_nonzero
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DemandLevel {
    Low,
    Medium,
    High,
}

impl DemandLevel {
    pub const ALL: [DemandLevel; 3] = [DemandLevel::Low, DemandLevel::Medium, DemandLevel::High];

    /// Parameter-file code: 0, 1, 2.
    pub fn from_code(s: &str) -> Result<Self, FleetError> {
        match s.trim() {
            "0" => Ok(DemandLevel::Low),
            "1" => Ok(DemandLevel::Medium),
            "2" => Ok(DemandLevel::High),
            other => Err(FleetError::BadDemandType(other.to_string())),
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            DemandLevel::Low => "low",
            DemandLevel::Medium => "medium",
            DemandLevel::High => "high",
        }
    }
}

/// Arrival rate at one generating node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemandProfile {
    pub level: DemandLevel,
    /// vehicles/hour
    pub rate: f64,
}

impl DemandProfile {
    pub fn new(level: DemandLevel, rate: f64) -> Result<Self, FleetError> {
        if !(rate > 0.0) || !rate.is_finite() {
            return Err(FleetError::BadRate(rate));
        }
        Ok(DemandProfile { level, rate })
    }

    /// Mean headway in seconds.
    pub fn mean_headway(&self) -> f64 {
        3600.0 / self.rate
    }
}

/// Exponential variate headway `μ·(−ln R)` for a uniform `R ∈ (0, 1]`.
pub fn sample_headway(mean_headway: f64, r: f64) -> Result<f64, FleetError> {
    if !(mean_headway > 0.0) {
        return Err(FleetError::BadHeadway(mean_headway));
    }
    if !(r > 0.0 && r <= 1.0) {
        return Err(FleetError::BadUniform(r));
    }
    Ok(mean_headway * -r.ln())
}

/// Arrival timestamps in `(0, horizon)`, strictly increasing, with i.i.d.
/// exponential gaps.
pub fn generate_arrivals(profile: &DemandProfile, horizon: f64, rng: &mut SimRng) -> Vec<f64> {
    let mu = profile.mean_headway();
    let mut out = Vec::new();
    let mut t = 0.0;
    if !(horizon > 0.0) {
        return out;
    }
    loop {
        let gap = sample_headway(mu, rng.uniform_open0()).expect("mu > 0 and R in (0,1]");
        if gap <= 0.0 {
            // R == 1 exactly; a zero gap would break strict ordering.
            continue;
        }
        t += gap;
        if t >= horizon {
            break;
        }
        out.push(t);
    }
    out
}

/// Number of strips a vehicle of `vehicle_width` spans. Never less than one:
/// a vehicle occupies every strip it overlaps.
pub fn occupied_strips(vehicle_width: f64, strip_width: f64) -> usize {
    debug_assert!(vehicle_width > 0.0 && strip_width > 0.0);
    let n = (vehicle_width / strip_width - 1e-9).ceil();
    (n as usize).max(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn headway_examples() {
        assert_eq!(sample_headway(36.0, 1.0).unwrap(), 0.0);
        assert_relative_eq!(sample_headway(36.0, (-1.0f64).exp()).unwrap(), 36.0, epsilon = 1e-12);
        // 36 ln 2
        assert_relative_eq!(sample_headway(36.0, 0.5).unwrap(), 24.95329850015803, epsilon = 1e-12);
        assert!(matches!(sample_headway(36.0, 0.0), Err(FleetError::BadUniform(_))));
        assert!(sample_headway(0.0, 0.5).is_err());
    }

    #[test]
    fn dhaka_rickshaw_probability() {
        let mix = FleetMix::dhaka();
        let r = mix.class_index("rickshaw").unwrap();
        assert_relative_eq!(mix.class_probability(r), 0.4895, epsilon = 1e-12);
        let total: f64 = (0..mix.classes().len()).map(|i| mix.class_probability(i)).sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn homogeneous_mix_draws_only_medium() {
        let mix = FleetMix::homogeneous_medium();
        let mut rng = SimRng::seed_from_u64(3);
        for _ in 0..10_000 {
            let c = mix.sample_class(&mut rng);
            assert_eq!(mix.classes()[c].category, Category::Medium);
        }
    }

    #[test]
    fn bad_mixes_rejected() {
        assert!(matches!(
            FleetMix::with_shares(50.0, 40.0, 5.0),
            Err(FleetError::SharesSum { .. })
        ));
        assert!(matches!(
            FleetMix::with_shares(120.0, -20.0, 0.0),
            Err(FleetError::ShareRange { .. })
        ));
        let mut shares = default_modal_shares();
        shares[0] = 10.0;
        assert!(FleetMix::new(default_classes(), shares, [55.0, 40.0, 5.0]).is_err());
    }

    #[test]
    fn default_classes_respect_bands() {
        for c in default_classes() {
            c.validate().unwrap();
        }
        let mut c = default_classes()[0].clone();
        c.max_speed_kmh = 20.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn class_override() {
        let mut bus = FleetMix::dhaka().classes()[4].clone();
        bus.length = 12.0;
        let mix = FleetMix::dhaka().with_class(bus, None).unwrap();
        assert_eq!(mix.classes()[4].length, 12.0);
    }

    #[test]
    fn arrivals_are_strictly_increasing() {
        let p = DemandProfile::new(DemandLevel::High, 800.0).unwrap();
        assert_relative_eq!(p.mean_headway(), 4.5);
        let mut rng = SimRng::seed_from_u64(11);
        let a = generate_arrivals(&p, 1800.0, &mut rng);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert!(a.iter().all(|&t| t > 0.0 && t < 1800.0));
        assert!(generate_arrivals(&p, 0.0, &mut rng).is_empty());
    }

    #[test]
    fn arrival_count_matches_poisson_mean() {
        // 100 veh/h over 1800 s has Poisson mean 50.
        let p = DemandProfile::new(DemandLevel::Low, 100.0).unwrap();
        let mut rng = SimRng::seed_from_u64(2020);
        let runs = 1000;
        let total: usize = (0..runs).map(|_| generate_arrivals(&p, 1800.0, &mut rng).len()).sum();
        let mean = total as f64 / runs as f64;
        assert!((mean - 50.0).abs() <= 2.5, "mean count {mean}");
    }

    #[test]
    fn occupied_strip_examples() {
        assert_eq!(occupied_strips(1.8, 2.5), 1);
        assert_eq!(occupied_strips(1.8, 0.5), 4);
        assert_eq!(occupied_strips(0.5, 0.5), 1);
        assert_eq!(occupied_strips(1.5, 0.5), 3);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn occupied_strips_at_least_one_and_monotone(w in 0.1f64..4.0, s1 in 0.1f64..4.0, s2 in 0.1f64..4.0) {
                let (lo, hi) = if s1 <= s2 { (s1, s2) } else { (s2, s1) };
                prop_assert!(occupied_strips(w, lo) >= 1);
                prop_assert!(occupied_strips(w, lo) >= occupied_strips(w, hi));
            }
        }
    }
}
