//! The simulation loop: spawning, pedestrians, lateral shifts, car
//! following, node transfers and metric accumulation over strip occupancy.

mod events;
mod occupancy;

pub use events::{render as render_events, Event};
pub use occupancy::{Interval, Overlap, StripOccupancy, OVERLAP_TOL};

use std::collections::{BTreeSet, VecDeque};
use std::sync::Arc;

use thiserror::Error;

use crate::carfollow::{CarFollowingModel, FollowState, GippsParams};
use crate::fleet::{generate_arrivals, occupied_strips, sample_headway, DemandProfile, FleetMix};
use crate::lanechange::{
    desire_to_change, ghr_acceleration, ghr_change, gipps_change, straightforward_change, Decision, Driver,
    GapAcceptanceParams, GhrHistory, GhrParams, Lag, LaneChangingModel, LaneContext, Neighbor, Side, SideView,
};
use crate::metrics::{Crossing, LinkMetrics, MetricsReport, VehicleRecord};
use crate::network::{NodeId, RoadNetwork};
use crate::rng::SimRng;

/// Stand-in distance to a leader when the road ahead is empty, m.
const FAR: f64 = 1e4;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("timestep must be positive, got {0}")]
    BadTimestep(f64),
    #[error("horizon must be positive, got {0}")]
    BadHorizon(f64),
    #[error("{name} must be in [{lo}, {hi}], got {value}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("class {class} spans {span} strips but link {link} on path {path} has only {strips}")]
    TooWide {
        class: String,
        span: usize,
        link: u32,
        path: u32,
        strips: usize,
    },
    #[error("no free entry span for vehicle on link {0}")]
    NoRoom(u32),
    #[error("invalid index: {0}")]
    BadIndex(String),
    #[error("state inconsistency at t={t}: {msg}")]
    Desync { t: f64, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PedestrianConfig {
    /// Crossings per hour per link.
    pub rate_per_hour: f64,
    /// m/s
    pub speed: f64,
    /// Longitudinal half-width a pedestrian blocks, m.
    pub clearance: f64,
}

impl Default for PedestrianConfig {
    fn default() -> Self {
        PedestrianConfig {
            rate_per_hour: 50.0,
            speed: 1.4,
            clearance: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    /// Timestep and reaction time, s.
    pub tau: f64,
    pub car_following: CarFollowingModel,
    pub lane_changing: LaneChangingModel,
    pub gap: GapAcceptanceParams,
    pub ghr: GhrParams,
    /// Entry speed as a fraction of the class desired speed.
    pub entry_speed_fraction: f64,
    /// Proximity threshold = factor · speed · τ.
    pub proximity_factor: f64,
    /// Longitudinal margin required around a vehicle's target strips, m.
    pub lateral_clearance: f64,
    pub pedestrians: Option<PedestrianConfig>,
    /// Below this speed a vehicle is waiting, m/s.
    pub wait_threshold: f64,
    pub record_events: bool,
    /// Audit overlaps every step even in collision-free modes.
    pub audit_every_step: bool,
    /// Rebuild and compare occupancy after every step (slow).
    pub check_invariants: bool,
    /// Count vehicles still driving at the horizon in the vehicle speed.
    pub include_active: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            tau: 1.0,
            car_following: CarFollowingModel::Hybrid,
            lane_changing: LaneChangingModel::Gipps,
            gap: GapAcceptanceParams {
                lambda: 1.0,
                critical_gap: 1.0,
            },
            ghr: GhrParams::default(),
            entry_speed_fraction: 0.5,
            proximity_factor: 2.0,
            lateral_clearance: 1.0,
            pedestrians: None,
            wait_threshold: 0.1,
            record_events: true,
            audit_every_step: false,
            check_invariants: false,
            include_active: true,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(EngineError::BadTimestep(self.tau));
        }
        let check = |name, value: f64, lo, hi| {
            if value >= lo && value <= hi {
                Ok(())
            } else {
                Err(EngineError::OutOfRange { name, value, lo, hi })
            }
        };
        check("entry_speed_fraction", self.entry_speed_fraction, 0.0, 1.0)?;
        check("proximity_factor", self.proximity_factor, 0.0, 1e3)?;
        check("lateral_clearance", self.lateral_clearance, 0.0, 1e3)?;
        check("wait_threshold", self.wait_threshold, 0.0, 1e3)?;
        if let Some(p) = self.pedestrians {
            check("pedestrian rate", p.rate_per_hour, 0.0, 1e6)?;
            check("pedestrian speed", p.speed, 1e-6, 100.0)?;
            check("pedestrian clearance", p.clearance, 0.0, 100.0)?;
        }
        Ok(())
    }
}

/// A vehicle waiting to enter the network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arrival {
    pub time: f64,
    pub class: usize,
    /// Path index.
    pub path: usize,
    /// Lateral preference in `[0, 1)`, mapped onto the entry link's strips.
    pub lateral: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct PedArrival {
    time: f64,
    link: usize,
    position: f64,
    reverse: bool,
}

#[derive(Debug, Clone)]
struct Pedestrian {
    id: u32,
    link: usize,
    position: f64,
    /// Lateral distance walked, m.
    offset: f64,
    reverse: bool,
    strip: usize,
}

#[derive(Debug, Clone)]
struct Vehicle {
    id: u32,
    class: usize,
    path: usize,
    leg: usize,
    link: usize,
    position: f64,
    prev_position: f64,
    strip: usize,
    span: usize,
    speed: f64,
    accel: f64,
    history: GhrHistory,
    distance: f64,
    spawn_time: f64,
    waiting: f64,
    link_entry: f64,
    link_waiting: f64,
    frozen: bool,
}

#[derive(Debug, Clone)]
struct ClassInfo {
    name: String,
    length: f64,
    span: usize,
    desired_speed: f64,
    gipps: GippsParams,
}

/// Run counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    pub generated: u64,
    pub exited: u64,
    /// New overlapping pairs observed by the audit.
    pub collisions: u64,
    /// Node-steps where the head arrival could not enter.
    pub blocked: u64,
    /// Negative Gipps discriminants and singular GHR triggers.
    pub numeric: u64,
    pub shifts: u64,
    pub transfers: u64,
    /// Vehicle-steps spent held at a link end.
    pub held: u64,
    pub ped_spawned: u64,
    pub ped_done: u64,
}

/// Vehicle state for display.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleView {
    pub id: u32,
    pub class: String,
    pub link_id: u32,
    pub position: f64,
    pub length: f64,
    pub strip: usize,
    pub span: usize,
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PedestrianView {
    pub id: u32,
    pub link_id: u32,
    pub position: f64,
    pub strip: usize,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub report: MetricsReport,
    pub counters: Counters,
    pub events: Vec<Event>,
    pub steps: u64,
}

#[derive(Debug, Clone, Copy)]
struct Leader {
    /// Front position in the subject link's coordinates.
    front: f64,
    length: f64,
    speed: f64,
}

impl Leader {
    fn rear(&self) -> f64 {
        self.front - self.length
    }
}

pub struct Simulation {
    network: Arc<RoadNetwork>,
    config: EngineConfig,
    horizon: f64,
    steps: u64,
    rng: SimRng,
    classes: Vec<ClassInfo>,
    vehicles: Vec<Option<Vehicle>>,
    active: usize,
    occupancy: StripOccupancy,
    /// Per generating node: node id, future arrivals, cursor, pending queue.
    sources: Vec<Source>,
    ped_arrivals: Vec<PedArrival>,
    ped_cursor: usize,
    ped_pending: VecDeque<PedArrival>,
    pedestrians: Vec<Pedestrian>,
    next_ped: u32,
    counters: Counters,
    events: Vec<Event>,
    link_metrics: Vec<LinkMetrics>,
    finished: Vec<VehicleRecord>,
    overlaps: BTreeSet<Overlap>,
}

struct Source {
    node: NodeId,
    arrivals: Vec<Arrival>,
    cursor: usize,
    pending: VecDeque<Arrival>,
}

impl Simulation {
    /// Build a run with Poisson arrivals at `demand.rate` per generating
    /// node. All arrival draws (times, classes, paths, lateral preferences,
    /// pedestrians) are made here, so they do not depend on the dynamics.
    pub fn new(
        network: Arc<RoadNetwork>,
        mix: &FleetMix,
        demand: &DemandProfile,
        config: EngineConfig,
        horizon: f64,
        seed: u64,
    ) -> Result<Self, EngineError> {
        let mut rng = SimRng::seed_from_u64(seed);
        let mut arrivals = Vec::new();
        for (_, paths) in network.generating_nodes() {
            for time in generate_arrivals(demand, horizon, &mut rng) {
                let class = mix.sample_class(&mut rng);
                let path = paths[rng.index(paths.len())];
                let lateral = rng.uniform();
                arrivals.push(Arrival {
                    time,
                    class,
                    path,
                    lateral,
                });
            }
        }
        Self::build(network, mix, config, horizon, rng, arrivals, |c| mix.class_probability(c) > 0.0)
    }

    /// Build a run from an explicit arrival list.
    pub fn with_arrivals(
        network: Arc<RoadNetwork>,
        mix: &FleetMix,
        config: EngineConfig,
        horizon: f64,
        seed: u64,
        arrivals: Vec<Arrival>,
    ) -> Result<Self, EngineError> {
        for a in &arrivals {
            if a.class >= mix.classes().len() || a.path >= network.paths().len() {
                return Err(EngineError::BadIndex(format!("arrival {a:?}")));
            }
        }
        let used: BTreeSet<usize> = arrivals.iter().map(|a| a.class).collect();
        let rng = SimRng::seed_from_u64(seed);
        Self::build(network, mix, config, horizon, rng, arrivals, |c| used.contains(&c))
    }

    fn build(
        network: Arc<RoadNetwork>,
        mix: &FleetMix,
        config: EngineConfig,
        horizon: f64,
        mut rng: SimRng,
        arrivals: Vec<Arrival>,
        used: impl Fn(usize) -> bool,
    ) -> Result<Self, EngineError> {
        config.validate()?;
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(EngineError::BadHorizon(horizon));
        }
        let ws = network.strip_width();
        let classes: Vec<ClassInfo> = mix
            .classes()
            .iter()
            .map(|c| ClassInfo {
                name: c.name.clone(),
                length: c.length,
                span: occupied_strips(c.width, ws),
                desired_speed: c.desired_speed(),
                gipps: GippsParams {
                    max_accel: c.max_accel,
                    desired_braking: c.desired_braking,
                    expected_leader_braking: c.expected_leader_braking,
                    reaction_time: config.tau,
                },
            })
            .collect();

        for (ci, c) in classes.iter().enumerate() {
            if !used(ci) {
                continue;
            }
            for (pi, p) in network.paths().iter().enumerate() {
                for &li in p {
                    let l = network.link(li);
                    if c.span > l.strips {
                        return Err(EngineError::TooWide {
                            class: c.name.clone(),
                            span: c.span,
                            link: l.link.id,
                            path: network.path_id(pi),
                            strips: l.strips,
                        });
                    }
                }
            }
        }

        let mut sources: Vec<Source> = network
            .generating_nodes()
            .into_iter()
            .map(|(node, _)| Source {
                node,
                arrivals: Vec::new(),
                cursor: 0,
                pending: VecDeque::new(),
            })
            .collect();
        for a in arrivals {
            let origin = network.link(network.paths()[a.path][0]).link.from;
            let s = sources
                .iter_mut()
                .find(|s| s.node == origin)
                .expect("every path origin is a generating node");
            s.arrivals.push(a);
        }
        for s in &mut sources {
            s.arrivals.sort_by(|a, b| a.time.total_cmp(&b.time));
        }

        let mut ped_arrivals = Vec::new();
        if let Some(p) = config.pedestrians {
            if p.rate_per_hour > 0.0 {
                let mu = 3600.0 / p.rate_per_hour;
                for (li, l) in network.links().iter().enumerate() {
                    let mut t = 0.0;
                    loop {
                        t += sample_headway(mu, rng.uniform_open0()).expect("mu > 0");
                        if t >= horizon {
                            break;
                        }
                        ped_arrivals.push(PedArrival {
                            time: t,
                            link: li,
                            position: rng.range(0.0, l.link.length),
                            reverse: rng.bernoulli(0.5),
                        });
                    }
                }
                ped_arrivals.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.link.cmp(&b.link)));
            }
        }

        let max_len = classes.iter().map(|c| c.length).fold(0.0, f64::max);
        let occupancy = StripOccupancy::new(network.links().iter().map(|l| l.strips), max_len);
        let n_links = network.links().len();
        Ok(Simulation {
            network,
            config,
            horizon,
            steps: 0,
            rng,
            classes,
            vehicles: Vec::new(),
            active: 0,
            occupancy,
            sources,
            ped_arrivals,
            ped_cursor: 0,
            ped_pending: VecDeque::new(),
            pedestrians: Vec::new(),
            next_ped: 0,
            counters: Counters::default(),
            events: Vec::new(),
            link_metrics: vec![LinkMetrics::default(); n_links],
            finished: Vec::new(),
            overlaps: BTreeSet::new(),
        })
    }

    pub fn clock(&self) -> f64 {
        self.steps as f64 * self.config.tau
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn is_done(&self) -> bool {
        self.clock() >= self.horizon - 1e-9
    }

    pub fn network(&self) -> &RoadNetwork {
        &self.network
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }

    pub fn active_count(&self) -> usize {
        self.active
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn occupancy(&self) -> &StripOccupancy {
        &self.occupancy
    }

    /// Pairs of vehicles sharing a strip with overlapping intervals.
    pub fn collision_audit(&self) -> Vec<Overlap> {
        self.occupancy.overlaps()
    }

    pub fn snapshot(&self) -> Vec<VehicleView> {
        self.vehicles
            .iter()
            .flatten()
            .map(|v| VehicleView {
                id: v.id,
                class: self.classes[v.class].name.clone(),
                link_id: self.network.link(v.link).link.id,
                position: v.position,
                length: self.classes[v.class].length,
                strip: v.strip,
                span: v.span,
                speed: v.speed,
            })
            .collect()
    }

    pub fn pedestrian_snapshot(&self) -> Vec<PedestrianView> {
        self.pedestrians
            .iter()
            .map(|p| PedestrianView {
                id: p.id,
                link_id: self.network.link(p.link).link.id,
                position: p.position,
                strip: p.strip,
            })
            .collect()
    }

    /// Put a vehicle directly on the first link of `path` with its front at
    /// `position`. A frozen vehicle never moves (a breakdown).
    pub fn place_vehicle(
        &mut self,
        class: usize,
        path: usize,
        position: f64,
        strip: usize,
        speed: f64,
        frozen: bool,
    ) -> Result<u32, EngineError> {
        let ci = self
            .classes
            .get(class)
            .ok_or_else(|| EngineError::BadIndex(format!("class {class}")))?;
        let link = *self
            .network
            .paths()
            .get(path)
            .and_then(|p| p.first())
            .ok_or_else(|| EngineError::BadIndex(format!("path {path}")))?;
        let nl = self.network.link(link);
        let (span, len) = (ci.span, ci.length);
        if strip + span > nl.strips || !(0.0..=nl.link.length).contains(&position) {
            return Err(EngineError::BadIndex(format!("placement {position} m strip {strip}")));
        }
        if !self.occupancy.is_free(link, strip, span, position - len, position, None) {
            return Err(EngineError::NoRoom(nl.link.id));
        }
        let id = self.add_vehicle(class, path, link, position, strip, speed.max(0.0), frozen);
        Ok(id)
    }

    #[allow(clippy::too_many_arguments)]
    fn add_vehicle(
        &mut self,
        class: usize,
        path: usize,
        link: usize,
        position: f64,
        strip: usize,
        speed: f64,
        frozen: bool,
    ) -> u32 {
        let id = self.vehicles.len() as u32;
        let c = &self.classes[class];
        let t = self.clock();
        let v = Vehicle {
            id,
            class,
            path,
            leg: 0,
            link,
            position,
            prev_position: position,
            strip,
            span: c.span,
            speed,
            accel: 0.0,
            history: GhrHistory::default(),
            distance: 0.0,
            spawn_time: t,
            waiting: 0.0,
            link_entry: t,
            link_waiting: 0.0,
            frozen,
        };
        self.occupancy.insert(
            link,
            strip,
            c.span,
            Interval {
                vehicle: id,
                rear: position - c.length,
                front: position,
            },
        );
        self.vehicles.push(Some(v));
        self.active += 1;
        self.counters.generated += 1;
        id
    }

    fn log(&mut self, e: Event) {
        if self.config.record_events {
            self.events.push(e);
        }
    }

    fn vehicle(&self, id: u32) -> &Vehicle {
        self.vehicles[id as usize].as_ref().expect("live vehicle")
    }

    fn vehicle_mut(&mut self, id: u32) -> &mut Vehicle {
        self.vehicles[id as usize].as_mut().expect("live vehicle")
    }

    fn ped_blocks(&self, link: usize, start: usize, span: usize, lo: f64, hi: f64) -> bool {
        let Some(pc) = self.config.pedestrians else {
            return false;
        };
        self.pedestrians.iter().any(|p| {
            p.link == link
                && p.strip >= start
                && p.strip < start + span
                && p.position - pc.clearance < hi - OVERLAP_TOL
                && p.position + pc.clearance > lo + OVERLAP_TOL
        })
    }

    fn span_free(&self, link: usize, start: usize, span: usize, lo: f64, hi: f64, exclude: Option<u32>) -> bool {
        self.occupancy.is_free(link, start, span, lo, hi, exclude) && !self.ped_blocks(link, start, span, lo, hi)
    }

    /// Free span nearest to `preferred`, left candidate first at equal
    /// distance.
    fn nearest_free(&self, link: usize, preferred: usize, span: usize, lo: f64, hi: f64) -> Option<usize> {
        let strips = self.network.link(link).strips;
        let max_start = strips.checked_sub(span)?;
        let p = preferred.min(max_start);
        for d in 0..=max_start {
            if d <= p && self.span_free(link, p - d, span, lo, hi, None) {
                return Some(p - d);
            }
            if d > 0 && p + d <= max_start && self.span_free(link, p + d, span, lo, hi, None) {
                return Some(p + d);
            }
        }
        None
    }

    /// Nearest pedestrian ahead of `front` on the given strips.
    fn ped_ahead(&self, link: usize, start: usize, span: usize, front: f64) -> Option<Leader> {
        let pc = self.config.pedestrians?;
        self.pedestrians
            .iter()
            .filter(|p| {
                p.link == link
                    && p.strip >= start
                    && p.strip < start + span
                    && p.position - pc.clearance >= front - OVERLAP_TOL
            })
            .map(|p| Leader {
                front: p.position + pc.clearance,
                length: 2.0 * pc.clearance,
                speed: 0.0,
            })
            .min_by(|a, b| a.rear().total_cmp(&b.rear()))
    }

    fn interval_leader(&self, e: Interval, offset: f64) -> Leader {
        Leader {
            front: offset + e.front,
            length: e.front - e.rear,
            speed: self.vehicle(e.vehicle).speed,
        }
    }

    fn nearer(a: Option<Leader>, b: Option<Leader>) -> Option<Leader> {
        match (a, b) {
            (Some(x), Some(y)) => Some(if y.rear() < x.rear() { y } else { x }),
            (x, None) => x,
            (None, y) => y,
        }
    }

    /// Leader on the same link within the given strips, vehicles or
    /// pedestrians.
    fn link_leader(&self, link: usize, start: usize, span: usize, front: f64, id: u32) -> Option<Leader> {
        let veh = self
            .occupancy
            .ahead(link, start, span, front, id)
            .map(|e| self.interval_leader(e, 0.0));
        Self::nearer(veh, self.ped_ahead(link, start, span, front))
    }

    /// Leader for car following: same link first, then the entry of the
    /// next link on the path in the corresponding strips.
    fn leader_of(&self, v: &Vehicle) -> Option<Leader> {
        if let Some(l) = self.link_leader(v.link, v.strip, v.span, v.position, v.id) {
            return Some(l);
        }
        let path = &self.network.paths()[v.path];
        let next = *path.get(v.leg + 1)?;
        let len = self.network.link(v.link).link.length;
        let strips = self.network.link(next).strips;
        let start = v.strip.min(strips.saturating_sub(v.span));
        let span = v.span.min(strips);
        let veh = self
            .occupancy
            .ahead(next, start, span, f64::NEG_INFINITY, u32::MAX)
            .map(|e| self.interval_leader(e, len));
        let ped = self.ped_ahead(next, start, span, f64::NEG_INFINITY).map(|mut p| {
            p.front += len;
            p
        });
        Self::nearer(veh, ped)
    }

    fn follow_state(&self, v: &Vehicle, leader: Option<Leader>) -> FollowState {
        let c = &self.classes[v.class];
        let (lp, ll, ls) = match leader {
            Some(l) => (l.front, l.length, l.speed),
            None => (v.position + FAR, 0.0, c.desired_speed),
        };
        FollowState {
            position: v.position,
            speed: v.speed,
            max_accel: c.gipps.max_accel,
            desired_speed: c.desired_speed,
            leader_position: lp,
            leader_speed: ls,
            leader_length: ll,
            tau: self.config.tau,
        }
    }

    fn driver(&self, v: &Vehicle) -> Driver {
        let c = &self.classes[v.class];
        Driver {
            speed: v.speed,
            desired_speed: c.desired_speed,
            gipps: c.gipps,
        }
    }

    fn side_view(&self, v: &Vehicle, side: Side) -> SideView {
        let strips = self.network.link(v.link).strips;
        let target = match side {
            Side::Left if v.strip > 0 => v.strip - 1,
            Side::Right if v.strip + v.span < strips => v.strip + 1,
            _ => return SideView::BLOCKED,
        };
        let len = self.classes[v.class].length;
        let rear = v.position - len;
        let c = self.config.lateral_clearance;
        let free = self.span_free(v.link, target, v.span, rear - c, v.position + c, Some(v.id));
        let lead = self
            .link_leader(v.link, target, v.span, v.position, v.id)
            .map(|l| Neighbor {
                gap: l.rear() - v.position,
                speed: l.speed,
            });
        let lag = self
            .occupancy
            .behind(v.link, target, v.span, v.position, v.id)
            .map(|e| Lag {
                gap: rear - e.front,
                driver: self.driver(self.vehicle(e.vehicle)),
            });
        SideView { free, lead, lag }
    }

    /// Advance one timestep.
    pub fn step(&mut self) -> Result<(), EngineError> {
        let t = self.clock();
        self.spawn_phase(t);
        if self.config.pedestrians.is_some() {
            self.pedestrian_phase(t);
        }
        let order = self.update_order();
        self.lateral_phase(t, &order);
        let speeds = self.speed_phase(t, &order);
        self.move_phase(&order, &speeds);
        self.transfer_phase(t, &order);
        self.steps += 1;

        if self.config.car_following == CarFollowingModel::Gipps || self.config.audit_every_step {
            self.audit(t);
        }
        if self.config.check_invariants {
            self.check_invariants()?;
        }
        Ok(())
    }

    /// Links ascending, then descending front position, then id.
    fn update_order(&self) -> Vec<u32> {
        let mut keys: Vec<(usize, f64, u32)> = self
            .vehicles
            .iter()
            .flatten()
            .map(|v| (v.link, v.position, v.id))
            .collect();
        keys.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.total_cmp(&a.1)).then(a.2.cmp(&b.2)));
        keys.into_iter().map(|k| k.2).collect()
    }

    fn spawn_phase(&mut self, t: f64) {
        let tau = self.config.tau;
        for si in 0..self.sources.len() {
            {
                let s = &mut self.sources[si];
                while s.cursor < s.arrivals.len() && s.arrivals[s.cursor].time < t + tau {
                    s.pending.push_back(s.arrivals[s.cursor]);
                    s.cursor += 1;
                }
            }
            while let Some(&a) = self.sources[si].pending.front() {
                let link = self.network.paths()[a.path][0];
                let c = &self.classes[a.class];
                let strips = self.network.link(link).strips;
                let preferred = (a.lateral * (strips - c.span + 1) as f64) as usize;
                let (span, len, vd) = (c.span, c.length, c.desired_speed);
                match self.nearest_free(link, preferred, span, -len, 0.0) {
                    Some(strip) => {
                        self.sources[si].pending.pop_front();
                        let speed = self.config.entry_speed_fraction * vd;
                        let id = self.add_vehicle(a.class, a.path, link, 0.0, strip, speed, false);
                        let e = Event::Spawn {
                            t,
                            vehicle: id,
                            class: self.classes[a.class].name.clone(),
                            path: self.network.path_id(a.path),
                            link: self.network.link(link).link.id,
                            strip,
                            span,
                        };
                        self.log(e);
                    }
                    None => {
                        self.counters.blocked += 1;
                        let e = Event::Blocked {
                            t,
                            node: self.sources[si].node,
                            pending: self.sources[si].pending.len(),
                        };
                        self.log(e);
                        break;
                    }
                }
            }
        }
    }

    fn ped_strip(strips: usize, offset: f64, ws: f64, reverse: bool) -> usize {
        let s = ((offset / ws) as usize).min(strips - 1);
        if reverse {
            strips - 1 - s
        } else {
            s
        }
    }

    fn ped_lane_free(&self, link: usize, strip: usize, position: f64) -> bool {
        let c = self.config.pedestrians.map(|p| p.clearance).unwrap_or(0.0);
        self.occupancy
            .is_free(link, strip, 1, position - c, position + c, None)
    }

    fn pedestrian_phase(&mut self, t: f64) {
        let pc = self.config.pedestrians.expect("pedestrian mode");
        let tau = self.config.tau;
        let ws = self.network.strip_width();

        // walk first, so a strip vacated this step can be entered next step
        let mut i = 0;
        while i < self.pedestrians.len() {
            let p = self.pedestrians[i].clone();
            let strips = self.network.link(p.link).strips;
            let offset = p.offset + pc.speed * tau;
            if offset >= strips as f64 * ws {
                self.pedestrians.remove(i);
                self.counters.ped_done += 1;
                let e = Event::PedDone {
                    t,
                    pedestrian: p.id,
                    link: self.network.link(p.link).link.id,
                };
                self.log(e);
                continue;
            }
            let to = Self::ped_strip(strips, offset, ws, p.reverse);
            let (lo, hi) = if to >= p.strip { (p.strip + 1, to) } else { (to, p.strip - 1) };
            let clear = (lo..=hi).all(|s| self.ped_lane_free(p.link, s, p.position));
            if lo > hi || clear {
                let q = &mut self.pedestrians[i];
                q.offset = offset;
                q.strip = to;
            }
            i += 1;
        }

        while self.ped_cursor < self.ped_arrivals.len() && self.ped_arrivals[self.ped_cursor].time < t + tau {
            self.ped_pending.push_back(self.ped_arrivals[self.ped_cursor]);
            self.ped_cursor += 1;
        }
        let mut waiting = VecDeque::new();
        while let Some(a) = self.ped_pending.pop_front() {
            let strips = self.network.link(a.link).strips;
            let strip = Self::ped_strip(strips, 0.0, ws, a.reverse);
            let occupied = self.pedestrians.iter().any(|p| {
                p.link == a.link && p.strip == strip && (p.position - a.position).abs() < 2.0 * pc.clearance
            });
            if occupied || !self.ped_lane_free(a.link, strip, a.position) {
                waiting.push_back(a);
                continue;
            }
            let id = self.next_ped;
            self.next_ped += 1;
            self.pedestrians.push(Pedestrian {
                id,
                link: a.link,
                position: a.position,
                offset: 0.0,
                reverse: a.reverse,
                strip,
            });
            self.counters.ped_spawned += 1;
            let e = Event::PedSpawn {
                t,
                pedestrian: id,
                link: self.network.link(a.link).link.id,
                position: a.position,
                strip,
            };
            self.log(e);
        }
        self.ped_pending = waiting;
    }

    fn lateral_phase(&mut self, t: f64, order: &[u32]) {
        let model = self.config.lane_changing;
        let ghr = self.config.ghr;
        let gap = self.config.gap;
        for &id in order {
            let v = self.vehicle(id);
            if v.frozen {
                continue;
            }
            let leader = self.leader_of(v);
            let state = self.follow_state(v, leader);
            let achievable = self.config.car_following.speed(&state, &self.classes[v.class].gipps).speed;
            let subject = self.driver(v);
            let lead = leader.map(|l| Neighbor {
                gap: l.rear() - v.position,
                speed: l.speed,
            });
            let mut ctx = LaneContext {
                subject,
                achievable_speed: achievable,
                leader: lead,
                proximity: self.config.proximity_factor * v.speed * self.config.tau,
                left: SideView::BLOCKED,
                right: SideView::BLOCKED,
                tau: self.config.tau,
            };
            let (decision, singular) = match model {
                LaneChangingModel::Straightforward | LaneChangingModel::Gipps => {
                    if !desire_to_change(&ctx) {
                        (Decision::Stay, false)
                    } else {
                        ctx.left = self.side_view(v, Side::Left);
                        ctx.right = self.side_view(v, Side::Right);
                        let d = if model == LaneChangingModel::Straightforward {
                            straightforward_change(&ctx)
                        } else {
                            gipps_change(&ctx, &gap, &mut self.rng)
                        };
                        (d, false)
                    }
                }
                LaneChangingModel::Ghr => {
                    let entry = lead.map(|l| (l.speed - v.speed, l.gap));
                    let mut history = v.history.clone();
                    history.push(entry, ghr.lag_steps);
                    let wants = match history.lagged(ghr.lag_steps) {
                        Some(Some((dv, dx))) => {
                            ghr_acceleration(v.speed, dv, dx, &ghr).map_or(true, |a| a < 0.0)
                        }
                        _ => false,
                    };
                    if wants {
                        ctx.left = self.side_view(v, Side::Left);
                        ctx.right = self.side_view(v, Side::Right);
                    }
                    let out = if wants {
                        ghr_change(&ctx, &history, &ghr, &gap, &mut self.rng)
                    } else {
                        crate::lanechange::GhrOutcome {
                            decision: Decision::Stay,
                            singular: None,
                        }
                    };
                    self.vehicle_mut(id).history = history;
                    (out.decision, out.singular.is_some())
                }
            };
            if singular {
                self.counters.numeric += 1;
                self.log(Event::Numeric {
                    t,
                    vehicle: id,
                    kind: "ghr_singular",
                });
            }
            if let Decision::Shift(side) = decision {
                self.apply_shift(t, id, side);
            }
        }
    }

    /// Move a vehicle's span one strip sideways if the target is still
    /// free. Returns whether it moved.
    fn apply_shift(&mut self, t: f64, id: u32, side: Side) -> bool {
        let v = self.vehicle(id);
        let strips = self.network.link(v.link).strips;
        let target = match side {
            Side::Left if v.strip > 0 => v.strip - 1,
            Side::Right if v.strip + v.span < strips => v.strip + 1,
            _ => return false,
        };
        let len = self.classes[v.class].length;
        let (link, from, span, pos) = (v.link, v.strip, v.span, v.position);
        if !self.span_free(link, target, span, pos - len, pos, Some(id)) {
            return false;
        }
        self.occupancy.remove(link, from, span, id);
        self.occupancy.insert(
            link,
            target,
            span,
            Interval {
                vehicle: id,
                rear: pos - len,
                front: pos,
            },
        );
        self.vehicle_mut(id).strip = target;
        self.counters.shifts += 1;
        let e = Event::Shift {
            t,
            vehicle: id,
            link: self.network.link(link).link.id,
            from,
            to: target,
        };
        self.log(e);
        true
    }

    /// New speeds from start-of-step positions.
    fn speed_phase(&mut self, t: f64, order: &[u32]) -> Vec<f64> {
        let mut out = Vec::with_capacity(order.len());
        let mut numeric = Vec::new();
        for &id in order {
            let v = self.vehicle(id);
            if v.frozen {
                out.push(0.0);
                continue;
            }
            let leader = self.leader_of(v);
            let state = self.follow_state(v, leader);
            let s = self.config.car_following.speed(&state, &self.classes[v.class].gipps);
            if s.negative_discriminant {
                numeric.push(id);
            }
            out.push(s.speed);
        }
        for id in numeric {
            self.counters.numeric += 1;
            self.log(Event::Numeric {
                t,
                vehicle: id,
                kind: "gipps_discriminant",
            });
        }
        out
    }

    fn move_phase(&mut self, order: &[u32], speeds: &[f64]) {
        let tau = self.config.tau;
        let thr = self.config.wait_threshold;
        for (&id, &speed) in order.iter().zip(speeds) {
            let len = self.network.link(self.vehicle(id).link).link.length;
            let a_max = self.classes[self.vehicle(id).class].gipps.max_accel;
            let v = self.vehicle_mut(id);
            let old = v.position;
            let new = old + speed * tau;
            v.prev_position = old;
            v.accel = if speed > v.speed { a_max } else { (speed - v.speed) / tau };
            v.speed = speed;
            v.position = new;
            v.distance += new - old;
            let link = v.link;
            if new < len && speed < thr {
                v.waiting += tau;
                v.link_waiting += tau;
            }
            if old < len / 2.0 && len / 2.0 <= new {
                self.link_metrics[link].midpoint_count += 1;
            }
        }
        let vehicles = &self.vehicles;
        let classes = &self.classes;
        self.occupancy.refresh(|id| {
            let v = vehicles[id as usize].as_ref().expect("live vehicle");
            (v.position - classes[v.class].length, v.position)
        });
    }

    fn transfer_phase(&mut self, t: f64, order: &[u32]) {
        let mut due: Vec<(usize, f64, u32)> = order
            .iter()
            .map(|&id| self.vehicle(id))
            .filter(|v| v.position >= self.network.link(v.link).link.length)
            .map(|v| (v.link, v.position, v.id))
            .collect();
        due.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.total_cmp(&a.1)).then(a.2.cmp(&b.2)));
        for (_, _, id) in due {
            self.resolve_link_end(t, id);
        }
    }

    /// Transfer, retire or hold a vehicle whose front passed its link end.
    fn resolve_link_end(&mut self, t: f64, id: u32) {
        let tau = self.config.tau;
        let thr = self.config.wait_threshold;
        loop {
            let v = self.vehicle(id).clone();
            let link_len = self.network.link(v.link).link.length;
            if v.position < link_len {
                return;
            }
            let moved = v.position - v.prev_position;
            let t_cross = if moved > 0.0 {
                t + tau * ((link_len - v.prev_position) / moved).clamp(0.0, 1.0)
            } else {
                t + tau
            };
            let c = &self.classes[v.class];
            let (len, span) = (c.length, c.span);
            let path = &self.network.paths()[v.path];
            let next = path.get(v.leg + 1).copied();
            let over = v.position - link_len;

            let target = next.and_then(|n| {
                let strips = self.network.link(n).strips;
                let pref = v.strip.min(strips - span);
                self.nearest_free(n, pref, span, over - len, over).map(|s| (n, s))
            });

            if next.is_some() && target.is_none() {
                // hold at the link end
                let vm = self.vehicle_mut(id);
                vm.distance -= over;
                vm.position = link_len;
                vm.accel = (0.0 - vm.speed) / tau;
                vm.speed = 0.0;
                if link_len - vm.prev_position < thr * tau {
                    vm.waiting += tau;
                    vm.link_waiting += tau;
                }
                self.occupancy.remove(v.link, v.strip, span, id);
                self.occupancy.insert(
                    v.link,
                    v.strip,
                    span,
                    Interval {
                        vehicle: id,
                        rear: link_len - len,
                        front: link_len,
                    },
                );
                self.counters.held += 1;
                return;
            }

            if moved < thr * tau {
                let vm = self.vehicle_mut(id);
                vm.waiting += tau;
                vm.link_waiting += tau;
            }
            let v = self.vehicle(id).clone();
            let time_to_cross = t_cross - v.link_entry;
            if time_to_cross > 0.0 {
                self.link_metrics[v.link].crossings.push(Crossing {
                    vehicle: id,
                    time_to_cross,
                    waiting: v.link_waiting,
                });
            }
            self.occupancy.remove(v.link, v.strip, span, id);
            let from_id = self.network.link(v.link).link.id;

            match target {
                None => {
                    self.vehicles[id as usize] = None;
                    self.active -= 1;
                    self.counters.exited += 1;
                    let travel_time = t_cross - v.spawn_time;
                    let distance = v.distance - over;
                    self.finished.push(VehicleRecord {
                        vehicle: id,
                        class: v.class,
                        distance,
                        travel_time,
                        waiting: v.waiting,
                        completed: true,
                    });
                    self.log(Event::Exit {
                        t,
                        vehicle: id,
                        link: from_id,
                        travel_time,
                        distance,
                    });
                    return;
                }
                Some((n, strip)) => {
                    self.occupancy.insert(
                        n,
                        strip,
                        span,
                        Interval {
                            vehicle: id,
                            rear: over - len,
                            front: over,
                        },
                    );
                    let vm = self.vehicle_mut(id);
                    vm.link = n;
                    vm.leg += 1;
                    vm.strip = strip;
                    vm.position = over;
                    vm.prev_position -= link_len;
                    vm.link_entry = t_cross;
                    vm.link_waiting = 0.0;
                    // leader history belongs to the old link
                    vm.history = GhrHistory::default();
                    self.counters.transfers += 1;
                    let e = Event::Transfer {
                        t,
                        vehicle: id,
                        from: from_id,
                        to: self.network.link(n).link.id,
                        position: over,
                        strip,
                    };
                    self.log(e);
                }
            }
        }
    }

    fn audit(&mut self, t: f64) {
        let now: BTreeSet<Overlap> = self.occupancy.overlaps().into_iter().collect();
        let fresh: Vec<Overlap> = now.difference(&self.overlaps).copied().collect();
        for o in fresh {
            self.counters.collisions += 1;
            let e = Event::Collision {
                t,
                a: o.a,
                b: o.b,
                link: self.network.link(o.link).link.id,
            };
            self.log(e);
        }
        self.overlaps = now;
    }

    /// Conservation, span and position bounds, and occupancy coherence
    /// against a from-scratch rebuild.
    pub fn check_invariants(&self) -> Result<(), EngineError> {
        let t = self.clock();
        let fail = |msg: String| Err(EngineError::Desync { t, msg });
        let c = &self.counters;
        let live = self.vehicles.iter().flatten().count();
        if live != self.active || c.generated != self.active as u64 + c.exited {
            return fail(format!(
                "generated {} != active {} (+ {} live) + exited {}",
                c.generated, self.active, live, c.exited
            ));
        }
        let max_len = self.classes.iter().map(|c| c.length).fold(0.0, f64::max);
        let mut rebuilt = StripOccupancy::new(self.network.links().iter().map(|l| l.strips), max_len);
        for v in self.vehicles.iter().flatten() {
            let l = self.network.link(v.link);
            let ci = &self.classes[v.class];
            if v.span != ci.span || v.strip + v.span > l.strips {
                return fail(format!("vehicle {} span {}+{} on {} strips", v.id, v.strip, v.span, l.strips));
            }
            if !(v.position >= 0.0 && v.position <= l.link.length) {
                return fail(format!("vehicle {} at {} on link {}", v.id, v.position, l.link.id));
            }
            rebuilt.insert(
                v.link,
                v.strip,
                v.span,
                Interval {
                    vehicle: v.id,
                    rear: v.position - ci.length,
                    front: v.position,
                },
            );
        }
        if rebuilt != self.occupancy {
            return fail("incremental strip occupancy differs from rebuild".into());
        }
        Ok(())
    }

    /// Run to the horizon and produce the report.
    pub fn run(mut self) -> Result<RunResult, EngineError> {
        while !self.is_done() {
            self.step()?;
        }
        Ok(self.finish())
    }

    /// Close the books at the current clock: vehicles still driving
    /// contribute their elapsed distance and time.
    pub fn finish(self) -> RunResult {
        let t = self.clock();
        let mut records = self.finished;
        for v in self.vehicles.iter().flatten() {
            records.push(VehicleRecord {
                vehicle: v.id,
                class: v.class,
                distance: v.distance,
                travel_time: t - v.spawn_time,
                waiting: v.waiting,
                completed: false,
            });
        }
        records.sort_by_key(|r| r.vehicle);
        let report = MetricsReport::build(
            &self.network,
            &self.link_metrics,
            records,
            t.max(f64::MIN_POSITIVE),
            self.config.include_active,
        );
        RunResult {
            report,
            counters: self.counters,
            events: self.events,
            steps: self.steps,
        }
    }
}

#[cfg(test)]
mod tests;
