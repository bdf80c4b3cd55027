//! Browser bindings: strip layouts, the gap-acceptance curve and a small
//! lane vs. non-lane comparison on the bundled dhaka corridor.
//!
//! Everything returns a JSON string so the same functions can be tested
//! natively.

// `!(x > 0.0)` rejects NaN along with the bad range.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::sync::Arc;

use serde::Serialize;
use wasm_bindgen::prelude::*;

use roadbird::engine::{EngineConfig, PedestrianConfig, Simulation};
use roadbird::fleet::{default_classes, occupied_strips, DemandLevel, DemandProfile, FleetMix};
use roadbird::lanechange::{gap_probability, gap_time, joint_gap_probability, GapAcceptanceParams};
use roadbird::network::{build_network, strip_count};
use roadbird::topologies;

fn json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct ClassFit {
    name: String,
    width: f64,
    strips: usize,
    fits: bool,
}

#[derive(Serialize)]
struct Layout {
    strips: usize,
    unused_width: f64,
    classes: Vec<ClassFit>,
}

/// How a road of `link_width` splits into strips and how many strips each
/// default vehicle class covers.
#[wasm_bindgen]
pub fn strip_layout(link_width: f64, strip_width: f64) -> Result<String, String> {
    let strips = strip_count(link_width, strip_width).map_err(|e| e.to_string())?;
    let classes = default_classes()
        .into_iter()
        .map(|c| {
            let n = occupied_strips(c.width, strip_width);
            ClassFit {
                name: c.name,
                width: c.width,
                strips: n,
                fits: n <= strips,
            }
        })
        .collect();
    json(&Layout {
        strips,
        unused_width: link_width - strips as f64 * strip_width,
        classes,
    })
}

#[derive(Serialize)]
struct CurvePoint {
    gap_m: f64,
    gap_s: f64,
    p_gap: f64,
    /// Lead and lag gap both this size.
    p_joint: f64,
}

/// Acceptance probability against gap size for a driver at `speed` m/s.
#[wasm_bindgen]
pub fn gap_curve(lambda: f64, critical_gap: f64, speed: f64, max_gap_m: f64, points: u32) -> Result<String, String> {
    let p = GapAcceptanceParams::new(lambda, critical_gap).map_err(|e| e.to_string())?;
    if !(max_gap_m > 0.0) || !(2..=10_000).contains(&points) {
        return Err("need max_gap_m > 0 and 2..=10000 points".into());
    }
    if !(speed >= 0.0) {
        return Err(format!("speed must be non-negative, got {speed}"));
    }
    let curve: Vec<CurvePoint> = (0..points)
        .map(|i| {
            let g = max_gap_m * i as f64 / (points - 1) as f64;
            let t = gap_time(g, speed);
            let pg = gap_probability(t, &p);
            CurvePoint {
                gap_m: g,
                gap_s: t,
                p_gap: pg,
                p_joint: joint_gap_probability(pg, pg),
            }
        })
        .collect();
    json(&curve)
}

#[derive(Serialize)]
struct Car {
    class: String,
    position: f64,
    length: f64,
    strip: usize,
    span: usize,
}

#[derive(Serialize)]
struct WidthRun {
    strip_width: f64,
    avg_link_speed_kmh: Option<f64>,
    avg_link_wait_s: Option<f64>,
    avg_vehicle_speed_kmh: Option<f64>,
    generated: u64,
    exited: u64,
    /// One arterial link at the end of the run.
    link_id: u32,
    link_length: f64,
    strips: usize,
    vehicles: Vec<Car>,
}

/// Link id drawn by the page: first arterial segment.
const SHOWN_LINK: u32 = 9;

/// The same arrivals on 0.5 m and 2.5 m strips.
#[wasm_bindgen]
pub fn compare_widths(demand: u8, seed: u32, duration: f64, pedestrians: bool) -> Result<String, String> {
    let level = DemandLevel::from_code(&demand.to_string()).map_err(|e| e.to_string())?;
    if !(duration > 0.0 && duration <= 1800.0) {
        return Err(format!("duration must be in (0, 1800] s, got {duration}"));
    }
    let rate = [100.0, 400.0, 800.0][level.code() as usize];
    let demand = DemandProfile::new(level, rate).map_err(|e| e.to_string())?;
    let mix = FleetMix::dhaka();
    let cfg = EngineConfig {
        record_events: false,
        pedestrians: pedestrians.then(PedestrianConfig::default),
        ..EngineConfig::default()
    };
    let mut runs = Vec::new();
    for w in [0.5, 2.5] {
        let net = Arc::new(build_network(topologies::dhaka(), w).map_err(|e| e.to_string())?);
        let mut sim = Simulation::new(net.clone(), &mix, &demand, cfg.clone(), duration, seed as u64)
            .map_err(|e| e.to_string())?;
        while !sim.is_done() {
            sim.step().map_err(|e| e.to_string())?;
        }
        let link = &net.links()[net.link_idx(SHOWN_LINK).ok_or("corridor link missing")?];
        let vehicles = sim
            .snapshot()
            .into_iter()
            .filter(|v| v.link_id == SHOWN_LINK)
            .map(|v| Car {
                class: v.class,
                position: v.position,
                length: v.length,
                strip: v.strip,
                span: v.span,
            })
            .collect();
        let r = sim.finish();
        runs.push(WidthRun {
            strip_width: w,
            avg_link_speed_kmh: r.report.summary.avg_link_speed_kmh,
            avg_link_wait_s: r.report.summary.avg_link_wait_s,
            avg_vehicle_speed_kmh: r.report.summary.avg_vehicle_speed_kmh,
            generated: r.counters.generated,
            exited: r.counters.exited,
            link_id: SHOWN_LINK,
            link_length: link.link.length,
            strips: link.strips,
            vehicles,
        });
    }
    json(&runs)
}
