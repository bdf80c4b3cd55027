//! Link and vehicle performance metrics: average link speed, average
//! waiting time, midpoint flow rate, and average vehicle speed.

use crate::network::{LinkId, RoadNetwork};

/// m/s to km/h.
pub const KMH: f64 = 3.6;

/// One vehicle leaving a link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crossing {
    pub vehicle: u32,
    /// s, > 0
    pub time_to_cross: f64,
    /// s spent without movement while on the link
    pub waiting: f64,
}

/// Per-link accumulators.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinkMetrics {
    pub crossings: Vec<Crossing>,
    pub midpoint_count: u64,
}

/// Distance and time of one vehicle, finished or still driving at the
/// horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleRecord {
    pub vehicle: u32,
    pub class: usize,
    /// m
    pub distance: f64,
    /// s
    pub travel_time: f64,
    /// s
    pub waiting: f64,
    pub completed: bool,
}

/// Mean of `length / time_to_cross` over crossings, km/h. `None` without
/// crossings.
pub fn avg_link_speed(length: f64, crossings: &[Crossing]) -> Option<f64> {
    if crossings.is_empty() {
        return None;
    }
    let sum: f64 = crossings.iter().map(|c| length / c.time_to_cross).sum();
    Some(sum / crossings.len() as f64 * KMH)
}

/// Mean waiting time of vehicles that left the link, s.
pub fn avg_link_waiting(crossings: &[Crossing]) -> Option<f64> {
    if crossings.is_empty() {
        return None;
    }
    Some(crossings.iter().map(|c| c.waiting).sum::<f64>() / crossings.len() as f64)
}

/// Midpoint crossings per hour.
pub fn link_flow_rate(midpoint_count: u64, horizon: f64) -> f64 {
    debug_assert!(horizon > 0.0);
    midpoint_count as f64 * 3600.0 / horizon
}

/// Mean of per-vehicle `distance / time`, km/h. Vehicles still driving are
/// included only when `include_active`; records with zero elapsed time are
/// skipped.
pub fn avg_vehicle_speed(records: &[VehicleRecord], include_active: bool) -> Option<f64> {
    let speeds: Vec<f64> = records
        .iter()
        .filter(|r| (r.completed || include_active) && r.travel_time > 0.0)
        .map(|r| r.distance / r.travel_time)
        .collect();
    if speeds.is_empty() {
        return None;
    }
    Some(speeds.iter().sum::<f64>() / speeds.len() as f64 * KMH)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkRow {
    pub link_id: LinkId,
    pub avg_speed_kmh: Option<f64>,
    pub avg_wait_s: Option<f64>,
    pub flow_vph: f64,
    pub n_crossings: usize,
}

/// Network-wide figures for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    /// Mean over links with at least one crossing.
    pub avg_link_speed_kmh: Option<f64>,
    pub avg_link_wait_s: Option<f64>,
    /// Mean over all links.
    pub avg_flow_vph: f64,
    pub avg_vehicle_speed_kmh: Option<f64>,
    pub links_with_crossings: usize,
    pub vehicles_counted: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub horizon: f64,
    pub links: Vec<LinkRow>,
    pub vehicles: Vec<VehicleRecord>,
    pub summary: Summary,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (n, s) = xs.fold((0usize, 0.0), |(n, s), x| (n + 1, s + x));
    (n > 0).then(|| s / n as f64)
}

impl MetricsReport {
    pub fn build(
        network: &RoadNetwork,
        links: &[LinkMetrics],
        vehicles: Vec<VehicleRecord>,
        horizon: f64,
        include_active: bool,
    ) -> Self {
        let rows: Vec<LinkRow> = network
            .links()
            .iter()
            .zip(links)
            .map(|(nl, m)| LinkRow {
                link_id: nl.link.id,
                avg_speed_kmh: avg_link_speed(nl.link.length, &m.crossings),
                avg_wait_s: avg_link_waiting(&m.crossings),
                flow_vph: link_flow_rate(m.midpoint_count, horizon),
                n_crossings: m.crossings.len(),
            })
            .collect();
        let summary = Summary {
            avg_link_speed_kmh: mean(rows.iter().filter_map(|r| r.avg_speed_kmh)),
            avg_link_wait_s: mean(rows.iter().filter_map(|r| r.avg_wait_s)),
            avg_flow_vph: mean(rows.iter().map(|r| r.flow_vph)).unwrap_or(0.0),
            avg_vehicle_speed_kmh: avg_vehicle_speed(&vehicles, include_active),
            links_with_crossings: rows.iter().filter(|r| r.n_crossings > 0).count(),
            vehicles_counted: vehicles
                .iter()
                .filter(|r| (r.completed || include_active) && r.travel_time > 0.0)
                .count(),
        };
        MetricsReport {
            horizon,
            links: rows,
            vehicles,
            summary,
        }
    }
}
