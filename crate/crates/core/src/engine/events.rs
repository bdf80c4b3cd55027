//! Line-oriented event log.
//!
//! Every record is `<t> <EVENT> <fields...>`, space separated:
//!
//! ```text
//! <t> SPAWN     <vehicle> <class> <path> <link> <strip> <span>
//! <t> SHIFT     <vehicle> <link> <from_strip> <to_strip>
//! <t> TRANSFER  <vehicle> <from_link> <to_link> <position> <strip>
//! <t> EXIT      <vehicle> <link> <travel_time> <distance>
//! <t> COLLISION <vehicle_a> <vehicle_b> <link>
//! <t> BLOCKED   <node> <pending>
//! <t> PED_SPAWN <pedestrian> <link> <position> <strip>
//! <t> PED_DONE  <pedestrian> <link>
//! <t> NUMERIC   <vehicle> <kind>
//! ```
//!
//! Times are simulation seconds at the start of the step; link, node and
//! path fields are topology ids; positions and distances have three
//! decimals.

use std::fmt;

use crate::network::{LinkId, NodeId, PathId};

#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    Spawn {
        t: f64,
        vehicle: u32,
        class: String,
        path: PathId,
        link: LinkId,
        strip: usize,
        span: usize,
    },
    Shift {
        t: f64,
        vehicle: u32,
        link: LinkId,
        from: usize,
        to: usize,
    },
    Transfer {
        t: f64,
        vehicle: u32,
        from: LinkId,
        to: LinkId,
        position: f64,
        strip: usize,
    },
    Exit {
        t: f64,
        vehicle: u32,
        link: LinkId,
        travel_time: f64,
        distance: f64,
    },
    Collision {
        t: f64,
        a: u32,
        b: u32,
        link: LinkId,
    },
    Blocked {
        t: f64,
        node: NodeId,
        pending: usize,
    },
    PedSpawn {
        t: f64,
        pedestrian: u32,
        link: LinkId,
        position: f64,
        strip: usize,
    },
    PedDone {
        t: f64,
        pedestrian: u32,
        link: LinkId,
    },
    Numeric {
        t: f64,
        vehicle: u32,
        kind: &'static str,
    },
}

impl Event {
    pub fn time(&self) -> f64 {
        match *self {
            Event::Spawn { t, .. }
            | Event::Shift { t, .. }
            | Event::Transfer { t, .. }
            | Event::Exit { t, .. }
            | Event::Collision { t, .. }
            | Event::Blocked { t, .. }
            | Event::PedSpawn { t, .. }
            | Event::PedDone { t, .. }
            | Event::Numeric { t, .. } => t,
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Event::Spawn { .. } => "SPAWN",
            Event::Shift { .. } => "SHIFT",
            Event::Transfer { .. } => "TRANSFER",
            Event::Exit { .. } => "EXIT",
            Event::Collision { .. } => "COLLISION",
            Event::Blocked { .. } => "BLOCKED",
            Event::PedSpawn { .. } => "PED_SPAWN",
            Event::PedDone { .. } => "PED_DONE",
            Event::Numeric { .. } => "NUMERIC",
        }
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.time(), self.tag())?;
        match self {
            Event::Spawn {
                vehicle,
                class,
                path,
                link,
                strip,
                span,
                ..
            } => write!(f, " {vehicle} {class} {path} {link} {strip} {span}"),
            Event::Shift {
                vehicle,
                link,
                from,
                to,
                ..
            } => write!(f, " {vehicle} {link} {from} {to}"),
            Event::Transfer {
                vehicle,
                from,
                to,
                position,
                strip,
                ..
            } => write!(f, " {vehicle} {from} {to} {position:.3} {strip}"),
            Event::Exit {
                vehicle,
                link,
                travel_time,
                distance,
                ..
            } => write!(f, " {vehicle} {link} {travel_time} {distance:.3}"),
            Event::Collision { a, b, link, .. } => write!(f, " {a} {b} {link}"),
            Event::Blocked { node, pending, .. } => write!(f, " {node} {pending}"),
            Event::PedSpawn {
                pedestrian,
                link,
                position,
                strip,
                ..
            } => write!(f, " {pedestrian} {link} {position:.3} {strip}"),
            Event::PedDone { pedestrian, link, .. } => write!(f, " {pedestrian} {link}"),
            Event::Numeric { vehicle, kind, .. } => write!(f, " {vehicle} {kind}"),
        }
    }
}

/// Render a log, one event per line.
pub fn render(events: &[Event]) -> String {
    use std::fmt::Write as _;
    let mut s = String::with_capacity(events.len() * 32);
    for e in events {
        let _ = writeln!(s, "{e}");
    }
    s
}
