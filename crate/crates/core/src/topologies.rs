//! Bundled synthetic topologies in the plain-text network format.
//!
//! - `dhaka`: narrow 3.5 km arterial (4 m) with 8 intersections, a 3 m
//!   side street feeding each one and three exits; 8 generating nodes and
//!   18 links.
//! - `miami`: medium grid of 7.5 m links, 4 generating nodes.
//! - `riyadh`: wide 10.5 m arterials with 900 m links, 4 generating nodes.

use crate::network::{parse_topology, NetworkError, TopologyParts};

pub const NAMES: [&str; 3] = ["dhaka", "miami", "riyadh"];

macro_rules! bundled {
    ($dir:literal) => {
        (
            include_str!(concat!("../topologies/", $dir, "/node.txt")),
            include_str!(concat!("../topologies/", $dir, "/link.txt")),
            include_str!(concat!("../topologies/", $dir, "/path.txt")),
        )
    };
}

/// Raw `(node, link, path)` texts of a bundled topology.
pub fn texts(name: &str) -> Option<(&'static str, &'static str, &'static str)> {
    match name {
        "dhaka" => Some(bundled!("dhaka")),
        "miami" => Some(bundled!("miami")),
        "riyadh" => Some(bundled!("riyadh")),
        _ => None,
    }
}

/// Parse a bundled topology. Panics only if the bundled files are broken,
/// which the tests rule out.
pub fn bundled(name: &str) -> Option<TopologyParts> {
    let (n, l, p) = texts(name)?;
    Some(parse_topology(n, l, p).expect("bundled topology parses"))
}

pub fn dhaka() -> TopologyParts {
    bundled("dhaka").expect("dhaka is bundled")
}

/// Parse a bundled topology by name, returning a parse error unchanged.
pub fn try_bundled(name: &str) -> Option<Result<TopologyParts, NetworkError>> {
    texts(name).map(|(n, l, p)| parse_topology(n, l, p))
}
