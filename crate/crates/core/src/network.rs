//! Road topology: nodes, directed links, routed paths, and the strip
//! discretization of each link.
//!
//! Topologies are read from three whitespace-separated text files:
//!
//! ```text
//! node.txt   <id> <x> <y>
//! link.txt   <id> <from> <to> <length> <width>
//! path.txt   <id> <link_id> <link_id> ...
//! ```
//!
//! Lines starting with `#` and blank lines are ignored. Links are directed;
//! a two-way street is two links.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path as FsPath;

use thiserror::Error;

pub type NodeId = u32;
pub type LinkId = u32;
pub type PathId = u32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("{file}:{line}: {msg}")]
    Malformed {
        file: &'static str,
        line: usize,
        msg: String,
    },
    #[error("{file}:{line}: duplicate id {id}")]
    DuplicateId {
        file: &'static str,
        line: usize,
        id: u32,
    },
    #[error("link {link}: unknown node {node}")]
    DanglingNode { link: LinkId, node: NodeId },
    #[error("path {path}: unknown link {link}")]
    DanglingLink { path: PathId, link: LinkId },
    #[error("link {0}: from and to node are the same")]
    SelfLoop(LinkId),
    #[error("link {link}: {what} must be positive, got {value}")]
    NonPositive {
        link: LinkId,
        what: &'static str,
        value: f64,
    },
    #[error("path {path}: discontinuous path between links {from} and {to}")]
    DiscontinuousPath {
        path: PathId,
        from: LinkId,
        to: LinkId,
    },
    #[error("path {0}: no links")]
    EmptyPath(PathId),
    #[error("strip width must be positive, got {0}")]
    BadStripWidth(f64),
    #[error("link of width {link_width} m holds zero strips of width {strip_width} m")]
    ZeroStrips { link_width: f64, strip_width: f64 },
    #[error("link {link}: {source}")]
    LinkStrips {
        link: LinkId,
        #[source]
        source: Box<NetworkError>,
    },
    #[error("reading {path}: {msg}")]
    Io { path: String, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Link {
    pub id: LinkId,
    pub from: NodeId,
    pub to: NodeId,
    /// Meters.
    pub length: f64,
    /// Drivable width in meters.
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub id: PathId,
    pub links: Vec<LinkId>,
}

/// Validated topology before strip discretization.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TopologyParts {
    pub nodes: Vec<Node>,
    pub links: Vec<Link>,
    pub paths: Vec<Path>,
    /// Non-fatal findings, e.g. an empty path file.
    pub warnings: Vec<String>,
}

/// Number of strips of `strip_width` that fit across `link_width`.
///
/// Residual width is unusable. A link narrower than one strip is a
/// configuration error.
pub fn strip_count(link_width: f64, strip_width: f64) -> Result<usize, NetworkError> {
    if !(strip_width > 0.0) || !strip_width.is_finite() {
        return Err(NetworkError::BadStripWidth(strip_width));
    }
    // Guard against 7.5 / 2.5 = 2.9999999999999996 style round-off.
    let ratio = link_width / strip_width;
    let n = (ratio + 1e-9).floor();
    if n < 1.0 {
        return Err(NetworkError::ZeroStrips {
            link_width,
            strip_width,
        });
    }
    Ok(n as usize)
}

struct Lines<'a> {
    file: &'static str,
    text: &'a str,
}

impl<'a> Lines<'a> {
    fn records(&self) -> impl Iterator<Item = (usize, Vec<&'a str>)> + 'a {
        self.text.lines().enumerate().filter_map(|(i, raw)| {
            let line = raw.trim_end_matches('\r').trim();
            if line.is_empty() || line.starts_with('#') {
                None
            } else {
                Some((i + 1, line.split_whitespace().collect()))
            }
        })
    }

    fn err(&self, line: usize, msg: impl Into<String>) -> NetworkError {
        NetworkError::Malformed {
            file: self.file,
            line,
            msg: msg.into(),
        }
    }

    fn int(&self, line: usize, tok: &str, what: &str) -> Result<u32, NetworkError> {
        tok.parse()
            .map_err(|_| self.err(line, format!("bad {what} '{tok}'")))
    }

    fn float(&self, line: usize, tok: &str, what: &str) -> Result<f64, NetworkError> {
        let v: f64 = tok
            .parse()
            .map_err(|_| self.err(line, format!("bad {what} '{tok}'")))?;
        if !v.is_finite() {
            return Err(self.err(line, format!("{what} is not finite")));
        }
        Ok(v)
    }
}

/// Parse and cross-validate the three topology files.
pub fn parse_topology(
    node_text: &str,
    link_text: &str,
    path_text: &str,
) -> Result<TopologyParts, NetworkError> {
    let mut nodes = BTreeMap::new();
    let nl = Lines {
        file: "node.txt",
        text: node_text,
    };
    for (line, toks) in nl.records() {
        if toks.len() != 3 {
            return Err(nl.err(line, format!("expected 3 fields, got {}", toks.len())));
        }
        let id = nl.int(line, toks[0], "node id")?;
        let x = nl.float(line, toks[1], "x")?;
        let y = nl.float(line, toks[2], "y")?;
        if nodes.insert(id, Node { id, x, y }).is_some() {
            return Err(NetworkError::DuplicateId {
                file: "node.txt",
                line,
                id,
            });
        }
    }

    let mut links = BTreeMap::new();
    let ll = Lines {
        file: "link.txt",
        text: link_text,
    };
    for (line, toks) in ll.records() {
        if toks.len() != 5 {
            return Err(ll.err(line, format!("expected 5 fields, got {}", toks.len())));
        }
        let link = Link {
            id: ll.int(line, toks[0], "link id")?,
            from: ll.int(line, toks[1], "from node")?,
            to: ll.int(line, toks[2], "to node")?,
            length: ll.float(line, toks[3], "length")?,
            width: ll.float(line, toks[4], "width")?,
        };
        if links.contains_key(&link.id) {
            return Err(NetworkError::DuplicateId {
                file: "link.txt",
                line,
                id: link.id,
            });
        }
        links.insert(link.id, link);
    }

    let mut paths = BTreeMap::new();
    let pl = Lines {
        file: "path.txt",
        text: path_text,
    };
    for (line, toks) in pl.records() {
        if toks.len() < 2 {
            return Err(pl.err(line, "expected a path id and at least one link"));
        }
        let id = pl.int(line, toks[0], "path id")?;
        let ls = toks[1..]
            .iter()
            .map(|t| pl.int(line, t, "link id"))
            .collect::<Result<Vec<_>, _>>()?;
        if paths.contains_key(&id) {
            return Err(NetworkError::DuplicateId {
                file: "path.txt",
                line,
                id,
            });
        }
        paths.insert(id, Path { id, links: ls });
    }

    let parts = TopologyParts {
        nodes: nodes.into_values().collect(),
        links: links.into_values().collect(),
        paths: paths.into_values().collect(),
        warnings: Vec::new(),
    };
    parts.validated()
}

impl TopologyParts {
    /// Check every cross-reference and invariant; returns `self` with
    /// warnings attached.
    pub fn validated(mut self) -> Result<Self, NetworkError> {
        let node_ids: BTreeSet<_> = self.nodes.iter().map(|n| n.id).collect();
        let mut seen = BTreeSet::new();
        for n in &self.nodes {
            if !seen.insert(n.id) {
                return Err(NetworkError::DuplicateId {
                    file: "node.txt",
                    line: 0,
                    id: n.id,
                });
            }
        }
        let mut by_id = HashMap::new();
        for l in &self.links {
            if by_id.insert(l.id, *l).is_some() {
                return Err(NetworkError::DuplicateId {
                    file: "link.txt",
                    line: 0,
                    id: l.id,
                });
            }
            for node in [l.from, l.to] {
                if !node_ids.contains(&node) {
                    return Err(NetworkError::DanglingNode { link: l.id, node });
                }
            }
            if l.from == l.to {
                return Err(NetworkError::SelfLoop(l.id));
            }
            if !(l.length > 0.0) {
                return Err(NetworkError::NonPositive {
                    link: l.id,
                    what: "length",
                    value: l.length,
                });
            }
            if !(l.width > 0.0) {
                return Err(NetworkError::NonPositive {
                    link: l.id,
                    what: "width",
                    value: l.width,
                });
            }
        }
        let mut seen = BTreeSet::new();
        for p in &self.paths {
            if !seen.insert(p.id) {
                return Err(NetworkError::DuplicateId {
                    file: "path.txt",
                    line: 0,
                    id: p.id,
                });
            }
            if p.links.is_empty() {
                return Err(NetworkError::EmptyPath(p.id));
            }
            for &lid in &p.links {
                if !by_id.contains_key(&lid) {
                    return Err(NetworkError::DanglingLink {
                        path: p.id,
                        link: lid,
                    });
                }
            }
            for w in p.links.windows(2) {
                if by_id[&w[0]].to != by_id[&w[1]].from {
                    return Err(NetworkError::DiscontinuousPath {
                        path: p.id,
                        from: w[0],
                        to: w[1],
                    });
                }
            }
        }
        self.warnings.retain(|w| !w.starts_with("no paths"));
        if self.paths.is_empty() {
            self.warnings
                .push("no paths defined: vehicles cannot be generated".to_string());
        }
        Ok(self)
    }

    pub fn to_node_text(&self) -> String {
        let mut s = String::new();
        for n in &self.nodes {
            let _ = writeln!(s, "{} {} {}", n.id, n.x, n.y);
        }
        s
    }

    pub fn to_link_text(&self) -> String {
        let mut s = String::new();
        for l in &self.links {
            let _ = writeln!(s, "{} {} {} {} {}", l.id, l.from, l.to, l.length, l.width);
        }
        s
    }

    pub fn to_path_text(&self) -> String {
        let mut s = String::new();
        for p in &self.paths {
            let _ = write!(s, "{}", p.id);
            for l in &p.links {
                let _ = write!(s, " {l}");
            }
            s.push('\n');
        }
        s
    }
}

/// Read `node.txt`, `link.txt` and `path.txt` from a directory.
pub fn load_topology_dir(dir: &FsPath) -> Result<TopologyParts, NetworkError> {
    let read = |name: &str| {
        let p = dir.join(name);
        std::fs::read_to_string(&p).map_err(|e| NetworkError::Io {
            path: p.display().to_string(),
            msg: e.to_string(),
        })
    };
    parse_topology(&read("node.txt")?, &read("link.txt")?, &read("path.txt")?)
}

/// A link with its strip discretization.
#[derive(Debug, Clone, PartialEq)]
pub struct NetLink {
    pub link: Link,
    pub strips: usize,
}

/// Immutable road network shared by simulation runs.
///
/// Links and paths are stored densely in ascending id order; the engine
/// addresses them by index.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadNetwork {
    nodes: Vec<Node>,
    links: Vec<NetLink>,
    paths: Vec<Vec<usize>>,
    path_ids: Vec<PathId>,
    link_index: HashMap<LinkId, usize>,
    strip_width: f64,
    warnings: Vec<String>,
}

/// Compute strip counts for every link.
pub fn build_network(parts: TopologyParts, strip_width: f64) -> Result<RoadNetwork, NetworkError> {
    if !(strip_width > 0.0) || !strip_width.is_finite() {
        return Err(NetworkError::BadStripWidth(strip_width));
    }
    let parts = parts.validated()?;
    let mut links = Vec::with_capacity(parts.links.len());
    let mut link_index = HashMap::new();
    for l in &parts.links {
        let strips = strip_count(l.width, strip_width).map_err(|e| NetworkError::LinkStrips {
            link: l.id,
            source: Box::new(e),
        })?;
        link_index.insert(l.id, links.len());
        links.push(NetLink { link: *l, strips });
    }
    let paths = parts
        .paths
        .iter()
        .map(|p| p.links.iter().map(|id| link_index[id]).collect())
        .collect();
    Ok(RoadNetwork {
        nodes: parts.nodes.clone(),
        links,
        paths,
        path_ids: parts.paths.iter().map(|p| p.id).collect(),
        link_index,
        strip_width,
        warnings: parts.warnings,
    })
}

impl RoadNetwork {
    pub fn strip_width(&self) -> f64 {
        self.strip_width
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn links(&self) -> &[NetLink] {
        &self.links
    }

    pub fn link(&self, idx: usize) -> &NetLink {
        &self.links[idx]
    }

    pub fn link_idx(&self, id: LinkId) -> Option<usize> {
        self.link_index.get(&id).copied()
    }

    /// Paths as sequences of link indices.
    pub fn paths(&self) -> &[Vec<usize>] {
        &self.paths
    }

    pub fn path_id(&self, idx: usize) -> PathId {
        self.path_ids[idx]
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Nodes where at least one path starts, ascending by id, each with the
    /// indices of the paths that start there.
    pub fn generating_nodes(&self) -> Vec<(NodeId, Vec<usize>)> {
        let mut by_node: BTreeMap<NodeId, Vec<usize>> = BTreeMap::new();
        for (pi, p) in self.paths.iter().enumerate() {
            let origin = self.links[p[0]].link.from;
            by_node.entry(origin).or_default().push(pi);
        }
        by_node.into_iter().collect()
    }

    /// Widest usable cross-section of any link, in strips.
    pub fn max_strips(&self) -> usize {
        self.links.iter().map(|l| l.strips).max().unwrap_or(0)
    }

    /// Back to plain parts (strip counts dropped).
    pub fn to_parts(&self) -> TopologyParts {
        TopologyParts {
            nodes: self.nodes.clone(),
            links: self.links.iter().map(|l| l.link).collect(),
            paths: self
                .paths
                .iter()
                .zip(&self.path_ids)
                .map(|(p, &id)| Path {
                    id,
                    links: p.iter().map(|&i| self.links[i].link.id).collect(),
                })
                .collect(),
            warnings: self.warnings.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const NODES: &str = "# id x y\n1 0.0 0.0\n2 100.0 0.0\n3 200.0 0.0\n";
    const LINKS: &str = "1 1 2 100.0 7.5\n2 2 3 100.0 7.5\n3 3 1 200.0 7.5\n";

    #[test]
    fn link_fields_map_directly() {
        let p = parse_topology("1 0.0 0.0\n2 5 5\n", "1 1 2 100.0 7.5\n", "").unwrap();
        assert_eq!(
            p.links[0],
            Link {
                id: 1,
                from: 1,
                to: 2,
                length: 100.0,
                width: 7.5
            }
        );
    }

    #[test]
    fn discontinuous_path_rejected() {
        let err = parse_topology(NODES, LINKS, "1 1 3\n").unwrap_err();
        assert!(matches!(err, NetworkError::DiscontinuousPath { path: 1, .. }));
        assert!(err.to_string().contains("discontinuous path"));
    }

    #[test]
    fn empty_path_file_warns() {
        let p = parse_topology(NODES, LINKS, "\n# nothing\n").unwrap();
        assert!(p.paths.is_empty());
        assert_eq!(p.warnings.len(), 1);
        let net = build_network(p, 2.5).unwrap();
        assert!(net.generating_nodes().is_empty());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse_topology("1 0 0\n\n2 x 0\n", "", "").unwrap_err();
        assert_eq!(
            err,
            NetworkError::Malformed {
                file: "node.txt",
                line: 3,
                msg: "bad x 'x'".into()
            }
        );
    }

    #[test]
    fn reference_errors() {
        assert!(matches!(
            parse_topology(NODES, "1 1 9 10 5\n", ""),
            Err(NetworkError::DanglingNode { link: 1, node: 9 })
        ));
        assert!(matches!(
            parse_topology(NODES, LINKS, "1 1 7\n"),
            Err(NetworkError::DanglingLink { path: 1, link: 7 })
        ));
        assert!(matches!(
            parse_topology("1 0 0\n1 1 1\n", "", ""),
            Err(NetworkError::DuplicateId { id: 1, line: 2, .. })
        ));
        assert!(matches!(
            parse_topology(NODES, "1 1 2 0 5\n", ""),
            Err(NetworkError::NonPositive { what: "length", .. })
        ));
        assert!(matches!(
            parse_topology(NODES, "1 1 2 10 -5\n", ""),
            Err(NetworkError::NonPositive { what: "width", .. })
        ));
        assert!(matches!(
            parse_topology(NODES, "1 1 1 10 5\n", ""),
            Err(NetworkError::SelfLoop(1))
        ));
    }

    #[test]
    fn crlf_and_comments() {
        let p = parse_topology("1 0 0\r\n2 1 1\r\n", "# c\r\n1 1 2 10 5\r\n", "1 1\r\n").unwrap();
        assert_eq!(p.paths[0].links, vec![1]);
    }

    #[test]
    fn strip_count_examples() {
        assert_eq!(strip_count(7.5, 2.5).unwrap(), 3);
        assert_eq!(strip_count(7.5, 0.5).unwrap(), 15);
        assert_eq!(strip_count(7.9, 2.5).unwrap(), 3);
        assert!(matches!(
            strip_count(2.0, 2.5),
            Err(NetworkError::ZeroStrips { .. })
        ));
        assert!(strip_count(2.0, 0.0).is_err());
    }

    #[test]
    fn build_lane_and_non_lane_regimes() {
        let parts = parse_topology(NODES, LINKS, "1 1 2 3\n").unwrap();
        let lane = build_network(parts.clone(), 2.5).unwrap();
        assert!(lane.links().iter().all(|l| l.strips == 3));
        let strip = build_network(parts, 0.5).unwrap();
        assert!(strip.links().iter().all(|l| l.strips == 15));
        assert_eq!(strip.generating_nodes(), vec![(1, vec![0])]);
    }

    #[test]
    fn narrow_link_reports_its_id() {
        let parts = parse_topology(NODES, "4 1 2 10 2.0\n", "").unwrap();
        match build_network(parts, 2.5) {
            Err(NetworkError::LinkStrips { link: 4, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn strip_count_matches_floor_on_grid() {
        // widths 2.5..30 m in 0.1 m steps, strips 0.25..3 m in 0.05 m steps
        for wi in 25..=300 {
            let w = wi as f64 / 10.0;
            for si in 5..=60 {
                let s = si as f64 / 20.0;
                // exact rational floor on integer grid units (1/20 m)
                let expect = (wi * 2) / si;
                match strip_count(w, s) {
                    Ok(n) => assert_eq!(n as i64, expect as i64, "w={w} s={s}"),
                    Err(_) => assert_eq!(expect, 0, "w={w} s={s}"),
                }
            }
        }
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        fn parts_strategy() -> impl Strategy<Value = TopologyParts> {
            (2usize..8, proptest::collection::vec((0.5f64..900.0, 2.5f64..30.0), 1..10)).prop_map(
                |(n_nodes, link_dims)| {
                    let nodes: Vec<Node> = (0..n_nodes as u32)
                        .map(|i| Node {
                            id: i + 1,
                            x: i as f64 * 13.25,
                            y: -(i as f64) / 3.0,
                        })
                        .collect();
                    // a chain 1 -> 2 -> ... -> n -> 1 ...
                    let links: Vec<Link> = link_dims
                        .iter()
                        .enumerate()
                        .map(|(k, &(len, w))| Link {
                            id: k as u32 + 10,
                            from: (k % n_nodes) as u32 + 1,
                            to: ((k + 1) % n_nodes) as u32 + 1,
                            length: len,
                            width: w,
                        })
                        .collect();
                    let paths = vec![Path {
                        id: 1,
                        links: links.iter().map(|l| l.id).collect(),
                    }];
                    TopologyParts {
                        nodes,
                        links,
                        paths,
                        warnings: vec![],
                    }
                },
            )
        }

        proptest! {
            #[test]
            fn serialize_parse_round_trip(parts in parts_strategy()) {
                let text = (parts.to_node_text(), parts.to_link_text(), parts.to_path_text());
                let back = parse_topology(&text.0, &text.1, &text.2).unwrap();
                prop_assert_eq!(&back, &parts);
                let net_a = build_network(parts, 0.5).unwrap();
                let net_b = build_network(back, 0.5).unwrap();
                prop_assert_eq!(&net_a, &net_b);
                for p in net_a.paths() {
                    for w in p.windows(2) {
                        prop_assert_eq!(net_a.link(w[0]).link.to, net_a.link(w[1]).link.from);
                    }
                }
            }
        }
    }
}
