//! Per-strip longitudinal intervals of the vehicles on each link.

/// A vehicle's footprint on one strip, `[rear, front]` in meters along the
/// link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub vehicle: u32,
    pub rear: f64,
    pub front: f64,
}

/// Two vehicles sharing a strip with overlapping intervals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Overlap {
    /// Link index.
    pub link: usize,
    pub a: u32,
    pub b: u32,
}

/// Touching intervals (within this slack) do not overlap.
pub const OVERLAP_TOL: f64 = 1e-9;

/// Strip occupancy for a whole network. Each strip keeps its intervals
/// sorted by `(front, vehicle)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StripOccupancy {
    links: Vec<Vec<Vec<Interval>>>,
    /// Upper bound on `front - rear` of any interval.
    max_len: f64,
}

#[inline]
fn key_le(e: &Interval, front: f64, vehicle: u32) -> bool {
    e.front < front || (e.front == front && e.vehicle <= vehicle)
}

#[inline]
fn key_lt(e: &Interval, front: f64, vehicle: u32) -> bool {
    e.front < front || (e.front == front && e.vehicle < vehicle)
}

impl StripOccupancy {
    pub fn new(strips_per_link: impl IntoIterator<Item = usize>, max_len: f64) -> Self {
        StripOccupancy {
            links: strips_per_link
                .into_iter()
                .map(|n| vec![Vec::new(); n])
                .collect(),
            max_len: max_len + OVERLAP_TOL,
        }
    }

    pub fn strips(&self, link: usize) -> usize {
        self.links[link].len()
    }

    pub fn strip(&self, link: usize, strip: usize) -> &[Interval] {
        &self.links[link][strip]
    }

    pub fn insert(&mut self, link: usize, start: usize, span: usize, iv: Interval) {
        for s in &mut self.links[link][start..start + span] {
            let idx = s.partition_point(|e| key_lt(e, iv.front, iv.vehicle));
            s.insert(idx, iv);
        }
    }

    /// Remove a vehicle from its span. Returns false if it was missing from
    /// any strip.
    pub fn remove(&mut self, link: usize, start: usize, span: usize, vehicle: u32) -> bool {
        let mut all = true;
        for s in &mut self.links[link][start..start + span] {
            match s.iter().position(|e| e.vehicle == vehicle) {
                Some(i) => {
                    s.remove(i);
                }
                None => all = false,
            }
        }
        all
    }

    /// Rewrite every interval from `footprint(vehicle) -> (rear, front)` and
    /// restore the sort order.
    pub fn refresh(&mut self, mut footprint: impl FnMut(u32) -> (f64, f64)) {
        for link in &mut self.links {
            for s in link.iter_mut() {
                for e in s.iter_mut() {
                    let (rear, front) = footprint(e.vehicle);
                    e.rear = rear;
                    e.front = front;
                }
                // nearly sorted already; the stable sort is linear then
                s.sort_by(|a, b| a.front.total_cmp(&b.front).then(a.vehicle.cmp(&b.vehicle)));
            }
        }
    }

    /// Nearest interval ahead of `(front, vehicle)` across the span, by rear
    /// position.
    pub fn ahead(&self, link: usize, start: usize, span: usize, front: f64, vehicle: u32) -> Option<Interval> {
        let mut best: Option<Interval> = None;
        for s in &self.links[link][start..start + span] {
            let idx = s.partition_point(|e| key_le(e, front, vehicle));
            for e in &s[idx..] {
                if let Some(b) = best {
                    if e.front - self.max_len >= b.rear {
                        break;
                    }
                }
                if e.vehicle == vehicle {
                    continue;
                }
                if best.is_none_or(|b| e.rear < b.rear || (e.rear == b.rear && e.vehicle < b.vehicle)) {
                    best = Some(*e);
                }
            }
        }
        best
    }

    /// Nearest interval behind `(front, vehicle)` across the span, by front
    /// position.
    pub fn behind(&self, link: usize, start: usize, span: usize, front: f64, vehicle: u32) -> Option<Interval> {
        let mut best: Option<Interval> = None;
        for s in &self.links[link][start..start + span] {
            let idx = s.partition_point(|e| key_lt(e, front, vehicle));
            if let Some(e) = s[..idx].iter().rev().find(|e| e.vehicle != vehicle) {
                if best.is_none_or(|b| e.front > b.front || (e.front == b.front && e.vehicle > b.vehicle)) {
                    best = Some(*e);
                }
            }
        }
        best
    }

    /// True if no interval other than `exclude`'s overlaps `(lo, hi)` on any
    /// strip of the span.
    pub fn is_free(&self, link: usize, start: usize, span: usize, lo: f64, hi: f64, exclude: Option<u32>) -> bool {
        for s in &self.links[link][start..start + span] {
            let idx = s.partition_point(|e| e.front <= lo + OVERLAP_TOL);
            for e in &s[idx..] {
                if e.front - self.max_len >= hi {
                    break;
                }
                if Some(e.vehicle) != exclude && e.rear < hi - OVERLAP_TOL {
                    return false;
                }
            }
        }
        true
    }

    /// All overlapping pairs, deduplicated across strips, sorted.
    pub fn overlaps(&self) -> Vec<Overlap> {
        let mut out = Vec::new();
        for (li, link) in self.links.iter().enumerate() {
            for s in link {
                for i in 1..s.len() {
                    let cur = s[i];
                    for prev in s[..i].iter().rev() {
                        if prev.front <= cur.rear + OVERLAP_TOL {
                            break;
                        }
                        if prev.rear < cur.front - OVERLAP_TOL {
                            let (a, b) = if prev.vehicle < cur.vehicle {
                                (prev.vehicle, cur.vehicle)
                            } else {
                                (cur.vehicle, prev.vehicle)
                            };
                            out.push(Overlap { link: li, a, b });
                        }
                    }
                }
            }
        }
        out.sort();
        out.dedup();
        out
    }

    pub fn total_entries(&self) -> usize {
        self.links.iter().flatten().map(Vec::len).sum()
    }
}
