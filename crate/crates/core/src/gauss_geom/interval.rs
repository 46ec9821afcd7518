//! Finite unions of closed real intervals.

/// Endpoints closer than this are merged.
pub const MERGE_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Sorted, pairwise disjoint closed intervals. Endpoints may be infinite.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IntervalUnion {
    intervals: Vec<Interval>,
}

impl IntervalUnion {
    pub fn empty() -> Self {
        IntervalUnion::default()
    }

    pub fn full() -> Self {
        IntervalUnion {
            intervals: vec![Interval::new(f64::NEG_INFINITY, f64::INFINITY)],
        }
    }

    /// Normalize arbitrary intervals: drop reversed or NaN ones, sort, and
    /// merge overlapping or nearly touching pieces.
    pub fn from_intervals<I: IntoIterator<Item = Interval>>(items: I) -> Self {
        let mut v: Vec<Interval> = items.into_iter().collect();
        normalize(&mut v);
        IntervalUnion { intervals: v }
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.intervals
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn contains(&self, x: f64) -> bool {
        self.intervals.iter().any(|iv| iv.contains(x))
    }

    /// Total length (may be infinite).
    pub fn measure(&self) -> f64 {
        self.intervals.iter().map(Interval::len).sum()
    }

    pub fn intersect(&self, other: &IntervalUnion) -> IntervalUnion {
        let (a, b) = (&self.intervals, &other.intervals);
        let (mut i, mut j) = (0, 0);
        let mut out = Vec::new();
        while i < a.len() && j < b.len() {
            let lo = a[i].lo.max(b[j].lo);
            let hi = a[i].hi.min(b[j].hi);
            if lo <= hi {
                out.push(Interval::new(lo, hi));
            }
            if a[i].hi < b[j].hi {
                i += 1;
            } else {
                j += 1;
            }
        }
        IntervalUnion { intervals: out }
    }

    /// Image under `s -> offset + scale * s`. A negative scale reverses order.
    pub fn affine_image(&self, offset: f64, scale: f64) -> IntervalUnion {
        let mapped = self.intervals.iter().map(|iv| {
            let (a, b) = (offset + scale * iv.lo, offset + scale * iv.hi);
            if scale >= 0.0 {
                Interval::new(a, b)
            } else {
                Interval::new(b, a)
            }
        });
        IntervalUnion::from_intervals(mapped)
    }
}

/// In-place version of [`IntervalUnion::from_intervals`].
pub(crate) fn normalize(v: &mut Vec<Interval>) {
    v.retain(|iv| iv.lo <= iv.hi);
    v.sort_by(|a, b| a.lo.total_cmp(&b.lo));
    let mut w = 0;
    for r in 0..v.len() {
        if w > 0 && v[r].lo <= v[w - 1].hi + MERGE_TOLERANCE {
            if v[r].hi > v[w - 1].hi {
                v[w - 1].hi = v[r].hi;
            }
        } else {
            v[w] = v[r];
            w += 1;
        }
    }
    v.truncate(w);
}
