//! Lead-vehicle speed profile: cruise, abrupt braking, slow cruise,
//! aggressive acceleration, cruise. Position is integrated exactly.

/// `(start time, speed at start, acceleration)` for each half-open segment.
const SEGMENTS: [(f64, f64, f64); 5] = [
    (0.0, 18.0, 0.0),
    (5.0, 18.0, -4.0),
    (7.0, 10.0, 0.0),
    (30.0, 10.0, 2.0),
    (35.0, 20.0, 0.0),
];

pub const HORIZON: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeaderProfile {
    pub x0: f64,
}

impl LeaderProfile {
    pub fn new(x0: f64) -> Self {
        Self { x0 }
    }

    fn segment(t: f64) -> usize {
        SEGMENTS.iter().rposition(|&(start, _, _)| t >= start).unwrap_or(0)
    }

    /// Speed at `t`; times outside `[0, 60]` take the nearest end value.
    pub fn velocity(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, HORIZON);
        let (start, v, a) = SEGMENTS[Self::segment(t)];
        v + a * (t - start)
    }

    /// Exact position; constant speed is extrapolated past the horizon.
    pub fn position(&self, t: f64) -> f64 {
        let t = t.max(0.0);
        let k = Self::segment(t);
        let mut x = self.x0;
        for w in SEGMENTS[..k].iter().zip(SEGMENTS[1..=k].iter()) {
            let ((s0, v0, a0), (s1, _, _)) = (w.0, w.1);
            let d = s1 - s0;
            x += v0 * d + 0.5 * a0 * d * d;
        }
        let (start, v, a) = SEGMENTS[k];
        let d = t - start;
        x + v * d + 0.5 * a * d * d
    }
}
