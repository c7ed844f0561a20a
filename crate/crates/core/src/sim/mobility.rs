//! Piecewise-linear node trajectories.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Self {
        Position { x, y }
    }

    pub fn distance(self, other: Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    fn lerp(self, to: Position, frac: f64) -> Position {
        Position {
            x: self.x + (to.x - self.x) * frac,
            y: self.y + (to.y - self.y) * frac,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum MobilityModel {
    #[default]
    Static,
    RandomWaypoint {
        min_speed: f64,
        max_speed: f64,
        pause: f64,
    },
}

/// One scripted move: at `at` the node starts heading for `to` at `speed`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Waypoint {
    pub at: f64,
    pub to: Position,
    pub speed: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Leg {
    t0: f64,
    t1: f64,
    from: Position,
    to: Position,
}

/// Position as a function of time. Between legs the node stands still.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    start: Position,
    legs: Vec<Leg>,
}

impl Trajectory {
    pub fn fixed(at: Position) -> Self {
        Trajectory {
            start: at,
            legs: Vec::new(),
        }
    }

    /// Random waypoint: pause, pick a uniform destination and speed, travel,
    /// repeat until `horizon`.
    pub fn random_waypoint(
        start: Position,
        area: (f64, f64),
        min_speed: f64,
        max_speed: f64,
        pause: f64,
        horizon: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut legs = Vec::new();
        let mut t = pause;
        let mut here = start;
        while t < horizon {
            let to = Position::new(rng.gen_range(0.0..=area.0), rng.gen_range(0.0..=area.1));
            let speed = if max_speed > min_speed {
                rng.gen_range(min_speed..max_speed)
            } else {
                min_speed
            };
            let dt = here.distance(to) / speed.max(1e-9);
            legs.push(Leg {
                t0: t,
                t1: t + dt,
                from: here,
                to,
            });
            here = to;
            t += dt + pause;
        }
        Trajectory { start, legs }
    }

    /// Applies scripted moves in time order. A move that starts before the
    /// previous one ends is delayed until it does.
    pub fn scripted(start: Position, waypoints: &[Waypoint]) -> Self {
        let mut sorted = waypoints.to_vec();
        sorted.sort_by(|a, b| a.at.total_cmp(&b.at));
        let mut legs = Vec::new();
        let mut here = start;
        let mut free_at = 0.0f64;
        for w in sorted {
            let t0 = w.at.max(free_at);
            let dt = here.distance(w.to) / w.speed.max(1e-9);
            legs.push(Leg {
                t0,
                t1: t0 + dt,
                from: here,
                to: w.to,
            });
            here = w.to;
            free_at = t0 + dt;
        }
        Trajectory { start, legs }
    }

    pub fn position(&self, t: f64) -> Position {
        let idx = self.legs.partition_point(|l| l.t0 <= t);
        if idx == 0 {
            return self.start;
        }
        let leg = &self.legs[idx - 1];
        if t >= leg.t1 || leg.t1 <= leg.t0 {
            leg.to
        } else {
            leg.from.lerp(leg.to, (t - leg.t0) / (leg.t1 - leg.t0))
        }
    }

    pub fn is_static(&self) -> bool {
        self.legs.is_empty()
    }
}
