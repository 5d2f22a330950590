//! Scalar time profiles used to scale loads and to drive prescribed joint
//! coordinates.

/// A scalar function of time with its first two derivatives.
#[derive(Debug, Clone, PartialEq)]
pub enum Profile {
    Constant(f64),
    /// Rises linearly from 0 at `start` to 1 at `end`, then holds.
    Ramp { start: f64, end: f64 },
    /// Rises linearly from 0 at `start` to 1 at `peak`, falls back to 0 at `end`.
    TriangularPulse { start: f64, peak: f64, end: f64 },
    /// `rate · t`.
    Linear { rate: f64 },
    /// `offset + amplitude · sin(2π·frequency·t + phase)`.
    Sine {
        amplitude: f64,
        frequency: f64,
        phase: f64,
        offset: f64,
    },
    /// Piecewise-linear interpolation through `(t, value)` pairs, held at the ends.
    Table(Vec<(f64, f64)>),
}

impl Default for Profile {
    fn default() -> Self {
        Profile::Constant(1.0)
    }
}

impl Profile {
    pub fn value(&self, t: f64) -> f64 {
        self.eval(t)[0]
    }

    /// Value, first and second time derivative at `t`. Piecewise-linear
    /// profiles report zero second derivative.
    pub fn eval(&self, t: f64) -> [f64; 3] {
        match self {
            Profile::Constant(c) => [*c, 0.0, 0.0],
            Profile::Ramp { start, end } => {
                if t <= *start {
                    [0.0, 0.0, 0.0]
                } else if t >= *end {
                    [1.0, 0.0, 0.0]
                } else {
                    let r = 1.0 / (end - start);
                    [(t - start) * r, r, 0.0]
                }
            }
            Profile::TriangularPulse { start, peak, end } => {
                if t <= *start || t >= *end {
                    [0.0, 0.0, 0.0]
                } else if t <= *peak {
                    let r = 1.0 / (peak - start);
                    [(t - start) * r, r, 0.0]
                } else {
                    let r = 1.0 / (end - peak);
                    [(end - t) * r, -r, 0.0]
                }
            }
            Profile::Linear { rate } => [rate * t, *rate, 0.0],
            Profile::Sine {
                amplitude,
                frequency,
                phase,
                offset,
            } => {
                let w = 2.0 * std::f64::consts::PI * frequency;
                let a = w * t + phase;
                [
                    offset + amplitude * a.sin(),
                    amplitude * w * a.cos(),
                    -amplitude * w * w * a.sin(),
                ]
            }
            Profile::Table(rows) => {
                if rows.is_empty() {
                    return [0.0, 0.0, 0.0];
                }
                if t <= rows[0].0 {
                    return [rows[0].1, 0.0, 0.0];
                }
                let last = rows[rows.len() - 1];
                if t >= last.0 {
                    return [last.1, 0.0, 0.0];
                }
                let i = rows.partition_point(|r| r.0 <= t);
                let (a, b) = (rows[i - 1], rows[i]);
                let slope = (b.1 - a.1) / (b.0 - a.0);
                [a.1 + slope * (t - a.0), slope, 0.0]
            }
        }
    }
}
