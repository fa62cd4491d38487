//! Link delays, jitter, asymmetry and connection outages.

use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Client to server.
    Upstream,
    /// Server to client.
    Downstream,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayModel {
    pub base_ms: f64,
    /// Half-width of the uniform jitter.
    pub jitter_ms: f64,
    /// Upstream minus downstream mean delay.
    pub asymmetry_ms: f64,
    /// Expected connection drops per second.
    pub disconnect_rate_hz: f64,
    pub outage_ms: f64,
}

impl Default for DelayModel {
    fn default() -> Self {
        Self { base_ms: 3.0, jitter_ms: 0.0, asymmetry_ms: 0.0, disconnect_rate_hz: 0.0, outage_ms: 500.0 }
    }
}

impl DelayModel {
    pub fn validate(&self) -> Result<(), String> {
        let finite = [self.base_ms, self.jitter_ms, self.asymmetry_ms, self.disconnect_rate_hz, self.outage_ms]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.jitter_ms < 0.0 || self.disconnect_rate_hz < 0.0 || self.outage_ms < 0.0 {
            return Err("delay parameters must be finite and non-negative".into());
        }
        if self.base_ms - self.asymmetry_ms.abs() / 2.0 - self.jitter_ms < 0.0 {
            return Err("base delay too small for the configured jitter and asymmetry".into());
        }
        Ok(())
    }

    pub fn mean(&self, dir: Direction) -> f64 {
        match dir {
            Direction::Upstream => self.base_ms + self.asymmetry_ms / 2.0,
            Direction::Downstream => self.base_ms - self.asymmetry_ms / 2.0,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, dir: Direction, rng: &mut R) -> f64 {
        let jitter = if self.jitter_ms > 0.0 { rng.gen_range(-self.jitter_ms..=self.jitter_ms) } else { 0.0 };
        self.mean(dir) + jitter
    }
}

/// Delivery time of each message on one connection.
///
/// `sends` must be in send order. Each direction is an ordered stream, so a
/// message never overtakes an earlier one in the same direction.
pub fn simulate_network<R: Rng + ?Sized>(model: &DelayModel, sends: &[(f64, Direction)], rng: &mut R) -> Vec<f64> {
    let mut last_up = f64::NEG_INFINITY;
    let mut last_down = f64::NEG_INFINITY;
    sends
        .iter()
        .map(|&(t, dir)| {
            let at = t + model.sample(dir, rng);
            let last = match dir {
                Direction::Upstream => &mut last_up,
                Direction::Downstream => &mut last_down,
            };
            *last = at.max(*last);
            *last
        })
        .collect()
}

/// Outage intervals `[start, end)` within `[0, duration_ms)`, drawn as a
/// Poisson process of disconnects each lasting `outage_ms`.
pub fn outage_windows<R: Rng + ?Sized>(model: &DelayModel, duration_ms: f64, rng: &mut R) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    if model.disconnect_rate_hz <= 0.0 {
        return out;
    }
    let mut t = 0.0;
    loop {
        let u: f64 = rng.gen_range(f64::EPSILON..1.0);
        t += -u.ln() / model.disconnect_rate_hz * 1000.0;
        if t >= duration_ms {
            return out;
        }
        out.push((t, t + model.outage_ms));
        t += model.outage_ms;
    }
}
