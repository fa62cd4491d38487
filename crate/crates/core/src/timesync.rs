//! Four-timestamp delay/offset estimation and the per-tick frame window.
//!
//! Sign convention: `e` is the server clock minus the client clock, so a
//! client reading `c` corresponds to server time `c + e`.

use std::collections::VecDeque;

use thiserror::Error;

use crate::skeleton::SensorId;

/// Number of exchanges kept for median smoothing.
pub const SYNC_HISTORY: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SyncError {
    #[error("negative transmission delay {0} ms; exchange discarded")]
    NegativeDelay(f64),
    #[error("sync state for sensor {0} has no exchanges yet")]
    Uninitialized(SensorId),
}

/// One ping/pong round. `t1`/`t4` are server clock, `t2`/`t3` client clock,
/// all in integer milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyncExchange {
    pub t1: i64,
    pub t2: i64,
    pub t3: i64,
    pub t4: i64,
}

impl SyncExchange {
    pub fn new(t1: i64, t2: i64, t3: i64, t4: i64) -> Self {
        Self { t1, t2, t3, t4 }
    }
}

/// Returns `(delay_ms, clock_error_ms)`:
/// `d = ((t4 - t1) - (t3 - t2)) / 2`, `e = ((t1 - t2) + (t4 - t3)) / 2`.
pub fn compute_offset_delay(x: &SyncExchange) -> Result<(f64, f64), SyncError> {
    let d = ((x.t4 - x.t1) - (x.t3 - x.t2)) as f64 / 2.0;
    let e = ((x.t1 - x.t2) + (x.t4 - x.t3)) as f64 / 2.0;
    if d < 0.0 {
        return Err(SyncError::NegativeDelay(d));
    }
    Ok((d, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyncState {
    pub sensor_id: SensorId,
    pub delay_d: f64,
    pub clock_error_e: f64,
    history: VecDeque<(f64, f64)>,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

impl SyncState {
    pub fn new(sensor_id: SensorId) -> Self {
        Self { sensor_id, delay_d: 0.0, clock_error_e: 0.0, history: VecDeque::with_capacity(SYNC_HISTORY) }
    }

    pub fn is_initialized(&self) -> bool {
        !self.history.is_empty()
    }

    pub fn history_len(&self) -> usize {
        self.history.len()
    }

    /// Folds one exchange in and re-derives `(d, e)` as the medians of the
    /// last [`SYNC_HISTORY`] estimates. Corrupt exchanges leave the state
    /// unchanged and are reported.
    pub fn update(&mut self, x: &SyncExchange) -> Result<(f64, f64), SyncError> {
        let est = compute_offset_delay(x)?;
        if self.history.len() == SYNC_HISTORY {
            self.history.pop_front();
        }
        self.history.push_back(est);
        let mut ds: Vec<f64> = self.history.iter().map(|h| h.0).collect();
        let mut es: Vec<f64> = self.history.iter().map(|h| h.1).collect();
        self.delay_d = median(&mut ds).max(0.0);
        self.clock_error_e = median(&mut es);
        Ok(est)
    }
}

/// Functional form of [`SyncState::update`].
pub fn update_sync_state(state: &SyncState, x: &SyncExchange) -> SyncState {
    let mut next = state.clone();
    let _ = next.update(x);
    next
}

/// Send instant of a message on the client clock: `t_r - d - e`.
pub fn backtrack_send_time(t_receive: f64, state: &SyncState) -> Result<f64, SyncError> {
    if !state.is_initialized() {
        return Err(SyncError::Uninitialized(state.sensor_id));
    }
    Ok(t_receive - state.delay_d - state.clock_error_e)
}

/// Send instant of a message on the server clock: `t_r - d`.
pub fn backtrack_send_time_server(t_receive: f64, state: &SyncState) -> Result<f64, SyncError> {
    Ok(backtrack_send_time(t_receive, state)? + state.clock_error_e)
}

/// Width of the admission window in milliseconds.
pub fn window_ms(fps: f64) -> f64 {
    1000.0 / fps
}

/// Anything that can sit in a per-sensor frame FIFO.
pub trait Timestamped {
    /// Send time on the server clock, milliseconds.
    fn send_time(&self) -> f64;
}

impl Timestamped for f64 {
    fn send_time(&self) -> f64 {
        *self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowOutcome<T> {
    pub admitted: Option<T>,
    pub stale: usize,
    pub superfluous: usize,
}

/// Drains one sensor's FIFO for the tick at `server_now`.
///
/// Frames sent at or before `server_now - window` are stale. Of the frames
/// inside `(server_now - window, server_now]` only the newest is admitted and
/// the rest are superfluous. Frames sent after `server_now` stay queued.
pub fn frame_window_filter<T: Timestamped>(
    fifo: &mut VecDeque<T>,
    server_now: f64,
    window: f64,
) -> WindowOutcome<T> {
    let mut out = WindowOutcome { admitted: None, stale: 0, superfluous: 0 };
    while let Some(front) = fifo.front() {
        let t = front.send_time();
        if t > server_now {
            break;
        }
        let frame = fifo.pop_front().expect("front exists");
        if t <= server_now - window {
            out.stale += 1;
        } else if out.admitted.replace(frame).is_some() {
            out.superfluous += 1;
        }
    }
    out
}

/// Applies [`frame_window_filter`] to every sensor's FIFO.
pub fn frame_window_filter_all<T: Timestamped>(
    buffers: &mut [(SensorId, VecDeque<T>)],
    server_now: f64,
    fps: f64,
) -> Vec<(SensorId, WindowOutcome<T>)> {
    let window = window_ms(fps);
    buffers
        .iter_mut()
        .map(|(id, fifo)| (*id, frame_window_filter(fifo, server_now, window)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn offset_delay_examples() {
        assert_eq!(compute_offset_delay(&SyncExchange::new(0, 5, 6, 11)).unwrap(), (5.0, 0.0));
        assert_eq!(compute_offset_delay(&SyncExchange::new(0, 8, 9, 4)).unwrap(), (1.5, -6.5));
        assert_eq!(compute_offset_delay(&SyncExchange::new(0, 0, 0, 0)).unwrap(), (0.0, 0.0));
        // consistency: t2 = t1 + d - e
        let (d, e) = compute_offset_delay(&SyncExchange::new(0, 8, 9, 4)).unwrap();
        assert_eq!(0.0 + d - e, 8.0);
    }

    #[test]
    fn negative_delay_is_corrupt() {
        assert!(matches!(
            compute_offset_delay(&SyncExchange::new(0, 0, 100, 10)),
            Err(SyncError::NegativeDelay(_))
        ));
        let mut s = SyncState::new(1);
        assert!(s.update(&SyncExchange::new(0, 0, 100, 10)).is_err());
        assert!(!s.is_initialized());
    }

    #[test]
    fn median_smoothing() {
        let x = SyncExchange::new(0, 5, 6, 11);
        let mut s = SyncState::new(3);
        s.update(&x).unwrap();
        assert_eq!((s.delay_d, s.clock_error_e), (5.0, 0.0));
        for _ in 0..6 {
            s = update_sync_state(&s, &x);
        }
        assert_eq!((s.delay_d, s.clock_error_e), (5.0, 0.0));
        assert_eq!(s.history_len(), SYNC_HISTORY);

        // four clean exchanges and one with e = 50
        let mut s = SyncState::new(3);
        for _ in 0..4 {
            s.update(&x).unwrap();
        }
        s.update(&SyncExchange::new(0, -45, -44, 11)).unwrap();
        assert_eq!(compute_offset_delay(&SyncExchange::new(0, -45, -44, 11)).unwrap().1, 50.0);
        assert_eq!(s.clock_error_e, 0.0);
    }

    #[test]
    fn backtrack_examples() {
        let mut s = SyncState::new(1);
        assert_eq!(backtrack_send_time(4.0, &s), Err(SyncError::Uninitialized(1)));
        s.update(&SyncExchange::new(0, 8, 9, 4)).unwrap();
        assert_eq!(backtrack_send_time(4.0, &s).unwrap(), 9.0);
        assert_eq!(backtrack_send_time_server(4.0, &s).unwrap(), 2.5);

        let mut s = SyncState::new(1);
        s.update(&SyncExchange::new(0, 0, 0, 0)).unwrap();
        assert_eq!(backtrack_send_time(123.0, &s).unwrap(), 123.0);

        let mut s = SyncState::new(1);
        s.update(&SyncExchange::new(0, 5, 6, 11)).unwrap();
        assert_eq!(backtrack_send_time(100.0, &s).unwrap(), 95.0);
    }

    #[test]
    fn window_examples() {
        let w = window_ms(30.0);
        let mut q: VecDeque<f64> = [980.0].into();
        let out = frame_window_filter(&mut q, 1000.0, w);
        assert_eq!(out.admitted, Some(980.0));

        let mut q: VecDeque<f64> = [950.0].into();
        let out = frame_window_filter(&mut q, 1000.0, w);
        assert_eq!((out.admitted, out.stale), (None, 1));

        let mut q: VecDeque<f64> = [975.0, 990.0, 1005.0].into();
        let out = frame_window_filter(&mut q, 1000.0, w);
        assert_eq!((out.admitted, out.superfluous, out.stale), (Some(990.0), 1, 0));
        assert_eq!(q, VecDeque::from([1005.0]));
    }

    proptest! {
        #[test]
        fn symmetric_delay_recovered_exactly(t1 in 0i64..1_000_000, delay in 0i64..200,
                                             offset in -5000i64..5000, turnaround in 0i64..10) {
            // client clock = server clock + offset
            let t2 = t1 + delay + offset;
            let t3 = t2 + turnaround;
            let t4 = t3 - offset + delay;
            let (d, e) = compute_offset_delay(&SyncExchange::new(t1, t2, t3, t4)).unwrap();
            prop_assert_eq!(d, delay as f64);
            prop_assert_eq!(e, -offset as f64);
        }

        #[test]
        fn asymmetric_bias_is_half_difference(t1 in 0i64..1_000_000, up in 0i64..100, down in 0i64..100,
                                              offset in -5000i64..5000) {
            let t2 = t1 + down + offset;
            let t3 = t2;
            let t4 = t3 - offset + up;
            let (_, e) = compute_offset_delay(&SyncExchange::new(t1, t2, t3, t4)).unwrap();
            prop_assert_eq!(e - (-offset as f64), (up - down) as f64 / 2.0);
        }

        #[test]
        fn window_conserves_frames(mut times in proptest::collection::vec(0.0..2000.0f64, 0..50),
                                   now in 0.0..2000.0f64) {
            times.sort_by(f64::total_cmp);
            let total = times.len();
            let mut q: VecDeque<f64> = times.into();
            let out = frame_window_filter(&mut q, now, window_ms(30.0));
            let admitted = usize::from(out.admitted.is_some());
            prop_assert_eq!(admitted + out.stale + out.superfluous + q.len(), total);
        }
    }
}
