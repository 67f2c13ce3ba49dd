//! Per-session congestion control.
//!
//! Loss-based, byte-counted slow start and AIMD. The operating mode scales the
//! additive gain and picks the multiplicative decrease:
//!
//! | mode          | gain | decrease |
//! |---------------|------|----------|
//! | normal        | 1    | 0.5      |
//! | time-critical | 2    | 0.875    |
//! | deferring     | 0.5  | 0.5      |
//!
//! The multipliers are model constants, overridable through [`CcParams`].

use std::collections::BTreeMap;
use std::fmt;

use crate::netsim::SimTime;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CcMode {
    Normal,
    TimeCritical,
    /// A normal session yielding to time-critical traffic elsewhere on the host or from the peer.
    Deferring,
}

impl fmt::Display for CcMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CcMode::Normal => "normal",
            CcMode::TimeCritical => "time_critical",
            CcMode::Deferring => "deferring",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    SlowStart,
    Avoidance,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CcParams {
    pub mss: u64,
    pub init_cwnd: u64,
    pub min_cwnd: u64,
    pub gain_normal: f64,
    pub gain_time_critical: f64,
    pub gain_deferring: f64,
    pub decrease_normal: f64,
    pub decrease_time_critical: f64,
    /// Slow-start credit per ack is capped at this many MSS.
    pub slow_start_limit: u64,
}

impl Default for CcParams {
    fn default() -> Self {
        CcParams {
            mss: 1460,
            init_cwnd: 4380,
            min_cwnd: 2 * 1460,
            gain_normal: 1.0,
            gain_time_critical: 2.0,
            gain_deferring: 0.5,
            decrease_normal: 0.5,
            decrease_time_critical: 0.875,
            slow_start_limit: 2,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CcStats {
    pub loss_events: u64,
    pub coalesced_losses: u64,
    pub timeouts: u64,
}

#[derive(Clone, Debug)]
pub struct CcState {
    params: CcParams,
    cwnd: u64,
    ssthresh: u64,
    flight_size: u64,
    mode: CcMode,
    avoid_credit: f64,
    last_collapse: Option<SimTime>,
    stats: CcStats,
}

impl CcState {
    pub fn new(params: CcParams) -> Self {
        CcState {
            cwnd: params.init_cwnd.max(params.min_cwnd),
            ssthresh: u64::MAX,
            flight_size: 0,
            mode: CcMode::Normal,
            avoid_credit: 0.0,
            last_collapse: None,
            stats: CcStats::default(),
            params,
        }
    }

    pub fn cwnd(&self) -> u64 {
        self.cwnd
    }

    pub fn ssthresh(&self) -> u64 {
        self.ssthresh
    }

    pub fn flight_size(&self) -> u64 {
        self.flight_size
    }

    pub fn mode(&self) -> CcMode {
        self.mode
    }

    pub fn params(&self) -> &CcParams {
        &self.params
    }

    pub fn stats(&self) -> &CcStats {
        &self.stats
    }

    pub fn phase(&self) -> Phase {
        if self.cwnd < self.ssthresh {
            Phase::SlowStart
        } else {
            Phase::Avoidance
        }
    }

    pub fn set_mode(&mut self, mode: CcMode) {
        self.mode = mode;
    }

    fn gain(&self) -> f64 {
        match self.mode {
            CcMode::Normal => self.params.gain_normal,
            CcMode::TimeCritical => self.params.gain_time_critical,
            CcMode::Deferring => self.params.gain_deferring,
        }
    }

    fn decrease(&self) -> f64 {
        match self.mode {
            CcMode::TimeCritical => self.params.decrease_time_critical,
            CcMode::Normal | CcMode::Deferring => self.params.decrease_normal,
        }
    }

    pub fn can_send(&self, packet_size: u64) -> bool {
        self.flight_size + packet_size <= self.cwnd
    }

    /// Bytes that may still be put in flight.
    pub fn room(&self) -> u64 {
        self.cwnd.saturating_sub(self.flight_size)
    }

    pub fn on_sent(&mut self, bytes: u64) {
        self.flight_size += bytes;
    }

    /// Bytes that left the network without being acknowledged (declared lost).
    pub fn on_bytes_lost(&mut self, bytes: u64) {
        self.flight_size = self.flight_size.saturating_sub(bytes);
    }

    pub fn on_ack_progress(&mut self, bytes_acked: u64, _now: SimTime) {
        if bytes_acked == 0 {
            return;
        }
        self.flight_size = self.flight_size.saturating_sub(bytes_acked);
        let gain = self.gain();
        match self.phase() {
            Phase::SlowStart => {
                let credit = bytes_acked.min(self.params.slow_start_limit * self.params.mss);
                self.cwnd += (credit as f64 * gain).round() as u64;
            }
            Phase::Avoidance => {
                // G * MSS per window's worth of acknowledged bytes
                self.avoid_credit += gain * self.params.mss as f64 * bytes_acked as f64 / self.cwnd as f64;
                let whole = self.avoid_credit.floor();
                self.cwnd += whole as u64;
                self.avoid_credit -= whole;
            }
        }
    }

    /// Multiplicative decrease. Losses within `coalesce` of the previous collapse
    /// belong to the same window and are ignored. Returns whether cwnd changed.
    pub fn on_loss_event(&mut self, now: SimTime, coalesce: SimTime) -> bool {
        if let Some(last) = self.last_collapse {
            if now < last + coalesce {
                self.stats.coalesced_losses += 1;
                return false;
            }
        }
        let reduced = (self.cwnd as f64 * self.decrease()).floor() as u64;
        self.cwnd = reduced.max(self.params.min_cwnd);
        self.ssthresh = self.cwnd;
        self.avoid_credit = 0.0;
        self.last_collapse = Some(now);
        self.stats.loss_events += 1;
        true
    }

    pub fn on_timeout(&mut self) {
        self.ssthresh = (self.cwnd / 2).max(self.params.min_cwnd);
        self.cwnd = self.params.init_cwnd.max(self.params.min_cwnd);
        self.avoid_credit = 0.0;
        self.flight_size = 0;
        self.stats.timeouts += 1;
    }
}

/// Host-local view of which sessions currently carry time-critical data.
#[derive(Clone, Debug, Default)]
pub struct CcRegistry {
    sessions: BTreeMap<u32, bool>,
}

impl CcRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, session: u32) {
        self.sessions.entry(session).or_insert(false);
    }

    pub fn remove(&mut self, session: u32) {
        self.sessions.remove(&session);
    }

    pub fn set_time_critical(&mut self, session: u32, active: bool) {
        self.sessions.insert(session, active);
    }

    pub fn time_critical_count(&self) -> usize {
        self.sessions.values().filter(|&&tc| tc).count()
    }

    /// Mode for `session` given its own state and whether its peer announced time-critical traffic.
    pub fn mode_of(&self, session: u32, peer_time_critical: bool) -> CcMode {
        let own = self.sessions.get(&session).copied().unwrap_or(false);
        if own {
            return CcMode::TimeCritical;
        }
        let others = self.sessions.iter().any(|(&id, &tc)| tc && id != session);
        if others || peer_time_critical {
            CcMode::Deferring
        } else {
            CcMode::Normal
        }
    }
}
