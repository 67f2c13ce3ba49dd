use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::cc::{CcMode, CcState};
use crate::flows::{RecvFlow, SendFlows};
use crate::netsim::{Address, SimTime};
use crate::wire::COOKIE_LEN;

use super::{AppId, Epd};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SessionHandle(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SessionState {
    Idle,
    IHelloSent,
    RHelloSent,
    KeyingSent,
    Open,
    Closed,
}

impl fmt::Display for SessionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SessionState::Idle => "idle",
            SessionState::IHelloSent => "ihello-sent",
            SessionState::RHelloSent => "rhello-sent",
            SessionState::KeyingSent => "keying-sent",
            SessionState::Open => "open",
            SessionState::Closed => "closed",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Initiator,
    Responder,
}

/// A one-shot timer identified by generation; stale expiries are ignored.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct TimerSlot {
    pub gen: u64,
    pub deadline: Option<SimTime>,
}

impl TimerSlot {
    pub fn arm(&mut self, at: SimTime) -> u64 {
        self.gen += 1;
        self.deadline = Some(at);
        self.gen
    }

    pub fn disarm(&mut self) {
        self.gen += 1;
        self.deadline = None;
    }

    pub fn is_armed(&self) -> bool {
        self.deadline.is_some()
    }

    /// Consumes the expiry if `gen` is current.
    pub fn fire(&mut self, gen: u64) -> bool {
        if gen == self.gen && self.deadline.is_some() {
            self.deadline = None;
            true
        } else {
            false
        }
    }
}

/// Smoothed RTT with gain 1/8 and variance gain 1/4.
#[derive(Clone, Copy, Debug, Default)]
pub struct RttEstimator {
    srtt: Option<u64>,
    rttvar: u64,
}

impl RttEstimator {
    pub fn sample(&mut self, rtt: SimTime) {
        let r = rtt.as_micros();
        match self.srtt {
            None => {
                self.srtt = Some(r);
                self.rttvar = r / 2;
            }
            Some(s) => {
                self.rttvar = (3 * self.rttvar + s.abs_diff(r)) / 4;
                self.srtt = Some((7 * s + r) / 8);
            }
        }
    }

    pub fn srtt(&self) -> Option<SimTime> {
        self.srtt.map(SimTime::from_micros)
    }

    pub fn rttvar(&self) -> SimTime {
        SimTime::from_micros(self.rttvar)
    }

    /// max(min, SRTT + 4·RTTVAR), or `initial` before the first sample.
    pub fn rto(&self, min: SimTime, initial: SimTime) -> SimTime {
        match self.srtt {
            None => initial,
            Some(s) => SimTime::from_micros(s + 4 * self.rttvar).max(min),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SessionCounters {
    pub packets_in: u64,
    pub packets_out: u64,
    pub handshake_packets_out: u64,
    pub handshake_retries: u64,
    pub mobility_events: u64,
    pub rto_expiries: u64,
    pub window_probes: u64,
}

/// Bidirectional relationship with one peer.
#[derive(Debug)]
pub struct Session {
    pub handle: SessionHandle,
    pub role: Role,
    pub state: SessionState,
    /// Id the peer puts on packets addressed to us.
    pub local_sid: u32,
    /// Id we put on packets addressed to the peer; zero until learned.
    pub remote_sid: u32,
    pub local_epd: Epd,
    pub remote_epd: Option<Epd>,
    pub app: AppId,
    pub peer_address: Option<Address>,
    pub candidates: Vec<Address>,
    pub peer_rcv_buffer: u64,
    pub peer_time_critical: bool,
    pub cc: CcState,
    pub rtt: RttEstimator,
    pub send: SendFlows,
    pub recv: BTreeMap<u16, RecvFlow>,
    pub counters: SessionCounters,
    pub(crate) tag: u32,
    pub(crate) cookie: [u8; COOKIE_LEN],
    pub(crate) handshake_attempts: u32,
    pub(crate) handshake_timer: TimerSlot,
    pub(crate) rto_timer: TimerSlot,
    pub(crate) rto_backoff: u64,
    pub(crate) ack_timers: BTreeMap<u16, TimerSlot>,
    pub(crate) persist_timers: BTreeMap<u16, TimerSlot>,
    pub(crate) ack_now: BTreeSet<u16>,
    pub(crate) last_cc_sample: Option<(u64, u64, CcMode)>,
}

impl Session {
    pub fn is_open(&self) -> bool {
        self.state == SessionState::Open
    }

    pub fn rto(&self, min: SimTime, initial: SimTime, max: SimTime) -> SimTime {
        self.rtt.rto(min, initial).times(self.rto_backoff).min(max)
    }

    pub fn rto_deadline(&self) -> Option<SimTime> {
        self.rto_timer.deadline
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rto_from_samples() {
        let mut r = RttEstimator::default();
        let min = SimTime::from_millis(200);
        let init = SimTime::from_secs(1);
        assert_eq!(r.rto(min, init), init);
        r.sample(SimTime::from_millis(40));
        // 40 + 4 * 20 = 120 -> clamped
        assert_eq!(r.rto(min, init), min);
        for _ in 0..200 {
            r.sample(SimTime::from_millis(300));
        }
        let rto = r.rto(min, init).as_micros();
        assert!((300_000..=301_000).contains(&rto), "{rto}");
    }

    #[test]
    fn timer_generations() {
        let mut t = TimerSlot::default();
        let g1 = t.arm(SimTime::from_secs(1));
        let g2 = t.arm(SimTime::from_secs(2));
        assert!(!t.fire(g1));
        assert!(t.fire(g2));
        assert!(!t.fire(g2));
        let g3 = t.arm(SimTime::from_secs(3));
        t.disarm();
        assert!(!t.fire(g3));
    }
}
