//! Sender/receiver marking state machines for the spin, L, Q, R, and T bits
//! plus the transport-style loss detection the L bit relies on.

use std::collections::VecDeque;

use crate::observer::QPhaseDetector;

pub const DEFAULT_PACKET_THRESHOLD: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Client,
    Server,
}

/// Spin bit: the server always reflects the received value, the client
/// inverts it, so the value flips once per RTT.
#[derive(Debug, Clone)]
pub struct SpinState {
    pub role: Role,
    current_spin: bool,
    last_received_spin: Option<bool>,
}

impl SpinState {
    pub fn new(role: Role) -> Self {
        SpinState {
            role,
            current_spin: false,
            last_received_spin: None,
        }
    }

    /// Updates the outgoing value for one received spin bit. Returns true
    /// when the received value changed since the previous packet (a spin
    /// edge as seen by this endpoint).
    pub fn on_receive(&mut self, incoming_spin: bool) -> bool {
        let edge = self.last_received_spin != Some(incoming_spin) && self.last_received_spin.is_some();
        self.last_received_spin = Some(incoming_spin);
        self.current_spin = match self.role {
            Role::Server => incoming_spin,
            Role::Client => !incoming_spin,
        };
        edge
    }

    pub fn current(&self) -> bool {
        self.current_spin
    }

    pub fn last_received(&self) -> Option<bool> {
        self.last_received_spin
    }
}

/// L bit: one mark per packet declared lost by the transport.
#[derive(Debug, Clone, Default)]
pub struct LState {
    counter_l: u64,
}

impl LState {
    pub fn on_loss_detected(&mut self, n_lost: u64) {
        self.counter_l += n_lost;
    }

    /// Called once per outgoing packet.
    pub fn next_mark(&mut self) -> bool {
        if self.counter_l > 0 {
            self.counter_l -= 1;
            true
        } else {
            false
        }
    }

    pub fn counter(&self) -> u64 {
        self.counter_l
    }
}

/// Q bit: square wave toggling every `n` packets.
#[derive(Debug, Clone)]
pub struct QState {
    n: u64,
    sent_in_block: u64,
    current_level: bool,
}

impl QState {
    pub fn new(n: u64) -> Self {
        assert!(n >= 1);
        QState {
            n,
            sent_in_block: 0,
            current_level: false,
        }
    }

    /// Called once per outgoing packet.
    pub fn next_mark(&mut self) -> bool {
        let level = self.current_level;
        self.sent_in_block += 1;
        if self.sent_in_block == self.n {
            self.sent_in_block = 0;
            self.current_level = !self.current_level;
        }
        level
    }

    pub fn n(&self) -> u64 {
        self.n
    }
}

/// R bit: reflects the average number of packets received per incoming
/// Q-Block. Embeds the observer-side phase detector for the incoming Q
/// stream.
#[derive(Debug, Clone)]
pub struct RState {
    phase_detector: QPhaseDetector,
    started: bool,
    current_level: bool,
    marking_target: u64,
    marked_in_r_block: u64,
    qblocks_since_r_start: u64,
    packets_since_r_start: u64,
    pending_block: Option<u64>,
}

impl RState {
    pub fn new(threshold: u32) -> Self {
        RState {
            phase_detector: QPhaseDetector::new(threshold),
            started: false,
            current_level: false,
            marking_target: 0,
            marked_in_r_block: 0,
            qblocks_since_r_start: 0,
            packets_since_r_start: 0,
            pending_block: None,
        }
    }

    /// Feeds the Q bit of one received packet.
    pub fn on_receive(&mut self, incoming_q: bool) {
        if let Some(count) = self.phase_detector.ingest(incoming_q) {
            self.on_block_complete(count);
        }
    }

    fn on_block_complete(&mut self, count: u64) {
        if self.in_progress() {
            // A Q-Block ended before the current R-Block completed: retarget
            // to the average packets per Q-Block since this R-Block started.
            self.qblocks_since_r_start += 1;
            self.packets_since_r_start += count;
            let avg = ((self.packets_since_r_start as f64)
                / (self.qblocks_since_r_start as f64))
                .round() as u64;
            self.marking_target = avg.saturating_sub(self.marked_in_r_block);
            if self.marking_target == 0 {
                // Average dropped below what we already marked; the block
                // count seeds the next R-Block.
                self.pending_block = Some(count);
            }
        } else {
            self.start_r_block(count);
        }
    }

    fn start_r_block(&mut self, count: u64) {
        self.current_level = if self.started {
            !self.current_level
        } else {
            self.started = true;
            true
        };
        self.marking_target = count;
        self.marked_in_r_block = 0;
        self.qblocks_since_r_start = 1;
        self.packets_since_r_start = count;
        self.pending_block = None;
    }

    fn in_progress(&self) -> bool {
        self.marking_target > 0
    }

    /// Called once per outgoing packet. Unset until the first incoming
    /// Q-Block completes; afterwards holds the level while idle.
    pub fn next_mark(&mut self) -> bool {
        if !self.started {
            return false;
        }
        let level = self.current_level;
        if self.marking_target > 0 {
            self.marking_target -= 1;
            self.marked_in_r_block += 1;
            if self.marking_target == 0 {
                if let Some(count) = self.pending_block.take() {
                    self.start_r_block(count);
                }
            }
        }
        level
    }

    pub fn marking_target(&self) -> u64 {
        self.marking_target
    }

    pub fn current_level(&self) -> bool {
        self.current_level
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TPhase {
    Generation,
    PauseA,
    Reflection,
    PauseB,
}

/// Client side of the T bit: generation / pause / reflection / pause cycle
/// synchronized to observed spin edges.
#[derive(Debug, Clone)]
pub struct TClientState {
    phase: TPhase,
    edges_in_phase: u32,
    generation_sent: u64,
    reflected_received: u64,
    reflection_budget: u64,
    marked_in_reflection: u64,
    last_edge_time: Option<u64>,
    edge_interval: Option<u64>,
    last_t_rx: Option<u64>,
    ambiguous_marks: u64,
}

impl TClientState {
    pub fn new() -> Self {
        TClientState {
            phase: TPhase::Generation,
            edges_in_phase: 0,
            generation_sent: 0,
            reflected_received: 0,
            reflection_budget: 0,
            marked_in_reflection: 0,
            last_edge_time: None,
            edge_interval: None,
            last_t_rx: None,
            ambiguous_marks: 0,
        }
    }

    /// Called once per received packet. `spin_edge` is true when the
    /// observed spin value transitioned with this packet.
    pub fn step(&mut self, now: u64, spin_edge: bool, received_t_mark: bool) {
        if spin_edge {
            self.edges_in_phase += 1;
            if let Some(prev) = self.last_edge_time {
                self.edge_interval = Some(now - prev);
            }
            self.last_edge_time = Some(now);
        }
        if received_t_mark {
            self.last_t_rx = Some(now);
            match self.phase {
                // Reflected marks start arriving while the generation train
                // is still being sent; both phases collect them.
                TPhase::Generation | TPhase::PauseA => self.reflected_received += 1,
                // Marks arriving here are the server's echo of our own
                // reflection train; their phase assignment is ambiguous, so
                // they are only surfaced as a counter.
                TPhase::Reflection | TPhase::PauseB => self.ambiguous_marks += 1,
            }
        }
        self.advance(now);
    }

    fn advance(&mut self, now: u64) {
        match self.phase {
            TPhase::Generation => {
                if self.edges_in_phase >= 2 {
                    self.enter(TPhase::PauseA);
                }
            }
            TPhase::PauseA => {
                if self.edges_in_phase >= 1 && self.incoming_quiet(now) {
                    self.reflection_budget = self.reflected_received;
                    self.marked_in_reflection = 0;
                    self.enter(TPhase::Reflection);
                    if self.reflection_budget == 0 {
                        self.enter(TPhase::PauseB);
                    }
                }
            }
            TPhase::Reflection => {
                if self.marked_in_reflection >= self.reflection_budget {
                    self.enter(TPhase::PauseB);
                }
            }
            TPhase::PauseB => {
                if self.edges_in_phase >= 1 && self.incoming_quiet(now) {
                    self.generation_sent = 0;
                    self.reflected_received = 0;
                    self.enter(TPhase::Generation);
                }
            }
        }
    }

    /// No T-marked packet arrived for half a spin period.
    fn incoming_quiet(&self, now: u64) -> bool {
        match self.edge_interval {
            None => false,
            Some(interval) => match self.last_t_rx {
                None => true,
                Some(last) => now.saturating_sub(last) >= interval / 2,
            },
        }
    }

    fn enter(&mut self, phase: TPhase) {
        self.phase = phase;
        self.edges_in_phase = 0;
    }

    /// Called once per outgoing packet.
    pub fn next_mark(&mut self) -> bool {
        match self.phase {
            TPhase::Generation => {
                self.generation_sent += 1;
                true
            }
            TPhase::Reflection => {
                if self.marked_in_reflection < self.reflection_budget {
                    self.marked_in_reflection += 1;
                    if self.marked_in_reflection >= self.reflection_budget {
                        self.enter(TPhase::PauseB);
                    }
                    true
                } else {
                    self.enter(TPhase::PauseB);
                    false
                }
            }
            TPhase::PauseA | TPhase::PauseB => false,
        }
    }

    pub fn phase(&self) -> TPhase {
        self.phase
    }

    pub fn generation_sent(&self) -> u64 {
        self.generation_sent
    }

    pub fn reflection_budget(&self) -> u64 {
        self.reflection_budget
    }

    /// Received marks that could not be attributed to a phase cleanly.
    pub fn ambiguous_marks(&self) -> u64 {
        self.ambiguous_marks
    }
}

impl Default for TClientState {
    fn default() -> Self {
        TClientState::new()
    }
}

/// Server side of the T bit: reflects as many marked packets as received.
#[derive(Debug, Clone, Default)]
pub struct TServerState {
    credit: u64,
    received_total: u64,
    emitted_total: u64,
}

impl TServerState {
    pub fn on_receive(&mut self, received_t_mark: bool) {
        if received_t_mark {
            self.credit += 1;
            self.received_total += 1;
        }
    }

    /// Called once per outgoing packet.
    pub fn next_mark(&mut self) -> bool {
        if self.credit > 0 {
            self.credit -= 1;
            self.emitted_total += 1;
            true
        } else {
            false
        }
    }

    pub fn credit(&self) -> u64 {
        self.credit
    }

    pub fn received_total(&self) -> u64 {
        self.received_total
    }

    pub fn emitted_total(&self) -> u64 {
        self.emitted_total
    }
}

/// Coalesced set of received sequence numbers, kept per incoming direction
/// so outgoing packets can carry acknowledgment ranges.
#[derive(Debug, Clone, Default)]
pub struct RecvRanges {
    ranges: Vec<(u64, u64)>, // sorted, disjoint, inclusive
}

impl RecvRanges {
    pub fn insert(&mut self, seq: u64) {
        // Common case: extends the newest range.
        if let Some(last) = self.ranges.last_mut() {
            if seq == last.1 + 1 {
                last.1 = seq;
                return;
            }
            if seq > last.1 + 1 {
                self.ranges.push((seq, seq));
                return;
            }
        } else {
            self.ranges.push((seq, seq));
            return;
        }
        // Out-of-order or duplicate: full insert with merging. `idx` is the
        // first range that seq could touch (hi + 1 >= seq).
        let idx = self.ranges.partition_point(|&(_, hi)| hi + 1 < seq);
        if idx == self.ranges.len() {
            self.ranges.push((seq, seq));
            return;
        }
        let (lo, hi) = self.ranges[idx];
        if lo <= seq && seq <= hi {
            return; // duplicate
        }
        if seq == hi + 1 {
            self.ranges[idx].1 = seq;
            // May now touch the next range.
            if idx + 1 < self.ranges.len() && self.ranges[idx].1 + 1 == self.ranges[idx + 1].0 {
                self.ranges[idx].1 = self.ranges[idx + 1].1;
                self.ranges.remove(idx + 1);
            }
            return;
        }
        if seq + 1 == lo {
            self.ranges[idx].0 = seq;
        } else {
            self.ranges.insert(idx, (seq, seq));
        }
        // May now touch the previous range.
        if idx > 0 && self.ranges[idx - 1].1 + 1 == self.ranges[idx].0 {
            self.ranges[idx - 1].1 = self.ranges[idx].1;
            self.ranges.remove(idx);
        }
    }

    /// Newest `cap` ranges for piggybacking on an outgoing packet.
    pub fn tail(&self, cap: usize) -> Vec<(u64, u64)> {
        let start = self.ranges.len().saturating_sub(cap);
        self.ranges[start..].to_vec()
    }

    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }
}

fn in_ranges(ranges: &[(u64, u64)], seq: u64) -> bool {
    ranges
        .binary_search_by(|&(lo, hi)| {
            if seq < lo {
                std::cmp::Ordering::Greater
            } else if seq > hi {
                std::cmp::Ordering::Less
            } else {
                std::cmp::Ordering::Equal
            }
        })
        .is_ok()
}

#[derive(Debug, Clone, Copy)]
struct SentPacket {
    seq: u64,
    sent_at: u64,
}

/// Outcome of processing one acknowledgment.
#[derive(Debug, Default)]
pub struct AckOutcome {
    /// Newly acknowledged (seq, sent_at) pairs.
    pub acked: Vec<(u64, u64)>,
    /// Newly declared-lost (seq, sent_at) pairs; each seq reported once.
    pub lost: Vec<(u64, u64)>,
}

/// QUIC-style loss detection: a packet is lost once `packet_threshold`
/// higher packets are acknowledged, or once it is older than 9/8 of the
/// smoothed RTT while newer packets are acknowledged.
#[derive(Debug, Clone)]
pub struct LossDetector {
    packet_threshold: u64,
    pending: VecDeque<SentPacket>,
    largest_acked: Option<u64>,
    srtt_ns: Option<f64>,
}

impl LossDetector {
    pub fn new(packet_threshold: u64) -> Self {
        LossDetector {
            packet_threshold,
            pending: VecDeque::new(),
            largest_acked: None,
            srtt_ns: None,
        }
    }

    pub fn on_packet_sent(&mut self, seq: u64, now: u64) {
        debug_assert!(self.pending.back().is_none_or(|p| p.seq < seq));
        self.pending.push_back(SentPacket { seq, sent_at: now });
    }

    pub fn on_ack(&mut self, ranges: &[(u64, u64)], now: u64) -> AckOutcome {
        let mut out = AckOutcome::default();
        let Some(&(_, largest_in_ack)) = ranges.last() else {
            return out;
        };
        if self.largest_acked.is_none_or(|la| largest_in_ack > la) {
            self.largest_acked = Some(largest_in_ack);
        }
        let largest_acked = self.largest_acked.unwrap();

        while let Some(front) = self.pending.front().copied() {
            if front.seq > largest_acked {
                break;
            }
            if in_ranges(ranges, front.seq) {
                if front.seq == largest_in_ack {
                    self.rtt_sample(now.saturating_sub(front.sent_at));
                }
                out.acked.push((front.seq, front.sent_at));
                self.pending.pop_front();
            } else if largest_acked >= front.seq + self.packet_threshold
                || self.past_time_threshold(front.sent_at, now)
            {
                out.lost.push((front.seq, front.sent_at));
                self.pending.pop_front();
            } else {
                break;
            }
        }
        out
    }

    /// Declares the oldest in-flight packet lost when it has been pending
    /// longer than `timeout_ns`. Used by retransmission timers when no acks
    /// arrive at all.
    pub fn force_timeout(&mut self, now: u64, timeout_ns: u64) -> Vec<(u64, u64)> {
        let mut lost = Vec::new();
        while let Some(front) = self.pending.front().copied() {
            if now.saturating_sub(front.sent_at) > timeout_ns {
                lost.push((front.seq, front.sent_at));
                self.pending.pop_front();
            } else {
                break;
            }
        }
        lost
    }

    fn past_time_threshold(&self, sent_at: u64, now: u64) -> bool {
        match self.srtt_ns {
            Some(srtt) => (now.saturating_sub(sent_at)) as f64 > srtt * 9.0 / 8.0,
            None => false,
        }
    }

    fn rtt_sample(&mut self, sample: u64) {
        let sample = sample as f64;
        self.srtt_ns = Some(match self.srtt_ns {
            None => sample,
            Some(srtt) => srtt * 7.0 / 8.0 + sample / 8.0,
        });
    }

    pub fn srtt_ns(&self) -> Option<f64> {
        self.srtt_ns
    }

    pub fn in_flight(&self) -> usize {
        self.pending.len()
    }
}

impl Default for LossDetector {
    fn default() -> Self {
        LossDetector::new(DEFAULT_PACKET_THRESHOLD)
    }
}
