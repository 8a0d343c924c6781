//! Passive per-direction decoders that turn an observed header stream into
//! loss estimates (L, Q, R, T) and RTT samples (spin).

use crate::trace::{Direction, TraceRecord};

/// Default Q-Block length N.
pub const DEFAULT_QBLOCK_LEN: u64 = 64;
/// Default reordering threshold: a new signal level is only assumed after
/// this many consecutive values of the new phase.
pub const DEFAULT_PHASE_THRESHOLD: u32 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mechanism {
    L,
    Q,
    R,
    T,
}

impl Mechanism {
    pub const ALL: [Mechanism; 4] = [Mechanism::L, Mechanism::Q, Mechanism::R, Mechanism::T];

    pub fn as_str(self) -> &'static str {
        match self {
            Mechanism::L => "L",
            Mechanism::Q => "Q",
            Mechanism::R => "R",
            Mechanism::T => "T",
        }
    }
}

/// Which part of the path a mechanism's estimate covers, for an observer of
/// the reported direction (segments are numbered along the direction of
/// travel, so segment 1 ends at the observation point).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathScope {
    /// Sender-side segment only (Q).
    Down1,
    /// Whole observed direction (L).
    Down1AndDown2,
    /// Everything except the segment behind the observer (R).
    ThreeQuarters,
    /// Full round trip (T).
    EndToEndRoundTrip,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub mechanism: Mechanism,
    pub packets_observed: u64,
    pub packets_lost_estimate: u64,
    pub loss_rate_estimate: f64,
    pub path_scope: PathScope,
    pub report_time: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RttSample {
    pub rtt: u64,
    pub edge_time: u64,
}

/// One cumulative measurement update, emitted whenever a decoder's estimate
/// changes. These rows form the time-course output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportRow {
    pub time: u64,
    pub observed: u64,
    pub lost: u64,
    pub rate: f64,
}

/// Square-wave phase tracker with a reordering threshold. A phase change is
/// committed only after `threshold` consecutive opposite-level packets;
/// stray opposite values below the threshold are credited to the current
/// phase.
#[derive(Debug, Clone)]
pub struct QPhaseDetector {
    threshold: u32,
    confirmed_level: Option<bool>,
    confirmed_count: u64,
    candidate_count: u32,
}

impl QPhaseDetector {
    pub fn new(threshold: u32) -> Self {
        assert!(threshold >= 1);
        QPhaseDetector {
            threshold,
            confirmed_level: None,
            confirmed_count: 0,
            candidate_count: 0,
        }
    }

    /// Feeds one observed level. Returns the length of the just-completed
    /// run when a phase change is committed.
    pub fn ingest(&mut self, level: bool) -> Option<u64> {
        match self.confirmed_level {
            None => {
                self.confirmed_level = Some(level);
                self.confirmed_count = 1;
                None
            }
            Some(current) if level == current => {
                self.confirmed_count += 1 + u64::from(self.candidate_count);
                self.candidate_count = 0;
                None
            }
            Some(_) => {
                self.candidate_count += 1;
                if self.candidate_count >= self.threshold {
                    let completed = self.confirmed_count;
                    self.confirmed_level = Some(level);
                    self.confirmed_count = u64::from(self.candidate_count);
                    self.candidate_count = 0;
                    Some(completed)
                } else {
                    None
                }
            }
        }
    }

    pub fn confirmed_level(&self) -> Option<bool> {
        self.confirmed_level
    }
}

impl Default for QPhaseDetector {
    fn default() -> Self {
        QPhaseDetector::new(DEFAULT_PHASE_THRESHOLD)
    }
}

/// Picks the Q-Block length from the first completed run lengths: the power
/// of two nearest to the median. Returns the deduced value and whether the
/// median was within 25% of it.
pub fn deduce_n(first_runs: &[u64]) -> (u64, bool) {
    assert!(first_runs.len() >= 3, "need at least 3 completed runs");
    let mut runs = first_runs.to_vec();
    runs.sort_unstable();
    let median = runs[runs.len() / 2].max(1);
    let mut best = 1u64;
    let mut best_dist = u64::MAX;
    for exp in 0..40 {
        let pow = 1u64 << exp;
        let dist = pow.abs_diff(median);
        if dist < best_dist {
            best = pow;
            best_dist = dist;
        }
    }
    let within = (median as f64 - best as f64).abs() <= 0.25 * best as f64;
    (best, within)
}

/// L-bit decoder: counts marked packets over observed packets.
#[derive(Debug, Default)]
pub struct LDecoder {
    total: u64,
    marks: u64,
    last_time: u64,
    first_report_time: Option<u64>,
    rows: Vec<ReportRow>,
}

impl LDecoder {
    pub fn ingest(&mut self, time: u64, l_mark: bool) {
        self.total += 1;
        self.last_time = time;
        if self.first_report_time.is_none() {
            // L measures cumulatively from the first observed packet.
            self.first_report_time = Some(time);
            self.push_row(time);
        }
        if l_mark {
            self.marks += 1;
            self.push_row(time);
        }
    }

    fn push_row(&mut self, time: u64) {
        self.rows.push(ReportRow {
            time,
            observed: self.total,
            lost: self.marks,
            rate: if self.total > 0 {
                self.marks as f64 / self.total as f64
            } else {
                0.0
            },
        });
    }

    pub fn report(&self) -> Option<LossReport> {
        if self.total == 0 {
            return None;
        }
        Some(LossReport {
            mechanism: Mechanism::L,
            packets_observed: self.total,
            packets_lost_estimate: self.marks,
            loss_rate_estimate: self.marks as f64 / self.total as f64,
            path_scope: PathScope::Down1AndDown2,
            report_time: self.last_time,
        })
    }

    pub fn first_report_time(&self) -> Option<u64> {
        self.first_report_time
    }

    pub fn rows(&self) -> &[ReportRow] {
        &self.rows
    }
}

/// Run-length accounting shared by the Q and R decoders: each completed run
/// of length `len` accounts for `k = max(1, round(len / n))` blocks, so a
/// whole block wiped out by burst loss merges its neighbours and stays
/// invisible.
#[derive(Debug, Default)]
struct RunAccounting {
    expected_total: u64,
    lost_signed: i64,
    last_time: u64,
    first_report_time: Option<u64>,
    rows: Vec<ReportRow>,
}

impl RunAccounting {
    fn account(&mut self, len: u64, time: u64, n: u64) {
        let k = (((len as f64) / (n as f64)).round() as u64).max(1);
        let expected = k * n;
        self.expected_total += expected;
        self.lost_signed += expected as i64 - len as i64;
        self.last_time = time;
        if self.first_report_time.is_none() {
            self.first_report_time = Some(time);
        }
        let (lost, rate) = self.totals();
        self.rows.push(ReportRow {
            time,
            observed: self.expected_total,
            lost,
            rate,
        });
    }

    fn totals(&self) -> (u64, f64) {
        let lost = self.lost_signed.max(0) as u64;
        let rate = if self.expected_total > 0 {
            lost as f64 / self.expected_total as f64
        } else {
            0.0
        };
        (lost, rate)
    }

    fn report(&self, mechanism: Mechanism, scope: PathScope) -> Option<LossReport> {
        if self.expected_total == 0 {
            return None; // no measurement yet
        }
        let (lost, rate) = self.totals();
        Some(LossReport {
            mechanism,
            packets_observed: self.expected_total,
            packets_lost_estimate: lost,
            loss_rate_estimate: rate,
            path_scope: scope,
            report_time: self.last_time,
        })
    }
}

/// Q-bit decoder. When `n` is not configured it is deduced from the first
/// three completed runs; runs seen before that are buffered and accounted
/// once `n` is fixed.
#[derive(Debug)]
pub struct QDecoder {
    detector: QPhaseDetector,
    n: Option<u64>,
    deduction_off_nominal: bool,
    warmup_runs: Vec<(u64, u64)>,
    acc: RunAccounting,
}

impl QDecoder {
    pub fn new(threshold: u32, n: Option<u64>) -> Self {
        QDecoder {
            detector: QPhaseDetector::new(threshold),
            n,
            deduction_off_nominal: false,
            warmup_runs: Vec::new(),
            acc: RunAccounting::default(),
        }
    }

    pub fn ingest(&mut self, time: u64, q_mark: bool) {
        if let Some(len) = self.detector.ingest(q_mark) {
            self.complete_run(len, time);
        }
    }

    fn complete_run(&mut self, len: u64, time: u64) {
        match self.n {
            Some(n) => self.acc.account(len, time, n),
            None => {
                self.warmup_runs.push((len, time));
                if self.warmup_runs.len() >= 3 {
                    let lens: Vec<u64> = self.warmup_runs.iter().map(|&(l, _)| l).collect();
                    let (n, within) = deduce_n(&lens);
                    self.deduction_off_nominal = !within;
                    self.n = Some(n);
                    for (l, t) in std::mem::take(&mut self.warmup_runs) {
                        self.acc.account(l, t, n);
                    }
                }
            }
        }
    }

    /// Block length in use, once known or deduced.
    pub fn n(&self) -> Option<u64> {
        self.n
    }

    /// True when `n` had to be deduced from a median more than 25% away
    /// from the nearest power of two.
    pub fn deduction_off_nominal(&self) -> bool {
        self.deduction_off_nominal
    }

    pub fn report(&self) -> Option<LossReport> {
        self.acc.report(Mechanism::Q, PathScope::Down1)
    }

    pub fn first_report_time(&self) -> Option<u64> {
        self.acc.first_report_time
    }

    pub fn rows(&self) -> &[ReportRow] {
        &self.acc.rows
    }
}

impl Default for QDecoder {
    fn default() -> Self {
        QDecoder::new(DEFAULT_PHASE_THRESHOLD, None)
    }
}

/// R-bit decoder. Uses the same run-length accounting as Q against the
/// block length of the companion Q decoder of the same direction. The first
/// completed run is discarded: the observer cannot know how many R packets
/// were initially transmitted.
#[derive(Debug)]
pub struct RDecoder {
    detector: QPhaseDetector,
    first_run_discarded: bool,
    buffered: Vec<(u64, u64)>,
    acc: RunAccounting,
}

impl RDecoder {
    pub fn new(threshold: u32) -> Self {
        RDecoder {
            detector: QPhaseDetector::new(threshold),
            first_run_discarded: false,
            buffered: Vec::new(),
            acc: RunAccounting::default(),
        }
    }

    /// `n_hint` is the companion Q decoder's block length; completed runs
    /// are buffered until it becomes available.
    pub fn ingest(&mut self, time: u64, r_mark: bool, n_hint: Option<u64>) {
        if let Some(len) = self.detector.ingest(r_mark) {
            if !self.first_run_discarded {
                self.first_run_discarded = true;
            } else {
                self.buffered.push((len, time));
            }
        }
        if let Some(n) = n_hint {
            for (len, t) in self.buffered.drain(..) {
                self.acc.account(len, t, n);
            }
        }
    }

    pub fn report(&self) -> Option<LossReport> {
        self.acc.report(Mechanism::R, PathScope::ThreeQuarters)
    }

    pub fn first_report_time(&self) -> Option<u64> {
        self.acc.first_report_time
    }

    pub fn rows(&self) -> &[ReportRow] {
        &self.acc.rows
    }
}

impl Default for RDecoder {
    fn default() -> Self {
        RDecoder::new(DEFAULT_PHASE_THRESHOLD)
    }
}

/// T-bit decoder: groups marked packets into trains (a train ends when no
/// marked packet is seen for one spin period), pairs consecutive trains and
/// takes the larger as the generation phase.
#[derive(Debug, Default)]
pub struct TDecoder {
    current_train: u64,
    last_mark_time: Option<u64>,
    pending_first: Option<u64>,
    gen_total: u64,
    lost_total: u64,
    last_time: u64,
    first_report_time: Option<u64>,
    rows: Vec<ReportRow>,
}

impl TDecoder {
    /// `rtt_hint` is the latest spin RTT estimate of the same direction;
    /// until one exists trains are not delimited.
    pub fn ingest(&mut self, time: u64, t_mark: bool, rtt_hint: Option<u64>) {
        self.last_time = time;
        if self.current_train > 0 {
            if let (Some(last), Some(rtt)) = (self.last_mark_time, rtt_hint) {
                if time.saturating_sub(last) > rtt {
                    self.close_train(time);
                }
            }
        }
        if t_mark {
            self.current_train += 1;
            self.last_mark_time = Some(time);
        }
    }

    fn close_train(&mut self, time: u64) {
        let len = self.current_train;
        self.current_train = 0;
        match self.pending_first.take() {
            None => self.pending_first = Some(len),
            Some(other) => {
                let gen = other.max(len);
                let refl = other.min(len);
                if gen > 0 {
                    self.gen_total += gen;
                    self.lost_total += gen - refl;
                    if self.first_report_time.is_none() {
                        self.first_report_time = Some(time);
                    }
                    self.rows.push(ReportRow {
                        time,
                        observed: self.gen_total,
                        lost: self.lost_total,
                        rate: self.lost_total as f64 / self.gen_total as f64,
                    });
                }
            }
        }
    }

    pub fn report(&self) -> Option<LossReport> {
        if self.gen_total == 0 {
            return None;
        }
        Some(LossReport {
            mechanism: Mechanism::T,
            packets_observed: self.gen_total,
            packets_lost_estimate: self.lost_total,
            loss_rate_estimate: self.lost_total as f64 / self.gen_total as f64,
            path_scope: PathScope::EndToEndRoundTrip,
            report_time: self.last_time,
        })
    }

    pub fn first_report_time(&self) -> Option<u64> {
        self.first_report_time
    }

    pub fn rows(&self) -> &[ReportRow] {
        &self.rows
    }
}

/// Spin-bit decoder: every value transition yields an RTT sample measured
/// since the previous transition; the first edge only arms the clock.
#[derive(Debug, Default)]
pub struct SpinDecoder {
    last_spin: Option<bool>,
    last_edge_time: Option<u64>,
    samples: Vec<RttSample>,
}

impl SpinDecoder {
    pub fn ingest(&mut self, time: u64, spin: bool) {
        if let Some(last) = self.last_spin {
            if spin != last {
                if let Some(prev_edge) = self.last_edge_time {
                    self.samples.push(RttSample {
                        rtt: time - prev_edge,
                        edge_time: time,
                    });
                }
                self.last_edge_time = Some(time);
            }
        }
        self.last_spin = Some(spin);
    }

    pub fn samples(&self) -> &[RttSample] {
        &self.samples
    }

    pub fn latest_rtt(&self) -> Option<u64> {
        self.samples.last().map(|s| s.rtt)
    }

    pub fn median_rtt(&self) -> Option<u64> {
        if self.samples.is_empty() {
            return None;
        }
        let mut rtts: Vec<u64> = self.samples.iter().map(|s| s.rtt).collect();
        rtts.sort_unstable();
        Some(rtts[rtts.len() / 2])
    }
}

/// All decoders for one flow direction, fed from a single header stream.
#[derive(Debug)]
pub struct DirectionObserver {
    pub direction: Direction,
    pub spin: SpinDecoder,
    pub l: LDecoder,
    pub q: QDecoder,
    pub r: RDecoder,
    pub t: TDecoder,
    bytes_observed: u64,
    packets_observed: u64,
    first_report_bytes: [Option<u64>; 4],
}

impl DirectionObserver {
    pub fn new(direction: Direction, threshold: u32, n: Option<u64>) -> Self {
        DirectionObserver {
            direction,
            spin: SpinDecoder::default(),
            l: LDecoder::default(),
            q: QDecoder::new(threshold, n),
            r: RDecoder::new(threshold),
            t: TDecoder::default(),
            bytes_observed: 0,
            packets_observed: 0,
            first_report_bytes: [None; 4],
        }
    }

    pub fn ingest(&mut self, rec: &TraceRecord) {
        debug_assert_eq!(rec.direction, self.direction);
        let time = rec.observe_time_ns;
        let h = &rec.header;
        self.bytes_observed += u64::from(h.size_bytes);
        self.packets_observed += 1;
        self.spin.ingest(time, h.spin);
        self.l.ingest(time, h.l);
        self.q.ingest(time, h.q);
        let n_hint = self.q.n();
        self.r.ingest(time, h.r, n_hint);
        self.t.ingest(time, h.t, self.spin.latest_rtt());

        let firsts = [
            self.l.first_report_time(),
            self.q.first_report_time(),
            self.t.first_report_time(),
            self.r.first_report_time(),
        ];
        for (slot, first) in self.first_report_bytes.iter_mut().zip(firsts) {
            if slot.is_none() && first.is_some() {
                *slot = Some(self.bytes_observed);
            }
        }
    }

    pub fn report(&self, mechanism: Mechanism) -> Option<LossReport> {
        match mechanism {
            Mechanism::L => self.l.report(),
            Mechanism::Q => self.q.report(),
            Mechanism::R => self.r.report(),
            Mechanism::T => self.t.report(),
        }
    }

    pub fn reports(&self) -> Vec<LossReport> {
        Mechanism::ALL
            .into_iter()
            .filter_map(|m| self.report(m))
            .collect()
    }

    pub fn rows(&self, mechanism: Mechanism) -> &[ReportRow] {
        match mechanism {
            Mechanism::L => self.l.rows(),
            Mechanism::Q => self.q.rows(),
            Mechanism::R => self.r.rows(),
            Mechanism::T => self.t.rows(),
        }
    }

    /// Cumulative observed bytes in this direction at the time the
    /// mechanism produced its first measurement.
    pub fn first_report_bytes(&self, mechanism: Mechanism) -> Option<u64> {
        match mechanism {
            Mechanism::L => self.first_report_bytes[0],
            Mechanism::Q => self.first_report_bytes[1],
            Mechanism::T => self.first_report_bytes[2],
            Mechanism::R => self.first_report_bytes[3],
        }
    }

    pub fn packets_observed(&self) -> u64 {
        self.packets_observed
    }

    pub fn bytes_observed(&self) -> u64 {
        self.bytes_observed
    }
}
