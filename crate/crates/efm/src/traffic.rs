//! Traffic patterns: symmetric constant-rate flows and congestion-controlled
//! downloads with a configurable ACK ratio.

use serde::{Deserialize, Serialize};

use crate::trace::DEFAULT_PACKET_SIZE;

/// Symmetric open-loop constant-bit-rate traffic; loss never changes the
/// send schedule.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CbrConfig {
    /// Packets per second, per direction.
    pub rate_pps: u64,
    /// Packets to send, per direction.
    pub total_packets: u64,
    pub packet_size: u32,
}

impl Default for CbrConfig {
    fn default() -> Self {
        CbrConfig {
            rate_pps: 10_000,
            total_packets: 1_000_000,
            packet_size: DEFAULT_PACKET_SIZE,
        }
    }
}

impl CbrConfig {
    /// Send time of packet `idx`, or None past the configured volume.
    pub fn next_send(&self, idx: u64) -> Option<u64> {
        if idx >= self.total_packets {
            return None;
        }
        Some(idx * 1_000_000_000 / self.rate_pps)
    }
}

/// Asymmetric download: the server streams `volume_bytes` to the client,
/// the client acknowledges every `ack_ratio` received data packets.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DownloadConfig {
    pub volume_bytes: u64,
    pub packet_size: u32,
    /// Data packets per acknowledgment packet.
    pub ack_ratio: u32,
    /// ACK packet size on the wire; ACKs are real packets carrying all
    /// measurement bits.
    pub ack_size: u32,
}

impl Default for DownloadConfig {
    fn default() -> Self {
        DownloadConfig {
            volume_bytes: 50_000,
            packet_size: DEFAULT_PACKET_SIZE,
            ack_ratio: 2,
            ack_size: 60,
        }
    }
}

impl DownloadConfig {
    pub fn data_packets(&self) -> u64 {
        self.volume_bytes.div_ceil(u64::from(self.packet_size))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CcMode {
    SlowStart,
    CongestionAvoidance,
}

/// Simplified New Reno: slow start, congestion avoidance, multiplicative
/// decrease on loss. No fast-recovery subtleties, no pacing.
#[derive(Debug, Clone)]
pub struct NewRenoState {
    cwnd: f64,
    ssthresh: f64,
    mode: CcMode,
}

impl NewRenoState {
    pub fn new(initial_cwnd: f64) -> Self {
        NewRenoState {
            cwnd: initial_cwnd.max(2.0),
            ssthresh: f64::INFINITY,
            mode: CcMode::SlowStart,
        }
    }

    pub fn on_ack(&mut self) {
        match self.mode {
            CcMode::SlowStart => {
                self.cwnd += 1.0;
                if self.cwnd >= self.ssthresh {
                    self.mode = CcMode::CongestionAvoidance;
                }
            }
            CcMode::CongestionAvoidance => {
                self.cwnd += 1.0 / self.cwnd;
            }
        }
    }

    pub fn on_loss(&mut self) {
        self.ssthresh = (self.cwnd / 2.0).max(2.0);
        self.cwnd = self.ssthresh;
        self.mode = CcMode::CongestionAvoidance;
    }

    pub fn cwnd_packets(&self) -> u64 {
        self.cwnd as u64
    }

    pub fn cwnd(&self) -> f64 {
        self.cwnd
    }

    pub fn mode(&self) -> CcMode {
        self.mode
    }
}

impl Default for NewRenoState {
    fn default() -> Self {
        NewRenoState::new(10.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cbr_schedule_is_even() {
        let cfg = CbrConfig {
            rate_pps: 1000,
            total_packets: 5,
            packet_size: 1250,
        };
        let times: Vec<Option<u64>> = (0..6).map(|i| cfg.next_send(i)).collect();
        assert_eq!(
            times,
            vec![
                Some(0),
                Some(1_000_000),
                Some(2_000_000),
                Some(3_000_000),
                Some(4_000_000),
                None
            ]
        );
    }

    #[test]
    fn cbr_run_length() {
        let cfg = CbrConfig {
            rate_pps: 10_000,
            total_packets: 1_000_000,
            packet_size: 1250,
        };
        // Last packet goes out just shy of 100 s.
        assert_eq!(cfg.next_send(999_999), Some(99_999_900_000));
    }

    #[test]
    fn download_packet_counts() {
        let cfg = DownloadConfig {
            volume_bytes: 50_000,
            ..Default::default()
        };
        assert_eq!(cfg.data_packets(), 40);
        let big = DownloadConfig {
            volume_bytes: 50_000_000,
            ..Default::default()
        };
        assert_eq!(big.data_packets(), 40_000);
    }

    #[test]
    fn slow_start_doubles_per_round() {
        let mut cc = NewRenoState::new(10.0);
        for _ in 0..10 {
            cc.on_ack();
        }
        assert_eq!(cc.cwnd_packets(), 20);
    }

    #[test]
    fn loss_halves_cwnd() {
        let mut cc = NewRenoState::new(16.0);
        cc.on_loss();
        assert_eq!(cc.cwnd_packets(), 8);
        assert_eq!(cc.mode(), CcMode::CongestionAvoidance);
    }

    #[test]
    fn cwnd_monotone_without_loss() {
        let mut cc = NewRenoState::default();
        let mut prev = cc.cwnd();
        for _ in 0..10_000 {
            cc.on_ack();
            assert!(cc.cwnd() >= prev);
            prev = cc.cwnd();
        }
    }

    #[test]
    fn cwnd_floor_is_two() {
        let mut cc = NewRenoState::new(2.0);
        cc.on_loss();
        cc.on_loss();
        assert!(cc.cwnd() >= 2.0);
    }
}
