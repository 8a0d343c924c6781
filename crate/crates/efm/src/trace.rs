//! Observable packet-header model and the line-based trace format shared by
//! the simulator and the offline observer.

use std::io::{self, BufRead, Write};

use thiserror::Error;

/// Default packet size; 50 kB is then roughly 40 packets.
pub const DEFAULT_PACKET_SIZE: u32 = 1250;

/// Column header written as the first line of every trace file.
pub const TRACE_HEADER: &str = "observe_time_ns,direction,seq,size_bytes,spin,l,q,r,t";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    ClientToServer,
    ServerToClient,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::ClientToServer => "C2S",
            Direction::ServerToClient => "S2C",
        }
    }

    pub fn reverse(self) -> Direction {
        match self {
            Direction::ClientToServer => Direction::ServerToClient,
            Direction::ServerToClient => Direction::ClientToServer,
        }
    }
}

/// The per-packet measurement bits visible to a passive observer, plus the
/// simulator-internal sequence number and packet size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MarkedHeader {
    pub spin: bool,
    pub l: bool,
    pub q: bool,
    pub r: bool,
    pub t: bool,
    /// Strictly increasing per sender per direction at emission time.
    pub seq: u64,
    pub size_bytes: u32,
}

/// One observed packet as recorded at the observation point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceRecord {
    pub observe_time_ns: u64,
    pub direction: Direction,
    pub header: MarkedHeader,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("line {line}: missing field `{field}`")]
    MissingField { line: usize, field: &'static str },
    #[error("line {line}: invalid value `{value}` for field `{field}`")]
    InvalidField {
        line: usize,
        field: &'static str,
        value: String,
    },
}

pub fn encode_record(rec: &TraceRecord) -> String {
    let h = &rec.header;
    format!(
        "{},{},{},{},{},{},{},{},{}",
        rec.observe_time_ns,
        rec.direction.as_str(),
        h.seq,
        h.size_bytes,
        h.spin as u8,
        h.l as u8,
        h.q as u8,
        h.r as u8,
        h.t as u8,
    )
}

/// Inverse of [`encode_record`]. `line_no` is only used for error reporting.
pub fn decode_record(line: &str, line_no: usize) -> Result<TraceRecord, ParseError> {
    const FIELDS: [&str; 9] = [
        "observe_time_ns",
        "direction",
        "seq",
        "size_bytes",
        "spin",
        "l",
        "q",
        "r",
        "t",
    ];
    let mut parts = line.split(',');
    let mut next = |field_idx: usize| -> Result<&str, ParseError> {
        parts.next().ok_or(ParseError::MissingField {
            line: line_no,
            field: FIELDS[field_idx],
        })
    };

    fn num<T: std::str::FromStr>(
        raw: &str,
        line: usize,
        field: &'static str,
    ) -> Result<T, ParseError> {
        raw.trim().parse().map_err(|_| ParseError::InvalidField {
            line,
            field,
            value: raw.to_string(),
        })
    }
    fn bit(raw: &str, line: usize, field: &'static str) -> Result<bool, ParseError> {
        match raw.trim() {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(ParseError::InvalidField {
                line,
                field,
                value: other.to_string(),
            }),
        }
    }

    let observe_time_ns = num(next(0)?, line_no, FIELDS[0])?;
    let dir_raw = next(1)?;
    let direction = match dir_raw.trim() {
        "C2S" => Direction::ClientToServer,
        "S2C" => Direction::ServerToClient,
        other => {
            return Err(ParseError::InvalidField {
                line: line_no,
                field: "direction",
                value: other.to_string(),
            })
        }
    };
    let seq = num(next(2)?, line_no, FIELDS[2])?;
    let size_bytes = num(next(3)?, line_no, FIELDS[3])?;
    let spin = bit(next(4)?, line_no, FIELDS[4])?;
    let l = bit(next(5)?, line_no, FIELDS[5])?;
    let q = bit(next(6)?, line_no, FIELDS[6])?;
    let r = bit(next(7)?, line_no, FIELDS[7])?;
    let t = bit(next(8)?, line_no, FIELDS[8])?;

    Ok(TraceRecord {
        observe_time_ns,
        direction,
        header: MarkedHeader {
            spin,
            l,
            q,
            r,
            t,
            seq,
            size_bytes,
        },
    })
}

/// Writes a trace file: header line followed by one record per line.
pub fn write_trace<W: Write>(mut w: W, records: &[TraceRecord]) -> io::Result<()> {
    writeln!(w, "{TRACE_HEADER}")?;
    for rec in records {
        writeln!(w, "{}", encode_record(rec))?;
    }
    Ok(())
}

#[derive(Debug, Error)]
pub enum TraceReadError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Parse(#[from] ParseError),
}

/// Reads a trace file. A leading header line matching [`TRACE_HEADER`] is
/// skipped; everything else must be record lines.
pub fn read_trace<R: BufRead>(r: R) -> Result<Vec<TraceRecord>, TraceReadError> {
    let mut out = Vec::new();
    for (idx, line) in r.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        if line.is_empty() || (idx == 0 && line.trim() == TRACE_HEADER) {
            continue;
        }
        out.push(decode_record(&line, line_no)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn zero_record() -> TraceRecord {
        TraceRecord {
            observe_time_ns: 0,
            direction: Direction::ClientToServer,
            header: MarkedHeader {
                seq: 0,
                size_bytes: 1250,
                ..Default::default()
            },
        }
    }

    #[test]
    fn encode_zero_case() {
        assert_eq!(encode_record(&zero_record()), "0,C2S,0,1250,0,0,0,0,0");
    }

    #[test]
    fn encode_field_mapping() {
        let rec = TraceRecord {
            observe_time_ns: 40_000_000,
            direction: Direction::ServerToClient,
            header: MarkedHeader {
                spin: true,
                q: true,
                seq: 7,
                size_bytes: 1250,
                ..Default::default()
            },
        };
        assert_eq!(encode_record(&rec), "40000000,S2C,7,1250,1,0,1,0,0");
    }

    #[test]
    fn decode_zero_case() {
        assert_eq!(decode_record("0,C2S,0,1250,0,0,0,0,0", 1), Ok(zero_record()));
    }

    #[test]
    fn decode_truncated_line() {
        let err = decode_record("0,C2S,0,1250", 3).unwrap_err();
        assert_eq!(
            err,
            ParseError::MissingField {
                line: 3,
                field: "spin"
            }
        );
    }

    #[test]
    fn decode_bad_bit() {
        let err = decode_record("0,C2S,0,1250,2,0,0,0,0", 9).unwrap_err();
        assert!(matches!(err, ParseError::InvalidField { line: 9, field: "spin", .. }));
    }

    fn arb_record() -> impl Strategy<Value = TraceRecord> {
        (
            any::<u64>(),
            any::<bool>(),
            any::<[bool; 5]>(),
            any::<u64>(),
            any::<u32>(),
        )
            .prop_map(|(time, c2s, bits, seq, size)| TraceRecord {
                observe_time_ns: time,
                direction: if c2s {
                    Direction::ClientToServer
                } else {
                    Direction::ServerToClient
                },
                header: MarkedHeader {
                    spin: bits[0],
                    l: bits[1],
                    q: bits[2],
                    r: bits[3],
                    t: bits[4],
                    seq,
                    size_bytes: size,
                },
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn round_trip(rec in arb_record()) {
            let line = encode_record(&rec);
            prop_assert_eq!(decode_record(&line, 1).unwrap(), rec);
        }
    }

    #[test]
    fn file_round_trip() {
        let records: Vec<TraceRecord> = (0..10)
            .map(|i| TraceRecord {
                observe_time_ns: i * 100,
                direction: Direction::ServerToClient,
                header: MarkedHeader {
                    seq: i,
                    size_bytes: 1250,
                    spin: i % 2 == 0,
                    ..Default::default()
                },
            })
            .collect();
        let mut buf = Vec::new();
        write_trace(&mut buf, &records).unwrap();
        let back = read_trace(buf.as_slice()).unwrap();
        assert_eq!(back, records);
    }
}
