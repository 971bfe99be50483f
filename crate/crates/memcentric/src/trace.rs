//! Whitespace-separated command traces, one record per line:
//!
//! ```text
//! # cycle op channel rank bank subarray row [payload-hex]
//! 0    ACT 0 0 0 0 5
//! 40   WR  0 0 0 0 5 deadbeef
//! 60   RD  0 0 0 0 5
//! 100  PRE 0 0 0 0 5
//! 5000 REF 0 0 0 0 0
//! ```
//!
//! The payload is hex, leftmost byte first, zero-padded to the row width;
//! only WR takes one. Cycles must be non-decreasing.

use thiserror::Error;

use crate::bits::BitRow;
use crate::dram::{Command, CommandKind, RowAddress};

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub cycle: u64,
    pub op: CommandKind,
    pub addr: RowAddress,
    pub payload: Option<Vec<u8>>,
}

impl TraceRecord {
    pub fn to_command(&self, columns: usize) -> Command {
        let payload = self.payload.as_ref().map(|bytes| {
            let mut b = bytes.clone();
            b.resize(columns.div_ceil(8), 0);
            BitRow::from_bytes(b, columns)
        });
        Command {
            kind: self.op,
            addr: self.addr,
            payload,
            issue_cycle: self.cycle,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TraceError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: cycle {cycle} decreases (previous {prev})")]
    CycleOrder { line: usize, cycle: u64, prev: u64 },
}

pub fn parse_trace(text: &str) -> Result<Vec<TraceRecord>, TraceError> {
    let mut records = Vec::new();
    let mut prev_cycle = 0u64;
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = content.split_whitespace().collect();
        if tokens.len() < 7 {
            return Err(TraceError::Parse {
                line,
                msg: format!(
                    "expected `cycle op channel rank bank subarray row [payload]`, got {} fields",
                    tokens.len()
                ),
            });
        }
        let parse_num = |tok: &str, what: &str| -> Result<u64, TraceError> {
            tok.parse().map_err(|_| TraceError::Parse {
                line,
                msg: format!("bad {what} `{tok}`"),
            })
        };
        let cycle = parse_num(tokens[0], "cycle")?;
        let op = match tokens[1].to_ascii_uppercase().as_str() {
            "ACT" => CommandKind::Act,
            "PRE" => CommandKind::Pre,
            "RD" => CommandKind::Rd,
            "WR" => CommandKind::Wr,
            "REF" => CommandKind::Ref,
            other => {
                return Err(TraceError::Parse {
                    line,
                    msg: format!("unknown op `{other}`"),
                })
            }
        };
        let addr = RowAddress {
            channel: parse_num(tokens[2], "channel")? as usize,
            rank: parse_num(tokens[3], "rank")? as usize,
            bank: parse_num(tokens[4], "bank")? as usize,
            subarray: parse_num(tokens[5], "subarray")? as usize,
            row: parse_num(tokens[6], "row")? as usize,
        };
        let payload = if tokens.len() > 7 {
            if op != CommandKind::Wr {
                return Err(TraceError::Parse {
                    line,
                    msg: format!("payload only valid for WR (op is {op})"),
                });
            }
            Some(parse_hex(tokens[7]).map_err(|msg| TraceError::Parse { line, msg })?)
        } else {
            None
        };
        if op == CommandKind::Wr && payload.is_none() {
            return Err(TraceError::Parse {
                line,
                msg: "WR requires a payload".into(),
            });
        }
        if cycle < prev_cycle {
            return Err(TraceError::CycleOrder {
                line,
                cycle,
                prev: prev_cycle,
            });
        }
        prev_cycle = cycle;
        records.push(TraceRecord {
            cycle,
            op,
            addr,
            payload,
        });
    }
    Ok(records)
}

fn parse_hex(tok: &str) -> Result<Vec<u8>, String> {
    let tok = tok.strip_prefix("0x").unwrap_or(tok);
    if tok.is_empty() || tok.len() % 2 != 0 {
        return Err(format!("hex payload `{tok}` must have an even digit count"));
    }
    (0..tok.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&tok[i..i + 2], 16).map_err(|_| format!("bad hex `{tok}`")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_roundtrip() {
        let text = "\
# demo trace
0    ACT 0 0 0 0 5
40   WR  0 0 0 0 5 0xdeadbeef
60   RD  0 0 0 0 5
100  PRE 0 0 0 0 5
";
        let records = parse_trace(text).unwrap();
        assert_eq!(records.len(), 4);
        assert_eq!(records[1].payload.as_deref(), Some(&[0xde, 0xad, 0xbe, 0xef][..]));
        let cmd = records[1].to_command(64);
        assert_eq!(cmd.payload.unwrap().bytes()[0], 0xde);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = parse_trace("0 ACT 0 0 0\n").unwrap_err();
        assert!(err.to_string().starts_with("line 1"));
        let err = parse_trace("0 ACT 0 0 0 0 1\n5 FOO 0 0 0 0 1\n").unwrap_err();
        assert!(err.to_string().contains("line 2"));
        assert!(err.to_string().contains("unknown op"));
    }

    #[test]
    fn cycle_order_enforced() {
        let err = parse_trace("10 ACT 0 0 0 0 1\n5 PRE 0 0 0 0 1\n").unwrap_err();
        assert!(matches!(err, TraceError::CycleOrder { line: 2, .. }));
    }

    #[test]
    fn wr_payload_rules() {
        assert!(parse_trace("0 WR 0 0 0 0 1\n").is_err());
        assert!(parse_trace("0 RD 0 0 0 0 1 ff\n").is_err());
    }
}
