//! DRAM organization, timing, and the controller-facing command vocabulary.

use serde::Deserialize;
use thiserror::Error;

use crate::bits::BitRow;
use crate::smd::Region;

/// Array organization. The row/column counts are per-instance of the parent
/// level (rows per subarray, columns per row).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DramGeometry {
    pub channels: usize,
    pub ranks_per_channel: usize,
    pub banks_per_rank: usize,
    pub subarrays_per_bank: usize,
    pub rows_per_subarray: usize,
    pub columns_per_row: usize,
}

impl Default for DramGeometry {
    fn default() -> Self {
        DramGeometry {
            channels: 1,
            ranks_per_channel: 1,
            banks_per_rank: 4,
            subarrays_per_bank: 8,
            rows_per_subarray: 512,
            columns_per_row: 1024,
        }
    }
}

impl DramGeometry {
    pub fn validate(&self) -> Result<(), BuildError> {
        let positive = [
            ("channels", self.channels),
            ("ranks_per_channel", self.ranks_per_channel),
            ("banks_per_rank", self.banks_per_rank),
            ("subarrays_per_bank", self.subarrays_per_bank),
            ("rows_per_subarray", self.rows_per_subarray),
            ("columns_per_row", self.columns_per_row),
        ];
        for (name, v) in positive {
            if v < 1 {
                return Err(BuildError::Geometry(format!("{name} ≥ 1 (got {v})")));
            }
        }
        if self.rows_per_subarray < 4 {
            return Err(BuildError::Geometry(format!(
                "rows_per_subarray ≥ 4 (got {})",
                self.rows_per_subarray
            )));
        }
        if self.columns_per_row % 8 != 0 {
            return Err(BuildError::Geometry(format!(
                "columns_per_row multiple of 8 (got {})",
                self.columns_per_row
            )));
        }
        Ok(())
    }

    pub fn total_banks(&self) -> usize {
        self.channels * self.ranks_per_channel * self.banks_per_rank
    }

    pub fn rows_per_bank(&self) -> usize {
        self.subarrays_per_bank * self.rows_per_subarray
    }

    pub fn total_rows(&self) -> usize {
        self.total_banks() * self.rows_per_bank()
    }
}

/// Command timings in integer cycles; `clock_ns` carries the wall-clock scale.
///
/// RD/WR column access latency is folded into `t_rcd` (CAS latency is not
/// modeled separately) and REF occupies `t_rc` cycles.
#[derive(Clone, Copy, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimingParams {
    pub clock_ns: f64,
    pub t_rcd: u64,
    pub t_ras: u64,
    pub t_rp: u64,
    pub t_rc: u64,
    pub t_refi: u64,
    pub t_refw: u64,
    pub nack_retry_backoff: u64,
}

impl Default for TimingParams {
    fn default() -> Self {
        // DDR4-1600-shaped; tREFW is the 64 ms window at a 1.25 ns clock.
        TimingParams {
            clock_ns: 1.25,
            t_rcd: 11,
            t_ras: 28,
            t_rp: 11,
            t_rc: 39,
            t_refi: 6250,
            t_refw: 51_200_000,
            nack_retry_backoff: 20,
        }
    }
}

impl TimingParams {
    pub fn validate(&self) -> Result<(), BuildError> {
        if self.clock_ns <= 0.0 {
            return Err(BuildError::Timing("clock_ns > 0".into()));
        }
        let positive = [
            ("t_rcd", self.t_rcd),
            ("t_ras", self.t_ras),
            ("t_rp", self.t_rp),
            ("t_rc", self.t_rc),
            ("t_refi", self.t_refi),
            ("t_refw", self.t_refw),
            ("nack_retry_backoff", self.nack_retry_backoff),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(BuildError::Timing(format!("{name} > 0")));
            }
        }
        if self.t_rc != self.t_ras + self.t_rp {
            return Err(BuildError::Timing(format!(
                "t_rc = t_ras + t_rp (got {} ≠ {} + {})",
                self.t_rc, self.t_ras, self.t_rp
            )));
        }
        if !(self.t_refw >= self.t_refi && self.t_refi >= self.t_rc) {
            return Err(BuildError::Timing(format!(
                "t_refw ≥ t_refi ≥ t_rc (got {} / {} / {})",
                self.t_refw, self.t_refi, self.t_rc
            )));
        }
        Ok(())
    }

    /// Number of round-robin refresh groups: one REF per tREFI covers
    /// total_rows / groups rows, so a full tREFW touches every row.
    pub fn refresh_groups(&self) -> usize {
        (self.t_refw / self.t_refi).max(1) as usize
    }
}

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("geometry: {0}")]
    Geometry(String),
    #[error("timing: {0}")]
    Timing(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Deserialize)]
pub struct RowAddress {
    pub channel: usize,
    pub rank: usize,
    pub bank: usize,
    pub subarray: usize,
    pub row: usize,
}

impl RowAddress {
    /// Shorthand for channel 0 / rank 0 fixtures.
    pub fn new(bank: usize, subarray: usize, row: usize) -> Self {
        RowAddress {
            channel: 0,
            rank: 0,
            bank,
            subarray,
            row,
        }
    }
}

impl std::fmt::Display for RowAddress {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}.{}.{}.{}.{}",
            self.channel, self.rank, self.bank, self.subarray, self.row
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowStatus {
    Closed,
    Open { since_cycle: u64 },
}

/// Per-row device state: stored bits, activation bookkeeping, and the
/// read-disturbance threshold this row currently exhibits.
///
/// The disturbance accumulator is kept in integer micro-units (1e-6 of one
/// unit-weight activation) so accumulation is exact and order-independent.
#[derive(Clone, Debug, PartialEq)]
pub struct RowState {
    pub data: BitRow,
    pub status: RowStatus,
    pub act_counter: u64,
    pub accum_micro: u64,
    pub acmin_base: f64,
    pub acmin_current: f64,
    pub(crate) acmin_micro: u64,
    pub last_refresh_cycle: u64,
}

pub const ACCUM_SCALE: f64 = 1e6;

pub(crate) fn to_micro(x: f64) -> u64 {
    if x.is_finite() {
        (x * ACCUM_SCALE).round() as u64
    } else {
        u64::MAX
    }
}

impl RowState {
    pub fn new(columns: usize) -> Self {
        RowState {
            data: BitRow::zero(columns),
            status: RowStatus::Closed,
            act_counter: 0,
            accum_micro: 0,
            acmin_base: f64::INFINITY,
            acmin_current: f64::INFINITY,
            acmin_micro: u64::MAX,
            last_refresh_cycle: 0,
        }
    }

    pub(crate) fn set_acmin(&mut self, base: f64, current: f64) {
        self.acmin_base = base;
        self.acmin_current = current;
        self.acmin_micro = to_micro(current);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CommandKind {
    Act,
    Pre,
    Rd,
    Wr,
    Ref,
}

impl std::fmt::Display for CommandKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            CommandKind::Act => "ACT",
            CommandKind::Pre => "PRE",
            CommandKind::Rd => "RD",
            CommandKind::Wr => "WR",
            CommandKind::Ref => "REF",
        };
        write!(f, "{s}")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Command {
    pub kind: CommandKind,
    pub addr: RowAddress,
    pub payload: Option<BitRow>,
    pub issue_cycle: u64,
}

impl Command {
    pub fn act(addr: RowAddress, issue_cycle: u64) -> Self {
        Command {
            kind: CommandKind::Act,
            addr,
            payload: None,
            issue_cycle,
        }
    }

    pub fn pre(addr: RowAddress, issue_cycle: u64) -> Self {
        Command {
            kind: CommandKind::Pre,
            addr,
            payload: None,
            issue_cycle,
        }
    }

    pub fn rd(addr: RowAddress, issue_cycle: u64) -> Self {
        Command {
            kind: CommandKind::Rd,
            addr,
            payload: None,
            issue_cycle,
        }
    }

    pub fn wr(addr: RowAddress, payload: BitRow, issue_cycle: u64) -> Self {
        Command {
            kind: CommandKind::Wr,
            addr,
            payload: Some(payload),
            issue_cycle,
        }
    }

    pub fn refresh(issue_cycle: u64) -> Self {
        Command {
            kind: CommandKind::Ref,
            addr: RowAddress::new(0, 0, 0),
            payload: None,
            issue_cycle,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ResponseKind {
    Ok,
    Data(BitRow),
    /// SMD rejected the request: the named region is under maintenance.
    Nack(Region),
    /// PRAC recovery in progress; the whole chip refuses commands.
    Alert,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Response {
    pub kind: ResponseKind,
    pub completion_cycle: u64,
}

impl Response {
    pub fn accepted(&self) -> bool {
        !matches!(self.kind, ResponseKind::Nack(_) | ResponseKind::Alert)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ProtocolError {
    #[error("address out of range: {0}")]
    AddressOutOfRange(String),
    #[error("issue cycle {issue} is in the past (device at {now})")]
    IssueInPast { issue: u64, now: u64 },
    #[error("{kind} to bank {bank} whose row is not open")]
    RowNotOpen { kind: CommandKind, bank: usize },
    #[error("ACT to bank {bank} with row {open_row} already open")]
    BankBusy { bank: usize, open_row: usize },
    #[error("{kind} addresses row {got} but row {open_row} is open")]
    RowMismatch {
        kind: CommandKind,
        got: usize,
        open_row: usize,
    },
    #[error("PRE after {open_cycles} open cycles violates tRAS = {t_ras}")]
    PrematurePrecharge { open_cycles: u64, t_ras: u64 },
    #[error("REF issued while a row is open in bank {bank}")]
    RefWhileRowOpen { bank: usize },
    #[error("WR without payload")]
    PayloadMissing,
    #[error("payload is {got} bits, row width is {want}")]
    PayloadWidth { got: usize, want: usize },
    #[error("{kind} carries an unexpected payload")]
    PayloadUnexpected { kind: CommandKind },
}
