//! Processing-Using-DRAM: in-array copy, majority-based bulk-bitwise logic,
//! multi-row activation, and the circuit-to-micro-op compiler built on them.
//!
//! Micro-ops address rows *within one subarray* (the locality domain of the
//! sense amplifiers); `SubarrayId` names the subarray, ops carry local row
//! indices. With noise disabled the ops compute exact bitwise semantics;
//! with noise enabled each written bit is independently correct with the
//! op's configured success probability.

pub mod circuit;
pub mod compile;
pub mod layout;
pub mod trng;

use rand::Rng;
use serde::Deserialize;
use thiserror::Error;

use crate::bits::BitRow;
use crate::device::DeviceState;
use crate::dram::RowAddress;
use crate::smd::{Region, RegionScope};

pub use circuit::{Gate, GateCircuit, GateOp, NetlistError, WireRef};
pub use compile::{compile_circuit, CompileError, Program};
pub use layout::{transpose_in, transpose_out, LayoutError};
pub use trng::{quac_trng, TrngCalibration, TrngOutput};

pub const MAX_COPY_DESTS: usize = 31;
pub const MAX_LOGIC_INPUTS: usize = 16;
pub const SIMUL_ACT_COUNTS: [usize; 5] = [2, 4, 8, 16, 32];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SubarrayId {
    pub channel: usize,
    pub rank: usize,
    pub bank: usize,
    pub subarray: usize,
}

impl SubarrayId {
    pub fn first() -> Self {
        SubarrayId {
            channel: 0,
            rank: 0,
            bank: 0,
            subarray: 0,
        }
    }

    pub fn addr(&self, row: usize) -> RowAddress {
        RowAddress {
            channel: self.channel,
            rank: self.rank,
            bank: self.bank,
            subarray: self.subarray,
            row,
        }
    }

    pub fn region(&self) -> Region {
        Region {
            scope: RegionScope::Subarray,
            channel: self.channel,
            rank: self.rank,
            bank: self.bank,
            subarray: self.subarray,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BoolOp {
    And,
    Nand,
    Or,
    Nor,
}

impl std::fmt::Display for BoolOp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            BoolOp::And => "AND",
            BoolOp::Nand => "NAND",
            BoolOp::Or => "OR",
            BoolOp::Nor => "NOR",
        };
        write!(f, "{s}")
    }
}

/// In-DRAM micro-operations over local row indices of one subarray.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MicroOp {
    /// Back-to-back activation copy of one row into another.
    RowClone { src: usize, dst: usize },
    /// Copy one row into up to 31 others concurrently.
    MultiCopy { src: usize, dsts: Vec<usize> },
    /// Triple-row activation: charge sharing leaves the bitwise majority of
    /// the three rows in all three rows.
    TraMaj { rows: [usize; 3] },
    /// Complement through the sense amplifier.
    Not { src: usize, dst: usize },
    /// Native k-input logic (2..=16 inputs). Even input counts are realized
    /// with one constant padding row internally to break majority ties.
    MultiInput {
        op: BoolOp,
        inputs: Vec<usize>,
        dst: usize,
    },
    /// Simultaneous many-row activation with no data intent: the listed rows
    /// resolve to one shared metastable pattern (TRNG source).
    SimulAct { rows: Vec<usize> },
    /// Initialize a row to all-zeros or all-ones.
    SetConst { row: usize, bit: bool },
}

impl MicroOp {
    /// Cost in tRC units for the estimated cycle model.
    pub fn cost_units(&self) -> u64 {
        match self {
            MicroOp::RowClone { .. } | MicroOp::Not { .. } | MicroOp::SetConst { .. } => 2,
            MicroOp::MultiCopy { .. } => 2,
            MicroOp::TraMaj { .. } | MicroOp::MultiInput { .. } => 3,
            MicroOp::SimulAct { .. } => 1,
        }
    }

    pub fn listing_line(&self) -> String {
        match self {
            MicroOp::RowClone { src, dst } => format!("ROWCLONE r{src} -> r{dst}"),
            MicroOp::MultiCopy { src, dsts } => {
                let d: Vec<String> = dsts.iter().map(|r| format!("r{r}")).collect();
                format!("MULTI_COPY r{src} -> {}", d.join(" "))
            }
            MicroOp::TraMaj { rows } => {
                format!("TRA_MAJ r{} r{} r{}", rows[0], rows[1], rows[2])
            }
            MicroOp::Not { src, dst } => format!("NOT r{src} -> r{dst}"),
            MicroOp::MultiInput { op, inputs, dst } => {
                let i: Vec<String> = inputs.iter().map(|r| format!("r{r}")).collect();
                format!("MULTI_INPUT {op} {} -> r{dst}", i.join(" "))
            }
            MicroOp::SimulAct { rows } => {
                let r: Vec<String> = rows.iter().map(|r| format!("r{r}")).collect();
                format!("SIMUL_ACT {}", r.join(" "))
            }
            MicroOp::SetConst { row, bit } => {
                format!("SET_CONST r{row} {}", if *bit { 1 } else { 0 })
            }
        }
    }
}

/// Per-op per-bit success probabilities, from measured COTS figures.
#[derive(Clone, Copy, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseModel {
    pub enabled: bool,
    pub p_copy: f64,
    pub p_logic: f64,
    pub p_not: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            enabled: false,
            p_copy: 0.9998,
            p_logic: 0.94,
            p_not: 0.94,
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<(), PudError> {
        for (name, p) in [
            ("p_copy", self.p_copy),
            ("p_logic", self.p_logic),
            ("p_not", self.p_not),
        ] {
            if !(p > 0.0 && p <= 1.0) {
                return Err(PudError::BadNoise {
                    name,
                    value: p,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PudError {
    #[error("row r{row} outside subarray of {rows_per_subarray} rows")]
    RowOutOfRange { row: usize, rows_per_subarray: usize },
    #[error("subarray {0:?} out of range")]
    SubarrayOutOfRange(SubarrayId),
    #[error("subarray under maintenance: {0}")]
    RegionLocked(Region),
    #[error("MULTI_COPY with {got} destinations (max {MAX_COPY_DESTS})")]
    TooManyCopyDests { got: usize },
    #[error("MULTI_INPUT with {got} inputs (2..={MAX_LOGIC_INPUTS})")]
    BadLogicInputCount { got: usize },
    #[error("TRA_MAJ rows must be distinct")]
    RowsNotDistinct,
    #[error("SIMUL_ACT row count {got} not one of {SIMUL_ACT_COUNTS:?}")]
    BadSimulActCount { got: usize },
    #[error("noise probability {name} must be in (0,1] (got {value})")]
    BadNoise { name: &'static str, value: f64 },
    #[error("operand {0} missing or width mismatch")]
    OperandMismatch(String),
    #[error("lane count {got} exceeds {max}")]
    LaneOverflow { got: usize, max: usize },
}

/// Executes micro-ops against a device. `lanes` restricts all ops to a column
/// range (finer-than-row granularity); `None` means the full row.
#[derive(Clone, Debug)]
pub struct PudEngine {
    pub noise: NoiseModel,
    pub lanes: Option<std::ops::Range<usize>>,
}

impl PudEngine {
    pub fn exact() -> Self {
        PudEngine {
            noise: NoiseModel::default(),
            lanes: None,
        }
    }

    pub fn with_noise(noise: NoiseModel) -> Self {
        PudEngine { noise, lanes: None }
    }

    fn lane_range(&self, columns: usize) -> std::ops::Range<usize> {
        match &self.lanes {
            Some(r) => r.start.min(columns)..r.end.min(columns),
            None => 0..columns,
        }
    }

    fn check_subarray(&self, device: &DeviceState, subarray: &SubarrayId) -> Result<(), PudError> {
        let g = device.geometry();
        if subarray.channel >= g.channels
            || subarray.rank >= g.ranks_per_channel
            || subarray.bank >= g.banks_per_rank
            || subarray.subarray >= g.subarrays_per_bank
        {
            return Err(PudError::SubarrayOutOfRange(*subarray));
        }
        if device.smd.config.enabled {
            let region = subarray.region();
            if device.smd.locks.is_locked(&region) {
                return Err(PudError::RegionLocked(region));
            }
        }
        Ok(())
    }

    fn row_index(
        device: &DeviceState,
        subarray: &SubarrayId,
        row: usize,
    ) -> Result<usize, PudError> {
        let rows_per_subarray = device.geometry().rows_per_subarray;
        if row >= rows_per_subarray {
            return Err(PudError::RowOutOfRange {
                row,
                rows_per_subarray,
            });
        }
        Ok(device.row_index(&subarray.addr(row)))
    }

    /// Applies per-bit noise to `value` within `cols`: each bit stays correct
    /// with probability `p`, else flips.
    fn apply_noise(
        &self,
        device: &mut DeviceState,
        value: &mut BitRow,
        p: f64,
        cols: &std::ops::Range<usize>,
    ) {
        if !self.noise.enabled || p >= 1.0 {
            return;
        }
        for bit in cols.clone() {
            if device.rng_pud.random::<f64>() >= p {
                value.flip(bit);
            }
        }
    }

    pub fn exec(
        &self,
        device: &mut DeviceState,
        subarray: SubarrayId,
        op: &MicroOp,
    ) -> Result<(), PudError> {
        self.check_subarray(device, &subarray)?;
        let columns = device.geometry().columns_per_row;
        let cols = self.lane_range(columns);
        match op {
            MicroOp::RowClone { src, dst } => {
                let s = Self::row_index(device, &subarray, *src)?;
                let d = Self::row_index(device, &subarray, *dst)?;
                let mut value = device.rows[s].data.clone();
                self.apply_noise(device, &mut value, self.noise.p_copy, &cols);
                device.rows[d].data.copy_from(&value, cols);
            }
            MicroOp::MultiCopy { src, dsts } => {
                if dsts.is_empty() || dsts.len() > MAX_COPY_DESTS {
                    return Err(PudError::TooManyCopyDests { got: dsts.len() });
                }
                let s = Self::row_index(device, &subarray, *src)?;
                let source = device.rows[s].data.clone();
                for dst in dsts {
                    let d = Self::row_index(device, &subarray, *dst)?;
                    let mut value = source.clone();
                    self.apply_noise(device, &mut value, self.noise.p_copy, &cols);
                    device.rows[d].data.copy_from(&value, cols.clone());
                }
            }
            MicroOp::TraMaj { rows } => {
                if rows[0] == rows[1] || rows[0] == rows[2] || rows[1] == rows[2] {
                    return Err(PudError::RowsNotDistinct);
                }
                let idx: Vec<usize> = rows
                    .iter()
                    .map(|r| Self::row_index(device, &subarray, *r))
                    .collect::<Result<_, _>>()?;
                let mut maj = BitRow::zero(columns);
                maj.maj3_from(
                    &device.rows[idx[0]].data,
                    &device.rows[idx[1]].data,
                    &device.rows[idx[2]].data,
                    0..columns,
                );
                // charge sharing leaves the result in every participating row
                for &i in &idx {
                    let mut value = maj.clone();
                    self.apply_noise(device, &mut value, self.noise.p_logic, &cols);
                    device.rows[i].data.copy_from(&value, cols.clone());
                }
            }
            MicroOp::Not { src, dst } => {
                let s = Self::row_index(device, &subarray, *src)?;
                let d = Self::row_index(device, &subarray, *dst)?;
                let mut value = BitRow::zero(columns);
                value.not_from(&device.rows[s].data, 0..columns);
                self.apply_noise(device, &mut value, self.noise.p_not, &cols);
                device.rows[d].data.copy_from(&value, cols);
            }
            MicroOp::MultiInput { op, inputs, dst } => {
                if inputs.len() < 2 || inputs.len() > MAX_LOGIC_INPUTS {
                    return Err(PudError::BadLogicInputCount { got: inputs.len() });
                }
                let idx: Vec<usize> = inputs
                    .iter()
                    .map(|r| Self::row_index(device, &subarray, *r))
                    .collect::<Result<_, _>>()?;
                let d = Self::row_index(device, &subarray, *dst)?;
                let sources: Vec<BitRow> =
                    idx.iter().map(|&i| device.rows[i].data.clone()).collect();
                let refs: Vec<&BitRow> = sources.iter().collect();
                let (or, invert) = match op {
                    BoolOp::And => (false, false),
                    BoolOp::Nand => (false, true),
                    BoolOp::Or => (true, false),
                    BoolOp::Nor => (true, true),
                };
                let mut value = BitRow::zero(columns);
                value.fold_from(&refs, or, invert, 0..columns);
                self.apply_noise(device, &mut value, self.noise.p_logic, &cols);
                device.rows[d].data.copy_from(&value, cols);
            }
            MicroOp::SimulAct { rows } => {
                if !SIMUL_ACT_COUNTS.contains(&rows.len()) {
                    return Err(PudError::BadSimulActCount { got: rows.len() });
                }
                let idx: Vec<usize> = rows
                    .iter()
                    .map(|r| Self::row_index(device, &subarray, *r))
                    .collect::<Result<_, _>>()?;
                // all listed rows share sense amplifiers per column, so they
                // resolve to one pattern
                let mut pattern = BitRow::zero(columns);
                pattern.fill_random(&mut device.rng_trng);
                for &i in &idx {
                    device.rows[i].data.copy_from(&pattern, cols.clone());
                }
            }
            MicroOp::SetConst { row, bit } => {
                let r = Self::row_index(device, &subarray, *row)?;
                device.rows[r].data.set_all(*bit, cols);
            }
        }
        device.stats.pud_ops += 1;
        Ok(())
    }

    pub fn run_ops(
        &self,
        device: &mut DeviceState,
        subarray: SubarrayId,
        ops: &[MicroOp],
    ) -> Result<(), PudError> {
        for op in ops {
            self.exec(device, subarray, op)?;
        }
        Ok(())
    }

    /// Loads operand values in vertical layout, executes the program, and
    /// reads back the output lanes.
    pub fn run_program(
        &self,
        device: &mut DeviceState,
        subarray: SubarrayId,
        program: &Program,
        inputs: &[(String, Vec<u64>)],
    ) -> Result<Vec<u64>, PudError> {
        let columns = device.geometry().columns_per_row;
        let mut lanes = None;
        for (name, rows) in &program.input_rows {
            let values = inputs
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, v)| v)
                .ok_or_else(|| PudError::OperandMismatch(name.clone()))?;
            match lanes {
                None => lanes = Some(values.len()),
                Some(n) if n == values.len() => {}
                _ => return Err(PudError::OperandMismatch(name.clone())),
            }
            let planes = transpose_in(values, rows.len(), columns)
                .map_err(|_| PudError::LaneOverflow {
                    got: values.len(),
                    max: columns,
                })?;
            for (row, plane) in rows.iter().zip(planes) {
                let idx = Self::row_index(device, &subarray, *row)?;
                device.rows[idx].data = plane;
            }
        }
        let lanes = lanes.unwrap_or(0);
        self.run_ops(device, subarray, &program.ops)?;
        let out_rows: Vec<BitRow> = program
            .output_rows
            .iter()
            .map(|r| Self::row_index(device, &subarray, *r).map(|i| device.rows[i].data.clone()))
            .collect::<Result<_, _>>()?;
        Ok(transpose_out(&out_rows, lanes))
    }
}
