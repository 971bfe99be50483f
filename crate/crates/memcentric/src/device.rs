//! The device model: a single-owner DRAM chip mutated through `issue`.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::bits::BitRow;
use crate::disturbance::DisturbanceProfile;
use crate::dram::{
    BuildError, Command, CommandKind, DramGeometry, ProtocolError, Response, ResponseKind,
    RowAddress, RowState, RowStatus, TimingParams,
};
use crate::mitigation::{MitigationConfig, MitigationState};
use crate::smd::{SmdConfig, SmdState};

/// Running counters exported into the metrics report.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DeviceStats {
    pub acts: u64,
    pub pres: u64,
    pub rds: u64,
    pub wrs: u64,
    pub refs: u64,
    pub bitflips: u64,
    pub bitflips_rowhammer: u64,
    pub bitflips_rowpress: u64,
    pub para_refreshes: u64,
    pub trr_refreshes: u64,
    pub alerts_asserted: u64,
    pub rejected_during_alert: u64,
    pub prac_recoveries: u64,
    pub victim_refreshes: u64,
    pub smd_nacks: u64,
    pub smd_tasks_completed: u64,
    pub scrub_detections: u64,
    pub pud_ops: u64,
    /// Open duration recorded by the most recent PRE (RowPress input).
    pub last_open_cycles: Option<u64>,
}

impl DeviceStats {
    pub fn commands(&self) -> u64 {
        self.acts + self.pres + self.rds + self.wrs + self.refs
    }
}

// Independent deterministic RNG streams, so that e.g. enabling PUD noise
// never shifts the disturbance draws of an otherwise identical run.
const STREAM_ACMIN: u64 = 1;
const STREAM_VRD: u64 = 2;
const STREAM_FLIP: u64 = 3;
const STREAM_PARA: u64 = 4;
const STREAM_PUD: u64 = 5;
const STREAM_TRNG: u64 = 6;

fn substream(seed: u64, id: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed ^ id.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeviceState {
    geometry: DramGeometry,
    timing: TimingParams,
    pub(crate) rows: Vec<RowState>,
    /// Per bank: global index of the open row, if any (one row buffer per bank).
    pub(crate) open_row: Vec<Option<usize>>,
    now: u64,
    seed: u64,
    pub(crate) profile: DisturbanceProfile,
    pub(crate) press_ton_ref: u64,
    pub(crate) mitigation: MitigationState,
    pub(crate) smd: SmdState,
    refresh_cursor: usize,
    pub events: Vec<crate::disturbance::BitflipEvent>,
    pub stats: DeviceStats,
    pub(crate) rng_acmin: ChaCha12Rng,
    pub(crate) rng_vrd: ChaCha12Rng,
    pub(crate) rng_flip: ChaCha12Rng,
    pub(crate) rng_para: ChaCha12Rng,
    pub(crate) rng_pud: ChaCha12Rng,
    pub(crate) rng_trng: ChaCha12Rng,
    pub(crate) scrub_reference: Option<Vec<BitRow>>,
}

impl DeviceState {
    pub fn new(
        geometry: DramGeometry,
        timing: TimingParams,
        seed: u64,
    ) -> Result<Self, BuildError> {
        geometry.validate()?;
        timing.validate()?;
        let rows = (0..geometry.total_rows())
            .map(|_| RowState::new(geometry.columns_per_row))
            .collect();
        Ok(DeviceState {
            rows,
            open_row: vec![None; geometry.total_banks()],
            now: 0,
            seed,
            profile: DisturbanceProfile::disabled(),
            press_ton_ref: timing.t_ras,
            mitigation: MitigationState::new(MitigationConfig::None),
            smd: SmdState::new(SmdConfig::default()),
            refresh_cursor: 0,
            events: Vec::new(),
            stats: DeviceStats::default(),
            rng_acmin: substream(seed, STREAM_ACMIN),
            rng_vrd: substream(seed, STREAM_VRD),
            rng_flip: substream(seed, STREAM_FLIP),
            rng_para: substream(seed, STREAM_PARA),
            rng_pud: substream(seed, STREAM_PUD),
            rng_trng: substream(seed, STREAM_TRNG),
            scrub_reference: None,
            geometry,
            timing,
        })
    }

    pub fn geometry(&self) -> &DramGeometry {
        &self.geometry
    }

    pub fn timing(&self) -> &TimingParams {
        &self.timing
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Installs the fault-injection profile and samples each row's base
    /// threshold from the profile's lognormal.
    pub fn set_disturbance(&mut self, profile: DisturbanceProfile) {
        profile.validate().expect("invalid disturbance profile");
        self.press_ton_ref = profile.press_ton_ref.unwrap_or(self.timing.t_ras);
        self.profile = profile;
        for i in 0..self.rows.len() {
            if self.profile.enabled {
                let base = crate::disturbance::sample_acmin(&self.profile, &mut self.rng_acmin);
                self.rows[i].set_acmin(base, base);
                crate::disturbance::resample_vrd_row(
                    &mut self.rows[i],
                    &self.profile,
                    &mut self.rng_vrd,
                );
            } else {
                self.rows[i].set_acmin(f64::INFINITY, f64::INFINITY);
            }
        }
    }

    pub fn set_mitigation(&mut self, config: MitigationConfig) {
        config.validate().expect("invalid mitigation config");
        self.mitigation = MitigationState::new(config);
    }

    pub fn set_smd(&mut self, config: SmdConfig) {
        self.smd = SmdState::new(config);
    }

    pub fn validate_addr(&self, addr: &RowAddress) -> Result<(), ProtocolError> {
        let g = &self.geometry;
        let checks = [
            ("channel", addr.channel, g.channels),
            ("rank", addr.rank, g.ranks_per_channel),
            ("bank", addr.bank, g.banks_per_rank),
            ("subarray", addr.subarray, g.subarrays_per_bank),
            ("row", addr.row, g.rows_per_subarray),
        ];
        for (name, v, lim) in checks {
            if v >= lim {
                return Err(ProtocolError::AddressOutOfRange(format!(
                    "{name} {v} ≥ {lim} at {addr}"
                )));
            }
        }
        Ok(())
    }

    pub fn bank_index(&self, addr: &RowAddress) -> usize {
        let g = &self.geometry;
        (addr.channel * g.ranks_per_channel + addr.rank) * g.banks_per_rank + addr.bank
    }

    pub fn row_index(&self, addr: &RowAddress) -> usize {
        let g = &self.geometry;
        (self.bank_index(addr) * g.subarrays_per_bank + addr.subarray) * g.rows_per_subarray
            + addr.row
    }

    pub fn addr_of(&self, row_index: usize) -> RowAddress {
        let g = &self.geometry;
        let row = row_index % g.rows_per_subarray;
        let rest = row_index / g.rows_per_subarray;
        let subarray = rest % g.subarrays_per_bank;
        let rest = rest / g.subarrays_per_bank;
        let bank = rest % g.banks_per_rank;
        let rest = rest / g.banks_per_rank;
        RowAddress {
            channel: rest / g.ranks_per_channel,
            rank: rest % g.ranks_per_channel,
            bank,
            subarray,
            row,
        }
    }

    pub fn row(&self, addr: &RowAddress) -> &RowState {
        &self.rows[self.row_index(addr)]
    }

    /// Test/oracle backdoor: reads row data without touching timing,
    /// counters, or disturbance state.
    pub fn peek_row(&self, addr: &RowAddress) -> Result<BitRow, ProtocolError> {
        self.validate_addr(addr)?;
        Ok(self.rows[self.row_index(addr)].data.clone())
    }

    /// Test/oracle backdoor: writes row data, bypassing the protocol.
    pub fn poke_row(&mut self, addr: &RowAddress, bits: &BitRow) -> Result<(), ProtocolError> {
        self.validate_addr(addr)?;
        if bits.len() != self.geometry.columns_per_row {
            return Err(ProtocolError::PayloadWidth {
                got: bits.len(),
                want: self.geometry.columns_per_row,
            });
        }
        let idx = self.row_index(addr);
        self.rows[idx].data = bits.clone();
        Ok(())
    }

    /// Refresh effects for one row: disturbance accumulator cleared, refresh
    /// timestamp updated, VRD threshold resampled for the new window.
    pub(crate) fn refresh_row(&mut self, row_index: usize, cycle: u64) {
        let row = &mut self.rows[row_index];
        row.accum_micro = 0;
        row.last_refresh_cycle = cycle;
        if self.profile.enabled {
            crate::disturbance::resample_vrd_row(row, &self.profile, &mut self.rng_vrd);
        }
    }

    fn ref_group_size(&self) -> usize {
        self.geometry
            .total_rows()
            .div_ceil(self.timing.refresh_groups())
    }

    /// Dispatch point for the controller-facing protocol.
    pub fn issue(&mut self, cmd: Command) -> Result<Response, ProtocolError> {
        self.validate_addr(&cmd.addr)?;
        if cmd.issue_cycle < self.now {
            return Err(ProtocolError::IssueInPast {
                issue: cmd.issue_cycle,
                now: self.now,
            });
        }
        if cmd.payload.is_some() && cmd.kind != CommandKind::Wr {
            return Err(ProtocolError::PayloadUnexpected { kind: cmd.kind });
        }

        // PRAC back-off: while recovery is pending, the whole chip rejects
        // commands; the first command at/after the recovery deadline triggers
        // the deferred victim refreshes.
        if let Some(deadline) = self.mitigation.recovery_deadline() {
            if cmd.issue_cycle >= deadline {
                self.complete_alert_recovery(cmd.issue_cycle);
            } else {
                let completion_cycle = cmd.issue_cycle + 1;
                self.now = completion_cycle;
                self.stats.rejected_during_alert += 1;
                return Ok(Response {
                    kind: ResponseKind::Alert,
                    completion_cycle,
                });
            }
        }

        // SMD gate: only row-opening is rejected while a region is under
        // maintenance; accesses to open rows elsewhere proceed.
        if cmd.kind == CommandKind::Act {
            if let Some(region) = self.smd_filter(&cmd.addr) {
                let completion_cycle = cmd.issue_cycle + 1;
                self.now = completion_cycle;
                self.stats.smd_nacks += 1;
                return Ok(Response {
                    kind: ResponseKind::Nack(region),
                    completion_cycle,
                });
            }
        }

        let bank = self.bank_index(&cmd.addr);
        let idx = self.row_index(&cmd.addr);
        let completion_cycle;
        let mut kind = ResponseKind::Ok;
        match cmd.kind {
            CommandKind::Act => {
                if let Some(open) = self.open_row[bank] {
                    return Err(ProtocolError::BankBusy {
                        bank,
                        open_row: open % self.geometry.rows_per_bank(),
                    });
                }
                self.rows[idx].status = RowStatus::Open {
                    since_cycle: cmd.issue_cycle,
                };
                self.open_row[bank] = Some(idx);
                completion_cycle = cmd.issue_cycle + self.timing.t_rcd;
                self.stats.acts += 1;
                self.para_on_activate(&cmd.addr, completion_cycle);
                self.trr_observe(idx);
            }
            CommandKind::Pre => {
                let open = self.open_row[bank].ok_or(ProtocolError::RowNotOpen {
                    kind: cmd.kind,
                    bank,
                })?;
                if open != idx {
                    return Err(ProtocolError::RowMismatch {
                        kind: cmd.kind,
                        got: cmd.addr.row,
                        open_row: open % self.geometry.rows_per_subarray,
                    });
                }
                let since = match self.rows[idx].status {
                    RowStatus::Open { since_cycle } => since_cycle,
                    RowStatus::Closed => unreachable!("open_row points at a closed row"),
                };
                let open_cycles = cmd.issue_cycle - since;
                if open_cycles < self.timing.t_ras {
                    return Err(ProtocolError::PrematurePrecharge {
                        open_cycles,
                        t_ras: self.timing.t_ras,
                    });
                }
                self.rows[idx].status = RowStatus::Closed;
                self.open_row[bank] = None;
                self.rows[idx].act_counter += 1;
                completion_cycle = cmd.issue_cycle + self.timing.t_rp;
                self.stats.pres += 1;
                self.stats.last_open_cycles = Some(open_cycles);
                self.on_aggressor_precharge(idx, open_cycles, completion_cycle);
                self.prac_on_precharge(idx, completion_cycle);
            }
            CommandKind::Rd | CommandKind::Wr => {
                let open = self.open_row[bank].ok_or(ProtocolError::RowNotOpen {
                    kind: cmd.kind,
                    bank,
                })?;
                if open != idx {
                    return Err(ProtocolError::RowMismatch {
                        kind: cmd.kind,
                        got: cmd.addr.row,
                        open_row: open % self.geometry.rows_per_subarray,
                    });
                }
                completion_cycle = cmd.issue_cycle + self.timing.t_rcd;
                if cmd.kind == CommandKind::Rd {
                    kind = ResponseKind::Data(self.rows[idx].data.clone());
                    self.stats.rds += 1;
                } else {
                    let payload = cmd.payload.ok_or(ProtocolError::PayloadMissing)?;
                    if payload.len() != self.geometry.columns_per_row {
                        return Err(ProtocolError::PayloadWidth {
                            got: payload.len(),
                            want: self.geometry.columns_per_row,
                        });
                    }
                    self.rows[idx].data = payload;
                    self.stats.wrs += 1;
                }
            }
            CommandKind::Ref => {
                if let Some(open_bank) = self.open_row.iter().position(|o| o.is_some()) {
                    return Err(ProtocolError::RefWhileRowOpen { bank: open_bank });
                }
                completion_cycle = cmd.issue_cycle + self.timing.t_rc;
                let size = self.ref_group_size();
                let total = self.geometry.total_rows();
                let start = self.refresh_cursor;
                for off in 0..size {
                    self.refresh_row((start + off) % total, completion_cycle);
                }
                self.refresh_cursor = (start + size) % total;
                self.stats.refs += 1;
                self.trr_on_refresh(completion_cycle);
            }
        }
        self.now = completion_cycle;
        Ok(Response {
            kind,
            completion_cycle,
        })
    }

    /// Hash of the externally observable state (row contents, counters,
    /// open/closed status, cycle). RNG cursors are excluded so that
    /// never-triggered mechanisms compare equal to disabled ones.
    pub fn digest(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.now.hash(&mut h);
        for (i, row) in self.rows.iter().enumerate() {
            i.hash(&mut h);
            row.data.hash(&mut h);
            row.act_counter.hash(&mut h);
            row.accum_micro.hash(&mut h);
            row.last_refresh_cycle.hash(&mut h);
            matches!(row.status, RowStatus::Open { .. }).hash(&mut h);
        }
        h.finish()
    }

    /// Hash of row contents only (memory-image comparison between runs).
    pub fn data_digest(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for row in &self.rows {
            row.data.hash(&mut h);
        }
        h.finish()
    }

    /// Fixture helper: pins every row's disturbance threshold to `value`.
    pub fn set_fixed_acmin(&mut self, value: f64) {
        for row in &mut self.rows {
            row.set_acmin(value, value);
        }
    }

    /// Fixture helper: snapshot the current memory image as the scrub
    /// reference.
    pub fn set_scrub_reference(&mut self) {
        self.scrub_reference = Some(self.rows.iter().map(|r| r.data.clone()).collect());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bits::BitRow;

    fn small() -> DeviceState {
        let g = DramGeometry {
            channels: 1,
            ranks_per_channel: 1,
            banks_per_rank: 1,
            subarrays_per_bank: 2,
            rows_per_subarray: 64,
            columns_per_row: 256,
        };
        DeviceState::new(g, TimingParams::default(), 7).unwrap()
    }

    #[test]
    fn new_device_zeroed_and_closed() {
        let d = small();
        assert_eq!(d.rows.len(), 128);
        for row in &d.rows {
            assert_eq!(row.status, RowStatus::Closed);
            assert_eq!(row.data.count_ones(), 0);
            assert_eq!(row.act_counter, 0);
        }
    }

    #[test]
    fn construction_is_deterministic() {
        let a = small();
        let b = small();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_geometry_reported() {
        let g = DramGeometry {
            rows_per_subarray: 2,
            ..Default::default()
        };
        let err = DeviceState::new(g, TimingParams::default(), 0).unwrap_err();
        assert!(err.to_string().contains("rows_per_subarray ≥ 4"));
    }

    #[test]
    fn store_load_identity() {
        let mut d = small();
        let addr = RowAddress::new(0, 0, 5);
        let t = d.timing;
        let mut pattern = BitRow::zero(256);
        for i in (0..256).step_by(3) {
            pattern.set(i, true);
        }
        d.issue(Command::act(addr, 0)).unwrap();
        d.issue(Command::wr(addr, pattern.clone(), d.now())).unwrap();
        let resp = d.issue(Command::rd(addr, d.now())).unwrap();
        match resp.kind {
            ResponseKind::Data(bits) => assert_eq!(bits, pattern),
            other => panic!("expected data, got {other:?}"),
        }
        // close respecting tRAS
        let pre_at = t.t_ras.max(d.now());
        d.issue(Command::pre(addr, pre_at)).unwrap();
    }

    #[test]
    fn open_duration_recorded() {
        let mut d = small();
        let addr = RowAddress::new(0, 1, 3);
        let t = d.timing;
        d.issue(Command::act(addr, 10)).unwrap();
        let k = 17;
        d.issue(Command::pre(addr, 10 + t.t_ras + k)).unwrap();
        assert_eq!(d.stats.last_open_cycles, Some(t.t_ras + k));
    }

    #[test]
    fn protocol_errors() {
        let mut d = small();
        let a = RowAddress::new(0, 0, 1);
        let b = RowAddress::new(0, 0, 2);
        // RD to closed row
        assert!(matches!(
            d.issue(Command::rd(a, 0)),
            Err(ProtocolError::RowNotOpen { .. })
        ));
        d.issue(Command::act(a, 0)).unwrap();
        // ACT to busy bank (no implicit precharge)
        assert!(matches!(
            d.issue(Command::act(b, d.now())),
            Err(ProtocolError::BankBusy { .. })
        ));
        // premature precharge
        assert!(matches!(
            d.issue(Command::pre(a, d.now())),
            Err(ProtocolError::PrematurePrecharge { .. })
        ));
        // REF while open
        let t = d.timing;
        assert!(matches!(
            d.issue(Command::refresh(t.t_ras + 50)),
            Err(ProtocolError::RefWhileRowOpen { .. })
        ));
        // issue in the past
        d.issue(Command::pre(a, t.t_ras)).unwrap();
        assert!(matches!(
            d.issue(Command::act(a, 0)),
            Err(ProtocolError::IssueInPast { .. })
        ));
    }

    #[test]
    fn peek_poke_roundtrip_and_protocol_agreement() {
        let mut d = small();
        let addr = RowAddress::new(0, 0, 3);
        let mut pattern = BitRow::zero(256);
        pattern.set(0, true);
        pattern.set(200, true);
        d.poke_row(&addr, &pattern).unwrap();
        assert_eq!(d.peek_row(&addr).unwrap(), pattern);
        d.issue(Command::act(addr, 0)).unwrap();
        match d.issue(Command::rd(addr, d.now())).unwrap().kind {
            ResponseKind::Data(bits) => assert_eq!(bits, pattern),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn peek_out_of_range() {
        let d = small();
        let addr = RowAddress::new(0, 0, 64);
        assert!(matches!(
            d.peek_row(&addr),
            Err(ProtocolError::AddressOutOfRange(_))
        ));
    }

    #[test]
    fn completion_cycles_strictly_increase() {
        let mut d = small();
        let addr = RowAddress::new(0, 0, 9);
        let t = d.timing;
        let mut last = 0;
        let mut cycle = 0;
        for _ in 0..50 {
            let r1 = d.issue(Command::act(addr, cycle)).unwrap();
            assert!(r1.completion_cycle > last);
            last = r1.completion_cycle;
            cycle += t.t_ras;
            let r2 = d.issue(Command::pre(addr, cycle)).unwrap();
            assert!(r2.completion_cycle > last);
            last = r2.completion_cycle;
            cycle = r2.completion_cycle;
        }
    }

    #[test]
    fn replay_determinism_full_state() {
        let run = || {
            let mut d = small();
            d.set_disturbance(DisturbanceProfile {
                enabled: true,
                ..DisturbanceProfile::default()
            });
            let t = d.timing;
            let mut cycle = 0;
            for i in 0..500u64 {
                let addr = RowAddress::new(0, (i % 2) as usize, (i * 7 % 64) as usize);
                d.issue(Command::act(addr, cycle)).unwrap();
                cycle += t.t_ras + (i % 5);
                d.issue(Command::pre(addr, cycle)).unwrap();
                cycle = d.now();
                if i % 97 == 0 {
                    cycle = d.now().max(cycle);
                    d.issue(Command::refresh(cycle)).unwrap();
                    cycle = d.now();
                }
            }
            d
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
    }

    #[test]
    fn refresh_covers_all_rows_within_window() {
        let g = DramGeometry {
            channels: 1,
            ranks_per_channel: 1,
            banks_per_rank: 1,
            subarrays_per_bank: 1,
            rows_per_subarray: 64,
            columns_per_row: 64,
        };
        let t = TimingParams {
            t_refi: 1000,
            t_refw: 8000,
            ..Default::default()
        };
        let mut d = DeviceState::new(g, t, 1).unwrap();
        let mut cycle = 0;
        for _ in 0..8 {
            cycle += 1000;
            d.issue(Command::refresh(cycle.max(d.now()))).unwrap();
        }
        let horizon = d.now();
        for row in &d.rows {
            assert!(row.last_refresh_cycle > 0);
            assert!(horizon - row.last_refresh_cycle <= 8000);
        }
    }
}
