//! Self-managing maintenance: the chip plans and runs refresh, hammer
//! mitigation, and scrub tasks over lockable regions, rejecting row-opening
//! commands that target a region under maintenance (the controller retries
//! after a backoff). Maintenance in one region overlaps host accesses to
//! others.

use serde::Deserialize;
use thiserror::Error;

use crate::device::DeviceState;
use crate::dram::{Command, ProtocolError, Response, ResponseKind, RowAddress};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionScope {
    Subarray,
    Bank,
}

/// A lockable maintenance domain: one subarray or one whole bank.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Region {
    pub scope: RegionScope,
    pub channel: usize,
    pub rank: usize,
    pub bank: usize,
    /// Meaningful only for subarray scope.
    pub subarray: usize,
}

impl Region {
    pub fn subarray_of(addr: &RowAddress) -> Self {
        Region {
            scope: RegionScope::Subarray,
            channel: addr.channel,
            rank: addr.rank,
            bank: addr.bank,
            subarray: addr.subarray,
        }
    }

    pub fn bank_of(addr: &RowAddress) -> Self {
        Region {
            scope: RegionScope::Bank,
            channel: addr.channel,
            rank: addr.rank,
            bank: addr.bank,
            subarray: 0,
        }
    }

    pub fn contains(&self, addr: &RowAddress) -> bool {
        let same_bank =
            self.channel == addr.channel && self.rank == addr.rank && self.bank == addr.bank;
        match self.scope {
            RegionScope::Bank => same_bank,
            RegionScope::Subarray => same_bank && self.subarray == addr.subarray,
        }
    }

    pub fn overlaps(&self, other: &Region) -> bool {
        if self.channel != other.channel || self.rank != other.rank || self.bank != other.bank {
            return false;
        }
        match (self.scope, other.scope) {
            (RegionScope::Bank, _) | (_, RegionScope::Bank) => true,
            (RegionScope::Subarray, RegionScope::Subarray) => self.subarray == other.subarray,
        }
    }
}

impl std::fmt::Display for Region {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.scope {
            RegionScope::Bank => {
                write!(f, "bank:{}.{}.{}", self.channel, self.rank, self.bank)
            }
            RegionScope::Subarray => write!(
                f,
                "subarray:{}.{}.{}.{}",
                self.channel, self.rank, self.bank, self.subarray
            ),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Refresh,
    RhMitigation,
    Scrub,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaintenanceTask {
    pub kind: TaskKind,
    pub region: Region,
    pub duration: u64,
    pub due_cycle: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Lock {
    pub region: Region,
    pub kind: TaskKind,
    pub release_cycle: u64,
}

/// Active locks; a row belongs to at most one locked region at a time.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RegionLockTable {
    locks: Vec<Lock>,
}

impl RegionLockTable {
    pub fn lock(&mut self, region: Region, kind: TaskKind, release_cycle: u64) -> Result<(), SmdError> {
        if let Some(existing) = self.locks.iter().find(|l| l.region.overlaps(&region)) {
            return Err(SmdError::DoubleLock {
                region,
                held: existing.region,
            });
        }
        self.locks.push(Lock {
            region,
            kind,
            release_cycle,
        });
        Ok(())
    }

    pub fn unlock(&mut self, region: &Region) -> Option<Lock> {
        let pos = self.locks.iter().position(|l| l.region == *region)?;
        Some(self.locks.remove(pos))
    }

    pub fn locked_region_for(&self, addr: &RowAddress) -> Option<Region> {
        self.locks
            .iter()
            .find(|l| l.region.contains(addr))
            .map(|l| l.region)
    }

    pub fn is_locked(&self, region: &Region) -> bool {
        self.locks.iter().any(|l| l.region.overlaps(region))
    }

    pub fn len(&self) -> usize {
        self.locks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locks.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum SmdError {
    #[error("region {region} already locked (held: {held})")]
    DoubleLock { region: Region, held: Region },
    #[error("region {region} has an open row; cannot begin maintenance")]
    RegionBusy { region: Region },
    #[error("task on {region} is not active")]
    NotActive { region: Region },
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmdConfig {
    pub enabled: bool,
    /// Task durations in cycles (calibration knobs).
    pub refresh_duration: u64,
    pub rh_duration: u64,
    pub scrub_duration: u64,
    /// Scrub one region every this many cycles; 0 disables scrubbing.
    pub scrub_period: u64,
    /// Chip-internal activation-count threshold for hammer mitigation.
    pub rh_threshold: u64,
    pub scope: RegionScope,
    /// Retries before the controller declares starvation.
    pub retry_cap: u64,
}

impl Default for SmdConfig {
    fn default() -> Self {
        SmdConfig {
            enabled: false,
            refresh_duration: 128,
            rh_duration: 64,
            scrub_duration: 256,
            scrub_period: 0,
            rh_threshold: 1024,
            scope: RegionScope::Subarray,
            retry_cap: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SmdState {
    pub config: SmdConfig,
    pub locks: RegionLockTable,
}

impl SmdState {
    pub fn new(config: SmdConfig) -> Self {
        SmdState {
            config,
            locks: RegionLockTable::default(),
        }
    }
}

impl DeviceState {
    /// Reject filter applied to row-opening commands: an ACT into a locked
    /// region gets a NACK carrying the region id.
    pub(crate) fn smd_filter(&self, addr: &RowAddress) -> Option<Region> {
        if !self.smd.config.enabled {
            return None;
        }
        self.smd.locks.locked_region_for(addr)
    }

    fn region_row_indices(&self, region: &Region) -> std::ops::Range<usize> {
        let g = self.geometry();
        let bank = (region.channel * g.ranks_per_channel + region.rank) * g.banks_per_rank
            + region.bank;
        match region.scope {
            RegionScope::Bank => {
                let start = bank * g.rows_per_bank();
                start..start + g.rows_per_bank()
            }
            RegionScope::Subarray => {
                let start =
                    (bank * g.subarrays_per_bank + region.subarray) * g.rows_per_subarray;
                start..start + g.rows_per_subarray
            }
        }
    }

    fn region_has_open_row(&self, region: &Region) -> bool {
        let rows = self.region_row_indices(region);
        self.open_row
            .iter()
            .flatten()
            .any(|idx| rows.contains(idx))
    }

    /// Locks the task's region for its duration, starting at `begin_cycle`.
    pub fn smd_begin(&mut self, task: &MaintenanceTask, begin_cycle: u64) -> Result<(), SmdError> {
        if self.region_has_open_row(&task.region) {
            return Err(SmdError::RegionBusy {
                region: task.region,
            });
        }
        self.smd
            .locks
            .lock(task.region, task.kind, begin_cycle + task.duration)?;
        Ok(())
    }

    /// Unlocks the region and applies the maintenance effects.
    pub fn smd_complete(&mut self, task: &MaintenanceTask, cycle: u64) -> Result<(), SmdError> {
        if self.smd.locks.unlock(&task.region).is_none() {
            return Err(SmdError::NotActive {
                region: task.region,
            });
        }
        self.apply_task_effects(task, cycle);
        Ok(())
    }

    /// Maintenance effects alone (the blocking baseline applies these with
    /// no region lock, stalling the rank instead).
    pub fn apply_task_effects(&mut self, task: &MaintenanceTask, cycle: u64) {
        let rows = self.region_row_indices(&task.region);
        match task.kind {
            TaskKind::Refresh => {
                for i in rows {
                    self.refresh_row(i, cycle);
                }
            }
            TaskKind::RhMitigation => {
                for i in rows {
                    self.refresh_row(i, cycle);
                    self.rows[i].act_counter = 0;
                }
            }
            TaskKind::Scrub => {
                if let Some(reference) = self.scrub_reference.take() {
                    for i in rows {
                        let want = &reference[i];
                        if self.rows[i].data != *want {
                            for bit in 0..want.len() {
                                if self.rows[i].data.get(bit) != want.get(bit) {
                                    self.stats.scrub_detections += 1;
                                    let v = want.get(bit);
                                    self.rows[i].data.set(bit, v);
                                }
                            }
                        }
                    }
                    self.scrub_reference = Some(reference);
                }
            }
        }
        self.stats.smd_tasks_completed += 1;
    }

    /// Fault-injection helper: hold a lock until `release_cycle` with no task
    /// attached.
    pub fn smd_force_lock(&mut self, region: Region, release_cycle: u64) -> Result<(), SmdError> {
        self.smd.locks.lock(region, TaskKind::Refresh, release_cycle)
    }

    pub fn smd_force_unlock(&mut self, region: &Region) {
        self.smd.locks.unlock(region);
    }

    fn all_regions(&self) -> Vec<Region> {
        let g = *self.geometry();
        let mut out = Vec::new();
        for channel in 0..g.channels {
            for rank in 0..g.ranks_per_channel {
                for bank in 0..g.banks_per_rank {
                    match self.smd.config.scope {
                        RegionScope::Bank => out.push(Region {
                            scope: RegionScope::Bank,
                            channel,
                            rank,
                            bank,
                            subarray: 0,
                        }),
                        RegionScope::Subarray => {
                            for subarray in 0..g.subarrays_per_bank {
                                out.push(Region {
                                    scope: RegionScope::Subarray,
                                    channel,
                                    rank,
                                    bank,
                                    subarray,
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// Chip-internal maintenance planner and driver. Host simulation calls
/// `advance` as simulated time passes; the engine completes due tasks, plans
/// new ones, and begins them when their region is free.
#[derive(Clone, Debug)]
pub struct SmdEngine {
    regions: Vec<Region>,
    next_refresh_due: Vec<u64>,
    next_scrub_due: u64,
    scrub_cursor: usize,
    pending: Vec<MaintenanceTask>,
    active: Vec<MaintenanceTask>,
    /// Regions already queued for hammer mitigation (avoid duplicates).
    rh_queued: Vec<Region>,
}

impl SmdEngine {
    pub fn new(device: &DeviceState) -> Self {
        let regions = device.all_regions();
        let t_refw = device.timing().t_refw;
        let n = regions.len() as u64;
        // stagger region refreshes across the window
        let next_refresh_due = (0..regions.len())
            .map(|i| (i as u64 + 1) * t_refw / n.max(1))
            .collect();
        SmdEngine {
            regions,
            next_refresh_due,
            next_scrub_due: device.smd.config.scrub_period,
            scrub_cursor: 0,
            pending: Vec::new(),
            active: Vec::new(),
            rh_queued: Vec::new(),
        }
    }

    /// Emits tasks that are due at `cycle` per the autonomous policy:
    /// staggered refresh covering every row within tREFW, hammer mitigation
    /// when a chip-internal counter nears the threshold, scrub on a fixed
    /// period. Never plans two tasks over overlapping regions.
    pub fn smd_plan(&mut self, device: &DeviceState, cycle: u64) -> Vec<MaintenanceTask> {
        if !device.smd.config.enabled {
            return Vec::new();
        }
        let cfg = &device.smd.config;
        let t_refw = device.timing().t_refw;
        let mut planned = Vec::new();
        for (i, region) in self.regions.iter().enumerate() {
            if self.next_refresh_due[i] <= cycle {
                planned.push(MaintenanceTask {
                    kind: TaskKind::Refresh,
                    region: *region,
                    duration: cfg.refresh_duration,
                    due_cycle: self.next_refresh_due[i],
                });
                self.next_refresh_due[i] += t_refw;
            }
        }
        // hammer mitigation once a counter reaches 90% of the threshold:
        // locking the region freezes its counters, so the threshold cannot be
        // crossed while the task is pending or running
        let trip = (cfg.rh_threshold as f64 * 0.9).ceil() as u64;
        for (i, region) in self.regions.iter().enumerate() {
            if self.rh_queued.contains(region) {
                continue;
            }
            let rows = device.region_row_indices(region);
            if device.rows[rows].iter().any(|r| r.act_counter >= trip) {
                planned.push(MaintenanceTask {
                    kind: TaskKind::RhMitigation,
                    region: *region,
                    duration: cfg.rh_duration,
                    due_cycle: cycle,
                });
                self.rh_queued.push(self.regions[i]);
            }
        }
        if cfg.scrub_period > 0 && self.next_scrub_due <= cycle {
            let region = self.regions[self.scrub_cursor % self.regions.len()];
            self.scrub_cursor += 1;
            self.next_scrub_due += cfg.scrub_period;
            planned.push(MaintenanceTask {
                kind: TaskKind::Scrub,
                region,
                duration: cfg.scrub_duration,
                due_cycle: cycle,
            });
        }
        // drop overlaps within this batch (first wins)
        let mut out: Vec<MaintenanceTask> = Vec::new();
        for task in planned {
            if out.iter().any(|t| t.region.overlaps(&task.region)) {
                continue;
            }
            out.push(task);
        }
        out
    }

    /// Completes tasks whose duration elapsed, plans what is due, and begins
    /// pending tasks whose region is idle and unlocked.
    pub fn advance(&mut self, device: &mut DeviceState, cycle: u64) {
        if !device.smd.config.enabled {
            return;
        }
        loop {
            // complete in release order so effects land deterministically
            self.active
                .sort_by_key(|t| (t.due_cycle + t.duration, t.region.bank, t.region.subarray));
            let Some(pos) = self
                .active
                .iter()
                .position(|t| t.due_cycle + t.duration <= cycle)
            else {
                break;
            };
            let task = self.active.remove(pos);
            device
                .smd_complete(&task, task.due_cycle + task.duration)
                .expect("active task holds its lock");
            if task.kind == TaskKind::RhMitigation {
                self.rh_queued.retain(|r| *r != task.region);
            }
        }
        let newly = self.smd_plan(device, cycle);
        self.pending.extend(newly);
        self.pending
            .sort_by_key(|t| (t.due_cycle, t.region.bank, t.region.subarray));
        let mut still_pending = Vec::new();
        for task in std::mem::take(&mut self.pending) {
            if task.due_cycle > cycle {
                still_pending.push(task);
                continue;
            }
            let mut begun = task;
            begun.due_cycle = cycle;
            match device.smd_begin(&begun, cycle) {
                Ok(()) => self.active.push(begun),
                // region busy or overlapping an active lock: try again later
                Err(_) => still_pending.push(task),
            }
        }
        self.pending = still_pending;
    }

    pub fn active_tasks(&self) -> &[MaintenanceTask] {
        &self.active
    }

    pub fn pending_tasks(&self) -> &[MaintenanceTask] {
        &self.pending
    }
}

/// Controller-side NACK/ALERT retry policy with fixed backoff.
#[derive(Clone, Copy, Debug)]
pub struct RetryPolicy {
    pub backoff: u64,
    pub cap: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RetryStats {
    pub commands_retried: u64,
    pub retries_total: u64,
    pub latency_added: u64,
    pub max_retries_single: u64,
}

#[derive(Debug, Error)]
pub enum RetryError {
    #[error("command starved: {retries} retries exceeded cap {cap} (mis-sized maintenance duration?)")]
    Starvation { retries: u64, cap: u64 },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

/// Issues a command, requeuing it with fixed backoff on NACK/ALERT until it
/// is accepted; no command is dropped. Returns the accepted response.
pub fn issue_with_retry(
    device: &mut DeviceState,
    engine: Option<&mut SmdEngine>,
    mut cmd: Command,
    policy: &RetryPolicy,
    stats: &mut RetryStats,
) -> Result<Response, RetryError> {
    let first_issue = cmd.issue_cycle;
    let mut retries = 0;
    let mut engine = engine;
    loop {
        if let Some(e) = engine.as_deref_mut() {
            e.advance(device, cmd.issue_cycle.max(device.now()));
        }
        cmd.issue_cycle = cmd.issue_cycle.max(device.now());
        let resp = device.issue(cmd.clone())?;
        match resp.kind {
            ResponseKind::Nack(_) | ResponseKind::Alert => {
                retries += 1;
                if retries > policy.cap {
                    return Err(RetryError::Starvation {
                        retries,
                        cap: policy.cap,
                    });
                }
                cmd.issue_cycle = resp.completion_cycle + policy.backoff;
            }
            _ => {
                if retries > 0 {
                    stats.commands_retried += 1;
                    stats.retries_total += retries;
                    stats.latency_added += cmd.issue_cycle - first_issue;
                    stats.max_retries_single = stats.max_retries_single.max(retries);
                }
                return Ok(resp);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dram::{DramGeometry, RowStatus, TimingParams};

    fn device() -> DeviceState {
        let g = DramGeometry {
            channels: 1,
            ranks_per_channel: 1,
            banks_per_rank: 2,
            subarrays_per_bank: 4,
            rows_per_subarray: 16,
            columns_per_row: 64,
        };
        let t = TimingParams {
            t_refi: 1000,
            t_refw: 8000,
            ..Default::default()
        };
        let mut d = DeviceState::new(g, t, 21).unwrap();
        d.set_smd(SmdConfig {
            enabled: true,
            ..Default::default()
        });
        d
    }

    #[test]
    fn plan_covers_every_row_once_per_window() {
        let mut d = device();
        let mut engine = SmdEngine::new(&d);
        let t_refw = d.timing().t_refw;
        let tasks = engine.smd_plan(&d, t_refw);
        let refresh: Vec<_> = tasks
            .iter()
            .filter(|t| t.kind == TaskKind::Refresh)
            .collect();
        assert_eq!(refresh.len(), 8, "one refresh task per subarray region");
        let mut covered = vec![0usize; d.geometry().total_rows()];
        for task in &refresh {
            for i in d.region_row_indices(&task.region) {
                covered[i] += 1;
            }
        }
        assert!(covered.iter().all(|&c| c == 1));
    }

    #[test]
    fn disabled_plan_is_empty() {
        let mut d = device();
        d.set_smd(SmdConfig::default()); // enabled: false
        let mut engine = SmdEngine::new(&d);
        assert!(engine.smd_plan(&d, 1_000_000).is_empty());
    }

    #[test]
    fn rh_task_planned_before_counter_can_trip() {
        let mut d = device();
        d.set_smd(SmdConfig {
            enabled: true,
            rh_threshold: 100,
            ..Default::default()
        });
        let addr = RowAddress::new(0, 1, 5);
        let idx = d.row_index(&addr);
        d.rows[idx].act_counter = 90;
        let mut engine = SmdEngine::new(&d);
        let tasks = engine.smd_plan(&d, 50);
        assert!(tasks
            .iter()
            .any(|t| t.kind == TaskKind::RhMitigation && t.region.contains(&addr)));
        // lock the region: the aggressor can no longer be activated, so the
        // counter is frozen below the threshold until mitigation completes
        let task = tasks
            .iter()
            .find(|t| t.kind == TaskKind::RhMitigation)
            .unwrap();
        d.smd_begin(task, 50).unwrap();
        let resp = d.issue(Command::act(addr, 60)).unwrap();
        assert!(matches!(resp.kind, ResponseKind::Nack(_)));
        assert_eq!(d.rows[idx].act_counter, 90);
        d.smd_complete(task, 50 + task.duration).unwrap();
        assert_eq!(d.rows[idx].act_counter, 0);
    }

    #[test]
    fn begin_complete_refresh_updates_rows() {
        let mut d = device();
        let region = Region {
            scope: RegionScope::Subarray,
            channel: 0,
            rank: 0,
            bank: 0,
            subarray: 2,
        };
        let task = MaintenanceTask {
            kind: TaskKind::Refresh,
            region,
            duration: 128,
            due_cycle: 100,
        };
        d.smd_begin(&task, 100).unwrap();
        // double-lock rejected
        assert!(matches!(
            d.smd_begin(&task, 110),
            Err(SmdError::DoubleLock { .. })
        ));
        d.smd_complete(&task, 228).unwrap();
        for i in d.region_row_indices(&region) {
            assert_eq!(d.rows[i].last_refresh_cycle, 228);
        }
    }

    #[test]
    fn scrub_detects_and_corrects() {
        let mut d = device();
        d.set_scrub_reference();
        let victim = RowAddress::new(0, 1, 3);
        let idx = d.row_index(&victim);
        d.rows[idx].data.flip(17);
        d.rows[idx].data.flip(40);
        let task = MaintenanceTask {
            kind: TaskKind::Scrub,
            region: Region::subarray_of(&victim),
            duration: 256,
            due_cycle: 0,
        };
        d.smd_begin(&task, 0).unwrap();
        d.smd_complete(&task, 256).unwrap();
        assert_eq!(d.stats.scrub_detections, 2);
        assert_eq!(d.rows[idx].data.count_ones(), 0);
    }

    #[test]
    fn disjoint_regions_lock_concurrently() {
        let mut d = device();
        let t1 = MaintenanceTask {
            kind: TaskKind::Refresh,
            region: Region {
                scope: RegionScope::Subarray,
                channel: 0,
                rank: 0,
                bank: 0,
                subarray: 0,
            },
            duration: 100,
            due_cycle: 0,
        };
        let t2 = MaintenanceTask {
            kind: TaskKind::Scrub,
            region: Region {
                scope: RegionScope::Subarray,
                channel: 0,
                rank: 0,
                bank: 1,
                subarray: 0,
            },
            duration: 100,
            due_cycle: 0,
        };
        d.smd_begin(&t1, 0).unwrap();
        d.smd_begin(&t2, 0).unwrap();
        assert_eq!(d.smd.locks.len(), 2);
    }

    #[test]
    fn filter_gates_only_locked_regions() {
        let mut d = device();
        let locked = RowAddress::new(0, 0, 3);
        let free_same_bank = RowAddress::new(0, 1, 3);
        d.smd_force_lock(Region::subarray_of(&locked), 10_000).unwrap();
        let resp = d.issue(Command::act(locked, 0)).unwrap();
        match resp.kind {
            ResponseKind::Nack(region) => assert!(region.contains(&locked)),
            other => panic!("expected NACK, got {other:?}"),
        }
        let resp = d.issue(Command::act(free_same_bank, d.now())).unwrap();
        assert!(resp.accepted());
    }

    #[test]
    fn filter_disabled_passes_everything() {
        let mut d = device();
        d.smd_force_lock(Region::subarray_of(&RowAddress::new(0, 0, 0)), 10_000)
            .unwrap();
        d.set_smd(SmdConfig::default()); // disables + clears locks
        let resp = d.issue(Command::act(RowAddress::new(0, 0, 3), 0)).unwrap();
        assert!(resp.accepted());
    }

    #[test]
    fn begin_defers_while_row_open_in_region() {
        let mut d = device();
        let addr = RowAddress::new(0, 2, 7);
        d.issue(Command::act(addr, 0)).unwrap();
        let task = MaintenanceTask {
            kind: TaskKind::Refresh,
            region: Region::subarray_of(&addr),
            duration: 128,
            due_cycle: 0,
        };
        assert!(matches!(
            d.smd_begin(&task, 5),
            Err(SmdError::RegionBusy { .. })
        ));
        let t = *d.timing();
        d.issue(Command::pre(addr, t.t_ras)).unwrap();
        d.smd_begin(&task, d.now()).unwrap();
    }

    #[test]
    fn retry_succeeds_within_lock_plus_backoff() {
        let mut d = device();
        let addr = RowAddress::new(0, 0, 3);
        let region = Region::subarray_of(&addr);
        // lock for 100 cycles starting at 0
        d.smd_force_lock(region, 100).unwrap();
        let policy = RetryPolicy {
            backoff: 20,
            cap: 100,
        };
        let mut stats = RetryStats::default();
        // manual release at cycle 100 models task completion
        let mut cmd = Command::act(addr, 0);
        let resp = loop {
            cmd.issue_cycle = cmd.issue_cycle.max(d.now());
            if d.now() >= 100 || cmd.issue_cycle >= 100 {
                d.smd_force_unlock(&region);
            }
            let resp = d.issue(cmd.clone()).unwrap();
            match resp.kind {
                ResponseKind::Nack(_) => {
                    stats.retries_total += 1;
                    cmd.issue_cycle = resp.completion_cycle + policy.backoff;
                }
                _ => break resp,
            }
        };
        assert!(resp.accepted());
        // first NACK at cycle 0; success within 120 cycles of it
        assert!(resp.completion_cycle <= 120 + d.timing().t_rcd);
        assert!(stats.retries_total > 0);
    }

    #[test]
    fn no_locks_no_retries() {
        let mut d = device();
        let mut stats = RetryStats::default();
        let policy = RetryPolicy {
            backoff: 20,
            cap: 10,
        };
        let resp = issue_with_retry(
            &mut d,
            None,
            Command::act(RowAddress::new(0, 0, 1), 0),
            &policy,
            &mut stats,
        )
        .unwrap();
        assert!(resp.accepted());
        assert_eq!(stats.retries_total, 0);
    }

    #[test]
    fn permanent_lock_starves_at_cap() {
        let mut d = device();
        let addr = RowAddress::new(0, 0, 3);
        d.smd_force_lock(Region::subarray_of(&addr), u64::MAX).unwrap();
        let policy = RetryPolicy {
            backoff: 20,
            cap: 50,
        };
        let mut stats = RetryStats::default();
        let err = issue_with_retry(&mut d, None, Command::act(addr, 0), &policy, &mut stats)
            .unwrap_err();
        assert!(matches!(err, RetryError::Starvation { retries: 51, cap: 50 }));
    }

    #[test]
    fn engine_liveness_and_coverage_under_random_workload() {
        use rand::{Rng, SeedableRng};
        let mut d = device();
        d.set_smd(SmdConfig {
            enabled: true,
            scrub_period: 50_000,
            ..Default::default()
        });
        let mut engine = SmdEngine::new(&d);
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(99);
        let policy = RetryPolicy {
            backoff: d.timing().nack_retry_backoff,
            cap: 10_000,
        };
        let mut stats = RetryStats::default();
        let t = *d.timing();
        let g = *d.geometry();
        for _ in 0..3000 {
            let addr = RowAddress::new(
                rng.random_range(0..g.banks_per_rank),
                rng.random_range(0..g.subarrays_per_bank),
                rng.random_range(0..g.rows_per_subarray),
            );
            let at = d.now();
            let resp =
                issue_with_retry(&mut d, Some(&mut engine), Command::act(addr, at), &policy, &mut stats)
                    .unwrap();
            assert!(resp.accepted());
            let since = match d.row(&addr).status {
                RowStatus::Open { since_cycle } => since_cycle,
                RowStatus::Closed => unreachable!(),
            };
            issue_with_retry(
                &mut d,
                Some(&mut engine),
                Command::pre(addr, since + t.t_ras),
                &policy,
                &mut stats,
            )
            .unwrap();
        }
        // every row refreshed within the window by self-planned maintenance
        let now = d.now();
        engine.advance(&mut d, now);
        for (i, row) in d.rows.iter().enumerate() {
            assert!(
                now.saturating_sub(row.last_refresh_cycle) <= 2 * t.t_refw,
                "row {i} stale: last refresh {} at {now}",
                row.last_refresh_cycle
            );
        }
    }
}
