//! Controller- and chip-side read-disturbance mitigations.
//!
//! - PARA: on each activation, refresh the ±1 neighbors with probability `p`.
//! - TRR: a small frequency sampler (Misra-Gries) tracks hot rows and
//!   refreshes their neighbors at REF time. Deliberately bypassable: equal
//!   round-robin hammering of `slots + 1` aggressors keeps evicting entries,
//!   so at least one aggressor escapes every window.
//! - PRAC: per-row activation counters incremented at precharge; crossing the
//!   threshold asserts ALERT, which rejects every command chip-wide until the
//!   recovery window has elapsed, then refreshes the aggressor's victims and
//!   zeroes its counter.

use serde::Deserialize;
use thiserror::Error;

use crate::device::DeviceState;
use crate::dram::{Command, ProtocolError, RowAddress, TimingParams};

#[derive(Clone, Debug, PartialEq, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MitigationConfig {
    #[default]
    None,
    Para {
        /// Neighbor-refresh probability per activation.
        p: f64,
    },
    Trr {
        sampler_slots: usize,
        #[serde(default = "default_per_refresh_checks")]
        per_refresh_checks: usize,
    },
    Prac {
        threshold: u64,
        #[serde(default = "default_recovery_cycles")]
        recovery_cycles: u64,
        /// Victim radius refreshed during recovery (distance 1..=n each side).
        #[serde(default = "default_victims_refreshed")]
        victims_refreshed: usize,
    },
}

fn default_per_refresh_checks() -> usize {
    1
}

fn default_recovery_cycles() -> u64 {
    350
}

fn default_victims_refreshed() -> usize {
    2
}

impl MitigationConfig {
    pub fn validate(&self) -> Result<(), MitigationError> {
        match self {
            MitigationConfig::None => Ok(()),
            MitigationConfig::Para { p } => {
                if *p > 0.0 && *p <= 1.0 {
                    Ok(())
                } else {
                    Err(MitigationError::Config(format!(
                        "para p must be in (0,1] (got {p})"
                    )))
                }
            }
            MitigationConfig::Trr {
                sampler_slots,
                per_refresh_checks,
            } => {
                if *sampler_slots < 1 {
                    return Err(MitigationError::Config("sampler_slots ≥ 1".into()));
                }
                if *per_refresh_checks < 1 {
                    return Err(MitigationError::Config("per_refresh_checks ≥ 1".into()));
                }
                Ok(())
            }
            MitigationConfig::Prac {
                threshold,
                recovery_cycles,
                victims_refreshed,
            } => {
                if *threshold < 1 {
                    return Err(MitigationError::Config("threshold ≥ 1".into()));
                }
                if *recovery_cycles < 1 {
                    return Err(MitigationError::Config("recovery_cycles ≥ 1".into()));
                }
                if *victims_refreshed < 1 {
                    return Err(MitigationError::Config("victims_refreshed ≥ 1".into()));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum MitigationError {
    #[error("mitigation config: {0}")]
    Config(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlertState {
    pub since_cycle: u64,
    /// Over-threshold rows whose victims get refreshed during recovery.
    pub pending_rows: Vec<RowAddress>,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct SamplerEntry {
    pub row_index: usize,
    pub count: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MitigationState {
    pub config: MitigationConfig,
    pub alert: Option<AlertState>,
    pub(crate) sampler: Vec<SamplerEntry>,
    pub(crate) recovery_deadline: Option<u64>,
}

impl MitigationState {
    pub fn new(config: MitigationConfig) -> Self {
        MitigationState {
            config,
            alert: None,
            sampler: Vec::new(),
            recovery_deadline: None,
        }
    }

    pub fn recovery_deadline(&self) -> Option<u64> {
        self.recovery_deadline
    }
}

impl DeviceState {
    /// PARA hook, called on every ACT while enabled. Consumes one draw from
    /// the dedicated PARA stream per activation.
    pub(crate) fn para_on_activate(&mut self, addr: &RowAddress, cycle: u64) {
        let MitigationConfig::Para { p } = self.mitigation.config else {
            return;
        };
        let u: f64 = rand::Rng::random(&mut self.rng_para);
        if u >= p {
            return;
        }
        let idx = self.row_index(addr);
        let rows_per_subarray = self.geometry().rows_per_subarray;
        let base = idx - idx % rows_per_subarray;
        let local = idx % rows_per_subarray;
        for neighbor in [local.checked_sub(1), local.checked_add(1)] {
            let Some(n) = neighbor else { continue };
            if n >= rows_per_subarray {
                continue;
            }
            self.refresh_row(base + n, cycle);
            self.stats.victim_refreshes += 1;
        }
        self.stats.para_refreshes += 1;
    }

    /// TRR sampler update on ACT (Misra-Gries frequency summary).
    pub(crate) fn trr_observe(&mut self, row_index: usize) {
        let MitigationConfig::Trr { sampler_slots, .. } = self.mitigation.config else {
            return;
        };
        let sampler = &mut self.mitigation.sampler;
        if let Some(entry) = sampler.iter_mut().find(|e| e.row_index == row_index) {
            entry.count += 1;
        } else if sampler.len() < sampler_slots {
            sampler.push(SamplerEntry {
                row_index,
                count: 1,
            });
        } else {
            for entry in sampler.iter_mut() {
                entry.count -= 1;
            }
            sampler.retain(|e| e.count > 0);
        }
    }

    /// TRR action at REF: refresh the neighbors of the most-activated sampled
    /// rows, then start a fresh sampling window.
    pub(crate) fn trr_on_refresh(&mut self, cycle: u64) {
        let MitigationConfig::Trr {
            per_refresh_checks, ..
        } = self.mitigation.config
        else {
            return;
        };
        let mut entries = std::mem::take(&mut self.mitigation.sampler);
        entries.sort_by(|a, b| b.count.cmp(&a.count).then(a.row_index.cmp(&b.row_index)));
        let rows_per_subarray = self.geometry().rows_per_subarray;
        for entry in entries.into_iter().take(per_refresh_checks) {
            let base = entry.row_index - entry.row_index % rows_per_subarray;
            let local = entry.row_index % rows_per_subarray;
            for neighbor in [local.checked_sub(1), local.checked_add(1)] {
                let Some(n) = neighbor else { continue };
                if n >= rows_per_subarray {
                    continue;
                }
                self.refresh_row(base + n, cycle);
                self.stats.trr_refreshes += 1;
                self.stats.victim_refreshes += 1;
            }
        }
    }

    /// PRAC hook at precharge: the row's counter was just incremented; assert
    /// ALERT when it reaches the threshold.
    pub(crate) fn prac_on_precharge(&mut self, row_index: usize, cycle: u64) {
        let MitigationConfig::Prac {
            threshold,
            recovery_cycles,
            ..
        } = self.mitigation.config
        else {
            return;
        };
        if self.rows[row_index].act_counter >= threshold && self.mitigation.alert.is_none() {
            self.mitigation.alert = Some(AlertState {
                since_cycle: cycle,
                pending_rows: vec![self.addr_of(row_index)],
            });
            self.mitigation.recovery_deadline = Some(cycle + recovery_cycles);
            self.stats.alerts_asserted += 1;
        }
    }

    /// Applies the deferred recovery work: refresh victims of each pending
    /// row, zero its counter, release the chip.
    pub(crate) fn complete_alert_recovery(&mut self, cycle: u64) {
        let MitigationConfig::Prac {
            victims_refreshed, ..
        } = self.mitigation.config
        else {
            return;
        };
        let Some(alert) = self.mitigation.alert.take() else {
            return;
        };
        self.mitigation.recovery_deadline = None;
        let rows_per_subarray = self.geometry().rows_per_subarray;
        for addr in &alert.pending_rows {
            let idx = self.row_index(addr);
            let base = idx - idx % rows_per_subarray;
            let local = idx % rows_per_subarray;
            for d in 1..=victims_refreshed {
                for neighbor in [local.checked_sub(d), local.checked_add(d)] {
                    let Some(n) = neighbor else { continue };
                    if n >= rows_per_subarray {
                        continue;
                    }
                    self.refresh_row(base + n, cycle);
                    self.stats.victim_refreshes += 1;
                }
            }
            self.rows[idx].act_counter = 0;
        }
        self.stats.prac_recoveries += 1;
    }
}

/// Controller-side periodic refresh: issues one REF per tREFI so the device's
/// round-robin groups cover every row within tREFW.
#[derive(Clone, Debug)]
pub struct RefreshScheduler {
    period: u64,
    next_due: u64,
}

impl RefreshScheduler {
    pub fn new(timing: &TimingParams) -> Self {
        RefreshScheduler {
            period: timing.t_refi,
            next_due: timing.t_refi,
        }
    }

    /// Issues every REF due at or before `horizon`. The caller guarantees all
    /// banks are precharged.
    pub fn tick(
        &mut self,
        device: &mut DeviceState,
        horizon: u64,
    ) -> Result<u64, ProtocolError> {
        let mut issued = 0;
        while self.next_due <= horizon {
            let at = self.next_due.max(device.now());
            device.issue(Command::refresh(at))?;
            self.next_due += self.period;
            issued += 1;
        }
        Ok(issued)
    }

    pub fn next_due(&self) -> u64 {
        self.next_due
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::disturbance::{measure_acmin, AccessRecipe, DisturbanceProfile};
    use crate::dram::{DramGeometry, ResponseKind};

    fn fixture(acmin: f64, mitigation: MitigationConfig) -> DeviceState {
        let g = DramGeometry {
            channels: 1,
            ranks_per_channel: 1,
            banks_per_rank: 2,
            subarrays_per_bank: 1,
            rows_per_subarray: 64,
            columns_per_row: 64,
        };
        let mut d = DeviceState::new(g, TimingParams::default(), 5).unwrap();
        d.set_disturbance(DisturbanceProfile {
            enabled: true,
            acmin_log_sigma: 0.0,
            vrd_ratio_max: 1.0,
            blast_weights: vec![1.0],
            ..Default::default()
        });
        d.set_fixed_acmin(acmin);
        d.set_mitigation(mitigation);
        d
    }

    fn hammer(d: &mut DeviceState, row: usize, pairs: u64) {
        let addr = RowAddress::new(0, 0, row);
        let t = *d.timing();
        for _ in 0..pairs {
            let c = d.now();
            let resp = d.issue(Command::act(addr, c)).unwrap();
            if !resp.accepted() {
                // wait out recovery, retry
                let retry = resp.completion_cycle + t.nack_retry_backoff;
                let r2 = d.issue(Command::act(addr, retry)).unwrap();
                if !r2.accepted() {
                    continue;
                }
            }
            let since = match d.row(&addr).status {
                crate::dram::RowStatus::Open { since_cycle } => since_cycle,
                _ => continue,
            };
            d.issue(Command::pre(addr, since + t.t_ras)).unwrap();
        }
    }

    #[test]
    fn para_p1_blocks_distance_one_flips() {
        let mut d = fixture(100.0, MitigationConfig::Para { p: 1.0 });
        hammer(&mut d, 20, 5000);
        assert!(d.events.is_empty());
        assert_eq!(d.stats.para_refreshes, 5000);
    }

    #[test]
    fn para_geometric_interval() {
        // mean activations between neighbor refreshes ≈ 1/p
        let mut d = fixture(f64::INFINITY, MitigationConfig::Para { p: 0.001 });
        d.set_fixed_acmin(f64::INFINITY);
        let before = d.stats.para_refreshes;
        let trials: u64 = 1_000_000;
        hammer(&mut d, 20, trials);
        let fired = d.stats.para_refreshes - before;
        let mean = trials as f64 / fired as f64;
        assert!(
            (950.0..=1050.0).contains(&mean),
            "mean interval {mean} (fired {fired})"
        );
    }

    #[test]
    fn prac_alert_on_exact_threshold() {
        let mut d = fixture(f64::INFINITY, MitigationConfig::Prac {
            threshold: 32,
            recovery_cycles: 350,
            victims_refreshed: 2,
        });
        let addr = RowAddress::new(0, 0, 20);
        let t = *d.timing();
        for i in 1..=31u64 {
            let c = d.now();
            d.issue(Command::act(addr, c)).unwrap();
            d.issue(Command::pre(addr, c + t.t_ras)).unwrap();
            assert!(d.mitigation.alert.is_none(), "early alert at pair {i}");
        }
        let c = d.now();
        d.issue(Command::act(addr, c)).unwrap();
        d.issue(Command::pre(addr, c + t.t_ras)).unwrap();
        assert!(d.mitigation.alert.is_some(), "no alert at 32nd precharge");
    }

    #[test]
    fn prac_alert_blocks_whole_chip_until_recovery() {
        let mut d = fixture(f64::INFINITY, MitigationConfig::Prac {
            threshold: 4,
            recovery_cycles: 500,
            victims_refreshed: 2,
        });
        hammer(&mut d, 20, 4);
        let deadline = d.mitigation.recovery_deadline().unwrap();
        // other bank is rejected too while recovery is pending
        let other = RowAddress::new(1, 0, 3);
        let resp = d.issue(Command::act(other, d.now())).unwrap();
        assert_eq!(resp.kind, ResponseKind::Alert);
        // counter reset + victims refreshed once recovery elapses
        let resp = d.issue(Command::act(other, deadline)).unwrap();
        assert!(resp.accepted());
        assert_eq!(d.rows[20].act_counter, 0);
        assert_eq!(d.stats.prac_recoveries, 1);
    }

    #[test]
    fn trr_single_aggressor_tracked() {
        let mut d = fixture(
            300.0,
            MitigationConfig::Trr {
                sampler_slots: 1,
                per_refresh_checks: 1,
            },
        );
        // hammer below threshold, REF (TRR refreshes victims), repeat
        for _ in 0..20 {
            hammer(&mut d, 20, 250);
            let c = d.now();
            d.issue(Command::refresh(c)).unwrap();
        }
        assert!(d.events.is_empty());
        assert!(d.stats.trr_refreshes > 0);
    }

    #[test]
    fn trr_bypassed_by_many_sided() {
        let mut d = fixture(
            300.0,
            MitigationConfig::Trr {
                sampler_slots: 1,
                per_refresh_checks: 1,
            },
        );
        // two aggressors round-robin: Misra-Gries with one slot keeps
        // evicting, so victims accumulate across REFs
        for _ in 0..8 {
            for _ in 0..250 {
                hammer(&mut d, 20, 1);
                hammer(&mut d, 30, 1);
            }
            let c = d.now();
            d.issue(Command::refresh(c)).unwrap();
        }
        assert!(!d.events.is_empty(), "many-sided pattern should flip");
    }

    #[test]
    fn trr_no_refresh_without_activations() {
        let mut d = fixture(
            300.0,
            MitigationConfig::Trr {
                sampler_slots: 2,
                per_refresh_checks: 2,
            },
        );
        d.issue(Command::refresh(100)).unwrap();
        assert_eq!(d.stats.trr_refreshes, 0);
    }

    #[test]
    fn refresh_scheduler_covers_window() {
        let g = DramGeometry {
            channels: 1,
            ranks_per_channel: 1,
            banks_per_rank: 1,
            subarrays_per_bank: 1,
            rows_per_subarray: 64,
            columns_per_row: 64,
        };
        let t = TimingParams {
            t_refi: 500,
            t_refw: 4000,
            ..Default::default()
        };
        let mut d = DeviceState::new(g, t, 1).unwrap();
        let mut sched = RefreshScheduler::new(&t);
        sched.tick(&mut d, 4000).unwrap();
        for row in &d.rows {
            assert!(row.last_refresh_cycle > 0);
            assert!(d.now() - row.last_refresh_cycle <= 4000);
        }
    }

    #[test]
    fn doubling_refresh_rate_halves_attack_budget() {
        // one REF covers all rows (single group); a threshold between the
        // two budgets flips only under the slower rate
        let g = DramGeometry {
            channels: 1,
            ranks_per_channel: 1,
            banks_per_rank: 1,
            subarrays_per_bank: 1,
            rows_per_subarray: 16,
            columns_per_row: 64,
        };
        let budget =
            |refi: u64| -> Option<u64> {
                let t = TimingParams {
                    t_refi: refi,
                    t_refw: refi,
                    ..Default::default()
                };
                let mut d = DeviceState::new(g, t, 3).unwrap();
                d.set_disturbance(DisturbanceProfile {
                    enabled: true,
                    acmin_log_sigma: 0.0,
                    vrd_ratio_max: 1.0,
                    blast_weights: vec![1.0],
                    ..Default::default()
                });
                d.set_fixed_acmin(600.0);
                let aggr = RowAddress::new(0, 0, 8);
                measure_acmin(
                    &mut d,
                    &aggr,
                    &AccessRecipe {
                        hold_cycles: None,
                        cap: 10_000,
                        ref_period: Some(refi),
                    },
                )
                .unwrap()
                .count()
            };
        let slow = budget(80_000); // ~2000 activations per window
        let fast = budget(20_000); // ~500 activations per window
        assert!(slow.is_some(), "slow refresh must allow the flip");
        assert!(fast.is_none(), "fast refresh must prevent it");
    }

    #[test]
    fn no_refresh_means_any_threshold_falls() {
        let mut d = fixture(5000.0, MitigationConfig::None);
        hammer(&mut d, 20, 5000);
        assert!(!d.events.is_empty());
    }

    #[test]
    fn disabled_mitigations_are_noops() {
        let run = |mitigation: MitigationConfig| {
            let mut d = fixture(f64::INFINITY, mitigation);
            hammer(&mut d, 20, 200);
            d.digest()
        };
        let none = run(MitigationConfig::None);
        // TRR with a huge window never fires between REFs (none issued)
        let trr = run(MitigationConfig::Trr {
            sampler_slots: 4,
            per_refresh_checks: 1,
        });
        // PRAC threshold far above the trace's activation count
        let prac = run(MitigationConfig::Prac {
            threshold: 1_000_000,
            recovery_cycles: 350,
            victims_refreshed: 2,
        });
        assert_eq!(none, trr);
        assert_eq!(none, prac);
    }
}
