//! Read-disturbance fault injection.
//!
//! Each aggressor ACT-PRE pair deposits weight into its neighbors'
//! accumulators; a victim whose accumulated weight reaches its current
//! threshold (`acmin_current`) suffers bitflips. Three effects layer on top
//! of plain activation-count hammering:
//!
//! - open-time amplification: holding the aggressor open multiplies the
//!   deposited weight by `(t_on / t_on_ref)^press_alpha`, so long holds reach
//!   the threshold in one-two orders of magnitude fewer activations;
//! - per-window threshold jitter: at every refresh of a row its effective
//!   threshold is resampled uniformly from `[base / vrd_ratio_max, base]`,
//!   making the worst case discoverable only across many measurements;
//! - distance weighting: neighbors at ±1 couple more strongly than ±2.
//!
//! Accumulators use integer micro-units (see `dram::ACCUM_SCALE`), which
//! makes between-refresh accumulation exact, additive, and independent of
//! contribution order.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::Deserialize;
use thiserror::Error;

use crate::device::DeviceState;
use crate::dram::{Command, ProtocolError, ResponseKind, RowAddress, RowState};

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DisturbanceProfile {
    pub enabled: bool,
    /// ln of the median base threshold, in activations.
    pub acmin_log_mean: f64,
    pub acmin_log_sigma: f64,
    /// Exponent of the open-time amplification law.
    pub press_alpha: f64,
    /// Reference open time in cycles; defaults to tRAS when unset.
    pub press_ton_ref: Option<u64>,
    /// Max dynamic threshold ratio; 1.0 disables the jitter.
    pub vrd_ratio_max: f64,
    /// Coupling weight per neighbor distance, index 0 = distance 1.
    pub blast_weights: Vec<f64>,
    pub flips_per_event: usize,
}

impl Default for DisturbanceProfile {
    fn default() -> Self {
        DisturbanceProfile {
            enabled: true,
            // median 4096 activations, 10th-90th percentile spanning roughly
            // one decade
            acmin_log_mean: 8.317_766_166_719_343,
            acmin_log_sigma: 0.8983,
            press_alpha: 2.0 / 3.0,
            press_ton_ref: None,
            vrd_ratio_max: 3.5,
            blast_weights: vec![1.0, 0.2],
            flips_per_event: 1,
        }
    }
}

impl DisturbanceProfile {
    pub fn disabled() -> Self {
        DisturbanceProfile {
            enabled: false,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), DisturbanceError> {
        if self.press_alpha < 0.0 {
            return Err(DisturbanceError::Profile("press_alpha ≥ 0".into()));
        }
        if self.vrd_ratio_max < 1.0 {
            return Err(DisturbanceError::Profile("vrd_ratio_max ≥ 1".into()));
        }
        if self.blast_weights.is_empty() {
            return Err(DisturbanceError::Profile("blast_weights nonempty".into()));
        }
        let mut prev = f64::INFINITY;
        for (i, &w) in self.blast_weights.iter().enumerate() {
            if !(w > 0.0 && w <= 1.0) {
                return Err(DisturbanceError::Profile(format!(
                    "blast weight at distance {} must be in (0,1] (got {w})",
                    i + 1
                )));
            }
            if w > prev {
                return Err(DisturbanceError::Profile(
                    "blast weights non-increasing with distance".into(),
                ));
            }
            prev = w;
        }
        if self.flips_per_event == 0 {
            return Err(DisturbanceError::Profile("flips_per_event ≥ 1".into()));
        }
        Ok(())
    }

    /// Sum of coupling weights over every neighbor of one victim (both
    /// sides); the PRAC safety bound is `blast_weight_sum × threshold`.
    pub fn blast_weight_sum(&self) -> f64 {
        2.0 * self.blast_weights.iter().sum::<f64>()
    }
}

#[derive(Debug, Error)]
pub enum DisturbanceError {
    #[error("disturbance profile: {0}")]
    Profile(String),
    #[error("open time {open_cycles} below reference {ton_ref}")]
    OpenTimeBelowReference { open_cycles: u64, ton_ref: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlipCause {
    Rowhammer,
    RowpressAmplified,
}

impl std::fmt::Display for FlipCause {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FlipCause::Rowhammer => write!(f, "rowhammer"),
            FlipCause::RowpressAmplified => write!(f, "rowpress_amplified"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BitflipEvent {
    pub victim: RowAddress,
    pub bit_positions: Vec<usize>,
    pub cycle: u64,
    pub cause: FlipCause,
}

/// Draws a base threshold from the profile's lognormal. With sigma 0 every
/// draw equals the median `exp(acmin_log_mean)` exactly.
pub fn sample_acmin<R: Rng>(profile: &DisturbanceProfile, rng: &mut R) -> f64 {
    if profile.acmin_log_sigma == 0.0 {
        return profile.acmin_log_mean.exp();
    }
    let normal = Normal::new(profile.acmin_log_mean, profile.acmin_log_sigma)
        .expect("validated sigma");
    normal.sample(rng).exp()
}

/// Weight one ACT-PRE pair contributes per unit of coupling:
/// `(open_cycles / t_on_ref)^press_alpha`, anchored at 1 for the minimum
/// legal open time.
pub fn press_weight(
    open_cycles: u64,
    profile: &DisturbanceProfile,
    ton_ref: u64,
) -> Result<f64, DisturbanceError> {
    if open_cycles < ton_ref {
        return Err(DisturbanceError::OpenTimeBelowReference {
            open_cycles,
            ton_ref,
        });
    }
    Ok((open_cycles as f64 / ton_ref as f64).powf(profile.press_alpha))
}

/// Per-refresh-window threshold resample: `acmin_current = base × u`,
/// `u ~ U[1/vrd_ratio_max, 1]`.
pub fn resample_vrd_row<R: Rng>(row: &mut RowState, profile: &DisturbanceProfile, rng: &mut R) {
    if !row.acmin_base.is_finite() {
        return;
    }
    let lo = 1.0 / profile.vrd_ratio_max;
    let u = if profile.vrd_ratio_max == 1.0 {
        1.0
    } else {
        rng.random_range(lo..=1.0)
    };
    let current = row.acmin_base * u;
    row.set_acmin(row.acmin_base, current);
}

impl DeviceState {
    /// Deposits disturbance into every neighbor of a just-closed aggressor
    /// and injects bitflips where a threshold is crossed. Neighbors are the
    /// rows at ±distance within the same subarray (sense-amp boundaries
    /// isolate subarrays in this model).
    pub(crate) fn on_aggressor_precharge(
        &mut self,
        aggressor_index: usize,
        open_cycles: u64,
        cycle: u64,
    ) {
        if !self.profile.enabled {
            return;
        }
        let w_press = press_weight(open_cycles, &self.profile, self.press_ton_ref)
            .expect("protocol enforces t_ras ≤ open time");
        let rows_per_subarray = self.geometry().rows_per_subarray;
        let columns = self.geometry().columns_per_row;
        let subarray_base = aggressor_index - aggressor_index % rows_per_subarray;
        let local = aggressor_index % rows_per_subarray;
        let flips_per_event = self.profile.flips_per_event;
        let cause = if w_press > 1.0 {
            FlipCause::RowpressAmplified
        } else {
            FlipCause::Rowhammer
        };
        for i in 0..self.profile.blast_weights.len() {
            let w = self.profile.blast_weights[i];
            let d = i + 1;
            let contribution = (w * w_press * crate::dram::ACCUM_SCALE).round() as u64;
            for signed in [local.checked_sub(d), local.checked_add(d)] {
                let Some(neighbor) = signed else { continue };
                if neighbor >= rows_per_subarray {
                    continue;
                }
                let victim_index = subarray_base + neighbor;
                let victim = &mut self.rows[victim_index];
                victim.accum_micro += contribution;
                if victim.accum_micro >= victim.acmin_micro {
                    victim.accum_micro = 0;
                    let mut positions = Vec::with_capacity(flips_per_event);
                    while positions.len() < flips_per_event {
                        let bit = self.rng_flip.random_range(0..columns);
                        if !positions.contains(&bit) {
                            positions.push(bit);
                        }
                    }
                    for &bit in &positions {
                        self.rows[victim_index].data.flip(bit);
                    }
                    self.stats.bitflips += positions.len() as u64;
                    match cause {
                        FlipCause::Rowhammer => {
                            self.stats.bitflips_rowhammer += positions.len() as u64
                        }
                        FlipCause::RowpressAmplified => {
                            self.stats.bitflips_rowpress += positions.len() as u64
                        }
                    }
                    self.events.push(BitflipEvent {
                        victim: self.addr_of(victim_index),
                        bit_positions: positions,
                        cycle,
                        cause,
                    });
                }
            }
        }
    }
}

/// Hammering recipe for `measure_acmin`.
#[derive(Clone, Copy, Debug)]
pub struct AccessRecipe {
    /// Open time per activation; `None` means the minimum legal (tRAS).
    pub hold_cycles: Option<u64>,
    /// Give up after this many activations.
    pub cap: u64,
    /// Issue a REF whenever this many cycles elapse (models the refresh
    /// budget an attacker races against).
    pub ref_period: Option<u64>,
}

impl AccessRecipe {
    pub fn hammer(cap: u64) -> Self {
        AccessRecipe {
            hold_cycles: None,
            cap,
            ref_period: None,
        }
    }

    pub fn press(hold_cycles: u64, cap: u64) -> Self {
        AccessRecipe {
            hold_cycles: Some(hold_cycles),
            cap,
            ref_period: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AcminMeasurement {
    FirstFlipAt(u64),
    ExceedsCap(u64),
}

impl AcminMeasurement {
    pub fn count(&self) -> Option<u64> {
        match self {
            AcminMeasurement::FirstFlipAt(n) => Some(*n),
            AcminMeasurement::ExceedsCap(_) => None,
        }
    }
}

/// Hammers `aggressor` per the recipe until the first bitflip lands on any
/// neighbor, then restores victim data and accumulators and refreshes the
/// victims (ending the measurement window, which also resamples their
/// thresholds). Returns the activation count of the first flip.
pub fn measure_acmin(
    device: &mut DeviceState,
    aggressor: &RowAddress,
    recipe: &AccessRecipe,
) -> Result<AcminMeasurement, ProtocolError> {
    device.validate_addr(aggressor)?;
    let t = *device.timing();
    let hold = recipe.hold_cycles.unwrap_or(t.t_ras).max(t.t_ras);
    let backoff = t.nack_retry_backoff.max(1);

    let rows_per_subarray = device.geometry().rows_per_subarray;
    let aggr_index = device.row_index(aggressor);
    let subarray_base = aggr_index - aggr_index % rows_per_subarray;
    let local = aggr_index % rows_per_subarray;
    let mut victims = Vec::new();
    for d in 1..=device.profile.blast_weights.len() {
        if let Some(n) = local.checked_sub(d) {
            victims.push(subarray_base + n);
        }
        if local + d < rows_per_subarray {
            victims.push(subarray_base + local + d);
        }
    }
    let snapshot: Vec<(usize, crate::bits::BitRow)> = victims
        .iter()
        .map(|&i| (i, device.rows[i].data.clone()))
        .collect();

    let events_before = device.events.len();
    let mut next_ref = recipe.ref_period.map(|p| device.now() + p);
    let mut count = 0;
    let mut outcome = AcminMeasurement::ExceedsCap(recipe.cap);
    'hammer: while count < recipe.cap {
        if let (Some(due), Some(period)) = (next_ref, recipe.ref_period) {
            if device.now() >= due {
                device.issue(Command::refresh(device.now()))?;
                next_ref = Some(due + period);
            }
        }
        let act_at = device.now();
        let resp = device.issue(Command::act(*aggressor, act_at))?;
        match resp.kind {
            ResponseKind::Ok => {}
            // Mitigation pushed back; retry after the backoff.
            ResponseKind::Nack(_) | ResponseKind::Alert => {
                let retry_at = resp.completion_cycle + backoff;
                let _ = device.issue(Command::act(*aggressor, retry_at));
                if device.open_row[device.bank_index(aggressor)].is_none() {
                    continue 'hammer;
                }
            }
            ResponseKind::Data(_) => unreachable!("ACT never returns data"),
        }
        let opened_at = match device.rows[aggr_index].status {
            crate::dram::RowStatus::Open { since_cycle } => since_cycle,
            crate::dram::RowStatus::Closed => continue 'hammer,
        };
        device.issue(Command::pre(*aggressor, opened_at + hold))?;
        count += 1;
        if device.events.len() > events_before {
            outcome = AcminMeasurement::FirstFlipAt(count);
            break;
        }
    }

    // Restore victims and end their window, discarding measurement events.
    device.events.truncate(events_before);
    let now = device.now();
    for (i, data) in snapshot {
        device.rows[i].data = data;
        device.refresh_row(i, now);
    }
    Ok(outcome)
}
