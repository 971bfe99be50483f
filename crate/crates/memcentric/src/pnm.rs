//! Analytical processing-near-memory model: roofline execution time per
//! unit, greedy online kernel placement across heterogeneous units, and
//! multi-unit scaling curves with a host-link saturation term.

use serde::Deserialize;
use thiserror::Error;

/// Unit classes in ascending power order; ties in placement break toward the
/// lower-power class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitClass {
    FcPim,
    AttnPim,
    Pu,
}

impl std::fmt::Display for UnitClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            UnitClass::FcPim => "fc_pim",
            UnitClass::AttnPim => "attn_pim",
            UnitClass::Pu => "pu",
        };
        write!(f, "{s}")
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitSpec {
    pub name: String,
    pub class: UnitClass,
    /// Peak compute, operations per second.
    pub peak_compute: f64,
    /// Local memory bandwidth, bytes per second.
    pub mem_bandwidth: f64,
    /// Local memory capacity, bytes.
    pub capacity: f64,
    /// Host link bandwidth, bytes per second.
    pub link_bandwidth: f64,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelDescriptor {
    pub name: String,
    pub compute_ops: f64,
    pub bytes_touched: f64,
    /// Unit name whose local memory already holds this kernel's data.
    #[serde(default)]
    pub resident_unit: Option<String>,
}

impl KernelDescriptor {
    /// Operations per byte fetched.
    pub fn arithmetic_intensity(&self) -> f64 {
        self.compute_ops / self.bytes_touched
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PnmError {
    #[error("unit spec: {0}")]
    Unit(String),
    #[error("kernel `{kernel}` fits no unit's capacity ({bytes} bytes)")]
    CapacityInfeasible { kernel: String, bytes: f64 },
    #[error("kernel: {0}")]
    Kernel(String),
}

pub fn validate_units(units: &[UnitSpec]) -> Result<(), PnmError> {
    if units.is_empty() {
        return Err(PnmError::Unit("at least one unit required".into()));
    }
    for u in units {
        for (name, v) in [
            ("peak_compute", u.peak_compute),
            ("mem_bandwidth", u.mem_bandwidth),
            ("capacity", u.capacity),
            ("link_bandwidth", u.link_bandwidth),
        ] {
            if !(v > 0.0) {
                return Err(PnmError::Unit(format!("{}: {name} must be > 0", u.name)));
            }
        }
    }
    // attention-class units are the capacity-oriented ones
    let max_fc = units
        .iter()
        .filter(|u| u.class == UnitClass::FcPim)
        .map(|u| u.capacity)
        .fold(f64::NAN, f64::max);
    let min_attn = units
        .iter()
        .filter(|u| u.class == UnitClass::AttnPim)
        .map(|u| u.capacity)
        .fold(f64::NAN, f64::min);
    if !max_fc.is_nan() && !min_attn.is_nan() && min_attn < max_fc {
        return Err(PnmError::Unit(format!(
            "attn_pim capacity {min_attn} below fc_pim capacity {max_fc}"
        )));
    }
    Ok(())
}

pub fn validate_kernels(kernels: &[KernelDescriptor]) -> Result<(), PnmError> {
    for k in kernels {
        if !(k.compute_ops > 0.0) || !(k.bytes_touched > 0.0) {
            return Err(PnmError::Kernel(format!(
                "{}: compute_ops and bytes_touched must be > 0",
                k.name
            )));
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundKind {
    Compute,
    Bandwidth,
    Link,
}

impl std::fmt::Display for BoundKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            BoundKind::Compute => "compute-bound",
            BoundKind::Bandwidth => "bandwidth-bound",
            BoundKind::Link => "link-bound",
        };
        write!(f, "{s}")
    }
}

/// Roofline execution time of `kernel` on `unit`: the max of compute- and
/// bandwidth-limited times, plus a host-link transfer term when the data is
/// not resident on that unit.
pub fn roofline_time(kernel: &KernelDescriptor, unit: &UnitSpec) -> f64 {
    roofline_time_detail(kernel, unit).0
}

pub fn roofline_time_detail(kernel: &KernelDescriptor, unit: &UnitSpec) -> (f64, BoundKind) {
    let t_compute = kernel.compute_ops / unit.peak_compute;
    let t_memory = kernel.bytes_touched / unit.mem_bandwidth;
    let resident = kernel.resident_unit.as_deref() == Some(unit.name.as_str());
    let t_transfer = if resident {
        0.0
    } else {
        kernel.bytes_touched / unit.link_bandwidth
    };
    let roof = t_compute.max(t_memory);
    let bound = if t_transfer > roof {
        BoundKind::Link
    } else if t_compute >= t_memory {
        BoundKind::Compute
    } else {
        BoundKind::Bandwidth
    };
    (roof + t_transfer, bound)
}

#[derive(Clone, Debug, PartialEq)]
pub struct KernelPlacement {
    pub kernel: String,
    pub unit: String,
    pub time_seconds: f64,
    pub bound: BoundKind,
    pub bytes_moved: f64,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Placement {
    pub assignments: Vec<KernelPlacement>,
    /// Max over units of the summed times assigned to it (units run their
    /// queues in parallel).
    pub makespan_seconds: f64,
    pub total_bytes_moved: f64,
}

/// Greedy online scheduler: each kernel, in arrival order, goes to the unit
/// minimizing its roofline time including transfer, among units whose
/// capacity fits. Ties break toward the kernel's resident unit, then toward
/// the lower-power class, then by unit order.
pub fn papi_schedule(
    kernels: &[KernelDescriptor],
    units: &[UnitSpec],
) -> Result<Placement, PnmError> {
    validate_units(units)?;
    validate_kernels(kernels)?;
    let mut placement = Placement::default();
    for kernel in kernels {
        let mut best: Option<(f64, usize)> = None;
        for (i, unit) in units.iter().enumerate() {
            if kernel.bytes_touched > unit.capacity {
                continue;
            }
            let time = roofline_time(kernel, unit);
            let better = match best {
                None => true,
                Some((t_best, i_best)) => {
                    let b = &units[i_best];
                    if time != t_best {
                        time < t_best
                    } else {
                        let resident =
                            |u: &UnitSpec| kernel.resident_unit.as_deref() == Some(u.name.as_str());
                        (resident(unit), std::cmp::Reverse(unit.class))
                            > (resident(b), std::cmp::Reverse(b.class))
                    }
                }
            };
            if better {
                best = Some((time, i));
            }
        }
        let Some((time, i)) = best else {
            return Err(PnmError::CapacityInfeasible {
                kernel: kernel.name.clone(),
                bytes: kernel.bytes_touched,
            });
        };
        let unit = &units[i];
        let (_, bound) = roofline_time_detail(kernel, unit);
        let resident = kernel.resident_unit.as_deref() == Some(unit.name.as_str());
        let bytes_moved = if resident { 0.0 } else { kernel.bytes_touched };
        placement.total_bytes_moved += bytes_moved;
        placement.assignments.push(KernelPlacement {
            kernel: kernel.name.clone(),
            unit: unit.name.clone(),
            time_seconds: time,
            bound,
            bytes_moved,
        });
    }
    let mut per_unit: std::collections::BTreeMap<&str, f64> = Default::default();
    for a in &placement.assignments {
        *per_unit.entry(a.unit.as_str()).or_default() += a.time_seconds;
    }
    placement.makespan_seconds = per_unit.values().copied().fold(0.0, f64::max);
    Ok(placement)
}

/// Relative energy model for comparisons: moved bytes plus executed ops.
#[derive(Clone, Copy, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnergyModel {
    pub pj_per_byte_moved: f64,
    pub pj_per_op: f64,
}

impl Default for EnergyModel {
    fn default() -> Self {
        EnergyModel {
            pj_per_byte_moved: 1.0,
            pj_per_op: 0.1,
        }
    }
}

impl EnergyModel {
    pub fn energy_pj(&self, kernel: &KernelDescriptor, bytes_moved: f64) -> f64 {
        bytes_moved * self.pj_per_byte_moved + kernel.compute_ops * self.pj_per_op
    }
}

/// Throughput (kernel executions per second) when the kernel is perfectly
/// divided over `n` identical units. Resident work scales linearly with n
/// (capacity and bandwidth grow together); host-fed work saturates at what
/// the single host link sustains: `link_bandwidth × intensity` ops/s, i.e.
/// `link_bandwidth / bytes` executions/s.
pub fn scaling_curve(
    base_unit: &UnitSpec,
    kernel: &KernelDescriptor,
    n_units: usize,
    host_fed: bool,
) -> Vec<f64> {
    let single = 1.0
        / (kernel.compute_ops / base_unit.peak_compute)
            .max(kernel.bytes_touched / base_unit.mem_bandwidth);
    let link_cap = base_unit.link_bandwidth / kernel.bytes_touched;
    (1..=n_units)
        .map(|n| {
            let linear = n as f64 * single;
            if host_fed {
                linear.min(link_cap)
            } else {
                linear
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(name: &str, class: UnitClass, peak: f64, bw: f64, cap: f64, link: f64) -> UnitSpec {
        UnitSpec {
            name: name.into(),
            class,
            peak_compute: peak,
            mem_bandwidth: bw,
            capacity: cap,
            link_bandwidth: link,
        }
    }

    fn kernel(name: &str, ops: f64, bytes: f64, resident: Option<&str>) -> KernelDescriptor {
        KernelDescriptor {
            name: name.into(),
            compute_ops: ops,
            bytes_touched: bytes,
            resident_unit: resident.map(String::from),
        }
    }

    /// PAPI-shaped unit set: compute-dense FC-PIM, capacity-dense Attn-PIM,
    /// and a powerful PU behind a host link.
    pub(crate) fn shipped_units() -> Vec<UnitSpec> {
        vec![
            unit("fc0", UnitClass::FcPim, 8e12, 4e12, 1.6e10, 3.2e10),
            unit("attn0", UnitClass::AttnPim, 1e12, 8e12, 2.56e11, 3.2e10),
            unit("pu0", UnitClass::Pu, 1e14, 1e12, 8e10, 6.4e10),
        ]
    }

    #[test]
    fn roofline_forced_arithmetic() {
        let k = kernel("k", 1e9, 1e9, Some("u"));
        let u = unit("u", UnitClass::Pu, 1e12, 1e11, 1e12, 1e10);
        assert_eq!(roofline_time(&k, &u), 0.01); // max(1 ms, 10 ms)
        let fast = unit("u", UnitClass::Pu, 1e12, 1e12, 1e12, 1e10);
        assert_eq!(roofline_time(&k, &fast), 0.001); // compute-bound crossover
        let k_remote = kernel("k", 1e9, 1e9, None);
        assert_eq!(roofline_time(&k_remote, &fast), 0.001 + 0.1); // + transfer
    }

    #[test]
    fn papi_places_attention_on_attn_pim() {
        let units = shipped_units();
        let k = kernel("attention", 5e8, 1e9, Some("attn0"));
        let p = papi_schedule(&[k], &units).unwrap();
        assert_eq!(p.assignments[0].unit, "attn0");
        assert_eq!(p.assignments[0].bound, BoundKind::Compute);
    }

    #[test]
    fn papi_places_dense_kernel_on_pu() {
        let units = shipped_units();
        let k = kernel("dense", 2e11, 1e9, None);
        let p = papi_schedule(&[k], &units).unwrap();
        assert_eq!(p.assignments[0].unit, "pu0");
    }

    #[test]
    fn single_unit_always_assigned() {
        let units = vec![unit("only", UnitClass::FcPim, 1e12, 1e12, 1e12, 1e10)];
        for intensity in [0.01, 1.0, 1000.0] {
            let k = kernel("k", intensity * 1e9, 1e9, None);
            let p = papi_schedule(&[k], &units).unwrap();
            assert_eq!(p.assignments[0].unit, "only");
        }
    }

    #[test]
    fn papi_matches_exhaustive_single_kernel() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(8);
        for trial in 0..200 {
            let units: Vec<UnitSpec> = (0..4)
                .map(|i| {
                    let class = match i % 3 {
                        0 => UnitClass::FcPim,
                        1 => UnitClass::AttnPim,
                        _ => UnitClass::Pu,
                    };
                    unit(
                        &format!("u{i}"),
                        class,
                        10f64.powf(rng.random_range(10.0..14.0)),
                        10f64.powf(rng.random_range(10.0..13.0)),
                        f64::INFINITY,
                        10f64.powf(rng.random_range(9.0..11.0)),
                    )
                })
                .collect();
            let k = kernel(
                "k",
                10f64.powf(rng.random_range(6.0..12.0)),
                10f64.powf(rng.random_range(6.0..10.0)),
                Some("u1"),
            );
            let p = papi_schedule(std::slice::from_ref(&k), &units).unwrap();
            let best = units
                .iter()
                .map(|u| roofline_time(&k, u))
                .fold(f64::INFINITY, f64::min);
            assert_eq!(
                p.assignments[0].time_seconds, best,
                "trial {trial}: greedy missed the exhaustive optimum"
            );
        }
    }

    #[test]
    fn capacity_infeasible_names_kernel() {
        let units = vec![unit("tiny", UnitClass::FcPim, 1e12, 1e12, 100.0, 1e10)];
        let k = kernel("huge", 1e9, 1e9, None);
        let err = papi_schedule(&[k], &units).unwrap_err();
        assert!(err.to_string().contains("huge"));
    }

    #[test]
    fn attn_capacity_must_dominate_fc() {
        let units = vec![
            unit("fc", UnitClass::FcPim, 1e12, 1e12, 1e12, 1e10),
            unit("attn", UnitClass::AttnPim, 1e12, 1e12, 1e10, 1e10),
        ];
        assert!(validate_units(&units).is_err());
    }

    #[test]
    fn scaling_linear_for_resident_bandwidth_bound() {
        let u = unit("pim", UnitClass::AttnPim, 1e12, 1e9, 1e12, 1e8);
        let k = kernel("stream", 1e6, 1e9, Some("pim"));
        let curve = scaling_curve(&u, &k, 64, false);
        for (i, t) in curve.iter().enumerate() {
            let n = (i + 1) as f64;
            assert_eq!(t / curve[0], n, "n = {n}");
        }
    }

    #[test]
    fn scaling_saturates_on_host_link() {
        // link sustains 1/10 of one unit's bandwidth-bound throughput
        let u = unit("pim", UnitClass::AttnPim, 1e12, 1e9, 1e12, 1e8);
        let k = kernel("fed", 1e6, 1e9, None);
        let curve = scaling_curve(&u, &k, 10, true);
        let cap = 1e8 / 1e9;
        for (i, t) in curve.iter().enumerate() {
            assert!(
                (*t - cap).abs() / cap < 0.01,
                "n = {}: {t} vs cap {cap}",
                i + 1
            );
        }
    }

    #[test]
    fn scaling_n1_is_unity() {
        let u = unit("pim", UnitClass::AttnPim, 1e12, 1e9, 1e12, 1e8);
        let k = kernel("stream", 1e6, 1e9, Some("pim"));
        let curve = scaling_curve(&u, &k, 1, false);
        assert_eq!(curve[0] / curve[0], 1.0);
    }

    #[test]
    fn placement_scale_invariance() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(4);
        for _ in 0..100 {
            let units: Vec<UnitSpec> = (0..3)
                .map(|i| {
                    unit(
                        &format!("u{i}"),
                        UnitClass::Pu,
                        10f64.powf(rng.random_range(11.0..13.0)),
                        10f64.powf(rng.random_range(10.0..12.0)),
                        f64::INFINITY,
                        10f64.powf(rng.random_range(9.0..11.0)),
                    )
                })
                .collect();
            let k = kernel("k", 1e9, 1e8, Some("u0"));
            let base = papi_schedule(std::slice::from_ref(&k), &units).unwrap();
            // scale every rate by a power of two: argmin must not move
            let scaled_units: Vec<UnitSpec> = units
                .iter()
                .map(|u| UnitSpec {
                    peak_compute: u.peak_compute * 4.0,
                    mem_bandwidth: u.mem_bandwidth * 4.0,
                    link_bandwidth: u.link_bandwidth * 4.0,
                    ..u.clone()
                })
                .collect();
            let scaled = papi_schedule(std::slice::from_ref(&k), &scaled_units).unwrap();
            assert_eq!(base.assignments[0].unit, scaled.assignments[0].unit);
            assert_eq!(
                scaled.assignments[0].time_seconds,
                base.assignments[0].time_seconds / 4.0
            );
        }
    }

    #[test]
    fn bandwidth_monotonicity() {
        let k = kernel("k", 1e9, 1e9, Some("u"));
        let mut last = f64::INFINITY;
        for bw_exp in [9, 10, 11, 12, 13] {
            let u = unit("u", UnitClass::Pu, 1e12, 10f64.powi(bw_exp), 1e12, 1e10);
            let t = roofline_time(&k, &u);
            assert!(t <= last);
            last = t;
        }
    }
}
