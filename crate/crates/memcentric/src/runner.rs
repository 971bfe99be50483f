//! Experiment orchestration: builds devices from a config and drives the
//! subcommands (`simulate`, `attack`, `pud`, `trng`, `pnm`, `sweep`).

use std::collections::VecDeque;

use rayon::prelude::*;
use thiserror::Error;

use crate::bits::BitRow;
use crate::config::{ConfigError, ExperimentConfig, MaintenanceMode, PudJob, SyntheticSpec};
use crate::device::DeviceState;
use crate::disturbance::FlipCause;
use crate::dram::{Command, ProtocolError, ResponseKind, RowAddress, RowStatus};
use crate::metrics::{sweep_csv, LatencyHistogram, MetricsReport};
use crate::pnm::{papi_schedule, roofline_time_detail, scaling_curve};
use crate::pud::{
    compile_circuit, quac_trng, CompileError, GateCircuit, NetlistError, PudEngine, PudError,
    SubarrayId,
};
use crate::smd::{RetryError, RetryPolicy, RetryStats, SmdEngine};
use crate::trace::{parse_trace, TraceError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subcommand {
    Simulate,
    Attack,
    Pud,
    Trng,
    Pnm,
    Sweep,
}

impl std::str::FromStr for Subcommand {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "simulate" => Ok(Subcommand::Simulate),
            "attack" => Ok(Subcommand::Attack),
            "pud" => Ok(Subcommand::Pud),
            "trng" => Ok(Subcommand::Trng),
            "pnm" => Ok(Subcommand::Pnm),
            "sweep" => Ok(Subcommand::Sweep),
            other => Err(format!("unknown subcommand `{other}`")),
        }
    }
}

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("trace: {0}")]
    Trace(#[from] TraceError),
    #[error("netlist: {0}")]
    Netlist(#[from] NetlistError),
    #[error("compile: {0}")]
    Compile(#[from] CompileError),
    #[error("protocol violation: {0}")]
    Protocol(#[from] ProtocolError),
    #[error("pud: {0}")]
    Pud(#[from] PudError),
    #[error("pnm: {0}")]
    Pnm(#[from] crate::pnm::PnmError),
    #[error(transparent)]
    Retry(#[from] RetryError),
    #[error("build: {0}")]
    Build(#[from] crate::dram::BuildError),
    #[error("{what} missing from config")]
    MissingSection { what: &'static str },
    #[error("cannot read {path}: {source}")]
    ReadFile {
        path: String,
        source: std::io::Error,
    },
    #[error("operands: {0}")]
    Operands(String),
}

impl RunnerError {
    /// Exit codes: 2 for configuration/input problems, 3 for runtime
    /// invariant violations.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunnerError::Config(_)
            | RunnerError::Trace(_)
            | RunnerError::Netlist(_)
            | RunnerError::Operands(_)
            | RunnerError::ReadFile { .. }
            | RunnerError::MissingSection { .. }
            | RunnerError::Build(_)
            | RunnerError::Compile(_) => 2,
            _ => 3,
        }
    }
}

pub fn build_device(config: &ExperimentConfig) -> Result<DeviceState, RunnerError> {
    let mut device = DeviceState::new(config.geometry, config.timing, config.seed)?;
    device.set_disturbance(config.disturbance.clone());
    device.set_mitigation(config.mitigation.clone());
    device.set_smd(config.smd.clone());
    Ok(device)
}

pub fn run(config: &ExperimentConfig, subcommand: Subcommand) -> Result<MetricsReport, RunnerError> {
    match subcommand {
        Subcommand::Simulate => run_simulate(config),
        Subcommand::Attack => run_attack(config),
        Subcommand::Pud => run_pud(config),
        Subcommand::Trng => run_trng(config),
        Subcommand::Pnm => run_pnm(config),
        Subcommand::Sweep => Err(RunnerError::MissingSection {
            what: "sweep must go through run_sweep",
        }),
    }
}

// ---------------------------------------------------------------- simulate

fn run_simulate(config: &ExperimentConfig) -> Result<MetricsReport, RunnerError> {
    let workload = config
        .workload
        .as_ref()
        .ok_or(RunnerError::MissingSection { what: "workload" })?;
    match (&workload.trace, &workload.synthetic) {
        (Some(path), None) => run_trace_replay(config, path),
        (None, Some(SyntheticSpec::Uniform {
            banks,
            slots,
            maintenance,
        })) => run_uniform(config, *banks, *slots, *maintenance),
        _ => Err(RunnerError::Config(ConfigError::Invalid(
            "workload: exactly one of trace/synthetic".into(),
        ))),
    }
}

fn run_trace_replay(
    config: &ExperimentConfig,
    path: &std::path::Path,
) -> Result<MetricsReport, RunnerError> {
    let text = std::fs::read_to_string(path).map_err(|e| RunnerError::ReadFile {
        path: path.display().to_string(),
        source: e,
    })?;
    let records = parse_trace(&text)?;
    let mut device = build_device(config)?;
    let mut engine = SmdEngine::new(&device);
    let policy = RetryPolicy {
        backoff: config.timing.nack_retry_backoff,
        cap: config.smd.retry_cap,
    };
    let mut retry_stats = RetryStats::default();
    let mut hist = LatencyHistogram::default();
    let columns = config.geometry.columns_per_row;
    let mut last_completion = 0;
    for record in &records {
        let mut cmd = record.to_command(columns);
        cmd.issue_cycle = cmd.issue_cycle.max(device.now());
        let resp = crate::smd::issue_with_retry(
            &mut device,
            Some(&mut engine),
            cmd,
            &policy,
            &mut retry_stats,
        )?;
        hist.record(record.op, resp.completion_cycle - record.cycle);
        last_completion = resp.completion_cycle;
    }
    let mut report = MetricsReport::new();
    if !records.is_empty() {
        report.push_device_stats(&device.stats, last_completion);
        push_retry_stats(&mut report, &retry_stats);
        report.push_latency_histogram(&hist);
        report.push("data_digest", device.data_digest());
    }
    Ok(report)
}

/// Per-bank in-order, cross-bank out-of-order scheduler for the uniform
/// synthetic workload; the vehicle for comparing SMD region-locked
/// maintenance against whole-rank blocking maintenance.
fn run_uniform(
    config: &ExperimentConfig,
    banks: usize,
    slots: u64,
    maintenance: MaintenanceMode,
) -> Result<MetricsReport, RunnerError> {
    let mut config = config.clone();
    // the maintenance mode decides whether region locks are active
    config.smd.enabled = maintenance == MaintenanceMode::SmdOverlap;
    let mut device = build_device(&config)?;
    let g = *device.geometry();
    let t = *device.timing();
    let banks = banks.min(g.banks_per_rank);
    let columns = g.columns_per_row;

    // planning engine: also used in blocking mode, where tasks stall the
    // whole rank instead of locking their region
    let mut plan_device = if maintenance == MaintenanceMode::BlockingRank {
        let mut smd = config.smd.clone();
        smd.enabled = true;
        let mut d = DeviceState::new(config.geometry, config.timing, config.seed)?;
        d.set_smd(smd);
        Some(d)
    } else {
        None
    };
    let mut engine = match maintenance {
        MaintenanceMode::None => None,
        MaintenanceMode::SmdOverlap => Some(SmdEngine::new(&device)),
        MaintenanceMode::BlockingRank => Some(SmdEngine::new(plan_device.as_ref().unwrap())),
    };

    #[derive(Clone, Copy)]
    enum Step {
        Act,
        Wr,
        Rd,
        Pre,
    }
    struct BankStream {
        queue: VecDeque<(Step, RowAddress, u64)>, // step, addr, slot
        ready: u64,
        last_act_issue: u64,
        retries: u64,
    }
    let mut streams: Vec<BankStream> = (0..banks)
        .map(|bank| {
            let mut queue = VecDeque::new();
            for slot in 0..slots {
                let addr = RowAddress::new(
                    bank,
                    (slot as usize) % g.subarrays_per_bank,
                    (slot as usize * 7 + bank * 3) % g.rows_per_subarray,
                );
                queue.push_back((Step::Act, addr, slot));
                queue.push_back((Step::Wr, addr, slot));
                queue.push_back((Step::Rd, addr, slot));
                queue.push_back((Step::Pre, addr, slot));
            }
            BankStream {
                queue,
                ready: 0,
                last_act_issue: 0,
                retries: 0,
            }
        })
        .collect();

    let payload = |slot: u64, bank: usize| -> BitRow {
        let b = (slot as usize * banks + bank) as u8;
        BitRow::from_bytes(vec![b ^ 0x5a; columns / 8], columns)
    };

    let mut hist = LatencyHistogram::default();
    let mut retry_stats = RetryStats::default();
    let mut block_until = 0u64;
    let mut blocking_pending: Vec<crate::smd::MaintenanceTask> = Vec::new();
    let mut last_completion = 0u64;
    let retry_cap = config.smd.retry_cap;

    loop {
        // earliest-ready nonempty bank queue
        let mut pick: Option<(u64, usize)> = None;
        for (i, s) in streams.iter().enumerate() {
            let Some((step, _, _)) = s.queue.front() else {
                continue;
            };
            let mut ready = s.ready;
            if let Step::Pre = step {
                ready = ready.max(s.last_act_issue + t.t_ras);
            }
            if pick.is_none_or(|(best, _)| ready < best) {
                pick = Some((ready, i));
            }
        }
        let Some((ready, bank)) = pick else { break };
        let mut issue_at = ready.max(device.now());

        match maintenance {
            MaintenanceMode::SmdOverlap => {
                if let Some(e) = engine.as_mut() {
                    e.advance(&mut device, issue_at);
                }
            }
            MaintenanceMode::BlockingRank => {
                // same task schedule; every due task stalls the whole rank
                let (Some(e), Some(pd)) = (engine.as_mut(), plan_device.as_mut()) else {
                    unreachable!()
                };
                blocking_pending.extend(e.smd_plan(pd, issue_at));
                blocking_pending.sort_by_key(|task| {
                    (task.due_cycle, task.region.bank, task.region.subarray)
                });
                for task in std::mem::take(&mut blocking_pending) {
                    if task.due_cycle > issue_at {
                        blocking_pending.push(task);
                        continue;
                    }
                    let begin = task.due_cycle.max(block_until).max(issue_at);
                    let end = begin + task.duration;
                    block_until = block_until.max(end);
                    device.apply_task_effects(&task, end);
                }
                issue_at = issue_at.max(block_until);
            }
            MaintenanceMode::None => {}
        }

        let (step, addr, slot) = *streams[bank].queue.front().unwrap();
        let cmd = match step {
            Step::Act => Command::act(addr, issue_at),
            Step::Wr => Command::wr(addr, payload(slot, bank), issue_at),
            Step::Rd => Command::rd(addr, issue_at),
            Step::Pre => Command::pre(addr, issue_at),
        };
        let kind = cmd.kind;
        let resp = device.issue(cmd)?;
        match resp.kind {
            ResponseKind::Nack(_) | ResponseKind::Alert => {
                streams[bank].retries += 1;
                retry_stats.retries_total += 1;
                if streams[bank].retries > retry_cap {
                    return Err(RunnerError::Retry(RetryError::Starvation {
                        retries: streams[bank].retries,
                        cap: retry_cap,
                    }));
                }
                streams[bank].ready = resp.completion_cycle + t.nack_retry_backoff;
                retry_stats.latency_added += t.nack_retry_backoff;
            }
            _ => {
                streams[bank].queue.pop_front();
                streams[bank].retries = 0;
                if let Step::Act = step {
                    streams[bank].last_act_issue = issue_at;
                }
                streams[bank].ready = resp.completion_cycle;
                hist.record(kind, resp.completion_cycle.saturating_sub(ready));
                last_completion = last_completion.max(resp.completion_cycle);
            }
        }
    }

    let mut report = MetricsReport::new();
    if slots > 0 {
        report.push_device_stats(&device.stats, last_completion);
        push_retry_stats(&mut report, &retry_stats);
        report.push_latency_histogram(&hist);
        report.push("data_digest", device.data_digest());
    }
    Ok(report)
}

fn push_retry_stats(report: &mut MetricsReport, stats: &RetryStats) {
    report.push("retries_total", stats.retries_total);
    report.push("retry_latency_added", stats.latency_added);
    report.push("commands_retried", stats.commands_retried);
    report.push("max_retries_single", stats.max_retries_single);
}

// ------------------------------------------------------------------ attack

fn run_attack(config: &ExperimentConfig) -> Result<MetricsReport, RunnerError> {
    let spec = config
        .attack
        .as_ref()
        .ok_or(RunnerError::MissingSection { what: "attack" })?;
    let mut device = build_device(config)?;
    let t = *device.timing();
    let hold = spec.hold_cycles().unwrap_or(t.t_ras).max(t.t_ras);
    let aggressors = spec.aggressor_rows();
    let windows = spec.windows();
    let sequence = spec.window_sequence();
    let backoff = t.nack_retry_backoff.max(1);

    let mut acts_issued: u64 = 0;
    let mut first_flip: Option<(u64, u64)> = None; // (cycle, activation#)
    let mut victim_flip_windows: u64 = 0;
    let mut events_cursor = 0;
    let victims: Vec<usize> = aggressors
        .iter()
        .flat_map(|&a| [a.checked_sub(1), a.checked_add(1)])
        .flatten()
        .collect();

    for _window in 0..windows {
        for &row in &sequence {
            let addr = RowAddress::new(0, 0, row);
            // retry through NACK/ALERT; rejected attempts are not activations
            let mut attempts = 0;
            let mut at = device.now();
            loop {
                let resp = device.issue(Command::act(addr, at))?;
                if resp.accepted() {
                    break;
                }
                attempts += 1;
                if attempts > config.smd.retry_cap {
                    return Err(RunnerError::Retry(RetryError::Starvation {
                        retries: attempts,
                        cap: config.smd.retry_cap,
                    }));
                }
                at = resp.completion_cycle + backoff;
            }
            let since = match device.row(&addr).status {
                RowStatus::Open { since_cycle } => since_cycle,
                RowStatus::Closed => continue,
            };
            device.issue(Command::pre(addr, since + hold))?;
            acts_issued += 1;
            if first_flip.is_none() {
                if let Some(e) = device.events.get(events_cursor) {
                    first_flip = Some((e.cycle, acts_issued));
                }
            }
        }
        // window boundary: refresh
        let at = device.now();
        device.issue(Command::refresh(at))?;
        let new_events = &device.events[events_cursor..];
        if new_events.iter().any(|e| victims.contains(&e.victim.row)) {
            victim_flip_windows += 1;
        }
        events_cursor = device.events.len();
    }

    let mut report = MetricsReport::new();
    report.push_device_stats(&device.stats, device.now());
    report.push("attack_windows", windows);
    report.push("attack_acts_issued", acts_issued);
    report.push(
        "attack_declared_acts_per_window",
        sequence.len() as u64,
    );
    report.push("victim_flip_windows", victim_flip_windows);
    report.push(
        "victim_flip_rate",
        victim_flip_windows as f64 / windows as f64,
    );
    match first_flip {
        Some((cycle, act)) => {
            report.push("time_to_first_flip_cycles", cycle);
            report.push("acts_to_first_flip", act);
        }
        None => {
            report.push("time_to_first_flip_cycles", "none");
            report.push("acts_to_first_flip", "none");
        }
    }
    let causes = device.events.iter().fold((0u64, 0u64), |acc, e| match e.cause {
        FlipCause::Rowhammer => (acc.0 + 1, acc.1),
        FlipCause::RowpressAmplified => (acc.0, acc.1 + 1),
    });
    report.push("flip_events_rowhammer", causes.0);
    report.push("flip_events_rowpress", causes.1);
    report.push("data_digest", device.data_digest());
    Ok(report)
}

// --------------------------------------------------------------------- pud

fn parse_operands(text: &str) -> Result<Vec<(String, Vec<u64>)>, RunnerError> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tokens = content.split_whitespace();
        let name = tokens.next().unwrap().to_string();
        let values: Result<Vec<u64>, _> = tokens
            .map(|tok| {
                let (s, radix) = match tok.strip_prefix("0x") {
                    Some(hex) => (hex, 16),
                    None => (tok, 10),
                };
                u64::from_str_radix(s, radix).map_err(|_| {
                    RunnerError::Operands(format!("line {}: bad value `{tok}`", lineno + 1))
                })
            })
            .collect();
        out.push((name, values?));
    }
    if out.is_empty() {
        return Err(RunnerError::Operands("no operands given".into()));
    }
    Ok(out)
}

fn run_pud(config: &ExperimentConfig) -> Result<MetricsReport, RunnerError> {
    let job: &PudJob = config
        .pud
        .as_ref()
        .ok_or(RunnerError::MissingSection { what: "pud" })?;
    let netlist = std::fs::read_to_string(&job.netlist).map_err(|e| RunnerError::ReadFile {
        path: job.netlist.display().to_string(),
        source: e,
    })?;
    let operands_text =
        std::fs::read_to_string(&job.operands).map_err(|e| RunnerError::ReadFile {
            path: job.operands.display().to_string(),
            source: e,
        })?;
    let circuit = GateCircuit::parse_netlist(&netlist)?;
    let operands = parse_operands(&operands_text)?;
    let program = compile_circuit(&circuit, config.geometry.rows_per_subarray)?;
    let sub = SubarrayId {
        channel: 0,
        rank: 0,
        bank: 0,
        subarray: job.subarray,
    };

    // reference pass (noise off) for success-rate accounting
    let mut exact_device = build_device(config)?;
    let exact = PudEngine::exact().run_program(&mut exact_device, sub, &program, &operands)?;

    let mut device = build_device(config)?;
    let engine = PudEngine::with_noise(config.noise);
    let got = engine.run_program(&mut device, sub, &program, &operands)?;

    let width = program.output_rows.len() as u32;
    let mut matching_bits = 0u64;
    let total_bits = exact.len() as u64 * width as u64;
    for (x, y) in exact.iter().zip(&got) {
        matching_bits += (width - (x ^ y).count_ones()) as u64;
    }
    let mut report = MetricsReport::new();
    report.push("pud_lanes", exact.len() as u64);
    report.push("pud_output_bits", width as u64);
    report.push("pud_micro_ops", program.ops.len() as u64);
    report.push("pud_peak_live_rows", program.peak_live_rows as u64);
    report.push(
        "pud_estimated_cycles",
        program.estimated_cycles(&config.timing),
    );
    report.push(
        "pud_success_rate",
        if total_bits == 0 {
            1.0
        } else {
            matching_bits as f64 / total_bits as f64
        },
    );
    report.push("pud_ops_executed", device.stats.pud_ops);
    for (i, v) in got.iter().enumerate() {
        report.push(format!("output_{i}"), *v);
    }
    Ok(report)
}

// -------------------------------------------------------------------- trng

fn run_trng(config: &ExperimentConfig) -> Result<MetricsReport, RunnerError> {
    let job = config
        .trng
        .as_ref()
        .ok_or(RunnerError::MissingSection { what: "trng" })?;
    let mut device = build_device(config)?;
    let out = quac_trng(&mut device, job.n_rows, job.n_bits, &job.calibration)?;
    let mut report = MetricsReport::new();
    report.push("trng_rows", job.n_rows as u64);
    report.push("trng_bits", out.n_bits);
    report.push("trng_activations", out.activations);
    report.push("trng_ones", out.ones);
    report.push("trng_monobit_bias", out.monobit_bias);
    report.push("trng_runs_z", out.runs_z);
    report.push(
        "trng_gbps_per_channel",
        out.throughput_gbps_per_channel,
    );
    report.push("trng_gbps_total", out.throughput_gbps_total);
    Ok(report)
}

// --------------------------------------------------------------------- pnm

fn run_pnm(config: &ExperimentConfig) -> Result<MetricsReport, RunnerError> {
    let job = config
        .pnm
        .as_ref()
        .ok_or(RunnerError::MissingSection { what: "pnm" })?;
    let placement = papi_schedule(&job.kernels, &job.units)?;
    let mut report = MetricsReport::new();
    report.push("pnm_kernels", job.kernels.len() as u64);
    report.push("pnm_units", job.units.len() as u64);
    report.push("pnm_makespan_seconds", placement.makespan_seconds);
    report.push("pnm_total_bytes_moved", placement.total_bytes_moved);
    for a in &placement.assignments {
        report.push(format!("placement_{}", a.kernel), a.unit.clone());
        report.push(format!("time_{}", a.kernel), a.time_seconds);
        report.push(format!("bound_{}", a.kernel), a.bound.to_string());
        let kernel = job
            .kernels
            .iter()
            .find(|k| k.name == a.kernel)
            .expect("assignment references a known kernel");
        report.push(
            format!("intensity_{}", a.kernel),
            kernel.arithmetic_intensity(),
        );
        report.push(
            format!("energy_pj_{}", a.kernel),
            job.energy.energy_pj(kernel, a.bytes_moved),
        );
    }
    if let Some(s) = &job.scaling {
        let unit = job.units.iter().find(|u| u.name == s.unit).unwrap();
        let kernel = job.kernels.iter().find(|k| k.name == s.kernel).unwrap();
        let curve = scaling_curve(unit, kernel, s.max_units, s.host_fed);
        let (_, bound) = roofline_time_detail(kernel, unit);
        report.push("scaling_bound", bound.to_string());
        for (i, thr) in curve.iter().enumerate() {
            report.push(format!("scaling_throughput_n{}", i + 1), *thr);
        }
        for (i, thr) in curve.iter().enumerate() {
            report.push(format!("scaling_ratio_n{}", i + 1), thr / curve[0]);
        }
    }
    Ok(report)
}

// ------------------------------------------------------------------- sweep

/// Cartesian product over the sweep axes; each point runs independently (in
/// parallel) with its own device and RNG, and results are emitted in point
/// order regardless of completion order.
pub fn run_sweep(
    base_text: &str,
    config: &ExperimentConfig,
) -> Result<Vec<(Vec<(String, String)>, MetricsReport)>, RunnerError> {
    let sweep = config
        .sweep
        .as_ref()
        .ok_or(RunnerError::MissingSection { what: "sweep" })?;
    let sub: Subcommand = sweep
        .run
        .parse()
        .map_err(|m| RunnerError::Config(ConfigError::Invalid(m)))?;
    if sub == Subcommand::Sweep {
        return Err(RunnerError::Config(ConfigError::Invalid(
            "sweep cannot nest sweeps".into(),
        )));
    }
    // cartesian product in axis-major order
    let mut points: Vec<Vec<(String, toml::Value)>> = vec![Vec::new()];
    for axis in &sweep.axes {
        let mut next = Vec::with_capacity(points.len() * axis.values.len());
        for point in &points {
            for v in &axis.values {
                let mut p = point.clone();
                p.push((axis.key.clone(), v.clone()));
                next.push(p);
            }
        }
        points = next;
    }
    points
        .into_par_iter()
        .map(|overrides| {
            let point_config = ExperimentConfig::with_override(base_text, &overrides)?;
            let report = run(&point_config, sub)?;
            let labels = overrides
                .into_iter()
                .map(|(k, v)| {
                    let rendered = match v {
                        toml::Value::String(s) => s,
                        other => other.to_string(),
                    };
                    (k, rendered)
                })
                .collect();
            Ok((labels, report))
        })
        .collect()
}

pub fn sweep_to_csv(points: &[(Vec<(String, String)>, MetricsReport)]) -> String {
    sweep_csv(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;

    fn parse(text: &str) -> ExperimentConfig {
        ExperimentConfig::parse(text, "<test>").unwrap()
    }

    #[test]
    fn attack_single_sided_flips_without_mitigation() {
        let config = parse(
            "\
seed = 3
[geometry]
channels = 1
ranks_per_channel = 1
banks_per_rank = 1
subarrays_per_bank = 1
rows_per_subarray = 32
columns_per_row = 64
[timing]
t_refi = 100000
t_refw = 100000
[disturbance]
enabled = true
acmin_log_sigma = 0.0
vrd_ratio_max = 1.0
acmin_log_mean = 5.991464547107982   # median 400
[attack]
pattern = \"single_sided\"
row = 16
acts_per_window = 600
windows = 2
",
        );
        let report = run(&config, Subcommand::Attack).unwrap();
        assert!(report.get_int("bitflips").unwrap() > 0);
        assert_eq!(report.get_int("acts_to_first_flip"), Some(400));
    }

    #[test]
    fn uniform_workload_runs_all_modes() {
        let base = "\
seed = 5
[geometry]
banks_per_rank = 4
subarrays_per_bank = 4
rows_per_subarray = 32
columns_per_row = 64
[timing]
t_refi = 2000
t_refw = 16000
[smd]
enabled = false
[workload.synthetic]
kind = \"uniform\"
banks = 4
slots = 100
maintenance = \"none\"
";
        let golden = run(&parse(base), Subcommand::Simulate).unwrap();
        let smd = run(
            &parse(&base.replace("maintenance = \"none\"", "maintenance = \"smd_overlap\"")),
            Subcommand::Simulate,
        )
        .unwrap();
        let blocking = run(
            &parse(&base.replace("maintenance = \"none\"", "maintenance = \"blocking_rank\"")),
            Subcommand::Simulate,
        )
        .unwrap();
        // memory image identical in every mode
        assert_eq!(
            golden.get_int("data_digest"),
            smd.get_int("data_digest")
        );
        assert_eq!(
            golden.get_int("data_digest"),
            blocking.get_int("data_digest")
        );
        let c_golden = golden.get_int("total_cycles").unwrap();
        let c_smd = smd.get_int("total_cycles").unwrap();
        let c_blocking = blocking.get_int("total_cycles").unwrap();
        assert!(c_golden <= c_smd, "golden {c_golden} vs smd {c_smd}");
        assert!(
            c_smd < c_blocking,
            "smd {c_smd} should beat blocking {c_blocking}"
        );
    }

    #[test]
    fn pnm_report_places_kernels() {
        let config = parse(
            "\
seed = 1
[[pnm.units]]
name = \"fc0\"
class = \"fc_pim\"
peak_compute = 8e12
mem_bandwidth = 4e12
capacity = 1.6e10
link_bandwidth = 3.2e10
[[pnm.units]]
name = \"attn0\"
class = \"attn_pim\"
peak_compute = 1e12
mem_bandwidth = 8e12
capacity = 2.56e11
link_bandwidth = 3.2e10
[[pnm.units]]
name = \"pu0\"
class = \"pu\"
peak_compute = 1e14
mem_bandwidth = 1e12
capacity = 8e10
link_bandwidth = 6.4e10
[[pnm.kernels]]
name = \"attention\"
compute_ops = 5e8
bytes_touched = 1e9
resident_unit = \"attn0\"
[[pnm.kernels]]
name = \"dense\"
compute_ops = 2e11
bytes_touched = 1e9
",
        );
        let report = run(&config, Subcommand::Pnm).unwrap();
        assert_eq!(report.get("placement_attention").unwrap().render(), "attn0");
        assert_eq!(report.get("placement_dense").unwrap().render(), "pu0");
    }

    #[test]
    fn sweep_points_in_order() {
        let base = "\
seed = 1
[trng]
n_rows = 4
n_bits = 1000
[sweep]
run = \"trng\"
[[sweep.axes]]
key = \"trng.n_rows\"
values = [2, 4, 8]
";
        let config = parse(base);
        let points = run_sweep(base, &config).unwrap();
        assert_eq!(points.len(), 3);
        let labels: Vec<&str> = points
            .iter()
            .map(|(axes, _)| axes[0].1.as_str())
            .collect();
        assert_eq!(labels, vec!["2", "4", "8"]);
        // ratios follow the calibration
        let at = |i: usize| points[i].1.get_float("trng_gbps_per_channel").unwrap();
        assert!(at(1) > at(0));
        assert!((at(2) / at(1) - 1.25).abs() < 1e-9);
    }
}
