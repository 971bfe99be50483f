//! Circuit → micro-op compiler.
//!
//! AND/OR gates lower to triple-row-activation majority with a constant
//! third operand (AND uses const-0, OR uses const-1); NOT lowers to the
//! sense-amp complement op. TRA destroys all three participating rows, so
//! operands are first copied into scratch compute rows; the copy-then-compute
//! discipline keeps named wires intact. Rows are assigned by a linear-scan
//! allocator over wire live ranges; running out of rows is a capacity error
//! reporting the live-range peak.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::dram::TimingParams;
use crate::pud::circuit::{GateCircuit, GateOp, NetlistError};
use crate::pud::MicroOp;

#[derive(Debug, Error, PartialEq)]
pub enum CompileError {
    #[error(
        "subarray capacity exceeded: live-range peak of {peak_live} rows, only {capacity} available"
    )]
    Capacity { peak_live: usize, capacity: usize },
    #[error(transparent)]
    Netlist(#[from] NetlistError),
}

/// Compiled in-DRAM program: micro-ops over local row indices plus the
/// operand/output row binding.
#[derive(Clone, Debug, PartialEq)]
pub struct Program {
    pub ops: Vec<MicroOp>,
    /// Row per bit of each input operand, in declaration order.
    pub input_rows: Vec<(String, Vec<usize>)>,
    /// Row per circuit output, in output order (bit i of the result).
    pub output_rows: Vec<usize>,
    /// Peak number of simultaneously live rows.
    pub peak_live_rows: usize,
    cost_units: u64,
}

impl Program {
    pub fn estimated_cycles(&self, timing: &TimingParams) -> u64 {
        self.cost_units * timing.t_rc
    }

    /// Readable micro-op listing (golden-file friendly).
    pub fn listing(&self) -> String {
        let mut s = String::new();
        for (name, rows) in &self.input_rows {
            let r: Vec<String> = rows.iter().map(|r| format!("r{r}")).collect();
            s.push_str(&format!("; input {name}: {}\n", r.join(" ")));
        }
        let out: Vec<String> = self.output_rows.iter().map(|r| format!("r{r}")).collect();
        s.push_str(&format!("; output: {}\n", out.join(" ")));
        for op in &self.ops {
            s.push_str(&op.listing_line());
            s.push('\n');
        }
        s
    }

    /// Structural check: every micro-op reads only rows previously written
    /// (inputs count as written), so no op consumes a stale row.
    pub fn validate(&self) -> Result<(), String> {
        let mut written: BTreeSet<usize> = BTreeSet::new();
        for (_, rows) in &self.input_rows {
            written.extend(rows.iter().copied());
        }
        for (i, op) in self.ops.iter().enumerate() {
            let check = |r: &usize, written: &BTreeSet<usize>| -> Result<(), String> {
                if written.contains(r) {
                    Ok(())
                } else {
                    Err(format!("op {i} ({}) reads unwritten row r{r}", op.listing_line()))
                }
            };
            match op {
                MicroOp::RowClone { src, dst } => {
                    check(src, &written)?;
                    written.insert(*dst);
                }
                MicroOp::MultiCopy { src, dsts } => {
                    check(src, &written)?;
                    written.extend(dsts.iter().copied());
                }
                MicroOp::TraMaj { rows } => {
                    for r in rows {
                        check(r, &written)?;
                    }
                }
                MicroOp::Not { src, dst } => {
                    check(src, &written)?;
                    written.insert(*dst);
                }
                MicroOp::MultiInput { inputs, dst, .. } => {
                    for r in inputs {
                        check(r, &written)?;
                    }
                    written.insert(*dst);
                }
                MicroOp::SimulAct { rows } => {
                    written.extend(rows.iter().copied());
                }
                MicroOp::SetConst { row, .. } => {
                    written.insert(*row);
                }
            }
        }
        for r in &self.output_rows {
            if !written.contains(r) {
                return Err(format!("output row r{r} never written"));
            }
        }
        Ok(())
    }
}

struct RowAlloc {
    free: BTreeSet<usize>,
    live: usize,
    peak: usize,
    capacity: usize,
}

impl RowAlloc {
    fn new(capacity: usize) -> Self {
        RowAlloc {
            free: (0..capacity).collect(),
            live: 0,
            peak: 0,
            capacity,
        }
    }

    fn alloc(&mut self) -> Result<usize, CompileError> {
        let row = self
            .free
            .iter()
            .next()
            .copied()
            .ok_or(CompileError::Capacity {
                peak_live: self.live + 1,
                capacity: self.capacity,
            })?;
        self.free.remove(&row);
        self.live += 1;
        self.peak = self.peak.max(self.live);
        Ok(row)
    }

    fn free(&mut self, row: usize) {
        if self.free.insert(row) {
            self.live -= 1;
        }
    }
}

/// Compiles a gate circuit into an in-DRAM program for a subarray with
/// `capacity` usable rows. Executed noise-free, the program computes the
/// circuit function on every column independently.
pub fn compile_circuit(circuit: &GateCircuit, capacity: usize) -> Result<Program, CompileError> {
    let map = circuit.wire_map()?;
    let n_wires = map.count;

    // last use position per wire: gate index, or MAX if it feeds an output
    let mut last_use = vec![0usize; n_wires];
    for (gi, gate) in circuit.gates.iter().enumerate() {
        for arg in &gate.args {
            let w = map.wire_of(arg).expect("validated");
            last_use[w] = last_use[w].max(gi);
        }
    }
    for out in &circuit.outputs {
        let w = map.wire_of(out).expect("validated");
        last_use[w] = usize::MAX;
    }

    let mut alloc = RowAlloc::new(capacity);
    let mut wire_row = vec![usize::MAX; n_wires];
    let mut ops = Vec::new();

    let mut input_rows = Vec::new();
    for (name, wires) in &map.input_wires {
        let mut rows = Vec::with_capacity(wires.len());
        for &w in wires {
            let row = alloc.alloc()?;
            wire_row[w] = row;
            rows.push(row);
        }
        input_rows.push((name.clone(), rows));
    }

    let need_c0 = circuit.gates.iter().any(|g| g.op == GateOp::And);
    let need_c1 = circuit.gates.iter().any(|g| g.op == GateOp::Or);
    let const0 = if need_c0 {
        let row = alloc.alloc()?;
        ops.push(MicroOp::SetConst { row, bit: false });
        Some(row)
    } else {
        None
    };
    let const1 = if need_c1 {
        let row = alloc.alloc()?;
        ops.push(MicroOp::SetConst { row, bit: true });
        Some(row)
    } else {
        None
    };

    for (gi, gate) in circuit.gates.iter().enumerate() {
        let out_wire = map.gate_wires[gi];
        match gate.op {
            GateOp::And | GateOp::Or => {
                let x = wire_row[map.wire_of(&gate.args[0]).unwrap()];
                let y = wire_row[map.wire_of(&gate.args[1]).unwrap()];
                let konst = if gate.op == GateOp::And {
                    const0.unwrap()
                } else {
                    const1.unwrap()
                };
                let t1 = alloc.alloc()?;
                let t2 = alloc.alloc()?;
                let t3 = alloc.alloc()?;
                ops.push(MicroOp::RowClone { src: x, dst: t1 });
                ops.push(MicroOp::RowClone { src: y, dst: t2 });
                ops.push(MicroOp::RowClone {
                    src: konst,
                    dst: t3,
                });
                ops.push(MicroOp::TraMaj { rows: [t1, t2, t3] });
                wire_row[out_wire] = t1;
                alloc.free(t2);
                alloc.free(t3);
            }
            GateOp::Not => {
                let x = wire_row[map.wire_of(&gate.args[0]).unwrap()];
                let t = alloc.alloc()?;
                ops.push(MicroOp::Not { src: x, dst: t });
                wire_row[out_wire] = t;
            }
        }
        // release rows of wires whose last use was this gate
        for arg in &gate.args {
            let w = map.wire_of(arg).unwrap();
            if last_use[w] == gi {
                alloc.free(wire_row[w]);
                last_use[w] = usize::MAX - 1; // freed sentinel, never reuse
            }
        }
    }

    // materialize outputs; input-fed outputs get a fresh row so operand rows
    // stay intact (the identity circuit is a single copy)
    let n_inputs: usize = map.input_wires.iter().map(|(_, w)| w.len()).sum();
    let mut output_rows = Vec::with_capacity(circuit.outputs.len());
    for out in &circuit.outputs {
        let w = map.wire_of(out).expect("validated");
        if w < n_inputs {
            let row = alloc.alloc()?;
            ops.push(MicroOp::RowClone {
                src: wire_row[w],
                dst: row,
            });
            output_rows.push(row);
        } else {
            output_rows.push(wire_row[w]);
        }
    }

    let cost_units = ops.iter().map(MicroOp::cost_units).sum();
    let program = Program {
        ops,
        input_rows,
        output_rows,
        peak_live_rows: alloc.peak,
        cost_units,
    };
    debug_assert_eq!(program.validate(), Ok(()));
    Ok(program)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pud::circuit::ripple_carry_adder_netlist;
    use crate::pud::tests::device;
    use crate::pud::{PudEngine, SubarrayId};
    use std::collections::BTreeMap;

    #[test]
    fn identity_is_single_rowclone() {
        let c = GateCircuit::parse_netlist("input a 1\noutput a\n").unwrap();
        let p = compile_circuit(&c, 64).unwrap();
        assert_eq!(p.ops.len(), 1);
        assert!(matches!(p.ops[0], MicroOp::RowClone { .. }));
        assert_ne!(p.output_rows[0], p.input_rows[0].1[0]);
    }

    #[test]
    fn full_adder_truth_table() {
        let text = "\
input a 1
input b 1
input cin 1
gate na NOT a
gate nb NOT b
gate t1 AND a nb
gate t2 AND na b
gate x OR t1 t2
gate nx NOT x
gate nc NOT cin
gate s1 AND x nc
gate s2 AND nx cin
gate sum OR s1 s2
gate g AND a b
gate p AND x cin
gate cout OR g p
output sum cout
";
        let c = GateCircuit::parse_netlist(text).unwrap();
        let p = compile_circuit(&c, 64).unwrap();
        p.validate().unwrap();
        let engine = PudEngine::exact();
        for combo in 0..8u64 {
            let mut d = device();
            let a = combo & 1;
            let b = combo >> 1 & 1;
            let cin = combo >> 2 & 1;
            let out = engine
                .run_program(
                    &mut d,
                    SubarrayId::first(),
                    &p,
                    &[
                        ("a".into(), vec![a]),
                        ("b".into(), vec![b]),
                        ("cin".into(), vec![cin]),
                    ],
                )
                .unwrap();
            let want = a + b + cin;
            assert_eq!(out[0], want, "combo {combo:03b}");
        }
    }

    #[test]
    fn adder8_matches_software_on_random_pairs() {
        let c = GateCircuit::parse_netlist(&ripple_carry_adder_netlist(8)).unwrap();
        let p = compile_circuit(&c, 64).unwrap();
        p.validate().unwrap();
        let engine = PudEngine::exact();
        let mut d = device();
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(123);
        let lanes = 100;
        let a: Vec<u64> = (0..lanes).map(|_| rng.random_range(0..256)).collect();
        let b: Vec<u64> = (0..lanes).map(|_| rng.random_range(0..256)).collect();
        let out = engine
            .run_program(
                &mut d,
                SubarrayId::first(),
                &p,
                &[("a".into(), a.clone()), ("b".into(), b.clone())],
            )
            .unwrap();
        for i in 0..lanes {
            assert_eq!(out[i], a[i] + b[i], "lane {i}: {} + {}", a[i], b[i]);
        }
    }

    #[test]
    fn capacity_error_names_peak() {
        let c = GateCircuit::parse_netlist(&ripple_carry_adder_netlist(8)).unwrap();
        let err = compile_circuit(&c, 20).unwrap_err();
        match err {
            CompileError::Capacity {
                peak_live,
                capacity,
            } => {
                assert_eq!(capacity, 20);
                assert!(peak_live > 20);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn compiled_program_agrees_with_eval_u64() {
        let text = "\
input a 4
input b 4
gate n0 NOT a.0
gate g0 AND n0 b.3
gate g1 OR g0 a.2
gate g2 AND g1 b.0
gate g3 OR g2 b.1
gate n1 NOT g3
output n1 g1
";
        let c = GateCircuit::parse_netlist(text).unwrap();
        let p = compile_circuit(&c, 64).unwrap();
        let engine = PudEngine::exact();
        let mut d = device();
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(5);
        let lanes = 64;
        let a: Vec<u64> = (0..lanes).map(|_| rng.random_range(0..16)).collect();
        let b: Vec<u64> = (0..lanes).map(|_| rng.random_range(0..16)).collect();
        let got = engine
            .run_program(
                &mut d,
                SubarrayId::first(),
                &p,
                &[("a".into(), a.clone()), ("b".into(), b.clone())],
            )
            .unwrap();
        // oracle: software lane evaluation
        let plane = |vals: &[u64], bit: usize| -> u64 {
            vals.iter()
                .enumerate()
                .fold(0u64, |acc, (lane, v)| acc | ((v >> bit & 1) << lane))
        };
        let mut inputs = BTreeMap::new();
        inputs.insert("a".to_string(), (0..4).map(|i| plane(&a, i)).collect());
        inputs.insert("b".to_string(), (0..4).map(|i| plane(&b, i)).collect());
        let oracle = c.eval_u64(&inputs).unwrap();
        for lane in 0..lanes {
            let mut want = 0u64;
            for (bit, word) in oracle.iter().enumerate() {
                want |= (word >> lane & 1) << bit;
            }
            assert_eq!(got[lane], want, "lane {lane}");
        }
    }

    #[test]
    fn estimated_cycles_positive() {
        let c = GateCircuit::parse_netlist(&ripple_carry_adder_netlist(4)).unwrap();
        let p = compile_circuit(&c, 64).unwrap();
        let t = TimingParams::default();
        assert!(p.estimated_cycles(&t) >= p.ops.len() as u64 * t.t_rc);
    }
}
