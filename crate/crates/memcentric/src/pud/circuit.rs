//! Gate-level circuit IR and its line-oriented netlist format.
//!
//! ```text
//! # comment
//! input a 8
//! input b 8
//! gate n1 NOT a.0
//! gate g1 AND a.0 b.0
//! gate g2 OR g1 n1
//! output g2
//! ```
//!
//! Every reference is one bit wide: bit `i` of a multi-bit input is `name.i`;
//! width-1 inputs and gate outputs are referenced bare. Gates must be defined
//! before use, which also makes the circuit acyclic by construction.

use std::collections::BTreeMap;

use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GateOp {
    And,
    Or,
    Not,
}

impl GateOp {
    pub fn arity(&self) -> usize {
        match self {
            GateOp::And | GateOp::Or => 2,
            GateOp::Not => 1,
        }
    }
}

impl std::fmt::Display for GateOp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            GateOp::And => "AND",
            GateOp::Or => "OR",
            GateOp::Not => "NOT",
        };
        write!(f, "{s}")
    }
}

/// Reference to a 1-bit wire: an input bit (`name.bit`) or a gate output.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct WireRef {
    pub name: String,
    pub bit: Option<usize>,
}

impl WireRef {
    pub fn parse(text: &str) -> Result<Self, String> {
        if text.is_empty() {
            return Err("empty reference".into());
        }
        match text.rsplit_once('.') {
            Some((name, bit)) if !name.is_empty() => {
                let bit: usize = bit
                    .parse()
                    .map_err(|_| format!("bad bit index in `{text}`"))?;
                Ok(WireRef {
                    name: name.to_string(),
                    bit: Some(bit),
                })
            }
            _ => Ok(WireRef {
                name: text.to_string(),
                bit: None,
            }),
        }
    }
}

impl std::fmt::Display for WireRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.bit {
            Some(b) => write!(f, "{}.{b}", self.name),
            None => write!(f, "{}", self.name),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gate {
    pub name: String,
    pub op: GateOp,
    pub args: Vec<WireRef>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct GateCircuit {
    /// Named operands with bit width; input of width w declares wires
    /// `name.0 .. name.(w-1)`.
    pub inputs: Vec<(String, usize)>,
    /// Topologically ordered (defined before use).
    pub gates: Vec<Gate>,
    pub outputs: Vec<WireRef>,
}

#[derive(Debug, Error, PartialEq)]
pub enum NetlistError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("circuit: {0}")]
    Invalid(String),
}

/// Dense wire numbering: input bits first, then one wire per gate.
#[derive(Clone, Debug)]
pub struct WireMap {
    index: BTreeMap<(String, usize), usize>,
    pub count: usize,
    pub input_wires: Vec<(String, Vec<usize>)>,
    pub gate_wires: Vec<usize>,
}

impl GateCircuit {
    pub fn parse_netlist(text: &str) -> Result<Self, NetlistError> {
        let mut circuit = GateCircuit::default();
        let mut defined: BTreeMap<String, usize> = BTreeMap::new(); // name -> width
        let err = |line: usize, msg: String| NetlistError::Parse { line, msg };
        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let tokens: Vec<&str> = content.split_whitespace().collect();
            match tokens[0] {
                "input" => {
                    if tokens.len() != 3 {
                        return Err(err(line, "expected `input <name> <width>`".into()));
                    }
                    let name = tokens[1].to_string();
                    if name.contains('.') {
                        return Err(err(line, format!("input name `{name}` contains '.'")));
                    }
                    let width: usize = tokens[2]
                        .parse()
                        .map_err(|_| err(line, format!("bad width `{}`", tokens[2])))?;
                    if width == 0 {
                        return Err(err(line, "width must be ≥ 1".into()));
                    }
                    if defined.contains_key(&name) {
                        return Err(err(line, format!("duplicate name `{name}`")));
                    }
                    defined.insert(name.clone(), width);
                    circuit.inputs.push((name, width));
                }
                "gate" => {
                    if tokens.len() < 3 {
                        return Err(err(line, "expected `gate <name> <OP> <args...>`".into()));
                    }
                    let name = tokens[1].to_string();
                    if name.contains('.') {
                        return Err(err(line, format!("gate name `{name}` contains '.'")));
                    }
                    if defined.contains_key(&name) {
                        return Err(err(line, format!("duplicate name `{name}`")));
                    }
                    let op = match tokens[2].to_ascii_uppercase().as_str() {
                        "AND" => GateOp::And,
                        "OR" => GateOp::Or,
                        "NOT" => GateOp::Not,
                        other => return Err(err(line, format!("unknown gate op `{other}`"))),
                    };
                    let args: Vec<WireRef> = tokens[3..]
                        .iter()
                        .map(|t| WireRef::parse(t))
                        .collect::<Result<_, _>>()
                        .map_err(|m| err(line, m))?;
                    if args.len() != op.arity() {
                        return Err(err(
                            line,
                            format!("{op} takes {} operand(s), got {}", op.arity(), args.len()),
                        ));
                    }
                    for arg in &args {
                        check_ref(arg, &defined).map_err(|m| err(line, m))?;
                    }
                    defined.insert(name.clone(), 1);
                    circuit.gates.push(Gate { name, op, args });
                }
                "output" => {
                    if tokens.len() < 2 {
                        return Err(err(line, "expected `output <ref...>`".into()));
                    }
                    for t in &tokens[1..] {
                        let r = WireRef::parse(t).map_err(|m| err(line, m))?;
                        check_ref(&r, &defined).map_err(|m| err(line, m))?;
                        circuit.outputs.push(r);
                    }
                }
                other => {
                    return Err(err(line, format!("unknown directive `{other}`")));
                }
            }
        }
        circuit.validate()?;
        Ok(circuit)
    }

    pub fn validate(&self) -> Result<(), NetlistError> {
        if self.outputs.is_empty() {
            return Err(NetlistError::Invalid("no outputs declared".into()));
        }
        self.wire_map().map(|_| ())
    }

    /// Flattens operands and gates into dense wire ids, verifying every
    /// reference resolves and is defined before use.
    pub fn wire_map(&self) -> Result<WireMap, NetlistError> {
        let mut index = BTreeMap::new();
        let mut input_wires = Vec::new();
        let mut count = 0;
        for (name, width) in &self.inputs {
            let mut rows = Vec::with_capacity(*width);
            for bit in 0..*width {
                index.insert((name.clone(), bit), count);
                rows.push(count);
                count += 1;
            }
            input_wires.push((name.clone(), rows));
        }
        let mut gate_wires = Vec::with_capacity(self.gates.len());
        for gate in &self.gates {
            for arg in &gate.args {
                self.resolve(arg, &index)?;
            }
            if index.contains_key(&(gate.name.clone(), 0)) {
                return Err(NetlistError::Invalid(format!(
                    "duplicate wire `{}`",
                    gate.name
                )));
            }
            index.insert((gate.name.clone(), 0), count);
            gate_wires.push(count);
            count += 1;
        }
        for out in &self.outputs {
            self.resolve(out, &index)?;
        }
        Ok(WireMap {
            index,
            count,
            input_wires,
            gate_wires,
        })
    }

    fn resolve(
        &self,
        r: &WireRef,
        index: &BTreeMap<(String, usize), usize>,
    ) -> Result<usize, NetlistError> {
        let bit = r.bit.unwrap_or(0);
        index
            .get(&(r.name.clone(), bit))
            .copied()
            .ok_or_else(|| NetlistError::Invalid(format!("undefined reference `{r}`")))
    }

    /// Software evaluation over 64 parallel lanes (u64 per wire); the
    /// independent oracle for in-DRAM execution.
    pub fn eval_u64(
        &self,
        inputs: &BTreeMap<String, Vec<u64>>,
    ) -> Result<Vec<u64>, NetlistError> {
        let map = self.wire_map()?;
        let mut values = vec![0u64; map.count];
        for (name, wires) in &map.input_wires {
            let planes = inputs.get(name).ok_or_else(|| {
                NetlistError::Invalid(format!("missing input operand `{name}`"))
            })?;
            if planes.len() != wires.len() {
                return Err(NetlistError::Invalid(format!(
                    "operand `{name}` has {} bit planes, expected {}",
                    planes.len(),
                    wires.len()
                )));
            }
            for (wire, plane) in wires.iter().zip(planes) {
                values[*wire] = *plane;
            }
        }
        for (gate, wire) in self.gates.iter().zip(&map.gate_wires) {
            let arg = |i: usize| -> u64 {
                let id = self.resolve(&gate.args[i], &map.index).expect("validated");
                values[id]
            };
            values[*wire] = match gate.op {
                GateOp::And => arg(0) & arg(1),
                GateOp::Or => arg(0) | arg(1),
                GateOp::Not => !arg(0),
            };
        }
        self.outputs
            .iter()
            .map(|r| self.resolve(r, &map.index).map(|id| values[id]))
            .collect()
    }
}

impl WireMap {
    pub fn wire_of(&self, r: &WireRef) -> Option<usize> {
        self.index.get(&(r.name.clone(), r.bit.unwrap_or(0))).copied()
    }
}

fn check_ref(r: &WireRef, defined: &BTreeMap<String, usize>) -> Result<(), String> {
    match defined.get(&r.name) {
        None => Err(format!("undefined reference `{r}`")),
        Some(width) => {
            let bit = r.bit.unwrap_or(0);
            if r.bit.is_none() && *width > 1 {
                return Err(format!(
                    "`{}` is {width} bits wide; reference a bit as `{}.i`",
                    r.name, r.name
                ));
            }
            if bit >= *width {
                return Err(format!("bit {bit} out of range for `{}` ({width} bits)", r.name));
            }
            Ok(())
        }
    }
}

/// Builds the ripple-carry adder netlist over two w-bit operands using only
/// AND/OR/NOT gates; outputs are sum bits little-endian plus the carry-out.
pub fn ripple_carry_adder_netlist(width: usize) -> String {
    use std::fmt::Write;
    let mut s = String::new();
    writeln!(s, "# {width}-bit ripple-carry adder: out = a + b").unwrap();
    writeln!(s, "input a {width}").unwrap();
    writeln!(s, "input b {width}").unwrap();
    // xor(x, y) = OR(AND(x, NOT y), AND(NOT x, y))
    let xor = |s: &mut String, out: &str, x: &str, y: &str| {
        writeln!(s, "gate {out}_nx NOT {x}").unwrap();
        writeln!(s, "gate {out}_ny NOT {y}").unwrap();
        writeln!(s, "gate {out}_t1 AND {x} {out}_ny").unwrap();
        writeln!(s, "gate {out}_t2 AND {out}_nx {y}").unwrap();
        writeln!(s, "gate {out} OR {out}_t1 {out}_t2").unwrap();
    };
    xor(&mut s, "sum0", "a.0", "b.0");
    writeln!(s, "gate c1 AND a.0 b.0").unwrap();
    for i in 1..width {
        let (a, b, cin) = (format!("a.{i}"), format!("b.{i}"), format!("c{i}"));
        xor(&mut s, &format!("x{i}"), &a, &b);
        xor(&mut s, &format!("sum{i}"), &format!("x{i}"), &cin);
        // carry = AND(a,b) OR AND(cin, xor(a,b))
        writeln!(s, "gate c{}_g AND {a} {b}", i + 1).unwrap();
        writeln!(s, "gate c{}_p AND x{i} {cin}", i + 1).unwrap();
        writeln!(s, "gate c{} OR c{}_g c{}_p", i + 1, i + 1, i + 1).unwrap();
    }
    let outputs: Vec<String> = (0..width)
        .map(|i| format!("sum{i}"))
        .chain(std::iter::once(format!("c{width}")))
        .collect();
    writeln!(s, "output {}", outputs.join(" ")).unwrap();
    s
}
