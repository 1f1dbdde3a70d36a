//! Circuit representations: monolithic (flat qubit indices) and distributed
//! (operands pinned to nodes, cross-node gates tagged with a remote-gate
//! scheme), plus the logical-qubit location map and the pluggable
//! partitioner that turns one into the other.
//!
//! Distributed circuits have a plain-text form, one operation per line:
//!
//! ```text
//! # comment
//! INIT 2@node_0 3@node_0
//! H 2@node_0
//! CNOT 2@node_0 2@node_1 cat
//! MEASURE 2@node_1 -> c0
//! ```
//!
//! Formally: `line := op? ('#' comment)?`, `op := 'INIT' operand+ | gate
//! operand+ scheme? | 'MEASURE' operand '->' cbit`, `operand :=
//! <position> '@' <node-name>`, `cbit := 'c' <index>`, `scheme := 'cat' |
//! '1tp' | '2tp' | 'tp_safe'`, and `gate` uses the spellings of
//! [`GateSpec`] (e.g. `H`, `RX(0.5)`, `U(a,b,c)`, `CNOT`).

use crate::hardware::DqcNetwork;
use crate::qstate::gate::GateSpec;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

/// Remote-gate implementation scheme for a cross-node gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Telegate: nonlocal controlled gate via one shared ebit; data stays put.
    Cat,
    /// Teledata: teleport the control over, run the gate there, leave it.
    Tp1,
    /// Teledata there and back: 1TP followed by a return teleport.
    Tp2,
    /// Like 2TP but data never idles in a comm position.
    TpSafe,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::Cat => write!(f, "cat"),
            Scheme::Tp1 => write!(f, "1tp"),
            Scheme::Tp2 => write!(f, "2tp"),
            Scheme::TpSafe => write!(f, "tp_safe"),
        }
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        match text.to_ascii_lowercase().as_str() {
            "cat" => Ok(Scheme::Cat),
            "1tp" => Ok(Scheme::Tp1),
            "2tp" => Ok(Scheme::Tp2),
            "tp_safe" => Ok(Scheme::TpSafe),
            other => Err(format!(
                "unknown scheme `{other}` (expected cat, 1tp, 2tp or tp_safe)"
            )),
        }
    }
}

/// One operation of a monolithic circuit.
#[derive(Debug, Clone, PartialEq)]
pub enum MonoOp {
    Gate { gate: GateSpec, qubits: Vec<usize> },
    Measure { qubit: usize, cbit: usize },
}

/// A circuit over a flat qubit index space, with no node assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct MonoCircuit {
    pub num_qubits: usize,
    pub num_cbits: usize,
    pub ops: Vec<MonoOp>,
}

impl fmt::Display for MonoCircuit {
    /// Tuple-per-line dump, e.g. `(H, 0)`, `(CNOT, 0, 1)`, `(MEASURE, 1, c0)`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for op in &self.ops {
            match op {
                MonoOp::Gate { gate, qubits } => {
                    write!(f, "({gate}")?;
                    for q in qubits {
                        write!(f, ", {q}")?;
                    }
                    writeln!(f, ")")?;
                }
                MonoOp::Measure { qubit, cbit } => {
                    writeln!(f, "(MEASURE, {qubit}, c{cbit})")?;
                }
            }
        }
        Ok(())
    }
}

/// A qubit operand of a distributed circuit: memory position at a node.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Operand {
    pub pos: usize,
    pub node: String,
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.pos, self.node)
    }
}

/// One operation of a distributed circuit.
#[derive(Debug, Clone, PartialEq)]
pub enum DistOp {
    /// Initialize the listed positions (all on one node) to `|0>`.
    Init { operands: Vec<Operand> },
    Gate {
        gate: GateSpec,
        operands: Vec<Operand>,
        scheme: Option<Scheme>,
    },
    Measure { operand: Operand, cbit: usize },
}

/// A circuit whose operands carry `(position, node)` pairs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DistCircuit {
    pub ops: Vec<DistOp>,
}

impl fmt::Display for DistCircuit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for op in &self.ops {
            match op {
                DistOp::Init { operands } => {
                    write!(f, "INIT")?;
                    for o in operands {
                        write!(f, " {o}")?;
                    }
                    writeln!(f)?;
                }
                DistOp::Gate {
                    gate,
                    operands,
                    scheme,
                } => {
                    write!(f, "{gate}")?;
                    for o in operands {
                        write!(f, " {o}")?;
                    }
                    if let Some(s) = scheme {
                        write!(f, " {s}")?;
                    }
                    writeln!(f)?;
                }
                DistOp::Measure { operand, cbit } => {
                    writeln!(f, "MEASURE {operand} -> c{cbit}")?;
                }
            }
        }
        Ok(())
    }
}

/// Errors from circuit parsing, partitioning, and map bookkeeping.
#[derive(Debug, thiserror::Error)]
pub enum CircuitError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("insufficient capacity: circuit needs {required} data qubit(s), nodes provide {available}")]
    Capacity { required: usize, available: usize },
    #[error("logical qubit map collision: {a} and {b} both at position {pos} on {node}")]
    MapCollision {
        a: usize,
        b: usize,
        node: String,
        pos: usize,
    },
    #[error("invalid circuit: {0}")]
    Invalid(String),
}

fn parse_operand(token: &str, line: usize) -> Result<Operand, CircuitError> {
    let (pos_text, node) = token.split_once('@').ok_or_else(|| CircuitError::Parse {
        line,
        message: format!("expected `<position>@<node>`, got `{token}`"),
    })?;
    let pos: usize = pos_text.parse().map_err(|_| CircuitError::Parse {
        line,
        message: format!("invalid position `{pos_text}` in `{token}`"),
    })?;
    if node.is_empty() {
        return Err(CircuitError::Parse {
            line,
            message: format!("empty node name in `{token}`"),
        });
    }
    Ok(Operand {
        pos,
        node: node.to_string(),
    })
}

/// Parse the plain-text distributed circuit format (see module docs).
pub fn parse_distributed(text: &str) -> Result<DistCircuit, CircuitError> {
    let mut ops = Vec::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw_line.split_once('#') {
            Some((before, _)) => before,
            None => raw_line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        let head = tokens[0];
        if head.eq_ignore_ascii_case("INIT") {
            if tokens.len() < 2 {
                return Err(CircuitError::Parse {
                    line: line_no,
                    message: "INIT needs at least one operand".into(),
                });
            }
            let operands = tokens[1..]
                .iter()
                .map(|t| parse_operand(t, line_no))
                .collect::<Result<Vec<_>, _>>()?;
            ops.push(DistOp::Init { operands });
        } else if head.eq_ignore_ascii_case("MEASURE") {
            if tokens.len() != 4 || tokens[2] != "->" {
                return Err(CircuitError::Parse {
                    line: line_no,
                    message: "expected `MEASURE <pos>@<node> -> c<index>`".into(),
                });
            }
            let operand = parse_operand(tokens[1], line_no)?;
            let cbit_text = tokens[3];
            let cbit = cbit_text
                .strip_prefix('c')
                .and_then(|t| t.parse::<usize>().ok())
                .ok_or_else(|| CircuitError::Parse {
                    line: line_no,
                    message: format!("invalid classical bit `{cbit_text}` (expected e.g. `c0`)"),
                })?;
            ops.push(DistOp::Measure { operand, cbit });
        } else {
            let gate: GateSpec = head.parse().map_err(|e| CircuitError::Parse {
                line: line_no,
                message: format!("{e}"),
            })?;
            if tokens.len() < 2 {
                return Err(CircuitError::Parse {
                    line: line_no,
                    message: format!("gate {gate} needs operands"),
                });
            }
            // The last token may be a scheme tag.
            let (operand_tokens, scheme) = match tokens.last().unwrap().parse::<Scheme>() {
                Ok(s) => (&tokens[1..tokens.len() - 1], Some(s)),
                Err(_) => (&tokens[1..], None),
            };
            let operands = operand_tokens
                .iter()
                .map(|t| parse_operand(t, line_no))
                .collect::<Result<Vec<_>, _>>()?;
            if operands.len() != gate.arity() {
                return Err(CircuitError::Parse {
                    line: line_no,
                    message: format!(
                        "gate {gate} expects {} operand(s), got {}",
                        gate.arity(),
                        operands.len()
                    ),
                });
            }
            ops.push(DistOp::Gate {
                gate,
                operands,
                scheme,
            });
        }
    }
    Ok(DistCircuit { ops })
}

/// Where each logical qubit of the original circuit currently lives.
///
/// Teleportation-based remote gates relocate qubits, so the compiler
/// mutates this map as it lowers the circuit; the final map tells result
/// collection where to look.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LogicalQubitMap {
    mapping: BTreeMap<usize, (usize, usize)>,
}

impl LogicalQubitMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Place `logical` at `(node, pos)`, enforcing injectivity.
    pub fn set(
        &mut self,
        logical: usize,
        node: usize,
        pos: usize,
        node_name: &str,
    ) -> Result<(), CircuitError> {
        for (&other, &(n, p)) in &self.mapping {
            if other != logical && (n, p) == (node, pos) {
                return Err(CircuitError::MapCollision {
                    a: other,
                    b: logical,
                    node: node_name.to_string(),
                    pos,
                });
            }
        }
        self.mapping.insert(logical, (node, pos));
        Ok(())
    }

    pub fn get(&self, logical: usize) -> Option<(usize, usize)> {
        self.mapping.get(&logical).copied()
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, (usize, usize))> + '_ {
        self.mapping.iter().map(|(&l, &np)| (l, np))
    }
}

/// Per-node room for data qubits: the first usable processing position and
/// how many processing positions the node has.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeCapacity {
    pub first_data_position: usize,
    pub count: usize,
}

impl NodeCapacity {
    /// Capacities of every node of a network (uniform QPU config).
    pub fn from_network(network: &DqcNetwork) -> Vec<NodeCapacity> {
        let cfg = &network.qpu_config;
        vec![
            NodeCapacity {
                first_data_position: cfg.num_comm_qubits,
                count: cfg.num_positions - cfg.num_comm_qubits,
            };
            network.num_qpus()
        ]
    }
}

/// A strategy that assigns a monolithic circuit's qubits to nodes and tags
/// cross-node gates with a scheme.
pub trait Partitioner {
    fn name(&self) -> &str;

    fn partition(
        &self,
        circuit: &MonoCircuit,
        capacities: &[NodeCapacity],
        default_scheme: Scheme,
    ) -> Result<(DistCircuit, LogicalQubitMap), CircuitError>;
}

/// Assigns qubits in contiguous index blocks: the first `capacities[0].count`
/// qubits to node 0, the next block to node 1, and so on.
#[derive(Debug, Clone, Copy, Default)]
pub struct ContiguousPartitioner;

impl Partitioner for ContiguousPartitioner {
    fn name(&self) -> &str {
        "contiguous"
    }

    fn partition(
        &self,
        circuit: &MonoCircuit,
        capacities: &[NodeCapacity],
        default_scheme: Scheme,
    ) -> Result<(DistCircuit, LogicalQubitMap), CircuitError> {
        let available: usize = capacities.iter().map(|c| c.count).sum();
        if circuit.num_qubits > available {
            return Err(CircuitError::Capacity {
                required: circuit.num_qubits,
                available,
            });
        }
        let mut qmap = LogicalQubitMap::new();
        let mut home: Vec<Operand> = Vec::with_capacity(circuit.num_qubits);
        let mut node = 0usize;
        let mut used_in_node = 0usize;
        for logical in 0..circuit.num_qubits {
            while used_in_node >= capacities[node].count {
                node += 1;
                used_in_node = 0;
            }
            let pos = capacities[node].first_data_position + used_in_node;
            let name = format!("node_{node}");
            qmap.set(logical, node, pos, &name)?;
            home.push(Operand { pos, node: name });
            used_in_node += 1;
        }
        let mut ops = Vec::new();
        // Qubits of a monolithic circuit start in |0>, so each node begins
        // by initializing its block.
        let mut node_inits: BTreeMap<String, Vec<Operand>> = BTreeMap::new();
        for op in &home {
            node_inits
                .entry(op.node.clone())
                .or_default()
                .push(op.clone());
        }
        for (_, operands) in node_inits {
            ops.push(DistOp::Init { operands });
        }
        for (i, op) in circuit.ops.iter().enumerate() {
            match op {
                MonoOp::Gate { gate, qubits } => {
                    for &q in qubits {
                        if q >= circuit.num_qubits {
                            return Err(CircuitError::Invalid(format!(
                                "op {i}: qubit index {q} out of range ({} qubits)",
                                circuit.num_qubits
                            )));
                        }
                    }
                    let operands: Vec<Operand> =
                        qubits.iter().map(|&q| home[q].clone()).collect();
                    let nodes: Vec<&String> = {
                        let mut seen = Vec::new();
                        for o in &operands {
                            if !seen.contains(&&o.node) {
                                seen.push(&o.node);
                            }
                        }
                        seen
                    };
                    let scheme = if nodes.len() > 1 {
                        Some(default_scheme)
                    } else {
                        None
                    };
                    ops.push(DistOp::Gate {
                        gate: *gate,
                        operands,
                        scheme,
                    });
                }
                MonoOp::Measure { qubit, cbit } => {
                    ops.push(DistOp::Measure {
                        operand: home[*qubit].clone(),
                        cbit: *cbit,
                    });
                }
            }
        }
        Ok((DistCircuit { ops }, qmap))
    }
}

/// Check a distributed circuit against a network. Returns human-readable
/// diagnostics (empty = valid). Lines starting with `warning:` do not block
/// compilation.
pub fn validate_distributed(circuit: &DistCircuit, network: &DqcNetwork) -> Vec<String> {
    let mut out = Vec::new();
    let cfg = &network.qpu_config;
    let resolve = |op_idx: usize, o: &Operand, out: &mut Vec<String>| -> Option<usize> {
        match network.node_index(&o.node) {
            None => {
                out.push(format!("op {op_idx}: unknown node `{}`", o.node));
                None
            }
            Some(n) => {
                if o.pos >= cfg.num_positions {
                    out.push(format!(
                        "op {op_idx}: position {} out of range on {} ({} positions)",
                        o.pos, o.node, cfg.num_positions
                    ));
                    None
                } else {
                    Some(n)
                }
            }
        }
    };
    for (i, op) in circuit.ops.iter().enumerate() {
        match op {
            DistOp::Init { operands } => {
                let mut nodes = Vec::new();
                for o in operands {
                    if let Some(n) = resolve(i, o, &mut out) {
                        if !nodes.contains(&n) {
                            nodes.push(n);
                        }
                    }
                }
                if nodes.len() > 1 {
                    out.push(format!(
                        "op {i}: INIT operands must all live on one node"
                    ));
                }
                for o in operands {
                    if o.pos < cfg.num_comm_qubits {
                        out.push(format!(
                            "warning: op {i}: initializing communication position {} on {}; \
                             it may be claimed by entanglement distribution",
                            o.pos, o.node
                        ));
                    }
                }
            }
            DistOp::Gate {
                gate,
                operands,
                scheme,
            } => {
                if operands.len() != gate.arity() {
                    out.push(format!(
                        "op {i}: gate {gate} expects {} operand(s), got {}",
                        gate.arity(),
                        operands.len()
                    ));
                }
                let mut seen: Vec<&Operand> = Vec::new();
                for o in operands {
                    if seen.contains(&o) {
                        out.push(format!("op {i}: duplicate operand {o}"));
                    }
                    seen.push(o);
                }
                let mut nodes = Vec::new();
                for o in operands {
                    if let Some(n) = resolve(i, o, &mut out) {
                        if !nodes.contains(&n) {
                            nodes.push(n);
                        }
                    }
                    if o.pos < cfg.num_comm_qubits {
                        out.push(format!(
                            "warning: op {i}: data operand {o} sits on a communication \
                             position"
                        ));
                    }
                }
                match (nodes.len(), scheme) {
                    (0 | 1, Some(s)) => out.push(format!(
                        "op {i}: local gate carries scheme tag `{s}`"
                    )),
                    (2.., None) => out.push(format!(
                        "op {i}: cross-node gate {gate} needs a scheme tag"
                    )),
                    _ => {}
                }
                if nodes.len() > 2 {
                    out.push(format!(
                        "op {i}: gate spans {} nodes; only two-node gates are supported",
                        nodes.len()
                    ));
                }
                if nodes.len() == 2
                    && network.quantum_link_between(nodes[0], nodes[1]).is_none()
                {
                    out.push(format!(
                        "op {i}: no quantum link between {} and {}",
                        network.node_name(nodes[0]),
                        network.node_name(nodes[1])
                    ));
                }
            }
            DistOp::Measure { operand, cbit: _ } => {
                resolve(i, operand, &mut out);
            }
        }
    }
    out
}
