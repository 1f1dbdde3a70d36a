//! Compiler from a distributed circuit to per-QPU instruction streams.
//!
//! Local operations lower directly. Each two-qubit gate whose operands sit
//! on different QPUs expands into a scheme-specific fragment sequence:
//!
//! * `cat` — the control is entangled with a proxy comm qubit on the target
//!   node (one ebit, two classical bits); requires a gate with a controlled
//!   form (CNOT, CZ). The control never moves.
//! * `1tp` — the control is teleported to the target node, evacuated into a
//!   processing position, and the gate runs locally; the control stays at
//!   its new home (one ebit, two classical bits).
//! * `2tp` — teleport out, run the gate with the control still sitting in
//!   the destination comm qubit, teleport straight back to the original
//!   position (two ebits, four classical bits). Fast, but the data decoheres
//!   at the comm-qubit rate while it waits.
//! * `tp_safe` — like `2tp`, but every teleport immediately evacuates the
//!   arrived state into a processing position before anything else touches
//!   it, so data never idles in a comm qubit (two ebits, four classical
//!   bits, needs only one comm slot per side at a time).
//!
//! Streams are order-preserving projections of the global circuit order, so
//! matching SEND/RECV and ENTANGLE pairs line up without further scheduling.
//! Compilation is static: all branching at run time lives in `COND_APPLY`
//! predicates.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::circuit::{CircuitError, DistCircuit, DistOp, Operand, Scheme};
use crate::hardware::DqcNetwork;
use crate::qstate::{GateSpec, MeasBasis};

/// Index of a classical variable in one worker's single-assignment table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct VarId(pub usize);

impl fmt::Display for VarId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "m{}", self.0)
    }
}

/// Handle for an entangled-pair comm slot within one stream. The concrete
/// comm position is chosen at run time when the pair is delivered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct SlotToken(pub usize);

impl fmt::Display for SlotToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "$e{}", self.0)
    }
}

/// A qubit address within one QPU: either a fixed memory position or the
/// comm slot bound to an entanglement token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Addr {
    Mem(usize),
    Slot(SlotToken),
}

impl fmt::Display for Addr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Addr::Mem(p) => write!(f, "@{p}"),
            Addr::Slot(t) => write!(f, "{t}"),
        }
    }
}

/// One step of a per-QPU program.
#[derive(Debug, Clone, PartialEq)]
pub enum Instruction {
    /// Create fresh `|0>` qubits at the given positions (one gate slot total).
    Init { positions: Vec<usize> },
    /// Apply a unitary to local qubits.
    Apply { gate: GateSpec, addrs: Vec<Addr> },
    /// Request one half of an entangled pair over a quantum link; blocks
    /// until the pair is delivered into a free comm position.
    Entangle {
        link: usize,
        ebit_id: u64,
        token: SlotToken,
    },
    /// Measure a qubit; the result lands in classical variable `var`.
    /// `out`, when set, routes the reported bit to that global output index.
    Measure {
        addr: Addr,
        basis: MeasBasis,
        var: VarId,
        out: Option<usize>,
    },
    /// Send classical variables to another node (delivered after the
    /// classical link delay).
    Send {
        dst: usize,
        tag: u32,
        vars: Vec<VarId>,
    },
    /// Block until the matching `Send` arrives, binding its payload to
    /// fresh local variables.
    Recv {
        src: usize,
        tag: u32,
        vars: Vec<VarId>,
    },
    /// Apply `gate` iff the classical variable reads 1. Zero duration: the
    /// correction is a classically controlled physical gate.
    CondApply {
        gate: GateSpec,
        addr: Addr,
        var: VarId,
    },
    /// Discard the qubit at the address (if any) and release the position;
    /// for comm slots this returns the slot to the free pool.
    Free { addr: Addr },
    /// Move a qubit to another memory position on the same QPU (instant
    /// relabeling; the decoherence rate of the new position applies from
    /// this moment on).
    SwapInternal { from: Addr, to: usize },
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Instruction::Init { positions } => {
                write!(f, "INIT")?;
                for p in positions {
                    write!(f, " @{p}")?;
                }
                Ok(())
            }
            Instruction::Apply { gate, addrs } => {
                write!(f, "APPLY {gate}")?;
                for a in addrs {
                    write!(f, " {a}")?;
                }
                Ok(())
            }
            Instruction::Entangle {
                link,
                ebit_id,
                token,
            } => write!(f, "ENTANGLE link={link} ebit={ebit_id} -> {token}"),
            Instruction::Measure {
                addr,
                basis,
                var,
                out,
            } => {
                write!(f, "MEASURE {addr} {basis} -> {var}")?;
                if let Some(c) = out {
                    write!(f, " (c{c})")?;
                }
                Ok(())
            }
            Instruction::Send { dst, tag, vars } => {
                write!(f, "SEND node_{dst} tag={tag}")?;
                for v in vars {
                    write!(f, " {v}")?;
                }
                Ok(())
            }
            Instruction::Recv { src, tag, vars } => {
                write!(f, "RECV node_{src} tag={tag} ->")?;
                for v in vars {
                    write!(f, " {v}")?;
                }
                Ok(())
            }
            Instruction::CondApply { gate, addr, var } => {
                write!(f, "COND_APPLY {gate} {addr} if {var}")
            }
            Instruction::Free { addr } => write!(f, "FREE {addr}"),
            Instruction::SwapInternal { from, to } => {
                write!(f, "SWAP_INTERNAL {from} -> @{to}")
            }
        }
    }
}

/// The compiled program of one QPU.
#[derive(Debug, Clone)]
pub struct InstructionStream {
    /// Node index in the network.
    pub node: usize,
    pub instructions: Vec<Instruction>,
    /// Size of the classical variable table the worker needs.
    pub num_vars: usize,
    /// Number of entanglement tokens the worker needs to track.
    pub num_tokens: usize,
}

/// Full compilation result across the network.
#[derive(Debug, Clone)]
pub struct CompiledProgram {
    /// One stream per node, indexed by node.
    pub streams: Vec<InstructionStream>,
    /// Entangled pairs consumed.
    pub ebits: u64,
    /// Classical bits transmitted.
    pub cbits: usize,
    /// Number of global output bits written by MEASURE instructions.
    pub num_output_bits: usize,
    /// Where each original operand's qubit ends up after all teleports:
    /// `(node, pos)` as written in the circuit → final `(node, pos)`.
    pub final_locations: BTreeMap<(usize, usize), (usize, usize)>,
}

impl CompiledProgram {
    /// Render all streams in the debug assembly format, one block per node.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for stream in &self.streams {
            out.push_str(&format!("node_{}:\n", stream.node));
            for instr in &stream.instructions {
                out.push_str(&format!("  {instr}\n"));
            }
        }
        out
    }
}

/// Where a teleported qubit should land on the destination node.
enum Landing {
    /// Leave it in the comm slot (fast, decoheres at the comm rate).
    StayInComm,
    /// Evacuate into any free processing position.
    AnyFree,
    /// Evacuate into this specific (currently free) position.
    Exact(usize),
}

struct Compiler<'n> {
    network: &'n DqcNetwork,
    default_scheme: Scheme,
    streams: Vec<Vec<Instruction>>,
    next_var: Vec<usize>,
    next_token: Vec<usize>,
    next_tag: u32,
    next_ebit: u64,
    cbits: usize,
    /// Processing/data positions currently holding a logical qubit.
    occupied: Vec<BTreeSet<usize>>,
    /// Original operand -> current location.
    loc: BTreeMap<(usize, usize), (usize, usize)>,
    num_output_bits: usize,
}

impl Compiler<'_> {
    fn node_index(&self, operand: &Operand) -> Result<usize, CircuitError> {
        self.network.node_index(&operand.node).ok_or_else(|| {
            CircuitError::Invalid(format!("operand {operand} names an unknown node"))
        })
    }

    /// Current home of the qubit the operand was written against.
    fn resolve(&self, operand: &Operand) -> Result<(usize, usize), CircuitError> {
        let node = self.node_index(operand)?;
        self.loc.get(&(node, operand.pos)).copied().ok_or_else(|| {
            CircuitError::Invalid(format!("operand {operand} is used before INIT"))
        })
    }

    fn alloc_var(&mut self, node: usize) -> VarId {
        let v = VarId(self.next_var[node]);
        self.next_var[node] += 1;
        v
    }

    fn alloc_token(&mut self, node: usize) -> SlotToken {
        let t = SlotToken(self.next_token[node]);
        self.next_token[node] += 1;
        t
    }

    fn alloc_tag(&mut self) -> u32 {
        let t = self.next_tag;
        self.next_tag += 1;
        t
    }

    fn emit(&mut self, node: usize, instr: Instruction) {
        self.streams[node].push(instr);
    }

    /// Emit the ENTANGLE pair for a fresh ebit between two nodes.
    fn entangle_pair(
        &mut self,
        na: usize,
        nb: usize,
    ) -> Result<(SlotToken, SlotToken), CircuitError> {
        let link = self.network.quantum_link_between(na, nb).ok_or_else(|| {
            CircuitError::Invalid(format!(
                "no entangling connection between node_{na} and node_{nb}"
            ))
        })?;
        let ebit_id = self.next_ebit;
        self.next_ebit += 1;
        let ta = self.alloc_token(na);
        let tb = self.alloc_token(nb);
        self.emit(
            na,
            Instruction::Entangle {
                link,
                ebit_id,
                token: ta,
            },
        );
        self.emit(
            nb,
            Instruction::Entangle {
                link,
                ebit_id,
                token: tb,
            },
        );
        Ok((ta, tb))
    }

    fn check_classical_link(&self, na: usize, nb: usize) -> Result<(), CircuitError> {
        if !self.network.classical_link_between(na, nb) {
            return Err(CircuitError::Invalid(format!(
                "no classical connection between node_{na} and node_{nb} \
                 to carry measurement results"
            )));
        }
        Ok(())
    }

    fn find_free_processing(&self, node: usize) -> Result<usize, CircuitError> {
        let cfg = &self.network.qpu_config;
        (cfg.num_comm_qubits..cfg.num_positions)
            .find(|p| !self.occupied[node].contains(p))
            .ok_or_else(|| {
                CircuitError::Invalid(format!(
                    "node_{node} has no free processing position to receive a \
                     teleported qubit"
                ))
            })
    }

    /// Standard teledata: move the qubit at `src_addr` on `src_node` to
    /// `dst_node`. Returns its new address there. Landing decides whether
    /// the state is evacuated out of the destination comm slot.
    fn teleport(
        &mut self,
        src_node: usize,
        src_addr: Addr,
        dst_node: usize,
        landing: Landing,
    ) -> Result<Addr, CircuitError> {
        self.check_classical_link(src_node, dst_node)?;
        let (ta, tb) = self.entangle_pair(src_node, dst_node)?;
        let m_x = self.alloc_var(src_node);
        let m_z = self.alloc_var(src_node);
        self.emit(
            src_node,
            Instruction::Apply {
                gate: GateSpec::Cnot,
                addrs: vec![src_addr, Addr::Slot(ta)],
            },
        );
        self.emit(
            src_node,
            Instruction::Apply {
                gate: GateSpec::H,
                addrs: vec![src_addr],
            },
        );
        self.emit(
            src_node,
            Instruction::Measure {
                addr: Addr::Slot(ta),
                basis: MeasBasis::Z,
                var: m_x,
                out: None,
            },
        );
        self.emit(
            src_node,
            Instruction::Measure {
                addr: src_addr,
                basis: MeasBasis::Z,
                var: m_z,
                out: None,
            },
        );
        self.emit(
            src_node,
            Instruction::Free {
                addr: Addr::Slot(ta),
            },
        );
        self.emit(src_node, Instruction::Free { addr: src_addr });
        if let Addr::Mem(p) = src_addr {
            self.occupied[src_node].remove(&p);
        }
        let tag = self.alloc_tag();
        self.emit(
            src_node,
            Instruction::Send {
                dst: dst_node,
                tag,
                vars: vec![m_x, m_z],
            },
        );
        self.cbits += 2;
        let r_x = self.alloc_var(dst_node);
        let r_z = self.alloc_var(dst_node);
        self.emit(
            dst_node,
            Instruction::Recv {
                src: src_node,
                tag,
                vars: vec![r_x, r_z],
            },
        );
        self.emit(
            dst_node,
            Instruction::CondApply {
                gate: GateSpec::X,
                addr: Addr::Slot(tb),
                var: r_x,
            },
        );
        self.emit(
            dst_node,
            Instruction::CondApply {
                gate: GateSpec::Z,
                addr: Addr::Slot(tb),
                var: r_z,
            },
        );
        match landing {
            Landing::StayInComm => Ok(Addr::Slot(tb)),
            Landing::AnyFree | Landing::Exact(_) => {
                let p = match landing {
                    Landing::Exact(p) => {
                        if self.occupied[dst_node].contains(&p) {
                            return Err(CircuitError::Invalid(format!(
                                "teleport return position @{p} on node_{dst_node} is \
                                 occupied"
                            )));
                        }
                        p
                    }
                    _ => self.find_free_processing(dst_node)?,
                };
                self.emit(
                    dst_node,
                    Instruction::SwapInternal {
                        from: Addr::Slot(tb),
                        to: p,
                    },
                );
                self.emit(
                    dst_node,
                    Instruction::Free {
                        addr: Addr::Slot(tb),
                    },
                );
                self.occupied[dst_node].insert(p);
                Ok(Addr::Mem(p))
            }
        }
    }

    /// The cat scheme: entangle the control with a proxy on the target node
    /// and uncompute the proxy with an X-basis (H + Z) measurement.
    fn expand_cat(
        &mut self,
        gate: &GateSpec,
        ctrl: (usize, usize),
        tgt: (usize, usize),
    ) -> Result<(), CircuitError> {
        let Some(proxy_gate) = gate.with_proxy_control() else {
            return Err(CircuitError::Invalid(format!(
                "scheme cat cannot distribute gate {gate}: it has no controlled \
                 form; use a teleportation scheme (1tp, 2tp, tp_safe) instead"
            )));
        };
        let (na, pa) = ctrl;
        let (nb, pb) = tgt;
        self.check_classical_link(na, nb)?;
        let (ta, tb) = self.entangle_pair(na, nb)?;
        let m1a = self.alloc_var(na);
        self.emit(
            na,
            Instruction::Apply {
                gate: GateSpec::Cnot,
                addrs: vec![Addr::Mem(pa), Addr::Slot(ta)],
            },
        );
        self.emit(
            na,
            Instruction::Measure {
                addr: Addr::Slot(ta),
                basis: MeasBasis::Z,
                var: m1a,
                out: None,
            },
        );
        self.emit(
            na,
            Instruction::Free {
                addr: Addr::Slot(ta),
            },
        );
        let tag1 = self.alloc_tag();
        self.emit(
            na,
            Instruction::Send {
                dst: nb,
                tag: tag1,
                vars: vec![m1a],
            },
        );
        self.cbits += 1;
        let m1b = self.alloc_var(nb);
        self.emit(
            nb,
            Instruction::Recv {
                src: na,
                tag: tag1,
                vars: vec![m1b],
            },
        );
        self.emit(
            nb,
            Instruction::CondApply {
                gate: GateSpec::X,
                addr: Addr::Slot(tb),
                var: m1b,
            },
        );
        self.emit(
            nb,
            Instruction::Apply {
                gate: proxy_gate,
                addrs: vec![Addr::Slot(tb), Addr::Mem(pb)],
            },
        );
        self.emit(
            nb,
            Instruction::Apply {
                gate: GateSpec::H,
                addrs: vec![Addr::Slot(tb)],
            },
        );
        let m2b = self.alloc_var(nb);
        self.emit(
            nb,
            Instruction::Measure {
                addr: Addr::Slot(tb),
                basis: MeasBasis::Z,
                var: m2b,
                out: None,
            },
        );
        self.emit(
            nb,
            Instruction::Free {
                addr: Addr::Slot(tb),
            },
        );
        let tag2 = self.alloc_tag();
        self.emit(
            nb,
            Instruction::Send {
                dst: na,
                tag: tag2,
                vars: vec![m2b],
            },
        );
        self.cbits += 1;
        let m2a = self.alloc_var(na);
        self.emit(
            na,
            Instruction::Recv {
                src: nb,
                tag: tag2,
                vars: vec![m2a],
            },
        );
        self.emit(
            na,
            Instruction::CondApply {
                gate: GateSpec::Z,
                addr: Addr::Mem(pa),
                var: m2a,
            },
        );
        Ok(())
    }

    fn compile_gate(
        &mut self,
        gate: &GateSpec,
        operands: &[Operand],
        scheme: Option<Scheme>,
    ) -> Result<(), CircuitError> {
        let resolved: Vec<(usize, usize)> = operands
            .iter()
            .map(|op| self.resolve(op))
            .collect::<Result<_, _>>()?;
        match resolved.as_slice() {
            [(node, pos)] => {
                let (node, pos) = (*node, *pos);
                self.emit(
                    node,
                    Instruction::Apply {
                        gate: *gate,
                        addrs: vec![Addr::Mem(pos)],
                    },
                );
                Ok(())
            }
            [(na, pa), (nb, pb)] if na == nb => {
                if pa == pb {
                    return Err(CircuitError::Invalid(format!(
                        "gate {gate} addresses position @{pa} on node_{na} twice"
                    )));
                }
                let (node, pa, pb) = (*na, *pa, *pb);
                self.emit(
                    node,
                    Instruction::Apply {
                        gate: *gate,
                        addrs: vec![Addr::Mem(pa), Addr::Mem(pb)],
                    },
                );
                Ok(())
            }
            [ctrl, tgt] => {
                let (ctrl, tgt) = (*ctrl, *tgt);
                let scheme = scheme.unwrap_or(self.default_scheme);
                let orig_ctrl = {
                    let node = self.node_index(&operands[0])?;
                    (node, operands[0].pos)
                };
                match scheme {
                    Scheme::Cat => self.expand_cat(gate, ctrl, tgt)?,
                    Scheme::Tp1 => {
                        let new_addr =
                            self.teleport(ctrl.0, Addr::Mem(ctrl.1), tgt.0, Landing::AnyFree)?;
                        self.emit(
                            tgt.0,
                            Instruction::Apply {
                                gate: *gate,
                                addrs: vec![new_addr, Addr::Mem(tgt.1)],
                            },
                        );
                        let Addr::Mem(p) = new_addr else {
                            unreachable!("evacuating teleport lands in memory")
                        };
                        self.loc.insert(orig_ctrl, (tgt.0, p));
                    }
                    Scheme::Tp2 => {
                        let there = self.teleport(
                            ctrl.0,
                            Addr::Mem(ctrl.1),
                            tgt.0,
                            Landing::StayInComm,
                        )?;
                        self.emit(
                            tgt.0,
                            Instruction::Apply {
                                gate: *gate,
                                addrs: vec![there, Addr::Mem(tgt.1)],
                            },
                        );
                        self.teleport(tgt.0, there, ctrl.0, Landing::Exact(ctrl.1))?;
                    }
                    Scheme::TpSafe => {
                        let there = self.teleport(
                            ctrl.0,
                            Addr::Mem(ctrl.1),
                            tgt.0,
                            Landing::AnyFree,
                        )?;
                        self.emit(
                            tgt.0,
                            Instruction::Apply {
                                gate: *gate,
                                addrs: vec![there, Addr::Mem(tgt.1)],
                            },
                        );
                        self.teleport(tgt.0, there, ctrl.0, Landing::Exact(ctrl.1))?;
                    }
                }
                Ok(())
            }
            _ => Err(CircuitError::Invalid(format!(
                "gate {gate} has {} operands; only 1- and 2-qubit gates are \
                 supported",
                resolved.len()
            ))),
        }
    }

    fn compile_init(&mut self, operands: &[Operand]) -> Result<(), CircuitError> {
        let mut by_node: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for op in operands {
            let node = self.node_index(op)?;
            if op.pos >= self.network.qpu_config.num_positions {
                return Err(CircuitError::Invalid(format!(
                    "INIT position {op} is out of range (QPU has {} positions)",
                    self.network.qpu_config.num_positions
                )));
            }
            if self.loc.contains_key(&(node, op.pos)) {
                return Err(CircuitError::Invalid(format!(
                    "operand {op} is INITed twice"
                )));
            }
            self.loc.insert((node, op.pos), (node, op.pos));
            self.occupied[node].insert(op.pos);
            by_node.entry(node).or_default().push(op.pos);
        }
        for (node, positions) in by_node {
            self.emit(node, Instruction::Init { positions });
        }
        Ok(())
    }
}

/// Verify stream-level invariants: every entanglement token is freed exactly
/// once, nothing touches a token outside its live range, and the number of
/// simultaneously live tokens never exceeds the QPU's comm capacity.
fn check_streams(
    streams: &[Vec<Instruction>],
    network: &DqcNetwork,
) -> Result<(), CircuitError> {
    let capacity = network.qpu_config.num_comm_qubits;
    for (node, stream) in streams.iter().enumerate() {
        let mut live: BTreeSet<usize> = BTreeSet::new();
        let mut freed: BTreeSet<usize> = BTreeSet::new();
        let touch = |t: &SlotToken, live: &BTreeSet<usize>| -> Result<(), CircuitError> {
            if !live.contains(&t.0) {
                return Err(CircuitError::Invalid(format!(
                    "node_{node}: instruction touches entanglement slot {t} outside \
                     its live range"
                )));
            }
            Ok(())
        };
        for instr in stream {
            match instr {
                Instruction::Entangle { token, .. } => {
                    live.insert(token.0);
                    if live.len() > capacity {
                        return Err(CircuitError::Invalid(format!(
                            "node_{node} needs {} simultaneous entangled-pair slots \
                             but the QPU has only {capacity} comm qubits",
                            live.len()
                        )));
                    }
                }
                Instruction::Free {
                    addr: Addr::Slot(t),
                } => {
                    touch(t, &live)?;
                    live.remove(&t.0);
                    freed.insert(t.0);
                }
                Instruction::Apply { addrs, .. } => {
                    for a in addrs {
                        if let Addr::Slot(t) = a {
                            touch(t, &live)?;
                        }
                    }
                }
                Instruction::Measure {
                    addr: Addr::Slot(t),
                    ..
                }
                | Instruction::CondApply {
                    addr: Addr::Slot(t),
                    ..
                }
                | Instruction::SwapInternal {
                    from: Addr::Slot(t),
                    ..
                } => touch(t, &live)?,
                _ => {}
            }
        }
        if let Some(t) = live.iter().next() {
            return Err(CircuitError::Invalid(format!(
                "node_{node}: entanglement slot $e{t} is never freed"
            )));
        }
        let _ = freed;
    }
    Ok(())
}

/// Compile a distributed circuit against a network. Cross-node gates with
/// no explicit scheme use `default_scheme`.
pub fn compile(
    circuit: &DistCircuit,
    network: &DqcNetwork,
    default_scheme: Scheme,
) -> Result<CompiledProgram, CircuitError> {
    let n = network.num_qpus();
    let mut c = Compiler {
        network,
        default_scheme,
        streams: vec![Vec::new(); n],
        next_var: vec![0; n],
        next_token: vec![0; n],
        next_tag: 0,
        next_ebit: 0,
        cbits: 0,
        occupied: vec![BTreeSet::new(); n],
        loc: BTreeMap::new(),
        num_output_bits: 0,
    };
    for op in &circuit.ops {
        match op {
            DistOp::Init { operands } => c.compile_init(operands)?,
            DistOp::Gate {
                gate,
                operands,
                scheme,
            } => c.compile_gate(gate, operands, *scheme)?,
            DistOp::Measure { operand, cbit } => {
                let (node, pos) = c.resolve(operand)?;
                let var = c.alloc_var(node);
                c.emit(
                    node,
                    Instruction::Measure {
                        addr: Addr::Mem(pos),
                        basis: MeasBasis::Z,
                        var,
                        out: Some(*cbit),
                    },
                );
                c.num_output_bits = c.num_output_bits.max(*cbit + 1);
            }
        }
    }
    check_streams(&c.streams, network)?;
    let streams = c
        .streams
        .into_iter()
        .enumerate()
        .map(|(node, instructions)| InstructionStream {
            node,
            instructions,
            num_vars: c.next_var[node],
            num_tokens: c.next_token[node],
        })
        .collect();
    Ok(CompiledProgram {
        streams,
        ebits: c.next_ebit,
        cbits: c.cbits,
        num_output_bits: c.num_output_bits,
        final_locations: c.loc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::parse_distributed;
    use crate::hardware::{build_dqc, ConnectionConfig, QpuConfig};
    use crate::qstate::PairSource;

    fn network(num_comm: usize) -> DqcNetwork {
        let qpu = QpuConfig {
            num_positions: 6,
            num_comm_qubits: num_comm,
            single_qubit_gate_time: 135e3,
            two_qubit_gate_time: 600e3,
            measurement_time: 6e6,
            single_qubit_gate_error_prob: 0.0,
            p_depolar_error_cnot: 0.0,
            meas_error_prob: 0.0,
            comm_qubit_depolar_rate: 0.0,
            proc_qubit_depolar_rate: 0.0,
        };
        let conn = ConnectionConfig {
            delay_ns: 1e9 / 182.0,
            source: PairSource::Werner(1.0),
        };
        build_dqc(
            3,
            &[(0, 1), (1, 2)],
            &[(0, 1), (0, 2), (1, 2)],
            qpu,
            conn,
            0.0,
        )
        .unwrap()
    }

    fn remote_cnot(scheme: &str) -> DistCircuit {
        parse_distributed(&format!(
            "INIT 2@node_0\nINIT 2@node_1\nH 2@node_0\nCNOT 2@node_0 2@node_1 {scheme}\n"
        ))
        .unwrap()
    }

    #[test]
    fn cat_expansion_matches_the_reference_stream_shape() {
        let net = network(2);
        let circuit = parse_distributed(
            "INIT 2@node_0\nINIT 2@node_1\nINIT 2@node_2\n\
             H 2@node_0\nCNOT 2@node_0 2@node_1 cat\n",
        )
        .unwrap();
        let prog = compile(&circuit, &net, Scheme::Cat).unwrap();
        let kinds = |node: usize| -> Vec<&'static str> {
            prog.streams[node]
                .instructions
                .iter()
                .map(|i| match i {
                    Instruction::Init { .. } => "INIT",
                    Instruction::Apply { .. } => "APPLY",
                    Instruction::Entangle { .. } => "ENTANGLE",
                    Instruction::Measure { .. } => "MEASURE",
                    Instruction::Send { .. } => "SEND",
                    Instruction::Recv { .. } => "RECV",
                    Instruction::CondApply { .. } => "COND_APPLY",
                    Instruction::Free { .. } => "FREE",
                    Instruction::SwapInternal { .. } => "SWAP_INTERNAL",
                })
                .collect()
        };
        assert_eq!(
            kinds(0),
            vec![
                "INIT", "APPLY", "ENTANGLE", "APPLY", "MEASURE", "FREE", "SEND", "RECV",
                "COND_APPLY"
            ]
        );
        assert_eq!(
            kinds(1),
            vec![
                "INIT", "ENTANGLE", "RECV", "COND_APPLY", "APPLY", "APPLY", "MEASURE",
                "FREE", "SEND"
            ]
        );
        assert_eq!(kinds(2), vec!["INIT"]);
        assert_eq!(prog.ebits, 1);
        assert_eq!(prog.cbits, 2);
    }

    #[test]
    fn resource_counts_per_scheme() {
        let net = network(2);
        for (scheme, ebits, cbits) in [
            ("cat", 1, 2),
            ("1tp", 1, 2),
            ("2tp", 2, 4),
            ("tp_safe", 2, 4),
        ] {
            let prog = compile(&remote_cnot(scheme), &net, Scheme::Cat).unwrap();
            assert_eq!(prog.ebits, ebits, "{scheme} ebits");
            assert_eq!(prog.cbits, cbits, "{scheme} cbits");
        }
    }

    #[test]
    fn one_way_teleport_relocates_the_control() {
        let net = network(2);
        let prog = compile(&remote_cnot("1tp"), &net, Scheme::Cat).unwrap();
        let home = prog.final_locations[&(0, 2)];
        assert_eq!(home.0, 1);
        assert!(home.1 >= net.qpu_config.num_comm_qubits);
        // Round-trip schemes restore the original location.
        for scheme in ["cat", "2tp", "tp_safe"] {
            let prog = compile(&remote_cnot(scheme), &net, Scheme::Cat).unwrap();
            assert_eq!(prog.final_locations[&(0, 2)], (0, 2), "{scheme}");
        }
    }

    #[test]
    fn cat_rejects_gates_without_a_controlled_form() {
        let net = network(2);
        let circuit = parse_distributed(
            "INIT 2@node_0\nINIT 2@node_1\nSWAP 2@node_0 2@node_1 cat\n",
        )
        .unwrap();
        let err = compile(&circuit, &net, Scheme::Cat).unwrap_err();
        assert!(
            err.to_string().contains("no controlled form"),
            "got: {err}"
        );
    }

    #[test]
    fn missing_quantum_link_is_reported() {
        let net = network(2);
        let circuit = parse_distributed(
            "INIT 2@node_0\nINIT 2@node_2\nCNOT 2@node_0 2@node_2 cat\n",
        )
        .unwrap();
        let err = compile(&circuit, &net, Scheme::Cat).unwrap_err();
        assert!(
            err.to_string().contains("node_0") && err.to_string().contains("node_2"),
            "got: {err}"
        );
    }

    #[test]
    fn round_trip_teleport_needs_two_comm_slots_at_the_target() {
        let err = compile(&remote_cnot("2tp"), &network(1), Scheme::Cat).unwrap_err();
        assert!(err.to_string().contains("comm qubits"), "got: {err}");
        // The safe variant evacuates before re-entangling, so one slot is
        // enough.
        compile(&remote_cnot("tp_safe"), &network(1), Scheme::Cat).unwrap();
    }

    #[test]
    fn local_gates_lower_directly_even_after_relocation() {
        let net = network(2);
        let circuit = parse_distributed(
            "INIT 2@node_0 3@node_0\nINIT 2@node_1\n\
             CNOT 2@node_0 2@node_1 1tp\nCNOT 2@node_0 2@node_1\n",
        )
        .unwrap();
        let prog = compile(&circuit, &net, Scheme::Cat).unwrap();
        // After the 1tp the control lives on node_1, so the second CNOT is
        // local: exactly one ebit total.
        assert_eq!(prog.ebits, 1);
        let last = prog.streams[1].instructions.last().unwrap();
        match last {
            Instruction::Apply { gate, addrs } => {
                assert_eq!(*gate, GateSpec::Cnot);
                assert!(matches!(addrs[0], Addr::Mem(_)));
                assert_eq!(addrs[1], Addr::Mem(2));
            }
            other => panic!("expected local APPLY, got {other}"),
        }
    }

    #[test]
    fn use_before_init_is_an_error() {
        let net = network(2);
        let circuit = parse_distributed("H 2@node_0\n").unwrap();
        let err = compile(&circuit, &net, Scheme::Cat).unwrap_err();
        assert!(err.to_string().contains("before INIT"), "got: {err}");
    }

    #[test]
    fn measure_routes_to_output_bits() {
        let net = network(2);
        let circuit = parse_distributed(
            "INIT 2@node_0\nINIT 2@node_1\nMEASURE 2@node_0 -> c1\nMEASURE 2@node_1 -> c0\n",
        )
        .unwrap();
        let prog = compile(&circuit, &net, Scheme::Cat).unwrap();
        assert_eq!(prog.num_output_bits, 2);
        let out0 = prog.streams[0]
            .instructions
            .iter()
            .find_map(|i| match i {
                Instruction::Measure { out, .. } => *out,
                _ => None,
            })
            .unwrap();
        assert_eq!(out0, 1);
    }

    #[test]
    fn empty_circuit_compiles_to_empty_streams() {
        let net = network(2);
        let prog = compile(&DistCircuit { ops: vec![] }, &net, Scheme::Cat).unwrap();
        assert!(prog.streams.iter().all(|s| s.instructions.is_empty()));
        assert_eq!(prog.ebits, 0);
    }
}
