//! Execution of compiled instruction streams on the event kernel.
//!
//! One worker task per QPU steps through its stream in order. Timed
//! instructions (INIT, APPLY, MEASURE) charge pending idle decoherence to
//! their operands when they start, occupy the QPU for their duration, and
//! apply their state change at the end instant. Zero-duration instructions
//! (SEND, RECV, COND_APPLY, FREE, SWAP_INTERNAL) take effect immediately.
//! ENTANGLE blocks its worker from the rendezvous until the pair is
//! delivered, `connection delay` nanoseconds after both endpoint requests
//! are present and comm slots are reserved on both sides.
//!
//! Measurement results travel as [`ClassicalBit`]s which carry, besides the
//! reported bit, the true projected outcome and the readout flip
//! probability. In the density-matrix formalism a conditional correction
//! uses those to apply the exact readout-error mixture (the correction fires
//! with the probability that the reported bit read 1), which keeps a fixed
//! measurement-outcome branch fully deterministic — no sampled readout flip
//! ever steers the evolution. In the ket formalism the correction simply
//! follows the sampled reported bit.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;

use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::compiler::{Addr, CompiledProgram, Instruction, InstructionStream, SlotToken, VarId};
use crate::hardware::{BusyInterval, DqcNetwork, HardwareError, Qpu};
use crate::kernel::{
    DeadlockInfo, EventHandler, EventId, Kernel, RunError, ScheduleError, Scheduler, SimTime,
    Task, TaskStatus,
};
use crate::qstate::{Formalism, QubitId, StateError};
use crate::{Amplitude, StateStore};

/// A measurement result in flight or in a worker's variable table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassicalBit {
    /// What the (possibly faulty) readout reported.
    pub reported: u8,
    /// The true projected outcome.
    pub outcome: u8,
    /// Probability that `reported` differs from `outcome`.
    pub flip_prob: f64,
}

/// Event payloads of the DQC runtime.
#[derive(Debug, Clone)]
pub enum Ev {
    /// A timed instruction's end instant; wakes the issuing worker.
    InstrDone { node: usize },
    /// A classical message reaches its destination mailbox.
    MsgArrive {
        dst: usize,
        src: usize,
        tag: u32,
        bits: Vec<ClassicalBit>,
    },
    /// An entangled pair is delivered to both endpoints of its link.
    EbitReady { ebit_id: u64 },
}

/// Runtime failure, carrying enough context to locate the instruction.
#[derive(Debug, Error)]
pub enum RtError {
    #[error("{0}")]
    Deadlock(DeadlockInfo),
    #[error("node_{node} pc={pc} `{instr}`: {source}")]
    Instr {
        node: usize,
        pc: usize,
        instr: String,
        #[source]
        source: StateError,
    },
    #[error("node_{node} pc={pc} `{instr}`: {message}")]
    Invalid {
        node: usize,
        pc: usize,
        instr: String,
        message: String,
    },
    #[error("delivering entangled pair {ebit_id}: {source}")]
    Ebit {
        ebit_id: u64,
        #[source]
        source: StateError,
    },
    #[error(transparent)]
    Hardware(#[from] HardwareError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("fidelity collector: {0}")]
    Collector(String),
}

/// One entanglement request pair being brokered.
#[derive(Debug)]
struct EbitRequest {
    link: usize,
    a_present: bool,
    b_present: bool,
    dispatched: bool,
    /// Comm positions reserved at dispatch: (position at link.a, at link.b).
    reserved: Option<(usize, usize)>,
}

/// Shared simulation state: quantum store, per-node hardware, mailboxes and
/// the entanglement broker.
pub struct World {
    pub store: StateStore,
    pub qpus: Vec<Qpu>,
    network: DqcNetwork,
    mailbox: BTreeMap<(usize, usize, u32), VecDeque<Vec<ClassicalBit>>>,
    requests: BTreeMap<u64, EbitRequest>,
    /// ebit id -> delivered comm positions (at link.a, at link.b).
    delivered: BTreeMap<u64, (usize, usize)>,
    /// Forced measurement outcomes keyed by (node, variable index).
    forced: BTreeMap<(usize, usize), u8>,
    /// Product of the Born probabilities of every projected outcome taken in
    /// this run; the weight of the realized measurement branch.
    pub branch_prob: f64,
    /// Reported bits of MEASURE instructions with an output index.
    pub output_bits: Vec<Option<u8>>,
    trace_enabled: bool,
    pub trace: Vec<String>,
}

impl World {
    fn new(
        network: &DqcNetwork,
        formalism: Formalism,
        num_output_bits: usize,
        forced: BTreeMap<(usize, usize), u8>,
        trace_enabled: bool,
    ) -> Self {
        let qpus = (0..network.num_qpus())
            .map(|i| Qpu::new(network.node_name(i).to_string(), network.qpu_config.clone()))
            .collect();
        World {
            store: StateStore::new(formalism),
            qpus,
            network: network.clone(),
            mailbox: BTreeMap::new(),
            requests: BTreeMap::new(),
            delivered: BTreeMap::new(),
            forced,
            branch_prob: 1.0,
            output_bits: vec![None; num_output_bits],
            trace_enabled,
            trace: Vec::new(),
        }
    }

    fn trace_line(&mut self, now: SimTime, node: usize, instr: &Instruction) {
        if self.trace_enabled {
            let name = self.network.node_name(node);
            self.trace.push(format!("t={} node={} {}", now.ns(), name, instr));
        }
    }

    /// Register one side of an entanglement request and try to dispatch.
    fn register_ebit_side(
        &mut self,
        link: usize,
        ebit_id: u64,
        node: usize,
        sched: &mut Scheduler<Ev>,
    ) -> Result<(), RtError> {
        let spec = &self.network.quantum_links[link];
        let req = self.requests.entry(ebit_id).or_insert(EbitRequest {
            link,
            a_present: false,
            b_present: false,
            dispatched: false,
            reserved: None,
        });
        if node == spec.a {
            req.a_present = true;
        } else {
            req.b_present = true;
        }
        self.try_dispatch(sched)
    }

    /// Dispatch every request whose two sides are present and whose two
    /// endpoints have a free comm slot, in ebit (program) order. Delivery
    /// fires one connection delay later.
    fn try_dispatch(&mut self, sched: &mut Scheduler<Ev>) -> Result<(), RtError> {
        let ready: Vec<u64> = self
            .requests
            .iter()
            .filter(|(_, r)| !r.dispatched && r.a_present && r.b_present)
            .map(|(id, _)| *id)
            .collect();
        for id in ready {
            let link = self.requests[&id].link;
            let spec = &self.network.quantum_links[link];
            let (na, nb) = (spec.a, spec.b);
            if self.qpus[na].free_comm_count() == 0 || self.qpus[nb].free_comm_count() == 0 {
                continue;
            }
            let pa = self.qpus[na].reserve_comm().expect("checked free");
            let pb = self.qpus[nb].reserve_comm().expect("checked free");
            let delay = self.network.quantum_links[link].conn.delay_ns;
            let req = self.requests.get_mut(&id).expect("request exists");
            req.dispatched = true;
            req.reserved = Some((pa, pb));
            sched.schedule(delay, Ev::EbitReady { ebit_id: id })?;
        }
        Ok(())
    }

    /// Create the pair state and place both halves into their reserved comm
    /// positions; workers observe this via `delivered`.
    fn deliver_ebit(
        &mut self,
        ebit_id: u64,
        now: SimTime,
        sched: &mut Scheduler<Ev>,
    ) -> Result<(), RtError> {
        let req = self
            .requests
            .get(&ebit_id)
            .expect("delivery only follows dispatch");
        let (pa, pb) = req.reserved.expect("dispatched request has positions");
        let spec = self.network.quantum_links[req.link].clone();
        let rate_a = self.qpus[spec.a].rate_for_position(pa);
        let rate_b = self.qpus[spec.b].rate_for_position(pb);
        let (qa, qb) = self
            .store
            .create_pair(&spec.conn.source, (rate_a, rate_b), now, sched.rng())
            .map_err(|source| RtError::Ebit { ebit_id, source })?;
        self.qpus[spec.a].place_qubit(pa, qa);
        self.qpus[spec.b].place_qubit(pb, qb);
        self.delivered.insert(ebit_id, (pa, pb));
        Ok(())
    }

    /// The delivered comm position of an ebit on one endpoint, if ready.
    fn delivered_pos(&self, ebit_id: u64, node: usize) -> Option<usize> {
        let req = self.requests.get(&ebit_id)?;
        let spec = &self.network.quantum_links[req.link];
        let (pa, pb) = self.delivered.get(&ebit_id).copied()?;
        Some(if node == spec.a { pa } else { pb })
    }

    /// Total comm reservations still held; zero once all streams completed
    /// cleanly.
    pub fn reserved_comm_total(&self) -> usize {
        self.qpus.iter().map(|q| q.reserved_comm_count()).sum()
    }
}

impl EventHandler<Ev, RtError> for World {
    fn handle_event(
        &mut self,
        now: SimTime,
        _id: EventId,
        payload: Ev,
        sched: &mut Scheduler<Ev>,
    ) -> Result<(), RtError> {
        match payload {
            // Pure wake-up: the issuing worker re-checks its deadline.
            Ev::InstrDone { .. } => Ok(()),
            Ev::MsgArrive {
                dst,
                src,
                tag,
                bits,
            } => {
                self.mailbox
                    .entry((dst, src, tag))
                    .or_default()
                    .push_back(bits);
                Ok(())
            }
            Ev::EbitReady { ebit_id } => self.deliver_ebit(ebit_id, now, sched),
        }
    }
}

enum Phase {
    Ready,
    /// A timed instruction is in flight until the given instant.
    Waiting { until: SimTime },
}

/// One QPU's interpreter task.
struct Worker {
    node: usize,
    instructions: Vec<Instruction>,
    pc: usize,
    phase: Phase,
    vars: Vec<Option<ClassicalBit>>,
    token_pos: Vec<Option<usize>>,
    registered: Vec<bool>,
}

impl Worker {
    fn new(stream: &InstructionStream) -> Self {
        Worker {
            node: stream.node,
            instructions: stream.instructions.clone(),
            pc: 0,
            phase: Phase::Ready,
            vars: vec![None; stream.num_vars],
            token_pos: vec![None; stream.num_tokens],
            registered: vec![false; stream.num_tokens],
        }
    }

    fn err_invalid(&self, message: impl Into<String>) -> RtError {
        RtError::Invalid {
            node: self.node,
            pc: self.pc,
            instr: self.instructions[self.pc].to_string(),
            message: message.into(),
        }
    }

    fn err_state(&self, source: StateError) -> RtError {
        RtError::Instr {
            node: self.node,
            pc: self.pc,
            instr: self.instructions[self.pc].to_string(),
            source,
        }
    }

    /// Memory position behind an address.
    fn position(&self, addr: &Addr) -> Result<usize, RtError> {
        match addr {
            Addr::Mem(p) => Ok(*p),
            Addr::Slot(SlotToken(t)) => self.token_pos[*t]
                .ok_or_else(|| self.err_invalid(format!("slot $e{t} is not bound to a pair"))),
        }
    }

    /// Live qubit behind an address.
    fn qubit(&self, world: &World, addr: &Addr) -> Result<QubitId, RtError> {
        let pos = self.position(addr)?;
        world.qpus[self.node]
            .qubit_at(pos)
            .ok_or_else(|| self.err_invalid(format!("no qubit at position @{pos}")))
    }

    fn var(&self, v: VarId) -> Result<ClassicalBit, RtError> {
        self.vars[v.0].ok_or_else(|| self.err_invalid(format!("variable {v} was never written")))
    }

    /// Instruction busy time in nanoseconds; `None` marks the untimed kinds.
    fn duration_of(&self, world: &World, instr: &Instruction) -> Option<f64> {
        let cfg = &world.network.qpu_config;
        match instr {
            Instruction::Init { .. } => Some(cfg.single_qubit_gate_time),
            Instruction::Apply { addrs, .. } => Some(cfg.gate_time(addrs.len())),
            Instruction::Measure { .. } => Some(cfg.measurement_time),
            _ => None,
        }
    }

    /// Begin the instruction at `pc`. Returns `Some(reason)` when blocked.
    fn start(
        &mut self,
        world: &mut World,
        sched: &mut Scheduler<Ev>,
    ) -> Result<Option<String>, RtError> {
        let instr = self.instructions[self.pc].clone();
        let now = sched.now();
        if let Some(duration) = self.duration_of(world, &instr) {
            // Charge idle decoherence to the operands at the start instant;
            // the state change itself lands at the end instant.
            for addr in instr_operands(&instr) {
                let q = self.qubit(world, &addr)?;
                world
                    .store
                    .catch_up(q, now, sched.rng())
                    .map_err(|e| self.err_state(e))?;
            }
            let until = now.plus_ns(duration);
            sched.schedule(duration, Ev::InstrDone { node: self.node })?;
            world.qpus[self.node].record_busy(now, until, instr.to_string());
            self.phase = Phase::Waiting { until };
            return Ok(None);
        }
        match &instr {
            Instruction::Entangle {
                link,
                ebit_id,
                token,
            } => {
                if !self.registered[token.0] {
                    self.registered[token.0] = true;
                    world.register_ebit_side(*link, *ebit_id, self.node, sched)?;
                }
                match world.delivered_pos(*ebit_id, self.node) {
                    Some(pos) => {
                        self.token_pos[token.0] = Some(pos);
                        world.trace_line(now, self.node, &instr);
                        self.pc += 1;
                        Ok(None)
                    }
                    None => Ok(Some(format!(
                        "delivery of entangled pair {ebit_id} on link {link}"
                    ))),
                }
            }
            Instruction::Send { dst, tag, vars } => {
                let bits: Vec<ClassicalBit> =
                    vars.iter().map(|v| self.var(*v)).collect::<Result<_, _>>()?;
                sched.schedule(
                    world.network.classical_delay_ns,
                    Ev::MsgArrive {
                        dst: *dst,
                        src: self.node,
                        tag: *tag,
                        bits,
                    },
                )?;
                world.trace_line(now, self.node, &instr);
                self.pc += 1;
                Ok(None)
            }
            Instruction::Recv { src, tag, vars } => {
                let key = (self.node, *src, *tag);
                let Some(queue) = world.mailbox.get_mut(&key) else {
                    return Ok(Some(format!("message tag={tag} from node_{src}")));
                };
                let Some(bits) = queue.pop_front() else {
                    return Ok(Some(format!("message tag={tag} from node_{src}")));
                };
                if bits.len() != vars.len() {
                    return Err(self.err_invalid(format!(
                        "message tag={tag} carries {} bit(s), expected {}",
                        bits.len(),
                        vars.len()
                    )));
                }
                for (v, bit) in vars.iter().zip(bits) {
                    self.vars[v.0] = Some(bit);
                }
                world.trace_line(now, self.node, &instr);
                self.pc += 1;
                Ok(None)
            }
            Instruction::CondApply { gate, addr, var } => {
                let bit = self.var(*var)?;
                let q = self.qubit(world, addr)?;
                world
                    .store
                    .catch_up(q, now, sched.rng())
                    .map_err(|e| self.err_state(e))?;
                let gate_error = world.network.qpu_config.single_qubit_gate_error_prob;
                match world.store.formalism() {
                    Formalism::DensityMatrix => {
                        // Exact readout-error folding: the correction fires
                        // with the probability that the recorded bit is 1
                        // given the projected outcome.
                        let weight = if bit.outcome == 1 {
                            1.0 - bit.flip_prob
                        } else {
                            bit.flip_prob
                        };
                        if weight > 0.0 {
                            world
                                .store
                                .apply_weighted_correction(q, *gate, weight, gate_error)
                                .map_err(|e| self.err_state(e))?;
                        }
                    }
                    Formalism::Ket => {
                        if bit.reported == 1 {
                            world
                                .store
                                .apply_unitary(*gate, &[q])
                                .map_err(|e| self.err_state(e))?;
                            world
                                .store
                                .apply_depolarizing(&[q], gate_error, sched.rng())
                                .map_err(|e| self.err_state(e))?;
                        }
                    }
                }
                world.trace_line(now, self.node, &instr);
                self.pc += 1;
                Ok(None)
            }
            Instruction::Free { addr } => {
                let pos = self.position(addr)?;
                if let Some(q) = world.qpus[self.node].take_qubit(pos) {
                    world
                        .store
                        .catch_up(q, now, sched.rng())
                        .map_err(|e| self.err_state(e))?;
                    world
                        .store
                        .discard(q, sched.rng())
                        .map_err(|e| self.err_state(e))?;
                }
                if let Addr::Slot(t) = addr {
                    world.qpus[self.node].release_comm(pos)?;
                    self.token_pos[t.0] = None;
                    // A comm slot opened up; pending requests may proceed.
                    world.try_dispatch(sched)?;
                }
                world.trace_line(now, self.node, &instr);
                self.pc += 1;
                Ok(None)
            }
            Instruction::SwapInternal { from, to } => {
                let q = self.qubit(world, from)?;
                let from_pos = self.position(from)?;
                if world.qpus[self.node].qubit_at(*to).is_some() {
                    return Err(
                        self.err_invalid(format!("destination position @{to} is occupied"))
                    );
                }
                world
                    .store
                    .catch_up(q, now, sched.rng())
                    .map_err(|e| self.err_state(e))?;
                world.qpus[self.node].take_qubit(from_pos);
                world.qpus[self.node].place_qubit(*to, q);
                let rate = world.qpus[self.node].rate_for_position(*to);
                world.store.set_rate(q, rate).map_err(|e| self.err_state(e))?;
                world.trace_line(now, self.node, &instr);
                self.pc += 1;
                Ok(None)
            }
            Instruction::Init { .. } | Instruction::Apply { .. } | Instruction::Measure { .. } => {
                unreachable!("timed instructions handled above")
            }
        }
    }

    /// Apply the state change of a finished timed instruction.
    fn finish(&mut self, world: &mut World, sched: &mut Scheduler<Ev>) -> Result<(), RtError> {
        let instr = self.instructions[self.pc].clone();
        let now = sched.now();
        let cfg = world.network.qpu_config.clone();
        match &instr {
            Instruction::Init { positions } => {
                for &pos in positions {
                    if world.qpus[self.node].qubit_at(pos).is_some() {
                        return Err(
                            self.err_invalid(format!("INIT position @{pos} is occupied"))
                        );
                    }
                    let rate = world.qpus[self.node].rate_for_position(pos);
                    let q = world.store.init_qubit(rate, now);
                    world.qpus[self.node].place_qubit(pos, q);
                }
            }
            Instruction::Apply { gate, addrs } => {
                let qs: Vec<QubitId> = addrs
                    .iter()
                    .map(|a| self.qubit(world, a))
                    .collect::<Result<_, _>>()?;
                world
                    .store
                    .apply_unitary(*gate, &qs)
                    .map_err(|e| self.err_state(e))?;
                let p = match qs.len() {
                    1 => cfg.single_qubit_gate_error_prob,
                    _ => cfg.p_depolar_error_cnot,
                };
                world
                    .store
                    .apply_depolarizing(&qs, p, sched.rng())
                    .map_err(|e| self.err_state(e))?;
                for q in &qs {
                    world.store.stamp(*q, now).map_err(|e| self.err_state(e))?;
                }
            }
            Instruction::Measure {
                addr, basis, var, out,
            } => {
                let q = self.qubit(world, addr)?;
                let forced = world.forced.get(&(self.node, var.0)).copied();
                let m = world
                    .store
                    .measure(q, *basis, cfg.meas_error_prob, forced, sched.rng())
                    .map_err(|e| self.err_state(e))?;
                world.branch_prob *= m.prob;
                self.vars[var.0] = Some(ClassicalBit {
                    reported: m.reported,
                    outcome: m.outcome,
                    flip_prob: cfg.meas_error_prob,
                });
                if let Some(c) = out {
                    world.output_bits[*c] = Some(m.reported);
                }
                world.store.stamp(q, now).map_err(|e| self.err_state(e))?;
            }
            _ => unreachable!("only timed instructions reach finish"),
        }
        world.trace_line(now, self.node, &instr);
        self.pc += 1;
        self.phase = Phase::Ready;
        Ok(())
    }
}

/// Positions a timed instruction reads or writes (for decoherence catch-up).
fn instr_operands(instr: &Instruction) -> Vec<Addr> {
    match instr {
        Instruction::Apply { addrs, .. } => addrs.clone(),
        Instruction::Measure { addr, .. } => vec![*addr],
        _ => Vec::new(),
    }
}

impl Task<World, Ev, RtError> for Worker {
    fn poll(
        &mut self,
        world: &mut World,
        sched: &mut Scheduler<Ev>,
    ) -> Result<TaskStatus, RtError> {
        loop {
            if self.pc >= self.instructions.len() {
                return Ok(TaskStatus::Finished);
            }
            match self.phase {
                Phase::Waiting { until } => {
                    if sched.now() < until {
                        return Ok(TaskStatus::Blocked(format!(
                            "completion of `{}` at t={} ns",
                            self.instructions[self.pc],
                            until.ns()
                        )));
                    }
                    self.finish(world, sched)?;
                }
                Phase::Ready => {
                    if let Some(reason) = self.start(world, sched)? {
                        return Ok(TaskStatus::Blocked(reason));
                    }
                }
            }
        }
    }
}

/// Passive fidelity check evaluated once, at completion.
#[derive(Debug, Clone)]
pub struct FidelitySpec {
    /// Target qubits in circuit coordinates `(node, position)` — positions
    /// as written in the distributed circuit, before any teleport moves.
    pub targets: Vec<(usize, usize)>,
    /// Desired pure state over the targets, in target order.
    pub desired: Vec<Amplitude>,
}

/// Build a fidelity collector, validating the desired-state dimension.
pub fn make_fidelity_collector(
    targets: Vec<(usize, usize)>,
    desired: Vec<Amplitude>,
) -> Result<FidelitySpec, RtError> {
    let want = 1usize
        .checked_shl(targets.len() as u32)
        .ok_or_else(|| RtError::Collector("too many target qubits".into()))?;
    if targets.is_empty() {
        return Err(RtError::Collector("no target qubits given".into()));
    }
    if desired.len() != want {
        return Err(RtError::Collector(format!(
            "desired state has dimension {}, but {} target qubit(s) need {want}",
            desired.len(),
            targets.len()
        )));
    }
    let norm2: f64 = desired.iter().map(|a| a.norm_sqr()).sum();
    if (norm2 - 1.0).abs() > 1e-6 {
        return Err(RtError::Collector(format!(
            "desired state is not normalized (|ψ|² = {norm2})"
        )));
    }
    Ok(FidelitySpec { targets, desired })
}

/// Everything describing one execution besides the compiled program.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub formalism: Formalism,
    pub seed: u64,
    /// Forced projected outcomes keyed by (node, measurement variable).
    pub forced: BTreeMap<(usize, usize), u8>,
    /// Record `t=… node=… instruction` lines.
    pub trace: bool,
}

impl RunSpec {
    pub fn new(formalism: Formalism, seed: u64) -> Self {
        RunSpec {
            formalism,
            seed,
            forced: BTreeMap::new(),
            trace: false,
        }
    }
}

/// Result of one shot.
#[derive(Debug, Clone)]
pub struct ShotOutcome {
    pub fidelity: Option<f64>,
    pub final_time: SimTime,
    /// Reported output bits, indexed by output slot; None if never measured.
    pub output_bits: Vec<Option<u8>>,
    /// Probability weight of the realized measurement branch.
    pub branch_prob: f64,
    pub trace: Vec<String>,
    /// Comm reservations still held at completion (0 for clean programs).
    pub leaked_comm: usize,
    /// Per-node busy intervals, indexed by node.
    pub busy_logs: Vec<Vec<BusyInterval>>,
}

fn resolve_target(
    prog: &CompiledProgram,
    target: (usize, usize),
) -> (usize, usize) {
    prog.final_locations
        .get(&target)
        .copied()
        .unwrap_or(target)
}

fn collect_fidelity(
    world: &mut World,
    rng: &mut ChaCha12Rng,
    prog: &CompiledProgram,
    spec: &FidelitySpec,
    final_time: SimTime,
) -> Result<f64, RtError> {
    let mut ids = Vec::with_capacity(spec.targets.len());
    for &target in &spec.targets {
        let (node, pos) = resolve_target(prog, target);
        let q = world.qpus[node].qubit_at(pos).ok_or_else(|| {
            RtError::Collector(format!(
                "no qubit at node_{node} position @{pos} (target written as \
                 {}@node_{})",
                target.1, target.0
            ))
        })?;
        // Charge idle decoherence up to the end of the run before scoring.
        world
            .store
            .catch_up(q, final_time, rng)
            .map_err(|e| RtError::Collector(e.to_string()))?;
        ids.push(q);
    }
    world
        .store
        .fidelity(&ids, &spec.desired)
        .map_err(|e| RtError::Collector(e.to_string()))
}

/// Run one shot: every worker through its stream, then the optional
/// fidelity collection at the final simulated time.
pub fn run_master(
    prog: &CompiledProgram,
    network: &DqcNetwork,
    collector: Option<&FidelitySpec>,
    spec: &RunSpec,
) -> Result<ShotOutcome, RtError> {
    let mut kernel: Kernel<World, Ev, RtError> = Kernel::new(spec.seed);
    let mut world = World::new(
        network,
        spec.formalism,
        prog.num_output_bits,
        spec.forced.clone(),
        spec.trace,
    );
    for stream in &prog.streams {
        kernel.spawn(
            network.node_name(stream.node).to_string(),
            Box::new(Worker::new(stream)),
        );
    }
    let final_time = kernel.run(&mut world).map_err(|e| match e {
        RunError::Deadlock(info) => RtError::Deadlock(info),
        RunError::Task { source, .. } => source,
        RunError::Handler(source) => source,
    })?;
    let fidelity = match collector {
        Some(fspec) => Some(collect_fidelity(
            &mut world,
            kernel.rng(),
            prog,
            fspec,
            final_time,
        )?),
        None => None,
    };
    Ok(ShotOutcome {
        fidelity,
        final_time,
        output_bits: world.output_bits.clone(),
        branch_prob: world.branch_prob,
        trace: std::mem::take(&mut world.trace),
        leaked_comm: world.reserved_comm_total(),
        busy_logs: world
            .qpus
            .iter_mut()
            .map(|q| std::mem::take(&mut q.busy_log))
            .collect(),
    })
}

/// One row of a multi-shot run.
#[derive(Debug, Clone)]
pub struct ShotRow {
    pub shot: usize,
    pub seed: u64,
    pub outcome: Result<ShotOutcome, String>,
}

/// Results of a multi-shot run, in shot order.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub rows: Vec<ShotRow>,
}

impl RunResult {
    /// Mean fidelity over successful shots that produced one.
    pub fn mean_fidelity(&self) -> Option<f64> {
        let values: Vec<f64> = self
            .rows
            .iter()
            .filter_map(|r| r.outcome.as_ref().ok().and_then(|o| o.fidelity))
            .collect();
        if values.is_empty() {
            None
        } else {
            Some(values.iter().sum::<f64>() / values.len() as f64)
        }
    }
}

/// Run `n_shots` independent shots; shot `k` uses seed `base_seed + k` on a
/// fresh simulation instance. Per-shot failures become row errors unless
/// `fail_fast` is set.
#[allow(clippy::too_many_arguments)]
pub fn run_shots(
    prog: &CompiledProgram,
    network: &DqcNetwork,
    collector: Option<&FidelitySpec>,
    formalism: Formalism,
    base_seed: u64,
    n_shots: usize,
    trace: bool,
    fail_fast: bool,
) -> Result<RunResult, RtError> {
    let mut rows = Vec::with_capacity(n_shots);
    for shot in 0..n_shots {
        let seed = base_seed.wrapping_add(shot as u64);
        let mut spec = RunSpec::new(formalism, seed);
        spec.trace = trace;
        match run_master(prog, network, collector, &spec) {
            Ok(outcome) => rows.push(ShotRow {
                shot,
                seed,
                outcome: Ok(outcome),
            }),
            Err(e) if fail_fast => return Err(e),
            Err(e) => rows.push(ShotRow {
                shot,
                seed,
                outcome: Err(e.to_string()),
            }),
        }
    }
    Ok(RunResult { rows })
}

/// One enumerated measurement branch: the forced outcome assignment, the
/// probability of that branch, and what it produced.
#[derive(Debug, Clone)]
pub struct BranchReport {
    pub forced: Vec<((usize, usize), u8)>,
    pub prob: f64,
    pub fidelity: Option<f64>,
    pub final_time: SimTime,
}

/// All measurement sites of a compiled program, in (node, var) order.
pub fn measurement_sites(prog: &CompiledProgram) -> Vec<(usize, usize)> {
    let mut sites = Vec::new();
    for stream in &prog.streams {
        for instr in &stream.instructions {
            if let Instruction::Measure { var, .. } = instr {
                sites.push((stream.node, var.0));
            }
        }
    }
    sites.sort_unstable();
    sites
}

/// Exhaustively enumerate every projected-outcome branch of the program by
/// forcing each measurement in turn, running one shot per assignment.
/// Branch probabilities sum to 1 (impossible branches report prob 0).
/// In the density-matrix formalism each branch is deterministic, so this
/// bounds the outcome dependence of the scored fidelity exactly.
pub fn enumerate_branches(
    prog: &CompiledProgram,
    network: &DqcNetwork,
    collector: Option<&FidelitySpec>,
    formalism: Formalism,
    seed: u64,
) -> Result<Vec<BranchReport>, RtError> {
    let sites = measurement_sites(prog);
    if sites.len() > 16 {
        return Err(RtError::Collector(format!(
            "{} measurement sites is too many to enumerate",
            sites.len()
        )));
    }
    let mut reports = Vec::with_capacity(1 << sites.len());
    for mask in 0u32..(1u32 << sites.len()) {
        let forced: BTreeMap<(usize, usize), u8> = sites
            .iter()
            .enumerate()
            .map(|(i, site)| (*site, ((mask >> i) & 1) as u8))
            .collect();
        let mut spec = RunSpec::new(formalism, seed);
        spec.forced = forced.clone();
        let assignment: Vec<((usize, usize), u8)> = forced.into_iter().collect();
        match run_master(prog, network, collector, &spec) {
            Ok(outcome) => reports.push(BranchReport {
                forced: assignment,
                prob: outcome.branch_prob,
                fidelity: outcome.fidelity,
                final_time: outcome.final_time,
            }),
            Err(RtError::Instr {
                source: StateError::ImpossibleBranch { .. },
                ..
            }) => reports.push(BranchReport {
                forced: assignment,
                prob: 0.0,
                fidelity: None,
                final_time: SimTime::ZERO,
            }),
            Err(e) => return Err(e),
        }
    }
    Ok(reports)
}

/// Render shot rows as CSV with a fixed header; fidelities print with 17
/// significant digits so equal runs are byte-identical.
pub fn to_csv(result: &RunResult) -> String {
    let mut out = String::from("shot,fidelity,final_time_ns,seed,classical_bits\n");
    for row in &result.rows {
        match &row.outcome {
            Ok(o) => {
                let fid = match o.fidelity {
                    Some(f) => format!("{f:.16e}"),
                    None => String::new(),
                };
                let _ = writeln!(
                    out,
                    "{},{},{},{},{}",
                    row.shot,
                    fid,
                    o.final_time.ns(),
                    row.seed,
                    render_bits(&o.output_bits)
                );
            }
            Err(_) => {
                let _ = writeln!(out, "{},,,{},", row.shot, row.seed);
            }
        }
    }
    out
}

fn render_bits(bits: &[Option<u8>]) -> String {
    bits.iter()
        .enumerate()
        .filter_map(|(i, b)| b.map(|v| format!("c{i}={v}")))
        .collect::<Vec<_>>()
        .join(";")
}

fn json_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c if (c as u32) < 0x20 => {
                let _ = write!(out, "\\u{:04x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out
}

/// Render shot rows as a JSON document mirroring the CSV schema.
pub fn to_json(result: &RunResult) -> String {
    let mut out = String::from("{\n  \"rows\": [\n");
    for (i, row) in result.rows.iter().enumerate() {
        let sep = if i + 1 == result.rows.len() { "" } else { "," };
        match &row.outcome {
            Ok(o) => {
                let fid = match o.fidelity {
                    Some(f) => format!("{f:.16e}"),
                    None => "null".to_string(),
                };
                let bits: Vec<String> = o
                    .output_bits
                    .iter()
                    .enumerate()
                    .filter_map(|(c, b)| b.map(|v| format!("\"c{c}\": {v}")))
                    .collect();
                let _ = writeln!(
                    out,
                    "    {{\"shot\": {}, \"fidelity\": {}, \"final_time_ns\": {}, \
                     \"seed\": {}, \"classical_bits\": {{{}}}}}{}",
                    row.shot,
                    fid,
                    o.final_time.ns(),
                    row.seed,
                    bits.join(", "),
                    sep
                );
            }
            Err(e) => {
                let _ = writeln!(
                    out,
                    "    {{\"shot\": {}, \"seed\": {}, \"error\": \"{}\"}}{}",
                    row.shot,
                    row.seed,
                    json_escape(e),
                    sep
                );
            }
        }
    }
    out.push_str("  ]\n}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{parse_distributed, Scheme};
    use crate::compiler::compile;
    use crate::hardware::{build_dqc, ConnectionConfig, QpuConfig};
    use crate::qstate::PairSource;

    const ENT_DELAY: f64 = 1e9 / 182.0;

    fn reference_qpu(noisy: bool) -> QpuConfig {
        QpuConfig {
            num_positions: 4,
            num_comm_qubits: 2,
            single_qubit_gate_time: 135e3,
            two_qubit_gate_time: 600e3,
            measurement_time: 6e6,
            single_qubit_gate_error_prob: if noisy { 2e-5 } else { 0.0 },
            p_depolar_error_cnot: if noisy { 1e-3 } else { 0.0 },
            meas_error_prob: if noisy { 3e-3 } else { 0.0 },
            comm_qubit_depolar_rate: if noisy { 0.055 } else { 0.0 },
            proc_qubit_depolar_rate: if noisy { 0.055 } else { 0.0 },
        }
    }

    fn bell_network(noisy: bool) -> DqcNetwork {
        let werner = if noisy { 0.9 } else { 1.0 };
        build_dqc(
            3,
            &[(0, 1), (1, 2)],
            &[(0, 1), (0, 2), (1, 2)],
            reference_qpu(noisy),
            ConnectionConfig {
                delay_ns: ENT_DELAY,
                source: PairSource::Werner(werner),
            },
            0.0,
        )
        .unwrap()
    }

    fn bell_cat_program(net: &DqcNetwork) -> CompiledProgram {
        let circuit = parse_distributed(
            "INIT 2@node_0\nINIT 2@node_1\nINIT 2@node_2\n\
             H 2@node_0\nCNOT 2@node_0 2@node_1 cat\n",
        )
        .unwrap();
        compile(&circuit, net, Scheme::Cat).unwrap()
    }

    fn bell_collector() -> FidelitySpec {
        let r = std::f64::consts::FRAC_1_SQRT_2;
        make_fidelity_collector(
            vec![(0, 2), (1, 2)],
            vec![
                Amplitude::new(r, 0.0),
                Amplitude::new(0.0, 0.0),
                Amplitude::new(0.0, 0.0),
                Amplitude::new(r, 0.0),
            ],
        )
        .unwrap()
    }

    #[test]
    fn noiseless_bell_cat_reaches_unit_fidelity_in_dm() {
        let net = bell_network(false);
        let prog = bell_cat_program(&net);
        let spec = RunSpec::new(Formalism::DensityMatrix, 7);
        let out = run_master(&prog, &net, Some(&bell_collector()), &spec).unwrap();
        let f = out.fidelity.unwrap();
        assert!((f - 1.0).abs() < 1e-9, "fidelity {f}");
        assert_eq!(out.leaked_comm, 0);
        let expected = 270e3 + ENT_DELAY + 600e3 + 6e6 + 600e3 + 135e3 + 6e6;
        assert!(
            (out.final_time.ns() - expected).abs() < 1e-3,
            "final time {} vs {expected}",
            out.final_time.ns()
        );
    }

    #[test]
    fn noiseless_bell_cat_reaches_unit_fidelity_in_ket() {
        let net = bell_network(false);
        let prog = bell_cat_program(&net);
        for seed in [1, 2, 3, 4, 5] {
            let spec = RunSpec::new(Formalism::Ket, seed);
            let out = run_master(&prog, &net, Some(&bell_collector()), &spec).unwrap();
            let f = out.fidelity.unwrap();
            assert!((f - 1.0).abs() < 1e-9, "seed {seed}: fidelity {f}");
        }
    }

    #[test]
    fn single_entangle_advances_time_by_exactly_the_link_delay() {
        use crate::compiler::{Addr, SlotToken};
        let net = bell_network(false);
        let entangle_stream = |node: usize| InstructionStream {
            node,
            instructions: vec![
                Instruction::Entangle {
                    link: 0,
                    ebit_id: 0,
                    token: SlotToken(0),
                },
                Instruction::Free {
                    addr: Addr::Slot(SlotToken(0)),
                },
            ],
            num_vars: 0,
            num_tokens: 1,
        };
        let prog = CompiledProgram {
            streams: vec![entangle_stream(0), entangle_stream(1)],
            ebits: 1,
            cbits: 0,
            num_output_bits: 0,
            final_locations: BTreeMap::new(),
        };
        let spec = RunSpec::new(Formalism::DensityMatrix, 0);
        let out = run_master(&prog, &net, None, &spec).unwrap();
        assert_eq!(out.final_time.ns(), ENT_DELAY);
        assert_eq!(out.leaked_comm, 0);
    }

    #[test]
    fn sequential_stream_time_is_the_exact_duration_sum() {
        let net = bell_network(false);
        let circuit = parse_distributed(
            "INIT 2@node_0 3@node_0\nH 2@node_0\nCNOT 2@node_0 3@node_0\n\
             MEASURE 2@node_0 -> c0\n",
        )
        .unwrap();
        let prog = compile(&circuit, &net, Scheme::Cat).unwrap();
        let spec = RunSpec::new(Formalism::Ket, 11);
        let out = run_master(&prog, &net, None, &spec).unwrap();
        // INIT + (H + CNOT + measure): integer nanoseconds add exactly.
        assert_eq!(out.final_time.ns(), 135_000.0 + 135_000.0 + 600_000.0 + 6_000_000.0);
    }

    #[test]
    fn deadlocked_receives_name_both_workers_and_their_waits() {
        use crate::compiler::VarId;
        let recv_stream = |node: usize, src: usize, tag: u32| InstructionStream {
            node,
            instructions: vec![Instruction::Recv {
                src,
                tag,
                vars: vec![VarId(0)],
            }],
            num_vars: 1,
            num_tokens: 0,
        };
        let net = bell_network(false);
        let prog = CompiledProgram {
            streams: vec![recv_stream(0, 1, 0), recv_stream(1, 0, 1)],
            ebits: 0,
            cbits: 0,
            num_output_bits: 0,
            final_locations: BTreeMap::new(),
        };
        let spec = RunSpec::new(Formalism::Ket, 0);
        let err = run_master(&prog, &net, None, &spec).unwrap_err();
        let text = err.to_string();
        assert!(matches!(err, RtError::Deadlock(_)), "got: {text}");
        assert!(text.contains("node_0"), "got: {text}");
        assert!(text.contains("node_1"), "got: {text}");
        assert!(text.contains("tag=0"), "got: {text}");
        assert!(text.contains("tag=1"), "got: {text}");
    }

    #[test]
    fn noisy_bell_cat_fidelity_is_near_the_reference_value() {
        let net = bell_network(true);
        let prog = bell_cat_program(&net);
        let spec = RunSpec::new(Formalism::DensityMatrix, 3);
        let out = run_master(&prog, &net, Some(&bell_collector()), &spec).unwrap();
        let f = out.fidelity.unwrap();
        assert!((f - 0.8921630426886507).abs() < 0.02, "fidelity {f}");
    }

    #[test]
    fn dm_branches_are_deterministic_and_tight() {
        let net = bell_network(true);
        let prog = bell_cat_program(&net);
        let reports =
            enumerate_branches(&prog, &net, Some(&bell_collector()), Formalism::DensityMatrix, 5)
                .unwrap();
        assert_eq!(reports.len(), 4);
        let total: f64 = reports.iter().map(|r| r.prob).sum();
        assert!((total - 1.0).abs() < 1e-9, "branch probs sum to {total}");
        let fids: Vec<f64> = reports.iter().filter_map(|r| r.fidelity).collect();
        let lo = fids.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = fids.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(hi - lo <= 0.01, "branch spread {}", hi - lo);
        // Same seed, same branch → identical fidelity; different seed, same
        // branch → identical too (DM branches are RNG-free).
        let again =
            enumerate_branches(&prog, &net, Some(&bell_collector()), Formalism::DensityMatrix, 99)
                .unwrap();
        for (a, b) in reports.iter().zip(&again) {
            assert_eq!(a.fidelity, b.fidelity);
        }
    }

    #[test]
    fn shots_with_same_base_seed_are_identical() {
        let net = bell_network(true);
        let prog = bell_cat_program(&net);
        let run = |seed| {
            run_shots(
                &prog,
                &net,
                Some(&bell_collector()),
                Formalism::DensityMatrix,
                seed,
                4,
                false,
                false,
            )
            .unwrap()
        };
        let a = to_csv(&run(42));
        let b = to_csv(&run(42));
        assert_eq!(a, b);
        assert!(a.starts_with("shot,fidelity,final_time_ns,seed,classical_bits\n"));
    }

    #[test]
    fn ket_measurement_statistics_follow_the_born_rule() {
        let net = bell_network(false);
        let circuit =
            parse_distributed("INIT 2@node_0\nH 2@node_0\nMEASURE 2@node_0 -> c0\n").unwrap();
        let prog = compile(&circuit, &net, Scheme::Cat).unwrap();
        let result = run_shots(
            &prog,
            &net,
            None,
            Formalism::Ket,
            1000,
            10_000,
            false,
            false,
        )
        .unwrap();
        let ones: usize = result
            .rows
            .iter()
            .filter(|r| {
                r.outcome
                    .as_ref()
                    .map(|o| o.output_bits[0] == Some(1))
                    .unwrap_or(false)
            })
            .count();
        let freq = ones as f64 / 10_000.0;
        assert!(
            (0.48..=0.52).contains(&freq),
            "outcome-1 frequency {freq} is outside [0.48, 0.52]"
        );
    }

    #[test]
    fn trace_records_time_node_and_instruction() {
        let net = bell_network(false);
        let prog = bell_cat_program(&net);
        let mut spec = RunSpec::new(Formalism::DensityMatrix, 1);
        spec.trace = true;
        let out = run_master(&prog, &net, None, &spec).unwrap();
        assert!(!out.trace.is_empty());
        assert!(
            out.trace[0].starts_with("t=135000 node=node_"),
            "got: {}",
            out.trace[0]
        );
        assert!(
            out.trace.iter().any(|l| l.contains("ENTANGLE")),
            "trace: {:#?}",
            out.trace
        );
    }
}
