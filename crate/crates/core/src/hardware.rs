//! Hardware description: QPUs, entangling connections, and the network.
//!
//! A network is built once from static configuration (QPU parameters shared
//! by all nodes, quantum and classical topologies, one entangling-connection
//! configuration applied to every quantum link) and is immutable during a
//! run. The mutable per-run pieces — which qubit sits in which memory
//! position, which communication slots are spoken for — live in [`Qpu`],
//! one instance per node per simulation instance.
//!
//! Memory layout convention: positions `0..num_comm_qubits` are
//! communication (comm) positions reserved for halves of entangled pairs;
//! positions `num_comm_qubits..num_positions` are processing positions for
//! data qubits.

use crate::kernel::SimTime;
use crate::qstate::PairSource;
use crate::qstate::QubitId;
use serde::{Deserialize, Serialize};

/// All per-QPU noise and timing parameters.
///
/// Times are nanoseconds, rates are Hz, error fields are probabilities.
/// Error probabilities and depolarizing rates default to zero so a noiseless
/// machine needs only the structural and timing fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QpuConfig {
    pub num_positions: usize,
    #[serde(default)]
    pub num_comm_qubits: usize,
    pub single_qubit_gate_time: f64,
    pub two_qubit_gate_time: f64,
    pub measurement_time: f64,
    #[serde(default)]
    pub single_qubit_gate_error_prob: f64,
    #[serde(default)]
    pub p_depolar_error_cnot: f64,
    #[serde(default)]
    pub meas_error_prob: f64,
    #[serde(default)]
    pub comm_qubit_depolar_rate: f64,
    #[serde(default)]
    pub proc_qubit_depolar_rate: f64,
}

impl QpuConfig {
    pub fn validate(&self) -> Result<(), HardwareError> {
        if self.num_comm_qubits > self.num_positions {
            return Err(HardwareError::Config(format!(
                "num_comm_qubits ({}) exceeds num_positions ({})",
                self.num_comm_qubits, self.num_positions
            )));
        }
        for (name, value) in [
            ("single_qubit_gate_time", self.single_qubit_gate_time),
            ("two_qubit_gate_time", self.two_qubit_gate_time),
            ("measurement_time", self.measurement_time),
            ("comm_qubit_depolar_rate", self.comm_qubit_depolar_rate),
            ("proc_qubit_depolar_rate", self.proc_qubit_depolar_rate),
        ] {
            if !value.is_finite() || value < 0.0 {
                return Err(HardwareError::Config(format!(
                    "{name} must be finite and >= 0, got {value}"
                )));
            }
        }
        for (name, value) in [
            ("single_qubit_gate_error_prob", self.single_qubit_gate_error_prob),
            ("p_depolar_error_cnot", self.p_depolar_error_cnot),
            ("meas_error_prob", self.meas_error_prob),
        ] {
            if !value.is_finite() || !(0.0..=1.0).contains(&value) {
                return Err(HardwareError::Config(format!(
                    "{name} must be a probability in [0, 1], got {value}"
                )));
            }
        }
        Ok(())
    }

    /// Busy duration of a local gate by operand count.
    pub fn gate_time(&self, arity: usize) -> f64 {
        match arity {
            1 => self.single_qubit_gate_time,
            2 => self.two_qubit_gate_time,
            n => panic!("no gate time defined for arity {n}"),
        }
    }
}

/// One entangling connection: delivery delay and the two-qubit state the
/// source hands out.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectionConfig {
    pub delay_ns: f64,
    pub source: PairSource,
}

impl ConnectionConfig {
    pub fn validate(&self) -> Result<(), HardwareError> {
        if !self.delay_ns.is_finite() || self.delay_ns < 0.0 {
            return Err(HardwareError::Connection(format!(
                "delay must be finite and >= 0 ns, got {}",
                self.delay_ns
            )));
        }
        match &self.source {
            PairSource::Werner(f) => {
                if !f.is_finite() || !(0.0..=1.0).contains(f) {
                    return Err(HardwareError::Connection(format!(
                        "Werner fidelity must be in [0, 1], got {f}"
                    )));
                }
            }
            PairSource::PureKet(v) => {
                if v.len() != 4 {
                    return Err(HardwareError::Connection(format!(
                        "pure pair state needs 4 amplitudes, got {}",
                        v.len()
                    )));
                }
                let n2: f64 = v.iter().map(|a| a.norm_sqr()).sum();
                if (n2 - 1.0).abs() > 1e-6 {
                    return Err(HardwareError::Connection(format!(
                        "pure pair state is not normalized (|psi|^2 = {n2})"
                    )));
                }
            }
            PairSource::MixedDm(m) => {
                if m.len() != 16 {
                    return Err(HardwareError::Connection(format!(
                        "pair density matrix needs 16 entries, got {}",
                        m.len()
                    )));
                }
                crate::qstate::math::check_density_matrix(m, 4, 1e-6)
                    .map_err(HardwareError::Connection)?;
            }
        }
        Ok(())
    }
}

/// One quantum link between two node indices (`a < b` after normalization).
#[derive(Debug, Clone)]
pub struct LinkSpec {
    pub a: usize,
    pub b: usize,
    pub conn: ConnectionConfig,
}

/// The immutable description of the whole distributed machine.
#[derive(Debug, Clone)]
pub struct DqcNetwork {
    pub qpu_config: QpuConfig,
    qpu_names: Vec<String>,
    pub quantum_links: Vec<LinkSpec>,
    classical_links: Vec<(usize, usize)>,
    pub classical_delay_ns: f64,
}

/// Errors from hardware construction and allocator misuse.
#[derive(Debug, thiserror::Error)]
pub enum HardwareError {
    #[error("QPU config: {0}")]
    Config(String),
    #[error("connection config: {0}")]
    Connection(String),
    #[error("{kind} topology: {problem} in link ({a}, {b})")]
    Topology {
        kind: &'static str,
        a: usize,
        b: usize,
        problem: String,
    },
    #[error("{qpu}: position {position} is not a reserved communication position")]
    FreeInvalid { qpu: String, position: usize },
}

fn check_topology(
    kind: &'static str,
    pairs: &[(usize, usize)],
    num_qpus: usize,
) -> Result<Vec<(usize, usize)>, HardwareError> {
    let mut normalized: Vec<(usize, usize)> = Vec::with_capacity(pairs.len());
    for &(a, b) in pairs {
        if a == b {
            return Err(HardwareError::Topology {
                kind,
                a,
                b,
                problem: "self-loop".into(),
            });
        }
        if a >= num_qpus || b >= num_qpus {
            return Err(HardwareError::Topology {
                kind,
                a,
                b,
                problem: format!("node index out of range for {num_qpus} QPU(s)"),
            });
        }
        let pair = (a.min(b), a.max(b));
        if normalized.contains(&pair) {
            return Err(HardwareError::Topology {
                kind,
                a,
                b,
                problem: "duplicate link".into(),
            });
        }
        normalized.push(pair);
    }
    Ok(normalized)
}

/// Assemble a validated network. QPUs are named `node_0` … `node_(n-1)`;
/// every quantum link shares `conn_config` and every classical link shares
/// `classical_delay_ns` (default 0: the classical latency between QPUs is
/// not pinned down by the modeled hardware, so it is exposed as a plain
/// configurable).
pub fn build_dqc(
    num_qpus: usize,
    quantum_topology: &[(usize, usize)],
    classical_topology: &[(usize, usize)],
    qpu_config: QpuConfig,
    conn_config: ConnectionConfig,
    classical_delay_ns: f64,
) -> Result<DqcNetwork, HardwareError> {
    if num_qpus == 0 {
        return Err(HardwareError::Config("num_qpus must be >= 1".into()));
    }
    qpu_config.validate()?;
    conn_config.validate()?;
    if !classical_delay_ns.is_finite() || classical_delay_ns < 0.0 {
        return Err(HardwareError::Config(format!(
            "classical_delay_ns must be finite and >= 0, got {classical_delay_ns}"
        )));
    }
    let quantum = check_topology("quantum", quantum_topology, num_qpus)?;
    let classical = check_topology("classical", classical_topology, num_qpus)?;
    Ok(DqcNetwork {
        qpu_config,
        qpu_names: (0..num_qpus).map(|i| format!("node_{i}")).collect(),
        quantum_links: quantum
            .into_iter()
            .map(|(a, b)| LinkSpec {
                a,
                b,
                conn: conn_config.clone(),
            })
            .collect(),
        classical_links: classical,
        classical_delay_ns,
    })
}

impl DqcNetwork {
    pub fn num_qpus(&self) -> usize {
        self.qpu_names.len()
    }

    pub fn node_name(&self, index: usize) -> &str {
        &self.qpu_names[index]
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.qpu_names.iter().position(|n| n == name)
    }

    /// Index into `quantum_links` of the link joining the two nodes.
    pub fn quantum_link_between(&self, i: usize, j: usize) -> Option<usize> {
        let pair = (i.min(j), i.max(j));
        self.quantum_links
            .iter()
            .position(|l| (l.a, l.b) == pair)
    }

    pub fn classical_link_between(&self, i: usize, j: usize) -> bool {
        let pair = (i.min(j), i.max(j));
        self.classical_links.contains(&pair)
    }
}

/// One interval during which a QPU was executing a timed instruction.
#[derive(Debug, Clone, PartialEq)]
pub struct BusyInterval {
    pub start: SimTime,
    pub end: SimTime,
    pub label: String,
}

/// Per-run mutable state of one node: its memory map and comm allocator.
#[derive(Debug)]
pub struct Qpu {
    pub name: String,
    pub config: QpuConfig,
    memory: Vec<Option<QubitId>>,
    /// Reservation flags for comm positions; a position is spoken for from
    /// entanglement rendezvous until it is explicitly freed.
    comm_reserved: Vec<bool>,
    pub busy_log: Vec<BusyInterval>,
}

impl Qpu {
    pub fn new(name: String, config: QpuConfig) -> Self {
        let memory = vec![None; config.num_positions];
        let comm_reserved = vec![false; config.num_comm_qubits];
        Qpu {
            name,
            config,
            memory,
            comm_reserved,
            busy_log: Vec::new(),
        }
    }

    pub fn num_positions(&self) -> usize {
        self.config.num_positions
    }

    pub fn is_comm_position(&self, pos: usize) -> bool {
        pos < self.config.num_comm_qubits
    }

    /// Idle depolarizing rate appropriate for a qubit held at `pos`.
    pub fn rate_for_position(&self, pos: usize) -> f64 {
        if self.is_comm_position(pos) {
            self.config.comm_qubit_depolar_rate
        } else {
            self.config.proc_qubit_depolar_rate
        }
    }

    pub fn qubit_at(&self, pos: usize) -> Option<QubitId> {
        self.memory.get(pos).copied().flatten()
    }

    pub fn place_qubit(&mut self, pos: usize, q: QubitId) {
        self.memory[pos] = Some(q);
    }

    pub fn take_qubit(&mut self, pos: usize) -> Option<QubitId> {
        self.memory[pos].take()
    }

    /// Comm positions available for a new entangled pair: neither reserved
    /// nor holding a qubit (circuits may park data in comm positions).
    pub fn free_comm_count(&self) -> usize {
        self.comm_reserved
            .iter()
            .enumerate()
            .filter(|(pos, r)| !**r && self.memory[*pos].is_none())
            .count()
    }

    pub fn reserved_comm_count(&self) -> usize {
        self.comm_reserved.iter().filter(|r| **r).count()
    }

    /// Reserve the lowest free comm position, if any.
    pub fn reserve_comm(&mut self) -> Option<usize> {
        let pos = self
            .comm_reserved
            .iter()
            .enumerate()
            .position(|(pos, r)| !*r && self.memory[pos].is_none())?;
        self.comm_reserved[pos] = true;
        Some(pos)
    }

    /// Return a comm position to the free pool. The caller is responsible
    /// for discarding any qubit that lived there first.
    pub fn release_comm(&mut self, pos: usize) -> Result<(), HardwareError> {
        if pos >= self.comm_reserved.len() || !self.comm_reserved[pos] {
            return Err(HardwareError::FreeInvalid {
                qpu: self.name.clone(),
                position: pos,
            });
        }
        self.comm_reserved[pos] = false;
        self.memory[pos] = None;
        Ok(())
    }

    pub fn record_busy(&mut self, start: SimTime, end: SimTime, label: String) {
        self.busy_log.push(BusyInterval { start, end, label });
    }
}
