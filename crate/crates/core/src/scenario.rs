//! Scenario files: one TOML document describing the hardware, the software,
//! and the run parameters of a simulation.
//!
//! The `[hardware.qpu]` table mirrors [`QpuConfig`] field names verbatim, so
//! a published parameter set can be copied in unchanged. Validation enforces
//! the either-or choices: a connection is specified by `delay_ns` or by
//! `ent_dist_rate_hz` (never both), its pair state by `werner_fidelity` or
//! by an explicit `state`, and the circuit comes from `circuit_file` or an
//! inline `circuit` string.
//!
//! `--set path=value` overrides are applied to the raw TOML tree before the
//! typed config is read, so any key can be swept from the command line
//! without editing the file.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuit::{
    parse_distributed, CircuitError, ContiguousPartitioner, DistCircuit, NodeCapacity,
    Partitioner, Scheme,
};
use crate::compiler::{compile, CompiledProgram};
use crate::hardware::{build_dqc, ConnectionConfig, DqcNetwork, HardwareError, QpuConfig};
use crate::qasm::{lower_to_circuit, parse_qasm, QasmError};
use crate::qstate::{Formalism, PairSource};
use crate::runtime::{make_fidelity_collector, FidelitySpec};
use crate::Amplitude;

/// Errors from loading, validating, or assembling a scenario.
#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Toml(String),
    #[error("config: {0}")]
    Invalid(String),
    #[error("override `{spec}`: {message}")]
    Override { spec: String, message: String },
    #[error(transparent)]
    Hardware(#[from] HardwareError),
    #[error(transparent)]
    Circuit(#[from] CircuitError),
    #[error(transparent)]
    Qasm(#[from] QasmError),
}

/// A complex amplitude in config syntax: a bare real or an `[re, im]` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AmplitudeSpec {
    Real(f64),
    Complex([f64; 2]),
}

impl AmplitudeSpec {
    pub fn to_amplitude(&self) -> Amplitude {
        match self {
            AmplitudeSpec::Real(re) => Amplitude::new(*re, 0.0),
            AmplitudeSpec::Complex([re, im]) => Amplitude::new(*re, *im),
        }
    }
}

/// `[hardware.connection]`: entanglement delivery and pair quality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConnectionSection {
    /// Delivery latency per pair, in nanoseconds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay_ns: Option<f64>,
    /// Alternative: pair distribution rate in Hz; delay = 1e9 / rate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ent_dist_rate_hz: Option<f64>,
    /// Delivered pairs are Werner states of this fidelity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub werner_fidelity: Option<f64>,
    /// Alternative: explicit pair state — 4 amplitudes (pure state) or
    /// 16 entries (density matrix, row-major).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<Vec<AmplitudeSpec>>,
}

impl ConnectionSection {
    fn to_config(&self) -> Result<ConnectionConfig, ScenarioError> {
        let delay_ns = match (self.delay_ns, self.ent_dist_rate_hz) {
            (Some(d), None) => d,
            (None, Some(rate)) => {
                if !(rate.is_finite() && rate > 0.0) {
                    return Err(ScenarioError::Invalid(format!(
                        "hardware.connection.ent_dist_rate_hz must be > 0, got {rate}"
                    )));
                }
                1e9 / rate
            }
            (Some(_), Some(_)) => {
                return Err(ScenarioError::Invalid(
                    "hardware.connection: give delay_ns or ent_dist_rate_hz, not both".into(),
                ))
            }
            (None, None) => {
                return Err(ScenarioError::Invalid(
                    "hardware.connection: one of delay_ns or ent_dist_rate_hz is required".into(),
                ))
            }
        };
        let source = match (self.werner_fidelity, &self.state) {
            (Some(f), None) => PairSource::Werner(f),
            (None, Some(v)) => {
                let amps: Vec<Amplitude> = v.iter().map(AmplitudeSpec::to_amplitude).collect();
                match amps.len() {
                    4 => PairSource::PureKet(amps),
                    16 => PairSource::MixedDm(amps),
                    n => {
                        return Err(ScenarioError::Invalid(format!(
                            "hardware.connection.state needs 4 amplitudes (pure state) or \
                             16 entries (density matrix), got {n}"
                        )))
                    }
                }
            }
            (Some(_), Some(_)) => {
                return Err(ScenarioError::Invalid(
                    "hardware.connection: give werner_fidelity or state, not both".into(),
                ))
            }
            (None, None) => {
                return Err(ScenarioError::Invalid(
                    "hardware.connection: one of werner_fidelity or state is required".into(),
                ))
            }
        };
        Ok(ConnectionConfig { delay_ns, source })
    }
}

/// `[hardware]`: the machine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareSection {
    pub num_qpus: usize,
    /// Entangling connections as `[a, b]` node-index pairs.
    pub quantum_topology: Vec<(usize, usize)>,
    /// Classical links as `[a, b]` node-index pairs.
    pub classical_topology: Vec<(usize, usize)>,
    /// Latency of classical messages, in nanoseconds (default 0).
    #[serde(default)]
    pub classical_delay_ns: f64,
    /// Applied identically to every QPU.
    pub qpu: QpuConfig,
    /// Applied identically to every quantum link.
    pub connection: ConnectionSection,
}

/// `[software]`: the circuit and how to distribute it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SoftwareSection {
    /// Path to a circuit file, relative to the config file. `.qasm` files
    /// are monolithic and get partitioned; anything else is distributed
    /// circuit text.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub circuit_file: Option<String>,
    /// Alternative: inline distributed circuit text.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub circuit: Option<String>,
    /// Qubit-placement strategy for monolithic circuits (default
    /// "contiguous").
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partitioner: Option<String>,
    /// Scheme for remote gates that don't name one (default "cat").
    #[serde(default = "default_scheme", skip_serializing_if = "is_default_scheme")]
    pub default_scheme: String,
}

fn default_scheme() -> String {
    "cat".to_string()
}

fn is_default_scheme(s: &String) -> bool {
    s == "cat"
}

/// `[run.collector]`: the fidelity check evaluated at completion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollectorSection {
    /// Target qubits as `position@node` operands, e.g. `"2@node_0"`.
    pub targets: Vec<String>,
    /// Desired pure state over the targets (dimension `2^len(targets)`).
    pub desired_state: Vec<AmplitudeSpec>,
}

/// `[run]`: execution parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// `"dm"` (density matrix, exact noise) or `"ket"` (sampled noise).
    #[serde(default = "default_formalism")]
    pub formalism: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_shots")]
    pub shots: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub collector: Option<CollectorSection>,
}

fn default_formalism() -> String {
    "dm".to_string()
}

fn default_shots() -> usize {
    1
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            formalism: default_formalism(),
            seed: 0,
            shots: default_shots(),
            collector: None,
        }
    }
}

/// The whole scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub hardware: HardwareSection,
    pub software: SoftwareSection,
    #[serde(default)]
    pub run: RunSection,
}

impl ScenarioConfig {
    /// Render the effective config back to TOML (for `--dump-config`).
    pub fn to_toml_string(&self) -> Result<String, ScenarioError> {
        toml::to_string_pretty(self).map_err(|e| ScenarioError::Toml(e.to_string()))
    }
}

/// One `--set path=value` override.
#[derive(Debug, Clone, PartialEq)]
pub struct SetOverride {
    pub path: String,
    pub value: String,
}

impl FromStr for SetOverride {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let Some((path, value)) = s.split_once('=') else {
            return Err(format!("`{s}` is not of the form path=value"));
        };
        if path.is_empty() {
            return Err(format!("`{s}` has an empty path"));
        }
        Ok(SetOverride {
            path: path.to_string(),
            value: value.to_string(),
        })
    }
}

/// Interpret an override value: anything that parses as a TOML scalar or
/// array keeps that type; everything else becomes a string.
fn parse_override_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    if let Ok(table) = doc.parse::<toml::Table>() {
        if let Some(v) = table.get("v") {
            return v.clone();
        }
    }
    toml::Value::String(raw.to_string())
}

fn set_path(root: &mut toml::Value, spec: &SetOverride) -> Result<(), ScenarioError> {
    let segments: Vec<&str> = spec.path.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(ScenarioError::Override {
            spec: format!("{}={}", spec.path, spec.value),
            message: "path has an empty segment".into(),
        });
    }
    let mut cursor = root;
    for seg in &segments[..segments.len() - 1] {
        let table = cursor.as_table_mut().ok_or_else(|| ScenarioError::Override {
            spec: format!("{}={}", spec.path, spec.value),
            message: format!("`{seg}` is not a table"),
        })?;
        cursor = table
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    let leaf = segments[segments.len() - 1];
    let table = cursor.as_table_mut().ok_or_else(|| ScenarioError::Override {
        spec: format!("{}={}", spec.path, spec.value),
        message: format!("parent of `{leaf}` is not a table"),
    })?;
    table.insert(leaf.to_string(), parse_override_value(&spec.value));
    Ok(())
}

/// Parse a config document and apply `--set` overrides on the raw tree.
pub fn parse_config(
    text: &str,
    overrides: &[SetOverride],
) -> Result<ScenarioConfig, ScenarioError> {
    let mut value: toml::Value = text
        .parse()
        .map_err(|e: toml::de::Error| ScenarioError::Toml(e.to_string()))?;
    for o in overrides {
        set_path(&mut value, o)?;
    }
    value
        .try_into()
        .map_err(|e: toml::de::Error| ScenarioError::Toml(e.to_string()))
}

/// Load a config file and apply overrides.
pub fn load_config(
    path: &Path,
    overrides: &[SetOverride],
) -> Result<ScenarioConfig, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text, overrides)
}

/// A fully assembled scenario, ready to run.
#[derive(Debug)]
pub struct Scenario {
    /// The effective config (after overrides).
    pub config: ScenarioConfig,
    pub network: DqcNetwork,
    pub circuit: DistCircuit,
    pub program: CompiledProgram,
    pub formalism: Formalism,
    pub seed: u64,
    pub shots: usize,
    pub collector: Option<FidelitySpec>,
    /// Informational messages from parsing/partitioning.
    pub notes: Vec<String>,
}

fn parse_formalism(s: &str) -> Result<Formalism, ScenarioError> {
    match s {
        "dm" | "density_matrix" => Ok(Formalism::DensityMatrix),
        "ket" => Ok(Formalism::Ket),
        other => Err(ScenarioError::Invalid(format!(
            "run.formalism must be \"dm\" or \"ket\", got \"{other}\""
        ))),
    }
}

fn parse_target(s: &str, network: &DqcNetwork) -> Result<(usize, usize), ScenarioError> {
    let err = |msg: String| ScenarioError::Invalid(format!("run.collector.targets `{s}`: {msg}"));
    let (pos, node) = s
        .split_once('@')
        .ok_or_else(|| err("expected position@node, e.g. \"2@node_0\"".into()))?;
    let pos: usize = pos
        .parse()
        .map_err(|_| err(format!("`{pos}` is not a position number")))?;
    let node = network
        .node_index(node)
        .ok_or_else(|| err(format!("unknown node `{node}`")))?;
    if pos >= network.qpu_config.num_positions {
        return Err(err(format!(
            "position {pos} is out of range for {} positions",
            network.qpu_config.num_positions
        )));
    }
    Ok((node, pos))
}

/// Read the circuit named by the config (or the CLI override path): `.qasm`
/// files are parsed, lowered, and partitioned; anything else is distributed
/// circuit text.
fn load_circuit(
    cfg: &ScenarioConfig,
    base_dir: &Path,
    circuit_override: Option<&Path>,
    network: &DqcNetwork,
    scheme: Scheme,
    notes: &mut Vec<String>,
) -> Result<DistCircuit, ScenarioError> {
    let (text, is_qasm) = match circuit_override {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            (text, path.extension().is_some_and(|e| e == "qasm"))
        }
        None => match (&cfg.software.circuit_file, &cfg.software.circuit) {
            (Some(file), None) => {
                let path = base_dir.join(file);
                let text = std::fs::read_to_string(&path).map_err(|source| ScenarioError::Io {
                    path: path.clone(),
                    source,
                })?;
                (text, path.extension().is_some_and(|e| e == "qasm"))
            }
            (None, Some(inline)) => (inline.clone(), false),
            (Some(_), Some(_)) => {
                return Err(ScenarioError::Invalid(
                    "software: give circuit_file or an inline circuit, not both".into(),
                ))
            }
            (None, None) => {
                return Err(ScenarioError::Invalid(
                    "software: one of circuit_file or circuit is required".into(),
                ))
            }
        },
    };
    if is_qasm {
        let prog = parse_qasm(&text)?;
        let lowered = lower_to_circuit(&prog)?;
        notes.extend(lowered.notes);
        let partitioner = match cfg.software.partitioner.as_deref() {
            None | Some("contiguous") => ContiguousPartitioner,
            Some(other) => {
                return Err(ScenarioError::Invalid(format!(
                    "software.partitioner: unknown partitioner \"{other}\" \
                     (available: \"contiguous\")"
                )))
            }
        };
        let caps = NodeCapacity::from_network(network);
        let (dist, map) = partitioner.partition(&lowered.circuit, &caps, scheme)?;
        let mut placement = String::new();
        for (logical, (node, pos)) in map.iter() {
            let _ = write!(placement, " q{logical}->{pos}@{}", network.node_name(node));
        }
        notes.push(format!(
            "partitioned {} logical qubit(s) with \"{}\":{placement}",
            lowered.circuit.num_qubits,
            partitioner.name()
        ));
        Ok(dist)
    } else {
        Ok(parse_distributed(&text)?)
    }
}

/// Assemble a scenario: build the machine, load and compile the circuit,
/// and resolve the run parameters. `base_dir` anchors relative
/// `circuit_file` paths; `circuit_override` (from `--circuit`) replaces the
/// configured circuit source.
pub fn build_scenario(
    config: ScenarioConfig,
    base_dir: &Path,
    circuit_override: Option<&Path>,
) -> Result<Scenario, ScenarioError> {
    let hw = &config.hardware;
    let network = build_dqc(
        hw.num_qpus,
        &hw.quantum_topology,
        &hw.classical_topology,
        hw.qpu.clone(),
        hw.connection.to_config()?,
        hw.classical_delay_ns,
    )?;
    let scheme: Scheme = config
        .software
        .default_scheme
        .parse()
        .map_err(|e: String| ScenarioError::Invalid(format!("software.default_scheme: {e}")))?;
    let mut notes = Vec::new();
    let circuit = load_circuit(
        &config,
        base_dir,
        circuit_override,
        &network,
        scheme,
        &mut notes,
    )?;
    let problems = crate::circuit::validate_distributed(&circuit, &network);
    if !problems.is_empty() {
        return Err(ScenarioError::Invalid(format!(
            "circuit does not fit the hardware: {}",
            problems.join("; ")
        )));
    }
    let program = compile(&circuit, &network, scheme)?;
    let formalism = parse_formalism(&config.run.formalism)?;
    if config.run.shots == 0 {
        return Err(ScenarioError::Invalid("run.shots must be >= 1".into()));
    }
    let collector = match &config.run.collector {
        Some(c) => {
            let mut targets = Vec::with_capacity(c.targets.len());
            let mut seen = BTreeSet::new();
            for t in &c.targets {
                let target = parse_target(t, &network)?;
                if !seen.insert(target) {
                    return Err(ScenarioError::Invalid(format!(
                        "run.collector.targets lists `{t}` twice"
                    )));
                }
                targets.push(target);
            }
            let desired: Vec<Amplitude> =
                c.desired_state.iter().map(AmplitudeSpec::to_amplitude).collect();
            Some(
                make_fidelity_collector(targets, desired)
                    .map_err(|e| ScenarioError::Invalid(e.to_string()))?,
            )
        }
        None => None,
    };
    Ok(Scenario {
        seed: config.run.seed,
        shots: config.run.shots,
        formalism,
        config,
        network,
        circuit,
        program,
        collector,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
[hardware]
num_qpus = 3
quantum_topology = [[0, 1], [1, 2]]
classical_topology = [[0, 1], [0, 2], [1, 2]]
classical_delay_ns = 0.0

[hardware.qpu]
num_positions = 4
num_comm_qubits = 2
single_qubit_gate_time = 135e3
two_qubit_gate_time = 600e3
measurement_time = 6e6

[hardware.connection]
ent_dist_rate_hz = 182.0
werner_fidelity = 1.0

[software]
circuit = """
INIT 2@node_0
INIT 2@node_1
H 2@node_0
CNOT 2@node_0 2@node_1 cat
"""

[run]
formalism = "dm"
seed = 7

[run.collector]
targets = ["2@node_0", "2@node_1"]
desired_state = [0.7071067811865476, 0.0, 0.0, 0.7071067811865476]
"#;

    #[test]
    fn full_config_assembles_and_rate_becomes_delay() {
        let cfg = parse_config(BASE, &[]).unwrap();
        let sc = build_scenario(cfg, Path::new("."), None).unwrap();
        assert_eq!(sc.network.num_qpus(), 3);
        assert_eq!(sc.network.quantum_links[0].conn.delay_ns, 1e9 / 182.0);
        assert_eq!(sc.program.ebits, 1);
        assert_eq!(sc.shots, 1);
        let coll = sc.collector.unwrap();
        assert_eq!(coll.targets, vec![(0, 2), (1, 2)]);
    }

    #[test]
    fn delay_and_rate_together_are_rejected() {
        let text = BASE.replace(
            "ent_dist_rate_hz = 182.0",
            "ent_dist_rate_hz = 182.0\ndelay_ns = 5.0",
        );
        let cfg = parse_config(&text, &[]).unwrap();
        let err = build_scenario(cfg, Path::new("."), None).unwrap_err();
        assert!(err.to_string().contains("not both"), "got: {err}");
    }

    #[test]
    fn missing_circuit_source_is_rejected() {
        let start = BASE.find("[software]").unwrap();
        let end = BASE.find("[run]").unwrap();
        let text = format!("{}[software]\n{}", &BASE[..start], &BASE[end..]);
        let cfg = parse_config(&text, &[]).unwrap();
        let err = build_scenario(cfg, Path::new("."), None).unwrap_err();
        assert!(
            err.to_string().contains("circuit_file or circuit"),
            "got: {err}"
        );
    }

    #[test]
    fn overrides_retype_and_navigate() {
        let overrides = [
            "run.formalism=ket".parse().unwrap(),
            "run.seed=99".parse().unwrap(),
            "hardware.qpu.meas_error_prob=3e-3".parse().unwrap(),
        ];
        let cfg = parse_config(BASE, &overrides).unwrap();
        assert_eq!(cfg.run.formalism, "ket");
        assert_eq!(cfg.run.seed, 99);
        assert_eq!(cfg.hardware.qpu.meas_error_prob, 3e-3);
    }

    #[test]
    fn effective_config_round_trips_through_toml() {
        let overrides = ["hardware.qpu.p_depolar_error_cnot=1e-3".parse().unwrap()];
        let cfg = parse_config(BASE, &overrides).unwrap();
        let dumped = cfg.to_toml_string().unwrap();
        let again = parse_config(&dumped, &[]).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = BASE.replace("seed = 7", "seed = 7\nspeed = 9");
        let err = parse_config(&text, &[]).unwrap_err();
        assert!(err.to_string().contains("speed"), "got: {err}");
    }

    #[test]
    fn bad_formalism_and_bad_target_are_rejected() {
        let cfg = parse_config(BASE, &["run.formalism=vector".parse().unwrap()]).unwrap();
        let err = build_scenario(cfg, Path::new("."), None).unwrap_err();
        assert!(err.to_string().contains("\"dm\" or \"ket\""), "got: {err}");

        let text = BASE.replace("\"2@node_1\"", "\"2@node_9\"");
        let cfg = parse_config(&text, &[]).unwrap();
        let err = build_scenario(cfg, Path::new("."), None).unwrap_err();
        assert!(err.to_string().contains("unknown node"), "got: {err}");
    }

    #[test]
    fn qasm_circuit_file_is_partitioned() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("bell.qasm"),
            "OPENQASM 2.0;\ninclude \"qelib1.inc\";\nqreg q[2];\ncreg c[2];\n\
             h q[0];\ncx q[0],q[1];\n",
        )
        .unwrap();
        let mut cfg = parse_config(BASE, &[]).unwrap();
        cfg.software.circuit = None;
        cfg.software.circuit_file = Some("bell.qasm".into());
        let sc = build_scenario(cfg, dir.path(), None).unwrap();
        // Two processing slots per node: both logical qubits land on node_0,
        // so the CNOT is local and consumes no entanglement.
        assert_eq!(sc.program.ebits, 0);
        assert!(sc.notes.iter().any(|n| n.contains("contiguous")), "{:?}", sc.notes);
    }

    #[test]
    fn amplitude_pairs_parse_as_complex() {
        let text = BASE.replace(
            "desired_state = [0.7071067811865476, 0.0, 0.0, 0.7071067811865476]",
            "desired_state = [[0.7071067811865476, 0.0], 0.0, 0.0, [0.0, 0.7071067811865476]]",
        );
        let cfg = parse_config(&text, &[]).unwrap();
        let c = cfg.run.collector.as_ref().unwrap();
        assert_eq!(
            c.desired_state[3],
            AmplitudeSpec::Complex([0.0, std::f64::consts::FRAC_1_SQRT_2])
        );
        let sc = build_scenario(cfg, Path::new("."), None).unwrap();
        let desired = &sc.collector.unwrap().desired;
        assert_eq!(desired[3], Amplitude::new(0.0, std::f64::consts::FRAC_1_SQRT_2));
    }
}
