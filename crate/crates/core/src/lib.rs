//! `dqsim` — a discrete-event simulator for distributed quantum computers.
//!
//! A distributed quantum computer (DQC) is a set of networked QPUs that
//! execute one logical circuit cooperatively: qubits live in node-local
//! memories, entangling connections distribute ebits between nodes, and
//! remote two-qubit gates are implemented with telegate ("cat") or
//! teleportation-based protocols built from local gates, ebits and classical
//! messages.
//!
//! The crate provides, bottom-up:
//!
//! * [`kernel`] — a deterministic discrete-event scheduling core;
//! * [`qstate`] — state-vector and density-matrix quantum backends with
//!   noise channels, generic over the floating-point [`scalar::Scalar`];
//! * [`hardware`] — QPU, entangling-connection and network descriptions;
//! * [`qasm`] — a parser for a practical OpenQASM 2.0 subset;
//! * [`circuit`] — monolithic and distributed circuit representations plus
//!   partitioning;
//! * [`compiler`] — lowering of distributed circuits to per-QPU instruction
//!   streams, expanding remote gates into protocol steps;
//! * [`runtime`] — the event-driven execution of compiled streams and shot
//!   orchestration;
//! * [`scenario`] — TOML scenario configuration tying everything together;
//! * [`cli`] — the `dqsim` command-line front end.
//!
//! Engine-facing type aliases at the crate root pin the scalar type to `f64`;
//! the quantum math itself also runs at `f32` (see [`scalar`]).

pub mod circuit;
pub mod cli;
pub mod compiler;
pub mod hardware;
pub mod kernel;
pub mod qasm;
pub mod qstate;
pub mod runtime;
pub mod scalar;
pub mod scenario;

pub use kernel::SimTime;

/// Default-precision state store used by the simulation engine.
pub type StateStore = qstate::StateStore<f64>;

/// Complex amplitude at engine precision.
pub type Amplitude = num_complex::Complex<f64>;
