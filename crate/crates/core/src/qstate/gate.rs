//! Gate catalog: the unitaries a circuit can request.
//!
//! Every gate in this set is either a fixed matrix or a parameterized family
//! with `f64` angles. Two-qubit gates take their first operand as the control
//! (most significant bit of the gate's basis index).

use super::math::CMat;
use crate::scalar::{cplx, Scalar};
use std::fmt;
use std::str::FromStr;

/// A concrete quantum gate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GateSpec {
    H,
    X,
    Y,
    Z,
    S,
    Sdg,
    T,
    Tdg,
    Rx(f64),
    Ry(f64),
    Rz(f64),
    /// General single-qubit rotation `U(theta, phi, lambda)`.
    U(f64, f64, f64),
    Cnot,
    Cz,
    Swap,
}

impl GateSpec {
    /// Number of qubit operands the gate acts on.
    pub fn arity(&self) -> usize {
        match self {
            GateSpec::Cnot | GateSpec::Cz | GateSpec::Swap => 2,
            _ => 1,
        }
    }

    /// The gate's unitary matrix at the requested precision.
    pub fn unitary<Sc: Scalar>(&self) -> CMat<Sc> {
        use std::f64::consts::FRAC_1_SQRT_2 as H;
        match *self {
            GateSpec::H => CMat::from_rows_f64(2, &[(H, 0.0), (H, 0.0), (H, 0.0), (-H, 0.0)]),
            GateSpec::X => {
                CMat::from_rows_f64(2, &[(0.0, 0.0), (1.0, 0.0), (1.0, 0.0), (0.0, 0.0)])
            }
            GateSpec::Y => {
                CMat::from_rows_f64(2, &[(0.0, 0.0), (0.0, -1.0), (0.0, 1.0), (0.0, 0.0)])
            }
            GateSpec::Z => {
                CMat::from_rows_f64(2, &[(1.0, 0.0), (0.0, 0.0), (0.0, 0.0), (-1.0, 0.0)])
            }
            GateSpec::S => {
                CMat::from_rows_f64(2, &[(1.0, 0.0), (0.0, 0.0), (0.0, 0.0), (0.0, 1.0)])
            }
            GateSpec::Sdg => {
                CMat::from_rows_f64(2, &[(1.0, 0.0), (0.0, 0.0), (0.0, 0.0), (0.0, -1.0)])
            }
            GateSpec::T => CMat::from_rows_f64(
                2,
                &[(1.0, 0.0), (0.0, 0.0), (0.0, 0.0), (H, H)],
            ),
            GateSpec::Tdg => CMat::from_rows_f64(
                2,
                &[(1.0, 0.0), (0.0, 0.0), (0.0, 0.0), (H, -H)],
            ),
            GateSpec::Rx(t) => {
                let (c, s) = ((t / 2.0).cos(), (t / 2.0).sin());
                CMat::from_rows_f64(2, &[(c, 0.0), (0.0, -s), (0.0, -s), (c, 0.0)])
            }
            GateSpec::Ry(t) => {
                let (c, s) = ((t / 2.0).cos(), (t / 2.0).sin());
                CMat::from_rows_f64(2, &[(c, 0.0), (-s, 0.0), (s, 0.0), (c, 0.0)])
            }
            GateSpec::Rz(t) => {
                let half = t / 2.0;
                CMat::from_rows_f64(
                    2,
                    &[
                        ((-half).cos(), (-half).sin()),
                        (0.0, 0.0),
                        (0.0, 0.0),
                        (half.cos(), half.sin()),
                    ],
                )
            }
            GateSpec::U(theta, phi, lambda) => {
                let (c, s) = ((theta / 2.0).cos(), (theta / 2.0).sin());
                let mut m = CMat::zero(2);
                m.set(0, 0, cplx(c, 0.0));
                m.set(0, 1, cplx(-lambda.cos() * s, -lambda.sin() * s));
                m.set(1, 0, cplx(phi.cos() * s, phi.sin() * s));
                let pl = phi + lambda;
                m.set(1, 1, cplx(pl.cos() * c, pl.sin() * c));
                m
            }
            GateSpec::Cnot => {
                let mut m = CMat::identity(4);
                m.set(2, 2, cplx(0.0, 0.0));
                m.set(3, 3, cplx(0.0, 0.0));
                m.set(2, 3, cplx(1.0, 0.0));
                m.set(3, 2, cplx(1.0, 0.0));
                m
            }
            GateSpec::Cz => {
                let mut m = CMat::identity(4);
                m.set(3, 3, cplx(-1.0, 0.0));
                m
            }
            GateSpec::Swap => {
                let mut m = CMat::identity(4);
                m.set(1, 1, cplx(0.0, 0.0));
                m.set(2, 2, cplx(0.0, 0.0));
                m.set(1, 2, cplx(1.0, 0.0));
                m.set(2, 1, cplx(1.0, 0.0));
                m
            }
        }
    }

    /// For a controlled gate `controlled-V`, the same gate viewed with a new
    /// control qubit (used when a remote control is replaced by an entangled
    /// proxy). Only gates of that shape qualify; `SWAP` does not.
    pub fn with_proxy_control(&self) -> Option<GateSpec> {
        match self {
            GateSpec::Cnot => Some(GateSpec::Cnot),
            GateSpec::Cz => Some(GateSpec::Cz),
            _ => None,
        }
    }
}

impl fmt::Display for GateSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GateSpec::H => write!(f, "H"),
            GateSpec::X => write!(f, "X"),
            GateSpec::Y => write!(f, "Y"),
            GateSpec::Z => write!(f, "Z"),
            GateSpec::S => write!(f, "S"),
            GateSpec::Sdg => write!(f, "SDG"),
            GateSpec::T => write!(f, "T"),
            GateSpec::Tdg => write!(f, "TDG"),
            GateSpec::Rx(t) => write!(f, "RX({t})"),
            GateSpec::Ry(t) => write!(f, "RY({t})"),
            GateSpec::Rz(t) => write!(f, "RZ({t})"),
            GateSpec::U(a, b, c) => write!(f, "U({a},{b},{c})"),
            GateSpec::Cnot => write!(f, "CNOT"),
            GateSpec::Cz => write!(f, "CZ"),
            GateSpec::Swap => write!(f, "SWAP"),
        }
    }
}

/// Error for unrecognized gate names in circuit text.
#[derive(Debug, Clone, thiserror::Error)]
#[error("unknown gate `{0}`")]
pub struct GateParseError(pub String);

impl FromStr for GateSpec {
    type Err = GateParseError;

    /// Parse the circuit-text spelling of a gate, e.g. `H`, `RX(0.5)`,
    /// `U(1.0,2.0,3.0)`. Case-insensitive in the name part.
    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let text = text.trim();
        let (name, args): (&str, Vec<f64>) = match text.find('(') {
            None => (text, Vec::new()),
            Some(open) => {
                if !text.ends_with(')') {
                    return Err(GateParseError(text.to_string()));
                }
                let inner = &text[open + 1..text.len() - 1];
                let mut vals = Vec::new();
                for part in inner.split(',') {
                    match part.trim().parse::<f64>() {
                        Ok(v) => vals.push(v),
                        Err(_) => return Err(GateParseError(text.to_string())),
                    }
                }
                (&text[..open], vals)
            }
        };
        let upper = name.trim().to_ascii_uppercase();
        let gate = match (upper.as_str(), args.len()) {
            ("H", 0) => GateSpec::H,
            ("X", 0) => GateSpec::X,
            ("Y", 0) => GateSpec::Y,
            ("Z", 0) => GateSpec::Z,
            ("S", 0) => GateSpec::S,
            ("SDG", 0) => GateSpec::Sdg,
            ("T", 0) => GateSpec::T,
            ("TDG", 0) => GateSpec::Tdg,
            ("RX", 1) => GateSpec::Rx(args[0]),
            ("RY", 1) => GateSpec::Ry(args[0]),
            ("RZ", 1) => GateSpec::Rz(args[0]),
            ("U", 3) => GateSpec::U(args[0], args[1], args[2]),
            ("CNOT", 0) | ("CX", 0) => GateSpec::Cnot,
            ("CZ", 0) => GateSpec::Cz,
            ("SWAP", 0) => GateSpec::Swap,
            _ => return Err(GateParseError(text.to_string())),
        };
        Ok(gate)
    }
}
