//! OpenQASM 2.0 frontend: parse a practical subset of the language and
//! lower it to a [`MonoCircuit`](crate::circuit::MonoCircuit).
//!
//! Supported: the `OPENQASM 2.0;` header (optional), `include "qelib1.inc";`
//! (the standard gate library is built in, so the include is recognized and
//! satisfied internally), `qreg`/`creg` declarations, gate applications with
//! constant parameter expressions, whole-register broadcast, user-defined
//! `gate` macros (define-before-use), `measure`, and `barrier` (dropped with
//! a note, since the simulator schedules instructions in program order
//! already). Unsupported constructs — `if`, `opaque`, `reset`, includes
//! other than qelib1 — fail with errors naming the construct.
//!
//! Lowering flattens all quantum registers into one global index space in
//! declaration order and expands macros bottom-out into the primitive gate
//! set of [`GateSpec`](crate::qstate::GateSpec).

mod lex;
mod lower;
mod parse;

pub use lower::{lower_to_circuit, unparse, Lowered};
pub use parse::parse_qasm;

use thiserror::Error;

/// Failure while parsing or lowering OpenQASM source.
#[derive(Debug, Error)]
pub enum QasmError {
    /// The source text violates the grammar.
    #[error("syntax error at line {line}, column {col}: {message}")]
    Syntax {
        line: usize,
        col: usize,
        message: String,
    },
    /// The construct is valid OpenQASM 2.0 but outside the supported subset.
    #[error("unsupported construct `{construct}` at line {line}, column {col}: {message}")]
    Unsupported {
        line: usize,
        col: usize,
        construct: String,
        message: String,
    },
    /// The program is grammatical but inconsistent (bad index, unknown
    /// register, arity mismatch, ...).
    #[error("error at line {line}, column {col}: {message}")]
    Semantic {
        line: usize,
        col: usize,
        message: String,
    },
}

/// A constant arithmetic expression in a gate parameter position.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    /// Numeric literal (integers are widened to `f64`).
    Num(f64),
    /// The constant `pi`.
    Pi,
    /// A named parameter — only meaningful inside a gate macro body.
    Param { name: String, line: usize, col: usize },
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    /// `^` is right-associative.
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

/// Builtin unary functions usable in parameter expressions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Ln,
    Sqrt,
}

/// A register reference: `q` (whole register) or `q[3]` (one element).
#[derive(Debug, Clone, PartialEq)]
pub struct RegRef {
    pub name: String,
    pub index: Option<usize>,
    pub line: usize,
    pub col: usize,
}

/// One gate application: `name(params) args;`.
#[derive(Debug, Clone, PartialEq)]
pub struct Apply {
    pub name: String,
    pub params: Vec<Expr>,
    pub args: Vec<RegRef>,
    pub line: usize,
    pub col: usize,
}

/// A statement in a gate macro body.
#[derive(Debug, Clone, PartialEq)]
pub enum MacroStmt {
    Apply(Apply),
    Barrier,
}

/// A user-defined `gate` declaration.
#[derive(Debug, Clone, PartialEq)]
pub struct GateMacro {
    pub name: String,
    /// Formal parameter names.
    pub params: Vec<String>,
    /// Formal qubit argument names.
    pub args: Vec<String>,
    pub body: Vec<MacroStmt>,
    pub line: usize,
    pub col: usize,
}

/// A top-level circuit statement.
#[derive(Debug, Clone, PartialEq)]
pub enum StmtKind {
    Apply(Apply),
    Measure { src: RegRef, dst: RegRef },
    Barrier(Vec<RegRef>),
}

/// A top-level statement with its source position.
#[derive(Debug, Clone, PartialEq)]
pub struct Statement {
    pub kind: StmtKind,
    pub line: usize,
    pub col: usize,
    /// Number of user macros declared before this statement; a statement may
    /// only call macros below this index (define-before-use).
    pub macros_visible: usize,
}

/// Parsed OpenQASM program, prior to lowering.
#[derive(Debug, Clone, PartialEq)]
pub struct QasmProgram {
    /// Quantum registers in declaration order, `(name, size)`.
    pub qregs: Vec<(String, usize)>,
    /// Classical registers in declaration order, `(name, size)`.
    pub cregs: Vec<(String, usize)>,
    pub macros: Vec<GateMacro>,
    pub statements: Vec<Statement>,
    /// Include files that were recognized (only `qelib1.inc` can appear).
    pub includes: Vec<String>,
}
