//! Lowering from a parsed [`QasmProgram`] to a [`MonoCircuit`], plus the
//! reverse direction ([`unparse`]).
//!
//! All quantum registers are flattened into one global qubit index space in
//! declaration order; classical registers likewise. Gate macros are expanded
//! bottom-out into the primitive gate set. The qelib1 standard library is
//! built in: its single- and two-qubit primitives map directly onto
//! [`GateSpec`], and its composite gates (`cy`, `ch`, `ccx`, `crz`, `cu1`,
//! `cu3`) are provided as pre-parsed macros that are always in scope.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::OnceLock;

use crate::circuit::{MonoCircuit, MonoOp};
use crate::qstate::GateSpec;

use super::parse::parse_qasm;
use super::{Apply, Expr, Func, GateMacro, MacroStmt, QasmError, QasmProgram, RegRef, StmtKind};

/// Result of lowering: the flattened circuit plus human-readable notes about
/// constructs that were accepted but had no effect (dropped barriers).
#[derive(Debug, Clone)]
pub struct Lowered {
    pub circuit: MonoCircuit,
    pub notes: Vec<String>,
}

/// qelib1 composite gates, defined in terms of the primitive set.
const BUILTIN_MACRO_SRC: &str = "\
gate cy a,b { sdg b; cx a,b; s b; }
gate ch a,b { h b; sdg b; cx a,b; h b; t b; cx a,b; t b; h b; s b; x b; s a; }
gate ccx a,b,c { h c; cx b,c; tdg c; cx a,c; t c; cx b,c; tdg c; cx a,c; t b; t c; h c; cx a,b; t a; tdg b; cx a,b; }
gate crz(lambda) a,b { u1(lambda/2) b; cx a,b; u1(-lambda/2) b; cx a,b; }
gate cu1(lambda) a,b { u1(lambda/2) a; cx a,b; u1(-lambda/2) b; cx a,b; u1(lambda/2) b; }
gate cu3(theta,phi,lambda) c,t { u1((lambda+phi)/2) c; u1((lambda-phi)/2) t; cx c,t; u3(-theta/2,0,-(phi+lambda)/2) t; cx c,t; u3(theta/2,phi,0) t; }
";

fn builtin_macros() -> &'static [GateMacro] {
    static MACROS: OnceLock<Vec<GateMacro>> = OnceLock::new();
    MACROS.get_or_init(|| {
        parse_qasm(BUILTIN_MACRO_SRC)
            .expect("embedded qelib1 source is valid")
            .macros
    })
}

/// `(parameter count, qubit count)` for a primitive gate name, or `None` if
/// the name is not a primitive.
fn primitive_shape(name: &str) -> Option<(usize, usize)> {
    Some(match name {
        "U" | "u3" => (3, 1),
        "u2" => (2, 1),
        "u1" | "rx" | "ry" | "rz" => (1, 1),
        "id" | "x" | "y" | "z" | "h" | "s" | "sdg" | "t" | "tdg" => (0, 1),
        "CX" | "cx" | "cz" | "swap" => (0, 2),
        _ => return None,
    })
}

fn make_primitive(name: &str, p: &[f64]) -> GateSpec {
    match name {
        "U" | "u3" => GateSpec::U(p[0], p[1], p[2]),
        "u2" => GateSpec::U(std::f64::consts::FRAC_PI_2, p[0], p[1]),
        "u1" => GateSpec::U(0.0, 0.0, p[0]),
        "id" => GateSpec::U(0.0, 0.0, 0.0),
        "x" => GateSpec::X,
        "y" => GateSpec::Y,
        "z" => GateSpec::Z,
        "h" => GateSpec::H,
        "s" => GateSpec::S,
        "sdg" => GateSpec::Sdg,
        "t" => GateSpec::T,
        "tdg" => GateSpec::Tdg,
        "rx" => GateSpec::Rx(p[0]),
        "ry" => GateSpec::Ry(p[0]),
        "rz" => GateSpec::Rz(p[0]),
        "CX" | "cx" => GateSpec::Cnot,
        "cz" => GateSpec::Cz,
        "swap" => GateSpec::Swap,
        _ => unreachable!("primitive_shape gated this"),
    }
}

/// Evaluate a constant parameter expression. `env` holds macro parameter
/// bindings; at top level it is empty, so any bare identifier is an error.
fn eval(
    expr: &Expr,
    env: &HashMap<String, f64>,
    line: usize,
    col: usize,
) -> Result<f64, QasmError> {
    let v = eval_inner(expr, env)?;
    if !v.is_finite() {
        return Err(QasmError::Semantic {
            line,
            col,
            message: "parameter expression does not evaluate to a finite number".into(),
        });
    }
    Ok(v)
}

fn eval_inner(expr: &Expr, env: &HashMap<String, f64>) -> Result<f64, QasmError> {
    Ok(match expr {
        Expr::Num(v) => *v,
        Expr::Pi => std::f64::consts::PI,
        Expr::Param { name, line, col } => match env.get(name) {
            Some(v) => *v,
            None => {
                return Err(QasmError::Semantic {
                    line: *line,
                    col: *col,
                    message: format!(
                        "non-constant parameter `{name}`: only numeric constants, `pi`, \
                         arithmetic, and (inside gate bodies) declared gate parameters \
                         are allowed"
                    ),
                })
            }
        },
        Expr::Neg(e) => -eval_inner(e, env)?,
        Expr::Add(a, b) => eval_inner(a, env)? + eval_inner(b, env)?,
        Expr::Sub(a, b) => eval_inner(a, env)? - eval_inner(b, env)?,
        Expr::Mul(a, b) => eval_inner(a, env)? * eval_inner(b, env)?,
        Expr::Div(a, b) => eval_inner(a, env)? / eval_inner(b, env)?,
        Expr::Pow(a, b) => eval_inner(a, env)?.powf(eval_inner(b, env)?),
        Expr::Call(f, e) => {
            let x = eval_inner(e, env)?;
            match f {
                Func::Sin => x.sin(),
                Func::Cos => x.cos(),
                Func::Tan => x.tan(),
                Func::Exp => x.exp(),
                Func::Ln => x.ln(),
                Func::Sqrt => x.sqrt(),
            }
        }
    })
}

/// Flattened register layout: `(name, size, offset)` per register.
struct Layout {
    regs: Vec<(String, usize, usize)>,
    total: usize,
    kind: &'static str,
}

impl Layout {
    fn build(decls: &[(String, usize)], kind: &'static str) -> Self {
        let mut regs = Vec::with_capacity(decls.len());
        let mut offset = 0;
        for (name, size) in decls {
            regs.push((name.clone(), *size, offset));
            offset += size;
        }
        Layout {
            regs,
            total: offset,
            kind,
        }
    }

    /// Resolve a reference to flat indices: one index for `r[i]`, the whole
    /// range for a bare `r`. The bool is true for the broadcast (whole) form.
    fn resolve(&self, r: &RegRef) -> Result<(Vec<usize>, bool), QasmError> {
        let Some((_, size, offset)) = self.regs.iter().find(|(n, _, _)| n == &r.name) else {
            return Err(QasmError::Semantic {
                line: r.line,
                col: r.col,
                message: format!("unknown {} register `{}`", self.kind, r.name),
            });
        };
        match r.index {
            Some(idx) => {
                if idx >= *size {
                    return Err(QasmError::Semantic {
                        line: r.line,
                        col: r.col,
                        message: format!(
                            "index {idx} is out of range for register `{}` of size {size}",
                            r.name
                        ),
                    });
                }
                Ok((vec![offset + idx], false))
            }
            None => Ok(((*offset..offset + size).collect(), true)),
        }
    }
}

struct Lowering<'a> {
    prog: &'a QasmProgram,
    qubits: Layout,
    cbits: Layout,
    ops: Vec<MonoOp>,
    barriers_dropped: usize,
}

impl Lowering<'_> {
    /// Expand one gate application (already resolved to concrete qubits)
    /// into primitive ops. `visible` bounds which user macros may be called:
    /// only those with declaration index `< visible`.
    #[allow(clippy::too_many_arguments)]
    fn expand(
        &mut self,
        name: &str,
        params: &[f64],
        qubits: &[usize],
        visible: usize,
        line: usize,
        col: usize,
        depth: usize,
    ) -> Result<(), QasmError> {
        if depth > 64 {
            return Err(QasmError::Semantic {
                line,
                col,
                message: format!("gate `{name}` expands too deeply (limit 64 levels)"),
            });
        }
        let check_shape = |n_params: usize, n_qubits: usize| -> Result<(), QasmError> {
            if params.len() != n_params {
                return Err(QasmError::Semantic {
                    line,
                    col,
                    message: format!(
                        "gate `{name}` takes {n_params} parameter(s), got {}",
                        params.len()
                    ),
                });
            }
            if qubits.len() != n_qubits {
                return Err(QasmError::Semantic {
                    line,
                    col,
                    message: format!(
                        "gate `{name}` takes {n_qubits} qubit argument(s), got {}",
                        qubits.len()
                    ),
                });
            }
            Ok(())
        };
        for (i, a) in qubits.iter().enumerate() {
            if qubits[..i].contains(a) {
                return Err(QasmError::Semantic {
                    line,
                    col,
                    message: format!("gate `{name}` applied to the same qubit twice"),
                });
            }
        }
        if let Some((n_params, n_qubits)) = primitive_shape(name) {
            check_shape(n_params, n_qubits)?;
            self.ops.push(MonoOp::Gate {
                gate: make_primitive(name, params),
                qubits: qubits.to_vec(),
            });
            return Ok(());
        }
        let (mac, next_visible) =
            if let Some(m) = builtin_macros().iter().find(|m| m.name == name) {
                // Builtin bodies use only primitives, never user macros.
                (m, 0)
            } else if let Some((i, m)) = self
                .prog
                .macros
                .iter()
                .enumerate()
                .find(|(_, m)| m.name == name)
            {
                if i >= visible {
                    return Err(QasmError::Semantic {
                        line,
                        col,
                        message: format!(
                            "gate `{name}` is used before its definition at line {}; \
                             OpenQASM 2.0 requires gates to be defined before use (this \
                             also rules out recursive gates)",
                            m.line
                        ),
                    });
                }
                (m, i)
            } else {
                return Err(QasmError::Semantic {
                    line,
                    col,
                    message: format!("unknown gate `{name}`"),
                });
            };
        check_shape(mac.params.len(), mac.args.len())?;
        let env: HashMap<String, f64> = mac
            .params
            .iter()
            .cloned()
            .zip(params.iter().copied())
            .collect();
        let mac = mac.clone();
        for stmt in &mac.body {
            match stmt {
                MacroStmt::Barrier => self.barriers_dropped += 1,
                MacroStmt::Apply(app) => {
                    let mut sub_params = Vec::with_capacity(app.params.len());
                    for e in &app.params {
                        sub_params.push(eval(e, &env, app.line, app.col)?);
                    }
                    let mut sub_qubits = Vec::with_capacity(app.args.len());
                    for arg in &app.args {
                        let Some(pos) = mac.args.iter().position(|a| a == &arg.name) else {
                            return Err(QasmError::Semantic {
                                line: arg.line,
                                col: arg.col,
                                message: format!(
                                    "unknown qubit `{}` in body of gate `{}`",
                                    arg.name, mac.name
                                ),
                            });
                        };
                        sub_qubits.push(qubits[pos]);
                    }
                    self.expand(
                        &app.name,
                        &sub_params,
                        &sub_qubits,
                        next_visible,
                        app.line,
                        app.col,
                        depth + 1,
                    )?;
                }
            }
        }
        Ok(())
    }

    fn lower_apply(&mut self, app: &Apply, visible: usize) -> Result<(), QasmError> {
        let empty = HashMap::new();
        let mut params = Vec::with_capacity(app.params.len());
        for e in &app.params {
            params.push(eval(e, &empty, app.line, app.col)?);
        }
        let mut resolved = Vec::with_capacity(app.args.len());
        let mut bcast_size: Option<usize> = None;
        for arg in &app.args {
            let (indices, broadcast) = self.qubits.resolve(arg)?;
            if broadcast {
                match bcast_size {
                    None => bcast_size = Some(indices.len()),
                    Some(n) if n == indices.len() => {}
                    Some(n) => {
                        return Err(QasmError::Semantic {
                            line: arg.line,
                            col: arg.col,
                            message: format!(
                                "broadcast register `{}` has size {}, but an earlier \
                                 broadcast argument has size {n}",
                                arg.name,
                                indices.len()
                            ),
                        });
                    }
                }
            }
            resolved.push((indices, broadcast));
        }
        let reps = bcast_size.unwrap_or(1);
        for k in 0..reps {
            let qubits: Vec<usize> = resolved
                .iter()
                .map(|(indices, broadcast)| if *broadcast { indices[k] } else { indices[0] })
                .collect();
            self.expand(&app.name, &params, &qubits, visible, app.line, app.col, 0)?;
        }
        Ok(())
    }

    fn lower_measure(&mut self, src: &RegRef, dst: &RegRef) -> Result<(), QasmError> {
        let (qs, q_bcast) = self.qubits.resolve(src)?;
        let (cs, c_bcast) = self.cbits.resolve(dst)?;
        if q_bcast != c_bcast {
            return Err(QasmError::Semantic {
                line: src.line,
                col: src.col,
                message: "measure requires both sides indexed, or both whole registers".into(),
            });
        }
        if qs.len() != cs.len() {
            return Err(QasmError::Semantic {
                line: src.line,
                col: src.col,
                message: format!(
                    "measure of register `{}` (size {}) into `{}` (size {}): sizes must match",
                    src.name,
                    qs.len(),
                    dst.name,
                    cs.len()
                ),
            });
        }
        for (q, c) in qs.into_iter().zip(cs) {
            self.ops.push(MonoOp::Measure { qubit: q, cbit: c });
        }
        Ok(())
    }
}

/// Check a macro declaration for internal consistency, independent of use.
fn validate_macro(prog: &QasmProgram, i: usize) -> Result<(), QasmError> {
    let m = &prog.macros[i];
    let clash = primitive_shape(&m.name).is_some()
        || builtin_macros().iter().any(|b| b.name == m.name)
        || prog.macros[..i].iter().any(|p| p.name == m.name);
    if clash {
        return Err(QasmError::Semantic {
            line: m.line,
            col: m.col,
            message: format!("gate `{}` is already defined", m.name),
        });
    }
    for (j, p) in m.params.iter().enumerate() {
        if m.params[..j].contains(p) {
            return Err(QasmError::Semantic {
                line: m.line,
                col: m.col,
                message: format!("duplicate parameter `{p}` in gate `{}`", m.name),
            });
        }
    }
    for (j, a) in m.args.iter().enumerate() {
        if m.args[..j].contains(a) {
            return Err(QasmError::Semantic {
                line: m.line,
                col: m.col,
                message: format!("duplicate qubit argument `{a}` in gate `{}`", m.name),
            });
        }
    }
    for stmt in &m.body {
        if let MacroStmt::Apply(app) = stmt {
            for arg in &app.args {
                if !m.args.contains(&arg.name) {
                    return Err(QasmError::Semantic {
                        line: arg.line,
                        col: arg.col,
                        message: format!(
                            "unknown qubit `{}` in body of gate `{}`",
                            arg.name, m.name
                        ),
                    });
                }
            }
            for e in &app.params {
                check_expr_params(e, &m.params, &m.name)?;
            }
        }
    }
    Ok(())
}

fn check_expr_params(expr: &Expr, params: &[String], gate: &str) -> Result<(), QasmError> {
    match expr {
        Expr::Param { name, line, col } => {
            if !params.iter().any(|p| p == name) {
                return Err(QasmError::Semantic {
                    line: *line,
                    col: *col,
                    message: format!("unknown parameter `{name}` in body of gate `{gate}`"),
                });
            }
        }
        Expr::Neg(e) | Expr::Call(_, e) => check_expr_params(e, params, gate)?,
        Expr::Add(a, b)
        | Expr::Sub(a, b)
        | Expr::Mul(a, b)
        | Expr::Div(a, b)
        | Expr::Pow(a, b) => {
            check_expr_params(a, params, gate)?;
            check_expr_params(b, params, gate)?;
        }
        Expr::Num(_) | Expr::Pi => {}
    }
    Ok(())
}

/// Lower a parsed program to a flat circuit over the primitive gate set.
pub fn lower_to_circuit(prog: &QasmProgram) -> Result<Lowered, QasmError> {
    for i in 0..prog.macros.len() {
        validate_macro(prog, i)?;
    }
    let mut l = Lowering {
        prog,
        qubits: Layout::build(&prog.qregs, "quantum"),
        cbits: Layout::build(&prog.cregs, "classical"),
        ops: Vec::new(),
        barriers_dropped: 0,
    };
    for stmt in &prog.statements {
        match &stmt.kind {
            StmtKind::Barrier(_) => l.barriers_dropped += 1,
            StmtKind::Apply(app) => l.lower_apply(app, stmt.macros_visible)?,
            StmtKind::Measure { src, dst } => l.lower_measure(src, dst)?,
        }
    }
    let mut notes = Vec::new();
    if l.barriers_dropped > 0 {
        notes.push(format!(
            "dropped {} barrier(s): instructions already execute in program order",
            l.barriers_dropped
        ));
    }
    Ok(Lowered {
        circuit: MonoCircuit {
            num_qubits: l.qubits.total,
            num_cbits: l.cbits.total,
            ops: l.ops,
        },
        notes,
    })
}

fn qasm_gate_name(gate: &GateSpec) -> (String, Vec<f64>) {
    match gate {
        GateSpec::H => ("h".into(), vec![]),
        GateSpec::X => ("x".into(), vec![]),
        GateSpec::Y => ("y".into(), vec![]),
        GateSpec::Z => ("z".into(), vec![]),
        GateSpec::S => ("s".into(), vec![]),
        GateSpec::Sdg => ("sdg".into(), vec![]),
        GateSpec::T => ("t".into(), vec![]),
        GateSpec::Tdg => ("tdg".into(), vec![]),
        GateSpec::Rx(a) => ("rx".into(), vec![*a]),
        GateSpec::Ry(a) => ("ry".into(), vec![*a]),
        GateSpec::Rz(a) => ("rz".into(), vec![*a]),
        GateSpec::U(a, b, c) => ("u3".into(), vec![*a, *b, *c]),
        GateSpec::Cnot => ("cx".into(), vec![]),
        GateSpec::Cz => ("cz".into(), vec![]),
        GateSpec::Swap => ("swap".into(), vec![]),
    }
}

/// Render a circuit back to OpenQASM 2.0 text with canonical registers
/// `q` and `c`. Floating-point parameters are printed in shortest
/// round-trip form, so `lower(parse(unparse(c)))` reproduces `c` exactly.
pub fn unparse(circuit: &MonoCircuit) -> String {
    let mut out = String::from("OPENQASM 2.0;\ninclude \"qelib1.inc\";\n");
    if circuit.num_qubits > 0 {
        let _ = writeln!(out, "qreg q[{}];", circuit.num_qubits);
    }
    if circuit.num_cbits > 0 {
        let _ = writeln!(out, "creg c[{}];", circuit.num_cbits);
    }
    for op in &circuit.ops {
        match op {
            MonoOp::Gate { gate, qubits } => {
                let (name, params) = qasm_gate_name(gate);
                out.push_str(&name);
                if !params.is_empty() {
                    let rendered: Vec<String> =
                        params.iter().map(|v| format!("{v:?}")).collect();
                    let _ = write!(out, "({})", rendered.join(","));
                }
                let args: Vec<String> = qubits.iter().map(|q| format!("q[{q}]")).collect();
                let _ = writeln!(out, " {};", args.join(","));
            }
            MonoOp::Measure { qubit, cbit } => {
                let _ = writeln!(out, "measure q[{qubit}] -> c[{cbit}];");
            }
        }
    }
    out
}
