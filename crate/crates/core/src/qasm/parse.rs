//! Recursive-descent parser for the supported OpenQASM 2.0 subset.
//!
//! Accepts: optional `OPENQASM 2.0;` header, `include "qelib1.inc";`,
//! `qreg`/`creg` declarations, user `gate` macros, gate applications with
//! constant parameter expressions, `measure`, and `barrier`. The classical
//! control constructs `if`, `opaque`, and `reset` are rejected with errors
//! naming them.

use super::lex::{lex, Spanned, Tok};
use super::{
    Apply, Expr, Func, GateMacro, MacroStmt, QasmError, QasmProgram, RegRef, Statement,
    StmtKind,
};

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Spanned {
        &self.toks[self.pos]
    }

    fn next(&mut self) -> Spanned {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error_at(&self, t: &Spanned, message: String) -> QasmError {
        QasmError::Syntax {
            line: t.line,
            col: t.col,
            message,
        }
    }

    fn expect(&mut self, want: &Tok, what: &str) -> Result<Spanned, QasmError> {
        let t = self.next();
        if &t.tok == want {
            Ok(t)
        } else {
            Err(self.error_at(&t, format!("expected {what}, found {}", t.tok)))
        }
    }

    fn expect_ident(&mut self, what: &str) -> Result<(String, usize, usize), QasmError> {
        let t = self.next();
        match t.tok {
            Tok::Ident(name) => Ok((name, t.line, t.col)),
            other => Err(QasmError::Syntax {
                line: t.line,
                col: t.col,
                message: format!("expected {what}, found {other}"),
            }),
        }
    }

    fn expect_int(&mut self, what: &str) -> Result<usize, QasmError> {
        let t = self.next();
        match t.tok {
            Tok::Int(v) => Ok(v),
            other => Err(self.error_at(
                &Spanned {
                    tok: other.clone(),
                    line: t.line,
                    col: t.col,
                },
                format!("expected {what}, found {other}"),
            )),
        }
    }

    /// `name` or `name[index]`.
    fn reg_ref(&mut self) -> Result<RegRef, QasmError> {
        let (name, line, col) = self.expect_ident("a register name")?;
        let index = if self.peek().tok == Tok::LBracket {
            self.next();
            let idx = self.expect_int("an index")?;
            self.expect(&Tok::RBracket, "`]`")?;
            Some(idx)
        } else {
            None
        };
        Ok(RegRef {
            name,
            index,
            line,
            col,
        })
    }

    fn reg_ref_list(&mut self) -> Result<Vec<RegRef>, QasmError> {
        let mut refs = vec![self.reg_ref()?];
        while self.peek().tok == Tok::Comma {
            self.next();
            refs.push(self.reg_ref()?);
        }
        Ok(refs)
    }

    // Expression grammar: `expr := term (('+'|'-') term)*`,
    // `term := pow (('*'|'/') pow)*`, `pow := unary ('^' pow)?`,
    // `unary := '-' unary | atom`.
    fn expr(&mut self) -> Result<Expr, QasmError> {
        let mut left = self.term()?;
        loop {
            match self.peek().tok {
                Tok::Plus => {
                    self.next();
                    left = Expr::Add(Box::new(left), Box::new(self.term()?));
                }
                Tok::Minus => {
                    self.next();
                    left = Expr::Sub(Box::new(left), Box::new(self.term()?));
                }
                _ => return Ok(left),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, QasmError> {
        let mut left = self.pow()?;
        loop {
            match self.peek().tok {
                Tok::Star => {
                    self.next();
                    left = Expr::Mul(Box::new(left), Box::new(self.pow()?));
                }
                Tok::Slash => {
                    self.next();
                    left = Expr::Div(Box::new(left), Box::new(self.pow()?));
                }
                _ => return Ok(left),
            }
        }
    }

    fn pow(&mut self) -> Result<Expr, QasmError> {
        let base = self.unary()?;
        if self.peek().tok == Tok::Caret {
            self.next();
            // Right-associative.
            let exp = self.pow()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn unary(&mut self) -> Result<Expr, QasmError> {
        if self.peek().tok == Tok::Minus {
            self.next();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Expr, QasmError> {
        let t = self.next();
        match t.tok {
            Tok::Real(v) => Ok(Expr::Num(v)),
            Tok::Int(v) => Ok(Expr::Num(v as f64)),
            Tok::LParen => {
                let inner = self.expr()?;
                self.expect(&Tok::RParen, "`)`")?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                if name == "pi" {
                    return Ok(Expr::Pi);
                }
                let func = match name.as_str() {
                    "sin" => Some(Func::Sin),
                    "cos" => Some(Func::Cos),
                    "tan" => Some(Func::Tan),
                    "exp" => Some(Func::Exp),
                    "ln" => Some(Func::Ln),
                    "sqrt" => Some(Func::Sqrt),
                    _ => None,
                };
                match func {
                    Some(f) => {
                        self.expect(&Tok::LParen, "`(`")?;
                        let arg = self.expr()?;
                        self.expect(&Tok::RParen, "`)`")?;
                        Ok(Expr::Call(f, Box::new(arg)))
                    }
                    None => Ok(Expr::Param {
                        name,
                        line: t.line,
                        col: t.col,
                    }),
                }
            }
            other => Err(QasmError::Syntax {
                line: t.line,
                col: t.col,
                message: format!("expected an expression, found {other}"),
            }),
        }
    }

    fn expr_list(&mut self) -> Result<Vec<Expr>, QasmError> {
        let mut exprs = vec![self.expr()?];
        while self.peek().tok == Tok::Comma {
            self.next();
            exprs.push(self.expr()?);
        }
        Ok(exprs)
    }

    /// `name (params)? args ;` where args are bare identifiers (gate-body
    /// form) — used inside `gate { ... }` blocks.
    fn macro_body(&mut self) -> Result<Vec<MacroStmt>, QasmError> {
        let mut body = Vec::new();
        loop {
            let t = self.peek().clone();
            match &t.tok {
                Tok::RBrace => {
                    self.next();
                    return Ok(body);
                }
                Tok::Ident(name) if name == "barrier" => {
                    self.next();
                    // Operands of an in-body barrier are bare identifiers.
                    let _ = self.reg_ref_list()?;
                    self.expect(&Tok::Semi, "`;`")?;
                    body.push(MacroStmt::Barrier);
                }
                Tok::Ident(name) if matches!(name.as_str(), "measure" | "reset" | "if") => {
                    return Err(QasmError::Unsupported {
                        line: t.line,
                        col: t.col,
                        construct: name.clone(),
                        message: "not allowed inside a gate body".into(),
                    });
                }
                Tok::Ident(_) => {
                    let (name, line, col) = self.expect_ident("a gate name")?;
                    let params = if self.peek().tok == Tok::LParen {
                        self.next();
                        let list = if self.peek().tok == Tok::RParen {
                            Vec::new()
                        } else {
                            self.expr_list()?
                        };
                        self.expect(&Tok::RParen, "`)`")?;
                        list
                    } else {
                        Vec::new()
                    };
                    let mut args = Vec::new();
                    loop {
                        let (arg, aline, acol) = self.expect_ident("a qubit argument")?;
                        if self.peek().tok == Tok::LBracket {
                            let t = self.peek().clone();
                            return Err(QasmError::Syntax {
                                line: t.line,
                                col: t.col,
                                message: format!(
                                    "indexing `{arg}[...]` is not allowed inside a gate body \
                                     (line {aline}, column {acol} argument)"
                                ),
                            });
                        }
                        args.push(arg);
                        if self.peek().tok == Tok::Comma {
                            self.next();
                        } else {
                            break;
                        }
                    }
                    self.expect(&Tok::Semi, "`;`")?;
                    body.push(MacroStmt::Apply(Apply {
                        name,
                        params,
                        args: args
                            .into_iter()
                            .map(|name| RegRef {
                                name,
                                index: None,
                                line,
                                col,
                            })
                            .collect(),
                        line,
                        col,
                    }));
                }
                other => {
                    return Err(QasmError::Syntax {
                        line: t.line,
                        col: t.col,
                        message: format!("expected a gate application or `}}`, found {other}"),
                    })
                }
            }
        }
    }
}

/// Parse OpenQASM 2.0 source into a [`QasmProgram`].
pub fn parse_qasm(source: &str) -> Result<QasmProgram, QasmError> {
    let toks = lex(source)?;
    let mut p = Parser { toks, pos: 0 };
    let mut prog = QasmProgram {
        qregs: Vec::new(),
        cregs: Vec::new(),
        macros: Vec::new(),
        statements: Vec::new(),
        includes: Vec::new(),
    };
    // Optional version header.
    if let Tok::Ident(name) = &p.peek().tok {
        if name == "OPENQASM" {
            let t = p.next();
            let version = p.next();
            match version.tok {
                Tok::Real(2.0) => {}
                Tok::Real(v) => {
                    return Err(QasmError::Unsupported {
                        line: version.line,
                        col: version.col,
                        construct: format!("OPENQASM {v}"),
                        message: "only version 2.0 is supported".into(),
                    });
                }
                other => {
                    return Err(p.error_at(
                        &Spanned {
                            tok: other.clone(),
                            line: version.line,
                            col: version.col,
                        },
                        format!("expected a version number after OPENQASM, found {other}"),
                    ));
                }
            }
            let _ = t;
            p.expect(&Tok::Semi, "`;`")?;
        }
    }
    loop {
        let t = p.peek().clone();
        let (line, col) = (t.line, t.col);
        match &t.tok {
            Tok::Eof => break,
            Tok::Ident(word) => match word.as_str() {
                "include" => {
                    p.next();
                    let file = p.next();
                    let name = match file.tok {
                        Tok::Str(s) => s,
                        other => {
                            return Err(QasmError::Syntax {
                                line: file.line,
                                col: file.col,
                                message: format!("expected a file name string, found {other}"),
                            })
                        }
                    };
                    if name != "qelib1.inc" {
                        return Err(QasmError::Unsupported {
                            line,
                            col,
                            construct: format!("include \"{name}\""),
                            message: "only the builtin \"qelib1.inc\" is available".into(),
                        });
                    }
                    p.expect(&Tok::Semi, "`;`")?;
                    prog.includes.push(name);
                }
                "qreg" | "creg" => {
                    let kind = word.clone();
                    p.next();
                    let (name, nline, ncol) = p.expect_ident("a register name")?;
                    p.expect(&Tok::LBracket, "`[`")?;
                    let size = p.expect_int("a register size")?;
                    p.expect(&Tok::RBracket, "`]`")?;
                    p.expect(&Tok::Semi, "`;`")?;
                    if size == 0 {
                        return Err(QasmError::Semantic {
                            line: nline,
                            col: ncol,
                            message: format!("register `{name}` must have size >= 1"),
                        });
                    }
                    let taken = prog.qregs.iter().any(|(n, _)| n == &name)
                        || prog.cregs.iter().any(|(n, _)| n == &name);
                    if taken {
                        return Err(QasmError::Semantic {
                            line: nline,
                            col: ncol,
                            message: format!("register `{name}` is already declared"),
                        });
                    }
                    if kind == "qreg" {
                        prog.qregs.push((name, size));
                    } else {
                        prog.cregs.push((name, size));
                    }
                }
                "gate" => {
                    p.next();
                    let (name, nline, ncol) = p.expect_ident("a gate name")?;
                    let params = if p.peek().tok == Tok::LParen {
                        p.next();
                        let mut list = Vec::new();
                        if p.peek().tok != Tok::RParen {
                            loop {
                                list.push(p.expect_ident("a parameter name")?.0);
                                if p.peek().tok == Tok::Comma {
                                    p.next();
                                } else {
                                    break;
                                }
                            }
                        }
                        p.expect(&Tok::RParen, "`)`")?;
                        list
                    } else {
                        Vec::new()
                    };
                    let mut args = Vec::new();
                    loop {
                        args.push(p.expect_ident("a qubit argument")?.0);
                        if p.peek().tok == Tok::Comma {
                            p.next();
                        } else {
                            break;
                        }
                    }
                    p.expect(&Tok::LBrace, "`{`")?;
                    let body = p.macro_body()?;
                    prog.macros.push(GateMacro {
                        name,
                        params,
                        args,
                        body,
                        line: nline,
                        col: ncol,
                    });
                }
                "measure" => {
                    p.next();
                    let src = p.reg_ref()?;
                    p.expect(&Tok::Arrow, "`->`")?;
                    let dst = p.reg_ref()?;
                    p.expect(&Tok::Semi, "`;`")?;
                    prog.statements.push(Statement {
                        kind: StmtKind::Measure { src, dst },
                        line,
                        col,
                        macros_visible: prog.macros.len(),
                    });
                }
                "barrier" => {
                    p.next();
                    let args = p.reg_ref_list()?;
                    p.expect(&Tok::Semi, "`;`")?;
                    prog.statements.push(Statement {
                        kind: StmtKind::Barrier(args),
                        line,
                        col,
                        macros_visible: prog.macros.len(),
                    });
                }
                "if" | "opaque" | "reset" => {
                    return Err(QasmError::Unsupported {
                        line,
                        col,
                        construct: word.clone(),
                        message: match word.as_str() {
                            "if" => "classical control flow is not supported".into(),
                            "opaque" => "opaque gate declarations are not supported".into(),
                            _ => "mid-circuit reset is not supported".into(),
                        },
                    });
                }
                _ => {
                    // Gate application statement.
                    let (name, aline, acol) = p.expect_ident("a gate name")?;
                    let params = if p.peek().tok == Tok::LParen {
                        p.next();
                        let list = if p.peek().tok == Tok::RParen {
                            Vec::new()
                        } else {
                            p.expr_list()?
                        };
                        p.expect(&Tok::RParen, "`)`")?;
                        list
                    } else {
                        Vec::new()
                    };
                    let args = p.reg_ref_list()?;
                    p.expect(&Tok::Semi, "`;`")?;
                    prog.statements.push(Statement {
                        kind: StmtKind::Apply(Apply {
                            name,
                            params,
                            args,
                            line: aline,
                            col: acol,
                        }),
                        line: aline,
                        col: acol,
                        macros_visible: prog.macros.len(),
                    });
                }
            },
            other => {
                return Err(QasmError::Syntax {
                    line,
                    col,
                    message: format!("expected a statement, found {other}"),
                });
            }
        }
    }
    Ok(prog)
}
