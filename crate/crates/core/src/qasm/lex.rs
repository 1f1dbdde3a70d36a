//! Tokenizer for OpenQASM 2.0 source.
//!
//! Produces a flat token stream with line/column positions (1-based) so the
//! parser can point at the offending token in error messages. `//` line
//! comments and whitespace are skipped. Numeric literals are liberal: both
//! `1.5` and exponent-only forms like `1e-7` lex as reals, and bare digit
//! runs lex as integers.

use super::QasmError;

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Ident(String),
    Int(usize),
    Real(f64),
    Str(String),
    LParen,
    RParen,
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Semi,
    Comma,
    Arrow,
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    /// `==` — only appears in `if` statements, which the parser rejects, but
    /// lexing it keeps the error pointed at `if` rather than at a stray `=`.
    EqEq,
    Eof,
}

impl std::fmt::Display for Tok {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Int(v) => write!(f, "`{v}`"),
            Tok::Real(v) => write!(f, "`{v}`"),
            Tok::Str(s) => write!(f, "\"{s}\""),
            Tok::LParen => write!(f, "`(`"),
            Tok::RParen => write!(f, "`)`"),
            Tok::LBrace => write!(f, "`{{`"),
            Tok::RBrace => write!(f, "`}}`"),
            Tok::LBracket => write!(f, "`[`"),
            Tok::RBracket => write!(f, "`]`"),
            Tok::Semi => write!(f, "`;`"),
            Tok::Comma => write!(f, "`,`"),
            Tok::Arrow => write!(f, "`->`"),
            Tok::Plus => write!(f, "`+`"),
            Tok::Minus => write!(f, "`-`"),
            Tok::Star => write!(f, "`*`"),
            Tok::Slash => write!(f, "`/`"),
            Tok::Caret => write!(f, "`^`"),
            Tok::EqEq => write!(f, "`==`"),
            Tok::Eof => write!(f, "end of input"),
        }
    }
}

/// A token with its source position.
#[derive(Debug, Clone)]
pub struct Spanned {
    pub tok: Tok,
    pub line: usize,
    pub col: usize,
}

pub fn lex(source: &str) -> Result<Vec<Spanned>, QasmError> {
    let chars: Vec<char> = source.chars().collect();
    let mut out = Vec::new();
    let mut i = 0usize;
    let mut line = 1usize;
    let mut col = 1usize;
    while i < chars.len() {
        let c = chars[i];
        let (tline, tcol) = (line, col);
        let advance = |i: &mut usize, line: &mut usize, col: &mut usize, n: usize| {
            for _ in 0..n {
                if chars[*i] == '\n' {
                    *line += 1;
                    *col = 1;
                } else {
                    *col += 1;
                }
                *i += 1;
            }
        };
        match c {
            ' ' | '\t' | '\r' | '\n' => {
                advance(&mut i, &mut line, &mut col, 1);
            }
            '/' if i + 1 < chars.len() && chars[i + 1] == '/' => {
                while i < chars.len() && chars[i] != '\n' {
                    advance(&mut i, &mut line, &mut col, 1);
                }
            }
            '"' => {
                advance(&mut i, &mut line, &mut col, 1);
                let start = i;
                while i < chars.len() && chars[i] != '"' && chars[i] != '\n' {
                    advance(&mut i, &mut line, &mut col, 1);
                }
                if i >= chars.len() || chars[i] != '"' {
                    return Err(QasmError::Syntax {
                        line: tline,
                        col: tcol,
                        message: "unterminated string literal".into(),
                    });
                }
                let text: String = chars[start..i].iter().collect();
                advance(&mut i, &mut line, &mut col, 1);
                out.push(Spanned {
                    tok: Tok::Str(text),
                    line: tline,
                    col: tcol,
                });
            }
            '-' if i + 1 < chars.len() && chars[i + 1] == '>' => {
                advance(&mut i, &mut line, &mut col, 2);
                out.push(Spanned {
                    tok: Tok::Arrow,
                    line: tline,
                    col: tcol,
                });
            }
            '=' if i + 1 < chars.len() && chars[i + 1] == '=' => {
                advance(&mut i, &mut line, &mut col, 2);
                out.push(Spanned {
                    tok: Tok::EqEq,
                    line: tline,
                    col: tcol,
                });
            }
            '(' | ')' | '{' | '}' | '[' | ']' | ';' | ',' | '+' | '-' | '*' | '/' | '^' => {
                let tok = match c {
                    '(' => Tok::LParen,
                    ')' => Tok::RParen,
                    '{' => Tok::LBrace,
                    '}' => Tok::RBrace,
                    '[' => Tok::LBracket,
                    ']' => Tok::RBracket,
                    ';' => Tok::Semi,
                    ',' => Tok::Comma,
                    '+' => Tok::Plus,
                    '-' => Tok::Minus,
                    '*' => Tok::Star,
                    '/' => Tok::Slash,
                    _ => Tok::Caret,
                };
                advance(&mut i, &mut line, &mut col, 1);
                out.push(Spanned {
                    tok,
                    line: tline,
                    col: tcol,
                });
            }
            '0'..='9' | '.' => {
                let start = i;
                let mut saw_dot = false;
                let mut saw_exp = false;
                while i < chars.len() {
                    let d = chars[i];
                    if d.is_ascii_digit() {
                        advance(&mut i, &mut line, &mut col, 1);
                    } else if d == '.' && !saw_dot && !saw_exp {
                        saw_dot = true;
                        advance(&mut i, &mut line, &mut col, 1);
                    } else if (d == 'e' || d == 'E') && !saw_exp && i > start {
                        saw_exp = true;
                        advance(&mut i, &mut line, &mut col, 1);
                        if i < chars.len() && (chars[i] == '+' || chars[i] == '-') {
                            advance(&mut i, &mut line, &mut col, 1);
                        }
                    } else {
                        break;
                    }
                }
                let text: String = chars[start..i].iter().collect();
                let tok = if saw_dot || saw_exp {
                    match text.parse::<f64>() {
                        Ok(v) => Tok::Real(v),
                        Err(_) => {
                            return Err(QasmError::Syntax {
                                line: tline,
                                col: tcol,
                                message: format!("invalid number `{text}`"),
                            })
                        }
                    }
                } else {
                    match text.parse::<usize>() {
                        Ok(v) => Tok::Int(v),
                        Err(_) => {
                            return Err(QasmError::Syntax {
                                line: tline,
                                col: tcol,
                                message: format!("invalid integer `{text}`"),
                            })
                        }
                    }
                };
                out.push(Spanned {
                    tok,
                    line: tline,
                    col: tcol,
                });
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len()
                    && (chars[i].is_ascii_alphanumeric() || chars[i] == '_')
                {
                    advance(&mut i, &mut line, &mut col, 1);
                }
                let text: String = chars[start..i].iter().collect();
                out.push(Spanned {
                    tok: Tok::Ident(text),
                    line: tline,
                    col: tcol,
                });
            }
            other => {
                return Err(QasmError::Syntax {
                    line: tline,
                    col: tcol,
                    message: format!("unexpected character `{other}`"),
                });
            }
        }
    }
    out.push(Spanned {
        tok: Tok::Eof,
        line,
        col,
    });
    Ok(out)
}
