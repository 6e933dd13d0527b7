//! Arithmetic expressions over the state `n` and the jump size `i`.
//!
//! Grammar (version 1):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' unary)?          right associative
//! atom   := number | 'n' | 'i' | '(' expr ')'
//! number := digits ('.' digits)?
//! ```
//!
//! Whitespace is ignored. `×` is accepted as a synonym for `*` and `−` for `-`.

use std::fmt;

use crate::error::{Error, Result};

pub const GRAMMAR_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    StateVar,
    JumpVar,
    Neg(Box<Node>),
    Bin(Op, Box<Node>, Box<Node>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

/// A parsed rate formula. Keeps its source text for serialization.
#[derive(Clone, PartialEq)]
pub struct Formula {
    source: String,
    root: Node,
}

impl fmt::Debug for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Formula({:?})", self.source)
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

impl Formula {
    pub fn parse(source: &str) -> Result<Self> {
        let tokens = tokenize(source)?;
        let mut p = Parser { tokens, pos: 0 };
        let root = p.expr()?;
        if let Some(t) = p.tokens.get(p.pos) {
            return Err(Error::Formula {
                column: t.column,
                message: format!("unexpected token {:?}", t.kind),
            });
        }
        Ok(Formula {
            source: source.to_string(),
            root,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn uses_jump_var(&self) -> bool {
        fn walk(n: &Node) -> bool {
            match n {
                Node::JumpVar => true,
                Node::Num(_) | Node::StateVar => false,
                Node::Neg(a) => walk(a),
                Node::Bin(_, a, b) => walk(a) || walk(b),
            }
        }
        walk(&self.root)
    }

    pub fn eval(&self, n: f64, i: f64) -> f64 {
        eval(&self.root, n, i)
    }
}

fn eval(node: &Node, n: f64, i: f64) -> f64 {
    match node {
        Node::Num(v) => *v,
        Node::StateVar => n,
        Node::JumpVar => i,
        Node::Neg(a) => -eval(a, n, i),
        Node::Bin(op, a, b) => {
            let (x, y) = (eval(a, n, i), eval(b, n, i));
            match op {
                Op::Add => x + y,
                Op::Sub => x - y,
                Op::Mul => x * y,
                Op::Div => x / y,
                Op::Pow => {
                    if y.fract() == 0.0 && y.abs() <= i32::MAX as f64 {
                        x.powi(y as i32)
                    } else {
                        libm::pow(x, y)
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TokenKind {
    Num(f64),
    Ident(char),
    Sym(char),
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokenKind,
    column: usize,
}

fn tokenize(src: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < chars.len() {
        let c = chars[pos];
        let column = pos + 1;
        if c.is_whitespace() {
            pos += 1;
        } else if c.is_ascii_digit() {
            let start = pos;
            while pos < chars.len() && chars[pos].is_ascii_digit() {
                pos += 1;
            }
            if pos < chars.len() && chars[pos] == '.' {
                pos += 1;
                let frac_start = pos;
                while pos < chars.len() && chars[pos].is_ascii_digit() {
                    pos += 1;
                }
                if frac_start == pos {
                    return Err(Error::Formula {
                        column: pos + 1,
                        message: "expected digits after '.'".into(),
                    });
                }
            }
            let text: String = chars[start..pos].iter().collect();
            let v = text.parse::<f64>().map_err(|e| Error::Formula {
                column,
                message: e.to_string(),
            })?;
            out.push(Token {
                kind: TokenKind::Num(v),
                column,
            });
        } else if c == 'n' || c == 'i' {
            if pos + 1 < chars.len() && chars[pos + 1].is_alphanumeric() {
                return Err(Error::Formula {
                    column,
                    message: "unknown identifier; only `n` and `i` are defined".into(),
                });
            }
            out.push(Token {
                kind: TokenKind::Ident(c),
                column,
            });
            pos += 1;
        } else {
            let sym = match c {
                '+' | '-' | '*' | '/' | '^' | '(' | ')' => c,
                '×' => '*',
                '−' => '-',
                _ => {
                    return Err(Error::Formula {
                        column,
                        message: format!("unexpected character {c:?}"),
                    })
                }
            };
            out.push(Token {
                kind: TokenKind::Sym(sym),
                column,
            });
            pos += 1;
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek_sym(&self) -> Option<char> {
        match self.tokens.get(self.pos) {
            Some(Token {
                kind: TokenKind::Sym(c),
                ..
            }) => Some(*c),
            _ => None,
        }
    }

    fn column(&self) -> usize {
        self.tokens
            .get(self.pos)
            .map(|t| t.column)
            .unwrap_or_else(|| self.tokens.last().map(|t| t.column + 1).unwrap_or(1))
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        while let Some(c @ ('+' | '-')) = self.peek_sym() {
            self.pos += 1;
            let rhs = self.term()?;
            let op = if c == '+' { Op::Add } else { Op::Sub };
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        while let Some(c @ ('*' | '/')) = self.peek_sym() {
            self.pos += 1;
            let rhs = self.unary()?;
            let op = if c == '*' { Op::Mul } else { Op::Div };
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node> {
        if self.peek_sym() == Some('-') {
            self.pos += 1;
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.atom()?;
        if self.peek_sym() == Some('^') {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Node::Bin(Op::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node> {
        let column = self.column();
        let Some(tok) = self.tokens.get(self.pos).cloned() else {
            return Err(Error::Formula {
                column,
                message: "unexpected end of formula".into(),
            });
        };
        self.pos += 1;
        match tok.kind {
            TokenKind::Num(v) => Ok(Node::Num(v)),
            TokenKind::Ident('n') => Ok(Node::StateVar),
            TokenKind::Ident(_) => Ok(Node::JumpVar),
            TokenKind::Sym('(') => {
                let inner = self.expr()?;
                if self.peek_sym() != Some(')') {
                    return Err(Error::Formula {
                        column: self.column(),
                        message: "expected ')'".into(),
                    });
                }
                self.pos += 1;
                Ok(inner)
            }
            TokenKind::Sym(c) => Err(Error::Formula {
                column,
                message: format!("unexpected {c:?}"),
            }),
        }
    }
}
