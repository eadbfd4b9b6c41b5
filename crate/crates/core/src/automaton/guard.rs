//! Boolean transition guards over atomic propositions.
//!
//! Grammar (lowest to highest precedence):
//!
//! ```text
//! expr  := and ('|' and)*
//! and   := unary ('&' unary)*
//! unary := '!' unary | atom
//! atom  := 'true' | 'false' | prop | '(' expr ')'
//! prop  := [a-z0-9_]+
//! ```

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

/// A set of atomic propositions observed at one environment state.
pub type LabelSet = BTreeSet<String>;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Guard {
    Const(bool),
    Prop(String),
    Not(Box<Guard>),
    And(Box<Guard>, Box<Guard>),
    Or(Box<Guard>, Box<Guard>),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GuardParseError {
    #[error("unexpected character '{ch}' at offset {offset}")]
    UnexpectedChar { ch: char, offset: usize },
    #[error("unexpected end of guard expression")]
    UnexpectedEnd,
    #[error("unexpected token '{token}' at offset {offset}")]
    UnexpectedToken { token: String, offset: usize },
    #[error("empty guard expression")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Token {
    Not,
    And,
    Or,
    LParen,
    RParen,
    Ident(String),
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Not => f.write_str("!"),
            Token::And => f.write_str("&"),
            Token::Or => f.write_str("|"),
            Token::LParen => f.write_str("("),
            Token::RParen => f.write_str(")"),
            Token::Ident(s) => f.write_str(s),
        }
    }
}

fn is_prop_char(c: char) -> bool {
    c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_'
}

/// True iff `name` is a syntactically valid proposition name.
pub fn is_valid_prop_name(name: &str) -> bool {
    !name.is_empty() && name.chars().all(is_prop_char) && name != "true" && name != "false"
}

fn tokenize(text: &str) -> Result<Vec<(Token, usize)>, GuardParseError> {
    let mut tokens = Vec::new();
    let mut chars = text.char_indices().peekable();
    while let Some(&(offset, c)) = chars.peek() {
        match c {
            c if c.is_whitespace() => {
                chars.next();
            }
            '!' => {
                tokens.push((Token::Not, offset));
                chars.next();
            }
            '&' => {
                tokens.push((Token::And, offset));
                chars.next();
            }
            '|' => {
                tokens.push((Token::Or, offset));
                chars.next();
            }
            '(' => {
                tokens.push((Token::LParen, offset));
                chars.next();
            }
            ')' => {
                tokens.push((Token::RParen, offset));
                chars.next();
            }
            c if is_prop_char(c) => {
                let mut ident = String::new();
                while let Some(&(_, c)) = chars.peek() {
                    if !is_prop_char(c) {
                        break;
                    }
                    ident.push(c);
                    chars.next();
                }
                tokens.push((Token::Ident(ident), offset));
            }
            ch => return Err(GuardParseError::UnexpectedChar { ch, offset }),
        }
    }
    Ok(tokens)
}

struct Parser {
    tokens: Vec<(Token, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(t, _)| t)
    }

    fn next(&mut self) -> Option<(Token, usize)> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn expr(&mut self) -> Result<Guard, GuardParseError> {
        let mut lhs = self.and()?;
        while self.peek() == Some(&Token::Or) {
            self.pos += 1;
            let rhs = self.and()?;
            lhs = Guard::Or(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Guard, GuardParseError> {
        let mut lhs = self.unary()?;
        while self.peek() == Some(&Token::And) {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Guard::And(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Guard, GuardParseError> {
        if self.peek() == Some(&Token::Not) {
            self.pos += 1;
            return Ok(Guard::Not(Box::new(self.unary()?)));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Guard, GuardParseError> {
        match self.next() {
            None => Err(GuardParseError::UnexpectedEnd),
            Some((Token::LParen, _)) => {
                let inner = self.expr()?;
                match self.next() {
                    Some((Token::RParen, _)) => Ok(inner),
                    Some((token, offset)) => Err(GuardParseError::UnexpectedToken {
                        token: token.to_string(),
                        offset,
                    }),
                    None => Err(GuardParseError::UnexpectedEnd),
                }
            }
            Some((Token::Ident(name), _)) => Ok(match name.as_str() {
                "true" => Guard::Const(true),
                "false" => Guard::Const(false),
                _ => Guard::Prop(name),
            }),
            Some((token, offset)) => Err(GuardParseError::UnexpectedToken {
                token: token.to_string(),
                offset,
            }),
        }
    }
}

impl Guard {
    pub fn parse(text: &str) -> Result<Guard, GuardParseError> {
        let tokens = tokenize(text)?;
        if tokens.is_empty() {
            return Err(GuardParseError::Empty);
        }
        let mut parser = Parser { tokens, pos: 0 };
        let guard = parser.expr()?;
        if let Some((token, offset)) = parser.next() {
            return Err(GuardParseError::UnexpectedToken {
                token: token.to_string(),
                offset,
            });
        }
        Ok(guard)
    }

    /// Evaluates the guard with each proposition `p` read as `p ∈ labels`.
    pub fn eval(&self, labels: &LabelSet) -> bool {
        match self {
            Guard::Const(b) => *b,
            Guard::Prop(p) => labels.contains(p),
            Guard::Not(g) => !g.eval(labels),
            Guard::And(a, b) => a.eval(labels) && b.eval(labels),
            Guard::Or(a, b) => a.eval(labels) || b.eval(labels),
        }
    }

    /// Propositions mentioned anywhere in the expression.
    pub fn props(&self) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        self.collect_props(&mut out);
        out
    }

    fn collect_props<'a>(&'a self, out: &mut BTreeSet<&'a str>) {
        match self {
            Guard::Const(_) => {}
            Guard::Prop(p) => {
                out.insert(p.as_str());
            }
            Guard::Not(g) => g.collect_props(out),
            Guard::And(a, b) | Guard::Or(a, b) => {
                a.collect_props(out);
                b.collect_props(out);
            }
        }
    }

    /// Lowers the guard to a bitmask evaluator. Every proposition must be in `bits`.
    pub(crate) fn compile(&self, bits: &HashMap<String, u32>) -> Option<CompiledGuard> {
        Some(match self {
            Guard::Const(b) => CompiledGuard::Const(*b),
            Guard::Prop(p) => CompiledGuard::Bit(*bits.get(p)?),
            Guard::Not(g) => CompiledGuard::Not(Box::new(g.compile(bits)?)),
            Guard::And(a, b) => {
                CompiledGuard::And(Box::new(a.compile(bits)?), Box::new(b.compile(bits)?))
            }
            Guard::Or(a, b) => {
                CompiledGuard::Or(Box::new(a.compile(bits)?), Box::new(b.compile(bits)?))
            }
        })
    }

    fn precedence(&self) -> u8 {
        match self {
            Guard::Or(..) => 0,
            Guard::And(..) => 1,
            Guard::Not(_) => 2,
            Guard::Const(_) | Guard::Prop(_) => 3,
        }
    }

    fn fmt_child(&self, child: &Guard, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if child.precedence() < self.precedence() {
            write!(f, "({child})")
        } else {
            write!(f, "{child}")
        }
    }
}

impl fmt::Display for Guard {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Guard::Const(true) => f.write_str("true"),
            Guard::Const(false) => f.write_str("false"),
            Guard::Prop(p) => f.write_str(p),
            Guard::Not(g) => {
                f.write_str("!")?;
                self.fmt_child(g, f)
            }
            Guard::And(a, b) => {
                self.fmt_child(a, f)?;
                f.write_str(" & ")?;
                // right operand of a left-associative chain needs parens at equal precedence
                if b.precedence() <= self.precedence() {
                    write!(f, "({b})")
                } else {
                    write!(f, "{b}")
                }
            }
            Guard::Or(a, b) => {
                self.fmt_child(a, f)?;
                f.write_str(" | ")?;
                if b.precedence() <= self.precedence() {
                    write!(f, "({b})")
                } else {
                    write!(f, "{b}")
                }
            }
        }
    }
}

/// Standalone guard evaluation over a label set.
pub fn guard_eval(guard: &Guard, labels: &LabelSet) -> bool {
    guard.eval(labels)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum CompiledGuard {
    Const(bool),
    Bit(u32),
    Not(Box<CompiledGuard>),
    And(Box<CompiledGuard>, Box<CompiledGuard>),
    Or(Box<CompiledGuard>, Box<CompiledGuard>),
}

impl CompiledGuard {
    #[inline]
    pub(crate) fn eval(&self, mask: u64) -> bool {
        match self {
            CompiledGuard::Const(b) => *b,
            CompiledGuard::Bit(i) => mask & (1u64 << i) != 0,
            CompiledGuard::Not(g) => !g.eval(mask),
            CompiledGuard::And(a, b) => a.eval(mask) && b.eval(mask),
            CompiledGuard::Or(a, b) => a.eval(mask) || b.eval(mask),
        }
    }
}
