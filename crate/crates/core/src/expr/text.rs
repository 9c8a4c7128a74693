//! Prefix notation: `(mul (sin y_pred) 2.5)`.

use std::fmt;

use thiserror::Error;

use super::{BinaryOp, Node, UnaryOp};

/// Parse failure; `position` is a byte offset into the input.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("parse error at position {position}: {message}")]
pub struct ParseError {
    pub position: usize,
    pub message: String,
}

impl ParseError {
    fn new(position: usize, message: impl Into<String>) -> Self {
        Self { position, message: message.into() }
    }
}

pub(super) fn write_node(f: &mut fmt::Formatter<'_>, node: &Node) -> fmt::Result {
    match node {
        Node::Pred => f.write_str("y_pred"),
        Node::Real => f.write_str("y_real"),
        // Debug gives the shortest representation that round-trips
        Node::Const(c) => write!(f, "{c:?}"),
        Node::Unary(op, x) => {
            write!(f, "({} ", op.name())?;
            write_node(f, x)?;
            f.write_str(")")
        }
        Node::Binary(op, a, b) => {
            write!(f, "({} ", op.name())?;
            write_node(f, a)?;
            f.write_str(" ")?;
            write_node(f, b)?;
            f.write_str(")")
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Token<'a> {
    Open,
    Close,
    Atom(&'a str),
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn skip_ws(&mut self) {
        let rest = &self.src[self.pos..];
        self.pos += rest.len() - rest.trim_start().len();
    }

    /// Next token and its starting offset, or the end-of-input offset.
    fn next(&mut self) -> Result<(usize, Token<'a>), usize> {
        self.skip_ws();
        let start = self.pos;
        let rest = &self.src[start..];
        let Some(ch) = rest.chars().next() else {
            return Err(start);
        };
        match ch {
            '(' => {
                self.pos += 1;
                Ok((start, Token::Open))
            }
            ')' => {
                self.pos += 1;
                Ok((start, Token::Close))
            }
            _ => {
                let len = rest
                    .find(|c: char| c.is_whitespace() || c == '(' || c == ')')
                    .unwrap_or(rest.len());
                self.pos += len;
                Ok((start, Token::Atom(&rest[..len])))
            }
        }
    }
}

pub(super) fn parse(src: &str) -> Result<Node, ParseError> {
    let mut lexer = Lexer { src, pos: 0 };
    let node = parse_expr(&mut lexer)?;
    match lexer.next() {
        Err(_) => Ok(node),
        Ok((pos, _)) => Err(ParseError::new(pos, "trailing input after expression")),
    }
}

fn parse_expr(lexer: &mut Lexer<'_>) -> Result<Node, ParseError> {
    let (pos, token) = lexer
        .next()
        .map_err(|end| ParseError::new(end, "unexpected end of input"))?;
    match token {
        Token::Close => Err(ParseError::new(pos, "unexpected ')'")),
        Token::Atom(atom) => parse_atom(pos, atom),
        Token::Open => {
            let (op_pos, op_token) = lexer
                .next()
                .map_err(|end| ParseError::new(end, "unexpected end of input, expected operator"))?;
            let Token::Atom(name) = op_token else {
                return Err(ParseError::new(op_pos, "expected operator name"));
            };
            let node = if let Some(op) = UnaryOp::from_name(name) {
                Node::Unary(op, Box::new(parse_expr(lexer)?))
            } else if let Some(op) = BinaryOp::from_name(name) {
                let a = parse_expr(lexer)?;
                let b = parse_expr(lexer)?;
                Node::Binary(op, Box::new(a), Box::new(b))
            } else {
                return Err(ParseError::new(op_pos, format!("unknown operator '{name}'")));
            };
            match lexer.next() {
                Ok((_, Token::Close)) => Ok(node),
                Ok((p, _)) => Err(ParseError::new(p, format!("too many arguments to '{name}'"))),
                Err(end) => Err(ParseError::new(end, "unexpected end of input, expected ')'")),
            }
        }
    }
}

fn parse_atom(pos: usize, atom: &str) -> Result<Node, ParseError> {
    match atom {
        "y_pred" => Ok(Node::Pred),
        "y_real" => Ok(Node::Real),
        _ => match atom.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Node::Const(v)),
            Ok(_) => Err(ParseError::new(pos, format!("non-finite constant '{atom}'"))),
            Err(_) if UnaryOp::from_name(atom).is_some() || BinaryOp::from_name(atom).is_some() => {
                Err(ParseError::new(pos, format!("operator '{atom}' must follow '('")))
            }
            Err(_) => Err(ParseError::new(pos, format!("unknown symbol '{atom}'"))),
        },
    }
}
