//! Arithmetic expression grammar for scenario files: `+ - * / ^`,
//! parentheses, unary minus, the usual elementary functions, numeric
//! literals, the constants `pi`, `tau`, `e`, and a caller-supplied variable
//! list (coordinate names, or `eps` for probe paths).
//!
//! `^` is right-associative and binds tighter than unary minus applied to
//! its base, so `-x^2` reads `-(x^2)`.

use crate::error::{Error, Result};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Func1 {
    Sin,
    Cos,
    Tan,
    Asin,
    Acos,
    Atan,
    Sinh,
    Cosh,
    Tanh,
    Exp,
    Ln,
    Log10,
    Sqrt,
    Abs,
    Floor,
    Ceil,
    Sign,
}

impl Func1 {
    fn apply(self, x: f64) -> f64 {
        match self {
            Func1::Sin => x.sin(),
            Func1::Cos => x.cos(),
            Func1::Tan => x.tan(),
            Func1::Asin => x.asin(),
            Func1::Acos => x.acos(),
            Func1::Atan => x.atan(),
            Func1::Sinh => x.sinh(),
            Func1::Cosh => x.cosh(),
            Func1::Tanh => x.tanh(),
            Func1::Exp => x.exp(),
            Func1::Ln => x.ln(),
            Func1::Log10 => x.log10(),
            Func1::Sqrt => x.sqrt(),
            Func1::Abs => x.abs(),
            Func1::Floor => x.floor(),
            Func1::Ceil => x.ceil(),
            Func1::Sign => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => Func1::Sin,
            "cos" => Func1::Cos,
            "tan" => Func1::Tan,
            "asin" => Func1::Asin,
            "acos" => Func1::Acos,
            "atan" => Func1::Atan,
            "sinh" => Func1::Sinh,
            "cosh" => Func1::Cosh,
            "tanh" => Func1::Tanh,
            "exp" => Func1::Exp,
            "ln" => Func1::Ln,
            "log" | "log10" => Func1::Log10,
            "sqrt" => Func1::Sqrt,
            "abs" => Func1::Abs,
            "floor" => Func1::Floor,
            "ceil" => Func1::Ceil,
            "sign" => Func1::Sign,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Func2 {
    Atan2,
    Min,
    Max,
    Pow,
}

impl Func2 {
    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            Func2::Atan2 => a.atan2(b),
            Func2::Min => a.min(b),
            Func2::Max => a.max(b),
            Func2::Pow => a.powf(b),
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "atan2" => Func2::Atan2,
            "min" => Func2::Min,
            "max" => Func2::Max,
            "pow" => Func2::Pow,
            _ => return None,
        })
    }
}

/// Parsed expression over a fixed variable list.
#[derive(Debug, Clone)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Fn1(Func1, Box<Expr>),
    Fn2(Func2, Box<Expr>, Box<Expr>),
}

impl Expr {
    /// Parse `src` over the given variable names.
    pub fn parse(src: &str, variables: &[String]) -> Result<Expr> {
        let tokens = tokenize(src)?;
        let mut parser = Parser {
            tokens,
            pos: 0,
            variables,
            src,
        };
        let expr = parser.expression()?;
        if parser.pos != parser.tokens.len() {
            return Err(parser.error("unexpected trailing input"));
        }
        Ok(expr)
    }

    /// Evaluate with values matching the variable list given at parse time.
    pub fn eval(&self, vals: &[f64]) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Var(i) => vals[*i],
            Expr::Neg(a) => -a.eval(vals),
            Expr::Add(a, b) => a.eval(vals) + b.eval(vals),
            Expr::Sub(a, b) => a.eval(vals) - b.eval(vals),
            Expr::Mul(a, b) => a.eval(vals) * b.eval(vals),
            Expr::Div(a, b) => a.eval(vals) / b.eval(vals),
            Expr::Pow(a, b) => a.eval(vals).powf(b.eval(vals)),
            Expr::Fn1(f, a) => f.apply(a.eval(vals)),
            Expr::Fn2(f, a, b) => f.apply(a.eval(vals), b.eval(vals)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Number(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Number(x) => write!(f, "{x}"),
            Token::Ident(s) => write!(f, "{s}"),
            Token::Plus => write!(f, "+"),
            Token::Minus => write!(f, "-"),
            Token::Star => write!(f, "*"),
            Token::Slash => write!(f, "/"),
            Token::Caret => write!(f, "^"),
            Token::LParen => write!(f, "("),
            Token::RParen => write!(f, ")"),
            Token::Comma => write!(f, ","),
        }
    }
}

fn tokenize(src: &str) -> Result<Vec<Token>> {
    let mut out = Vec::new();
    let bytes = src.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '+' => {
                out.push(Token::Plus);
                i += 1;
            }
            '-' => {
                out.push(Token::Minus);
                i += 1;
            }
            '*' => {
                out.push(Token::Star);
                i += 1;
            }
            '/' => {
                out.push(Token::Slash);
                i += 1;
            }
            '^' => {
                out.push(Token::Caret);
                i += 1;
            }
            '(' => {
                out.push(Token::LParen);
                i += 1;
            }
            ')' => {
                out.push(Token::RParen);
                i += 1;
            }
            ',' => {
                out.push(Token::Comma);
                i += 1;
            }
            '0'..='9' | '.' => {
                let start = i;
                while i < bytes.len() {
                    let d = bytes[i] as char;
                    if d.is_ascii_digit() || d == '.' {
                        i += 1;
                    } else if (d == 'e' || d == 'E')
                        && i + 1 < bytes.len()
                        && ((bytes[i + 1] as char).is_ascii_digit()
                            || bytes[i + 1] == b'+'
                            || bytes[i + 1] == b'-')
                    {
                        i += 2;
                    } else {
                        break;
                    }
                }
                let text = &src[start..i];
                let value: f64 = text.parse().map_err(|_| {
                    Error::Scenario(format!("malformed number `{text}` in expression `{src}`"))
                })?;
                out.push(Token::Number(value));
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < bytes.len() {
                    let d = bytes[i] as char;
                    if d.is_ascii_alphanumeric() || d == '_' {
                        i += 1;
                    } else {
                        break;
                    }
                }
                out.push(Token::Ident(src[start..i].to_string()));
            }
            other => {
                return Err(Error::Scenario(format!(
                    "unexpected character `{other}` in expression `{src}`"
                )))
            }
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    variables: &'a [String],
    src: &'a str,
}

impl<'a> Parser<'a> {
    fn error(&self, msg: &str) -> Error {
        Error::Scenario(format!("{msg} in expression `{}`", self.src))
    }

    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn advance(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, token: Token) -> Result<()> {
        match self.advance() {
            Some(t) if t == token => Ok(()),
            Some(t) => Err(self.error(&format!("expected `{token}`, found `{t}`"))),
            None => Err(self.error(&format!("expected `{token}`, found end of input"))),
        }
    }

    fn expression(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(Token::Plus) => {
                    self.pos += 1;
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some(Token::Minus) => {
                    self.pos += 1;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Some(Token::Star) => {
                    self.pos += 1;
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Some(Token::Slash) => {
                    self.pos += 1;
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if matches!(self.peek(), Some(Token::Minus)) {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.primary()?;
        if matches!(self.peek(), Some(Token::Caret)) {
            self.pos += 1;
            // right-associative; exponent may carry its own unary minus
            let exponent = self.unary()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr> {
        match self.advance() {
            Some(Token::Number(x)) => Ok(Expr::Const(x)),
            Some(Token::LParen) => {
                let inner = self.expression()?;
                self.expect(Token::RParen)?;
                Ok(inner)
            }
            Some(Token::Ident(name)) => {
                if matches!(self.peek(), Some(Token::LParen)) {
                    self.pos += 1;
                    let first = self.expression()?;
                    if matches!(self.peek(), Some(Token::Comma)) {
                        self.pos += 1;
                        let second = self.expression()?;
                        self.expect(Token::RParen)?;
                        let f = Func2::from_name(&name).ok_or_else(|| {
                            self.error(&format!("unknown two-argument function `{name}`"))
                        })?;
                        return Ok(Expr::Fn2(f, Box::new(first), Box::new(second)));
                    }
                    self.expect(Token::RParen)?;
                    let f = Func1::from_name(&name)
                        .ok_or_else(|| self.error(&format!("unknown function `{name}`")))?;
                    return Ok(Expr::Fn1(f, Box::new(first)));
                }
                match name.as_str() {
                    "pi" => Ok(Expr::Const(std::f64::consts::PI)),
                    "tau" => Ok(Expr::Const(std::f64::consts::TAU)),
                    "e" => Ok(Expr::Const(std::f64::consts::E)),
                    _ => {
                        let idx =
                            self.variables
                                .iter()
                                .position(|v| v == &name)
                                .ok_or_else(|| {
                                    self.error(&format!(
                                        "unknown variable `{name}` (expected one of {:?})",
                                        self.variables
                                    ))
                                })?;
                        Ok(Expr::Var(idx))
                    }
                }
            }
            Some(t) => Err(self.error(&format!("unexpected token `{t}`"))),
            None => Err(self.error("unexpected end of input")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn vars(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn arithmetic_and_precedence() {
        let v = vars(&["x", "y"]);
        let e = Expr::parse("x + 2*y^2 - 1", &v).unwrap();
        assert_abs_diff_eq!(e.eval(&[1.0, 3.0]), 1.0 + 18.0 - 1.0, epsilon = 0.0);
        let e = Expr::parse("-x^2", &v).unwrap();
        assert_abs_diff_eq!(e.eval(&[2.0, 0.0]), -4.0, epsilon = 0.0);
        let e = Expr::parse("2^3^2", &v).unwrap();
        assert_abs_diff_eq!(e.eval(&[0.0, 0.0]), 512.0, epsilon = 0.0);
    }

    #[test]
    fn functions_and_constants() {
        let v = vars(&["t"]);
        let e = Expr::parse("sin(pi*t) + exp(-1/t^2)", &v).unwrap();
        assert_abs_diff_eq!(e.eval(&[0.5]), 1.0 + (-4.0_f64).exp(), epsilon = 1e-15);
        let e = Expr::parse("atan2(t, 1) + max(t, 2)", &v).unwrap();
        assert_abs_diff_eq!(
            e.eval(&[1.0]),
            std::f64::consts::FRAC_PI_4 + 2.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn scientific_notation() {
        let e = Expr::parse("1.5e-3 + 2E+2", &[]).unwrap();
        assert_abs_diff_eq!(e.eval(&[]), 200.0015, epsilon = 1e-12);
    }

    #[test]
    fn rejects_unknown_variable() {
        assert!(Expr::parse("x + z", &vars(&["x", "y"])).is_err());
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(Expr::parse("1 +", &[]).is_err());
        assert!(Expr::parse("(1", &[]).is_err());
        assert!(Expr::parse("1 2", &[]).is_err());
        assert!(Expr::parse("foo(1)", &[]).is_err());
    }
}
