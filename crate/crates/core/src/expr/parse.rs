//! Infix syntax for expressions.
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := atom ('^' unary)?
//! atom    := number | name | name '(' expr ')' | '(' expr ')'
//! ```
//!
//! Names are `x1..xn`, the constants `pi` and `e`, any extra symbols the
//! caller registers, and the functions `exp log sin cos sinh cosh sqrt`.
//! Exponents that fold to a constant produce a real power; anything else is
//! rewritten as `exp(b*log(a))`.

use std::collections::HashMap;

use super::Expr;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("column {column}: {message}")]
pub struct ParseError {
    /// One-based character column.
    pub column: usize,
    pub message: String,
}

/// Name-to-variable table used while parsing.
#[derive(Debug, Clone, Default)]
pub struct Symbols {
    names: HashMap<String, usize>,
}

impl Symbols {
    /// `x1..xn` mapped to variables `0..n`.
    pub fn coordinates(n: usize) -> Self {
        let mut s = Symbols::default();
        for i in 0..n {
            s.names.insert(format!("x{}", i + 1), i);
        }
        s
    }

    pub fn with(mut self, name: &str, var: usize) -> Self {
        self.names.insert(name.to_string(), var);
        self
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.names.get(name).copied()
    }
}

/// Parse with coordinates `x1..xn`.
pub fn parse(src: &str, n: usize) -> Result<Expr, ParseError> {
    parse_with(src, &Symbols::coordinates(n))
}

pub fn parse_with(src: &str, symbols: &Symbols) -> Result<Expr, ParseError> {
    let tokens = tokenize(src)?;
    let mut p = Parser { tokens, pos: 0, symbols };
    let e = p.expr()?;
    match p.peek() {
        None => Ok(e),
        Some(t) => Err(ParseError { column: t.column, message: format!("unexpected `{}`", t.kind) }),
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    Number(f64),
    Name(String),
    Sym(char),
}

impl std::fmt::Display for Kind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Kind::Number(v) => write!(f, "{v}"),
            Kind::Name(s) => write!(f, "{s}"),
            Kind::Sym(c) => write!(f, "{c}"),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: Kind,
    column: usize,
}

fn tokenize(src: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let column = i + 1;
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let value = text
                .parse::<f64>()
                .map_err(|_| ParseError { column, message: format!("malformed number `{text}`") })?;
            out.push(Token { kind: Kind::Number(value), column });
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token { kind: Kind::Name(chars[start..i].iter().collect()), column });
        } else if "+-*/^(),".contains(c) {
            out.push(Token { kind: Kind::Sym(c), column });
            i += 1;
        } else {
            return Err(ParseError { column, message: format!("unexpected character `{c}`") });
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    symbols: &'a Symbols,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn eat(&mut self, c: char) -> bool {
        if matches!(self.peek(), Some(Token { kind: Kind::Sym(s), .. }) if *s == c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn end_column(&self) -> usize {
        self.tokens.last().map_or(1, |t| t.column + t.kind.to_string().chars().count())
    }

    fn expect(&mut self, c: char) -> Result<(), ParseError> {
        if self.eat(c) {
            return Ok(());
        }
        let (column, found) = match self.peek() {
            Some(t) => (t.column, format!("`{}`", t.kind)),
            None => (self.end_column(), "end of input".to_string()),
        };
        Err(ParseError { column, message: format!("expected `{c}`, found {found}") })
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut terms = vec![self.term()?];
        loop {
            if self.eat('+') {
                terms.push(self.term()?);
            } else if self.eat('-') {
                terms.push(-self.term()?);
            } else {
                return Ok(Expr::sum(terms));
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut acc = self.unary()?;
        loop {
            if self.eat('*') {
                acc = acc * self.unary()?;
            } else if self.eat('/') {
                acc = acc / self.unary()?;
            } else {
                return Ok(acc);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat('-') {
            return Ok(-self.unary()?);
        }
        if self.eat('+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if !self.eat('^') {
            return Ok(base);
        }
        let exponent = self.unary()?;
        Ok(match exponent.as_const() {
            Some(p) => Expr::pow(base, p),
            None => Expr::exp(exponent * Expr::log(base)),
        })
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let Some(tok) = self.peek().cloned() else {
            return Err(ParseError { column: self.end_column(), message: "unexpected end of input".into() });
        };
        self.pos += 1;
        match tok.kind {
            Kind::Number(v) => Ok(Expr::constant(v)),
            Kind::Sym('(') => {
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Kind::Name(name) => {
                if let Some(var) = self.symbols.get(&name) {
                    return Ok(Expr::var(var));
                }
                let func: Option<fn(Expr) -> Expr> = match name.as_str() {
                    "exp" => Some(Expr::exp),
                    "log" | "ln" => Some(Expr::log),
                    "sin" => Some(Expr::sin),
                    "cos" => Some(Expr::cos),
                    "sinh" => Some(Expr::sinh),
                    "cosh" => Some(Expr::cosh),
                    "sqrt" => Some(Expr::sqrt),
                    _ => None,
                };
                if let Some(f) = func {
                    self.expect('(')?;
                    let arg = self.expr()?;
                    self.expect(')')?;
                    return Ok(f(arg));
                }
                match name.as_str() {
                    "pi" => Ok(Expr::constant(std::f64::consts::PI)),
                    "e" => Ok(Expr::constant(std::f64::consts::E)),
                    _ => Err(ParseError { column: tok.column, message: format!("unknown name `{name}`") }),
                }
            }
            Kind::Sym(c) => Err(ParseError { column: tok.column, message: format!("unexpected `{c}`") }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval(src: &str, x: &[f64]) -> f64 {
        parse(src, x.len()).unwrap().eval(x).unwrap()
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(eval("1 + 2*3", &[]), 7.0);
        assert_eq!(eval("2^3^2", &[]), 512.0);
        assert_eq!(eval("-2^2", &[]), -4.0);
        assert_eq!(eval("8/2/2", &[]), 2.0);
        assert_eq!(eval("x1 - x2 - x3", &[1.0, 2.0, 3.0]), -4.0);
    }

    #[test]
    fn functions_and_constants() {
        assert!((eval("sin(pi/2) + log(e)", &[]) - 2.0).abs() < 1e-15);
        assert_eq!(eval("sqrt(x1)", &[9.0]), 3.0);
        assert!((eval("cosh(0) + sinh(0) + exp(0)", &[]) - 2.0).abs() < 1e-15);
        assert_eq!(eval("1.5e2 + .5", &[]), 150.5);
    }

    #[test]
    fn variable_exponent_becomes_exp_log() {
        let v = eval("x1^x2", &[2.0, 3.0]);
        assert!((v - 8.0).abs() < 1e-12);
    }

    #[test]
    fn errors_carry_columns() {
        let err = parse("x1 + foo", 1).unwrap_err();
        assert_eq!(err.column, 6);
        let err = parse("(x1 + 1", 1).unwrap_err();
        assert!(err.message.contains("expected `)`"));
        let err = parse("x1 $ 2", 1).unwrap_err();
        assert_eq!(err.column, 4);
        assert!(parse("x3", 2).is_err());
    }

    #[test]
    fn custom_symbols() {
        let syms = Symbols::coordinates(2).with("p1", 2).with("s", 4);
        let e = parse_with("p1*s + x2", &syms).unwrap();
        assert_eq!(e.eval(&[0.0, 1.0, 2.0, 0.0, 3.0]).unwrap(), 7.0);
    }
}
