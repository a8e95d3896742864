//! Scalar expression language for time-varying coefficients.
//!
//! Grammar:
//!
//! ```text
//! expr   := term (('+'|'-') term)*
//! term   := factor (('*'|'/') factor)*
//! factor := base ('^' factor)?
//! base   := number | var | func '(' expr (',' expr)? ')' | '(' expr ')' | '-' base
//! func   := sin | cos | exp | log | sqrt | abs | sign | min | max
//! ```
//!
//! Note that per this grammar the unary minus is part of `base`, so `-t^2`
//! parses as `(-t)^2`. Evaluation is total over the declared domain:
//! `log`/`sqrt` of a negative argument, division by zero and non-finite
//! intermediate values are reported as errors rather than propagated as NaN.

use crate::error::{Error, Result};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func1 {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Abs,
    Sign,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func2 {
    Min,
    Max,
}

impl Func1 {
    fn name(self) -> &'static str {
        match self {
            Func1::Sin => "sin",
            Func1::Cos => "cos",
            Func1::Exp => "exp",
            Func1::Log => "log",
            Func1::Sqrt => "sqrt",
            Func1::Abs => "abs",
            Func1::Sign => "sign",
        }
    }
}

impl Func2 {
    fn name(self) -> &'static str {
        match self {
            Func2::Min => "min",
            Func2::Max => "max",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Const(f64),
    /// Index into the variable list of the owning expression.
    Var(usize),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Neg(Box<Node>),
    Fun1(Func1, Box<Node>),
    Fun2(Func2, Box<Node>, Box<Node>),
}

impl Node {
    fn eval(&self, vars: &[f64], t_report: f64) -> Result<f64> {
        let fail = |message: String| Error::Eval {
            t: t_report,
            message,
        };
        let finite = |v: f64, what: &str| {
            if v.is_finite() {
                Ok(v)
            } else {
                Err(fail(format!("{what} produced a non-finite value")))
            }
        };
        match self {
            Node::Const(c) => Ok(*c),
            Node::Var(i) => Ok(vars[*i]),
            Node::Add(a, b) => finite(a.eval(vars, t_report)? + b.eval(vars, t_report)?, "sum"),
            Node::Sub(a, b) => finite(
                a.eval(vars, t_report)? - b.eval(vars, t_report)?,
                "difference",
            ),
            Node::Mul(a, b) => finite(a.eval(vars, t_report)? * b.eval(vars, t_report)?, "product"),
            Node::Div(a, b) => {
                let denom = b.eval(vars, t_report)?;
                if denom == 0.0 {
                    return Err(fail("division by zero".into()));
                }
                finite(a.eval(vars, t_report)? / denom, "quotient")
            }
            Node::Pow(a, b) => {
                let base = a.eval(vars, t_report)?;
                let exp = b.eval(vars, t_report)?;
                let v = base.powf(exp);
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(fail(format!("{base}^{exp} is not a finite real number")))
                }
            }
            Node::Neg(a) => Ok(-a.eval(vars, t_report)?),
            Node::Fun1(f, a) => {
                let x = a.eval(vars, t_report)?;
                let v = match f {
                    Func1::Sin => x.sin(),
                    Func1::Cos => x.cos(),
                    Func1::Exp => x.exp(),
                    Func1::Log => {
                        if x <= 0.0 {
                            return Err(fail(format!("log of non-positive argument {x}")));
                        }
                        x.ln()
                    }
                    Func1::Sqrt => {
                        if x < 0.0 {
                            return Err(fail(format!("sqrt of negative argument {x}")));
                        }
                        x.sqrt()
                    }
                    Func1::Abs => x.abs(),
                    Func1::Sign => {
                        if x > 0.0 {
                            1.0
                        } else if x < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    }
                };
                finite(v, f.name())
            }
            Node::Fun2(f, a, b) => {
                let x = a.eval(vars, t_report)?;
                let y = b.eval(vars, t_report)?;
                Ok(match f {
                    Func2::Min => x.min(y),
                    Func2::Max => x.max(y),
                })
            }
        }
    }

    /// Substitutes `Var(index) -> -Var(index)` throughout the tree.
    fn reflect_var(&mut self, index: usize) {
        match self {
            Node::Const(_) => {}
            Node::Var(i) => {
                if *i == index {
                    *self = Node::Neg(Box::new(Node::Var(index)));
                }
            }
            Node::Add(a, b)
            | Node::Sub(a, b)
            | Node::Mul(a, b)
            | Node::Div(a, b)
            | Node::Pow(a, b)
            | Node::Fun2(_, a, b) => {
                a.reflect_var(index);
                b.reflect_var(index);
            }
            Node::Neg(a) | Node::Fun1(_, a) => a.reflect_var(index),
        }
    }

    /// Printing precedence; parenthesization key. `Neg` ranks as a base
    /// because the grammar's unary minus produces a base, so `-x^2` re-parses
    /// as `(-x)^2`; a negated power must therefore print as `-(x^2)`.
    fn prec(&self) -> u8 {
        match self {
            Node::Add(..) | Node::Sub(..) => 1,
            Node::Mul(..) | Node::Div(..) => 2,
            Node::Const(c) if *c < 0.0 => 3,
            Node::Pow(..) => 4,
            _ => 5,
        }
    }

    fn write(&self, f: &mut fmt::Formatter<'_>, names: &[&str], required: u8) -> fmt::Result {
        let prec = self.prec();
        let parens = prec < required;
        if parens {
            write!(f, "(")?;
        }
        match self {
            Node::Const(c) => write!(f, "{c}")?,
            Node::Var(i) => write!(f, "{}", names[*i])?,
            Node::Add(a, b) => {
                a.write(f, names, 1)?;
                write!(f, " + ")?;
                b.write(f, names, 2)?;
            }
            Node::Sub(a, b) => {
                a.write(f, names, 1)?;
                write!(f, " - ")?;
                b.write(f, names, 2)?;
            }
            Node::Mul(a, b) => {
                a.write(f, names, 2)?;
                write!(f, "*")?;
                b.write(f, names, 3)?;
            }
            Node::Div(a, b) => {
                a.write(f, names, 2)?;
                write!(f, "/")?;
                b.write(f, names, 3)?;
            }
            // `^` applies to a bare base: anything below a function call or
            // atom on the left must be parenthesized, while the right-hand
            // side is a full factor (unary minus and nested powers allowed).
            Node::Pow(a, b) => {
                a.write(f, names, 5)?;
                write!(f, "^")?;
                b.write(f, names, 3)?;
            }
            Node::Neg(a) => {
                write!(f, "-")?;
                a.write(f, names, 5)?;
            }
            Node::Fun1(func, a) => {
                write!(f, "{}(", func.name())?;
                a.write(f, names, 1)?;
                write!(f, ")")?;
            }
            Node::Fun2(func, a, b) => {
                write!(f, "{}(", func.name())?;
                a.write(f, names, 1)?;
                write!(f, ", ")?;
                b.write(f, names, 1)?;
                write!(f, ")")?;
            }
        }
        if parens {
            write!(f, ")")?;
        }
        Ok(())
    }
}

/// A scalar expression in the single time variable `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarExpr {
    node: Node,
}

impl ScalarExpr {
    /// Parses `source` against the expression grammar.
    pub fn parse(source: &str) -> Result<Self> {
        let node = Parser::new(source, &["t"]).parse()?;
        Ok(ScalarExpr { node })
    }

    pub fn constant(value: f64) -> Self {
        assert!(value.is_finite(), "expression constants must be finite");
        ScalarExpr {
            node: Node::Const(value),
        }
    }

    pub fn var_t() -> Self {
        ScalarExpr { node: Node::Var(0) }
    }

    /// Evaluates the expression at time `t`.
    pub fn eval(&self, t: f64) -> Result<f64> {
        self.node.eval(&[t], t)
    }

    /// Exact substitution `t -> -t` at the tree level.
    pub fn reflect(&self) -> Self {
        let mut node = self.node.clone();
        node.reflect_var(0);
        ScalarExpr { node }
    }

    pub fn neg(&self) -> Self {
        ScalarExpr {
            node: match &self.node {
                Node::Neg(inner) => (**inner).clone(),
                Node::Const(c) => Node::Const(-c),
                other => Node::Neg(Box::new(other.clone())),
            },
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let node = match (&self.node, &other.node) {
            (Node::Const(a), Node::Const(b)) => Node::Const(a + b),
            (Node::Const(c), rhs) if *c == 0.0 => rhs.clone(),
            (lhs, Node::Const(c)) if *c == 0.0 => lhs.clone(),
            (lhs, rhs) => Node::Add(Box::new(lhs.clone()), Box::new(rhs.clone())),
        };
        ScalarExpr { node }
    }

    pub fn is_const_zero(&self) -> bool {
        matches!(self.node, Node::Const(c) if c == 0.0)
    }
}

impl fmt::Display for ScalarExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.node.write(f, &["t"], 0)
    }
}

/// A closed-form expression in the two variables `t` and `s`, used by the
/// scenario corpus for transition and Gramian oracles.
#[derive(Debug, Clone, PartialEq)]
pub struct Formula2 {
    node: Node,
}

impl Formula2 {
    pub fn parse(source: &str) -> Result<Self> {
        let node = Parser::new(source, &["t", "s"]).parse()?;
        Ok(Formula2 { node })
    }

    /// Evaluates with `t` and `s` substituted numerically.
    pub fn eval(&self, t: f64, s: f64) -> Result<f64> {
        self.node.eval(&[t, s], t)
    }
}

impl fmt::Display for Formula2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.node.write(f, &["t", "s"], 0)
    }
}

struct Parser<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
    vars: &'a [&'a str],
}

impl<'a> Parser<'a> {
    fn new(src: &'a str, vars: &'a [&'a str]) -> Self {
        Parser {
            src,
            bytes: src.as_bytes(),
            pos: 0,
            vars,
        }
    }

    fn parse(mut self) -> Result<Node> {
        let node = self.expr()?;
        self.skip_ws();
        if self.pos != self.bytes.len() {
            return Err(self.syntax("unexpected trailing input"));
        }
        Ok(node)
    }

    fn syntax(&self, message: &str) -> Error {
        Error::Syntax {
            position: self.pos,
            message: message.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    lhs = Node::Add(Box::new(lhs), Box::new(rhs));
                }
                Some(b'-') => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    lhs = Node::Sub(Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.factor()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    let rhs = self.factor()?;
                    lhs = Node::Mul(Box::new(lhs), Box::new(rhs));
                }
                Some(b'/') => {
                    self.pos += 1;
                    let rhs = self.factor()?;
                    lhs = Node::Div(Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn factor(&mut self) -> Result<Node> {
        let base = self.base()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            let exp = self.factor()?;
            return Ok(Node::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn base(&mut self) -> Result<Node> {
        match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                Ok(Node::Neg(Box::new(self.base()?)))
            }
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(self.syntax("expected `)`"));
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.identifier(),
            Some(_) => Err(self.syntax("expected a number, variable, function or `(`")),
            None => Err(self.syntax("unexpected end of input")),
        }
    }

    fn number(&mut self) -> Result<Node> {
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.bytes.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
        }
        if matches!(self.bytes.get(self.pos), Some(b'e') | Some(b'E')) {
            let mark = self.pos;
            self.pos += 1;
            if matches!(self.bytes.get(self.pos), Some(b'+') | Some(b'-')) {
                self.pos += 1;
            }
            if self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
                while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
            } else {
                // not an exponent after all (e.g. `2e` would be a parse error later)
                self.pos = mark;
            }
        }
        let text = &self.src[start..self.pos];
        text.parse::<f64>()
            .map(Node::Const)
            .map_err(|_| Error::Syntax {
                position: start,
                message: format!("invalid number literal `{text}`"),
            })
    }

    fn identifier(&mut self) -> Result<Node> {
        let start = self.pos;
        while self
            .bytes
            .get(self.pos)
            .is_some_and(|c| c.is_ascii_alphanumeric() || *c == b'_')
        {
            self.pos += 1;
        }
        let name = &self.src[start..self.pos];
        if let Some(index) = self.vars.iter().position(|v| *v == name) {
            return Ok(Node::Var(index));
        }
        let func1 = match name {
            "sin" => Some(Func1::Sin),
            "cos" => Some(Func1::Cos),
            "exp" => Some(Func1::Exp),
            "log" => Some(Func1::Log),
            "sqrt" => Some(Func1::Sqrt),
            "abs" => Some(Func1::Abs),
            "sign" => Some(Func1::Sign),
            _ => None,
        };
        let func2 = match name {
            "min" => Some(Func2::Min),
            "max" => Some(Func2::Max),
            _ => None,
        };
        if func1.is_none() && func2.is_none() {
            return Err(Error::UnknownIdentifier {
                position: start,
                name: name.to_string(),
            });
        }
        if self.peek() != Some(b'(') {
            return Err(self.syntax("expected `(` after function name"));
        }
        self.pos += 1;
        let first = self.expr()?;
        let second = if self.peek() == Some(b',') {
            self.pos += 1;
            Some(self.expr()?)
        } else {
            None
        };
        if self.peek() != Some(b')') {
            return Err(self.syntax("expected `)` or `,`"));
        }
        self.pos += 1;
        let got = 1 + usize::from(second.is_some());
        match (func1, func2, second) {
            (Some(f), _, None) => Ok(Node::Fun1(f, Box::new(first))),
            (_, Some(f), Some(second)) => Ok(Node::Fun2(f, Box::new(first), Box::new(second))),
            (Some(_), _, Some(_)) | (_, Some(_), None) => Err(Error::ArityMismatch {
                name: name.to_string(),
                expected: if func1.is_some() { 1 } else { 2 },
                got,
            }),
            (None, None, _) => unreachable!(),
        }
    }
}
