//! Scalar expression DSL for model coefficients.
//!
//! Expressions are built from the variables `t`, `x`, `y`, `z1..zd`, numeric
//! literals, the functions `exp`, `log`, `sqrt`, `sin`, `cos`, `tanh`, unary
//! minus, and the binary operators `+ - * / ^`. Exponents of `^` must fold to
//! constants so that every expression stays closed under symbolic
//! differentiation. There is deliberately no `abs` or `max`: model data must
//! be C^1.
//!
//! Precedence, tightest first: `^`, unary `-`, `* /`, `+ -`.
//!
//! An [`Expression`] is immutable after parsing; evaluation is pure and safe
//! to call from any number of threads. Hot loops should compile an expression
//! once ([`Expression::compile`]) and evaluate the flat program instead of
//! walking the tree.

use std::fmt;

use thiserror::Error;

/// A variable of the DSL. `Z(k)` is 1-based: `z1` is `Z(1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    T,
    X,
    Y,
    Z(usize),
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::T => write!(f, "t"),
            Var::X => write!(f, "x"),
            Var::Y => write!(f, "y"),
            Var::Z(k) => write!(f, "z{k}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Exp,
    Log,
    Sqrt,
    Sin,
    Cos,
    Tanh,
}

impl UnaryOp {
    fn name(self) -> &'static str {
        match self {
            UnaryOp::Neg => "-",
            UnaryOp::Exp => "exp",
            UnaryOp::Log => "log",
            UnaryOp::Sqrt => "sqrt",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Tanh => "tanh",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

/// Expression tree. `Pow` keeps its exponent as a plain constant, which is
/// what makes repeated differentiation closed-form.
#[derive(Debug, Clone, PartialEq)]
pub enum Ast {
    Const(f64),
    Var(Var),
    Unary(UnaryOp, Box<Ast>),
    Binary(BinaryOp, Box<Ast>, Box<Ast>),
    Pow(Box<Ast>, f64),
}

/// Variable bindings for evaluation. `z` must have one entry per Brownian
/// component that the expression may reference.
#[derive(Debug, Clone, Copy)]
pub struct Bindings<'a> {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub z: &'a [f64],
}

impl<'a> Bindings<'a> {
    pub fn new(t: f64, x: f64, y: f64, z: &'a [f64]) -> Self {
        Self { t, x, y, z }
    }

    /// Bindings for coefficient functions of `(t, x)` only.
    pub fn tx(t: f64, x: f64) -> Self {
        Self {
            t,
            x,
            y: 0.0,
            z: &[],
        }
    }

    fn get(&self, v: Var) -> Option<f64> {
        match v {
            Var::T => Some(self.t),
            Var::X => Some(self.x),
            Var::Y => Some(self.y),
            Var::Z(k) => self.z.get(k - 1).copied(),
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ParseError {
    #[error("syntax error at offset {offset}: expected {expected}, found {found}")]
    Syntax {
        offset: usize,
        expected: String,
        found: String,
    },
    #[error("unknown identifier `{name}` at offset {offset}")]
    UnknownIdentifier { offset: usize, name: String },
    #[error("power exponent at offset {offset} does not fold to a constant")]
    NonConstantExponent { offset: usize },
    #[error("malformed number at offset {offset}")]
    BadNumber { offset: usize },
}

impl ParseError {
    pub fn offset(&self) -> usize {
        match self {
            ParseError::Syntax { offset, .. }
            | ParseError::UnknownIdentifier { offset, .. }
            | ParseError::NonConstantExponent { offset }
            | ParseError::BadNumber { offset } => *offset,
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EvalError {
    #[error("unbound variable `{var}` (z components available: {available})")]
    UnboundVariable { var: Var, available: usize },
    #[error("domain error in `{subexpr}`: {reason}")]
    Domain { subexpr: String, reason: String },
}

// ---------------------------------------------------------------------------
// Lexer
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(v) => format!("number `{v}`"),
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Star => "`*`".into(),
            Tok::Slash => "`/`".into(),
            Tok::Caret => "`^`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Self {
            src: src.as_bytes(),
            pos: 0,
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    /// Next token together with its starting byte offset.
    fn next(&mut self) -> Result<(Tok, usize), ParseError> {
        self.skip_ws();
        let start = self.pos;
        if self.pos >= self.src.len() {
            return Ok((Tok::Eof, start));
        }
        let c = self.src[self.pos];
        let one = |me: &mut Self, t: Tok| {
            me.pos += 1;
            Ok((t, start))
        };
        match c {
            b'+' => one(self, Tok::Plus),
            b'-' => one(self, Tok::Minus),
            b'*' => one(self, Tok::Star),
            b'/' => one(self, Tok::Slash),
            b'^' => one(self, Tok::Caret),
            b'(' => one(self, Tok::LParen),
            b')' => one(self, Tok::RParen),
            b'0'..=b'9' | b'.' => self.number(start),
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                while self.pos < self.src.len()
                    && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
                {
                    self.pos += 1;
                }
                let name = std::str::from_utf8(&self.src[start..self.pos])
                    .expect("ascii slice")
                    .to_string();
                Ok((Tok::Ident(name), start))
            }
            other => Err(ParseError::Syntax {
                offset: start,
                expected: "a token".into(),
                found: format!("byte `{}`", other as char),
            }),
        }
    }

    fn number(&mut self, start: usize) -> Result<(Tok, usize), ParseError> {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos < self.src.len() && self.src[self.pos] == b'.' {
            self.pos += 1;
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
        }
        // Scientific suffix only when it is unambiguously part of the number,
        // so `2e-5` lexes as one literal but `2exp(x)` leaves `exp` alone.
        if self.pos < self.src.len() && (self.src[self.pos] == b'e' || self.src[self.pos] == b'E') {
            let mut probe = self.pos + 1;
            if probe < self.src.len() && (self.src[probe] == b'+' || self.src[probe] == b'-') {
                probe += 1;
            }
            if probe < self.src.len() && self.src[probe].is_ascii_digit() {
                self.pos = probe;
                while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii slice");
        text.parse::<f64>()
            .map(|v| (Tok::Num(v), start))
            .map_err(|_| ParseError::BadNumber { offset: start })
    }
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

struct Parser<'a> {
    lexer: Lexer<'a>,
    current: (Tok, usize),
    /// Offset of the most recently consumed token; end-of-input errors point
    /// here (the token that demanded more input) rather than past the end.
    last_offset: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Result<Self, ParseError> {
        let mut lexer = Lexer::new(src);
        let current = lexer.next()?;
        Ok(Self {
            lexer,
            current,
            last_offset: 0,
        })
    }

    fn bump(&mut self) -> Result<(Tok, usize), ParseError> {
        let next = self.lexer.next()?;
        self.last_offset = self.current.1;
        Ok(std::mem::replace(&mut self.current, next))
    }

    fn syntax_error(&self, expected: &str) -> ParseError {
        let offset = if self.current.0 == Tok::Eof {
            self.last_offset
        } else {
            self.current.1
        };
        ParseError::Syntax {
            offset,
            expected: expected.into(),
            found: self.current.0.describe(),
        }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), ParseError> {
        if self.current.0 == tok {
            self.bump()?;
            Ok(())
        } else {
            Err(self.syntax_error(what))
        }
    }

    // sum := product (('+'|'-') product)*
    fn sum(&mut self) -> Result<Ast, ParseError> {
        let mut lhs = self.product()?;
        loop {
            let op = match self.current.0 {
                Tok::Plus => BinaryOp::Add,
                Tok::Minus => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump()?;
            let rhs = self.product()?;
            lhs = binary(op, lhs, rhs);
        }
    }

    // product := unary (('*'|'/') unary)*
    fn product(&mut self) -> Result<Ast, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.current.0 {
                Tok::Star => BinaryOp::Mul,
                Tok::Slash => BinaryOp::Div,
                _ => return Ok(lhs),
            };
            self.bump()?;
            let rhs = self.unary()?;
            lhs = binary(op, lhs, rhs);
        }
    }

    // unary := '-' unary | power
    fn unary(&mut self) -> Result<Ast, ParseError> {
        if self.current.0 == Tok::Minus {
            self.bump()?;
            let inner = self.unary()?;
            Ok(neg(inner))
        } else {
            self.power()
        }
    }

    // power := atom ('^' unary)?   -- exponent must fold to a constant
    fn power(&mut self) -> Result<Ast, ParseError> {
        let base = self.atom()?;
        if self.current.0 == Tok::Caret {
            self.bump()?;
            let exp_offset = self.current.1;
            let exponent = self.unary()?;
            match fold_constant(&exponent) {
                Some(c) => Ok(pow(base, c)),
                None => Err(ParseError::NonConstantExponent { offset: exp_offset }),
            }
        } else {
            Ok(base)
        }
    }

    // atom := number | variable | function '(' sum ')' | '(' sum ')'
    fn atom(&mut self) -> Result<Ast, ParseError> {
        match self.current.0.clone() {
            Tok::Num(v) => {
                self.bump()?;
                Ok(Ast::Const(v))
            }
            Tok::LParen => {
                self.bump()?;
                let inner = self.sum()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                let offset = self.current.1;
                self.bump()?;
                if let Some(op) = function_by_name(&name) {
                    self.expect(Tok::LParen, "`(` after function name")?;
                    let arg = self.sum()?;
                    self.expect(Tok::RParen, "`)`")?;
                    return Ok(unary(op, arg));
                }
                match variable_by_name(&name) {
                    Some(v) => Ok(Ast::Var(v)),
                    None => Err(ParseError::UnknownIdentifier { offset, name }),
                }
            }
            _ => Err(self.syntax_error("a number, variable, function call or `(`")),
        }
    }
}

fn function_by_name(name: &str) -> Option<UnaryOp> {
    match name {
        "exp" => Some(UnaryOp::Exp),
        "log" => Some(UnaryOp::Log),
        "sqrt" => Some(UnaryOp::Sqrt),
        "sin" => Some(UnaryOp::Sin),
        "cos" => Some(UnaryOp::Cos),
        "tanh" => Some(UnaryOp::Tanh),
        _ => None,
    }
}

fn variable_by_name(name: &str) -> Option<Var> {
    match name {
        "t" => Some(Var::T),
        "x" => Some(Var::X),
        "y" => Some(Var::Y),
        _ => {
            let rest = name.strip_prefix('z')?;
            if rest.is_empty() || !rest.bytes().all(|b| b.is_ascii_digit()) {
                return None;
            }
            let k: usize = rest.parse().ok()?;
            if k == 0 {
                return None;
            }
            Some(Var::Z(k))
        }
    }
}

// ---------------------------------------------------------------------------
// Smart constructors: constant folding and 0/1 identities
// ---------------------------------------------------------------------------

fn fold_constant(ast: &Ast) -> Option<f64> {
    match ast {
        Ast::Const(v) => Some(*v),
        _ => None,
    }
}

fn neg(a: Ast) -> Ast {
    match a {
        Ast::Const(v) => Ast::Const(if v == 0.0 { 0.0 } else { -v }),
        Ast::Unary(UnaryOp::Neg, inner) => *inner,
        other => Ast::Unary(UnaryOp::Neg, Box::new(other)),
    }
}

fn unary(op: UnaryOp, a: Ast) -> Ast {
    if op == UnaryOp::Neg {
        return neg(a);
    }
    if let Ast::Const(v) = a {
        let folded = apply_unary(op, v);
        if folded.is_finite() {
            return Ast::Const(folded);
        }
    }
    Ast::Unary(op, Box::new(a))
}

#[allow(clippy::redundant_guards)] // float patterns cannot replace these guards
fn binary(op: BinaryOp, a: Ast, b: Ast) -> Ast {
    if let (Ast::Const(x), Ast::Const(y)) = (&a, &b) {
        let folded = apply_binary(op, *x, *y);
        if folded.is_finite() {
            return Ast::Const(folded);
        }
    }
    match op {
        BinaryOp::Add => match (a, b) {
            (Ast::Const(c), b) if c == 0.0 => b,
            (a, Ast::Const(c)) if c == 0.0 => a,
            // a + (-b) reads better as a - b
            (a, Ast::Unary(UnaryOp::Neg, b)) => binary(BinaryOp::Sub, a, *b),
            (a, b) => Ast::Binary(op, Box::new(a), Box::new(b)),
        },
        BinaryOp::Sub => match (a, b) {
            (a, Ast::Const(c)) if c == 0.0 => a,
            (Ast::Const(c), b) if c == 0.0 => neg(b),
            (a, Ast::Unary(UnaryOp::Neg, b)) => binary(BinaryOp::Add, a, *b),
            (a, b) => Ast::Binary(op, Box::new(a), Box::new(b)),
        },
        BinaryOp::Mul => match (a, b) {
            (Ast::Const(c), _) | (_, Ast::Const(c)) if c == 0.0 => Ast::Const(0.0),
            (Ast::Const(c), b) if c == 1.0 => b,
            (a, Ast::Const(c)) if c == 1.0 => a,
            (Ast::Const(c), b) if c == -1.0 => neg(b),
            (a, Ast::Const(c)) if c == -1.0 => neg(a),
            (a, b) => Ast::Binary(op, Box::new(a), Box::new(b)),
        },
        BinaryOp::Div => match (a, b) {
            (Ast::Const(c), _) if c == 0.0 => Ast::Const(0.0),
            (a, Ast::Const(c)) if c == 1.0 => a,
            (a, Ast::Const(c)) if c == -1.0 => neg(a),
            (a, b) => Ast::Binary(op, Box::new(a), Box::new(b)),
        },
    }
}

fn pow(base: Ast, exponent: f64) -> Ast {
    if exponent == 0.0 {
        return Ast::Const(1.0);
    }
    if exponent == 1.0 {
        return base;
    }
    if let Ast::Const(v) = base {
        let folded = apply_pow(v, exponent);
        if folded.is_finite() {
            return Ast::Const(folded);
        }
        return Ast::Pow(Box::new(Ast::Const(v)), exponent);
    }
    Ast::Pow(Box::new(base), exponent)
}

// ---------------------------------------------------------------------------
// Shared scalar kernels: the checked walker and the compiled program use the
// same functions so both paths produce bit-identical values.
// ---------------------------------------------------------------------------

#[inline(always)]
fn apply_unary(op: UnaryOp, v: f64) -> f64 {
    match op {
        UnaryOp::Neg => -v,
        UnaryOp::Exp => v.exp(),
        UnaryOp::Log => v.ln(),
        UnaryOp::Sqrt => v.sqrt(),
        UnaryOp::Sin => v.sin(),
        UnaryOp::Cos => v.cos(),
        UnaryOp::Tanh => v.tanh(),
    }
}

#[inline(always)]
fn apply_binary(op: BinaryOp, a: f64, b: f64) -> f64 {
    match op {
        BinaryOp::Add => a + b,
        BinaryOp::Sub => a - b,
        BinaryOp::Mul => a * b,
        BinaryOp::Div => a / b,
    }
}

#[inline(always)]
fn apply_pow(base: f64, exponent: f64) -> f64 {
    // powi for small integer exponents; keep a single code path so the
    // compiled evaluator agrees bitwise.
    if exponent.fract() == 0.0 && exponent.abs() <= 32.0 {
        base.powi(exponent as i32)
    } else {
        base.powf(exponent)
    }
}

// ---------------------------------------------------------------------------
// Expression
// ---------------------------------------------------------------------------

/// A parsed, immutable scalar expression.
#[derive(Debug, Clone, PartialEq)]
pub struct Expression {
    ast: Ast,
}

impl Expression {
    /// Parse `source` into an expression.
    pub fn parse(source: &str) -> Result<Self, ParseError> {
        let mut parser = Parser::new(source)?;
        let ast = parser.sum()?;
        match parser.current.0 {
            Tok::Eof => Ok(Self { ast }),
            ref tok => Err(ParseError::Syntax {
                offset: parser.current.1,
                expected: "end of input or an operator".into(),
                found: tok.describe(),
            }),
        }
    }

    pub fn constant(v: f64) -> Self {
        Self { ast: Ast::Const(v) }
    }

    pub fn variable(v: Var) -> Self {
        Self { ast: Ast::Var(v) }
    }

    pub fn ast(&self) -> &Ast {
        &self.ast
    }

    /// Checked evaluation. Domain violations (log/sqrt of a non-positive
    /// argument, division by zero, non-finite intermediate) are reported with
    /// the offending subexpression.
    pub fn eval(&self, bindings: Bindings<'_>) -> Result<f64, EvalError> {
        eval_checked(&self.ast, bindings)
    }

    /// Symbolic derivative with respect to `var`, lightly simplified.
    pub fn differentiate(&self, var: Var) -> Expression {
        Expression {
            ast: differentiate_ast(&self.ast, var),
        }
    }

    /// Replace every occurrence of `var` by `replacement`.
    pub fn substitute(&self, var: Var, replacement: &Expression) -> Expression {
        Expression {
            ast: substitute_ast(&self.ast, var, &replacement.ast),
        }
    }

    /// Negate the whole expression.
    pub fn negated(&self) -> Expression {
        Expression {
            ast: neg(self.ast.clone()),
        }
    }

    /// All variables occurring in the expression.
    pub fn variables(&self) -> Vec<Var> {
        let mut out = Vec::new();
        collect_vars(&self.ast, &mut out);
        out.sort_by_key(var_order);
        out.dedup();
        out
    }

    /// Flatten into a stack program for fast repeated evaluation.
    pub fn compile(&self) -> CompiledExpr {
        CompiledExpr::from_ast(&self.ast)
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.ast, Ast::Const(_))
    }
}

fn var_order(v: &Var) -> usize {
    match v {
        Var::T => 0,
        Var::X => 1,
        Var::Y => 2,
        Var::Z(k) => 3 + k,
    }
}

fn collect_vars(ast: &Ast, out: &mut Vec<Var>) {
    match ast {
        Ast::Const(_) => {}
        Ast::Var(v) => out.push(*v),
        Ast::Unary(_, a) => collect_vars(a, out),
        Ast::Binary(_, a, b) => {
            collect_vars(a, out);
            collect_vars(b, out);
        }
        Ast::Pow(a, _) => collect_vars(a, out),
    }
}

fn eval_checked(ast: &Ast, bindings: Bindings<'_>) -> Result<f64, EvalError> {
    let domain_err = |node: &Ast, reason: &str| EvalError::Domain {
        subexpr: print_ast(node),
        reason: reason.to_string(),
    };
    let v = match ast {
        Ast::Const(v) => *v,
        Ast::Var(v) => bindings.get(*v).ok_or(EvalError::UnboundVariable {
            var: *v,
            available: bindings.z.len(),
        })?,
        Ast::Unary(op, a) => {
            let inner = eval_checked(a, bindings)?;
            match op {
                UnaryOp::Log if inner <= 0.0 => {
                    return Err(domain_err(ast, "log of a non-positive argument"))
                }
                UnaryOp::Sqrt if inner <= 0.0 => {
                    return Err(domain_err(ast, "sqrt of a non-positive argument"))
                }
                _ => {}
            }
            apply_unary(*op, inner)
        }
        Ast::Binary(op, a, b) => {
            let lhs = eval_checked(a, bindings)?;
            let rhs = eval_checked(b, bindings)?;
            if *op == BinaryOp::Div && rhs == 0.0 {
                return Err(domain_err(ast, "division by zero"));
            }
            apply_binary(*op, lhs, rhs)
        }
        Ast::Pow(a, c) => {
            let base = eval_checked(a, bindings)?;
            if base == 0.0 && *c < 0.0 {
                return Err(domain_err(ast, "zero base with negative exponent"));
            }
            if base < 0.0 && c.fract() != 0.0 {
                return Err(domain_err(ast, "negative base with non-integer exponent"));
            }
            apply_pow(base, *c)
        }
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(domain_err(ast, "non-finite result (overflow)"))
    }
}

fn differentiate_ast(ast: &Ast, var: Var) -> Ast {
    match ast {
        Ast::Const(_) => Ast::Const(0.0),
        Ast::Var(v) => Ast::Const(if *v == var { 1.0 } else { 0.0 }),
        Ast::Unary(op, a) => {
            let da = differentiate_ast(a, var);
            let a = (**a).clone();
            match op {
                UnaryOp::Neg => neg(da),
                UnaryOp::Exp => binary(BinaryOp::Mul, unary(UnaryOp::Exp, a), da),
                UnaryOp::Log => binary(BinaryOp::Div, da, a),
                UnaryOp::Sqrt => binary(
                    BinaryOp::Div,
                    da,
                    binary(BinaryOp::Mul, Ast::Const(2.0), unary(UnaryOp::Sqrt, a)),
                ),
                UnaryOp::Sin => binary(BinaryOp::Mul, unary(UnaryOp::Cos, a), da),
                UnaryOp::Cos => neg(binary(BinaryOp::Mul, unary(UnaryOp::Sin, a), da)),
                UnaryOp::Tanh => binary(
                    BinaryOp::Mul,
                    binary(
                        BinaryOp::Sub,
                        Ast::Const(1.0),
                        pow(unary(UnaryOp::Tanh, a), 2.0),
                    ),
                    da,
                ),
            }
        }
        Ast::Binary(op, a, b) => {
            let da = differentiate_ast(a, var);
            let db = differentiate_ast(b, var);
            let (a, b) = ((**a).clone(), (**b).clone());
            match op {
                BinaryOp::Add => binary(BinaryOp::Add, da, db),
                BinaryOp::Sub => binary(BinaryOp::Sub, da, db),
                BinaryOp::Mul => binary(
                    BinaryOp::Add,
                    binary(BinaryOp::Mul, da, b.clone()),
                    binary(BinaryOp::Mul, a, db),
                ),
                BinaryOp::Div => binary(
                    BinaryOp::Div,
                    binary(
                        BinaryOp::Sub,
                        binary(BinaryOp::Mul, da, b.clone()),
                        binary(BinaryOp::Mul, a, db),
                    ),
                    pow(b, 2.0),
                ),
            }
        }
        Ast::Pow(a, c) => {
            let da = differentiate_ast(a, var);
            let base = (**a).clone();
            binary(
                BinaryOp::Mul,
                binary(BinaryOp::Mul, Ast::Const(*c), pow(base, c - 1.0)),
                da,
            )
        }
    }
}

fn substitute_ast(ast: &Ast, var: Var, replacement: &Ast) -> Ast {
    match ast {
        Ast::Const(v) => Ast::Const(*v),
        Ast::Var(v) => {
            if *v == var {
                replacement.clone()
            } else {
                Ast::Var(*v)
            }
        }
        Ast::Unary(op, a) => unary(*op, substitute_ast(a, var, replacement)),
        Ast::Binary(op, a, b) => binary(
            *op,
            substitute_ast(a, var, replacement),
            substitute_ast(b, var, replacement),
        ),
        Ast::Pow(a, c) => pow(substitute_ast(a, var, replacement), *c),
    }
}

// ---------------------------------------------------------------------------
// Pretty-printer. Minimal parentheses; `pretty . parse . pretty` is the
// identity on strings.
// ---------------------------------------------------------------------------

fn prec(ast: &Ast) -> u8 {
    match ast {
        Ast::Binary(BinaryOp::Add | BinaryOp::Sub, ..) => 1,
        Ast::Binary(BinaryOp::Mul | BinaryOp::Div, ..) => 2,
        Ast::Unary(UnaryOp::Neg, _) => 3,
        Ast::Pow(..) => 4,
        Ast::Const(v) if *v < 0.0 => 3,
        _ => 5,
    }
}

fn print_ast(ast: &Ast) -> String {
    let mut s = String::new();
    write_ast(ast, &mut s);
    s
}

fn write_ast(ast: &Ast, out: &mut String) {
    match ast {
        Ast::Const(v) => {
            out.push_str(&format_const(*v));
        }
        Ast::Var(v) => out.push_str(&v.to_string()),
        Ast::Unary(UnaryOp::Neg, a) => {
            out.push('-');
            write_child(a, 3, true, out);
        }
        Ast::Unary(op, a) => {
            out.push_str(op.name());
            out.push('(');
            write_ast(a, out);
            out.push(')');
        }
        Ast::Binary(op, a, b) => {
            let (p, sym) = match op {
                BinaryOp::Add => (1, '+'),
                BinaryOp::Sub => (1, '-'),
                BinaryOp::Mul => (2, '*'),
                BinaryOp::Div => (2, '/'),
            };
            write_child(a, p, false, out);
            out.push(sym);
            // Right operand of `-` and `/` needs parens at equal precedence;
            // `+` and `*` do not.
            let strict = matches!(op, BinaryOp::Sub | BinaryOp::Div);
            write_child(b, p, strict, out);
        }
        Ast::Pow(a, c) => {
            write_child(a, 4, true, out);
            out.push('^');
            out.push_str(&format_const(*c));
        }
    }
}

fn write_child(child: &Ast, parent_prec: u8, strict: bool, out: &mut String) {
    let cp = prec(child);
    let need = if strict {
        cp <= parent_prec
    } else {
        cp < parent_prec
    };
    if need {
        out.push('(');
        write_ast(child, out);
        out.push(')');
    } else {
        write_ast(child, out);
    }
}

fn format_const(v: f64) -> String {
    // `{}` on f64 is the shortest representation that round-trips.
    format!("{v}")
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print_ast(&self.ast))
    }
}

// ---------------------------------------------------------------------------
// Compiled evaluator
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
enum Instr {
    Const(f64),
    Load(Var),
    Unary(UnaryOp),
    Binary(BinaryOp),
    Pow(f64),
}

/// Postfix program for an expression. Evaluation performs no domain checks:
/// out-of-domain inputs propagate as NaN/inf and are caught by the callers'
/// finiteness guards.
#[derive(Debug, Clone)]
pub struct CompiledExpr {
    code: Vec<Instr>,
    max_stack: usize,
}

const INLINE_STACK: usize = 64;

impl CompiledExpr {
    fn from_ast(ast: &Ast) -> Self {
        let mut code = Vec::new();
        let mut depth = 0usize;
        let mut max_stack = 0usize;
        flatten(ast, &mut code, &mut depth, &mut max_stack);
        CompiledExpr { code, max_stack }
    }

    pub fn eval(&self, t: f64, x: f64, y: f64, z: &[f64]) -> f64 {
        if self.max_stack <= INLINE_STACK {
            let mut stack = [0.0f64; INLINE_STACK];
            self.eval_on(&mut stack, t, x, y, z)
        } else {
            let mut stack = vec![0.0f64; self.max_stack];
            self.eval_on(&mut stack, t, x, y, z)
        }
    }

    /// Convenience for coefficient functions of `(t, x)`.
    pub fn eval_tx(&self, t: f64, x: f64) -> f64 {
        self.eval(t, x, 0.0, &[])
    }

    fn eval_on(&self, stack: &mut [f64], t: f64, x: f64, y: f64, z: &[f64]) -> f64 {
        let mut top = 0usize;
        for instr in &self.code {
            match instr {
                Instr::Const(v) => {
                    stack[top] = *v;
                    top += 1;
                }
                Instr::Load(var) => {
                    stack[top] = match var {
                        Var::T => t,
                        Var::X => x,
                        Var::Y => y,
                        Var::Z(k) => z.get(*k - 1).copied().unwrap_or(f64::NAN),
                    };
                    top += 1;
                }
                Instr::Unary(op) => {
                    stack[top - 1] = apply_unary(*op, stack[top - 1]);
                }
                Instr::Binary(op) => {
                    top -= 1;
                    stack[top - 1] = apply_binary(*op, stack[top - 1], stack[top]);
                }
                Instr::Pow(c) => {
                    stack[top - 1] = apply_pow(stack[top - 1], *c);
                }
            }
        }
        stack[top - 1]
    }
}

fn flatten(ast: &Ast, code: &mut Vec<Instr>, depth: &mut usize, max_stack: &mut usize) {
    match ast {
        Ast::Const(v) => {
            code.push(Instr::Const(*v));
            *depth += 1;
        }
        Ast::Var(v) => {
            code.push(Instr::Load(*v));
            *depth += 1;
        }
        Ast::Unary(op, a) => {
            flatten(a, code, depth, max_stack);
            code.push(Instr::Unary(*op));
        }
        Ast::Binary(op, a, b) => {
            flatten(a, code, depth, max_stack);
            flatten(b, code, depth, max_stack);
            code.push(Instr::Binary(*op));
            *depth -= 1;
        }
        Ast::Pow(a, c) => {
            flatten(a, code, depth, max_stack);
            code.push(Instr::Pow(*c));
        }
    }
    *max_stack = (*max_stack).max(*depth);
}
