//! Parser for the problem DSL.
//!
//! The surface syntax follows the usual optimization-block notation:
//!
//! ```text
//! parameters (a : R)
//! assuming
//!   h : 0 < a
//! optimization (x y : R)
//!   maximize sqrt (x - y)
//!   subject to
//!     c1 : y = 2*x - 3
//!     c2 : x^2 <= 2
//!     c3 : 0 <= x - y
//! ```
//!
//! Function application is by juxtaposition and binds tighter than any
//! operator; `^` binds tighter than unary minus, then `*` and `/`, then
//! `+` and `-`, then relations. `![a, b]` is a vector literal for cone
//! arguments, `S[i,j]` reads a matrix entry. Unicode `≤`, `≥`, `ℝ` and `∑`
//! are accepted with ASCII equivalents `<=`, `>=`, `R`, `sum`; `--` starts
//! a line comment. Strict `<` parses but can only be discharged by
//! condition elimination, never emitted.
//!
//! The same expression machinery parses `declare_atom` blocks (the
//! declarative atom schema, minus proof blocks) and the forward/backward
//! map files used for user-reduction checks.

use alloc::borrow::ToOwned;
use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use serde::Serialize;

use crate::atom::{ArgShape, AtomArg, AtomDecl, AtomRegistry, Curvature, Monotonicity};
use crate::expr::{Constraint, Expr, ParamDecl, Problem, Sense, Shape, VarDecl};

/// A location in the source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SourceSpan {
    pub line: usize,
    pub column: usize,
    pub length: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParseError {
    SyntaxError {
        span: SourceSpan,
        expected: String,
        found: String,
    },
    UnknownIdentifier {
        span: SourceSpan,
        name: String,
    },
    ArityMismatch {
        span: SourceSpan,
        atom: String,
        got: usize,
    },
}

impl ParseError {
    pub fn span(&self) -> SourceSpan {
        match self {
            ParseError::SyntaxError { span, .. }
            | ParseError::UnknownIdentifier { span, .. }
            | ParseError::ArityMismatch { span, .. } => *span,
        }
    }
}

impl core::fmt::Display for ParseError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            ParseError::SyntaxError {
                span,
                expected,
                found,
            } => write!(
                f,
                "syntax error at line {}, column {}: expected {expected}, found {found}",
                span.line, span.column
            ),
            ParseError::UnknownIdentifier { span, name } => write!(
                f,
                "unknown identifier `{name}` at line {}, column {}",
                span.line, span.column
            ),
            ParseError::ArityMismatch { span, atom, got } => write!(
                f,
                "wrong number of arguments for `{atom}` ({got}) at line {}, column {}",
                span.line, span.column
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kw {
    Parameters,
    Assuming,
    Optimization,
    Minimize,
    Maximize,
    Subject,
    To,
    Matrix,
    DeclareAtom,
    Conditions,
    ImplementationVars,
    ImplementationObjective,
    ImplementationConstraints,
    Solution,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(f64),
    Keyword(Kw),
    LParen,
    RParen,
    LBracket,
    RBracket,
    BangBracket,
    Comma,
    Colon,
    ColonEq,
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    Equals,
    Le,
    Lt,
    Ge,
    Gt,
    Question,
    Amp,
    Eof,
}

impl core::fmt::Display for Tok {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Number(v) => write!(f, "`{v}`"),
            Tok::Keyword(k) => write!(f, "`{k:?}`"),
            Tok::LParen => write!(f, "`(`"),
            Tok::RParen => write!(f, "`)`"),
            Tok::LBracket => write!(f, "`[`"),
            Tok::RBracket => write!(f, "`]`"),
            Tok::BangBracket => write!(f, "`![`"),
            Tok::Comma => write!(f, "`,`"),
            Tok::Colon => write!(f, "`:`"),
            Tok::ColonEq => write!(f, "`:=`"),
            Tok::Plus => write!(f, "`+`"),
            Tok::Minus => write!(f, "`-`"),
            Tok::Star => write!(f, "`*`"),
            Tok::Slash => write!(f, "`/`"),
            Tok::Caret => write!(f, "`^`"),
            Tok::Equals => write!(f, "`=`"),
            Tok::Le => write!(f, "`<=`"),
            Tok::Lt => write!(f, "`<`"),
            Tok::Ge => write!(f, "`>=`"),
            Tok::Gt => write!(f, "`>`"),
            Tok::Question => write!(f, "`?`"),
            Tok::Amp => write!(f, "`&`"),
            Tok::Eof => write!(f, "end of input"),
        }
    }
}

fn keyword_of(s: &str) -> Option<Kw> {
    Some(match s {
        "parameters" => Kw::Parameters,
        "assuming" => Kw::Assuming,
        "optimization" => Kw::Optimization,
        "minimize" => Kw::Minimize,
        "maximize" => Kw::Maximize,
        "subject" => Kw::Subject,
        "to" => Kw::To,
        "matrix" => Kw::Matrix,
        "declare_atom" => Kw::DeclareAtom,
        "conditions" => Kw::Conditions,
        "implementationVars" => Kw::ImplementationVars,
        "implementationObjective" => Kw::ImplementationObjective,
        "implementationConstraints" => Kw::ImplementationConstraints,
        "solution" => Kw::Solution,
        _ => return None,
    })
}

struct Lexer<'a> {
    src: &'a str,
    chars: Vec<char>,
    pos: usize,
    line: usize,
    col: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer {
            src,
            chars: src.chars().collect(),
            pos: 0,
            line: 1,
            col: 1,
        }
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.get(self.pos).copied()?;
        self.pos += 1;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn peek2(&self) -> Option<char> {
        self.chars.get(self.pos + 1).copied()
    }

    fn tokens(mut self) -> Result<Vec<(Tok, SourceSpan)>, ParseError> {
        let _ = self.src;
        let mut out = Vec::new();
        loop {
            while let Some(c) = self.peek() {
                if c.is_whitespace() {
                    self.bump();
                } else if c == '-' && self.peek2() == Some('-') {
                    while let Some(c) = self.peek() {
                        if c == '\n' {
                            break;
                        }
                        self.bump();
                    }
                } else {
                    break;
                }
            }
            let (line, col) = (self.line, self.col);
            let span = |len: usize| SourceSpan {
                line,
                column: col,
                length: len,
            };
            let c = match self.peek() {
                None => {
                    out.push((Tok::Eof, span(0)));
                    return Ok(out);
                }
                Some(c) => c,
            };
            let tok = match c {
                '(' => {
                    self.bump();
                    (Tok::LParen, span(1))
                }
                ')' => {
                    self.bump();
                    (Tok::RParen, span(1))
                }
                '[' => {
                    self.bump();
                    (Tok::LBracket, span(1))
                }
                ']' => {
                    self.bump();
                    (Tok::RBracket, span(1))
                }
                ',' => {
                    self.bump();
                    (Tok::Comma, span(1))
                }
                '+' => {
                    self.bump();
                    (Tok::Plus, span(1))
                }
                '-' | '\u{2212}' => {
                    self.bump();
                    (Tok::Minus, span(1))
                }
                '*' => {
                    self.bump();
                    (Tok::Star, span(1))
                }
                '/' => {
                    self.bump();
                    (Tok::Slash, span(1))
                }
                '^' => {
                    self.bump();
                    (Tok::Caret, span(1))
                }
                '=' => {
                    self.bump();
                    (Tok::Equals, span(1))
                }
                '?' => {
                    self.bump();
                    (Tok::Question, span(1))
                }
                '&' => {
                    self.bump();
                    (Tok::Amp, span(1))
                }
                '!' => {
                    if self.peek2() == Some('[') {
                        self.bump();
                        self.bump();
                        (Tok::BangBracket, span(2))
                    } else {
                        return Err(ParseError::SyntaxError {
                            span: span(1),
                            expected: "`![`".to_owned(),
                            found: "`!`".to_owned(),
                        });
                    }
                }
                ':' => {
                    if self.peek2() == Some('=') {
                        self.bump();
                        self.bump();
                        (Tok::ColonEq, span(2))
                    } else {
                        self.bump();
                        (Tok::Colon, span(1))
                    }
                }
                '<' => {
                    if self.peek2() == Some('=') {
                        self.bump();
                        self.bump();
                        (Tok::Le, span(2))
                    } else {
                        self.bump();
                        (Tok::Lt, span(1))
                    }
                }
                '>' => {
                    if self.peek2() == Some('=') {
                        self.bump();
                        self.bump();
                        (Tok::Ge, span(2))
                    } else {
                        self.bump();
                        (Tok::Gt, span(1))
                    }
                }
                '\u{2264}' => {
                    self.bump();
                    (Tok::Le, span(1))
                }
                '\u{2265}' => {
                    self.bump();
                    (Tok::Ge, span(1))
                }
                '\u{211d}' => {
                    self.bump();
                    (Tok::Ident("R".to_owned()), span(1))
                }
                '\u{2211}' => {
                    self.bump();
                    (Tok::Ident("sum".to_owned()), span(1))
                }
                c if c.is_ascii_digit() => {
                    let start = self.pos;
                    while self.peek().map(|c| c.is_ascii_digit()).unwrap_or(false) {
                        self.bump();
                    }
                    if self.peek() == Some('.')
                        && self.peek2().map(|c| c.is_ascii_digit()).unwrap_or(false)
                    {
                        self.bump();
                        while self.peek().map(|c| c.is_ascii_digit()).unwrap_or(false) {
                            self.bump();
                        }
                    }
                    if matches!(self.peek(), Some('e') | Some('E')) {
                        let save = self.pos;
                        self.bump();
                        if matches!(self.peek(), Some('+') | Some('-')) {
                            self.bump();
                        }
                        if self.peek().map(|c| c.is_ascii_digit()).unwrap_or(false) {
                            while self.peek().map(|c| c.is_ascii_digit()).unwrap_or(false) {
                                self.bump();
                            }
                        } else {
                            self.pos = save;
                        }
                    }
                    let text: String = self.chars[start..self.pos].iter().collect();
                    let value = text.parse::<f64>().map_err(|_| ParseError::SyntaxError {
                        span: span(text.chars().count()),
                        expected: "a number".to_owned(),
                        found: format!("`{text}`"),
                    })?;
                    (Tok::Number(value), span(text.chars().count()))
                }
                c if c.is_alphabetic() || c == '_' => {
                    let start = self.pos;
                    while self
                        .peek()
                        .map(|c| c.is_alphanumeric() || c == '_' || c == '\'' || c == '.')
                        .unwrap_or(false)
                    {
                        self.bump();
                    }
                    let text: String = self.chars[start..self.pos].iter().collect();
                    let tok = match keyword_of(&text) {
                        Some(kw) => Tok::Keyword(kw),
                        None => Tok::Ident(text.clone()),
                    };
                    (tok, span(text.chars().count()))
                }
                other => {
                    return Err(ParseError::SyntaxError {
                        span: span(1),
                        expected: "a token".to_owned(),
                        found: format!("`{other}`"),
                    });
                }
            };
            out.push(tok);
        }
    }
}

/// Scope of declared names available while parsing expressions.
struct Scope {
    vars: BTreeSet<String>,
    params: BTreeSet<String>,
}

struct Parser<'a> {
    toks: Vec<(Tok, SourceSpan)>,
    pos: usize,
    registry: &'a AtomRegistry,
    /// Identifiers that end greedy application parsing (map-file section
    /// headers).
    stop_idents: Vec<String>,
    /// Treat `ident :=` as a label terminating application arguments
    /// (map files list entries back to back).
    label_coloneq: bool,
}

impl<'a> Parser<'a> {
    fn new(text: &str, registry: &'a AtomRegistry) -> Result<Self, ParseError> {
        Ok(Parser {
            toks: Lexer::new(text).tokens()?,
            pos: 0,
            registry,
            stop_idents: Vec::new(),
            label_coloneq: false,
        })
    }

    /// True when the upcoming tokens form a label (`ident :` or
    /// `ident :=`), which terminates greedy application arguments.
    fn next_is_label(&self) -> bool {
        match self.peek() {
            Tok::Ident(name) => {
                if self.stop_idents.iter().any(|s| s == name) {
                    return true;
                }
                match self.toks.get(self.pos + 1).map(|(t, _)| t) {
                    Some(Tok::Colon) => true,
                    Some(Tok::ColonEq) => self.label_coloneq,
                    _ => false,
                }
            }
            _ => false,
        }
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn span(&self) -> SourceSpan {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> (Tok, SourceSpan) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err_expected(&self, what: &str) -> ParseError {
        ParseError::SyntaxError {
            span: self.span(),
            expected: what.to_owned(),
            found: self.peek().to_string(),
        }
    }

    fn expect(&mut self, t: Tok, what: &str) -> Result<SourceSpan, ParseError> {
        if *self.peek() == t {
            Ok(self.bump().1)
        } else {
            Err(self.err_expected(what))
        }
    }

    fn expect_ident(&mut self, what: &str) -> Result<(String, SourceSpan), ParseError> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                let span = self.bump().1;
                Ok((s, span))
            }
            _ => Err(self.err_expected(what)),
        }
    }

    // ---- declarations -------------------------------------------------

    /// One or more parenthesized groups: `(x y : R) (S : matrix 2)`.
    /// Inside a group, `,` separates further name/type runs.
    fn decl_groups(&mut self) -> Result<Vec<(String, Shape)>, ParseError> {
        let mut out = Vec::new();
        while *self.peek() == Tok::LParen {
            self.bump();
            loop {
                let mut names = Vec::new();
                loop {
                    let (n, _) = self.expect_ident("a declared name")?;
                    names.push(n);
                    if !matches!(self.peek(), Tok::Ident(_)) {
                        break;
                    }
                }
                self.expect(Tok::Colon, "`:`")?;
                let shape = self.shape()?;
                for n in names {
                    out.push((n, shape));
                }
                if *self.peek() == Tok::Comma {
                    self.bump();
                } else {
                    break;
                }
            }
            self.expect(Tok::RParen, "`)`")?;
        }
        if out.is_empty() {
            return Err(self.err_expected("`(`"));
        }
        Ok(out)
    }

    fn shape(&mut self) -> Result<Shape, ParseError> {
        match self.peek().clone() {
            Tok::Ident(s) if s == "R" || s == "real" => {
                self.bump();
                Ok(Shape::Scalar)
            }
            Tok::Keyword(Kw::Matrix) => {
                self.bump();
                match self.peek().clone() {
                    Tok::Number(v) if v >= 1.0 && crate::num::is_int(v) => {
                        self.bump();
                        Ok(Shape::SymMatrix(v as usize))
                    }
                    _ => Err(self.err_expected("a positive matrix size")),
                }
            }
            _ => Err(self.err_expected("`R` or `matrix n`")),
        }
    }

    // ---- expressions --------------------------------------------------

    fn rel_expr(&mut self, scope: &Scope) -> Result<Expr, ParseError> {
        let lhs = self.add_expr(scope)?;
        let op = match self.peek() {
            Tok::Equals => "eq",
            Tok::Le => "le",
            Tok::Lt => "lt",
            Tok::Ge => "ge",
            Tok::Gt => "gt",
            _ => return Ok(lhs),
        };
        self.bump();
        let rhs = self.add_expr(scope)?;
        Ok(match op {
            "eq" => Expr::eq(lhs, rhs),
            "le" => Expr::le(lhs, rhs),
            "lt" => Expr::apply("lt", alloc::vec![lhs, rhs]),
            "ge" => Expr::le(rhs, lhs),
            _ => Expr::apply("lt", alloc::vec![rhs, lhs]),
        })
    }

    fn add_expr(&mut self, scope: &Scope) -> Result<Expr, ParseError> {
        let mut lhs = self.mul_expr(scope)?;
        loop {
            match self.peek() {
                Tok::Plus => {
                    self.bump();
                    let rhs = self.mul_expr(scope)?;
                    lhs = Expr::add(lhs, rhs);
                }
                Tok::Minus => {
                    self.bump();
                    let rhs = self.mul_expr(scope)?;
                    lhs = Expr::sub(lhs, rhs);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn mul_expr(&mut self, scope: &Scope) -> Result<Expr, ParseError> {
        let mut lhs = self.unary_expr(scope)?;
        loop {
            match self.peek() {
                Tok::Star => {
                    self.bump();
                    let rhs = self.unary_expr(scope)?;
                    lhs = mk_mul(lhs, rhs, &scope.vars);
                }
                Tok::Slash => {
                    self.bump();
                    let rhs = self.unary_expr(scope)?;
                    lhs = mk_div(lhs, rhs, &scope.vars);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary_expr(&mut self, scope: &Scope) -> Result<Expr, ParseError> {
        if *self.peek() == Tok::Minus {
            self.bump();
            let inner = self.unary_expr(scope)?;
            // Fold a minus sign into numeric literals so negative constants
            // round-trip structurally.
            return Ok(match inner {
                Expr::Const(v) => Expr::Const(-v),
                other => Expr::neg(other),
            });
        }
        self.pow_expr(scope)
    }

    fn pow_expr(&mut self, scope: &Scope) -> Result<Expr, ParseError> {
        let base = self.app_expr(scope)?;
        if *self.peek() == Tok::Caret {
            self.bump();
            let exponent = self.unary_expr(scope)?;
            return Ok(match exponent {
                Expr::Const(v) if v == 2.0 => Expr::apply("square", alloc::vec![base]),
                other => Expr::apply("pow", alloc::vec![base, other]),
            });
        }
        Ok(base)
    }

    fn starts_primary(&self) -> bool {
        matches!(
            self.peek(),
            Tok::Ident(_) | Tok::Number(_) | Tok::LParen | Tok::BangBracket
        )
    }

    fn app_expr(&mut self, scope: &Scope) -> Result<Expr, ParseError> {
        // Function application by juxtaposition: the head must be an atom
        // identifier that is not shadowed by a declared variable/parameter.
        if let Tok::Ident(name) = self.peek().clone() {
            let head_span = self.span();
            let shadowed = scope.vars.contains(&name) || scope.params.contains(&name);
            if !shadowed && self.registry.knows(&name) {
                self.bump();
                let mut args = Vec::new();
                while self.starts_primary() && !self.next_is_label() {
                    args.push(self.primary(scope)?);
                }
                if !self.registry.arity_ok(&name, args.len()) {
                    return Err(ParseError::ArityMismatch {
                        span: head_span,
                        atom: name,
                        got: args.len(),
                    });
                }
                return Ok(Expr::Apply(name, args));
            }
        }
        self.primary(scope)
    }

    fn primary(&mut self, scope: &Scope) -> Result<Expr, ParseError> {
        let base = match self.peek().clone() {
            Tok::Number(v) => {
                self.bump();
                Expr::Const(v)
            }
            Tok::Ident(name) => {
                let span = self.span();
                self.bump();
                if scope.vars.contains(&name) {
                    Expr::Var(name)
                } else if scope.params.contains(&name) {
                    Expr::Param(name)
                } else if self.registry.knows(&name) {
                    // Zero-argument use of an atom name.
                    if !self.registry.arity_ok(&name, 0) {
                        return Err(ParseError::ArityMismatch {
                            span,
                            atom: name,
                            got: 0,
                        });
                    }
                    Expr::Apply(name, Vec::new())
                } else {
                    return Err(ParseError::UnknownIdentifier { span, name });
                }
            }
            Tok::LParen => {
                self.bump();
                let e = self.rel_expr(scope)?;
                self.expect(Tok::RParen, "`)`")?;
                e
            }
            Tok::BangBracket => {
                self.bump();
                let mut items = Vec::new();
                items.push(self.add_expr(scope)?);
                while *self.peek() == Tok::Comma {
                    self.bump();
                    items.push(self.add_expr(scope)?);
                }
                self.expect(Tok::RBracket, "`]`")?;
                Expr::Apply("vec".to_owned(), items)
            }
            _ => return Err(self.err_expected("an expression")),
        };
        // Optional matrix entry postfix.
        if *self.peek() == Tok::LBracket {
            self.bump();
            let i = self.index()?;
            self.expect(Tok::Comma, "`,`")?;
            let j = self.index()?;
            self.expect(Tok::RBracket, "`]`")?;
            return Ok(Expr::entry(base, i, j));
        }
        Ok(base)
    }

    fn index(&mut self) -> Result<usize, ParseError> {
        match self.peek().clone() {
            Tok::Number(v) if v >= 0.0 && crate::num::is_int(v) => {
                self.bump();
                Ok(v as usize)
            }
            _ => Err(self.err_expected("an integer index")),
        }
    }

    // ---- problems -----------------------------------------------------

    fn named_constraints(&mut self, scope: &Scope) -> Result<Vec<Constraint>, ParseError> {
        let mut out = Vec::new();
        loop {
            // A named constraint starts with `ident :`.
            let is_named = matches!(self.peek(), Tok::Ident(_))
                && self
                    .toks
                    .get(self.pos + 1)
                    .map(|(t, _)| *t == Tok::Colon)
                    .unwrap_or(false);
            if !is_named {
                break;
            }
            let (name, _) = self.expect_ident("a constraint name")?;
            self.expect(Tok::Colon, "`:`")?;
            let body = self.rel_expr(scope)?;
            out.push(Constraint { name, body });
        }
        Ok(out)
    }

    fn problem(&mut self) -> Result<Problem, ParseError> {
        let mut params = Vec::new();
        if *self.peek() == Tok::Keyword(Kw::Parameters) {
            self.bump();
            for (name, shape) in self.decl_groups()? {
                params.push(ParamDecl { name, shape });
            }
        }
        let param_scope = Scope {
            vars: BTreeSet::new(),
            params: params.iter().map(|p| p.name.clone()).collect(),
        };
        let mut assumptions = Vec::new();
        if *self.peek() == Tok::Keyword(Kw::Assuming) {
            self.bump();
            assumptions = self.named_constraints(&param_scope)?;
        }
        self.expect(Tok::Keyword(Kw::Optimization), "`optimization`")?;
        let mut vars = Vec::new();
        for (name, shape) in self.decl_groups()? {
            vars.push(VarDecl { name, shape });
        }
        let scope = Scope {
            vars: vars.iter().map(|v| v.name.clone()).collect(),
            params: param_scope.params.clone(),
        };
        let sense = match self.peek() {
            Tok::Keyword(Kw::Minimize) => Sense::Minimize,
            Tok::Keyword(Kw::Maximize) => Sense::Maximize,
            _ => return Err(self.err_expected("`minimize` or `maximize`")),
        };
        self.bump();
        let objective = self.rel_expr(&scope)?;
        let mut constraints = Vec::new();
        if *self.peek() == Tok::Keyword(Kw::Subject) {
            self.bump();
            self.expect(Tok::Keyword(Kw::To), "`to`")?;
            constraints = self.named_constraints(&scope)?;
            if constraints.is_empty() {
                return Err(self.err_expected("at least one named constraint"));
            }
        }
        Ok(Problem {
            vars,
            params,
            assumptions,
            sense,
            objective,
            constraints,
        })
    }

    fn at_eof(&self) -> bool {
        *self.peek() == Tok::Eof
    }
}

fn mk_mul(lhs: Expr, rhs: Expr, vars: &BTreeSet<String>) -> Expr {
    if lhs.is_var_free(vars) {
        Expr::smul(lhs, rhs)
    } else if rhs.is_var_free(vars) {
        Expr::smul(rhs, lhs)
    } else {
        Expr::apply("mul", alloc::vec![lhs, rhs])
    }
}

fn mk_div(lhs: Expr, rhs: Expr, vars: &BTreeSet<String>) -> Expr {
    if rhs.is_var_free(vars) {
        let coef = match &rhs {
            Expr::Const(c) if *c != 0.0 => Expr::Const(1.0 / c),
            _ => Expr::apply("div", alloc::vec![Expr::Const(1.0), rhs]),
        };
        Expr::smul(coef, lhs)
    } else {
        Expr::apply("div", alloc::vec![lhs, rhs])
    }
}

/// Parse a whole problem.
pub fn parse_problem(text: &str, registry: &AtomRegistry) -> Result<Problem, ParseError> {
    let mut p = Parser::new(text, registry)?;
    let problem = p.problem()?;
    if !p.at_eof() {
        return Err(p.err_expected("end of input"));
    }
    Ok(problem)
}

/// Parse a single expression over the given declarations.
pub fn parse_expr_str(
    text: &str,
    vars: &[VarDecl],
    params: &[ParamDecl],
    registry: &AtomRegistry,
) -> Result<Expr, ParseError> {
    let mut p = Parser::new(text, registry)?;
    let scope = Scope {
        vars: vars.iter().map(|v| v.name.clone()).collect(),
        params: params.iter().map(|p| p.name.clone()).collect(),
    };
    let e = p.rel_expr(&scope)?;
    if !p.at_eof() {
        return Err(p.err_expected("end of input"));
    }
    Ok(e)
}

/// Parse `declare_atom` blocks: the declarative atom schema without proof
/// blocks. Returns the declarations in order; they are not yet registered.
pub fn parse_atom_decls(text: &str, registry: &AtomRegistry) -> Result<Vec<AtomDecl>, ParseError> {
    let mut p = Parser::new(text, registry)?;
    let mut out = Vec::new();
    while !p.at_eof() {
        out.push(parse_one_atom(&mut p)?);
    }
    Ok(out)
}

fn parse_one_atom(p: &mut Parser) -> Result<AtomDecl, ParseError> {
    p.expect(Tok::Keyword(Kw::DeclareAtom), "`declare_atom`")?;
    let (name, _) = p.expect_ident("an atom name")?;
    p.expect(Tok::LBracket, "`[`")?;
    let (curv_name, curv_span) = p.expect_ident("a curvature")?;
    let curvature = match curv_name.as_str() {
        "convex" => Curvature::Convex,
        "concave" => Curvature::Concave,
        "affine" => Curvature::Affine,
        _ => {
            return Err(ParseError::SyntaxError {
                span: curv_span,
                expected: "`convex`, `concave` or `affine`".to_owned(),
                found: format!("`{curv_name}`"),
            })
        }
    };
    p.expect(Tok::RBracket, "`]`")?;

    // Argument groups `(x : R)+` with a monotonicity marker suffix:
    // `+` increasing, `-` decreasing, `?` neither, `&` auxiliary.
    let mut args = Vec::new();
    while *p.peek() == Tok::LParen {
        p.bump();
        let (arg_name, _) = p.expect_ident("an argument name")?;
        p.expect(Tok::Colon, "`:`")?;
        let shape = p.shape()?;
        p.expect(Tok::RParen, "`)`")?;
        let mono = match p.peek() {
            Tok::Plus => Monotonicity::Increasing,
            Tok::Minus => Monotonicity::Decreasing,
            Tok::Question => Monotonicity::Neither,
            Tok::Amp => Monotonicity::Auxiliary,
            _ => return Err(p.err_expected("a monotonicity marker (`+`, `-`, `?`, `&`)")),
        };
        p.bump();
        args.push(AtomArg {
            name: arg_name,
            shape: match shape {
                Shape::Scalar => ArgShape::Scalar,
                Shape::SymMatrix(_) => ArgShape::Matrix,
            },
            mono,
        });
    }

    let arg_decls: Vec<VarDecl> = args
        .iter()
        .map(|a| VarDecl {
            name: a.name.clone(),
            shape: Shape::Scalar,
        })
        .collect();
    let scope = Scope {
        vars: arg_decls.iter().map(|v| v.name.clone()).collect(),
        params: BTreeSet::new(),
    };

    p.expect(Tok::Colon, "`:`")?;
    let body = p.rel_expr(&scope)?;
    p.expect(Tok::ColonEq, "`:=`")?;

    let mut vconds = Vec::new();
    if *p.peek() == Tok::Keyword(Kw::Conditions) {
        p.bump();
        while *p.peek() == Tok::LParen {
            p.bump();
            let (_cond_name, _) = p.expect_ident("a condition name")?;
            p.expect(Tok::Colon, "`:`")?;
            vconds.push(p.rel_expr(&scope)?);
            p.expect(Tok::RParen, "`)`")?;
        }
    }

    let mut impl_vars = Vec::new();
    if *p.peek() == Tok::Keyword(Kw::ImplementationVars) {
        p.bump();
        while *p.peek() == Tok::LParen {
            p.bump();
            let (vn, _) = p.expect_ident("an implementation variable name")?;
            p.expect(Tok::Colon, "`:`")?;
            let shape = p.shape()?;
            p.expect(Tok::RParen, "`)`")?;
            impl_vars.push((vn, shape));
        }
    }

    let impl_scope = Scope {
        vars: scope
            .vars
            .iter()
            .cloned()
            .chain(impl_vars.iter().map(|(n, _)| n.clone()))
            .collect(),
        params: BTreeSet::new(),
    };

    p.expect(
        Tok::Keyword(Kw::ImplementationObjective),
        "`implementationObjective`",
    )?;
    let impl_objective = p.rel_expr(&impl_scope)?;

    let mut impl_constraints = Vec::new();
    if *p.peek() == Tok::Keyword(Kw::ImplementationConstraints) {
        p.bump();
        while *p.peek() == Tok::LParen {
            p.bump();
            let (_cn, _) = p.expect_ident("a constraint name")?;
            p.expect(Tok::Colon, "`:`")?;
            impl_constraints.push(p.rel_expr(&impl_scope)?);
            p.expect(Tok::RParen, "`)`")?;
        }
    }

    let mut solution = Vec::new();
    if *p.peek() == Tok::Keyword(Kw::Solution) {
        p.bump();
        while *p.peek() == Tok::LParen {
            p.bump();
            let (vn, _) = p.expect_ident("an implementation variable name")?;
            p.expect(Tok::ColonEq, "`:=`")?;
            solution.push((vn, p.rel_expr(&scope)?));
            p.expect(Tok::RParen, "`)`")?;
        }
    }

    Ok(AtomDecl {
        name,
        args,
        curvature,
        body,
        vconds,
        bconds: Vec::new(),
        impl_vars,
        impl_objective,
        impl_constraints,
        solution,
        boolean: false,
        strict: false,
        variadic: false,
    })
}

/// Parse a user-reduction map file:
///
/// ```text
/// forward
///   x := <expr over source-problem variables>
/// backward
///   x := <expr over target-problem variables>
/// ```
pub fn parse_user_maps(
    text: &str,
    source: &Problem,
    target: &Problem,
    registry: &AtomRegistry,
) -> Result<(Vec<(String, Expr)>, Vec<(String, Expr)>), ParseError> {
    let mut p = Parser::new(text, registry)?;
    p.stop_idents = alloc::vec!["forward".to_owned(), "backward".to_owned()];
    p.label_coloneq = true;
    let mut forward = Vec::new();
    let mut backward = Vec::new();
    let src_scope = Scope {
        vars: source.vars.iter().map(|v| v.name.clone()).collect(),
        params: source.params.iter().map(|q| q.name.clone()).collect(),
    };
    let tgt_scope = Scope {
        vars: target.vars.iter().map(|v| v.name.clone()).collect(),
        params: target.params.iter().map(|q| q.name.clone()).collect(),
    };
    let mut section: Option<bool> = None;
    loop {
        match p.peek().clone() {
            Tok::Eof => break,
            Tok::Ident(s) if s == "forward" => {
                p.bump();
                section = Some(true);
            }
            Tok::Ident(s) if s == "backward" => {
                p.bump();
                section = Some(false);
            }
            Tok::Ident(name) => {
                let fwd = match section {
                    Some(f) => f,
                    None => return Err(p.err_expected("`forward` or `backward`")),
                };
                p.bump();
                p.expect(Tok::ColonEq, "`:=`")?;
                let scope = if fwd { &src_scope } else { &tgt_scope };
                let e = p.rel_expr(scope)?;
                if fwd {
                    forward.push((name, e));
                } else {
                    backward.push((name, e));
                }
            }
            _ => return Err(p.err_expected("a map entry")),
        }
    }
    Ok((forward, backward))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atom::AtomRegistry;

    fn reg() -> AtomRegistry {
        AtomRegistry::builtin()
    }

    const SO1: &str = "optimization (x y : R)
  maximize sqrt (x - y)
  subject to
    c1 : y = 2*x - 3
    c2 : x^2 <= 2
    c3 : 0 <= x - y
";

    #[test]
    fn parses_worked_example() {
        let p = parse_problem(SO1, &reg()).unwrap();
        assert_eq!(p.vars.len(), 2);
        assert_eq!(p.sense, Sense::Maximize);
        assert_eq!(p.constraints.len(), 3);
        assert_eq!(p.constraints[0].name, "c1");
        // y = 2*x - 3 parses with precedence (2*x) - 3.
        let c1 = &p.constraints[0].body;
        match c1 {
            Expr::Apply(f, args) => {
                assert_eq!(f, "eq");
                assert_eq!(args[0], Expr::var("y"));
                assert_eq!(
                    args[1],
                    Expr::sub(Expr::smul(Expr::Const(2.0), Expr::var("x")), Expr::Const(3.0))
                );
            }
            _ => panic!("c1 should be an equation"),
        }
        // x^2 <= 2 parses with ^ binding tighter than <=.
        match &p.constraints[1].body {
            Expr::Apply(f, args) => {
                assert_eq!(f, "le");
                assert_eq!(args[0], Expr::apply("square", alloc::vec![Expr::var("x")]));
            }
            _ => panic!("c2 should be an inequality"),
        }
    }

    #[test]
    fn parses_cone_constraint() {
        let src = "optimization (x : R) minimize x subject to c : posOrthCone x";
        let p = parse_problem(src, &reg()).unwrap();
        assert_eq!(p.vars.len(), 1);
        assert_eq!(
            p.constraints[0].body,
            Expr::apply("posOrthCone", alloc::vec![Expr::var("x")])
        );
    }

    #[test]
    fn parses_parameters() {
        let src = "parameters (a : R)
optimization (x y : R)
  maximize sqrt (x - y)
  subject to
    c1 : y = a*x - 3
    c3 : 0 <= x - y
";
        let p = parse_problem(src, &reg()).unwrap();
        assert_eq!(p.params.len(), 1);
        match &p.constraints[0].body {
            Expr::Apply(_, args) => {
                assert_eq!(
                    args[1],
                    Expr::sub(Expr::smul(Expr::param("a"), Expr::var("x")), Expr::Const(3.0))
                );
            }
            _ => panic!(),
        }
    }

    #[test]
    fn parses_vector_literal_and_rotated_cone() {
        let src = "optimization (x t.0 : R) minimize t.0 subject to c4' : rotatedSoCone 0.5 (x - 1) ![t.0]";
        let p = parse_problem(src, &reg()).unwrap();
        match &p.constraints[0].body {
            Expr::Apply(f, args) => {
                assert_eq!(f, "rotatedSoCone");
                assert_eq!(args.len(), 3);
                assert_eq!(args[2], Expr::apply("vec", alloc::vec![Expr::var("t.0")]));
            }
            _ => panic!(),
        }
    }

    #[test]
    fn unknown_identifier_is_reported() {
        let src = "optimization (x : R) minimize zz";
        match parse_problem(src, &reg()) {
            Err(ParseError::UnknownIdentifier { name, .. }) => assert_eq!(name, "zz"),
            other => panic!("expected unknown identifier, got {other:?}"),
        }
    }

    #[test]
    fn arity_mismatch_is_reported() {
        let src = "optimization (x : R) minimize sqrt x x";
        assert!(matches!(
            parse_problem(src, &reg()),
            Err(ParseError::ArityMismatch { .. })
        ));
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(parse_problem("", &reg()).is_err());
    }

    #[test]
    fn unicode_aliases() {
        let src = "optimization (x y : ℝ)
  maximize sqrt (x - y)
  subject to
    c3 : 0 ≤ x - y
";
        let p = parse_problem(src, &reg()).unwrap();
        assert_eq!(p.vars.len(), 2);
        match &p.constraints[0].body {
            Expr::Apply(f, _) => assert_eq!(f, "le"),
            _ => panic!(),
        }
    }

    #[test]
    fn strict_inequality_parses() {
        let src = "optimization (x : R) minimize x subject to c : 0 < x";
        let p = parse_problem(src, &reg()).unwrap();
        match &p.constraints[0].body {
            Expr::Apply(f, _) => assert_eq!(f, "lt"),
            _ => panic!(),
        }
    }

    #[test]
    fn matrix_declaration_and_entry() {
        let src = "optimization (S : matrix 2) maximize logdet S subject to c : 0 <= S[0,1]";
        let p = parse_problem(src, &reg()).unwrap();
        assert_eq!(p.vars[0].shape, Shape::SymMatrix(2));
        match &p.constraints[0].body {
            Expr::Apply(_, args) => {
                assert_eq!(args[1], Expr::entry(Expr::var("S"), 0, 1));
            }
            _ => panic!(),
        }
    }

    #[test]
    fn declare_atom_roundtrip() {
        let src = "declare_atom mylog [concave] (x : R)+ : log x :=
  conditions (cond : 0 < x)
  implementationVars (t : R)
  implementationObjective t
  implementationConstraints (c_exp : expCone t 1 x)
  solution (t := log x)
";
        let decls = parse_atom_decls(src, &reg()).unwrap();
        assert_eq!(decls.len(), 1);
        let d = &decls[0];
        assert_eq!(d.name, "mylog");
        assert_eq!(d.curvature, Curvature::Concave);
        assert_eq!(d.args[0].mono, Monotonicity::Increasing);
        assert_eq!(d.vconds.len(), 1);
        assert_eq!(d.impl_vars.len(), 1);
        assert_eq!(d.impl_constraints.len(), 1);
        assert_eq!(d.solution.len(), 1);
    }
}
