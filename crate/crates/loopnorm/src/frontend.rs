//! The `.loop` DSL: a human-writable surface syntax for the IR.
//!
//! Grammar sketch:
//!
//! ```text
//! program := (param | array | stmt)*
//! param   := "param" IDENT ("=" INT)? ";"
//! array   := "array" IDENT "[" extent ("," extent)* "]" (":" ("int"|"float"))? ";"
//! stmt    := loop | comp
//! loop    := ("parallel"|"vectorize")* "for" IDENT "in" affine ".." bound "{" stmt* "}"
//! bound   := "min" "(" affine "," affine ")" | "ceildiv" "(" affine "," INT ")" | affine
//! comp    := (IDENT ":")? IDENT "[" affine ("," affine)* "]" ("="|"+=") expr ";"
//! ```
//!
//! Upper bounds are exclusive (`0..N` means `< N`). `+=` desugars to an
//! explicit read of the written cell plus an addition. Loop steps other than
//! +1 are not expressible. Computations may carry an explicit label; without
//! one they are numbered `s0, s1, ...` in parse order (the pretty printer
//! always emits labels so that print-then-parse preserves ids).

use std::fmt;

use crate::ir::*;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SourceSpan {
    pub start_line: u32,
    pub start_col: u32,
    pub end_line: u32,
    pub end_col: u32,
}

impl fmt::Display for SourceSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.start_line, self.start_col)
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{span}: {message}")]
pub struct ParseError {
    pub span: SourceSpan,
    pub message: String,
}

// ---------------------------------------------------------------------------
// Lexer

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Sym(&'static str),
    Eof,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
    line: u32,
    col: u32,
}

struct Token {
    tok: Tok,
    span: SourceSpan,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer {
            src: src.as_bytes(),
            pos: 0,
            line: 1,
            col: 1,
        }
    }

    fn bump(&mut self) -> u8 {
        let b = self.src[self.pos];
        self.pos += 1;
        if b == b'\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        b
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn here(&self) -> (u32, u32) {
        (self.line, self.col)
    }

    fn next_token(&mut self) -> Result<Token, ParseError> {
        loop {
            match self.peek() {
                Some(b) if b.is_ascii_whitespace() => {
                    self.bump();
                }
                Some(b'#') => {
                    while let Some(b) = self.peek() {
                        if b == b'\n' {
                            break;
                        }
                        self.bump();
                    }
                }
                _ => break,
            }
        }
        let (sl, sc) = self.here();
        let mk = |tok, lex: &Lexer| Token {
            tok,
            span: SourceSpan {
                start_line: sl,
                start_col: sc,
                end_line: lex.line,
                end_col: lex.col,
            },
        };
        let b = match self.peek() {
            None => return Ok(mk(Tok::Eof, self)),
            Some(b) => b,
        };
        if b.is_ascii_alphabetic() || b == b'_' {
            let start = self.pos;
            while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == b'_') {
                self.bump();
            }
            let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap().to_string();
            return Ok(mk(Tok::Ident(text), self));
        }
        if b.is_ascii_digit() {
            let start = self.pos;
            while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                self.bump();
            }
            let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
            let value = text.parse::<i64>().map_err(|_| ParseError {
                span: SourceSpan {
                    start_line: sl,
                    start_col: sc,
                    end_line: self.line,
                    end_col: self.col,
                },
                message: format!("integer literal `{text}` out of range"),
            })?;
            return Ok(mk(Tok::Int(value), self));
        }
        self.bump();
        let sym: &'static str = match b {
            b';' => ";",
            b',' => ",",
            b'[' => "[",
            b']' => "]",
            b'{' => "{",
            b'}' => "}",
            b'(' => "(",
            b')' => ")",
            b':' => ":",
            b'*' => "*",
            b'/' => "/",
            b'-' => "-",
            b'.' => {
                if self.peek() == Some(b'.') {
                    self.bump();
                    ".."
                } else {
                    return Err(ParseError {
                        span: SourceSpan {
                            start_line: sl,
                            start_col: sc,
                            end_line: self.line,
                            end_col: self.col,
                        },
                        message: "expected `..`".into(),
                    });
                }
            }
            b'+' => {
                if self.peek() == Some(b'=') {
                    self.bump();
                    "+="
                } else {
                    "+"
                }
            }
            b'=' => "=",
            other => {
                return Err(ParseError {
                    span: SourceSpan {
                        start_line: sl,
                        start_col: sc,
                        end_line: self.line,
                        end_col: self.col,
                    },
                    message: format!("unexpected character `{}`", other as char),
                })
            }
        };
        Ok(mk(Tok::Sym(sym), self))
    }
}

// ---------------------------------------------------------------------------
// Parser

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    next_comp_id: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn peek2(&self) -> &Tok {
        &self.tokens[(self.pos + 1).min(self.tokens.len() - 1)].tok
    }

    fn span(&self) -> SourceSpan {
        self.tokens[self.pos].span
    }

    fn bump(&mut self) -> &Tok {
        let t = &self.tokens[self.pos].tok;
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError {
            span: self.span(),
            message: message.into(),
        })
    }

    fn expect_sym(&mut self, s: &str) -> Result<(), ParseError> {
        if self.at_sym(s) {
            self.bump();
            Ok(())
        } else {
            self.err(format!("expected `{s}`"))
        }
    }

    fn at_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Sym(x) if *x == s)
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        if self.at_sym(s) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn at_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(x) if x == kw)
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.at_kw(kw) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            _ => self.err("expected identifier"),
        }
    }

    fn int(&mut self) -> Result<i64, ParseError> {
        let neg = self.eat_sym("-");
        match *self.peek() {
            Tok::Int(v) => {
                self.bump();
                Ok(if neg { -v } else { v })
            }
            _ => self.err("expected integer"),
        }
    }

    fn program(&mut self) -> Result<Program, ParseError> {
        let mut p = Program::default();
        loop {
            if self.at_kw("param") {
                self.bump();
                let name = self.ident()?;
                let default = if self.eat_sym("=") {
                    Some(self.int()?)
                } else {
                    None
                };
                self.expect_sym(";")?;
                p.parameters.push(ParamDecl { name, default });
            } else if self.at_kw("array") {
                self.bump();
                let name = self.ident()?;
                self.expect_sym("[")?;
                let mut dims = Vec::new();
                loop {
                    match self.peek().clone() {
                        Tok::Int(v) => {
                            self.bump();
                            dims.push(Extent::Const(v));
                        }
                        Tok::Ident(s) => {
                            self.bump();
                            dims.push(Extent::Param(s));
                        }
                        _ => return self.err("expected extent (integer or parameter)"),
                    }
                    if !self.eat_sym(",") {
                        break;
                    }
                }
                self.expect_sym("]")?;
                let elem = if self.eat_sym(":") {
                    if self.eat_kw("int") {
                        ElemKind::Int
                    } else if self.eat_kw("float") {
                        ElemKind::Float
                    } else {
                        return self.err("expected `int` or `float`");
                    }
                } else {
                    ElemKind::Int
                };
                self.expect_sym(";")?;
                p.arrays.push(ArrayDecl { name, dims, elem });
            } else if self.peek() == &Tok::Eof {
                break;
            } else {
                let s = self.stmt()?;
                p.body.push(s);
            }
        }
        Ok(p)
    }

    fn stmt(&mut self) -> Result<Stmt, ParseError> {
        let mut parallel = false;
        let mut vectorize = false;
        loop {
            if self.at_kw("parallel") {
                self.bump();
                parallel = true;
            } else if self.at_kw("vectorize") {
                self.bump();
                vectorize = true;
            } else {
                break;
            }
        }
        if self.at_kw("for") {
            self.bump();
            let iter = self.ident()?;
            if !self.eat_kw("in") {
                return self.err("expected `in`");
            }
            let lo = self.affine()?;
            self.expect_sym("..")?;
            let hi = self.upper_bound()?;
            self.expect_sym("{")?;
            let mut body = Vec::new();
            while !self.eat_sym("}") {
                if self.peek() == &Tok::Eof {
                    return self.err("unexpected end of input, expected `}`");
                }
                body.push(self.stmt()?);
            }
            let mut l = LoopNode::new(&iter, lo, hi, body);
            l.parallel = parallel;
            l.vectorize = vectorize;
            return Ok(Stmt::Loop(l));
        }
        if parallel || vectorize {
            return self.err("`parallel`/`vectorize` may only annotate loops");
        }
        // Computation, optionally labelled.
        let label = if matches!(self.peek(), Tok::Ident(_)) && self.peek2() == &Tok::Sym(":") {
            let id = self.ident()?;
            self.bump(); // ':'
            Some(id)
        } else {
            None
        };
        let array = self.ident()?;
        self.expect_sym("[")?;
        let mut index = Vec::new();
        loop {
            index.push(self.affine()?);
            if !self.eat_sym(",") {
                break;
            }
        }
        self.expect_sym("]")?;
        let write = Access { array, index };
        let id = label.unwrap_or_else(|| {
            let id = format!("s{}", self.next_comp_id);
            id
        });
        self.next_comp_id += 1;
        let mut reads = Vec::new();
        let expr = if self.eat_sym("+=") {
            reads.push(write.clone());
            let rhs = self.expr(&mut reads)?;
            Expr::Add(Box::new(Expr::Read(0)), Box::new(rhs))
        } else if self.eat_sym("=") {
            self.expr(&mut reads)?
        } else {
            return self.err("expected `=` or `+=`");
        };
        self.expect_sym(";")?;
        Ok(Stmt::Comp(Computation {
            id,
            write,
            reads,
            expr,
        }))
    }

    fn upper_bound(&mut self) -> Result<Bound, ParseError> {
        if self.at_kw("min") && self.peek2() == &Tok::Sym("(") {
            self.bump();
            self.bump();
            let a = self.affine()?;
            self.expect_sym(",")?;
            let b = self.affine()?;
            self.expect_sym(")")?;
            return Ok(Bound::Min { min: [a, b] });
        }
        if self.at_kw("ceildiv") && self.peek2() == &Tok::Sym("(") {
            self.bump();
            self.bump();
            let a = self.affine()?;
            self.expect_sym(",")?;
            let k = self.int()?;
            if k < 1 {
                return self.err("ceildiv divisor must be >= 1");
            }
            self.expect_sym(")")?;
            return Ok(Bound::CeilDiv { ceildiv: (a, k) });
        }
        Ok(Bound::Affine(self.affine()?))
    }

    /// Parses an expression restricted to the affine index language.
    fn affine(&mut self) -> Result<AffineExpr, ParseError> {
        let span = self.span();
        let mut reads = Vec::new();
        let e = self.expr(&mut reads)?;
        if !reads.is_empty() {
            return Err(ParseError {
                span,
                message: "array access not allowed in affine position".into(),
            });
        }
        expr_to_affine(&e).map_err(|m| ParseError {
            span,
            message: m,
        })
    }

    fn expr(&mut self, reads: &mut Vec<Access>) -> Result<Expr, ParseError> {
        let mut lhs = self.term(reads)?;
        loop {
            if self.eat_sym("+") {
                let rhs = self.term(reads)?;
                lhs = Expr::Add(Box::new(lhs), Box::new(rhs));
            } else if self.eat_sym("-") {
                let rhs = self.term(reads)?;
                lhs = Expr::Sub(Box::new(lhs), Box::new(rhs));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self, reads: &mut Vec<Access>) -> Result<Expr, ParseError> {
        let mut lhs = self.factor(reads)?;
        loop {
            if self.eat_sym("*") {
                let rhs = self.factor(reads)?;
                lhs = Expr::Mul(Box::new(lhs), Box::new(rhs));
            } else if self.eat_sym("/") {
                let rhs = self.factor(reads)?;
                lhs = Expr::Div(Box::new(lhs), Box::new(rhs));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn factor(&mut self, reads: &mut Vec<Access>) -> Result<Expr, ParseError> {
        if self.eat_sym("-") {
            let inner = self.factor(reads)?;
            return Ok(match inner {
                Expr::Lit(v) => Expr::Lit(-v),
                e => Expr::Sub(Box::new(Expr::Lit(0)), Box::new(e)),
            });
        }
        if self.eat_sym("(") {
            let e = self.expr(reads)?;
            self.expect_sym(")")?;
            return Ok(e);
        }
        if (self.at_kw("min") || self.at_kw("max")) && self.peek2() == &Tok::Sym("(") {
            let is_min = self.at_kw("min");
            self.bump();
            self.bump();
            let a = self.expr(reads)?;
            self.expect_sym(",")?;
            let b = self.expr(reads)?;
            self.expect_sym(")")?;
            return Ok(if is_min {
                Expr::Min(Box::new(a), Box::new(b))
            } else {
                Expr::Max(Box::new(a), Box::new(b))
            });
        }
        match self.peek().clone() {
            Tok::Int(v) => {
                self.bump();
                Ok(Expr::Lit(v))
            }
            Tok::Ident(name) => {
                self.bump();
                if self.eat_sym("[") {
                    let mut index = Vec::new();
                    loop {
                        index.push(self.affine()?);
                        if !self.eat_sym(",") {
                            break;
                        }
                    }
                    self.expect_sym("]")?;
                    reads.push(Access { array: name, index });
                    Ok(Expr::Read(reads.len() - 1))
                } else {
                    Ok(Expr::Iter(name))
                }
            }
            _ => self.err("expected expression"),
        }
    }
}

/// Folds an opaque expression into the affine form; fails with
/// "non-affine index" on quadratic terms, division, min/max.
fn expr_to_affine(e: &Expr) -> Result<AffineExpr, String> {
    match e {
        Expr::Lit(v) => Ok(AffineExpr::lit(*v)),
        Expr::Iter(v) => Ok(AffineExpr::var(v)),
        Expr::Read(_) => Err("non-affine index: array access".into()),
        Expr::Add(a, b) => Ok(expr_to_affine(a)?.add(&expr_to_affine(b)?)),
        Expr::Sub(a, b) => Ok(expr_to_affine(a)?.sub(&expr_to_affine(b)?)),
        Expr::Mul(a, b) => {
            let x = expr_to_affine(a)?;
            let y = expr_to_affine(b)?;
            if x.is_const() {
                Ok(y.scale(x.constant))
            } else if y.is_const() {
                Ok(x.scale(y.constant))
            } else {
                Err("non-affine index: product of variables".into())
            }
        }
        Expr::Div(_, _) => Err("non-affine index: division".into()),
        Expr::Min(_, _) | Expr::Max(_, _) => Err("non-affine index: min/max".into()),
    }
}

/// Parses DSL text into a validated [`Program`].
pub fn parse(text: &str) -> Result<Program, ParseError> {
    let mut lexer = Lexer::new(text);
    let mut tokens = Vec::new();
    loop {
        let t = lexer.next_token()?;
        let eof = t.tok == Tok::Eof;
        tokens.push(t);
        if eof {
            break;
        }
    }
    let mut parser = Parser {
        tokens,
        pos: 0,
        next_comp_id: 0,
    };
    let p = parser.program()?;
    let diags = validate(&p);
    if let Some(d) = diags.first() {
        return Err(ParseError {
            span: SourceSpan {
                start_line: 1,
                start_col: 1,
                end_line: 1,
                end_col: 1,
            },
            message: d.to_string(),
        });
    }
    Ok(p)
}

// ---------------------------------------------------------------------------
// Pretty printer

/// Prints a program back to DSL text. Law: `parse(pretty_print(p))` is
/// structurally equal to `p` with `rename = false`.
pub fn pretty_print(p: &Program) -> String {
    let mut out = String::new();
    for pd in &p.parameters {
        match pd.default {
            Some(v) => out.push_str(&format!("param {} = {v};\n", pd.name)),
            None => out.push_str(&format!("param {};\n", pd.name)),
        }
    }
    for a in &p.arrays {
        let dims: Vec<String> = a
            .dims
            .iter()
            .map(|d| match d {
                Extent::Const(c) => c.to_string(),
                Extent::Param(p) => p.clone(),
            })
            .collect();
        let elem = match a.elem {
            ElemKind::Int => "",
            ElemKind::Float => ": float",
        };
        out.push_str(&format!("array {}[{}]{};\n", a.name, dims.join(", "), elem));
    }
    for s in &p.body {
        print_stmt(s, 0, &mut out);
    }
    out
}

fn indent(n: usize, out: &mut String) {
    for _ in 0..n {
        out.push_str("  ");
    }
}

fn print_stmt(s: &Stmt, depth: usize, out: &mut String) {
    match s {
        Stmt::Loop(l) => {
            indent(depth, out);
            if l.parallel {
                out.push_str("parallel ");
            }
            if l.vectorize {
                out.push_str("vectorize ");
            }
            out.push_str(&format!("for {} in {}..{} {{\n", l.iter, l.lo, l.hi));
            for c in &l.body {
                print_stmt(c, depth + 1, out);
            }
            indent(depth, out);
            out.push_str("}\n");
        }
        Stmt::Comp(c) => {
            indent(depth, out);
            out.push_str(&format!("{}: {}", c.id, c.write));
            // `+=` sugar when the expression is `read-of-write + rhs`.
            if let Expr::Add(lhs, rhs) = &c.expr {
                if **lhs == Expr::Read(0) && !c.reads.is_empty() && c.reads[0] == c.write {
                    out.push_str(" += ");
                    print_expr(rhs, &c.reads, 0, out);
                    out.push_str(";\n");
                    return;
                }
            }
            out.push_str(" = ");
            print_expr(&c.expr, &c.reads, 0, out);
            out.push_str(";\n");
        }
        Stmt::Call(call) => {
            indent(depth, out);
            out.push_str(&format!(
                "# idiom call: {}({})\n",
                call.idiom,
                call.args.join(", ")
            ));
        }
    }
}

fn print_expr(e: &Expr, reads: &[Access], prec: u8, out: &mut String) {
    match e {
        Expr::Lit(v) => out.push_str(&v.to_string()),
        Expr::Iter(v) => out.push_str(v),
        Expr::Read(k) => out.push_str(&reads[*k].to_string()),
        Expr::Add(a, b) => {
            let wrap = prec > 1;
            if wrap {
                out.push('(');
            }
            print_expr(a, reads, 1, out);
            out.push_str(" + ");
            print_expr(b, reads, 2, out);
            if wrap {
                out.push(')');
            }
        }
        Expr::Sub(a, b) => {
            let wrap = prec > 1;
            if wrap {
                out.push('(');
            }
            print_expr(a, reads, 1, out);
            out.push_str(" - ");
            print_expr(b, reads, 2, out);
            if wrap {
                out.push(')');
            }
        }
        Expr::Mul(a, b) => {
            let wrap = prec > 2;
            if wrap {
                out.push('(');
            }
            print_expr(a, reads, 2, out);
            out.push_str(" * ");
            print_expr(b, reads, 3, out);
            if wrap {
                out.push(')');
            }
        }
        Expr::Div(a, b) => {
            let wrap = prec > 2;
            if wrap {
                out.push('(');
            }
            print_expr(a, reads, 2, out);
            out.push_str(" / ");
            print_expr(b, reads, 3, out);
            if wrap {
                out.push(')');
            }
        }
        Expr::Min(a, b) => {
            out.push_str("min(");
            print_expr(a, reads, 0, out);
            out.push_str(", ");
            print_expr(b, reads, 0, out);
            out.push(')');
        }
        Expr::Max(a, b) => {
            out.push_str("max(");
            print_expr(a, reads, 0, out);
            out.push_str(", ");
            print_expr(b, reads, 0, out);
            out.push(')');
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_single_loop() {
        let p = parse("param N; array A[N]; for i in 0..N { A[i] = 0; }").unwrap();
        assert_eq!(p.body.len(), 1);
        let l = p.body[0].as_loop().unwrap();
        assert_eq!(l.iter, "i");
        assert_eq!(l.body.len(), 1);
    }

    #[test]
    fn parses_triangular_syrk_bounds() {
        // SYRK's triangular domain: inclusive j <= i transcribes to 0..i+1.
        let p = parse(
            "param N = 8; param M = 8;\n\
             array C[N, N]; array A[N, M];\n\
             for i in 0..N { for j in 0..i+1 { for k in 0..M {\n\
               C[i, j] += A[i, k] * A[j, k];\n\
             } } }",
        )
        .unwrap();
        let i = p.body[0].as_loop().unwrap();
        let j = i.body[0].as_loop().unwrap();
        assert_eq!(j.hi, Bound::Affine(AffineExpr::var("i").plus_const(1)));
    }

    #[test]
    fn rejects_non_affine_index() {
        let err = parse("array A[16]; for i in 0..4 { A[i*i] = 0; }").unwrap_err();
        assert!(err.message.contains("non-affine index"), "{err}");
    }

    #[test]
    fn rejects_undeclared_array() {
        assert!(parse("for i in 0..4 { A[i] = 0; }").is_err());
    }

    #[test]
    fn plus_equals_desugars_to_self_read() {
        let p = parse("array A[4]; array B[4]; for i in 0..4 { A[i] += B[i]; }").unwrap();
        let l = p.body[0].as_loop().unwrap();
        if let Stmt::Comp(c) = &l.body[0] {
            assert_eq!(c.reads[0], c.write);
            assert!(matches!(&c.expr, Expr::Add(a, _) if **a == Expr::Read(0)));
        } else {
            panic!("expected computation");
        }
    }

    #[test]
    fn errors_carry_positions() {
        let err = parse("array A[4];\nfor i in 0..4 {\n  A[i] 0;\n}").unwrap_err();
        assert_eq!(err.span.start_line, 3);
    }

    #[test]
    fn round_trip_law() {
        let texts = [
            "param N = 4; array A[N, N]; array B[N, N]; array C[N, N];\n\
             for i in 0..N { for j in 0..N { for k in 0..N { C[i, j] += A[i, k] * B[k, j]; } } }",
            "array A[8]; for i in 0..8 { A[i] = i; }",
            "param N = 8; array A[N]; array B[N];\n\
             for i in 1..N-1 { B[i] = A[i-1] + A[i+1] - 2 * A[i]; }",
            "param N = 4; array C[N, N];\n\
             for i in 0..N { for j in 0..i+1 { C[i, j] = min(i, j) + max(1, 2); } }",
        ];
        for t in texts {
            let p = parse(t).unwrap();
            let printed = pretty_print(&p);
            let q = parse(&printed).unwrap();
            assert!(structurally_equal(&p, &q, false), "round trip failed:\n{printed}");
        }
    }

    #[test]
    fn symbolic_bound_prints_plainly() {
        let p = parse("param N; array A[N]; for i in 0..N { A[i] = 0; }").unwrap();
        assert!(pretty_print(&p).contains("0..N"));
    }

    #[test]
    fn labels_round_trip_comp_ids() {
        let p = parse("array A[4]; for i in 0..4 { mycomp: A[i] = 0; }").unwrap();
        let l = p.body[0].as_loop().unwrap();
        if let Stmt::Comp(c) = &l.body[0] {
            assert_eq!(c.id, "mycomp");
        }
        let q = parse(&pretty_print(&p)).unwrap();
        assert!(structurally_equal(&p, &q, false));
    }
}
