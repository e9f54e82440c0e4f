use std::collections::BTreeSet;

use super::ast::*;

/// Declared symbols a formulation may reference. Built from a model's
/// parameter and variable declarations.
#[derive(Debug, Clone, Default)]
pub struct SymbolTable {
    params: BTreeSet<String>,
    vars: BTreeSet<String>,
}

impl SymbolTable {
    pub fn new<P, V, S1, S2>(params: P, vars: V) -> Self
    where
        P: IntoIterator<Item = S1>,
        V: IntoIterator<Item = S2>,
        S1: Into<String>,
        S2: Into<String>,
    {
        SymbolTable {
            params: params.into_iter().map(Into::into).collect(),
            vars: vars.into_iter().map(Into::into).collect(),
        }
    }

    pub fn is_param(&self, symbol: &str) -> bool {
        self.params.contains(symbol)
    }

    pub fn is_var(&self, symbol: &str) -> bool {
        self.vars.contains(symbol)
    }
}

/// Parse failure, with 1-based line/column where applicable.
#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum DslError {
    #[error("syntax error at {line}:{col}: {message}")]
    Syntax {
        line: u32,
        col: u32,
        message: String,
    },
    #[error("strict inequality '{op}' at {line}:{col}; use a non-strict relation (<=, >=, ==)")]
    NonstrictRequired { op: char, line: u32, col: u32 },
    #[error("nonlinear product at {line}:{col}: a multiplicative chain references more than one decision variable")]
    Nonlinear { line: u32, col: u32 },
    #[error("unbound index '{index}' at {line}:{col}")]
    UnboundIndex { index: String, line: u32, col: u32 },
    #[error("undeclared symbol '{symbol}' at {line}:{col}")]
    UndeclaredSymbol { symbol: String, line: u32, col: u32 },
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(f64),
    Plus,
    Minus,
    Star,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Le,
    Ge,
    EqEq,
    Ne,
    Lt,
    Gt,
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: u32,
    col: u32,
}

fn lex(text: &str) -> Result<(Vec<Spanned>, (u32, u32)), DslError> {
    let mut out = Vec::new();
    let mut line = 1u32;
    let mut col = 1u32;
    let mut chars = text.chars().peekable();
    while let Some(&c) = chars.peek() {
        let (tline, tcol) = (line, col);
        let mut bump = |chars: &mut std::iter::Peekable<std::str::Chars>| {
            let c = chars.next().unwrap();
            if c == '\n' {
                line += 1;
                col = 1;
            } else {
                col += 1;
            }
            c
        };
        if c.is_whitespace() {
            bump(&mut chars);
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let mut ident = String::new();
            while let Some(&c) = chars.peek() {
                if c.is_ascii_alphanumeric() || c == '_' {
                    ident.push(bump(&mut chars));
                } else {
                    break;
                }
            }
            out.push(Spanned {
                tok: Tok::Ident(ident),
                line: tline,
                col: tcol,
            });
            continue;
        }
        if c.is_ascii_digit() {
            let mut num = String::new();
            while let Some(&c) = chars.peek() {
                if c.is_ascii_digit() || c == '.' {
                    num.push(bump(&mut chars));
                } else {
                    break;
                }
            }
            // Exponent notation, only when followed by digits.
            if matches!(chars.peek(), Some('e') | Some('E')) {
                let mut probe = chars.clone();
                probe.next();
                let mut exp_len = 0usize;
                if matches!(probe.peek(), Some('+') | Some('-')) {
                    probe.next();
                    exp_len += 1;
                }
                if matches!(probe.peek(), Some(d) if d.is_ascii_digit()) {
                    num.push(bump(&mut chars));
                    for _ in 0..exp_len {
                        num.push(bump(&mut chars));
                    }
                    while matches!(chars.peek(), Some(d) if d.is_ascii_digit()) {
                        num.push(bump(&mut chars));
                    }
                }
            }
            let value: f64 = num.parse().map_err(|_| DslError::Syntax {
                line: tline,
                col: tcol,
                message: format!("invalid number literal '{num}'"),
            })?;
            out.push(Spanned {
                tok: Tok::Number(value),
                line: tline,
                col: tcol,
            });
            continue;
        }
        let tok = match c {
            '+' => {
                bump(&mut chars);
                Tok::Plus
            }
            '-' => {
                bump(&mut chars);
                Tok::Minus
            }
            '*' => {
                bump(&mut chars);
                Tok::Star
            }
            '(' => {
                bump(&mut chars);
                Tok::LParen
            }
            ')' => {
                bump(&mut chars);
                Tok::RParen
            }
            '[' => {
                bump(&mut chars);
                Tok::LBracket
            }
            ']' => {
                bump(&mut chars);
                Tok::RBracket
            }
            ',' => {
                bump(&mut chars);
                Tok::Comma
            }
            '<' => {
                bump(&mut chars);
                if chars.peek() == Some(&'=') {
                    bump(&mut chars);
                    Tok::Le
                } else {
                    Tok::Lt
                }
            }
            '>' => {
                bump(&mut chars);
                if chars.peek() == Some(&'=') {
                    bump(&mut chars);
                    Tok::Ge
                } else {
                    Tok::Gt
                }
            }
            '=' => {
                bump(&mut chars);
                if chars.peek() == Some(&'=') {
                    bump(&mut chars);
                }
                Tok::EqEq
            }
            '!' => {
                bump(&mut chars);
                if chars.peek() == Some(&'=') {
                    bump(&mut chars);
                    Tok::Ne
                } else {
                    return Err(DslError::Syntax {
                        line: tline,
                        col: tcol,
                        message: "expected '=' after '!'".into(),
                    });
                }
            }
            other => {
                return Err(DslError::Syntax {
                    line: tline,
                    col: tcol,
                    message: format!("unexpected character '{other}'"),
                })
            }
        };
        out.push(Spanned {
            tok,
            line: tline,
            col: tcol,
        });
    }
    Ok((out, (line, col)))
}

struct Parser<'a> {
    toks: Vec<Spanned>,
    pos: usize,
    symbols: &'a SymbolTable,
    /// Stack of in-scope bound index names.
    bound: Vec<String>,
    end_line: u32,
    end_col: u32,
}

impl<'a> Parser<'a> {
    fn new(text: &str, symbols: &'a SymbolTable) -> Result<Self, DslError> {
        let (toks, (end_line, end_col)) = lex(text)?;
        Ok(Parser {
            toks,
            pos: 0,
            symbols,
            bound: Vec::new(),
            end_line,
            end_col,
        })
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|s| &s.tok)
    }

    fn here(&self) -> (u32, u32) {
        self.toks
            .get(self.pos)
            .map(|s| (s.line, s.col))
            .unwrap_or((self.end_line, self.end_col))
    }

    fn advance(&mut self) -> Option<Spanned> {
        let t = self.toks.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn err(&self, message: impl Into<String>) -> DslError {
        let (line, col) = self.here();
        DslError::Syntax {
            line,
            col,
            message: message.into(),
        }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), DslError> {
        match self.peek() {
            Some(t) if *t == tok => {
                self.advance();
                Ok(())
            }
            _ => Err(self.err(format!("expected {what}"))),
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<(), DslError> {
        match self.peek() {
            Some(Tok::Ident(s)) if s == kw => {
                self.advance();
                Ok(())
            }
            _ => Err(self.err(format!("expected '{kw}'"))),
        }
    }

    fn expect_ident(&mut self, what: &str) -> Result<String, DslError> {
        match self.peek() {
            Some(Tok::Ident(s)) if !is_keyword(s) => {
                let s = s.clone();
                self.advance();
                Ok(s)
            }
            _ => Err(self.err(format!("expected {what}"))),
        }
    }

    fn parse_expr(&mut self) -> Result<Expr, DslError> {
        let (line, col) = self.here();
        let negated = if self.peek() == Some(&Tok::Minus) {
            self.advance();
            true
        } else {
            false
        };
        let mut acc = self.parse_term()?;
        if negated {
            acc = negate(acc);
        }
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.advance();
                    let rhs = self.parse_term()?;
                    acc = Expr::Add(Box::new(acc), Box::new(rhs));
                }
                Some(Tok::Minus) => {
                    self.advance();
                    let rhs = self.parse_term()?;
                    acc = Expr::Sub(Box::new(acc), Box::new(rhs));
                }
                _ => break,
            }
        }
        if acc.var_degree() > 1 {
            // Degree >1 from a Mul chain is reported there; Add/Sub keep max.
            return Err(DslError::Nonlinear { line, col });
        }
        Ok(acc)
    }

    fn parse_term(&mut self) -> Result<Expr, DslError> {
        let mut acc = self.parse_atom()?;
        while self.peek() == Some(&Tok::Star) {
            let (line, col) = self.here();
            self.advance();
            let rhs = self.parse_atom()?;
            if acc.var_degree() + rhs.var_degree() > 1 {
                return Err(DslError::Nonlinear { line, col });
            }
            acc = Expr::Mul(Box::new(acc), Box::new(rhs));
        }
        Ok(acc)
    }

    fn parse_atom(&mut self) -> Result<Expr, DslError> {
        match self.peek().cloned() {
            Some(Tok::Number(n)) => {
                self.advance();
                Ok(Expr::Number(n))
            }
            Some(Tok::LParen) => {
                self.advance();
                let inner = self.parse_expr()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(inner)
            }
            Some(Tok::Ident(name)) if name == "sum" => self.parse_sum(),
            Some(Tok::Ident(name)) if !is_keyword(&name) => {
                let (line, col) = self.here();
                self.advance();
                let indices = self.parse_indices()?;
                self.resolve_ref(name, indices, line, col)
            }
            _ => Err(self.err("expected a number, reference, 'sum(...)' or '('")),
        }
    }

    fn parse_indices(&mut self) -> Result<Vec<Index>, DslError> {
        if self.peek() != Some(&Tok::LBracket) {
            return Ok(Vec::new());
        }
        self.advance();
        let mut indices = Vec::new();
        loop {
            let (line, col) = self.here();
            match self.advance().map(|s| s.tok) {
                Some(Tok::Ident(name)) if !is_keyword(&name) => {
                    if !self.bound.contains(&name) {
                        return Err(DslError::UnboundIndex {
                            index: name,
                            line,
                            col,
                        });
                    }
                    indices.push(Index::Bound(name));
                }
                Some(Tok::Number(n)) if n >= 0.0 && n.fract() == 0.0 => {
                    indices.push(Index::Literal(n as i64));
                }
                _ => {
                    return Err(DslError::Syntax {
                        line,
                        col,
                        message: "expected an index name or integer literal".into(),
                    })
                }
            }
            match self.peek() {
                Some(Tok::Comma) => {
                    self.advance();
                }
                Some(Tok::RBracket) => {
                    self.advance();
                    break;
                }
                _ => return Err(self.err("expected ',' or ']' in index list")),
            }
        }
        Ok(indices)
    }

    fn resolve_ref(
        &self,
        symbol: String,
        indices: Vec<Index>,
        line: u32,
        col: u32,
    ) -> Result<Expr, DslError> {
        if self.symbols.is_var(&symbol) {
            Ok(Expr::Var { symbol, indices })
        } else if self.symbols.is_param(&symbol) {
            Ok(Expr::Param { symbol, indices })
        } else if indices.is_empty() && self.bound.contains(&symbol) {
            // Bound indices are iteration counters, not values.
            Err(DslError::UndeclaredSymbol {
                symbol: format!("{symbol} (a bound index cannot be used as a value)"),
                line,
                col,
            })
        } else {
            Err(DslError::UndeclaredSymbol { symbol, line, col })
        }
    }

    fn parse_sum(&mut self) -> Result<Expr, DslError> {
        self.expect_keyword("sum")?;
        self.expect(Tok::LParen, "'(' after 'sum'")?;
        let mut binders = Vec::new();
        let mut guard = None;
        loop {
            let index = self.expect_ident("an index name")?;
            self.expect_keyword("in")?;
            let set = self.expect_ident("an index-set symbol")?;
            if !self.symbols.is_param(&set) {
                let (line, col) = self.here();
                return Err(DslError::UndeclaredSymbol {
                    symbol: set,
                    line,
                    col,
                });
            }
            binders.push(Binder {
                index: index.clone(),
                set,
            });
            self.bound.push(index);
            match self.peek() {
                Some(Tok::Comma) => {
                    self.advance();
                    // Another binder, or the body.
                    if self.starts_binder() {
                        continue;
                    }
                    break;
                }
                Some(Tok::Ident(s)) if s == "if" => {
                    guard = Some(self.parse_guard()?);
                    self.expect(Tok::Comma, "',' before the sum body")?;
                    break;
                }
                _ => return Err(self.err("expected ',' or 'if' after a sum binder")),
            }
        }
        let body = self.parse_expr()?;
        self.expect(Tok::RParen, "')' closing 'sum'")?;
        for _ in &binders {
            self.bound.pop();
        }
        Ok(Expr::Sum {
            binders,
            guard,
            body: Box::new(body),
        })
    }

    /// Lookahead: `ident in` begins another binder.
    fn starts_binder(&self) -> bool {
        match (self.toks.get(self.pos), self.toks.get(self.pos + 1)) {
            (Some(a), Some(b)) => {
                matches!(&a.tok, Tok::Ident(s) if !is_keyword(s))
                    && matches!(&b.tok, Tok::Ident(s) if s == "in")
            }
            _ => false,
        }
    }

    fn parse_guard(&mut self) -> Result<Guard, DslError> {
        self.expect_keyword("if")?;
        let mut conds = Vec::new();
        loop {
            conds.push(self.parse_guard_cond()?);
            match self.peek() {
                Some(Tok::Ident(s)) if s == "and" => {
                    self.advance();
                }
                _ => break,
            }
        }
        Ok(Guard { conds })
    }

    fn parse_guard_cond(&mut self) -> Result<GuardCond, DslError> {
        let lhs = self.parse_guard_operand()?;
        let op = match self.advance().map(|s| s.tok) {
            Some(Tok::Ne) => CmpOp::Ne,
            Some(Tok::Lt) => CmpOp::Lt,
            Some(Tok::Le) => CmpOp::Le,
            Some(Tok::Gt) => CmpOp::Gt,
            Some(Tok::Ge) => CmpOp::Ge,
            Some(Tok::EqEq) => CmpOp::Eq,
            _ => return Err(self.err("expected a comparison operator in guard")),
        };
        let rhs = self.parse_guard_operand()?;
        if matches!(lhs, GuardOperand::Literal(_)) && matches!(rhs, GuardOperand::Literal(_)) {
            return Err(self.err("guard must compare at least one index"));
        }
        Ok(GuardCond { lhs, op, rhs })
    }

    fn parse_guard_operand(&mut self) -> Result<GuardOperand, DslError> {
        let (line, col) = self.here();
        match self.advance().map(|s| s.tok) {
            Some(Tok::Ident(name)) if !is_keyword(&name) => {
                if !self.bound.contains(&name) {
                    return Err(DslError::UnboundIndex {
                        index: name,
                        line,
                        col,
                    });
                }
                Ok(GuardOperand::Index(name))
            }
            Some(Tok::Number(n)) if n.fract() == 0.0 => Ok(GuardOperand::Literal(n as i64)),
            _ => Err(DslError::Syntax {
                line,
                col,
                message: "expected an index name or integer in guard".into(),
            }),
        }
    }

    fn parse_relop(&mut self) -> Result<Relop, DslError> {
        let (line, col) = self.here();
        match self.advance().map(|s| s.tok) {
            Some(Tok::Le) => Ok(Relop::Le),
            Some(Tok::Ge) => Ok(Relop::Ge),
            Some(Tok::EqEq) => Ok(Relop::Eq),
            Some(Tok::Lt) => Err(DslError::NonstrictRequired { op: '<', line, col }),
            Some(Tok::Gt) => Err(DslError::NonstrictRequired { op: '>', line, col }),
            _ => Err(DslError::Syntax {
                line,
                col,
                message: "expected a relational operator (<=, >=, ==)".into(),
            }),
        }
    }

    fn parse_quantifiers(&mut self) -> Result<Vec<Quantifier>, DslError> {
        let mut quants = Vec::new();
        while let Some(Tok::Ident(s)) = self.peek() {
            if s != "forall" {
                break;
            }
            self.advance();
            let index = self.expect_ident("an index name")?;
            self.expect_keyword("in")?;
            let set = self.expect_ident("an index-set symbol")?;
            if !self.symbols.is_param(&set) {
                let (line, col) = self.here();
                return Err(DslError::UndeclaredSymbol {
                    symbol: set,
                    line,
                    col,
                });
            }
            self.bound.push(index.clone());
            let guard = if matches!(self.peek(), Some(Tok::Ident(s)) if s == "if") {
                Some(self.parse_guard()?)
            } else {
                None
            };
            quants.push(Quantifier { index, set, guard });
        }
        Ok(quants)
    }
}

fn is_keyword(s: &str) -> bool {
    matches!(s, "sum" | "forall" | "in" | "if" | "and")
}

fn negate(e: Expr) -> Expr {
    match e {
        Expr::Number(n) => Expr::Number(normalize_zero(-n)),
        other => Expr::Neg(Box::new(other)),
    }
}

fn normalize_zero(n: f64) -> f64 {
    if n == 0.0 {
        0.0
    } else {
        n
    }
}

/// Parse a bare expression (objective formulations).
pub fn parse_expression(text: &str, symbols: &SymbolTable) -> Result<Expr, DslError> {
    let mut p = Parser::new(text, symbols)?;
    if p.toks.is_empty() {
        return Err(DslError::Syntax {
            line: 1,
            col: 1,
            message: "empty formulation".into(),
        });
    }
    let expr = p.parse_expr()?;
    if p.peek().is_some() {
        return Err(p.err("unexpected trailing input"));
    }
    Ok(expr)
}

/// Parse a constraint formulation: relational expression plus quantifiers.
///
/// Quantifier indices are in scope for the whole constraint, including the
/// relational core parsed before them, so the body is parsed first and
/// index binding is validated afterwards.
pub fn parse_constraint(text: &str, symbols: &SymbolTable) -> Result<ConstraintAst, DslError> {
    // Quantifier indices scope over the body, but appear after it in the
    // text. Pre-scan for `forall` binders so body indices resolve.
    let mut p = Parser::new(text, symbols)?;
    if p.toks.is_empty() {
        return Err(DslError::Syntax {
            line: 1,
            col: 1,
            message: "empty formulation".into(),
        });
    }
    let mut i = 0;
    while i < p.toks.len() {
        if let Tok::Ident(s) = &p.toks[i].tok {
            if s == "forall" {
                if let Some(Spanned {
                    tok: Tok::Ident(idx),
                    ..
                }) = p.toks.get(i + 1)
                {
                    if !is_keyword(idx) {
                        p.bound.push(idx.clone());
                    }
                }
            }
        }
        i += 1;
    }
    let lhs = p.parse_expr()?;
    let relop = p.parse_relop()?;
    let rhs = p.parse_expr()?;

    // Re-parse quantifiers properly (drop the pre-scan scope first).
    p.bound.clear();
    let quantifiers = p.parse_quantifiers()?;
    if p.peek().is_some() {
        return Err(p.err("unexpected trailing input"));
    }
    Ok(ConstraintAst {
        lhs,
        relop,
        rhs,
        quantifiers,
    })
}
