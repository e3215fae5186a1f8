use std::collections::{BTreeSet, HashMap};

use num_traits::{Signed, ToPrimitive};

use super::ast::*;
use super::lexer::{tokenize, Pos, Tok, Token};
use super::SpecError;
use crate::rational::{int, Rational};

pub const RESERVED: &[&str] = &["input", "output", "if", "then", "else", "min", "max", "clamp", "laplace", "all"];

#[derive(Clone, Copy, Debug, Default)]
pub struct ParseOptions {
    /// Accept `laplace(..)`, `tree_aggregate(..)` and `over: all`.
    pub compiled: bool,
}

pub fn parse_specification(text: &str) -> Result<Specification, SpecError> {
    parse_with(text, ParseOptions::default())
}

/// Parses compiler output, which may contain noise and tree forms.
pub fn parse_compiled(text: &str) -> Result<Specification, SpecError> {
    parse_with(text, ParseOptions { compiled: true })
}

pub fn parse_with(text: &str, opts: ParseOptions) -> Result<Specification, SpecError> {
    let tokens = tokenize(text).map_err(|e| SpecError::Lex { pos: e.pos, message: e.message })?;
    let mut p = Parser { tokens, i: 0, opts, refs: vec![], triggers: vec![], members: vec![], decls: vec![] };
    let spec = p.spec()?;
    p.validate(&spec)?;
    Ok(spec)
}

struct Parser {
    tokens: Vec<Token>,
    i: usize,
    opts: ParseOptions,
    /// (referencing output, referenced name, position)
    refs: Vec<(String, String, Pos)>,
    triggers: Vec<(String, Pos)>,
    members: Vec<(String, Pos)>,
    decls: Vec<(String, Pos)>,
}

type PResult<T> = Result<T, SpecError>;

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.i].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        let j = (self.i + k).min(self.tokens.len() - 1);
        &self.tokens[j].tok
    }

    fn pos(&self) -> Pos {
        self.tokens[self.i].pos
    }

    fn advance(&mut self) -> Token {
        let t = self.tokens[self.i].clone();
        if self.i + 1 < self.tokens.len() {
            self.i += 1;
        }
        t
    }

    fn error<T>(&self, expected: &[&str]) -> PResult<T> {
        Err(SpecError::Syntax {
            pos: self.pos(),
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: self.peek().describe(),
        })
    }

    fn eat(&mut self, t: &Tok) -> bool {
        if self.peek() == t {
            self.advance();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, t: Tok) -> PResult<Pos> {
        if self.peek() == &t {
            Ok(self.advance().pos)
        } else {
            let want = format!("`{}`", t.symbol());
            self.error(&[&want])
        }
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    fn expect_kw(&mut self, kw: &str) -> PResult<Pos> {
        if self.is_kw(kw) {
            Ok(self.advance().pos)
        } else {
            let want = format!("`{kw}`");
            self.error(&[&want])
        }
    }

    fn ident(&mut self) -> PResult<(String, Pos)> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                let pos = self.advance().pos;
                Ok((s, pos))
            }
            _ => self.error(&["identifier"]),
        }
    }

    fn stream_name(&mut self) -> PResult<(String, Pos)> {
        let (s, pos) = self.ident()?;
        if RESERVED.contains(&s.as_str()) {
            return Err(SpecError::Syntax { pos, expected: vec!["stream name".into()], found: format!("keyword `{s}`") });
        }
        Ok((s, pos))
    }

    fn spec(&mut self) -> PResult<Specification> {
        let mut spec = Specification::default();
        loop {
            match self.peek().clone() {
                Tok::Eof => break,
                Tok::Semi => {
                    self.advance();
                }
                Tok::Hash => {
                    self.advance();
                    if self.eat(&Tok::Bang) {
                        self.expect(Tok::LBracket)?;
                        self.expect_kw("group_size")?;
                        self.expect(Tok::Eq)?;
                        let pos = self.pos();
                        let n = self.number()?;
                        spec.group_size = match n.to_integer().to_u32() {
                            Some(w) if n.is_integer() && w >= 1 => w,
                            _ => return Err(SpecError::Syntax { pos, expected: vec!["positive integer".into()], found: "number".into() }),
                        };
                        self.expect(Tok::RBracket)?;
                    } else {
                        self.expect(Tok::LBracket)?;
                        self.expect_kw("public")?;
                        self.expect(Tok::RBracket)?;
                        if !self.is_kw("output") {
                            return self.error(&["`output`"]);
                        }
                        let mut out = self.output()?;
                        out.public = true;
                        spec.outputs.push(out);
                    }
                }
                Tok::Ident(kw) if kw == "input" => {
                    let decl = self.input()?;
                    spec.inputs.push(decl);
                }
                Tok::Ident(kw) if kw == "output" => {
                    let out = self.output()?;
                    spec.outputs.push(out);
                }
                _ => return self.error(&["`input`", "`output`", "`#`"]),
            }
        }
        Ok(spec)
    }

    fn number(&mut self) -> PResult<Rational> {
        match self.peek().clone() {
            Tok::Number(r) => {
                self.advance();
                Ok(r)
            }
            _ => self.error(&["number"]),
        }
    }

    fn signed_number(&mut self) -> PResult<Rational> {
        if self.eat(&Tok::Minus) {
            Ok(-self.number()?)
        } else {
            self.number()
        }
    }

    fn input(&mut self) -> PResult<InputDecl> {
        self.expect_kw("input")?;
        let (name, pos) = self.stream_name()?;
        self.decls.push((name.clone(), pos));
        self.expect(Tok::Colon)?;
        let (ty, _) = self.ident()?;
        let mut range = None;
        if self.is_kw("range") {
            self.advance();
            self.expect(Tok::LBracket)?;
            let lo_pos = self.pos();
            let lo = self.signed_number()?;
            self.expect(Tok::Comma)?;
            let hi = self.signed_number()?;
            self.expect(Tok::RBracket)?;
            if lo > hi {
                return Err(SpecError::InvalidRange { pos: lo_pos });
            }
            range = Some((lo, hi));
        }
        Ok(InputDecl { name, ty, range })
    }

    fn output(&mut self) -> PResult<OutputDecl> {
        self.expect_kw("output")?;
        let (name, pos) = self.stream_name()?;
        self.decls.push((name.clone(), pos));
        let pacing = if self.eat(&Tok::At) { Some(self.pacing()?) } else { None };
        self.expect(Tok::Assign)?;
        let body = if self.peek() == &Tok::LParen
            && matches!(self.peek_at(1), Tok::Ident(_))
            && self.peek_at(2) == &Tok::Comma
        {
            self.advance();
            let mut members = vec![];
            loop {
                let (m, mpos) = self.stream_name()?;
                self.members.push((m.clone(), mpos));
                members.push(m);
                if self.eat(&Tok::Comma) {
                    continue;
                }
                self.expect(Tok::RParen)?;
                break;
            }
            OutputBody::Tuple(members)
        } else {
            let e = self.expr(&name)?;
            OutputBody::Expr(e)
        };
        Ok(OutputDecl { name, pacing, body, public: false })
    }

    fn pacing(&mut self) -> PResult<Pacing> {
        let pacing = match self.peek().clone() {
            Tok::Duration(d) => {
                let pos = self.advance().pos;
                if !d.is_positive() {
                    return Err(SpecError::InvalidPacing { pos, message: "period must be positive".into() });
                }
                Pacing::Periodic(d)
            }
            Tok::LParen => {
                self.advance();
                let set = self.trigger_list()?;
                self.expect(Tok::RParen)?;
                Pacing::EventBased(set)
            }
            Tok::Ident(_) => Pacing::EventBased(self.trigger_list()?),
            _ => return self.error(&["duration", "input name"]),
        };
        self.eat(&Tok::At);
        Ok(pacing)
    }

    fn trigger_list(&mut self) -> PResult<BTreeSet<String>> {
        let mut set = BTreeSet::new();
        loop {
            let (n, pos) = self.stream_name()?;
            self.triggers.push((n.clone(), pos));
            set.insert(n);
            if !self.eat(&Tok::Amp) {
                break;
            }
        }
        Ok(set)
    }

    // expr := 'if' cmp 'then' expr ['else' expr] | additive
    fn expr(&mut self, owner: &str) -> PResult<StreamExpr> {
        if self.is_kw("if") {
            self.advance();
            let cond = self.cmp(owner)?;
            self.expect_kw("then")?;
            let then = self.expr(owner)?;
            let otherwise = if self.is_kw("else") {
                self.advance();
                Some(Box::new(self.expr(owner)?))
            } else {
                None
            };
            return Ok(StreamExpr::Ite { cond: Box::new(cond), then: Box::new(then), otherwise });
        }
        self.additive(owner)
    }

    fn cmp(&mut self, owner: &str) -> PResult<Cmp> {
        let lhs = self.additive(owner)?;
        let op = match self.peek() {
            Tok::Lt => CmpOp::Lt,
            Tok::Le => CmpOp::Le,
            Tok::Eq => CmpOp::Eq,
            Tok::Gt => CmpOp::Gt,
            Tok::Ge => CmpOp::Ge,
            _ => return self.error(&["comparison operator"]),
        };
        self.advance();
        let rhs = self.additive(owner)?;
        Ok(Cmp { op, lhs, rhs })
    }

    fn additive(&mut self, owner: &str) -> PResult<StreamExpr> {
        let mut lhs = self.multiplicative(owner)?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.advance();
            let rhs = self.multiplicative(owner)?;
            lhs = StreamExpr::bin(op, lhs, rhs);
        }
    }

    fn multiplicative(&mut self, owner: &str) -> PResult<StreamExpr> {
        let mut lhs = self.unary(owner)?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.advance();
            let rhs = self.unary(owner)?;
            lhs = StreamExpr::bin(op, lhs, rhs);
        }
    }

    fn unary(&mut self, owner: &str) -> PResult<StreamExpr> {
        if self.eat(&Tok::Minus) {
            if let Tok::Number(n) = self.peek().clone() {
                self.advance();
                return Ok(StreamExpr::Const(-n));
            }
            let e = self.unary(owner)?;
            return Ok(StreamExpr::bin(BinOp::Mul, StreamExpr::Const(int(-1)), e));
        }
        self.postfix(owner)
    }

    fn postfix(&mut self, owner: &str) -> PResult<StreamExpr> {
        let bare = match (self.peek().clone(), self.peek_at(1)) {
            (Tok::Ident(name), next) if next != &Tok::LParen && !RESERVED.contains(&name.as_str()) => Some(name),
            _ => None,
        };
        let mut e = self.primary(owner)?;
        let mut first = true;
        while self.peek() == &Tok::Dot {
            self.advance();
            let (method, mpos) = self.ident()?;
            let receiver = if first { bare.clone() } else { None };
            first = false;
            self.expect(Tok::LParen)?;
            e = match method.as_str() {
                "defaults" => {
                    self.expect_kw("to")?;
                    self.expect(Tok::Colon)?;
                    let f = self.expr(owner)?;
                    StreamExpr::default_to(e, f)
                }
                "offset" | "hold" | "aggregate" | "last" | "tree_aggregate" => {
                    let Some(stream) = receiver else {
                        return Err(SpecError::Syntax {
                            pos: mpos,
                            expected: vec!["stream name before access method".into()],
                            found: format!("`{method}`"),
                        });
                    };
                    self.access(owner, &method, mpos, stream)?
                }
                _ => {
                    return Err(SpecError::Syntax {
                        pos: mpos,
                        expected: vec!["`offset`, `hold`, `aggregate`, `defaults` or `last`".into()],
                        found: format!("`{method}`"),
                    })
                }
            };
            self.expect(Tok::RParen)?;
        }
        Ok(e)
    }

    fn access(&mut self, owner: &str, method: &str, mpos: Pos, stream: String) -> PResult<StreamExpr> {
        match method {
            "offset" => {
                self.expect_kw("by")?;
                self.expect(Tok::Colon)?;
                let pos = self.pos();
                let by = self.signed_number()?;
                if !by.is_integer() || !by.is_negative() {
                    return Err(SpecError::InvalidOffset { pos });
                }
                let by = (-by).to_integer().to_u32().ok_or(SpecError::InvalidOffset { pos })?;
                Ok(StreamExpr::Offset { stream, by })
            }
            "last" => {
                self.expect_kw("or")?;
                self.expect(Tok::Colon)?;
                let f = self.expr(owner)?;
                Ok(StreamExpr::default_to(StreamExpr::Offset { stream, by: 1 }, f))
            }
            "hold" => {
                if self.peek() == &Tok::RParen {
                    return Ok(StreamExpr::Hold { stream, bound: HoldBound::Unbounded });
                }
                if self.is_kw("or") {
                    self.advance();
                    self.expect(Tok::Colon)?;
                    let f = self.expr(owner)?;
                    return Ok(StreamExpr::default_to(StreamExpr::Hold { stream, bound: HoldBound::Unbounded }, f));
                }
                self.expect_kw("for")?;
                self.expect(Tok::Colon)?;
                let pos = self.pos();
                let n = self.number()?;
                match n.to_integer().to_u32() {
                    Some(k) if n.is_integer() && k >= 1 => Ok(StreamExpr::Hold { stream, bound: HoldBound::Reads(k) }),
                    _ => Err(SpecError::Syntax { pos, expected: vec!["positive integer".into()], found: "number".into() }),
                }
            }
            "aggregate" => {
                self.expect_kw("over")?;
                self.expect(Tok::Colon)?;
                let window = self.window()?;
                self.expect(Tok::Comma)?;
                self.expect_kw("using")?;
                self.expect(Tok::Colon)?;
                let func = self.aggr_func()?;
                Ok(StreamExpr::Aggregate { stream, window, func })
            }
            _ => {
                if !self.opts.compiled {
                    return Err(SpecError::ReservedForm { pos: mpos, form: "tree_aggregate".into() });
                }
                self.expect_kw("over")?;
                self.expect(Tok::Colon)?;
                let window = self.window()?;
                self.expect(Tok::Comma)?;
                self.expect_kw("using")?;
                self.expect(Tok::Colon)?;
                let func = self.aggr_func()?;
                self.expect(Tok::Comma)?;
                self.expect_kw("sensitivity")?;
                self.expect(Tok::Colon)?;
                let sensitivity = self.number()?;
                self.expect(Tok::Comma)?;
                self.expect_kw("epsilon")?;
                self.expect(Tok::Colon)?;
                let epsilon = self.number()?;
                let mut renormalize = false;
                if self.eat(&Tok::Comma) {
                    self.expect_kw("renormalize")?;
                    self.expect(Tok::Colon)?;
                    match self.ident()?.0.as_str() {
                        "true" => renormalize = true,
                        "false" => {}
                        _ => return self.error(&["`true`", "`false`"]),
                    }
                }
                Ok(StreamExpr::Tree(TreeAggregate { stream, window, func, sensitivity, epsilon, renormalize }))
            }
        }
    }

    fn window(&mut self) -> PResult<Window> {
        match self.peek().clone() {
            Tok::Duration(d) => {
                let pos = self.advance().pos;
                if !d.is_positive() {
                    return Err(SpecError::InvalidPacing { pos, message: "window must be positive".into() });
                }
                Ok(Window::Span(d))
            }
            Tok::Ident(s) if s == "all" => {
                let pos = self.advance().pos;
                if !self.opts.compiled {
                    return Err(SpecError::ReservedForm { pos, form: "over: all".into() });
                }
                Ok(Window::All)
            }
            _ => self.error(&["duration"]),
        }
    }

    fn aggr_func(&mut self) -> PResult<AggrFunc> {
        let pos = self.pos();
        let (f, _) = self.ident()?;
        Ok(match f.as_str() {
            "sum" => AggrFunc::Sum,
            "avg" | "average" => AggrFunc::Avg,
            "count" => AggrFunc::Count,
            "last" => AggrFunc::Last,
            _ => {
                return Err(SpecError::Syntax {
                    pos,
                    expected: vec!["`sum`, `avg`, `count` or `last`".into()],
                    found: format!("`{f}`"),
                })
            }
        })
    }

    fn primary(&mut self, owner: &str) -> PResult<StreamExpr> {
        match self.peek().clone() {
            Tok::Number(n) => {
                self.advance();
                Ok(StreamExpr::Const(n))
            }
            Tok::LParen => {
                self.advance();
                let e = self.expr(owner)?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Tok::Ident(name) => {
                let pos = self.pos();
                match name.as_str() {
                    "min" | "max" if self.peek_at(1) == &Tok::LParen => {
                        self.advance();
                        self.advance();
                        let a = self.expr(owner)?;
                        self.expect(Tok::Comma)?;
                        let b = self.expr(owner)?;
                        self.expect(Tok::RParen)?;
                        let op = if name == "min" { BinOp::Min } else { BinOp::Max };
                        Ok(StreamExpr::bin(op, a, b))
                    }
                    "clamp" if self.peek_at(1) == &Tok::LParen => {
                        self.advance();
                        self.advance();
                        let e = self.expr(owner)?;
                        self.expect(Tok::Comma)?;
                        let lo = self.signed_number()?;
                        self.expect(Tok::Comma)?;
                        let hi = self.signed_number()?;
                        self.expect(Tok::RParen)?;
                        if lo > hi {
                            return Err(SpecError::InvalidRange { pos });
                        }
                        Ok(StreamExpr::Clamp { expr: Box::new(e), lo, hi })
                    }
                    "laplace" if self.peek_at(1) == &Tok::LParen => {
                        if !self.opts.compiled {
                            return Err(SpecError::ReservedForm { pos, form: "laplace".into() });
                        }
                        self.advance();
                        self.advance();
                        let scale = self.number()?;
                        self.expect(Tok::RParen)?;
                        Ok(StreamExpr::Laplace { scale })
                    }
                    _ => {
                        let (n, pos) = self.stream_name()?;
                        self.refs.push((owner.to_string(), n.clone(), pos));
                        Ok(StreamExpr::Sync(n))
                    }
                }
            }
            _ => self.error(&["expression"]),
        }
    }

    fn validate(&self, spec: &Specification) -> PResult<()> {
        let mut seen: HashMap<&str, Pos> = HashMap::new();
        for (name, pos) in &self.decls {
            if seen.insert(name, *pos).is_some() {
                return Err(SpecError::DuplicateStream { name: name.clone(), pos: *pos });
            }
        }
        let value_stream = |n: &str| spec.is_input(n) || spec.output(n).is_some_and(|o| o.expr().is_some());
        for (_, name, pos) in &self.refs {
            if !value_stream(name) {
                return Err(SpecError::UnknownReference { name: name.clone(), pos: *pos });
            }
        }
        for (name, pos) in &self.triggers {
            if !spec.is_input(name) {
                return Err(SpecError::UnknownReference { name: name.clone(), pos: *pos });
            }
        }
        for (name, pos) in &self.members {
            if spec.output(name).is_none_or(|o| o.expr().is_none()) {
                return Err(SpecError::UnknownReference { name: name.clone(), pos: *pos });
            }
        }
        // unbounded inputs feeding a public output
        let mut deps: HashMap<&str, Vec<(&str, Pos)>> = HashMap::new();
        for (owner, name, pos) in &self.refs {
            deps.entry(owner.as_str()).or_default().push((name.as_str(), *pos));
        }
        let mut stack: Vec<&str> = vec![];
        let publics = spec.public_set();
        stack.extend(publics.iter().map(|s| s.as_str()));
        let mut visited = BTreeSet::new();
        while let Some(s) = stack.pop() {
            if !visited.insert(s) {
                continue;
            }
            for (d, pos) in deps.get(s).into_iter().flatten() {
                if let Some(input) = spec.input(d) {
                    if input.range.is_none() {
                        return Err(SpecError::MissingRange { name: d.to_string(), pos: *pos });
                    }
                }
                stack.push(d);
            }
        }
        Ok(())
    }
}
