//! Parser for the textual IR format. See `docs/ir-format.md` for the
//! grammar. The parser recovers operand types from definitions and reports
//! mismatches against the declared signature.

use std::collections::{HashMap, VecDeque};

use thiserror::Error;

use super::affine::{AffineExpr, AffineMap};
use super::attr::{AffinePattern, Attribute, StridePattern};
use super::types::{FpReg, IntReg, Type};
use super::{Block, IdGen, Module, Operation, Region, Successor, ValueDef, ValueId};

#[derive(Debug, Error, PartialEq)]
#[error("parse error at {line}:{col}: {message}")]
pub struct ParseError {
    pub line: u32,
    pub col: u32,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Value(String),
    Label(String),
    Int(i64),
    Float(f64),
    Str(String),
    Punct(char),
    Arrow,
    Eof,
}

type Spanned = (Tok, u32, u32);

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
    line: u32,
    col: u32,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Lexer<'a> {
        Lexer {
            src: src.as_bytes(),
            pos: 0,
            line: 1,
            col: 1,
        }
    }

    fn bump(&mut self) -> Option<u8> {
        let c = self.src.get(self.pos).copied()?;
        self.pos += 1;
        if c == b'\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn skip_ws(&mut self) {
        loop {
            match self.src.get(self.pos) {
                Some(b' ') | Some(b'\t') | Some(b'\r') | Some(b'\n') => {
                    self.bump();
                }
                Some(b'/') if self.src.get(self.pos + 1) == Some(&b'/') => {
                    while let Some(c) = self.src.get(self.pos) {
                        if *c == b'\n' {
                            break;
                        }
                        self.bump();
                    }
                }
                _ => break,
            }
        }
    }

    fn ident_tail(&mut self, first: u8) -> String {
        let mut s = String::new();
        s.push(first as char);
        while let Some(c) = self.src.get(self.pos) {
            if c.is_ascii_alphanumeric() || *c == b'_' {
                s.push(*c as char);
                self.bump();
            } else {
                break;
            }
        }
        s
    }

    fn lex(&mut self) -> Result<Spanned, ParseError> {
        self.skip_ws();
        let (line, col) = (self.line, self.col);
        let Some(c) = self.bump() else {
            return Ok((Tok::Eof, line, col));
        };
        let err = |message: String| ParseError { line, col, message };
        let tok = match c {
            b'%' => {
                let Some(c2) = self.bump() else {
                    return Err(err("expected value name after '%'".into()));
                };
                Tok::Value(self.ident_tail(c2))
            }
            b'^' => {
                let Some(c2) = self.bump() else {
                    return Err(err("expected block name after '^'".into()));
                };
                Tok::Label(self.ident_tail(c2))
            }
            b'"' => {
                let mut s = String::new();
                loop {
                    match self.bump() {
                        Some(b'"') => break,
                        Some(b'\\') => match self.bump() {
                            Some(c2) => s.push(c2 as char),
                            None => return Err(err("unterminated string".into())),
                        },
                        Some(c2) => s.push(c2 as char),
                        None => return Err(err("unterminated string".into())),
                    }
                }
                Tok::Str(s)
            }
            b'-' if self.src.get(self.pos) == Some(&b'>') => {
                self.bump();
                Tok::Arrow
            }
            c if c.is_ascii_digit() => self.lex_number(c, line, col)?,
            c if c.is_ascii_alphabetic() || c == b'_' => Tok::Ident(self.ident_tail(c)),
            c => Tok::Punct(c as char),
        };
        Ok((tok, line, col))
    }

    fn lex_number(&mut self, first: u8, line: u32, col: u32) -> Result<Tok, ParseError> {
        let mut s = String::new();
        s.push(first as char);
        let err = |message: &str| ParseError {
            line,
            col,
            message: message.to_string(),
        };
        if first == b'0' && self.src.get(self.pos) == Some(&b'x') {
            self.bump();
            let mut hex = String::new();
            while let Some(c) = self.src.get(self.pos) {
                if c.is_ascii_hexdigit() {
                    hex.push(*c as char);
                    self.bump();
                } else {
                    break;
                }
            }
            let v = u64::from_str_radix(&hex, 16).map_err(|_| err("invalid hex literal"))?;
            return Ok(Tok::Int(v as i64));
        }
        let mut is_float = false;
        loop {
            match self.src.get(self.pos) {
                Some(c) if c.is_ascii_digit() => {
                    s.push(*c as char);
                    self.bump();
                }
                Some(b'.')
                    if self
                        .src
                        .get(self.pos + 1)
                        .is_some_and(|c| c.is_ascii_digit()) =>
                {
                    is_float = true;
                    s.push('.');
                    self.bump();
                }
                Some(c @ (b'e' | b'E')) => {
                    is_float = true;
                    s.push(*c as char);
                    self.bump();
                    if let Some(sign @ (b'+' | b'-')) = self.src.get(self.pos).copied() {
                        s.push(sign as char);
                        self.bump();
                    }
                }
                _ => break,
            }
        }
        if is_float {
            s.parse::<f64>()
                .map(Tok::Float)
                .map_err(|_| err("invalid float literal"))
        } else {
            s.parse::<i64>()
                .map(Tok::Int)
                .map_err(|_| err("invalid integer literal"))
        }
    }
}

struct Parser<'a> {
    lx: Lexer<'a>,
    lookahead: VecDeque<Spanned>,
    scopes: Vec<HashMap<String, ValueId>>,
    ids: IdGen,
    def_types: HashMap<ValueId, Type>,
}

type SuccPatch = (usize, usize, usize, String, u32, u32);

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Parser<'a> {
        Parser {
            lx: Lexer::new(src),
            lookahead: VecDeque::new(),
            scopes: vec![HashMap::new()],
            ids: IdGen::default(),
            def_types: HashMap::new(),
        }
    }

    fn next(&mut self) -> Result<Spanned, ParseError> {
        if let Some(t) = self.lookahead.pop_front() {
            return Ok(t);
        }
        self.lx.lex()
    }

    fn peek_n(&mut self, n: usize) -> Result<&Tok, ParseError> {
        while self.lookahead.len() <= n {
            let t = self.lx.lex()?;
            self.lookahead.push_back(t);
        }
        Ok(&self.lookahead[n].0)
    }

    fn peek(&mut self) -> Result<&Tok, ParseError> {
        self.peek_n(0)
    }

    fn here(&mut self) -> (u32, u32) {
        if let Some((_, l, c)) = self.lookahead.front() {
            (*l, *c)
        } else {
            (self.lx.line, self.lx.col)
        }
    }

    fn err(&mut self, message: impl Into<String>) -> ParseError {
        let (line, col) = self.here();
        ParseError {
            line,
            col,
            message: message.into(),
        }
    }

    fn expect_punct(&mut self, c: char) -> Result<(), ParseError> {
        let (t, line, col) = self.next()?;
        if t == Tok::Punct(c) {
            Ok(())
        } else {
            Err(ParseError {
                line,
                col,
                message: format!("expected '{c}', found {t:?}"),
            })
        }
    }

    fn eat_punct(&mut self, c: char) -> Result<bool, ParseError> {
        if *self.peek()? == Tok::Punct(c) {
            self.next()?;
            Ok(true)
        } else {
            Ok(false)
        }
    }

    fn expect_ident(&mut self) -> Result<String, ParseError> {
        let (t, line, col) = self.next()?;
        match t {
            Tok::Ident(s) => Ok(s),
            other => Err(ParseError {
                line,
                col,
                message: format!("expected identifier, found {other:?}"),
            }),
        }
    }

    fn expect_int(&mut self) -> Result<i64, ParseError> {
        let neg = self.eat_punct('-')?;
        let (t, line, col) = self.next()?;
        match t {
            Tok::Int(v) => Ok(if neg { -v } else { v }),
            other => Err(ParseError {
                line,
                col,
                message: format!("expected integer, found {other:?}"),
            }),
        }
    }

    fn lookup(&mut self, name: &str) -> Result<ValueId, ParseError> {
        for scope in self.scopes.iter().rev() {
            if let Some(id) = scope.get(name) {
                return Ok(*id);
            }
        }
        Err(self.err(format!("use of undefined value %{name}")))
    }

    fn define(&mut self, name: String, ty: Type) -> Result<ValueId, ParseError> {
        if self.scopes.iter().any(|s| s.contains_key(&name)) {
            return Err(self.err(format!("redefinition of value %{name}")));
        }
        let id = self.ids.fresh();
        self.def_types.insert(id, ty);
        self.scopes.last_mut().unwrap().insert(name, id);
        Ok(id)
    }

    // ---- types ----

    fn parse_type(&mut self) -> Result<Type, ParseError> {
        let name = self.expect_ident()?;
        match name.as_str() {
            "f64" => Ok(Type::F64),
            "f32" => Ok(Type::F32),
            "f32x2" => Ok(Type::F32x2),
            "index" => Ok(Type::Index),
            "memref" => self.parse_memref(),
            "stream" => {
                self.expect_punct('<')?;
                let elem = self.parse_type()?;
                self.expect_punct('>')?;
                Ok(Type::ReadStream(Box::new(elem)))
            }
            "wstream" => {
                self.expect_punct('<')?;
                let elem = self.parse_type()?;
                self.expect_punct('>')?;
                Ok(Type::WriteStream(Box::new(elem)))
            }
            "reg" => {
                if self.eat_punct('<')? {
                    let r = self.expect_ident()?;
                    let reg = IntReg::from_abi_name(&r)
                        .ok_or_else(|| self.err(format!("unknown integer register {r:?}")))?;
                    self.expect_punct('>')?;
                    Ok(Type::IntReg(Some(reg)))
                } else {
                    Ok(Type::IntReg(None))
                }
            }
            "freg" => {
                if self.eat_punct('<')? {
                    let r = self.expect_ident()?;
                    let reg = FpReg::from_abi_name(&r)
                        .ok_or_else(|| self.err(format!("unknown FP register {r:?}")))?;
                    self.expect_punct('>')?;
                    Ok(Type::FpReg(Some(reg)))
                } else {
                    Ok(Type::FpReg(None))
                }
            }
            other => Err(self.err(format!("unknown type {other:?}"))),
        }
    }

    /// `memref<4x5xf64>`: tokens arrive as Int(4), Ident("x5xf64"), so the
    /// joined fragment is re-split on 'x'.
    fn parse_memref(&mut self) -> Result<Type, ParseError> {
        self.expect_punct('<')?;
        let mut shape = Vec::new();
        let (t, line, col) = self.next()?;
        let elem = match t {
            Tok::Int(first_dim) => {
                shape.push(first_dim as u32);
                let (t2, l2, c2) = self.next()?;
                let frag = match t2 {
                    Tok::Ident(s) if s.starts_with('x') => s,
                    other => {
                        return Err(ParseError {
                            line: l2,
                            col: c2,
                            message: format!("expected 'x<dims>' in memref, found {other:?}"),
                        })
                    }
                };
                let mut remaining = &frag[1..];
                loop {
                    if let Some(split) = remaining.find('x') {
                        let (head, tail) = remaining.split_at(split);
                        if let Ok(d) = head.parse::<u32>() {
                            shape.push(d);
                            remaining = &tail[1..];
                            continue;
                        }
                    }
                    break;
                }
                parse_scalar_name(remaining).ok_or(ParseError {
                    line: l2,
                    col: c2,
                    message: format!("invalid memref element type {remaining:?}"),
                })?
            }
            other => {
                return Err(ParseError {
                    line,
                    col,
                    message: format!("expected memref shape, found {other:?}"),
                })
            }
        };
        self.expect_punct('>')?;
        Ok(Type::MemRef {
            elem: Box::new(elem),
            shape,
        })
    }

    // ---- affine ----

    fn parse_affine_map(&mut self) -> Result<AffineMap, ParseError> {
        self.expect_punct('(')?;
        let mut dims = Vec::new();
        if !self.eat_punct(')')? {
            loop {
                dims.push(self.expect_ident()?);
                if !self.eat_punct(',')? {
                    break;
                }
            }
            self.expect_punct(')')?;
        }
        let (t, line, col) = self.next()?;
        if t != Tok::Arrow {
            return Err(ParseError {
                line,
                col,
                message: format!("expected '->' in affine map, found {t:?}"),
            });
        }
        self.expect_punct('(')?;
        let arity = dims.len();
        let mut exprs = Vec::new();
        if !self.eat_punct(')')? {
            loop {
                exprs.push(self.parse_affine_expr(&dims)?);
                if !self.eat_punct(',')? {
                    break;
                }
            }
            self.expect_punct(')')?;
        }
        Ok(AffineMap::new(arity, exprs))
    }

    fn parse_affine_expr(&mut self, dims: &[String]) -> Result<AffineExpr, ParseError> {
        let mut acc = self.parse_affine_term(dims)?;
        loop {
            if self.eat_punct('+')? {
                let rhs = self.parse_affine_term(dims)?;
                for (a, b) in acc.coefs.iter_mut().zip(&rhs.coefs) {
                    *a += b;
                }
                acc.constant += rhs.constant;
            } else if self.eat_punct('-')? {
                let rhs = self.parse_affine_term(dims)?;
                for (a, b) in acc.coefs.iter_mut().zip(&rhs.coefs) {
                    *a -= b;
                }
                acc.constant -= rhs.constant;
            } else {
                break;
            }
        }
        Ok(acc)
    }

    fn parse_affine_term(&mut self, dims: &[String]) -> Result<AffineExpr, ParseError> {
        let mut acc = self.parse_affine_factor(dims)?;
        while self.eat_punct('*')? {
            let rhs = self.parse_affine_factor(dims)?;
            let (konst, linear) = if acc.coefs.iter().all(|c| *c == 0) {
                (acc.constant, rhs)
            } else if rhs.coefs.iter().all(|c| *c == 0) {
                (rhs.constant, acc)
            } else {
                return Err(self.err("non-linear affine expression"));
            };
            acc = AffineExpr {
                coefs: linear.coefs.iter().map(|c| c * konst).collect(),
                constant: linear.constant * konst,
            };
        }
        Ok(acc)
    }

    fn parse_affine_factor(&mut self, dims: &[String]) -> Result<AffineExpr, ParseError> {
        let (t, line, col) = self.next()?;
        match t {
            Tok::Int(v) => Ok(AffineExpr::constant(dims.len(), v)),
            Tok::Punct('-') => {
                let inner = self.parse_affine_factor(dims)?;
                Ok(AffineExpr {
                    coefs: inner.coefs.iter().map(|c| -c).collect(),
                    constant: -inner.constant,
                })
            }
            Tok::Punct('(') => {
                let e = self.parse_affine_expr(dims)?;
                self.expect_punct(')')?;
                Ok(e)
            }
            Tok::Ident(name) => {
                let Some(d) = dims.iter().position(|x| *x == name) else {
                    return Err(ParseError {
                        line,
                        col,
                        message: format!("unknown affine dimension {name:?}"),
                    });
                };
                Ok(AffineExpr::dim(dims.len(), d))
            }
            other => Err(ParseError {
                line,
                col,
                message: format!("expected affine factor, found {other:?}"),
            }),
        }
    }

    // ---- attributes ----

    fn parse_int_list(&mut self) -> Result<Vec<i64>, ParseError> {
        self.expect_punct('[')?;
        let mut out = Vec::new();
        if !self.eat_punct(']')? {
            loop {
                out.push(self.expect_int()?);
                if !self.eat_punct(',')? {
                    break;
                }
            }
            self.expect_punct(']')?;
        }
        Ok(out)
    }

    fn parse_pattern_body(&mut self, resolved: bool) -> Result<Attribute, ParseError> {
        self.expect_punct('<')?;
        let mut ub = None;
        let mut map = None;
        let mut strides = None;
        let mut repeat = 1i64;
        loop {
            let key = self.expect_ident()?;
            self.expect_punct('=')?;
            match key.as_str() {
                "ub" => ub = Some(self.parse_int_list()?),
                "strides" => strides = Some(self.parse_int_list()?),
                "repeat" => repeat = self.expect_int()?,
                "map" => map = Some(self.parse_affine_map()?),
                other => return Err(self.err(format!("unknown pattern field {other:?}"))),
            }
            if !self.eat_punct(',')? {
                break;
            }
        }
        self.expect_punct('>')?;
        let ub = ub.ok_or_else(|| self.err("pattern is missing 'ub'"))?;
        if resolved {
            let strides = strides.ok_or_else(|| self.err("spattern is missing 'strides'"))?;
            if strides.len() != ub.len() {
                return Err(self.err("spattern rank mismatch between ub and strides"));
            }
            Ok(Attribute::StridePattern(StridePattern {
                ub,
                strides,
                repeat,
            }))
        } else {
            let map = map.ok_or_else(|| self.err("pattern is missing 'map'"))?;
            if map.arity != ub.len() {
                return Err(self.err("pattern map arity does not match ub rank"));
            }
            Ok(Attribute::Pattern(AffinePattern { ub, map }))
        }
    }

    fn parse_attr_value(&mut self) -> Result<Attribute, ParseError> {
        match self.peek()?.clone() {
            Tok::Int(v) => {
                self.next()?;
                Ok(Attribute::Int(v))
            }
            Tok::Float(v) => {
                self.next()?;
                Ok(Attribute::Float(v))
            }
            Tok::Punct('-') => {
                self.next()?;
                let (t, line, col) = self.next()?;
                match t {
                    Tok::Int(v) => Ok(Attribute::Int(-v)),
                    Tok::Float(v) => Ok(Attribute::Float(-v)),
                    Tok::Ident(s) if s == "inf" => Ok(Attribute::Float(f64::NEG_INFINITY)),
                    other => Err(ParseError {
                        line,
                        col,
                        message: format!("expected number after '-', found {other:?}"),
                    }),
                }
            }
            Tok::Str(s) => {
                self.next()?;
                Ok(Attribute::Str(s))
            }
            Tok::Punct('(') => Ok(Attribute::Map(self.parse_affine_map()?)),
            Tok::Punct('[') => self.parse_attr_list(),
            Tok::Ident(s) => {
                self.next()?;
                match s.as_str() {
                    "true" => Ok(Attribute::Bool(true)),
                    "false" => Ok(Attribute::Bool(false)),
                    "inf" => Ok(Attribute::Float(f64::INFINITY)),
                    "nan" => Ok(Attribute::Float(f64::NAN)),
                    "pattern" => self.parse_pattern_body(false),
                    "spattern" => self.parse_pattern_body(true),
                    other => Err(self.err(format!("unexpected attribute value {other:?}"))),
                }
            }
            other => Err(self.err(format!("unexpected attribute value {other:?}"))),
        }
    }

    fn parse_attr_list(&mut self) -> Result<Attribute, ParseError> {
        self.expect_punct('[')?;
        if self.eat_punct(']')? {
            return Ok(Attribute::Ints(Vec::new()));
        }
        let mut items = Vec::new();
        loop {
            items.push(self.parse_attr_value()?);
            if !self.eat_punct(',')? {
                break;
            }
        }
        self.expect_punct(']')?;
        if items.iter().all(|a| matches!(a, Attribute::Int(_))) {
            return Ok(Attribute::Ints(
                items.iter().map(|a| a.as_int().unwrap()).collect(),
            ));
        }
        if items
            .iter()
            .all(|a| matches!(a, Attribute::Float(_) | Attribute::Int(_)))
        {
            return Ok(Attribute::Floats(
                items
                    .iter()
                    .map(|a| match a {
                        Attribute::Float(v) => *v,
                        Attribute::Int(v) => *v as f64,
                        _ => unreachable!(),
                    })
                    .collect(),
            ));
        }
        if items.iter().all(|a| matches!(a, Attribute::Str(_))) {
            return Ok(Attribute::Strs(
                items
                    .iter()
                    .map(|a| a.as_str().unwrap().to_string())
                    .collect(),
            ));
        }
        if items.iter().all(|a| matches!(a, Attribute::Map(_))) {
            return Ok(Attribute::Maps(
                items
                    .iter()
                    .map(|a| match a {
                        Attribute::Map(m) => m.clone(),
                        _ => unreachable!(),
                    })
                    .collect(),
            ));
        }
        if items.iter().all(|a| matches!(a, Attribute::Pattern(_))) {
            return Ok(Attribute::Patterns(
                items
                    .iter()
                    .map(|a| match a {
                        Attribute::Pattern(p) => p.clone(),
                        _ => unreachable!(),
                    })
                    .collect(),
            ));
        }
        if items
            .iter()
            .all(|a| matches!(a, Attribute::StridePattern(_)))
        {
            return Ok(Attribute::StridePatterns(
                items
                    .iter()
                    .map(|a| match a {
                        Attribute::StridePattern(p) => p.clone(),
                        _ => unreachable!(),
                    })
                    .collect(),
            ));
        }
        Err(self.err("heterogeneous attribute list"))
    }

    fn parse_attr_dict(&mut self) -> Result<Vec<(String, Attribute)>, ParseError> {
        // '{' already consumed; caller guaranteed this is a dict.
        let mut attrs = Vec::new();
        loop {
            let key = self.expect_ident()?;
            self.expect_punct('=')?;
            let value = self.parse_attr_value()?;
            if attrs.iter().any(|(k, _)| *k == key) {
                return Err(self.err(format!("duplicate attribute key {key:?}")));
            }
            attrs.push((key, value));
            if !self.eat_punct(',')? {
                break;
            }
        }
        self.expect_punct('}')?;
        Ok(attrs)
    }

    /// After consuming '{': true if the content is an attribute dict rather
    /// than a region.
    fn at_attr_dict(&mut self) -> Result<bool, ParseError> {
        Ok(matches!(self.peek()?, Tok::Ident(_)) && *self.peek_n(1)? == Tok::Punct('='))
    }

    // ---- operations ----

    fn parse_op_name(&mut self) -> Result<String, ParseError> {
        let (t, line, col) = self.next()?;
        match t {
            Tok::Str(s) => Ok(s),
            Tok::Ident(first) => {
                let mut name = first;
                while self.eat_punct('.')? {
                    name.push('.');
                    name.push_str(&self.expect_ident()?);
                }
                if !name.contains('.') {
                    return Err(ParseError {
                        line,
                        col,
                        message: format!("operation name {name:?} is missing a dialect prefix"),
                    });
                }
                Ok(name)
            }
            other => Err(ParseError {
                line,
                col,
                message: format!("expected operation name, found {other:?}"),
            }),
        }
    }

    fn parse_operation(&mut self) -> Result<(Operation, Vec<(usize, String, u32, u32)>), ParseError>
    {
        let mut result_names = Vec::new();
        if matches!(self.peek()?, Tok::Value(_)) {
            loop {
                match self.next()? {
                    (Tok::Value(name), _, _) => result_names.push(name),
                    (other, line, col) => {
                        return Err(ParseError {
                            line,
                            col,
                            message: format!("expected result name, found {other:?}"),
                        })
                    }
                }
                if !self.eat_punct(',')? {
                    break;
                }
            }
            self.expect_punct('=')?;
        }
        let name = self.parse_op_name()?;
        let mut op = Operation::new(&name);
        let mut succ_labels: Vec<(usize, String, u32, u32)> = Vec::new();

        if self.eat_punct('(')? {
            if !self.eat_punct(')')? {
                loop {
                    let (t, line, col) = self.next()?;
                    match t {
                        Tok::Value(n) => {
                            let id = self.lookup(&n).map_err(|mut e| {
                                e.line = line;
                                e.col = col;
                                e
                            })?;
                            op.operands.push(id);
                        }
                        other => {
                            return Err(ParseError {
                                line,
                                col,
                                message: format!("expected operand, found {other:?}"),
                            })
                        }
                    }
                    if !self.eat_punct(',')? {
                        break;
                    }
                }
                self.expect_punct(')')?;
            }
        }

        if self.eat_punct('[')? {
            loop {
                let (t, line, col) = self.next()?;
                let label = match t {
                    Tok::Label(l) => l,
                    other => {
                        return Err(ParseError {
                            line,
                            col,
                            message: format!("expected successor label, found {other:?}"),
                        })
                    }
                };
                let mut args = Vec::new();
                if self.eat_punct('(')? {
                    if !self.eat_punct(')')? {
                        loop {
                            let (t, l2, c2) = self.next()?;
                            match t {
                                Tok::Value(n) => {
                                    let id = self.lookup(&n).map_err(|mut e| {
                                        e.line = l2;
                                        e.col = c2;
                                        e
                                    })?;
                                    args.push(id);
                                }
                                other => {
                                    return Err(ParseError {
                                        line: l2,
                                        col: c2,
                                        message: format!(
                                            "expected successor argument, found {other:?}"
                                        ),
                                    })
                                }
                            }
                            if !self.eat_punct(',')? {
                                break;
                            }
                        }
                        self.expect_punct(')')?;
                    }
                }
                succ_labels.push((op.successors.len(), label, line, col));
                op.successors.push(Successor {
                    block: usize::MAX,
                    args,
                });
                if !self.eat_punct(',')? {
                    break;
                }
            }
            self.expect_punct(']')?;
        }

        // Attribute dict (must precede the type signature and regions).
        if *self.peek()? == Tok::Punct('{') && {
            self.next()?;
            let is_dict = self.at_attr_dict()?;
            if !is_dict {
                // It was a region; parse it now.
                let region = self.parse_region_body()?;
                op.regions.push(region);
            }
            is_dict
        } {
            op.attrs = self.parse_attr_dict()?;
        }

        // Type signature.
        let mut declared_operand_types = Vec::new();
        let mut result_types = Vec::new();
        if op.regions.is_empty() && self.eat_punct(':')? {
            if self.eat_punct('(')? {
                if !self.eat_punct(')')? {
                    loop {
                        declared_operand_types.push(self.parse_type()?);
                        if !self.eat_punct(',')? {
                            break;
                        }
                    }
                    self.expect_punct(')')?;
                }
                if *self.peek()? == Tok::Arrow {
                    self.next()?;
                    if self.eat_punct('(')? {
                        if !self.eat_punct(')')? {
                            loop {
                                result_types.push(self.parse_type()?);
                                if !self.eat_punct(',')? {
                                    break;
                                }
                            }
                            self.expect_punct(')')?;
                        }
                    } else {
                        result_types.push(self.parse_type()?);
                    }
                } else {
                    result_types = std::mem::take(&mut declared_operand_types);
                }
            } else {
                result_types.push(self.parse_type()?);
                while self.eat_punct(',')? {
                    result_types.push(self.parse_type()?);
                }
            }
        }

        if !declared_operand_types.is_empty() || !op.operands.is_empty() {
            if declared_operand_types.len() != op.operands.len() {
                return Err(self.err(format!(
                    "operation {name} declares {} operand types for {} operands",
                    declared_operand_types.len(),
                    op.operands.len()
                )));
            }
            for (v, ty) in op.operands.iter().zip(&declared_operand_types) {
                if let Some(actual) = self.def_types.get(v) {
                    if actual != ty {
                        return Err(self.err(format!(
                            "type mismatch in {name}: operand declared {ty} but defined as {actual}"
                        )));
                    }
                }
            }
        }
        if result_types.len() != result_names.len() {
            return Err(self.err(format!(
                "operation {name} declares {} result types for {} results",
                result_types.len(),
                result_names.len()
            )));
        }
        for (rname, ty) in result_names.into_iter().zip(result_types) {
            let id = self.define(rname, ty.clone())?;
            op.results.push(ValueDef { id, ty });
        }

        // Trailing regions.
        while *self.peek()? == Tok::Punct('{') {
            self.next()?;
            let region = self.parse_region_body()?;
            op.regions.push(region);
        }

        Ok((op, succ_labels))
    }

    fn parse_region_body(&mut self) -> Result<Region, ParseError> {
        // '{' already consumed.
        self.scopes.push(HashMap::new());
        let mut region = Region::default();
        let mut labels: HashMap<String, usize> = HashMap::new();
        let mut patches: Vec<SuccPatch> = Vec::new();

        let mut current = Block::default();
        let mut started = false;
        loop {
            match self.peek()? {
                Tok::Punct('}') => {
                    self.next()?;
                    break;
                }
                Tok::Label(_) => {
                    let (t, line, col) = self.next()?;
                    let label = match t {
                        Tok::Label(l) => l,
                        _ => unreachable!(),
                    };
                    if started {
                        region.blocks.push(std::mem::take(&mut current));
                    }
                    started = true;
                    if labels.insert(label.clone(), region.blocks.len()).is_some() {
                        return Err(ParseError {
                            line,
                            col,
                            message: format!("duplicate block label ^{label}"),
                        });
                    }
                    if self.eat_punct('(')? {
                        if !self.eat_punct(')')? {
                            loop {
                                let (t, l2, c2) = self.next()?;
                                let name = match t {
                                    Tok::Value(n) => n,
                                    other => {
                                        return Err(ParseError {
                                            line: l2,
                                            col: c2,
                                            message: format!(
                                                "expected block argument, found {other:?}"
                                            ),
                                        })
                                    }
                                };
                                self.expect_punct(':')?;
                                let ty = self.parse_type()?;
                                let id = self.define(name, ty.clone())?;
                                current.args.push(ValueDef { id, ty });
                                if !self.eat_punct(',')? {
                                    break;
                                }
                            }
                            self.expect_punct(')')?;
                        }
                    }
                    self.expect_punct(':')?;
                }
                _ => {
                    started = true;
                    let (op, succ_labels) = self.parse_operation()?;
                    for (si, label, line, col) in succ_labels {
                        patches.push((region.blocks.len(), current.ops.len(), si, label, line, col));
                    }
                    current.ops.push(op);
                }
            }
        }
        region.blocks.push(current);

        for (bi, oi, si, label, line, col) in patches {
            let Some(target) = labels.get(&label) else {
                return Err(ParseError {
                    line,
                    col,
                    message: format!("reference to unknown block ^{label}"),
                });
            };
            region.blocks[bi].ops[oi].successors[si].block = *target;
        }
        self.scopes.pop();
        Ok(region)
    }
}

fn parse_scalar_name(name: &str) -> Option<Type> {
    match name {
        "f64" => Some(Type::F64),
        "f32" => Some(Type::F32),
        "f32x2" => Some(Type::F32x2),
        "index" => Some(Type::Index),
        _ => None,
    }
}

/// Parses a module from its textual form.
pub fn parse_module(src: &str) -> Result<Module, ParseError> {
    let mut p = Parser::new(src);
    let (top, succ) = p.parse_operation()?;
    if let Some((_, label, line, col)) = succ.into_iter().next() {
        return Err(ParseError {
            line,
            col,
            message: format!("top-level operation cannot branch to ^{label}"),
        });
    }
    let (t, line, col) = p.next()?;
    if t != Tok::Eof {
        return Err(ParseError {
            line,
            col,
            message: format!("trailing input after module: {t:?}"),
        });
    }
    Ok(Module::new(top))
}
