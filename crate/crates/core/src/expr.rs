//! Scalar math expressions: recursive-descent parser, extended-real
//! evaluator and a log-domain evaluator for integrands that overflow f64.
//!
//! Grammar:
//! ```text
//! expr   := term (('+'|'-') term)*
//! term   := factor (('*'|'/') factor)*
//! factor := unary ('^' factor)?
//! unary  := '-' unary | atom
//! atom   := number | ident | ident '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//! The caret is right-associative and binds less tightly than unary minus,
//! so `-x1^2` is `(-x1)^2`; write `-(x1^2)` for the negated square.
//!
//! Extended-real evaluation rules: `log(t) = -inf` for `t <= 0`, `x/0 = ±inf`
//! by the sign of `x` (`0/0` is NaN), and `0*inf = 0`.

use crate::error::{Error, Result};
use crate::logdomain::SignedLog;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::ops::Range;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum UnaryFn {
    Neg,
    Exp,
    Log,
    Sin,
    Cos,
    Sqrt,
    Abs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Min,
    Max,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum ExprNode {
    /// Literal constant (numbers, `pi`, `e`).
    Constant(f64),
    /// 1-based variable index: `x3` is `Variable(3)`.
    Variable(usize),
    Unary(UnaryFn, Box<ExprAst>),
    Binary(BinaryOp, Box<ExprAst>, Box<ExprAst>),
}

/// Parsed expression with the source span each node came from.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExprAst {
    pub node: ExprNode,
    pub span: Range<usize>,
    /// Dimension the expression was parsed against.
    pub dimension: usize,
}

impl ExprAst {
    fn new(node: ExprNode, span: Range<usize>, dimension: usize) -> Self {
        ExprAst { node, span, dimension }
    }

    /// Plain f64 evaluation with the extended-real rules above.
    pub fn eval(&self, point: &[f64]) -> f64 {
        debug_assert_eq!(point.len(), self.dimension);
        match &self.node {
            ExprNode::Constant(c) => *c,
            ExprNode::Variable(i) => point[*i - 1],
            ExprNode::Unary(f, a) => {
                let v = a.eval(point);
                match f {
                    UnaryFn::Neg => -v,
                    UnaryFn::Exp => v.exp(),
                    UnaryFn::Log => {
                        if v <= 0.0 {
                            f64::NEG_INFINITY
                        } else {
                            v.ln()
                        }
                    }
                    UnaryFn::Sin => v.sin(),
                    UnaryFn::Cos => v.cos(),
                    UnaryFn::Sqrt => v.sqrt(),
                    UnaryFn::Abs => v.abs(),
                }
            }
            ExprNode::Binary(op, a, b) => {
                let x = a.eval(point);
                let y = b.eval(point);
                match op {
                    BinaryOp::Add => x + y,
                    BinaryOp::Sub => x - y,
                    BinaryOp::Mul => extended_mul(x, y),
                    BinaryOp::Div => extended_div(x, y),
                    BinaryOp::Pow => x.powf(y),
                    BinaryOp::Min => x.min(y),
                    BinaryOp::Max => x.max(y),
                }
            }
        }
    }

    /// Log-domain evaluation: `exp(g)` becomes a log directly, so integrands
    /// like `exp(r^2/log r)` never overflow. Structurally matches `eval`.
    pub fn eval_log(&self, point: &[f64]) -> SignedLog {
        match &self.node {
            ExprNode::Constant(c) => SignedLog::from_f64(*c),
            ExprNode::Variable(i) => SignedLog::from_f64(point[*i - 1]),
            ExprNode::Unary(f, a) => {
                match f {
                    UnaryFn::Neg => -a.eval_log(point),
                    UnaryFn::Exp => {
                        // the exponent itself is evaluated as a plain float
                        SignedLog::from_ln(a.eval(point))
                    }
                    UnaryFn::Log => SignedLog::from_f64(a.eval_log(point).ln_extended()),
                    UnaryFn::Sin => SignedLog::from_f64(a.eval(point).sin()),
                    UnaryFn::Cos => SignedLog::from_f64(a.eval(point).cos()),
                    UnaryFn::Sqrt => a.eval_log(point).sqrt(),
                    UnaryFn::Abs => a.eval_log(point).abs(),
                }
            }
            ExprNode::Binary(op, a, b) => match op {
                BinaryOp::Add => a.eval_log(point) + b.eval_log(point),
                BinaryOp::Sub => a.eval_log(point) - b.eval_log(point),
                BinaryOp::Mul => a.eval_log(point) * b.eval_log(point),
                BinaryOp::Div => a.eval_log(point) / b.eval_log(point),
                BinaryOp::Pow => {
                    let base = a.eval_log(point);
                    let exy = b.eval(point);
                    if base.sign < 0 {
                        // fall back to f64 semantics for negative bases
                        SignedLog::from_f64(base.to_f64().powf(exy))
                    } else {
                        base.abs_powf(exy)
                    }
                }
                BinaryOp::Min => a.eval_log(point).min(b.eval_log(point)),
                BinaryOp::Max => a.eval_log(point).max(b.eval_log(point)),
            },
        }
    }

    /// Canonical fully-parenthesized form; parses back to an AST with
    /// identical evaluation.
    pub fn pretty(&self) -> String {
        let mut s = String::new();
        self.write_pretty(&mut s);
        s
    }

    fn write_pretty(&self, out: &mut String) {
        match &self.node {
            ExprNode::Constant(c) => {
                if *c == std::f64::consts::PI {
                    out.push_str("pi");
                } else if *c == std::f64::consts::E {
                    out.push('e');
                } else if *c < 0.0 {
                    out.push_str(&format!("(-{})", fmt_number(-*c)));
                } else {
                    out.push_str(&fmt_number(*c));
                }
            }
            ExprNode::Variable(i) => out.push_str(&format!("x{i}")),
            ExprNode::Unary(f, a) => {
                let name = match f {
                    UnaryFn::Neg => {
                        out.push_str("(-");
                        a.write_pretty(out);
                        out.push(')');
                        return;
                    }
                    UnaryFn::Exp => "exp",
                    UnaryFn::Log => "log",
                    UnaryFn::Sin => "sin",
                    UnaryFn::Cos => "cos",
                    UnaryFn::Sqrt => "sqrt",
                    UnaryFn::Abs => "abs",
                };
                out.push_str(name);
                out.push('(');
                a.write_pretty(out);
                out.push(')');
            }
            ExprNode::Binary(op, a, b) => {
                if let BinaryOp::Min | BinaryOp::Max = op {
                    out.push_str(if *op == BinaryOp::Min { "min(" } else { "max(" });
                    a.write_pretty(out);
                    out.push(',');
                    b.write_pretty(out);
                    out.push(')');
                    return;
                }
                out.push('(');
                a.write_pretty(out);
                out.push(match op {
                    BinaryOp::Add => '+',
                    BinaryOp::Sub => '-',
                    BinaryOp::Mul => '*',
                    BinaryOp::Div => '/',
                    BinaryOp::Pow => '^',
                    _ => unreachable!(),
                });
                b.write_pretty(out);
                out.push(')');
            }
        }
    }
}

// `x<digits>` names a variable; anything else is not one.
fn parse_variable_name(name: &str) -> Option<usize> {
    let rest = name.strip_prefix('x')?;
    if rest.is_empty() || !rest.bytes().all(|c| c.is_ascii_digit()) {
        return None;
    }
    rest.parse().ok()
}

fn fmt_number(c: f64) -> String {
    // shortest roundtrip representation keeps re-parsing exact
    let mut s = format!("{c}");
    if !s.contains('.') && !s.contains('e') && !s.contains("inf") && !s.contains("NaN") {
        s.push_str(".0");
    }
    s
}

fn extended_mul(x: f64, y: f64) -> f64 {
    // 0 * inf = 0 by the measure-theoretic convention
    if (x == 0.0 && y.is_infinite()) || (y == 0.0 && x.is_infinite()) {
        0.0
    } else {
        x * y
    }
}

fn extended_div(x: f64, y: f64) -> f64 {
    // IEEE already gives x/0 = ±inf by sign of x, and 0/0 = NaN
    x / y
}

pub fn parse_expression(text: &str, dimension: usize) -> Result<ExprAst> {
    if text.trim().is_empty() {
        return Err(Error::Syntax { position: 0, message: "empty expression".into() });
    }
    let mut p = Parser { src: text.as_bytes(), text, pos: 0, dimension };
    let ast = p.parse_expr()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(Error::Syntax {
            position: p.pos,
            message: format!("unexpected trailing input `{}`", &text[p.pos..]),
        });
    }
    Ok(ast)
}

struct Parser<'a> {
    src: &'a [u8],
    text: &'a str,
    pos: usize,
    dimension: usize,
}

impl<'a> Parser<'a> {
    fn skip_ws(&mut self) {
        while matches!(self.src.get(self.pos), Some(b' ' | b'\t' | b'\n' | b'\r')) {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn parse_expr(&mut self) -> Result<ExprAst> {
        let start = { self.skip_ws(); self.pos };
        let mut node = self.parse_term()?;
        while let Some(c @ (b'+' | b'-')) = self.peek() {
            self.pos += 1;
            let rhs = self.parse_term()?;
            let op = if c == b'+' { BinaryOp::Add } else { BinaryOp::Sub };
            let span = start..rhs.span.end;
            node = ExprAst::new(ExprNode::Binary(op, Box::new(node), Box::new(rhs)), span, self.dimension);
        }
        Ok(node)
    }

    fn parse_term(&mut self) -> Result<ExprAst> {
        let start = { self.skip_ws(); self.pos };
        let mut node = self.parse_factor()?;
        while let Some(c @ (b'*' | b'/')) = self.peek() {
            self.pos += 1;
            let rhs = self.parse_factor()?;
            let op = if c == b'*' { BinaryOp::Mul } else { BinaryOp::Div };
            let span = start..rhs.span.end;
            node = ExprAst::new(ExprNode::Binary(op, Box::new(node), Box::new(rhs)), span, self.dimension);
        }
        Ok(node)
    }

    fn parse_factor(&mut self) -> Result<ExprAst> {
        let start = { self.skip_ws(); self.pos };
        let base = self.parse_unary()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            // right-associative
            let exp = self.parse_factor()?;
            let span = start..exp.span.end;
            return Ok(ExprAst::new(
                ExprNode::Binary(BinaryOp::Pow, Box::new(base), Box::new(exp)),
                span,
                self.dimension,
            ));
        }
        Ok(base)
    }

    fn parse_unary(&mut self) -> Result<ExprAst> {
        if self.peek() == Some(b'-') {
            let start = self.pos;
            self.pos += 1;
            let inner = self.parse_unary()?;
            let span = start..inner.span.end;
            return Ok(ExprAst::new(ExprNode::Unary(UnaryFn::Neg, Box::new(inner)), span, self.dimension));
        }
        self.parse_atom()
    }

    fn parse_atom(&mut self) -> Result<ExprAst> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let inner = self.parse_expr()?;
                self.expect(b')')?;
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.parse_number(),
            Some(c) if c.is_ascii_alphabetic() => self.parse_ident(),
            Some(c) => Err(Error::Syntax {
                position: self.pos,
                message: format!("unexpected character `{}`", c as char),
            }),
            None => Err(Error::Syntax { position: self.pos, message: "unexpected end of input".into() }),
        }
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(Error::Syntax {
                position: self.pos,
                message: format!("expected `{}`", c as char),
            })
        }
    }

    fn parse_number(&mut self) -> Result<ExprAst> {
        let start = self.pos;
        while matches!(self.src.get(self.pos), Some(c) if c.is_ascii_digit() || *c == b'.') {
            self.pos += 1;
        }
        // exponent part: 1e-3, 2.5E10
        if matches!(self.src.get(self.pos), Some(b'e' | b'E')) {
            let mut look = self.pos + 1;
            if matches!(self.src.get(look), Some(b'+' | b'-')) {
                look += 1;
            }
            if matches!(self.src.get(look), Some(c) if c.is_ascii_digit()) {
                self.pos = look;
                while matches!(self.src.get(self.pos), Some(c) if c.is_ascii_digit()) {
                    self.pos += 1;
                }
            }
        }
        let lit = &self.text[start..self.pos];
        let value: f64 = lit.parse().map_err(|_| Error::Syntax {
            position: start,
            message: format!("invalid number literal `{lit}`"),
        })?;
        Ok(ExprAst::new(ExprNode::Constant(value), start..self.pos, self.dimension))
    }

    fn parse_ident(&mut self) -> Result<ExprAst> {
        let start = self.pos;
        while matches!(self.src.get(self.pos), Some(c) if c.is_ascii_alphanumeric() || *c == b'_') {
            self.pos += 1;
        }
        let name = &self.text[start..self.pos];
        let span = start..self.pos;

        if self.peek() == Some(b'(') {
            return self.parse_call(name, start);
        }

        match name {
            "pi" => Ok(ExprAst::new(ExprNode::Constant(std::f64::consts::PI), span, self.dimension)),
            "e" => Ok(ExprAst::new(ExprNode::Constant(std::f64::consts::E), span, self.dimension)),
            _ => {
                if let Some(idx) = parse_variable_name(name) {
                    if idx < 1 || idx > self.dimension {
                        return Err(Error::VariableOutOfRange { index: idx, dimension: self.dimension });
                    }
                    return Ok(ExprAst::new(ExprNode::Variable(idx), span, self.dimension));
                }
                Err(Error::UnknownIdentifier { name: name.into(), position: start })
            }
        }
    }

    fn parse_call(&mut self, name: &str, start: usize) -> Result<ExprAst> {
        self.expect(b'(')?;

        if name == "norm" {
            // norm(x) expands to sqrt(x1^2 + ... + xn^2) at parse time
            self.skip_ws();
            let arg_start = self.pos;
            while matches!(self.src.get(self.pos), Some(c) if c.is_ascii_alphanumeric()) {
                self.pos += 1;
            }
            if &self.text[arg_start..self.pos] != "x" {
                return Err(Error::Syntax {
                    position: arg_start,
                    message: "norm takes the bare point `x` as its argument".into(),
                });
            }
            self.expect(b')')?;
            let span = start..self.pos;
            return Ok(self.norm_expansion(span));
        }

        let mut args = vec![self.parse_expr()?];
        while self.peek() == Some(b',') {
            self.pos += 1;
            args.push(self.parse_expr()?);
        }
        self.expect(b')')?;
        let span = start..self.pos;

        let unary = |f: UnaryFn, mut args: Vec<ExprAst>| -> Result<ExprAst> {
            if args.len() != 1 {
                return Err(Error::Syntax {
                    position: start,
                    message: format!("function takes 1 argument, got {}", args.len()),
                });
            }
            Ok(ExprAst::new(ExprNode::Unary(f, Box::new(args.remove(0))), span.clone(), self.dimension))
        };
        let binary = |op: BinaryOp, mut args: Vec<ExprAst>| -> Result<ExprAst> {
            if args.len() != 2 {
                return Err(Error::Syntax {
                    position: start,
                    message: format!("function takes 2 arguments, got {}", args.len()),
                });
            }
            let b = args.pop().unwrap();
            let a = args.pop().unwrap();
            Ok(ExprAst::new(ExprNode::Binary(op, Box::new(a), Box::new(b)), span.clone(), self.dimension))
        };

        match name {
            "exp" => unary(UnaryFn::Exp, args),
            "log" => unary(UnaryFn::Log, args),
            "sin" => unary(UnaryFn::Sin, args),
            "cos" => unary(UnaryFn::Cos, args),
            "sqrt" => unary(UnaryFn::Sqrt, args),
            "abs" => unary(UnaryFn::Abs, args),
            "min" => binary(BinaryOp::Min, args),
            "max" => binary(BinaryOp::Max, args),
            "pow" => binary(BinaryOp::Pow, args),
            _ => Err(Error::UnknownIdentifier { name: name.into(), position: start }),
        }
    }

    fn norm_expansion(&self, span: Range<usize>) -> ExprAst {
        let n = self.dimension;
        let sq = |i: usize| {
            ExprAst::new(
                ExprNode::Binary(
                    BinaryOp::Pow,
                    Box::new(ExprAst::new(ExprNode::Variable(i), span.clone(), n)),
                    Box::new(ExprAst::new(ExprNode::Constant(2.0), span.clone(), n)),
                ),
                span.clone(),
                n,
            )
        };
        let mut sum = sq(1);
        for i in 2..=n {
            sum = ExprAst::new(
                ExprNode::Binary(BinaryOp::Add, Box::new(sum), Box::new(sq(i))),
                span.clone(),
                n,
            );
        }
        ExprAst::new(ExprNode::Unary(UnaryFn::Sqrt, Box::new(sum)), span, n)
    }
}

impl fmt::Display for ExprAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.pretty())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn parses_gaussian_like_density() {
        let ast = parse_expression("exp(-(x1^2) - x2^2)", 2).unwrap();
        assert_relative_eq!(ast.eval(&[1.0, 2.0]), (-5.0f64).exp(), max_relative = 1e-14);
    }

    #[test]
    fn norm_expands() {
        let ast = parse_expression("exp(-norm(x))", 3).unwrap();
        // 3-4-5 triangle embedded in 3-D
        assert_relative_eq!(ast.eval(&[3.0, 4.0, 0.0]), (-5.0f64).exp(), max_relative = 1e-14);
        let ast2 = parse_expression("exp(-norm(x))", 2).unwrap();
        assert_relative_eq!(ast2.eval(&[3.0, 4.0]), 6.737946999085467e-3, max_relative = 1e-12);
    }

    #[test]
    fn variable_out_of_range() {
        match parse_expression("exp(-x3)", 2) {
            Err(Error::VariableOutOfRange { index: 3, dimension: 2 }) => {}
            other => panic!("expected out-of-range error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_identifier_and_syntax_errors_carry_position() {
        match parse_expression("exp(-foo)", 1) {
            Err(Error::UnknownIdentifier { name, position }) => {
                assert_eq!(name, "foo");
                assert_eq!(position, 5);
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_expression("1 + ", 1), Err(Error::Syntax { .. })));
        assert!(matches!(parse_expression("", 1), Err(Error::Syntax { .. })));
    }

    #[test]
    fn extended_real_ledger() {
        let log0 = parse_expression("log(x1)", 1).unwrap();
        assert_eq!(log0.eval(&[0.0]), f64::NEG_INFINITY);
        assert_eq!(log0.eval(&[-2.0]), f64::NEG_INFINITY);

        let div = parse_expression("x1/x2", 2).unwrap();
        assert_eq!(div.eval(&[1.0, 0.0]), f64::INFINITY);
        assert_eq!(div.eval(&[-1.0, 0.0]), f64::NEG_INFINITY);
        assert!(div.eval(&[0.0, 0.0]).is_nan());

        // 0 * inf = 0
        let zi = parse_expression("x1*(x2/x3)", 3).unwrap();
        assert_eq!(zi.eval(&[0.0, 1.0, 0.0]), 0.0);
    }

    #[test]
    fn caret_binds_below_unary_minus() {
        // per the grammar, -2^2 is (-2)^2 = 4
        let ast = parse_expression("-2^2", 1).unwrap();
        assert_relative_eq!(ast.eval(&[0.0]), 4.0);
        // and the caret is right-associative: 2^3^2 = 2^9
        let ast = parse_expression("2^3^2", 1).unwrap();
        assert_relative_eq!(ast.eval(&[0.0]), 512.0);
    }

    #[test]
    fn basic_eval_and_constants() {
        let ast = parse_expression("x1*x2", 2).unwrap();
        assert_eq!(ast.eval(&[2.0, 3.0]), 6.0);
        let c = parse_expression("pi + e", 1).unwrap();
        assert_relative_eq!(c.eval(&[0.0]), std::f64::consts::PI + std::f64::consts::E);
        let m = parse_expression("min(x1, max(x1, 2))", 1).unwrap();
        assert_eq!(m.eval(&[7.0]), 7.0);
        assert_eq!(m.eval(&[1.0]), 1.0);
    }

    #[test]
    fn log_domain_eval_handles_overflow() {
        let ast = parse_expression("exp(x1^2)", 1).unwrap();
        let v = ast.eval_log(&[40.0]);
        assert_relative_eq!(v.ln_abs, 1600.0, max_relative = 1e-12);
        assert_eq!(v.sign, 1);
        // and matches plain eval in range
        let w = ast.eval_log(&[2.0]);
        assert_relative_eq!(w.to_f64(), ast.eval(&[2.0]), max_relative = 1e-12);
    }

    fn arb_expr(dimension: usize) -> impl Strategy<Value = ExprAst> {
        let leaf = prop_oneof![
            (-5.0f64..5.0).prop_map(move |c| parse_expression(&format!("({c})"), dimension).unwrap()),
            (1..=dimension).prop_map(move |i| parse_expression(&format!("x{i}"), dimension).unwrap()),
        ];
        leaf.prop_recursive(4, 24, 3, move |inner| {
            prop_oneof![
                (inner.clone(), inner.clone(), 0..4usize).prop_map(move |(a, b, k)| {
                    let op = [BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul, BinaryOp::Div][k];
                    ExprAst::new(ExprNode::Binary(op, Box::new(a), Box::new(b)), 0..0, dimension)
                }),
                (inner.clone(), 0..5usize).prop_map(move |(a, k)| {
                    let f = [UnaryFn::Neg, UnaryFn::Sin, UnaryFn::Cos, UnaryFn::Abs, UnaryFn::Exp][k];
                    ExprAst::new(ExprNode::Unary(f, Box::new(a)), 0..0, dimension)
                }),
            ]
        })
    }

    proptest! {
        // pretty-print then re-parse evaluates identically on random points
        #[test]
        fn pretty_roundtrip(ast in arb_expr(2), x in -10.0f64..10.0, y in -10.0f64..10.0) {
            let printed = ast.pretty();
            let reparsed = parse_expression(&printed, 2).unwrap();
            let a = ast.eval(&[x, y]);
            let b = reparsed.eval(&[x, y]);
            if a.is_nan() {
                prop_assert!(b.is_nan());
            } else if a.is_infinite() {
                prop_assert_eq!(a, b);
            } else {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }

        // evaluation is pure: repeated evaluation is bit-identical
        #[test]
        fn eval_is_pure(ast in arb_expr(2), x in -10.0f64..10.0, y in -10.0f64..10.0) {
            let a = ast.eval(&[x, y]);
            let b = ast.eval(&[x, y]);
            prop_assert!(a.to_bits() == b.to_bits());
        }
    }
}
