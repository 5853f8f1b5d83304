//! Arithmetic expressions for metric entries, sheet maps and form coefficients.
//!
//! The grammar is the usual one for math text: `+ -` bind loosest, then
//! `* /`, then unary minus, then `^` (right associative). So `-x^2` is
//! `-(x^2)` and `2^-1` is `2^(-1)`. Functions: `sin cos tan exp log sqrt
//! cosh sinh abs` (one argument) and `atan2` (two).
//!
//! The identifier `pi` is a predefined constant unless a binding shadows it.

use std::collections::HashMap;
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
    Cosh,
    Sinh,
    Atan2,
    Abs,
}

impl Func {
    pub const ALL: [Func; 10] =
        [Func::Sin, Func::Cos, Func::Tan, Func::Exp, Func::Log, Func::Sqrt, Func::Cosh, Func::Sinh, Func::Atan2, Func::Abs];

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Cosh => "cosh",
            Func::Sinh => "sinh",
            Func::Atan2 => "atan2",
            Func::Abs => "abs",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Atan2 => 2,
            _ => 1,
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        Func::ALL.iter().copied().find(|f| f.name() == name)
    }
}

/// Syntax tree. Literals produced by the parser are always non-negative;
/// a leading minus is a [`Node::Neg`].
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Num(f64),
    Var(String),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

impl fmt::Display for Node {
    /// Fully parenthesized form; re-parsing it yields the same tree.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Num(x) => write!(f, "{x:?}"),
            Node::Var(name) => f.write_str(name),
            Node::Neg(a) => write!(f, "(-{a})"),
            Node::Bin(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
            Node::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("parse error at byte {offset}: {message} (expected one of: {})", expected.join(", "))]
pub struct ParseError {
    pub offset: usize,
    pub expected: Vec<String>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("unbound variable `{0}`")]
    Unbound(String),
    #[error("domain error: {what} in `{subexpr}`")]
    Domain { what: &'static str, subexpr: String },
}

/// A parsed expression together with its source text.
#[derive(Debug, Clone)]
pub struct Expression {
    src: String,
    root: Node,
}

impl PartialEq for Expression {
    fn eq(&self, other: &Self) -> bool {
        self.root == other.root
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.root.fmt(f)
    }
}

impl Expression {
    pub fn parse(src: &str) -> Result<Expression, ParseError> {
        let tokens = lex(src)?;
        let mut p = Parser { tokens, pos: 0, src_len: src.len() };
        if p.tokens.is_empty() {
            return Err(ParseError { offset: 0, expected: vec!["expression".into()], message: "empty input".into() });
        }
        let root = p.expr(0)?;
        if let Some(tok) = p.peek() {
            return Err(ParseError {
                offset: tok.offset,
                expected: vec!["operator".into(), "end of input".into()],
                message: format!("unexpected {}", tok.kind.describe()),
            });
        }
        Ok(Expression { src: src.to_string(), root })
    }

    /// Wraps an existing tree; `src` is set to its printed form.
    pub fn from_node(root: Node) -> Expression {
        Expression { src: root.to_string(), root }
    }

    pub fn constant(x: f64) -> Expression {
        if x < 0.0 {
            Expression::from_node(Node::Neg(Box::new(Node::Num(-x))))
        } else {
            Expression::from_node(Node::Num(x))
        }
    }

    pub fn source(&self) -> &str {
        &self.src
    }

    pub fn node(&self) -> &Node {
        &self.root
    }

    /// Free variable names in first-occurrence order (excluding `pi`).
    pub fn variables(&self) -> Vec<String> {
        fn walk(n: &Node, out: &mut Vec<String>) {
            match n {
                Node::Num(_) => {}
                Node::Var(v) => {
                    if v != "pi" && !out.contains(v) {
                        out.push(v.clone());
                    }
                }
                Node::Neg(a) => walk(a, out),
                Node::Bin(_, a, b) => {
                    walk(a, out);
                    walk(b, out);
                }
                Node::Call(_, args) => args.iter().for_each(|a| walk(a, out)),
            }
        }
        let mut out = Vec::new();
        walk(&self.root, &mut out);
        out
    }

    /// True if the tree is a literal (possibly negated).
    pub fn as_constant(&self) -> Option<f64> {
        match &self.root {
            Node::Num(x) => Some(*x),
            Node::Neg(a) => match a.as_ref() {
                Node::Num(x) => Some(-x),
                _ => None,
            },
            _ => None,
        }
    }

    pub fn eval(&self, bindings: &HashMap<String, f64>) -> Result<f64, EvalError> {
        let names: Vec<&str> = bindings.keys().map(String::as_str).collect();
        let bound = self.bind(&names)?;
        let values: Vec<f64> = names.iter().map(|n| bindings[*n]).collect();
        bound.eval(&values)
    }

    /// Resolves variables to positions in `names`, for repeated evaluation.
    pub fn bind(&self, names: &[&str]) -> Result<BoundExpr, EvalError> {
        fn go(n: &Node, names: &[&str]) -> Result<Slot, EvalError> {
            Ok(match n {
                Node::Num(x) => Slot::Num(*x),
                Node::Var(v) => match names.iter().position(|m| m == v) {
                    Some(i) => Slot::Var(i),
                    None if v == "pi" => Slot::Num(std::f64::consts::PI),
                    None => return Err(EvalError::Unbound(v.clone())),
                },
                Node::Neg(a) => Slot::Neg(Box::new(go(a, names)?)),
                Node::Bin(op, a, b) => Slot::Bin(*op, Box::new(go(a, names)?), Box::new(go(b, names)?)),
                Node::Call(f, args) => Slot::Call(*f, args.iter().map(|a| go(a, names)).collect::<Result<_, _>>()?),
            })
        }
        Ok(BoundExpr { root: go(&self.root, names)?, tree: self.root.clone() })
    }
}

impl std::str::FromStr for Expression {
    type Err = ParseError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Expression::parse(s)
    }
}

#[derive(Debug, Clone)]
enum Slot {
    Num(f64),
    Var(usize),
    Neg(Box<Slot>),
    Bin(BinOp, Box<Slot>, Box<Slot>),
    Call(Func, Vec<Slot>),
}

/// An expression whose variables have been resolved to slice positions.
#[derive(Debug, Clone)]
pub struct BoundExpr {
    root: Slot,
    tree: Node,
}

impl BoundExpr {
    pub fn eval(&self, values: &[f64]) -> Result<f64, EvalError> {
        eval_slot(&self.root, &self.tree, values)
    }
}

fn domain(what: &'static str, at: &Node) -> EvalError {
    EvalError::Domain { what, subexpr: at.to_string() }
}

// `tree` mirrors `slot` so errors can name the offending subexpression.
fn eval_slot(slot: &Slot, tree: &Node, values: &[f64]) -> Result<f64, EvalError> {
    match (slot, tree) {
        (Slot::Num(x), _) => Ok(*x),
        (Slot::Var(i), _) => Ok(values[*i]),
        (Slot::Neg(a), Node::Neg(ta)) => Ok(-eval_slot(a, ta, values)?),
        (Slot::Bin(op, a, b), Node::Bin(_, ta, tb)) => {
            let x = eval_slot(a, ta, values)?;
            let y = eval_slot(b, tb, values)?;
            match op {
                BinOp::Add => Ok(x + y),
                BinOp::Sub => Ok(x - y),
                BinOp::Mul => Ok(x * y),
                BinOp::Div => {
                    if y == 0.0 {
                        Err(domain("division by zero", tree))
                    } else {
                        Ok(x / y)
                    }
                }
                BinOp::Pow => power(x, y).ok_or_else(|| domain("non-integer power of a negative base", tree)),
            }
        }
        (Slot::Call(f, args), Node::Call(_, targs)) => {
            let x = eval_slot(&args[0], &targs[0], values)?;
            match f {
                Func::Sin => Ok(x.sin()),
                Func::Cos => Ok(x.cos()),
                Func::Tan => Ok(x.tan()),
                Func::Exp => Ok(x.exp()),
                Func::Log => {
                    if x <= 0.0 {
                        Err(domain("log of a nonpositive value", tree))
                    } else {
                        Ok(x.ln())
                    }
                }
                Func::Sqrt => {
                    if x < 0.0 {
                        Err(domain("sqrt of a negative value", tree))
                    } else {
                        Ok(x.sqrt())
                    }
                }
                Func::Cosh => Ok(x.cosh()),
                Func::Sinh => Ok(x.sinh()),
                Func::Abs => Ok(x.abs()),
                Func::Atan2 => {
                    let y = eval_slot(&args[1], &targs[1], values)?;
                    Ok(x.atan2(y))
                }
            }
        }
        _ => unreachable!("bound tree out of sync with syntax tree"),
    }
}

/// Integer exponents use `powi`; other exponents need a non-negative base.
pub(crate) fn power(base: f64, exp: f64) -> Option<f64> {
    if exp.fract() == 0.0 && exp.abs() <= i32::MAX as f64 {
        Some(base.powi(exp as i32))
    } else if base >= 0.0 {
        Some(base.powf(exp))
    } else {
        None
    }
}

// ---------------------------------------------------------------- lexing

#[derive(Debug, Clone, PartialEq)]
enum TokKind {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
}

impl TokKind {
    fn describe(&self) -> String {
        match self {
            TokKind::Num(x) => format!("number {x}"),
            TokKind::Ident(s) => format!("identifier `{s}`"),
            TokKind::Op(c) => format!("operator `{c}`"),
            TokKind::LParen => "`(`".into(),
            TokKind::RParen => "`)`".into(),
            TokKind::Comma => "`,`".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokKind,
    offset: usize,
}

fn lex(src: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let kind = if c.is_ascii_digit() || c == '.' {
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text = &src[start..i];
            let x: f64 = text.parse().map_err(|_| ParseError {
                offset: start,
                expected: vec!["number".into()],
                message: format!("malformed number `{text}`"),
            })?;
            TokKind::Num(x)
        } else if c.is_ascii_alphabetic() || c == '_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            TokKind::Ident(src[start..i].to_string())
        } else {
            i += 1;
            match c {
                '+' | '-' | '*' | '/' | '^' => TokKind::Op(c),
                '(' => TokKind::LParen,
                ')' => TokKind::RParen,
                ',' => TokKind::Comma,
                _ => {
                    return Err(ParseError {
                        offset: start,
                        expected: vec!["number".into(), "identifier".into(), "operator".into()],
                        message: format!("unexpected character `{c}`"),
                    })
                }
            }
        };
        out.push(Token { kind, offset: start });
    }
    Ok(out)
}

// --------------------------------------------------------------- parsing

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    src_len: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn offset(&self) -> usize {
        self.peek().map_or(self.src_len, |t| t.offset)
    }

    fn fail<T>(&self, expected: &[&str]) -> Result<T, ParseError> {
        let message = match self.peek() {
            Some(t) => format!("unexpected {}", t.kind.describe()),
            None => "unexpected end of input".into(),
        };
        Err(ParseError { offset: self.offset(), expected: expected.iter().map(|s| s.to_string()).collect(), message })
    }

    fn binary_op(&self) -> Option<(BinOp, u8)> {
        match self.peek()?.kind {
            TokKind::Op('+') => Some((BinOp::Add, 1)),
            TokKind::Op('-') => Some((BinOp::Sub, 1)),
            TokKind::Op('*') => Some((BinOp::Mul, 2)),
            TokKind::Op('/') => Some((BinOp::Div, 2)),
            _ => None,
        }
    }

    // precedence climbing over the left-associative levels
    fn expr(&mut self, min_prec: u8) -> Result<Node, ParseError> {
        let mut lhs = self.unary()?;
        while let Some((op, prec)) = self.binary_op() {
            if prec < min_prec {
                break;
            }
            self.pos += 1;
            let rhs = self.expr(prec + 1)?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node, ParseError> {
        if matches!(self.peek(), Some(Token { kind: TokKind::Op('-'), .. })) {
            self.pos += 1;
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ParseError> {
        let base = self.primary()?;
        if matches!(self.peek(), Some(Token { kind: TokKind::Op('^'), .. })) {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Node::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Node, ParseError> {
        let Some(tok) = self.peek().cloned() else {
            return self.fail(&["number", "identifier", "`(`", "`-`"]);
        };
        match tok.kind {
            TokKind::Num(x) => {
                self.pos += 1;
                Ok(Node::Num(x))
            }
            TokKind::LParen => {
                self.pos += 1;
                let inner = self.expr(0)?;
                self.expect_rparen()?;
                Ok(inner)
            }
            TokKind::Ident(name) => {
                self.pos += 1;
                if !matches!(self.peek(), Some(Token { kind: TokKind::LParen, .. })) {
                    return Ok(Node::Var(name));
                }
                let Some(func) = Func::from_name(&name) else {
                    return Err(ParseError {
                        offset: tok.offset,
                        expected: Func::ALL.iter().map(|f| f.name().to_string()).collect(),
                        message: format!("unknown function `{name}`"),
                    });
                };
                self.pos += 1;
                let mut args = vec![self.expr(0)?];
                while matches!(self.peek(), Some(Token { kind: TokKind::Comma, .. })) {
                    self.pos += 1;
                    args.push(self.expr(0)?);
                }
                self.expect_rparen()?;
                if args.len() != func.arity() {
                    return Err(ParseError {
                        offset: tok.offset,
                        expected: vec![format!("{} argument(s)", func.arity())],
                        message: format!("`{name}` called with {} argument(s)", args.len()),
                    });
                }
                Ok(Node::Call(func, args))
            }
            _ => self.fail(&["number", "identifier", "`(`", "`-`"]),
        }
    }

    fn expect_rparen(&mut self) -> Result<(), ParseError> {
        match self.peek() {
            Some(Token { kind: TokKind::RParen, .. }) => {
                self.pos += 1;
                Ok(())
            }
            _ => self.fail(&["`)`", "operator"]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn eval_with(src: &str, vars: &[(&str, f64)]) -> Result<f64, EvalError> {
        let map = vars.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        Expression::parse(src).unwrap().eval(&map)
    }

    #[test]
    fn evaluates_examples() {
        assert_eq!(eval_with("cos(s)", &[("s", 0.0)]).unwrap(), 1.0);
        assert_eq!(eval_with("x0^2 + 3*x1", &[("x0", 2.0), ("x1", 1.0)]).unwrap(), 7.0);
        assert_eq!(eval_with("sqrt(2)", &[]).unwrap(), 2f64.sqrt());
        assert_eq!(eval_with("exp(0)*5", &[]).unwrap(), 5.0);
    }

    #[test]
    fn precedence() {
        assert_eq!(eval_with("-2^2", &[]).unwrap(), -4.0);
        assert_eq!(eval_with("2^-1", &[]).unwrap(), 0.5);
        assert_eq!(eval_with("2^3^2", &[]).unwrap(), 512.0);
        assert_eq!(eval_with("1 - 2 - 3", &[]).unwrap(), -4.0);
        assert_eq!(eval_with("8 / 4 / 2", &[]).unwrap(), 1.0);
        assert_eq!(eval_with("2 * -3 + 1", &[]).unwrap(), -5.0);
        assert_eq!(eval_with("atan2(1, 1)", &[]).unwrap(), std::f64::consts::FRAC_PI_4);
        assert_eq!(eval_with("2*pi", &[]).unwrap(), std::f64::consts::TAU);
        assert_eq!(eval_with("1.5e-3*2", &[]).unwrap(), 3e-3);
    }

    #[test]
    fn parse_errors_carry_offsets() {
        let e = Expression::parse("cos(").unwrap_err();
        assert_eq!(e.offset, 4);
        assert!(!e.expected.is_empty());
        assert_eq!(Expression::parse("").unwrap_err().message, "empty input");
        assert_eq!(Expression::parse("(1 + 2").unwrap_err().offset, 6);
        assert_eq!(Expression::parse("1 + 2)").unwrap_err().offset, 5);
        assert_eq!(Expression::parse("foo(1)").unwrap_err().offset, 0);
        assert!(Expression::parse("atan2(1)").is_err());
        assert_eq!(Expression::parse("1 $ 2").unwrap_err().offset, 2);
    }

    #[test]
    fn unknown_identifier_is_an_eval_error() {
        assert!(Expression::parse("y + 1").is_ok());
        assert_eq!(eval_with("y + 1", &[]), Err(EvalError::Unbound("y".into())));
    }

    #[test]
    fn domain_errors_name_the_subexpression() {
        match eval_with("1/x", &[("x", 0.0)]) {
            Err(EvalError::Domain { subexpr, .. }) => assert_eq!(subexpr, "(1.0 / x)"),
            other => panic!("expected domain error, got {other:?}"),
        }
        assert!(matches!(eval_with("log(0)", &[]), Err(EvalError::Domain { .. })));
        assert!(matches!(eval_with("2 + sqrt(-1)", &[]), Err(EvalError::Domain { .. })));
        assert!(matches!(eval_with("(-2)^0.5", &[]), Err(EvalError::Domain { .. })));
    }

    // Reference evaluator: plain recursion on the tree with a name lookup.
    fn reference(n: &Node, env: &HashMap<String, f64>) -> Option<f64> {
        Some(match n {
            Node::Num(x) => *x,
            Node::Var(v) => *env.get(v)?,
            Node::Neg(a) => -reference(a, env)?,
            Node::Bin(op, a, b) => {
                let (x, y) = (reference(a, env)?, reference(b, env)?);
                match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div if y == 0.0 => return None,
                    BinOp::Div => x / y,
                    BinOp::Pow => power(x, y)?,
                }
            }
            Node::Call(f, args) => {
                let x = reference(&args[0], env)?;
                match f {
                    Func::Sin => x.sin(),
                    Func::Cos => x.cos(),
                    Func::Tan => x.tan(),
                    Func::Exp => x.exp(),
                    Func::Log if x <= 0.0 => return None,
                    Func::Log => x.ln(),
                    Func::Sqrt if x < 0.0 => return None,
                    Func::Sqrt => x.sqrt(),
                    Func::Cosh => x.cosh(),
                    Func::Sinh => x.sinh(),
                    Func::Abs => x.abs(),
                    Func::Atan2 => x.atan2(reference(&args[1], env)?),
                }
            }
        })
    }

    fn arb_node() -> impl Strategy<Value = Node> {
        let leaf = prop_oneof![
            (0.0f64..100.0).prop_map(Node::Num),
            (0u32..1000).prop_map(|k| Node::Num(k as f64)),
            prop_oneof![Just("a"), Just("b"), Just("c")].prop_map(|s| Node::Var(s.into())),
        ];
        leaf.prop_recursive(6, 64, 2, |inner| {
            prop_oneof![
                inner.clone().prop_map(|a| Node::Neg(Box::new(a))),
                (prop_oneof![Just(BinOp::Add), Just(BinOp::Sub), Just(BinOp::Mul), Just(BinOp::Div)], inner.clone(), inner.clone())
                    .prop_map(|(op, a, b)| Node::Bin(op, Box::new(a), Box::new(b))),
                (inner.clone(), 0u32..4).prop_map(|(a, k)| Node::Bin(BinOp::Pow, Box::new(a), Box::new(Node::Num(k as f64)))),
                (0usize..Func::ALL.len(), inner.clone(), inner).prop_map(|(i, a, b)| {
                    let f = Func::ALL[i];
                    let args = if f.arity() == 2 { vec![a, b] } else { vec![a] };
                    Node::Call(f, args)
                }),
            ]
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn print_parse_is_identity(node in arb_node()) {
            let printed = node.to_string();
            let reparsed = Expression::parse(&printed).unwrap();
            prop_assert_eq!(reparsed.node(), &node);
        }

        #[test]
        fn eval_matches_reference(node in arb_node(), a in -3.0f64..3.0, b in -3.0f64..3.0, c in 0.1f64..3.0) {
            let env: HashMap<String, f64> =
                [("a".to_string(), a), ("b".to_string(), b), ("c".to_string(), c)].into();
            let expr = Expression::from_node(node.clone());
            match (expr.eval(&env), reference(&node, &env)) {
                (Ok(x), Some(y)) => prop_assert!(x.to_bits() == y.to_bits() || (x.is_nan() && y.is_nan())),
                (Err(_), None) => {}
                (x, y) => prop_assert!(false, "mismatch {:?} vs {:?}", x, y),
            }
        }
    }
}
