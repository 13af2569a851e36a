//! Propensity expression language.
//!
//! Arithmetic over species counts, parameter names, the voxel-volume
//! symbol `vol`, numeric literals, `+ - * / ^` and the functions
//! `min max exp pow`. Precedence is `^` above unary minus above `* /`
//! above `+ -`; binary operators of equal precedence associate left
//! (so `a^b^c` is `(a^b)^c`). The full grammar ships as EBNF in
//! `docs/model-format.md`.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ExprError {
    #[error("unknown token {found:?} at position {pos}")]
    UnknownToken { pos: usize, found: char },
    #[error("unbalanced parenthesis at position {pos}")]
    UnbalancedParen { pos: usize },
    #[error("unexpected {found} at position {pos}, expected {expected}")]
    Unexpected {
        pos: usize,
        found: String,
        expected: String,
    },
    #[error("function {name} takes {want} argument(s), got {got} (position {pos})")]
    WrongArity {
        pos: usize,
        name: String,
        want: usize,
        got: usize,
    },
    #[error("identifier {name:?} does not resolve to a species, parameter, or `vol`")]
    Unresolved { name: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
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

    /// (left, right) binding powers; right = left + 1 gives left
    /// association at every level.
    fn binding(self) -> (u8, u8) {
        match self {
            BinOp::Add | BinOp::Sub => (10, 11),
            BinOp::Mul | BinOp::Div => (20, 21),
            BinOp::Pow => (30, 31),
        }
    }
}

const NEG_BINDING: u8 = 25; // between `* /` and `^`

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Min,
    Max,
    Exp,
    Pow,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Min => "min",
            Func::Max => "max",
            Func::Exp => "exp",
            Func::Pow => "pow",
        }
    }

    fn arity(self) -> usize {
        match self {
            Func::Exp => 1,
            _ => 2,
        }
    }

    fn lookup(name: &str) -> Option<Func> {
        match name {
            "min" => Some(Func::Min),
            "max" => Some(Func::Max),
            "exp" => Some(Func::Exp),
            "pow" => Some(Func::Pow),
            _ => None,
        }
    }
}

/// Parsed expression tree, identifiers unresolved.
#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(f64),
    Ident(String),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

/// Parse an expression; errors carry byte positions into the source.
pub fn parse_propensity(source: &str) -> Result<Expr, ExprError> {
    let tokens = tokenize(source)?;
    let mut p = Parser { tokens, at: 0 };
    let e = p.expr(0)?;
    match p.peek() {
        Token::End => Ok(e),
        Token::RParen => Err(ExprError::UnbalancedParen { pos: p.pos() }),
        t => Err(ExprError::Unexpected {
            pos: p.pos(),
            found: t.describe(),
            expected: "end of expression".into(),
        }),
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Op(BinOp),
    LParen,
    RParen,
    Comma,
    End,
}

impl Token {
    fn describe(&self) -> String {
        match self {
            Token::Num(v) => format!("number {v}"),
            Token::Ident(s) => format!("identifier {s:?}"),
            Token::Op(o) => format!("operator {:?}", o.symbol()),
            Token::LParen => "'('".into(),
            Token::RParen => "')'".into(),
            Token::Comma => "','".into(),
            Token::End => "end of expression".into(),
        }
    }
}

fn tokenize(src: &str) -> Result<Vec<(usize, Token)>, ExprError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '(' => {
                out.push((i, Token::LParen));
                i += 1;
            }
            ')' => {
                out.push((i, Token::RParen));
                i += 1;
            }
            ',' => {
                out.push((i, Token::Comma));
                i += 1;
            }
            '+' => {
                out.push((i, Token::Op(BinOp::Add)));
                i += 1;
            }
            '-' => {
                out.push((i, Token::Op(BinOp::Sub)));
                i += 1;
            }
            '*' => {
                out.push((i, Token::Op(BinOp::Mul)));
                i += 1;
            }
            '/' => {
                out.push((i, Token::Op(BinOp::Div)));
                i += 1;
            }
            '^' => {
                out.push((i, Token::Op(BinOp::Pow)));
                i += 1;
            }
            '0'..='9' | '.' => {
                let start = i;
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
                let v: f64 = text.parse().map_err(|_| ExprError::UnknownToken {
                    pos: start,
                    found: c,
                })?;
                out.push((start, Token::Num(v)));
            }
            'a'..='z' | 'A'..='Z' | '_' => {
                let start = i;
                while i < bytes.len()
                    && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                out.push((start, Token::Ident(src[start..i].to_string())));
            }
            other => return Err(ExprError::UnknownToken { pos: i, found: other }),
        }
    }
    out.push((src.len(), Token::End));
    Ok(out)
}

struct Parser {
    tokens: Vec<(usize, Token)>,
    at: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.at].1
    }

    fn pos(&self) -> usize {
        self.tokens[self.at].0
    }

    fn bump(&mut self) -> (usize, Token) {
        let t = self.tokens[self.at].clone();
        if self.at + 1 < self.tokens.len() {
            self.at += 1;
        }
        t
    }

    fn expr(&mut self, min_bp: u8) -> Result<Expr, ExprError> {
        let mut lhs = self.operand()?;
        loop {
            let op = match self.peek() {
                Token::Op(op) => *op,
                _ => break,
            };
            let (l_bp, r_bp) = op.binding();
            if l_bp < min_bp {
                break;
            }
            self.bump();
            let rhs = self.expr(r_bp)?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn operand(&mut self) -> Result<Expr, ExprError> {
        let (pos, tok) = self.bump();
        match tok {
            Token::Num(v) => Ok(Expr::Num(v)),
            Token::Op(BinOp::Sub) => {
                let inner = self.expr(NEG_BINDING)?;
                Ok(Expr::Neg(Box::new(inner)))
            }
            Token::LParen => {
                let inner = self.expr(0)?;
                match self.bump() {
                    (_, Token::RParen) => Ok(inner),
                    (p, _) => Err(ExprError::UnbalancedParen { pos: p }),
                }
            }
            Token::Ident(name) => {
                if *self.peek() != Token::LParen {
                    return Ok(Expr::Ident(name));
                }
                let func = Func::lookup(&name).ok_or_else(|| ExprError::Unexpected {
                    pos,
                    found: format!("unknown function {name:?}"),
                    expected: "one of min, max, exp, pow".into(),
                })?;
                self.bump(); // '('
                let mut args = Vec::new();
                if *self.peek() == Token::RParen {
                    self.bump();
                } else {
                    loop {
                        args.push(self.expr(0)?);
                        match self.bump() {
                            (_, Token::Comma) => continue,
                            (_, Token::RParen) => break,
                            (p, Token::End) => {
                                return Err(ExprError::UnbalancedParen { pos: p })
                            }
                            (p, t) => {
                                return Err(ExprError::Unexpected {
                                    pos: p,
                                    found: t.describe(),
                                    expected: "',' or ')'".into(),
                                })
                            }
                        }
                    }
                }
                if args.len() != func.arity() {
                    return Err(ExprError::WrongArity {
                        pos,
                        name: func.name().into(),
                        want: func.arity(),
                        got: args.len(),
                    });
                }
                Ok(Expr::Call(func, args))
            }
            Token::End => Err(ExprError::Unexpected {
                pos,
                found: "end of expression".into(),
                expected: "an operand".into(),
            }),
            t => Err(ExprError::Unexpected {
                pos,
                found: t.describe(),
                expected: "an operand".into(),
            }),
        }
    }
}

impl Expr {
    /// Precedence of this node's top-level construct, for printing.
    fn precedence(&self) -> u8 {
        match self {
            Expr::Bin(op, _, _) => op.binding().0,
            Expr::Neg(_) => NEG_BINDING,
            _ => u8::MAX,
        }
    }

    /// Identifiers referenced anywhere in the tree.
    pub fn identifiers(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_idents(&mut out);
        out
    }

    fn collect_idents<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Expr::Num(_) => {}
            Expr::Ident(n) => out.push(n),
            Expr::Neg(e) => e.collect_idents(out),
            Expr::Bin(_, a, b) => {
                a.collect_idents(out);
                b.collect_idents(out);
            }
            Expr::Call(_, args) => {
                for a in args {
                    a.collect_idents(out);
                }
            }
        }
    }

    /// Resolve identifiers through `resolve`; errors on the first name
    /// the resolver rejects.
    pub fn bind(&self, resolve: &impl Fn(&str) -> Option<Slot>) -> Result<BoundExpr, ExprError> {
        Ok(match self {
            Expr::Num(v) => BoundExpr::Num(*v),
            Expr::Ident(name) => BoundExpr::Slot(
                resolve(name).ok_or_else(|| ExprError::Unresolved { name: name.clone() })?,
            ),
            Expr::Neg(e) => BoundExpr::Neg(Box::new(e.bind(resolve)?)),
            Expr::Bin(op, a, b) => {
                BoundExpr::Bin(*op, Box::new(a.bind(resolve)?), Box::new(b.bind(resolve)?))
            }
            Expr::Call(f, args) => BoundExpr::Call(
                *f,
                args.iter().map(|a| a.bind(resolve)).collect::<Result<_, _>>()?,
            ),
        })
    }
}

/// Pretty-printing satisfies `parse(print(e)) == e` on the tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => {
                if *v == f64::INFINITY {
                    write!(f, "1e999")
                } else {
                    write!(f, "{v}")
                }
            }
            Expr::Ident(n) => write!(f, "{n}"),
            Expr::Neg(e) => {
                // operand must bind at least as tight as unary minus
                if e.precedence() < NEG_BINDING {
                    write!(f, "-({e})")
                } else {
                    write!(f, "-{e}")
                }
            }
            Expr::Bin(op, a, b) => {
                let (l_bp, r_bp) = op.binding();
                if a.precedence() < l_bp {
                    write!(f, "({a})")?;
                } else {
                    write!(f, "{a}")?;
                }
                write!(f, " {} ", op.symbol())?;
                if b.precedence() < r_bp {
                    write!(f, "({b})")
                } else {
                    write!(f, "{b}")
                }
            }
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
        }
    }
}

/// What a resolved identifier refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Slot {
    Species(usize),
    Parameter(usize),
    Volume,
}

/// Expression with identifiers resolved to slots; ready to evaluate.
#[derive(Clone, Debug, PartialEq)]
pub enum BoundExpr {
    Num(f64),
    Slot(Slot),
    Neg(Box<BoundExpr>),
    Bin(BinOp, Box<BoundExpr>, Box<BoundExpr>),
    Call(Func, Vec<BoundExpr>),
}

impl BoundExpr {
    /// Evaluate with species counts looked up by index, parameter values
    /// by index, and the voxel volume.
    pub fn eval(&self, counts: &dyn Fn(usize) -> f64, params: &[f64], vol: f64) -> f64 {
        match self {
            BoundExpr::Num(v) => *v,
            BoundExpr::Slot(Slot::Species(i)) => counts(*i),
            BoundExpr::Slot(Slot::Parameter(i)) => params[*i],
            BoundExpr::Slot(Slot::Volume) => vol,
            BoundExpr::Neg(e) => -e.eval(counts, params, vol),
            BoundExpr::Bin(op, a, b) => {
                let x = a.eval(counts, params, vol);
                let y = b.eval(counts, params, vol);
                match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div => x / y,
                    BinOp::Pow => x.powf(y),
                }
            }
            BoundExpr::Call(f, args) => {
                let x = args[0].eval(counts, params, vol);
                match f {
                    Func::Exp => x.exp(),
                    Func::Min => x.min(args[1].eval(counts, params, vol)),
                    Func::Max => x.max(args[1].eval(counts, params, vol)),
                    Func::Pow => x.powf(args[1].eval(counts, params, vol)),
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval_with(src: &str, vars: &[(&str, f64)], vol: f64) -> f64 {
        let expr = parse_propensity(src).unwrap();
        let names: Vec<String> = vars.iter().map(|(n, _)| n.to_string()).collect();
        let bound = expr
            .bind(&|name| {
                if name == "vol" {
                    Some(Slot::Volume)
                } else {
                    names.iter().position(|n| n == name).map(Slot::Parameter)
                }
            })
            .unwrap();
        let vals: Vec<f64> = vars.iter().map(|&(_, v)| v).collect();
        bound.eval(&|_| 0.0, &vals, vol)
    }

    #[test]
    fn simple_products() {
        assert_eq!(eval_with("k1*A", &[("k1", 2.0), ("A", 3.0)], 1.0), 6.0);
        assert_eq!(
            eval_with(
                "kfb*Cm*Cc/vol",
                &[("kfb", 1.0), ("Cm", 2.0), ("Cc", 5.0)],
                0.25
            ),
            40.0
        );
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(eval_with("2+3*4", &[], 1.0), 14.0);
        assert_eq!(eval_with("2*3+4", &[], 1.0), 10.0);
        assert_eq!(eval_with("8-3-2", &[], 1.0), 3.0); // left assoc
        assert_eq!(eval_with("16/4/2", &[], 1.0), 2.0);
        assert_eq!(eval_with("2^3^2", &[], 1.0), 64.0); // (2^3)^2, left assoc
        assert_eq!(eval_with("-2^2", &[], 1.0), -4.0); // ^ above unary minus
        assert_eq!(eval_with("2^-1", &[], 1.0), 0.5);
        assert_eq!(eval_with("(2+3)*4", &[], 1.0), 20.0);
    }

    #[test]
    fn functions() {
        assert_eq!(eval_with("min(3, 5)", &[], 1.0), 3.0);
        assert_eq!(eval_with("max(3, 5)", &[], 1.0), 5.0);
        assert_eq!(eval_with("pow(2, 10)", &[], 1.0), 1024.0);
        assert!((eval_with("exp(1)", &[], 1.0) - std::f64::consts::E).abs() < 1e-15);
        assert!(matches!(
            parse_propensity("min(1)"),
            Err(ExprError::WrongArity { .. })
        ));
        assert!(matches!(
            parse_propensity("foo(1)"),
            Err(ExprError::Unexpected { .. })
        ));
    }

    #[test]
    fn unbalanced_parenthesis_cites_position() {
        match parse_propensity("k1*(A") {
            Err(ExprError::UnbalancedParen { pos }) => assert_eq!(pos, 5),
            other => panic!("expected unbalanced paren, got {other:?}"),
        }
        assert!(matches!(
            parse_propensity("k1*A)"),
            Err(ExprError::UnbalancedParen { .. })
        ));
    }

    #[test]
    fn unknown_token_cites_position() {
        match parse_propensity("a $ b") {
            Err(ExprError::UnknownToken { pos, found }) => {
                assert_eq!(pos, 2);
                assert_eq!(found, '$');
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bind_rejects_unknown_identifier() {
        let e = parse_propensity("k1*mystery").unwrap();
        let err = e
            .bind(&|n| (n == "k1").then_some(Slot::Parameter(0)))
            .unwrap_err();
        assert_eq!(
            err,
            ExprError::Unresolved {
                name: "mystery".into()
            }
        );
    }

    #[test]
    fn pretty_print_reparses_to_same_tree() {
        for src in [
            "k1*A",
            "kfb*Cm*Cc/vol",
            "2+3*4",
            "8-3-2",
            "2^3^2",
            "-2^2",
            "-(a*b)",
            "a-(b+c)",
            "a/(b*c)",
            "min(a, max(b, c))*exp(-k*t)",
            "pow(x, 2) - -y",
        ] {
            let tree = parse_propensity(src).unwrap();
            let printed = tree.to_string();
            let reparsed = parse_propensity(&printed)
                .unwrap_or_else(|e| panic!("reparse of {printed:?}: {e}"));
            assert_eq!(reparsed, tree, "{src} -> {printed}");
        }
    }

    #[test]
    fn scientific_notation() {
        assert_eq!(eval_with("1.5e3", &[], 1.0), 1500.0);
        assert_eq!(eval_with("2E-2", &[], 1.0), 0.02);
    }
}
