//! Rate expressions: a small arithmetic language over parameter and
//! population names.
//!
//! The grammar is deliberately minimal (constants, names, `+ - * /`, unary
//! minus and parentheses). Every rate term of the bundled models fits in it.
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | primary
//! primary := NUMBER | IDENT | '(' expr ')'
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
        }
    }
}

/// Expression tree of a rate term.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(String),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at position {position}: {message} (found {found})")]
    Syntax {
        position: usize,
        found: String,
        message: String,
    },
    #[error("unbound variable `{0}`")]
    Unbound(String),
    #[error("division by zero in `{0}`")]
    DivisionByZero(String),
}

impl Expr {
    pub fn var(name: &str) -> Expr {
        Expr::Var(name.to_string())
    }

    pub fn binary(op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Binary(op, Box::new(lhs), Box::new(rhs))
    }

    pub fn mul(lhs: Expr, rhs: Expr) -> Expr {
        Expr::binary(BinOp::Mul, lhs, rhs)
    }

    pub fn div(lhs: Expr, rhs: Expr) -> Expr {
        Expr::binary(BinOp::Div, lhs, rhs)
    }

    /// All variable names referenced by the expression, sorted.
    pub fn variables(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Const(_) => {}
            Expr::Var(name) => {
                out.insert(name.clone());
            }
            Expr::Neg(inner) => inner.collect_vars(out),
            Expr::Binary(_, lhs, rhs) => {
                lhs.collect_vars(out);
                rhs.collect_vars(out);
            }
        }
    }

    /// Number of occurrences of `name` in the tree.
    pub fn occurrences(&self, name: &str) -> usize {
        match self {
            Expr::Const(_) => 0,
            Expr::Var(v) => usize::from(v == name),
            Expr::Neg(inner) => inner.occurrences(name),
            Expr::Binary(_, lhs, rhs) => lhs.occurrences(name) + rhs.occurrences(name),
        }
    }

    pub fn references(&self, name: &str) -> bool {
        self.occurrences(name) > 0
    }

    /// Evaluates against any name lookup.
    pub fn eval_with<F>(&self, lookup: &F) -> Result<f64, ExprError>
    where
        F: Fn(&str) -> Option<f64>,
    {
        match self {
            Expr::Const(c) => Ok(*c),
            Expr::Var(name) => lookup(name).ok_or_else(|| ExprError::Unbound(name.clone())),
            Expr::Neg(inner) => Ok(-inner.eval_with(lookup)?),
            Expr::Binary(op, lhs, rhs) => {
                let l = lhs.eval_with(lookup)?;
                let r = rhs.eval_with(lookup)?;
                apply(*op, l, r).ok_or_else(|| ExprError::DivisionByZero(self.to_string()))
            }
        }
    }

    /// Replaces variable names by slot indices for repeated evaluation.
    pub fn bind<F>(&self, resolve: &F) -> Result<BoundExpr, ExprError>
    where
        F: Fn(&str) -> Option<usize>,
    {
        let mut nodes = Vec::new();
        self.bind_into(resolve, &mut nodes)?;
        Ok(BoundExpr {
            nodes,
            source: self.to_string(),
        })
    }

    fn bind_into<F>(&self, resolve: &F, nodes: &mut Vec<Node>) -> Result<(), ExprError>
    where
        F: Fn(&str) -> Option<usize>,
    {
        match self {
            Expr::Const(c) => nodes.push(Node::Const(*c)),
            Expr::Var(name) => {
                let slot = resolve(name).ok_or_else(|| ExprError::Unbound(name.clone()))?;
                nodes.push(Node::Slot(slot));
            }
            Expr::Neg(inner) => {
                inner.bind_into(resolve, nodes)?;
                nodes.push(Node::Neg);
            }
            Expr::Binary(op, lhs, rhs) => {
                lhs.bind_into(resolve, nodes)?;
                rhs.bind_into(resolve, nodes)?;
                nodes.push(Node::Op(*op));
            }
        }
        Ok(())
    }
}

fn apply(op: BinOp, l: f64, r: f64) -> Option<f64> {
    match op {
        BinOp::Add => Some(l + r),
        BinOp::Sub => Some(l - r),
        BinOp::Mul => Some(l * r),
        BinOp::Div if r == 0.0 => None,
        BinOp::Div => Some(l / r),
    }
}

/// Parses a rate expression.
pub fn parse_expression(text: &str) -> Result<Expr, ExprError> {
    let tokens = tokenize(text)?;
    let mut parser = Parser { tokens, pos: 0 };
    let expr = parser.expr()?;
    match parser.peek() {
        Tok { kind: TokKind::End, .. } => Ok(expr),
        tok => Err(tok.error("unexpected token after expression")),
    }
}

/// Evaluates `expr` with every variable looked up in `env`.
pub fn eval_expression(expr: &Expr, env: &HashMap<String, f64>) -> Result<f64, ExprError> {
    expr.eval_with(&|name| env.get(name).copied())
}

/// Same as [`eval_expression`] for ordered maps.
pub fn eval_expression_btree(expr: &Expr, env: &BTreeMap<String, f64>) -> Result<f64, ExprError> {
    expr.eval_with(&|name| env.get(name).copied())
}

impl fmt::Display for Expr {
    /// Canonical form: no whitespace, parentheses only where the tree needs them.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) => {
                write!(f, "(-{})", -c)
            }
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Var(name) => f.write_str(name),
            Expr::Neg(inner) => match inner.as_ref() {
                Expr::Binary(..) => write!(f, "-({inner})"),
                _ => write!(f, "-{inner}"),
            },
            Expr::Binary(op, lhs, rhs) => {
                let prec = op.precedence();
                let left_parens = matches!(lhs.as_ref(), Expr::Binary(l, ..) if l.precedence() < prec);
                // Left-associative: an equal-precedence right operand must keep its parentheses.
                let right_parens = match rhs.as_ref() {
                    Expr::Binary(r, ..) => r.precedence() <= prec,
                    Expr::Neg(_) => true,
                    Expr::Const(c) => *c < 0.0,
                    Expr::Var(_) => false,
                };
                if left_parens {
                    write!(f, "({lhs})")?;
                } else {
                    write!(f, "{lhs}")?;
                }
                write!(f, "{}", op.symbol())?;
                if right_parens {
                    write!(f, "({rhs})")
                } else {
                    write!(f, "{rhs}")
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Node {
    Const(f64),
    Slot(usize),
    Neg,
    Op(BinOp),
}

/// An expression whose variables were resolved to slots of a value array.
///
/// Stored in postfix order; evaluation is a single pass with a small stack.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundExpr {
    nodes: Vec<Node>,
    source: String,
}

impl BoundExpr {
    pub fn eval(&self, values: &[f64]) -> Result<f64, ExprError> {
        let mut stack: Vec<f64> = Vec::with_capacity(8);
        for node in &self.nodes {
            match *node {
                Node::Const(c) => stack.push(c),
                Node::Slot(i) => stack.push(values[i]),
                Node::Neg => {
                    let v = stack.pop().expect("postfix underflow");
                    stack.push(-v);
                }
                Node::Op(op) => {
                    let r = stack.pop().expect("postfix underflow");
                    let l = stack.pop().expect("postfix underflow");
                    let v = apply(op, l, r)
                        .ok_or_else(|| ExprError::DivisionByZero(self.source.clone()))?;
                    stack.push(v);
                }
            }
        }
        Ok(stack.pop().expect("empty expression"))
    }

    pub fn source(&self) -> &str {
        &self.source
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TokKind {
    Number(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    End,
}

#[derive(Debug, Clone)]
struct Tok {
    kind: TokKind,
    position: usize,
    text: String,
}

impl Tok {
    fn error(&self, message: &str) -> ExprError {
        ExprError::Syntax {
            position: self.position,
            found: if self.kind == TokKind::End {
                "end of input".to_string()
            } else {
                format!("`{}`", self.text)
            },
            message: message.to_string(),
        }
    }
}

fn tokenize(text: &str) -> Result<Vec<Tok>, ExprError> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let kind = if c.is_ascii_digit() || c == '.' {
            while i < chars.len() && (chars[i].1.is_ascii_digit() || chars[i].1 == '.') {
                i += 1;
            }
            // exponent: e, E followed by optional sign and digits
            if i < chars.len() && matches!(chars[i].1, 'e' | 'E') {
                let mut j = i + 1;
                if j < chars.len() && matches!(chars[j].1, '+' | '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].1.is_ascii_digit() {
                    while j < chars.len() && chars[j].1.is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let lexeme: String = chars[start..i].iter().map(|&(_, c)| c).collect();
            match lexeme.parse::<f64>() {
                Ok(v) if v.is_finite() => TokKind::Number(v),
                _ => {
                    return Err(ExprError::Syntax {
                        position: pos,
                        found: format!("`{lexeme}`"),
                        message: "invalid number".to_string(),
                    })
                }
            }
        } else if c.is_alphabetic() || c == '_' {
            while i < chars.len() && (chars[i].1.is_alphanumeric() || chars[i].1 == '_') {
                i += 1;
            }
            TokKind::Ident(chars[start..i].iter().map(|&(_, c)| c).collect())
        } else {
            i += 1;
            match c {
                '+' | '-' | '*' | '/' => TokKind::Op(c),
                '(' => TokKind::LParen,
                ')' => TokKind::RParen,
                _ => {
                    return Err(ExprError::Syntax {
                        position: pos,
                        found: format!("`{c}`"),
                        message: "unexpected character".to_string(),
                    })
                }
            }
        };
        let end = chars.get(i).map_or(text.len(), |&(p, _)| p);
        tokens.push(Tok {
            kind,
            position: pos,
            text: text[pos..end].to_string(),
        });
    }
    tokens.push(Tok {
        kind: TokKind::End,
        position: text.len(),
        text: String::new(),
    });
    Ok(tokens)
}

struct Parser {
    tokens: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos]
    }

    fn advance(&mut self) -> Tok {
        let tok = self.tokens[self.pos].clone();
        if tok.kind != TokKind::End {
            self.pos += 1;
        }
        tok
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        while let TokKind::Op(c @ ('+' | '-')) = self.peek().kind {
            self.advance();
            let rhs = self.term()?;
            let op = if c == '+' { BinOp::Add } else { BinOp::Sub };
            lhs = Expr::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        while let TokKind::Op(c @ ('*' | '/')) = self.peek().kind {
            self.advance();
            let rhs = self.unary()?;
            let op = if c == '*' { BinOp::Mul } else { BinOp::Div };
            lhs = Expr::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if self.peek().kind == TokKind::Op('-') {
            self.advance();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, ExprError> {
        let tok = self.advance();
        match tok.kind {
            TokKind::Number(v) => Ok(Expr::Const(v)),
            TokKind::Ident(name) => Ok(Expr::Var(name)),
            TokKind::LParen => {
                let inner = self.expr()?;
                let close = self.advance();
                if close.kind == TokKind::RParen {
                    Ok(inner)
                } else {
                    Err(close.error("expected `)`"))
                }
            }
            _ => Err(tok.error("expected a number, a name or `(`")),
        }
    }
}
