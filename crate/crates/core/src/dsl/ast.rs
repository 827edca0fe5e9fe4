use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ids::KindId;

/// Source location of a node: byte offset plus 1-based line and column.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Span {
    pub offset: usize,
    pub line: u32,
    pub column: u32,
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

/// A property a program can sense or affect.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PropRef {
    /// `env.name`: an environment property. `env.alloc_self` is the
    /// executing instance's entry in the allocation table.
    Env(String),
    /// `self.name`: one of the executing structure's own causal properties.
    Own(String),
    /// `struct[k].name`: causal property `name` of kind `k`.
    Kind(KindId, String),
}

impl PropRef {
    pub fn env(name: impl Into<String>) -> Self {
        PropRef::Env(name.into())
    }

    pub fn kind(kind: u32, name: impl Into<String>) -> Self {
        PropRef::Kind(KindId(kind), name.into())
    }

    pub fn name(&self) -> &str {
        match self {
            PropRef::Env(n) | PropRef::Own(n) | PropRef::Kind(_, n) => n,
        }
    }
}

impl fmt::Display for PropRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PropRef::Env(n) => write!(f, "env.{n}"),
            PropRef::Own(n) => write!(f, "self.{n}"),
            PropRef::Kind(k, n) => write!(f, "struct[{}].{n}", k.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl ArithOp {
    pub fn symbol(self) -> &'static str {
        match self {
            ArithOp::Add => "+",
            ArithOp::Sub => "-",
            ArithOp::Mul => "*",
            ArithOp::Div => "/",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
        }
    }

    pub fn apply(self, a: i64, b: i64) -> bool {
        match self {
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Literal(i64),
    ReadLocal(String),
    WriteLocal(String, Box<Node>),
    Sense(PropRef),
    Affect(PropRef, Box<Node>),
    Arith(ArithOp, Box<Node>, Box<Node>),
    Compare(CmpOp, Box<Node>, Box<Node>),
    If(Box<Node>, Box<Node>, Box<Node>),
    /// `clamp(value, lo, hi)`
    Clamp(Box<Node>, Box<Node>, Box<Node>),
    Seq(Vec<Node>),
}

/// An AST node. Equality ignores spans so that reparsed printouts compare equal.
#[derive(Debug, Clone)]
pub struct Node {
    pub expr: Expr,
    pub span: Span,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.expr == other.expr
    }
}

impl Eq for Node {}

/// Node kinds as seen by the cost table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Literal,
    ReadLocal,
    WriteLocal,
    Sense,
    Affect,
    Add,
    Sub,
    Mul,
    Div,
    Compare,
    If,
    Clamp,
    Seq,
}

impl OpKind {
    pub const ALL: [OpKind; 13] = [
        OpKind::Literal,
        OpKind::ReadLocal,
        OpKind::WriteLocal,
        OpKind::Sense,
        OpKind::Affect,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Div,
        OpKind::Compare,
        OpKind::If,
        OpKind::Clamp,
        OpKind::Seq,
    ];
}

impl Node {
    pub fn new(expr: Expr) -> Self {
        Node {
            expr,
            span: Span::default(),
        }
    }

    pub fn op_kind(&self) -> OpKind {
        match &self.expr {
            Expr::Literal(_) => OpKind::Literal,
            Expr::ReadLocal(_) => OpKind::ReadLocal,
            Expr::WriteLocal(..) => OpKind::WriteLocal,
            Expr::Sense(_) => OpKind::Sense,
            Expr::Affect(..) => OpKind::Affect,
            Expr::Arith(ArithOp::Add, ..) => OpKind::Add,
            Expr::Arith(ArithOp::Sub, ..) => OpKind::Sub,
            Expr::Arith(ArithOp::Mul, ..) => OpKind::Mul,
            Expr::Arith(ArithOp::Div, ..) => OpKind::Div,
            Expr::Compare(..) => OpKind::Compare,
            Expr::If(..) => OpKind::If,
            Expr::Clamp(..) => OpKind::Clamp,
            Expr::Seq(_) => OpKind::Seq,
        }
    }

    /// Direct children in source order.
    pub fn children(&self) -> Vec<&Node> {
        match &self.expr {
            Expr::Literal(_) | Expr::ReadLocal(_) | Expr::Sense(_) => Vec::new(),
            Expr::WriteLocal(_, v) | Expr::Affect(_, v) => vec![v],
            Expr::Arith(_, a, b) | Expr::Compare(_, a, b) => vec![a, b],
            Expr::If(a, b, c) | Expr::Clamp(a, b, c) => vec![a, b, c],
            Expr::Seq(items) => items.iter().collect(),
        }
    }

    /// Pre-order traversal.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Node)) {
        f(self);
        for child in self.children() {
            child.walk(f);
        }
    }

    pub fn node_count(&self) -> usize {
        let mut n = 0;
        self.walk(&mut |_| n += 1);
        n
    }

    pub fn depth(&self) -> usize {
        1 + self.children().into_iter().map(Node::depth).max().unwrap_or(0)
    }

    /// Every sensed reference with its span.
    pub fn sensed_refs(&self) -> Vec<(&PropRef, Span)> {
        let mut out = Vec::new();
        self.walk(&mut |n| {
            if let Expr::Sense(r) = &n.expr {
                out.push((r, n.span));
            }
        });
        out
    }

    /// Every affected reference with its span.
    pub fn affected_refs(&self) -> Vec<(&PropRef, Span)> {
        let mut out = Vec::new();
        self.walk(&mut |n| {
            if let Expr::Affect(r, _) = &n.expr {
                out.push((r, n.span));
            }
        });
        out
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&super::print(self))
    }
}
