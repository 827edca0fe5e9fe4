//! Pretty printer producing source that parses back to the same tree.

use super::ast::{ArithOp, Expr, Node};

// Binding strength, loosest first.
const IF: u8 = 0;
const CMP: u8 = 1;
const SUM: u8 = 2;
const PRODUCT: u8 = 3;
const ATOM: u8 = 4;

fn level(node: &Node) -> u8 {
    match &node.expr {
        Expr::If(..) => IF,
        Expr::Compare(..) => CMP,
        Expr::Arith(ArithOp::Add | ArithOp::Sub, ..) => SUM,
        Expr::Arith(ArithOp::Mul | ArithOp::Div, ..) => PRODUCT,
        // A negative literal is lexed as part of unary minus, which binds like an atom.
        _ => ATOM,
    }
}

/// Render a program. Top-level sequences are printed one statement per line.
pub fn print(node: &Node) -> String {
    let mut out = String::new();
    match &node.expr {
        Expr::Seq(items) => {
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push_str(";\n");
                }
                statement(item, &mut out);
            }
        }
        _ => statement(node, &mut out),
    }
    out
}

fn statement(node: &Node, out: &mut String) {
    match &node.expr {
        Expr::WriteLocal(name, value) => {
            out.push_str("let ");
            out.push_str(name);
            out.push_str(" = ");
            expr(value, IF, out);
        }
        _ => expr(node, IF, out),
    }
}

/// Print `node` in a position that requires binding strength at least `min`.
fn expr(node: &Node, min: u8, out: &mut String) {
    if level(node) < min {
        out.push('(');
        expr(node, IF, out);
        out.push(')');
        return;
    }
    match &node.expr {
        Expr::Literal(v) => out.push_str(&v.to_string()),
        Expr::ReadLocal(name) => out.push_str(name),
        Expr::WriteLocal(..) => {
            out.push_str("{ ");
            statement(node, out);
            out.push_str(" }");
        }
        Expr::Sense(r) => {
            out.push_str("sense(");
            out.push_str(&r.to_string());
            out.push(')');
        }
        Expr::Affect(r, value) => {
            out.push_str("affect(");
            out.push_str(&r.to_string());
            out.push_str(", ");
            expr(value, IF, out);
            out.push(')');
        }
        Expr::Arith(op, a, b) => {
            let lvl = level(node);
            expr(a, lvl, out);
            out.push(' ');
            out.push_str(op.symbol());
            out.push(' ');
            expr(b, lvl + 1, out);
        }
        Expr::Compare(op, a, b) => {
            expr(a, SUM, out);
            out.push(' ');
            out.push_str(op.symbol());
            out.push(' ');
            expr(b, SUM, out);
        }
        Expr::If(c, t, e) => {
            out.push_str("if ");
            expr(c, IF, out);
            out.push_str(" then ");
            expr(t, IF, out);
            out.push_str(" else ");
            expr(e, IF, out);
        }
        Expr::Clamp(v, lo, hi) => {
            out.push_str("clamp(");
            expr(v, IF, out);
            out.push_str(", ");
            expr(lo, IF, out);
            out.push_str(", ");
            expr(hi, IF, out);
            out.push(')');
        }
        Expr::Seq(items) => {
            out.push_str("{ ");
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push_str("; ");
                }
                statement(item, out);
            }
            out.push_str(" }");
        }
    }
}
