use std::fmt::Write;

use super::ast::{BinaryOp, Expr, RewardProgram, UnaryOp};

/// Shortest representation that parses back to the same `f64`.
pub(crate) fn fmt_num(v: f64) -> String {
    format!("{v:?}")
}

fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Binary(BinaryOp::Add | BinaryOp::Sub, ..) => 1,
        Expr::Binary(BinaryOp::Mul | BinaryOp::Div, ..) => 2,
        Expr::Unary(UnaryOp::Neg, _) => 3,
        Expr::Const(c) if c.is_sign_negative() => 3,
        _ => 4,
    }
}

fn op_prec(op: BinaryOp) -> u8 {
    match op {
        BinaryOp::Add | BinaryOp::Sub => 1,
        BinaryOp::Mul | BinaryOp::Div => 2,
        BinaryOp::Min | BinaryOp::Max => 4,
    }
}

fn write_wrapped(out: &mut String, e: &Expr, parens: bool) {
    if parens {
        out.push('(');
        write_expr(out, e);
        out.push(')');
    } else {
        write_expr(out, e);
    }
}

pub(crate) fn write_expr(out: &mut String, e: &Expr) {
    match e {
        Expr::Const(c) => out.push_str(&fmt_num(*c)),
        Expr::Feature(n) => {
            let _ = write!(out, "feature({n})");
        }
        Expr::Unary(UnaryOp::Neg, inner) => {
            out.push('-');
            // `-1.0` would read back as a negative literal, so keep the parens.
            let parens = prec(inner) < 4 || matches!(**inner, Expr::Const(_));
            write_wrapped(out, inner, parens);
        }
        Expr::Unary(op, inner) => {
            out.push_str(match op {
                UnaryOp::Abs => "abs(",
                UnaryOp::Exp => "exp(",
                UnaryOp::Tanh => "tanh(",
                UnaryOp::Neg => unreachable!(),
            });
            write_expr(out, inner);
            out.push(')');
        }
        Expr::Binary(op @ (BinaryOp::Min | BinaryOp::Max), l, r) => {
            out.push_str(if *op == BinaryOp::Min { "min(" } else { "max(" });
            write_expr(out, l);
            out.push_str(", ");
            write_expr(out, r);
            out.push(')');
        }
        Expr::Binary(op, l, r) => {
            let p = op_prec(*op);
            write_wrapped(out, l, prec(l) < p);
            out.push_str(match op {
                BinaryOp::Add => " + ",
                BinaryOp::Sub => " - ",
                BinaryOp::Mul => " * ",
                BinaryOp::Div => " / ",
                _ => unreachable!(),
            });
            write_wrapped(out, r, prec(r) <= p);
        }
        Expr::Clamp(inner, lo, hi) => {
            out.push_str("clamp(");
            write_expr(out, inner);
            let _ = write!(out, ", {}, {})", fmt_num(*lo), fmt_num(*hi));
        }
    }
}

pub fn expr_to_string(e: &Expr) -> String {
    let mut s = String::new();
    write_expr(&mut s, e);
    s
}

pub(crate) fn print_program(p: &RewardProgram) -> String {
    let mut out = String::new();
    for c in &p.components {
        let _ = writeln!(out, "component {} = {};", c.name, expr_to_string(&c.expr));
    }
    out.push_str("total = ");
    for (i, c) in p.components.iter().enumerate() {
        let w = c.weight;
        if i == 0 {
            let _ = write!(out, "{}*{}", fmt_num(w), c.name);
        } else if w.is_sign_negative() {
            let _ = write!(out, " - {}*{}", fmt_num(-w), c.name);
        } else {
            let _ = write!(out, " + {}*{}", fmt_num(w), c.name);
        }
    }
    out.push_str(";\n");
    out
}
