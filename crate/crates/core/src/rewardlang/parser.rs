//! Tokenizer and recursive-descent parser for reward programs.

use super::ast::{BinaryOp, Component, Expr, ProgramMeta, RewardProgram, UnaryOp};
use super::{ParseError, MAX_DEPTH, MAX_NODES};

const MAX_NESTING: usize = 128;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(f64),
    LParen,
    RParen,
    Comma,
    Semi,
    Eq,
    Plus,
    Minus,
    Star,
    Slash,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Number(v) => format!("number {v}"),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Semi => "`;`".into(),
            Tok::Eq => "`=`".into(),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Star => "`*`".into(),
            Tok::Slash => "`/`".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

fn syntax(line: usize, col: usize, message: impl Into<String>) -> ParseError {
    ParseError::Syntax {
        line,
        col,
        message: message.into(),
    }
}

fn tokenize(text: &str) -> Result<Vec<Spanned>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0, 1, 1);
    while i < chars.len() {
        let c = chars[i];
        let (tl, tc) = (line, col);
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let single = match c {
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            ',' => Some(Tok::Comma),
            ';' => Some(Tok::Semi),
            '=' => Some(Tok::Eq),
            '+' => Some(Tok::Plus),
            '-' => Some(Tok::Minus),
            '*' => Some(Tok::Star),
            '/' => Some(Tok::Slash),
            _ => None,
        };
        if let Some(tok) = single {
            out.push(Spanned { tok, line: tl, col: tc });
            i += 1;
            col += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_alphabetic() || c == '_' {
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let s: String = chars[start..i].iter().collect();
            col += i - start;
            out.push(Spanned {
                tok: Tok::Ident(s),
                line: tl,
                col: tc,
            });
            continue;
        }
        if c.is_ascii_digit() || c == '.' {
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    while j < chars.len() && chars[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let s: String = chars[start..i].iter().collect();
            col += i - start;
            let v: f64 = s
                .parse()
                .map_err(|_| syntax(tl, tc, format!("malformed number `{s}`")))?;
            if !v.is_finite() {
                return Err(syntax(tl, tc, format!("number `{s}` is out of range")));
            }
            out.push(Spanned {
                tok: Tok::Number(v),
                line: tl,
                col: tc,
            });
            continue;
        }
        return Err(syntax(tl, tc, format!("unexpected character `{c}`")));
    }
    out.push(Spanned {
        tok: Tok::Eof,
        line,
        col,
    });
    Ok(out)
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
    nesting: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn next(&mut self) -> Spanned {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error_here(&self, message: impl Into<String>) -> ParseError {
        let t = &self.toks[self.pos];
        syntax(t.line, t.col, message)
    }

    fn expect(&mut self, want: Tok) -> Result<(), ParseError> {
        if *self.peek() == want {
            self.next();
            Ok(())
        } else {
            Err(self.error_here(format!(
                "expected {}, found {}",
                want.describe(),
                self.peek().describe()
            )))
        }
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.next();
                Ok(s)
            }
            other => Err(self.error_here(format!("expected identifier, found {}", other.describe()))),
        }
    }

    fn signed_number(&mut self) -> Result<f64, ParseError> {
        let sign = match self.peek() {
            Tok::Minus => {
                self.next();
                -1.0
            }
            Tok::Plus => {
                self.next();
                1.0
            }
            _ => 1.0,
        };
        match self.peek().clone() {
            Tok::Number(v) => {
                self.next();
                Ok(sign * v)
            }
            other => Err(self.error_here(format!("expected number, found {}", other.describe()))),
        }
    }

    /// Ends a statement; the final `;` of the program may be omitted.
    fn end_statement(&mut self) -> Result<(), ParseError> {
        match self.peek() {
            Tok::Semi => {
                self.next();
                Ok(())
            }
            Tok::Eof => Ok(()),
            other => Err(self.error_here(format!("expected `;`, found {}", other.describe()))),
        }
    }

    fn enter(&mut self) -> Result<(), ParseError> {
        self.nesting += 1;
        if self.nesting > MAX_NESTING {
            return Err(ParseError::LimitExceeded(format!(
                "expression nesting exceeds {MAX_NESTING}"
            )));
        }
        Ok(())
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        self.enter()?;
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinaryOp::Add,
                Tok::Minus => BinaryOp::Sub,
                _ => break,
            };
            self.next();
            let rhs = self.term()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
        self.nesting -= 1;
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinaryOp::Mul,
                Tok::Slash => BinaryOp::Div,
                _ => break,
            };
            self.next();
            let rhs = self.unary()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if *self.peek() == Tok::Minus {
            self.next();
            // A minus directly before a literal is part of the literal.
            if let Tok::Number(v) = *self.peek() {
                self.next();
                return Ok(Expr::Const(-v));
            }
            self.enter()?;
            let inner = self.unary()?;
            self.nesting -= 1;
            return Ok(Expr::unary(UnaryOp::Neg, inner));
        }
        self.primary()
    }

    fn call_args(&mut self) -> Result<Expr, ParseError> {
        self.expect(Tok::LParen)?;
        let e = self.expr()?;
        self.expect(Tok::RParen)?;
        Ok(e)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let here = self.toks[self.pos].clone();
        match here.tok {
            Tok::Number(v) => {
                self.next();
                Ok(Expr::Const(v))
            }
            Tok::LParen => {
                self.next();
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Tok::Ident(name) => {
                self.next();
                match name.as_str() {
                    "feature" => {
                        self.expect(Tok::LParen)?;
                        let f = self.ident()?;
                        self.expect(Tok::RParen)?;
                        Ok(Expr::Feature(f))
                    }
                    "exp" => Ok(Expr::unary(UnaryOp::Exp, self.call_args()?)),
                    "abs" => Ok(Expr::unary(UnaryOp::Abs, self.call_args()?)),
                    "tanh" => Ok(Expr::unary(UnaryOp::Tanh, self.call_args()?)),
                    "min" | "max" => {
                        let op = if name == "min" { BinaryOp::Min } else { BinaryOp::Max };
                        self.expect(Tok::LParen)?;
                        let a = self.expr()?;
                        self.expect(Tok::Comma)?;
                        let b = self.expr()?;
                        self.expect(Tok::RParen)?;
                        Ok(Expr::binary(op, a, b))
                    }
                    "clamp" => {
                        self.expect(Tok::LParen)?;
                        let e = self.expr()?;
                        self.expect(Tok::Comma)?;
                        let lo = self.signed_number()?;
                        self.expect(Tok::Comma)?;
                        let hi = self.signed_number()?;
                        self.expect(Tok::RParen)?;
                        Ok(Expr::Clamp(Box::new(e), lo, hi))
                    }
                    _ => Err(syntax(
                        here.line,
                        here.col,
                        format!("unknown name `{name}`; read features with feature({name})"),
                    )),
                }
            }
            other => Err(syntax(
                here.line,
                here.col,
                format!("expected an expression, found {}", other.describe()),
            )),
        }
    }

    /// `total = w*name (+|- w*name)*`
    fn weighted_sum(&mut self) -> Result<Vec<(f64, String, usize, usize)>, ParseError> {
        let mut terms = Vec::new();
        let mut sign = 1.0;
        loop {
            let at = self.toks[self.pos].clone();
            let w = if terms.is_empty() {
                self.signed_number()?
            } else {
                match self.peek().clone() {
                    Tok::Number(v) => {
                        self.next();
                        v
                    }
                    other => {
                        return Err(self.error_here(format!(
                            "expected weight, found {}",
                            other.describe()
                        )))
                    }
                }
            };
            self.expect(Tok::Star)?;
            let name = self.ident()?;
            terms.push((sign * w, name, at.line, at.col));
            sign = match self.peek() {
                Tok::Plus => 1.0,
                Tok::Minus => -1.0,
                _ => break,
            };
            self.next();
        }
        Ok(terms)
    }
}

const RESERVED: [&str; 9] = [
    "component", "total", "feature", "exp", "abs", "tanh", "min", "max", "clamp",
];

/// Parses a full program. Statements may appear in any order; exactly one
/// `total` line is required.
pub fn parse(text: &str) -> Result<RewardProgram, ParseError> {
    let mut p = Parser {
        toks: tokenize(text)?,
        pos: 0,
        nesting: 0,
    };
    let mut components: Vec<Component> = Vec::new();
    let mut total = None;
    while *p.peek() != Tok::Eof {
        let head = p.toks[p.pos].clone();
        match &head.tok {
            Tok::Ident(kw) if kw == "component" => {
                p.next();
                let name_at = p.toks[p.pos].clone();
                let name = p.ident()?;
                if RESERVED.contains(&name.as_str()) {
                    return Err(syntax(name_at.line, name_at.col, format!("`{name}` is reserved")));
                }
                if components.iter().any(|c| c.name == name) {
                    return Err(syntax(
                        name_at.line,
                        name_at.col,
                        format!("component `{name}` declared twice"),
                    ));
                }
                p.expect(Tok::Eq)?;
                let expr = p.expr()?;
                p.end_statement()?;
                components.push(Component {
                    name,
                    expr,
                    weight: 0.0,
                });
            }
            Tok::Ident(kw) if kw == "total" => {
                if total.is_some() {
                    return Err(syntax(head.line, head.col, "`total` defined twice"));
                }
                p.next();
                p.expect(Tok::Eq)?;
                total = Some(p.weighted_sum()?);
                p.end_statement()?;
            }
            other => {
                return Err(syntax(
                    head.line,
                    head.col,
                    format!("expected `component` or `total`, found {}", other.describe()),
                ))
            }
        }
    }
    let Some(total) = total else {
        let end = p.toks.last().unwrap();
        return Err(syntax(end.line, end.col, "missing `total` line"));
    };
    if components.is_empty() {
        let (_, name, line, col) = &total[0];
        return Err(syntax(*line, *col, format!("`{name}` is not a declared component")));
    }
    let mut seen = Vec::new();
    for (w, name, line, col) in total {
        if seen.contains(&name) {
            return Err(syntax(line, col, format!("`{name}` appears twice in total")));
        }
        let Some(c) = components.iter_mut().find(|c| c.name == name) else {
            return Err(syntax(line, col, format!("`{name}` is not a declared component")));
        };
        c.weight = w;
        seen.push(name);
    }
    let program = RewardProgram {
        source: text.to_string(),
        components,
        meta: ProgramMeta::default(),
    };
    check_limits(&program)?;
    Ok(program)
}

pub(crate) fn check_limits(program: &RewardProgram) -> Result<(), ParseError> {
    if program.depth() > MAX_DEPTH {
        return Err(ParseError::LimitExceeded(format!(
            "expression depth {} exceeds {MAX_DEPTH}",
            program.depth()
        )));
    }
    if program.node_count() > MAX_NODES {
        return Err(ParseError::LimitExceeded(format!(
            "program has {} nodes, limit {MAX_NODES}",
            program.node_count()
        )));
    }
    Ok(())
}

/// Parses a standalone expression (the right-hand side of a component).
pub fn parse_expr(text: &str) -> Result<Expr, ParseError> {
    let mut p = Parser {
        toks: tokenize(text)?,
        pos: 0,
        nesting: 0,
    };
    let e = p.expr()?;
    if *p.peek() != Tok::Eof {
        return Err(p.error_here(format!("trailing {}", p.peek().describe())));
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_exponential_speed_reward() {
        let p = parse("component speed = exp((feature(vx) - 5.0)/1.0) - 1.0; total = 1.0*speed")
            .unwrap();
        assert_eq!(p.components.len(), 1);
        assert_eq!(p.components[0].weight, 1.0);
        assert_eq!(p.components[0].expr.features(), ["vx"]);
    }

    #[test]
    fn undeclared_total_reference_is_an_error() {
        let err = parse("total = 1.0*speed").unwrap_err();
        assert!(matches!(err, ParseError::Syntax { line: 1, col: 9, .. }), "{err:?}");
        let err = parse("component a = 1.0; total = 1.0*a + 2.0*b;").unwrap_err();
        assert!(matches!(err, ParseError::Syntax { .. }));
    }

    #[test]
    fn statement_order_and_trailing_semicolon_are_flexible() {
        let p = parse("total = 1.0*c; component c = 0.0").unwrap();
        assert_eq!(p.components[0].expr, Expr::Const(0.0));
    }

    #[test]
    fn comments_and_signs() {
        let p = parse(
            "# shaped penalty\ncomponent a = -feature(x) * -2.0 # trailing\ncomponent b = -(1.0);\ntotal = -0.5*a - 0.25*b;",
        );
        // missing `;` after the first component is only allowed at end of input
        assert!(p.is_err());
        let p = parse(
            "# shaped penalty\ncomponent a = -feature(x) * -2.0; # trailing\ncomponent b = -(1.0);\ntotal = -0.5*a - 0.25*b;",
        )
        .unwrap();
        assert_eq!(p.component("a").unwrap().weight, -0.5);
        assert_eq!(p.component("b").unwrap().weight, -0.25);
        assert_eq!(
            p.component("b").unwrap().expr,
            Expr::unary(UnaryOp::Neg, Expr::Const(1.0))
        );
        assert_eq!(
            p.component("a").unwrap().expr,
            Expr::binary(
                BinaryOp::Mul,
                Expr::unary(UnaryOp::Neg, Expr::feature("x")),
                Expr::Const(-2.0)
            )
        );
    }

    #[test]
    fn error_positions_point_at_the_token() {
        match parse("component a = feature(x) +;\ntotal = 1.0*a;") {
            Err(ParseError::Syntax { line, col, .. }) => assert_eq!((line, col), (1, 27)),
            other => panic!("{other:?}"),
        }
        match parse("component a = 1.0;\ntotal = 1.0*a;\n  component a = 2.0;") {
            Err(ParseError::Syntax { line, col, .. }) => assert_eq!((line, col), (3, 13)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bare_identifiers_and_unknown_functions_rejected() {
        assert!(parse("component a = vx; total = 1.0*a;").is_err());
        assert!(parse("component a = sqrt(feature(vx)); total = 1.0*a;").is_err());
        assert!(parse("component exp = 1.0; total = 1.0*exp;").is_err());
        assert!(parse("component a = 1e999; total = 1.0*a;").is_err());
        assert!(parse("component a = 1.0; total = 1.0*a; total = 1.0*a;").is_err());
        assert!(parse("component a = 1.0; total = 1.0*a + 2.0*a;").is_err());
    }

    #[test]
    fn unreferenced_component_has_zero_weight() {
        let p = parse("component a = 1.0; component b = 2.0; total = 0.5*b;").unwrap();
        assert_eq!(p.component("a").unwrap().weight, 0.0);
    }

    #[test]
    fn depth_limit() {
        let mut e = "feature(x)".to_string();
        for _ in 0..40 {
            e = format!("abs({e})");
        }
        let err = parse(&format!("component a = {e}; total = 1.0*a;")).unwrap_err();
        assert!(matches!(err, ParseError::LimitExceeded(_)));
        let deep = "(".repeat(10_000);
        assert!(matches!(
            parse(&format!("component a = {deep}")),
            Err(ParseError::LimitExceeded(_))
        ));
    }

    #[test]
    fn node_limit() {
        // Shallow but wide: 200 components of 3 nodes each.
        let body: String = (0..200)
            .map(|i| format!("component c{i} = feature(x) * 2.0;\n"))
            .collect();
        let err = parse(&format!("{body}total = 1.0*c0;")).unwrap_err();
        assert!(matches!(err, ParseError::LimitExceeded(ref m) if m.contains("nodes")), "{err:?}");
    }

    #[test]
    fn exponent_literals() {
        let p = parse("component a = 1e-7 * 2.5E+3 + .5; total = 1.0*a;").unwrap();
        assert_eq!(
            p.components[0].expr,
            Expr::binary(
                BinaryOp::Add,
                Expr::binary(BinaryOp::Mul, Expr::Const(1e-7), Expr::Const(2.5e3)),
                Expr::Const(0.5)
            )
        );
    }
}
