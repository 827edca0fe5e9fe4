//! Lexer and recursive-descent parser for causal programs (`.cp`).
//!
//! See `docs/grammar.md` for the EBNF.

use thiserror::Error;

use super::ast::{ArithOp, CmpOp, Expr, Node, PropRef, Span};
use crate::ids::KindId;

/// Maximum expression nesting accepted by the parser.
pub const MAX_NESTING: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("syntax error at {span}: {message}")]
    Syntax { span: Span, message: String },
    #[error("nesting deeper than {MAX_NESTING} at {span}")]
    DepthLimitExceeded { span: Span },
}

impl ParseError {
    pub fn span(&self) -> Span {
        match self {
            ParseError::Syntax { span, .. } | ParseError::DepthLimitExceeded { span } => *span,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Int(u64),
    Ident(String),
    Sense,
    Affect,
    Clamp,
    If,
    Then,
    Else,
    Let,
    Env,
    SelfKw,
    Struct,
    LParen,
    RParen,
    LBracket,
    RBracket,
    LBrace,
    RBrace,
    Comma,
    Semi,
    Dot,
    Plus,
    Minus,
    Star,
    Slash,
    Assign,
    Cmp(CmpOp),
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Int(n) => format!("integer {n}"),
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Eof => "end of input".to_string(),
            other => format!("`{}`", other.text()),
        }
    }

    fn text(&self) -> &'static str {
        match self {
            Tok::Sense => "sense",
            Tok::Affect => "affect",
            Tok::Clamp => "clamp",
            Tok::If => "if",
            Tok::Then => "then",
            Tok::Else => "else",
            Tok::Let => "let",
            Tok::Env => "env",
            Tok::SelfKw => "self",
            Tok::Struct => "struct",
            Tok::LParen => "(",
            Tok::RParen => ")",
            Tok::LBracket => "[",
            Tok::RBracket => "]",
            Tok::LBrace => "{",
            Tok::RBrace => "}",
            Tok::Comma => ",",
            Tok::Semi => ";",
            Tok::Dot => ".",
            Tok::Plus => "+",
            Tok::Minus => "-",
            Tok::Star => "*",
            Tok::Slash => "/",
            Tok::Assign => "=",
            Tok::Cmp(op) => op.symbol(),
            Tok::Int(_) | Tok::Ident(_) | Tok::Eof => "",
        }
    }
}

fn lex(src: &str) -> Result<Vec<(Tok, Span)>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1u32, 1u32);
    let err = |span: Span, message: String| ParseError::Syntax { span, message };

    while i < bytes.len() {
        let c = bytes[i];
        let span = Span {
            offset: i,
            line,
            column: col,
        };
        if c == b'\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_ascii_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == b'#' || (c == b'/' && bytes.get(i + 1) == Some(&b'/')) {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        let tok = if c.is_ascii_digit() {
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            let text = &src[start..i];
            let n: u64 = text
                .parse()
                .map_err(|_| err(span, format!("integer literal `{text}` out of range")))?;
            Tok::Int(n)
        } else if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            match &src[start..i] {
                "sense" => Tok::Sense,
                "affect" => Tok::Affect,
                "clamp" => Tok::Clamp,
                "if" => Tok::If,
                "then" => Tok::Then,
                "else" => Tok::Else,
                "let" => Tok::Let,
                "env" => Tok::Env,
                "self" => Tok::SelfKw,
                "struct" => Tok::Struct,
                word => Tok::Ident(word.to_string()),
            }
        } else {
            let two = bytes.get(i + 1).copied();
            let (tok, len) = match (c, two) {
                (b'<', Some(b'=')) => (Tok::Cmp(CmpOp::Le), 2),
                (b'>', Some(b'=')) => (Tok::Cmp(CmpOp::Ge), 2),
                (b'=', Some(b'=')) => (Tok::Cmp(CmpOp::Eq), 2),
                (b'!', Some(b'=')) => (Tok::Cmp(CmpOp::Ne), 2),
                (b'<', _) => (Tok::Cmp(CmpOp::Lt), 1),
                (b'>', _) => (Tok::Cmp(CmpOp::Gt), 1),
                (b'=', _) => (Tok::Assign, 1),
                (b'(', _) => (Tok::LParen, 1),
                (b')', _) => (Tok::RParen, 1),
                (b'[', _) => (Tok::LBracket, 1),
                (b']', _) => (Tok::RBracket, 1),
                (b'{', _) => (Tok::LBrace, 1),
                (b'}', _) => (Tok::RBrace, 1),
                (b',', _) => (Tok::Comma, 1),
                (b';', _) => (Tok::Semi, 1),
                (b'.', _) => (Tok::Dot, 1),
                (b'+', _) => (Tok::Plus, 1),
                (b'-', _) => (Tok::Minus, 1),
                (b'*', _) => (Tok::Star, 1),
                (b'/', _) => (Tok::Slash, 1),
                _ => {
                    let ch = src[i..].chars().next().unwrap_or('?');
                    return Err(err(span, format!("unexpected character `{ch}`")));
                }
            };
            i += len;
            tok
        };
        col += (i - start) as u32;
        out.push((tok, span));
    }
    out.push((
        Tok::Eof,
        Span {
            offset: bytes.len(),
            line,
            column: col,
        },
    ));
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, Span)>,
    pos: usize,
    nesting: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn span(&self) -> Span {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> (Tok, Span) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == tok {
            self.bump();
            true
        } else {
            false
        }
    }

    fn fail<T>(&self, expected: &str) -> Result<T, ParseError> {
        Err(ParseError::Syntax {
            span: self.span(),
            message: format!("expected {expected}, found {}", self.peek().describe()),
        })
    }

    fn expect(&mut self, tok: Tok) -> Result<Span, ParseError> {
        if self.peek() == &tok {
            Ok(self.bump().1)
        } else {
            self.fail(&format!("`{}`", tok.text()))
        }
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            _ => self.fail("identifier"),
        }
    }

    fn enter(&mut self) -> Result<(), ParseError> {
        self.nesting += 1;
        if self.nesting > MAX_NESTING {
            return Err(ParseError::DepthLimitExceeded { span: self.span() });
        }
        Ok(())
    }

    fn leave(&mut self) {
        self.nesting -= 1;
    }

    /// `stmt { ";" stmt } [";"]`, terminated by `end`.
    fn statements(&mut self, end: &Tok) -> Result<Node, ParseError> {
        let span = self.span();
        if self.peek() == end {
            return self.fail("a statement");
        }
        let mut items = vec![self.statement()?];
        while self.eat(&Tok::Semi) {
            if self.peek() == end {
                break;
            }
            items.push(self.statement()?);
        }
        if self.peek() != end {
            return self.fail(if *end == Tok::Eof {
                "`;` or end of input"
            } else {
                "`;` or `}`"
            });
        }
        Ok(if items.len() == 1 {
            items.pop().expect("one item")
        } else {
            Node {
                expr: Expr::Seq(items),
                span,
            }
        })
    }

    fn statement(&mut self) -> Result<Node, ParseError> {
        if *self.peek() == Tok::Let {
            let (_, span) = self.bump();
            let name = self.ident()?;
            self.expect(Tok::Assign)?;
            let value = self.expr()?;
            return Ok(Node {
                expr: Expr::WriteLocal(name, Box::new(value)),
                span,
            });
        }
        self.expr()
    }

    fn expr(&mut self) -> Result<Node, ParseError> {
        self.enter()?;
        let out = if *self.peek() == Tok::If {
            let (_, span) = self.bump();
            let cond = self.expr()?;
            self.expect(Tok::Then)?;
            let then = self.expr()?;
            self.expect(Tok::Else)?;
            let other = self.expr()?;
            Node {
                expr: Expr::If(Box::new(cond), Box::new(then), Box::new(other)),
                span,
            }
        } else {
            self.comparison()?
        };
        self.leave();
        Ok(out)
    }

    fn comparison(&mut self) -> Result<Node, ParseError> {
        let lhs = self.sum()?;
        if let Tok::Cmp(op) = *self.peek() {
            let (_, span) = self.bump();
            let rhs = self.sum()?;
            return Ok(Node {
                expr: Expr::Compare(op, Box::new(lhs), Box::new(rhs)),
                span,
            });
        }
        Ok(lhs)
    }

    fn sum(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.product()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => ArithOp::Add,
                Tok::Minus => ArithOp::Sub,
                _ => return Ok(lhs),
            };
            let (_, span) = self.bump();
            let rhs = self.product()?;
            lhs = Node {
                expr: Expr::Arith(op, Box::new(lhs), Box::new(rhs)),
                span,
            };
        }
    }

    fn product(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => ArithOp::Mul,
                Tok::Slash => ArithOp::Div,
                _ => return Ok(lhs),
            };
            let (_, span) = self.bump();
            let rhs = self.unary()?;
            lhs = Node {
                expr: Expr::Arith(op, Box::new(lhs), Box::new(rhs)),
                span,
            };
        }
    }

    fn unary(&mut self) -> Result<Node, ParseError> {
        if *self.peek() != Tok::Minus {
            return self.atom();
        }
        let (_, span) = self.bump();
        if let Tok::Int(n) = *self.peek() {
            self.bump();
            let value = 0i64.checked_sub_unsigned(n).ok_or_else(|| ParseError::Syntax {
                span,
                message: format!("integer literal -{n} out of range"),
            })?;
            return Ok(Node {
                expr: Expr::Literal(value),
                span,
            });
        }
        self.enter()?;
        let operand = self.unary()?;
        self.leave();
        let zero = Node {
            expr: Expr::Literal(0),
            span,
        };
        Ok(Node {
            expr: Expr::Arith(ArithOp::Sub, Box::new(zero), Box::new(operand)),
            span,
        })
    }

    fn atom(&mut self) -> Result<Node, ParseError> {
        let span = self.span();
        let expr = match self.peek().clone() {
            Tok::Int(n) => {
                self.bump();
                let v = i64::try_from(n).map_err(|_| ParseError::Syntax {
                    span,
                    message: format!("integer literal {n} out of range"),
                })?;
                Expr::Literal(v)
            }
            Tok::Ident(name) => {
                self.bump();
                Expr::ReadLocal(name)
            }
            Tok::Sense => {
                self.bump();
                self.expect(Tok::LParen)?;
                let r = self.prop_ref()?;
                self.expect(Tok::RParen)?;
                Expr::Sense(r)
            }
            Tok::Affect => {
                self.bump();
                self.expect(Tok::LParen)?;
                let r = self.prop_ref()?;
                self.expect(Tok::Comma)?;
                let value = self.expr()?;
                self.expect(Tok::RParen)?;
                Expr::Affect(r, Box::new(value))
            }
            Tok::Clamp => {
                self.bump();
                self.expect(Tok::LParen)?;
                let v = self.expr()?;
                self.expect(Tok::Comma)?;
                let lo = self.expr()?;
                self.expect(Tok::Comma)?;
                let hi = self.expr()?;
                self.expect(Tok::RParen)?;
                Expr::Clamp(Box::new(v), Box::new(lo), Box::new(hi))
            }
            Tok::LParen => {
                self.bump();
                let inner = self.expr()?;
                self.expect(Tok::RParen)?;
                return Ok(inner);
            }
            Tok::LBrace => {
                self.bump();
                self.enter()?;
                let inner = self.statements(&Tok::RBrace)?;
                self.leave();
                self.expect(Tok::RBrace)?;
                return Ok(inner);
            }
            _ => return self.fail("an expression"),
        };
        Ok(Node { expr, span })
    }

    fn prop_ref(&mut self) -> Result<PropRef, ParseError> {
        match self.peek() {
            Tok::Env => {
                self.bump();
                self.expect(Tok::Dot)?;
                Ok(PropRef::Env(self.ident()?))
            }
            Tok::SelfKw => {
                self.bump();
                self.expect(Tok::Dot)?;
                Ok(PropRef::Own(self.ident()?))
            }
            Tok::Struct => {
                self.bump();
                self.expect(Tok::LBracket)?;
                let span = self.span();
                let idx = match self.bump().0 {
                    Tok::Int(n) => u32::try_from(n).map_err(|_| ParseError::Syntax {
                        span,
                        message: format!("structure index {n} out of range"),
                    })?,
                    other => {
                        return Err(ParseError::Syntax {
                            span,
                            message: format!("expected structure index, found {}", other.describe()),
                        })
                    }
                };
                self.expect(Tok::RBracket)?;
                self.expect(Tok::Dot)?;
                Ok(PropRef::Kind(KindId(idx), self.ident()?))
            }
            _ => self.fail("a property reference (`env.`, `self.` or `struct[i].`)"),
        }
    }
}

/// Parse a complete program.
pub fn parse(source: &str) -> Result<Node, ParseError> {
    let toks = lex(source)?;
    let mut p = Parser {
        toks,
        pos: 0,
        nesting: 0,
    };
    p.statements(&Tok::Eof)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lit(v: i64) -> Node {
        Node::new(Expr::Literal(v))
    }

    #[test]
    fn parses_alloc_request() {
        let ast = parse("affect(env.alloc_self, sense(env.alloc_self) + 1)").unwrap();
        let expected = Node::new(Expr::Affect(
            PropRef::env("alloc_self"),
            Box::new(Node::new(Expr::Arith(
                ArithOp::Add,
                Box::new(Node::new(Expr::Sense(PropRef::env("alloc_self")))),
                Box::new(lit(1)),
            ))),
        ));
        assert_eq!(ast, expected);
        assert!(!matches!(ast.expr, Expr::Seq(_)));
    }

    #[test]
    fn empty_program_is_rejected() {
        assert!(matches!(parse(""), Err(ParseError::Syntax { .. })));
        assert!(matches!(parse("  # only a comment\n"), Err(ParseError::Syntax { .. })));
    }

    #[test]
    fn unclosed_paren_reports_location() {
        let err = parse("affect(env.x, 1").unwrap_err();
        match err {
            ParseError::Syntax { span, message } => {
                assert_eq!((span.line, span.column), (1, 16));
                assert!(message.contains("`)`"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn line_and_column_track_newlines() {
        let err = parse("let a = 1;\nlet b = ;").unwrap_err();
        assert_eq!((err.span().line, err.span().column), (2, 9));
    }

    #[test]
    fn depth_limit() {
        let ok = format!("{}1{}", "(".repeat(60), ")".repeat(60));
        assert!(parse(&ok).is_ok());
        let deep = format!("{}1{}", "(".repeat(80), ")".repeat(80));
        assert!(matches!(parse(&deep), Err(ParseError::DepthLimitExceeded { .. })));
    }

    #[test]
    fn precedence_and_associativity() {
        let ast = parse("1 - 2 - 3 * 4").unwrap();
        let expected = Node::new(Expr::Arith(
            ArithOp::Sub,
            Box::new(Node::new(Expr::Arith(ArithOp::Sub, Box::new(lit(1)), Box::new(lit(2))))),
            Box::new(Node::new(Expr::Arith(ArithOp::Mul, Box::new(lit(3)), Box::new(lit(4))))),
        ));
        assert_eq!(ast, expected);
    }

    #[test]
    fn negative_literals_and_unary_minus() {
        assert_eq!(parse("-9223372036854775808").unwrap(), lit(i64::MIN));
        assert!(parse("9223372036854775808").is_err());
        let neg = parse("-x").unwrap();
        assert!(matches!(neg.expr, Expr::Arith(ArithOp::Sub, _, _)));
    }

    #[test]
    fn sequences_and_locals() {
        let ast = parse("let x = sense(self.v); if x > 3 then affect(env.out, x) else 0;").unwrap();
        match ast.expr {
            Expr::Seq(items) => {
                assert_eq!(items.len(), 2);
                assert!(matches!(items[0].expr, Expr::WriteLocal(..)));
                assert!(matches!(items[1].expr, Expr::If(..)));
            }
            other => panic!("expected seq, got {other:?}"),
        }
        assert!(parse("struct[2].p").is_err(), "refs only inside sense/affect");
        assert!(parse("sense(struct[x].p)").is_err());
        assert!(parse("1 2").is_err());
        assert!(parse("a < b < c").is_err());
    }
}
