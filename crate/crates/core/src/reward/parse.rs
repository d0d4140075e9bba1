use super::ast::{BinaryOp, Expr, Function, RewardExpr, MAX_DEPTH};
use super::DslError;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    LParen,
    RParen,
    Comma,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(n) => format!("number {n}"),
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Star => "`*`".into(),
            Tok::Slash => "`/`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>, DslError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'+' => out.push((Tok::Plus, start)),
            b'-' => out.push((Tok::Minus, start)),
            b'*' => out.push((Tok::Star, start)),
            b'/' => out.push((Tok::Slash, start)),
            b'(' => out.push((Tok::LParen, start)),
            b')' => out.push((Tok::RParen, start)),
            b',' => out.push((Tok::Comma, start)),
            b'0'..=b'9' | b'.' => {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        while j < bytes.len() && bytes[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let text = &src[start..i];
                let value: f64 = text.parse().map_err(|_| DslError::Syntax {
                    position: start,
                    message: format!("malformed number `{text}`"),
                })?;
                if !value.is_finite() {
                    return Err(DslError::Syntax {
                        position: start,
                        message: format!("number `{text}` is out of range"),
                    });
                }
                out.push((Tok::Num(value), start));
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((Tok::Ident(src[start..i].to_string()), start));
                continue;
            }
            _ => {
                let ch = src[start..].chars().next().unwrap_or('?');
                return Err(DslError::Syntax {
                    position: start,
                    message: format!("unexpected character `{}`", ch.escape_debug()),
                });
            }
        }
        i += 1;
    }
    out.push((Tok::Eof, src.len()));
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    schema: &'a [String],
    nesting: usize,
}

// Recursion guard; the tree depth limit is checked separately after parsing.
const MAX_NESTING: usize = 4 * MAX_DEPTH;

impl Parser<'_> {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> (Tok, usize) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn unexpected(&self, wanted: &str) -> DslError {
        DslError::Syntax {
            position: self.offset(),
            message: format!("expected {wanted}, found {}", self.peek().describe()),
        }
    }

    fn enter(&mut self) -> Result<(), DslError> {
        self.nesting += 1;
        if self.nesting > MAX_NESTING {
            return Err(DslError::DepthExceeded { limit: MAX_DEPTH });
        }
        Ok(())
    }

    fn expr(&mut self) -> Result<Expr, DslError> {
        self.enter()?;
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinaryOp::Add,
                Tok::Minus => BinaryOp::Sub,
                _ => break,
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::Binary {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            };
        }
        self.nesting -= 1;
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, DslError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinaryOp::Mul,
                Tok::Slash => BinaryOp::Div,
                _ => break,
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::Binary {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, DslError> {
        if *self.peek() == Tok::Minus {
            self.bump();
            self.enter()?;
            let inner = self.unary()?;
            self.nesting -= 1;
            return Ok(Expr::Neg(Box::new(inner)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, DslError> {
        let (tok, at) = self.bump();
        match tok {
            Tok::Num(v) => Ok(Expr::Const(v)),
            Tok::LParen => {
                let e = self.expr()?;
                if *self.peek() != Tok::RParen {
                    return Err(self.unexpected("`)`"));
                }
                self.bump();
                Ok(e)
            }
            Tok::Ident(name) => {
                if *self.peek() == Tok::LParen {
                    self.call(name, at)
                } else if self.schema.contains(&name) {
                    Ok(Expr::Feature(name))
                } else {
                    Err(DslError::UnknownFeature { name, position: at })
                }
            }
            Tok::Eof => Err(DslError::Syntax {
                position: at,
                message: "unexpected end of input".into(),
            }),
            other => Err(DslError::Syntax {
                position: at,
                message: format!("expected a value, found {}", other.describe()),
            }),
        }
    }

    fn call(&mut self, name: String, at: usize) -> Result<Expr, DslError> {
        let func = Function::from_name(&name).ok_or(DslError::UnknownFunction {
            name: name.clone(),
            position: at,
        })?;
        self.bump(); // (
        let mut args = vec![self.expr()?];
        while *self.peek() == Tok::Comma {
            self.bump();
            args.push(self.expr()?);
        }
        if *self.peek() != Tok::RParen {
            return Err(self.unexpected("`,` or `)`"));
        }
        self.bump();
        let (lo, hi) = func.arity();
        if args.len() < lo || hi.is_some_and(|h| args.len() > h) {
            let expected = match hi {
                Some(h) if h == lo => lo.to_string(),
                Some(h) => format!("{lo}..={h}"),
                None => format!("at least {lo}"),
            };
            return Err(DslError::Arity {
                function: name,
                expected,
                found: args.len(),
                position: at,
            });
        }
        Ok(Expr::Call { func, args })
    }
}

/// Parses `source`, resolving every identifier against `schema`.
pub fn parse(source: &str, schema: &[String]) -> Result<RewardExpr, DslError> {
    let toks = lex(source)?;
    let mut p = Parser {
        toks,
        pos: 0,
        schema,
        nesting: 0,
    };
    let root = p.expr()?;
    if *p.peek() != Tok::Eof {
        return Err(p.unexpected("an operator or end of input"));
    }
    if root.depth() > MAX_DEPTH {
        return Err(DslError::DepthExceeded { limit: MAX_DEPTH });
    }
    Ok(RewardExpr {
        root,
        source: source.to_string(),
    })
}
