use super::ast::{BinaryOp, Builtin, Expr, ExprKind, Span, UnaryOp};
use super::lexer::{tokenize, Tok, Token};
use super::value::Value;
use super::ParseError;

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

/// Parses one complete expression.
pub fn parse(text: &str) -> Result<Expr, ParseError> {
    let mut p = Parser {
        tokens: tokenize(text)?,
        pos: 0,
    };
    let expr = p.or()?;
    match p.peek() {
        Tok::Eof => Ok(expr),
        _ => Err(p.unexpected("an operator or end of input")),
    }
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn current(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn unexpected(&self, expected: &str) -> ParseError {
        let t = self.current();
        ParseError::Syntax {
            offset: t.start,
            expected: expected.to_string(),
            found: t.tok.describe(),
        }
    }

    fn expect(&mut self, tok: Tok, expected: &str) -> Result<Token, ParseError> {
        if *self.peek() == tok {
            Ok(self.bump())
        } else {
            Err(self.unexpected(expected))
        }
    }

    fn binary_level(
        &mut self,
        next: fn(&mut Self) -> Result<Expr, ParseError>,
        op_of: fn(&Tok) -> Option<BinaryOp>,
    ) -> Result<Expr, ParseError> {
        let mut lhs = next(self)?;
        while let Some(op) = op_of(self.peek()) {
            self.bump();
            let rhs = next(self)?;
            let span = Span {
                start: lhs.span.start,
                end: rhs.span.end,
            };
            lhs = Expr {
                kind: ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)),
                span,
            };
        }
        Ok(lhs)
    }

    fn or(&mut self) -> Result<Expr, ParseError> {
        self.binary_level(Self::and, |t| (*t == Tok::Or).then_some(BinaryOp::Or))
    }

    fn and(&mut self) -> Result<Expr, ParseError> {
        self.binary_level(Self::comparison, |t| {
            (*t == Tok::And).then_some(BinaryOp::And)
        })
    }

    fn comparison(&mut self) -> Result<Expr, ParseError> {
        self.binary_level(Self::unary, |t| match t {
            Tok::Eq => Some(BinaryOp::Eq),
            Tok::Ne => Some(BinaryOp::Ne),
            Tok::Lt => Some(BinaryOp::Lt),
            Tok::Le => Some(BinaryOp::Le),
            Tok::Gt => Some(BinaryOp::Gt),
            Tok::Ge => Some(BinaryOp::Ge),
            Tok::Is => Some(BinaryOp::Is),
            Tok::Isnt => Some(BinaryOp::Isnt),
            _ => None,
        })
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if *self.peek() == Tok::Not {
            let bang = self.bump();
            let operand = self.unary()?;
            let span = Span {
                start: bang.start,
                end: operand.span.end,
            };
            return Ok(Expr {
                kind: ExprKind::Unary(UnaryOp::Not, Box::new(operand)),
                span,
            });
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let start = self.current().start;
        let end = self.current().end;
        let lit = |v: Value| Expr {
            kind: ExprKind::Literal(v),
            span: Span { start, end },
        };
        let expr = match self.peek().clone() {
            Tok::Int(i) => lit(Value::Integer(i)),
            Tok::Real(r) => lit(Value::Real(r)),
            Tok::Str(s) => lit(Value::String(s)),
            Tok::True => lit(Value::Boolean(true)),
            Tok::False => lit(Value::Boolean(false)),
            Tok::Undefined => lit(Value::Undefined),
            Tok::Error => lit(Value::Error(None)),
            Tok::LParen => {
                self.bump();
                let mut inner = self.or()?;
                let close = self.expect(Tok::RParen, "`)`")?;
                inner.span = Span {
                    start,
                    end: close.end,
                };
                return Ok(inner);
            }
            Tok::Ident(name) => {
                self.bump();
                if *self.peek() != Tok::LParen {
                    return Ok(Expr {
                        kind: ExprKind::Attr(name),
                        span: Span { start, end },
                    });
                }
                let func = Builtin::lookup(&name).ok_or_else(|| ParseError::UnknownFunction {
                    name: name.clone(),
                    offset: start,
                })?;
                self.bump();
                let mut args = Vec::new();
                if *self.peek() != Tok::RParen {
                    loop {
                        args.push(self.or()?);
                        if *self.peek() == Tok::Comma {
                            self.bump();
                        } else {
                            break;
                        }
                    }
                }
                let close = self.expect(Tok::RParen, "`,` or `)`")?;
                let (lo, hi) = func.arity();
                if args.len() < lo || args.len() > hi {
                    return Err(ParseError::Arity {
                        name: func.name().to_string(),
                        offset: start,
                        min: lo,
                        max: hi,
                        got: args.len(),
                    });
                }
                return Ok(Expr {
                    kind: ExprKind::Call(func, args),
                    span: Span {
                        start,
                        end: close.end,
                    },
                });
            }
            _ => return Err(self.unexpected("an operand")),
        };
        self.bump();
        Ok(expr)
    }
}
