use super::ParseError;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Tok {
    Int(i64),
    Real(f64),
    Str(String),
    Ident(String),
    True,
    False,
    Undefined,
    Error,
    Is,
    Isnt,
    And,
    Or,
    Not,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    LParen,
    RParen,
    Comma,
    Eof,
}

impl Tok {
    pub(crate) fn describe(&self) -> String {
        match self {
            Tok::Int(i) => format!("integer `{i}`"),
            Tok::Real(r) => format!("real `{r}`"),
            Tok::Str(_) => "string literal".to_string(),
            Tok::Ident(name) => format!("identifier `{name}`"),
            Tok::True => "`true`".into(),
            Tok::False => "`false`".into(),
            Tok::Undefined => "`undefined`".into(),
            Tok::Error => "`error`".into(),
            Tok::Is => "`is`".into(),
            Tok::Isnt => "`isnt`".into(),
            Tok::And => "`&&`".into(),
            Tok::Or => "`||`".into(),
            Tok::Not => "`!`".into(),
            Tok::Eq => "`==`".into(),
            Tok::Ne => "`!=`".into(),
            Tok::Lt => "`<`".into(),
            Tok::Le => "`<=`".into(),
            Tok::Gt => "`>`".into(),
            Tok::Ge => "`>=`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Token {
    pub tok: Tok,
    pub start: usize,
    pub end: usize,
}

fn syntax(offset: usize, expected: &str, found: impl Into<String>) -> ParseError {
    ParseError::Syntax {
        offset,
        expected: expected.to_string(),
        found: found.into(),
    }
}

pub(crate) fn tokenize(src: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let two = |b: u8| bytes.get(i + 1) == Some(&b);
        let tok = match c {
            b'(' => {
                i += 1;
                Tok::LParen
            }
            b')' => {
                i += 1;
                Tok::RParen
            }
            b',' => {
                i += 1;
                Tok::Comma
            }
            b'&' if two(b'&') => {
                i += 2;
                Tok::And
            }
            b'|' if two(b'|') => {
                i += 2;
                Tok::Or
            }
            b'=' if two(b'=') => {
                i += 2;
                Tok::Eq
            }
            b'!' if two(b'=') => {
                i += 2;
                Tok::Ne
            }
            b'!' => {
                i += 1;
                Tok::Not
            }
            b'<' if two(b'=') => {
                i += 2;
                Tok::Le
            }
            b'<' => {
                i += 1;
                Tok::Lt
            }
            b'>' if two(b'=') => {
                i += 2;
                Tok::Ge
            }
            b'>' => {
                i += 1;
                Tok::Gt
            }
            b'"' => {
                let (s, next) = lex_string(src, i)?;
                i = next;
                Tok::Str(s)
            }
            b'0'..=b'9' => {
                let (t, next) = lex_number(src, i)?;
                i = next;
                t
            }
            b'-' if bytes.get(i + 1).is_some_and(u8::is_ascii_digit) => {
                let (t, next) = lex_number(src, i)?;
                i = next;
                t
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let mut j = i + 1;
                while j < bytes.len()
                    && (bytes[j].is_ascii_alphanumeric() || bytes[j] == b'_' || bytes[j] == b'.')
                {
                    j += 1;
                }
                let word = &src[i..j];
                i = j;
                match word.to_ascii_lowercase().as_str() {
                    "true" => Tok::True,
                    "false" => Tok::False,
                    "undefined" => Tok::Undefined,
                    "error" => Tok::Error,
                    "is" => Tok::Is,
                    "isnt" => Tok::Isnt,
                    _ => Tok::Ident(word.to_string()),
                }
            }
            _ => {
                let ch = src[i..].chars().next().unwrap_or('?');
                return Err(syntax(i, "an expression token", format!("`{ch}`")));
            }
        };
        out.push(Token { tok, start, end: i });
    }
    out.push(Token {
        tok: Tok::Eof,
        start: src.len(),
        end: src.len(),
    });
    Ok(out)
}

fn lex_string(src: &str, start: usize) -> Result<(String, usize), ParseError> {
    let mut out = String::new();
    let mut chars = src[start + 1..].char_indices();
    while let Some((off, c)) = chars.next() {
        match c {
            '"' => return Ok((out, start + 1 + off + 1)),
            '\\' => match chars.next() {
                Some((_, 'n')) => out.push('\n'),
                Some((_, 't')) => out.push('\t'),
                Some((_, 'r')) => out.push('\r'),
                Some((_, c @ ('"' | '\\'))) => out.push(c),
                Some((eoff, other)) => {
                    return Err(syntax(
                        start + 1 + eoff,
                        "a valid escape (\\\", \\\\, \\n, \\t, \\r)",
                        format!("`\\{other}`"),
                    ))
                }
                None => break,
            },
            c => out.push(c),
        }
    }
    Err(syntax(src.len(), "closing `\"`", "end of input"))
}

fn lex_number(src: &str, start: usize) -> Result<(Tok, usize), ParseError> {
    let bytes = src.as_bytes();
    let mut j = start;
    if bytes[j] == b'-' {
        j += 1;
    }
    let digits = |mut k: usize| {
        while k < bytes.len() && bytes[k].is_ascii_digit() {
            k += 1;
        }
        k
    };
    j = digits(j);
    let mut real = false;
    if j < bytes.len() && bytes[j] == b'.' && bytes.get(j + 1).is_some_and(u8::is_ascii_digit) {
        real = true;
        j = digits(j + 1);
    }
    if j < bytes.len() && (bytes[j] == b'e' || bytes[j] == b'E') {
        let mut k = j + 1;
        if k < bytes.len() && (bytes[k] == b'+' || bytes[k] == b'-') {
            k += 1;
        }
        if k < bytes.len() && bytes[k].is_ascii_digit() {
            real = true;
            j = digits(k);
        }
    }
    let text = &src[start..j];
    let tok = if real {
        Tok::Real(
            text.parse()
                .map_err(|_| syntax(start, "a real literal", format!("`{text}`")))?,
        )
    } else {
        Tok::Int(
            text.parse()
                .map_err(|_| syntax(start, "an integer in range", format!("`{text}`")))?,
        )
    };
    Ok((tok, j))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(src: &str) -> Vec<Tok> {
        tokenize(src).unwrap().into_iter().map(|t| t.tok).collect()
    }

    #[test]
    fn operators_and_keywords() {
        assert_eq!(
            toks("!(X is UNDEFINED) || y.z>=-3"),
            vec![
                Tok::Not,
                Tok::LParen,
                Tok::Ident("X".into()),
                Tok::Is,
                Tok::Undefined,
                Tok::RParen,
                Tok::Or,
                Tok::Ident("y.z".into()),
                Tok::Ge,
                Tok::Int(-3),
                Tok::Eof
            ]
        );
    }

    #[test]
    fn numbers() {
        assert_eq!(toks("1e100")[0], Tok::Real(1e100));
        assert_eq!(toks("2.5")[0], Tok::Real(2.5));
        assert_eq!(toks("-0.5e-3")[0], Tok::Real(-0.5e-3));
        assert_eq!(toks("42")[0], Tok::Int(42));
        assert!(tokenize("99999999999999999999").is_err());
    }

    #[test]
    fn strings_and_escapes() {
        assert_eq!(toks(r#""a\"b\\c""#)[0], Tok::Str("a\"b\\c".into()));
        let err = tokenize("\"open").unwrap_err();
        assert_eq!(err.offset(), 5);
    }

    #[test]
    fn stray_character() {
        let err = tokenize("a & b").unwrap_err();
        assert_eq!(err.offset(), 2);
    }
}
