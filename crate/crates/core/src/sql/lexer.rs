//! Tokenizer for the SQL subset. Every token carries the byte offset of its
//! first character so errors can point into the source.

use super::SqlError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Tok {
    /// Unquoted word: keyword or identifier, case preserved here.
    Word(String),
    /// Double-quoted identifier, content with `""` unescaped.
    Quoted(String),
    /// Single-quoted string, content with `''` unescaped.
    Str(String),
    Int(i128),
    /// Numeric literal with a fraction or exponent; lexeme as written.
    Float(String),
    LParen,
    RParen,
    Comma,
    Dot,
    Star,
    Semicolon,
    Minus,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub tok: Tok,
    pub pos: usize,
}

pub fn lex(text: &str) -> Result<Vec<Token>, SqlError> {
    let bytes = text.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0usize;
    while i < bytes.len() {
        let c = bytes[i] as char;
        let pos = i;
        match c {
            ' ' | '\t' | '\r' | '\n' => {
                i += 1;
            }
            '(' => {
                tokens.push(Token { tok: Tok::LParen, pos });
                i += 1;
            }
            ')' => {
                tokens.push(Token { tok: Tok::RParen, pos });
                i += 1;
            }
            ',' => {
                tokens.push(Token { tok: Tok::Comma, pos });
                i += 1;
            }
            '.' => {
                tokens.push(Token { tok: Tok::Dot, pos });
                i += 1;
            }
            '*' => {
                tokens.push(Token { tok: Tok::Star, pos });
                i += 1;
            }
            ';' => {
                tokens.push(Token { tok: Tok::Semicolon, pos });
                i += 1;
            }
            '-' => {
                tokens.push(Token { tok: Tok::Minus, pos });
                i += 1;
            }
            '=' => {
                tokens.push(Token { tok: Tok::Eq, pos });
                i += 1;
            }
            '!' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    tokens.push(Token { tok: Tok::Ne, pos });
                    i += 2;
                } else {
                    return Err(SqlError::Lex { pos, message: "expected '=' after '!'".into() });
                }
            }
            '<' => match bytes.get(i + 1) {
                Some(&b'>') => {
                    tokens.push(Token { tok: Tok::Ne, pos });
                    i += 2;
                }
                Some(&b'=') => {
                    tokens.push(Token { tok: Tok::Le, pos });
                    i += 2;
                }
                _ => {
                    tokens.push(Token { tok: Tok::Lt, pos });
                    i += 1;
                }
            },
            '>' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    tokens.push(Token { tok: Tok::Ge, pos });
                    i += 2;
                } else {
                    tokens.push(Token { tok: Tok::Gt, pos });
                    i += 1;
                }
            }
            '\'' => {
                let (content, next) = lex_quoted(text, i, '\'')?;
                tokens.push(Token { tok: Tok::Str(content), pos });
                i = next;
            }
            '"' => {
                let (content, next) = lex_quoted(text, i, '"')?;
                if content.is_empty() {
                    return Err(SqlError::Lex { pos, message: "empty quoted identifier".into() });
                }
                tokens.push(Token { tok: Tok::Quoted(content), pos });
                i = next;
            }
            _ if c.is_ascii_digit() => {
                let (tok, next) = lex_number(text, i)?;
                tokens.push(Token { tok, pos });
                i = next;
            }
            _ if c.is_ascii_alphabetic() || c == '_' => {
                let end = text[i..]
                    .char_indices()
                    .find(|(_, c)| !c.is_ascii_alphanumeric() && *c != '_')
                    .map(|(j, _)| i + j)
                    .unwrap_or(text.len());
                tokens.push(Token { tok: Tok::Word(text[i..end].to_string()), pos });
                i = end;
            }
            _ => {
                return Err(SqlError::Lex { pos, message: format!("unexpected character {c:?}") });
            }
        }
    }
    Ok(tokens)
}

/// Lexes a quoted region starting at `start` (which holds the quote char).
/// A doubled quote is an escaped quote. Returns content and the index just
/// past the closing quote.
fn lex_quoted(text: &str, start: usize, quote: char) -> Result<(String, usize), SqlError> {
    let mut content = String::new();
    let mut chars = text[start + 1..].char_indices().peekable();
    while let Some((j, c)) = chars.next() {
        if c == quote {
            if let Some(&(_, next)) = chars.peek() {
                if next == quote {
                    content.push(quote);
                    chars.next();
                    continue;
                }
            }
            return Ok((content, start + 1 + j + quote.len_utf8()));
        }
        content.push(c);
    }
    Err(SqlError::Lex { pos: start, message: "unterminated quote".into() })
}

fn lex_number(text: &str, start: usize) -> Result<(Tok, usize), SqlError> {
    let bytes = text.as_bytes();
    let mut i = start;
    while i < bytes.len() && bytes[i].is_ascii_digit() {
        i += 1;
    }
    let mut is_float = false;
    if i < bytes.len() && bytes[i] == b'.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit) {
        is_float = true;
        i += 1;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
    }
    if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
        let mut j = i + 1;
        if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
            j += 1;
        }
        if j < bytes.len() && bytes[j].is_ascii_digit() {
            is_float = true;
            i = j;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
        }
    }
    let lexeme = &text[start..i];
    if is_float {
        Ok((Tok::Float(lexeme.to_string()), i))
    } else {
        let value = lexeme.parse::<i128>().map_err(|_| SqlError::Lex {
            pos: start,
            message: format!("integer literal {lexeme} out of range"),
        })?;
        Ok((Tok::Int(value), i))
    }
}
