//! Shared tokenizer for the plan-library and chart documents.

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Ident(String),
    Var(String),
    Num(f64),
    Str(String),
    /// `.name`, an internal action such as `.drop_all_intentions`.
    Internal(String),
    LParen,
    RParen,
    Comma,
    Dot,
    Semi,
    Colon,
    Amp,
    Plus,
    Minus,
    Bang,
    At,
    /// `<-`
    LArrow,
    /// `->`
    RArrow,
    Ge,
    Le,
    Gt,
    Lt,
    EqEq,
    Ne,
    Eq,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) | Tok::Var(s) => write!(f, "{s}"),
            Tok::Num(n) => write!(f, "{n}"),
            Tok::Str(s) => write!(f, "{s:?}"),
            Tok::Internal(s) => write!(f, ".{s}"),
            Tok::LParen => f.write_str("("),
            Tok::RParen => f.write_str(")"),
            Tok::Comma => f.write_str(","),
            Tok::Dot => f.write_str("."),
            Tok::Semi => f.write_str(";"),
            Tok::Colon => f.write_str(":"),
            Tok::Amp => f.write_str("&"),
            Tok::Plus => f.write_str("+"),
            Tok::Minus => f.write_str("-"),
            Tok::Bang => f.write_str("!"),
            Tok::At => f.write_str("@"),
            Tok::LArrow => f.write_str("<-"),
            Tok::RArrow => f.write_str("->"),
            Tok::Ge => f.write_str(">="),
            Tok::Le => f.write_str("<="),
            Tok::Gt => f.write_str(">"),
            Tok::Lt => f.write_str("<"),
            Tok::EqEq => f.write_str("=="),
            Tok::Ne => f.write_str("!="),
            Tok::Eq => f.write_str("="),
        }
    }
}

/// 1-based source position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{pos}: {message}")]
pub struct SyntaxError {
    pub pos: Pos,
    pub message: String,
}

impl SyntaxError {
    pub fn new(pos: Pos, message: impl Into<String>) -> Self {
        Self {
            pos,
            message: message.into(),
        }
    }
}

pub fn tokenize(src: &str) -> Result<Vec<(Tok, Pos)>, SyntaxError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    let mut line = 1;
    let mut col = 1;

    macro_rules! bump {
        () => {{
            if chars[i] == '\n' {
                line += 1;
                col = 1;
            } else {
                col += 1;
            }
            i += 1;
        }};
    }

    while i < chars.len() {
        let c = chars[i];
        let pos = Pos { line, col };
        if c.is_whitespace() {
            bump!();
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                bump!();
            }
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'*') {
            bump!();
            bump!();
            loop {
                if i >= chars.len() {
                    return Err(SyntaxError::new(pos, "unterminated block comment"));
                }
                if chars[i] == '*' && chars.get(i + 1) == Some(&'/') {
                    bump!();
                    bump!();
                    break;
                }
                bump!();
            }
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                bump!();
            }
            let word: String = chars[start..i].iter().collect();
            if c.is_ascii_uppercase() || c == '_' {
                out.push((Tok::Var(word), pos));
            } else {
                out.push((Tok::Ident(word), pos));
            }
            continue;
        }
        if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                bump!();
            }
            if i + 1 < chars.len() && chars[i] == '.' && chars[i + 1].is_ascii_digit() {
                bump!();
                while i < chars.len() && chars[i].is_ascii_digit() {
                    bump!();
                }
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let save = (i, line, col);
                bump!();
                if i < chars.len() && (chars[i] == '-' || chars[i] == '+') {
                    bump!();
                }
                if i < chars.len() && chars[i].is_ascii_digit() {
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        bump!();
                    }
                } else {
                    (i, line, col) = save;
                }
            }
            let text: String = chars[start..i].iter().collect();
            let n = text
                .parse::<f64>()
                .map_err(|_| SyntaxError::new(pos, format!("bad number `{text}`")))?;
            out.push((Tok::Num(n), pos));
            continue;
        }
        if c == '"' {
            bump!();
            let mut s = String::new();
            loop {
                if i >= chars.len() {
                    return Err(SyntaxError::new(pos, "unterminated string"));
                }
                let ch = chars[i];
                if ch == '"' {
                    bump!();
                    break;
                }
                if ch == '\\' && i + 1 < chars.len() {
                    bump!();
                    let esc = chars[i];
                    s.push(match esc {
                        'n' => '\n',
                        't' => '\t',
                        other => other,
                    });
                    bump!();
                    continue;
                }
                s.push(ch);
                bump!();
            }
            out.push((Tok::Str(s), pos));
            continue;
        }
        if c == '.' {
            // `.name` is an internal action when it does not close a clause.
            let prev_ok = i == 0 || {
                let p = chars[i - 1];
                p.is_whitespace() || p == ';' || p == '-'
            };
            if prev_ok && chars.get(i + 1).is_some_and(|n| n.is_ascii_lowercase()) {
                bump!();
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    bump!();
                }
                let word: String = chars[start..i].iter().collect();
                out.push((Tok::Internal(word), pos));
                continue;
            }
            bump!();
            out.push((Tok::Dot, pos));
            continue;
        }
        let two: Option<Tok> = match (c, chars.get(i + 1).copied()) {
            ('<', Some('-')) => Some(Tok::LArrow),
            ('-', Some('>')) => Some(Tok::RArrow),
            ('>', Some('=')) => Some(Tok::Ge),
            ('<', Some('=')) => Some(Tok::Le),
            ('=', Some('=')) => Some(Tok::EqEq),
            ('!', Some('=')) => Some(Tok::Ne),
            _ => None,
        };
        if let Some(t) = two {
            bump!();
            bump!();
            out.push((t, pos));
            continue;
        }
        let one = match c {
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            ',' => Tok::Comma,
            ';' => Tok::Semi,
            ':' => Tok::Colon,
            '&' => Tok::Amp,
            '+' => Tok::Plus,
            '-' => Tok::Minus,
            '!' => Tok::Bang,
            '@' => Tok::At,
            '>' => Tok::Gt,
            '<' => Tok::Lt,
            '=' => Tok::Eq,
            other => {
                return Err(SyntaxError::new(pos, format!("unexpected character `{other}`")));
            }
        };
        bump!();
        out.push((one, pos));
    }
    Ok(out)
}

/// Cursor over a token stream with small helpers used by the recursive-descent parsers.
pub struct Cursor {
    toks: Vec<(Tok, Pos)>,
    at: usize,
    end: Pos,
}

impl Cursor {
    pub fn new(toks: Vec<(Tok, Pos)>) -> Self {
        let end = toks
            .last()
            .map(|(_, p)| Pos {
                line: p.line,
                col: p.col + 1,
            })
            .unwrap_or(Pos { line: 1, col: 1 });
        Self { toks, at: 0, end }
    }

    pub fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.at).map(|(t, _)| t)
    }

    pub fn peek_at(&self, offset: usize) -> Option<&Tok> {
        self.toks.get(self.at + offset).map(|(t, _)| t)
    }

    pub fn pos(&self) -> Pos {
        self.toks.get(self.at).map(|(_, p)| *p).unwrap_or(self.end)
    }

    pub fn is_done(&self) -> bool {
        self.at >= self.toks.len()
    }

    pub fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.at).map(|(t, _)| t.clone());
        if t.is_some() {
            self.at += 1;
        }
        t
    }

    pub fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == Some(tok) {
            self.at += 1;
            true
        } else {
            false
        }
    }

    pub fn expect(&mut self, tok: &Tok) -> Result<(), SyntaxError> {
        if self.eat(tok) {
            Ok(())
        } else {
            Err(self.unexpected(&format!("`{tok}`")))
        }
    }

    pub fn ident(&mut self) -> Result<String, SyntaxError> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.at += 1;
                Ok(s)
            }
            _ => Err(self.unexpected("identifier")),
        }
    }

    pub fn unexpected(&self, wanted: &str) -> SyntaxError {
        match self.peek() {
            Some(t) => SyntaxError::new(self.pos(), format!("expected {wanted}, found `{t}`")),
            None => SyntaxError::new(self.pos(), format!("expected {wanted}, found end of input")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn internal_action_vs_clause_end() {
        let toks: Vec<Tok> = tokenize("a <- .drop_all_intentions; b(1.5).\nc.")
            .unwrap()
            .into_iter()
            .map(|(t, _)| t)
            .collect();
        assert_eq!(
            toks,
            vec![
                Tok::Ident("a".into()),
                Tok::LArrow,
                Tok::Internal("drop_all_intentions".into()),
                Tok::Semi,
                Tok::Ident("b".into()),
                Tok::LParen,
                Tok::Num(1.5),
                Tok::RParen,
                Tok::Dot,
                Tok::Ident("c".into()),
                Tok::Dot,
            ]
        );
    }

    #[test]
    fn comments_and_positions() {
        let toks = tokenize("// header\n/* block\n */ x >= 60").unwrap();
        assert_eq!(toks[0], (Tok::Ident("x".into()), Pos { line: 3, col: 5 }));
        assert_eq!(toks[1].0, Tok::Ge);
        assert_eq!(toks[2].0, Tok::Num(60.0));
    }

    #[test]
    fn rejects_stray_characters() {
        let err = tokenize("a $ b").unwrap_err();
        assert_eq!(err.pos, Pos { line: 1, col: 3 });
    }
}
