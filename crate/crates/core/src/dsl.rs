// SPDX-License-Identifier: Apache-2.0

//! Lexer for the line-oriented configuration language shared by cell
//! configs and platform descriptions.
//!
//! One directive per line. `#` starts a comment outside of quoted strings.
//! A token is either a bare word, a double-quoted string, or `key=value`.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{line}:{col}: {message}")]
pub struct SyntaxError {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

impl SyntaxError {
    pub fn new(line: usize, col: usize, message: impl Into<String>) -> Self {
        Self {
            line,
            col,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TokenKind {
    Word(String),
    Str(String),
    KeyValue(String, String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    pub line: usize,
    pub col: usize,
}

impl Token {
    pub fn err(&self, message: impl Into<String>) -> SyntaxError {
        SyntaxError::new(self.line, self.col, message)
    }

    /// Bare word or quoted string contents.
    pub fn text(&self) -> Result<&str, SyntaxError> {
        match &self.kind {
            TokenKind::Word(s) | TokenKind::Str(s) => Ok(s),
            TokenKind::KeyValue(k, _) => Err(self.err(format!("unexpected `{k}=`"))),
        }
    }

    pub fn word(&self) -> Result<&str, SyntaxError> {
        match &self.kind {
            TokenKind::Word(s) => Ok(s),
            _ => Err(self.err("expected a bare word")),
        }
    }

    pub fn quoted(&self) -> Result<&str, SyntaxError> {
        match &self.kind {
            TokenKind::Str(s) => Ok(s),
            _ => Err(self.err("expected a quoted string")),
        }
    }

    pub fn key_value(&self) -> Result<(&str, &str), SyntaxError> {
        match &self.kind {
            TokenKind::KeyValue(k, v) => Ok((k, v)),
            _ => Err(self.err("expected key=value")),
        }
    }

    pub fn hex(&self) -> Result<u64, SyntaxError> {
        parse_hex(self.word()?).ok_or_else(|| self.err("expected a hexadecimal number"))
    }

    pub fn dec(&self) -> Result<u64, SyntaxError> {
        self.word()?
            .parse()
            .map_err(|_| self.err("expected a decimal number"))
    }

    pub fn list(&self) -> Result<Vec<u32>, SyntaxError> {
        parse_list(self.word()?).map_err(|m| self.err(m))
    }
}

/// A non-empty directive line: the keyword plus its arguments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Directive {
    pub keyword: Token,
    pub args: Vec<Token>,
}

impl Directive {
    pub fn name(&self) -> &str {
        match &self.keyword.kind {
            TokenKind::Word(s) => s,
            _ => "",
        }
    }

    pub fn arity(&self, n: usize) -> Result<&[Token], SyntaxError> {
        if self.args.len() != n {
            return Err(self.keyword.err(format!(
                "`{}` takes {n} argument(s), got {}",
                self.name(),
                self.args.len()
            )));
        }
        Ok(&self.args)
    }

    /// Looks up the value of `key=` among the arguments.
    pub fn kv(&self, key: &str) -> Result<Option<&Token>, SyntaxError> {
        let mut found = None;
        for tok in &self.args {
            let (k, _) = tok.key_value()?;
            if k == key {
                if found.is_some() {
                    return Err(tok.err(format!("duplicate `{key}=`")));
                }
                found = Some(tok);
            }
        }
        Ok(found)
    }

    pub fn require_kv(&self, key: &str) -> Result<&str, SyntaxError> {
        match self.kv(key)? {
            Some(t) => Ok(t.key_value()?.1),
            None => Err(self.keyword.err(format!("`{}` requires `{key}=`", self.name()))),
        }
    }

    /// Rejects any key not in `allowed`.
    pub fn only_keys(&self, allowed: &[&str]) -> Result<(), SyntaxError> {
        for tok in &self.args {
            let (k, _) = tok.key_value()?;
            if !allowed.contains(&k) {
                return Err(tok.err(format!("unknown key `{k}`")));
            }
        }
        Ok(())
    }
}

pub fn parse_hex(s: &str) -> Option<u64> {
    let digits = s
        .strip_prefix("0x")
        .or_else(|| s.strip_prefix("0X"))
        .unwrap_or(s);
    let digits: String = digits.chars().filter(|&c| c != '_').collect();
    if digits.is_empty() {
        return None;
    }
    u64::from_str_radix(&digits, 16).ok()
}

/// Parses `2,3` or `32-159,200` into ascending, de-duplicated numbers.
pub fn parse_list(s: &str) -> Result<Vec<u32>, String> {
    let mut out = Vec::new();
    for part in s.split(',') {
        let num = |t: &str| {
            t.parse::<u32>()
                .map_err(|_| format!("bad list element `{t}`"))
        };
        match part.split_once('-') {
            Some((lo, hi)) => {
                let (lo, hi) = (num(lo)?, num(hi)?);
                if lo > hi {
                    return Err(format!("empty range `{part}`"));
                }
                out.extend(lo..=hi);
            }
            None => out.push(num(part)?),
        }
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// Formats ascending numbers back into the compact list syntax.
pub fn format_list(values: impl IntoIterator<Item = u32>) -> String {
    let mut parts = Vec::new();
    let mut iter = values.into_iter().peekable();
    while let Some(start) = iter.next() {
        let mut end = start;
        while iter.peek() == Some(&(end.wrapping_add(1))) {
            end = iter.next().unwrap();
        }
        parts.push(if start == end {
            start.to_string()
        } else {
            format!("{start}-{end}")
        });
    }
    parts.join(",")
}

pub fn tokenize(text: &str) -> Result<Vec<Directive>, SyntaxError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let mut tokens = tokenize_line(raw, idx + 1)?;
        if tokens.is_empty() {
            continue;
        }
        let keyword = tokens.remove(0);
        if !matches!(keyword.kind, TokenKind::Word(_)) {
            return Err(keyword.err("expected a directive keyword"));
        }
        out.push(Directive {
            keyword,
            args: tokens,
        });
    }
    Ok(out)
}

fn tokenize_line(raw: &str, line: usize) -> Result<Vec<Token>, SyntaxError> {
    let chars: Vec<char> = raw.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c == '#' {
            break;
        }
        let col = i + 1;
        if c == '"' {
            let (s, next) = read_quoted(&chars, i, line)?;
            tokens.push(Token {
                kind: TokenKind::Str(s),
                line,
                col,
            });
            i = next;
            continue;
        }
        let start = i;
        while i < chars.len() && !chars[i].is_whitespace() && chars[i] != '#' && chars[i] != '"' {
            i += 1;
        }
        let word: String = chars[start..i].iter().collect();
        let kind = match word.split_once('=') {
            Some(("", _)) => {
                return Err(SyntaxError::new(line, col, "empty key before `=`"));
            }
            Some((k, v)) => {
                let mut v = v.to_string();
                if v.is_empty() && i < chars.len() && chars[i] == '"' {
                    let (s, next) = read_quoted(&chars, i, line)?;
                    v = s;
                    i = next;
                }
                TokenKind::KeyValue(k.to_string(), v)
            }
            None => TokenKind::Word(word),
        };
        tokens.push(Token { kind, line, col });
    }
    Ok(tokens)
}

fn read_quoted(chars: &[char], open: usize, line: usize) -> Result<(String, usize), SyntaxError> {
    let mut s = String::new();
    let mut i = open + 1;
    while i < chars.len() {
        match chars[i] {
            '"' => return Ok((s, i + 1)),
            '\\' if i + 1 < chars.len() => {
                s.push(chars[i + 1]);
                i += 2;
            }
            c => {
                s.push(c);
                i += 1;
            }
        }
    }
    Err(SyntaxError::new(line, open + 1, "unterminated string"))
}

/// Quotes `s` so that [`tokenize`] reads it back verbatim.
pub fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        if c == '"' || c == '\\' {
            out.push('\\');
        }
        out.push(c);
    }
    out.push('"');
    out
}
