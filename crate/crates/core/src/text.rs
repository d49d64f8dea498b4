//! Line-oriented directive lexer shared by every textual format in the
//! workspace (schemas, automaton specs, policies, broker configs, scripts).
//!
//! A line is a keyword followed by whitespace-separated arguments. A token
//! starting with `#` begins a comment that runs to the end of the line.

use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Directive {
    /// 1-based line number in the source text.
    pub line: usize,
    pub keyword: String,
    pub args: Vec<String>,
}

impl Directive {
    pub fn error(&self, message: impl Into<String>) -> ParseError {
        ParseError::new(self.line, message)
    }

    /// Requires exactly `n` arguments.
    pub fn exact(&self, n: usize) -> Result<&[String], ParseError> {
        if self.args.len() != n {
            return Err(self.error(format!(
                "`{}` takes {} argument(s), got {}",
                self.keyword,
                n,
                self.args.len()
            )));
        }
        Ok(&self.args)
    }

    /// Requires at least `n` arguments.
    pub fn at_least(&self, n: usize) -> Result<&[String], ParseError> {
        if self.args.len() < n {
            return Err(self.error(format!(
                "`{}` takes at least {} argument(s), got {}",
                self.keyword,
                n,
                self.args.len()
            )));
        }
        Ok(&self.args)
    }
}

impl fmt::Display for Directive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.keyword)?;
        for a in &self.args {
            write!(f, " {a}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

impl ParseError {
    pub fn new(line: usize, message: impl Into<String>) -> Self {
        Self {
            line,
            message: message.into(),
        }
    }
}

/// Splits `text` into directives, dropping blank lines and comments.
pub fn lex(text: &str) -> Vec<Directive> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let mut tokens = raw
            .split_whitespace()
            .take_while(|t| !t.starts_with('#'))
            .map(str::to_owned);
        if let Some(keyword) = tokens.next() {
            out.push(Directive {
                line: idx + 1,
                keyword,
                args: tokens.collect(),
            });
        }
    }
    out
}

/// Splits a block of directives introduced by `header` and terminated by a
/// line reading `end`. Returns the body and the remaining directives.
pub fn take_block<'a>(
    header: &Directive,
    rest: &'a [Directive],
) -> Result<(&'a [Directive], &'a [Directive]), ParseError> {
    match rest.iter().position(|d| d.keyword == "end") {
        Some(end) => {
            if !rest[end].args.is_empty() {
                return Err(rest[end].error("`end` takes no arguments"));
            }
            Ok((&rest[..end], &rest[end + 1..]))
        }
        None => Err(header.error(format!("unterminated `{}` block", header.keyword))),
    }
}
