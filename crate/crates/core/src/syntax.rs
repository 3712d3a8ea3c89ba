//! Tokenizer shared by the domain, problem, state and plan readers.

use std::collections::BTreeSet;

use crate::atom::Atom;
use crate::error::ParseError;

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) enum Token {
    LParen,
    RParen,
    LBrace,
    RBrace,
    Pipe,
    Arrow,
    /// `:name`, lower-cased, without the colon.
    Keyword(String),
    /// `?name`, lower-cased, with the question mark.
    Var(String),
    Word(String),
}

impl Token {
    fn describe(&self) -> String {
        match self {
            Token::LParen => "`(`".into(),
            Token::RParen => "`)`".into(),
            Token::LBrace => "`{`".into(),
            Token::RBrace => "`}`".into(),
            Token::Pipe => "`|`".into(),
            Token::Arrow => "`=>`".into(),
            Token::Keyword(k) => format!("`:{k}`"),
            Token::Var(v) => format!("`{v}`"),
            Token::Word(w) => format!("`{w}`"),
        }
    }
}

pub(crate) fn is_name_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '-' || c == '_'
}

pub(crate) struct Lexer<'a> {
    text: &'a str,
    pos: usize,
    peeked: Option<(usize, Token)>,
}

impl<'a> Lexer<'a> {
    pub(crate) fn new(text: &'a str) -> Self {
        Lexer {
            text,
            pos: 0,
            peeked: None,
        }
    }

    pub(crate) fn offset(&self) -> usize {
        self.peeked.as_ref().map(|(o, _)| *o).unwrap_or(self.pos)
    }

    fn skip_trivia(&mut self) {
        let bytes = self.text.as_bytes();
        while self.pos < bytes.len() {
            match bytes[self.pos] {
                b' ' | b'\t' | b'\n' | b'\r' => self.pos += 1,
                b';' => {
                    while self.pos < bytes.len() && bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
    }

    fn scan_name(&mut self) -> String {
        let start = self.pos;
        let rest = &self.text[start..];
        let len = rest
            .char_indices()
            .find(|(_, c)| !is_name_char(*c))
            .map(|(i, _)| i)
            .unwrap_or(rest.len());
        self.pos += len;
        rest[..len].to_ascii_lowercase()
    }

    fn lex(&mut self) -> Result<Option<(usize, Token)>, ParseError> {
        self.skip_trivia();
        let start = self.pos;
        let Some(c) = self.text[start..].chars().next() else {
            return Ok(None);
        };
        let token = match c {
            '(' => {
                self.pos += 1;
                Token::LParen
            }
            ')' => {
                self.pos += 1;
                Token::RParen
            }
            '{' => {
                self.pos += 1;
                Token::LBrace
            }
            '}' => {
                self.pos += 1;
                Token::RBrace
            }
            '|' => {
                self.pos += 1;
                Token::Pipe
            }
            '=' if self.text[start..].starts_with("=>") => {
                self.pos += 2;
                Token::Arrow
            }
            ':' | '?' => {
                self.pos += 1;
                let name = self.scan_name();
                if name.is_empty() {
                    return Err(ParseError::syntax(start, "a name after the sigil"));
                }
                if c == ':' {
                    Token::Keyword(name)
                } else {
                    Token::Var(format!("?{name}"))
                }
            }
            c if is_name_char(c) => Token::Word(self.scan_name()),
            _ => return Err(ParseError::syntax(start, "a token")),
        };
        Ok(Some((start, token)))
    }

    pub(crate) fn peek(&mut self) -> Result<Option<&(usize, Token)>, ParseError> {
        if self.peeked.is_none() {
            self.peeked = self.lex()?;
        }
        Ok(self.peeked.as_ref())
    }

    pub(crate) fn next(&mut self) -> Result<Option<(usize, Token)>, ParseError> {
        match self.peeked.take() {
            Some(t) => Ok(Some(t)),
            None => self.lex(),
        }
    }

    pub(crate) fn peek_is(&mut self, token: &Token) -> Result<bool, ParseError> {
        Ok(matches!(self.peek()?, Some((_, t)) if t == token))
    }

    pub(crate) fn expect(&mut self, token: Token) -> Result<usize, ParseError> {
        let offset = self.offset();
        match self.next()? {
            Some((at, t)) if t == token => Ok(at),
            Some((at, _)) => Err(ParseError::syntax(at, token.describe())),
            None => Err(ParseError::syntax(offset, token.describe())),
        }
    }

    pub(crate) fn keyword(&mut self, name: &str) -> Result<(), ParseError> {
        self.expect(Token::Keyword(name.to_string())).map(|_| ())
    }

    pub(crate) fn word(&mut self, what: &str) -> Result<String, ParseError> {
        let offset = self.offset();
        match self.next()? {
            Some((_, Token::Word(w))) => Ok(w),
            Some((at, _)) => Err(ParseError::syntax(at, what)),
            None => Err(ParseError::syntax(offset, what)),
        }
    }

    pub(crate) fn int(&mut self) -> Result<usize, ParseError> {
        let offset = self.offset();
        let w = self.word("an integer")?;
        w.parse()
            .map_err(|_| ParseError::syntax(offset, "an integer"))
    }

    /// `( NAME NAME* )` with ground arguments only.
    pub(crate) fn atom(&mut self) -> Result<Atom, ParseError> {
        self.expect(Token::LParen)?;
        let predicate = self.word("a predicate name")?;
        let mut args = Vec::new();
        loop {
            let offset = self.offset();
            match self.next()? {
                Some((_, Token::RParen)) => break,
                Some((_, Token::Word(w))) => args.push(w),
                Some((at, _)) => return Err(ParseError::syntax(at, "an object name or `)`")),
                None => return Err(ParseError::syntax(offset, "an object name or `)`")),
            }
        }
        Ok(Atom::new(predicate, args))
    }

    /// `{ atom* }`
    pub(crate) fn atom_set(&mut self) -> Result<BTreeSet<Atom>, ParseError> {
        self.expect(Token::LBrace)?;
        let mut atoms = BTreeSet::new();
        while !self.peek_is(&Token::RBrace)? {
            if self.peek()?.is_none() {
                return Err(ParseError::syntax(self.offset(), "`}`"));
            }
            atoms.insert(self.atom()?);
        }
        self.expect(Token::RBrace)?;
        Ok(atoms)
    }

    pub(crate) fn at_end(&mut self) -> Result<bool, ParseError> {
        Ok(self.peek()?.is_none())
    }

    pub(crate) fn expect_end(&mut self) -> Result<(), ParseError> {
        match self.peek()? {
            None => Ok(()),
            Some((at, _)) => Err(ParseError::syntax(*at, "end of input")),
        }
    }
}
