//! Recursive-descent parser for the textual PST syntax.
//!
//! ```text
//! type    = "end" | rec | var | choice | branch | "(" type ")"
//! rec     = "rec" IDENT "." type
//! choice  = ("+" | "&") "{" branch { "," branch } "}"
//! branch  = ("!" | "?") IDENT "(" [ IDENT ":" sort ] ")" "[" PROB "]" "." type
//! ```
//!
//! A file may name its type with a leading `IDENT "="`, as in
//! `S_game = rec X. ...`; the name is ignored. Whitespace and `//` line comments are ignored.

use thiserror::Error;

use super::ast::{
    Branch, Choice, ChoiceKind, Payload, Polarity, Probability, ProbabilityError, SessionType,
    Sort, Span,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("{span}: {message}")]
    Syntax { span: Span, message: String },
    #[error("{span}: unknown sort `{name}` (expected Int, String or Bool)")]
    UnknownSort { span: Span, name: String },
    #[error("{span}: malformed probability literal `{text}`")]
    MalformedProbability { span: Span, text: String },
    #[error("{span}: probability `{text}` is outside [0, 1]")]
    ProbabilityOutOfRange { span: Span, text: String },
    #[error("{span}: a message carries at most one payload")]
    MultiplePayloads { span: Span },
}

impl ParseError {
    pub fn span(&self) -> Span {
        match self {
            ParseError::Syntax { span, .. }
            | ParseError::UnknownSort { span, .. }
            | ParseError::MalformedProbability { span, .. }
            | ParseError::ProbabilityOutOfRange { span, .. }
            | ParseError::MultiplePayloads { span } => *span,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(String),
    Sym(char),
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Number(s) => format!("number `{s}`"),
            Tok::Sym(c) => format!("`{c}`"),
            Tok::Eof => "end of input".to_string(),
        }
    }
}

const SYMBOLS: &[char] = &[
    '+', '&', '{', '}', '(', ')', '[', ']', ',', '.', '!', '?', ':', '=',
];

fn lex(source: &str) -> Result<Vec<(Tok, Span)>, ParseError> {
    let mut toks = Vec::new();
    let mut chars = source.chars().peekable();
    let (mut line, mut col) = (1u32, 1u32);

    while let Some(&c) = chars.peek() {
        let span = Span::new(line, col);
        if c == '\n' {
            chars.next();
            line += 1;
            col = 1;
        } else if c.is_whitespace() {
            chars.next();
            col += 1;
        } else if c == '/' {
            chars.next();
            col += 1;
            if chars.peek() != Some(&'/') {
                return Err(ParseError::Syntax {
                    span,
                    message: "unexpected `/`".into(),
                });
            }
            while let Some(&c) = chars.peek() {
                if c == '\n' {
                    break;
                }
                chars.next();
            }
        } else if c.is_ascii_alphabetic() {
            let mut ident = String::new();
            while let Some(&c) = chars.peek() {
                if c.is_ascii_alphanumeric() || c == '_' {
                    ident.push(c);
                    chars.next();
                    col += 1;
                } else {
                    break;
                }
            }
            toks.push((Tok::Ident(ident), span));
        } else if c.is_ascii_digit() || c == '-' {
            // Greedy so that `0.7.5` or `0.5x` surface as one malformed literal.
            let mut text = String::new();
            while let Some(&c) = chars.peek() {
                if c.is_ascii_alphanumeric() || c == '.' || c == '-' || c == '_' {
                    text.push(c);
                    chars.next();
                    col += 1;
                } else {
                    break;
                }
            }
            toks.push((Tok::Number(text), span));
        } else if SYMBOLS.contains(&c) {
            chars.next();
            col += 1;
            toks.push((Tok::Sym(c), span));
        } else {
            return Err(ParseError::Syntax {
                span,
                message: format!("unexpected character `{c}`"),
            });
        }
    }
    toks.push((Tok::Eof, Span::new(line, col)));
    Ok(toks)
}

struct Parser {
    toks: Vec<(Tok, Span)>,
    pos: usize,
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

    fn unexpected<T>(&self, expected: &str) -> Result<T, ParseError> {
        Err(ParseError::Syntax {
            span: self.span(),
            message: format!("expected {expected}, found {}", self.peek().describe()),
        })
    }

    fn expect_sym(&mut self, c: char) -> Result<Span, ParseError> {
        if *self.peek() == Tok::Sym(c) {
            Ok(self.bump().1)
        } else {
            self.unexpected(&format!("`{c}`"))
        }
    }

    fn expect_ident(&mut self, what: &str) -> Result<(String, Span), ParseError> {
        match self.peek().clone() {
            Tok::Ident(name) if name != "rec" && name != "end" => {
                let span = self.bump().1;
                Ok((name, span))
            }
            _ => self.unexpected(what),
        }
    }

    fn parse_type(&mut self) -> Result<SessionType, ParseError> {
        super::grow(|| self.parse_type_inner())
    }

    fn parse_type_inner(&mut self) -> Result<SessionType, ParseError> {
        let span = self.span();
        match self.peek().clone() {
            Tok::Ident(word) if word == "end" => {
                self.bump();
                Ok(SessionType::End)
            }
            Tok::Ident(word) if word == "rec" => {
                self.bump();
                let (var, _) = self.expect_ident("recursion variable")?;
                self.expect_sym('.')?;
                let body = self.parse_type()?;
                Ok(SessionType::Rec {
                    var,
                    body: Box::new(body),
                    span,
                })
            }
            Tok::Ident(name) => {
                self.bump();
                Ok(SessionType::Var { name, span })
            }
            Tok::Sym('(') => {
                self.bump();
                let inner = self.parse_type()?;
                self.expect_sym(')')?;
                Ok(inner)
            }
            Tok::Sym(c @ ('+' | '&')) => {
                self.bump();
                let kind = if c == '+' {
                    ChoiceKind::Internal
                } else {
                    ChoiceKind::External
                };
                self.expect_sym('{')?;
                let mut branches = vec![self.parse_branch()?];
                while *self.peek() == Tok::Sym(',') {
                    self.bump();
                    branches.push(self.parse_branch()?);
                }
                self.expect_sym('}')?;
                Ok(SessionType::Choice(Choice {
                    kind,
                    branches,
                    span,
                }))
            }
            Tok::Sym('!' | '?') => {
                let branch = self.parse_branch()?;
                Ok(SessionType::Choice(Choice {
                    kind: ChoiceKind::for_polarity(branch.polarity),
                    branches: vec![branch],
                    span,
                }))
            }
            _ => self.unexpected("a session type"),
        }
    }

    fn parse_branch(&mut self) -> Result<Branch, ParseError> {
        let span = self.span();
        let polarity = match self.peek() {
            Tok::Sym('!') => Polarity::Send,
            Tok::Sym('?') => Polarity::Receive,
            _ => return self.unexpected("`!` or `?`"),
        };
        self.bump();
        let (label, _) = self.expect_ident("message label")?;
        self.expect_sym('(')?;
        let payload = if let Tok::Ident(_) = self.peek() {
            let (var, _) = self.expect_ident("payload variable")?;
            self.expect_sym(':')?;
            let sort_span = self.span();
            let sort = match self.bump().0 {
                Tok::Ident(name) => Sort::from_name(&name).ok_or(ParseError::UnknownSort {
                    span: sort_span,
                    name,
                })?,
                other => {
                    return Err(ParseError::Syntax {
                        span: sort_span,
                        message: format!("expected sort, found {}", other.describe()),
                    })
                }
            };
            Some(Payload { var, sort })
        } else {
            None
        };
        if *self.peek() == Tok::Sym(',') {
            return Err(ParseError::MultiplePayloads { span: self.span() });
        }
        self.expect_sym(')')?;
        self.expect_sym('[')?;
        let prob_span = self.span();
        let prob = match self.peek().clone() {
            Tok::Number(text) => {
                self.bump();
                Probability::parse(&text).map_err(|e| match e {
                    ProbabilityError::Malformed => ParseError::MalformedProbability {
                        span: prob_span,
                        text,
                    },
                    ProbabilityError::OutOfRange => ParseError::ProbabilityOutOfRange {
                        span: prob_span,
                        text,
                    },
                })?
            }
            other => {
                return Err(ParseError::MalformedProbability {
                    span: prob_span,
                    text: match other {
                        Tok::Ident(s) => s,
                        Tok::Sym(c) => c.to_string(),
                        _ => String::new(),
                    },
                })
            }
        };
        self.expect_sym(']')?;
        self.expect_sym('.')?;
        let cont = self.parse_type()?;
        Ok(Branch {
            polarity,
            label,
            payload,
            prob,
            cont,
            span,
        })
    }
}

/// Parses PST source text into an AST. Well-formedness is checked separately
/// by [`super::validate`].
pub fn parse_pst(source: &str) -> Result<SessionType, ParseError> {
    let mut parser = Parser {
        toks: lex(source)?,
        pos: 0,
    };
    if matches!(parser.peek(), Tok::Ident(_))
        && parser.toks.get(1).is_some_and(|(t, _)| *t == Tok::Sym('='))
    {
        parser.pos = 2;
    }
    let t = parser.parse_type()?;
    if *parser.peek() != Tok::Eof {
        return parser.unexpected("end of input");
    }
    Ok(t)
}
