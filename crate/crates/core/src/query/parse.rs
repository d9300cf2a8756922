//! Text form of queries.
//!
//! ```text
//! expr      := name | translate | intersect | union
//! translate := "(" expr relation ")"
//! intersect := "(" expr ("&" expr)+ ")"
//! union     := "(" expr ("|" expr)+ ")"
//! ```
//!
//! Names are bare runs of characters other than whitespace, parentheses,
//! `&`, `|` and `"`, or double-quoted strings with `\"` and `\\` escapes.

use super::{QueryDag, QueryExpr};
use crate::error::{Error, Result};
use crate::kg::Vocab;

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Open,
    Close,
    And,
    Or,
    Name(String),
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn syntax(offset: usize, message: impl Into<String>) -> Error {
        Error::QuerySyntax {
            offset,
            message: message.into(),
        }
    }

    fn skip_ws(&mut self) {
        let rest = &self.src[self.pos..];
        self.pos += rest.len() - rest.trim_start().len();
    }

    /// Next token and its starting byte offset; `None` at end of input.
    fn next(&mut self) -> Result<Option<(Token, usize)>> {
        self.skip_ws();
        let start = self.pos;
        let Some(c) = self.src[start..].chars().next() else {
            return Ok(None);
        };
        let tok = match c {
            '(' => Token::Open,
            ')' => Token::Close,
            '&' => Token::And,
            '|' => Token::Or,
            '"' => {
                let mut name = String::new();
                let mut chars = self.src[start + 1..].char_indices();
                loop {
                    match chars.next() {
                        None => return Err(Self::syntax(start, "unterminated quoted name")),
                        Some((i, '"')) => {
                            self.pos = start + 1 + i + 1;
                            break;
                        }
                        Some((i, '\\')) => match chars.next() {
                            Some((_, e @ ('"' | '\\'))) => name.push(e),
                            _ => return Err(Self::syntax(start + 1 + i, "invalid escape")),
                        },
                        Some((_, ch)) => name.push(ch),
                    }
                }
                return Ok(Some((Token::Name(name), start)));
            }
            _ => {
                let len = self.src[start..]
                    .find(|ch: char| ch.is_whitespace() || "()&|\"".contains(ch))
                    .unwrap_or(self.src.len() - start);
                self.pos = start + len;
                return Ok(Some((
                    Token::Name(self.src[start..start + len].to_owned()),
                    start,
                )));
            }
        };
        self.pos = start + c.len_utf8();
        Ok(Some((tok, start)))
    }

    fn peek(&mut self) -> Result<Option<(Token, usize)>> {
        let saved = self.pos;
        let t = self.next();
        self.pos = saved;
        t
    }
}

struct Parser<'a> {
    lexer: Lexer<'a>,
    entities: &'a Vocab,
    relations: &'a Vocab,
}

impl Parser<'_> {
    fn expect_any(&mut self, what: &str) -> Result<(Token, usize)> {
        let end = self.lexer.src.len();
        self.lexer
            .next()?
            .ok_or_else(|| Lexer::syntax(end, format!("unexpected end of input, expected {what}")))
    }

    fn expr(&mut self) -> Result<QueryExpr> {
        match self.expect_any("an entity name or `(`")? {
            (Token::Name(name), _) => self
                .entities
                .id(&name)
                .map(QueryExpr::Anchor)
                .ok_or(Error::UnknownName {
                    kind: "entity",
                    name,
                }),
            (Token::Open, _) => self.group(),
            (_, at) => Err(Lexer::syntax(at, "expected an entity name or `(`")),
        }
    }

    /// Everything after an opening parenthesis.
    fn group(&mut self) -> Result<QueryExpr> {
        let first = self.expr()?;
        match self.expect_any("a relation name, `&` or `|`")? {
            (Token::Name(name), _) => {
                let r = self.relations.id(&name).ok_or(Error::UnknownName {
                    kind: "relation",
                    name,
                })?;
                match self.expect_any("`)`")? {
                    (Token::Close, _) => Ok(first.hop(r)),
                    (_, at) => Err(Lexer::syntax(at, "expected `)` after relation name")),
                }
            }
            (op @ (Token::And | Token::Or), _) => {
                let mut operands = vec![first, self.expr()?];
                loop {
                    match self.expect_any("`)`")? {
                        (Token::Close, _) => break,
                        (t, _) if t == op => operands.push(self.expr()?),
                        (_, at) => {
                            return Err(Lexer::syntax(
                                at,
                                "cannot mix `&` and `|` in one group; add parentheses",
                            ))
                        }
                    }
                }
                Ok(if op == Token::And {
                    QueryExpr::Intersect(operands)
                } else {
                    QueryExpr::Union(operands)
                })
            }
            (_, at) => Err(Lexer::syntax(at, "expected a relation name, `&` or `|`")),
        }
    }
}

pub fn parse_query(text: &str, entities: &Vocab, relations: &Vocab) -> Result<QueryDag> {
    let mut parser = Parser {
        lexer: Lexer { src: text, pos: 0 },
        entities,
        relations,
    };
    let expr = parser.expr()?;
    if let Some((_, at)) = parser.lexer.peek()? {
        return Err(Lexer::syntax(at, "trailing input after query"));
    }
    QueryDag::from_expr(&expr)
}

fn needs_quotes(name: &str) -> bool {
    name.is_empty()
        || name
            .chars()
            .any(|c| c.is_whitespace() || "()&|\"\\".contains(c))
}

fn push_name(out: &mut String, name: &str) {
    if needs_quotes(name) {
        out.push('"');
        for c in name.chars() {
            if c == '"' || c == '\\' {
                out.push('\\');
            }
            out.push(c);
        }
        out.push('"');
    } else {
        out.push_str(name);
    }
}

/// Canonical text form: single spaces, ` & ` and ` | ` separators.
pub fn serialize_query(dag: &QueryDag, entities: &Vocab, relations: &Vocab) -> Result<String> {
    fn write(e: &QueryExpr, ents: &Vocab, rels: &Vocab, out: &mut String) -> Result<()> {
        match e {
            QueryExpr::Anchor(id) => push_name(
                out,
                ents.name(*id).ok_or(Error::IdOutOfRange {
                    kind: "entity",
                    id: *id,
                    size: ents.len(),
                })?,
            ),
            QueryExpr::Translate(child, r) => {
                out.push('(');
                write(child, ents, rels, out)?;
                out.push(' ');
                push_name(
                    out,
                    rels.name(*r).ok_or(Error::IdOutOfRange {
                        kind: "relation",
                        id: *r,
                        size: rels.len(),
                    })?,
                );
                out.push(')');
            }
            QueryExpr::Intersect(cs) | QueryExpr::Union(cs) => {
                let sep = if matches!(e, QueryExpr::Intersect(_)) {
                    " & "
                } else {
                    " | "
                };
                out.push('(');
                for (i, c) in cs.iter().enumerate() {
                    if i > 0 {
                        out.push_str(sep);
                    }
                    write(c, ents, rels, out)?;
                }
                out.push(')');
            }
        }
        Ok(())
    }
    let mut out = String::new();
    write(&dag.to_expr(), entities, relations, &mut out)?;
    Ok(out)
}
