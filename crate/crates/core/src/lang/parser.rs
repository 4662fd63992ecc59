//! Recursive-descent parser. Precedence, loosest first:
//! `->` (right-associative), `xor`, `or`, `and`, `not`.

use super::ast::{ConstraintAst, Expr};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Eq,
    Arrow,
    LParen,
    RParen,
    And,
    Or,
    Xor,
    Not,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier {s:?}"),
            Tok::Eq => "'='".into(),
            Tok::Arrow => "'->'".into(),
            Tok::LParen => "'('".into(),
            Tok::RParen => "')'".into(),
            Tok::And => "'and'".into(),
            Tok::Or => "'or'".into(),
            Tok::Xor => "'xor'".into(),
            Tok::Not => "'not'".into(),
        }
    }
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b' ' | b'\t' | b'\r' | b'\n' => i += 1,
            b'=' => {
                out.push((Tok::Eq, i));
                i += 1;
            }
            b'(' => {
                out.push((Tok::LParen, i));
                i += 1;
            }
            b')' => {
                out.push((Tok::RParen, i));
                i += 1;
            }
            b'-' if bytes.get(i + 1) == Some(&b'>') => {
                out.push((Tok::Arrow, i));
                i += 2;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                let word = &src[start..i];
                let tok = match word {
                    "and" => Tok::And,
                    "or" => Tok::Or,
                    "xor" => Tok::Xor,
                    "not" => Tok::Not,
                    _ => Tok::Ident(word.to_string()),
                };
                out.push((tok, start));
            }
            _ => {
                let ch = src[i..].chars().next().unwrap();
                return Err(Error::Syntax {
                    offset: i,
                    message: format!("unexpected character {ch:?}"),
                });
            }
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |&(_, o)| o)
    }

    fn error<T>(&self, expected: &str) -> Result<T> {
        let found = match self.peek() {
            Some(t) => t.describe(),
            None => "end of input".into(),
        };
        Err(Error::Syntax {
            offset: self.offset(),
            message: format!("expected {expected}, found {found}"),
        })
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == Some(tok) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn implication(&mut self) -> Result<Expr> {
        let lhs = self.xor()?;
        if self.eat(&Tok::Arrow) {
            let rhs = self.implication()?;
            Ok(Expr::implies(lhs, rhs))
        } else {
            Ok(lhs)
        }
    }

    fn xor(&mut self) -> Result<Expr> {
        let mut lhs = self.disjunction()?;
        while self.eat(&Tok::Xor) {
            lhs = Expr::xor(lhs, self.disjunction()?);
        }
        Ok(lhs)
    }

    fn disjunction(&mut self) -> Result<Expr> {
        let mut lhs = self.conjunction()?;
        while self.eat(&Tok::Or) {
            lhs = Expr::or(lhs, self.conjunction()?);
        }
        Ok(lhs)
    }

    fn conjunction(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        while self.eat(&Tok::And) {
            lhs = Expr::and(lhs, self.unary()?);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat(&Tok::Not) {
            return Ok(Expr::not(self.unary()?));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Expr> {
        let offset = self.offset();
        match self.peek().cloned() {
            Some(Tok::LParen) => {
                self.pos += 1;
                let e = self.implication()?;
                if !self.eat(&Tok::RParen) {
                    return self.error("')'");
                }
                Ok(e)
            }
            Some(Tok::Ident(concept)) => {
                self.pos += 1;
                let value = if self.eat(&Tok::Eq) {
                    match self.peek().cloned() {
                        Some(Tok::Ident(v)) => {
                            self.pos += 1;
                            Some(v)
                        }
                        _ => return self.error("a value after '='"),
                    }
                } else {
                    None
                };
                Ok(Expr::Atom {
                    concept,
                    value,
                    offset,
                })
            }
            _ => self.error("a concept, 'not' or '('"),
        }
    }
}

/// Parses one constraint.
pub fn parse(source: &str) -> Result<ConstraintAst> {
    let toks = lex(source)?;
    if toks.is_empty() {
        return Err(Error::Syntax {
            offset: 0,
            message: "empty constraint".into(),
        });
    }
    let mut p = Parser {
        toks,
        pos: 0,
        end: source.len(),
    };
    let expr = p.implication()?;
    if p.pos < p.toks.len() {
        return p.error("end of input");
    }
    Ok(ConstraintAst {
        expr,
        source: source.trim().to_string(),
    })
}

/// One constraint line of a knowledge-base file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceLine {
    /// 1-based line number.
    pub line: usize,
    /// Byte offset of `text` within the line.
    pub start: usize,
    pub text: String,
}

/// Splits a constraint file into constraint lines, dropping blank lines and
/// `#` comments.
pub fn constraint_lines(text: &str) -> Vec<SourceLine> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let body = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        };
        let trimmed = body.trim();
        if trimmed.is_empty() {
            continue;
        }
        let start = body.len() - body.trim_start().len();
        out.push(SourceLine {
            line: i + 1,
            start,
            text: trimmed.to_string(),
        });
    }
    out
}

/// Parses every constraint of a file, attaching line and column to errors.
pub fn parse_file(text: &str) -> Result<Vec<ConstraintAst>> {
    constraint_lines(text)
        .into_iter()
        .map(|l| parse(&l.text).map_err(|e| at_line(&l, e)))
        .collect()
}

pub(crate) fn at_line(line: &SourceLine, err: Error) -> Error {
    let offset = match &err {
        Error::Syntax { offset, .. } | Error::Compile { offset, .. } => *offset,
        _ => 0,
    };
    Error::AtLine {
        line: line.line,
        column: line.start + offset + 1,
        source: Box::new(err),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> Expr {
        parse(s).unwrap().expr
    }

    #[test]
    fn stop_sign_rule() {
        assert_eq!(
            p("class=stop_sign -> color=red and shape=octagon"),
            Expr::implies(
                Expr::atom("class", "stop_sign"),
                Expr::and(Expr::atom("color", "red"), Expr::atom("shape", "octagon"))
            )
        );
    }

    #[test]
    fn negated_branch_tree() {
        let e = p("class=stop -> not color=blue and is_octagon");
        assert_eq!(
            e,
            Expr::implies(
                Expr::atom("class", "stop"),
                Expr::and(Expr::not(Expr::atom("color", "blue")), Expr::bare("is_octagon"))
            )
        );
        assert_eq!(e.depth(), 3);
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(p("not a and b"), Expr::and(Expr::not(Expr::bare("a")), Expr::bare("b")));
        assert_eq!(
            p("a -> b -> c"),
            Expr::implies(Expr::bare("a"), Expr::implies(Expr::bare("b"), Expr::bare("c")))
        );
        assert_eq!(
            p("a or b and c xor d"),
            Expr::xor(
                Expr::or(Expr::bare("a"), Expr::and(Expr::bare("b"), Expr::bare("c"))),
                Expr::bare("d")
            )
        );
        assert_eq!(
            p("a and b and c"),
            Expr::and(Expr::and(Expr::bare("a"), Expr::bare("b")), Expr::bare("c"))
        );
        assert_eq!(
            p("(a -> b) -> c"),
            Expr::implies(Expr::implies(Expr::bare("a"), Expr::bare("b")), Expr::bare("c"))
        );
        assert_eq!(p("not not a"), Expr::not(Expr::not(Expr::bare("a"))));
    }

    #[test]
    fn syntax_errors_carry_offsets() {
        match parse("color=") {
            Err(Error::Syntax { offset, .. }) => assert_eq!(offset, 6),
            other => panic!("{other:?}"),
        }
        match parse("a and ") {
            Err(Error::Syntax { offset, .. }) => assert_eq!(offset, 6),
            other => panic!("{other:?}"),
        }
        match parse("a $ b") {
            Err(Error::Syntax { offset, .. }) => assert_eq!(offset, 2),
            other => panic!("{other:?}"),
        }
        match parse("(a or b") {
            Err(Error::Syntax { offset, .. }) => assert_eq!(offset, 7),
            other => panic!("{other:?}"),
        }
        assert!(parse("a b").is_err());
        assert!(parse("and=x").is_err());
        assert!(parse("a - b").is_err());
        assert!(matches!(parse("   "), Err(Error::Syntax { .. })));
    }

    #[test]
    fn keywords_are_case_sensitive() {
        assert_eq!(p("AND"), Expr::bare("AND"));
        assert!(parse("a AND b").is_err());
    }

    #[test]
    fn file_lines_and_comments() {
        let text = "# header\n\n  a -> b  # trailing\nnot c\n";
        let lines = constraint_lines(text);
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0].line, 3);
        assert_eq!(lines[0].start, 2);
        assert_eq!(lines[0].text, "a -> b");
        assert_eq!(parse_file(text).unwrap().len(), 2);

        match parse_file("a\n  b and\n") {
            Err(Error::AtLine { line, column, .. }) => assert_eq!((line, column), (2, 8)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn printer_minimal_parens() {
        for s in [
            "a -> b -> c",
            "(a -> b) -> c",
            "not (a and b)",
            "a and (b or c)",
            "a xor b xor c",
            "a xor (b xor c)",
            "class=stop -> not color=blue and is_octagon",
        ] {
            assert_eq!(p(s).to_string(), s);
        }
    }
}
