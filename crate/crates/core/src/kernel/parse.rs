//! Lexer and recursive-descent parser for terms and formulas.
//!
//! Grammar (loosest binding first):
//!
//! ```text
//! formula := implies ("<->" implies)*
//! implies := or ("->" implies)?
//! or      := and ("|" and)*
//! and     := unary ("&" unary)*
//! unary   := "!" unary | "\forall" ident unary | "\exists" ident unary | atom
//! atom    := "true" | "false" | cmp | "(" formula ")"
//! cmp     := "abs" "(" term ")" ("<=" | "<") term
//!          | term rel term (rel term)*
//! term    := prod (("+" | "-") prod)*
//! prod    := neg (("*" | "/") neg)*
//! neg     := "-" neg | pow
//! pow     := primary ("^" nat)?
//! primary := number | ident | "(" term ")"
//! ```
//!
//! An identifier immediately followed by `+` (and not by another operand
//! character) is the post-state variable, e.g. `v+`.

use std::fmt;

use thiserror::Error;

use super::{Formula, Rational, Rel, Term};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{line}:{col}: expected {expected}, found {found}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub expected: String,
    pub found: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Tok {
    Ident(String),
    Num(Rational),
    Str(String),
    Sym(&'static str),
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Num(r) => write!(f, "`{r}`"),
            Tok::Str(s) => write!(f, "\"{s}\""),
            Tok::Sym(s) => write!(f, "`{s}`"),
            Tok::Eof => write!(f, "end of input"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Token {
    pub tok: Tok,
    pub line: usize,
    pub col: usize,
}

// Longest symbols first.
const SYMBOLS: &[&str] = &[
    "<->", "\\forall", "\\exists", ":=", "->", "<=", ">=", "!=", "++", "==", "<", ">", "=", "!",
    "&", "|", "+", "-", "*", "/", "^", "(", ")", "{", "}", "[", "]", ",", ";", "?", ":",
];

const UNICODE: &[(char, &str)] = &[
    ('∀', "\\forall"),
    ('∃', "\\exists"),
    ('∧', "&"),
    ('∨', "|"),
    ('¬', "!"),
    ('≤', "<="),
    ('≥', ">="),
    ('≠', "!="),
    ('→', "->"),
    ('↔', "<->"),
    ('∪', "++"),
];

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '\''
}

pub fn tokenize(src: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let err = |line, col, found: String| ParseError {
        line,
        col,
        expected: "a token".into(),
        found,
    };
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '#' || (c == '/' && chars.get(i + 1) == Some(&'/')) {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let (start_line, start_col) = (line, col);
        let push = |out: &mut Vec<Token>, tok| {
            out.push(Token {
                tok,
                line: start_line,
                col: start_col,
            })
        };
        if is_ident_start(c) {
            let mut j = i;
            while j < chars.len() && is_ident_char(chars[j]) {
                j += 1;
            }
            let mut name: String = chars[i..j].iter().collect();
            let next_is_operand = |k: usize| {
                chars
                    .get(k)
                    .map(|&n| n.is_ascii_alphanumeric() || "_(.+".contains(n))
                    .unwrap_or(false)
            };
            if chars.get(j) == Some(&'+') && !next_is_operand(j + 1) {
                name.push('+');
                j += 1;
            }
            col += j - i;
            i = j;
            push(&mut out, Tok::Ident(name));
            continue;
        }
        if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let mut j = i;
            while j < chars.len() && (chars[j].is_ascii_digit() || chars[j] == '.') {
                j += 1;
            }
            if j < chars.len()
                && (chars[j] == 'e' || chars[j] == 'E')
                && (chars.get(j + 1).is_some_and(|d| d.is_ascii_digit())
                    || (chars.get(j + 1).is_some_and(|s| *s == '-' || *s == '+')
                        && chars.get(j + 2).is_some_and(|d| d.is_ascii_digit())))
            {
                j += 2;
                while j < chars.len() && chars[j].is_ascii_digit() {
                    j += 1;
                }
            }
            let text: String = chars[i..j].iter().collect();
            let r: Rational = text.parse().map_err(|_| err(line, col, format!("`{text}`")))?;
            col += j - i;
            i = j;
            push(&mut out, Tok::Num(r));
            continue;
        }
        if c == '"' {
            let mut j = i + 1;
            while j < chars.len() && chars[j] != '"' && chars[j] != '\n' {
                j += 1;
            }
            if chars.get(j) != Some(&'"') {
                return Err(err(line, col, "unterminated string".into()));
            }
            let text: String = chars[i + 1..j].iter().collect();
            col += j + 1 - i;
            i = j + 1;
            push(&mut out, Tok::Str(text));
            continue;
        }
        if let Some((_, sym)) = UNICODE.iter().find(|(u, _)| *u == c) {
            i += 1;
            col += 1;
            push(&mut out, Tok::Sym(sym));
            continue;
        }
        let rest: String = chars[i..chars.len().min(i + 8)].iter().collect();
        match SYMBOLS.iter().find(|s| rest.starts_with(**s)) {
            Some(sym) => {
                let n = sym.chars().count();
                i += n;
                col += n;
                push(&mut out, Tok::Sym(sym));
            }
            None => return Err(err(line, col, format!("`{c}`"))),
        }
    }
    out.push(Token {
        tok: Tok::Eof,
        line,
        col,
    });
    Ok(out)
}

/// Token cursor with term/formula productions; the model DSL builds on it.
pub struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

impl Parser {
    pub fn new(src: &str) -> Result<Parser, ParseError> {
        Ok(Parser {
            toks: tokenize(src)?,
            pos: 0,
        })
    }

    pub fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    pub fn peek_at(&self, k: usize) -> &Tok {
        let i = (self.pos + k).min(self.toks.len() - 1);
        &self.toks[i].tok
    }

    pub fn position(&self) -> (usize, usize) {
        let t = &self.toks[self.pos];
        (t.line, t.col)
    }

    pub fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    pub fn error(&self, expected: impl Into<String>) -> ParseError {
        let t = &self.toks[self.pos];
        ParseError {
            line: t.line,
            col: t.col,
            expected: expected.into(),
            found: t.tok.to_string(),
        }
    }

    pub fn at_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Sym(x) if *x == s)
    }

    pub fn at_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(x) if x == kw)
    }

    pub fn at_eof(&self) -> bool {
        matches!(self.peek(), Tok::Eof)
    }

    pub fn eat_sym(&mut self, s: &str) -> bool {
        if self.at_sym(s) {
            self.bump();
            true
        } else {
            false
        }
    }

    pub fn eat_keyword(&mut self, kw: &str) -> bool {
        if self.at_keyword(kw) {
            self.bump();
            true
        } else {
            false
        }
    }

    pub fn expect_sym(&mut self, s: &str) -> Result<(), ParseError> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            Err(self.error(format!("`{s}`")))
        }
    }

    pub fn expect_keyword(&mut self, kw: &str) -> Result<(), ParseError> {
        if self.eat_keyword(kw) {
            Ok(())
        } else {
            Err(self.error(format!("`{kw}`")))
        }
    }

    pub fn expect_ident(&mut self) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            _ => Err(self.error("identifier")),
        }
    }

    pub fn expect_number(&mut self) -> Result<Rational, ParseError> {
        let neg = self.eat_sym("-");
        match self.peek().clone() {
            Tok::Num(r) => {
                self.bump();
                Ok(if neg { -r } else { r })
            }
            _ => Err(self.error("number")),
        }
    }

    pub fn expect_string(&mut self) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Str(s) => {
                self.bump();
                Ok(s)
            }
            _ => Err(self.error("string literal")),
        }
    }

    pub fn expect_eof(&mut self) -> Result<(), ParseError> {
        if self.at_eof() {
            Ok(())
        } else {
            Err(self.error("end of input"))
        }
    }

    pub fn formula(&mut self) -> Result<Formula, ParseError> {
        let mut lhs = self.implies()?;
        while self.eat_sym("<->") {
            let rhs = self.implies()?;
            lhs = Formula::iff(lhs, rhs);
        }
        Ok(lhs)
    }

    fn implies(&mut self) -> Result<Formula, ParseError> {
        let lhs = self.or()?;
        if self.eat_sym("->") {
            let rhs = self.implies()?;
            return Ok(Formula::implies(lhs, rhs));
        }
        Ok(lhs)
    }

    fn or(&mut self) -> Result<Formula, ParseError> {
        let mut parts = vec![self.and()?];
        while self.eat_sym("|") {
            parts.push(self.and()?);
        }
        Ok(if parts.len() == 1 { parts.pop().unwrap() } else { Formula::Or(parts) })
    }

    fn and(&mut self) -> Result<Formula, ParseError> {
        let mut parts = vec![self.unary()?];
        while self.eat_sym("&") {
            parts.push(self.unary()?);
        }
        Ok(if parts.len() == 1 { parts.pop().unwrap() } else { Formula::And(parts) })
    }

    fn unary(&mut self) -> Result<Formula, ParseError> {
        if self.eat_sym("!") {
            return Ok(Formula::not(self.unary()?));
        }
        if self.eat_sym("\\forall") {
            let x = self.expect_ident()?;
            return Ok(Formula::forall(x, self.unary()?));
        }
        if self.eat_sym("\\exists") {
            let x = self.expect_ident()?;
            return Ok(Formula::exists(x, self.unary()?));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Formula, ParseError> {
        if self.eat_keyword("true") {
            return Ok(Formula::True);
        }
        if self.eat_keyword("false") {
            return Ok(Formula::False);
        }
        let save = self.pos;
        match self.comparison() {
            Ok(f) => Ok(f),
            Err(cmp_err) => {
                self.pos = save;
                if self.eat_sym("(") {
                    let inner = self.formula();
                    match inner {
                        Ok(f) if self.eat_sym(")") => return Ok(f),
                        _ => {}
                    }
                }
                self.pos = save;
                Err(cmp_err)
            }
        }
    }

    fn relation(&mut self) -> Option<Rel> {
        let rel = match self.peek() {
            Tok::Sym("<") => Rel::Lt,
            Tok::Sym("<=") => Rel::Le,
            Tok::Sym("=") | Tok::Sym("==") => Rel::Eq,
            Tok::Sym("!=") => Rel::Ne,
            Tok::Sym(">=") => Rel::Ge,
            Tok::Sym(">") => Rel::Gt,
            _ => return None,
        };
        self.bump();
        Some(rel)
    }

    fn comparison(&mut self) -> Result<Formula, ParseError> {
        if self.at_keyword("abs") && matches!(self.peek_at(1), Tok::Sym("(")) {
            self.bump();
            self.bump();
            let e = self.term()?;
            self.expect_sym(")")?;
            let rel = match self.relation() {
                Some(r @ (Rel::Le | Rel::Lt)) => r,
                _ => return Err(self.error("`<=` or `<` after abs(...)")),
            };
            let t = self.term()?;
            return Ok(Formula::And(vec![
                Formula::cmp(t.clone().neg(), rel, e.clone()),
                Formula::cmp(e, rel, t),
            ]));
        }
        let mut lhs = self.term()?;
        let mut parts = Vec::new();
        let Some(mut rel) = self.relation() else {
            return Err(self.error("comparison operator"));
        };
        loop {
            let rhs = self.term()?;
            parts.push(Formula::cmp(lhs, rel, rhs.clone()));
            lhs = rhs;
            match self.relation() {
                Some(r) => rel = r,
                None => break,
            }
        }
        Ok(if parts.len() == 1 { parts.pop().unwrap() } else { Formula::And(parts) })
    }

    pub fn term(&mut self) -> Result<Term, ParseError> {
        let mut lhs = self.prod()?;
        loop {
            if self.eat_sym("+") {
                lhs = lhs.add(self.prod()?);
            } else if self.eat_sym("-") {
                lhs = lhs.sub(self.prod()?);
            } else {
                return Ok(lhs);
            }
        }
    }

    fn prod(&mut self) -> Result<Term, ParseError> {
        let mut lhs = self.neg()?;
        loop {
            if self.eat_sym("*") {
                lhs = lhs.mul(self.neg()?);
            } else if self.eat_sym("/") {
                lhs = lhs.div(self.neg()?);
            } else {
                return Ok(lhs);
            }
        }
    }

    fn neg(&mut self) -> Result<Term, ParseError> {
        if self.eat_sym("-") {
            return Ok(self.neg()?.neg());
        }
        let base = self.primary()?;
        if self.eat_sym("^") {
            match self.bump() {
                Tok::Num(n) if n.is_integer() && !n.is_negative() => {
                    let e: u32 = n
                        .numer()
                        .try_into()
                        .map_err(|_| self.error("small exponent"))?;
                    return Ok(base.pow(e));
                }
                _ => return Err(self.error("natural-number exponent")),
            }
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Term, ParseError> {
        match self.peek().clone() {
            Tok::Num(r) => {
                self.bump();
                Ok(Term::Const(r))
            }
            Tok::Ident(name) if name != "true" && name != "false" => {
                self.bump();
                Ok(Term::Var(name))
            }
            Tok::Sym("(") => {
                self.bump();
                let t = self.term()?;
                self.expect_sym(")")?;
                Ok(t)
            }
            _ => Err(self.error("term")),
        }
    }
}

pub fn parse_term(src: &str) -> Result<Term, ParseError> {
    let mut p = Parser::new(src)?;
    let t = p.term()?;
    p.expect_eof()?;
    Ok(t)
}

pub fn parse_formula(src: &str) -> Result<Formula, ParseError> {
    let mut p = Parser::new(src)?;
    let f = p.formula()?;
    p.expect_eof()?;
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn post_variables_lex_as_one_identifier() {
        let t = parse_term("v+ + x").unwrap();
        assert_eq!(t, Term::var("v+").add(Term::var("x")));
        let t = parse_term("v+x").unwrap();
        assert_eq!(t, Term::var("v").add(Term::var("x")));
        let f = parse_formula("0 <= v+").unwrap();
        assert_eq!(f, Formula::le(Term::int(0), Term::var("v+")));
    }

    #[test]
    fn chained_and_abs_sugar() {
        let f = parse_formula("0 <= v <= 10").unwrap();
        assert_eq!(f.to_string(), "0 <= v & v <= 10");
        let g = parse_formula("abs(e) <= d").unwrap();
        assert_eq!(g.to_string(), "-d <= e & e <= d");
    }

    #[test]
    fn parenthesised_terms_and_formulas() {
        let f = parse_formula("(x + 1) <= 2").unwrap();
        assert_eq!(f.to_string(), "x + 1 <= 2");
        let g = parse_formula("(x <= 1 | y > 2) & !z = 0").unwrap();
        assert_eq!(g.to_string(), "(x <= 1 | y > 2) & !z = 0");
    }

    #[test]
    fn printer_round_trips() {
        for src in [
            "\\forall x \\exists y (x < y -> y <= 3*x + (1/3))",
            "a - (b - c) = -(a*b)^2",
            "x/(y*z) >= 0.25 <-> true",
            "!\\forall x x > 0",
            "a - -b > --c",
        ] {
            let f = parse_formula(src).unwrap();
            let again = parse_formula(&f.to_string()).unwrap();
            assert_eq!(f.normalize(), again.normalize(), "{src}");
        }
    }

    #[test]
    fn error_positions() {
        let e = parse_formula("x <= \n  + ").unwrap_err();
        assert_eq!((e.line, e.col), (2, 3));
        assert!(parse_formula("").is_err());
    }
}
