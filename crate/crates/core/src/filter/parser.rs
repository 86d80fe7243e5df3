use super::{CmpOp, FilterExpr, MAX_DEPTH};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Expected {
    Identifier,
    Operator,
    Number,
    And,
    Or,
    OpenParen,
    CloseParen,
    End,
}

impl fmt::Display for Expected {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Expected::Identifier => "identifier",
            Expected::Operator => "comparison operator",
            Expected::Number => "number",
            Expected::And => "'&'",
            Expected::Or => "'|'",
            Expected::OpenParen => "'('",
            Expected::CloseParen => "')'",
            Expected::End => "end of input",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("syntax error at byte {offset}: expected {}, found {found}", expected_list(.expected))]
pub struct SyntaxError {
    /// Byte offset into the input where parsing failed.
    pub offset: usize,
    pub expected: Vec<Expected>,
    pub found: String,
}

fn expected_list(expected: &[Expected]) -> String {
    expected.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(" or ")
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(f64),
    Op(CmpOp),
    And,
    Or,
    LParen,
    RParen,
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier {s:?}"),
            Tok::Number(n) => format!("number {n}"),
            Tok::Op(op) => format!("'{op}'"),
            Tok::And => "'&'".into(),
            Tok::Or => "'|'".into(),
            Tok::LParen => "'('".into(),
            Tok::RParen => "')'".into(),
            Tok::End => "end of input".into(),
        }
    }
}

struct Lexer<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn peek_at(&self, i: usize) -> Option<u8> {
        self.bytes.get(i).copied()
    }

    fn error(&self, offset: usize, expected: Vec<Expected>, found: String) -> SyntaxError {
        SyntaxError {
            offset,
            expected,
            found,
        }
    }

    /// Next token and its starting offset. `expected` is only used to
    /// describe an unrecognised character.
    fn next(&mut self, expected: &[Expected]) -> Result<(Tok, usize), SyntaxError> {
        while self.peek_at(self.pos).is_some_and(|b| b.is_ascii_whitespace()) {
            self.pos += 1;
        }
        let start = self.pos;
        let Some(b) = self.peek_at(start) else {
            return Ok((Tok::End, start));
        };
        let next = self.peek_at(start + 1);
        let (tok, len) = match b {
            b'&' if next == Some(b'&') => (Tok::And, 2),
            b'&' => (Tok::And, 1),
            b'|' if next == Some(b'|') => (Tok::Or, 2),
            b'|' => (Tok::Or, 1),
            b'(' => (Tok::LParen, 1),
            b')' => (Tok::RParen, 1),
            b'<' if next == Some(b'=') => (Tok::Op(CmpOp::Le), 2),
            b'<' => (Tok::Op(CmpOp::Lt), 1),
            b'>' if next == Some(b'=') => (Tok::Op(CmpOp::Ge), 2),
            b'>' => (Tok::Op(CmpOp::Gt), 1),
            b'=' if next == Some(b'=') => (Tok::Op(CmpOp::Eq), 2),
            b'!' if next == Some(b'=') => (Tok::Op(CmpOp::Ne), 2),
            b if b.is_ascii_alphabetic() || b == b'_' => {
                let mut end = start + 1;
                while self
                    .peek_at(end)
                    .is_some_and(|c| c.is_ascii_alphanumeric() || c == b'_')
                {
                    end += 1;
                }
                (Tok::Ident(self.src[start..end].to_owned()), end - start)
            }
            b if b.is_ascii_digit() || b == b'.' || b == b'+' || b == b'-' => {
                let end = self
                    .number_end(start)
                    .ok_or_else(|| self.error(start, expected.to_vec(), format!("{:?}", self.char_at(start))))?;
                let text = &self.src[start..end];
                let value: f64 = text
                    .parse()
                    .map_err(|_| self.error(start, vec![Expected::Number], format!("malformed number {text:?}")))?;
                if !value.is_finite() {
                    return Err(self.error(start, vec![Expected::Number], format!("non-finite number {text:?}")));
                }
                (Tok::Number(value), end - start)
            }
            _ => {
                return Err(self.error(start, expected.to_vec(), format!("{:?}", self.char_at(start))));
            }
        };
        self.pos = start + len;
        Ok((tok, start))
    }

    fn char_at(&self, offset: usize) -> char {
        self.src[offset..].chars().next().unwrap_or('\0')
    }

    /// End of `[+-]? (digits [. digits?] | . digits) ([eE] [+-]? digits)?`.
    fn number_end(&self, start: usize) -> Option<usize> {
        let digits = |mut i: usize| {
            let from = i;
            while self.peek_at(i).is_some_and(|c| c.is_ascii_digit()) {
                i += 1;
            }
            (i, i - from)
        };
        let mut i = start;
        if matches!(self.peek_at(i), Some(b'+' | b'-')) {
            i += 1;
        }
        let (after_int, n_int) = digits(i);
        i = after_int;
        let mut n_frac = 0;
        if self.peek_at(i) == Some(b'.') {
            let (after_frac, n) = digits(i + 1);
            i = after_frac;
            n_frac = n;
        }
        if n_int == 0 && n_frac == 0 {
            return None;
        }
        if matches!(self.peek_at(i), Some(b'e' | b'E')) {
            let mut j = i + 1;
            if matches!(self.peek_at(j), Some(b'+' | b'-')) {
                j += 1;
            }
            let (after_exp, n_exp) = digits(j);
            if n_exp == 0 {
                return None;
            }
            i = after_exp;
        }
        Some(i)
    }
}

struct Parser<'a> {
    lexer: Lexer<'a>,
    tok: Tok,
    offset: usize,
    parens: usize,
}

impl<'a> Parser<'a> {
    fn advance(&mut self, expected: &[Expected]) -> Result<(), SyntaxError> {
        let (tok, offset) = self.lexer.next(expected)?;
        self.tok = tok;
        self.offset = offset;
        Ok(())
    }

    fn unexpected(&self, expected: Vec<Expected>) -> SyntaxError {
        SyntaxError {
            offset: self.offset,
            expected,
            found: self.tok.describe(),
        }
    }

    fn too_deep(&self) -> SyntaxError {
        SyntaxError {
            offset: self.offset,
            expected: vec![],
            found: format!("expression nested deeper than {MAX_DEPTH}"),
        }
    }

    /// Returns the expression and its tree depth.
    fn or_expr(&mut self) -> Result<(FilterExpr, usize), SyntaxError> {
        let (mut lhs, mut depth) = self.and_expr()?;
        while self.tok == Tok::Or {
            self.advance(&[Expected::Identifier, Expected::OpenParen])?;
            let (rhs, rdepth) = self.and_expr()?;
            let needs = matches!(rhs_shape(&rhs), Shape::Or);
            let rhs = wrap(rhs, needs);
            let rdepth = rdepth + usize::from(needs);
            depth = 1 + depth.max(rdepth);
            if depth > MAX_DEPTH {
                return Err(self.too_deep());
            }
            lhs = FilterExpr::or(lhs, rhs);
        }
        Ok((lhs, depth))
    }

    fn and_expr(&mut self) -> Result<(FilterExpr, usize), SyntaxError> {
        let (lhs, ldepth) = self.atom()?;
        let mut lhs_grouped = false;
        let (mut lhs, mut depth) = (lhs, ldepth);
        while self.tok == Tok::And {
            if !lhs_grouped && matches!(rhs_shape(&lhs), Shape::Or) {
                lhs = FilterExpr::group(lhs);
                depth += 1;
            }
            lhs_grouped = true;
            self.advance(&[Expected::Identifier, Expected::OpenParen])?;
            let (rhs, rdepth) = self.atom()?;
            let needs = !matches!(rhs_shape(&rhs), Shape::Leaf);
            let rdepth = rdepth + usize::from(needs);
            let rhs = wrap(rhs, needs);
            depth = 1 + depth.max(rdepth);
            if depth > MAX_DEPTH {
                return Err(self.too_deep());
            }
            lhs = FilterExpr::and(lhs, rhs);
        }
        Ok((lhs, depth))
    }

    fn atom(&mut self) -> Result<(FilterExpr, usize), SyntaxError> {
        match std::mem::replace(&mut self.tok, Tok::End) {
            Tok::LParen => {
                self.parens += 1;
                if self.parens > MAX_DEPTH {
                    return Err(self.too_deep());
                }
                self.advance(&[Expected::Identifier, Expected::OpenParen])?;
                let inner = self.or_expr()?;
                if self.tok != Tok::RParen {
                    return Err(self.unexpected(vec![Expected::And, Expected::Or, Expected::CloseParen]));
                }
                self.parens -= 1;
                self.advance(&[Expected::And, Expected::Or, Expected::CloseParen, Expected::End])?;
                // Parentheses are kept only where the parent needs them,
                // which the callers decide.
                Ok(inner)
            }
            Tok::Ident(variable) => {
                self.advance(&[Expected::Operator])?;
                let Tok::Op(op) = self.tok else {
                    return Err(self.unexpected(vec![Expected::Operator]));
                };
                self.advance(&[Expected::Number])?;
                let Tok::Number(literal) = self.tok else {
                    return Err(self.unexpected(vec![Expected::Number]));
                };
                self.advance(&[Expected::And, Expected::Or, Expected::CloseParen, Expected::End])?;
                Ok((FilterExpr::Comparison { variable, op, literal }, 1))
            }
            other => {
                self.tok = other;
                Err(self.unexpected(vec![Expected::Identifier, Expected::OpenParen]))
            }
        }
    }
}

enum Shape {
    Leaf,
    And,
    Or,
}

fn rhs_shape(e: &FilterExpr) -> Shape {
    match e {
        FilterExpr::Comparison { .. } | FilterExpr::Group(_) => Shape::Leaf,
        FilterExpr::And(..) => Shape::And,
        FilterExpr::Or(..) => Shape::Or,
    }
}

fn wrap(e: FilterExpr, group: bool) -> FilterExpr {
    if group {
        FilterExpr::group(e)
    } else {
        e
    }
}

/// Parses filter text into its canonical tree.
pub fn parse(text: &str) -> Result<FilterExpr, SyntaxError> {
    let mut parser = Parser {
        lexer: Lexer {
            src: text,
            bytes: text.as_bytes(),
            pos: 0,
        },
        tok: Tok::End,
        offset: 0,
        parens: 0,
    };
    parser.advance(&[Expected::Identifier, Expected::OpenParen])?;
    let (expr, _) = parser.or_expr()?;
    if parser.tok != Tok::End {
        let expected = if parser.parens > 0 {
            vec![Expected::And, Expected::Or, Expected::CloseParen]
        } else {
            vec![Expected::And, Expected::Or, Expected::End]
        };
        return Err(parser.unexpected(expected));
    }
    debug_assert!(expr.is_canonical(), "parser output must be canonical: {expr:?}");
    Ok(expr)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cmp(v: &str, op: CmpOp, lit: f64) -> FilterExpr {
        FilterExpr::cmp(v, op, lit)
    }

    #[test]
    fn conjunction_from_status_table() {
        assert_eq!(
            parse("bx>2000&gotmean<100").unwrap(),
            FilterExpr::and(cmp("bx", CmpOp::Gt, 2000.0), cmp("gotmean", CmpOp::Lt, 100.0))
        );
        assert_eq!(parse("evr<10").unwrap(), cmp("evr", CmpOp::Lt, 10.0));
    }

    #[test]
    fn synonyms_and_whitespace() {
        assert_eq!(parse("a<1 && b<2").unwrap(), parse("a<1&b<2").unwrap());
        assert_eq!(parse(" a<1 || b<2 ").unwrap(), parse("a<1|b<2").unwrap());
    }

    #[test]
    fn and_binds_tighter_than_or() {
        assert_eq!(
            parse("a<1|b<2&c<3").unwrap(),
            FilterExpr::or(
                cmp("a", CmpOp::Lt, 1.0),
                FilterExpr::and(cmp("b", CmpOp::Lt, 2.0), cmp("c", CmpOp::Lt, 3.0))
            )
        );
        assert_eq!(
            parse("a<1&b<2|c<3").unwrap(),
            FilterExpr::or(
                FilterExpr::and(cmp("a", CmpOp::Lt, 1.0), cmp("b", CmpOp::Lt, 2.0)),
                cmp("c", CmpOp::Lt, 3.0)
            )
        );
    }

    #[test]
    fn all_operators_and_number_forms() {
        for op in CmpOp::ALL {
            let text = format!("x{op}1");
            assert_eq!(parse(&text).unwrap(), cmp("x", op, 1.0));
        }
        assert_eq!(parse("x>-2.5e3").unwrap(), cmp("x", CmpOp::Gt, -2500.0));
        assert_eq!(parse("x<.5").unwrap(), cmp("x", CmpOp::Lt, 0.5));
        assert_eq!(parse("x<+7.").unwrap(), cmp("x", CmpOp::Lt, 7.0));
    }

    #[test]
    fn dangling_operator() {
        let err = parse("bx>2000&").unwrap_err();
        assert_eq!(err.offset, 8);
        assert_eq!(err.expected, vec![Expected::Identifier, Expected::OpenParen]);
    }

    #[test]
    fn empty_input() {
        let err = parse("").unwrap_err();
        assert_eq!(err.offset, 0);
        let err = parse("   ").unwrap_err();
        assert_eq!(err.offset, 3);
    }

    #[test]
    fn comparisons_do_not_chain() {
        let err = parse("a<1<2").unwrap_err();
        assert_eq!(err.offset, 3);
        assert!(err.expected.contains(&Expected::End));
    }

    #[test]
    fn assorted_errors() {
        assert_eq!(parse("bx>").unwrap_err().expected, vec![Expected::Number]);
        assert_eq!(parse("bx 5").unwrap_err().expected, vec![Expected::Operator]);
        assert_eq!(parse("(a<1").unwrap_err().offset, 4);
        assert_eq!(parse("a<1)").unwrap_err().offset, 3);
        assert_eq!(parse("a=1").unwrap_err().offset, 1);
        assert_eq!(parse("a<1e999").unwrap_err().offset, 2);
        assert_eq!(parse("a<1e").unwrap_err().offset, 2);
        assert_eq!(parse("a<1 # b").unwrap_err().offset, 4);
        assert!(parse("é<1").is_err());
    }

    #[test]
    fn nesting_limit() {
        let ok = format!("{}a<1{}", "(".repeat(60), ")".repeat(60));
        assert!(parse(&ok).is_ok());
        let deep = format!("{}a<1{}", "(".repeat(65), ")".repeat(65));
        assert!(parse(&deep).is_err());
        let long_chain = vec!["a<1"; 64].join("&");
        assert!(parse(&long_chain).is_ok());
        let too_long = vec!["a<1"; 65].join("&");
        assert!(parse(&too_long).is_err());
    }

    #[test]
    fn redundant_parentheses_are_dropped() {
        assert_eq!(parse("(a<1)&(b<2)").unwrap(), parse("a<1&b<2").unwrap());
        assert_eq!(parse("a<1|(b<2&c<3)").unwrap(), parse("a<1|b<2&c<3").unwrap());
        assert!(matches!(parse("(a<1|b<2)&c<3").unwrap(), FilterExpr::And(l, _) if matches!(*l, FilterExpr::Group(_))));
    }
}
