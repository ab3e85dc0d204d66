//! Textual kernel grammar.
//!
//! ```text
//! Expr   := Term (('+') Term)*
//! Term   := Factor (('*') Factor)*
//! Factor := 'SE' | 'Ma5' | 'Pe' | 'Lin' | 'RQ' | '(' Expr ')'
//! ```
//!
//! `*` binds tighter than `+`, both left-associative; whitespace is ignored
//! and the multiplication sign `×` is accepted as an alias for `*`. This
//! string form is the persistence and CLI representation of kernel
//! structure, e.g. `(Ma5 + Ma5) * Ma5`.

use super::{BaseKernelKind, KernelExpr, ALL_BASE_KERNELS};
use crate::error::KernelError;

/// Parse a kernel expression from its grammar string.
pub fn parse_kernel_expr(text: &str) -> Result<KernelExpr, KernelError> {
    let tokens = tokenize(text)?;
    let mut parser = Parser {
        tokens,
        pos: 0,
        end: text.len(),
    };
    let expr = parser.expr()?;
    match parser.peek() {
        None => Ok(expr),
        Some(tok) => Err(KernelError::Parse {
            offset: tok.offset,
            message: format!("unexpected trailing `{}`", tok.kind.describe()),
        }),
    }
}

/// Render a kernel expression with minimal parentheses.
///
/// The output round-trips: parsing it yields a structurally equal tree.
pub fn format_kernel_expr(expr: &KernelExpr) -> String {
    let mut out = String::new();
    write_expr(expr, Prec::Sum, false, &mut out);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Prec {
    Sum = 0,
    Product = 1,
    Atom = 2,
}

fn prec_of(expr: &KernelExpr) -> Prec {
    match expr {
        KernelExpr::Leaf(_) => Prec::Atom,
        KernelExpr::Sum(..) => Prec::Sum,
        KernelExpr::Product(..) => Prec::Product,
    }
}

fn write_expr(expr: &KernelExpr, parent: Prec, is_right_operand: bool, out: &mut String) {
    let own = prec_of(expr);
    // Left association: a right operand at equal precedence needs parens.
    let needs_parens = own < parent || (own == parent && is_right_operand && own != Prec::Atom);
    if needs_parens {
        out.push('(');
    }
    match expr {
        KernelExpr::Leaf(kind) => out.push_str(kind.name()),
        KernelExpr::Sum(l, r) => {
            write_expr(l, Prec::Sum, false, out);
            out.push_str(" + ");
            write_expr(r, Prec::Sum, true, out);
        }
        KernelExpr::Product(l, r) => {
            write_expr(l, Prec::Product, false, out);
            out.push_str(" * ");
            write_expr(r, Prec::Product, true, out);
        }
    }
    if needs_parens {
        out.push(')');
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokenKind,
    offset: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum TokenKind {
    Kernel(BaseKernelKind),
    Plus,
    Star,
    LParen,
    RParen,
}

impl TokenKind {
    fn describe(&self) -> String {
        match self {
            TokenKind::Kernel(k) => k.name().to_string(),
            TokenKind::Plus => "+".to_string(),
            TokenKind::Star => "*".to_string(),
            TokenKind::LParen => "(".to_string(),
            TokenKind::RParen => ")".to_string(),
        }
    }
}

fn tokenize(text: &str) -> Result<Vec<Token>, KernelError> {
    let mut tokens = Vec::new();
    let mut chars = text.char_indices().peekable();
    while let Some(&(offset, c)) = chars.peek() {
        match c {
            c if c.is_whitespace() => {
                chars.next();
            }
            '+' => {
                chars.next();
                tokens.push(Token {
                    kind: TokenKind::Plus,
                    offset,
                });
            }
            '*' | '\u{00d7}' => {
                chars.next();
                tokens.push(Token {
                    kind: TokenKind::Star,
                    offset,
                });
            }
            '(' => {
                chars.next();
                tokens.push(Token {
                    kind: TokenKind::LParen,
                    offset,
                });
            }
            ')' => {
                chars.next();
                tokens.push(Token {
                    kind: TokenKind::RParen,
                    offset,
                });
            }
            c if c.is_ascii_alphanumeric() => {
                let mut name = String::new();
                while let Some(&(_, c)) = chars.peek() {
                    if c.is_ascii_alphanumeric() {
                        name.push(c);
                        chars.next();
                    } else {
                        break;
                    }
                }
                let kind = ALL_BASE_KERNELS
                    .into_iter()
                    .find(|k| k.name() == name)
                    .ok_or_else(|| KernelError::UnknownKernel {
                        name: name.clone(),
                        offset,
                    })?;
                tokens.push(Token {
                    kind: TokenKind::Kernel(kind),
                    offset,
                });
            }
            other => {
                return Err(KernelError::Parse {
                    offset,
                    message: format!("unexpected character `{other}`"),
                })
            }
        }
    }
    Ok(tokens)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    /// Byte length of the source text, reported for end-of-input errors.
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let tok = self.tokens.get(self.pos).cloned();
        if tok.is_some() {
            self.pos += 1;
        }
        tok
    }

    fn end_offset(&self) -> usize {
        self.end
    }

    fn expr(&mut self) -> Result<KernelExpr, KernelError> {
        let mut node = self.term()?;
        while matches!(self.peek().map(|t| &t.kind), Some(TokenKind::Plus)) {
            self.next();
            let rhs = self.term()?;
            node = KernelExpr::sum(node, rhs);
        }
        Ok(node)
    }

    fn term(&mut self) -> Result<KernelExpr, KernelError> {
        let mut node = self.factor()?;
        while matches!(self.peek().map(|t| &t.kind), Some(TokenKind::Star)) {
            self.next();
            let rhs = self.factor()?;
            node = KernelExpr::product(node, rhs);
        }
        Ok(node)
    }

    fn factor(&mut self) -> Result<KernelExpr, KernelError> {
        match self.next() {
            Some(Token {
                kind: TokenKind::Kernel(k),
                ..
            }) => Ok(KernelExpr::leaf(k)),
            Some(Token {
                kind: TokenKind::LParen,
                offset,
            }) => {
                let inner = self.expr()?;
                match self.next() {
                    Some(Token {
                        kind: TokenKind::RParen,
                        ..
                    }) => Ok(inner),
                    _ => Err(KernelError::Parse {
                        offset,
                        message: "unclosed parenthesis".to_string(),
                    }),
                }
            }
            Some(tok) => Err(KernelError::Parse {
                offset: tok.offset,
                message: format!("expected kernel or `(`, found `{}`", tok.kind.describe()),
            }),
            None => Err(KernelError::Parse {
                offset: self.end_offset(),
                message: "unexpected end of input".to_string(),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::BaseKernelKind::*;

    fn leaf(k: BaseKernelKind) -> KernelExpr {
        KernelExpr::leaf(k)
    }

    #[test]
    fn parses_single_kernel() {
        assert_eq!(parse_kernel_expr("SE").unwrap(), leaf(Se));
        assert_eq!(parse_kernel_expr("  Pe  ").unwrap(), leaf(Pe));
    }

    #[test]
    fn product_binds_tighter_than_sum() {
        let expr = parse_kernel_expr("SE + Lin * Pe").unwrap();
        assert_eq!(
            expr,
            KernelExpr::sum(leaf(Se), KernelExpr::product(leaf(Lin), leaf(Pe)))
        );
    }

    #[test]
    fn sum_is_left_associative() {
        let expr = parse_kernel_expr("RQ + Pe + RQ").unwrap();
        assert_eq!(
            expr,
            KernelExpr::sum(KernelExpr::sum(leaf(Rq), leaf(Pe)), leaf(Rq))
        );
    }

    #[test]
    fn parenthesized_composite() {
        let expr = parse_kernel_expr("(Ma5 + Ma5) * Ma5").unwrap();
        assert_eq!(
            expr,
            KernelExpr::product(KernelExpr::sum(leaf(Ma5), leaf(Ma5)), leaf(Ma5))
        );
    }

    #[test]
    fn multiplication_sign_alias() {
        assert_eq!(
            parse_kernel_expr("(Ma5 + Ma5) × Ma5").unwrap(),
            parse_kernel_expr("(Ma5 + Ma5) * Ma5").unwrap()
        );
    }

    #[test]
    fn unknown_kernel_is_reported_with_offset() {
        match parse_kernel_expr("SE + Ma7").unwrap_err() {
            KernelError::UnknownKernel { name, offset } => {
                assert_eq!(name, "Ma7");
                assert_eq!(offset, 5);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn syntax_errors_carry_byte_offsets() {
        match parse_kernel_expr("SE + ").unwrap_err() {
            KernelError::Parse { offset, .. } => assert_eq!(offset, 5),
            other => panic!("unexpected error {other:?}"),
        }
        match parse_kernel_expr("(SE + Pe").unwrap_err() {
            KernelError::Parse { offset, .. } => assert_eq!(offset, 0),
            other => panic!("unexpected error {other:?}"),
        }
        assert!(parse_kernel_expr("SE Pe").is_err());
        assert!(parse_kernel_expr("").is_err());
    }

    #[test]
    fn formats_with_minimal_parentheses() {
        let expr = KernelExpr::product(KernelExpr::sum(leaf(Ma5), leaf(Ma5)), leaf(Ma5));
        assert_eq!(format_kernel_expr(&expr), "(Ma5 + Ma5) * Ma5");
        assert_eq!(format_kernel_expr(&leaf(Pe)), "Pe");

        let expr = KernelExpr::sum(KernelExpr::sum(leaf(Rq), leaf(Pe)), leaf(Rq));
        assert_eq!(format_kernel_expr(&expr), "RQ + Pe + RQ");

        // Right-nested sums keep their parentheses.
        let expr = KernelExpr::sum(leaf(Se), KernelExpr::sum(leaf(Pe), leaf(Rq)));
        assert_eq!(format_kernel_expr(&expr), "SE + (Pe + RQ)");

        // A product under a product's right side needs parens too.
        let expr = KernelExpr::product(leaf(Se), KernelExpr::product(leaf(Pe), leaf(Rq)));
        assert_eq!(format_kernel_expr(&expr), "SE * (Pe * RQ)");
    }

    #[test]
    fn format_parse_round_trip_examples() {
        let cases = [
            "SE",
            "RQ + Pe + RQ",
            "(Ma5 + Ma5) * Ma5",
            "SE + (Pe + RQ)",
            "Lin * (SE + Pe) * RQ",
            "((SE + Lin) * Pe + Ma5) * RQ",
        ];
        for text in cases {
            let expr = parse_kernel_expr(text).unwrap();
            let rendered = format_kernel_expr(&expr);
            assert_eq!(parse_kernel_expr(&rendered).unwrap(), expr, "{text}");
        }
    }
}
