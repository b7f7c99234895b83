//! Canonical printed form of subject-language (Python) literals.
//!
//! Used for answer equality when no live interpreter is attached. Reprs
//! follow CPython: shortest round-trip floats, quote selection and escapes
//! for `str`/`bytes`, `(x,)` for 1-tuples. Set elements are ordered by their
//! canonical text, which differs from CPython's hash order.

use rustpython_parser::ast::{self, Constant, Expr, UnaryOp};
use rustpython_parser::Parse;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LiteralError {
    #[error("not parseable: {0}")]
    Syntax(String),
    #[error("not a literal: {0}")]
    NotLiteral(&'static str),
}

pub fn canonicalize(text: &str) -> Result<String, LiteralError> {
    let expr = ast::Expr::parse(text.trim(), "<literal>")
        .map_err(|e| LiteralError::Syntax(e.to_string()))?;
    render(&expr)
}

/// The contents of a `str` literal, or `None` when `text` is not one.
pub fn str_contents(text: &str) -> Option<String> {
    match ast::Expr::parse(text.trim(), "<literal>").ok()? {
        Expr::Constant(ast::ExprConstant {
            value: Constant::Str(s),
            ..
        }) => Some(s),
        _ => None,
    }
}

fn render(expr: &Expr) -> Result<String, LiteralError> {
    Ok(match expr {
        Expr::Constant(c) => render_constant(&c.value)?,
        Expr::UnaryOp(u) => {
            let inner = match &*u.operand {
                Expr::Constant(_) | Expr::UnaryOp(_) => numeric(&u.operand)?,
                _ => return Err(LiteralError::NotLiteral("unary operator on non-number")),
            };
            match u.op {
                UnaryOp::USub => render_number(-inner),
                UnaryOp::UAdd => render_number(inner),
                _ => return Err(LiteralError::NotLiteral("unary operator")),
            }
        }
        Expr::Tuple(t) => match t.elts.len() {
            0 => "()".to_string(),
            1 => format!("({},)", render(&t.elts[0])?),
            _ => format!("({})", render_seq(&t.elts)?),
        },
        Expr::List(l) => format!("[{}]", render_seq(&l.elts)?),
        Expr::Set(s) => {
            let mut items = s.elts.iter().map(render).collect::<Result<Vec<_>, _>>()?;
            items.sort();
            items.dedup();
            format!("{{{}}}", items.join(", "))
        }
        Expr::Dict(d) => {
            let mut entries: Vec<(String, String)> = Vec::new();
            for (key, value) in d.keys.iter().zip(&d.values) {
                let key = key
                    .as_ref()
                    .ok_or(LiteralError::NotLiteral("dict unpacking"))?;
                let key = render(key)?;
                let value = render(value)?;
                match entries.iter_mut().find(|(k, _)| *k == key) {
                    Some(entry) => entry.1 = value,
                    None => entries.push((key, value)),
                }
            }
            let body: Vec<String> = entries.into_iter().map(|(k, v)| format!("{k}: {v}")).collect();
            format!("{{{}}}", body.join(", "))
        }
        _ => return Err(LiteralError::NotLiteral("expression")),
    })
}

fn render_seq(items: &[Expr]) -> Result<String, LiteralError> {
    Ok(items.iter().map(render).collect::<Result<Vec<_>, _>>()?.join(", "))
}

#[derive(Debug, Clone)]
enum Number {
    Int(String),
    Float(f64),
}

impl std::ops::Neg for Number {
    type Output = Number;

    fn neg(self) -> Number {
        match self {
            Number::Int(s) if s == "0" => Number::Int(s),
            Number::Int(s) => match s.strip_prefix('-') {
                Some(pos) => Number::Int(pos.to_string()),
                None => Number::Int(format!("-{s}")),
            },
            Number::Float(f) => Number::Float(-f),
        }
    }
}

fn numeric(expr: &Expr) -> Result<Number, LiteralError> {
    match expr {
        Expr::Constant(c) => match &c.value {
            Constant::Int(i) => Ok(Number::Int(i.to_string())),
            Constant::Float(f) => Ok(Number::Float(*f)),
            Constant::Bool(b) => Ok(Number::Int(if *b { "1" } else { "0" }.to_string())),
            _ => Err(LiteralError::NotLiteral("unary operator on non-number")),
        },
        Expr::UnaryOp(u) => {
            let inner = numeric(&u.operand)?;
            match u.op {
                UnaryOp::USub => Ok(-inner),
                UnaryOp::UAdd => Ok(inner),
                _ => Err(LiteralError::NotLiteral("unary operator")),
            }
        }
        _ => Err(LiteralError::NotLiteral("unary operator on non-number")),
    }
}

fn render_number(n: Number) -> String {
    match n {
        Number::Int(s) => s,
        Number::Float(f) => float_repr(f),
    }
}

fn render_constant(c: &Constant) -> Result<String, LiteralError> {
    Ok(match c {
        Constant::None => "None".to_string(),
        Constant::Bool(true) => "True".to_string(),
        Constant::Bool(false) => "False".to_string(),
        Constant::Str(s) => str_repr(s),
        Constant::Bytes(b) => bytes_repr(b),
        Constant::Int(i) => i.to_string(),
        Constant::Float(f) => float_repr(*f),
        Constant::Tuple(items) => {
            let parts = items.iter().map(render_constant).collect::<Result<Vec<_>, _>>()?;
            match parts.len() {
                1 => format!("({},)", parts[0]),
                _ => format!("({})", parts.join(", ")),
            }
        }
        Constant::Ellipsis => "Ellipsis".to_string(),
        Constant::Complex { .. } => return Err(LiteralError::NotLiteral("complex number")),
    })
}

/// CPython `repr(float)`.
pub fn float_repr(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    // `{:e}` yields the shortest round-trip digits, e.g. `-1.25e-7`.
    let sci = format!("{x:e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("exponent digits");
    let (sign, mantissa) = match mantissa.strip_prefix('-') {
        Some(m) => ("-", m),
        None => ("", mantissa),
    };
    let digits: String = mantissa.chars().filter(|c| *c != '.').collect();
    if (-4..16).contains(&exp) {
        if exp >= 0 {
            let int_len = exp as usize + 1;
            if digits.len() <= int_len {
                format!("{sign}{digits}{}.0", "0".repeat(int_len - digits.len()))
            } else {
                format!("{sign}{}.{}", &digits[..int_len], &digits[int_len..])
            }
        } else {
            format!("{sign}0.{}{digits}", "0".repeat((-exp - 1) as usize))
        }
    } else {
        let (head, tail) = digits.split_at(1);
        let frac = if tail.is_empty() {
            String::new()
        } else {
            format!(".{tail}")
        };
        let esign = if exp < 0 { '-' } else { '+' };
        format!("{sign}{head}{frac}e{esign}{:02}", exp.abs())
    }
}

fn needs_escape(ch: char) -> bool {
    ch.is_control()
        || (ch.is_whitespace() && ch != ' ')
        || matches!(ch, '\u{ad}' | '\u{200b}'..='\u{200f}' | '\u{2060}'..='\u{2064}' | '\u{feff}')
}

/// CPython `repr(str)`.
pub fn str_repr(s: &str) -> String {
    let quote = if s.contains('\'') && !s.contains('"') {
        '"'
    } else {
        '\''
    };
    let mut out = String::with_capacity(s.len() + 2);
    out.push(quote);
    for ch in s.chars() {
        match ch {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if c == quote => {
                out.push('\\');
                out.push(c);
            }
            c if needs_escape(c) => {
                let code = c as u32;
                if code <= 0xff {
                    out.push_str(&format!("\\x{code:02x}"));
                } else if code <= 0xffff {
                    out.push_str(&format!("\\u{code:04x}"));
                } else {
                    out.push_str(&format!("\\U{code:08x}"));
                }
            }
            c => out.push(c),
        }
    }
    out.push(quote);
    out
}

fn bytes_repr(b: &[u8]) -> String {
    let quote = if b.contains(&b'\'') && !b.contains(&b'"') {
        b'"'
    } else {
        b'\''
    };
    let mut out = String::from("b");
    out.push(quote as char);
    for &byte in b {
        match byte {
            b'\\' => out.push_str("\\\\"),
            b'\n' => out.push_str("\\n"),
            b'\r' => out.push_str("\\r"),
            b'\t' => out.push_str("\\t"),
            c if c == quote => {
                out.push('\\');
                out.push(c as char);
            }
            c if !(0x20..0x7f).contains(&c) => out.push_str(&format!("\\x{c:02x}")),
            c => out.push(c as char),
        }
    }
    out.push(quote as char);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quote_styles_agree() {
        assert_eq!(canonicalize("\"abc\"").unwrap(), "'abc'");
        assert_eq!(canonicalize("'abc'").unwrap(), "'abc'");
        assert_eq!(canonicalize("\"it's\"").unwrap(), "\"it's\"");
        assert_eq!(canonicalize(r#"'a"b\'c'"#).unwrap(), r#"'a"b\'c'"#);
        assert_eq!(canonicalize(r"'a\nb'").unwrap(), r"'a\nb'");
        assert_eq!(canonicalize("'\\x00\u{e9}'").unwrap(), "'\\x00\u{e9}'");
    }

    #[test]
    fn containers() {
        assert_eq!(canonicalize("[1,2]").unwrap(), "[1, 2]");
        assert_eq!(canonicalize("( 1 , )").unwrap(), "(1,)");
        assert_eq!(canonicalize("()").unwrap(), "()");
        assert_eq!(canonicalize("{'a':1, 'a': 2, \"b\": [None, True]}").unwrap(), "{'a': 2, 'b': [None, True]}");
        assert_eq!(canonicalize("{3, 1, 2, 1}").unwrap(), "{1, 2, 3}");
        assert_eq!(
            canonicalize("('6WRtQO', 'zCjWT', ['a'])").unwrap(),
            "('6WRtQO', 'zCjWT', ['a'])"
        );
    }

    #[test]
    fn numbers_follow_cpython() {
        let cases = [
            ("1.0", "1.0"),
            ("1e16", "1e+16"),
            ("1e15", "1000000000000000.0"),
            ("1e-5", "1e-05"),
            ("0.0001", "0.0001"),
            ("0.1", "0.1"),
            ("-2.5", "-2.5"),
            ("-0.0", "-0.0"),
            ("1.5e300", "1.5e+300"),
            ("123456.789", "123456.789"),
            ("0x10", "16"),
            ("-(-3)", "3"),
            ("-0", "0"),
            ("1_000", "1000"),
            ("12345678901234567890123", "12345678901234567890123"),
        ];
        for (input, want) in cases {
            assert_eq!(canonicalize(input).unwrap(), want, "{input}");
        }
    }

    #[test]
    fn non_literals_are_rejected() {
        assert!(canonicalize("6wrTqo|zCjWT").is_err());
        assert!(matches!(canonicalize("f(1)"), Err(LiteralError::NotLiteral(_))));
        assert!(matches!(canonicalize("x"), Err(LiteralError::NotLiteral(_))));
        assert!(canonicalize("[1,").is_err());
    }

    #[test]
    fn str_contents_unquotes() {
        assert_eq!(str_contents("'a|b'").as_deref(), Some("a|b"));
        assert_eq!(str_contents("1"), None);
    }

    #[test]
    fn bytes_repr_matches() {
        assert_eq!(canonicalize("b\"x'\"").unwrap(), "b\"x'\"");
        assert_eq!(canonicalize("b'\\xff'").unwrap(), "b'\\xff'");
    }
}
