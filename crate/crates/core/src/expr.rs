//! Expression trees for scalar fields on a coordinate chart.
//!
//! The grammar is deliberately small: rational constants, coordinate
//! variables, `+ - * /`, integer powers, `exp`, `ln`, `sqrt`. Everything a
//! chart field needs can be written in it, and every tree can be
//! differentiated exactly, so residuals downstream are limited only by
//! floating-point rounding. Constructors fold constants and annihilate
//! zeros locally; no other simplification is attempted — correctness is
//! established by evaluation, not by canonical form.

use std::fmt;

use thiserror::Error;

/// Exact rational constant, always stored reduced with a positive denominator.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Rational {
    num: i64,
    den: i64,
}

fn gcd(mut a: i128, mut b: i128) -> i128 {
    a = a.abs();
    b = b.abs();
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    if a == 0 {
        1
    } else {
        a
    }
}

impl Rational {
    pub fn new(num: i64, den: i64) -> Rational {
        assert!(den != 0, "rational with zero denominator");
        Self::reduce(num as i128, den as i128)
    }

    fn reduce(num: i128, den: i128) -> Rational {
        let sign = if den < 0 { -1 } else { 1 };
        let g = gcd(num, den);
        let num = sign * num / g;
        let den = sign * den / g;
        assert!(
            num >= i64::MIN as i128 && num <= i64::MAX as i128 && den <= i64::MAX as i128,
            "rational overflow"
        );
        Rational {
            num: num as i64,
            den: den as i64,
        }
    }

    pub fn from_int(n: i64) -> Rational {
        Rational { num: n, den: 1 }
    }

    pub fn zero() -> Rational {
        Rational::from_int(0)
    }

    pub fn one() -> Rational {
        Rational::from_int(1)
    }

    pub fn num(&self) -> i64 {
        self.num
    }

    pub fn den(&self) -> i64 {
        self.den
    }

    pub fn is_zero(&self) -> bool {
        self.num == 0
    }

    pub fn is_one(&self) -> bool {
        self.num == 1 && self.den == 1
    }

    pub fn to_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    pub fn add(self, o: Rational) -> Rational {
        Self::reduce(
            self.num as i128 * o.den as i128 + o.num as i128 * self.den as i128,
            self.den as i128 * o.den as i128,
        )
    }

    pub fn sub(self, o: Rational) -> Rational {
        self.add(o.neg())
    }

    pub fn neg(self) -> Rational {
        Rational {
            num: -self.num,
            den: self.den,
        }
    }

    pub fn mul(self, o: Rational) -> Rational {
        Self::reduce(
            self.num as i128 * o.num as i128,
            self.den as i128 * o.den as i128,
        )
    }

    pub fn div(self, o: Rational) -> Rational {
        assert!(!o.is_zero(), "rational division by zero");
        Self::reduce(
            self.num as i128 * o.den as i128,
            self.den as i128 * o.num as i128,
        )
    }

    /// `self^k` for integer `k`; `k < 0` requires a nonzero base.
    pub fn pow(self, k: i32) -> Option<Rational> {
        if self.is_zero() && k < 0 {
            return None;
        }
        let (mut num, mut den, k) = if k < 0 {
            (self.den as i128, self.num as i128, (-k) as u32)
        } else {
            (self.num as i128, self.den as i128, k as u32)
        };
        let mut rn: i128 = 1;
        let mut rd: i128 = 1;
        for _ in 0..k {
            rn = rn.checked_mul(num)?;
            rd = rd.checked_mul(den)?;
            if rn.abs() > i64::MAX as i128 || rd.abs() > i64::MAX as i128 {
                return None;
            }
        }
        let _ = (&mut num, &mut den);
        Some(Self::reduce(rn, rd))
    }

    /// Exact square root if both numerator and denominator are perfect squares.
    fn sqrt_exact(self) -> Option<Rational> {
        if self.num < 0 {
            return None;
        }
        let isqrt = |v: i64| -> Option<i64> {
            let r = (v as f64).sqrt().round() as i64;
            for c in [r - 1, r, r + 1] {
                if c >= 0 && c * c == v {
                    return Some(c);
                }
            }
            None
        };
        Some(Rational {
            num: isqrt(self.num)?,
            den: isqrt(self.den)?,
        })
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

/// Abstract syntax tree of a chart expression. Variables are coordinate
/// indices into the owning chart.
#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(Rational),
    Var(usize),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
    Exp(Box<Expr>),
    Ln(Box<Expr>),
    Sqrt(Box<Expr>),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("ln of non-positive argument {0}")]
    LnDomain(f64),
    #[error("sqrt of negative argument {0}")]
    SqrtDomain(f64),
    #[error("division by zero")]
    DivByZero,
    #[error("zero base raised to negative power {0}")]
    ZeroToNegativePower(i32),
    #[error("non-finite intermediate value")]
    NonFinite,
}

impl Expr {
    pub fn num(r: Rational) -> Expr {
        Expr::Num(r)
    }

    pub fn int(n: i64) -> Expr {
        Expr::Num(Rational::from_int(n))
    }

    pub fn rational(num: i64, den: i64) -> Expr {
        Expr::Num(Rational::new(num, den))
    }

    pub fn var(i: usize) -> Expr {
        Expr::Var(i)
    }

    pub fn zero() -> Expr {
        Expr::int(0)
    }

    pub fn one() -> Expr {
        Expr::int(1)
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Num(r) if r.is_zero())
    }

    pub fn is_one(&self) -> bool {
        matches!(self, Expr::Num(r) if r.is_one())
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        match (a, b) {
            (a, b) if a.is_zero() => b,
            (a, b) if b.is_zero() => a,
            (Expr::Num(x), Expr::Num(y)) => Expr::Num(x.add(y)),
            (a, b) => Expr::Add(Box::new(a), Box::new(b)),
        }
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        match (a, b) {
            (a, b) if b.is_zero() => a,
            (a, b) if a.is_zero() => Expr::neg(b),
            (Expr::Num(x), Expr::Num(y)) => Expr::Num(x.sub(y)),
            (a, b) => Expr::Sub(Box::new(a), Box::new(b)),
        }
    }

    pub fn neg(a: Expr) -> Expr {
        match a {
            Expr::Num(x) => Expr::Num(x.neg()),
            Expr::Neg(inner) => *inner,
            a => Expr::Neg(Box::new(a)),
        }
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        match (a, b) {
            (a, _) if a.is_zero() => Expr::zero(),
            (_, b) if b.is_zero() => Expr::zero(),
            (a, b) if a.is_one() => b,
            (a, b) if b.is_one() => a,
            (Expr::Num(x), Expr::Num(y)) => Expr::Num(x.mul(y)),
            (a, b) => Expr::Mul(Box::new(a), Box::new(b)),
        }
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        match (a, b) {
            // Symbolic zero numerators collapse; denominators are assumed
            // nonvanishing on the chart's domain box.
            (a, _) if a.is_zero() => Expr::zero(),
            (a, b) if b.is_one() => a,
            (Expr::Num(x), Expr::Num(y)) if !y.is_zero() => Expr::Num(x.div(y)),
            (a, Expr::Num(y)) if !y.is_zero() => {
                Expr::mul(Expr::Num(Rational::one().div(y)), a)
            }
            (a, b) => Expr::Div(Box::new(a), Box::new(b)),
        }
    }

    pub fn pow(a: Expr, k: i32) -> Expr {
        match (a, k) {
            (_, 0) => Expr::one(),
            (a, 1) => a,
            (Expr::Num(x), k) => match x.pow(k) {
                Some(r) => Expr::Num(r),
                None => Expr::Pow(Box::new(Expr::Num(x)), k),
            },
            (Expr::Pow(base, j), k) => match j.checked_mul(k) {
                Some(jk) => Expr::pow(*base, jk),
                None => Expr::Pow(Box::new(Expr::Pow(base, j)), k),
            },
            (a, k) => Expr::Pow(Box::new(a), k),
        }
    }

    pub fn exp(a: Expr) -> Expr {
        match a {
            a if a.is_zero() => Expr::one(),
            Expr::Ln(inner) => *inner,
            a => Expr::Exp(Box::new(a)),
        }
    }

    pub fn ln(a: Expr) -> Expr {
        match a {
            a if a.is_one() => Expr::zero(),
            Expr::Exp(inner) => *inner,
            a => Expr::Ln(Box::new(a)),
        }
    }

    pub fn sqrt(a: Expr) -> Expr {
        match a {
            Expr::Num(x) => match x.sqrt_exact() {
                Some(r) => Expr::Num(r),
                None => Expr::Sqrt(Box::new(Expr::Num(x))),
            },
            a => Expr::Sqrt(Box::new(a)),
        }
    }

    /// Exact partial derivative with respect to coordinate `i`.
    pub fn differentiate(&self, i: usize) -> Expr {
        match self {
            Expr::Num(_) => Expr::zero(),
            Expr::Var(j) => {
                if *j == i {
                    Expr::one()
                } else {
                    Expr::zero()
                }
            }
            Expr::Add(a, b) => Expr::add(a.differentiate(i), b.differentiate(i)),
            Expr::Sub(a, b) => Expr::sub(a.differentiate(i), b.differentiate(i)),
            Expr::Neg(a) => Expr::neg(a.differentiate(i)),
            Expr::Mul(a, b) => Expr::add(
                Expr::mul(a.differentiate(i), (**b).clone()),
                Expr::mul((**a).clone(), b.differentiate(i)),
            ),
            Expr::Div(a, b) => {
                // (a/b)' = a'/b - a b'/b^2
                let da = a.differentiate(i);
                let db = b.differentiate(i);
                Expr::sub(
                    Expr::div(da, (**b).clone()),
                    Expr::div(
                        Expr::mul((**a).clone(), db),
                        Expr::pow((**b).clone(), 2),
                    ),
                )
            }
            Expr::Pow(a, k) => Expr::mul(
                Expr::mul(Expr::int(*k as i64), Expr::pow((**a).clone(), k - 1)),
                a.differentiate(i),
            ),
            Expr::Exp(a) => Expr::mul(Expr::exp((**a).clone()), a.differentiate(i)),
            Expr::Ln(a) => Expr::div(a.differentiate(i), (**a).clone()),
            Expr::Sqrt(a) => Expr::div(
                a.differentiate(i),
                Expr::mul(Expr::int(2), Expr::sqrt((**a).clone())),
            ),
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, EvalError> {
        let v = match self {
            Expr::Num(r) => r.to_f64(),
            Expr::Var(i) => x[*i],
            Expr::Add(a, b) => a.eval(x)? + b.eval(x)?,
            Expr::Sub(a, b) => a.eval(x)? - b.eval(x)?,
            Expr::Neg(a) => -a.eval(x)?,
            Expr::Mul(a, b) => a.eval(x)? * b.eval(x)?,
            Expr::Div(a, b) => {
                let d = b.eval(x)?;
                if d == 0.0 {
                    return Err(EvalError::DivByZero);
                }
                a.eval(x)? / d
            }
            Expr::Pow(a, k) => {
                let base = a.eval(x)?;
                if base == 0.0 && *k < 0 {
                    return Err(EvalError::ZeroToNegativePower(*k));
                }
                base.powi(*k)
            }
            Expr::Exp(a) => a.eval(x)?.exp(),
            Expr::Ln(a) => {
                let v = a.eval(x)?;
                if v <= 0.0 {
                    return Err(EvalError::LnDomain(v));
                }
                v.ln()
            }
            Expr::Sqrt(a) => {
                let v = a.eval(x)?;
                if v < 0.0 {
                    return Err(EvalError::SqrtDomain(v));
                }
                v.sqrt()
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalError::NonFinite)
        }
    }

    pub fn free_vars(&self, acc: &mut Vec<usize>) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(i) => {
                if !acc.contains(i) {
                    acc.push(*i);
                }
            }
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.free_vars(acc);
                b.free_vars(acc);
            }
            Expr::Neg(a) | Expr::Exp(a) | Expr::Ln(a) | Expr::Sqrt(a) => a.free_vars(acc),
            Expr::Pow(a, _) => a.free_vars(acc),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Num(r) => {
                if r.num < 0 {
                    0
                } else if r.den != 1 {
                    2
                } else {
                    6
                }
            }
            Expr::Add(..) | Expr::Sub(..) => 1,
            Expr::Mul(..) | Expr::Div(..) => 2,
            Expr::Neg(..) => 3,
            Expr::Pow(..) => 4,
            Expr::Var(_) | Expr::Exp(_) | Expr::Ln(_) | Expr::Sqrt(_) => 6,
        }
    }

    fn fmt_prec(
        &self,
        f: &mut fmt::Formatter<'_>,
        names: &[String],
        parent: u8,
    ) -> fmt::Result {
        let prec = self.precedence();
        let parens = prec < parent;
        if parens {
            write!(f, "(")?;
        }
        match self {
            Expr::Num(r) => write!(f, "{r}")?,
            Expr::Var(i) => write!(f, "{}", names[*i])?,
            Expr::Add(a, b) => {
                a.fmt_prec(f, names, 1)?;
                write!(f, " + ")?;
                b.fmt_prec(f, names, 2)?;
            }
            Expr::Sub(a, b) => {
                a.fmt_prec(f, names, 1)?;
                write!(f, " - ")?;
                b.fmt_prec(f, names, 2)?;
            }
            Expr::Mul(a, b) => {
                a.fmt_prec(f, names, 2)?;
                write!(f, "*")?;
                b.fmt_prec(f, names, 3)?;
            }
            Expr::Div(a, b) => {
                a.fmt_prec(f, names, 2)?;
                write!(f, "/")?;
                b.fmt_prec(f, names, 3)?;
            }
            Expr::Neg(a) => {
                write!(f, "-")?;
                a.fmt_prec(f, names, 4)?;
            }
            Expr::Pow(a, k) => {
                a.fmt_prec(f, names, 5)?;
                if *k < 0 {
                    write!(f, "^({k})")?;
                } else {
                    write!(f, "^{k}")?;
                }
            }
            Expr::Exp(a) => {
                write!(f, "exp(")?;
                a.fmt_prec(f, names, 0)?;
                write!(f, ")")?;
            }
            Expr::Ln(a) => {
                write!(f, "ln(")?;
                a.fmt_prec(f, names, 0)?;
                write!(f, ")")?;
            }
            Expr::Sqrt(a) => {
                write!(f, "sqrt(")?;
                a.fmt_prec(f, names, 0)?;
                write!(f, ")")?;
            }
        }
        if parens {
            write!(f, ")")?;
        }
        Ok(())
    }
}

/// Wrapper that renders an expression with coordinate names.
pub struct DisplayExpr<'a> {
    pub expr: &'a Expr,
    pub names: &'a [String],
}

impl fmt::Display for DisplayExpr<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.expr.fmt_prec(f, self.names, 0)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("parse error at offset {offset}: {message}")]
pub struct ParseError {
    pub offset: usize,
    pub message: String,
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    names: &'a [String],
}

impl<'a> Parser<'a> {
    fn err<T>(&self, offset: usize, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError {
            offset,
            message: message.into(),
        })
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && (self.src[self.pos] as char).is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    lhs = Expr::add(lhs, self.term()?);
                }
                Some(b'-') => {
                    self.pos += 1;
                    lhs = Expr::sub(lhs, self.term()?);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    lhs = Expr::mul(lhs, self.unary()?);
                }
                Some(b'/') => {
                    self.pos += 1;
                    lhs = Expr::div(lhs, self.unary()?);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                Ok(Expr::neg(self.unary()?))
            }
            Some(b'+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            let k = self.exponent()?;
            Ok(Expr::pow(base, k))
        } else {
            Ok(base)
        }
    }

    fn exponent(&mut self) -> Result<i32, ParseError> {
        self.skip_ws();
        let start = self.pos;
        let parens = self.src.get(self.pos) == Some(&b'(');
        if parens {
            self.pos += 1;
            self.skip_ws();
        }
        let mut sign = 1i64;
        if self.src.get(self.pos) == Some(&b'-') {
            sign = -1;
            self.pos += 1;
        }
        let digits_start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos == digits_start {
            return self.err(start, "exponent must be an integer literal");
        }
        // A decimal point here means the exponent is not an integer.
        if self.src.get(self.pos) == Some(&b'.') {
            return self.err(start, "exponent must be an integer literal");
        }
        let text = std::str::from_utf8(&self.src[digits_start..self.pos]).unwrap();
        let value: i64 = match text.parse() {
            Ok(v) => v,
            Err(_) => return self.err(start, "exponent out of range"),
        };
        let value = sign * value;
        if parens {
            self.skip_ws();
            if self.src.get(self.pos) != Some(&b')') {
                return self.err(self.pos, "expected ')' after exponent");
            }
            self.pos += 1;
        }
        i32::try_from(value).or_else(|_| self.err(start, "exponent out of range"))
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            None => self.err(self.pos, "unexpected end of input"),
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                if self.peek() != Some(b')') {
                    return self.err(self.pos, "expected ')'");
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.identifier(),
            Some(c) => self.err(self.pos, format!("unexpected character '{}'", c as char)),
        }
    }

    fn number(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        let mut int_part: i128 = 0;
        let mut saw_digit = false;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            saw_digit = true;
            int_part = int_part * 10 + (self.src[self.pos] - b'0') as i128;
            if int_part > i64::MAX as i128 {
                return self.err(start, "number out of range");
            }
            self.pos += 1;
        }
        let mut num = int_part;
        let mut den: i128 = 1;
        if self.src.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            let frac_start = self.pos;
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                num = num * 10 + (self.src[self.pos] - b'0') as i128;
                den *= 10;
                if num > i64::MAX as i128 || den > i64::MAX as i128 {
                    return self.err(start, "number out of range");
                }
                self.pos += 1;
            }
            if self.pos == frac_start && !saw_digit {
                return self.err(start, "malformed number");
            }
            if self.pos == frac_start {
                return self.err(start, "digits expected after decimal point");
            }
        } else if !saw_digit {
            return self.err(start, "malformed number");
        }
        Ok(Expr::Num(Rational::new(num as i64, den as i64)))
    }

    fn identifier(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        while self.pos < self.src.len()
            && ((self.src[self.pos] as char).is_ascii_alphanumeric() || self.src[self.pos] == b'_')
        {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        match name {
            "exp" | "ln" | "sqrt" => {
                if self.peek() != Some(b'(') {
                    return self.err(self.pos, format!("expected '(' after {name}"));
                }
                self.pos += 1;
                let inner = self.expr()?;
                if self.peek() != Some(b')') {
                    return self.err(self.pos, "expected ')'");
                }
                self.pos += 1;
                Ok(match name {
                    "exp" => Expr::exp(inner),
                    "ln" => Expr::ln(inner),
                    _ => Expr::sqrt(inner),
                })
            }
            _ => match self.names.iter().position(|n| n == name) {
                Some(i) => Ok(Expr::var(i)),
                None => self.err(start, format!("unknown identifier '{name}'")),
            },
        }
    }
}

/// Parse `source` against the coordinate names of a chart.
pub fn parse_with_names(source: &str, names: &[String]) -> Result<Expr, ParseError> {
    let mut p = Parser {
        src: source.as_bytes(),
        pos: 0,
        names,
    };
    let e = p.expr()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(ParseError {
            offset: p.pos,
            message: "trailing input".into(),
        });
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (1..=n).map(|i| format!("x{i}")).collect()
    }

    #[test]
    fn parses_sum_of_squares() {
        let e = parse_with_names("x1^2 + x2^2", &names(2)).unwrap();
        assert_eq!(
            e,
            Expr::add(
                Expr::pow(Expr::var(0), 2),
                Expr::pow(Expr::var(1), 2)
            )
        );
    }

    #[test]
    fn constant_folding_is_semantic_only() {
        // -3/(1)*ln(x1) evaluates like -3 ln x1 even though folding is local.
        let e = parse_with_names("-3/(1)*ln(x1)", &names(1)).unwrap();
        let v = e.eval(&[2.0]).unwrap();
        assert!((v - (-3.0 * 2.0f64.ln())).abs() < 1e-15);
    }

    #[test]
    fn dangling_operator_reports_offset() {
        let err = parse_with_names("x1 +", &names(2)).unwrap_err();
        assert_eq!(err.offset, 4);
    }

    #[test]
    fn unknown_identifier_rejected() {
        let err = parse_with_names("x1 + y", &names(2)).unwrap_err();
        assert_eq!(err.offset, 5);
        assert!(err.message.contains("unknown identifier"));
    }

    #[test]
    fn non_integer_exponent_rejected() {
        let err = parse_with_names("x1^2.5", &names(1)).unwrap_err();
        assert!(err.message.contains("integer"));
    }

    #[test]
    fn polynomial_derivative() {
        let e = parse_with_names("x1^2", &names(1)).unwrap();
        let d = e.differentiate(0);
        assert_eq!(d.eval(&[3.0]).unwrap(), 6.0);
    }

    #[test]
    fn logarithm_derivative() {
        let e = parse_with_names("ln(x1)", &names(1)).unwrap();
        let d = e.differentiate(0);
        assert_eq!(d.eval(&[2.0]).unwrap(), 0.5);
    }

    #[test]
    fn exp_product_derivative_matches_central_difference() {
        // d/dx2 exp(x1*x2) at (1,1), central step 1e-5.
        let e = parse_with_names("exp(x1*x2)", &names(2)).unwrap();
        let d = e.differentiate(1);
        let sym = d.eval(&[1.0, 1.0]).unwrap();
        let h = 1e-5;
        let fd = (e.eval(&[1.0, 1.0 + h]).unwrap() - e.eval(&[1.0, 1.0 - h]).unwrap()) / (2.0 * h);
        assert!((sym - fd).abs() < 1e-7);
        assert!((sym - std::f64::consts::E).abs() < 1e-12);
    }

    #[test]
    fn print_parse_round_trip_exact() {
        let ns = names(3);
        let samples = [
            "x1^2 + x2^2 - x3",
            "-3*ln(x1) + exp(x2*x3)/sqrt(x1)",
            "(x1 + x2)^(-2)*x3",
            "1/2*x1 - 0.25*x2^3",
            "x1*(-x2)",
        ];
        for src in samples {
            let e = parse_with_names(src, &ns).unwrap();
            let printed = DisplayExpr { expr: &e, names: &ns }.to_string();
            let reparsed = parse_with_names(&printed, &ns).unwrap();
            assert_eq!(e, reparsed, "round trip failed for {src} -> {printed}");
            // Exact evaluation agreement at a few points.
            for pt in [[1.0, 2.0, 3.0], [0.5, 1.5, 2.5]] {
                assert_eq!(e.eval(&pt).unwrap(), reparsed.eval(&pt).unwrap());
            }
        }
    }

    #[test]
    fn ln_domain_error() {
        let e = parse_with_names("ln(x1)", &names(1)).unwrap();
        assert!(matches!(e.eval(&[-1.0]), Err(EvalError::LnDomain(_))));
    }
}
