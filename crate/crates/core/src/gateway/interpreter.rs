//! Sandboxed evaluator for a small Python-like arithmetic subset.
//!
//! Supported: integer/float/string literals, `+ - * / // % **`, parentheses,
//! variables, assignment, `print(...)`, and the functions `abs min max round
//! int float sqrt pow` (also reachable as `math.sqrt`, `math.pow`, ...).
//! Anything else yields a Python-style error line in the output.

use std::collections::HashMap;
use std::fmt;

use serde_json::Value as Json;

use super::backend::{Backend, BackendError, CallContext};

const MAX_CODE_BYTES: usize = 16 * 1024;
const MAX_OUTPUT_BYTES: usize = 16 * 1024;

#[derive(Debug, Clone, PartialEq)]
enum Value {
    Int(i64),
    Float(f64),
    Str(String),
    None,
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(i) => write!(f, "{i}"),
            Value::Float(x) if x.is_finite() && x.fract() == 0.0 && x.abs() < 1e16 => write!(f, "{x:.1}"),
            Value::Float(x) if x.is_nan() => write!(f, "nan"),
            Value::Float(x) if x.is_infinite() => write!(f, "{}", if *x > 0.0 { "inf" } else { "-inf" }),
            Value::Float(x) => write!(f, "{x}"),
            Value::Str(s) => write!(f, "{s}"),
            Value::None => write!(f, "None"),
        }
    }
}

impl Value {
    fn as_f64(&self) -> Result<f64, String> {
        match self {
            Value::Int(i) => Ok(*i as f64),
            Value::Float(x) => Ok(*x),
            other => Err(format!("TypeError: expected a number, got {}", other.type_name())),
        }
    }

    fn type_name(&self) -> &'static str {
        match self {
            Value::Int(_) => "int",
            Value::Float(_) => "float",
            Value::Str(_) => "str",
            Value::None => "NoneType",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(Value),
    Str(String),
    Ident(String),
    Op(&'static str),
    LParen,
    RParen,
    Comma,
    Assign,
}

fn tokenize(line: &str) -> Result<Vec<Tok>, String> {
    let chars: Vec<char> = line.chars().collect();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            ' ' | '\t' | '\r' => i += 1,
            '#' => break,
            '(' => {
                toks.push(Tok::LParen);
                i += 1;
            }
            ')' => {
                toks.push(Tok::RParen);
                i += 1;
            }
            ',' => {
                toks.push(Tok::Comma);
                i += 1;
            }
            '\'' | '"' => {
                let mut s = String::new();
                i += 1;
                while i < chars.len() && chars[i] != c {
                    s.push(chars[i]);
                    i += 1;
                }
                if i >= chars.len() {
                    return Err("SyntaxError: unterminated string literal".into());
                }
                i += 1;
                toks.push(Tok::Str(s));
            }
            '0'..='9' | '.' if c != '.' || chars.get(i + 1).is_some_and(char::is_ascii_digit) => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.' || chars[i] == '_') {
                    i += 1;
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    i += 1;
                    if i < chars.len() && (chars[i] == '+' || chars[i] == '-') {
                        i += 1;
                    }
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                let text: String = chars[start..i].iter().filter(|c| **c != '_').collect();
                let v = if text.contains(['.', 'e', 'E']) {
                    Value::Float(text.parse().map_err(|_| format!("SyntaxError: bad number '{text}'"))?)
                } else {
                    Value::Int(text.parse().map_err(|_| format!("OverflowError: integer '{text}' too large"))?)
                };
                toks.push(Tok::Num(v));
            }
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_' || chars[i] == '.') {
                    i += 1;
                }
                toks.push(Tok::Ident(chars[start..i].iter().collect()));
            }
            _ => {
                let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
                let op = match two.as_str() {
                    "**" => Some("**"),
                    "//" => Some("//"),
                    "==" => return Err("SyntaxError: comparisons are not supported".into()),
                    _ => None,
                };
                if let Some(op) = op {
                    toks.push(Tok::Op(op));
                    i += 2;
                    continue;
                }
                let op = match c {
                    '+' => "+",
                    '-' => "-",
                    '*' => "*",
                    '/' => "/",
                    '%' => "%",
                    '=' => {
                        toks.push(Tok::Assign);
                        i += 1;
                        continue;
                    }
                    _ => return Err(format!("SyntaxError: unexpected character '{c}'")),
                };
                toks.push(Tok::Op(op));
                i += 1;
            }
        }
    }
    Ok(toks)
}

struct Interp {
    vars: HashMap<String, Value>,
    out: String,
}

struct Parser<'a> {
    toks: &'a [Tok],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<&Tok> {
        let t = self.toks.get(self.pos);
        self.pos += 1;
        t
    }

    fn expect(&mut self, want: &Tok) -> Result<(), String> {
        match self.next() {
            Some(t) if t == want => Ok(()),
            _ => Err("SyntaxError: invalid syntax".into()),
        }
    }
}

impl Interp {
    fn expr(&mut self, p: &mut Parser<'_>) -> Result<Value, String> {
        let mut lhs = self.term(p)?;
        while let Some(Tok::Op(op @ ("+" | "-"))) = p.peek() {
            let op = *op;
            p.next();
            let rhs = self.term(p)?;
            lhs = binary(op, lhs, rhs)?;
        }
        Ok(lhs)
    }

    fn term(&mut self, p: &mut Parser<'_>) -> Result<Value, String> {
        let mut lhs = self.unary(p)?;
        while let Some(Tok::Op(op @ ("*" | "/" | "//" | "%"))) = p.peek() {
            let op = *op;
            p.next();
            let rhs = self.unary(p)?;
            lhs = binary(op, lhs, rhs)?;
        }
        Ok(lhs)
    }

    fn unary(&mut self, p: &mut Parser<'_>) -> Result<Value, String> {
        match p.peek() {
            Some(Tok::Op("-")) => {
                p.next();
                let v = self.unary(p)?;
                binary("-", Value::Int(0), v)
            }
            Some(Tok::Op("+")) => {
                p.next();
                self.unary(p)
            }
            _ => self.power(p),
        }
    }

    fn power(&mut self, p: &mut Parser<'_>) -> Result<Value, String> {
        let base = self.atom(p)?;
        if let Some(Tok::Op("**")) = p.peek() {
            p.next();
            let exp = self.unary(p)?;
            return binary("**", base, exp);
        }
        Ok(base)
    }

    fn atom(&mut self, p: &mut Parser<'_>) -> Result<Value, String> {
        match p.next().cloned() {
            Some(Tok::Num(v)) => Ok(v),
            Some(Tok::Str(s)) => Ok(Value::Str(s)),
            Some(Tok::LParen) => {
                let v = self.expr(p)?;
                p.expect(&Tok::RParen)?;
                Ok(v)
            }
            Some(Tok::Ident(name)) => {
                if let Some(Tok::LParen) = p.peek() {
                    p.next();
                    let mut args = Vec::new();
                    if p.peek() != Some(&Tok::RParen) {
                        loop {
                            args.push(self.expr(p)?);
                            match p.next() {
                                Some(Tok::Comma) => continue,
                                Some(Tok::RParen) => break,
                                _ => return Err("SyntaxError: invalid syntax".into()),
                            }
                        }
                    } else {
                        p.next();
                    }
                    return self.call(&name, args);
                }
                match name.as_str() {
                    "True" => Ok(Value::Int(1)),
                    "False" => Ok(Value::Int(0)),
                    "None" => Ok(Value::None),
                    "math.pi" => Ok(Value::Float(std::f64::consts::PI)),
                    "math.e" => Ok(Value::Float(std::f64::consts::E)),
                    _ => self
                        .vars
                        .get(&name)
                        .cloned()
                        .ok_or_else(|| format!("NameError: name '{name}' is not defined")),
                }
            }
            _ => Err("SyntaxError: invalid syntax".into()),
        }
    }

    fn call(&mut self, name: &str, args: Vec<Value>) -> Result<Value, String> {
        let name = name.strip_prefix("math.").unwrap_or(name);
        let arity = |n: usize| {
            if args.len() == n {
                Ok(())
            } else {
                Err(format!("TypeError: {name}() takes {n} argument(s)"))
            }
        };
        match name {
            "print" => {
                let line: Vec<String> = args.iter().map(ToString::to_string).collect();
                self.out.push_str(&line.join(" "));
                self.out.push('\n');
                if self.out.len() > MAX_OUTPUT_BYTES {
                    return Err("RuntimeError: output limit exceeded".into());
                }
                Ok(Value::None)
            }
            "abs" => {
                arity(1)?;
                match &args[0] {
                    Value::Int(i) => i.checked_abs().map(Value::Int).ok_or_else(overflow),
                    v => Ok(Value::Float(v.as_f64()?.abs())),
                }
            }
            "min" | "max" => {
                if args.is_empty() {
                    return Err(format!("TypeError: {name} expected at least 1 argument"));
                }
                let mut best = args[0].clone();
                for a in &args[1..] {
                    let better = if name == "min" {
                        a.as_f64()? < best.as_f64()?
                    } else {
                        a.as_f64()? > best.as_f64()?
                    };
                    if better {
                        best = a.clone();
                    }
                }
                Ok(best)
            }
            "round" => match args.as_slice() {
                [v] => {
                    let x = v.as_f64()?.round_ties_even();
                    if x.abs() < 9.2e18 {
                        Ok(Value::Int(x as i64))
                    } else {
                        Err(overflow())
                    }
                }
                [v, Value::Int(d)] => {
                    let scale = 10f64.powi(*d as i32);
                    Ok(Value::Float((v.as_f64()? * scale).round_ties_even() / scale))
                }
                _ => Err("TypeError: round() takes 1 or 2 arguments".into()),
            },
            "int" => {
                arity(1)?;
                match &args[0] {
                    Value::Str(s) => s.trim().parse().map(Value::Int).map_err(|_| format!("ValueError: invalid literal for int(): '{s}'")),
                    v => Ok(Value::Int(v.as_f64()?.trunc() as i64)),
                }
            }
            "float" => {
                arity(1)?;
                match &args[0] {
                    Value::Str(s) => s.trim().parse().map(Value::Float).map_err(|_| format!("ValueError: could not convert string to float: '{s}'")),
                    v => Ok(Value::Float(v.as_f64()?)),
                }
            }
            "sqrt" => {
                arity(1)?;
                let x = args[0].as_f64()?;
                if x < 0.0 {
                    return Err("ValueError: math domain error".into());
                }
                Ok(Value::Float(x.sqrt()))
            }
            "pow" => {
                arity(2)?;
                binary("**", args[0].clone(), args[1].clone())
            }
            "log" | "exp" | "sin" | "cos" => {
                arity(1)?;
                let x = args[0].as_f64()?;
                let y = match name {
                    "log" if x <= 0.0 => return Err("ValueError: math domain error".into()),
                    "log" => x.ln(),
                    "exp" => x.exp(),
                    "sin" => x.sin(),
                    _ => x.cos(),
                };
                Ok(Value::Float(y))
            }
            _ => Err(format!("NameError: name '{name}' is not defined")),
        }
    }

    fn statement(&mut self, line: &str) -> Result<(), String> {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            return Ok(());
        }
        if trimmed.starts_with("import ") || trimmed.starts_with("from ") {
            return if trimmed == "import math" {
                Ok(())
            } else {
                Err("ImportError: only 'import math' is available in this sandbox".into())
            };
        }
        let toks = tokenize(trimmed)?;
        let (target, body) = match toks.as_slice() {
            [Tok::Ident(name), Tok::Assign, rest @ ..] => (Some(name.clone()), rest),
            _ => (None, toks.as_slice()),
        };
        if body.contains(&Tok::Assign) {
            return Err("SyntaxError: invalid syntax".into());
        }
        let mut p = Parser { toks: body, pos: 0 };
        let v = self.expr(&mut p)?;
        if p.pos != body.len() {
            return Err("SyntaxError: invalid syntax".into());
        }
        if let Some(name) = target {
            self.vars.insert(name, v);
        }
        Ok(())
    }
}

fn overflow() -> String {
    "OverflowError: integer result too large".into()
}

fn binary(op: &str, a: Value, b: Value) -> Result<Value, String> {
    use Value::*;
    if let (Str(x), Str(y), "+") = (&a, &b, op) {
        return Ok(Str(format!("{x}{y}")));
    }
    if let (Str(x), Int(n), "*") = (&a, &b, op) {
        if *n > 10_000 {
            return Err("RuntimeError: string too large".into());
        }
        return Ok(Str(x.repeat((*n).max(0) as usize)));
    }
    match (&a, &b) {
        (Int(x), Int(y)) => {
            let (x, y) = (*x, *y);
            match op {
                "+" => x.checked_add(y).map(Int).ok_or_else(overflow),
                "-" => x.checked_sub(y).map(Int).ok_or_else(overflow),
                "*" => x.checked_mul(y).map(Int).ok_or_else(overflow),
                "/" if y == 0 => Err("ZeroDivisionError: division by zero".into()),
                "/" => Ok(Float(x as f64 / y as f64)),
                "//" | "%" if y == 0 => Err("ZeroDivisionError: integer division or modulo by zero".into()),
                "//" => Ok(Int(x.div_euclid(y) - if y < 0 && x.rem_euclid(y) != 0 { 1 } else { 0 })),
                "%" => {
                    let r = x.rem_euclid(y);
                    Ok(Int(if y < 0 && r != 0 { r + y } else { r }))
                }
                "**" if y < 0 => Ok(Float((x as f64).powf(y as f64))),
                "**" => u32::try_from(y)
                    .ok()
                    .and_then(|e| x.checked_pow(e))
                    .map(Int)
                    .ok_or_else(overflow),
                _ => Err(format!("SyntaxError: unknown operator {op}")),
            }
        }
        _ => {
            let (x, y) = (a.as_f64()?, b.as_f64()?);
            let r = match op {
                "+" => x + y,
                "-" => x - y,
                "*" => x * y,
                "/" | "//" | "%" if y == 0.0 => return Err("ZeroDivisionError: float division by zero".into()),
                "/" => x / y,
                "//" => (x / y).floor(),
                "%" => x - y * (x / y).floor(),
                "**" => x.powf(y),
                _ => return Err(format!("SyntaxError: unknown operator {op}")),
            };
            Ok(Float(r))
        }
    }
}

/// Runs `code` and returns its standard output, ending with an error line if
/// execution stopped early.
pub fn run(code: &str) -> String {
    if code.len() > MAX_CODE_BYTES {
        return "Error: code exceeds the sandbox size limit".into();
    }
    let mut interp = Interp {
        vars: HashMap::new(),
        out: String::new(),
    };
    for (lineno, line) in code.split(['\n', ';']).enumerate() {
        if let Err(e) = interp.statement(line) {
            interp.out.push_str(&format!("Error (statement {}): {e}\n", lineno + 1));
            break;
        }
    }
    if interp.out.is_empty() {
        "Execution finished with no output. Use print() to see results.".into()
    } else {
        interp.out
    }
}

/// Gateway backend for the code-interpreter tool.
#[derive(Debug, Default, Clone, Copy)]
pub struct SandboxBackend;

impl Backend for SandboxBackend {
    fn call(&self, _: &str, arguments: &Json, _: &CallContext<'_>) -> Result<String, BackendError> {
        match arguments.get("code").and_then(Json::as_str) {
            Some(code) => Ok(run(code)),
            None => Ok("Error: no code given. Put the code inside <code></code> tags.".into()),
        }
    }
}
