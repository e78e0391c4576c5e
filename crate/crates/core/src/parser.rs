//! Line-oriented text formats for machines and configurations, and the
//! JSON trace format.
//!
//! Machine files have `[speeds]`, `[rules]` and optional `[meta]` sections;
//! a `[config]` section may follow to form a machine+configuration bundle.
//! `#` starts a comment at the beginning of a line or when followed by
//! whitespace, so colours like `#ff0000` survive.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde_json::{json, Map, Value};

use crate::asm::{Affine, CmpOp, Comparison, Guard, Payload, PatternInput, PatternOutput, RulePattern};
use crate::engine::{Collision, Freeze, Halt, HaltReason, Resolution, Segment, Trace};
use crate::exactnum::{fmt_rational, parse_rational, Rational};
use crate::machine::{
    validate_machine, CollisionRule, Domain, Machine, MetaSignal, Mode, Stroke, ValidationReport,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Placed {
    pub x: Rational,
    pub signal: String,
    pub payload: Option<Payload>,
}

impl Placed {
    pub fn new(x: Rational, signal: &str) -> Self {
        Placed {
            x,
            signal: signal.to_string(),
            payload: None,
        }
    }

    pub fn with(x: Rational, signal: &str, payload: Payload) -> Self {
        Placed {
            x,
            signal: signal.to_string(),
            payload: Some(payload),
        }
    }
}

/// Signals at time 0, sorted by position then speed once parsed.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct InitialConfiguration {
    pub signals: Vec<Placed>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid machine:\n{0}")]
    Invalid(ValidationReport),
    #[error("bad trace: {0}")]
    Trace(String),
}

fn syntax(line: usize, column: usize, message: impl Into<String>) -> ParseError {
    ParseError::Syntax {
        line,
        column,
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Speeds,
    Rules,
    Meta,
    Config,
}

/// One non-blank line with its position, comment stripped.
#[derive(Debug, Clone)]
struct Line<'a> {
    no: usize,
    indent: usize,
    text: &'a str,
}

/// Parsed structure before interpretation.
#[derive(Debug, Clone, Default)]
pub struct SourceDocument<'a> {
    sections: Vec<(Section, Vec<Line<'a>>)>,
}

fn strip_comment(raw: &str) -> &str {
    let b = raw.as_bytes();
    for i in 0..b.len() {
        if b[i] == b'#' {
            let at_start = raw[..i].trim().is_empty();
            let then_space = i + 1 == b.len() || b[i + 1].is_ascii_whitespace();
            if at_start || then_space {
                return &raw[..i];
            }
        }
    }
    raw
}

fn read_document(text: &str, default: Option<Section>) -> Result<SourceDocument<'_>, ParseError> {
    let mut doc = SourceDocument::default();
    let mut current = default.map(|s| (s, Vec::new()));
    for (i, raw) in text.lines().enumerate() {
        let no = i + 1;
        let body = strip_comment(raw);
        let trimmed = body.trim();
        if trimmed.is_empty() {
            continue;
        }
        let indent = body.len() - body.trim_start().len() + 1;
        if let Some(name) = trimmed.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
            let sec = match name.trim() {
                "speeds" => Section::Speeds,
                "rules" => Section::Rules,
                "meta" => Section::Meta,
                "config" => Section::Config,
                other => return Err(syntax(no, indent, format!("unknown section `{other}`"))),
            };
            if let Some(c) = current.take() {
                doc.sections.push(c);
            }
            current = Some((sec, Vec::new()));
            continue;
        }
        match current.as_mut() {
            Some((_, lines)) => lines.push(Line {
                no,
                indent,
                text: trimmed,
            }),
            None => return Err(syntax(no, indent, "content before any section header")),
        }
    }
    if let Some(c) = current {
        doc.sections.push(c);
    }
    Ok(doc)
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '\'')
}

/// `name` or `name(a,b)`.
fn split_call(s: &str) -> Option<(&str, Option<(&str, &str)>)> {
    let s = s.trim();
    match s.find('(') {
        None => Some((s, None)),
        Some(open) => {
            let inner = s[open + 1..].strip_suffix(')')?;
            let parts = split_top(inner, ',');
            if parts.len() != 2 {
                return None;
            }
            Some((s[..open].trim(), Some((parts[0].trim(), parts[1].trim()))))
        }
    }
}

/// Splits on `sep` outside parentheses.
fn split_top(s: &str, sep: char) -> Vec<&str> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in s.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            c if c == sep && depth == 0 => {
                out.push(&s[start..i]);
                start = i + c.len_utf8();
            }
            _ => {}
        }
    }
    out.push(&s[start..]);
    out
}

fn parse_set(s: &str) -> Option<Vec<&str>> {
    let inner = s.trim().strip_prefix('{')?.strip_suffix('}')?;
    if inner.trim().is_empty() {
        return Some(Vec::new());
    }
    Some(split_top(inner, ',').into_iter().map(str::trim).collect())
}

/// Affine expression such as `2*u-1` or `u+v-1/2`.
pub fn parse_affine(s: &str) -> Result<Affine, String> {
    let s: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    if s.is_empty() {
        return Err("empty expression".into());
    }
    let mut acc = Affine::default();
    let bytes = s.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let mut sign = 1i64;
        if bytes[i] == b'+' || bytes[i] == b'-' {
            if bytes[i] == b'-' {
                sign = -1;
            }
            i += 1;
        } else if i > 0 {
            return Err(format!("expected + or - in `{s}`"));
        }
        let start = i;
        while i < bytes.len() && bytes[i] != b'+' && bytes[i] != b'-' {
            i += 1;
        }
        let term = &s[start..i];
        let (coef, var) = match term.split_once('*') {
            Some((c, v)) => (parse_rational(c).map_err(|e| e.to_string())?, Some(v)),
            None if is_ident(term) => (Rational::from_integer(1.into()), Some(term)),
            None => (parse_rational(term).map_err(|e| e.to_string())?, None),
        };
        let coef = coef * Rational::from_integer(sign.into());
        match var {
            Some(v) if is_ident(v) => acc.terms.push((v.to_string(), coef)),
            Some(v) => return Err(format!("bad variable `{v}`")),
            None => acc.constant += coef,
        }
    }
    Ok(acc.normalized())
}

fn parse_comparison(s: &str) -> Result<Comparison, String> {
    for (sym, op) in [
        ("<=", CmpOp::Le),
        (">=", CmpOp::Ge),
        ("==", CmpOp::Eq),
        ("<", CmpOp::Lt),
        (">", CmpOp::Gt),
        ("=", CmpOp::Eq),
    ] {
        if let Some((l, r)) = s.split_once(sym) {
            return Ok(Comparison {
                lhs: parse_affine(l)?,
                op,
                rhs: parse_affine(r)?,
            });
        }
    }
    Err(format!("no comparison operator in `{}`", s.trim()))
}

pub fn parse_guard(s: &str) -> Result<Guard, String> {
    let mut clauses = Vec::new();
    for clause in s.split('|') {
        let mut cmps = Vec::new();
        for c in clause.split('&') {
            cmps.push(parse_comparison(c)?);
        }
        clauses.push(cmps);
    }
    Ok(Guard { clauses })
}

enum RuleLine {
    Plain(CollisionRule),
    Pattern(RulePattern),
}

fn parse_rule_line(text: &str) -> Result<RuleLine, String> {
    let (lhs, guard, rhs) = if let Some(gi) = text.find("-[") {
        let rest = &text[gi + 2..];
        let close = rest.find("]->").ok_or("guard must end with `]->`")?;
        (&text[..gi], Some(&rest[..close]), &rest[close + 3..])
    } else {
        let (l, r) = text.split_once("->").ok_or("expected `->`")?;
        (l, None, r)
    };
    let ins = parse_set(lhs).ok_or("left side must be `{ ... }`")?;
    let outs = parse_set(rhs).ok_or("right side must be `{ ... }`")?;
    if ins.len() < 2 {
        return Err("input set needs >= 2 signals".into());
    }
    let mut pattern = guard.is_some();
    let mut pins = Vec::new();
    for i in &ins {
        let (name, args) = split_call(i).ok_or_else(|| format!("bad input `{i}`"))?;
        if !is_ident(name) {
            return Err(format!("bad signal name `{name}`"));
        }
        let vars = match args {
            None => None,
            Some((a, b)) => {
                if !is_ident(a) || !is_ident(b) {
                    return Err(format!("payload of `{name}` must bind two variables"));
                }
                pattern = true;
                Some((a.to_string(), b.to_string()))
            }
        };
        pins.push(PatternInput {
            name: name.to_string(),
            vars,
        });
    }
    let mut pouts = Vec::new();
    for o in &outs {
        let (name, args) = split_call(o).ok_or_else(|| format!("bad output `{o}`"))?;
        if !is_ident(name) {
            return Err(format!("bad signal name `{name}`"));
        }
        let payload = match args {
            None => None,
            Some((a, b)) => {
                pattern = true;
                Some((parse_affine(a)?, parse_affine(b)?))
            }
        };
        pouts.push(PatternOutput {
            name: name.to_string(),
            payload,
        });
    }
    if pattern {
        Ok(RuleLine::Pattern(RulePattern {
            inputs: pins,
            guard: guard.map(parse_guard).transpose()?,
            outputs: pouts,
        }))
    } else {
        Ok(RuleLine::Plain(CollisionRule {
            inputs: pins.into_iter().map(|p| p.name).collect(),
            outputs: pouts.into_iter().map(|p| p.name).collect(),
        }))
    }
}

fn machine_from(doc: &SourceDocument<'_>) -> Result<Machine, ParseError> {
    let mut signals = Vec::new();
    let mut rules = Vec::new();
    let mut patterns = Vec::new();
    let mut mode = Mode::Strict;
    let mut colors = BTreeMap::new();
    let mut styles = BTreeMap::new();
    for (sec, lines) in &doc.sections {
        for l in lines {
            let err = |m: String| syntax(l.no, l.indent, m);
            match sec {
                Section::Speeds => {
                    let (lhs, rhs) = l
                        .text
                        .split_once('=')
                        .ok_or_else(|| err("expected `name = speed`".into()))?;
                    let (name, args) =
                        split_call(lhs).ok_or_else(|| err(format!("bad name `{}`", lhs.trim())))?;
                    if !is_ident(name) {
                        return Err(err(format!("bad name `{name}`")));
                    }
                    let speed = parse_rational(rhs.trim()).map_err(|e| err(e.to_string()))?;
                    signals.push(MetaSignal {
                        name: name.to_string(),
                        speed,
                        domain: if args.is_some() {
                            Domain::Pair
                        } else {
                            Domain::Singleton
                        },
                    });
                }
                Section::Rules => match parse_rule_line(l.text).map_err(err)? {
                    RuleLine::Plain(r) => rules.push(r),
                    RuleLine::Pattern(p) => patterns.push(p),
                },
                Section::Meta => {
                    let (lhs, rhs) = l
                        .text
                        .split_once('=')
                        .ok_or_else(|| err("expected `key = value`".into()))?;
                    let words: Vec<&str> = lhs.split_whitespace().collect();
                    let value = rhs.trim();
                    match words.as_slice() {
                        ["mode"] => {
                            mode = match value {
                                "strict" => Mode::Strict,
                                "transparent" => Mode::Transparent,
                                _ => return Err(err(format!("unknown mode `{value}`"))),
                            }
                        }
                        ["color", name] => {
                            let hex = value.strip_prefix('#').unwrap_or("");
                            if hex.len() != 6 || !hex.chars().all(|c| c.is_ascii_hexdigit()) {
                                return Err(err(format!("bad colour `{value}`")));
                            }
                            colors.insert(name.to_string(), value.to_ascii_lowercase());
                        }
                        ["style", name] => {
                            let s = match value {
                                "solid" => Stroke::Solid,
                                "dashed" => Stroke::Dashed,
                                "dotted" => Stroke::Dotted,
                                _ => return Err(err(format!("unknown style `{value}`"))),
                            };
                            styles.insert(name.to_string(), s);
                        }
                        _ => return Err(err(format!("unknown meta key `{}`", lhs.trim()))),
                    }
                }
                Section::Config => {}
            }
        }
    }
    let mut m = Machine::new(signals, rules, patterns, mode);
    m.colors = colors;
    m.styles = styles;
    let report = validate_machine(&m);
    if !report.is_empty() {
        return Err(ParseError::Invalid(report));
    }
    Ok(m)
}

pub fn parse_machine(text: &str) -> Result<Machine, ParseError> {
    machine_from(&read_document(text, None)?)
}

fn config_from(doc: &SourceDocument<'_>, m: &Machine) -> Result<InitialConfiguration, ParseError> {
    let mut out = Vec::new();
    for (sec, lines) in &doc.sections {
        if *sec != Section::Config {
            continue;
        }
        for l in lines {
            let err = |m: String| syntax(l.no, l.indent, m);
            let rest = l
                .text
                .strip_prefix("at")
                .filter(|r| r.starts_with(char::is_whitespace))
                .ok_or_else(|| err("expected `at <position> <signal>`".into()))?
                .trim_start();
            let (pos, item) = rest
                .split_once(char::is_whitespace)
                .ok_or_else(|| err("expected `at <position> <signal>`".into()))?;
            let x = parse_rational(pos).map_err(|e| err(e.to_string()))?;
            let (name, args) =
                split_call(item).ok_or_else(|| err(format!("bad signal `{}`", item.trim())))?;
            let meta = m
                .signal(name)
                .ok_or_else(|| err(format!("unknown signal `{name}`")))?;
            let payload = match args {
                None => None,
                Some((a, b)) => Some((
                    parse_rational(a).map_err(|e| err(e.to_string()))?,
                    parse_rational(b).map_err(|e| err(e.to_string()))?,
                )),
            };
            if payload.is_some() != (meta.domain == Domain::Pair) {
                return Err(err(format!("payload of `{name}` does not match its domain")));
            }
            out.push((l.no, l.indent, Placed {
                x,
                signal: name.to_string(),
                payload,
            }));
        }
    }
    out.sort_by(|a, b| {
        a.2.x
            .cmp(&b.2.x)
            .then_with(|| m.signal(&a.2.signal).unwrap().speed.cmp(&m.signal(&b.2.signal).unwrap().speed))
    });
    for w in out.windows(2) {
        let (a, b) = (&w[0].2, &w[1].2);
        if a.x == b.x && m.signal(&a.signal).unwrap().speed == m.signal(&b.signal).unwrap().speed {
            return Err(syntax(
                w[1].0,
                w[1].1,
                format!("`{}` and `{}` overlap at {}", a.signal, b.signal, fmt_rational(&a.x)),
            ));
        }
    }
    Ok(InitialConfiguration {
        signals: out.into_iter().map(|(_, _, p)| p).collect(),
    })
}

/// Parses `at <x> <name>` lines (an optional `[config]` header is accepted).
pub fn parse_configuration(text: &str, m: &Machine) -> Result<InitialConfiguration, ParseError> {
    config_from(&read_document(text, Some(Section::Config))?, m)
}

/// Parses a machine with a trailing `[config]` section.
pub fn parse_bundle(text: &str) -> Result<(Machine, InitialConfiguration), ParseError> {
    let doc = read_document(text, None)?;
    let m = machine_from(&doc)?;
    let c = config_from(&doc, &m)?;
    Ok((m, c))
}

fn write_set(out: &mut String, items: &[String]) {
    out.push('{');
    if !items.is_empty() {
        out.push(' ');
        out.push_str(&items.join(", "));
        out.push(' ');
    }
    out.push('}');
}

pub fn serialize_machine(m: &Machine) -> String {
    let mut out = String::from("[speeds]\n");
    for s in &m.signals {
        let name = match s.domain {
            Domain::Singleton => s.name.clone(),
            Domain::Pair => format!("{}(u,v)", s.name),
        };
        let _ = writeln!(out, "{name} = {}", fmt_rational(&s.speed));
    }
    out.push_str("\n[rules]\n");
    for r in &m.rules {
        write_set(&mut out, &r.inputs);
        out.push_str(" -> ");
        write_set(&mut out, &r.outputs);
        out.push('\n');
    }
    for p in &m.patterns {
        let ins: Vec<String> = p
            .inputs
            .iter()
            .map(|i| match &i.vars {
                Some((a, b)) => format!("{}({a},{b})", i.name),
                None => i.name.clone(),
            })
            .collect();
        let outs: Vec<String> = p
            .outputs
            .iter()
            .map(|o| match &o.payload {
                Some((a, b)) => format!("{}({a},{b})", o.name),
                None => o.name.clone(),
            })
            .collect();
        write_set(&mut out, &ins);
        match &p.guard {
            Some(g) => {
                let _ = write!(out, " -[{g}]-> ");
            }
            None => out.push_str(" -> "),
        }
        write_set(&mut out, &outs);
        out.push('\n');
    }
    out.push_str("\n[meta]\n");
    let _ = writeln!(
        out,
        "mode = {}",
        match m.mode {
            Mode::Strict => "strict",
            Mode::Transparent => "transparent",
        }
    );
    for (n, c) in &m.colors {
        let _ = writeln!(out, "color {n} = {c}");
    }
    for (n, s) in &m.styles {
        let _ = writeln!(out, "style {n} = {}", s.name());
    }
    out
}

pub fn serialize_config(c: &InitialConfiguration) -> String {
    let mut out = String::new();
    for p in &c.signals {
        match &p.payload {
            Some((a, b)) => {
                let _ = writeln!(
                    out,
                    "at {} {}({},{})",
                    fmt_rational(&p.x),
                    p.signal,
                    fmt_rational(a),
                    fmt_rational(b)
                );
            }
            None => {
                let _ = writeln!(out, "at {} {}", fmt_rational(&p.x), p.signal);
            }
        }
    }
    out
}

pub fn serialize_bundle(m: &Machine, c: &InitialConfiguration) -> String {
    format!("{}\n[config]\n{}", serialize_machine(m), serialize_config(c))
}

fn qs(r: &Rational) -> Value {
    Value::String(fmt_rational(r))
}

fn payload_json(p: &Option<Payload>) -> Value {
    match p {
        Some((a, b)) => json!([fmt_rational(a), fmt_rational(b)]),
        None => Value::Null,
    }
}

fn idx(i: Option<usize>) -> Value {
    i.map(Value::from).unwrap_or(Value::Null)
}

/// Trace as JSON; every number is an exact `p/q` string.
pub fn trace_to_json(t: &Trace) -> String {
    let signals: Vec<Value> = t
        .signals
        .iter()
        .map(|(n, s)| json!({"name": n, "speed": fmt_rational(s)}))
        .collect();
    let segments: Vec<Value> = t
        .segments
        .iter()
        .map(|s| {
            let mut o = Map::new();
            o.insert("signal".into(), Value::String(t.signals[s.signal].0.clone()));
            o.insert("x0".into(), qs(&s.x0));
            o.insert("t0".into(), qs(&s.t0));
            let (x1, t1) = match &s.end {
                Some((x, y)) => (qs(x), qs(y)),
                None => (Value::Null, Value::Null),
            };
            o.insert("x1".into(), x1);
            o.insert("t1".into(), t1);
            o.insert("payload".into(), payload_json(&s.payload));
            o.insert("start".into(), idx(s.start));
            o.insert("stop".into(), idx(s.stop));
            o.insert("frozen".into(), Value::Bool(s.frozen));
            Value::Object(o)
        })
        .collect();
    let collisions: Vec<Value> = t
        .collisions
        .iter()
        .map(|c| {
            json!({
                "t": fmt_rational(&c.t),
                "x": fmt_rational(&c.x),
                "rule_inputs": c.inputs.iter().map(|&s| t.name(s)).collect::<Vec<_>>(),
                "rule_outputs": c.outputs.iter().map(|&s| t.name(s)).collect::<Vec<_>>(),
                "inputs": c.inputs,
                "outputs": c.outputs,
                "resolution": c.resolution.label(),
            })
        })
        .collect();
    let frozen: Vec<Value> = t
        .frozen
        .iter()
        .map(|f| json!({"t": fmt_rational(&f.t), "x": fmt_rational(&f.x), "segments": f.segments}))
        .collect();
    let doc = json!({
        "signals": signals,
        "segments": segments,
        "collisions": collisions,
        "frozen": frozen,
        "halt": {
            "reason": t.halt.reason.name(),
            "collisions": t.halt.collisions,
            "final_time": fmt_rational(&t.halt.final_time),
        },
    });
    let mut s = serde_json::to_string(&doc).expect("json values always serialize");
    s.push('\n');
    s
}

fn terr(m: impl Into<String>) -> ParseError {
    ParseError::Trace(m.into())
}

fn get<'a>(v: &'a Value, k: &str) -> Result<&'a Value, ParseError> {
    v.get(k).ok_or_else(|| terr(format!("missing field `{k}`")))
}

fn rat(v: &Value) -> Result<Rational, ParseError> {
    let s = v.as_str().ok_or_else(|| terr("expected a `p/q` string"))?;
    parse_rational(s).map_err(|e| terr(e.to_string()))
}

fn uidx(v: &Value) -> Result<Option<usize>, ParseError> {
    match v {
        Value::Null => Ok(None),
        v => v
            .as_u64()
            .map(|n| Some(n as usize))
            .ok_or_else(|| terr("expected an index")),
    }
}

fn ulist(v: &Value) -> Result<Vec<usize>, ParseError> {
    v.as_array()
        .ok_or_else(|| terr("expected a list"))?
        .iter()
        .map(|x| uidx(x)?.ok_or_else(|| terr("null index")))
        .collect()
}

fn arr<'a>(v: &'a Value, k: &str) -> Result<&'a Vec<Value>, ParseError> {
    get(v, k)?
        .as_array()
        .ok_or_else(|| terr(format!("`{k}` must be a list")))
}

pub fn trace_from_json(text: &str) -> Result<Trace, ParseError> {
    let v: Value = serde_json::from_str(text).map_err(|e| terr(e.to_string()))?;
    let mut signals = Vec::new();
    let mut ids = BTreeMap::new();
    for s in arr(&v, "signals")? {
        let name = get(s, "name")?.as_str().ok_or_else(|| terr("bad name"))?;
        ids.insert(name.to_string(), signals.len());
        signals.push((name.to_string(), rat(get(s, "speed")?)?));
    }
    let mut segments = Vec::new();
    for s in arr(&v, "segments")? {
        let name = get(s, "signal")?.as_str().ok_or_else(|| terr("bad signal"))?;
        let signal = *ids
            .get(name)
            .ok_or_else(|| terr(format!("unknown signal `{name}`")))?;
        let end = match (get(s, "x1")?, get(s, "t1")?) {
            (Value::Null, Value::Null) => None,
            (x, t) => Some((rat(x)?, rat(t)?)),
        };
        let payload = match s.get("payload") {
            None | Some(Value::Null) => None,
            Some(Value::Array(p)) if p.len() == 2 => Some((rat(&p[0])?, rat(&p[1])?)),
            Some(_) => return Err(terr("payload must be a pair")),
        };
        segments.push(Segment {
            signal,
            payload,
            x0: rat(get(s, "x0")?)?,
            t0: rat(get(s, "t0")?)?,
            end,
            start: uidx(s.get("start").unwrap_or(&Value::Null))?,
            stop: uidx(s.get("stop").unwrap_or(&Value::Null))?,
            frozen: s.get("frozen").and_then(Value::as_bool).unwrap_or(false),
        });
    }
    let mut collisions = Vec::new();
    for c in arr(&v, "collisions")? {
        let res = get(c, "resolution")?
            .as_str()
            .and_then(Resolution::from_label)
            .ok_or_else(|| terr("bad resolution"))?;
        collisions.push(Collision {
            t: rat(get(c, "t")?)?,
            x: rat(get(c, "x")?)?,
            inputs: ulist(get(c, "inputs")?)?,
            outputs: ulist(get(c, "outputs")?)?,
            resolution: res,
        });
    }
    let mut frozen = Vec::new();
    if let Some(Value::Array(fs)) = v.get("frozen") {
        for f in fs {
            frozen.push(Freeze {
                t: rat(get(f, "t")?)?,
                x: rat(get(f, "x")?)?,
                segments: ulist(get(f, "segments")?)?,
            });
        }
    }
    let h = get(&v, "halt")?;
    let halt = Halt {
        reason: get(h, "reason")?
            .as_str()
            .and_then(HaltReason::from_name)
            .ok_or_else(|| terr("bad halt reason"))?,
        collisions: get(h, "collisions")?
            .as_u64()
            .ok_or_else(|| terr("bad collision count"))? as usize,
        final_time: rat(get(h, "final_time")?)?,
    };
    let n = segments.len();
    let bad_ref = collisions
        .iter()
        .flat_map(|c: &Collision| c.inputs.iter().chain(&c.outputs))
        .any(|&s| s >= n);
    if bad_ref {
        return Err(terr("collision refers to a missing segment"));
    }
    Ok(Trace {
        signals,
        segments,
        collisions,
        frozen,
        halt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exactnum::{q, qi};

    pub const ZIGZAG: &str = "\
# the zig-zag machine
[speeds]
zag = -1
zzRI = -1/2
zzLE = 1/2
zig = 1

[rules]
{ zig, zzRI } -> { zag, zzRI }
{ zzLE, zag } -> { zzLE, zig }
";

    #[test]
    fn zigzag_parses() {
        let m = parse_machine(ZIGZAG).unwrap();
        assert_eq!(m.signals.len(), 4);
        assert_eq!(m.rules.len(), 2);
        assert_eq!(m.signal("zzRI").unwrap().speed, q(-1, 2));
    }

    #[test]
    fn empty_rules_are_legal() {
        let m = parse_machine("[speeds]\na = 1\nb = -1\n[rules]\n").unwrap();
        assert!(m.rules.is_empty());
    }

    #[test]
    fn singleton_input_is_rejected() {
        let e = parse_machine("[speeds]\na = 1\nb = 0\n[rules]\n{ a } -> { b }\n").unwrap_err();
        match e {
            ParseError::Syntax { line, message, .. } => {
                assert_eq!(line, 5);
                assert!(message.contains(">= 2"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn configuration_lines() {
        let m = parse_machine(ZIGZAG).unwrap();
        let c = parse_configuration("at -1 zzLE\nat -3/4 zig\nat 0 zzRI\n", &m).unwrap();
        assert_eq!(c.signals.len(), 3);
        assert_eq!(c.signals[1].x, q(-3, 4));
        let e = parse_configuration("at 0 zig\nat 0 zig\n", &m).unwrap_err();
        assert!(matches!(e, ParseError::Syntax { line: 2, .. }));
        assert!(parse_configuration("at 0 nope\n", &m).is_err());
    }

    #[test]
    fn payload_configuration() {
        let m = parse_machine("[speeds]\ndelay(u,v) = 0\nb = 1\n[rules]\n").unwrap();
        let c = parse_configuration("at 0 delay(5/2,7/2)", &m).unwrap();
        assert_eq!(c.signals[0].payload, Some((q(5, 2), q(7, 2))));
        assert!(parse_configuration("at 0 delay", &m).is_err());
        assert!(parse_configuration("at 0 b(1,2)", &m).is_err());
    }

    #[test]
    fn round_trip_is_idempotent() {
        let m = parse_machine(ZIGZAG).unwrap();
        let s1 = serialize_machine(&m);
        let m2 = parse_machine(&s1).unwrap();
        assert_eq!(m, m2);
        assert_eq!(s1, serialize_machine(&m2));
        assert!(s1.contains("zzRI = -1/2"));
    }

    #[test]
    fn meta_section_and_colours() {
        let text = format!(
            "{ZIGZAG}\n[meta]\nmode = transparent\ncolor zig = #FF0000   # red\nstyle zag = dashed\n"
        );
        let m = parse_machine(&text).unwrap();
        assert_eq!(m.mode, Mode::Transparent);
        assert_eq!(m.colors["zig"], "#ff0000");
        assert_eq!(m.styles["zag"], Stroke::Dashed);
        assert_eq!(parse_machine(&serialize_machine(&m)).unwrap(), m);
    }

    #[test]
    fn pattern_rules() {
        let text = "\
[speeds]
delay(u,v) = 0
aBounceL = -3
aBounceRslow = 3/2
[rules]
{ delay(u,v), aBounceL } -[2<=u & 2<=v]-> { delay(u-1, v-1), aBounceRslow }
{ delay(u,v), aBounceL } -[u<2 | v<2]-> { }
";
        let m = parse_machine(text).unwrap();
        assert_eq!(m.patterns.len(), 2);
        let p = &m.patterns[0];
        assert_eq!(p.outputs[0].payload.as_ref().unwrap().0.to_string(), "u-1");
        assert_eq!(p.guard.as_ref().unwrap().to_string(), "2<=u & 2<=v");
        assert_eq!(parse_machine(&serialize_machine(&m)).unwrap(), m);
        let bad = text.replace("delay(u-1, v-1)", "delay(w-1, v-1)");
        assert!(matches!(parse_machine(&bad), Err(ParseError::Invalid(_))));
    }

    #[test]
    fn affine_parsing() {
        let a = parse_affine("2*u - 1").unwrap();
        assert_eq!(a.terms, vec![("u".to_string(), qi(2))]);
        assert_eq!(a.constant, qi(-1));
        let b = parse_affine("-u+v+1/2").unwrap();
        assert_eq!(b.to_string(), "-u+v+1/2");
        assert!(parse_affine("").is_err());
        assert!(parse_affine("2*").is_err());
    }

    #[test]
    fn bundle() {
        let text = format!("{ZIGZAG}\n[config]\nat 0 zzLE\nat 1/4 zig\nat 1 zzRI\n");
        let (m, c) = parse_bundle(&text).unwrap();
        assert_eq!(c.signals.len(), 3);
        let again = serialize_bundle(&m, &c);
        let (m2, c2) = parse_bundle(&again).unwrap();
        assert_eq!((m, c), (m2, c2));
    }
}
