//! Static description of a signal machine and its validation.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use crate::asm::RulePattern;
use crate::exactnum::{fmt_rational, Rational};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    Singleton,
    Pair,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetaSignal {
    pub name: String,
    pub speed: Rational,
    pub domain: Domain,
}

impl MetaSignal {
    pub fn new(name: &str, speed: Rational) -> Self {
        MetaSignal {
            name: name.to_string(),
            speed,
            domain: Domain::Singleton,
        }
    }

    pub fn with_pair(name: &str, speed: Rational) -> Self {
        MetaSignal {
            name: name.to_string(),
            speed,
            domain: Domain::Pair,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CollisionRule {
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

impl CollisionRule {
    pub fn new(inputs: &[&str], outputs: &[&str]) -> Self {
        CollisionRule {
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Mode {
    #[default]
    Strict,
    Transparent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stroke {
    Solid,
    Dashed,
    Dotted,
}

impl Stroke {
    pub fn name(self) -> &'static str {
        match self {
            Stroke::Solid => "solid",
            Stroke::Dashed => "dashed",
            Stroke::Dotted => "dotted",
        }
    }
}

/// A machine: meta-signals, plain rules, payload rule patterns and a mode.
///
/// Name and rule indexes are rebuilt by [`Machine::new`]; mutate through it.
#[derive(Debug, Clone)]
pub struct Machine {
    pub signals: Vec<MetaSignal>,
    pub rules: Vec<CollisionRule>,
    pub patterns: Vec<RulePattern>,
    pub mode: Mode,
    pub colors: BTreeMap<String, String>,
    pub styles: BTreeMap<String, Stroke>,
    index: HashMap<String, usize>,
    rule_index: HashMap<Vec<usize>, usize>,
    pattern_index: HashMap<Vec<usize>, Vec<usize>>,
}

impl PartialEq for Machine {
    fn eq(&self, other: &Self) -> bool {
        self.signals == other.signals
            && self.rules == other.rules
            && self.patterns == other.patterns
            && self.mode == other.mode
            && self.colors == other.colors
            && self.styles == other.styles
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RuleRef {
    Rule(usize),
    Pattern(usize),
}

impl fmt::Display for RuleRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RuleRef::Rule(i) => write!(f, "rule #{}", i + 1),
            RuleRef::Pattern(i) => write!(f, "pattern #{}", i + 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Inputs,
    Outputs,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    DuplicateSignal(String),
    DuplicateInputSet {
        first: RuleRef,
        second: RuleRef,
        inputs: Vec<String>,
    },
    EqualSpeeds {
        rule: RuleRef,
        side: Side,
        a: String,
        b: String,
    },
    SingletonInput(RuleRef),
    DanglingName {
        rule: RuleRef,
        name: String,
    },
    PayloadMismatch {
        rule: RuleRef,
        name: String,
    },
    UnboundVariable {
        rule: RuleRef,
        var: String,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateSignal(n) => write!(f, "meta-signal `{n}` declared twice"),
            Violation::DuplicateInputSet {
                first,
                second,
                inputs,
            } => write!(
                f,
                "{second} repeats the input set {{{}}} of {first} (non-deterministic)",
                inputs.join(", ")
            ),
            Violation::EqualSpeeds { rule, side, a, b } => {
                let side = match side {
                    Side::Inputs => "inputs",
                    Side::Outputs => "outputs",
                };
                write!(f, "{rule}: {side} `{a}` and `{b}` have equal speeds")
            }
            Violation::SingletonInput(r) => write!(f, "{r}: input set needs >= 2 signals"),
            Violation::DanglingName { rule, name } => {
                write!(f, "{rule}: unknown meta-signal `{name}`")
            }
            Violation::PayloadMismatch { rule, name } => {
                write!(f, "{rule}: payload use of `{name}` does not match its domain")
            }
            Violation::UnboundVariable { rule, var } => {
                write!(f, "{rule}: variable `{var}` is not bound by the inputs")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Outcome of a rule lookup.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lookup<'a> {
    Rule(usize, &'a CollisionRule),
    Transparent,
    Missing,
}

impl Machine {
    pub fn new(
        signals: Vec<MetaSignal>,
        rules: Vec<CollisionRule>,
        patterns: Vec<RulePattern>,
        mode: Mode,
    ) -> Self {
        let mut m = Machine {
            signals,
            rules,
            patterns,
            mode,
            colors: BTreeMap::new(),
            styles: BTreeMap::new(),
            index: HashMap::new(),
            rule_index: HashMap::new(),
            pattern_index: HashMap::new(),
        };
        m.reindex();
        m
    }

    pub fn plain(signals: Vec<MetaSignal>, rules: Vec<CollisionRule>, mode: Mode) -> Self {
        Machine::new(signals, rules, Vec::new(), mode)
    }

    fn reindex(&mut self) {
        self.index.clear();
        for (i, s) in self.signals.iter().enumerate() {
            self.index.entry(s.name.clone()).or_insert(i);
        }
        self.rule_index.clear();
        for i in 0..self.rules.len() {
            if let Some(key) = self.key_of(self.rules[i].inputs.iter().map(String::as_str)) {
                self.rule_index.entry(key).or_insert(i);
            }
        }
        self.pattern_index.clear();
        for i in 0..self.patterns.len() {
            let names: Vec<&str> = self.patterns[i]
                .inputs
                .iter()
                .map(|p| p.name.as_str())
                .collect();
            if let Some(key) = self.key_of(names.into_iter()) {
                self.pattern_index.entry(key).or_default().push(i);
            }
        }
    }

    fn key_of<'a>(&self, names: impl Iterator<Item = &'a str>) -> Option<Vec<usize>> {
        let mut key = names
            .map(|n| self.index.get(n).copied())
            .collect::<Option<Vec<usize>>>()?;
        key.sort_unstable();
        Some(key)
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn signal(&self, name: &str) -> Option<&MetaSignal> {
        self.id(name).map(|i| &self.signals[i])
    }

    pub fn speed(&self, id: usize) -> &Rational {
        &self.signals[id].speed
    }

    /// Rule for a sorted id key.
    pub fn rule_for_key(&self, key: &[usize]) -> Option<usize> {
        self.rule_index.get(key).copied()
    }

    pub fn patterns_for_key(&self, key: &[usize]) -> &[usize] {
        self.pattern_index.get(key).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn rule_count(&self) -> usize {
        self.rules.len() + self.patterns.len()
    }
}

/// Checks every well-formedness condition and lists all violations.
pub fn validate_machine(m: &Machine) -> ValidationReport {
    let mut out = Vec::new();
    let mut seen: HashMap<&str, ()> = HashMap::new();
    for s in &m.signals {
        if seen.insert(s.name.as_str(), ()).is_some() {
            out.push(Violation::DuplicateSignal(s.name.clone()));
        }
    }

    let mut keys: BTreeMap<Vec<usize>, RuleRef> = BTreeMap::new();
    let check_side = |out: &mut Vec<Violation>, r: RuleRef, side: Side, names: &[&str]| {
        let mut known = Vec::new();
        for n in names {
            match m.signal(n) {
                Some(s) => known.push(s),
                None => out.push(Violation::DanglingName {
                    rule: r,
                    name: n.to_string(),
                }),
            }
        }
        for i in 0..known.len() {
            for j in i + 1..known.len() {
                if known[i].speed == known[j].speed {
                    out.push(Violation::EqualSpeeds {
                        rule: r,
                        side,
                        a: known[i].name.clone(),
                        b: known[j].name.clone(),
                    });
                }
            }
        }
    };

    for (i, rule) in m.rules.iter().enumerate() {
        let r = RuleRef::Rule(i);
        let ins: Vec<&str> = rule.inputs.iter().map(String::as_str).collect();
        let outs: Vec<&str> = rule.outputs.iter().map(String::as_str).collect();
        if ins.len() < 2 {
            out.push(Violation::SingletonInput(r));
        }
        check_side(&mut out, r, Side::Inputs, &ins);
        check_side(&mut out, r, Side::Outputs, &outs);
        for n in &outs {
            if let Some(s) = m.signal(n) {
                if s.domain == Domain::Pair {
                    out.push(Violation::PayloadMismatch {
                        rule: r,
                        name: n.to_string(),
                    });
                }
            }
        }
        if let Some(key) = m.key_of(ins.iter().copied()) {
            if let Some(first) = keys.get(&key) {
                out.push(Violation::DuplicateInputSet {
                    first: *first,
                    second: r,
                    inputs: sorted_names(&ins),
                });
            } else {
                keys.insert(key, r);
            }
        }
    }

    let mut pattern_keys: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
    for (i, p) in m.patterns.iter().enumerate() {
        let r = RuleRef::Pattern(i);
        let ins: Vec<&str> = p.inputs.iter().map(|x| x.name.as_str()).collect();
        let outs: Vec<&str> = p.outputs.iter().map(|x| x.name.as_str()).collect();
        if ins.len() < 2 {
            out.push(Violation::SingletonInput(r));
        }
        check_side(&mut out, r, Side::Inputs, &ins);
        check_side(&mut out, r, Side::Outputs, &outs);
        for pi in &p.inputs {
            if let Some(s) = m.signal(&pi.name) {
                if (s.domain == Domain::Pair) != pi.vars.is_some() {
                    out.push(Violation::PayloadMismatch {
                        rule: r,
                        name: pi.name.clone(),
                    });
                }
            }
        }
        for po in &p.outputs {
            if let Some(s) = m.signal(&po.name) {
                if (s.domain == Domain::Pair) != po.payload.is_some() {
                    out.push(Violation::PayloadMismatch {
                        rule: r,
                        name: po.name.clone(),
                    });
                }
            }
        }
        let bound = p.bound_vars();
        for var in p.used_vars() {
            if !bound.contains(&var) {
                out.push(Violation::UnboundVariable { rule: r, var });
            }
        }
        if let Some(key) = m.key_of(ins.iter().copied()) {
            if let Some(first) = keys.get(&key) {
                out.push(Violation::DuplicateInputSet {
                    first: *first,
                    second: r,
                    inputs: sorted_names(&ins),
                });
            }
            let same = pattern_keys.entry(key).or_default();
            // Several guarded patterns may share inputs; an unguarded one may not.
            if let Some(&j) = same.first() {
                if p.guard.is_none() || m.patterns[j].guard.is_none() {
                    out.push(Violation::DuplicateInputSet {
                        first: RuleRef::Pattern(j),
                        second: r,
                        inputs: sorted_names(&ins),
                    });
                }
            }
            same.push(i);
        }
    }
    ValidationReport { violations: out }
}

fn sorted_names(names: &[&str]) -> Vec<String> {
    let mut v: Vec<String> = names.iter().map(|s| s.to_string()).collect();
    v.sort();
    v
}

/// Looks a rule up by its input set; order of `inputs` is irrelevant.
pub fn lookup_rule<'a>(m: &'a Machine, inputs: &[&str]) -> Lookup<'a> {
    match m.key_of(inputs.iter().copied()) {
        Some(key) => lookup_key(m, &key),
        None => Lookup::Missing,
    }
}

pub fn lookup_key<'a>(m: &'a Machine, key: &[usize]) -> Lookup<'a> {
    match m.rule_for_key(key) {
        Some(i) => Lookup::Rule(i, &m.rules[i]),
        None => match m.mode {
            Mode::Transparent => Lookup::Transparent,
            Mode::Strict => Lookup::Missing,
        },
    }
}

/// Short human summary: `4 signals, 2 rules`.
pub fn summary(m: &Machine) -> String {
    format!(
        "{} signals, {} rules, {} patterns, mode {}",
        m.signals.len(),
        m.rules.len(),
        m.patterns.len(),
        match m.mode {
            Mode::Strict => "strict",
            Mode::Transparent => "transparent",
        }
    )
}

/// Speed table as `name = p/q` lines, in declaration order.
pub fn speed_table(m: &Machine) -> Vec<String> {
    m.signals
        .iter()
        .map(|s| format!("{} = {}", s.name, fmt_rational(&s.speed)))
        .collect()
}
