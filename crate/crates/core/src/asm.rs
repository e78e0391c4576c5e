//! Augmented signals: pair-of-rationals payloads and guarded rule patterns.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use num_traits::{One, Signed, Zero};

use crate::engine::{self, EngineError, HaltPolicy, Resolution, Resolved, Resolver, Trace};
use crate::exactnum::{fmt_rational, Rational};
use crate::machine::{lookup_key, Lookup, Machine};
use crate::parser::InitialConfiguration;

pub type Payload = (Rational, Rational);

/// `constant + sum(coeff * var)`, terms kept sorted by variable name.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Affine {
    pub constant: Rational,
    pub terms: Vec<(String, Rational)>,
}

impl Affine {
    pub fn constant(c: Rational) -> Self {
        Affine {
            constant: c,
            terms: Vec::new(),
        }
    }

    pub fn var(name: &str) -> Self {
        Affine {
            constant: Rational::zero(),
            terms: vec![(name.to_string(), Rational::one())],
        }
    }

    /// Merges duplicate variables, drops zero coefficients, sorts.
    pub fn normalized(mut self) -> Self {
        self.terms.sort_by(|a, b| a.0.cmp(&b.0));
        let mut merged: Vec<(String, Rational)> = Vec::new();
        for (v, c) in self.terms {
            match merged.last_mut() {
                Some((lv, lc)) if *lv == v => *lc += c,
                _ => merged.push((v, c)),
            }
        }
        merged.retain(|(_, c)| !c.is_zero());
        Affine {
            constant: self.constant,
            terms: merged,
        }
    }

    pub fn add(&self, other: &Affine, sign: i64) -> Affine {
        let s = Rational::from_integer(sign.into());
        let mut terms = self.terms.clone();
        for (v, c) in &other.terms {
            terms.push((v.clone(), c * &s));
        }
        Affine {
            constant: &self.constant + &other.constant * &s,
            terms,
        }
        .normalized()
    }

    pub fn scale(&self, k: &Rational) -> Affine {
        Affine {
            constant: &self.constant * k,
            terms: self.terms.iter().map(|(v, c)| (v.clone(), c * k)).collect(),
        }
        .normalized()
    }

    pub fn eval(&self, env: &HashMap<&str, &Rational>) -> Option<Rational> {
        let mut acc = self.constant.clone();
        for (v, c) in &self.terms {
            acc += c * *env.get(v.as_str())?;
        }
        Some(acc)
    }

    pub fn vars(&self) -> impl Iterator<Item = &str> {
        self.terms.iter().map(|(v, _)| v.as_str())
    }
}

impl fmt::Display for Affine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (v, c) in &self.terms {
            let neg = c.is_negative();
            if neg {
                f.write_str("-")?;
            } else if !first {
                f.write_str("+")?;
            }
            let mag = c.abs();
            if !mag.is_one() {
                write!(f, "{}*", fmt_rational(&mag))?;
            }
            f.write_str(v)?;
            first = false;
        }
        if first {
            return f.write_str(&fmt_rational(&self.constant));
        }
        if !self.constant.is_zero() {
            if self.constant.is_negative() {
                write!(f, "-{}", fmt_rational(&self.constant.abs()))?;
            } else {
                write!(f, "+{}", fmt_rational(&self.constant))?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Lt,
    Le,
    Eq,
    Ge,
    Gt,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Eq => "=",
            CmpOp::Ge => ">=",
            CmpOp::Gt => ">",
        }
    }

    fn holds(self, a: &Rational, b: &Rational) -> bool {
        match self {
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Eq => a == b,
            CmpOp::Ge => a >= b,
            CmpOp::Gt => a > b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Comparison {
    pub lhs: Affine,
    pub op: CmpOp,
    pub rhs: Affine,
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}{}", self.lhs, self.op.symbol(), self.rhs)
    }
}

/// Disjunction of conjunctions of linear comparisons.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Guard {
    pub clauses: Vec<Vec<Comparison>>,
}

impl Guard {
    pub fn all(cmps: Vec<Comparison>) -> Self {
        Guard {
            clauses: vec![cmps],
        }
    }

    pub fn holds(&self, env: &HashMap<&str, &Rational>) -> Option<bool> {
        for clause in &self.clauses {
            let mut ok = true;
            for c in clause {
                let l = c.lhs.eval(env)?;
                let r = c.rhs.eval(env)?;
                if !c.op.holds(&l, &r) {
                    ok = false;
                    break;
                }
            }
            if ok {
                return Some(true);
            }
        }
        Some(false)
    }

    fn vars(&self) -> impl Iterator<Item = &str> {
        self.clauses
            .iter()
            .flatten()
            .flat_map(|c| c.lhs.vars().chain(c.rhs.vars()))
    }
}

impl fmt::Display for Guard {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, clause) in self.clauses.iter().enumerate() {
            if i > 0 {
                f.write_str(" | ")?;
            }
            for (j, c) in clause.iter().enumerate() {
                if j > 0 {
                    f.write_str(" & ")?;
                }
                write!(f, "{c}")?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternInput {
    pub name: String,
    pub vars: Option<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternOutput {
    pub name: String,
    pub payload: Option<(Affine, Affine)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RulePattern {
    pub inputs: Vec<PatternInput>,
    pub guard: Option<Guard>,
    pub outputs: Vec<PatternOutput>,
}

impl RulePattern {
    pub fn bound_vars(&self) -> BTreeSet<String> {
        let mut s = BTreeSet::new();
        for i in &self.inputs {
            if let Some((a, b)) = &i.vars {
                s.insert(a.clone());
                s.insert(b.clone());
            }
        }
        s
    }

    pub fn used_vars(&self) -> BTreeSet<String> {
        let mut s: BTreeSet<String> = BTreeSet::new();
        if let Some(g) = &self.guard {
            s.extend(g.vars().map(str::to_string));
        }
        for o in &self.outputs {
            if let Some((a, b)) = &o.payload {
                s.extend(a.vars().chain(b.vars()).map(str::to_string));
            }
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AsmError {
    #[error("patterns #{0} and #{1} both match the same inputs")]
    Ambiguous(usize, usize),
    #[error("pattern #{0} refers to a payload that the inputs do not carry")]
    MissingPayload(usize),
}

/// Instantiated result of pattern dispatch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Matched {
    Pattern {
        index: usize,
        outputs: Vec<(usize, Option<Payload>)>,
    },
    Rule {
        index: usize,
        outputs: Vec<(usize, Option<Payload>)>,
    },
    Transparent,
    Missing,
}

/// Dispatches `inputs` (meta-signal id, payload) against the machine's
/// patterns, then its plain rules, then its mode.
pub fn match_pattern(m: &Machine, inputs: &[(usize, Option<&Payload>)]) -> Result<Matched, AsmError> {
    let mut key: Vec<usize> = inputs.iter().map(|(id, _)| *id).collect();
    key.sort_unstable();
    let mut found: Option<Matched> = None;
    for &pi in m.patterns_for_key(&key) {
        let p = &m.patterns[pi];
        let mut env: HashMap<&str, &Rational> = HashMap::new();
        for inp in &p.inputs {
            if let Some((a, b)) = &inp.vars {
                let id = m.id(&inp.name).expect("validated pattern");
                let payload = inputs
                    .iter()
                    .find(|(i, _)| *i == id)
                    .and_then(|(_, pl)| *pl)
                    .ok_or(AsmError::MissingPayload(pi))?;
                env.insert(a.as_str(), &payload.0);
                env.insert(b.as_str(), &payload.1);
            }
        }
        let ok = match &p.guard {
            None => true,
            Some(g) => g.holds(&env).ok_or(AsmError::MissingPayload(pi))?,
        };
        if !ok {
            continue;
        }
        if let Some(Matched::Pattern { index, .. }) = found {
            return Err(AsmError::Ambiguous(index, pi));
        }
        let mut outputs = Vec::with_capacity(p.outputs.len());
        for o in &p.outputs {
            let id = m.id(&o.name).expect("validated pattern");
            let payload = match &o.payload {
                None => None,
                Some((a, b)) => Some((
                    a.eval(&env).ok_or(AsmError::MissingPayload(pi))?,
                    b.eval(&env).ok_or(AsmError::MissingPayload(pi))?,
                )),
            };
            outputs.push((id, payload));
        }
        found = Some(Matched::Pattern { index: pi, outputs });
    }
    if let Some(f) = found {
        return Ok(f);
    }
    Ok(match lookup_key(m, &key) {
        Lookup::Rule(index, r) => Matched::Rule {
            index,
            outputs: r
                .outputs
                .iter()
                .map(|n| (m.id(n).expect("validated rule"), None))
                .collect(),
        },
        Lookup::Transparent => Matched::Transparent,
        Lookup::Missing => Matched::Missing,
    })
}

struct PatternResolver<'a>(&'a Machine);

impl Resolver for PatternResolver<'_> {
    fn resolve(&self, inputs: &[(usize, Option<&Payload>)]) -> Result<Resolved, EngineError> {
        Ok(match match_pattern(self.0, inputs)? {
            Matched::Pattern { index, outputs } => Resolved {
                resolution: Resolution::Pattern(index),
                outputs,
            },
            Matched::Rule { index, outputs } => Resolved {
                resolution: Resolution::Rule(index),
                outputs,
            },
            Matched::Transparent => Resolved::transparent(inputs),
            Matched::Missing => Resolved::missing(),
        })
    }
}

/// Runs a machine using payload patterns first, then its plain rules.
pub fn run_augmented(
    m: &Machine,
    c: &InitialConfiguration,
    p: &HaltPolicy,
) -> Result<Trace, EngineError> {
    engine::run_with(m, c, p, &PatternResolver(m))
}
