//! The augmented construction: Delay/Split recursion, its update formulas,
//! the augmented machine and its initial configuration.

use std::collections::HashMap;
use std::fmt;

use num_traits::Signed;

use crate::analysis::TreeNode;
use crate::asm::{Affine, CmpOp, Comparison, Guard, PatternInput, PatternOutput, RulePattern};
use crate::engine::Trace;
use crate::exactnum::{fmt_rational, pow2_neg, q, qi, Rational};
use crate::machine::{CollisionRule, Domain, Machine, MetaSignal, Mode, Stroke};
use crate::parser::{InitialConfiguration, Placed};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Params {
    pub u: Rational,
    pub v: Rational,
}

impl Params {
    pub fn new(u: Rational, v: Rational) -> Self {
        Params { u, v }
    }

    pub fn is_valid(&self) -> bool {
        self.u >= qi(1) && self.v >= qi(1)
    }

    pub fn slope(&self) -> Rational {
        (&self.v - &self.u) / qi(2)
    }
}

impl fmt::Display for Params {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", fmt_rational(&self.u), fmt_rational(&self.v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Step {
    Delay,
    Split,
}

impl Step {
    pub fn name(self) -> &'static str {
        match self {
            Step::Delay => "Delay",
            Step::Split => "Split",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SfssError {
    #[error("parameters {0} are not both at least 1")]
    InvalidParams(String),
    #[error("delay update applied to {0}, which must split")]
    NotDelay(String),
    #[error("no valid pre-image within {0} extra delays")]
    NoPreImage(usize),
    #[error("band encoding out of range: {0}")]
    Scale(String),
    #[error("malformed trace: {0}")]
    Trace(String),
}

/// Accumulation goal from `(-1, u0)` to `(1, v0)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetSegment {
    pub u0: Rational,
    pub v0: Rational,
}

impl TargetSegment {
    pub fn new(u0: Rational, v0: Rational) -> Result<Self, SfssError> {
        let s = TargetSegment { u0, v0 };
        if !s.params().is_valid() {
            return Err(SfssError::InvalidParams(s.params().to_string()));
        }
        Ok(s)
    }

    pub fn params(&self) -> Params {
        Params::new(self.u0.clone(), self.v0.clone())
    }

    pub fn slope(&self) -> Rational {
        (&self.v0 - &self.u0) / qi(2)
    }

    /// `t(x) = (u0 + v0)/2 + s x`.
    pub fn line(&self, x: &Rational) -> Rational {
        (&self.u0 + &self.v0) / qi(2) + self.slope() * x
    }
}

pub fn choose_step(p: &Params) -> Step {
    let two = qi(2);
    if p.u >= two && p.v >= two {
        Step::Delay
    } else {
        Step::Split
    }
}

pub fn delay_update(p: &Params) -> Result<Params, SfssError> {
    if choose_step(p) != Step::Delay {
        return Err(SfssError::NotDelay(p.to_string()));
    }
    Ok(Params::new(&p.u - qi(1), &p.v - qi(1)))
}

pub fn split_update(p: &Params) -> (Params, Params) {
    let one = qi(1);
    let mid = &p.u + &p.v - &one;
    (
        Params::new(&p.u * qi(2) - &one, mid.clone()),
        Params::new(mid, &p.v * qi(2) - one),
    )
}

/// Children of a node `(x, t, d, p)` in the recursion.
pub fn children(node: &TreeNode) -> Vec<TreeNode> {
    let h = pow2_neg(node.d);
    match node.kind {
        Step::Delay => {
            let p = delay_update(&node.params).expect("delay node");
            vec![TreeNode::new(
                node.x.clone(),
                &node.t + &h,
                node.d,
                p,
            )]
        }
        Step::Split => {
            let half = pow2_neg(node.d + 1);
            let (l, r) = split_update(&node.params);
            vec![
                TreeNode::new(&node.x - &half, &node.t + &half, node.d + 1, l),
                TreeNode::new(&node.x + &half, &node.t + &half, node.d + 1, r),
            ]
        }
    }
}

/// All recursion nodes of split-depth at most `max_depth`, root at (0, 0).
pub fn reference_tree(seg: &TargetSegment, max_depth: u32) -> Vec<TreeNode> {
    let root = TreeNode::new(qi(0), qi(0), 0, seg.params());
    let mut out = Vec::new();
    let mut stack = vec![root];
    while let Some(n) = stack.pop() {
        for c in children(&n) {
            if c.d <= max_depth {
                stack.push(c);
            }
        }
        out.push(n);
    }
    crate::analysis::sort_nodes(&mut out);
    out
}

pub const BORDER: &str = "border";
pub const A_BOUNCE_RSLOW: &str = "aBounceRslow";
pub const A_BOUNCE_L: &str = "aBounceL";
pub const A_BOUNCE_R: &str = "aBounceR";
pub const DELAY: &str = "delay";
pub const SPLIT_R: &str = "splitR";
pub const SPLIT_L: &str = "splitL";

fn uv_input(name: &str) -> PatternInput {
    PatternInput {
        name: name.to_string(),
        vars: Some(("u".into(), "v".into())),
    }
}

fn plain_input(name: &str) -> PatternInput {
    PatternInput {
        name: name.to_string(),
        vars: None,
    }
}

fn out(name: &str, payload: Option<(Affine, Affine)>) -> PatternOutput {
    PatternOutput {
        name: name.to_string(),
        payload,
    }
}

fn delay_guard() -> Guard {
    let le = |var: &str| Comparison {
        lhs: Affine::constant(qi(2)),
        op: CmpOp::Le,
        rhs: Affine::var(var),
    };
    Guard::all(vec![le("u"), le("v")])
}

fn split_guard() -> Guard {
    let lt = |var: &str| {
        vec![Comparison {
            lhs: Affine::var(var),
            op: CmpOp::Lt,
            rhs: Affine::constant(qi(2)),
        }]
    };
    Guard {
        clauses: vec![lt("u"), lt("v")],
    }
}

/// The augmented machine: four plain meta-signals, three payload-carrying
/// tree signals, five bounce rules and six guarded node patterns.
pub fn build_asm_machine() -> Machine {
    let signals = vec![
        MetaSignal::new(BORDER, qi(0)),
        MetaSignal::new(A_BOUNCE_RSLOW, q(3, 2)),
        MetaSignal::new(A_BOUNCE_L, qi(-3)),
        MetaSignal::new(A_BOUNCE_R, qi(3)),
        MetaSignal::with_pair(DELAY, qi(0)),
        MetaSignal::with_pair(SPLIT_R, qi(1)),
        MetaSignal::with_pair(SPLIT_L, qi(-1)),
    ];
    let rules = vec![
        CollisionRule::new(&[A_BOUNCE_RSLOW, BORDER], &[A_BOUNCE_L, BORDER]),
        CollisionRule::new(&[A_BOUNCE_R, BORDER], &[A_BOUNCE_L, BORDER]),
        CollisionRule::new(&[BORDER, A_BOUNCE_L], &[BORDER, A_BOUNCE_R]),
        CollisionRule::new(
            &[A_BOUNCE_RSLOW, BORDER, A_BOUNCE_L],
            &[A_BOUNCE_L, BORDER, A_BOUNCE_R],
        ),
        CollisionRule::new(
            &[A_BOUNCE_R, BORDER, A_BOUNCE_L],
            &[A_BOUNCE_L, BORDER, A_BOUNCE_R],
        ),
    ];
    let u = || Affine::var("u");
    let v = || Affine::var("v");
    let one = || Affine::constant(qi(1));
    let delay_out = || {
        vec![
            out(DELAY, Some((u().add(&one(), -1), v().add(&one(), -1)))),
            out(A_BOUNCE_RSLOW, None),
        ]
    };
    let split_out = || {
        let two_u = u().scale(&qi(2)).add(&one(), -1);
        let mid = u().add(&v(), 1).add(&one(), -1);
        let two_v = v().scale(&qi(2)).add(&one(), -1);
        vec![
            out(A_BOUNCE_L, None),
            out(SPLIT_L, Some((two_u, mid.clone()))),
            out(BORDER, None),
            out(SPLIT_R, Some((mid, two_v))),
            out(A_BOUNCE_R, None),
        ]
    };
    let inputs = [
        vec![uv_input(DELAY), plain_input(A_BOUNCE_L)],
        vec![plain_input(A_BOUNCE_R), uv_input(SPLIT_L)],
        vec![uv_input(SPLIT_R), plain_input(A_BOUNCE_L)],
    ];
    let mut patterns = Vec::new();
    for ins in &inputs {
        patterns.push(RulePattern {
            inputs: ins.clone(),
            guard: Some(delay_guard()),
            outputs: delay_out(),
        });
    }
    for ins in &inputs {
        patterns.push(RulePattern {
            inputs: ins.clone(),
            guard: Some(split_guard()),
            outputs: split_out(),
        });
    }
    let mut m = Machine::new(signals, rules, patterns, Mode::Strict);
    for (n, c) in [
        (BORDER, "#000000"),
        (A_BOUNCE_RSLOW, "#2e8b57"),
        (A_BOUNCE_L, "#2e8b57"),
        (A_BOUNCE_R, "#2e8b57"),
        (DELAY, "#1f4fd8"),
        (SPLIT_R, "#1f4fd8"),
        (SPLIT_L, "#1f4fd8"),
    ] {
        m.colors.insert(n.to_string(), c.to_string());
    }
    m.styles.insert(A_BOUNCE_RSLOW.to_string(), Stroke::Dashed);
    m
}

/// Signals emitted by a node with the given parameters, all at `x`.
pub fn node_outputs(x: &Rational, p: &Params) -> Vec<Placed> {
    match choose_step(p) {
        Step::Delay => {
            let c = delay_update(p).expect("delay step");
            vec![
                Placed::with(x.clone(), DELAY, (c.u, c.v)),
                Placed::new(x.clone(), A_BOUNCE_RSLOW),
            ]
        }
        Step::Split => {
            let (l, r) = split_update(p);
            vec![
                Placed::new(x.clone(), A_BOUNCE_L),
                Placed::with(x.clone(), SPLIT_L, (l.u, l.v)),
                Placed::new(x.clone(), BORDER),
                Placed::with(x.clone(), SPLIT_R, (r.u, r.v)),
                Placed::new(x.clone(), A_BOUNCE_R),
            ]
        }
    }
}

/// Borders at -1 and +1 and the root node's outputs fired at the origin.
pub fn initial_asm_config(seg: &TargetSegment) -> Result<InitialConfiguration, SfssError> {
    piecewise_asm_config(std::slice::from_ref(seg))
}

/// Adjacent generals: segment `i` spans `[2i - 1, 2i + 1]`, neighbours share
/// a border. Each root fires at its cell centre.
pub fn piecewise_asm_config(segs: &[TargetSegment]) -> Result<InitialConfiguration, SfssError> {
    let mut signals = vec![Placed::new(qi(-1), BORDER)];
    for (i, seg) in segs.iter().enumerate() {
        if !seg.params().is_valid() {
            return Err(SfssError::InvalidParams(seg.params().to_string()));
        }
        let centre = qi(2 * i as i64);
        signals.extend(node_outputs(&centre, &seg.params()));
        signals.push(Placed::new(&centre + qi(1), BORDER));
    }
    Ok(InitialConfiguration { signals })
}

fn is_tree_signal(name: &str) -> bool {
    name == DELAY || name == SPLIT_L || name == SPLIT_R
}

/// Node events of an augmented run, root included, in discovery order.
///
/// A node is a collision consuming a tree signal; its parent is the collision
/// that emitted that signal, or the root when the signal is initial.
pub fn extract_asm_nodes(trace: &Trace, seg: &TargetSegment) -> Result<Vec<TreeNode>, SfssError> {
    Ok(extract_asm_forest(trace, std::slice::from_ref(seg))?.remove(0))
}

/// Per-general node lists for [`piecewise_asm_config`] runs; x is reported in
/// each general's local frame (centre at 0).
pub fn extract_asm_forest(
    trace: &Trace,
    segs: &[TargetSegment],
) -> Result<Vec<Vec<TreeNode>>, SfssError> {
    let mut forest: Vec<Vec<TreeNode>> = segs
        .iter()
        .map(|s| vec![TreeNode::new(qi(0), qi(0), 0, s.params())])
        .collect();
    // collision index -> (tree, node index)
    let mut at: HashMap<usize, (usize, usize)> = HashMap::new();
    for (ci, c) in trace.collisions.iter().enumerate() {
        let tree_in: Vec<usize> = c
            .inputs
            .iter()
            .copied()
            .filter(|&s| is_tree_signal(trace.name(s)))
            .collect();
        if tree_in.is_empty() {
            continue;
        }
        if tree_in.len() > 1 {
            return Err(SfssError::Trace(format!(
                "collision {ci} consumes several tree signals"
            )));
        }
        let seg = &trace.segments[tree_in[0]];
        let params = seg
            .payload
            .clone()
            .map(|(u, v)| Params::new(u, v))
            .ok_or_else(|| SfssError::Trace(format!("tree signal without payload at {ci}")))?;
        let (tree, parent) = match seg.start {
            Some(p) => *at
                .get(&p)
                .ok_or_else(|| SfssError::Trace(format!("collision {ci} has no parent node")))?,
            None => {
                let k = (&seg.x0 / qi(2)).to_integer();
                let k: usize = k
                    .try_into()
                    .map_err(|_| SfssError::Trace("root outside the generals".into()))?;
                if k >= forest.len() || seg.x0 != qi(2 * k as i64) {
                    return Err(SfssError::Trace("initial tree signal off-centre".into()));
                }
                (k, 0)
            }
        };
        let pnode = &forest[tree][parent];
        let d = pnode.d + u32::from(pnode.kind == Step::Split);
        let centre = qi(2 * tree as i64);
        let node = TreeNode::new(&c.x - centre, c.t.clone(), d, params);
        let produced_delay = c.outputs.iter().any(|&s| trace.name(s) == DELAY);
        if produced_delay != (node.kind == Step::Delay) {
            return Err(SfssError::Trace(format!(
                "collision {ci} fired the wrong step for {}",
                node.params
            )));
        }
        at.insert(ci, (tree, forest[tree].len()));
        forest[tree].push(node);
    }
    Ok(forest)
}

/// Whether a meta-signal of the augmented machine carries a payload.
pub fn is_payload_signal(m: &Machine, name: &str) -> bool {
    m.signal(name).is_some_and(|s| s.domain == Domain::Pair)
}

/// Largest parameter value met on the way down, or `None` past `budget`.
pub fn params_bound(p0: &Params, budget: usize) -> Option<Rational> {
    let set = crate::analysis::reachable_params(p0, budget).ok()?;
    set.params
        .iter()
        .map(|p| p.u.clone().max(p.v.clone()))
        .max()
}

/// `|s|` helper used by the envelopes.
pub fn abs_slope(seg: &TargetSegment) -> Rational {
    seg.slope().abs()
}

/// `2^-d` scale of a node.
pub fn scale(d: u32) -> Rational {
    pow2_neg(d)
}
