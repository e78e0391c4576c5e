//! Executable checks of the construction's guarantees on concrete node sets,
//! accumulation estimation on traces, and parameter reachability.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use num_bigint::BigInt;
use num_traits::{Signed, Zero};

use crate::engine::Trace;
use crate::exactnum::{fmt_rational, lcm_denoms, pow2_neg, qi, Rational};
use crate::sfss_asm::{choose_step, delay_update, split_update, Params, Step, TargetSegment};

/// A node of the recursion, either computed or read off a trace.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TreeNode {
    pub x: Rational,
    pub t: Rational,
    /// Number of Split ancestors.
    pub d: u32,
    pub params: Params,
    pub kind: Step,
}

impl TreeNode {
    /// Kind follows from the parameters.
    pub fn new(x: Rational, t: Rational, d: u32, params: Params) -> Self {
        let kind = choose_step(&params);
        TreeNode {
            x,
            t,
            d,
            params,
            kind,
        }
    }
}

impl fmt::Display for TreeNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} at ({}, {}) d={} params {}",
            self.kind.name(),
            fmt_rational(&self.x),
            fmt_rational(&self.t),
            self.d,
            self.params
        )
    }
}

/// Canonical node order: depth, time, position.
pub fn sort_nodes(nodes: &mut [TreeNode]) {
    nodes.sort_by(|a, b| {
        a.d.cmp(&b.d)
            .then_with(|| a.t.cmp(&b.t))
            .then_with(|| a.x.cmp(&b.x))
    });
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CheckReport {
    pub checked: usize,
    pub violations: Vec<String>,
}

impl CheckReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "checked {} nodes, {} violations",
            self.checked,
            self.violations.len()
        )?;
        for v in &self.violations {
            writeln!(f, "  {v}")?;
        }
        Ok(())
    }
}

/// Validity, slope preservation, and both scaled end points on the line.
pub fn check_lemma1(nodes: &[TreeNode], seg: &TargetSegment) -> CheckReport {
    let mut r = CheckReport::default();
    let s = seg.slope();
    for n in nodes {
        r.checked += 1;
        if !n.params.is_valid() {
            r.violations.push(format!("{n}: parameters below 1"));
        }
        if n.params.slope() != s {
            r.violations.push(format!("{n}: slope differs from {}", fmt_rational(&s)));
        }
        let h = pow2_neg(n.d);
        let left = (&n.x - &h, &n.t + &h * &n.params.u);
        let right = (&n.x + &h, &n.t + &h * &n.params.v);
        if seg.line(&left.0) != left.1 {
            r.violations.push(format!("{n}: left end point off the target line"));
        }
        if seg.line(&right.0) != right.1 {
            r.violations.push(format!("{n}: right end point off the target line"));
        }
    }
    r
}

/// Split nodes satisfy `0 <= line(x) - t <= 2^-d (2 + |s|)`.
pub fn check_lemma2(nodes: &[TreeNode], seg: &TargetSegment) -> CheckReport {
    check_lemma2_with(nodes, seg, &qi(2))
}

/// As [`check_lemma2`] with the constant 2 replaced by `c`.
pub fn check_lemma2_with(nodes: &[TreeNode], seg: &TargetSegment, c: &Rational) -> CheckReport {
    let mut r = CheckReport::default();
    let abs_s = seg.slope().abs();
    for n in nodes.iter().filter(|n| n.kind == Step::Split) {
        r.checked += 1;
        let gap = seg.line(&n.x) - &n.t;
        let bound = pow2_neg(n.d) * (c + &abs_s);
        if gap.is_negative() {
            r.violations.push(format!("{n}: above the target line"));
        } else if gap > bound {
            r.violations.push(format!(
                "{n}: {} below the line, bound {}",
                fmt_rational(&gap),
                fmt_rational(&bound)
            ));
        }
    }
    r
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvergenceProfile {
    /// Largest `|t - line(x)|` over Split nodes, per depth.
    pub max_deviation: Vec<Option<Rational>>,
    pub violations: Vec<String>,
}

impl ConvergenceProfile {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// All `sum a_i 2^-i` for `a_i` in {-1, 1}, `i` in 1..=d, sorted.
pub fn signed_dyadic_sums(d: u32) -> Vec<Rational> {
    let mut sums = vec![Rational::zero()];
    for i in 1..=d {
        let h = pow2_neg(i);
        sums = sums
            .iter()
            .flat_map(|s| [s - &h, s + &h])
            .collect();
    }
    sums.sort();
    sums
}

/// Per-depth envelope `2^-d (2 + 2|s|)` and the dyadic abscissae of Splits.
pub fn check_convergence(nodes: &[TreeNode], seg: &TargetSegment, d_max: u32) -> ConvergenceProfile {
    let abs_s = seg.slope().abs();
    let mut by_depth: BTreeMap<u32, Vec<&TreeNode>> = BTreeMap::new();
    for n in nodes.iter().filter(|n| n.kind == Step::Split && n.d <= d_max) {
        by_depth.entry(n.d).or_default().push(n);
    }
    let mut max_deviation = Vec::new();
    let mut violations = Vec::new();
    for d in 0..=d_max {
        let level = by_depth.get(&d).cloned().unwrap_or_default();
        let bound = pow2_neg(d) * (qi(2) + &abs_s * qi(2));
        let worst = level.iter().map(|n| (&n.t - seg.line(&n.x)).abs()).max();
        if let Some(w) = &worst {
            if *w > bound {
                violations.push(format!(
                    "depth {d}: deviation {} exceeds {}",
                    fmt_rational(w),
                    fmt_rational(&bound)
                ));
            }
        }
        let mut xs: Vec<Rational> = level.iter().map(|n| n.x.clone()).collect();
        xs.sort();
        if xs != signed_dyadic_sums(d) {
            violations.push(format!(
                "depth {d}: {} Split abscissae, not the {} signed dyadic sums",
                xs.len(),
                1u64 << d.min(63)
            ));
        }
        max_deviation.push(worst);
    }
    ConvergenceProfile {
        max_deviation,
        violations,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cluster {
    /// Latest collision of the cluster; the box is centred on it.
    pub seed: (Rational, Rational),
    pub x_interval: (Rational, Rational),
    pub t_interval: (Rational, Rational),
    pub count: usize,
    /// Member collisions as `(x, t)`.
    pub members: Vec<(Rational, Rational)>,
}

impl Cluster {
    pub fn contains(&self, x: &Rational, t: &Rational) -> bool {
        &self.x_interval.0 <= x
            && x <= &self.x_interval.1
            && &self.t_interval.0 <= t
            && t <= &self.t_interval.1
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccumulationEstimate {
    pub clusters: Vec<Cluster>,
    pub epsilon: Rational,
}

/// Greedy epsilon-box clustering of the last quarter of the collisions.
pub fn accumulation_estimate(trace: &Trace, epsilon: &Rational, n_min: usize) -> AccumulationEstimate {
    accumulation_estimate_tail(trace, epsilon, n_min, 1, 4)
}

/// Clusters the last `num/den` of the collisions: the latest unassigned
/// collision seeds a box of half-width epsilon, which absorbs every
/// unassigned collision inside it. Boxes with fewer than `n_min` members are
/// dropped; the rest are ordered by position.
pub fn accumulation_estimate_tail(
    trace: &Trace,
    epsilon: &Rational,
    n_min: usize,
    num: usize,
    den: usize,
) -> AccumulationEstimate {
    let n = trace.collisions.len();
    let keep = (n * num).div_ceil(den.max(1)).min(n);
    let mut pts: Vec<(Rational, Rational)> = trace.collisions[n - keep..]
        .iter()
        .map(|c| (c.x.clone(), c.t.clone()))
        .collect();
    pts.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut used = vec![false; pts.len()];
    let mut clusters = Vec::new();
    for i in 0..pts.len() {
        if used[i] {
            continue;
        }
        let (sx, st) = pts[i].clone();
        let xi = (&sx - epsilon, &sx + epsilon);
        let ti = (&st - epsilon, &st + epsilon);
        let mut members = Vec::new();
        for j in i..pts.len() {
            if used[j] {
                continue;
            }
            let (x, t) = &pts[j];
            if &xi.0 <= x && x <= &xi.1 && &ti.0 <= t && t <= &ti.1 {
                used[j] = true;
                members.push(pts[j].clone());
            }
        }
        if members.len() >= n_min {
            clusters.push(Cluster {
                seed: (sx, st),
                x_interval: xi,
                t_interval: ti,
                count: members.len(),
                members,
            });
        }
    }
    clusters.sort_by(|a, b| a.seed.0.cmp(&b.seed.0).then_with(|| a.seed.1.cmp(&b.seed.1)));
    AccumulationEstimate {
        clusters,
        epsilon: epsilon.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reachable {
    pub params: BTreeSet<Params>,
    /// Least common multiple of the denominators of the start values.
    pub m: BigInt,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("parameter closure not reached after {explored} states")]
pub struct BudgetExceeded {
    pub explored: usize,
}

/// Parameters an algorithm run can meet after `p0`: one Delay child when the
/// node delays, both Split children otherwise.
pub fn successors(p: &Params) -> Vec<Params> {
    match choose_step(p) {
        Step::Delay => vec![delay_update(p).expect("delay step")],
        Step::Split => {
            let (l, r) = split_update(p);
            vec![l, r]
        }
    }
}

pub fn reachable_params(p0: &Params, budget: usize) -> Result<Reachable, BudgetExceeded> {
    let mut seen = BTreeSet::new();
    let mut queue = VecDeque::new();
    seen.insert(p0.clone());
    queue.push_back(p0.clone());
    while let Some(p) = queue.pop_front() {
        for c in successors(&p) {
            if seen.contains(&c) {
                continue;
            }
            if seen.len() >= budget {
                return Err(BudgetExceeded {
                    explored: seen.len(),
                });
            }
            seen.insert(c.clone());
            queue.push_back(c);
        }
    }
    Ok(Reachable {
        params: seen,
        m: lcm_denoms([&p0.u, &p0.v]),
    })
}

/// Integrality `m u, m v` in N and slope preservation on every member.
pub fn check_reachable(r: &Reachable, p0: &Params) -> CheckReport {
    let mut rep = CheckReport::default();
    let m = Rational::from_integer(r.m.clone());
    let s = p0.slope();
    for p in &r.params {
        rep.checked += 1;
        for (name, val) in [("u", &p.u), ("v", &p.v)] {
            let scaled = val * &m;
            if !scaled.is_integer() || scaled.is_negative() {
                rep.violations
                    .push(format!("{p}: m*{name} = {} not a natural", fmt_rational(&scaled)));
            }
        }
        if p.slope() != s {
            rep.violations.push(format!("{p}: slope changed"));
        }
        if !p.is_valid() {
            rep.violations.push(format!("{p}: invalid"));
        }
    }
    rep
}

/// Exact node-by-node comparison through split-depth `d_max`.
pub fn compare_asm_sm(asm_nodes: &[TreeNode], sm_nodes: &[TreeNode], d_max: u32) -> CheckReport {
    let pick = |ns: &[TreeNode]| {
        let mut v: Vec<TreeNode> = ns.iter().filter(|n| n.d <= d_max).cloned().collect();
        sort_nodes(&mut v);
        v
    };
    let a = pick(asm_nodes);
    let b = pick(sm_nodes);
    let mut rep = CheckReport {
        checked: a.len(),
        violations: Vec::new(),
    };
    for d in 0..=d_max {
        let ca = a.iter().filter(|n| n.d == d).count();
        let cb = b.iter().filter(|n| n.d == d).count();
        if ca != cb {
            rep.violations
                .push(format!("depth {d}: {ca} augmented nodes, {cb} plain nodes"));
        }
    }
    if rep.violations.is_empty() {
        for (x, y) in a.iter().zip(&b) {
            if x != y {
                rep.violations.push(format!("expected {x}, found {y}"));
            }
        }
    }
    rep
}

/// Nodes of `nodes` with depth at most `d`.
pub fn up_to_depth(nodes: &[TreeNode], d: u32) -> Vec<TreeNode> {
    let mut v: Vec<TreeNode> = nodes.iter().filter(|n| n.d <= d).cloned().collect();
    sort_nodes(&mut v);
    v
}
