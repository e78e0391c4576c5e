//! Exact event-driven simulation of signal machines.
//!
//! Live signals are kept in spatial order as a doubly linked list. Since two
//! signals can only meet after everything between them has been met, only
//! adjacent approaching pairs are scheduled; the queue is invalidated lazily.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap};

use log::debug;
use num_traits::Zero;

use crate::asm::{AsmError, Payload};
use crate::exactnum::Rational;
use crate::machine::{lookup_key, Lookup, Machine};
use crate::parser::InitialConfiguration;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HaltPolicy {
    pub max_collisions: usize,
    pub max_time: Option<Rational>,
    /// Halt when the time advance between two batches is below this.
    pub min_gap_epsilon: Option<Rational>,
    /// Local accumulation guard: a collision among signals whose lineage is
    /// younger than this freezes them instead of firing a rule. A motionless
    /// pillar stays at the freezing point and freezes whatever reaches it.
    pub freeze_below: Option<Rational>,
}

impl Default for HaltPolicy {
    fn default() -> Self {
        HaltPolicy {
            max_collisions: 10_000,
            max_time: None,
            min_gap_epsilon: None,
            freeze_below: None,
        }
    }
}

impl HaltPolicy {
    pub fn collisions(n: usize) -> Self {
        HaltPolicy {
            max_collisions: n.max(1),
            ..HaltPolicy::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HaltReason {
    Quiescent,
    MaxCollisions,
    MaxTime,
    GapBelowEpsilon,
    MissingRule,
}

impl HaltReason {
    pub fn name(self) -> &'static str {
        match self {
            HaltReason::Quiescent => "Quiescent",
            HaltReason::MaxCollisions => "MaxCollisions",
            HaltReason::MaxTime => "MaxTime",
            HaltReason::GapBelowEpsilon => "GapBelowEpsilon",
            HaltReason::MissingRule => "MissingRule",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "Quiescent" => HaltReason::Quiescent,
            "MaxCollisions" => HaltReason::MaxCollisions,
            "MaxTime" => HaltReason::MaxTime,
            "GapBelowEpsilon" => HaltReason::GapBelowEpsilon,
            "MissingRule" => HaltReason::MissingRule,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Halt {
    pub reason: HaltReason,
    pub collisions: usize,
    pub final_time: Rational,
}

/// One straight piece of a signal's life.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub signal: usize,
    pub payload: Option<Payload>,
    pub x0: Rational,
    pub t0: Rational,
    /// `(x1, t1)` once the segment has ended.
    pub end: Option<(Rational, Rational)>,
    /// Collision that created it; `None` for initial signals.
    pub start: Option<usize>,
    /// Collision that ended it.
    pub stop: Option<usize>,
    pub frozen: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resolution {
    Rule(usize),
    Pattern(usize),
    Transparent,
    Missing,
}

impl Resolution {
    pub fn label(self) -> String {
        match self {
            Resolution::Rule(i) => format!("rule:{i}"),
            Resolution::Pattern(i) => format!("pattern:{i}"),
            Resolution::Transparent => "transparent".into(),
            Resolution::Missing => "missing".into(),
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        match s {
            "transparent" => Some(Resolution::Transparent),
            "missing" => Some(Resolution::Missing),
            _ => {
                let (k, i) = s.split_once(':')?;
                let i = i.parse().ok()?;
                match k {
                    "rule" => Some(Resolution::Rule(i)),
                    "pattern" => Some(Resolution::Pattern(i)),
                    _ => None,
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Collision {
    pub t: Rational,
    pub x: Rational,
    /// Ended segments, left to right just before the collision.
    pub inputs: Vec<usize>,
    /// Created segments, left to right just after the collision.
    pub outputs: Vec<usize>,
    pub resolution: Resolution,
}

/// A point where the local accumulation guard stopped some signals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Freeze {
    pub t: Rational,
    pub x: Rational,
    pub segments: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    /// `(name, speed)` of every meta-signal, indexed like the machine.
    pub signals: Vec<(String, Rational)>,
    pub segments: Vec<Segment>,
    pub collisions: Vec<Collision>,
    pub frozen: Vec<Freeze>,
    pub halt: Halt,
}

impl Trace {
    pub fn name(&self, seg: usize) -> &str {
        &self.signals[self.segments[seg].signal].0
    }

    pub fn speed(&self, seg: usize) -> &Rational {
        &self.signals[self.segments[seg].signal].1
    }

    /// Position of a segment's line at time `t` (not clipped to its extent).
    pub fn position(&self, seg: usize, t: &Rational) -> Rational {
        let s = &self.segments[seg];
        &s.x0 + self.speed(seg) * (t - &s.t0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    Asm(#[from] AsmError),
    #[error("unknown meta-signal `{0}` in configuration")]
    UnknownSignal(String),
    #[error("signals `{0}` and `{1}` have equal speed and position")]
    Overlap(String, String),
    #[error("collision at t={t} produced equal-speed outputs")]
    EqualOutputSpeeds { t: String },
}

/// Output of rule resolution for one collision.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Resolved {
    pub resolution: Resolution,
    pub outputs: Vec<(usize, Option<Payload>)>,
}

impl Resolved {
    pub fn transparent(inputs: &[(usize, Option<&Payload>)]) -> Self {
        Resolved {
            resolution: Resolution::Transparent,
            outputs: inputs.iter().map(|(i, p)| (*i, p.cloned())).collect(),
        }
    }

    pub fn missing() -> Self {
        Resolved {
            resolution: Resolution::Missing,
            outputs: Vec::new(),
        }
    }
}

pub trait Resolver {
    fn resolve(&self, inputs: &[(usize, Option<&Payload>)]) -> Result<Resolved, EngineError>;
}

/// Plain rule lookup, payloads ignored except across transparent crossings.
pub struct PlainResolver<'a>(pub &'a Machine);

impl Resolver for PlainResolver<'_> {
    fn resolve(&self, inputs: &[(usize, Option<&Payload>)]) -> Result<Resolved, EngineError> {
        let mut key: Vec<usize> = inputs.iter().map(|(i, _)| *i).collect();
        key.sort_unstable();
        Ok(match lookup_key(self.0, &key) {
            Lookup::Rule(index, r) => Resolved {
                resolution: Resolution::Rule(index),
                outputs: r
                    .outputs
                    .iter()
                    .map(|n| (self.0.id(n).expect("validated rule"), None))
                    .collect(),
            },
            Lookup::Transparent => Resolved::transparent(inputs),
            Lookup::Missing => Resolved::missing(),
        })
    }
}

/// Signals meeting at one point at one time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CollisionEvent {
    pub t: Rational,
    pub x: Rational,
    /// Live segments, left to right.
    pub inputs: Vec<usize>,
    /// Whether an accumulation pillar is part of the meeting.
    pub at_pillar: bool,
    nodes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Candidate {
    t: Rational,
    x: Rational,
    left: usize,
    right: usize,
}

impl Ord for Candidate {
    fn cmp(&self, o: &Self) -> Ordering {
        self.t
            .cmp(&o.t)
            .then_with(|| self.x.cmp(&o.x))
            .then_with(|| self.left.cmp(&o.left))
            .then_with(|| self.right.cmp(&o.right))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

/// What applying one event did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Applied {
    Fired,
    Frozen,
    Missing,
}

/// An entry of the spatial list: a live segment, or a motionless pillar left
/// where the accumulation guard froze signals.
#[derive(Debug, Clone)]
struct Node {
    seg: Option<usize>,
    speed: Rational,
    intercept: Rational,
    prev: Option<usize>,
    next: Option<usize>,
    alive: bool,
}

/// Simulation state: the trace so far plus the live-signal list.
pub struct Simulation<'a, R: Resolver> {
    machine: &'a Machine,
    resolver: &'a R,
    trace: Trace,
    now: Rational,
    heap: BinaryHeap<Reverse<Candidate>>,
    nodes: Vec<Node>,
    /// Per segment: its list node, and the birth time of its lineage
    /// (transparent crossings do not reset it).
    node_of: Vec<usize>,
    lineage: Vec<Rational>,
    freeze_below: Option<Rational>,
}

impl<'a, R: Resolver> Simulation<'a, R> {
    pub fn new(
        machine: &'a Machine,
        config: &InitialConfiguration,
        resolver: &'a R,
    ) -> Result<Self, EngineError> {
        let mut placed = Vec::with_capacity(config.signals.len());
        for p in &config.signals {
            let id = machine
                .id(&p.signal)
                .ok_or_else(|| EngineError::UnknownSignal(p.signal.clone()))?;
            placed.push((p.x.clone(), id, p.payload.clone()));
        }
        placed.sort_by(|a, b| {
            a.0.cmp(&b.0)
                .then_with(|| machine.speed(a.1).cmp(machine.speed(b.1)))
        });
        for w in placed.windows(2) {
            if w[0].0 == w[1].0 && machine.speed(w[0].1) == machine.speed(w[1].1) {
                return Err(EngineError::Overlap(
                    machine.signals[w[0].1].name.clone(),
                    machine.signals[w[1].1].name.clone(),
                ));
            }
        }
        let mut sim = Simulation {
            machine,
            resolver,
            trace: Trace {
                signals: machine
                    .signals
                    .iter()
                    .map(|s| (s.name.clone(), s.speed.clone()))
                    .collect(),
                segments: Vec::new(),
                collisions: Vec::new(),
                frozen: Vec::new(),
                halt: Halt {
                    reason: HaltReason::Quiescent,
                    collisions: 0,
                    final_time: Rational::zero(),
                },
            },
            now: Rational::zero(),
            heap: BinaryHeap::new(),
            nodes: Vec::new(),
            node_of: Vec::new(),
            lineage: Vec::new(),
            freeze_below: None,
        };
        let mut born = Vec::new();
        for (x, id, payload) in placed {
            let s = sim.spawn(id, payload, x, Rational::zero(), None, Rational::zero());
            born.push(sim.node_of[s]);
        }
        sim.link(None, &born, None);
        for w in born.windows(2) {
            sim.schedule(w[0], w[1]);
        }
        Ok(sim)
    }

    fn add_node(&mut self, seg: Option<usize>, speed: Rational, x: &Rational, t: &Rational) -> usize {
        let intercept = x - &speed * t;
        self.nodes.push(Node {
            seg,
            speed,
            intercept,
            prev: None,
            next: None,
            alive: true,
        });
        self.nodes.len() - 1
    }

    fn spawn(
        &mut self,
        signal: usize,
        payload: Option<Payload>,
        x: Rational,
        t: Rational,
        start: Option<usize>,
        lineage: Rational,
    ) -> usize {
        let id = self.trace.segments.len();
        let speed = self.machine.speed(signal).clone();
        let node = self.add_node(Some(id), speed, &x, &t);
        self.trace.segments.push(Segment {
            signal,
            payload,
            x0: x,
            t0: t,
            end: None,
            start,
            stop: None,
            frozen: false,
        });
        self.node_of.push(node);
        self.lineage.push(lineage);
        id
    }

    fn pos(&self, node: usize, t: &Rational) -> Rational {
        let n = &self.nodes[node];
        &n.intercept + &n.speed * t
    }

    fn schedule(&mut self, l: usize, r: usize) {
        let (nl, nr) = (&self.nodes[l], &self.nodes[r]);
        if nl.speed <= nr.speed {
            return;
        }
        let t = (&nr.intercept - &nl.intercept) / (&nl.speed - &nr.speed);
        if t <= self.now {
            return;
        }
        let x = self.pos(l, &t);
        self.heap.push(Reverse(Candidate {
            t,
            x,
            left: l,
            right: r,
        }));
    }

    fn valid(&self, c: &Candidate) -> bool {
        self.nodes[c.left].alive && self.nodes[c.right].alive && self.nodes[c.left].next == Some(c.right)
    }

    pub fn now(&self) -> &Rational {
        &self.now
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    /// All collisions at the earliest future time, ordered by position.
    /// Popped events must be applied (or the run abandoned).
    pub fn next_events(&mut self) -> Vec<CollisionEvent> {
        let first = loop {
            match self.heap.pop() {
                None => return Vec::new(),
                Some(Reverse(c)) if self.valid(&c) => break c,
                Some(_) => {}
            }
        };
        let t = first.t.clone();
        let mut at: BTreeMap<Rational, usize> = BTreeMap::new();
        at.insert(first.x.clone(), first.left);
        while let Some(Reverse(c)) = self.heap.peek() {
            if c.t != t {
                break;
            }
            let Reverse(c) = self.heap.pop().expect("peeked");
            if self.valid(&c) {
                at.entry(c.x).or_insert(c.left);
            }
        }
        at.into_iter()
            .map(|(x, seed)| {
                let mut a = seed;
                while let Some(p) = self.nodes[a].prev {
                    if self.pos(p, &t) != x {
                        break;
                    }
                    a = p;
                }
                let mut nodes = vec![a];
                let mut b = a;
                while let Some(n) = self.nodes[b].next {
                    if self.pos(n, &t) != x {
                        break;
                    }
                    nodes.push(n);
                    b = n;
                }
                let inputs: Vec<usize> = nodes.iter().filter_map(|&n| self.nodes[n].seg).collect();
                CollisionEvent {
                    t: t.clone(),
                    x,
                    at_pillar: inputs.len() < nodes.len(),
                    inputs,
                    nodes,
                }
            })
            .collect()
    }

    /// Replaces the run `old` by `mid` in the list and schedules new neighbours.
    fn splice(&mut self, old: &[usize], mid: &[usize]) {
        let before = self.nodes[old[0]].prev;
        let after = self.nodes[*old.last().expect("non-empty run")].next;
        for &o in old {
            if !mid.contains(&o) {
                self.nodes[o].alive = false;
            }
        }
        self.link(before, mid, after);
        if let (Some(b), Some(&f)) = (before, mid.first()) {
            self.schedule(b, f);
        }
        match (mid.last(), after) {
            (Some(&l), Some(a)) => self.schedule(l, a),
            (None, Some(a)) => {
                if let Some(b) = before {
                    self.schedule(b, a);
                }
            }
            _ => {}
        }
    }

    fn link(&mut self, before: Option<usize>, mid: &[usize], after: Option<usize>) {
        let mut last = before;
        for &m in mid {
            self.nodes[m].prev = last;
            if let Some(l) = last {
                self.nodes[l].next = Some(m);
            }
            last = Some(m);
        }
        if let Some(l) = last {
            self.nodes[l].next = after;
        }
        if let Some(a) = after {
            self.nodes[a].prev = last;
        }
    }

    fn close(&mut self, seg: usize, x: &Rational, t: &Rational, stop: Option<usize>) {
        let s = &mut self.trace.segments[seg];
        s.end = Some((x.clone(), t.clone()));
        s.stop = stop;
    }

    /// Applies one event returned by [`Simulation::next_events`].
    pub fn apply_event(&mut self, e: &CollisionEvent) -> Result<Applied, EngineError> {
        self.now = e.t.clone();
        let young = self.freeze_below.as_ref().is_some_and(|eps| {
            e.inputs.iter().any(|&s| {
                self.trace.segments[s].start.is_some() && &(&e.t - &self.lineage[s]) < eps
            })
        });
        if e.at_pillar || young {
            self.freeze(e);
            return Ok(Applied::Frozen);
        }
        let inputs: Vec<(usize, Option<&Payload>)> = e
            .inputs
            .iter()
            .map(|&s| {
                let seg = &self.trace.segments[s];
                (seg.signal, seg.payload.as_ref())
            })
            .collect();
        let resolved = self.resolver.resolve(&inputs)?;
        let cidx = self.trace.collisions.len();
        for &s in &e.inputs {
            self.close(s, &e.x, &e.t, Some(cidx));
        }
        let transparent = resolved.resolution == Resolution::Transparent;
        let mut outs = resolved.outputs;
        outs.sort_by(|a, b| self.machine.speed(a.0).cmp(self.machine.speed(b.0)));
        for w in outs.windows(2) {
            if self.machine.speed(w[0].0) == self.machine.speed(w[1].0) {
                return Err(EngineError::EqualOutputSpeeds {
                    t: crate::exactnum::fmt_rational(&e.t),
                });
            }
        }
        let mut born = Vec::with_capacity(outs.len());
        for (signal, payload) in outs {
            let lineage = if transparent {
                e.inputs
                    .iter()
                    .find(|&&s| self.trace.segments[s].signal == signal)
                    .map(|&s| self.lineage[s].clone())
                    .unwrap_or_else(|| e.t.clone())
            } else {
                e.t.clone()
            };
            born.push(self.spawn(
                signal,
                payload,
                e.x.clone(),
                e.t.clone(),
                Some(cidx),
                lineage,
            ));
        }
        let missing = resolved.resolution == Resolution::Missing;
        self.trace.collisions.push(Collision {
            t: e.t.clone(),
            x: e.x.clone(),
            inputs: e.inputs.clone(),
            outputs: born.clone(),
            resolution: resolved.resolution,
        });
        let born_nodes: Vec<usize> = born.iter().map(|&s| self.node_of[s]).collect();
        self.splice(&e.nodes, &born_nodes);
        Ok(if missing {
            Applied::Missing
        } else {
            Applied::Fired
        })
    }

    /// Ends the meeting signals and leaves a single motionless pillar that
    /// freezes whatever reaches it later.
    fn freeze(&mut self, e: &CollisionEvent) {
        for &s in &e.inputs {
            self.close(s, &e.x, &e.t, None);
            self.trace.segments[s].frozen = true;
        }
        if !e.inputs.is_empty() {
            self.trace.frozen.push(Freeze {
                t: e.t.clone(),
                x: e.x.clone(),
                segments: e.inputs.clone(),
            });
        }
        let pillar = match e.nodes.iter().find(|&&n| self.nodes[n].seg.is_none()) {
            Some(&p) => p,
            None => self.add_node(None, Rational::zero(), &e.x, &e.t),
        };
        self.splice(&e.nodes, &[pillar]);
    }
}

/// Runs with a custom resolver.
pub fn run_with<R: Resolver>(
    m: &Machine,
    c: &InitialConfiguration,
    p: &HaltPolicy,
    resolver: &R,
) -> Result<Trace, EngineError> {
    let mut sim = Simulation::new(m, c, resolver)?;
    sim.freeze_below = p.freeze_below.clone();
    let mut count = 0usize;
    let reason = 'run: loop {
        let events = sim.next_events();
        let Some(first) = events.first() else {
            break if sim.trace.frozen.is_empty() {
                HaltReason::Quiescent
            } else {
                HaltReason::GapBelowEpsilon
            };
        };
        if p.max_time.as_ref().is_some_and(|mt| &first.t > mt) {
            break HaltReason::MaxTime;
        }
        if let Some(eps) = &p.min_gap_epsilon {
            if &(&first.t - &sim.now) < eps {
                break HaltReason::GapBelowEpsilon;
            }
        }
        for e in &events {
            if !e.at_pillar && count >= p.max_collisions {
                break 'run HaltReason::MaxCollisions;
            }
            match sim.apply_event(e)? {
                Applied::Fired => count += 1,
                Applied::Frozen => {}
                Applied::Missing => {
                    count += 1;
                    break 'run HaltReason::MissingRule;
                }
            }
        }
    };
    let final_time = sim.now.clone();
    let mut trace = sim.trace;
    trace.halt = Halt {
        reason,
        collisions: count,
        final_time,
    };
    debug!(
        "run halted: {} after {} collisions, {} segments",
        reason.name(),
        count,
        trace.segments.len()
    );
    Ok(trace)
}

/// Runs a plain signal machine.
pub fn run(m: &Machine, c: &InitialConfiguration, p: &HaltPolicy) -> Result<Trace, EngineError> {
    run_with(m, c, p, &PlainResolver(m))
}
