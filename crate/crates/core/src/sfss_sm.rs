//! The finite signal machine. Every augmented signal becomes a band of
//! parallel ordinary signals; the parameters are distances inside the band.
//!
//! A band has a `tree` signal (exactly where the augmented signal would be),
//! then `one` and `two` giving the local unit, `l` and `r` at `u` and `v`
//! units, and a `bound` closing it. Signals of equal speed that sit on the
//! same spot are merged into one superposition signal named after all its
//! members (`oneLR`, `twoR`, ...).

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::OnceLock;

use log::debug;
use num_traits::Signed;

use crate::analysis::{reachable_params, TreeNode};
use crate::engine::{Resolution, Trace};
use crate::exactnum::{q, qi, Rational};
use crate::machine::{CollisionRule, Machine, MetaSignal, Mode, Stroke};
use crate::parser::{InitialConfiguration, Placed};
use crate::sfss_asm::{split_update, Params, SfssError, Step, TargetSegment};

/// Orientation and family of a band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Band {
    /// Vertical band of a Delay signal.
    Delay,
    /// Right-moving band of a right Split branch.
    Right,
    /// Left-moving band of a left Split branch, drawn mirrored.
    Left,
}

impl Band {
    pub const ALL: [Band; 3] = [Band::Delay, Band::Right, Band::Left];

    fn prefix(self) -> &'static str {
        match self {
            Band::Delay => "",
            Band::Right => "sr",
            Band::Left => "sl",
        }
    }

    pub fn speed(self) -> Rational {
        match self {
            Band::Delay => qi(0),
            Band::Right => qi(1),
            Band::Left => qi(-1),
        }
    }

    /// `1` when the band lies right of its tree signal, `-1` otherwise.
    pub fn side(self) -> i64 {
        match self {
            Band::Left => -1,
            _ => 1,
        }
    }

    /// Speed of computing signals running from the tree into the band.
    fn forward(self) -> Rational {
        qi(2 * self.side())
    }

    /// Name of a band member: `tree`, `srTree`, `slTree`.
    pub fn name(self, base: &str) -> String {
        match self {
            Band::Delay => lower_first(base),
            _ => format!("{}{}", self.prefix(), base),
        }
    }
}

fn lower_first(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_ascii_lowercase().to_string() + c.as_str(),
        None => String::new(),
    }
}

pub const ONE: u8 = 1;
pub const TWO: u8 = 2;
pub const CH_L: u8 = 4;
pub const CH_R: u8 = 8;
const LR: u8 = CH_L | CH_R;

/// Non-empty channel sets that can share a spot: `one` and `two` never do.
pub fn channel_sets() -> Vec<u8> {
    (1u8..16).filter(|s| s & (ONE | TWO) != ONE | TWO).collect()
}

fn part(set: u8) -> String {
    let mut s = String::new();
    for (bit, n) in [(ONE, "One"), (TWO, "Two"), (CH_L, "L"), (CH_R, "R")] {
        if set & bit != 0 {
            s.push_str(n);
        }
    }
    s
}

/// Channel signal of a band, e.g. `oneL`, `srTwo`, `slLR`.
pub fn channel(band: Band, set: u8) -> String {
    band.name(&part(set))
}

/// Channel on its way through a macro-collision: `_sr` 3/7, `_sl` -3/7,
/// `_sbr` 1/3, `_sbl` -1/3, `_1` -3.
fn transit(set: u8, kind: &str) -> String {
    format!("{}_{kind}", lower_first(&part(set)))
}

fn back(band: Band, set: u8) -> String {
    band.name(&format!("{}Back", part(set)))
}

/// `l`/`r` while being moved by a Split update.
fn moving(side: Band, set: u8) -> String {
    format!("splitUpdt{}Set{}", part(set), side_letter(side))
}

fn side_letter(b: Band) -> &'static str {
    if b == Band::Left {
        "L"
    } else {
        "R"
    }
}

const TRANSITS: [(&str, (i64, i64)); 5] = [
    ("sr", (3, 7)),
    ("sl", (-3, 7)),
    ("sbr", (1, 3)),
    ("sbl", (-1, 3)),
    ("1", (-3, 1)),
];

pub const BORDER: &str = "border";

fn bounce(dir: &str, level: &str) -> String {
    format!("bounce{dir}{level}")
}

const LEVELS: [&str; 2] = ["Bot", "Top"];

#[derive(Default)]
struct Builder {
    speeds: BTreeMap<String, Rational>,
    rules: Vec<CollisionRule>,
    keys: HashSet<Vec<String>>,
}

impl Builder {
    fn sig(&mut self, name: impl Into<String>, speed: Rational) {
        let name = name.into();
        if let Some(old) = self.speeds.get(&name) {
            assert_eq!(old, &speed, "meta-signal {name} declared twice");
        } else {
            self.speeds.insert(name, speed);
        }
    }

    fn rule<I, O>(&mut self, ins: I, outs: O)
    where
        I: IntoIterator,
        I::Item: Into<String>,
        O: IntoIterator,
        O::Item: Into<String>,
    {
        let ins: Vec<String> = ins.into_iter().map(Into::into).collect();
        let outs: Vec<String> = outs.into_iter().map(Into::into).collect();
        let mut key = ins.clone();
        key.sort();
        assert!(self.keys.insert(key), "two rules for {ins:?}");
        let i: Vec<&str> = ins.iter().map(String::as_str).collect();
        let o: Vec<&str> = outs.iter().map(String::as_str).collect();
        self.rules.push(CollisionRule::new(&i, &o));
    }
}

fn declare(b: &mut Builder) {
    b.sig(BORDER, qi(0));
    for lv in LEVELS {
        b.sig(bounce("RSlow", lv), q(3, 2));
        b.sig(bounce("R", lv), qi(3));
        b.sig(bounce("L", lv), qi(-3));
    }
    for band in Band::ALL {
        let s = band.speed();
        let f = band.forward();
        for base in ["Tree", "Bound", "BoundDEL", "BoundSPL"] {
            b.sig(band.name(base), s.clone());
        }
        for set in channel_sets() {
            b.sig(channel(band, set), s.clone());
        }
        for base in ["Test", "TestDEL", "TestSPL", "ComputeMove", "ComputeMoveOne", "Minus", "MinusOne"] {
            b.sig(band.name(base), f.clone());
        }
        for base in ["OneBack", "TestStart"] {
            b.sig(band.name(base), -&f);
        }
        for set in [CH_L, CH_R, LR] {
            b.sig(back(band, set), -&f);
        }
        b.sig(
            band.name("PreComputeMove"),
            if band == Band::Delay { qi(-3) } else { -&f },
        );
    }
    for set in channel_sets() {
        for (kind, (n, d)) in TRANSITS {
            b.sig(transit(set, kind), q(n, d));
        }
    }
    // Delay rerouting.
    b.sig("treeDelay", qi(0));
    b.sig("wallDelay", qi(0));
    b.sig("dsepOne", qi(-3));
    b.sig("dsepTwo", qi(6));
    b.sig("bounceDelayL", qi(-3));
    b.sig("bounceFSR", q(3, 5));
    b.sig("boundDelaySR", q(3, 7));
    // Split rerouting.
    b.sig("wallSplit", qi(0));
    b.sig("bounceSR", qi(1));
    b.sig("bounceSL", qi(-1));
    b.sig("bounceSBR", q(3, 5));
    b.sig("bounceSBL", q(-3, 5));
    b.sig("boundSR", q(3, 7));
    b.sig("boundSL", q(-3, 7));
    b.sig("boundSBR", q(1, 3));
    b.sig("boundSBL", q(-1, 3));
    b.sig("preSplitUpdtR", qi(-2));
    b.sig("preSplitUpdtL", qi(2));
    // Split after a Delay.
    b.sig("boundSOne", qi(-1));
    b.sig("sepOne", qi(3));
    b.sig("sepThree", qi(3));
    b.sig("sepTwo", qi(-3));
    b.sig("bounceSplitL", qi(-3));
    b.sig("bounceSplitOneL", qi(-3));
    b.sig("boundSPLOne", qi(0));
    // Split updates.
    for side in [Band::Right, Band::Left] {
        let g = i64::from(side == Band::Right) * 2 - 1;
        let x = side_letter(side);
        for base in ["Low", "Set", "SetOne"] {
            b.sig(format!("splitUpdt{base}{x}"), qi(2 * g));
        }
        for base in ["Back", "End"] {
            b.sig(format!("splitUpdt{base}{x}"), qi(-2 * g));
        }
        b.sig(format!("splitUpdtHigh{x}"), q(5 * g, 3));
        for set in [CH_L, CH_R, LR] {
            b.sig(moving(side, set), q(5 * g, 3));
        }
    }
}

fn bounce_rules(b: &mut Builder) {
    for p in LEVELS {
        b.rule([bounce("RSlow", p), BORDER.to_string()], [bounce("L", p), BORDER.to_string()]);
        b.rule([bounce("R", p), BORDER.to_string()], [bounce("L", p), BORDER.to_string()]);
        b.rule([bounce("L", p), BORDER.to_string()], [bounce("R", p), BORDER.to_string()]);
        for r in LEVELS {
            b.rule(
                [bounce("RSlow", p), BORDER.to_string(), bounce("L", r)],
                [bounce("L", p), BORDER.to_string(), bounce("R", r)],
            );
            b.rule(
                [bounce("R", p), BORDER.to_string(), bounce("L", r)],
                [bounce("L", p), BORDER.to_string(), bounce("R", r)],
            );
        }
    }
}

/// Collect optional names into an output list.
fn outs(items: &[Option<String>]) -> Vec<String> {
    items.iter().flatten().cloned().collect()
}

fn test_rules(b: &mut Builder) {
    for band in Band::ALL {
        let n = |s: &str| band.name(s);
        for set in channel_sets() {
            let verdict = if set & TWO != 0 {
                "TestDEL"
            } else if set & LR != 0 {
                "TestSPL"
            } else {
                continue;
            };
            b.rule([n("Test"), channel(band, set)], [channel(band, set), n(verdict)]);
        }
        b.rule([n("TestDEL"), n("Bound")], [n("BoundDEL")]);
        b.rule([n("TestSPL"), n("Bound")], [n("BoundSPL")]);
    }
}

/// One removed from both parameters: `l` and `r` move toward the tree by
/// the tree-to-`one` distance.
fn minus_one_rules(b: &mut Builder) {
    for band in Band::ALL {
        let n = |s: &str| band.name(s);
        b.rule([n("Tree"), n("PreComputeMove")], [n("Tree"), n("ComputeMove")]);
        b.rule([n("ComputeMove"), channel(band, ONE)], [n("OneBack"), channel(band, ONE), n("ComputeMove")]);
        b.rule([n("Tree"), n("OneBack")], [n("Tree"), n("Minus")]);
        b.rule([n("Tree"), n("TestStart")], [n("Tree"), n("Test")]);
        for set in channel_sets() {
            let p = set & LR;
            if p == 0 || set & ONE != 0 {
                continue;
            }
            let rest = (set != p).then(|| channel(band, set & !p));
            let run_on = (p != LR).then(|| n("ComputeMoveOne"));
            b.rule(
                [n("ComputeMove"), channel(band, set)],
                outs(&[rest.clone(), Some(back(band, p)), run_on]),
            );
            if p != LR {
                b.rule([n("ComputeMoveOne"), channel(band, set)], outs(&[rest, Some(back(band, p))]));
            }
        }
        for p in [CH_L, CH_R, LR] {
            let done = if p == LR { "TestStart" } else { "MinusOne" };
            b.rule([n("Minus"), back(band, p)], [channel(band, p), n(done)]);
            if p != LR {
                b.rule([n("MinusOne"), back(band, p)], [channel(band, p), n("TestStart")]);
            }
            // Landing exactly on `one` or `two`.
            for c in [ONE, TWO] {
                b.rule(
                    [n("Minus"), back(band, p), channel(band, c)],
                    [channel(band, c | p), n(done)],
                );
                if p != LR {
                    b.rule(
                        [n("MinusOne"), back(band, p), channel(band, c)],
                        [channel(band, c | p), n("TestStart")],
                    );
                }
            }
        }
    }
}

fn delay_rerouting_rules(b: &mut Builder) {
    let lb = || bounce("L", "Bot");
    let lt = || bounce("L", "Top");
    let rb = || bounce("R", "Bot");
    let rt = || bounce("R", "Top");
    let slow_b = || bounce("RSlow", "Bot");
    let slow_t = || bounce("RSlow", "Top");
    b.rule(["boundDEL".to_string(), lb()], ["bounceDelayL".to_string(), "bound".to_string()]);
    b.rule(["bounceDelayL".to_string(), "tree".to_string()], ["treeDelay".to_string(), slow_b()]);
    b.rule(["treeDelay".to_string(), lt()], ["tree".to_string(), slow_t()]);
    b.rule(
        ["srBoundDEL".to_string(), lb()],
        ["wallDelay", "boundDelaySR", "bounceFSR"].map(String::from),
    );
    b.rule(["bounceFSR".to_string(), lt()], [lt(), slow_b()]);
    b.rule(
        ["srTree", "wallDelay", "bounceDelayL"].map(String::from),
        ["tree".to_string(), slow_t()],
    );
    b.rule(
        [rb(), "slBoundDEL".to_string()],
        ["dsepOne", "wallDelay", "boundDelaySR", "bounceFSR"].map(String::from),
    );
    b.rule([rt(), "dsepOne".to_string()], ["dsepTwo".to_string()]);
    b.rule(["bounceFSR".to_string(), "dsepTwo".to_string()], [lt(), slow_b()]);
    b.rule(
        ["wallDelay", "slTree", "bounceDelayL"].map(String::from),
        ["tree".to_string(), slow_t()],
    );
    b.rule(
        [slow_t(), "bound".to_string()],
        ["preComputeMove".to_string(), "bound".to_string(), slow_t()],
    );
    b.rule(["boundDelaySR".to_string(), lt()], ["bounceDelayL".to_string(), "bound".to_string()]);
    for set in channel_sets() {
        b.rule(
            [channel(Band::Right, set), "wallDelay".to_string()],
            ["wallDelay".to_string(), transit(set, "sr")],
        );
        b.rule(
            [channel(Band::Left, set), "wallDelay".to_string()],
            ["wallDelay".to_string(), transit(set, "sr")],
        );
        b.rule(
            [transit(set, "sr"), "bounceDelayL".to_string()],
            ["bounceDelayL".to_string(), channel(Band::Delay, set)],
        );
    }
}

fn split_rerouting_rules(b: &mut Builder) {
    let lb = || bounce("L", "Bot");
    let lt = || bounce("L", "Top");
    let rb = || bounce("R", "Bot");
    let rt = || bounce("R", "Top");
    let node_out = || vec![lt(), "slTree".to_string(), BORDER.to_string(), "srTree".to_string(), rt()];
    b.rule(
        [lb(), "srBoundSPL".to_string()],
        ["bounceSBL", "boundSBL", "wallSplit", "boundSR", "bounceSR"].map(String::from),
    );
    b.rule(
        [rb(), "slBoundSPL".to_string()],
        ["bounceSBR", "boundSBR", "wallSplit", "boundSL", "bounceSL"].map(String::from),
    );
    b.rule(["srTree".to_string(), "wallSplit".to_string(), lt()], node_out());
    b.rule(["slTree".to_string(), "wallSplit".to_string(), rt()], node_out());
    b.rule(["boundSR".to_string(), lt()], [lt(), "srBound".to_string()]);
    b.rule(["srTree", "boundSBL"].map(String::from), ["slBound", "srTree"].map(String::from));
    b.rule(["srTree", "bounceSBL"].map(String::from), [lb(), "srTree".to_string()]);
    b.rule(["bounceSR".to_string(), lt()], [lt(), rb()]);
    b.rule([rt(), "srBound".to_string()], ["preSplitUpdtR".to_string(), rt(), "srBound".to_string()]);
    b.rule(["boundSL".to_string(), rt()], [rt(), "slBound".to_string()]);
    b.rule(["slTree", "boundSBR"].map(String::from), ["srBound", "slTree"].map(String::from));
    b.rule(["slTree", "bounceSBR"].map(String::from), [rb(), "slTree".to_string()]);
    b.rule(["bounceSL".to_string(), rt()], [lb(), rt()]);
    b.rule([lt(), "slBound".to_string()], ["preSplitUpdtL".to_string(), lt(), "slBound".to_string()]);
    for set in channel_sets() {
        let sr = channel(Band::Right, set);
        let sl = channel(Band::Left, set);
        b.rule(
            ["wallSplit".to_string(), sr.clone()],
            [transit(set, "sbl"), "wallSplit".to_string(), transit(set, "sr")],
        );
        b.rule([transit(set, "sr"), lt()], [lt(), sr.clone()]);
        b.rule(["srTree".to_string(), transit(set, "sbl")], [sl.clone(), "srTree".to_string()]);
        b.rule(
            ["wallSplit".to_string(), sl.clone()],
            [transit(set, "sl"), "wallSplit".to_string(), transit(set, "sbr")],
        );
        b.rule([transit(set, "sl"), rt()], [rt(), sl]);
        b.rule(["slTree".to_string(), transit(set, "sbr")], [sr, "slTree".to_string()]);
    }
}

fn split_after_delay_rules(b: &mut Builder) {
    let lb = || bounce("L", "Bot");
    let lt = || bounce("L", "Top");
    let rb = || bounce("R", "Bot");
    let rt = || bounce("R", "Top");
    b.rule(["boundSPL".to_string(), lb()], ["bounceSplitL", "boundSPLOne"].map(String::from));
    b.rule(["boundSPLOne".to_string(), lt()], ["bounceSplitOneL", "srBound"].map(String::from));
    b.rule(
        ["tree", "bounceSplitL"].map(String::from),
        [lb(), "boundSOne".to_string(), "tree".to_string(), "sepOne".to_string()],
    );
    b.rule(
        ["sepOne", "boundSPLOne"].map(String::from),
        ["sepTwo".to_string(), "boundSPLOne".to_string(), rb()],
    );
    b.rule(["boundSOne", "sepTwo"].map(String::from), ["slBound", "sepThree"].map(String::from));
    b.rule(
        ["sepThree", "tree", "bounceSplitOneL"].map(String::from),
        [lt(), "slTree".to_string(), BORDER.to_string(), "srTree".to_string(), rt()],
    );
    for set in channel_sets() {
        let d = channel(Band::Delay, set);
        b.rule(
            ["sepOne".to_string(), d.clone()],
            [transit(set, "1"), d.clone(), "sepOne".to_string()],
        );
        b.rule(["boundSOne".to_string(), transit(set, "1")], ["boundSOne".to_string(), d.clone()]);
        b.rule(
            [d.clone(), "bounceSplitOneL".to_string()],
            ["bounceSplitOneL".to_string(), channel(Band::Right, set)],
        );
        b.rule(["sepThree".to_string(), d], ["sepThree".to_string(), channel(Band::Left, set)]);
    }
}

/// `tree`-side distance of the measured channel added to both `l` and `r`.
fn split_update_rules(b: &mut Builder) {
    for side in [Band::Right, Band::Left] {
        let x = side_letter(side);
        let s = |base: &str| format!("splitUpdt{base}{x}");
        let tree = side.name("Tree");
        let measured = if side == Band::Right { CH_R } else { CH_L };
        b.rule(
            [format!("preSplitUpdt{x}"), tree.clone()],
            [tree.clone(), s("High"), s("Low")],
        );
        b.rule([tree.clone(), s("Back")], [tree.clone(), s("Set")]);
        b.rule([tree.clone(), s("End")], [tree.clone(), side.name("ComputeMove")]);
        for set in channel_sets() {
            if set & measured != 0 {
                for probe in ["Low", "High"] {
                    b.rule([s(probe), channel(side, set)], [s("Back"), channel(side, set)]);
                }
            }
            let p = set & LR;
            if p == 0 {
                continue;
            }
            let rest = (set != p).then(|| channel(side, set & !p));
            let run_on = (p != LR).then(|| s("SetOne"));
            b.rule(
                [s("Set"), channel(side, set)],
                outs(&[rest.clone(), Some(moving(side, p)), run_on]),
            );
            if p != LR {
                b.rule([s("SetOne"), channel(side, set)], outs(&[rest, Some(moving(side, p))]));
            }
        }
        for p in [CH_L, CH_R, LR] {
            let (first, done) = if p == LR { ("Set", "End") } else { ("Set", "SetOne") };
            b.rule([s(first), moving(side, p)], [channel(side, p), s(done)]);
            if p != LR {
                b.rule([s("SetOne"), moving(side, p)], [channel(side, p), s("End")]);
            }
            for c in [ONE, TWO] {
                b.rule(
                    [s(first), moving(side, p), channel(side, c)],
                    [channel(side, c | p), s(done)],
                );
                if p != LR {
                    b.rule(
                        [s("SetOne"), moving(side, p), channel(side, c)],
                        [channel(side, c | p), s("End")],
                    );
                }
            }
        }
    }
}

/// The finite machine, transparent mode, every rule family expanded.
pub fn build_sm_machine() -> Machine {
    let mut b = Builder::default();
    declare(&mut b);
    bounce_rules(&mut b);
    test_rules(&mut b);
    minus_one_rules(&mut b);
    delay_rerouting_rules(&mut b);
    split_rerouting_rules(&mut b);
    split_after_delay_rules(&mut b);
    split_update_rules(&mut b);
    let signals = b
        .speeds
        .iter()
        .map(|(n, s)| MetaSignal::new(n, s.clone()))
        .collect();
    let mut m = Machine::plain(signals, b.rules, Mode::Transparent);
    let names: Vec<String> = m.signals.iter().map(|s| s.name.clone()).collect();
    for n in names {
        let (color, stroke) = sm_style(&n);
        m.colors.insert(n.clone(), color.to_string());
        if let Some(st) = stroke {
            m.styles.insert(n, st);
        }
    }
    debug!("sm machine: {} signals, {} rules", m.signals.len(), m.rules.len());
    m
}

fn sm_style(name: &str) -> (&'static str, Option<Stroke>) {
    let stroke = if name.contains("DEL") || name.contains("Delay") {
        Some(Stroke::Dotted)
    } else if name.contains("SPL") || name.contains("Split") || name.contains("splitUpdt") {
        Some(Stroke::Dashed)
    } else {
        None
    };
    let lower = name.to_ascii_lowercase();
    let color = if name == BORDER {
        "#000000"
    } else if lower.ends_with("tree") {
        "#1f4fd8"
    } else if lower.contains("bounce") {
        "#2e8b57"
    } else if lower.contains("sep") || lower.contains("wall") {
        "#e67e22"
    } else if lower.contains("test") {
        "#8e44ad"
    } else if channel_of(name).is_some() {
        "#2c6fbb"
    } else {
        "#27ae60"
    };
    (color, stroke)
}

fn channel_table() -> &'static HashMap<String, (Band, u8)> {
    static TABLE: OnceLock<HashMap<String, (Band, u8)>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = HashMap::new();
        for band in Band::ALL {
            for set in channel_sets() {
                t.insert(channel(band, set), (band, set));
            }
        }
        t
    })
}

/// Band and channel set of a parallel band member.
pub fn channel_of(name: &str) -> Option<(Band, u8)> {
    channel_table().get(name).copied()
}

/// Kind of band a tree-family signal belongs to.
pub fn tree_band(name: &str) -> Option<Band> {
    match name {
        "tree" | "treeDelay" => Some(Band::Delay),
        "srTree" => Some(Band::Right),
        "slTree" => Some(Band::Left),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MacroSignalSpec {
    pub kind: Band,
    pub params: Params,
    /// Position of the tree signal.
    pub anchor: Rational,
    /// Tree-to-bound distance.
    pub width: Rational,
    /// Tree-to-`one` distance.
    pub unit: Rational,
    /// Offset of a `test` signal in local units, if one is to be placed.
    pub test: Option<Rational>,
}

/// Place the band's signals. Coinciding channels become one superposition
/// signal.
pub fn encode_macro_signal(spec: &MacroSignalSpec) -> Result<Vec<Placed>, SfssError> {
    let MacroSignalSpec {
        kind,
        params,
        anchor,
        width,
        unit,
        test,
    } = spec;
    if !params.is_valid() {
        return Err(SfssError::InvalidParams(params.to_string()));
    }
    if !unit.is_positive() || width <= unit {
        return Err(SfssError::Scale("unit must be positive and below the width".into()));
    }
    let cap = width / unit;
    for (name, val) in [("two", &qi(2)), ("l", &params.u), ("r", &params.v)] {
        if val >= &cap {
            return Err(SfssError::Scale(format!("{name} falls on or past the bound")));
        }
    }
    let mut spots: BTreeMap<Rational, u8> = BTreeMap::new();
    for (bit, val) in [(ONE, qi(1)), (TWO, qi(2)), (CH_L, params.u.clone()), (CH_R, params.v.clone())] {
        *spots.entry(val).or_default() |= bit;
    }
    let at = |local: &Rational| anchor + local * unit * qi(kind.side());
    let mut out = vec![Placed::new(anchor.clone(), &kind.name("Tree"))];
    if let Some(off) = test {
        if !off.is_positive() || off >= &qi(1) {
            return Err(SfssError::Scale("test offset must lie between tree and one".into()));
        }
        out.push(Placed::new(at(off), &kind.name("Test")));
    }
    for (local, set) in &spots {
        out.push(Placed::new(at(local), &channel(*kind, *set)));
    }
    out.push(Placed::new(anchor + width * qi(kind.side()), &kind.name("Bound")));
    out.sort_by(|a, b| a.x.cmp(&b.x));
    Ok(out)
}

/// Tree-to-`one` distance leaving room for parameters up to `params_bound`.
pub fn choose_unit(params_bound: &Rational, width: &Rational) -> Rational {
    width / (params_bound + qi(1))
}

/// Derived placement of an SM run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SmLayout {
    /// Extra Delay steps prepended so the pre-image is valid.
    pub k: u32,
    /// Band parameters at time 0.
    pub pre_image: Params,
    /// Parameters read at the root node, `(u0 + k, v0 + k)`.
    pub root_params: Params,
    pub width: Rational,
    pub params_bound: Rational,
    pub unit: Rational,
    /// Time since the virtual parent node at time 0.
    pub lag: Rational,
    /// Where the root node fires.
    pub root: (Rational, Rational),
}

/// Default band width.
pub fn default_width() -> Rational {
    q(1, 16)
}

const K_BUDGET: u32 = 64;

/// Pre-image of a right Split branch update, shifted by the smallest `k`.
pub fn pre_image(seg: &TargetSegment) -> Result<(u32, Params), SfssError> {
    for k in 0..=K_BUDGET {
        let u = &seg.u0 + qi(i64::from(k));
        let v = &seg.v0 + qi(i64::from(k));
        let b = (&v + qi(1)) / qi(2);
        let a = &u + qi(1) - &b;
        let p = Params::new(a, b);
        if p.is_valid() {
            return Ok((k, p));
        }
    }
    Err(SfssError::NoPreImage(K_BUDGET as usize))
}

/// Work out the band scale and the root position for `seg`.
pub fn sm_layout(seg: &TargetSegment, width: &Rational) -> Result<SmLayout, SfssError> {
    if !width.is_positive() || width >= &q(1, 4) {
        return Err(SfssError::Scale("band width must lie in (0, 1/4)".into()));
    }
    let (k, pre) = pre_image(seg)?;
    let root_params = Params::new(&seg.u0 + qi(i64::from(k)), &seg.v0 + qi(i64::from(k)));
    // Split updates pass through (u + 1, v + 1) of the child before the
    // final subtraction, so bound the reachable values plus one.
    let top = match reachable_params(&root_params, 100_000) {
        Ok(r) => r
            .params
            .iter()
            .map(|p| p.u.clone().max(p.v.clone()))
            .max()
            .unwrap_or_else(|| qi(1)),
        Err(_) => {
            let s = seg.slope().abs();
            root_params.u.clone().max(root_params.v.clone()).max(qi(2) + s)
        }
    };
    let params_bound = (top + qi(1)).max(pre.u.clone()).max(pre.v.clone());
    let unit = choose_unit(&params_bound, width);
    // The top bounce signal starts at the tree and must still be inside the
    // band at time 0, away from every channel.
    let lag = [q(1, 8), q(1, 7), q(1, 9), q(1, 11), q(1, 13)]
        .into_iter()
        .map(|f| width * f)
        .find(|lag| {
            let off = (lag * qi(2)) / &unit;
            off != qi(1) && off != qi(2) && off != pre.u && off != pre.v
        })
        .expect("some lag avoids four points");
    let root = (qi(0), qi(1) - &lag);
    Ok(SmLayout {
        k,
        pre_image: pre,
        root_params,
        width: width.clone(),
        params_bound,
        unit,
        lag,
        root,
    })
}

/// Borders at -1 and +1, a right branch band just after a virtual Split at
/// (-1, -lag), its bounce pair one width apart in time.
pub fn initial_sm_config(seg: &TargetSegment, width: &Rational) -> Result<InitialConfiguration, SfssError> {
    let lay = sm_layout(seg, width)?;
    let anchor = qi(-1) + &lay.lag;
    let mut signals = vec![Placed::new(qi(-1), BORDER), Placed::new(qi(1), BORDER)];
    signals.extend(encode_macro_signal(&MacroSignalSpec {
        kind: Band::Right,
        params: lay.pre_image.clone(),
        anchor,
        width: width.clone(),
        unit: lay.unit.clone(),
        test: None,
    })?);
    let top = qi(-1) + &lay.lag * qi(3);
    let bot = &top + width * qi(3);
    signals.push(Placed::new(top, &bounce("R", "Top")));
    signals.push(Placed::new(bot, &bounce("R", "Bot")));
    signals.sort_by(|a, b| a.x.cmp(&b.x));
    Ok(InitialConfiguration { signals })
}

fn is_tree(name: &str) -> bool {
    tree_band(name).is_some()
}

/// Whether a collision is a node: the tree meets its top bounce signal and
/// emits the next step's signals.
fn node_kind(trace: &Trace, c: &crate::engine::Collision) -> Option<Step> {
    if !c.inputs.iter().any(|&s| is_tree(trace.name(s))) {
        return None;
    }
    let names: Vec<&str> = c.outputs.iter().map(|&s| trace.name(s)).collect();
    if names.contains(&BORDER) && names.contains(&"srTree") && names.contains(&"slTree") {
        Some(Step::Split)
    } else if names.contains(&"bounceRSlowTop") && names.contains(&"tree") {
        Some(Step::Delay)
    } else {
        None
    }
}

/// Where a band is read: its tree position and time.
struct Probe {
    band: Band,
    x: Rational,
    t: Rational,
}

/// Parameters of every probed band, as distance ratios. One sweep over the
/// segments collects the band members alive at each probe time.
fn decode_bands(trace: &Trace, probes: &[Probe]) -> Result<Vec<(Params, Rational)>, SfssError> {
    // Probes grouped by time and band, sorted by tree position.
    let mut groups: BTreeMap<&Rational, HashMap<Band, Vec<usize>>> = BTreeMap::new();
    for (i, p) in probes.iter().enumerate() {
        groups.entry(&p.t).or_default().entry(p.band).or_default().push(i);
    }
    for g in groups.values_mut() {
        for v in g.values_mut() {
            v.sort_by(|&a, &b| probes[a].x.cmp(&probes[b].x));
        }
    }
    let times: Vec<&Rational> = groups.keys().copied().collect();
    let mut bound: Vec<Option<Rational>> = vec![None; probes.len()];
    let mut members: Vec<Vec<(Rational, u8)>> = vec![Vec::new(); probes.len()];
    for (i, seg) in trace.segments.iter().enumerate() {
        let name = trace.name(i);
        let (band, chan) = match (channel_of(name), name) {
            (Some((b, set)), _) => (b, Some(set)),
            (None, "bound") => (Band::Delay, None),
            (None, "srBound") => (Band::Right, None),
            (None, "slBound") => (Band::Left, None),
            _ => continue,
        };
        let lo = times.partition_point(|t| *t < &seg.t0);
        let hi = match &seg.end {
            Some((_, t1)) => times.partition_point(|t| *t < t1),
            None => times.len(),
        };
        for t in &times[lo..hi] {
            let Some(row) = groups[t].get(&band) else { continue };
            let x = trace.position(i, t);
            // The band owning this signal has its tree just behind it.
            let k = row.partition_point(|&pi| probes[pi].x < x);
            let pi = if band.side() > 0 {
                match k.checked_sub(1) {
                    Some(k) => row[k],
                    None => continue,
                }
            } else {
                let k = row.partition_point(|&pi| probes[pi].x <= x);
                match row.get(k) {
                    Some(&pi) => pi,
                    None => continue,
                }
            };
            let d = (&x - &probes[pi].x) * qi(band.side());
            match chan {
                Some(set) => members[pi].push((d, set)),
                None => {
                    if bound[pi].as_ref().is_none_or(|b| &d < b) {
                        bound[pi] = Some(d);
                    }
                }
            }
        }
    }
    let mut out = Vec::with_capacity(probes.len());
    for (pi, p) in probes.iter().enumerate() {
        let limit = bound[pi]
            .as_ref()
            .ok_or_else(|| SfssError::Trace(format!("no bound beside the tree at t={}", p.t)))?;
        let mut at: [Option<&Rational>; 4] = [None; 4];
        for (d, set) in members[pi].iter().filter(|(d, _)| d < limit) {
            for (k, bit) in [ONE, TWO, CH_L, CH_R].into_iter().enumerate() {
                if set & bit != 0 {
                    if at[k].is_some() {
                        return Err(SfssError::Trace(format!("two copies of a channel at t={}", p.t)));
                    }
                    at[k] = Some(d);
                }
            }
        }
        let [Some(one), _, Some(l), Some(r)] = at else {
            return Err(SfssError::Trace(format!("band at t={} misses a channel", p.t)));
        };
        out.push((Params::new(l / one, r / one), limit.clone()));
    }
    Ok(out)
}

/// A node event with its place in the tree and the band it was read from.
#[derive(Debug, Clone)]
pub struct ScannedNode {
    pub node: TreeNode,
    /// Index of the parent node in the scan.
    pub parent: Option<usize>,
    /// The node collision in the trace.
    pub collision: usize,
    /// Tree-to-bound distance of the band when its parameters were read.
    pub width: Rational,
}

/// Node events of an SM run with depths, kinds as fired, and parameters read
/// from the band once its test has been launched.
pub fn extract_tree_nodes(trace: &Trace) -> Result<Vec<TreeNode>, SfssError> {
    Ok(scan_nodes(trace)?.into_iter().map(|s| s.node).collect())
}

/// As [`extract_tree_nodes`], keeping parent links and band widths.
pub fn scan_nodes(trace: &Trace) -> Result<Vec<ScannedNode>, SfssError> {
    let mut node_at: HashMap<usize, usize> = HashMap::new();
    let mut found: Vec<(usize, Step, Option<usize>)> = Vec::new();
    let mut probes: Vec<Probe> = Vec::new();
    for (ci, c) in trace.collisions.iter().enumerate() {
        let Some(kind) = node_kind(trace, c) else { continue };
        let mut seg = c
            .inputs
            .iter()
            .copied()
            .find(|&s| is_tree(trace.name(s)))
            .expect("node has a tree input");
        // Walk the tree signal back to the previous node.
        let mut probe: Option<Probe> = None;
        let parent = loop {
            let Some(start) = trace.segments[seg].start else { break None };
            if let Some(&p) = node_at.get(&start) {
                break Some(p);
            }
            let sc = &trace.collisions[start];
            if let Some(band) = tree_band(trace.name(seg)) {
                let handoff = band.name("TestStart");
                if sc.inputs.iter().any(|&s| trace.name(s) == handoff) {
                    probe = Some(Probe {
                        band,
                        x: sc.x.clone(),
                        t: sc.t.clone(),
                    });
                }
            }
            match sc.inputs.iter().copied().find(|&s| is_tree(trace.name(s))) {
                Some(prev) => seg = prev,
                None => {
                    return Err(SfssError::Trace(format!(
                        "tree signal out of nowhere at collision {start}"
                    )))
                }
            }
        };
        // Walking backwards, the last handoff seen is the earliest one.
        probes.push(probe.ok_or_else(|| SfssError::Trace(format!("node at t={} was never tested", c.t)))?);
        node_at.insert(ci, found.len());
        found.push((ci, kind, parent));
    }
    let params = decode_bands(trace, &probes)?;
    let mut nodes: Vec<ScannedNode> = Vec::with_capacity(found.len());
    for ((ci, kind, parent), (params, width)) in found.into_iter().zip(params) {
        let c = &trace.collisions[ci];
        let d = match parent {
            Some(p) => nodes[p].node.d + u32::from(nodes[p].node.kind == Step::Split),
            None => 0,
        };
        let mut node = TreeNode::new(c.x.clone(), c.t.clone(), d, params);
        node.kind = kind;
        nodes.push(ScannedNode {
            node,
            parent,
            collision: ci,
            width,
        });
    }
    Ok(nodes)
}

/// Band shape measured at a node: `width` as read from its band, `height`
/// the time between the bottom and top bounce signals at the last border the
/// top signal met before the node.
#[derive(Debug, Clone)]
pub struct BandGeometry {
    pub node: TreeNode,
    /// Step taken by the node that emitted the band.
    pub made_by: Option<Step>,
    /// Step taken by that node's own parent.
    pub made_by_parent: Option<Step>,
    pub width: Rational,
    pub height: Option<Rational>,
    /// Width of the parent's band.
    pub parent_width: Option<Rational>,
}

fn is_bounce(name: &str) -> bool {
    name.starts_with("bounce")
}

/// Last border reflection of the bounce signal feeding `seg`.
fn last_reflection(trace: &Trace, mut seg: usize) -> Option<usize> {
    loop {
        let ci = trace.segments[seg].start?;
        let c = &trace.collisions[ci];
        if c.inputs.iter().any(|&s| trace.name(s) == BORDER) {
            return Some(ci);
        }
        let same = c.inputs.iter().copied().find(|&s| trace.name(s) == trace.name(seg));
        // Through a rerouting only a top signal carries on; a top turned
        // into a separator (`dsep*`) ends the search.
        seg = same.or_else(|| {
            c.inputs.iter().copied().find(|&s| {
                let n = trace.name(s);
                is_bounce(n) && (n.ends_with("Top") || n.starts_with("bounceSplit"))
            })
        })?;
    }
}

pub fn band_geometry(trace: &Trace) -> Result<Vec<BandGeometry>, SfssError> {
    let scan = scan_nodes(trace)?;
    // Reflections off each border position, in time order.
    let mut at_border: BTreeMap<&Rational, Vec<usize>> = BTreeMap::new();
    for (ci, c) in trace.collisions.iter().enumerate() {
        if c.inputs.iter().any(|&s| trace.name(s) == BORDER) {
            at_border.entry(&c.x).or_default().push(ci);
        }
    }
    let mut out = Vec::with_capacity(scan.len());
    for sn in &scan {
        let c = &trace.collisions[sn.collision];
        let top = c.inputs.iter().copied().find(|&s| is_bounce(trace.name(s)));
        let height = top.and_then(|s| last_reflection(trace, s)).and_then(|r| {
            let rc = &trace.collisions[r];
            // Side the pair arrived from.
            let side = rc
                .inputs
                .iter()
                .find(|&&s| is_bounce(trace.name(s)))
                .map(|&s| trace.speed(s).is_positive())?;
            // The bottom signal runs ahead of the top one.
            at_border[&rc.x]
                .iter()
                .map(|&ci| &trace.collisions[ci])
                .rfind(|b| {
                    b.t < rc.t
                        && b.inputs.iter().any(|&s| {
                            trace.name(s).ends_with("Bot") && trace.speed(s).is_positive() == side
                        })
                })
                .map(|b| &rc.t - &b.t)
        });
        let parent = sn.parent.map(|p| &scan[p]);
        out.push(BandGeometry {
            node: sn.node.clone(),
            made_by: parent.map(|p| p.node.kind),
            made_by_parent: parent.and_then(|p| p.parent).map(|g| scan[g].node.kind),
            width: sn.width.clone(),
            height,
            parent_width: parent.map(|p| p.width.clone()),
        });
    }
    Ok(out)
}

/// Transparent crossings that swallowed a sub-collision having a rule.
pub fn audit_transparent(m: &Machine, trace: &Trace) -> Vec<String> {
    let arity = m.rules.iter().map(|r| r.inputs.len()).max().unwrap_or(0);
    let mut found = BTreeSet::new();
    for c in &trace.collisions {
        if c.resolution != Resolution::Transparent || c.inputs.len() < 3 {
            continue;
        }
        let ids: Vec<usize> = c.inputs.iter().map(|&s| trace.segments[s].signal).collect();
        let mut hit = false;
        let mut pick = Vec::new();
        subsets(&ids, 0, arity.min(ids.len() - 1), &mut pick, &mut |key| {
            let mut key = key.to_vec();
            key.sort_unstable();
            hit |= m.rule_for_key(&key).is_some();
        });
        if hit {
            let names: Vec<&str> = c.inputs.iter().map(|&s| trace.name(s)).collect();
            found.insert(format!("t={} x={} {{{}}}", c.t, c.x, names.join(", ")));
        }
    }
    found.into_iter().collect()
}

/// Calls `f` on every subset of `ids[from..]` extended from `pick`, with two
/// to `max` members.
fn subsets(ids: &[usize], from: usize, max: usize, pick: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
    if pick.len() >= 2 {
        f(pick);
    }
    if pick.len() == max {
        return;
    }
    for i in from..ids.len() {
        pick.push(ids[i]);
        subsets(ids, i + 1, max, pick, f);
        pick.pop();
    }
}

/// Right child of the virtual parent: parameters expected at the root.
pub fn expected_root(pre: &Params) -> Params {
    split_update(pre).1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machine::validate_machine;

    #[test]
    fn machine_is_well_formed() {
        let m = build_sm_machine();
        let r = validate_machine(&m);
        assert!(r.is_empty(), "{r}");
    }

    #[test]
    fn names() {
        assert_eq!(channel(Band::Delay, ONE | CH_L), "oneL");
        assert_eq!(channel(Band::Right, TWO), "srTwo");
        assert_eq!(channel(Band::Left, LR), "slLR");
        assert_eq!(channel_sets().len(), 11);
    }
}
