use proptest::prelude::*;

use sfss::analysis::{compare_asm_sm, TreeNode};
use sfss::engine::{run, HaltPolicy, Trace};
use sfss::exactnum::{pow2_neg, q, qi, Rational};
use sfss::machine::{lookup_rule, validate_machine, Lookup, Machine, Mode};
use sfss::sfss_asm::{reference_tree, split_update, Params, Step, TargetSegment};
use sfss::sfss_sm::{
    audit_transparent, band_geometry, build_sm_machine, choose_unit, default_width, encode_macro_signal,
    extract_tree_nodes, initial_sm_config, pre_image, sm_layout, Band, MacroSignalSpec,
};

fn seg(u: Rational, v: Rational) -> TargetSegment {
    TargetSegment::new(u, v).unwrap()
}

fn policy() -> HaltPolicy {
    HaltPolicy {
        max_collisions: 30_000,
        freeze_below: Some(pow2_neg(16)),
        ..HaltPolicy::default()
    }
}

fn run_sm(m: &Machine, s: &TargetSegment) -> Trace {
    run(m, &initial_sm_config(s, &default_width()).unwrap(), &policy()).unwrap()
}

/// Extracted nodes, shifted to a root at the origin, against the recursion
/// for the root parameters.
fn compare(tr: &Trace, s: &TargetSegment, depth: u32) -> Result<usize, String> {
    let lay = sm_layout(s, &default_width()).unwrap();
    let mut nodes: Vec<TreeNode> = extract_tree_nodes(tr).map_err(|e| e.to_string())?;
    for n in &mut nodes {
        n.t = &n.t - &lay.root.1;
    }
    let root = seg(lay.root_params.u.clone(), lay.root_params.v.clone());
    let rep = compare_asm_sm(&reference_tree(&root, depth), &nodes, depth);
    if rep.ok() {
        Ok(rep.checked)
    } else {
        Err(rep.to_string())
    }
}

#[test]
fn machine_is_transparent_and_valid() {
    let m = build_sm_machine();
    assert_eq!(m.mode, Mode::Transparent);
    assert!(validate_machine(&m).is_empty());
}

#[test]
fn listed_rules() {
    let m = build_sm_machine();
    let outputs = |ins: &[&str]| match lookup_rule(&m, ins) {
        Lookup::Rule(_, r) => {
            let mut o = r.outputs.clone();
            o.sort();
            o
        }
        other => panic!("{ins:?}: {other:?}"),
    };
    assert_eq!(outputs(&["test", "two"]), ["testDEL", "two"]);
    assert_eq!(outputs(&["boundDEL", "bounceLBot"]), ["bounceDelayL", "bound"]);
}

#[test]
fn speed_constants() {
    let m = build_sm_machine();
    let speed = |n: &str| m.signal(n).unwrap_or_else(|| panic!("{n}")).speed.clone();
    assert_eq!(speed("bounceRTop"), qi(3));
    assert_eq!(speed("bounceLBot"), qi(-3));
    assert_eq!(speed("bounceRSlowTop"), q(3, 2));
    assert_eq!(speed("tree"), qi(0));
    assert_eq!(speed("srTree"), qi(1));
    assert_eq!(speed("slTree"), qi(-1));
}

#[test]
fn encoding_example() {
    let spec = MacroSignalSpec {
        kind: Band::Delay,
        params: Params::new(q(14, 5), q(12, 5)),
        anchor: qi(0),
        width: q(19, 5),
        unit: qi(1),
        test: None,
    };
    let placed: Vec<(String, Rational)> = encode_macro_signal(&spec)
        .unwrap()
        .into_iter()
        .map(|p| (p.signal, p.x))
        .collect();
    let want = [("tree", qi(0)), ("one", qi(1)), ("two", qi(2)), ("r", q(12, 5)), ("l", q(14, 5)), ("bound", q(19, 5))];
    assert_eq!(placed, want.map(|(n, x)| (n.to_string(), x)));
}

#[test]
fn superposition_and_mirror() {
    let spec = MacroSignalSpec {
        kind: Band::Left,
        params: Params::new(qi(1), q(3, 2)),
        anchor: qi(5),
        width: qi(3),
        unit: qi(1),
        test: Some(q(1, 2)),
    };
    let placed = encode_macro_signal(&spec).unwrap();
    let at = |n: &str| placed.iter().find(|p| p.signal == n).map(|p| p.x.clone());
    assert_eq!(at("slTree"), Some(qi(5)));
    assert_eq!(at("slOneL"), Some(qi(4)));
    assert_eq!(at("slR"), Some(q(7, 2)));
    assert_eq!(at("slBound"), Some(qi(2)));
    assert_eq!(at("slTest"), Some(q(9, 2)));
    assert_eq!(at("slL"), None);
    let mut bad = spec.clone();
    bad.params = Params::new(qi(3), qi(1));
    assert!(encode_macro_signal(&bad).is_err());
}

#[test]
fn unit_choice() {
    assert_eq!(choose_unit(&qi(3), &qi(1)), q(1, 4));
    assert_eq!(choose_unit(&qi(1), &q(1, 16)), q(1, 32));
}

#[test]
fn pre_images() {
    let (k, pre) = pre_image(&seg(q(150, 113), q(200, 101))).unwrap();
    assert_eq!(k, 1);
    assert_eq!(split_update(&pre).1, Params::new(q(263, 113), q(301, 101)));
    // b = (1 + 1)/2 = 1 and a = 1 + 1 - 1 = 1 are already valid.
    assert_eq!(pre_image(&seg(qi(1), qi(1))).unwrap(), (0, Params::new(qi(1), qi(1))));
}

#[test]
fn initial_configuration_shape() {
    let w = default_width();
    let c = initial_sm_config(&seg(q(3, 2), qi(2)), &w).unwrap();
    let at = |n: &str| c.signals.iter().find(|p| p.signal == n).map(|p| p.x.clone()).unwrap();
    assert_eq!(at("border"), qi(-1));
    assert_eq!(c.signals.last().unwrap().signal, "border");
    assert_eq!(at("bounceRBot") - at("bounceRTop"), &w * qi(3));
    assert_eq!(at("srBound") - at("srTree"), w);
}

#[test]
fn plain_machine_follows_recursion() {
    let m = build_sm_machine();
    for s in [seg(qi(1), qi(1)), seg(q(3, 2), qi(2)), seg(qi(3), qi(4))] {
        let tr = run_sm(&m, &s);
        if let Err(e) = compare(&tr, &s, 4) {
            panic!("{}: {e}", s.params());
        }
        let audit = audit_transparent(&m, &tr);
        assert!(audit.is_empty(), "{}: {:?}", s.params(), &audit[..audit.len().min(3)]);
    }
}

#[test]
fn band_shapes() {
    let m = build_sm_machine();
    let mut seen = [0usize; 4];
    for s in [seg(q(3, 2), qi(2)), seg(qi(3), qi(4))] {
        let tr = run_sm(&m, &s);
        for g in band_geometry(&tr).unwrap().iter().filter(|g| g.node.d <= 3) {
            if let (Some(h), Some(by)) = (&g.height, g.made_by) {
                let want = if by == Step::Split { qi(1) } else { q(4, 3) };
                assert_eq!(h / &g.width, want, "{}", g.node);
                seen[0] += 1;
            }
            match (g.made_by, g.made_by_parent, &g.parent_width) {
                (Some(Step::Split), Some(Step::Split), Some(pw)) => {
                    assert_eq!(&g.width / pw, q(1, 2), "{}", g.node);
                    seen[1] += 1;
                }
                (Some(Step::Delay), Some(Step::Delay), Some(pw)) => {
                    assert_eq!(&g.width, pw, "{}", g.node);
                    seen[2] += 1;
                }
                _ => seen[3] += 1,
            }
        }
    }
    assert!(seen[..3].iter().all(|&n| n > 0), "{seen:?}");
}

#[test]
fn corrupted_speed_is_detected() {
    let s = seg(q(3, 2), qi(2));
    let mut m = build_sm_machine();
    assert!(compare(&run_sm(&m, &s), &s, 3).is_ok());
    let i = m.signals.iter().position(|g| g.name == "srComputeMove").unwrap();
    m.signals[i].speed = q(7, 4);
    let tr = run_sm(&m, &s);
    assert!(compare(&tr, &s, 3).is_err());
}

fn small_rational() -> impl Strategy<Value = Rational> {
    (1i64..=6).prop_flat_map(|d| (d..=5 * d).prop_map(move |n| q(n, d)))
}

proptest! {
    #[test]
    fn pre_image_inverts_right_branch(u in small_rational(), v in small_rational()) {
        let s = seg(u.clone(), v.clone());
        let (k, pre) = pre_image(&s).unwrap();
        prop_assert!(pre.is_valid());
        // Smaller shifts have no valid pre-image.
        for j in 0..k {
            let j = qi(i64::from(j));
            let b = (&v + &j + qi(1)) / qi(2);
            let a = &u + &j + qi(1) - &b;
            prop_assert!(!Params::new(a, b).is_valid());
        }
        let k = qi(i64::from(k));
        prop_assert_eq!(split_update(&pre).1, Params::new(&u + &k, &v + &k));
    }
}
