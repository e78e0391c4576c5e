use proptest::prelude::*;

use sfss::analysis::{
    check_convergence, check_lemma1, check_lemma2, check_reachable, compare_asm_sm, reachable_params,
    signed_dyadic_sums, successors, TreeNode,
};
use sfss::asm::{match_pattern, run_augmented, Matched};
use sfss::engine::{run, HaltPolicy, HaltReason};
use sfss::exactnum::{pow2_neg, q, qi, Rational};
use sfss::machine::{validate_machine, Mode};
use sfss::parser::{parse_bundle, parse_machine, InitialConfiguration, Placed};
use sfss::sfss_asm::{
    build_asm_machine, choose_step, delay_update, extract_asm_nodes, initial_asm_config, reference_tree,
    split_update, Params, Step, TargetSegment, A_BOUNCE_L, A_BOUNCE_R, DELAY, SPLIT_L, SPLIT_R,
};

fn p(u: Rational, v: Rational) -> Params {
    Params::new(u, v)
}

fn seg(u: Rational, v: Rational) -> TargetSegment {
    TargetSegment::new(u, v).unwrap()
}

fn guarded(n: usize) -> HaltPolicy {
    HaltPolicy {
        max_collisions: n,
        freeze_below: Some(pow2_neg(10)),
        ..HaltPolicy::default()
    }
}

#[test]
fn step_examples() {
    assert_eq!(choose_step(&p(qi(2), qi(2))), Step::Delay);
    assert_eq!(choose_step(&p(q(3, 2), qi(2))), Step::Split);
    assert_eq!(delay_update(&p(qi(3), qi(4))).unwrap(), p(qi(2), qi(3)));
    assert!(delay_update(&p(qi(1), qi(3))).is_err());
    assert_eq!(
        split_update(&p(q(3, 2), qi(2))),
        (p(qi(2), q(5, 2)), p(q(5, 2), qi(3)))
    );
    assert!(TargetSegment::new(q(1, 2), qi(2)).is_err());
}

#[test]
fn delay_chain_from_three() {
    let tree = reference_tree(&seg(qi(3), qi(3)), 0);
    let spine: Vec<(Rational, Params)> = tree.iter().map(|n| (n.t.clone(), n.params.clone())).collect();
    assert_eq!(
        spine,
        [(qi(0), p(qi(3), qi(3))), (qi(1), p(qi(2), qi(2))), (qi(2), p(qi(1), qi(1)))]
    );
}

#[test]
fn binary_growth_for_unit_target() {
    for d in 0..6u32 {
        assert_eq!(reference_tree(&seg(qi(1), qi(1)), d).len(), (1 << (d + 1)) - 1);
    }
    assert_eq!(signed_dyadic_sums(1), [q(-1, 2), q(1, 2)]);
}

#[test]
fn asm_machine_is_valid() {
    let m = build_asm_machine();
    assert!(validate_machine(&m).is_empty(), "{}", validate_machine(&m));
    assert_eq!(m.patterns.len(), 6);
}

#[test]
fn split_pattern_outputs() {
    let m = build_asm_machine();
    let pay = (q(3, 2), qi(2));
    let ins = [(m.id(DELAY).unwrap(), Some(&pay)), (m.id(A_BOUNCE_L).unwrap(), None)];
    let Matched::Pattern { outputs, .. } = match_pattern(&m, &ins).unwrap() else {
        panic!("no pattern matched");
    };
    assert_eq!(outputs.len(), 5);
    let find = |name: &str| outputs.iter().find(|(id, _)| *id == m.id(name).unwrap()).unwrap().1.clone();
    assert_eq!(find(SPLIT_L), Some((qi(2), q(5, 2))));
    assert_eq!(find(SPLIT_R), Some((q(5, 2), qi(3))));
}

#[test]
fn first_delay_lands_one_unit_up() {
    let s = seg(qi(3), qi(3));
    let m = build_asm_machine();
    let tr = run_augmented(&m, &initial_asm_config(&s).unwrap(), &guarded(200)).unwrap();
    let nodes = extract_asm_nodes(&tr, &s).unwrap();
    assert_eq!(nodes[1], TreeNode::new(qi(0), qi(1), 0, p(qi(2), qi(2))));
}

#[test]
fn unit_target_matches_recursion_deeply() {
    let s = seg(qi(1), qi(1));
    let m = build_asm_machine();
    let tr = run_augmented(&m, &initial_asm_config(&s).unwrap(), &guarded(20_000)).unwrap();
    let nodes = extract_asm_nodes(&tr, &s).unwrap();
    let rep = compare_asm_sm(&reference_tree(&s, 6), &nodes, 6);
    assert!(rep.ok(), "{rep}");
}

#[test]
fn payload_survives_transparent_crossing() {
    let text = "\
[speeds]
carrier(u,v) = 1
wall = 0
[rules]
[meta]
mode = transparent
[config]
at 0 carrier(5/2,7/2)
at 1 wall
";
    let (m, c) = parse_bundle(text).unwrap();
    let tr = run_augmented(&m, &c, &HaltPolicy::default()).unwrap();
    assert_eq!(tr.collisions.len(), 1);
    let out = tr.collisions[0]
        .outputs
        .iter()
        .find(|&&s| tr.name(s) == "carrier")
        .copied()
        .unwrap();
    assert_eq!(tr.segments[out].payload, Some((q(5, 2), q(7, 2))));
}

#[test]
fn reachable_examples() {
    let r = reachable_params(&p(qi(1), qi(1)), 100).unwrap();
    assert_eq!(r.params.into_iter().collect::<Vec<_>>(), [p(qi(1), qi(1))]);
    let r = reachable_params(&p(qi(3), qi(3)), 100).unwrap();
    assert!(r.params.contains(&p(qi(2), qi(2))));
    assert!(r.params.contains(&p(qi(1), qi(1))));
    assert!(reachable_params(&p(q(150, 113), q(200, 101)), 3).is_err());
}

#[test]
fn fabricated_node_is_flagged() {
    let s = seg(q(3, 2), qi(2));
    let mut tree = reference_tree(&s, 3);
    assert!(check_lemma1(&tree, &s).ok());
    let last = tree.len() - 1;
    tree[last].t += q(1, 64);
    assert!(!check_lemma1(&tree, &s).ok());
    let good = reference_tree(&s, 3);
    assert!(!compare_asm_sm(&good, &tree, 3).ok());
}

fn rational_in_range() -> impl Strategy<Value = Rational> {
    (1i64..=12).prop_flat_map(|d| (d..=10 * d).prop_map(move |n| q(n, d)))
}

/// Machine whose meta-signals all have singleton domains.
const PLAIN: &str = "\
[speeds]
l = -1
z = 0
r = 1
h = 1/2
[rules]
{ r, l } -> { h, z }
{ z, l } -> { l }
{ h, z } -> { }
[meta]
mode = transparent
";

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn guards_select_exactly_one_pattern(u in rational_in_range(), v in rational_in_range(), which in 0usize..3) {
        let m = build_asm_machine();
        let pay = (u, v);
        let (a, b) = [(DELAY, A_BOUNCE_L), (SPLIT_L, A_BOUNCE_R), (SPLIT_R, A_BOUNCE_L)][which];
        let ins = [(m.id(a).unwrap(), Some(&pay)), (m.id(b).unwrap(), None)];
        let matched = match_pattern(&m, &ins).unwrap();
        prop_assert!(matches!(matched, Matched::Pattern { .. }), "{:?}", matched);
    }

    #[test]
    fn recursion_invariants(u in rational_in_range(), v in rational_in_range()) {
        let s = seg(u, v);
        let tree = reference_tree(&s, 6);
        prop_assert!(check_lemma1(&tree, &s).ok());
        prop_assert!(check_lemma2(&tree, &s).ok());
        prop_assert!(check_convergence(&tree, &s, 6).ok());
    }

    #[test]
    fn reachable_sets_are_closed(u in rational_in_range(), v in rational_in_range()) {
        let p0 = p(u, v);
        let r = reachable_params(&p0, 100_000).unwrap();
        prop_assert!(check_reachable(&r, &p0).ok());
        for x in &r.params {
            for c in successors(x) {
                prop_assert!(r.params.contains(&c));
            }
        }
    }

    #[test]
    fn augmented_run_matches_recursion(u in rational_in_range(), v in rational_in_range()) {
        let s = seg(u, v);
        let m = build_asm_machine();
        let tr = run_augmented(&m, &initial_asm_config(&s).unwrap(), &guarded(40_000)).unwrap();
        prop_assert!(tr.halt.reason != HaltReason::MissingRule);
        let nodes = extract_asm_nodes(&tr, &s).unwrap();
        let rep = compare_asm_sm(&reference_tree(&s, 3), &nodes, 3);
        prop_assert!(rep.ok(), "{}", rep);
    }

    #[test]
    fn singleton_machines_run_identically(xs in prop::collection::btree_map(-20i64..=20, 0usize..4, 1..8)) {
        let m = parse_machine(PLAIN).unwrap();
        let names = ["l", "z", "r", "h"];
        let c = InitialConfiguration {
            signals: xs.into_iter().map(|(x, k)| Placed::new(q(x, 2), names[k])).collect(),
        };
        let policy = HaltPolicy { max_collisions: 200, max_time: Some(qi(30)), ..HaltPolicy::default() };
        prop_assert_eq!(run_augmented(&m, &c, &policy).unwrap(), run(&m, &c, &policy).unwrap());
        let mut strict = m.clone();
        strict.mode = Mode::Strict;
        prop_assert_eq!(run_augmented(&strict, &c, &policy).unwrap(), run(&strict, &c, &policy).unwrap());
    }
}
