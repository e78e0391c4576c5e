use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

const ZIGZAG_MACHINE: &str = "\
[speeds]
zag = -1
zzRI = -1/2
zzLE = 1/2
zig = 1
[rules]
{ zig, zzRI } -> { zag, zzRI }
{ zzLE, zag } -> { zzLE, zig }
";

const ZIGZAG_CONFIG: &str = "at 0 zzLE\nat 1/4 zig\nat 1 zzRI\n";

fn sfss(args: &[&str], stdin: Option<&str>) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_sfss"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .expect("spawn sfss");
    let input = stdin.unwrap_or("").to_string();
    let mut pipe = child.stdin.take().unwrap();
    let feeder = std::thread::spawn(move || {
        let _ = pipe.write_all(input.as_bytes());
    });
    let out = child.wait_with_output().expect("wait for sfss");
    feeder.join().unwrap();
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_a_trace() {
    let dir = tempfile::tempdir().unwrap();
    let machine = dir.path().join("zigzag.sm");
    let config = dir.path().join("zigzag.cfg");
    let trace = dir.path().join("t.trace");
    fs::write(&machine, ZIGZAG_MACHINE).unwrap();
    fs::write(&config, ZIGZAG_CONFIG).unwrap();
    let out = sfss(
        &["run", path(&machine), path(&config), "--max-collisions", "200", "--out", path(&trace)],
        None,
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&trace).unwrap();
    assert!(text.contains("\"collisions\""));

    let svg = dir.path().join("t.svg");
    let out = sfss(&["render", path(&trace), "--svg", path(&svg)], None);
    assert_eq!(code(&out), 0);
    assert!(fs::read_to_string(&svg).unwrap().contains("<polyline"));
}

#[test]
fn validate_reports_problems() {
    let ok = sfss(&["validate", "-"], Some(ZIGZAG_MACHINE));
    assert_eq!(code(&ok), 0);
    let dup = format!("{ZIGZAG_MACHINE}{{ zzRI, zig }} -> {{ zig }}\n");
    assert_eq!(code(&sfss(&["validate", "-"], Some(&dup))), 1);
    assert_eq!(code(&sfss(&["validate", "-"], Some("[speeds]\nbroken line\n"))), 2);
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(code(&sfss(&["run"], None)), 2);
    assert_eq!(code(&sfss(&["reachable", "--u", "x", "--v", "1"], None)), 2);
    assert_eq!(code(&sfss(&["frobnicate"], None)), 2);
}

#[test]
fn generated_bundle_runs_long() {
    let gen = sfss(&["sfss-gen", "--model", "asm", "--u", "150/113", "--v", "200/101"], None);
    assert_eq!(code(&gen), 0);
    let bundle = String::from_utf8(gen.stdout).unwrap();
    // The accumulation guard keeps exact denominators small enough to be quick.
    let out = sfss(&["run", "-", "--max-collisions", "74000", "--freeze", "1/65536"], Some(&bundle));
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let trace = String::from_utf8(out.stdout).unwrap();
    assert!(trace.contains("\"MaxCollisions\"") || trace.contains("74000"), "{}", &trace[..200.min(trace.len())]);
}

#[test]
fn verify_accepts_correct_runs_and_rejects_mutants() {
    let dir = tempfile::tempdir().unwrap();
    let gen = sfss(&["gen", "--model", "asm", "--u", "1", "--v", "1"], None);
    let bundle = String::from_utf8(gen.stdout).unwrap();
    let good = dir.path().join("good.trace");
    let out = sfss(&["run", "-", "--max-collisions", "3000", "--out", path(&good)], Some(&bundle));
    assert_eq!(code(&out), 0);
    let out = sfss(&["verify", path(&good), "--u0", "1", "--v0", "1", "--depth", "6"], None);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    assert!(bundle.contains("aBounceL = -3"));
    let mutant = bundle.replace("aBounceL = -3", "aBounceL = -2");
    let bad = dir.path().join("bad.trace");
    let out = sfss(&["run", "-", "--max-collisions", "3000", "--out", path(&bad)], Some(&mutant));
    assert_eq!(code(&out), 0);
    let out = sfss(&["verify", path(&bad), "--u0", "1", "--v0", "1", "--depth", "6"], None);
    assert_eq!(code(&out), 1);
}

#[test]
fn seeded_checks_pass() {
    let out = sfss(&["verify", "--seeds", "5", "--depth", "6"], None);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.ends_with(" ok")).count(), 5, "{text}");
}

#[test]
fn reachable_lists_the_closure() {
    let out = sfss(&["reachable", "--u", "3", "--v", "3"], None);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("count 3"), "{text}");
}

#[test]
fn plain_construction_verifies() {
    let dir = tempfile::tempdir().unwrap();
    let gen = sfss(&["gen", "--model", "sm", "--u", "1", "--v", "1"], None);
    assert_eq!(code(&gen), 0);
    let trace = dir.path().join("sm.trace");
    let bundle = String::from_utf8(gen.stdout).unwrap();
    let out = sfss(
        &["run", "-", "--max-collisions", "20000", "--freeze", "1/65536", "--out", path(&trace)],
        Some(&bundle),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let out = sfss(&["verify", path(&trace), "--u0", "1", "--v0", "1", "--depth", "3", "--model", "sm"], None);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}
