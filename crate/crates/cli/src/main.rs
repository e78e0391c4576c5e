use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use rand::{rngs::StdRng, Rng, SeedableRng};
use rayon::prelude::*;

use sfss::analysis::{
    check_convergence, check_lemma1, check_lemma2, check_reachable, compare_asm_sm,
    reachable_params, up_to_depth, TreeNode,
};
use sfss::asm::run_augmented;
use sfss::engine::{run, HaltPolicy, HaltReason, Trace};
use sfss::exactnum::{fmt_rational, parse_rational, q, Rational};
use sfss::machine::{validate_machine, Mode};
use sfss::parser::{parse_bundle, parse_configuration, parse_machine, serialize_bundle, trace_from_json, trace_to_json};
use sfss::render::{render_svg, RenderStyle};
use sfss::sfss_asm::{build_asm_machine, extract_asm_nodes, initial_asm_config, reference_tree, TargetSegment};
use sfss::sfss_sm::{build_sm_machine, default_width, extract_tree_nodes, initial_sm_config, sm_layout};

/// Exact simulator for signal machines and slanted firing squad constructions.
#[derive(Parser, Debug)]
#[command(name = "sfss", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a machine file for well-formedness.
    Validate {
        /// Machine or bundle file, `-` for stdin.
        machine: String,
    },
    /// Simulate a machine and configuration, writing the trace as JSON.
    Run(RunArgs),
    /// Draw a trace as an SVG space-time diagram.
    Render {
        /// Trace file, `-` for stdin.
        trace: String,
        /// Machine whose `[meta]` section supplies colours.
        #[arg(long)]
        machine: Option<PathBuf>,
        #[arg(long)]
        svg: Option<PathBuf>,
        /// Mark collision points.
        #[arg(long)]
        markers: bool,
    },
    /// Check a run against the reference recursion, or the lemmas on random seeds.
    Verify(VerifyArgs),
    /// Enumerate the parameters reachable from `(u, v)`.
    Reachable {
        #[arg(long, alias = "u0", value_parser = rational)]
        u: Rational,
        #[arg(long, alias = "v0", value_parser = rational)]
        v: Rational,
        #[arg(long, default_value_t = 100_000)]
        budget: usize,
    },
    /// Emit a machine and configuration solving the slanted problem for one segment.
    #[command(name = "sfss-gen", alias = "gen")]
    Gen {
        #[arg(long, value_enum, default_value_t = Model::Asm)]
        model: Model,
        #[arg(long, alias = "u0", value_parser = rational)]
        u: Rational,
        #[arg(long, alias = "v0", value_parser = rational)]
        v: Rational,
        /// Band width of the finite machine.
        #[arg(long, value_parser = rational)]
        width: Option<Rational>,
        /// Print the expanded rule table instead of the bundle.
        #[arg(long)]
        emit_expanded: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Model {
    Asm,
    Sm,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Bundle file (machine plus `[config]`), or machine file when a
    /// configuration is given separately. `-` reads stdin.
    machine: String,
    config: Option<PathBuf>,
    #[command(flatten)]
    halt: HaltArgs,
    /// Halt at the first collision without a rule instead of crossing.
    #[arg(long)]
    strict: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also draw the trace.
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct HaltArgs {
    #[arg(long, default_value_t = 10_000)]
    max_collisions: usize,
    #[arg(long, value_parser = rational)]
    max_time: Option<Rational>,
    /// Halt once time advances by less than this between events.
    #[arg(long, value_parser = rational)]
    epsilon: Option<Rational>,
    /// Freeze collisions among signals younger than this.
    #[arg(long, value_parser = rational)]
    freeze: Option<Rational>,
}

impl HaltArgs {
    fn policy(&self) -> HaltPolicy {
        HaltPolicy {
            max_collisions: self.max_collisions,
            max_time: self.max_time.clone(),
            min_gap_epsilon: self.epsilon.clone(),
            freeze_below: self.freeze.clone(),
        }
    }
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// Trace to check. Omit with `--seeds`.
    trace: Option<String>,
    #[arg(long, alias = "u", value_parser = rational)]
    u0: Option<Rational>,
    #[arg(long, alias = "v", value_parser = rational)]
    v0: Option<Rational>,
    #[arg(long, default_value_t = 4)]
    depth: u32,
    /// Which construction produced the trace; guessed from its signals when absent.
    #[arg(long, value_enum)]
    model: Option<Model>,
    #[arg(long, value_parser = rational)]
    width: Option<Rational>,
    /// Check the lemmas, the envelope and reachability on this many random targets.
    #[arg(long)]
    seeds: Option<u64>,
}

fn rational(s: &str) -> Result<Rational, String> {
    parse_rational(s).map_err(|e| e.to_string())
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
enum Failure {
    Usage(anyhow::Error),
    Check(String),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Usage(e)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(msg)) => {
            eprintln!("verification failed: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn read_input(path: &str) -> Result<String> {
    if path == "-" {
        let mut s = String::new();
        io::stdin().read_to_string(&mut s).context("reading stdin")?;
        Ok(s)
    } else {
        fs::read_to_string(path).with_context(|| format!("reading {path}"))
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        // A closed pipe (`| head`) is not an error.
        None => match io::stdout().write_all(text.as_bytes()) {
            Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
            r => r.context("writing stdout"),
        },
    }
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Validate { machine } => {
            let text = read_input(&machine)?;
            let m = match parse_machine(&text) {
                Ok(m) => m,
                Err(sfss::parser::ParseError::Invalid(r)) => return Err(Failure::Check(r.to_string())),
                Err(e) => return Err(Failure::Usage(e.into())),
            };
            let report = validate_machine(&m);
            if !report.is_empty() {
                return Err(Failure::Check(report.to_string()));
            }
            println!("ok: {} meta-signals, {} rules", m.signals.len(), m.rule_count());
            Ok(())
        }
        Command::Run(args) => run_cmd(args),
        Command::Render {
            trace,
            machine,
            svg,
            markers,
        } => {
            let t = trace_from_json(&read_input(&trace)?).map_err(anyhow::Error::from)?;
            let mut style = match machine {
                Some(p) => {
                    let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
                    let m = match parse_bundle(&text) {
                        Ok((m, _)) => m,
                        Err(_) => parse_machine(&text).map_err(anyhow::Error::from)?,
                    };
                    RenderStyle::from_machine(&m)
                }
                None => RenderStyle::default(),
            };
            style.markers = markers;
            emit(svg.as_deref(), &render_svg(&t, &style))?;
            Ok(())
        }
        Command::Verify(args) => verify_cmd(args),
        Command::Reachable { u, v, budget } => {
            let seg = TargetSegment::new(u, v).map_err(anyhow::Error::from)?;
            let r = reachable_params(&seg.params(), budget)
                .map_err(|e| Failure::Check(format!("closure not reached after {} parameters", e.explored)))?;
            let rep = check_reachable(&r, &seg.params());
            let mut text = format!("m {}\ncount {}\n", r.m, r.params.len());
            for p in &r.params {
                text.push_str(&format!("{} {}\n", fmt_rational(&p.u), fmt_rational(&p.v)));
            }
            emit(None, &text)?;
            if !rep.ok() {
                return Err(Failure::Check(rep.violations.join("; ")));
            }
            Ok(())
        }
        Command::Gen {
            model,
            u,
            v,
            width,
            emit_expanded,
            out,
        } => {
            let seg = TargetSegment::new(u, v).map_err(anyhow::Error::from)?;
            let (m, c) = match model {
                Model::Asm => (
                    build_asm_machine(),
                    initial_asm_config(&seg).map_err(anyhow::Error::from)?,
                ),
                Model::Sm => {
                    let w = width.unwrap_or_else(default_width);
                    (
                        build_sm_machine(),
                        initial_sm_config(&seg, &w).map_err(anyhow::Error::from)?,
                    )
                }
            };
            let text = if emit_expanded {
                let mut s = String::new();
                for r in &m.rules {
                    s.push_str(&format!("{} -> {}\n", r.inputs.join(", "), r.outputs.join(", ")));
                }
                s
            } else {
                serialize_bundle(&m, &c)
            };
            emit(out.as_deref(), &text)?;
            Ok(())
        }
    }
}

fn run_cmd(args: RunArgs) -> Result<(), Failure> {
    let text = read_input(&args.machine)?;
    let (mut m, c) = match &args.config {
        Some(cfg) => {
            let m = parse_machine(&text).map_err(anyhow::Error::from)?;
            let ctext = fs::read_to_string(cfg).with_context(|| format!("reading {}", cfg.display()))?;
            let c = parse_configuration(&ctext, &m).map_err(anyhow::Error::from)?;
            (m, c)
        }
        None => parse_bundle(&text).map_err(anyhow::Error::from)?,
    };
    if args.strict {
        m.mode = Mode::Strict;
    }
    let policy = args.halt.policy();
    let trace = if m.patterns.is_empty() {
        run(&m, &c, &policy)
    } else {
        run_augmented(&m, &c, &policy)
    }
    .map_err(anyhow::Error::from)?;
    info!(
        "halted: {} after {} collisions",
        trace.halt.reason.name(),
        trace.halt.collisions
    );
    eprintln!(
        "halt {} collisions {} time {}",
        trace.halt.reason.name(),
        trace.halt.collisions,
        fmt_rational(&trace.halt.final_time)
    );
    emit(args.out.as_deref(), &trace_to_json(&trace))?;
    if let Some(svg) = &args.svg {
        emit(Some(svg), &render_svg(&trace, &RenderStyle::from_machine(&m)))?;
    }
    if args.strict && trace.halt.reason == HaltReason::MissingRule {
        return Err(Failure::Check("a collision has no rule".into()));
    }
    Ok(())
}

fn guess_model(t: &Trace) -> Model {
    if t.signals.iter().any(|(n, _)| n == "srTree") {
        Model::Sm
    } else {
        Model::Asm
    }
}

fn verify_cmd(args: VerifyArgs) -> Result<(), Failure> {
    if let Some(n) = args.seeds {
        return verify_seeds(n, args.depth);
    }
    let Some(path) = &args.trace else {
        return Err(Failure::Usage(anyhow::anyhow!("verify needs a trace or --seeds")));
    };
    let (Some(u0), Some(v0)) = (args.u0.clone(), args.v0.clone()) else {
        return Err(Failure::Usage(anyhow::anyhow!("verify needs --u0 and --v0")));
    };
    let seg = TargetSegment::new(u0, v0).map_err(anyhow::Error::from)?;
    let trace = trace_from_json(&read_input(path)?).map_err(anyhow::Error::from)?;
    let model = args.model.unwrap_or_else(|| guess_model(&trace));
    let (target, nodes): (TargetSegment, Vec<TreeNode>) = match model {
        Model::Asm => {
            let nodes = extract_asm_nodes(&trace, &seg).map_err(|e| Failure::Check(e.to_string()))?;
            (seg, nodes)
        }
        Model::Sm => {
            let w = args.width.clone().unwrap_or_else(default_width);
            let lay = sm_layout(&seg, &w).map_err(anyhow::Error::from)?;
            let nodes = extract_tree_nodes(&trace).map_err(|e| Failure::Check(e.to_string()))?;
            let shifted = nodes
                .into_iter()
                .map(|mut n| {
                    n.t = &n.t - &lay.root.1;
                    n
                })
                .collect();
            let target = TargetSegment::new(lay.root_params.u.clone(), lay.root_params.v.clone())
                .map_err(anyhow::Error::from)?;
            (target, shifted)
        }
    };
    let d = args.depth;
    let reference = reference_tree(&target, d);
    let found = up_to_depth(&nodes, d);
    let mut problems = compare_asm_sm(&reference, &found, d).violations;
    problems.extend(check_lemma1(&found, &target).violations);
    problems.extend(check_lemma2(&found, &target).violations);
    println!("nodes {} through depth {d}", found.len());
    if problems.is_empty() {
        println!("ok");
        Ok(())
    } else {
        for p in problems.iter().take(20) {
            println!("{p}");
        }
        Err(Failure::Check(format!("{} problems", problems.len())))
    }
}

/// Random target with `u0, v0` in `[1, 10]` and small denominators.
fn random_target(seed: u64) -> TargetSegment {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut pick = || {
        let d: i64 = rng.gen_range(1..=12);
        let n: i64 = rng.gen_range(d..=10 * d);
        q(n, d)
    };
    let (u, v) = (pick(), pick());
    TargetSegment::new(u, v).expect("values are at least 1")
}

fn verify_seeds(n: u64, depth: u32) -> Result<(), Failure> {
    let results: Vec<(u64, TargetSegment, Vec<String>)> = (0..n)
        .into_par_iter()
        .map(|seed| {
            let seg = random_target(seed);
            let tree = reference_tree(&seg, depth);
            let mut v = check_lemma1(&tree, &seg).violations;
            v.extend(check_lemma2(&tree, &seg).violations);
            v.extend(check_convergence(&tree, &seg, depth).violations);
            match reachable_params(&seg.params(), 1_000_000) {
                Ok(r) => v.extend(check_reachable(&r, &seg.params()).violations),
                Err(e) => v.push(format!("reachable set exceeds {} parameters", e.explored)),
            }
            (seed, seg, v)
        })
        .collect();
    let mut bad = 0;
    for (seed, seg, v) in &results {
        let status = if v.is_empty() { "ok" } else { "FAIL" };
        println!(
            "seed {seed} u0 {} v0 {} {status}",
            fmt_rational(&seg.u0),
            fmt_rational(&seg.v0)
        );
        for line in v.iter().take(5) {
            println!("  {line}");
        }
        bad += usize::from(!v.is_empty());
    }
    if bad > 0 {
        Err(Failure::Check(format!("{bad} of {n} seeds failed")))
    } else {
        Ok(())
    }
}
