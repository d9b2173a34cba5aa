use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use gvass::coverability::{theta2_direction, CoverError, Direction, Theta2Outcome};
use gvass::decomposition::{decide, Answer, DecideConfig, LeafReason, Outcome, Verdict};
use gvass::diophantine::{theta1_with_fallback, SolverBudget, Theta1Result};
use gvass::model::{validate, GVass, Violation};
use gvass::oracle::{bfs_reach, find_witness, generate, GenParams, OracleVerdict, UnknownReason, Witness};
use gvass::text::{parse, print, Instance};

const USAGE: u8 = 3;

#[derive(Parser)]
#[command(name = "gvass", version, about = "Reachability for vector addition systems with states")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decide reachability: REACHABLE (exit 0), UNREACHABLE (1), RESOURCE-EXHAUSTED (2).
    Decide {
        file: PathBuf,
        /// Write the decomposition tree as JSON.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, default_value_t = 1_000_000)]
        km_budget: usize,
        #[arg(long, default_value_t = 1_000_000)]
        node_budget: usize,
        /// Hilbert-basis vectors kept before falling back to linear programming.
        #[arg(long, default_value_t = 20_000)]
        solver_budget: usize,
        /// Wall-clock limit in seconds.
        #[arg(long)]
        time_limit: Option<f64>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// On REACHABLE, search for a run with this many nodes per box.
        #[arg(long)]
        witness_budget: Option<usize>,
    },
    /// Pumping check of one component by coverability: HOLDS (exit 0) or FAILS with a bound (1).
    Cover {
        file: PathBuf,
        /// Component index, counting from 0.
        #[arg(long)]
        component: usize,
        #[arg(long, value_enum)]
        direction: DirectionArg,
        #[arg(long, default_value_t = 1_000_000)]
        km_budget: usize,
    },
    /// Solution-set check of the characteristic system: HOLDS (exit 0), INFEASIBLE or ZERO-COORDINATE (1).
    Theta1 {
        file: PathBuf,
        #[arg(long, default_value_t = 20_000)]
        solver_budget: usize,
    },
    /// Bounded breadth-first search: YES (exit 0), NO (1), UNKNOWN (2).
    Oracle {
        file: PathBuf,
        #[arg(long, default_value_t = 50)]
        counter_bound: u64,
        #[arg(long, default_value_t = 1_000_000)]
        node_budget: usize,
    },
    /// Print a random instance.
    Gen {
        #[arg(long)]
        seed: u64,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        dim: u64,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        states: u64,
        #[arg(long)]
        arcs: usize,
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
        components: u64,
        /// Probability that a boundary coordinate is unconstrained.
        #[arg(long, default_value_t = 0.0, value_parser = probability)]
        uncons: f64,
        /// Probability that a coordinate is rigid in a component.
        #[arg(long, default_value_t = 0.0, value_parser = probability)]
        rigid: f64,
        #[arg(long, default_value_t = 2)]
        effect_bound: u64,
        #[arg(long, default_value_t = 3)]
        value_bound: u64,
    },
    /// Check structural invariants: OK (exit 0) or the violations (1).
    Validate { file: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum DirectionArg {
    Fwd,
    Bwd,
}

fn probability(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(p) if (0.0..=1.0).contains(&p) => Ok(p),
        _ => Err(format!("`{s}` is not a probability in [0, 1]")),
    }
}

/// Failure to run a command; printed on standard error.
struct Failure(String);

impl<E: Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

fn read(path: &Path) -> Result<Instance, Failure> {
    let src = std::fs::read_to_string(path).map_err(|e| Failure(format!("{}: {e}", path.display())))?;
    parse(&src).map_err(|e| Failure(format!("{}:{e}", path.display())))
}

fn describe(path: &Path, inst: &Instance, v: &Violation) -> String {
    match v.component {
        Some(i) => format!("{}:{}: {v}", path.display(), inst.locations[i]),
        None => format!("{}: {v}", path.display()),
    }
}

fn show(g: &GVass, w: &Witness) -> String {
    if w.is_empty() {
        "(empty run)".into()
    } else {
        w.describe(g)
    }
}

/// Reads and validates an instance.
fn load(path: &Path) -> Result<GVass, Failure> {
    let inst = read(path)?;
    let report = validate(&inst.gvass);
    if report.is_valid() {
        Ok(inst.gvass)
    } else {
        Err(Failure(report.violations.iter().map(|v| describe(path, &inst, v)).collect::<Vec<_>>().join("\n")))
    }
}

fn run(command: Command) -> Result<u8, Failure> {
    match command {
        Command::Decide { file, trace, km_budget, node_budget, solver_budget, time_limit, jobs, witness_budget } => {
            let g = load(&file)?;
            let time_limit = match time_limit {
                Some(s) => Some(Duration::try_from_secs_f64(s).map_err(|_| Failure(format!("invalid time limit {s}")))?),
                None => None,
            };
            let config = DecideConfig { km_budget, node_budget, solver_budget, time_limit, jobs: jobs.max(1) };
            let decision = decide(&g, &config)?;
            if let Some(path) = trace {
                let json = serde_json::to_string_pretty(&decision)?;
                std::fs::write(&path, json + "\n").map_err(|e| Failure(format!("{}: {e}", path.display())))?;
            }
            let s = &decision.stats;
            eprintln!("{} nodes, depth {}, at most {} components and {} states", s.nodes, s.max_depth, s.max_components, s.max_states);
            match decision.answer {
                Answer::Reachable => {
                    println!("REACHABLE");
                    if let Some(budget) = witness_budget {
                        match find_witness(&g, budget) {
                            Some(w) => println!("witness: {}", show(&g, &w)),
                            None => eprintln!("no witness found within {budget} nodes per box"),
                        }
                    }
                    Ok(0)
                }
                Answer::Unreachable => {
                    println!("UNREACHABLE");
                    Ok(1)
                }
                Answer::ResourceExhausted => {
                    let mut limit = None;
                    decision.root.walk(0, &mut |n, _| {
                        if let Outcome::Leaf { verdict: Verdict::Exhausted, reason: LeafReason::Exhausted { limit: l } } = &n.outcome {
                            limit.get_or_insert(*l);
                        }
                    });
                    if let Some(l) = limit {
                        eprintln!("stopped by {}", serde_json::to_value(l)?.as_str().unwrap_or("a limit"));
                    }
                    println!("RESOURCE-EXHAUSTED");
                    Ok(2)
                }
            }
        }
        Command::Cover { file, component, direction, km_budget } => {
            let g = load(&file)?;
            let comp = g
                .components
                .get(component)
                .ok_or_else(|| Failure(format!("component {component} out of range; the instance has {}", g.components.len())))?;
            let direction = match direction {
                DirectionArg::Fwd => Direction::Forward,
                DirectionArg::Bwd => Direction::Backward,
            };
            match theta2_direction(comp, direction, km_budget) {
                Ok(Theta2Outcome::Holds(w)) => {
                    let marking: Vec<String> = w.marking.iter().map(ToString::to_string).collect();
                    println!("HOLDS");
                    println!("covering marking: [{}]", marking.join(", "));
                    Ok(0)
                }
                Ok(Theta2Outcome::Fails { bound }) => {
                    println!("FAILS bound {bound}");
                    Ok(1)
                }
                Err(CoverError::Budget { budget, .. }) => {
                    eprintln!("coverability tree exceeded {budget} nodes");
                    println!("RESOURCE-EXHAUSTED");
                    Ok(2)
                }
                Err(e) => Err(e.into()),
            }
        }
        Command::Theta1 { file, solver_budget } => {
            let g = load(&file)?;
            let budget = SolverBudget { max_vectors: solver_budget, ..SolverBudget::UNLIMITED };
            let analysis = theta1_with_fallback(&g, &budget)?;
            if analysis.hybrid.is_none() {
                eprintln!("solution set too large; answered from the linear relaxation");
            }
            match analysis.result {
                Theta1Result::Holds => {
                    println!("HOLDS");
                    Ok(0)
                }
                Theta1Result::Infeasible => {
                    println!("INFEASIBLE");
                    Ok(1)
                }
                Theta1Result::ZeroCoordinate { column, bound } => {
                    println!("ZERO-COORDINATE {column} bound {bound}");
                    Ok(1)
                }
            }
        }
        Command::Oracle { file, counter_bound, node_budget } => {
            let g = load(&file)?;
            match bfs_reach(&g, counter_bound, node_budget) {
                OracleVerdict::Yes(w) => {
                    let start: Vec<String> = w.start.iter().map(ToString::to_string).collect();
                    println!("YES");
                    println!("start: [{}]", start.join(", "));
                    println!("witness: {}", show(&g, &w));
                    Ok(0)
                }
                OracleVerdict::No => {
                    println!("NO");
                    Ok(1)
                }
                OracleVerdict::Unknown(reason) => {
                    eprintln!(
                        "{}",
                        match reason {
                            UnknownReason::Clipped => "a counter left the box",
                            UnknownReason::NodeBudget => "node budget exhausted",
                        }
                    );
                    println!("UNKNOWN");
                    Ok(2)
                }
            }
        }
        Command::Gen { seed, dim, states, arcs, components, uncons, rigid, effect_bound, value_bound } => {
            let params = GenParams {
                dim: dim as usize,
                states: states as usize,
                arcs,
                effect_bound: effect_bound as i64,
                value_bound,
                components: components as usize,
                unconstrained_prob: uncons,
                rigid_prob: rigid,
                seed,
            };
            print!("{}", print(&generate(&params)));
            Ok(0)
        }
        Command::Validate { file } => {
            let inst = read(&file)?;
            let report = validate(&inst.gvass);
            if report.is_valid() {
                println!("OK");
                return Ok(0);
            }
            for v in &report.violations {
                println!("{}", describe(&file, &inst, v));
            }
            Ok(1)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { USAGE } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(Failure(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(USAGE)
        }
    }
}
