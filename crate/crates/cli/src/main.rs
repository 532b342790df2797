mod audit;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use hiring::eval::{simulate, Policy};
use hiring::exact::{greedy_dp, optimal_exact};
use hiring::ptas::{ptas_solve, PtasOptions, PtasPolicy, DEFAULT_BUDGET};
use hiring::qptas::qptas;
use hiring::tree::root_reward;
use hiring::{DecisionTree, Instance64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "hiring", about = "Solvers for the sequential hiring problem")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a random instance as JSON.
    Gen {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        k: usize,
        #[arg(long = "horizon", short = 't')]
        horizon: usize,
        /// `uniform:LO:HI` or `point:X`.
        #[arg(long, default_value = "uniform:0:1")]
        values: Dist,
        #[arg(long, default_value = "uniform:0:1")]
        probs: Dist,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one solver and print the result as JSON.
    Solve {
        instance: PathBuf,
        #[arg(long, value_enum)]
        solver: Solver,
        #[arg(long, default_value_t = 0.5)]
        eps: f64,
        #[arg(long, default_value_t = DEFAULT_BUDGET)]
        budget: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run several solvers and emit one CSV row per (solver, eps).
    Compare {
        instance: PathBuf,
        #[arg(long, value_enum, value_delimiter = ',', default_values_t = [Solver::Exact, Solver::Greedy, Solver::Qptas, Solver::Ptas])]
        solvers: Vec<Solver>,
        #[arg(long, value_delimiter = ',', default_values_t = [0.5])]
        eps: Vec<f64>,
        #[arg(long, default_value_t = 10_000)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_BUDGET)]
        budget: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the structural inequalities end to end and emit a CSV.
    Audit {
        instance: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        eps: f64,
        #[arg(long, default_value_t = 10_000)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_BUDGET)]
        budget: u64,
        /// Also audit this tree (JSON) on the original instance.
        #[arg(long)]
        tree: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Solver {
    Exact,
    Greedy,
    Qptas,
    Ptas,
}

impl Solver {
    fn name(self) -> &'static str {
        match self {
            Solver::Exact => "exact",
            Solver::Greedy => "greedy",
            Solver::Qptas => "qptas",
            Solver::Ptas => "ptas",
        }
    }

    fn uses_eps(self) -> bool {
        matches!(self, Solver::Qptas | Solver::Ptas)
    }
}

#[derive(Clone, Copy, Debug)]
enum Dist {
    Uniform(f64, f64),
    Point(f64),
}

impl std::str::FromStr for Dist {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |x: &str| x.parse::<f64>().map_err(|e| format!("{x}: {e}"));
        match parts.as_slice() {
            ["uniform", lo, hi] => {
                let (lo, hi) = (num(lo)?, num(hi)?);
                if lo > hi {
                    return Err(format!("empty range {lo}..{hi}"));
                }
                Ok(Dist::Uniform(lo, hi))
            }
            ["point", x] => Ok(Dist::Point(num(x)?)),
            _ => Err(format!("expected uniform:LO:HI or point:X, got {s}")),
        }
    }
}

impl Dist {
    fn sample(self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            Dist::Uniform(lo, hi) if lo == hi => lo,
            Dist::Uniform(lo, hi) => rng.random_range(lo..=hi),
            Dist::Point(x) => x,
        }
    }
}

/// Failure classes, mapped onto the exit code.
pub enum Failure {
    Usage(String),
    Refused(String),
    AuditFailed,
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Refused(_) => 2,
            Failure::AuditFailed => 3,
        }
    }
}

fn refused(e: hiring::Error) -> Failure {
    Failure::Refused(e.to_string())
}

fn load(path: &PathBuf) -> Result<Instance64, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    Instance64::from_json(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::Usage(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn check_eps(eps: f64) -> Result<(), Failure> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("eps must be positive, got {eps}")))
    }
}

fn tree_json(tree: &DecisionTree) -> Value {
    serde_json::from_str(&tree.to_json()).expect("tree json")
}

fn oracle_value(inst: &Instance64) -> Option<f64> {
    optimal_exact(inst).ok().map(|(v, _)| v)
}

/// A solver run: analytic value on the original instance plus the policy.
struct Run {
    value: f64,
    value_mixed: Option<f64>,
    policy: Value,
    report: Option<Value>,
    tree: Option<DecisionTree>,
    block: Option<hiring::block::BlockTree<f64>>,
}

fn run(inst: &Instance64, solver: Solver, eps: f64, budget: u64) -> Result<Run, Failure> {
    let plain = |tree: DecisionTree, value: f64, value_mixed: Option<f64>| Run {
        value,
        value_mixed,
        policy: json!({ "kind": "tree", "tree": tree_json(&tree) }),
        report: None,
        tree: Some(tree),
        block: None,
    };
    Ok(match solver {
        Solver::Exact => {
            let (v, tree) = optimal_exact(inst).map_err(refused)?;
            plain(tree, v, None)
        }
        Solver::Greedy => {
            let (_, tree) = greedy_dp(inst).map_err(refused)?;
            let v = root_reward(&tree, inst);
            plain(tree, v, None)
        }
        Solver::Qptas => {
            let r = qptas(inst, &eps).map_err(refused)?;
            plain(r.tree, r.value_original, Some(r.value_mixed))
        }
        Solver::Ptas => {
            let out = ptas_solve(inst, &eps, &PtasOptions { budget, f_max: None }).map_err(refused)?;
            let report = serde_json::to_value(&out.report).expect("report json");
            match out.policy {
                PtasPolicy::Tree(tree) => Run { report: Some(report), ..plain(tree, out.value_original, out.value_mixed) },
                PtasPolicy::Block(b) => Run {
                    value: out.value_original,
                    value_mixed: out.value_mixed,
                    policy: json!({ "kind": "block", "tree": serde_json::from_str::<Value>(&b.to_json()).expect("block json") }),
                    report: Some(report),
                    tree: None,
                    block: Some(b),
                },
            }
        }
    })
}

fn cmd_gen(n: usize, k: usize, horizon: usize, values: Dist, probs: Dist, seed: u64, out: &Option<PathBuf>) -> Result<(), Failure> {
    if n == 0 || k == 0 || horizon == 0 {
        return Err(Failure::Usage("n, k and horizon must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f64> = (0..n).map(|_| values.sample(&mut rng)).collect();
    let p: Vec<f64> = (0..n).map(|_| probs.sample(&mut rng)).collect();
    let inst = Instance64::new(v, p, k, horizon).map_err(|e| Failure::Usage(e.to_string()))?;
    emit(out, &(inst.to_json() + "\n"))
}

fn cmd_solve(path: &PathBuf, solver: Solver, eps: f64, budget: u64, out: &Option<PathBuf>) -> Result<(), Failure> {
    check_eps(eps)?;
    let inst = load(path)?;
    let start = Instant::now();
    let r = run(&inst, solver, eps, budget)?;
    let wall = start.elapsed().as_secs_f64() * 1e3;
    let oracle = if solver == Solver::Exact { Some(r.value) } else { oracle_value(&inst) };
    let ratio = oracle.map(|o| if o > 0.0 { r.value / o } else { 1.0 });
    let doc = json!({
        "solver": solver.name(),
        "eps": solver.uses_eps().then_some(eps),
        "value": r.value,
        "value_mixed": r.value_mixed,
        "oracle": oracle,
        "ratio": ratio,
        "policy": r.policy,
        "report": r.report,
        "wall_time_ms": wall,
    });
    emit(out, &(serde_json::to_string_pretty(&doc).expect("json") + "\n"))
}

#[allow(clippy::too_many_arguments)]
fn cmd_compare(path: &PathBuf, solvers: &[Solver], eps: &[f64], trials: u64, seed: u64, budget: u64, out: &Option<PathBuf>) -> Result<(), Failure> {
    for &e in eps {
        check_eps(e)?;
    }
    if trials == 0 {
        return Err(Failure::Usage("trials must be positive".into()));
    }
    let inst = load(path)?;
    let oracle = oracle_value(&inst);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["solver", "eps", "value", "value_mixed", "mc_mean", "mc_std_error", "oracle", "ratio", "status"]).expect("csv");
    let num = |x: Option<f64>| x.map(audit::fmt17).unwrap_or_default();
    for &solver in solvers {
        let eps_list: Vec<Option<f64>> = if solver.uses_eps() { eps.iter().map(|&e| Some(e)).collect() } else { vec![None] };
        for e in eps_list {
            let eps_cell = num(e);
            match run(&inst, solver, e.unwrap_or(0.5), budget) {
                Ok(r) => {
                    let mc = match (&r.tree, &r.block) {
                        (Some(t), _) => simulate::<f64>(Policy::Tree(t), &inst, trials, seed),
                        (None, Some(b)) => simulate(Policy::Block(b), &inst, trials, seed),
                        (None, None) => unreachable!("every run carries a policy"),
                    };
                    let ratio = oracle.map(|o| if o > 0.0 { r.value / o } else { 1.0 });
                    w.write_record([
                        solver.name().to_string(),
                        eps_cell,
                        audit::fmt17(r.value),
                        num(r.value_mixed),
                        audit::fmt17(mc.mean_reward),
                        audit::fmt17(mc.std_error),
                        num(oracle),
                        num(ratio),
                        "ok".into(),
                    ])
                    .expect("csv");
                }
                Err(Failure::Refused(why)) => {
                    w.write_record([solver.name(), &eps_cell, "", "", "", "", &num(oracle), "", &format!("refused: {why}")]).expect("csv");
                }
                Err(other) => return Err(other),
            }
        }
    }
    let bytes = w.into_inner().expect("csv flush");
    emit(out, &String::from_utf8(bytes).expect("utf8"))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match &cli.cmd {
        Cmd::Gen { n, k, horizon, values, probs, seed, out } => cmd_gen(*n, *k, *horizon, *values, *probs, *seed, out),
        Cmd::Solve { instance, solver, eps, budget, out } => cmd_solve(instance, *solver, *eps, *budget, out),
        Cmd::Compare { instance, solvers, eps, trials, seed, budget, out } => cmd_compare(instance, solvers, eps, *trials, *seed, *budget, out),
        Cmd::Audit { instance, eps, trials, seed, budget, tree, out } => {
            check_eps(*eps).and_then(|_| audit::cmd_audit(&load(instance)?, *eps, *trials, *seed, *budget, tree.as_ref(), out))
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Usage(m) => eprintln!("error: {m}"),
                Failure::Refused(m) => eprintln!("refused: {m}"),
                Failure::AuditFailed => eprintln!("audit: at least one check failed"),
            }
            ExitCode::from(f.code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distributions_parse() {
        assert!(matches!("uniform:0:2".parse::<Dist>(), Ok(Dist::Uniform(0.0, 2.0))));
        assert!(matches!("point:1".parse::<Dist>(), Ok(Dist::Point(1.0))));
        assert!("uniform:2:1".parse::<Dist>().is_err());
        assert!("normal:0:1".parse::<Dist>().is_err());
    }

    #[test]
    fn degenerate_uniform_is_a_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(Dist::Uniform(0.25, 0.25).sample(&mut rng), 0.25);
    }
}
