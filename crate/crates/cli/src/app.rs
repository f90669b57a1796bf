use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use lipbnb::bnb::{minimize, BnbConfig, BnbResult, BnbStatus, Rectangle};
use lipbnb::lipschitz::{certify, preactivation_intervals, CertifyMethod};
use lipbnb::nn::{load_network, NeuralNetwork, ObjectiveFunction};
use lipbnb::problems::{
    benchmark, run_benchmark, BenchmarkOutcome, BenchmarkSpec, ProblemFile, ProblemKind, RunOverrides, BENCHMARK_NAMES,
};
use lipbnb::reach::{check_disjoint, check_inside};
use nalgebra::{DMatrix, DVector};
use serde_json::json;

use crate::records::{check_record, reach_solve, set_record, solve_record, Envelope, Record, SCHEMA_VERSION};
use crate::svg::{open_loop_scene, partition_scene, reach_scene, render_svg};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_COUNTEREXAMPLE: i32 = 3;
pub const EXIT_NODE_CAP: i32 = 4;
pub const EXIT_CHECK_FAILED: i32 = 5;

#[derive(Parser, Debug)]
#[command(name = "lipbnb", version, about = "Lipschitz branch-and-bound bounds and reachable sets for neural networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum MethodArg {
    Sdp,
    Naive,
}

impl From<MethodArg> for CertifyMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Sdp => CertifyMethod::Sdp,
            MethodArg::Naive => CertifyMethod::Naive,
        }
    }
}

#[derive(Args, Debug, Clone)]
struct SolverArgs {
    /// Target gap between the lower and upper bound.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Nodes split per iteration.
    #[arg(long)]
    kb: Option<usize>,
    /// Sub-boxes evaluated per node when refining its lower bound.
    #[arg(long)]
    kv: Option<usize>,
    /// Worker threads; 1 runs the sequential reference path.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_enum, default_value = "sdp")]
    lipschitz_method: MethodArg,
}

#[derive(Args, Debug, Clone)]
struct OutputArgs {
    /// Directory for records.jsonl, summary.json and CSV samples. Records go
    /// to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write an SVG plot to this path.
    #[arg(long)]
    svg: Option<PathBuf>,
    /// State axes to plot, e.g. `0,1`.
    #[arg(long, value_delimiter = ',', default_value = "0,1")]
    axes: Vec<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Certify Lipschitz constants of `c^T f` (open loop) or
    /// `c^T (A x + B f(x))` (closed loop, first step).
    Lipschitz {
        /// Problem file; its set localizes the activation sectors.
        problem: Option<PathBuf>,
        /// Weight file, for an open-loop bound without a problem file.
        #[arg(long, conflicts_with = "problem")]
        weights: Option<PathBuf>,
        /// Objective direction; defaults to every unit vector.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        direction: Option<Vec<f64>>,
        #[arg(long, value_enum, default_value = "sdp")]
        lipschitz_method: MethodArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Minimize `c^T f(x)` over a box, stopping early once the sign is known.
    Verify {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        lower: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        upper: Vec<f64>,
        /// Output weights `c`; defaults to `1` for single-output networks.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        direction: Option<Vec<f64>>,
        /// Stop as soon as the minimum is known to be >= 0 or < 0. Pass
        /// `--verify-mode false` for a plain minimization.
        #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
        verify_mode: bool,
        /// Emit the final input partition as records.
        #[arg(long)]
        partitions: bool,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Reachable sets for a problem file.
    Reach {
        problem: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        seed: Option<u64>,
        /// Simulated trajectories (or input samples) used for PCA.
        #[arg(long)]
        samples: Option<usize>,
        /// Keep every set axis aligned instead of PCA-rotated.
        #[arg(long)]
        identity_rotation: bool,
        /// Compare each set against the problem's goal and avoid regions.
        #[arg(long)]
        check_sets: bool,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Built-in benchmarks.
    Bench {
        #[command(subcommand)]
        action: BenchAction,
    },
}

#[derive(Subcommand, Debug)]
enum BenchAction {
    /// Run a benchmark and check its expected properties.
    Run {
        name: String,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        identity_rotation: bool,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Print the benchmark names.
    List,
}

/// Parse `args`, run, and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_USAGE
        }
    }
}

/// Exit code for a set of solver outcomes.
pub fn exit_code<'a>(statuses: impl IntoIterator<Item = &'a BnbStatus>) -> i32 {
    let mut code = EXIT_OK;
    for s in statuses {
        match s {
            BnbStatus::CounterexampleFound => return EXIT_COUNTEREXAMPLE,
            BnbStatus::NodeCapReached => code = EXIT_NODE_CAP,
            BnbStatus::Converged | BnbStatus::VerifiedNonnegative => {}
        }
    }
    code
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Lipschitz {
            problem,
            weights,
            direction,
            lipschitz_method,
            out,
        } => cmd_lipschitz(problem, weights, direction, lipschitz_method.into(), out),
        Command::Verify {
            weights,
            lower,
            upper,
            direction,
            verify_mode,
            partitions,
            solver,
            output,
        } => cmd_verify(&weights, lower, upper, direction, verify_mode, partitions, &solver, &output),
        Command::Reach {
            problem,
            solver,
            seed,
            samples,
            identity_rotation,
            check_sets,
            output,
        } => {
            let (file, net) = load_problem(&problem)?;
            let spec = BenchmarkSpec {
                name: file.name.clone(),
                problem: file,
                network: Arc::new(net),
                expected: Vec::new(),
            };
            cmd_run(&spec, &solver, seed, samples, identity_rotation, check_sets, &output, "reach")
        }
        Command::Bench { action } => match action {
            BenchAction::List => {
                for n in BENCHMARK_NAMES {
                    println!("{n}");
                }
                Ok(EXIT_OK)
            }
            BenchAction::Run {
                name,
                solver,
                seed,
                samples,
                identity_rotation,
                output,
            } => {
                let Some(spec) = benchmark(&name) else {
                    bail!("unknown benchmark {name:?}; known: {}", BENCHMARK_NAMES.join(", "));
                };
                cmd_run(&spec, &solver, seed, samples, identity_rotation, false, &output, "bench")
            }
        },
    }
}

/// Load a problem file and the weight file it names, relative to its
/// directory.
pub fn load_problem(path: &Path) -> Result<(ProblemFile, NeuralNetwork)> {
    let file = ProblemFile::load(path).with_context(|| format!("reading problem {}", path.display()))?;
    let weights = path.parent().unwrap_or(Path::new(".")).join(&file.weights);
    let net = load_network(&weights).with_context(|| format!("reading weights {}", weights.display()))?;
    file.validate(&net)?;
    Ok((file, net))
}

/// Configure parallelism; returns whether the parallel path is on.
fn setup_threads(threads: Option<usize>) -> Result<bool> {
    match threads {
        Some(0) => bail!("--threads must be at least 1"),
        Some(1) => Ok(false),
        Some(n) => {
            #[cfg(feature = "parallel")]
            {
                // A pool may already exist when running in-process (tests);
                // then the existing one is used.
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            let _ = n;
            Ok(true)
        }
        None => Ok(true),
    }
}

fn check_solver_args(s: &SolverArgs) -> Result<()> {
    if let Some(e) = s.epsilon {
        ensure!(e > 0.0 && e.is_finite(), "--epsilon must be positive, got {e}");
    }
    if let Some(k) = s.kb {
        ensure!(k >= 1, "--kb must be at least 1");
    }
    if let Some(k) = s.kv {
        ensure!(k.is_power_of_two(), "--kv must be a power of two, got {k}");
    }
    Ok(())
}

fn check_axes(axes: &[usize], dim: usize) -> Result<(usize, usize)> {
    ensure!(axes.len() == 2, "--axes takes two indices, got {}", axes.len());
    ensure!(axes[0] < dim && axes[1] < dim && axes[0] != axes[1], "--axes must be two distinct indices below {dim}");
    Ok((axes[0], axes[1]))
}

struct Sink {
    out: Option<PathBuf>,
    lines: Vec<String>,
}

impl Sink {
    fn new(out: Option<PathBuf>) -> Self {
        Sink { out, lines: Vec::new() }
    }

    fn push(&mut self, r: Record) {
        self.lines.push(Envelope::new(r).to_line());
    }

    /// Write records (or print them), the summary and extra files.
    fn finish(self, summary: serde_json::Value, extra: &[(&str, String)]) -> Result<()> {
        match &self.out {
            Some(dir) => {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
                let mut text = self.lines.join("\n");
                text.push('\n');
                fs::write(dir.join("records.jsonl"), text)?;
                fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
                for (name, body) in extra {
                    fs::write(dir.join(name), body)?;
                }
            }
            None => {
                let mut stdout = std::io::stdout().lock();
                for l in &self.lines {
                    writeln!(stdout, "{l}")?;
                }
                eprintln!("summary: {}", serde_json::to_string(&summary)?);
            }
        }
        Ok(())
    }
}

fn unit_vectors(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

fn cmd_lipschitz(
    problem: Option<PathBuf>,
    weights: Option<PathBuf>,
    direction: Option<Vec<f64>>,
    method: CertifyMethod,
    out: Option<PathBuf>,
) -> Result<i32> {
    let start = Instant::now();
    let mut sink = Sink::new(out);
    match (problem, weights) {
        (Some(path), _) => {
            let (file, net) = load_problem(&path)?;
            let net = Arc::new(net);
            match &file.kind {
                ProblemKind::ClosedLoop { dynamics, initial_set } => {
                    let d = dynamics.to_dynamics()?;
                    let n = d.state_dim();
                    let init = initial_set.to_rectangle()?;
                    let eye = DMatrix::identity(n, n);
                    let bounds = preactivation_intervals(&net, &init, &eye);
                    let dirs = match direction {
                        Some(c) => vec![c],
                        None => unit_vectors(n),
                    };
                    for c in dirs {
                        ensure!(c.len() == n, "--direction needs {n} entries");
                        let obj = ObjectiveFunction::closed_loop(
                            net.clone(),
                            DVector::from_vec(c.clone()),
                            d.a_seq[0].clone(),
                            d.b_seq[0].clone(),
                            eye.clone(),
                        )?;
                        sink.push(Record::Certificate {
                            step: Some(0),
                            direction: c,
                            certificate: certify(&obj, Some(&bounds), method),
                        });
                    }
                }
                ProblemKind::OpenLoop { input_set, .. } => {
                    let input = input_set.to_rectangle()?;
                    let bounds = preactivation_intervals(&net, &input, &DMatrix::identity(input.dim(), input.dim()));
                    open_loop_certs(&mut sink, &net, direction, Some(&bounds), method)?;
                }
            }
        }
        (None, Some(w)) => {
            let net = Arc::new(load_network(&w).with_context(|| format!("reading weights {}", w.display()))?);
            open_loop_certs(&mut sink, &net, direction, None, method)?;
        }
        (None, None) => bail!("give a problem file or --weights"),
    }
    let summary = json!({
        "schema_version": SCHEMA_VERSION,
        "command": "lipschitz",
        "certificates": sink.lines.len(),
        "wall_time_secs": start.elapsed().as_secs_f64(),
    });
    sink.finish(summary, &[])?;
    Ok(EXIT_OK)
}

fn open_loop_certs(
    sink: &mut Sink,
    net: &Arc<NeuralNetwork>,
    direction: Option<Vec<f64>>,
    bounds: Option<&lipbnb::lipschitz::PreactivationBounds>,
    method: CertifyMethod,
) -> Result<()> {
    let m = net.output_dim();
    let dirs = match direction {
        Some(c) => vec![c],
        None => unit_vectors(m),
    };
    for c in dirs {
        ensure!(c.len() == m, "--direction needs {m} entries");
        let obj = ObjectiveFunction::open_loop(net.clone(), DVector::from_vec(c.clone()))?;
        sink.push(Record::Certificate {
            step: None,
            direction: c,
            certificate: certify(&obj, bounds, method),
        });
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_verify(
    weights: &Path,
    lower: Vec<f64>,
    upper: Vec<f64>,
    direction: Option<Vec<f64>>,
    verify_mode: bool,
    partitions: bool,
    solver: &SolverArgs,
    output: &OutputArgs,
) -> Result<i32> {
    let start = Instant::now();
    check_solver_args(solver)?;
    let net = Arc::new(load_network(weights).with_context(|| format!("reading weights {}", weights.display()))?);
    let rect = Rectangle::new(lower, upper)?;
    ensure!(
        rect.dim() == net.input_dim(),
        "the box has {} dimensions but the network takes {}",
        rect.dim(),
        net.input_dim()
    );
    let c = match direction {
        Some(c) => c,
        None if net.output_dim() == 1 => vec![1.0],
        None => bail!("--direction is required for networks with {} outputs", net.output_dim()),
    };
    let axes = match &output.svg {
        Some(_) => Some(check_axes(&output.axes, rect.dim())?),
        None => None,
    };
    let parallel = setup_threads(solver.threads)?;
    let d = BnbConfig::default();
    let cfg = BnbConfig {
        epsilon: solver.epsilon.unwrap_or(d.epsilon),
        branch_batch: solver.kb.unwrap_or(d.branch_batch),
        refine_splits: solver.kv.unwrap_or(d.refine_splits),
        verify_mode,
        parallel,
        keep_partitions: partitions || output.svg.is_some(),
        ..d
    };
    let obj = ObjectiveFunction::open_loop(net.clone(), DVector::from_vec(c.clone()))?;
    let bounds = preactivation_intervals(&net, &rect, &DMatrix::identity(rect.dim(), rect.dim()));
    let cert = certify(&obj, Some(&bounds), solver.lipschitz_method.into());
    let result = minimize(&obj, &rect, &cert, &cfg, &[])?;

    let mut sink = Sink::new(output.out.clone());
    sink.push(Record::Certificate {
        step: None,
        direction: c.clone(),
        certificate: cert.clone(),
    });
    sink.push(solve_record(None, None, None, c, cert.bound, cert.method, &result));
    if partitions {
        for leaf in result.partitions.iter().flatten() {
            sink.push(Record::Partition {
                lower: leaf.node.rect.lower().to_vec(),
                upper: leaf.node.rect.upper().to_vec(),
                lower_bound: leaf.node.lower_bound,
                upper_bound: leaf.node.upper_bound,
                pruned: leaf.pruned,
            });
        }
    }
    let code = exit_code([&result.status]);
    eprintln!(
        "{:?}: min in [{:.6e}, {:.6e}] after {} branches",
        result.status, result.blb, result.bub, result.stats.branches
    );
    let summary = summary_json("verify", "verify", &[&result], code, start, &[]);
    // Render before writing anything so a failure leaves no partial output.
    let svg = match (&output.svg, axes, &result.partitions) {
        (Some(path), Some(axes), Some(leaves)) => Some((path, render_svg(&partition_scene("input partition", leaves, axes)))),
        _ => None,
    };
    sink.finish(summary, &[])?;
    if let Some((path, body)) = svg {
        fs::write(path, body).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(code)
}

fn summary_json(command: &str, name: &str, results: &[&BnbResult], code: i32, start: Instant, extra: &[(&str, serde_json::Value)]) -> serde_json::Value {
    let branches: u64 = results.iter().map(|r| r.stats.branches).sum();
    let statuses: Vec<String> = results.iter().map(|r| format!("{:?}", r.status)).collect();
    let mut v = json!({
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "name": name,
        "solves": results.len(),
        "total_branches": branches,
        "statuses": statuses,
        "exit_code": code,
        "wall_time_secs": start.elapsed().as_secs_f64(),
    });
    for (k, val) in extra {
        v[*k] = val.clone();
    }
    v
}

#[allow(clippy::too_many_arguments)]
fn cmd_run(
    spec: &BenchmarkSpec,
    solver: &SolverArgs,
    seed: Option<u64>,
    samples: Option<usize>,
    identity_rotation: bool,
    check_sets: bool,
    output: &OutputArgs,
    command: &str,
) -> Result<i32> {
    let start = Instant::now();
    check_solver_args(solver)?;
    let dim = match &spec.problem.kind {
        ProblemKind::ClosedLoop { dynamics, .. } => dynamics.a.len(),
        ProblemKind::OpenLoop { .. } => spec.network.output_dim(),
    };
    let axes = match &output.svg {
        Some(_) => Some(check_axes(&output.axes, dim)?),
        None => None,
    };
    let parallel = setup_threads(solver.threads)?;
    let overrides = RunOverrides {
        epsilon: solver.epsilon,
        branch_batch: solver.kb,
        refine_splits: solver.kv,
        seed,
        samples,
        identity_rotation,
        lipschitz_method: solver.lipschitz_method.into(),
        parallel,
    };
    let outcome = run_benchmark(spec, &overrides)?;
    let mut sink = Sink::new(output.out.clone());
    let mut extra_files = Vec::new();
    let mut svg = None;
    let mut warnings = Vec::new();
    if let Some(r) = &outcome.reach {
        for (t, set) in r.sets.iter().enumerate() {
            sink.push(set_record(t, set));
        }
        for s in &r.solves {
            sink.push(reach_solve(s));
        }
        if check_sets {
            push_set_checks(&mut sink, &spec.problem, &outcome);
        }
        extra_files.push(("trajectories.csv", trajectories_csv(&r.trajectories)));
        warnings.extend(r.warnings.iter().cloned());
        if let (Some(path), Some(axes)) = (&output.svg, axes) {
            svg = Some((path.clone(), render_svg(&reach_scene(&spec.name, r, axes))));
        }
    }
    if let Some(o) = &outcome.open_loop {
        let p = &o.polytope;
        for (k, d) in p.directions.iter().enumerate() {
            sink.push(Record::Face {
                direction: d.clone(),
                offset: p.offsets[k],
            });
            // Each face comes from minimizing -d^T f.
            let neg: Vec<f64> = d.iter().map(|v| -v).collect();
            sink.push(solve_record(None, None, None, neg, p.lipschitz[k], p.lipschitz_methods[k], &p.results[k]));
        }
        extra_files.push(("samples.csv", samples_csv(&o.samples)));
        if output.svg.is_some() && o.samples.first().is_some_and(|y| y.len() == 2) {
            svg = Some((output.svg.clone().unwrap(), render_svg(&open_loop_scene(&spec.name, p, &o.samples))));
        }
    }
    for c in &outcome.checks {
        sink.push(check_record(c));
    }
    let results = outcome.results();
    let mut code = exit_code(results.iter().map(|r| &r.status));
    if code == EXIT_OK && !outcome.passed() {
        code = EXIT_CHECK_FAILED;
    }
    for c in &outcome.checks {
        eprintln!("{} {:?}: {}", if c.passed { "ok  " } else { "FAIL" }, c.property, c.detail);
    }
    eprintln!(
        "{}: {} solves, {} branches, {:.2} s",
        spec.name,
        results.len(),
        results.iter().map(|r| r.stats.branches).sum::<u64>(),
        outcome.wall_time_secs
    );
    let summary = summary_json(
        command,
        &spec.name,
        &results,
        code,
        start,
        &[("epsilon", json!(outcome.epsilon)), ("warnings", json!(warnings)), ("checks_passed", json!(outcome.passed()))],
    );
    sink.finish(summary, &extra_files)?;
    if let Some((path, body)) = svg {
        fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(code)
}

fn push_set_checks(sink: &mut Sink, problem: &ProblemFile, outcome: &BenchmarkOutcome) {
    let Some(r) = &outcome.reach else { return };
    for (t, set) in r.sets.iter().enumerate() {
        if let Some(avoid) = problem.avoid_set() {
            sink.push(Record::SetCheck {
                step: t,
                region: "avoid".into(),
                outcome: check_disjoint(set, &avoid),
            });
        }
    }
    if let (Some(goal), Some(last)) = (problem.goal_set(), r.sets.last()) {
        sink.push(Record::SetCheck {
            step: r.sets.len() - 1,
            region: "goal".into(),
            outcome: check_inside(last, &goal),
        });
    }
}

fn trajectories_csv(trajs: &[Vec<Vec<f64>>]) -> String {
    let n = trajs.first().and_then(|t| t.first()).map_or(0, Vec::len);
    let mut s = String::from("trajectory,step");
    for i in 0..n {
        s.push_str(&format!(",x{i}"));
    }
    s.push('\n');
    for (j, tr) in trajs.iter().enumerate() {
        for (t, x) in tr.iter().enumerate() {
            s.push_str(&format!("{j},{t}"));
            for v in x {
                s.push_str(&format!(",{v:e}"));
            }
            s.push('\n');
        }
    }
    s
}

fn samples_csv(samples: &[Vec<f64>]) -> String {
    let n = samples.first().map_or(0, Vec::len);
    let mut s = String::from("sample");
    for i in 0..n {
        s.push_str(&format!(",y{i}"));
    }
    s.push('\n');
    for (j, y) in samples.iter().enumerate() {
        s.push_str(&j.to_string());
        for v in y {
            s.push_str(&format!(",{v:e}"));
        }
        s.push('\n');
    }
    s
}
