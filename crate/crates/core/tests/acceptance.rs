//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fatal criterion fails.

use std::sync::Arc;
use std::time::{Duration, Instant};

use lipbnb::bnb::{minimize, BnbConfig, BnbStatus, Rectangle};
use lipbnb::lipschitz::{lipschitz_naive, lipschitz_sdp, preactivation_intervals, LipschitzCertificate, PSD_TOLERANCE};
use lipbnb::nn::{ActivationKind, ActivationSector, Layer, NeuralNetwork, ObjectiveFunction};
use lipbnb::problems::{double_integrator_spec, quadrotor_spec, BenchmarkSpec, ProblemKind, RunOverrides};
use lipbnb::reach::{reach, simulate, ReachabilityResult};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

const ORACLE_EPS: f64 = 1e-3;
const QUOTIENT_SLACK: f64 = -1e-9;
const NAIVE_REL: f64 = 1e-6;
const AFFINE_REL: f64 = 1e-6;
const EPS_SWEEP: [f64; 3] = [0.1, 0.01, 0.001];
const DI_BUDGET: Duration = Duration::from_secs(5 * 60);
const QUAD_BUDGET: Duration = Duration::from_secs(30 * 60);
const CONTAIN_TOL: f64 = 1e-9;
const FRESH_TRAJECTORIES: usize = 10_000;

struct Outcome {
    id: &'static str,
    passed: bool,
    fatal: bool,
    detail: String,
}

fn report(id: &'static str, passed: bool, detail: String) -> Outcome {
    let o = Outcome {
        id,
        passed,
        fatal: true,
        detail,
    };
    println!("{} {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.id, o.detail);
    o
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        scale * z
    })
}

/// 2 inputs, 1-2 hidden layers, at most 16 hidden neurons, one output.
fn random_network(rng: &mut ChaCha8Rng, kind: ActivationKind) -> NeuralNetwork {
    let depth = rng.random_range(1..=2);
    let mut dims = vec![2];
    for _ in 0..depth {
        dims.push(rng.random_range(2..=16 / depth));
    }
    dims.push(1);
    let layers = dims
        .windows(2)
        .map(|w| {
            let s = (1.0 / w[0] as f64).sqrt() * 1.5;
            Layer::new(gaussian(rng, w[1], w[0], s), DVector::from_fn(w[1], |_, _| 0.5 * rng.random::<f64>() - 0.25))
        })
        .collect();
    NeuralNetwork::new(layers, ActivationSector::for_kind(kind)).unwrap()
}

/// Flat copy of a network for fast scalar evaluation in the oracles.
struct Flat {
    layers: Vec<(Vec<f64>, Vec<f64>, usize)>,
    kind: ActivationKind,
}

impl Flat {
    fn new(net: &NeuralNetwork) -> Self {
        Flat {
            layers: net
                .layers()
                .iter()
                .map(|l| {
                    let w = &l.weights;
                    let rows: Vec<f64> = (0..w.nrows()).flat_map(|i| w.row(i).iter().copied().collect::<Vec<_>>()).collect();
                    (rows, l.bias.iter().copied().collect(), w.ncols())
                })
                .collect(),
            kind: net.activation().kind,
        }
    }

    fn eval(&self, x: &[f64]) -> f64 {
        let mut cur = x.to_vec();
        let last = self.layers.len() - 1;
        for (k, (w, b, cols)) in self.layers.iter().enumerate() {
            let next: Vec<f64> = b
                .iter()
                .enumerate()
                .map(|(i, bi)| {
                    let z = bi + w[i * cols..(i + 1) * cols].iter().zip(&cur).map(|(a, c)| a * c).sum::<f64>();
                    if k == last {
                        z
                    } else {
                        self.kind.apply(z)
                    }
                })
                .collect();
            cur = next;
        }
        cur[0]
    }
}

struct Instance {
    net: Arc<NeuralNetwork>,
    obj: ObjectiveFunction,
    root: Rectangle,
    cert: LipschitzCertificate,
}

fn instances() -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(20_24);
    (0..20)
        .map(|i| {
            let kind = if i % 2 == 0 { ActivationKind::Relu } else { ActivationKind::Tanh };
            let net = Arc::new(random_network(&mut rng, kind));
            let obj = ObjectiveFunction::open_loop(net.clone(), DVector::from_element(1, 1.0)).unwrap();
            let root = Rectangle::new(vec![-0.5, -0.5], vec![0.5, 0.5]).unwrap();
            let bounds = preactivation_intervals(&net, &root, obj.rotation());
            let cert = lipschitz_sdp(&obj, Some(&bounds));
            Instance { net, obj, root, cert }
        })
        .collect()
}

fn bnb_oracle(cases: &[Instance]) -> Outcome {
    let cfg = BnbConfig {
        epsilon: ORACLE_EPS,
        ..BnbConfig::default()
    };
    let mut bad = Vec::new();
    let mut slowest = 0.0f64;
    for (i, c) in cases.iter().enumerate() {
        let t = Instant::now();
        let r = minimize(&c.obj, &c.root, &c.cert, &cfg, &[]).unwrap();
        slowest = slowest.max(t.elapsed().as_secs_f64());

        // Cell centers of an n x n grid: every point is within h*sqrt(2)/2 of one.
        let l = c.cert.bound.max(1e-12);
        let n = ((l * std::f64::consts::SQRT_2 / 2.0) / ORACLE_EPS).ceil() as usize;
        let h = 1.0 / n as f64;
        let delta = l * h * std::f64::consts::SQRT_2 / 2.0;
        let flat = Flat::new(&c.net);
        let grid_min = (0..n)
            .into_par_iter()
            .map(|a| {
                let x = -0.5 + (a as f64 + 0.5) * h;
                (0..n).map(|b| flat.eval(&[x, -0.5 + (b as f64 + 0.5) * h])).fold(f64::INFINITY, f64::min)
            })
            .reduce(|| f64::INFINITY, f64::min);
        let ok = r.status == BnbStatus::Converged
            && r.bub - r.blb <= ORACLE_EPS
            && r.blb <= grid_min
            && r.bub >= grid_min - delta;
        if !ok {
            bad.push(format!(
                "#{i} [{:.6}, {:.6}] vs grid [{:.6}, {:.6}] {:?}",
                r.blb,
                r.bub,
                grid_min - delta,
                grid_min,
                r.status
            ));
        }
    }
    report(
        "1 bnb-grid-oracle",
        bad.is_empty(),
        format!("{} networks, eps={ORACLE_EPS}, slowest solve {slowest:.2}s {:?}", cases.len(), bad),
    )
}

fn lipschitz_soundness(cases: &[Instance]) -> Vec<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst_slack = f64::INFINITY;
    let mut naive_bad = Vec::new();
    for (i, c) in cases.iter().enumerate() {
        let flat = Flat::new(&c.net);
        for k in 0..100_000 {
            let x = [rng.random_range(-0.5..=0.5), rng.random_range(-0.5..=0.5)];
            let y = if k % 2 == 0 {
                [rng.random_range(-0.5..=0.5), rng.random_range(-0.5..=0.5)]
            } else {
                let s = 10f64.powf(rng.random_range(-4.0..-1.0));
                [
                    (x[0] + s * rng.random_range(-1.0..1.0)).clamp(-0.5, 0.5),
                    (x[1] + s * rng.random_range(-1.0..1.0)).clamp(-0.5, 0.5),
                ]
            };
            let d = ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)).sqrt();
            if d < 1e-12 {
                continue;
            }
            let q = (flat.eval(&x) - flat.eval(&y)).abs() / d;
            worst_slack = worst_slack.min(c.cert.bound - q);
        }
        let naive = lipschitz_naive(&c.obj).bound;
        let global = lipschitz_sdp(&c.obj, None).bound;
        for (name, b) in [("local", c.cert.bound), ("global", global)] {
            if b > naive * (1.0 + NAIVE_REL) {
                naive_bad.push(format!("#{i} {name} {b} > naive {naive}"));
            }
        }
    }

    let quotients = report(
        "2a lipschitz-quotients",
        worst_slack >= QUOTIENT_SLACK,
        format!("{} networks x 1e5 pairs, min slack {worst_slack:.3e} (>= {QUOTIENT_SLACK:e})", cases.len()),
    );
    let naive = report(
        "2b lipschitz-vs-naive",
        naive_bad.is_empty(),
        format!("sdp <= naive*(1+{NAIVE_REL:e}) for local and global certificates, violations {naive_bad:?}"),
    );

    // Identity activations: the network is affine and L = ||gradient||.
    // `floor` is the smallest relative excess any certificate can have when
    // lambda_max <= -PSD_TOLERANCE is enforced: along the gradient direction
    // x*, the lifted vector (x*, hidden pre-activations) has squared norm
    // kappa, so rho >= |g|^2 + PSD_TOLERANCE * kappa.
    let mut worst_rel = 0.0f64;
    let mut rows = Vec::new();
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let n0 = rng.random_range(2..=4);
        let mut dims = vec![n0];
        for _ in 0..rng.random_range(1..=3) {
            dims.push(rng.random_range(2..=6));
        }
        dims.push(rng.random_range(1..=3));
        let layers: Vec<Layer> = dims
            .windows(2)
            .map(|w| Layer::new(gaussian(&mut rng, w[1], w[0], 1.0), DVector::zeros(w[1])))
            .collect();
        let mut prod = DMatrix::identity(n0, n0);
        let mut partials = Vec::new();
        for l in &layers {
            prod = &l.weights * prod;
            partials.push(prod.clone());
        }
        partials.pop();
        let net = Arc::new(NeuralNetwork::new(layers, ActivationSector::identity()).unwrap());
        let c = DVector::from_fn(net.output_dim(), |_, _| rng.random_range(-1.0..1.0));
        let g = prod.transpose() * &c;
        let exact = g.norm();
        let x_star = &g / exact;
        let kappa = 1.0 + partials.iter().map(|p| (p * &x_star).norm_squared()).sum::<f64>();
        let floor = (1.0 + PSD_TOLERANCE * kappa / (exact * exact)).sqrt() - 1.0;
        let obj = ObjectiveFunction::open_loop(net, c).unwrap();
        let got = lipschitz_sdp(&obj, None).bound;
        let rel = (got - exact).abs() / exact;
        worst_rel = worst_rel.max(rel);
        if rel > AFFINE_REL {
            rows.push(format!("seed {seed} |g|={exact:.4e} rel {rel:.2e} floor {floor:.2e}"));
        }
    }
    let affine = report(
        "2c affine-chain-exactness",
        worst_rel <= AFFINE_REL,
        format!("10 identity chains, worst rel err {worst_rel:.2e} (<= {AFFINE_REL:e}); over tolerance: {rows:?}"),
    );
    vec![quotients, naive, affine]
}

fn run_reach(spec: &BenchmarkSpec, ov: &RunOverrides) -> (ReachabilityResult, Duration) {
    let ProblemKind::ClosedLoop { dynamics, .. } = &spec.problem.kind else {
        panic!("closed-loop benchmark expected")
    };
    let d = dynamics.to_dynamics().unwrap();
    let init = spec.problem.initial_set().unwrap().unwrap();
    let t = Instant::now();
    let r = reach(&d, &spec.network, &init, &ov.reach_config(&spec.problem)).unwrap();
    (r, t.elapsed())
}

fn overrides(eps: f64, kv: usize) -> RunOverrides {
    RunOverrides {
        epsilon: Some(eps),
        refine_splits: Some(kv),
        ..RunOverrides::default()
    }
}

fn branches(r: &ReachabilityResult) -> u64 {
    r.solves.iter().map(|s| s.result.stats.branches).sum()
}

/// Criteria 3, 4 and 5 share the double-integrator sweep.
fn di_sweep(spec: &BenchmarkSpec) -> Vec<Outcome> {
    let mut gap_bad = Vec::new();
    let mut counts = Vec::new();
    let mut branch_rows = Vec::new();
    let mut kv_ok = true;
    let mut time_fine = Duration::ZERO;
    for eps in EPS_SWEEP {
        let mut per_kv = Vec::new();
        for kv in [1, 4] {
            let (r, dt) = run_reach(spec, &overrides(eps, kv));
            if kv == 4 && eps == 0.001 {
                time_fine = dt;
            }
            for s in &r.solves {
                let g = s.result.bub - s.result.blb;
                if s.result.status != BnbStatus::Converged || g > eps {
                    gap_bad.push(format!("eps={eps} kv={kv} step {} gap {g:e} {:?}", s.step, s.result.status));
                }
            }
            counts.push(r.solves.len());
            per_kv.push(branches(&r));
        }
        kv_ok &= per_kv[1] < per_kv[0];
        branch_rows.push(format!("eps={eps}: kv1={} kv4={}", per_kv[0], per_kv[1]));
    }
    vec![
        report(
            "3 gap-contract",
            gap_bad.is_empty() && time_fine < DI_BUDGET,
            format!("all solves Converged with gap <= eps; eps=0.001 run {:.1}s (< {}s) {gap_bad:?}", time_fine.as_secs_f64(), DI_BUDGET.as_secs()),
        ),
        report("4 solve-count", counts.iter().all(|&c| c == 20), format!("solves per run {counts:?} (expect 20)")),
        report("5 refinement-branches", kv_ok, branch_rows.join(", ")),
    ]
}

fn containment(name: &'static str, spec: &BenchmarkSpec, eps: f64, budget: Duration) -> (Outcome, Option<ReachabilityResult>) {
    let ov = RunOverrides {
        epsilon: Some(eps),
        ..RunOverrides::default()
    };
    let (r, dt) = run_reach(spec, &ov);
    let ProblemKind::ClosedLoop { dynamics, .. } = &spec.problem.kind else { unreachable!() };
    let d = dynamics.to_dynamics().unwrap();
    let init = spec.problem.initial_set().unwrap().unwrap();
    let trajs = simulate(&d, &spec.network, &init, FRESH_TRAJECTORIES, 0xF2E5, true);
    let escapes: usize = trajs
        .iter()
        .map(|tr| tr.iter().zip(&r.sets).filter(|(x, s)| !s.contains(x, CONTAIN_TOL)).count())
        .sum();
    let o = report(
        name,
        escapes == 0 && dt < budget && r.sets.len() == d.a_seq.len() + 1,
        format!(
            "{} steps, {FRESH_TRAJECTORIES} fresh trajectories, {escapes} escapes, eps={eps}, {:.1}s (< {}s)",
            r.sets.len() - 1,
            dt.as_secs_f64(),
            budget.as_secs()
        ),
    );
    (o, Some(r))
}

fn pca_benefit(spec: &BenchmarkSpec, pca: &ReachabilityResult) -> Outcome {
    let eps = spec.problem.epsilon;
    let ov = RunOverrides {
        epsilon: Some(eps),
        identity_rotation: true,
        ..RunOverrides::default()
    };
    let (id, _) = run_reach(spec, &ov);
    let (a, b) = (pca.sets.last().unwrap().volume(), id.sets.last().unwrap().volume());
    let mut o = report("7 pca-area", a <= b, format!("step-5 area pca {a:.6e} vs identity {b:.6e} (non-fatal)"));
    o.fatal = false;
    o
}

fn toy(bias: f64) -> ObjectiveFunction {
    let net = NeuralNetwork::new(
        vec![
            Layer::new(DMatrix::identity(2, 2), DVector::zeros(2)),
            Layer::new(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), DVector::from_element(1, bias)),
        ],
        ActivationSector::identity(),
    )
    .unwrap();
    ObjectiveFunction::open_loop(Arc::new(net), DVector::from_element(1, 1.0)).unwrap()
}

fn early_termination() -> Outcome {
    let root = Rectangle::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
    let cfg = BnbConfig {
        verify_mode: true,
        ..BnbConfig::default()
    };
    let pos = toy(2.0);
    let rp = minimize(&pos, &root, &lipschitz_sdp(&pos, None), &cfg, &[]).unwrap();
    let neg = toy(-0.5);
    let rn = minimize(&neg, &root, &lipschitz_sdp(&neg, None), &cfg, &[]).unwrap();
    let witness_ok = root.contains(&rn.witness, 0.0) && neg.eval(&rn.witness).unwrap() < 0.0;
    report(
        "8 verify-mode",
        rp.status == BnbStatus::VerifiedNonnegative && rn.status == BnbStatus::CounterexampleFound && witness_ok,
        format!("min +2 -> {:?}, crossing -> {:?} witness {:?}", rp.status, rn.status, rn.witness),
    )
}

fn determinism(spec: &BenchmarkSpec) -> Outcome {
    let run_in = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let ov = RunOverrides {
            seed: Some(7),
            parallel: threads > 1,
            ..RunOverrides::default()
        };
        pool.install(|| run_reach(spec, &ov).0)
    };
    let n = std::thread::available_parallelism().map_or(4, |n| n.get()).max(2);
    let (a, b) = (run_in(1), run_in(n));
    let bounds = |r: &ReachabilityResult| r.solves.iter().map(|s| (s.result.blb.to_bits(), s.result.bub.to_bits())).collect::<Vec<_>>();
    let same = bounds(&a) == bounds(&b) && a.sets == b.sets && a.trajectories == b.trajectories;
    report("9 determinism", same, format!("1 thread vs {n} threads: bounds, sets and trajectories identical = {same}"))
}

fn main() {
    let start = Instant::now();
    let cases = instances();
    let di = double_integrator_spec();
    let mut outcomes = vec![bnb_oracle(&cases)];
    outcomes.extend(lipschitz_soundness(&cases));
    outcomes.extend(di_sweep(&di));
    let (o, di_run) = containment("6a di-containment", &di, di.problem.epsilon, DI_BUDGET);
    outcomes.push(o);
    let (o, _) = containment("6b quadrotor-containment", &quadrotor_spec(), 0.1, QUAD_BUDGET);
    outcomes.push(o);
    outcomes.push(pca_benefit(&di, di_run.as_ref().unwrap()));
    outcomes.push(early_termination());
    outcomes.push(determinism(&di));

    let failed: Vec<&str> = outcomes.iter().filter(|o| o.fatal && !o.passed).map(|o| o.id).collect();
    println!(
        "acceptance: {}/{} passed in {:.1}s",
        outcomes.iter().filter(|o| o.passed).count(),
        outcomes.len(),
        start.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        println!("fatal failures: {failed:?}");
        std::process::exit(1);
    }
}
