// Acceptance criteria, one line each. Runs without the libtest harness so the
// lines are printed on every `cargo test`; exits nonzero if any criterion fails.

use std::path::Path;
use std::time::{Duration, Instant};

use contraction_cert::boundprop::{
    assemble_g_hull, assemble_s_hull, hull_over_region, Region,
};
use contraction_cert::certify::{
    certify_region, corner_matrix, falsify_by_sampling, metzler_majorant_check, pointwise_g,
    pointwise_s, rohn_max_mu2, rohn_max_mu2_pruned, rohn_min_eig_pruned, Verdict,
};
use contraction_cert::cli;
use contraction_cert::interval::{set_outward_rounding, Interval, IntervalMatrix};
use contraction_cert::linalg::{mu2, sym_eigvals, Matrix};
use contraction_cert::problem::{ContractionProblem, Hyper, WarmStart};
use contraction_cert::systems::{benchmark_system, ControlAffineSystem};
use contraction_cert::tracking::{
    equilibrium_reference, flat_reference, simulate, tracking_control, TrajectoryShape,
};
use contraction_cert::train::{loss, loss_gradient, train_curriculum, Aggregation, AdamW, CurriculumConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ZOO: [&str; 3] = ["scalar_linear", "planar_nonlinear", "quadrotor10"];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn iv(lo: f64, hi: f64) -> Interval {
    Interval::new(lo, hi).unwrap()
}

/// Warm-started problem with residual networks moved off zero.
fn perturbed(name: &str, seed: u64, hidden: usize, scale: f64, c: f64) -> ContractionProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ws = WarmStart {
        policy_hidden: vec![hidden, hidden],
        metric_hidden: vec![hidden],
        ..WarmStart::default()
    };
    let hyper = Hyper { a: 0.01, b: 100.0, c };
    let mut p = ContractionProblem::warm_started(benchmark_system(name).unwrap(), hyper, &ws, &mut rng).unwrap();
    let mask = p.residual_mask();
    let v: Vec<f64> = p
        .params()
        .iter()
        .zip(&mask)
        .map(|(x, r)| if *r { x + scale * rng.gen_range(-1.0..1.0) } else { *x })
        .collect();
    p.set_params(&v);
    p
}

fn sample_box(rng: &mut ChaCha8Rng, b: &[Interval]) -> Vec<f64> {
    b.iter().map(|i| i.lo() + rng.gen::<f64>() * i.width()).collect()
}

fn scalar_dependency_gap() -> Outcome {
    let start = Instant::now();
    let one = |lo, hi| IntervalMatrix::column(&[iv(lo, hi)]);
    let (theta, theta_dot, jac) = (one(0.5, 1.0), one(-2.0, -1.5), one(-1.0, 1.0));
    let s = assemble_s_hull(&theta, &theta_dot, &jac, 0.5).unwrap().get(0, 0);
    let g = assemble_g_hull(&theta, &theta_dot, &jac, 0.5).unwrap().get(0, 0);
    let elapsed = start.elapsed();
    let tol = 1e-12;
    let ok = (s.lo() + 5.75).abs() <= tol
        && (s.hi() - 1.5).abs() <= tol
        && (2.0 * g.lo() + 5.0).abs() <= tol
        && (2.0 * g.hi()).abs() <= tol
        && elapsed < Duration::from_millis(1);
    outcome(
        ok,
        format!(
            "S in [{}, {}], 2G in [{}, {}], {:?}",
            s.lo(),
            s.hi(),
            2.0 * g.lo(),
            2.0 * g.hi(),
            elapsed
        ),
    )
}

fn symmetric_equivalence() -> Outcome {
    let mut worst = 0.0f64;
    for (k, name) in ZOO.iter().enumerate() {
        let p = perturbed(name, 10 + k as u64, 16, 0.3, 0.1);
        let region = p.system.default_region();
        let mut rng = ChaCha8Rng::seed_from_u64(20 + k as u64);
        for _ in 0..1000 {
            let x = sample_box(&mut rng, &region);
            let s_max = sym_eigvals(&pointwise_s(&p, &x)).unwrap().into_iter().fold(f64::NEG_INFINITY, f64::max);
            let g_mu = mu2(&pointwise_g(&p, &x)).unwrap();
            worst = worst.max((s_max / 2.0 - g_mu).abs());
        }
    }
    outcome(worst <= 1e-8, format!("max |lambda_max(S)/2 - mu2(G)| = {worst:.2e} over 3000 states"))
}

/// Largest `μ2` over all `2^(n²)` vertex matrices.
fn vertex_max_mu2(a: &IntervalMatrix) -> f64 {
    let n = a.rows();
    let mut best = f64::NEG_INFINITY;
    for mask in 0u32..(1 << (n * n)) {
        let m = Matrix::from_vec(
            n,
            n,
            (0..n * n)
                .map(|k| {
                    let e = a.as_slice()[k];
                    if mask >> k & 1 == 1 { e.hi() } else { e.lo() }
                })
                .collect(),
        );
        best = best.max(mu2(&m).unwrap());
    }
    best
}

fn corner_exactness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut non_member = 0;
    for trial in 0..200 {
        let n = 2 + trial % 2;
        let data: Vec<Interval> = (0..n * n)
            .map(|_| {
                let c = rng.gen_range(-3.0..3.0);
                let r = if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.0..1.5) };
                iv(c - r, c + r)
            })
            .collect();
        let a = IntervalMatrix::new(n, n, data).unwrap();
        let res = rohn_max_mu2(&a).unwrap();
        worst = worst.max((res.max_mu2 - vertex_max_mu2(&a)).abs());
        // A_c + D_s A_r D_s is a member whose symmetric part is the argmax corner
        let member = corner_matrix(&a.center(), &a.radius(), &res.argmax_sign, 1.0);
        if !a.contains_with_tol(&member, 1e-12) || (mu2(&member).unwrap() - res.max_mu2).abs() > 1e-10 {
            non_member += 1;
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-10 && non_member == 0 && elapsed < Duration::from_secs(60),
        format!("max gap to vertex search {worst:.2e}, argmax corners outside {non_member}/200, {elapsed:.2?}"),
    )
}

fn metzler_counterexample() -> Outcome {
    let n = 4;
    let t = 1.0;
    let a = IntervalMatrix::point(&Matrix::from_vec(n, n, vec![-t; n * n]));
    let metzler = metzler_majorant_check(&a).unwrap();
    let exact = rohn_max_mu2(&a).unwrap().max_mu2;
    let ok = (metzler.max_eig - t * (n as f64 - 2.0)).abs() <= 1e-12 && !metzler.certified && exact.abs() <= 1e-12;
    outcome(ok, format!("Metzler bound {:.6} (inconclusive), corner search {exact:.2e}", metzler.max_eig))
}

fn hull_soundness() -> Outcome {
    let start = Instant::now();
    set_outward_rounding(true);
    let mut escaped = 0usize;
    let mut widened = 0usize;
    let mut samples = 0usize;
    for (k, name) in ZOO.iter().enumerate() {
        let p = perturbed(name, 30 + k as u64, 16, 0.3, 0.1);
        let full = p.system.default_region();
        let dim = full.len();
        let mut rng = ChaCha8Rng::seed_from_u64(40 + k as u64);
        for _ in 0..100 {
            let cell: Vec<Interval> = full
                .iter()
                .map(|b| {
                    let w = b.width() * rng.gen_range(0.02..0.3);
                    let lo = b.lo() + rng.gen::<f64>() * (b.width() - w);
                    iv(lo, lo + w)
                })
                .collect();
            let parent = hull_over_region(&p, &Region::whole(cell.clone())).unwrap();
            for _ in 0..1000 {
                let x = sample_box(&mut rng, &cell);
                let g = pointwise_g(&p, &x);
                let m = p.metric.metric(&x).unwrap();
                if !parent.g_hull.contains(&g) || !parent.m_hull.contains(&m) {
                    escaped += 1;
                }
                samples += 1;
            }
            // split up to four coordinates in two
            let mut parts = vec![1; dim];
            for i in 0..dim.min(4) {
                parts[(i * 3 + 1) % dim] = 2;
            }
            let children = hull_over_region(&p, &Region::new(cell, parts).unwrap()).unwrap();
            for c in &children.cells {
                if !parent.g_hull.contains_matrix(&c.g) || !parent.m_hull.contains_matrix(&c.m) {
                    widened += 1;
                }
            }
        }
    }
    set_outward_rounding(false);
    outcome(
        escaped == 0 && widened == 0,
        format!(
            "{escaped}/{samples} samples outside, {widened} refined cells wider than parent, {:.1?}",
            start.elapsed()
        ),
    )
}

fn sign_bits(sign: &[f64]) -> u64 {
    sign.iter().enumerate().fold(0, |acc, (i, s)| acc | ((*s < 0.0) as u64) << i)
}

/// Everything a small parameter change could switch: active hinges, the
/// argmax cell and every corner-search argmax.
fn active_set(p: &ContractionProblem, region: &Region) -> Vec<u64> {
    let l = loss(p, region, Aggregation::Mean);
    let mut key: Vec<u64> = l.parts.cell_lambdas.iter().map(|v| (*v > 0.0) as u64).collect();
    key.push((l.parts.a_deficit > 0.0) as u64);
    key.push((l.parts.b_excess > 0.0) as u64);
    let argmax = l
        .parts
        .cell_lambdas
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |b, (i, v)| if *v > b.1 { (i, *v) } else { b });
    key.push(argmax.0 as u64);
    let report = hull_over_region(p, region).unwrap();
    for c in &report.cells {
        key.push(sign_bits(&rohn_max_mu2_pruned(&c.g).unwrap().sign));
    }
    key.push(sign_bits(&rohn_max_mu2_pruned(&report.g_hull).unwrap().sign));
    for (k, e) in report.g_hull.as_slice().iter().enumerate() {
        key.push(report.cells.iter().position(|c| c.g.as_slice()[k].lo() == e.lo()).unwrap() as u64);
        key.push(report.cells.iter().position(|c| c.g.as_slice()[k].hi() == e.hi()).unwrap() as u64);
    }
    key.push(sign_bits(&rohn_min_eig_pruned(&report.m_hull).unwrap().sign));
    key.push(sign_bits(&rohn_max_mu2_pruned(&report.m_hull).unwrap().sign));
    key
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let mut p = perturbed("planar_nonlinear", 3, 6, 0.3, 0.1);
    let region = Region::new(p.system.default_region(), vec![2, 2]).unwrap().scaled(0.5);
    let probe = loss(&p, &region, Aggregation::Mean);
    // put both metric hinges in their active branch
    p.hyper.a = probe.parts.a_hat + 0.3;
    p.hyper.b = probe.parts.b_hat - 0.3;
    let base = p.params();
    let base_key = active_set(&p, &region);
    let h = 1e-6;
    let mut worst = 0.0f64;
    let (mut checked, mut skipped, mut nonzero) = (0, 0, 0);
    for (agg, seed) in [(Aggregation::Mean, 4u64), (Aggregation::Max, 5), (Aggregation::Union, 6)] {
        let g = loss_gradient(&p, &region, agg).gradient.unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..50 {
            let i = rng.gen_range(0..base.len());
            let at = |d: f64| {
                let mut q = p.clone();
                let mut v = base.clone();
                v[i] += d;
                q.set_params(&v);
                q
            };
            let (qp, qm) = (at(h), at(-h));
            if active_set(&qp, &region) != base_key || active_set(&qm, &region) != base_key {
                skipped += 1;
                continue;
            }
            let fd = (loss(&qp, &region, agg).value - loss(&qm, &region, agg).value) / (2.0 * h);
            let scale = g[i].abs().max(fd.abs());
            let err = if scale > 1e-6 {
                nonzero += 1;
                (g[i] - fd).abs() / scale
            } else {
                (g[i] - fd).abs()
            };
            worst = worst.max(err);
            checked += 1;
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-4 && checked + skipped == 150 && nonzero >= 100 && elapsed < Duration::from_secs(60),
        format!("max relative error {worst:.2e} over {checked} coordinates ({nonzero} with |gradient| > 1e-6, {skipped} near ties), {elapsed:.1?}"),
    )
}

fn planar_end_to_end() -> Outcome {
    let start = Instant::now();
    let system = benchmark_system("planar_nonlinear").unwrap();
    let hyper = Hyper { a: 0.01, b: 100.0, c: 0.1 };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let problem = ContractionProblem::warm_started(system, hyper, &WarmStart::default(), &mut rng).unwrap();
    let region = Region::new(problem.system.default_region(), vec![8, 8]).unwrap();
    let cfg = CurriculumConfig {
        max_steps: 2000,
        ..CurriculumConfig::default()
    };
    let out = train_curriculum(problem, &region, &AdamW::default(), &cfg, |_| {});
    let p = out.problem;
    let final_loss = loss(&p, &region, Aggregation::Mean).value;
    let cert = certify_region(&p, &region);
    let fals = falsify_by_sampling(&p, &region, 10_000, 1);
    let reference = equilibrium_reference(&p.system, 5.0 / hyper.c, 0.01).unwrap();
    let starts: Vec<Vec<f64>> = (0..10).map(|_| region.sample(&mut rng)).collect();
    let sim = simulate(&p, &reference, &starts, 0.01).unwrap();
    let rates: Vec<f64> = sim.trajectories.iter().map(|t| t.fitted_rate.unwrap_or(f64::INFINITY)).collect();
    let worst_rate = rates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let elapsed = start.elapsed();
    let ok = final_loss <= 0.0
        && out.state.step <= 2000
        && cert.verdict == Verdict::Certified
        && !fals.found_violation()
        && worst_rate <= -0.9 * hyper.c
        && elapsed < Duration::from_secs(600);
    outcome(
        ok,
        format!(
            "loss {final_loss:.1e} after {} steps, certificate {:?} (max lambda {:.2e}), sampled mu2 max {:.3}, worst decay rate {worst_rate:.3} (need <= {:.3}), {elapsed:.1?}",
            out.state.step,
            cert.verdict,
            cert.max_lambda(),
            fals.worst_mu2,
            -0.9 * hyper.c
        ),
    )
}

fn quadrotor_scaled() -> Outcome {
    let start = Instant::now();
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/quadrotor_scaled.toml");
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let mut sink = std::io::sink();
    let trained = cli::cmd_train(&config, &run, None, &mut sink);
    let verified = cli::cmd_verify(&run.join(cli::CHECKPOINT_FILE), &config, None, &mut sink);
    let steps = std::fs::read_to_string(run.join(cli::LOG_FILE)).map_or(0, |s| s.lines().count().saturating_sub(1));
    let elapsed = start.elapsed();
    match (trained, verified) {
        (Ok(c), Ok(_)) => outcome(
            elapsed < Duration::from_secs(3600),
            format!(
                "n = 30 certified and verified over {} cells, max lambda {:.3e}, a_hat {:.3}, b_hat {:.3}, {steps} log rows, {elapsed:.1?}",
                c.cell_lambdas.len(),
                c.max_lambda(),
                c.a_hat,
                c.b_hat
            ),
        ),
        (t, v) => outcome(
            false,
            format!("train {:?}, verify {:?}", t.err().map(|e| e.message), v.err().map(|e| e.message)),
        ),
    }
}

fn tracking_identities() -> Outcome {
    let p = perturbed("quadrotor10", 6, 16, 0.05, 0.001);
    let region = p.system.default_region();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut exact = true;
    for _ in 0..200 {
        let xr = sample_box(&mut rng, &region);
        let ur: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        exact &= tracking_control(&p.policy, &xr, &xr, &ur) == ur;
    }
    let hover = flat_reference(&TrajectoryShape::by_name("hover").unwrap(), 2.0, 0.01).unwrap();
    let (xe, ue) = p.system.equilibrium();
    let hover_eq = hover.states.iter().all(|x| *x == xe) && hover.inputs.iter().all(|u| *u == ue);

    let shape = TrajectoryShape::by_name("figure_eight").unwrap();
    let reference = flat_reference(&shape, 6.0, 1e-3).unwrap();
    let err = |dt: f64| {
        let sim = simulate(&p, &reference, &[reference.states[0].clone()], dt).unwrap();
        let end = sim.trajectories[0].states.last().unwrap().clone();
        let truth = shape.state(6.0).unwrap();
        end.iter().zip(&truth).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    };
    let ratio = err(0.1) / err(0.05);
    let ok = exact && hover_eq && (ratio.log2() - 4.0).abs() <= 0.3;
    outcome(
        ok,
        format!(
            "u(x_ref) == u_ref: {exact}, hover == equilibrium: {hover_eq}, error ratio on halving dt {ratio:.2} (order {:.2})",
            ratio.log2()
        ),
    )
}

const DETERMINISM_CONFIG: &str = r#"
system = "planar_nonlinear"
seed = 5

[region]
partitions = [4, 4]

[hyper]
a = 0.01
b = 100.0
c = 0.05

[network]
policy_hidden = [16]
metric_hidden = [16]

[curriculum]
target = 60
increment = 5
"#;

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(&config, DETERMINISM_CONFIG).unwrap();
    let mut artifacts = Vec::new();
    for (k, threads) in [1usize, 1, 4].into_iter().enumerate() {
        let out = dir.path().join(format!("run{k}"));
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let res = pool.install(|| cli::cmd_train(&config, &out, None, &mut std::io::sink()));
        if let Err(e) = res {
            return outcome(false, format!("run {k} failed: {}", e.message));
        }
        let read = |f: &str| std::fs::read(out.join(f)).unwrap();
        artifacts.push((read(cli::LOG_FILE), read(cli::CERTIFICATE_FILE), read(cli::CHECKPOINT_FILE)));
    }
    let same = artifacts.windows(2).all(|w| w[0] == w[1]);
    outcome(
        same,
        format!(
            "log, certificate and checkpoint byte-identical across 1, 1 and 4 threads: {same} ({} log bytes)",
            artifacts[0].0.len()
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("scalar dependency gap", scalar_dependency_gap),
        ("symmetric/asymmetric equivalence", symmetric_equivalence),
        ("corner search exactness", corner_exactness),
        ("Metzler counterexample", metzler_counterexample),
        ("hull soundness", hull_soundness),
        ("gradient fidelity", gradient_fidelity),
        ("planar end to end", planar_end_to_end),
        ("quadrotor scaled run", quadrotor_scaled),
        ("tracking identities", tracking_identities),
        ("determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = (i + 1).to_string();
        if !filter.is_empty() && !filter.iter().any(|s| *s == id) {
            continue;
        }
        let res = f();
        if !res.pass {
            failed += 1;
        }
        println!(
            "criterion {id:>2} {name}: {} ({})",
            if res.pass { "PASS" } else { "FAIL" },
            res.detail
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
