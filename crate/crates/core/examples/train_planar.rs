// Trains the planar system over its whole region, certifies the result,
// searches for counterexamples and measures the tracking error decay.

use contraction_cert::boundprop::Region;
use contraction_cert::certify::{certify_region, falsify_by_sampling, Verdict};
use contraction_cert::problem::{ContractionProblem, Hyper, WarmStart};
use contraction_cert::systems::{benchmark_system, ControlAffineSystem};
use contraction_cert::tracking::{equilibrium_reference, simulate};
use contraction_cert::train::{train_curriculum, AdamW, CurriculumConfig, TrainEvent};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Res = Result<(), Box<dyn std::error::Error>>;

pub fn run_example() -> Res {
    let system = benchmark_system("planar_nonlinear")?;
    let hyper = Hyper { a: 0.01, b: 100.0, c: 0.1 };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let problem = ContractionProblem::warm_started(system, hyper, &WarmStart::default(), &mut rng)?;
    let region = Region::new(problem.system.default_region(), vec![8, 8])?;

    let cfg = CurriculumConfig::default();
    let outcome = train_curriculum(problem, &region, &AdamW::default(), &cfg, |ev| {
        if let TrainEvent::Advanced { stage, state, .. } = ev {
            if stage % 20 == 0 {
                println!("step {:4}: region {stage}% certified", state.step);
            }
        }
    });
    println!("{:?} after {} steps", outcome.status, outcome.state.step);
    let problem = outcome.problem;

    let cert = certify_region(&problem, &region);
    println!(
        "certificate: {:?}, max cell lambda {:.4e}, metric bounds [{:.3}, {:.3}]",
        cert.verdict,
        cert.max_lambda(),
        cert.a_hat,
        cert.b_hat
    );
    if cert.verdict != Verdict::Certified {
        return Err("full region was not certified".into());
    }
    let report = falsify_by_sampling(&problem, &region, 10_000, 2);
    println!("largest sampled mu2(G): {:.4}", report.worst_mu2);

    let reference = equilibrium_reference(&problem.system, 50.0, 0.01)?;
    let starts: Vec<Vec<f64>> = (0..5).map(|_| region.sample(&mut rng)).collect();
    let sim = simulate(&problem, &reference, &starts, 0.01)?;
    for t in &sim.trajectories {
        println!(
            "from ({:+.2}, {:+.2}): fitted decay rate {:.3} (required <= {:.3})",
            t.initial[0],
            t.initial[1],
            t.fitted_rate.unwrap_or(f64::NAN),
            -0.9 * hyper.c
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Res {
    run_example()
}
