// Curriculum training on the quadrotor over growing regions (n/100)·X with a
// 5x5x5 grid over thrust, roll and pitch. Pass the final stage as the first
// argument (default 30, the full region is 100).

use contraction_cert::boundprop::Region;
use contraction_cert::problem::{ContractionProblem, Hyper, WarmStart};
use contraction_cert::systems::{benchmark_system, quad_idx, ControlAffineSystem};
use contraction_cert::train::{train_curriculum, AdamW, CurriculumConfig, TrainEvent, TrainStatus};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Res = Result<(), Box<dyn std::error::Error>>;

fn run(target: u32) -> Res {
    let system = benchmark_system("quadrotor10")?;
    let hyper = Hyper { a: 0.01, b: 100.0, c: 0.001 };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let problem = ContractionProblem::warm_started(system, hyper, &WarmStart::default(), &mut rng)?;
    let mut parts = vec![1; 10];
    for i in [quad_idx::TAU, quad_idx::PHI, quad_idx::THETA] {
        parts[i] = 5;
    }
    let region = Region::new(problem.system.default_region(), parts)?;
    let cfg = CurriculumConfig { target, ..CurriculumConfig::default() };
    let start = std::time::Instant::now();
    let outcome = train_curriculum(problem, &region, &AdamW::default(), &cfg, |ev| {
        if let TrainEvent::Advanced { stage, state, .. } = ev {
            println!("step {:4}: n = {stage} reached zero loss", state.step);
        }
    });
    println!(
        "{:?} after {} steps in {:.1?}",
        outcome.status,
        outcome.state.step,
        start.elapsed()
    );
    if let Some(cert) = &outcome.certificate {
        println!(
            "max cell lambda {:.4e}, metric bounds [{:.4}, {:.4}]",
            cert.max_lambda(),
            cert.a_hat,
            cert.b_hat
        );
    }
    if outcome.status != TrainStatus::Certified {
        return Err(format!("training ended with {:?}", outcome.status).into());
    }
    Ok(())
}

pub fn run_example() -> Res {
    // the warm start alone reaches n = 16, so this stays quick
    run(20)
}

#[allow(dead_code)]
fn main() -> Res {
    let target = std::env::args().nth(1).map_or(Ok(30), |s| s.parse())?;
    run(target)
}
