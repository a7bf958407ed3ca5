// LQR warm start for the quadrotor: the Riccati solution seeds the metric
// factor, the gain seeds the policy, and contraction holds near hover only.

use contraction_cert::boundprop::Region;
use contraction_cert::certify::{falsify_by_sampling, pointwise_g};
use contraction_cert::linalg::{mu2, solve_care, Matrix};
use contraction_cert::problem::{ContractionProblem, Hyper, WarmStart};
use contraction_cert::systems::{benchmark_system, ControlAffineSystem};
use contraction_cert::train::stage_region;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Res = Result<(), Box<dyn std::error::Error>>;

pub fn run_example() -> Res {
    let system = benchmark_system("quadrotor10")?;
    let (a, b) = system.linearization();
    let care = solve_care(&a, &b, &Matrix::identity(10), &Matrix::identity(4))?;
    println!("CARE residual {:.2e}", care.residual);

    let hyper = Hyper { a: 0.01, b: 100.0, c: 0.001 };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let problem = ContractionProblem::warm_started(system, hyper, &WarmStart::default(), &mut rng)?;
    let (x_eq, _) = problem.system.equilibrium();
    println!("mu2(G) at hover {:.4}", mu2(&pointwise_g(&problem, &x_eq))?);

    let full = Region::whole(problem.system.default_region());
    for n in [10, 30, 100] {
        let report = falsify_by_sampling(&problem, &stage_region(&full, n), 2000, 1);
        println!(
            "n = {n:3}: largest sampled mu2(G) {:+.4} {}",
            report.worst_mu2,
            if report.found_violation() { "(not contracting)" } else { "" }
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Res {
    run_example()
}
