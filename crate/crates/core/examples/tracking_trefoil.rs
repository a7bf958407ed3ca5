// Flatness-based references for the quadrotor and the explicit tracking
// controller u = π(x) − π(x') + u', simulated from perturbed starts.

use contraction_cert::boundprop::Region;
use contraction_cert::problem::{ContractionProblem, Hyper, WarmStart};
use contraction_cert::systems::benchmark_system;
use contraction_cert::tracking::{ball_tube_check, flat_reference, simulate, TrajectoryShape};
use contraction_cert::systems::ControlAffineSystem;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Res = Result<(), Box<dyn std::error::Error>>;

pub fn run_example() -> Res {
    let system = benchmark_system("quadrotor10")?;
    let hyper = Hyper { a: 0.01, b: 100.0, c: 0.001 };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let problem = ContractionProblem::warm_started(system, hyper, &WarmStart::default(), &mut rng)?;
    let region = Region::whole(problem.system.default_region());

    for name in ["hover", "figure_eight", "helix", "trefoil"] {
        let shape = TrajectoryShape::by_name(name).expect("known shape");
        let reference = flat_reference(&shape, 20.0, 0.01)?;
        let tube = ball_tube_check(&region, &reference, 0.5, &hyper);
        let starts: Vec<Vec<f64>> = (0..4)
            .map(|_| {
                let mut x = reference.states[0].clone();
                for v in x.iter_mut().take(6) {
                    *v += rng.gen_range(-0.5..0.5);
                }
                x
            })
            .collect();
        let sim = simulate(&problem, &reference, &starts, 0.01)?;
        let final_err = sim
            .trajectories
            .iter()
            .map(|t| t.d_hat.last().copied().unwrap_or(f64::NAN) / t.d_hat[0])
            .fold(0.0, f64::max);
        println!(
            "{name:>12}: feasibility {:.1e}, tube radius {:.2} (admissible start {:.4}), d_hat(20)/d_hat(0) <= {final_err:.2e}",
            reference.feasibility_residual, tube.max_radius, tube.initial_radius
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Res {
    run_example()
}
