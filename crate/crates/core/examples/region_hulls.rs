// Interval hulls of the contraction matrix and the metric over a
// partitioned region, checked against sampled states.

use contraction_cert::boundprop::{hull_over_region, Region};
use contraction_cert::certify::{pointwise_g, rohn_max_mu2_pruned};
use contraction_cert::problem::{ContractionProblem, Hyper, WarmStart};
use contraction_cert::systems::{benchmark_system, ControlAffineSystem};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Res = Result<(), Box<dyn std::error::Error>>;

pub fn run_example() -> Res {
    let system = benchmark_system("planar_nonlinear")?;
    let hyper = Hyper { a: 0.01, b: 100.0, c: 0.1 };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let problem = ContractionProblem::warm_started(system, hyper, &WarmStart::default(), &mut rng)?;
    let bounds = problem.system.default_region();

    for parts in [1, 2, 4, 8] {
        let region = Region::new(bounds.clone(), vec![parts, parts])?.scaled(0.3);
        let report = hull_over_region(&problem, &region)?;
        let worst = report
            .cells
            .iter()
            .map(|c| rohn_max_mu2_pruned(&c.g).map(|r| r.value))
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);
        let mut escaped = 0;
        for _ in 0..500 {
            let x = region.sample(&mut rng);
            let cell = region.locate(&x).expect("sample lies in the region");
            if !report.cells[cell].g.contains_with_tol(&pointwise_g(&problem, &x), 1e-12) {
                escaped += 1;
            }
        }
        println!(
            "{parts}x{parts} grid: worst cell bound {worst:+.4}, widest cell hull {:.3}, samples outside hull {escaped}",
            report.cells.iter().map(|c| c.g.max_width()).fold(0.0, f64::max)
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Res {
    run_example()
}
