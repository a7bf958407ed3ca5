// Exact largest logarithmic norm over an interval matrix from its sign
// corners, compared with brute force and with a Metzler majorant.

use contraction_cert::certify::{brute_force_max_mu2, metzler_majorant_check, rohn_max_mu2};
use contraction_cert::interval::{Interval, IntervalMatrix};
use contraction_cert::linalg::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Res = Result<(), Box<dyn std::error::Error>>;

pub fn run_example() -> Res {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst_gap = 0.0f64;
    for _ in 0..20 {
        let data = (0..9)
            .map(|_| {
                let c = rng.gen_range(-2.0..2.0);
                let r = rng.gen_range(0.0..0.5);
                Interval::new(c - r, c + r)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let a = IntervalMatrix::new(3, 3, data)?;
        let corners = rohn_max_mu2(&a)?;
        let brute = brute_force_max_mu2(&a)?;
        worst_gap = worst_gap.max((corners.max_mu2 - brute).abs());
    }
    println!("3x3 interval matrices: corner search vs all 512 vertices, worst gap {worst_gap:.2e}");

    // A = -t·11ᵀ with n = 4: every member is negative semidefinite
    let n = 4;
    let t = 1.0;
    let a = IntervalMatrix::point(&Matrix::from_vec(n, n, vec![-t; n * n]));
    let exact = rohn_max_mu2(&a)?;
    let metzler = metzler_majorant_check(&a)?;
    println!("all-(-1) 4x4: corner search gives {:.3}", exact.max_mu2);
    println!(
        "               Metzler majorant gives {:.3} ({})",
        metzler.max_eig,
        if metzler.certified { "certified" } else { "inconclusive" }
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> Res {
    run_example()
}
