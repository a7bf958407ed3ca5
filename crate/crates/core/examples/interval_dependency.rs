// Bounding the scalar contraction condition two ways over the same boxes:
// the symmetric form repeats Θ and loses precision, the factored form does not.

use contraction_cert::boundprop::{assemble_g_hull, assemble_s_hull};
use contraction_cert::interval::{Interval, IntervalMatrix};

type Res = Result<(), Box<dyn std::error::Error>>;

fn scalar(lo: f64, hi: f64) -> Result<IntervalMatrix, Box<dyn std::error::Error>> {
    Ok(IntervalMatrix::column(&[Interval::new(lo, hi)?]))
}

pub fn run_example() -> Res {
    let theta = scalar(0.5, 1.0)?;
    let theta_dot = scalar(-2.0, -1.5)?;
    let jac = scalar(-1.0, 1.0)?;
    let rate = 0.5;

    let s = assemble_s_hull(&theta, &theta_dot, &jac, rate)?.get(0, 0);
    let g = assemble_g_hull(&theta, &theta_dot, &jac, rate)?.get(0, 0);
    println!("symmetric form      S  in {s}");
    println!("factored form      2G  in [{}, {}]", 2.0 * g.lo(), 2.0 * g.hi());

    // the true range of 2·θ·(θ̇ + θ(j + c)) over the boxes, by a dense grid
    let mut hi = f64::NEG_INFINITY;
    let k = 40;
    for a in 0..=k {
        for b in 0..=k {
            for j in 0..=k {
                let th = 0.5 + 0.5 * a as f64 / k as f64;
                let td = -2.0 + 0.5 * b as f64 / k as f64;
                let jj = -1.0 + 2.0 * j as f64 / k as f64;
                hi = hi.max(2.0 * th * (td + th * (jj + rate)));
            }
        }
    }
    println!("sampled maximum       {hi:.4}");
    if s.hi() > 0.0 && g.hi() <= 0.0 {
        println!("only the factored bound certifies contraction here");
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Res {
    run_example()
}
