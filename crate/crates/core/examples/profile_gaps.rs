use std::time::Instant;
use thickening_core::poisson::*;
use thickening_core::rational::{rat_i64, zero};

fn main() {
    let t0 = Instant::now();
    for seed in 0..20u64 {
        let input = PoissonInput { seed, lambda: rat_i64(1, 1), recorded: None };
        let out = thicken_poisson_at_level(&input, &rat_i64(2, 1), &rat_i64(1, 4), &zero(), &rat_i64(3, 2), 1).unwrap();
        assert!(out.output.count() >= out.input.count());
    }
    println!("20 cascade runs (mass-3 window, M=1): {:?}", t0.elapsed());

    let t0 = Instant::now();
    for seed in 100..105u64 {
        let input = PoissonInput { seed, lambda: rat_i64(1, 1), recorded: None };
        let _ = thicken_poisson_at_level(&input, &rat_i64(2, 1), &rat_i64(1, 8), &zero(), &rat_i64(2, 1), 2).unwrap();
    }
    println!("5 cascade runs (M=2): {:?}", t0.elapsed());
}
