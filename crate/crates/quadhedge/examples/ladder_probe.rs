use quadhedge::market::{ModelParams, Payoff};
use quadhedge::primal::{superrep_price, PrimalError, SolveOpts};
use std::time::Instant;

fn main() {
    for lookahead in [0usize, 1] {
        println!("--- lookahead {lookahead} ---");
        for n in [2usize, 4, 6, 8, 10, 12] {
            let p = ModelParams::new(n, 0.0, 1.0, 1.0, 0.5, lookahead, 1).unwrap();
            let opts = SolveOpts { tolerance: 1e-3, max_iterations: 40_000, ..Default::default() };
            let t0 = Instant::now();
            let (price, lb, gap, iters) = match superrep_price(&p, &Payoff::call(0.0), &opts) {
                Ok(r) => (r.price, r.lower_bound, r.certified_gap, r.iterations),
                Err(PrimalError::NoConvergence { report, .. }) => {
                    (report.price, report.lower_bound, report.certified_gap, report.iterations)
                }
                Err(e) => panic!("{e}"),
            };
            println!(
                "n={n:2}  price={price:.6}  lb={lb:.6}  gap={gap:.2e}  iters={iters}  {:.1?}",
                t0.elapsed()
            );
        }
    }
}
