//! One-dimensional GP regression of x sin(x) with the quantum kernel ladder:
//! the analytic coherent kernel, finite truncations, and qubit-Trotterized
//! preparations, each with box-bounded marginal-likelihood optimization.
//!
//! Run with: cargo run --example regress_xsinx

use coherent_gp::kernels::KernelFamily;
use coherent_gp::tasks::{run_regress1d, TargetFunction};

fn main() {
    let seed = 0;
    println!("x sin(x), 40 noisy training points, 100 noiseless test points, seed {seed}");
    println!(
        "{:<10} {:>8} {:>12} {:>12} {:>12}",
        "kernel", "r2", "lml", "s", "c"
    );
    for family in [
        KernelFamily::AnalyticCoherent,
        KernelFamily::FiniteCoherent { levels: 2 },
        KernelFamily::FiniteCoherent { levels: 4 },
        KernelFamily::FiniteCoherent { levels: 8 },
        KernelFamily::FiniteCoherent { levels: 16 },
        KernelFamily::QubitTrotter {
            levels: 4,
            steps: 1,
        },
        KernelFamily::QubitTrotter {
            levels: 4,
            steps: 3,
        },
    ] {
        let report = run_regress1d(TargetFunction::XSinX, family, 40, seed, 0).unwrap();
        println!(
            "{:<10} {:>8.4} {:>12.3} {:>12.4e} {:>12.4e}",
            report.kernel, report.r2, report.lml, report.hyperparams.s, report.hyperparams.c[0]
        );
    }
    println!();
    println!("two levels cannot follow the growing oscillation; four can, and the");
    println!("two-qubit preparation needs three Trotter steps to match it.");
}
