//! Truncation convergence: the finite-dimensional coherent kernel approaches
//! the squared exponential as the Fock-space level count grows.
//!
//! Run with: cargo run --example coherent_truncation

use coherent_gp::kernels::{dim_kernel_analytic, dim_kernel_finite};

fn main() {
    let c = 1.0;
    println!("separation |x-x'|/c = 1.0:");
    let exact = dim_kernel_analytic(1.0, 0.0, c);
    println!("  analytic (squared exponential): {exact:.10}");
    for levels in [2usize, 4, 8, 16, 32, 64] {
        let approx = dim_kernel_finite(1.0, 0.0, c, levels).unwrap();
        println!(
            "  C-{levels:<2}: {approx:.10}   |error| = {:.3e}",
            (approx - exact).abs()
        );
    }

    println!();
    println!("max |C-N - analytic| over |x-x'|/c <= 2 (100-point grid):");
    for levels in [4usize, 8, 16, 32] {
        let err = (0..100)
            .map(|k| {
                let dx = 2.0 * (k + 1) as f64 / 100.0;
                (dim_kernel_finite(dx, 0.0, c, levels).unwrap() - dim_kernel_analytic(dx, 0.0, c))
                    .abs()
            })
            .fold(0.0f64, f64::max);
        println!("  C-{levels:<2}: {err:.3e}");
    }
}
