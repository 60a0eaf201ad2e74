//! Convergence of the Trotterized vacuum echo to the dense finite-dimensional
//! displacement: the error of |<0..0|U_m(theta)|0..0>|^2 against the exact
//! truncated operator, as the number of first-order steps m grows.
//!
//! The vacuum-return element is invariant under reversing the term order, so
//! the product formula converges at second order here rather than the generic
//! first order — visible in the error ratios below.
//!
//! Run with: cargo run --example trotter_echo

use coherent_gp::fock::displacement_spectrum;
use coherent_gp::pauli::{echo_probability_of, pauli_decompose};

fn main() {
    let levels = 4;
    let sum = pauli_decompose(levels).unwrap();
    let dense = displacement_spectrum(levels).unwrap();
    let thetas: Vec<f64> = (1..=20).map(|k| 0.1 * k as f64).collect();

    println!("max |echo - dense| over theta in [0.1, 2.0], N = {levels}:");
    let mut previous: Option<(usize, f64)> = None;
    for steps in [1usize, 2, 3, 4, 8, 16, 50, 200] {
        let err = thetas
            .iter()
            .map(|&t| {
                let dense_p = dense.vacuum_amplitude(t).norm_sqr();
                (echo_probability_of(&sum, t, steps).unwrap() - dense_p).abs()
            })
            .fold(0.0f64, f64::max);
        match previous {
            Some((prev_steps, prev_err)) => {
                let slope = (prev_err / err).ln() / (steps as f64 / prev_steps as f64).ln();
                println!("  m = {steps:3}: {err:.3e}   (local order {slope:.2})");
            }
            None => println!("  m = {steps:3}: {err:.3e}"),
        }
        previous = Some((steps, err));
    }

    println!();
    println!("N = 2 needs a single Trotter step (one Pauli term is exact):");
    for steps in [1usize, 5] {
        let sum2 = pauli_decompose(2).unwrap();
        let p = echo_probability_of(&sum2, 0.83, steps).unwrap();
        println!(
            "  m = {steps}: echo = {p:.12}, cos^2(0.83) = {:.12}",
            0.83f64.cos().powi(2)
        );
    }
}
