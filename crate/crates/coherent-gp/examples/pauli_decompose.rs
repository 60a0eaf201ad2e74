//! Decompose the truncated displacement generator i(b~dagger - b~) into Pauli
//! strings for N = 2, 4, 8, 16 and verify each decomposition reconstructs the
//! generator exactly.
//!
//! Run with: cargo run --example pauli_decompose

use coherent_gp::pauli::pauli_decompose;

fn main() {
    for levels in [2usize, 4, 8, 16] {
        let sum = pauli_decompose(levels).expect("power-of-two truncation");
        let residual = sum.reconstruction_residual().expect("same truncation");
        println!(
            "N = {levels:2}  ({} qubit{}): {} terms, reconstruction residual {residual:.2e}",
            sum.qubits,
            if sum.qubits == 1 { "" } else { "s" },
            sum.terms.len(),
        );
        for term in &sum.terms {
            println!("    {:+10.6}  {}", term.coefficient, term.string());
        }
    }
    println!();
    println!("The N = 4 coefficients are closed forms:");
    println!("    (1 + sqrt3)/2 = {:+.10}", (1.0 + 3f64.sqrt()) / 2.0);
    println!("    (1 - sqrt3)/2 = {:+.10}", (1.0 - 3f64.sqrt()) / 2.0);
    println!("    +/- sqrt2/2   = {:+.10}", 2f64.sqrt() / 2.0);
}
