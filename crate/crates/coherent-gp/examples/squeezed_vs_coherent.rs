//! The two-mode squeezed pair kernel: its truncated Laguerre series against
//! the dense Fock-space oracle, and the zero-squeezing reduction to the
//! coherent product kernel.
//!
//! Run with: cargo run --example squeezed_vs_coherent

use coherent_gp::fock::{overlap, pair_state_oracle};
use coherent_gp::kernels::{
    dim_kernel_analytic, squeezed_pair_kernel, Hyperparams, Kernel, KernelFamily, KernelSpec,
    SQRT_2,
};

fn main() {
    println!("series (cap 8) vs dense two-mode oracle (40 levels per mode):");
    let cases = [
        (1.0, 0.5, 0.8, -0.2, 0.30),
        (0.6, -0.9, 0.1, 0.4, 0.20),
        (1.4, 0.2, -0.5, 0.7, 0.15),
        (0.3, 0.3, 0.2, 0.25, 0.50),
    ];
    for (xi, xj, xpi, xpj, d) in cases {
        let series = squeezed_pair_kernel(xi, xj, xpi, xpj, 1.0, 1.0, d, 8).unwrap();
        let ket = pair_state_oracle(40, xi / SQRT_2, xj / SQRT_2, xi * xj * d).unwrap();
        let bra = pair_state_oracle(40, xpi / SQRT_2, xpj / SQRT_2, xpi * xpj * d).unwrap();
        let dense = overlap(&bra, &ket).unwrap().norm();
        println!(
            "  x=({xi:5.2},{xj:5.2}) x'=({xpi:5.2},{xpj:5.2}) d={d:.2}: \
             series {series:.10}  dense {dense:.10}  |diff| {:.1e}",
            (series - dense).abs()
        );
    }

    println!();
    println!("zero squeezing collapses to the coherent product kernel:");
    let hp = Hyperparams::new(1.0, vec![1.0, 0.8, 1.3]).with_couplings(vec![0.0; 3]);
    let squeezed = Kernel::new(KernelSpec::new(KernelFamily::squeezed(), 3), hp.clone()).unwrap();
    let x = [0.9, -0.4, 0.6];
    let xp = [0.1, 0.3, -0.2];
    let k_sq = squeezed.eval(&x, &xp).unwrap();
    let k_coh: f64 = (0..3)
        .map(|i| dim_kernel_analytic(x[i], xp[i], hp.c[i]))
        .product();
    println!("  squeezed(d=0) = {k_sq:.12}");
    println!("  coherent      = {k_coh:.12}");

    println!();
    println!("entanglement changes the kernel once d > 0:");
    let hp = Hyperparams::new(1.0, vec![1.0, 0.8, 1.3]).with_couplings(vec![0.3, 0.1, 0.2]);
    let squeezed = Kernel::new(KernelSpec::new(KernelFamily::squeezed(), 3), hp).unwrap();
    println!("  squeezed(d>0) = {:.12}", squeezed.eval(&x, &xp).unwrap());
}
