//! Car-on-hill dynamics regression: predict the next position and velocity
//! from (x, v, a) samples, comparing the coherent kernel with the two-mode
//! squeezed kernel warm-started at zero squeezing so its evidence can only
//! improve on the coherent optimum.
//!
//! Uses 3 training sets to stay quick; the full ten-set
//! sweep is available through the `dynamics` subcommand.
//!
//! Run with: cargo run --example dynamics_regression

use coherent_gp::kernels::KernelFamily;
use coherent_gp::tasks::{run_dynamics_sweep, HillConfig};

fn main() {
    let cfg = HillConfig::default();
    let sweep = run_dynamics_sweep(&cfg, &KernelFamily::squeezed(), 3, 0).unwrap();
    println!("set  r2_x(sq)   r2_v(sq)   lml_v(sq)   lml_v(coh)  squeezing wins evidence?");
    for s in &sweep.sets {
        let base = s.baseline.as_ref().unwrap();
        println!(
            "{:3}  {:9.5}  {:9.5}  {:10.3}  {:10.3}  {}",
            s.set,
            s.r2_x,
            s.r2_v,
            s.lml_v,
            base.lml_v,
            if s.lml_v >= base.lml_v { "yes" } else { "no" }
        );
    }
    println!();
    println!(
        "squeezed mean r2: x = {:.5} (std {:.1e}), v = {:.5} (std {:.1e})",
        sweep.mean_r2_x, sweep.std_r2_x, sweep.mean_r2_v, sweep.std_r2_v
    );
    println!("optimized couplings of set 0: {:?}", sweep.sets[0].hp_v.d);
}
