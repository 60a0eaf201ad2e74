//! GP reinforcement learning on the car-on-hill task: two GPs learn the
//! dynamics from sampled transitions, a value GP is iterated to its fixed
//! point over a state grid, and the greedy policy drives the true dynamics.
//!
//! Run with: cargo run --example rl_car_on_hill

use coherent_gp::kernels::KernelFamily;
use coherent_gp::tasks::{run_rl, HillConfig};

fn main() {
    let cfg = HillConfig::default();
    println!(
        "valley at x = {:.4}, goal at x >= {:.2}, {} actions up to |a| = {:.2e}",
        cfg.valley_position(),
        cfg.goal_position,
        cfg.n_actions,
        cfg.accel_bound()
    );
    for family in [
        KernelFamily::AnalyticCoherent,
        KernelFamily::FiniteCoherent { levels: 8 },
        KernelFamily::FiniteCoherent { levels: 16 },
    ] {
        let label = family.label();
        let (report, episode, policy) = run_rl(&cfg, &family, 400, 500, 0).unwrap();
        print!(
            "{label:9}: value iteration {} sweeps ({}), ",
            report.vi_iterations,
            if report.vi_converged {
                "converged"
            } else {
                "budget hit"
            }
        );
        match report.steps_to_goal {
            Some(n) => println!(
                "reached the goal at step {n}, held it {}/{} steps",
                report.hold_steps, report.rollout_steps
            ),
            None => println!("never reached the goal in {} steps", report.rollout_steps),
        }
        // a short trajectory excerpt around the climb
        if label == "coherent" {
            let excerpt: Vec<String> = episode
                .steps
                .iter()
                .step_by(5)
                .take(8)
                .map(|s| format!("({:+.2}, {:+.3})", s.x, s.v))
                .collect();
            println!("          (x, v) every 5 steps: {}", excerpt.join(" "));
            let _ = policy;
        }
    }
}
