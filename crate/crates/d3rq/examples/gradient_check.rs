//! Finite-difference validation of every gradient path: the softmax
//! cross-entropy head, MLPs, the conv layer, and the agent's full critic
//! and actor losses.
//!
//!     cargo run --release --example gradient_check

fn main() -> d3rq::Result<()> {
    let report = d3rq::verify::gradients_suite()?;
    println!("gradient suite finished in {:.2}s", report.seconds);
    for check in &report.checks {
        println!(
            "  [{}] {}: worst relative error {:.3e} (tolerance {:.0e})",
            if check.pass { "PASS" } else { "FAIL" },
            check.name,
            check.observed,
            check.tolerance,
        );
    }
    if !report.passed() {
        std::process::exit(1);
    }
    Ok(())
}
