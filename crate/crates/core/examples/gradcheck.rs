//! Compares every analytic gradient with central finite differences.

use rartrack::graddesc::gradcheck::{run_all, GradcheckOptions};

fn main() -> rartrack::error::Result<()> {
    let report = run_all(&GradcheckOptions::default())?;
    for g in &report.groups {
        let mark = if g.passed() { "ok" } else { "FAIL" };
        println!("{:<14} {:<34} n={:<5} rel {:.2e} {mark}", g.module, g.name, g.count, g.rel_error);
    }
    println!("all passed: {}", report.passed());
    Ok(())
}
