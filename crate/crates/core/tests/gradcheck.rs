//! Finite-difference verification of every analytic gradient.

use rartrack::graddesc::gradcheck::{
    check_graph, check_modules, GradcheckOptions, GRAPH_TOL, MODULE_TOL,
};

fn show(report: &rartrack::graddesc::gradcheck::GradcheckReport) {
    for g in &report.groups {
        println!(
            "{:>16} {:<36} n={:<5} rel={:.3e}",
            g.module, g.name, g.count, g.rel_error
        );
    }
}

#[test]
fn module_gradients_match_differences() {
    for seed in [0, 1] {
        let report = check_modules(&GradcheckOptions {
            seed,
            ..Default::default()
        })
        .unwrap();
        show(&report);
        assert!(report.passed(), "seed {seed}: worst {:e}", report.worst(""));
        assert!(report.worst("") < MODULE_TOL);
    }
}

#[test]
fn full_graph_gradients_match_differences() {
    let report = check_graph(&GradcheckOptions::default()).unwrap();
    show(&report);
    assert!(report.worst("graph") < GRAPH_TOL);
}

#[test]
fn perturbed_gradients_are_caught() {
    let report = check_modules(&GradcheckOptions {
        perturb: 0.01,
        ..Default::default()
    })
    .unwrap();
    assert!(!report.passed());
}
