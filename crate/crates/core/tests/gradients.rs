#[path = "support/gradcases.rs"]
mod gradcases;

const TOLERANCE: f64 = 1e-4;

#[test]
fn every_op_matches_central_differences() {
    for (name, run) in gradcases::op_cases() {
        let report = run().unwrap();
        println!("{name}: {report:?}");
        assert!(report.checked > 0, "{name}: nothing checked");
        assert!(report.max_relative_error < TOLERANCE, "{name}: {report:?}");
    }
}

#[test]
fn autoencoder_matches_central_differences() {
    let (name, run) = gradcases::model_case();
    let report = run().unwrap();
    println!("{name}: {report:?}");
    assert!(report.checked > 0);
    assert!(report.max_relative_error < TOLERANCE, "{report:?}");
}
