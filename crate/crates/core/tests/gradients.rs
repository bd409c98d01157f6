use exrec::diagnostics::GradOp;

#[test]
fn every_tensorkit_op_passes_finite_differences() {
    for op in GradOp::ALL {
        let mut worst = (0.0, String::new());
        for seed in 0..20 {
            let r = op.check(seed).unwrap();
            if r.max_rel_error > worst.0 {
                worst = (r.max_rel_error, format!("seed {seed}: {}", r.worst));
            }
        }
        println!(
            "{:<16} max rel err {:.3e} ({})",
            op.name(),
            worst.0,
            worst.1
        );
        assert!(worst.0 <= 1e-4, "{} failed: {:?}", op.name(), worst);
    }
}
