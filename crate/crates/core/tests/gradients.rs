use effgcn::nn::probe::{run_probe, ProbeTarget};
use effgcn::tensor::GradCheckOptions;

#[test]
fn every_probe_passes_in_f64() {
    let opts = GradCheckOptions::default();
    for target in ProbeTarget::all() {
        let t = std::time::Instant::now();
        let report = run_probe::<f64>(target, &opts).unwrap();
        for e in &report.entries {
            assert!(e.passed, "{target} {}: rel error {:e}", e.name, e.max_rel_error);
        }
        eprintln!("{target}: {} tensors, max {:e}, {:?}", report.entries.len(), report.max_rel_error(), t.elapsed());
    }
}
