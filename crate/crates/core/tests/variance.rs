//! In-sample variance estimates against the spread of the estimate over
//! replicates on one frozen observation sequence.

use segpf::experiment::{run_calibration, ExperimentConfig};

fn calibration_ratio(cfg: ExperimentConfig) -> f64 {
    let (_, summary) = run_calibration(&cfg).unwrap();
    summary[0].calibration_ratio.unwrap()
}

#[test]
fn single_filter_variance_is_calibrated_at_final_stage() {
    let cfg = ExperimentConfig {
        horizon: 10,
        segments: 1,
        particles: 1000,
        replicates: 500,
        coords: vec![10],
        seed: 11,
        ..ExperimentConfig::calibration()
    };
    let ratio = calibration_ratio(cfg);
    assert!((0.6..=1.6).contains(&ratio), "ratio {ratio}");
}

#[test]
fn two_segment_variance_is_calibrated() {
    let cfg = ExperimentConfig { particles: 500, replicates: 500, seed: 12, ..ExperimentConfig::calibration() };
    let ratio = calibration_ratio(cfg);
    assert!((0.6..=1.6).contains(&ratio), "ratio {ratio}");
}
