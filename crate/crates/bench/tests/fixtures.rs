use kmsig_bench::{angle_frame, scenario, snapshots};

#[test]
fn fixture_frame_covers_the_scenario() {
    let cfg = scenario();
    let frame = angle_frame();
    assert_eq!(
        frame.n_samples(),
        (cfg.duration / cfg.sample_period).round() as usize
    );
    let x = snapshots(&frame, 240);
    assert_eq!(x.data().shape(), (frame.n_sensors(), 240));
}

#[test]
fn fixture_attack_hits_one_sensor() {
    let out = scenario().run().unwrap();
    assert_eq!(out.labels.iter().filter(|l| **l).count(), 1);
    assert!(out.scores.n_windows() > 0);
}
