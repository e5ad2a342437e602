use svelte_hand::grasp_controller::GraspMode;
use svelte_hand::hand_model::{
    aperture_residuals, calibrate_geometry, max_aperture, ApertureTargets, CalibrationError,
    HandGeometry,
};

fn rms(r: &[f64; 3]) -> f64 {
    (r.iter().map(|v| v * v).sum::<f64>() / 3.0).sqrt()
}

/// Exhaustive 0.5 mm grid over the three free lengths.
fn grid_best(targets: &ApertureTargets) -> ([f64; 3], f64) {
    let template = HandGeometry::nominal();
    let axis = |lo: f64, hi: f64| {
        let n = ((hi - lo) / 0.5).round() as usize;
        (0..=n).map(move |i| lo + 0.5 * i as f64)
    };
    let mut best = ([0.0; 3], f64::INFINITY);
    for l in axis(40.0, 130.0) {
        for c in axis(20.0, 100.0) {
            for d in axis(5.0, 50.0) {
                let e = rms(&aperture_residuals([l, c, d], &template, targets));
                if e < best.1 {
                    best = ([l, c, d], e);
                }
            }
        }
    }
    best
}

#[test]
fn optimizer_matches_or_beats_grid_search() {
    let targets = ApertureTargets::REPORTED;
    let (grid_params, grid_rms) = grid_best(&targets);
    let cal = calibrate_geometry(&targets).unwrap();
    assert!(cal.rms <= grid_rms + 1e-9, "lm {} vs grid {grid_rms}", cal.rms);
    assert!(grid_rms < 0.5, "grid best {grid_rms} at {grid_params:?}");
    let g = &cal.geometry;
    let fitted = [g.finger_length, g.side_contact_offset, g.motor_axis_separation];
    for k in 0..3 {
        assert!((fitted[k] - grid_params[k]).abs() <= 1.0, "{fitted:?} vs {grid_params:?}");
    }
}

#[test]
fn reported_apertures_reproduced() {
    let cal = calibrate_geometry(&ApertureTargets::REPORTED).unwrap();
    for mode in GraspMode::ALL {
        let a = max_aperture(mode, &cal.geometry);
        assert!((a - ApertureTargets::REPORTED.get(mode)).abs() <= 0.5, "{mode}: {a}");
    }
    assert!(cal.rms < 1e-6);
}

#[test]
fn frozen_independent_fit() {
    // Values from an independent least-squares solver on the same model.
    let cases = [
        (ApertureTargets::REPORTED, [80.975, 63.996, 24.781]),
        (ApertureTargets::new(73.0, 90.0, 82.0), [90.509, 73.636, 35.929]),
    ];
    for (targets, expected) in cases {
        let g = calibrate_geometry(&targets).unwrap().geometry;
        let got = [g.finger_length, g.side_contact_offset, g.motor_axis_separation];
        for k in 0..3 {
            assert!((got[k] - expected[k]).abs() < 0.01, "{got:?} vs {expected:?}");
        }
    }
}

#[test]
fn wider_openings_give_longer_fingers() {
    let base = calibrate_geometry(&ApertureTargets::REPORTED).unwrap().geometry;
    let wide = calibrate_geometry(&ApertureTargets::new(73.0, 90.0, 82.0)).unwrap().geometry;
    assert!(wide.finger_length > base.finger_length);
    assert!(wide.side_contact_offset > base.side_contact_offset);
    assert!(wide.motor_axis_separation > base.motor_axis_separation);
}

#[test]
fn rejects_bad_targets() {
    for t in [
        ApertureTargets::new(0.0, 80.0, 72.0),
        ApertureTargets::new(63.0, -1.0, 72.0),
        ApertureTargets::new(63.0, 80.0, f64::NAN),
    ] {
        assert!(matches!(calibrate_geometry(&t), Err(CalibrationError::InvalidTargets(_))));
    }
    let err = calibrate_geometry(&ApertureTargets::new(10.0, 80.0, 500.0)).unwrap_err();
    assert!(matches!(err, CalibrationError::NotConverged { .. }));
}

/// The shipped geometry file is the calibration output. Set
/// `SVELTE_REGENERATE_GEOMETRY=1` to rewrite it.
#[test]
fn shipped_geometry_is_calibration_output() {
    let cal = calibrate_geometry(&ApertureTargets::REPORTED).unwrap();
    if std::env::var_os("SVELTE_REGENERATE_GEOMETRY").is_some() {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/data/geometry.calibrated.json");
        cal.geometry.save(path).unwrap();
        return;
    }
    let shipped = HandGeometry::calibrated();
    assert!((shipped.finger_length - cal.geometry.finger_length).abs() < 1e-9);
    assert!((shipped.side_contact_offset - cal.geometry.side_contact_offset).abs() < 1e-9);
    assert!((shipped.motor_axis_separation - cal.geometry.motor_axis_separation).abs() < 1e-9);
}
