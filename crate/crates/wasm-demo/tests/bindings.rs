use fracdev_wasm::{expansion_values, fbm_values, moment_value};

#[test]
fn path_starts_at_zero_and_is_reproducible() {
    let a = fbm_values(0.3, 64, 5).unwrap();
    assert_eq!(a.len(), 65);
    assert_eq!(a[0], 0.0);
    assert_eq!(a, fbm_values(0.3, 64, 5).unwrap());
    assert!(fbm_values(1.2, 64, 5).is_err());
}

#[test]
fn curve_matches_closed_form() {
    let spec = r#"{"hurst": 0.75, "n": 1, "d": 1, "a": [1.0],
        "drift": ["2*x1"], "diffusion": [["x1"]], "f": "x1"}"#;
    let v = expansion_values(spec, 2, &[0.0, 0.5]).unwrap();
    assert_eq!(v[0], 1.0);
    let want = 1.0 + 1.0 + 0.5 * 0.5f64.powf(1.5) + 0.5;
    assert!((v[1] - want).abs() < 1e-12);
    assert!(expansion_values("{}", 2, &[0.5]).is_err());
}

#[test]
fn moment_of_two_letters() {
    assert_eq!(moment_value(&[1, 1], 0.75).unwrap(), 0.5);
    assert_eq!(moment_value(&[1, 2], 0.75).unwrap(), 0.0);
}
