use qgbc::assembly::{assemble, make_mesh, AssemblyOptions};
use qgbc::boundary::{quasi_delta_unitary, QuasiDeltaParams};
use qgbc::control::theta_profile;
use qgbc::graph::presets;

const LEVELS: usize = 6;

/// Spectra of the magnetic operator and of the gauge-conjugated operator,
/// the latter either in the gauge-adapted frame or in plain P1.
fn spectra(h: f64, frame: bool) -> (Vec<f64>, Vec<f64>) {
    let g = presets::lasso();
    let layout = g.boundary_index();
    let mesh = make_mesh(&g, h);
    let params = QuasiDeltaParams::new(&layout, vec![0.3, -0.4], vec![0.0, 0.7, -0.2, 0.0]).unwrap();
    let (theta, a0) = theta_profile(&g, &layout, &[0.0, 0.5, 0.0, 1.5]).unwrap();
    let bc = quasi_delta_unitary(&layout, &params).unwrap();
    let magnetic = assemble(&g, &mesh, &bc, AssemblyOptions { magnetic: Some(&a0), ..Default::default() }).unwrap();
    let tilde = bc.gauge_conjugate(&theta.traces(&mesh)).unwrap();
    let opts = if frame { AssemblyOptions { frame: Some((&theta, 1.0)), ..Default::default() } } else { AssemblyOptions::default() };
    let plain = assemble(&g, &mesh, &tilde, opts).unwrap();
    let a = magnetic.reduced().operator(1.0, 0.0).unwrap().spectrum(LEVELS).0;
    let b = plain.reduced().operator(0.0, 0.0).unwrap().spectrum(LEVELS).0;
    (a, b)
}

fn deviation(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / x.abs().max(1.0)).fold(0.0, f64::max)
}

#[test]
fn frame_discretization_is_exactly_gauge_equivalent() {
    let (a, b) = spectra(0.02, true);
    assert!(deviation(&a, &b) < 1e-8);
}

#[test]
fn plain_p1_agrees_to_second_order() {
    let (a1, b1) = spectra(0.04, false);
    let (a2, b2) = spectra(0.02, false);
    let (d1, d2) = (deviation(&a1, &b1), deviation(&a2, &b2));
    assert!(d2 < 1e-2, "{d2}");
    let ratio = d1 / d2;
    assert!((3.0..5.5).contains(&ratio), "{d1} {d2} {ratio}");
}
