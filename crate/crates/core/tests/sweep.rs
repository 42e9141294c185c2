use qgbc::control::{build_induction, sawtooth_member};
use qgbc::dynamics::CoefficientSignal;
use qgbc::graph::presets;
use qgbc::scales::HilbertScale;
use qgbc::stability::convergence_sweep;

#[test]
fn sawtooth_sweep_decreases_and_respects_l1_estimates() {
    let sys = build_induction(&presets::lasso(), &[0.3, -0.4], &[0.0, 0.0, 0.0, 2.5], 2.0, 0.05).unwrap();
    let v = CoefficientSignal::piecewise_constant(vec![0.0, 0.5, 1.0], &[1.5, -2.0]).unwrap();
    let limit = sys.aux_family(0.3, &v).unwrap();
    let scale = HilbertScale::new(&sys.static_hamiltonian(0.3), sys.mass(), 1.0).unwrap();
    let (_, vecs) = sys.eigenstates(0.3, 2).unwrap();
    let probes = vec![vecs.column(0).to_owned(), vecs.column(1).to_owned()];
    let ns = [2, 4, 8, 16];
    let table =
        convergence_sweep(&limit, |n| sawtooth_member(&sys, &v, 0.3, n), &ns, 0.0, 1.0, 1.0 / 64.0, &scale, &probes).unwrap();
    assert_eq!(table.rows.iter().map(|r| r.n).collect::<Vec<_>>(), ns);
    assert!(table.rows.iter().all(|r| r.bounds_hold()));
    assert!(table.rows.windows(2).all(|w| w[1].lhs < w[0].lhs));
    assert!(table.slope() < -0.5);
    let csv = table.csv();
    assert_eq!(csv.lines().count(), 1 + ns.len());
    assert!(csv.starts_with("n,l1_u,l1_u2,bound_u,bound_u2,lhs_plus_minus,strong_max\n2,"));
}
